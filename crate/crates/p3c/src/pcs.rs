//! Individual probability of correct selection: plug-in contexts, a Monte
//! Carlo oracle over the sample-mean vector, the Bonferroni lower bound, the
//! probabilistic-optimal selection rule, and finite-difference probes used by
//! the verification suite.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::cholesky_psd;
use crate::rng::stream;
use crate::scalar::{count, lit, Scalar};
use crate::special::phi;

/// Plug-in parameters PCS quantities are computed from: means, covariance of
/// the raw outputs, and per-alternative sample sizes.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct PcsParams<T: Scalar> {
    pub means: Vec<T>,
    pub covariance: Array2<T>,
    pub counts: Vec<u64>,
}

impl<T: Scalar> PcsParams<T> {
    pub fn new(means: Vec<T>, covariance: Array2<T>, counts: Vec<u64>) -> Result<Self> {
        let p = means.len();
        if covariance.nrows() != p || covariance.ncols() != p || counts.len() != p {
            return Err(Error::InvalidConfig(format!(
                "inconsistent dimensions: means {p}, covariance {}x{}, counts {}",
                covariance.nrows(),
                covariance.ncols(),
                counts.len()
            )));
        }
        if counts.iter().any(|&n| n == 0) {
            return Err(Error::InvalidConfig("every count must be >= 1".into()));
        }
        Ok(Self {
            means,
            covariance,
            counts,
        })
    }

    pub fn p(&self) -> usize {
        self.means.len()
    }

    /// Replace one count (builder-style, for tests and probes).
    pub fn with_count(mut self, index: usize, n: u64) -> Self {
        self.counts[index] = n;
        self
    }

    /// Covariance of the sample-mean vector:
    /// diagonal `sigma_i^2 / N_i`, off-diagonal `cov(X_i, X_j) / max(N_i, N_j)`.
    pub fn mean_covariance(&self) -> Array2<T> {
        let p = self.p();
        let mut m = Array2::<T>::zeros((p, p));
        for i in 0..p {
            for j in 0..p {
                let denom: T = count(self.counts[i].max(self.counts[j]) as usize);
                m[[i, j]] = self.covariance[[i, j]] / denom;
            }
        }
        m
    }

    /// Index of the largest plug-in mean, lowest index on ties.
    pub fn mean_argmax(&self) -> usize {
        let mut best = 0;
        for i in 1..self.p() {
            if self.means[i] > self.means[best] {
                best = i;
            }
        }
        best
    }
}

/// Standardized quantities for one candidate: per-competitor scaled mean gaps
/// `d_i`, difference variances `var(x̄_cand - x̄_i)`, and the correlation of the
/// difference variables.
#[derive(Debug, Clone)]
pub struct PcsContext<T: Scalar> {
    pub candidate: usize,
    /// Competitor indices in ascending order (all alternatives but the candidate).
    pub others: Vec<usize>,
    /// `d_i = (mu_cand - mu_i) / sqrt(var(diff_i))`, aligned with `others`.
    pub scaled_gaps: Vec<T>,
    /// `var(x̄_cand - x̄_i)`, aligned with `others`.
    pub diff_variances: Vec<T>,
    /// Correlation of the difference variables, `others x others`.
    pub diff_correlation: Array2<T>,
    /// Competitors with strictly larger mean.
    pub better_mean: Vec<usize>,
    /// Competitors with strictly smaller mean.
    pub worse_mean: Vec<usize>,
    /// Competitors with exactly equal mean.
    pub tied_mean: Vec<usize>,
}

/// Build the standardized context for one candidate.
pub fn build_context<T: Scalar>(candidate: usize, params: &PcsParams<T>) -> Result<PcsContext<T>> {
    let p = params.p();
    if candidate >= p {
        return Err(Error::InvalidConfig(format!(
            "candidate {candidate} out of range 0..{p}"
        )));
    }
    let m = params.mean_covariance();
    let others: Vec<usize> = (0..p).filter(|&i| i != candidate).collect();
    let mut diff_variances = Vec::with_capacity(others.len());
    let mut scaled_gaps = Vec::with_capacity(others.len());
    for &i in &others {
        let var = m[[candidate, candidate]] + m[[i, i]] - lit::<T>(2.0) * m[[candidate, i]];
        if var <= T::zero() {
            return Err(Error::DegenerateContext {
                candidate,
                other: i,
            });
        }
        diff_variances.push(var);
        scaled_gaps.push((params.means[candidate] - params.means[i]) / var.sqrt());
    }
    let q = others.len();
    let mut diff_correlation = Array2::<T>::zeros((q, q));
    for a in 0..q {
        diff_correlation[[a, a]] = T::one();
        for b in (a + 1)..q {
            let (i, j) = (others[a], others[b]);
            let cov = m[[candidate, candidate]] + m[[i, j]]
                - m[[candidate, i]]
                - m[[candidate, j]];
            let r = cov / (diff_variances[a] * diff_variances[b]).sqrt();
            let r = r.min(T::one()).max(-T::one());
            diff_correlation[[a, b]] = r;
            diff_correlation[[b, a]] = r;
        }
    }
    let mut better_mean = Vec::new();
    let mut worse_mean = Vec::new();
    let mut tied_mean = Vec::new();
    for &i in &others {
        if params.means[i] > params.means[candidate] {
            better_mean.push(i);
        } else if params.means[i] < params.means[candidate] {
            worse_mean.push(i);
        } else {
            tied_mean.push(i);
        }
    }
    Ok(PcsContext {
        candidate,
        others,
        scaled_gaps,
        diff_variances,
        diff_correlation,
        better_mean,
        worse_mean,
        tied_mean,
    })
}

/// A Monte Carlo probability estimate with its binomial standard error.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PcsEstimate<T> {
    pub value: T,
    pub std_error: T,
    pub draws: usize,
}

/// Monte Carlo estimate of `P(x̄_cand strictly exceeds every other sample
/// mean)` under the plug-in joint distribution. Ties count as failures.
pub fn pcs_monte_carlo<T: Scalar>(
    candidate: usize,
    params: &PcsParams<T>,
    draws: usize,
    seed: u64,
) -> Result<PcsEstimate<T>> {
    if draws < 10_000 {
        return Err(Error::InvalidConfig(format!(
            "monte carlo pcs needs >= 10^4 draws, got {draws}"
        )));
    }
    let tally = mc_win_tally(params, draws, seed)?;
    Ok(estimate_from_wins(tally[candidate], draws))
}

fn estimate_from_wins<T: Scalar>(wins: u64, draws: usize) -> PcsEstimate<T> {
    let n: T = count(draws);
    let v = count::<T>(wins as usize) / n;
    PcsEstimate {
        value: v,
        std_error: (v * (T::one() - v) / n).sqrt(),
        draws,
    }
}

/// One pass of sample-mean vector draws; returns per-alternative strict-win
/// counts. The events partition the space (ties have measure zero and count
/// for nobody), so the tallies sum to at most `draws`.
fn mc_win_tally<T: Scalar>(params: &PcsParams<T>, draws: usize, seed: u64) -> Result<Vec<u64>> {
    let p = params.p();
    let m = params.mean_covariance();
    let l = cholesky_psd(&m)?;
    let mut rng = stream(seed, 0x9C5);
    let mut wins = vec![0u64; p];
    let mut z = Array1::<T>::zeros(p);
    let mut x = vec![T::zero(); p];
    for _ in 0..draws {
        for zi in z.iter_mut() {
            *zi = T::standard_normal(&mut rng);
        }
        for i in 0..p {
            let mut acc = params.means[i];
            for j in 0..=i {
                acc = acc + l[[i, j]] * z[j];
            }
            x[i] = acc;
        }
        if let Some(arg) = strict_winner(&x) {
            wins[arg] += 1;
        }
    }
    Ok(wins)
}

/// Bonferroni lower bound on the candidate's PCS. The raw value can be
/// negative and drives stopping comparisons; the clamped value is for
/// reporting.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct BonferroniBound<T> {
    pub raw: T,
    pub clamped: T,
}

/// `sum_i Phi(d_i) - (p - 2)` over the candidate's competitors.
pub fn mopcs_bonferroni<T: Scalar>(
    params: &PcsParams<T>,
    candidate: usize,
) -> Result<BonferroniBound<T>> {
    let ctx = build_context(candidate, params)?;
    Ok(bonferroni_from_context(&ctx, params.p()))
}

fn bonferroni_from_context<T: Scalar>(ctx: &PcsContext<T>, p: usize) -> BonferroniBound<T> {
    let sum: T = ctx.scaled_gaps.iter().map(|&d| phi(d)).sum();
    let raw = sum - count::<T>(p - 2);
    BonferroniBound {
        raw,
        clamped: raw.min(T::one()).max(T::zero()),
    }
}

/// How PCS values are evaluated during selection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "method")]
pub enum PcsMethod {
    /// Cheap correlation-blind lower bound; deterministic.
    Bonferroni,
    /// Joint Monte Carlo tally of strict-win frequencies.
    MonteCarlo { draws: usize },
}

impl Default for PcsMethod {
    fn default() -> Self {
        PcsMethod::MonteCarlo { draws: 10_000 }
    }
}

/// Outcome of evaluating PCS for every candidate and taking the argmax.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct SelectionResult<T: Scalar> {
    /// The probabilistic-optimal selection: argmax of per-candidate PCS,
    /// lowest index on ties.
    pub pos_index: usize,
    /// Per-candidate PCS values (Monte Carlo) or raw bounds (Bonferroni).
    pub values: Vec<T>,
    /// Binomial standard errors when Monte Carlo was used.
    pub std_errors: Option<Vec<T>>,
    /// PCS at `pos_index`.
    pub mopcs: T,
    /// PCS at the best-plug-in-mean index.
    pub pcs_trad: T,
    /// Index of the largest plug-in mean.
    pub mean_argmax: usize,
    /// Whether the selection equals the best-mean index (the high-confidence
    /// case for budget allocation).
    pub case_a: bool,
    pub method: PcsMethod,
}

/// Evaluate PCS for every candidate and select the maximizer.
///
/// With the Monte Carlo method all candidates are tallied from one shared
/// stream of sample-mean draws, which makes the per-candidate estimates sum
/// to one exactly and is an order of magnitude cheaper than independent
/// sweeps; `pcs_monte_carlo` remains the independent per-candidate estimator.
pub fn select_pos<T: Scalar>(
    params: &PcsParams<T>,
    method: PcsMethod,
    seed: u64,
) -> Result<SelectionResult<T>> {
    let p = params.p();
    if p < 2 {
        return Err(Error::InvalidConfig("selection needs p >= 2".into()));
    }
    let (values, std_errors): (Vec<T>, Option<Vec<T>>) = match method {
        PcsMethod::Bonferroni => {
            let mut vals = Vec::with_capacity(p);
            for tau in 0..p {
                vals.push(mopcs_bonferroni(params, tau)?.raw);
            }
            (vals, None)
        }
        PcsMethod::MonteCarlo { draws } => {
            if draws == 0 {
                return Err(Error::InvalidConfig("monte carlo draws must be > 0".into()));
            }
            let wins = mc_win_tally(params, draws, seed)?;
            let ests: Vec<PcsEstimate<T>> = wins
                .iter()
                .map(|&w| estimate_from_wins(w, draws))
                .collect();
            (
                ests.iter().map(|e| e.value).collect(),
                Some(ests.iter().map(|e| e.std_error).collect()),
            )
        }
    };
    let mut pos_index = 0usize;
    for i in 1..p {
        if values[i] > values[pos_index] {
            pos_index = i;
        }
    }
    let mean_argmax = params.mean_argmax();
    Ok(SelectionResult {
        pos_index,
        mopcs: values[pos_index],
        pcs_trad: values[mean_argmax],
        values,
        std_errors,
        mean_argmax,
        case_a: pos_index == mean_argmax,
        method,
    })
}

/// Which scalar parameter a finite-difference probe perturbs.
#[derive(Debug, Clone)]
pub enum ParamPath {
    /// One mean component.
    Mean(usize),
    /// A set of covariance entries moved together (each applied
    /// symmetrically), e.g. every covariance that shares one scalar knob.
    CovEntries(Vec<(usize, usize)>),
}

fn apply_path<T: Scalar>(params: &PcsParams<T>, path: &ParamPath, delta: T) -> PcsParams<T> {
    let mut out = params.clone();
    match path {
        ParamPath::Mean(i) => out.means[*i] = out.means[*i] + delta,
        ParamPath::CovEntries(entries) => {
            for &(i, j) in entries {
                out.covariance[[i, j]] = out.covariance[[i, j]] + delta;
                if i != j {
                    out.covariance[[j, i]] = out.covariance[[j, i]] + delta;
                }
            }
        }
    }
    out
}

/// Central finite difference of Monte Carlo PCS with common random numbers.
#[derive(Debug, Clone, Copy)]
pub struct FdEstimate<T> {
    pub derivative: T,
    pub std_error: T,
    pub draws: usize,
}

/// `(PCS(theta + h) - PCS(theta - h)) / 2h`, estimated with the same
/// standard-normal draws on both sides so the difference noise stays small.
/// Errors out if either perturbed mean-covariance loses positive
/// semi-definiteness.
pub fn fd_probe<T: Scalar>(
    path: &ParamPath,
    candidate: usize,
    params: &PcsParams<T>,
    step: T,
    draws: usize,
    seed: u64,
) -> Result<FdEstimate<T>> {
    if step <= T::zero() {
        return Err(Error::InvalidConfig("fd step must be positive".into()));
    }
    let up = apply_path(params, path, step);
    let down = apply_path(params, path, -step);
    let p = params.p();
    let l_up = cholesky_psd(&up.mean_covariance())?;
    let l_down = cholesky_psd(&down.mean_covariance())?;
    let mut rng = stream(seed, 0xFD);
    let mut z = Array1::<T>::zeros(p);
    let mut sum_diff = T::zero();
    let mut sum_diff_sq = T::zero();
    let mut x_up = vec![T::zero(); p];
    let mut x_down = vec![T::zero(); p];
    for _ in 0..draws {
        for zi in z.iter_mut() {
            *zi = T::standard_normal(&mut rng);
        }
        for i in 0..p {
            let mut a = up.means[i];
            let mut b = down.means[i];
            for j in 0..=i {
                a = a + l_up[[i, j]] * z[j];
                b = b + l_down[[i, j]] * z[j];
            }
            x_up[i] = a;
            x_down[i] = b;
        }
        let win_up = strict_winner(&x_up) == Some(candidate);
        let win_down = strict_winner(&x_down) == Some(candidate);
        let diff = match (win_up, win_down) {
            (true, false) => T::one(),
            (false, true) => -T::one(),
            _ => T::zero(),
        };
        sum_diff = sum_diff + diff;
        sum_diff_sq = sum_diff_sq + diff * diff;
    }
    let n: T = count(draws);
    let mean = sum_diff / n;
    let var = (sum_diff_sq - n * mean * mean) / (n - T::one());
    let denom = lit::<T>(2.0) * step;
    Ok(FdEstimate {
        derivative: mean / denom,
        std_error: (var / n).sqrt() / denom,
        draws,
    })
}

fn strict_winner<T: Scalar>(x: &[T]) -> Option<usize> {
    let mut arg = 0usize;
    let mut strict = true;
    for i in 1..x.len() {
        if x[i] > x[arg] {
            arg = i;
            strict = true;
        } else if x[i] == x[arg] {
            strict = false;
        }
    }
    if strict {
        Some(arg)
    } else {
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use ndarray::array;

    #[test]
    fn independent_pair_context() {
        let params = PcsParams::<f64>::new(
            vec![1.0, 0.0],
            array![[2.0, 0.0], [0.0, 2.0]],
            vec![4, 4],
        )
        .unwrap();
        let ctx = build_context(0, &params).unwrap();
        assert_eq!(ctx.others, vec![1]);
        assert!((ctx.diff_variances[0] - 1.0).abs() < 1e-15);
        assert_eq!(ctx.diff_correlation.nrows(), 1);
        assert_eq!(ctx.worse_mean, vec![1]);
    }

    #[test]
    fn fixture_pair_variance_hand_value() {
        // x = 0.05, all counts 10: var(x̄_1 - x̄_2) = 0.1/10 + 0.1/10 - 2*0.05/10.
        let params = fixtures::table1_params(0.05, 0.01, 10);
        let ctx = build_context(0, &params).unwrap();
        assert!((ctx.diff_variances[0] - 0.01).abs() < 1e-15);
    }

    #[test]
    fn perfectly_correlated_pair_is_degenerate() {
        let params = PcsParams::<f64>::new(
            vec![1.0, 1.0],
            array![[1.0, 1.0], [1.0, 1.0]],
            vec![5, 5],
        )
        .unwrap();
        match build_context(0, &params) {
            Err(Error::DegenerateContext { candidate: 0, other: 1 }) => {}
            other => panic!("expected degenerate context, got {other:?}"),
        }
    }

    #[test]
    fn two_iid_alternatives_split_evenly() {
        let params = PcsParams::<f64>::new(
            vec![0.0, 0.0],
            array![[1.0, 0.0], [0.0, 1.0]],
            vec![10, 10],
        )
        .unwrap();
        let est = pcs_monte_carlo(0, &params, 100_000, 7).unwrap();
        assert!((est.value - 0.5).abs() < 3.0 * est.std_error + 1e-9);
    }

    #[test]
    fn draw_floor_is_enforced() {
        let params = PcsParams::<f64>::new(
            vec![0.0, 0.0],
            array![[1.0, 0.0], [0.0, 1.0]],
            vec![10, 10],
        )
        .unwrap();
        assert!(pcs_monte_carlo(0, &params, 500, 7).is_err());
    }

    #[test]
    fn illustrative_grid_spot_values() {
        // Published Monte Carlo values for the five-alternative grid.
        let params = fixtures::table1_params(0.01, 0.0, 10);
        let pcs1 = pcs_monte_carlo(0, &params, 400_000, 11).unwrap();
        assert!((pcs1.value - 0.6707).abs() < 0.008, "PCS(1) = {}", pcs1.value);
        let params = fixtures::table1_params(0.05, 0.04, 10);
        let pcs5 = pcs_monte_carlo(4, &params, 400_000, 11).unwrap();
        assert!((pcs5.value - 0.0119).abs() < 0.004, "PCS(5) = {}", pcs5.value);
    }

    #[test]
    fn bonferroni_simple_cases() {
        let params = PcsParams::<f64>::new(
            vec![0.0, 0.0],
            array![[1.0, 0.0], [0.0, 1.0]],
            vec![10, 10],
        )
        .unwrap();
        let b = mopcs_bonferroni(&params, 0).unwrap();
        assert!((b.raw - 0.5).abs() < 1e-12);

        let params = PcsParams::<f64>::new(
            vec![100.0, 0.0, 0.0],
            array![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            vec![50, 50, 50],
        )
        .unwrap();
        let b = mopcs_bonferroni(&params, 0).unwrap();
        assert!(b.raw > 0.999_999);
        assert!(b.clamped <= 1.0);
    }

    #[test]
    fn bonferroni_never_beats_monte_carlo() {
        // Oracle dominance over random parameterizations of the fixture family.
        use rand::Rng;
        let mut rng = crate::rng::stream(2024, 3);
        for trial in 0..50 {
            let x = rng.random_range(0.0..0.05);
            let y = rng.random_range(0.0..0.04);
            let n1 = rng.random_range(4..20u64);
            let params = fixtures::table1_params(x, y, 10).with_count(0, n1);
            let tau = rng.random_range(0..5);
            let bound = mopcs_bonferroni(&params, tau).unwrap();
            let mc = pcs_monte_carlo(tau, &params, 40_000, 100 + trial).unwrap();
            assert!(
                bound.raw <= mc.value + 3.0 * mc.std_error,
                "trial {trial}: bound {} > mc {} (se {})",
                bound.raw,
                mc.value,
                mc.std_error
            );
        }
    }

    #[test]
    fn high_confidence_selection_picks_alt_one() {
        let params = fixtures::table2_params(fixtures::Table2Scenario::HighConfidence, 5);
        let sel = select_pos(&params, PcsMethod::MonteCarlo { draws: 400_000 }, 5).unwrap();
        assert_eq!(sel.pos_index, 0);
        assert!(sel.case_a);
        assert!((sel.values[0] - 0.6010).abs() < 0.008, "PCS(1) = {}", sel.values[0]);
    }

    #[test]
    fn low_confidence_selection_prefers_correlated_runner_up() {
        let params = fixtures::table2_params(fixtures::Table2Scenario::LowConfidence, 5);
        let sel = select_pos(&params, PcsMethod::MonteCarlo { draws: 400_000 }, 5).unwrap();
        assert_eq!(sel.pos_index, 1, "values {:?}", sel.values);
        assert!(!sel.case_a);
        assert_eq!(sel.mean_argmax, 0);
        assert!((sel.values[1] - 0.3168).abs() < 0.008);
        assert!((sel.values[0] - 0.2900).abs() < 0.008);
        assert!((sel.values[4] - 0.1042).abs() < 0.008);
        assert!(sel.mopcs >= sel.pcs_trad);
    }

    #[test]
    fn dominant_alternative_saturates() {
        let params = PcsParams::<f64>::new(
            vec![10.0, 0.0, 0.0],
            array![[0.1, 0.0, 0.0], [0.0, 0.1, 0.0], [0.0, 0.0, 0.1]],
            vec![1000, 1000, 1000],
        )
        .unwrap();
        let sel = select_pos(&params, PcsMethod::MonteCarlo { draws: 20_000 }, 1).unwrap();
        assert_eq!(sel.pos_index, 0);
        assert!(sel.mopcs > 0.999);
    }

    #[test]
    fn win_frequencies_partition_unity() {
        let params = fixtures::table1_params(0.03, 0.02, 10);
        let mut total = 0.0;
        let mut se_sq = 0.0;
        for tau in 0..5 {
            let est = pcs_monte_carlo(tau, &params, 50_000, 40 + tau as u64).unwrap();
            total += est.value;
            se_sq += est.std_error * est.std_error;
        }
        assert!((total - 1.0).abs() < 3.0 * se_sq.sqrt() + 1e-9, "total {total}");
    }

    #[test]
    fn selection_is_permutation_equivariant() {
        // Deterministic with the Bonferroni evaluator.
        let params = fixtures::table2_params(fixtures::Table2Scenario::HighConfidence, 7);
        let base = select_pos(&params, PcsMethod::Bonferroni, 0).unwrap();
        let perm = [3usize, 0, 4, 1, 2];
        let mut means = vec![0.0; 5];
        let mut counts = vec![0u64; 5];
        let mut cov = Array2::<f64>::zeros((5, 5));
        for i in 0..5 {
            means[perm[i]] = params.means[i];
            counts[perm[i]] = params.counts[i];
            for j in 0..5 {
                cov[[perm[i], perm[j]]] = params.covariance[[i, j]];
            }
        }
        let permuted = PcsParams::new(means, cov, counts).unwrap();
        let sel = select_pos(&permuted, PcsMethod::Bonferroni, 0).unwrap();
        assert_eq!(sel.pos_index, perm[base.pos_index]);
        for i in 0..5 {
            assert!((sel.values[perm[i]] - base.values[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn tenfold_counts_drive_selection_to_true_best() {
        use rand::Rng;
        let mut rng = crate::rng::stream(55, 1);
        for trial in 0..20u64 {
            let x = rng.random_range(0.0..0.045);
            let y = rng.random_range(0.0..0.04);
            let params = fixtures::table1_params(x, y, 10);
            let big = fixtures::table1_params(x, y, 100);
            let small_best = pcs_monte_carlo(0, &params, 40_000, 900 + trial).unwrap();
            let big_best = pcs_monte_carlo(0, &big, 40_000, 900 + trial).unwrap();
            assert!(
                big_best.value > small_best.value,
                "trial {trial}: {} !> {}",
                big_best.value,
                small_best.value
            );
            let sel = select_pos(&big, PcsMethod::MonteCarlo { draws: 40_000 }, trial).unwrap();
            assert_eq!(sel.pos_index, 0, "trial {trial}");
        }
    }

    #[test]
    fn fd_probe_signs_on_fixture() {
        let params = fixtures::table1_params(0.03, 0.02, 10);
        let x_path = ParamPath::CovEntries(vec![(0, 1), (0, 2), (0, 3), (0, 4)]);
        let y_path = ParamPath::CovEntries(vec![(1, 4), (2, 4), (3, 4)]);
        let d1x = fd_probe(&x_path, 0, &params, 0.005, 200_000, 6).unwrap();
        assert!(
            d1x.derivative > 3.0 * d1x.std_error,
            "dPCS(1)/dx = {} (se {})",
            d1x.derivative,
            d1x.std_error
        );
        let d5x = fd_probe(&x_path, 4, &params, 0.005, 200_000, 6).unwrap();
        assert!(d5x.derivative < -3.0 * d5x.std_error);
        let d1y = fd_probe(&y_path, 0, &params, 0.005, 200_000, 6).unwrap();
        assert!(d1y.derivative > 3.0 * d1y.std_error);
    }

    #[test]
    fn fd_probe_rejects_psd_violation() {
        let params = fixtures::table1_params(0.05, 0.04, 10);
        // A big step pushes the matrix outside the PSD cone.
        let path = ParamPath::CovEntries(vec![(0, 1), (0, 2), (0, 3), (0, 4)]);
        assert!(fd_probe(&path, 0, &params, 0.2, 10_000, 1).is_err());
    }

    #[test]
    fn mean_derivative_is_positive() {
        let params = fixtures::table1_params(0.02, 0.02, 10);
        let est = fd_probe(&ParamPath::Mean(0), 0, &params, 0.01, 100_000, 9).unwrap();
        assert!(est.derivative > 3.0 * est.std_error);
    }
}
