//! Per-alternative sufficient statistics and the covariance/correlation
//! estimators built on them.
//!
//! Co-moments are accrued only on full-vector replications (equal-allocation
//! rounds); partial batches update univariate statistics only. Covariance
//! estimation with missing data is out of scope.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::jacobi_eigen;
use crate::scalar::{count, lit, Scalar};

/// Which covariance estimator a component should use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum CovEstimator {
    #[default]
    Sample,
    Shrinkage,
}

/// Running sufficient statistics over a fixed scope of alternatives.
///
/// Single-writer by ownership; readers clone a snapshot. Disjoint stores over
/// the same scope merge associatively.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct SampleStore<T: Scalar> {
    counts: Vec<u64>,
    sums: Vec<T>,
    sum_squares: Vec<T>,
    /// Number of full-vector replications folded into the co-moments.
    joint_rows: u64,
    /// Per-alternative sums over the full-vector replications only.
    joint_sums: Vec<T>,
    /// Cross-product accumulators over the full-vector replications.
    joint_cross: Array2<T>,
    /// Number of partial (non-full) update batches seen.
    partial_batches: u64,
}

impl<T: Scalar> SampleStore<T> {
    pub fn new(size: usize) -> Self {
        Self {
            counts: vec![0; size],
            sums: vec![T::zero(); size],
            sum_squares: vec![T::zero(); size],
            joint_rows: 0,
            joint_sums: vec![T::zero(); size],
            joint_cross: Array2::zeros((size, size)),
            partial_batches: 0,
        }
    }

    pub fn size(&self) -> usize {
        self.counts.len()
    }

    pub fn count(&self, i: usize) -> u64 {
        self.counts[i]
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total_count(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn joint_count(&self) -> u64 {
        self.joint_rows
    }

    pub fn partial_batches(&self) -> u64 {
        self.partial_batches
    }

    /// Fold in a batch of observations for the given scope-local indices.
    /// Rows that cover the whole scope also feed the co-moment accumulators.
    pub fn update(&mut self, indices: &[usize], rows: &Array2<T>) {
        assert_eq!(indices.len(), rows.ncols(), "index/column mismatch");
        let full = is_identity_cover(indices, self.size());
        for (c, &i) in indices.iter().enumerate() {
            for r in 0..rows.nrows() {
                let v = rows[[r, c]];
                self.counts[i] += 1;
                self.sums[i] += v;
                self.sum_squares[i] += v * v;
            }
        }
        if full {
            for r in 0..rows.nrows() {
                self.joint_rows += 1;
                for a in 0..self.size() {
                    let va = rows[[r, a]];
                    self.joint_sums[a] += va;
                    for b in a..self.size() {
                        let prod = va * rows[[r, b]];
                        self.joint_cross[[a, b]] = self.joint_cross[[a, b]] + prod;
                    }
                }
            }
        } else {
            self.partial_batches += 1;
        }
    }

    /// Univariate-only update for one alternative.
    pub fn update_univariate(&mut self, index: usize, values: &[T]) {
        for &v in values {
            self.counts[index] += 1;
            self.sums[index] += v;
            self.sum_squares[index] += v * v;
        }
        if !values.is_empty() {
            self.partial_batches += 1;
        }
    }

    /// Inject pre-aggregated univariate statistics (count, sum, sum of squares).
    pub fn absorb_univariate(&mut self, index: usize, n: u64, sum: T, sum_sq: T) {
        self.counts[index] += n;
        self.sums[index] += sum;
        self.sum_squares[index] += sum_sq;
    }

    /// Merge another store over the same scope.
    pub fn merge(&mut self, other: &SampleStore<T>) {
        assert_eq!(self.size(), other.size(), "scope mismatch");
        for i in 0..self.size() {
            self.counts[i] += other.counts[i];
            self.sums[i] += other.sums[i];
            self.sum_squares[i] += other.sum_squares[i];
            self.joint_sums[i] += other.joint_sums[i];
        }
        self.joint_rows += other.joint_rows;
        self.partial_batches += other.partial_batches;
        self.joint_cross = &self.joint_cross + &other.joint_cross;
    }

    pub fn mean(&self, i: usize) -> Result<T> {
        self.require(i, 2)?;
        Ok(self.sums[i] / count(self.counts[i] as usize))
    }

    pub fn variance(&self, i: usize) -> Result<T> {
        self.require(i, 2)?;
        let n: T = count(self.counts[i] as usize);
        let mean = self.sums[i] / n;
        let var = (self.sum_squares[i] - n * mean * mean) / (n - T::one());
        Ok(var.max(T::zero()))
    }

    pub fn means(&self) -> Result<Vec<T>> {
        (0..self.size()).map(|i| self.mean(i)).collect()
    }

    pub fn variances(&self) -> Result<Vec<T>> {
        (0..self.size()).map(|i| self.variance(i)).collect()
    }

    fn require(&self, i: usize, at_least: u64) -> Result<()> {
        if self.counts[i] < at_least {
            return Err(Error::InsufficientSamples(format!(
                "alternative {i} has {} observations, needs {at_least}",
                self.counts[i]
            )));
        }
        Ok(())
    }

    /// Covariance of the raw outputs of `i` and `j`, from the full-vector
    /// replications.
    pub fn joint_covariance_entry(&self, i: usize, j: usize) -> Result<T> {
        if self.joint_rows < 2 {
            return Err(Error::InsufficientSamples(
                "covariance needs at least 2 full-vector replications (equal-allocation prefix)"
                    .into(),
            ));
        }
        let m: T = count(self.joint_rows as usize);
        let (a, b) = if i <= j { (i, j) } else { (j, i) };
        let cross = self.joint_cross[[a, b]];
        Ok((cross - self.joint_sums[i] * self.joint_sums[j] / m) / (m - T::one()))
    }

    /// Covariance between the sample means of `i` and `j`:
    /// `cov(X_i, X_j) / max(N_i, N_j)`.
    pub fn mean_covariance(&self, i: usize, j: usize) -> Result<T> {
        let denom = count::<T>(self.counts[i].max(self.counts[j]) as usize);
        if denom == T::zero() {
            return Err(Error::InsufficientSamples(format!(
                "no samples for pair ({i},{j})"
            )));
        }
        Ok(self.joint_covariance_entry(i, j)? / denom)
    }

    /// Unbiased sample covariance matrix over full-vector replications.
    pub fn sample_covariance(&self) -> Result<CovarianceEstimate<T>> {
        if self.joint_rows < 2 {
            return Err(Error::InsufficientSamples(
                "sample covariance needs at least 2 full-vector replications".into(),
            ));
        }
        let p = self.size();
        let mut m = Array2::<T>::zeros((p, p));
        for i in 0..p {
            for j in i..p {
                let c = self.joint_covariance_entry(i, j)?;
                m[[i, j]] = c;
                m[[j, i]] = c;
            }
        }
        Ok(CovarianceEstimate {
            method: CovEstimator::Sample,
            matrix: m,
            n_used: self.joint_rows as usize,
            eigenvalues: None,
            p_exceeds_n: p > self.joint_rows as usize,
        })
    }

    /// Nonlinear-shrinkage covariance estimate over full-vector replications.
    pub fn shrinkage_covariance(&self) -> Result<CovarianceEstimate<T>> {
        let sample = self.sample_covariance()?;
        shrink_covariance(&sample.matrix, self.joint_rows as usize)
    }

    /// Correlation matrix implied by the chosen estimator.
    pub fn correlation(&self, estimator: CovEstimator) -> Result<Array2<T>> {
        let est = match estimator {
            CovEstimator::Sample => self.sample_covariance()?,
            CovEstimator::Shrinkage => self.shrinkage_covariance()?,
        };
        Ok(correlation_from_covariance(&est.matrix))
    }
}

fn is_identity_cover(indices: &[usize], size: usize) -> bool {
    indices.len() == size && indices.iter().enumerate().all(|(pos, &i)| pos == i)
}

/// A covariance estimate plus the metadata procedures need.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct CovarianceEstimate<T: Scalar> {
    pub method: CovEstimator,
    pub matrix: Array2<T>,
    pub n_used: usize,
    /// Shrunk eigenvalues, descending, when the shrinkage path produced them.
    pub eigenvalues: Option<Vec<T>>,
    /// Flagged when the dimension exceeds the replication count.
    pub p_exceeds_n: bool,
}

impl<T: Scalar> CovarianceEstimate<T> {
    /// Plain CSV dump of the matrix.
    pub fn write_csv<W: std::io::Write>(&self, out: &mut W) -> Result<()> {
        for i in 0..self.matrix.nrows() {
            let line: Vec<String> = (0..self.matrix.ncols())
                .map(|j| format!("{}", self.matrix[[i, j]]))
                .collect();
            writeln!(out, "{}", line.join(","))?;
        }
        Ok(())
    }
}

/// Estimate a covariance matrix directly from a data matrix (rows are joint
/// replications).
pub fn covariance_from_rows<T: Scalar>(
    rows: &Array2<T>,
    estimator: CovEstimator,
) -> Result<CovarianceEstimate<T>> {
    let n = rows.nrows();
    if n < 2 {
        return Err(Error::InsufficientSamples(format!(
            "covariance needs n >= 2 rows, got {n}"
        )));
    }
    let p = rows.ncols();
    let nf: T = count(n);
    let means: Array1<T> = (0..p)
        .map(|j| rows.column(j).iter().copied().sum::<T>() / nf)
        .collect();
    let mut m = Array2::<T>::zeros((p, p));
    for i in 0..p {
        for j in i..p {
            let mut acc = T::zero();
            for r in 0..n {
                acc = acc + (rows[[r, i]] - means[i]) * (rows[[r, j]] - means[j]);
            }
            let c = acc / (nf - T::one());
            m[[i, j]] = c;
            m[[j, i]] = c;
        }
    }
    match estimator {
        CovEstimator::Sample => Ok(CovarianceEstimate {
            method: CovEstimator::Sample,
            matrix: m,
            n_used: n,
            eigenvalues: None,
            p_exceeds_n: p > n,
        }),
        CovEstimator::Shrinkage => shrink_covariance(&m, n),
    }
}

/// Analytical nonlinear shrinkage: keep the sample eigenvectors, replace each
/// sample eigenvalue through the kernel-estimated spectral density and its
/// Hilbert transform, with bandwidth `lambda_j * n^(-1/3)`.
pub fn shrink_covariance<T: Scalar>(
    sample: &Array2<T>,
    n: usize,
) -> Result<CovarianceEstimate<T>> {
    let p = sample.nrows();
    if n < 4 {
        return Err(Error::InsufficientSamples(format!(
            "shrinkage needs n >= 4 replications, got {n}"
        )));
    }
    if p == 1 {
        // A 1x1 problem has nothing to shrink across; keep the sample variance.
        return Ok(CovarianceEstimate {
            method: CovEstimator::Shrinkage,
            matrix: sample.clone(),
            n_used: n,
            eigenvalues: Some(vec![sample[[0, 0]]]),
            p_exceeds_n: false,
        });
    }
    let (vals, vecs) = jacobi_eigen(sample)?;
    let top = vals[0];
    if top <= T::zero() {
        return Err(Error::InvalidConfig(
            "degenerate sample covariance: no positive eigenvalue".into(),
        ));
    }
    let nf: T = count(n);
    let pf: T = count(p);
    let ratio = pf / nf;
    let bandwidth_scale = nf.powf(-lit::<T>(1.0 / 3.0));
    let pi: T = lit(std::f64::consts::PI);
    let sqrt5: T = lit(5.0f64.sqrt());
    let tiny = lit::<T>(1e-300);
    let bandwidths: Vec<T> = vals.iter().map(|&l| l * bandwidth_scale).collect();

    let mut shrunk: Vec<T> = Vec::with_capacity(p);
    for i in 0..p {
        let li = vals[i];
        let mut f_acc = T::zero();
        let mut h_acc = T::zero();
        for j in 0..p {
            let h = bandwidths[j];
            if h <= tiny {
                // Zero sample eigenvalues contribute a point mass we skip.
                continue;
            }
            let x = (li - vals[j]) / h;
            let weight = T::one() - x * x / lit::<T>(5.0);
            f_acc =
                f_acc + weight.max(T::zero()) * (lit::<T>(3.0) / (lit::<T>(4.0) * sqrt5 * h));
            let mut term = -(lit::<T>(3.0) * x) / (lit::<T>(10.0) * pi * h);
            let num = (sqrt5 - x).abs();
            let den = (sqrt5 + x).abs();
            if num > tiny && den > tiny {
                term = term
                    + (lit::<T>(3.0) * weight) / (lit::<T>(4.0) * sqrt5 * pi * h)
                        * (num / den).ln();
            }
            h_acc = h_acc + term;
        }
        let f = f_acc / pf;
        let hil = h_acc / pf;
        let a = pi * ratio * li * f;
        let b = T::one() - ratio - pi * ratio * li * hil;
        let denom = a * a + b * b;
        let lam = if denom > T::zero() { li / denom } else { T::zero() };
        // The printed map does not guarantee nonnegativity in floating point.
        shrunk.push(lam.max(T::zero()));
    }

    let mut out = Array2::<T>::zeros((p, p));
    for (k, &lam) in shrunk.iter().enumerate() {
        if lam == T::zero() {
            continue;
        }
        let u = vecs.column(k);
        for i in 0..p {
            for j in 0..p {
                out[[i, j]] = out[[i, j]] + lam * u[i] * u[j];
            }
        }
    }
    // Re-symmetrize against accumulation round-off.
    for i in 0..p {
        for j in (i + 1)..p {
            let v = (out[[i, j]] + out[[j, i]]) * lit::<T>(0.5);
            out[[i, j]] = v;
            out[[j, i]] = v;
        }
    }
    Ok(CovarianceEstimate {
        method: CovEstimator::Shrinkage,
        matrix: out,
        n_used: n,
        eigenvalues: Some(shrunk),
        p_exceeds_n: p > n,
    })
}

/// Correlation matrix from a covariance matrix, with unit diagonal and
/// entries clipped to [-1, 1]. Degenerate variances are floored at 1e-15.
pub fn correlation_from_covariance<T: Scalar>(cov: &Array2<T>) -> Array2<T> {
    let p = cov.nrows();
    let floor: T = lit(1e-15);
    let mut out = Array2::<T>::zeros((p, p));
    for i in 0..p {
        for j in 0..p {
            if i == j {
                out[[i, j]] = T::one();
            } else {
                let denom = (cov[[i, i]].max(floor) * cov[[j, j]].max(floor)).sqrt();
                out[[i, j]] = (cov[[i, j]] / denom).min(T::one()).max(-T::one());
            }
        }
    }
    out
}

/// Fisher's z transform of a correlation coefficient.
pub fn fisher_z<T: Scalar>(r: T) -> Result<T> {
    if r.abs() >= T::one() {
        return Err(Error::InvalidConfig(format!(
            "fisher z needs |r| < 1, got {r}"
        )));
    }
    Ok(lit::<T>(0.5) * ((T::one() + r) / (T::one() - r)).ln())
}

/// Variance of `z(r_ab) - z(r_ac)` for two overlapping correlation estimates
/// sharing the variable `a`, estimated from `n` paired replications:
/// `2 (1 - r_bc) h / (n - 3)` with
/// `h = (1 - f R²) / (1 - R²)`, `f = (1 - r_bc) / (2 (1 - R²))` capped at 1,
/// and `R² = (r_ab² + r_bc²) / 2`.
///
/// Only `r_ab` and the non-shared pair correlation `r_bc` enter the variance;
/// `r_ac` is accepted for interface completeness.
pub fn meng_variance<T: Scalar>(r_ab: T, r_ac: T, r_bc: T, n: usize) -> Result<T> {
    if n <= 3 {
        return Err(Error::InsufficientSamples(format!(
            "comparison variance needs n >= 4, got {n}"
        )));
    }
    for (name, r) in [("r_ab", r_ab), ("r_ac", r_ac), ("r_bc", r_bc)] {
        if r.abs() >= T::one() {
            return Err(Error::InvalidConfig(format!(
                "{name} must lie in (-1, 1), got {r}"
            )));
        }
    }
    let half: T = lit(0.5);
    let r_sq = half * (r_ab * r_ab + r_bc * r_bc);
    let one_minus = T::one() - r_sq;
    let f = ((T::one() - r_bc) / (lit::<T>(2.0) * one_minus)).min(T::one());
    let h = (T::one() - f * r_sq) / one_minus;
    Ok(lit::<T>(2.0) * (T::one() - r_bc) * h / count::<T>(n - 3))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::ProblemSpec;
    use ndarray::array;

    fn full_rows(values: &[[f64; 2]]) -> Array2<f64> {
        let mut m = Array2::zeros((values.len(), 2));
        for (r, row) in values.iter().enumerate() {
            m[[r, 0]] = row[0];
            m[[r, 1]] = row[1];
        }
        m
    }

    #[test]
    fn full_batch_updates_all_counts() {
        let mut store = SampleStore::<f64>::new(3);
        let rows = array![[1.0, 2.0, 3.0], [2.0, 3.0, 4.0], [3.0, 4.0, 5.0]];
        store.update(&[0, 1, 2], &rows);
        assert_eq!(store.counts(), &[3, 3, 3]);
        assert_eq!(store.joint_count(), 3);
        assert!((store.mean(1).unwrap() - 3.0).abs() < 1e-15);
    }

    #[test]
    fn merge_matches_sequential_updates() {
        let rows_a = full_rows(&[[0.3, 1.2], [0.7, -0.4], [1.1, 0.8]]);
        let rows_b = full_rows(&[[-0.2, 0.5], [0.9, 1.7]]);
        let mut sequential = SampleStore::<f64>::new(2);
        sequential.update(&[0, 1], &rows_a);
        sequential.update(&[0, 1], &rows_b);
        let mut left = SampleStore::<f64>::new(2);
        left.update(&[0, 1], &rows_a);
        let mut right = SampleStore::<f64>::new(2);
        right.update(&[0, 1], &rows_b);
        left.merge(&right);
        for i in 0..2 {
            assert!((left.mean(i).unwrap() - sequential.mean(i).unwrap()).abs() < 1e-12);
            assert!(
                (left.variance(i).unwrap() - sequential.variance(i).unwrap()).abs() < 1e-12
            );
        }
        assert_eq!(left.joint_count(), sequential.joint_count());
    }

    #[test]
    fn partial_updates_do_not_touch_comoments() {
        let mut store = SampleStore::<f64>::new(2);
        store.update(&[0, 1], &full_rows(&[[1.0, 2.0], [2.0, 1.0]]));
        let joint_before = store.joint_count();
        store.update_univariate(0, &[5.0, 6.0]);
        assert_eq!(store.joint_count(), joint_before);
        assert_eq!(store.count(0), 4);
        assert_eq!(store.partial_batches(), 1);
    }

    #[test]
    fn fixture_correlation_recovered_from_samples() {
        // Five-alternative fixture with x = 0.05: corr(0, 1) = 0.05 / 0.1 = 0.5.
        let (x, y) = (0.05, 0.02);
        let sigma = array![
            [0.1, x, x, x, x],
            [x, 0.1, 0.01, 0.01, y],
            [x, 0.01, 0.1, 0.01, y],
            [x, 0.01, 0.01, 0.1, y],
            [x, y, y, y, 0.1]
        ];
        let spec = ProblemSpec::dense(vec![2.1, 2.0, 1.95, 1.9, 1.9], sigma, None).unwrap();
        let rows = spec.simulate(100_000, 17).unwrap();
        let mut store = SampleStore::<f64>::new(5);
        store.update(&[0, 1, 2, 3, 4], &rows);
        let corr = store.correlation(CovEstimator::Sample).unwrap();
        assert!((corr[[0, 1]] - 0.5).abs() < 0.02, "corr = {}", corr[[0, 1]]);
        assert!((corr[[0, 0]] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn constant_column_has_zero_variance() {
        let mut store = SampleStore::<f64>::new(2);
        store.update(&[0, 1], &full_rows(&[[1.0, 0.3], [1.0, 0.9], [1.0, 0.1]]));
        let est = store.sample_covariance().unwrap();
        assert!(est.matrix[[0, 0]].abs() < 1e-15);
    }

    #[test]
    fn hand_computed_two_row_covariance() {
        let mut store = SampleStore::<f64>::new(2);
        store.update(&[0, 1], &full_rows(&[[0.0, 0.0], [1.0, 1.0]]));
        let est = store.sample_covariance().unwrap();
        assert!((est.matrix[[0, 1]] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn identity_model_off_diagonals_small() {
        let p = 10;
        let spec = ProblemSpec::dense(vec![0.0; p], Array2::<f64>::eye(p), None).unwrap();
        let rows = spec.simulate(10_000, 3).unwrap();
        let mut store = SampleStore::<f64>::new(p);
        store.update(&(0..p).collect::<Vec<_>>(), &rows);
        let est = store.sample_covariance().unwrap();
        for i in 0..p {
            for j in 0..p {
                if i != j {
                    assert!(est.matrix[[i, j]].abs() < 0.05);
                }
            }
        }
    }

    #[test]
    fn covariance_requires_joint_prefix() {
        let mut store = SampleStore::<f64>::new(2);
        store.update_univariate(0, &[1.0, 2.0, 3.0]);
        store.update_univariate(1, &[1.0, 2.0, 3.0]);
        assert!(store.sample_covariance().is_err());
    }

    #[test]
    fn mean_covariance_uses_max_count() {
        let mut store = SampleStore::<f64>::new(2);
        store.update(
            &[0, 1],
            &full_rows(&[[0.0, 0.0], [1.0, 1.0], [2.0, 2.0], [3.0, 3.0]]),
        );
        // Give alternative 0 six extra observations: N = (10, 4).
        store.update_univariate(0, &[0.0; 6]);
        let cov_raw = store.joint_covariance_entry(0, 1).unwrap();
        let got = store.mean_covariance(0, 1).unwrap();
        assert!((got - cov_raw / 10.0).abs() < 1e-15);
    }

    #[test]
    fn shrinkage_approaches_sample_for_large_n() {
        let spec =
            ProblemSpec::dense(vec![0.0, 0.0], array![[1.0, 0.0], [0.0, 2.0]], None).unwrap();
        let rows = spec.simulate(100_000, 5).unwrap();
        let sample = covariance_from_rows(&rows, CovEstimator::Sample).unwrap();
        let shrunk = covariance_from_rows(&rows, CovEstimator::Shrinkage).unwrap();
        let (sv, _) = jacobi_eigen(&sample.matrix).unwrap();
        let lam: Vec<f64> = shrunk.eigenvalues.unwrap();
        for k in 0..2 {
            let rel = (lam[k] - sv[k]).abs() / sv[k];
            assert!(rel < 0.02, "eigenvalue {k}: shrunk {} vs sample {}", lam[k], sv[k]);
        }
    }

    #[test]
    fn shrinkage_of_single_alternative_is_sample_variance() {
        let mut store = SampleStore::<f64>::new(1);
        let rows = Array2::from_shape_vec((6, 1), vec![1.0, 2.0, 0.5, 1.5, 2.5, 0.0]).unwrap();
        store.update(&[0], &rows);
        let sample = store.sample_covariance().unwrap();
        let shrunk = store.shrinkage_covariance().unwrap();
        assert!((sample.matrix[[0, 0]] - shrunk.matrix[[0, 0]]).abs() < 1e-15);
    }

    #[test]
    fn shrinkage_beats_sample_in_frobenius_on_identity() {
        // p = 50, n = 100, true covariance I: the shrunk estimate should be
        // no farther from the truth than the raw sample covariance.
        let p = 50;
        let truth = Array2::<f64>::eye(p);
        let spec = ProblemSpec::dense(vec![0.0; p], truth.clone(), None).unwrap();
        let mut wins = 0;
        for seed in 0..20u64 {
            let rows = spec.simulate(100, 1000 + seed).unwrap();
            let sample = covariance_from_rows(&rows, CovEstimator::Sample).unwrap();
            let shrunk = covariance_from_rows(&rows, CovEstimator::Shrinkage).unwrap();
            let err = |m: &Array2<f64>| -> f64 {
                let mut acc = 0.0;
                for i in 0..p {
                    for j in 0..p {
                        acc += (m[[i, j]] - truth[[i, j]]).powi(2);
                    }
                }
                acc.sqrt()
            };
            if err(&shrunk.matrix) <= err(&sample.matrix) {
                wins += 1;
            }
        }
        assert_eq!(wins, 20, "shrinkage lost on {} of 20 seeds", 20 - wins);
    }

    #[test]
    fn p_exceeding_n_is_flagged() {
        let p = 8;
        let spec = ProblemSpec::dense(vec![0.0; p], Array2::<f64>::eye(p), None).unwrap();
        let rows = spec.simulate(5, 2).unwrap();
        let est = covariance_from_rows(&rows, CovEstimator::Shrinkage).unwrap();
        assert!(est.p_exceeds_n);
    }

    #[test]
    fn fisher_z_known_values() {
        assert_eq!(fisher_z(0.0f64).unwrap(), 0.0);
        // z(0.5) = ln(3) / 2.
        assert!((fisher_z(0.5f64).unwrap() - 0.549_306_144_334_054_8).abs() < 1e-12);
        assert!(fisher_z(0.8f64).unwrap() > fisher_z(0.6f64).unwrap());
        assert!(fisher_z(1.0f64).is_err());
        assert!(fisher_z(-1.2f64).is_err());
    }

    #[test]
    fn meng_variance_hand_case() {
        // r_ab = r_bc = 0 gives R² = 0, f = 0.5, h = 1: var = 2 / (n - 3).
        let v = meng_variance(0.0f64, 0.3, 0.0, 103).unwrap();
        assert!((v - 0.02).abs() < 1e-15);
    }

    #[test]
    fn meng_variance_vanishes_as_pair_correlation_rises() {
        let v1 = meng_variance(0.2f64, 0.1, 0.9, 100).unwrap();
        let v2 = meng_variance(0.2f64, 0.1, 0.999, 100).unwrap();
        assert!(v2 < v1);
        assert!(v2 < 0.01);
    }

    #[test]
    fn meng_variance_caps_f_at_one() {
        // r_bc = -0.9, r_ab = 0: raw f = 1.9 / (2 * 0.595) > 1, so f = 1 and
        // h = 1 exactly.
        let v = meng_variance(0.0f64, 0.2, -0.9, 103).unwrap();
        assert!((v - 2.0 * 1.9 / 100.0).abs() < 1e-12);
        assert!(meng_variance(0.0f64, 0.2, -0.9, 3).is_err());
    }

    #[test]
    fn correlation_matrix_is_clipped_and_unit_diagonal() {
        let cov = array![[1e-20, 0.5], [0.5, 1.0]];
        let corr = correlation_from_covariance(&cov);
        assert_eq!(corr[[0, 0]], 1.0);
        assert!(corr[[0, 1]] <= 1.0 && corr[[0, 1]] >= -1.0);
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn fisher_z_is_odd_and_increasing(a in -0.995f64..0.995, b in -0.995f64..0.995) {
                let za = fisher_z(a).unwrap();
                let z_neg = fisher_z(-a).unwrap();
                prop_assert!((za + z_neg).abs() < 1e-12);
                if a < b {
                    prop_assert!(za < fisher_z(b).unwrap());
                }
            }

            #[test]
            fn derived_correlations_stay_bounded(seed in 0u64..500) {
                let spec = ProblemSpec::dense(
                    vec![0.0, 0.0, 0.0],
                    ndarray::array![[1.0, 0.7, 0.2], [0.7, 1.0, 0.4], [0.2, 0.4, 1.0]],
                    None,
                ).unwrap();
                let rows = spec.simulate(12, seed).unwrap();
                let corr = correlation_from_covariance(
                    &covariance_from_rows(&rows, CovEstimator::Sample).unwrap().matrix,
                );
                for i in 0..3 {
                    prop_assert_eq!(corr[[i, i]], 1.0);
                    for j in 0..3 {
                        prop_assert!(corr[[i, j]] <= 1.0 && corr[[i, j]] >= -1.0);
                    }
                }
            }
        }
    }
}
