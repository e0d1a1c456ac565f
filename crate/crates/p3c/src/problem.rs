//! Ground-truth problem instances: means, covariance structure, true cluster
//! partition, and the simulation model that generates correlated normal
//! observations deterministically from a seed.
//!
//! Covariance is kept in structured form where the generator admits one
//! (latent-factor and block models), so instances with tens of thousands of
//! alternatives never materialize a dense matrix.

use std::ops::Range;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{cholesky_psd, jacobi_eigen, smallest_eigenvalue};
use crate::rng::{derive_seed2, stream, SimRng};
use crate::scalar::{count, lit, Scalar};

/// One substitution site of a latent-factor drug model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Site {
    pub name: String,
    pub substituents: usize,
}

/// Additive latent-factor model: a drug's value is the base value plus one
/// independent atom effect per site. Drugs sharing substituents share those
/// atom factors, which induces the covariance structure.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct FreeWilsonSpec<T: Scalar> {
    pub sites: Vec<Site>,
    pub base_mean: T,
    /// Per-(site, substituent) mean effects.
    pub atom_means: Vec<Vec<T>>,
    /// Per-(site, substituent) effect variances; all strictly positive.
    pub atom_vars: Vec<Vec<T>>,
    /// Idiosyncratic variance added to every drug.
    pub noise_var: T,
}

impl<T: Scalar> FreeWilsonSpec<T> {
    /// Total number of drugs in the full model.
    pub fn total(&self) -> usize {
        self.sites.iter().map(|s| s.substituents).product()
    }

    /// Draw atom means and variances once from N(0, 0.1), rejecting negative
    /// values, and freeze them into the spec.
    pub fn generate(sites: Vec<Site>, base_mean: T, noise_var: T, seed: u64) -> Self {
        let mut rng = stream(seed, 0x4657);
        let sd: T = lit(0.1f64.sqrt());
        let draw_pos = |rng: &mut SimRng| loop {
            let v = T::standard_normal(rng) * sd;
            if v > T::zero() {
                return v;
            }
        };
        let mut atom_means = Vec::with_capacity(sites.len());
        let mut atom_vars = Vec::with_capacity(sites.len());
        for site in &sites {
            let means: Vec<T> = (0..site.substituents).map(|_| draw_pos(&mut rng)).collect();
            let vars: Vec<T> = (0..site.substituents).map(|_| draw_pos(&mut rng)).collect();
            atom_means.push(means);
            atom_vars.push(vars);
        }
        Self {
            sites,
            base_mean,
            atom_means,
            atom_vars,
            noise_var,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.sites.is_empty() {
            return Err(Error::InvalidConfig("free-wilson model needs sites".into()));
        }
        for (s, site) in self.sites.iter().enumerate() {
            if site.substituents == 0 {
                return Err(Error::InvalidConfig(format!(
                    "site {s} ({}) has no substituents",
                    site.name
                )));
            }
            if self.atom_means.get(s).map(Vec::len) != Some(site.substituents)
                || self.atom_vars.get(s).map(Vec::len) != Some(site.substituents)
            {
                return Err(Error::InvalidConfig(format!(
                    "site {s} needs {} atom means/vars",
                    site.substituents
                )));
            }
            if let Some(v) = self.atom_vars[s].iter().find(|v| **v <= T::zero()) {
                return Err(Error::InvalidConfig(format!(
                    "non-positive atom variance {v} at site {s}"
                )));
            }
        }
        if self.noise_var < T::zero() {
            return Err(Error::InvalidConfig("negative noise variance".into()));
        }
        Ok(())
    }
}

/// Block correlation model: common variance, correlation `intra` within a
/// cluster and `inter` across clusters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct BlockModelSpec<T: Scalar> {
    pub cluster_sizes: Vec<usize>,
    pub intra_corr: T,
    pub inter_corr: T,
    pub variance: T,
    /// Mean of the first member of each cluster.
    pub local_best_mean: T,
    /// Mean of the remaining members.
    pub other_mean: T,
    /// Optional per-cluster offset added to every member, to break ties
    /// between local bests.
    #[serde(default)]
    pub cluster_offsets: Option<Vec<T>>,
}

impl<T: Scalar> BlockModelSpec<T> {
    pub fn total(&self) -> usize {
        self.cluster_sizes.iter().sum()
    }

    fn validate(&self) -> Result<()> {
        let k = self.cluster_sizes.len();
        if k == 0 || self.cluster_sizes.iter().any(|&s| s == 0) {
            return Err(Error::InvalidConfig("cluster sizes must be positive".into()));
        }
        let (r_in, r_out) = (self.intra_corr, self.inter_corr);
        if !(r_out >= T::zero() && r_in >= r_out && r_in <= T::one()) {
            return Err(Error::NotPsd(format!(
                "block model needs 0 <= inter <= intra <= 1; got intra={r_in}, inter={r_out}, sizes={:?}",
                self.cluster_sizes
            )));
        }
        if self.variance <= T::zero() {
            return Err(Error::InvalidConfig("block variance must be positive".into()));
        }
        if let Some(offs) = &self.cluster_offsets {
            if offs.len() != k {
                return Err(Error::InvalidConfig(format!(
                    "expected {k} cluster offsets, got {}",
                    offs.len()
                )));
            }
        }
        Ok(())
    }
}

/// Structured or dense covariance of an instance.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound = "T: Scalar", tag = "kind", rename_all = "kebab-case")]
pub enum CovarianceModel<T: Scalar> {
    Dense {
        sigma: Array2<T>,
    },
    FreeWilson {
        spec: FreeWilsonSpec<T>,
        first: usize,
        p: usize,
    },
    Block {
        spec: BlockModelSpec<T>,
        labels: Vec<usize>,
    },
}

impl<T: Scalar> CovarianceModel<T> {
    pub fn dim(&self) -> usize {
        match self {
            CovarianceModel::Dense { sigma } => sigma.nrows(),
            CovarianceModel::FreeWilson { p, .. } => *p,
            CovarianceModel::Block { labels, .. } => labels.len(),
        }
    }

    /// Covariance entry between local indices `i` and `j`.
    pub fn entry(&self, i: usize, j: usize) -> T {
        match self {
            CovarianceModel::Dense { sigma } => sigma[[i, j]],
            CovarianceModel::FreeWilson { spec, first, .. } => {
                let a = decode_combo(spec, first + i);
                let b = decode_combo(spec, first + j);
                let mut cov = T::zero();
                for (s, (&ua, &ub)) in a.iter().zip(b.iter()).enumerate() {
                    if ua == ub {
                        cov = cov + spec.atom_vars[s][ua];
                    }
                }
                if i == j {
                    cov = cov + spec.noise_var;
                }
                cov
            }
            CovarianceModel::Block { spec, labels } => {
                if i == j {
                    spec.variance
                } else if labels[i] == labels[j] {
                    spec.variance * spec.intra_corr
                } else {
                    spec.variance * spec.inter_corr
                }
            }
        }
    }

    /// Dense covariance over a subset of local indices.
    pub fn sub_dense(&self, indices: &[usize]) -> Array2<T> {
        let m = indices.len();
        let mut out = Array2::<T>::zeros((m, m));
        for (a, &i) in indices.iter().enumerate() {
            for (b, &j) in indices.iter().enumerate().skip(a) {
                let v = self.entry(i, j);
                out[[a, b]] = v;
                out[[b, a]] = v;
            }
        }
        out
    }

    /// Matrix-vector product against the full covariance, using structure.
    pub fn matvec(&self, x: &Array1<T>) -> Array1<T> {
        match self {
            CovarianceModel::Dense { sigma } => sigma.dot(x),
            CovarianceModel::FreeWilson { spec, first, p } => {
                let mut buckets: Vec<Vec<T>> = spec
                    .sites
                    .iter()
                    .map(|s| vec![T::zero(); s.substituents])
                    .collect();
                let combos: Vec<Vec<usize>> =
                    (0..*p).map(|i| decode_combo(spec, first + i)).collect();
                for (i, combo) in combos.iter().enumerate() {
                    for (s, &u) in combo.iter().enumerate() {
                        buckets[s][u] = buckets[s][u] + x[i];
                    }
                }
                let mut y = Array1::<T>::zeros(*p);
                for (i, combo) in combos.iter().enumerate() {
                    let mut acc = spec.noise_var * x[i];
                    for (s, &u) in combo.iter().enumerate() {
                        acc = acc + spec.atom_vars[s][u] * buckets[s][u];
                    }
                    y[i] = acc;
                }
                y
            }
            CovarianceModel::Block { spec, labels } => {
                let k = spec.cluster_sizes.len();
                let total: T = x.iter().copied().sum();
                let mut per_cluster = vec![T::zero(); k];
                for (i, &lab) in labels.iter().enumerate() {
                    per_cluster[lab] = per_cluster[lab] + x[i];
                }
                let v = spec.variance;
                let (r_in, r_out) = (spec.intra_corr, spec.inter_corr);
                Array1::from_iter(labels.iter().enumerate().map(|(i, &lab)| {
                    v * (r_out * total
                        + (r_in - r_out) * per_cluster[lab]
                        + (T::one() - r_in) * x[i])
                }))
            }
        }
    }

    /// Smallest and largest eigenvalues of the covariance.
    pub fn extreme_eigenvalues(&self) -> Result<(T, T)> {
        match self {
            CovarianceModel::Dense { sigma } => {
                if sigma.nrows() <= 256 {
                    let (vals, _) = jacobi_eigen(sigma)?;
                    Ok((vals[vals.len() - 1], vals[0]))
                } else {
                    let max = power_on_model(self)?;
                    let min = smallest_eigenvalue(sigma, 300)?;
                    Ok((min, max))
                }
            }
            CovarianceModel::FreeWilson { spec, p, .. } => {
                let n_factors: usize = spec.sites.iter().map(|s| s.substituents).sum();
                let max = power_on_model(self)?;
                if *p > n_factors {
                    // Factor part has rank below p, so the floor is exactly the noise.
                    Ok((spec.noise_var, max))
                } else if *p <= 512 {
                    let dense = self.sub_dense(&(0..*p).collect::<Vec<_>>());
                    let (vals, _) = jacobi_eigen(&dense)?;
                    Ok((vals[vals.len() - 1], max))
                } else {
                    Ok((spec.noise_var, max))
                }
            }
            CovarianceModel::Block { spec, labels } => {
                let k = spec.cluster_sizes.len();
                let v = spec.variance;
                let (r_in, r_out) = (spec.intra_corr, spec.inter_corr);
                // Eigenvalues split into within-block contrasts and the
                // block-constant subspace reduced to a k x k problem.
                let mut reduced = Array2::<T>::zeros((k, k));
                for j in 0..k {
                    let mj = count::<T>(spec.cluster_sizes[j]);
                    reduced[[j, j]] = v * (T::one() - r_in + (r_in - r_out) * mj);
                }
                for a in 0..k {
                    for b in 0..k {
                        let ma = count::<T>(spec.cluster_sizes[a]);
                        let mb = count::<T>(spec.cluster_sizes[b]);
                        reduced[[a, b]] = reduced[[a, b]] + v * r_out * (ma * mb).sqrt();
                    }
                }
                let (vals, _) = jacobi_eigen(&reduced)?;
                let mut lo = vals[vals.len() - 1];
                let mut hi = vals[0];
                if labels.len() > k {
                    let contrast = v * (T::one() - r_in);
                    lo = lo.min(contrast);
                    hi = hi.max(contrast);
                }
                Ok((lo, hi))
            }
        }
    }
}

fn power_on_model<T: Scalar>(cov: &CovarianceModel<T>) -> Result<T> {
    let n = cov.dim();
    let mut v = Array1::<T>::from_iter((0..n).map(|i| T::one() + lit::<T>(1e-3) * count::<T>(i)));
    let norm = v.iter().map(|&x| x * x).sum::<T>().sqrt();
    v.mapv_inplace(|x| x / norm);
    let mut lambda = T::zero();
    for _ in 0..10_000 {
        let mut w = cov.matvec(&v);
        let new_lambda = v.dot(&w);
        let wn = w.iter().map(|&x| x * x).sum::<T>().sqrt();
        if wn == T::zero() {
            return Ok(T::zero());
        }
        w.mapv_inplace(|x| x / wn);
        let done = (new_lambda - lambda).abs() <= lit::<T>(1e-12) * new_lambda.abs();
        v = w;
        lambda = new_lambda;
        if done {
            return Ok(lambda);
        }
    }
    Err(Error::NonConvergence("power iteration on covariance".into()))
}

fn decode_combo<T: Scalar>(spec: &FreeWilsonSpec<T>, mut index: usize) -> Vec<usize> {
    // Mixed-radix decode, last site fastest.
    let mut combo = vec![0usize; spec.sites.len()];
    for s in (0..spec.sites.len()).rev() {
        let base = spec.sites[s].substituents;
        combo[s] = index % base;
        index /= base;
    }
    combo
}

/// A fully specified ranking-and-selection instance.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct ProblemSpec<T: Scalar> {
    pub p: usize,
    pub mu: Vec<T>,
    pub cov: CovarianceModel<T>,
    /// True cluster labels in `0..k`, every label used.
    pub partition: Vec<usize>,
    pub k: usize,
    /// Index of the true best mean (lowest index on ties).
    pub best_index: usize,
    /// Whether the top-2 mean gap is below 1e-12.
    pub ambiguous_best: bool,
}

impl<T: Scalar> ProblemSpec<T> {
    fn assemble(mu: Vec<T>, cov: CovarianceModel<T>, partition: Vec<usize>) -> Result<Self> {
        let p = mu.len();
        if cov.dim() != p || partition.len() != p {
            return Err(Error::InvalidConfig(format!(
                "inconsistent dimensions: mu {p}, cov {}, partition {}",
                cov.dim(),
                partition.len()
            )));
        }
        let (partition, k) = compress_labels(&partition);
        let (best_index, ambiguous_best) = locate_best(&mu);
        Ok(Self {
            p,
            mu,
            cov,
            partition,
            k,
            best_index,
            ambiguous_best,
        })
    }

    /// Dense instance from explicit mean vector and covariance. The partition
    /// defaults to singletons when not supplied.
    pub fn dense(
        mu: Vec<T>,
        sigma: Array2<T>,
        partition: Option<Vec<usize>>,
    ) -> Result<Self> {
        let p = mu.len();
        if sigma.nrows() != p || sigma.ncols() != p {
            return Err(Error::InvalidConfig("sigma shape mismatch".into()));
        }
        for i in 0..p {
            for j in 0..i {
                let asym = (sigma[[i, j]] - sigma[[j, i]]).abs();
                if asym > lit::<T>(1e-10) * sigma[[i, i]].abs().max(T::one()) {
                    return Err(Error::InvalidConfig(format!(
                        "sigma not symmetric at ({i},{j})"
                    )));
                }
            }
        }
        cholesky_psd(&sigma)?;
        let partition = partition.unwrap_or_else(|| (0..p).collect());
        Self::assemble(mu, CovarianceModel::Dense { sigma }, partition)
    }

    /// Correlation matrix implied by the covariance.
    pub fn correlation(&self) -> Array2<T> {
        let p = self.p;
        let mut out = Array2::<T>::zeros((p, p));
        let floor: T = lit(1e-15);
        for i in 0..p {
            for j in 0..=i {
                let denom = (self.cov.entry(i, i).max(floor) * self.cov.entry(j, j).max(floor))
                    .sqrt();
                let r = (self.cov.entry(i, j) / denom).min(T::one()).max(-T::one());
                out[[i, j]] = r;
                out[[j, i]] = r;
            }
        }
        for i in 0..p {
            out[[i, i]] = T::one();
        }
        out
    }

    /// Strict intra-over-inter correlation margin: `min intra - max inter`.
    /// Positive means the clustering separation assumption holds.
    pub fn assumption1_margin(&self) -> Option<T> {
        if self.k < 2 || self.p > 4096 {
            return None;
        }
        let corr = self.correlation();
        let mut min_intra: Option<T> = None;
        let mut max_inter: Option<T> = None;
        for i in 0..self.p {
            for j in (i + 1)..self.p {
                let r = corr[[i, j]];
                if self.partition[i] == self.partition[j] {
                    min_intra = Some(min_intra.map_or(r, |m: T| m.min(r)));
                } else {
                    max_inter = Some(max_inter.map_or(r, |m: T| m.max(r)));
                }
            }
        }
        match (min_intra, max_inter) {
            (Some(a), Some(b)) => Some(a - b),
            _ => None,
        }
    }

    /// Draw `n` i.i.d. replications of the full vector; row `m` is replication `m`.
    pub fn simulate(&self, n: usize, seed: u64) -> Result<Array2<T>> {
        self.simulate_subset(&(0..self.p).collect::<Vec<_>>(), n, seed)
    }

    /// Draw `n` i.i.d. joint replications of a subset of alternatives.
    pub fn simulate_subset(&self, indices: &[usize], n: usize, seed: u64) -> Result<Array2<T>> {
        let m = indices.len();
        let mut out = Array2::<T>::zeros((n, m));
        let mut rng = stream(seed, 0x51);
        match &self.cov {
            CovarianceModel::Dense { .. } => {
                let sub = self.cov.sub_dense(indices);
                let l = cholesky_psd(&sub)?;
                let mut z = Array1::<T>::zeros(m);
                for row in 0..n {
                    for zi in z.iter_mut() {
                        *zi = T::standard_normal(&mut rng);
                    }
                    for a in 0..m {
                        let mut acc = self.mu[indices[a]];
                        for b in 0..=a {
                            acc = acc + l[[a, b]] * z[b];
                        }
                        out[[row, a]] = acc;
                    }
                }
            }
            CovarianceModel::FreeWilson { spec, first, .. } => {
                // Only factors touched by the subset are drawn, in canonical order.
                let combos: Vec<Vec<usize>> = indices
                    .iter()
                    .map(|&i| decode_combo(spec, first + i))
                    .collect();
                let mut touched: Vec<(usize, usize)> = Vec::new();
                for combo in &combos {
                    for (s, &u) in combo.iter().enumerate() {
                        touched.push((s, u));
                    }
                }
                touched.sort_unstable();
                touched.dedup();
                let sd_noise = spec.noise_var.sqrt();
                let mut factor = vec![T::zero(); touched.len()];
                for row in 0..n {
                    for (t, &(s, u)) in touched.iter().enumerate() {
                        factor[t] = T::standard_normal(&mut rng) * spec.atom_vars[s][u].sqrt();
                    }
                    for (a, combo) in combos.iter().enumerate() {
                        let mut acc = self.mu[indices[a]];
                        for (s, &u) in combo.iter().enumerate() {
                            let t = touched.binary_search(&(s, u)).unwrap();
                            acc = acc + factor[t];
                        }
                        acc = acc + sd_noise * T::standard_normal(&mut rng);
                        out[[row, a]] = acc;
                    }
                }
            }
            CovarianceModel::Block { spec, labels } => {
                let involved: Vec<usize> = {
                    let mut c: Vec<usize> = indices.iter().map(|&i| labels[i]).collect();
                    c.sort_unstable();
                    c.dedup();
                    c
                };
                let sd = spec.variance.sqrt();
                let w_shared = spec.inter_corr.sqrt();
                let w_cluster = (spec.intra_corr - spec.inter_corr).sqrt();
                let w_own = (T::one() - spec.intra_corr).sqrt();
                let mut h = vec![T::zero(); involved.len()];
                for row in 0..n {
                    let g = T::standard_normal(&mut rng);
                    for hv in h.iter_mut() {
                        *hv = T::standard_normal(&mut rng);
                    }
                    for (a, &i) in indices.iter().enumerate() {
                        let ci = involved.binary_search(&labels[i]).unwrap();
                        let z = T::standard_normal(&mut rng);
                        out[[row, a]] = self.mu[i]
                            + sd * (w_shared * g + w_cluster * h[ci] + w_own * z);
                    }
                }
            }
        }
        Ok(out)
    }
}

fn compress_labels(labels: &[usize]) -> (Vec<usize>, usize) {
    let mut seen: Vec<usize> = labels.to_vec();
    seen.sort_unstable();
    seen.dedup();
    let out = labels
        .iter()
        .map(|l| seen.binary_search(l).unwrap())
        .collect();
    (out, seen.len())
}

fn locate_best<T: Scalar>(mu: &[T]) -> (usize, bool) {
    let mut best = 0usize;
    for (i, &m) in mu.iter().enumerate() {
        if m > mu[best] {
            best = i;
        }
    }
    let mut runner_gap = T::infinity();
    for (i, &m) in mu.iter().enumerate() {
        if i != best {
            runner_gap = runner_gap.min(mu[best] - m);
        }
    }
    (best, mu.len() > 1 && runner_gap < lit(1e-12))
}

/// Build an instance from a latent-factor drug model, optionally restricted
/// to a contiguous index range. Cluster labels come from the substituent at
/// the site with the largest total effect variance, which dominates pairwise
/// correlation.
pub fn build_free_wilson<T: Scalar>(
    spec: &FreeWilsonSpec<T>,
    subset: Option<Range<usize>>,
) -> Result<ProblemSpec<T>> {
    spec.validate()?;
    let total = spec.total();
    let range = subset.unwrap_or(0..total);
    if range.end > total || range.start >= range.end {
        return Err(Error::InvalidConfig(format!(
            "subset {range:?} outside 0..{total}"
        )));
    }
    let p = range.end - range.start;
    let dominant = dominant_site(spec);
    let mut mu = Vec::with_capacity(p);
    let mut raw_labels = Vec::with_capacity(p);
    for g in range.clone() {
        let combo = decode_combo(spec, g);
        let mut m = spec.base_mean;
        for (s, &u) in combo.iter().enumerate() {
            m = m + spec.atom_means[s][u];
        }
        mu.push(m);
        raw_labels.push(combo[dominant]);
    }
    let cov = CovarianceModel::FreeWilson {
        spec: spec.clone(),
        first: range.start,
        p,
    };
    ProblemSpec::assemble(mu, cov, raw_labels)
}

fn dominant_site<T: Scalar>(spec: &FreeWilsonSpec<T>) -> usize {
    let mut best = 0usize;
    let mut best_total = T::neg_infinity();
    for (s, vars) in spec.atom_vars.iter().enumerate() {
        let total: T = vars.iter().copied().sum();
        if total > best_total {
            best_total = total;
            best = s;
        }
    }
    best
}

/// Build an instance with exact block correlation structure.
pub fn build_block_model<T: Scalar>(spec: &BlockModelSpec<T>) -> Result<ProblemSpec<T>> {
    spec.validate()?;
    let mut labels = Vec::with_capacity(spec.total());
    let mut mu = Vec::with_capacity(spec.total());
    for (j, &size) in spec.cluster_sizes.iter().enumerate() {
        let off = spec
            .cluster_offsets
            .as_ref()
            .map(|o| o[j])
            .unwrap_or_else(T::zero);
        for member in 0..size {
            labels.push(j);
            let base = if member == 0 {
                spec.local_best_mean
            } else {
                spec.other_mean
            };
            mu.push(base + off);
        }
    }
    let cov = CovarianceModel::Block {
        spec: spec.clone(),
        labels: labels.clone(),
    };
    ProblemSpec::assemble(mu, cov, labels)
}

/// A source of joint observations over subsets of alternatives.
pub trait SampleSource<T: Scalar>: Sync {
    fn dim(&self) -> usize;
    /// `n` fresh i.i.d. joint replications of the given alternatives.
    fn draw_joint(&self, indices: &[usize], n: usize, seed: u64) -> Result<Array2<T>>;
}

impl<T: Scalar> SampleSource<T> for ProblemSpec<T> {
    fn dim(&self) -> usize {
        self.p
    }

    fn draw_joint(&self, indices: &[usize], n: usize, seed: u64) -> Result<Array2<T>> {
        self.simulate_subset(indices, n, seed)
    }
}

/// Sequential sampler that preserves the replication-pairing semantics of the
/// model: the m-th observation of alternative i and the m-th observation of
/// alternative j always come from the same underlying replication, no matter
/// how unevenly a procedure spreads its budget.
pub struct ReplicationStream<'a, T: Scalar> {
    spec: &'a ProblemSpec<T>,
    scope: Vec<usize>,
    drawn: Vec<usize>,
    root: u64,
    cache: StreamCache<T>,
}

enum StreamCache<T> {
    Dense {
        /// Per replication ordinal: values already drawn (scope-local index).
        partial: Vec<Vec<Option<T>>>,
    },
    FreeWilson {
        touched: Vec<(usize, usize)>,
        factors: Vec<Option<Vec<T>>>,
    },
    Block {
        involved: Vec<usize>,
        factors: Vec<Option<(T, Vec<T>)>>,
    },
}

/// Result of taking a batch from a [`ReplicationStream`].
pub struct TakenBatch<T> {
    /// New observations per scope member, in request order.
    pub per_member: Vec<Vec<T>>,
    /// When the batch advanced every member in lockstep from an aligned
    /// state, the same data as full joint replication rows.
    pub full_rows: Option<Array2<T>>,
}

impl<'a, T: Scalar> ReplicationStream<'a, T> {
    pub fn new(spec: &'a ProblemSpec<T>, scope: &[usize], seed: u64) -> Self {
        let cache = match &spec.cov {
            CovarianceModel::Dense { .. } => StreamCache::Dense { partial: Vec::new() },
            CovarianceModel::FreeWilson { spec: fw, first, .. } => {
                let mut touched: Vec<(usize, usize)> = Vec::new();
                for &g in scope {
                    for (s, &u) in decode_combo(fw, first + g).iter().enumerate() {
                        touched.push((s, u));
                    }
                }
                touched.sort_unstable();
                touched.dedup();
                StreamCache::FreeWilson {
                    touched,
                    factors: Vec::new(),
                }
            }
            CovarianceModel::Block { labels, .. } => {
                let mut involved: Vec<usize> = scope.iter().map(|&g| labels[g]).collect();
                involved.sort_unstable();
                involved.dedup();
                StreamCache::Block {
                    involved,
                    factors: Vec::new(),
                }
            }
        };
        Self {
            spec,
            scope: scope.to_vec(),
            drawn: vec![0; scope.len()],
            root: seed,
            cache,
        }
    }

    pub fn scope(&self) -> &[usize] {
        &self.scope
    }

    /// Total observations drawn so far.
    pub fn total_drawn(&self) -> usize {
        self.drawn.iter().sum()
    }

    /// Take `counts[s]` new observations for scope member `s`.
    pub fn take(&mut self, counts: &[usize]) -> Result<TakenBatch<T>> {
        assert_eq!(counts.len(), self.scope.len());
        let aligned = self.drawn.windows(2).all(|w| w[0] == w[1]);
        let uniform = counts.windows(2).all(|w| w[0] == w[1]);
        let mut per_member: Vec<Vec<T>> = counts.iter().map(|&c| Vec::with_capacity(c)).collect();
        // Advance replication by replication so pairing stays exact.
        let max_count = counts.iter().copied().max().unwrap_or(0);
        for round in 0..max_count {
            for s in 0..self.scope.len() {
                if round < counts[s] {
                    let ordinal = self.drawn[s];
                    let v = self.observe(s, ordinal)?;
                    self.drawn[s] += 1;
                    per_member[s].push(v);
                }
            }
        }
        let full_rows = if aligned && uniform && !counts.is_empty() && counts[0] > 0 {
            let n = counts[0];
            let m = self.scope.len();
            let mut rows = Array2::<T>::zeros((n, m));
            for s in 0..m {
                for r in 0..n {
                    rows[[r, s]] = per_member[s][r];
                }
            }
            Some(rows)
        } else {
            None
        };
        Ok(TakenBatch {
            per_member,
            full_rows,
        })
    }

    /// Take `n` full joint replications (every member advances together).
    pub fn take_uniform(&mut self, n: usize) -> Result<TakenBatch<T>> {
        let counts = vec![n; self.scope.len()];
        self.take(&counts)
    }

    fn observe(&mut self, member: usize, ordinal: usize) -> Result<T> {
        let g = self.scope[member];
        match &mut self.cache {
            StreamCache::FreeWilson { touched, factors } => {
                if factors.len() <= ordinal {
                    factors.resize(ordinal + 1, None);
                }
                if factors[ordinal].is_none() {
                    let mut rng = stream(self.root, derive_seed2(1, ordinal as u64, 0));
                    let (fw, _) = free_wilson_parts(self.spec);
                    let vals: Vec<T> = touched
                        .iter()
                        .map(|&(s, u)| T::standard_normal(&mut rng) * fw.atom_vars[s][u].sqrt())
                        .collect();
                    factors[ordinal] = Some(vals);
                }
                let (fw, first) = free_wilson_parts(self.spec);
                let combo = decode_combo(fw, first + g);
                let vals = factors[ordinal].as_ref().unwrap();
                let mut acc = self.spec.mu[g];
                for (s, &u) in combo.iter().enumerate() {
                    let t = touched.binary_search(&(s, u)).unwrap();
                    acc = acc + vals[t];
                }
                let mut rng = stream(self.root, derive_seed2(2, ordinal as u64, g as u64));
                Ok(acc + fw.noise_var.sqrt() * T::standard_normal(&mut rng))
            }
            StreamCache::Block { involved, factors } => {
                if factors.len() <= ordinal {
                    factors.resize(ordinal + 1, None);
                }
                if factors[ordinal].is_none() {
                    let mut rng = stream(self.root, derive_seed2(1, ordinal as u64, 0));
                    let g0 = T::standard_normal(&mut rng);
                    let h: Vec<T> = involved
                        .iter()
                        .map(|_| T::standard_normal(&mut rng))
                        .collect();
                    factors[ordinal] = Some((g0, h));
                }
                let (bspec, labels) = block_parts(self.spec);
                let (g0, h) = factors[ordinal].as_ref().unwrap();
                let ci = involved.binary_search(&labels[g]).unwrap();
                let mut rng = stream(self.root, derive_seed2(2, ordinal as u64, g as u64));
                let z = T::standard_normal(&mut rng);
                let sd = bspec.variance.sqrt();
                Ok(self.spec.mu[g]
                    + sd * (bspec.inter_corr.sqrt() * *g0
                        + (bspec.intra_corr - bspec.inter_corr).sqrt() * h[ci]
                        + (T::one() - bspec.intra_corr).sqrt() * z))
            }
            StreamCache::Dense { partial } => {
                if partial.len() <= ordinal {
                    partial.resize(ordinal + 1, vec![None; self.scope.len()]);
                }
                let row = partial[ordinal].clone();
                let observed: Vec<usize> = (0..self.scope.len())
                    .filter(|&s| row[s].is_some())
                    .collect();
                let mut rng = stream(self.root, derive_seed2(2, ordinal as u64, g as u64));
                let z = T::standard_normal(&mut rng);
                let value = if observed.is_empty() {
                    self.spec.mu[g] + self.spec.cov.entry(g, g).sqrt() * z
                } else {
                    // Conditional normal given the components of this
                    // replication already drawn.
                    let obs_globals: Vec<usize> =
                        observed.iter().map(|&s| self.scope[s]).collect();
                    let soo = self.spec.cov.sub_dense(&obs_globals);
                    let l = cholesky_psd(&soo)?;
                    let resid = Array1::from_iter(
                        observed
                            .iter()
                            .map(|&s| row[s].unwrap() - self.spec.mu[self.scope[s]]),
                    );
                    let w = crate::linalg::cholesky_solve(&l, &resid);
                    let cross = Array1::from_iter(
                        obs_globals.iter().map(|&o| self.spec.cov.entry(g, o)),
                    );
                    let mean = self.spec.mu[g] + cross.dot(&w);
                    let reduc = crate::linalg::cholesky_solve(&l, &cross);
                    let var = (self.spec.cov.entry(g, g) - cross.dot(&reduc)).max(T::zero());
                    mean + var.sqrt() * z
                };
                partial[ordinal][member] = Some(value);
                Ok(value)
            }
        }
    }
}

fn free_wilson_parts<T: Scalar>(spec: &ProblemSpec<T>) -> (&FreeWilsonSpec<T>, usize) {
    match &spec.cov {
        CovarianceModel::FreeWilson { spec, first, .. } => (spec, *first),
        _ => unreachable!("stream cache kind matches covariance kind"),
    }
}

fn block_parts<T: Scalar>(spec: &ProblemSpec<T>) -> (&BlockModelSpec<T>, &[usize]) {
    match &spec.cov {
        CovarianceModel::Block { spec, labels } => (spec, labels),
        _ => unreachable!("stream cache kind matches covariance kind"),
    }
}

/// Write an observation matrix as CSV with a header row of alternative indices.
pub fn write_observations_csv<T: Scalar, W: std::io::Write>(
    rows: &Array2<T>,
    indices: &[usize],
    out: &mut W,
) -> Result<()> {
    assert_eq!(rows.ncols(), indices.len());
    let header: Vec<String> = indices.iter().map(|i| i.to_string()).collect();
    writeln!(out, "{}", header.join(","))?;
    for r in 0..rows.nrows() {
        let line: Vec<String> = (0..rows.ncols()).map(|c| format!("{}", rows[[r, c]])).collect();
        writeln!(out, "{}", line.join(","))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_site_spec() -> FreeWilsonSpec<f64> {
        FreeWilsonSpec {
            sites: vec![
                Site { name: "s0".into(), substituents: 2 },
                Site { name: "s1".into(), substituents: 2 },
            ],
            base_mean: 1.0,
            atom_means: vec![vec![0.1, 0.4], vec![0.0, 0.2]],
            atom_vars: vec![vec![0.5, 0.3], vec![0.2, 0.1]],
            noise_var: 0.05,
        }
    }

    #[test]
    fn full_paper_scale_instance_has_expected_count() {
        let sites: Vec<Site> = [11usize, 8, 5, 6, 11, 3]
            .iter()
            .enumerate()
            .map(|(i, &n)| Site { name: format!("site{i}"), substituents: n })
            .collect();
        let spec = FreeWilsonSpec::generate(sites, 0.0, 0.01, 7);
        assert_eq!(spec.total(), 87_120);
        let built = build_free_wilson(&spec, None).unwrap();
        assert_eq!(built.p, 87_120);
        assert_eq!(built.k, 11, "dominant site should have 11 substituents");
    }

    #[test]
    fn single_factor_model_is_one_by_one() {
        let spec = FreeWilsonSpec::<f64> {
            sites: vec![Site { name: "only".into(), substituents: 1 }],
            base_mean: 2.0,
            atom_means: vec![vec![0.3]],
            atom_vars: vec![vec![0.7]],
            noise_var: 0.0,
        };
        let built = build_free_wilson(&spec, None).unwrap();
        assert_eq!(built.p, 1);
        assert!((built.cov.entry(0, 0) - 0.7).abs() < 1e-15);
        assert!((built.mu[0] - 2.3).abs() < 1e-15);
    }

    #[test]
    fn nonpositive_atom_variance_rejected() {
        let mut spec = two_site_spec();
        spec.atom_vars[1][0] = 0.0;
        assert!(build_free_wilson(&spec, None).is_err());
    }

    #[test]
    fn shared_substituent_covariance_matches_monte_carlo() {
        // Drugs 0=(0,0) and 1=(0,1) share only the site-0 substituent 0, so
        // their covariance is exactly that atom's variance. Oracle: sample
        // covariance of simulated outputs.
        let spec = two_site_spec();
        let built = build_free_wilson(&spec, None).unwrap();
        assert!((built.cov.entry(0, 1) - 0.5).abs() < 1e-15);
        // (0,0) vs (1,1): no shared substituent.
        assert!((built.cov.entry(0, 3)).abs() < 1e-15);
        let n = 200_000;
        let rows = built.simulate(n, 99).unwrap();
        let mut mean = [0.0f64; 2];
        for r in 0..n {
            mean[0] += rows[[r, 0]];
            mean[1] += rows[[r, 1]];
        }
        mean[0] /= n as f64;
        mean[1] /= n as f64;
        let mut cov = 0.0;
        for r in 0..n {
            cov += (rows[[r, 0]] - mean[0]) * (rows[[r, 1]] - mean[1]);
        }
        cov /= (n - 1) as f64;
        // var(X0) = 0.5+0.2+0.05 = 0.75, var(X1) = 0.5+0.1+0.05 = 0.65.
        let tol = 5.0 * (0.75f64 * 0.65).sqrt() / (n as f64).sqrt();
        assert!(
            (cov - 0.5).abs() < tol,
            "sample covariance {cov} vs analytic 0.5 (tol {tol})"
        );
    }

    #[test]
    fn block_model_entries_and_assumption_margin() {
        let spec = BlockModelSpec::<f64> {
            cluster_sizes: vec![3, 3],
            intra_corr: 0.8,
            inter_corr: 0.1,
            variance: 2.0,
            local_best_mean: 1.0,
            other_mean: 0.5,
            cluster_offsets: None,
        };
        let built = build_block_model(&spec).unwrap();
        assert!((built.cov.entry(0, 1) - 1.6).abs() < 1e-15);
        assert!((built.cov.entry(0, 3) - 0.2).abs() < 1e-15);
        assert!((built.cov.entry(2, 2) - 2.0).abs() < 1e-15);
        assert!(built.assumption1_margin().unwrap() > 0.69);
        assert_eq!(built.partition, vec![0, 0, 0, 1, 1, 1]);
    }

    #[test]
    fn degenerate_gap_reports_assumption_violation() {
        let spec = BlockModelSpec::<f64> {
            cluster_sizes: vec![2, 2],
            intra_corr: 0.4,
            inter_corr: 0.4,
            variance: 1.0,
            local_best_mean: 1.0,
            other_mean: 0.0,
            cluster_offsets: None,
        };
        let built = build_block_model(&spec).unwrap();
        // Equal intra/inter correlation: no strict margin.
        assert!(built.assumption1_margin().unwrap() <= 0.0);
    }

    #[test]
    fn inverted_gap_is_rejected() {
        let spec = BlockModelSpec::<f64> {
            cluster_sizes: vec![2, 2],
            intra_corr: 0.2,
            inter_corr: 0.5,
            variance: 1.0,
            local_best_mean: 1.0,
            other_mean: 0.0,
            cluster_offsets: None,
        };
        let err = build_block_model(&spec).unwrap_err();
        let msg = format!("{err}");
        assert!(msg.contains("intra=0.2"), "error should name parameters: {msg}");
    }

    #[test]
    fn large_block_model_smallest_eigenvalue_positive() {
        let spec = BlockModelSpec::<f64> {
            cluster_sizes: vec![128; 8],
            intra_corr: 0.5,
            inter_corr: 0.05,
            variance: 1.0,
            local_best_mean: 1.0,
            other_mean: 0.0,
            cluster_offsets: None,
        };
        let built = build_block_model(&spec).unwrap();
        let (lo, hi) = built.cov.extreme_eigenvalues().unwrap();
        assert!(lo > 0.0, "smallest eigenvalue {lo}");
        // Analytic within-block contrast eigenvalue.
        assert!((lo - 0.5).abs() < 1e-9);
        assert!(hi > lo);
        // Cross-check against a dense partial eigendecomposition.
        let dense = built.cov.sub_dense(&(0..1024).collect::<Vec<_>>());
        let lo_inv = smallest_eigenvalue(&dense, 200).unwrap();
        assert!((lo_inv - lo).abs() < 1e-6, "inverse iteration {lo_inv} vs analytic {lo}");
    }

    #[test]
    fn identity_sigma_sample_correlations_near_zero() {
        let p = 6;
        let spec = ProblemSpec::dense(vec![0.0; p], Array2::<f64>::eye(p), None).unwrap();
        let n = 1_000_000;
        let rows = spec.simulate(n, 3).unwrap();
        let nf = n as f64;
        let means: Vec<f64> = (0..p).map(|j| rows.column(j).sum() / nf).collect();
        for i in 0..p {
            for j in (i + 1)..p {
                let mut c = 0.0;
                for r in 0..n {
                    c += (rows[[r, i]] - means[i]) * (rows[[r, j]] - means[j]);
                }
                c /= nf - 1.0;
                assert!(c.abs() < 4.0 / nf.sqrt(), "corr({i},{j}) = {c}");
            }
        }
    }

    #[test]
    fn simulate_is_bit_deterministic() {
        let spec = build_free_wilson(&two_site_spec(), None).unwrap();
        let a = spec.simulate(1, 1234).unwrap();
        let b = spec.simulate(1, 1234).unwrap();
        assert_eq!(a, b);
        let c = spec.simulate(1, 1235).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn subset_draws_match_marginal_distribution() {
        let spec = build_free_wilson(&two_site_spec(), None).unwrap();
        let n = 100_000;
        let rows = spec.simulate_subset(&[1, 3], n, 5).unwrap();
        let mean1: f64 = rows.column(0).sum() / n as f64;
        assert!((mean1 - spec.mu[1]).abs() < 0.02);
    }

    #[test]
    fn replication_stream_pairs_observations_by_ordinal() {
        // With a perfectly correlated pair (shared factor, tiny noise), the
        // m-th draws of both alternatives must nearly coincide even when they
        // are taken through different batch patterns.
        let spec = FreeWilsonSpec::<f64> {
            sites: vec![Site { name: "s".into(), substituents: 1 }],
            base_mean: 0.0,
            atom_means: vec![vec![0.0]],
            atom_vars: vec![vec![1.0]],
            noise_var: 1e-12,
        };
        // Two drugs would collide; widen with a second site of 2 substituents.
        let spec = FreeWilsonSpec::<f64> {
            sites: vec![
                Site { name: "a".into(), substituents: 1 },
                Site { name: "b".into(), substituents: 2 },
            ],
            atom_means: vec![vec![0.0], vec![0.0, 0.0]],
            atom_vars: vec![vec![1.0], vec![1e-12, 1e-12]],
            ..spec
        };
        let built = build_free_wilson(&spec, None).unwrap();
        let mut stream = ReplicationStream::new(&built, &[0, 1], 77);
        // Alternative 0 advances by 3 first, then both advance by 2.
        let first = stream.take(&[3, 0]).unwrap();
        let second = stream.take(&[2, 2]).unwrap();
        assert!(second.full_rows.is_none(), "members are misaligned");
        // Ordinals: member 1's first two observations pair with member 0's
        // first two (same shared factor).
        let m0_first: &[f64] = &first.per_member[0];
        let m1: &[f64] = &second.per_member[1];
        assert!((m0_first[0] - m1[0]).abs() < 1e-5);
        assert!((m0_first[1] - m1[1]).abs() < 1e-5);
    }

    #[test]
    fn replication_stream_uniform_take_reports_full_rows() {
        let spec = build_free_wilson(&two_site_spec(), None).unwrap();
        let mut st = ReplicationStream::new(&spec, &[0, 1, 2, 3], 9);
        let batch = st.take_uniform(5).unwrap();
        let rows = batch.full_rows.expect("aligned uniform take");
        assert_eq!(rows.nrows(), 5);
        assert_eq!(rows.ncols(), 4);
        assert_eq!(st.total_drawn(), 20);
    }

    #[test]
    fn dense_stream_matches_model_correlation() {
        // Conditional sampling must reproduce the joint law. Correlated pair,
        // alternating one-sided batches; check sample correlation of paired
        // ordinals.
        let sigma = ndarray::array![[1.0, 0.9], [0.9, 1.0f64]];
        let spec = ProblemSpec::dense(vec![0.0, 0.0], sigma, None).unwrap();
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        let mut st = ReplicationStream::new(&spec, &[0, 1], 31);
        for _ in 0..4000 {
            let a = st.take(&[1, 0]).unwrap();
            let b = st.take(&[0, 1]).unwrap();
            xs.push(a.per_member[0][0]);
            ys.push(b.per_member[1][0]);
        }
        let n = xs.len() as f64;
        let mx = xs.iter().sum::<f64>() / n;
        let my = ys.iter().sum::<f64>() / n;
        let mut sxy = 0.0;
        let mut sxx = 0.0;
        let mut syy = 0.0;
        for i in 0..xs.len() {
            sxy += (xs[i] - mx) * (ys[i] - my);
            sxx += (xs[i] - mx).powi(2);
            syy += (ys[i] - my).powi(2);
        }
        let r = sxy / (sxx * syy).sqrt();
        assert!((r - 0.9).abs() < 0.03, "paired correlation {r}");
    }

    #[test]
    fn json_round_trip_preserves_model() {
        let spec = build_free_wilson(&two_site_spec(), None).unwrap();
        let text = serde_json::to_string(&spec).unwrap();
        let back: ProblemSpec<f64> = serde_json::from_str(&text).unwrap();
        assert_eq!(back.p, spec.p);
        assert_eq!(back.best_index, spec.best_index);
        assert!((back.cov.entry(0, 1) - spec.cov.entry(0, 1)).abs() < 1e-15);
    }

    #[test]
    fn observations_csv_has_index_header() {
        let spec = build_free_wilson(&two_site_spec(), None).unwrap();
        let rows = spec.simulate_subset(&[0, 2], 3, 1).unwrap();
        let mut buf = Vec::new();
        write_observations_csv(&rows, &[0, 2], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("0,2\n"));
        assert_eq!(text.lines().count(), 4);
    }

    #[test]
    fn best_index_ties_go_to_lowest_and_flag() {
        let sigma = Array2::<f64>::eye(3);
        let spec = ProblemSpec::dense(vec![1.0, 2.0, 2.0], sigma, None).unwrap();
        assert_eq!(spec.best_index, 1);
        assert!(spec.ambiguous_best);
    }
}
