//! Correlation-based alternative clustering: linkage clustering over a
//! correlation matrix, few-shot clustering with PCA prototypes and parallel
//! query matching, empirical probability-of-correct-clustering measurement,
//! and its computable lower bounds.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::power_iteration;
use crate::problem::{ProblemSpec, SampleSource};
use crate::rng::{derive_seed, derive_seed2, stream};
use crate::scalar::{count, lit, Scalar};
use crate::special::{phi, phi_inv};
use crate::stats::{correlation_from_covariance, covariance_from_rows, meng_variance, CovEstimator};

const SALT_SPLIT: u64 = 0xC1;
const SALT_SUPPORT: u64 = 0xC2;
const SALT_QUERY: u64 = 0xC3;

/// How a partition was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    Linkage,
    FewShot,
    Random,
    Truth,
}

/// A cluster assignment with optional per-cluster prototypes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClusterPartition {
    /// Labels in `0..k`, every label used.
    pub labels: Vec<usize>,
    pub k: usize,
    /// Per-cluster prototype indices (each belongs to its own cluster).
    pub prototypes: Option<Vec<usize>>,
    pub provenance: Provenance,
}

impl ClusterPartition {
    pub fn new(labels: Vec<usize>, provenance: Provenance) -> Self {
        let (labels, k) = canonicalize_labels(&labels);
        Self {
            labels,
            k,
            prototypes: None,
            provenance,
        }
    }

    pub fn members(&self, cluster: usize) -> Vec<usize> {
        (0..self.labels.len())
            .filter(|&i| self.labels[i] == cluster)
            .collect()
    }

    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0usize; self.k];
        for &l in &self.labels {
            sizes[l] += 1;
        }
        sizes
    }
}

/// Relabel by order of first appearance so label-permuted assignments
/// compare equal.
pub fn canonicalize_labels(labels: &[usize]) -> (Vec<usize>, usize) {
    let mut map: Vec<Option<usize>> = vec![None; labels.len()];
    let mut next = 0usize;
    let mut out = Vec::with_capacity(labels.len());
    for &l in labels {
        let slot = map
            .get_mut(l)
            .unwrap_or_else(|| panic!("label {l} out of range"));
        let id = match slot {
            Some(id) => *id,
            None => {
                *slot = Some(next);
                next += 1;
                next - 1
            }
        };
        out.push(id);
    }
    (out, next)
}

/// Partition equality up to label permutation. Canonicalizing by first
/// appearance decides exactly the same relation as searching over label
/// permutations, in O(p).
pub fn partitions_equal(a: &[usize], b: &[usize]) -> bool {
    if a.len() != b.len() {
        return false;
    }
    canonicalize_labels(a).0 == canonicalize_labels(b).0
}

/// Agglomerate alternatives into `k` groups by single linkage on similarity
/// `R(A, B) = max r[i][j]`. With `size_cap` set, merges that would exceed the
/// cap are skipped in favor of the next-best pair.
pub fn ac_cluster<T: Scalar>(
    correlation: &Array2<T>,
    k: usize,
    size_cap: Option<usize>,
) -> Result<ClusterPartition> {
    let p = correlation.nrows();
    if k == 0 || k > p {
        return Err(Error::InvalidConfig(format!(
            "cannot form k={k} groups from {p} alternatives"
        )));
    }
    if let Some(cap) = size_cap {
        if cap * k < p {
            return Err(Error::CapInfeasible { cap, k, p });
        }
    }
    let mut groups: Vec<Vec<usize>> = (0..p).map(|i| vec![i]).collect();
    while groups.len() > k {
        let mut best: Option<(T, usize, usize)> = None;
        for a in 0..groups.len() {
            for b in (a + 1)..groups.len() {
                if let Some(cap) = size_cap {
                    if groups[a].len() + groups[b].len() > cap {
                        continue;
                    }
                }
                let mut sim = T::neg_infinity();
                for &i in &groups[a] {
                    for &j in &groups[b] {
                        sim = sim.max(correlation[[i, j]]);
                    }
                }
                // Strict improvement keeps the lexicographically first pair on ties.
                if best.map_or(true, |(s, _, _)| sim > s) {
                    best = Some((sim, a, b));
                }
            }
        }
        let Some((_, a, b)) = best else {
            return Err(Error::CapInfeasible {
                cap: size_cap.unwrap_or(p),
                k,
                p,
            });
        };
        let merged = groups.remove(b);
        groups[a].extend(merged);
    }
    // Deterministic labels: clusters ordered by smallest member.
    groups.sort_by_key(|g| *g.iter().min().unwrap());
    let mut labels = vec![0usize; p];
    for (lab, group) in groups.iter().enumerate() {
        for &i in group {
            labels[i] = lab;
        }
    }
    Ok(ClusterPartition::new(labels, Provenance::Linkage))
}

/// Pick the member with the largest loading on the first principal component
/// of the cluster's correlation submatrix (power iteration, relative
/// eigenvalue tolerance 1e-10). Returns a local index into the submatrix.
pub fn select_prototype<T: Scalar>(correlation: &Array2<T>) -> Result<usize> {
    let m = correlation.nrows();
    if m == 0 {
        return Err(Error::InvalidConfig("empty cluster".into()));
    }
    if m == 1 {
        return Ok(0);
    }
    let (_, mut vec) = power_iteration(correlation, lit(1e-10), 100_000)?;
    // The eigenvalue stabilizes before the vector sheds the start tilt; a few
    // extra sweeps settle the loadings so exact ties compare equal.
    for _ in 0..64 {
        vec = correlation.dot(&vec);
        let norm = vec.iter().map(|&x| x * x).sum::<T>().sqrt();
        if norm == T::zero() {
            break;
        }
        vec.mapv_inplace(|x| x / norm);
    }
    // Fix the sign so the loading sum is nonnegative.
    let total: T = vec.iter().copied().sum();
    if total < T::zero() {
        vec.mapv_inplace(|x| -x);
    }
    let mut best = 0usize;
    let tol = lit::<T>(1e-7);
    for i in 1..m {
        if vec[i] > vec[best] + tol {
            best = i;
        }
    }
    Ok(best)
}

/// Sampling cost ledger of one clustering run, in raw observations.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct ClusteringCost {
    pub support_samples: u64,
    pub query_samples: u64,
    /// Re-simulated prototype observations consumed by query matching.
    pub prototype_copy_samples: u64,
}

impl ClusteringCost {
    pub fn total(&self) -> u64 {
        self.support_samples + self.query_samples + self.prototype_copy_samples
    }
}

/// Per-alternative univariate statistics accumulated while clustering,
/// reusable to initialize downstream procedure statistics.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct UniStat<T> {
    pub n: u64,
    pub sum: T,
    pub sum_sq: T,
}

impl<T: Scalar> Default for UniStat<T> {
    fn default() -> Self {
        Self {
            n: 0,
            sum: T::zero(),
            sum_sq: T::zero(),
        }
    }
}

impl<T: Scalar> UniStat<T> {
    fn add(&mut self, v: T) {
        self.n += 1;
        self.sum = self.sum + v;
        self.sum_sq = self.sum_sq + v * v;
    }
}

/// Outcome of a clustering run: the partition, the sampling cost, and the
/// univariate statistics of everything that was simulated.
#[derive(Debug, Clone)]
pub struct ClusteringOutcome<T: Scalar> {
    pub partition: ClusterPartition,
    pub cost: ClusteringCost,
    pub per_alt: Vec<UniStat<T>>,
}

/// Few-shot clustering configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AcPlusConfig {
    pub k: usize,
    /// Support-set size (the query set is everything else).
    pub p_s: usize,
    /// Joint replications per estimation task.
    pub n: usize,
    pub estimator: CovEstimator,
    /// Advisory worker count; results are identical for any value because
    /// every query owns a derived seed.
    pub workers: usize,
}

/// Few-shot clustering: split into support and query sets, cluster the
/// support by linkage on estimated correlations, pick one prototype per
/// cluster by PCA loading, then match every query alternative to its most
/// correlated prototype from fresh paired simulations of (prototypes, query).
pub fn ac_plus<T: Scalar, S: SampleSource<T>>(
    source: &S,
    cfg: &AcPlusConfig,
    seed: u64,
) -> Result<ClusteringOutcome<T>> {
    let p = source.dim();
    if cfg.k > cfg.p_s || cfg.p_s > p {
        return Err(Error::InvalidConfig(format!(
            "need k <= p_s <= p, got k={}, p_s={}, p={p}",
            cfg.k, cfg.p_s
        )));
    }
    if cfg.n < 4 {
        return Err(Error::InsufficientSamples(
            "few-shot clustering needs n >= 4 joint replications".into(),
        ));
    }
    let (support, query) = split_support_query(p, cfg.p_s, seed);
    let mut per_alt = vec![UniStat::<T>::default(); p];

    // Support stage: estimate correlations and cluster on one processor.
    let support_rows = source.draw_joint(&support, cfg.n, derive_seed(seed, SALT_SUPPORT))?;
    for (c, &g) in support.iter().enumerate() {
        for r in 0..cfg.n {
            per_alt[g].add(support_rows[[r, c]]);
        }
    }
    let est = covariance_from_rows(&support_rows, cfg.estimator)?;
    let corr = correlation_from_covariance(&est.matrix);
    let support_partition = ac_cluster(&corr, cfg.k, None)?;

    // One prototype per support cluster.
    let mut prototypes = Vec::with_capacity(cfg.k);
    for cluster in 0..cfg.k {
        let members = support_partition.members(cluster);
        let sub = submatrix(&corr, &members);
        let local = select_prototype(&sub)?;
        prototypes.push(support[members[local]]);
    }

    // Query stage: embarrassingly parallel matching with per-query seeds.
    let match_one = |&q: &usize| -> Result<(usize, usize, Vec<(usize, T, T)>)> {
        let mut joint = prototypes.clone();
        joint.push(q);
        let rows = source.draw_joint(&joint, cfg.n, derive_seed2(seed, SALT_QUERY, q as u64))?;
        let est = covariance_from_rows(&rows, cfg.estimator)?;
        let corr = correlation_from_covariance(&est.matrix);
        let mut best = 0usize;
        for i in 1..cfg.k {
            if corr[[i, cfg.k]] > corr[[best, cfg.k]] {
                best = i;
            }
        }
        let mut stats = Vec::with_capacity(cfg.k + 1);
        for (c, &g) in joint.iter().enumerate() {
            let mut s = UniStat::<T>::default();
            for r in 0..cfg.n {
                s.add(rows[[r, c]]);
            }
            stats.push((g, s.sum, s.sum_sq));
        }
        Ok((q, best, stats))
    };
    let matched: Result<Vec<_>> = if cfg.workers <= 1 {
        query.iter().map(match_one).collect()
    } else {
        query.par_iter().map(match_one).collect()
    };
    let matched = matched?;

    let mut labels = vec![0usize; p];
    for (c, &g) in support.iter().enumerate() {
        labels[g] = support_partition.labels[c];
    }
    for (q, cluster, stats) in &matched {
        labels[*q] = *cluster;
        for &(g, sum, sum_sq) in stats {
            per_alt[g].n += cfg.n as u64;
            per_alt[g].sum = per_alt[g].sum + sum;
            per_alt[g].sum_sq = per_alt[g].sum_sq + sum_sq;
        }
    }
    let (labels, k) = canonicalize_labels(&labels);
    let prototypes = remap_prototypes(&labels, &prototypes);
    let partition = ClusterPartition {
        labels,
        k,
        prototypes: Some(prototypes),
        provenance: Provenance::FewShot,
    };
    let nq = query.len() as u64;
    Ok(ClusteringOutcome {
        partition,
        cost: ClusteringCost {
            support_samples: (cfg.n * cfg.p_s) as u64,
            query_samples: cfg.n as u64 * nq,
            prototype_copy_samples: cfg.n as u64 * cfg.k as u64 * nq,
        },
        per_alt,
    })
}

fn remap_prototypes(labels: &[usize], prototypes: &[usize]) -> Vec<usize> {
    // After canonicalization a prototype's label may have moved; order the
    // prototype list by the canonical label of each prototype.
    let k = prototypes.len();
    let mut out = vec![usize::MAX; k];
    for &proto in prototypes {
        out[labels[proto]] = proto;
    }
    debug_assert!(out.iter().all(|&x| x != usize::MAX));
    out
}

/// Uniform-without-replacement split into (support, query), both sorted.
pub fn split_support_query(p: usize, p_s: usize, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut indices: Vec<usize> = (0..p).collect();
    let mut rng = stream(seed, SALT_SPLIT);
    indices.shuffle(&mut rng);
    let mut support: Vec<usize> = indices[..p_s].to_vec();
    let mut query: Vec<usize> = indices[p_s..].to_vec();
    support.sort_unstable();
    query.sort_unstable();
    (support, query)
}

/// Seeded random partition into k groups with sizes differing by at most one
/// (the divide-and-conquer baseline and the zero-information control).
pub fn random_equal_partition(p: usize, k: usize, seed: u64) -> ClusterPartition {
    let mut indices: Vec<usize> = (0..p).collect();
    let mut rng = stream(seed, 0xD1);
    indices.shuffle(&mut rng);
    let mut labels = vec![0usize; p];
    for (pos, &i) in indices.iter().enumerate() {
        labels[i] = pos % k;
    }
    ClusterPartition::new(labels, Provenance::Random)
}

fn submatrix<T: Scalar>(m: &Array2<T>, idx: &[usize]) -> Array2<T> {
    let q = idx.len();
    let mut out = Array2::<T>::zeros((q, q));
    for (a, &i) in idx.iter().enumerate() {
        for (b, &j) in idx.iter().enumerate() {
            out[[a, b]] = m[[i, j]];
        }
    }
    out
}

/// Comparison triples behind the clustering guarantee. Each `(a, b, c)` is
/// the event "estimated r(a,b) exceeds estimated r(a,c)" where a and b share
/// a cluster and c does not.
#[derive(Debug, Clone, Default)]
pub struct GammaSets {
    /// Triples with a, b, c all in the support set.
    pub support: Vec<(usize, usize, usize)>,
    /// Triples (query a, own prototype, foreign prototype).
    pub query: Vec<(usize, usize, usize)>,
}

/// Enumerate the support and query comparison triples for a given truth
/// partition, support set, and per-cluster prototypes.
pub fn enumerate_gamma(
    partition: &[usize],
    support: &[usize],
    prototypes: &[usize],
) -> GammaSets {
    let in_support: std::collections::HashSet<usize> = support.iter().copied().collect();
    let mut sets = GammaSets::default();
    for &a in support {
        for &b in support {
            if b == a || partition[b] != partition[a] {
                continue;
            }
            for &c in support {
                if partition[c] != partition[a] {
                    sets.support.push((a, b, c));
                }
            }
        }
    }
    for (q, &lab) in partition.iter().enumerate() {
        if in_support.contains(&q) {
            continue;
        }
        let own = prototypes[lab];
        for (other_lab, &proto) in prototypes.iter().enumerate() {
            if other_lab != lab {
                sets.query.push((q, own, proto));
            }
        }
    }
    sets
}

/// Lowest-index support member of each cluster, as a prototype stand-in for
/// a-priori bound evaluation.
pub fn default_prototypes(partition: &[usize], support: &[usize], k: usize) -> Result<Vec<usize>> {
    let mut out = vec![usize::MAX; k];
    for &s in support {
        let lab = partition[s];
        if out[lab] == usize::MAX {
            out[lab] = s;
        }
    }
    if out.iter().any(|&x| x == usize::MAX) {
        return Err(Error::InvalidConfig(
            "support set misses at least one cluster".into(),
        ));
    }
    Ok(out)
}

/// Components of the computable lower bound on the probability of correct
/// clustering.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PccBound<T> {
    /// Probability every cluster is represented in the support set.
    pub occupancy: T,
    /// Raw Bonferroni value of the support comparison event (can be < 0).
    pub support_term: T,
    /// Raw Bonferroni value of the query matching event (can be < 0).
    pub query_term: T,
    /// occupancy x clamped support x clamped query.
    pub value: T,
    /// Lower bound for full linkage clustering assuming equal cluster sizes
    /// (only computed for p <= 200).
    pub ac_equal_size: Option<T>,
    /// Unequal-size linkage bound adding the independent-comparison term
    /// (only computed for p <= 200).
    pub ac_unequal_size: Option<T>,
    pub delta_c: T,
    pub n: usize,
    pub p_s: usize,
}

/// Occupancy probability that `p_s` uniform draws hit every cluster:
/// `1 - sum_j (1 - p_j/p)^{p_s}` (equal sizes give `1 - k (1 - 1/k)^{p_s}`).
pub fn occupancy_probability<T: Scalar>(cluster_sizes: &[usize], p_s: usize) -> T {
    let p: usize = cluster_sizes.iter().sum();
    let pf: T = count(p);
    let mut miss = T::zero();
    for &sz in cluster_sizes {
        miss = miss + (T::one() - count::<T>(sz) / pf).powi(p_s as i32);
    }
    (T::one() - miss).max(T::zero())
}

fn bonferroni_comparison_term<T: Scalar>(
    corr: &Array2<T>,
    triples: &[(usize, usize, usize)],
    delta_c: T,
    n: usize,
) -> Result<T> {
    if triples.is_empty() {
        // Empty intersection holds surely.
        return Ok(T::one());
    }
    let mut sum = T::zero();
    for &(a, b, c) in triples {
        let var = meng_variance(corr[[a, b]], corr[[a, c]], corr[[b, c]], n)?;
        sum = sum + phi(delta_c / var.sqrt());
    }
    Ok(sum - count::<T>(triples.len() - 1))
}

fn clamp01<T: Scalar>(x: T) -> T {
    x.min(T::one()).max(T::zero())
}

/// Evaluate the clustering-probability lower bound from estimated
/// correlations, a truth partition, and comparison sets.
pub fn pcc_lower_bound<T: Scalar>(
    corr: &Array2<T>,
    partition: &ClusterPartition,
    delta_c: T,
    n: usize,
    p_s: usize,
    gamma: &GammaSets,
) -> Result<PccBound<T>> {
    if n <= 3 {
        return Err(Error::InsufficientSamples(
            "the comparison variance needs n >= 4".into(),
        ));
    }
    if delta_c <= T::zero() {
        return Err(Error::InvalidConfig("delta_c must be positive".into()));
    }
    let sizes = partition.cluster_sizes();
    let occupancy = occupancy_probability::<T>(&sizes, p_s);
    let support_term = bonferroni_comparison_term(corr, &gamma.support, delta_c, n)?;
    let query_term = bonferroni_comparison_term(corr, &gamma.query, delta_c, n)?;
    let value = occupancy * clamp01(support_term) * clamp01(query_term);

    let p = partition.labels.len();
    let (ac_equal_size, ac_unequal_size) = if p <= 200 {
        let full = full_gamma(&partition.labels);
        let gamma_term = bonferroni_comparison_term(corr, &full, delta_c, n)?;
        let independent_pairs = count_disjoint_comparisons(&sizes);
        let single: T =
            T::one() - phi(delta_c / (lit::<T>(2.0) / count::<T>(n - 3)).sqrt());
        let indep_term = T::one() - count::<T>(independent_pairs) * single;
        // Both events must hold; combine with one more Bonferroni step.
        let unequal = clamp01(gamma_term) + clamp01(indep_term) - T::one();
        (Some(gamma_term), Some(unequal))
    } else {
        (None, None)
    };
    Ok(PccBound {
        occupancy,
        support_term,
        query_term,
        value,
        ac_equal_size,
        ac_unequal_size,
        delta_c,
        n,
        p_s,
    })
}

fn full_gamma(labels: &[usize]) -> Vec<(usize, usize, usize)> {
    let p = labels.len();
    let mut out = Vec::new();
    for a in 0..p {
        for b in 0..p {
            if b == a || labels[b] != labels[a] {
                continue;
            }
            for c in 0..p {
                if labels[c] != labels[a] {
                    out.push((a, b, c));
                }
            }
        }
    }
    out
}

/// Number of (intra pair, inter pair) comparisons with all four indices
/// distinct from the intra pair's cluster.
fn count_disjoint_comparisons(sizes: &[usize]) -> usize {
    let k = sizes.len();
    let mut total = 0usize;
    for g in 0..k {
        let intra = sizes[g] * (sizes[g] - 1) / 2;
        let mut inter = 0usize;
        for g1 in 0..k {
            for g2 in (g1 + 1)..k {
                if g1 != g && g2 != g {
                    inter += sizes[g1] * sizes[g2];
                }
            }
        }
        total += intra * inter;
    }
    total
}

/// Additional replications needed so that each query comparison holds with
/// probability `alpha_q / |Gamma_q|` on the Fisher-z scale:
/// `max(0, floor(2 z^2 / delta_c^2 * max (1 - r_bc) h + 3 - n0))`.
pub fn required_clustering_samples<T: Scalar>(
    alpha_q: T,
    delta_c: T,
    pilot_corr: &Array2<T>,
    gamma_q: &[(usize, usize, usize)],
    n0: usize,
) -> Result<usize> {
    let events = gamma_q.len();
    if events == 0 {
        return Ok(0);
    }
    let events_t: T = count(events);
    if alpha_q <= T::zero() || alpha_q >= events_t {
        return Err(Error::InfeasibleQuantile {
            target: alpha_q.to_f64().unwrap_or(f64::NAN),
            events,
        });
    }
    if n0 <= 3 {
        return Err(Error::InsufficientSamples(
            "pilot estimates need n0 >= 4".into(),
        ));
    }
    let q = (events_t - alpha_q) / events_t;
    let z = phi_inv(q);
    let mut worst = T::zero();
    for &(a, b, c) in gamma_q {
        let r_ab = pilot_corr[[a, b]];
        let r_bc = pilot_corr[[b, c]];
        let r_sq = lit::<T>(0.5) * (r_ab * r_ab + r_bc * r_bc);
        let f = ((T::one() - r_bc) / (lit::<T>(2.0) * (T::one() - r_sq))).min(T::one());
        let h = (T::one() - f * r_sq) / (T::one() - r_sq);
        worst = worst.max((T::one() - r_bc) * h);
    }
    let needed =
        (lit::<T>(2.0) * z * z / (delta_c * delta_c) * worst + lit::<T>(3.0) - count::<T>(n0))
            .floor();
    Ok(needed.max(T::zero()).to_f64().unwrap_or(0.0) as usize)
}

/// A clustering procedure configuration for empirical PCC measurement.
#[derive(Debug, Clone)]
pub enum ClusteringRun {
    /// Linkage clustering of everything from exact model correlations.
    OracleLinkage,
    /// Few-shot clustering with exact correlations (fails only on occupancy).
    OracleFewShot { p_s: usize },
    /// Linkage clustering of everything from n joint replications.
    SampledLinkage { n: usize, estimator: CovEstimator },
    /// Few-shot clustering from sampled correlations.
    SampledFewShot { cfg: AcPlusConfig },
    /// Seeded random equal split (zero-information control).
    Random,
}

/// Run one clustering procedure against a problem instance.
pub fn run_clustering<T: Scalar>(
    spec: &ProblemSpec<T>,
    run: &ClusteringRun,
    seed: u64,
) -> Result<ClusterPartition> {
    match run {
        ClusteringRun::OracleLinkage => {
            let corr = spec.correlation();
            ac_cluster(&corr, spec.k, None)
        }
        ClusteringRun::OracleFewShot { p_s } => {
            let corr = spec.correlation();
            let (support, query) = split_support_query(spec.p, *p_s, seed);
            let sub = submatrix(&corr, &support);
            let support_partition = ac_cluster(&sub, spec.k, None)?;
            let mut prototypes = Vec::with_capacity(spec.k);
            for cluster in 0..spec.k {
                let members = support_partition.members(cluster);
                let proto_sub = submatrix(&sub, &members);
                let local = select_prototype(&proto_sub)?;
                prototypes.push(support[members[local]]);
            }
            let mut labels = vec![0usize; spec.p];
            for (c, &g) in support.iter().enumerate() {
                labels[g] = support_partition.labels[c];
            }
            for &q in &query {
                let mut best = 0usize;
                for i in 1..spec.k {
                    if corr[[prototypes[i], q]] > corr[[prototypes[best], q]] {
                        best = i;
                    }
                }
                labels[q] = best;
            }
            Ok(ClusterPartition::new(labels, Provenance::FewShot))
        }
        ClusteringRun::SampledLinkage { n, estimator } => {
            let all: Vec<usize> = (0..spec.p).collect();
            let rows = spec.draw_joint(&all, *n, derive_seed(seed, SALT_SUPPORT))?;
            let est = covariance_from_rows(&rows, *estimator)?;
            let corr = correlation_from_covariance(&est.matrix);
            ac_cluster(&corr, spec.k, None)
        }
        ClusteringRun::SampledFewShot { cfg } => Ok(ac_plus(spec, cfg, seed)?.partition),
        ClusteringRun::Random => Ok(random_equal_partition(spec.p, spec.k, seed)),
    }
}

/// Empirical probability of correct clustering with a binomial standard error.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PccEstimate<T> {
    pub value: T,
    pub std_error: T,
    pub reps: usize,
}

/// Fraction of macro-replications whose partition equals the truth up to
/// label permutation.
pub fn measure_pcc<T: Scalar>(
    spec: &ProblemSpec<T>,
    run: &ClusteringRun,
    reps: usize,
    seed: u64,
) -> Result<PccEstimate<T>> {
    if reps == 0 {
        return Err(Error::InvalidConfig("need reps >= 1".into()));
    }
    let hits: Result<Vec<bool>> = (0..reps)
        .into_par_iter()
        .map(|r| {
            let partition = run_clustering(spec, run, derive_seed(seed, r as u64))?;
            Ok(partitions_equal(&partition.labels, &spec.partition))
        })
        .collect();
    let hits = hits?;
    let wins = hits.iter().filter(|&&h| h).count();
    let n: T = count(reps);
    let v = count::<T>(wins) / n;
    Ok(PccEstimate {
        value: v,
        std_error: (v * (T::one() - v) / n).sqrt(),
        reps,
    })
}
