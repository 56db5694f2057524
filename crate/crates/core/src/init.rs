//! Weighted k-means with k-means++ seeding, the gap statistic, and the
//! initial mixture built from the best clustering.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::dataset::WeightedDataset;
use crate::error::{GmmError, Result};
use crate::model::{data_moments, GaussianComponent, MixtureModel};

/// Outcome of one weighted Lloyd run.
#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub centroids: Vec<DVector<f64>>,
    pub assignment: Vec<usize>,
    /// `Σ_k Σ_{i∈C_k} ζ_i |x_i - c_k|²`.
    pub sse: f64,
    /// `n_k = Σ_{i∈C_k} ζ_i`.
    pub cluster_weights: Vec<f64>,
    pub iterations: usize,
    /// SSE after each assignment step.
    pub sse_history: Vec<f64>,
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn draw_index(weights: &[f64], total: f64, rng: &mut impl Rng) -> usize {
    let mut u = rng.random::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if u < *w {
            return i;
        }
        u -= w;
    }
    weights.iter().rposition(|w| *w > 0.0).unwrap_or(0)
}

/// k-means++ seeding with every probability scaled by the sample weight.
pub fn kmeans_pp_seed(data: &WeightedDataset, k: usize, rng: &mut impl Rng) -> Result<Vec<DVector<f64>>> {
    if k == 0 || k > data.len() {
        return Err(GmmError::Seeding(format!("cannot seed {k} centroids from {} points", data.len())));
    }
    let n = data.len();
    let first = draw_index(data.weights(), data.total_weight(), rng);
    let mut chosen = vec![first];
    let mut d2: Vec<f64> = (0..n).map(|j| dist2(data.point(j), data.point(first))).collect();
    while chosen.len() < k {
        let probs: Vec<f64> = d2.iter().zip(data.weights()).map(|(d, w)| d * w).collect();
        let total: f64 = probs.iter().sum();
        if !(total > 0.0) {
            return Err(GmmError::Seeding(format!("fewer than {k} distinct points")));
        }
        let next = draw_index(&probs, total, rng);
        chosen.push(next);
        for (j, d) in d2.iter_mut().enumerate() {
            *d = d.min(dist2(data.point(j), data.point(next)));
        }
    }
    Ok(chosen.into_iter().map(|j| data.point_vector(j)).collect())
}

fn nearest(x: &[f64], centroids: &[f64], d: usize) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (k, c) in centroids.chunks_exact(d).enumerate() {
        let v = dist2(x, c);
        if v < best.1 {
            best = (k, v);
        }
    }
    best
}

/// Weighted Lloyd iterations from `seeds` until the assignment is stable or
/// `max_iters` is reached. Empty clusters are moved to the point with the
/// largest weighted squared distance to its centroid.
pub fn weighted_kmeans(data: &WeightedDataset, seeds: &[DVector<f64>], max_iters: usize) -> KMeansResult {
    let d = data.dim();
    let n = data.len();
    let k = seeds.len();
    let mut centroids: Vec<f64> = seeds.iter().flat_map(|c| c.iter().copied()).collect();
    let mut assignment = vec![usize::MAX; n];
    let mut dists = vec![0.0; n];
    let mut sse_history = Vec::new();
    let mut iterations = 0;
    loop {
        let mut changed = false;
        let mut sse = 0.0;
        for j in 0..n {
            let (c, v) = nearest(data.point(j), &centroids, d);
            if assignment[j] != c {
                assignment[j] = c;
                changed = true;
            }
            dists[j] = v;
            sse += data.weight(j) * v;
        }
        sse_history.push(sse);
        if !changed || iterations >= max_iters {
            break;
        }
        iterations += 1;
        let mut sums = vec![0.0; k * d];
        let mut mass = vec![0.0; k];
        for j in 0..n {
            let c = assignment[j];
            let w = data.weight(j);
            mass[c] += w;
            for (s, x) in sums[c * d..(c + 1) * d].iter_mut().zip(data.point(j)) {
                *s += w * x;
            }
        }
        for c in 0..k {
            if mass[c] > 0.0 {
                for i in 0..d {
                    centroids[c * d + i] = sums[c * d + i] / mass[c];
                }
            } else {
                let far = (0..n)
                    .max_by(|&a, &b| (data.weight(a) * dists[a]).total_cmp(&(data.weight(b) * dists[b])))
                    .unwrap_or(0);
                centroids[c * d..(c + 1) * d].copy_from_slice(data.point(far));
                dists[far] = 0.0;
            }
        }
    }
    let mut cluster_weights = vec![0.0; k];
    for j in 0..n {
        cluster_weights[assignment[j]] += data.weight(j);
    }
    KMeansResult {
        centroids: centroids.chunks_exact(d).map(DVector::from_column_slice).collect(),
        assignment,
        sse: *sse_history.last().unwrap_or(&0.0),
        cluster_weights,
        iterations,
        sse_history,
    }
}

/// Smallest-SSE result of `trials` seeded runs with no empty cluster.
pub fn best_kmeans(data: &WeightedDataset, k: usize, trials: usize, max_iters: usize, rng: &mut impl Rng) -> Result<KMeansResult> {
    let mut best: Option<KMeansResult> = None;
    for _ in 0..trials.max(1) {
        let seeds = kmeans_pp_seed(data, k, rng)?;
        let r = weighted_kmeans(data, &seeds, max_iters);
        if r.cluster_weights.iter().any(|w| *w <= 0.0) {
            continue;
        }
        if best.as_ref().is_none_or(|b| r.sse < b.sse) {
            best = Some(r);
        }
    }
    best.ok_or_else(|| GmmError::Seeding(format!("no run produced {k} nonempty clusters")))
}

/// Mixture with `ω_k = n_k/N`, `μ_k = c_k` and the within-cluster weighted
/// covariance about `c_k`, jittered when singular.
pub fn model_from_kmeans(data: &WeightedDataset, km: &KMeansResult) -> Result<MixtureModel> {
    let d = data.dim();
    let k = km.centroids.len();
    let mut scatter = vec![DMatrix::<f64>::zeros(d, d); k];
    for j in 0..data.len() {
        let c = km.assignment[j];
        let dev = data.point_vector(j) - &km.centroids[c];
        scatter[c] += &dev * dev.transpose() * data.weight(j);
    }
    let dm = data_moments(data);
    let mean = &dm.first / dm.zeroth;
    let global = &dm.second / dm.zeroth - &mean * mean.transpose();
    let floor = (global.trace() / d as f64).max(f64::MIN_POSITIVE);
    let total: f64 = km.cluster_weights.iter().sum();
    let comps = (0..k)
        .map(|c| {
            let nk = km.cluster_weights[c];
            if !(nk > 0.0) {
                return Err(GmmError::Seeding(format!("cluster {c} is empty")));
            }
            GaussianComponent::with_floor(nk / total, km.centroids[c].clone(), &scatter[c] / nk, floor)
        })
        .collect::<Result<Vec<_>>>()?;
    MixtureModel::new(comps)
}

/// Reference distribution for the gap statistic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ReferenceDistribution {
    /// Uniform over the bounding box of the data in its principal axes.
    #[default]
    PcaBox,
    /// Normal with the sample mean and covariance.
    Normal,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GapStatConfig {
    pub k_min: usize,
    pub k_max: usize,
    pub k_adjust: usize,
    /// Number of reference sets `B`.
    pub b: usize,
    pub tau: f64,
    /// k-means restarts per clustering.
    pub n_trials: usize,
    pub max_iters: usize,
    pub reference: ReferenceDistribution,
    pub seed: u64,
}

impl Default for GapStatConfig {
    fn default() -> Self {
        Self { k_min: 2, k_max: 10, k_adjust: 2, b: 10, tau: 1.0, n_trials: 10, max_iters: 300, reference: ReferenceDistribution::PcaBox, seed: 0 }
    }
}

impl GapStatConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_min < 1 || self.k_max < self.k_min {
            return Err(GmmError::InvalidInput("need 1 <= k_min <= k_max".into()));
        }
        if self.b < 2 {
            return Err(GmmError::InvalidInput("need at least two reference sets".into()));
        }
        if !self.tau.is_finite() {
            return Err(GmmError::InvalidInput("tau must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GapStatRecord {
    pub k: usize,
    pub gsv: f64,
    pub s_k: f64,
    pub log_sse: f64,
    pub mean_ref_log_sse: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GapStatReport {
    pub records: Vec<GapStatRecord>,
    pub k_opt: usize,
    pub k_init: usize,
    /// False when no K satisfied the criterion and `k_opt` fell back to `k_max`.
    pub criterion_met: bool,
}

/// Reference-set generator fitted to one dataset.
struct Reference {
    mean: DVector<f64>,
    axes: DMatrix<f64>,
    lo: DVector<f64>,
    hi: DVector<f64>,
    chol: DMatrix<f64>,
}

impl Reference {
    fn new(data: &WeightedDataset) -> Self {
        let d = data.dim();
        let dm = data_moments(data);
        let mean = &dm.first / dm.zeroth;
        let cov = crate::linalg::symmetrize(&(&dm.second / dm.zeroth - &mean * mean.transpose()));
        let axes = SymmetricEigen::new(cov.clone()).eigenvectors;
        let mut lo = DVector::from_element(d, f64::INFINITY);
        let mut hi = DVector::from_element(d, f64::NEG_INFINITY);
        for j in 0..data.len() {
            let y = axes.transpose() * (data.point_vector(j) - &mean);
            for i in 0..d {
                lo[i] = lo[i].min(y[i]);
                hi[i] = hi[i].max(y[i]);
            }
        }
        let floor = (cov.trace() / d as f64).max(f64::MIN_POSITIVE);
        let chol = crate::linalg::cholesky_with_jitter(&cov, floor).map(|(_, l)| l).unwrap_or_else(|_| DMatrix::identity(d, d) * floor.sqrt());
        Self { mean, axes, lo, hi, chol }
    }

    fn sample(&self, n: usize, kind: ReferenceDistribution, rng: &mut impl Rng) -> WeightedDataset {
        let d = self.mean.len();
        let mut flat = Vec::with_capacity(n * d);
        for _ in 0..n {
            let x = match kind {
                ReferenceDistribution::PcaBox => {
                    let y = DVector::from_fn(d, |i, _| if self.hi[i] > self.lo[i] { rng.random_range(self.lo[i]..self.hi[i]) } else { self.lo[i] });
                    &self.axes * y + &self.mean
                }
                ReferenceDistribution::Normal => {
                    let z = DVector::from_fn(d, |_, _| StandardNormal.sample(rng));
                    &self.chol * z + &self.mean
                }
            };
            flat.extend(x.iter());
        }
        WeightedDataset::from_flat(d, flat, None).expect("reference points are finite")
    }
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// `GSV(K) = mean_b ln SSE_K(ref_b) - ln SSE_K(data)` for every K in range,
/// and `K_opt`, the smallest K with `GSV(K) > GSV(K+1) + τ s_{K+1}`.
pub fn gap_statistic(data: &WeightedDataset, cfg: &GapStatConfig) -> Result<GapStatReport> {
    cfg.validate()?;
    let k_max = cfg.k_max.min(data.len());
    if k_max < cfg.k_min {
        return Err(GmmError::InvalidInput(format!("k_min {} exceeds the number of points", cfg.k_min)));
    }
    let reference = Reference::new(data);
    let ks: Vec<usize> = (cfg.k_min..=k_max).collect();
    let cells: Vec<(usize, usize)> = ks.iter().flat_map(|&k| (0..=cfg.b).map(move |b| (k, b))).collect();
    let log_sse: Vec<f64> = cells
        .par_iter()
        .map(|&(k, b)| {
            let mut rng = stream_rng(cfg.seed, (k as u64) << 32 | b as u64);
            let sse = if b == 0 {
                best_kmeans(data, k, cfg.n_trials, cfg.max_iters, &mut rng)?.sse
            } else {
                let set = reference.sample(data.len(), cfg.reference, &mut rng);
                best_kmeans(&set, k, cfg.n_trials, cfg.max_iters, &mut rng)?.sse
            };
            Ok(sse.max(f64::MIN_POSITIVE).ln())
        })
        .collect::<Result<Vec<f64>>>()?;
    let bf = cfg.b as f64;
    let records: Vec<GapStatRecord> = ks
        .iter()
        .enumerate()
        .map(|(i, &k)| {
            let row = &log_sse[i * (cfg.b + 1)..(i + 1) * (cfg.b + 1)];
            let refs = &row[1..];
            let mean = refs.iter().sum::<f64>() / bf;
            let var = refs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / bf;
            GapStatRecord { k, gsv: mean - row[0], s_k: var.sqrt() * (1.0 + 1.0 / bf).sqrt(), log_sse: row[0], mean_ref_log_sse: mean }
        })
        .collect();
    let fired = records.windows(2).find(|w| w[0].gsv > w[1].gsv + cfg.tau * w[1].s_k).map(|w| w[0].k);
    let k_opt = fired.unwrap_or(k_max);
    Ok(GapStatReport { records, k_opt, k_init: k_opt + cfg.k_adjust, criterion_met: fired.is_some() })
}

/// Initial mixture with `K_opt + K_adjust` components from the best of
/// `n_trials` k-means runs.
pub fn gs_kmeans_init(data: &WeightedDataset, cfg: &GapStatConfig) -> Result<(MixtureModel, GapStatReport)> {
    let report = gap_statistic(data, cfg)?;
    let k = report.k_init.min(data.len());
    let mut rng = stream_rng(cfg.seed, u64::MAX);
    let km = best_kmeans(data, k, cfg.n_trials, cfg.max_iters, &mut rng)?;
    Ok((model_from_kmeans(data, &km)?, report))
}

/// Initial mixture with exactly `k` components.
pub fn kmeans_init(data: &WeightedDataset, k: usize, n_trials: usize, max_iters: usize, seed: u64) -> Result<MixtureModel> {
    let mut rng = stream_rng(seed, u64::MAX - 1);
    let km = best_kmeans(data, k, n_trials, max_iters, &mut rng)?;
    model_from_kmeans(data, &km)
}
