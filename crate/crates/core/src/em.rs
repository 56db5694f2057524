//! Standard EM: E-step, M-step and the fixed-K driver.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::anderson::{DampingSchedule, RestartMode};
use crate::dataset::WeightedDataset;
use crate::error::{GmmError, Result};
use crate::model::{self, log_sum_exp, DensityKernel, GaussianComponent, MixtureModel};
use crate::monotonicity::ScoreForm;
use crate::sweeps;
use crate::trace::{FitTrace, SolutionChoice};

/// Solver settings shared by every fitter.
#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    /// Relative change of the objective below which a run has converged.
    pub tol: f64,
    pub max_iters: usize,
    pub seed: u64,
    /// Monotonicity allowance ε on the penalized log-likelihood.
    pub eps_mono: f64,
    /// Allows `eps_mono` outside `[0.001, 0.01]`.
    pub eps_override: bool,
    /// Anderson history depth; `None` picks it from the initial K.
    pub m_aa: Option<usize>,
    pub restart_mode: RestartMode,
    pub use_taylor_test: bool,
    pub thread_count: usize,
    pub damping: DampingSchedule,
    pub score_form: ScoreForm,
    /// Evaluates both monotonicity tests on every candidate and counts
    /// disagreements. Costs one extra data pass per candidate.
    pub compare_tests: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iters: 50_000,
            seed: 0,
            eps_mono: 0.01,
            eps_override: false,
            m_aa: None,
            restart_mode: RestartMode::ResetAll,
            use_taylor_test: true,
            thread_count: 1,
            damping: DampingSchedule::default(),
            score_form: ScoreForm::Consistent,
            compare_tests: false,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(GmmError::InvalidInput("tol must be positive".into()));
        }
        if !self.eps_override && !(0.001..=0.01).contains(&self.eps_mono) {
            return Err(GmmError::InvalidInput(format!("eps_mono {} outside [0.001, 0.01]", self.eps_mono)));
        }
        if !(self.eps_mono >= 0.0) {
            return Err(GmmError::InvalidInput("eps_mono must be non-negative".into()));
        }
        if self.m_aa == Some(0) {
            return Err(GmmError::InvalidInput("m_aa must be at least 1".into()));
        }
        if self.max_iters == 0 {
            return Err(GmmError::InvalidInput("max_iters must be at least 1".into()));
        }
        self.damping.validate()
    }

    /// History depth: 5 for K_init ≤ 3, 10 above, unless set explicitly.
    pub fn m_aa_for(&self, k_init: usize) -> usize {
        self.m_aa.unwrap_or(if k_init <= 3 { 5 } else { 10 })
    }
}

pub(crate) fn relative_change(prev: f64, cur: f64) -> f64 {
    let diff = (cur - prev).abs();
    if cur == 0.0 {
        diff
    } else {
        diff / cur.abs()
    }
}

/// N x K posterior weights with their column sums.
#[derive(Debug, Clone, PartialEq)]
pub struct Responsibilities {
    k: usize,
    matrix: Vec<f64>,
    col_sums: Vec<f64>,
}

impl Responsibilities {
    /// Builds from a row-major N x K matrix, recomputing the column sums.
    pub fn from_matrix(k: usize, matrix: Vec<f64>) -> Result<Self> {
        if k == 0 || !matrix.len().is_multiple_of(k) {
            return Err(GmmError::InvalidInput("responsibility matrix shape".into()));
        }
        if matrix.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
            return Err(GmmError::InvalidInput("responsibilities must be finite and non-negative".into()));
        }
        let mut col_sums = vec![0.0; k];
        for row in matrix.chunks_exact(k) {
            for (s, r) in col_sums.iter_mut().zip(row) {
                *s += r;
            }
        }
        Ok(Self { k, matrix, col_sums })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n(&self) -> usize {
        self.matrix.len() / self.k
    }

    pub fn get(&self, j: usize, k: usize) -> f64 {
        self.matrix[j * self.k + k]
    }

    pub fn row(&self, j: usize) -> &[f64] {
        &self.matrix[j * self.k..(j + 1) * self.k]
    }

    /// `N_k = Σ_j r_jk`.
    pub fn col_sums(&self) -> &[f64] {
        &self.col_sums
    }
}

/// Responsibilities at `model`.
pub fn e_step(data: &WeightedDataset, model: &MixtureModel) -> Result<Responsibilities> {
    Ok(e_step_with_likelihood(data, model, 1)?.0)
}

/// E-step that also returns the log-likelihood at `model`, sharing the
/// density evaluations.
pub fn e_step_with_likelihood(data: &WeightedDataset, model: &MixtureModel, threads: usize) -> Result<(Responsibilities, f64)> {
    model::check_dims(data, model)?;
    sweeps::record();
    let k = model.len();
    let n = data.len();
    let kernel = DensityKernel::new(model);
    let weights = model.weights();
    let mut matrix = vec![0.0; n * k];

    let fill = |start: usize, rows: &mut [f64]| -> (Vec<f64>, f64) {
        let mut z = vec![0.0; model.dim()];
        let mut sums = vec![0.0; k];
        let mut ll = 0.0;
        for (offset, row) in rows.chunks_exact_mut(k).enumerate() {
            let j = start + offset;
            let zeta = data.weight(j);
            kernel.log_terms(data.point(j), row, &mut z);
            let lse = log_sum_exp(row);
            if lse.is_finite() {
                for v in row.iter_mut() {
                    *v = zeta * (*v - lse).exp();
                }
            } else {
                // every density underflowed: fall back to the prior weights
                for (v, w) in row.iter_mut().zip(&weights) {
                    *v = zeta * w;
                }
            }
            for (s, v) in sums.iter_mut().zip(row.iter()) {
                *s += v;
            }
            ll += zeta * lse;
        }
        (sums, ll)
    };

    let ranges = model::chunk_ranges(n, threads);
    let parts: Vec<(Vec<f64>, f64)> = if ranges.len() <= 1 {
        vec![fill(0, &mut matrix)]
    } else {
        let size = ranges[0].len();
        matrix.par_chunks_mut(size * k).enumerate().map(|(i, rows)| fill(i * size, rows)).collect()
    };
    let mut col_sums = vec![0.0; k];
    let mut ll = 0.0;
    for (s, l) in parts {
        for (a, b) in col_sums.iter_mut().zip(s) {
            *a += b;
        }
        ll += l;
    }
    Ok((Responsibilities { k, matrix, col_sums }, ll))
}

/// Weighted moments of one component under fixed responsibilities.
#[derive(Debug, Clone, PartialEq)]
pub struct ComponentStats {
    pub n: f64,
    pub mean: DVector<f64>,
    /// Centered scatter divided by `n`.
    pub cov: DMatrix<f64>,
}

/// Two-pass weighted mean and covariance for each component in `which`.
/// Components with zero mass come back with `n == 0` and zero moments.
pub fn component_stats(data: &WeightedDataset, resp: &Responsibilities, which: &[usize]) -> Vec<ComponentStats> {
    let d = data.dim();
    let m = which.len();
    let mut means = vec![0.0; m * d];
    for j in 0..data.len() {
        let x = data.point(j);
        let row = resp.row(j);
        for (slot, &k) in which.iter().enumerate() {
            let r = row[k];
            let acc = &mut means[slot * d..(slot + 1) * d];
            for i in 0..d {
                acc[i] += r * x[i];
            }
        }
    }
    let ns: Vec<f64> = which.iter().map(|&k| resp.col_sums()[k]).collect();
    for (slot, &n) in ns.iter().enumerate() {
        if n > 0.0 {
            means[slot * d..(slot + 1) * d].iter_mut().for_each(|v| *v /= n);
        }
    }
    let tri = d * (d + 1) / 2;
    let mut scatter = vec![0.0; m * tri];
    let mut diff = vec![0.0; d];
    for j in 0..data.len() {
        let x = data.point(j);
        let row = resp.row(j);
        for (slot, &k) in which.iter().enumerate() {
            let r = row[k];
            let mu = &means[slot * d..(slot + 1) * d];
            for i in 0..d {
                diff[i] = x[i] - mu[i];
            }
            let acc = &mut scatter[slot * tri..(slot + 1) * tri];
            let mut idx = 0;
            for a in 0..d {
                let ra = r * diff[a];
                for b in 0..=a {
                    acc[idx] += ra * diff[b];
                    idx += 1;
                }
            }
        }
    }
    (0..m)
        .map(|slot| {
            let n = ns[slot];
            let mut cov = DMatrix::zeros(d, d);
            if n > 0.0 {
                let acc = &scatter[slot * tri..(slot + 1) * tri];
                let mut idx = 0;
                for a in 0..d {
                    for b in 0..=a {
                        cov[(a, b)] = acc[idx] / n;
                        cov[(b, a)] = acc[idx] / n;
                        idx += 1;
                    }
                }
            }
            ComponentStats { n, mean: DVector::from_column_slice(&means[slot * d..(slot + 1) * d]), cov }
        })
        .collect()
}

pub(crate) fn component_from_stats(index: usize, weight: f64, stats: &ComponentStats) -> Result<GaussianComponent> {
    GaussianComponent::new(weight, stats.mean.clone(), stats.cov.clone()).map_err(|e| match e {
        GmmError::NotPositiveDefinite => GmmError::DegenerateComponent { index, reason: "covariance is not positive definite".into() },
        other => other,
    })
}

/// Closed-form M-step: `μ_k`, `Σ_k` and `ω_k = N_k / N`.
pub fn m_step_standard(data: &WeightedDataset, resp: &Responsibilities) -> Result<MixtureModel> {
    if resp.n() != data.len() {
        return Err(GmmError::DimensionMismatch { expected: data.len(), found: resp.n() });
    }
    let k = resp.k();
    for (idx, &n) in resp.col_sums().iter().enumerate() {
        if !(n > 0.0) {
            return Err(GmmError::DegenerateComponent { index: idx, reason: "no responsibility mass".into() });
        }
    }
    let all: Vec<usize> = (0..k).collect();
    let stats = component_stats(data, resp, &all);
    let total = data.total_weight();
    let comps = stats.iter().enumerate().map(|(idx, s)| component_from_stats(idx, s.n / total, s)).collect::<Result<Vec<_>>>()?;
    MixtureModel::new(comps)
}

/// Fixed-K EM until the relative log-likelihood change drops below `tol`.
pub fn fit_standard_em(data: &WeightedDataset, init: &MixtureModel, cfg: &FitConfig) -> Result<(MixtureModel, FitTrace)> {
    cfg.validate()?;
    let start = Instant::now();
    let threads = cfg.thread_count;
    let mut model = init.clone();
    let (mut resp, mut ll) = e_step_with_likelihood(data, &model, threads)?;
    let mut trace = FitTrace::start(ll, model.len());
    for _ in 0..cfg.max_iters {
        model = m_step_standard(data, &resp)?;
        let (r, ll_new) = e_step_with_likelihood(data, &model, threads)?;
        resp = r;
        trace.push(ll_new, model.len(), SolutionChoice::Em, 0, start.elapsed().as_secs_f64());
        let done = relative_change(ll, ll_new) < cfg.tol;
        ll = ll_new;
        if done {
            trace.converged = true;
            break;
        }
    }
    trace.elapsed_s = start.elapsed().as_secs_f64();
    Ok((model, trace))
}
