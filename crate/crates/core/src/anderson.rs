//! Regularized, restarted Anderson acceleration over flattened mixture
//! parameters, and the unguarded accelerated EM used as a counterexample.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::adaptive::{adaptive_m_step, penalized};
use crate::dataset::WeightedDataset;
use crate::em::{e_step_with_likelihood, m_step_standard, relative_change, FitConfig};
use crate::error::{GmmError, Result};
use crate::linalg::{canonicalize_factor, tri_len, unvech, vech};
use crate::model::{GaussianComponent, MixtureModel};
use crate::trace::{FitTrace, SolutionChoice};

/// What happens to the history on a restart.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RestartMode {
    #[default]
    ResetAll,
    KeepLast,
}

impl fmt::Display for RestartMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RestartMode::ResetAll => "reset",
            RestartMode::KeepLast => "keeplast",
        })
    }
}

impl FromStr for RestartMode {
    type Err = GmmError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "reset" | "reset-all" => Ok(RestartMode::ResetAll),
            "keeplast" | "keep-last" => Ok(RestartMode::KeepLast),
            other => Err(GmmError::InvalidInput(format!("unknown restart mode `{other}`"))),
        }
    }
}

/// Damping of the least-squares coefficients. At exponent `s` the
/// regularization is chosen so that `‖γ_λ‖² = δ ‖γ_0‖²` with
/// `δ = 1 / (1 + alpha_base^(s_max - s))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DampingSchedule {
    pub alpha_base: f64,
    pub s_min: i32,
    pub s_max: i32,
    /// Exponent of a fresh state; kills still reset to `s_min`.
    pub s_start: i32,
    /// Bypasses the schedule with a constant λ.
    pub fixed_lambda: Option<f64>,
}

impl Default for DampingSchedule {
    fn default() -> Self {
        Self { alpha_base: 2.0, s_min: 1, s_max: 15, s_start: 15, fixed_lambda: None }
    }
}

impl DampingSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha_base > 1.0) || self.s_min > self.s_max || !(self.s_min..=self.s_max).contains(&self.s_start) {
            return Err(GmmError::InvalidInput("damping schedule needs alpha_base > 1 and s_min <= s_start <= s_max".into()));
        }
        if let Some(l) = self.fixed_lambda {
            if !(l >= 0.0) {
                return Err(GmmError::InvalidInput("fixed lambda must be non-negative".into()));
            }
        }
        Ok(())
    }

    pub fn delta(&self, s: i32) -> f64 {
        1.0 / (1.0 + self.alpha_base.powi(self.s_max - s))
    }
}

/// Event fed to the damping schedule after each iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScheduleEvent {
    AcceptedAa,
    FellBackToEm,
    Restarted,
}

/// Mixture parameters laid out as `(ω_1..ω_K, μ_1..μ_K, vech(L_1)..vech(L_K))`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterVector {
    pub k: usize,
    pub dim: usize,
    pub flat: Vec<f64>,
}

impl ParameterVector {
    pub fn len_for(k: usize, dim: usize) -> usize {
        k * (1 + dim + tri_len(dim))
    }

    /// Flattens with every Cholesky factor carrying a positive diagonal.
    pub fn flatten(model: &MixtureModel) -> Self {
        let (k, d) = (model.len(), model.dim());
        let mut flat = Vec::with_capacity(Self::len_for(k, d));
        flat.extend(model.components().iter().map(|c| c.weight));
        for c in model.components() {
            flat.extend(c.mean.iter());
        }
        for c in model.components() {
            let mut l = c.chol.clone();
            canonicalize_factor(&mut l);
            flat.extend(vech(&l));
        }
        Self { k, dim: d, flat }
    }

    pub fn from_flat(k: usize, dim: usize, flat: Vec<f64>) -> Result<Self> {
        if flat.len() != Self::len_for(k, dim) {
            return Err(GmmError::DimensionMismatch { expected: Self::len_for(k, dim), found: flat.len() });
        }
        Ok(Self { k, dim, flat })
    }

    pub fn weights(&self) -> &[f64] {
        &self.flat[..self.k]
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.flat[..self.k]
    }

    /// Rebuilds the mixture, renormalizing the weights. Fails on a
    /// non-positive weight or a factor with a zero or non-finite diagonal.
    pub fn unflatten(&self) -> Result<MixtureModel> {
        Ok(self.unflatten_with_drift()?.0)
    }

    /// Like [`unflatten`](Self::unflatten), also returning `|Σω - 1|` before
    /// renormalization.
    pub fn unflatten_with_drift(&self) -> Result<(MixtureModel, f64)> {
        let (k, d) = (self.k, self.dim);
        let t = tri_len(d);
        let weights = self.weights();
        if let Some(i) = weights.iter().position(|w| !(*w > 0.0 && w.is_finite())) {
            return Err(GmmError::DegenerateComponent { index: i, reason: format!("weight {}", weights[i]) });
        }
        let sum: f64 = weights.iter().sum();
        let means = &self.flat[k..k + k * d];
        let factors = &self.flat[k + k * d..];
        let comps = (0..k)
            .map(|i| {
                let mean = DVector::from_column_slice(&means[i * d..(i + 1) * d]);
                let l = unvech(&factors[i * t..(i + 1) * t], d);
                GaussianComponent::from_cholesky(weights[i] / sum, mean, l).map_err(|e| match e {
                    GmmError::DegenerateComponent { reason, .. } => GmmError::DegenerateComponent { index: i, reason },
                    other => other,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((MixtureModel::new(comps)?, (sum - 1.0).abs()))
    }
}

/// `α_0 = γ_0`, `α_i = γ_i - γ_{i-1}`, `α_m = 1 - γ_{m-1}`.
pub fn gamma_to_alpha(gamma: &[f64]) -> Vec<f64> {
    let m = gamma.len();
    let mut alpha = Vec::with_capacity(m + 1);
    if m == 0 {
        alpha.push(1.0);
        return alpha;
    }
    alpha.push(gamma[0]);
    for i in 1..m {
        alpha.push(gamma[i] - gamma[i - 1]);
    }
    alpha.push(1.0 - gamma[m - 1]);
    alpha
}

#[derive(Debug, Clone, PartialEq)]
struct Entry {
    theta: Vec<f64>,
    image: Vec<f64>,
}

/// History of iterates and their fixed-point images, plus the damping state.
#[derive(Debug, Clone)]
pub struct AndersonState {
    history: VecDeque<Entry>,
    capacity: usize,
    pub restart_mode: RestartMode,
    pub schedule: DampingSchedule,
    pub lambda: f64,
    pub damping_exponent: i32,
    pub restarts: usize,
}

impl AndersonState {
    /// `capacity` is the most residual vectors kept; older ones drop out.
    pub fn new(capacity: usize, restart_mode: RestartMode, schedule: DampingSchedule) -> Self {
        Self {
            history: VecDeque::with_capacity(capacity + 1),
            capacity: capacity.max(1),
            restart_mode,
            schedule,
            lambda: schedule.fixed_lambda.unwrap_or(0.0),
            damping_exponent: schedule.s_start,
            restarts: 0,
        }
    }

    /// Number of stored residual vectors.
    pub fn len(&self) -> usize {
        self.history.len()
    }

    pub fn is_empty(&self) -> bool {
        self.history.is_empty()
    }

    /// Number of residual differences, `m`.
    pub fn depth(&self) -> usize {
        self.history.len().saturating_sub(1)
    }

    pub fn clear(&mut self) {
        self.history.clear();
    }

    /// Appends `θ` and `G(θ)`.
    pub fn push(&mut self, theta: &[f64], image: &[f64]) -> Result<()> {
        if theta.len() != image.len() {
            return Err(GmmError::DimensionMismatch { expected: theta.len(), found: image.len() });
        }
        if let Some(last) = self.history.back() {
            if last.theta.len() != theta.len() {
                return Err(GmmError::DimensionMismatch { expected: last.theta.len(), found: theta.len() });
            }
        }
        self.history.push_back(Entry { theta: theta.to_vec(), image: image.to_vec() });
        while self.history.len() > self.capacity {
            self.history.pop_front();
        }
        Ok(())
    }

    fn residual(e: &Entry) -> DVector<f64> {
        DVector::from_iterator(e.theta.len(), e.image.iter().zip(&e.theta).map(|(g, t)| g - t))
    }

    /// Columns `Δf_i = f_{i+1} - f_i`, oldest first, and the newest residual.
    fn system(&self) -> Result<(DMatrix<f64>, DVector<f64>)> {
        let m = self.depth();
        if m == 0 {
            return Err(GmmError::InvalidInput("Anderson history needs at least two entries".into()));
        }
        let p = self.history[0].theta.len();
        let res: Vec<DVector<f64>> = self.history.iter().map(Self::residual).collect();
        let mut f = DMatrix::zeros(p, m);
        for i in 0..m {
            f.set_column(i, &(&res[i + 1] - &res[i]));
        }
        Ok((f, res[m].clone()))
    }

    /// Solves `(ℱᵀℱ + λI) γ = ℱᵀ f_it` at the current `λ`.
    pub fn solve_regularized_ls(&self) -> Result<Vec<f64>> {
        let (f, r) = self.system()?;
        let gram = f.transpose() * &f;
        let rhs = f.transpose() * r;
        solve_shifted(&gram, &rhs, self.lambda)
    }

    /// Sets `λ` from the damping exponent for the current history.
    pub fn update_lambda(&mut self) -> Result<()> {
        if let Some(l) = self.schedule.fixed_lambda {
            self.lambda = l;
            return Ok(());
        }
        if self.depth() == 0 {
            return Ok(());
        }
        let (f, r) = self.system()?;
        let gram = f.transpose() * &f;
        let rhs = f.transpose() * r;
        self.lambda = lambda_for_ratio(&gram, &rhs, self.schedule.delta(self.damping_exponent));
        Ok(())
    }

    /// `λ` from the schedule, then the damped coefficients.
    pub fn damped_gamma(&mut self) -> Result<Vec<f64>> {
        self.update_lambda()?;
        self.solve_regularized_ls()
    }

    /// `G(θ_it) - Σ_i γ_i [G(θ_{i+1}) - G(θ_i)]` over the stored images.
    pub fn aa_iterate(&self, gamma: &[f64]) -> Result<Vec<f64>> {
        let m = self.depth();
        if gamma.len() != m || m == 0 {
            return Err(GmmError::DimensionMismatch { expected: m, found: gamma.len() });
        }
        let mut out = self.history[m].image.clone();
        for (i, g) in gamma.iter().enumerate() {
            let (a, b) = (&self.history[i + 1].image, &self.history[i].image);
            for ((o, x), y) in out.iter_mut().zip(a).zip(b) {
                *o -= g * (x - y);
            }
        }
        Ok(out)
    }

    /// `Σ_i α_i G(θ_i)` with `α` from [`gamma_to_alpha`].
    pub fn alpha_combination(&self, alpha: &[f64]) -> Result<Vec<f64>> {
        if alpha.len() != self.len() {
            return Err(GmmError::DimensionMismatch { expected: self.len(), found: alpha.len() });
        }
        let p = self.history[0].image.len();
        let mut out = vec![0.0; p];
        for (a, e) in alpha.iter().zip(&self.history) {
            for (o, g) in out.iter_mut().zip(&e.image) {
                *o += a * g;
            }
        }
        Ok(out)
    }

    /// Moves the damping exponent: up on an accepted step, down on a
    /// fallback, back to fully damped on a restart.
    pub fn lambda_schedule_update(&mut self, event: ScheduleEvent) {
        let s = &self.schedule;
        self.damping_exponent = match event {
            ScheduleEvent::AcceptedAa => (self.damping_exponent + 1).min(s.s_max),
            ScheduleEvent::FellBackToEm => (self.damping_exponent - 1).max(s.s_min),
            ScheduleEvent::Restarted => s.s_min,
        };
    }

    /// Clears the history, or keeps only the newest entry.
    pub fn restart(&mut self) {
        self.restarts += 1;
        match self.restart_mode {
            RestartMode::ResetAll => self.history.clear(),
            RestartMode::KeepLast => {
                let last = self.history.pop_back();
                self.history.clear();
                self.history.extend(last);
            }
        }
    }
}

fn solve_shifted(gram: &DMatrix<f64>, rhs: &DVector<f64>, lambda: f64) -> Result<Vec<f64>> {
    let m = gram.nrows();
    let attempt = |l: f64| (gram + DMatrix::identity(m, m) * l).cholesky().map(|c| c.solve(rhs));
    let sol = match attempt(lambda) {
        Some(s) if s.iter().all(|v| v.is_finite()) => s,
        _ => {
            let retry = lambda.max(1e-12 * gram.trace() / m as f64);
            match attempt(retry) {
                Some(s) if s.iter().all(|v| v.is_finite()) => s,
                _ => return Err(GmmError::NotPositiveDefinite),
            }
        }
    };
    Ok(sol.iter().copied().collect())
}

/// `‖γ_λ‖²` through the eigendecomposition of the Gram matrix.
fn gamma_norm_sq(eig: &SymmetricEigen<f64, nalgebra::Dyn>, c: &DVector<f64>, lambda: f64) -> f64 {
    let floor = eig.eigenvalues.amax() * 1e-14;
    eig.eigenvalues
        .iter()
        .zip(c.iter())
        .map(|(&d, &ci)| {
            let denom = d.max(0.0) + lambda;
            if denom <= floor {
                0.0
            } else {
                (ci / denom).powi(2)
            }
        })
        .sum()
}

/// `λ ≥ 0` with `‖γ_λ‖² = ratio · ‖γ_0‖²`, found by bisection.
pub fn lambda_for_ratio(gram: &DMatrix<f64>, rhs: &DVector<f64>, ratio: f64) -> f64 {
    if ratio >= 1.0 {
        return 0.0;
    }
    let eig = SymmetricEigen::new(gram.clone());
    let c = eig.eigenvectors.transpose() * rhs;
    let full = gamma_norm_sq(&eig, &c, 0.0);
    if !(full > 0.0) || !full.is_finite() {
        return 0.0;
    }
    let target = ratio * full;
    if target <= 0.0 {
        return f64::INFINITY;
    }
    let mut hi = (c.norm_squared() / target).sqrt().max(f64::MIN_POSITIVE);
    while gamma_norm_sq(&eig, &c, hi) > target {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if gamma_norm_sq(&eig, &c, mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn clamp_weights(v: &mut ParameterVector) {
    for w in v.weights_mut() {
        if !(*w >= 1e-12) {
            *w = 1e-12;
        }
    }
    let s: f64 = v.weights().iter().sum();
    v.weights_mut().iter_mut().for_each(|w| *w /= s);
}

/// Anderson-accelerated EM with no safeguards: λ = 0, no monotonicity check,
/// no periodic restart. A Cholesky failure ends the run with
/// `trace.failure` set and the last valid iterate returned.
pub fn fit_naive_aaem(data: &WeightedDataset, init: &MixtureModel, cfg: &FitConfig, adaptive: bool) -> Result<(MixtureModel, FitTrace)> {
    cfg.validate()?;
    let start = Instant::now();
    let n = data.total_weight();
    let objective = |ll: f64, m: &MixtureModel| if adaptive { penalized(ll, m, n) } else { Ok(ll) };
    let schedule = DampingSchedule { fixed_lambda: Some(0.0), ..cfg.damping };
    let mut state = AndersonState::new(cfg.m_aa_for(init.len()) + 1, RestartMode::ResetAll, schedule);
    let mut model = init.clone();
    let (mut resp, ll) = e_step_with_likelihood(data, &model, cfg.thread_count)?;
    let mut obj = objective(ll, &model)?;
    let mut trace = FitTrace::start(obj, model.len());
    for _ in 0..cfg.max_iters {
        let (image, kills) = if adaptive {
            let step = adaptive_m_step(data, &resp);
            match step {
                Ok(s) => (s.model, s.killed.len()),
                Err(e) => {
                    trace.failure = Some(e.to_string());
                    break;
                }
            }
        } else {
            match m_step_standard(data, &resp) {
                Ok(m) => (m, 0),
                Err(e) => {
                    trace.failure = Some(e.to_string());
                    break;
                }
            }
        };
        let (next, choice) = if kills > 0 {
            state.clear();
            (image, SolutionChoice::Em)
        } else {
            let g = ParameterVector::flatten(&image);
            state.push(&ParameterVector::flatten(&model).flat, &g.flat)?;
            if state.depth() == 0 {
                (image, SolutionChoice::Em)
            } else {
                let candidate = state.solve_regularized_ls().and_then(|gamma| state.aa_iterate(&gamma)).and_then(|flat| {
                    let mut v = ParameterVector::from_flat(g.k, g.dim, flat)?;
                    clamp_weights(&mut v);
                    v.unflatten()
                });
                match candidate {
                    Ok(m) => (m, SolutionChoice::Aa),
                    Err(e) => {
                        trace.failure = Some(e.to_string());
                        break;
                    }
                }
            }
        };
        let evaluated = e_step_with_likelihood(data, &next, cfg.thread_count).and_then(|(r, ll)| Ok((r, objective(ll, &next)?)));
        let (r, obj_new) = match evaluated {
            Ok(v) if v.1.is_finite() => v,
            Ok(_) => {
                trace.failure = Some("objective is not finite".into());
                break;
            }
            Err(e) => {
                trace.failure = Some(e.to_string());
                break;
            }
        };
        model = next;
        resp = r;
        trace.push(obj_new, model.len(), choice, kills, start.elapsed().as_secs_f64());
        let done = kills == 0 && relative_change(obj, obj_new) < cfg.tol;
        obj = obj_new;
        if done {
            trace.converged = true;
            break;
        }
    }
    trace.elapsed_s = start.elapsed().as_secs_f64();
    Ok((model, trace))
}
