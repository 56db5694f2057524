//! EM with a line search along the EM step, the baseline accelerator.

use std::time::Instant;

use crate::anderson::ParameterVector;
use crate::dataset::WeightedDataset;
use crate::em::{e_step_with_likelihood, m_step_standard, relative_change, FitConfig};
use crate::error::{GmmError, Result};
use crate::model::{log_likelihood_threaded, MixtureModel};
use crate::trace::{FitTrace, SolutionChoice};

/// Upper end of the step-length interval.
pub const RHO_MAX: f64 = 4.0;
/// Likelihood evaluations allowed per line search.
pub const MAX_EVALUATIONS: usize = 8;

/// Outcome of one line search.
#[derive(Debug, Clone)]
pub struct LineSearchStep {
    pub rho_common: f64,
    /// Effective per-weight steps after clipping and renormalization.
    pub rho_weights: Vec<f64>,
    pub accepted: bool,
    /// The extrapolated model; equal to `theta_cur` when rejected.
    pub model: MixtureModel,
    pub log_likelihood: f64,
    pub evaluations: usize,
}

/// `θ_prev + ρ (θ_cur - θ_prev)` with Cholesky factors extrapolated and the
/// weights clipped to `[1e-12, 1]` then renormalized.
pub fn extrapolate(theta_prev: &MixtureModel, theta_cur: &MixtureModel, rho: f64) -> Result<MixtureModel> {
    if theta_prev.len() != theta_cur.len() || theta_prev.dim() != theta_cur.dim() {
        return Err(GmmError::DimensionMismatch { expected: theta_cur.len(), found: theta_prev.len() });
    }
    let a = ParameterVector::flatten(theta_prev);
    let b = ParameterVector::flatten(theta_cur);
    let flat = a.flat.iter().zip(&b.flat).map(|(x, y)| x + rho * (y - x)).collect();
    let mut v = ParameterVector::from_flat(b.k, b.dim, flat)?;
    for w in v.weights_mut() {
        *w = w.clamp(1e-12, 1.0);
    }
    v.unflatten()
}

/// Golden-section search for `ρ ∈ [0, RHO_MAX]` maximizing the
/// log-likelihood of [`extrapolate`]; accepted iff it beats `θ_cur` strictly.
pub fn els_step(data: &WeightedDataset, theta_prev: &MixtureModel, theta_cur: &MixtureModel) -> Result<LineSearchStep> {
    let l_cur = log_likelihood_threaded(data, theta_cur, 1)?;
    els_step_from(data, theta_prev, theta_cur, l_cur, 1)
}

/// [`els_step`] with the log-likelihood of `theta_cur` already known.
pub fn els_step_from(data: &WeightedDataset, theta_prev: &MixtureModel, theta_cur: &MixtureModel, l_cur: f64, threads: usize) -> Result<LineSearchStep> {
    let eval = |rho: f64| -> Result<(f64, Option<MixtureModel>)> {
        match extrapolate(theta_prev, theta_cur, rho) {
            Ok(m) => {
                let l = log_likelihood_threaded(data, &m, threads)?;
                Ok((if l.is_finite() { l } else { f64::NEG_INFINITY }, Some(m)))
            }
            Err(GmmError::DegenerateComponent { .. }) | Err(GmmError::NotPositiveDefinite) => Ok((f64::NEG_INFINITY, None)),
            Err(e) => Err(e),
        }
    };
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut lo, mut hi) = (0.0, RHO_MAX);
    let mut x1 = hi - phi * (hi - lo);
    let mut x2 = lo + phi * (hi - lo);
    let mut f1 = eval(x1)?;
    let mut f2 = eval(x2)?;
    let mut best = if f1.0 >= f2.0 { (x1, f1.clone()) } else { (x2, f2.clone()) };
    for _ in 2..MAX_EVALUATIONS {
        if f1.0 >= f2.0 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - phi * (hi - lo);
            f1 = eval(x1)?;
            if f1.0 > best.1 .0 {
                best = (x1, f1.clone());
            }
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + phi * (hi - lo);
            f2 = eval(x2)?;
            if f2.0 > best.1 .0 {
                best = (x2, f2.clone());
            }
        }
    }
    let evaluations = MAX_EVALUATIONS;
    let (rho, (l_best, model)) = best;
    match model {
        Some(m) if l_best > l_cur => {
            let rho_weights = theta_prev
                .weights()
                .iter()
                .zip(theta_cur.weights())
                .zip(m.weights())
                .map(|((&p, c), n)| if c != p { (n - p) / (c - p) } else { rho })
                .collect();
            Ok(LineSearchStep { rho_common: rho, rho_weights, accepted: true, model: m, log_likelihood: l_best, evaluations })
        }
        _ => Ok(LineSearchStep { rho_common: 1.0, rho_weights: vec![1.0; theta_cur.len()], accepted: false, model: theta_cur.clone(), log_likelihood: l_cur, evaluations }),
    }
}

/// Fixed-K EM where every EM step is followed by a line search along it.
/// An accepted step gets a fresh E-step at the extrapolated model.
pub fn fit_els_em(data: &WeightedDataset, init: &MixtureModel, cfg: &FitConfig) -> Result<(MixtureModel, FitTrace)> {
    cfg.validate()?;
    let start = Instant::now();
    let threads = cfg.thread_count;
    let mut model = init.clone();
    let (mut resp, mut ll) = e_step_with_likelihood(data, &model, threads)?;
    let mut trace = FitTrace::start(ll, model.len());
    for _ in 0..cfg.max_iters {
        let em = m_step_standard(data, &resp)?;
        let (r_em, l_em) = e_step_with_likelihood(data, &em, threads)?;
        let step = els_step_from(data, &model, &em, l_em, threads)?;
        let (choice, l_new) = if step.accepted {
            let (r, l) = e_step_with_likelihood(data, &step.model, threads)?;
            resp = r;
            model = step.model;
            (SolutionChoice::Aa, l)
        } else {
            resp = r_em;
            model = em;
            (SolutionChoice::Em, l_em)
        };
        trace.push(l_new, model.len(), choice, 0, start.elapsed().as_secs_f64());
        let done = relative_change(ll, l_new) < cfg.tol;
        ll = l_new;
        if done {
            trace.converged = true;
            break;
        }
    }
    trace.elapsed_s = start.elapsed().as_secs_f64();
    Ok((model, trace))
}
