//! Adaptive EM: the penalized M-step that removes starved components.

use std::time::Instant;

use crate::dataset::WeightedDataset;
use crate::em::{component_from_stats, component_stats, e_step_with_likelihood, m_step_standard, relative_change, ComponentStats, FitConfig, Responsibilities};
use crate::error::{GmmError, Result};
use crate::model::{mml_penalty, params_per_component, MixtureModel};
use crate::trace::{FitTrace, SolutionChoice};

/// Result of one adaptive M-step.
#[derive(Debug, Clone)]
pub struct AdaptiveStepOutcome {
    pub model: MixtureModel,
    /// Indices, in the input numbering, of the components removed.
    pub killed: Vec<usize>,
    /// Input indices of the survivors, in output order.
    pub survivors: Vec<usize>,
    /// Moments of each survivor under the input responsibilities.
    pub stats: Vec<ComponentStats>,
}

/// Unnormalized weights `max((N_k - T/2) / (N - TK/2), 0)` using the K of
/// `col_sums` for every component.
pub fn adaptive_weights(col_sums: &[f64], n: f64, dim: usize) -> Result<Vec<f64>> {
    let t = params_per_component(dim);
    let denom = n - t * col_sums.len() as f64 / 2.0;
    if !(denom > 0.0) {
        // with a positive denominator the excesses N_k - T/2 sum to it, so
        // some component always survives; otherwise none can
        return Err(GmmError::AllKilled);
    }
    Ok(col_sums.iter().map(|&nk| ((nk - t / 2.0) / denom).max(0.0)).collect())
}

/// Adaptive M-step on the components described by `resp`.
pub fn adaptive_m_step(data: &WeightedDataset, resp: &Responsibilities) -> Result<AdaptiveStepOutcome> {
    if resp.n() != data.len() {
        return Err(GmmError::DimensionMismatch { expected: data.len(), found: resp.n() });
    }
    let raw = adaptive_weights(resp.col_sums(), data.total_weight(), data.dim())?;
    let (survivors, killed): (Vec<usize>, Vec<usize>) = (0..raw.len()).partition(|&k| raw[k] > 0.0);
    if survivors.is_empty() {
        return Err(GmmError::AllKilled);
    }
    let total: f64 = survivors.iter().map(|&k| raw[k]).sum();
    let stats = component_stats(data, resp, &survivors);
    let comps = survivors
        .iter()
        .zip(&stats)
        .map(|(&k, s)| component_from_stats(k, raw[k] / total, s))
        .collect::<Result<Vec<_>>>()?;
    Ok(AdaptiveStepOutcome { model: MixtureModel::new(comps)?, killed, survivors, stats })
}

/// One standard E+M step, which restores the moment identities.
pub fn final_conservative_step(data: &WeightedDataset, model: &MixtureModel) -> Result<MixtureModel> {
    let (resp, _) = e_step_with_likelihood(data, model, 1)?;
    m_step_standard(data, &resp)
}

pub(crate) fn penalized(ll: f64, model: &MixtureModel, n: f64) -> Result<f64> {
    Ok(ll + mml_penalty(model, n)?)
}

/// Applies the final conservative step and records it on `trace`.
pub(crate) fn finish_conservative(data: &WeightedDataset, model: &MixtureModel, resp: &Responsibilities, trace: &mut FitTrace, cfg: &FitConfig, start: Instant) -> Result<MixtureModel> {
    let out = m_step_standard(data, resp)?;
    let (_, ll) = e_step_with_likelihood(data, &out, cfg.thread_count)?;
    let pl = penalized(ll, &out, data.total_weight())?;
    trace.push(pl, out.len(), SolutionChoice::FinalConservativeEm, 0, start.elapsed().as_secs_f64());
    debug_assert_eq!(model.len(), out.len());
    Ok(out)
}

/// A-EM: E-step, adaptive M-step, penalized objective, until the relative
/// change of the objective drops below `tol`; then one conservative step.
pub fn fit_adaptive_em(data: &WeightedDataset, init: &MixtureModel, cfg: &FitConfig) -> Result<(MixtureModel, FitTrace)> {
    cfg.validate()?;
    let start = Instant::now();
    let n = data.total_weight();
    let mut model = init.clone();
    let (mut resp, ll) = e_step_with_likelihood(data, &model, cfg.thread_count)?;
    let mut pl = penalized(ll, &model, n)?;
    let mut trace = FitTrace::start(pl, model.len());
    for _ in 0..cfg.max_iters {
        let step = adaptive_m_step(data, &resp)?;
        model = step.model;
        let (r, ll) = e_step_with_likelihood(data, &model, cfg.thread_count)?;
        resp = r;
        let pl_new = penalized(ll, &model, n)?;
        trace.push(pl_new, model.len(), SolutionChoice::Em, step.killed.len(), start.elapsed().as_secs_f64());
        let done = step.killed.is_empty() && relative_change(pl, pl_new) < cfg.tol;
        pl = pl_new;
        if done {
            trace.converged = true;
            break;
        }
    }
    model = finish_conservative(data, &model, &resp, &mut trace, cfg, start)?;
    trace.elapsed_s = start.elapsed().as_secs_f64();
    Ok((model, trace))
}
