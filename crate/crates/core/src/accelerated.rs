//! Adaptive accelerated EM with positivity rollback and monotonicity control.

use std::time::Instant;

use crate::adaptive::{adaptive_m_step, finish_conservative, penalized};
use crate::anderson::{AndersonState, ParameterVector, ScheduleEvent};
use crate::dataset::WeightedDataset;
use crate::em::{e_step_with_likelihood, relative_change, FitConfig};
use crate::error::Result;
use crate::model::MixtureModel;
use crate::monotonicity::{exact_test_against, score_from_step_stats, taylor_monotonicity_test};
use crate::trace::{FitTrace, SolutionChoice};

/// Event counts of one A-AMEM run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AmemCounters {
    pub aa_accepted: usize,
    pub em_fallback_monotonicity: usize,
    pub em_fallback_positivity: usize,
    /// Iterations that took the EM step because the history was too short
    /// or a component was killed.
    pub plain_em: usize,
    /// Periodic plus kill-triggered restarts.
    pub restarts: usize,
    pub kills: usize,
    /// Candidates on which the Taylor and exact tests disagreed; only counted
    /// with `FitConfig::compare_tests`.
    pub test_disagreements: usize,
    /// Candidates evaluated by both tests.
    pub tests_compared: usize,
    /// Largest `|Σω - 1|` of an accelerated iterate before renormalization.
    pub max_weight_drift: f64,
}

impl AmemCounters {
    pub fn iterations(&self) -> usize {
        self.aa_accepted + self.em_fallback_monotonicity + self.em_fallback_positivity + self.plain_em
    }

    /// Share of iterations rolled back because of a non-positive weight.
    pub fn positivity_rate(&self) -> f64 {
        let it = self.iterations();
        if it == 0 {
            0.0
        } else {
            self.em_fallback_positivity as f64 / it as f64
        }
    }
}

#[derive(Debug, Clone)]
pub struct AmemOutcome {
    pub model: MixtureModel,
    pub trace: FitTrace,
    pub counters: AmemCounters,
}

/// One flag per iteration: 0 where the monotonicity test forced the EM
/// solution or for the final conservative step, 1 otherwise.
pub fn solution_choice_series(outcome: &AmemOutcome) -> Vec<u8> {
    outcome
        .trace
        .records
        .iter()
        .filter(|r| r.choice != SolutionChoice::Initial)
        .map(|r| match r.choice {
            SolutionChoice::EmFallbackMonotonicity | SolutionChoice::FinalConservativeEm => 0,
            _ => 1,
        })
        .collect()
}

/// Runs A-AMEM from `init`.
pub fn fit_a_amem(data: &WeightedDataset, init: &MixtureModel, cfg: &FitConfig) -> Result<AmemOutcome> {
    cfg.validate()?;
    let start = Instant::now();
    let n = data.total_weight();
    let threads = cfg.thread_count;
    let m_aa = cfg.m_aa_for(init.len());
    let mut state = AndersonState::new(m_aa, cfg.restart_mode, cfg.damping);
    let mut counters = AmemCounters::default();
    let mut model = init.clone();
    let (mut resp, ll) = e_step_with_likelihood(data, &model, threads)?;
    let mut pl = penalized(ll, &model, n)?;
    let mut trace = FitTrace::start(pl, model.len());

    for _ in 0..cfg.max_iters {
        let step = adaptive_m_step(data, &resp)?;
        let kills = step.killed.len();
        let (next, choice) = if kills > 0 {
            counters.kills += kills;
            counters.restarts += 1;
            state.clear();
            state.lambda_schedule_update(ScheduleEvent::Restarted);
            (step.model, SolutionChoice::Em)
        } else {
            let image = ParameterVector::flatten(&step.model);
            state.push(&ParameterVector::flatten(&model).flat, &image.flat)?;
            let out = if state.depth() == 0 {
                (step.model, SolutionChoice::Em)
            } else {
                let gamma = state.damped_gamma()?;
                let flat = state.aa_iterate(&gamma)?;
                let candidate = ParameterVector::from_flat(image.k, image.dim, flat)?;
                let rebuilt = if candidate.weights().iter().all(|w| *w > 0.0) { candidate.unflatten_with_drift().ok() } else { None };
                let out = match rebuilt {
                    None => (step.model, SolutionChoice::EmFallbackPositivity),
                    Some((aa, drift)) => {
                        counters.max_weight_drift = counters.max_weight_drift.max(drift);
                        let taylor = || -> Result<bool> {
                            let score = score_from_step_stats(&model, &step.stats, n, cfg.score_form)?;
                            taylor_monotonicity_test(&score, &aa, &model, cfg.eps_mono)
                        };
                        let exact = || exact_test_against(data, &aa, pl, cfg.eps_mono, true, threads);
                        let accept = if cfg.compare_tests {
                            let (a, b) = (taylor()?, exact()?);
                            counters.tests_compared += 1;
                            counters.test_disagreements += usize::from(a != b);
                            if cfg.use_taylor_test { a } else { b }
                        } else if cfg.use_taylor_test {
                            taylor()?
                        } else {
                            exact()?
                        };
                        if accept {
                            (aa, SolutionChoice::Aa)
                        } else {
                            (step.model, SolutionChoice::EmFallbackMonotonicity)
                        }
                    }
                };
                state.lambda_schedule_update(if out.1 == SolutionChoice::Aa { ScheduleEvent::AcceptedAa } else { ScheduleEvent::FellBackToEm });
                out
            };
            if state.len() >= m_aa {
                state.restart();
                counters.restarts += 1;
            }
            out
        };
        match choice {
            SolutionChoice::Aa => counters.aa_accepted += 1,
            SolutionChoice::EmFallbackPositivity => counters.em_fallback_positivity += 1,
            SolutionChoice::EmFallbackMonotonicity => counters.em_fallback_monotonicity += 1,
            _ => counters.plain_em += 1,
        }
        model = next;
        let (r, ll) = e_step_with_likelihood(data, &model, threads)?;
        resp = r;
        let pl_new = penalized(ll, &model, n)?;
        trace.push(pl_new, model.len(), choice, kills, start.elapsed().as_secs_f64());
        let done = kills == 0 && relative_change(pl, pl_new) < cfg.tol;
        pl = pl_new;
        if done {
            trace.converged = true;
            break;
        }
    }
    let model = finish_conservative(data, &model, &resp, &mut trace, cfg, start)?;
    trace.elapsed_s = start.elapsed().as_secs_f64();
    Ok(AmemOutcome { model, trace, counters })
}
