//! Score functions of the penalized log-likelihood and the two monotonicity
//! tests used to accept or reject an accelerated iterate.

use nalgebra::{DMatrix, DVector};

use crate::dataset::WeightedDataset;
use crate::em::{ComponentStats, Responsibilities};
use crate::error::{GmmError, Result};
use crate::linalg::{chol_inverse, chol_solve};
use crate::model::{log_likelihood_threaded, mml_penalty, params_per_component, MixtureModel};

/// Which mean enters the covariance score built from M-step statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ScoreForm {
    /// Deviations about `μ^(it)`; the true gradient at the current iterate.
    #[default]
    Consistent,
    /// Deviations about the updated mean `μ^(it+1)`.
    Printed,
}

/// Gradient of the penalized log-likelihood, one block per parameter kind.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreVector {
    pub d_weights: Vec<f64>,
    pub d_means: Vec<DVector<f64>>,
    pub d_covs: Vec<DMatrix<f64>>,
}

fn check_k(resp: &Responsibilities, model: &MixtureModel) -> Result<()> {
    if resp.k() != model.len() {
        return Err(GmmError::DimensionMismatch { expected: model.len(), found: resp.k() });
    }
    Ok(())
}

/// `N_k/ω_k - T/(2ω_k) - N + TK/2`. Pass `t = 0` for the unpenalized score.
pub fn score_weights(resp: &Responsibilities, model: &MixtureModel, n: f64, t: f64) -> Result<Vec<f64>> {
    check_k(resp, model)?;
    weight_block(resp.col_sums(), model, n, t)
}

fn weight_block(col_sums: &[f64], model: &MixtureModel, n: f64, t: f64) -> Result<Vec<f64>> {
    let k = model.len() as f64;
    model
        .components()
        .iter()
        .zip(col_sums)
        .map(|(c, &nk)| {
            if !(c.weight > 0.0) {
                return Err(GmmError::Domain(format!("weight {} is not positive", c.weight)));
            }
            Ok(nk / c.weight - t / (2.0 * c.weight) - n + t * k / 2.0)
        })
        .collect()
}

fn weighted_deviation_sums(data: &WeightedDataset, resp: &Responsibilities, model: &MixtureModel) -> (Vec<DVector<f64>>, Vec<DMatrix<f64>>) {
    let d = data.dim();
    let mut firsts = vec![DVector::zeros(d); model.len()];
    let mut seconds = vec![DMatrix::zeros(d, d); model.len()];
    for j in 0..data.len() {
        let x = data.point_vector(j);
        for (k, c) in model.components().iter().enumerate() {
            let r = resp.get(j, k);
            let dev = &x - &c.mean;
            seconds[k] += &dev * dev.transpose() * r;
            firsts[k] += dev * r;
        }
    }
    (firsts, seconds)
}

/// `Σ_k⁻¹ Σ_j r_jk (x_j - μ_k)` for every component.
pub fn score_means(data: &WeightedDataset, resp: &Responsibilities, model: &MixtureModel) -> Result<Vec<DVector<f64>>> {
    check_k(resp, model)?;
    let (firsts, _) = weighted_deviation_sums(data, resp, model);
    Ok(model.components().iter().zip(firsts).map(|(c, f)| chol_solve(&c.chol, &f)).collect())
}

/// `Σ_k⁻¹ {Σ_j (r_jk/2)[-Σ_k + (x_j-μ_k)(x_j-μ_k)ᵀ]} Σ_k⁻¹` for every component.
pub fn score_covariances(data: &WeightedDataset, resp: &Responsibilities, model: &MixtureModel) -> Result<Vec<DMatrix<f64>>> {
    check_k(resp, model)?;
    let (_, seconds) = weighted_deviation_sums(data, resp, model);
    Ok(model
        .components()
        .iter()
        .zip(seconds)
        .zip(resp.col_sums())
        .map(|((c, s), &nk)| {
            let inv = chol_inverse(&c.chol);
            let inner = (s - &c.covariance * nk) * 0.5;
            sym(&inv * inner * &inv)
        })
        .collect())
}

/// Full score of the penalized log-likelihood at `model`.
pub fn score(data: &WeightedDataset, resp: &Responsibilities, model: &MixtureModel) -> Result<ScoreVector> {
    Ok(ScoreVector {
        d_weights: score_weights(resp, model, data.total_weight(), params_per_component(model.dim()))?,
        d_means: score_means(data, resp, model)?,
        d_covs: score_covariances(data, resp, model)?,
    })
}

/// Score at `model` rebuilt from the statistics of the M-step that used the
/// same responsibilities. Performs no pass over the data.
///
/// With `N_k`, `μ'_k` and `Σ'_k` from the M-step, `Σ_j r_jk (x_j-μ_k)` is
/// `N_k (μ'_k - μ_k)` and the scatter about `μ_k` is `N_k (Σ'_k + δδᵀ)`.
pub fn score_from_step_stats(model: &MixtureModel, stats: &[ComponentStats], n: f64, form: ScoreForm) -> Result<ScoreVector> {
    if stats.len() != model.len() {
        return Err(GmmError::DimensionMismatch { expected: model.len(), found: stats.len() });
    }
    let t = params_per_component(model.dim());
    let col_sums: Vec<f64> = stats.iter().map(|s| s.n).collect();
    let d_weights = weight_block(&col_sums, model, n, t)?;
    let mut d_means = Vec::with_capacity(stats.len());
    let mut d_covs = Vec::with_capacity(stats.len());
    for (c, s) in model.components().iter().zip(stats) {
        let delta = &s.mean - &c.mean;
        d_means.push(chol_solve(&c.chol, &(&delta * s.n)));
        let mut inner = &s.cov - &c.covariance;
        if form == ScoreForm::Consistent {
            inner += &delta * delta.transpose();
        }
        let inv = chol_inverse(&c.chol);
        d_covs.push(sym(&inv * (inner * (0.5 * s.n)) * &inv));
    }
    Ok(ScoreVector { d_weights, d_means, d_covs })
}

fn sym(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

/// `⟨score, θ_aa - θ_it⟩` with the covariance block taken in Σ-space.
pub fn taylor_increment(score: &ScoreVector, theta_aa: &MixtureModel, theta_it: &MixtureModel) -> Result<f64> {
    if theta_aa.len() != theta_it.len() || score.d_weights.len() != theta_it.len() {
        return Err(GmmError::DimensionMismatch { expected: theta_it.len(), found: theta_aa.len() });
    }
    if theta_aa.dim() != theta_it.dim() {
        return Err(GmmError::DimensionMismatch { expected: theta_it.dim(), found: theta_aa.dim() });
    }
    let mut acc = 0.0;
    for (k, (a, b)) in theta_aa.components().iter().zip(theta_it.components()).enumerate() {
        acc += score.d_weights[k] * (a.weight - b.weight);
        acc += score.d_means[k].dot(&(&a.mean - &b.mean));
        acc += score.d_covs[k].dot(&(&a.covariance - &b.covariance));
    }
    Ok(acc)
}

/// First-order test: accept when `⟨score, θ_aa - θ_it⟩ > -eps`.
pub fn taylor_monotonicity_test(score: &ScoreVector, theta_aa: &MixtureModel, theta_it: &MixtureModel, eps: f64) -> Result<bool> {
    Ok(taylor_increment(score, theta_aa, theta_it)? > -eps)
}

/// Objective of `model`: the penalized log-likelihood, or the plain one.
pub fn objective(data: &WeightedDataset, model: &MixtureModel, penalized: bool, threads: usize) -> Result<f64> {
    let ll = log_likelihood_threaded(data, model, threads)?;
    Ok(if penalized { ll + mml_penalty(model, data.total_weight())? } else { ll })
}

/// Exact test: accept when `PL(θ_aa) - PL(θ_it) > -eps`.
pub fn exact_monotonicity_test(data: &WeightedDataset, theta_aa: &MixtureModel, theta_it: &MixtureModel, eps: f64, penalized: bool) -> Result<bool> {
    let reference = objective(data, theta_it, penalized, 1)?;
    exact_test_against(data, theta_aa, reference, eps, penalized, 1)
}

/// Exact test against an already known objective of the current iterate.
pub fn exact_test_against(data: &WeightedDataset, theta_aa: &MixtureModel, reference: f64, eps: f64, penalized: bool, threads: usize) -> Result<bool> {
    let value = match objective(data, theta_aa, penalized, threads) {
        Ok(v) => v,
        Err(GmmError::Domain(_)) => return Ok(false),
        Err(e) => return Err(e),
    };
    Ok(value.is_finite() && value - reference > -eps)
}
