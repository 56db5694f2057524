//! Mixture parameters, densities, and likelihoods.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::WeightedDataset;
use crate::error::{GmmError, Result};
use crate::linalg;
use crate::sweeps;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// One weighted Gaussian with its covariance and lower Cholesky factor.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianComponent {
    pub weight: f64,
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
    pub chol: DMatrix<f64>,
}

impl GaussianComponent {
    /// Factors `covariance`, applying the one-shot jitter if needed.
    pub fn new(weight: f64, mean: DVector<f64>, covariance: DMatrix<f64>) -> Result<Self> {
        Self::with_floor(weight, mean, covariance, 0.0)
    }

    /// Like [`Self::new`] but with a lower bound on the jitter scale, for
    /// covariances that may be exactly zero.
    pub fn with_floor(weight: f64, mean: DVector<f64>, covariance: DMatrix<f64>, floor: f64) -> Result<Self> {
        check_shape(&mean, &covariance)?;
        let (covariance, chol) = linalg::cholesky_with_jitter(&covariance, floor)?;
        Ok(Self { weight, mean, covariance, chol })
    }

    /// Builds a component from a (possibly sign-flipped) lower factor.
    pub fn from_cholesky(weight: f64, mean: DVector<f64>, mut chol: DMatrix<f64>) -> Result<Self> {
        check_shape(&mean, &chol)?;
        let lower = chol.lower_triangle();
        chol = lower;
        if (0..chol.nrows()).any(|i| !(chol[(i, i)].abs() > 0.0) || !chol[(i, i)].is_finite()) {
            return Err(GmmError::DegenerateComponent { index: 0, reason: "zero diagonal in Cholesky factor".into() });
        }
        linalg::canonicalize_factor(&mut chol);
        let covariance = &chol * chol.transpose();
        Ok(Self { weight, mean, covariance, chol })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// `ln |Σ|` from the factor diagonal.
    pub fn log_det(&self) -> f64 {
        2.0 * (0..self.dim()).map(|i| self.chol[(i, i)].ln()).sum::<f64>()
    }
}

fn check_shape(mean: &DVector<f64>, m: &DMatrix<f64>) -> Result<()> {
    let d = mean.len();
    if d == 0 {
        return Err(GmmError::InvalidInput("component has zero dimension".into()));
    }
    if m.nrows() != d || m.ncols() != d {
        return Err(GmmError::DimensionMismatch { expected: d, found: m.nrows() });
    }
    if mean.iter().any(|v| !v.is_finite()) {
        return Err(GmmError::InvalidInput("non-finite mean".into()));
    }
    Ok(())
}

/// A convex combination of K ≥ 1 Gaussians.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureModel {
    dim: usize,
    components: Vec<GaussianComponent>,
}

impl MixtureModel {
    /// Validates the components and rescales the weights to sum to one.
    pub fn new(mut components: Vec<GaussianComponent>) -> Result<Self> {
        let dim = components.first().ok_or_else(|| GmmError::InvalidInput("mixture needs at least one component".into()))?.dim();
        for c in &components {
            if c.dim() != dim {
                return Err(GmmError::DimensionMismatch { expected: dim, found: c.dim() });
            }
            if !(c.weight.is_finite() && c.weight > 0.0) {
                return Err(GmmError::Domain(format!("component weight {} is not positive", c.weight)));
            }
        }
        let total: f64 = components.iter().map(|c| c.weight).sum();
        for c in &mut components {
            c.weight /= total;
        }
        Ok(Self { dim, components })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of components K.
    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn components(&self) -> &[GaussianComponent] {
        &self.components
    }

    pub fn weights(&self) -> Vec<f64> {
        self.components.iter().map(|c| c.weight).collect()
    }

    pub fn into_components(self) -> Vec<GaussianComponent> {
        self.components
    }

    pub fn read_json(text: &str) -> Result<Self> {
        let raw: ModelJson = serde_json::from_str(text)?;
        raw.into_model()
    }

    pub fn read_json_path(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&ModelJson::from(self)).expect("model serializes")
    }

    pub fn write_json_path(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelJson {
    dim: usize,
    components: Vec<ComponentJson>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ComponentJson {
    weight: f64,
    mean: Vec<f64>,
    covariance: Vec<Vec<f64>>,
}

impl ModelJson {
    fn into_model(self) -> Result<MixtureModel> {
        let d = self.dim;
        if d == 0 {
            return Err(GmmError::Parse("dim must be positive".into()));
        }
        if self.components.is_empty() {
            return Err(GmmError::Parse("no components".into()));
        }
        let total: f64 = self.components.iter().map(|c| c.weight).sum();
        if !((total - 1.0).abs() <= 1e-6) {
            return Err(GmmError::Parse(format!("component weights sum to {total}, expected 1")));
        }
        let mut comps = Vec::with_capacity(self.components.len());
        for (k, c) in self.components.into_iter().enumerate() {
            if c.mean.len() != d || c.covariance.len() != d || c.covariance.iter().any(|r| r.len() != d) {
                return Err(GmmError::Parse(format!("component {k} does not match dim {d}")));
            }
            if !(c.weight.is_finite() && c.weight > 0.0) {
                return Err(GmmError::Parse(format!("component {k} has non-positive weight")));
            }
            let cov = DMatrix::from_fn(d, d, |i, j| c.covariance[i][j]);
            if (0..d).any(|i| (0..d).any(|j| (cov[(i, j)] - cov[(j, i)]).abs() > 1e-9 * (1.0 + cov[(i, j)].abs()))) {
                return Err(GmmError::Parse(format!("component {k} covariance is not symmetric")));
            }
            let comp = GaussianComponent::new(c.weight, DVector::from_vec(c.mean), cov)
                .map_err(|e| GmmError::Parse(format!("component {k}: {e}")))?;
            comps.push(comp);
        }
        MixtureModel::new(comps)
    }
}

impl From<&MixtureModel> for ModelJson {
    fn from(m: &MixtureModel) -> Self {
        ModelJson {
            dim: m.dim,
            components: m
                .components
                .iter()
                .map(|c| ComponentJson {
                    weight: c.weight,
                    mean: c.mean.iter().copied().collect(),
                    covariance: (0..m.dim).map(|i| (0..m.dim).map(|j| c.covariance[(i, j)]).collect()).collect(),
                })
                .collect(),
        }
    }
}

/// Flattened per-component constants for the per-sample density loop.
pub(crate) struct DensityKernel {
    dim: usize,
    k: usize,
    means: Vec<f64>,
    /// Row-major packed lower factors.
    factors: Vec<f64>,
    /// `ln ω_k - D/2 ln 2π - ½ ln|Σ_k|`.
    offsets: Vec<f64>,
}

impl DensityKernel {
    pub(crate) fn new(model: &MixtureModel) -> Self {
        let dim = model.dim();
        let k = model.len();
        let tri = linalg::tri_len(dim);
        let mut means = Vec::with_capacity(k * dim);
        let mut factors = Vec::with_capacity(k * tri);
        let mut offsets = Vec::with_capacity(k);
        for c in model.components() {
            means.extend(c.mean.iter());
            for i in 0..dim {
                for j in 0..=i {
                    factors.push(c.chol[(i, j)]);
                }
            }
            offsets.push(c.weight.ln() - 0.5 * dim as f64 * LN_2PI - 0.5 * c.log_det());
        }
        Self { dim, k, means, factors, offsets }
    }

    /// Writes `ln ω_k + ln G_k(x)` for every component into `out`.
    #[inline]
    pub(crate) fn log_terms(&self, x: &[f64], out: &mut [f64], z: &mut [f64]) {
        let d = self.dim;
        let tri = self.factors.len() / self.k.max(1);
        for k in 0..self.k {
            let mu = &self.means[k * d..(k + 1) * d];
            let l = &self.factors[k * tri..(k + 1) * tri];
            let mut q = 0.0;
            let mut row = 0;
            for i in 0..d {
                let mut s = x[i] - mu[i];
                for j in 0..i {
                    s -= l[row + j] * z[j];
                }
                let zi = s / l[row + i];
                z[i] = zi;
                q += zi * zi;
                row += i + 1;
            }
            out[k] = self.offsets[k] - 0.5 * q;
        }
    }
}

/// `ln Σ exp(v_i)` with the maximum subtracted first.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

fn check_point(x: &[f64], dim: usize) -> Result<()> {
    if x.len() != dim {
        return Err(GmmError::DimensionMismatch { expected: dim, found: x.len() });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(GmmError::InvalidInput("non-finite coordinate".into()));
    }
    Ok(())
}

/// `ln G(x; μ, Σ)` through the Cholesky factor.
pub fn gaussian_log_density(x: &[f64], comp: &GaussianComponent) -> Result<f64> {
    let d = comp.dim();
    check_point(x, d)?;
    let diff = DVector::from_column_slice(x) - &comp.mean;
    let z = linalg::forward_solve(&comp.chol, &diff);
    Ok(-0.5 * d as f64 * LN_2PI - 0.5 * comp.log_det() - 0.5 * z.norm_squared())
}

/// `ln Σ_k ω_k G_k(x)`.
pub fn mixture_log_density(x: &[f64], model: &MixtureModel) -> Result<f64> {
    check_point(x, model.dim())?;
    let kernel = DensityKernel::new(model);
    let mut terms = vec![0.0; model.len()];
    let mut z = vec![0.0; model.dim()];
    kernel.log_terms(x, &mut terms, &mut z);
    Ok(log_sum_exp(&terms))
}

pub(crate) fn check_dims(data: &WeightedDataset, model: &MixtureModel) -> Result<()> {
    if data.dim() != model.dim() {
        return Err(GmmError::DimensionMismatch { expected: model.dim(), found: data.dim() });
    }
    Ok(())
}

/// Splits `0..n` into at most `threads` contiguous ranges. The split depends
/// only on `n` and `threads`, so reductions over it are reproducible.
pub(crate) fn chunk_ranges(n: usize, threads: usize) -> Vec<std::ops::Range<usize>> {
    let t = threads.max(1).min(n.max(1));
    let size = n.div_ceil(t);
    (0..t).map(|i| (i * size).min(n)..((i + 1) * size).min(n)).filter(|r| !r.is_empty()).collect()
}

/// `Σ_j ζ_j ln f(x_j)`.
pub fn log_likelihood(data: &WeightedDataset, model: &MixtureModel) -> Result<f64> {
    log_likelihood_threaded(data, model, 1)
}

pub fn log_likelihood_threaded(data: &WeightedDataset, model: &MixtureModel, threads: usize) -> Result<f64> {
    check_dims(data, model)?;
    sweeps::record();
    let kernel = DensityKernel::new(model);
    let partial = |range: std::ops::Range<usize>| {
        let mut terms = vec![0.0; model.len()];
        let mut z = vec![0.0; model.dim()];
        let mut acc = 0.0;
        for j in range {
            kernel.log_terms(data.point(j), &mut terms, &mut z);
            acc += data.weight(j) * log_sum_exp(&terms);
        }
        acc
    };
    let ranges = chunk_ranges(data.len(), threads);
    let total = if ranges.len() <= 1 {
        ranges.into_iter().map(partial).sum()
    } else {
        let parts: Vec<f64> = ranges.into_par_iter().map(partial).collect();
        parts.into_iter().sum()
    };
    Ok(total)
}

/// `T = D(D+3)/2`, the free parameters of one Gaussian.
pub fn params_per_component(dim: usize) -> f64 {
    (dim * (dim + 3)) as f64 / 2.0
}

/// Total free parameters `d = K(T+1) - 1`.
pub fn total_params(k: usize, dim: usize) -> f64 {
    k as f64 * (params_per_component(dim) + 1.0) - 1.0
}

/// `-(d/2) ln N - (T/2) Σ ln ω_k`.
pub fn mml_penalty(model: &MixtureModel, n: f64) -> Result<f64> {
    let t = params_per_component(model.dim());
    let mut log_w = 0.0;
    for c in model.components() {
        if !(c.weight > 0.0) {
            return Err(GmmError::Domain(format!("weight {} is not positive", c.weight)));
        }
        log_w += c.weight.ln();
    }
    Ok(-0.5 * total_params(model.len(), model.dim()) * n.ln() - 0.5 * t * log_w)
}

/// Log-likelihood with the minimum-message-length penalty.
pub fn penalized_log_likelihood(data: &WeightedDataset, model: &MixtureModel) -> Result<f64> {
    let pen = mml_penalty(model, data.total_weight())?;
    Ok(log_likelihood(data, model)? + pen)
}

/// Zeroth, first and second raw moments.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentSummary {
    pub zeroth: f64,
    pub first: DVector<f64>,
    pub second: DMatrix<f64>,
}

impl MomentSummary {
    pub fn scaled(&self, s: f64) -> Self {
        Self { zeroth: self.zeroth * s, first: &self.first * s, second: &self.second * s }
    }

    /// Largest of the relative differences of the three moments, each taken
    /// against the norm of `reference`.
    pub fn relative_difference(&self, reference: &MomentSummary) -> (f64, f64, f64) {
        let rel = |a: f64, b: f64| if b == 0.0 { a.abs() } else { a / b };
        (
            rel((self.zeroth - reference.zeroth).abs(), reference.zeroth.abs()),
            rel((&self.first - &reference.first).norm(), reference.first.norm()),
            rel(linalg::frobenius(&(&self.second - &reference.second)), linalg::frobenius(&reference.second)),
        )
    }
}

/// `(Σ ζ_j, Σ ζ_j x_j, Σ ζ_j x_j x_jᵀ)`.
pub fn data_moments(data: &WeightedDataset) -> MomentSummary {
    let d = data.dim();
    let mut zeroth = 0.0;
    let mut first = DVector::zeros(d);
    let mut second = DMatrix::zeros(d, d);
    for (x, w) in data.iter() {
        zeroth += w;
        for i in 0..d {
            first[i] += w * x[i];
            for j in 0..d {
                second[(i, j)] += w * x[i] * x[j];
            }
        }
    }
    MomentSummary { zeroth, first, second }
}

/// `Σ_k ω_k (1, μ_k, Σ_k + μ_k μ_kᵀ)`.
pub fn mixture_moments(model: &MixtureModel) -> MomentSummary {
    let d = model.dim();
    let mut out = MomentSummary { zeroth: 0.0, first: DVector::zeros(d), second: DMatrix::zeros(d, d) };
    for c in model.components() {
        out.zeroth += c.weight;
        out.first += &c.mean * c.weight;
        out.second += (&c.covariance + &c.mean * c.mean.transpose()) * c.weight;
    }
    out
}
