//! The three manufactured three-component datasets and a custom sampler.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::dataset::WeightedDataset;
use crate::error::{GmmError, Result};
use crate::model::{GaussianComponent, MixtureModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    /// Very well separated: means at (-3,-3,-3), 0, (3,3,3).
    Vws,
    /// Poorly separated: means at ±2 per axis.
    Ps,
    /// Very poorly separated: means at ±1 per axis.
    Vps,
    Custom,
}

impl Preset {
    pub const SYNTHETIC: [Preset; 3] = [Preset::Vws, Preset::Ps, Preset::Vps];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Vws => "vws",
            Preset::Ps => "ps",
            Preset::Vps => "vps",
            Preset::Custom => "custom",
        }
    }

    /// Generating mixture of a built-in preset.
    pub fn model(self) -> Option<MixtureModel> {
        let offset = match self {
            Preset::Vws => 3.0,
            Preset::Ps => 2.0,
            Preset::Vps => 1.0,
            Preset::Custom => return None,
        };
        let eye = DMatrix::<f64>::identity(3, 3);
        let comps = [(0.3, -offset, 1.0), (0.3, 0.0, 1.5), (0.4, offset, 0.75)]
            .into_iter()
            .map(|(w, m, s)| GaussianComponent::new(w, DVector::from_element(3, m), &eye * s).expect("preset covariances are SPD"))
            .collect();
        Some(MixtureModel::new(comps).expect("preset weights are valid"))
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = GmmError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "vws" => Ok(Preset::Vws),
            "ps" => Ok(Preset::Ps),
            "vps" => Ok(Preset::Vps),
            "custom" => Ok(Preset::Custom),
            other => Err(GmmError::InvalidInput(format!("unknown preset `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub preset: Preset,
    pub n: usize,
    pub seed: u64,
    /// Generating mixture when `preset` is `Custom`.
    pub custom: Option<MixtureModel>,
}

impl SyntheticSpec {
    pub fn new(preset: Preset, n: usize, seed: u64) -> Self {
        Self { preset, n, seed, custom: None }
    }
}

/// Draws `n` unit-weight points from the spec's mixture.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<WeightedDataset> {
    let model = match spec.preset {
        Preset::Custom => spec.custom.clone().ok_or_else(|| GmmError::InvalidInput("custom preset needs a model".into()))?,
        p => p.model().expect("built-in preset"),
    };
    if spec.n == 0 {
        return Err(GmmError::InvalidInput("n must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let d = model.dim();
    let weights = model.weights();
    let mut flat = Vec::with_capacity(spec.n * d);
    for _ in 0..spec.n {
        let mut u: f64 = rng.random();
        let mut k = weights.len() - 1;
        for (i, w) in weights.iter().enumerate() {
            if u < *w {
                k = i;
                break;
            }
            u -= w;
        }
        let c = &model.components()[k];
        let z = DVector::from_fn(d, |_, _| StandardNormal.sample(&mut rng));
        flat.extend((&c.mean + &c.chol * z).iter());
    }
    WeightedDataset::from_flat(d, flat, None)
}
