//! Paired solver runs and their reduction factors.

use std::fmt;
use std::fmt::Write as _;
use std::io::Write;
use std::path::PathBuf;
use std::str::FromStr;

use rayon::prelude::*;

use crate::accelerated::{fit_a_amem, AmemCounters};
use crate::adaptive::fit_adaptive_em;
use crate::anderson::fit_naive_aaem;
use crate::dataset::WeightedDataset;
use crate::em::{fit_standard_em, FitConfig};
use crate::els::fit_els_em;
use crate::error::{GmmError, Result};
use crate::init::{gs_kmeans_init, kmeans_init, GapStatConfig};
use crate::model::MixtureModel;
use crate::synthetic::{generate_synthetic, Preset, SyntheticSpec};
use crate::trace::FitTrace;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Algorithm {
    /// Standard EM at fixed K.
    Em,
    /// EM with the line-search extrapolation step.
    Els,
    /// Unguarded Anderson acceleration of standard EM.
    NaiveAaem,
    /// Adaptive EM with component annihilation.
    AdaptiveEm,
    AAmem,
    /// Unguarded Anderson acceleration of adaptive EM.
    NaiveAdaptiveAaem,
}

impl Algorithm {
    pub const ALL: [Algorithm; 6] =
        [Algorithm::Em, Algorithm::Els, Algorithm::NaiveAaem, Algorithm::AdaptiveEm, Algorithm::AAmem, Algorithm::NaiveAdaptiveAaem];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Em => "em",
            Algorithm::Els => "els",
            Algorithm::NaiveAaem => "naive",
            Algorithm::AdaptiveEm => "aem",
            Algorithm::AAmem => "aamem",
            Algorithm::NaiveAdaptiveAaem => "naive-adaptive",
        }
    }

    /// The non-accelerated solver an accelerated one is compared against.
    pub fn baseline(self) -> Option<Algorithm> {
        match self {
            Algorithm::Els | Algorithm::NaiveAaem => Some(Algorithm::Em),
            Algorithm::AAmem | Algorithm::NaiveAdaptiveAaem => Some(Algorithm::AdaptiveEm),
            Algorithm::Em | Algorithm::AdaptiveEm => None,
        }
    }

    pub fn is_adaptive(self) -> bool {
        matches!(self, Algorithm::AdaptiveEm | Algorithm::AAmem | Algorithm::NaiveAdaptiveAaem)
    }

    /// Parses a comma-separated list such as `aem,aamem`.
    pub fn parse_list(s: &str) -> Result<Vec<Algorithm>> {
        let mut out: Vec<Algorithm> = Vec::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let a = part.parse()?;
            if !out.contains(&a) {
                out.push(a);
            }
        }
        if out.is_empty() {
            return Err(GmmError::InvalidInput("empty algorithm list".into()));
        }
        Ok(out)
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = GmmError;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "em" => Algorithm::Em,
            "els" | "els-em" => Algorithm::Els,
            "naive" | "naive-aaem" => Algorithm::NaiveAaem,
            "aem" | "a-em" => Algorithm::AdaptiveEm,
            "aamem" | "a-amem" => Algorithm::AAmem,
            "naive-adaptive" => Algorithm::NaiveAdaptiveAaem,
            other => return Err(GmmError::InvalidInput(format!("unknown algorithm `{other}`"))),
        })
    }
}

/// Result of one solver run.
#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub algorithm: Algorithm,
    pub model: MixtureModel,
    pub trace: FitTrace,
    /// Only for A-AMEM.
    pub counters: Option<AmemCounters>,
}

/// Runs `algorithm` from `init`.
pub fn run_fit(algorithm: Algorithm, data: &WeightedDataset, init: &MixtureModel, cfg: &FitConfig) -> Result<FitOutcome> {
    let (model, trace, counters) = match algorithm {
        Algorithm::Em => {
            let (m, t) = fit_standard_em(data, init, cfg)?;
            (m, t, None)
        }
        Algorithm::Els => {
            let (m, t) = fit_els_em(data, init, cfg)?;
            (m, t, None)
        }
        Algorithm::NaiveAaem | Algorithm::NaiveAdaptiveAaem => {
            let (m, t) = fit_naive_aaem(data, init, cfg, algorithm.is_adaptive())?;
            (m, t, None)
        }
        Algorithm::AdaptiveEm => {
            let (m, t) = fit_adaptive_em(data, init, cfg)?;
            (m, t, None)
        }
        Algorithm::AAmem => {
            let o = fit_a_amem(data, init, cfg)?;
            (o.model, o.trace, Some(o.counters))
        }
    };
    Ok(FitOutcome { algorithm, model, trace, counters })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReductionFactors {
    pub irf: f64,
    pub trf: f64,
    /// `irf / trf`, the relative cost of one accelerated iteration.
    pub ratio: f64,
}

/// IRF and TRF of `accelerated` against `baseline`.
pub fn compute_reduction_factors(baseline: &FitTrace, accelerated: &FitTrace) -> Result<ReductionFactors> {
    if accelerated.iterations == 0 || !(accelerated.elapsed_s > 0.0) {
        return Err(GmmError::Measurement(format!(
            "accelerated run has {} iterations and {} s",
            accelerated.iterations, accelerated.elapsed_s
        )));
    }
    if !(baseline.elapsed_s > 0.0) {
        return Err(GmmError::Measurement("baseline run has zero duration".into()));
    }
    let irf = baseline.iterations as f64 / accelerated.iterations as f64;
    let trf = baseline.elapsed_s / accelerated.elapsed_s;
    Ok(ReductionFactors { irf, trf, ratio: irf / trf })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InitMethod {
    /// Best of several k-means++ / Lloyd runs at the given K.
    #[default]
    KMeans,
    /// Gap statistic picks K, then k-means at that K.
    GsKMeans,
}

impl FromStr for InitMethod {
    type Err = GmmError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "kmeans" => Ok(InitMethod::KMeans),
            "gs-kmeans" | "gs" => Ok(InitMethod::GsKMeans),
            other => Err(GmmError::InvalidInput(format!("unknown init method `{other}`"))),
        }
    }
}

/// Initial mixture for a fit.
pub fn initial_model(data: &WeightedDataset, method: InitMethod, k: usize, seed: u64) -> Result<MixtureModel> {
    let gs = GapStatConfig { seed, ..GapStatConfig::default() };
    match method {
        InitMethod::KMeans => kmeans_init(data, k, gs.n_trials, gs.max_iters, seed),
        InitMethod::GsKMeans => gs_kmeans_init(data, &gs).map(|(m, _)| m),
    }
}

#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub presets: Vec<Preset>,
    pub k_inits: Vec<usize>,
    pub seeds: Vec<u64>,
    pub n: usize,
    pub algorithms: Vec<Algorithm>,
    pub init: InitMethod,
    pub fit: FitConfig,
    /// Runs cells on the rayon pool. Wall-clock factors are noisier.
    pub parallel_cells: bool,
    /// Writes `<preset>_k<K>_s<seed>_<algo>.csv` traces here when set.
    pub trace_dir: Option<PathBuf>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            presets: Preset::SYNTHETIC.to_vec(),
            k_inits: vec![3],
            seeds: (0..5).collect(),
            n: 1000,
            algorithms: vec![Algorithm::AdaptiveEm, Algorithm::AAmem],
            init: InitMethod::KMeans,
            fit: FitConfig::default(),
            parallel_cells: false,
            trace_dir: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BenchRow {
    pub dataset: String,
    pub k_init: usize,
    pub seed: u64,
    pub algorithm: Algorithm,
    pub baseline: Option<Algorithm>,
    pub iterations: usize,
    pub elapsed_s: f64,
    pub final_objective: f64,
    pub final_k: usize,
    pub converged: bool,
    pub failure: Option<String>,
    pub baseline_iterations: Option<usize>,
    pub baseline_objective: Option<f64>,
    pub baseline_k: Option<usize>,
    pub factors: Option<ReductionFactors>,
    pub counters: Option<AmemCounters>,
}

#[derive(Debug, Clone, Default)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
}

/// Median of a slice; `NaN` when empty.
pub fn median(values: &[f64]) -> f64 {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| !x.is_nan()).collect();
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Median reduction factors of one (dataset, K_init, algorithm) group.
#[derive(Debug, Clone)]
pub struct GroupSummary {
    pub dataset: String,
    pub k_init: usize,
    pub algorithm: Algorithm,
    pub runs: usize,
    pub irf: f64,
    pub trf: f64,
    pub ratio: f64,
}

impl BenchReport {
    pub fn summaries(&self) -> Vec<GroupSummary> {
        let mut keys: Vec<(String, usize, Algorithm)> = Vec::new();
        for r in &self.rows {
            let key = (r.dataset.clone(), r.k_init, r.algorithm);
            if !keys.contains(&key) {
                keys.push(key);
            }
        }
        keys.into_iter()
            .map(|(dataset, k_init, algorithm)| {
                let rows: Vec<&BenchRow> =
                    self.rows.iter().filter(|r| r.dataset == dataset && r.k_init == k_init && r.algorithm == algorithm).collect();
                let pick = |f: fn(&ReductionFactors) -> f64| median(&rows.iter().filter_map(|r| r.factors.as_ref().map(f)).collect::<Vec<_>>());
                GroupSummary {
                    dataset,
                    k_init,
                    algorithm,
                    runs: rows.len(),
                    irf: pick(|f| f.irf),
                    trf: pick(|f| f.trf),
                    ratio: pick(|f| f.ratio),
                }
            })
            .collect()
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record([
            "dataset",
            "k_init",
            "seed",
            "algorithm",
            "baseline",
            "iterations",
            "baseline_iterations",
            "elapsed_s",
            "final_objective",
            "baseline_objective",
            "final_k",
            "baseline_k",
            "converged",
            "irf",
            "trf",
            "irf_over_trf",
            "aa_accepted",
            "fallback_monotonicity",
            "fallback_positivity",
            "failure",
        ])?;
        let opt = |v: Option<String>| v.unwrap_or_default();
        for r in &self.rows {
            let c = r.counters.as_ref();
            wtr.write_record([
                r.dataset.clone(),
                r.k_init.to_string(),
                r.seed.to_string(),
                r.algorithm.to_string(),
                opt(r.baseline.map(|b| b.to_string())),
                r.iterations.to_string(),
                opt(r.baseline_iterations.map(|v| v.to_string())),
                format!("{:.6e}", r.elapsed_s),
                format!("{:.16e}", r.final_objective),
                opt(r.baseline_objective.map(|v| format!("{v:.16e}"))),
                r.final_k.to_string(),
                opt(r.baseline_k.map(|v| v.to_string())),
                r.converged.to_string(),
                opt(r.factors.map(|f| format!("{:.6}", f.irf))),
                opt(r.factors.map(|f| format!("{:.6}", f.trf))),
                opt(r.factors.map(|f| format!("{:.6}", f.ratio))),
                opt(c.map(|c| c.aa_accepted.to_string())),
                opt(c.map(|c| c.em_fallback_monotonicity.to_string())),
                opt(c.map(|c| c.em_fallback_positivity.to_string())),
                opt(r.failure.clone()),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }

    /// Plain-text table of per-group medians.
    pub fn to_text(&self) -> String {
        let mut out = String::from("# wall-clock per fit, initialization excluded\n");
        let _ = writeln!(out, "{:<8} {:>6} {:<15} {:>4} {:>9} {:>9} {:>9}", "dataset", "K_init", "algorithm", "runs", "IRF", "TRF", "IRF/TRF");
        for s in self.summaries() {
            let _ = writeln!(
                out,
                "{:<8} {:>6} {:<15} {:>4} {:>9.2} {:>9.2} {:>9.2}",
                s.dataset, s.k_init, s.algorithm.name(), s.runs, s.irf, s.trf, s.ratio
            );
        }
        out
    }
}

/// Algorithms that need their own row: everything that has a baseline, plus
/// requested baselines nobody else uses.
fn row_algorithms(requested: &[Algorithm]) -> Vec<Algorithm> {
    requested
        .iter()
        .copied()
        .filter(|a| a.baseline().is_some() || !requested.iter().any(|b| b.baseline() == Some(*a)))
        .collect()
}

/// Runs every requested algorithm on one dataset from one shared initial model.
pub fn bench_cell(
    dataset: &str,
    data: &WeightedDataset,
    init: &MixtureModel,
    k_init: usize,
    seed: u64,
    algorithms: &[Algorithm],
    cfg: &FitConfig,
) -> Result<(Vec<BenchRow>, Vec<FitOutcome>)> {
    let mut needed: Vec<Algorithm> = Vec::new();
    for a in algorithms {
        if let Some(b) = a.baseline() {
            if !needed.contains(&b) {
                needed.push(b);
            }
        }
        if !needed.contains(a) {
            needed.push(*a);
        }
    }
    let cfg = FitConfig { seed, ..cfg.clone() };
    let outcomes = needed.iter().map(|a| run_fit(*a, data, init, &cfg)).collect::<Result<Vec<_>>>()?;
    let find = |a: Algorithm| outcomes.iter().find(|o| o.algorithm == a);
    let rows = row_algorithms(algorithms)
        .into_iter()
        .map(|a| {
            let o = find(a).expect("every requested algorithm ran");
            let base = a.baseline().and_then(find);
            let factors = match base {
                Some(b) => Some(compute_reduction_factors(&b.trace, &o.trace)?),
                None => None,
            };
            Ok(BenchRow {
                dataset: dataset.to_string(),
                k_init,
                seed,
                algorithm: a,
                baseline: a.baseline(),
                iterations: o.trace.iterations,
                elapsed_s: o.trace.elapsed_s,
                final_objective: o.trace.final_objective(),
                final_k: o.trace.final_k(),
                converged: o.trace.converged,
                failure: o.trace.failure.clone(),
                baseline_iterations: base.map(|b| b.trace.iterations),
                baseline_objective: base.map(|b| b.trace.final_objective()),
                baseline_k: base.map(|b| b.trace.final_k()),
                factors,
                counters: o.counters.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((rows, outcomes))
}

/// Runs the synthetic grid `presets × k_inits × seeds`.
pub fn run_benchmark(cfg: &BenchConfig) -> Result<BenchReport> {
    cfg.fit.validate()?;
    if cfg.algorithms.is_empty() || cfg.presets.is_empty() || cfg.k_inits.is_empty() || cfg.seeds.is_empty() {
        return Err(GmmError::InvalidInput("benchmark grid is empty".into()));
    }
    if let Some(dir) = &cfg.trace_dir {
        std::fs::create_dir_all(dir)?;
    }
    let mut cells = Vec::new();
    for &p in &cfg.presets {
        for &k in &cfg.k_inits {
            for &s in &cfg.seeds {
                cells.push((p, k, s));
            }
        }
    }
    let run = |&(preset, k, seed): &(Preset, usize, u64)| -> Result<Vec<BenchRow>> {
        let data = generate_synthetic(&SyntheticSpec::new(preset, cfg.n, seed))?;
        let init = initial_model(&data, cfg.init, k, seed)?;
        let (rows, outcomes) = bench_cell(preset.name(), &data, &init, k, seed, &cfg.algorithms, &cfg.fit)?;
        if let Some(dir) = &cfg.trace_dir {
            for o in &outcomes {
                o.trace.write_csv_path(dir.join(format!("{}_k{}_s{}_{}.csv", preset.name(), k, seed, o.algorithm)))?;
            }
        }
        Ok(rows)
    };
    let per_cell: Vec<Result<Vec<BenchRow>>> =
        if cfg.parallel_cells { cells.par_iter().map(run).collect() } else { cells.iter().map(run).collect() };
    let mut rows = Vec::new();
    for r in per_cell {
        rows.extend(r?);
    }
    Ok(BenchReport { rows })
}
