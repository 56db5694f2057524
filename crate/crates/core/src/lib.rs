//! Gaussian mixture fitting by EM, adaptive EM with component annihilation,
//! and Anderson-accelerated adaptive EM with monotonicity control.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adaptive;
pub mod accelerated;
pub mod anderson;
pub mod bench;
pub mod dataset;
pub mod em;
pub mod els;
pub mod error;
pub mod init;
pub mod linalg;
pub mod model;
pub mod monotonicity;
pub mod plot;
pub mod synthetic;
pub mod sweeps;
pub mod trace;

pub use adaptive::{adaptive_m_step, final_conservative_step, fit_adaptive_em, AdaptiveStepOutcome};
pub use accelerated::{fit_a_amem, solution_choice_series, AmemCounters, AmemOutcome};
pub use anderson::{fit_naive_aaem, AndersonState, DampingSchedule, ParameterVector, RestartMode};
pub use bench::{compute_reduction_factors, run_benchmark, run_fit, Algorithm, BenchConfig, BenchReport, BenchRow, FitOutcome, InitMethod, ReductionFactors};
pub use dataset::WeightedDataset;
pub use em::{e_step, fit_standard_em, m_step_standard, FitConfig, Responsibilities};
pub use els::{els_step, fit_els_em, LineSearchStep};
pub use error::{GmmError, Result};
pub use init::{gap_statistic, gs_kmeans_init, kmeans_init, kmeans_pp_seed, weighted_kmeans, GapStatConfig, GapStatReport, KMeansResult};
pub use model::{log_likelihood, penalized_log_likelihood, GaussianComponent, MixtureModel, MomentSummary};
pub use monotonicity::{ScoreForm, ScoreVector};
pub use plot::{render_convergence_svg, write_convergence_svg, PlotOptions, XScale};
pub use synthetic::{generate_synthetic, Preset, SyntheticSpec};
pub use trace::{FitTrace, IterationRecord, SolutionChoice};
