use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use amem::init::ReferenceDistribution;
use amem::{
    gap_statistic, gs_kmeans_init, kmeans_init, run_benchmark, run_fit, write_convergence_svg, Algorithm, BenchConfig, FitConfig,
    FitTrace, GapStatConfig, GmmError, InitMethod, MixtureModel, PlotOptions, Preset, RestartMode, SyntheticSpec, WeightedDataset,
    XScale,
};
use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

/// Gaussian mixture fitting with adaptive and Anderson-accelerated EM.
#[derive(Parser, Debug)]
#[command(name = "amem", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Draw a synthetic dataset and write it as CSV.
    Generate {
        #[arg(long, default_value = "vws")]
        preset: Preset,
        #[arg(long, default_value_t = 1000)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Destination CSV; stdout when omitted.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Fit one mixture and report the outcome.
    Fit(FitCmd),
    /// Run paired fits over synthetic presets and report IRF/TRF.
    Bench(BenchCmd),
    /// Gap statistic over a K range.
    Gapstat(GapstatCmd),
    /// Render trace CSVs as an SVG convergence chart.
    Plot(PlotCmd),
}

#[derive(Args, Debug)]
struct DataArgs {
    /// Dataset CSV (one point per row, optional `weight` column).
    #[arg(long, conflicts_with = "preset")]
    input: Option<PathBuf>,
    /// Synthetic preset used when no input is given.
    #[arg(long, default_value = "vws")]
    preset: Preset,
    #[arg(long, default_value_t = 1000)]
    n: usize,
}

impl DataArgs {
    fn load(&self, seed: u64) -> Result<(String, WeightedDataset)> {
        match &self.input {
            Some(path) => {
                let data = WeightedDataset::read_csv_path(path).with_context(|| format!("reading {}", path.display()))?;
                Ok((path.display().to_string(), data))
            }
            None => Ok((self.preset.name().to_string(), amem::generate_synthetic(&SyntheticSpec::new(self.preset, self.n, seed))?)),
        }
    }
}

#[derive(Args, Debug)]
struct FitArgs {
    #[arg(long, default_value_t = 1e-10)]
    tol: f64,
    #[arg(long, default_value_t = 50_000)]
    max_iters: usize,
    #[arg(long, default_value_t = 0.01)]
    eps_mono: f64,
    /// Anderson history depth; picked from K_init when omitted.
    #[arg(long)]
    m_aa: Option<usize>,
    #[arg(long, default_value = "reset")]
    restart: RestartMode,
    /// Use the exact monotonicity test instead of the Taylor test.
    #[arg(long)]
    no_taylor: bool,
    #[arg(long, default_value_t = 1)]
    threads: usize,
}

impl FitArgs {
    fn config(&self, seed: u64) -> Result<FitConfig> {
        let cfg = FitConfig {
            tol: self.tol,
            max_iters: self.max_iters,
            seed,
            eps_mono: self.eps_mono,
            m_aa: self.m_aa,
            restart_mode: self.restart,
            use_taylor_test: !self.no_taylor,
            thread_count: self.threads.max(1),
            ..FitConfig::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args, Debug)]
struct FitCmd {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    fit: FitArgs,
    #[arg(long, default_value = "aamem")]
    algo: Algorithm,
    #[arg(long, default_value = "kmeans")]
    init: InitMethod,
    /// Starting model as JSON; overrides `--init`.
    #[arg(long)]
    init_model: Option<PathBuf>,
    #[arg(long, default_value_t = 3)]
    kinit: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Fitted model as JSON.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Per-iteration trace as CSV.
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct BenchCmd {
    #[arg(long, value_delimiter = ',', default_value = "vws,ps,vps")]
    preset: Vec<Preset>,
    #[arg(long, value_delimiter = ',', default_value = "3")]
    kinit: Vec<usize>,
    /// First seed of the run.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of consecutive seeds per cell.
    #[arg(long, default_value_t = 5)]
    runs: u64,
    #[arg(long, default_value_t = 1000)]
    n: usize,
    #[arg(long, alias = "algo", default_value = "aem,aamem")]
    algos: String,
    #[arg(long, default_value = "kmeans")]
    init: InitMethod,
    #[command(flatten)]
    fit: FitArgs,
    /// Runs cells concurrently; timings get noisier.
    #[arg(long)]
    parallel: bool,
    /// Per-run CSV report.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Directory for per-fit trace CSVs.
    #[arg(long)]
    trace_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct GapstatCmd {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 2)]
    k_min: usize,
    #[arg(long, default_value_t = 10)]
    k_max: usize,
    /// Reference sets per K.
    #[arg(long, default_value_t = 10)]
    b: usize,
    #[arg(long, default_value_t = 1.0)]
    tau: f64,
    /// Reference distribution: `box` or `normal`.
    #[arg(long, default_value = "box", value_parser = parse_reference)]
    reference: ReferenceDistribution,
    /// Also writes the GS-K-means initial model as JSON.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PlotCmd {
    /// Trace CSVs, optionally as `label=path`.
    #[arg(required = true)]
    traces: Vec<String>,
    #[arg(long)]
    output: PathBuf,
    #[arg(long, default_value = "")]
    title: String,
    #[arg(long)]
    log_x: bool,
}

fn parse_reference(s: &str) -> std::result::Result<ReferenceDistribution, String> {
    match s {
        "box" | "pca-box" => Ok(ReferenceDistribution::PcaBox),
        "normal" => Ok(ReferenceDistribution::Normal),
        other => Err(format!("unknown reference `{other}` (box, normal)")),
    }
}

/// Raised when a fit finished but ended in a numerical failure.
#[derive(Debug)]
struct NumericalFailure(String);

impl std::fmt::Display for NumericalFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for NumericalFailure {}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<NumericalFailure>().is_some() {
        return 2;
    }
    match err.chain().find_map(|e| e.downcast_ref::<GmmError>()) {
        Some(
            GmmError::Domain(_)
            | GmmError::DegenerateComponent { .. }
            | GmmError::NotPositiveDefinite
            | GmmError::AllKilled
            | GmmError::Seeding(_)
            | GmmError::Measurement(_),
        ) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate { preset, n, seed, output } => {
            if preset == Preset::Custom {
                bail!(GmmError::InvalidInput("the custom preset needs a model; use one of vws, ps, vps".into()));
            }
            let data = amem::generate_synthetic(&SyntheticSpec::new(preset, n, seed))?;
            match output {
                Some(path) => data.write_csv_path(&path)?,
                None => data.write_csv(std::io::stdout().lock())?,
            }
            Ok(())
        }
        Command::Fit(cmd) => fit(cmd),
        Command::Bench(cmd) => bench(cmd),
        Command::Gapstat(cmd) => gapstat(cmd),
        Command::Plot(cmd) => plot(cmd),
    }
}

fn init_threads(threads: usize) {
    // a second call fails harmlessly when the pool already exists
    let _ = rayon::ThreadPoolBuilder::new().num_threads(threads.max(1)).build_global();
}

fn fit(cmd: FitCmd) -> Result<()> {
    init_threads(cmd.fit.threads);
    let cfg = cmd.fit.config(cmd.seed)?;
    let (name, data) = cmd.data.load(cmd.seed)?;
    let init = match &cmd.init_model {
        Some(path) => MixtureModel::read_json_path(path).with_context(|| format!("reading {}", path.display()))?,
        None => match cmd.init {
            InitMethod::KMeans => kmeans_init(&data, cmd.kinit, 10, 300, cmd.seed)?,
            InitMethod::GsKMeans => gs_kmeans_init(&data, &GapStatConfig { seed: cmd.seed, ..GapStatConfig::default() })?.0,
        },
    };
    let out = run_fit(cmd.algo, &data, &init, &cfg)?;
    if let Some(path) = &cmd.trace {
        out.trace.write_csv_path(path)?;
    }
    if let Some(path) = &cmd.output {
        out.model.write_json_path(path)?;
    }
    let t = &out.trace;
    println!(
        "{name} {} K_init={} K_final={} iterations={} objective={:.10} converged={} elapsed_s={:.4}",
        cmd.algo,
        init.len(),
        t.final_k(),
        t.iterations,
        t.final_objective(),
        t.converged,
        t.elapsed_s
    );
    if let Some(c) = &out.counters {
        println!(
            "aa_accepted={} fallback_monotonicity={} fallback_positivity={} restarts={} kills={}",
            c.aa_accepted, c.em_fallback_monotonicity, c.em_fallback_positivity, c.restarts, c.kills
        );
    }
    if let Some(why) = &t.failure {
        return Err(NumericalFailure(format!("{} failed after {} iterations: {why}", cmd.algo, t.iterations)).into());
    }
    Ok(())
}

fn bench(cmd: BenchCmd) -> Result<()> {
    init_threads(cmd.fit.threads);
    if cmd.preset.contains(&Preset::Custom) {
        bail!(GmmError::InvalidInput("bench runs the built-in presets only".into()));
    }
    let cfg = BenchConfig {
        presets: cmd.preset,
        k_inits: cmd.kinit,
        seeds: (cmd.seed..cmd.seed + cmd.runs).collect(),
        n: cmd.n,
        algorithms: Algorithm::parse_list(&cmd.algos)?,
        init: cmd.init,
        fit: cmd.fit.config(cmd.seed)?,
        parallel_cells: cmd.parallel,
        trace_dir: cmd.trace_dir,
    };
    let report = run_benchmark(&cfg)?;
    if let Some(path) = &cmd.output {
        report.write_csv(std::fs::File::create(path).with_context(|| format!("creating {}", path.display()))?)?;
    }
    print!("{}", report.to_text());
    let failed: Vec<String> = report
        .rows
        .iter()
        .filter_map(|r| r.failure.as_ref().map(|f| format!("{} K_init={} seed={} {}: {f}", r.dataset, r.k_init, r.seed, r.algorithm)))
        .collect();
    if !failed.is_empty() {
        return Err(NumericalFailure(format!("{} run(s) failed:\n  {}", failed.len(), failed.join("\n  "))).into());
    }
    Ok(())
}

fn gapstat(cmd: GapstatCmd) -> Result<()> {
    let (name, data) = cmd.data.load(cmd.seed)?;
    let cfg = GapStatConfig {
        k_min: cmd.k_min,
        k_max: cmd.k_max,
        b: cmd.b,
        tau: cmd.tau,
        reference: cmd.reference,
        seed: cmd.seed,
        ..GapStatConfig::default()
    };
    let report = if let Some(path) = &cmd.output {
        let (model, report) = gs_kmeans_init(&data, &cfg)?;
        model.write_json_path(path)?;
        report
    } else {
        gap_statistic(&data, &cfg)?
    };
    let mut out = std::io::stdout().lock();
    writeln!(out, "# {name}")?;
    writeln!(out, "{:>3} {:>12} {:>12}", "K", "GSV", "s_K")?;
    for r in &report.records {
        writeln!(out, "{:>3} {:>12.6} {:>12.6}", r.k, r.gsv, r.s_k)?;
    }
    writeln!(out, "K_opt={} K_init={}{}", report.k_opt, report.k_init, if report.criterion_met { "" } else { " (criterion never met)" })?;
    Ok(())
}

fn plot(cmd: PlotCmd) -> Result<()> {
    let mut loaded: Vec<(String, FitTrace)> = Vec::new();
    for spec in &cmd.traces {
        let (label, path) = match spec.split_once('=') {
            Some((l, p)) => (l.to_string(), PathBuf::from(p)),
            None => {
                let p = PathBuf::from(spec);
                (p.file_stem().map_or_else(|| spec.clone(), |s| s.to_string_lossy().into_owned()), p)
            }
        };
        let trace = FitTrace::read_csv_path(&path).with_context(|| format!("reading {}", path.display()))?;
        loaded.push((label, trace));
    }
    let series: Vec<(&str, &FitTrace)> = loaded.iter().map(|(l, t)| (l.as_str(), t)).collect();
    let opts = PlotOptions { title: cmd.title, x_scale: if cmd.log_x { XScale::Log } else { XScale::Linear }, ..PlotOptions::default() };
    write_convergence_svg(&series, &opts, &cmd.output)?;
    Ok(())
}
