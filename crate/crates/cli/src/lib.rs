//! Command-line harness for `ebdrift`: simulation, fitting, diagnostics and
//! the rate/selection studies.
//!
//! Every command validates its inputs completely before creating the output
//! directory, so a rejected invocation leaves nothing behind. Exit codes are
//! `0` on success, `1` for invalid input and `2` for failures while running.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use ebdrift::diagnostics::{check_event_e, invariant_density, PairSource};
use ebdrift::io::{save_path, save_stats, write_density_csv, write_equivalence_csv};
use ebdrift::mmle::{build_grid, mmle_select, refine_continuous, write_selection_csv};
use ebdrift::prior_family::{solve_eps_lambda, HyperParam, DEFAULT_DELTA};
use ebdrift::sde_sim::SimConfig;
use ebdrift::{fit_posterior, simulate_path, sufficient_stats, SuffStats};
use serde::Serialize;
use serde_json::json;

pub mod config;
pub mod study;

use config::{
    parse_coarsening, parse_smoothness, parse_truth, validation, CaseKind, ExperimentConfig,
    GridConfig, JPolicy,
};

/// Environment variable holding the worker-thread count.
pub const WORKERS_ENV: &str = "EBDRIFT_WORKERS";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

#[derive(Debug, Parser)]
#[command(name = "ebdrift", version, about = "Empirical-Bayes drift estimation for periodic diffusions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate a path (and optionally its sufficient statistics).
    Simulate(SimulateArgs),
    /// Select λ by marginal maximum likelihood on stored statistics or a path.
    Fit(FitArgs),
    /// Posterior contraction study over a list of horizons.
    RateStudy(StudyArgs),
    /// Track selected hyperparameters against the predicted optimal scale.
    SelectStudy(StudyArgs),
    /// Invariant density and Hellinger/L² equivalence check.
    Diagnose(DiagnoseArgs),
    /// Monte Carlo solution of the small-ball equation for ε_λ.
    EpsLambda(EpsArgs),
}

#[derive(Debug, Args, Serialize)]
struct SimulateArgs {
    /// Truth: `beta=1[,margin=..][,amplitude=..][,seed=..]`, `coeffs=a;b;..` or `zero`.
    #[arg(long, default_value = "beta=1")]
    truth: String,
    /// Fourier coefficients kept for a Sobolev truth.
    #[arg(long, default_value_t = 256)]
    truth_j: usize,
    #[arg(long = "T")]
    horizon: f64,
    /// Euler step (default `min(0.01, T^{-1/2}/10)`).
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    x0: f64,
    /// Path format: `bin` (exact) or `csv`.
    #[arg(long, default_value = "bin")]
    format: String,
    /// Also write sufficient statistics at this truncation.
    #[arg(long)]
    stats_j: Option<usize>,
    #[arg(long, default_value = "ebdrift-out")]
    output_dir: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct FitArgs {
    /// Stored sufficient statistics (`.csv` or binary).
    #[arg(long, conflicts_with = "path", required_unless_present = "path")]
    stats: Option<PathBuf>,
    /// Stored path; statistics are computed at truncation `--J`.
    #[arg(long)]
    path: Option<PathBuf>,
    #[arg(long = "J")]
    j: Option<usize>,
    #[arg(long)]
    case: CaseKind,
    /// Horizon used for the grid (defaults to the horizon of the data).
    #[arg(long = "T")]
    horizon: Option<f64>,
    /// Fixed α for case 1prime.
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    /// Fixed s for case 2prime.
    #[arg(long, default_value_t = 1.0)]
    s: f64,
    #[arg(long, default_value_t = DEFAULT_DELTA)]
    delta: f64,
    /// `full`, `stride:M` or `target:N`.
    #[arg(long, default_value = "target:200")]
    coarsen_s: String,
    #[arg(long)]
    refine: bool,
    #[arg(long, default_value = "ebdrift-out")]
    output_dir: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct StudyArgs {
    /// JSON experiment config; the flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Truth as `beta=1[,margin=..][,amplitude=..][,seed=..]`.
    #[arg(long)]
    truth: Option<String>,
    /// Comma-separated horizons.
    #[arg(long = "T-list", value_delimiter = ',')]
    t_list: Option<Vec<f64>>,
    #[arg(long)]
    replicates: Option<usize>,
    #[arg(long)]
    seed_base: Option<u64>,
    #[arg(long)]
    case: Option<CaseKind>,
    #[arg(long)]
    alpha_fixed: Option<f64>,
    #[arg(long)]
    s_fixed: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    coarsen_s: Option<String>,
    #[arg(long)]
    dt: Option<f64>,
    /// `floor-t`, `cap:N` or `fixed:N`.
    #[arg(long = "J-policy")]
    j_policy: Option<String>,
    #[arg(long)]
    refine: bool,
}

#[derive(Debug, Args, Serialize)]
struct DiagnoseArgs {
    #[arg(long)]
    truth: String,
    #[arg(long, default_value_t = 256)]
    truth_j: usize,
    #[arg(long = "T")]
    horizon: f64,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1024)]
    n_grid: usize,
    #[arg(long, default_value_t = 500)]
    pairs: usize,
    /// Prior used to draw test pairs.
    #[arg(long, default_value_t = 1.0)]
    pair_alpha: f64,
    #[arg(long, default_value_t = 1.0)]
    pair_s: f64,
    #[arg(long, default_value_t = 64)]
    pair_j: usize,
    #[arg(long, default_value = "ebdrift-out")]
    output_dir: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct EpsArgs {
    #[arg(long)]
    alpha: f64,
    #[arg(long)]
    s: f64,
    #[arg(long = "K", default_value_t = 1.0)]
    k: f64,
    /// Comma-separated horizons.
    #[arg(long = "T", value_delimiter = ',', required = true)]
    horizons: Vec<f64>,
    #[arg(long, default_value = "beta=1")]
    truth: String,
    /// Truncation (default `⌊T⌋`).
    #[arg(long = "J")]
    j: Option<usize>,
    #[arg(long, default_value_t = 100_000)]
    mc_samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "ebdrift-out")]
    output_dir: PathBuf,
}

/// Parse `argv` (including the program name), run, and return the exit code.
pub fn cli_main<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let argv: Vec<std::ffi::OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
        }
    };
    let echo: Vec<String> = argv.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    match with_workers(|| dispatch(cli.command, &echo)) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn with_workers<R: Send>(f: impl FnOnce() -> Result<R, CliError> + Send) -> Result<R, CliError> {
    let Ok(raw) = std::env::var(WORKERS_ENV) else {
        return f();
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| CliError::Validation(format!("{WORKERS_ENV} must be a positive integer, got {raw:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build()
        .map_err(runtime)?
        .install(f)
}

fn dispatch(command: Command, argv: &[String]) -> Result<(), CliError> {
    match command {
        Command::Simulate(a) => simulate(a, argv),
        Command::Fit(a) => fit(a, argv),
        Command::RateStudy(a) => rate_study(a, argv),
        Command::SelectStudy(a) => select_study(a, argv),
        Command::Diagnose(a) => diagnose(a, argv),
        Command::EpsLambda(a) => eps_lambda(a, argv),
    }
}

/// Output directory plus the list of files written into it.
struct OutputDir {
    dir: PathBuf,
    written: Vec<String>,
}

impl OutputDir {
    fn create(dir: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(dir)
            .map_err(|e| runtime(format!("cannot create {}: {e}", dir.display())))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            written: Vec::new(),
        })
    }

    fn path(&mut self, name: &str) -> PathBuf {
        self.written.push(name.to_string());
        self.dir.join(name)
    }

    fn write(
        &mut self,
        name: &str,
        body: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
    ) -> Result<(), CliError> {
        let file = self.path(name);
        let mut w = BufWriter::new(File::create(&file).map_err(runtime)?);
        body(&mut w).and_then(|_| w.flush()).map_err(runtime)
    }

    fn json(&mut self, name: &str, value: &impl Serialize) -> Result<(), CliError> {
        self.write(name, |w| {
            serde_json::to_writer_pretty(&mut *w, value)?;
            writeln!(w)
        })
    }

    /// Write `manifest.json` last, listing everything written before it.
    fn finish(
        mut self,
        command: &str,
        argv: &[String],
        config: serde_json::Value,
        seeds: serde_json::Value,
    ) -> Result<(), CliError> {
        let manifest = json!({
            "tool": "ebdrift",
            "version": env!("CARGO_PKG_VERSION"),
            "command": command,
            "argv": argv,
            "config": config,
            "seeds": seeds,
            "workers": rayon::current_num_threads(),
            "outputs": self.written.clone(),
        });
        self.json("manifest.json", &manifest)
    }
}

fn to_value(v: &impl Serialize) -> serde_json::Value {
    serde_json::to_value(v).expect("serializable")
}

fn simulate(a: SimulateArgs, argv: &[String]) -> Result<(), CliError> {
    let truth = parse_truth(&a.truth, a.truth_j).map_err(CliError::Validation)?;
    let mut cfg = SimConfig::new(a.horizon, a.seed);
    if let Some(dt) = a.dt {
        cfg.dt = dt;
    }
    cfg.x0 = a.x0;
    cfg.validate().map_err(validation)?;
    let ext = match a.format.as_str() {
        "bin" | "csv" => a.format.as_str(),
        other => return Err(CliError::Validation(format!("unknown format {other:?}"))),
    };
    if let Some(j) = a.stats_j {
        if j == 0 || j as f64 > 10.0 * a.horizon {
            return Err(CliError::Validation(format!("--stats-j {j} out of range")));
        }
    }

    let path = simulate_path(&truth, &cfg).map_err(runtime)?;
    let mut out = OutputDir::create(&a.output_dir)?;
    save_path(&path, &out.path(&format!("path.{ext}"))).map_err(runtime)?;
    if let Some(j) = a.stats_j {
        let stats = sufficient_stats(&path, j).map_err(runtime)?;
        save_stats(&stats, &out.path(&format!("stats.{ext}"))).map_err(runtime)?;
    }
    out.finish(
        "simulate",
        argv,
        json!({ "args": to_value(&a), "sim": to_value(&cfg), "truth": truth.descriptor() }),
        json!({ "path": a.seed }),
    )
}

fn load_fit_stats(a: &FitArgs) -> Result<SuffStats, CliError> {
    let stats = match (&a.stats, &a.path) {
        (Some(file), _) => ebdrift::io::load_stats(file).map_err(|e| {
            CliError::Validation(format!("cannot load stats {}: {e}", file.display()))
        })?,
        (None, Some(file)) => {
            let path = ebdrift::io::load_path(file).map_err(|e| {
                CliError::Validation(format!("cannot load path {}: {e}", file.display()))
            })?;
            let j = a
                .j
                .unwrap_or_else(|| JPolicy::FloorT.resolve(path.horizon));
            sufficient_stats(&path, j).map_err(validation)?
        }
        (None, None) => return Err(CliError::Validation("need --stats or --path".into())),
    };
    stats.validate().map_err(validation)?;
    Ok(stats)
}

fn fit(a: FitArgs, argv: &[String]) -> Result<(), CliError> {
    let stats = load_fit_stats(&a)?;
    let grid_cfg = GridConfig {
        case: a.case,
        alpha_fixed: a.alpha,
        s_fixed: a.s,
        delta: a.delta,
        coarsen_s: parse_coarsening(&a.coarsen_s).map_err(CliError::Validation)?,
        refine: a.refine,
    };
    let horizon = a.horizon.unwrap_or(stats.horizon);
    let grid = build_grid(grid_cfg.grid_case(), horizon, a.delta, grid_cfg.coarsen_s)
        .map_err(validation)?;

    let selection = mmle_select(&stats, &grid).map_err(runtime)?;
    let (lambda_hat, log_ml) = if a.refine {
        refine_continuous(&stats, &grid, &selection).map_err(runtime)?
    } else {
        (selection.lambda_hat, selection.table[selection.best_index].1)
    };
    let post = fit_posterior(&stats, &lambda_hat).map_err(runtime)?;
    let cov = post.covariance();
    let half_max: Vec<HyperParam> = selection
        .half_max_set
        .iter()
        .map(|&i| selection.table[i].0)
        .collect();
    let report = json!({
        "lambda_hat": lambda_hat,
        "grid_lambda_hat": selection.lambda_hat,
        "log_ml": log_ml,
        "refined": a.refine,
        "tie_break_applied": selection.tie_break_applied,
        "half_max_set": half_max,
        "excluded": selection.excluded.iter().map(|(l, e)| json!({"lambda": l, "error": e})).collect::<Vec<_>>(),
        "grid": { "case": grid.case.label(), "horizon": grid.horizon, "delta": grid.delta,
                  "coarsen_s": grid.coarsen_s, "coarsened": grid.coarsened, "points": grid.points.len() },
        "posterior": {
            "J": post.truncation(),
            "mean": post.mean().as_slice(),
            "sd": (0..post.truncation()).map(|i| cov[(i, i)].sqrt()).collect::<Vec<_>>(),
            "jitter": post.jitter,
        },
    });

    let mut out = OutputDir::create(&a.output_dir)?;
    out.write("selection.csv", |w| write_selection_csv(&selection, w))?;
    out.json("posterior.json", &report)?;
    out.finish("fit", argv, json!({ "args": to_value(&a), "grid": grid_cfg }), json!({}))
}

fn parse_j_policy(text: &str) -> Result<JPolicy, String> {
    let num = |v: &str| v.parse::<usize>().map_err(|e| format!("bad J policy {text:?}: {e}"));
    match text.split_once(':') {
        None if text == "floor-t" => Ok(JPolicy::FloorT),
        Some(("cap", n)) => Ok(JPolicy::FloorTCapped(num(n)?)),
        Some(("fixed", n)) => Ok(JPolicy::Fixed(num(n)?)),
        _ => Err(format!("bad J policy {text:?} (floor-t, cap:N or fixed:N)")),
    }
}

/// Load the config file (if any), apply flag overrides and validate.
fn resolve_study_config(a: &StudyArgs) -> Result<ExperimentConfig, CliError> {
    let mut cfg = match &a.config {
        Some(file) => ExperimentConfig::load(file)?,
        None => ExperimentConfig {
            truth: ebdrift::SmoothnessSpec::deterministic(1.0),
            truth_j: 256,
            t_list: Vec::new(),
            replicates: 20,
            seed_base: 0,
            grid: GridConfig {
                case: CaseKind::SmoothnessOnly,
                alpha_fixed: 1.0,
                s_fixed: 1.0,
                delta: DEFAULT_DELTA,
                coarsen_s: Default::default(),
                refine: false,
            },
            dt: None,
            x0: 0.0,
            j_policy: JPolicy::FloorT,
            output_dir: PathBuf::from("ebdrift-out"),
            posterior_samples: 2000,
            comparators: Vec::new(),
        },
    };
    if let Some(d) = &a.output_dir {
        cfg.output_dir = d.clone();
    }
    if let Some(t) = &a.truth {
        cfg.truth = parse_smoothness(t).map_err(CliError::Validation)?;
    }
    if let Some(t) = &a.t_list {
        cfg.t_list = t.clone();
    }
    if let Some(r) = a.replicates {
        cfg.replicates = r;
    }
    if let Some(s) = a.seed_base {
        cfg.seed_base = s;
    }
    if let Some(c) = a.case {
        cfg.grid.case = c;
    }
    if let Some(x) = a.alpha_fixed {
        cfg.grid.alpha_fixed = x;
    }
    if let Some(x) = a.s_fixed {
        cfg.grid.s_fixed = x;
    }
    if let Some(x) = a.delta {
        cfg.grid.delta = x;
    }
    if let Some(c) = &a.coarsen_s {
        cfg.grid.coarsen_s = parse_coarsening(c).map_err(CliError::Validation)?;
    }
    if a.dt.is_some() {
        cfg.dt = a.dt;
    }
    if let Some(p) = &a.j_policy {
        cfg.j_policy = parse_j_policy(p).map_err(CliError::Validation)?;
    }
    if a.refine {
        cfg.grid.refine = true;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn study_seeds(cfg: &ExperimentConfig) -> serde_json::Value {
    let per_t: Vec<_> = cfg
        .t_list
        .iter()
        .map(|&t| {
            json!({
                "T": t,
                "replicate_seeds": (0..cfg.replicates)
                    .map(|r| study::replicate_seed(cfg.seed_base, t, r))
                    .collect::<Vec<_>>(),
            })
        })
        .collect();
    json!({
        "seed_base": cfg.seed_base,
        "rule": "substream_seed(substream_seed(seed_base, T.to_bits()), replicate); posterior draws use substreams 1 and 2 of the replicate seed",
        "per_T": per_t,
    })
}

fn rate_study(a: StudyArgs, argv: &[String]) -> Result<(), CliError> {
    let cfg = resolve_study_config(&a)?;
    let result = study::run_rate_study(&cfg)?;
    log::info!(
        "fitted slope {:.4} (target {:.4})",
        result.summary.fitted_slope,
        result.summary.target_slope
    );
    let mut out = OutputDir::create(&cfg.output_dir)?;
    out.json("config.json", &cfg)?;
    out.write("rows.csv", |w| study::write_rate_rows(&result.rows, w))?;
    if !cfg.comparators.is_empty() {
        out.write("comparators.csv", |w| study::write_comparator_rows(&result.rows, w))?;
    }
    out.json("summary.json", &result.summary)?;
    let timings: Vec<_> = result
        .rows
        .iter()
        .map(|r| (r.horizon, r.replicate, r.wall_time))
        .collect();
    out.write("timings.csv", |w| study::write_timings(&timings, w))?;
    out.finish("rate-study", argv, to_value(&cfg), study_seeds(&cfg))
}

fn select_study(a: StudyArgs, argv: &[String]) -> Result<(), CliError> {
    let cfg = resolve_study_config(&a)?;
    let result = study::run_selection_study(&cfg)?;
    let mut out = OutputDir::create(&cfg.output_dir)?;
    out.json("config.json", &cfg)?;
    out.write("selection.csv", |w| study::write_selection_rows(&result.rows, w))?;
    out.json(
        "summary.json",
        &json!({ "beta": cfg.truth.beta, "horizons": result.horizons, "failures": result.failures }),
    )?;
    out.write("timings.csv", |w| study::write_timings(&result.timings, w))?;
    out.finish("select-study", argv, to_value(&cfg), study_seeds(&cfg))
}

fn diagnose(a: DiagnoseArgs, argv: &[String]) -> Result<(), CliError> {
    let truth = parse_truth(&a.truth, a.truth_j).map_err(CliError::Validation)?;
    let mut cfg = SimConfig::new(a.horizon, a.seed);
    if let Some(dt) = a.dt {
        cfg.dt = dt;
    }
    cfg.validate().map_err(validation)?;
    if a.n_grid < 64 {
        return Err(CliError::Validation(format!("--n-grid must be >= 64, got {}", a.n_grid)));
    }
    if a.pairs == 0 || a.pair_j == 0 {
        return Err(CliError::Validation("--pairs and --pair-j must be positive".into()));
    }
    let lambda = HyperParam::new(a.pair_alpha, a.pair_s).map_err(validation)?;

    let profile = invariant_density(&truth, a.n_grid).map_err(runtime)?;
    let path = simulate_path(&truth, &cfg).map_err(runtime)?;
    let pair_seed = ebdrift::rng::substream_seed(a.seed, 1);
    let source = PairSource::Prior { lambda, j: a.pair_j };
    let report = check_event_e(&path, &profile, &source, a.pairs, pair_seed).map_err(runtime)?;

    let mut out = OutputDir::create(&a.output_dir)?;
    out.write("density.csv", |w| {
        write_density_csv(&profile, w).map_err(std::io::Error::other)
    })?;
    out.write("equivalence.csv", |w| {
        write_equivalence_csv(&report, w).map_err(std::io::Error::other)
    })?;
    out.json(
        "report.json",
        &json!({
            "truth": truth.descriptor(),
            "T": a.horizon,
            "dt": cfg.dt,
            "min_rho": profile.min_rho(),
            "max_rho": profile.max_rho(),
            "c_rho": profile.c_rho,
            "C_rho": profile.big_c_rho,
            "pairs": report.ratios.len(),
            "skipped": report.skipped,
            "min_ratio": report.min_ratio,
            "max_ratio": report.max_ratio,
            "fraction_in_band": report.fraction_in_band,
        }),
    )?;
    out.finish(
        "diagnose",
        argv,
        json!({ "args": to_value(&a), "sim": to_value(&cfg) }),
        json!({ "path": a.seed, "pairs": pair_seed }),
    )
}

fn eps_lambda(a: EpsArgs, argv: &[String]) -> Result<(), CliError> {
    let lambda = HyperParam::new(a.alpha, a.s).map_err(validation)?;
    if !(a.k > 0.0) {
        return Err(CliError::Validation(format!("--K must be positive, got {}", a.k)));
    }
    if a.mc_samples < 1000 {
        return Err(CliError::Validation("--mc-samples must be >= 1000".into()));
    }
    if a.horizons.iter().any(|t| !(*t >= 1.0)) {
        return Err(CliError::Validation("horizons must be >= 1".into()));
    }
    let max_j = a
        .j
        .unwrap_or_else(|| JPolicy::FloorT.resolve(a.horizons.iter().copied().fold(1.0, f64::max)));
    let truth = parse_truth(&a.truth, max_j).map_err(CliError::Validation)?;

    let reports = a
        .horizons
        .iter()
        .map(|&t| {
            let j = a.j.unwrap_or_else(|| JPolicy::FloorT.resolve(t));
            let seed = ebdrift::rng::substream_seed(a.seed, t.to_bits());
            solve_eps_lambda(&lambda, &truth, a.k, t, j, a.mc_samples, seed)
                .map(|r| json!({ "T": t, "J": j, "seed": seed, "report": r }))
                .map_err(runtime)
        })
        .collect::<Result<Vec<_>, _>>()?;

    let mut out = OutputDir::create(&a.output_dir)?;
    out.json(
        "eps_lambda.json",
        &json!({ "lambda": lambda, "truth": truth.descriptor(), "results": reports }),
    )?;
    out.finish("eps-lambda", argv, to_value(&a), json!({ "base": a.seed }))
}
