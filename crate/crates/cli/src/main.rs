//! `ldc` — lane-departure behavior modeling and controller evaluation.
//!
//! Pipeline stages as subcommands:
//!
//! ```text
//! ldc synth-corpus  synthetic departure events + ground-truth manifest
//! ldc extract       events csv -> feature csv
//! ldc fit           feature csv -> model json + BIC curve csv
//! ldc sample        model json -> sampled feature csv
//! ldc simulate      model or events -> controlled trajectory csvs
//! ldc evaluate      models -> controlled vs uncontrolled report
//! ```
//!
//! Every command is a pure function of its input files and flags; all
//! randomness flows from `--seed`. Exit codes: 0 success, 1 usage error,
//! 2 data error, 3 numerical failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use ldc_core::bgm::{fit_em, select_components, Bounds, BoundedGmm, EmConfig};
use ldc_core::controller::{ControllerParams, OffsetConvention, SimOptions};
use ldc_core::error::ErrorKind;
use ldc_core::evaluation::{evaluate_batch, sweep_report, sweep_table, EvalConfig};
use ldc_core::features::{extract_features, filter_event, FilterDecision, RejectReason};
use ldc_core::io::{
    self, config_hash, data_hash, FeatureRow, ModelFile, ModelMeta,
};
use ldc_core::qmc::QmcConfig;
use ldc_core::synthesis::{
    default_feature_bounds, demo_truth_model, derive_seed, generate_corpus_detailed,
};
use ldc_core::vehicle::{MatrixConvention, VehicleParams};
use ldc_core::{FeatureVector, Side};

#[derive(Parser)]
#[command(name = "ldc", version, about = "Stochastic lane-departure model and LDC evaluation")]
struct Cli {
    /// Configuration file (TOML or JSON) mirroring the flags; explicit
    /// flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Worker threads for parallel sections (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic departure-event corpus with a ground-truth manifest.
    SynthCorpus(SynthArgs),
    /// Reduce departure events to feature vectors.
    Extract(ExtractArgs),
    /// Fit bounded Gaussian mixtures with BIC component selection.
    Fit(FitArgs),
    /// Draw feature vectors from a fitted model.
    Sample(SampleArgs),
    /// Run the correction controller over events and write trajectories.
    Simulate(SimulateArgs),
    /// Monte-Carlo controlled-vs-uncontrolled comparison.
    Evaluate(EvaluateArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Output directory (events.csv, manifest.json).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Events per selected side.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Sampling time (s).
    #[arg(long)]
    ts: Option<f64>,
    /// L, R, or both.
    #[arg(long)]
    side: Option<String>,
    /// Zero the residual channels: smooth skeletons only.
    #[arg(long)]
    noiseless: bool,
    /// Ground-truth model JSON for the left side (default: bundled).
    #[arg(long)]
    truth_l: Option<PathBuf>,
    /// Ground-truth model JSON for the right side (default: bundled).
    #[arg(long)]
    truth_r: Option<PathBuf>,
}

#[derive(Args)]
struct ExtractArgs {
    /// Input event CSV.
    #[arg(long)]
    events: Option<PathBuf>,
    /// Output feature CSV.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct FitArgs {
    /// Input feature CSV.
    #[arg(long)]
    features: Option<PathBuf>,
    /// Output directory (model_<side>.json, bic_<side>.csv).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Component range `a..b` (inclusive) or a single `k`.
    #[arg(long)]
    k_range: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// L, R, or both.
    #[arg(long)]
    side: Option<String>,
    /// Bounds JSON {"lower": [...], "upper": [...]} (default: data-derived).
    #[arg(long)]
    bounds: Option<PathBuf>,
    /// Quadrature sample count for box integrals.
    #[arg(long)]
    samples: Option<usize>,
}

#[derive(Args)]
struct SampleArgs {
    /// Model JSON.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Output feature CSV.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct SimulateArgs {
    /// Output directory (trajectory_<event_id>.csv).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Model JSON to generate events from (alternative to --events).
    #[arg(long)]
    model: Option<PathBuf>,
    /// Event CSV to simulate (alternative to --model).
    #[arg(long)]
    events: Option<PathBuf>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    ts: Option<f64>,
    /// Vehicle profile (JSON/TOML; default: built-in parameter table).
    #[arg(long)]
    vehicle: Option<PathBuf>,
    /// Controller profile (JSON/TOML; default: built-in parameter table).
    #[arg(long)]
    controller: Option<PathBuf>,
    #[arg(long)]
    matrix_convention: Option<MatrixConvention>,
    #[arg(long)]
    offset_convention: Option<OffsetConvention>,
    /// Optional symmetric steering clamp (rad).
    #[arg(long)]
    steer_limit: Option<f64>,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Output directory (report.json, report.csv, ...).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Left-side model JSON.
    #[arg(long)]
    model_l: Option<PathBuf>,
    /// Right-side model JSON.
    #[arg(long)]
    model_r: Option<PathBuf>,
    /// Events per side.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    ts: Option<f64>,
    #[arg(long)]
    vehicle: Option<PathBuf>,
    #[arg(long)]
    controller: Option<PathBuf>,
    #[arg(long)]
    matrix_convention: Option<MatrixConvention>,
    #[arg(long)]
    offset_convention: Option<OffsetConvention>,
    /// Optional symmetric steering clamp (rad).
    #[arg(long)]
    steer_limit: Option<f64>,
    /// Corpus sizes for the convergence sweep, e.g. 50,100,200,400.
    #[arg(long, value_delimiter = ',')]
    sweep: Option<Vec<usize>>,
    /// Also write bar-plot and sweep-table CSVs.
    #[arg(long)]
    plot_data: bool,
}

/// File-borne defaults mirroring the flags.
#[derive(Debug, Default, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct FileConfig {
    seed: Option<u64>,
    n: Option<usize>,
    ts: Option<f64>,
    side: Option<String>,
    k_range: Option<String>,
    samples: Option<usize>,
    matrix_convention: Option<String>,
    offset_convention: Option<String>,
    steer_limit: Option<f64>,
    vehicle: Option<PathBuf>,
    controller: Option<PathBuf>,
    workers: Option<usize>,
    sweep: Option<Vec<usize>>,
    plot_data: Option<bool>,
    noiseless: Option<bool>,
    out: Option<PathBuf>,
    events: Option<PathBuf>,
    features: Option<PathBuf>,
    model: Option<PathBuf>,
    model_l: Option<PathBuf>,
    model_r: Option<PathBuf>,
    truth_l: Option<PathBuf>,
    truth_r: Option<PathBuf>,
    bounds: Option<PathBuf>,
}

impl FileConfig {
    fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(FileConfig::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
        match path.extension().and_then(|e| e.to_str()) {
            Some("toml") => toml::from_str(&text)
                .map_err(|e| CliError::usage(format!("{}: {e}", path.display()))),
            _ => serde_json::from_str(&text)
                .map_err(|e| CliError::usage(format!("{}: {e}", path.display()))),
        }
    }
}

#[derive(Debug)]
struct CliError {
    message: String,
    code: u8,
}

impl CliError {
    fn usage(message: impl Into<String>) -> Self {
        CliError {
            message: message.into(),
            code: 1,
        }
    }
    fn data(message: impl Into<String>) -> Self {
        CliError {
            message: message.into(),
            code: 2,
        }
    }
}

impl From<ldc_core::Error> for CliError {
    fn from(e: ldc_core::Error) -> Self {
        let code = match e.kind() {
            ErrorKind::Numerical => 3,
            _ => 2,
        };
        CliError {
            message: e.to_string(),
            code,
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            // help/version are successful exits
            use clap::error::ErrorKind as CK;
            let code = match e.kind() {
                CK::DisplayHelp | CK::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let file_cfg = FileConfig::load(cli.config.as_deref())?;
    let workers = cli.workers.or(file_cfg.workers);
    let body = move || dispatch(cli.command, &file_cfg);
    match workers {
        Some(w) if w > 0 => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(w)
                .build()
                .map_err(|e| CliError::usage(format!("worker pool: {e}")))?;
            pool.install(body)
        }
        _ => body(),
    }
}

fn dispatch(cmd: Command, cfg: &FileConfig) -> Result<(), CliError> {
    match cmd {
        Command::SynthCorpus(a) => cmd_synth_corpus(a, cfg),
        Command::Extract(a) => cmd_extract(a, cfg),
        Command::Fit(a) => cmd_fit(a, cfg),
        Command::Sample(a) => cmd_sample(a, cfg),
        Command::Simulate(a) => cmd_simulate(a, cfg),
        Command::Evaluate(a) => cmd_evaluate(a, cfg),
    }
}

fn parse_sides(spec: Option<&str>) -> Result<Vec<Side>, CliError> {
    match spec.unwrap_or("both") {
        "both" | "Both" | "BOTH" => Ok(vec![Side::Left, Side::Right]),
        s => Side::parse(s)
            .map(|side| vec![side])
            .ok_or_else(|| CliError::usage(format!("invalid --side `{s}` (use L, R, or both)"))),
    }
}

fn parse_k_range(spec: Option<&str>) -> Result<Vec<usize>, CliError> {
    let s = spec.unwrap_or("1..6");
    let parse_one = |txt: &str| -> Result<usize, CliError> {
        txt.trim()
            .parse::<usize>()
            .map_err(|_| CliError::usage(format!("invalid k `{txt}` in --k-range")))
    };
    let (a, b) = if let Some((a, b)) = s.split_once("..=") {
        (parse_one(a)?, parse_one(b)?)
    } else if let Some((a, b)) = s.split_once("..") {
        (parse_one(a)?, parse_one(b)?)
    } else {
        let k = parse_one(s)?;
        (k, k)
    };
    if a == 0 || b < a {
        return Err(CliError::usage(format!("empty --k-range `{s}`")));
    }
    Ok((a..=b).collect())
}

fn require_path(
    flag: Option<PathBuf>,
    from_config: Option<&Path>,
    name: &str,
) -> Result<PathBuf, CliError> {
    flag.or_else(|| from_config.map(Path::to_path_buf))
        .ok_or_else(|| CliError::usage(format!("missing {name} (flag or config file)")))
}

fn ensure_dir(path: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

fn load_sim_options(
    matrix: Option<MatrixConvention>,
    offset: Option<OffsetConvention>,
    steer_limit: Option<f64>,
    cfg: &FileConfig,
) -> Result<SimOptions, CliError> {
    let matrix = match matrix {
        Some(m) => m,
        None => match &cfg.matrix_convention {
            Some(s) => s
                .parse()
                .map_err(|e: String| CliError::usage(e))?,
            None => MatrixConvention::default(),
        },
    };
    let offset = match offset {
        Some(o) => o,
        None => match &cfg.offset_convention {
            Some(s) => s
                .parse()
                .map_err(|e: String| CliError::usage(e))?,
            None => OffsetConvention::default(),
        },
    };
    Ok(SimOptions {
        matrix_convention: matrix,
        offset_convention: offset,
        steer_limit: steer_limit.or(cfg.steer_limit),
    })
}

fn load_profiles(
    vehicle: Option<&Path>,
    controller: Option<&Path>,
    cfg: &FileConfig,
) -> Result<(VehicleParams, ControllerParams), CliError> {
    let vp = match vehicle.or(cfg.vehicle.as_deref()) {
        Some(p) => io::load_vehicle_profile(p)?,
        None => VehicleParams::default(),
    };
    let cp = match controller.or(cfg.controller.as_deref()) {
        Some(p) => io::load_controller_profile(p)?,
        None => ControllerParams::default(),
    };
    Ok((vp, cp))
}

fn load_model(path: &Path) -> Result<BoundedGmm, CliError> {
    Ok(io::load_model(path)?.to_model(QmcConfig::default())?)
}

#[derive(Serialize)]
struct SynthManifest {
    seed: u64,
    n_per_side: usize,
    ts: f64,
    sides: Vec<Side>,
    noiseless: bool,
    config_hash: String,
    truth_left: Option<ModelFile>,
    truth_right: Option<ModelFile>,
}

fn cmd_synth_corpus(a: SynthArgs, cfg: &FileConfig) -> Result<(), CliError> {
    let n = a.n.or(cfg.n).unwrap_or(1000);
    let seed = a.seed.or(cfg.seed).unwrap_or(0);
    let ts = a.ts.or(cfg.ts).unwrap_or(0.05);
    let sides = parse_sides(a.side.as_deref().or(cfg.side.as_deref()))?;
    let noiseless = a.noiseless || cfg.noiseless.unwrap_or(false);
    let out = require_path(a.out, cfg.out.as_deref(), "--out")?;
    ensure_dir(&out)?;

    let truth = |side: Side, path: Option<&Path>| -> Result<BoundedGmm, CliError> {
        match path {
            Some(p) => load_model(p),
            None => Ok(demo_truth_model(side)),
        }
    };

    #[derive(Serialize)]
    struct Resolved<'a> {
        command: &'a str,
        seed: u64,
        n: usize,
        ts: f64,
        sides: &'a [Side],
        noiseless: bool,
    }
    let hash = config_hash(&Resolved {
        command: "synth-corpus",
        seed,
        n,
        ts,
        sides: &sides,
        noiseless,
    })?;

    let mut all_events = Vec::new();
    let mut truth_left = None;
    let mut truth_right = None;
    for side in &sides {
        let model = truth(*side, match side {
            Side::Left => a.truth_l.as_deref().or(cfg.truth_l.as_deref()),
            Side::Right => a.truth_r.as_deref().or(cfg.truth_r.as_deref()),
        })?;
        let side_seed = derive_seed(seed, match side {
            Side::Left => 0x4c,
            Side::Right => 0x52,
        });
        let model_for_corpus = if noiseless {
            zero_noise_model(&model)?
        } else {
            model.clone()
        };
        let (events, stats) = generate_corpus_detailed(&model_for_corpus, n, ts, side_seed)?;
        eprintln!(
            "side {side}: {} events, {} clamped speed samples",
            stats.events, stats.clamped_speed_samples
        );
        all_events.extend(events);
        let file = ModelFile::from_model(
            &model,
            ModelMeta {
                seed: side_seed,
                data_hash: String::new(),
                loglik: None,
                bic: None,
            },
        );
        match side {
            Side::Left => truth_left = Some(file),
            Side::Right => truth_right = Some(file),
        }
    }

    let comment = format!("config_hash={hash} seed={seed}");
    io::write_events_csv_path(&out.join("events.csv"), &all_events, Some(&comment))?;
    let manifest = SynthManifest {
        seed,
        n_per_side: n,
        ts,
        sides,
        noiseless,
        config_hash: hash,
        truth_left,
        truth_right,
    };
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| CliError::data(e.to_string()))?;
    std::fs::write(out.join("manifest.json"), json + "\n")
        .map_err(|e| CliError::data(e.to_string()))?;
    println!(
        "wrote {} events to {}",
        all_events.len(),
        out.join("events.csv").display()
    );
    Ok(())
}

/// Same mixture with the residual-std channels collapsed to (near) zero,
/// for smooth-skeleton corpora.
fn zero_noise_model(model: &BoundedGmm) -> Result<BoundedGmm, CliError> {
    let k = model.k();
    let mut means = Vec::with_capacity(k);
    let mut covs = Vec::with_capacity(k);
    let mut lower = model.bounds().lower.clone();
    let mut upper = model.bounds().upper.clone();
    // sigma_y at index 2, sigma_v at index 5
    for idx in [2, 5] {
        lower[idx] = 0.0;
        upper[idx] = 1e-6;
    }
    for j in 0..k {
        let mut mu = model.mean(j).clone();
        let mut cov = model.covariance(j).clone();
        for idx in [2, 5] {
            mu[idx] = 1e-7;
            for c in 0..cov.ncols() {
                cov[(idx, c)] = 0.0;
                cov[(c, idx)] = 0.0;
            }
            cov[(idx, idx)] = 1e-16;
        }
        means.push(mu);
        covs.push(cov);
    }
    Ok(BoundedGmm::new(
        model.weights().to_vec(),
        means,
        covs,
        Bounds::new(lower, upper)?,
        *model.qmc(),
    )?)
}

fn cmd_extract(a: ExtractArgs, cfg: &FileConfig) -> Result<(), CliError> {
    let events_path = require_path(a.events, cfg.events.as_deref(), "--events")?;
    let out = require_path(a.out, cfg.out.as_deref(), "--out")?;
    let events = io::read_events_csv(&events_path)?;
    let mut rows = Vec::new();
    let mut rejected_duration = 0usize;
    let mut rejected_speed = 0usize;
    for e in &events {
        match filter_event(e)? {
            FilterDecision::Accept => rows.push(FeatureRow {
                event_id: e.event_id().to_string(),
                side: e.side(),
                features: extract_features(e)?,
            }),
            FilterDecision::Reject(RejectReason::Duration) => rejected_duration += 1,
            FilterDecision::Reject(RejectReason::Speed) => rejected_speed += 1,
        }
    }
    #[derive(Serialize)]
    struct Resolved<'a> {
        command: &'a str,
        events: String,
    }
    let hash = config_hash(&Resolved {
        command: "extract",
        events: events_path.display().to_string(),
    })?;
    io::write_features_csv_path(&out, &rows, Some(&format!("config_hash={hash}")))?;
    println!(
        "extracted {} of {} events ({} rejected: duration, {} rejected: speed)",
        rows.len(),
        events.len(),
        rejected_duration,
        rejected_speed
    );
    Ok(())
}

#[derive(Deserialize)]
struct BoundsFile {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

fn cmd_fit(a: FitArgs, cfg: &FileConfig) -> Result<(), CliError> {
    let seed = a.seed.or(cfg.seed).unwrap_or(0);
    let ks = parse_k_range(a.k_range.as_deref().or(cfg.k_range.as_deref()))?;
    let sides = parse_sides(a.side.as_deref().or(cfg.side.as_deref()))?;
    let qmc_samples = a
        .samples
        .or(cfg.samples)
        .unwrap_or(QmcConfig::default().samples);
    let features_path = require_path(a.features, cfg.features.as_deref(), "--features")?;
    let out = require_path(a.out, cfg.out.as_deref(), "--out")?;
    ensure_dir(&out)?;

    let rows = io::read_features_csv(&features_path)?;
    let bounds_path = a.bounds.or_else(|| cfg.bounds.clone());
    let explicit_bounds: Option<BoundsFile> = match &bounds_path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::data(format!("{}: {e}", p.display())))?;
            Some(
                serde_json::from_str(&text)
                    .map_err(|e| CliError::data(format!("{}: {e}", p.display())))?,
            )
        }
        None => None,
    };

    for side in sides {
        let data = io::side_matrix(&rows, side);
        if data.nrows() == 0 {
            eprintln!("side {side}: no rows, skipped");
            continue;
        }
        let bounds = match &explicit_bounds {
            Some(b) => Bounds::new(b.lower.clone(), b.upper.clone())?,
            None => default_feature_bounds(&data)?,
        };
        let em = EmConfig {
            seed,
            qmc_samples,
            ..EmConfig::default()
        };
        let (best_k, curve) = select_components(&data, &bounds, &ks, &em)?;
        // refit the winner: deterministic given the same derived seed
        let refit_cfg = EmConfig {
            seed: derive_seed(seed, best_k as u64),
            ..em
        };
        let (model, report) = fit_em(&data, best_k, &bounds, &refit_cfg)?;
        let bic = model.bic(&data)?;

        #[derive(Serialize)]
        struct Resolved<'a> {
            command: &'a str,
            side: Side,
            seed: u64,
            ks: &'a [usize],
            qmc_samples: usize,
            n_rows: usize,
        }
        let hash = config_hash(&Resolved {
            command: "fit",
            side,
            seed,
            ks: &ks,
            qmc_samples,
            n_rows: data.nrows(),
        })?;

        let file = ModelFile::from_model(
            &model,
            ModelMeta {
                seed: refit_cfg.seed,
                data_hash: data_hash(&data),
                loglik: Some(report.loglik),
                bic: Some(bic),
            },
        );
        let model_path = out.join(format!("model_{side}.json"));
        io::save_model(&model_path, &file)?;

        let curve_path = out.join(format!("bic_{side}.csv"));
        let f = std::fs::File::create(&curve_path)
            .map_err(|e| CliError::data(format!("{}: {e}", curve_path.display())))?;
        let mut out = std::io::BufWriter::new(f);
        use std::io::Write;
        writeln!(out, "# config_hash={hash} seed={seed}")
            .map_err(|e| CliError::data(e.to_string()))?;
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["k", "bic", "loglik", "iterations", "converged", "error"])
            .map_err(|e| CliError::data(e.to_string()))?;
        for entry in &curve {
            w.write_record(&[
                entry.k.to_string(),
                entry.bic.map(|v| v.to_string()).unwrap_or_default(),
                entry.loglik.map(|v| v.to_string()).unwrap_or_default(),
                entry
                    .iterations
                    .map(|v| v.to_string())
                    .unwrap_or_default(),
                entry
                    .converged
                    .map(|v| v.to_string())
                    .unwrap_or_default(),
                entry.error.clone().unwrap_or_default(),
            ])
            .map_err(|e| CliError::data(e.to_string()))?;
        }
        w.flush().map_err(|e| CliError::data(e.to_string()))?;
        println!(
            "side {side}: N = {}, best K = {best_k}, loglik = {:.3}, bic = {:.3} -> {}",
            data.nrows(),
            report.loglik,
            bic,
            model_path.display()
        );
    }
    Ok(())
}

fn cmd_sample(a: SampleArgs, cfg: &FileConfig) -> Result<(), CliError> {
    let n = a.n.or(cfg.n).unwrap_or(1000);
    let seed = a.seed.or(cfg.seed).unwrap_or(0);
    let model_path = require_path(a.model, cfg.model.as_deref(), "--model")?;
    let out = require_path(a.out, cfg.out.as_deref(), "--out")?;
    let model = load_model(&model_path)?;
    if model.dim() != FeatureVector::DIM {
        return Err(CliError::data(format!(
            "model dimension {} is not a feature model",
            model.dim()
        )));
    }
    let draws = model.sample(n, seed)?;
    let mut rows = Vec::with_capacity(n);
    for i in 0..n {
        let mut arr = [0.0; FeatureVector::DIM];
        for j in 0..FeatureVector::DIM {
            arr[j] = draws[(i, j)];
        }
        let features = FeatureVector::from_array(arr);
        let side = if features.d_y < 0.0 {
            Side::Left
        } else {
            Side::Right
        };
        rows.push(FeatureRow {
            event_id: format!("sample-{seed:016x}-{i:05}"),
            side,
            features,
        });
    }
    #[derive(Serialize)]
    struct Resolved<'a> {
        command: &'a str,
        n: usize,
        seed: u64,
    }
    let hash = config_hash(&Resolved {
        command: "sample",
        n,
        seed,
    })?;
    io::write_features_csv_path(&out, &rows, Some(&format!("config_hash={hash} seed={seed}")))?;
    println!("wrote {n} samples to {}", out.display());
    Ok(())
}

fn cmd_simulate(a: SimulateArgs, cfg: &FileConfig) -> Result<(), CliError> {
    let seed = a.seed.or(cfg.seed).unwrap_or(0);
    let ts = a.ts.or(cfg.ts).unwrap_or(0.05);
    let n = a.n.or(cfg.n).unwrap_or(20);
    let sim = load_sim_options(a.matrix_convention, a.offset_convention, a.steer_limit, cfg)?;
    let (vehicle, controller) =
        load_profiles(a.vehicle.as_deref(), a.controller.as_deref(), cfg)?;
    let out = require_path(a.out, cfg.out.as_deref(), "--out")?;
    ensure_dir(&out)?;

    let model_arg = a.model.or_else(|| cfg.model.clone());
    let events_arg = a.events.or_else(|| cfg.events.clone());
    let events = match (&model_arg, &events_arg) {
        (Some(model_path), None) => {
            let model = load_model(model_path)?;
            ldc_core::synthesis::generate_corpus(&model, n, ts, seed)?
        }
        (None, Some(events_path)) => io::read_events_csv(events_path)?,
        _ => {
            return Err(CliError::usage(
                "simulate needs exactly one of --model or --events",
            ))
        }
    };

    #[derive(Serialize)]
    struct Resolved<'a> {
        command: &'a str,
        seed: u64,
        ts: f64,
        sim: &'a SimOptions,
        n_events: usize,
    }
    let hash = config_hash(&Resolved {
        command: "simulate",
        seed,
        ts,
        sim: &sim,
        n_events: events.len(),
    })?;
    let comment = format!("config_hash={hash} seed={seed}");

    let mut triggered = 0usize;
    for event in &events {
        let outcome = ldc_core::controller::run_controlled(event, &vehicle, &controller, &sim)?;
        if matches!(outcome, ldc_core::controller::ControlOutcome::Triggered(_)) {
            triggered += 1;
        }
        let path = out.join(format!("trajectory_{}.csv", event.event_id()));
        let f = std::fs::File::create(&path)
            .map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
        io::write_trajectory_csv(std::io::BufWriter::new(f), &outcome, Some(&comment))?;
    }
    println!(
        "simulated {} events ({} triggered) into {}",
        events.len(),
        triggered,
        out.display()
    );
    Ok(())
}

fn cmd_evaluate(a: EvaluateArgs, cfg: &FileConfig) -> Result<(), CliError> {
    let seed = a.seed.or(cfg.seed).unwrap_or(0);
    let ts = a.ts.or(cfg.ts).unwrap_or(0.05);
    let n = a.n.or(cfg.n).unwrap_or(200);
    let sim = load_sim_options(a.matrix_convention, a.offset_convention, a.steer_limit, cfg)?;
    let (vehicle, controller) =
        load_profiles(a.vehicle.as_deref(), a.controller.as_deref(), cfg)?;
    let plot_data = a.plot_data || cfg.plot_data.unwrap_or(false);
    let sweep = a.sweep.clone().or_else(|| cfg.sweep.clone());
    let out = require_path(a.out, cfg.out.as_deref(), "--out")?;
    ensure_dir(&out)?;

    let model_l_path = a.model_l.or_else(|| cfg.model_l.clone());
    let model_r_path = a.model_r.or_else(|| cfg.model_r.clone());
    let model_l = model_l_path.as_deref().map(load_model).transpose()?;
    let model_r = model_r_path.as_deref().map(load_model).transpose()?;
    if model_l.is_none() && model_r.is_none() {
        return Err(CliError::usage("evaluate needs --model-l and/or --model-r"));
    }

    #[derive(Serialize)]
    struct Resolved<'a> {
        command: &'a str,
        seed: u64,
        ts: f64,
        n: usize,
        sim: &'a SimOptions,
        sweep: &'a Option<Vec<usize>>,
    }
    let hash = config_hash(&Resolved {
        command: "evaluate",
        seed,
        ts,
        n,
        sim: &sim,
        sweep: &sweep,
    })?;

    let eval_cfg = EvalConfig {
        n_per_side: n,
        ts,
        seed,
        sim,
    };
    let mut report = evaluate_batch(
        model_l.as_ref(),
        model_r.as_ref(),
        &vehicle,
        &controller,
        &eval_cfg,
    )?;
    report.meta.config_hash = Some(hash.clone());
    io::write_report_json(&out.join("report.json"), &report)?;
    let comment = format!("config_hash={hash} seed={seed}");
    let f = std::fs::File::create(out.join("report.csv"))
        .map_err(|e| CliError::data(e.to_string()))?;
    io::write_report_csv(std::io::BufWriter::new(f), &report, Some(&comment))?;

    for agg in [&report.left, &report.right].into_iter().flatten() {
        match (agg.reduction_percent, agg.mean_paired_reduction_percent) {
            (Some(r), Some(pr)) => println!(
                "side {}: n = {}, triggered = {}, mean reduction = {:.2}%, paired mean = {:.2}%",
                agg.side, agg.n_events, agg.n_triggered, r, pr
            ),
            _ => println!(
                "side {}: n = {}, triggered = {} (comparison undefined)",
                agg.side, agg.n_events, agg.n_triggered
            ),
        }
    }

    if plot_data {
        let f = std::fs::File::create(out.join("plot_means.csv"))
            .map_err(|e| CliError::data(e.to_string()))?;
        io::write_plot_means_csv(std::io::BufWriter::new(f), &report, Some(&comment))?;
    }
    if let Some(ns) = sweep {
        let reports = sweep_report(
            model_l.as_ref(),
            model_r.as_ref(),
            &vehicle,
            &controller,
            &eval_cfg,
            &ns,
        )?;
        let rows = sweep_table(&reports);
        let f = std::fs::File::create(out.join("sweep.csv"))
            .map_err(|e| CliError::data(e.to_string()))?;
        io::write_sweep_csv(std::io::BufWriter::new(f), &rows, Some(&comment))?;
        println!("sweep over {ns:?} written to sweep.csv");
    }
    Ok(())
}
