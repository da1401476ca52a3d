//! Batch front end for the margin toolkit.
//!
//! Subcommands form a pipeline around one artifact directory (`--out`,
//! default `out/`):
//!
//! * `gen-dataset` — sample scenarios × contingencies, label each with its
//!   co-simulated margin → `dataset.csv`.
//! * `train` — fit the explicit margin expression → `model.toml`,
//!   `train_report.toml`; with `--case`, also one boundary model per feeder
//!   → `dx_<feeder>.toml`.
//! * `validate` — score the saved model on the full dataset plus k-fold
//!   cross-validation → `validation.toml`, `validation.md`.
//! * `optimize` — a single coordination round → `optimize/` artifact set.
//! * `run-loop` — iterate rounds to the margin target →
//!   `run_<weights>/` artifact set (`trace.txt`, `vsm_iterations.csv`,
//!   `dispatch_tx.csv`, `dispatch_dx_<feeder>.csv`, `report.md`).
//! * `report` — summarize whatever artifacts exist → `report.md`.
//!
//! Exit codes: 0 success, 1 usage, 2 data/config problem, 3 numerical
//! failure. Progress and diagnostics go to standard error; standard output
//! stays empty (artifacts are files).

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use vsmkit::coord::{self, LoopConfig};
use vsmkit::margin::{
    dataset_sha256, generate_dataset, Dataset, DatasetConfig, MarginConfig, MarginError,
    SamplingConfig,
};
use vsmkit::mlpvsm::{
    kfold_cv, mae_pct, r2, train_dx_model, train_model, DxTrainConfig, ModelError, TrainConfig,
    VsmModel,
};
use vsmkit::netmodel::{load_case, Case};
use vsmkit::tsopt::WeightMode;

#[derive(Parser)]
#[command(
    name = "vsmkit",
    version,
    about = "Voltage stability margins from transmission-distribution co-simulation: \
             dataset generation, explicit surrogate training, and coordinated reactive dispatch"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Sample probabilistic scenarios x contingencies and label each with its
    /// co-simulated voltage stability margin.
    GenDataset(GenDatasetArgs),
    /// Fit the explicit margin expression on the generated dataset.
    Train(TrainArgs),
    /// Score the saved model: full-dataset metrics plus k-fold cross-validation.
    Validate(ValidateArgs),
    /// Run a single coordination round (transmission QP + feeder redispatch).
    Optimize(RunArgs),
    /// Iterate coordination rounds until the margin target is reached.
    RunLoop(RunArgs),
    /// Summarize artifacts in the output directory as Markdown tables.
    Report(ReportArgs),
}

/// Flags shared by every subcommand.
#[derive(Args)]
struct Common {
    /// TOML run configuration; omitted sections fall back to defaults.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Artifact directory.
    #[arg(long, value_name = "DIR", default_value = "out")]
    out: PathBuf,
    /// Worker threads (default: all cores).
    #[arg(long, value_name = "N")]
    jobs: Option<usize>,
    /// Chattier progress on standard error.
    #[arg(long)]
    verbose: bool,
}

#[derive(Args)]
struct GenDatasetArgs {
    /// Network case file.
    #[arg(long, value_name = "PATH")]
    case: PathBuf,
    /// Override the scenario-sampling seed from the config.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct TrainArgs {
    /// Network case file; when given, per-feeder boundary models are trained
    /// alongside the margin model.
    #[arg(long, value_name = "PATH")]
    case: Option<PathBuf>,
    /// Override the training seed from the config.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct ValidateArgs {
    /// Override the fold-shuffle seed from the config.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct RunArgs {
    /// Network case file.
    #[arg(long, value_name = "PATH")]
    case: PathBuf,
    /// Control-weighting scheme.
    #[arg(long, value_enum, value_name = "MODE")]
    weights: Option<WeightsArg>,
    /// Margin target, MW.
    #[arg(long, value_name = "MW")]
    target: Option<f64>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct ReportArgs {
    /// Network case file for the system-inventory section.
    #[arg(long, value_name = "PATH")]
    case: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum WeightsArg {
    Sensitivity,
    Equal,
}

impl From<WeightsArg> for WeightMode {
    fn from(w: WeightsArg) -> WeightMode {
        match w {
            WeightsArg::Sensitivity => WeightMode::Sensitivity,
            WeightsArg::Equal => WeightMode::Equal,
        }
    }
}

// ---------------------------------------------------------------------------
// Config file
// ---------------------------------------------------------------------------

/// On-disk run configuration. Every section is optional and falls back to
/// the library defaults; unknown keys are rejected.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct FileConfig {
    sampling: SamplingConfig,
    margin: MarginConfig,
    train: TrainConfig,
    dx_train: DxTrainConfig,
    #[serde(rename = "loop")]
    run: LoopSection,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct LoopSection {
    target_mw: Option<f64>,
    weights: String,
    max_iters: usize,
    tol_mw: f64,
    /// Phase-imbalance allowance for feeder redispatch.
    alpha: f64,
}

impl Default for LoopSection {
    fn default() -> Self {
        LoopSection {
            target_mw: None,
            weights: "sensitivity".into(),
            max_iters: coord::MAX_ITERS,
            tol_mw: coord::VSM_TOL_MW,
            alpha: 0.0,
        }
    }
}

// ---------------------------------------------------------------------------
// Errors and exit codes
// ---------------------------------------------------------------------------

struct CliError {
    code: u8,
    message: String,
}

impl CliError {
    fn config(message: impl Into<String>) -> Self {
        CliError {
            code: 2,
            message: message.into(),
        }
    }

    fn numerical(message: impl Into<String>) -> Self {
        CliError {
            code: 3,
            message: message.into(),
        }
    }
}

fn classify_margin(e: MarginError) -> CliError {
    match e {
        MarginError::Config(_)
        | MarginError::Parse { .. }
        | MarginError::Io(_)
        | MarginError::Islanding { .. } => CliError::config(e.to_string()),
        _ => CliError::numerical(e.to_string()),
    }
}

fn classify_model(e: ModelError) -> CliError {
    match e {
        ModelError::Shape(_)
        | ModelError::Parse(_)
        | ModelError::Io(_)
        | ModelError::DegenerateTarget => CliError::config(e.to_string()),
        ModelError::Dx(_) => CliError::numerical(e.to_string()),
    }
}

fn classify_coord(e: coord::CoordError) -> CliError {
    use vsmkit::tsopt::TsoError;
    match e {
        coord::CoordError::MissingDxModel(_) => CliError::config(e.to_string()),
        coord::CoordError::Tso(TsoError::FeatureMismatch(_)) => CliError::config(e.to_string()),
        coord::CoordError::Io(_) => CliError::config(e.to_string()),
        _ => CliError::numerical(e.to_string()),
    }
}

// ---------------------------------------------------------------------------
// Entry
// ---------------------------------------------------------------------------

fn main() -> ExitCode {
    match Cli::try_parse() {
        Ok(cli) => match run(cli) {
            Ok(()) => ExitCode::SUCCESS,
            Err(e) => {
                eprintln!("vsmkit: {}", e.message);
                ExitCode::from(e.code)
            }
        },
        Err(e) => {
            // --help/--version land here under try_parse; keep them exit 0.
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            ExitCode::from(code)
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let jobs = match &cli.cmd {
        Cmd::GenDataset(a) => a.common.jobs,
        Cmd::Train(a) => a.common.jobs,
        Cmd::Validate(a) => a.common.jobs,
        Cmd::Optimize(a) | Cmd::RunLoop(a) => a.common.jobs,
        Cmd::Report(a) => a.common.jobs,
    };
    if let Some(n) = jobs {
        if n == 0 {
            return Err(CliError::config("--jobs must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::config(format!("thread pool: {e}")))?;
    }
    match cli.cmd {
        Cmd::GenDataset(a) => cmd_gen_dataset(a),
        Cmd::Train(a) => cmd_train(a),
        Cmd::Validate(a) => cmd_validate(a),
        Cmd::Optimize(a) => cmd_run(a, true),
        Cmd::RunLoop(a) => cmd_run(a, false),
        Cmd::Report(a) => cmd_report(a),
    }
}

// ---------------------------------------------------------------------------
// Shared plumbing
// ---------------------------------------------------------------------------

fn load_case_cli(path: &Path) -> Result<Case, CliError> {
    load_case(path).map_err(|e| CliError::config(format!("case {}: {e}", path.display())))
}

fn load_config(path: Option<&Path>) -> Result<FileConfig, CliError> {
    let Some(path) = path else {
        return Ok(FileConfig::default());
    };
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::config(format!("config {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| CliError::config(format!("config {}: {e}", path.display())))
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir)
        .map_err(|e| CliError::config(format!("creating {}: {e}", dir.display())))
}

fn write_text(path: &Path, body: &str) -> Result<(), CliError> {
    fs::write(path, body).map_err(|e| CliError::config(format!("writing {}: {e}", path.display())))
}

fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path)
        .map_err(|e| CliError::config(format!("reading {}: {e}", path.display())))
}

fn parse_mode(s: &str) -> Result<WeightMode, CliError> {
    match s {
        "sensitivity" => Ok(WeightMode::Sensitivity),
        "equal" => Ok(WeightMode::Equal),
        other => Err(CliError::config(format!(
            "weights must be \"sensitivity\" or \"equal\", got {other:?}"
        ))),
    }
}

fn mode_label(mode: WeightMode) -> &'static str {
    match mode {
        WeightMode::Sensitivity => "sensitivity",
        WeightMode::Equal => "equal",
    }
}

fn load_model(dir: &Path) -> Result<VsmModel, CliError> {
    let path = dir.join("model.toml");
    VsmModel::load(&path).map_err(|e| {
        CliError::config(format!(
            "model {}: {e} (run `vsmkit train` first?)",
            path.display()
        ))
    })
}

fn load_dataset(dir: &Path) -> Result<Dataset, CliError> {
    let path = dir.join("dataset.csv");
    Dataset::load_csv(&path).map_err(|e| {
        CliError::config(format!(
            "dataset {}: {e} (run `vsmkit gen-dataset` first?)",
            path.display()
        ))
    })
}

/// Per-feeder boundary models for sensitivity-weighted redispatch.
fn load_dx_models(case: &Case, dir: &Path) -> Result<HashMap<String, VsmModel>, CliError> {
    let mut models = HashMap::new();
    for link in &case.links {
        if models.contains_key(&link.feeder) {
            continue;
        }
        let path = dir.join(format!("dx_{}.toml", link.feeder));
        let m = VsmModel::load(&path).map_err(|e| {
            CliError::config(format!(
                "boundary model {}: {e} (run `vsmkit train --case ...` first?)",
                path.display()
            ))
        })?;
        models.insert(link.feeder.clone(), m);
    }
    Ok(models)
}

// ---------------------------------------------------------------------------
// gen-dataset
// ---------------------------------------------------------------------------

fn cmd_gen_dataset(a: GenDatasetArgs) -> Result<(), CliError> {
    let case = load_case_cli(&a.case)?;
    let fc = load_config(a.common.config.as_deref())?;
    let mut sampling = fc.sampling;
    if let Some(seed) = a.seed {
        sampling.seed = seed;
    }
    if a.common.verbose {
        eprintln!(
            "vsmkit: sampling {} scenarios (seed {}) x {} contingencies",
            sampling.n_scenarios,
            sampling.seed,
            sampling.contingencies.len()
        );
    }
    let cfg = DatasetConfig {
        sampling,
        margin: fc.margin,
    };
    let t0 = Instant::now();
    let (ds, warnings) = generate_dataset(&case, &cfg).map_err(classify_margin)?;
    for wmsg in &warnings {
        eprintln!("vsmkit: warning: {wmsg}");
    }
    if ds.rows.is_empty() {
        return Err(CliError::numerical(
            "no scenario produced a defined margin; dataset is empty",
        ));
    }
    ensure_dir(&a.common.out)?;
    let csv = ds.to_csv();
    let path = a.common.out.join("dataset.csv");
    write_text(&path, &csv)?;
    eprintln!(
        "vsmkit: {} rows -> {} ({:.1} s, sha256 {})",
        ds.rows.len(),
        path.display(),
        t0.elapsed().as_secs_f64(),
        &dataset_sha256(&csv)[..12]
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

/// Persisted training metrics (`train_report.toml`).
#[derive(Debug, Serialize, Deserialize)]
struct TrainSummary {
    n_rows: usize,
    hidden: usize,
    epochs_run: usize,
    best_epoch: usize,
    train_r2: f64,
    val_r2: f64,
    val_mae_pct: f64,
    dataset_sha256: String,
}

fn cmd_train(a: TrainArgs) -> Result<(), CliError> {
    let fc = load_config(a.common.config.as_deref())?;
    let mut cfg = fc.train;
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    let ds = load_dataset(&a.common.out)?;
    if ds.rows.len() < 50 {
        return Err(CliError::config(format!(
            "{} samples in dataset; ≥ 50 samples required",
            ds.rows.len()
        )));
    }
    let sha = dataset_sha256(&ds.to_csv());
    let t0 = Instant::now();
    let (model, report) = train_model(&ds, &cfg, &sha).map_err(classify_model)?;
    let model_path = a.common.out.join("model.toml");
    model
        .save(&model_path)
        .map_err(|e| CliError::config(format!("writing {}: {e}", model_path.display())))?;
    let summary = TrainSummary {
        n_rows: ds.rows.len(),
        hidden: cfg.hidden,
        epochs_run: report.epochs_run,
        best_epoch: report.best_epoch,
        train_r2: report.train_r2,
        val_r2: report.val_r2,
        val_mae_pct: report.val_mae_pct,
        dataset_sha256: sha,
    };
    let toml_body = toml::to_string_pretty(&summary)
        .map_err(|e| CliError::config(format!("serializing train report: {e}")))?;
    write_text(&a.common.out.join("train_report.toml"), &toml_body)?;
    eprintln!(
        "vsmkit: model -> {} (val R2 {:.4}, MAE {:.2}%, {:.1} s)",
        model_path.display(),
        report.val_r2,
        report.val_mae_pct,
        t0.elapsed().as_secs_f64()
    );

    if let Some(case_path) = &a.case {
        let case = load_case_cli(case_path)?;
        for link in &case.links {
            let fi = case
                .feeder_index(&link.feeder)
                .ok_or_else(|| CliError::config(format!("case has no feeder {}", link.feeder)))?;
            let (dx, dx_report) =
                train_dx_model(&case.feeders[fi], link, &fc.dx_train).map_err(classify_model)?;
            let path = a.common.out.join(format!("dx_{}.toml", link.feeder));
            dx.save(&path)
                .map_err(|e| CliError::config(format!("writing {}: {e}", path.display())))?;
            if a.common.verbose {
                eprintln!(
                    "vsmkit: boundary model {} -> {} (val R2 {:.4})",
                    link.feeder,
                    path.display(),
                    dx_report.val_r2
                );
            }
        }
        eprintln!("vsmkit: {} boundary model(s) trained", case.links.len());
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// validate
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct FoldSummary {
    r2: f64,
    mae_pct: f64,
    n_test: usize,
}

/// Persisted validation metrics (`validation.toml`).
#[derive(Debug, Serialize, Deserialize)]
struct ValidationSummary {
    n_rows: usize,
    r2_full: f64,
    mae_pct_full: f64,
    cv_mean_r2: f64,
    cv_mean_mae_pct: f64,
    folds: Vec<FoldSummary>,
}

fn cmd_validate(a: ValidateArgs) -> Result<(), CliError> {
    let fc = load_config(a.common.config.as_deref())?;
    let mut cfg = fc.train;
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    let ds = load_dataset(&a.common.out)?;
    let model = load_model(&a.common.out)?;
    if model.features != ds.features {
        return Err(CliError::config(
            "model feature layout does not match the dataset; regenerate or retrain",
        ));
    }
    let x: Vec<Vec<f64>> = ds.rows.iter().map(|r| r.x.clone()).collect();
    let y: Vec<f64> = ds.rows.iter().map(|r| r.vsm_mw).collect();
    let y_hat: Vec<f64> = x.iter().map(|xi| model.forward(xi)).collect();
    let r2_full = r2(&y, &y_hat).map_err(classify_model)?;
    let mae_full = mae_pct(&y, &y_hat).map_err(classify_model)?;
    let t0 = Instant::now();
    let folds = kfold_cv(&x, &y, &ds.features, &cfg).map_err(classify_model)?;
    let cv_mean_r2 = folds.iter().map(|f| f.r2).sum::<f64>() / folds.len() as f64;
    let cv_mean_mae = folds.iter().map(|f| f.mae_pct).sum::<f64>() / folds.len() as f64;

    let summary = ValidationSummary {
        n_rows: ds.rows.len(),
        r2_full,
        mae_pct_full: mae_full,
        cv_mean_r2,
        cv_mean_mae_pct: cv_mean_mae,
        folds: folds
            .iter()
            .map(|f| FoldSummary {
                r2: f.r2,
                mae_pct: f.mae_pct,
                n_test: f.n_test,
            })
            .collect(),
    };
    let toml_body = toml::to_string_pretty(&summary)
        .map_err(|e| CliError::config(format!("serializing validation report: {e}")))?;
    write_text(&a.common.out.join("validation.toml"), &toml_body)?;

    let mut md = String::new();
    md.push_str("# Model validation\n\n");
    md.push_str(&format!(
        "- samples: {}\n- full-dataset R²: {:.4}\n- full-dataset MAE: {:.2}%\n\
         - {}-fold CV mean R²: {:.4}\n- {}-fold CV mean MAE: {:.2}%\n\n",
        ds.rows.len(),
        r2_full,
        mae_full,
        folds.len(),
        cv_mean_r2,
        folds.len(),
        cv_mean_mae
    ));
    md.push_str("| fold | held-out R² | held-out MAE (%) | n |\n|---:|---:|---:|---:|\n");
    for (i, f) in folds.iter().enumerate() {
        md.push_str(&format!(
            "| {} | {:.4} | {:.2} | {} |\n",
            i + 1,
            f.r2,
            f.mae_pct,
            f.n_test
        ));
    }
    write_text(&a.common.out.join("validation.md"), &md)?;
    eprintln!(
        "vsmkit: full R2 {:.4}, CV mean R2 {:.4} over {} folds ({:.1} s)",
        r2_full,
        cv_mean_r2,
        folds.len(),
        t0.elapsed().as_secs_f64()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// optimize / run-loop
// ---------------------------------------------------------------------------

fn cmd_run(a: RunArgs, single_round: bool) -> Result<(), CliError> {
    let case = load_case_cli(&a.case)?;
    let fc = load_config(a.common.config.as_deref())?;
    let mode = match a.weights {
        Some(w) => w.into(),
        None => parse_mode(&fc.run.weights)?,
    };
    let target = a.target.or(fc.run.target_mw).ok_or_else(|| {
        CliError::config("no margin target: pass --target MW or set [loop].target_mw")
    })?;
    let mut cfg = LoopConfig::new(target, mode);
    cfg.tol_mw = fc.run.tol_mw;
    cfg.alpha = fc.run.alpha;
    cfg.max_iters = if single_round { 1 } else { fc.run.max_iters };

    let model = load_model(&a.common.out)?;
    let dx_models = match mode {
        WeightMode::Sensitivity => load_dx_models(&case, &a.common.out)?,
        WeightMode::Equal => HashMap::new(),
    };
    if a.common.verbose {
        eprintln!(
            "vsmkit: {} towards {:.2} MW with {} weights (max {} round(s))",
            if single_round { "one round" } else { "looping" },
            target,
            mode_label(mode),
            cfg.max_iters
        );
    }
    let t0 = Instant::now();
    let trace = coord::run_loop(&case, &model, &dx_models, &cfg).map_err(classify_coord)?;
    let dir = if single_round {
        a.common.out.join("optimize")
    } else {
        a.common.out.join(format!("run_{}", mode_label(mode)))
    };
    coord::write_outputs(&trace, &case, &dir).map_err(classify_coord)?;
    eprintln!(
        "vsmkit: margin {:.2} -> {:.2} MW in {} round(s) ({:.1} s) -> {}",
        trace.vsm_initial,
        trace.vsm_final,
        trace.n_iterations(),
        t0.elapsed().as_secs_f64(),
        dir.display()
    );
    if let Some(msg) = &trace.abort {
        eprintln!("vsmkit: aborted: {msg}");
    }
    // A single diagnostic round is useful even when it cannot reach the
    // target, so `optimize` only fails on an abort; the full loop fails
    // whenever the target is not met.
    let failed = if single_round {
        trace.abort.is_some()
    } else {
        !trace.converged
    };
    if failed {
        return Err(CliError::numerical(format!(
            "margin target {:.2} MW not reached (final {:.2} MW); see {}",
            target,
            trace.vsm_final,
            dir.join("trace.txt").display()
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

/// Flat `key = value` lines from a trace header (everything before the first
/// `[iteration ...]` block).
fn parse_trace_header(text: &str) -> HashMap<String, String> {
    let mut map = HashMap::new();
    for line in text.lines() {
        if line.starts_with('[') {
            break;
        }
        if let Some((k, v)) = line.split_once(" = ") {
            map.insert(k.trim().to_string(), v.trim().to_string());
        }
    }
    map
}

/// `a_v` / `a_q` lines from the first iteration block, if any.
fn parse_first_round_weights(text: &str) -> Option<(Vec<f64>, Vec<f64>)> {
    let start = text.find("[iteration 1]")?;
    let block: Vec<&str> = text[start..]
        .lines()
        .skip(1)
        .take_while(|l| !l.starts_with('['))
        .collect();
    let grab = |key: &str| -> Option<Vec<f64>> {
        block.iter().find_map(|l| {
            let rest = l.strip_prefix(key)?.strip_prefix(" = ")?;
            rest.split_whitespace()
                .map(|t| t.parse::<f64>().ok())
                .collect()
        })
    };
    Some((grab("a_v")?, grab("a_q")?))
}

fn cmd_report(a: ReportArgs) -> Result<(), CliError> {
    let out = &a.common.out;
    if !out.is_dir() {
        return Err(CliError::config(format!(
            "no artifact directory {}",
            out.display()
        )));
    }
    let mut md = String::new();
    md.push_str("# Study summary\n");
    let mut have_anything = false;

    if let Some(case_path) = &a.case {
        let case = load_case_cli(case_path)?;
        let units = case.tx.units();
        let n_ders: usize = case.feeders.iter().map(|f| f.ders.len()).sum();
        md.push_str("\n## System\n\n");
        md.push_str("| quantity | count |\n|---|---:|\n");
        md.push_str(&format!("| transmission buses | {} |\n", case.tx.buses.len()));
        md.push_str(&format!(
            "| transmission branches | {} |\n",
            case.tx.branches.len()
        ));
        md.push_str(&format!("| units (gens + inverters) | {} |\n", units.len()));
        md.push_str(&format!("| feeder models | {} |\n", case.feeders.len()));
        md.push_str(&format!("| boundary links | {} |\n", case.links.len()));
        md.push_str(&format!("| DERs per feeder model | {n_ders} |\n"));
        for link in &case.links {
            md.push_str(&format!(
                "| parallel feeders behind bus {} ({}) | {} |\n",
                link.tx_bus, link.feeder, link.beta
            ));
        }
        have_anything = true;
    }

    let ds_path = out.join("dataset.csv");
    if ds_path.is_file() {
        let ds = Dataset::load_csv(&ds_path)
            .map_err(|e| CliError::config(format!("dataset {}: {e}", ds_path.display())))?;
        let vsm: Vec<f64> = ds.rows.iter().map(|r| r.vsm_mw).collect();
        let mean = vsm.iter().sum::<f64>() / vsm.len().max(1) as f64;
        let min = vsm.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = vsm.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut by_contingency: Vec<(String, usize)> = Vec::new();
        for row in &ds.rows {
            match by_contingency.iter_mut().find(|(c, _)| *c == row.contingency) {
                Some((_, n)) => *n += 1,
                None => by_contingency.push((row.contingency.clone(), 1)),
            }
        }
        md.push_str("\n## Dataset\n\n");
        md.push_str(&format!(
            "- rows: {} ({} features each)\n- margin: min {:.2} MW, mean {:.2} MW, max {:.2} MW\n\n",
            ds.rows.len(),
            ds.features.len(),
            min,
            mean,
            max
        ));
        md.push_str("| contingency | rows |\n|---|---:|\n");
        for (c, n) in &by_contingency {
            md.push_str(&format!("| {c} | {n} |\n"));
        }
        have_anything = true;
    } else {
        md.push_str("\n## Dataset\n\nNot generated (`vsmkit gen-dataset`).\n");
    }

    let tr_path = out.join("train_report.toml");
    if tr_path.is_file() {
        let summary: TrainSummary = toml::from_str(&read_text(&tr_path)?)
            .map_err(|e| CliError::config(format!("train report {}: {e}", tr_path.display())))?;
        md.push_str("\n## Margin model\n\n");
        md.push_str("| metric | value |\n|---|---:|\n");
        md.push_str(&format!("| training rows | {} |\n", summary.n_rows));
        md.push_str(&format!("| hidden neurons | {} |\n", summary.hidden));
        md.push_str(&format!(
            "| best epoch | {} / {} |\n",
            summary.best_epoch, summary.epochs_run
        ));
        md.push_str(&format!("| training R² | {:.4} |\n", summary.train_r2));
        md.push_str(&format!("| held-out R² | {:.4} |\n", summary.val_r2));
        md.push_str(&format!("| held-out MAE | {:.2}% |\n", summary.val_mae_pct));
        have_anything = true;
    } else {
        md.push_str("\n## Margin model\n\nNot trained (`vsmkit train`).\n");
    }

    let val_path = out.join("validation.toml");
    if val_path.is_file() {
        let summary: ValidationSummary = toml::from_str(&read_text(&val_path)?)
            .map_err(|e| CliError::config(format!("validation {}: {e}", val_path.display())))?;
        md.push_str("\n## Cross-validation\n\n");
        md.push_str(&format!(
            "Full-dataset R² {:.4}, MAE {:.2}%; {}-fold mean R² {:.4}, mean MAE {:.2}%.\n\n",
            summary.r2_full,
            summary.mae_pct_full,
            summary.folds.len(),
            summary.cv_mean_r2,
            summary.cv_mean_mae_pct
        ));
        md.push_str("| fold | R² | MAE (%) | n |\n|---:|---:|---:|---:|\n");
        for (i, f) in summary.folds.iter().enumerate() {
            md.push_str(&format!(
                "| {} | {:.4} | {:.2} | {} |\n",
                i + 1,
                f.r2,
                f.mae_pct,
                f.n_test
            ));
        }
        have_anything = true;
    }

    // Paired-run comparison, when both weighting schemes have been run.
    let mut runs: Vec<(String, HashMap<String, String>, Option<(Vec<f64>, Vec<f64>)>)> =
        Vec::new();
    for label in ["sensitivity", "equal"] {
        let path = out.join(format!("run_{label}")).join("trace.txt");
        if path.is_file() {
            let text = read_text(&path)?;
            let weights = parse_first_round_weights(&text);
            runs.push((label.to_string(), parse_trace_header(&text), weights));
        }
    }
    if !runs.is_empty() {
        md.push_str("\n## Coordination runs\n\n");
        md.push_str(
            "| weights | initial (MW) | final (MW) | rounds | requested (MVAr) | converged |\n\
             |---|---:|---:|---:|---:|---|\n",
        );
        for (label, hdr, _) in &runs {
            let g = |k: &str| hdr.get(k).cloned().unwrap_or_else(|| "?".into());
            md.push_str(&format!(
                "| {} | {} | {} | {} | {} | {} |\n",
                label,
                g("vsm_initial_mw"),
                g("vsm_final_mw"),
                g("iterations"),
                g("total_requested_mvar"),
                g("converged")
            ));
        }
        for (label, _, weights) in &runs {
            if let Some((a_v, a_q)) = weights {
                md.push_str(&format!(
                    "\nRound-1 weights ({label}): voltage [{}], support [{}].\n",
                    a_v.iter()
                        .map(|v| format!("{v:.3}"))
                        .collect::<Vec<_>>()
                        .join(", "),
                    a_q.iter()
                        .map(|v| format!("{v:.3}"))
                        .collect::<Vec<_>>()
                        .join(", ")
                ));
            }
        }
        have_anything = true;
    } else {
        md.push_str("\n## Coordination runs\n\nNot run (`vsmkit run-loop`).\n");
    }

    if !have_anything {
        return Err(CliError::config(format!(
            "no artifacts found in {} — run gen-dataset/train/run-loop first",
            out.display()
        )));
    }
    let path = out.join("report.md");
    write_text(&path, &md)?;
    eprintln!("vsmkit: report -> {}", path.display());
    Ok(())
}
