//! Command-line front door: dataset generation, training, evaluation, and
//! analysis. Configs are TOML, reports are CSV, and every command writes a
//! provenance record so artifacts can be traced back to the exact inputs
//! that produced them.
//!
//! Exit codes: 0 success, 1 usage error, 2 validation or input error,
//! 3 numeric divergence during training.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use activeview::env::{
    generate_synthetic, load_manifest, save_manifest, FeatureStorage, SynthConfig,
};
use activeview::eval::{
    default_weights, evaluate, exit_sweep, per_view_analysis, upper_bound_curve, write_curve_csv,
    write_exit_csv, write_metrics_csv, write_upper_bound_csv, write_view_matrix_csv, PolicyMode,
};
use activeview::pipeline::{
    load_checkpoint, load_train_config, run_pipeline, Checkpoint, TrainConfig,
};
use activeview::{Dataset, Error, Result};

#[derive(Parser)]
#[command(name = "activeview", version, about = "Active multi-view recognition toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic planted-view corpus as train/test manifests.
    GenData(GenDataArgs),
    /// Train a model on generated manifests and score it on the test split.
    Train(TrainArgs),
    /// Score a checkpoint: per-step accuracy curve and summary metrics.
    Eval(EvalArgs),
    /// Exhaustive-trajectory accuracy ceiling of a checkpoint's recognizer.
    UpperBound(UpperBoundArgs),
    /// Per-view linear-probe analysis of a dataset's discriminative structure.
    AnalyzeViews(AnalyzeViewsArgs),
    /// Calibrate dynamic-exit thresholds for several step budgets and score them.
    ExitSweep(ExitSweepArgs),
}

#[derive(Args)]
struct GenDataArgs {
    /// Dataset settings as TOML; omitted means the built-in defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for the manifests and provenance record.
    #[arg(long)]
    out: PathBuf,
    /// Write into a non-empty output directory.
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct TrainArgs {
    /// Training settings as TOML; omitted means the built-in defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory holding train.manifest and test.manifest.
    #[arg(long)]
    data: PathBuf,
    /// Run directory for checkpoints, the training log, and provenance.
    #[arg(long)]
    out: PathBuf,
    /// Write into a non-empty output directory.
    #[arg(long)]
    force: bool,
    /// Override the training seed from the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the reward discount from the config.
    #[arg(long)]
    gamma: Option<f64>,
    /// Training-schedule switch; repeat the flag to combine several.
    #[arg(long, value_enum)]
    ablation: Vec<Ablation>,
    /// Seeds for the held-out evaluation after training.
    #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4")]
    eval_seeds: Vec<u64>,
}

/// Switches that reshape the training schedule, named after the config
/// fields they turn on.
#[derive(Clone, Copy, Debug, ValueEnum)]
enum Ablation {
    RandomSelection,
    AllowDuplicates,
    SkipStage3,
    DisableSmoothing,
    EndToEnd,
}

#[derive(Args)]
struct EvalArgs {
    /// Checkpoint to score.
    #[arg(long)]
    ckpt: PathBuf,
    /// Manifest file, or a directory holding test.manifest.
    #[arg(long)]
    data: PathBuf,
    /// Output directory for the CSV reports.
    #[arg(long)]
    out: PathBuf,
    /// Write into a non-empty output directory.
    #[arg(long)]
    force: bool,
    /// View-selection rule to score under.
    #[arg(long, value_enum, default_value_t = ModeArg::Active)]
    mode: ModeArg,
    /// Seeds averaged over; each reruns the full split.
    #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4")]
    seeds: Vec<u64>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    Active,
    Random,
    Duplicates,
    Ensemble,
}

impl From<ModeArg> for PolicyMode {
    fn from(m: ModeArg) -> PolicyMode {
        match m {
            ModeArg::Active => PolicyMode::Active,
            ModeArg::Random => PolicyMode::Random,
            ModeArg::Duplicates => PolicyMode::Duplicates,
            ModeArg::Ensemble => PolicyMode::Ensemble,
        }
    }
}

#[derive(Args)]
struct UpperBoundArgs {
    /// Checkpoint whose recognizer is searched exhaustively.
    #[arg(long)]
    ckpt: PathBuf,
    /// Manifest file, or a directory holding test.manifest.
    #[arg(long)]
    data: PathBuf,
    /// Output directory for the CSV report.
    #[arg(long)]
    out: PathBuf,
    /// Write into a non-empty output directory.
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct AnalyzeViewsArgs {
    /// Directory holding train.manifest and test.manifest. The probes are
    /// trained from raw features, so no checkpoint is involved.
    #[arg(long)]
    data: PathBuf,
    /// Output directory for the CSV report.
    #[arg(long)]
    out: PathBuf,
    /// Write into a non-empty output directory.
    #[arg(long)]
    force: bool,
    /// Seed for probe initialization and batch order.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct ExitSweepArgs {
    /// Checkpoint to calibrate and score.
    #[arg(long)]
    ckpt: PathBuf,
    /// Directory holding train.manifest (calibration) and test.manifest.
    #[arg(long)]
    data: PathBuf,
    /// Output directory for the CSV report.
    #[arg(long)]
    out: PathBuf,
    /// Write into a non-empty output directory.
    #[arg(long)]
    force: bool,
    /// Mean-step budgets to calibrate thresholds for.
    #[arg(long, value_delimiter = ',', default_value = "2,3,4")]
    targets: Vec<f64>,
    /// Seed for the calibration traces.
    #[arg(long, default_value_t = 0)]
    calibration_seed: u64,
    /// Seeds averaged over on the test split.
    #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4")]
    seeds: Vec<u64>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            let code = match err {
                Error::Divergence { .. } => 3,
                _ => 2,
            };
            ExitCode::from(code)
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::GenData(a) => cmd_gen_data(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::UpperBound(a) => cmd_upper_bound(a),
        Command::AnalyzeViews(a) => cmd_analyze_views(a),
        Command::ExitSweep(a) => cmd_exit_sweep(a),
    }
}

/// Creates the output directory, refusing to touch a non-empty one unless
/// forced.
fn prepare_out(dir: &Path, force: bool) -> Result<()> {
    if !force && dir.is_dir() && dir.read_dir()?.next().is_some() {
        return Err(Error::Parameter(format!(
            "output directory {} is not empty; pass --force to write into it",
            dir.display()
        )));
    }
    std::fs::create_dir_all(dir)?;
    Ok(())
}

/// Record tying an artifact directory to the inputs that produced it. No
/// timestamps: identical invocations must produce identical bytes.
#[derive(Serialize)]
struct Provenance {
    tool: &'static str,
    version: &'static str,
    command: Vec<String>,
    config: Option<serde_json::Value>,
    seeds: Vec<u64>,
}

fn write_provenance(dir: &Path, config: Option<serde_json::Value>, seeds: &[u64]) -> Result<()> {
    let record = Provenance {
        tool: "activeview",
        version: env!("CARGO_PKG_VERSION"),
        command: std::env::args().skip(1).collect(),
        config,
        seeds: seeds.to_vec(),
    };
    let json = serde_json::to_string_pretty(&record)
        .map_err(|e| Error::Schema(format!("provenance record: {e}")))?;
    std::fs::write(dir.join("provenance.json"), json + "\n")?;
    Ok(())
}

fn to_json<T: Serialize>(value: &T) -> Result<serde_json::Value> {
    serde_json::to_value(value).map_err(|e| Error::Schema(format!("config record: {e}")))
}

/// Prefixes bare file-system errors with the path that caused them.
fn with_path(err: Error, path: &Path) -> Error {
    match err {
        Error::Io(io) => {
            Error::Io(std::io::Error::new(io.kind(), format!("{}: {io}", path.display())))
        }
        other => other,
    }
}

fn load_synth_config(path: &Path) -> Result<SynthConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| with_path(e.into(), path))?;
    let cfg: SynthConfig =
        toml::from_str(&text).map_err(|e| Error::Schema(format!("{}: {e}", path.display())))?;
    cfg.validate()?;
    Ok(cfg)
}

/// Accepts either a manifest file or a directory containing `name`.
fn load_split(data: &Path, name: &str) -> Result<Dataset> {
    let path = if data.is_dir() { data.join(name) } else { data.to_path_buf() };
    load_manifest(&path).map_err(|e| with_path(e, &path))
}

/// Loads `name` from a manifest directory.
fn load_named(dir: &Path, name: &str) -> Result<Dataset> {
    let path = dir.join(name);
    load_manifest(&path).map_err(|e| with_path(e, &path))
}

fn load_ckpt(path: &Path) -> Result<Checkpoint> {
    load_checkpoint(path).map_err(|e| with_path(e, path))
}

fn summary_line(m_acc: f64, w_m_acc: f64, step2_acc: f64) -> String {
    format!("mAcc {m_acc:.4}  w-mAcc {w_m_acc:.4}  Step2-Acc {step2_acc:.4}")
}

fn cmd_gen_data(a: GenDataArgs) -> Result<()> {
    let cfg = match &a.config {
        Some(path) => load_synth_config(path)?,
        None => SynthConfig::default(),
    };
    let (train, test) = generate_synthetic(&cfg)?;
    prepare_out(&a.out, a.force)?;
    save_manifest(&train, &a.out.join("train.manifest"), FeatureStorage::Inline)?;
    save_manifest(&test, &a.out.join("test.manifest"), FeatureStorage::Inline)?;
    write_provenance(&a.out, Some(to_json(&cfg)?), &[cfg.seed])?;
    println!(
        "wrote {} train / {} test samples ({} classes, {} views) to {}",
        train.samples.len(),
        test.samples.len(),
        cfg.classes,
        cfg.views,
        a.out.display()
    );
    Ok(())
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(path) => load_train_config(path)?,
        None => TrainConfig::default(),
    };
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    if let Some(gamma) = a.gamma {
        cfg.gamma = gamma;
    }
    for ablation in &a.ablation {
        match ablation {
            Ablation::RandomSelection => cfg.random_selection = true,
            Ablation::AllowDuplicates => cfg.allow_duplicates = true,
            Ablation::SkipStage3 => cfg.skip_stage3 = true,
            Ablation::DisableSmoothing => cfg.disable_smoothing = true,
            Ablation::EndToEnd => cfg.end_to_end = true,
        }
    }
    cfg.validate()?;
    let train = load_named(&a.data, "train.manifest")?;
    let test = load_named(&a.data, "test.manifest")?;
    prepare_out(&a.out, a.force)?;
    let run = run_pipeline(&cfg, &train, &test, &a.eval_seeds, Some(&a.out))?;
    write_provenance(&a.out, Some(to_json(&cfg)?), &a.eval_seeds)?;
    println!(
        "trained through stage {}; {} [{}]",
        run.final_checkpoint().stage,
        summary_line(run.report.m_acc, run.report.w_m_acc, run.report.step2_acc),
        run.report.mode
    );
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let ck = load_ckpt(&a.ckpt)?;
    let data = load_split(&a.data, "test.manifest")?;
    prepare_out(&a.out, a.force)?;
    let report = evaluate(&ck.params, &data, a.mode.into(), &a.seeds)?;
    write_curve_csv(&a.out.join("curve.csv"), &report.curve)?;
    write_metrics_csv(&a.out.join("metrics.csv"), &report)?;
    write_provenance(&a.out, None, &a.seeds)?;
    println!(
        "{} [{}]",
        summary_line(report.m_acc, report.w_m_acc, report.step2_acc),
        report.mode
    );
    Ok(())
}

fn cmd_upper_bound(a: UpperBoundArgs) -> Result<()> {
    let ck = load_ckpt(&a.ckpt)?;
    let data = load_split(&a.data, "test.manifest")?;
    prepare_out(&a.out, a.force)?;
    let curve = upper_bound_curve(&ck.params, &data)?;
    write_upper_bound_csv(&a.out.join("upper_bound.csv"), &curve)?;
    write_provenance(&a.out, None, &[])?;
    let weights = default_weights(curve.len())?;
    let m_acc = curve.iter().sum::<f64>() / curve.len() as f64;
    let w_m_acc = curve.iter().zip(&weights).map(|(a, w)| a * w).sum::<f64>();
    println!("{} [upper bound]", summary_line(m_acc, w_m_acc, curve[1]));
    Ok(())
}

fn cmd_analyze_views(a: AnalyzeViewsArgs) -> Result<()> {
    let train = load_named(&a.data, "train.manifest")?;
    let test = load_named(&a.data, "test.manifest")?;
    prepare_out(&a.out, a.force)?;
    let analysis = per_view_analysis(&train, &test, a.seed)?;
    write_view_matrix_csv(&a.out.join("view_matrix.csv"), &analysis)?;
    write_provenance(&a.out, None, &[a.seed])?;
    println!(
        "mean per-class best-worst view gap {:.4}; view ranking inconsistent across classes: {}",
        analysis.mean_gap, analysis.ranking_inconsistent
    );
    Ok(())
}

fn cmd_exit_sweep(a: ExitSweepArgs) -> Result<()> {
    let ck = load_ckpt(&a.ckpt)?;
    let calibration = load_named(&a.data, "train.manifest")?;
    let test = load_named(&a.data, "test.manifest")?;
    prepare_out(&a.out, a.force)?;
    let points = exit_sweep(
        &ck.params,
        &calibration,
        &test,
        &a.targets,
        a.calibration_seed,
        &a.seeds,
    )?;
    write_exit_csv(&a.out.join("exit_curve.csv"), &points)?;
    write_provenance(&a.out, None, &a.seeds)?;
    for p in &points {
        println!(
            "target {:.2}: calibrated mean {:.3}, test mean step {:.3}, accuracy {:.4}",
            p.target, p.calibration_mean, p.mean_step, p.accuracy
        );
    }
    Ok(())
}
