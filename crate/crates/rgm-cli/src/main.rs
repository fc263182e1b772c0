//! `rgm`: batch front end for the registration pipeline.
//!
//! Subcommands cover the whole workflow: `synth` writes datasets, `train`
//! fits weights, `register` aligns one pair, `eval` scores a dataset, and
//! `export` dumps correspondence and soft-edge matrices for plotting.
//! Exit codes: 0 success, 2 usage or configuration error, 3 I/O or file
//! format error, 4 numeric failure.

mod config;

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use log::{info, warn};

use rgm::diff::{Tape, Tensor};
use rgm::geom::{apply_transform, PointCloud};
use rgm::io::{cloud_to_ply, read_cloud};
use rgm::metrics::{report_to_csv, report_to_json};
use rgm::net::{rgm_forward, NetVars};
use rgm::solve::{register, result_to_json, scored_pairs_to_csv, soft_to_hard, Estimator};
use rgm::synth::{generate_dataset, write_dataset, Mode, ShapeId};
use rgm::train::{evaluate, log_to_jsonl, train};
use rgm::{Error, Result, RgmWeights};

use config::{effective_toml, finalize, load_config, AppConfig};

#[derive(Parser)]
#[command(name = "rgm", version, about = "Point-cloud registration by deep graph matching")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic registration dataset with ground truth.
    Synth(SynthArgs),
    /// Train network weights on a dataset directory.
    Train(TrainArgs),
    /// Align one source/target cloud pair.
    Register(RegisterArgs),
    /// Run the solver over a dataset and write the metric report.
    Eval(EvalArgs),
    /// Dump correspondences and soft-edge matrices for external plotting.
    Export(ExportArgs),
}

#[derive(clap::Args)]
struct SynthArgs {
    /// Output dataset directory.
    #[arg(long)]
    out: PathBuf,
    /// TOML config; flags below override its `[synth]` section.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Number of cloud pairs.
    #[arg(long, default_value_t = 100)]
    pairs: usize,
    /// Degradation protocol: clean, noise, partial, or partial_noise.
    #[arg(long)]
    mode: Option<Mode>,
    /// Points per source cloud.
    #[arg(long)]
    points: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Use a single generator shape instead of cycling through all of them.
    #[arg(long)]
    shape: Option<ShapeId>,
}

#[derive(clap::Args)]
struct TrainArgs {
    /// Dataset directory containing manifest.json.
    #[arg(long)]
    data: PathBuf,
    /// Output directory for weights, log, and checkpoints.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    momentum: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Loss preset: object or focal-scene.
    #[arg(long)]
    preset: Option<String>,
    /// Save a checkpoint every this many epochs.
    #[arg(long)]
    checkpoint_interval: Option<usize>,
    /// Record per-epoch wall time in the log (breaks byte reproducibility).
    #[arg(long)]
    timing: bool,
}

#[derive(clap::Args)]
struct RegisterArgs {
    /// Source cloud (.ply or .xyz).
    #[arg(long)]
    src: PathBuf,
    /// Target cloud (.ply or .xyz).
    #[arg(long)]
    dst: PathBuf,
    /// Trained weights file.
    #[arg(long)]
    weights: PathBuf,
    /// Output directory for registration.json and aligned.ply.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Transform estimator: svd or ransac.
    #[arg(long)]
    estimator: Option<Estimator>,
    /// Forward/estimate refinement rounds.
    #[arg(long)]
    iters: Option<usize>,
    /// Confidence threshold for hard assignment.
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(clap::Args)]
struct EvalArgs {
    /// Dataset directory containing manifest.json.
    #[arg(long)]
    data: PathBuf,
    /// Trained weights file; optional in oracle mode.
    #[arg(long, required_unless_present = "oracle")]
    weights: Option<PathBuf>,
    /// Output directory for report.json and report.csv.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    estimator: Option<Estimator>,
    #[arg(long)]
    iters: Option<usize>,
    /// Score the ground-truth transforms instead of running the solver.
    #[arg(long)]
    oracle: bool,
}

#[derive(clap::Args)]
struct ExportArgs {
    #[arg(long)]
    src: PathBuf,
    #[arg(long)]
    dst: PathBuf,
    #[arg(long)]
    weights: PathBuf,
    /// Output directory for the CSV matrices.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Confidence threshold for the exported hard correspondences.
    #[arg(long)]
    tau: Option<f64>,
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Err(e) = run(cli.command) {
        eprintln!("error: {e}");
        std::process::exit(exit_code(&e));
    }
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Parameter(_) | Error::Config(_) => 2,
        Error::Io { .. } | Error::Format(_) => 3,
        Error::Numeric(_) | Error::DegenerateGeometry(_) | Error::DegenerateSample(_) => 4,
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Synth(args) => cmd_synth(args),
        Command::Train(args) => cmd_train(args),
        Command::Register(args) => cmd_register(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Export(args) => cmd_export(args),
    }
}

/// Loads the config file, applies flag overrides, validates, and echoes the
/// effective result to the log.
fn effective_config(
    path: Option<&Path>,
    overrides: impl FnOnce(&mut AppConfig),
) -> Result<AppConfig> {
    let mut cfg = load_config(path)?;
    overrides(&mut cfg);
    let cfg = finalize(cfg)?;
    info!("effective config:\n{}", effective_toml(&cfg));
    Ok(cfg)
}

/// Writes a finished artifact: the bytes land under a temporary name and are
/// renamed into place, so a failed run never leaves a partial file.
fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let mut tmp_name = path
        .file_name()
        .ok_or_else(|| Error::Parameter(format!("not a file path: {}", path.display())))?
        .to_os_string();
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    std::fs::write(&tmp, contents).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn ensure_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn cmd_synth(args: SynthArgs) -> Result<()> {
    let cfg = effective_config(args.config.as_deref(), |cfg| {
        if let Some(mode) = args.mode {
            cfg.synth.mode = mode;
        }
        if let Some(points) = args.points {
            cfg.synth.n_points = points;
        }
        if let Some(seed) = args.seed {
            cfg.synth.seed = seed;
        }
    })?;
    if args.pairs == 0 {
        return Err(Error::Parameter("--pairs must be >= 1".into()));
    }
    let samples = generate_dataset::<f64>(args.pairs, args.shape, &cfg.synth)?;
    write_dataset(&args.out, &samples)?;
    println!(
        "wrote {} samples ({} mode) to {}",
        samples.len(),
        cfg.synth.mode,
        args.out.display()
    );
    Ok(())
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let cfg = effective_config(args.config.as_deref(), |cfg| {
        if let Some(epochs) = args.epochs {
            cfg.train.epochs = epochs;
        }
        if let Some(lr) = args.lr {
            cfg.train.learning_rate = lr;
        }
        if let Some(momentum) = args.momentum {
            cfg.train.momentum = momentum;
        }
        if let Some(seed) = args.seed {
            cfg.train.seed = seed;
        }
        if let Some(interval) = args.checkpoint_interval {
            cfg.train.checkpoint_interval = interval;
        }
        if args.preset.is_some() {
            cfg.loss_preset = args.preset.clone();
        }
        if args.timing {
            cfg.train.log_timing = true;
        }
    })?;
    ensure_dir(&args.out)?;

    let checkpoints = args.out.join("checkpoints");
    let (weights, log) = train::<f64>(&args.data, &cfg.net, &cfg.train, Some(&checkpoints))?;

    let weights_path = args.out.join("weights.rgmw");
    weights.save(&weights_path)?;
    write_atomic(&args.out.join("train_log.jsonl"), &log_to_jsonl(&log))?;

    let final_loss = log.last().map(|r| r.mean_loss).unwrap_or(f64::NAN);
    println!(
        "trained {} epochs, final mean loss {final_loss}, weights at {}",
        log.len(),
        weights_path.display()
    );
    Ok(())
}

fn cmd_register(args: RegisterArgs) -> Result<()> {
    let cfg = effective_config(args.config.as_deref(), |cfg| {
        if let Some(estimator) = args.estimator {
            cfg.solver.estimator = estimator;
        }
        if let Some(iters) = args.iters {
            cfg.solver.iterations = iters;
        }
        if let Some(tau) = args.tau {
            cfg.solver.tau = tau;
        }
        if let Some(seed) = args.seed {
            cfg.solver.seed = seed;
        }
    })?;

    let source: PointCloud<f64> = read_cloud(&args.src)?;
    let target: PointCloud<f64> = read_cloud(&args.dst)?;
    let weights = RgmWeights::load(&args.weights)?;

    let result = register(&source, &target, &weights, &cfg.solver)?;
    let aligned = apply_transform(&result.transform, &source);

    ensure_dir(&args.out)?;
    write_atomic(&args.out.join("registration.json"), &result_to_json(&result))?;
    write_atomic(&args.out.join("aligned.ply"), &cloud_to_ply(&aligned))?;

    println!(
        "registered {} -> {} pairs, {} iterations, results in {}",
        source.len(),
        result.correspondences.pairs().len(),
        result.iterations_run,
        args.out.display()
    );
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let cfg = effective_config(args.config.as_deref(), |cfg| {
        if let Some(estimator) = args.estimator {
            cfg.solver.estimator = estimator;
        }
        if let Some(iters) = args.iters {
            cfg.solver.iterations = iters;
        }
    })?;

    let samples = rgm::synth::read_dataset::<f64>(&args.data)?;
    let weights = match &args.weights {
        Some(path) => Some(RgmWeights::load(path)?),
        None => None,
    };

    let outcome = evaluate(&samples, weights.as_ref(), &cfg.solver, &cfg.metrics, args.oracle)?;
    for (index, message) in &outcome.failures {
        warn!("sample {index} failed: {message}");
    }

    ensure_dir(&args.out)?;
    write_atomic(
        &args.out.join("report.json"),
        &report_to_json(&outcome.reports, &cfg.metrics)?,
    )?;
    write_atomic(&args.out.join("report.csv"), &report_to_csv(&outcome.reports))?;

    println!(
        "evaluated {} samples ({} failures): recall {}, mean mie_r {} deg",
        samples.len(),
        outcome.failures.len(),
        outcome.aggregate.recall,
        outcome.aggregate.mean_mie_r
    );
    Ok(())
}

fn cmd_export(args: ExportArgs) -> Result<()> {
    let cfg = effective_config(args.config.as_deref(), |cfg| {
        if let Some(tau) = args.tau {
            cfg.solver.tau = tau;
        }
    })?;

    let source: PointCloud<f64> = read_cloud(&args.src)?;
    let target: PointCloud<f64> = read_cloud(&args.dst)?;
    let weights = RgmWeights::load(&args.weights)?;

    let mut tape = Tape::new();
    let binding = weights.params.bind(&mut tape);
    let vars = NetVars::new(&weights.params, &binding);
    let out = rgm_forward(&mut tape, &vars, &source, &target, &weights.config)?;
    let soft = tape.value(out.corr).clone();

    let hard = soft_to_hard(&soft, cfg.solver.tau)?;
    let scores: Vec<f64> = hard
        .pairs()
        .iter()
        .map(|&(i, j)| soft.get(i, j))
        .collect();

    ensure_dir(&args.out)?;
    write_atomic(
        &args.out.join("correspondences.csv"),
        &scored_pairs_to_csv(&hard, &scores)?,
    )?;
    write_atomic(&args.out.join("soft_correspondence.csv"), &tensor_to_csv(&soft))?;
    for (block, edges) in out.edge_x.iter().enumerate() {
        write_atomic(
            &args.out.join(format!("edge_x_block{block}.csv")),
            &tensor_to_csv(edges),
        )?;
    }
    for (block, edges) in out.edge_y.iter().enumerate() {
        write_atomic(
            &args.out.join(format!("edge_y_block{block}.csv")),
            &tensor_to_csv(edges),
        )?;
    }

    println!(
        "exported {} correspondences and {} edge matrices to {}",
        hard.pairs().len(),
        out.edge_x.len() + out.edge_y.len(),
        args.out.display()
    );
    Ok(())
}

fn tensor_to_csv(t: &Tensor<f64>) -> String {
    let (rows, cols) = t.shape();
    let mut out = String::new();
    for i in 0..rows {
        for j in 0..cols {
            if j > 0 {
                out.push(',');
            }
            out.push_str(&format!("{}", t.get(i, j)));
        }
        out.push('\n');
    }
    out
}
