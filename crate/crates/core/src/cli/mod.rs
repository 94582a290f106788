//! The `hmoe` command line: data generation, training runs, evaluation,
//! gradient verification and visualization.

pub mod inputs;
pub mod manifest;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::data::{gen_sinusoid, sinusoid_grid, write_xy_csv, Dataset, SplitSpec, SINUSOID_HALF_RANGE};
use crate::dropout::MaskGranularity;
use crate::grad::random_gradient_check;
use crate::optim::{evaluate, train_with_progress, AdamConfig, TrainData, TrainHyper};
use crate::report::{export_node_images, node_visualizations, uniform_grid, write_prediction_csv, DEFAULT_GRID_POINTS};
use crate::tree::{ModelConfig, Task, TreeModel};
use inputs::{load_dataset, DataSources};
use manifest::{Artifacts, RunManifest, RunResults, BEST_CHECKPOINT, CURVES_FILE, FINAL_CHECKPOINT, MANIFEST_FILE};

/// Environment variable capping worker threads.
pub const THREADS_ENV: &str = "HMOE_THREADS";

#[derive(Debug, Parser)]
#[command(name = "hmoe", version, about = "Soft decision trees with subtree dropout")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a noisy sinusoid training set and its noiseless reference grid.
    GenData(GenDataArgs),
    /// Train a model and write a run directory.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Compare backpropagated gradients with finite differences.
    Gradcheck(GradcheckArgs),
    /// Export node images and scalar prediction grids.
    Visualize(VisualizeArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[arg(long, default_value_t = 200)]
    pub n: usize,
    #[arg(long, default_value_t = 0.1)]
    pub noise: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "sinusoid.csv")]
    pub out: PathBuf,
    /// Defaults to `<out stem>_grid.csv` next to `--out`.
    #[arg(long)]
    pub grid_out: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_GRID_POINTS)]
    pub grid_points: usize,
}

#[derive(Clone, Debug, PartialEq, Args, Serialize, Deserialize)]
pub struct TrainArgs {
    /// Training set: `.csv`, `.fvec`, `images,labels` or `*images-idx3-ubyte[.gz]`.
    #[arg(long, required_unless_present = "manifest")]
    pub train: Option<String>,
    #[arg(long)]
    pub val: Option<String>,
    #[arg(long)]
    pub test: Option<String>,
    /// Split the training set `a:b` into training and validation parts.
    #[arg(long, conflicts_with = "val")]
    pub val_ratio: Option<String>,
    #[arg(long, default_value_t = 10)]
    pub depth: usize,
    /// Subtree dropout rate; omitted means no masks (same as 0).
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long, default_value = "example")]
    pub mask_granularity: MaskGranularity,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 100)]
    pub epochs: usize,
    #[arg(long, default_value_t = 64)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Inferred from the training targets when omitted.
    #[arg(long)]
    pub task: Option<Task>,
    /// Run directory; defaults to `<runs-dir>/<timestamp>-seed<seed>`.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long, default_value = "runs")]
    pub runs_dir: PathBuf,
    /// Print a progress line every N epochs (0 for none).
    #[arg(long, default_value_t = 10)]
    #[serde(skip, default)]
    pub log_every: usize,
    /// Replay the arguments recorded in a run manifest.
    #[arg(long, conflicts_with_all = ["train", "val", "test", "val_ratio"])]
    #[serde(skip, default)]
    pub manifest: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Role {
    Train,
    Val,
    Test,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, required_unless_present = "manifest", conflicts_with = "manifest")]
    pub data: Option<String>,
    /// Rebuild the datasets of a recorded run instead of naming one.
    #[arg(long, requires = "role")]
    pub manifest: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub role: Option<Role>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 100)]
    pub instances: usize,
    #[arg(long, default_value_t = 1e-6)]
    pub tolerance: f64,
}

#[derive(Debug, Args)]
pub struct VisualizeArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Dataset for node images; also sets the prediction grid range.
    #[arg(long)]
    pub data: Option<String>,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Image width; with `--height`, defaults to a square layout.
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long)]
    pub height: Option<usize>,
    #[arg(long, default_value_t = DEFAULT_GRID_POINTS)]
    pub grid_points: usize,
    #[arg(long, allow_negative_numbers = true)]
    pub grid_lo: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub grid_hi: Option<f64>,
}

/// Parses `std::env::args` and runs the selected command.
pub fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

pub fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    configure_threads()?;
    let mut out = std::io::stdout().lock();
    match cli.command {
        Command::GenData(args) => cmd_gen_data(&args, &mut out),
        Command::Train(args) => cmd_train(args, &mut out).map(|_| ExitCode::SUCCESS),
        Command::Eval(args) => cmd_eval(&args, &mut out),
        Command::Gradcheck(args) => cmd_gradcheck(&args, &mut out),
        Command::Visualize(args) => cmd_visualize(&args, &mut out),
    }
}

fn configure_threads() -> anyhow::Result<()> {
    let Ok(value) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let threads: usize = value
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .with_context(|| format!("{THREADS_ENV}='{value}' is not a positive integer"))?;
    #[cfg(feature = "parallel")]
    {
        // A pool that already exists keeps its size.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    }
    #[cfg(not(feature = "parallel"))]
    let _ = threads;
    Ok(())
}

pub fn cmd_gen_data(args: &GenDataArgs, out: &mut impl Write) -> anyhow::Result<ExitCode> {
    let data = gen_sinusoid(args.n, args.noise, args.seed)?;
    let grid = sinusoid_grid(args.grid_points, -SINUSOID_HALF_RANGE, SINUSOID_HALF_RANGE)?;
    let grid_out = args.grid_out.clone().unwrap_or_else(|| {
        let stem = args.out.file_stem().and_then(|s| s.to_str()).unwrap_or("sinusoid");
        args.out.with_file_name(format!("{stem}_grid.csv"))
    });
    write_xy_csv(&data, &args.out)?;
    write_xy_csv(&grid, &grid_out)?;
    writeln!(out, "wrote {} examples to {}", data.len(), args.out.display())?;
    writeln!(out, "wrote {} grid points to {}", grid.len(), grid_out.display())?;
    Ok(ExitCode::SUCCESS)
}

impl TrainArgs {
    pub fn sources(&self) -> anyhow::Result<DataSources> {
        let train = self.train.clone().context("--train is required")?;
        let val_split = self
            .val_ratio
            .as_deref()
            .map(|r| SplitSpec::parse(r, self.seed))
            .transpose()?;
        Ok(DataSources {
            train,
            val: self.val.clone(),
            test: self.test.clone(),
            val_split,
        })
    }

    pub fn hyper(&self) -> TrainHyper {
        TrainHyper {
            dropout: self.dropout,
            adam: AdamConfig::default().with_learning_rate(self.lr),
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed: self.seed,
            mask_granularity: self.mask_granularity,
        }
    }
}

/// Model shape implied by the data and an optional explicit task.
pub fn infer_config(depth: usize, task: Option<Task>, sets: &[&Dataset]) -> anyhow::Result<ModelConfig> {
    let train = sets[0];
    let task = task.unwrap_or(if train.is_classification() {
        Task::Classification
    } else {
        Task::Regression
    });
    let output_dim = match task {
        Task::Classification => sets.iter().map(|d| d.output_dim()).max().unwrap_or(0).max(2),
        Task::Regression => train.output_dim(),
    };
    Ok(ModelConfig::new(depth, train.dim(), output_dim, task)?)
}

fn fresh_run_dir(runs_dir: &Path, seed: u64) -> PathBuf {
    let stamp = chrono::Local::now().format("%Y%m%d-%H%M%S");
    let base = runs_dir.join(format!("{stamp}-seed{seed}"));
    let mut candidate = base.clone();
    let mut n = 2;
    while candidate.exists() {
        candidate = PathBuf::from(format!("{}-{n}", base.display()));
        n += 1;
    }
    candidate
}

/// Trains and writes the run directory; returns its path.
pub fn cmd_train(mut args: TrainArgs, out: &mut impl Write) -> anyhow::Result<PathBuf> {
    if let Some(path) = args.manifest.take() {
        let recorded = RunManifest::read(&path)?.args;
        let (out_dir, log_every) = (args.out_dir.take(), args.log_every);
        args = TrainArgs {
            out_dir,
            log_every,
            ..recorded
        };
    }
    let sources = args.sources()?;
    let hyper = args.hyper();
    let data = sources.load()?;
    let mut sets = vec![&data.train];
    sets.extend(data.val.as_ref());
    sets.extend(data.test.as_ref());
    let config = infer_config(args.depth, args.task, &sets)?;
    let started_at = chrono::Local::now().to_rfc3339();

    let dir = args
        .out_dir
        .clone()
        .unwrap_or_else(|| fresh_run_dir(&args.runs_dir, args.seed));
    let created = !dir.exists();
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let result = write_run(&args, config, hyper, &sources, &data, &dir, started_at);
    if result.is_err() && created {
        let _ = std::fs::remove_dir_all(&dir);
    }
    let manifest = result?;

    let r = &manifest.results;
    writeln!(out, "run directory: {}", dir.display())?;
    writeln!(out, "internal nodes: {}", r.internal_nodes)?;
    writeln!(out, "final train error: {}", r.final_train_error)?;
    if let (Some(epoch), Some(err)) = (r.best_val_epoch, r.best_val_error) {
        writeln!(out, "best val error: {err} (epoch {epoch})")?;
    }
    if let Some(err) = r.best_test_error {
        writeln!(out, "test error at best val: {err}")?;
    }
    Ok(dir)
}

fn write_run(
    args: &TrainArgs,
    config: ModelConfig,
    hyper: TrainHyper,
    sources: &DataSources,
    data: &inputs::LoadedData,
    dir: &Path,
    started_at: String,
) -> anyhow::Result<RunManifest> {
    let log_every = args.log_every;
    let report = train_with_progress(
        config,
        hyper,
        TrainData {
            train: &data.train,
            val: data.val.as_ref(),
            test: data.test.as_ref(),
        },
        |r| {
            if log_every > 0 && r.epoch % log_every == 0 {
                let opt = |v: Option<f64>| v.map_or("-".to_owned(), |v| format!("{v:.5}"));
                eprintln!(
                    "epoch {:>5}  loss {:.5}  train {:.5}  val {}  test {}",
                    r.epoch,
                    r.train_loss,
                    r.train_err,
                    opt(r.val_err),
                    opt(r.test_err)
                );
            }
        },
    )?;

    let curves = std::fs::File::create(dir.join(CURVES_FILE))?;
    let mut curves = std::io::BufWriter::new(curves);
    report.write_curves(&mut curves)?;
    curves.flush()?;
    report.best_model.save(&dir.join(BEST_CHECKPOINT))?;
    report.final_model.save(&dir.join(FINAL_CHECKPOINT))?;

    let [train_data, val_data, test_data] = data.info(sources);
    let manifest = RunManifest {
        tool: format!("hmoe {}", env!("CARGO_PKG_VERSION")),
        args: args.clone(),
        config,
        hyper,
        sources: sources.clone(),
        train_data: train_data.expect("training set is always present"),
        val_data,
        test_data,
        seed: hyper.seed,
        started_at,
        finished_at: chrono::Local::now().to_rfc3339(),
        results: RunResults::of(&report),
        artifacts: Artifacts::default(),
    };
    manifest.write(&dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}

pub fn cmd_eval(args: &EvalArgs, out: &mut impl Write) -> anyhow::Result<ExitCode> {
    let model = TreeModel::load(&args.checkpoint).with_context(|| format!("loading {}", args.checkpoint.display()))?;
    let data = match (&args.data, &args.manifest, args.role) {
        (Some(source), _, _) => load_dataset(source)?,
        (None, Some(path), Some(role)) => {
            let loaded = RunManifest::read(path)?.sources.load()?;
            match role {
                Role::Train => Some(loaded.train),
                Role::Val => loaded.val,
                Role::Test => loaded.test,
            }
            .with_context(|| format!("the recorded run has no {role:?} set"))?
        }
        _ => bail!("give --data, or --manifest with --role"),
    };
    let e = evaluate(&model, &data)?;
    writeln!(out, "examples={}", data.len())?;
    writeln!(out, "mean_loss={}", e.mean_loss)?;
    writeln!(out, "error={}", e.error)?;
    Ok(ExitCode::SUCCESS)
}

pub fn cmd_gradcheck(args: &GradcheckArgs, out: &mut impl Write) -> anyhow::Result<ExitCode> {
    let report = random_gradient_check(args.seed, args.instances)?;
    let pass = report.max_relative_error < args.tolerance;
    writeln!(
        out,
        "instances={} max_relative_error={:e} worst_instance={} tolerance={:e} {}",
        report.instances,
        report.max_relative_error,
        report.worst_instance,
        args.tolerance,
        if pass { "ok" } else { "FAILED" }
    )?;
    Ok(if pass { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn square_side(n: usize) -> Option<usize> {
    let side = (n as f64).sqrt().round() as usize;
    (side * side == n).then_some(side)
}

pub fn cmd_visualize(args: &VisualizeArgs, out: &mut impl Write) -> anyhow::Result<ExitCode> {
    let model = TreeModel::load(&args.checkpoint).with_context(|| format!("loading {}", args.checkpoint.display()))?;
    let data = args.data.as_deref().map(load_dataset).transpose()?;
    let cfg = *model.config();
    std::fs::create_dir_all(&args.out_dir).with_context(|| format!("creating {}", args.out_dir.display()))?;

    if cfg.input_dim == 1 && cfg.output_dim == 1 {
        let (mut lo, mut hi) = (-SINUSOID_HALF_RANGE, SINUSOID_HALF_RANGE);
        if let Some(d) = &data {
            lo = d.features().iter().copied().fold(f64::INFINITY, f64::min);
            hi = d.features().iter().copied().fold(f64::NEG_INFINITY, f64::max);
        }
        let grid = uniform_grid(args.grid_lo.unwrap_or(lo), args.grid_hi.unwrap_or(hi), args.grid_points);
        let path = args.out_dir.join("predictions.csv");
        write_prediction_csv(&model, &grid, &path)?;
        writeln!(out, "wrote {} grid predictions to {}", grid.len(), path.display())?;
    }

    if let Some(d) = &data {
        let (width, height) = match (args.width, args.height, square_side(cfg.input_dim)) {
            (Some(w), Some(h), _) => (w, h),
            (Some(w), None, _) => (w, cfg.input_dim / w.max(1)),
            (None, Some(h), _) => (cfg.input_dim / h.max(1), h),
            (None, None, Some(side)) if cfg.input_dim > 1 => (side, side),
            _ => {
                writeln!(
                    out,
                    "no image layout for {} inputs; skipping node images",
                    cfg.input_dim
                )?;
                return Ok(ExitCode::SUCCESS);
            }
        };
        let images = node_visualizations(&model, d)?;
        let written = export_node_images(&images, width, height, &args.out_dir)?;
        let inactive = images.len() - written.len();
        writeln!(
            out,
            "wrote {} node images ({width}x{height}) to {}; {inactive} inactive nodes skipped",
            written.len(),
            args.out_dir.display()
        )?;
    }
    Ok(ExitCode::SUCCESS)
}
