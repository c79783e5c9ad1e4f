//! Command-line workflows: flag definitions and the code behind each
//! subcommand. The `bbg` binary only parses and dispatches.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::bitpack::{benchmark, read_bbg, write_bbg, BenchReport, PackedModel};
use crate::data::{data_root, fetch, load_checkpoint, load_subset, DatasetId, Splits};
use crate::error::{Error, Result};
use crate::layers::{parse_kernel_stage, Arch, BlockVariant, Model, ModelSpec};
use crate::quant::WeightQuant;
use crate::rng::{SeedRng, Stream};
use crate::tensor::Tensor4;
use crate::train::{evaluate, run_grid, GridSpec, RunReport, TrainConfig, TrainOptions, Trainer};
use crate::verify::{run_suite, SuiteReport};

pub const CHECKPOINT_FILE: &str = "checkpoint.bbgc";

#[derive(Debug, Parser)]
#[command(name = "bbg", version, about = "Balanced binary networks with gated residuals")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model (or a grid of models) and write checkpoint and reports.
    Train(TrainArgs),
    /// Report test accuracy of a checkpoint or a packed model.
    Eval(EvalArgs),
    /// Pack a checkpoint into a .bbg file, verifying labels against the float model.
    Export(ExportArgs),
    /// Time packed against float inference.
    Bench(BenchArgs),
    /// Run the gradient checks and the invariant suite.
    Check(CheckArgs),
    /// Download a dataset with checksum verification.
    FetchData(FetchArgs),
}

/// Model shape flags shared by `train` and `bench`.
#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    /// Architecture [default: the dataset's preset].
    #[arg(long)]
    pub arch: Option<Arch>,
    #[arg(long, default_value = "gated")]
    pub variant: BlockVariant,
    #[arg(long, default_value = "balanced")]
    pub weight_quant: WeightQuant,
    /// Stage widths, e.g. 16-32-64.
    #[arg(long, default_value = "16-32-64", value_parser = parse_kernel_stage)]
    pub kernel_stage: [usize; 3],
    #[arg(long, default_value_t = 1.0)]
    pub width_mult: f64,
    /// Drop the max-pool after the stem.
    #[arg(long)]
    pub no_maxpool: bool,
}

impl ModelArgs {
    pub fn spec(&self, dataset: DatasetId) -> ModelSpec {
        let preset = TrainConfig::preset(dataset).model;
        let base = match self.arch {
            Some(Arch::Resnet20) => ModelSpec::resnet20(),
            Some(Arch::BasicCnn) => ModelSpec::basiccnn(),
            None => preset.clone(),
        };
        let mut spec = base
            .with_input(preset.input, preset.num_classes)
            .with_variant(self.variant)
            .with_quant(self.weight_quant);
        spec.kernel_stage = self.kernel_stage;
        spec.width_mult = self.width_mult;
        spec.remove_maxpool = self.no_maxpool;
        spec
    }
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[arg(long, default_value = "mnist")]
    pub dataset: DatasetId,
    /// Class-stratified training subset size.
    #[arg(long)]
    pub subset: Option<usize>,
    #[command(flatten)]
    pub model: ModelArgs,
    /// [default: the dataset's preset]
    #[arg(long)]
    pub epochs: Option<usize>,
    /// [default: the dataset's preset]
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Initial learning rate [default: the dataset's preset].
    #[arg(long)]
    pub lr: Option<f64>,
    /// Stop once test accuracy reaches this value.
    #[arg(long)]
    pub target_accuracy: Option<f64>,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Output directory for checkpoint and reports.
    #[arg(long, default_value = "runs/latest")]
    pub out: PathBuf,
    /// Continue from this checkpoint; all other run flags are taken from it.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Run every arm and seed of a TOML grid instead of a single model.
    #[arg(long)]
    pub grid: Option<PathBuf>,
    #[arg(long, short)]
    pub quiet: bool,
}

impl TrainArgs {
    pub fn config(&self) -> Result<TrainConfig> {
        let mut c = TrainConfig::preset(self.dataset);
        c.subset = self.subset;
        c.model = self.model.spec(self.dataset);
        c.epochs = self.epochs.unwrap_or(c.epochs);
        c.batch_size = self.batch_size.unwrap_or(c.batch_size);
        c.lr = self.lr.unwrap_or(c.lr);
        c.target_accuracy = self.target_accuracy;
        c.seed = self.seed;
        c.validate()?;
        Ok(c)
    }
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    /// Float checkpoint to evaluate.
    #[arg(long, conflicts_with = "packed", required_unless_present = "packed")]
    pub checkpoint: Option<PathBuf>,
    /// Packed .bbg model to evaluate.
    #[arg(long)]
    pub packed: Option<PathBuf>,
    /// [default: the checkpoint's dataset; required with --packed]
    #[arg(long)]
    pub dataset: Option<DatasetId>,
    /// Evaluate only the first N test samples.
    #[arg(long)]
    pub limit: Option<usize>,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value = "model.bbg")]
    pub out: PathBuf,
    /// Test samples whose labels must agree between engines.
    #[arg(long, default_value_t = 1000)]
    pub verify_samples: usize,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args)]
pub struct BenchArgs {
    /// Benchmark this checkpoint instead of a freshly initialized model.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Input geometry for an initialized model.
    #[arg(long, default_value = "cifar10")]
    pub dataset: DatasetId,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, default_value_t = 16)]
    pub batch: usize,
    #[arg(long, default_value_t = 20)]
    pub iters: usize,
    #[arg(long, default_value_t = 3)]
    pub warmup: usize,
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args)]
pub struct CheckArgs {
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args)]
pub struct FetchArgs {
    #[arg(long, default_value = "mnist")]
    pub dataset: DatasetId,
}

/// Loads the splits a config trains on, fetching if needed.
pub fn load_for(config: &TrainConfig) -> Result<Splits> {
    let root = data_root();
    if !config.dataset.is_synthetic() {
        fetch(config.dataset, &root)?;
    }
    load_subset(config.dataset, &root, config.seed, config.subset)
}

fn same_file(a: &Path, b: &Path) -> bool {
    match (a.canonicalize(), b.canonicalize()) {
        (Ok(a), Ok(b)) => a == b,
        _ => false,
    }
}

pub enum TrainOutcome {
    Single(Box<RunReport>),
    Grid(String),
}

pub fn cmd_train(args: &TrainArgs) -> Result<TrainOutcome> {
    std::fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
    if let Some(grid) = &args.grid {
        let text = std::fs::read_to_string(grid).map_err(|e| Error::io(grid, e))?;
        let spec = GridSpec::from_toml(&text)?;
        let first = spec.config(&spec.arms[0], spec.seeds[0])?;
        let splits = load_for(&first)?;
        let report = run_grid(&spec, &splits, !args.quiet)?;
        for (name, body) in [("grid.csv", report.to_csv()), ("grid.json", serde_json::to_string_pretty(&report)?)] {
            let p = args.out.join(name);
            std::fs::write(&p, body).map_err(|e| Error::io(&p, e))?;
        }
        return Ok(TrainOutcome::Grid(report.table()));
    }

    let ckpt_path = args.out.join(CHECKPOINT_FILE);
    let opts = TrainOptions {
        checkpoint: Some(ckpt_path.clone()),
        max_epochs: None,
        verbose: !args.quiet,
    };
    let (config, trainer_ck) = match &args.resume {
        Some(path) => {
            if same_file(path, &ckpt_path) {
                return Err(Error::InvalidArgument(format!(
                    "--resume {} would be overwritten; choose a different --out",
                    path.display()
                )));
            }
            let ck = load_checkpoint(path)?;
            (ck.config.clone(), Some(ck))
        }
        None => (args.config()?, None),
    };
    if !args.quiet {
        eprintln!("{}", config.to_json());
    }
    let splits = load_for(&config)?;
    let trainer = match trainer_ck {
        Some(ck) => Trainer::from_checkpoint(ck, &splits)?,
        None => Trainer::new(config, &splits)?,
    };
    let (_, report) = trainer.run(&opts)?;
    report.write(&args.out)?;
    Ok(TrainOutcome::Single(Box::new(report)))
}

/// The model a checkpoint describes: its best state if one was recorded.
pub fn model_from_checkpoint(path: &Path) -> Result<(TrainConfig, Model<f32>)> {
    let ck = load_checkpoint(path)?;
    let mut model = Model::new(&ck.config.model, ck.config.seed)?;
    let state = if ck.best.is_empty() { &ck.model } else { &ck.best };
    model.load_state_dict(state)?;
    Ok((ck.config, model))
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalSummary {
    pub dataset: DatasetId,
    pub samples: usize,
    pub accuracy: f64,
    pub engine: &'static str,
}

enum Engine {
    Float(Box<Model<f32>>),
    Packed(PackedModel),
}

pub fn cmd_eval(args: &EvalArgs) -> Result<EvalSummary> {
    let (mut config, engine) = match (&args.checkpoint, &args.packed) {
        (Some(path), _) => {
            let (config, model) = model_from_checkpoint(path)?;
            (config, Engine::Float(Box::new(model)))
        }
        (None, Some(path)) => {
            let dataset = args
                .dataset
                .ok_or_else(|| Error::InvalidArgument("--packed needs --dataset".into()))?;
            let config = TrainConfig {
                seed: args.seed,
                ..TrainConfig::preset(dataset)
            };
            (config, Engine::Packed(read_bbg(path)?))
        }
        (None, None) => return Err(Error::InvalidArgument("give --checkpoint or --packed".into())),
    };
    if let Some(d) = args.dataset {
        config.dataset = d;
    }
    let splits = load_for(&config)?;
    let test = match args.limit {
        Some(n) => splits.test.take(n.min(splits.test.len())),
        None => splits.test,
    };
    let (accuracy, engine) = match engine {
        Engine::Float(mut model) => (evaluate(&mut model, &test)?.accuracy, "float"),
        Engine::Packed(packed) => {
            let labels = packed_predict(&packed, &test.images)?;
            let correct = labels.iter().zip(&test.labels).filter(|(p, l)| p == l).count();
            (correct as f64 / test.len().max(1) as f64, "packed")
        }
    };
    Ok(EvalSummary {
        dataset: config.dataset,
        samples: test.len(),
        accuracy,
        engine,
    })
}

fn packed_predict(packed: &PackedModel, images: &Tensor4<f32>) -> Result<Vec<usize>> {
    let n = images.shape().n;
    let mut out = Vec::with_capacity(n);
    for start in (0..n).step_by(256) {
        let idx: Vec<usize> = (start..(start + 256).min(n)).collect();
        out.extend(packed.predict(&images.gather_items(&idx))?);
    }
    Ok(out)
}

/// First index where the two label sequences differ.
pub fn compare_labels(float: &[usize], packed: &[usize]) -> Result<()> {
    match float.iter().zip(packed).position(|(f, p)| f != p) {
        Some(index) => Err(Error::EngineMismatch {
            index,
            float_label: float[index],
            packed_label: packed[index],
        }),
        None => Ok(()),
    }
}

/// Packs `model`, checks label agreement on `images`, and returns the
/// packed model.
pub fn export_verified(model: &mut Model<f32>, images: &Tensor4<f32>) -> Result<PackedModel> {
    let packed = PackedModel::from_model(model)?;
    let n = images.shape().n;
    let mut float = Vec::with_capacity(n);
    for start in (0..n).step_by(256) {
        let idx: Vec<usize> = (start..(start + 256).min(n)).collect();
        float.extend(model.predict(&images.gather_items(&idx))?);
    }
    compare_labels(&float, &packed_predict(&packed, images)?)?;
    Ok(packed)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExportSummary {
    pub path: PathBuf,
    pub bytes: u64,
    pub verified: usize,
}

pub fn cmd_export(args: &ExportArgs) -> Result<ExportSummary> {
    let (config, mut model) = model_from_checkpoint(&args.checkpoint)?;
    let splits = load_for(&config)?;
    let n = args.verify_samples.min(splits.test.len());
    let sample = splits.test.take(n);
    let packed = export_verified(&mut model, &sample.images)?;
    write_bbg(&args.out, &packed)?;
    let bytes = std::fs::metadata(&args.out).map_err(|e| Error::io(&args.out, e))?.len();
    Ok(ExportSummary {
        path: args.out.clone(),
        bytes,
        verified: n,
    })
}

pub fn cmd_bench(args: &BenchArgs) -> Result<BenchReport> {
    let model = match &args.checkpoint {
        Some(path) => model_from_checkpoint(path)?.1,
        None => Model::new(&args.model.spec(args.dataset), args.seed)?,
    };
    let packed = PackedModel::from_model(&model)?;
    let mut rng = SeedRng::new(args.seed).stream(Stream::Test, 0);
    let x = Tensor4::uniform(model.input_shape(args.batch.max(1)), 0.0, 1.0, &mut rng);
    benchmark(&packed, &model, &x, args.iters, args.warmup, args.threads)
}

pub fn cmd_check(args: &CheckArgs) -> Result<SuiteReport> {
    run_suite(args.seed)
}

pub fn cmd_fetch(args: &FetchArgs) -> Result<Option<PathBuf>> {
    fetch(args.dataset, &data_root())
}

/// Process exit status for an error: 2 for bad arguments, 1 otherwise.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::InvalidArgument(_) => 2,
        _ => 1,
    }
}

/// Runs one parsed command, printing its human-readable report. Returns
/// whether the command fully succeeded.
pub fn run(cli: &Cli) -> Result<bool> {
    match &cli.command {
        Command::Train(a) => match cmd_train(a)? {
            TrainOutcome::Single(r) => {
                print!("{}", r.table());
                match (r.final_accuracy, r.best_epoch) {
                    (Some(acc), Some(epoch)) => println!(
                        "best test accuracy {acc:.4} (epoch {epoch}), {} epochs, {:.1} s",
                        r.epochs_run, r.wall_clock_s
                    ),
                    _ => println!("no epochs run"),
                }
                println!("wrote {}", a.out.display());
            }
            TrainOutcome::Grid(table) => print!("{table}"),
        },
        Command::Eval(a) => {
            let s = cmd_eval(a)?;
            println!("{} {} engine: accuracy {:.4} over {} test samples", s.dataset, s.engine, s.accuracy, s.samples);
        }
        Command::Export(a) => {
            let s = cmd_export(a)?;
            println!(
                "wrote {} ({} bytes); labels agree on {} test samples",
                s.path.display(),
                s.bytes,
                s.verified
            );
        }
        Command::Bench(a) => {
            let r = cmd_bench(a)?;
            println!(
                "batch {}  iters {}  threads {}  popcount {}",
                r.batch, r.iters, r.threads, r.popcount
            );
            println!("float median   {:>9.3} ms", r.float_median_ms);
            println!("packed median  {:>9.3} ms", r.packed_median_ms);
            println!("speedup        {:>9.2}x", r.speedup);
        }
        Command::Check(a) => {
            let r = cmd_check(a)?;
            println!("{r}");
            return Ok(r.passed());
        }
        Command::FetchData(a) => match cmd_fetch(a)? {
            Some(dir) => println!("{} ready in {}", a.dataset, dir.display()),
            None => println!("{} is synthetic; nothing to fetch", a.dataset),
        },
    }
    Ok(true)
}
