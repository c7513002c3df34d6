//! `capsnet`: data preparation, training, evaluation, experiment suites,
//! reports, reconstruction dumps and gradient checks.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use capsnet_core::models::{load_checkpoint, Architecture, Width};
use capsnet_harness::config::{Condition, DatasetId, ExperimentConfig, Profile};
use capsnet_harness::experiment::{run_experiment, DatasetPair, RunOutputs};
use capsnet_harness::grid::{GridFile, Overrides};
use capsnet_harness::metrics::evaluate;
use capsnet_harness::reconstruct::dump_reconstructions;
use capsnet_harness::report::{emit_report, history_csv, ReportOptions};
use capsnet_harness::suite::{run_suite, RunRecord, RunStore, SuiteObserver, SuiteReport};
use capsnet_harness::train::EpochRecord;
use clap::{Args, Parser, Subcommand, ValueEnum};

mod gradcheck;
mod prepare;

#[derive(Parser, Debug)]
#[command(name = "capsnet", version, about = "Capsule networks vs. ConvNets under data challenges")]
struct Cli {
    /// Seed for every random choice of the command.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Where outputs are written.
    #[arg(long, global = true, env = "CAPSNET_OUT_DIR", default_value = "runs")]
    out_dir: PathBuf,
    /// Settings profile; defaults to the dataset's own.
    #[arg(long, global = true, value_enum)]
    profile: Option<ProfileArg>,
    /// Worker threads (runs are independent; 1 = sequential).
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum ProfileArg {
    Vision,
    Medical,
    /// Vision settings with narrow layers, for quick checks only.
    Reduced,
}

impl ProfileArg {
    fn profile(self) -> Profile {
        match self {
            ProfileArg::Medical => Profile::Medical,
            _ => Profile::Vision,
        }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Convert raw downloads into IDX files plus a manifest under --data-dir.
    Prepare(prepare::PrepareArgs),
    /// Train one configuration; writes a checkpoint, history and result.
    Train(TrainArgs),
    /// Macro and per-class F1 of a checkpoint on a test split.
    Eval(EvalArgs),
    /// Execute a grid file into a resumable run store under --out-dir.
    Suite(SuiteArgs),
    /// Render CSV and markdown reports from a run store.
    Report(ReportArgs),
    /// Write inputs and capsule reconstructions as an image grid.
    Reconstruct(ReconstructArgs),
    /// Finite-difference check of every layer and of whole models.
    Gradcheck(gradcheck::GradcheckArgs),
}

#[derive(Args, Debug, Default)]
struct OverrideArgs {
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    min_delta: Option<f64>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    routing_iterations: Option<usize>,
    #[arg(long)]
    val_fraction: Option<f64>,
    /// Stratified fraction of the training set used before the condition.
    #[arg(long)]
    data_scale: Option<f64>,
    /// Upper limit on the iteration budget.
    #[arg(long)]
    iteration_cap: Option<usize>,
}

impl OverrideArgs {
    fn overrides(&self, profile: Option<ProfileArg>) -> Overrides {
        Overrides {
            batch_size: self.batch_size,
            max_epochs: self.max_epochs,
            patience: self.patience,
            min_delta: self.min_delta,
            learning_rate: self.learning_rate,
            alpha: self.alpha,
            routing_iterations: self.routing_iterations,
            val_fraction: self.val_fraction,
            data_scale: self.data_scale,
            iteration_cap: self.iteration_cap,
            width: (profile == Some(ProfileArg::Reduced)).then_some(Width::Reduced),
        }
    }
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    dataset: String,
    #[arg(long)]
    arch: String,
    /// full, frac50, frac10, frac5, frac1, imb1, imb2, aug_off or aug_on.
    #[arg(long, default_value = "full")]
    condition: String,
    /// Root holding one IDX directory per dataset.
    #[arg(long, env = "CAPSNET_DATA_DIR", default_value = "data")]
    data_dir: PathBuf,
    #[command(flatten)]
    overrides: OverrideArgs,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Checkpoint written by `train` or `suite`.
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    dataset: String,
    #[arg(long, env = "CAPSNET_DATA_DIR", default_value = "data")]
    data_dir: PathBuf,
}

#[derive(Args, Debug)]
struct SuiteArgs {
    #[arg(long)]
    grid: PathBuf,
    #[arg(long, env = "CAPSNET_DATA_DIR", default_value = "data")]
    data_dir: PathBuf,
    /// List the planned runs and exit without training or writing.
    #[arg(long)]
    dry_run: bool,
    /// Leave wall-clock times out of the reports so reruns are identical.
    #[arg(long)]
    deterministic: bool,
    #[command(flatten)]
    overrides: OverrideArgs,
}

#[derive(Args, Debug)]
struct ReportArgs {
    /// Run store to read; defaults to --out-dir.
    #[arg(long)]
    store: Option<PathBuf>,
    /// Leave wall-clock times out so the report is reproducible.
    #[arg(long)]
    deterministic: bool,
}

#[derive(Args, Debug)]
struct ReconstructArgs {
    /// Checkpoint written by `train` or `suite`.
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value = "mnist")]
    dataset: String,
    #[arg(long, env = "CAPSNET_DATA_DIR", default_value = "data")]
    data_dir: PathBuf,
    /// Number of test images shown.
    #[arg(long, default_value_t = 8)]
    samples: usize,
    /// Output image (.pgm or .png); defaults to --out-dir/reconstructions.pgm.
    #[arg(long)]
    output: Option<PathBuf>,
}

/// Why a command did not succeed.
#[derive(Debug)]
pub enum Failure {
    /// Bad invocation or inputs; nothing was done.
    Usage(String),
    /// The work itself failed.
    Runtime(String),
}

pub type Outcome = Result<(), Failure>;

pub fn usage(m: impl Into<String>) -> Failure {
    Failure::Usage(m.into())
}

pub fn runtime(e: impl std::fmt::Display) -> Failure {
    Failure::Runtime(e.to_string())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(cli: Cli) -> Outcome {
    if cli.threads == 0 {
        return Err(usage("--threads must be at least 1"));
    }
    match &cli.command {
        Command::Prepare(a) => prepare::run(a, cli.seed),
        Command::Train(a) => train(&cli, a),
        Command::Eval(a) => eval(a),
        Command::Suite(a) => suite(&cli, a),
        Command::Report(a) => report(&cli, a),
        Command::Reconstruct(a) => reconstruct(&cli, a),
        Command::Gradcheck(a) => gradcheck::run(a, cli.profile == Some(ProfileArg::Reduced), cli.seed),
    }
}

fn parse_dataset(s: &str) -> Result<DatasetId, Failure> {
    s.parse().map_err(|e| usage(format!("{e}")))
}

/// Fails with a usage error unless the dataset's IDX files exist.
fn require_dataset(root: &Path, id: DatasetId) -> Outcome {
    let dir = root.join(id.name());
    for split in [capsnet_data::Split::Train, capsnet_data::Split::Test] {
        let (images, labels) = capsnet_data::idx::standard_paths(&dir, split);
        for p in [images, labels] {
            if !p.is_file() {
                return Err(usage(format!(
                    "{} not found (point --data-dir at a prepared data root)",
                    p.display()
                )));
            }
        }
    }
    Ok(())
}

struct Progress {
    verbose: bool,
}

impl Progress {
    fn epoch_line(cfg: &ExperimentConfig, e: &EpochRecord) -> String {
        format!(
            "  {} epoch {:>4} iter {:>6} train {:.5} val {:.5}",
            cfg.run_id(),
            e.epoch,
            e.iterations,
            e.train_loss,
            e.val_loss
        )
    }
}

impl SuiteObserver for Progress {
    fn run_started(&mut self, index: usize, total: usize, cfg: &ExperimentConfig) {
        eprintln!("[{}/{total}] {}", index + 1, cfg.run_id());
    }

    fn epoch(&mut self, cfg: &ExperimentConfig, record: &EpochRecord) {
        if self.verbose {
            eprintln!("{}", Self::epoch_line(cfg, record));
        }
    }

    fn run_finished(&mut self, index: usize, record: &RunRecord, reused: bool) {
        match record {
            RunRecord::Done(r) => eprintln!(
                "[{}] {} macro-F1 {:.4} ({} iterations, best epoch {}{})",
                index + 1,
                r.run_id,
                r.macro_f1(),
                r.history.iterations,
                r.history.best_epoch,
                if reused { ", stored" } else { "" }
            ),
            RunRecord::Failed { run_id, error, .. } => eprintln!("[{}] {run_id} FAILED: {error}", index + 1),
        }
    }
}

fn train(cli: &Cli, a: &TrainArgs) -> Outcome {
    let dataset = parse_dataset(&a.dataset)?;
    let arch: Architecture = a.arch.parse().map_err(|e| usage(format!("{e}")))?;
    let condition: Condition = a.condition.parse().map_err(|e| usage(format!("{e}")))?;
    let mut cfg = ExperimentConfig::new(dataset, arch, condition, cli.seed);
    if let Some(p) = cli.profile {
        cfg.apply_profile(p.profile());
    }
    a.overrides.overrides(cli.profile).apply(&mut cfg);
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    require_dataset(&a.data_dir, dataset)?;

    let data = DatasetPair::load(&a.data_dir, dataset).map_err(runtime)?;
    let dir = cli.out_dir.join(cfg.run_id());
    std::fs::create_dir_all(&dir).map_err(|e| runtime(format!("{}: {e}", dir.display())))?;
    let outputs = RunOutputs {
        checkpoint: Some(dir.join("model.ckpt")),
    };
    let result = run_experiment(&cfg, &data, &outputs, |e| eprintln!("{}", Progress::epoch_line(&cfg, e)))
        .map_err(runtime)?;
    let write = |name: &str, bytes: Vec<u8>| {
        let p = dir.join(name);
        std::fs::write(&p, bytes).map_err(|e| runtime(format!("{}: {e}", p.display())))
    };
    write("history.csv", history_csv(&result.history))?;
    write("result.json", serde_json::to_vec_pretty(&result).expect("serialisable"))?;
    println!(
        "{} macro-F1 {:.4} best epoch {} iterations {} -> {}",
        result.run_id,
        result.macro_f1(),
        result.history.best_epoch,
        result.history.iterations,
        dir.display()
    );
    Ok(())
}

fn eval(a: &EvalArgs) -> Outcome {
    let dataset = parse_dataset(&a.dataset)?;
    if !a.checkpoint.is_file() {
        return Err(usage(format!("checkpoint {} not found", a.checkpoint.display())));
    }
    require_dataset(&a.data_dir, dataset)?;
    let ckpt = load_checkpoint::<f32>(&a.checkpoint).map_err(runtime)?;
    if ckpt.model.num_classes() != dataset.num_classes() {
        return Err(usage(format!(
            "checkpoint has {} classes but {dataset} has {}",
            ckpt.model.num_classes(),
            dataset.num_classes()
        )));
    }
    let data = DatasetPair::load(&a.data_dir, dataset).map_err(runtime)?;
    let ev = evaluate(&ckpt.model, &data.test, 128).map_err(runtime)?;
    println!("macro-F1 {:.4}  accuracy {:.4}", ev.macro_f1, ev.accuracy);
    for (name, f1) in data.test.class_names.iter().zip(&ev.per_class_f1) {
        println!("  {name:<12} F1 {f1:.4}");
    }
    Ok(())
}

fn suite(cli: &Cli, a: &SuiteArgs) -> Outcome {
    if !a.grid.is_file() {
        return Err(usage(format!("grid file {} not found", a.grid.display())));
    }
    let grid = GridFile::load(&a.grid).map_err(|e| usage(e.to_string()))?;
    let runs = grid
        .expand(&a.overrides.overrides(cli.profile), cli.profile.map(ProfileArg::profile))
        .map_err(|e| usage(e.to_string()))?;
    if a.dry_run {
        for (i, r) in runs.iter().enumerate() {
            println!("{:>4} {}", i + 1, r.run_id());
        }
        println!("{} planned runs", runs.len());
        return Ok(());
    }
    let mut datasets: Vec<DatasetId> = runs.iter().map(|r| r.dataset).collect();
    datasets.dedup();
    for d in datasets {
        require_dataset(&a.data_dir, d)?;
    }
    let store = RunStore::open(&cli.out_dir).map_err(runtime)?;
    let mut progress = Progress { verbose: true };
    let records = if cli.threads > 1 {
        capsnet_harness::suite::run_suite_parallel(&runs, &a.data_dir, &store, cli.threads)
    } else {
        run_suite(&runs, &a.data_dir, &store, &mut progress)
    }
    .map_err(runtime)?;
    let report = SuiteReport::from_records(&records);
    let opts = ReportOptions {
        omit_timings: a.deterministic,
    };
    let files = emit_report(&report, cli.out_dir.join("report"), opts).map_err(runtime)?;
    for f in files {
        println!("wrote {}", f.display());
    }
    if report.failures.is_empty() {
        Ok(())
    } else {
        Err(runtime(format!("{} of {} runs failed", report.failures.len(), records.len())))
    }
}

fn report(cli: &Cli, a: &ReportArgs) -> Outcome {
    let root = a.store.clone().unwrap_or_else(|| cli.out_dir.clone());
    let store = RunStore::existing(&root).map_err(|e| usage(e.to_string()))?;
    let records = store.all().map_err(runtime)?;
    let report = SuiteReport::from_records(&records);
    let opts = ReportOptions {
        omit_timings: a.deterministic,
    };
    let files = emit_report(&report, root.join("report"), opts).map_err(runtime)?;
    for f in files {
        println!("wrote {}", f.display());
    }
    Ok(())
}

fn reconstruct(cli: &Cli, a: &ReconstructArgs) -> Outcome {
    let dataset = parse_dataset(&a.dataset)?;
    if !a.checkpoint.is_file() {
        return Err(usage(format!("checkpoint {} not found", a.checkpoint.display())));
    }
    require_dataset(&a.data_dir, dataset)?;
    let ckpt = load_checkpoint::<f32>(&a.checkpoint).map_err(runtime)?;
    if !ckpt.model.architecture().is_capsule() {
        return Err(usage(format!(
            "{} is a {} checkpoint; reconstructions need a capsnet",
            a.checkpoint.display(),
            ckpt.model.architecture()
        )));
    }
    let data = DatasetPair::load(&a.data_dir, dataset).map_err(runtime)?;
    let out = a.output.clone().unwrap_or_else(|| cli.out_dir.join("reconstructions.pgm"));
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| runtime(format!("{}: {e}", parent.display())))?;
    }
    let grid = dump_reconstructions(&ckpt.model, &data.test, a.samples, &out).map_err(runtime)?;
    println!("wrote {} ({}x{})", out.display(), grid.width, grid.height);
    Ok(())
}
