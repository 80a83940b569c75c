use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use clusternorm::harness::{
    all_mode_configs, batch_size_sweep, compare_modes, dump_diagnostics, gamma_sweep, run_experiment, train_model,
    with_suffix, write_metrics, write_text, ComparisonTable, ExperimentConfig, ModelConfig, SWEEP_BATCH_SIZES,
};
use clusternorm::model::{io, Model};
use clusternorm::{Error, NormMode};

#[derive(Parser)]
#[command(name = "clusternorm", version, about = "Test-time normalization experiments on synthetic domain streams")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build templates, capture source statistics, fit the head and save the model.
    Train {
        /// Experiment config; only its `model` section is used.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides the network seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one experiment and write its metrics.
    Run(RunArgs),
    /// Compare all five normalization modes on the configured stream.
    Compare(RunArgs),
    /// Write cluster-count and sensitivity diagnostics for each seed.
    Diagnose(RunArgs),
    /// FINDStar accuracy across gating thresholds.
    SweepGamma {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_delimiter = ',', default_values_t = vec![0.0, 0.05, 0.1, 0.3, 0.6, 1.0])]
        gammas: Vec<f64>,
    },
    /// Accuracy of the configured mode when the stream is cut into smaller batches.
    SweepBatch {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_delimiter = ',', default_values_t = SWEEP_BATCH_SIZES.to_vec())]
        sizes: Vec<usize>,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    mode: Option<NormMode>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    /// Runs this single seed instead of the configured list.
    #[arg(long)]
    seed: Option<u64>,
    /// Output path (metrics file, or file stem for tables and diagnostics).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Saved model to use instead of training one from the config.
    #[arg(long)]
    model: Option<PathBuf>,
}

/// Failure with the process exit code it maps to.
struct Failure {
    code: u8,
    error: Error,
}

impl From<Error> for Failure {
    fn from(error: Error) -> Self {
        let code = if error.is_config() { 1 } else { 2 };
        Failure { code, error }
    }
}

type CliResult<T> = Result<T, Failure>;

fn config_failure(error: Error) -> Failure {
    Failure { code: 1, error }
}

impl RunArgs {
    fn load(&self) -> CliResult<ExperimentConfig> {
        let mut cfg = ExperimentConfig::load(&self.config).map_err(config_failure)?;
        if let Some(mode) = self.mode {
            cfg.normalizer.mode = mode;
        }
        if let Some(alpha) = self.alpha {
            cfg.normalizer.alpha = alpha;
        }
        if let Some(gamma) = self.gamma {
            cfg.normalizer.gamma_threshold = gamma;
        }
        if let Some(seed) = self.seed {
            cfg.seeds = vec![seed];
        }
        if let Some(out) = &self.out {
            cfg.output = Some(out.clone());
        }
        if let Some(model) = &self.model {
            cfg.model_path = Some(model.clone());
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn output(&self, cfg: &ExperimentConfig, default: &str) -> PathBuf {
        cfg.output.clone().unwrap_or_else(|| PathBuf::from(default))
    }
}

fn model_for(cfg: &ExperimentConfig) -> CliResult<Model> {
    match &cfg.model_path {
        Some(path) => Ok(io::load(path)?),
        None => Ok(train_model(&cfg.model)?),
    }
}

fn write_table(table: &ComparisonTable, stem: &Path) -> CliResult<()> {
    print!("{}", table.to_csv());
    write_text(&with_suffix(stem, "csv"), &table.to_csv())?;
    write_text(&with_suffix(stem, "json"), &table.to_json()?)?;
    Ok(())
}

fn train(config: Option<&Path>, seed: Option<u64>, out: &Path) -> CliResult<()> {
    let mut model_cfg = match config {
        Some(path) => ExperimentConfig::load(path).map_err(config_failure)?.model,
        None => ModelConfig::default(),
    };
    if let Some(seed) = seed {
        model_cfg.seed = seed;
    }
    let model = train_model(&model_cfg)?;
    io::save(&model, out)?;
    println!("clean accuracy {:.4}, model written to {}", model.meta.clean_accuracy, out.display());
    Ok(())
}

fn run(args: &RunArgs) -> CliResult<()> {
    let cfg = args.load()?;
    let model = model_for(&cfg)?;
    let out = args.output(&cfg, "metrics.json");
    let runs = run_experiment(&cfg, &model)?;
    let many = runs.len() > 1;
    for r in &runs {
        let path = if many { with_suffix(&out, &format!("seed{}.json", r.seed)) } else { out.clone() };
        write_metrics(r, &path)?;
        println!("{} seed {}: accuracy {:.4} -> {}", r.mode, r.seed, r.mean_accuracy, path.display());
    }
    Ok(())
}

fn compare(args: &RunArgs) -> CliResult<()> {
    let cfg = args.load()?;
    let model = model_for(&cfg)?;
    let table = compare_modes(&all_mode_configs(&cfg), &model)?;
    write_table(&table, &args.output(&cfg, "compare"))
}

fn diagnose(args: &RunArgs) -> CliResult<()> {
    let cfg = args.load()?;
    let model = model_for(&cfg)?;
    let stem = args.output(&cfg, "diagnostics");
    for r in run_experiment(&cfg, &model)? {
        for path in dump_diagnostics(&r, &with_suffix(&stem, &format!("seed{}", r.seed)))? {
            println!("{}", path.display());
        }
    }
    Ok(())
}

fn execute(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Train { config, seed, out } => train(config.as_deref(), seed, &out),
        Command::Run(args) => run(&args),
        Command::Compare(args) => compare(&args),
        Command::Diagnose(args) => diagnose(&args),
        Command::SweepGamma { run, gammas } => {
            let cfg = run.load()?;
            let model = model_for(&cfg)?;
            let table = gamma_sweep(&cfg, &gammas, &model)?;
            write_table(&table, &run.output(&cfg, "gamma-sweep"))
        }
        Command::SweepBatch { run, sizes } => {
            let cfg = run.load()?;
            let model = model_for(&cfg)?;
            let table = batch_size_sweep(&cfg, &sizes, &model)?;
            write_table(&table, &run.output(&cfg, "batch-sweep"))
        }
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
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.error);
            ExitCode::from(f.code)
        }
    }
}
