use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use seizure_core::classifiers::{gradient_check, small_gradcheck_case, ClassifierError, ModelKind};
use seizure_core::experiment::{
    evaluate_artifact, ingest, load_pipeline, read_cells_csv, run_experiment, write_summary_files, DataSource,
    ExperimentConfig, ExperimentError,
};
use seizure_core::segmentation::SplitMode;
use seizure_core::synth::{generate, SynthSpec};

#[derive(Parser)]
#[command(name = "seizure", version, about = "EEG seizure forecasting experiments")]
struct Cli {
    /// Experiment config (TOML); defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed for `train`, generator seed for `synth`, batch seed for `gradcheck`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Shuffle epochs with this seed before the train/test cut.
    #[arg(long, global = true)]
    shuffle_split: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Read a CHB-MIT style directory into a manifest and montaged epochs.
    Ingest {
        #[arg(long)]
        data: PathBuf,
    },
    /// Write a synthetic dataset (the config's synth spec, or the default).
    Synth,
    /// Run the configured experiment grid and write reports.
    Train {
        /// Use this dataset directory instead of the config's data source.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Score a saved pipeline on a dataset directory.
    Evaluate {
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Finite-difference gradient check on a small random batch.
    Gradcheck {
        /// One kind; every gradient-trained kind when omitted.
        #[arg(long)]
        kind: Option<ModelKind>,
    },
    /// Rebuild summary.json, best.csv and trend.csv from a cells.csv.
    Report { cells: PathBuf },
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Data(String),
    Numeric(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Data(_) => 2,
            Failure::Numeric(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Data(m) | Failure::Numeric(m) => m,
        }
    }
}

impl From<ExperimentError> for Failure {
    fn from(e: ExperimentError) -> Self {
        match e {
            ExperimentError::Config(_) => Failure::Usage(e.to_string()),
            ExperimentError::Numeric { .. } => Failure::Numeric(e.to_string()),
            _ => Failure::Data(e.to_string()),
        }
    }
}

impl From<ClassifierError> for Failure {
    fn from(e: ClassifierError) -> Self {
        match e {
            ClassifierError::NonFiniteLoss { .. } => Failure::Numeric(e.to_string()),
            ClassifierError::InvalidSpec(_) => Failure::Usage(e.to_string()),
            _ => Failure::Data(e.to_string()),
        }
    }
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure::Data(format!("{}: {e}", path.display()))
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, Failure> {
    let mut config = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.master_seed = seed;
    }
    if let Some(out) = &cli.out {
        config.output_dir = out.clone();
    }
    if cli.jobs.is_some() {
        config.jobs = cli.jobs;
    }
    if let Some(seed) = cli.shuffle_split {
        config.split = SplitMode::Shuffled { seed };
    }
    Ok(config)
}

fn out_dir(cli: &Cli, fallback: &str) -> PathBuf {
    cli.out.clone().unwrap_or_else(|| PathBuf::from(fallback))
}

fn print_json(value: &impl serde::Serialize) {
    println!("{}", serde_json::to_string_pretty(value).expect("serializable"));
}

fn run(cli: &Cli) -> Result<(), Failure> {
    match &cli.command {
        Command::Ingest { data } => {
            let config = load_config(cli)?;
            let out = out_dir(cli, "ingested");
            let ds = ingest(&DataSource::Directory(data.clone()), &config.montage, &out)?;
            println!(
                "{} patients, {} epochs, data hash {} -> {}",
                ds.patients.len(),
                ds.n_epochs(),
                ds.data_hash,
                out.display()
            );
        }
        Command::Synth => {
            let mut spec = match &cli.config {
                Some(_) => match load_config(cli)?.data {
                    DataSource::Synth(s) => s,
                    DataSource::Directory(_) => SynthSpec::default(),
                },
                None => SynthSpec::default(),
            };
            if let Some(seed) = cli.seed {
                spec.seed = seed;
            }
            let ds = generate(&spec).map_err(|e| Failure::Usage(e.to_string()))?;
            let out = out_dir(cli, "synth");
            ds.write_to(&out).map_err(|e| io_failure(&out, e))?;
            println!("{} files and {} -> {}", ds.files.len(), ds.summary_name, out.display());
        }
        Command::Train { data } => {
            let mut config = load_config(cli)?;
            if let Some(dir) = data {
                config.data = DataSource::Directory(dir.clone());
            }
            config.validate()?;
            let report = run_experiment(&config)?;
            println!(
                "{} cells, {} failures -> {}",
                report.cells.len(),
                report.failures.len(),
                config.output_dir.display()
            );
        }
        Command::Evaluate { model, data } => {
            let bytes = std::fs::read(model).map_err(|e| io_failure(model, e))?;
            let artifact = load_pipeline(&bytes)?;
            let (counts, metrics) = evaluate_artifact(&artifact, data)?;
            let result = serde_json::json!({
                "model": artifact.model.spec.kind,
                "horizon_s": artifact.horizon_s,
                "counts": counts,
                "metrics": metrics,
            });
            print_json(&result);
            if let Some(out) = &cli.out {
                std::fs::create_dir_all(out).map_err(|e| io_failure(out, e))?;
                let path = out.join("metrics.json");
                let text = serde_json::to_string_pretty(&result).expect("serializable") + "\n";
                std::fs::write(&path, text).map_err(|e| io_failure(&path, e))?;
            }
        }
        Command::Gradcheck { kind } => {
            let kinds: Vec<ModelKind> = match kind {
                Some(k) => vec![*k],
                None => ModelKind::ALL.into_iter().filter(|k| k.is_gradient_trained()).collect(),
            };
            for k in kinds {
                let (spec, batch, labels) = small_gradcheck_case(k, cli.seed.unwrap_or(0));
                let err = gradient_check(&spec, &batch, &labels)?;
                if !err.is_finite() {
                    return Err(Failure::Numeric(format!("{k}: non-finite gradient error")));
                }
                println!("{k} {err:.3e}");
            }
        }
        Command::Report { cells } => {
            let rows = read_cells_csv(cells)?;
            let out = cli
                .out
                .clone()
                .unwrap_or_else(|| cells.parent().map(Path::to_path_buf).unwrap_or_default());
            write_summary_files(&rows, None, &out)?;
            println!("{} cells summarized -> {}", rows.len(), out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
