//! Command-line front end: prepare data, run configured experiments, rebuild
//! aggregates, render charts, and check configurations.
//!
//! Exit codes: 0 on success, 2 for file-system failures, 3 for invalid
//! input (arguments, configuration, malformed data or tables), 4 for
//! runtime failures such as diverged training.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use icplab::config::{check_semantics, echo_config, load_config, ConfigError};
use icplab::data::{
    balance_undersample, load_covtype, save_covtype, DataError, COVTYPE_CLASSES,
};
use icplab::experiment::{
    aggregate_rows, aggregate_to_csv, run_experiment, ExperimentError, ResultsTable, StageError,
};
use icplab::experiment::aggregate_from_csv;
use icplab::mlp::MlpError;
use icplab::plot::{charts_from_rows, render_chart, PlotError};

#[derive(Parser)]
#[command(
    name = "icplab",
    version,
    about = "Conformal prediction laboratory over a small neural network"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load the raw dataset, report class balance, optionally write a balanced pool
    Prepare(PrepareArgs),
    /// Run a configured experiment and write its result tables
    Run(RunArgs),
    /// Recompute aggregate rows from a raw results table
    Aggregate(AggregateArgs),
    /// Render SVG charts from an aggregate table
    Plot(PlotArgs),
    /// Parse an experiment configuration and check it for consistency
    ValidateConfig(ValidateConfigArgs),
}

#[derive(clap::Args)]
struct PrepareArgs {
    /// Raw dataset file, plain or gzip
    #[arg(long, env = "ICPLAB_DATA", default_value = "data/covtype.data")]
    data_path: PathBuf,
    /// Examples drawn per class for the balanced pool
    #[arg(long, default_value_t = 2747)]
    per_class: usize,
    /// Seed for the balanced draw
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Write the balanced pool to this file
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(clap::Args)]
struct RunArgs {
    /// Experiment configuration (TOML)
    #[arg(long)]
    config: PathBuf,
    /// Raw dataset file, plain or gzip
    #[arg(long, env = "ICPLAB_DATA", default_value = "data/covtype.data")]
    data_path: PathBuf,
    /// Root directory for run outputs
    #[arg(long, env = "ICPLAB_OUT", default_value = "results")]
    out_dir: PathBuf,
    /// Override the configured worker count
    #[arg(long)]
    workers: Option<usize>,
    /// Override the configured master seed
    #[arg(long)]
    master_seed: Option<u64>,
    /// Run directory name; defaults to the current UTC time
    #[arg(long)]
    timestamp: Option<String>,
}

#[derive(clap::Args)]
struct AggregateArgs {
    /// Raw results table (raw.csv)
    #[arg(long)]
    raw: PathBuf,
    /// Output file; stdout when omitted
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(clap::Args)]
struct PlotArgs {
    /// Aggregate table (aggregate.csv)
    #[arg(long)]
    aggregate: PathBuf,
    /// Directory for the SVG files; defaults to plots/ beside the table
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(clap::Args)]
struct ValidateConfigArgs {
    /// Experiment configuration (TOML)
    #[arg(long)]
    config: PathBuf,
    /// Class count the dataset is expected to have
    #[arg(long, default_value_t = COVTYPE_CLASSES)]
    classes: usize,
}

#[derive(Debug, Error)]
enum CliError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Experiment(#[from] ExperimentError),
    #[error(transparent)]
    Plot(#[from] PlotError),
    #[error("cannot write {path}: {source}")]
    Write {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn stage_exit(err: &StageError) -> u8 {
    match err {
        StageError::Data(DataError::Io { .. }) => 2,
        StageError::Train(MlpError::Diverged { .. }) => 4,
        StageError::Train(MlpError::Io { .. }) => 2,
        _ => 3,
    }
}

fn exit_code(err: &CliError) -> u8 {
    match err {
        CliError::Write { .. } | CliError::Read { .. } => 2,
        CliError::Data(DataError::Io { .. }) => 2,
        CliError::Data(_) => 3,
        CliError::Config(ConfigError::Io { .. }) => 2,
        CliError::Config(_) => 3,
        CliError::Experiment(ExperimentError::Repetition { source, .. })
        | CliError::Experiment(ExperimentError::Setup { source }) => stage_exit(source),
        CliError::Experiment(_) => 3,
        CliError::Plot(_) => 3,
    }
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|source| CliError::Write {
        path: path.to_path_buf(),
        source,
    })
}

fn read_file(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|source| CliError::Read {
        path: path.to_path_buf(),
        source,
    })
}

fn create_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(|source| CliError::Write {
        path: path.to_path_buf(),
        source,
    })
}

fn prepare(args: PrepareArgs) -> Result<(), CliError> {
    let data = load_covtype(&args.data_path)?;
    println!(
        "loaded {} examples with {} features",
        data.len(),
        data.feature_len()
    );
    let counts = data
        .class_counts()
        .iter()
        .enumerate()
        .map(|(label, n)| format!("{}:{n}", label + 1))
        .collect::<Vec<_>>()
        .join(" ");
    println!("class counts: {counts}");
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let pool = balance_undersample(&data, args.per_class, &mut rng)?;
    println!(
        "balanced pool: {} examples ({} per class, seed {})",
        pool.len(),
        args.per_class,
        args.seed
    );
    if let Some(out) = args.out {
        save_covtype(&pool, &out)?;
        println!("wrote {}", out.display());
    }
    Ok(())
}

fn run(args: RunArgs) -> Result<(), CliError> {
    let mut config = load_config(&args.config)?;
    if let Some(workers) = args.workers {
        config.workers = workers;
    }
    if let Some(seed) = args.master_seed {
        config.master_seed = seed;
    }
    let data = load_covtype(&args.data_path)?;
    check_semantics(&config, data.n_classes())?;

    eprintln!(
        "running {} jobs ({} grid values x {} repetitions)",
        config.grid.len() * config.repetitions,
        config.grid.len(),
        config.repetitions
    );
    let run = run_experiment(&config, &data)?;
    let agg = aggregate_rows(&run.table)?;

    let timestamp = args
        .timestamp
        .unwrap_or_else(|| chrono::Utc::now().format("%Y%m%dT%H%M%SZ").to_string());
    let dir = args
        .out_dir
        .join(config.protocol.to_string())
        .join(&timestamp);
    create_dir(&dir)?;
    write_file(&dir.join("raw.csv"), &run.table.to_csv())?;
    write_file(&dir.join("aggregate.csv"), &aggregate_to_csv(&agg))?;
    write_file(&dir.join("config.echo.toml"), &echo_config(&config))?;
    if !run.partitions.is_empty() {
        let pdir = dir.join("partitions");
        create_dir(&pdir)?;
        for p in &run.partitions {
            let name = format!("g{}_r{}.csv", p.grid, p.repetition);
            write_file(&pdir.join(name), &p.partition.to_csv())?;
        }
    }
    println!("wrote {}", dir.display());
    println!("raw rows: {}", run.table.rows.len());
    println!("aggregate rows: {}", agg.len());
    println!("partitions recorded: {}", run.partitions.len());
    Ok(())
}

fn aggregate(args: AggregateArgs) -> Result<(), CliError> {
    let text = read_file(&args.raw)?;
    let table = ResultsTable::from_csv(&text)?;
    let rows = aggregate_rows(&table)?;
    let csv = aggregate_to_csv(&rows);
    match args.out {
        Some(path) => {
            write_file(&path, &csv)?;
            println!("wrote {}", path.display());
        }
        None => print!("{csv}"),
    }
    Ok(())
}

fn plot(args: PlotArgs) -> Result<(), CliError> {
    let text = read_file(&args.aggregate)?;
    let rows = aggregate_from_csv(&text)?;
    let charts = charts_from_rows(&rows)?;
    let dir = args.out_dir.unwrap_or_else(|| {
        args.aggregate
            .parent()
            .unwrap_or(Path::new("."))
            .join("plots")
    });
    create_dir(&dir)?;
    for (name, spec) in &charts {
        let svg = render_chart(spec)?;
        write_file(&dir.join(name), &svg)?;
    }
    println!("wrote {} charts to {}", charts.len(), dir.display());
    Ok(())
}

fn validate_config(args: ValidateConfigArgs) -> Result<(), CliError> {
    let config = load_config(&args.config)?;
    check_semantics(&config, args.classes)?;
    println!(
        "configuration ok: protocol {}, {} grid values, {} epsilons, {} repetitions",
        config.protocol,
        config.grid.len(),
        config.epsilons.len(),
        config.repetitions
    );
    Ok(())
}

fn run_command(command: Command) -> Result<(), CliError> {
    match command {
        Command::Prepare(args) => prepare(args),
        Command::Run(args) => run(args),
        Command::Aggregate(args) => aggregate(args),
        Command::Plot(args) => plot(args),
        Command::ValidateConfig(args) => validate_config(args),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // help and version requests arrive as errors but are not failures
            let code = if e.use_stderr() { 3 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run_command(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::from(exit_code(&e))
        }
    }
}
