//! `vbnet` command-line runner.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data or I/O
//! error, 3 numerical failure in every replication.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use vbnet::experiment::{
    generate_data, read_results, run_experiment, summarize, write_outputs, write_summary, ConfigOverrides,
    Experiment, ExperimentConfig, ModelKind, Scenario, SummaryRow,
};
use vbnet::Error;

const OUT_DIR_ENV: &str = "VBNET_OUT_DIR";
const DEFAULT_OUT_DIR: &str = "results";

#[derive(Parser)]
#[command(name = "vbnet", version, about = "Variational Bayesian regression network experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run replicated experiments and write result files.
    Run(RunArgs),
    /// Summarize an existing results.json.
    Summarize {
        /// Path to results.json.
        results: PathBuf,
        /// Also write summary.csv and summary.json here.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Write the datasets of the first replication as delimited files.
    GenData(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// TOML configuration; flags take precedence over its keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory [default: $VBNET_OUT_DIR, else ./results].
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Comma-separated subset of svar, fixed, nnet.
    #[arg(long, value_delimiter = ',')]
    models: Option<Vec<ModelArg>>,
    #[arg(long)]
    replications: Option<usize>,
    #[arg(long)]
    experiment: Option<ExperimentArg>,
    #[arg(long)]
    scenario: Option<ScenarioArg>,
    /// Concurrent replications.
    #[arg(long)]
    workers: Option<usize>,
    /// Riboflavin data file (headered, delimited).
    #[arg(long)]
    data: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelArg {
    Svar,
    Fixed,
    Nnet,
}

#[derive(Clone, Copy, ValueEnum)]
enum ExperimentArg {
    Curve,
    Riboflavin,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScenarioArg {
    Pca,
    Dropout,
}

impl RunArgs {
    fn overrides(&self) -> ConfigOverrides {
        ConfigOverrides {
            experiment: self.experiment.map(|e| match e {
                ExperimentArg::Curve => Experiment::Curve,
                ExperimentArg::Riboflavin => Experiment::Riboflavin,
            }),
            scenario: self.scenario.map(|s| match s {
                ScenarioArg::Pca => Scenario::Pca,
                ScenarioArg::Dropout => Scenario::Dropout,
            }),
            models: self.models.as_ref().map(|ms| {
                ms.iter()
                    .map(|m| match m {
                        ModelArg::Svar => ModelKind::Svar,
                        ModelArg::Fixed => ModelKind::Fixed,
                        ModelArg::Nnet => ModelKind::Nnet,
                    })
                    .collect()
            }),
            replications: self.replications,
            seed: self.seed,
            workers: self.workers,
            out_dir: self.out_dir.clone(),
            data: self.data.clone(),
        }
    }

    fn load(&self) -> Result<(ExperimentConfig, PathBuf), Error> {
        let cfg = ExperimentConfig::load_with(self.config.as_deref(), &self.overrides())?;
        let out_dir = cfg
            .out_dir
            .clone()
            .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR));
        Ok((cfg, out_dir))
    }
}

enum Failure {
    Lib(Error),
    AllReplicationsFailed(usize),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 1,
        Error::Numerical(_) => 3,
        _ => 2,
    }
}

fn print_summary(rows: &[SummaryRow]) {
    println!("model,metric,count,min,q1,median,q3,max");
    for r in rows {
        println!(
            "{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6}",
            r.model.name(),
            r.metric,
            r.count,
            r.min,
            r.q1,
            r.median,
            r.q3,
            r.max
        );
    }
}

fn run(args: &RunArgs) -> Result<(), Failure> {
    let (cfg, out_dir) = args.load()?;
    eprintln!(
        "running {:?}{} with {} replication(s), models {:?}",
        cfg.experiment,
        cfg.scenario.map(|s| format!(" ({s:?})")).unwrap_or_default(),
        cfg.replications,
        cfg.models
    );
    let output = run_experiment(&cfg)?;
    write_outputs(&output, &out_dir)?;
    for f in &output.results.failures {
        eprintln!("replication {} failed: {}", f.replication, f.error);
    }
    if output.results.records.is_empty() {
        return Err(Failure::AllReplicationsFailed(output.results.failures.len()));
    }
    print_summary(&summarize(&output.results.records)?);
    eprintln!("results written to {}", out_dir.display());
    Ok(())
}

fn summarize_file(path: &Path, out_dir: Option<&Path>) -> Result<(), Failure> {
    let results = read_results(path)?;
    let rows = summarize(&results.records)?;
    print_summary(&rows);
    if let Some(dir) = out_dir {
        write_summary(&rows, dir)?;
    }
    Ok(())
}

fn gen_data(args: &RunArgs) -> Result<(), Failure> {
    let (cfg, out_dir) = args.load()?;
    for path in generate_data(&cfg, &out_dir)? {
        println!("{}", path.display());
    }
    Ok(())
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
    let outcome = match &cli.command {
        Command::Run(args) => run(args),
        Command::Summarize { results, out_dir } => summarize_file(results, out_dir.as_deref()),
        Command::GenData(args) => gen_data(args),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Lib(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
        Err(Failure::AllReplicationsFailed(n)) => {
            eprintln!("error: all {n} replication(s) failed numerically");
            ExitCode::from(3)
        }
    }
}
