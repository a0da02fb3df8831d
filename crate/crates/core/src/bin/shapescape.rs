use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use shapescape::harness::{
    self, ExperimentConfig, RunOptions, Status, ValidationOutput,
};
use shapescape::Error;

const EXIT_USAGE: u8 = 1;
const EXIT_NUMERICAL: u8 = 2;
const EXIT_BOUND_FAIL: u8 = 3;

#[derive(Debug, Parser)]
#[command(name = "shapescape", version, about = "Sinkhorn MDS landscapes of shape functionals")]
struct Cli {
    /// Overrides `output_dir` from the config.
    #[arg(long, global = true, value_name = "PATH")]
    output_dir: Option<PathBuf>,

    /// Worker threads (0 = all cores).
    #[arg(long, global = true, default_value_t = 0, value_name = "N")]
    threads: usize,

    /// Progress messages on stderr.
    #[arg(long, global = true)]
    verbose: bool,

    /// Record stage wall-clock times in the report (outputs stop being
    /// byte-reproducible).
    #[arg(long, global = true)]
    timings: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a dido, double_well or cone experiment.
    Run { config: PathBuf },
    /// Certify an error bound.
    Validate {
        #[command(subcommand)]
        check: Check,
    },
    /// Write shapes.json only.
    GenerateShapes { config: PathBuf },
}

#[derive(Debug, Subcommand)]
enum Check {
    /// Sinkhorn divergence versus exact transport.
    DivergenceBound { config: PathBuf },
    /// Sinkhorn MDS versus exact-transport MDS.
    EmbeddingBound { config: PathBuf },
}

fn load(path: &Path, cli: &Cli) -> Result<ExperimentConfig, Error> {
    let mut config = ExperimentConfig::from_path(path)?;
    if let Some(dir) = &cli.output_dir {
        config.output_dir = dir.clone();
    }
    Ok(config)
}

fn report_validation(out: &ValidationOutput) -> u8 {
    let label = match out.status {
        Status::Pass => "PASS",
        Status::Fail => "FAIL",
        Status::Skip => "SKIP",
    };
    println!("{label} {}", out.report_json.display());
    match out.status {
        Status::Fail => EXIT_BOUND_FAIL,
        Status::Pass | Status::Skip => 0,
    }
}

fn execute(cli: &Cli) -> Result<u8, Error> {
    let opts = RunOptions {
        threads: cli.threads,
        verbose: cli.verbose,
        timings: cli.timings,
    };
    match &cli.command {
        Command::Run { config } => {
            let config = load(config, cli)?;
            let out = harness::run(&config, &opts)?;
            println!("{}", out.shapes_json.display());
            for o in &out.outputs {
                println!("{}", o.functional_csv.display());
            }
            println!("{}", out.report_json.display());
            Ok(0)
        }
        Command::Validate { check } => match check {
            Check::DivergenceBound { config } => {
                let config = load(config, cli)?;
                Ok(report_validation(&harness::validate_divergence_bound(&config, &opts)?))
            }
            Check::EmbeddingBound { config } => {
                let config = load(config, cli)?;
                Ok(report_validation(&harness::validate_embedding_bound(&config, &opts)?))
            }
        },
        Command::GenerateShapes { config } => {
            let config = load(config, cli)?;
            println!("{}", harness::write_shapes(&config, &opts)?.display());
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { EXIT_NUMERICAL } else { EXIT_USAGE })
        }
    }
}
