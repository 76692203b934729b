use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use homolab::harness::{fit_csv, run_experiment, ExperimentConfig, RunOptions};

#[derive(Parser)]
#[command(name = "homolab", version, about = "Stochastic homogenization experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment described by a TOML or JSON config.
    Run {
        config: PathBuf,
        /// Exit with status 2 unless every acceptance threshold holds.
        #[arg(long)]
        check: bool,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit log(y) against log(x) for two CSV columns.
    Fit {
        csv: PathBuf,
        #[arg(long)]
        x: String,
        #[arg(long)]
        y: String,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::Run {
            config,
            check,
            workers,
            out,
        } => {
            let cfg = match ExperimentConfig::load(&config) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(1);
                }
            };
            let opts = RunOptions {
                workers,
                out_dir: out,
                check,
            };
            match run_experiment(&cfg, &opts) {
                Ok(report) => {
                    println!("csv: {}", report.csv.display());
                    println!("summary: {}", report.summary.display());
                    for c in &report.outcome.checks {
                        println!(
                            "{} {} = {} (want {})",
                            if c.pass { "PASS" } else { "FAIL" },
                            c.name,
                            c.value,
                            c.threshold
                        );
                    }
                    if check && !report.passed() {
                        return ExitCode::from(2);
                    }
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(1)
                }
            }
        }
        Command::Fit { csv, x, y } => match fit_csv(&csv, &x, &y) {
            Ok(fit) => {
                println!("{}", serde_json::to_string_pretty(&fit).expect("fit serializes"));
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(1)
            }
        },
    }
}
