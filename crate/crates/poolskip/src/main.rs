//! Command-line harness: run and validate experiment configs, and run the
//! closed-form oracle and gradient-check suites.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use poolskip::harness::config::load_config;
use poolskip::harness::run_experiment;
use poolskip::verify::{closed_form_suite, gradcheck_suite, GRADCHECK_TOL, ORACLE_TOL};

#[derive(Parser)]
#[command(name = "poolskip", version, about = "Pool Skip experiment harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every seed of an experiment config and write CSV results.
    Run { config: PathBuf },
    /// Statically validate a config (shape inference, divisibility, keys).
    Validate { config: PathBuf },
    /// Run the closed-form equivalence suite and print the max deviation.
    Oracle {
        /// Number of random configurations.
        #[arg(long, default_value_t = 200)]
        cases: usize,
        #[arg(long, default_value_t = 20240)]
        seed: u64,
    },
    /// Run the central-finite-difference gradient suite.
    Gradcheck {
        #[arg(long, default_value_t = 20240)]
        seed: u64,
    },
}

fn read_config(path: &PathBuf) -> Result<poolskip::harness::ExperimentConfig, String> {
    load_config(path).map_err(|e| format!("{}: {e}", path.display()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run { config } => {
            let cfg = match read_config(&config) {
                Ok(cfg) => cfg,
                Err(msg) => {
                    eprintln!("{msg}");
                    return ExitCode::FAILURE;
                }
            };
            match run_experiment(&cfg) {
                Ok(artifacts) => {
                    println!("run complete: {} seed(s)", artifacts.outcomes.len());
                    for o in &artifacts.outcomes {
                        println!(
                            "  seed {:>3}: final loss {:.6}, top-1 error {:.2}%, mean dead fraction {:.4}",
                            o.seed, o.final_train_loss, o.final_top1_error, o.final_mean_dead_fraction
                        );
                    }
                    println!("results in {}", artifacts.dir.display());
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("run failed: {e}");
                    ExitCode::FAILURE
                }
            }
        }
        Command::Validate { config } => match read_config(&config) {
            Ok(cfg) => {
                println!(
                    "{} OK: {} layer item(s), {} seed(s), config hash {:016x}",
                    config.display(),
                    cfg.layers.len(),
                    cfg.seeds.len(),
                    cfg.content_hash()
                );
                ExitCode::SUCCESS
            }
            Err(msg) => {
                eprintln!("{msg}");
                ExitCode::FAILURE
            }
        },
        Command::Oracle { cases, seed } => {
            let report = closed_form_suite(cases, seed);
            println!(
                "oracle: {} cases in {:.2?}; max |pipeline - closed form| = {:.3e}; max |reconstruction - closed form| = {:.3e}; e=1 coverage: {}",
                report.cases,
                report.elapsed,
                report.max_pipeline_dev,
                report.max_reconstruction_dev,
                if report.e1_covered_all { "all positions" } else { "INCOMPLETE" },
            );
            if report.pass() {
                println!("oracle: PASS (tolerance {ORACLE_TOL:.0e})");
                ExitCode::SUCCESS
            } else {
                println!("oracle: FAIL (tolerance {ORACLE_TOL:.0e})");
                ExitCode::FAILURE
            }
        }
        Command::Gradcheck { seed } => {
            let report = gradcheck_suite(seed);
            for e in &report.entries {
                let status = if e.max_rel_err <= GRADCHECK_TOL { "ok" } else { "FAIL" };
                println!("gradcheck {:<44} max rel err {:.3e}  {status}", e.name, e.max_rel_err);
            }
            println!(
                "gradcheck: {} paths in {:.2?}, worst {:.3e}",
                report.entries.len(),
                report.elapsed,
                report.max_rel_err()
            );
            if report.pass(GRADCHECK_TOL) {
                println!("gradcheck: PASS (tolerance {GRADCHECK_TOL:.0e})");
                ExitCode::SUCCESS
            } else {
                println!("gradcheck: FAIL (tolerance {GRADCHECK_TOL:.0e})");
                ExitCode::FAILURE
            }
        }
    }
}
