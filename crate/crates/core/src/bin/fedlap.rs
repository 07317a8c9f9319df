use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fedlap::harness::{accountant_cli, run, selftest, AccountantQuery, ExperimentConfig};

#[derive(Parser)]
#[command(name = "fedlap", version, about = "Federated learning by local approximation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment described by a TOML config.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Metrics CSV path; overrides `output` in the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print `{"epsilon", "alpha"}` for a private training schedule.
    Accountant {
        #[arg(long)]
        sigma: f64,
        #[arg(long)]
        batch: usize,
        #[arg(long)]
        min_client_size: usize,
        #[arg(long, default_value_t = 1.0)]
        client_rate: f64,
        #[arg(long)]
        rounds: usize,
        /// Data accesses per round.
        #[arg(long)]
        local_updates: usize,
        #[arg(long, default_value_t = 1e-5)]
        delta: f64,
    },
    /// Run the built-in invariant checks.
    Selftest,
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Run { config, seed, out } => {
            let mut cfg = match ExperimentConfig::load(&config) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("error: {}: {e}", config.display());
                    return ExitCode::from(2);
                }
            };
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if out.is_some() {
                cfg.output = out;
            }
            match run(&cfg) {
                Ok(output) => {
                    if let Some(last) = output.rows.last() {
                        eprintln!(
                            "round {}: accuracy {:.4}, loss {:.4}, comm {}",
                            last.round, last.test_accuracy, last.test_loss, last.comm_cost
                        );
                    }
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::FAILURE
                }
            }
        }
        Command::Accountant {
            sigma,
            batch,
            min_client_size,
            client_rate,
            rounds,
            local_updates,
            delta,
        } => {
            let q = AccountantQuery {
                sigma,
                batch,
                min_client_size,
                client_rate,
                rounds,
                local_updates,
                delta,
            };
            match accountant_cli(&q) {
                Ok(answer) => {
                    println!("{}", serde_json::to_string(&answer).expect("answer serializes"));
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(2)
                }
            }
        }
        Command::Selftest => {
            let checks = selftest();
            let mut ok = true;
            for c in &checks {
                println!("{} {} ({})", if c.passed { "ok  " } else { "FAIL" }, c.name, c.detail);
                ok &= c.passed;
            }
            if ok {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
