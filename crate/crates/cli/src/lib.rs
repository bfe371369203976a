//! Experiment harness: config handling, subcommands and reports.

pub mod cli;
pub mod commands;
pub mod config;
pub mod error;
pub mod report;

use cli::{Invocation, Subcommand};
use config::ExperimentConfig;
pub use error::CliError;

fn init_logging(verbosity: u8) {
    let level = match verbosity {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .try_init();
}

/// Runs one invocation and prints a short summary to stdout.
pub fn run(inv: Invocation) -> Result<(), CliError> {
    init_logging(inv.verbosity);
    if let Some(t) = inv.threads {
        if t == 0 {
            return Err(CliError::Validation("--threads must be >= 1".into()));
        }
        // Fails only if a pool was already built, which is harmless.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global();
    }
    match inv.command {
        Subcommand::Gen => {
            let cfg = ExperimentConfig::from_raw(&inv.config)?;
            for p in commands::cmd_gen(&cfg)? {
                println!("{}", p.display());
            }
        }
        Subcommand::Attack => {
            let cfg = ExperimentConfig::from_raw(&inv.config)?;
            let datasets = if inv.datasets.is_empty() {
                commands::default_datasets(&cfg)
            } else {
                inv.datasets.clone()
            };
            let r = commands::cmd_attack(&cfg, &datasets)?;
            for i in &r.instances {
                println!(
                    "instance {}: accuracy {:.4} {}",
                    i.index,
                    i.test_accuracy,
                    if i.success { "success" } else { "fail" }
                );
            }
            println!(
                "success rate {:.3} ({}/{}), mean accuracy {:.4}",
                r.success_rate,
                r.successes,
                r.instances.len(),
                r.mean_accuracy
            );
        }
        Subcommand::ReliabilityStudy => {
            let cfg = ExperimentConfig::from_raw(&inv.config)?;
            print!("{}", commands::cmd_reliability_study(&cfg)?.to_csv());
        }
        Subcommand::Ber => {
            let cfg = ExperimentConfig::from_raw(&inv.config)?;
            let t = commands::cmd_ber(&cfg)?;
            print!("{}", t.to_csv());
            if let Some(dec) = t.strictly_decreasing {
                println!("strictly decreasing in num_mv: {dec}");
            }
        }
        Subcommand::Sweep => {
            print!("{}", commands::cmd_sweep(&inv.config)?.to_csv());
        }
        Subcommand::OracleCheck => {
            let checks = commands::cmd_oracle_check(inv.seed)?;
            let mut ok = true;
            for c in &checks {
                println!(
                    "{} {}: {}",
                    if c.passed { "PASS" } else { "FAIL" },
                    c.name,
                    c.detail
                );
                ok &= c.passed;
            }
            if !ok {
                return Err(CliError::runtime("oracle check failed"));
            }
        }
    }
    Ok(())
}
