//! Argument parsing. Every config key doubles as a `--<key>` flag that
//! overrides the config file.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Arg, ArgAction, ArgMatches, Command};

use crate::config::{RawConfig, KEYS};
use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Subcommand {
    Gen,
    Attack,
    ReliabilityStudy,
    Ber,
    Sweep,
    OracleCheck,
}

#[derive(Debug, Clone)]
pub struct Invocation {
    pub command: Subcommand,
    pub config: RawConfig,
    pub threads: Option<usize>,
    pub verbosity: u8,
    /// Dataset files passed to `attack`.
    pub datasets: Vec<PathBuf>,
    /// Seed for `oracle-check`.
    pub seed: u64,
}

fn with_common(cmd: Command) -> Command {
    // A repeated flag takes its last value.
    let mut cmd = cmd
        .args_override_self(true)
        .arg(
            Arg::new("config")
                .long("config")
                .short('c')
                .value_name("FILE")
                .help("config file of `section.key = value` lines"),
        )
        .arg(
            Arg::new("threads")
                .long("threads")
                .value_name("N")
                .value_parser(clap::value_parser!(usize))
                .help("worker threads (results do not depend on it)"),
        )
        .arg(
            Arg::new("verbose")
                .short('v')
                .long("verbose")
                .action(ArgAction::Count)
                .help("more logging; repeat for debug output"),
        );
    for k in KEYS {
        let help = match k.default {
            Some(d) => format!("{} [default: {d}]", k.help),
            None => k.help.to_string(),
        };
        cmd = cmd.arg(
            Arg::new(k.key)
                .long(k.key)
                .value_name("VALUE")
                .help(help)
                .help_heading("Config overrides"),
        );
    }
    cmd
}

pub fn command() -> Command {
    Command::new("ldhf")
        .version(env!("CARGO_PKG_VERSION"))
        .about("Simulate PUFs, build reliability datasets and run neural modeling attacks")
        .subcommand_required(true)
        .arg_required_else_help(true)
        .subcommand(with_common(
            Command::new("gen").about("generate one CRP dataset per instance"),
        ))
        .subcommand(
            with_common(Command::new("attack").about("train the configured attack on datasets"))
                .arg(
                    Arg::new("datasets")
                        .value_name("DATASET")
                        .num_args(0..)
                        .value_parser(clap::value_parser!(PathBuf))
                        .help("dataset files, one per instance (default: those written by gen)"),
                ),
        )
        .subcommand(with_common(
            Command::new("reliability-study")
                .about("compare measured reliability across study.m_values"),
        ))
        .subcommand(with_common(
            Command::new("ber").about("bit error rate per ber.num_mv_values entry"),
        ))
        .subcommand(with_common(
            Command::new("sweep").about("gen + attack for every value of sweep.axis"),
        ))
        .subcommand(
            with_common(
                Command::new("oracle-check")
                    .about("check simulator and trainer against reference computations"),
            )
            .arg(
                Arg::new("seed")
                    .long("seed")
                    .value_parser(clap::value_parser!(u64))
                    .default_value("0"),
            ),
        )
}

fn config_from(m: &ArgMatches) -> Result<RawConfig, CliError> {
    let mut raw = match m.get_one::<String>("config") {
        Some(path) => RawConfig::load(path.as_ref())?,
        None => RawConfig::default(),
    };
    for k in KEYS {
        if let Some(v) = m.get_one::<String>(k.key) {
            raw.set(k.key, v.clone())?;
        }
    }
    Ok(raw)
}

/// Parses the command line. Help and version requests come back as
/// `Err(clap::Error)` for the caller to print.
pub fn parse<I, T>(args: I) -> Result<Result<Invocation, CliError>, clap::Error>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let matches = command().try_get_matches_from(args)?;
    let (name, m) = matches.subcommand().expect("subcommand is required");
    let command = match name {
        "gen" => Subcommand::Gen,
        "attack" => Subcommand::Attack,
        "reliability-study" => Subcommand::ReliabilityStudy,
        "ber" => Subcommand::Ber,
        "sweep" => Subcommand::Sweep,
        "oracle-check" => Subcommand::OracleCheck,
        other => unreachable!("unknown subcommand {other}"),
    };
    let datasets = m
        .try_get_many::<PathBuf>("datasets")
        .ok()
        .flatten()
        .map(|v| v.cloned().collect())
        .unwrap_or_default();
    let seed = m
        .try_get_one::<u64>("seed")
        .ok()
        .flatten()
        .copied()
        .unwrap_or(0);
    Ok(config_from(m).map(|config| Invocation {
        command,
        config,
        threads: m.get_one::<usize>("threads").copied(),
        verbosity: m.get_count("verbose"),
        datasets,
        seed,
    }))
}
