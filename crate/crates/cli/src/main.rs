//! Command-line front end: run experiments, sweep constant averaging rates,
//! compare schedules against the constant-1 baseline, and validate configs.
//!
//! Every config key can be overridden on the command line as
//! `--section.key=value`; unrecognized flags without a dot are usage errors.

use std::path::PathBuf;
use std::process::ExitCode;

use gossipsim::harness::{self, RunConfig};
use gossipsim::{Error, Result};

const USAGE: &str = "\
gossipsim - decentralized SGD simulator with averaging-rate scheduling

USAGE:
  gossipsim <SUBCOMMAND> [OPTIONS] [--section.key=value ...]

SUBCOMMANDS:
  run              Run the configured experiment over its seeds
  sweep-gamma      Run constant-rate schedules for a list of gamma values
  compare-ars      Run the configured schedule against the constant gamma=1 baseline
  validate-config  Check the config and exit

OPTIONS:
  --config PATH    Read configuration from PATH (INI-style sections)
  --preset desk    Start from the built-in desk-scale preset (default when
                   --config is not given)
  --out DIR        Shorthand for --run.out_dir=DIR
  --gammas LIST    (sweep-gamma) comma-separated values in (0,1];
                   default 0.1,0.2,...,1.0
  --help           Show this message

Any argument of the form --section.key=value overrides the corresponding
config key; command-line values win over the file. The GOSSIPSIM_OUT
environment variable re-roots relative output directories.

EXIT CODES:
  0  success
  1  usage or configuration error
  2  training aborted (non-finite loss)
";

#[derive(Debug)]
struct Cli {
    command: String,
    config_path: Option<PathBuf>,
    preset: Option<String>,
    out: Option<String>,
    gammas: Option<String>,
    overrides: Vec<String>,
}

fn parse_args(args: &[String]) -> Result<Cli> {
    let mut iter = args.iter().peekable();
    let command = match iter.next() {
        Some(c) if !c.starts_with('-') => c.clone(),
        Some(c) if c == "--help" || c == "-h" => {
            print!("{USAGE}");
            std::process::exit(0);
        }
        _ => return Err(Error::config("missing subcommand (try --help)")),
    };

    let mut cli = Cli {
        command,
        config_path: None,
        preset: None,
        out: None,
        gammas: None,
        overrides: Vec::new(),
    };

    let take_value = |iter: &mut std::iter::Peekable<std::slice::Iter<String>>,
                          flag: &str,
                          inline: Option<&str>|
     -> Result<String> {
        if let Some(v) = inline {
            return Ok(v.to_string());
        }
        iter.next()
            .cloned()
            .ok_or_else(|| Error::config(format!("{flag} requires a value")))
    };

    while let Some(arg) = iter.next() {
        let (flag, inline) = match arg.split_once('=') {
            Some((f, v)) => (f, Some(v)),
            None => (arg.as_str(), None),
        };
        match flag {
            "--help" | "-h" => {
                print!("{USAGE}");
                std::process::exit(0);
            }
            "--config" => cli.config_path = Some(take_value(&mut iter, flag, inline)?.into()),
            "--preset" => cli.preset = Some(take_value(&mut iter, flag, inline)?),
            "--out" => cli.out = Some(take_value(&mut iter, flag, inline)?),
            "--gammas" => cli.gammas = Some(take_value(&mut iter, flag, inline)?),
            _ if flag.starts_with("--") && flag.contains('.') && inline.is_some() => {
                cli.overrides.push(arg.clone());
            }
            _ => {
                return Err(Error::config(format!(
                    "unrecognized argument '{arg}' (try --help)"
                )))
            }
        }
    }
    Ok(cli)
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    if cli.config_path.is_some() && cli.preset.is_some() {
        return Err(Error::config("--config and --preset are mutually exclusive"));
    }
    let mut overrides = cli.overrides.clone();
    if let Some(out) = &cli.out {
        overrides.push(format!("run.out_dir={out}"));
    }
    match (&cli.config_path, &cli.preset) {
        (Some(path), _) => RunConfig::from_file(path, &overrides),
        (None, preset) => {
            let name = preset.as_deref().unwrap_or("desk");
            if name != "desk" {
                return Err(Error::config(format!("unknown preset '{name}'")));
            }
            RunConfig::from_ini(&RunConfig::desk_preset().to_ini_string(), &overrides)
        }
    }
}

fn parse_gammas(cli: &Cli) -> Result<Vec<f64>> {
    match &cli.gammas {
        None => Ok((1..=10).map(|k| k as f64 / 10.0).collect()),
        Some(raw) => raw
            .split(',')
            .map(|t| {
                t.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::config(format!("--gammas: bad value '{t}': {e}")))
            })
            .collect(),
    }
}

fn cmd_run(config: &RunConfig) -> Result<()> {
    let summary = harness::run(config)?;
    println!("seed,test_acc_consensus");
    for (seed, acc, _) in &summary.per_seed {
        println!("{seed},{acc}");
    }
    println!(
        "mean ± std (population): {} ± {}",
        summary.mean_accuracy, summary.std_accuracy
    );
    println!("outputs: {}", summary.out_dir.display());
    Ok(())
}

fn cmd_sweep(config: &RunConfig, gammas: &[f64]) -> Result<()> {
    let result = harness::sweep_gamma(config, gammas)?;
    for warning in &result.warnings {
        eprintln!("warning: {warning}");
    }
    println!("gamma,test_acc_mean,test_acc_std");
    for (gamma, mean, std) in &result.rows {
        println!("{gamma},{mean},{std}");
    }
    println!("outputs: {}", result.out_dir.display());
    Ok(())
}

fn cmd_compare(config: &RunConfig) -> Result<()> {
    let result = harness::compare_ars(config)?;
    println!("arm,test_acc_mean,test_acc_std");
    println!(
        "without_ars,{},{}",
        result.without_ars.summary.mean_accuracy, result.without_ars.summary.std_accuracy
    );
    println!(
        "with_ars,{},{}",
        result.with_ars.summary.mean_accuracy, result.with_ars.summary.std_accuracy
    );
    println!("gap (with - without): {}", result.gap);
    println!("outputs: {}", result.out_dir.display());
    Ok(())
}

fn cmd_validate(cli: &Cli) -> Result<()> {
    let config = load_config(cli)?;
    // Surface problems that only show up when realizing the pieces (for
    // example an invalid matrix file), not just key-level validation.
    harness::experiments::build_topology(&config)?;
    if let gossipsim::harness::DataConfig::Csv { .. } = &config.data {
        harness::experiments::build_dataset(&config)?;
    }
    println!("config ok");
    Ok(())
}

fn dispatch(cli: &Cli) -> Result<()> {
    match cli.command.as_str() {
        "run" => cmd_run(&load_config(cli)?),
        "sweep-gamma" => {
            let config = load_config(cli)?;
            let gammas = parse_gammas(cli)?;
            cmd_sweep(&config, &gammas)
        }
        "compare-ars" => cmd_compare(&load_config(cli)?),
        "validate-config" => cmd_validate(cli),
        other => Err(Error::config(format!(
            "unknown subcommand '{other}' (try --help)"
        ))),
    }
}

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let cli = match parse_args(&args) {
        Ok(cli) => cli,
        Err(err) => {
            eprintln!("error: {err}");
            return ExitCode::from(1);
        }
    };
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err @ Error::TrainingAborted { .. }) => {
            eprintln!("error: {err}");
            ExitCode::from(2)
        }
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(1)
        }
    }
}
