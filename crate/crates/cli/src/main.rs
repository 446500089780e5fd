use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use shillsim_cli::config::{ProviderKind, RunConfig};
use shillsim_cli::{pipeline, report, CliError};

#[derive(Parser)]
#[command(name = "shillsim", about = "Shilling-attack simulation pipeline", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic rating/review dataset.
    Synth {
        #[arg(long)]
        users: usize,
        #[arg(long)]
        items: usize,
        #[arg(long)]
        density: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Execute one attack run described by a config file.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_parser = parse_provider)]
        provider: Option<ProviderKind>,
    },
    /// Run the config once per injection rate and consolidate.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated injection rates, e.g. 0.01,0.03,0.05.
        #[arg(long)]
        rates: String,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_parser = parse_provider)]
        provider: Option<ProviderKind>,
    },
    /// Render a Markdown summary of the runs under a directory.
    Report {
        #[arg(long)]
        dir: PathBuf,
    },
    /// Check artifact integrity: config hash and seed stamps.
    Verify {
        #[arg(long)]
        dir: PathBuf,
    },
}

fn parse_provider(s: &str) -> Result<ProviderKind, String> {
    match s {
        "stub" => Ok(ProviderKind::Stub),
        "live" => Ok(ProviderKind::Live),
        other => Err(format!("unknown provider {other:?}, expected stub or live")),
    }
}

fn load_config(
    path: &PathBuf,
    seed: Option<u64>,
    out: Option<PathBuf>,
    provider: Option<ProviderKind>,
) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::from_path(path)?;
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    if let Some(out) = out {
        cfg.output.dir = out;
    }
    if let Some(kind) = provider {
        cfg.provider.kind = kind;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn parse_rates(raw: &str) -> Result<Vec<f64>, CliError> {
    raw.split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|e| CliError::Config(format!("bad rate {s:?}: {e}")))
        })
        .collect()
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.cmd {
        Cmd::Synth { users, items, density, seed, out } => {
            pipeline::cmd_synth(users, items, density, seed, &out)?;
            println!("wrote synthetic dataset to {}", out.display());
        }
        Cmd::Run { config, seed, out, provider } => {
            let cfg = load_config(&config, seed, out, provider)?;
            let outcome = pipeline::cmd_run(&cfg)?;
            println!(
                "run complete: {} target(s), config_hash={}, artifacts in {}",
                outcome.reports.len(),
                outcome.config_hash,
                outcome.out_dir.display()
            );
        }
        Cmd::Sweep { config, rates, seed, out, provider } => {
            let cfg = load_config(&config, seed, out, provider)?;
            let rates = parse_rates(&rates)?;
            let outcome = pipeline::cmd_sweep(&cfg, &rates)?;
            println!(
                "sweep complete: {} rate(s), artifacts in {}",
                outcome.rate_outcomes.len(),
                outcome.out_dir.display()
            );
        }
        Cmd::Report { dir } => {
            print!("{}", report::cmd_report(&dir)?);
        }
        Cmd::Verify { dir } => {
            let runs = report::cmd_verify(&dir)?;
            println!("verified {runs} run(s) under {}", dir.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
