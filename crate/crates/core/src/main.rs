use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use price_sim::config::parse_config;
use price_sim::report::run_experiment;
use price_sim::sim::{adversarial_setup, cumulative_regret_at, run_scenario};
use price_sim::{exploratory_round_bound, Error};

#[derive(Parser)]
#[command(name = "price-sim", version, about = "Contextual posted-price mechanism simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a config file.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides output.dir.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write per-round traces.
        #[arg(long)]
        trace: bool,
    },
    /// Print the bound on the number of exploratory rounds.
    Bound {
        #[arg(long)]
        n: usize,
        #[arg(long = "R")]
        radius: f64,
        #[arg(long = "S")]
        feature_bound: f64,
        #[arg(long)]
        eps: f64,
    },
    /// Run the worst-case stream that defeats cutting on conservative prices.
    Adversary {
        #[arg(long)]
        n: usize,
        #[arg(long = "T")]
        rounds: u64,
        #[arg(long)]
        allow_conservative_cuts: bool,
    },
}

enum Failure {
    Config(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config { .. } | Error::Domain(_) | Error::Ingest { .. } => Failure::Config(e.to_string()),
            _ => Failure::Runtime(e.to_string()),
        }
    }
}

fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::Run { config, out, trace } => {
            let text = std::fs::read_to_string(&config)
                .map_err(|e| Failure::Config(format!("{}: {e}", config.display())))?;
            let mut experiment = parse_config(&text)?;
            if let Some(dir) = out {
                experiment.output_dir = dir;
            }
            experiment.emit_trace |= trace;
            let report = run_experiment(&experiment).map_err(|e| match e {
                Error::Config { .. } => Failure::from(e),
                other => Failure::Runtime(other.to_string()),
            })?;
            println!("variant,repeat,cumulative_regret,regret_ratio,exploratory_rounds");
            for row in &report.rows {
                println!(
                    "{},{},{},{},{}",
                    row.variant.name(),
                    row.repeat,
                    row.summary.cumulative_regret,
                    row.summary.regret_ratio,
                    row.summary.exploratory_rounds
                );
            }
            println!("wrote {}", experiment.output_dir.display());
        }
        Command::Bound {
            n,
            radius,
            feature_bound,
            eps,
        } => {
            println!("{}", exploratory_round_bound(n, radius, feature_bound, eps)?);
        }
        Command::Adversary {
            n,
            rounds,
            allow_conservative_cuts,
        } => {
            if n < 2 || rounds < 2 {
                return Err(Failure::Config("the adversary needs n >= 2 and T >= 2".into()));
            }
            let (scenario, config) = adversarial_setup(n, rounds, allow_conservative_cuts);
            let (records, summary) = run_scenario(&scenario, &config).map_err(|e| Failure::from(e.error))?;
            let half = rounds / 2;
            let at = cumulative_regret_at(&records, &[half, rounds]);
            println!("cumulative_regret_at_{half} = {}", at[0]);
            println!("cumulative_regret_at_{rounds} = {}", at[1]);
            println!("growth = {}", at[1] / at[0]);
            println!("exploratory_rounds = {}", summary.exploratory_rounds);
            println!("refused_cuts = {}", summary.guard_skips);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
    }
}
