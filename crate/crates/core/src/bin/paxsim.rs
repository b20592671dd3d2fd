use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use paxsim::eventlog::parse_log;
use paxsim::replay::replay;
use paxsim::{load_scenario, Report, Status};

#[derive(Parser)]
#[command(name = "paxsim", version, about = "Simulate a Paxos-replicated state machine with anomaly detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Text,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario, or every `*.scenario` file in a directory.
    Run {
        #[arg(long, required_unless_present = "batch", conflicts_with = "batch")]
        scenario: Option<PathBuf>,
        /// Override the scenario's network seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Write the event log here.
        #[arg(long)]
        log: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "text")]
        format: Format,
        /// Run every scenario in this directory in parallel.
        #[arg(long)]
        batch: Option<PathBuf>,
    },
    /// Load and validate a scenario without running it.
    Validate {
        #[arg(long)]
        scenario: PathBuf,
    },
    /// Recompute verdicts from an event log and compare them with the log.
    Replay {
        #[arg(long)]
        log: PathBuf,
    },
}

fn exit(status: Status) -> ExitCode {
    ExitCode::from(status.code() as u8)
}

fn render(report: &Report, format: Format) -> String {
    match format {
        Format::Json => report.to_json(),
        Format::Text => report.to_string(),
    }
}

fn run_one(path: &Path, seed: Option<u64>, log: Option<&Path>) -> Result<Report, String> {
    let mut scenario = load_scenario(path).map_err(|e| format!("{}: {e}", path.display()))?;
    if let Some(seed) = seed {
        scenario = scenario.with_seed(seed);
    }
    let outcome = paxsim::run(scenario);
    if let Some(log) = log {
        std::fs::write(log, outcome.log.render()).map_err(|e| format!("{}: {e}", log.display()))?;
    }
    Ok(outcome.report)
}

fn run_batch(dir: &Path, seed: Option<u64>, format: Format) -> Status {
    let mut paths: Vec<PathBuf> = match std::fs::read_dir(dir) {
        Ok(entries) => entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "scenario"))
            .collect(),
        Err(e) => {
            eprintln!("{}: {e}", dir.display());
            return Status::Invalid;
        }
    };
    paths.sort();
    let results: Vec<Result<Report, String>> = std::thread::scope(|s| {
        let handles: Vec<_> = paths
            .iter()
            .map(|p| s.spawn(move || run_one(p, seed, None)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err("simulation panicked".into())))
            .collect()
    });
    let mut statuses = Vec::new();
    for (path, result) in paths.iter().zip(results) {
        match result {
            Ok(report) => {
                println!("== {}", path.display());
                println!("{}", render(&report, format));
                statuses.push(report.status());
            }
            Err(e) => {
                eprintln!("{e}");
                statuses.push(Status::Invalid);
            }
        }
    }
    [Status::Invalid, Status::AnomalyDetected, Status::Livelock]
        .into_iter()
        .find(|s| statuses.contains(s))
        .unwrap_or(Status::Ok)
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Run {
            scenario,
            seed,
            log,
            format,
            batch,
        } => {
            if let Some(dir) = batch {
                return exit(run_batch(&dir, seed, format));
            }
            let path = scenario.expect("clap requires --scenario without --batch");
            match run_one(&path, seed, log.as_deref()) {
                Ok(report) => {
                    println!("{}", render(&report, format));
                    exit(report.status())
                }
                Err(e) => {
                    eprintln!("{e}");
                    exit(Status::Invalid)
                }
            }
        }
        Command::Validate { scenario } => match load_scenario(&scenario) {
            Ok(s) => {
                println!(
                    "{}: ok ({} acceptors, {} requests, {} faults)",
                    s.name(),
                    s.config.acceptors,
                    s.config.requests.len(),
                    s.config.faults.len()
                );
                exit(Status::Ok)
            }
            Err(e) => {
                eprintln!("{}: {e}", scenario.display());
                exit(Status::Invalid)
            }
        },
        Command::Replay { log } => {
            let records = match std::fs::read_to_string(&log)
                .map_err(|e| e.to_string())
                .and_then(|text| parse_log(&text).map_err(|e| e.to_string()))
            {
                Ok(r) => r,
                Err(e) => {
                    eprintln!("{}: {e}", log.display());
                    return exit(Status::Invalid);
                }
            };
            match replay(&records) {
                Ok(outcome) if outcome.is_clean() => {
                    println!("{} verdicts reproduced", outcome.verdicts.len());
                    exit(Status::Ok)
                }
                Ok(outcome) => {
                    for m in &outcome.mismatches {
                        println!("{m}");
                    }
                    exit(Status::Invalid)
                }
                Err(e) => {
                    eprintln!("{}: {e}", log.display());
                    exit(Status::Invalid)
                }
            }
        }
    }
}
