use std::path::{Path, PathBuf};
use std::process::ExitCode;

use caremesh_harness::load::{self, LoadConfig, Mix};
use caremesh_harness::{fuzz, faults, oracle, runner, scenario_tokens, Http, InProcess, Scenario};
use caremesh_server::TokenFile;
use clap::{Parser, Subcommand};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "caremesh-sim", version, about = "Scenario runner and checks for caremesh")]
struct Cli {
    /// Also write the machine-readable result here as JSON.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Scenario scripts.
    Scenario {
        #[command(subcommand)]
        action: ScenarioCmd,
    },
    /// Exhaustive approval-gate check against the reference machine.
    Oracle {
        #[arg(long, default_value_t = oracle::MAX_K)]
        k: usize,
    },
    /// Random sequences checking that silent task changes never reach a patient.
    Secrecy {
        #[arg(long, default_value_t = 10_000)]
        sequences: usize,
        #[arg(long, default_value_t = 30)]
        len: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Random stream drop and reconnect schedules.
    Faults {
        #[arg(long, default_value_t = 1000)]
        schedules: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Latency and loss under a notification mix.
    Load {
        #[arg(long, default_value_t = 100)]
        experts: usize,
        #[arg(long, default_value_t = 400)]
        patients: usize,
        #[arg(long, default_value_t = 5000)]
        count: usize,
        /// Shares per type, e.g. `t1=0.3,t2=0.2,t3=0.2,t4=0.1,t5=0.1,t6=0.1`.
        #[arg(long)]
        mix: Option<Mix>,
        #[arg(long, default_value_t = 4)]
        clients: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Rerun at these participant totals, scaling the count to match.
        #[arg(long, value_delimiter = ',')]
        buckets: Vec<usize>,
    },
}

#[derive(Subcommand)]
enum ScenarioCmd {
    /// Runs a scenario in process, or against a server with `--target`.
    Run {
        file: PathBuf,
        /// Base URL of a running server.
        #[arg(long)]
        target: Option<String>,
        /// Token file for the server; generated from the cast when omitted.
        #[arg(long)]
        tokens: Option<PathBuf>,
        /// Write the in-process event log here once the run ends.
        #[arg(long, conflicts_with = "target")]
        save_log: Option<PathBuf>,
    },
    /// Prints the token file a server needs to run this scenario.
    Tokens { file: PathBuf },
}

/// A usage or input problem; exits with status 2.
#[derive(Debug)]
struct Failure(String);

impl<E: std::fmt::Display> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure(e.to_string())
    }
}

fn write_out(path: Option<&Path>, value: &impl Serialize) -> Result<(), Failure> {
    if let Some(path) = path {
        std::fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    }
    Ok(())
}

fn verdict(pass: bool) -> &'static str {
    if pass {
        "PASS"
    } else {
        "FAIL"
    }
}

fn run(cli: Cli) -> Result<bool, Failure> {
    let out = cli.out.as_deref();
    match cli.command {
        Cmd::Scenario { action: ScenarioCmd::Tokens { file } } => {
            let scenario = Scenario::load(&file)?;
            println!("{}", serde_json::to_string_pretty(&scenario_tokens(&scenario))?);
            Ok(true)
        }
        Cmd::Scenario {
            action:
                ScenarioCmd::Run {
                    file,
                    target,
                    tokens,
                    save_log,
                },
        } => {
            let scenario = Scenario::load(&file)?;
            let report = match target {
                Some(url) => {
                    let tokens: TokenFile = match tokens {
                        Some(p) => serde_json::from_str(&std::fs::read_to_string(p)?)?,
                        None => scenario_tokens(&scenario),
                    };
                    let mut http = Http::new(url, tokens)?;
                    runner::run(&scenario, &mut http)
                }
                None => {
                    let mut local = InProcess::new();
                    let report = runner::run(&scenario, &mut local);
                    if let Some(path) = save_log {
                        std::fs::write(path, local.coordinator.log().to_bytes()?)?;
                    }
                    report
                }
            };
            print!("{}", report.render());
            write_out(out, &report)?;
            Ok(report.passed())
        }
        Cmd::Oracle { k } => {
            if k == 0 || k > oracle::MAX_K {
                return Err(Failure(format!("k must be in 1..={}", oracle::MAX_K)));
            }
            let report = oracle::check(k);
            print!("{}", report.render());
            write_out(out, &report)?;
            Ok(report.passed())
        }
        Cmd::Secrecy { sequences, len, seed } => {
            let report = fuzz::silent_secrecy(sequences, len, seed);
            let pass = report.violations.is_empty();
            println!(
                "{} sequences, {} commands, {} silent changes, {} patient deliveries, {} violations: {}",
                report.sequences,
                report.commands,
                report.silent_changes,
                report.patient_deliveries,
                report.violations.len(),
                verdict(pass)
            );
            for v in &report.violations {
                println!("  {v}");
            }
            write_out(out, &report)?;
            Ok(pass)
        }
        Cmd::Faults { schedules, seed } => {
            let report = faults::run(schedules, seed);
            let pass = report.passed == report.schedules;
            println!(
                "{}/{} schedules passed, {} deliveries, {} drops, {} lag cutoffs, {} stale reconnects: {}",
                report.passed,
                report.schedules,
                report.deliveries,
                report.drops,
                report.lag_cutoffs,
                report.stale_reconnects,
                verdict(pass)
            );
            for f in &report.failures {
                println!("  {f}");
            }
            write_out(out, &report)?;
            Ok(pass)
        }
        Cmd::Load {
            experts,
            patients,
            count,
            mix,
            clients,
            seed,
            buckets,
        } => {
            let mut base = LoadConfig::new(experts, patients, count);
            base.mix = mix.unwrap_or_default();
            base.clients = clients;
            base.seed = seed;
            let configs: Vec<LoadConfig> = if buckets.is_empty() {
                vec![base]
            } else {
                buckets.iter().map(|&n| base.scaled(n)).collect()
            };
            let mut reports = Vec::new();
            for cfg in &configs {
                let r = load::run(cfg)?;
                println!(
                    "{:>5} participants {:>6} notifications {:>7} deliveries  p50 {:.3} ms  p95 {:.3} ms  p99 {:.3} ms  max {:.3} ms  lost {}",
                    r.participants,
                    r.notifications,
                    r.deliveries,
                    r.latency_ms.p50,
                    r.latency_ms.p95,
                    r.latency_ms.p99,
                    r.latency_ms.max,
                    r.lost
                );
                reports.push(r);
            }
            write_out(out, &reports)?;
            Ok(reports.iter().all(|r| r.lost == 0 && r.duplicates == 0))
        }
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| "warn".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(Failure(message)) => {
            eprintln!("caremesh-sim: {message}");
            ExitCode::from(2)
        }
    }
}
