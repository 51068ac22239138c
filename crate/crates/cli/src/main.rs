//! `fairmarket`: protocol demos, simulator sweeps, incentive tables and
//! audit-log verification.
//!
//! Exit codes:
//!
//! | code | meaning |
//! |------|---------|
//! | 0  | success |
//! | 2  | bad command line |
//! | 10 | invalid scenario or parameters |
//! | 11 | file could not be read or written |
//! | 20 | a demo action ended with an unexpected outcome |
//! | 30 | audit log: broken hash chain |
//! | 31 | audit log: invalid signature |
//! | 32 | audit log: replayed state does not match |
//! | 33 | audit log: malformed header |

mod demo;
mod scenario;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fairmarket::incentives::{self, IncentiveParams};
use fairmarket::ledger::{AuditError, Ledger};
use fairmarket::netsim::{self, Axis, SimConfig};
use serde_json::json;

use crate::scenario::Scenario;

#[derive(Parser)]
#[command(
    name = "fairmarket",
    version,
    about = "Fair content marketplace: demos, simulations and audits"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario's action script on the in-process network.
    Demo {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Directory for the audit log, ledger snapshot and message log.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the timed simulator once and write its artifacts.
    Simulate {
        #[arg(long)]
        scenario: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        baseline: bool,
        /// Directory for events.jsonl, metrics.json, snapshot.json and audit.log.
        #[arg(long)]
        out: PathBuf,
    },
    /// Vary one parameter and write a CSV of per-run metrics.
    Sweep {
        #[arg(long)]
        axis: Axis,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        #[arg(long, default_value_t = 5)]
        repeats: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        scenario: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        baseline: bool,
    },
    /// Print payoff and expected advantage over a grid of faulty fractions.
    Payoff {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        k: usize,
        #[arg(long, value_delimiter = ',', default_values_t = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5])]
        f: Vec<f64>,
    },
    /// Verify an audit log: hash chain, signatures and replayed state.
    Audit { log: PathBuf },
}

#[derive(Debug)]
enum CliError {
    Config(String),
    Io { path: PathBuf, message: String },
    Protocol(demo::ProtocolFailure),
    Audit(AuditError),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 10,
            CliError::Io { .. } => 11,
            CliError::Protocol(_) => 20,
            CliError::Audit(AuditError::BrokenChain { .. }) => 30,
            CliError::Audit(AuditError::InvalidSignature { .. }) => 31,
            CliError::Audit(AuditError::StateMismatch { .. }) => 32,
            CliError::Audit(AuditError::MalformedHeader(_)) => 33,
        }
    }

    /// One JSON object for stderr.
    fn report(&self) -> serde_json::Value {
        let code = self.exit_code();
        match self {
            CliError::Config(message) => {
                json!({"error": "ConfigInvalid", "exit_code": code, "message": message})
            }
            CliError::Io { path, message } => {
                json!({"error": "Io", "exit_code": code, "path": path.display().to_string(), "message": message})
            }
            CliError::Protocol(f) => json!({
                "error": f.actual,
                "exit_code": code,
                "action": f.action,
                "kind": f.kind,
                "expected": f.expected,
                "message": f.message,
            }),
            CliError::Audit(e) => {
                let name = match e {
                    AuditError::BrokenChain { .. } => "BrokenChain",
                    AuditError::InvalidSignature { .. } => "InvalidSignature",
                    AuditError::StateMismatch { .. } => "StateMismatch",
                    AuditError::MalformedHeader(_) => "MalformedLog",
                };
                json!({"error": name, "exit_code": code, "height": e.height(), "message": e.to_string()})
            }
        }
    }
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

fn write(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| CliError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

fn make_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(|e| CliError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

fn load_scenario(path: &Path) -> Result<Scenario, CliError> {
    scenario::parse(&read(path)?).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

/// `--seed`, else the scenario's `seed`, else the `[sim]` seed.
fn sim_config(
    scenario: Option<&Path>,
    seed: Option<u64>,
    baseline: bool,
) -> Result<SimConfig, CliError> {
    let mut cfg = SimConfig::default();
    if let Some(path) = scenario {
        let s = load_scenario(path)?;
        if let Some(sim) = s.sim {
            cfg = sim;
        }
        if let Some(seed) = s.seed {
            cfg.seed = seed;
        }
    }
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    if baseline {
        cfg.ledger_check_enabled = false;
    }
    cfg.validate()
        .map_err(|e| CliError::Config(e.to_string()))?;
    Ok(cfg)
}

fn pretty(value: &impl serde::Serialize) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s
}

fn cmd_demo(path: &Path, seed: Option<u64>, out: Option<&Path>) -> Result<(), CliError> {
    let scenario = load_scenario(path)?;
    let seed = seed.or(scenario.seed).unwrap_or(1);
    let run = demo::run(&scenario, seed).map_err(CliError::Config)?;
    print!("{}", run.transcript);
    if let Some(dir) = out {
        make_dir(dir)?;
        write(&dir.join("audit.log"), &run.net.ledger.write_audit_log())?;
        write(&dir.join("snapshot.json"), &run.net.ledger.snapshot())?;
        let mut messages = String::new();
        for record in run.net.log() {
            messages.push_str(&fairmarket::canonical::to_string(record));
            messages.push('\n');
        }
        write(&dir.join("messages.jsonl"), &messages)?;
    }
    match run.failure {
        Some(f) => Err(CliError::Protocol(f)),
        None => Ok(()),
    }
}

fn cmd_simulate(
    scenario: Option<&Path>,
    seed: Option<u64>,
    baseline: bool,
    out: &Path,
) -> Result<(), CliError> {
    let cfg = sim_config(scenario, seed, baseline)?;
    let output = netsim::run(&cfg).map_err(|e| CliError::Config(e.to_string()))?;
    make_dir(out)?;
    write(&out.join("events.jsonl"), &output.events_jsonl())?;
    let metrics = json!({
        "metrics": output.metrics,
        "balance_deltas_micros": output.balance_deltas,
    });
    write(&out.join("metrics.json"), &pretty(&metrics))?;
    write(&out.join("snapshot.json"), &output.ledger.snapshot())?;
    write(&out.join("audit.log"), &output.ledger.write_audit_log())?;

    let m = &output.metrics;
    println!(
        "seed {}: {} client(s), success rate {:.3}, mean download {:.3} ms, mean upload {:.3} ms",
        cfg.seed,
        m.requests.len(),
        m.success_rate(),
        m.mean_download_ms(),
        m.mean_upload_ms()
    );
    println!(
        "{} messages, {} bytes ({} chunk, {} ledger), {} events, audit height {}",
        m.messages,
        m.bytes_transferred,
        m.chunk_bytes,
        m.ledger_bytes,
        output.events.len(),
        output.ledger.height()
    );
    Ok(())
}

fn nondecreasing(values: &[f64]) -> bool {
    values.windows(2).all(|w| w[1] >= w[0])
}

#[allow(clippy::too_many_arguments)]
fn cmd_sweep(
    axis: Axis,
    values: &[f64],
    repeats: usize,
    out: &Path,
    scenario: Option<&Path>,
    seed: Option<u64>,
    baseline: bool,
) -> Result<(), CliError> {
    let base = sim_config(scenario, seed, baseline)?;
    let rows =
        netsim::sweep(&base, axis, values, repeats).map_err(|e| CliError::Config(e.to_string()))?;
    write(out, &netsim::rows_to_csv(&rows))?;
    let summary = netsim::summarize(&rows);
    println!(
        "sweep {axis}: {} values x {repeats} repeats, base seed {}",
        values.len(),
        base.seed
    );
    println!(
        "{:>12} {:>6} {:>14} {:>12} {:>8} {:>16}",
        axis.name(),
        "runs",
        "download_ms",
        "upload_ms",
        "success",
        "bytes"
    );
    for s in &summary {
        println!(
            "{:>12} {:>6} {:>14.3} {:>12.3} {:>8.3} {:>16.0}",
            s.value,
            s.runs,
            s.mean_download_ms,
            s.mean_upload_ms,
            s.success_rate,
            s.mean_bytes_transferred
        );
    }
    let latency: Vec<f64> = summary.iter().map(|s| s.mean_download_ms).collect();
    let bytes: Vec<f64> = summary.iter().map(|s| s.mean_bytes_transferred).collect();
    let yes = |b: bool| if b { "yes" } else { "no" };
    println!(
        "download latency nondecreasing: {}",
        yes(nondecreasing(&latency))
    );
    println!(
        "bytes transferred nondecreasing: {}",
        yes(nondecreasing(&bytes))
    );
    if let (Some(lo), Some(hi)) = (
        latency.iter().copied().reduce(f64::min),
        latency.iter().copied().reduce(f64::max),
    ) {
        println!("download latency spread: {:.2}%", 100.0 * (hi - lo) / lo);
    }
    println!("wrote {}", out.display());
    Ok(())
}

fn cmd_payoff(n: usize, k: usize, grid: &[f64]) -> Result<(), CliError> {
    let config = |e: incentives::IncentiveError| CliError::Config(e.to_string());
    println!("n = {n}, k = {k}, serve cost 1/k = {:.6}", 1.0 / k as f64);
    println!(
        "{:>8} {:>12} {:>12} {:>14} {:>14}",
        "f", "target", "p_o", "(1-2f)/n", "E[adv]"
    );
    for &f in grid {
        let payoff = incentives::real_case_payoff(n, k, f).map_err(config)?;
        let advantage =
            incentives::expected_advantage(&IncentiveParams::new(n, k, f, payoff).map_err(config)?)
                .map_err(config)?;
        println!(
            "{:>8.4} {:>12.6} {:>12.6} {:>14.6} {:>14.3e}",
            f,
            -f / n as f64,
            payoff,
            (1.0 - 2.0 * f) / n as f64,
            advantage
        );
    }
    Ok(())
}

fn cmd_audit(path: &Path) -> Result<(), CliError> {
    let text = read(path)?;
    let ledger = Ledger::verify_audit_log(&text).map_err(CliError::Audit)?;
    println!(
        "audit log intact: {} entries up to height {}, final state digest {}",
        ledger.trail().len(),
        ledger.height(),
        ledger.state_digest()
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Demo {
            scenario,
            seed,
            out,
        } => cmd_demo(scenario, *seed, out.as_deref()),
        Command::Simulate {
            scenario,
            seed,
            baseline,
            out,
        } => cmd_simulate(scenario.as_deref(), *seed, *baseline, out),
        Command::Sweep {
            axis,
            values,
            repeats,
            out,
            scenario,
            seed,
            baseline,
        } => cmd_sweep(
            *axis,
            values,
            *repeats,
            out,
            scenario.as_deref(),
            *seed,
            *baseline,
        ),
        Command::Payoff { n, k, f } => cmd_payoff(*n, *k, f),
        Command::Audit { log } => cmd_audit(log),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.report());
            ExitCode::from(e.exit_code())
        }
    }
}
