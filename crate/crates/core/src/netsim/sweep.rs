use std::fmt::Write as _;
use std::str::FromStr;

use rayon::prelude::*;
use serde::Serialize;

use crate::actors::Behavior;
use crate::codec::CodingParams;

use super::{run, Latency, SimConfig, SimError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    FileSize,
    K,
    N,
    /// Pool size with the coding scaled to keep `k/n` fixed.
    Facilitators,
    NClients,
    Latency,
    Faults,
}

impl Axis {
    pub const ALL: [Axis; 7] = [
        Axis::FileSize,
        Axis::K,
        Axis::N,
        Axis::Facilitators,
        Axis::NClients,
        Axis::Latency,
        Axis::Faults,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Axis::FileSize => "file_size",
            Axis::K => "k",
            Axis::N => "n",
            Axis::Facilitators => "facilitators",
            Axis::NClients => "n_clients",
            Axis::Latency => "latency",
            Axis::Faults => "faults",
        }
    }
}

impl FromStr for Axis {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Axis::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = Axis::ALL.iter().map(|a| a.name()).collect();
                format!("unknown axis {s:?}, expected one of {}", names.join(", "))
            })
    }
}

impl std::fmt::Display for Axis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

fn integral(axis: Axis, value: f64) -> Result<usize, SimError> {
    if value.is_finite() && value >= 0.0 && value.fract() == 0.0 && value <= u32::MAX as f64 {
        Ok(value as usize)
    } else {
        Err(SimError::ConfigInvalid(format!(
            "{axis} needs a non-negative integer, got {value}"
        )))
    }
}

fn coding(k: usize, n: usize) -> Result<CodingParams, SimError> {
    CodingParams::new(k, n).map_err(|e| SimError::ConfigInvalid(e.to_string()))
}

/// `base` with one parameter replaced.
pub fn apply_axis(base: &SimConfig, axis: Axis, value: f64) -> Result<SimConfig, SimError> {
    let mut cfg = base.clone();
    let (k0, n0) = (base.coding.k(), base.coding.n());
    match axis {
        Axis::FileSize => cfg.file_size_bytes = integral(axis, value)? as u64,
        Axis::K => cfg.coding = coding(integral(axis, value)?, n0)?,
        Axis::N => {
            let n = integral(axis, value)?;
            cfg.coding = coding(k0, n)?;
            cfg.n_facilitators = cfg.n_facilitators.max(n);
        }
        Axis::Facilitators => {
            let pool = integral(axis, value)?;
            if pool * k0 % n0 != 0 {
                return Err(SimError::ConfigInvalid(format!(
                    "{pool} facilitators cannot keep the {k0}:{n0} ratio"
                )));
            }
            cfg.coding = coding(pool * k0 / n0, pool)?;
            cfg.n_facilitators = pool;
        }
        Axis::NClients => cfg.n_clients = integral(axis, value)?,
        Axis::Latency => cfg.latency_ms = Latency::Uniform(value),
        Axis::Faults => {
            let profile = base
                .faults
                .values()
                .copied()
                .find(|b| b.is_faulty())
                .unwrap_or(Behavior::Crash);
            cfg.set_fault_count(integral(axis, value)?, profile);
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub axis: Axis,
    pub value: f64,
    pub repeat: usize,
    pub seed: u64,
    pub mean_download_ms: f64,
    pub max_download_ms: f64,
    pub mean_upload_ms: f64,
    pub success_rate: f64,
    pub bytes_transferred: u64,
    pub chunk_bytes: u64,
    pub ledger_bytes: u64,
    pub download_bytes: u64,
    pub failures: usize,
}

/// Runs every value `repeats` times. Repeat `r` uses seed `base.seed + r`
/// for every value, so rows are paired across values.
pub fn sweep(
    base: &SimConfig,
    axis: Axis,
    values: &[f64],
    repeats: usize,
) -> Result<Vec<SweepRow>, SimError> {
    if values.is_empty() {
        return Err(SimError::ConfigInvalid(
            "sweep needs at least one value".to_string(),
        ));
    }
    if repeats == 0 {
        return Err(SimError::ConfigInvalid(
            "repeats must be positive".to_string(),
        ));
    }
    let configs: Vec<(f64, usize, SimConfig)> = values
        .iter()
        .map(|&v| apply_axis(base, axis, v))
        .collect::<Result<Vec<_>, _>>()?
        .into_iter()
        .zip(values)
        .flat_map(|(cfg, &v)| {
            (0..repeats).map(move |r| {
                let mut cfg = cfg.clone();
                cfg.seed = base.seed.wrapping_add(r as u64);
                (v, r, cfg)
            })
        })
        .collect();
    configs
        .par_iter()
        .map(|(value, repeat, cfg)| {
            let m = run(cfg)?.metrics;
            Ok(SweepRow {
                axis,
                value: *value,
                repeat: *repeat,
                seed: cfg.seed,
                mean_download_ms: m.mean_download_ms(),
                max_download_ms: m.max_download_ms(),
                mean_upload_ms: m.mean_upload_ms(),
                success_rate: m.success_rate(),
                bytes_transferred: m.bytes_transferred,
                chunk_bytes: m.chunk_bytes,
                ledger_bytes: m.ledger_bytes,
                download_bytes: m.download_bytes(),
                failures: m.failures,
            })
        })
        .collect()
}

/// Per-value averages over repeats.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepSummary {
    pub value: f64,
    pub runs: usize,
    pub mean_download_ms: f64,
    pub mean_upload_ms: f64,
    pub success_rate: f64,
    pub mean_bytes_transferred: f64,
    pub mean_download_bytes: f64,
}

pub fn summarize(rows: &[SweepRow]) -> Vec<SweepSummary> {
    let mut values: Vec<f64> = Vec::new();
    for r in rows {
        if !values.contains(&r.value) {
            values.push(r.value);
        }
    }
    values
        .into_iter()
        .map(|value| {
            let group: Vec<&SweepRow> = rows.iter().filter(|r| r.value == value).collect();
            let avg = |f: &dyn Fn(&SweepRow) -> f64| {
                group.iter().map(|r| f(r)).sum::<f64>() / group.len() as f64
            };
            SweepSummary {
                value,
                runs: group.len(),
                mean_download_ms: avg(&|r| r.mean_download_ms),
                mean_upload_ms: avg(&|r| r.mean_upload_ms),
                success_rate: avg(&|r| r.success_rate),
                mean_bytes_transferred: avg(&|r| r.bytes_transferred as f64),
                mean_download_bytes: avg(&|r| r.download_bytes as f64),
            }
        })
        .collect()
}

pub const CSV_HEADER: &str = "axis,value,repeat,seed,mean_download_ms,max_download_ms,mean_upload_ms,success_rate,bytes_transferred,chunk_bytes,ledger_bytes,download_bytes,failures";

pub fn rows_to_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{:.3},{:.3},{:.3},{:.4},{},{},{},{},{}",
            r.axis,
            r.value,
            r.repeat,
            r.seed,
            r.mean_download_ms,
            r.max_download_ms,
            r.mean_upload_ms,
            r.success_rate,
            r.bytes_transferred,
            r.chunk_bytes,
            r.ledger_bytes,
            r.download_bytes,
            r.failures
        );
    }
    out
}
