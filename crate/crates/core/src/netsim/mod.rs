//! Seeded discrete-event simulation of uploads and purchases.
//!
//! Time is kept in integer microseconds. A message of `s` bytes from `a` to
//! `b` starts when `a`'s uplink and `b`'s downlink are both free, occupies
//! both for `s / bandwidth`, and arrives `latency(a, b)` after it finishes.
//! Ledger writes commit a fixed delay after they reach the ledger node;
//! reads are answered on arrival.

mod engine;
mod metrics;
mod sweep;


use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::actors::{Behavior, FetchStrategy};
use crate::amount::Amount;
use crate::codec::CodingParams;
use crate::crypto::Digest;

pub use engine::{client_id, facilitator_id, run, SimOutput, PUBLISHER_ID};
pub use metrics::{RequestMetrics, RunMetrics};
pub use sweep::{
    apply_axis, rows_to_csv, summarize, sweep, Axis, SweepRow, SweepSummary, CSV_HEADER,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    ConfigInvalid(String),
}

/// Either one latency for every pair or a full matrix indexed by node:
/// ledger, publisher, facilitators `f0..`, then clients `c0..`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Latency {
    Uniform(f64),
    Matrix(Vec<Vec<f64>>),
}

impl Default for Latency {
    fn default() -> Self {
        Latency::Uniform(20.0)
    }
}

fn default_seed() -> u64 {
    1
}
fn default_facilitators() -> usize {
    6
}
fn default_coding() -> CodingParams {
    CodingParams::new(4, 6).expect("4:6 is valid")
}
fn default_file_size() -> u64 {
    10_000_000
}
fn default_bandwidth() -> f64 {
    12_500.0
}
fn default_one() -> usize {
    1
}
fn default_true() -> bool {
    true
}
fn default_commit_delay() -> f64 {
    50.0
}
fn default_client_timeout() -> f64 {
    1_000.0
}
fn default_upload_timeout() -> f64 {
    60_000.0
}
fn default_price() -> Amount {
    Amount::whole(1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_facilitators")]
    pub n_facilitators: usize,
    #[serde(default = "default_coding")]
    pub coding: CodingParams,
    #[serde(default = "default_file_size")]
    pub file_size_bytes: u64,
    /// Files are placed round-robin over the facilitator pool; client `c`
    /// buys file `c mod n_files`.
    #[serde(default = "default_one")]
    pub n_files: usize,
    #[serde(default)]
    pub latency_ms: Latency,
    #[serde(default = "default_bandwidth")]
    pub bandwidth_bytes_per_ms: f64,
    #[serde(default = "default_one")]
    pub n_clients: usize,
    /// Gap between consecutive client start times.
    #[serde(default)]
    pub client_interval_ms: f64,
    /// Facilitator id (`f0`, `f1`, ...) to profile; absent ids are honest.
    #[serde(default)]
    pub faults: BTreeMap<String, Behavior>,
    #[serde(default)]
    pub fetch_strategy: FetchStrategy,
    #[serde(default = "default_true")]
    pub ledger_check_enabled: bool,
    #[serde(default = "default_commit_delay")]
    pub commit_delay_ms: f64,
    #[serde(default = "default_client_timeout")]
    pub client_timeout_ms: f64,
    #[serde(default = "default_upload_timeout")]
    pub upload_timeout_ms: f64,
    #[serde(default = "default_price")]
    pub price: Amount,
    /// Defaults to `price / n`, the ideal-case payoff.
    #[serde(default)]
    pub payout_per_facilitator: Option<Amount>,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            seed: default_seed(),
            n_facilitators: default_facilitators(),
            coding: default_coding(),
            file_size_bytes: default_file_size(),
            n_files: 1,
            latency_ms: Latency::default(),
            bandwidth_bytes_per_ms: default_bandwidth(),
            n_clients: 1,
            client_interval_ms: 0.0,
            faults: BTreeMap::new(),
            fetch_strategy: FetchStrategy::default(),
            ledger_check_enabled: true,
            commit_delay_ms: default_commit_delay(),
            client_timeout_ms: default_client_timeout(),
            upload_timeout_ms: default_upload_timeout(),
            price: default_price(),
            payout_per_facilitator: None,
        }
    }
}

fn invalid(msg: impl Into<String>) -> SimError {
    SimError::ConfigInvalid(msg.into())
}

fn non_negative(name: &str, v: f64) -> Result<(), SimError> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(invalid(format!(
            "{name} must be a finite non-negative number, got {v}"
        )))
    }
}

impl SimConfig {
    pub fn node_count(&self) -> usize {
        2 + self.n_facilitators + self.n_clients
    }

    /// Number of facilitators given a faulty profile.
    pub fn fault_count(&self) -> usize {
        self.faults.values().filter(|b| b.is_faulty()).count()
    }

    pub fn payout(&self) -> Amount {
        self.payout_per_facilitator
            .unwrap_or_else(|| self.price.scale(1.0 / self.coding.n() as f64))
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.coding.n() > self.n_facilitators {
            return Err(invalid(format!(
                "coding {} needs {} facilitators, pool has {}",
                self.coding,
                self.coding.n(),
                self.n_facilitators
            )));
        }
        if self.file_size_bytes == 0 {
            return Err(invalid("file_size_bytes must be positive"));
        }
        if self.n_files == 0 || self.n_clients == 0 {
            return Err(invalid("n_files and n_clients must be positive"));
        }
        if !(self.bandwidth_bytes_per_ms.is_finite() && self.bandwidth_bytes_per_ms > 0.0) {
            return Err(invalid("bandwidth_bytes_per_ms must be positive"));
        }
        non_negative("client_interval_ms", self.client_interval_ms)?;
        non_negative("commit_delay_ms", self.commit_delay_ms)?;
        non_negative("client_timeout_ms", self.client_timeout_ms)?;
        non_negative("upload_timeout_ms", self.upload_timeout_ms)?;
        match &self.latency_ms {
            Latency::Uniform(v) => non_negative("latency_ms", *v)?,
            Latency::Matrix(rows) => {
                let size = self.node_count();
                if rows.len() != size || rows.iter().any(|r| r.len() != size) {
                    return Err(invalid(format!("latency matrix must be {size}x{size}")));
                }
                for v in rows.iter().flatten() {
                    non_negative("latency_ms entry", *v)?;
                }
            }
        }
        for id in self.faults.keys() {
            let known = id
                .strip_prefix('f')
                .and_then(|i| i.parse::<usize>().ok())
                .is_some_and(|i| i < self.n_facilitators && format!("f{i}") == *id);
            if !known {
                return Err(invalid(format!(
                    "fault assigned to unknown facilitator {id:?}"
                )));
            }
        }
        let owed = self
            .payout()
            .checked_mul(self.coding.n() as u64)
            .ok_or_else(|| invalid("payout overflows"))?;
        if self.price < owed {
            return Err(invalid(format!(
                "price {} below n * payout {owed}",
                self.price
            )));
        }
        Ok(())
    }

    /// Assign `profile` to `f0..f{b-1}` and make everyone else honest.
    pub fn set_fault_count(&mut self, b: usize, profile: Behavior) {
        self.faults = (0..b).map(|i| (format!("f{i}"), profile)).collect();
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EventKind {
    #[serde(rename = "message-delivery")]
    MessageDelivery,
    #[serde(rename = "actor-step")]
    ActorStep,
    #[serde(rename = "ledger-commit")]
    LedgerCommit,
}

/// One line of the event log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EventRecord {
    pub t_us: u64,
    pub seq: u64,
    pub kind: EventKind,
    pub actor: String,
    pub detail: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub from: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bytes: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub digest: Option<Digest>,
}

impl EventRecord {
    pub fn involves_ledger(&self) -> bool {
        self.kind == EventKind::LedgerCommit
            || self.actor == "ledger"
            || self.from.as_deref() == Some("ledger")
    }
}

pub fn events_to_jsonl(events: &[EventRecord]) -> String {
    let mut out = String::new();
    for e in events {
        out.push_str(&crate::canonical::to_string(e));
        out.push('\n');
    }
    out
}
