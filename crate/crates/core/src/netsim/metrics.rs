use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::crypto::Digest;

use super::{EventKind, EventRecord};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestMetrics {
    pub client: String,
    pub start_ms: Option<f64>,
    /// Purchase start to file reconstructed.
    pub download_latency_ms: Option<f64>,
    pub bytes_received: u64,
    /// `ok`, an error code, or `unfinished`.
    pub outcome: String,
}

impl RequestMetrics {
    pub fn succeeded(&self) -> bool {
        self.outcome == "ok"
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub seed: u64,
    /// Per file: upload start until every host has settled its chunk.
    pub upload_latency_ms: Vec<f64>,
    pub requests: Vec<RequestMetrics>,
    pub messages: u64,
    pub bytes_transferred: u64,
    /// Chunk uploads and chunk responses.
    pub chunk_bytes: u64,
    /// Everything to or from the ledger node.
    pub ledger_bytes: u64,
    pub failures: usize,
}

fn us_to_ms(us: u64) -> f64 {
    us as f64 / 1000.0
}

fn client_index(name: &str) -> Option<usize> {
    name.strip_prefix('c')?.parse().ok()
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, count) = values.fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
    if count == 0 {
        f64::NAN
    } else {
        sum / count as f64
    }
}

impl RunMetrics {
    /// Everything here is recomputed from the event log.
    pub fn from_events(seed: u64, n_clients: usize, events: &[EventRecord]) -> Self {
        let mut upload_start: BTreeMap<Digest, (u64, u64)> = BTreeMap::new();
        let mut upload_end: BTreeMap<Digest, u64> = BTreeMap::new();
        let mut start: BTreeMap<usize, u64> = BTreeMap::new();
        let mut end: BTreeMap<usize, (u64, String)> = BTreeMap::new();
        let mut received: BTreeMap<usize, u64> = BTreeMap::new();
        let (mut messages, mut bytes, mut chunk_bytes, mut ledger_bytes) = (0, 0, 0, 0);

        for e in events {
            match e.kind {
                EventKind::MessageDelivery => {
                    let b = e.bytes.unwrap_or(0);
                    messages += 1;
                    bytes += b;
                    if matches!(e.detail.as_str(), "chunk_upload" | "chunk_response") {
                        chunk_bytes += b;
                    }
                    if e.involves_ledger() {
                        ledger_bytes += b;
                    }
                    if let Some(c) = client_index(&e.actor) {
                        *received.entry(c).or_default() += b;
                    }
                }
                EventKind::ActorStep => {
                    let detail = e.detail.as_str();
                    if detail == "upload_start" {
                        if let Some(d) = e.digest {
                            upload_start.insert(d, (e.seq, e.t_us));
                        }
                    } else if detail.starts_with("upload_") {
                        if let Some(d) = e.digest {
                            let t = upload_end.entry(d).or_insert(e.t_us);
                            *t = (*t).max(e.t_us);
                        }
                    } else if let Some(c) = client_index(&e.actor) {
                        if detail == "client_start" {
                            start.insert(c, e.t_us);
                        } else if detail == "client_done" {
                            end.insert(c, (e.t_us, "ok".to_string()));
                        } else if let Some(code) = detail.strip_prefix("client_failed:") {
                            end.insert(c, (e.t_us, code.to_string()));
                        }
                    }
                }
                EventKind::LedgerCommit => {}
            }
        }

        let mut uploads: Vec<(u64, f64)> = upload_start
            .iter()
            .map(|(d, &(seq, t0))| {
                let t1 = upload_end.get(d).copied().unwrap_or(t0);
                (seq, us_to_ms(t1.saturating_sub(t0)))
            })
            .collect();
        uploads.sort_by_key(|&(seq, _)| seq);

        let requests: Vec<RequestMetrics> = (0..n_clients)
            .map(|c| {
                let s = start.get(&c).copied();
                let (latency, outcome) = match (s, end.get(&c)) {
                    (Some(s), Some((t, outcome))) => {
                        let latency = (outcome == "ok").then(|| us_to_ms(t - s));
                        (latency, outcome.clone())
                    }
                    _ => (None, "unfinished".to_string()),
                };
                RequestMetrics {
                    client: format!("c{c}"),
                    start_ms: s.map(us_to_ms),
                    download_latency_ms: latency,
                    bytes_received: received.get(&c).copied().unwrap_or(0),
                    outcome,
                }
            })
            .collect();
        let failures = requests.iter().filter(|r| !r.succeeded()).count();

        Self {
            seed,
            upload_latency_ms: uploads.into_iter().map(|(_, v)| v).collect(),
            requests,
            messages,
            bytes_transferred: bytes,
            chunk_bytes,
            ledger_bytes,
            failures,
        }
    }

    /// Over successful requests; NaN when none succeeded.
    pub fn mean_download_ms(&self) -> f64 {
        mean(self.requests.iter().filter_map(|r| r.download_latency_ms))
    }

    pub fn max_download_ms(&self) -> f64 {
        self.requests
            .iter()
            .filter_map(|r| r.download_latency_ms)
            .fold(f64::NAN, f64::max)
    }

    pub fn mean_upload_ms(&self) -> f64 {
        mean(self.upload_latency_ms.iter().copied())
    }

    pub fn success_rate(&self) -> f64 {
        if self.requests.is_empty() {
            return f64::NAN;
        }
        (self.requests.len() - self.failures) as f64 / self.requests.len() as f64
    }

    pub fn download_bytes(&self) -> u64 {
        self.requests.iter().map(|r| r.bytes_received).sum()
    }
}
