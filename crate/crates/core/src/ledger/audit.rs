//! Hash-chained audit trail, its line-oriented file format and replay.
//!
//! Log file layout: one header line, then one canonical JSON entry per line,
//! entry `i` on line `i + 1` with height `i`. Each line must be exactly the
//! canonical serialization of what it parses to, so every byte is covered by
//! some entry hash or by the header.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::canonical;
use crate::crypto::{hash_parts, Digest, SignedCall};

use super::{Genesis, Ledger};

pub const AUDIT_LOG_FORMAT: &str = "fairmarket-audit-log/1";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(
    tag = "type",
    content = "body",
    rename_all = "lowercase",
    deny_unknown_fields
)]
pub enum AuditRecord {
    Genesis(Genesis),
    Call(SignedCall),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CallOutcome {
    pub ok: bool,
    pub error: Option<String>,
}

impl CallOutcome {
    pub fn success() -> Self {
        Self {
            ok: true,
            error: None,
        }
    }

    pub fn failure(code: &str) -> Self {
        Self {
            ok: false,
            error: Some(code.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuditEntry {
    pub height: u64,
    pub record: AuditRecord,
    pub outcome: CallOutcome,
    pub prev_hash: Digest,
    pub entry_hash: Digest,
}

fn entry_hash(height: u64, prev: &Digest, record: &AuditRecord, outcome: &CallOutcome) -> Digest {
    hash_parts(&[
        &height.to_be_bytes(),
        prev.as_bytes(),
        &canonical::to_vec(record),
        &canonical::to_vec(outcome),
    ])
}

impl AuditEntry {
    pub fn new(height: u64, prev_hash: Digest, record: AuditRecord, outcome: CallOutcome) -> Self {
        let entry_hash = entry_hash(height, &prev_hash, &record, &outcome);
        Self {
            height,
            record,
            outcome,
            prev_hash,
            entry_hash,
        }
    }

    pub fn computed_hash(&self) -> Digest {
        entry_hash(self.height, &self.prev_hash, &self.record, &self.outcome)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AuditError {
    #[error("broken hash chain at height {height}: {reason}")]
    BrokenChain { height: u64, reason: String },
    #[error("invalid signature at height {height}")]
    InvalidSignature { height: u64 },
    #[error("state mismatch at height {height}: {reason}")]
    StateMismatch { height: u64, reason: String },
    #[error("malformed audit log header: {0}")]
    MalformedHeader(String),
}

impl AuditError {
    pub fn height(&self) -> Option<u64> {
        match self {
            AuditError::BrokenChain { height, .. }
            | AuditError::InvalidSignature { height }
            | AuditError::StateMismatch { height, .. } => Some(*height),
            AuditError::MalformedHeader(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuditLogHeader {
    pub format: String,
    pub final_height: u64,
    pub state_digest: Digest,
}

fn broken(height: u64, reason: impl Into<String>) -> AuditError {
    AuditError::BrokenChain {
        height,
        reason: reason.into(),
    }
}

/// Structural checks only: heights, links and entry hashes.
fn verify_chain(entries: &[AuditEntry]) -> Result<(), AuditError> {
    let mut prev = Digest::default();
    for (i, entry) in entries.iter().enumerate() {
        let height = i as u64;
        if entry.height != height {
            return Err(broken(
                height,
                format!("entry claims height {}", entry.height),
            ));
        }
        if entry.prev_hash != prev {
            return Err(broken(height, "previous-hash link does not match"));
        }
        if entry.computed_hash() != entry.entry_hash {
            return Err(broken(height, "entry hash does not match contents"));
        }
        prev = entry.entry_hash;
    }
    Ok(())
}

pub(super) fn replay(entries: &[AuditEntry]) -> Result<Ledger, AuditError> {
    verify_chain(entries)?;
    let Some(first) = entries.first() else {
        return Err(broken(0, "empty trail"));
    };
    let AuditRecord::Genesis(genesis) = &first.record else {
        return Err(broken(0, "trail does not start with genesis"));
    };
    let mut ledger =
        Ledger::from_genesis(genesis.clone()).map_err(|e| AuditError::StateMismatch {
            height: 0,
            reason: e.to_string(),
        })?;
    for entry in &entries[1..] {
        let AuditRecord::Call(call) = &entry.record else {
            return Err(AuditError::StateMismatch {
                height: entry.height,
                reason: "genesis record after height 0".to_string(),
            });
        };
        if entry.outcome.ok && ledger.registry.verify_call(call).is_err() {
            return Err(AuditError::InvalidSignature {
                height: entry.height,
            });
        }
        let got = match ledger.submit(call.clone()) {
            Ok(_) => super::CallOutcome::success(),
            Err(e) => super::CallOutcome::failure(e.code()),
        };
        if got != entry.outcome {
            return Err(AuditError::StateMismatch {
                height: entry.height,
                reason: format!("recorded {:?}, replay produced {:?}", entry.outcome, got),
            });
        }
        let replayed = ledger.trail.last().expect("just appended");
        if replayed.entry_hash != entry.entry_hash {
            return Err(AuditError::StateMismatch {
                height: entry.height,
                reason: "replayed entry hash differs".to_string(),
            });
        }
    }
    Ok(ledger)
}

impl Ledger {
    /// Header line followed by one entry per line, newline-terminated.
    pub fn write_audit_log(&self) -> String {
        let header = AuditLogHeader {
            format: AUDIT_LOG_FORMAT.to_string(),
            final_height: self.height(),
            state_digest: self.state_digest(),
        };
        let mut out = canonical::to_string(&header);
        out.push('\n');
        for entry in &self.trail {
            out.push_str(&canonical::to_string(entry));
            out.push('\n');
        }
        out
    }

    /// Parse, chain-check, signature-check and replay an audit log, then
    /// compare the final state with the digest in the header.
    pub fn verify_audit_log(text: &str) -> Result<Ledger, AuditError> {
        let mut lines = text.split('\n');
        let header_line = lines.next().unwrap_or_default();
        let header: AuditLogHeader = serde_json::from_str(header_line)
            .map_err(|e| AuditError::MalformedHeader(e.to_string()))?;
        if canonical::to_string(&header) != header_line {
            return Err(AuditError::MalformedHeader(
                "header is not in canonical form".to_string(),
            ));
        }
        if header.format != AUDIT_LOG_FORMAT {
            return Err(AuditError::MalformedHeader(format!(
                "unsupported format {}",
                header.format
            )));
        }

        let body: Vec<&str> = lines.collect();
        // A well-formed log ends with a newline, which leaves one empty tail.
        let (last, entry_lines) = body.split_last().unwrap_or((&"", &[]));
        let mut entries = Vec::with_capacity(entry_lines.len());
        for (i, line) in entry_lines.iter().enumerate() {
            let height = i as u64;
            let entry: AuditEntry = serde_json::from_str(line)
                .map_err(|e| broken(height, format!("unparseable entry: {e}")))?;
            if canonical::to_string(&entry) != *line {
                return Err(broken(height, "entry is not in canonical form"));
            }
            entries.push(entry);
        }
        if !last.is_empty() {
            return Err(broken(
                entries.len() as u64,
                "log does not end with a newline",
            ));
        }

        let ledger = replay(&entries)?;
        let final_height = ledger.height();
        if final_height != header.final_height {
            return Err(AuditError::StateMismatch {
                height: final_height,
                reason: format!("header declares final height {}", header.final_height),
            });
        }
        if ledger.state_digest() != header.state_digest {
            return Err(AuditError::StateMismatch {
                height: final_height,
                reason: "replayed state digest differs from header".to_string(),
            });
        }
        Ok(ledger)
    }
}
