//! Publisher, facilitator and client state machines.
//!
//! Actors never touch each other directly. Each one consumes inputs (a
//! message, a ledger answer, a timeout) and returns the messages or ledger
//! calls it wants performed; the embedding decides when those happen.
//! [`LocalNetwork`] is a synchronous embedding used by the CLI demo and the
//! tests, `netsim` is the timed one.

mod client;
mod facilitator;
mod local;
mod publisher;

#[cfg(test)]
mod tests;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::CodecError;
use crate::crypto::{CryptoError, EncryptedChunk, PartyId, Uri};
use crate::ledger::{LedgerError, ReqId};

pub use client::{ClientSession, ClientStep, FetchStrategy};
pub use facilitator::{FacilitatorState, Reply, UploadOutcome};
pub use local::{LocalNetwork, LogRecord, ServeRecord};
pub use publisher::{PreparedContent, PublisherSession};

/// How many times an upload is attempted per facilitator.
pub const UPLOAD_RETRY_BUDGET: u32 = 3;

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default,
)]
#[serde(rename_all = "lowercase")]
pub enum Behavior {
    #[default]
    Honest,
    /// Holds the chunk, never answers.
    Crash,
    /// Answers every request with a denial.
    Refuse,
    /// Answers with random bytes of the right length.
    Garbage,
}

impl Behavior {
    pub const FAULTY: [Behavior; 3] = [Behavior::Crash, Behavior::Refuse, Behavior::Garbage];

    pub fn is_faulty(self) -> bool {
        self != Behavior::Honest
    }
}

impl std::fmt::Display for Behavior {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Behavior::Honest => "honest",
            Behavior::Crash => "crash",
            Behavior::Refuse => "refuse",
            Behavior::Garbage => "garbage",
        })
    }
}

impl std::str::FromStr for Behavior {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "honest" => Ok(Behavior::Honest),
            "crash" => Ok(Behavior::Crash),
            "refuse" => Ok(Behavior::Refuse),
            "garbage" => Ok(Behavior::Garbage),
            other => Err(format!("unknown behavior {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Message {
    ChunkUpload {
        uri: Uri,
        chunk: EncryptedChunk,
    },
    ChunkRequest {
        uri: Uri,
        req_id: ReqId,
    },
    ChunkResponse {
        uri: Uri,
        req_id: ReqId,
        chunk: EncryptedChunk,
    },
    Denial {
        uri: Uri,
        req_id: ReqId,
        reason: String,
    },
}

/// Fixed per-message overhead used for bandwidth accounting.
pub const MESSAGE_HEADER_LEN: usize = 64;

impl Message {
    pub fn kind(&self) -> &'static str {
        match self {
            Message::ChunkUpload { .. } => "chunk_upload",
            Message::ChunkRequest { .. } => "chunk_request",
            Message::ChunkResponse { .. } => "chunk_response",
            Message::Denial { .. } => "denial",
        }
    }

    pub fn uri(&self) -> &Uri {
        match self {
            Message::ChunkUpload { uri, .. }
            | Message::ChunkRequest { uri, .. }
            | Message::ChunkResponse { uri, .. }
            | Message::Denial { uri, .. } => uri,
        }
    }

    pub fn wire_len(&self) -> usize {
        MESSAGE_HEADER_LEN
            + match self {
                Message::ChunkUpload { chunk, .. } | Message::ChunkResponse { chunk, .. } => {
                    chunk.encoded_len()
                }
                Message::ChunkRequest { .. } => 0,
                Message::Denial { reason, .. } => reason.len(),
            }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TransportError {
    #[error("{0} is unreachable")]
    Unreachable(PartyId),
}

pub trait Transport {
    fn send(
        &mut self,
        from: &PartyId,
        to: &PartyId,
        message: Message,
    ) -> Result<(), TransportError>;
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ActorError {
    #[error("invalid session: {0}")]
    InvalidSession(String),
    #[error("upload incomplete, unreachable facilitators: {0:?}")]
    UploadIncomplete(Vec<PartyId>),
    #[error("ledger: {0}")]
    Ledger(#[from] LedgerError),
    #[error("codec: {0}")]
    Codec(#[from] CodecError),
    #[error("crypto: {0}")]
    Crypto(#[from] CryptoError),
    #[error("delivery failed: {valid} valid chunks of {needed} needed after contacting {contacted} facilitators")]
    DeliveryFailed {
        valid: usize,
        needed: usize,
        contacted: usize,
    },
    #[error("recovered file does not match its uri")]
    FileMismatch,
    #[error("facilitator holds no chunk for this uri")]
    NotStored,
    #[error("payment not verified")]
    PaymentNotVerified,
}

impl ActorError {
    pub fn code(&self) -> &'static str {
        match self {
            ActorError::InvalidSession(_) => "InvalidSession",
            ActorError::UploadIncomplete(_) => "UploadIncomplete",
            ActorError::Ledger(e) => e.code(),
            ActorError::Codec(_) => "CodecError",
            ActorError::Crypto(_) => "CryptoError",
            ActorError::DeliveryFailed { .. } => "DeliveryFailed",
            ActorError::FileMismatch => "FileMismatch",
            ActorError::NotStored => "NotStored",
            ActorError::PaymentNotVerified => "PaymentNotVerified",
        }
    }
}
