use std::collections::BTreeMap;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::crypto::{
    hash_parts, verify_chunk_integrity, ConvergentKey, EncryptedChunk, HashList, Keypair, PartyId,
    SignedCall, Uri,
};
use crate::ledger::{LedgerError, LedgerRequest, ReqId};

use super::{ActorError, Behavior};

/// Result of handling one uploaded chunk.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum UploadOutcome {
    Stored,
    /// No listing yet; held until the listing appears or the timeout passes.
    Queued,
    /// Failed verification; the call must be submitted to the ledger.
    Complain(SignedCall),
    /// Listed, but not with this facilitator among the hosts.
    Dropped,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Reply {
    Chunk(EncryptedChunk),
    Deny(String),
    Silent,
}

#[derive(Debug, Clone)]
struct Pending {
    chunk: EncryptedChunk,
    deadline: u64,
}

#[derive(Debug, Clone)]
pub struct FacilitatorState {
    pub id: PartyId,
    keypair: Keypair,
    pub behavior: Behavior,
    seed: u64,
    /// How long an unlisted upload is kept, in the embedding's time unit.
    pub upload_timeout: u64,
    store: BTreeMap<Uri, EncryptedChunk>,
    pending: BTreeMap<Uri, Pending>,
}

impl FacilitatorState {
    pub fn new(id: PartyId, keypair: Keypair, behavior: Behavior, seed: u64) -> Self {
        Self {
            id,
            keypair,
            behavior,
            seed,
            upload_timeout: 10_000,
            store: BTreeMap::new(),
            pending: BTreeMap::new(),
        }
    }

    pub fn stored(&self, uri: &Uri) -> Option<&EncryptedChunk> {
        self.store.get(uri)
    }

    /// Baseline runs without a ledger keep whatever they are sent.
    pub fn store_unverified(&mut self, uri: Uri, chunk: EncryptedChunk) {
        self.store.insert(uri, chunk);
    }

    pub fn pending_count(&self) -> usize {
        self.pending.len()
    }

    /// `upload_keys` is the ledger's answer to `get_upload_keys` for this
    /// facilitator at the time of arrival.
    pub fn on_upload(
        &mut self,
        uri: Uri,
        chunk: EncryptedChunk,
        upload_keys: Result<(ConvergentKey, HashList), LedgerError>,
        now: u64,
    ) -> UploadOutcome {
        match upload_keys {
            Ok((key, hash_list)) => self.verify(uri, chunk, &key, &hash_list),
            Err(LedgerError::UnknownUri) => {
                self.pending.insert(
                    uri,
                    Pending {
                        chunk,
                        deadline: now.saturating_add(self.upload_timeout),
                    },
                );
                UploadOutcome::Queued
            }
            Err(_) => UploadOutcome::Dropped,
        }
    }

    /// Re-verify a queued chunk once its listing is visible. `None` if
    /// nothing was queued for `uri`.
    pub fn on_listing(
        &mut self,
        uri: Uri,
        upload_keys: Result<(ConvergentKey, HashList), LedgerError>,
    ) -> Option<UploadOutcome> {
        let pending = self.pending.remove(&uri)?;
        Some(match upload_keys {
            Ok((key, hash_list)) => self.verify(uri, pending.chunk, &key, &hash_list),
            Err(LedgerError::UnknownUri) => {
                self.pending.insert(uri, pending);
                UploadOutcome::Queued
            }
            Err(_) => UploadOutcome::Dropped,
        })
    }

    /// Drop queued uploads whose deadline has passed.
    pub fn expire(&mut self, now: u64) -> Vec<Uri> {
        let expired: Vec<Uri> = self
            .pending
            .iter()
            .filter(|(_, p)| p.deadline <= now)
            .map(|(uri, _)| *uri)
            .collect();
        for uri in &expired {
            self.pending.remove(uri);
        }
        expired
    }

    fn verify(
        &mut self,
        uri: Uri,
        chunk: EncryptedChunk,
        key: &ConvergentKey,
        hash_list: &[crate::crypto::Digest],
    ) -> UploadOutcome {
        if verify_chunk_integrity(&chunk, key, hash_list) {
            self.store.insert(uri, chunk);
            UploadOutcome::Stored
        } else {
            UploadOutcome::Complain(LedgerRequest::Complaint { uri }.sign(&self.id, &self.keypair))
        }
    }

    /// Only honest facilitators ask the ledger before answering.
    pub fn needs_payment_check(&self) -> bool {
        self.behavior == Behavior::Honest
    }

    /// `paid` is `is_payment_done(uri, req_id)`; ignored by faulty profiles.
    pub fn on_request(&self, uri: &Uri, req_id: &ReqId, paid: bool) -> Result<Reply, ActorError> {
        match self.behavior {
            Behavior::Crash => Ok(Reply::Silent),
            Behavior::Refuse => Ok(Reply::Deny("Refused".to_string())),
            Behavior::Honest => {
                let chunk = self.store.get(uri).ok_or(ActorError::NotStored)?;
                if !paid {
                    return Err(ActorError::PaymentNotVerified);
                }
                Ok(Reply::Chunk(chunk.clone()))
            }
            Behavior::Garbage => {
                let chunk = self.store.get(uri).ok_or(ActorError::NotStored)?;
                let seed = hash_parts(&[
                    &self.seed.to_be_bytes(),
                    self.id.as_str().as_bytes(),
                    uri.0.as_bytes(),
                    req_id.as_str().as_bytes(),
                ]);
                let mut rng = ChaCha8Rng::from_seed(seed.0);
                let mut ciphertext = vec![0u8; chunk.ciphertext.len()];
                rng.fill_bytes(&mut ciphertext);
                Ok(Reply::Chunk(EncryptedChunk { ciphertext }))
            }
        }
    }
}
