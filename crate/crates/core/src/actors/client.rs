use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::codec::{recover, CodingParams, PlainChunk};
use crate::crypto::{
    convergent_decrypt, generate_uri, verify_chunk_integrity, EncryptedChunk, HashList, KeyMap,
    Keypair, PartyId, SignedCall, Uri,
};
use crate::ledger::{LedgerRequest, ReqId};

use super::{ActorError, Message};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum FetchStrategy {
    /// Request from all `n` facilitators at once.
    Aggressive,
    /// Request from `k` picked at random, replace each failure with a fresh one.
    #[default]
    Lazy,
}

impl std::str::FromStr for FetchStrategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "aggressive" => Ok(FetchStrategy::Aggressive),
            "lazy" => Ok(FetchStrategy::Lazy),
            other => Err(format!("unknown fetch strategy {other:?}")),
        }
    }
}

impl std::fmt::Display for FetchStrategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            FetchStrategy::Aggressive => "aggressive",
            FetchStrategy::Lazy => "lazy",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ClientStep {
    /// Nothing to do until the next input.
    Wait,
    Send(Vec<(PartyId, Message)>),
    Done(Vec<u8>),
    Failed(ActorError),
}

#[derive(Debug, Clone)]
struct Fetch {
    params: CodingParams,
    facilitator_ids: Vec<PartyId>,
    key_map: KeyMap,
    hash_list: HashList,
    /// Positions in contact order.
    order: Vec<usize>,
    next: usize,
    outstanding: BTreeSet<usize>,
    valid: BTreeMap<usize, PlainChunk>,
}

#[derive(Debug, Clone)]
pub struct ClientSession {
    pub id: PartyId,
    keypair: Keypair,
    pub uri: Uri,
    pub req_id: ReqId,
    pub strategy: FetchStrategy,
    rng: ChaCha8Rng,
    fetch: Option<Fetch>,
    finished: bool,
}

impl ClientSession {
    pub fn new(
        id: PartyId,
        keypair: Keypair,
        uri: Uri,
        strategy: FetchStrategy,
        seed: u64,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let req_id = ReqId::random(&mut rng);
        Self {
            id,
            keypair,
            uri,
            req_id,
            strategy,
            rng,
            fetch: None,
            finished: false,
        }
    }

    pub fn payment_call(&self) -> SignedCall {
        LedgerRequest::PayForContent {
            uri: self.uri,
            req_id: self.req_id.clone(),
            link: None,
        }
        .sign(&self.id, &self.keypair)
    }

    pub fn keys_call(&self) -> SignedCall {
        LedgerRequest::GetKeys {
            uri: self.uri,
            req_id: self.req_id.clone(),
        }
        .sign(&self.id, &self.keypair)
    }

    /// Facilitators contacted so far.
    pub fn contacted(&self) -> usize {
        self.fetch.as_ref().map_or(0, |f| f.next)
    }

    pub fn outstanding(&self) -> Vec<PartyId> {
        self.fetch.as_ref().map_or_else(Vec::new, |f| {
            f.outstanding
                .iter()
                .map(|&m| f.facilitator_ids[m].clone())
                .collect()
        })
    }

    pub fn valid_chunks(&self) -> usize {
        self.fetch.as_ref().map_or(0, |f| f.valid.len())
    }

    pub fn is_finished(&self) -> bool {
        self.finished
    }

    /// Start fetching once the ledger released the keys.
    pub fn on_keys(
        &mut self,
        key_map: KeyMap,
        hash_list: HashList,
        facilitator_ids: Vec<PartyId>,
        params: CodingParams,
    ) -> ClientStep {
        let mut order: Vec<usize> = (0..facilitator_ids.len()).collect();
        order.shuffle(&mut self.rng);
        self.fetch = Some(Fetch {
            params,
            facilitator_ids,
            key_map,
            hash_list,
            order,
            next: 0,
            outstanding: BTreeSet::new(),
            valid: BTreeMap::new(),
        });
        let step = self.top_up();
        self.settle(step)
    }

    pub fn on_response(&mut self, from: &PartyId, chunk: &EncryptedChunk) -> ClientStep {
        let Some(fetch) = self.fetch.as_mut().filter(|_| !self.finished) else {
            return ClientStep::Wait;
        };
        let Some(pos) = fetch.facilitator_ids.iter().position(|f| f == from) else {
            return ClientStep::Wait;
        };
        if !fetch.outstanding.remove(&pos) {
            return ClientStep::Wait;
        }
        if let Some((m, plain)) = validate(fetch, chunk) {
            fetch.valid.entry(m).or_insert(plain);
        }
        if fetch.valid.len() >= fetch.params.k() {
            self.finished = true;
            return match self.reconstruct() {
                Ok(file) => ClientStep::Done(file),
                Err(e) => ClientStep::Failed(e),
            };
        }
        let step = self.top_up();
        self.settle(step)
    }

    pub fn on_denial(&mut self, from: &PartyId) -> ClientStep {
        self.on_failure(from)
    }

    pub fn on_timeout(&mut self, from: &PartyId) -> ClientStep {
        self.on_failure(from)
    }

    fn on_failure(&mut self, from: &PartyId) -> ClientStep {
        let Some(fetch) = self.fetch.as_mut().filter(|_| !self.finished) else {
            return ClientStep::Wait;
        };
        let Some(pos) = fetch.facilitator_ids.iter().position(|f| f == from) else {
            return ClientStep::Wait;
        };
        if !fetch.outstanding.remove(&pos) {
            return ClientStep::Wait;
        }
        let step = self.top_up();
        self.settle(step)
    }

    /// Contact enough fresh facilitators to keep `k` chunks in prospect.
    fn top_up(&mut self) -> Vec<(PartyId, Message)> {
        let fetch = self.fetch.as_mut().expect("keys received");
        let target = match self.strategy {
            FetchStrategy::Aggressive => fetch.facilitator_ids.len(),
            FetchStrategy::Lazy => fetch.params.k(),
        };
        let mut out = Vec::new();
        while fetch.valid.len() + fetch.outstanding.len() < target && fetch.next < fetch.order.len()
        {
            let m = fetch.order[fetch.next];
            fetch.next += 1;
            fetch.outstanding.insert(m);
            out.push((
                fetch.facilitator_ids[m].clone(),
                Message::ChunkRequest {
                    uri: self.uri,
                    req_id: self.req_id.clone(),
                },
            ));
        }
        out
    }

    fn settle(&mut self, sends: Vec<(PartyId, Message)>) -> ClientStep {
        let fetch = self.fetch.as_ref().expect("keys received");
        if !sends.is_empty() {
            return ClientStep::Send(sends);
        }
        if fetch.outstanding.is_empty() {
            self.finished = true;
            return ClientStep::Failed(ActorError::DeliveryFailed {
                valid: fetch.valid.len(),
                needed: fetch.params.k(),
                contacted: fetch.next,
            });
        }
        ClientStep::Wait
    }

    fn reconstruct(&self) -> Result<Vec<u8>, ActorError> {
        let fetch = self.fetch.as_ref().expect("keys received");
        let chunks: Vec<PlainChunk> = fetch.valid.values().cloned().collect();
        let file = recover(&chunks, fetch.params)?;
        if generate_uri(&file)? != self.uri {
            return Err(ActorError::FileMismatch);
        }
        Ok(file)
    }
}

/// Position `m` with `H(E) = hash_list[m]`, decrypted under the key of the
/// facilitator listed at `m`, carrying chunk index `m`.
fn validate(fetch: &Fetch, chunk: &EncryptedChunk) -> Option<(usize, PlainChunk)> {
    let digest = chunk.digest();
    let m = fetch.hash_list.iter().position(|h| *h == digest)?;
    let key = fetch.key_map.get(fetch.facilitator_ids.get(m)?)?;
    if !verify_chunk_integrity(chunk, key, &fetch.hash_list) {
        return None;
    }
    let plain = convergent_decrypt(chunk, key).ok()?;
    (plain.index as usize == m).then_some((m, plain))
}
