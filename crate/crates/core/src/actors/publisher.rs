use std::collections::BTreeSet;

use crate::amount::Amount;
use crate::codec::{erasure_code, CodingParams};
use crate::crypto::{
    convergent_encrypt, generate_uri, EncryptedChunk, HashList, KeyMap, Keypair, PartyId,
    SignedCall, Uri,
};
use crate::ledger::{ContentListing, LedgerRequest};

use super::{ActorError, Message};

#[derive(Debug, Clone)]
pub struct PublisherSession {
    pub id: PartyId,
    keypair: Keypair,
    pub name: String,
    pub file: Vec<u8>,
    pub params: CodingParams,
    pub price: Amount,
    pub payout_per_facilitator: Amount,
    pub facilitator_ids: Vec<PartyId>,
}

/// Everything the publisher computes before sending anything.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PreparedContent {
    pub uri: Uri,
    /// `chunks[i]` goes to `facilitator_ids[i]`.
    pub chunks: Vec<EncryptedChunk>,
    pub key_map: KeyMap,
    pub hash_list: HashList,
}

impl PreparedContent {
    /// Malicious-publisher hook: flip one ciphertext byte of the chunk sent
    /// to position `i`, leaving the hash list honest.
    pub fn corrupt(&mut self, i: usize) {
        self.chunks[i].ciphertext[0] ^= 0x01;
    }
}

impl PublisherSession {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        id: PartyId,
        keypair: Keypair,
        name: impl Into<String>,
        file: Vec<u8>,
        params: CodingParams,
        price: Amount,
        payout_per_facilitator: Amount,
        facilitator_ids: Vec<PartyId>,
    ) -> Result<Self, ActorError> {
        if file.is_empty() {
            return Err(ActorError::InvalidSession("file is empty".to_string()));
        }
        if facilitator_ids.len() != params.n() {
            return Err(ActorError::InvalidSession(format!(
                "{} facilitators for n={}",
                facilitator_ids.len(),
                params.n()
            )));
        }
        let distinct: BTreeSet<_> = facilitator_ids.iter().collect();
        if distinct.len() != facilitator_ids.len() {
            return Err(ActorError::InvalidSession(
                "facilitator ids are not distinct".to_string(),
            ));
        }
        let owed = payout_per_facilitator
            .checked_mul(params.n() as u64)
            .ok_or_else(|| ActorError::InvalidSession("payout overflows".to_string()))?;
        if price < owed {
            return Err(ActorError::InvalidSession(format!(
                "price {price} below n * payout {owed}"
            )));
        }
        Ok(Self {
            id,
            keypair,
            name: name.into(),
            file,
            params,
            price,
            payout_per_facilitator,
            facilitator_ids,
        })
    }

    pub fn keypair(&self) -> &Keypair {
        &self.keypair
    }

    pub fn prepare(&self) -> Result<PreparedContent, ActorError> {
        let uri = generate_uri(&self.file)?;
        let plain = erasure_code(&self.file, self.params)?;
        let mut chunks = Vec::with_capacity(plain.len());
        let mut key_map = KeyMap::new();
        let mut hash_list = HashList::with_capacity(plain.len());
        for (chunk, facilitator) in plain.iter().zip(&self.facilitator_ids) {
            let (enc, key) = convergent_encrypt(chunk);
            key_map.insert(facilitator.clone(), key);
            hash_list.push(enc.digest());
            chunks.push(enc);
        }
        Ok(PreparedContent {
            uri,
            chunks,
            key_map,
            hash_list,
        })
    }

    pub fn upload_messages(&self, prepared: &PreparedContent) -> Vec<(PartyId, Message)> {
        self.facilitator_ids
            .iter()
            .zip(&prepared.chunks)
            .map(|(to, chunk)| {
                (
                    to.clone(),
                    Message::ChunkUpload {
                        uri: prepared.uri,
                        chunk: chunk.clone(),
                    },
                )
            })
            .collect()
    }

    pub fn listing(&self, prepared: &PreparedContent) -> ContentListing {
        ContentListing {
            uri: prepared.uri,
            name: self.name.clone(),
            price: self.price,
            payout_per_facilitator: self.payout_per_facilitator,
            coding: self.params,
            facilitator_ids: self.facilitator_ids.clone(),
            key_map: prepared.key_map.clone(),
            hash_list: prepared.hash_list.clone(),
        }
    }

    pub fn listing_call(&self, prepared: &PreparedContent) -> SignedCall {
        LedgerRequest::AddContentByPub(self.listing(prepared)).sign(&self.id, &self.keypair)
    }
}
