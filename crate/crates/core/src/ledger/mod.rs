//! The payments contract as a deterministic, single-writer state machine.
//!
//! Every submitted [`SignedCall`] is signature-checked, applied atomically
//! (all checks precede any mutation) and appended to a hash-chained audit
//! trail whether it succeeded or not. Replaying the trail from genesis
//! reproduces the state byte for byte.

mod audit;
mod types;

use std::collections::{BTreeMap, BTreeSet};
use std::ops::RangeBounds;

use thiserror::Error;

use crate::amount::Amount;
use crate::canonical;
use crate::crypto::{
    hash, ConvergentKey, CryptoError, Digest, HashList, KeyMap, KeyRegistry, PartyId, SignedCall,
    Uri,
};

pub use audit::{
    AuditEntry, AuditError, AuditLogHeader, AuditRecord, CallOutcome, AUDIT_LOG_FORMAT,
};
pub use types::{
    op, ContentListing, ContentQuery, ContentRecord, ContentStatus, ContentSummary, Genesis,
    GenesisParty, LedgerRequest, LedgerState, PartyEntry, PaymentRecord, Receipt, ReqId, Role,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LedgerError {
    #[error("unknown caller {0}")]
    UnknownCaller(PartyId),
    #[error("signature verification failed for {0}")]
    BadSignature(PartyId),
    #[error("unknown operation {0}")]
    UnknownOperation(String),
    #[error("malformed call: {0}")]
    MalformedCall(String),
    #[error("expected operation {expected}, got {got}")]
    WrongOperation { expected: &'static str, got: String },
    #[error("uri already listed")]
    DuplicateUri,
    #[error("malformed content record: {0}")]
    MalformedRecord(String),
    #[error("caller is not a registered publisher")]
    NotPublisher,
    #[error("unknown uri")]
    UnknownUri,
    #[error("caller does not host a chunk of this content")]
    NotAFacilitatorForContent,
    #[error("content is censored")]
    ContentCensored,
    #[error("content is unavailable")]
    ContentUnavailable,
    #[error("client is restricted from purchasing this content")]
    ClientRestricted,
    #[error("insufficient funds")]
    InsufficientFunds,
    #[error("request id already used")]
    DuplicateReqId,
    #[error("no payment for this uri and request id")]
    PaymentNotFound,
    #[error("caller did not make this payment")]
    NotPayer,
    #[error("caller is not an auditor")]
    NotAuditor,
    #[error("invalid genesis: {0}")]
    InvalidGenesis(String),
}

impl LedgerError {
    /// Stable identifier recorded in the audit trail.
    pub fn code(&self) -> &'static str {
        match self {
            LedgerError::UnknownCaller(_) => "UnknownCaller",
            LedgerError::BadSignature(_) => "BadSignature",
            LedgerError::UnknownOperation(_) => "UnknownOperation",
            LedgerError::MalformedCall(_) => "MalformedCall",
            LedgerError::WrongOperation { .. } => "WrongOperation",
            LedgerError::DuplicateUri => "DuplicateUri",
            LedgerError::MalformedRecord(_) => "MalformedRecord",
            LedgerError::NotPublisher => "NotPublisher",
            LedgerError::UnknownUri => "UnknownUri",
            LedgerError::NotAFacilitatorForContent => "NotAFacilitatorForContent",
            LedgerError::ContentCensored => "ContentCensored",
            LedgerError::ContentUnavailable => "ContentUnavailable",
            LedgerError::ClientRestricted => "ClientRestricted",
            LedgerError::InsufficientFunds => "InsufficientFunds",
            LedgerError::DuplicateReqId => "DuplicateReqId",
            LedgerError::PaymentNotFound => "PaymentNotFound",
            LedgerError::NotPayer => "NotPayer",
            LedgerError::NotAuditor => "NotAuditor",
            LedgerError::InvalidGenesis(_) => "InvalidGenesis",
        }
    }
}

impl From<CryptoError> for LedgerError {
    fn from(e: CryptoError) -> Self {
        match e {
            CryptoError::UnknownCaller(p) => LedgerError::UnknownCaller(p),
            CryptoError::InvalidSignature(p) => LedgerError::BadSignature(p),
            other => LedgerError::MalformedCall(other.to_string()),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Ledger {
    state: LedgerState,
    registry: KeyRegistry,
    trail: Vec<AuditEntry>,
}

impl Ledger {
    pub fn from_genesis(genesis: Genesis) -> Result<Self, LedgerError> {
        let mut state = LedgerState::default();
        let mut registry = KeyRegistry::default();
        for party in &genesis.parties {
            if party.id.as_str().is_empty() {
                return Err(LedgerError::InvalidGenesis("empty party id".to_string()));
            }
            if state.parties.contains_key(&party.id) {
                return Err(LedgerError::InvalidGenesis(format!(
                    "duplicate party {}",
                    party.id
                )));
            }
            state.parties.insert(
                party.id.clone(),
                PartyEntry {
                    role: party.role,
                    public_key: party.public_key,
                },
            );
            state.balances.insert(party.id.clone(), party.balance);
            registry.register(party.id.clone(), party.public_key);
        }
        let entry = AuditEntry::new(
            0,
            Digest::default(),
            AuditRecord::Genesis(genesis),
            CallOutcome::success(),
        );
        Ok(Self {
            state,
            registry,
            trail: vec![entry],
        })
    }

    pub fn height(&self) -> u64 {
        self.state.height
    }

    pub fn state(&self) -> &LedgerState {
        &self.state
    }

    pub fn role(&self, party: &PartyId) -> Option<Role> {
        self.state.parties.get(party).map(|p| p.role)
    }

    pub fn balance(&self, party: &PartyId) -> Amount {
        self.state
            .balances
            .get(party)
            .copied()
            .unwrap_or(Amount::ZERO)
    }

    pub fn balances(&self) -> &BTreeMap<PartyId, Amount> {
        &self.state.balances
    }

    pub fn total_supply(&self) -> Amount {
        self.state.balances.values().copied().sum()
    }

    pub fn content(&self, uri: &Uri) -> Option<&ContentRecord> {
        self.state.contents.get(uri)
    }

    pub fn payment(&self, req_id: &ReqId) -> Option<&PaymentRecord> {
        self.state.payments.get(req_id)
    }

    /// Canonical JSON of the full contract state.
    pub fn snapshot(&self) -> String {
        canonical::to_string(&self.state)
    }

    pub fn state_digest(&self) -> Digest {
        hash(self.snapshot().as_bytes())
    }

    pub fn audit_trail<R: RangeBounds<usize>>(&self, range: R) -> &[AuditEntry] {
        let len = self.trail.len();
        let start = match range.start_bound() {
            std::ops::Bound::Included(&s) => s,
            std::ops::Bound::Excluded(&s) => s + 1,
            std::ops::Bound::Unbounded => 0,
        }
        .min(len);
        let end = match range.end_bound() {
            std::ops::Bound::Included(&e) => e + 1,
            std::ops::Bound::Excluded(&e) => e,
            std::ops::Bound::Unbounded => len,
        }
        .clamp(start, len);
        &self.trail[start..end]
    }

    pub fn trail(&self) -> &[AuditEntry] {
        &self.trail
    }

    /// Apply any mutating call. The call is recorded regardless of outcome.
    pub fn submit(&mut self, call: SignedCall) -> Result<Receipt, LedgerError> {
        self.execute(call, None)
    }

    pub fn add_content_by_pub(&mut self, call: SignedCall) -> Result<(), LedgerError> {
        self.execute(call, Some(op::ADD_CONTENT_BY_PUB)).map(|_| ())
    }

    /// Returns the content status after the complaint is counted.
    pub fn complaint(&mut self, call: SignedCall) -> Result<ContentStatus, LedgerError> {
        match self.execute(call, Some(op::COMPLAINT))? {
            Receipt::Complaint { status, .. } => Ok(status),
            other => unreachable!("complaint produced {other:?}"),
        }
    }

    pub fn pay_for_content(&mut self, call: SignedCall) -> Result<PaymentRecord, LedgerError> {
        match self.execute(call, Some(op::PAY_FOR_CONTENT))? {
            Receipt::Paid(record) => Ok(record),
            other => unreachable!("payment produced {other:?}"),
        }
    }

    pub fn censor(&mut self, call: SignedCall) -> Result<(), LedgerError> {
        self.execute(call, Some(op::CENSOR)).map(|_| ())
    }

    pub fn uncensor(&mut self, call: SignedCall) -> Result<(), LedgerError> {
        self.execute(call, Some(op::UNCENSOR)).map(|_| ())
    }

    pub fn search_content(&self, query: &ContentQuery) -> Vec<ContentSummary> {
        self.state
            .contents
            .values()
            .filter(|r| query.matches(r))
            .map(|r| ContentSummary {
                uri: r.uri,
                name: r.name.clone(),
                price: r.price,
                status: r.status,
            })
            .collect()
    }

    fn purchasable(&self, uri: &Uri) -> Result<&ContentRecord, LedgerError> {
        let record = self
            .state
            .contents
            .get(uri)
            .ok_or(LedgerError::UnknownUri)?;
        match record.status {
            ContentStatus::Available => Ok(record),
            ContentStatus::Censored => Err(LedgerError::ContentCensored),
            ContentStatus::Unavailable => Err(LedgerError::ContentUnavailable),
        }
    }

    pub fn get_price(&self, uri: &Uri) -> Result<Amount, LedgerError> {
        self.purchasable(uri).map(|r| r.price)
    }

    /// False once the content is censored, even for payments made before.
    pub fn is_payment_done(&self, uri: &Uri, req_id: &ReqId) -> bool {
        let censored = self
            .state
            .contents
            .get(uri)
            .is_some_and(|r| r.status == ContentStatus::Censored);
        !censored
            && self
                .state
                .payments
                .get(req_id)
                .is_some_and(|p| p.uri == *uri)
    }

    /// Release the key map and hash list to the party that paid under `req_id`.
    pub fn get_keys(&self, call: &SignedCall) -> Result<(KeyMap, HashList), LedgerError> {
        self.registry.verify_call(call)?;
        if call.operation != op::GET_KEYS {
            return Err(LedgerError::WrongOperation {
                expected: op::GET_KEYS,
                got: call.operation.clone(),
            });
        }
        let LedgerRequest::GetKeys { uri, req_id } =
            LedgerRequest::decode(&call.operation, &call.payload)?
        else {
            unreachable!("decoded by operation name");
        };
        let payment = self
            .state
            .payments
            .get(&req_id)
            .filter(|p| p.uri == uri)
            .ok_or(LedgerError::PaymentNotFound)?;
        if payment.payer_id != call.caller {
            return Err(LedgerError::NotPayer);
        }
        let record = self
            .state
            .contents
            .get(&uri)
            .ok_or(LedgerError::UnknownUri)?;
        Ok((record.key_map.clone(), record.hash_list.clone()))
    }

    /// A hosting facilitator's own key plus the hash list, for the upload check.
    pub fn get_upload_keys(
        &self,
        uri: &Uri,
        facilitator: &PartyId,
    ) -> Result<(ConvergentKey, HashList), LedgerError> {
        let record = self
            .state
            .contents
            .get(uri)
            .ok_or(LedgerError::UnknownUri)?;
        let key = record
            .key_map
            .get(facilitator)
            .ok_or(LedgerError::NotAFacilitatorForContent)?;
        Ok((*key, record.hash_list.clone()))
    }

    fn execute(
        &mut self,
        call: SignedCall,
        expected: Option<&'static str>,
    ) -> Result<Receipt, LedgerError> {
        let result = match expected {
            Some(op) if call.operation != op => Err(LedgerError::WrongOperation {
                expected: op,
                got: call.operation.clone(),
            }),
            _ => self.apply(&call),
        };
        let outcome = match &result {
            Ok(_) => CallOutcome::success(),
            Err(e) => CallOutcome::failure(e.code()),
        };
        self.append(AuditRecord::Call(call), outcome);
        result
    }

    fn append(&mut self, record: AuditRecord, outcome: CallOutcome) {
        self.state.height += 1;
        let prev = self
            .trail
            .last()
            .expect("genesis entry always present")
            .entry_hash;
        self.trail
            .push(AuditEntry::new(self.state.height, prev, record, outcome));
    }

    /// Checks then mutates; the height that will record this call is `height + 1`.
    fn apply(&mut self, call: &SignedCall) -> Result<Receipt, LedgerError> {
        self.registry.verify_call(call)?;
        let request = LedgerRequest::decode(&call.operation, &call.payload)?;
        let caller = &call.caller;
        match request {
            LedgerRequest::AddContentByPub(listing) => self.add_content(caller, listing),
            LedgerRequest::Complaint { uri } => {
                let record = self
                    .state
                    .contents
                    .get_mut(&uri)
                    .ok_or(LedgerError::UnknownUri)?;
                if !record.facilitator_ids.contains(caller) {
                    return Err(LedgerError::NotAFacilitatorForContent);
                }
                record.complaint_set.insert(caller.clone());
                record.refresh_status();
                Ok(Receipt::Complaint {
                    status: record.status,
                    complaints: record.complaint_set.len(),
                })
            }
            LedgerRequest::PayForContent { uri, req_id, link } => {
                self.pay(caller, uri, req_id, link)
            }
            LedgerRequest::Censor { uri } => self
                .set_censored(caller, uri, true)
                .map(|_| Receipt::Censored),
            LedgerRequest::Uncensor { uri } => self
                .set_censored(caller, uri, false)
                .map(|_| Receipt::Uncensored),
            LedgerRequest::RestrictClient { uri, client } => {
                self.auditor_record(caller, &uri)?
                    .denied_clients
                    .insert(client);
                Ok(Receipt::ClientRestricted)
            }
            LedgerRequest::UnrestrictClient { uri, client } => {
                self.auditor_record(caller, &uri)?
                    .denied_clients
                    .remove(&client);
                Ok(Receipt::ClientUnrestricted)
            }
            LedgerRequest::GetKeys { .. } => Err(LedgerError::UnknownOperation(
                "GetKeys is a read and cannot be submitted".to_string(),
            )),
        }
    }

    fn add_content(
        &mut self,
        caller: &PartyId,
        listing: ContentListing,
    ) -> Result<Receipt, LedgerError> {
        if self.role(caller) != Some(Role::Publisher) {
            return Err(LedgerError::NotPublisher);
        }
        if self.state.contents.contains_key(&listing.uri) {
            return Err(LedgerError::DuplicateUri);
        }
        let malformed = |msg: String| Err(LedgerError::MalformedRecord(msg));
        let n = listing.facilitator_ids.len();
        if n != listing.coding.n() {
            return malformed(format!("{n} facilitators for n={}", listing.coding.n()));
        }
        let distinct: BTreeSet<&PartyId> = listing.facilitator_ids.iter().collect();
        if distinct.len() != n {
            return malformed("facilitator ids are not distinct".to_string());
        }
        if let Some(bad) = listing
            .facilitator_ids
            .iter()
            .find(|f| self.role(f) != Some(Role::Facilitator))
        {
            return malformed(format!("{bad} is not a registered facilitator"));
        }
        if listing.hash_list.len() != n {
            return malformed(format!(
                "hash list has {} entries for n={n}",
                listing.hash_list.len()
            ));
        }
        if listing.key_map.len() != n || !listing.key_map.keys().all(|k| distinct.contains(k)) {
            return malformed("key map must have exactly one entry per facilitator".to_string());
        }
        let facilitator_total = listing
            .payout_per_facilitator
            .checked_mul(n as u64)
            .ok_or_else(|| LedgerError::MalformedRecord("payout overflow".to_string()))?;
        if facilitator_total > listing.price {
            return malformed(format!(
                "price {} is below n * payout = {facilitator_total}",
                listing.price
            ));
        }
        let mut record = ContentRecord {
            uri: listing.uri,
            name: listing.name,
            price: listing.price,
            payout_per_facilitator: listing.payout_per_facilitator,
            coding: listing.coding,
            publisher_id: caller.clone(),
            facilitator_ids: listing.facilitator_ids,
            key_map: listing.key_map,
            hash_list: listing.hash_list,
            complaint_set: BTreeSet::new(),
            censored: false,
            denied_clients: BTreeSet::new(),
            status: ContentStatus::Available,
        };
        record.refresh_status();
        self.state.contents.insert(record.uri, record);
        Ok(Receipt::Listed)
    }

    fn pay(
        &mut self,
        payer: &PartyId,
        uri: Uri,
        req_id: ReqId,
        link: Option<String>,
    ) -> Result<Receipt, LedgerError> {
        let record = self.purchasable(&uri)?;
        if record.denied_clients.contains(payer) {
            return Err(LedgerError::ClientRestricted);
        }
        if self.state.payments.contains_key(&req_id) {
            return Err(LedgerError::DuplicateReqId);
        }
        let price = record.price;
        let remaining = self
            .balance(payer)
            .checked_sub(price)
            .ok_or(LedgerError::InsufficientFunds)?;

        let payout = record.payout_per_facilitator;
        let publisher_payout = record.publisher_payout();
        let publisher = record.publisher_id.clone();
        let facilitators = record.facilitator_ids.clone();

        // Debit first so a payer who is also a payee nets out correctly.
        let balances = &mut self.state.balances;
        balances.insert(payer.clone(), remaining);
        credit(balances, &publisher, publisher_payout);
        for f in &facilitators {
            credit(balances, f, payout);
        }
        let record = PaymentRecord {
            req_id: req_id.clone(),
            uri,
            payer_id: payer.clone(),
            amount: price,
            payout_per_facilitator: payout,
            publisher_payout,
            link,
            height: self.state.height + 1,
        };
        self.state.payments.insert(req_id, record.clone());
        Ok(Receipt::Paid(record))
    }

    fn require_auditor(&self, caller: &PartyId) -> Result<(), LedgerError> {
        if self.role(caller) == Some(Role::Auditor) {
            Ok(())
        } else {
            Err(LedgerError::NotAuditor)
        }
    }

    fn auditor_record(
        &mut self,
        caller: &PartyId,
        uri: &Uri,
    ) -> Result<&mut ContentRecord, LedgerError> {
        self.require_auditor(caller)?;
        self.state
            .contents
            .get_mut(uri)
            .ok_or(LedgerError::UnknownUri)
    }

    fn set_censored(
        &mut self,
        caller: &PartyId,
        uri: Uri,
        censored: bool,
    ) -> Result<(), LedgerError> {
        let record = self.auditor_record(caller, &uri)?;
        record.censored = censored;
        record.refresh_status();
        Ok(())
    }

    /// Rebuild a ledger from its audit trail, checking the hash chain,
    /// signatures of successful calls, and that every call reproduces its
    /// recorded outcome.
    pub fn replay(entries: &[AuditEntry]) -> Result<Ledger, AuditError> {
        audit::replay(entries)
    }
}

fn credit(balances: &mut BTreeMap<PartyId, Amount>, party: &PartyId, amount: Amount) {
    let entry = balances.entry(party.clone()).or_default();
    *entry = *entry + amount;
}
