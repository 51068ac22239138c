use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::Serialize;

use crate::crypto::{PartyId, Uri};
use crate::ledger::{Ledger, LedgerError, ReqId};

use super::{
    ActorError, Behavior, ClientSession, ClientStep, FacilitatorState, Message, PreparedContent,
    PublisherSession, Reply, Transport, TransportError, UploadOutcome, UPLOAD_RETRY_BUDGET,
};

/// One message handed to the transport.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LogRecord {
    pub seq: u64,
    pub from: PartyId,
    pub to: PartyId,
    pub kind: &'static str,
    pub uri: Uri,
    pub req_id: Option<ReqId>,
    pub bytes: usize,
}

/// A chunk response emitted by a facilitator, with what the ledger said
/// about the payment when it was emitted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ServeRecord {
    pub facilitator: PartyId,
    pub behavior: Behavior,
    pub uri: Uri,
    pub req_id: ReqId,
    pub paid: bool,
    pub ledger_height: u64,
}

/// Synchronous in-process embedding: messages are delivered in FIFO order
/// and ledger calls execute immediately. Crashed facilitators are detected
/// once the network goes idle.
#[derive(Debug)]
pub struct LocalNetwork {
    pub ledger: Ledger,
    facilitators: BTreeMap<PartyId, FacilitatorState>,
    unreachable: BTreeSet<PartyId>,
    queue: VecDeque<(PartyId, PartyId, Message)>,
    inbox: BTreeMap<PartyId, VecDeque<(PartyId, Message)>>,
    log: Vec<LogRecord>,
    serves: Vec<ServeRecord>,
    clock: u64,
}

impl Transport for LocalNetwork {
    fn send(
        &mut self,
        from: &PartyId,
        to: &PartyId,
        message: Message,
    ) -> Result<(), TransportError> {
        if self.unreachable.contains(to) {
            return Err(TransportError::Unreachable(to.clone()));
        }
        let req_id = match &message {
            Message::ChunkRequest { req_id, .. }
            | Message::ChunkResponse { req_id, .. }
            | Message::Denial { req_id, .. } => Some(req_id.clone()),
            Message::ChunkUpload { .. } => None,
        };
        self.log.push(LogRecord {
            seq: self.log.len() as u64,
            from: from.clone(),
            to: to.clone(),
            kind: message.kind(),
            uri: *message.uri(),
            req_id,
            bytes: message.wire_len(),
        });
        self.queue.push_back((from.clone(), to.clone(), message));
        Ok(())
    }
}

impl LocalNetwork {
    pub fn new(ledger: Ledger) -> Self {
        Self {
            ledger,
            facilitators: BTreeMap::new(),
            unreachable: BTreeSet::new(),
            queue: VecDeque::new(),
            inbox: BTreeMap::new(),
            log: Vec::new(),
            serves: Vec::new(),
            clock: 0,
        }
    }

    pub fn add_facilitator(&mut self, state: FacilitatorState) {
        self.facilitators.insert(state.id.clone(), state);
    }

    pub fn facilitator(&self, id: &PartyId) -> Option<&FacilitatorState> {
        self.facilitators.get(id)
    }

    pub fn set_behavior(&mut self, id: &PartyId, behavior: Behavior) {
        if let Some(f) = self.facilitators.get_mut(id) {
            f.behavior = behavior;
        }
    }

    pub fn set_unreachable(&mut self, id: PartyId, unreachable: bool) {
        if unreachable {
            self.unreachable.insert(id);
        } else {
            self.unreachable.remove(&id);
        }
    }

    pub fn log(&self) -> &[LogRecord] {
        &self.log
    }

    pub fn serves(&self) -> &[ServeRecord] {
        &self.serves
    }

    /// Algorithm 1 end to end with an honest preparation.
    pub fn publish(&mut self, session: &PublisherSession) -> Result<Uri, ActorError> {
        let prepared = session.prepare()?;
        self.publish_prepared(session, &prepared)
    }

    /// Send the chunks, then list. Facilitators that got their chunk before
    /// the listing verify it when the listing appears.
    pub fn publish_prepared(
        &mut self,
        session: &PublisherSession,
        prepared: &PreparedContent,
    ) -> Result<Uri, ActorError> {
        let mut failed = Vec::new();
        for (to, message) in session.upload_messages(prepared) {
            let sent = (0..UPLOAD_RETRY_BUDGET)
                .any(|_| self.send(&session.id, &to, message.clone()).is_ok());
            if !sent {
                failed.push(to);
            }
        }
        self.deliver();
        if !failed.is_empty() {
            return Err(ActorError::UploadIncomplete(failed));
        }
        self.ledger
            .add_content_by_pub(session.listing_call(prepared))?;
        let uri = prepared.uri;
        let ids: Vec<PartyId> = self.facilitators.keys().cloned().collect();
        for id in ids {
            let keys = self.ledger.get_upload_keys(&uri, &id);
            let facilitator = self.facilitators.get_mut(&id).expect("listed above");
            if let Some(outcome) = facilitator.on_listing(uri, keys) {
                self.settle_upload(outcome);
            }
        }
        Ok(uri)
    }

    fn settle_upload(&mut self, outcome: UploadOutcome) {
        if let UploadOutcome::Complain(call) = outcome {
            // Rejections are recorded in the trail; nothing else to do.
            let _ = self.ledger.complaint(call);
        }
    }

    /// Deliver queued messages until the network is idle.
    pub fn deliver(&mut self) {
        while let Some((from, to, message)) = self.queue.pop_front() {
            self.clock += 1;
            if self.facilitators.contains_key(&to) {
                self.handle_at_facilitator(&from, &to, message);
            } else {
                self.inbox.entry(to).or_default().push_back((from, message));
            }
        }
        let now = self.clock;
        for f in self.facilitators.values_mut() {
            f.expire(now);
        }
    }

    fn handle_at_facilitator(&mut self, from: &PartyId, to: &PartyId, message: Message) {
        match message {
            Message::ChunkUpload { uri, chunk } => {
                let keys = self.ledger.get_upload_keys(&uri, to);
                let now = self.clock;
                let facilitator = self.facilitators.get_mut(to).expect("checked by caller");
                let outcome = facilitator.on_upload(uri, chunk, keys, now);
                self.settle_upload(outcome);
            }
            Message::ChunkRequest { uri, req_id } => {
                let facilitator = &self.facilitators[to];
                let paid =
                    facilitator.needs_payment_check() && self.ledger.is_payment_done(&uri, &req_id);
                let behavior = facilitator.behavior;
                let reply = match facilitator.on_request(&uri, &req_id, paid) {
                    Ok(reply) => reply,
                    Err(e) => Reply::Deny(e.code().to_string()),
                };
                let response = match reply {
                    Reply::Chunk(chunk) => {
                        self.serves.push(ServeRecord {
                            facilitator: to.clone(),
                            behavior,
                            uri,
                            req_id: req_id.clone(),
                            paid,
                            ledger_height: self.ledger.height(),
                        });
                        Some(Message::ChunkResponse { uri, req_id, chunk })
                    }
                    Reply::Deny(reason) => Some(Message::Denial {
                        uri,
                        req_id,
                        reason,
                    }),
                    Reply::Silent => None,
                };
                if let Some(response) = response {
                    // Replies to an unreachable requester are lost.
                    let _ = self.send(to, from, response);
                }
            }
            // Facilitators never request anything, so stray replies are dropped.
            Message::ChunkResponse { .. } | Message::Denial { .. } => {}
        }
    }

    /// Algorithm 2: pay, fetch the keys, collect `k` verified chunks and
    /// rebuild the file.
    pub fn purchase(&mut self, client: &mut ClientSession) -> Result<Vec<u8>, ActorError> {
        self.ledger.pay_for_content(client.payment_call())?;
        let (key_map, hash_list) = self.ledger.get_keys(&client.keys_call())?;
        let record = self
            .ledger
            .content(&client.uri)
            .ok_or(LedgerError::UnknownUri)?;
        let (ids, params) = (record.facilitator_ids.clone(), record.coding);
        let mut step = client.on_keys(key_map, hash_list, ids, params);
        loop {
            match step {
                ClientStep::Done(file) => return Ok(file),
                ClientStep::Failed(e) => return Err(e),
                ClientStep::Send(sends) => {
                    for (to, message) in sends {
                        // An unreachable facilitator looks the same as a crashed one.
                        let _ = self.send(&client.id, &to, message);
                    }
                    self.deliver();
                }
                ClientStep::Wait => {}
            }
            step = match self.inbox.get_mut(&client.id).and_then(VecDeque::pop_front) {
                Some((from, Message::ChunkResponse { chunk, req_id, .. }))
                    if req_id == client.req_id =>
                {
                    client.on_response(&from, &chunk)
                }
                Some((from, Message::Denial { req_id, .. })) if req_id == client.req_id => {
                    client.on_denial(&from)
                }
                Some(_) => ClientStep::Wait,
                None => {
                    // Idle with requests outstanding: those facilitators timed out.
                    let silent = client.outstanding();
                    let first = silent
                        .first()
                        .cloned()
                        .expect("a waiting client has outstanding requests");
                    client.on_timeout(&first)
                }
            };
        }
    }

    /// Send one request outside any purchase and return the facilitator's
    /// answer, if any.
    pub fn request_chunk(
        &mut self,
        requester: &PartyId,
        facilitator: &PartyId,
        uri: Uri,
        req_id: ReqId,
    ) -> Option<Message> {
        self.send(
            requester,
            facilitator,
            Message::ChunkRequest { uri, req_id },
        )
        .ok()?;
        self.deliver();
        let inbox = self.inbox.get_mut(requester)?;
        let reply = inbox.pop_front().map(|(_, m)| m);
        inbox.clear();
        reply
    }
}
