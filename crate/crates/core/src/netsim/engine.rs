use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::actors::{
    Behavior, ClientSession, ClientStep, FacilitatorState, Message, PreparedContent,
    PublisherSession, Reply, UploadOutcome,
};
use crate::amount::Amount;
use crate::codec::CodingParams;
use crate::crypto::{
    hash, hash_parts, ConvergentKey, Digest, EncryptedChunk, HashList, KeyMap, Keypair, PartyId,
    SignedCall, Uri,
};
use crate::ledger::{op, Genesis, Ledger, LedgerError, LedgerRequest, ReqId, Role};

use super::metrics::RunMetrics;
use super::{EventKind, EventRecord, Latency, SimConfig, SimError};

/// Size charged for any ledger call, receipt or query.
pub(crate) const CONTROL_LEN: u64 = 256;
/// Extra bytes per facilitator in messages that carry keys or hashes.
pub(crate) const PER_FACILITATOR_LEN: u64 = 96;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Node {
    Ledger,
    Publisher,
    Facilitator(usize),
    Client(usize),
}

type UploadKeys = Result<(ConvergentKey, HashList), LedgerError>;
type ReleasedKeys = Result<(KeyMap, HashList, Vec<PartyId>, CodingParams), LedgerError>;

#[derive(Debug, Clone)]
enum Payload {
    Peer(Message),
    Submit(SignedCall),
    Receipt {
        operation: String,
        error: Option<String>,
    },
    UploadKeysQuery {
        uri: Uri,
    },
    UploadKeysAnswer {
        uri: Uri,
        keys: UploadKeys,
    },
    ListingNotice {
        uri: Uri,
        keys: UploadKeys,
    },
    PaymentQuery {
        uri: Uri,
        req_id: ReqId,
        requester: usize,
    },
    PaymentAnswer {
        uri: Uri,
        req_id: ReqId,
        requester: usize,
        paid: bool,
    },
    KeysQuery(SignedCall),
    KeysAnswer(ReleasedKeys),
}

impl Payload {
    fn name(&self) -> &'static str {
        match self {
            Payload::Peer(m) => m.kind(),
            Payload::Submit(_) => "ledger_submit",
            Payload::Receipt { .. } => "ledger_receipt",
            Payload::UploadKeysQuery { .. } => "upload_keys_query",
            Payload::UploadKeysAnswer { .. } => "upload_keys_answer",
            Payload::ListingNotice { .. } => "listing_notice",
            Payload::PaymentQuery { .. } => "payment_query",
            Payload::PaymentAnswer { .. } => "payment_answer",
            Payload::KeysQuery(_) => "keys_query",
            Payload::KeysAnswer(_) => "keys_answer",
        }
    }

    fn wire_len(&self, n: usize) -> u64 {
        let per = PER_FACILITATOR_LEN * n as u64;
        match self {
            Payload::Peer(m) => m.wire_len() as u64,
            Payload::Submit(call) if call.operation == op::ADD_CONTENT_BY_PUB => CONTROL_LEN + per,
            Payload::UploadKeysAnswer { .. }
            | Payload::ListingNotice { .. }
            | Payload::KeysAnswer(_) => CONTROL_LEN + per,
            _ => CONTROL_LEN,
        }
    }

    fn digest(&self) -> Digest {
        match self {
            Payload::Peer(
                Message::ChunkUpload { chunk, .. } | Message::ChunkResponse { chunk, .. },
            ) => chunk.digest(),
            Payload::Peer(Message::ChunkRequest { uri, req_id }) => {
                hash_parts(&[uri.0.as_bytes(), req_id.as_str().as_bytes()])
            }
            Payload::Peer(Message::Denial {
                uri,
                req_id,
                reason,
            }) => hash_parts(&[
                uri.0.as_bytes(),
                req_id.as_str().as_bytes(),
                reason.as_bytes(),
            ]),
            Payload::Submit(call) | Payload::KeysQuery(call) => hash(&call.signature.0),
            Payload::Receipt { operation, error } => hash_parts(&[
                operation.as_bytes(),
                error.as_deref().unwrap_or("ok").as_bytes(),
            ]),
            Payload::UploadKeysQuery { uri }
            | Payload::UploadKeysAnswer { uri, .. }
            | Payload::ListingNotice { uri, .. } => uri.0,
            Payload::PaymentQuery { uri, req_id, .. } => {
                hash_parts(&[uri.0.as_bytes(), req_id.as_str().as_bytes()])
            }
            Payload::PaymentAnswer {
                uri, req_id, paid, ..
            } => hash_parts(&[
                uri.0.as_bytes(),
                req_id.as_str().as_bytes(),
                &[u8::from(*paid)],
            ]),
            Payload::KeysAnswer(Ok((_, hash_list, _, _))) => {
                let parts: Vec<&[u8]> = hash_list.iter().map(|d| d.as_bytes().as_slice()).collect();
                hash_parts(&parts)
            }
            Payload::KeysAnswer(Err(e)) => hash(e.code().as_bytes()),
        }
    }
}

#[derive(Debug)]
enum Ev {
    Deliver {
        from: Node,
        to: Node,
        payload: Payload,
        bytes: u64,
    },
    Commit {
        from: Node,
        call: SignedCall,
    },
    Timeout {
        client: usize,
        facilitator: usize,
    },
    /// Transport-level acknowledgement of a chunk request. Carries no
    /// payload and takes no bandwidth.
    Ack {
        client: usize,
        facilitator: usize,
    },
    ClientStart {
        client: usize,
    },
    UploadExpiry {
        facilitator: usize,
    },
}

struct Scheduled {
    at: u64,
    seq: u64,
    ev: Ev,
}

impl PartialEq for Scheduled {
    fn eq(&self, other: &Self) -> bool {
        (self.at, self.seq) == (other.at, other.seq)
    }
}
impl Eq for Scheduled {}
impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Scheduled {
    // Reversed so the max-heap pops the earliest event, FIFO among equals.
    fn cmp(&self, other: &Self) -> Ordering {
        (other.at, other.seq).cmp(&(self.at, self.seq))
    }
}

struct FileRun {
    session: PublisherSession,
    prepared: PreparedContent,
    hosts: Vec<usize>,
    settled: usize,
    failed_listing: bool,
}

impl FileRun {
    fn is_settled(&self) -> bool {
        self.failed_listing || self.settled == self.hosts.len()
    }
}

/// Result of one simulation run.
#[derive(Debug)]
pub struct SimOutput {
    pub metrics: RunMetrics,
    pub events: Vec<EventRecord>,
    pub ledger: Ledger,
    /// Final minus genesis balance, per party, in micro-units.
    pub balance_deltas: BTreeMap<PartyId, i64>,
    /// Ledger-visible content ids in file order.
    pub uris: Vec<Uri>,
}

impl SimOutput {
    pub fn events_jsonl(&self) -> String {
        super::events_to_jsonl(&self.events)
    }
}

struct Sim<'a> {
    cfg: &'a SimConfig,
    ledger_on: bool,
    now: u64,
    seq: u64,
    heap: BinaryHeap<Scheduled>,
    up_free: Vec<u64>,
    down_free: Vec<u64>,
    ledger: Ledger,
    facs: Vec<FacilitatorState>,
    fac_index: BTreeMap<PartyId, usize>,
    arrived: Vec<BTreeMap<Uri, EncryptedChunk>>,
    files: Vec<FileRun>,
    uri_file: BTreeMap<Uri, usize>,
    clients: Vec<ClientSession>,
    client_file: Vec<usize>,
    timers: BTreeSet<(usize, usize)>,
    downloads_started: bool,
    initial_balances: BTreeMap<PartyId, Amount>,
    log: Vec<EventRecord>,
}

fn ms_to_us(ms: f64) -> u64 {
    (ms * 1000.0).round() as u64
}

fn file_bytes(seed: u64, index: usize, len: u64) -> Vec<u8> {
    let s = hash_parts(&[
        b"fairmarket-sim-file",
        &seed.to_be_bytes(),
        &(index as u64).to_be_bytes(),
    ]);
    let mut rng = ChaCha8Rng::from_seed(s.0);
    let mut out = vec![0u8; len as usize];
    rng.fill_bytes(&mut out);
    out
}

fn client_seed(seed: u64, client: usize) -> u64 {
    let d = hash_parts(&[
        b"fairmarket-sim-client",
        &seed.to_be_bytes(),
        &(client as u64).to_be_bytes(),
    ]);
    u64::from_be_bytes(d.0[..8].try_into().expect("8 bytes"))
}

pub fn facilitator_id(i: usize) -> PartyId {
    PartyId::new(format!("f{i}"))
}

pub fn client_id(c: usize) -> PartyId {
    PartyId::new(format!("c{c}"))
}

pub const PUBLISHER_ID: &str = "pub";

/// Run one simulation to completion.
pub fn run(cfg: &SimConfig) -> Result<SimOutput, SimError> {
    cfg.validate()?;
    let mut sim = Sim::new(cfg)?;
    sim.start();
    while let Some(Scheduled { at, ev, .. }) = sim.heap.pop() {
        sim.now = at;
        sim.step(ev);
    }
    sim.finish()
}

impl<'a> Sim<'a> {
    fn new(cfg: &'a SimConfig) -> Result<Self, SimError> {
        let pool = cfg.n_facilitators;
        let publisher = PartyId::new(PUBLISHER_ID);
        let pub_kp = Keypair::derive(cfg.seed, &publisher);
        let mut genesis = Genesis::default();
        genesis.add(publisher.clone(), Role::Publisher, &pub_kp, Amount::ZERO);
        let mut facs = Vec::with_capacity(pool);
        let mut fac_index = BTreeMap::new();
        for i in 0..pool {
            let id = facilitator_id(i);
            let kp = Keypair::derive(cfg.seed, &id);
            genesis.add(id.clone(), Role::Facilitator, &kp, Amount::ZERO);
            let behavior = cfg.faults.get(id.as_str()).copied().unwrap_or_default();
            let mut state = FacilitatorState::new(id.clone(), kp, behavior, cfg.seed);
            state.upload_timeout = ms_to_us(cfg.upload_timeout_ms);
            fac_index.insert(id, i);
            facs.push(state);
        }

        let n = cfg.coding.n();
        let payout = cfg.payout();
        let mut files = Vec::with_capacity(cfg.n_files);
        let mut uri_file = BTreeMap::new();
        for j in 0..cfg.n_files {
            let hosts: Vec<usize> = (0..n).map(|i| (j * n + i) % pool).collect();
            let ids: Vec<PartyId> = hosts.iter().map(|&i| facilitator_id(i)).collect();
            let session = PublisherSession::new(
                publisher.clone(),
                pub_kp.clone(),
                format!("file-{j}"),
                file_bytes(cfg.seed, j, cfg.file_size_bytes),
                cfg.coding,
                cfg.price,
                payout,
                ids,
            )
            .map_err(|e| SimError::ConfigInvalid(e.to_string()))?;
            let prepared = session
                .prepare()
                .map_err(|e| SimError::ConfigInvalid(e.to_string()))?;
            if uri_file.insert(prepared.uri, j).is_some() {
                return Err(SimError::ConfigInvalid(
                    "two simulated files share a uri".to_string(),
                ));
            }
            files.push(FileRun {
                session,
                prepared,
                hosts,
                settled: 0,
                failed_listing: false,
            });
        }

        let mut clients = Vec::with_capacity(cfg.n_clients);
        let mut client_file = Vec::with_capacity(cfg.n_clients);
        for c in 0..cfg.n_clients {
            let id = client_id(c);
            let kp = Keypair::derive(cfg.seed, &id);
            genesis.add(id.clone(), Role::Client, &kp, cfg.price);
            let file = c % cfg.n_files;
            clients.push(ClientSession::new(
                id,
                kp,
                files[file].prepared.uri,
                cfg.fetch_strategy,
                client_seed(cfg.seed, c),
            ));
            client_file.push(file);
        }
        let ledger =
            Ledger::from_genesis(genesis).map_err(|e| SimError::ConfigInvalid(e.to_string()))?;

        Ok(Self {
            initial_balances: ledger.balances().clone(),
            cfg,
            ledger_on: cfg.ledger_check_enabled,
            now: 0,
            seq: 0,
            heap: BinaryHeap::new(),
            up_free: vec![0; cfg.node_count()],
            down_free: vec![0; cfg.node_count()],
            ledger,
            facs,
            fac_index,
            arrived: vec![BTreeMap::new(); pool],
            files,
            uri_file,
            clients,
            client_file,
            timers: BTreeSet::new(),
            downloads_started: false,
            log: Vec::new(),
        })
    }

    fn node_index(&self, node: Node) -> usize {
        match node {
            Node::Ledger => 0,
            Node::Publisher => 1,
            Node::Facilitator(i) => 2 + i,
            Node::Client(c) => 2 + self.cfg.n_facilitators + c,
        }
    }

    fn node_name(node: Node) -> String {
        match node {
            Node::Ledger => "ledger".to_string(),
            Node::Publisher => PUBLISHER_ID.to_string(),
            Node::Facilitator(i) => format!("f{i}"),
            Node::Client(c) => format!("c{c}"),
        }
    }

    fn latency_us(&self, a: usize, b: usize) -> u64 {
        match &self.cfg.latency_ms {
            Latency::Uniform(ms) => ms_to_us(*ms),
            Latency::Matrix(rows) => ms_to_us(rows[a][b]),
        }
    }

    fn transfer_us(&self, bytes: u64) -> u64 {
        (bytes as f64 * 1000.0 / self.cfg.bandwidth_bytes_per_ms).ceil() as u64
    }

    fn schedule(&mut self, at: u64, ev: Ev) {
        let seq = self.seq;
        self.seq += 1;
        self.heap.push(Scheduled { at, seq, ev });
    }

    fn send(&mut self, from: Node, to: Node, payload: Payload) {
        let (a, b) = (self.node_index(from), self.node_index(to));
        let bytes = payload.wire_len(self.cfg.coding.n());
        let start = self.now.max(self.up_free[a]).max(self.down_free[b]);
        let end = start + self.transfer_us(bytes);
        self.up_free[a] = end;
        self.down_free[b] = end;
        let at = end + self.latency_us(a, b);
        self.schedule(
            at,
            Ev::Deliver {
                from,
                to,
                payload,
                bytes,
            },
        );
    }

    fn record(
        &mut self,
        kind: EventKind,
        actor: String,
        detail: impl Into<String>,
        digest: Option<Digest>,
    ) {
        self.log.push(EventRecord {
            t_us: self.now,
            seq: self.log.len() as u64,
            kind,
            actor,
            detail: detail.into(),
            from: None,
            bytes: None,
            digest,
        });
    }

    fn start(&mut self) {
        for j in 0..self.files.len() {
            let uri = self.files[j].prepared.uri;
            self.record(
                EventKind::ActorStep,
                PUBLISHER_ID.to_string(),
                "upload_start",
                Some(uri.0),
            );
            let uploads = self.files[j]
                .session
                .upload_messages(&self.files[j].prepared);
            for (to, message) in uploads {
                let i = self.fac_index[&to];
                self.send(
                    Node::Publisher,
                    Node::Facilitator(i),
                    Payload::Peer(message),
                );
            }
            if self.ledger_on {
                let call = self.files[j].session.listing_call(&self.files[j].prepared);
                self.send(Node::Publisher, Node::Ledger, Payload::Submit(call));
            }
        }
    }

    fn step(&mut self, ev: Ev) {
        match ev {
            Ev::Deliver {
                from,
                to,
                payload,
                bytes,
            } => {
                self.log.push(EventRecord {
                    t_us: self.now,
                    seq: self.log.len() as u64,
                    kind: EventKind::MessageDelivery,
                    actor: Self::node_name(to),
                    detail: payload.name().to_string(),
                    from: Some(Self::node_name(from)),
                    bytes: Some(bytes),
                    digest: Some(payload.digest()),
                });
                match to {
                    Node::Ledger => self.at_ledger(from, payload),
                    Node::Publisher => self.at_publisher(payload),
                    Node::Facilitator(i) => self.at_facilitator(i, from, payload),
                    Node::Client(c) => self.at_client(c, from, payload),
                }
            }
            Ev::Commit { from, call } => self.commit(from, call),
            Ev::Timeout {
                client,
                facilitator,
            } => {
                if self.timers.remove(&(client, facilitator)) {
                    self.record(
                        EventKind::ActorStep,
                        Self::node_name(Node::Client(client)),
                        format!("timeout:f{facilitator}"),
                        None,
                    );
                    let id = facilitator_id(facilitator);
                    let step = self.clients[client].on_timeout(&id);
                    self.client_step(client, step);
                }
            }
            Ev::Ack {
                client,
                facilitator,
            } => {
                // The host is alive; its reply may still be slow, so stop
                // treating silence as a crash.
                self.timers.remove(&(client, facilitator));
            }
            Ev::ClientStart { client } => self.client_start(client),
            Ev::UploadExpiry { facilitator } => {
                let now = self.now;
                for uri in self.facs[facilitator].expire(now) {
                    self.record(
                        EventKind::ActorStep,
                        Self::node_name(Node::Facilitator(facilitator)),
                        "upload_expired",
                        Some(uri.0),
                    );
                    self.settle_upload(uri);
                }
            }
        }
    }

    fn at_ledger(&mut self, from: Node, payload: Payload) {
        match payload {
            Payload::Submit(call) => {
                let at = self.now + ms_to_us(self.cfg.commit_delay_ms);
                self.schedule(at, Ev::Commit { from, call });
            }
            Payload::UploadKeysQuery { uri } => {
                let Node::Facilitator(i) = from else { return };
                let keys = self.ledger.get_upload_keys(&uri, &facilitator_id(i));
                self.send(Node::Ledger, from, Payload::UploadKeysAnswer { uri, keys });
            }
            Payload::PaymentQuery {
                uri,
                req_id,
                requester,
            } => {
                let paid = self.ledger.is_payment_done(&uri, &req_id);
                self.send(
                    Node::Ledger,
                    from,
                    Payload::PaymentAnswer {
                        uri,
                        req_id,
                        requester,
                        paid,
                    },
                );
            }
            Payload::KeysQuery(call) => {
                let answer = self.ledger.get_keys(&call).and_then(|(km, hl)| {
                    let uri = match LedgerRequest::decode(&call.operation, &call.payload)? {
                        LedgerRequest::GetKeys { uri, .. } => uri,
                        _ => unreachable!("get_keys checked the operation"),
                    };
                    let record = self.ledger.content(&uri).ok_or(LedgerError::UnknownUri)?;
                    Ok((km, hl, record.facilitator_ids.clone(), record.coding))
                });
                self.send(Node::Ledger, from, Payload::KeysAnswer(answer));
            }
            _ => {}
        }
    }

    fn commit(&mut self, from: Node, call: SignedCall) {
        let operation = call.operation.clone();
        let listed = match LedgerRequest::decode(&call.operation, &call.payload) {
            Ok(LedgerRequest::AddContentByPub(listing)) => Some(listing.uri),
            _ => None,
        };
        let caller = call.caller.to_string();
        let error = self.ledger.submit(call).err().map(|e| e.code().to_string());
        let detail = format!("{operation}:{}", error.as_deref().unwrap_or("ok"));
        self.log.push(EventRecord {
            t_us: self.now,
            seq: self.log.len() as u64,
            kind: EventKind::LedgerCommit,
            actor: "ledger".to_string(),
            detail,
            from: Some(caller),
            bytes: None,
            digest: Some(
                self.ledger
                    .trail()
                    .last()
                    .expect("every call is recorded")
                    .entry_hash,
            ),
        });
        if let (Some(uri), None) = (listed, &error) {
            let hosts = self.files[self.uri_file[&uri]].hosts.clone();
            for i in hosts {
                let keys = self.ledger.get_upload_keys(&uri, &facilitator_id(i));
                self.send(
                    Node::Ledger,
                    Node::Facilitator(i),
                    Payload::ListingNotice { uri, keys },
                );
            }
        }
        self.send(Node::Ledger, from, Payload::Receipt { operation, error });
    }

    fn at_publisher(&mut self, payload: Payload) {
        if let Payload::Receipt {
            operation,
            error: Some(_),
        } = payload
        {
            if operation == op::ADD_CONTENT_BY_PUB {
                // Without a listing no upload can be verified.
                for file in &mut self.files {
                    if self.ledger.content(&file.prepared.uri).is_none() {
                        file.failed_listing = true;
                    }
                }
                self.maybe_start_downloads();
            }
        }
    }

    fn at_facilitator(&mut self, i: usize, from: Node, payload: Payload) {
        match payload {
            Payload::Peer(Message::ChunkUpload { uri, chunk }) => {
                if self.ledger_on {
                    self.arrived[i].insert(uri, chunk);
                    self.send(
                        Node::Facilitator(i),
                        Node::Ledger,
                        Payload::UploadKeysQuery { uri },
                    );
                } else {
                    self.facs[i].store_unverified(uri, chunk);
                    self.upload_outcome(i, uri, UploadOutcome::Stored);
                }
            }
            Payload::UploadKeysAnswer { uri, keys } => {
                if let Some(chunk) = self.arrived[i].remove(&uri) {
                    let now = self.now;
                    let outcome = self.facs[i].on_upload(uri, chunk, keys, now);
                    if outcome == UploadOutcome::Queued {
                        let at = now + self.facs[i].upload_timeout;
                        self.schedule(at, Ev::UploadExpiry { facilitator: i });
                    }
                    self.upload_outcome(i, uri, outcome);
                }
            }
            Payload::ListingNotice { uri, keys } => {
                if let Some(outcome) = self.facs[i].on_listing(uri, keys) {
                    self.upload_outcome(i, uri, outcome);
                }
            }
            Payload::Peer(Message::ChunkRequest { uri, req_id }) => {
                let Node::Client(c) = from else { return };
                if self.facs[i].behavior != Behavior::Crash {
                    let at = self.now
                        + self.latency_us(
                            self.node_index(Node::Facilitator(i)),
                            self.node_index(from),
                        );
                    self.schedule(
                        at,
                        Ev::Ack {
                            client: c,
                            facilitator: i,
                        },
                    );
                }
                if self.ledger_on && self.facs[i].needs_payment_check() {
                    self.send(
                        Node::Facilitator(i),
                        Node::Ledger,
                        Payload::PaymentQuery {
                            uri,
                            req_id,
                            requester: c,
                        },
                    );
                } else {
                    // Baseline facilitators serve without asking anyone.
                    let paid = !self.ledger_on;
                    self.respond(i, c, uri, req_id, paid);
                }
            }
            Payload::PaymentAnswer {
                uri,
                req_id,
                requester,
                paid,
            } => self.respond(i, requester, uri, req_id, paid),
            _ => {}
        }
    }

    fn respond(&mut self, i: usize, c: usize, uri: Uri, req_id: ReqId, paid: bool) {
        let reply = match self.facs[i].on_request(&uri, &req_id, paid) {
            Ok(reply) => reply,
            Err(e) => Reply::Deny(e.code().to_string()),
        };
        let message = match reply {
            Reply::Chunk(chunk) => {
                let detail = match (self.facs[i].behavior.is_faulty(), self.ledger_on) {
                    (true, _) => "serve_faulty",
                    (false, true) => "serve",
                    (false, false) => "serve_unchecked",
                };
                self.record(
                    EventKind::ActorStep,
                    Self::node_name(Node::Facilitator(i)),
                    detail,
                    Some(hash_parts(&[uri.0.as_bytes(), req_id.as_str().as_bytes()])),
                );
                Message::ChunkResponse { uri, req_id, chunk }
            }
            Reply::Deny(reason) => Message::Denial {
                uri,
                req_id,
                reason,
            },
            Reply::Silent => return,
        };
        self.send(
            Node::Facilitator(i),
            Node::Client(c),
            Payload::Peer(message),
        );
    }

    fn upload_outcome(&mut self, i: usize, uri: Uri, outcome: UploadOutcome) {
        let actor = Self::node_name(Node::Facilitator(i));
        match outcome {
            UploadOutcome::Queued => {}
            UploadOutcome::Stored => {
                self.record(EventKind::ActorStep, actor, "upload_stored", Some(uri.0));
                self.settle_upload(uri);
            }
            UploadOutcome::Complain(call) => {
                self.record(EventKind::ActorStep, actor, "upload_complaint", Some(uri.0));
                self.send(Node::Facilitator(i), Node::Ledger, Payload::Submit(call));
                self.settle_upload(uri);
            }
            UploadOutcome::Dropped => {
                self.record(EventKind::ActorStep, actor, "upload_dropped", Some(uri.0));
                self.settle_upload(uri);
            }
        }
    }

    fn settle_upload(&mut self, uri: Uri) {
        if let Some(&j) = self.uri_file.get(&uri) {
            self.files[j].settled += 1;
        }
        self.maybe_start_downloads();
    }

    fn maybe_start_downloads(&mut self) {
        if self.downloads_started || !self.files.iter().all(FileRun::is_settled) {
            return;
        }
        self.downloads_started = true;
        let gap = ms_to_us(self.cfg.client_interval_ms);
        for c in 0..self.clients.len() {
            let at = self.now + gap * c as u64;
            self.schedule(at, Ev::ClientStart { client: c });
        }
    }

    fn client_start(&mut self, c: usize) {
        let uri = self.clients[c].uri;
        self.record(
            EventKind::ActorStep,
            Self::node_name(Node::Client(c)),
            "client_start",
            Some(uri.0),
        );
        if self.ledger_on {
            let call = self.clients[c].payment_call();
            self.send(Node::Client(c), Node::Ledger, Payload::Submit(call));
        } else {
            // Keys handed over out of band.
            let file = &self.files[self.client_file[c]];
            let (km, hl) = (
                file.prepared.key_map.clone(),
                file.prepared.hash_list.clone(),
            );
            let ids = file.session.facilitator_ids.clone();
            let step = self.clients[c].on_keys(km, hl, ids, self.cfg.coding);
            self.client_step(c, step);
        }
    }

    fn at_client(&mut self, c: usize, from: Node, payload: Payload) {
        let step = match payload {
            Payload::Receipt { operation, error } if operation == op::PAY_FOR_CONTENT => {
                match error {
                    None => {
                        let call = self.clients[c].keys_call();
                        self.send(Node::Client(c), Node::Ledger, Payload::KeysQuery(call));
                        return;
                    }
                    Some(code) => {
                        let actor = Self::node_name(Node::Client(c));
                        self.record(
                            EventKind::ActorStep,
                            actor,
                            format!("client_failed:{code}"),
                            None,
                        );
                        return;
                    }
                }
            }
            Payload::KeysAnswer(Ok((km, hl, ids, params))) => {
                self.clients[c].on_keys(km, hl, ids, params)
            }
            Payload::KeysAnswer(Err(e)) => ClientStep::Failed(e.into()),
            Payload::Peer(Message::ChunkResponse { chunk, req_id, .. })
                if req_id == self.clients[c].req_id =>
            {
                let Node::Facilitator(i) = from else { return };
                self.clients[c].on_response(&facilitator_id(i), &chunk)
            }
            Payload::Peer(Message::Denial { req_id, .. }) if req_id == self.clients[c].req_id => {
                let Node::Facilitator(i) = from else { return };
                self.clients[c].on_denial(&facilitator_id(i))
            }
            _ => return,
        };
        self.client_step(c, step);
    }

    fn client_step(&mut self, c: usize, step: ClientStep) {
        let actor = Self::node_name(Node::Client(c));
        match step {
            ClientStep::Wait => {}
            ClientStep::Send(sends) => {
                let timeout = ms_to_us(self.cfg.client_timeout_ms);
                for (to, message) in sends {
                    let i = self.fac_index[&to];
                    self.timers.insert((c, i));
                    self.send(
                        Node::Client(c),
                        Node::Facilitator(i),
                        Payload::Peer(message),
                    );
                    let at = self.now + timeout;
                    self.schedule(
                        at,
                        Ev::Timeout {
                            client: c,
                            facilitator: i,
                        },
                    );
                }
            }
            ClientStep::Done(file) => {
                let expected = &self.files[self.client_file[c]].session.file;
                let detail = if file == *expected {
                    "client_done"
                } else {
                    "client_failed:WrongFile"
                };
                self.record(EventKind::ActorStep, actor, detail, Some(hash(&file)));
            }
            ClientStep::Failed(e) => {
                self.record(
                    EventKind::ActorStep,
                    actor,
                    format!("client_failed:{}", e.code()),
                    None,
                );
            }
        }
    }

    fn finish(self) -> Result<SimOutput, SimError> {
        let metrics = RunMetrics::from_events(self.cfg.seed, self.cfg.n_clients, &self.log);
        let balance_deltas = self
            .ledger
            .balances()
            .iter()
            .map(|(id, b)| {
                let before = self
                    .initial_balances
                    .get(id)
                    .copied()
                    .unwrap_or(Amount::ZERO);
                (id.clone(), b.micros() - before.micros())
            })
            .collect();
        Ok(SimOutput {
            metrics,
            events: self.log,
            uris: self.files.iter().map(|f| f.prepared.uri).collect(),
            ledger: self.ledger,
            balance_deltas,
        })
    }
}
