//! Runs a scenario script on the in-process network and narrates it.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use fairmarket::actors::{ClientSession, FacilitatorState, LocalNetwork, PublisherSession};
use fairmarket::crypto::{hash_parts, Keypair, PartyId, Uri};
use fairmarket::ledger::{ContentStatus, Genesis, Ledger, LedgerError, LedgerRequest, Role};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::scenario::{Action, Scenario};

/// A failed action whose outcome was not the expected one.
#[derive(Debug)]
pub struct ProtocolFailure {
    pub action: usize,
    pub kind: &'static str,
    pub expected: String,
    pub actual: String,
    pub message: String,
}

pub struct DemoRun {
    pub transcript: String,
    pub net: LocalNetwork,
    pub failure: Option<ProtocolFailure>,
}

fn seed_u64(d: fairmarket::crypto::Digest) -> u64 {
    u64::from_be_bytes(d.0[..8].try_into().expect("32-byte digest"))
}

fn content_bytes(seed: u64, label: &str, size: Option<u64>, text: &Option<String>) -> Vec<u8> {
    if let Some(t) = text {
        return t.as_bytes().to_vec();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed_u64(hash_parts(&[
        &seed.to_be_bytes(),
        b"content",
        label.as_bytes(),
    ])));
    let mut bytes = vec![0u8; size.unwrap_or(0) as usize];
    rng.fill_bytes(&mut bytes);
    bytes
}

struct Published {
    uri: Uri,
    bytes: Vec<u8>,
}

struct Runner<'a> {
    seed: u64,
    scenario: &'a Scenario,
    net: LocalNetwork,
    contents: BTreeMap<String, Published>,
    out: String,
}

fn code_of(r: &Result<(), LedgerError>) -> String {
    match r {
        Ok(()) => "ok".to_string(),
        Err(e) => e.code().to_string(),
    }
}

impl Runner<'_> {
    fn keypair(&self, id: &str) -> Keypair {
        Keypair::derive(self.seed, &PartyId::new(id))
    }

    fn uri(&self, content: &str) -> Uri {
        self.contents[content].uri
    }

    fn auditor_call(&mut self, auditor: &str, request: LedgerRequest) -> Result<(), LedgerError> {
        let call = request.sign(&PartyId::new(auditor), &self.keypair(auditor));
        self.net.ledger.submit(call).map(|_| ())
    }

    fn status(&self, content: &str) -> String {
        match self
            .net
            .ledger
            .content(&self.uri(content))
            .map(|r| r.status)
        {
            Some(ContentStatus::Available) => "Available",
            Some(ContentStatus::Censored) => "Censored",
            Some(ContentStatus::Unavailable) => "Unavailable",
            None => "unlisted",
        }
        .to_string()
    }

    /// Returns the outcome code: `ok` or an error code.
    fn step(&mut self, i: usize, action: &Action) -> (String, String) {
        match action {
            Action::Publish {
                publisher,
                content,
                size,
                text,
                coding,
                price,
                payout,
                facilitators,
                corrupt,
                ..
            } => {
                let bytes = content_bytes(self.seed, content, *size, text);
                let hosts: Vec<PartyId> = match facilitators {
                    Some(list) => list.iter().map(PartyId::new).collect(),
                    None => self
                        .scenario
                        .facilitators()
                        .into_iter()
                        .take(coding.n())
                        .map(PartyId::new)
                        .collect(),
                };
                let result = PublisherSession::new(
                    PartyId::new(publisher),
                    self.keypair(publisher),
                    content.clone(),
                    bytes.clone(),
                    *coding,
                    *price,
                    *payout,
                    hosts.clone(),
                )
                .and_then(|session| {
                    let mut prepared = session.prepare()?;
                    for &c in corrupt {
                        prepared.corrupt(c);
                    }
                    self.net.publish_prepared(&session, &prepared)
                });
                match result {
                    Ok(uri) => {
                        self.contents.insert(
                            content.clone(),
                            Published {
                                uri,
                                bytes: bytes.clone(),
                            },
                        );
                        let stored = hosts
                            .iter()
                            .filter(|h| {
                                self.net
                                    .facilitator(h)
                                    .is_some_and(|f| f.stored(&uri).is_some())
                            })
                            .count();
                        let complaints = self
                            .net
                            .ledger
                            .content(&uri)
                            .map_or(0, |r| r.complaint_set.len());
                        let detail = format!(
                            "{content} ({} bytes, {coding}) listed as {uri}; {stored}/{} chunks stored, {complaints} complaint(s), status {}",
                            bytes.len(),
                            coding.n(),
                            self.status(content)
                        );
                        ("ok".to_string(), detail)
                    }
                    Err(e) => (e.code().to_string(), e.to_string()),
                }
            }
            Action::Buy {
                client,
                content,
                strategy,
                ..
            } => {
                let uri = self.uri(content);
                let session_seed = seed_u64(hash_parts(&[
                    &self.seed.to_be_bytes(),
                    b"buy",
                    &(i as u64).to_be_bytes(),
                    client.as_bytes(),
                ]));
                let mut session = ClientSession::new(
                    PartyId::new(client),
                    self.keypair(client),
                    uri,
                    *strategy,
                    session_seed,
                );
                match self.net.purchase(&mut session) {
                    Ok(file) => {
                        if file == self.contents[content].bytes {
                            let detail = format!(
                                "{client} bought {content} ({strategy}, req {}): contacted {}, file hash verified",
                                session.req_id,
                                session.contacted()
                            );
                            ("ok".to_string(), detail)
                        } else {
                            (
                                "FileMismatch".to_string(),
                                format!("{client} received a different file"),
                            )
                        }
                    }
                    Err(e) => (
                        e.code().to_string(),
                        format!("{client} could not buy {content}: {e}"),
                    ),
                }
            }
            Action::Censor {
                auditor, content, ..
            } => {
                let r = self.auditor_call(
                    auditor,
                    LedgerRequest::Censor {
                        uri: self.uri(content),
                    },
                );
                (
                    code_of(&r),
                    format!(
                        "{auditor} censors {content}; status {}",
                        self.status(content)
                    ),
                )
            }
            Action::Uncensor {
                auditor, content, ..
            } => {
                let r = self.auditor_call(
                    auditor,
                    LedgerRequest::Uncensor {
                        uri: self.uri(content),
                    },
                );
                (
                    code_of(&r),
                    format!(
                        "{auditor} lifts censorship of {content}; status {}",
                        self.status(content)
                    ),
                )
            }
            Action::Restrict {
                auditor,
                content,
                client,
                ..
            } => {
                let request = LedgerRequest::RestrictClient {
                    uri: self.uri(content),
                    client: PartyId::new(client),
                };
                let r = self.auditor_call(auditor, request);
                (
                    code_of(&r),
                    format!("{auditor} bars {client} from {content}"),
                )
            }
            Action::Unrestrict {
                auditor,
                content,
                client,
                ..
            } => {
                let request = LedgerRequest::UnrestrictClient {
                    uri: self.uri(content),
                    client: PartyId::new(client),
                };
                let r = self.auditor_call(auditor, request);
                (
                    code_of(&r),
                    format!("{auditor} lets {client} buy {content} again"),
                )
            }
            Action::Complaint {
                facilitator,
                content,
                ..
            } => {
                let call = LedgerRequest::Complaint {
                    uri: self.uri(content),
                }
                .sign(&PartyId::new(facilitator), &self.keypair(facilitator));
                let r = self.net.ledger.complaint(call).map(|_| ());
                (
                    code_of(&r),
                    format!(
                        "{facilitator} complains about {content}; status {}",
                        self.status(content)
                    ),
                )
            }
            Action::Fault {
                facilitator,
                behavior,
            } => {
                self.net.set_behavior(&PartyId::new(facilitator), *behavior);
                (
                    "ok".to_string(),
                    format!("{facilitator} now behaves as {behavior}"),
                )
            }
        }
    }
}

fn expected(action: &Action) -> String {
    let e = match action {
        Action::Publish { expect, .. }
        | Action::Buy { expect, .. }
        | Action::Censor { expect, .. }
        | Action::Uncensor { expect, .. }
        | Action::Restrict { expect, .. }
        | Action::Unrestrict { expect, .. }
        | Action::Complaint { expect, .. } => expect.clone(),
        Action::Fault { .. } => None,
    };
    e.unwrap_or_else(|| "ok".to_string())
}

/// Builds the genesis ledger and runs the script, stopping at the first
/// action whose outcome differs from its `expect` (default `ok`).
pub fn run(scenario: &Scenario, seed: u64) -> Result<DemoRun, String> {
    let mut genesis = Genesis::default();
    for p in &scenario.parties {
        let id = PartyId::new(&p.id);
        let kp = Keypair::derive(seed, &id);
        genesis.add(id, p.role, &kp, p.balance);
    }
    let ledger = Ledger::from_genesis(genesis).map_err(|e| e.to_string())?;
    let mut net = LocalNetwork::new(ledger);
    for p in scenario
        .parties
        .iter()
        .filter(|p| p.role == Role::Facilitator)
    {
        let id = PartyId::new(&p.id);
        let kp = Keypair::derive(seed, &id);
        net.add_facilitator(FacilitatorState::new(
            id,
            kp,
            p.behavior.unwrap_or_default(),
            seed,
        ));
    }

    let mut runner = Runner {
        seed,
        scenario,
        net,
        contents: BTreeMap::new(),
        out: String::new(),
    };
    let _ = writeln!(
        runner.out,
        "scenario seed {seed}: {} parties, {} actions",
        scenario.parties.len(),
        scenario.actions.len()
    );
    let mut failure = None;
    for (i, action) in scenario.actions.iter().enumerate() {
        let (actual, detail) = runner.step(i, action);
        let want = expected(action);
        let verdict = if actual == want {
            if actual == "ok" {
                "ok".to_string()
            } else {
                format!("denied: {actual} (expected)")
            }
        } else {
            format!("FAILED: got {actual}, expected {want}")
        };
        let _ = writeln!(
            runner.out,
            "[{i}] {}: {detail} ... {verdict}",
            action.name()
        );
        if actual != want {
            failure = Some(ProtocolFailure {
                action: i,
                kind: action.name(),
                expected: want,
                actual,
                message: detail,
            });
            break;
        }
    }

    let ledger = &runner.net.ledger;
    let _ = writeln!(runner.out, "balances:");
    for (party, amount) in ledger.balances() {
        let _ = writeln!(runner.out, "  {:<12} {amount}", party.as_str());
    }
    let failed_calls = ledger.trail().iter().filter(|e| !e.outcome.ok).count();
    let _ = writeln!(
        runner.out,
        "audit height {}, {failed_calls} rejected call(s) recorded, state digest {}",
        ledger.height(),
        ledger.state_digest()
    );
    Ok(DemoRun {
        transcript: runner.out,
        net: runner.net,
        failure,
    })
}
