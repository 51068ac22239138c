use super::*;
use crate::amount::Amount;
use crate::codec::CodingParams;
use crate::crypto::{encrypt_with_key, hash, ConvergentKey, Keypair, PartyId};
use crate::ledger::{ContentStatus, Genesis, Ledger, LedgerError, Role};

const SEED: u64 = 11;

struct World {
    net: LocalNetwork,
    publisher: PartyId,
    facilitators: Vec<PartyId>,
    params: CodingParams,
}

fn party(id: &str) -> (PartyId, Keypair) {
    let id = PartyId::new(id);
    let kp = Keypair::derive(SEED, &id);
    (id, kp)
}

fn world(k: usize, n: usize) -> World {
    let mut genesis = Genesis::default();
    let (publisher, pkp) = party("pub");
    genesis.add(publisher.clone(), Role::Publisher, &pkp, Amount::ZERO);
    for name in ["alice", "bob"] {
        let (id, kp) = party(name);
        genesis.add(id, Role::Client, &kp, Amount::whole(1_000_000));
    }
    let (poor, kp) = party("poor");
    genesis.add(poor, Role::Client, &kp, Amount::from_micros(1));
    let (aud, kp) = party("aud");
    genesis.add(aud, Role::Auditor, &kp, Amount::ZERO);
    let mut facilitators = Vec::new();
    for i in 0..n {
        let (id, kp) = party(&format!("f{i}"));
        genesis.add(id.clone(), Role::Facilitator, &kp, Amount::ZERO);
        facilitators.push(id);
    }
    let mut net = LocalNetwork::new(Ledger::from_genesis(genesis).unwrap());
    for id in &facilitators {
        let kp = Keypair::derive(SEED, id);
        net.add_facilitator(FacilitatorState::new(
            id.clone(),
            kp,
            Behavior::Honest,
            SEED,
        ));
    }
    World {
        net,
        publisher,
        facilitators,
        params: CodingParams::new(k, n).unwrap(),
    }
}

impl World {
    fn session(&self, file: &[u8], price: Amount, payout: Amount) -> PublisherSession {
        PublisherSession::new(
            self.publisher.clone(),
            Keypair::derive(SEED, &self.publisher),
            "demo",
            file.to_vec(),
            self.params,
            price,
            payout,
            self.facilitators.clone(),
        )
        .unwrap()
    }

    fn client(
        &self,
        name: &str,
        uri: crate::crypto::Uri,
        strategy: FetchStrategy,
        seed: u64,
    ) -> ClientSession {
        let (id, kp) = party(name);
        ClientSession::new(id, kp, uri, strategy, seed)
    }

    fn publish(&mut self, file: &[u8]) -> crate::crypto::Uri {
        let price = Amount::whole(self.params.n() as i64);
        let session = self.session(file, price, Amount::whole(1));
        self.net.publish(&session).unwrap()
    }
}

fn file12() -> Vec<u8> {
    b"hello world!".to_vec()
}

#[test]
fn honest_upload_stores_one_chunk_each() {
    let mut w = world(4, 6);
    let uri = w.publish(&file12());
    assert_eq!(
        w.net.ledger.content(&uri).unwrap().status,
        ContentStatus::Available
    );
    let record = w.net.ledger.content(&uri).unwrap().clone();
    for (i, id) in w.facilitators.iter().enumerate() {
        let f = w.net.facilitator(id).unwrap();
        assert_eq!(f.stored(&uri).unwrap().digest(), record.hash_list[i]);
        assert_eq!(f.pending_count(), 0);
    }
    assert!(record.complaint_set.is_empty());
    // Six uploads, nothing else.
    assert_eq!(w.net.log().len(), 6);
    assert!(w.net.log().iter().all(|r| r.kind == "chunk_upload"));
}

#[test]
fn lazy_honest_purchase_fetches_exactly_k() {
    let mut w = world(4, 6);
    let uri = w.publish(&file12());
    let mut client = w.client("alice", uri, FetchStrategy::Lazy, 1);
    let file = w.net.purchase(&mut client).unwrap();
    assert_eq!(file, file12());
    assert_eq!(client.contacted(), 4);
    let requests = w
        .net
        .log()
        .iter()
        .filter(|r| r.kind == "chunk_request")
        .count();
    assert_eq!(requests, 4);
}

#[test]
fn aggressive_contacts_all() {
    let mut w = world(4, 6);
    let uri = w.publish(&file12());
    let mut client = w.client("alice", uri, FetchStrategy::Aggressive, 1);
    assert_eq!(w.net.purchase(&mut client).unwrap(), file12());
    assert_eq!(client.contacted(), 6);
}

fn publish_corrupted(w: &mut World, positions: &[usize]) -> crate::crypto::Uri {
    let session = w.session(&file12(), Amount::whole(6), Amount::whole(1));
    let mut prepared = session.prepare().unwrap();
    for &i in positions {
        prepared.corrupt(i);
    }
    w.net.publish_prepared(&session, &prepared).unwrap()
}

#[test]
fn one_corrupted_chunk_is_complained_about() {
    let mut w = world(4, 6);
    let uri = publish_corrupted(&mut w, &[2]);
    let record = w.net.ledger.content(&uri).unwrap();
    assert_eq!(
        record.complaint_set.iter().collect::<Vec<_>>(),
        vec![&w.facilitators[2]]
    );
    assert_eq!(record.status, ContentStatus::Available);
    assert!(w
        .net
        .facilitator(&w.facilitators[2])
        .unwrap()
        .stored(&uri)
        .is_none());
    // Still purchasable from the other five.
    let mut client = w.client("alice", uri, FetchStrategy::Lazy, 3);
    assert_eq!(w.net.purchase(&mut client).unwrap(), file12());
}

#[test]
fn three_corrupted_chunks_make_content_unavailable() {
    let mut w = world(4, 6);
    let uri = publish_corrupted(&mut w, &[0, 3, 5]);
    let record = w.net.ledger.content(&uri).unwrap();
    assert_eq!(record.complaint_set.len(), 3);
    assert_eq!(record.status, ContentStatus::Unavailable);
    let mut client = w.client("alice", uri, FetchStrategy::Lazy, 3);
    assert_eq!(
        w.net.purchase(&mut client),
        Err(ActorError::Ledger(LedgerError::ContentUnavailable))
    );
}

#[test]
fn upload_verification_outcomes() {
    let w = world(4, 6);
    let session = w.session(&file12(), Amount::whole(6), Amount::whole(1));
    let prepared = session.prepare().unwrap();
    let (id, kp) = party("f0");
    let mut f = FacilitatorState::new(id, kp, Behavior::Honest, 0);
    let key = prepared.key_map[&w.facilitators[0]];
    let chunk = prepared.chunks[0].clone();
    let hl = prepared.hash_list.clone();

    assert_eq!(
        f.on_upload(prepared.uri, chunk.clone(), Ok((key, hl.clone())), 0),
        UploadOutcome::Stored
    );

    // Hash not listed.
    let mut bad = chunk.clone();
    bad.ciphertext[3] ^= 0x80;
    assert!(matches!(
        f.on_upload(prepared.uri, bad, Ok((key, hl.clone())), 0),
        UploadOutcome::Complain(_)
    ));

    // Decrypts under the listed key, but the key is not the hash of the plaintext.
    let other = ConvergentKey(hash(b"other").0);
    let cross = encrypt_with_key(b"some plaintext", &other);
    let listed = vec![cross.digest()];
    assert!(matches!(
        f.on_upload(prepared.uri, cross, Ok((other, listed)), 0),
        UploadOutcome::Complain(_)
    ));

    assert_eq!(
        f.on_upload(
            prepared.uri,
            chunk.clone(),
            Err(LedgerError::NotAFacilitatorForContent),
            0
        ),
        UploadOutcome::Dropped
    );
}

#[test]
fn unlisted_upload_waits_for_listing_then_expires() {
    let w = world(4, 6);
    let session = w.session(&file12(), Amount::whole(6), Amount::whole(1));
    let prepared = session.prepare().unwrap();
    let (id, kp) = party("f1");
    let mut f = FacilitatorState::new(id, kp, Behavior::Honest, 0);
    f.upload_timeout = 100;
    let keys = (
        prepared.key_map[&w.facilitators[1]],
        prepared.hash_list.clone(),
    );

    let out = f.on_upload(
        prepared.uri,
        prepared.chunks[1].clone(),
        Err(LedgerError::UnknownUri),
        10,
    );
    assert_eq!(out, UploadOutcome::Queued);
    assert_eq!(
        f.on_listing(prepared.uri, Err(LedgerError::UnknownUri)),
        Some(UploadOutcome::Queued)
    );
    assert_eq!(
        f.on_listing(prepared.uri, Ok(keys.clone())),
        Some(UploadOutcome::Stored)
    );
    assert_eq!(f.on_listing(prepared.uri, Ok(keys)), None);

    let mut g = FacilitatorState::new(
        PartyId::new("g"),
        Keypair::derive(0, &PartyId::new("g")),
        Behavior::Honest,
        0,
    );
    g.upload_timeout = 100;
    g.on_upload(
        prepared.uri,
        prepared.chunks[1].clone(),
        Err(LedgerError::UnknownUri),
        10,
    );
    assert!(g.expire(109).is_empty());
    assert_eq!(g.expire(110), vec![prepared.uri]);
    assert_eq!(g.pending_count(), 0);
}

#[test]
fn unreachable_facilitator_aborts_upload_before_listing() {
    let mut w = world(4, 6);
    w.net.set_unreachable(w.facilitators[4].clone(), true);
    let session = w.session(&file12(), Amount::whole(6), Amount::whole(1));
    let err = w.net.publish(&session).unwrap_err();
    assert_eq!(
        err,
        ActorError::UploadIncomplete(vec![w.facilitators[4].clone()])
    );
    assert!(w
        .net
        .ledger
        .content(&session.prepare().unwrap().uri)
        .is_none());
}

#[test]
fn publisher_session_validation() {
    let w = world(4, 6);
    let (id, kp) = party("pub");
    let mk = |file: Vec<u8>, price: Amount, ids: Vec<PartyId>| {
        PublisherSession::new(
            id.clone(),
            kp.clone(),
            "x",
            file,
            w.params,
            price,
            Amount::whole(1),
            ids,
        )
    };
    assert!(mk(vec![], Amount::whole(6), w.facilitators.clone()).is_err());
    assert!(mk(vec![1], Amount::whole(5), w.facilitators.clone()).is_err());
    assert!(mk(vec![1], Amount::whole(6), w.facilitators[..5].to_vec()).is_err());
    let mut dup = w.facilitators.clone();
    dup[5] = dup[0].clone();
    assert!(mk(vec![1], Amount::whole(6), dup).is_err());
    assert!(mk(vec![1], Amount::whole(6), w.facilitators.clone()).is_ok());
}

#[test]
fn two_faulty_of_six_still_deliver() {
    for strategy in [FetchStrategy::Lazy, FetchStrategy::Aggressive] {
        for a in Behavior::FAULTY {
            for b in Behavior::FAULTY {
                let mut w = world(4, 6);
                let uri = w.publish(&file12());
                w.net.set_behavior(&w.facilitators[1].clone(), a);
                w.net.set_behavior(&w.facilitators[4].clone(), b);
                let mut client = w.client("alice", uri, strategy, 5);
                assert_eq!(
                    w.net.purchase(&mut client).unwrap(),
                    file12(),
                    "{strategy} {a} {b}"
                );
                assert!(client.contacted() <= 6);
            }
        }
    }
}

#[test]
fn three_faulty_of_six_fail_delivery() {
    let mut w = world(4, 6);
    let uri = w.publish(&file12());
    for (i, b) in [
        (0, Behavior::Crash),
        (2, Behavior::Garbage),
        (5, Behavior::Refuse),
    ] {
        w.net.set_behavior(&w.facilitators[i].clone(), b);
    }
    let mut client = w.client("alice", uri, FetchStrategy::Lazy, 5);
    assert_eq!(
        w.net.purchase(&mut client),
        Err(ActorError::DeliveryFailed {
            valid: 3,
            needed: 4,
            contacted: 6
        })
    );
}

#[test]
fn every_facilitator_is_paid_including_faulty() {
    let mut w = world(4, 6);
    let uri = w.publish(&file12());
    w.net
        .set_behavior(&w.facilitators[0].clone(), Behavior::Crash);
    w.net
        .set_behavior(&w.facilitators[3].clone(), Behavior::Garbage);
    let before: Vec<Amount> = w
        .facilitators
        .iter()
        .map(|f| w.net.ledger.balance(f))
        .collect();
    let supply = w.net.ledger.total_supply();
    let mut client = w.client("alice", uri, FetchStrategy::Aggressive, 8);
    w.net.purchase(&mut client).unwrap();
    for (f, b) in w.facilitators.iter().zip(before) {
        assert_eq!(w.net.ledger.balance(f), b + Amount::whole(1));
    }
    assert_eq!(w.net.ledger.balance(&w.publisher), Amount::ZERO);
    assert_eq!(w.net.ledger.total_supply(), supply);
}

#[test]
fn no_service_without_payment() {
    let mut w = world(4, 6);
    let uri = w.publish(&file12());
    let (mallory, _) = party("bob");
    let forged = crate::ledger::ReqId::parse("00112233445566778899aabbccddeeff").unwrap();
    for f in w.facilitators.clone() {
        let reply = w.net.request_chunk(&mallory, &f, uri, forged.clone());
        assert!(
            matches!(reply, Some(Message::Denial { ref reason, .. }) if reason == "PaymentNotVerified")
        );
    }
    let mut client = w.client("alice", uri, FetchStrategy::Aggressive, 2);
    w.net.purchase(&mut client).unwrap();
    // Reusing a paid req_id for another uri does not help either.
    let other = w.publish(b"another file entirely");
    let reply = w.net.request_chunk(
        &mallory,
        &w.facilitators[0].clone(),
        other,
        client.req_id.clone(),
    );
    assert!(matches!(reply, Some(Message::Denial { .. })));
    for serve in w.net.serves() {
        if serve.behavior == Behavior::Honest {
            assert!(w.net.ledger.is_payment_done(&serve.uri, &serve.req_id));
            assert!(serve.paid);
        }
    }
    assert_eq!(w.net.serves().len(), 6);
}

#[test]
fn garbage_reply_fails_client_check_and_is_deterministic() {
    let mut w = world(4, 6);
    let uri = w.publish(&file12());
    let f0 = w.facilitators[0].clone();
    w.net.set_behavior(&f0, Behavior::Garbage);
    let req = crate::ledger::ReqId::parse("0123456789abcdef0123456789abcdef").unwrap();
    let a = w
        .net
        .request_chunk(&PartyId::new("x"), &f0, uri, req.clone());
    let b = w.net.request_chunk(&PartyId::new("x"), &f0, uri, req);
    assert_eq!(a, b);
    let Some(Message::ChunkResponse { chunk, .. }) = a else {
        panic!("garbage profile answers with bytes")
    };
    let record = w.net.ledger.content(&uri).unwrap();
    assert_eq!(
        chunk.ciphertext.len(),
        w.net
            .facilitator(&f0)
            .unwrap()
            .stored(&uri)
            .unwrap()
            .ciphertext
            .len()
    );
    assert!(!record.hash_list.contains(&chunk.digest()));
}

#[test]
fn underfunded_client_gets_ledger_error() {
    let mut w = world(4, 6);
    let uri = w.publish(&file12());
    let mut client = w.client("poor", uri, FetchStrategy::Lazy, 1);
    assert_eq!(
        w.net.purchase(&mut client),
        Err(ActorError::Ledger(LedgerError::InsufficientFunds))
    );
    assert_eq!(client.contacted(), 0);
}

#[test]
fn late_and_foreign_replies_are_ignored() {
    let w = world(2, 3);
    let session = w.session(&file12(), Amount::whole(6), Amount::whole(1));
    let prepared = session.prepare().unwrap();
    let mut client = w.client("alice", prepared.uri, FetchStrategy::Aggressive, 4);
    let step = client.on_keys(
        prepared.key_map.clone(),
        prepared.hash_list.clone(),
        w.facilitators.clone(),
        w.params,
    );
    assert!(matches!(step, ClientStep::Send(ref v) if v.len() == 3));
    assert_eq!(
        client.on_response(&PartyId::new("stranger"), &prepared.chunks[0]),
        ClientStep::Wait
    );
    assert_eq!(
        client.on_response(&w.facilitators[0], &prepared.chunks[0]),
        ClientStep::Wait
    );
    // A duplicate of an already-held chunk from someone else does not count twice.
    assert_eq!(
        client.on_response(&w.facilitators[1], &prepared.chunks[0]),
        ClientStep::Wait
    );
    assert_eq!(client.valid_chunks(), 1);
    assert_eq!(
        client.on_response(&w.facilitators[2], &prepared.chunks[2]),
        ClientStep::Done(file12())
    );
    assert!(client.is_finished());
    assert_eq!(client.on_timeout(&w.facilitators[1]), ClientStep::Wait);
}

/// Every placement of `b` faults with every profile mix, for all valid
/// `(n, b, k)` with `n <= 8`.
#[test]
fn exhaustive_client_fairness() {
    let file: Vec<u8> = (0..97u8).collect();
    for n in 1..=8usize {
        for b in 0..n {
            for k in (b + 1)..n.saturating_sub(b) {
                let mut w = world(k, n);
                let uri = w.publish(&file);
                let mut seed = 0;
                for mask in 0u32..(1 << n) {
                    if mask.count_ones() as usize != b {
                        continue;
                    }
                    let faulty: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
                    for mix in 0..3usize.pow(b as u32) {
                        for (j, &i) in faulty.iter().enumerate() {
                            let profile = Behavior::FAULTY[(mix / 3usize.pow(j as u32)) % 3];
                            w.net.set_behavior(&w.facilitators[i].clone(), profile);
                        }
                        for strategy in [FetchStrategy::Lazy, FetchStrategy::Aggressive] {
                            seed += 1;
                            let mut client = w.client("alice", uri, strategy, seed);
                            let got = w.net.purchase(&mut client);
                            assert_eq!(
                                got.as_deref(),
                                Ok(&file[..]),
                                "n={n} b={b} k={k} mask={mask:b} mix={mix}"
                            );
                            assert!(client.contacted() <= n);
                        }
                    }
                    for &i in &faulty {
                        w.net
                            .set_behavior(&w.facilitators[i].clone(), Behavior::Honest);
                    }
                }
            }
        }
    }
}
