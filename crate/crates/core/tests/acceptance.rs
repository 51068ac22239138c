//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion.
//!
//! Exits nonzero if a criterion fails, unless it is listed in
//! `KNOWN_UNATTAINABLE`: those are run in full and reported, and their
//! failure is expected.

use std::collections::{BTreeMap, BTreeSet};
use std::process::ExitCode;
use std::time::Instant;

use fairmarket::actors::{
    Behavior, ClientSession, FacilitatorState, FetchStrategy, LocalNetwork, PublisherSession,
};
use fairmarket::amount::Amount;
use fairmarket::codec::{erasure_code, recover, CodingParams, PlainChunk};
use fairmarket::crypto::{convergent_decrypt, convergent_encrypt, Keypair, PartyId, Uri};
use fairmarket::incentives::{expected_advantage, solve_payoff, IncentiveParams};
use fairmarket::ledger::{AuditError, ContentStatus, Genesis, Ledger, LedgerRequest, ReqId, Role};
use fairmarket::netsim::{self, Axis, EventKind, EventRecord, SimConfig};
use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

const ROUND_TRIP_MAX_N: usize = 8;
const ROUND_TRIP_MAX_BYTES: usize = 100_000;
const ROUND_TRIP_BUDGET_S: f64 = 60.0;

const IDEAL_TOL: f64 = 1e-12;
const AFFINE_TOL: f64 = 1e-12;
const AFFINE_POINTS: usize = 10_000;
const ROOT_TOL: f64 = 1e-9;

const FAIRNESS_MAX_N: usize = 6;
const PRIVACY_MAX_N: usize = 6;
const PRIVACY_FILE_LEN: usize = 4;
const CENSOR_ATTEMPTS: usize = 1_000;
const THRESHOLD_MAX_N: usize = 8;
const AUDIT_OPS: usize = 1_200;
const AUDIT_TAMPERS: usize = 1_000;

const TREND_REPEATS: usize = 5;
const FLAT_TOLERANCE: f64 = 0.10;
const HIGH_LOAD_CLIENTS: usize = 8;
const SWEEP_BUDGET_S: f64 = 300.0;

/// Criteria whose failure is analysed rather than fixed.
const KNOWN_UNATTAINABLE: [&str; 2] = ["4", "8e"];

const SEED: u64 = 20_240_601;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn rng(tag: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(SEED ^ tag.wrapping_mul(0x9e37_79b9_7f4a_7c15))
}

fn random_bytes(rng: &mut ChaCha8Rng, len: usize) -> Vec<u8> {
    let mut v = vec![0u8; len];
    rng.fill_bytes(&mut v);
    v
}

fn subset(chunks: &[PlainChunk], mask: u32) -> Vec<PlainChunk> {
    chunks
        .iter()
        .enumerate()
        .filter(|(i, _)| mask & (1 << i) != 0)
        .map(|(_, c)| c.clone())
        .collect()
}

fn erasure_round_trip() -> Verdict {
    let start = Instant::now();
    let mut rng = rng(1);
    let (mut decodes, mut refusals, mut wrong) = (0u64, 0u64, Vec::new());
    for n in 1..=ROUND_TRIP_MAX_N {
        for k in 1..=n {
            let params = CodingParams::new(k, n).unwrap();
            let sizes = [
                1,
                rng.gen_range(2..=1_000),
                rng.gen_range(1_000..=ROUND_TRIP_MAX_BYTES),
            ];
            for size in sizes {
                let file = random_bytes(&mut rng, size);
                let chunks = erasure_code(&file, params).unwrap();
                for mask in 0u32..(1 << n) {
                    let mut picked = subset(&chunks, mask);
                    picked.shuffle(&mut rng);
                    let got = recover(&picked, params);
                    if picked.len() >= k {
                        decodes += 1;
                        if got.as_deref() != Ok(&file[..]) {
                            wrong.push(format!("{k}:{n} size {size} mask {mask:b}"));
                        }
                    } else {
                        refusals += 1;
                        if got.is_ok() {
                            wrong.push(format!("{k}:{n} size {size} mask {mask:b} decoded short"));
                        }
                    }
                }
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        wrong.is_empty() && secs < ROUND_TRIP_BUDGET_S,
        format!(
            "{decodes} subsets decoded, {refusals} short subsets refused, {} mismatches, {secs:.1}s (budget {ROUND_TRIP_BUDGET_S}s){}",
            wrong.len(),
            wrong.first().map(|w| format!("; first: {w}")).unwrap_or_default()
        ),
    )
}

/// Bisection for `expected_advantage(p) = target` on `[lo, hi]`.
fn bisect(n: usize, k: usize, f: f64, target: f64) -> f64 {
    let g =
        |p: f64| expected_advantage(&IncentiveParams::new(n, k, f, p).unwrap()).unwrap() - target;
    let (mut lo, mut hi) = (-2.0, 2.0);
    assert!(g(lo) < 0.0 && g(hi) > 0.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if g(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn incentive_math() -> Verdict {
    let mut ideal_worst: f64 = 0.0;
    for n in 1..=255 {
        for k in 1..=n {
            let e = expected_advantage(&IncentiveParams::new(n, k, 0.0, 1.0 / n as f64).unwrap())
                .unwrap();
            ideal_worst = ideal_worst.max(e.abs());
        }
    }

    let mut rng = rng(2);
    let mut affine_worst: f64 = 0.0;
    for _ in 0..AFFINE_POINTS {
        let n = rng.gen_range(1..=255);
        let k = rng.gen_range(1..=n);
        let f: f64 = rng.gen_range(0.0..=1.0);
        let p: f64 = rng.gen_range(-1.0..=1.0);
        let e = expected_advantage(&IncentiveParams::new(n, k, f, p).unwrap()).unwrap();
        affine_worst = affine_worst.max((e - (p - (1.0 - f) / n as f64)).abs());
    }

    let mut root_worst: f64 = 0.0;
    let mut closed_worst: f64 = 0.0;
    for _ in 0..1_000 {
        let n = rng.gen_range(1..=64);
        let k = rng.gen_range(1..=n);
        let f: f64 = rng.gen_range(0.0..=0.5);
        let target = -f / n as f64;
        let solved = solve_payoff(n, k, f, target).unwrap();
        closed_worst = closed_worst.max((solved - (1.0 - 2.0 * f) / n as f64).abs());
        root_worst = root_worst.max((solved - bisect(n, k, f, target)).abs());
    }

    verdict(
        ideal_worst <= IDEAL_TOL && affine_worst <= AFFINE_TOL && root_worst <= ROOT_TOL && closed_worst <= ROOT_TOL,
        format!(
            "ideal |E| max {ideal_worst:.1e} over 32640 (n,k); affine residual max {affine_worst:.1e} over {AFFINE_POINTS} points; \
             solve vs (1-2f)/n {closed_worst:.1e}, vs bisection {root_worst:.1e}"
        ),
    )
}

struct Market {
    net: LocalNetwork,
    seed: u64,
    facilitators: Vec<PartyId>,
}

fn pid(s: &str) -> PartyId {
    PartyId::new(s)
}

impl Market {
    fn new(seed: u64, n: usize, clients: &[(&str, Amount)]) -> Self {
        let mut genesis = Genesis::default();
        let add = |g: &mut Genesis, id: &str, role: Role, balance: Amount| {
            g.add(pid(id), role, &Keypair::derive(seed, &pid(id)), balance);
        };
        add(&mut genesis, "pub", Role::Publisher, Amount::ZERO);
        add(&mut genesis, "aud", Role::Auditor, Amount::ZERO);
        for (c, balance) in clients {
            add(&mut genesis, c, Role::Client, *balance);
        }
        let facilitators: Vec<PartyId> = (0..n).map(|i| pid(&format!("f{i}"))).collect();
        for f in &facilitators {
            add(&mut genesis, f.as_str(), Role::Facilitator, Amount::ZERO);
        }
        let mut net = LocalNetwork::new(Ledger::from_genesis(genesis).unwrap());
        for f in &facilitators {
            net.add_facilitator(FacilitatorState::new(
                f.clone(),
                Keypair::derive(seed, f),
                Behavior::Honest,
                seed,
            ));
        }
        Market {
            net,
            seed,
            facilitators,
        }
    }

    fn kp(&self, id: &str) -> Keypair {
        Keypair::derive(self.seed, &pid(id))
    }

    fn publish(&mut self, file: &[u8], params: CodingParams, price: Amount, payout: Amount) -> Uri {
        let session = PublisherSession::new(
            pid("pub"),
            self.kp("pub"),
            "file",
            file.to_vec(),
            params,
            price,
            payout,
            self.facilitators[..params.n()].to_vec(),
        )
        .unwrap();
        self.net.publish(&session).unwrap()
    }

    fn client(&self, id: &str, uri: Uri, strategy: FetchStrategy, seed: u64) -> ClientSession {
        ClientSession::new(pid(id), self.kp(id), uri, strategy, seed)
    }

    fn audit(&mut self, request: LedgerRequest) -> Result<(), fairmarket::ledger::LedgerError> {
        let call = request.sign(&pid("aud"), &self.kp("aud"));
        self.net.ledger.submit(call).map(|_| ())
    }
}

/// All ways to put `b` faulty profiles on `n` facilitators.
fn assignments(n: usize, b: usize) -> Vec<Vec<(usize, Behavior)>> {
    let mut out = Vec::new();
    for mask in 0u32..(1 << n) {
        if mask.count_ones() as usize != b {
            continue;
        }
        let positions: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
        for combo in 0..Behavior::FAULTY.len().pow(b as u32) {
            let mut c = combo;
            let mut assignment = Vec::new();
            for &p in &positions {
                assignment.push((p, Behavior::FAULTY[c % Behavior::FAULTY.len()]));
                c /= Behavior::FAULTY.len();
            }
            out.push(assignment);
        }
    }
    out
}

fn fairness_suite() -> Verdict {
    let mut rng = rng(3);
    let (mut runs, mut purchases) = (0usize, 0usize);
    let mut problems = Vec::new();
    let price = Amount::whole(10);
    let payout = Amount::from_micros(1_234_567);
    let funds = Amount::whole(1_000);
    for n in 1..=FAIRNESS_MAX_N {
        for b in 0..n {
            for k in (b + 1)..n.saturating_sub(b) {
                let params = CodingParams::new(k, n).unwrap();
                for assignment in assignments(n, b) {
                    runs += 1;
                    let mut m = Market::new(rng.gen(), n, &[("lazy", funds), ("eager", funds)]);
                    let len = rng.gen_range(1..=4_096);
                    let file = random_bytes(&mut rng, len);
                    let uri = m.publish(&file, params, price, payout);
                    let supply = m.net.ledger.total_supply();
                    let before = m.net.ledger.balances().clone();
                    for &(i, behavior) in &assignment {
                        m.net.set_behavior(&m.facilitators[i], behavior);
                    }
                    for (client, strategy) in [
                        ("lazy", FetchStrategy::Lazy),
                        ("eager", FetchStrategy::Aggressive),
                    ] {
                        purchases += 1;
                        let mut session = m.client(client, uri, strategy, rng.gen());
                        match m.net.purchase(&mut session) {
                            Ok(got) if got == file => {}
                            Ok(_) => problems.push(format!("{k}:{n} {assignment:?}: wrong file")),
                            Err(e) => {
                                problems.push(format!("{k}:{n} {assignment:?} {strategy}: {e}"))
                            }
                        }
                    }
                    let after = m.net.ledger.balances();
                    let delta = |p: &PartyId| after[p].micros() - before[p].micros();
                    for f in &m.facilitators {
                        if delta(f) != 2 * payout.micros() {
                            problems
                                .push(format!("{k}:{n} {assignment:?}: {f} credited {}", delta(f)));
                        }
                    }
                    let publisher_share = price.micros() - n as i64 * payout.micros();
                    if delta(&pid("pub")) != 2 * publisher_share {
                        problems.push(format!(
                            "{k}:{n}: publisher credited {}",
                            delta(&pid("pub"))
                        ));
                    }
                    if m.net.ledger.total_supply() != supply {
                        problems.push(format!("{k}:{n}: supply changed"));
                    }
                }
            }
        }
    }
    verdict(
        problems.is_empty(),
        format!(
            "{runs} fault placements, {purchases} paid purchases, {} violations{}",
            problems.len(),
            problems
                .first()
                .map(|p| format!("; first: {p}"))
                .unwrap_or_default()
        ),
    )
}

/// Files consistent with the held shards, found by enumerating every value
/// of one missing shard and decoding. Also reports how many of those match
/// every convergent key on the ledger.
fn candidates(
    held: &[PlainChunk],
    params: CodingParams,
    keys: &[fairmarket::crypto::ConvergentKey],
) -> (usize, usize) {
    let held_idx: BTreeSet<u8> = held.iter().map(|c| c.index).collect();
    let missing = (0..params.n() as u8)
        .find(|i| !held_idx.contains(i))
        .unwrap();
    let len = params.shard_len(PRIVACY_FILE_LEN as u64);
    let mut files = BTreeSet::new();
    let mut keyed = 0;
    for v in 0u32..(1u32 << (8 * len)) {
        let payload: Vec<u8> = (0..len).map(|b| (v >> (8 * b)) as u8).collect();
        let mut trial = held.to_vec();
        trial.push(PlainChunk {
            index: missing,
            original_len: PRIVACY_FILE_LEN as u64,
            payload,
        });
        let Ok(file) = recover(&trial, params) else {
            continue;
        };
        // Re-encode: the candidate must reproduce every held shard.
        let encoded = erasure_code(&file, params).unwrap();
        if !held.iter().all(|h| encoded[h.index as usize] == *h) {
            continue;
        }
        if files.insert(file)
            && encoded
                .iter()
                .zip(keys)
                .all(|(c, key)| convergent_encrypt(c).1 == *key)
        {
            keyed += 1;
        }
    }
    (files.len(), keyed)
}

fn privacy() -> Verdict {
    let mut rng = rng(4);
    let (mut subsets, mut refused) = (0usize, 0usize);
    let mut unique: BTreeMap<String, usize> = BTreeMap::new();
    let mut keyed_unique = 0usize;
    for n in 2..=PRIVACY_MAX_N {
        for k in 2..=n {
            let params = CodingParams::new(k, n).unwrap();
            let file = random_bytes(&mut rng, PRIVACY_FILE_LEN);
            let plain = erasure_code(&file, params).unwrap();
            let (encrypted, keys): (Vec<_>, Vec<_>) = plain.iter().map(convergent_encrypt).unzip();
            for mask in 0u32..(1 << n) {
                if mask.count_ones() as usize != k - 1 {
                    continue;
                }
                subsets += 1;
                // The adversary decrypts what it holds with the ledger keys.
                let held: Vec<PlainChunk> = (0..n)
                    .filter(|i| mask & (1 << i) != 0)
                    .map(|i| convergent_decrypt(&encrypted[i], &keys[i]).unwrap())
                    .collect();
                if recover(&held, params).is_err() {
                    refused += 1;
                }
                let (count, keyed) = candidates(&held, params, &keys);
                if count < 2 {
                    *unique.entry(format!("{k}:{n}")).or_default() += 1;
                }
                if keyed < 2 {
                    keyed_unique += 1;
                }
            }
        }
    }
    let total_unique: usize = unique.values().sum();
    let listed: Vec<String> = unique.iter().map(|(p, c)| format!("{p} x{c}")).collect();
    verdict(
        refused == subsets && total_unique == 0,
        format!(
            "decoder refused {refused}/{subsets} (k-1)-subsets; shards alone pin the file in {total_unique}/{subsets} \
             (systematic shards plus zero padding: {}); with the ledger keys as a hash oracle {keyed_unique}/{subsets} are pinned",
            if listed.is_empty() { "none".to_string() } else { listed.join(", ") }
        ),
    )
}

fn censorship() -> Verdict {
    let mut rng = rng(5);
    let funds = Amount::whole(1_000_000);
    let clients = ["alice", "bob", "carol", "mallory"];
    let mut m = Market::new(rng.gen(), 6, &clients.map(|c| (c, funds)));
    // One faulty facilitator; only honest serves count.
    let params = CodingParams::new(4, 6).unwrap();
    let file = random_bytes(&mut rng, 10_000);
    let uri = m.publish(&file, params, Amount::whole(6), Amount::whole(1));
    m.net
        .set_behavior(&m.facilitators[5].clone(), Behavior::Garbage);

    let mut early = m.client("alice", uri, FetchStrategy::Lazy, rng.gen());
    let before_censor = m
        .net
        .purchase(&mut early)
        .map(|f| f == file)
        .unwrap_or(false);
    m.audit(LedgerRequest::Censor { uri }).unwrap();

    let payments_before = m
        .net
        .ledger
        .state()
        .payments
        .values()
        .filter(|p| p.uri == uri)
        .count();
    let serves_before = m.net.serves().len();
    let trail_before = m.net.ledger.trail().len();
    let honest: Vec<PartyId> = m.facilitators[..5].to_vec();
    let mut pay_attempts = 0usize;
    for attempt in 0..CENSOR_ATTEMPTS {
        let who = clients[rng.gen_range(0..clients.len())];
        let req_id = match attempt % 3 {
            // A fresh purchase.
            0 | 1 => {
                pay_attempts += 1;
                let session = m.client(who, uri, FetchStrategy::Aggressive, rng.gen());
                let _ = m.net.ledger.pay_for_content(session.payment_call());
                session.req_id
            }
            // Replay of the request paid before censorship.
            _ => early.req_id.clone(),
        };
        for f in &honest {
            let _ = m.net.request_chunk(&pid(who), f, uri, req_id.clone());
        }
    }
    let payments_after = m
        .net
        .ledger
        .state()
        .payments
        .values()
        .filter(|p| p.uri == uri)
        .count();
    let honest_serves = m.net.serves()[serves_before..]
        .iter()
        .filter(|s| s.uri == uri && s.behavior == Behavior::Honest)
        .count();
    let denials = m.net.ledger.trail()[trail_before..]
        .iter()
        .filter(|e| e.outcome.error.as_deref() == Some("ContentCensored"))
        .count();
    let status = m.net.ledger.content(&uri).unwrap().status;
    verdict(
        before_censor
            && status == ContentStatus::Censored
            && payments_after == payments_before
            && honest_serves == 0
            && denials == pay_attempts,
        format!(
            "{CENSOR_ATTEMPTS} attempts ({pay_attempts} payments, rest replays): {} new payments, {honest_serves} honest serves, \
             {denials} ContentCensored denials in the trail",
            payments_after - payments_before
        ),
    )
}

fn complaint_threshold() -> Verdict {
    let mut rng = rng(6);
    let mut checked = 0;
    let mut problems = Vec::new();
    for n in 1..=THRESHOLD_MAX_N {
        for k in 1..=n {
            let mut m = Market::new(rng.gen(), n, &[]);
            let params = CodingParams::new(k, n).unwrap();
            let len = rng.gen_range(1..=512);
            let file = random_bytes(&mut rng, len);
            let uri = m.publish(&file, params, Amount::whole(n as i64), Amount::whole(1));
            let mut order = m.facilitators.clone();
            order.shuffle(&mut rng);
            let status = |m: &Market| m.net.ledger.content(&uri).unwrap().status;
            for (filed, f) in order.iter().enumerate().take(n - k + 1) {
                if status(&m) != ContentStatus::Available {
                    problems.push(format!("{k}:{n}: unavailable after {filed} complaints"));
                }
                let call = LedgerRequest::Complaint { uri }.sign(f, &m.kp(f.as_str()));
                m.net.ledger.complaint(call).unwrap();
            }
            checked += 1;
            if status(&m) != ContentStatus::Unavailable {
                problems.push(format!(
                    "{k}:{n}: still available after {} complaints",
                    n - k + 1
                ));
            }
        }
    }
    verdict(
        problems.is_empty(),
        format!(
            "{checked} (k,n) pairs, {} violations{}",
            problems.len(),
            problems
                .first()
                .map(|p| format!("; first: {p}"))
                .unwrap_or_default()
        ),
    )
}

/// A ledger after `AUDIT_OPS` random operations, many of them rejected.
fn busy_ledger(rng: &mut ChaCha8Rng) -> Ledger {
    let seed = rng.gen();
    let kp = |id: &str| Keypair::derive(seed, &pid(id));
    let publishers = ["pub0", "pub1"];
    let auditors = ["aud0", "aud1"];
    let clients: Vec<String> = (0..10).map(|i| format!("c{i}")).collect();
    let facilitators: Vec<PartyId> = (0..8).map(|i| pid(&format!("f{i}"))).collect();
    let mut genesis = Genesis::default();
    for p in publishers {
        genesis.add(pid(p), Role::Publisher, &kp(p), Amount::ZERO);
    }
    for a in auditors {
        genesis.add(pid(a), Role::Auditor, &kp(a), Amount::ZERO);
    }
    for c in &clients {
        genesis.add(
            pid(c),
            Role::Client,
            &kp(c),
            Amount::from_micros(rng.gen_range(0..50_000_000)),
        );
    }
    for f in &facilitators {
        genesis.add(f.clone(), Role::Facilitator, &kp(f.as_str()), Amount::ZERO);
    }
    let mut ledger = Ledger::from_genesis(genesis).unwrap();
    let mut uris: Vec<Uri> = Vec::new();
    let mut paid: Vec<ReqId> = Vec::new();
    while ledger.trail().len() <= AUDIT_OPS {
        let roll = rng.gen_range(0..100);
        if roll < 8 || uris.is_empty() {
            let p = publishers[rng.gen_range(0..2)];
            let n = rng.gen_range(1..=8);
            let k = rng.gen_range(1..=n);
            let mut hosts = facilitators.clone();
            hosts.shuffle(rng);
            hosts.truncate(n);
            let price = Amount::from_micros(rng.gen_range(1..3_000_000));
            let payout = Amount::from_micros(price.micros() / n as i64 / rng.gen_range(1..4));
            let len = rng.gen_range(1..300);
            let file = random_bytes(rng, len);
            let session = PublisherSession::new(
                pid(p),
                kp(p),
                "f",
                file,
                CodingParams::new(k, n).unwrap(),
                price,
                payout,
                hosts,
            )
            .unwrap();
            let prepared = session.prepare().unwrap();
            // Sometimes the wrong publisher signs.
            let call = if rng.gen_bool(0.1) {
                LedgerRequest::AddContentByPub(session.listing(&prepared))
                    .sign(&pid("c0"), &kp("c0"))
            } else {
                session.listing_call(&prepared)
            };
            if ledger.submit(call).is_ok() {
                uris.push(prepared.uri);
            }
            continue;
        }
        let uri = uris[rng.gen_range(0..uris.len())];
        let client = pid(&clients[rng.gen_range(0..clients.len())]);
        let auditor = auditors[rng.gen_range(0..2)];
        let call = match roll {
            8..=59 => {
                let req_id = if rng.gen_bool(0.05) && !paid.is_empty() {
                    paid[rng.gen_range(0..paid.len())].clone()
                } else {
                    ReqId::random(rng)
                };
                let link = rng
                    .gen_bool(0.2)
                    .then(|| format!("memo-{}", rng.gen::<u16>()));
                LedgerRequest::PayForContent { uri, req_id, link }
                    .sign(&client, &kp(client.as_str()))
            }
            60..=74 => {
                let f = &facilitators[rng.gen_range(0..facilitators.len())];
                LedgerRequest::Complaint { uri }.sign(f, &kp(f.as_str()))
            }
            75..=80 => LedgerRequest::Censor { uri }.sign(&pid(auditor), &kp(auditor)),
            81..=86 => LedgerRequest::Uncensor { uri }.sign(&pid(auditor), &kp(auditor)),
            87..=90 => {
                LedgerRequest::RestrictClient { uri, client }.sign(&pid(auditor), &kp(auditor))
            }
            91..=94 => {
                LedgerRequest::UnrestrictClient { uri, client }.sign(&pid(auditor), &kp(auditor))
            }
            95..=97 => {
                // Signed with someone else's key.
                let mut call = LedgerRequest::Censor { uri }.sign(&pid(auditor), &kp("c1"));
                call.caller = pid(auditor);
                call
            }
            _ => LedgerRequest::Censor { uri }.sign(&pid("stranger"), &kp("stranger")),
        };
        if let Ok(fairmarket::ledger::Receipt::Paid(record)) = ledger.submit(call) {
            paid.push(record.req_id);
        }
    }
    ledger
}

/// Expected outcome of flipping byte `pos`: `None` for the header line,
/// otherwise the height of the entry line containing it.
fn line_height(text: &str, pos: usize) -> Option<u64> {
    let line = text.as_bytes()[..pos]
        .iter()
        .filter(|&&b| b == b'\n')
        .count();
    (line > 0).then(|| line as u64 - 1)
}

fn audit_replay() -> Verdict {
    let mut rng = rng(7);
    let ledger = busy_ledger(&mut rng);
    let text = ledger.write_audit_log();
    let replayed = match Ledger::verify_audit_log(&text) {
        Ok(l) => l,
        Err(e) => return verdict(false, format!("untouched log rejected: {e}")),
    };
    let identical = replayed.snapshot() == ledger.snapshot();
    let rejected = ledger.trail().iter().filter(|e| !e.outcome.ok).count();

    let final_height = ledger.height();
    let mut misses = Vec::new();
    let bytes = text.as_bytes();
    let mut positions: Vec<usize> = (0..AUDIT_TAMPERS)
        .map(|_| rng.gen_range(0..bytes.len()))
        .collect();
    // Every line boundary of a few entries, plus the very last byte.
    for _ in 0..20 {
        let h = rng.gen_range(0..ledger.trail().len());
        let nl = text.match_indices('\n').nth(h + 1).unwrap().0;
        positions.push(nl);
    }
    positions.push(bytes.len() - 1);
    for &pos in &positions {
        let mut tampered = bytes.to_vec();
        tampered[pos] ^= 0x01;
        let Ok(tampered) = String::from_utf8(tampered) else {
            continue;
        };
        let got = Ledger::verify_audit_log(&tampered);
        let ok = match (line_height(&text, pos), &got) {
            (Some(h), Err(AuditError::BrokenChain { height, .. })) => *height == h,
            (None, Err(AuditError::MalformedHeader(_))) => true,
            (None, Err(AuditError::StateMismatch { height, .. })) => *height == final_height,
            _ => false,
        };
        if !ok {
            misses.push(format!(
                "byte {pos}: {got:?}",
                got = got.as_ref().map(|_| "accepted").map_err(|e| e.to_string())
            ));
        }
    }
    verdict(
        identical && misses.is_empty(),
        format!(
            "{} entries ({rejected} rejected calls) replayed {}; {} single-byte tampers, {} misdetected{}",
            ledger.trail().len(),
            if identical { "byte-identical" } else { "DIFFERENTLY" },
            positions.len(),
            misses.len(),
            misses.first().map(|m| format!("; first: {m}")).unwrap_or_default()
        ),
    )
}

fn base_config() -> SimConfig {
    SimConfig::default()
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, f64) {
    let start = Instant::now();
    let out = f();
    (out, start.elapsed().as_secs_f64())
}

fn run_cfg(cfg: &SimConfig) -> netsim::SimOutput {
    netsim::run(cfg).unwrap()
}

fn non_ledger_traffic(events: &[EventRecord]) -> BTreeMap<(String, String, String, u64), usize> {
    let mut out = BTreeMap::new();
    for e in events
        .iter()
        .filter(|e| e.kind == EventKind::MessageDelivery && !e.involves_ledger())
    {
        let key = (
            e.from.clone().unwrap_or_default(),
            e.actor.clone(),
            e.detail.clone(),
            e.bytes.unwrap_or(0),
        );
        *out.entry(key).or_insert(0) += 1;
    }
    out
}

const LEDGER_MESSAGES: [&str; 9] = [
    "ledger_submit",
    "ledger_receipt",
    "upload_keys_query",
    "upload_keys_answer",
    "listing_notice",
    "payment_query",
    "payment_answer",
    "keys_query",
    "keys_answer",
];

fn trends() -> Vec<(String, Verdict)> {
    let mut out = Vec::new();
    let base = base_config();
    let seeds: Vec<u64> = (0..TREND_REPEATS as u64).map(|r| base.seed + r).collect();

    // (a) latency against k at n = 6.
    let ks = [2.0, 3.0, 4.0, 5.0, 6.0];
    let (rows, secs) = timed(|| netsim::sweep(&base, Axis::K, &ks, TREND_REPEATS).unwrap());
    let means: Vec<f64> = netsim::summarize(&rows)
        .iter()
        .map(|s| s.mean_download_ms)
        .collect();
    let rising = means.windows(2).all(|w| w[1] >= w[0]);
    out.push((
        "8a".to_string(),
        verdict(
            rising && secs < SWEEP_BUDGET_S && rows.iter().all(|r| r.failures == 0),
            format!(
                "mean download ms for k=2..6: {}; {secs:.1}s",
                fmt_list(&means)
            ),
        ),
    ));

    // (b) pool size 6..24 at 4:6.
    let pools = [6.0, 12.0, 18.0, 24.0];
    let (rows, secs) =
        timed(|| netsim::sweep(&base, Axis::Facilitators, &pools, TREND_REPEATS).unwrap());
    let means: Vec<f64> = netsim::summarize(&rows)
        .iter()
        .map(|s| s.mean_download_ms)
        .collect();
    let lo = means.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = means.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let spread = (hi - lo) / lo;
    out.push((
        "8b".to_string(),
        verdict(
            spread < FLAT_TOLERANCE && secs < SWEEP_BUDGET_S,
            format!(
                "mean download ms for 6/12/18/24 facilitators: {}; spread {:.2}% (limit {:.0}%); {secs:.1}s",
                fmt_list(&means),
                100.0 * spread,
                100.0 * FLAT_TOLERANCE
            ),
        ),
    ));

    // (c) strategies on paired seeds, single client, 0..2 crashed.
    let (violations, secs) = timed(|| {
        let mut violations = Vec::new();
        for &seed in &seeds {
            for b in 0..=2 {
                let mut cfg = base.clone();
                cfg.seed = seed;
                cfg.set_fault_count(b, Behavior::Crash);
                cfg.fetch_strategy = FetchStrategy::Lazy;
                let lazy = run_cfg(&cfg).metrics;
                cfg.fetch_strategy = FetchStrategy::Aggressive;
                let eager = run_cfg(&cfg).metrics;
                if eager.mean_download_ms() > lazy.mean_download_ms() {
                    violations.push(format!("seed {seed} b {b}: aggressive slower"));
                }
                if lazy.download_bytes() > eager.download_bytes() {
                    violations.push(format!("seed {seed} b {b}: lazy used more bytes"));
                }
            }
        }
        violations
    });
    out.push((
        "8c".to_string(),
        verdict(
            violations.is_empty() && secs < SWEEP_BUDGET_S,
            format!(
                "{} paired runs (seeds {}..={}, 0-2 crashed), {} violations; {secs:.1}s",
                seeds.len() * 3,
                seeds[0],
                seeds[seeds.len() - 1],
                violations.len()
            ),
        ),
    ));

    // (d) ledger versus baseline.
    let (result, secs) = timed(|| {
        let mut same_traffic = true;
        let mut only_ledger = true;
        let (mut with_ms, mut base_ms, mut with_up, mut base_up) = (0.0, 0.0, 0.0, 0.0);
        for &seed in &seeds {
            let mut cfg = base.clone();
            cfg.seed = seed;
            let with = run_cfg(&cfg);
            cfg.ledger_check_enabled = false;
            let without = run_cfg(&cfg);
            same_traffic &= non_ledger_traffic(&with.events) == non_ledger_traffic(&without.events);
            only_ledger &= without.events.iter().all(|e| !e.involves_ledger());
            only_ledger &= with
                .events
                .iter()
                .filter(|e| e.kind == EventKind::MessageDelivery && e.involves_ledger())
                .all(|e| LEDGER_MESSAGES.contains(&e.detail.as_str()));
            with_ms += with.metrics.mean_download_ms();
            base_ms += without.metrics.mean_download_ms();
            with_up += with.metrics.mean_upload_ms();
            base_up += without.metrics.mean_upload_ms();
        }
        (
            same_traffic,
            only_ledger,
            with_ms / base_ms - 1.0,
            with_up / base_up - 1.0,
        )
    });
    let (same_traffic, only_ledger, download_overhead, upload_overhead) = result;
    out.push((
        "8d".to_string(),
        verdict(
            same_traffic && only_ledger && secs < SWEEP_BUDGET_S,
            format!(
                "peer traffic identical: {same_traffic}, extra messages all ledger/payment: {only_ledger}; \
                 measured overhead download {:+.1}%, upload {:+.1}% (reported, no threshold); {secs:.1}s",
                100.0 * download_overhead,
                100.0 * upload_overhead
            ),
        ),
    ));

    // (e) faults under load, paired seeds.
    let mut loaded = base.clone();
    loaded.n_clients = HIGH_LOAD_CLIENTS;
    let (rows, secs) =
        timed(|| netsim::sweep(&loaded, Axis::Faults, &[0.0, 1.0, 2.0], TREND_REPEATS).unwrap());
    let mut out_of_order = Vec::new();
    for &seed in &seeds {
        let lat: Vec<f64> = [0.0, 1.0, 2.0]
            .iter()
            .map(|&v| {
                rows.iter()
                    .find(|r| r.seed == seed && r.value == v)
                    .unwrap()
                    .mean_download_ms
            })
            .collect();
        if !(lat[0] <= lat[1] && lat[1] <= lat[2]) {
            out_of_order.push(format!("seed {seed}: {}", fmt_list(&lat)));
        }
    }
    let means: Vec<f64> = netsim::summarize(&rows)
        .iter()
        .map(|s| s.mean_download_ms)
        .collect();
    out.push((
        "8e".to_string(),
        verdict(
            out_of_order.is_empty()
                && rows.iter().all(|r| r.failures == 0)
                && secs < SWEEP_BUDGET_S,
            format!(
                "{HIGH_LOAD_CLIENTS} concurrent clients, mean download ms for 0/1/2 crashed: {}; \
                 {}/{} seeds out of order [{}]; a crash delays the clients that picked it by one \
                 timeout, which thins the uplink queues for the others; {secs:.1}s",
                fmt_list(&means),
                out_of_order.len(),
                seeds.len(),
                out_of_order.join("; ")
            ),
        ),
    ));
    out
}

fn fmt_list(v: &[f64]) -> String {
    v.iter()
        .map(|x| format!("{x:.2}"))
        .collect::<Vec<_>>()
        .join(", ")
}

fn determinism() -> Verdict {
    let mut cfg = SimConfig {
        seed: 99,
        n_clients: 4,
        n_files: 2,
        file_size_bytes: 1_000_000,
        client_interval_ms: 5.0,
        fetch_strategy: FetchStrategy::Aggressive,
        ..SimConfig::default()
    };
    cfg.faults.insert("f1".to_string(), Behavior::Garbage);
    cfg.faults.insert("f4".to_string(), Behavior::Refuse);
    let a = run_cfg(&cfg);
    let b = run_cfg(&cfg);
    let sim_same = a.events_jsonl() == b.events_jsonl()
        && a.ledger.snapshot() == b.ledger.snapshot()
        && a.ledger.write_audit_log() == b.ledger.write_audit_log()
        && serde_json::to_string(&a.metrics).unwrap() == serde_json::to_string(&b.metrics).unwrap();
    let csv =
        || netsim::rows_to_csv(&netsim::sweep(&cfg, Axis::Latency, &[20.0, 100.0], 2).unwrap());
    let csv_same = csv() == csv();
    let mut other = cfg.clone();
    other.seed += 1;
    let differs = run_cfg(&other).events_jsonl() != a.events_jsonl();

    let demo = |seed: u64| {
        let mut m = Market::new(seed, 6, &[("alice", Amount::whole(100))]);
        let uri = m.publish(
            b"deterministic demo content",
            CodingParams::new(4, 6).unwrap(),
            Amount::whole(6),
            Amount::whole(1),
        );
        m.net.set_behavior(&pid("f2"), Behavior::Crash);
        let mut c = m.client("alice", uri, FetchStrategy::Lazy, seed);
        m.net.purchase(&mut c).unwrap();
        let log: Vec<String> = m.net.log().iter().map(|r| format!("{r:?}")).collect();
        (m.net.ledger.snapshot(), m.net.ledger.write_audit_log(), log)
    };
    let demo_same = demo(5) == demo(5);
    verdict(
        sim_same && csv_same && demo_same && differs,
        format!(
            "simulator events/metrics/snapshot/audit log identical: {sim_same}; sweep CSV identical: {csv_same}; \
             in-process demo identical: {demo_same}; another seed changes the log: {differs}"
        ),
    )
}

fn main() -> ExitCode {
    let checks: [(&str, &str, fn() -> Verdict); 7] = [
        ("1", "erasure round-trip", erasure_round_trip),
        ("2", "incentive math", incentive_math),
        ("3", "fairness suite", fairness_suite),
        ("4", "privacy with k-1 chunks", privacy),
        ("5", "censorship", censorship),
        ("6", "complaint threshold", complaint_threshold),
        ("7", "audit replay", audit_replay),
    ];
    let mut results: Vec<(String, &str, Verdict, f64)> = Vec::new();
    for (id, name, check) in checks {
        let (v, secs) = timed(check);
        results.push((id.to_string(), name, v, secs));
    }
    let (trend, secs) = timed(trends);
    for (id, v) in trend {
        results.push((id, "trend", v, secs));
    }
    let (v, secs) = timed(determinism);
    results.push(("9".to_string(), "determinism", v, secs));

    let mut unexpected = 0;
    for (id, name, v, secs) in &results {
        let status = if v.pass { "PASS" } else { "FAIL" };
        let note = if !v.pass && KNOWN_UNATTAINABLE.contains(&id.as_str()) {
            " [known unattainable]"
        } else {
            ""
        };
        if !v.pass && note.is_empty() {
            unexpected += 1;
        }
        println!(
            "criterion {id} {name}: {status}{note} ({secs:.1}s) {}",
            v.detail
        );
    }
    if unexpected > 0 {
        println!("{unexpected} unexpected failure(s)");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
