//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any failed. Set `UPDATE_FIXTURES=1` to rewrite the stored
//! fixtures from fresh runs.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use ward_mqtt::codec::write_remaining_length;
use ward_mqtt::{
    decode_packet, encode_packet, topic_matches, Broker, BrokerConfig, Decoded, Packet, Publish, QoS, TopicFilter,
    TopicName,
};
use ward_sim::harness::bench::bench_loopback;
use ward_sim::harness::config::{BenchParams, BrokerParams};
use ward_sim::harness::generate::{
    gen_fault_corpus, gen_null_lying, gen_part1, gen_reference_tally, gen_request_mix, golden_fetch,
};
use ward_sim::harness::metrics::Outcome;
use ward_sim::harness::{compute_metrics, run_logical};
use ward_sim::orchestrator::{
    self, Command, Event, ItemRequest, Modality, OrchestrationState, OrchestratorConfig, Phase, BEDSIDE, DOCK, PICKUP,
};
use ward_sim::scenario::TrialKind;
use ward_sim::taxonomy::{classify_trace, tally, ErrorCategory, ErrorRecord};
use ward_sim::trace::{Trace, TraceKind};
use ward_sim::{ScenarioScript, SimConfig};

const PART1_SEED: u64 = 42;
const PARTICIPANTS: usize = 16;
const GOLDEN_SEED: u64 = 7;
const FIXTURE_SEED: u64 = 11;

type Verdict = Result<String, String>;

fn check(cond: bool, detail: String) -> Verdict {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn within(limit: Duration, started: Instant, detail: String) -> Verdict {
    let took = started.elapsed();
    check(took < limit, format!("{detail}; {:.2} s of {} s", took.as_secs_f64(), limit.as_secs()))
}

// ---------------------------------------------------------------- fixtures

fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

fn updating() -> bool {
    std::env::var_os("UPDATE_FIXTURES").is_some()
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Reads a stored fixture, or writes `fresh` first when updating.
fn fixture(name: &str, fresh: &[u8]) -> Result<Vec<u8>, String> {
    let path = fixture_dir().join(name);
    if updating() {
        std::fs::create_dir_all(fixture_dir()).map_err(|e| e.to_string())?;
        std::fs::write(&path, fresh).map_err(|e| e.to_string())?;
    }
    std::fs::read(&path).map_err(|e| format!("{}: {e}", path.display()))
}

fn retain(trace: &Trace, keep: impl Fn(&ward_sim::trace::TraceEvent) -> bool) -> Trace {
    Trace { header: trace.header.clone(), events: trace.events.iter().filter(|e| keep(e)).cloned().collect() }
}

/// Everything except the raw thermal frames.
fn without_frames(trace: &Trace) -> Trace {
    retain(trace, |e| e.payload.get("bytes").is_none())
}

/// The events the metrics read.
fn metrics_view(trace: &Trace, bed: &str) -> Trace {
    let bedexit = format!("ward/{bed}/bedexit");
    retain(trace, |e| match e.kind {
        TraceKind::TrialStart
        | TraceKind::TrialEnd
        | TraceKind::StateTransition
        | TraceKind::PatientAction
        | TraceKind::Prediction => true,
        TraceKind::Publish => e.payload["topic"] == bedexit.as_str(),
        _ => false,
    })
}

/// Compares a stored script with a freshly generated one and runs the stored one.
fn stored_script(name: &str, fresh: &ScenarioScript, cfg: &SimConfig) -> Result<(ScenarioScript, Trace), String> {
    let bytes = fixture(name, fresh.to_json_pretty().as_bytes())?;
    let stored = ScenarioScript::from_json(std::str::from_utf8(&bytes).map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())?;
    if &stored != fresh {
        return Err(format!("{name} differs from the generator output"));
    }
    let trace = run_logical(&stored, cfg).map_err(|e| e.to_string())?;
    Ok((stored, trace))
}

// ---------------------------------------------------------------- mqtt

fn random_level(rng: &mut ChaCha8Rng) -> String {
    let len = rng.random_range(0..6);
    (0..len).map(|_| char::from(b"abcxyz019_"[rng.random_range(0..10)])).collect()
}

fn random_name(rng: &mut ChaCha8Rng) -> TopicName {
    loop {
        let levels: Vec<String> = (0..rng.random_range(1..5)).map(|_| random_level(rng)).collect();
        if let Ok(t) = TopicName::new(levels.join("/")) {
            return t;
        }
    }
}

fn random_filter(rng: &mut ChaCha8Rng) -> TopicFilter {
    loop {
        let mut levels: Vec<String> = (0..rng.random_range(1..5))
            .map(|_| if rng.random_bool(0.25) { "+".to_string() } else { random_level(rng) })
            .collect();
        if rng.random_bool(0.2) {
            levels.push("#".into());
        }
        if let Ok(f) = TopicFilter::new(levels.join("/")) {
            return f;
        }
    }
}

fn random_qos(rng: &mut ChaCha8Rng) -> QoS {
    if rng.random_bool(0.5) {
        QoS::AtMostOnce
    } else {
        QoS::AtLeastOnce
    }
}

fn random_packet(rng: &mut ChaCha8Rng) -> Packet {
    match rng.random_range(0..9) {
        0 => Packet::Connect {
            client_id: (0..rng.random_range(0..24)).map(|_| char::from(rng.random_range(b' '..=b'~'))).collect(),
            keep_alive_s: rng.random(),
        },
        1 => Packet::Connack { return_code: rng.random() },
        2 => {
            let topic = random_name(rng);
            let len = if rng.random_bool(0.05) { rng.random_range(128..20_000) } else { rng.random_range(0..200) };
            let payload: Vec<u8> = (0..len).map(|_| rng.random()).collect();
            Packet::Publish(match random_qos(rng) {
                QoS::AtMostOnce => Publish::qos0(topic, payload),
                QoS::AtLeastOnce => {
                    let mut p = Publish::qos1(topic, payload, rng.random_range(1..=u16::MAX));
                    p.dup = rng.random();
                    p
                }
            })
        }
        3 => Packet::Puback { packet_id: rng.random() },
        4 => Packet::Subscribe {
            packet_id: rng.random_range(1..=u16::MAX),
            filters: (0..rng.random_range(1..4)).map(|_| (random_filter(rng), random_qos(rng))).collect(),
        },
        5 => Packet::Suback {
            packet_id: rng.random(),
            granted: (0..rng.random_range(0..4)).map(|_| [0u8, 1, 0x80][rng.random_range(0..3)]).collect(),
        },
        6 => Packet::Pingreq,
        7 => Packet::Pingresp,
        _ => Packet::Disconnect,
    }
}

fn codec_criterion() -> Verdict {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for i in 0..10_000 {
        let p = random_packet(&mut rng);
        let bytes = encode_packet(&p).map_err(|e| format!("packet {i}: encode {e}"))?;
        if !matches!(decode_packet(&bytes), Ok(d) if d == Decoded::Packet(p.clone(), bytes.len())) {
            return Err(format!("packet {i} did not round-trip: {p:?}"));
        }
    }
    // a stream of two packets split at every byte boundary
    for i in 0..100 {
        let (a, b) = (random_packet(&mut rng), random_packet(&mut rng));
        let (ea, eb) = (encode_packet(&a).unwrap(), encode_packet(&b).unwrap());
        let stream = [ea.clone(), eb.clone()].concat();
        for cut in 0..=stream.len() {
            let mut buf = stream[..cut].to_vec();
            let mut got = vec![];
            let feed = |buf: &mut Vec<u8>, got: &mut Vec<Packet>| -> Result<(), String> {
                while let Decoded::Packet(p, n) = decode_packet(buf).map_err(|e| format!("stream {i} cut {cut}: {e}"))? {
                    got.push(p);
                    buf.drain(..n);
                }
                Ok(())
            };
            feed(&mut buf, &mut got)?;
            let early = got.len();
            let expected_early = usize::from(cut >= ea.len()) + usize::from(cut == stream.len());
            if early != expected_early {
                return Err(format!("stream {i} cut {cut}: {early} packets from the prefix"));
            }
            buf.extend_from_slice(&stream[cut..]);
            feed(&mut buf, &mut got)?;
            if got != [a.clone(), b.clone()] || !buf.is_empty() {
                return Err(format!("stream {i} cut {cut}: reassembly differs"));
            }
        }
    }
    let vectors: [(usize, &[u8]); 9] = [
        (0, &[0x00]),
        (127, &[0x7F]),
        (128, &[0x80, 0x01]),
        (321, &[0xC1, 0x02]),
        (16_383, &[0xFF, 0x7F]),
        (16_384, &[0x80, 0x80, 0x01]),
        (2_097_151, &[0xFF, 0xFF, 0x7F]),
        (2_097_152, &[0x80, 0x80, 0x80, 0x01]),
        (268_435_455, &[0xFF, 0xFF, 0xFF, 0x7F]),
    ];
    for (value, want) in vectors {
        let mut out = vec![];
        write_remaining_length(&mut out, value).map_err(|e| e.to_string())?;
        if out != want {
            return Err(format!("varint {value} encoded as {out:02X?}"));
        }
    }
    if encode_packet(&Packet::Pingreq).unwrap() != [0xC0, 0x00] {
        return Err("PINGREQ is not C0 00".into());
    }
    if encode_packet(&Packet::Pingresp).unwrap() != [0xD0, 0x00] || encode_packet(&Packet::Disconnect).unwrap() != [0xE0, 0x00] {
        return Err("PINGRESP/DISCONNECT vectors differ".into());
    }
    within(Duration::from_secs(10), started, "10000 round trips, 100 split streams, 11 vectors".into())
}

fn brute_force_match(filter: &[&str], name: &[&str]) -> bool {
    let level = |f: &str, n: &str| f == "+" || f == n;
    match filter.last() {
        Some(&"#") => {
            let prefix = &filter[..filter.len() - 1];
            name.len() >= prefix.len() && prefix.iter().zip(name).all(|(f, n)| level(f, n))
        }
        _ => filter.len() == name.len() && filter.iter().zip(name).all(|(f, n)| level(f, n)),
    }
}

/// Every sequence of 1..=max levels drawn from `alphabet`.
fn sequences<'a>(alphabet: &[&'a str], max: usize) -> Vec<Vec<&'a str>> {
    let mut out = vec![];
    let mut layer: Vec<Vec<&str>> = vec![vec![]];
    for _ in 0..max {
        layer = layer.iter().flat_map(|p| alphabet.iter().map(move |s| [p.clone(), vec![*s]].concat())).collect();
        out.extend(layer.iter().cloned());
    }
    out
}

fn topic_criterion() -> Verdict {
    let started = Instant::now();
    let symbols = ["a", "b", "c", ""];
    let names: Vec<(Vec<&str>, TopicName)> = sequences(&symbols, 4)
        .into_iter()
        .filter_map(|l| TopicName::new(l.join("/")).ok().map(|t| (l, t)))
        .collect();
    let filters: Vec<(Vec<&str>, TopicFilter)> = sequences(&["a", "b", "c", "", "+", "#"], 4)
        .into_iter()
        .filter(|l| !l[..l.len() - 1].contains(&"#"))
        .filter_map(|l| TopicFilter::new(l.join("/")).ok().map(|f| (l, f)))
        .collect();
    let mut pairs = 0usize;
    for (fl, f) in &filters {
        for (nl, n) in &names {
            if topic_matches(f, n) != brute_force_match(fl, nl) {
                return Err(format!("filter {:?} vs name {:?}", f.as_str(), n.as_str()));
            }
            pairs += 1;
        }
    }
    within(Duration::from_secs(5), started, format!("{} filters x {} names = {pairs} pairs", filters.len(), names.len()))
}

fn qos1_criterion() -> Verdict {
    let config = BrokerConfig::default();
    let mut broker = Broker::new(config);
    let mut rng = ChaCha8Rng::seed_from_u64(30);
    broker.connect("pub");
    broker.connect("sub");
    broker.subscribe("sub", 1, &[(TopicFilter::new("load/#").unwrap(), QoS::AtLeastOnce)]).unwrap();
    let mut delivered = BTreeMap::<u32, u32>::new();
    let mut logged = BTreeSet::<u32>::new();
    let (mut lost, mut acks_lost) = (0usize, 0usize);
    let seq_of = |p: &Publish| u32::from_le_bytes(p.payload[..4].try_into().unwrap());
    let mut handle = |broker: &mut Broker, queue: Vec<ward_mqtt::Delivery>, rng: &mut ChaCha8Rng| {
        for d in queue {
            if rng.random_bool(0.3) {
                lost += 1;
                continue;
            }
            *delivered.entry(seq_of(&d.publish)).or_default() += 1;
            if rng.random_bool(0.3) {
                acks_lost += 1;
                continue;
            }
            broker.puback(&d.client_id, d.publish.packet_id.unwrap());
        }
    };
    let mut tick = 0u64;
    for seq in 0..1000u32 {
        let p = Publish::qos1(TopicName::new(format!("load/{}", seq % 7)).unwrap(), seq.to_le_bytes().to_vec(), 1);
        let out = broker.route("pub", &p, tick).unwrap();
        handle(&mut broker, out, &mut rng);
        tick += 1;
    }
    while broker.pending_count() > 0 {
        let outcome = broker.qos1_tick(tick);
        for d in &outcome.dropped {
            if d.retries != config.retry_cap {
                return Err(format!("message dropped after {} retries", d.retries));
            }
            logged.insert(seq_of(&d.publish));
        }
        handle(&mut broker, outcome.retransmissions, &mut rng);
        tick += 1;
    }
    let silent: Vec<u32> = (0..1000).filter(|s| !delivered.contains_key(s) && !logged.contains(s)).collect();
    let dups = delivered.values().filter(|n| **n > 1).count();
    check(
        silent.is_empty(),
        format!(
            "1000 publishes: {} delivered ({dups} more than once), {} logged dropped, {} silent; {lost} deliveries and {acks_lost} acks lost",
            delivered.len(),
            logged.len(),
            silent.len()
        ),
    )
}

// ---------------------------------------------------------------- predictor

struct Part1 {
    report: ward_sim::harness::MetricsReport,
    elapsed: Duration,
}

fn part1(cfg: &SimConfig) -> Result<Part1, String> {
    let started = Instant::now();
    let script: ScenarioScript = gen_part1(PARTICIPANTS, PART1_SEED, &cfg.render.geometry);
    let trace = run_logical(&script, cfg).map_err(|e| e.to_string())?;
    let report = compute_metrics(&trace, &script).map_err(|e| e.to_string())?;
    Ok(Part1 { report, elapsed: started.elapsed() })
}

fn recall_criterion(cfg: &SimConfig, p1: &Result<Part1, String>) -> Verdict {
    let started = Instant::now();
    let p1 = p1.as_ref().map_err(Clone::clone)?;
    let r = &p1.report;
    let misclassified: Vec<_> = r.trials.iter().filter(|t| matches!(t.outcome, Some(Outcome::Fp | Outcome::Fn))).collect();
    let all_trick_alarms =
        misclassified.iter().all(|t| t.outcome == Some(Outcome::Fp) && t.kind == TrialKind::Trick);
    let null: ScenarioScript = gen_null_lying(32, PART1_SEED);
    let null_report = compute_metrics(&run_logical(&null, cfg).map_err(|e| e.to_string())?, &null).map_err(|e| e.to_string())?;
    let null_events: usize = null_report.trials.iter().map(|t| t.events).sum();
    let c = r.confusion;
    let detail = format!(
        "{} trials: TP {} FP {} TN {} FN {}, recall {:.3}, accuracy {:.3}, {} misclassified all trick alarms: {all_trick_alarms}; {} null trials, {null_events} events",
        r.trials.len(),
        c.tp,
        c.fp,
        c.tn,
        c.fn_,
        r.recall,
        r.accuracy,
        misclassified.len(),
        null_report.trials.len()
    );
    let limit = Duration::from_secs(60);
    let took = p1.elapsed + started.elapsed();
    check(
        r.recall == 1.0 && c.fn_ == 0 && all_trick_alarms && null_events == 0 && took < limit,
        format!("{detail}; {:.2} s of 60 s", took.as_secs_f64()),
    )
}

fn preemption_criterion(p1: &Result<Part1, String>) -> Verdict {
    let r = &p1.as_ref().map_err(Clone::clone)?.report;
    let exits: Vec<_> = r.trials.iter().filter(|t| t.kind == TrialKind::GenuineExit).collect();
    let late: Vec<&str> = exits.iter().filter(|t| t.lead_ticks.is_none_or(|l| l < 3)).map(|t| t.trial_id.as_str()).collect();
    check(
        late.is_empty() && !exits.is_empty(),
        format!("{} genuine exits, min lead {:?} ticks, late {:?}", exits.len(), r.min_lead_ticks, late),
    )
}

// ---------------------------------------------------------------- orchestrator

fn alphabet() -> Vec<Event> {
    let request = ItemRequest { item: "water".into(), modality: Modality::Touch, tick: 0 };
    let mut events = vec![
        Event::BedExitPredicted { tick: 0 },
        Event::PatientRequest(request),
        Event::ArmDone { item: "water".into() },
        Event::ArmDone { item: "apple".into() },
        Event::ArmFailed { item: "water".into(), reason: "grasp".into() },
        Event::ArmFailed { item: "apple".into(), reason: "grasp".into() },
        Event::ItemTaken,
        Event::Heartbeat,
    ];
    events.extend([BEDSIDE, PICKUP, DOCK].map(|w| Event::TemiArrived { waypoint: w.into() }));
    events.extend(Phase::ALL.map(Event::Timeout));
    events
}

fn model_check_criterion() -> Verdict {
    let started = Instant::now();
    let cfg = OrchestratorConfig::default();
    let events = alphabet();
    let next = |s: &OrchestrationState, e: &Event| orchestrator::step(&cfg, s, e, 0);

    let mut reachable = BTreeMap::new();
    let mut queue = VecDeque::from([OrchestrationState::default()]);
    while let Some(s) = queue.pop_front() {
        let key = format!("{s:?}");
        if reachable.contains_key(&key) {
            continue;
        }
        for e in &events {
            queue.push_back(next(&s, e).state);
        }
        reachable.insert(key, s);
    }
    if let Some(s) = reachable.values().find(|s| !s.is_consistent()) {
        return Err(format!("inconsistent reachable state {s:?}"));
    }

    // (a) command-emitting cycles from IDLE through DELIVERED, timeouts excluded
    let mut paths: Vec<Vec<String>> = vec![];
    let mut stack = vec![(OrchestrationState::default(), vec![], vec![format!("{:?}", OrchestrationState::default())])];
    while let Some((s, path, seen)) = stack.pop() {
        for e in events.iter().filter(|e| !matches!(e, Event::Timeout(_))) {
            let t = next(&s, e);
            if t.commands.is_empty() || !t.changed(&s) {
                continue;
            }
            let mut path: Vec<(Phase, String)> = path.clone();
            path.push((t.state.phase, format!("{e:?}")));
            if t.state.phase == Phase::Idle {
                if path.iter().any(|(p, _)| *p == Phase::Delivered) {
                    paths.push(path.into_iter().map(|(_, e)| e).collect());
                }
                continue;
            }
            let key = format!("{:?}", t.state);
            if !seen.contains(&key) {
                let mut seen = seen.clone();
                seen.push(key);
                stack.push((t.state, path, seen));
            }
        }
    }
    let a = paths.len() == 1 && paths[0].len() == 7;

    // (b) timeouts alone bring every reachable state back to IDLE
    let mut worst = 0;
    for s in reachable.values().filter(|s| s.phase != Phase::Idle) {
        let (mut cur, mut n) = (s.clone(), 0);
        while cur.phase != Phase::Idle && n <= 3 {
            cur = next(&cur, &Event::Timeout(cur.phase)).state;
            n += 1;
        }
        if cur.phase != Phase::Idle {
            return Err(format!("{:?} does not reach IDLE within 3 timeouts", s.phase));
        }
        worst = worst.max(n);
    }

    // (c) ArmPickPlace count per request over the product with a pick counter
    let mut seen = BTreeSet::new();
    let mut queue = VecDeque::from([(OrchestrationState::default(), 0u8)]);
    let mut max_picks = 0;
    while let Some((s, picks)) = queue.pop_front() {
        if !seen.insert(format!("{s:?}{picks}")) {
            continue;
        }
        max_picks = max_picks.max(picks);
        if picks > 1 {
            break;
        }
        for e in &events {
            let t = next(&s, e);
            let fresh = t.via == Some(Phase::RequestCaptured);
            let added = t.commands.iter().filter(|c| matches!(c, Command::ArmPickPlace { .. })).count() as u8;
            queue.push_back((t.state, if fresh { added } else { picks + added }));
        }
    }
    let detail = format!(
        "{} reachable states; (a) {} cycle(s), lengths {:?}; (b) worst {worst} timeouts; (c) max {max_picks} pick per request",
        reachable.len(),
        paths.len(),
        paths.iter().map(Vec::len).collect::<Vec<_>>()
    );
    if !(a && worst <= 3 && max_picks <= 1) {
        return Err(detail);
    }
    within(Duration::from_secs(5), started, detail)
}

// ---------------------------------------------------------------- end to end

fn determinism_criterion(cfg: &SimConfig) -> Verdict {
    let script: ScenarioScript = golden_fetch(GOLDEN_SEED);
    let run = || run_logical(&script, cfg).map(|t| t.to_jsonl()).map_err(|e| e.to_string());
    let (first, second) = (run()?, run()?);
    if first != second {
        return Err("two runs with the same seed differ".into());
    }
    let digest = sha256_hex(&first);
    let trace = Trace::from_jsonl(&first).map_err(|e| e.to_string())?;
    let stored_digest = fixture("golden_fetch.sha256", format!("{digest}\n").as_bytes())?;
    let stored_trace = fixture("golden_fetch.trace.jsonl", &without_frames(&trace).to_jsonl())?;
    check(
        String::from_utf8_lossy(&stored_digest).trim() == digest && stored_trace == without_frames(&trace).to_jsonl(),
        format!("{} bytes, {} events, sha256 {}..", first.len(), trace.events.len(), &digest[..16]),
    )
}

// ---------------------------------------------------------------- taxonomy

fn category_counts<'a>(cats: impl IntoIterator<Item = &'a ErrorCategory>) -> BTreeMap<ErrorCategory, usize> {
    let mut m = BTreeMap::new();
    for c in cats {
        *m.entry(*c).or_default() += 1;
    }
    m
}

fn taxonomy_criterion(cfg: &SimConfig) -> Verdict {
    let corpus: ScenarioScript = gen_fault_corpus(3, 5);
    let trace = run_logical(&corpus, cfg).map_err(|e| e.to_string())?;
    let records = classify_trace(&trace.events, &cfg.detectors);
    let (mut matched, mut expected, mut found) = (0usize, 0usize, 0usize);
    for t in &corpus.trials {
        let want = category_counts(&t.expected_errors);
        let got = category_counts(records.iter().filter(|r| r.trial_id == t.id).map(|r| &r.category));
        expected += want.values().sum::<usize>();
        found += got.values().sum::<usize>();
        matched += want.iter().map(|(c, n)| (*n).min(got.get(c).copied().unwrap_or(0))).sum::<usize>();
    }
    let precision = matched as f64 / found.max(1) as f64;
    let recall = matched as f64 / expected.max(1) as f64;
    let stray = records.iter().filter(|r| corpus.trial(&r.trial_id).is_none()).count();

    let fresh: ScenarioScript = gen_reference_tally(FIXTURE_SEED);
    let (_, ref_trace) = stored_script("reference_tally.scenario.json", &fresh, cfg)?;
    let ref_records = classify_trace(&ref_trace.events, &cfg.detectors);
    let stored = fixture("reference_tally.errors.json", serde_json::to_string_pretty(&ref_records).unwrap().as_bytes())?;
    let stored: Vec<ErrorRecord> = serde_json::from_slice(&stored).map_err(|e| e.to_string())?;
    let digest_ok = String::from_utf8_lossy(&fixture("reference_tally.sha256", format!("{}\n", sha256_hex(&ref_trace.to_jsonl())).as_bytes())?)
        .trim()
        == sha256_hex(&ref_trace.to_jsonl());
    let report = tally(&stored);
    use ErrorCategory::*;
    let cells = [(OperationalError, 66), (Intrusion, 4), (InsufficientCommunicativeFunction, 4), (SystemFailure, 1), (DesignFlaw, 1)];
    let cells_ok = cells.iter().all(|(c, n)| report.count(*c) == *n) && report.total == 76;
    check(
        precision == 1.0 && recall == 1.0 && stray == 0 && stored == ref_records && digest_ok && cells_ok,
        format!(
            "{} corpus trials: P {precision:.3} R {recall:.3} ({matched}/{found} found, {matched}/{expected} expected); fixture tally {}",
            corpus.trials.len(),
            cells.iter().map(|(c, _)| format!("{} {}", c.as_str(), report.count(*c))).collect::<Vec<_>>().join(", ")
        ),
    )
}

// ---------------------------------------------------------------- metrics, latency

fn metrics_criterion(cfg: &SimConfig) -> Verdict {
    let fresh: ScenarioScript = gen_request_mix(29, 15, FIXTURE_SEED);
    let (script, trace) = stored_script("request_mix.scenario.json", &fresh, cfg)?;
    let view = metrics_view(&trace, &script.bed).to_jsonl();
    let stored = fixture("request_mix.trace.jsonl", &view)?;
    let stored_trace = Trace::from_jsonl(&stored).map_err(|e| e.to_string())?;
    let m = compute_metrics(&stored_trace, &script).map_err(|e| e.to_string())?;
    check(
        stored == view && m.modality.touch == 29 && m.modality.voice == 15,
        format!("fixture trace: touch {} voice {}; fresh run matches fixture: {}", m.modality.touch, m.modality.voice, stored == view),
    )
}

fn latency_criterion() -> Verdict {
    let params = BenchParams { messages: 10_000, payload_bytes: 1024, ..Default::default() };
    let r = bench_loopback(&BrokerParams::default(), &params).map_err(|e| e.to_string())?;
    check(
        r.samples == 10_000 && r.within_budget,
        format!(
            "{} x {} B: p50 {:.3} ms, p99 {:.3} ms, max {:.3} ms, budget {} ms",
            r.samples, r.payload_bytes, r.p50_ms, r.p99_ms, r.max_ms, r.budget_ms
        ),
    )
}

fn main() {
    let cfg = SimConfig::default();
    let p1 = part1(&cfg);
    let criteria: Vec<(&str, Box<dyn Fn() -> Verdict + '_>)> = vec![
        ("mqtt codec", Box::new(codec_criterion)),
        ("topic matching", Box::new(topic_criterion)),
        ("qos1 delivery", Box::new(qos1_criterion)),
        ("predictor recall", Box::new(|| recall_criterion(&cfg, &p1))),
        ("pre-emption", Box::new(|| preemption_criterion(&p1))),
        ("orchestrator model check", Box::new(model_check_criterion)),
        ("end-to-end determinism", Box::new(|| determinism_criterion(&cfg))),
        ("error taxonomy", Box::new(|| taxonomy_criterion(&cfg))),
        ("metrics modality", Box::new(|| metrics_criterion(&cfg))),
        ("latency benchmark", Box::new(latency_criterion)),
    ];
    let mut failed = 0;
    let mut out = std::io::stdout().lock();
    for (name, run) in criteria {
        let (tag, detail) = match run() {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        writeln!(out, "{tag} {name}: {detail}").unwrap();
    }
    writeln!(out, "acceptance: {failed} failed").unwrap();
    if failed > 0 {
        std::process::exit(1);
    }
}
