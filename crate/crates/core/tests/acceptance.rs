//! Acceptance gate. Prints one PASS/FAIL line per criterion and exits non-zero
//! when any fails. Every oracle below is written against the public API only.
//!
//! ```text
//! cargo test -p clic-core --test acceptance
//! ```

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use clic_core::blueprint::{parse_blueprint, BlueprintSpec};
use clic_core::component::{
    AttrPredicate, AttrValue, CapabilityPath, ComponentDescriptor, ComponentKind, DataType, Interval, Millis,
    Nature, NatureConstraint, SlaTerms, SlotQuery,
};
use clic_core::eventlog::{replay_text, EventLog};
use clic_core::gateway::protocol::{PaymentReason, SlaSummary, WireMessage};
use clic_core::gateway::sim::{SimulatedCrowd, WorkerProfile};
use clic_core::gateway::{Gateway, TaskOffer};
use clic_core::goals::{arbitrate, CompositeGoal, Direction, Goal, GoalKind, MetricVocabulary};
use clic_core::monitor::qos::{estimate_qos, QosEstimate, QosSample};
use clic_core::monitor::replacement::{
    decide_replacement, Action, Condition, MarketSnapshot, Quote, ReplacementError, Trigger,
};
use clic_core::monitor::sla::BreachReason;
use clic_core::procurement::negotiation::{Actor, UtilityWeights};
use clic_core::procurement::{
    negotiate, procure_slot, procure_system, run_reverse_auction, Bid, BuyerLimits, CommitFaults, Contract,
    ContractBook, ContractState, NoFaults, Procurer, ScriptedHumans, Tactic, TimeDependentSeller,
};
use clic_core::registry::{EntryStatus, GrantKind, Registry};
use clic_core::runtime::Runtime;
use clic_core::scenario::{run_scenario, ScenarioConfig, ScenarioReport, CONGESTED, FIXTURES};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const MATCHING_POOLS: usize = 500;
const MATCHING_MAX_ENTRIES: usize = 50;
const MATCHING_LIMIT: Duration = Duration::from_secs(5);
const AUCTION_DRAWS: usize = 1000;
const NEGOTIATION_DRAWS: usize = 1000;
const ATOMICITY_RUNS: usize = 200;
const SWAP_SCHEDULES: usize = 500;
const SWAP_LIMIT: Duration = Duration::from_secs(30);
const REPLACEMENT_INSTANCES: usize = 1000;
const QOS_ALPHA: f64 = 0.05;
const QOS_P: f64 = 0.7;
const QOS_OBS: usize = 10_000;
const QOS_BAND: (f64, f64) = (0.65, 0.75);
const QOS_STREAMS: u64 = 100;
const GOAL_SETS: usize = 1000;
const WEIGHT_TOL: f64 = 1e-9;
const E2E_SEEDS: usize = 10;
const SUITE_LIMIT: Duration = Duration::from_secs(300);

type Verdict = Result<String, String>;

fn ensure(ok: bool, why: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(why())
    }
}

fn rng(tag: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(0xacce_97ed ^ tag)
}

fn terms(price: f64, quality: f64, latency: u64, capacity: f64, end: Millis) -> SlaTerms {
    SlaTerms {
        price,
        max_latency: latency,
        min_quality: quality,
        capacity,
        term: Interval(0, end),
        breach_penalty: 5.0,
        early_termination_penalty: 2.0,
        availability_window: None,
    }
}

fn cap(s: &str) -> CapabilityPath {
    s.parse().unwrap()
}

// Matching ----------------------------------------------------------------

const LEVEL1: [&str; 3] = ["sense", "process", "act"];
const LEVEL2: [&str; 3] = ["vision", "audio", "traffic"];
const LEVEL3: [&str; 2] = ["camera", "lidar"];
const LOCATIONS: [&str; 5] = ["city", "city.nw", "city.nw.a", "city.se", "campus"];
const TYPES: [DataType; 3] = [DataType::Image, DataType::Occupancy, DataType::Alarm];

fn random_path(r: &mut ChaCha8Rng, min_depth: usize) -> String {
    let depth = r.gen_range(min_depth..=3);
    let mut s = LEVEL1.choose(r).unwrap().to_string();
    if depth >= 2 {
        s = format!("{s}.{}", LEVEL2.choose(r).unwrap());
    }
    if depth >= 3 {
        s = format!("{s}.{}", LEVEL3.choose(r).unwrap());
    }
    s
}

fn random_kind(r: &mut ChaCha8Rng) -> ComponentKind {
    *[ComponentKind::Sensing, ComponentKind::Processing, ComponentKind::Actuation].choose(r).unwrap()
}

fn random_descriptor(r: &mut ChaCha8Rng, id: String) -> ComponentDescriptor {
    let kind = random_kind(r);
    let ty = |r: &mut ChaCha8Rng| Some(*TYPES.choose(r).unwrap());
    let (input_type, output_type) = match kind {
        ComponentKind::Sensing => (None, ty(r)),
        ComponentKind::Processing => (ty(r), ty(r)),
        ComponentKind::Actuation => (ty(r), None),
    };
    let mut t = terms(
        f64::from(r.gen_range(1..=10u8)) * 0.5,
        f64::from(r.gen_range(5..=10u8)) / 10.0,
        *[50, 100, 200, 500, 1000].choose(r).unwrap(),
        f64::from(r.gen_range(1..=3u8)),
        *[1000, 5000, 10_000].choose(r).unwrap(),
    );
    if r.gen_bool(0.2) {
        let a = r.gen_range(0..3000);
        t.availability_window = Some(Interval(a, a + r.gen_range(0..8000)));
    }
    let mut attributes = BTreeMap::new();
    if r.gen_bool(0.5) {
        attributes.insert("resolution".into(), AttrValue::Number(f64::from(r.gen_range(1..=8u8))));
    }
    if r.gen_bool(0.3) {
        attributes.insert("vendor".into(), AttrValue::Text(["acme", "zeta"].choose(r).unwrap().to_string()));
    }
    ComponentDescriptor {
        id,
        kind,
        nature: if r.gen_bool(0.3) { Nature::Human } else { Nature::Machine },
        capability: cap(&random_path(r, 1)),
        input_type,
        output_type,
        location: if r.gen_bool(0.85) { Some(LOCATIONS.choose(r).unwrap().to_string()) } else { None },
        attributes,
        posted_terms: t,
        endpoint: String::new(),
    }
}

fn random_query(r: &mut ChaCha8Rng) -> SlotQuery {
    let mut predicates = Vec::new();
    if r.gen_bool(0.4) {
        predicates.push(AttrPredicate::WithinRegion { region: LOCATIONS.choose(r).unwrap().to_string() });
    }
    if r.gen_bool(0.2) {
        predicates.push(AttrPredicate::Ge { key: "resolution".into(), value: f64::from(r.gen_range(1..=8u8)) });
    }
    if r.gen_bool(0.1) {
        predicates.push(AttrPredicate::Le { key: "resolution".into(), value: f64::from(r.gen_range(1..=8u8)) });
    }
    if r.gen_bool(0.1) {
        predicates.push(AttrPredicate::Eq { key: "vendor".into(), value: AttrValue::Text("acme".into()) });
    }
    let start = r.gen_range(0..2000);
    SlotQuery {
        kind: random_kind(r),
        nature: *[NatureConstraint::Any, NatureConstraint::Human, NatureConstraint::Machine].choose(r).unwrap(),
        capability: cap(&random_path(r, 1)),
        predicates,
        max_price: f64::from(r.gen_range(1..=12u8)) * 0.5,
        min_quality: f64::from(r.gen_range(0..=10u8)) / 10.0,
        max_latency: *[50, 100, 200, 500, 1000, 5000].choose(r).unwrap(),
        term: Interval(start, start + r.gen_range(0..6000)),
        rate: 1.0,
        input_type: if r.gen_bool(0.5) { Some(*TYPES.choose(r).unwrap()) } else { None },
        output_type: if r.gen_bool(0.5) { Some(*TYPES.choose(r).unwrap()) } else { None },
    }
}

/// Relaxes `q` so that `d` sits near its boundary, to keep hit rates up.
fn loosen_towards(q: &mut SlotQuery, d: &ComponentDescriptor, r: &mut ChaCha8Rng) {
    let segs: Vec<String> = d.capability.to_string().split('.').map(str::to_string).collect();
    q.kind = d.kind;
    q.capability = cap(&segs[..r.gen_range(1..=segs.len())].join("."));
    q.max_price = d.posted_terms.price + f64::from(r.gen_range(0..3u8)) * 0.5;
    q.min_quality = (d.posted_terms.min_quality - f64::from(r.gen_range(0..3u8)) * 0.1).max(0.0);
    q.max_latency = d.posted_terms.max_latency * r.gen_range(1..3);
    q.term = Interval(r.gen_range(0..500), r.gen_range(500..1000));
    if r.gen_bool(0.7) {
        q.input_type = None;
        q.output_type = None;
    }
    q.predicates.retain(|_| r.gen_bool(0.5));
}

fn under(a: &str, b: &str) -> bool {
    b == a || b.starts_with(&format!("{a}."))
}

fn number(d: &ComponentDescriptor, key: &str) -> Option<f64> {
    match d.attributes.get(key) {
        Some(AttrValue::Number(n)) => Some(*n),
        _ => None,
    }
}

fn brute_force_admits(d: &ComponentDescriptor, q: &SlotQuery) -> bool {
    let t = &d.posted_terms;
    let avail = match t.availability_window {
        Some(w) => (w.0.max(t.term.0), w.1.min(t.term.1)),
        None => (t.term.0, t.term.1),
    };
    let nature_ok = match q.nature {
        NatureConstraint::Any => true,
        NatureConstraint::Human => d.nature == Nature::Human,
        NatureConstraint::Machine => d.nature == Nature::Machine,
    };
    let preds_ok = q.predicates.iter().all(|p| match p {
        AttrPredicate::WithinRegion { region } => d.location.as_deref().is_some_and(|l| under(region, l)),
        AttrPredicate::Ge { key, value } => number(d, key).is_some_and(|v| v >= *value),
        AttrPredicate::Le { key, value } => number(d, key).is_some_and(|v| v <= *value),
        AttrPredicate::Eq { key, value } => d.attributes.get(key) == Some(value),
    });
    d.kind == q.kind
        && nature_ok
        && under(&q.capability.to_string(), &d.capability.to_string())
        && (q.input_type.is_none() || q.input_type == d.input_type)
        && (q.output_type.is_none() || q.output_type == d.output_type)
        && preds_ok
        && t.price <= q.max_price
        && t.min_quality >= q.min_quality
        && t.max_latency <= q.max_latency
        && avail.0 <= q.term.0
        && q.term.1 <= avail.1
}

fn matching() -> Verdict {
    let mut r = rng(1);
    let mut queries = 0usize;
    let mut hits = 0usize;
    let mut elapsed = Duration::ZERO;
    for pool in 0..MATCHING_POOLS {
        let mut log = EventLog::new();
        let mut reg = Registry::new(0.1);
        let n = r.gen_range(0..=MATCHING_MAX_ENTRIES);
        let ids: Vec<String> = (0..n).map(|i| format!("p{pool}-c{i:02}")).collect();
        for id in &ids {
            reg.register(random_descriptor(&mut r, id.clone()), 0, &mut log).unwrap();
        }
        for id in &ids {
            match r.gen_range(0..10) {
                0 => {
                    reg.take_offline(id, 0, "test", &mut log).unwrap();
                }
                1 => {
                    let c = reg.get(id).unwrap().descriptor.posted_terms.capacity;
                    reg.grant_capacity(id, &format!("h-{id}"), GrantKind::Contract { serving: true }, c, Interval(0, 1), 0, &mut log)
                        .unwrap();
                }
                2 | 3 => reg.qos_mut(id).unwrap().reliability = f64::from(r.gen_range(0..=4u8)) / 4.0,
                _ => {}
            }
        }
        for _ in 0..8 {
            let mut q = random_query(&mut r);
            if r.gen_bool(0.5) {
                if let Some(e) = reg.entries().collect::<Vec<_>>().choose(&mut r) {
                    loosen_towards(&mut q, &e.descriptor, &mut r);
                }
            }
            let t0 = Instant::now();
            let got: Vec<String> = reg.query(&q).into_iter().map(|e| e.descriptor.id).collect();
            let mut want: Vec<_> = reg
                .entries()
                .filter(|e| {
                    e.status != EntryStatus::Offline
                        && e.descriptor.posted_terms.capacity - e.allocated_rate > 1e-9
                        && brute_force_admits(&e.descriptor, &q)
                })
                .collect();
            want.sort_by(|a, b| {
                let key = |e: &&clic_core::registry::PoolEntry| (e.descriptor.posted_terms.price, -e.qos.reliability);
                let (ka, kb) = (key(a), key(b));
                ka.0.partial_cmp(&kb.0)
                    .unwrap()
                    .then(ka.1.partial_cmp(&kb.1).unwrap())
                    .then_with(|| a.descriptor.id.cmp(&b.descriptor.id))
            });
            let want: Vec<String> = want.into_iter().map(|e| e.descriptor.id.clone()).collect();
            elapsed += t0.elapsed();
            ensure(got == want, || format!("pool {pool}: query {q:?}\n got {got:?}\nwant {want:?}"))?;
            queries += 1;
            hits += got.len();
        }
    }
    ensure(elapsed < MATCHING_LIMIT, || format!("{elapsed:?} exceeds {MATCHING_LIMIT:?}"))?;
    Ok(format!(
        "{MATCHING_POOLS} pools (<= {MATCHING_MAX_ENTRIES} entries), {queries} queries, {hits} matches, 100% agreement, {:.2} s (limit {} s)",
        elapsed.as_secs_f64(),
        MATCHING_LIMIT.as_secs()
    ))
}

// Auction -----------------------------------------------------------------

fn auction() -> Verdict {
    let mut r = rng(2);
    let mut sold = 0;
    for draw in 0..AUCTION_DRAWS {
        let n = r.gen_range(0..=12);
        let reserve = f64::from(r.gen_range(0..=40u8)) * 0.25;
        let grid = r.gen_bool(0.5);
        let mut bids: Vec<Bid> = (0..n)
            .map(|i| Bid {
                component_id: format!("b{i:02}"),
                bid: if grid { f64::from(r.gen_range(0..=48u8)) * 0.25 } else { r.gen_range(0.0..12.0) },
            })
            .collect();
        bids.shuffle(&mut r);
        let mut sorted: Vec<&Bid> = bids.iter().filter(|b| b.bid <= reserve).collect();
        sorted.sort_by(|a, b| a.bid.partial_cmp(&b.bid).unwrap().then_with(|| a.component_id.cmp(&b.component_id)));
        match (run_reverse_auction(&bids, reserve), sorted.first()) {
            (Err(_), None) => continue,
            (Ok(res), Some(w)) => {
                let payment = sorted.get(1).map_or(reserve, |b| b.bid);
                ensure(res.winner == w.component_id && res.payment == payment, || {
                    format!("draw {draw}: got {} at {}, oracle {} at {payment}", res.winner, res.payment, w.component_id)
                })?;
                // The winner's own bid must not move its payment.
                let ceiling = sorted.get(1).map_or(reserve, |b| b.bid);
                for _ in 0..5 {
                    let mut moved = bids.clone();
                    let nb = if ceiling > 0.0 { r.gen_range(0.0..ceiling) } else { 0.0 };
                    moved.iter_mut().find(|b| b.component_id == res.winner).unwrap().bid = nb;
                    let again = run_reverse_auction(&moved, reserve).unwrap();
                    ensure(again.winner == res.winner && again.payment == res.payment, || {
                        format!("draw {draw}: winner bid {nb} changed outcome to {} at {}", again.winner, again.payment)
                    })?;
                }
                sold += 1;
            }
            (got, want) => return Err(format!("draw {draw}: got {got:?}, oracle winner {want:?}")),
        }
    }
    Ok(format!("{AUCTION_DRAWS} bid vectors ({sold} sold), winner/payment and second-price invariance hold in every case"))
}

// Negotiation -------------------------------------------------------------

fn negotiation() -> Verdict {
    let mut r = rng(3);
    let mut deals = 0;
    for draw in 0..NEGOTIATION_DRAWS {
        let beta = r.gen_range(0.2..5.0);
        let rounds = r.gen_range(0..=12u32);
        let grain = *[0.0, 0.1, 0.25, 0.5, 1.0].choose(&mut r).unwrap();
        let reservation = r.gen_range(0.0..15.0);
        let max_price = r.gen_range(0.5..12.0);
        let mut seller = TimeDependentSeller {
            reservation,
            opening: reservation + r.gen_range(0.0..10.0),
            quality: 0.9,
            beta: r.gen_range(0.2..5.0),
            rounds,
            grain,
            weights: UtilityWeights::default(),
        };
        let tactic = Tactic { beta, rounds, grain, ..Tactic::default() };
        let limits = BuyerLimits { max_price, min_quality: 0.8, target_quality: 0.9 };
        let t = negotiate(&tactic, &limits, &mut seller);
        let prices = |a: Actor| t.rounds.iter().filter(|m| m.actor == a).map(|m| m.offer.price).collect::<Vec<_>>();
        let (b, s) = (prices(Actor::Buyer), prices(Actor::Seller));
        let ctx = || format!("draw {draw}: β={beta} R={rounds} g={grain} res={reservation} max={max_price}");
        ensure(t.rounds.len() <= 2 * rounds as usize, || format!("{}: {} moves", ctx(), t.rounds.len()))?;
        ensure(b.windows(2).all(|w| w[0] <= w[1]), || format!("{}: buyer prices {b:?}", ctx()))?;
        ensure(s.windows(2).all(|w| w[0] >= w[1]), || format!("{}: seller prices {s:?}", ctx()))?;
        let expect = reservation <= max_price && rounds >= 1;
        ensure(t.agreement().is_some() == expect, || format!("{}: outcome {:?}", ctx(), t.outcome))?;
        if let Some(deal) = t.agreement() {
            ensure(deal.price >= reservation - 1e-9 && deal.price <= max_price + 1e-9, || {
                format!("{}: deal {} outside the zone", ctx(), deal.price)
            })?;
            deals += 1;
        }
    }
    Ok(format!("{NEGOTIATION_DRAWS} draws ({deals} agreements), monotone, <= 2R moves, agreement iff zone non-empty and R >= 1"))
}

// Procurement atomicity ---------------------------------------------------

const PERSON_ALARM: &str = include_str!("../data/blueprints/person-alarm.json");

fn part(id: &str, kind: ComponentKind, nature: Nature, capability: &str, location: &str, price: f64) -> ComponentDescriptor {
    let (input_type, output_type) = match kind {
        ComponentKind::Sensing => (None, Some(DataType::Image)),
        ComponentKind::Processing => (Some(DataType::Image), Some(DataType::Alarm)),
        ComponentKind::Actuation => (Some(DataType::Alarm), None),
    };
    let mut attributes = BTreeMap::new();
    if nature == Nature::Human {
        attributes.insert("reservation_price".into(), AttrValue::Number(price * 0.6));
    }
    ComponentDescriptor {
        id: id.to_string(),
        kind,
        nature,
        capability: cap(capability),
        input_type,
        output_type,
        location: Some(location.to_string()),
        attributes,
        posted_terms: terms(price, 0.9, 100, 3.0, 10_000_000),
        endpoint: String::new(),
    }
}

struct RandomFaults {
    rng: ChaCha8Rng,
    p: f64,
    injected: usize,
}

impl CommitFaults for RandomFaults {
    fn fail_commit(&mut self, _: &str, _: &str) -> bool {
        let fail = self.rng.gen_bool(self.p);
        self.injected += usize::from(fail);
        fail
    }
}

fn atomicity() -> Verdict {
    let mut r = rng(4);
    let (mut ok, mut refused, mut injected) = (0, 0, 0);
    for run in 0..ATOMICITY_RUNS {
        let mut log = EventLog::new();
        let mut reg = Registry::new(0.1);
        let spares = |r: &mut ChaCha8Rng| r.gen_range(0..=3);
        for i in 0..spares(&mut r) {
            let nature = if r.gen_bool(0.3) { Nature::Human } else { Nature::Machine };
            reg.register(part(&format!("cam-{i}"), ComponentKind::Sensing, nature, "sense.vision.camera", "campus.main-entrance", r.gen_range(0.5..4.0)), 0, &mut log).unwrap();
        }
        for i in 0..spares(&mut r) {
            reg.register(part(&format!("det-{i}"), ComponentKind::Processing, Nature::Machine, "process.vision.person-detect", "cloud", r.gen_range(0.5..4.0)), 0, &mut log).unwrap();
        }
        for i in 0..spares(&mut r) {
            reg.register(part(&format!("siren-{i}"), ComponentKind::Actuation, Nature::Machine, "act.sound.alarm", "campus.office-7", r.gen_range(0.5..4.0)), 0, &mut log).unwrap();
        }
        let mut faults = RandomFaults { rng: ChaCha8Rng::seed_from_u64(run as u64), p: r.gen_range(0.0..0.6), injected: 0 };
        let mut book = ContractBook::new();
        let mut humans = ScriptedHumans;
        let systems = r.gen_range(1..=4);
        for s in 0..systems {
            let mut b: BlueprintSpec = parse_blueprint(PERSON_ALARM).unwrap();
            b.system_id = format!("sys-{s}");
            if r.gen_bool(0.2) {
                b.budget = Some(r.gen_range(1.0..12.0));
            }
            let mut p = Procurer { tactic: Tactic::default(), humans: &mut humans, faults: &mut faults };
            let res = procure_system(&b, &mut reg, &mut book, &mut p, 0, &mut log);
            let reserved = book.count_in(&b.system_id, ContractState::Reserved);
            ensure(reserved == 0 || reserved == b.slots.len(), || {
                format!("run {run} {}: {reserved} of {} slots reserved", b.system_id, b.slots.len())
            })?;
            ensure(res.is_ok() == (reserved == b.slots.len()), || format!("run {run}: result {res:?} vs {reserved} reserved"))?;
            let held: f64 = reg.grants().filter(|g| book.get(&g.holder).is_some_and(|c| c.system_id == b.system_id)).map(|g| g.rate).sum();
            ensure(res.is_ok() || held == 0.0, || format!("run {run}: refused system still holds {held} capacity"))?;
            reg.check_conservation().map_err(|e| format!("run {run}: {e}"))?;
            if res.is_ok() {
                ok += 1;
            } else {
                refused += 1;
            }
        }
        injected += faults.injected;
    }
    Ok(format!("{ATOMICITY_RUNS} fuzz runs, {ok} systems staffed, {refused} refused, {injected} commit failures injected; Reserved count always 0 or slot count"))
}

// Zero-loss hot swap ------------------------------------------------------

struct Schedule {
    registry: Registry,
    book: ContractBook,
    runtime: Runtime,
    log: EventLog,
    blueprint: BlueprintSpec,
}

fn swap_rig(r: &mut ChaCha8Rng) -> Schedule {
    let mut registry = Registry::new(0.1);
    let mut log = EventLog::new();
    for i in 0..4 {
        registry.register(part(&format!("cam-{i}"), ComponentKind::Sensing, Nature::Machine, "sense.vision.camera", "campus.main-entrance", 1.0 + f64::from(i)), 0, &mut log).unwrap();
        registry.register(part(&format!("det-{i}"), ComponentKind::Processing, Nature::Machine, "process.vision.person-detect", "cloud", 1.0 + f64::from(i)), 0, &mut log).unwrap();
        registry.register(part(&format!("siren-{i}"), ComponentKind::Actuation, Nature::Machine, "act.sound.alarm", "campus.office-7", 1.0 + f64::from(i)), 0, &mut log).unwrap();
    }
    let blueprint = parse_blueprint(PERSON_ALARM).unwrap();
    let mut book = ContractBook::new();
    let mut humans = ScriptedHumans;
    let mut p = Procurer { tactic: Tactic::default(), humans: &mut humans, faults: &mut NoFaults };
    let set = procure_system(&blueprint, &mut registry, &mut book, &mut p, 0, &mut log).unwrap();
    let mut runtime = Runtime::new(r.gen_range(64..4096));
    runtime.bind(&blueprint, &set.contracts, &book, 0, &mut log).unwrap();
    runtime.start(&blueprint.system_id, 0, &mut registry, &mut book, &mut log).unwrap();
    Schedule { registry, book, runtime, log, blueprint }
}

type AckedSeqs = BTreeMap<String, Vec<u64>>;

/// Runs one random schedule; returns acknowledged seqs per channel and the swaps completed.
fn swap_schedule(seed: u64) -> Result<(AckedSeqs, usize, usize), String> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let mut s = swap_rig(&mut r);
    let sys = s.blueprint.system_id.clone();
    let slots = ["sense", "detect", "alarm"];
    let emit_p = r.gen_range(0.05..0.95);
    let work_p = r.gen_range(0.05..0.95);
    let swap_p = r.gen_range(0.005..0.08);
    let dead_p = r.gen_range(0.0..1.0);
    let drain: Millis = r.gen_range(1..60);
    let steps = r.gen_range(20..400);
    let mut seen: BTreeMap<String, Vec<u64>> = BTreeMap::new();
    // slot -> (old component alive?, new contract)
    let mut swapping: BTreeMap<&str, bool> = BTreeMap::new();
    let (mut swaps, mut timeouts) = (0, 0);
    let mut now: Millis = 0;

    let consume = |s: &mut Schedule, seen: &mut BTreeMap<String, Vec<u64>>, dead: &BTreeSet<String>, now: Millis, limit: usize| {
        for _ in 0..limit {
            let p = s.runtime.pipeline(&sys).unwrap();
            let head = p
                .channels
                .values()
                .filter_map(|c| c.inflight.front().map(|(m, to)| (c.id.clone(), c.to_slot.clone(), m.seq, to.clone())))
                .find(|(_, _, _, to)| !dead.contains(to));
            let Some((ch, to_slot, seq, to)) = head else { return };
            s.runtime.ack(&sys, &ch, seq, &to).unwrap();
            seen.entry(ch).or_default().push(seq);
            if to_slot == "detect" {
                s.runtime.emit(&sys, "detect", DataType::Alarm, serde_json::json!(seq), None, now).unwrap();
            }
        }
    };

    for _ in 0..steps {
        now += 1;
        if r.gen_bool(emit_p) {
            let n = r.gen_range(1..=3);
            for _ in 0..n {
                s.runtime.emit(&sys, "sense", DataType::Image, serde_json::json!(now), None, now).map_err(|e| e.to_string())?;
            }
        }
        let dead: BTreeSet<String> = swapping
            .iter()
            .filter(|(_, alive)| !**alive)
            .map(|(slot, _)| s.runtime.swap_in_progress(&sys, slot).unwrap().old_component.clone())
            .collect();
        if r.gen_bool(work_p) {
            let n = r.gen_range(1..=4);
            consume(&mut s, &mut seen, &dead, now, n);
        }
        if r.gen_bool(swap_p) {
            let slot = *slots.choose(&mut r).unwrap();
            if !swapping.contains_key(slot) {
                let q = s.blueprint.effective_query(slot).unwrap();
                let old = s.runtime.pipeline(&sys).unwrap().components[slot].clone();
                let mut humans = ScriptedHumans;
                let mut p = Procurer { tactic: Tactic::default(), humans: &mut humans, faults: &mut NoFaults };
                if let Ok(new) = procure_slot(&sys, slot, &q, &[&old], &mut s.registry, &mut s.book, &mut p, now, &mut s.log) {
                    s.runtime.begin_swap(&sys, slot, &new, now, &mut s.book, &mut s.log).map_err(|e| e.to_string())?;
                    swapping.insert(slot, !r.gen_bool(dead_p));
                }
            }
        }
        for slot in swapping.keys().copied().collect::<Vec<_>>() {
            if let Some((rep, out)) = s
                .runtime
                .poll_swap(&sys, slot, now, drain, &mut s.registry, &mut s.book, &mut s.log)
                .map_err(|e| e.to_string())?
            {
                let bound = s.runtime.pipeline(&sys).unwrap().components[slot].clone();
                ensure(out.iter().all(|d| d.consumer == bound), || "resumed messages went to the old component".into())?;
                swapping.remove(slot);
                swaps += 1;
                timeouts += usize::from(rep.timed_out);
            }
        }
    }
    for slot in swapping.keys().copied().collect::<Vec<_>>() {
        s.runtime
            .poll_swap(&sys, slot, now + drain, drain, &mut s.registry, &mut s.book, &mut s.log)
            .map_err(|e| e.to_string())?
            .ok_or("swap did not complete after the drain timeout")?;
        swaps += 1;
    }
    consume(&mut s, &mut seen, &BTreeSet::new(), now, usize::MAX);
    ensure(s.runtime.unacked() == 0, || format!("{} unacknowledged", s.runtime.unacked()))?;
    ensure(s.runtime.messages_lost() == 0, || format!("{} lost", s.runtime.messages_lost()))?;
    for (id, c) in &s.runtime.pipeline(&sys).unwrap().channels {
        let n = seen.get(id).map_or(0, Vec::len) as u64;
        ensure(n == c.routed, || format!("{id}: {n} acknowledged of {} routed", c.routed))?;
    }
    Ok((seen, swaps, timeouts))
}

fn hot_swap() -> Verdict {
    let t0 = Instant::now();
    let (mut swaps, mut timeouts, mut msgs) = (0, 0, 0);
    for i in 0..SWAP_SCHEDULES {
        let (seen, n, t) = swap_schedule(i as u64).map_err(|e| format!("schedule {i}: {e}"))?;
        for (ch, seqs) in &seen {
            let expect: Vec<u64> = (1..=seqs.len() as u64).collect();
            ensure(*seqs == expect, || format!("schedule {i} {ch}: stream is not 1..n: {seqs:?}"))?;
            msgs += seqs.len();
        }
        swaps += n;
        timeouts += t;
    }
    let elapsed = t0.elapsed();
    ensure(timeouts > 0, || "no schedule exercised a dead old component".into())?;
    ensure(elapsed < SWAP_LIMIT, || format!("{elapsed:?} exceeds {SWAP_LIMIT:?}"))?;
    Ok(format!(
        "{SWAP_SCHEDULES} schedules, {swaps} swaps ({timeouts} via drain timeout), {msgs} messages, every stream 1..n, {:.2} s (limit {} s)",
        elapsed.as_secs_f64(),
        SWAP_LIMIT.as_secs()
    ))
}

// Replacement -------------------------------------------------------------

fn contract(price: f64, breach: f64, early: f64, end: Millis) -> Contract {
    let mut t = terms(price, 0.9, 100, 1.0, end);
    t.breach_penalty = breach;
    t.early_termination_penalty = early;
    Contract {
        contract_id: "c-old".into(),
        component_id: "old".into(),
        system_id: "s".into(),
        slot_id: "x".into(),
        nature: Nature::Machine,
        terms: t,
        state: ContractState::Serving,
        agreed_price: price,
        created_at: 0,
    }
}

fn market(prices: &[f64], reserve: f64) -> MarketSnapshot {
    let mut p = prices.to_vec();
    p.sort_by(f64::total_cmp);
    MarketSnapshot {
        quotes: p.iter().enumerate().map(|(i, p)| Quote { component_id: format!("m{i}"), price: *p }).collect(),
        reserve,
    }
}

/// Keep costs `p_old·H`; switching costs `p_new·H + penalty`, where a fresh
/// second-price procurement sets `p_new`.
fn replacement_oracle(c: &Contract, cond: Condition, m: &MarketSnapshot, h: f64, now: Millis) -> Result<(Option<String>, Option<Trigger>, f64), ()> {
    let forced = match cond {
        Condition::Faulty => Some(Trigger::Faulty),
        Condition::Unavailable => Some(Trigger::Unavailable),
        Condition::Breach(_) => Some(Trigger::SlaBreach),
        Condition::Healthy => (now >= c.terms.term.1).then_some(Trigger::ContractEnd),
    };
    let cheapest = m.quotes.iter().min_by(|a, b| a.price.total_cmp(&b.price)).map(|q| q.component_id.clone());
    if let Some(t) = forced {
        let candidate = cheapest.ok_or(())?;
        let pen = if t == Trigger::ContractEnd { 0.0 } else { c.terms.breach_penalty };
        return Ok((Some(candidate), Some(t), pen));
    }
    let mut qualified: Vec<f64> = m.quotes.iter().map(|q| q.price).filter(|p| *p <= m.reserve).collect();
    qualified.sort_by(f64::total_cmp);
    let p_new = match qualified.len() {
        0 => return Ok((None, None, 0.0)),
        1 => m.reserve,
        _ => qualified[1],
    };
    let keep = c.agreed_price * h;
    let switch = p_new * h + c.terms.early_termination_penalty;
    if switch < keep {
        Ok((cheapest, Some(Trigger::Economic), c.terms.early_termination_penalty))
    } else {
        Ok((None, None, 0.0))
    }
}

fn check_replacement(c: &Contract, cond: Condition, m: &MarketSnapshot, h: f64, now: Millis) -> Result<Option<Trigger>, String> {
    let got = decide_replacement(c, cond, m, h, now);
    let want = replacement_oracle(c, cond, m, h, now);
    match (got, want) {
        (Err(ReplacementError::NoCandidate(_)), Err(())) => Ok(None),
        (Ok(d), Ok((cand, trig, pen))) => {
            let got_cand = match &d.action {
                Action::Keep => None,
                Action::Replace { candidate } => Some(candidate.clone()),
            };
            ensure(got_cand == cand && d.trigger == trig && d.penalty_due == pen, || {
                format!("{cond:?} {m:?} H={h} now={now} price={}: got {d:?}, oracle {cand:?} {trig:?} {pen}", c.agreed_price)
            })?;
            Ok(trig)
        }
        (g, w) => Err(format!("{cond:?} {m:?}: got {g:?}, oracle {w:?}")),
    }
}

fn replacement() -> Verdict {
    let mut fired: BTreeMap<String, usize> = BTreeMap::new();
    let mut tally = |t: Option<Trigger>| *fired.entry(t.map_or("Keep".into(), |t| format!("{t:?}"))).or_default() += 1;

    // One fixture per trigger; forced exits go through even at a loss and a heavy penalty.
    let fixtures: [(Contract, Condition, MarketSnapshot, f64, Millis, Option<Trigger>); 6] = [
        (contract(1.0, 500.0, 50.0, 1_000_000), Condition::Faulty, market(&[9.0], 10.0), 100.0, 0, Some(Trigger::Faulty)),
        (contract(1.0, 500.0, 50.0, 1_000_000), Condition::Unavailable, market(&[9.0], 10.0), 100.0, 0, Some(Trigger::Unavailable)),
        (contract(1.0, 500.0, 50.0, 1000), Condition::Healthy, market(&[9.0], 10.0), 100.0, 1000, Some(Trigger::ContractEnd)),
        (
            contract(1.0, 500.0, 50.0, 1_000_000),
            Condition::Breach(BreachReason::LatencyExceeded),
            market(&[9.0], 10.0),
            100.0,
            0,
            Some(Trigger::SlaBreach),
        ),
        (contract(2.0, 5.0, 50.0, 1_000_000), Condition::Healthy, market(&[0.5, 1.0], 3.0), 100.0, 0, Some(Trigger::Economic)),
        (contract(2.0, 5.0, 150.0, 1_000_000), Condition::Healthy, market(&[0.5, 1.0], 3.0), 100.0, 0, None),
    ];
    for (c, cond, m, h, now, want) in &fixtures {
        let t = check_replacement(c, *cond, m, *h, *now)?;
        ensure(t == *want, || format!("fixture {cond:?}: trigger {t:?}, expected {want:?}"))?;
        tally(t);
    }

    let mut r = rng(6);
    let q = |r: &mut ChaCha8Rng, hi: u32| f64::from(r.gen_range(0..=hi)) * 0.25;
    for _ in 0..REPLACEMENT_INSTANCES {
        let end = r.gen_range(1000..100_000);
        let c = contract(q(&mut r, 40), q(&mut r, 80), q(&mut r, 800), end);
        let cond = match r.gen_range(0..8) {
            0 => Condition::Faulty,
            1 => Condition::Unavailable,
            2 => Condition::Breach(
                *[BreachReason::Unavailable, BreachReason::LatencyExceeded, BreachReason::QualityBelowFloor, BreachReason::Overflow]
                    .choose(&mut r)
                    .unwrap(),
            ),
            _ => Condition::Healthy,
        };
        let n = r.gen_range(0..=5);
        let prices: Vec<f64> = (0..n).map(|_| q(&mut r, 48)).collect();
        let m = market(&prices, q(&mut r, 48));
        let h = f64::from(r.gen_range(0..=500u32));
        let now = if r.gen_bool(0.1) { end + r.gen_range(0..10) } else { r.gen_range(0..end) };
        tally(check_replacement(&c, cond, &m, h, now)?);
    }
    let summary: Vec<String> = fired.iter().map(|(k, v)| format!("{k} {v}")).collect();
    Ok(format!("{REPLACEMENT_INSTANCES} instances + 6 trigger fixtures agree with the cost comparison ({})", summary.join(", ")))
}

// QoS ---------------------------------------------------------------------

fn qos() -> Verdict {
    let mut r = rng(7);
    let nasty = [f64::NAN, f64::INFINITY, f64::NEG_INFINITY, f64::MAX, -f64::MAX, -0.0, 1.0 + f64::EPSILON, 1e-300];
    let mut steps = 0;
    for seq in 0..1000 {
        let alpha = *[1e-9, 0.001, 0.05, 0.5, 1.0, 2.0, -1.0].choose(&mut r).unwrap();
        let prior = *[-5.0, 0.0, 0.5, 1.0, 7.0].choose(&mut r).unwrap();
        let mut est = QosEstimate::new(alpha, prior);
        let pattern = r.gen_range(0..3);
        for i in 0..r.gen_range(1..300) {
            let s = match pattern {
                0 => if i % 2 == 0 { QosSample::Failure } else { QosSample::Quality(f64::MAX) },
                1 => QosSample::Quality(*nasty.choose(&mut r).unwrap()),
                _ => match r.gen_range(0..3) {
                    0 => QosSample::Success,
                    1 => QosSample::Failure,
                    _ => QosSample::Quality(r.gen_range(-1e6..1e6)),
                },
            };
            est = estimate_qos(est, s);
            steps += 1;
            ensure((0.0..=1.0).contains(&est.reliability) && (0.0..=1.0).contains(&est.expected_quality), || {
                format!("sequence {seq} step {i}: {est:?}")
            })?;
        }
    }
    let mut total = 0.0;
    let mut inside = 0;
    for seed in 0..QOS_STREAMS {
        let mut s = ChaCha8Rng::seed_from_u64(seed);
        let mut est = QosEstimate::new(QOS_ALPHA, 1.0);
        for _ in 0..QOS_OBS {
            est = estimate_qos(est, if s.gen_bool(QOS_P) { QosSample::Success } else { QosSample::Failure });
        }
        total += est.reliability;
        inside += usize::from((QOS_BAND.0..=QOS_BAND.1).contains(&est.reliability));
    }
    let mean = total / QOS_STREAMS as f64;
    ensure((QOS_BAND.0..=QOS_BAND.1).contains(&mean), || format!("mean terminal reliability {mean} outside {QOS_BAND:?}"))?;
    Ok(format!(
        "{steps} adversarial updates stay in [0,1]; Bernoulli({QOS_P}) at α={QOS_ALPHA} after {QOS_OBS}: mean {mean:.4} over {QOS_STREAMS} streams in [{}, {}] ({inside}/{QOS_STREAMS} single streams in band)",
        QOS_BAND.0, QOS_BAND.1
    ))
}

// Goals -------------------------------------------------------------------

fn lexi_cmp(a: &[f64], b: &[f64]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        if (x - y).abs() > WEIGHT_TOL {
            return x.partial_cmp(y).unwrap();
        }
    }
    Ordering::Equal
}

fn argmax(goal: &CompositeGoal, candidates: &[BTreeMap<String, f64>]) -> Option<usize> {
    let scores: Vec<Vec<f64>> = candidates.iter().map(|c| goal.score(c)).collect();
    let best = (0..scores.len()).max_by(|&i, &j| lexi_cmp(&scores[i], &scores[j]).then(j.cmp(&i)))?;
    // Near-ties carry no information about invariance.
    let tied = (0..scores.len()).filter(|&i| i != best && lexi_cmp(&scores[i], &scores[best]) == Ordering::Equal).count();
    (tied == 0).then_some(best)
}

fn goals() -> Verdict {
    let vocab = MetricVocabulary::builtin();
    let metrics: Vec<String> = vocab.metrics.iter().cloned().collect();
    let mut r = rng(8);
    let (mut suppressed, mut compared) = (0, 0);
    for set in 0..GOAL_SETS {
        let n = r.gen_range(1..=8);
        let gs: Vec<Goal> = (0..n)
            .map(|i| Goal {
                goal_id: format!("g{i}"),
                kind: if r.gen_bool(0.3) { GoalKind::Dynamic } else { GoalKind::Preset },
                metric: metrics[r.gen_range(0..metrics.len().min(4))].clone(),
                direction: if r.gen_bool(0.5) { Direction::Minimize } else { Direction::Maximize },
                weight: r.gen_range(0.01..5.0),
                tier: r.gen_range(0..3),
                owner: "o".into(),
                energy_cost: if r.gen_bool(0.5) { 0.0 } else { r.gen_range(0.0..2.0) },
            })
            .collect();
        let cap = *[0.2, 0.5, 1.0].choose(&mut r).unwrap();
        let c = arbitrate(&gs, &vocab, cap);
        for t in &c.tiers {
            let mass: f64 = t.weights.values().map(|w| w.abs()).sum();
            ensure((mass - 1.0).abs() <= WEIGHT_TOL, || format!("set {set} tier {}: Σ|w| = {mass}", t.tier))?;
        }
        let gone: BTreeSet<&str> = c.suppressed.iter().map(|s| s.goal_id.as_str()).collect();
        let kept: Vec<&Goal> = gs.iter().filter(|g| !gone.contains(g.goal_id.as_str())).collect();
        for (i, a) in kept.iter().enumerate() {
            for b in &kept[i + 1..] {
                ensure(!(a.metric == b.metric && a.direction != b.direction), || {
                    format!("set {set}: {} and {} both survive", a.goal_id, b.goal_id)
                })?;
            }
        }
        ensure(c.conflicts.iter().all(|e| format!("{:?}", e.kind) != "MutuallyImpossible"), || {
            format!("set {set}: composite reports {:?}", c.conflicts)
        })?;
        suppressed += gone.len();

        let scale: BTreeMap<u32, f64> = (0..3).map(|t| (t, 10f64.powf(r.gen_range(-2.0..2.0)))).collect();
        let scaled: Vec<Goal> = gs.iter().map(|g| Goal { weight: g.weight * scale[&g.tier], ..g.clone() }).collect();
        let c2 = arbitrate(&scaled, &vocab, cap);
        ensure(c.tiers.len() == c2.tiers.len(), || format!("set {set}: tier count changed under scaling"))?;
        for (a, b) in c.tiers.iter().zip(&c2.tiers) {
            ensure(a.tier == b.tier && a.weights.keys().eq(b.weights.keys()), || format!("set {set}: tier shape changed"))?;
            for (m, w) in &a.weights {
                ensure((w - b.weights[m]).abs() <= WEIGHT_TOL, || format!("set {set} {m}: {w} vs {} after scaling", b.weights[m]))?;
            }
        }
        let candidates: Vec<BTreeMap<String, f64>> =
            (0..6).map(|_| metrics.iter().map(|m| (m.clone(), r.gen_range(0.0..100.0))).collect()).collect();
        if let (Some(a), b) = (argmax(&c, &candidates), argmax(&c2, &candidates)) {
            ensure(Some(a) == b, || format!("set {set}: argmax {a} became {b:?}"))?;
            compared += 1;
        }
    }
    Ok(format!(
        "{GOAL_SETS} goal sets: Σ|w| = 1 ± {WEIGHT_TOL:e} per tier, composite and argmax ({compared} compared) invariant under tier scaling, {suppressed} impossible goals suppressed, none survive"
    ))
}

// End-to-end and replay ---------------------------------------------------

struct Runs {
    controlled: Vec<(ScenarioReport, String)>,
    baseline: Vec<ScenarioReport>,
    others: Vec<(String, u64, ScenarioReport)>,
}

fn camera_swaps(rep: &ScenarioReport) -> usize {
    rep.log
        .records()
        .iter()
        .filter(|e| e.kind == "SwapCompleted" && e.payload["slot_id"].as_str().is_some_and(|s| s.starts_with("cam-")))
        .count()
}

fn run_all() -> Result<(Runs, Duration), String> {
    let t0 = Instant::now();
    let cfg = ScenarioConfig::parse(CONGESTED).map_err(|e| e.to_string())?;
    let base = cfg.baseline();
    let seeds = cfg.seed_list();
    ensure(seeds.len() == E2E_SEEDS, || format!("fixture lists {} seeds", seeds.len()))?;
    let mut runs = Runs { controlled: Vec::new(), baseline: Vec::new(), others: Vec::new() };
    for &seed in &seeds {
        let a = run_scenario(&cfg, seed).map_err(|e| e.to_string())?;
        let b = run_scenario(&cfg, seed).map_err(|e| e.to_string())?;
        runs.controlled.push((a, b.log_jsonl()));
        runs.baseline.push(run_scenario(&base, seed).map_err(|e| e.to_string())?);
    }
    for (name, text) in FIXTURES.iter().filter(|(n, _)| *n != "congested") {
        let cfg = ScenarioConfig::parse(text).map_err(|e| e.to_string())?;
        for seed in cfg.seed_list() {
            runs.others.push((name.to_string(), seed, run_scenario(&cfg, seed).map_err(|e| e.to_string())?));
        }
    }
    Ok((runs, t0.elapsed()))
}

fn end_to_end(runs: &Runs, elapsed: Duration) -> Verdict {
    let mut margins = Vec::new();
    for ((rep, again), base) in runs.controlled.iter().zip(&runs.baseline) {
        let seed = rep.seed;
        ensure(rep.log_jsonl() == *again, || format!("seed {seed}: repeated run wrote a different log"))?;
        ensure(rep.metrics.messages_lost == 0, || format!("seed {seed}: {} messages lost", rep.metrics.messages_lost))?;
        ensure(camera_swaps(rep) >= 1, || format!("seed {seed}: no completed camera hot swap"))?;
        let (c, b) = (rep.metrics.avg_transit_time, base.metrics.avg_transit_time);
        ensure(c <= b, || format!("seed {seed}: controlled avg_transit_time {c:.2} > baseline {b:.2}"))?;
        margins.push(b - c);
    }
    let lo = margins.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = margins.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(format!(
        "{} seeds: logs byte-identical, 0 lost, camera swap on every seed, controlled beats baseline by {lo:.1}..{hi:.1} s avg transit ({:.1} s for {} runs)",
        margins.len(),
        elapsed.as_secs_f64(),
        3 * margins.len() + runs.others.len()
    ))
}

fn replay(runs: &Runs) -> Verdict {
    let all = runs
        .controlled
        .iter()
        .map(|(r, _)| ("congested".to_string(), r))
        .chain(runs.baseline.iter().map(|r| ("congested/baseline".to_string(), r)))
        .chain(runs.others.iter().map(|(n, _, r)| (n.clone(), r)));
    let mut n = 0;
    let mut fixtures = BTreeSet::new();
    for (name, rep) in all {
        let h = replay_text(&rep.log_jsonl()).map_err(|e| format!("{name} seed {}: {e}", rep.seed))?.hash();
        ensure(h == rep.state_hash, || format!("{name} seed {}: replay {h} vs live {}", rep.seed, rep.state_hash))?;
        fixtures.insert(name);
        n += 1;
    }
    ensure(fixtures.len() == FIXTURES.len() + 1, || format!("covered {fixtures:?}"))?;
    Ok(format!("{n} logs over {} fixtures (incl. baseline): replay hash equals live final hash", FIXTURES.len()))
}

// L0 payment --------------------------------------------------------------

fn worker(id: &str, latency: Millis, quality: f64, error_rate: f64) -> WorkerProfile {
    WorkerProfile {
        worker_id: id.into(),
        capability: "sense.report".into(),
        reservation_price: 0.0,
        accept_probability: 1.0,
        latency: (latency, latency),
        error_rate,
        quality,
        do_not_disturb: false,
    }
}

fn settle(profile: WorkerProfile, deadline: Millis, floor: f64) -> Result<(bool, f64, PaymentReason), String> {
    let mut g = Gateway::new(0.5);
    let mut log = EventLog::new();
    let id = profile.worker_id.clone();
    let mut crowd = SimulatedCrowd::new(vec![profile], 11);
    crowd.join(&mut g, 0, &mut log);
    let offer = TaskOffer {
        task_id: g.next_task_id(),
        description: "report occupancy".into(),
        input: serde_json::json!({ "subject": "s" }),
        offered_price: 3.0,
        deadline,
        sla: SlaSummary { max_latency: deadline, min_quality: floor },
        countdown_start: 0,
    };
    let task = g.offer_task(&id, offer, &mut log).map_err(|e| e.to_string())?;
    crowd.pump(&mut g, 0, deadline + 10, &mut log);
    let v = g.task(&task).and_then(|t| t.verdict.clone()).ok_or("no verdict")?;
    Ok((v.paid, v.amount, v.reason))
}

fn wire_settle(deadline: Millis, floor: f64, at: Millis, quality: f64) -> Result<(bool, PaymentReason), String> {
    let mut g = Gateway::new(0.5);
    let mut log = EventLog::new();
    g.handle("w", WireMessage::Hello { worker_id: "w".into(), resume_token: None, do_not_disturb: false }, 0, &mut log);
    let offer = TaskOffer {
        task_id: g.next_task_id(),
        description: "report occupancy".into(),
        input: serde_json::json!({ "subject": "s" }),
        offered_price: 3.0,
        deadline,
        sla: SlaSummary { max_latency: deadline, min_quality: floor },
        countdown_start: 0,
    };
    let task = g.offer_task("w", offer, &mut log).map_err(|e| e.to_string())?;
    let line = |m: WireMessage| serde_json::to_string(&m).unwrap();
    g.handle_line("w", &line(WireMessage::OfferResponse { task_id: task.clone(), response: clic_core::gateway::protocol::Response::Accept }), 0, &mut log);
    g.handle_line("w", &line(WireMessage::TaskResult { task_id: task.clone(), payload: serde_json::json!(0.5), quality: Some(quality) }), at, &mut log);
    let v = g.task(&task).and_then(|t| t.verdict.clone()).ok_or("no verdict")?;
    Ok((v.paid, v.reason))
}

fn payment() -> Verdict {
    let mut cases = 0;
    for deadline in [1, 2, 10, 999, 1000, 30_000] {
        for floor in [0.0, 0.3, 0.5, 0.8, 1.0] {
            let at = settle(worker("on-time", deadline, floor, 0.0), deadline, floor)?;
            ensure(at == (true, 3.0, PaymentReason::OnTime), || format!("ts = deadline {deadline}, q = floor {floor}: {at:?}"))?;
            let late = settle(worker("late", deadline + 1, floor, 0.0), deadline, floor)?;
            ensure(late == (false, 0.0, PaymentReason::AfterDeadline), || format!("ts = deadline+1 {deadline}: {late:?}"))?;
            cases += 2;
            if floor > 0.0 {
                let poor = settle(worker("poor", deadline, floor, 1.0), deadline, floor)?;
                ensure(poor == (false, 0.0, PaymentReason::QualityRejected), || format!("q < floor {floor}: {poor:?}"))?;
                let below = floor.next_down();
                let w = wire_settle(deadline, floor, deadline, below)?;
                ensure(w == (false, PaymentReason::QualityRejected), || format!("q = {below} < floor {floor}: {w:?}"))?;
                cases += 2;
            }
            let w = wire_settle(deadline, floor, deadline, floor)?;
            ensure(w == (true, PaymentReason::OnTime), || format!("wire q = floor {floor}: {w:?}"))?;
            let w = wire_settle(deadline, floor, deadline + 1, 1.0)?;
            ensure(w == (false, PaymentReason::AfterDeadline), || format!("wire ts = deadline+1: {w:?}"))?;
            cases += 2;
        }
    }
    Ok(format!("{cases} boundary settlements: ts = deadline pays, deadline+1 does not; quality at floor pays, below does not"))
}

// -------------------------------------------------------------------------

fn run(name: &str, f: impl FnOnce() -> Verdict) -> bool {
    let t0 = Instant::now();
    let v = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
    });
    let secs = t0.elapsed().as_secs_f64();
    match v {
        Ok(detail) => {
            println!("PASS  {name:<24} {detail}  [{secs:.2}s]");
            true
        }
        Err(why) => {
            println!("FAIL  {name:<24} {why}  [{secs:.2}s]");
            false
        }
    }
}

fn main() {
    let t0 = Instant::now();
    let mut ok = vec![
        run("typology-matching", matching),
        run("auction", auction),
        run("negotiation", negotiation),
        run("procurement-atomicity", atomicity),
        run("zero-loss-hot-swap", hot_swap),
        run("replacement-economics", replacement),
        run("qos-estimator", qos),
        run("goal-arbitration", goals),
    ];
    match run_all() {
        Ok((runs, elapsed)) => {
            ok.push(run("end-to-end-scenario", || end_to_end(&runs, elapsed)));
            ok.push(run("replay", || replay(&runs)));
        }
        Err(e) => {
            for name in ["end-to-end-scenario", "replay"] {
                println!("FAIL  {name:<24} scenario run failed: {e}");
                ok.push(false);
            }
        }
    }
    ok.push(run("l0-payment", payment));
    let total = t0.elapsed();
    ok.push(run("suite-duration", || {
        ensure(total < SUITE_LIMIT, || format!("{total:?} exceeds {SUITE_LIMIT:?}"))?;
        Ok(format!("{:.1} s (limit {} s)", total.as_secs_f64(), SUITE_LIMIT.as_secs()))
    }));
    let passed = ok.iter().filter(|b| **b).count();
    println!("acceptance: {passed}/{} criteria passed", ok.len());
    if passed != ok.len() {
        std::process::exit(1);
    }
}
