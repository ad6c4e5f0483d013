//! Simulated human workers speaking the wire protocol.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::protocol::{CounterTerms, Response, SlaSummary, WireMessage};
use super::{Gateway, OfferOutcome, TaskOffer};
use crate::component::Millis;
use crate::eventlog::EventLog;
use crate::procurement::{
    negotiate, BuyerLimits, HumanMarket, NegotiationTranscript, Offer, Seller, SellerMove, Tactic,
};
use crate::registry::PoolEntry;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkerProfile {
    pub worker_id: String,
    pub capability: String,
    pub reservation_price: f64,
    pub accept_probability: f64,
    /// Inclusive range of task completion times, in milliseconds.
    pub latency: (Millis, Millis),
    pub error_rate: f64,
    /// Quality of non-erroneous work.
    #[serde(default = "one")]
    pub quality: f64,
    #[serde(default)]
    pub do_not_disturb: bool,
}

/// Half-width of the uniform noise on observation reports.
pub const OBSERVATION_NOISE: f64 = 0.2;

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone)]
pub struct SimulatedWorker {
    pub profile: WorkerProfile,
    rng: ChaCha8Rng,
}

impl SimulatedWorker {
    pub fn new(profile: WorkerProfile, seed: u64) -> Self {
        Self { profile, rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    /// Replies to one gateway message as `(delay, reply)` pairs.
    fn react(&mut self, msg: &WireMessage, floors: &mut BTreeMap<String, f64>) -> Vec<(Millis, WireMessage)> {
        let p = self.profile.clone();
        match msg {
            WireMessage::TaskOffer { task_id, offered_price, sla, .. } => {
                floors.insert(task_id.clone(), sla.min_quality);
                let response = if *offered_price + 1e-9 >= p.reservation_price {
                    if self.rng.gen_bool(p.accept_probability.clamp(0.0, 1.0)) {
                        Response::Accept
                    } else {
                        Response::Decline
                    }
                } else {
                    Response::Counter(CounterTerms { price: p.reservation_price, quality: Some(p.quality) })
                };
                vec![(0, WireMessage::OfferResponse { task_id: task_id.clone(), response })]
            }
            WireMessage::TaskInput { task_id, payload } => {
                let floor = floors.get(task_id).copied().unwrap_or(0.0);
                let (lo, hi) = (p.latency.0, p.latency.1.max(p.latency.0));
                let delay = self.rng.gen_range(lo..=hi);
                let quality = if self.rng.gen_bool(p.error_rate.clamp(0.0, 1.0)) {
                    floor * self.rng.gen_range(0.0..1.0)
                } else {
                    p.quality.max(floor)
                };
                // Observation tasks show the worker a true value; the report is noisy.
                let answer = match payload.get("observed").and_then(Value::as_f64) {
                    Some(truth) => {
                        let noise = self.rng.gen_range(-OBSERVATION_NOISE..=OBSERVATION_NOISE);
                        json!({ "subject": payload.get("subject"), "value": (truth + noise).clamp(0.0, 1.0) })
                    }
                    None => json!({ "ok": true }),
                };
                vec![(delay, WireMessage::TaskResult { task_id: task_id.clone(), payload: answer, quality: Some(quality) })]
            }
            _ => Vec::new(),
        }
    }
}

/// A set of simulated workers plus their pending replies, ordered by time.
#[derive(Debug, Clone, Default)]
pub struct SimulatedCrowd {
    workers: BTreeMap<String, SimulatedWorker>,
    floors: BTreeMap<String, f64>,
    queue: BTreeMap<(Millis, u64), (String, String)>,
    next: u64,
    /// Every line the crowd sent, as `(ts, worker, line)`.
    pub wire: Vec<(Millis, String, String)>,
}

impl SimulatedCrowd {
    pub fn new(profiles: Vec<WorkerProfile>, seed: u64) -> Self {
        let workers = profiles
            .into_iter()
            .enumerate()
            .map(|(i, p)| (p.worker_id.clone(), SimulatedWorker::new(p, seed.wrapping_add(i as u64))))
            .collect();
        Self { workers, ..Self::default() }
    }

    pub fn profiles(&self) -> impl Iterator<Item = &WorkerProfile> {
        self.workers.values().map(|w| &w.profile)
    }

    fn schedule(&mut self, at: Millis, worker: &str, msg: &WireMessage) {
        self.next += 1;
        let line = serde_json::to_string(msg).expect("wire messages serialize");
        self.queue.insert((at, self.next), (worker.to_string(), line));
    }

    /// Every worker says hello at `now`.
    pub fn join(&mut self, gateway: &mut Gateway, now: Millis, log: &mut EventLog) {
        let ids: Vec<String> = self.workers.keys().cloned().collect();
        for id in ids {
            let dnd = self.workers[&id].profile.do_not_disturb;
            self.schedule(now, &id, &WireMessage::Hello { worker_id: id.clone(), resume_token: None, do_not_disturb: dnd });
        }
        self.pump(gateway, now, now, log);
    }

    fn collect(&mut self, gateway: &mut Gateway, now: Millis) {
        let ids: Vec<String> = self.workers.keys().cloned().collect();
        for id in ids {
            for msg in gateway.take_outbox(&id) {
                let w = self.workers.get_mut(&id).expect("listed");
                for (delay, reply) in w.react(&msg, &mut self.floors) {
                    self.schedule(now + delay, &id, &reply);
                }
            }
        }
    }

    /// Delivers replies due up to `until`, advancing the gateway clock.
    pub fn pump(&mut self, gateway: &mut Gateway, now: Millis, until: Millis, log: &mut EventLog) {
        self.collect(gateway, now);
        while let Some(entry) = self.queue.first_entry() {
            let (at, _) = *entry.key();
            if at > until {
                break;
            }
            let (worker, line) = entry.remove();
            gateway.handle_line(&worker, &line, at, log);
            self.wire.push((at, worker, line));
            self.collect(gateway, at);
        }
    }
}

/// Negotiates with human candidates through the gateway: each buyer round is
/// one terms-only task offer.
pub struct GatewayMarket<'a> {
    pub gateway: &'a mut Gateway,
    pub crowd: &'a mut SimulatedCrowd,
    /// Countdown for each round's offer.
    pub window: Millis,
}

struct WireSeller<'a, 'b> {
    market: &'a mut GatewayMarket<'b>,
    worker: String,
    sla: SlaSummary,
    clock: Millis,
    log: &'a mut EventLog,
}

impl Seller for WireSeller<'_, '_> {
    fn respond(&mut self, _round: u32, buyer_offer: &Offer) -> SellerMove {
        let m = &mut *self.market;
        let start = self.clock;
        let deadline = start + m.window;
        let offer = TaskOffer {
            task_id: m.gateway.next_task_id(),
            description: "contract terms".into(),
            input: Value::Null,
            offered_price: buyer_offer.price,
            deadline,
            sla: self.sla,
            countdown_start: start,
        };
        let Ok(id) = m.gateway.offer_task(&self.worker, offer, self.log) else {
            return SellerMove::Withdraw;
        };
        m.crowd.pump(m.gateway, start, deadline, self.log);
        self.clock = deadline + 1;
        match m.gateway.outcome(&id, self.clock, self.log) {
            Ok(Some(OfferOutcome::Accepted)) => SellerMove::Accept,
            Ok(Some(OfferOutcome::Counter { price, quality })) => SellerMove::Counter(Offer { price, quality }),
            _ => SellerMove::Withdraw,
        }
    }
}

impl HumanMarket for GatewayMarket<'_> {
    fn negotiate(
        &mut self,
        candidate: &PoolEntry,
        tactic: &Tactic,
        limits: &BuyerLimits,
        now: Millis,
        log: &mut EventLog,
    ) -> NegotiationTranscript {
        let terms = &candidate.descriptor.posted_terms;
        let sla = SlaSummary { max_latency: terms.max_latency, min_quality: limits.min_quality };
        let mut seller = WireSeller { market: self, worker: candidate.descriptor.id.clone(), sla, clock: now, log };
        negotiate(tactic, limits, &mut seller)
    }
}
