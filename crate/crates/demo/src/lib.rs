//! Browser bindings for three core operations: a second-price reverse
//! auction, an alternating-offers negotiation, and a signalised traffic grid
//! that can switch between fixed and occupancy-driven splits.
//!
//! Every export takes and returns JSON text so the page needs no glue beyond
//! `JSON.parse`. The plain Rust functions are what the tests call.

use clic_core::procurement::negotiation::{concession, Actor, NegotiationTranscript, UtilityWeights};
use clic_core::procurement::{negotiate, run_reverse_auction, Bid, BuyerLimits, Tactic, TimeDependentSeller};
use clic_core::scenario::control::split_for;
use clic_core::scenario::{run_scenario, Node, RoadParams, RoadWorld, ScenarioConfig, SignalParams, SignalPlan};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

fn to_text(v: &Value) -> String {
    serde_json::to_string(v).expect("json values serialize")
}

fn fail(msg: impl std::fmt::Display) -> Value {
    json!({ "error": msg.to_string() })
}

// Auction -----------------------------------------------------------------

pub fn auction_value(bids: &[Bid], reserve: f64) -> Value {
    match run_reverse_auction(bids, reserve) {
        Ok(r) => json!({ "winner": r.winner, "payment": r.payment, "qualified": r.qualified }),
        Err(e) => fail(e),
    }
}

/// `bids` is `[{"component_id": "...", "bid": 1.5}, ...]`.
#[wasm_bindgen]
pub fn auction(bids: &str, reserve: f64) -> String {
    let v = match serde_json::from_str::<Vec<Bid>>(bids) {
        Ok(b) => auction_value(&b, reserve),
        Err(e) => fail(e),
    };
    to_text(&v)
}

// Negotiation -------------------------------------------------------------

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct NegotiationInput {
    pub buyer_beta: f64,
    pub seller_beta: f64,
    pub rounds: u32,
    pub grain: f64,
    pub opening_bid: f64,
    pub max_price: f64,
    pub seller_opening: f64,
    pub reservation: f64,
}

impl Default for NegotiationInput {
    fn default() -> Self {
        Self {
            buyer_beta: 1.0,
            seller_beta: 1.0,
            rounds: 8,
            grain: 0.25,
            opening_bid: 0.0,
            max_price: 6.0,
            seller_opening: 10.0,
            reservation: 3.0,
        }
    }
}

pub fn run_negotiation(i: &NegotiationInput) -> NegotiationTranscript {
    let tactic = Tactic {
        beta: i.buyer_beta,
        rounds: i.rounds,
        weights: UtilityWeights::default(),
        grain: i.grain,
        opening_price: i.opening_bid,
    };
    let limits = BuyerLimits { max_price: i.max_price, min_quality: 0.5, target_quality: 0.9 };
    let mut seller = TimeDependentSeller {
        reservation: i.reservation,
        opening: i.seller_opening,
        quality: 0.9,
        beta: i.seller_beta,
        rounds: i.rounds,
        grain: i.grain,
        weights: UtilityWeights::default(),
    };
    negotiate(&tactic, &limits, &mut seller)
}

/// Unquantised concession curves of both sides, sampled per round.
pub fn curves(i: &NegotiationInput) -> (Vec<f64>, Vec<f64>) {
    (0..=i.rounds)
        .map(|k| {
            let b = i.opening_bid + (i.max_price - i.opening_bid) * concession(k, i.rounds, i.buyer_beta);
            let s = i.seller_opening - (i.seller_opening - i.reservation) * concession(k, i.rounds, i.seller_beta);
            (b, s)
        })
        .unzip()
}

pub fn negotiation_value(i: &NegotiationInput) -> Value {
    let t = run_negotiation(i);
    let side = |a: Actor| t.rounds.iter().filter(|m| m.actor == a).map(|m| m.offer.price).collect::<Vec<_>>();
    let (buyer_curve, seller_curve) = curves(i);
    json!({
        "buyer": side(Actor::Buyer),
        "seller": side(Actor::Seller),
        "buyer_curve": buyer_curve,
        "seller_curve": seller_curve,
        "agreement": t.agreement().map(|o| o.price),
        "moves": t.rounds.len(),
        "transcript": t,
    })
}

/// `input` is a JSON object with any of the [`NegotiationInput`] fields.
#[wasm_bindgen]
pub fn negotiation(input: &str) -> String {
    let mut base = serde_json::to_value(NegotiationInput::default()).expect("inputs serialize");
    let v = match serde_json::from_str::<Value>(input) {
        Ok(Value::Object(over)) => {
            base.as_object_mut().expect("object").extend(over);
            match serde_json::from_value::<NegotiationInput>(base) {
                Ok(i) => negotiation_value(&i),
                Err(e) => fail(e),
            }
        }
        Ok(_) => fail("expected a JSON object"),
        Err(e) => fail(e),
    };
    to_text(&v)
}

// Traffic grid ------------------------------------------------------------

const ROAD: RoadParams = RoadParams { length_m: 200.0, capacity: 20, free_speed_mps: 10.0, headway_s: 2.0, lost_time_s: 2.0 };
const SENSE_EVERY_S: f64 = 5.0;

#[wasm_bindgen]
pub struct TrafficGrid {
    world: RoadWorld,
    rng: ChaCha8Rng,
    arrivals: Poisson<f64>,
    ns_share: f64,
    adaptive: bool,
    params: SignalParams,
    next_sense: f64,
}

#[wasm_bindgen]
impl TrafficGrid {
    #[wasm_bindgen(constructor)]
    pub fn new(rows: usize, cols: usize, arrival_rate: f64, ns_share: f64, seed: u64) -> TrafficGrid {
        let (rows, cols) = (rows.clamp(2, 16), cols.clamp(2, 16));
        let params = SignalParams::default();
        TrafficGrid {
            world: RoadWorld::new(rows, cols, ROAD, SignalPlan::fixed(0.5, params.cycle_s)),
            rng: ChaCha8Rng::seed_from_u64(seed),
            arrivals: Poisson::new(arrival_rate.clamp(1e-6, 50.0)).expect("positive rate"),
            ns_share: ns_share.clamp(0.0, 1.0),
            adaptive: false,
            params,
            next_sense: 0.0,
        }
    }

    pub fn set_adaptive(&mut self, on: bool) {
        self.adaptive = on;
        if !on {
            for p in &mut self.world.plans {
                *p = SignalPlan::fixed(0.5, self.params.cycle_s);
            }
        }
    }

    /// Advances `seconds` of simulated time in one-second steps.
    pub fn advance(&mut self, seconds: u32) {
        for _ in 0..seconds {
            self.spawn();
            if self.adaptive && self.world.clock_s >= self.next_sense {
                self.retime();
                self.next_sense = self.world.clock_s + SENSE_EVERY_S;
            }
            self.world.step(1.0);
        }
    }

    /// Segment occupancies, per-node splits and running totals.
    pub fn snapshot(&self) -> String {
        to_text(&self.snapshot_value())
    }
}

impl TrafficGrid {
    fn spawn(&mut self) {
        let (rows, cols) = (self.world.rows, self.world.cols);
        for _ in 0..self.arrivals.sample(&mut self.rng) as u64 {
            let ns = self.rng.gen_bool(self.ns_share);
            let flip = self.rng.gen_bool(0.5);
            let (origin, dest) = if ns {
                let (r0, r1) = if flip { (0, rows - 1) } else { (rows - 1, 0) };
                (Node { r: r0, c: self.rng.gen_range(0..cols) }, Node { r: r1, c: self.rng.gen_range(0..cols) })
            } else {
                let (c0, c1) = if flip { (0, cols - 1) } else { (cols - 1, 0) };
                (Node { r: self.rng.gen_range(0..rows), c: c0 }, Node { r: self.rng.gen_range(0..rows), c: c1 })
            };
            self.world.request(origin, dest, false, false);
        }
    }

    fn retime(&mut self) {
        let nodes: Vec<Node> = self.world.nodes().collect();
        for n in nodes {
            let (ns, ew) = self.world.approaches(n);
            let mean = |v: &[usize]| {
                if v.is_empty() {
                    0.0
                } else {
                    v.iter().map(|&s| self.world.occupancy(s)).sum::<f64>() / v.len() as f64
                }
            };
            let i = self.world.node_index(n);
            self.world.plans[i] = SignalPlan { ns_split: split_for(mean(&ns), mean(&ew), &self.params), cycle_s: self.params.cycle_s };
        }
    }

    pub fn world(&self) -> &RoadWorld {
        &self.world
    }

    pub fn snapshot_value(&self) -> Value {
        let w = &self.world;
        let segments: Vec<Value> = w
            .segments
            .iter()
            .enumerate()
            .map(|(i, s)| json!({ "from": [s.from.r, s.from.c], "to": [s.to.r, s.to.c], "occupancy": w.occupancy(i) }))
            .collect();
        let done = w.finished();
        let mean_transit = if done.is_empty() {
            0.0
        } else {
            done.iter().filter_map(|c| c.done_at.map(|t| t - c.requested_at)).sum::<f64>() / done.len() as f64
        };
        json!({
            "rows": w.rows,
            "cols": w.cols,
            "clock_s": w.clock_s,
            "adaptive": self.adaptive,
            "segments": segments,
            "ns_split": w.plans.iter().map(|p| p.ns_split).collect::<Vec<_>>(),
            "in_flight": w.in_flight(),
            "waiting": w.pending(),
            "arrived": done.len(),
            "mean_transit_s": mean_transit,
        })
    }
}

// Full scenario -----------------------------------------------------------

pub fn compare_value(scenario: &str, seed: u64) -> Value {
    let cfg = match ScenarioConfig::parse(scenario) {
        Ok(c) => c,
        Err(e) => return fail(e),
    };
    match (run_scenario(&cfg, seed), run_scenario(&cfg.baseline(), seed)) {
        (Ok(c), Ok(b)) => json!({
            "scenario": cfg.name,
            "seed": seed,
            "controlled": c.metrics,
            "baseline": b.metrics,
            "state_hash": c.state_hash,
            "records": c.log.len(),
        }),
        (Err(e), _) | (_, Err(e)) => fail(e),
    }
}

/// Runs a scenario document with and without control; an empty string picks
/// the bundled congested grid.
#[wasm_bindgen]
pub fn compare_scenario(scenario: &str, seed: u64) -> String {
    let text = if scenario.trim().is_empty() { clic_core::scenario::CONGESTED } else { scenario };
    to_text(&compare_value(text, seed))
}
