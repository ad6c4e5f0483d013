//! Smart-city traffic scenario: a road grid sensed and actuated through a
//! procured CLIC system, with scheduled faults and paired baseline runs.

pub mod control;
pub mod world;

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::blueprint::{BlueprintSpec, Edge, Slot, BLUEPRINT_SCHEMA};
use crate::component::{
    AttrPredicate, ComponentDescriptor, ComponentKind, DataType, Millis, NatureConstraint, SlotQuery,
};
use crate::config::Config;
use crate::eventlog::{replay_text, EventLog};
use crate::gateway::protocol::{PaymentReason, SlaSummary};
use crate::gateway::{GatewayEffect, SimulatedCrowd, TaskOffer, TaskState, WorkerProfile};
use crate::goals::Goal;
use crate::monitor::sla::ObsKind;
use crate::orchestrator::{Humans, Orchestrator, ReviewOutcome, SubmitError};
use crate::procurement::{NoFaults, ProcureError};
use crate::runtime::{Delivery, Phase};

pub use control::{fuse_occupancy, optimize_signals, FusionError, OccupancyReport, SignalParams};
pub use world::{Node, RoadParams, RoadWorld, SignalPlan};

pub const SCENARIO_SCHEMA: &str = "clic/scenario/v1";
pub const SYSTEM_ID: &str = "traffic-control";
pub const CONGESTED: &str = include_str!("../../data/scenarios/congested.json");
pub const DEGRADED: &str = include_str!("../../data/scenarios/degraded-4x4.json");

/// Every shipped scenario, by file stem.
pub const FIXTURES: [(&str, &str); 2] = [("congested", CONGESTED), ("degraded-4x4", DEGRADED)];

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    pub rows: usize,
    pub cols: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Demand {
    /// Share of trips crossing north-south.
    pub ns_share: f64,
    /// Drivers running the participant app.
    pub participant_share: f64,
    /// Non-participants that follow the boards.
    pub board_compliance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlConfig {
    #[serde(default = "yes")]
    pub enabled: bool,
    pub signals: SignalParams,
    pub sensing_period_s: u64,
    pub report_period_s: u64,
    /// Reports older than this are left out of fusion.
    pub stale_s: u64,
    /// Camera noise half-width.
    pub camera_noise: f64,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FaultAction {
    Kill,
    Degrade,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Fault {
    pub t_s: u64,
    pub component_id: String,
    pub action: FaultAction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoliceConfig {
    pub intersection: Node,
    /// Stop-line queue on one axis that makes the officer wave it through.
    pub queue_threshold: usize,
    #[serde(default = "police_split")]
    pub split: f64,
}

fn police_split() -> f64 {
    0.8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(rename = "$schema", default)]
    pub schema: String,
    pub name: String,
    pub grid: Grid,
    pub road: RoadParams,
    /// Trip requests per second.
    pub arrival_rate: f64,
    pub demand: Demand,
    pub duration_s: u64,
    /// Procurement happens before this.
    pub start_s: u64,
    pub control: ControlConfig,
    pub pool: Vec<ComponentDescriptor>,
    #[serde(default)]
    pub workers: Vec<WorkerProfile>,
    #[serde(default)]
    pub fault_schedule: Vec<Fault>,
    #[serde(default)]
    pub goals: Vec<Goal>,
    #[serde(default)]
    pub police: Option<PoliceConfig>,
    pub seed: u64,
    #[serde(default)]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub clic: Config,
    #[serde(default = "one")]
    pub slot_rate: f64,
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("scenario config: {0}")]
    Config(String),
    #[error(transparent)]
    Procure(#[from] ProcureError),
    #[error("runtime: {0}")]
    Runtime(String),
}

impl From<SubmitError> for ScenarioError {
    fn from(e: SubmitError) -> Self {
        match e {
            SubmitError::Procure(p) => ScenarioError::Procure(p),
            SubmitError::Runtime(r) => ScenarioError::Runtime(r.to_string()),
        }
    }
}

impl ScenarioConfig {
    pub fn parse(text: &str) -> Result<Self, ScenarioError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| ScenarioError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn congested() -> Self {
        Self::parse(CONGESTED).expect("shipped scenario parses")
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |m: &str| Err(ScenarioError::Config(m.to_string()));
        if !self.schema.is_empty() && self.schema != SCENARIO_SCHEMA {
            return bad("unknown $schema");
        }
        if self.grid.rows < 2 || self.grid.cols < 2 {
            return bad("grid must be at least 2x2");
        }
        let r = &self.road;
        if !(r.length_m > 0.0 && r.free_speed_mps > 0.0 && r.headway_s > 0.0 && r.capacity > 0 && r.lost_time_s >= 0.0) {
            return bad("road parameters must be positive");
        }
        if !(self.arrival_rate >= 0.0 && self.arrival_rate.is_finite()) {
            return bad("arrival_rate must be non-negative");
        }
        let d = &self.demand;
        if ![d.ns_share, d.participant_share, d.board_compliance].iter().all(|p| (0.0..=1.0).contains(p)) {
            return bad("demand shares must lie in [0, 1]");
        }
        let c = &self.control;
        if c.sensing_period_s == 0 || c.report_period_s == 0 || c.signals.cycle_s <= 2.0 * r.lost_time_s {
            return bad("periods must be positive and cycles longer than lost time");
        }
        if self.start_s >= self.duration_s {
            return bad("start_s must precede the end of the run");
        }
        if let Some(p) = &self.police {
            if p.intersection.r >= self.grid.rows || p.intersection.c >= self.grid.cols {
                return bad("police intersection outside the grid");
            }
        }
        Ok(())
    }

    pub fn baseline(&self) -> Self {
        let mut b = self.clone();
        b.control.enabled = false;
        b
    }

    pub fn seed_list(&self) -> Vec<u64> {
        if self.seeds.is_empty() {
            vec![self.seed]
        } else {
            self.seeds.clone()
        }
    }

    fn slot_query(&self, kind: ComponentKind, cap: &str, region: Option<&str>, max_price: f64) -> SlotQuery {
        SlotQuery {
            kind,
            nature: NatureConstraint::Any,
            capability: cap.parse().expect("static capability"),
            predicates: region
                .map(|r| vec![AttrPredicate::WithinRegion { region: r.to_string() }])
                .unwrap_or_default(),
            max_price,
            min_quality: 0.7,
            max_latency: 10_000,
            term: Default::default(),
            rate: self.slot_rate,
            input_type: None,
            output_type: None,
        }
    }

    /// The control system the scenario procures.
    pub fn blueprint(&self) -> BlueprintSpec {
        let mut slots = Vec::new();
        let mut edges = Vec::new();
        let edge = |a: &str, b: &str, t: DataType| Edge { from_slot: a.into(), to_slot: b.into(), data_type: t };
        let slot = |id: &str, query: SlotQuery| Slot { slot_id: id.into(), query, params: BTreeMap::new() };
        for q in 0..4 {
            let id = format!("cam-q{q}");
            let region = format!("grid.q{q}");
            slots.push(slot(&id, self.slot_query(ComponentKind::Sensing, "sense.vision.camera", Some(&region), 5.0)));
            edges.push(edge(&id, "fusion", DataType::Occupancy));
        }
        slots.push(slot("gps", self.slot_query(ComponentKind::Sensing, "sense.gps", None, 5.0)));
        edges.push(edge("gps", "fusion", DataType::Occupancy));
        if !self.workers.is_empty() {
            let mut q = self.slot_query(ComponentKind::Sensing, "sense.report", None, 5.0);
            q.nature = NatureConstraint::Human;
            slots.push(slot("reports", q));
            edges.push(edge("reports", "fusion", DataType::Occupancy));
        }
        slots.push(slot("fusion", self.slot_query(ComponentKind::Processing, "process.fusion", None, 5.0)));
        slots.push(slot("optimizer", self.slot_query(ComponentKind::Processing, "process.optimize.signals", None, 5.0)));
        slots.push(slot("router", self.slot_query(ComponentKind::Processing, "process.optimize.routes", None, 5.0)));
        slots.push(slot("lights", self.slot_query(ComponentKind::Actuation, "act.signal.lights", None, 5.0)));
        slots.push(slot("boards", self.slot_query(ComponentKind::Actuation, "act.display.board", None, 5.0)));
        edges.push(edge("fusion", "optimizer", DataType::Occupancy));
        edges.push(edge("fusion", "router", DataType::Occupancy));
        edges.push(edge("optimizer", "lights", DataType::SignalPlan));
        edges.push(edge("router", "boards", DataType::Route));
        if self.police.is_some() {
            let mut q = self.slot_query(ComponentKind::Actuation, "act.traffic.police", None, 5.0);
            q.nature = NatureConstraint::Human;
            slots.push(slot("police", q));
            edges.push(edge("optimizer", "police", DataType::SignalPlan));
        }
        BlueprintSpec {
            schema: BLUEPRINT_SCHEMA.to_string(),
            system_id: SYSTEM_ID.to_string(),
            slots,
            edges,
            start_time: self.start_s * 1000,
            end_time: (self.duration_s + 60) * 1000,
            budget: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScenarioMetrics {
    /// Seconds from request to arrival, censored at the end of the run.
    pub avg_transit_time: f64,
    /// Arrivals per minute.
    pub throughput: f64,
    /// Idle car-seconds per requested trip.
    pub pollution_index: f64,
    pub driver_satisfaction: f64,
    pub participant_transit_time: f64,
    pub replacements: u64,
    pub escalations: u64,
    pub messages_lost: u64,
    pub seq_gaps: u64,
    pub emit_errors: u64,
    pub cars_requested: u64,
    pub cars_arrived: u64,
    pub cars_in_flight: u64,
    pub cars_waiting: u64,
    pub mean_cycle_s: f64,
    pub mean_ns_split: f64,
}

#[derive(Debug)]
pub struct ScenarioReport {
    pub seed: u64,
    pub controlled: bool,
    pub metrics: ScenarioMetrics,
    pub log: EventLog,
    pub state_hash: String,
}

impl ScenarioReport {
    pub fn log_jsonl(&self) -> String {
        self.log.to_jsonl()
    }

    /// Whether replaying the log reproduces the final state.
    pub fn replay_matches(&self) -> bool {
        replay_text(&self.log_jsonl()).is_ok_and(|s| s.hash() == self.state_hash)
    }
}

fn quadrant(n: Node, rows: usize, cols: usize) -> usize {
    usize::from(n.r >= rows / 2) * 2 + usize::from(n.c >= cols / 2)
}

fn poisson(rng: &mut ChaCha8Rng, mean: f64) -> u32 {
    let limit = (-mean).exp();
    let mut k = 0;
    let mut p = 1.0;
    loop {
        p *= rng.gen::<f64>();
        if p <= limit {
            return k;
        }
        k += 1;
    }
}

struct Run<'c> {
    cfg: &'c ScenarioConfig,
    orch: Orchestrator,
    crowd: SimulatedCrowd,
    world: RoadWorld,
    demand: ChaCha8Rng,
    noise: ChaCha8Rng,
    killed: BTreeSet<String>,
    degraded: BTreeSet<String>,
    fused: BTreeMap<(String, String), (f64, f64, Millis)>,
    last_seq: BTreeMap<String, u64>,
    police_override: Option<(usize, SignalPlan)>,
    subjects: BTreeMap<String, String>,
    metrics: ScenarioMetrics,
    plan_sum: (f64, f64, u64),
    approaches: Vec<(Vec<usize>, Vec<usize>)>,
    stopped: bool,
}

impl Run<'_> {
    fn component(&self, slot: &str) -> Option<(String, String)> {
        let p = self.orch.runtime.pipeline(SYSTEM_ID)?;
        Some((p.components.get(slot)?.clone(), p.binding.get(slot)?.clone()))
    }

    fn alive(&self, component: &str) -> bool {
        if self.killed.contains(component) {
            return false;
        }
        let human = self.crowd.profiles().any(|w| w.worker_id == component);
        !human || self.orch.gateway.is_connected(component)
    }

    fn flowing(&self) -> bool {
        !self.stopped
            && self
                .orch
                .runtime
                .pipeline(SYSTEM_ID)
                .is_some_and(|p| matches!(p.phase, Phase::Flowing | Phase::Paused))
    }

    fn emit(&mut self, slot: &str, t: DataType, payload: Value, quality: Option<f64>, now: Millis, queue: &mut VecDeque<Delivery>) {
        match self.orch.runtime.emit(SYSTEM_ID, slot, t, payload, quality, now) {
            Ok(d) => queue.extend(d),
            Err(_) => self.metrics.emit_errors += 1,
        }
    }

    fn seg_map(payload: &Value, key: &str) -> BTreeMap<String, f64> {
        payload[key]
            .as_object()
            .map(|m| m.iter().filter_map(|(k, v)| Some((k.clone(), v.as_f64()?))).collect())
            .unwrap_or_default()
    }

    fn drain(&mut self, mut queue: VecDeque<Delivery>, now: Millis) {
        while let Some(d) = queue.pop_front() {
            self.deliver(d, now, &mut queue);
        }
    }

    fn deliver(&mut self, d: Delivery, now: Millis, queue: &mut VecDeque<Delivery>) {
        if !self.alive(&d.consumer) {
            return;
        }
        let Some(ch) = self.orch.runtime.pipeline(SYSTEM_ID).and_then(|p| p.channels.get(&d.msg.channel)) else { return };
        let (from, to) = (ch.from_slot.clone(), ch.to_slot.clone());
        let last = self.last_seq.entry(d.msg.channel.clone()).or_insert(0);
        if d.msg.seq != *last + 1 {
            self.metrics.seq_gaps += 1;
        }
        *last = d.msg.seq;
        if self.orch.runtime.ack(SYSTEM_ID, &d.msg.channel, d.msg.seq, &d.consumer).is_err() {
            self.metrics.seq_gaps += 1;
        }
        if self.stopped {
            return;
        }
        let control = self.cfg.control.enabled;
        match to.as_str() {
            "fusion" => {
                let producer = self.component(&from).map(|c| c.0).unwrap_or_default();
                let weight = self.orch.registry.get(&producer).map_or(0.0, |e| e.qos.reliability);
                for (seg, v) in Self::seg_map(&d.msg.payload, "segments") {
                    self.fused.insert((seg, from.clone()), (v, weight, d.msg.produced_at));
                }
            }
            "optimizer" => {
                let est = Self::seg_map(&d.msg.payload, "segments");
                let mean = |segs: &[usize]| -> f64 {
                    if segs.is_empty() {
                        return 0.0;
                    }
                    segs.iter().map(|&s| est.get(&self.world.segments[s].id).copied().unwrap_or(0.0)).sum::<f64>() / segs.len() as f64
                };
                let occ: Vec<(f64, f64)> = self.approaches.iter().map(|(ns, ew)| (mean(ns), mean(ew))).collect();
                let plans = optimize_signals(&occ, self.orch.goals.composite(), &self.cfg.control.signals);
                for p in &plans {
                    self.plan_sum.0 += p.cycle_s;
                    self.plan_sum.1 += p.ns_split;
                    self.plan_sum.2 += 1;
                }
                let payload = json!({ "plans": plans });
                if let Some(c) = self.component("optimizer").filter(|c| self.alive(&c.0)) {
                    let _ = c;
                    self.emit("optimizer", DataType::SignalPlan, payload, None, now, queue);
                }
            }
            "router" => {
                let est = d.msg.payload["segments"].clone();
                if self.component("router").is_some_and(|c| self.alive(&c.0)) {
                    self.emit("router", DataType::Route, json!({ "advice": est }), None, now, queue);
                }
            }
            "lights" if control => {
                if let Ok(plans) = serde_json::from_value::<Vec<SignalPlan>>(d.msg.payload["plans"].clone()) {
                    if plans.len() == self.world.plans.len() {
                        self.world.plans = plans;
                        if let Some((i, p)) = self.police_override {
                            self.world.plans[i] = p;
                        }
                    }
                }
            }
            "police" if control => {
                if let Some(p) = &self.cfg.police {
                    let i = self.world.node_index(p.intersection);
                    let (ns, ew) = self.world.queues(p.intersection);
                    let cycle = self.world.plans[i].cycle_s;
                    self.police_override = if ns >= p.queue_threshold && ns > ew {
                        Some((i, SignalPlan { ns_split: p.split, cycle_s: cycle }))
                    } else if ew >= p.queue_threshold && ew > ns {
                        Some((i, SignalPlan { ns_split: 1.0 - p.split, cycle_s: cycle }))
                    } else {
                        None
                    };
                    if let Some((i, plan)) = self.police_override {
                        self.world.plans[i] = plan;
                    }
                }
            }
            "boards" if control => {
                self.world.advice = Self::seg_map(&d.msg.payload, "advice");
            }
            _ => {}
        }
    }

    fn sense(&mut self, now: Millis, queue: &mut VecDeque<Delivery>) {
        let (rows, cols) = (self.cfg.grid.rows, self.cfg.grid.cols);
        for q in 0..4 {
            let slot = format!("cam-q{q}");
            let Some((component, contract)) = self.component(&slot) else { continue };
            if !self.alive(&component) {
                continue;
            }
            let degraded = self.degraded.contains(&component);
            let noise = self.cfg.control.camera_noise;
            let mut segs = serde_json::Map::new();
            for (i, s) in self.world.segments.iter().enumerate() {
                if quadrant(s.to, rows, cols) != q {
                    continue;
                }
                let truth = self.world.occupancy(i);
                let v = if degraded {
                    self.noise.gen::<f64>()
                } else {
                    (truth + self.noise.gen_range(-noise..=noise)).clamp(0.0, 1.0)
                };
                segs.insert(s.id.clone(), json!(v));
            }
            let quality = if degraded { 0.3 } else { 0.95 };
            self.orch.observe(&contract, ObsKind::Quality(quality), now);
            self.emit(&slot, DataType::Occupancy, json!({ "segments": segs }), Some(quality), now, queue);
        }
        if let Some((component, contract)) = self.component("gps") {
            if self.alive(&component) {
                let share = self.cfg.demand.participant_share.max(1e-9);
                let cap = f64::from(self.cfg.road.capacity);
                let mut segs = serde_json::Map::new();
                for s in &self.world.segments {
                    let n = s.cars.iter().filter(|id| self.world.cars[*id].participant).count();
                    if n > 0 {
                        segs.insert(s.id.clone(), json!((n as f64 / (share * cap)).min(1.0)));
                    }
                }
                self.orch.observe(&contract, ObsKind::Quality(0.9), now);
                self.emit("gps", DataType::Occupancy, json!({ "segments": segs }), Some(0.9), now, queue);
            }
        }
    }

    fn offer_report(&mut self, now: Millis) {
        let Some((worker, contract)) = self.component("reports") else { return };
        if !self.orch.gateway.is_connected(&worker) {
            return;
        }
        let Some(c) = self.orch.book.get(&contract).cloned() else { return };
        let seg = self.noise.gen_range(0..self.world.segments.len());
        let subject = self.world.segments[seg].id.clone();
        let task_id = self.orch.gateway.next_task_id();
        let offer = TaskOffer {
            task_id: task_id.clone(),
            description: "report occupancy".into(),
            input: json!({ "subject": subject, "observed": self.world.occupancy(seg) }),
            offered_price: c.agreed_price,
            deadline: now + c.terms.max_latency,
            sla: SlaSummary { max_latency: c.terms.max_latency, min_quality: c.terms.min_quality },
            countdown_start: now,
        };
        if self.orch.gateway.offer_task(&worker, offer, &mut self.orch.log).is_ok() {
            self.subjects.insert(task_id, subject);
        }
    }

    fn gateway_round(&mut self, now: Millis, queue: &mut VecDeque<Delivery>) {
        self.crowd.pump(&mut self.orch.gateway, now, now, &mut self.orch.log);
        self.orch.gateway.tick(now, &mut self.orch.log);
        for effect in self.orch.gateway.take_effects() {
            let Some((worker, contract)) = self.component("reports") else { continue };
            match effect {
                GatewayEffect::Delivered { worker_id, quality, latency, payload, .. } if worker_id == worker => {
                    self.orch.observe(&contract, ObsKind::Latency(latency), now);
                    self.orch.observe(&contract, ObsKind::Quality(quality), now);
                    if let (Some(s), Some(v)) = (payload["subject"].as_str(), payload["value"].as_f64()) {
                        let segs = json!({ "segments": { s: v } });
                        self.emit("reports", DataType::Occupancy, segs, Some(quality), now, queue);
                    }
                }
                GatewayEffect::Failure { worker_id, task_id } if worker_id == worker => {
                    let late = self.orch.gateway.task(&task_id).is_some_and(|t| {
                        t.state == TaskState::Overdue
                            || t.verdict.as_ref().is_some_and(|v| v.reason == PaymentReason::AfterDeadline)
                    });
                    let kind = if late {
                        ObsKind::Latency(self.orch.book.get(&contract).map_or(0, |c| c.terms.max_latency + 1))
                    } else {
                        ObsKind::Quality(0.0)
                    };
                    self.orch.observe(&contract, kind, now);
                }
                _ => {}
            }
        }
    }

    fn fuse(&mut self, now: Millis, queue: &mut VecDeque<Delivery>) {
        let Some((fusion, _)) = self.component("fusion") else { return };
        if !self.alive(&fusion) {
            return;
        }
        let cutoff = now.saturating_sub(self.cfg.control.stale_s * 1000);
        let mut by_seg: BTreeMap<&str, Vec<OccupancyReport>> = BTreeMap::new();
        for ((seg, src), &(value, weight, ts)) in &self.fused {
            if ts >= cutoff {
                by_seg.entry(seg.as_str()).or_default().push(OccupancyReport {
                    segment: seg.clone(),
                    value,
                    weight,
                    source: src.clone(),
                });
            }
        }
        let est: serde_json::Map<String, Value> = by_seg
            .into_iter()
            .filter_map(|(seg, r)| Some((seg.to_string(), json!(fuse_occupancy(&r).ok()?))))
            .collect();
        if !est.is_empty() {
            self.emit("fusion", DataType::Occupancy, json!({ "segments": est }), None, now, queue);
        }
    }

    fn arrivals(&mut self, dt_s: f64) {
        let (rows, cols) = (self.cfg.grid.rows, self.cfg.grid.cols);
        let n = poisson(&mut self.demand, self.cfg.arrival_rate * dt_s);
        for _ in 0..n {
            let ns = self.demand.gen_bool(self.cfg.demand.ns_share);
            let flip = self.demand.gen_bool(0.5);
            let (a, b) = (self.demand.gen_range(0..cols.max(rows)), self.demand.gen_range(0..cols.max(rows)));
            let (origin, dest) = if ns {
                let (r0, r1) = if flip { (0, rows - 1) } else { (rows - 1, 0) };
                (Node { r: r0, c: a % cols }, Node { r: r1, c: b % cols })
            } else {
                let (c0, c1) = if flip { (0, cols - 1) } else { (cols - 1, 0) };
                (Node { r: a % rows, c: c0 }, Node { r: b % rows, c: c1 })
            };
            let participant = self.demand.gen_bool(self.cfg.demand.participant_share);
            let heeds = self.demand.gen_bool(self.cfg.demand.board_compliance);
            self.world.request(origin, dest, participant, heeds);
        }
    }

    fn finish_metrics(&mut self) {
        let t_end = self.world.clock_s;
        let transit = |c: &world::Car| c.done_at.unwrap_or(t_end) - c.requested_at;
        let all: Vec<&world::Car> = self.world.finished().iter().chain(self.world.cars.values()).collect();
        let m = &mut self.metrics;
        let n = all.len().max(1) as f64;
        m.avg_transit_time = all.iter().map(|c| transit(c)).sum::<f64>() / n;
        m.throughput = self.world.finished().len() as f64 / (t_end / 60.0).max(1e-9);
        m.pollution_index = self.world.stats.idle_car_seconds / n;
        let part: Vec<&&world::Car> = all.iter().filter(|c| c.participant).collect();
        m.driver_satisfaction = if part.is_empty() {
            1.0
        } else {
            part.iter()
                .map(|c| {
                    let t = transit(c);
                    if t <= 0.0 {
                        1.0
                    } else {
                        (c.free_flow_s / t).clamp(0.0, 1.0)
                    }
                })
                .sum::<f64>()
                / part.len() as f64
        };
        m.participant_transit_time = if part.is_empty() {
            0.0
        } else {
            part.iter().map(|c| transit(c)).sum::<f64>() / part.len() as f64
        };
        m.cars_requested = self.world.stats.requested;
        m.cars_arrived = self.world.finished().len() as u64;
        m.cars_in_flight = self.world.in_flight() as u64;
        m.cars_waiting = self.world.pending() as u64;
        m.replacements = self.orch.log.count("SwapCompleted") as u64;
        m.messages_lost = self.orch.runtime.messages_lost();
        let (cyc, split, k) = self.plan_sum;
        if k > 0 {
            m.mean_cycle_s = cyc / k as f64;
            m.mean_ns_split = split / k as f64;
        } else {
            m.mean_cycle_s = self.cfg.control.signals.cycle_s;
            m.mean_ns_split = 0.5;
        }
    }
}

/// Runs one seed of a scenario. The shared seed drives demand, so a
/// controlled run and its baseline see the same trips.
pub fn run_scenario(cfg: &ScenarioConfig, seed: u64) -> Result<ScenarioReport, ScenarioError> {
    cfg.validate()?;
    let base = SignalPlan::fixed(0.5, cfg.control.signals.cycle_s);
    let mut log = EventLog::new();
    log.record(0, "ScenarioStarted", json!({ "name": cfg.name, "seed": seed, "controlled": cfg.control.enabled }));
    let mut run = Run {
        cfg,
        orch: Orchestrator::new(cfg.clic.clone(), log),
        crowd: SimulatedCrowd::new(cfg.workers.clone(), seed ^ 0x5eed_c0de),
        world: RoadWorld::new(cfg.grid.rows, cfg.grid.cols, cfg.road, base),
        demand: ChaCha8Rng::seed_from_u64(seed),
        noise: ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(1)),
        killed: BTreeSet::new(),
        degraded: BTreeSet::new(),
        fused: BTreeMap::new(),
        last_seq: BTreeMap::new(),
        police_override: None,
        subjects: BTreeMap::new(),
        metrics: ScenarioMetrics::default(),
        plan_sum: (0.0, 0.0, 0),
        approaches: Vec::new(),
        stopped: false,
    };
    run.approaches = run.world.nodes().map(|n| run.world.approaches(n)).collect();
    for d in &cfg.pool {
        run.orch.register(d.clone(), 0).map_err(|e| ScenarioError::Config(e.to_string()))?;
    }
    for g in &cfg.goals {
        run.orch.add_goal(g.clone(), 0).map_err(|e| ScenarioError::Config(e.to_string()))?;
    }
    run.crowd.join(&mut run.orch.gateway, 0, &mut run.orch.log);
    run.orch.submit(cfg.blueprint(), Humans::Crowd(&mut run.crowd), &mut NoFaults, 0)?;

    let step_ms: Millis = 1000;
    let dt_s = step_ms as f64 / 1000.0;
    let hb = run.orch.config.monitor.heartbeat_ms.max(1);
    let sensing = cfg.control.sensing_period_s * 1000;
    let reporting = cfg.control.report_period_s * 1000;
    let end = cfg.duration_s * 1000;
    let mut faults = cfg.fault_schedule.clone();
    faults.sort_by_key(|f| f.t_s);
    let mut faults: VecDeque<Fault> = faults.into();

    let mut now: Millis = 0;
    while now < end {
        while faults.front().is_some_and(|f| f.t_s * 1000 <= now) {
            let f = faults.pop_front().expect("checked");
            run.orch.log.record(now, "FaultInjected", json!(f));
            match f.action {
                FaultAction::Kill => run.killed.insert(f.component_id),
                FaultAction::Degrade => run.degraded.insert(f.component_id),
            };
        }
        run.arrivals(dt_s);
        run.orch.start_due(now).map_err(|e| ScenarioError::Runtime(e.to_string()))?;
        let mut queue = VecDeque::new();
        if now > 0 && now.is_multiple_of(hb) && run.flowing() {
            let killed = run.killed.clone();
            let humans: BTreeSet<String> = run.crowd.profiles().map(|w| w.worker_id.clone()).collect();
            let gw = &run.orch.gateway;
            let connected: BTreeSet<String> = humans.iter().filter(|h| gw.is_connected(h)).cloned().collect();
            run.orch.heartbeat_round(now, &|c| !killed.contains(c) && (!humans.contains(c) || connected.contains(c)));
            for r in run.orch.review(SYSTEM_ID, now, Humans::Scripted) {
                if matches!(r, ReviewOutcome::Escalated { .. }) {
                    run.metrics.escalations += 1;
                }
            }
            for (_, deliveries) in run.orch.poll_swaps(now) {
                queue.extend(deliveries);
            }
        }
        if run.flowing() {
            if now.is_multiple_of(sensing) {
                run.sense(now, &mut queue);
            }
            if now.is_multiple_of(reporting) {
                run.offer_report(now);
            }
            run.gateway_round(now, &mut queue);
            run.drain(std::mem::take(&mut queue), now);
            if now.is_multiple_of(sensing) {
                run.fuse(now, &mut queue);
            }
        }
        run.drain(queue, now);
        run.world.step(dt_s);
        now += step_ms;
    }

    let flushed = run.orch.stop(SYSTEM_ID, now).map_err(|e| ScenarioError::Runtime(e.to_string()))?;
    run.stopped = true;
    run.drain(flushed.into(), now);
    run.finish_metrics();
    run.orch.log.record(now, "ScenarioFinished", json!(run.metrics));
    let state_hash = run.orch.state_hash();
    Ok(ScenarioReport { seed, controlled: cfg.control.enabled, metrics: run.metrics, log: run.orch.log, state_hash })
}
