//! The human gateway: task offers under a countdown, with payment only for
//! on-time, at-quality results.
//!
//! The gateway is a synchronous state machine over wire messages. Transports
//! feed it decoded lines and drain per-worker outboxes; simulated workers use
//! exactly the same entry points.

pub mod protocol;
pub mod sim;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::component::Millis;
use crate::eventlog::EventLog;
use crate::goals::Direction;
use protocol::{decode, PaymentReason, Response, SlaSummary, WireMessage};

pub use sim::{GatewayMarket, SimulatedCrowd, SimulatedWorker, WorkerProfile};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskOffer {
    pub task_id: String,
    pub description: String,
    #[serde(default)]
    pub input: Value,
    pub offered_price: f64,
    pub deadline: Millis,
    pub sla: SlaSummary,
    pub countdown_start: Millis,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum OfferOutcome {
    Accepted,
    Declined,
    Counter { price: f64, quality: f64 },
    NoResponse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PaymentVerdict {
    pub task_id: String,
    pub paid: bool,
    pub amount: f64,
    pub reason: PaymentReason,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TaskState {
    Offered,
    Accepted,
    Declined,
    Countered,
    NoResponse,
    /// Accepted, deadline passed without a result.
    Overdue,
    Settled,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Task {
    pub worker_id: String,
    pub offer: TaskOffer,
    pub state: TaskState,
    pub outcome: Option<OfferOutcome>,
    pub verdict: Option<PaymentVerdict>,
    pub resolved_at: Option<Millis>,
}

/// How one worker has answered offers so far.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ResponseStats {
    pub offers: u64,
    pub accepted: u64,
    pub declined: u64,
    pub countered: u64,
    pub no_response: u64,
    /// Mean time from countdown start to an answer, over answered offers.
    pub mean_response_ms: Option<f64>,
}

/// Something the rest of the orchestrator must act on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum GatewayEffect {
    Heartbeat { worker_id: String, ts: Millis },
    /// Unpaid or overdue work; counts as a failed observation of the worker.
    Failure { worker_id: String, task_id: String },
    Delivered { worker_id: String, task_id: String, quality: f64, latency: Millis, payload: Value },
    Goal { worker_id: String, metric: String, direction: Direction, weight: f64 },
}

#[derive(Debug, Error, PartialEq)]
pub enum GatewayError {
    #[error("worker {0} is not connected")]
    WorkerDisconnected(String),
    #[error("unknown task {0}")]
    UnknownTask(String),
    #[error("offer deadline {deadline} is not after countdown start {start}")]
    InvalidOffer { deadline: Millis, start: Millis },
}

#[derive(Debug, Clone, Default, PartialEq)]
struct Session {
    connected: bool,
    do_not_disturb: bool,
    resume_token: String,
    outbox: Vec<WireMessage>,
}

#[derive(Debug, Clone)]
pub struct Gateway {
    pub grain: f64,
    sessions: BTreeMap<String, Session>,
    tasks: BTreeMap<String, Task>,
    effects: Vec<GatewayEffect>,
    next_task: u64,
}

impl Default for Gateway {
    fn default() -> Self {
        Self::new(0.5)
    }
}

impl Gateway {
    pub fn new(grain: f64) -> Self {
        Self { grain, sessions: BTreeMap::new(), tasks: BTreeMap::new(), effects: Vec::new(), next_task: 0 }
    }

    pub fn is_connected(&self, worker_id: &str) -> bool {
        self.sessions.get(worker_id).is_some_and(|s| s.connected)
    }

    pub fn task(&self, task_id: &str) -> Option<&Task> {
        self.tasks.get(task_id)
    }

    pub fn tasks(&self) -> impl Iterator<Item = &Task> {
        self.tasks.values()
    }

    pub fn response_stats(&self, worker_id: &str) -> ResponseStats {
        let mut s = ResponseStats::default();
        let mut answered = Vec::new();
        for t in self.tasks.values().filter(|t| t.worker_id == worker_id) {
            s.offers += 1;
            match t.outcome {
                Some(OfferOutcome::Accepted) => s.accepted += 1,
                Some(OfferOutcome::Declined) => s.declined += 1,
                Some(OfferOutcome::Counter { .. }) => s.countered += 1,
                Some(OfferOutcome::NoResponse) => s.no_response += 1,
                None => {}
            }
            if let (Some(o), Some(at)) = (t.outcome, t.resolved_at) {
                if o != OfferOutcome::NoResponse {
                    answered.push(at.saturating_sub(t.offer.countdown_start) as f64);
                }
            }
        }
        if !answered.is_empty() {
            s.mean_response_ms = Some(answered.iter().sum::<f64>() / answered.len() as f64);
        }
        s
    }

    pub fn next_task_id(&mut self) -> String {
        self.next_task += 1;
        format!("t-{:05}", self.next_task)
    }

    pub fn take_outbox(&mut self, worker_id: &str) -> Vec<WireMessage> {
        self.sessions
            .get_mut(worker_id)
            .map(|s| std::mem::take(&mut s.outbox))
            .unwrap_or_default()
    }

    pub fn take_effects(&mut self) -> Vec<GatewayEffect> {
        std::mem::take(&mut self.effects)
    }

    fn send(&mut self, worker_id: &str, msg: WireMessage) {
        if let Some(s) = self.sessions.get_mut(worker_id) {
            s.outbox.push(msg);
        }
    }

    fn connect(&mut self, worker_id: &str, dnd: bool, now: Millis, log: &mut EventLog) {
        let s = self.sessions.entry(worker_id.to_string()).or_default();
        s.connected = true;
        s.do_not_disturb = dnd;
        if s.resume_token.is_empty() {
            s.resume_token = format!("rt-{worker_id}");
        }
        let token = s.resume_token.clone();
        log.record(now, "WorkerConnected", json!({ "worker_id": worker_id, "do_not_disturb": dnd }));
        self.send(
            worker_id,
            WireMessage::Welcome { worker_id: worker_id.to_string(), resume_token: token, grain: self.grain },
        );
    }

    pub fn disconnect(&mut self, worker_id: &str, now: Millis, log: &mut EventLog) {
        if let Some(s) = self.sessions.get_mut(worker_id) {
            if s.connected {
                s.connected = false;
                log.record(now, "WorkerDisconnected", json!({ "worker_id": worker_id }));
            }
        }
    }

    /// Sends an offer; a do-not-disturb worker declines it on the spot.
    pub fn offer_task(
        &mut self,
        worker_id: &str,
        offer: TaskOffer,
        log: &mut EventLog,
    ) -> Result<String, GatewayError> {
        if !self.is_connected(worker_id) {
            return Err(GatewayError::WorkerDisconnected(worker_id.to_string()));
        }
        if offer.deadline <= offer.countdown_start {
            return Err(GatewayError::InvalidOffer { deadline: offer.deadline, start: offer.countdown_start });
        }
        let now = offer.countdown_start;
        let id = offer.task_id.clone();
        log.record(
            now,
            "TaskOffered",
            json!({
                "task_id": id,
                "worker_id": worker_id,
                "offered_price": offer.offered_price,
                "deadline": offer.deadline,
            }),
        );
        let dnd = self.sessions[worker_id].do_not_disturb;
        self.tasks.insert(
            id.clone(),
            Task { worker_id: worker_id.to_string(), offer: offer.clone(), state: TaskState::Offered, outcome: None, verdict: None, resolved_at: None },
        );
        if dnd {
            self.resolve(&id, OfferOutcome::Declined, now, log);
        } else {
            self.send(
                worker_id,
                WireMessage::TaskOffer {
                    task_id: offer.task_id,
                    description: offer.description,
                    input: offer.input,
                    offered_price: offer.offered_price,
                    deadline: offer.deadline,
                    sla: offer.sla,
                    countdown_start: offer.countdown_start,
                },
            );
        }
        Ok(id)
    }

    fn resolve(&mut self, task_id: &str, outcome: OfferOutcome, now: Millis, log: &mut EventLog) {
        let t = self.tasks.get_mut(task_id).expect("resolving a known task");
        t.state = match outcome {
            OfferOutcome::Accepted => TaskState::Accepted,
            OfferOutcome::Declined => TaskState::Declined,
            OfferOutcome::Counter { .. } => TaskState::Countered,
            OfferOutcome::NoResponse => TaskState::NoResponse,
        };
        t.outcome = Some(outcome);
        t.resolved_at = Some(now);
        log.record(now, "OfferResolved", json!({ "task_id": task_id, "outcome": outcome }));
        // Offers without input settle terms only.
        if outcome == OfferOutcome::Accepted && !t.offer.input.is_null() {
            let (worker, payload) = (t.worker_id.clone(), t.offer.input.clone());
            self.send(&worker, WireMessage::TaskInput { task_id: task_id.to_string(), payload });
        }
    }

    /// The outcome so far; an unanswered offer past its deadline is NoResponse.
    pub fn outcome(&mut self, task_id: &str, now: Millis, log: &mut EventLog) -> Result<Option<OfferOutcome>, GatewayError> {
        let t = self.tasks.get(task_id).ok_or_else(|| GatewayError::UnknownTask(task_id.to_string()))?;
        if t.state == TaskState::Offered && now > t.offer.deadline {
            self.resolve(task_id, OfferOutcome::NoResponse, now, log);
        }
        Ok(self.tasks[task_id].outcome)
    }

    /// Expires overdue work; call as the clock advances.
    pub fn tick(&mut self, now: Millis, log: &mut EventLog) {
        let due: Vec<String> = self
            .tasks
            .iter()
            .filter(|(_, t)| matches!(t.state, TaskState::Offered | TaskState::Accepted) && now > t.offer.deadline)
            .map(|(id, _)| id.clone())
            .collect();
        for id in due {
            if self.tasks[&id].state == TaskState::Offered {
                self.resolve(&id, OfferOutcome::NoResponse, now, log);
                continue;
            }
            let t = self.tasks.get_mut(&id).expect("listed");
            t.state = TaskState::Overdue;
            let worker = t.worker_id.clone();
            log.record(now, "SlaViolationNotice", json!({ "task_id": id, "worker_id": worker }));
            self.send(&worker, WireMessage::SlaViolationNotice { task_id: id.clone(), reason: "deadline-passed".into() });
            self.effects.push(GatewayEffect::Failure { worker_id: worker, task_id: id });
        }
    }

    /// Settles a result. The deadline is inclusive.
    pub fn submit_result(
        &mut self,
        worker_id: &str,
        task_id: &str,
        quality: f64,
        payload: Value,
        now: Millis,
        log: &mut EventLog,
    ) -> Result<PaymentVerdict, GatewayError> {
        let t = self.tasks.get_mut(task_id).ok_or_else(|| GatewayError::UnknownTask(task_id.to_string()))?;
        if t.worker_id != worker_id || !matches!(t.state, TaskState::Accepted | TaskState::Overdue) {
            return Err(GatewayError::UnknownTask(task_id.to_string()));
        }
        let (paid, reason) = if now > t.offer.deadline {
            (false, PaymentReason::AfterDeadline)
        } else if quality < t.offer.sla.min_quality {
            (false, PaymentReason::QualityRejected)
        } else {
            (true, PaymentReason::OnTime)
        };
        let amount = if paid { t.offer.offered_price } else { 0.0 };
        let was_overdue = t.state == TaskState::Overdue;
        t.state = TaskState::Settled;
        let verdict = PaymentVerdict { task_id: task_id.to_string(), paid, amount, reason };
        t.verdict = Some(verdict.clone());
        let latency = now.saturating_sub(t.offer.countdown_start);
        log.record(now, "TaskResult", json!({ "task_id": task_id, "worker_id": worker_id, "quality": quality }));
        log.record(now, "PaymentVerdict", json!(verdict));
        self.send(
            worker_id,
            WireMessage::PaymentVerdict { task_id: task_id.to_string(), paid, amount, reason },
        );
        if paid {
            self.effects.push(GatewayEffect::Delivered {
                worker_id: worker_id.to_string(),
                task_id: task_id.to_string(),
                quality,
                latency,
                payload,
            });
        } else if !was_overdue {
            self.effects.push(GatewayEffect::Failure { worker_id: worker_id.to_string(), task_id: task_id.to_string() });
        }
        Ok(verdict)
    }

    /// Entry point for one decoded message from `worker_id` at `now`.
    pub fn handle(&mut self, worker_id: &str, msg: WireMessage, now: Millis, log: &mut EventLog) {
        match msg {
            WireMessage::Hello { worker_id: w, do_not_disturb, .. } => self.connect(&w, do_not_disturb, now, log),
            _ if !self.is_connected(worker_id) => {}
            WireMessage::OfferResponse { task_id, response } => {
                let open = self
                    .tasks
                    .get(&task_id)
                    .is_some_and(|t| t.worker_id == worker_id && t.state == TaskState::Offered && now <= t.offer.deadline);
                if !open {
                    self.send(worker_id, WireMessage::error("offer-closed", task_id));
                    return;
                }
                let outcome = match response {
                    Response::Accept => OfferOutcome::Accepted,
                    Response::Decline => OfferOutcome::Declined,
                    Response::Counter(c) => OfferOutcome::Counter {
                        price: c.price,
                        quality: c.quality.unwrap_or(self.tasks[&task_id].offer.sla.min_quality),
                    },
                };
                self.resolve(&task_id, outcome, now, log);
            }
            WireMessage::TaskResult { task_id, quality, payload } => {
                if self.submit_result(worker_id, &task_id, quality.unwrap_or(1.0), payload, now, log).is_err() {
                    self.send(worker_id, WireMessage::error("unknown-task", task_id));
                }
            }
            WireMessage::Heartbeat { ts } => {
                self.effects.push(GatewayEffect::Heartbeat { worker_id: worker_id.to_string(), ts: now.max(ts) });
            }
            WireMessage::Goal { metric, direction, weight } => {
                log.record(now, "GoalSubmitted", json!({ "worker_id": worker_id, "metric": metric, "weight": weight }));
                self.effects.push(GatewayEffect::Goal { worker_id: worker_id.to_string(), metric, direction, weight });
            }
            other => self.send(worker_id, WireMessage::error("unexpected", other.type_name())),
        }
    }

    /// Decodes and handles one line; malformed or unknown input is answered
    /// on the sender's outbox, or returned when there is no session yet.
    pub fn handle_line(&mut self, worker_id: &str, line: &str, now: Millis, log: &mut EventLog) -> Option<WireMessage> {
        match decode(line) {
            Ok(msg) => {
                self.handle(worker_id, msg, now, log);
                None
            }
            Err(reply) => {
                if self.sessions.contains_key(worker_id) {
                    self.send(worker_id, reply);
                    None
                } else {
                    Some(reply)
                }
            }
        }
    }
}
