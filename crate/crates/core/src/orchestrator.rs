//! One place that owns the pool, the contracts, the running pipelines and the
//! event log, and wires procurement, monitoring and replacement together.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::blueprint::BlueprintSpec;
use crate::component::{ComponentDescriptor, Millis};
use crate::config::Config;
use crate::eventlog::{EventLog, StateSnapshot};
use crate::gateway::{Gateway, GatewayMarket, SimulatedCrowd};
use crate::goals::{params_targets, Goal, GoalError, GoalSet, MetricVocabulary, ParamsMessage, ParamsPublisher, ParamsTarget};
use crate::monitor::replacement::ReplacementError;
use crate::monitor::sla::{ObsKind, Observation};
use crate::monitor::{decide_replacement, Action, Compliance, Condition, MarketSnapshot, Monitor, Quote, ReplacementDecision};
use crate::procurement::{
    procure_slot, procure_system, CommitFaults, ContractState, FailureReason, HumanMarket, NoFaults, ProcureError,
    Procurer, ScriptedHumans, SystemContractSet, Tactic,
};
use crate::registry::{EntryStatus, PoolEntry, Registry, RegistryError};
use crate::runtime::{Delivery, Phase, Runtime, RuntimeError, SwapReport};

/// Who answers for human candidates during procurement.
pub enum Humans<'a> {
    /// Time-dependent sellers derived from the descriptors.
    Scripted,
    /// Simulated workers negotiating over the gateway.
    Crowd(&'a mut SimulatedCrowd),
}

#[derive(Debug, Error)]
pub enum SubmitError {
    #[error(transparent)]
    Procure(#[from] ProcureError),
    #[error(transparent)]
    Runtime(#[from] RuntimeError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotStatus {
    pub slot_id: String,
    pub component_id: String,
    pub contract_id: String,
    pub state: ContractState,
    pub agreed_price: f64,
    pub reliability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemStatus {
    pub system_id: String,
    pub phase: Phase,
    pub slots: Vec<SlotStatus>,
    pub messages_lost: u64,
}

/// What a review did for one contract.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ReviewOutcome {
    SwapStarted { decision: ReplacementDecision, new_contract: String },
    /// Replacement wanted but no provider could be contracted.
    Escalated { contract_id: String, slot_id: String, reason: String },
}

pub struct Orchestrator {
    pub config: Config,
    pub registry: Registry,
    pub book: crate::procurement::ContractBook,
    pub runtime: Runtime,
    pub monitor: Monitor,
    pub goals: GoalSet,
    pub gateway: Gateway,
    pub params: ParamsPublisher,
    pub tactic: Tactic,
    pub log: EventLog,
    blueprints: BTreeMap<String, BlueprintSpec>,
    /// Contracts already escalated, with the condition they were escalated for.
    escalated: BTreeMap<String, Condition>,
}

impl Orchestrator {
    pub fn new(config: Config, log: EventLog) -> Self {
        let tactic = Tactic { grain: config.gateway.grain, ..Tactic::default() };
        Self {
            registry: Registry::new(config.monitor.alpha),
            book: Default::default(),
            runtime: Runtime::new(config.runtime.buffer_cap),
            monitor: Monitor::new(config.monitor.clone()),
            goals: GoalSet::new(MetricVocabulary::builtin(), config.goals.dynamic_weight_cap),
            gateway: Gateway::new(config.gateway.grain),
            params: ParamsPublisher::default(),
            tactic,
            log,
            blueprints: BTreeMap::new(),
            escalated: BTreeMap::new(),
            config,
        }
    }

    pub fn blueprint(&self, system_id: &str) -> Option<&BlueprintSpec> {
        self.blueprints.get(system_id)
    }

    pub fn register(&mut self, d: ComponentDescriptor, now: Millis) -> Result<PoolEntry, RegistryError> {
        self.registry.register(d, now, &mut self.log)
    }

    /// Procures, binds and, once its start time has come, starts a system.
    pub fn submit(
        &mut self,
        b: BlueprintSpec,
        humans: Humans<'_>,
        faults: &mut dyn CommitFaults,
        now: Millis,
    ) -> Result<SystemContractSet, SubmitError> {
        let set = {
            let window = self.config.gateway.offer_window_ms;
            let mut scripted = ScriptedHumans;
            let mut market;
            let humans: &mut dyn HumanMarket = match humans {
                Humans::Scripted => &mut scripted,
                Humans::Crowd(crowd) => {
                    market = GatewayMarket { gateway: &mut self.gateway, crowd, window };
                    &mut market
                }
            };
            let mut p = Procurer { tactic: self.tactic, humans, faults };
            procure_system(&b, &mut self.registry, &mut self.book, &mut p, now, &mut self.log)?
        };
        self.runtime.bind(&b, &set.contracts, &self.book, now, &mut self.log)?;
        let system_id = b.system_id.clone();
        let due = now >= b.start_time;
        self.blueprints.insert(system_id.clone(), b);
        if due {
            self.runtime.start(&system_id, now, &mut self.registry, &mut self.book, &mut self.log)?;
            self.publish_params(now);
        }
        Ok(set)
    }

    /// Starts every bound system whose start time has come.
    pub fn start_due(&mut self, now: Millis) -> Result<Vec<String>, RuntimeError> {
        let due: Vec<String> = self
            .runtime
            .pipelines()
            .filter(|p| p.phase == Phase::Bound && p.start_time <= now)
            .map(|p| p.system_id.clone())
            .collect();
        for id in &due {
            self.runtime.start(id, now, &mut self.registry, &mut self.book, &mut self.log)?;
        }
        if !due.is_empty() {
            self.publish_params(now);
        }
        Ok(due)
    }

    pub fn publish_params(&mut self, now: Millis) -> Vec<(ParamsTarget, ParamsMessage)> {
        let targets = params_targets(&self.runtime, &self.registry);
        self.params.emit_parameter_updates(self.goals.composite(), &targets, now, &mut self.log)
    }

    pub fn add_goal(&mut self, g: Goal, now: Millis) -> Result<(), GoalError> {
        self.goals.add_goal(g, now, &mut self.log)?;
        self.publish_params(now);
        Ok(())
    }

    pub fn remove_goal(&mut self, goal_id: &str, now: Millis) -> Result<(), GoalError> {
        self.goals.remove_goal(goal_id, now, &mut self.log)?;
        self.publish_params(now);
        Ok(())
    }

    pub fn observe(&mut self, contract_id: &str, kind: ObsKind, now: Millis) {
        if let Some(c) = self.book.get(contract_id).cloned() {
            let obs = Observation { contract_id: contract_id.to_string(), ts: now, kind };
            self.monitor.observe(&c, obs, &mut self.registry, &mut self.log);
        }
    }

    /// Heartbeat period tick: one observation per serving contract, then the
    /// registry's liveness sweep.
    pub fn heartbeat_round(&mut self, now: Millis, alive: &dyn Fn(&str) -> bool) {
        let serving: Vec<(String, String)> = self
            .book
            .all()
            .filter(|c| c.state == ContractState::Serving)
            .map(|c| (c.contract_id.clone(), c.component_id.clone()))
            .collect();
        for (contract, component) in serving {
            let kind = if alive(&component) {
                let _ = self.registry.heartbeat(&component, now);
                ObsKind::HeartbeatReceived
            } else {
                ObsKind::HeartbeatMissed
            };
            self.observe(&contract, kind, now);
        }
        let m = &self.monitor.config;
        self.registry.sweep_liveness(now, m.heartbeat_ms, m.k_missed as u32, &mut self.log);
    }

    /// Qualified alternatives for a slot, cheapest first.
    pub fn market_for(&self, system_id: &str, slot_id: &str, exclude: &str) -> MarketSnapshot {
        let Some(q) = self.blueprints.get(system_id).and_then(|b| b.effective_query(slot_id)) else {
            return MarketSnapshot::default();
        };
        let quotes = self
            .registry
            .query(&q)
            .into_iter()
            .filter(|e| e.descriptor.id != exclude && e.residual_capacity() + 1e-9 >= q.rate)
            .map(|e| Quote { component_id: e.descriptor.id.clone(), price: e.descriptor.posted_terms.price })
            .collect();
        MarketSnapshot { quotes, reserve: q.max_price }
    }

    fn condition_of(&self, contract_id: &str) -> Condition {
        let c = self.book.get(contract_id).expect("reviewing a known contract");
        match self.monitor.verdict(c).status {
            Compliance::Breach(r) => Condition::Breach(r),
            Compliance::Compliant => match self.registry.get(&c.component_id).map(|e| e.status) {
                Some(EntryStatus::Offline) | None => Condition::Unavailable,
                _ => Condition::Healthy,
            },
        }
    }

    /// Checks every serving contract of a system and starts the swaps the
    /// replacement rule asks for. Economic reasons are weighed only on epochs.
    pub fn review(&mut self, system_id: &str, now: Millis, humans: Humans<'_>) -> Vec<ReviewOutcome> {
        let mut humans = humans;
        let epoch = self.monitor.is_epoch(now);
        let serving: Vec<(String, String, String)> = self
            .book
            .of_system(system_id)
            .filter(|c| c.state == ContractState::Serving)
            .map(|c| (c.contract_id.clone(), c.slot_id.clone(), c.component_id.clone()))
            .collect();
        let mut out = Vec::new();
        for (contract_id, slot_id, component_id) in serving {
            if self.runtime.swap_in_progress(system_id, &slot_id).is_some() {
                continue;
            }
            let condition = self.condition_of(&contract_id);
            let c = self.book.get(&contract_id).expect("listed").clone();
            let term_over = now >= c.terms.term.end();
            if condition == Condition::Healthy {
                self.escalated.remove(&contract_id);
                if !epoch && !term_over {
                    continue;
                }
            }
            let market = self.market_for(system_id, &slot_id, &component_id);
            let horizon_msgs = c.terms.term.end().saturating_sub(now) as f64 / 1000.0 * c.terms.capacity;
            let decision = match decide_replacement(&c, condition, &market, horizon_msgs, now) {
                Ok(d) => d,
                Err(ReplacementError::NoCandidate(_)) => {
                    if self.escalated.get(&contract_id) == Some(&condition) {
                        continue;
                    }
                    self.escalated.insert(contract_id.clone(), condition);
                    self.log.record(
                        now,
                        "ReplacementEscalation",
                        json!({ "system_id": system_id, "slot_id": slot_id, "contract_id": contract_id, "condition": condition }),
                    );
                    out.push(ReviewOutcome::Escalated { contract_id, slot_id, reason: "no-candidate".into() });
                    continue;
                }
            };
            if decision.action == Action::Keep {
                continue;
            }
            self.log.record(now, "ReplacementDecided", json!({ "system_id": system_id, "slot_id": slot_id, "condition": condition, "decision": decision }));
            match self.replace(system_id, &slot_id, &component_id, &mut humans, now) {
                Ok(new_contract) => out.push(ReviewOutcome::SwapStarted { decision, new_contract }),
                Err(reason) => {
                    self.log.record(
                        now,
                        "ReplacementEscalation",
                        json!({ "system_id": system_id, "slot_id": slot_id, "contract_id": contract_id, "reason": reason }),
                    );
                    out.push(ReviewOutcome::Escalated { contract_id, slot_id, reason });
                }
            }
        }
        out
    }

    fn replace(
        &mut self,
        system_id: &str,
        slot_id: &str,
        old_component: &str,
        humans: &mut Humans<'_>,
        now: Millis,
    ) -> Result<String, String> {
        let q = self
            .blueprints
            .get(system_id)
            .and_then(|b| b.effective_query(slot_id))
            .ok_or_else(|| format!("no blueprint slot {slot_id}"))?;
        let window = self.config.gateway.offer_window_ms;
        let mut scripted = ScriptedHumans;
        let mut market;
        let market_ref: &mut dyn HumanMarket = match humans {
            Humans::Scripted => &mut scripted,
            Humans::Crowd(crowd) => {
                market = GatewayMarket { gateway: &mut self.gateway, crowd, window };
                &mut market
            }
        };
        let mut faults = NoFaults;
        let mut p = Procurer { tactic: self.tactic, humans: market_ref, faults: &mut faults };
        let new_contract = procure_slot(
            system_id,
            slot_id,
            &q,
            &[old_component],
            &mut self.registry,
            &mut self.book,
            &mut p,
            now,
            &mut self.log,
        )
        .map_err(|r: FailureReason| format!("{r:?}"))?;
        if let Err(e) = self.runtime.begin_swap(system_id, slot_id, &new_contract, now, &mut self.book, &mut self.log) {
            let _ = self.book.transition(&new_contract, ContractState::Cancelled, now, &mut self.log);
            let _ = self.registry.release_grant(&new_contract, now, &mut self.log);
            return Err(e.to_string());
        }
        Ok(new_contract)
    }

    /// Advances every pending swap; a silent old component is waited for up
    /// to the drain timeout.
    pub fn poll_swaps(&mut self, now: Millis) -> Vec<(SwapReport, Vec<Delivery>)> {
        let pending: Vec<(String, String)> =
            self.runtime.swaps().map(|s| (s.system_id.clone(), s.slot_id.clone())).collect();
        let mut out = Vec::new();
        for (system, slot) in pending {
            let d = self.monitor.config.drain_timeout_ms;
            match self.runtime.poll_swap(&system, &slot, now, d, &mut self.registry, &mut self.book, &mut self.log) {
                Ok(Some((report, deliveries))) => {
                    self.monitor.forget(&report.old_contract);
                    out.push((report, deliveries));
                }
                Ok(None) => {}
                Err(e) => self.log.record(now, "SwapError", json!({ "system_id": system, "slot_id": slot, "error": e.to_string() })),
            }
        }
        if !out.is_empty() {
            self.publish_params(now);
        }
        out
    }

    pub fn stop(&mut self, system_id: &str, now: Millis) -> Result<Vec<Delivery>, RuntimeError> {
        self.runtime.stop(system_id, now, &mut self.registry, &mut self.book, &mut self.log)
    }

    pub fn status(&self, system_id: &str) -> Option<SystemStatus> {
        let p = self.runtime.pipeline(system_id)?;
        let slots = p
            .binding
            .iter()
            .filter_map(|(slot, contract)| {
                let c = self.book.get(contract)?;
                Some(SlotStatus {
                    slot_id: slot.clone(),
                    component_id: c.component_id.clone(),
                    contract_id: contract.clone(),
                    state: c.state,
                    agreed_price: c.agreed_price,
                    reliability: self.registry.get(&c.component_id).map_or(0.0, |e| e.qos.reliability),
                })
            })
            .collect();
        let messages_lost = p.channels.values().map(|c| c.routed - c.acked + c.dropped).sum();
        Some(SystemStatus { system_id: system_id.to_string(), phase: p.phase, slots, messages_lost })
    }

    /// The live state in the same canonical form replay produces.
    pub fn snapshot(&self) -> StateSnapshot {
        StateSnapshot {
            components: self.registry.snapshot_components(),
            contracts: self.book.snapshot(),
            grants: self.registry.snapshot_grants(),
            pipelines: self.runtime.snapshot(),
        }
    }

    pub fn state_hash(&self) -> String {
        self.snapshot().hash()
    }
}
