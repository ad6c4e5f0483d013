//! Live pipelines: binding, flow control, routing and sharing.
//!
//! Messages go through the hub. Each channel numbers what it accepts, holds a
//! bounded buffer while paused, and keeps delivered messages in flight until
//! the consumer acknowledges them in order.

pub mod swap;

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::blueprint::{BlueprintSpec, Edge};
use crate::component::{DataType, Millis};
use crate::eventlog::{EventLog, PipelineSnapshot};
use crate::procurement::{ContractBook, ContractError, ContractState};
use crate::registry::{EntryStatus, GrantKind, Registry, RegistryError};

pub use swap::{PendingSwap, SwapReport};

pub const DEFAULT_BUFFER: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    Bound,
    Flowing,
    Paused,
    Stopped,
}

impl Phase {
    pub fn as_str(&self) -> &'static str {
        match self {
            Phase::Bound => "Bound",
            Phase::Flowing => "Flowing",
            Phase::Paused => "Paused",
            Phase::Stopped => "Stopped",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub channel: String,
    pub seq: u64,
    pub data_type: DataType,
    pub payload: Value,
    pub produced_at: Millis,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quality: Option<f64>,
}

/// A message handed to the component currently bound to the consumer slot.
#[derive(Debug, Clone, PartialEq)]
pub struct Delivery {
    pub system_id: String,
    pub consumer: String,
    pub msg: Message,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Channel {
    pub id: String,
    pub from_slot: String,
    pub to_slot: String,
    pub data_type: DataType,
    pub next_seq: u64,
    pub paused: bool,
    pub buffer: VecDeque<Message>,
    /// Delivered, not yet acknowledged, with the component it went to.
    pub inflight: VecDeque<(Message, String)>,
    pub last_acked: u64,
    pub routed: u64,
    pub acked: u64,
    /// Fan-out copies refused by a full buffer.
    pub dropped: u64,
}

impl Channel {
    fn new(e: &Edge) -> Self {
        Self {
            id: channel_id(e),
            from_slot: e.from_slot.clone(),
            to_slot: e.to_slot.clone(),
            data_type: e.data_type,
            next_seq: 1,
            paused: false,
            buffer: VecDeque::new(),
            inflight: VecDeque::new(),
            last_acked: 0,
            routed: 0,
            acked: 0,
            dropped: 0,
        }
    }
}

pub fn channel_id(e: &Edge) -> String {
    format!("{}->{}", e.from_slot, e.to_slot)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineInstance {
    pub system_id: String,
    pub start_time: Millis,
    /// slot → contract.
    pub binding: BTreeMap<String, String>,
    /// slot → component, cached from the bound contracts.
    pub components: BTreeMap<String, String>,
    pub channels: BTreeMap<String, Channel>,
    pub phase: Phase,
}

impl PipelineInstance {
    pub fn outbound<'a>(&'a self, slot: &'a str) -> impl Iterator<Item = &'a Channel> + 'a {
        self.channels.values().filter(move |c| c.from_slot == slot)
    }

    pub fn inbound<'a>(&'a self, slot: &'a str) -> impl Iterator<Item = &'a Channel> + 'a {
        self.channels.values().filter(move |c| c.to_slot == slot)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ShareMode {
    OutputShare,
    TimeShare,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShareGrant {
    pub component_id: String,
    pub grantee: String,
    pub mode: ShareMode,
    /// Zero for output shares.
    pub rate: f64,
    /// Output shares: the grantee slot fed by the source.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grantee_slot: Option<String>,
}

impl ShareGrant {
    pub fn holder(&self) -> String {
        format!("ts:{}:{}", self.grantee, self.component_id)
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum RuntimeError {
    #[error("no contract supplied for slot {0}")]
    MissingContract(String),
    #[error("contract {id} is {state:?}, expected {expected:?}")]
    ContractWrongState {
        id: String,
        state: ContractState,
        expected: ContractState,
    },
    #[error("system {0} is already bound")]
    AlreadyBound(String),
    #[error("unknown system {0}")]
    UnknownSystem(String),
    #[error("unknown channel {0}")]
    UnknownChannel(String),
    #[error("start at {now} before start time {start}")]
    BeforeStartTime { now: Millis, start: Millis },
    #[error("operation not allowed in phase {0:?}")]
    WrongPhase(Phase),
    #[error("channel {channel} carries {expected:?}, got {got:?}")]
    TypeMismatch {
        channel: String,
        expected: DataType,
        got: DataType,
    },
    #[error("buffer full on channel {0}")]
    BufferOverflow(String),
    #[error("ack of seq {seq} by {by} does not match the head of {channel}")]
    AckMismatch { channel: String, seq: u64, by: String },
    #[error("component {0} is not serving any flowing pipeline")]
    SourceNotServing(String),
    #[error("no share for {0}")]
    UnknownShare(String),
    #[error("slot {0} is mid-swap")]
    SwapInProgress(String),
    #[error("no swap in progress for slot {0}")]
    NoSwap(String),
    #[error(transparent)]
    Contract(#[from] ContractError),
    #[error(transparent)]
    Registry(#[from] RegistryError),
}

#[derive(Debug, Clone)]
pub struct Runtime {
    pipelines: BTreeMap<String, PipelineInstance>,
    shares: Vec<ShareGrant>,
    pub(crate) swaps: BTreeMap<(String, String), PendingSwap>,
    buffer_cap: usize,
}

impl Default for Runtime {
    fn default() -> Self {
        Self::new(DEFAULT_BUFFER)
    }
}

impl Runtime {
    pub fn new(buffer_cap: usize) -> Self {
        Self {
            pipelines: BTreeMap::new(),
            shares: Vec::new(),
            swaps: BTreeMap::new(),
            buffer_cap,
        }
    }

    pub fn pipeline(&self, system_id: &str) -> Option<&PipelineInstance> {
        self.pipelines.get(system_id)
    }

    pub fn pipelines(&self) -> impl Iterator<Item = &PipelineInstance> {
        self.pipelines.values()
    }

    pub fn shares(&self) -> &[ShareGrant] {
        &self.shares
    }

    fn pipe_mut(&mut self, system_id: &str) -> Result<&mut PipelineInstance, RuntimeError> {
        self.pipelines
            .get_mut(system_id)
            .ok_or_else(|| RuntimeError::UnknownSystem(system_id.to_string()))
    }

    fn set_phase(&mut self, system_id: &str, phase: Phase, now: Millis, log: &mut EventLog) {
        if let Some(p) = self.pipelines.get_mut(system_id) {
            p.phase = phase;
            log.record(now, "PipelinePhase", json!({ "system_id": system_id, "phase": phase.as_str() }));
        }
    }

    pub fn bind(
        &mut self,
        b: &BlueprintSpec,
        contracts: &BTreeMap<String, String>,
        book: &ContractBook,
        now: Millis,
        log: &mut EventLog,
    ) -> Result<&PipelineInstance, RuntimeError> {
        if self.pipelines.contains_key(&b.system_id) {
            return Err(RuntimeError::AlreadyBound(b.system_id.clone()));
        }
        let mut components = BTreeMap::new();
        for slot in &b.slots {
            let id = contracts
                .get(&slot.slot_id)
                .ok_or_else(|| RuntimeError::MissingContract(slot.slot_id.clone()))?;
            let c = book.get(id).ok_or_else(|| ContractError::Unknown(id.clone()))?;
            if c.state != ContractState::Reserved {
                return Err(RuntimeError::ContractWrongState {
                    id: id.clone(),
                    state: c.state,
                    expected: ContractState::Reserved,
                });
            }
            components.insert(slot.slot_id.clone(), c.component_id.clone());
        }
        let binding: BTreeMap<String, String> = b
            .slots
            .iter()
            .map(|s| (s.slot_id.clone(), contracts[&s.slot_id].clone()))
            .collect();
        log.record(now, "PipelineBound", json!({ "system_id": b.system_id, "binding": binding }));
        let p = PipelineInstance {
            system_id: b.system_id.clone(),
            start_time: b.start_time,
            binding,
            components,
            channels: b.edges.iter().map(|e| (channel_id(e), Channel::new(e))).collect(),
            phase: Phase::Bound,
        };
        Ok(self.pipelines.entry(b.system_id.clone()).or_insert(p))
    }

    pub fn start(
        &mut self,
        system_id: &str,
        now: Millis,
        registry: &mut Registry,
        book: &mut ContractBook,
        log: &mut EventLog,
    ) -> Result<(), RuntimeError> {
        let p = self.pipe_mut(system_id)?;
        if p.phase != Phase::Bound {
            return Err(RuntimeError::WrongPhase(p.phase));
        }
        if now < p.start_time {
            return Err(RuntimeError::BeforeStartTime { now, start: p.start_time });
        }
        let binding = p.binding.clone();
        for (slot, contract) in &binding {
            book.transition(contract, ContractState::Serving, now, log)?;
            registry.set_serving(contract, true, now, log)?;
            let component = &self.pipelines[system_id].components[slot];
            log.record(now, "StartSignal", json!({ "system_id": system_id, "slot_id": slot, "component_id": component }));
        }
        self.set_phase(system_id, Phase::Flowing, now, log);
        Ok(())
    }

    /// Producer-side entry: `slot` emits one message on all its out-channels.
    ///
    /// Output shares of the emitting component receive copies on the grantee
    /// pipelines with their own numbering.
    #[allow(clippy::too_many_arguments)]
    pub fn emit(
        &mut self,
        system_id: &str,
        slot: &str,
        data_type: DataType,
        payload: Value,
        quality: Option<f64>,
        now: Millis,
    ) -> Result<Vec<Delivery>, RuntimeError> {
        let cap = self.buffer_cap;
        let p = self.pipe_mut(system_id)?;
        if !matches!(p.phase, Phase::Flowing | Phase::Paused) {
            return Err(RuntimeError::WrongPhase(p.phase));
        }
        let ids: Vec<String> = p.outbound(slot).map(|c| c.id.clone()).collect();
        for id in &ids {
            let c = &p.channels[id];
            if c.data_type != data_type {
                return Err(RuntimeError::TypeMismatch { channel: id.clone(), expected: c.data_type, got: data_type });
            }
            if c.paused && c.buffer.len() >= cap {
                return Err(RuntimeError::BufferOverflow(id.clone()));
            }
        }
        let mut out = Vec::new();
        for id in &ids {
            route_on(p, id, data_type, &payload, quality, now, &mut out);
        }

        let source = p.components.get(slot).cloned();
        let grantees: Vec<(String, String)> = self
            .shares
            .iter()
            .filter(|s| s.mode == ShareMode::OutputShare && Some(&s.component_id) == source.as_ref())
            .filter_map(|s| Some((s.grantee.clone(), s.grantee_slot.clone()?)))
            .collect();
        for (grantee, gslot) in grantees {
            let Some(g) = self.pipelines.get_mut(&grantee) else { continue };
            if !matches!(g.phase, Phase::Flowing | Phase::Paused) {
                continue;
            }
            let ids: Vec<String> = g
                .outbound(&gslot)
                .filter(|c| c.data_type == data_type)
                .map(|c| c.id.clone())
                .collect();
            for id in ids {
                let c = &g.channels[&id];
                if c.paused && c.buffer.len() >= cap {
                    g.channels.get_mut(&id).expect("listed").dropped += 1;
                    continue;
                }
                route_on(g, &id, data_type, &payload, quality, now, &mut out);
            }
        }
        Ok(out)
    }

    /// Single-channel form of `emit`, without fan-out.
    pub fn route(
        &mut self,
        system_id: &str,
        channel: &str,
        data_type: DataType,
        payload: Value,
        now: Millis,
    ) -> Result<Vec<Delivery>, RuntimeError> {
        let cap = self.buffer_cap;
        let p = self.pipe_mut(system_id)?;
        if !matches!(p.phase, Phase::Flowing | Phase::Paused) {
            return Err(RuntimeError::WrongPhase(p.phase));
        }
        let c = p
            .channels
            .get(channel)
            .ok_or_else(|| RuntimeError::UnknownChannel(channel.to_string()))?;
        if c.data_type != data_type {
            return Err(RuntimeError::TypeMismatch { channel: channel.to_string(), expected: c.data_type, got: data_type });
        }
        if c.paused && c.buffer.len() >= cap {
            return Err(RuntimeError::BufferOverflow(channel.to_string()));
        }
        let mut out = Vec::new();
        route_on(p, channel, data_type, &payload, None, now, &mut out);
        Ok(out)
    }

    /// Consumer acknowledgement; must match the head of the channel's in-flight queue.
    pub fn ack(&mut self, system_id: &str, channel: &str, seq: u64, by: &str) -> Result<Message, RuntimeError> {
        let p = self.pipe_mut(system_id)?;
        let c = p
            .channels
            .get_mut(channel)
            .ok_or_else(|| RuntimeError::UnknownChannel(channel.to_string()))?;
        match c.inflight.front() {
            Some((m, to)) if m.seq == seq && to == by => {}
            _ => {
                return Err(RuntimeError::AckMismatch { channel: channel.to_string(), seq, by: by.to_string() })
            }
        }
        let (m, _) = c.inflight.pop_front().expect("checked");
        c.last_acked = m.seq;
        c.acked += 1;
        Ok(m)
    }

    pub fn pause(&mut self, system_id: &str, now: Millis, log: &mut EventLog) -> Result<(), RuntimeError> {
        let p = self.pipe_mut(system_id)?;
        if p.phase != Phase::Flowing {
            return Err(RuntimeError::WrongPhase(p.phase));
        }
        for c in p.channels.values_mut() {
            c.paused = true;
        }
        self.set_phase(system_id, Phase::Paused, now, log);
        Ok(())
    }

    pub fn resume(&mut self, system_id: &str, now: Millis, log: &mut EventLog) -> Result<Vec<Delivery>, RuntimeError> {
        let busy: Vec<String> = self
            .swaps
            .keys()
            .filter(|(s, _)| s == system_id)
            .map(|(_, slot)| slot.clone())
            .collect();
        let p = self.pipe_mut(system_id)?;
        if p.phase != Phase::Paused {
            return Err(RuntimeError::WrongPhase(p.phase));
        }
        let ids: Vec<String> = p
            .channels
            .values()
            .filter(|c| !busy.contains(&c.to_slot))
            .map(|c| c.id.clone())
            .collect();
        let mut out = Vec::new();
        for id in ids {
            resume_channel(p, &id, &mut out);
        }
        self.set_phase(system_id, Phase::Flowing, now, log);
        Ok(out)
    }

    pub(crate) fn pause_inbound(&mut self, system_id: &str, slot: &str) -> Result<(), RuntimeError> {
        let p = self.pipe_mut(system_id)?;
        for c in p.channels.values_mut().filter(|c| c.to_slot == slot) {
            c.paused = true;
        }
        Ok(())
    }

    pub(crate) fn resume_inbound(&mut self, system_id: &str, slot: &str) -> Result<Vec<Delivery>, RuntimeError> {
        let p = self.pipe_mut(system_id)?;
        let mut out = Vec::new();
        if p.phase == Phase::Paused {
            return Ok(out);
        }
        let ids: Vec<String> = p.inbound(slot).map(|c| c.id.clone()).collect();
        for id in ids {
            resume_channel(p, &id, &mut out);
        }
        Ok(out)
    }

    pub(crate) fn pipe(&self, system_id: &str) -> Result<&PipelineInstance, RuntimeError> {
        self.pipelines
            .get(system_id)
            .ok_or_else(|| RuntimeError::UnknownSystem(system_id.to_string()))
    }

    pub(crate) fn pipe_mut_crate(&mut self, system_id: &str) -> Result<&mut PipelineInstance, RuntimeError> {
        self.pipe_mut(system_id)
    }

    /// Ends a system: flushes buffers, completes contracts, releases capacity.
    ///
    /// Flushed messages are returned for delivery and may still be acked.
    pub fn stop(
        &mut self,
        system_id: &str,
        now: Millis,
        registry: &mut Registry,
        book: &mut ContractBook,
        log: &mut EventLog,
    ) -> Result<Vec<Delivery>, RuntimeError> {
        if let Some((_, slot)) = self.swaps.keys().find(|(s, _)| s == system_id) {
            return Err(RuntimeError::SwapInProgress(slot.clone()));
        }
        let p = self.pipe_mut(system_id)?;
        if !matches!(p.phase, Phase::Flowing | Phase::Paused) {
            return Err(RuntimeError::WrongPhase(p.phase));
        }
        let mut out = Vec::new();
        let ids: Vec<String> = p.channels.keys().cloned().collect();
        for id in ids {
            resume_channel(p, &id, &mut out);
        }
        let binding = p.binding.clone();
        for contract in binding.values() {
            book.transition(contract, ContractState::Completed, now, log)?;
            registry.release_grant(contract, now, log)?;
        }
        let mine: Vec<ShareGrant> = self
            .shares
            .iter()
            .filter(|s| s.grantee == system_id && s.mode == ShareMode::TimeShare)
            .cloned()
            .collect();
        for s in mine {
            registry.release_grant(&s.holder(), now, log)?;
        }
        let components: Vec<String> = self.pipelines[system_id].components.values().cloned().collect();
        self.shares.retain(|s| {
            s.grantee != system_id && !(s.mode == ShareMode::OutputShare && components.contains(&s.component_id))
        });
        self.set_phase(system_id, Phase::Stopped, now, log);
        Ok(out)
    }

    /// Feeds `grantee_slot` of `grantee` from a component already serving elsewhere.
    pub fn attach_output_share(
        &mut self,
        source_component: &str,
        grantee: &str,
        grantee_slot: &str,
        now: Millis,
        registry: &mut Registry,
        book: &ContractBook,
        log: &mut EventLog,
    ) -> Result<ShareGrant, RuntimeError> {
        let serving = registry.get(source_component).map(|e| e.status) == Some(EntryStatus::Serving)
            && self.pipelines.values().any(|p| {
                matches!(p.phase, Phase::Flowing | Phase::Paused)
                    && p.system_id != grantee
                    && p.components.values().any(|c| c == source_component)
            });
        if !serving {
            return Err(RuntimeError::SourceNotServing(source_component.to_string()));
        }
        let g = self.pipe(grantee)?;
        let contract_id = g
            .binding
            .get(grantee_slot)
            .ok_or_else(|| RuntimeError::MissingContract(grantee_slot.to_string()))?
            .clone();
        let c = book.get(&contract_id).ok_or_else(|| ContractError::Unknown(contract_id.clone()))?;
        if c.component_id != source_component || c.state != ContractState::Reserved {
            return Err(RuntimeError::ContractWrongState {
                id: contract_id,
                state: c.state,
                expected: ContractState::Reserved,
            });
        }
        registry.set_grant_rate(&contract_id, 0.0, now, log)?;
        let share = ShareGrant {
            component_id: source_component.to_string(),
            grantee: grantee.to_string(),
            mode: ShareMode::OutputShare,
            rate: 0.0,
            grantee_slot: Some(grantee_slot.to_string()),
        };
        log.record(now, "ShareAttached", json!(share));
        self.shares.push(share.clone());
        Ok(share)
    }

    pub fn detach_output_share(
        &mut self,
        source_component: &str,
        grantee: &str,
        now: Millis,
        log: &mut EventLog,
    ) -> Result<(), RuntimeError> {
        let before = self.shares.len();
        self.shares.retain(|s| {
            !(s.mode == ShareMode::OutputShare && s.component_id == source_component && s.grantee == grantee)
        });
        if self.shares.len() == before {
            return Err(RuntimeError::UnknownShare(format!("{grantee}:{source_component}")));
        }
        log.record(now, "ShareDetached", json!({ "component_id": source_component, "grantee": grantee }));
        Ok(())
    }

    /// Lends `rate` of a component's spare capacity to `grantee`.
    pub fn allocate_timeshare(
        &mut self,
        component_id: &str,
        grantee: &str,
        rate: f64,
        now: Millis,
        registry: &mut Registry,
        log: &mut EventLog,
    ) -> Result<ShareGrant, RuntimeError> {
        let share = ShareGrant {
            component_id: component_id.to_string(),
            grantee: grantee.to_string(),
            mode: ShareMode::TimeShare,
            rate,
            grantee_slot: None,
        };
        let term = registry
            .get(component_id)
            .map(|e| e.descriptor.posted_terms.term)
            .ok_or_else(|| RegistryError::UnknownId(component_id.to_string()))?;
        registry.grant_capacity(
            component_id,
            &share.holder(),
            GrantKind::TimeShare { system_id: grantee.to_string() },
            rate,
            term,
            now,
            log,
        )?;
        self.shares.push(share.clone());
        Ok(share)
    }

    pub fn release_timeshare(
        &mut self,
        component_id: &str,
        grantee: &str,
        now: Millis,
        registry: &mut Registry,
        log: &mut EventLog,
    ) -> Result<(), RuntimeError> {
        let pos = self
            .shares
            .iter()
            .position(|s| s.mode == ShareMode::TimeShare && s.component_id == component_id && s.grantee == grantee)
            .ok_or_else(|| RuntimeError::UnknownShare(format!("{grantee}:{component_id}")))?;
        let share = self.shares.remove(pos);
        registry.release_grant(&share.holder(), now, log)?;
        Ok(())
    }

    /// Messages accepted but not yet acknowledged, summed over all channels.
    pub fn unacked(&self) -> u64 {
        self.pipelines
            .values()
            .flat_map(|p| p.channels.values())
            .map(|c| c.routed - c.acked)
            .sum()
    }

    /// Unacknowledged plus dropped messages, summed over all channels.
    pub fn messages_lost(&self) -> u64 {
        self.unacked()
            + self
                .pipelines
                .values()
                .flat_map(|p| p.channels.values())
                .map(|c| c.dropped)
                .sum::<u64>()
    }

    pub fn snapshot(&self) -> BTreeMap<String, PipelineSnapshot> {
        self.pipelines
            .iter()
            .map(|(id, p)| {
                (
                    id.clone(),
                    PipelineSnapshot { phase: p.phase.as_str().to_string(), binding: p.binding.clone() },
                )
            })
            .collect()
    }
}

#[allow(clippy::too_many_arguments)]
fn route_on(
    p: &mut PipelineInstance,
    channel: &str,
    data_type: DataType,
    payload: &Value,
    quality: Option<f64>,
    now: Millis,
    out: &mut Vec<Delivery>,
) {
    let consumer = p.components.get(&p.channels[channel].to_slot).cloned().unwrap_or_default();
    let c = p.channels.get_mut(channel).expect("caller checked");
    let msg = Message {
        channel: c.id.clone(),
        seq: c.next_seq,
        data_type,
        payload: payload.clone(),
        produced_at: now,
        quality,
    };
    c.next_seq += 1;
    c.routed += 1;
    if c.paused {
        c.buffer.push_back(msg);
    } else {
        c.inflight.push_back((msg.clone(), consumer.clone()));
        out.push(Delivery { system_id: p.system_id.clone(), consumer, msg });
    }
}

fn resume_channel(p: &mut PipelineInstance, channel: &str, out: &mut Vec<Delivery>) {
    let consumer = p.components.get(&p.channels[channel].to_slot).cloned().unwrap_or_default();
    let c = p.channels.get_mut(channel).expect("caller checked");
    c.paused = false;
    while let Some(msg) = c.buffer.pop_front() {
        c.inflight.push_back((msg.clone(), consumer.clone()));
        out.push(Delivery { system_id: p.system_id.clone(), consumer: consumer.clone(), msg });
    }
}
