//! Hot swap: pause inbound, drain, rebind, resume.

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{Delivery, Phase, Runtime, RuntimeError};
use crate::component::Millis;
use crate::eventlog::EventLog;
use crate::procurement::{ContractBook, ContractError, ContractState};
use crate::registry::Registry;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PendingSwap {
    pub system_id: String,
    pub slot_id: String,
    pub old_contract: String,
    pub old_component: String,
    pub new_contract: String,
    pub new_component: String,
    pub started_at: Millis,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwapReport {
    pub system_id: String,
    pub slot_id: String,
    pub old_contract: String,
    pub new_contract: String,
    /// Messages held in the paused inbound buffers when flow resumed.
    pub buffered: usize,
    /// Unacknowledged messages taken back from a silent old component.
    pub replayed: usize,
    pub duration: Millis,
    pub timed_out: bool,
}

impl Runtime {
    pub fn swaps(&self) -> impl Iterator<Item = &PendingSwap> {
        self.swaps.values()
    }

    pub fn swap_in_progress(&self, system_id: &str, slot_id: &str) -> Option<&PendingSwap> {
        self.swaps.get(&(system_id.to_string(), slot_id.to_string()))
    }

    /// Starts replacing the component behind `slot_id` with `new_contract`.
    ///
    /// Inbound channels pause and the old contract moves to Draining; the old
    /// component keeps acknowledging what it already received.
    pub fn begin_swap(
        &mut self,
        system_id: &str,
        slot_id: &str,
        new_contract: &str,
        now: Millis,
        book: &mut ContractBook,
        log: &mut EventLog,
    ) -> Result<(), RuntimeError> {
        let key = (system_id.to_string(), slot_id.to_string());
        if self.swaps.contains_key(&key) {
            return Err(RuntimeError::SwapInProgress(slot_id.to_string()));
        }
        let p = self.pipe(system_id)?;
        if !matches!(p.phase, Phase::Flowing | Phase::Paused) {
            return Err(RuntimeError::WrongPhase(p.phase));
        }
        let old_contract = p
            .binding
            .get(slot_id)
            .ok_or_else(|| RuntimeError::MissingContract(slot_id.to_string()))?
            .clone();
        let old_component = p.components[slot_id].clone();
        let old = book.get(&old_contract).ok_or_else(|| ContractError::Unknown(old_contract.clone()))?;
        if old.state != ContractState::Serving {
            return Err(RuntimeError::ContractWrongState {
                id: old_contract,
                state: old.state,
                expected: ContractState::Serving,
            });
        }
        let new = book.get(new_contract).ok_or_else(|| ContractError::Unknown(new_contract.to_string()))?;
        if new.state != ContractState::Reserved || new.system_id != system_id || new.slot_id != slot_id {
            return Err(RuntimeError::ContractWrongState {
                id: new_contract.to_string(),
                state: new.state,
                expected: ContractState::Reserved,
            });
        }
        let new_component = new.component_id.clone();
        self.pause_inbound(system_id, slot_id)?;
        book.transition(&old_contract, ContractState::Draining, now, log)?;
        log.record(
            now,
            "SwapStarted",
            json!({
                "system_id": system_id,
                "slot_id": slot_id,
                "old_contract": old_contract,
                "new_contract": new_contract,
            }),
        );
        self.swaps.insert(
            key,
            PendingSwap {
                system_id: system_id.to_string(),
                slot_id: slot_id.to_string(),
                old_contract,
                old_component,
                new_contract: new_contract.to_string(),
                new_component,
                started_at: now,
            },
        );
        Ok(())
    }

    /// Messages still in flight to the old component of a pending swap.
    pub fn swap_inflight(&self, system_id: &str, slot_id: &str) -> usize {
        let Some(p) = self.pipelines.get(system_id) else { return 0 };
        p.inbound(slot_id).map(|c| c.inflight.len()).sum()
    }

    /// Completes the swap once drained, or forcibly after `drain_timeout`.
    #[allow(clippy::too_many_arguments)]
    pub fn poll_swap(
        &mut self,
        system_id: &str,
        slot_id: &str,
        now: Millis,
        drain_timeout: Millis,
        registry: &mut Registry,
        book: &mut ContractBook,
        log: &mut EventLog,
    ) -> Result<Option<(SwapReport, Vec<Delivery>)>, RuntimeError> {
        let key = (system_id.to_string(), slot_id.to_string());
        let pending = self
            .swaps
            .get(&key)
            .cloned()
            .ok_or_else(|| RuntimeError::NoSwap(slot_id.to_string()))?;
        let inflight = self.swap_inflight(system_id, slot_id);
        let timed_out = inflight > 0;
        if timed_out && now.saturating_sub(pending.started_at) < drain_timeout {
            return Ok(None);
        }

        let p = self.pipe_mut_crate(system_id)?;
        let mut replayed = 0;
        for c in p.channels.values_mut().filter(|c| c.to_slot == slot_id) {
            while let Some((m, _)) = c.inflight.pop_back() {
                c.buffer.push_front(m);
                replayed += 1;
            }
        }
        if timed_out {
            log.record(
                now,
                "SwapTimeout",
                json!({ "system_id": system_id, "slot_id": slot_id, "replayed": replayed }),
            );
        }
        let buffered = p.inbound(slot_id).map(|c| c.buffer.len()).sum();

        book.transition(&pending.new_contract, ContractState::Serving, now, log)?;
        registry.set_serving(&pending.new_contract, true, now, log)?;
        p.binding.insert(slot_id.to_string(), pending.new_contract.clone());
        p.components.insert(slot_id.to_string(), pending.new_component.clone());
        log.record(
            now,
            "SlotRebound",
            json!({ "system_id": system_id, "slot_id": slot_id, "contract_id": pending.new_contract }),
        );
        self.swaps.remove(&key);
        let out = self.resume_inbound(system_id, slot_id)?;
        book.transition(&pending.old_contract, ContractState::Superseded, now, log)?;
        registry.release_grant(&pending.old_contract, now, log)?;

        let report = SwapReport {
            system_id: system_id.to_string(),
            slot_id: slot_id.to_string(),
            old_contract: pending.old_contract,
            new_contract: pending.new_contract,
            buffered,
            replayed,
            duration: now.saturating_sub(pending.started_at),
            timed_out,
        };
        log.record(now, "SwapCompleted", json!(report));
        Ok(Some((report, out)))
    }
}

/// Swaps in one call. A live old component acknowledges its in-flight
/// messages immediately; a dead one forces the timeout path.
#[allow(clippy::too_many_arguments)]
pub fn hot_swap(
    rt: &mut Runtime,
    system_id: &str,
    slot_id: &str,
    new_contract: &str,
    old_alive: bool,
    now: Millis,
    drain_timeout: Millis,
    registry: &mut Registry,
    book: &mut ContractBook,
    log: &mut EventLog,
) -> Result<(SwapReport, Vec<Delivery>), RuntimeError> {
    rt.begin_swap(system_id, slot_id, new_contract, now, book, log)?;
    let mut t = now;
    if old_alive {
        let old = rt.swap_in_progress(system_id, slot_id).expect("just begun").old_component.clone();
        let heads: Vec<(String, u64)> = rt
            .pipe(system_id)?
            .inbound(slot_id)
            .flat_map(|c| c.inflight.iter().map(|(m, _)| (c.id.clone(), m.seq)))
            .collect();
        for (channel, seq) in heads {
            rt.ack(system_id, &channel, seq, &old)?;
        }
    } else {
        t = now + drain_timeout;
    }
    Ok(rt
        .poll_swap(system_id, slot_id, t, drain_timeout, registry, book, log)?
        .expect("drained or timed out"))
}
