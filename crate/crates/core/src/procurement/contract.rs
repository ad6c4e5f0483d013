use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::component::{Millis, Nature, SlaTerms};
use crate::eventlog::{ContractSnapshot, EventLog};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ContractState {
    Proposed,
    Reserved,
    Serving,
    Draining,
    Completed,
    Breached,
    Cancelled,
    Superseded,
}

impl ContractState {
    pub fn as_str(&self) -> &'static str {
        match self {
            ContractState::Proposed => "Proposed",
            ContractState::Reserved => "Reserved",
            ContractState::Serving => "Serving",
            ContractState::Draining => "Draining",
            ContractState::Completed => "Completed",
            ContractState::Breached => "Breached",
            ContractState::Cancelled => "Cancelled",
            ContractState::Superseded => "Superseded",
        }
    }

    pub fn can_become(self, to: ContractState) -> bool {
        use ContractState::*;
        matches!(
            (self, to),
            (Proposed, Reserved)
                | (Proposed, Cancelled)
                | (Reserved, Serving)
                | (Reserved, Cancelled)
                | (Serving, Completed)
                | (Serving, Breached)
                | (Serving, Superseded)
                | (Serving, Draining)
                | (Draining, Superseded)
        )
    }

    pub fn is_terminal(self) -> bool {
        use ContractState::*;
        matches!(self, Completed | Breached | Cancelled | Superseded)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Contract {
    pub contract_id: String,
    pub component_id: String,
    pub system_id: String,
    pub slot_id: String,
    pub nature: Nature,
    /// Negotiated terms; `terms.price == agreed_price`.
    pub terms: SlaTerms,
    pub state: ContractState,
    pub agreed_price: f64,
    pub created_at: Millis,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ContractError {
    #[error("unknown contract {0}")]
    Unknown(String),
    #[error("illegal transition {from:?} -> {to:?} for {id}")]
    IllegalTransition {
        id: String,
        from: ContractState,
        to: ContractState,
    },
}

/// All contracts of a run, keyed by id.
#[derive(Debug, Default)]
pub struct ContractBook {
    contracts: BTreeMap<String, Contract>,
    next_id: u64,
}

impl ContractBook {
    pub fn new() -> Self {
        Self::default()
    }

    #[allow(clippy::too_many_arguments)]
    pub fn propose(
        &mut self,
        component_id: &str,
        nature: Nature,
        system_id: &str,
        slot_id: &str,
        terms: SlaTerms,
        now: Millis,
        log: &mut EventLog,
    ) -> String {
        self.next_id += 1;
        let id = format!("c-{:05}", self.next_id);
        let contract = Contract {
            contract_id: id.clone(),
            component_id: component_id.to_string(),
            system_id: system_id.to_string(),
            slot_id: slot_id.to_string(),
            nature,
            agreed_price: terms.price,
            terms,
            state: ContractState::Proposed,
            created_at: now,
        };
        log.record(now, "ContractProposed", json!({ "contract": contract }));
        self.contracts.insert(id.clone(), contract);
        id
    }

    pub fn get(&self, id: &str) -> Option<&Contract> {
        self.contracts.get(id)
    }

    pub fn all(&self) -> impl Iterator<Item = &Contract> {
        self.contracts.values()
    }

    pub fn of_system<'a>(&'a self, system_id: &'a str) -> impl Iterator<Item = &'a Contract> + 'a {
        self.contracts.values().filter(move |c| c.system_id == system_id)
    }

    pub fn count_in(&self, system_id: &str, state: ContractState) -> usize {
        self.of_system(system_id).filter(|c| c.state == state).count()
    }

    pub fn transition(
        &mut self,
        id: &str,
        to: ContractState,
        now: Millis,
        log: &mut EventLog,
    ) -> Result<(), ContractError> {
        let c = self
            .contracts
            .get_mut(id)
            .ok_or_else(|| ContractError::Unknown(id.to_string()))?;
        if !c.state.can_become(to) {
            return Err(ContractError::IllegalTransition {
                id: id.to_string(),
                from: c.state,
                to,
            });
        }
        let from = c.state;
        c.state = to;
        log.record(
            now,
            &format!("Contract{}", to.as_str()),
            json!({ "contract_id": id, "from": from.as_str() }),
        );
        Ok(())
    }

    pub(crate) fn snapshot(&self) -> BTreeMap<String, ContractSnapshot> {
        self.contracts
            .iter()
            .map(|(id, c)| {
                (
                    id.clone(),
                    ContractSnapshot {
                        component_id: c.component_id.clone(),
                        system_id: c.system_id.clone(),
                        slot_id: c.slot_id.clone(),
                        state: c.state.as_str().to_string(),
                        agreed_price: c.agreed_price,
                    },
                )
            })
            .collect()
    }
}
