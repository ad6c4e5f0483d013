//! When to replace a serving component.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::sla::BreachReason;
use crate::component::Millis;
use crate::procurement::Contract;

/// What the monitor currently knows about a serving contract.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Condition {
    Healthy,
    Faulty,
    Unavailable,
    Breach(BreachReason),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Trigger {
    Faulty,
    Unavailable,
    SlaBreach,
    ContractEnd,
    Economic,
}

/// A qualified alternative component and its posted price.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Quote {
    pub component_id: String,
    pub price: f64,
}

/// Candidates for a slot in procurement order, the current component excluded.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MarketSnapshot {
    pub quotes: Vec<Quote>,
    /// The slot's price cap, paid to a lone bidder.
    pub reserve: f64,
}

impl MarketSnapshot {
    /// Price a fresh second-price procurement would pay.
    pub fn expected_price(&self) -> Option<f64> {
        let mut prices: Vec<f64> = self.quotes.iter().map(|q| q.price).filter(|p| *p <= self.reserve).collect();
        prices.sort_by(f64::total_cmp);
        match prices.len() {
            0 => None,
            1 => Some(self.reserve),
            _ => Some(prices[1]),
        }
    }

    pub fn best(&self) -> Option<&Quote> {
        self.quotes.first()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Action {
    Keep,
    Replace { candidate: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplacementDecision {
    pub contract_id: String,
    pub action: Action,
    pub trigger: Option<Trigger>,
    pub expected_saving: f64,
    /// For breaches this is owed by the provider; for economic exits by the consumer.
    pub penalty_due: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ReplacementError {
    #[error("no replacement candidate for {0}")]
    NoCandidate(String),
}

/// `horizon_msgs` is the remaining horizon in messages, `H·rate`.
pub fn decide_replacement(
    contract: &Contract,
    condition: Condition,
    market: &MarketSnapshot,
    horizon_msgs: f64,
    now: Millis,
) -> Result<ReplacementDecision, ReplacementError> {
    let saving = market
        .expected_price()
        .map_or(0.0, |p| (contract.agreed_price - p) * horizon_msgs);
    let forced = match condition {
        Condition::Faulty => Some(Trigger::Faulty),
        Condition::Unavailable => Some(Trigger::Unavailable),
        Condition::Breach(_) => Some(Trigger::SlaBreach),
        Condition::Healthy if now >= contract.terms.term.1 => Some(Trigger::ContractEnd),
        Condition::Healthy => None,
    };
    let decision = |action, trigger, penalty_due| ReplacementDecision {
        contract_id: contract.contract_id.clone(),
        action,
        trigger,
        expected_saving: saving,
        penalty_due,
    };
    if let Some(trigger) = forced {
        let best = market
            .best()
            .ok_or_else(|| ReplacementError::NoCandidate(contract.contract_id.clone()))?;
        let penalty = match trigger {
            Trigger::ContractEnd => 0.0,
            _ => contract.terms.breach_penalty,
        };
        return Ok(decision(Action::Replace { candidate: best.component_id.clone() }, Some(trigger), penalty));
    }
    let penalty = contract.terms.early_termination_penalty;
    match market.best() {
        Some(best) if saving > penalty => Ok(decision(
            Action::Replace { candidate: best.component_id.clone() },
            Some(Trigger::Economic),
            penalty,
        )),
        _ => Ok(decision(Action::Keep, None, 0.0)),
    }
}
