//! Service procurement: shortlist, select, reserve, escalate.

pub mod auction;
pub mod contract;
pub mod negotiation;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::blueprint::{validate_blueprint, BlueprintSpec};
use crate::component::{AttrValue, Millis, Nature, SlaTerms, SlotQuery, ValidationReport};
use crate::eventlog::EventLog;
use crate::registry::{GrantKind, PoolEntry, Registry};

pub use auction::{bids_from, run_reverse_auction, AuctionError, AuctionResult, Bid};
pub use contract::{Contract, ContractBook, ContractError, ContractState};
pub use negotiation::{
    negotiate, BuyerLimits, NegotiationTranscript, Offer, Outcome, Seller, SellerMove, Tactic,
    TimeDependentSeller,
};

/// Query results split by nature, each in registry order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Shortlist {
    pub machines: Vec<PoolEntry>,
    pub humans: Vec<PoolEntry>,
}

pub fn shortlist(slot: &SlotQuery, pool: &Registry) -> Shortlist {
    let mut out = Shortlist::default();
    for e in pool.query(slot) {
        match e.descriptor.nature {
            Nature::Machine => out.machines.push(e),
            Nature::Human => out.humans.push(e),
        }
    }
    out
}

/// Source of human counterparties.
pub trait HumanMarket {
    fn negotiate(
        &mut self,
        candidate: &PoolEntry,
        tactic: &Tactic,
        limits: &BuyerLimits,
        now: Millis,
        log: &mut EventLog,
    ) -> NegotiationTranscript;
}

/// Humans played by time-dependent sellers whose private reservation is read
/// from the `reservation_price` attribute (defaulting to the posted price).
#[derive(Debug, Default, Clone, Copy)]
pub struct ScriptedHumans;

pub fn scripted_seller(candidate: &PoolEntry, tactic: &Tactic) -> TimeDependentSeller {
    let attr = |k: &str| match candidate.descriptor.attributes.get(k) {
        Some(AttrValue::Number(n)) => Some(*n),
        _ => None,
    };
    let posted = candidate.descriptor.posted_terms.price;
    TimeDependentSeller {
        reservation: attr("reservation_price").unwrap_or(posted),
        opening: posted,
        quality: candidate.descriptor.posted_terms.min_quality,
        beta: attr("concession_beta").unwrap_or(1.0),
        rounds: tactic.rounds,
        grain: tactic.grain,
        weights: tactic.weights,
    }
}

impl HumanMarket for ScriptedHumans {
    fn negotiate(
        &mut self,
        candidate: &PoolEntry,
        tactic: &Tactic,
        limits: &BuyerLimits,
        _now: Millis,
        _log: &mut EventLog,
    ) -> NegotiationTranscript {
        negotiate(tactic, limits, &mut scripted_seller(candidate, tactic))
    }
}

/// Injection point for reservation commits that fail.
pub trait CommitFaults {
    fn fail_commit(&mut self, slot_id: &str, component_id: &str) -> bool;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct NoFaults;

impl CommitFaults for NoFaults {
    fn fail_commit(&mut self, _: &str, _: &str) -> bool {
        false
    }
}

pub struct Procurer<'a> {
    pub tactic: Tactic,
    pub humans: &'a mut dyn HumanMarket,
    pub faults: &'a mut dyn CommitFaults,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FailureReason {
    NoCandidates,
    BudgetExceeded,
    CommitFailed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotFailure {
    pub slot_id: String,
    pub reason: FailureReason,
}

/// Raised to the cognitive layer when the pool cannot staff a system.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InsufficiencyEscalation {
    pub system_id: String,
    pub failing: Vec<SlotFailure>,
}

impl InsufficiencyEscalation {
    pub fn slot_ids(&self) -> Vec<&str> {
        self.failing.iter().map(|f| f.slot_id.as_str()).collect()
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ProcureError {
    #[error("invalid blueprint: {0}")]
    InvalidBlueprint(ValidationReport),
    #[error("insufficient pool for {}: {:?}", .0.system_id, .0.failing)]
    Insufficient(InsufficiencyEscalation),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemContractSet {
    pub system_id: String,
    /// slot id → contract id.
    pub contracts: BTreeMap<String, String>,
    pub total_price: f64,
}

/// The option chosen for one slot before commit.
#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub slot_id: String,
    pub component_id: String,
    pub nature: Nature,
    pub price: f64,
    pub quality: f64,
    pub terms: SlaTerms,
}

/// Picks the cheaper of the machine auction and the best-human negotiation.
///
/// `reserve` caps the price and may be below the slot's own cap when a budget
/// is being spent down. `pending` is capacity already claimed by this attempt.
#[allow(clippy::too_many_arguments)]
pub fn select_for_slot(
    system_id: &str,
    slot_id: &str,
    query: &SlotQuery,
    reserve: f64,
    exclude: &[&str],
    pending: &BTreeMap<String, f64>,
    registry: &Registry,
    procurer: &mut Procurer<'_>,
    now: Millis,
    log: &mut EventLog,
) -> Result<Selection, FailureReason> {
    let fits = |e: &PoolEntry| {
        let claimed = pending.get(&e.descriptor.id).copied().unwrap_or(0.0);
        !exclude.contains(&e.descriptor.id.as_str())
            && e.residual_capacity() - claimed + 1e-9 >= query.rate
    };
    let mut list = shortlist(query, registry);
    list.machines.retain(|e| fits(e));
    list.humans.retain(|e| fits(e));
    if list.machines.is_empty() && list.humans.is_empty() {
        return Err(FailureReason::NoCandidates);
    }

    let mut machine: Option<Selection> = None;
    if !list.machines.is_empty() {
        let outcome = run_reverse_auction(&bids_from(&list.machines), reserve);
        log.record(
            now,
            "AuctionHeld",
            json!({
                "system_id": system_id,
                "slot_id": slot_id,
                "reserve": reserve,
                "result": outcome.as_ref().ok(),
            }),
        );
        if let Ok(r) = outcome {
            let e = list.machines.iter().find(|e| e.descriptor.id == r.winner).expect("winner bid");
            machine = Some(selection(slot_id, e, r.payment, e.descriptor.posted_terms.min_quality, query));
        }
    }

    let mut human: Option<Selection> = None;
    if let Some(e) = list.humans.first() {
        let limits = BuyerLimits {
            max_price: reserve,
            min_quality: query.min_quality,
            target_quality: e.descriptor.posted_terms.min_quality,
        };
        let t = procurer.humans.negotiate(e, &procurer.tactic, &limits, now, log);
        log.record(
            now,
            "NegotiationHeld",
            json!({
                "system_id": system_id,
                "slot_id": slot_id,
                "component_id": e.descriptor.id,
                "transcript": t,
            }),
        );
        if let Some(deal) = t.agreement() {
            if deal.price <= reserve + 1e-9 && deal.quality + 1e-9 >= query.min_quality {
                human = Some(selection(slot_id, e, deal.price, deal.quality, query));
            }
        }
    }

    match (machine, human) {
        (Some(m), Some(h)) => Ok(if h.price < m.price { h } else { m }),
        (Some(s), None) | (None, Some(s)) => Ok(s),
        (None, None) if reserve + 1e-9 < query.max_price => Err(FailureReason::BudgetExceeded),
        (None, None) => Err(FailureReason::NoCandidates),
    }
}

fn selection(slot_id: &str, e: &PoolEntry, price: f64, quality: f64, q: &SlotQuery) -> Selection {
    let posted = &e.descriptor.posted_terms;
    let terms = SlaTerms {
        price,
        max_latency: posted.max_latency.min(q.max_latency),
        min_quality: quality.max(q.min_quality),
        capacity: q.rate,
        term: q.term,
        breach_penalty: posted.breach_penalty,
        early_termination_penalty: posted.early_termination_penalty,
        availability_window: posted.availability_window,
    };
    Selection {
        slot_id: slot_id.to_string(),
        component_id: e.descriptor.id.clone(),
        nature: e.descriptor.nature,
        price,
        quality,
        terms,
    }
}

/// Proposes and reserves every selection, or cancels all of them.
pub fn commit(
    system_id: &str,
    picks: &[Selection],
    registry: &mut Registry,
    book: &mut ContractBook,
    faults: &mut dyn CommitFaults,
    now: Millis,
    log: &mut EventLog,
) -> Result<BTreeMap<String, String>, String> {
    let ids: Vec<String> = picks
        .iter()
        .map(|p| book.propose(&p.component_id, p.nature, system_id, &p.slot_id, p.terms.clone(), now, log))
        .collect();
    let mut granted = Vec::new();
    let mut failed = None;
    for (p, id) in picks.iter().zip(&ids) {
        let ok = !faults.fail_commit(&p.slot_id, &p.component_id)
            && registry
                .grant_capacity(
                    &p.component_id,
                    id,
                    GrantKind::Contract { serving: false },
                    p.terms.capacity,
                    p.terms.term,
                    now,
                    log,
                )
                .is_ok();
        if !ok {
            failed = Some(p.slot_id.clone());
            break;
        }
        granted.push(id.clone());
    }
    if let Some(slot) = failed {
        for id in &granted {
            registry.release_grant(id, now, log).expect("granted above");
        }
        for id in &ids {
            book.transition(id, ContractState::Cancelled, now, log).expect("proposed above");
        }
        return Err(slot);
    }
    for id in &ids {
        book.transition(id, ContractState::Reserved, now, log).expect("proposed above");
    }
    Ok(picks.iter().map(|p| p.slot_id.clone()).zip(ids).collect())
}

fn escalate(system_id: &str, failing: Vec<SlotFailure>, now: Millis, log: &mut EventLog) -> ProcureError {
    let esc = InsufficiencyEscalation { system_id: system_id.to_string(), failing };
    log.record(now, "InsufficiencyEscalation", json!(esc));
    ProcureError::Insufficient(esc)
}

/// Staffs every slot of a blueprint under Reserved contracts, all or nothing.
pub fn procure_system(
    b: &BlueprintSpec,
    registry: &mut Registry,
    book: &mut ContractBook,
    procurer: &mut Procurer<'_>,
    now: Millis,
    log: &mut EventLog,
) -> Result<SystemContractSet, ProcureError> {
    let report = validate_blueprint(b);
    if !report.is_empty() {
        return Err(ProcureError::InvalidBlueprint(report));
    }
    let mut last_commit_failure = None;
    for _attempt in 0..2 {
        let mut picks = Vec::new();
        let mut failing = Vec::new();
        let mut pending: BTreeMap<String, f64> = BTreeMap::new();
        let mut spent = 0.0;
        for slot in &b.slots {
            let q = b.effective_query(&slot.slot_id).expect("slot exists");
            let reserve = match b.budget {
                Some(budget) => q.max_price.min(budget - spent),
                None => q.max_price,
            };
            match select_for_slot(&b.system_id, &slot.slot_id, &q, reserve, &[], &pending, registry, procurer, now, log) {
                Ok(s) => {
                    spent += s.price;
                    *pending.entry(s.component_id.clone()).or_default() += q.rate;
                    picks.push(s);
                }
                Err(reason) => failing.push(SlotFailure { slot_id: slot.slot_id.clone(), reason }),
            }
        }
        if !failing.is_empty() {
            return Err(escalate(&b.system_id, failing, now, log));
        }
        match commit(&b.system_id, &picks, registry, book, procurer.faults, now, log) {
            Ok(contracts) => {
                return Ok(SystemContractSet {
                    system_id: b.system_id.clone(),
                    contracts,
                    total_price: spent,
                })
            }
            Err(slot) => last_commit_failure = Some(slot),
        }
    }
    let slot_id = last_commit_failure.expect("two failed commits");
    Err(escalate(
        &b.system_id,
        vec![SlotFailure { slot_id, reason: FailureReason::CommitFailed }],
        now,
        log,
    ))
}

/// Procures a single Reserved contract for one slot, e.g. as a replacement.
#[allow(clippy::too_many_arguments)]
pub fn procure_slot(
    system_id: &str,
    slot_id: &str,
    query: &SlotQuery,
    exclude: &[&str],
    registry: &mut Registry,
    book: &mut ContractBook,
    procurer: &mut Procurer<'_>,
    now: Millis,
    log: &mut EventLog,
) -> Result<String, FailureReason> {
    let mut failure = FailureReason::NoCandidates;
    for _attempt in 0..2 {
        let pick = select_for_slot(
            system_id,
            slot_id,
            query,
            query.max_price,
            exclude,
            &BTreeMap::new(),
            registry,
            procurer,
            now,
            log,
        )?;
        match commit(system_id, &[pick], registry, book, procurer.faults, now, log) {
            Ok(mut m) => return Ok(m.remove(slot_id).expect("one slot")),
            Err(_) => failure = FailureReason::CommitFailed,
        }
    }
    Err(failure)
}
