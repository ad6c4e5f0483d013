//! The component pool.
//!
//! All mutations go through `&mut Registry`, so callers that share a registry
//! serialize on one writer. Every state change is recorded in the event log.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::component::{
    matches, validate_descriptor, ComponentDescriptor, Interval, Millis, SlotQuery,
    ValidationReport,
};
use crate::eventlog::{ComponentSnapshot, EventLog, GrantSnapshot};
use crate::monitor::qos::QosEstimate;

/// Slack for floating-point capacity comparisons.
const RATE_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EntryStatus {
    Available,
    Reserved,
    Serving,
    Offline,
}

impl EntryStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            EntryStatus::Available => "Available",
            EntryStatus::Reserved => "Reserved",
            EntryStatus::Serving => "Serving",
            EntryStatus::Offline => "Offline",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolEntry {
    pub descriptor: ComponentDescriptor,
    pub status: EntryStatus,
    pub allocated_rate: f64,
    pub qos: QosEstimate,
    pub registered_at: Millis,
    #[serde(default)]
    pub last_heartbeat: Option<Millis>,
}

impl PoolEntry {
    pub fn residual_capacity(&self) -> f64 {
        self.descriptor.posted_terms.capacity - self.allocated_rate
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum GrantKind {
    /// Capacity held by a contract; `serving` once the contract is Serving.
    Contract { serving: bool },
    TimeShare { system_id: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grant {
    pub holder: String,
    pub component_id: String,
    pub kind: GrantKind,
    pub rate: f64,
    pub term: Interval,
}

/// A contract whose component went away.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnavailableNotice {
    pub component_id: String,
    pub contract_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AvailabilityWarning {
    pub component_id: String,
    pub contract_id: String,
    pub term: Interval,
}

#[derive(Debug, Error, PartialEq)]
pub enum RegistryError {
    #[error("component {0} already registered with a different descriptor")]
    DuplicateId(String),
    #[error("invalid descriptor: {0}")]
    InvalidDescriptor(ValidationReport),
    #[error("unknown component {0}")]
    UnknownId(String),
    #[error("capacity {capacity} below allocated rate {allocated} for {id}")]
    CapacityBelowAllocated { id: String, capacity: f64, allocated: f64 },
    #[error("insufficient capacity on {id}: requested {requested}, residual {residual}")]
    InsufficientCapacity { id: String, requested: f64, residual: f64 },
    #[error("component {0} is offline")]
    Offline(String),
    #[error("unknown grant {0}")]
    UnknownGrant(String),
    #[error("grant holder {0} already exists")]
    DuplicateGrant(String),
}

#[derive(Debug, Default)]
pub struct Registry {
    entries: BTreeMap<String, PoolEntry>,
    grants: BTreeMap<String, Grant>,
    qos_alpha: f64,
}

impl Registry {
    pub fn new(qos_alpha: f64) -> Self {
        Self {
            entries: BTreeMap::new(),
            grants: BTreeMap::new(),
            qos_alpha,
        }
    }

    pub fn get(&self, id: &str) -> Option<&PoolEntry> {
        self.entries.get(id)
    }

    pub fn entries(&self) -> impl Iterator<Item = &PoolEntry> {
        self.entries.values()
    }

    pub fn grants(&self) -> impl Iterator<Item = &Grant> {
        self.grants.values()
    }

    pub fn grant(&self, holder: &str) -> Option<&Grant> {
        self.grants.get(holder)
    }

    pub fn qos_mut(&mut self, id: &str) -> Option<&mut QosEstimate> {
        self.entries.get_mut(id).map(|e| &mut e.qos)
    }

    pub fn register(
        &mut self,
        d: ComponentDescriptor,
        now: Millis,
        log: &mut EventLog,
    ) -> Result<PoolEntry, RegistryError> {
        let report = validate_descriptor(&d);
        if !report.is_empty() {
            return Err(RegistryError::InvalidDescriptor(report));
        }
        if let Some(existing) = self.entries.get(&d.id) {
            if existing.status != EntryStatus::Offline {
                return if existing.descriptor == d {
                    Ok(existing.clone())
                } else {
                    Err(RegistryError::DuplicateId(d.id))
                };
            }
            if self.grants.values().any(|g| g.component_id == d.id) {
                // Grants of a departed entry must be settled before it can return.
                return Err(RegistryError::DuplicateId(d.id));
            }
        }
        let entry = PoolEntry {
            qos: QosEstimate::new(self.qos_alpha, d.posted_terms.min_quality),
            descriptor: d,
            status: EntryStatus::Available,
            allocated_rate: 0.0,
            registered_at: now,
            last_heartbeat: None,
        };
        log.record(now, "ComponentRegistered", json!({ "descriptor": entry.descriptor }));
        self.entries.insert(entry.descriptor.id.clone(), entry.clone());
        Ok(entry)
    }

    pub fn deregister(
        &mut self,
        id: &str,
        now: Millis,
        log: &mut EventLog,
    ) -> Result<Vec<UnavailableNotice>, RegistryError> {
        self.take_offline(id, now, "deregistered", log)
    }

    /// Flips an entry Offline and notifies every contract holding capacity on it.
    pub fn take_offline(
        &mut self,
        id: &str,
        now: Millis,
        reason: &str,
        log: &mut EventLog,
    ) -> Result<Vec<UnavailableNotice>, RegistryError> {
        let entry = self
            .entries
            .get_mut(id)
            .ok_or_else(|| RegistryError::UnknownId(id.to_string()))?;
        if entry.status == EntryStatus::Offline {
            return Ok(vec![]);
        }
        entry.status = EntryStatus::Offline;
        log.record(now, "ComponentStatus", json!({ "id": id, "status": "Offline", "reason": reason }));
        let notices: Vec<UnavailableNotice> = self
            .grants
            .values()
            .filter(|g| g.component_id == id && matches!(g.kind, GrantKind::Contract { .. }))
            .map(|g| UnavailableNotice {
                component_id: id.to_string(),
                contract_id: g.holder.clone(),
            })
            .collect();
        for n in &notices {
            log.record(now, "Unavailable", json!(n));
        }
        Ok(notices)
    }

    /// Entries that are not Offline, have residual capacity and match `q`,
    /// ordered by price, then reliability (descending), then id.
    pub fn query(&self, q: &SlotQuery) -> Vec<PoolEntry> {
        let mut hits: Vec<PoolEntry> = self
            .entries
            .values()
            .filter(|e| {
                e.status != EntryStatus::Offline
                    && e.residual_capacity() > RATE_EPS
                    && matches(&e.descriptor, q)
            })
            .cloned()
            .collect();
        hits.sort_by(|a, b| {
            a.descriptor
                .posted_terms
                .price
                .total_cmp(&b.descriptor.posted_terms.price)
                .then(b.qos.reliability.total_cmp(&a.qos.reliability))
                .then_with(|| a.descriptor.id.cmp(&b.descriptor.id))
        });
        hits
    }

    pub fn update_availability(
        &mut self,
        id: &str,
        window: Option<Interval>,
        capacity: f64,
        now: Millis,
        log: &mut EventLog,
    ) -> Result<(PoolEntry, Vec<AvailabilityWarning>), RegistryError> {
        let entry = self
            .entries
            .get_mut(id)
            .ok_or_else(|| RegistryError::UnknownId(id.to_string()))?;
        if capacity + RATE_EPS < entry.allocated_rate || !(capacity > 0.0) {
            return Err(RegistryError::CapacityBelowAllocated {
                id: id.to_string(),
                capacity,
                allocated: entry.allocated_rate,
            });
        }
        entry.descriptor.posted_terms.capacity = capacity;
        entry.descriptor.posted_terms.availability_window = window;
        let entry = entry.clone();
        log.record(
            now,
            "AvailabilityUpdated",
            json!({ "id": id, "window": window, "capacity": capacity }),
        );
        let avail = entry.descriptor.posted_terms.availability();
        let warnings: Vec<AvailabilityWarning> = self
            .grants
            .values()
            .filter(|g| g.component_id == id && !avail.covers(&g.term))
            .map(|g| AvailabilityWarning {
                component_id: id.to_string(),
                contract_id: g.holder.clone(),
                term: g.term,
            })
            .collect();
        for w in &warnings {
            log.record(now, "AvailabilityWarning", json!(w));
        }
        Ok((entry, warnings))
    }

    pub fn heartbeat(&mut self, id: &str, ts: Millis) -> Result<(), RegistryError> {
        let entry = self
            .entries
            .get_mut(id)
            .ok_or_else(|| RegistryError::UnknownId(id.to_string()))?;
        entry.last_heartbeat = Some(ts);
        Ok(())
    }

    /// Takes offline every heartbeating entry that has missed `k` periods.
    pub fn sweep_liveness(
        &mut self,
        now: Millis,
        period: Millis,
        k: u32,
        log: &mut EventLog,
    ) -> Vec<UnavailableNotice> {
        let stale: Vec<String> = self
            .entries
            .values()
            .filter(|e| e.status != EntryStatus::Offline)
            .filter(|e| {
                e.last_heartbeat
                    .is_some_and(|t| now.saturating_sub(t) / period.max(1) >= u64::from(k))
            })
            .map(|e| e.descriptor.id.clone())
            .collect();
        let mut notices = Vec::new();
        for id in stale {
            notices.extend(
                self.take_offline(&id, now, "missed-heartbeats", log)
                    .expect("stale ids come from the registry"),
            );
        }
        notices
    }

    /// Allocates `rate` of a component's capacity to `holder`.
    pub fn grant_capacity(
        &mut self,
        component_id: &str,
        holder: &str,
        kind: GrantKind,
        rate: f64,
        term: Interval,
        now: Millis,
        log: &mut EventLog,
    ) -> Result<(), RegistryError> {
        if self.grants.contains_key(holder) {
            return Err(RegistryError::DuplicateGrant(holder.to_string()));
        }
        let entry = self
            .entries
            .get_mut(component_id)
            .ok_or_else(|| RegistryError::UnknownId(component_id.to_string()))?;
        if entry.status == EntryStatus::Offline {
            return Err(RegistryError::Offline(component_id.to_string()));
        }
        let residual = entry.residual_capacity();
        if rate > residual + RATE_EPS {
            return Err(RegistryError::InsufficientCapacity {
                id: component_id.to_string(),
                requested: rate,
                residual,
            });
        }
        entry.allocated_rate += rate;
        log.record(
            now,
            "GrantAdded",
            json!({ "holder": holder, "component_id": component_id, "rate": rate }),
        );
        self.grants.insert(
            holder.to_string(),
            Grant {
                holder: holder.to_string(),
                component_id: component_id.to_string(),
                kind,
                rate,
                term,
            },
        );
        self.refresh_status(component_id, now, log);
        Ok(())
    }

    pub fn release_grant(
        &mut self,
        holder: &str,
        now: Millis,
        log: &mut EventLog,
    ) -> Result<Grant, RegistryError> {
        let grant = self
            .grants
            .remove(holder)
            .ok_or_else(|| RegistryError::UnknownGrant(holder.to_string()))?;
        if let Some(entry) = self.entries.get_mut(&grant.component_id) {
            entry.allocated_rate = (entry.allocated_rate - grant.rate).max(0.0);
        }
        log.record(now, "GrantReleased", json!({ "holder": holder }));
        self.refresh_status(&grant.component_id, now, log);
        Ok(grant)
    }

    /// Changes the rate held by a grant (output shares drop theirs to zero).
    pub fn set_grant_rate(
        &mut self,
        holder: &str,
        rate: f64,
        now: Millis,
        log: &mut EventLog,
    ) -> Result<(), RegistryError> {
        let grant = self
            .grants
            .get_mut(holder)
            .ok_or_else(|| RegistryError::UnknownGrant(holder.to_string()))?;
        let entry = self
            .entries
            .get_mut(&grant.component_id)
            .ok_or_else(|| RegistryError::UnknownId(grant.component_id.clone()))?;
        let residual = entry.residual_capacity() + grant.rate;
        if rate > residual + RATE_EPS {
            return Err(RegistryError::InsufficientCapacity {
                id: grant.component_id.clone(),
                requested: rate,
                residual,
            });
        }
        entry.allocated_rate += rate - grant.rate;
        grant.rate = rate;
        log.record(now, "GrantRate", json!({ "holder": holder, "rate": rate }));
        Ok(())
    }

    pub fn set_serving(
        &mut self,
        holder: &str,
        serving: bool,
        now: Millis,
        log: &mut EventLog,
    ) -> Result<(), RegistryError> {
        let grant = self
            .grants
            .get_mut(holder)
            .ok_or_else(|| RegistryError::UnknownGrant(holder.to_string()))?;
        if let GrantKind::Contract { serving: s } = &mut grant.kind {
            *s = serving;
        }
        let id = grant.component_id.clone();
        self.refresh_status(&id, now, log);
        Ok(())
    }

    fn refresh_status(&mut self, id: &str, now: Millis, log: &mut EventLog) {
        let Some(entry) = self.entries.get(id) else {
            return;
        };
        if entry.status == EntryStatus::Offline {
            return;
        }
        let mut status = EntryStatus::Available;
        for g in self.grants.values().filter(|g| g.component_id == id) {
            match g.kind {
                GrantKind::Contract { serving: true } | GrantKind::TimeShare { .. } => {
                    status = EntryStatus::Serving;
                    break;
                }
                GrantKind::Contract { serving: false } => status = EntryStatus::Reserved,
            }
        }
        if status != entry.status {
            log.record(now, "ComponentStatus", json!({ "id": id, "status": status.as_str() }));
            self.entries.get_mut(id).expect("checked above").status = status;
        }
    }

    /// Sum of grant rates on a component, recomputed from the grant table.
    pub fn granted_rate(&self, id: &str) -> f64 {
        self.grants
            .values()
            .filter(|g| g.component_id == id)
            .map(|g| g.rate)
            .sum()
    }

    /// Checks capacity conservation for every entry.
    pub fn check_conservation(&self) -> Result<(), String> {
        for e in self.entries.values() {
            let sum = self.granted_rate(&e.descriptor.id);
            if (sum - e.allocated_rate).abs() > 1e-6 {
                return Err(format!(
                    "{}: grants sum {sum} != allocated {}",
                    e.descriptor.id, e.allocated_rate
                ));
            }
            if e.allocated_rate > e.descriptor.posted_terms.capacity + 1e-6 {
                return Err(format!(
                    "{}: allocated {} exceeds capacity {}",
                    e.descriptor.id, e.allocated_rate, e.descriptor.posted_terms.capacity
                ));
            }
        }
        Ok(())
    }

    pub(crate) fn snapshot_components(&self) -> BTreeMap<String, ComponentSnapshot> {
        self.entries
            .iter()
            .map(|(id, e)| {
                (
                    id.clone(),
                    ComponentSnapshot {
                        status: e.status.as_str().to_string(),
                        capacity: e.descriptor.posted_terms.capacity,
                        window: e.descriptor.posted_terms.availability_window,
                    },
                )
            })
            .collect()
    }

    pub(crate) fn snapshot_grants(&self) -> BTreeMap<String, GrantSnapshot> {
        self.grants
            .iter()
            .map(|(h, g)| {
                (
                    h.clone(),
                    GrantSnapshot {
                        component_id: g.component_id.clone(),
                        rate: g.rate,
                    },
                )
            })
            .collect()
    }
}
