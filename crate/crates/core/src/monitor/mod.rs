//! SLA monitoring, QoS estimation and replacement decisions.

pub mod qos;
pub mod replacement;
pub mod sla;

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::component::Millis;
use crate::eventlog::EventLog;
use crate::procurement::Contract;
use crate::registry::Registry;
use qos::{estimate_qos, QosSample};
use sla::{evaluate_sla, ComplianceVerdict, ObsKind, Observation};

pub use replacement::{decide_replacement, Action, Condition, MarketSnapshot, Quote, ReplacementDecision, Trigger};
pub use sla::{BreachReason, Compliance};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MonitorConfig {
    pub alpha: f64,
    pub window: usize,
    pub heartbeat_ms: Millis,
    pub k_missed: usize,
    pub drain_timeout_ms: Millis,
    pub epoch_s: u64,
}

impl Default for MonitorConfig {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            window: 20,
            heartbeat_ms: 1000,
            k_missed: 3,
            drain_timeout_ms: 5000,
            epoch_s: 10,
        }
    }
}

/// Sliding observation windows per contract.
#[derive(Debug, Clone, Default)]
pub struct Monitor {
    pub config: MonitorConfig,
    windows: BTreeMap<String, VecDeque<Observation>>,
}

impl Monitor {
    pub fn new(config: MonitorConfig) -> Self {
        Self { config, windows: BTreeMap::new() }
    }

    /// Records one observation and folds it into the component's QoS estimate.
    pub fn observe(&mut self, contract: &Contract, obs: Observation, registry: &mut Registry, log: &mut EventLog) {
        let sample = match obs.kind {
            ObsKind::Latency(ms) => Some(if ms <= contract.terms.max_latency {
                QosSample::Success
            } else {
                QosSample::Failure
            }),
            ObsKind::Quality(q) => Some(QosSample::Quality(q)),
            ObsKind::HeartbeatReceived => Some(QosSample::Success),
            ObsKind::HeartbeatMissed | ObsKind::Overflow => Some(QosSample::Failure),
        };
        if let (Some(s), Some(est)) = (sample, registry.qos_mut(&contract.component_id)) {
            *est = estimate_qos(*est, s);
        }
        log.record(obs.ts, "Observation", json!(obs));
        let w = self.windows.entry(obs.contract_id.clone()).or_default();
        w.push_back(obs);
        while w.len() > self.config.window.max(1) {
            w.pop_front();
        }
    }

    pub fn window(&self, contract_id: &str) -> Vec<Observation> {
        self.windows
            .get(contract_id)
            .map(|w| w.iter().cloned().collect())
            .unwrap_or_default()
    }

    pub fn verdict(&self, contract: &Contract) -> ComplianceVerdict {
        evaluate_sla(&contract.contract_id, &contract.terms, &self.window(&contract.contract_id), self.config.k_missed)
    }

    pub fn forget(&mut self, contract_id: &str) {
        self.windows.remove(contract_id);
    }

    /// Whether `now` falls on an economic-review epoch boundary.
    pub fn is_epoch(&self, now: Millis) -> bool {
        let e = self.config.epoch_s.max(1) * 1000;
        now > 0 && now.is_multiple_of(e)
    }
}
