use serde::{Deserialize, Serialize};

use crate::component::{Interval, Millis, SlaTerms};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value")]
pub enum ObsKind {
    Latency(u64),
    Quality(f64),
    HeartbeatReceived,
    HeartbeatMissed,
    Overflow,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub contract_id: String,
    pub ts: Millis,
    pub kind: ObsKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BreachReason {
    Unavailable,
    LatencyExceeded,
    QualityBelowFloor,
    Overflow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Compliance {
    Compliant,
    Breach(BreachReason),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Evidence {
    pub latency_samples: usize,
    pub p95_latency: Option<u64>,
    pub quality_samples: usize,
    pub mean_quality: Option<f64>,
    pub longest_missed_run: usize,
    pub overflows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplianceVerdict {
    pub contract_id: String,
    pub window: Interval,
    pub status: Compliance,
    pub evidence: Evidence,
}

/// Rank-based p95: the `ceil(0.95·n)`-th smallest sample.
pub fn p95(samples: &[u64]) -> Option<u64> {
    if samples.is_empty() {
        return None;
    }
    let mut v = samples.to_vec();
    v.sort_unstable();
    let rank = (0.95 * v.len() as f64).ceil() as usize;
    Some(v[rank.clamp(1, v.len()) - 1])
}

pub fn evaluate_sla(contract_id: &str, terms: &SlaTerms, window: &[Observation], k_missed: usize) -> ComplianceVerdict {
    let mut ev = Evidence::default();
    let mut latencies = Vec::new();
    let mut quality_sum = 0.0;
    let mut run = 0;
    for o in window {
        match o.kind {
            ObsKind::Latency(ms) => latencies.push(ms),
            ObsKind::Quality(q) => {
                ev.quality_samples += 1;
                quality_sum += q;
            }
            ObsKind::HeartbeatMissed => {
                run += 1;
                ev.longest_missed_run = ev.longest_missed_run.max(run);
            }
            ObsKind::HeartbeatReceived => run = 0,
            ObsKind::Overflow => ev.overflows += 1,
        }
    }
    ev.latency_samples = latencies.len();
    ev.p95_latency = p95(&latencies);
    if ev.quality_samples > 0 {
        ev.mean_quality = Some(quality_sum / ev.quality_samples as f64);
    }

    let status = if ev.longest_missed_run >= k_missed.max(1) {
        Compliance::Breach(BreachReason::Unavailable)
    } else if ev.p95_latency.is_some_and(|p| p > terms.max_latency) {
        Compliance::Breach(BreachReason::LatencyExceeded)
    } else if ev.mean_quality.is_some_and(|q| q < terms.min_quality) {
        Compliance::Breach(BreachReason::QualityBelowFloor)
    } else if ev.overflows > 0 {
        Compliance::Breach(BreachReason::Overflow)
    } else {
        Compliance::Compliant
    };
    let window_span = match (window.first(), window.last()) {
        (Some(a), Some(b)) => Interval(a.ts, b.ts),
        _ => Interval(0, 0),
    };
    ComplianceVerdict { contract_id: contract_id.to_string(), window: window_span, status, evidence: ev }
}
