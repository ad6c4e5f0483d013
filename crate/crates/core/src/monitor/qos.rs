//! QoS estimation from observed history.
//!
//! Reliability and expected quality are exponentially weighted moving
//! averages: `r' = (1 - α) r + α x` with `x ∈ {0, 1}`.

use serde::{Deserialize, Serialize};

/// One QoS-relevant outcome.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum QosSample {
    Success,
    Failure,
    /// Quality score attached to a delivered message.
    Quality(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QosEstimate {
    pub reliability: f64,
    pub expected_quality: f64,
    pub observations: u64,
    pub alpha: f64,
}

impl QosEstimate {
    pub fn new(alpha: f64, prior_quality: f64) -> Self {
        Self {
            reliability: 1.0,
            expected_quality: prior_quality.clamp(0.0, 1.0),
            observations: 0,
            alpha: alpha.clamp(f64::MIN_POSITIVE, 1.0),
        }
    }
}

fn ewma(prev: f64, alpha: f64, x: f64) -> f64 {
    ((1.0 - alpha) * prev + alpha * x).clamp(0.0, 1.0)
}

pub fn estimate_qos(est: QosEstimate, sample: QosSample) -> QosEstimate {
    let mut next = est;
    match sample {
        QosSample::Success => next.reliability = ewma(est.reliability, est.alpha, 1.0),
        QosSample::Failure => next.reliability = ewma(est.reliability, est.alpha, 0.0),
        QosSample::Quality(q) => {
            let q = if q.is_nan() { 0.0 } else { q.clamp(0.0, 1.0) };
            next.expected_quality = ewma(est.expected_quality, est.alpha, q)
        }
    }
    next.observations += 1;
    next
}
