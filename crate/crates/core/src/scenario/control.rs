//! Fusion of occupancy reports and signal-split optimisation.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::goals::CompositeGoal;
use super::world::SignalPlan;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupancyReport {
    pub segment: String,
    pub value: f64,
    /// Reliability of the reporting source.
    pub weight: f64,
    pub source: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FusionError {
    #[error("no usable occupancy reports")]
    EmptyReports,
}

/// Reliability-weighted mean; reports without positive weight are ignored.
pub fn fuse_occupancy(reports: &[OccupancyReport]) -> Result<f64, FusionError> {
    let (num, den) = reports
        .iter()
        .filter(|r| r.weight > 0.0 && r.weight.is_finite() && r.value.is_finite())
        .fold((0.0, 0.0), |(n, d), r| (n + r.weight * r.value, d + r.weight));
    if den <= 0.0 {
        return Err(FusionError::EmptyReports);
    }
    Ok((num / den).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SignalParams {
    pub cycle_s: f64,
    pub min_split: f64,
    pub max_split: f64,
    /// Pollution weight above which cycles are lengthened.
    pub pollution_threshold: f64,
    pub pollution_step_s: f64,
}

impl Default for SignalParams {
    fn default() -> Self {
        Self { cycle_s: 60.0, min_split: 0.1, max_split: 0.9, pollution_threshold: 0.3, pollution_step_s: 20.0 }
    }
}

pub fn split_for(occ_ns: f64, occ_ew: f64, p: &SignalParams) -> f64 {
    let total = occ_ns + occ_ew;
    if total <= 0.0 {
        return 0.5;
    }
    (occ_ns / total).clamp(p.min_split, p.max_split)
}

/// Largest weight magnitude `metric` holds in any tier.
pub fn metric_weight(goal: &CompositeGoal, metric: &str) -> f64 {
    goal.tiers
        .iter()
        .filter_map(|t| t.weights.get(metric))
        .fold(0.0, |m: f64, w| m.max(w.abs()))
}

/// One plan per intersection from the mean approach occupancy of each axis.
pub fn optimize_signals(approaches: &[(f64, f64)], goal: &CompositeGoal, p: &SignalParams) -> Vec<SignalPlan> {
    let cycle = if metric_weight(goal, "pollution_index") > p.pollution_threshold {
        p.cycle_s + p.pollution_step_s
    } else {
        p.cycle_s
    };
    approaches
        .iter()
        .map(|&(ns, ew)| SignalPlan { ns_split: split_for(ns, ew, p), cycle_s: cycle })
        .collect()
}
