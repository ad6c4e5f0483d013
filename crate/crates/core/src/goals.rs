//! Goal arbitration.
//!
//! Goals are grouped into lexicographic tiers. Inside a tier each metric gets
//! the signed weight `Σ ±w/(1+e)`, normalized so the absolute weights sum to
//! one. Goals that cannot hold together are suppressed in importance order.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::component::{ComponentKind, Millis};
use crate::eventlog::EventLog;
use crate::registry::Registry;
use crate::runtime::{Phase, Runtime};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GoalKind {
    Preset,
    Dynamic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    Minimize,
    Maximize,
}

impl Direction {
    fn sign(self) -> f64 {
        match self {
            Direction::Minimize => -1.0,
            Direction::Maximize => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Goal {
    pub goal_id: String,
    pub kind: GoalKind,
    pub metric: String,
    pub direction: Direction,
    pub weight: f64,
    pub tier: u32,
    pub owner: String,
    #[serde(default)]
    pub energy_cost: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ConflictKind {
    Antagonistic,
    MutuallyImpossible,
}

/// An unordered pair, stored with `goal_a < goal_b`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ConflictEntry {
    pub goal_a: String,
    pub goal_b: String,
    pub kind: ConflictKind,
}

impl ConflictEntry {
    pub fn involves(&self, a: &str, b: &str) -> bool {
        (self.goal_a == a && self.goal_b == b) || (self.goal_a == b && self.goal_b == a)
    }
}

/// The closed set of metrics goals may name, with known antagonisms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricVocabulary {
    pub metrics: BTreeSet<String>,
    pub antagonistic: Vec<(String, String)>,
}

impl MetricVocabulary {
    pub fn builtin() -> Self {
        serde_json::from_str(include_str!("../data/metrics.json")).expect("shipped vocabulary parses")
    }

    pub fn antagonistic(&self, a: &str, b: &str) -> bool {
        self.antagonistic
            .iter()
            .any(|(x, y)| (x == a && y == b) || (x == b && y == a))
    }
}

pub fn detect_conflicts(goals: &[Goal], vocab: &MetricVocabulary) -> Vec<ConflictEntry> {
    let mut out = Vec::new();
    for (i, a) in goals.iter().enumerate() {
        for b in &goals[i + 1..] {
            let kind = if a.metric == b.metric && a.direction != b.direction {
                ConflictKind::MutuallyImpossible
            } else if a.metric != b.metric && vocab.antagonistic(&a.metric, &b.metric) {
                ConflictKind::Antagonistic
            } else {
                continue;
            };
            let (x, y) = if a.goal_id <= b.goal_id { (a, b) } else { (b, a) };
            out.push(ConflictEntry { goal_a: x.goal_id.clone(), goal_b: y.goal_id.clone(), kind });
        }
    }
    out.sort();
    out
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TierWeights {
    pub tier: u32,
    pub weights: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Suppression {
    pub goal_id: String,
    pub by: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CompositeGoal {
    /// Most important tier first.
    pub tiers: Vec<TierWeights>,
    /// Conflicts remaining among the kept goals.
    pub conflicts: Vec<ConflictEntry>,
    pub suppressed: Vec<Suppression>,
}

impl CompositeGoal {
    pub fn weight(&self, tier: u32, metric: &str) -> f64 {
        self.tiers
            .iter()
            .find(|t| t.tier == tier)
            .and_then(|t| t.weights.get(metric).copied())
            .unwrap_or(0.0)
    }

    /// Lexicographic score of a metric vector; higher is better.
    pub fn score(&self, metrics: &BTreeMap<String, f64>) -> Vec<f64> {
        self.tiers
            .iter()
            .map(|t| {
                t.weights
                    .iter()
                    .map(|(m, w)| w * metrics.get(m).copied().unwrap_or(0.0))
                    .sum()
            })
            .collect()
    }
}

fn importance(a: &Goal, b: &Goal) -> std::cmp::Ordering {
    a.tier
        .cmp(&b.tier)
        .then(a.energy_cost.total_cmp(&b.energy_cost))
        .then_with(|| a.goal_id.cmp(&b.goal_id))
}

/// Pure arbitration. `dynamic_cap` bounds the dynamic share of a tier's mass
/// whenever preset goals share that tier.
pub fn arbitrate(goals: &[Goal], vocab: &MetricVocabulary, dynamic_cap: f64) -> CompositeGoal {
    let mut ordered: Vec<&Goal> = goals.iter().collect();
    ordered.sort_by(|a, b| importance(a, b));
    let mut kept: Vec<Goal> = Vec::new();
    let mut suppressed = Vec::new();
    for g in ordered {
        let blocker = kept
            .iter()
            .find(|k| k.metric == g.metric && k.direction != g.direction)
            .map(|k| k.goal_id.clone());
        match blocker {
            Some(by) => suppressed.push(Suppression { goal_id: g.goal_id.clone(), by }),
            None => kept.push(g.clone()),
        }
    }

    let mut by_tier: BTreeMap<u32, Vec<&Goal>> = BTreeMap::new();
    for g in &kept {
        by_tier.entry(g.tier).or_default().push(g);
    }
    let mut tiers = Vec::new();
    for (tier, gs) in by_tier {
        let mass = |kind| -> f64 {
            gs.iter()
                .filter(|g| g.kind == kind)
                .map(|g| g.weight / (1.0 + g.energy_cost))
                .sum()
        };
        let (preset, dynamic) = (mass(GoalKind::Preset), mass(GoalKind::Dynamic));
        let cap = dynamic_cap.clamp(0.0, 1.0);
        let dyn_scale = if preset > 0.0 && dynamic > 0.0 && dynamic / (preset + dynamic) > cap {
            if cap >= 1.0 {
                1.0
            } else {
                cap / (1.0 - cap) * preset / dynamic
            }
        } else {
            1.0
        };
        let mut weights: BTreeMap<String, f64> = BTreeMap::new();
        for g in &gs {
            let scale = if g.kind == GoalKind::Dynamic { dyn_scale } else { 1.0 };
            *weights.entry(g.metric.clone()).or_default() +=
                g.direction.sign() * g.weight / (1.0 + g.energy_cost) * scale;
        }
        let total: f64 = weights.values().map(|w| w.abs()).sum();
        if total > 0.0 {
            for w in weights.values_mut() {
                *w /= total;
            }
            tiers.push(TierWeights { tier, weights });
        }
    }
    CompositeGoal { tiers, conflicts: detect_conflicts(&kept, vocab), suppressed }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GoalError {
    #[error("metric {0} is not in the vocabulary")]
    UnknownMetric(String),
    #[error("unknown goal {0}")]
    UnknownGoalId(String),
    #[error("goal {0} already exists")]
    DuplicateGoal(String),
    #[error("weight and energy cost must be non-negative")]
    Negative,
}

/// The live goal set; arbitration re-runs after every change.
#[derive(Debug, Clone)]
pub struct GoalSet {
    pub vocab: MetricVocabulary,
    pub dynamic_weight_cap: f64,
    goals: BTreeMap<String, Goal>,
    composite: CompositeGoal,
}

impl GoalSet {
    pub fn new(vocab: MetricVocabulary, dynamic_weight_cap: f64) -> Self {
        Self { vocab, dynamic_weight_cap, goals: BTreeMap::new(), composite: CompositeGoal::default() }
    }

    pub fn goals(&self) -> impl Iterator<Item = &Goal> {
        self.goals.values()
    }

    pub fn len(&self) -> usize {
        self.goals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.goals.is_empty()
    }

    pub fn composite(&self) -> &CompositeGoal {
        &self.composite
    }

    pub fn add_goal(&mut self, g: Goal, now: Millis, log: &mut EventLog) -> Result<&CompositeGoal, GoalError> {
        if !self.vocab.metrics.contains(&g.metric) {
            return Err(GoalError::UnknownMetric(g.metric));
        }
        if g.weight < 0.0 || g.energy_cost < 0.0 || !g.weight.is_finite() || !g.energy_cost.is_finite() {
            return Err(GoalError::Negative);
        }
        if self.goals.contains_key(&g.goal_id) {
            return Err(GoalError::DuplicateGoal(g.goal_id));
        }
        log.record(now, "GoalAdded", json!(g));
        self.goals.insert(g.goal_id.clone(), g);
        Ok(self.rearbitrate(now, log))
    }

    pub fn remove_goal(&mut self, goal_id: &str, now: Millis, log: &mut EventLog) -> Result<&CompositeGoal, GoalError> {
        self.goals
            .remove(goal_id)
            .ok_or_else(|| GoalError::UnknownGoalId(goal_id.to_string()))?;
        log.record(now, "GoalRemoved", json!({ "goal_id": goal_id }));
        Ok(self.rearbitrate(now, log))
    }

    fn rearbitrate(&mut self, now: Millis, log: &mut EventLog) -> &CompositeGoal {
        let goals: Vec<Goal> = self.goals.values().cloned().collect();
        let next = arbitrate(&goals, &self.vocab, self.dynamic_weight_cap);
        for s in &next.suppressed {
            if !self.composite.suppressed.contains(s) {
                log.record(now, "Suppression", json!(s));
            }
        }
        self.composite = next;
        &self.composite
    }
}

/// A processing component in a flowing pipeline that takes goal weights.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParamsTarget {
    pub system_id: String,
    pub slot_id: String,
    pub component_id: String,
}

pub fn params_targets(runtime: &Runtime, registry: &Registry) -> Vec<ParamsTarget> {
    let mut out = Vec::new();
    for p in runtime.pipelines().filter(|p| p.phase == Phase::Flowing) {
        for (slot, component) in &p.components {
            let processing = registry
                .get(component)
                .is_some_and(|e| e.descriptor.kind == ComponentKind::Processing);
            if processing {
                out.push(ParamsTarget {
                    system_id: p.system_id.clone(),
                    slot_id: slot.clone(),
                    component_id: component.clone(),
                });
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamsMessage {
    #[serde(rename = "type")]
    pub kind: String,
    pub weights: Vec<TierWeights>,
}

/// Sends parameter updates, skipping targets whose last update is unchanged.
#[derive(Debug, Clone, Default)]
pub struct ParamsPublisher {
    last: BTreeMap<ParamsTarget, Vec<TierWeights>>,
}

impl ParamsPublisher {
    pub fn emit_parameter_updates(
        &mut self,
        c: &CompositeGoal,
        targets: &[ParamsTarget],
        now: Millis,
        log: &mut EventLog,
    ) -> Vec<(ParamsTarget, ParamsMessage)> {
        let mut out = Vec::new();
        for t in targets {
            if self.last.get(t) == Some(&c.tiers) {
                continue;
            }
            self.last.insert(t.clone(), c.tiers.clone());
            let msg = ParamsMessage { kind: "params".into(), weights: c.tiers.clone() };
            log.record(
                now,
                "ParamsUpdated",
                json!({ "system_id": t.system_id, "slot_id": t.slot_id, "component_id": t.component_id, "weights": c.tiers }),
            );
            out.push((t.clone(), msg));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn goal(id: &str, kind: GoalKind, metric: &str, dir: Direction, w: f64, tier: u32, e: f64) -> Goal {
        Goal {
            goal_id: id.into(),
            kind,
            metric: metric.into(),
            direction: dir,
            weight: w,
            tier,
            owner: "city".into(),
            energy_cost: e,
        }
    }

    use Direction::*;
    use GoalKind::*;

    #[test]
    fn normalization_within_tier() {
        let v = MetricVocabulary::builtin();
        let c = arbitrate(
            &[
                goal("a", Preset, "throughput", Maximize, 1.0, 1, 0.0),
                goal("b", Preset, "driver_satisfaction", Maximize, 3.0, 1, 0.0),
            ],
            &v,
            0.5,
        );
        assert!((c.weight(1, "throughput") - 0.25).abs() < 1e-12);
        assert!((c.weight(1, "driver_satisfaction") - 0.75).abs() < 1e-12);
    }

    #[test]
    fn lower_tier_side_of_an_impossible_pair_is_suppressed() {
        let v = MetricVocabulary::builtin();
        let gs = [
            goal("a", Preset, "throughput", Maximize, 1.0, 1, 0.0),
            goal("b", Dynamic, "throughput", Minimize, 1.0, 2, 0.0),
        ];
        assert_eq!(detect_conflicts(&gs, &v)[0].kind, ConflictKind::MutuallyImpossible);
        let c = arbitrate(&gs, &v, 0.5);
        assert_eq!(c.suppressed, vec![Suppression { goal_id: "b".into(), by: "a".into() }]);
        assert!(c.tiers.iter().all(|t| t.tier == 1));
    }

    #[test]
    fn same_tier_ties_suppress_costlier_then_higher_id() {
        let v = MetricVocabulary::builtin();
        let c = arbitrate(
            &[
                goal("a", Preset, "throughput", Maximize, 1.0, 1, 2.0),
                goal("b", Preset, "throughput", Minimize, 1.0, 1, 1.0),
            ],
            &v,
            0.5,
        );
        assert_eq!(c.suppressed[0].goal_id, "a");
        let c = arbitrate(
            &[
                goal("a", Preset, "throughput", Maximize, 1.0, 1, 0.0),
                goal("b", Preset, "throughput", Minimize, 1.0, 1, 0.0),
            ],
            &v,
            0.5,
        );
        assert_eq!(c.suppressed[0].goal_id, "b");
    }

    #[test]
    fn table_antagonism() {
        let v = MetricVocabulary::builtin();
        let gs = [
            goal("t", Preset, "avg_transit_time", Minimize, 1.0, 1, 0.0),
            goal("p", Preset, "pollution_index", Minimize, 1.0, 1, 0.0),
        ];
        assert_eq!(
            detect_conflicts(&gs, &v),
            vec![ConflictEntry { goal_a: "p".into(), goal_b: "t".into(), kind: ConflictKind::Antagonistic }]
        );
        assert!(detect_conflicts(&gs[..1], &v).is_empty());
    }

    #[test]
    fn goal_set_lifecycle() {
        let mut s = GoalSet::new(MetricVocabulary::builtin(), 0.5);
        let mut log = EventLog::new();
        s.add_goal(goal("congestion", Preset, "avg_transit_time", Minimize, 1.0, 1, 0.0), 0, &mut log).unwrap();
        let preset_only = s.composite().clone();
        s.add_goal(goal("driver-1", Dynamic, "participant_transit_time", Minimize, 1.0, 2, 0.0), 0, &mut log).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(
            s.add_goal(goal("x", Dynamic, "happiness", Maximize, 1.0, 2, 0.0), 0, &mut log),
            Err(GoalError::UnknownMetric("happiness".into()))
        );
        assert_eq!(s.remove_goal("nope", 0, &mut log), Err(GoalError::UnknownGoalId("nope".into())));
        s.remove_goal("driver-1", 0, &mut log).unwrap();
        assert_eq!(s.composite().tiers, preset_only.tiers);
    }

    #[test]
    fn dynamic_mass_is_capped_beside_presets() {
        let v = MetricVocabulary::builtin();
        let c = arbitrate(
            &[
                goal("p", Preset, "avg_transit_time", Minimize, 1.0, 1, 0.0),
                goal("d", Dynamic, "driver_satisfaction", Maximize, 9.0, 1, 0.0),
            ],
            &v,
            0.5,
        );
        assert!((c.weight(1, "driver_satisfaction") - 0.5).abs() < 1e-12);
        assert!((c.weight(1, "avg_transit_time") + 0.5).abs() < 1e-12);
    }

    #[test]
    fn params_are_deduplicated() {
        let mut publisher = ParamsPublisher::default();
        let mut log = EventLog::new();
        let v = MetricVocabulary::builtin();
        let c = arbitrate(&[goal("a", Preset, "throughput", Maximize, 1.0, 1, 0.0)], &v, 0.5);
        let t = vec![ParamsTarget { system_id: "s".into(), slot_id: "opt".into(), component_id: "o".into() }];
        assert_eq!(publisher.emit_parameter_updates(&c, &t, 0, &mut log).len(), 1);
        assert_eq!(publisher.emit_parameter_updates(&c, &t, 1, &mut log).len(), 0);
        assert_eq!(publisher.emit_parameter_updates(&c, &[], 1, &mut log).len(), 0);
        let wire = serde_json::to_value(&publisher.emit_parameter_updates(&arbitrate(&[], &v, 0.5), &t, 2, &mut log)[0].1).unwrap();
        assert_eq!(wire["type"], "params");
    }

    fn arb_goals() -> impl Strategy<Value = Vec<Goal>> {
        let metrics = MetricVocabulary::builtin().metrics.into_iter().collect::<Vec<_>>();
        prop::collection::vec(
            (
                prop::sample::select(metrics),
                any::<bool>(),
                any::<bool>(),
                0.0f64..10.0,
                1u32..4,
                0.0f64..5.0,
            ),
            0..12,
        )
        .prop_map(|v| {
            v.into_iter()
                .enumerate()
                .map(|(i, (m, max, preset, w, tier, e))| {
                    goal(
                        &format!("g{i:02}"),
                        if preset { Preset } else { Dynamic },
                        &m,
                        if max { Maximize } else { Minimize },
                        w,
                        tier,
                        e,
                    )
                })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn arbitration_properties(goals in arb_goals(), k in 0.01f64..100.0, tier in 1u32..4) {
            let v = MetricVocabulary::builtin();
            let c = arbitrate(&goals, &v, 0.5);
            for t in &c.tiers {
                let s: f64 = t.weights.values().map(|w| w.abs()).sum();
                prop_assert!((s - 1.0).abs() < 1e-9);
            }
            let kept: Vec<Goal> = goals.iter().filter(|g| c.suppressed.iter().all(|s| s.goal_id != g.goal_id)).cloned().collect();
            prop_assert!(detect_conflicts(&kept, &v).iter().all(|e| e.kind != ConflictKind::MutuallyImpossible));
            prop_assert_eq!(&c, &arbitrate(&goals, &v, 0.5));

            let scaled: Vec<Goal> = goals.iter().cloned().map(|mut g| { if g.tier == tier { g.weight *= k; } g }).collect();
            let c2 = arbitrate(&scaled, &v, 0.5);
            prop_assert_eq!(c.tiers.len(), c2.tiers.len());
            for (a, b) in c.tiers.iter().zip(&c2.tiers) {
                prop_assert_eq!(a.weights.len(), b.weights.len());
                for (m, w) in &a.weights {
                    prop_assert!((w - b.weights[m]).abs() < 1e-9);
                }
            }
        }
    }
}
