//! Blueprint specifications and teleology-to-blueprint translation.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::component::{
    validate_query, AttrPredicate, AttrValue, CapabilityPath, ComponentKind, DataType, Interval,
    Millis, SlotQuery, ValidationReport,
};

pub const BLUEPRINT_SCHEMA: &str = "clic/blueprint/v1";
pub const PLANS_SCHEMA: &str = "clic/plans/v1";

fn blueprint_schema() -> String {
    BLUEPRINT_SCHEMA.to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Slot {
    pub slot_id: String,
    pub query: SlotQuery,
    /// Task parameters handed to the bound component at start.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub params: BTreeMap<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edge {
    pub from_slot: String,
    pub to_slot: String,
    pub data_type: DataType,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlueprintSpec {
    #[serde(rename = "$schema", default = "blueprint_schema")]
    pub schema: String,
    pub system_id: String,
    pub slots: Vec<Slot>,
    pub edges: Vec<Edge>,
    pub start_time: Millis,
    pub end_time: Millis,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub budget: Option<f64>,
}

impl BlueprintSpec {
    pub fn slot(&self, slot_id: &str) -> Option<&Slot> {
        self.slots.iter().find(|s| s.slot_id == slot_id)
    }

    /// The slot's query as procurement sees it: the blueprint's time window
    /// as the required term, and edge types as input/output constraints.
    pub fn effective_query(&self, slot_id: &str) -> Option<SlotQuery> {
        let slot = self.slot(slot_id)?;
        let mut q = slot.query.clone();
        q.term = Interval(self.start_time, self.end_time);
        if q.input_type.is_none() {
            q.input_type = self
                .edges
                .iter()
                .find(|e| e.to_slot == slot_id)
                .map(|e| e.data_type);
        }
        if q.output_type.is_none() {
            q.output_type = self
                .edges
                .iter()
                .find(|e| e.from_slot == slot_id)
                .map(|e| e.data_type);
        }
        Some(q)
    }

    pub fn inbound<'a>(&'a self, slot_id: &'a str) -> impl Iterator<Item = &'a Edge> + 'a {
        self.edges.iter().filter(move |e| e.to_slot == slot_id)
    }

    pub fn outbound<'a>(&'a self, slot_id: &'a str) -> impl Iterator<Item = &'a Edge> + 'a {
        self.edges.iter().filter(move |e| e.from_slot == slot_id)
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum BlueprintError {
    #[error("syntax error at line {line}, column {column}, field `{path}`: {message}")]
    Syntax {
        line: usize,
        column: usize,
        path: String,
        message: String,
    },
}

/// Parses a JSON document into a spec without checking its invariants.
pub fn parse_blueprint(text: &str) -> Result<BlueprintSpec, BlueprintError> {
    parse_json(text)
}

fn parse_json<T: serde::de::DeserializeOwned>(text: &str) -> Result<T, BlueprintError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        BlueprintError::Syntax {
            line: inner.line(),
            column: inner.column(),
            path,
            message: inner.to_string(),
        }
    })
}

pub fn serialize_blueprint(spec: &BlueprintSpec) -> String {
    serde_json::to_string_pretty(spec).expect("blueprints serialize")
}

pub fn validate_blueprint(spec: &BlueprintSpec) -> ValidationReport {
    let mut r = ValidationReport::default();
    if spec.slots.is_empty() {
        r.push("no-slots", "blueprint declares no slots");
    }
    if spec.start_time >= spec.end_time {
        r.push(
            "time-order",
            format!("start_time {} not before end_time {}", spec.start_time, spec.end_time),
        );
    }
    if spec.budget.is_some_and(|b| !(b >= 0.0)) {
        r.push("negative-budget", "budget must be non-negative");
    }

    let mut index: BTreeMap<&str, usize> = BTreeMap::new();
    for (i, s) in spec.slots.iter().enumerate() {
        if index.insert(s.slot_id.as_str(), i).is_some() {
            r.push("duplicate-slot", format!("slot {} declared twice", s.slot_id));
        }
        for v in validate_query(&s.query).violations {
            r.push(&v.code, format!("slot {}: {}", s.slot_id, v.detail));
        }
    }

    let n = spec.slots.len();
    let mut indeg = vec![0usize; n];
    let mut outdeg = vec![0usize; n];
    let mut in_types: Vec<BTreeSet<DataType>> = vec![BTreeSet::new(); n];
    let mut out_types: Vec<BTreeSet<DataType>> = vec![BTreeSet::new(); n];
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    for e in &spec.edges {
        let (Some(&a), Some(&b)) = (index.get(e.from_slot.as_str()), index.get(e.to_slot.as_str()))
        else {
            r.push(
                "unknown-slot",
                format!("edge {} -> {} references an undeclared slot", e.from_slot, e.to_slot),
            );
            continue;
        };
        outdeg[a] += 1;
        indeg[b] += 1;
        out_types[a].insert(e.data_type);
        in_types[b].insert(e.data_type);
        adj[a].push(b);
        let from_q = &spec.slots[a].query;
        let to_q = &spec.slots[b].query;
        if from_q.output_type.is_some_and(|t| t != e.data_type)
            || to_q.input_type.is_some_and(|t| t != e.data_type)
        {
            r.push(
                "edge-type-mismatch",
                format!("edge {} -> {} carries {:?}", e.from_slot, e.to_slot, e.data_type),
            );
        }
    }

    for (i, s) in spec.slots.iter().enumerate() {
        let id = &s.slot_id;
        if in_types[i].len() > 1 || out_types[i].len() > 1 {
            r.push("edge-type-mismatch", format!("slot {id} mixes edge data types"));
        }
        match s.query.kind {
            ComponentKind::Sensing if indeg[i] > 0 => {
                r.push("sensing-in-degree", format!("sensing slot {id} has inbound edges"))
            }
            ComponentKind::Actuation if outdeg[i] > 0 => {
                r.push("actuation-out-degree", format!("actuation slot {id} has outbound edges"))
            }
            ComponentKind::Processing => {
                if indeg[i] == 0 {
                    r.push("processing-in-degree", format!("processing slot {id} has no input"));
                }
                if outdeg[i] == 0 {
                    r.push("processing-out-degree", format!("processing slot {id} has no output"));
                }
            }
            _ => {}
        }
    }

    // Kahn's algorithm; leftover nodes sit on a cycle.
    let mut deg = indeg.clone();
    let mut ready: VecDeque<usize> = (0..n).filter(|&i| deg[i] == 0).collect();
    let mut seen = 0;
    while let Some(u) = ready.pop_front() {
        seen += 1;
        for &v in &adj[u] {
            deg[v] -= 1;
            if deg[v] == 0 {
                ready.push_back(v);
            }
        }
    }
    if seen < n {
        r.push("cycle", "edge topology contains a cycle");
    }
    r
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ParamType {
    Text,
    Number,
    /// Dot-separated location tag, e.g. `campus.main-entrance`.
    Region,
    /// Single capability segment appended to a slot's capability.
    Segment,
}

impl ParamType {
    fn admits(&self, v: &Value) -> bool {
        match self {
            ParamType::Text => v.is_string(),
            ParamType::Number => v.is_number(),
            ParamType::Region => v
                .as_str()
                .is_some_and(|s| s.parse::<CapabilityPath>().is_ok()),
            ParamType::Segment => v
                .as_str()
                .is_some_and(|s| !s.contains('.') && s.parse::<CapabilityPath>().is_ok()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "to", rename_all = "kebab-case")]
pub enum BindTarget {
    SlotParam { slot: String, key: String },
    WithinRegion { slot: String },
    AttributeEq { slot: String, key: String },
    CapabilitySuffix { slot: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemplateParam {
    pub name: String,
    #[serde(rename = "type")]
    pub ty: ParamType,
    pub bind: Vec<BindTarget>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanTemplate {
    pub params: Vec<TemplateParam>,
    pub blueprint: BlueprintSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanLibrary {
    #[serde(rename = "$schema", default)]
    pub schema: String,
    pub templates: BTreeMap<String, PlanTemplate>,
}

impl PlanLibrary {
    pub fn parse(text: &str) -> Result<Self, BlueprintError> {
        parse_json(text)
    }

    /// The library shipped with the crate.
    pub fn builtin() -> Self {
        Self::parse(include_str!("../data/plans.json")).expect("builtin plan library parses")
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TeleologicalConstraints {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub budget: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub deadline: Option<Millis>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quality_floor: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeleologicalSpec {
    pub goal: String,
    #[serde(default)]
    pub args: BTreeMap<String, Value>,
    #[serde(default)]
    pub constraints: TeleologicalConstraints,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub system_id: Option<String>,
}

impl TeleologicalSpec {
    pub fn parse(text: &str) -> Result<Self, BlueprintError> {
        parse_json(text)
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum TranslateError {
    #[error("no plan template for goal {0}")]
    UnknownGoal(String),
    #[error("binding error: {0}")]
    BindingError(String),
    #[error("template for {goal} produced an invalid blueprint: {report}")]
    InvalidTemplate { goal: String, report: ValidationReport },
}

fn slot_mut<'a>(bp: &'a mut BlueprintSpec, slot: &str) -> Result<&'a mut Slot, TranslateError> {
    bp.slots
        .iter_mut()
        .find(|s| s.slot_id == slot)
        .ok_or_else(|| TranslateError::BindingError(format!("template binds unknown slot {slot}")))
}

/// Instantiates the plan template for `t.goal`, binds its arguments and folds
/// its constraints into the blueprint.
pub fn translate_teleological(
    t: &TeleologicalSpec,
    lib: &PlanLibrary,
) -> Result<BlueprintSpec, TranslateError> {
    let template = lib
        .templates
        .get(&t.goal)
        .ok_or_else(|| TranslateError::UnknownGoal(t.goal.clone()))?;
    let declared: BTreeSet<&str> = template.params.iter().map(|p| p.name.as_str()).collect();
    if let Some(extra) = t.args.keys().find(|k| !declared.contains(k.as_str())) {
        return Err(TranslateError::BindingError(format!(
            "{} takes no argument {extra}",
            t.goal
        )));
    }

    let mut bp = template.blueprint.clone();
    if let Some(id) = &t.system_id {
        bp.system_id = id.clone();
    }
    for p in &template.params {
        let v = t
            .args
            .get(&p.name)
            .ok_or_else(|| TranslateError::BindingError(format!("missing argument {}", p.name)))?;
        if !p.ty.admits(v) {
            return Err(TranslateError::BindingError(format!(
                "argument {} must be {:?}, got {v}",
                p.name, p.ty
            )));
        }
        for target in &p.bind {
            match target {
                BindTarget::SlotParam { slot, key } => {
                    slot_mut(&mut bp, slot)?.params.insert(key.clone(), v.clone());
                }
                BindTarget::WithinRegion { slot } => {
                    let region = v.as_str().unwrap_or_default().to_string();
                    slot_mut(&mut bp, slot)?
                        .query
                        .predicates
                        .push(AttrPredicate::WithinRegion { region });
                }
                BindTarget::AttributeEq { slot, key } => {
                    let value: AttrValue = serde_json::from_value(v.clone())
                        .map_err(|e| TranslateError::BindingError(e.to_string()))?;
                    slot_mut(&mut bp, slot)?
                        .query
                        .predicates
                        .push(AttrPredicate::Eq { key: key.clone(), value });
                }
                BindTarget::CapabilitySuffix { slot } => {
                    let s = slot_mut(&mut bp, slot)?;
                    s.query.capability = s
                        .query
                        .capability
                        .child(v.as_str().unwrap_or_default())
                        .map_err(|e| TranslateError::BindingError(e.to_string()))?;
                }
            }
        }
    }

    let c = &t.constraints;
    if let Some(budget) = c.budget {
        bp.budget = Some(budget);
        if !bp.slots.is_empty() {
            let share = budget / bp.slots.len() as f64;
            for s in &mut bp.slots {
                s.query.max_price = s.query.max_price.min(share);
            }
        }
    }
    if let Some(floor) = c.quality_floor {
        for s in &mut bp.slots {
            s.query.min_quality = s.query.min_quality.max(floor);
        }
    }
    if let Some(deadline) = c.deadline {
        bp.end_time = bp.end_time.min(deadline);
    }

    let report = validate_blueprint(&bp);
    if !report.is_empty() {
        return Err(TranslateError::InvalidTemplate {
            goal: t.goal.clone(),
            report,
        });
    }
    Ok(bp)
}
