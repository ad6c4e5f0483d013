//! Component typology, capability paths, SLA terms and slot matching.
//!
//! Every pool member is one of six classes: a sensing, processing or
//! actuation component, provided either by a human or by a machine.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Maximum number of segments in a capability path.
pub const MAX_CAPABILITY_DEPTH: usize = 8;

/// Logical milliseconds since run start.
pub type Millis = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ComponentKind {
    Sensing,
    Processing,
    Actuation,
}

impl ComponentKind {
    pub const ALL: [ComponentKind; 3] = [Self::Sensing, Self::Processing, Self::Actuation];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Nature {
    Human,
    Machine,
}

impl Nature {
    pub const ALL: [Nature; 2] = [Self::Human, Self::Machine];
}

/// One of the six kind × nature classes (Sh, Se, Ph, Pe, Ah, Ae).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ComponentClass {
    pub kind: ComponentKind,
    pub nature: Nature,
}

impl ComponentClass {
    pub fn all() -> impl Iterator<Item = ComponentClass> {
        ComponentKind::ALL.into_iter().flat_map(|kind| {
            Nature::ALL
                .into_iter()
                .map(move |nature| ComponentClass { kind, nature })
        })
    }
}

impl fmt::Display for ComponentClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let k = match self.kind {
            ComponentKind::Sensing => 'S',
            ComponentKind::Processing => 'P',
            ComponentKind::Actuation => 'A',
        };
        let n = match self.nature {
            Nature::Human => 'h',
            Nature::Machine => 'e',
        };
        write!(f, "{k}{n}")
    }
}

/// Closed vocabulary of data types carried on pipeline edges.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DataType {
    Image,
    Text,
    Position,
    Occupancy,
    Route,
    SignalPlan,
    Alarm,
    Audio,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CapabilityError {
    #[error("capability path is empty")]
    Empty,
    #[error("capability path deeper than {MAX_CAPABILITY_DEPTH} segments")]
    TooDeep,
    #[error("invalid capability segment {0:?}")]
    BadSegment(String),
}

/// Dot-separated capability path such as `sense.vision.camera.street`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CapabilityPath(Vec<String>);

fn valid_segment(s: &str) -> bool {
    !s.is_empty()
        && s
            .bytes()
            .all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'-')
}

impl CapabilityPath {
    pub fn new<I, S>(segments: I) -> Result<Self, CapabilityError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let segs: Vec<String> = segments.into_iter().map(Into::into).collect();
        if segs.is_empty() {
            return Err(CapabilityError::Empty);
        }
        if segs.len() > MAX_CAPABILITY_DEPTH {
            return Err(CapabilityError::TooDeep);
        }
        if let Some(bad) = segs.iter().find(|s| !valid_segment(s)) {
            return Err(CapabilityError::BadSegment(bad.clone()));
        }
        Ok(Self(segs))
    }

    pub fn segments(&self) -> &[String] {
        &self.0
    }

    pub fn depth(&self) -> usize {
        self.0.len()
    }

    /// Appends one segment, failing if the result would be invalid.
    pub fn child(&self, segment: &str) -> Result<Self, CapabilityError> {
        Self::new(self.0.iter().cloned().chain(std::iter::once(segment.to_string())))
    }

    /// True iff `self` is a prefix of `other` (equality included).
    pub fn subsumes(&self, other: &CapabilityPath) -> bool {
        capability_subsumes(self, other)
    }
}

pub fn capability_subsumes(a: &CapabilityPath, b: &CapabilityPath) -> bool {
    a.0.len() <= b.0.len() && a.0.iter().zip(&b.0).all(|(x, y)| x == y)
}

impl FromStr for CapabilityPath {
    type Err = CapabilityError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.is_empty() {
            return Err(CapabilityError::Empty);
        }
        Self::new(s.split('.'))
    }
}

impl fmt::Display for CapabilityPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0.join("."))
    }
}

impl Serialize for CapabilityPath {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for CapabilityPath {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Closed logical-time interval `[start, end]`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Interval(pub Millis, pub Millis);

impl Interval {
    pub fn start(&self) -> Millis {
        self.0
    }

    pub fn end(&self) -> Millis {
        self.1
    }

    pub fn covers(&self, other: &Interval) -> bool {
        self.0 <= other.0 && other.1 <= self.1
    }

    pub fn contains(&self, t: Millis) -> bool {
        self.0 <= t && t <= self.1
    }
}

/// Service-level agreement terms, either posted by a provider or negotiated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlaTerms {
    /// Credits per message.
    pub price: f64,
    /// Milliseconds.
    pub max_latency: u64,
    pub min_quality: f64,
    /// Messages per second.
    pub capacity: f64,
    pub term: Interval,
    pub breach_penalty: f64,
    pub early_termination_penalty: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub availability_window: Option<Interval>,
}

impl SlaTerms {
    /// The interval over which the provider can actually serve.
    pub fn availability(&self) -> Interval {
        match self.availability_window {
            Some(w) => Interval(w.0.max(self.term.0), w.1.min(self.term.1)),
            None => self.term,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AttrValue {
    Bool(bool),
    Number(f64),
    Text(String),
}

impl AttrValue {
    fn as_number(&self) -> Option<f64> {
        match self {
            AttrValue::Number(n) => Some(*n),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentDescriptor {
    pub id: String,
    pub kind: ComponentKind,
    pub nature: Nature,
    pub capability: CapabilityPath,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_type: Option<DataType>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_type: Option<DataType>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub location: Option<String>,
    #[serde(default)]
    pub attributes: BTreeMap<String, AttrValue>,
    pub posted_terms: SlaTerms,
    #[serde(default)]
    pub endpoint: String,
}

impl ComponentDescriptor {
    pub fn class(&self) -> ComponentClass {
        ComponentClass {
            kind: self.kind,
            nature: self.nature,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum NatureConstraint {
    #[default]
    Any,
    Human,
    Machine,
}

impl NatureConstraint {
    pub fn admits(&self, n: Nature) -> bool {
        match self {
            NatureConstraint::Any => true,
            NatureConstraint::Human => n == Nature::Human,
            NatureConstraint::Machine => n == Nature::Machine,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "kebab-case")]
pub enum AttrPredicate {
    Eq { key: String, value: AttrValue },
    Le { key: String, value: f64 },
    Ge { key: String, value: f64 },
    /// Location equals the region or lies beneath it (`city.nw` is within `city`).
    WithinRegion { region: String },
}

impl AttrPredicate {
    pub fn holds(&self, d: &ComponentDescriptor) -> bool {
        match self {
            AttrPredicate::Eq { key, value } => d.attributes.get(key) == Some(value),
            AttrPredicate::Le { key, value } => d
                .attributes
                .get(key)
                .and_then(AttrValue::as_number)
                .is_some_and(|v| v <= *value),
            AttrPredicate::Ge { key, value } => d
                .attributes
                .get(key)
                .and_then(AttrValue::as_number)
                .is_some_and(|v| v >= *value),
            AttrPredicate::WithinRegion { region } => d
                .location
                .as_deref()
                .is_some_and(|loc| region_contains(region, loc)),
        }
    }
}

pub fn region_contains(region: &str, location: &str) -> bool {
    location == region
        || (location.len() > region.len()
            && location.starts_with(region)
            && location.as_bytes()[region.len()] == b'.')
}

fn default_rate() -> f64 {
    1.0
}

/// Partial specification of one blueprint slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotQuery {
    pub kind: ComponentKind,
    #[serde(default)]
    pub nature: NatureConstraint,
    pub capability: CapabilityPath,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub predicates: Vec<AttrPredicate>,
    pub max_price: f64,
    pub min_quality: f64,
    pub max_latency: u64,
    /// Blueprints overwrite this with their own `[start_time, end_time]`.
    #[serde(default)]
    pub term: Interval,
    /// Capacity the slot needs from its provider, in messages per second.
    #[serde(default = "default_rate")]
    pub rate: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_type: Option<DataType>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_type: Option<DataType>,
}

/// One violated invariant.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub code: String,
    pub detail: String,
}

/// List of violated invariants; empty iff the checked value is well-formed.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn push(&mut self, code: &str, detail: impl Into<String>) {
        self.violations.push(Violation {
            code: code.to_string(),
            detail: detail.into(),
        });
    }

    pub fn contains(&self, code: &str) -> bool {
        self.violations.iter().any(|v| v.code == code)
    }

    pub fn codes(&self) -> Vec<&str> {
        self.violations.iter().map(|v| v.code.as_str()).collect()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self
            .violations
            .iter()
            .map(|v| format!("{}: {}", v.code, v.detail))
            .collect();
        f.write_str(&parts.join("; "))
    }
}

pub(crate) fn check_terms(t: &SlaTerms, report: &mut ValidationReport) {
    if t.term.0 >= t.term.1 {
        report.push("term-order", format!("term {:?} is not increasing", t.term));
    }
    if let Some(w) = t.availability_window {
        if w.0 > w.1 {
            report.push("window-order", format!("availability window {w:?} is reversed"));
        }
    }
    if !(t.price >= 0.0) {
        report.push("negative-price", format!("price {}", t.price));
    }
    if !(t.breach_penalty >= 0.0) || !(t.early_termination_penalty >= 0.0) {
        report.push("negative-penalty", "penalties must be non-negative");
    }
    if !(0.0..=1.0).contains(&t.min_quality) {
        report.push("quality-out-of-range", format!("min_quality {}", t.min_quality));
    }
    if !(t.capacity > 0.0) {
        report.push("capacity-nonpositive", format!("capacity {}", t.capacity));
    }
}

pub fn validate_descriptor(d: &ComponentDescriptor) -> ValidationReport {
    let mut report = ValidationReport::default();
    if d.id.is_empty() {
        report.push("empty-id", "descriptor id is empty");
    }
    match d.kind {
        ComponentKind::Sensing => {
            if d.input_type.is_some() {
                report.push("sensing-has-input", "sensing components receive no input");
            }
        }
        _ => {
            if d.input_type.is_none() {
                report.push("missing-input-type", "non-sensing component needs an input type");
            }
        }
    }
    match d.kind {
        ComponentKind::Actuation => {
            if d.output_type.is_some() {
                report.push("actuation-has-output", "actuation components emit no output");
            }
        }
        _ => {
            if d.output_type.is_none() {
                report.push("missing-output-type", "non-actuation component needs an output type");
            }
        }
    }
    check_terms(&d.posted_terms, &mut report);
    report
}

pub fn validate_query(q: &SlotQuery) -> ValidationReport {
    let mut report = ValidationReport::default();
    if !(q.max_price >= 0.0) {
        report.push("negative-price", format!("max_price {}", q.max_price));
    }
    if !(0.0..=1.0).contains(&q.min_quality) {
        report.push("quality-out-of-range", format!("min_quality {}", q.min_quality));
    }
    if !(q.rate > 0.0) {
        report.push("rate-nonpositive", format!("rate {}", q.rate));
    }
    if q.term.0 > q.term.1 {
        report.push("term-order", format!("required term {:?} is reversed", q.term));
    }
    report
}

/// Does descriptor `d` fulfil the partial specification `q`?
pub fn matches(d: &ComponentDescriptor, q: &SlotQuery) -> bool {
    let t = &d.posted_terms;
    d.kind == q.kind
        && q.nature.admits(d.nature)
        && q.capability.subsumes(&d.capability)
        && q.input_type.is_none_or(|ty| d.input_type == Some(ty))
        && q.output_type.is_none_or(|ty| d.output_type == Some(ty))
        && q.predicates.iter().all(|p| p.holds(d))
        && t.price <= q.max_price
        && t.min_quality >= q.min_quality
        && t.max_latency <= q.max_latency
        && t.availability().covers(&q.term)
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    pub fn terms(price: f64, quality: f64) -> SlaTerms {
        SlaTerms {
            price,
            max_latency: 50,
            min_quality: quality,
            capacity: 10.0,
            term: Interval(0, 1_000_000),
            breach_penalty: 5.0,
            early_termination_penalty: 2.0,
            availability_window: None,
        }
    }

    pub fn camera(id: &str, price: f64, quality: f64) -> ComponentDescriptor {
        ComponentDescriptor {
            id: id.into(),
            kind: ComponentKind::Sensing,
            nature: Nature::Machine,
            capability: "sense.vision.camera.street".parse().unwrap(),
            input_type: None,
            output_type: Some(DataType::Image),
            location: Some("campus.main-entrance".into()),
            attributes: BTreeMap::new(),
            posted_terms: terms(price, quality),
            endpoint: format!("sim://{id}"),
        }
    }

    pub fn vision_query(max_price: f64, min_quality: f64) -> SlotQuery {
        SlotQuery {
            kind: ComponentKind::Sensing,
            nature: NatureConstraint::Any,
            capability: "sense.vision".parse().unwrap(),
            predicates: vec![],
            max_price,
            min_quality,
            max_latency: 100,
            term: Interval(0, 10_000),
            rate: 1.0,
            input_type: None,
            output_type: None,
        }
    }
}
