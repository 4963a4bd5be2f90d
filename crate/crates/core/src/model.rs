//! Domain types shared by every other module, plus the scenario file format.
//!
//! Targets are addressed by index internally. The external JSON format uses
//! string identifiers, which are resolved against `targets` on load.

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::io::{Read, Write};
use std::time::Duration;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// One of the two negotiating agents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Side {
    A,
    B,
}

impl Side {
    pub const BOTH: [Side; 2] = [Side::A, Side::B];

    pub fn index(self) -> usize {
        match self {
            Side::A => 0,
            Side::B => 1,
        }
    }

    pub fn other(self) -> Side {
        match self {
            Side::A => Side::B,
            Side::B => Side::A,
        }
    }
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Side::A => "a",
            Side::B => "b",
        })
    }
}

/// Intimacy thresholds, one per relationship type, plus a set of per-target
/// exceptions that override the threshold decision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrivacyPolicy {
    pub thresholds: Vec<f64>,
    pub exceptions: BTreeSet<usize>,
}

impl PrivacyPolicy {
    pub fn new(thresholds: Vec<f64>) -> Self {
        PrivacyPolicy {
            thresholds,
            exceptions: BTreeSet::new(),
        }
    }

    pub fn with_exceptions(thresholds: Vec<f64>, exceptions: impl IntoIterator<Item = usize>) -> Self {
        PrivacyPolicy {
            thresholds,
            exceptions: exceptions.into_iter().collect(),
        }
    }
}

/// A complete grant (`true`) / deny (`false`) assignment, index-aligned with
/// `Scenario::targets`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ActionVector(pub Vec<bool>);

impl ActionVector {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.0
    }

    /// Builds a vector from 0/1 digits; any non-zero value grants.
    pub fn from_bits(bits: &[u8]) -> Self {
        ActionVector(bits.iter().map(|&b| b != 0).collect())
    }

    pub fn to_bits(&self) -> Vec<u8> {
        self.0.iter().map(|&b| u8::from(b)).collect()
    }
}

impl fmt::Display for ActionVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("(")?;
        for (i, &a) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            f.write_str(if a { "1" } else { "0" })?;
        }
        f.write_str(")")
    }
}

impl Serialize for ActionVector {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.to_bits().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for ActionVector {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let bits = Vec::<u8>::deserialize(deserializer)?;
        if let Some(bad) = bits.iter().find(|&&b| b > 1) {
            return Err(serde::de::Error::custom(format!("action must be 0 or 1, got {bad}")));
        }
        Ok(ActionVector::from_bits(&bits))
    }
}

/// An action vector in which some entries are still undecided (`None`).
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PartialActionVector(pub Vec<Option<bool>>);

impl PartialActionVector {
    pub fn undecided(n: usize) -> Self {
        PartialActionVector(vec![None; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn undecided_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().enumerate().filter(|(_, e)| e.is_none()).map(|(i, _)| i)
    }

    pub fn undecided_count(&self) -> usize {
        self.0.iter().filter(|e| e.is_none()).count()
    }

    /// The complete vector, if no entry is undecided.
    pub fn to_complete(&self) -> Option<ActionVector> {
        self.0.iter().copied().collect::<Option<Vec<bool>>>().map(ActionVector)
    }

    /// True if `v` agrees with every decided entry.
    pub fn admits(&self, v: &ActionVector) -> bool {
        self.0.len() == v.len() && self.0.iter().zip(v.as_slice()).all(|(p, &x)| p.is_none_or(|p| p == x))
    }
}

impl From<&ActionVector> for PartialActionVector {
    fn from(v: &ActionVector) -> Self {
        PartialActionVector(v.as_slice().iter().map(|&a| Some(a)).collect())
    }
}

impl fmt::Display for PartialActionVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("(")?;
        for (i, e) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            f.write_str(match e {
                Some(true) => "1",
                Some(false) => "0",
                None => "*",
            })?;
        }
        f.write_str(")")
    }
}

/// Targets on which the two preferred policies disagree, in ascending order.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ConflictSet(pub Vec<usize>);

impl ConflictSet {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, i: usize) -> bool {
        self.0.binary_search(&i).is_ok()
    }

    pub fn indices(&self) -> &[usize] {
        &self.0
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SearchStats {
    /// Complete and partial action vectors whose utilities were computed.
    pub vectors_evaluated: u64,
    /// Greedy-completion calls (GreedyBnB only; zero elsewhere).
    pub greedy_calls: u64,
    #[serde(with = "duration_nanos", rename = "wall_time_ns")]
    pub wall_time: Duration,
    pub budget_exhausted: bool,
}

mod duration_nanos {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_nanos().min(u128::from(u64::MAX)) as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        Ok(Duration::from_nanos(u64::deserialize(d)?))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NegotiationResult {
    pub chosen: ActionVector,
    pub utility_a: f64,
    pub utility_b: f64,
    pub product: f64,
    pub policy_for_a: PrivacyPolicy,
    pub policy_for_b: PrivacyPolicy,
    pub stats: SearchStats,
    /// Agent a's and agent b's proposals.
    pub proposals: [ActionVector; 2],
    /// The proposals differed with equal products and a coin picked one.
    pub settled_by_coin: bool,
}

impl NegotiationResult {
    pub fn utility(&self, side: Side) -> f64 {
        match side {
            Side::A => self.utility_a,
            Side::B => self.utility_b,
        }
    }

    pub fn min_utility(&self) -> f64 {
        self.utility_a.min(self.utility_b)
    }
}

/// A complete negotiation instance over one shared item.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub negotiators: [String; 2],
    pub targets: Vec<String>,
    pub relationship_types: Vec<String>,
    /// `rel_of[side][target]` is an index into `relationship_types`.
    pub rel_of: [Vec<usize>; 2],
    /// `intimacy[side][target]` lies in `[0, max_intimacy]`.
    pub intimacy: [Vec<f64>; 2],
    pub max_intimacy: f64,
    pub policies: [PrivacyPolicy; 2],
}

impl Scenario {
    /// Validates and returns the scenario, or every violation found.
    pub fn try_new(s: Scenario) -> Result<Scenario, ScenarioError> {
        let violations = s.validate();
        if violations.is_empty() {
            Ok(s)
        } else {
            Err(ScenarioError::Invalid(violations))
        }
    }

    pub fn num_targets(&self) -> usize {
        self.targets.len()
    }

    pub fn num_types(&self) -> usize {
        self.relationship_types.len()
    }

    pub fn intimacy(&self, side: Side, target: usize) -> f64 {
        self.intimacy[side.index()][target]
    }

    pub fn rel(&self, side: Side, target: usize) -> usize {
        self.rel_of[side.index()][target]
    }

    pub fn policy(&self, side: Side) -> &PrivacyPolicy {
        &self.policies[side.index()]
    }

    /// The utility ceiling: the largest possible threshold distance.
    pub fn max_distance(&self) -> f64 {
        self.max_intimacy * (self.num_types() as f64).sqrt()
    }

    /// Returns every invariant violation; empty means the scenario is valid.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let n = self.targets.len();
        let k = self.relationship_types.len();

        if !(self.max_intimacy.is_finite() && self.max_intimacy > 0.0) {
            out.push(Violation::new(
                "max_intimacy",
                format!("must be a positive finite number, got {}", self.max_intimacy),
            ));
        }
        if n == 0 {
            out.push(Violation::new("targets", "at least one target is required"));
        }
        if k == 0 {
            out.push(Violation::new(
                "relationship_types",
                "at least one relationship type is required",
            ));
        }
        if self.negotiators[0] == self.negotiators[1] {
            out.push(Violation::new(
                "negotiators",
                format!("negotiators must differ, both are {:?}", self.negotiators[0]),
            ));
        }

        let mut seen = HashSet::new();
        for (i, t) in self.targets.iter().enumerate() {
            if !seen.insert(t.as_str()) {
                out.push(Violation::new(
                    format!("targets[{i}]"),
                    format!("duplicate target {t:?}"),
                ));
            }
            if self.negotiators.contains(t) {
                out.push(Violation::new(
                    format!("targets[{i}]"),
                    format!("negotiator {t:?} cannot be a target"),
                ));
            }
        }
        let mut seen = HashSet::new();
        for (i, r) in self.relationship_types.iter().enumerate() {
            if !seen.insert(r.as_str()) {
                out.push(Violation::new(
                    format!("relationship_types[{i}]"),
                    format!("duplicate relationship type {r:?}"),
                ));
            }
        }

        for side in Side::BOTH {
            let who = &self.negotiators[side.index()];
            let intim = &self.intimacy[side.index()];
            if intim.len() != n {
                out.push(Violation::new(
                    format!("intimacy.{who}"),
                    format!("expected {n} values, found {}", intim.len()),
                ));
            }
            for (i, &x) in intim.iter().enumerate() {
                if !(x.is_finite() && (0.0..=self.max_intimacy).contains(&x)) {
                    out.push(Violation::new(
                        format!("intimacy.{who}.{}", self.target_name(i)),
                        format!("{x} outside [0, {}]", self.max_intimacy),
                    ));
                }
            }
            let rels = &self.rel_of[side.index()];
            if rels.len() != n {
                out.push(Violation::new(
                    format!("rel_of.{who}"),
                    format!("expected {n} values, found {}", rels.len()),
                ));
            }
            for (i, &r) in rels.iter().enumerate() {
                if r >= k {
                    out.push(Violation::new(
                        format!("rel_of.{who}.{}", self.target_name(i)),
                        format!("relationship type index {r} out of range"),
                    ));
                }
            }
            let p = &self.policies[side.index()];
            if p.thresholds.len() != k {
                out.push(Violation::new(
                    format!("policies.{who}.thresholds"),
                    format!("expected {k} thresholds, found {}", p.thresholds.len()),
                ));
            }
            for (r, &theta) in p.thresholds.iter().enumerate() {
                if !(theta.is_finite() && (0.0..=self.max_intimacy).contains(&theta)) {
                    let name = self
                        .relationship_types
                        .get(r)
                        .map_or_else(|| r.to_string(), Clone::clone);
                    out.push(Violation::new(
                        format!("policies.{who}.thresholds.{name}"),
                        format!("{theta} outside [0, {}]", self.max_intimacy),
                    ));
                }
            }
            for &e in &p.exceptions {
                if e >= n {
                    out.push(Violation::new(
                        format!("policies.{who}.exceptions"),
                        format!("unknown target index {e}"),
                    ));
                }
            }
        }
        out
    }

    fn target_name(&self, i: usize) -> String {
        self.targets.get(i).cloned().unwrap_or_else(|| format!("#{i}"))
    }
}

/// A single invariant violation, addressed by a dotted field path.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub path: String,
    pub message: String,
}

impl Violation {
    pub fn new(path: impl Into<String>, message: impl Into<String>) -> Self {
        Violation {
            path: path.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("failed to read scenario: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed scenario document: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid scenario:\n{}", format_violations(.0))]
    Invalid(Vec<Violation>),
}

impl ScenarioError {
    pub fn violations(&self) -> &[Violation] {
        match self {
            ScenarioError::Invalid(v) => v,
            _ => &[],
        }
    }
}

fn format_violations(v: &[Violation]) -> String {
    v.iter().map(|v| format!("  {v}")).collect::<Vec<_>>().join("\n")
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    negotiators: Vec<String>,
    targets: Vec<String>,
    relationship_types: Vec<String>,
    max_intimacy: f64,
    intimacy: IndexMap<String, IndexMap<String, f64>>,
    rel_of: IndexMap<String, IndexMap<String, String>>,
    policies: IndexMap<String, PolicyFile>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PolicyFile {
    thresholds: IndexMap<String, f64>,
    #[serde(default)]
    exceptions: Vec<String>,
}

/// Parses and validates a scenario document.
pub fn load_scenario<R: Read>(source: R) -> Result<Scenario, ScenarioError> {
    let file: ScenarioFile = serde_json::from_reader(source)?;
    let scenario = from_file(file)?;
    Scenario::try_new(scenario)
}

pub fn load_scenario_str(source: &str) -> Result<Scenario, ScenarioError> {
    load_scenario(source.as_bytes())
}

/// Writes a scenario document. Floats keep their shortest round-trip form.
pub fn save_scenario<W: Write>(s: &Scenario, sink: W) -> Result<(), ScenarioError> {
    serde_json::to_writer_pretty(sink, &to_file(s))?;
    Ok(())
}

pub fn scenario_to_string(s: &Scenario) -> String {
    serde_json::to_string_pretty(&to_file(s)).expect("scenario serialization is infallible")
}

fn to_file(s: &Scenario) -> ScenarioFile {
    let mut intimacy = IndexMap::new();
    let mut rel_of = IndexMap::new();
    let mut policies = IndexMap::new();
    for side in Side::BOTH {
        let name = s.negotiators[side.index()].clone();
        intimacy.insert(
            name.clone(),
            s.targets
                .iter()
                .cloned()
                .zip(s.intimacy[side.index()].iter().copied())
                .collect(),
        );
        rel_of.insert(
            name.clone(),
            s.targets
                .iter()
                .cloned()
                .zip(s.rel_of[side.index()].iter().map(|&r| s.relationship_types[r].clone()))
                .collect(),
        );
        let p = s.policy(side);
        policies.insert(
            name,
            PolicyFile {
                thresholds: s
                    .relationship_types
                    .iter()
                    .cloned()
                    .zip(p.thresholds.iter().copied())
                    .collect(),
                exceptions: p.exceptions.iter().map(|&e| s.targets[e].clone()).collect(),
            },
        );
    }
    ScenarioFile {
        negotiators: s.negotiators.to_vec(),
        targets: s.targets.clone(),
        relationship_types: s.relationship_types.clone(),
        max_intimacy: s.max_intimacy,
        intimacy,
        rel_of,
        policies,
    }
}

fn from_file(f: ScenarioFile) -> Result<Scenario, ScenarioError> {
    let mut v = Vec::new();
    if f.negotiators.len() != 2 {
        return Err(ScenarioError::Invalid(vec![Violation::new(
            "negotiators",
            format!("expected exactly 2 negotiators, found {}", f.negotiators.len()),
        )]));
    }
    let negotiators = [f.negotiators[0].clone(), f.negotiators[1].clone()];
    let target_index: IndexMap<&str, usize> = f.targets.iter().enumerate().map(|(i, t)| (t.as_str(), i)).collect();
    let type_index: IndexMap<&str, usize> = f
        .relationship_types
        .iter()
        .enumerate()
        .map(|(i, t)| (t.as_str(), i))
        .collect();
    let n = f.targets.len();

    let mut intimacy: [Vec<f64>; 2] = [vec![f64::NAN; n], vec![f64::NAN; n]];
    let mut rel_of: [Vec<usize>; 2] = [vec![usize::MAX; n], vec![usize::MAX; n]];
    let mut policies = [PrivacyPolicy::new(Vec::new()), PrivacyPolicy::new(Vec::new())];

    for key in f.intimacy.keys().chain(f.rel_of.keys()).chain(f.policies.keys()) {
        if !negotiators.contains(key) {
            v.push(Violation::new(key.clone(), format!("unknown negotiator {key:?}")));
        }
    }

    for side in Side::BOTH {
        let who = &negotiators[side.index()];
        match f.intimacy.get(who) {
            None => v.push(Violation::new(format!("intimacy.{who}"), "missing")),
            Some(row) => {
                for (t, &x) in row {
                    match target_index.get(t.as_str()) {
                        Some(&i) => intimacy[side.index()][i] = x,
                        None => v.push(Violation::new(format!("intimacy.{who}.{t}"), "unknown target")),
                    }
                }
                for t in &f.targets {
                    if !row.contains_key(t) {
                        v.push(Violation::new(format!("intimacy.{who}.{t}"), "missing"));
                    }
                }
            }
        }
        match f.rel_of.get(who) {
            None => v.push(Violation::new(format!("rel_of.{who}"), "missing")),
            Some(row) => {
                for (t, r) in row {
                    let Some(&i) = target_index.get(t.as_str()) else {
                        v.push(Violation::new(format!("rel_of.{who}.{t}"), "unknown target"));
                        continue;
                    };
                    match type_index.get(r.as_str()) {
                        Some(&ri) => rel_of[side.index()][i] = ri,
                        None => v.push(Violation::new(
                            format!("rel_of.{who}.{t}"),
                            format!("unknown relationship type {r:?}"),
                        )),
                    }
                }
                for t in &f.targets {
                    if !row.contains_key(t) {
                        v.push(Violation::new(format!("rel_of.{who}.{t}"), "missing"));
                    }
                }
            }
        }
        match f.policies.get(who) {
            None => v.push(Violation::new(format!("policies.{who}"), "missing")),
            Some(p) => {
                if p.thresholds.len() != f.relationship_types.len() {
                    v.push(Violation::new(
                        format!("policies.{who}.thresholds"),
                        format!(
                            "expected {} thresholds, found {}",
                            f.relationship_types.len(),
                            p.thresholds.len()
                        ),
                    ));
                }
                let mut thresholds = vec![f64::NAN; f.relationship_types.len()];
                for (r, &theta) in &p.thresholds {
                    match type_index.get(r.as_str()) {
                        Some(&ri) => thresholds[ri] = theta,
                        None => v.push(Violation::new(
                            format!("policies.{who}.thresholds.{r}"),
                            "unknown relationship type",
                        )),
                    }
                }
                let mut exceptions = BTreeSet::new();
                for t in &p.exceptions {
                    match target_index.get(t.as_str()) {
                        Some(&i) => {
                            exceptions.insert(i);
                        }
                        None => v.push(Violation::new(
                            format!("policies.{who}.exceptions"),
                            format!("unknown target {t:?}"),
                        )),
                    }
                }
                policies[side.index()] = PrivacyPolicy { thresholds, exceptions };
            }
        }
    }

    if !v.is_empty() {
        return Err(ScenarioError::Invalid(v));
    }
    Ok(Scenario {
        negotiators,
        targets: f.targets,
        relationship_types: f.relationship_types,
        rel_of,
        intimacy,
        max_intimacy: f.max_intimacy,
        policies,
    })
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    /// Two negotiators, four targets, one relationship type, Y = 10.
    pub fn example_one() -> Scenario {
        Scenario {
            negotiators: ["a".into(), "b".into()],
            targets: vec!["i1".into(), "i2".into(), "i3".into(), "i4".into()],
            relationship_types: vec!["r1".into()],
            rel_of: [vec![0; 4], vec![0; 4]],
            intimacy: [vec![10.0, 6.0, 4.0, 1.0], vec![8.0, 6.0, 7.0, 4.0]],
            max_intimacy: 10.0,
            policies: [PrivacyPolicy::new(vec![5.0]), PrivacyPolicy::new(vec![4.0])],
        }
    }
}
