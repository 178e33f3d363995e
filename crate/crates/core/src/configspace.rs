//! Hierarchical conditional hyperparameter spaces.
//!
//! A [`ConfigurationSpace`] is an ordered list of typed hyperparameters plus
//! activation rules: a child hyperparameter is active only while its parent is
//! active and holds one of the activating values. Spaces are parsed from a
//! JSON document, validated once, and are immutable afterwards.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

/// Unit-cube value used for inactive numeric dimensions.
pub const INACTIVE_NUMERIC: f64 = 0.5;

#[derive(Debug, thiserror::Error)]
pub enum SpaceError {
    #[error("schema violation in `{field}`: {message}")]
    Schema { field: String, message: String },
    #[error("duplicate hyperparameter name `{0}`")]
    DuplicateName(String),
    #[error("cyclic condition involving `{0}`")]
    CyclicCondition(String),
    #[error("default of `{0}` lies outside its domain")]
    DefaultOutsideDomain(String),
    #[error("unknown hyperparameter `{0}`")]
    UnknownName(String),
    #[error("value of `{name}` is invalid: {message}")]
    InvalidValue { name: String, message: String },
    #[error("hyperparameter `{0}` is active but unassigned")]
    MissingValue(String),
    #[error("hyperparameter `{0}` is assigned but inactive")]
    InactiveAssigned(String),
    #[error("vector has length {got}, space has {expected} dimensions")]
    LengthMismatch { expected: usize, got: usize },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed space document: {0}")]
    Json(#[from] serde_json::Error),
}

fn schema(field: impl Into<String>, message: impl Into<String>) -> SpaceError {
    SpaceError::Schema {
        field: field.into(),
        message: message.into(),
    }
}

/// A hyperparameter value as it appears in configurations and documents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Bool(bool),
    Int(i64),
    Real(f64),
    Str(String),
}

impl Value {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Int(v) => Some(*v as f64),
            Value::Real(v) => Some(*v),
            _ => None,
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Bool(b) => write!(f, "{b}"),
            Value::Int(i) => write!(f, "{i}"),
            Value::Real(r) => write!(f, "{r}"),
            Value::Str(s) => write!(f, "{s}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Domain {
    Int { lo: i64, hi: i64 },
    Real { lo: f64, hi: f64 },
    Categorical(Vec<String>),
    Bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HyperparameterSpec {
    pub name: String,
    pub domain: Domain,
    pub log_scale: bool,
    pub default: Value,
}

impl HyperparameterSpec {
    /// Number of discrete choices for categorical and boolean hyperparameters.
    pub fn n_choices(&self) -> Option<usize> {
        match &self.domain {
            Domain::Categorical(c) => Some(c.len()),
            Domain::Bool => Some(2),
            _ => None,
        }
    }

    /// Coerces `value` onto this hyperparameter's domain, or explains why it
    /// does not fit.
    pub fn coerce(&self, value: &Value) -> Result<Value, String> {
        match (&self.domain, value) {
            (Domain::Int { lo, hi }, Value::Int(v)) => {
                if v < lo || v > hi {
                    Err(format!("{v} outside [{lo}, {hi}]"))
                } else {
                    Ok(Value::Int(*v))
                }
            }
            (Domain::Int { .. }, Value::Real(r)) if r.fract() == 0.0 => self.coerce(&Value::Int(*r as i64)),
            (Domain::Real { lo, hi }, v @ (Value::Int(_) | Value::Real(_))) => {
                let x = v.as_f64().unwrap_or(f64::NAN);
                if !x.is_finite() || x < *lo || x > *hi {
                    Err(format!("{x} outside [{lo}, {hi}]"))
                } else {
                    Ok(Value::Real(x))
                }
            }
            (Domain::Categorical(choices), Value::Str(s)) => {
                if choices.contains(s) {
                    Ok(Value::Str(s.clone()))
                } else {
                    Err(format!("`{s}` is not one of {choices:?}"))
                }
            }
            (Domain::Bool, Value::Bool(b)) => Ok(Value::Bool(*b)),
            (_, v) => Err(format!("value {v} has the wrong type")),
        }
    }

    fn choice_index(&self, value: &Value) -> Option<usize> {
        match (&self.domain, value) {
            (Domain::Categorical(c), Value::Str(s)) => c.iter().position(|x| x == s),
            (Domain::Bool, Value::Bool(b)) => Some(usize::from(*b)),
            _ => None,
        }
    }

    fn choice_value(&self, index: usize) -> Value {
        match &self.domain {
            Domain::Categorical(c) => Value::Str(c[index].clone()),
            Domain::Bool => Value::Bool(index == 1),
            _ => unreachable!("choice_value on numeric hyperparameter"),
        }
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Value {
        match &self.domain {
            Domain::Int { lo, hi } => {
                if self.log_scale {
                    // log-uniform over the widened interval, then rounded
                    let a = (*lo as f64 - 0.5).max(0.5).ln();
                    let b = (*hi as f64 + 0.5).ln();
                    let x = (a + rng.gen::<f64>() * (b - a)).exp().round() as i64;
                    Value::Int(x.clamp(*lo, *hi))
                } else {
                    Value::Int(rng.gen_range(*lo..=*hi))
                }
            }
            Domain::Real { lo, hi } => {
                let u = rng.gen::<f64>();
                let x = if self.log_scale {
                    (lo.ln() + u * (hi.ln() - lo.ln())).exp()
                } else {
                    lo + u * (hi - lo)
                };
                Value::Real(x.clamp(*lo, *hi))
            }
            Domain::Categorical(c) => Value::Str(c[rng.gen_range(0..c.len())].clone()),
            Domain::Bool => Value::Bool(rng.gen::<bool>()),
        }
    }

    fn encode(&self, value: &Value) -> f64 {
        match &self.domain {
            Domain::Int { lo, hi } => {
                let v = value.as_f64().unwrap_or(*lo as f64);
                if self.log_scale {
                    log_affine(v, *lo as f64, *hi as f64)
                } else {
                    (v - *lo as f64 + 0.5) / ((hi - lo + 1) as f64)
                }
            }
            Domain::Real { lo, hi } => {
                let v = value.as_f64().unwrap_or(*lo);
                if self.log_scale {
                    log_affine(v, *lo, *hi)
                } else if hi > lo {
                    (v - lo) / (hi - lo)
                } else {
                    0.0
                }
            }
            Domain::Categorical(_) | Domain::Bool => self.choice_index(value).unwrap_or(0) as f64,
        }
    }

    fn decode(&self, x: f64) -> Value {
        match &self.domain {
            Domain::Int { lo, hi } => {
                let u = x.clamp(0.0, 1.0);
                let v = if self.log_scale {
                    let (a, b) = ((*lo as f64).ln(), (*hi as f64).ln());
                    (a + u * (b - a)).exp().round() as i64
                } else {
                    (*lo as f64 + u * ((hi - lo + 1) as f64)).floor() as i64
                };
                Value::Int(v.clamp(*lo, *hi))
            }
            Domain::Real { lo, hi } => {
                let u = x.clamp(0.0, 1.0);
                let v = if self.log_scale {
                    (lo.ln() + u * (hi.ln() - lo.ln())).exp()
                } else {
                    lo + u * (hi - lo)
                };
                Value::Real(v.clamp(*lo, *hi))
            }
            Domain::Categorical(_) | Domain::Bool => {
                let n = self.n_choices().unwrap_or(1);
                let idx = if x.is_finite() && x > 0.0 {
                    x.round() as usize
                } else {
                    0
                };
                // the inactive marker (index n) decodes to the first choice
                self.choice_value(if idx >= n { 0 } else { idx })
            }
        }
    }
}

fn log_affine(v: f64, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        (v.ln() - lo.ln()) / (hi.ln() - lo.ln())
    } else {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditionRule {
    pub child: String,
    pub parent: String,
    pub activating_values: Vec<Value>,
}

/// Per-dimension kind of the vector encoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DimensionKind {
    Continuous,
    Integer,
    /// Discrete coordinate holding a choice index. `levels` counts the
    /// choices plus one dedicated inactive level for conditional parameters.
    Categorical {
        levels: usize,
    },
}

/// An assignment of values to the active hyperparameters of a space.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Configuration {
    pub values: BTreeMap<String, Value>,
}

impl Configuration {
    pub fn new(values: BTreeMap<String, Value>) -> Self {
        Self { values }
    }

    pub fn get(&self, name: &str) -> Option<&Value> {
        self.values.get(name)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Canonical string form, stable across runs; used as a lookup key.
    pub fn key(&self) -> String {
        serde_json::to_string(&self.values).unwrap_or_default()
    }
}

// ---------------------------------------------------------------------------
// document schema
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SpaceDocument {
    #[serde(default)]
    name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    notes: Option<String>,
    hyperparameters: Vec<HyperparameterDocument>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HyperparameterDocument {
    name: String,
    #[serde(rename = "type")]
    kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    range: Option<Vec<Value>>,
    #[serde(default)]
    log: bool,
    default: Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    condition: Option<ConditionDocument>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConditionDocument {
    parent: String,
    values: Vec<Value>,
}

/// Validated hierarchical space. Immutable after construction.
#[derive(Debug, Clone)]
pub struct ConfigurationSpace {
    name: String,
    notes: Option<String>,
    hyperparameters: Vec<HyperparameterSpec>,
    conditions: Vec<ConditionRule>,
    index: HashMap<String, usize>,
    /// conditions grouped by child index, as (parent index, activating values)
    gates: Vec<Vec<(usize, Vec<Value>)>>,
    topo_order: Vec<usize>,
}

impl ConfigurationSpace {
    /// Builds and validates a space from already-typed parts.
    pub fn new(
        name: impl Into<String>,
        hyperparameters: Vec<HyperparameterSpec>,
        conditions: Vec<ConditionRule>,
    ) -> Result<Self, SpaceError> {
        let mut index = HashMap::new();
        for (i, hp) in hyperparameters.iter().enumerate() {
            if index.insert(hp.name.clone(), i).is_some() {
                return Err(SpaceError::DuplicateName(hp.name.clone()));
            }
            validate_spec(hp)?;
        }
        let mut gates = vec![Vec::new(); hyperparameters.len()];
        for cond in &conditions {
            let child = *index
                .get(&cond.child)
                .ok_or_else(|| SpaceError::UnknownName(cond.child.clone()))?;
            let parent = *index
                .get(&cond.parent)
                .ok_or_else(|| SpaceError::UnknownName(cond.parent.clone()))?;
            if child == parent {
                return Err(SpaceError::CyclicCondition(cond.child.clone()));
            }
            if cond.activating_values.is_empty() {
                return Err(schema(
                    format!("{}.condition.values", cond.child),
                    "activating values must be non-empty",
                ));
            }
            let mut values = Vec::with_capacity(cond.activating_values.len());
            for v in &cond.activating_values {
                values.push(
                    hyperparameters[parent]
                        .coerce(v)
                        .map_err(|m| schema(format!("{}.condition.values", cond.child), m))?,
                );
            }
            gates[child].push((parent, values));
        }
        let topo_order = topological_order(&hyperparameters, &gates)?;
        Ok(Self {
            name: name.into(),
            notes: None,
            hyperparameters,
            conditions,
            index,
            gates,
            topo_order,
        })
    }

    /// Parses a space from its JSON document.
    pub fn parse(document: &str) -> Result<Self, SpaceError> {
        let doc: SpaceDocument = serde_json::from_str(document)?;
        let mut specs = Vec::with_capacity(doc.hyperparameters.len());
        let mut conditions = Vec::new();
        for hp in &doc.hyperparameters {
            specs.push(spec_from_document(hp)?);
            if let Some(c) = &hp.condition {
                conditions.push(ConditionRule {
                    child: hp.name.clone(),
                    parent: c.parent.clone(),
                    activating_values: c.values.clone(),
                });
            }
        }
        let mut space = Self::new(doc.name, specs, conditions)?;
        space.notes = doc.notes;
        Ok(space)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, SpaceError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| SpaceError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    /// Serializes the space back to its JSON document form.
    pub fn to_document(&self) -> String {
        let hyperparameters = self
            .hyperparameters
            .iter()
            .map(|hp| {
                let (kind, range) = match &hp.domain {
                    Domain::Int { lo, hi } => ("int", Some(vec![Value::Int(*lo), Value::Int(*hi)])),
                    Domain::Real { lo, hi } => ("float", Some(vec![Value::Real(*lo), Value::Real(*hi)])),
                    Domain::Categorical(c) => ("cat", Some(c.iter().cloned().map(Value::Str).collect())),
                    Domain::Bool => ("bool", None),
                };
                let condition = self
                    .conditions
                    .iter()
                    .find(|c| c.child == hp.name)
                    .map(|c| ConditionDocument {
                        parent: c.parent.clone(),
                        values: c.activating_values.clone(),
                    });
                HyperparameterDocument {
                    name: hp.name.clone(),
                    kind: kind.to_string(),
                    range,
                    log: hp.log_scale,
                    default: hp.default.clone(),
                    condition,
                }
            })
            .collect();
        let doc = SpaceDocument {
            name: self.name.clone(),
            notes: self.notes.clone(),
            hyperparameters,
        };
        serde_json::to_string_pretty(&doc).unwrap_or_default()
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn hyperparameters(&self) -> &[HyperparameterSpec] {
        &self.hyperparameters
    }

    pub fn conditions(&self) -> &[ConditionRule] {
        &self.conditions
    }

    /// Dimensionality d of the space.
    pub fn dim(&self) -> usize {
        self.hyperparameters.len()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn hyperparameter(&self, name: &str) -> Option<&HyperparameterSpec> {
        self.index_of(name).map(|i| &self.hyperparameters[i])
    }

    pub fn is_conditional(&self, index: usize) -> bool {
        !self.gates[index].is_empty()
    }

    /// Returns a copy of the space without the condition at `position`.
    pub fn without_condition(&self, position: usize) -> Result<Self, SpaceError> {
        let mut conditions = self.conditions.clone();
        conditions.remove(position);
        Self::new(self.name.clone(), self.hyperparameters.clone(), conditions)
    }

    pub fn dimension_kinds(&self) -> Vec<DimensionKind> {
        self.hyperparameters
            .iter()
            .enumerate()
            .map(|(i, hp)| match hp.domain {
                Domain::Real { .. } => DimensionKind::Continuous,
                Domain::Int { .. } => DimensionKind::Integer,
                Domain::Categorical(_) | Domain::Bool => DimensionKind::Categorical {
                    levels: hp.n_choices().unwrap_or(1) + usize::from(self.is_conditional(i)),
                },
            })
            .collect()
    }

    fn gate_open(&self, child: usize, active: &[bool], lookup: &dyn Fn(usize) -> Option<Value>) -> bool {
        self.gates[child]
            .iter()
            .all(|(parent, values)| active[*parent] && lookup(*parent).is_some_and(|v| values.contains(&v)))
    }

    /// Names of the hyperparameters active under a (possibly partial)
    /// assignment.
    pub fn active_set(&self, assignment: &BTreeMap<String, Value>) -> Result<BTreeSet<String>, SpaceError> {
        let mut coerced = vec![None; self.dim()];
        for (name, value) in assignment {
            let i = self
                .index_of(name)
                .ok_or_else(|| SpaceError::UnknownName(name.clone()))?;
            coerced[i] = self.hyperparameters[i].coerce(value).ok();
        }
        let active = self.active_mask(&|i| coerced[i].clone());
        Ok(active
            .iter()
            .enumerate()
            .filter(|(_, a)| **a)
            .map(|(i, _)| self.hyperparameters[i].name.clone())
            .collect())
    }

    fn active_mask(&self, lookup: &dyn Fn(usize) -> Option<Value>) -> Vec<bool> {
        let mut active = vec![false; self.dim()];
        for &i in &self.topo_order {
            active[i] = self.gate_open(i, &active, lookup);
        }
        active
    }

    /// Checks the configuration invariants and returns a normalized copy
    /// (numeric types coerced onto their domains).
    pub fn validate(&self, config: &Configuration) -> Result<Configuration, SpaceError> {
        let mut coerced = vec![None; self.dim()];
        for (name, value) in &config.values {
            let i = self
                .index_of(name)
                .ok_or_else(|| SpaceError::UnknownName(name.clone()))?;
            let v = self.hyperparameters[i]
                .coerce(value)
                .map_err(|message| SpaceError::InvalidValue {
                    name: name.clone(),
                    message,
                })?;
            coerced[i] = Some(v);
        }
        let active = self.active_mask(&|i| coerced[i].clone());
        let mut values = BTreeMap::new();
        for (i, hp) in self.hyperparameters.iter().enumerate() {
            match (active[i], coerced[i].take()) {
                (true, Some(v)) => {
                    values.insert(hp.name.clone(), v);
                }
                (true, None) => return Err(SpaceError::MissingValue(hp.name.clone())),
                (false, Some(_)) => return Err(SpaceError::InactiveAssigned(hp.name.clone())),
                (false, None) => {}
            }
        }
        Ok(Configuration { values })
    }

    /// The configuration made of defaults for every active hyperparameter.
    pub fn default_configuration(&self) -> Configuration {
        let active = self.active_mask(&|i| Some(self.hyperparameters[i].default.clone()));
        let values = self
            .hyperparameters
            .iter()
            .zip(active)
            .filter(|(_, a)| *a)
            .map(|(hp, _)| (hp.name.clone(), hp.default.clone()))
            .collect();
        Configuration { values }
    }

    /// Draws a configuration: top-level hyperparameters uniformly (in log
    /// space when flagged), children only when activated.
    pub fn sample_uniform<R: Rng + ?Sized>(&self, rng: &mut R) -> Configuration {
        let mut drawn: Vec<Option<Value>> = vec![None; self.dim()];
        let mut active = vec![false; self.dim()];
        for &i in &self.topo_order {
            let open = self.gate_open(i, &active, &|p| drawn[p].clone());
            active[i] = open;
            if open {
                drawn[i] = Some(self.hyperparameters[i].sample(rng));
            }
        }
        let values = self
            .hyperparameters
            .iter()
            .zip(drawn)
            .filter_map(|(hp, v)| v.map(|v| (hp.name.clone(), v)))
            .collect();
        Configuration { values }
    }

    /// Encodes a configuration as a length-d vector; numeric coordinates in
    /// [0, 1], choice coordinates hold the choice index.
    pub fn to_unit_cube(&self, config: &Configuration) -> Result<Vec<f64>, SpaceError> {
        let config = self.validate(config)?;
        Ok(self
            .hyperparameters
            .iter()
            .map(|hp| match config.get(&hp.name) {
                Some(v) => hp.encode(v),
                None => match hp.n_choices() {
                    Some(n) => n as f64,
                    None => INACTIVE_NUMERIC,
                },
            })
            .collect())
    }

    /// Inverse of [`Self::to_unit_cube`]; children outside the decoded
    /// active set are dropped.
    pub fn from_unit_cube(&self, vector: &[f64]) -> Result<Configuration, SpaceError> {
        if vector.len() != self.dim() {
            return Err(SpaceError::LengthMismatch {
                expected: self.dim(),
                got: vector.len(),
            });
        }
        let decoded: Vec<Value> = self
            .hyperparameters
            .iter()
            .zip(vector)
            .map(|(hp, x)| hp.decode(*x))
            .collect();
        let active = self.active_mask(&|i| Some(decoded[i].clone()));
        let values = self
            .hyperparameters
            .iter()
            .zip(decoded)
            .zip(active)
            .filter(|(_, a)| *a)
            .map(|((hp, v), _)| (hp.name.clone(), v))
            .collect();
        Ok(Configuration { values })
    }
}

fn validate_spec(hp: &HyperparameterSpec) -> Result<(), SpaceError> {
    let field = |f: &str| format!("{}.{f}", hp.name);
    match &hp.domain {
        Domain::Int { lo, hi } => {
            if lo > hi {
                return Err(schema(field("range"), "lo must not exceed hi"));
            }
            if hp.log_scale && *lo <= 0 {
                return Err(schema(field("log"), "log scale requires a positive range"));
            }
        }
        Domain::Real { lo, hi } => {
            if !(lo.is_finite() && hi.is_finite()) || lo > hi {
                return Err(schema(field("range"), "lo must not exceed hi"));
            }
            if hp.log_scale && *lo <= 0.0 {
                return Err(schema(field("log"), "log scale requires a positive range"));
            }
        }
        Domain::Categorical(c) => {
            if c.is_empty() {
                return Err(schema(field("range"), "categorical list must be non-empty"));
            }
            let unique: BTreeSet<_> = c.iter().collect();
            if unique.len() != c.len() {
                return Err(schema(field("range"), "categorical list has duplicates"));
            }
            if hp.log_scale {
                return Err(schema(field("log"), "log scale on a categorical"));
            }
        }
        Domain::Bool => {
            if hp.log_scale {
                return Err(schema(field("log"), "log scale on a boolean"));
            }
        }
    }
    hp.coerce(&hp.default)
        .map(|_| ())
        .map_err(|_| SpaceError::DefaultOutsideDomain(hp.name.clone()))
}

fn spec_from_document(doc: &HyperparameterDocument) -> Result<HyperparameterSpec, SpaceError> {
    let field = |f: &str| format!("{}.{f}", doc.name);
    if doc.name.is_empty() {
        return Err(schema("name", "hyperparameter name must be non-empty"));
    }
    let range = || {
        doc.range
            .as_ref()
            .ok_or_else(|| schema(field("range"), "missing range"))
    };
    let pair = |r: &Vec<Value>| -> Result<(f64, f64), SpaceError> {
        match r.as_slice() {
            [a, b] => match (a.as_f64(), b.as_f64()) {
                (Some(a), Some(b)) => Ok((a, b)),
                _ => Err(schema(field("range"), "numeric range expected")),
            },
            _ => Err(schema(field("range"), "range must have exactly two bounds")),
        }
    };
    let domain = match doc.kind.as_str() {
        "int" => {
            let (lo, hi) = pair(range()?)?;
            if lo.fract() != 0.0 || hi.fract() != 0.0 {
                return Err(schema(field("range"), "integer bounds expected"));
            }
            Domain::Int {
                lo: lo as i64,
                hi: hi as i64,
            }
        }
        "float" => {
            let (lo, hi) = pair(range()?)?;
            Domain::Real { lo, hi }
        }
        "cat" => {
            let mut choices = Vec::new();
            for v in range()? {
                match v {
                    Value::Str(s) => choices.push(s.clone()),
                    _ => return Err(schema(field("range"), "categories must be strings")),
                }
            }
            Domain::Categorical(choices)
        }
        "bool" => Domain::Bool,
        other => {
            return Err(schema(
                field("type"),
                format!("unknown type `{other}` (expected int, float, cat or bool)"),
            ))
        }
    };
    let mut spec = HyperparameterSpec {
        name: doc.name.clone(),
        domain,
        log_scale: doc.log,
        default: doc.default.clone(),
    };
    validate_spec(&spec)?;
    spec.default = spec
        .coerce(&spec.default)
        .map_err(|_| SpaceError::DefaultOutsideDomain(doc.name.clone()))?;
    Ok(spec)
}

fn topological_order(hps: &[HyperparameterSpec], gates: &[Vec<(usize, Vec<Value>)>]) -> Result<Vec<usize>, SpaceError> {
    let n = hps.len();
    let mut indegree: Vec<usize> = gates.iter().map(Vec::len).collect();
    let mut children = vec![Vec::new(); n];
    for (child, g) in gates.iter().enumerate() {
        for (parent, _) in g {
            children[*parent].push(child);
        }
    }
    let mut order = Vec::with_capacity(n);
    let mut ready: Vec<usize> = (0..n).rev().filter(|&i| indegree[i] == 0).collect();
    while let Some(i) = ready.pop() {
        order.push(i);
        for &c in children[i].iter().rev() {
            indegree[c] -= 1;
            if indegree[c] == 0 {
                ready.push(c);
            }
        }
    }
    if order.len() < n {
        let stuck = (0..n).find(|&i| indegree[i] > 0).unwrap_or(0);
        return Err(SpaceError::CyclicCondition(hps[stuck].name.clone()));
    }
    Ok(order)
}
