//! Attribute dependency graph: measurable attributes linked by fixed
//! functional forms, evaluated in topological order.
//!
//! A dependent combines its parents in one of two ways. Unary forms (`affine`,
//! `lookup`) take exactly one parent. Aggregates (`sum`, `max`) take any number
//! of parents, all labelled with the same form, and require every parent to
//! carry the dependent's unit.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::knowledge_base::Comparator;
use crate::topology::EntityId;

/// Change detection tolerance for perturbation results.
pub const CHANGE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AttributeId(String);

impl AttributeId {
    pub fn new(id: impl Into<String>) -> Self {
        Self(id.into())
    }

    /// `<entity>.<attribute>`
    pub fn for_entity(entity: &EntityId, attribute: &str) -> Self {
        Self(format!("{entity}.{attribute}"))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for AttributeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for AttributeId {
    fn from(s: &str) -> Self {
        Self(s.to_owned())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeNode {
    pub id: AttributeId,
    pub host_entity: EntityId,
    pub attribute_name: String,
    #[serde(default)]
    pub unit: String,
    #[serde(default)]
    pub baseline: f64,
    /// Current value. Required for source attributes; ignored for dependents.
    #[serde(default)]
    pub value: Option<f64>,
    /// Dependents marked overridable may be perturbed directly.
    #[serde(default)]
    pub overridable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AttributeFunction {
    /// `a * parent + b`
    Affine { a: f64, b: f64 },
    /// Sum over all parents.
    Sum,
    /// Maximum over all parents.
    Max,
    /// Monotone piecewise-linear table over `(x, y)` points, clamped at both ends.
    Lookup { points: Vec<(f64, f64)> },
    /// Reserved for functions fitted from observed behavior; not evaluable here.
    Learned {
        #[serde(default)]
        model: String,
    },
}

impl AttributeFunction {
    fn is_aggregate(&self) -> bool {
        matches!(self, AttributeFunction::Sum | AttributeFunction::Max)
    }

    fn tag(&self) -> &'static str {
        match self {
            AttributeFunction::Affine { .. } => "affine",
            AttributeFunction::Sum => "sum",
            AttributeFunction::Max => "max",
            AttributeFunction::Lookup { .. } => "lookup",
            AttributeFunction::Learned { .. } => "learned",
        }
    }

    fn apply_unary(&self, x: f64) -> f64 {
        match self {
            AttributeFunction::Affine { a, b } => a * x + b,
            AttributeFunction::Lookup { points } => interpolate(points, x),
            _ => unreachable!("aggregate applied as unary"),
        }
    }
}

fn interpolate(points: &[(f64, f64)], x: f64) -> f64 {
    let (first, last) = (points[0], points[points.len() - 1]);
    if x <= first.0 {
        return first.1;
    }
    if x >= last.0 {
        return last.1;
    }
    let i = points.partition_point(|p| p.0 <= x);
    let (x0, y0) = points[i - 1];
    let (x1, y1) = points[i];
    y0 + (y1 - y0) * (x - x0) / (x1 - x0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeDependency {
    pub from: AttributeId,
    pub to: AttributeId,
    pub function: AttributeFunction,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AttributeError {
    #[error("duplicate attribute `{0}`")]
    Duplicate(AttributeId),
    #[error("unknown attribute `{0}`")]
    Unknown(AttributeId),
    #[error("dependency {from} -> {to} would create a cycle")]
    Cycle { from: AttributeId, to: AttributeId },
    #[error("duplicate dependency {from} -> {to}")]
    DuplicateDependency { from: AttributeId, to: AttributeId },
    #[error("dependency {from} -> {to}: {reason}")]
    InvalidFunction {
        from: AttributeId,
        to: AttributeId,
        reason: String,
    },
    #[error("dependency {from} -> {to}: unit `{from_unit}` does not match `{to_unit}`")]
    UnitMismatch {
        from: AttributeId,
        to: AttributeId,
        from_unit: String,
        to_unit: String,
    },
    #[error("source attribute `{0}` has no value")]
    MissingValue(AttributeId),
    #[error("attribute `{0}` is a dependent and not overridable")]
    NotPerturbable(AttributeId),
    #[error("evaluation order is not a topological order of the attribute graph")]
    InvalidOrder,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Change {
    pub old: f64,
    pub new: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Constraint {
    pub attribute: AttributeId,
    pub comparator: Comparator,
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub constraint: Constraint,
    pub value: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AttributeGraph {
    nodes: BTreeMap<AttributeId, AttributeNode>,
    parents: BTreeMap<AttributeId, BTreeMap<AttributeId, AttributeFunction>>,
    children: BTreeMap<AttributeId, BTreeSet<AttributeId>>,
}

impl AttributeGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, id: &AttributeId) -> Option<&AttributeNode> {
        self.nodes.get(id)
    }

    pub fn nodes(&self) -> impl Iterator<Item = &AttributeNode> {
        self.nodes.values()
    }

    pub fn find(&self, entity: &EntityId, attribute: &str) -> Option<&AttributeNode> {
        self.nodes
            .values()
            .find(|n| &n.host_entity == entity && n.attribute_name == attribute)
    }

    pub fn dependencies(&self) -> impl Iterator<Item = AttributeDependency> + '_ {
        self.parents.iter().flat_map(|(to, ps)| {
            ps.iter().map(move |(from, f)| AttributeDependency {
                from: from.clone(),
                to: to.clone(),
                function: f.clone(),
            })
        })
    }

    pub fn is_source(&self, id: &AttributeId) -> bool {
        self.parents.get(id).is_none_or(BTreeMap::is_empty)
    }

    pub fn add_node(&mut self, node: AttributeNode) -> Result<(), AttributeError> {
        if self.nodes.contains_key(&node.id) {
            return Err(AttributeError::Duplicate(node.id));
        }
        self.parents.insert(node.id.clone(), BTreeMap::new());
        self.children.insert(node.id.clone(), BTreeSet::new());
        self.nodes.insert(node.id.clone(), node);
        Ok(())
    }

    /// Removes every attribute hosted on `entity`, with its dependencies.
    pub fn remove_entity(&mut self, entity: &EntityId) {
        let doomed: Vec<AttributeId> = self
            .nodes
            .values()
            .filter(|n| &n.host_entity == entity)
            .map(|n| n.id.clone())
            .collect();
        for id in doomed {
            self.nodes.remove(&id);
            for p in self.parents.remove(&id).unwrap_or_default().keys() {
                if let Some(c) = self.children.get_mut(p) {
                    c.remove(&id);
                }
            }
            for c in self.children.remove(&id).unwrap_or_default() {
                if let Some(ps) = self.parents.get_mut(&c) {
                    ps.remove(&id);
                }
            }
        }
    }

    /// Adds an edge; rejects cycles, mixed function forms and unit mismatches.
    pub fn add_dependency(&mut self, dep: AttributeDependency) -> Result<(), AttributeError> {
        let AttributeDependency { from, to, function } = dep;
        for id in [&from, &to] {
            if !self.nodes.contains_key(id) {
                return Err(AttributeError::Unknown(id.clone()));
            }
        }
        let invalid = |reason: String| AttributeError::InvalidFunction {
            from: from.clone(),
            to: to.clone(),
            reason,
        };
        validate_function(&function).map_err(invalid)?;
        if from == to || self.reaches(&to, &from) {
            return Err(AttributeError::Cycle { from, to });
        }
        let existing = &self.parents[&to];
        if existing.contains_key(&from) {
            return Err(AttributeError::DuplicateDependency { from, to });
        }
        if let Some(other) = existing.values().next() {
            if !function.is_aggregate() {
                return Err(invalid(format!(
                    "`{}` takes a single parent but `{to}` already has parents",
                    function.tag()
                )));
            }
            if other.tag() != function.tag() {
                return Err(invalid(format!(
                    "`{to}` combines its parents with `{}`, not `{}`",
                    other.tag(),
                    function.tag()
                )));
            }
        }
        if function.is_aggregate() {
            let (fu, tu) = (&self.nodes[&from].unit, &self.nodes[&to].unit);
            if fu != tu {
                return Err(AttributeError::UnitMismatch {
                    from_unit: fu.clone(),
                    to_unit: tu.clone(),
                    from,
                    to,
                });
            }
        }
        self.children.get_mut(&from).unwrap().insert(to.clone());
        self.parents.get_mut(&to).unwrap().insert(from, function);
        Ok(())
    }

    pub fn set_value(&mut self, id: &AttributeId, value: f64) -> Result<(), AttributeError> {
        let node = self
            .nodes
            .get_mut(id)
            .ok_or_else(|| AttributeError::Unknown(id.clone()))?;
        node.value = Some(value);
        Ok(())
    }

    fn reaches(&self, from: &AttributeId, target: &AttributeId) -> bool {
        let mut stack = vec![from];
        let mut seen = BTreeSet::new();
        while let Some(id) = stack.pop() {
            if id == target {
                return true;
            }
            if seen.insert(id) {
                stack.extend(self.children[id].iter());
            }
        }
        false
    }

    /// Every attribute downstream of `id`, including `id` itself.
    pub fn descendants(&self, id: &AttributeId) -> Result<BTreeSet<AttributeId>, AttributeError> {
        if !self.nodes.contains_key(id) {
            return Err(AttributeError::Unknown(id.clone()));
        }
        let mut seen = BTreeSet::new();
        let mut stack = vec![id.clone()];
        while let Some(cur) = stack.pop() {
            if seen.insert(cur.clone()) {
                stack.extend(self.children[&cur].iter().cloned());
            }
        }
        Ok(seen)
    }

    /// Kahn's algorithm, smallest id first among ready nodes.
    pub fn topological_order(&self) -> Result<Vec<AttributeId>, AttributeError> {
        let mut indegree: BTreeMap<&AttributeId, usize> =
            self.parents.iter().map(|(k, ps)| (k, ps.len())).collect();
        let mut ready: BTreeSet<&AttributeId> = indegree
            .iter()
            .filter(|(_, d)| **d == 0)
            .map(|(k, _)| *k)
            .collect();
        let mut order = Vec::with_capacity(self.nodes.len());
        while let Some(id) = ready.pop_first() {
            order.push(id.clone());
            for c in &self.children[id] {
                let d = indegree.get_mut(c).unwrap();
                *d -= 1;
                if *d == 0 {
                    ready.insert(c);
                }
            }
        }
        if order.len() != self.nodes.len() {
            let stuck = indegree.iter().find(|(_, d)| **d > 0).map(|(k, _)| (*k).clone());
            let to = stuck.expect("cycle leaves a node with positive indegree");
            let from = self.parents[&to].keys().next().unwrap().clone();
            return Err(AttributeError::Cycle { from, to });
        }
        Ok(order)
    }

    pub fn evaluate(&self) -> Result<BTreeMap<AttributeId, f64>, AttributeError> {
        let order = self.topological_order()?;
        self.evaluate_in_order(&order)
    }

    /// Evaluates along a caller-supplied order, which must be topological.
    pub fn evaluate_in_order(
        &self,
        order: &[AttributeId],
    ) -> Result<BTreeMap<AttributeId, f64>, AttributeError> {
        if order.len() != self.nodes.len() {
            return Err(AttributeError::InvalidOrder);
        }
        let mut values = BTreeMap::new();
        for id in order {
            if !self.nodes.contains_key(id) || values.contains_key(id) {
                return Err(AttributeError::InvalidOrder);
            }
            let v = self.compute(id, &values, None)?;
            values.insert(id.clone(), v);
        }
        Ok(values)
    }

    fn compute(
        &self,
        id: &AttributeId,
        values: &BTreeMap<AttributeId, f64>,
        forced: Option<(&AttributeId, f64)>,
    ) -> Result<f64, AttributeError> {
        if let Some((fid, fv)) = forced {
            if fid == id {
                return Ok(fv);
            }
        }
        let parents = &self.parents[id];
        let Some(first) = parents.values().next() else {
            return self.nodes[id]
                .value
                .ok_or_else(|| AttributeError::MissingValue(id.clone()));
        };
        let mut inputs = Vec::with_capacity(parents.len());
        for p in parents.keys() {
            inputs.push(*values.get(p).ok_or(AttributeError::InvalidOrder)?);
        }
        Ok(match first {
            AttributeFunction::Sum => inputs.iter().sum(),
            AttributeFunction::Max => inputs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            unary => unary.apply_unary(inputs[0]),
        })
    }

    /// Shifts `source` by `delta` and reports every attribute whose value moves
    /// by more than [`CHANGE_TOLERANCE`].
    pub fn propagate_perturbation(
        &self,
        source: &AttributeId,
        delta: f64,
    ) -> Result<BTreeMap<AttributeId, Change>, AttributeError> {
        if !self.nodes.contains_key(source) {
            return Err(AttributeError::Unknown(source.clone()));
        }
        if !self.is_source(source) && !self.nodes[source].overridable {
            return Err(AttributeError::NotPerturbable(source.clone()));
        }
        let order = self.topological_order()?;
        let before = self.evaluate_in_order(&order)?;
        let affected = self.descendants(source)?;
        let forced_value = before[source] + delta;
        let mut after = before.clone();
        for id in order.iter().filter(|id| affected.contains(*id)) {
            let v = self.compute(id, &after, Some((source, forced_value)))?;
            after.insert(id.clone(), v);
        }
        Ok(affected
            .into_iter()
            .filter_map(|id| {
                let (old, new) = (before[&id], after[&id]);
                ((new - old).abs() > CHANGE_TOLERANCE).then_some((id, Change { old, new }))
            })
            .collect())
    }

    /// Constraints whose current value fails `value <comparator> bound`.
    pub fn check_constraints(&self, constraints: &[Constraint]) -> Result<Vec<Violation>, AttributeError> {
        for c in constraints {
            if !self.nodes.contains_key(&c.attribute) {
                return Err(AttributeError::Unknown(c.attribute.clone()));
            }
        }
        if constraints.is_empty() {
            return Ok(Vec::new());
        }
        let values = self.evaluate()?;
        Ok(constraints
            .iter()
            .filter_map(|c| {
                let value = values[&c.attribute];
                (!c.comparator.holds(value, c.bound)).then(|| Violation {
                    constraint: c.clone(),
                    value,
                })
            })
            .collect())
    }
}

fn validate_function(f: &AttributeFunction) -> Result<(), String> {
    match f {
        AttributeFunction::Affine { a, b } => {
            if !a.is_finite() || !b.is_finite() {
                return Err("affine coefficients must be finite".into());
            }
        }
        AttributeFunction::Lookup { points } => {
            if points.len() < 2 {
                return Err("lookup table needs at least two points".into());
            }
            if points.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
                return Err("lookup points must be finite".into());
            }
            if points.windows(2).any(|w| w[1].0 <= w[0].0) {
                return Err("lookup x values must be strictly increasing".into());
            }
            let rising = points.windows(2).all(|w| w[1].1 >= w[0].1);
            let falling = points.windows(2).all(|w| w[1].1 <= w[0].1);
            if !rising && !falling {
                return Err("lookup table must be monotone".into());
            }
        }
        AttributeFunction::Learned { .. } => {
            return Err("learned functions are not supported".into());
        }
        AttributeFunction::Sum | AttributeFunction::Max => {}
    }
    Ok(())
}
