//! Environment-specific causality graph.
//!
//! Root causes and symptoms are instantiated per entity from the codebook.
//! Multi-hop symptom propagation is compiled into direct cause→symptom edges,
//! so the graph is bipartite. Each edge keeps the derivation that produced it:
//! the local symptom it started from, that symptom's probability, and the
//! rule hops taken across the topology. The edge probability is exactly
//! `local_probability * a1 * a2 * ...` multiplied left to right.
//!
//! When several derivations reach the same (cause, symptom) pair within the
//! hop limit, the one with the highest probability wins; ties go to fewer hops
//! and then to the lexicographically smaller derivation.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::knowledge_base::{Activation, Codebook, Traversal};
use crate::topology::{EntityGraph, EntityId, Relation};

pub const DEFAULT_MAX_DEPTH: usize = 8;

macro_rules! instance_id {
    ($name:ident) => {
        #[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(String);

        impl $name {
            /// `<definition name>@<entity id>`
            pub fn new(def_name: &str, host: &EntityId) -> Self {
                Self(format!("{}@{}", def_name, host))
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                Self(s.to_owned())
            }
        }

        impl From<String> for $name {
            fn from(s: String) -> Self {
                Self(s)
            }
        }
    };
}

instance_id!(CauseId);
instance_id!(SymptomId);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RootCauseInstance {
    pub id: CauseId,
    pub cause_name: String,
    pub host_entity: EntityId,
    pub prior: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymptomInstance {
    pub id: SymptomId,
    pub symptom_name: String,
    pub host_entity: EntityId,
    pub activation: Activation,
}

/// One rule application across one topology relation.
#[derive(Debug, Clone, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct Hop {
    pub rule_id: String,
    pub relation: Relation,
    pub from: EntityId,
    pub to: EntityId,
    pub attenuation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CausalEdge {
    pub cause: CauseId,
    pub symptom: SymptomId,
    pub probability: f64,
    /// Local symptom of the cause the derivation starts from.
    pub origin: SymptomId,
    pub local_probability: f64,
    pub derivation: Vec<Hop>,
}

impl CausalEdge {
    /// Recomputes the probability from the stored derivation, in the same
    /// multiplication order used during instantiation.
    pub fn derived_probability(&self) -> f64 {
        self.derivation
            .iter()
            .fold(self.local_probability, |p, hop| p * hop.attenuation)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CausalityError {
    #[error("entity `{entity}` has type `{entity_type}` which the codebook does not declare")]
    UndeclaredType {
        entity: EntityId,
        entity_type: String,
    },
    #[error("unknown root cause `{0}`")]
    UnknownCause(CauseId),
    #[error("unknown symptom instance `{0}`")]
    UnknownSymptom(SymptomId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InstantiateOptions {
    pub max_depth: usize,
}

impl Default for InstantiateOptions {
    fn default() -> Self {
        Self {
            max_depth: DEFAULT_MAX_DEPTH,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CausalityGraph {
    causes: BTreeMap<CauseId, RootCauseInstance>,
    symptoms: BTreeMap<SymptomId, SymptomInstance>,
    edges: BTreeMap<CauseId, BTreeMap<SymptomId, CausalEdge>>,
    causes_of: BTreeMap<SymptomId, BTreeSet<CauseId>>,
    symptoms_on: BTreeMap<EntityId, BTreeSet<SymptomId>>,
    truncated: BTreeSet<CauseId>,
    topology_revision: u64,
    options: InstantiateOptions,
    source_topology: EntityGraph,
    source_codebook: Codebook,
}

/// A (entity, symptom name) pair visited while propagating.
type State = (EntityId, String);

#[derive(Debug, Clone)]
struct Derivation {
    probability: f64,
    origin: String,
    local_probability: f64,
    hops: Vec<Hop>,
}

impl Derivation {
    fn beats(&self, other: &Derivation) -> bool {
        if self.probability != other.probability {
            return self.probability > other.probability;
        }
        if self.hops.len() != other.hops.len() {
            return self.hops.len() < other.hops.len();
        }
        let key = |d: &Derivation| {
            (
                d.origin.clone(),
                d.hops
                    .iter()
                    .map(|h| (h.rule_id.clone(), h.relation.clone()))
                    .collect::<Vec<_>>(),
            )
        };
        key(self) < key(other)
    }
}

/// One-hop rule expansion from a symptom on an entity. Yields the hop and the
/// reached state, in rule declaration order then neighbor id order. A rule
/// only fires when the neighbor's type declares the target symptom.
pub(crate) fn expand<'a>(
    topology: &'a EntityGraph,
    codebook: &'a Codebook,
    entity: &'a EntityId,
    symptom: &'a str,
) -> impl Iterator<Item = (Hop, State)> + 'a {
    codebook.rules_from(symptom).flat_map(move |rule| {
        let edges: Vec<(Relation, EntityId)> = match rule.traversal {
            Traversal::Forward => topology
                .out_edges(entity)
                .filter(|(k, _)| *k == rule.over_relation)
                .map(|(k, t)| (Relation::new(entity.clone(), t.clone(), *k), t.clone()))
                .collect(),
            Traversal::Reverse => topology
                .in_edges(entity)
                .filter(|(k, _)| *k == rule.over_relation)
                .map(|(k, s)| (Relation::new(s.clone(), entity.clone(), *k), s.clone()))
                .collect(),
        };
        edges.into_iter().filter_map(move |(relation, next)| {
            let next_type = &topology.entity(&next)?.entity_type;
            codebook.symptom_def(&rule.to_symptom, next_type)?;
            let hop = Hop {
                rule_id: rule.rule_id.clone(),
                relation,
                from: entity.clone(),
                to: next.clone(),
                attenuation: rule.attenuation,
            };
            Some((hop, (next, rule.to_symptom.clone())))
        })
    })
}

/// Best derivation per reachable state for one cause, plus whether the depth
/// limit cut off further improvements.
fn propagate_cause(
    topology: &EntityGraph,
    codebook: &Codebook,
    host: &EntityId,
    local: &[(String, f64)],
    max_depth: usize,
) -> (BTreeMap<State, Derivation>, bool) {
    let mut best: BTreeMap<State, Derivation> = BTreeMap::new();
    for (symptom, p) in local {
        let state = (host.clone(), symptom.clone());
        let candidate = Derivation {
            probability: *p,
            origin: symptom.clone(),
            local_probability: *p,
            hops: Vec::new(),
        };
        if best.get(&state).is_none_or(|cur| candidate.beats(cur)) {
            best.insert(state, candidate);
        }
    }

    let mut frontier: BTreeSet<State> = best.keys().cloned().collect();
    let mut layer = 0;
    while !frontier.is_empty() {
        // Values as of the end of the previous layer, so a layer only extends
        // derivations by exactly one hop.
        let snapshot: Vec<(State, Derivation)> = frontier
            .iter()
            .map(|s| (s.clone(), best[s].clone()))
            .collect();
        if layer == max_depth {
            let truncated = snapshot.iter().any(|((entity, symptom), from)| {
                expand(topology, codebook, entity, symptom).any(|(hop, next)| {
                    let candidate = extend(from, hop);
                    best.get(&next).is_none_or(|cur| candidate.beats(cur))
                })
            });
            return (best, truncated);
        }
        let mut improved = BTreeSet::new();
        for ((entity, symptom), from) in &snapshot {
            for (hop, next) in expand(topology, codebook, entity, symptom) {
                let candidate = extend(from, hop);
                if best.get(&next).is_none_or(|cur| candidate.beats(cur)) {
                    best.insert(next.clone(), candidate);
                    improved.insert(next);
                }
            }
        }
        frontier = improved;
        layer += 1;
    }
    (best, false)
}

fn extend(from: &Derivation, hop: Hop) -> Derivation {
    let mut hops = from.hops.clone();
    let probability = from.probability * hop.attenuation;
    hops.push(hop);
    Derivation {
        probability,
        origin: from.origin.clone(),
        local_probability: from.local_probability,
        hops,
    }
}

pub fn instantiate(
    topology: &EntityGraph,
    codebook: &Codebook,
) -> Result<CausalityGraph, CausalityError> {
    CausalityGraph::instantiate(topology, codebook, InstantiateOptions::default())
}

pub fn refresh(
    graph: &CausalityGraph,
    topology: &EntityGraph,
    codebook: &Codebook,
) -> Result<CausalityGraph, CausalityError> {
    graph.refresh(topology, codebook)
}

impl CausalityGraph {
    pub fn instantiate(
        topology: &EntityGraph,
        codebook: &Codebook,
        options: InstantiateOptions,
    ) -> Result<Self, CausalityError> {
        check_types(topology, codebook)?;
        let mut graph = CausalityGraph {
            causes: BTreeMap::new(),
            symptoms: BTreeMap::new(),
            edges: BTreeMap::new(),
            causes_of: BTreeMap::new(),
            symptoms_on: BTreeMap::new(),
            truncated: BTreeSet::new(),
            topology_revision: topology.revision(),
            options,
            source_topology: topology.clone(),
            source_codebook: codebook.clone(),
        };
        let all: Vec<EntityId> = topology.entity_ids().cloned().collect();
        for id in &all {
            graph.add_instances(topology, codebook, id);
        }
        for id in &all {
            graph.build_cause_edges(topology, codebook, id);
        }
        graph.rebuild_indexes();
        Ok(graph)
    }

    /// Brings the graph in line with `topology`. Only causes whose host lies
    /// within the hop limit of a changed entity or relation are recomputed;
    /// the result is identical to a full instantiation.
    pub fn refresh(
        &self,
        topology: &EntityGraph,
        codebook: &Codebook,
    ) -> Result<Self, CausalityError> {
        if *codebook != self.source_codebook {
            return Self::instantiate(topology, codebook, self.options);
        }
        check_types(topology, codebook)?;
        let old = &self.source_topology;

        let mut changed_entities = BTreeSet::new();
        for id in old.entity_ids().chain(topology.entity_ids()) {
            let before = old.entity(id).map(|e| &e.entity_type);
            let after = topology.entity(id).map(|e| &e.entity_type);
            if before != after {
                changed_entities.insert(id.clone());
            }
        }
        let old_relations: BTreeSet<Relation> = old.relations().collect();
        let new_relations: BTreeSet<Relation> = topology.relations().collect();
        let mut seeds = changed_entities.clone();
        for r in old_relations.symmetric_difference(&new_relations) {
            seeds.insert(r.source.clone());
            seeds.insert(r.target.clone());
        }

        let mut next = self.clone();
        next.topology_revision = topology.revision();
        next.source_topology = topology.clone();
        if seeds.is_empty() {
            return Ok(next);
        }

        let radius = self.options.max_depth;
        let mut affected = undirected_ball(old, &seeds, radius);
        affected.extend(undirected_ball(topology, &seeds, radius));

        for id in &changed_entities {
            next.remove_instances(id);
            if topology.contains(id) {
                next.add_instances(topology, codebook, id);
            }
        }
        for id in &affected {
            let stale: Vec<CauseId> = next
                .causes
                .values()
                .filter(|c| &c.host_entity == id)
                .map(|c| c.id.clone())
                .collect();
            for cause in stale {
                next.edges.remove(&cause);
                next.truncated.remove(&cause);
            }
            if topology.contains(id) {
                next.build_cause_edges(topology, codebook, id);
            }
        }
        next.rebuild_indexes();
        Ok(next)
    }

    fn add_instances(&mut self, topology: &EntityGraph, codebook: &Codebook, id: &EntityId) {
        let entity_type = &topology.entity(id).expect("entity exists").entity_type;
        for def in codebook
            .causes_for_type(entity_type)
            .expect("types checked before instantiation")
        {
            let cause = RootCauseInstance {
                id: CauseId::new(&def.name, id),
                cause_name: def.name.clone(),
                host_entity: id.clone(),
                prior: def.prior,
            };
            self.causes.insert(cause.id.clone(), cause);
        }
        for def in codebook.symptoms_for_type(entity_type) {
            let symptom = SymptomInstance {
                id: SymptomId::new(&def.name, id),
                symptom_name: def.name.clone(),
                host_entity: id.clone(),
                activation: def.activation.clone(),
            };
            self.symptoms.insert(symptom.id.clone(), symptom);
        }
    }

    fn remove_instances(&mut self, id: &EntityId) {
        self.causes.retain(|_, c| &c.host_entity != id);
        self.symptoms.retain(|_, s| &s.host_entity != id);
        self.edges.retain(|cause, _| self.causes.contains_key(cause));
        self.truncated.retain(|cause| self.causes.contains_key(cause));
    }

    fn build_cause_edges(&mut self, topology: &EntityGraph, codebook: &Codebook, host: &EntityId) {
        let entity_type = &topology.entity(host).expect("entity exists").entity_type;
        for def in codebook
            .causes_for_type(entity_type)
            .expect("types checked before instantiation")
        {
            let cause_id = CauseId::new(&def.name, host);
            let local: Vec<(String, f64)> = def
                .local_symptoms
                .iter()
                .map(|l| (l.symptom.clone(), l.probability))
                .collect();
            let (reached, truncated) =
                propagate_cause(topology, codebook, host, &local, self.options.max_depth);
            let edges = reached
                .into_iter()
                .map(|((entity, symptom), d)| {
                    let symptom_id = SymptomId::new(&symptom, &entity);
                    let edge = CausalEdge {
                        cause: cause_id.clone(),
                        symptom: symptom_id.clone(),
                        probability: d.probability,
                        origin: SymptomId::new(&d.origin, host),
                        local_probability: d.local_probability,
                        derivation: d.hops,
                    };
                    (symptom_id, edge)
                })
                .collect();
            if truncated {
                self.truncated.insert(cause_id.clone());
            }
            self.edges.insert(cause_id, edges);
        }
    }

    fn rebuild_indexes(&mut self) {
        self.causes_of.clear();
        for (cause, targets) in &self.edges {
            for symptom in targets.keys() {
                self.causes_of
                    .entry(symptom.clone())
                    .or_default()
                    .insert(cause.clone());
            }
        }
        self.symptoms_on.clear();
        for s in self.symptoms.values() {
            self.symptoms_on
                .entry(s.host_entity.clone())
                .or_default()
                .insert(s.id.clone());
        }
    }

    pub fn topology_revision(&self) -> u64 {
        self.topology_revision
    }

    pub fn options(&self) -> InstantiateOptions {
        self.options
    }

    pub fn causes(&self) -> impl Iterator<Item = &RootCauseInstance> {
        self.causes.values()
    }

    pub fn symptoms(&self) -> impl Iterator<Item = &SymptomInstance> {
        self.symptoms.values()
    }

    pub fn cause(&self, id: &CauseId) -> Option<&RootCauseInstance> {
        self.causes.get(id)
    }

    pub fn symptom(&self, id: &SymptomId) -> Option<&SymptomInstance> {
        self.symptoms.get(id)
    }

    pub fn edges(&self) -> impl Iterator<Item = &CausalEdge> {
        self.edges.values().flat_map(|m| m.values())
    }

    pub fn edge_count(&self) -> usize {
        self.edges.values().map(BTreeMap::len).sum()
    }

    pub fn edge(&self, cause: &CauseId, symptom: &SymptomId) -> Option<&CausalEdge> {
        self.edges.get(cause)?.get(symptom)
    }

    /// Outgoing edges of a cause, keyed by symptom.
    pub fn edges_from(&self, cause: &CauseId) -> Result<&BTreeMap<SymptomId, CausalEdge>, CausalityError> {
        self.edges
            .get(cause)
            .ok_or_else(|| CausalityError::UnknownCause(cause.clone()))
    }

    /// Causes with an edge into `symptom`.
    pub fn causes_of(&self, symptom: &SymptomId) -> impl Iterator<Item = &CauseId> {
        self.causes_of.get(symptom).into_iter().flatten()
    }

    pub fn symptoms_on(&self, entity: &EntityId) -> impl Iterator<Item = &SymptomId> {
        self.symptoms_on.get(entity).into_iter().flatten()
    }

    pub fn truncated_causes(&self) -> &BTreeSet<CauseId> {
        &self.truncated
    }

    pub fn is_truncated(&self, cause: &CauseId) -> bool {
        self.truncated.contains(cause)
    }

    /// `effects(r)`: targets of every edge out of `cause`.
    pub fn effects(&self, cause: &CauseId) -> Result<BTreeSet<SymptomId>, CausalityError> {
        Ok(self.edges_from(cause)?.keys().cloned().collect())
    }

    pub fn dump(&self) -> CausalityDump {
        CausalityDump {
            topology_revision: self.topology_revision,
            max_depth: self.options.max_depth,
            causes: self.causes.values().cloned().collect(),
            symptoms: self.symptoms.values().cloned().collect(),
            edges: self.edges().cloned().collect(),
            truncated: self.truncated.iter().cloned().collect(),
        }
    }
}

/// Debug/audit export of a causality graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CausalityDump {
    pub topology_revision: u64,
    pub max_depth: usize,
    pub causes: Vec<RootCauseInstance>,
    pub symptoms: Vec<SymptomInstance>,
    pub edges: Vec<CausalEdge>,
    pub truncated: Vec<CauseId>,
}

fn check_types(topology: &EntityGraph, codebook: &Codebook) -> Result<(), CausalityError> {
    for e in topology.entities() {
        if !codebook.has_type(&e.entity_type) {
            return Err(CausalityError::UndeclaredType {
                entity: e.id.clone(),
                entity_type: e.entity_type.clone(),
            });
        }
    }
    Ok(())
}

fn undirected_ball(
    topology: &EntityGraph,
    seeds: &BTreeSet<EntityId>,
    radius: usize,
) -> BTreeSet<EntityId> {
    let mut seen: BTreeSet<EntityId> = seeds
        .iter()
        .filter(|s| topology.contains(s))
        .cloned()
        .collect();
    let mut queue: VecDeque<(EntityId, usize)> = seen.iter().map(|s| (s.clone(), 0)).collect();
    while let Some((id, d)) = queue.pop_front() {
        if d == radius {
            continue;
        }
        let next = topology
            .out_edges(&id)
            .chain(topology.in_edges(&id))
            .map(|(_, n)| n);
        for n in next {
            if seen.insert(n.clone()) {
                queue.push_back((n.clone(), d + 1));
            }
        }
    }
    seen
}
