//! Live entity/relation model of the managed environment.
//!
//! The graph stores typed entities and three kinds of directed relations:
//! `conn` (a caller calls a callee), `layer` (the depending entity runs atop
//! the supporting one) and `comp` (a container holds a component). Layer and
//! comp edges always point from the depending/containing entity toward the
//! supporting/contained one, e.g. `service -layer-> workload -comp-> pod`.
//!
//! Every mutation bumps [`EntityGraph::revision`]; reads never do.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Opaque unique entity identifier.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EntityId(String);

impl EntityId {
    pub fn new(id: impl Into<String>) -> Self {
        Self(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for EntityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for EntityId {
    fn from(s: &str) -> Self {
        Self(s.to_owned())
    }
}

impl From<String> for EntityId {
    fn from(s: String) -> Self {
        Self(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RelationKind {
    Conn,
    Layer,
    Comp,
}

impl RelationKind {
    pub const ALL: [RelationKind; 3] = [RelationKind::Conn, RelationKind::Layer, RelationKind::Comp];

    pub fn as_str(self) -> &'static str {
        match self {
            RelationKind::Conn => "conn",
            RelationKind::Layer => "layer",
            RelationKind::Comp => "comp",
        }
    }
}

impl fmt::Display for RelationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for RelationKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "conn" => Ok(RelationKind::Conn),
            "layer" => Ok(RelationKind::Layer),
            "comp" => Ok(RelationKind::Comp),
            other => Err(format!("unknown relation kind `{other}`")),
        }
    }
}

/// Edge direction relative to the queried entity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Out,
    In,
    Both,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Entity {
    pub id: EntityId,
    pub name: String,
    pub entity_type: String,
    pub owner_team: Option<String>,
    pub metadata: BTreeMap<String, String>,
}

impl Entity {
    pub fn new(id: impl Into<EntityId>, entity_type: impl Into<String>) -> Self {
        let id = id.into();
        Self {
            name: id.as_str().to_owned(),
            id,
            entity_type: entity_type.into(),
            owner_team: None,
            metadata: BTreeMap::new(),
        }
    }

    pub fn with_team(mut self, team: impl Into<String>) -> Self {
        self.owner_team = Some(team.into());
        self
    }

    pub fn with_metadata(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.metadata.insert(key.into(), value.into());
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Relation {
    pub source: EntityId,
    pub target: EntityId,
    pub kind: RelationKind,
}

impl Relation {
    pub fn new(source: impl Into<EntityId>, target: impl Into<EntityId>, kind: RelationKind) -> Self {
        Self {
            source: source.into(),
            target: target.into(),
            kind,
        }
    }
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} -{}-> {}", self.source, self.kind, self.target)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TopologyError {
    #[error("duplicate entity id `{0}`")]
    DuplicateEntity(EntityId),
    #[error("unknown entity `{0}`")]
    UnknownEntity(EntityId),
    #[error("duplicate relation {0}")]
    DuplicateRelation(Relation),
    #[error("unknown relation {0}")]
    UnknownRelation(Relation),
    #[error("self relation on `{0}`")]
    SelfRelation(EntityId),
}

/// Typed entities plus conn/layer/comp relations.
///
/// Adjacency is kept in both directions so that `neighbors` is a lookup.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EntityGraph {
    entities: BTreeMap<EntityId, Entity>,
    out_edges: BTreeMap<EntityId, BTreeSet<(RelationKind, EntityId)>>,
    in_edges: BTreeMap<EntityId, BTreeSet<(RelationKind, EntityId)>>,
    relation_count: usize,
    revision: u64,
}

impl EntityGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn revision(&self) -> u64 {
        self.revision
    }

    pub fn len(&self) -> usize {
        self.entities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entities.is_empty()
    }

    pub fn relation_count(&self) -> usize {
        self.relation_count
    }

    pub fn contains(&self, id: &EntityId) -> bool {
        self.entities.contains_key(id)
    }

    pub fn entity(&self, id: &EntityId) -> Option<&Entity> {
        self.entities.get(id)
    }

    pub fn entities(&self) -> impl Iterator<Item = &Entity> {
        self.entities.values()
    }

    pub fn entity_ids(&self) -> impl Iterator<Item = &EntityId> {
        self.entities.keys()
    }

    /// All relations, ordered by (source, kind, target).
    pub fn relations(&self) -> impl Iterator<Item = Relation> + '_ {
        self.out_edges.iter().flat_map(|(source, edges)| {
            edges
                .iter()
                .map(move |(kind, target)| Relation::new(source.clone(), target.clone(), *kind))
        })
    }

    pub fn has_relation(&self, relation: &Relation) -> bool {
        self.out_edges
            .get(&relation.source)
            .is_some_and(|edges| edges.contains(&(relation.kind, relation.target.clone())))
    }

    pub fn add_entity(&mut self, entity: Entity) -> Result<u64, TopologyError> {
        if self.entities.contains_key(&entity.id) {
            return Err(TopologyError::DuplicateEntity(entity.id));
        }
        self.out_edges.insert(entity.id.clone(), BTreeSet::new());
        self.in_edges.insert(entity.id.clone(), BTreeSet::new());
        self.entities.insert(entity.id.clone(), entity);
        Ok(self.bump())
    }

    /// Removes the entity and every relation incident to it.
    pub fn remove_entity(&mut self, id: &EntityId) -> Result<Entity, TopologyError> {
        let entity = self
            .entities
            .remove(id)
            .ok_or_else(|| TopologyError::UnknownEntity(id.clone()))?;
        let outgoing = self.out_edges.remove(id).unwrap_or_default();
        let incoming = self.in_edges.remove(id).unwrap_or_default();
        for (kind, target) in &outgoing {
            if let Some(edges) = self.in_edges.get_mut(target) {
                edges.remove(&(*kind, id.clone()));
            }
        }
        for (kind, source) in &incoming {
            if let Some(edges) = self.out_edges.get_mut(source) {
                edges.remove(&(*kind, id.clone()));
            }
        }
        self.relation_count -= outgoing.len() + incoming.len();
        self.bump();
        Ok(entity)
    }

    pub fn add_relation(&mut self, relation: Relation) -> Result<u64, TopologyError> {
        if relation.source == relation.target {
            return Err(TopologyError::SelfRelation(relation.source));
        }
        for end in [&relation.source, &relation.target] {
            if !self.entities.contains_key(end) {
                return Err(TopologyError::UnknownEntity(end.clone()));
            }
        }
        if self.has_relation(&relation) {
            return Err(TopologyError::DuplicateRelation(relation));
        }
        self.out_edges
            .get_mut(&relation.source)
            .expect("source adjacency exists")
            .insert((relation.kind, relation.target.clone()));
        self.in_edges
            .get_mut(&relation.target)
            .expect("target adjacency exists")
            .insert((relation.kind, relation.source.clone()));
        self.relation_count += 1;
        Ok(self.bump())
    }

    pub fn remove_relation(&mut self, relation: &Relation) -> Result<u64, TopologyError> {
        if !self.has_relation(relation) {
            return Err(TopologyError::UnknownRelation(relation.clone()));
        }
        if let Some(edges) = self.out_edges.get_mut(&relation.source) {
            edges.remove(&(relation.kind, relation.target.clone()));
        }
        if let Some(edges) = self.in_edges.get_mut(&relation.target) {
            edges.remove(&(relation.kind, relation.source.clone()));
        }
        self.relation_count -= 1;
        Ok(self.bump())
    }

    /// Entities one matching edge away from `id`. `kind = None` matches every kind.
    pub fn neighbors(
        &self,
        id: &EntityId,
        kind: Option<RelationKind>,
        direction: Direction,
    ) -> Result<BTreeSet<EntityId>, TopologyError> {
        if !self.entities.contains_key(id) {
            return Err(TopologyError::UnknownEntity(id.clone()));
        }
        let mut result = BTreeSet::new();
        let matches = |k: &RelationKind| kind.is_none_or(|want| want == *k);
        if matches!(direction, Direction::Out | Direction::Both) {
            result.extend(
                self.out_edges[id]
                    .iter()
                    .filter(|(k, _)| matches(k))
                    .map(|(_, e)| e.clone()),
            );
        }
        if matches!(direction, Direction::In | Direction::Both) {
            result.extend(
                self.in_edges[id]
                    .iter()
                    .filter(|(k, _)| matches(k))
                    .map(|(_, e)| e.clone()),
            );
        }
        Ok(result)
    }

    /// Outgoing edges of `id` as (kind, target) pairs. Empty for unknown ids.
    pub(crate) fn out_edges(&self, id: &EntityId) -> impl Iterator<Item = &(RelationKind, EntityId)> {
        self.out_edges.get(id).into_iter().flatten()
    }

    /// Incoming edges of `id` as (kind, source) pairs. Empty for unknown ids.
    pub(crate) fn in_edges(&self, id: &EntityId) -> impl Iterator<Item = &(RelationKind, EntityId)> {
        self.in_edges.get(id).into_iter().flatten()
    }

    /// Induced subgraph over `ids`. The view keeps the parent's revision.
    pub fn scope<'a, I>(&self, ids: I) -> Result<EntityGraph, TopologyError>
    where
        I: IntoIterator<Item = &'a EntityId>,
    {
        let mut keep = BTreeSet::new();
        for id in ids {
            if !self.entities.contains_key(id) {
                return Err(TopologyError::UnknownEntity(id.clone()));
            }
            keep.insert(id.clone());
        }
        let mut view = EntityGraph::new();
        for id in &keep {
            view.entities.insert(id.clone(), self.entities[id].clone());
            let outgoing: BTreeSet<_> = self.out_edges[id]
                .iter()
                .filter(|(_, t)| keep.contains(t))
                .cloned()
                .collect();
            let incoming: BTreeSet<_> = self.in_edges[id]
                .iter()
                .filter(|(_, s)| keep.contains(s))
                .cloned()
                .collect();
            view.relation_count += outgoing.len();
            view.out_edges.insert(id.clone(), outgoing);
            view.in_edges.insert(id.clone(), incoming);
        }
        view.revision = self.revision;
        Ok(view)
    }

    /// Entities reachable from `start` over outgoing edges of the given kinds,
    /// including `start` itself.
    pub fn reachable_via(&self, start: &EntityId, kinds: &[RelationKind]) -> BTreeSet<EntityId> {
        let mut seen = BTreeSet::new();
        if !self.contains(start) {
            return seen;
        }
        let mut stack = vec![start.clone()];
        seen.insert(start.clone());
        while let Some(current) = stack.pop() {
            for (kind, next) in self.out_edges(&current) {
                if kinds.contains(kind) && seen.insert(next.clone()) {
                    stack.push(next.clone());
                }
            }
        }
        seen
    }

    /// Freshly loaded graphs start at revision 0 regardless of build steps.
    pub(crate) fn reset_revision(&mut self) {
        self.revision = 0;
    }

    fn bump(&mut self) -> u64 {
        self.revision += 1;
        self.revision
    }
}
