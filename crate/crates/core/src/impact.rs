//! Impact analysis for a localized root cause: impacted entities, blast
//! radius, ownership and remediation alignment.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::causality::{CausalityError, CausalityGraph, CauseId, Hop};
use crate::knowledge_base::Codebook;
use crate::topology::{EntityGraph, EntityId, RelationKind};

/// Relations that make up an entity's hosting stack.
pub const HOSTING_RELATIONS: [RelationKind; 2] = [RelationKind::Layer, RelationKind::Comp];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ImpactError {
    #[error(transparent)]
    Causality(#[from] CausalityError),
    #[error("unknown entity `{0}`")]
    UnknownEntity(EntityId),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlastRadius {
    pub cause: CauseId,
    pub host: EntityId,
    pub direct_entities: BTreeSet<EntityId>,
    pub transitive_entities: BTreeSet<EntityId>,
    /// Fewest-hop rule chain from the cause host to each transitive entity.
    pub paths: BTreeMap<EntityId, Vec<Hop>>,
    pub impacted_teams: BTreeSet<String>,
    pub owners: BTreeMap<EntityId, String>,
    /// The host plus everything under it via layer/comp relations.
    pub hosting_stack: BTreeSet<EntityId>,
    /// Set when propagation hit the depth limit.
    pub truncated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemediationVerdict {
    pub action_target: EntityId,
    pub aligned: bool,
    pub rationale: String,
    /// For misaligned targets inside the blast radius: the propagation path
    /// from the cause host to the target.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub downstream_path: Vec<Hop>,
}

/// Hosts of every symptom in `effects(cause)`, plus the cause's own host.
pub fn impacted_entities(cg: &CausalityGraph, cause: &CauseId) -> Result<BTreeSet<EntityId>, CausalityError> {
    let instance = cg
        .cause(cause)
        .ok_or_else(|| CausalityError::UnknownCause(cause.clone()))?;
    let mut out = BTreeSet::from([instance.host_entity.clone()]);
    for symptom in cg.effects(cause)? {
        if let Some(s) = cg.symptom(&symptom) {
            out.insert(s.host_entity.clone());
        }
    }
    Ok(out)
}

type State = (EntityId, String);

// Ordering key used to pick between equal-length paths.
fn path_key(path: &[Hop]) -> Vec<(&EntityId, &str)> {
    path.iter().map(|h| (&h.to, h.rule_id.as_str())).collect()
}

pub fn blast_radius(
    topology: &EntityGraph,
    cg: &CausalityGraph,
    codebook: &Codebook,
    cause: &CauseId,
) -> Result<BlastRadius, ImpactError> {
    let instance = cg
        .cause(cause)
        .ok_or_else(|| CausalityError::UnknownCause(cause.clone()))?;
    let host = instance.host_entity.clone();
    let direct_entities = impacted_entities(cg, cause)?;
    let max_depth = cg.options().max_depth;

    // Layered breadth-first expansion from the cause's local symptoms. The
    // first layer that reaches a state fixes its path; within a layer the
    // smallest path key wins.
    let mut paths: BTreeMap<State, Vec<Hop>> = BTreeMap::new();
    let host_type = topology.entity(&host).map(|e| e.entity_type.as_str());
    if let Some(def) = codebook
        .root_causes()
        .iter()
        .find(|d| d.name == instance.cause_name && Some(d.applies_to.as_str()) == host_type)
    {
        for local in &def.local_symptoms {
            paths.insert((host.clone(), local.symptom.clone()), Vec::new());
        }
    }
    let mut frontier: Vec<State> = paths.keys().cloned().collect();
    let mut truncated = false;
    for depth in 0..=max_depth {
        if frontier.is_empty() {
            break;
        }
        let mut layer: BTreeMap<State, Vec<Hop>> = BTreeMap::new();
        for state in &frontier {
            let base = &paths[state];
            for (hop, next) in crate::causality::expand(topology, codebook, &state.0, &state.1) {
                if paths.contains_key(&next) {
                    continue;
                }
                let mut candidate = base.clone();
                candidate.push(hop);
                let better = layer
                    .get(&next)
                    .is_none_or(|cur| path_key(&candidate) < path_key(cur));
                if better {
                    layer.insert(next, candidate);
                }
            }
        }
        if depth == max_depth {
            truncated = !layer.is_empty();
            break;
        }
        frontier = layer.keys().cloned().collect();
        paths.extend(layer);
    }

    let mut entity_paths: BTreeMap<EntityId, Vec<Hop>> = BTreeMap::new();
    entity_paths.insert(host.clone(), Vec::new());
    for ((entity, _), path) in &paths {
        let better = entity_paths.get(entity).is_none_or(|cur| {
            (path.len(), path_key(path)) < (cur.len(), path_key(cur))
        });
        if better {
            entity_paths.insert(entity.clone(), path.clone());
        }
    }
    // Entities that are in the causality closure but not reachable on the
    // current topology (stale graph) still need a path; fall back to the
    // stored derivation.
    for symptom in cg.effects(cause)? {
        let Some(s) = cg.symptom(&symptom) else { continue };
        if !entity_paths.contains_key(&s.host_entity) {
            let edge = cg.edge(cause, &symptom).expect("effect has an edge");
            entity_paths.insert(s.host_entity.clone(), edge.derivation.clone());
        }
    }

    let transitive_entities: BTreeSet<EntityId> = entity_paths.keys().cloned().collect();
    let owners: BTreeMap<EntityId, String> = transitive_entities
        .iter()
        .filter_map(|id| {
            let team = topology.entity(id)?.owner_team.clone()?;
            Some((id.clone(), team))
        })
        .collect();
    let impacted_teams = owners.values().cloned().collect();
    let hosting_stack = topology.reachable_via(&host, &HOSTING_RELATIONS);

    Ok(BlastRadius {
        cause: cause.clone(),
        host,
        direct_entities,
        transitive_entities,
        paths: entity_paths,
        impacted_teams,
        owners,
        hosting_stack,
        truncated: truncated || cg.is_truncated(cause),
    })
}

/// True iff some directly impacted entity is owned by `team`.
pub fn ownership_check(br: &BlastRadius, team: &str) -> bool {
    br.direct_entities
        .iter()
        .any(|id| br.owners.get(id).is_some_and(|t| t == team))
}

/// Aligned iff `target` is the cause host or sits in its layer/comp stack.
pub fn remediation_alignment(
    br: &BlastRadius,
    topology: &EntityGraph,
    target: &EntityId,
) -> Result<RemediationVerdict, ImpactError> {
    if !topology.contains(target) {
        return Err(ImpactError::UnknownEntity(target.clone()));
    }
    let stack = topology.reachable_via(&br.host, &HOSTING_RELATIONS);
    if target == &br.host {
        return Ok(RemediationVerdict {
            action_target: target.clone(),
            aligned: true,
            rationale: format!("targets `{}`, the entity hosting `{}`", br.host, br.cause),
            downstream_path: Vec::new(),
        });
    }
    if stack.contains(target) {
        return Ok(RemediationVerdict {
            action_target: target.clone(),
            aligned: true,
            rationale: format!(
                "`{target}` is part of the hosting stack of `{}`, which hosts `{}`",
                br.host, br.cause
            ),
            downstream_path: Vec::new(),
        });
    }
    let (rationale, downstream_path) = match br.paths.get(target) {
        Some(path) if !path.is_empty() => {
            let chain: Vec<String> = std::iter::once(br.host.to_string())
                .chain(path.iter().map(|h| h.to.to_string()))
                .collect();
            let via: Vec<String> = path
                .iter()
                .map(|h| format!("{} ({})", h.relation, h.rule_id))
                .collect();
            (
                format!(
                    "`{target}` is downstream of the failure source: {} via {}; acting on it may suppress symptoms without resolving `{}`",
                    chain.join(" -> "),
                    via.join(", "),
                    br.cause
                ),
                path.clone(),
            )
        }
        _ => (
            format!(
                "`{target}` is neither `{}` nor in its hosting stack and is not affected by `{}`",
                br.host, br.cause
            ),
            Vec::new(),
        ),
    };
    Ok(RemediationVerdict {
        action_target: target.clone(),
        aligned: false,
        rationale,
        downstream_path,
    })
}
