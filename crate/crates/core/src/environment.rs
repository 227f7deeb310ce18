//! Environment description files (`schema: "env/1"`).
//!
//! An environment declares entities, relations, and the attribute nodes and
//! dependencies that live on those entities. Loading validates everything
//! against a codebook and reports the offending element's position.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attributes::{AttributeDependency, AttributeError, AttributeGraph, AttributeId, AttributeNode};
use crate::knowledge_base::Codebook;
use crate::topology::{Entity, EntityGraph, EntityId, Relation, TopologyError};

pub const ENVIRONMENT_SCHEMA: &str = "env/1";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EnvironmentError {
    #[error("environment parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("unsupported environment schema `{0}` (expected `env/1`)")]
    Schema(String),
    #[error("{at}: entity type `{entity_type}` is not declared in the codebook")]
    UnknownType { at: String, entity_type: String },
    #[error("{at}: relation endpoint `{entity}` is not a declared entity")]
    DanglingEndpoint { at: String, entity: EntityId },
    #[error("{at}: attribute `{attribute}` is not declared for type `{entity_type}`")]
    UndeclaredAttribute {
        at: String,
        attribute: String,
        entity_type: String,
    },
    #[error("{at}: {source}")]
    Topology {
        at: String,
        #[source]
        source: TopologyError,
    },
    #[error("{at}: {source}")]
    Attribute {
        at: String,
        #[source]
        source: AttributeError,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct EntityDoc {
    id: EntityId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    name: Option<String>,
    #[serde(rename = "type")]
    entity_type: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    team: Option<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    metadata: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct AttributeDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    id: Option<AttributeId>,
    entity: EntityId,
    name: String,
    #[serde(default)]
    unit: String,
    #[serde(default)]
    baseline: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    value: Option<f64>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    overridable: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EnvironmentDocument {
    schema: String,
    #[serde(default)]
    name: String,
    #[serde(default)]
    entities: Vec<EntityDoc>,
    #[serde(default)]
    relations: Vec<Relation>,
    #[serde(default)]
    attributes: Vec<AttributeDoc>,
    #[serde(default)]
    attribute_dependencies: Vec<AttributeDependency>,
}

/// A loaded environment: the topology plus its attribute graph.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Environment {
    pub name: String,
    pub topology: EntityGraph,
    pub attributes: AttributeGraph,
}

/// Parses and validates an environment document. The returned topology has
/// revision 0.
pub fn load_environment(text: &str, codebook: &Codebook) -> Result<Environment, EnvironmentError> {
    Environment::from_json(text, codebook)
}

impl Environment {
    pub fn from_json(text: &str, codebook: &Codebook) -> Result<Self, EnvironmentError> {
        let doc: EnvironmentDocument =
            serde_json::from_str(text).map_err(|e| EnvironmentError::Parse {
                line: e.line(),
                column: e.column(),
                message: e.to_string(),
            })?;
        if doc.schema != ENVIRONMENT_SCHEMA {
            return Err(EnvironmentError::Schema(doc.schema));
        }

        let mut topology = EntityGraph::new();
        for (i, e) in doc.entities.iter().enumerate() {
            let at = format!("entities[{i}] ({})", e.id);
            if !codebook.has_type(&e.entity_type) {
                return Err(EnvironmentError::UnknownType {
                    at,
                    entity_type: e.entity_type.clone(),
                });
            }
            let entity = Entity {
                id: e.id.clone(),
                name: e.name.clone().unwrap_or_else(|| e.id.to_string()),
                entity_type: e.entity_type.clone(),
                owner_team: e.team.clone(),
                metadata: e.metadata.clone(),
            };
            topology
                .add_entity(entity)
                .map_err(|source| EnvironmentError::Topology { at, source })?;
        }
        for (i, r) in doc.relations.iter().enumerate() {
            let at = format!("relations[{i}] ({r})");
            for end in [&r.source, &r.target] {
                if !topology.contains(end) {
                    return Err(EnvironmentError::DanglingEndpoint {
                        at,
                        entity: end.clone(),
                    });
                }
            }
            topology
                .add_relation(r.clone())
                .map_err(|source| EnvironmentError::Topology { at, source })?;
        }

        topology.reset_revision();

        let mut attributes = AttributeGraph::new();
        for (i, a) in doc.attributes.iter().enumerate() {
            let id = a
                .id
                .clone()
                .unwrap_or_else(|| AttributeId::for_entity(&a.entity, &a.name));
            let at = format!("attributes[{i}] ({id})");
            let Some(host) = topology.entity(&a.entity) else {
                return Err(EnvironmentError::Topology {
                    at,
                    source: TopologyError::UnknownEntity(a.entity.clone()),
                });
            };
            let declared = codebook
                .type_def(&host.entity_type)
                .is_some_and(|t| t.declares_attribute(&a.name));
            if !declared {
                return Err(EnvironmentError::UndeclaredAttribute {
                    at,
                    attribute: a.name.clone(),
                    entity_type: host.entity_type.clone(),
                });
            }
            attributes
                .add_node(AttributeNode {
                    id,
                    host_entity: a.entity.clone(),
                    attribute_name: a.name.clone(),
                    unit: a.unit.clone(),
                    baseline: a.baseline,
                    value: a.value,
                    overridable: a.overridable,
                })
                .map_err(|source| EnvironmentError::Attribute { at, source })?;
        }
        for (i, d) in doc.attribute_dependencies.iter().enumerate() {
            let at = format!("attribute_dependencies[{i}] ({} -> {})", d.from, d.to);
            attributes
                .add_dependency(d.clone())
                .map_err(|source| EnvironmentError::Attribute { at, source })?;
        }

        Ok(Environment {
            name: doc.name,
            topology,
            attributes,
        })
    }

    pub fn to_json(&self) -> String {
        let doc = EnvironmentDocument {
            schema: ENVIRONMENT_SCHEMA.to_owned(),
            name: self.name.clone(),
            entities: self
                .topology
                .entities()
                .map(|e| EntityDoc {
                    id: e.id.clone(),
                    name: Some(e.name.clone()),
                    entity_type: e.entity_type.clone(),
                    team: e.owner_team.clone(),
                    metadata: e.metadata.clone(),
                })
                .collect(),
            relations: self.topology.relations().collect(),
            attributes: self
                .attributes
                .nodes()
                .map(|n| AttributeDoc {
                    id: Some(n.id.clone()),
                    entity: n.host_entity.clone(),
                    name: n.attribute_name.clone(),
                    unit: n.unit.clone(),
                    baseline: n.baseline,
                    value: n.value,
                    overridable: n.overridable,
                })
                .collect(),
            attribute_dependencies: self.attributes.dependencies().collect(),
        };
        serde_json::to_string_pretty(&doc).expect("environment serializes")
    }
}
