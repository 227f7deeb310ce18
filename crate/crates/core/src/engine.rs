//! Versioned engine state.
//!
//! Readers take an `Arc<Snapshot>` and work on it without locks; writers are
//! serialized and publish a new snapshot per mutation. A request that binds a
//! snapshot therefore only ever sees one revision.

use std::sync::{Arc, Mutex, RwLock};

use thiserror::Error;

use crate::attributes::AttributeGraph;
use crate::causality::{CausalityError, CausalityGraph, InstantiateOptions};
use crate::environment::{Environment, EnvironmentError};
use crate::inference::{parse_observations, InferenceError, Observation, ObservationState};
use crate::knowledge_base::{Codebook, CodebookError};
use crate::topology::{Entity, EntityGraph, EntityId, Relation, TopologyError};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Codebook(#[from] CodebookError),
    #[error(transparent)]
    Environment(#[from] EnvironmentError),
    #[error(transparent)]
    Causality(#[from] CausalityError),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Inference(#[from] InferenceError),
}

/// Immutable view of everything a query needs.
#[derive(Debug, Clone)]
pub struct Snapshot {
    pub revision: u64,
    pub environment_name: String,
    pub topology: EntityGraph,
    pub codebook: Arc<Codebook>,
    pub causality: CausalityGraph,
    pub attributes: AttributeGraph,
    pub observations: ObservationState,
}

#[derive(Debug)]
pub struct Engine {
    current: RwLock<Arc<Snapshot>>,
    writer: Mutex<()>,
}

impl Engine {
    pub fn new(environment: Environment, codebook: Codebook) -> Result<Self, EngineError> {
        Self::with_options(environment, codebook, InstantiateOptions::default())
    }

    pub fn with_options(
        environment: Environment,
        codebook: Codebook,
        options: InstantiateOptions,
    ) -> Result<Self, EngineError> {
        let causality = CausalityGraph::instantiate(&environment.topology, &codebook, options)?;
        let snapshot = Snapshot {
            revision: 0,
            environment_name: environment.name,
            topology: environment.topology,
            codebook: Arc::new(codebook),
            causality,
            attributes: environment.attributes,
            observations: ObservationState::new(),
        };
        Ok(Self {
            current: RwLock::new(Arc::new(snapshot)),
            writer: Mutex::new(()),
        })
    }

    /// Parses a codebook and an environment document and builds the engine.
    pub fn from_documents(environment: &str, codebook: &str) -> Result<Self, EngineError> {
        let codebook = Codebook::from_json(codebook)?;
        let environment = Environment::from_json(environment, &codebook)?;
        Self::new(environment, codebook)
    }

    pub fn snapshot(&self) -> Arc<Snapshot> {
        self.current.read().unwrap_or_else(|e| e.into_inner()).clone()
    }

    pub fn revision(&self) -> u64 {
        self.snapshot().revision
    }

    // Applies `change` to a copy of the current snapshot and publishes it.
    // Nothing is published when `change` fails.
    fn update<F>(&self, change: F) -> Result<u64, EngineError>
    where
        F: FnOnce(&mut Snapshot) -> Result<(), EngineError>,
    {
        let _guard = self.writer.lock().unwrap_or_else(|e| e.into_inner());
        let mut next = (*self.snapshot()).clone();
        change(&mut next)?;
        next.revision += 1;
        let revision = next.revision;
        *self.current.write().unwrap_or_else(|e| e.into_inner()) = Arc::new(next);
        Ok(revision)
    }

    fn refresh_causality(s: &mut Snapshot) -> Result<(), EngineError> {
        s.causality = s.causality.refresh(&s.topology, &s.codebook)?;
        Ok(())
    }

    pub fn add_entity(&self, entity: Entity) -> Result<u64, EngineError> {
        self.update(|s| {
            if !s.codebook.has_type(&entity.entity_type) {
                return Err(CausalityError::UndeclaredType {
                    entity: entity.id.clone(),
                    entity_type: entity.entity_type.clone(),
                }
                .into());
            }
            s.topology.add_entity(entity)?;
            Self::refresh_causality(s)
        })
    }

    pub fn remove_entity(&self, id: &EntityId) -> Result<u64, EngineError> {
        self.update(|s| {
            s.topology.remove_entity(id)?;
            s.attributes.remove_entity(id);
            s.observations.remove_entity(id);
            Self::refresh_causality(s)
        })
    }

    pub fn add_relation(&self, relation: Relation) -> Result<u64, EngineError> {
        self.update(|s| {
            s.topology.add_relation(relation)?;
            Self::refresh_causality(s)
        })
    }

    pub fn remove_relation(&self, relation: &Relation) -> Result<u64, EngineError> {
        self.update(|s| {
            s.topology.remove_relation(relation)?;
            Self::refresh_causality(s)
        })
    }

    /// Validates and applies a batch of observations atomically.
    pub fn ingest(&self, observations: &[Observation]) -> Result<u64, EngineError> {
        self.update(|s| {
            s.observations
                .ingest(observations, &s.topology, &s.codebook)
                .map_err(EngineError::from)
        })
    }

    /// Ingests an NDJSON observation stream.
    pub fn ingest_ndjson(&self, text: &str) -> Result<u64, EngineError> {
        let observations = parse_observations(text)?;
        self.ingest(&observations)
    }

    /// Drops all observations.
    pub fn clear_observations(&self) -> Result<u64, EngineError> {
        self.update(|s| {
            s.observations = ObservationState::new();
            Ok(())
        })
    }
}
