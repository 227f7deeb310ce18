//! Symptom activation, health assessment and abductive root-cause ranking.
//!
//! A candidate cause `r` is scored as
//!
//! ```text
//! score(r) = P(r) * prod_{s in active} q(s, r)
//! q(s, r)  = P(s | r)  if the causality graph has an edge r -> s
//!          = leak      otherwise
//! ```
//!
//! accumulated in log space. Reported posteriors are the scores normalized
//! over the candidate set.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::causality::{CausalityGraph, CauseId, SymptomId};
use crate::knowledge_base::{Activation, Codebook};
use crate::topology::{EntityGraph, EntityId};

pub const DEFAULT_LEAK: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ObservationRecord", into = "ObservationRecord")]
pub struct Observation {
    pub tick: u64,
    pub entity: EntityId,
    pub kind: ObservationKind,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ObservationKind {
    Attribute { name: String, value: f64 },
    /// Direct symptom assertion; `active = false` clears an earlier one.
    Symptom { name: String, active: bool },
}

impl Observation {
    pub fn sample(tick: u64, entity: impl Into<EntityId>, attribute: impl Into<String>, value: f64) -> Self {
        Self {
            tick,
            entity: entity.into(),
            kind: ObservationKind::Attribute {
                name: attribute.into(),
                value,
            },
        }
    }

    pub fn event(tick: u64, entity: impl Into<EntityId>, symptom: impl Into<String>) -> Self {
        Self {
            tick,
            entity: entity.into(),
            kind: ObservationKind::Symptom {
                name: symptom.into(),
                active: true,
            },
        }
    }
}

/// Flat wire shape of one observation line.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ObservationRecord {
    tick: u64,
    entity: EntityId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    attribute: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    value: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    symptom: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    active: Option<bool>,
}

impl TryFrom<ObservationRecord> for Observation {
    type Error = String;

    fn try_from(r: ObservationRecord) -> Result<Self, Self::Error> {
        let kind = match (r.attribute, r.value, r.symptom, r.active) {
            (Some(name), Some(value), None, None) => {
                if !value.is_finite() {
                    return Err(format!("non-finite value for `{name}`"));
                }
                ObservationKind::Attribute { name, value }
            }
            (None, None, Some(name), active) => ObservationKind::Symptom {
                name,
                active: active.unwrap_or(true),
            },
            _ => {
                return Err(
                    "observation needs either `attribute` and `value` or `symptom`".to_owned(),
                )
            }
        };
        Ok(Observation {
            tick: r.tick,
            entity: r.entity,
            kind,
        })
    }
}

impl From<Observation> for ObservationRecord {
    fn from(o: Observation) -> Self {
        let mut r = ObservationRecord {
            tick: o.tick,
            entity: o.entity,
            attribute: None,
            value: None,
            symptom: None,
            active: None,
        };
        match o.kind {
            ObservationKind::Attribute { name, value } => {
                r.attribute = Some(name);
                r.value = Some(value);
            }
            ObservationKind::Symptom { name, active } => {
                r.symptom = Some(name);
                r.active = (!active).then_some(false);
            }
        }
        r
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum InferenceError {
    #[error("observation line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("observation references unknown entity `{0}`")]
    UnknownEntity(EntityId),
    #[error("attribute `{attribute}` is not declared for `{entity}`")]
    UnknownAttribute { entity: EntityId, attribute: String },
    #[error("symptom `{symptom}` is not declared for `{entity}`")]
    UnknownSymptom { entity: EntityId, symptom: String },
    #[error("unknown root cause `{0}`")]
    UnknownCause(CauseId),
}

/// Parses newline-delimited observation records. Blank lines are skipped.
pub fn parse_observations(text: &str) -> Result<Vec<Observation>, InferenceError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| InferenceError::Parse {
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

pub fn render_observations(observations: &[Observation]) -> String {
    let mut out = String::new();
    for o in observations {
        out.push_str(&serde_json::to_string(o).expect("observation serializes"));
        out.push('\n');
    }
    out
}

pub fn validate_observation(
    observation: &Observation,
    topology: &EntityGraph,
    codebook: &Codebook,
) -> Result<(), InferenceError> {
    let entity = topology
        .entity(&observation.entity)
        .ok_or_else(|| InferenceError::UnknownEntity(observation.entity.clone()))?;
    match &observation.kind {
        ObservationKind::Attribute { name, .. } => {
            let declared = codebook
                .type_def(&entity.entity_type)
                .is_some_and(|t| t.declares_attribute(name));
            if !declared {
                return Err(InferenceError::UnknownAttribute {
                    entity: observation.entity.clone(),
                    attribute: name.clone(),
                });
            }
        }
        ObservationKind::Symptom { name, .. } => {
            if codebook.symptom_def(name, &entity.entity_type).is_none() {
                return Err(InferenceError::UnknownSymptom {
                    entity: observation.entity.clone(),
                    symptom: name.clone(),
                });
            }
        }
    }
    Ok(())
}

/// Latest attribute sample and symptom event per entity. A record replaces an
/// earlier one when its tick is greater than or equal to the stored tick.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ObservationState {
    samples: BTreeMap<(EntityId, String), (u64, f64)>,
    events: BTreeMap<(EntityId, String), (u64, bool)>,
    as_of: u64,
}

impl ObservationState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Validates every observation, then folds them in order.
    pub fn from_observations(
        observations: &[Observation],
        topology: &EntityGraph,
        codebook: &Codebook,
    ) -> Result<Self, InferenceError> {
        let mut state = Self::new();
        state.ingest(observations, topology, codebook)?;
        Ok(state)
    }

    /// All-or-nothing: nothing is applied if any observation is invalid.
    pub fn ingest(
        &mut self,
        observations: &[Observation],
        topology: &EntityGraph,
        codebook: &Codebook,
    ) -> Result<(), InferenceError> {
        for o in observations {
            validate_observation(o, topology, codebook)?;
        }
        for o in observations {
            self.apply(o);
        }
        Ok(())
    }

    fn apply(&mut self, o: &Observation) {
        self.as_of = self.as_of.max(o.tick);
        match &o.kind {
            ObservationKind::Attribute { name, value } => {
                let key = (o.entity.clone(), name.clone());
                if self.samples.get(&key).is_none_or(|(t, _)| o.tick >= *t) {
                    self.samples.insert(key, (o.tick, *value));
                }
            }
            ObservationKind::Symptom { name, active } => {
                let key = (o.entity.clone(), name.clone());
                if self.events.get(&key).is_none_or(|(t, _)| o.tick >= *t) {
                    self.events.insert(key, (o.tick, *active));
                }
            }
        }
    }

    pub fn remove_entity(&mut self, entity: &EntityId) {
        self.samples.retain(|(e, _), _| e != entity);
        self.events.retain(|(e, _), _| e != entity);
    }

    pub fn as_of(&self) -> u64 {
        self.as_of
    }

    pub fn latest_sample(&self, entity: &EntityId, attribute: &str) -> Option<f64> {
        self.samples
            .get(&(entity.clone(), attribute.to_owned()))
            .map(|(_, v)| *v)
    }

    pub fn samples(&self) -> impl Iterator<Item = (&EntityId, &str, f64)> {
        self.samples
            .iter()
            .map(|((e, a), (_, v))| (e, a.as_str(), *v))
    }

    fn event_active(&self, entity: &EntityId, symptom: &str) -> bool {
        self.events
            .get(&(entity.clone(), symptom.to_owned()))
            .is_some_and(|(_, active)| *active)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ActiveSymptomSet {
    pub symptoms: BTreeSet<SymptomId>,
    pub as_of: u64,
}

impl ActiveSymptomSet {
    pub fn is_empty(&self) -> bool {
        self.symptoms.is_empty()
    }

    pub fn len(&self) -> usize {
        self.symptoms.len()
    }
}

/// A symptom is active when an event asserts it or its threshold predicate
/// holds on the host's latest sample. `scope = None` means every entity.
pub fn activate_symptoms(
    cg: &CausalityGraph,
    state: &ObservationState,
    scope: Option<&BTreeSet<EntityId>>,
) -> ActiveSymptomSet {
    let symptoms = cg
        .symptoms()
        .filter(|s| scope.is_none_or(|sc| sc.contains(&s.host_entity)))
        .filter(|s| {
            if state.event_active(&s.host_entity, &s.symptom_name) {
                return true;
            }
            match &s.activation {
                Activation::Threshold {
                    attribute,
                    comparator,
                    threshold,
                } => state
                    .latest_sample(&s.host_entity, attribute)
                    .is_some_and(|v| comparator.holds(v, *threshold)),
                Activation::Event(_) => false,
            }
        })
        .map(|s| s.id.clone())
        .collect();
    ActiveSymptomSet {
        symptoms,
        as_of: state.as_of(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalizeOptions {
    /// Factor for active symptoms a candidate has no edge to.
    pub leak: f64,
    /// Rank every cause when no cause has an edge into the active set.
    pub fallback_to_all: bool,
}

impl Default for LocalizeOptions {
    fn default() -> Self {
        Self {
            leak: DEFAULT_LEAK,
            fallback_to_all: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedCause {
    pub cause: CauseId,
    pub cause_name: String,
    pub host_entity: EntityId,
    pub prior: f64,
    pub log_score: f64,
    /// Unnormalized `P(r) * prod q(s, r)`.
    pub score: f64,
    /// Normalized over the candidate set.
    pub posterior: f64,
    pub explained: Vec<SymptomId>,
    pub unexplained: Vec<SymptomId>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnosis {
    pub ranked: Vec<RankedCause>,
}

impl Diagnosis {
    pub fn best(&self) -> Option<&RankedCause> {
        self.ranked.first()
    }
}

struct Scored {
    log_score: f64,
    explained: Vec<SymptomId>,
    unexplained: Vec<SymptomId>,
}

fn log_score(cg: &CausalityGraph, cause: &CauseId, active: &ActiveSymptomSet, leak: f64) -> Result<Scored, InferenceError> {
    let instance = cg
        .cause(cause)
        .ok_or_else(|| InferenceError::UnknownCause(cause.clone()))?;
    let edges = cg
        .edges_from(cause)
        .map_err(|_| InferenceError::UnknownCause(cause.clone()))?;
    let mut total = instance.prior.ln();
    let mut explained = Vec::new();
    let mut unexplained = Vec::new();
    for s in &active.symptoms {
        match edges.get(s) {
            Some(edge) => {
                total += edge.probability.ln();
                explained.push(s.clone());
            }
            None => {
                total += leak.ln();
                unexplained.push(s.clone());
            }
        }
    }
    Ok(Scored {
        log_score: total,
        explained,
        unexplained,
    })
}

/// Unnormalized score of a single candidate; the same value `localize`
/// reports as `RankedCause::score`.
pub fn score(
    cg: &CausalityGraph,
    cause: &CauseId,
    active: &ActiveSymptomSet,
    options: &LocalizeOptions,
) -> Result<f64, InferenceError> {
    Ok(log_score(cg, cause, active, options.leak)?.log_score.exp())
}

/// Ranks candidate causes by score, ties broken by higher prior then cause id.
pub fn localize(cg: &CausalityGraph, active: &ActiveSymptomSet, options: &LocalizeOptions) -> Diagnosis {
    if active.is_empty() {
        return Diagnosis::default();
    }
    let mut candidates: BTreeSet<&CauseId> = active
        .symptoms
        .iter()
        .flat_map(|s| cg.causes_of(s))
        .collect();
    if candidates.is_empty() && options.fallback_to_all {
        candidates = cg.causes().map(|c| &c.id).collect();
    }

    let mut ranked: Vec<RankedCause> = candidates
        .into_iter()
        .map(|id| {
            let scored = log_score(cg, id, active, options.leak).expect("candidate is instantiated");
            let instance = cg.cause(id).expect("candidate is instantiated");
            RankedCause {
                cause: id.clone(),
                cause_name: instance.cause_name.clone(),
                host_entity: instance.host_entity.clone(),
                prior: instance.prior,
                log_score: scored.log_score,
                score: scored.log_score.exp(),
                posterior: 0.0,
                explained: scored.explained,
                unexplained: scored.unexplained,
            }
        })
        .collect();
    ranked.sort_by(|a, b| {
        b.log_score
            .total_cmp(&a.log_score)
            .then(b.prior.total_cmp(&a.prior))
            .then_with(|| a.cause.cmp(&b.cause))
    });

    if let Some(top) = ranked.first().map(|r| r.log_score) {
        let weights: Vec<f64> = ranked.iter().map(|r| (r.log_score - top).exp()).collect();
        let total: f64 = weights.iter().sum();
        for (r, w) in ranked.iter_mut().zip(weights) {
            r.posterior = w / total;
        }
    }
    Diagnosis { ranked }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Healthy,
    Degraded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HealthReport {
    /// `None` when the whole environment was assessed.
    pub scope: Option<BTreeSet<EntityId>>,
    pub active_symptoms: ActiveSymptomSet,
    pub supported_causes: Vec<RankedCause>,
    pub verdict: Verdict,
}

/// Active symptoms in scope plus every cause with at least one active effect.
/// An empty active set is the explicit healthy verdict.
pub fn assess_health(
    cg: &CausalityGraph,
    state: &ObservationState,
    scope: Option<&BTreeSet<EntityId>>,
    options: &LocalizeOptions,
) -> HealthReport {
    let active = activate_symptoms(cg, state, scope);
    let supported = localize(
        cg,
        &active,
        &LocalizeOptions {
            fallback_to_all: false,
            ..*options
        },
    );
    let verdict = if active.is_empty() {
        Verdict::Healthy
    } else {
        Verdict::Degraded
    };
    HealthReport {
        scope: scope.cloned(),
        active_symptoms: active,
        supported_causes: supported.ranked,
        verdict,
    }
}
