//! Environment-agnostic codebook: entity types, root causes with their local
//! symptom associations, symptom activation predicates and propagation rules.
//!
//! Symptom definitions are keyed by `(name, applies_to)`, so the same symptom
//! name (say `high_error_rate`) can be declared for several entity types.
//! A rule fires across a relation only when the adjacent entity's type declares
//! the rule's target symptom.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::topology::RelationKind;

pub const CODEBOOK_SCHEMA: &str = "codebook/1";
pub const DEFAULT_PRIOR: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityTypeDef {
    pub name: String,
    #[serde(default)]
    pub attributes: Vec<String>,
}

impl EntityTypeDef {
    pub fn declares_attribute(&self, attribute: &str) -> bool {
        self.attributes.iter().any(|a| a == attribute)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalSymptom {
    pub symptom: String,
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RootCauseDef {
    pub name: String,
    pub applies_to: String,
    #[serde(default = "default_prior")]
    pub prior: f64,
    #[serde(rename = "symptoms")]
    pub local_symptoms: Vec<LocalSymptom>,
}

fn default_prior() -> f64 {
    DEFAULT_PRIOR
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Comparator {
    #[serde(rename = ">")]
    Gt,
    #[serde(rename = ">=")]
    Ge,
    #[serde(rename = "<")]
    Lt,
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = "==")]
    Eq,
    #[serde(rename = "!=")]
    Ne,
}

impl Comparator {
    /// `value <op> bound`. NaN never satisfies anything.
    pub fn holds(self, value: f64, bound: f64) -> bool {
        match self {
            Comparator::Gt => value > bound,
            Comparator::Ge => value >= bound,
            Comparator::Lt => value < bound,
            Comparator::Le => value <= bound,
            Comparator::Eq => value == bound,
            Comparator::Ne => value != bound && !value.is_nan(),
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            Comparator::Gt => ">",
            Comparator::Ge => ">=",
            Comparator::Lt => "<",
            Comparator::Le => "<=",
            Comparator::Eq => "==",
            Comparator::Ne => "!=",
        }
    }
}

impl fmt::Display for Comparator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

/// How an observation turns a symptom on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Activation {
    Threshold {
        attribute: String,
        comparator: Comparator,
        threshold: f64,
    },
    /// Only a direct symptom event activates it. Serialized as the string `"event"`.
    Event(EventKeyword),
}

impl Activation {
    pub fn event() -> Self {
        Activation::Event(EventKeyword::Event)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventKeyword {
    Event,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymptomDef {
    pub name: String,
    pub applies_to: String,
    pub activation: Activation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Traversal {
    /// From an edge's source to its target.
    Forward,
    /// From an edge's target back to its source (e.g. callee to callers).
    Reverse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropagationRule {
    #[serde(rename = "id")]
    pub rule_id: String,
    #[serde(rename = "from")]
    pub from_symptom: String,
    #[serde(rename = "over")]
    pub over_relation: RelationKind,
    pub traversal: Traversal,
    #[serde(rename = "to")]
    pub to_symptom: String,
    pub attenuation: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CodebookError {
    #[error("codebook parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("unsupported codebook schema `{0}` (expected `codebook/1`)")]
    Schema(String),
    #[error("{at}: duplicate {what} `{name}`")]
    Duplicate {
        at: String,
        what: &'static str,
        name: String,
    },
    #[error("{at}: unknown {what} `{name}`")]
    UnknownReference {
        at: String,
        what: &'static str,
        name: String,
    },
    #[error("{at}: {what} {value} is outside (0, 1]")]
    Probability {
        at: String,
        what: &'static str,
        value: String,
    },
    #[error("unknown entity type `{0}`")]
    UnknownType(String),
    #[error("unknown symptom `{0}`")]
    UnknownSymptom(String),
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CodebookDocument {
    schema: String,
    #[serde(default)]
    version: String,
    #[serde(default)]
    types: Vec<EntityTypeDef>,
    #[serde(default)]
    root_causes: Vec<RootCauseDef>,
    #[serde(default)]
    symptoms: Vec<SymptomDef>,
    #[serde(default)]
    propagation_rules: Vec<PropagationRule>,
}

/// A validated codebook. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    version: String,
    types: Vec<EntityTypeDef>,
    root_causes: Vec<RootCauseDef>,
    symptoms: Vec<SymptomDef>,
    rules: Vec<PropagationRule>,
    type_index: BTreeMap<String, usize>,
    causes_by_type: BTreeMap<String, Vec<usize>>,
    symptom_index: BTreeMap<(String, String), usize>,
    symptoms_by_type: BTreeMap<String, Vec<usize>>,
    symptom_names: BTreeSet<String>,
    rules_by_symptom: BTreeMap<String, Vec<usize>>,
}

pub fn load_codebook(text: &str) -> Result<Codebook, CodebookError> {
    Codebook::from_json(text)
}

fn valid_probability(p: f64) -> bool {
    p > 0.0 && p <= 1.0
}

impl Codebook {
    pub fn from_json(text: &str) -> Result<Self, CodebookError> {
        let doc: CodebookDocument = serde_json::from_str(text).map_err(|e| CodebookError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        if doc.schema != CODEBOOK_SCHEMA {
            return Err(CodebookError::Schema(doc.schema));
        }
        Self::from_parts(
            doc.version,
            doc.types,
            doc.root_causes,
            doc.symptoms,
            doc.propagation_rules,
        )
    }

    /// Validates every definition eagerly; the first violation is reported
    /// with its location.
    pub fn from_parts(
        version: impl Into<String>,
        types: Vec<EntityTypeDef>,
        root_causes: Vec<RootCauseDef>,
        symptoms: Vec<SymptomDef>,
        rules: Vec<PropagationRule>,
    ) -> Result<Self, CodebookError> {
        let mut type_index = BTreeMap::new();
        for (i, t) in types.iter().enumerate() {
            if type_index.insert(t.name.clone(), i).is_some() {
                return Err(CodebookError::Duplicate {
                    at: format!("types[{i}]"),
                    what: "entity type",
                    name: t.name.clone(),
                });
            }
        }

        let mut symptom_index = BTreeMap::new();
        let mut symptoms_by_type: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        let mut symptom_names = BTreeSet::new();
        for (i, s) in symptoms.iter().enumerate() {
            let at = format!("symptoms[{i}] ({})", s.name);
            let Some(&ti) = type_index.get(&s.applies_to) else {
                return Err(CodebookError::UnknownReference {
                    at,
                    what: "entity type",
                    name: s.applies_to.clone(),
                });
            };
            if let Activation::Threshold {
                attribute,
                threshold,
                ..
            } = &s.activation
            {
                if !types[ti].declares_attribute(attribute) {
                    return Err(CodebookError::UnknownReference {
                        at,
                        what: "attribute",
                        name: format!("{}.{}", s.applies_to, attribute),
                    });
                }
                if !threshold.is_finite() {
                    return Err(CodebookError::Probability {
                        at,
                        what: "threshold",
                        value: threshold.to_string(),
                    });
                }
            }
            if symptom_index
                .insert((s.name.clone(), s.applies_to.clone()), i)
                .is_some()
            {
                return Err(CodebookError::Duplicate {
                    at,
                    what: "symptom",
                    name: format!("{} for {}", s.name, s.applies_to),
                });
            }
            symptoms_by_type.entry(s.applies_to.clone()).or_default().push(i);
            symptom_names.insert(s.name.clone());
        }

        let mut causes_by_type: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        let mut cause_keys = BTreeSet::new();
        for (i, c) in root_causes.iter().enumerate() {
            let at = format!("root_causes[{i}] ({})", c.name);
            if !type_index.contains_key(&c.applies_to) {
                return Err(CodebookError::UnknownReference {
                    at,
                    what: "entity type",
                    name: c.applies_to.clone(),
                });
            }
            if !cause_keys.insert((c.name.clone(), c.applies_to.clone())) {
                return Err(CodebookError::Duplicate {
                    at,
                    what: "root cause",
                    name: format!("{} for {}", c.name, c.applies_to),
                });
            }
            if !valid_probability(c.prior) {
                return Err(CodebookError::Probability {
                    at,
                    what: "prior",
                    value: c.prior.to_string(),
                });
            }
            let mut seen = BTreeSet::new();
            for (j, local) in c.local_symptoms.iter().enumerate() {
                let at = format!("root_causes[{i}] ({}).symptoms[{j}]", c.name);
                if !symptom_index.contains_key(&(local.symptom.clone(), c.applies_to.clone())) {
                    return Err(CodebookError::UnknownReference {
                        at,
                        what: "symptom",
                        name: format!("{} for {}", local.symptom, c.applies_to),
                    });
                }
                if !seen.insert(local.symptom.as_str()) {
                    return Err(CodebookError::Duplicate {
                        at,
                        what: "local symptom",
                        name: local.symptom.clone(),
                    });
                }
                if !valid_probability(local.probability) {
                    return Err(CodebookError::Probability {
                        at,
                        what: "probability",
                        value: local.probability.to_string(),
                    });
                }
            }
            causes_by_type.entry(c.applies_to.clone()).or_default().push(i);
        }

        let mut rule_ids = BTreeSet::new();
        let mut rules_by_symptom: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (i, r) in rules.iter().enumerate() {
            let at = format!("propagation_rules[{i}] ({})", r.rule_id);
            if !rule_ids.insert(r.rule_id.clone()) {
                return Err(CodebookError::Duplicate {
                    at,
                    what: "rule id",
                    name: r.rule_id.clone(),
                });
            }
            for name in [&r.from_symptom, &r.to_symptom] {
                if !symptom_names.contains(name) {
                    return Err(CodebookError::UnknownReference {
                        at,
                        what: "symptom",
                        name: name.clone(),
                    });
                }
            }
            if !valid_probability(r.attenuation) {
                return Err(CodebookError::Probability {
                    at,
                    what: "attenuation",
                    value: r.attenuation.to_string(),
                });
            }
            rules_by_symptom.entry(r.from_symptom.clone()).or_default().push(i);
        }

        Ok(Self {
            version: version.into(),
            types,
            root_causes,
            symptoms,
            rules,
            type_index,
            causes_by_type,
            symptom_index,
            symptoms_by_type,
            symptom_names,
            rules_by_symptom,
        })
    }

    /// Renders the codebook back into its file format.
    pub fn to_json(&self) -> String {
        let doc = CodebookDocument {
            schema: CODEBOOK_SCHEMA.to_owned(),
            version: self.version.clone(),
            types: self.types.clone(),
            root_causes: self.root_causes.clone(),
            symptoms: self.symptoms.clone(),
            propagation_rules: self.rules.clone(),
        };
        serde_json::to_string_pretty(&doc).expect("codebook serializes")
    }

    pub fn version(&self) -> &str {
        &self.version
    }

    pub fn types(&self) -> &[EntityTypeDef] {
        &self.types
    }

    pub fn root_causes(&self) -> &[RootCauseDef] {
        &self.root_causes
    }

    pub fn symptoms(&self) -> &[SymptomDef] {
        &self.symptoms
    }

    pub fn rules(&self) -> &[PropagationRule] {
        &self.rules
    }

    pub fn has_type(&self, name: &str) -> bool {
        self.type_index.contains_key(name)
    }

    pub fn type_def(&self, name: &str) -> Option<&EntityTypeDef> {
        self.type_index.get(name).map(|&i| &self.types[i])
    }

    pub fn has_symptom(&self, name: &str) -> bool {
        self.symptom_names.contains(name)
    }

    /// Causes whose `applies_to` is `type_name`, in declaration order.
    pub fn causes_for_type(&self, type_name: &str) -> Result<Vec<&RootCauseDef>, CodebookError> {
        if !self.has_type(type_name) {
            return Err(CodebookError::UnknownType(type_name.to_owned()));
        }
        Ok(self
            .causes_by_type
            .get(type_name)
            .into_iter()
            .flatten()
            .map(|&i| &self.root_causes[i])
            .collect())
    }

    /// Symptoms declared for `type_name`, in declaration order. Empty for unknown types.
    pub fn symptoms_for_type(&self, type_name: &str) -> impl Iterator<Item = &SymptomDef> {
        self.symptoms_by_type
            .get(type_name)
            .into_iter()
            .flatten()
            .map(|&i| &self.symptoms[i])
    }

    pub fn symptom_def(&self, name: &str, type_name: &str) -> Option<&SymptomDef> {
        self.symptom_index
            .get(&(name.to_owned(), type_name.to_owned()))
            .map(|&i| &self.symptoms[i])
    }

    pub fn rules_for(
        &self,
        symptom: &str,
        kind: RelationKind,
    ) -> Result<Vec<&PropagationRule>, CodebookError> {
        if !self.has_symptom(symptom) {
            return Err(CodebookError::UnknownSymptom(symptom.to_owned()));
        }
        Ok(self
            .rules_from(symptom)
            .filter(|r| r.over_relation == kind)
            .collect())
    }

    /// Every rule whose source symptom is `symptom`, in declaration order.
    pub fn rules_from(&self, symptom: &str) -> impl Iterator<Item = &PropagationRule> {
        self.rules_by_symptom
            .get(symptom)
            .into_iter()
            .flatten()
            .map(|&i| &self.rules[i])
    }

    pub fn rule(&self, rule_id: &str) -> Option<&PropagationRule> {
        self.rules.iter().find(|r| r.rule_id == rule_id)
    }

    /// Copy of this codebook without any propagation rules.
    pub fn without_rules(&self) -> Codebook {
        Self::from_parts(
            self.version.clone(),
            self.types.clone(),
            self.root_causes.clone(),
            self.symptoms.clone(),
            Vec::new(),
        )
        .expect("subset of a valid codebook is valid")
    }

    /// Copy of this codebook with every root cause named `cause_name` removed.
    pub fn without_cause(&self, cause_name: &str) -> Codebook {
        let causes = self
            .root_causes
            .iter()
            .filter(|c| c.name != cause_name)
            .cloned()
            .collect();
        Self::from_parts(
            self.version.clone(),
            self.types.clone(),
            causes,
            self.symptoms.clone(),
            self.rules.clone(),
        )
        .expect("subset of a valid codebook is valid")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "schema": "codebook/1",
        "version": "t",
        "types": [{"name": "service", "attributes": ["error_rate"]}],
        "symptoms": [{"name": "high_error_rate", "applies_to": "service",
                      "activation": {"attribute": "error_rate", "comparator": ">", "threshold": 0.05}}],
        "root_causes": [{"name": "code_defect", "applies_to": "service",
                         "symptoms": [{"symptom": "high_error_rate", "probability": 0.9}]}]
    }"#;

    fn with_rule(rule: &str) -> String {
        MINIMAL.replacen(
            "\"root_causes\"",
            &format!("\"propagation_rules\": [{rule}], \"root_causes\""),
            1,
        )
    }

    #[test]
    fn minimal_codebook_is_valid() {
        let cb = load_codebook(MINIMAL).unwrap();
        assert_eq!(cb.types().len(), 1);
        assert_eq!(cb.root_causes()[0].prior, DEFAULT_PRIOR);
        assert!(cb.rules().is_empty());
    }

    #[test]
    fn zero_probability_is_rejected() {
        let text = MINIMAL.replace("\"probability\": 0.9", "\"probability\": 0");
        let err = load_codebook(&text).unwrap_err();
        assert!(matches!(err, CodebookError::Probability { ref at, .. } if at.contains("code_defect")));
    }

    #[test]
    fn probability_above_one_is_rejected() {
        let text = MINIMAL.replace("\"probability\": 0.9", "\"probability\": 1.5");
        assert!(matches!(
            load_codebook(&text),
            Err(CodebookError::Probability { .. })
        ));
    }

    #[test]
    fn rule_with_undeclared_symptom() {
        let text = with_rule(
            r#"{"id": "r1", "from": "high_error_rate", "over": "conn", "traversal": "reverse",
                "to": "ghost_symptom", "attenuation": 0.5}"#,
        );
        let err = load_codebook(&text).unwrap_err();
        assert_eq!(
            err,
            CodebookError::UnknownReference {
                at: "propagation_rules[0] (r1)".into(),
                what: "symptom",
                name: "ghost_symptom".into(),
            }
        );
    }

    #[test]
    fn threshold_on_undeclared_attribute() {
        let text = MINIMAL.replace("\"attribute\": \"error_rate\"", "\"attribute\": \"latency\"");
        assert!(matches!(
            load_codebook(&text),
            Err(CodebookError::UnknownReference { what: "attribute", .. })
        ));
    }

    #[test]
    fn parse_errors_carry_location() {
        let err = load_codebook("{\n  \"schema\": ").unwrap_err();
        assert!(matches!(err, CodebookError::Parse { line: 2, .. }));
        assert!(matches!(
            load_codebook(r#"{"schema": "codebook/9"}"#),
            Err(CodebookError::Schema(_))
        ));
    }

    #[test]
    fn causes_for_type_in_declaration_order() {
        let text = MINIMAL.replace(
            "\"root_causes\": [",
            r#""root_causes": [{"name": "first", "applies_to": "service", "prior": 0.2,
                               "symptoms": [{"symptom": "high_error_rate", "probability": 0.5}]},"#,
        );
        let text = text.replace(
            "\"types\": [",
            r#""types": [{"name": "pod", "attributes": []},"#,
        );
        let cb = load_codebook(&text).unwrap();
        let names: Vec<_> = cb
            .causes_for_type("service")
            .unwrap()
            .iter()
            .map(|c| c.name.as_str())
            .collect();
        assert_eq!(names, ["first", "code_defect"]);
        assert!(cb.causes_for_type("pod").unwrap().is_empty());
        assert_eq!(
            cb.causes_for_type("node"),
            Err(CodebookError::UnknownType("node".into()))
        );
    }

    #[test]
    fn rules_for_filters_by_kind() {
        let text = with_rule(
            r#"{"id": "error_to_callers", "from": "high_error_rate", "over": "conn",
                "traversal": "reverse", "to": "high_error_rate", "attenuation": 0.8}"#,
        );
        let cb = load_codebook(&text).unwrap();
        let conn = cb.rules_for("high_error_rate", RelationKind::Conn).unwrap();
        assert_eq!(conn.len(), 1);
        assert_eq!(conn[0].traversal, Traversal::Reverse);
        assert!(cb
            .rules_for("high_error_rate", RelationKind::Layer)
            .unwrap()
            .is_empty());
        assert!(matches!(
            cb.rules_for("nope", RelationKind::Conn),
            Err(CodebookError::UnknownSymptom(_))
        ));
        let plain = load_codebook(MINIMAL).unwrap();
        assert!(plain
            .rules_for("high_error_rate", RelationKind::Conn)
            .unwrap()
            .is_empty());
    }

    #[test]
    fn render_round_trip() {
        let cb = load_codebook(&with_rule(
            r#"{"id": "r", "from": "high_error_rate", "over": "conn",
                "traversal": "reverse", "to": "high_error_rate", "attenuation": 0.8}"#,
        ))
        .unwrap();
        assert_eq!(load_codebook(&cb.to_json()).unwrap(), cb);
    }

    #[test]
    fn event_activation_parses_from_keyword() {
        let text = MINIMAL.replace(
            r#"{"attribute": "error_rate", "comparator": ">", "threshold": 0.05}"#,
            "\"event\"",
        );
        let cb = load_codebook(&text).unwrap();
        assert_eq!(cb.symptoms()[0].activation, Activation::event());
        assert!(cb.to_json().contains("\"activation\": \"event\""));
    }

    #[test]
    fn comparator_semantics() {
        assert!(Comparator::Gt.holds(0.35, 0.05));
        assert!(!Comparator::Gt.holds(0.05, 0.05));
        assert!(Comparator::Ge.holds(0.05, 0.05));
        assert!(Comparator::Le.holds(5.0, 5.0));
        assert!(!Comparator::Le.holds(10.0, 5.0));
        assert!(!Comparator::Ne.holds(f64::NAN, 1.0));
        assert!(!Comparator::Lt.holds(f64::NAN, 1.0));
    }
}
