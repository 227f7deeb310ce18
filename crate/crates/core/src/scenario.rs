//! Scenario harness: replays a seeded observation script into an engine,
//! issues a fixed query script through the tool service and scores each
//! answer against the rubric for its query id.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::attributes::{AttributeError, AttributeId, Constraint, Violation};
use crate::causality::{CausalityGraph, CauseId};
use crate::engine::{Engine, EngineError};
use crate::environment::{Environment, EnvironmentError};
use crate::inference::Observation;
use crate::knowledge_base::{Codebook, CodebookError};
use crate::query_service::{handle_line, ToolResponse};
use crate::topology::EntityId;

pub const SCENARIO_SCHEMA: &str = "scenario/1";

const DEFAULT_TICKS: u64 = 3;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("scenario parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("unsupported scenario schema `{0}` (expected `scenario/1`)")]
    Schema(String),
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("query `{0}` has no rubric rule")]
    UnmappedQuery(String),
    #[error("cannot read `{path}`: {message}")]
    Io { path: String, message: String },
    #[error("fault injection requires an active_fault scenario")]
    NotActiveFault,
    #[error("fault cause `{0}` is not in the causality graph")]
    FaultCauseAbsent(CauseId),
    #[error(transparent)]
    Codebook(#[from] CodebookError),
    #[error(transparent)]
    Environment(#[from] EnvironmentError),
    #[error(transparent)]
    Attribute(#[from] AttributeError),
    #[error(transparent)]
    Engine(#[from] EngineError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Healthy,
    ActiveFault,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineRange {
    pub attribute: String,
    pub low: f64,
    pub high: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Telemetry {
    #[serde(default)]
    pub baseline: Vec<BaselineRange>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultSignal {
    pub entity: EntityId,
    pub attribute: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultSpec {
    pub cause: CauseId,
    #[serde(default = "first_tick")]
    pub start_tick: u64,
    pub signals: Vec<FaultSignal>,
}

fn first_tick() -> u64 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundTruth {
    pub cause: CauseId,
    pub downstream: BTreeSet<EntityId>,
    pub team: String,
    #[serde(default)]
    pub aligned_targets: Vec<EntityId>,
    #[serde(default)]
    pub misaligned_targets: Vec<EntityId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QueryRequest {
    pub method: String,
    #[serde(default)]
    pub params: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuerySpec {
    pub id: String,
    #[serde(default)]
    pub text: String,
    pub request: QueryRequest,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioDocument {
    schema: String,
    name: String,
    mode: Mode,
    environment: String,
    codebook: String,
    #[serde(default)]
    seed: u64,
    #[serde(default = "default_ticks")]
    ticks: u64,
    #[serde(default)]
    telemetry: Telemetry,
    #[serde(default)]
    fault: Option<FaultSpec>,
    #[serde(default)]
    constraints: Vec<Constraint>,
    #[serde(default)]
    ground_truth: Option<GroundTruth>,
    queries: Vec<QuerySpec>,
}

fn default_ticks() -> u64 {
    DEFAULT_TICKS
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    HealthAssessment,
    ImpactAnalysis,
    RootCauseDiagnosis,
    Remediation,
}

impl Category {
    pub fn as_str(self) -> &'static str {
        match self {
            Category::HealthAssessment => "health_assessment",
            Category::ImpactAnalysis => "impact_analysis",
            Category::RootCauseDiagnosis => "root_cause_diagnosis",
            Category::Remediation => "remediation",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Rule {
    Health,
    Impact,
    MultiTeamImpact,
    RootCause,
    Ownership,
    Remediation,
}

/// Rubric rule and category for each query id. Q5 is only posed under a fault.
fn rubric_rule(query: &str, mode: Mode) -> Option<(Rule, Category)> {
    Some(match query {
        "Q1" => (Rule::Health, Category::HealthAssessment),
        "Q2" => (Rule::Impact, Category::ImpactAnalysis),
        "Q6" => (Rule::MultiTeamImpact, Category::ImpactAnalysis),
        "Q3" => (Rule::RootCause, Category::RootCauseDiagnosis),
        "Q4" => (Rule::Ownership, Category::RootCauseDiagnosis),
        "Q5" if mode == Mode::ActiveFault => (Rule::Remediation, Category::Remediation),
        _ => return None,
    })
}

/// A validated scenario with its environment and codebook loaded.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub mode: Mode,
    pub seed: u64,
    pub ticks: u64,
    pub telemetry: Telemetry,
    pub fault: Option<FaultSpec>,
    pub constraints: Vec<Constraint>,
    pub ground_truth: Option<GroundTruth>,
    pub queries: Vec<QuerySpec>,
    pub environment: Environment,
    pub codebook: Codebook,
}

impl Scenario {
    /// Reads a scenario file; its environment and codebook paths are
    /// resolved relative to the scenario file's directory.
    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let read = |p: &Path| {
            std::fs::read_to_string(p).map_err(|e| ScenarioError::Io {
                path: p.display().to_string(),
                message: e.to_string(),
            })
        };
        let text = read(path)?;
        let dir = path.parent().unwrap_or_else(|| Path::new("."));
        Self::from_json(&text, |name| read(&dir.join(name)))
    }

    /// Parses a scenario document, using `resolve` to fetch the referenced
    /// environment and codebook documents by name.
    pub fn from_json<F>(text: &str, resolve: F) -> Result<Self, ScenarioError>
    where
        F: Fn(&str) -> Result<String, ScenarioError>,
    {
        let doc: ScenarioDocument = serde_json::from_str(text).map_err(|e| ScenarioError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        if doc.schema != SCENARIO_SCHEMA {
            return Err(ScenarioError::Schema(doc.schema));
        }
        match (doc.mode, &doc.fault, &doc.ground_truth) {
            (Mode::ActiveFault, None, _) => {
                return Err(ScenarioError::Invalid("active_fault mode requires `fault`".into()))
            }
            (Mode::ActiveFault, _, None) => {
                return Err(ScenarioError::Invalid(
                    "active_fault mode requires `ground_truth`".into(),
                ))
            }
            (Mode::Healthy, Some(_), _) => {
                return Err(ScenarioError::Invalid("healthy mode forbids `fault`".into()))
            }
            _ => {}
        }
        let mut seen = BTreeSet::new();
        for q in &doc.queries {
            if rubric_rule(&q.id, doc.mode).is_none() {
                return Err(ScenarioError::UnmappedQuery(q.id.clone()));
            }
            if !seen.insert(q.id.as_str()) {
                return Err(ScenarioError::Invalid(format!("duplicate query id `{}`", q.id)));
            }
        }
        for b in &doc.telemetry.baseline {
            if b.low.partial_cmp(&b.high).is_none_or(|o| o.is_gt()) {
                return Err(ScenarioError::Invalid(format!(
                    "baseline range for `{}` is empty",
                    b.attribute
                )));
            }
        }

        let codebook = Codebook::from_json(&resolve(&doc.codebook)?)?;
        let environment = Environment::from_json(&resolve(&doc.environment)?, &codebook)?;
        if let Some(fault) = &doc.fault {
            for s in &fault.signals {
                let id = AttributeId::for_entity(&s.entity, &s.attribute);
                if environment.attributes.node(&id).is_none() {
                    return Err(ScenarioError::Invalid(format!("fault signal targets unknown attribute `{id}`")));
                }
                if !environment.attributes.is_source(&id) {
                    return Err(ScenarioError::Invalid(format!(
                        "fault signal targets dependent attribute `{id}`"
                    )));
                }
            }
        }
        for c in &doc.constraints {
            if environment.attributes.node(&c.attribute).is_none() {
                return Err(AttributeError::Unknown(c.attribute.clone()).into());
            }
        }

        Ok(Scenario {
            name: doc.name,
            mode: doc.mode,
            seed: doc.seed,
            ticks: doc.ticks,
            telemetry: doc.telemetry,
            fault: doc.fault,
            constraints: doc.constraints,
            ground_truth: doc.ground_truth,
            queries: doc.queries,
            environment,
            codebook,
        })
    }

    /// Same scenario against a different codebook (used for ablations).
    pub fn with_codebook(&self, codebook: Codebook) -> Self {
        Scenario {
            codebook,
            ..self.clone()
        }
    }

    /// A fresh engine over this scenario's environment and codebook.
    pub fn engine(&self) -> Result<Engine, ScenarioError> {
        Ok(Engine::new(self.environment.clone(), self.codebook.clone())?)
    }
}

/// Attribute samples for every tick. Source attributes draw from their
/// baseline range (or keep their declared value); fault signals override
/// their source from `start_tick` on; dependents are evaluated through the
/// attribute graph. The random stream does not depend on the mode, so healthy
/// and faulty runs with one seed share the same baseline draws.
pub fn observation_script(scenario: &Scenario, seed: u64) -> Result<Vec<Observation>, ScenarioError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ranges: BTreeMap<&str, &BaselineRange> = scenario
        .telemetry
        .baseline
        .iter()
        .map(|b| (b.attribute.as_str(), b))
        .collect();
    let overrides: BTreeMap<AttributeId, f64> = scenario
        .fault
        .iter()
        .flat_map(|f| f.signals.iter())
        .map(|s| (AttributeId::for_entity(&s.entity, &s.attribute), s.value))
        .collect();
    let start = scenario.fault.as_ref().map_or(u64::MAX, |f| f.start_tick);

    let mut graph = scenario.environment.attributes.clone();
    let sources: Vec<AttributeId> = graph
        .nodes()
        .filter(|n| graph.is_source(&n.id))
        .map(|n| n.id.clone())
        .collect();
    let mut out = Vec::new();
    for tick in 1..=scenario.ticks {
        for id in &sources {
            let node = graph.node(id).expect("source exists");
            let drawn = match ranges.get(node.attribute_name.as_str()) {
                Some(r) if r.low < r.high => rng.gen_range(r.low..=r.high),
                Some(r) => r.low,
                None => node.value.unwrap_or(node.baseline),
            };
            let value = match overrides.get(id) {
                Some(v) if tick >= start => *v,
                _ => drawn,
            };
            graph.set_value(id, value)?;
        }
        for (id, value) in graph.evaluate()? {
            let node = graph.node(&id).expect("evaluated node exists");
            out.push(Observation::sample(
                tick,
                node.host_entity.clone(),
                node.attribute_name.clone(),
                value,
            ));
        }
    }
    Ok(out)
}

/// The fault's observation stream. Fails outside active_fault mode or when the
/// fault cause is not instantiated for the scenario's topology and codebook.
pub fn inject_fault(scenario: &Scenario, seed: u64) -> Result<Vec<Observation>, ScenarioError> {
    let fault = match (scenario.mode, &scenario.fault) {
        (Mode::ActiveFault, Some(f)) => f,
        _ => return Err(ScenarioError::NotActiveFault),
    };
    let cg = CausalityGraph::instantiate(
        &scenario.environment.topology,
        &scenario.codebook,
        Default::default(),
    )
    .map_err(EngineError::from)?;
    if cg.cause(&fault.cause).is_none() {
        return Err(ScenarioError::FaultCauseAbsent(fault.cause.clone()));
    }
    observation_script(scenario, seed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryResult {
    pub query: String,
    pub category: Category,
    pub passed: bool,
    pub reason: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CategoryTotal {
    pub passed: usize,
    pub total: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RubricResult {
    pub scenario: String,
    pub mode: Mode,
    pub seed: u64,
    pub results: Vec<QueryResult>,
    pub categories: BTreeMap<Category, CategoryTotal>,
    pub passed: usize,
    pub total: usize,
    pub constraint_violations: Vec<Violation>,
}

impl RubricResult {
    pub fn all_passed(&self) -> bool {
        self.passed == self.total
    }

    pub fn to_table(&self) -> String {
        let mut out = format!(
            "scenario {} ({}, seed {})\n",
            self.scenario,
            match self.mode {
                Mode::Healthy => "healthy",
                Mode::ActiveFault => "active_fault",
            },
            self.seed
        );
        out.push_str(&format!("{:<6}{:<22}{:<7}{}\n", "query", "category", "result", "reason"));
        for r in &self.results {
            out.push_str(&format!(
                "{:<6}{:<22}{:<7}{}\n",
                r.query,
                r.category.as_str(),
                if r.passed { "pass" } else { "FAIL" },
                r.reason
            ));
        }
        for (c, t) in &self.categories {
            out.push_str(&format!("{:<28}{}/{}\n", c.as_str(), t.passed, t.total));
        }
        out.push_str(&format!("total {}/{}\n", self.passed, self.total));
        for v in &self.constraint_violations {
            out.push_str(&format!(
                "constraint violated: {} {} {} (value {})\n",
                v.constraint.attribute,
                v.constraint.comparator.symbol(),
                v.constraint.bound,
                v.value
            ));
        }
        out
    }
}

/// One metrics line per query. Response payload bytes stand in for token
/// usage; no model tokens are measured.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub scenario: String,
    pub mode: Mode,
    pub seed: u64,
    pub query: String,
    pub method: String,
    pub tool_calls: u32,
    pub request_bytes: usize,
    pub response_bytes: usize,
    pub payload_bytes: usize,
    pub token_proxy: String,
    pub wall_clock_us: u64,
    pub passed: bool,
}

pub const TOKEN_PROXY_LABEL: &str = "payload_bytes (proxy; no model tokens measured)";

pub fn render_metrics(records: &[MetricsRecord]) -> String {
    records
        .iter()
        .map(|r| serde_json::to_string(r).expect("metrics serialize") + "\n")
        .collect()
}

pub fn parse_metrics(text: &str) -> Result<Vec<MetricsRecord>, serde_json::Error> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(serde_json::from_str)
        .collect()
}

#[derive(Debug, Clone)]
pub struct ScenarioRun {
    pub rubric: RubricResult,
    pub metrics: Vec<MetricsRecord>,
    /// (request line, response line) per query.
    pub transcript: Vec<(String, String)>,
}

/// Replays the observation script into `engine`, issues every query and
/// scores the answers. The script is not checked against the fault cause, so
/// an ablated codebook produces failing checks rather than an error.
pub fn run_scenario(scenario: &Scenario, engine: &Engine, seed: u64) -> Result<ScenarioRun, ScenarioError> {
    let script = observation_script(scenario, seed)?;
    engine.ingest(&script)?;

    let mut results = Vec::new();
    let mut metrics = Vec::new();
    let mut transcript = Vec::new();
    for q in &scenario.queries {
        let (rule, category) = rubric_rule(&q.id, scenario.mode).expect("queries checked at load");
        let request = json!({"id": q.id, "method": q.request.method, "params": q.request.params}).to_string();
        let started = Instant::now();
        let response = handle_line(engine, &request);
        let elapsed = started.elapsed();
        let line = response.to_line();
        let (passed, reason) = check(rule, scenario, &response);
        let payload_bytes = response
            .payload
            .as_ref()
            .map_or(0, |p| serde_json::to_string(p).map_or(0, |s| s.len()));
        metrics.push(MetricsRecord {
            scenario: scenario.name.clone(),
            mode: scenario.mode,
            seed,
            query: q.id.clone(),
            method: q.request.method.clone(),
            tool_calls: 1,
            request_bytes: request.len(),
            response_bytes: line.len(),
            payload_bytes,
            token_proxy: TOKEN_PROXY_LABEL.to_owned(),
            wall_clock_us: elapsed.as_micros() as u64,
            passed,
        });
        results.push(QueryResult {
            query: q.id.clone(),
            category,
            passed,
            reason,
        });
        transcript.push((request, line));
    }

    let mut categories: BTreeMap<Category, CategoryTotal> = BTreeMap::new();
    for r in &results {
        let t = categories.entry(r.category).or_insert(CategoryTotal {
            passed: 0,
            total: 0,
            accuracy: 0.0,
        });
        t.total += 1;
        t.passed += usize::from(r.passed);
    }
    for t in categories.values_mut() {
        t.accuracy = t.passed as f64 / t.total as f64;
    }
    let passed = results.iter().filter(|r| r.passed).count();
    let total = results.len();

    let mut attributes = scenario.environment.attributes.clone();
    let snapshot = engine.snapshot();
    for (entity, name, value) in snapshot.observations.samples() {
        let id = AttributeId::for_entity(entity, name);
        if attributes.is_source(&id) {
            attributes.set_value(&id, value)?;
        }
    }
    let constraint_violations = attributes.check_constraints(&scenario.constraints)?;

    Ok(ScenarioRun {
        rubric: RubricResult {
            scenario: scenario.name.clone(),
            mode: scenario.mode,
            seed,
            results,
            categories,
            passed,
            total,
            constraint_violations,
        },
        metrics,
        transcript,
    })
}

/// Tool calls, payload sizes and wall-clock per query for one run.
pub fn measure_footprint(scenario: &Scenario, engine: &Engine, seed: u64) -> Result<Vec<MetricsRecord>, ScenarioError> {
    Ok(run_scenario(scenario, engine, seed)?.metrics)
}

fn ids(v: &Value) -> BTreeSet<String> {
    v.as_array()
        .map(|a| a.iter().filter_map(|x| x.as_str().map(str::to_owned)).collect())
        .unwrap_or_default()
}

fn list(set: &BTreeSet<String>) -> String {
    set.iter().cloned().collect::<Vec<_>>().join(", ")
}

fn check(rule: Rule, scenario: &Scenario, response: &ToolResponse) -> (bool, String) {
    let payload = match (&response.payload, &response.error) {
        (Some(p), _) => p,
        (None, Some(e)) => return (false, format!("tool error {}: {}", e.code.as_str(), e.message)),
        (None, None) => return (false, "empty response".into()),
    };
    match scenario.mode {
        Mode::Healthy => check_healthy(rule, payload),
        Mode::ActiveFault => check_fault(
            rule,
            scenario.ground_truth.as_ref().expect("active_fault has ground truth"),
            payload,
        ),
    }
}

fn check_healthy(rule: Rule, p: &Value) -> (bool, String) {
    match rule {
        Rule::Health => {
            if p["verdict"] == "healthy" && ids(&p["supported_causes"]).is_empty() {
                (true, "reports no active incidents".into())
            } else {
                (false, format!("hallucinated incident: verdict {}", p["verdict"]))
            }
        }
        Rule::Impact | Rule::MultiTeamImpact => {
            let downstream = ids(&p["downstream_entities"]);
            if p["cause"].is_null() && downstream.is_empty() {
                (true, "reports no impacted services".into())
            } else {
                (false, format!("reported impacted entities: {}", list(&downstream)))
            }
        }
        Rule::RootCause | Rule::Ownership => {
            if p["best"].is_null() && p["root_causes"].as_array().is_some_and(Vec::is_empty) {
                (true, "reports no root cause".into())
            } else {
                (false, format!("hallucinated root cause {}", p["best"]))
            }
        }
        Rule::Remediation => (false, "remediation is not posed in healthy mode".into()),
    }
}

fn check_fault(rule: Rule, truth: &GroundTruth, p: &Value) -> (bool, String) {
    let expected_cause = truth.cause.as_str();
    match rule {
        Rule::Health => {
            if p["verdict"] == "degraded" {
                (true, format!("active incident identified: {}", p["summary"].as_str().unwrap_or("")))
            } else {
                (false, "no active incident reported".into())
            }
        }
        Rule::Impact | Rule::MultiTeamImpact => {
            if p["cause"].is_null() {
                return (false, "no root cause, so no impacted services".into());
            }
            let got = ids(&p["downstream_entities"]);
            let want: BTreeSet<String> = truth.downstream.iter().map(|e| e.to_string()).collect();
            let missing: BTreeSet<String> = want.difference(&got).cloned().collect();
            let extra: BTreeSet<String> = got.difference(&want).cloned().collect();
            if !missing.is_empty() {
                return (false, format!("missing downstream entities: {}", list(&missing)));
            }
            if !extra.is_empty() {
                return (false, format!("false positives: {}", list(&extra)));
            }
            if rule == Rule::MultiTeamImpact {
                let teams = ids(&p["impacted_teams"]);
                if teams.len() < 2 {
                    return (false, format!("single team impacted: {}", list(&teams)));
                }
                return (true, format!("multi-team incident: {}", list(&teams)));
            }
            (true, format!("downstream entities: {}", list(&got)))
        }
        Rule::RootCause => match p["best"].as_str() {
            Some(best) if best == expected_cause => (true, format!("root cause {best}")),
            Some(best) => (false, format!("root cause {best}, expected {expected_cause}")),
            None => (false, "no root cause reported".into()),
        },
        Rule::Ownership => {
            let best = p["best"].as_str();
            if best != Some(expected_cause) {
                return (false, format!("root cause {}, expected {expected_cause}", p["best"]));
            }
            let o = &p["ownership"];
            if o["team"] != truth.team.as_str() {
                return (false, format!("ownership evaluated for {}, expected {}", o["team"], truth.team));
            }
            if o["responsible"] == true && o["owns_cause_host"] == true {
                (true, format!("team {} owns the failing entity", truth.team))
            } else {
                (false, format!("team {} not attributed", truth.team))
            }
        }
        Rule::Remediation => {
            if p["cause"].as_str() != Some(expected_cause) {
                return (false, format!("remediation assessed against {}, expected {expected_cause}", p["cause"]));
            }
            let verdicts: BTreeMap<String, bool> = p["verdicts"]
                .as_array()
                .into_iter()
                .flatten()
                .filter_map(|v| Some((v["action_target"].as_str()?.to_owned(), v["aligned"].as_bool()?)))
                .collect();
            let expectations = truth
                .aligned_targets
                .iter()
                .map(|t| (t, true))
                .chain(truth.misaligned_targets.iter().map(|t| (t, false)));
            for (target, want) in expectations {
                match verdicts.get(target.as_str()) {
                    None => return (false, format!("no verdict for {target}")),
                    Some(got) if *got != want => {
                        return (false, format!("{target}: aligned = {got}, expected {want}"))
                    }
                    _ => {}
                }
            }
            (true, "mitigation safety assessed correctly".into())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bundled;

    #[test]
    fn mode_and_fault_must_agree() {
        let healthy_with_fault = r#"{"schema": "scenario/1", "name": "x", "mode": "healthy",
            "environment": "e", "codebook": "c",
            "fault": {"cause": "a@b", "signals": []}, "queries": []}"#;
        let err = Scenario::from_json(healthy_with_fault, |_| unreachable!()).unwrap_err();
        assert!(matches!(err, ScenarioError::Invalid(_)));
        let fault_without_spec = r#"{"schema": "scenario/1", "name": "x", "mode": "active_fault",
            "environment": "e", "codebook": "c", "queries": []}"#;
        assert!(Scenario::from_json(fault_without_spec, |_| unreachable!()).is_err());
    }

    #[test]
    fn unmapped_query_fails_at_load() {
        let text = r#"{"schema": "scenario/1", "name": "x", "mode": "healthy",
            "environment": "e", "codebook": "c",
            "queries": [{"id": "Q9", "request": {"method": "get_symptoms"}}]}"#;
        assert!(matches!(
            Scenario::from_json(text, |_| unreachable!()),
            Err(ScenarioError::UnmappedQuery(q)) if q == "Q9"
        ));
        let q5 = text.replace("Q9", "Q5");
        assert!(Scenario::from_json(&q5, |_| unreachable!()).is_err());
    }

    #[test]
    fn healthy_mode_cannot_inject() {
        let s = bundled::healthy_scenario();
        assert!(matches!(inject_fault(&s, 1), Err(ScenarioError::NotActiveFault)));
    }

    #[test]
    fn scripts_are_deterministic() {
        let s = bundled::fault_scenario();
        let a = crate::inference::render_observations(&inject_fault(&s, 11).unwrap());
        let b = crate::inference::render_observations(&inject_fault(&s, 11).unwrap());
        assert_eq!(a, b);
        let c = crate::inference::render_observations(&inject_fault(&s, 12).unwrap());
        assert_ne!(a, c);
    }
}
