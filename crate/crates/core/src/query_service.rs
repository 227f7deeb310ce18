//! Tool service: newline-delimited JSON requests in, one response per request
//! out, in arrival order.
//!
//! Request: `{"id": <any>, "method": "...", "params": {...}}`.
//! Response: `{"id", "status": "ok", "revision", "payload"}` or
//! `{"id", "status": "error", "revision", "error": {"code", "message"}}`.
//!
//! Every request binds one engine snapshot when it is dispatched, and the
//! response carries that snapshot's revision.

use std::collections::BTreeSet;
use std::io::{self, BufRead, Write};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::causality::CauseId;
use crate::engine::{Engine, Snapshot};
use crate::impact::{blast_radius, ownership_check, remediation_alignment, BlastRadius};
use crate::inference::{activate_symptoms, assess_health, localize, LocalizeOptions, RankedCause, Verdict};
use crate::topology::{Direction, EntityId, RelationKind};

pub const TOOL_SCHEMA: &str = "tool/1";

pub const METHODS: [&str; 6] = [
    "get_environment_health",
    "get_symptoms",
    "get_root_causes",
    "get_blast_radius",
    "check_remediation",
    "get_topology",
];

const DEFAULT_LIMIT: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    ParseError,
    InvalidRequest,
    UnknownMethod,
    InvalidParams,
    UnknownId,
    Internal,
}

impl ErrorCode {
    pub fn as_str(self) -> &'static str {
        match self {
            ErrorCode::ParseError => "parse_error",
            ErrorCode::InvalidRequest => "invalid_request",
            ErrorCode::UnknownMethod => "unknown_method",
            ErrorCode::InvalidParams => "invalid_params",
            ErrorCode::UnknownId => "unknown_id",
            ErrorCode::Internal => "internal",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolError {
    pub code: ErrorCode,
    pub message: String,
}

impl ToolError {
    fn new(code: ErrorCode, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Ok,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolRequest {
    pub id: Value,
    pub method: String,
    #[serde(default)]
    pub params: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolResponse {
    pub id: Value,
    pub status: Status,
    pub revision: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<ToolError>,
}

impl ToolResponse {
    fn ok(id: Value, revision: u64, payload: Value) -> Self {
        Self {
            id,
            status: Status::Ok,
            revision,
            payload: Some(payload),
            error: None,
        }
    }

    fn err(id: Value, revision: u64, error: ToolError) -> Self {
        Self {
            id,
            status: Status::Error,
            revision,
            payload: None,
            error: Some(error),
        }
    }

    pub fn is_ok(&self) -> bool {
        self.status == Status::Ok
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("response serializes")
    }
}

/// Startup banner advertising the wire schema and method set.
pub fn hello(snapshot: &Snapshot) -> Value {
    json!({
        "hello": "cie",
        "schema": TOOL_SCHEMA,
        "version": env!("CARGO_PKG_VERSION"),
        "environment": snapshot.environment_name,
        "revision": snapshot.revision,
        "methods": METHODS,
    })
}

/// Handles one raw frame against the engine's current snapshot.
pub fn handle_line(engine: &Engine, line: &str) -> ToolResponse {
    handle_frame(&engine.snapshot(), line)
}

/// Handles one raw frame against a fixed snapshot.
pub fn handle_frame(snapshot: &Snapshot, line: &str) -> ToolResponse {
    let revision = snapshot.revision;
    let value: Value = match serde_json::from_str(line) {
        Ok(v) => v,
        Err(e) => {
            return ToolResponse::err(Value::Null, revision, ToolError::new(ErrorCode::ParseError, e.to_string()))
        }
    };
    let id = value.get("id").cloned().unwrap_or(Value::Null);
    let request: ToolRequest = match serde_json::from_value(value) {
        Ok(r) => r,
        Err(e) => {
            return ToolResponse::err(id, revision, ToolError::new(ErrorCode::InvalidRequest, e.to_string()))
        }
    };
    handle(snapshot, &request)
}

/// Dispatches a parsed request.
pub fn handle(snapshot: &Snapshot, request: &ToolRequest) -> ToolResponse {
    let result = match request.method.as_str() {
        "get_environment_health" => params(&request.params).and_then(|p| environment_health(snapshot, p)),
        "get_symptoms" => params(&request.params).and_then(|p| symptoms(snapshot, p)),
        "get_root_causes" => params(&request.params).and_then(|p| root_causes(snapshot, p)),
        "get_blast_radius" => params(&request.params).and_then(|p| blast(snapshot, p)),
        "check_remediation" => params(&request.params).and_then(|p| remediation(snapshot, p)),
        "get_topology" => params(&request.params).and_then(|p| topology(snapshot, p)),
        other => Err(ToolError::new(
            ErrorCode::UnknownMethod,
            format!("unknown method `{other}`; expected one of {}", METHODS.join(", ")),
        )),
    };
    match result {
        Ok(payload) => ToolResponse::ok(request.id.clone(), snapshot.revision, payload),
        Err(e) => ToolResponse::err(request.id.clone(), snapshot.revision, e),
    }
}

fn params<T: DeserializeOwned>(raw: &Value) -> Result<T, ToolError> {
    let raw = match raw {
        Value::Null => Value::Object(Default::default()),
        other => other.clone(),
    };
    serde_json::from_value(raw).map_err(|e| ToolError::new(ErrorCode::InvalidParams, e.to_string()))
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct HealthParams {
    scope: Option<Vec<EntityId>>,
    namespace: Option<String>,
    limit: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct SymptomParams {
    scope: Option<Vec<EntityId>>,
    namespace: Option<String>,
    entity: Option<EntityId>,
    #[serde(default)]
    include_inactive: bool,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RootCauseParams {
    scope: Option<Vec<EntityId>>,
    namespace: Option<String>,
    limit: Option<usize>,
    team: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct BlastParams {
    scope: Option<Vec<EntityId>>,
    namespace: Option<String>,
    cause: Option<CauseId>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RemediationParams {
    scope: Option<Vec<EntityId>>,
    namespace: Option<String>,
    cause: Option<CauseId>,
    target: Option<EntityId>,
    targets: Option<Vec<EntityId>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct TopologyParams {
    scope: Option<Vec<EntityId>>,
    namespace: Option<String>,
    entity: Option<EntityId>,
    kind: Option<RelationKind>,
    direction: Option<Direction>,
}

fn resolve_scope(
    s: &Snapshot,
    scope: &Option<Vec<EntityId>>,
    namespace: &Option<String>,
) -> Result<Option<BTreeSet<EntityId>>, ToolError> {
    match (scope, namespace) {
        (Some(_), Some(_)) => Err(ToolError::new(
            ErrorCode::InvalidParams,
            "`scope` and `namespace` are mutually exclusive",
        )),
        (Some(ids), None) => {
            for id in ids {
                if !s.topology.contains(id) {
                    return Err(ToolError::new(ErrorCode::UnknownId, format!("unknown entity `{id}`")));
                }
            }
            Ok(Some(ids.iter().cloned().collect()))
        }
        (None, Some(ns)) => {
            let ids: BTreeSet<EntityId> = s
                .topology
                .entities()
                .filter(|e| e.metadata.get("namespace") == Some(ns))
                .map(|e| e.id.clone())
                .collect();
            if ids.is_empty() {
                return Err(ToolError::new(ErrorCode::UnknownId, format!("unknown namespace `{ns}`")));
            }
            Ok(Some(ids))
        }
        (None, None) => Ok(None),
    }
}

fn check_entity(s: &Snapshot, id: &EntityId) -> Result<(), ToolError> {
    if s.topology.contains(id) {
        Ok(())
    } else {
        Err(ToolError::new(ErrorCode::UnknownId, format!("unknown entity `{id}`")))
    }
}

fn team_of(s: &Snapshot, id: &EntityId) -> Value {
    s.topology
        .entity(id)
        .and_then(|e| e.owner_team.clone())
        .map_or(Value::Null, Value::String)
}

fn cause_json(s: &Snapshot, rank: usize, c: &RankedCause) -> Value {
    json!({
        "rank": rank,
        "cause": c.cause,
        "cause_name": c.cause_name,
        "host_entity": c.host_entity,
        "team": team_of(s, &c.host_entity),
        "prior": c.prior,
        "score": c.score,
        "posterior": c.posterior,
        "explained": c.explained,
        "unexplained": c.unexplained,
    })
}

fn environment_health(s: &Snapshot, p: HealthParams) -> Result<Value, ToolError> {
    let scope = resolve_scope(s, &p.scope, &p.namespace)?;
    let report = assess_health(&s.causality, &s.observations, scope.as_ref(), &LocalizeOptions::default());
    let affected: BTreeSet<&EntityId> = report
        .active_symptoms
        .symptoms
        .iter()
        .filter_map(|id| s.causality.symptom(id).map(|sym| &sym.host_entity))
        .collect();
    let summary = match report.verdict {
        Verdict::Healthy => "no active incidents".to_owned(),
        Verdict::Degraded => match report.supported_causes.first() {
            Some(top) => format!(
                "active incident: {} active symptom(s) on {} entities; most likely root cause `{}`",
                report.active_symptoms.len(),
                affected.len(),
                top.cause
            ),
            None => format!(
                "active incident: {} active symptom(s) with no supporting root cause",
                report.active_symptoms.len()
            ),
        },
    };
    let limit = p.limit.unwrap_or(DEFAULT_LIMIT);
    let causes: Vec<Value> = report
        .supported_causes
        .iter()
        .take(limit)
        .enumerate()
        .map(|(i, c)| cause_json(s, i + 1, c))
        .collect();
    Ok(json!({
        "verdict": report.verdict,
        "active_incident": report.verdict == Verdict::Degraded,
        "summary": summary,
        "as_of": report.active_symptoms.as_of,
        "active_symptoms": report.active_symptoms.symptoms,
        "affected_entities": affected,
        "supported_causes": causes,
        "supported_cause_count": report.supported_causes.len(),
    }))
}

fn symptoms(s: &Snapshot, p: SymptomParams) -> Result<Value, ToolError> {
    let mut scope = resolve_scope(s, &p.scope, &p.namespace)?;
    if let Some(entity) = &p.entity {
        check_entity(s, entity)?;
        let only = BTreeSet::from([entity.clone()]);
        scope = Some(match scope {
            Some(sc) => sc.intersection(&only).cloned().collect(),
            None => only,
        });
    }
    let active = activate_symptoms(&s.causality, &s.observations, scope.as_ref());
    let listed: Vec<Value> = s
        .causality
        .symptoms()
        .filter(|sym| scope.as_ref().is_none_or(|sc| sc.contains(&sym.host_entity)))
        .filter(|sym| p.include_inactive || active.symptoms.contains(&sym.id))
        .map(|sym| {
            json!({
                "id": sym.id,
                "symptom": sym.symptom_name,
                "entity": sym.host_entity,
                "active": active.symptoms.contains(&sym.id),
                "activation": sym.activation,
            })
        })
        .collect();
    Ok(json!({
        "as_of": active.as_of,
        "active_count": active.len(),
        "summary": if active.is_empty() { "no active symptoms".to_owned() } else { format!("{} active symptom(s)", active.len()) },
        "symptoms": listed,
    }))
}

fn diagnose(s: &Snapshot, scope: Option<&BTreeSet<EntityId>>) -> Vec<RankedCause> {
    let active = activate_symptoms(&s.causality, &s.observations, scope);
    localize(&s.causality, &active, &LocalizeOptions::default()).ranked
}

fn root_causes(s: &Snapshot, p: RootCauseParams) -> Result<Value, ToolError> {
    let scope = resolve_scope(s, &p.scope, &p.namespace)?;
    let ranked = diagnose(s, scope.as_ref());
    let limit = p.limit.unwrap_or(DEFAULT_LIMIT);
    let best = ranked.first();
    let ownership = match (&p.team, best) {
        (Some(team), Some(top)) => {
            let br = blast_radius(&s.topology, &s.causality, &s.codebook, &top.cause)
                .map_err(|e| ToolError::new(ErrorCode::Internal, e.to_string()))?;
            let owned: Vec<&EntityId> = br
                .direct_entities
                .iter()
                .filter(|id| br.owners.get(*id) == Some(team))
                .collect();
            let hosts_cause = br.owners.get(&br.host) == Some(team);
            json!({
                "team": team,
                "responsible": ownership_check(&br, team),
                "owns_cause_host": hosts_cause,
                "owned_impacted_entities": owned,
            })
        }
        (Some(team), None) => json!({
            "team": team,
            "responsible": false,
            "owns_cause_host": false,
            "owned_impacted_entities": [],
        }),
        (None, _) => Value::Null,
    };
    let summary = match best {
        None => "no root cause: no active symptoms".to_owned(),
        Some(top) => format!(
            "most likely root cause `{}` on `{}` (posterior {:.4})",
            top.cause, top.host_entity, top.posterior
        ),
    };
    let mut payload = json!({
        "verdict": if best.is_some() { Verdict::Degraded } else { Verdict::Healthy },
        "summary": summary,
        "best": best.map(|b| &b.cause),
        "root_causes": ranked.iter().take(limit).enumerate().map(|(i, c)| cause_json(s, i + 1, c)).collect::<Vec<_>>(),
        "candidate_count": ranked.len(),
    });
    if !ownership.is_null() {
        payload["ownership"] = ownership;
    }
    Ok(payload)
}

// The explicit cause, or the best-ranked one for the scope.
fn pick_cause(
    s: &Snapshot,
    cause: &Option<CauseId>,
    scope: Option<&BTreeSet<EntityId>>,
) -> Result<Option<CauseId>, ToolError> {
    match cause {
        Some(c) => {
            if s.causality.cause(c).is_none() {
                return Err(ToolError::new(ErrorCode::UnknownId, format!("unknown root cause `{c}`")));
            }
            Ok(Some(c.clone()))
        }
        None => Ok(diagnose(s, scope).first().map(|c| c.cause.clone())),
    }
}

fn compute_blast(s: &Snapshot, cause: &CauseId) -> Result<BlastRadius, ToolError> {
    blast_radius(&s.topology, &s.causality, &s.codebook, cause)
        .map_err(|e| ToolError::new(ErrorCode::Internal, e.to_string()))
}

fn blast(s: &Snapshot, p: BlastParams) -> Result<Value, ToolError> {
    let scope = resolve_scope(s, &p.scope, &p.namespace)?;
    let Some(cause) = pick_cause(s, &p.cause, scope.as_ref())? else {
        return Ok(json!({
            "cause": null,
            "summary": "no active root cause; no impacted services",
            "direct_entities": [],
            "downstream_entities": [],
            "transitive_entities": [],
            "impacted_teams": [],
            "multi_team": false,
        }));
    };
    let br = compute_blast(s, &cause)?;
    let downstream: BTreeSet<&EntityId> = br
        .direct_entities
        .iter()
        .filter(|id| !br.hosting_stack.contains(*id))
        .collect();
    let paths: serde_json::Map<String, Value> = br
        .paths
        .iter()
        .map(|(id, hops)| {
            let rendered: Vec<String> = hops
                .iter()
                .map(|h| format!("{} -> {} [{} via {}]", h.from, h.to, h.rule_id, h.relation))
                .collect();
            (id.to_string(), json!(rendered))
        })
        .collect();
    let summary = format!(
        "`{}` impacts {} downstream entities across {} team(s)",
        br.cause,
        downstream.len(),
        br.impacted_teams.len()
    );
    Ok(json!({
        "cause": br.cause,
        "host": br.host,
        "team": team_of(s, &br.host),
        "summary": summary,
        "direct_entities": br.direct_entities,
        "downstream_entities": downstream,
        "transitive_entities": br.transitive_entities,
        "impacted_teams": br.impacted_teams,
        "multi_team": br.impacted_teams.len() > 1,
        "owners": br.owners,
        "paths": paths,
        "truncated": br.truncated,
    }))
}

fn remediation(s: &Snapshot, p: RemediationParams) -> Result<Value, ToolError> {
    let scope = resolve_scope(s, &p.scope, &p.namespace)?;
    let targets: Vec<EntityId> = match (p.target, p.targets) {
        (Some(t), None) => vec![t],
        (None, Some(ts)) if !ts.is_empty() => ts,
        (Some(_), Some(_)) => {
            return Err(ToolError::new(
                ErrorCode::InvalidParams,
                "`target` and `targets` are mutually exclusive",
            ))
        }
        _ => {
            return Err(ToolError::new(
                ErrorCode::InvalidParams,
                "one of `target` or `targets` is required",
            ))
        }
    };
    for t in &targets {
        check_entity(s, t)?;
    }
    let Some(cause) = pick_cause(s, &p.cause, scope.as_ref())? else {
        return Ok(json!({
            "cause": null,
            "summary": "no active root cause; no remediation needed",
            "verdicts": [],
        }));
    };
    let br = compute_blast(s, &cause)?;
    let mut verdicts = Vec::with_capacity(targets.len());
    for t in &targets {
        let v = remediation_alignment(&br, &s.topology, t)
            .map_err(|e| ToolError::new(ErrorCode::UnknownId, e.to_string()))?;
        verdicts.push(v);
    }
    let aligned = verdicts.iter().filter(|v| v.aligned).count();
    Ok(json!({
        "cause": br.cause,
        "host": br.host,
        "summary": format!("{aligned} of {} proposed target(s) address the failure source `{}`", verdicts.len(), br.host),
        "verdicts": verdicts,
    }))
}

fn topology(s: &Snapshot, p: TopologyParams) -> Result<Value, ToolError> {
    let scope = resolve_scope(s, &p.scope, &p.namespace)?;
    if let Some(id) = &p.entity {
        check_entity(s, id)?;
        let direction = p.direction.unwrap_or(Direction::Both);
        let mut neighbors = Vec::new();
        for kind in RelationKind::ALL {
            if p.kind.is_some_and(|k| k != kind) {
                continue;
            }
            for (dir, tag) in [(Direction::Out, "out"), (Direction::In, "in")] {
                if direction != Direction::Both && direction != dir {
                    continue;
                }
                for n in s.topology.neighbors(id, Some(kind), dir).expect("entity checked") {
                    if scope.as_ref().is_none_or(|sc| sc.contains(&n)) {
                        neighbors.push(json!({"entity": n, "kind": kind, "direction": tag}));
                    }
                }
            }
        }
        let e = s.topology.entity(id).expect("entity checked");
        return Ok(json!({
            "entity": entity_json(e),
            "neighbors": neighbors,
        }));
    }
    if p.kind.is_some() || p.direction.is_some() {
        return Err(ToolError::new(
            ErrorCode::InvalidParams,
            "`kind` and `direction` require `entity`",
        ));
    }
    let inside = |id: &EntityId| scope.as_ref().is_none_or(|sc| sc.contains(id));
    let entities: Vec<Value> = s.topology.entities().filter(|e| inside(&e.id)).map(entity_json).collect();
    let relations: Vec<Value> = s
        .topology
        .relations()
        .filter(|r| inside(&r.source) && inside(&r.target))
        .map(|r| json!(r))
        .collect();
    Ok(json!({
        "entity_count": entities.len(),
        "relation_count": relations.len(),
        "entities": entities,
        "relations": relations,
    }))
}

fn entity_json(e: &crate::topology::Entity) -> Value {
    json!({
        "id": e.id,
        "name": e.name,
        "type": e.entity_type,
        "team": e.owner_team,
        "metadata": e.metadata,
    })
}

/// Counters reported when a serve loop ends.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ServeStats {
    pub requests: u64,
    pub errors: u64,
}

/// Runs the request loop until end of input. Blank lines are skipped; every
/// other line gets exactly one response, in order.
pub fn serve<R: BufRead, W: Write>(
    engine: &Engine,
    mut reader: R,
    mut writer: W,
    banner: bool,
) -> io::Result<ServeStats> {
    if banner {
        writeln!(writer, "{}", hello(&engine.snapshot()))?;
        writer.flush()?;
    }
    let mut stats = ServeStats::default();
    let mut buf = Vec::new();
    loop {
        buf.clear();
        if reader.read_until(b'\n', &mut buf)? == 0 {
            break;
        }
        let response = match std::str::from_utf8(&buf) {
            Ok(text) if text.trim().is_empty() => continue,
            Ok(text) => handle_line(engine, text.trim_end_matches(['\n', '\r'])),
            Err(e) => ToolResponse::err(
                Value::Null,
                engine.revision(),
                ToolError::new(ErrorCode::ParseError, format!("frame is not UTF-8: {e}")),
            ),
        };
        stats.requests += 1;
        if !response.is_ok() {
            stats.errors += 1;
        }
        writeln!(writer, "{}", response.to_line())?;
        writer.flush()?;
    }
    Ok(stats)
}

/// Serves each connection on a local socket with the same framing as stdio.
#[cfg(unix)]
pub fn serve_unix(engine: std::sync::Arc<Engine>, path: &std::path::Path) -> io::Result<()> {
    use std::os::unix::net::UnixListener;
    let listener = UnixListener::bind(path)?;
    for stream in listener.incoming() {
        let stream = stream?;
        let engine = engine.clone();
        std::thread::spawn(move || {
            let reader = io::BufReader::new(stream.try_clone()?);
            serve(&engine, reader, stream, true).map(|_| ())
        });
    }
    Ok(())
}
