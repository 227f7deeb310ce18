//! Random model generators and brute-force oracles shared by the property
//! and acceptance tests. The oracles deliberately avoid the engine's own
//! traversal code.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use cie_core::attributes::{AttributeDependency, AttributeFunction, AttributeGraph, AttributeId, AttributeNode};
use cie_core::causality::{CausalityGraph, CauseId, InstantiateOptions, SymptomId};
use cie_core::inference::ActiveSymptomSet;
use cie_core::knowledge_base::{
    Activation, Codebook, EntityTypeDef, LocalSymptom, PropagationRule, RootCauseDef, SymptomDef, Traversal,
};
use cie_core::topology::{Direction, Entity, EntityGraph, EntityId, Relation, RelationKind};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub use rand::SeedableRng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub const TEAMS: [&str; 3] = ["red", "green", "blue"];

pub struct Model {
    pub topology: EntityGraph,
    pub codebook: Codebook,
}

fn kind(rng: &mut ChaCha8Rng) -> RelationKind {
    RelationKind::ALL[rng.gen_range(0..3)]
}

/// Random codebook over 1-3 types and up to 5 symptom names, with up to
/// `max_rules` propagation rules.
pub fn random_codebook(rng: &mut ChaCha8Rng, max_rules: usize) -> Codebook {
    let n_types = rng.gen_range(1..=3);
    let types: Vec<EntityTypeDef> = (0..n_types)
        .map(|i| EntityTypeDef {
            name: format!("t{i}"),
            attributes: vec![],
        })
        .collect();
    let n_symptoms = rng.gen_range(1..=5);
    let mut symptoms = Vec::new();
    for s in 0..n_symptoms {
        for t in 0..n_types {
            if rng.gen_bool(0.6) || t == s % n_types {
                symptoms.push(SymptomDef {
                    name: format!("s{s}"),
                    applies_to: format!("t{t}"),
                    activation: Activation::event(),
                });
            }
        }
    }
    let mut causes = Vec::new();
    for t in 0..n_types {
        let declared: Vec<&SymptomDef> = symptoms.iter().filter(|s| s.applies_to == format!("t{t}")).collect();
        for c in 0..rng.gen_range(0..=2) {
            let k = rng.gen_range(1..=2);
            let mut locals: Vec<&&SymptomDef> = declared.choose_multiple(rng, k).collect();
            locals.sort_by(|a, b| a.name.cmp(&b.name));
            causes.push(RootCauseDef {
                name: format!("c{c}"),
                applies_to: format!("t{t}"),
                prior: rng.gen_range(0.001..=0.5),
                local_symptoms: locals
                    .into_iter()
                    .map(|s| LocalSymptom {
                        symptom: s.name.clone(),
                        probability: rng.gen_range(0.05..=1.0),
                    })
                    .collect(),
            });
        }
    }
    let rules = (0..rng.gen_range(0..=max_rules))
        .map(|i| PropagationRule {
            rule_id: format!("r{i}"),
            from_symptom: format!("s{}", rng.gen_range(0..n_symptoms)),
            over_relation: kind(rng),
            traversal: if rng.gen_bool(0.5) { Traversal::Forward } else { Traversal::Reverse },
            to_symptom: format!("s{}", rng.gen_range(0..n_symptoms)),
            attenuation: rng.gen_range(0.1..=1.0),
        })
        .collect();
    Codebook::from_parts("random", types, causes, symptoms, rules).expect("generator emits valid codebooks")
}

pub fn random_entity(rng: &mut ChaCha8Rng, id: &str, codebook: &Codebook) -> Entity {
    let t = &codebook.types()[rng.gen_range(0..codebook.types().len())].name;
    Entity::new(id, t.as_str()).with_team(TEAMS[rng.gen_range(0..TEAMS.len())])
}

/// Adds a random relation if one is possible. Returns it.
pub fn add_random_relation(rng: &mut ChaCha8Rng, topology: &mut EntityGraph) -> Option<Relation> {
    let ids: Vec<EntityId> = topology.entity_ids().cloned().collect();
    if ids.len() < 2 {
        return None;
    }
    for _ in 0..20 {
        let a = ids.choose(rng).unwrap().clone();
        let b = ids.choose(rng).unwrap().clone();
        let r = Relation::new(a, b, kind(rng));
        if r.source != r.target && !topology.has_relation(&r) {
            topology.add_relation(r.clone()).unwrap();
            return Some(r);
        }
    }
    None
}

pub fn random_topology(rng: &mut ChaCha8Rng, codebook: &Codebook, max_entities: usize) -> EntityGraph {
    let mut g = EntityGraph::new();
    for i in 0..rng.gen_range(1..=max_entities) {
        g.add_entity(random_entity(rng, &format!("e{i}"), codebook)).unwrap();
    }
    let n = g.len();
    for _ in 0..rng.gen_range(0..=n * 2) {
        add_random_relation(rng, &mut g);
    }
    g
}

pub fn random_model(rng: &mut ChaCha8Rng, max_entities: usize, max_rules: usize) -> Model {
    let codebook = random_codebook(rng, max_rules);
    let topology = random_topology(rng, &codebook, max_entities);
    Model { topology, codebook }
}

/// One random topology mutation. Entity ids are drawn from a small pool so
/// removals and re-additions collide.
pub fn mutate(rng: &mut ChaCha8Rng, topology: &mut EntityGraph, codebook: &Codebook) {
    let ids: Vec<EntityId> = topology.entity_ids().cloned().collect();
    match rng.gen_range(0..4) {
        0 => {
            let id = format!("e{}", rng.gen_range(0..12));
            if !topology.contains(&EntityId::from(id.as_str())) {
                topology.add_entity(random_entity(rng, &id, codebook)).unwrap();
            }
        }
        1 if !ids.is_empty() => {
            topology.remove_entity(ids.choose(rng).unwrap()).unwrap();
        }
        2 => {
            add_random_relation(rng, topology);
        }
        _ => {
            let rels: Vec<Relation> = topology.relations().collect();
            if let Some(r) = rels.choose(rng) {
                topology.remove_relation(r).unwrap();
            }
        }
    }
}

/// States one rule application away, computed straight from the codebook
/// and neighbor sets.
fn one_hop(topology: &EntityGraph, codebook: &Codebook, entity: &EntityId, symptom: &str) -> Vec<(EntityId, String, f64)> {
    let mut out = Vec::new();
    for rule in codebook.rules().iter().filter(|r| r.from_symptom == symptom) {
        let dir = match rule.traversal {
            Traversal::Forward => Direction::Out,
            Traversal::Reverse => Direction::In,
        };
        for n in topology.neighbors(entity, Some(rule.over_relation), dir).unwrap() {
            let ty = &topology.entity(&n).unwrap().entity_type;
            if codebook.symptom_def(&rule.to_symptom, ty).is_some() {
                out.push((n, rule.to_symptom.clone(), rule.attenuation));
            }
        }
    }
    out
}

/// Max-probability causal edges by exhaustive walk enumeration up to
/// `depth` hops.
pub fn oracle_edges(topology: &EntityGraph, codebook: &Codebook, depth: usize) -> BTreeMap<(CauseId, SymptomId), f64> {
    fn walk(
        topology: &EntityGraph,
        codebook: &Codebook,
        entity: &EntityId,
        symptom: &str,
        p: f64,
        left: usize,
        best: &mut BTreeMap<(EntityId, String), f64>,
    ) {
        let key = (entity.clone(), symptom.to_owned());
        let cur = best.entry(key).or_insert(p);
        if p > *cur {
            *cur = p;
        }
        if left == 0 {
            return;
        }
        for (n, s, a) in one_hop(topology, codebook, entity, symptom) {
            walk(topology, codebook, &n, &s, p * a, left - 1, best);
        }
    }
    let mut out = BTreeMap::new();
    for e in topology.entities() {
        for def in codebook.root_causes().iter().filter(|c| c.applies_to == e.entity_type) {
            let mut best = BTreeMap::new();
            for local in &def.local_symptoms {
                walk(topology, codebook, &e.id, &local.symptom, local.probability, depth, &mut best);
            }
            let cause = CauseId::new(&def.name, &e.id);
            for ((entity, symptom), p) in best {
                out.insert((cause.clone(), SymptomId::new(&symptom, &entity)), p);
            }
        }
    }
    out
}

/// Entities reached by iterating one-hop expansion from the cause's local
/// symptoms for `depth` rounds, plus the host.
pub fn oracle_blast(topology: &EntityGraph, codebook: &Codebook, cause: &CauseId, depth: usize) -> BTreeSet<EntityId> {
    let (name, host) = cause.as_str().split_once('@').unwrap();
    let host = EntityId::from(host);
    let ty = &topology.entity(&host).unwrap().entity_type;
    let def = codebook
        .root_causes()
        .iter()
        .find(|c| c.name == name && &c.applies_to == ty)
        .unwrap();
    let mut seen: BTreeSet<(EntityId, String)> = def
        .local_symptoms
        .iter()
        .map(|l| (host.clone(), l.symptom.clone()))
        .collect();
    for _ in 0..depth {
        let next: BTreeSet<(EntityId, String)> = seen
            .iter()
            .flat_map(|(e, s)| one_hop(topology, codebook, e, s))
            .map(|(e, s, _)| (e, s))
            .collect();
        let before = seen.len();
        seen.extend(next);
        if seen.len() == before {
            break;
        }
    }
    let mut out: BTreeSet<EntityId> = seen.into_iter().map(|(e, _)| e).collect();
    out.insert(host);
    out
}

/// A causality graph with one entity hosting `n_causes` causes over
/// `n_symptoms` event symptoms, with arbitrary priors and edge
/// probabilities, plus a random active set.
pub fn random_inference_case(
    rng: &mut ChaCha8Rng,
    prior_scale: f64,
) -> (Codebook, EntityGraph, ActiveSymptomSet) {
    let n_causes = rng.gen_range(1..=12);
    let n_symptoms = rng.gen_range(1..=20);
    let symptoms: Vec<SymptomDef> = (0..n_symptoms)
        .map(|i| SymptomDef {
            name: format!("s{i:02}"),
            applies_to: "host".into(),
            activation: Activation::event(),
        })
        .collect();
    let causes: Vec<RootCauseDef> = (0..n_causes)
        .map(|i| {
            let k = rng.gen_range(0..=n_symptoms.min(6));
            let mut picked: Vec<usize> = (0..n_symptoms).collect::<Vec<_>>().choose_multiple(rng, k).copied().collect();
            picked.sort();
            RootCauseDef {
                name: format!("c{i:02}"),
                applies_to: "host".into(),
                prior: rng.gen_range(1e-4..=1e-3) * prior_scale,
                local_symptoms: picked
                    .into_iter()
                    .map(|s| LocalSymptom {
                        symptom: format!("s{s:02}"),
                        probability: rng.gen_range(1e-3..=1.0),
                    })
                    .collect(),
            }
        })
        .collect();
    let codebook = Codebook::from_parts(
        "inference",
        vec![EntityTypeDef {
            name: "host".into(),
            attributes: vec![],
        }],
        causes,
        symptoms,
        vec![],
    )
    .unwrap();
    let mut topology = EntityGraph::new();
    topology.add_entity(Entity::new("h", "host")).unwrap();
    let host = EntityId::from("h");
    let active = ActiveSymptomSet {
        symptoms: (0..n_symptoms)
            .filter(|_| rng.gen_bool(0.3))
            .map(|i| SymptomId::new(&format!("s{i:02}"), &host))
            .collect(),
        as_of: 0,
    };
    (codebook, topology, active)
}

/// Brute-force ranking: linear-space product over every candidate, sorted by
/// score, then prior, then id.
pub fn oracle_rank(cg: &CausalityGraph, active: &ActiveSymptomSet, leak: f64) -> Vec<(CauseId, f64)> {
    let explains = |c: &CauseId, s: &SymptomId| cg.edges().find(|e| &e.cause == c && &e.symptom == s).map(|e| e.probability);
    let mut candidates: Vec<&CauseId> = cg
        .causes()
        .map(|c| &c.id)
        .filter(|c| active.symptoms.iter().any(|s| explains(c, s).is_some()))
        .collect();
    if candidates.is_empty() && !active.symptoms.is_empty() {
        candidates = cg.causes().map(|c| &c.id).collect();
    }
    let mut scored: Vec<(CauseId, f64, f64)> = candidates
        .into_iter()
        .map(|c| {
            let prior = cg.cause(c).unwrap().prior;
            let mut score = prior;
            for s in &active.symptoms {
                score *= explains(c, s).unwrap_or(leak);
            }
            (c.clone(), score, prior)
        })
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(b.2.total_cmp(&a.2)).then_with(|| a.0.cmp(&b.0)));
    scored.into_iter().map(|(c, s, _)| (c, s)).collect()
}

pub fn options(depth: usize) -> InstantiateOptions {
    InstantiateOptions { max_depth: depth }
}

/// Random attribute DAG: edges only go from lower to higher index, every
/// dependent uses one function form, all units equal.
pub fn random_attribute_dag(rng: &mut ChaCha8Rng) -> AttributeGraph {
    let n = rng.gen_range(2..=12);
    let mut g = AttributeGraph::new();
    let id = |i: usize| AttributeId::new(format!("e{i}.a"));
    let mut parents: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (j, ps) in parents.iter_mut().enumerate().skip(1) {
        for i in 0..j {
            if rng.gen_bool(0.3) {
                ps.push(i);
            }
        }
    }
    for (i, ps) in parents.iter().enumerate() {
        g.add_node(AttributeNode {
            id: id(i),
            host_entity: EntityId::new(format!("e{i}")),
            attribute_name: "a".into(),
            unit: "u".into(),
            baseline: 0.0,
            value: ps.is_empty().then(|| rng.gen_range(-10.0..10.0)),
            overridable: !ps.is_empty() && rng.gen_bool(0.2),
        })
        .unwrap();
    }
    for (j, ps) in parents.iter_mut().enumerate() {
        if ps.is_empty() {
            continue;
        }
        let form = rng.gen_range(0..4);
        if form >= 2 {
            // unary forms keep only one parent
            ps.truncate(1);
        }
        let function = match form {
            0 => AttributeFunction::Sum,
            1 => AttributeFunction::Max,
            2 => AttributeFunction::Affine {
                a: rng.gen_range(-2.0..2.0),
                b: rng.gen_range(-1.0..1.0),
            },
            _ => {
                let mut xs: Vec<f64> = (0..3).map(|_| rng.gen_range(-20.0..20.0)).collect();
                xs.sort_by(f64::total_cmp);
                xs.dedup();
                if xs.len() < 2 {
                    xs = vec![-1.0, 1.0];
                }
                let mut ys: Vec<f64> = xs.iter().map(|_| rng.gen_range(0.0..5.0)).collect();
                ys.sort_by(f64::total_cmp);
                if rng.gen_bool(0.5) {
                    ys.reverse();
                }
                AttributeFunction::Lookup {
                    points: xs.into_iter().zip(ys).collect(),
                }
            }
        };
        for &p in ps.iter() {
            g.add_dependency(AttributeDependency {
                from: id(p),
                to: id(j),
                function: function.clone(),
            })
            .unwrap();
        }
    }
    g
}

/// A topological order chosen uniformly among ready nodes at each step.
pub fn random_topological_order(rng: &mut ChaCha8Rng, g: &AttributeGraph) -> Vec<AttributeId> {
    let mut indegree: BTreeMap<AttributeId, usize> = g.nodes().map(|n| (n.id.clone(), 0)).collect();
    let deps: Vec<AttributeDependency> = g.dependencies().collect();
    for d in &deps {
        *indegree.get_mut(&d.to).unwrap() += 1;
    }
    let mut ready: Vec<AttributeId> = indegree.iter().filter(|(_, d)| **d == 0).map(|(k, _)| k.clone()).collect();
    let mut order = Vec::new();
    while !ready.is_empty() {
        let i = rng.gen_range(0..ready.len());
        let id = ready.swap_remove(i);
        for d in deps.iter().filter(|d| d.from == id) {
            let e = indegree.get_mut(&d.to).unwrap();
            *e -= 1;
            if *e == 0 {
                ready.push(d.to.clone());
            }
        }
        order.push(id);
    }
    order
}

/// Recursive evaluation straight from the dependency list. Parents are
/// combined in id order.
pub fn recursive_eval(g: &AttributeGraph, id: &AttributeId) -> f64 {
    let mut incoming: Vec<AttributeDependency> = g.dependencies().filter(|d| &d.to == id).collect();
    incoming.sort_by(|a, b| a.from.cmp(&b.from));
    if incoming.is_empty() {
        return g.node(id).unwrap().value.unwrap();
    }
    let inputs: Vec<f64> = incoming.iter().map(|d| recursive_eval(g, &d.from)).collect();
    match &incoming[0].function {
        AttributeFunction::Sum => inputs.iter().sum(),
        AttributeFunction::Max => inputs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        AttributeFunction::Affine { a, b } => a * inputs[0] + b,
        AttributeFunction::Lookup { points } => {
            let x = inputs[0];
            let (first, last) = (points[0], points[points.len() - 1]);
            if x <= first.0 {
                return first.1;
            }
            if x >= last.0 {
                return last.1;
            }
            let w = points.windows(2).find(|w| x <= w[1].0).unwrap();
            let ((x0, y0), (x1, y1)) = (w[0], w[1]);
            y0 + (y1 - y0) * (x - x0) / (x1 - x0)
        }
        AttributeFunction::Learned { .. } => unreachable!("learned forms are rejected"),
    }
}

const VALID_FRAMES: [&str; 6] = [
    r#"{"id": 1, "method": "get_environment_health", "params": {"namespace": "otel-demo"}}"#,
    r#"{"id": "b", "method": "get_root_causes", "params": {"team": "payments"}}"#,
    r#"{"id": 3, "method": "get_blast_radius", "params": {}}"#,
    r#"{"id": 4, "method": "check_remediation", "params": {"targets": ["checkout"]}}"#,
    r#"{"id": 5, "method": "get_topology", "params": {"entity": "checkout"}}"#,
    r#"{"id": 6, "method": "get_symptoms", "params": {"include_inactive": true}}"#,
];

/// A frame that must be rejected: malformed text, truncations, bad shapes,
/// unknown methods, ill-typed params or ids that name nothing.
pub fn fuzz_frame(rng: &mut ChaCha8Rng) -> String {
    let method = cie_core::query_service::METHODS[rng.gen_range(0..6)];
    match rng.gen_range(0..9) {
        0 => {
            let n = rng.gen_range(1..40);
            (0..n).map(|_| char::from(rng.gen_range(0x20u8..0x7f))).collect()
        }
        1 => {
            let v = VALID_FRAMES[rng.gen_range(0..VALID_FRAMES.len())];
            v[..rng.gen_range(1..v.len() - 1)].to_owned()
        }
        2 => format!(r#"{{"id": {}, "method": "no_such_{}", "params": {{}}}}"#, rng.gen::<u32>(), rng.gen::<u16>()),
        3 => format!(r#"{{"method": "{}", "params": {{}}}}"#, method),
        4 => ["[]", "42", "null", "\"x\"", "true", r#"{"id": 1}"#, r#"{"id": 1, "method": 7}"#][rng.gen_range(0..7)].to_owned(),
        5 => {
            let bad = [
                r#"{"scope": 5}"#,
                r#"{"limit": "ten"}"#,
                r#"{"unexpected": true}"#,
                r#"{"scope": ["checkout"], "namespace": "otel-demo"}"#,
                r#"[1, 2]"#,
            ][rng.gen_range(0..5)];
            format!(r#"{{"id": {}, "method": "{}", "params": {bad}}}"#, rng.gen::<u16>(), method)
        }
        6 => {
            let ghost = format!("ghost-{}", rng.gen::<u32>());
            let params = match rng.gen_range(0..5) {
                0 => format!(r#"{{"scope": ["{ghost}"]}}"#),
                1 => format!(r#"{{"namespace": "{ghost}"}}"#),
                _ => format!(r#"{{"entity": "{ghost}"}}"#),
            };
            let m = ["get_environment_health", "get_symptoms", "get_topology"][rng.gen_range(0..3)];
            let params = if m == "get_environment_health" && params.contains("entity") {
                format!(r#"{{"scope": ["{ghost}"]}}"#)
            } else {
                params
            };
            format!(r#"{{"id": {}, "method": "{m}", "params": {params}}}"#, rng.gen::<u16>())
        }
        7 => {
            let ghost = format!("ghost-{}@nowhere", rng.gen::<u32>());
            match rng.gen_range(0..3) {
                0 => format!(r#"{{"id": 7, "method": "get_blast_radius", "params": {{"cause": "{ghost}"}}}}"#),
                1 => format!(r#"{{"id": 7, "method": "check_remediation", "params": {{"target": "{ghost}"}}}}"#),
                _ => format!(r#"{{"id": 7, "method": "check_remediation", "params": {{"cause": "{ghost}", "target": "checkout"}}}}"#),
            }
        }
        _ => {
            let mut bytes = VALID_FRAMES[rng.gen_range(0..VALID_FRAMES.len())].as_bytes().to_vec();
            let i = rng.gen_range(0..bytes.len());
            bytes[i] = b"{}\",:"[rng.gen_range(0..5)];
            let s = String::from_utf8(bytes).unwrap();
            if serde_json::from_str::<serde_json::Value>(&s).is_ok() {
                "{".to_owned() + &s
            } else {
                s
            }
        }
    }
}

pub fn valid_frames() -> &'static [&'static str] {
    &VALID_FRAMES
}

/// The bundled model with the active-fault observation script ingested.
pub fn fault_engine() -> cie_core::engine::Engine {
    let scenario = cie_core::bundled::fault_scenario();
    let engine = scenario.engine().unwrap();
    engine
        .ingest(&cie_core::scenario::observation_script(&scenario, scenario.seed).unwrap())
        .unwrap();
    engine
}

/// Checks one fuzzed response: structured error, parseable line, known code.
pub fn assert_structured_error(frame: &str, response: &cie_core::query_service::ToolResponse) {
    assert!(!response.is_ok(), "frame unexpectedly accepted: {frame}");
    let error = response.error.as_ref().expect("error body");
    assert!(!error.message.is_empty());
    let line: serde_json::Value = serde_json::from_str(&response.to_line()).unwrap();
    assert_eq!(line["status"], "error");
    assert!(line["error"]["code"].is_string());
}
