mod common;

use std::collections::BTreeSet;

use cie_core::causality::{CausalityGraph, CauseId, InstantiateOptions, SymptomId};
use cie_core::knowledge_base::Codebook;
use cie_core::topology::{Direction, Entity, EntityGraph, EntityId, Relation, RelationKind};
use common::*;
use proptest::prelude::*;

fn relation_set(g: &EntityGraph) -> BTreeSet<Relation> {
    g.relations().collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn relations_always_reference_live_entities(seed in any::<u64>(), steps in 0usize..40) {
        let mut r = rng(seed);
        let Model { mut topology, codebook } = random_model(&mut r, 8, 3);
        for _ in 0..steps {
            mutate(&mut r, &mut topology, &codebook);
            for rel in topology.relations() {
                prop_assert!(topology.contains(&rel.source));
                prop_assert!(topology.contains(&rel.target));
            }
        }
    }

    #[test]
    fn both_direction_is_union_of_in_and_out(seed in any::<u64>()) {
        let mut r = rng(seed);
        let Model { topology, .. } = random_model(&mut r, 10, 0);
        for id in topology.entity_ids() {
            for kind in [None, Some(RelationKind::Conn), Some(RelationKind::Layer), Some(RelationKind::Comp)] {
                let out = topology.neighbors(id, kind, Direction::Out).unwrap();
                let inc = topology.neighbors(id, kind, Direction::In).unwrap();
                let both = topology.neighbors(id, kind, Direction::Both).unwrap();
                prop_assert_eq!(both, out.union(&inc).cloned().collect::<BTreeSet<_>>());
            }
        }
    }

    #[test]
    fn scope_is_idempotent(seed in any::<u64>(), mask in any::<u16>()) {
        let mut r = rng(seed);
        let Model { topology, .. } = random_model(&mut r, 10, 0);
        let ids: Vec<EntityId> = topology
            .entity_ids()
            .enumerate()
            .filter(|(i, _)| mask & (1 << i) != 0)
            .map(|(_, id)| id.clone())
            .collect();
        let once = topology.scope(ids.iter()).unwrap();
        let twice = once.scope(ids.iter()).unwrap();
        prop_assert_eq!(once.entity_ids().collect::<Vec<_>>(), twice.entity_ids().collect::<Vec<_>>());
        prop_assert_eq!(relation_set(&once), relation_set(&twice));
        for rel in once.relations() {
            prop_assert!(topology.has_relation(&rel));
        }
    }

    #[test]
    fn revision_strictly_increases_on_success(seed in any::<u64>(), steps in 1usize..30) {
        let mut r = rng(seed);
        let Model { mut topology, codebook } = random_model(&mut r, 6, 0);
        let mut last = topology.revision();
        for _ in 0..steps {
            let before = (topology.len(), relation_set(&topology));
            mutate(&mut r, &mut topology, &codebook);
            let changed = before != (topology.len(), relation_set(&topology));
            if changed {
                prop_assert!(topology.revision() > last);
            } else {
                prop_assert_eq!(topology.revision(), last);
            }
            last = topology.revision();
        }
    }

    #[test]
    fn codebook_round_trips_through_json(seed in any::<u64>()) {
        let mut r = rng(seed);
        let codebook = random_codebook(&mut r, 5);
        let back = Codebook::from_json(&codebook.to_json()).unwrap();
        prop_assert_eq!(back, codebook.clone());
        for c in codebook.root_causes() {
            prop_assert!(c.prior > 0.0 && c.prior <= 1.0);
            for l in &c.local_symptoms {
                prop_assert!(l.probability > 0.0 && l.probability <= 1.0);
            }
        }
    }

    #[test]
    fn causality_graph_is_bipartite_and_reproducible(seed in any::<u64>()) {
        let mut r = rng(seed);
        let Model { topology, codebook } = random_model(&mut r, 8, 4);
        let cg = CausalityGraph::instantiate(&topology, &codebook, InstantiateOptions::default()).unwrap();
        for e in cg.edges() {
            prop_assert!(cg.cause(&e.cause).is_some());
            prop_assert!(cg.symptom(&e.symptom).is_some());
            prop_assert!(cg.cause(&CauseId::from(e.symptom.as_str())).is_none());
            prop_assert!(e.probability > 0.0 && e.probability <= 1.0);
            prop_assert_eq!(e.derived_probability(), e.probability);
            let host = &cg.cause(&e.cause).unwrap().host_entity;
            let mut at = host.clone();
            for hop in &e.derivation {
                prop_assert_eq!(&hop.from, &at);
                prop_assert!(topology.has_relation(&hop.relation));
                at = hop.to.clone();
            }
            prop_assert_eq!(&at, &cg.symptom(&e.symptom).unwrap().host_entity);
        }
    }

    #[test]
    fn edges_match_walk_enumeration(seed in any::<u64>()) {
        let mut r = rng(seed);
        let Model { topology, codebook } = random_model(&mut r, 6, 4);
        let cg = CausalityGraph::instantiate(&topology, &codebook, options(4)).unwrap();
        let oracle = oracle_edges(&topology, &codebook, 4);
        let got: BTreeSet<(CauseId, SymptomId)> = cg.edges().map(|e| (e.cause.clone(), e.symptom.clone())).collect();
        prop_assert_eq!(&got, &oracle.keys().cloned().collect::<BTreeSet<_>>());
        for e in cg.edges() {
            prop_assert_eq!(e.probability, oracle[&(e.cause.clone(), e.symptom.clone())]);
        }
    }

    #[test]
    fn instantiation_is_deterministic(seed in any::<u64>()) {
        let mut r = rng(seed);
        let Model { topology, codebook } = random_model(&mut r, 8, 4);
        let a = CausalityGraph::instantiate(&topology, &codebook, InstantiateOptions::default()).unwrap();
        let b = CausalityGraph::instantiate(&topology, &codebook, InstantiateOptions::default()).unwrap();
        prop_assert_eq!(a.dump(), b.dump());
    }

    #[test]
    fn refresh_equals_full_instantiation(seed in any::<u64>(), steps in 1usize..12) {
        let mut r = rng(seed);
        let Model { mut topology, codebook } = random_model(&mut r, 8, 4);
        let opts = options(3);
        let mut cg = CausalityGraph::instantiate(&topology, &codebook, opts).unwrap();
        for _ in 0..steps {
            mutate(&mut r, &mut topology, &codebook);
            cg = cg.refresh(&topology, &codebook).unwrap();
            let full = CausalityGraph::instantiate(&topology, &codebook, opts).unwrap();
            prop_assert_eq!(cg.dump(), full.dump());
        }
    }

    #[test]
    fn adding_relations_never_weakens_edges(seed in any::<u64>()) {
        let mut r = rng(seed);
        let Model { mut topology, codebook } = random_model(&mut r, 8, 4);
        let before = CausalityGraph::instantiate(&topology, &codebook, InstantiateOptions::default()).unwrap();
        if add_random_relation(&mut r, &mut topology).is_some() {
            let after = CausalityGraph::instantiate(&topology, &codebook, InstantiateOptions::default()).unwrap();
            for e in before.edges() {
                let grown = after.edge(&e.cause, &e.symptom);
                prop_assert!(grown.is_some_and(|g| g.probability >= e.probability));
            }
        }
    }
}

#[test]
fn two_hop_chain_multiplies_local_probability_and_attenuation() {
    let codebook = Codebook::from_json(
        r#"{
          "schema": "codebook/1", "version": "chain",
          "types": [{"name": "service", "attributes": ["error_rate"]}],
          "symptoms": [{"name": "high_error_rate", "applies_to": "service",
                        "activation": {"attribute": "error_rate", "comparator": ">", "threshold": 0.05}}],
          "root_causes": [{"name": "code_defect", "applies_to": "service", "prior": 0.01,
                           "symptoms": [{"symptom": "high_error_rate", "probability": 0.9}]}],
          "propagation_rules": [{"id": "error_to_callers", "from": "high_error_rate", "over": "conn",
                                 "traversal": "reverse", "to": "high_error_rate", "attenuation": 0.8}]
        }"#,
    )
    .unwrap();
    let mut topology = EntityGraph::new();
    topology.add_entity(Entity::new("a", "service")).unwrap();
    topology.add_entity(Entity::new("b", "service")).unwrap();
    topology.add_relation(Relation::new("a", "b", RelationKind::Conn)).unwrap();
    let cg = CausalityGraph::instantiate(&topology, &codebook, InstantiateOptions::default()).unwrap();
    let b = EntityId::from("b");
    let edge = cg
        .edge(&CauseId::new("code_defect", &b), &SymptomId::new("high_error_rate", &EntityId::from("a")))
        .unwrap();
    // hand product 0.9 * 0.8, checked against the walk oracle too
    assert_eq!(edge.probability, 0.9 * 0.8);
    assert!((edge.probability - 0.72).abs() < 1e-15);
    let oracle = oracle_edges(&topology, &codebook, 8);
    assert_eq!(oracle[&(edge.cause.clone(), edge.symptom.clone())], edge.probability);
}
