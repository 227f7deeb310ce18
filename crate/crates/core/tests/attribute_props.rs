mod common;

use cie_core::attributes::{
    AttributeDependency, AttributeFunction, AttributeGraph, AttributeId, AttributeNode, CHANGE_TOLERANCE,
};
use cie_core::topology::EntityId;
use common::*;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn any_topological_order_gives_identical_values(seed in any::<u64>()) {
        let mut r = rng(seed);
        let g = random_attribute_dag(&mut r);
        let reference = g.evaluate().unwrap();
        for _ in 0..4 {
            let order = random_topological_order(&mut r, &g);
            prop_assert_eq!(&g.evaluate_in_order(&order).unwrap(), &reference);
        }
        for (id, v) in &reference {
            prop_assert_eq!(*v, recursive_eval(&g, id));
        }
    }

    #[test]
    fn zero_delta_changes_nothing(seed in any::<u64>()) {
        let mut r = rng(seed);
        let g = random_attribute_dag(&mut r);
        for n in g.nodes() {
            if g.is_source(&n.id) || n.overridable {
                prop_assert!(g.propagate_perturbation(&n.id, 0.0).unwrap().is_empty());
            }
        }
    }

    #[test]
    fn changes_stay_within_descendants_and_match_re_evaluation(seed in any::<u64>(), delta in -5.0f64..5.0) {
        let mut r = rng(seed);
        let g = random_attribute_dag(&mut r);
        let before = g.evaluate().unwrap();
        for n in g.nodes().filter(|n| g.is_source(&n.id)) {
            let changes = g.propagate_perturbation(&n.id, delta).unwrap();
            let desc = g.descendants(&n.id).unwrap();
            prop_assert!(changes.keys().all(|k| desc.contains(k)));

            let mut moved = g.clone();
            moved.set_value(&n.id, before[&n.id] + delta).unwrap();
            let after = moved.evaluate().unwrap();
            let expected: Vec<&AttributeId> = after
                .iter()
                .filter(|(k, v)| (**v - before[*k]).abs() > CHANGE_TOLERANCE)
                .map(|(k, _)| k)
                .collect();
            prop_assert_eq!(changes.keys().collect::<Vec<_>>(), expected);
            for (k, c) in &changes {
                prop_assert_eq!(c.old, before[k]);
                prop_assert_eq!(c.new, after[k]);
            }
        }
    }
}

fn node(name: &str, value: Option<f64>) -> AttributeNode {
    AttributeNode {
        id: AttributeId::new(format!("{name}.v")),
        host_entity: EntityId::new(name),
        attribute_name: "v".into(),
        unit: "ms".into(),
        baseline: 0.0,
        value,
        overridable: false,
    }
}

fn dep(from: &str, to: &str, function: AttributeFunction) -> AttributeDependency {
    AttributeDependency {
        from: AttributeId::new(format!("{from}.v")),
        to: AttributeId::new(format!("{to}.v")),
        function,
    }
}

fn diamond(join: AttributeFunction) -> AttributeGraph {
    let mut g = AttributeGraph::new();
    g.add_node(node("a", Some(3.0))).unwrap();
    for n in ["b", "c", "d"] {
        g.add_node(node(n, None)).unwrap();
    }
    g.add_dependency(dep("a", "b", AttributeFunction::Affine { a: 2.0, b: 1.0 })).unwrap();
    g.add_dependency(dep("a", "c", AttributeFunction::Affine { a: -1.0, b: 10.0 })).unwrap();
    g.add_dependency(dep("b", "d", join.clone())).unwrap();
    g.add_dependency(dep("c", "d", join)).unwrap();
    g
}

#[test]
fn diamonds_match_recursive_oracle() {
    let d = AttributeId::new("d.v");
    let sum = diamond(AttributeFunction::Sum);
    // b = 7, c = 7
    assert_eq!(sum.evaluate().unwrap()[&d], 14.0);
    assert_eq!(recursive_eval(&sum, &d), 14.0);
    let max = diamond(AttributeFunction::Max);
    assert_eq!(max.evaluate().unwrap()[&d], recursive_eval(&max, &d));

    // a + 1: b = 9, c = 6, so the sum moves by +1 and the max by +2
    let a = AttributeId::new("a.v");
    let changes = sum.propagate_perturbation(&a, 1.0).unwrap();
    assert_eq!(changes[&d].new, 15.0);
    assert_eq!(changes.len(), 4);
    let changes = max.propagate_perturbation(&a, 1.0).unwrap();
    assert_eq!(changes[&d].new, 9.0);
}

#[test]
fn diamond_with_cancelling_branches_reports_no_change_at_join() {
    let mut g = AttributeGraph::new();
    g.add_node(node("a", Some(1.0))).unwrap();
    for n in ["b", "c", "d"] {
        g.add_node(node(n, None)).unwrap();
    }
    g.add_dependency(dep("a", "b", AttributeFunction::Affine { a: 1.0, b: 0.0 })).unwrap();
    g.add_dependency(dep("a", "c", AttributeFunction::Affine { a: -1.0, b: 0.0 })).unwrap();
    g.add_dependency(dep("b", "d", AttributeFunction::Sum)).unwrap();
    g.add_dependency(dep("c", "d", AttributeFunction::Sum)).unwrap();
    let changes = g.propagate_perturbation(&AttributeId::new("a.v"), 2.0).unwrap();
    assert!(!changes.contains_key(&AttributeId::new("d.v")));
    assert_eq!(changes.len(), 3);
}

#[test]
fn two_hundred_dags_hold_every_evaluation_property() {
    for seed in 0..200u64 {
        let mut r = rng(seed);
        let g = random_attribute_dag(&mut r);
        let reference = g.evaluate().unwrap();
        let order = random_topological_order(&mut r, &g);
        assert_eq!(g.evaluate_in_order(&order).unwrap(), reference, "seed {seed}");
        for n in g.nodes().filter(|n| g.is_source(&n.id)) {
            assert!(g.propagate_perturbation(&n.id, 0.0).unwrap().is_empty());
            let desc = g.descendants(&n.id).unwrap();
            assert!(g.propagate_perturbation(&n.id, 1.5).unwrap().keys().all(|k| desc.contains(k)));
        }
    }
}
