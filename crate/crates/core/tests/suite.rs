mod common;

use std::collections::BTreeMap;

use cptsketch::evaluation::{build_suite, suite_stats, Category, SuiteSpec};
use cptsketch::model::validate;

fn max_nesting(t: &cptsketch::CptNode, kind: cptsketch::OperatorKind) -> usize {
    let own = usize::from(t.operator_kind() == Some(kind));
    own + t.children.iter().map(|c| max_nesting(c, kind)).max().unwrap_or(0)
}

fn depth(t: &cptsketch::CptNode) -> usize {
    1 + t.children.iter().map(depth).max().unwrap_or(0)
}

#[test]
fn default_suite_composition_and_predicates() {
    let spec = SuiteSpec::default();
    let suite = build_suite(&spec, 2024).unwrap();
    assert_eq!(suite.len(), 100);

    let mut counts = BTreeMap::new();
    for e in &suite {
        *counts.entry(e.category).or_insert(0) += 1;
        assert!(validate(&e.cpt).is_empty());
        let ok = match e.category {
            Category::Depth2 => depth(&e.cpt) == 2,
            Category::Depth3 => depth(&e.cpt) == 3,
            Category::Depth4 => depth(&e.cpt) == 4,
            Category::Depth5 => depth(&e.cpt) == 5,
            Category::MultilayerLoop => max_nesting(&e.cpt, cptsketch::OperatorKind::Loop) >= 2,
            Category::MultilayerSelection => {
                max_nesting(&e.cpt, cptsketch::OperatorKind::Exclusive) >= 2
            }
            Category::ManyNodes => common::node_count(&e.cpt) > 15,
        };
        assert!(ok, "{} filed under {}", e.cpt, e.category);
    }
    let expected = [10, 20, 20, 20, 10, 10, 10];
    for (c, n) in Category::ALL.iter().zip(expected) {
        assert_eq!(counts[c], n, "{c}");
    }

    let ids: std::collections::BTreeSet<_> = suite.iter().map(|e| &e.id).collect();
    assert_eq!(ids.len(), 100);
}

#[test]
fn suite_is_deterministic_per_seed() {
    let spec = SuiteSpec::default();
    let a = build_suite(&spec, 7).unwrap();
    let b = build_suite(&spec, 7).unwrap();
    assert_eq!(a, b);
    let c = build_suite(&spec, 8).unwrap();
    assert_ne!(a, c);
}

#[test]
fn suite_stats_match_recount() {
    let suite = build_suite(&SuiteSpec::default(), 3).unwrap();
    let s = suite_stats(suite.iter().map(|e| &e.cpt)).unwrap();
    let nodes: Vec<usize> = suite.iter().map(|e| common::node_count(&e.cpt)).collect();
    let acts: Vec<usize> = suite.iter().map(|e| e.cpt.activities().count()).collect();
    let ops: Vec<usize> = suite
        .iter()
        .map(|e| e.cpt.walk().filter(|(_, n)| n.operator_kind().is_some()).count())
        .collect();
    assert_eq!(s.trees, 100);
    assert_eq!(s.max_nodes, *nodes.iter().max().unwrap());
    assert_eq!(s.min_nodes, *nodes.iter().min().unwrap());
    assert_eq!(s.max_activities, *acts.iter().max().unwrap());
    assert_eq!(s.min_activities, *acts.iter().min().unwrap());
    assert_eq!(s.max_operators, *ops.iter().max().unwrap());
    assert_eq!(s.min_operators, *ops.iter().min().unwrap());
    let sel = suite
        .iter()
        .filter(|e| max_nesting(&e.cpt, cptsketch::OperatorKind::Exclusive) >= 2)
        .count();
    let lp = suite
        .iter()
        .filter(|e| max_nesting(&e.cpt, cptsketch::OperatorKind::Loop) >= 2)
        .count();
    assert_eq!((s.multilayer_selection, s.multilayer_loop), (sel, lp));
    assert!(s.multilayer_loop >= 10 && s.multilayer_selection >= 10);
}

#[test]
fn export_lines_carry_canonical_trees() {
    let suite = build_suite(&SuiteSpec::default(), 1).unwrap();
    for e in suite.iter().take(5) {
        let v: serde_json::Value = serde_json::from_str(&e.to_json_line()).unwrap();
        assert_eq!(v["id"], e.id.as_str());
        assert_eq!(cptsketch::parse(v["cpt"].as_str().unwrap()).unwrap(), e.cpt);
        assert_eq!(v["stats"]["node_count"], common::node_count(&e.cpt));
    }
}
