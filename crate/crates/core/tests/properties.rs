mod common;

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};

use common::{label_tokens, node_count, Shape};
use cptsketch::evaluation::{aggregate_scores, traditional_prompt, ScoreRow, ScoreSheet};
use cptsketch::generator::{
    assign_elements, generate_cpt, random_tree_with, rationalize, splice_nested, GenParams,
};
use cptsketch::model::{stats, stats_unchecked, validate, CptNode, NodePath};
use cptsketch::notation::{parse, serialize, Style};
use cptsketch::semantics::{TraceError, TraceOracle};
use cptsketch::sketch::{
    back_parse, generate_bpts, Merge, MergeRequest, RenderError, Renderer, RendererId,
    RuleRenderer,
};
use proptest::prelude::*;

fn gen_params() -> impl Strategy<Value = GenParams> {
    (1usize..=6, 0.0f64..0.6, 0.0f64..0.4, 3usize..=4, 0usize..=2, any::<u64>()).prop_map(
        |(depth, p_zero, p_two, num_low, extra, seed)| GenParams {
            depth,
            p_zero,
            p_two,
            num_low,
            num_up: num_low + extra,
            seed,
        },
    )
}

fn valid_tree() -> impl Strategy<Value = CptNode> {
    (2usize..=6, any::<u64>()).prop_map(|(d, seed)| Shape::valid(d).build(seed))
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 256, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn generated_trees_are_sound(p in gen_params()) {
        let t = generate_cpt(&p).unwrap();
        prop_assert!(validate(&t).is_empty(), "{}", t);
        prop_assert!(stats(&t).unwrap().depth <= p.depth);
    }

    #[test]
    fn generation_is_deterministic(p in gen_params()) {
        prop_assert_eq!(generate_cpt(&p).unwrap().to_string(), generate_cpt(&p).unwrap().to_string());
    }

    #[test]
    fn labels_stay_fresh(p in gen_params()) {
        let t = generate_cpt(&p).unwrap();
        let acts: Vec<_> = t.activities().collect();
        let mut dedup = acts.clone();
        dedup.sort();
        dedup.dedup();
        prop_assert_eq!(dedup.len(), acts.len());
        let conds: Vec<_> = t.conditions().collect();
        let mut dedup = conds.clone();
        dedup.sort();
        dedup.dedup();
        prop_assert_eq!(dedup.len(), conds.len());
    }

    #[test]
    fn validate_is_pure(seed in any::<u64>()) {
        let t = Shape::rough(5).build(seed);
        prop_assert_eq!(validate(&t), validate(&t));
    }

    #[test]
    fn node_count_recursion(seed in any::<u64>()) {
        let t = Shape::rough(5).build(seed);
        let s = stats_unchecked(&t);
        prop_assert_eq!(s.node_count, node_count(&t));
        let child_sum: usize = t.children.iter().map(|c| stats_unchecked(c).node_count).sum();
        prop_assert_eq!(s.node_count, 1 + child_sum);
    }

    #[test]
    fn round_trip_both_styles(t in valid_tree()) {
        for style in [Style::Ascii, Style::Unicode] {
            let text = serialize(&t, style).unwrap();
            let back = parse(&text).unwrap();
            prop_assert_eq!(&back, &t);
            prop_assert_eq!(serialize(&back, style).unwrap(), text);
        }
    }

    #[test]
    fn structural_mutations_never_reproduce_the_tree(t in valid_tree(), pick in any::<prop::sample::Index>(), op in 0u8..3) {
        let text = serialize(&t, Style::Ascii).unwrap();
        let positions: Vec<usize> = text
            .char_indices()
            .filter(|&(i, c)| matches!(c, '(' | ')' | ',') || text[i..].starts_with("seq(") || text[i..].starts_with("par(") || text[i..].starts_with("xor_") || text[i..].starts_with("loop("))
            .map(|(i, _)| i)
            .collect();
        prop_assume!(!positions.is_empty());
        let at = positions[pick.index(positions.len())];
        let c = text[at..].chars().next().unwrap();
        let mutated = match (op, c) {
            (0, _) => format!("{}{}", &text[..at], &text[at + 1..]),
            (1, _) => format!("{}{}{}", &text[..at], c, &text[at..]),
            (_, 's') => format!("{}par{}", &text[..at], &text[at + 3..]),
            (_, 'p') => format!("{}seq{}", &text[..at], &text[at + 3..]),
            (_, 'x') => format!("{}loop{}", &text[..at], &text[at + 3..]),
            (_, 'l') => format!("{}xor{}", &text[..at], &text[at + 4..]),
            (_, '(') => format!("{}){}", &text[..at], &text[at + 1..]),
            (_, ')') => format!("{},{}", &text[..at], &text[at + 1..]),
            _ => format!("{}({}", &text[..at], &text[at + 1..]),
        };
        if let Ok(other) = parse(&mutated) {
            prop_assert_ne!(other, t, "{} -> {}", text, mutated);
        }
    }

    #[test]
    fn splice_preserves_bounded_traces(seed in any::<u64>()) {
        let rough = Shape::rough(4).build(seed);
        prop_assume!(node_count(&rough) <= 12);
        let oracle = TraceOracle::lenient(2).with_cap(200_000);
        let spliced = splice_nested(rough.clone());
        prop_assert!(validate(&spliced).is_empty());
        // loops over wide parallels can exceed any practical cap at 12 nodes
        let before = match oracle.enumerate(&rough) {
            Err(TraceError::BoundExceeded { .. }) => return Err(TestCaseError::reject("trace cap")),
            other => other.unwrap(),
        };
        prop_assert_eq!(before, oracle.enumerate(&spliced).unwrap());
    }

    #[test]
    fn library_rough_trees_splice_soundly(p in gen_params()) {
        let mut rng = p.rng();
        let shape = random_tree_with(&p, &mut rng);
        let rough = assign_elements(&shape, &mut rng).unwrap();
        prop_assume!(node_count(&rough) <= 12);
        let oracle = TraceOracle::lenient(2).with_cap(1_000_000);
        prop_assert_eq!(oracle.enumerate(&rough).unwrap(), oracle.enumerate(&splice_nested(rough)).unwrap());
    }

    #[test]
    fn rationalize_is_idempotent(seed in any::<u64>()) {
        let once = rationalize(Shape::rough(5).build(seed));
        prop_assert!(validate(&once).is_empty());
        prop_assert_eq!(rationalize(once.clone()), once);
    }

    #[test]
    fn rationalize_keeps_valid_trees(t in valid_tree()) {
        prop_assert_eq!(rationalize(t.clone()), t);
    }

    #[test]
    fn trace_sets_grow_with_bound(t in (2usize..=4, any::<u64>()).prop_map(|(d, s)| Shape::valid(d).build(s))) {
        let mut prev = None;
        for k in 0..=3 {
            let ts = match TraceOracle::new(k).with_cap(20_000).enumerate(&t) {
                Ok(ts) => ts,
                Err(TraceError::BoundExceeded { .. }) => break,
                Err(e) => return Err(TestCaseError::fail(e.to_string())),
            };
            if let Some(p) = prev.replace(ts.clone()) {
                prop_assert!(p.is_subset(&ts));
            }
        }
    }

    #[test]
    fn rule_sketch_back_parses(t in valid_tree()) {
        let s = generate_bpts(&t, &RuleRenderer).unwrap();
        prop_assert_eq!(back_parse(&s.text).unwrap(), t);
    }

    #[test]
    fn rule_sketch_preserves_labels(t in valid_tree()) {
        let text = generate_bpts(&t, &RuleRenderer).unwrap().text;
        let mut found = label_tokens(&text, 'a');
        let mut expected: Vec<String> = t.activities().map(ToString::to_string).collect();
        found.sort();
        expected.sort();
        prop_assert_eq!(found, expected);
        let conds = label_tokens(&text, 'c');
        for c in t.conditions() {
            prop_assert!(conds.contains(&c.to_string()), "{} missing from {}", c, text);
        }
    }

    #[test]
    fn one_merge_per_operator(t in valid_tree()) {
        let counter = Counting::default();
        generate_bpts(&t, &counter).unwrap();
        prop_assert_eq!(counter.calls.load(Ordering::SeqCst), stats(&t).unwrap().operator_count);
    }

    #[test]
    fn edits_stay_on_the_root_path(t in valid_tree(), pick in any::<prop::sample::Index>()) {
        let paths: Vec<NodePath> = t.walk().map(|(p, _)| p).filter(|p| !p.0.is_empty()).collect();
        prop_assume!(!paths.is_empty());
        let target = paths[pick.index(paths.len())].clone();
        prop_assume!(!t.get(&target).unwrap().is_condition());
        let mut edited = t.clone();
        *edited.get_mut(&target).unwrap() = CptNode::activity(999);
        prop_assume!(validate(&edited).is_empty());

        let before = generate_bpts(&t, &RuleRenderer).unwrap().node_sketches;
        let after = generate_bpts(&edited, &RuleRenderer).unwrap().node_sketches;
        for (path, text) in &after {
            if target.is_ancestor_of(path) {
                continue;
            }
            let on_path = path.is_ancestor_of(&target);
            prop_assert_eq!(before[path] != *text, on_path, "at {}", path);
        }
    }

    #[test]
    fn baseline_prompt_is_injective(a in valid_tree(), b in valid_tree()) {
        prop_assume!(a != b);
        prop_assert_ne!(traditional_prompt(&a).unwrap(), traditional_prompt(&b).unwrap());
    }

    #[test]
    fn aggregation_ignores_row_order(
        scores in prop::collection::vec((0usize..8, 0usize..3, 0u8..=2), 1..40),
        perm_seed in any::<u64>(),
    ) {
        let rows: Vec<ScoreRow> = scores
            .iter()
            .map(|&(r, e, s)| ScoreRow {
                record_id: format!("r{r}"),
                evaluator_id: format!("e{e}"),
                score: f64::from(s) / 2.0,
            })
            .collect();
        let base = aggregate_scores(&ScoreSheet { rows: rows.clone() }).unwrap();
        prop_assert!((0.0..=100.0).contains(&base));

        // independent oracle: group then average
        let mut groups: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
        for r in &rows {
            groups.entry(&r.record_id).or_default().push(r.score);
        }
        let means: Vec<f64> = groups.values().map(|v| v.iter().sum::<f64>() / v.len() as f64).collect();
        let oracle = 100.0 * means.iter().sum::<f64>() / means.len() as f64;
        prop_assert!((base - oracle).abs() < 1e-9);

        let mut shuffled = rows;
        let mut rng = common::Xs::new(perm_seed);
        for i in (1..shuffled.len()).rev() {
            shuffled.swap(i, rng.below(i as u64 + 1) as usize);
        }
        let again = aggregate_scores(&ScoreSheet { rows: shuffled }).unwrap();
        prop_assert!((base - again).abs() < 1e-9);
    }
}

#[derive(Default)]
struct Counting {
    calls: AtomicUsize,
}

impl Renderer for Counting {
    fn id(&self) -> RendererId {
        RendererId::Custom("counting".into())
    }

    fn merge(&self, request: &MergeRequest<'_>) -> Result<Merge, RenderError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        RuleRenderer.merge(request)
    }
}

#[test]
fn single_leaf_needs_no_merge() {
    let counter = Counting::default();
    generate_bpts(&CptNode::activity(1), &counter).unwrap();
    assert_eq!(counter.calls.load(Ordering::SeqCst), 0);
}

#[test]
fn parallel_trace_counts_are_factorial() {
    let mut fact = 1;
    for k in 2..=5u32 {
        fact *= k as usize;
        let t = CptNode::par((1..=k).map(CptNode::activity).collect());
        assert_eq!(TraceOracle::new(0).enumerate(&t).unwrap().len(), fact, "k = {k}");
    }
}
