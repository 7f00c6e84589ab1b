//! Random tree generation.
//!
//! Generation runs in three steps: a breadth-first random shape with no
//! labels, a rough tree where every node is given an element, and a
//! rationalization pass that removes nested same-kind sequence/parallel
//! operators and gives every loop a leading condition.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ConditionLabel, CptNode, Element, OperatorKind};

/// Stream generator behind every seeded draw. ChaCha8 streams are identical
/// on every platform for a given seed.
pub type GenRng = ChaCha8Rng;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GenError {
    #[error("invalid generator parameters: {0}")]
    InvalidParams(String),
    #[error("shape node at depth {depth} has a single child; operators need at least two")]
    Shape { depth: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenParams {
    /// Maximum node levels; 1 means a single leaf.
    pub depth: usize,
    /// Probability that an expanded node gets no children.
    pub p_zero: f64,
    /// Probability that an expanded node gets exactly two children.
    pub p_two: f64,
    /// Inclusive bounds for every other child count.
    pub num_low: usize,
    pub num_up: usize,
    pub seed: u64,
}

impl Default for GenParams {
    fn default() -> Self {
        Self {
            depth: 5,
            p_zero: 0.3,
            p_two: 0.4,
            num_low: 3,
            num_up: 5,
            seed: 0,
        }
    }
}

impl GenParams {
    pub fn check(&self) -> Result<(), GenError> {
        let bad = |m: String| Err(GenError::InvalidParams(m));
        if self.depth == 0 {
            return bad("depth must be at least 1".into());
        }
        for (name, p) in [("p_zero", self.p_zero), ("p_two", self.p_two)] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} = {p} is not a probability"));
            }
        }
        if self.p_zero + self.p_two > 1.0 + 1e-12 {
            return bad(format!(
                "p_zero + p_two = {} exceeds 1",
                self.p_zero + self.p_two
            ));
        }
        if self.num_low < 3 {
            return bad(format!("num_low = {} must be at least 3", self.num_low));
        }
        if self.num_low > self.num_up {
            return bad(format!(
                "num_low = {} exceeds num_up = {}",
                self.num_low, self.num_up
            ));
        }
        Ok(())
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }

    pub fn rng(&self) -> GenRng {
        GenRng::seed_from_u64(self.seed)
    }
}

/// Unlabelled tree produced by [`random_tree`].
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ShapeNode {
    pub children: Vec<ShapeNode>,
}

impl ShapeNode {
    pub fn leaf() -> Self {
        Self::default()
    }

    pub fn depth(&self) -> usize {
        1 + self.children.iter().map(ShapeNode::depth).max().unwrap_or(0)
    }

    pub fn node_count(&self) -> usize {
        1 + self.children.iter().map(ShapeNode::node_count).sum::<usize>()
    }
}

pub fn random_tree(params: &GenParams) -> Result<ShapeNode, GenError> {
    params.check()?;
    Ok(random_tree_with(params, &mut params.rng()))
}

/// Breadth-first expansion. Each dequeued node below the depth limit draws
/// its child count: 0 with `p_zero`, 2 with `p_two`, otherwise uniform in
/// `num_low..=num_up`.
pub fn random_tree_with<R: Rng + ?Sized>(params: &GenParams, rng: &mut R) -> ShapeNode {
    let mut children: Vec<Vec<usize>> = vec![Vec::new()];
    let mut level = vec![1usize];
    let mut queue = VecDeque::from([0usize]);
    while let Some(id) = queue.pop_front() {
        if level[id] >= params.depth {
            continue;
        }
        let count = draw_child_count(params, rng);
        for _ in 0..count {
            let child = children.len();
            children.push(Vec::new());
            level.push(level[id] + 1);
            children[id].push(child);
            queue.push_back(child);
        }
    }
    build_shape(&children, 0)
}

fn draw_child_count<R: Rng + ?Sized>(params: &GenParams, rng: &mut R) -> usize {
    let r: f64 = rng.gen();
    if r < params.p_zero {
        0
    } else if r < params.p_zero + params.p_two {
        2
    } else {
        rng.gen_range(params.num_low..=params.num_up)
    }
}

fn build_shape(children: &[Vec<usize>], id: usize) -> ShapeNode {
    ShapeNode {
        children: children[id]
            .iter()
            .map(|&c| build_shape(children, c))
            .collect(),
    }
}

const BINARY_CHOICES: [OperatorKind; 4] = OperatorKind::ALL;
const N_ARY_CHOICES: [OperatorKind; 2] = [OperatorKind::Sequence, OperatorKind::Parallel];

/// Gives every shape node an element, in pre-order. Leaves become activities
/// numbered by one counter; exclusive operators receive conditions numbered
/// by a second counter. The result may contain irrational structures.
pub fn assign_elements<R: Rng + ?Sized>(
    shape: &ShapeNode,
    rng: &mut R,
) -> Result<CptNode, GenError> {
    check_shape(shape, 1)?;
    let mut counters = Counters::default();
    Ok(assign(shape, rng, &mut counters))
}

fn check_shape(shape: &ShapeNode, depth: usize) -> Result<(), GenError> {
    if shape.children.len() == 1 {
        return Err(GenError::Shape { depth });
    }
    shape
        .children
        .iter()
        .try_for_each(|c| check_shape(c, depth + 1))
}

#[derive(Default)]
struct Counters {
    activity: u32,
    condition: u32,
}

fn assign<R: Rng + ?Sized>(shape: &ShapeNode, rng: &mut R, counters: &mut Counters) -> CptNode {
    if shape.children.is_empty() {
        counters.activity += 1;
        return CptNode::activity(counters.activity);
    }
    let choices: &[OperatorKind] = if shape.children.len() == 2 {
        &BINARY_CHOICES
    } else {
        &N_ARY_CHOICES
    };
    let kind = choices[rng.gen_range(0..choices.len())];
    let condition = (kind == OperatorKind::Exclusive).then(|| {
        counters.condition += 1;
        ConditionLabel::indexed(counters.condition).expect("counter starts at 1")
    });
    let children = shape
        .children
        .iter()
        .map(|c| assign(c, rng, counters))
        .collect();
    CptNode {
        element: Element::Operator { kind, condition },
        children,
    }
}

/// How a sequence nested under a sequence (or parallel under parallel) is
/// removed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RepairMode {
    /// Hoist the nested node's children into its place, in order. Keeps
    /// every activity and the trace language.
    #[default]
    Splice,
    /// Drop the nested subtree. Parents left with one child collapse into
    /// that child; parents left with none become the silent activity.
    Delete,
}

pub fn rationalize(rough: CptNode) -> CptNode {
    rationalize_with(rough, RepairMode::Splice)
}

pub fn rationalize_with(rough: CptNode, mode: RepairMode) -> CptNode {
    let mut next_condition = next_free_condition(&rough);
    repair(rough, mode, true, &mut next_condition)
}

/// Only the nested sequence/parallel repair, leaving loops untouched.
pub fn splice_nested(rough: CptNode) -> CptNode {
    let mut unused = 0;
    repair(rough, RepairMode::Splice, false, &mut unused)
}

fn next_free_condition(tree: &CptNode) -> u32 {
    tree.conditions()
        .filter_map(ConditionLabel::index)
        .max()
        .unwrap_or(0)
        + 1
}

fn repair(node: CptNode, mode: RepairMode, fix_loops: bool, next_condition: &mut u32) -> CptNode {
    let CptNode {
        element,
        mut children,
    } = node;
    let Element::Operator { kind, .. } = &element else {
        return CptNode { element, children };
    };
    let kind = *kind;
    if fix_loops
        && kind == OperatorKind::Loop
        && children.first().is_some_and(|c| !c.is_condition())
    {
        children[0] = CptNode::condition(*next_condition);
        *next_condition += 1;
    }
    let children: Vec<CptNode> = children
        .into_iter()
        .map(|c| repair(c, mode, fix_loops, next_condition))
        .collect();
    let mut children = if kind.is_n_ary() {
        let mut flat = Vec::with_capacity(children.len());
        for child in children {
            if child.operator_kind() == Some(kind) {
                if mode == RepairMode::Splice {
                    flat.extend(child.children);
                }
            } else {
                flat.push(child);
            }
        }
        flat
    } else {
        children
    };
    match children.len() {
        0 => CptNode::silent(),
        1 if kind.is_n_ary() => children.pop().expect("one child"),
        _ => CptNode { element, children },
    }
}

pub fn generate_cpt(params: &GenParams) -> Result<CptNode, GenError> {
    params.check()?;
    Ok(generate_unchecked(params))
}

fn generate_unchecked(params: &GenParams) -> CptNode {
    let mut rng = params.rng();
    let shape = random_tree_with(params, &mut rng);
    let rough = assign_elements(&shape, &mut rng).expect("generated shapes have no 1-child nodes");
    rationalize(rough)
}

/// Seed for item `index` of a batch rooted at `seed`.
pub fn sub_seed(seed: u64, index: u64) -> u64 {
    const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;
    splitmix64(seed.wrapping_add(GOLDEN.wrapping_mul(index.wrapping_add(1))))
}

fn splitmix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BatchItem {
    pub index: u64,
    pub seed: u64,
    pub tree: CptNode,
}

/// Item `index` of a batch; independent of every other item.
pub fn batch_item(params: &GenParams, index: u64) -> BatchItem {
    let seed = sub_seed(params.seed, index);
    BatchItem {
        index,
        seed,
        tree: generate_unchecked(&params.with_seed(seed)),
    }
}

pub fn generate_batch(
    params: &GenParams,
    n: usize,
) -> Result<impl Iterator<Item = BatchItem> + '_, GenError> {
    check_batch(params, n)?;
    Ok((0..n as u64).map(move |i| batch_item(params, i)))
}

/// [`generate_batch`] fanned out over the current rayon pool, returned in
/// index order.
pub fn generate_batch_parallel(params: &GenParams, n: usize) -> Result<Vec<BatchItem>, GenError> {
    check_batch(params, n)?;
    Ok((0..n as u64)
        .into_par_iter()
        .map(|i| batch_item(params, i))
        .collect())
}

fn check_batch(params: &GenParams, n: usize) -> Result<(), GenError> {
    params.check()?;
    if n == 0 {
        return Err(GenError::InvalidParams("batch size must be at least 1".into()));
    }
    Ok(())
}
