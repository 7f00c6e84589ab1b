//! Conditional process tree data model.
//!
//! A tree is built from activity leaves (`a_<n>`), condition leaves (`c_<n>`),
//! the silent activity `τ`, and four operators: sequence, exclusive choice,
//! parallel and loop. Exclusive choice stores its condition on the operator
//! (`xor_c_1(..)`); a loop stores its condition as a leading condition leaf
//! (`loop(c_2, ..)`).

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Label payload shared by activities and conditions.
///
/// Generated trees only use indexed labels. Free-text labels exist so that
/// instantiated trees (real activity names) can be converted too.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Indexed(u32),
    Text(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LabelError {
    #[error("label index must be a positive integer")]
    ZeroIndex,
    #[error("free-text label must not be empty")]
    Empty,
    #[error("`{0}` is not of the form {1}_<n>")]
    Pattern(String, char),
}

macro_rules! label_type {
    ($name:ident, $prefix:literal) => {
        #[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
        pub struct $name(Label);

        impl $name {
            pub const PREFIX: char = $prefix;

            pub fn indexed(index: u32) -> Result<Self, LabelError> {
                if index == 0 {
                    return Err(LabelError::ZeroIndex);
                }
                Ok(Self(Label::Indexed(index)))
            }

            pub fn text(text: impl Into<String>) -> Result<Self, LabelError> {
                let text = text.into();
                if text.trim().is_empty() {
                    return Err(LabelError::Empty);
                }
                Ok(Self(Label::Text(text)))
            }

            /// Parses `x_<n>` or `x<n>` (with `x` the label prefix) into an
            /// indexed label.
            pub fn parse_indexed(s: &str) -> Result<Self, LabelError> {
                let bad = || LabelError::Pattern(s.to_string(), $prefix);
                let rest = s.strip_prefix($prefix).ok_or_else(bad)?;
                let digits = rest.strip_prefix('_').unwrap_or(rest);
                if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
                    return Err(bad());
                }
                let index: u32 = digits.parse().map_err(|_| bad())?;
                Self::indexed(index)
            }

            pub fn label(&self) -> &Label {
                &self.0
            }

            pub fn index(&self) -> Option<u32> {
                match self.0 {
                    Label::Indexed(n) => Some(n),
                    Label::Text(_) => None,
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                match &self.0 {
                    Label::Indexed(n) => write!(f, "{}_{}", $prefix, n),
                    Label::Text(s) => f.write_str(s),
                }
            }
        }
    };
}

label_type!(ActivityLabel, 'a');
label_type!(ConditionLabel, 'c');

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OperatorKind {
    Sequence,
    Exclusive,
    Parallel,
    Loop,
}

impl OperatorKind {
    pub const ALL: [OperatorKind; 4] = [
        OperatorKind::Sequence,
        OperatorKind::Exclusive,
        OperatorKind::Parallel,
        OperatorKind::Loop,
    ];

    pub fn glyph(self) -> &'static str {
        match self {
            OperatorKind::Sequence => "→",
            OperatorKind::Exclusive => "×",
            OperatorKind::Parallel => "∧",
            OperatorKind::Loop => "∝",
        }
    }

    pub fn keyword(self) -> &'static str {
        match self {
            OperatorKind::Sequence => "seq",
            OperatorKind::Exclusive => "xor",
            OperatorKind::Parallel => "par",
            OperatorKind::Loop => "loop",
        }
    }

    /// Sequence and parallel take two or more children; exclusive choice and
    /// loop are binary.
    pub fn is_n_ary(self) -> bool {
        matches!(self, OperatorKind::Sequence | OperatorKind::Parallel)
    }
}

impl fmt::Display for OperatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.keyword())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Element {
    Activity(ActivityLabel),
    Condition(ConditionLabel),
    Operator {
        kind: OperatorKind,
        /// Present iff `kind` is [`OperatorKind::Exclusive`].
        condition: Option<ConditionLabel>,
    },
    Silent,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct CptNode {
    pub element: Element,
    pub children: Vec<CptNode>,
}

impl CptNode {
    pub fn activity(index: u32) -> Self {
        Self::leaf(Element::Activity(
            ActivityLabel::indexed(index).expect("activity index must be positive"),
        ))
    }

    pub fn condition(index: u32) -> Self {
        Self::leaf(Element::Condition(
            ConditionLabel::indexed(index).expect("condition index must be positive"),
        ))
    }

    pub fn silent() -> Self {
        Self::leaf(Element::Silent)
    }

    pub fn leaf(element: Element) -> Self {
        Self {
            element,
            children: Vec::new(),
        }
    }

    pub fn operator(kind: OperatorKind, children: Vec<CptNode>) -> Self {
        Self {
            element: Element::Operator {
                kind,
                condition: None,
            },
            children,
        }
    }

    pub fn seq(children: Vec<CptNode>) -> Self {
        Self::operator(OperatorKind::Sequence, children)
    }

    pub fn par(children: Vec<CptNode>) -> Self {
        Self::operator(OperatorKind::Parallel, children)
    }

    pub fn xor(condition: u32, left: CptNode, right: CptNode) -> Self {
        Self {
            element: Element::Operator {
                kind: OperatorKind::Exclusive,
                condition: Some(
                    ConditionLabel::indexed(condition).expect("condition index must be positive"),
                ),
            },
            children: vec![left, right],
        }
    }

    /// `loop(c_<condition>, body)`.
    pub fn looped(condition: u32, body: CptNode) -> Self {
        Self::operator(OperatorKind::Loop, vec![Self::condition(condition), body])
    }

    pub fn operator_kind(&self) -> Option<OperatorKind> {
        match self.element {
            Element::Operator { kind, .. } => Some(kind),
            _ => None,
        }
    }

    pub fn is_leaf(&self) -> bool {
        !matches!(self.element, Element::Operator { .. })
    }

    pub fn is_condition(&self) -> bool {
        matches!(self.element, Element::Condition(_))
    }

    /// Pre-order iterator over all nodes together with their paths.
    pub fn walk(&self) -> impl Iterator<Item = (NodePath, &CptNode)> {
        let mut stack = vec![(NodePath::root(), self)];
        std::iter::from_fn(move || {
            let (path, node) = stack.pop()?;
            for (i, child) in node.children.iter().enumerate().rev() {
                stack.push((path.child(i), child));
            }
            Some((path, node))
        })
    }

    pub fn activities(&self) -> impl Iterator<Item = &ActivityLabel> {
        self.walk().filter_map(|(_, n)| match &n.element {
            Element::Activity(label) => Some(label),
            _ => None,
        })
    }

    /// Every condition label in the tree, whether stored on an exclusive
    /// operator or as a condition leaf.
    pub fn conditions(&self) -> impl Iterator<Item = &ConditionLabel> {
        self.walk().filter_map(|(_, n)| match &n.element {
            Element::Condition(label) => Some(label),
            Element::Operator {
                condition: Some(label),
                ..
            } => Some(label),
            _ => None,
        })
    }

    pub fn get(&self, path: &NodePath) -> Option<&CptNode> {
        path.0
            .iter()
            .try_fold(self, |node, &i| node.children.get(i))
    }

    pub fn get_mut(&mut self, path: &NodePath) -> Option<&mut CptNode> {
        path.0
            .iter()
            .try_fold(self, |node, &i| node.children.get_mut(i))
    }
}

/// Child-index path from the root. The root is the empty path.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodePath(pub Vec<usize>);

impl NodePath {
    pub fn root() -> Self {
        Self(Vec::new())
    }

    pub fn child(&self, index: usize) -> Self {
        let mut v = self.0.clone();
        v.push(index);
        Self(v)
    }

    pub fn is_ancestor_of(&self, other: &NodePath) -> bool {
        other.0.starts_with(&self.0)
    }
}

impl fmt::Display for NodePath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("root")?;
        for i in &self.0 {
            write!(f, ".{i}")?;
        }
        Ok(())
    }
}

impl Serialize for NodePath {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Rule {
    LeafHasChildren,
    SequenceArity,
    ParallelArity,
    ExclusiveArity,
    ExclusiveMissingCondition,
    UnexpectedCondition,
    LoopArity,
    LoopFirstChildNotCondition,
    SequenceUnderSequence,
    ParallelUnderParallel,
}

impl Rule {
    pub fn code(self) -> &'static str {
        match self {
            Rule::LeafHasChildren => "leaf-has-children",
            Rule::SequenceArity => "seq-arity",
            Rule::ParallelArity => "par-arity",
            Rule::ExclusiveArity => "xor-arity",
            Rule::ExclusiveMissingCondition => "xor-missing-condition",
            Rule::UnexpectedCondition => "unexpected-condition",
            Rule::LoopArity => "loop-arity",
            Rule::LoopFirstChildNotCondition => "loop-first-child-not-condition",
            Rule::SequenceUnderSequence => "seq-under-seq",
            Rule::ParallelUnderParallel => "par-under-par",
        }
    }

    /// Rules that only concern rationality; a tree breaking nothing else is
    /// structurally well formed.
    pub fn is_rationality(self) -> bool {
        matches!(
            self,
            Rule::LoopFirstChildNotCondition
                | Rule::SequenceUnderSequence
                | Rule::ParallelUnderParallel
        )
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Violation {
    pub path: NodePath,
    pub rule: Rule,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.rule)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid tree: {}", summarize(.0))]
pub struct InvalidTree(pub Vec<Violation>);

fn summarize(violations: &[Violation]) -> String {
    violations
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("; ")
}

/// Checks every well-formedness and rationality rule at every node.
/// Violations are reported in pre-order.
pub fn validate(node: &CptNode) -> Vec<Violation> {
    let mut out = Vec::new();
    for (path, n) in node.walk() {
        check_node(&path, n, &mut out);
    }
    out
}

/// Like [`validate`] but ignores the rationality rules.
pub fn structural_violations(node: &CptNode) -> Vec<Violation> {
    validate(node)
        .into_iter()
        .filter(|v| !v.rule.is_rationality())
        .collect()
}

pub fn ensure_valid(node: &CptNode) -> Result<(), InvalidTree> {
    let violations = validate(node);
    if violations.is_empty() {
        Ok(())
    } else {
        Err(InvalidTree(violations))
    }
}

fn check_node(path: &NodePath, node: &CptNode, out: &mut Vec<Violation>) {
    let mut push = |rule| {
        out.push(Violation {
            path: path.clone(),
            rule,
        })
    };
    let (kind, condition) = match &node.element {
        Element::Operator { kind, condition } => (*kind, condition),
        _ => {
            if !node.children.is_empty() {
                push(Rule::LeafHasChildren);
            }
            return;
        }
    };
    let n = node.children.len();
    match kind {
        OperatorKind::Sequence | OperatorKind::Parallel => {
            if n < 2 {
                push(if kind == OperatorKind::Sequence {
                    Rule::SequenceArity
                } else {
                    Rule::ParallelArity
                });
            }
            if node.children.iter().any(|c| c.operator_kind() == Some(kind)) {
                push(if kind == OperatorKind::Sequence {
                    Rule::SequenceUnderSequence
                } else {
                    Rule::ParallelUnderParallel
                });
            }
        }
        OperatorKind::Exclusive => {
            if n != 2 {
                push(Rule::ExclusiveArity);
            }
        }
        OperatorKind::Loop => {
            if n != 2 {
                push(Rule::LoopArity);
            }
            if !node.children.first().is_some_and(|c| c.is_condition()) {
                push(Rule::LoopFirstChildNotCondition);
            }
        }
    }
    match (kind, condition) {
        (OperatorKind::Exclusive, None) => push(Rule::ExclusiveMissingCondition),
        (k, Some(_)) if k != OperatorKind::Exclusive => push(Rule::UnexpectedCondition),
        _ => {}
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeStats {
    /// Node levels; a single node has depth 1.
    pub depth: usize,
    pub node_count: usize,
    /// Activity leaves, the silent activity included.
    pub activity_count: usize,
    pub operator_count: usize,
    /// Largest number of exclusive nodes on one root-to-leaf path.
    pub max_selection_nesting: usize,
    /// Largest number of loop nodes on one root-to-leaf path.
    pub max_loop_nesting: usize,
}

pub fn stats(node: &CptNode) -> Result<TreeStats, InvalidTree> {
    ensure_valid(node)?;
    Ok(stats_unchecked(node))
}

/// Statistics without the validity precondition; used on rough trees.
pub fn stats_unchecked(node: &CptNode) -> TreeStats {
    let mut s = TreeStats {
        depth: 1,
        node_count: 1,
        ..TreeStats::default()
    };
    let mut child_depth = 0;
    let mut child_sel = 0;
    let mut child_loop = 0;
    for child in &node.children {
        let c = stats_unchecked(child);
        s.node_count += c.node_count;
        s.activity_count += c.activity_count;
        s.operator_count += c.operator_count;
        child_depth = child_depth.max(c.depth);
        child_sel = child_sel.max(c.max_selection_nesting);
        child_loop = child_loop.max(c.max_loop_nesting);
    }
    s.depth += child_depth;
    s.max_selection_nesting = child_sel;
    s.max_loop_nesting = child_loop;
    match node.element {
        Element::Activity(_) | Element::Silent => s.activity_count += 1,
        Element::Condition(_) => {}
        Element::Operator { kind, .. } => {
            s.operator_count += 1;
            match kind {
                OperatorKind::Exclusive => s.max_selection_nesting += 1,
                OperatorKind::Loop => s.max_loop_nesting += 1,
                _ => {}
            }
        }
    }
    s
}
