//! Bounded execution traces.
//!
//! Conditions are free: any outcome is possible at every evaluation, so an
//! exclusive choice contributes both branches and a loop contributes 0 to
//! `loop_bound` iterations of its body. Parallel children interleave at
//! activity granularity. Only activities appear in traces.

use std::collections::BTreeSet;

use thiserror::Error;

use crate::model::{structural_violations, validate, ActivityLabel, CptNode, Element, InvalidTree,
    OperatorKind};

pub type Trace = Vec<ActivityLabel>;

pub const MAX_LOOP_BOUND: usize = 3;
pub const DEFAULT_TRACE_CAP: usize = 100_000;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TraceError {
    #[error(transparent)]
    InvalidTree(#[from] InvalidTree),
    #[error("loop bound {0} exceeds the maximum of {MAX_LOOP_BOUND}")]
    LoopBoundTooLarge(usize),
    #[error("trace set exceeds the cap of {cap} traces")]
    BoundExceeded { cap: usize },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TraceSet {
    pub traces: BTreeSet<Trace>,
    pub loop_bound: usize,
}

impl TraceSet {
    pub fn len(&self) -> usize {
        self.traces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.traces.is_empty()
    }

    pub fn contains(&self, trace: &[ActivityLabel]) -> bool {
        self.traces.contains(trace)
    }

    pub fn is_subset(&self, other: &TraceSet) -> bool {
        self.traces.is_subset(&other.traces)
    }

    /// One line per trace, labels comma-separated, lines sorted as strings.
    pub fn to_lines(&self) -> Vec<String> {
        let mut lines: Vec<String> = self
            .traces
            .iter()
            .map(|t| {
                t.iter()
                    .map(ToString::to_string)
                    .collect::<Vec<_>>()
                    .join(",")
            })
            .collect();
        lines.sort();
        lines
    }
}

/// Enumeration settings.
#[derive(Clone, Copy, Debug)]
pub struct TraceOracle {
    pub loop_bound: usize,
    pub cap: usize,
    /// When false only structural rules are enforced, so rough trees (nested
    /// sequences, loops led by an activity) can be enumerated. A loop's first
    /// child is never executed either way.
    pub require_rational: bool,
}

impl TraceOracle {
    pub fn new(loop_bound: usize) -> Self {
        Self {
            loop_bound,
            cap: DEFAULT_TRACE_CAP,
            require_rational: true,
        }
    }

    pub fn lenient(loop_bound: usize) -> Self {
        Self {
            require_rational: false,
            ..Self::new(loop_bound)
        }
    }

    pub fn with_cap(self, cap: usize) -> Self {
        Self { cap, ..self }
    }

    pub fn enumerate(&self, node: &CptNode) -> Result<TraceSet, TraceError> {
        if self.loop_bound > MAX_LOOP_BOUND {
            return Err(TraceError::LoopBoundTooLarge(self.loop_bound));
        }
        let violations = if self.require_rational {
            validate(node)
        } else {
            structural_violations(node)
        };
        if !violations.is_empty() {
            return Err(InvalidTree(violations).into());
        }
        Ok(TraceSet {
            traces: self.traces(node)?,
            loop_bound: self.loop_bound,
        })
    }

    fn traces(&self, node: &CptNode) -> Result<BTreeSet<Trace>, TraceError> {
        match &node.element {
            Element::Activity(label) => Ok(BTreeSet::from([vec![label.clone()]])),
            Element::Condition(_) | Element::Silent => Ok(BTreeSet::from([Vec::new()])),
            Element::Operator { kind, .. } => match kind {
                OperatorKind::Sequence => {
                    let mut acc = BTreeSet::from([Vec::new()]);
                    for child in &node.children {
                        acc = self.concat(&acc, &self.traces(child)?)?;
                    }
                    Ok(acc)
                }
                OperatorKind::Exclusive => {
                    let mut acc = BTreeSet::new();
                    for child in &node.children {
                        for t in self.traces(child)? {
                            self.insert(&mut acc, t)?;
                        }
                    }
                    Ok(acc)
                }
                OperatorKind::Parallel => {
                    let mut acc = BTreeSet::from([Vec::new()]);
                    for child in &node.children {
                        let next = self.traces(child)?;
                        let mut out = BTreeSet::new();
                        for left in &acc {
                            for right in &next {
                                self.shuffle(left, right, &mut Vec::new(), &mut out)?;
                            }
                        }
                        acc = out;
                    }
                    Ok(acc)
                }
                OperatorKind::Loop => {
                    let body = match node.children.last() {
                        Some(b) => self.traces(b)?,
                        None => BTreeSet::from([Vec::new()]),
                    };
                    let mut power = BTreeSet::from([Vec::new()]);
                    let mut acc = power.clone();
                    for _ in 0..self.loop_bound {
                        power = self.concat(&power, &body)?;
                        for t in &power {
                            self.insert(&mut acc, t.clone())?;
                        }
                    }
                    Ok(acc)
                }
            },
        }
    }

    fn insert(&self, set: &mut BTreeSet<Trace>, trace: Trace) -> Result<(), TraceError> {
        set.insert(trace);
        if set.len() > self.cap {
            return Err(TraceError::BoundExceeded { cap: self.cap });
        }
        Ok(())
    }

    fn concat(
        &self,
        left: &BTreeSet<Trace>,
        right: &BTreeSet<Trace>,
    ) -> Result<BTreeSet<Trace>, TraceError> {
        let mut out = BTreeSet::new();
        for l in left {
            for r in right {
                let mut t = Vec::with_capacity(l.len() + r.len());
                t.extend_from_slice(l);
                t.extend_from_slice(r);
                self.insert(&mut out, t)?;
            }
        }
        Ok(out)
    }

    fn shuffle(
        &self,
        left: &[ActivityLabel],
        right: &[ActivityLabel],
        prefix: &mut Vec<ActivityLabel>,
        out: &mut BTreeSet<Trace>,
    ) -> Result<(), TraceError> {
        match (left.split_first(), right.split_first()) {
            (None, None) => self.insert(out, prefix.clone()),
            (Some(_), None) | (None, Some(_)) => {
                let mut t = prefix.clone();
                t.extend_from_slice(left);
                t.extend_from_slice(right);
                self.insert(out, t)
            }
            (Some((l, lrest)), Some((r, rrest))) => {
                prefix.push(l.clone());
                self.shuffle(lrest, right, prefix, out)?;
                prefix.pop();
                prefix.push(r.clone());
                self.shuffle(left, rrest, prefix, out)?;
                prefix.pop();
                Ok(())
            }
        }
    }
}

pub fn enumerate_traces(node: &CptNode, loop_bound: usize) -> Result<TraceSet, TraceError> {
    TraceOracle::new(loop_bound).enumerate(node)
}

pub fn trace_equivalent(x: &CptNode, y: &CptNode, loop_bound: usize) -> Result<bool, TraceError> {
    let oracle = TraceOracle::new(loop_bound);
    Ok(oracle.enumerate(x)?.traces == oracle.enumerate(y)?.traces)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::notation::parse;

    fn t(labels: &[u32]) -> Trace {
        labels
            .iter()
            .map(|&i| ActivityLabel::indexed(i).unwrap())
            .collect()
    }

    fn set(traces: &[&[u32]]) -> BTreeSet<Trace> {
        traces.iter().map(|x| t(x)).collect()
    }

    #[test]
    fn exclusive_is_union() {
        let ts = enumerate_traces(&parse("xor_c1(a_1,a_2)").unwrap(), 1).unwrap();
        assert_eq!(ts.traces, set(&[&[1], &[2]]));
    }

    #[test]
    fn parallel_interleaves() {
        let ts = enumerate_traces(&parse("par(a_1,a_2)").unwrap(), 1).unwrap();
        assert_eq!(ts.traces, set(&[&[1, 2], &[2, 1]]));
    }

    #[test]
    fn figure_two_bound_one() {
        let tree = parse("seq(a_1,xor_c1(loop(c_2,a_4),par(a_2,a_3)))").unwrap();
        let ts = enumerate_traces(&tree, 1).unwrap();
        assert_eq!(ts.traces, set(&[&[1], &[1, 4], &[1, 2, 3], &[1, 3, 2]]));
    }

    #[test]
    fn loop_counts() {
        let tree = parse("loop(c_1,a_1)").unwrap();
        for k in 0..=3 {
            assert_eq!(enumerate_traces(&tree, k).unwrap().len(), k + 1);
        }
    }

    #[test]
    fn silent_and_condition_leaves_are_empty() {
        assert_eq!(enumerate_traces(&parse("tau").unwrap(), 0).unwrap().traces, set(&[&[]]));
        assert_eq!(
            enumerate_traces(&parse("seq(a_1,tau,a_2)").unwrap(), 0).unwrap().traces,
            set(&[&[1, 2]])
        );
    }

    #[test]
    fn equivalence_examples() {
        let nested = parse("seq(a_1,seq(a_2,a_3))").unwrap();
        let flat = parse("seq(a_1,a_2,a_3)").unwrap();
        // nested sequence is irrational, so compare through the lenient oracle
        let lenient = TraceOracle::lenient(2);
        assert_eq!(lenient.enumerate(&nested).unwrap(), lenient.enumerate(&flat).unwrap());
        assert!(trace_equivalent(&flat, &flat, 2).unwrap());
        let s = parse("seq(a_1,a_2)").unwrap();
        let p = parse("par(a_1,a_2)").unwrap();
        assert!(!trace_equivalent(&s, &p, 2).unwrap());
    }

    #[test]
    fn rejects_irrational_when_strict() {
        let nested = parse("seq(a_1,seq(a_2,a_3))").unwrap();
        assert!(matches!(enumerate_traces(&nested, 1), Err(TraceError::InvalidTree(_))));
    }

    #[test]
    fn bound_guards() {
        let tree = parse("a_1").unwrap();
        assert_eq!(enumerate_traces(&tree, 4).unwrap_err(), TraceError::LoopBoundTooLarge(4));
        let wide = parse("par(a_1,a_2,a_3,a_4,a_5)").unwrap();
        let err = TraceOracle::new(1).with_cap(100).enumerate(&wide).unwrap_err();
        assert_eq!(err, TraceError::BoundExceeded { cap: 100 });
    }

    #[test]
    fn lines_are_sorted_strings() {
        let ts = enumerate_traces(&parse("par(a_2,a_10)").unwrap(), 0).unwrap();
        assert_eq!(ts.to_lines(), ["a_10,a_2", "a_2,a_10"]);
    }
}
