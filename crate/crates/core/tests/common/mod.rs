//! Tree builders for tests, independent of the library generator.

#![allow(dead_code)]

use cptsketch::model::{CptNode, OperatorKind};

/// xorshift64* stream.
pub struct Xs(u64);

impl Xs {
    pub fn new(seed: u64) -> Self {
        Xs(seed | 1)
    }

    pub fn next(&mut self) -> u64 {
        self.0 ^= self.0 >> 12;
        self.0 ^= self.0 << 25;
        self.0 ^= self.0 >> 27;
        self.0.wrapping_mul(0x2545_F491_4F6C_DD1D)
    }

    pub fn below(&mut self, n: u64) -> u64 {
        self.next() % n
    }

    pub fn chance(&mut self, percent: u64) -> bool {
        self.below(100) < percent
    }
}

#[derive(Default)]
struct Labels {
    activity: u32,
    condition: u32,
}

impl Labels {
    fn activity(&mut self) -> CptNode {
        self.activity += 1;
        CptNode::activity(self.activity)
    }

    fn condition(&mut self) -> u32 {
        self.condition += 1;
        self.condition
    }
}

pub struct Shape {
    pub max_depth: usize,
    pub leaf_percent: u64,
    pub max_width: u64,
    /// Allow seq under seq and par under par.
    pub rough: bool,
}

impl Shape {
    pub fn valid(max_depth: usize) -> Self {
        Shape {
            max_depth,
            leaf_percent: 30,
            max_width: 4,
            rough: false,
        }
    }

    pub fn rough(max_depth: usize) -> Self {
        Shape {
            rough: true,
            ..Shape::valid(max_depth)
        }
    }

    pub fn build(&self, seed: u64) -> CptNode {
        let mut rng = Xs::new(seed);
        let mut labels = Labels::default();
        self.node(&mut rng, &mut labels, 1, None)
    }

    fn node(
        &self,
        rng: &mut Xs,
        labels: &mut Labels,
        level: usize,
        parent: Option<OperatorKind>,
    ) -> CptNode {
        if level >= self.max_depth || (level > 1 && rng.chance(self.leaf_percent)) {
            return labels.activity();
        }
        let kind = loop {
            let k = OperatorKind::ALL[rng.below(4) as usize];
            let nests = k.is_n_ary() && Some(k) == parent;
            if self.rough || !nests {
                break k;
            }
        };
        match kind {
            OperatorKind::Sequence | OperatorKind::Parallel => {
                let width = 2 + rng.below(self.max_width - 1) as usize;
                let children = (0..width)
                    .map(|_| self.node(rng, labels, level + 1, Some(kind)))
                    .collect();
                CptNode::operator(kind, children)
            }
            OperatorKind::Exclusive => {
                let c = labels.condition();
                let l = self.node(rng, labels, level + 1, Some(kind));
                let r = self.node(rng, labels, level + 1, Some(kind));
                CptNode::xor(c, l, r)
            }
            OperatorKind::Loop => {
                let c = labels.condition();
                let body = self.node(rng, labels, level + 1, Some(kind));
                CptNode::looped(c, body)
            }
        }
    }
}

pub fn node_count(t: &CptNode) -> usize {
    1 + t.children.iter().map(node_count).sum::<usize>()
}

/// `a_<n>` and `c_<n>` tokens of a text, in order.
pub fn label_tokens(text: &str, prefix: char) -> Vec<String> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i + 2 < chars.len() + 1 {
        let boundary = i == 0 || !(chars[i - 1].is_alphanumeric() || chars[i - 1] == '_');
        if boundary && chars[i] == prefix && chars.get(i + 1) == Some(&'_') {
            let mut j = i + 2;
            while j < chars.len() && chars[j].is_ascii_digit() {
                j += 1;
            }
            let end_ok = j == chars.len() || !(chars[j].is_alphanumeric() || chars[j] == '_');
            if j > i + 2 && end_ok {
                out.push(chars[i..j].iter().collect());
                i = j;
                continue;
            }
        }
        i += 1;
    }
    out
}
