//! Evaluation harness: the 100-tree test suite, the single-shot baseline
//! prompt, suite statistics and human score aggregation.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::generator::{generate_cpt, sub_seed, GenError, GenParams};
use crate::model::{stats, stats_unchecked, CptNode, InvalidTree, TreeStats};
use crate::notation::{serialize, Style};
use crate::sketch::sha256_hex;

pub const DEFAULT_BASELINE_TEMPLATE: &str = include_str!("../templates/baseline_prompt.txt");

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("category {category} still needs {missing} trees after {budget} samples")]
    QuotaUnreachable {
        category: Category,
        missing: usize,
        budget: usize,
    },
    #[error("suite is empty")]
    EmptySuite,
    #[error(transparent)]
    InvalidTree(#[from] InvalidTree),
    #[error(transparent)]
    Gen(#[from] GenError),
    #[error("baseline template: {0}")]
    Template(String),
    #[error("score sheet line {line}: {message}")]
    Sheet { line: usize, message: String },
    #[error("score sheet has no rows")]
    EmptySheet,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

// ---------------------------------------------------------------------------
// Suite

/// Suite buckets, in filing order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Depth2,
    Depth3,
    Depth4,
    Depth5,
    MultilayerLoop,
    MultilayerSelection,
    ManyNodes,
}

impl Category {
    pub const ALL: [Category; 7] = [
        Category::Depth2,
        Category::Depth3,
        Category::Depth4,
        Category::Depth5,
        Category::MultilayerLoop,
        Category::MultilayerSelection,
        Category::ManyNodes,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Category::Depth2 => "depth2",
            Category::Depth3 => "depth3",
            Category::Depth4 => "depth4",
            Category::Depth5 => "depth5",
            Category::MultilayerLoop => "multilayer_loop",
            Category::MultilayerSelection => "multilayer_selection",
            Category::ManyNodes => "many_nodes",
        }
    }

    /// Whether a tree with these statistics belongs in the bucket.
    pub fn admits(self, s: &TreeStats, spec: &SuiteSpec) -> bool {
        match self {
            Category::Depth2 => s.depth == 2,
            Category::Depth3 => s.depth == 3,
            Category::Depth4 => s.depth == 4,
            Category::Depth5 => s.depth == 5,
            Category::MultilayerLoop => s.max_loop_nesting >= spec.min_nesting,
            Category::MultilayerSelection => s.max_selection_nesting >= spec.min_nesting,
            Category::ManyNodes => s.node_count > spec.node_threshold,
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SuiteSpec {
    pub depth2: usize,
    pub depth3: usize,
    pub depth4: usize,
    pub depth5: usize,
    pub multilayer_loop: usize,
    pub multilayer_selection: usize,
    pub many_nodes: usize,
    /// `many_nodes` takes trees with strictly more nodes than this.
    pub node_threshold: usize,
    pub min_nesting: usize,
    /// Trees to draw before giving up on unfilled quotas.
    pub sample_budget: usize,
    /// Shape probabilities for the draws. Depth and seed are overridden.
    #[serde(skip)]
    pub generator: GenParams,
}

impl Default for SuiteSpec {
    fn default() -> Self {
        Self {
            depth2: 10,
            depth3: 20,
            depth4: 20,
            depth5: 20,
            multilayer_loop: 10,
            multilayer_selection: 10,
            many_nodes: 10,
            node_threshold: 15,
            min_nesting: 2,
            sample_budget: 200_000,
            generator: GenParams::default(),
        }
    }
}

impl SuiteSpec {
    pub fn empty() -> Self {
        Self {
            depth2: 0,
            depth3: 0,
            depth4: 0,
            depth5: 0,
            multilayer_loop: 0,
            multilayer_selection: 0,
            many_nodes: 0,
            ..Self::default()
        }
    }

    pub fn quota(&self, c: Category) -> usize {
        match c {
            Category::Depth2 => self.depth2,
            Category::Depth3 => self.depth3,
            Category::Depth4 => self.depth4,
            Category::Depth5 => self.depth5,
            Category::MultilayerLoop => self.multilayer_loop,
            Category::MultilayerSelection => self.multilayer_selection,
            Category::ManyNodes => self.many_nodes,
        }
    }

    pub fn total(&self) -> usize {
        Category::ALL.iter().map(|&c| self.quota(c)).sum()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SuiteEntry {
    pub id: String,
    pub category: Category,
    pub cpt: CptNode,
    pub stats: TreeStats,
}

#[derive(Serialize)]
struct SuiteLine<'a> {
    id: &'a str,
    category: Category,
    cpt: String,
    stats: &'a TreeStats,
}

impl SuiteEntry {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(&SuiteLine {
            id: &self.id,
            category: self.category,
            cpt: self.cpt.to_string(),
            stats: &self.stats,
        })
        .expect("suite entry serializes")
    }
}

/// Draws trees until every quota is filled. Draw `i` uses depth `2 + i % 4`
/// and the `i`-th sub-seed of `seed`; each tree goes to the first bucket in
/// [`Category::ALL`] order that admits it and still has room, or is dropped.
/// Entries come back grouped by category.
pub fn build_suite(spec: &SuiteSpec, seed: u64) -> Result<Vec<SuiteEntry>, EvalError> {
    let mut buckets: BTreeMap<Category, Vec<(CptNode, TreeStats)>> = BTreeMap::new();
    let mut remaining = spec.total();
    let mut draws = 0;
    while remaining > 0 {
        if draws == spec.sample_budget {
            let (category, missing) = Category::ALL
                .iter()
                .map(|&c| (c, spec.quota(c) - buckets.get(&c).map_or(0, Vec::len)))
                .find(|&(_, missing)| missing > 0)
                .expect("some quota is unfilled");
            return Err(EvalError::QuotaUnreachable {
                category,
                missing,
                budget: spec.sample_budget,
            });
        }
        let params = GenParams {
            depth: 2 + draws % 4,
            seed: sub_seed(seed, draws as u64),
            ..spec.generator.clone()
        };
        draws += 1;
        let tree = generate_cpt(&params)?;
        let s = stats_unchecked(&tree);
        let target = Category::ALL.into_iter().find(|&c| {
            c.admits(&s, spec) && buckets.get(&c).map_or(0, Vec::len) < spec.quota(c)
        });
        if let Some(c) = target {
            buckets.entry(c).or_default().push((tree, s));
            remaining -= 1;
        }
    }
    log::debug!("suite filled after {draws} draws");
    let mut suite = Vec::with_capacity(spec.total());
    for (category, trees) in buckets {
        for (i, (cpt, stats)) in trees.into_iter().enumerate() {
            suite.push(SuiteEntry {
                id: format!("{category}-{i:03}"),
                category,
                cpt,
                stats,
            });
        }
    }
    Ok(suite)
}

/// Max/min shape figures over a collection of trees.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatsSummary {
    pub trees: usize,
    pub max_nodes: usize,
    pub min_nodes: usize,
    pub max_activities: usize,
    pub min_activities: usize,
    pub max_operators: usize,
    pub min_operators: usize,
    pub max_depth: usize,
    pub min_depth: usize,
    /// Trees with selection nesting of at least 2.
    pub multilayer_selection: usize,
    /// Trees with loop nesting of at least 2.
    pub multilayer_loop: usize,
}

impl StatsSummary {
    pub fn from_stats<'a>(all: impl IntoIterator<Item = &'a TreeStats>) -> Option<Self> {
        let mut it = all.into_iter();
        let first = it.next()?;
        let mut out = StatsSummary {
            trees: 0,
            max_nodes: first.node_count,
            min_nodes: first.node_count,
            max_activities: first.activity_count,
            min_activities: first.activity_count,
            max_operators: first.operator_count,
            min_operators: first.operator_count,
            max_depth: first.depth,
            min_depth: first.depth,
            multilayer_selection: 0,
            multilayer_loop: 0,
        };
        for s in std::iter::once(first).chain(it) {
            out.trees += 1;
            out.max_nodes = out.max_nodes.max(s.node_count);
            out.min_nodes = out.min_nodes.min(s.node_count);
            out.max_activities = out.max_activities.max(s.activity_count);
            out.min_activities = out.min_activities.min(s.activity_count);
            out.max_operators = out.max_operators.max(s.operator_count);
            out.min_operators = out.min_operators.min(s.operator_count);
            out.max_depth = out.max_depth.max(s.depth);
            out.min_depth = out.min_depth.min(s.depth);
            out.multilayer_selection += usize::from(s.max_selection_nesting >= 2);
            out.multilayer_loop += usize::from(s.max_loop_nesting >= 2);
        }
        Some(out)
    }

    /// Two-column table: metric, value.
    pub fn to_table(&self) -> String {
        let rows = [
            ("trees", self.trees),
            ("max nodes", self.max_nodes),
            ("max activities", self.max_activities),
            ("max operators", self.max_operators),
            ("min nodes", self.min_nodes),
            ("min activities", self.min_activities),
            ("min operators", self.min_operators),
            ("max depth", self.max_depth),
            ("min depth", self.min_depth),
            ("multi-layer selection", self.multilayer_selection),
            ("multi-layer loop", self.multilayer_loop),
        ];
        rows.iter()
            .map(|(k, v)| format!("{k:<22}{v}\n"))
            .collect()
    }
}

pub fn suite_stats<'a>(
    suite: impl IntoIterator<Item = &'a CptNode>,
) -> Result<StatsSummary, EvalError> {
    let all = suite
        .into_iter()
        .map(stats)
        .collect::<Result<Vec<_>, _>>()?;
    StatsSummary::from_stats(&all).ok_or(EvalError::EmptySuite)
}

// ---------------------------------------------------------------------------
// Baseline prompt

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ExamplePair {
    pub cpt: String,
    pub bpts: String,
}

/// Sectioned single-shot prompt template.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BaselineTemplate {
    pub sections: Vec<(String, String)>,
    pub examples: Vec<ExamplePair>,
    pub example_count: usize,
    checksum: String,
}

pub const BASELINE_SECTIONS: [&str; 6] = [
    "Instruction",
    "Context",
    "Prompt",
    "Example",
    "Output Indicator",
    "Conditional Process Tree",
];

const EXAMPLES_MARKER: &str = "=== examples ===";

impl Default for BaselineTemplate {
    fn default() -> Self {
        Self::parse(DEFAULT_BASELINE_TEMPLATE).expect("bundled baseline template is valid")
    }
}

impl BaselineTemplate {
    pub fn load(path: &Path) -> Result<Self, EvalError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn parse(source: &str) -> Result<Self, EvalError> {
        let bad = |m: String| EvalError::Template(m);
        let (body, examples) = match source.lines().position(|l| l.trim_end() == EXAMPLES_MARKER) {
            Some(at) => {
                let lines: Vec<&str> = source.lines().collect();
                (lines[..at].join("\n"), lines[at + 1..].join("\n"))
            }
            None => (source.to_string(), String::new()),
        };

        let mut sections: Vec<(String, String)> = Vec::new();
        for line in body.lines() {
            if let Some(name) = line.strip_prefix("### ") {
                sections.push((name.trim().to_string(), String::new()));
            } else if let Some((_, text)) = sections.last_mut() {
                text.push_str(line);
                text.push('\n');
            } else if !(line.is_empty() || line.starts_with('#')) {
                return Err(bad(format!("text before the first section: {line:?}")));
            }
        }
        for (_, text) in &mut sections {
            *text = text.trim().to_string();
        }
        let names: Vec<&str> = sections.iter().map(|(n, _)| n.as_str()).collect();
        if names != BASELINE_SECTIONS {
            return Err(bad(format!(
                "expected sections {BASELINE_SECTIONS:?}, found {names:?}"
            )));
        }
        if sections[3].1.matches("{examples}").count() != 1 {
            return Err(bad("Example section must contain {examples} once".into()));
        }
        if sections[5].1 != "{cpt}" {
            return Err(bad("tree section must be exactly {cpt}".into()));
        }

        let mut pairs = Vec::new();
        for block in examples.split("\n\n").map(str::trim).filter(|b| !b.is_empty()) {
            let mut cpt = None;
            let mut bpts = None;
            for line in block.lines() {
                if let Some(v) = line.strip_prefix("CPT:") {
                    cpt = Some(v.trim().to_string());
                } else if let Some(v) = line.strip_prefix("BPTS:") {
                    bpts = Some(v.trim().to_string());
                } else {
                    return Err(bad(format!("unexpected example line {line:?}")));
                }
            }
            match (cpt, bpts) {
                (Some(cpt), Some(bpts)) => pairs.push(ExamplePair { cpt, bpts }),
                _ => return Err(bad(format!("incomplete example {block:?}"))),
            }
        }
        Ok(Self {
            sections,
            example_count: pairs.len().min(2),
            examples: pairs,
            checksum: sha256_hex(source.as_bytes()),
        })
    }

    pub fn with_example_count(mut self, n: usize) -> Result<Self, EvalError> {
        if n > self.examples.len() {
            return Err(EvalError::Template(format!(
                "asked for {n} examples, template has {}",
                self.examples.len()
            )));
        }
        self.example_count = n;
        Ok(self)
    }

    pub fn checksum(&self) -> &str {
        &self.checksum
    }

    pub fn render(&self, cpt: &CptNode) -> Result<String, EvalError> {
        let tree = serialize(cpt, Style::Unicode)?;
        let examples = self.examples[..self.example_count]
            .iter()
            .map(|e| format!("CPT: {}\nBPTS: {}", e.cpt, e.bpts))
            .collect::<Vec<_>>()
            .join("\n\n");
        let parts: Vec<String> = self
            .sections
            .iter()
            .map(|(name, body)| {
                let body = match name.as_str() {
                    "Example" => body.replace("{examples}", &examples),
                    "Conditional Process Tree" => tree.clone(),
                    _ => body.clone(),
                };
                format!("### {name}\n{body}")
            })
            .collect();
        Ok(parts.join("\n\n"))
    }
}

/// Baseline prompt from the bundled template.
pub fn traditional_prompt(cpt: &CptNode) -> Result<String, EvalError> {
    BaselineTemplate::default().render(cpt)
}

// ---------------------------------------------------------------------------
// Scores

pub const SCORING_RULE: &str = "\
# score 1: the sketch describes every activity and condition of the tree with the correct order, choice, concurrency and repetition
# score 0.5: structure mostly right with one local error (a wrong or missing connective, a misplaced branch)
# score 0: any other output
# final accuracy: mean score per record over evaluators, then mean over records, times 100";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub record_id: String,
    pub evaluator_id: String,
    pub score: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ScoreSheet {
    pub rows: Vec<ScoreRow>,
}

#[derive(Deserialize)]
struct RawRow {
    record_id: String,
    evaluator_id: String,
    score: Option<f64>,
}

impl ScoreSheet {
    /// Reads `record_id,evaluator_id,score` CSV. `#` lines are comments and
    /// extra columns are ignored.
    pub fn read_csv<R: Read>(input: R) -> Result<Self, EvalError> {
        let mut reader = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .flexible(true)
            .from_reader(input);
        let mut rows = Vec::new();
        for result in reader.deserialize::<RawRow>() {
            let raw = result.map_err(|e| EvalError::Sheet {
                line: e.position().map_or(0, |p| p.line() as usize),
                message: e.to_string(),
            })?;
            let line = rows.len() + 2;
            let score = raw.score.ok_or_else(|| EvalError::Sheet {
                line,
                message: format!("{} has no score from {}", raw.record_id, raw.evaluator_id),
            })?;
            if !(0.0..=1.0).contains(&score) {
                return Err(EvalError::Sheet {
                    line,
                    message: format!("score {score} outside [0, 1]"),
                });
            }
            rows.push(ScoreRow {
                record_id: raw.record_id,
                evaluator_id: raw.evaluator_id,
                score,
            });
        }
        Ok(Self { rows })
    }

    pub fn load(path: &Path) -> Result<Self, EvalError> {
        Self::read_csv(std::fs::File::open(path)?)
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<(), EvalError> {
        writeln!(out, "{SCORING_RULE}")?;
        let mut w = csv::Writer::from_writer(out);
        for row in &self.rows {
            w.serialize(row).map_err(csv_io)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn csv_io(e: csv::Error) -> EvalError {
    EvalError::Io(std::io::Error::other(e))
}

/// Mean over evaluators per record, then mean over records, as a
/// percentage.
pub fn aggregate_scores(sheet: &ScoreSheet) -> Result<f64, EvalError> {
    let mut per_record: BTreeMap<&str, (f64, usize)> = BTreeMap::new();
    for row in &sheet.rows {
        let e = per_record.entry(&row.record_id).or_default();
        e.0 += row.score;
        e.1 += 1;
    }
    if per_record.is_empty() {
        return Err(EvalError::EmptySheet);
    }
    let total: f64 = per_record.values().map(|(sum, n)| sum / *n as f64).sum();
    Ok(100.0 * total / per_record.len() as f64)
}

/// One item handed to human raters.
pub struct ScoringItem<'a> {
    pub record_id: &'a str,
    pub cpt: &'a CptNode,
    pub text: &'a str,
}

#[derive(Serialize)]
struct BlankRow<'a> {
    record_id: &'a str,
    evaluator_id: &'a str,
    score: &'a str,
    cpt: String,
    text: &'a str,
}

/// Writes a blank sheet: one row per item and evaluator, score left empty,
/// with the tree and the text to judge in trailing columns. Filled-in
/// sheets load with [`ScoreSheet::read_csv`].
pub fn write_scoring_sheet<'a, W: Write>(
    items: impl IntoIterator<Item = ScoringItem<'a>>,
    evaluators: &[&str],
    mut out: W,
) -> Result<(), EvalError> {
    writeln!(out, "{SCORING_RULE}")?;
    let mut w = csv::Writer::from_writer(out);
    for item in items {
        for evaluator in evaluators {
            w.serialize(BlankRow {
                record_id: item.record_id,
                evaluator_id: evaluator,
                score: "",
                cpt: item.cpt.to_string(),
                text: item.text,
            })
            .map_err(csv_io)?;
        }
    }
    w.flush()?;
    Ok(())
}
