//! Text sketch generation.
//!
//! A tree is converted bottom-up: leaves render directly, and every operator
//! node merges the already rendered sketches of its children in one
//! [`Renderer::merge`] call. The merge is either the deterministic
//! [`RuleRenderer`] or a language model fed a per-operator prompt
//! ([`LlmRenderer`]).

use std::collections::BTreeMap;
use std::error::Error as StdError;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::llm::{Completer, MessageLayout, ModelParams};
use crate::model::{
    ensure_valid, ActivityLabel, ConditionLabel, CptNode, Element, InvalidTree, NodePath,
    OperatorKind,
};

/// Fixed instruction sent with every merge prompt.
pub const INSTRUCTION: &str =
    "Cover the input into fluent natural language without changing its meaning";

pub const DEFAULT_MERGE_TEMPLATES: &str = include_str!("../templates/merge_prompts.txt");

const ACTIVITY_PREFIX: &str = "execute activity ";

pub type RenderError = Box<dyn StdError + Send + Sync>;

#[derive(Debug, Error)]
pub enum SketchError {
    #[error(transparent)]
    InvalidTree(#[from] InvalidTree),
    #[error("node is an operator, not a leaf")]
    NotALeaf,
    #[error("{operator} cannot merge {found} sub-sketches")]
    ArityMismatch { operator: OperatorKind, found: usize },
    #[error("{0} needs a condition label")]
    MissingCondition(OperatorKind),
    #[error("renderer failed at {path}: {source}")]
    RendererFailure { path: NodePath, source: RenderError },
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RendererId {
    Rule,
    Llm,
    Mock,
    Custom(String),
}

impl fmt::Display for RendererId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RendererId::Rule => f.write_str("rule"),
            RendererId::Llm => f.write_str("llm"),
            RendererId::Mock => f.write_str("mock"),
            RendererId::Custom(name) => f.write_str(name),
        }
    }
}

/// Prompt content for a single merge, before any model call.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptInput {
    pub instruction: String,
    pub input_block: String,
    pub operator: OperatorKind,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PromptRecord {
    pub instruction: String,
    pub input_block: String,
    pub operator: OperatorKind,
    pub response: String,
    pub model_params: ModelParams,
    pub layout: MessageLayout,
    pub cache_key: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Sketch {
    pub text: String,
    /// Rendered text of every node, keyed by path.
    pub node_sketches: BTreeMap<NodePath, String>,
    pub renderer_id: RendererId,
    /// One record per model call, in call order. Empty for the rule renderer.
    pub prompts: Vec<PromptRecord>,
    pub template_checksum: Option<String>,
}

pub struct MergeRequest<'a> {
    pub operator: OperatorKind,
    pub subs: &'a [String],
    pub condition: Option<&'a ConditionLabel>,
    pub path: &'a NodePath,
}

pub struct Merge {
    pub text: String,
    pub prompt: Option<PromptRecord>,
}

/// Merges the sketches of an operator's children into one sketch.
///
/// Implementations are called from several threads when trees are rendered
/// in parallel.
pub trait Renderer: Sync {
    fn id(&self) -> RendererId;
    fn merge(&self, request: &MergeRequest<'_>) -> Result<Merge, RenderError>;
    fn template_checksum(&self) -> Option<String> {
        None
    }
}

pub fn render_leaf(node: &CptNode) -> Result<String, SketchError> {
    match &node.element {
        Element::Activity(label) => Ok(format!("{ACTIVITY_PREFIX}{label}")),
        Element::Condition(label) => Ok(label.to_string()),
        Element::Silent => Ok(String::new()),
        Element::Operator { .. } => Err(SketchError::NotALeaf),
    }
}

fn check_arity(
    operator: OperatorKind,
    subs: usize,
    condition: Option<&ConditionLabel>,
) -> Result<(), SketchError> {
    let ok = match operator {
        OperatorKind::Sequence | OperatorKind::Parallel => subs >= 2,
        OperatorKind::Exclusive => subs == 2,
        OperatorKind::Loop => subs == 1,
    };
    if !ok {
        return Err(SketchError::ArityMismatch {
            operator,
            found: subs,
        });
    }
    if matches!(operator, OperatorKind::Exclusive | OperatorKind::Loop) && condition.is_none() {
        return Err(SketchError::MissingCondition(operator));
    }
    Ok(())
}

/// Post-order conversion of a valid tree.
pub fn generate_bpts(cpt: &CptNode, renderer: &dyn Renderer) -> Result<Sketch, SketchError> {
    ensure_valid(cpt)?;
    let mut sketch = Sketch {
        text: String::new(),
        node_sketches: BTreeMap::new(),
        renderer_id: renderer.id(),
        prompts: Vec::new(),
        template_checksum: renderer.template_checksum(),
    };
    sketch.text = recurse(cpt, NodePath::root(), renderer, &mut sketch)?;
    Ok(sketch)
}

fn recurse(
    node: &CptNode,
    path: NodePath,
    renderer: &dyn Renderer,
    sketch: &mut Sketch,
) -> Result<String, SketchError> {
    let text = match &node.element {
        Element::Operator { kind, condition } => {
            let mut subs = Vec::with_capacity(node.children.len());
            let mut cond = condition.as_ref();
            for (i, child) in node.children.iter().enumerate() {
                let sub = recurse(child, path.child(i), renderer, sketch)?;
                if *kind == OperatorKind::Loop && i == 0 {
                    if let Element::Condition(label) = &child.element {
                        cond = Some(label);
                    }
                    continue;
                }
                subs.push(sub);
            }
            let merged = renderer
                .merge(&MergeRequest {
                    operator: *kind,
                    subs: &subs,
                    condition: cond,
                    path: &path,
                })
                .map_err(|source| SketchError::RendererFailure {
                    path: path.clone(),
                    source,
                })?;
            sketch.prompts.extend(merged.prompt);
            merged.text
        }
        _ => render_leaf(node)?,
    };
    sketch.node_sketches.insert(path, text.clone());
    Ok(text)
}

// ---------------------------------------------------------------------------
// Rule renderer

/// Deterministic offline merge. Every output parses back with
/// [`back_parse`].
#[derive(Clone, Copy, Debug, Default)]
pub struct RuleRenderer;

impl Renderer for RuleRenderer {
    fn id(&self) -> RendererId {
        RendererId::Rule
    }

    fn merge(&self, req: &MergeRequest<'_>) -> Result<Merge, RenderError> {
        Ok(Merge {
            text: rule_render(req.operator, req.subs, req.condition)?,
            prompt: None,
        })
    }
}

fn is_atomic(sub: &str) -> bool {
    sub.strip_prefix(ACTIVITY_PREFIX)
        .is_some_and(|label| !label.is_empty() && label.chars().all(is_label_char))
}

fn is_label_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_'
}

/// A sub-sketch in running text: plain activity phrases stay as they are,
/// anything else is parenthesized.
fn item(sub: &str) -> String {
    if is_atomic(sub) {
        sub.to_string()
    } else {
        format!("({sub})")
    }
}

pub fn rule_render(
    operator: OperatorKind,
    subs: &[String],
    condition: Option<&ConditionLabel>,
) -> Result<String, SketchError> {
    check_arity(operator, subs.len(), condition)?;
    let out = match operator {
        OperatorKind::Sequence => {
            let mut s = format!("First, {}", item(&subs[0]));
            for sub in &subs[1..] {
                s.push_str(". Then, ");
                s.push_str(&item(sub));
            }
            s.push('.');
            s
        }
        OperatorKind::Exclusive => format!(
            "If condition {} is met, {}. Otherwise, {}.",
            condition.expect("checked"),
            item(&subs[0]),
            item(&subs[1])
        ),
        OperatorKind::Parallel => {
            let n = subs.len();
            let head: Vec<String> = subs[..n - 1].iter().map(|s| format!("({s})")).collect();
            format!("Simultaneously: {} and ({}).", head.join(", "), subs[n - 1])
        }
        OperatorKind::Loop => {
            let cond = condition.expect("checked");
            format!(
                "While condition {cond} is satisfied, repeatedly {}; once {cond} is not met, the loop ends.",
                item(&subs[0])
            )
        }
    };
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("cannot back-parse sketch at byte {pos}: {message}")]
pub struct BackParseError {
    pub pos: usize,
    pub message: String,
}

/// Rebuilds the tree behind a rule-rendered sketch.
///
/// Only text produced by [`RuleRenderer`] over indexed labels is accepted;
/// free-form text fails.
pub fn back_parse(text: &str) -> Result<CptNode, BackParseError> {
    let mut p = BackParser { src: text, pos: 0 };
    if text.is_empty() {
        return Ok(CptNode::silent());
    }
    let tree = p.sketch()?;
    if p.pos != text.len() {
        return Err(p.error("trailing text after the sketch"));
    }
    Ok(tree)
}

struct BackParser<'a> {
    src: &'a str,
    pos: usize,
}

impl BackParser<'_> {
    fn error(&self, message: impl Into<String>) -> BackParseError {
        BackParseError {
            pos: self.pos,
            message: message.into(),
        }
    }

    fn rest(&self) -> &str {
        &self.src[self.pos..]
    }

    fn eat(&mut self, lit: &str) -> bool {
        if self.rest().starts_with(lit) {
            self.pos += lit.len();
            true
        } else {
            false
        }
    }

    fn expect(&mut self, lit: &str) -> Result<(), BackParseError> {
        if self.eat(lit) {
            Ok(())
        } else {
            Err(self.error(format!("expected `{lit}`")))
        }
    }

    fn label(&mut self) -> &str {
        let start = self.pos;
        let len = self
            .rest()
            .find(|c: char| !is_label_char(c))
            .unwrap_or(self.rest().len());
        self.pos += len;
        &self.src[start..self.pos]
    }

    fn activity(&mut self) -> Result<CptNode, BackParseError> {
        let start = self.pos;
        let word = self.label();
        ActivityLabel::parse_indexed(word)
            .map(|l| CptNode::leaf(Element::Activity(l)))
            .map_err(|e| BackParseError {
                pos: start,
                message: e.to_string(),
            })
    }

    fn condition(&mut self) -> Result<ConditionLabel, BackParseError> {
        let start = self.pos;
        let word = self.label();
        ConditionLabel::parse_indexed(word).map_err(|e| BackParseError {
            pos: start,
            message: e.to_string(),
        })
    }

    /// A bare sketch: composite sentence, activity phrase, or condition label.
    fn sketch(&mut self) -> Result<CptNode, BackParseError> {
        if self.eat("First, ") {
            let mut children = vec![self.item()?];
            while self.eat(". Then, ") {
                children.push(self.item()?);
            }
            self.expect(".")?;
            if children.len() < 2 {
                return Err(self.error("sequence with a single step"));
            }
            Ok(CptNode::seq(children))
        } else if self.eat("If condition ") {
            let cond = self.condition()?;
            self.expect(" is met, ")?;
            let left = self.item()?;
            self.expect(". Otherwise, ")?;
            let right = self.item()?;
            self.expect(".")?;
            Ok(CptNode {
                element: Element::Operator {
                    kind: OperatorKind::Exclusive,
                    condition: Some(cond),
                },
                children: vec![left, right],
            })
        } else if self.eat("Simultaneously: ") {
            let mut children = vec![self.bracketed()?];
            loop {
                if self.eat(", ") {
                    children.push(self.bracketed()?);
                } else if self.eat(" and ") {
                    children.push(self.bracketed()?);
                    break;
                } else {
                    return Err(self.error("expected `, (` or ` and (`"));
                }
            }
            self.expect(".")?;
            Ok(CptNode::par(children))
        } else if self.eat("While condition ") {
            let cond = self.condition()?;
            self.expect(" is satisfied, repeatedly ")?;
            let body = self.item()?;
            self.expect("; once ")?;
            let again = self.condition()?;
            if again != cond {
                return Err(self.error(format!("loop closes on {again}, opened on {cond}")));
            }
            self.expect(" is not met, the loop ends.")?;
            Ok(CptNode::operator(
                OperatorKind::Loop,
                vec![CptNode::leaf(Element::Condition(cond)), body],
            ))
        } else if self.eat(ACTIVITY_PREFIX) {
            self.activity()
        } else if self.rest().starts_with('c') {
            Ok(CptNode::leaf(Element::Condition(self.condition()?)))
        } else {
            Err(self.error("not a rule-rendered sketch"))
        }
    }

    fn item(&mut self) -> Result<CptNode, BackParseError> {
        if self.rest().starts_with('(') {
            self.bracketed()
        } else {
            self.expect(ACTIVITY_PREFIX)?;
            self.activity()
        }
    }

    fn bracketed(&mut self) -> Result<CptNode, BackParseError> {
        self.expect("(")?;
        if self.eat(")") {
            return Ok(CptNode::silent());
        }
        let inner = self.sketch()?;
        self.expect(")")?;
        Ok(inner)
    }
}

// ---------------------------------------------------------------------------
// Prompt templates

#[derive(Debug, Error)]
pub enum TemplateError {
    #[error("template file is missing the [{0}] section")]
    MissingSection(&'static str),
    #[error("unknown template section [{0}]")]
    UnknownSection(String),
    #[error("unknown slot `{{{slot}}}` in [{section}]")]
    UnknownSlot { section: String, slot: String },
    #[error("[{0}] must use the {{cond}} slot")]
    MissingConditionSlot(&'static str),
    #[error("failed to read template file: {0}")]
    Io(#[from] std::io::Error),
}

/// Per-operator input-block templates, loaded from a sectioned text file.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PromptTemplates {
    sequence: String,
    exclusive: String,
    parallel: String,
    looped: String,
    examples: String,
    checksum: String,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        Self::parse(DEFAULT_MERGE_TEMPLATES).expect("bundled templates are valid")
    }
}

impl PromptTemplates {
    pub fn load(path: &Path) -> Result<Self, TemplateError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn parse(source: &str) -> Result<Self, TemplateError> {
        let sections = parse_sections(source)?;
        let take = |name: &'static str| -> Result<String, TemplateError> {
            sections
                .get(name)
                .cloned()
                .ok_or(TemplateError::MissingSection(name))
        };
        let templates = Self {
            sequence: take("sequence")?,
            exclusive: take("exclusive")?,
            parallel: take("parallel")?,
            looped: take("loop")?,
            examples: sections.get("examples").cloned().unwrap_or_default(),
            checksum: sha256_hex(source.as_bytes()),
        };
        for (name, body) in [
            ("sequence", &templates.sequence),
            ("exclusive", &templates.exclusive),
            ("parallel", &templates.parallel),
            ("loop", &templates.looped),
        ] {
            check_slots(name, body)?;
        }
        for (name, body) in [("exclusive", &templates.exclusive), ("loop", &templates.looped)] {
            if !body.contains("{cond}") {
                return Err(TemplateError::MissingConditionSlot(name));
            }
        }
        Ok(templates)
    }

    /// Hex SHA-256 of the template source.
    pub fn checksum(&self) -> &str {
        &self.checksum
    }

    fn body(&self, operator: OperatorKind) -> &str {
        match operator {
            OperatorKind::Sequence => &self.sequence,
            OperatorKind::Exclusive => &self.exclusive,
            OperatorKind::Parallel => &self.parallel,
            OperatorKind::Loop => &self.looped,
        }
    }

    /// Fills the operator's template with the sub-sketches.
    pub fn construct_prompt(
        &self,
        operator: OperatorKind,
        subs: &[String],
        condition: Option<&ConditionLabel>,
    ) -> Result<PromptInput, SketchError> {
        check_arity(operator, subs.len(), condition)?;
        let filled = fill(self.body(operator), subs, condition);
        let input_block = if self.examples.is_empty() {
            filled
        } else {
            format!("{}\n\n{filled}", self.examples)
        };
        Ok(PromptInput {
            instruction: INSTRUCTION.to_string(),
            input_block,
            operator,
        })
    }
}

fn parse_sections(source: &str) -> Result<BTreeMap<String, String>, TemplateError> {
    const KNOWN: [&str; 5] = ["sequence", "exclusive", "parallel", "loop", "examples"];
    let mut sections = BTreeMap::new();
    let mut current: Option<(String, Vec<&str>)> = None;
    let mut finish = |cur: Option<(String, Vec<&str>)>| {
        if let Some((name, lines)) = cur {
            sections.insert(name, lines.join("\n").trim().to_string());
        }
    };
    for line in source.lines() {
        let trimmed = line.trim();
        if trimmed.starts_with('#') {
            continue;
        }
        if let Some(name) = trimmed.strip_prefix('[').and_then(|r| r.strip_suffix(']')) {
            if !KNOWN.contains(&name) {
                return Err(TemplateError::UnknownSection(name.to_string()));
            }
            finish(current.take());
            current = Some((name.to_string(), Vec::new()));
        } else if let Some((_, lines)) = current.as_mut() {
            lines.push(line);
        }
    }
    finish(current);
    Ok(sections)
}

fn slots(body: &str) -> impl Iterator<Item = &str> {
    body.split('{')
        .skip(1)
        .filter_map(|part| part.split_once('}').map(|(slot, _)| slot))
}

fn check_slots(section: &str, body: &str) -> Result<(), TemplateError> {
    for slot in slots(body) {
        let ok = slot == "cond"
            || slot == "subN..."
            || slot == "subN…"
            || slot
                .strip_prefix("sub")
                .is_some_and(|n| !n.is_empty() && n.bytes().all(|b| b.is_ascii_digit()));
        if !ok {
            return Err(TemplateError::UnknownSlot {
                section: section.to_string(),
                slot: slot.to_string(),
            });
        }
    }
    Ok(())
}

fn fill(body: &str, subs: &[String], condition: Option<&ConditionLabel>) -> String {
    let mut out = String::with_capacity(body.len() + subs.iter().map(String::len).sum::<usize>());
    let mut rest = body;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let Some(close) = after.find('}') else {
            out.push_str(&rest[open..]);
            rest = "";
            break;
        };
        let slot = &after[..close];
        match slot {
            "cond" => {
                if let Some(c) = condition {
                    out.push_str(&c.to_string());
                }
            }
            "subN..." | "subN…" => {
                let list: Vec<String> = subs
                    .iter()
                    .enumerate()
                    .map(|(i, s)| format!("{}. {s}", i + 1))
                    .collect();
                out.push_str(&list.join(" "));
            }
            _ => {
                let idx: usize = slot[3..].parse().unwrap_or(0);
                if let Some(s) = idx.checked_sub(1).and_then(|i| subs.get(i)) {
                    out.push_str(s);
                }
            }
        }
        rest = &after[close + 1..];
    }
    out.push_str(rest);
    out
}

pub(crate) fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

// ---------------------------------------------------------------------------
// Model-backed renderer

/// Merges through a completion client, one prompt per operator node.
pub struct LlmRenderer<'a, C: Completer + ?Sized> {
    client: &'a C,
    templates: PromptTemplates,
}

impl<'a, C: Completer + ?Sized> LlmRenderer<'a, C> {
    pub fn new(client: &'a C, templates: PromptTemplates) -> Self {
        Self { client, templates }
    }
}

impl<C: Completer + ?Sized> Renderer for LlmRenderer<'_, C> {
    fn id(&self) -> RendererId {
        self.client.renderer_id()
    }

    fn merge(&self, req: &MergeRequest<'_>) -> Result<Merge, RenderError> {
        let input = self
            .templates
            .construct_prompt(req.operator, req.subs, req.condition)?;
        let completion = self.client.complete(&input)?;
        Ok(Merge {
            text: completion.text.clone(),
            prompt: Some(PromptRecord {
                instruction: input.instruction,
                input_block: input.input_block,
                operator: input.operator,
                response: completion.text,
                model_params: self.client.model_params().clone(),
                layout: self.client.layout(),
                cache_key: completion.cache_key,
            }),
        })
    }

    fn template_checksum(&self) -> Option<String> {
        Some(self.templates.checksum().to_string())
    }
}
