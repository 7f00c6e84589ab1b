//! Textual tree notation.
//!
//! Both the glyph form `→(a_1,×_c_1(∝(c_2,a_4),∧(a_2,a_3)))` and the ASCII
//! form `seq(a_1,xor_c_1(loop(c_2,a_4),par(a_2,a_3)))` are accepted. Labels
//! may omit the underscore (`a1`, `c1`); output always uses it. Free-text
//! labels are written quoted: `"Approve loan"` for an activity, `c"amount > 5"`
//! for a condition leaf, and `xor_"amount > 5"(..)` for a choice condition.
//! The silent activity is `tau` / `τ`.
//!
//! See `docs/notation.ebnf` for the grammar.

use std::fmt;

use thiserror::Error;

use crate::model::{
    ensure_valid, ActivityLabel, ConditionLabel, CptNode, Element, InvalidTree, Label,
    OperatorKind,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SourceSpan {
    pub start: usize,
    pub end: usize,
}

impl SourceSpan {
    fn new(start: usize, end: usize) -> Self {
        Self { start, end }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParseErrorKind {
    UnexpectedToken,
    ArityMismatch,
    UnknownOperator,
    BadLabel,
    UnbalancedParen,
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
#[error("{kind:?} at {}..{}: {message}", span.start, span.end)]
pub struct ParseError {
    pub span: SourceSpan,
    pub kind: ParseErrorKind,
    pub message: String,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Style {
    Unicode,
    #[default]
    Ascii,
}

pub fn parse(text: &str) -> Result<CptNode, ParseError> {
    let mut p = Parser { src: text, pos: 0 };
    p.skip_ws();
    if p.at_end() {
        return Err(p.error(ParseErrorKind::UnexpectedToken, 0, "empty input"));
    }
    let tree = p.tree()?;
    p.skip_ws();
    match p.peek() {
        None => Ok(tree),
        Some(')') => Err(p.error(
            ParseErrorKind::UnbalancedParen,
            p.pos + 1,
            "unmatched `)`",
        )),
        Some(c) => Err(p.error(
            ParseErrorKind::UnexpectedToken,
            p.pos + c.len_utf8(),
            format!("unexpected `{c}` after the end of the tree"),
        )),
    }
}

/// Canonical serialization of a valid tree.
pub fn serialize(node: &CptNode, style: Style) -> Result<String, InvalidTree> {
    ensure_valid(node)?;
    Ok(serialize_unchecked(node, style))
}

/// Serializes any tree, well formed or not. Rough trees print fine this way
/// but may not parse back.
pub fn serialize_unchecked(node: &CptNode, style: Style) -> String {
    let mut out = String::new();
    write_node(&mut out, node, style).expect("writing to a String cannot fail");
    out
}

impl fmt::Display for CptNode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let style = if f.alternate() {
            Style::Unicode
        } else {
            Style::Ascii
        };
        write_node(f, self, style)
    }
}

fn write_node<W: fmt::Write>(out: &mut W, node: &CptNode, style: Style) -> fmt::Result {
    match &node.element {
        Element::Activity(label) => write_label(out, label.label(), 'a', ""),
        Element::Condition(label) => write_label(out, label.label(), 'c', "c"),
        Element::Silent => out.write_str(match style {
            Style::Unicode => "τ",
            Style::Ascii => "tau",
        }),
        Element::Operator { kind, condition } => {
            match style {
                Style::Unicode => out.write_str(kind.glyph())?,
                Style::Ascii => out.write_str(kind.keyword())?,
            }
            if let Some(cond) = condition {
                out.write_char('_')?;
                write_label(out, cond.label(), 'c', "")?;
            }
            out.write_char('(')?;
            for (i, child) in node.children.iter().enumerate() {
                if i > 0 {
                    out.write_char(',')?;
                }
                write_node(out, child, style)?;
            }
            out.write_char(')')
        }
    }
}

fn write_label<W: fmt::Write>(
    out: &mut W,
    label: &Label,
    prefix: char,
    quote_prefix: &str,
) -> fmt::Result {
    match label {
        Label::Indexed(n) => write!(out, "{prefix}_{n}"),
        Label::Text(text) => {
            out.write_str(quote_prefix)?;
            out.write_char('"')?;
            for c in text.chars() {
                if c == '"' || c == '\\' {
                    out.write_char('\\')?;
                }
                out.write_char(c)?;
            }
            out.write_char('"')
        }
    }
}

struct Parser<'a> {
    src: &'a str,
    pos: usize,
}

fn is_word_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_'
}

impl<'a> Parser<'a> {
    fn rest(&self) -> &'a str {
        &self.src[self.pos..]
    }

    fn peek(&self) -> Option<char> {
        self.rest().chars().next()
    }

    fn at_end(&self) -> bool {
        self.pos >= self.src.len()
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek()?;
        self.pos += c.len_utf8();
        Some(c)
    }

    fn skip_ws(&mut self) {
        while self.peek().is_some_and(char::is_whitespace) {
            self.bump();
        }
    }

    fn error(&self, kind: ParseErrorKind, end: usize, message: impl Into<String>) -> ParseError {
        self.error_at(kind, self.pos, end, message)
    }

    fn error_at(
        &self,
        kind: ParseErrorKind,
        start: usize,
        end: usize,
        message: impl Into<String>,
    ) -> ParseError {
        let end = end.min(self.src.len()).max(start);
        ParseError {
            span: SourceSpan::new(start, end),
            kind,
            message: message.into(),
        }
    }

    fn word(&mut self) -> &'a str {
        let start = self.pos;
        while self.peek().is_some_and(is_word_char) {
            self.bump();
        }
        &self.src[start..self.pos]
    }

    fn unexpected(&self, expected: &str) -> ParseError {
        match self.peek() {
            None => self.error(
                ParseErrorKind::UnbalancedParen,
                self.pos,
                format!("unexpected end of input, expected {expected}"),
            ),
            Some(c) => self.error(
                if c == ')' {
                    ParseErrorKind::UnbalancedParen
                } else {
                    ParseErrorKind::UnexpectedToken
                },
                self.pos + c.len_utf8(),
                format!("expected {expected}, found `{c}`"),
            ),
        }
    }

    fn tree(&mut self) -> Result<CptNode, ParseError> {
        self.skip_ws();
        let start = self.pos;
        let Some(c) = self.peek() else {
            return Err(self.unexpected("a tree"));
        };
        match c {
            '→' => {
                self.bump();
                self.operator_args(OperatorKind::Sequence, None, start)
            }
            '∧' => {
                self.bump();
                self.operator_args(OperatorKind::Parallel, None, start)
            }
            '∝' => {
                self.bump();
                self.operator_args(OperatorKind::Loop, None, start)
            }
            '×' => {
                self.bump();
                if self.peek() != Some('_') {
                    return Err(self.unexpected("`_` before the choice condition"));
                }
                self.bump();
                let cond = self.condition_after_underscore()?;
                self.operator_args(OperatorKind::Exclusive, Some(cond), start)
            }
            'τ' => {
                self.bump();
                Ok(CptNode::silent())
            }
            '"' => {
                let text = self.quoted()?;
                let label = ActivityLabel::text(text).map_err(|e| {
                    self.error_at(ParseErrorKind::BadLabel, start, self.pos, e.to_string())
                })?;
                Ok(CptNode::leaf(Element::Activity(label)))
            }
            c if is_word_char(c) => self.word_tree(start),
            _ => Err(self.unexpected("a tree")),
        }
    }

    fn word_tree(&mut self, start: usize) -> Result<CptNode, ParseError> {
        let word = self.word();
        match word {
            "seq" => return self.operator_args(OperatorKind::Sequence, None, start),
            "par" => return self.operator_args(OperatorKind::Parallel, None, start),
            "loop" => return self.operator_args(OperatorKind::Loop, None, start),
            "tau" => return Ok(CptNode::silent()),
            _ => {}
        }
        if let Some(suffix) = word.strip_prefix("xor_") {
            let cond = if suffix.is_empty() {
                self.quoted_condition(start)?
            } else {
                ConditionLabel::parse_indexed(suffix).map_err(|e| {
                    self.error_at(ParseErrorKind::BadLabel, start + 4, self.pos, e.to_string())
                })?
            };
            return self.operator_args(OperatorKind::Exclusive, Some(cond), start);
        }
        if self.peek() == Some('"') && (word == "a" || word == "c") {
            let text = self.quoted()?;
            let bad = |e: crate::model::LabelError| {
                self.error_at(ParseErrorKind::BadLabel, start, self.pos, e.to_string())
            };
            return Ok(if word == "a" {
                CptNode::leaf(Element::Activity(ActivityLabel::text(text).map_err(bad)?))
            } else {
                CptNode::leaf(Element::Condition(ConditionLabel::text(text).map_err(bad)?))
            });
        }
        let end = self.pos;
        if word.starts_with('a') {
            if let Ok(label) = ActivityLabel::parse_indexed(word) {
                return Ok(CptNode::leaf(Element::Activity(label)));
            }
        } else if word.starts_with('c') {
            if let Ok(label) = ConditionLabel::parse_indexed(word) {
                return Ok(CptNode::leaf(Element::Condition(label)));
            }
        }
        let save = self.pos;
        self.skip_ws();
        let is_call = self.peek() == Some('(');
        self.pos = save;
        if is_call {
            Err(self.error_at(
                ParseErrorKind::UnknownOperator,
                start,
                end,
                format!("unknown operator `{word}`"),
            ))
        } else {
            Err(self.error_at(
                ParseErrorKind::BadLabel,
                start,
                end,
                format!("`{word}` is not an activity (a_<n>) or condition (c_<n>) label"),
            ))
        }
    }

    fn condition_after_underscore(&mut self) -> Result<ConditionLabel, ParseError> {
        let start = self.pos;
        if self.peek() == Some('"') {
            return self.quoted_condition(start);
        }
        let word = self.word();
        ConditionLabel::parse_indexed(word)
            .map_err(|e| self.error_at(ParseErrorKind::BadLabel, start, self.pos, e.to_string()))
    }

    fn quoted_condition(&mut self, start: usize) -> Result<ConditionLabel, ParseError> {
        if self.peek() != Some('"') {
            return Err(self.unexpected("a choice condition"));
        }
        let text = self.quoted()?;
        ConditionLabel::text(text)
            .map_err(|e| self.error_at(ParseErrorKind::BadLabel, start, self.pos, e.to_string()))
    }

    fn quoted(&mut self) -> Result<String, ParseError> {
        let start = self.pos;
        self.bump();
        let mut out = String::new();
        loop {
            match self.bump() {
                None => {
                    return Err(self.error_at(
                        ParseErrorKind::UnexpectedToken,
                        start,
                        self.pos,
                        "unterminated quoted label",
                    ))
                }
                Some('"') => return Ok(out),
                Some('\\') => match self.bump() {
                    Some(c @ ('"' | '\\')) => out.push(c),
                    _ => {
                        return Err(self.error_at(
                            ParseErrorKind::BadLabel,
                            start,
                            self.pos,
                            "only \\\" and \\\\ escapes are allowed",
                        ))
                    }
                },
                Some(c) => out.push(c),
            }
        }
    }

    fn operator_args(
        &mut self,
        kind: OperatorKind,
        condition: Option<ConditionLabel>,
        start: usize,
    ) -> Result<CptNode, ParseError> {
        self.skip_ws();
        if self.peek() != Some('(') {
            return Err(self.unexpected(&format!("`(` after `{kind}`")));
        }
        self.bump();
        let mut children = vec![self.tree()?];
        loop {
            self.skip_ws();
            match self.peek() {
                Some(',') => {
                    self.bump();
                    children.push(self.tree()?);
                }
                Some(')') => {
                    self.bump();
                    break;
                }
                None => {
                    return Err(self.error_at(
                        ParseErrorKind::UnbalancedParen,
                        start,
                        self.pos,
                        format!("`{kind}(` is never closed"),
                    ))
                }
                Some(_) => return Err(self.unexpected("`,` or `)`")),
            }
        }
        let n = children.len();
        let arity_ok = if kind.is_n_ary() { n >= 2 } else { n == 2 };
        if !arity_ok {
            let expected = if kind.is_n_ary() {
                "at least 2"
            } else {
                "exactly 2"
            };
            return Err(self.error_at(
                ParseErrorKind::ArityMismatch,
                start,
                self.pos,
                format!("`{kind}` takes {expected} children, found {n}"),
            ));
        }
        Ok(CptNode {
            element: Element::Operator { kind, condition },
            children,
        })
    }
}
