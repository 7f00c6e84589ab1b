//! Conditional process trees and their conversion to business process text
//! sketches.

pub mod dataset;
pub mod evaluation;
pub mod generator;
pub mod llm;
pub mod model;
pub mod notation;
pub mod semantics;
pub mod sketch;

pub use generator::{generate_cpt, rationalize, GenParams};
pub use model::{
    stats, validate, ActivityLabel, ConditionLabel, CptNode, Element, NodePath, OperatorKind,
    TreeStats, Violation,
};
pub use notation::{parse, serialize, Style};
pub use semantics::{enumerate_traces, TraceSet};
pub use sketch::{back_parse, generate_bpts, Renderer, RendererId, RuleRenderer, Sketch};
