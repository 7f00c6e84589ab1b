use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "cptsketch",
    version,
    about = "Generate conditional process trees and turn them into text sketches"
)]
pub struct Cli {
    /// JSON config file; flags override its values.
    #[arg(long, global = true, env = "CPTSKETCH_CONFIG", value_name = "PATH")]
    pub config: Option<PathBuf>,

    /// Worker threads for dataset and suite work (0 = one per logical core).
    #[arg(long, global = true, default_value_t = 0, value_name = "N")]
    pub jobs: usize,

    /// Print the resolved configuration (secrets redacted) and exit.
    #[arg(long, global = true)]
    pub print_config: bool,

    /// Log more; repeat for debug output. RUST_LOG takes precedence.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print generated trees, one per line.
    Gen(GenCmd),
    /// Render a tree as a text sketch.
    Convert(ConvertCmd),
    /// Produce CPT/BPTS pairs as JSONL.
    Dataset(DatasetCmd),
    /// Build the 100-tree evaluation suite.
    Suite(SuiteCmd),
    /// Print the single-shot baseline prompt for a tree.
    Baseline(BaselineCmd),
    /// Statistics for one tree or a dataset file.
    Stats(StatsCmd),
    /// List the bounded execution traces of a tree.
    Trace(TraceCmd),
    /// Report rule violations of a tree.
    Validate(ValidateCmd),
    /// Aggregate a filled-in score sheet into an accuracy percentage.
    Score(ScoreCmd),
}

/// Tree argument: inline notation, `@path`, or `-` for stdin.
#[derive(Debug, Args)]
pub struct TreeArg {
    /// Tree in bracket notation, `@file` to read it from a file, or `-` for stdin.
    #[arg(value_name = "TREE")]
    pub tree: String,
}

#[derive(Debug, Args, Default)]
pub struct GenArgs {
    /// Maximum tree depth in node levels.
    #[arg(long)]
    pub depth: Option<usize>,
    /// Base seed; record i uses the i-th sub-seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Probability that an expanded node gets no children.
    #[arg(long, value_name = "P")]
    pub p_zero: Option<f64>,
    /// Probability that an expanded node gets two children.
    #[arg(long, value_name = "P")]
    pub p_two: Option<f64>,
    /// Smallest child count for wide nodes (at least 3).
    #[arg(long, value_name = "N")]
    pub num_low: Option<usize>,
    /// Largest child count for wide nodes.
    #[arg(long, value_name = "N")]
    pub num_up: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum RendererKind {
    /// Deterministic templates, no model.
    Rule,
    /// Chat-completion endpoint; needs CPTSKETCH_API_KEY.
    Llm,
    /// Offline echo of each merge prompt.
    Mock,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum LayoutArg {
    SystemUser,
    SingleUser,
}

#[derive(Debug, Args, Default)]
pub struct LlmArgs {
    /// Endpoint base URL; `/chat/completions` is appended.
    #[arg(long, env = "CPTSKETCH_BASE_URL", value_name = "URL")]
    pub base_url: Option<String>,
    /// Model identifier sent with each request.
    #[arg(long, value_name = "ID")]
    pub model: Option<String>,
    /// Sampling temperature (default 0).
    #[arg(long)]
    pub temperature: Option<f64>,
    /// Nucleus sampling mass (default 1).
    #[arg(long)]
    pub top_p: Option<f64>,
    /// Request cap per 60 s window (0 = unlimited).
    #[arg(long, value_name = "N")]
    pub rpm: Option<u32>,
    /// Retries after a transient failure.
    #[arg(long, value_name = "N")]
    pub max_retries: Option<u32>,
    /// Per-request timeout in seconds.
    #[arg(long, value_name = "SECS")]
    pub timeout: Option<u64>,
    /// Concurrent requests allowed.
    #[arg(long, value_name = "N")]
    pub max_in_flight: Option<usize>,
    /// How instruction and input are split into chat messages.
    #[arg(long, value_enum)]
    pub layout: Option<LayoutArg>,
    /// Merge prompt template file.
    #[arg(long, value_name = "PATH")]
    pub templates: Option<PathBuf>,
    /// Directory for cached responses.
    #[arg(long, value_name = "DIR")]
    pub cache_dir: Option<PathBuf>,
    /// JSONL file that every completion is appended to.
    #[arg(long, value_name = "PATH")]
    pub audit_log: Option<PathBuf>,
    /// Load cached responses from an audit log before running.
    #[arg(long, value_name = "PATH")]
    pub replay: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenCmd {
    /// Number of trees.
    #[arg(long, default_value_t = 1)]
    pub n: u64,
    #[command(flatten)]
    pub gen: GenArgs,
    /// Print glyphs instead of ASCII keywords.
    #[arg(long)]
    pub unicode: bool,
}

#[derive(Debug, Args)]
pub struct ConvertCmd {
    #[command(flatten)]
    pub tree: TreeArg,
    /// Renderer for operator merges.
    #[arg(long, value_enum, default_value = "rule")]
    pub renderer: RendererKind,
    /// Print the full sketch, with per-node text and prompts, as JSON.
    #[arg(long)]
    pub json: bool,
    #[command(flatten)]
    pub llm: LlmArgs,
}

#[derive(Debug, Args)]
pub struct DatasetCmd {
    /// Number of records.
    #[arg(long)]
    pub n: u64,
    #[command(flatten)]
    pub gen: GenArgs,
    /// Renderer for operator merges.
    #[arg(long, value_enum, default_value = "rule")]
    pub renderer: RendererKind,
    /// Output JSONL file; stdout when omitted.
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
    /// Keep records already in --out and produce only the missing ones.
    #[arg(long, requires = "out")]
    pub resume: bool,
    /// Timestamp stored in every record (default: SOURCE_DATE_EPOCH or now).
    #[arg(long, value_name = "RFC3339")]
    pub created_at: Option<String>,
    #[command(flatten)]
    pub llm: LlmArgs,
}

#[derive(Debug, Args)]
pub struct SuiteCmd {
    /// Seed for the rejection sampler.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Trees to draw before giving up on a quota.
    #[arg(long, value_name = "N")]
    pub budget: Option<usize>,
    /// JSONL output; stdout when omitted.
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
    /// Print the statistics table to stderr.
    #[arg(long)]
    pub stats: bool,
    /// Write one blank score sheet per --sheet-renderer into this directory.
    #[arg(long, value_name = "DIR")]
    pub sheets: Option<PathBuf>,
    /// Renderers to prepare sheets for; `baseline` sends the single-shot prompt to the endpoint.
    #[arg(long = "sheet-renderer", value_enum, value_name = "NAME", default_values = ["rule"])]
    pub sheet_renderers: Vec<SheetRenderer>,
    /// Evaluator ids, one sheet row per record and evaluator.
    #[arg(long = "evaluator", value_name = "ID", default_values = ["e1", "e2", "e3"])]
    pub evaluators: Vec<String>,
    #[command(flatten)]
    pub llm: LlmArgs,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SheetRenderer {
    Rule,
    Mock,
    Llm,
    Baseline,
}

#[derive(Debug, Args)]
pub struct BaselineCmd {
    #[command(flatten)]
    pub tree: TreeArg,
    /// Baseline template file.
    #[arg(long, value_name = "PATH")]
    pub template: Option<PathBuf>,
    /// Few-shot example pairs to include.
    #[arg(long, value_name = "N")]
    pub examples: Option<usize>,
}

#[derive(Debug, Args)]
pub struct StatsCmd {
    /// Tree in bracket notation, `@file`, or `-`; omit when using --corpus.
    #[arg(value_name = "TREE", required_unless_present = "corpus")]
    pub tree: Option<String>,
    /// Dataset JSONL to summarize instead of a single tree.
    #[arg(long, value_name = "PATH", conflicts_with = "tree")]
    pub corpus: Option<PathBuf>,
    /// Emit JSON instead of a table.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct TraceCmd {
    #[command(flatten)]
    pub tree: TreeArg,
    /// Maximum loop iterations per loop (0 to 3).
    #[arg(long, default_value_t = 1)]
    pub bound: usize,
    /// Accept trees that break only the nesting and loop-condition rules.
    #[arg(long)]
    pub lenient: bool,
}

#[derive(Debug, Args)]
pub struct ValidateCmd {
    #[command(flatten)]
    pub tree: TreeArg,
}

#[derive(Debug, Args)]
pub struct ScoreCmd {
    /// CSV with record_id,evaluator_id,score columns.
    #[arg(value_name = "SHEET")]
    pub sheet: PathBuf,
}
