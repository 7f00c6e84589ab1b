//! `cptsketch` command-line front end.
//!
//! Exit codes: 0 success, 1 bad input (arguments, trees, config, data
//! files), 2 environment failure (I/O, network, credentials).

pub mod args;
pub mod config;

use std::ffi::OsString;
use std::fmt::Display;
use std::fs::{self, File};
use std::io::{self, BufWriter, Read, Write};
use std::path::Path;
use std::time::Duration;

use clap::{CommandFactory, Parser};
use cptsketch::dataset::{
    dataset_report, default_created_at, produce_dataset, produce_records, write_line,
    DatasetError, DatasetJob,
};
use cptsketch::evaluation::{
    build_suite, suite_stats, traditional_prompt, write_scoring_sheet, aggregate_scores,
    BaselineTemplate, EvalError, ScoreSheet, ScoringItem,
};
use cptsketch::generator::generate_batch;
use cptsketch::llm::{
    AuditLog, Completer, HttpTransport, LlmClient, ResponseCache,
};
use cptsketch::semantics::TraceOracle;
use cptsketch::sketch::{LlmRenderer, PromptInput, PromptTemplates, SketchError};
use cptsketch::{
    generate_bpts, parse, serialize, stats, validate, CptNode, OperatorKind, Renderer,
    RuleRenderer, Style,
};

use crate::args::*;
use crate::config::CliConfig;

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 1;
pub const EXIT_ENV: i32 = 2;

/// A failed command, classified for the exit code.
#[derive(Debug)]
pub enum Failure {
    Input(String),
    Env(String),
}

impl Failure {
    fn input(e: impl Display) -> Self {
        Failure::Input(e.to_string())
    }

    fn env(e: impl Display) -> Self {
        Failure::Env(e.to_string())
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::env(e)
    }
}

impl From<SketchError> for Failure {
    fn from(e: SketchError) -> Self {
        match e {
            SketchError::RendererFailure { .. } => Failure::env(e),
            _ => Failure::input(e),
        }
    }
}

impl From<DatasetError> for Failure {
    fn from(e: DatasetError) -> Self {
        match e {
            DatasetError::Sink(_) => Failure::env(e),
            _ => Failure::input(e),
        }
    }
}

impl From<EvalError> for Failure {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Io(_) => Failure::env(e),
            _ => Failure::input(e),
        }
    }
}

type Res<T = ()> = Result<T, Failure>;

/// The clap command tree, for help rendering and tests.
pub fn command() -> clap::Command {
    Cli::command()
}

/// Runs one invocation and returns the process exit code.
pub fn run<I, T>(argv: I, stdin: &mut dyn Read, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let text = e.render().to_string();
            return if e.use_stderr() {
                let _ = write!(err, "{text}");
                EXIT_INPUT
            } else {
                let _ = write!(out, "{text}");
                EXIT_OK
            };
        }
    };
    match dispatch(cli, stdin, out, err) {
        Ok(code) => code,
        Err(Failure::Input(msg)) => {
            let _ = writeln!(err, "error: {msg}");
            EXIT_INPUT
        }
        Err(Failure::Env(msg)) => {
            let _ = writeln!(err, "error: {msg}");
            EXIT_ENV
        }
    }
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    // a second run in the same process keeps the first logger
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .try_init();
}

fn dispatch(cli: Cli, stdin: &mut dyn Read, out: &mut dyn Write, err: &mut dyn Write) -> Res<i32> {
    init_logging(cli.verbose);
    let mut cfg = CliConfig::load(cli.config.as_deref()).map_err(|e| Failure::input(format!("{e:#}")))?;
    match &cli.command {
        Command::Gen(c) => cfg.apply_gen(&c.gen),
        Command::Dataset(c) => {
            cfg.apply_gen(&c.gen);
            cfg.apply_llm(&c.llm);
        }
        Command::Convert(c) => cfg.apply_llm(&c.llm),
        Command::Suite(c) => {
            cfg.apply_llm(&c.llm);
            if let Some(b) = c.budget {
                cfg.suite.sample_budget = b;
            }
        }
        Command::Baseline(c) => {
            if c.template.is_some() {
                cfg.baseline_template = c.template.clone();
            }
            if c.examples.is_some() {
                cfg.baseline_examples = c.examples;
            }
        }
        _ => {}
    }
    if cli.print_config {
        writeln!(out, "{}", cfg.redacted_json())?;
        return Ok(EXIT_OK);
    }
    if cli.jobs > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.jobs)
            .build_global()
        {
            log::warn!("--jobs ignored: {e}");
        }
    }
    match cli.command {
        Command::Gen(c) => cmd_gen(&cfg, &c, out).map(|_| EXIT_OK),
        Command::Convert(c) => cmd_convert(&cfg, &c, stdin, out).map(|_| EXIT_OK),
        Command::Dataset(c) => cmd_dataset(&cfg, &c, out, err).map(|_| EXIT_OK),
        Command::Suite(c) => cmd_suite(&cfg, &c, out, err).map(|_| EXIT_OK),
        Command::Baseline(c) => cmd_baseline(&cfg, &c, stdin, out).map(|_| EXIT_OK),
        Command::Stats(c) => cmd_stats(&c, stdin, out).map(|_| EXIT_OK),
        Command::Trace(c) => cmd_trace(&c, stdin, out),
        Command::Validate(c) => cmd_validate(&c, stdin, out, err),
        Command::Score(c) => cmd_score(&c, out).map(|_| EXIT_OK),
    }
}

/// Reads a tree given inline, as `@path`, or as `-` for stdin.
pub fn read_tree(arg: &str, stdin: &mut dyn Read) -> Res<CptNode> {
    let text = if arg == "-" {
        let mut s = String::new();
        stdin.read_to_string(&mut s)?;
        s
    } else if let Some(path) = arg.strip_prefix('@') {
        fs::read_to_string(path).map_err(|e| Failure::input(format!("{path}: {e}")))?
    } else {
        arg.to_string()
    };
    parse(text.trim()).map_err(Failure::input)
}

fn cmd_gen(cfg: &CliConfig, c: &GenCmd, out: &mut dyn Write) -> Res {
    let style = if c.unicode { Style::Unicode } else { Style::Ascii };
    let n = usize::try_from(c.n).map_err(Failure::input)?;
    let mut out = BufWriter::new(out);
    for item in generate_batch(&cfg.generator, n).map_err(Failure::input)? {
        writeln!(out, "{}", serialize(&item.tree, style).map_err(Failure::input)?)?;
    }
    out.flush()?;
    Ok(())
}

/// Client for the mock or remote renderer; `None` for rules.
fn make_client(cfg: &CliConfig, kind: RendererKind, replay: Option<&Path>) -> Res<Option<LlmClient>> {
    let client = match kind {
        RendererKind::Rule => return Ok(None),
        RendererKind::Mock => LlmClient::mock(cfg.model.clone()),
        RendererKind::Llm => {
            let transport = HttpTransport::from_env(
                &cfg.base_url,
                Duration::from_secs(cfg.model.timeout_secs),
            )
            .map_err(Failure::env)?;
            LlmClient::remote(cfg.model.clone(), Box::new(transport))
        }
    };
    let cache = match &cfg.cache_dir {
        Some(dir) => ResponseCache::on_disk(dir.clone()).map_err(Failure::env)?,
        None => ResponseCache::in_memory(),
    };
    if let Some(audit) = replay {
        let n = cache.warm_from_audit(audit).map_err(Failure::env)?;
        log::info!("loaded {n} cached responses from {}", audit.display());
    }
    let mut client = client.with_layout(cfg.layout).with_cache(cache);
    if let Some(path) = &cfg.audit_log {
        client = client.with_audit(AuditLog::append_to(path).map_err(Failure::env)?);
    }
    Ok(Some(client))
}

fn merge_templates(cfg: &CliConfig) -> Res<PromptTemplates> {
    match &cfg.merge_templates {
        Some(p) => PromptTemplates::load(p).map_err(Failure::input),
        None => Ok(PromptTemplates::default()),
    }
}

fn cmd_convert(cfg: &CliConfig, c: &ConvertCmd, stdin: &mut dyn Read, out: &mut dyn Write) -> Res {
    let tree = read_tree(&c.tree.tree, stdin)?;
    let client = make_client(cfg, c.renderer, c.llm.replay.as_deref())?;
    let llm;
    let renderer: &dyn Renderer = match &client {
        None => &RuleRenderer,
        Some(client) => {
            llm = LlmRenderer::new(client, merge_templates(cfg)?);
            &llm
        }
    };
    let sketch = generate_bpts(&tree, renderer)?;
    if c.json {
        let text = serde_json::to_string_pretty(&sketch).map_err(Failure::env)?;
        writeln!(out, "{text}")?;
    } else {
        writeln!(out, "{}", sketch.text)?;
    }
    Ok(())
}

fn cmd_dataset(cfg: &CliConfig, c: &DatasetCmd, out: &mut dyn Write, err: &mut dyn Write) -> Res {
    let client = make_client(cfg, c.renderer, c.llm.replay.as_deref())?;
    let llm;
    let renderer: &dyn Renderer = match &client {
        None => &RuleRenderer,
        Some(client) => {
            llm = LlmRenderer::new(client, merge_templates(cfg)?);
            &llm
        }
    };
    let created_at = c.created_at.clone().unwrap_or_else(default_created_at);
    let (records, failed) = match &c.out {
        Some(path) => {
            let job = DatasetJob {
                gen: cfg.generator.clone(),
                n: c.n,
                out: path.clone(),
                resume: c.resume,
                created_at,
            };
            let s = produce_dataset(&job, renderer)?;
            if s.resumed > 0 {
                writeln!(err, "resumed: {} records already present", s.resumed)?;
            }
            (s.records(), s.failed)
        }
        None => {
            let mut sink = BufWriter::new(&mut *out);
            let (mut records, mut failed) = (0, 0);
            produce_records(
                &cfg.generator,
                c.n,
                renderer,
                &created_at,
                &Default::default(),
                |result| match result {
                    Ok(rec) => {
                        records += 1;
                        write_line(&mut sink, &rec)
                    }
                    Err(_) => {
                        failed += 1;
                        Ok(())
                    }
                },
            )?;
            sink.flush()?;
            (records, failed)
        }
    };
    let network = client.as_ref().map_or(0, LlmClient::network_requests);
    writeln!(err, "records: {records}, failures: {failed}, network requests: {network}")?;
    Ok(())
}

fn cmd_suite(cfg: &CliConfig, c: &SuiteCmd, out: &mut dyn Write, err: &mut dyn Write) -> Res {
    let mut spec = cfg.suite.clone();
    spec.generator = cfg.generator.clone();
    let suite = build_suite(&spec, c.seed)?;
    match &c.out {
        Some(path) => {
            let mut f = BufWriter::new(File::create(path)?);
            for e in &suite {
                writeln!(f, "{}", e.to_json_line())?;
            }
            f.flush()?;
        }
        None => {
            for e in &suite {
                writeln!(out, "{}", e.to_json_line())?;
            }
        }
    }
    if c.stats && !suite.is_empty() {
        let summary = suite_stats(suite.iter().map(|e| &e.cpt))?;
        write!(err, "{}", summary.to_table())?;
    }
    let Some(dir) = &c.sheets else {
        return Ok(());
    };
    fs::create_dir_all(dir)?;
    let evaluators: Vec<&str> = c.evaluators.iter().map(String::as_str).collect();
    for &which in &c.sheet_renderers {
        let (name, texts) = match which {
            SheetRenderer::Rule => ("rule", sketch_texts(&suite, &RuleRenderer)?),
            SheetRenderer::Mock | SheetRenderer::Llm => {
                let kind = if which == SheetRenderer::Mock {
                    RendererKind::Mock
                } else {
                    RendererKind::Llm
                };
                let client = make_client(cfg, kind, c.llm.replay.as_deref())?.expect("model client");
                let renderer = LlmRenderer::new(&client, merge_templates(cfg)?);
                let name = if which == SheetRenderer::Mock { "mock" } else { "llm" };
                (name, sketch_texts(&suite, &renderer)?)
            }
            SheetRenderer::Baseline => {
                let client =
                    make_client(cfg, RendererKind::Llm, c.llm.replay.as_deref())?.expect("model client");
                let mut texts = Vec::with_capacity(suite.len());
                for e in &suite {
                    let prompt = traditional_prompt(&e.cpt)?;
                    let reply = client
                        .complete(&PromptInput {
                            instruction: String::new(),
                            input_block: prompt,
                            operator: OperatorKind::Sequence,
                        })
                        .map_err(Failure::env)?;
                    texts.push(reply.text);
                }
                ("baseline", texts)
            }
        };
        let path = dir.join(format!("{name}.csv"));
        let items = suite.iter().zip(&texts).map(|(e, t)| ScoringItem {
            record_id: &e.id,
            cpt: &e.cpt,
            text: t,
        });
        write_scoring_sheet(items, &evaluators, BufWriter::new(File::create(&path)?))?;
        writeln!(err, "wrote {}", path.display())?;
    }
    Ok(())
}

fn sketch_texts(suite: &[cptsketch::evaluation::SuiteEntry], r: &dyn Renderer) -> Res<Vec<String>> {
    suite
        .iter()
        .map(|e| Ok(generate_bpts(&e.cpt, r)?.text))
        .collect()
}

fn cmd_baseline(cfg: &CliConfig, c: &BaselineCmd, stdin: &mut dyn Read, out: &mut dyn Write) -> Res {
    let tree = read_tree(&c.tree.tree, stdin)?;
    let mut template = match &cfg.baseline_template {
        Some(p) => BaselineTemplate::load(p)?,
        None => BaselineTemplate::default(),
    };
    if let Some(n) = cfg.baseline_examples {
        template = template.with_example_count(n)?;
    }
    writeln!(out, "{}", template.render(&tree)?)?;
    Ok(())
}

fn cmd_stats(c: &StatsCmd, stdin: &mut dyn Read, out: &mut dyn Write) -> Res {
    if let Some(path) = &c.corpus {
        let report = dataset_report(path).map_err(|e| match e {
            DatasetError::Sink(io) if io.kind() == io::ErrorKind::NotFound => {
                Failure::input(format!("{}: {io}", path.display()))
            }
            other => other.into(),
        })?;
        if c.json {
            writeln!(out, "{}", serde_json::to_string_pretty(&report).map_err(Failure::env)?)?;
        } else {
            writeln!(out, "{:<22}{}", "records", report.records)?;
            writeln!(out, "{:<22}{}", "failures", report.failures)?;
            write!(out, "{}", report.stats.to_table())?;
        }
        return Ok(());
    }
    let tree = read_tree(c.tree.as_deref().expect("clap requires a tree"), stdin)?;
    let s = stats(&tree).map_err(Failure::input)?;
    if c.json {
        writeln!(out, "{}", serde_json::to_string_pretty(&s).map_err(Failure::env)?)?;
    } else {
        for (k, v) in [
            ("depth", s.depth),
            ("nodes", s.node_count),
            ("activities", s.activity_count),
            ("operators", s.operator_count),
            ("selection nesting", s.max_selection_nesting),
            ("loop nesting", s.max_loop_nesting),
        ] {
            writeln!(out, "{k:<22}{v}")?;
        }
    }
    Ok(())
}

fn cmd_trace(c: &TraceCmd, stdin: &mut dyn Read, out: &mut dyn Write) -> Res<i32> {
    let tree = read_tree(&c.tree.tree, stdin)?;
    let oracle = if c.lenient {
        TraceOracle::lenient(c.bound)
    } else {
        TraceOracle::new(c.bound)
    };
    let traces = oracle.enumerate(&tree).map_err(Failure::input)?;
    for line in traces.to_lines() {
        if line.is_empty() {
            writeln!(out, "(empty)")?;
        } else {
            writeln!(out, "{line}")?;
        }
    }
    Ok(EXIT_OK)
}

fn cmd_validate(c: &ValidateCmd, stdin: &mut dyn Read, out: &mut dyn Write, err: &mut dyn Write) -> Res<i32> {
    let tree = read_tree(&c.tree.tree, stdin)?;
    let violations = validate(&tree);
    if violations.is_empty() {
        writeln!(out, "valid")?;
        return Ok(EXIT_OK);
    }
    for v in &violations {
        writeln!(out, "{v}")?;
    }
    writeln!(err, "{} violation(s)", violations.len())?;
    Ok(EXIT_INPUT)
}

fn cmd_score(c: &ScoreCmd, out: &mut dyn Write) -> Res {
    let sheet = ScoreSheet::load(&c.sheet).map_err(|e| match e {
        EvalError::Io(io) => Failure::input(format!("{}: {io}", c.sheet.display())),
        other => other.into(),
    })?;
    writeln!(out, "{:.2}", aggregate_scores(&sheet)?)?;
    Ok(())
}
