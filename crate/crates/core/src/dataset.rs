//! Bulk CPT/BPTS pair production to JSONL, with resume.
//!
//! Record `i` of a run is fully determined by the generator params, the
//! renderer and `i`: its tree comes from the `i`-th sub-seed, and its id is
//! that sub-seed in hex. A resumed run skips ids already on disk.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evaluation::StatsSummary;
use crate::generator::{batch_item, GenError, GenParams};
use crate::llm::ModelParams;
use crate::model::{stats, TreeStats};
use crate::notation::parse;
use crate::sketch::{generate_bpts, Renderer, RendererId};

/// Records rendered in parallel before each ordered write.
const CHUNK: usize = 512;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("dataset sink: {0}")]
    Sink(#[from] io::Error),
    #[error("{path} line {line}: {reason}")]
    CorruptRecord {
        path: PathBuf,
        line: usize,
        reason: String,
    },
    #[error("{0} holds no records")]
    Empty(PathBuf),
    #[error(transparent)]
    InvalidParams(#[from] GenError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub id: String,
    pub index: u64,
    /// ASCII serialization.
    pub cpt: String,
    pub bpts: String,
    pub stats: TreeStats,
    pub renderer_id: RendererId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_params: Option<ModelParams>,
    /// Cache keys of the merge prompts, in call order; each resolves to an
    /// audit log line.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub prompt_cache_keys: Vec<String>,
    /// Run-level params; the tree was generated from these with `seed`.
    pub gen_params: GenParams,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub template_checksum: Option<String>,
    pub created_at: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub id: String,
    pub index: u64,
    pub seed: u64,
    pub error: String,
}

pub fn record_id(seed: u64) -> String {
    format!("{seed:016x}")
}

/// `SOURCE_DATE_EPOCH` when set, otherwise the current time.
pub fn default_created_at() -> String {
    let pinned = std::env::var("SOURCE_DATE_EPOCH")
        .ok()
        .and_then(|s| s.trim().parse::<i64>().ok())
        .and_then(|secs| chrono::DateTime::from_timestamp(secs, 0));
    pinned
        .unwrap_or_else(chrono::Utc::now)
        .to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}

/// Generates and renders record `index`.
pub fn render_record(
    gen: &GenParams,
    index: u64,
    renderer: &dyn Renderer,
    created_at: &str,
) -> Result<DatasetRecord, FailureRecord> {
    let item = batch_item(gen, index);
    let fail = |error: String| FailureRecord {
        id: record_id(item.seed),
        index,
        seed: item.seed,
        error,
    };
    let tree_stats = stats(&item.tree).map_err(|e| fail(e.to_string()))?;
    let sketch = generate_bpts(&item.tree, renderer).map_err(|e| fail(e.to_string()))?;
    Ok(DatasetRecord {
        id: record_id(item.seed),
        index,
        cpt: item.tree.to_string(),
        bpts: sketch.text,
        stats: tree_stats,
        renderer_id: sketch.renderer_id,
        model_params: sketch.prompts.first().map(|p| p.model_params.clone()),
        prompt_cache_keys: sketch.prompts.iter().map(|p| p.cache_key.clone()).collect(),
        gen_params: gen.clone(),
        seed: item.seed,
        template_checksum: sketch.template_checksum,
        created_at: created_at.to_string(),
    })
}

/// Renders records `0..n` except those in `skip`, handing results to `sink`
/// in index order. Rendering fans out over the current rayon pool.
pub fn produce_records<F>(
    gen: &GenParams,
    n: u64,
    renderer: &dyn Renderer,
    created_at: &str,
    skip: &HashSet<u64>,
    mut sink: F,
) -> Result<(), DatasetError>
where
    F: FnMut(Result<DatasetRecord, FailureRecord>) -> io::Result<()>,
{
    gen.check()?;
    let todo: Vec<u64> = (0..n).filter(|i| !skip.contains(i)).collect();
    for chunk in todo.chunks(CHUNK) {
        let done: Vec<_> = chunk
            .par_iter()
            .map(|&i| render_record(gen, i, renderer, created_at))
            .collect();
        for result in done {
            if let Err(f) = &result {
                log::warn!("record {} ({}) failed: {}", f.index, f.id, f.error);
            }
            sink(result)?;
        }
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct DatasetJob {
    pub gen: GenParams,
    pub n: u64,
    pub out: PathBuf,
    pub resume: bool,
    pub created_at: String,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct ProduceSummary {
    pub requested: u64,
    /// Records found on disk and skipped by a resumed run.
    pub resumed: u64,
    pub written: u64,
    pub failed: u64,
}

impl ProduceSummary {
    pub fn records(&self) -> u64 {
        self.requested - self.failed
    }
}

pub fn failures_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(".failures.jsonl");
    out.with_file_name(name)
}

/// Writes records to `job.out` and failures to its sidecar. With `resume`,
/// a torn trailing line is cut off and every index already present in
/// either file is skipped; without it both files are overwritten.
pub fn produce_dataset(
    job: &DatasetJob,
    renderer: &dyn Renderer,
) -> Result<ProduceSummary, DatasetError> {
    job.gen.check()?;
    let fail_path = failures_path(&job.out);
    if let Some(dir) = job.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let mut skip = HashSet::new();
    let mut summary = ProduceSummary {
        requested: job.n,
        ..ProduceSummary::default()
    };
    if job.resume {
        for rec in read_complete_lines::<DatasetRecord>(&job.out)? {
            if rec.index < job.n && skip.insert(rec.index) {
                summary.resumed += 1;
            }
        }
        for f in read_complete_lines::<FailureRecord>(&fail_path)? {
            if f.index < job.n && skip.insert(f.index) {
                summary.failed += 1;
            }
        }
    } else {
        File::create(&job.out)?;
        File::create(&fail_path)?;
    }
    let append = |p: &Path| -> io::Result<BufWriter<File>> {
        Ok(BufWriter::new(
            OpenOptions::new().create(true).append(true).open(p)?,
        ))
    };
    let mut records = append(&job.out)?;
    let mut failures = append(&fail_path)?;
    produce_records(
        &job.gen,
        job.n,
        renderer,
        &job.created_at,
        &skip,
        |result| {
            match result {
                Ok(rec) => {
                    write_line(&mut records, &rec)?;
                    summary.written += 1;
                }
                Err(f) => {
                    write_line(&mut failures, &f)?;
                    summary.failed += 1;
                }
            }
            Ok(())
        },
    )?;
    records.flush()?;
    failures.flush()?;
    Ok(summary)
}

pub fn write_line<W: Write, T: Serialize>(out: &mut W, value: &T) -> io::Result<()> {
    serde_json::to_writer(&mut *out, value).map_err(io::Error::other)?;
    out.write_all(b"\n")
}

/// Parses every newline-terminated line, truncating the file after the last
/// one. A missing file reads as empty.
fn read_complete_lines<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, DatasetError> {
    let bytes = match fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(e.into()),
    };
    let complete = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |p| p + 1);
    if complete < bytes.len() {
        log::warn!(
            "{}: dropping {} bytes of a torn final line",
            path.display(),
            bytes.len() - complete
        );
        OpenOptions::new()
            .write(true)
            .open(path)?
            .set_len(complete as u64)?;
    }
    let mut out = Vec::new();
    for (i, line) in bytes[..complete].split(|&b| b == b'\n').enumerate() {
        if line.iter().all(u8::is_ascii_whitespace) {
            continue;
        }
        out.push(
            serde_json::from_slice(line).map_err(|e| DatasetError::CorruptRecord {
                path: path.to_path_buf(),
                line: i + 1,
                reason: e.to_string(),
            })?,
        );
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DatasetReport {
    pub records: usize,
    pub failures: usize,
    pub renderers: BTreeMap<String, usize>,
    pub stats: StatsSummary,
}

/// Summary of a dataset file. Statistics are recomputed from each record's
/// tree, and a record whose stored stats disagree is reported as corrupt.
/// Failures are counted from the sidecar when present.
pub fn dataset_report(path: &Path) -> Result<DatasetReport, DatasetError> {
    let corrupt = |line: usize, reason: String| DatasetError::CorruptRecord {
        path: path.to_path_buf(),
        line,
        reason,
    };
    let reader = BufReader::new(File::open(path)?);
    let mut all = Vec::new();
    let mut ids = BTreeSet::new();
    let mut renderers = BTreeMap::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let n = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let rec: DatasetRecord =
            serde_json::from_str(&line).map_err(|e| corrupt(n, e.to_string()))?;
        let tree = parse(&rec.cpt).map_err(|e| corrupt(n, format!("cpt: {e}")))?;
        let s = stats(&tree).map_err(|e| corrupt(n, format!("cpt: {e}")))?;
        if s != rec.stats {
            return Err(corrupt(n, "stored stats disagree with the tree".into()));
        }
        if !ids.insert(rec.id.clone()) {
            return Err(corrupt(n, format!("duplicate id {}", rec.id)));
        }
        *renderers.entry(rec.renderer_id.to_string()).or_insert(0) += 1;
        all.push(s);
    }
    let summary = StatsSummary::from_stats(&all).ok_or_else(|| DatasetError::Empty(path.into()))?;
    let failures = match File::open(failures_path(path)) {
        Ok(f) => BufReader::new(f)
            .lines()
            .filter(|l| l.as_ref().map_or(true, |l| !l.trim().is_empty()))
            .count(),
        Err(_) => 0,
    };
    Ok(DatasetReport {
        records: all.len(),
        failures,
        renderers,
        stats: summary,
    })
}
