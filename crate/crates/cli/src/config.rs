use std::path::{Path, PathBuf};

use anyhow::Context;
use cptsketch::evaluation::SuiteSpec;
use cptsketch::llm::{MessageLayout, ModelParams, API_KEY_ENV, DEFAULT_BASE_URL};
use cptsketch::GenParams;
use serde::{Deserialize, Serialize};

use crate::args::{GenArgs, LayoutArg, LlmArgs};

/// Everything a subcommand needs, after file, env and flags are merged.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CliConfig {
    pub generator: GenParams,
    pub model: ModelParams,
    pub base_url: String,
    pub layout: MessageLayout,
    pub merge_templates: Option<PathBuf>,
    pub baseline_template: Option<PathBuf>,
    pub baseline_examples: Option<usize>,
    pub cache_dir: Option<PathBuf>,
    pub audit_log: Option<PathBuf>,
    pub suite: SuiteSpec,
}

impl Default for CliConfig {
    fn default() -> Self {
        Self {
            generator: GenParams::default(),
            model: ModelParams::default(),
            base_url: DEFAULT_BASE_URL.into(),
            layout: MessageLayout::default(),
            merge_templates: None,
            baseline_template: None,
            baseline_examples: None,
            cache_dir: None,
            audit_log: None,
            suite: SuiteSpec::default(),
        }
    }
}

impl CliConfig {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn apply_gen(&mut self, a: &GenArgs) {
        let g = &mut self.generator;
        set(&mut g.depth, a.depth);
        set(&mut g.seed, a.seed);
        set(&mut g.p_zero, a.p_zero);
        set(&mut g.p_two, a.p_two);
        set(&mut g.num_low, a.num_low);
        set(&mut g.num_up, a.num_up);
    }

    pub fn apply_llm(&mut self, a: &LlmArgs) {
        set(&mut self.base_url, a.base_url.clone());
        let m = &mut self.model;
        set(&mut m.model_id, a.model.clone());
        set(&mut m.temperature, a.temperature);
        set(&mut m.top_p, a.top_p);
        set(&mut m.requests_per_minute, a.rpm);
        set(&mut m.max_retries, a.max_retries);
        set(&mut m.timeout_secs, a.timeout);
        set(&mut m.max_in_flight, a.max_in_flight);
        if let Some(l) = a.layout {
            self.layout = match l {
                LayoutArg::SystemUser => MessageLayout::SystemUser,
                LayoutArg::SingleUser => MessageLayout::SingleUser,
            };
        }
        if a.templates.is_some() {
            self.merge_templates = a.templates.clone();
        }
        if a.cache_dir.is_some() {
            self.cache_dir = a.cache_dir.clone();
        }
        if a.audit_log.is_some() {
            self.audit_log = a.audit_log.clone();
        }
    }

    /// JSON view with the API key shown only as set or unset.
    pub fn redacted_json(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        let key = if std::env::var_os(API_KEY_ENV).is_some() {
            "<redacted>"
        } else {
            "<unset>"
        };
        v["api_key"] = serde_json::Value::from(key);
        serde_json::to_string_pretty(&v).expect("config serializes")
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}
