//! Run settings shared by `annotate` and `ablate`.
//!
//! Every setting can come from a flag, from a flat TOML file given with
//! `--config`, or from the built-in default, in that order of precedence.
//! The file uses the flag names with `_` for `-`:
//!
//! ```toml
//! approach = "rd"
//! backend = "http"
//! endpoint = "http://localhost:11434"
//! model = "qwen2.5:32b-instruct-q3_K_L"
//! fallback_model = "llama3.1:8b"
//! api_flavor = "ollama"
//! prompt_parts = "role,example,cot"
//! workers = 2
//! max_in_flight = 2
//! ```

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use clap::Args;
use serde::{Deserialize, Serialize};

use crate::llm::{ApiFlavor, BackendConfig, BackendKind};
use crate::pipeline::RunConfig;
use crate::prompt::PromptParts;
use crate::reduce::Approach;
use crate::table::RelationLabel;
use crate::types::DetectionMode;

/// Flags and config-file keys. `None` means "not given here".
#[derive(Args, Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Settings {
    /// Flat TOML file with defaults for any of these settings.
    #[arg(long, value_name = "FILE")]
    #[serde(skip)]
    pub config: Option<PathBuf>,

    /// Reduction variant: base, d, r, c, rd, rdc or rdc_p.
    #[arg(long)]
    pub approach: Option<String>,
    /// JSON array of relations allowed to anchor under rdc_p.
    #[arg(long, value_name = "FILE")]
    pub precision_gate: Option<PathBuf>,
    /// Stats file from `build-stats`.
    #[arg(long, value_name = "FILE")]
    pub stats: Option<PathBuf>,
    /// One relation per line; overrides the stats vocabulary.
    #[arg(long, value_name = "FILE")]
    pub vocab: Option<PathBuf>,

    /// http, oracle, first or scripted.
    #[arg(long)]
    pub backend: Option<String>,
    /// Reply file for the scripted backend.
    #[arg(long, value_name = "FILE")]
    pub script: Option<PathBuf>,
    /// Labeled columns the oracle backend answers from (defaults to the targets file).
    #[arg(long, value_name = "FILE")]
    pub oracle_gt: Option<PathBuf>,
    #[arg(long)]
    pub endpoint: Option<String>,
    #[arg(long)]
    pub model: Option<String>,
    /// Model for the last recovery attempt.
    #[arg(long)]
    pub fallback_model: Option<String>,
    /// ollama or openai.
    #[arg(long)]
    pub api_flavor: Option<String>,
    /// Environment variable holding a bearer token.
    #[arg(long)]
    pub api_key_env: Option<String>,
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub max_output_tokens: Option<u32>,
    #[arg(long)]
    pub request_timeout_seconds: Option<u64>,
    #[arg(long)]
    pub max_retries_transport: Option<u32>,
    #[arg(long)]
    pub backoff_base_ms: Option<u64>,
    /// Concurrent model calls across tables.
    #[arg(long)]
    pub max_in_flight: Option<usize>,

    /// Optional prompt parts to keep: any of role, example, cot; or all / none.
    #[arg(long)]
    pub prompt_parts: Option<String>,
    /// Prompt template file replacing the bundled wording.
    #[arg(long, value_name = "FILE")]
    pub prompt_template: Option<PathBuf>,
    /// Table rows shown in prompts.
    #[arg(long)]
    pub excerpt_rows: Option<usize>,

    /// `table_id,domain` CSV giving each table's topic.
    #[arg(long, value_name = "FILE")]
    pub domain_map: Option<PathBuf>,
    /// Read each table's topic from its id, up to the first `_`.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub domain_from_filename: Option<bool>,
    /// Use the table's own topic label instead of asking the model.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub use_gt_domain: Option<bool>,

    /// Column type detection for annotation: majority or first_cell.
    #[arg(long)]
    pub type_mode: Option<String>,
    #[arg(long)]
    pub type_sample_limit: Option<usize>,
    /// JSON file overriding the type grammar.
    #[arg(long, value_name = "FILE")]
    pub type_grammar: Option<PathBuf>,

    /// Tables processed in parallel.
    #[arg(long)]
    pub workers: Option<usize>,
    /// Paths written to outputs are made relative to this directory.
    #[arg(long, value_name = "DIR")]
    pub workspace_root: Option<PathBuf>,
}

macro_rules! overlay {
    ($hi:expr, $lo:expr, $($f:ident),* $(,)?) => {
        Settings { config: $hi.config.clone(), $($f: $hi.$f.clone().or_else(|| $lo.$f.clone())),* }
    };
}

impl Settings {
    /// Flag values win; unset flags take the file's value.
    pub fn over(&self, file: &Settings) -> Settings {
        overlay!(
            self,
            file,
            approach,
            precision_gate,
            stats,
            vocab,
            backend,
            script,
            oracle_gt,
            endpoint,
            model,
            fallback_model,
            api_flavor,
            api_key_env,
            temperature,
            max_output_tokens,
            request_timeout_seconds,
            max_retries_transport,
            backoff_base_ms,
            max_in_flight,
            prompt_parts,
            prompt_template,
            excerpt_rows,
            domain_map,
            domain_from_filename,
            use_gt_domain,
            type_mode,
            type_sample_limit,
            type_grammar,
            workers,
            workspace_root,
        )
    }

    pub fn from_toml_file(path: &Path) -> Result<Settings, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let mut s: Settings = toml::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
        // relative paths in the file are relative to the file
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [
            &mut s.precision_gate,
            &mut s.stats,
            &mut s.vocab,
            &mut s.script,
            &mut s.oracle_gt,
            &mut s.prompt_template,
            &mut s.domain_map,
            &mut s.type_grammar,
            &mut s.workspace_root,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(s)
    }

    /// Flags over `--config` over defaults.
    pub fn merged(&self) -> Result<Settings, String> {
        let file = match &self.config {
            Some(path) => Settings::from_toml_file(path)?,
            None => Settings::default(),
        };
        Ok(self.over(&file))
    }
}

/// Fully resolved settings.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Effective {
    pub approach: Approach,
    pub precision_gate: Option<PathBuf>,
    pub stats: Option<PathBuf>,
    pub vocab: Option<PathBuf>,
    pub backend: BackendKind,
    pub script: Option<PathBuf>,
    pub oracle_gt: Option<PathBuf>,
    pub endpoint: String,
    pub model: String,
    pub fallback_model: Option<String>,
    pub api_flavor: ApiFlavor,
    pub api_key_env: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
    pub request_timeout_seconds: u64,
    pub max_retries_transport: u32,
    pub backoff_base_ms: u64,
    pub max_in_flight: usize,
    pub prompt_parts: PromptParts,
    pub prompt_template: Option<PathBuf>,
    pub excerpt_rows: usize,
    pub domain_map: Option<PathBuf>,
    pub domain_from_filename: bool,
    pub use_gt_domain: bool,
    pub type_mode: DetectionMode,
    pub type_sample_limit: usize,
    pub type_grammar: Option<PathBuf>,
    pub workers: usize,
    pub workspace_root: PathBuf,
}

fn parse<T: std::str::FromStr>(what: &str, v: Option<&String>, default: T) -> Result<T, String>
where
    T::Err: std::fmt::Display,
{
    match v {
        Some(s) => s.parse().map_err(|e| format!("--{what}: {e}")),
        None => Ok(default),
    }
}

impl Effective {
    pub fn resolve(s: &Settings) -> Result<Effective, String> {
        let d = BackendConfig::default();
        let run = RunConfig::default();
        let workers = s.workers.unwrap_or(1);
        if workers == 0 {
            return Err("--workers must be at least 1".into());
        }
        if s.domain_map.is_some() && s.domain_from_filename == Some(true) {
            return Err("--domain-map and --domain-from-filename are exclusive".into());
        }
        let workspace_root = match &s.workspace_root {
            Some(p) => p.clone(),
            None => std::env::current_dir().map_err(|e| format!("current directory: {e}"))?,
        };
        Ok(Effective {
            approach: parse("approach", s.approach.as_ref(), Approach::RangeDomain)?,
            precision_gate: s.precision_gate.clone(),
            stats: s.stats.clone(),
            vocab: s.vocab.clone(),
            backend: parse("backend", s.backend.as_ref(), BackendKind::Http)?,
            script: s.script.clone(),
            oracle_gt: s.oracle_gt.clone(),
            endpoint: s.endpoint.clone().unwrap_or(d.endpoint),
            model: s.model.clone().unwrap_or(d.model_name),
            fallback_model: s.fallback_model.clone(),
            api_flavor: parse("api-flavor", s.api_flavor.as_ref(), d.api_flavor)?,
            api_key_env: s.api_key_env.clone().unwrap_or(d.api_key_env),
            temperature: s.temperature.unwrap_or(d.temperature),
            max_output_tokens: s.max_output_tokens.unwrap_or(d.max_output_tokens),
            request_timeout_seconds: s.request_timeout_seconds.unwrap_or(d.request_timeout_seconds),
            max_retries_transport: s.max_retries_transport.unwrap_or(d.max_retries_transport),
            backoff_base_ms: s.backoff_base_ms.unwrap_or(d.backoff_base_ms),
            max_in_flight: s.max_in_flight.unwrap_or(d.max_in_flight),
            prompt_parts: parse("prompt-parts", s.prompt_parts.as_ref(), run.prompt_parts)?,
            prompt_template: s.prompt_template.clone(),
            excerpt_rows: s.excerpt_rows.unwrap_or(run.excerpt_rows),
            domain_map: s.domain_map.clone(),
            domain_from_filename: s.domain_from_filename.unwrap_or(false),
            use_gt_domain: s.use_gt_domain.unwrap_or(false),
            type_mode: parse("type-mode", s.type_mode.as_ref(), run.type_mode)?,
            type_sample_limit: s.type_sample_limit.unwrap_or(run.type_sample_limit),
            type_grammar: s.type_grammar.clone(),
            workers,
            workspace_root,
        })
    }

    pub fn backend_config(&self) -> BackendConfig {
        BackendConfig {
            endpoint: self.endpoint.clone(),
            model_name: self.model.clone(),
            fallback_model_name: self.fallback_model.clone(),
            temperature: self.temperature,
            max_output_tokens: self.max_output_tokens,
            request_timeout_seconds: self.request_timeout_seconds,
            max_retries_transport: self.max_retries_transport,
            backoff_base_ms: self.backoff_base_ms,
            api_flavor: self.api_flavor,
            api_key_env: self.api_key_env.clone(),
            max_in_flight: self.max_in_flight,
        }
    }

    pub fn run_config(
        &self,
        approach: Approach,
        gate: Option<BTreeSet<RelationLabel>>,
        parts: PromptParts,
    ) -> RunConfig {
        RunConfig {
            approach: approach.config(gate),
            prompt_parts: parts,
            backend: self.backend_config(),
            excerpt_rows: self.excerpt_rows,
            stats_path: self.stats.as_ref().map(|p| self.relative(p)),
            use_gt_domain: self.use_gt_domain,
            type_mode: self.type_mode,
            type_sample_limit: self.type_sample_limit,
        }
    }

    /// `path` relative to the workspace root when it lies below it.
    pub fn relative(&self, path: &Path) -> PathBuf {
        relative_to(path, &self.workspace_root)
    }

    /// The merged settings as a TOML file, paths relative to the workspace root.
    pub fn to_toml(&self) -> String {
        let mut shown = self.clone();
        for p in [
            &mut shown.precision_gate,
            &mut shown.stats,
            &mut shown.vocab,
            &mut shown.script,
            &mut shown.oracle_gt,
            &mut shown.prompt_template,
            &mut shown.domain_map,
            &mut shown.type_grammar,
        ]
        .into_iter()
        .flatten()
        {
            *p = relative_to(p, &self.workspace_root);
        }
        shown.workspace_root = PathBuf::from(".");
        let mut value = toml::Value::try_from(&shown).expect("settings serialize");
        if let toml::Value::Table(t) = &mut value {
            t.insert(
                "approach".into(),
                toml::Value::String(self.approach.name().into()),
            );
            t.insert(
                "prompt_parts".into(),
                toml::Value::String(self.prompt_parts.name()),
            );
        }
        toml::to_string(&value).expect("settings serialize")
    }
}

fn absolute(path: &Path) -> PathBuf {
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        std::env::current_dir().unwrap_or_default().join(path)
    }
}

fn normalize(path: &Path) -> PathBuf {
    let mut out = PathBuf::new();
    for c in path.components() {
        match c {
            std::path::Component::CurDir => {}
            std::path::Component::ParentDir => {
                out.pop();
            }
            other => out.push(other),
        }
    }
    out
}

pub fn relative_to(path: &Path, root: &Path) -> PathBuf {
    let p = normalize(&absolute(path));
    let r = normalize(&absolute(root));
    match p.strip_prefix(&r) {
        Ok(rel) if rel.as_os_str().is_empty() => PathBuf::from("."),
        Ok(rel) => rel.to_path_buf(),
        Err(_) => path.to_path_buf(),
    }
}
