//! Deterministic stand-ins for a model.
//!
//! All mocks report zero latency so that timing columns, and therefore
//! reports, are reproducible byte for byte.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{CompletionRequest, LlmBackend, LlmError, LlmResponse, PromptKind};
use crate::table::{ColumnRef, DomainLabel, GroundTruth};

fn reply(request: &CompletionRequest<'_>, text: impl Into<String>) -> LlmResponse {
    LlmResponse {
        text: text.into(),
        latency_seconds: 0.0,
        model_used: request.model.to_string(),
        transport_retries: 0,
    }
}

/// Answers with the true label whenever it is on offer, else the first option.
#[derive(Debug, Clone, Default)]
pub struct OracleBackend {
    truth: GroundTruth,
    domains: BTreeMap<String, DomainLabel>,
}

impl OracleBackend {
    pub fn new(truth: GroundTruth, domains: BTreeMap<String, DomainLabel>) -> Self {
        Self { truth, domains }
    }
}

impl LlmBackend for OracleBackend {
    fn complete(&self, request: &CompletionRequest<'_>) -> Result<LlmResponse, LlmError> {
        let ctx = request.context;
        let truth: Option<&str> = match (ctx.kind, ctx.column_index) {
            (PromptKind::Topic | PromptKind::TopicRetry, _) => {
                self.domains.get(&ctx.table_id).map(DomainLabel::as_str)
            }
            (_, Some(column_index)) => self
                .truth
                .get(&ColumnRef {
                    table_id: ctx.table_id.clone(),
                    column_index,
                })
                .map(|r| r.as_str()),
            (_, None) => None,
        };
        let answer = match truth {
            Some(t) if ctx.options.iter().any(|o| o == t) => t.to_string(),
            _ => ctx.options.first().cloned().unwrap_or_default(),
        };
        Ok(reply(request, answer))
    }

    fn name(&self) -> &str {
        "oracle"
    }
}

/// Always answers with the first listed option.
#[derive(Debug, Clone, Copy, Default)]
pub struct FirstCandidateBackend;

impl LlmBackend for FirstCandidateBackend {
    fn complete(&self, request: &CompletionRequest<'_>) -> Result<LlmResponse, LlmError> {
        Ok(reply(
            request,
            request.context.options.first().cloned().unwrap_or_default(),
        ))
    }

    fn name(&self) -> &str {
        "first"
    }
}

/// Replay file for [`ScriptedBackend`].
///
/// ```json
/// {
///   "keyed": { "Book_0/2": ["no idea", "author"], "Book_0/topic": ["Book"] },
///   "default": ["name"]
/// }
/// ```
///
/// Keys are `<table_id>/<column_index>` for annotation and retry prompts and
/// `<table_id>/topic` for topic prompts. Each call pops the next reply for its
/// key; once a key is used up, the key walks through `default` from the
/// start, cycling. Every key has its own cursor, so replies do not depend on
/// how tables are scheduled across workers.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Script {
    #[serde(default)]
    pub keyed: BTreeMap<String, Vec<String>>,
    #[serde(default)]
    pub default: Vec<String>,
}

impl Script {
    pub fn from_path(path: &Path) -> Result<Self, LlmError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| LlmError::Config(format!("script {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| LlmError::Config(format!("script {}: {e}", path.display())))
    }

    pub fn key(table_id: &str, column_index: Option<usize>) -> String {
        match column_index {
            Some(c) => format!("{table_id}/{c}"),
            None => format!("{table_id}/topic"),
        }
    }
}

#[derive(Debug, Default)]
pub struct ScriptedBackend {
    script: Script,
    /// Per key: (keyed replies used, default replies used).
    cursors: Mutex<HashMap<String, (usize, usize)>>,
}

impl ScriptedBackend {
    pub fn new(script: Script) -> Self {
        Self {
            script,
            ..Self::default()
        }
    }

    /// The same reply sequence for every key.
    pub fn from_replies(replies: impl IntoIterator<Item = impl Into<String>>) -> Self {
        Self::new(Script {
            keyed: BTreeMap::new(),
            default: replies.into_iter().map(Into::into).collect(),
        })
    }
}

impl LlmBackend for ScriptedBackend {
    fn complete(&self, request: &CompletionRequest<'_>) -> Result<LlmResponse, LlmError> {
        let ctx = request.context;
        let key = Script::key(&ctx.table_id, ctx.column_index);
        let mut cursors = self.cursors.lock().unwrap_or_else(|e| e.into_inner());
        let (keyed, default) = cursors.entry(key.clone()).or_insert((0, 0));
        if let Some(text) = self.script.keyed.get(&key).and_then(|q| q.get(*keyed)) {
            *keyed += 1;
            return Ok(reply(request, text.clone()));
        }
        if self.script.default.is_empty() {
            return Err(LlmError::TransportFailure {
                retries: 0,
                message: format!("script has no reply left for {key}"),
            });
        }
        let i = *default % self.script.default.len();
        *default += 1;
        Ok(reply(request, self.script.default[i].clone()))
    }

    fn name(&self) -> &str {
        "scripted"
    }
}
