//! LLM backends and answer parsing.
//!
//! [`LlmBackend`] is the one seam between the pipeline and a model. The
//! crate ships an HTTP chat-completion client ([`HttpBackend`]) and three
//! deterministic mocks ([`OracleBackend`], [`FirstCandidateBackend`],
//! [`ScriptedBackend`]) for tests and offline runs.

mod http;
mod limit;
mod mock;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use http::{ApiFlavor, HttpBackend};
pub use limit::{InflightLimit, Limited};
pub use mock::{FirstCandidateBackend, OracleBackend, Script, ScriptedBackend};

use crate::prompt::RenderedPrompt;
use crate::reduce::CandidateSet;
use crate::table::RelationLabel;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LlmError {
    /// Network failure or server error that survived every transport retry.
    #[error("transport failure after {retries} retries: {message}")]
    TransportFailure { retries: u32, message: String },
    /// The service rejected the request (4xx); the configuration is wrong.
    #[error("backend refused the request (HTTP {status}): {message}")]
    BackendRefusal { status: u16, message: String },
    #[error("invalid backend configuration: {0}")]
    Config(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptKind {
    /// Main annotation prompt (attempts 1 and 3).
    Annotate,
    /// Single-word re-ask (attempt 2).
    Retry,
    Topic,
    TopicRetry,
}

/// What the prompt is about. HTTP backends ignore it; mocks answer from it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PromptContext {
    pub kind: PromptKind,
    pub table_id: String,
    /// `None` for topic prompts.
    pub column_index: Option<usize>,
    /// The closed answer list shown in the prompt.
    pub options: Vec<String>,
}

#[derive(Clone, Copy, Debug)]
pub struct CompletionRequest<'a> {
    pub prompt: &'a RenderedPrompt,
    pub model: &'a str,
    pub context: &'a PromptContext,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LlmResponse {
    pub text: String,
    pub latency_seconds: f64,
    pub model_used: String,
    /// Transport-level retries spent on this call.
    pub transport_retries: u32,
}

pub trait LlmBackend: Send + Sync {
    fn complete(&self, request: &CompletionRequest<'_>) -> Result<LlmResponse, LlmError>;

    fn name(&self) -> &str;
}

impl<B: LlmBackend + ?Sized> LlmBackend for Box<B> {
    fn complete(&self, request: &CompletionRequest<'_>) -> Result<LlmResponse, LlmError> {
        (**self).complete(request)
    }

    fn name(&self) -> &str {
        (**self).name()
    }
}

impl<B: LlmBackend + ?Sized> LlmBackend for std::sync::Arc<B> {
    fn complete(&self, request: &CompletionRequest<'_>) -> Result<LlmResponse, LlmError> {
        (**self).complete(request)
    }

    fn name(&self) -> &str {
        (**self).name()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BackendConfig {
    /// Base URL, e.g. `http://localhost:11434`.
    pub endpoint: String,
    pub model_name: String,
    /// Model for the third recovery stage. The primary model is re-asked if unset.
    pub fallback_model_name: Option<String>,
    pub temperature: f64,
    pub max_output_tokens: u32,
    pub request_timeout_seconds: u64,
    pub max_retries_transport: u32,
    /// First backoff delay; doubles per transport retry.
    pub backoff_base_ms: u64,
    pub api_flavor: ApiFlavor,
    /// Environment variable holding a bearer token, if the endpoint needs one.
    pub api_key_env: String,
    pub max_in_flight: usize,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            endpoint: "http://localhost:11434".into(),
            model_name: "qwen2.5:32b-instruct-q3_K_L".into(),
            fallback_model_name: None,
            temperature: 0.0,
            max_output_tokens: 256,
            request_timeout_seconds: 120,
            max_retries_transport: 3,
            backoff_base_ms: 500,
            api_flavor: ApiFlavor::Ollama,
            api_key_env: "CPA_API_KEY".into(),
            max_in_flight: 1,
        }
    }
}

impl BackendConfig {
    pub fn validate(&self) -> Result<(), LlmError> {
        if self.fallback_model_name.as_deref() == Some(self.model_name.as_str()) {
            return Err(LlmError::Config(
                "fallback model must differ from the primary model".into(),
            ));
        }
        if self.temperature < 0.0 {
            return Err(LlmError::Config("temperature must be non-negative".into()));
        }
        if self.max_in_flight == 0 {
            return Err(LlmError::Config("max_in_flight must be at least 1".into()));
        }
        Ok(())
    }

    /// Model named by a request; `use_fallback_model` selects the stage-3 model.
    pub fn model_for(&self, use_fallback_model: bool) -> &str {
        match (&self.fallback_model_name, use_fallback_model) {
            (Some(f), true) => f,
            _ => &self.model_name,
        }
    }
}

/// Sends `prompt` to `backend` under the primary or fallback model.
pub fn complete(
    backend: &dyn LlmBackend,
    prompt: &RenderedPrompt,
    context: &PromptContext,
    config: &BackendConfig,
    use_fallback_model: bool,
) -> Result<LlmResponse, LlmError> {
    backend.complete(&CompletionRequest {
        prompt,
        model: config.model_for(use_fallback_model),
        context,
    })
}

/// Which mock or real backend a run uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Http,
    Oracle,
    First,
    Scripted,
}

impl FromStr for BackendKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "http" => Ok(Self::Http),
            "oracle" => Ok(Self::Oracle),
            "first" => Ok(Self::First),
            "scripted" => Ok(Self::Scripted),
            other => Err(format!(
                "unknown backend `{other}` (expected http, oracle, first or scripted)"
            )),
        }
    }
}

impl fmt::Display for BackendKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Http => "http",
            Self::Oracle => "oracle",
            Self::First => "first",
            Self::Scripted => "scripted",
        })
    }
}

/// Wrapping characters stripped from both ends of an answer.
const WRAPPERS: &[char] = &[
    '"', '\'', '`', '*', '_', '“', '”', '‘', '’', '<', '>', '[', ']', '(', ')',
];
const TRAILING: &[char] = &['.', ',', ';', ':', '!', '?'];

fn normalize(text: &str) -> &str {
    let mut s = text.trim();
    loop {
        let next = s.trim().trim_end_matches(TRAILING).trim_matches(WRAPPERS).trim();
        if next == s {
            return s;
        }
        s = next;
    }
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}

fn appears_as_token(haystack: &str, needle: &str) -> bool {
    haystack.match_indices(needle).any(|(i, _)| {
        let before = haystack[..i].chars().next_back();
        let after = haystack[i + needle.len()..].chars().next();
        !before.is_some_and(is_word_char) && !after.is_some_and(is_word_char)
    })
}

/// Picks one option out of free-form model output.
///
/// After stripping whitespace, wrapping quotes / backticks / markdown and
/// trailing punctuation, the answer is matched exactly, then
/// case-insensitively, then as the single option occurring as a whole token
/// anywhere in the text. Anything ambiguous is `None`.
pub fn parse_single_option<'a>(text: &str, options: &[&'a str]) -> Option<&'a str> {
    let answer = normalize(text);
    if let Some(hit) = options.iter().find(|o| **o == answer) {
        return Some(hit);
    }
    let folded: Vec<&&str> = options
        .iter()
        .filter(|o| o.to_lowercase() == answer.to_lowercase())
        .collect();
    if let [only] = folded.as_slice() {
        return Some(only);
    }
    let mut found = options
        .iter()
        .filter(|o| !o.is_empty() && appears_as_token(text, o));
    match (found.next(), found.next()) {
        (Some(only), None) => Some(only),
        _ => None,
    }
}

pub fn parse_single_relation(text: &str, candidates: &CandidateSet) -> Option<RelationLabel> {
    let options: Vec<&str> = candidates.relations().iter().map(RelationLabel::as_str).collect();
    let hit = parse_single_option(text, &options)?;
    candidates.relations().iter().find(|r| r.as_str() == hit).cloned()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cands(names: &[&str]) -> CandidateSet {
        CandidateSet::from_relations(names.iter().map(|n| RelationLabel::new(n).unwrap()))
    }

    fn parse(text: &str, names: &[&str]) -> Option<String> {
        parse_single_relation(text, &cands(names)).map(|r| r.as_str().to_string())
    }

    #[test]
    fn exact_match() {
        assert_eq!(parse("author", &["author", "name"]).as_deref(), Some("author"));
    }

    #[test]
    fn wrapped_answers() {
        let c = ["author", "datePublished"];
        for text in [
            "  author\n",
            "\"author\"",
            "`author`",
            "**author**",
            "author.",
            "'author'!",
            "[author]",
        ] {
            assert_eq!(parse(text, &c).as_deref(), Some("author"), "{text:?}");
        }
    }

    #[test]
    fn case_insensitive_match() {
        assert_eq!(
            parse("DATEPUBLISHED", &["author", "datePublished"]).as_deref(),
            Some("datePublished")
        );
        // ambiguous under folding, and not an exact hit
        assert_eq!(parse("NAME", &["Name", "name"]), None);
    }

    #[test]
    fn unique_token_rule_enumerated() {
        let text = "The relation is `datePublished`.";
        // no candidate occurs
        assert_eq!(parse(text, &["author", "isbn"]), None);
        // exactly one occurs
        assert_eq!(
            parse(text, &["datePublished", "author"]).as_deref(),
            Some("datePublished")
        );
        assert_eq!(parse(text, &["datePublished"]).as_deref(), Some("datePublished"));
        // two occur
        assert_eq!(
            parse("either author or datePublished", &["datePublished", "author"]),
            None
        );
        // substrings of longer words are not tokens
        assert_eq!(parse("the publisher is", &["publish", "isbn"]), None);
        assert_eq!(
            parse("probably name", &["name", "alternateName"]).as_deref(),
            Some("name")
        );
        assert_eq!(
            parse("probably alternateName", &["name", "alternateName"]).as_deref(),
            Some("alternateName")
        );
    }

    #[test]
    fn verbose_cot_output() {
        let text = "Looking at the column, the values are people.\nThese wrote the books.\nauthor";
        assert_eq!(parse(text, &["author", "name"]).as_deref(), Some("author"));
        assert_eq!(parse("I cannot tell.", &["author", "name"]), None);
        assert_eq!(parse("", &["author"]), None);
    }

    #[test]
    fn fallback_model_selection() {
        let mut c = BackendConfig::default();
        assert_eq!(c.model_for(true), c.model_name);
        c.fallback_model_name = Some("other".into());
        assert_eq!(c.model_for(true), "other");
        assert_eq!(c.model_for(false), c.model_name);
        c.fallback_model_name = Some(c.model_name.clone());
        assert!(c.validate().is_err());
    }

    proptest! {
        #[test]
        fn never_returns_outside_candidates(
            text in ".{0,60}",
            names in prop::collection::btree_set("[a-zA-Z]{1,6}", 1..5),
        ) {
            let names: Vec<&str> = names.iter().map(String::as_str).collect();
            if let Some(r) = parse(&text, &names) {
                prop_assert!(names.contains(&r.as_str()));
            }
        }

        #[test]
        fn candidate_embedded_in_noise_is_found(idx in 0usize..3, noise in "[ .,:]{0,4}") {
            let names = ["author", "datePublished", "isbn"];
            let text = format!("Answer:{noise} {}{noise}", names[idx]);
            prop_assert_eq!(parse(&text, &names), Some(names[idx].to_string()));
        }
    }
}
