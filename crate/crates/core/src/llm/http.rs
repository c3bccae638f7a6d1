//! Chat-completion client for Ollama and OpenAI-compatible servers.

use std::fmt;
use std::str::FromStr;
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{Value, json};
use ureq::Agent;

use super::{BackendConfig, CompletionRequest, LlmBackend, LlmError, LlmResponse};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ApiFlavor {
    /// `POST /api/chat`, answer in `message.content`.
    #[default]
    Ollama,
    /// `POST /v1/chat/completions`, answer in `choices[0].message.content`.
    #[serde(rename = "openai")]
    OpenAi,
}

impl ApiFlavor {
    fn path(self) -> &'static str {
        match self {
            Self::Ollama => "/api/chat",
            Self::OpenAi => "/v1/chat/completions",
        }
    }
}

impl FromStr for ApiFlavor {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "ollama" => Ok(Self::Ollama),
            "openai" | "open_ai" => Ok(Self::OpenAi),
            other => Err(format!(
                "unknown api flavor `{other}` (expected ollama or openai)"
            )),
        }
    }
}

impl fmt::Display for ApiFlavor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Ollama => "ollama",
            Self::OpenAi => "openai",
        })
    }
}

/// One failed try; `Retry` is worth another go, `Fatal` is not.
enum Failure {
    Retry(String),
    Fatal(LlmError),
}

pub struct HttpBackend {
    config: BackendConfig,
    agent: Agent,
    url: String,
    api_key: Option<String>,
}

impl fmt::Debug for HttpBackend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HttpBackend")
            .field("url", &self.url)
            .field("flavor", &self.config.api_flavor)
            .field("authenticated", &self.api_key.is_some())
            .finish()
    }
}

impl HttpBackend {
    pub fn new(config: BackendConfig) -> Result<Self, LlmError> {
        config.validate()?;
        let base = config.endpoint.trim_end_matches('/');
        if !(base.starts_with("http://") || base.starts_with("https://")) {
            return Err(LlmError::Config(format!(
                "endpoint `{}` must start with http:// or https://",
                config.endpoint
            )));
        }
        let path = config.api_flavor.path();
        let url = if base.ends_with(path) {
            base.to_string()
        } else {
            format!("{base}{path}")
        };
        let agent: Agent = Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.request_timeout_seconds.max(1))))
            .http_status_as_error(false)
            .build()
            .into();
        let api_key = std::env::var(&config.api_key_env)
            .ok()
            .filter(|k| !k.trim().is_empty());
        Ok(Self {
            config,
            agent,
            url,
            api_key,
        })
    }

    pub fn url(&self) -> &str {
        &self.url
    }

    fn body(&self, request: &CompletionRequest<'_>) -> Value {
        let messages = json!([{ "role": "user", "content": request.prompt.text }]);
        match self.config.api_flavor {
            ApiFlavor::Ollama => json!({
                "model": request.model,
                "messages": messages,
                "stream": false,
                "options": {
                    "temperature": self.config.temperature,
                    "num_predict": self.config.max_output_tokens,
                },
            }),
            ApiFlavor::OpenAi => json!({
                "model": request.model,
                "messages": messages,
                "stream": false,
                "temperature": self.config.temperature,
                "max_tokens": self.config.max_output_tokens,
            }),
        }
    }

    fn extract(&self, body: &str) -> Option<String> {
        let value: Value = serde_json::from_str(body).ok()?;
        let content = match self.config.api_flavor {
            ApiFlavor::Ollama => value.pointer("/message/content"),
            ApiFlavor::OpenAi => value.pointer("/choices/0/message/content"),
        }?;
        content.as_str().map(str::to_string)
    }

    fn try_once(&self, body: &Value) -> Result<String, Failure> {
        let mut req = self.agent.post(&self.url);
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", format!("Bearer {key}"));
        }
        let mut response = req.send_json(body).map_err(|e| match e {
            ureq::Error::BadUri(m) => Failure::Fatal(LlmError::Config(format!("bad endpoint: {m}"))),
            other => Failure::Retry(other.to_string()),
        })?;
        let status = response.status().as_u16();
        let text = response
            .body_mut()
            .read_to_string()
            .map_err(|e| Failure::Retry(format!("reading response body: {e}")))?;
        match status {
            200..=299 => self
                .extract(&text)
                .ok_or_else(|| Failure::Retry(format!("malformed response body: {}", snippet(&text)))),
            400..=499 => Err(Failure::Fatal(LlmError::BackendRefusal {
                status,
                message: snippet(&text),
            })),
            _ => Err(Failure::Retry(format!("HTTP {status}: {}", snippet(&text)))),
        }
    }
}

fn snippet(text: &str) -> String {
    const MAX: usize = 200;
    match text.char_indices().nth(MAX) {
        Some((i, _)) => format!("{}…", &text[..i]),
        None => text.to_string(),
    }
}

impl LlmBackend for HttpBackend {
    /// Latency covers the whole call, including retries and backoff sleeps.
    fn complete(&self, request: &CompletionRequest<'_>) -> Result<LlmResponse, LlmError> {
        let body = self.body(request);
        let start = Instant::now();
        let mut retries = 0;
        loop {
            match self.try_once(&body) {
                Ok(text) => {
                    return Ok(LlmResponse {
                        text,
                        latency_seconds: start.elapsed().as_secs_f64(),
                        model_used: request.model.to_string(),
                        transport_retries: retries,
                    });
                }
                Err(Failure::Fatal(e)) => return Err(e),
                Err(Failure::Retry(message)) => {
                    if retries >= self.config.max_retries_transport {
                        return Err(LlmError::TransportFailure { retries, message });
                    }
                    let delay = self
                        .config
                        .backoff_base_ms
                        .saturating_mul(1u64 << retries.min(20));
                    log::warn!("{}: {message}; retrying in {delay} ms", self.url);
                    thread::sleep(Duration::from_millis(delay));
                    retries += 1;
                }
            }
        }
    }

    fn name(&self) -> &str {
        "http"
    }
}
