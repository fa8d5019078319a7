//! Chat-completions client: a remote OpenAI-compatible endpoint or a
//! deterministic, network-free mock.

use std::fmt;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::FeatureLexicon;

pub const DEFAULT_MOCK_SCRIPT_TOML: &str = include_str!("../../config/mock_script.toml");

/// Opening and closing markers of the tree-computed counterfactual block in a
/// follow-up message.
pub const CF_OPEN: &str = "[counterfactual result]";
pub const CF_CLOSE: &str = "[/counterfactual result]";
pub const CF_ACTION_PREFIX: &str = "Predicted action:";
pub const CF_CHANGED_PREFIX: &str = "Action changed:";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: Role::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self {
            role: Role::Assistant,
            content: content.into(),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LlmError {
    #[error("request failed after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("server returned HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed completion response: {0}")]
    BadResponse(String),
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("no user message to answer")]
    NoUserMessage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Base URL of an OpenAI-compatible API, e.g. `https://api.openai.com/v1`.
    pub base_url: String,
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub timeout_secs: u64,
    /// Extra attempts after the first on transport errors, 429 and 5xx.
    pub retries: u32,
    /// Environment variable holding the bearer token; unset means no auth header.
    pub api_key_env: String,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            base_url: "https://api.openai.com/v1".into(),
            model: "gpt-4".into(),
            temperature: 0.0,
            max_tokens: 512,
            timeout_secs: 60,
            retries: 2,
            api_key_env: "OPENAI_API_KEY".into(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), LlmError> {
        if !(self.base_url.starts_with("http://") || self.base_url.starts_with("https://")) {
            return Err(LlmError::Config(format!(
                "base_url: `{}` is not an http(s) URL",
                self.base_url
            )));
        }
        if self.model.trim().is_empty() {
            return Err(LlmError::Config("model: must not be empty".into()));
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(LlmError::Config("temperature: must lie in [0, 2]".into()));
        }
        if self.timeout_secs == 0 {
            return Err(LlmError::Config("timeout_secs: must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptRule {
    /// Case-insensitive substring of the last user message.
    pub contains: String,
    pub reply: String,
}

/// Canned replies: the first rule whose `contains` matches wins.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MockScript {
    pub default: String,
    #[serde(default)]
    pub rules: Vec<ScriptRule>,
}

impl Default for MockScript {
    fn default() -> Self {
        Self::from_toml(DEFAULT_MOCK_SCRIPT_TOML).expect("bundled mock script is valid")
    }
}

impl MockScript {
    pub fn from_toml(text: &str) -> Result<Self, LlmError> {
        toml::from_str(text).map_err(|e| LlmError::Config(format!("mock script: {e}")))
    }

    fn reply(&self, message: &str) -> String {
        let lower = message.to_lowercase();
        self.rules
            .iter()
            .find(|r| lower.contains(&r.contains.to_lowercase()))
            .map_or_else(|| self.default.clone(), |r| r.reply.clone())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum MockMode {
    /// Paraphrases only the evidence it is given: repeats the feature phrases
    /// and counterfactual outcome found in the last user message.
    Echo(FeatureLexicon),
    Scripted(MockScript),
}

#[derive(Debug, Clone)]
pub enum LlmClient {
    Remote {
        config: ModelConfig,
        http: reqwest::blocking::Client,
    },
    Mock(MockMode),
}

#[derive(Serialize)]
struct CompletionRequest<'a> {
    model: &'a str,
    messages: &'a [ChatMessage],
    temperature: f64,
    max_tokens: u32,
}

#[derive(Deserialize)]
struct CompletionResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ResponseMessage,
}

#[derive(Deserialize)]
struct ResponseMessage {
    content: Option<String>,
}

impl LlmClient {
    pub fn remote(config: ModelConfig) -> Result<Self, LlmError> {
        config.validate()?;
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| LlmError::Config(e.to_string()))?;
        Ok(LlmClient::Remote { config, http })
    }

    pub fn echo() -> Self {
        LlmClient::Mock(MockMode::Echo(FeatureLexicon::default()))
    }

    pub fn scripted(script: MockScript) -> Self {
        LlmClient::Mock(MockMode::Scripted(script))
    }

    pub fn is_mock(&self) -> bool {
        matches!(self, LlmClient::Mock(_))
    }

    /// Model settings recorded with each session.
    pub fn model_config(&self) -> ModelConfig {
        match self {
            LlmClient::Remote { config, .. } => config.clone(),
            LlmClient::Mock(mode) => ModelConfig {
                base_url: "mock://local".into(),
                model: match mode {
                    MockMode::Echo(_) => "mock-echo".into(),
                    MockMode::Scripted(_) => "mock-scripted".into(),
                },
                ..ModelConfig::default()
            },
        }
    }

    /// One assistant reply for the conversation so far.
    pub fn complete(&self, messages: &[ChatMessage]) -> Result<String, LlmError> {
        match self {
            LlmClient::Remote { config, http } => complete_remote(config, http, messages),
            LlmClient::Mock(mode) => {
                let last = messages
                    .iter()
                    .rev()
                    .find(|m| m.role == Role::User)
                    .ok_or(LlmError::NoUserMessage)?;
                Ok(match mode {
                    MockMode::Echo(lexicon) => echo_reply(&last.content, lexicon),
                    MockMode::Scripted(script) => script.reply(&last.content),
                })
            }
        }
    }
}

fn complete_remote(
    config: &ModelConfig,
    http: &reqwest::blocking::Client,
    messages: &[ChatMessage],
) -> Result<String, LlmError> {
    let url = format!("{}/chat/completions", config.base_url.trim_end_matches('/'));
    let body = CompletionRequest {
        model: &config.model,
        messages,
        temperature: config.temperature,
        max_tokens: config.max_tokens,
    };
    let key = std::env::var(&config.api_key_env).ok().filter(|k| !k.is_empty());
    let attempts = config.retries + 1;
    let mut last_err = String::new();
    for attempt in 1..=attempts {
        if attempt > 1 {
            std::thread::sleep(Duration::from_millis(100 * u64::from(attempt - 1)));
        }
        let mut req = http.post(&url).json(&body);
        if let Some(k) = &key {
            req = req.bearer_auth(k);
        }
        match req.send() {
            Err(e) => last_err = e.to_string(),
            Ok(resp) => {
                let status = resp.status();
                if status.is_success() {
                    let parsed: CompletionResponse =
                        resp.json().map_err(|e| LlmError::BadResponse(e.to_string()))?;
                    return parsed
                        .choices
                        .into_iter()
                        .next()
                        .and_then(|c| c.message.content)
                        .ok_or_else(|| LlmError::BadResponse("no message content in choices".into()));
                }
                let text = resp.text().unwrap_or_default();
                if status.as_u16() == 429 || status.is_server_error() {
                    last_err = format!("HTTP {status}: {text}");
                } else {
                    return Err(LlmError::Status {
                        status: status.as_u16(),
                        body: text,
                    });
                }
            }
        }
    }
    Err(LlmError::Transport {
        attempts,
        message: last_err,
    })
}

/// Reply of the echo mock: the action sentence, every distinct feature
/// phrase in order of appearance, and any counterfactual outcome lines.
/// Byte offset where the clause containing `from` ends: the next `;`, line
/// break, or sentence-ending period.
fn clause_end(text: &str, from: usize) -> usize {
    let bytes = text.as_bytes();
    let mut i = from;
    while i < bytes.len() {
        match bytes[i] {
            b';' | b'\n' => return i,
            b'.' if bytes.get(i + 1).is_none_or(|b| b.is_ascii_whitespace()) => return i,
            _ => i += 1,
        }
    }
    i
}

fn echo_reply(message: &str, lexicon: &FeatureLexicon) -> String {
    let (outside, cf_block) = match (message.find(CF_OPEN), message.find(CF_CLOSE)) {
        (Some(a), Some(b)) if a < b => (
            format!("{}{}", &message[..a], &message[b + CF_CLOSE.len()..]),
            Some(&message[a + CF_OPEN.len()..b]),
        ),
        _ => (message.to_string(), None),
    };

    let mut out = Vec::new();
    if let Some(block) = cf_block {
        out.extend(
            block
                .lines()
                .map(str::trim)
                .filter(|l| l.starts_with(CF_ACTION_PREFIX) || l.starts_with(CF_CHANGED_PREFIX))
                .map(str::to_string),
        );
    }
    if let Some(action) = outside
        .lines()
        .find_map(|l| l.trim().strip_prefix(super::prompt::ACTION_PREFIX))
    {
        out.push(action.trim().to_string());
    }
    // each mention is echoed together with the rest of its clause
    let mut phrases: Vec<&str> = Vec::new();
    let mut covered = 0;
    for m in lexicon.scan(&outside) {
        if m.start < covered {
            continue;
        }
        covered = clause_end(&outside, m.end);
        let p = outside[m.start..covered].trim_end();
        if !phrases.iter().any(|q| q.eq_ignore_ascii_case(p)) {
            phrases.push(p);
        }
    }
    if !phrases.is_empty() {
        out.push(format!("Relevant evidence: {}.", phrases.join("; ")));
    }
    if out.is_empty() {
        "The evidence provided does not say more about this.".to_string()
    } else {
        out.join("\n")
    }
}
