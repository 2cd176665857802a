//! Zero-shot comparison against a chat-completion model.
//!
//! Each window is rendered as a numbered list of template strings, sent with
//! temperature 0, and the reply is scanned for a one-word verdict. Responses
//! are cached on disk keyed by model and prompt, and a fixture directory in
//! the same format can stand in for the endpoint.

mod compare;
mod remote;

pub use compare::{compare, write_comparison, ComparisonRow, Predictions};
pub use remote::{
    cache_key, classify_remote, fixture_body, response_content, write_verdicts, ChatMessage, ChatRequest,
    ChatTransport, HttpTransport, JudgeRun, JudgeStats, TransportError,
};

use std::collections::BTreeMap;
use std::io;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::drain::EventTemplate;
use crate::session::{event_for_token, LabeledWindow, PAD, UNK};

pub const ANSWER_DIRECTIVE: &str = "Answer with exactly one word: NORMAL or ANOMALY";
pub const UNKNOWN_EVENT: &str = "<unknown event>";
pub const DEFAULT_INSTRUCTION: &str = "You are reviewing the sequence of log events recorded for one storage block \
of a distributed file system. Each line is an event template; variable fields appear as <*>. \
Decide whether the sequence shows anomalous behavior.";

#[derive(Debug, Error)]
pub enum JudgeError {
    #[error("window {window_id}: event id {event_id} has no template")]
    UnknownEventId { window_id: String, event_id: u32 },
    #[error("response names neither NORMAL nor ANOMALY")]
    Unparseable,
    #[error("environment variable {var} is not set and {misses} prompts are not cached")]
    AuthMissing { var: String, misses: usize },
    #[error("endpoint unavailable after {attempts} attempts: {message}")]
    EndpointUnavailable { attempts: u32, message: String },
    #[error("window {window_id}: no fixture at {path}")]
    FixtureMissing { window_id: String, path: PathBuf },
    #[error("{path}: malformed chat-completion body: {message}")]
    MalformedResponse { path: PathBuf, message: String },
    #[error("{model} has no prediction for window {window_id}")]
    CoverageGap { model: String, window_id: String },
    #[error("invalid judge config: {0}")]
    BadConfig(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct JudgeConfig {
    pub endpoint: String,
    pub model: String,
    pub timeout_secs: u64,
    pub max_retries: u32,
    /// Initial retry delay; doubles on each further attempt.
    pub backoff_ms: u64,
    /// Requests per second.
    pub rate_limit: f64,
    pub cache_dir: PathBuf,
    /// Replay directory; when set no request is ever sent.
    pub fixtures: Option<PathBuf>,
    pub api_key_env: String,
    pub instruction: String,
}

impl Default for JudgeConfig {
    fn default() -> Self {
        Self {
            endpoint: "https://api.openai.com/v1/chat/completions".into(),
            model: "gpt-4".into(),
            timeout_secs: 60,
            max_retries: 3,
            backoff_ms: 1000,
            rate_limit: 1.0,
            cache_dir: PathBuf::from("judge_cache"),
            fixtures: None,
            api_key_env: "OPENAI_API_KEY".into(),
            instruction: DEFAULT_INSTRUCTION.into(),
        }
    }
}

impl JudgeConfig {
    pub fn validate(&self) -> Result<(), JudgeError> {
        if !(self.rate_limit > 0.0) {
            return Err(JudgeError::BadConfig("rate_limit must be positive".into()));
        }
        if self.model.is_empty() {
            return Err(JudgeError::BadConfig("model name is empty".into()));
        }
        Ok(())
    }
}

/// Event ID to template text.
pub type TemplateTable = BTreeMap<u32, String>;

pub fn template_table(templates: &[EventTemplate]) -> TemplateTable {
    templates.iter().map(|t| (t.event_id, t.text())).collect()
}

/// Renders one window as a prompt. PAD tokens are dropped and UNK becomes
/// [`UNKNOWN_EVENT`].
pub fn build_prompt(window: &LabeledWindow, table: &TemplateTable, instruction: &str) -> Result<String, JudgeError> {
    let mut lines = Vec::with_capacity(window.event_ids.len());
    for &token in &window.event_ids {
        let text = match token {
            PAD => continue,
            UNK => UNKNOWN_EVENT,
            t => {
                let unknown = || JudgeError::UnknownEventId {
                    window_id: window.window_id.clone(),
                    event_id: event_for_token(t).unwrap_or(t),
                };
                let event = event_for_token(t).ok_or_else(unknown)?;
                table.get(&event).ok_or_else(unknown)?
            }
        };
        lines.push(format!("{}. {text}", lines.len() + 1));
    }
    Ok(format!("{instruction}\n\nEvents:\n{}\n\n{ANSWER_DIRECTIVE}", lines.join("\n")))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParsedVerdict {
    pub label: u8,
    /// Both words were present; the earlier one decided.
    pub ambiguous: bool,
}

/// Case-insensitive whole-word scan for NORMAL / ANOMALY. When both occur
/// the first occurrence wins and the result is flagged ambiguous.
pub fn parse_verdict(response: &str) -> Result<ParsedVerdict, JudgeError> {
    let mut first: Option<u8> = None;
    let mut seen = [false; 2];
    for word in response.split(|c: char| !c.is_alphanumeric()) {
        let label = if word.eq_ignore_ascii_case("anomaly") {
            1
        } else if word.eq_ignore_ascii_case("normal") {
            0
        } else {
            continue;
        };
        seen[label as usize] = true;
        first.get_or_insert(label);
    }
    let label = first.ok_or(JudgeError::Unparseable)?;
    Ok(ParsedVerdict {
        label,
        ambiguous: seen[0] && seen[1],
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerdictSource {
    Live,
    Cache,
    Fixture,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub window_id: String,
    /// `None` when the response was unparseable.
    pub label: Option<u8>,
    pub ambiguous: bool,
    pub raw_response: String,
    pub source: VerdictSource,
}

impl Verdict {
    /// Unparseable responses count as normal.
    pub fn predicted(&self) -> u8 {
        self.label.unwrap_or(0)
    }
}
