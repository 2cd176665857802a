use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{parse_verdict, JudgeConfig, JudgeError, Verdict, VerdictSource};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

/// Chat-completion request body.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
}

impl ChatRequest {
    pub fn new(model: &str, prompt: &str) -> Self {
        Self {
            model: model.to_string(),
            messages: vec![ChatMessage {
                role: "user".into(),
                content: prompt.to_string(),
            }],
            temperature: 0.0,
        }
    }
}

#[derive(Debug, Clone, thiserror::Error)]
pub enum TransportError {
    #[error("HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("{0}")]
    Network(String),
}

impl TransportError {
    fn retryable(&self) -> bool {
        match self {
            TransportError::Status { status, .. } => *status == 429 || *status >= 500,
            TransportError::Network(_) => true,
        }
    }
}

/// Sends one request and returns the raw response body.
pub trait ChatTransport {
    fn send(&self, request: &ChatRequest, api_key: &str) -> Result<String, TransportError>;
}

pub struct HttpTransport {
    client: reqwest::blocking::Client,
    endpoint: String,
}

impl HttpTransport {
    pub fn new(config: &JudgeConfig) -> Result<Self, JudgeError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| JudgeError::BadConfig(format!("http client: {e}")))?;
        Ok(Self {
            client,
            endpoint: config.endpoint.clone(),
        })
    }
}

impl ChatTransport for HttpTransport {
    fn send(&self, request: &ChatRequest, api_key: &str) -> Result<String, TransportError> {
        let resp = self
            .client
            .post(&self.endpoint)
            .bearer_auth(api_key)
            .json(request)
            .send()
            .map_err(|e| TransportError::Network(e.to_string()))?;
        let status = resp.status();
        let body = resp.text().map_err(|e| TransportError::Network(e.to_string()))?;
        if status.is_success() {
            Ok(body)
        } else {
            Err(TransportError::Status {
                status: status.as_u16(),
                body,
            })
        }
    }
}

/// Hex SHA-256 of `model`, a newline, and `prompt`.
pub fn cache_key(model: &str, prompt: &str) -> String {
    let mut h = Sha256::new();
    h.update(model.as_bytes());
    h.update(b"\n");
    h.update(prompt.as_bytes());
    hex::encode(h.finalize())
}

/// A minimal chat-completion body whose first choice says `content`; the
/// format fixture directories use.
pub fn fixture_body(content: &str) -> String {
    serde_json::json!({
        "object": "chat.completion",
        "choices": [{"index": 0, "message": {"role": "assistant", "content": content}, "finish_reason": "stop"}]
    })
    .to_string()
}

#[derive(Deserialize)]
struct CompletionBody {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ChatMessage,
}

/// First choice's message content.
pub fn response_content(body: &str, path: &Path) -> Result<String, JudgeError> {
    let malformed = |message: String| JudgeError::MalformedResponse {
        path: path.to_path_buf(),
        message,
    };
    let parsed: CompletionBody = serde_json::from_str(body).map_err(|e| malformed(e.to_string()))?;
    parsed
        .choices
        .into_iter()
        .next()
        .map(|c| c.message.content)
        .ok_or_else(|| malformed("no choices".into()))
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> JudgeError + '_ {
    move |source| JudgeError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Write to a sibling temp file, then rename over the target.
fn write_atomic(path: &Path, contents: &str) -> Result<(), JudgeError> {
    let tmp = path.with_extension(format!("tmp{}", std::process::id()));
    let mut f = fs::File::create(&tmp).map_err(io_err(&tmp))?;
    f.write_all(contents.as_bytes()).map_err(io_err(&tmp))?;
    f.sync_all().map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

struct RateLimiter {
    interval: Duration,
    last: Option<Instant>,
}

impl RateLimiter {
    fn new(per_second: f64) -> Self {
        Self {
            interval: Duration::from_secs_f64(1.0 / per_second),
            last: None,
        }
    }

    fn wait(&mut self) {
        if let Some(last) = self.last {
            let due = last + self.interval;
            let now = Instant::now();
            if due > now {
                thread::sleep(due - now);
            }
        }
        self.last = Some(Instant::now());
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgeStats {
    pub live: usize,
    pub cache: usize,
    pub fixture: usize,
    pub unparseable: usize,
    pub ambiguous: usize,
    /// HTTP attempts, retries included.
    pub requests: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct JudgeRun {
    pub verdicts: Vec<Verdict>,
    pub stats: JudgeStats,
}

fn send_with_retries(
    transport: &dyn ChatTransport,
    request: &ChatRequest,
    api_key: &str,
    config: &JudgeConfig,
    limiter: &mut RateLimiter,
    stats: &mut JudgeStats,
) -> Result<String, JudgeError> {
    let attempts = config.max_retries + 1;
    let mut delay = Duration::from_millis(config.backoff_ms);
    let mut last = String::new();
    for attempt in 1..=attempts {
        limiter.wait();
        stats.requests += 1;
        match transport.send(request, api_key) {
            Ok(body) => return Ok(body),
            Err(e) => {
                log::warn!("judge request attempt {attempt}/{attempts} failed: {e}");
                let retry = e.retryable();
                last = e.to_string();
                if !retry {
                    return Err(JudgeError::EndpointUnavailable { attempts: attempt, message: last });
                }
                if attempt < attempts {
                    thread::sleep(delay);
                    delay *= 2;
                }
            }
        }
    }
    Err(JudgeError::EndpointUnavailable { attempts, message: last })
}

/// Classifies `(window_id, prompt)` pairs, in order.
///
/// With a fixture directory every answer comes from `{key}.json` there and
/// the transport is never used. Otherwise cached answers are read from
/// `{cache_dir}/{key}.json`, and misses are sent through `transport`, the
/// raw body being written to the cache before it is parsed. A missing API
/// key is reported before any request when at least one prompt misses.
pub fn classify_remote(
    config: &JudgeConfig,
    prompts: &[(String, String)],
    transport: &dyn ChatTransport,
) -> Result<JudgeRun, JudgeError> {
    config.validate()?;
    let keys: Vec<String> = prompts.iter().map(|(_, p)| cache_key(&config.model, p)).collect();
    let mut stats = JudgeStats::default();
    let mut bodies: Vec<(String, PathBuf, VerdictSource)> = Vec::with_capacity(prompts.len());

    if let Some(dir) = &config.fixtures {
        for ((window_id, _), key) in prompts.iter().zip(&keys) {
            let path = dir.join(format!("{key}.json"));
            let body = fs::read_to_string(&path).map_err(|_| JudgeError::FixtureMissing {
                window_id: window_id.clone(),
                path: path.clone(),
            })?;
            stats.fixture += 1;
            bodies.push((body, path, VerdictSource::Fixture));
        }
    } else {
        let paths: Vec<PathBuf> = keys.iter().map(|k| config.cache_dir.join(format!("{k}.json"))).collect();
        let misses = paths.iter().filter(|p| !p.is_file()).count();
        let api_key = if misses > 0 {
            let key = std::env::var(&config.api_key_env).ok().filter(|k| !k.is_empty());
            Some(key.ok_or_else(|| JudgeError::AuthMissing {
                var: config.api_key_env.clone(),
                misses,
            })?)
        } else {
            None
        };
        fs::create_dir_all(&config.cache_dir).map_err(io_err(&config.cache_dir))?;
        let mut limiter = RateLimiter::new(config.rate_limit);
        for ((_, prompt), path) in prompts.iter().zip(paths) {
            if let Ok(body) = fs::read_to_string(&path) {
                stats.cache += 1;
                bodies.push((body, path, VerdictSource::Cache));
                continue;
            }
            let request = ChatRequest::new(&config.model, prompt);
            let key = api_key.as_deref().expect("checked above");
            let body = send_with_retries(transport, &request, key, config, &mut limiter, &mut stats)?;
            write_atomic(&path, &body)?;
            stats.live += 1;
            bodies.push((body, path, VerdictSource::Live));
        }
    }

    let mut verdicts = Vec::with_capacity(prompts.len());
    for ((window_id, _), (body, path, source)) in prompts.iter().zip(bodies) {
        let raw_response = response_content(&body, &path)?;
        let (label, ambiguous) = match parse_verdict(&raw_response) {
            Ok(v) => (Some(v.label), v.ambiguous),
            Err(_) => {
                stats.unparseable += 1;
                (None, false)
            }
        };
        stats.ambiguous += ambiguous as usize;
        verdicts.push(Verdict {
            window_id: window_id.clone(),
            label,
            ambiguous,
            raw_response,
            source,
        });
    }
    Ok(JudgeRun { verdicts, stats })
}

/// One JSON object per line, in window order.
pub fn write_verdicts(path: &Path, verdicts: &[Verdict]) -> Result<(), JudgeError> {
    let mut out = String::new();
    for v in verdicts {
        out.push_str(&serde_json::to_string(v).expect("verdicts serialize"));
        out.push('\n');
    }
    fs::write(path, out).map_err(io_err(path))
}
