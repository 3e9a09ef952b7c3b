//! Annotation client: theorem extraction and step splitting, either by a
//! remote model or by offline rules.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::prompts::{STEP_SPLIT_SYSTEM, THEOREM_EXTRACTION_SYSTEM};
use super::CurationError;
use crate::corpus::{ProblemRecord, TrajectoryAnnotation};

pub const ANNOT_URL_ENV: &str = "MRLVR_ANNOT_URL";
pub const ANNOT_KEY_ENV: &str = "MRLVR_ANNOT_KEY";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnnotationTarget {
    Theorems,
    Steps,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            backoff: Duration::from_millis(500),
        }
    }
}

/// Moves one request/reply pair. Split out so tests can script replies.
pub trait Transport: Send + Sync {
    fn post(&self, body: &Value) -> Result<Value, String>;
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnnotationClient {
    pub endpoint: String,
    #[serde(skip)]
    pub api_key: Option<String>,
    pub model_name: String,
    pub timeout: Duration,
    pub retry: RetryPolicy,
    pub mock_mode: bool,
}

impl AnnotationClient {
    /// Offline client; never touches the network.
    pub fn mock() -> Self {
        Self {
            endpoint: String::new(),
            api_key: None,
            model_name: "mock".into(),
            timeout: Duration::from_secs(60),
            retry: RetryPolicy::default(),
            mock_mode: true,
        }
    }

    /// Live client configured from `MRLVR_ANNOT_URL` / `MRLVR_ANNOT_KEY`.
    pub fn from_env(model_name: &str) -> Result<Self, CurationError> {
        let endpoint = std::env::var(ANNOT_URL_ENV)
            .map_err(|_| CurationError::Transport(format!("{ANNOT_URL_ENV} is not set")))?;
        Ok(Self {
            endpoint,
            api_key: std::env::var(ANNOT_KEY_ENV).ok(),
            model_name: model_name.into(),
            timeout: Duration::from_secs(120),
            retry: RetryPolicy::default(),
            mock_mode: false,
        })
    }

    pub fn request_body(&self, record: &ProblemRecord, which: AnnotationTarget) -> Value {
        let system = match which {
            AnnotationTarget::Theorems => THEOREM_EXTRACTION_SYSTEM,
            AnnotationTarget::Steps => STEP_SPLIT_SYSTEM,
        };
        json!({
            "model": self.model_name,
            "system": system,
            "user": record.flattened(),
        })
    }
}

/// Display-math spans (`\[...\]` and `$$...$$`) in document order, without
/// repeats.
pub fn display_math_spans(text: &str) -> Vec<String> {
    let mut spans: Vec<(usize, String)> = Vec::new();
    for (open, close) in [("\\[", "\\]"), ("$$", "$$")] {
        let mut cursor = 0;
        while let Some(rel) = text[cursor..].find(open) {
            let start = cursor + rel + open.len();
            let Some(len) = text[start..].find(close) else {
                break;
            };
            let inner = text[start..start + len].trim();
            if !inner.is_empty() {
                spans.push((start, inner.to_string()));
            }
            cursor = start + len + close.len();
        }
    }
    spans.sort_by_key(|(at, _)| *at);
    let mut out: Vec<String> = Vec::new();
    for (_, s) in spans {
        if !out.contains(&s) {
            out.push(s);
        }
    }
    out
}

/// Blank-line separated paragraphs.
pub fn paragraphs(text: &str) -> Vec<String> {
    text.split("\n\n")
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(str::to_string)
        .collect()
}

pub fn mock_annotation(record: &ProblemRecord, which: AnnotationTarget) -> TrajectoryAnnotation {
    let text = record.flattened();
    let mut ann = TrajectoryAnnotation {
        problem_id: record.id.clone(),
        ..Default::default()
    };
    match which {
        AnnotationTarget::Theorems => ann.theorems = display_math_spans(&text),
        AnnotationTarget::Steps => ann.steps = paragraphs(&text),
    }
    ann
}

/// Pulls the JSON object out of a model reply, tolerating code fences and
/// `//` comment lines like the ones in the request template.
fn extract_payload(text: &str) -> Option<Value> {
    let start = text.find('{')?;
    let end = text.rfind('}')?;
    if end < start {
        return None;
    }
    let body: String = text[start..=end]
        .lines()
        .filter(|l| !l.trim_start().starts_with("//"))
        .collect::<Vec<_>>()
        .join("\n");
    serde_json::from_str(&body).ok()
}

/// Interprets the reply text as the annotation payload for `which`.
pub fn parse_reply(
    problem_id: &str,
    reply_text: &str,
    which: AnnotationTarget,
) -> Result<TrajectoryAnnotation, CurationError> {
    let excerpt = || reply_text.chars().take(120).collect::<String>();
    let payload = extract_payload(reply_text).ok_or_else(|| CurationError::BadJson(excerpt()))?;
    let field = match which {
        AnnotationTarget::Theorems => "theorems",
        AnnotationTarget::Steps => "steps",
    };
    let items: Vec<String> = payload
        .get(field)
        .and_then(|v| serde_json::from_value(v.clone()).ok())
        .ok_or_else(|| CurationError::BadJson(excerpt()))?;
    if items.is_empty() || items.iter().any(|s| s.trim().is_empty()) {
        return Err(CurationError::EmptyAnnotation(problem_id.to_string()));
    }
    let mut ann = TrajectoryAnnotation {
        problem_id: problem_id.to_string(),
        ..Default::default()
    };
    match which {
        AnnotationTarget::Theorems => ann.theorems = items,
        AnnotationTarget::Steps => ann.steps = items,
    }
    Ok(ann)
}

/// The reply carries one text field; take `text`, `content` or the first
/// string value found.
fn reply_text(reply: &Value) -> Option<&str> {
    for key in ["text", "content", "output"] {
        if let Some(s) = reply.get(key).and_then(Value::as_str) {
            return Some(s);
        }
    }
    reply
        .as_object()?
        .values()
        .find_map(Value::as_str)
}

pub fn annotate_with(
    client: &AnnotationClient,
    transport: &dyn Transport,
    record: &ProblemRecord,
    which: AnnotationTarget,
) -> Result<TrajectoryAnnotation, CurationError> {
    if client.mock_mode {
        let ann = mock_annotation(record, which);
        let empty = match which {
            AnnotationTarget::Theorems => ann.theorems.is_empty(),
            AnnotationTarget::Steps => ann.steps.is_empty(),
        };
        if empty {
            return Err(CurationError::EmptyAnnotation(record.id.clone()));
        }
        return Ok(ann);
    }
    let body = client.request_body(record, which);
    let mut last_err = String::new();
    for attempt in 0..client.retry.max_attempts.max(1) {
        if attempt > 0 {
            std::thread::sleep(client.retry.backoff * attempt);
        }
        match transport.post(&body) {
            Ok(reply) => {
                let text = reply_text(&reply)
                    .ok_or_else(|| CurationError::BadJson(reply.to_string()))?;
                return parse_reply(&record.id, text, which);
            }
            Err(e) => {
                log::warn!("annotation attempt {} for {} failed: {e}", attempt + 1, record.id);
                last_err = e;
            }
        }
    }
    Err(CurationError::Transport(last_err))
}

/// Annotates through HTTP (or the offline rules in mock mode).
pub fn annotate(
    client: &AnnotationClient,
    record: &ProblemRecord,
    which: AnnotationTarget,
) -> Result<TrajectoryAnnotation, CurationError> {
    if client.mock_mode {
        return annotate_with(client, &NoNetwork, record, which);
    }
    #[cfg(feature = "http")]
    {
        let transport = HttpTransport::new(client);
        annotate_with(client, &transport, record, which)
    }
    #[cfg(not(feature = "http"))]
    {
        annotate_with(client, &NoNetwork, record, which)
    }
}

struct NoNetwork;

impl Transport for NoNetwork {
    fn post(&self, _body: &Value) -> Result<Value, String> {
        Err("network transport not available in this build".into())
    }
}

#[cfg(feature = "http")]
pub struct HttpTransport {
    agent: ureq::Agent,
    endpoint: String,
    api_key: Option<String>,
}

#[cfg(feature = "http")]
impl HttpTransport {
    pub fn new(client: &AnnotationClient) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(client.timeout))
            .build()
            .into();
        Self {
            agent,
            endpoint: client.endpoint.clone(),
            api_key: client.api_key.clone(),
        }
    }
}

#[cfg(feature = "http")]
impl Transport for HttpTransport {
    fn post(&self, body: &Value) -> Result<Value, String> {
        let mut request = self.agent.post(&self.endpoint);
        if let Some(key) = &self.api_key {
            request = request.header("Authorization", &format!("Bearer {key}"));
        }
        let mut response = request.send_json(body).map_err(|e| e.to_string())?;
        response
            .body_mut()
            .read_json::<Value>()
            .map_err(|e| e.to_string())
    }
}

/// Hook for upstream trajectory rewriting. The default leaves records as
/// they are; a live deployment can route records through an external model.
pub trait TrajectoryRefiner {
    fn refine(&self, record: ProblemRecord) -> Result<ProblemRecord, CurationError>;
}

pub struct PassThrough;

impl TrajectoryRefiner for PassThrough {
    fn refine(&self, record: ProblemRecord) -> Result<ProblemRecord, CurationError> {
        Ok(record)
    }
}
