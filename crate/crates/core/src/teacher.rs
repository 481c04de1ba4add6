//! Chat-completion gateway for every teacher role.
//!
//! A role is just a prompt template; the same [`Gateway`] serves the
//! synthesizer, the judge, the validator and the correctors. Transports are
//! pluggable: [`MockTransport`] replays fixtures keyed by a hash of the
//! request, [`ScriptedTransport`] replays a fixed sequence of outcomes, and
//! the `http` feature adds an OpenAI-compatible HTTPS client.
//!
//! Fixture layout for the mock transport: one file per request named
//! `<request_key>.txt` holding the completion text, where the key is the hex
//! SHA-256 of the request's canonical JSON (see [`request_key`]).

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::fmt;
use std::path::PathBuf;
use std::sync::{Arc, Mutex, OnceLock};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::executor::{ExecOutcome, Executor, Variant};
use crate::rational::Rational;
use crate::response::{
    extract_code, parse_teacher_correction, parse_teacher_response, ParseError, TaggedResponse, TeacherCorrection,
};
use crate::solver::{is_equivalent, Tolerance};

// ---------------------------------------------------------------------------
// Templates

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TemplateError {
    #[error("missing slot: {0}")]
    MissingSlot(String),
    #[error("unknown template `{0}`")]
    Unknown(String),
    #[error("malformed template: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub name: String,
    pub slots: Vec<String>,
    pub system: Option<String>,
    pub user: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderedPrompt {
    pub system: String,
    pub user: String,
}

const BUILTIN: [(&str, &str); 8] = [
    ("error_ratio_judge", include_str!("../templates/error_ratio_judge.txt")),
    ("single_error_synthesis", include_str!("../templates/single_error_synthesis.txt")),
    ("multi_error_synthesis", include_str!("../templates/multi_error_synthesis.txt")),
    ("chain_of_thought_think", include_str!("../templates/chain_of_thought_think.txt")),
    ("chain_of_thought_analysis", include_str!("../templates/chain_of_thought_analysis.txt")),
    ("correct_response", include_str!("../templates/correct_response.txt")),
    ("correct_wrong_response", include_str!("../templates/correct_wrong_response.txt")),
    ("error_pattern_judge", include_str!("../templates/error_pattern_judge.txt")),
];

impl PromptTemplate {
    /// Parses the asset format: `name:` and `slots:` header lines, then
    /// `--- system` and/or `--- user` sections.
    pub fn parse(text: &str) -> Result<PromptTemplate, TemplateError> {
        let mut name = None;
        let mut slots = Vec::new();
        let mut sections: Vec<(String, String)> = Vec::new();
        for line in text.split_inclusive('\n') {
            if let Some(section) = line.strip_prefix("--- ") {
                sections.push((section.trim().to_string(), String::new()));
            } else if let Some((_, body)) = sections.last_mut() {
                body.push_str(line);
            } else if let Some(v) = line.strip_prefix("name:") {
                name = Some(v.trim().to_string());
            } else if let Some(v) = line.strip_prefix("slots:") {
                slots = v.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect();
            } else if !line.trim().is_empty() {
                return Err(TemplateError::Malformed(format!("unexpected header line `{}`", line.trim_end())));
            }
        }
        let name = name.ok_or_else(|| TemplateError::Malformed("missing name".into()))?;
        let mut system = None;
        let mut user = None;
        for (section, mut body) in sections {
            if body.ends_with('\n') {
                body.pop();
            }
            match section.as_str() {
                "system" => system = Some(body),
                "user" => user = Some(body),
                other => return Err(TemplateError::Malformed(format!("unknown section `{other}`"))),
            }
        }
        let user = user.ok_or_else(|| TemplateError::Malformed("missing user section".into()))?;
        Ok(PromptTemplate { name, slots, system, user })
    }

    pub fn builtin(name: &str) -> Result<&'static PromptTemplate, TemplateError> {
        static CACHE: OnceLock<BTreeMap<&'static str, PromptTemplate>> = OnceLock::new();
        let cache = CACHE.get_or_init(|| {
            BUILTIN
                .iter()
                .map(|(n, text)| (*n, PromptTemplate::parse(text).expect("shipped templates parse")))
                .collect()
        });
        cache.get(name).ok_or_else(|| TemplateError::Unknown(name.to_string()))
    }

    pub fn builtin_names() -> impl Iterator<Item = &'static str> {
        BUILTIN.iter().map(|(n, _)| *n)
    }

    /// Substitutes `{slot}` placeholders in one pass; bound text is never
    /// re-scanned, and braces that do not name a slot are left alone.
    pub fn render(&self, bindings: &[(&str, &str)]) -> Result<RenderedPrompt, TemplateError> {
        let map: HashMap<&str, &str> = bindings.iter().copied().collect();
        for slot in &self.slots {
            if !map.contains_key(slot.as_str()) {
                return Err(TemplateError::MissingSlot(slot.clone()));
            }
        }
        Ok(RenderedPrompt {
            system: self.system.as_deref().map(|s| self.fill(s, &map)).unwrap_or_default(),
            user: self.fill(&self.user, &map),
        })
    }

    fn fill(&self, body: &str, map: &HashMap<&str, &str>) -> String {
        let mut out = String::with_capacity(body.len());
        let mut rest = body;
        while let Some(pos) = rest.find('{') {
            out.push_str(&rest[..pos]);
            let after = &rest[pos + 1..];
            let hit = self.slots.iter().find(|s| after.starts_with(s.as_str()) && after[s.len()..].starts_with('}'));
            match hit {
                Some(slot) => {
                    out.push_str(map[slot.as_str()]);
                    rest = &after[slot.len() + 1..];
                }
                None => {
                    out.push('{');
                    rest = after;
                }
            }
        }
        out.push_str(rest);
        out
    }
}

// ---------------------------------------------------------------------------
// Requests and transports

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub system: String,
    pub user: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub model_name: String,
    /// Distinguishes otherwise identical retries of a whole task.
    #[serde(default, skip_serializing_if = "is_zero")]
    pub attempt: u32,
}

fn is_zero(v: &u32) -> bool {
    *v == 0
}

impl ChatRequest {
    pub fn new(prompt: RenderedPrompt, model_name: impl Into<String>) -> Self {
        ChatRequest {
            system: prompt.system,
            user: prompt.user,
            temperature: 0.0,
            max_tokens: 8192,
            model_name: model_name.into(),
            attempt: 0,
        }
    }

    pub fn validate(&self) -> Result<(), TransportError> {
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(TransportError::Fatal("temperature must be finite and non-negative".into()));
        }
        if self.max_tokens == 0 {
            return Err(TransportError::Fatal("max_tokens must be positive".into()));
        }
        Ok(())
    }
}

/// Hex SHA-256 of the request's canonical JSON (keys sorted, compact).
pub fn request_key(req: &ChatRequest) -> String {
    let value = serde_json::to_value(req).expect("requests serialize");
    let canonical = serde_json::to_string(&value).expect("values serialize");
    hex::encode(Sha256::digest(canonical.as_bytes()))
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TransportError {
    #[error("transient transport failure: {0}")]
    Transient(String),
    #[error("transport failure: {0}")]
    Fatal(String),
    #[error("request timed out")]
    Timeout,
}

pub trait Transport: Send + Sync {
    fn complete(&self, req: &ChatRequest, timeout: Duration) -> Result<String, TransportError>;
}

/// Replays `<dir>/<request_key>.txt`.
#[derive(Debug, Clone)]
pub struct MockTransport {
    pub dir: PathBuf,
}

impl MockTransport {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        MockTransport { dir: dir.into() }
    }

    pub fn fixture_path(&self, req: &ChatRequest) -> PathBuf {
        self.dir.join(format!("{}.txt", request_key(req)))
    }
}

impl Transport for MockTransport {
    fn complete(&self, req: &ChatRequest, _timeout: Duration) -> Result<String, TransportError> {
        let path = self.fixture_path(req);
        std::fs::read_to_string(&path)
            .map_err(|_| TransportError::Fatal(format!("no fixture for request {}", request_key(req))))
    }
}

/// In-memory fixture map keyed like [`MockTransport`].
#[derive(Debug, Default)]
pub struct MapTransport {
    responses: Mutex<HashMap<String, String>>,
}

impl MapTransport {
    pub fn insert(&self, req: &ChatRequest, text: impl Into<String>) {
        self.responses.lock().unwrap().insert(request_key(req), text.into());
    }
}

impl Transport for MapTransport {
    fn complete(&self, req: &ChatRequest, _timeout: Duration) -> Result<String, TransportError> {
        let key = request_key(req);
        self.responses
            .lock()
            .unwrap()
            .get(&key)
            .cloned()
            .ok_or_else(|| TransportError::Fatal(format!("no fixture for request {key}")))
    }
}

/// Returns queued outcomes in order regardless of the request.
#[derive(Debug, Default)]
pub struct ScriptedTransport {
    script: Mutex<VecDeque<Result<String, TransportError>>>,
    calls: Mutex<usize>,
}

impl ScriptedTransport {
    pub fn new(script: impl IntoIterator<Item = Result<String, TransportError>>) -> Self {
        ScriptedTransport { script: Mutex::new(script.into_iter().collect()), calls: Mutex::new(0) }
    }

    pub fn calls(&self) -> usize {
        *self.calls.lock().unwrap()
    }
}

impl Transport for ScriptedTransport {
    fn complete(&self, _req: &ChatRequest, _timeout: Duration) -> Result<String, TransportError> {
        *self.calls.lock().unwrap() += 1;
        self.script
            .lock()
            .unwrap()
            .pop_front()
            .unwrap_or_else(|| Err(TransportError::Fatal("script exhausted".into())))
    }
}

// ---------------------------------------------------------------------------
// Time and rate limiting

pub trait Clock: Send + Sync {
    fn now(&self) -> Duration;
    fn sleep(&self, d: Duration);
}

#[derive(Debug)]
pub struct SystemClock {
    origin: Instant,
}

impl Default for SystemClock {
    fn default() -> Self {
        SystemClock { origin: Instant::now() }
    }
}

impl Clock for SystemClock {
    fn now(&self) -> Duration {
        self.origin.elapsed()
    }

    fn sleep(&self, d: Duration) {
        std::thread::sleep(d);
    }
}

/// Simulated time: `sleep` advances the shared clock instantly.
#[derive(Debug, Default)]
pub struct SimClock {
    now: Mutex<Duration>,
}

impl Clock for SimClock {
    fn now(&self) -> Duration {
        *self.now.lock().unwrap()
    }

    fn sleep(&self, d: Duration) {
        *self.now.lock().unwrap() += d;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RateLimit {
    pub requests: u32,
    #[serde(with = "secs")]
    pub interval: Duration,
}

/// Sliding-window limiter shared by all callers of a gateway.
pub struct RateLimiter {
    limit: RateLimit,
    clock: Arc<dyn Clock>,
    window: Mutex<VecDeque<Duration>>,
}

impl fmt::Debug for RateLimiter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RateLimiter").field("limit", &self.limit).finish()
    }
}

impl RateLimiter {
    pub fn new(limit: RateLimit, clock: Arc<dyn Clock>) -> Self {
        RateLimiter { limit, clock, window: Mutex::new(VecDeque::new()) }
    }

    /// Blocks until a slot is free and returns the admission time.
    pub fn acquire(&self) -> Duration {
        loop {
            let wait = {
                let mut window = self.window.lock().unwrap();
                let now = self.clock.now();
                while window.front().is_some_and(|t| *t + self.limit.interval <= now) {
                    window.pop_front();
                }
                if window.len() < self.limit.requests as usize {
                    window.push_back(now);
                    return now;
                }
                *window.front().unwrap() + self.limit.interval - now
            };
            self.clock.sleep(wait);
        }
    }
}

mod secs {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        let v = f64::deserialize(d)?;
        Duration::try_from_secs_f64(v).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TransportPolicy {
    pub max_retries: u32,
    #[serde(with = "secs")]
    pub backoff_base: Duration,
    pub rate_limit: Option<RateLimit>,
    #[serde(with = "secs")]
    pub timeout: Duration,
}

impl Default for TransportPolicy {
    fn default() -> Self {
        TransportPolicy {
            max_retries: 3,
            backoff_base: Duration::from_millis(500),
            rate_limit: None,
            timeout: Duration::from_secs(120),
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GatewayError {
    #[error("transport failed after {attempts} attempt(s): {last}")]
    Transport { attempts: u32, last: TransportError },
    #[error("request timed out")]
    Timeout,
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Parse(#[from] ParseError),
}

/// Shared, thread-safe entry point for chat calls.
pub struct Gateway {
    transport: Arc<dyn Transport>,
    policy: TransportPolicy,
    limiter: Option<RateLimiter>,
    clock: Arc<dyn Clock>,
}

impl fmt::Debug for Gateway {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Gateway").field("policy", &self.policy).finish()
    }
}

impl Gateway {
    pub fn new(transport: Arc<dyn Transport>, policy: TransportPolicy) -> Self {
        Self::with_clock(transport, policy, Arc::new(SystemClock::default()))
    }

    pub fn with_clock(transport: Arc<dyn Transport>, policy: TransportPolicy, clock: Arc<dyn Clock>) -> Self {
        let limiter = policy.rate_limit.map(|l| RateLimiter::new(l, clock.clone()));
        Gateway { transport, policy, limiter, clock }
    }

    /// Sends `req`, retrying transient failures with exponential backoff.
    pub fn chat(&self, req: &ChatRequest) -> Result<String, GatewayError> {
        req.validate().map_err(|e| GatewayError::Transport { attempts: 0, last: e })?;
        let attempts = self.policy.max_retries + 1;
        let mut last = TransportError::Fatal("no attempt made".into());
        for attempt in 0..attempts {
            if let Some(l) = &self.limiter {
                l.acquire();
            }
            match self.transport.complete(req, self.policy.timeout) {
                Ok(text) => return Ok(text),
                Err(TransportError::Timeout) => return Err(GatewayError::Timeout),
                Err(e @ TransportError::Fatal(_)) => return Err(GatewayError::Transport { attempts: attempt + 1, last: e }),
                Err(e @ TransportError::Transient(_)) => {
                    log::warn!("attempt {} of {attempts} failed: {e}", attempt + 1);
                    last = e;
                    if attempt + 1 < attempts {
                        self.clock.sleep(self.policy.backoff_base * 2u32.saturating_pow(attempt));
                    }
                }
            }
        }
        Err(GatewayError::Transport { attempts, last })
    }
}

// ---------------------------------------------------------------------------
// Teacher roles

/// Model identity and decoding settings for one teacher role.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RoleConfig {
    pub model_name: String,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl Default for RoleConfig {
    fn default() -> Self {
        RoleConfig { model_name: "teacher".into(), temperature: 0.0, max_tokens: 8192 }
    }
}

pub struct Teacher {
    pub gateway: Arc<Gateway>,
    pub role: RoleConfig,
}

impl Teacher {
    pub fn new(gateway: Arc<Gateway>, role: RoleConfig) -> Self {
        Teacher { gateway, role }
    }

    pub fn request(&self, prompt: RenderedPrompt) -> ChatRequest {
        ChatRequest {
            temperature: self.role.temperature,
            max_tokens: self.role.max_tokens,
            ..ChatRequest::new(prompt, self.role.model_name.clone())
        }
    }

    pub fn ask(&self, template: &str, bindings: &[(&str, &str)], attempt: u32) -> Result<String, GatewayError> {
        let prompt = PromptTemplate::builtin(template)?.render(bindings)?;
        let req = ChatRequest { attempt, ..self.request(prompt) };
        self.gateway.chat(&req)
    }

    /// Returns the teacher's analysis and its independent solution.
    pub fn generate_correct_response(
        &self,
        question: &str,
        gt_formulation: &str,
    ) -> Result<(String, TaggedResponse), GatewayError> {
        let text = self.ask(
            "correct_response",
            &[("question", question), ("ground_truth_formulation", gt_formulation)],
            0,
        )?;
        Ok(parse_teacher_response(&text)?)
    }

    pub fn correct_wrong_response(
        &self,
        question: &str,
        correct_response: &str,
        wrong_response: &str,
        attempt: u32,
    ) -> Result<TeacherCorrection, GatewayError> {
        let text = self.ask(
            "correct_wrong_response",
            &[("question", question), ("correct_response", correct_response), ("wrong_response", wrong_response)],
            attempt,
        )?;
        Ok(parse_teacher_correction(&text)?)
    }
}

/// True when the response's code runs to an objective equivalent to `target`.
pub fn verify_response(resp: &TaggedResponse, target: &Rational, executor: &dyn Executor, tol: &Tolerance) -> bool {
    let Ok(code) = extract_code(resp) else { return false };
    matches!(executor.run(&code, Variant::AsDeclared), ExecOutcome::Optimal(v) if is_equivalent(&v, target, tol))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrectionOutcome {
    pub correction: Option<TeacherCorrection>,
    pub verified: bool,
    pub attempts: u32,
    pub errors: Vec<String>,
}

/// Asks for a correction up to `max_attempts` times and keeps the first one
/// whose code reproduces the ground truth.
pub fn correct_and_verify(
    teacher: &Teacher,
    question: &str,
    correct_response: &str,
    wrong_response: &str,
    target: &Rational,
    executor: &dyn Executor,
    tol: &Tolerance,
    max_attempts: u32,
) -> CorrectionOutcome {
    let mut errors = Vec::new();
    let mut last = None;
    for attempt in 0..max_attempts {
        match teacher.correct_wrong_response(question, correct_response, wrong_response, attempt) {
            Ok(c) => {
                if verify_response(&c.corrected, target, executor, tol) {
                    return CorrectionOutcome { correction: Some(c), verified: true, attempts: attempt + 1, errors };
                }
                errors.push(format!("attempt {}: corrected code does not reproduce the ground truth", attempt + 1));
                last = Some(c);
            }
            Err(e) => errors.push(format!("attempt {}: {e}", attempt + 1)),
        }
    }
    CorrectionOutcome { correction: last, verified: false, attempts: max_attempts, errors }
}

pub const DEFAULT_CORRECTION_ATTEMPTS: u32 = 2;

// ---------------------------------------------------------------------------
// HTTPS transport

#[cfg(feature = "http")]
pub use http::HttpTransport;

#[cfg(feature = "http")]
mod http {
    use super::*;
    use serde_json::{json, Value};

    /// OpenAI-compatible `POST {endpoint}` chat-completions client. The API
    /// key is read from an environment variable, never from files.
    #[derive(Debug, Clone)]
    pub struct HttpTransport {
        pub endpoint: String,
        pub api_key_env: String,
        client: reqwest::blocking::Client,
    }

    impl HttpTransport {
        pub fn new(endpoint: impl Into<String>, api_key_env: impl Into<String>) -> Result<Self, TransportError> {
            let client = reqwest::blocking::Client::builder()
                .build()
                .map_err(|e| TransportError::Fatal(e.to_string()))?;
            Ok(HttpTransport { endpoint: endpoint.into(), api_key_env: api_key_env.into(), client })
        }
    }

    impl Transport for HttpTransport {
        fn complete(&self, req: &ChatRequest, timeout: Duration) -> Result<String, TransportError> {
            let mut messages = Vec::new();
            if !req.system.is_empty() {
                messages.push(json!({"role": "system", "content": req.system}));
            }
            messages.push(json!({"role": "user", "content": req.user}));
            let mut body = json!({
                "model": req.model_name,
                "messages": messages,
                "temperature": req.temperature,
                "max_tokens": req.max_tokens,
            });
            if req.attempt > 0 {
                body["seed"] = json!(req.attempt);
            }
            let mut builder = self.client.post(&self.endpoint).timeout(timeout).json(&body);
            if let Ok(key) = std::env::var(&self.api_key_env) {
                builder = builder.bearer_auth(key);
            }
            let resp = builder.send().map_err(|e| {
                if e.is_timeout() {
                    TransportError::Timeout
                } else {
                    TransportError::Transient(e.to_string())
                }
            })?;
            let status = resp.status();
            if status.as_u16() == 429 || status.is_server_error() {
                return Err(TransportError::Transient(format!("HTTP {status}")));
            }
            if !status.is_success() {
                return Err(TransportError::Fatal(format!("HTTP {status}")));
            }
            let doc: Value = resp.json().map_err(|e| TransportError::Transient(e.to_string()))?;
            doc.pointer("/choices/0/message/content")
                .and_then(Value::as_str)
                .map(str::to_string)
                .ok_or_else(|| TransportError::Fatal("response has no message content".into()))
        }
    }
}
