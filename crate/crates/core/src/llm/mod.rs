//! LLM-backed bidder over an OpenAI-compatible chat-completions endpoint.
//!
//! Prompts are pure templating of the public context and the bidder's own
//! signal, so identical inputs give byte-identical requests. Responses are
//! parsed leniently (code fences, surrounding prose, `key: value` lines) and
//! re-requested with the same prompt up to `max_retries` times. Every attempt
//! is archived verbatim.

pub mod stub;

use std::sync::{Condvar, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::agents::{AgentFailure, BidRequest, Bidder, Decision, PublicContext};
use crate::error::{Error, Result};
use crate::model::{BidResponse, BidderId, Signal};
use crate::signaling::{render_private_message, templates};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PreambleRole {
    #[default]
    System,
    User,
}

impl PreambleRole {
    fn as_str(self) -> &'static str {
        match self {
            PreambleRole::System => "system",
            PreambleRole::User => "user",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LlmConfig {
    #[serde(default = "default_base_url")]
    pub base_url: String,
    #[serde(default = "default_model")]
    pub model_name: String,
    /// Name of the environment variable holding the API key. Only the name is
    /// ever persisted.
    #[serde(default = "default_key_env")]
    pub api_key_env: String,
    #[serde(default)]
    pub temperature: f64,
    /// Required to run with a temperature other than 0.
    #[serde(default)]
    pub allow_nonzero_temperature: bool,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    #[serde(default = "default_timeout")]
    pub request_timeout_secs: f64,
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
    #[serde(default)]
    pub preamble_role: PreambleRole,
    /// First backoff delay after a throttled or failed transport attempt;
    /// doubles on each further attempt.
    #[serde(default = "default_backoff")]
    pub backoff_base_ms: u64,
}

fn default_base_url() -> String {
    "https://api.openai.com/v1".to_string()
}
fn default_model() -> String {
    "gpt-4o".to_string()
}
fn default_key_env() -> String {
    "OPENAI_API_KEY".to_string()
}
fn default_max_retries() -> u32 {
    3
}
fn default_timeout() -> f64 {
    60.0
}
fn default_in_flight() -> usize {
    4
}
fn default_backoff() -> u64 {
    500
}

impl Default for LlmConfig {
    fn default() -> Self {
        LlmConfig {
            base_url: default_base_url(),
            model_name: default_model(),
            api_key_env: default_key_env(),
            temperature: 0.0,
            allow_nonzero_temperature: false,
            max_retries: default_max_retries(),
            request_timeout_secs: default_timeout(),
            max_in_flight: default_in_flight(),
            preamble_role: PreambleRole::default(),
            backoff_base_ms: default_backoff(),
        }
    }
}

impl LlmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.temperature != 0.0 {
            if !self.allow_nonzero_temperature {
                return Err(Error::config(format!(
                    "llm.temperature = {} requires llm.allow_nonzero_temperature = true",
                    self.temperature
                )));
            }
            log::warn!("running LLM bidders at temperature {}", self.temperature);
        }
        if self.max_in_flight < 1 {
            return Err(Error::config("llm.max_in_flight must be at least 1"));
        }
        if !(self.request_timeout_secs.is_finite() && self.request_timeout_secs > 0.0) {
            return Err(Error::config("llm.request_timeout_secs must be positive"));
        }
        if self.base_url.trim().is_empty() {
            return Err(Error::config("llm.base_url is empty"));
        }
        Ok(())
    }

    pub fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.base_url.trim_end_matches('/'))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    fn new(role: &str, content: String) -> Self {
        ChatMessage { role: role.to_string(), content }
    }
}

/// Public preamble with the bidder count and prior bounds substituted.
pub fn render_public_preamble(ctx: &PublicContext) -> String {
    templates::PUBLIC_PREAMBLE
        .replace("{lo}", &ctx.prior.lo().to_string())
        .replace("{hi}", &ctx.prior.hi().to_string())
        .replace("{n}", &ctx.n_bidders.to_string())
}

/// `[preamble, private message, bidding instruction]`, preamble as a system
/// message.
pub fn build_prompt(ctx: &PublicContext, signal: &Signal) -> Vec<ChatMessage> {
    build_prompt_with_role(ctx, signal, PreambleRole::System)
}

pub fn build_prompt_with_role(ctx: &PublicContext, signal: &Signal, role: PreambleRole) -> Vec<ChatMessage> {
    vec![
        ChatMessage::new(role.as_str(), render_public_preamble(ctx)),
        ChatMessage::new("user", render_private_message(signal)),
        ChatMessage::new("user", format!("{}\n{}", templates::BIDDING_INSTRUCTION, templates::RESPONSE_FORMAT)),
    ]
}

fn normalize_key(k: &str) -> String {
    k.trim()
        .trim_matches(|c| c == '*' || c == '"' || c == '`')
        .to_ascii_lowercase()
        .replace(['_', '-'], " ")
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

const KEYS: [&str; 4] = ["name", "bid", "estimated value", "explanation"];

/// First JSON object in `text` that carries a bid, with normalised keys.
fn find_object(text: &str) -> Option<Map<String, Value>> {
    for (i, _) in text.match_indices('{') {
        let mut stream = serde_json::Deserializer::from_str(&text[i..]).into_iter::<Value>();
        if let Some(Ok(Value::Object(map))) = stream.next() {
            let normalized: Map<String, Value> = map.into_iter().map(|(k, v)| (normalize_key(&k), v)).collect();
            if normalized.contains_key("bid") {
                return Some(normalized);
            }
        }
    }
    None
}

/// `key: value` lines, as the plain instruction text invites.
fn find_lines(text: &str) -> Option<Map<String, Value>> {
    let mut map = Map::new();
    for line in text.lines() {
        let line = line.trim().trim_start_matches(['-', '*', '#', '>', ' ']);
        let Some((k, v)) = line.split_once(':') else { continue };
        let key = normalize_key(k);
        if KEYS.contains(&key.as_str()) && !map.contains_key(&key) {
            let v = v.trim().trim_matches('*').trim().trim_end_matches(',').trim();
            map.insert(key, Value::String(v.to_string()));
        }
    }
    map.contains_key("bid").then_some(map)
}

fn number_field(map: &Map<String, Value>, key: &str) -> Result<f64> {
    let x = match map.get(key) {
        None => return Err(Error::Parse(format!("missing field `{key}`"))),
        Some(Value::Number(n)) => n.as_f64(),
        Some(Value::String(s)) => s.trim().trim_matches('"').parse::<f64>().ok(),
        Some(_) => None,
    };
    match x {
        Some(x) if x.is_finite() => Ok(x),
        _ => Err(Error::Parse(format!("field `{key}` is not a finite number"))),
    }
}

fn text_field(map: &Map<String, Value>, key: &str) -> Result<String> {
    let s = match map.get(key) {
        None | Some(Value::Null) => return Err(Error::Parse(format!("missing field `{key}`"))),
        Some(Value::String(s)) => s.trim().to_string(),
        Some(other) => other.to_string(),
    };
    if s.is_empty() {
        return Err(Error::Parse(format!("field `{key}` is empty")));
    }
    Ok(s)
}

/// Extracts name, bid, estimated value and explanation from a completion.
///
/// Missing fields and non-numeric values are parse errors; numbers outside
/// `[0, 1]` are validation errors.
pub fn parse_bid_response(text: &str, bidder: BidderId) -> Result<BidResponse> {
    let map = find_object(text)
        .or_else(|| find_lines(text))
        .ok_or_else(|| Error::Parse("no response object with a `bid` field".into()))?;
    text_field(&map, "name")?;
    let bid = number_field(&map, "bid")?;
    let estimate = number_field(&map, "estimated value")?;
    let explanation = text_field(&map, "explanation")?;
    BidResponse::new(bidder, bid, estimate, explanation)
}

/// One archived request/response exchange.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawLlmResponse {
    /// 1-based; at most `max_retries + 1`.
    pub attempt: u32,
    pub latency_ms: u64,
    /// Request body as sent.
    pub request: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub status: Option<u16>,
    /// HTTP response body as received.
    #[serde(default)]
    pub body: String,
    /// Completion text extracted from the body.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Counting semaphore bounding concurrent requests.
struct InFlight {
    free: Mutex<usize>,
    cv: Condvar,
}

struct Permit<'a>(&'a InFlight);

impl InFlight {
    fn new(n: usize) -> Self {
        InFlight { free: Mutex::new(n), cv: Condvar::new() }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().unwrap_or_else(|e| e.into_inner());
        while *free == 0 {
            free = self.cv.wait(free).unwrap_or_else(|e| e.into_inner());
        }
        *free -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap_or_else(|e| e.into_inner()) += 1;
        self.0.cv.notify_one();
    }
}

enum AttemptError {
    /// Worth retrying after a backoff (throttling, server error, network).
    Transport(String),
    /// Worth retrying immediately (bad format or out-of-range values).
    Response(Error),
    /// Not worth retrying (e.g. authentication rejected).
    Fatal(String),
}

/// Shared chat-completions client. Safe to use from many rounds at once.
pub struct LlmClient {
    cfg: LlmConfig,
    api_key: String,
    http: reqwest::blocking::Client,
    in_flight: InFlight,
}

impl std::fmt::Debug for LlmClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LlmClient").field("cfg", &self.cfg).finish_non_exhaustive()
    }
}

impl LlmClient {
    /// Fails before any network activity if the key variable is unset.
    pub fn new(cfg: LlmConfig) -> Result<Self> {
        cfg.validate()?;
        let api_key = std::env::var(&cfg.api_key_env).ok().filter(|k| !k.is_empty()).ok_or_else(|| {
            Error::config(format!("missing API key: environment variable {} is not set", cfg.api_key_env))
        })?;
        Self::with_api_key(cfg, api_key)
    }

    /// Client with an explicit key instead of one read from the environment.
    pub fn with_api_key(cfg: LlmConfig, api_key: String) -> Result<Self> {
        cfg.validate()?;
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs_f64(cfg.request_timeout_secs))
            .build()
            .map_err(|e| Error::Transport(e.to_string()))?;
        let in_flight = InFlight::new(cfg.max_in_flight);
        Ok(LlmClient { cfg, api_key, http, in_flight })
    }

    pub fn config(&self) -> &LlmConfig {
        &self.cfg
    }

    fn request_body(&self, ctx: &PublicContext, signal: &Signal) -> String {
        let messages = build_prompt_with_role(ctx, signal, self.cfg.preamble_role);
        json!({
            "model": self.cfg.model_name,
            "messages": messages,
            "temperature": self.cfg.temperature,
        })
        .to_string()
    }

    fn attempt(
        &self,
        body: &str,
        bidder: BidderId,
        raw: &mut RawLlmResponse,
    ) -> std::result::Result<BidResponse, AttemptError> {
        let _permit = self.in_flight.acquire();
        let start = Instant::now();
        let sent = self
            .http
            .post(self.cfg.endpoint())
            .bearer_auth(&self.api_key)
            .header(reqwest::header::CONTENT_TYPE, "application/json")
            .body(body.to_string())
            .send();
        let result = sent.and_then(|resp| {
            let status = resp.status();
            resp.text().map(|text| (status, text))
        });
        raw.latency_ms = start.elapsed().as_millis() as u64;
        let (status, text) = result.map_err(|e| AttemptError::Transport(e.to_string()))?;
        raw.status = Some(status.as_u16());
        raw.body = text;
        if status.as_u16() == 429 || status.as_u16() == 408 || status.is_server_error() {
            return Err(AttemptError::Transport(format!("HTTP {status}")));
        }
        if !status.is_success() {
            return Err(AttemptError::Fatal(format!("HTTP {status}")));
        }
        let content = serde_json::from_str::<Value>(&raw.body)
            .ok()
            .and_then(|v| v.pointer("/choices/0/message/content").and_then(Value::as_str).map(str::to_string))
            .ok_or_else(|| AttemptError::Response(Error::Parse("response has no choices[0].message.content".into())))?;
        raw.text = Some(content.clone());
        parse_bid_response(&content, bidder).map_err(AttemptError::Response)
    }

    /// Prompt, call, parse; retries on parse/validation/transport failures.
    pub fn llm_decide(
        &self,
        ctx: &PublicContext,
        signal: &Signal,
        bidder: BidderId,
    ) -> std::result::Result<Decision, AgentFailure> {
        let body = self.request_body(ctx, signal);
        let max_attempts = self.cfg.max_retries + 1;
        let mut transcript = Vec::new();
        let mut last_cause = Error::Agent("no attempt made".into());
        for attempt in 1..=max_attempts {
            let mut raw = RawLlmResponse {
                attempt,
                latency_ms: 0,
                request: body.clone(),
                status: None,
                body: String::new(),
                text: None,
                error: None,
            };
            let outcome = self.attempt(&body, bidder, &mut raw);
            match outcome {
                Ok(response) => {
                    transcript.push(raw);
                    return Ok(Decision { response, transcript });
                }
                Err(AttemptError::Response(e)) => {
                    log::debug!("{bidder} attempt {attempt}: {e}");
                    raw.error = Some(e.to_string());
                    transcript.push(raw);
                    last_cause = e;
                }
                Err(AttemptError::Transport(msg)) => {
                    log::warn!("{bidder} attempt {attempt}: {msg}");
                    raw.error = Some(msg.clone());
                    transcript.push(raw);
                    last_cause = Error::Transport(msg);
                    if attempt < max_attempts {
                        let factor = 1u64 << (attempt - 1).min(6);
                        thread::sleep(Duration::from_millis(self.cfg.backoff_base_ms.saturating_mul(factor)));
                    }
                }
                Err(AttemptError::Fatal(msg)) => {
                    raw.error = Some(msg.clone());
                    transcript.push(raw);
                    last_cause = Error::Transport(msg);
                    break;
                }
            }
        }
        let attempts = transcript.len();
        Err(AgentFailure {
            cause: Error::Agent(format!("{bidder} failed after {attempts} attempt(s): {last_cause}")),
            transcript,
        })
    }
}

impl Bidder for LlmClient {
    fn decide(&self, req: &BidRequest<'_>) -> std::result::Result<Decision, AgentFailure> {
        self.llm_decide(req.ctx, req.signal, req.bidder)
    }

    fn concurrent(&self) -> bool {
        true
    }
}
