//! Local chat-completions test double.
//!
//! Answers `POST .../chat/completions` in the OpenAI wire format. The reply is
//! derived from the private message found in the prompt, so a run against the
//! stub behaves like the scripted backend. Other modes inject malformed,
//! out-of-range or throttled responses to exercise the client's retry path.
//! Failure counters are kept per distinct prompt.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;

use serde_json::{json, Value};
use tiny_http::{Header, Request, Response, Server};

use crate::agents::{decide, AgentBackend, BidRequest, PublicContext};
use crate::error::{Error, Result};
use crate::model::{BidderId, Signal, Valuation, ValuePrior};
use crate::signaling::interpret_private_message;

#[derive(Clone, Debug, PartialEq)]
pub enum StubMode {
    /// Valid answers following the scripted backend.
    Scripted,
    /// Unparseable text for the first `fail_first` requests of each prompt.
    Malformed { fail_first: u32 },
    /// Always bids 2.0.
    OutOfRange,
    /// HTTP 429 for the first `fail_first` requests of each prompt.
    Throttled { fail_first: u32 },
    /// The same completion text for every request.
    Fixed(String),
}

pub const MALFORMED_TEXT: &str =
    "Let me think about this auction carefully. I would rather not commit to a number yet.";

pub struct StubServer {
    server: Arc<Server>,
    addr: SocketAddr,
    requests: Arc<AtomicUsize>,
    handle: Option<JoinHandle<()>>,
}

impl StubServer {
    /// Binds `addr` (use port 0 for an ephemeral port) and serves in a
    /// background thread until dropped.
    pub fn start(addr: &str, mode: StubMode) -> Result<Self> {
        let server = Server::http(addr).map_err(|e| Error::Transport(format!("stub bind {addr}: {e}")))?;
        let addr = server
            .server_addr()
            .to_ip()
            .ok_or_else(|| Error::Transport("stub is not bound to an IP address".into()))?;
        let server = Arc::new(server);
        let requests = Arc::new(AtomicUsize::new(0));
        let handle = {
            let server = Arc::clone(&server);
            let requests = Arc::clone(&requests);
            std::thread::spawn(move || {
                let mut seen: HashMap<String, u32> = HashMap::new();
                for request in server.incoming_requests() {
                    requests.fetch_add(1, Ordering::SeqCst);
                    if let Err(e) = serve_one(request, &mode, &mut seen) {
                        log::warn!("stub: {e}");
                    }
                }
            })
        };
        Ok(StubServer { server, addr, requests, handle: Some(handle) })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// Base URL to put in `LlmConfig::base_url`.
    pub fn base_url(&self) -> String {
        format!("http://{}/v1", self.addr)
    }

    pub fn request_count(&self) -> usize {
        self.requests.load(Ordering::SeqCst)
    }

    /// Blocks serving requests forever (used by the CLI).
    pub fn wait(mut self) {
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

impl Drop for StubServer {
    fn drop(&mut self) {
        self.server.unblock();
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

fn json_header() -> Header {
    Header::from_bytes(&b"Content-Type"[..], &b"application/json"[..]).expect("static header")
}

fn reply(request: Request, status: u16, body: String) -> std::io::Result<()> {
    request.respond(Response::from_string(body).with_status_code(status).with_header(json_header()))
}

fn completion(model: &str, content: &str) -> String {
    json!({
        "id": "chatcmpl-stub",
        "object": "chat.completion",
        "created": 0,
        "model": model,
        "choices": [{
            "index": 0,
            "message": {"role": "assistant", "content": content},
            "finish_reason": "stop"
        }],
        "usage": {"prompt_tokens": 0, "completion_tokens": 0, "total_tokens": 0}
    })
    .to_string()
}

fn scripted_answer(messages: &[Value]) -> String {
    let signal = messages
        .iter()
        .filter_map(|m| m.get("content").and_then(Value::as_str))
        .find_map(interpret_private_message)
        .unwrap_or(Signal::NoInfo);
    let ctx = PublicContext::new(2, ValuePrior::default());
    let req = BidRequest {
        bidder: BidderId(0),
        signal: &signal,
        ctx: &ctx,
        true_value: Valuation::new(0.0).expect("0 is a valuation"),
        seed: 0,
    };
    let r = decide(&AgentBackend::scripted(), &req).expect("scripted backend is total");
    let object = json!({
        "name": "stub bidder",
        "bid": r.bid,
        "estimated value": r.estimated_value,
        "explanation": r.explanation,
    });
    format!("Here is my decision.\n```json\n{object:#}\n```")
}

fn serve_one(mut request: Request, mode: &StubMode, seen: &mut HashMap<String, u32>) -> std::io::Result<()> {
    let is_completion = request.method() == &tiny_http::Method::Post && request.url() == "/v1/chat/completions";
    if !is_completion {
        return reply(request, 404, json!({"error": {"message": "not found"}}).to_string());
    }
    let authorized =
        request.headers().iter().any(|h| h.field.equiv("Authorization") && h.value.as_str().starts_with("Bearer "));
    if !authorized {
        return reply(request, 401, json!({"error": {"message": "missing bearer token"}}).to_string());
    }
    let mut body = String::new();
    request.as_reader().read_to_string(&mut body)?;
    let Ok(parsed) = serde_json::from_str::<Value>(&body) else {
        return reply(request, 400, json!({"error": {"message": "invalid JSON"}}).to_string());
    };
    let model = parsed.get("model").and_then(Value::as_str).unwrap_or("stub").to_string();
    let messages = parsed.get("messages").and_then(Value::as_array).cloned().unwrap_or_default();
    let key = Value::Array(messages.clone()).to_string();
    let count = seen.entry(key).or_insert(0);
    *count += 1;
    let nth = *count;

    let content = match mode {
        StubMode::Scripted => scripted_answer(&messages),
        StubMode::Malformed { fail_first } if nth <= *fail_first => MALFORMED_TEXT.to_string(),
        StubMode::Malformed { .. } => scripted_answer(&messages),
        StubMode::OutOfRange => json!({
            "name": "stub bidder",
            "bid": 2.0,
            "estimated value": 0.5,
            "explanation": "overbidding on purpose",
        })
        .to_string(),
        StubMode::Throttled { fail_first } if nth <= *fail_first => {
            return reply(request, 429, json!({"error": {"message": "rate limited"}}).to_string());
        }
        StubMode::Throttled { .. } => scripted_answer(&messages),
        StubMode::Fixed(text) => text.clone(),
    };
    reply(request, 200, completion(&model, &content))
}
