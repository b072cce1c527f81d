//! A scripted, OpenAI-compatible HTTP server for tests and offline runs.
//!
//! Chat replies come from per-tag scripts (keyed on the [`TAG_HEADER`]
//! request header) or from a responder closure. Embeddings are feature-hashed
//! bags of words, so texts sharing words get similar vectors. Every request is
//! recorded, and the peak number of requests in flight is tracked.

use std::collections::{HashMap, VecDeque};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use tiny_http::{Header, Response, Server};

use crate::corpus::Label;
use crate::error::{Error, Result};
use crate::llm::TAG_HEADER;

pub mod scenario;

#[derive(Debug, Clone, PartialEq)]
pub enum MockReply {
    /// 200 with the text as the first choice.
    Text(String),
    /// Any status with `{"error": {"message": ...}}`.
    Status(u16, String),
    /// 200 carrying an error payload.
    ErrorPayload(String),
}

#[derive(Debug, Clone)]
pub struct ChatCall {
    pub tag: Option<String>,
    pub prompt: String,
    pub body: Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecordedRequest {
    pub path: String,
    pub method: String,
    pub tag: Option<String>,
    pub authorization: Option<String>,
    pub content_type: Option<String>,
    pub body: Value,
}

type Responder = Box<dyn Fn(&ChatCall) -> MockReply + Send + Sync>;
type Predictor = Box<dyn Fn(&str) -> Label + Send + Sync>;

struct State {
    scripts: Mutex<HashMap<String, VecDeque<MockReply>>>,
    embedding_failures: Mutex<VecDeque<u16>>,
    responder: Option<Responder>,
    predictor: Option<Predictor>,
    dim: usize,
    delay: Duration,
    requests: Mutex<Vec<RecordedRequest>>,
    in_flight: AtomicUsize,
    max_in_flight: AtomicUsize,
}

pub struct MockServerBuilder {
    scripts: HashMap<String, VecDeque<MockReply>>,
    responder: Option<Responder>,
    predictor: Option<Predictor>,
    dim: usize,
    delay: Duration,
}

impl Default for MockServerBuilder {
    fn default() -> Self {
        Self {
            scripts: HashMap::new(),
            responder: None,
            predictor: None,
            dim: 32,
            delay: Duration::ZERO,
        }
    }
}

impl MockServerBuilder {
    /// Replies for `tag`, consumed in order.
    pub fn script(mut self, tag: impl Into<String>, replies: Vec<MockReply>) -> Self {
        self.scripts.entry(tag.into()).or_default().extend(replies);
        self
    }

    /// Fallback for chat calls without a remaining script.
    pub fn responder(mut self, f: impl Fn(&ChatCall) -> MockReply + Send + Sync + 'static) -> Self {
        self.responder = Some(Box::new(f));
        self
    }

    pub fn predictor(mut self, f: impl Fn(&str) -> Label + Send + Sync + 'static) -> Self {
        self.predictor = Some(Box::new(f));
        self
    }

    pub fn dim(mut self, dim: usize) -> Self {
        self.dim = dim.max(1);
        self
    }

    /// Sleep before answering each request.
    pub fn delay(mut self, delay: Duration) -> Self {
        self.delay = delay;
        self
    }

    pub fn start(self) -> Result<MockServer> {
        let server = Server::http("127.0.0.1:0").map_err(|e| Error::Transport {
            attempts: 0,
            message: format!("mock server: {e}"),
        })?;
        let server = Arc::new(server);
        let addr = server
            .server_addr()
            .to_ip()
            .ok_or_else(|| Error::Invalid("mock server has no ip address".into()))?;
        let state = Arc::new(State {
            scripts: Mutex::new(self.scripts),
            embedding_failures: Mutex::new(VecDeque::new()),
            responder: self.responder,
            predictor: self.predictor,
            dim: self.dim,
            delay: self.delay,
            requests: Mutex::new(Vec::new()),
            in_flight: AtomicUsize::new(0),
            max_in_flight: AtomicUsize::new(0),
        });
        let (srv, st) = (Arc::clone(&server), Arc::clone(&state));
        let handle = std::thread::spawn(move || {
            std::thread::scope(|scope| {
                for request in srv.incoming_requests() {
                    let st = &st;
                    scope.spawn(move || handle(st, request));
                }
            });
        });
        Ok(MockServer {
            url: format!("http://{addr}"),
            server,
            state,
            handle: Some(handle),
        })
    }
}

pub struct MockServer {
    url: String,
    server: Arc<Server>,
    state: Arc<State>,
    handle: Option<JoinHandle<()>>,
}

impl MockServer {
    pub fn builder() -> MockServerBuilder {
        MockServerBuilder::default()
    }

    /// Base url, e.g. `http://127.0.0.1:41234`.
    pub fn url(&self) -> &str {
        &self.url
    }

    pub fn requests(&self) -> Vec<RecordedRequest> {
        self.state.requests.lock().expect("requests").clone()
    }

    pub fn request_count(&self, path: &str) -> usize {
        self.state.requests.lock().expect("requests").iter().filter(|r| r.path == path).count()
    }

    pub fn max_in_flight(&self) -> usize {
        self.state.max_in_flight.load(Ordering::SeqCst)
    }

    pub fn push_script(&self, tag: impl Into<String>, replies: Vec<MockReply>) {
        self.state.scripts.lock().expect("scripts").entry(tag.into()).or_default().extend(replies);
    }

    /// The next embedding requests answer with these statuses, in order.
    pub fn fail_embeddings(&self, statuses: &[u16]) {
        self.state.embedding_failures.lock().expect("failures").extend(statuses);
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        self.server.unblock();
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

/// Signed feature hashing of lower-cased words into `dim` buckets.
/// Never the zero vector.
pub fn hash_embedding(text: &str, dim: usize) -> Vec<f64> {
    let mut v = vec![0.0; dim];
    for word in text
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
    {
        let h = Sha256::digest(word.as_bytes());
        let bucket = u32::from_le_bytes([h[0], h[1], h[2], h[3]]) as usize % dim;
        v[bucket] += if h[4] & 1 == 0 { 1.0 } else { -1.0 };
    }
    if v.iter().all(|&x| x == 0.0) {
        v[dim - 1] = 1.0;
    }
    v
}

fn json_response(status: u16, body: &Value) -> Response<std::io::Cursor<Vec<u8>>> {
    Response::from_string(body.to_string())
        .with_status_code(status)
        .with_header(Header::from_bytes("Content-Type", "application/json").expect("static header"))
}

fn error_body(message: &str) -> Value {
    json!({ "error": { "message": message } })
}

fn header(req: &tiny_http::Request, name: &str) -> Option<String> {
    req.headers()
        .iter()
        .find(|h| h.field.as_str().as_str().eq_ignore_ascii_case(name))
        .map(|h| h.value.as_str().to_string())
}

fn handle(state: &State, mut req: tiny_http::Request) {
    let now = state.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
    state.max_in_flight.fetch_max(now, Ordering::SeqCst);

    let mut raw = String::new();
    let _ = req.as_reader().read_to_string(&mut raw);
    let body: Value = serde_json::from_str(&raw).unwrap_or(Value::Null);
    let path = req.url().split('?').next().unwrap_or("").to_string();
    let tag = header(&req, TAG_HEADER);
    state.requests.lock().expect("requests").push(RecordedRequest {
        path: path.clone(),
        method: req.method().as_str().to_string(),
        tag: tag.clone(),
        authorization: header(&req, "Authorization"),
        content_type: header(&req, "Content-Type"),
        body: body.clone(),
    });
    if !state.delay.is_zero() {
        std::thread::sleep(state.delay);
    }

    let (status, out) = match path.as_str() {
        "/v1/chat/completions" => chat(state, tag, body),
        "/v1/embeddings" => embeddings(state, &body),
        "/predict" => predict(state, &body),
        _ => (404, error_body("unknown path")),
    };
    state.in_flight.fetch_sub(1, Ordering::SeqCst);
    let _ = req.respond(json_response(status, &out));
}

fn chat(state: &State, tag: Option<String>, body: Value) -> (u16, Value) {
    let prompt = body
        .pointer("/messages/0/content")
        .and_then(Value::as_str)
        .unwrap_or_default()
        .to_string();
    let scripted = tag
        .as_ref()
        .and_then(|t| state.scripts.lock().expect("scripts").get_mut(t).and_then(VecDeque::pop_front));
    let reply = match (scripted, &state.responder) {
        (Some(r), _) => r,
        (None, Some(f)) => f(&ChatCall { tag, prompt, body }),
        (None, None) => MockReply::Status(404, format!("no script for tag {tag:?}")),
    };
    match reply {
        MockReply::Text(text) => (
            200,
            json!({
                "id": "mock",
                "object": "chat.completion",
                "choices": [{
                    "index": 0,
                    "message": { "role": "assistant", "content": text },
                    "finish_reason": "stop"
                }]
            }),
        ),
        MockReply::Status(code, msg) => (code, error_body(&msg)),
        MockReply::ErrorPayload(msg) => (200, error_body(&msg)),
    }
}

fn embeddings(state: &State, body: &Value) -> (u16, Value) {
    if let Some(code) = state.embedding_failures.lock().expect("failures").pop_front() {
        return (code, error_body("scripted failure"));
    }
    let inputs: Vec<&str> = match body.get("input") {
        Some(Value::String(s)) => vec![s.as_str()],
        Some(Value::Array(a)) => a.iter().filter_map(Value::as_str).collect(),
        _ => return (400, error_body("`input` must be a string or list of strings")),
    };
    let data: Vec<Value> = inputs
        .iter()
        .enumerate()
        .map(|(i, t)| json!({ "object": "embedding", "index": i, "embedding": hash_embedding(t, state.dim) }))
        .collect();
    (200, json!({ "object": "list", "data": data, "model": body.get("model").cloned().unwrap_or(Value::Null) }))
}

fn predict(state: &State, body: &Value) -> (u16, Value) {
    let Some(f) = &state.predictor else {
        return (404, error_body("no predictor configured"));
    };
    let Some(texts) = body.get("texts").and_then(Value::as_array) else {
        return (400, error_body("`texts` must be a list"));
    };
    let labels: Vec<u8> = texts.iter().map(|t| f(t.as_str().unwrap_or_default()).as_u8()).collect();
    (200, json!({ "labels": labels }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hashing_is_stable_and_nonzero() {
        assert_eq!(hash_embedding("Great toy", 16), hash_embedding("great TOY!", 16));
        assert!(hash_embedding("", 8).iter().any(|&x| x != 0.0));
    }
}
