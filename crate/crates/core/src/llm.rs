//! The one place that talks to a chat-completions provider.
//!
//! Calls go through [`Gateway`], which adds retries, a concurrency bound and a
//! JSON Lines transcript. In replay mode the transcript answers every call and
//! no network traffic happens.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::http::{self, RetryPolicy};

/// Header carrying the logical call tag; scripted mock servers key on it.
pub const TAG_HEADER: &str = "X-Request-Tag";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub prompt: String,
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
    /// Pipeline stage plus item id; unique per logical call.
    pub tag: String,
}

impl ChatRequest {
    /// Stable hash of everything that determines the response.
    pub fn hash(&self) -> String {
        let canonical = json!({
            "model": self.model,
            "prompt": self.prompt,
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
        });
        crate::io::sha256_hex(canonical.to_string().as_bytes())
    }

    /// OpenAI-compatible request body with the whole prompt as one user message.
    pub fn wire_body(&self) -> Value {
        json!({
            "model": self.model,
            "messages": [{ "role": "user", "content": self.prompt }],
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptRecord {
    pub tag: String,
    pub request_hash: String,
    pub response: String,
    pub latency_ms: u64,
    pub attempts: u32,
}

/// Append-only log of responses, unique by tag.
#[derive(Debug, Default, Clone)]
pub struct Transcript {
    records: Vec<TranscriptRecord>,
    by_tag: HashMap<String, usize>,
}

impl Transcript {
    pub fn from_records(records: Vec<TranscriptRecord>) -> Result<Self> {
        let mut t = Transcript::default();
        for r in records {
            t.append(r)?;
        }
        Ok(t)
    }

    pub fn parse(reader: impl std::io::Read) -> Result<Self> {
        Self::from_records(crate::io::parse_jsonl(reader)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::parse(file)
    }

    /// Written sorted by tag, so completion order under concurrency does not
    /// leak into the file.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut sorted: Vec<&TranscriptRecord> = self.records.iter().collect();
        sorted.sort_by(|a, b| a.tag.cmp(&b.tag));
        crate::io::write_jsonl(path, &sorted)
    }

    pub fn append(&mut self, record: TranscriptRecord) -> Result<()> {
        if self.by_tag.contains_key(&record.tag) {
            return Err(Error::DuplicateTag(record.tag));
        }
        self.by_tag.insert(record.tag.clone(), self.records.len());
        self.records.push(record);
        Ok(())
    }

    pub fn get(&self, tag: &str) -> Option<&TranscriptRecord> {
        self.by_tag.get(tag).map(|&i| &self.records[i])
    }

    pub fn records(&self) -> &[TranscriptRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GatewayMode {
    #[default]
    Live,
    /// Live calls, appended to the transcript. Tags already present are replayed.
    Record,
    Replay,
}

impl std::str::FromStr for GatewayMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "live" => Ok(GatewayMode::Live),
            "record" => Ok(GatewayMode::Record),
            "replay" => Ok(GatewayMode::Replay),
            other => Err(Error::Invalid(format!("unknown mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChatConfig {
    pub base_url: String,
    pub model_name: String,
    pub api_key_env: String,
    pub timeout_secs: u64,
    pub max_tokens: u32,
    pub generation_temperature: f64,
    pub label_temperature: f64,
    pub concurrency: usize,
    pub retry: RetryPolicy,
}

impl Default for ChatConfig {
    fn default() -> Self {
        Self {
            base_url: "http://127.0.0.1:8080".into(),
            model_name: "meta-llama/Llama-2-7b-chat-hf".into(),
            api_key_env: "CHAT_API_KEY".into(),
            timeout_secs: 120,
            max_tokens: 1024,
            generation_temperature: 0.7,
            label_temperature: 0.0,
            concurrency: 4,
            retry: RetryPolicy::default(),
        }
    }
}

/// Answer plus the number of HTTP attempts it took.
#[derive(Debug, Clone, PartialEq)]
pub struct ChatReply {
    pub text: String,
    pub attempts: u32,
}

pub trait ChatBackend: Send + Sync {
    fn complete(&self, req: &ChatRequest) -> Result<ChatReply>;
}

/// `POST {base_url}/v1/chat/completions`.
pub struct HttpChat {
    url: String,
    bearer: Option<String>,
    client: reqwest::blocking::Client,
    retry: RetryPolicy,
}

impl HttpChat {
    pub fn new(config: &ChatConfig) -> Result<Self> {
        Ok(Self {
            url: format!("{}/v1/chat/completions", config.base_url.trim_end_matches('/')),
            bearer: http::bearer_from_env(&config.api_key_env),
            client: http::build_client(Duration::from_secs(config.timeout_secs.max(1)))?,
            retry: config.retry.clone(),
        })
    }
}

impl ChatBackend for HttpChat {
    fn complete(&self, req: &ChatRequest) -> Result<ChatReply> {
        let resp = http::post_json(
            &self.client,
            &self.url,
            self.bearer.as_deref(),
            &[(TAG_HEADER, req.tag.as_str())],
            &req.wire_body(),
            &self.retry,
        )?;
        let text = resp
            .body
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .ok_or_else(|| Error::Provider {
                status: 200,
                message: "response has no choices[0].message.content".into(),
            })?;
        Ok(ChatReply {
            text: text.to_string(),
            attempts: resp.attempts,
        })
    }
}

pub struct Gateway {
    mode: GatewayMode,
    backend: Option<Box<dyn ChatBackend>>,
    transcript: Mutex<Transcript>,
    transcript_path: Option<PathBuf>,
    concurrency: usize,
    live_calls: AtomicUsize,
}

impl Gateway {
    pub fn new(
        mode: GatewayMode,
        backend: Option<Box<dyn ChatBackend>>,
        transcript: Transcript,
        transcript_path: Option<PathBuf>,
        concurrency: usize,
    ) -> Result<Self> {
        if mode != GatewayMode::Replay && backend.is_none() {
            return Err(Error::Invalid(format!("{mode:?} mode needs a chat backend")));
        }
        Ok(Self {
            mode,
            backend,
            transcript: Mutex::new(transcript),
            transcript_path,
            concurrency: concurrency.max(1),
            live_calls: AtomicUsize::new(0),
        })
    }

    /// Builds a gateway from config. Replay needs no reachable provider.
    pub fn from_config(config: &ChatConfig, mode: GatewayMode, transcript_path: Option<&Path>) -> Result<Self> {
        let transcript = match transcript_path {
            Some(p) if p.exists() => Transcript::load(p)?,
            Some(p) if mode == GatewayMode::Replay => {
                return Err(Error::MissingArtifact(format!("transcript {}", p.display())))
            }
            _ => Transcript::default(),
        };
        if mode == GatewayMode::Record && transcript_path.is_none() {
            return Err(Error::Invalid("record mode needs a transcript path".into()));
        }
        let backend: Option<Box<dyn ChatBackend>> = match mode {
            GatewayMode::Replay => None,
            _ => Some(Box::new(HttpChat::new(config)?)),
        };
        Self::new(mode, backend, transcript, transcript_path.map(Path::to_path_buf), config.concurrency)
    }

    pub fn mode(&self) -> GatewayMode {
        self.mode
    }

    pub fn concurrency(&self) -> usize {
        self.concurrency
    }

    /// Calls that actually reached the backend.
    pub fn live_calls(&self) -> usize {
        self.live_calls.load(Ordering::SeqCst)
    }

    pub fn chat(&self, req: &ChatRequest) -> Result<String> {
        if req.prompt.trim().is_empty() {
            return Err(Error::Invalid(format!("empty prompt for tag `{}`", req.tag)));
        }
        if self.mode != GatewayMode::Live {
            let transcript = self.transcript.lock().expect("transcript lock");
            match transcript.get(&req.tag) {
                Some(rec) if rec.request_hash == req.hash() => return Ok(rec.response.clone()),
                Some(_) => return Err(Error::TranscriptStale(req.tag.clone())),
                None if self.mode == GatewayMode::Replay => return Err(Error::TranscriptMiss(req.tag.clone())),
                None => {}
            }
        }
        let backend = self.backend.as_ref().expect("checked in new");
        let start = Instant::now();
        let reply = backend.complete(req)?;
        self.live_calls.fetch_add(1, Ordering::SeqCst);
        if self.mode == GatewayMode::Record {
            self.transcript.lock().expect("transcript lock").append(TranscriptRecord {
                tag: req.tag.clone(),
                request_hash: req.hash(),
                response: reply.text.clone(),
                latency_ms: start.elapsed().as_millis() as u64,
                attempts: reply.attempts,
            })?;
        }
        Ok(reply.text)
    }

    /// Runs `f` over `items` with at most `concurrency` calls in flight.
    /// Results come back in input order.
    pub fn map_bounded<T: Sync, R: Send>(&self, items: &[T], f: impl Fn(&T) -> R + Sync) -> Vec<R> {
        let slots: Vec<Mutex<Option<R>>> = items.iter().map(|_| Mutex::new(None)).collect();
        let next = AtomicUsize::new(0);
        let workers = self.concurrency.min(items.len());
        std::thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    if i >= items.len() {
                        break;
                    }
                    let r = f(&items[i]);
                    *slots[i].lock().expect("slot") = Some(r);
                });
            }
        });
        slots
            .into_iter()
            .map(|s| s.into_inner().expect("slot").expect("every item ran"))
            .collect()
    }

    pub fn chat_many(&self, reqs: &[ChatRequest]) -> Vec<Result<String>> {
        self.map_bounded(reqs, |r| self.chat(r))
    }

    pub fn transcript(&self) -> Transcript {
        self.transcript.lock().expect("transcript lock").clone()
    }

    /// Writes the transcript back to its file (record mode only).
    pub fn flush(&self) -> Result<()> {
        if self.mode != GatewayMode::Record {
            return Ok(());
        }
        if let Some(path) = &self.transcript_path {
            self.transcript.lock().expect("transcript lock").save(path)?;
        }
        Ok(())
    }
}
