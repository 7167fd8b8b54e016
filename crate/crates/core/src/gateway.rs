//! Provider-agnostic access to chat-completion and embedding backends.
//!
//! Ships a deterministic scripted backend for offline runs and tests, a
//! caching layer with append-only persistence, an HTTP backend targeting a
//! chat-completions-style endpoint, and a usage ledger that accounts tokens
//! and calls per stage and per question.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("malformed request: {0}")]
    MalformedRequest(String),
    #[error("no scripted response for fingerprint {0}")]
    ScriptMiss(String),
    #[error("backend unreachable after {attempts} attempts: {detail}")]
    BackendUnreachable { attempts: u32, detail: String },
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("token budget exceeded: used {used}, ceiling {ceiling}")]
    BudgetExceeded { used: u64, ceiling: u64 },
    #[error("embedding provider unreachable: {0}")]
    ProviderUnreachable(String),
    #[error("embedding dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn user(content: impl Into<String>) -> Self {
        Self { role: Role::User, content: content.into() }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model_id: String,
    pub messages: Vec<Message>,
    pub temperature: f64,
    pub max_output_tokens: u32,
    /// Distinguishes repeated samples of the same prompt; part of the
    /// request fingerprint so m samples occupy m cache entries.
    pub sample_index: u32,
}

impl ChatRequest {
    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.messages.is_empty() {
            return Err(GatewayError::MalformedRequest("empty message list".into()));
        }
        if self.messages.last().map(|m| m.role) != Some(Role::User) {
            return Err(GatewayError::MalformedRequest("last message must be from the user".into()));
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(GatewayError::MalformedRequest(format!(
                "temperature {} outside [0, 2]",
                self.temperature
            )));
        }
        if self.max_output_tokens == 0 {
            return Err(GatewayError::MalformedRequest("max_output_tokens must be positive".into()));
        }
        Ok(())
    }

    /// Stable fingerprint over every request field.
    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.model_id.as_bytes());
        hasher.update([0]);
        hasher.update(format!("{:.6}", self.temperature).as_bytes());
        hasher.update([0]);
        hasher.update(self.max_output_tokens.to_le_bytes());
        hasher.update(self.sample_index.to_le_bytes());
        for msg in &self.messages {
            hasher.update([0]);
            hasher.update(format!("{:?}", msg.role).as_bytes());
            hasher.update([1]);
            hasher.update(msg.content.as_bytes());
        }
        hex(&hasher.finalize())
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

impl Usage {
    pub fn total(&self) -> u64 {
        self.prompt_tokens + self.completion_tokens
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChatResponse {
    pub text: String,
    pub usage: Usage,
    pub cached: bool,
}

pub trait ChatBackend: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError>;
}

/// Whitespace token count; the deterministic stand-in for provider token
/// accounting on offline backends.
pub fn approx_tokens(text: &str) -> u64 {
    text.split_whitespace().count() as u64
}

/// Deterministic backend keyed on request fingerprints. An unmatched
/// fingerprint is a loud script-miss, never a default response.
#[derive(Default)]
pub struct ScriptedBackend {
    entries: HashMap<String, String>,
}

impl ScriptedBackend {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, request: &ChatRequest, text: impl Into<String>) {
        self.entries.insert(request.fingerprint(), text.into());
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

impl ChatBackend for ScriptedBackend {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        request.validate()?;
        let fp = request.fingerprint();
        let text = self.entries.get(&fp).ok_or(GatewayError::ScriptMiss(fp))?;
        let prompt: String =
            request.messages.iter().map(|m| m.content.as_str()).collect::<Vec<_>>().join("\n");
        Ok(ChatResponse {
            text: text.clone(),
            usage: Usage {
                prompt_tokens: approx_tokens(&prompt),
                completion_tokens: approx_tokens(text),
            },
            cached: false,
        })
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CacheRecord {
    fingerprint: String,
    text: String,
    usage: Usage,
}

/// Caching layer over any backend. Repeated requests with the same
/// fingerprint are served from cache with `cached = true` and the original
/// usage counts. Optionally persists as an append-only record file.
pub struct CachingBackend {
    inner: Arc<dyn ChatBackend>,
    cache: Mutex<HashMap<String, (String, Usage)>>,
    file: Option<Mutex<File>>,
}

impl CachingBackend {
    pub fn new(inner: Arc<dyn ChatBackend>) -> Self {
        Self { inner, cache: Mutex::new(HashMap::new()), file: None }
    }

    /// Opens (or creates) a persistent cache file and preloads its records.
    pub fn with_file(inner: Arc<dyn ChatBackend>, path: &Path) -> Result<Self, GatewayError> {
        let mut cache = HashMap::new();
        if path.exists() {
            let reader = BufReader::new(File::open(path)?);
            for line in reader.lines() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let record: CacheRecord = serde_json::from_str(&line)
                    .map_err(|e| GatewayError::MalformedResponse(format!("cache record: {e}")))?;
                cache.insert(record.fingerprint, (record.text, record.usage));
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self { inner, cache: Mutex::new(cache), file: Some(Mutex::new(file)) })
    }

    pub fn hit_count(&self) -> usize {
        self.cache.lock().unwrap().len()
    }
}

impl ChatBackend for CachingBackend {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        request.validate()?;
        let fp = request.fingerprint();
        if let Some((text, usage)) = self.cache.lock().unwrap().get(&fp).cloned() {
            return Ok(ChatResponse { text, usage, cached: true });
        }
        let response = self.inner.complete(request)?;
        self.cache.lock().unwrap().insert(fp.clone(), (response.text.clone(), response.usage));
        if let Some(file) = &self.file {
            let record =
                CacheRecord { fingerprint: fp, text: response.text.clone(), usage: response.usage };
            let mut file = file.lock().unwrap();
            writeln!(file, "{}", serde_json::to_string(&record).expect("serialize cache record"))?;
        }
        Ok(response)
    }
}

/// HTTP backend for a chat-completions-style endpoint with bearer auth.
/// Retries up to 3 attempts with exponential backoff starting at 1s.
pub struct HttpBackend {
    base_url: String,
    api_key: String,
    client: reqwest::blocking::Client,
    attempts: u32,
    initial_backoff: std::time::Duration,
}

impl HttpBackend {
    pub fn new(base_url: impl Into<String>, api_key: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            api_key: api_key.into(),
            client: reqwest::blocking::Client::new(),
            attempts: 3,
            initial_backoff: std::time::Duration::from_secs(1),
        }
    }

    /// Reads the API key from the named environment variable.
    pub fn from_env(base_url: impl Into<String>, key_var: &str) -> Result<Self, GatewayError> {
        let api_key = std::env::var(key_var).map_err(|_| {
            GatewayError::MalformedRequest(format!("environment variable {key_var} not set"))
        })?;
        Ok(Self::new(base_url, api_key))
    }

    fn try_once(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        #[derive(Serialize)]
        struct WireMessage<'a> {
            role: &'a str,
            content: &'a str,
        }
        #[derive(Serialize)]
        struct WireRequest<'a> {
            model: &'a str,
            messages: Vec<WireMessage<'a>>,
            temperature: f64,
            max_tokens: u32,
        }
        #[derive(Deserialize)]
        struct WireChoice {
            message: WireChoiceMessage,
        }
        #[derive(Deserialize)]
        struct WireChoiceMessage {
            content: String,
        }
        #[derive(Deserialize, Default)]
        struct WireUsage {
            #[serde(default)]
            prompt_tokens: u64,
            #[serde(default)]
            completion_tokens: u64,
        }
        #[derive(Deserialize)]
        struct WireResponse {
            choices: Vec<WireChoice>,
            #[serde(default)]
            usage: Option<WireUsage>,
        }

        let body = WireRequest {
            model: &request.model_id,
            messages: request
                .messages
                .iter()
                .map(|m| WireMessage {
                    role: match m.role {
                        Role::System => "system",
                        Role::User => "user",
                        Role::Assistant => "assistant",
                    },
                    content: &m.content,
                })
                .collect(),
            temperature: request.temperature,
            max_tokens: request.max_output_tokens,
        };
        let url = format!("{}/chat/completions", self.base_url.trim_end_matches('/'));
        let response = self
            .client
            .post(&url)
            .bearer_auth(&self.api_key)
            .json(&body)
            .send()
            .map_err(|e| GatewayError::BackendUnreachable { attempts: 1, detail: e.to_string() })?;
        if !response.status().is_success() {
            return Err(GatewayError::BackendUnreachable {
                attempts: 1,
                detail: format!("status {}", response.status()),
            });
        }
        let wire: WireResponse = response
            .json()
            .map_err(|e| GatewayError::MalformedResponse(e.to_string()))?;
        let choice = wire
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| GatewayError::MalformedResponse("no choices in response".into()))?;
        let usage = wire.usage.unwrap_or_default();
        Ok(ChatResponse {
            text: choice.message.content,
            usage: Usage {
                prompt_tokens: usage.prompt_tokens,
                completion_tokens: usage.completion_tokens,
            },
            cached: false,
        })
    }
}

impl ChatBackend for HttpBackend {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        request.validate()?;
        let mut backoff = self.initial_backoff;
        let mut last_err = None;
        for attempt in 0..self.attempts {
            match self.try_once(request) {
                Ok(response) => return Ok(response),
                Err(e @ GatewayError::BackendUnreachable { .. }) => {
                    last_err = Some(e);
                    if attempt + 1 < self.attempts {
                        std::thread::sleep(backoff);
                        backoff *= 2;
                    }
                }
                Err(e) => return Err(e),
            }
        }
        match last_err {
            Some(GatewayError::BackendUnreachable { detail, .. }) => {
                Err(GatewayError::BackendUnreachable { attempts: self.attempts, detail })
            }
            _ => unreachable!("retry loop exits with an error"),
        }
    }
}

/// Pipeline stage, used to partition the usage ledger.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Leader,
    Follower,
    Tournament,
}

impl Stage {
    pub const ALL: [Stage; 3] = [Stage::Leader, Stage::Follower, Stage::Tournament];

    pub fn name(&self) -> &'static str {
        match self {
            Stage::Leader => "leader",
            Stage::Follower => "follower",
            Stage::Tournament => "tournament",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UsageEntry {
    pub question_id: String,
    pub stage: Stage,
    pub usage: Usage,
    pub cached: bool,
}

/// Thread-safe accumulator of per-call usage. Totals are the sum of the
/// recorded entries by construction.
#[derive(Default)]
pub struct UsageLedger {
    entries: Mutex<Vec<UsageEntry>>,
    ceiling: Option<u64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageTotals {
    pub calls: u64,
    pub cache_hits: u64,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

impl StageTotals {
    fn add(&mut self, entry: &UsageEntry) {
        self.calls += 1;
        if entry.cached {
            self.cache_hits += 1;
        }
        self.prompt_tokens += entry.usage.prompt_tokens;
        self.completion_tokens += entry.usage.completion_tokens;
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct UsageReport {
    pub per_stage: Vec<(Stage, StageTotals)>,
    pub per_question: Vec<(String, StageTotals)>,
    pub total: StageTotals,
    pub question_count: usize,
    pub avg_prompt_tokens_per_question: f64,
    pub avg_completion_tokens_per_question: f64,
}

impl UsageLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_ceiling(ceiling: u64) -> Self {
        Self { entries: Mutex::new(Vec::new()), ceiling: Some(ceiling) }
    }

    pub fn record(&self, question_id: &str, stage: Stage, usage: Usage, cached: bool) {
        self.entries.lock().unwrap().push(UsageEntry {
            question_id: question_id.to_string(),
            stage,
            usage,
            cached,
        });
    }

    pub fn total_tokens(&self) -> u64 {
        self.entries.lock().unwrap().iter().map(|e| e.usage.total()).sum()
    }

    /// Errors when a configured ceiling has already been passed.
    pub fn check_budget(&self) -> Result<(), GatewayError> {
        if let Some(ceiling) = self.ceiling {
            let used = self.total_tokens();
            if used >= ceiling {
                return Err(GatewayError::BudgetExceeded { used, ceiling });
            }
        }
        Ok(())
    }

    pub fn entries(&self) -> Vec<UsageEntry> {
        self.entries.lock().unwrap().clone()
    }

    pub fn report(&self) -> UsageReport {
        let entries = self.entries.lock().unwrap();
        let mut per_stage: Vec<(Stage, StageTotals)> =
            Stage::ALL.iter().map(|s| (*s, StageTotals::default())).collect();
        let mut per_question: Vec<(String, StageTotals)> = Vec::new();
        let mut total = StageTotals::default();
        for entry in entries.iter() {
            total.add(entry);
            if let Some((_, t)) = per_stage.iter_mut().find(|(s, _)| *s == entry.stage) {
                t.add(entry);
            }
            match per_question.iter_mut().find(|(q, _)| q == &entry.question_id) {
                Some((_, t)) => t.add(entry),
                None => {
                    let mut t = StageTotals::default();
                    t.add(entry);
                    per_question.push((entry.question_id.clone(), t));
                }
            }
        }
        let question_count = per_question.len();
        let divisor = question_count.max(1) as f64;
        UsageReport {
            avg_prompt_tokens_per_question: total.prompt_tokens as f64 / divisor,
            avg_completion_tokens_per_question: total.completion_tokens as f64 / divisor,
            per_stage,
            per_question,
            total,
            question_count,
        }
    }
}

/// A stage-scoped handle bundling a backend with its model id, temperature,
/// token limit, and ledger. Leader, follower, and comparator calls all go
/// through one of these.
#[derive(Clone)]
pub struct ChatClient {
    pub backend: Arc<dyn ChatBackend>,
    pub model_id: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
    pub stage: Stage,
    pub ledger: Option<Arc<UsageLedger>>,
}

impl ChatClient {
    pub fn new(
        backend: Arc<dyn ChatBackend>,
        model_id: impl Into<String>,
        temperature: f64,
        max_output_tokens: u32,
        stage: Stage,
    ) -> Self {
        Self {
            backend,
            model_id: model_id.into(),
            temperature,
            max_output_tokens,
            stage,
            ledger: None,
        }
    }

    pub fn with_ledger(mut self, ledger: Arc<UsageLedger>) -> Self {
        self.ledger = Some(ledger);
        self
    }

    pub fn request(&self, prompt: &str, sample_index: u32) -> ChatRequest {
        ChatRequest {
            model_id: self.model_id.clone(),
            messages: vec![Message::user(prompt)],
            temperature: self.temperature,
            max_output_tokens: self.max_output_tokens,
            sample_index,
        }
    }

    pub fn complete_prompt(
        &self,
        question_id: &str,
        prompt: &str,
        sample_index: u32,
    ) -> Result<ChatResponse, GatewayError> {
        if let Some(ledger) = &self.ledger {
            ledger.check_budget()?;
        }
        let request = self.request(prompt, sample_index);
        let response = self.backend.complete(&request)?;
        if let Some(ledger) = &self.ledger {
            ledger.record(question_id, self.stage, response.usage, response.cached);
        }
        Ok(response)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub values: Vec<f64>,
}

impl EmbeddingVector {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn cosine_similarity(&self, other: &EmbeddingVector) -> f64 {
        let dot: f64 = self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum();
        let na: f64 = self.values.iter().map(|v| v * v).sum::<f64>().sqrt();
        let nb: f64 = other.values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if na == 0.0 || nb == 0.0 {
            return 0.0;
        }
        dot / (na * nb)
    }
}

pub trait Embedder: Send + Sync {
    fn embed(&self, text: &str) -> Result<EmbeddingVector, GatewayError>;
    fn dim(&self) -> usize;
    /// Stable identity string recorded in index manifests so mixed-provider
    /// indexes are rejected.
    fn identity(&self) -> String;
}

/// Fully offline embedder: token-frequency vector over lowercased
/// alphanumeric tokens, bucketed modulo `dim`, L2-normalized. Stable across
/// platforms (buckets come from SHA-256, not the std hasher).
pub struct HashingEmbedder {
    dim: usize,
}

impl HashingEmbedder {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "embedding dim must be positive");
        Self { dim }
    }
}

impl Embedder for HashingEmbedder {
    fn embed(&self, text: &str) -> Result<EmbeddingVector, GatewayError> {
        if text.is_empty() {
            return Err(GatewayError::MalformedRequest("cannot embed empty text".into()));
        }
        let mut values = vec![0.0f64; self.dim];
        let lowered = text.to_lowercase();
        for token in lowered.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()) {
            let digest = Sha256::digest(token.as_bytes());
            let bucket = u64::from_le_bytes(digest[..8].try_into().unwrap()) % self.dim as u64;
            values[bucket as usize] += 1.0;
        }
        let norm: f64 = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            for v in &mut values {
                *v /= norm;
            }
        }
        Ok(EmbeddingVector { values })
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn identity(&self) -> String {
        format!("hashing-v1-d{}", self.dim)
    }
}

/// Embedder backed by a file of precomputed `(id, vector)` rows, keyed by
/// the exact text.
pub struct PrecomputedEmbedder {
    vectors: HashMap<String, EmbeddingVector>,
    dim: usize,
    source: String,
}

#[derive(Deserialize)]
struct VectorRow {
    id: String,
    vector: Vec<f64>,
}

impl PrecomputedEmbedder {
    pub fn from_file(path: &Path) -> Result<Self, GatewayError> {
        let reader = BufReader::new(File::open(path)?);
        let mut vectors = HashMap::new();
        let mut dim = 0;
        for line in reader.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let row: VectorRow = serde_json::from_str(&line)
                .map_err(|e| GatewayError::MalformedResponse(format!("vector row: {e}")))?;
            if dim == 0 {
                dim = row.vector.len();
            } else if row.vector.len() != dim {
                return Err(GatewayError::DimensionMismatch {
                    expected: dim,
                    got: row.vector.len(),
                });
            }
            vectors.insert(row.id, EmbeddingVector { values: row.vector });
        }
        Ok(Self { vectors, dim, source: path.display().to_string() })
    }
}

impl Embedder for PrecomputedEmbedder {
    fn embed(&self, text: &str) -> Result<EmbeddingVector, GatewayError> {
        self.vectors
            .get(text)
            .cloned()
            .ok_or_else(|| GatewayError::ProviderUnreachable(format!(
                "no precomputed vector for text (source {})",
                self.source
            )))
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn identity(&self) -> String {
        format!("precomputed:{}", self.source)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn request(prompt: &str, sample_index: u32) -> ChatRequest {
        ChatRequest {
            model_id: "test-model".into(),
            messages: vec![Message::user(prompt)],
            temperature: 0.7,
            max_output_tokens: 256,
            sample_index,
        }
    }

    #[test]
    fn scripted_lookup() {
        let mut script = ScriptedBackend::new();
        let req = request("what is 2+2", 0);
        script.insert(&req, "\\boxed{4}");
        let response = script.complete(&req).unwrap();
        assert_eq!(response.text, "\\boxed{4}");
        assert!(!response.cached);
    }

    #[test]
    fn scripted_miss_is_loud() {
        let script = ScriptedBackend::new();
        assert!(matches!(
            script.complete(&request("unknown", 0)),
            Err(GatewayError::ScriptMiss(_))
        ));
    }

    #[test]
    fn sample_index_distinguishes_fingerprints() {
        assert_ne!(request("p", 0).fingerprint(), request("p", 1).fingerprint());
        assert_eq!(request("p", 3).fingerprint(), request("p", 3).fingerprint());
    }

    #[test]
    fn empty_messages_rejected() {
        let req = ChatRequest {
            model_id: "m".into(),
            messages: vec![],
            temperature: 0.7,
            max_output_tokens: 10,
            sample_index: 0,
        };
        assert!(matches!(
            ScriptedBackend::new().complete(&req),
            Err(GatewayError::MalformedRequest(_))
        ));
    }

    #[test]
    fn cache_serves_second_request() {
        let mut script = ScriptedBackend::new();
        let req = request("cached?", 0);
        script.insert(&req, "yes");
        let cache = CachingBackend::new(Arc::new(script));
        let first = cache.complete(&req).unwrap();
        let second = cache.complete(&req).unwrap();
        assert!(!first.cached);
        assert!(second.cached);
        assert_eq!(first.text, second.text);
        assert_eq!(first.usage, second.usage);
    }

    #[test]
    fn cache_persists_across_reopen() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.jsonl");
        let req = request("persist me", 0);
        {
            let mut script = ScriptedBackend::new();
            script.insert(&req, "stored");
            let cache = CachingBackend::with_file(Arc::new(script), &path).unwrap();
            assert!(!cache.complete(&req).unwrap().cached);
        }
        // reopen over an empty script: only the cache can answer
        let cache = CachingBackend::with_file(Arc::new(ScriptedBackend::new()), &path).unwrap();
        let response = cache.complete(&req).unwrap();
        assert!(response.cached);
        assert_eq!(response.text, "stored");
    }

    #[test]
    fn ledger_conservation() {
        let ledger = UsageLedger::new();
        ledger.record("q1", Stage::Leader, Usage { prompt_tokens: 5, completion_tokens: 10 }, false);
        ledger.record("q1", Stage::Follower, Usage { prompt_tokens: 7, completion_tokens: 10 }, false);
        ledger.record("q2", Stage::Tournament, Usage { prompt_tokens: 1, completion_tokens: 10 }, true);
        let report = ledger.report();
        let stage_sum: u64 = report.per_stage.iter().map(|(_, t)| t.completion_tokens).sum();
        assert_eq!(stage_sum, report.total.completion_tokens);
        assert_eq!(report.total.completion_tokens, 30);
        assert_eq!(report.total.calls, 3);
        assert_eq!(report.total.cache_hits, 1);
        assert_eq!(report.question_count, 2);
    }

    #[test]
    fn empty_ledger_zero_report() {
        let report = UsageLedger::new().report();
        assert_eq!(report.total, StageTotals::default());
        assert_eq!(report.question_count, 0);
        assert_eq!(report.avg_completion_tokens_per_question, 0.0);
    }

    #[test]
    fn single_question_average() {
        let ledger = UsageLedger::new();
        for _ in 0..3 {
            ledger.record("q1", Stage::Follower, Usage { prompt_tokens: 0, completion_tokens: 10 }, false);
        }
        let report = ledger.report();
        assert_eq!(report.total.completion_tokens, 30);
        assert_eq!(report.avg_completion_tokens_per_question, 30.0);
    }

    #[test]
    fn budget_ceiling_enforced() {
        let ledger = Arc::new(UsageLedger::with_ceiling(5));
        let mut script = ScriptedBackend::new();
        let req = ChatRequest {
            model_id: "m".into(),
            messages: vec![Message::user("one two three four five six")],
            temperature: 0.7,
            max_output_tokens: 64,
            sample_index: 0,
        };
        script.insert(&req, "a b c d e f");
        let client = ChatClient::new(Arc::new(script), "m", 0.7, 64, Stage::Follower)
            .with_ledger(ledger);
        assert!(client.complete_prompt("q", "one two three four five six", 0).is_ok());
        assert!(matches!(
            client.complete_prompt("q", "one two three four five six", 0),
            Err(GatewayError::BudgetExceeded { .. })
        ));
    }

    #[test]
    fn hashing_embedder_deterministic() {
        let embedder = HashingEmbedder::new(64);
        let a = embedder.embed("abc").unwrap();
        let b = embedder.embed("abc").unwrap();
        assert_eq!(a, b);
        assert!((a.cosine_similarity(&b) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn hashing_embedder_normalized() {
        let embedder = HashingEmbedder::new(32);
        let v = embedder.embed("the quick brown fox").unwrap();
        let norm: f64 = v.values.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-12);
    }
}
