//! Candidate generation and fluency scoring.
//!
//! Backends return raw completions; [`Generator::generate`] turns them into
//! [`Candidate`]s by cutting at the first stop sequence. The remote client
//! speaks a minimal completion protocol:
//!
//! ```text
//! POST <url> {"prompt", "n", "temperature", "top_p", "max_tokens", "stop"}
//!         -> {"completions": [..]}
//! ```

use std::collections::{HashMap, VecDeque};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::ValueLexicon;
use crate::mr::{Domain, MeaningRepresentation, Personality, SlotKind};
use crate::sidecar::SidecarClient;
use crate::style::MarkerLexicon;
use crate::text::{match_tokens, word_tokens};

pub const DEFAULT_TOKEN_ENV: &str = "STYLERANK_API_TOKEN";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BackendError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("rate limited after {attempts} attempts")]
    RateLimited { attempts: u32 },
    #[error("HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("malformed response: {0}")]
    Malformed(String),
    #[error("expected {expected} completions, got {got}")]
    CountMismatch { expected: usize, got: usize },
    #[error("no replay record for prompt `{0}`")]
    ReplayMiss(String),
    #[error("{0}")]
    Io(String),
}

/// What the mock realizer needs to know about the item being generated.
#[derive(Debug, Clone, PartialEq)]
pub struct RequestContext {
    pub mr: MeaningRepresentation,
    pub personality: Personality,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    /// Identifies the test item; used for replay lookup and mock seeding.
    pub prompt_id: String,
    pub prompt: String,
    pub n: usize,
    pub temperature: f64,
    pub top_p: f64,
    pub max_new_tokens: usize,
    pub stop_sequences: Vec<String>,
    #[serde(skip)]
    pub context: Option<RequestContext>,
}

impl GenerationRequest {
    pub fn new(prompt_id: impl Into<String>, prompt: impl Into<String>) -> Self {
        GenerationRequest {
            prompt_id: prompt_id.into(),
            prompt: prompt.into(),
            n: 10,
            temperature: 0.7,
            top_p: 1.0,
            max_new_tokens: 120,
            stop_sequences: Vec::new(),
            context: None,
        }
    }

    pub fn with_stop(mut self, stop: impl Into<String>) -> Self {
        self.stop_sequences.push(stop.into());
        self
    }

    pub fn with_context(mut self, mr: MeaningRepresentation, personality: Personality) -> Self {
        self.context = Some(RequestContext { mr, personality });
        self
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        let bad = |m: &str| Err(BackendError::InvalidRequest(m.to_string()));
        if self.n == 0 {
            return bad("n must be at least 1");
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return bad("temperature must be non-negative");
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return bad("top_p must lie in (0, 1]");
        }
        if self.stop_sequences.iter().any(String::is_empty) {
            return bad("stop sequences must be non-empty");
        }
        Ok(())
    }

    fn wire(&self) -> WireRequest<'_> {
        WireRequest {
            prompt: &self.prompt,
            n: self.n,
            temperature: self.temperature,
            top_p: self.top_p,
            max_tokens: self.max_new_tokens,
            stop: &self.stop_sequences,
        }
    }
}

#[derive(Debug, Serialize)]
struct WireRequest<'a> {
    prompt: &'a str,
    n: usize,
    temperature: f64,
    top_p: f64,
    max_tokens: usize,
    stop: &'a [String],
}

#[derive(Debug, Deserialize)]
struct WireResponse {
    completions: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Candidate {
    pub text: String,
    pub raw_completion: String,
    pub prompt_id: String,
    pub generation_index: usize,
    pub backend_id: String,
}

/// Cuts `raw` at the earliest stop sequence not preceded by a backslash and
/// trims surrounding whitespace. Applying it twice changes nothing.
pub fn extract_completion(raw: &str, stop_sequences: &[String]) -> String {
    let mut cut = raw.len();
    for stop in stop_sequences.iter().filter(|s| !s.is_empty()) {
        let mut from = 0;
        while let Some(pos) = raw[from..].find(stop.as_str()) {
            let at = from + pos;
            if at > 0 && raw.as_bytes()[at - 1] == b'\\' {
                from = at + stop.len();
                continue;
            }
            cut = cut.min(at);
            break;
        }
    }
    raw[..cut].trim().to_string()
}

pub trait Generator: Send + Sync {
    fn id(&self) -> &str;

    /// Raw completions for one request.
    fn complete(&self, request: &GenerationRequest) -> Result<Vec<String>, BackendError>;

    fn generate(&self, request: &GenerationRequest) -> Result<Vec<Candidate>, BackendError> {
        request.validate()?;
        let raw = self.complete(request)?;
        if raw.len() != request.n {
            return Err(BackendError::CountMismatch {
                expected: request.n,
                got: raw.len(),
            });
        }
        Ok(raw
            .into_iter()
            .enumerate()
            .map(|(i, raw)| Candidate {
                text: extract_completion(&raw, &request.stop_sequences),
                raw_completion: raw,
                prompt_id: request.prompt_id.clone(),
                generation_index: i,
                backend_id: self.id().to_string(),
            })
            .collect())
    }
}

/// 64-bit FNV-1a; stable across platforms and releases.
pub(crate) fn stable_hash(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

// ---------------------------------------------------------------------------
// Remote

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RemoteConfig {
    pub url: String,
    /// Environment variable holding the bearer token, if any.
    pub token_env: Option<String>,
    pub max_retries: u32,
    pub initial_backoff_ms: u64,
    pub max_backoff_ms: u64,
    pub timeout_secs: u64,
    pub max_in_flight: usize,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        RemoteConfig {
            url: String::new(),
            token_env: Some(DEFAULT_TOKEN_ENV.to_string()),
            max_retries: 5,
            initial_backoff_ms: 500,
            max_backoff_ms: 30_000,
            timeout_secs: 120,
            max_in_flight: 4,
        }
    }
}

struct Semaphore {
    permits: Mutex<usize>,
    freed: Condvar,
}

impl Semaphore {
    fn new(n: usize) -> Self {
        Semaphore {
            permits: Mutex::new(n.max(1)),
            freed: Condvar::new(),
        }
    }

    fn acquire(&self) -> SemaphoreGuard<'_> {
        let mut p = self.permits.lock().expect("semaphore poisoned");
        while *p == 0 {
            p = self.freed.wait(p).expect("semaphore poisoned");
        }
        *p -= 1;
        SemaphoreGuard(self)
    }
}

struct SemaphoreGuard<'a>(&'a Semaphore);

impl Drop for SemaphoreGuard<'_> {
    fn drop(&mut self) {
        *self.0.permits.lock().expect("semaphore poisoned") += 1;
        self.0.freed.notify_one();
    }
}

pub struct RemoteBackend {
    config: RemoteConfig,
    agent: ureq::Agent,
    token: Option<String>,
    gate: Semaphore,
}

impl RemoteBackend {
    pub fn new(config: RemoteConfig) -> Result<Self, BackendError> {
        if config.url.is_empty() {
            return Err(BackendError::InvalidRequest("remote backend needs a url".into()));
        }
        let token = config
            .token_env
            .as_deref()
            .and_then(|var| std::env::var(var).ok())
            .filter(|t| !t.is_empty());
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        let gate = Semaphore::new(config.max_in_flight);
        Ok(RemoteBackend {
            config,
            agent,
            token,
            gate,
        })
    }

    fn backoff(&self, attempt: u32) -> Duration {
        let ms = self
            .config
            .initial_backoff_ms
            .saturating_mul(1u64 << attempt.min(20))
            .min(self.config.max_backoff_ms);
        Duration::from_millis(ms)
    }

    fn attempt(&self, body: &WireRequest<'_>) -> Result<Vec<String>, (bool, BackendError)> {
        let mut req = self.agent.post(&self.config.url);
        if let Some(token) = &self.token {
            req = req.header("Authorization", &format!("Bearer {token}"));
        }
        let mut resp = req
            .send_json(body)
            .map_err(|e| (true, BackendError::Transport(e.to_string())))?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| (true, BackendError::Transport(e.to_string())))?;
        match status {
            200..=299 => serde_json::from_str::<WireResponse>(&text)
                .map(|r| r.completions)
                .map_err(|e| (false, BackendError::Malformed(e.to_string()))),
            429 => Err((true, BackendError::RateLimited { attempts: 0 })),
            500..=599 => Err((true, BackendError::Http { status, body: text })),
            _ => Err((false, BackendError::Http { status, body: text })),
        }
    }
}

impl Generator for RemoteBackend {
    fn id(&self) -> &str {
        "remote"
    }

    fn complete(&self, request: &GenerationRequest) -> Result<Vec<String>, BackendError> {
        request.validate()?;
        let _permit = self.gate.acquire();
        let body = request.wire();
        let mut attempt = 0;
        loop {
            match self.attempt(&body) {
                Ok(c) => return Ok(c),
                Err((retryable, err)) => {
                    if !retryable || attempt >= self.config.max_retries {
                        return Err(match err {
                            BackendError::RateLimited { .. } => BackendError::RateLimited {
                                attempts: attempt + 1,
                            },
                            other => other,
                        });
                    }
                    let wait = self.backoff(attempt);
                    log::warn!(
                        "completion request for {} failed ({err}); retrying in {wait:?}",
                        request.prompt_id
                    );
                    std::thread::sleep(wait);
                    attempt += 1;
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Replay

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayRecord {
    pub prompt_id: String,
    pub request: serde_json::Value,
    pub completions: Vec<String>,
}

fn replay_key(prompt_id: &str, request: &serde_json::Value) -> String {
    format!("{prompt_id}\u{1f}{request}")
}

/// Wraps a generator and appends every successful exchange to a JSONL log.
pub struct RecordingBackend<G> {
    inner: G,
    log: Mutex<BufWriter<File>>,
    path: PathBuf,
}

impl<G: Generator> RecordingBackend<G> {
    pub fn create(inner: G, path: impl AsRef<Path>) -> Result<Self, BackendError> {
        let path = path.as_ref().to_path_buf();
        let file = OpenOptions::new()
            .create(true)
            .write(true)
            .truncate(true)
            .open(&path)
            .map_err(|e| BackendError::Io(format!("{}: {e}", path.display())))?;
        Ok(RecordingBackend {
            inner,
            log: Mutex::new(BufWriter::new(file)),
            path,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn flush(&self) -> Result<(), BackendError> {
        self.log
            .lock()
            .expect("replay log poisoned")
            .flush()
            .map_err(|e| BackendError::Io(e.to_string()))
    }
}

impl<G: Generator> Generator for RecordingBackend<G> {
    fn id(&self) -> &str {
        self.inner.id()
    }

    fn complete(&self, request: &GenerationRequest) -> Result<Vec<String>, BackendError> {
        let completions = self.inner.complete(request)?;
        let record = ReplayRecord {
            prompt_id: request.prompt_id.clone(),
            request: serde_json::to_value(request.wire())
                .map_err(|e| BackendError::Io(e.to_string()))?,
            completions: completions.clone(),
        };
        let line = serde_json::to_string(&record).map_err(|e| BackendError::Io(e.to_string()))?;
        let mut log = self.log.lock().expect("replay log poisoned");
        writeln!(log, "{line}").map_err(|e| BackendError::Io(e.to_string()))?;
        Ok(completions)
    }
}

impl<G> Drop for RecordingBackend<G> {
    fn drop(&mut self) {
        if let Ok(mut log) = self.log.lock() {
            let _ = log.flush();
        }
    }
}

/// Serves completions from a replay log. Repeated identical requests are
/// answered in log order.
pub struct ReplayBackend {
    id: String,
    records: Mutex<HashMap<String, VecDeque<Vec<String>>>>,
}

impl ReplayBackend {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, BackendError> {
        let path = path.as_ref();
        let file =
            File::open(path).map_err(|e| BackendError::Io(format!("{}: {e}", path.display())))?;
        let mut records: HashMap<String, VecDeque<Vec<String>>> = HashMap::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| BackendError::Io(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: ReplayRecord = serde_json::from_str(&line).map_err(|e| {
                BackendError::Malformed(format!("{}:{}: {e}", path.display(), i + 1))
            })?;
            records
                .entry(replay_key(&rec.prompt_id, &rec.request))
                .or_default()
                .push_back(rec.completions);
        }
        Ok(ReplayBackend {
            id: "replay".to_string(),
            records: Mutex::new(records),
        })
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = id.into();
        self
    }
}

impl Generator for ReplayBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn complete(&self, request: &GenerationRequest) -> Result<Vec<String>, BackendError> {
        let wire =
            serde_json::to_value(request.wire()).map_err(|e| BackendError::Io(e.to_string()))?;
        let key = replay_key(&request.prompt_id, &wire);
        let mut records = self.records.lock().expect("replay table poisoned");
        let queue = records
            .get_mut(&key)
            .ok_or_else(|| BackendError::ReplayMiss(request.prompt_id.clone()))?;
        // keep the last record so re-scoring the same log twice still works
        if queue.len() > 1 {
            Ok(queue.pop_front().expect("non-empty queue"))
        } else {
            queue
                .front()
                .cloned()
                .ok_or_else(|| BackendError::ReplayMiss(request.prompt_id.clone()))
        }
    }
}

// ---------------------------------------------------------------------------
// Mock

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct MockNoise {
    pub p_drop: f64,
    pub p_substitute: f64,
    pub p_hallucinate: f64,
    pub p_marker: f64,
}

impl MockNoise {
    pub fn validate(&self) -> Result<(), BackendError> {
        let ps = [self.p_drop, self.p_substitute, self.p_hallucinate, self.p_marker];
        if ps.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(BackendError::InvalidRequest(format!(
                "noise probabilities must lie in [0, 1]: {self:?}"
            )));
        }
        if self.p_drop + self.p_substitute > 1.0 + 1e-12 {
            return Err(BackendError::InvalidRequest(
                "p_drop + p_substitute must not exceed 1".into(),
            ));
        }
        Ok(())
    }
}

/// Surface text for a lexicon value: the value itself when it tokenizes to
/// the first synonym, else the first synonym.
fn value_phrase(lexicon: &ValueLexicon, slot: &str, value: &str) -> String {
    match lexicon.entry(slot, value) {
        Some(e) => match e.phrases.first() {
            Some(first) if match_tokens(&e.surface) == *first => e.surface.clone(),
            Some(first) => first.join(" "),
            None => e.surface.clone(),
        },
        None => value.to_string(),
    }
}

fn clause(domain: Domain, slot: &str, kind: SlotKind, phrase: &str) -> String {
    match (domain, slot, kind) {
        (_, "name", _) => format!("This is {phrase}."),
        (Domain::Restaurant, "near", _) => format!("It is near {phrase}."),
        (_, _, SlotKind::Boolean) => format!("It is {phrase}."),
        _ => format!("It has {phrase}."),
    }
}

/// Markers that belong to `personality` only, begin with a letter, and carry
/// no negative evidence anywhere.
fn exclusive_markers(markers: &MarkerLexicon, personality: Personality) -> Vec<String> {
    let claimed_elsewhere = |tokens: &[String]| {
        Personality::ALL.iter().any(|&p| {
            (p != personality && markers.patterns(p).iter().any(|m| m.tokens == tokens))
                || markers.negative_patterns(p).iter().any(|m| m.tokens == tokens)
        })
    };
    markers
        .patterns(personality)
        .iter()
        .filter(|m| m.phrase.starts_with(|c: char| c.is_alphabetic()))
        .filter(|m| !claimed_elsewhere(&m.tokens))
        .map(|m| m.phrase.clone())
        .collect()
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

/// Template realization of `mr` with injected errors.
///
/// Each slot independently draws `u`: `u < p_drop` drops it, `u < p_drop +
/// p_substitute` swaps in another lexicon value of the same slot (when one
/// exists). Each closed-vocabulary slot absent from the MR is hallucinated
/// with `p_hallucinate`. With `p_marker` the text opens with a marker
/// exclusive to `personality`.
pub fn mock_realize<R: Rng + ?Sized>(
    mr: &MeaningRepresentation,
    personality: Personality,
    noise: &MockNoise,
    lexicon: &ValueLexicon,
    markers: &MarkerLexicon,
    rng: &mut R,
) -> String {
    let domain = mr.domain();
    let mut clauses = Vec::new();
    for slot in mr.slots() {
        let u: f64 = rng.random();
        if u < noise.p_drop {
            continue;
        }
        let phrase = if u < noise.p_drop + noise.p_substitute {
            let taken: Vec<&str> = slot.items(domain);
            let alternatives: Vec<_> = lexicon
                .alternatives(slot.name(), slot.value())
                .into_iter()
                .filter(|e| !taken.iter().any(|t| e.value == t.to_lowercase()))
                .collect();
            match alternatives.choose(rng) {
                Some(alt) => value_phrase(lexicon, &alt.slot, &alt.value),
                None => realize_value(domain, slot, lexicon),
            }
        } else {
            realize_value(domain, slot, lexicon)
        };
        clauses.push(clause(domain, slot.name(), slot.kind(), &phrase));
    }
    for absent in lexicon.slots() {
        if mr.slot(absent).is_some() || lexicon.is_open_slot(absent) {
            continue;
        }
        let kind = domain.slot_kind(absent);
        if kind == SlotKind::Placeholder {
            continue;
        }
        let u: f64 = rng.random();
        if u >= noise.p_hallucinate {
            continue;
        }
        let values: Vec<_> = lexicon.entries().iter().filter(|e| e.slot == absent).collect();
        if let Some(e) = values.choose(rng) {
            let phrase = value_phrase(lexicon, &e.slot, &e.value);
            clauses.push(clause(domain, absent, kind, &phrase));
        }
    }
    let mut text = clauses.join(" ");
    let u: f64 = rng.random();
    if u < noise.p_marker {
        let pool = exclusive_markers(markers, personality);
        if let Some(marker) = pool.choose(rng) {
            text = if text.is_empty() {
                capitalize(marker)
            } else {
                format!("{}, {}", capitalize(marker), text)
            };
        }
    }
    text
}

fn realize_value(domain: Domain, slot: &crate::mr::SlotValue, lexicon: &ValueLexicon) -> String {
    match slot.kind() {
        SlotKind::Placeholder | SlotKind::OpenText => slot.value().to_string(),
        SlotKind::Boolean | SlotKind::Categorical => {
            let items = slot.items(domain);
            items
                .iter()
                .map(|item| value_phrase(lexicon, slot.name(), item))
                .collect::<Vec<_>>()
                .join(" and ")
        }
    }
}

/// Deterministic offline backend built on [`mock_realize`]. Requests must
/// carry a [`RequestContext`].
pub struct MockBackend {
    noise: MockNoise,
    seed: u64,
    restaurant: ValueLexicon,
    videogame: ValueLexicon,
    markers: MarkerLexicon,
}

impl MockBackend {
    pub fn new(noise: MockNoise, seed: u64) -> Result<Self, BackendError> {
        noise.validate()?;
        Ok(MockBackend {
            noise,
            seed,
            restaurant: ValueLexicon::builtin(Domain::Restaurant),
            videogame: ValueLexicon::builtin(Domain::VideoGame),
            markers: MarkerLexicon::builtin(),
        })
    }

    pub fn with_markers(mut self, markers: MarkerLexicon) -> Self {
        self.markers = markers;
        self
    }

    pub fn noise(&self) -> MockNoise {
        self.noise
    }
}

impl Generator for MockBackend {
    fn id(&self) -> &str {
        "mock"
    }

    fn complete(&self, request: &GenerationRequest) -> Result<Vec<String>, BackendError> {
        request.validate()?;
        let ctx = request.context.as_ref().ok_or_else(|| {
            BackendError::InvalidRequest("mock backend needs the target MR".into())
        })?;
        let lexicon = match ctx.mr.domain() {
            Domain::Restaurant => &self.restaurant,
            Domain::VideoGame => &self.videogame,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ stable_hash(&request.prompt_id));
        let tail = request
            .stop_sequences
            .first()
            .map(|s| format!("{s} trailing text"))
            .unwrap_or_default();
        Ok((0..request.n)
            .map(|_| {
                let text =
                    mock_realize(&ctx.mr, ctx.personality, &self.noise, lexicon, &self.markers, &mut rng);
                format!(" {text}{tail}")
            })
            .collect())
    }
}

// ---------------------------------------------------------------------------
// Fluency

pub trait FluencyProvider: Send + Sync {
    fn id(&self) -> &str;

    /// Geometric-mean token probability per text, each in (0, 1].
    fn fluency_batch(&self, texts: &[String]) -> Result<Vec<f64>, BackendError>;

    fn fluency(&self, text: &str) -> Result<f64, BackendError> {
        let mut v = self.fluency_batch(&[text.to_string()])?;
        v.pop()
            .ok_or_else(|| BackendError::Malformed("no fluency value".into()))
    }
}

fn reject_empty(texts: &[String]) -> Result<(), BackendError> {
    if texts.iter().any(|t| t.trim().is_empty()) {
        return Err(BackendError::InvalidRequest("fluency of empty text".into()));
    }
    Ok(())
}

const BOS: &str = "<s>";
const EOS: &str = "</s>";
const UNK: &str = "<unk>";

/// Add-k smoothed bigram model over lower-cased word tokens.
#[derive(Debug, Clone)]
pub struct BigramFluency {
    k: f64,
    unigrams: HashMap<String, u64>,
    bigrams: HashMap<(String, String), u64>,
    vocab_size: usize,
}

impl BigramFluency {
    pub fn train<S: AsRef<str>>(corpus: &[S], k: f64) -> Self {
        assert!(k > 0.0, "smoothing constant must be positive");
        let mut vocab: HashMap<String, u64> = HashMap::new();
        for text in corpus {
            for t in word_tokens(text.as_ref()) {
                *vocab.entry(t).or_default() += 1;
            }
        }
        let mut unigrams: HashMap<String, u64> = HashMap::new();
        let mut bigrams: HashMap<(String, String), u64> = HashMap::new();
        for text in corpus {
            let seq = Self::sequence(text.as_ref(), &vocab);
            for w in seq.windows(2) {
                *unigrams.entry(w[0].clone()).or_default() += 1;
                *bigrams.entry((w[0].clone(), w[1].clone())).or_default() += 1;
            }
        }
        // vocabulary plus </s> and <unk>
        let vocab_size = vocab.len() + 2;
        BigramFluency {
            k,
            unigrams,
            bigrams,
            vocab_size,
        }
    }

    fn sequence(text: &str, vocab: &HashMap<String, u64>) -> Vec<String> {
        let mut seq = vec![BOS.to_string()];
        seq.extend(word_tokens(text).into_iter().map(|t| {
            if vocab.contains_key(&t) {
                t
            } else {
                UNK.to_string()
            }
        }));
        seq.push(EOS.to_string());
        seq
    }

    fn known(&self, token: &str) -> bool {
        // every training token precedes at least `</s>`
        self.unigrams.contains_key(token)
    }

    /// Smoothed conditional probability of `next` after `prev`.
    pub fn prob(&self, prev: &str, next: &str) -> f64 {
        let c_prev = self.unigrams.get(prev).copied().unwrap_or(0) as f64;
        let c_pair = self
            .bigrams
            .get(&(prev.to_string(), next.to_string()))
            .copied()
            .unwrap_or(0) as f64;
        (c_pair + self.k) / (c_prev + self.k * self.vocab_size as f64)
    }

    /// Mean log-probability per predicted token (including `</s>`).
    pub fn mean_logprob(&self, text: &str) -> f64 {
        let mut seq = vec![BOS.to_string()];
        for t in word_tokens(text) {
            seq.push(if self.known(&t) { t } else { UNK.to_string() });
        }
        seq.push(EOS.to_string());
        let total: f64 = seq.windows(2).map(|w| self.prob(&w[0], &w[1]).ln()).sum();
        total / (seq.len() - 1) as f64
    }
}

impl FluencyProvider for BigramFluency {
    fn id(&self) -> &str {
        "bigram"
    }

    fn fluency_batch(&self, texts: &[String]) -> Result<Vec<f64>, BackendError> {
        reject_empty(texts)?;
        Ok(texts.iter().map(|t| self.mean_logprob(t).exp()).collect())
    }
}

/// Same value for every text; isolates other ranking terms in experiments.
#[derive(Debug, Clone, Copy)]
pub struct ConstantFluency(pub f64);

impl FluencyProvider for ConstantFluency {
    fn id(&self) -> &str {
        "constant"
    }

    fn fluency_batch(&self, texts: &[String]) -> Result<Vec<f64>, BackendError> {
        Ok(vec![self.0; texts.len()])
    }
}

/// Language-model log-probabilities from the scorer service.
#[derive(Debug, Clone)]
pub struct RemoteFluency {
    client: SidecarClient,
}

impl RemoteFluency {
    pub fn new(client: SidecarClient) -> Self {
        RemoteFluency { client }
    }
}

impl FluencyProvider for RemoteFluency {
    fn id(&self) -> &str {
        "remote"
    }

    fn fluency_batch(&self, texts: &[String]) -> Result<Vec<f64>, BackendError> {
        reject_empty(texts)?;
        let lps = self
            .client
            .logprob(texts)
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        lps.into_iter()
            .map(|lp| {
                if lp > 1e-9 {
                    Err(BackendError::Malformed(format!("positive log-probability {lp}")))
                } else {
                    Ok(lp.min(0.0).exp())
                }
            })
            .collect()
    }
}
