//! Top-k fill-mask retrieval and the append-only completion store.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::corpus::{render_prompt, Template};
use crate::net::{self, RetryError, RetryPolicy};

/// The k values reported by default.
pub const DEFAULT_K_VALUES: [usize; 4] = [1, 5, 10, 20];

/// Default number of in-flight backend requests per campaign.
pub const DEFAULT_PARALLELISM: usize = 4;

#[derive(Debug, thiserror::Error)]
pub enum ProbeError {
    #[error("backend unavailable after {attempts} attempt(s): {reason}")]
    BackendUnavailable { attempts: u32, reason: String },
    #[error("malformed backend response: {0}")]
    MalformedBackendResponse(String),
    #[error("no replay record for model {model_id:?}, template {template_id:?}")]
    ReplayMiss { model_id: String, template_id: String },
    #[error("corrupt store record at {path}:{line}: {reason}")]
    CorruptRecord { path: String, line: usize, reason: String },
    #[error("completion store {0} is locked by another process")]
    StoreLocked(String),
    #[error("k must be at least 1")]
    InvalidK,
    #[error("invalid model spec: {0}")]
    InvalidSpec(String),
    #[error("campaign has no templates")]
    EmptyCampaign,
    #[error("every template failed for model {model_id:?} ({failed} failures)")]
    CampaignFailed { model_id: String, failed: usize },
    #[error("store I/O on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = ProbeError> = std::result::Result<T, E>;

/// Where completions come from.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum Endpoint {
    Http(String),
    Replay(PathBuf),
    Stub(u64),
}

impl Endpoint {
    pub fn is_network(&self) -> bool {
        matches!(self, Endpoint::Http(_))
    }
}

impl FromStr for Endpoint {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let s = s.trim();
        if let Some(path) = s.strip_prefix("replay:") {
            if path.is_empty() {
                return Err("replay endpoint needs a path".into());
            }
            Ok(Endpoint::Replay(PathBuf::from(path)))
        } else if let Some(seed) = s.strip_prefix("stub:") {
            seed.parse()
                .map(Endpoint::Stub)
                .map_err(|_| format!("stub seed {seed:?} is not an unsigned integer"))
        } else if s.starts_with("http://") || s.starts_with("https://") {
            Ok(Endpoint::Http(s.to_string()))
        } else {
            Err(format!(
                "unsupported endpoint {s:?}; expected http(s)://, replay:<path> or stub:<seed>"
            ))
        }
    }
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Endpoint::Http(url) => f.write_str(url),
            Endpoint::Replay(p) => write!(f, "replay:{}", p.display()),
            Endpoint::Stub(seed) => write!(f, "stub:{seed}"),
        }
    }
}

impl From<Endpoint> for String {
    fn from(e: Endpoint) -> String {
        e.to_string()
    }
}

impl TryFrom<String> for Endpoint {
    type Error = String;

    fn try_from(s: String) -> Result<Self, String> {
        s.parse()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub model_id: String,
    pub language: String,
    pub mask_token: String,
    pub endpoint: Endpoint,
}

impl ModelSpec {
    pub fn new(
        model_id: impl Into<String>,
        language: impl Into<String>,
        mask_token: impl Into<String>,
        endpoint: Endpoint,
    ) -> Result<Self> {
        let spec = ModelSpec {
            model_id: model_id.into(),
            language: language.into(),
            mask_token: mask_token.into(),
            endpoint,
        };
        if spec.model_id.trim().is_empty() {
            return Err(ProbeError::InvalidSpec("empty model id".into()));
        }
        if spec.mask_token.is_empty() {
            return Err(ProbeError::InvalidSpec(format!(
                "model {:?} has an empty mask token",
                spec.model_id
            )));
        }
        Ok(spec)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Completion {
    pub rank: u32,
    pub surface: String,
    pub score: Option<f64>,
}

/// The ranked completions one model produced for one template.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompletionSet {
    pub template_id: String,
    pub model_id: String,
    pub k_requested: usize,
    pub completions: Vec<Completion>,
    /// Set when the backend returned fewer than `k_requested` completions.
    pub truncated: bool,
}

impl CompletionSet {
    pub fn depth(&self) -> usize {
        self.completions.len()
    }

    /// The rank 1..=k prefix, or `None` when fewer than `k` completions are held.
    pub fn prefix(&self, k: usize) -> Option<CompletionSet> {
        if k == 0 || self.depth() < k {
            return None;
        }
        Some(CompletionSet {
            template_id: self.template_id.clone(),
            model_id: self.model_id.clone(),
            k_requested: k,
            completions: self.completions[..k].to_vec(),
            truncated: false,
        })
    }

    fn validate(&self) -> Result<(), String> {
        for (i, c) in self.completions.iter().enumerate() {
            if c.rank as usize != i + 1 {
                return Err(format!("rank {} at position {}", c.rank, i + 1));
            }
            if let Some(s) = c.score {
                if !(0.0..=1.0).contains(&s) {
                    return Err(format!("score {s} outside [0,1]"));
                }
            }
        }
        if self.k_requested == 0 {
            return Err("k is zero".into());
        }
        if self.depth() > self.k_requested {
            return Err(format!("{} completions for k={}", self.depth(), self.k_requested));
        }
        if self.depth() < self.k_requested && !self.truncated {
            return Err("short completion list without truncation flag".into());
        }
        Ok(())
    }
}

/// One backend call's worth of input.
#[derive(Clone, Copy, Debug)]
pub struct ProbeRequest<'a> {
    pub model_id: &'a str,
    pub template_id: &'a str,
    pub text: &'a str,
    pub top_k: usize,
}

/// One element of a fill-mask response, in backend rank order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TokenScore {
    pub token: String,
    pub score: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BackendResponse {
    pub tokens: Vec<TokenScore>,
    /// Unix seconds the completions were produced. Backends that replay or
    /// synthesize completions supply a fixed value so stores stay reproducible.
    pub fetched_at: Option<u64>,
}

pub trait FillMaskBackend: Send + Sync {
    fn fill_mask(&self, request: &ProbeRequest<'_>) -> Result<BackendResponse>;
}

impl<B: FillMaskBackend + ?Sized> FillMaskBackend for &B {
    fn fill_mask(&self, request: &ProbeRequest<'_>) -> Result<BackendResponse> {
        (**self).fill_mask(request)
    }
}

impl<B: FillMaskBackend + ?Sized> FillMaskBackend for Box<B> {
    fn fill_mask(&self, request: &ProbeRequest<'_>) -> Result<BackendResponse> {
        (**self).fill_mask(request)
    }
}

const STUB_VOCAB_SIZE: usize = 4096;
const STUB_PUNCTUATION: [&str; 4] = [",", ".", "!", "..."];
const SYLLABLES: [&str; 16] = [
    "ba", "ke", "lo", "mi", "nu", "ra", "se", "ti", "vo", "da", "fe", "go", "hu", "ja", "pe", "sy",
];

/// The `index`th pseudo-token of the stub vocabulary.
///
/// Every 64th entry is punctuation so stub output exercises non-word handling.
pub fn stub_token(index: usize) -> String {
    let index = index % STUB_VOCAB_SIZE;
    if index % 64 == 63 {
        return STUB_PUNCTUATION[(index / 64) % STUB_PUNCTUATION.len()].to_string();
    }
    let mut word = String::new();
    let mut n = index;
    for _ in 0..3 {
        word.push_str(SYLLABLES[n % 16]);
        n /= 16;
    }
    word
}

/// Word entries of the stub vocabulary, in index order.
pub fn stub_words() -> impl Iterator<Item = String> {
    (0..STUB_VOCAB_SIZE).filter(|i| i % 64 != 63).map(stub_token)
}

/// Deterministic offline backend: the same seed and prompt always yield the
/// same ranking, and a deeper request extends a shallower one.
#[derive(Clone, Debug)]
pub struct StubBackend {
    seed: u64,
}

impl StubBackend {
    pub fn new(seed: u64) -> Self {
        StubBackend { seed }
    }
}

impl FillMaskBackend for StubBackend {
    fn fill_mask(&self, request: &ProbeRequest<'_>) -> Result<BackendResponse> {
        let mut hasher = Sha256::new();
        hasher.update(self.seed.to_le_bytes());
        hasher.update(request.text.as_bytes());
        let mut rng = ChaCha8Rng::from_seed(hasher.finalize().into());

        let depth = request.top_k.min(STUB_VOCAB_SIZE);
        let mut seen = BTreeSet::new();
        let mut tokens = Vec::with_capacity(depth);
        let mut score = 0.5 * rng.gen::<f64>() + 0.1;
        while tokens.len() < depth {
            let idx = rng.gen_range(0..STUB_VOCAB_SIZE);
            if !seen.insert(idx) {
                continue;
            }
            tokens.push(TokenScore {
                token: stub_token(idx),
                score: Some(score),
            });
            score *= 0.5 + 0.5 * rng.gen::<f64>();
        }
        Ok(BackendResponse {
            tokens,
            fetched_at: Some(0),
        })
    }
}

/// Serves completions recorded in an existing completion store.
#[derive(Debug, Default)]
pub struct ReplayBackend {
    records: HashMap<(String, String), StoreRecord>,
}

impl ReplayBackend {
    pub fn from_store_file(path: impl AsRef<Path>) -> Result<Self> {
        let store = CompletionStore::open_read_only(path)?;
        Ok(ReplayBackend::from_store(&store))
    }

    pub fn from_store(store: &CompletionStore) -> Self {
        let inner = store.inner.lock().unwrap_or_else(|e| e.into_inner());
        ReplayBackend {
            records: inner.records.clone(),
        }
    }
}

impl FillMaskBackend for ReplayBackend {
    fn fill_mask(&self, request: &ProbeRequest<'_>) -> Result<BackendResponse> {
        let key = (request.model_id.to_string(), request.template_id.to_string());
        let rec = self.records.get(&key).ok_or_else(|| ProbeError::ReplayMiss {
            model_id: request.model_id.to_string(),
            template_id: request.template_id.to_string(),
        })?;
        Ok(BackendResponse {
            tokens: rec
                .completions
                .iter()
                .take(request.top_k)
                .map(|c| TokenScore {
                    token: c.surface.clone(),
                    score: c.score,
                })
                .collect(),
            fetched_at: Some(rec.fetched_at),
        })
    }
}

/// Fill-mask client for the JSON wire contract:
/// `POST {text, top_k}` answered by `[{token, score}, ...]` in rank order.
pub struct HttpBackend {
    url: String,
    api_key: Option<String>,
    retry: RetryPolicy,
    agent: ureq::Agent,
}

impl fmt::Debug for HttpBackend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HttpBackend")
            .field("url", &self.url)
            .field("api_key", &self.api_key.as_ref().map(|_| "<redacted>"))
            .field("retry", &self.retry)
            .finish()
    }
}

impl HttpBackend {
    pub fn new(url: impl Into<String>, api_key: Option<String>, retry: RetryPolicy) -> Self {
        HttpBackend {
            url: url.into(),
            api_key,
            retry,
            agent: net::http_agent(),
        }
    }
}

/// Decodes the fill-mask response body.
pub fn parse_fill_mask_response(body: &Value) -> Result<Vec<TokenScore>> {
    let items = body
        .as_array()
        .ok_or_else(|| ProbeError::MalformedBackendResponse("expected a JSON array".into()))?;
    items
        .iter()
        .map(|item| {
            let token = item
                .get("token")
                .and_then(Value::as_str)
                .ok_or_else(|| ProbeError::MalformedBackendResponse(format!("missing token in {item}")))?;
            let score = match item.get("score") {
                None | Some(Value::Null) => None,
                Some(v) => Some(
                    v.as_f64()
                        .ok_or_else(|| ProbeError::MalformedBackendResponse(format!("non-numeric score in {item}")))?,
                ),
            };
            Ok(TokenScore {
                token: token.to_string(),
                score,
            })
        })
        .collect()
}

impl FillMaskBackend for HttpBackend {
    fn fill_mask(&self, request: &ProbeRequest<'_>) -> Result<BackendResponse> {
        let body = json!({ "text": request.text, "top_k": request.top_k });
        let reply = self
            .retry
            .run(|_| net::post_json(&self.agent, &self.url, self.api_key.as_deref(), &body))
            .map_err(|e| match e {
                RetryError::Exhausted { attempts, last } => ProbeError::BackendUnavailable { attempts, reason: last },
                RetryError::Fatal(reason) => ProbeError::BackendUnavailable { attempts: 1, reason },
            })?;
        Ok(BackendResponse {
            tokens: parse_fill_mask_response(&reply)?,
            fetched_at: None,
        })
    }
}

/// Builds the backend named by a model's endpoint. `api_key` is only used for
/// HTTP endpoints.
pub fn backend_for(spec: &ModelSpec, api_key: Option<String>, retry: RetryPolicy) -> Result<Box<dyn FillMaskBackend>> {
    Ok(match &spec.endpoint {
        Endpoint::Http(url) => Box::new(HttpBackend::new(url.clone(), api_key, retry)),
        Endpoint::Replay(path) => Box::new(ReplayBackend::from_store_file(path)?),
        Endpoint::Stub(seed) => Box::new(StubBackend::new(*seed)),
    })
}

fn now_unix() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Queries the backend without touching any store.
pub fn query_backend(
    backend: &dyn FillMaskBackend,
    spec: &ModelSpec,
    template: &Template,
    k: usize,
) -> Result<StoreRecord> {
    if k == 0 {
        return Err(ProbeError::InvalidK);
    }
    let text = render_prompt(template, &spec.mask_token);
    let response = backend.fill_mask(&ProbeRequest {
        model_id: &spec.model_id,
        template_id: &template.template_id,
        text: &text,
        top_k: k,
    })?;
    let mut completions = Vec::with_capacity(k);
    // ranks follow backend order; ties are never re-sorted
    for (i, ts) in response.tokens.into_iter().take(k).enumerate() {
        if let Some(s) = ts.score {
            if !(0.0..=1.0).contains(&s) {
                return Err(ProbeError::MalformedBackendResponse(format!(
                    "score {s} for {:?} outside [0,1]",
                    ts.token
                )));
            }
        }
        completions.push(Completion {
            rank: i as u32 + 1,
            surface: ts.token,
            score: ts.score,
        });
    }
    Ok(StoreRecord {
        model_id: spec.model_id.clone(),
        template_id: template.template_id.clone(),
        k,
        truncated: completions.len() < k,
        completions,
        fetched_at: response.fetched_at.unwrap_or_else(now_unix),
    })
}

/// Fetches the top-k completions for `template` and appends them to `store`.
pub fn fetch_completions(
    backend: &dyn FillMaskBackend,
    spec: &ModelSpec,
    template: &Template,
    k: usize,
    store: &CompletionStore,
) -> Result<CompletionSet> {
    let record = query_backend(backend, spec, template, k)?;
    let set = record.to_set();
    store.append(record)?;
    Ok(set)
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CampaignSummary {
    pub model_id: String,
    pub k: usize,
    pub fetched: usize,
    pub cached: usize,
    /// `(template_id, error)` for every template that could not be fetched.
    pub failed: Vec<(String, String)>,
}

impl CampaignSummary {
    pub fn total(&self) -> usize {
        self.fetched + self.cached + self.failed.len()
    }
}

/// Ensures `store` holds a set of depth `max(k_values)` for every template.
///
/// Requests run on up to `parallelism` threads; records are appended in
/// template order so the store's layout does not depend on scheduling.
pub fn run_probe_campaign(
    backend: &dyn FillMaskBackend,
    spec: &ModelSpec,
    templates: &[Template],
    k_values: &BTreeSet<usize>,
    store: &CompletionStore,
    parallelism: usize,
) -> Result<CampaignSummary> {
    if templates.is_empty() {
        return Err(ProbeError::EmptyCampaign);
    }
    let k = *k_values.iter().next_back().ok_or(ProbeError::InvalidK)?;
    if k == 0 {
        return Err(ProbeError::InvalidK);
    }
    let mut summary = CampaignSummary {
        model_id: spec.model_id.clone(),
        k,
        ..Default::default()
    };

    let pending: Vec<&Template> = templates
        .iter()
        .filter(|t| {
            let hit = store.satisfies(&spec.model_id, &t.template_id, k);
            if hit {
                summary.cached += 1;
            }
            !hit
        })
        .collect();

    let workers = parallelism.max(1);
    for chunk in pending.chunks(workers * 8) {
        let results: Vec<Mutex<Option<Result<StoreRecord>>>> = chunk.iter().map(|_| Mutex::new(None)).collect();
        let next = AtomicUsize::new(0);
        std::thread::scope(|scope| {
            for _ in 0..workers.min(chunk.len()) {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    let Some(t) = chunk.get(i) else { break };
                    let r = query_backend(backend, spec, t, k);
                    *results[i].lock().unwrap_or_else(|e| e.into_inner()) = Some(r);
                });
            }
        });
        for (t, slot) in chunk.iter().zip(results) {
            match slot.into_inner().unwrap_or_else(|e| e.into_inner()) {
                Some(Ok(record)) => {
                    store.append(record)?;
                    summary.fetched += 1;
                }
                Some(Err(e)) => {
                    tracing::warn!(model = %spec.model_id, template = %t.template_id, error = %e, "probe failed");
                    summary.failed.push((t.template_id.clone(), e.to_string()));
                }
                None => unreachable!("every chunk slot is filled by a worker"),
            }
        }
    }

    if summary.failed.len() == templates.len() {
        return Err(ProbeError::CampaignFailed {
            model_id: spec.model_id.clone(),
            failed: summary.failed.len(),
        });
    }
    Ok(summary)
}

type RecordMap = HashMap<(String, String), StoreRecord>;

/// One line of the completion store.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StoreRecord {
    pub model_id: String,
    pub template_id: String,
    pub k: usize,
    pub truncated: bool,
    pub completions: Vec<Completion>,
    pub fetched_at: u64,
}

#[derive(Serialize, Deserialize)]
struct StoreLine {
    #[serde(flatten)]
    record: StoreRecord,
    checksum: String,
}

impl StoreRecord {
    pub fn to_set(&self) -> CompletionSet {
        CompletionSet {
            template_id: self.template_id.clone(),
            model_id: self.model_id.clone(),
            k_requested: self.k,
            completions: self.completions.clone(),
            truncated: self.truncated,
        }
    }

    fn checksum(&self) -> String {
        let payload = serde_json::to_vec(self).expect("store records always serialize");
        hex::encode(Sha256::digest(payload))
    }

    /// The serialized line, newline included.
    pub fn to_line(&self) -> String {
        let line = StoreLine {
            record: self.clone(),
            checksum: self.checksum(),
        };
        let mut s = serde_json::to_string(&line).expect("store records always serialize");
        s.push('\n');
        s
    }

    fn parse_line(line: &str) -> Result<StoreRecord, String> {
        let parsed: StoreLine = serde_json::from_str(line).map_err(|e| e.to_string())?;
        if parsed.record.checksum() != parsed.checksum {
            return Err("checksum mismatch".into());
        }
        parsed.record.to_set().validate()?;
        Ok(parsed.record)
    }

    /// Whether this record answers a request at depth `k` without refetching.
    fn satisfies(&self, k: usize) -> bool {
        self.completions.len() >= k || (self.truncated && self.k >= k)
    }
}

struct StoreInner {
    records: HashMap<(String, String), StoreRecord>,
    writer: Option<File>,
}

/// Append-only line-delimited record of every probe result, keyed by
/// `(model_id, template_id)`.
///
/// Writers hold an exclusive lock on the file. Readers take no lock and ignore
/// a trailing line that has no newline yet, so they only see committed records.
pub struct CompletionStore {
    path: Option<PathBuf>,
    inner: Mutex<StoreInner>,
}

impl fmt::Debug for CompletionStore {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CompletionStore")
            .field("path", &self.path)
            .field("records", &self.len())
            .finish()
    }
}

impl CompletionStore {
    pub fn in_memory() -> Self {
        CompletionStore {
            path: None,
            inner: Mutex::new(StoreInner {
                records: HashMap::new(),
                writer: None,
            }),
        }
    }

    /// Opens (creating if needed) a store for appending.
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let io_err = |source| ProbeError::Io {
            path: path.display().to_string(),
            source,
        };
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(io_err)?;
        }
        let file = OpenOptions::new()
            .create(true)
            .read(true)
            .append(true)
            .open(path)
            .map_err(io_err)?;
        match file.try_lock() {
            Ok(()) => {}
            Err(std::fs::TryLockError::WouldBlock) => return Err(ProbeError::StoreLocked(path.display().to_string())),
            Err(std::fs::TryLockError::Error(e)) => return Err(io_err(e)),
        }
        let text = std::fs::read_to_string(path).map_err(io_err)?;
        let (records, committed) = Self::parse(path, &text)?;
        if committed < text.len() {
            // an interrupted append left half a line that was never committed
            file.set_len(committed as u64).map_err(io_err)?;
        }
        Ok(CompletionStore {
            path: Some(path.to_path_buf()),
            inner: Mutex::new(StoreInner {
                records,
                writer: Some(file),
            }),
        })
    }

    /// Opens an existing store for reading only. A missing file reads as empty.
    pub fn open_read_only(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = match std::fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => String::new(),
            Err(source) => {
                return Err(ProbeError::Io {
                    path: path.display().to_string(),
                    source,
                })
            }
        };
        let (records, _) = Self::parse(path, &text)?;
        Ok(CompletionStore {
            path: Some(path.to_path_buf()),
            inner: Mutex::new(StoreInner { records, writer: None }),
        })
    }

    /// Returns the records and the byte length of the committed prefix.
    fn parse(path: &Path, text: &str) -> Result<(RecordMap, usize)> {
        let mut records = RecordMap::new();
        let mut committed = 0;
        for (idx, raw) in text.split_inclusive('\n').enumerate() {
            let Some(line) = raw.strip_suffix('\n') else {
                break;
            };
            committed += raw.len();
            if line.trim().is_empty() {
                continue;
            }
            let rec = StoreRecord::parse_line(line).map_err(|reason| ProbeError::CorruptRecord {
                path: path.display().to_string(),
                line: idx + 1,
                reason,
            })?;
            let key = (rec.model_id.clone(), rec.template_id.clone());
            match records.get(&key) {
                Some(old) if old.completions.len() >= rec.completions.len() => {}
                _ => {
                    records.insert(key, rec);
                }
            }
        }
        Ok((records, committed))
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn len(&self) -> usize {
        self.inner.lock().unwrap_or_else(|e| e.into_inner()).records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Appends a record unless the store already holds one for the same key at
    /// least as deep. Returns whether a line was written.
    pub fn append(&self, record: StoreRecord) -> Result<bool> {
        record
            .to_set()
            .validate()
            .map_err(ProbeError::MalformedBackendResponse)?;
        let mut inner = self.inner.lock().unwrap_or_else(|e| e.into_inner());
        let key = (record.model_id.clone(), record.template_id.clone());
        if let Some(old) = inner.records.get(&key) {
            if old.completions.len() >= record.completions.len() {
                return Ok(false);
            }
        }
        if let Some(file) = inner.writer.as_mut() {
            let line = record.to_line();
            file.write_all(line.as_bytes())
                .and_then(|()| file.flush())
                .map_err(|source| ProbeError::Io {
                    path: self.path.as_ref().map(|p| p.display().to_string()).unwrap_or_default(),
                    source,
                })?;
        } else if let Some(path) = &self.path {
            return Err(ProbeError::Io {
                path: path.display().to_string(),
                source: std::io::Error::new(std::io::ErrorKind::PermissionDenied, "store opened read-only"),
            });
        }
        inner.records.insert(key, record);
        Ok(true)
    }

    fn satisfies(&self, model_id: &str, template_id: &str, k: usize) -> bool {
        let inner = self.inner.lock().unwrap_or_else(|e| e.into_inner());
        inner
            .records
            .get(&(model_id.to_string(), template_id.to_string()))
            .is_some_and(|r| r.satisfies(k))
    }

    /// The full stored record for a key.
    pub fn record(&self, model_id: &str, template_id: &str) -> Option<StoreRecord> {
        let inner = self.inner.lock().unwrap_or_else(|e| e.into_inner());
        inner
            .records
            .get(&(model_id.to_string(), template_id.to_string()))
            .cloned()
    }

    /// Every stored record, ordered by key.
    pub fn records(&self) -> Vec<StoreRecord> {
        let inner = self.inner.lock().unwrap_or_else(|e| e.into_inner());
        let mut all: Vec<_> = inner.records.values().cloned().collect();
        all.sort_by(|a, b| (&a.model_id, &a.template_id).cmp(&(&b.model_id, &b.template_id)));
        all
    }
}

/// The rank 1..=k prefix of the stored set, or `None` when the key is absent
/// or stored shallower than `k`.
pub fn store_lookup(store: &CompletionStore, model_id: &str, template_id: &str, k: usize) -> Option<CompletionSet> {
    store.record(model_id, template_id)?.to_set().prefix(k)
}
