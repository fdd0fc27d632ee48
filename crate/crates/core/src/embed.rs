//! Text embedding providers and the cosine relevance score used to rank
//! candidate entities against a question.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};
use std::path::Path;
use std::sync::{Arc, RwLock};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::kg::EntityId;

/// Default embedding width at desk scale.
pub const DEFAULT_DIMENSION: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct Embedding(Vec<f64>);

impl Embedding {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(CoreError::Embedding("embedding contains non-finite values".into()));
        }
        Ok(Self(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn scaled(&self, factor: f64) -> Embedding {
        Embedding(self.0.iter().map(|v| v * factor).collect())
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

/// Maps text to a fixed-width vector. `embed` must be a pure function of the
/// text for a given provider instance.
pub trait EmbeddingProvider: Send + Sync {
    fn dimension(&self) -> usize;

    fn embed(&self, text: &str) -> Result<Embedding>;

    fn embed_many(&self, texts: &[&str]) -> Result<Vec<Embedding>> {
        texts.iter().map(|t| self.embed(t)).collect()
    }
}

fn require_text(text: &str) -> Result<&str> {
    let t = text.trim();
    if t.is_empty() {
        return Err(CoreError::Embedding("cannot embed empty text".into()));
    }
    Ok(t)
}

fn fnv1a(bytes: &[u8], basis: u64) -> u64 {
    let mut h = basis;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

const FNV_BASIS: u64 = 0xcbf2_9ce4_8422_2325;

/// Whitespace tokens, lowercased, with leading/trailing punctuation removed.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|raw| {
            let lower = raw.to_lowercase();
            let trimmed = lower.trim_matches(|c: char| !c.is_alphanumeric() && c != '_');
            if trimmed.is_empty() {
                lower
            } else {
                trimmed.to_string()
            }
        })
        .collect()
}

/// Random-indexing embedder: every token owns a dense ±1 vector whose signs
/// come from a SplitMix64 stream seeded by the token's FNV-1a hash. A text is
/// the L2-normalized sum of its token vectors, so distinct tokens are nearly
/// orthogonal instead of colliding in a shared bucket.
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    dim: usize,
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl HashEmbedder {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(CoreError::Validation("embedding dimension must be positive".into()));
        }
        Ok(Self { dim })
    }

    /// Signs (±1) of `token`'s vector.
    pub fn token_signs(&self, token: &str) -> Vec<f64> {
        let mut state = fnv1a(token.as_bytes(), FNV_BASIS);
        let mut out = Vec::with_capacity(self.dim);
        while out.len() < self.dim {
            let bits = splitmix64(&mut state);
            for b in 0..64.min(self.dim - out.len()) {
                out.push(if bits >> b & 1 == 0 { 1.0 } else { -1.0 });
            }
        }
        out
    }
}

impl EmbeddingProvider for HashEmbedder {
    fn dimension(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Embedding> {
        let text = require_text(text)?;
        let mut v = vec![0.0; self.dim];
        for token in tokenize(text) {
            for (x, s) in v.iter_mut().zip(self.token_signs(&token)) {
                *x += s;
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            v.iter_mut().for_each(|x| *x /= norm);
        }
        Embedding::new(v)
    }
}

/// Embeddings read from a `label<TAB>v1,v2,...` file; unknown labels fall back
/// to the hash embedder with a warning.
#[derive(Debug, Clone)]
pub struct TableEmbedder {
    dim: usize,
    table: HashMap<String, Embedding>,
    fallback: HashEmbedder,
}

impl TableEmbedder {
    pub fn parse(text: &str) -> Result<Self> {
        let mut table = HashMap::new();
        let mut dim = None;
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (label, values) = line.split_once('\t').ok_or_else(|| CoreError::Parse {
                line: line_no,
                reason: "expected `label<TAB>v1,v2,...`".into(),
            })?;
            let values = values
                .split(',')
                .map(|v| v.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| CoreError::Parse {
                    line: line_no,
                    reason: format!("bad number: {e}"),
                })?;
            match dim {
                None => dim = Some(values.len()),
                Some(d) if d != values.len() => {
                    return Err(CoreError::Parse {
                        line: line_no,
                        reason: format!("row has {} values, expected {d}", values.len()),
                    })
                }
                _ => {}
            }
            let emb = Embedding::new(values).map_err(|e| CoreError::Parse {
                line: line_no,
                reason: e.to_string(),
            })?;
            table.insert(label.trim().to_string(), emb);
        }
        let dim = dim.ok_or_else(|| CoreError::Embedding("embedding table is empty".into()))?;
        Ok(Self {
            dim,
            table,
            fallback: HashEmbedder::new(dim)?,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }
}

impl EmbeddingProvider for TableEmbedder {
    fn dimension(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Embedding> {
        let key = require_text(text)?;
        match self.table.get(key) {
            Some(e) => Ok(e.clone()),
            None => {
                log::warn!("no table embedding for `{key}`; using hash fallback");
                self.fallback.embed(key)
            }
        }
    }
}

#[derive(Debug, Serialize)]
struct EmbedRequest<'a> {
    texts: &'a [&'a str],
}

#[derive(Debug, Deserialize)]
struct EmbedResponse {
    vectors: Vec<Vec<f64>>,
}

/// Remote embedding service speaking `{"texts": [...]}` → `{"vectors": [[...]]}`.
/// Results are cached per text.
pub struct HttpEmbedder {
    url: String,
    token: Option<String>,
    dim: usize,
    retries: usize,
    agent: ureq::Agent,
    cache: RwLock<HashMap<String, Embedding>>,
}

pub const EMBED_URL_ENV: &str = "KGPROMPT_EMBED_URL";
pub const EMBED_TOKEN_ENV: &str = "KGPROMPT_EMBED_TOKEN";

impl HttpEmbedder {
    pub fn new(url: impl Into<String>, token: Option<String>, dim: usize, retries: usize, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .build()
            .into();
        Self {
            url: url.into(),
            token,
            dim,
            retries,
            agent,
            cache: RwLock::new(HashMap::new()),
        }
    }

    /// Reads the endpoint and optional bearer token from the environment.
    pub fn from_env(dim: usize) -> Result<Self> {
        let url = std::env::var(EMBED_URL_ENV)
            .map_err(|_| CoreError::Config(format!("{EMBED_URL_ENV} is not set")))?;
        let token = std::env::var(EMBED_TOKEN_ENV).ok();
        Ok(Self::new(url, token, dim, 2, Duration::from_secs(30)))
    }

    fn request(&self, texts: &[&str]) -> std::result::Result<Vec<Vec<f64>>, String> {
        let mut req = self.agent.post(&self.url);
        if let Some(t) = &self.token {
            req = req.header("Authorization", &format!("Bearer {t}"));
        }
        let resp = req
            .send_json(&EmbedRequest { texts })
            .map_err(|e| format!("transport: {e}"))?;
        let body: EmbedResponse = resp
            .into_body()
            .read_json()
            .map_err(|e| format!("malformed response: {e}"))?;
        if body.vectors.len() != texts.len() {
            return Err(format!(
                "malformed response: {} vectors for {} texts",
                body.vectors.len(),
                texts.len()
            ));
        }
        if let Some(v) = body.vectors.iter().find(|v| v.len() != self.dim) {
            return Err(format!("malformed response: vector of width {}, expected {}", v.len(), self.dim));
        }
        Ok(body.vectors)
    }
}

impl EmbeddingProvider for HttpEmbedder {
    fn dimension(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Embedding> {
        let key = require_text(text)?;
        if let Some(e) = self.cache.read().expect("cache lock").get(key) {
            return Ok(e.clone());
        }
        let attempts = self.retries + 1;
        let mut last = String::new();
        for attempt in 1..=attempts {
            match self.request(&[key]) {
                Ok(mut vectors) => {
                    let emb = Embedding::new(vectors.remove(0))?;
                    self.cache
                        .write()
                        .expect("cache lock")
                        .insert(key.to_string(), emb.clone());
                    return Ok(emb);
                }
                Err(e) => {
                    log::warn!("embedding request attempt {attempt}/{attempts} failed: {e}");
                    last = e;
                }
            }
        }
        Err(CoreError::EmbeddingService { attempts, reason: last })
    }
}

/// Memoizes another provider. Concurrent inserts of the same key are benign
/// because the wrapped provider is pure.
pub struct CachedProvider {
    inner: Arc<dyn EmbeddingProvider>,
    cache: RwLock<HashMap<String, Embedding>>,
}

impl CachedProvider {
    pub fn new(inner: Arc<dyn EmbeddingProvider>) -> Self {
        Self {
            inner,
            cache: RwLock::new(HashMap::new()),
        }
    }
}

impl EmbeddingProvider for CachedProvider {
    fn dimension(&self) -> usize {
        self.inner.dimension()
    }

    fn embed(&self, text: &str) -> Result<Embedding> {
        if let Some(e) = self.cache.read().expect("cache lock").get(text) {
            return Ok(e.clone());
        }
        let e = self.inner.embed(text)?;
        self.cache
            .write()
            .expect("cache lock")
            .insert(text.to_string(), e.clone());
        Ok(e)
    }
}

/// Provider selection as it appears in configuration files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProviderConfig {
    DeterministicHash { dimension: usize },
    TableFile { path: String },
    HttpService { dimension: usize },
}

impl Default for ProviderConfig {
    fn default() -> Self {
        ProviderConfig::DeterministicHash {
            dimension: DEFAULT_DIMENSION,
        }
    }
}

impl ProviderConfig {
    pub fn build(&self) -> Result<Arc<dyn EmbeddingProvider>> {
        let inner: Arc<dyn EmbeddingProvider> = match self {
            ProviderConfig::DeterministicHash { dimension } => Arc::new(HashEmbedder::new(*dimension)?),
            ProviderConfig::TableFile { path } => Arc::new(TableEmbedder::load(path)?),
            ProviderConfig::HttpService { dimension } => return Ok(Arc::new(HttpEmbedder::from_env(*dimension)?)),
        };
        Ok(Arc::new(CachedProvider::new(inner)))
    }
}

/// Cosine score with a flag for zero-norm inputs, which score 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Relevance {
    pub score: f64,
    pub degenerate: bool,
}

pub fn relevance(q: &Embedding, e: &Embedding) -> Result<Relevance> {
    if q.dim() != e.dim() {
        return Err(CoreError::DimensionMismatch(q.dim(), e.dim()));
    }
    let (nq, ne) = (q.norm(), e.norm());
    if nq == 0.0 || ne == 0.0 {
        return Ok(Relevance {
            score: 0.0,
            degenerate: true,
        });
    }
    let dot: f64 = q.as_slice().iter().zip(e.as_slice()).map(|(a, b)| a * b).sum();
    Ok(Relevance {
        score: (dot / (nq * ne)).clamp(-1.0, 1.0),
        degenerate: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Ranked {
    id: EntityId,
    score: f64,
}

impl Eq for Ranked {}

impl Ord for Ranked {
    /// Greater = better: higher score, then lower id.
    fn cmp(&self, other: &Self) -> Ordering {
        self.score
            .total_cmp(&other.score)
            .then_with(|| other.id.cmp(&self.id))
    }
}

impl PartialOrd for Ranked {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// The `k` candidates most similar to `q`, best first; ties go to the lower id.
pub fn top_k(q: &Embedding, candidates: &[(EntityId, Embedding)], k: usize) -> Result<Vec<(EntityId, f64)>> {
    if k == 0 {
        return Err(CoreError::Validation("top_k requires k >= 1".into()));
    }
    // min-heap of the best k seen so far
    let mut heap: BinaryHeap<std::cmp::Reverse<Ranked>> = BinaryHeap::with_capacity(k + 1);
    for (id, e) in candidates {
        let r = Ranked {
            id: *id,
            score: relevance(q, e)?.score,
        };
        if heap.len() < k {
            heap.push(std::cmp::Reverse(r));
        } else if let Some(worst) = heap.peek() {
            if r > worst.0 {
                heap.pop();
                heap.push(std::cmp::Reverse(r));
            }
        }
    }
    let mut out: Vec<Ranked> = heap.into_iter().map(|r| r.0).collect();
    out.sort_by(|a, b| b.cmp(a));
    Ok(out.into_iter().map(|r| (r.id, r.score)).collect())
}
