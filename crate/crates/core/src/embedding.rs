//! The semantic embedding function: text to a point in a `D`-dimensional space.
//!
//! Two backends are provided. The hashed backend derives a pseudo-random unit
//! vector per token from FNV-1a and SplitMix64 and needs no external data. The
//! table backend reads vectors exported offline from a sentence encoder.
//! Multi-token texts are mean-pooled over their tokens; the table backend first
//! tries a whole-text row keyed by the space-joined token sequence.

use std::collections::HashMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::rng::SplitMix64;
use crate::textproc::tokenize;

/// A point in the latent space. All components are finite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SemanticVector(Vec<f64>);

impl SemanticVector {
    pub fn new(components: Vec<f64>) -> Option<Self> {
        components
            .iter()
            .all(|x| x.is_finite())
            .then_some(Self(components))
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn components(&self) -> &[f64] {
        &self.0
    }

    pub fn into_components(self) -> Vec<f64> {
        self.0
    }

    pub fn dot(&self, other: &Self) -> f64 {
        debug_assert_eq!(self.dim(), other.dim());
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    /// The designated "empty text" result; cosine against it is undefined.
    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&x| x == 0.0)
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self(self.0.iter().map(|x| x * factor).collect())
    }

    /// Arithmetic mean, summing in iteration order and dividing once at the end.
    pub(crate) fn mean<'a, I>(dim: usize, vectors: I) -> Self
    where
        I: IntoIterator<Item = &'a SemanticVector>,
    {
        let mut acc = vec![0.0; dim];
        let mut count = 0usize;
        for v in vectors {
            for (a, x) in acc.iter_mut().zip(&v.0) {
                *a += x;
            }
            count += 1;
        }
        if count > 0 {
            let n = count as f64;
            for a in &mut acc {
                *a /= n;
            }
        }
        Self(acc)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbedderBackend {
    Hashed,
    Table,
}

impl fmt::Display for EmbedderBackend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EmbedderBackend::Hashed => "hashed",
            EmbedderBackend::Table => "table",
        })
    }
}

impl std::str::FromStr for EmbedderBackend {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hashed" => Ok(Self::Hashed),
            "table" => Ok(Self::Table),
            other => Err(Error::Config(format!("unknown embedder backend {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OovPolicy {
    FallbackHashed,
    Error,
}

impl fmt::Display for OovPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OovPolicy::FallbackHashed => "fallback_hashed",
            OovPolicy::Error => "error",
        })
    }
}

impl std::str::FromStr for OovPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fallback_hashed" => Ok(Self::FallbackHashed),
            "error" => Ok(Self::Error),
            other => Err(Error::Config(format!("unknown oov policy {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedderConfig {
    pub dimension: usize,
    pub seed: u64,
    pub backend: EmbedderBackend,
    pub table_path: Option<PathBuf>,
    pub oov_policy: OovPolicy,
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        Self {
            dimension: 256,
            seed: 1,
            backend: EmbedderBackend::Hashed,
            table_path: None,
            oov_policy: OovPolicy::FallbackHashed,
        }
    }
}

impl EmbedderConfig {
    pub fn hashed(dimension: usize, seed: u64) -> Self {
        Self {
            dimension,
            seed,
            ..Self::default()
        }
    }
}

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Unit vector for `token`: FNV-1a of the UTF-8 bytes XOR `seed` seeds a
/// SplitMix64 stream of `dim` draws in `[-1, 1)`, then the result is normalized.
pub fn hashed_token_vector(token: &str, seed: u64, dim: usize) -> SemanticVector {
    let mut rng = SplitMix64::new(fnv1a64(token.as_bytes()) ^ seed);
    let mut v: Vec<f64> = (0..dim).map(|_| rng.next_signed()).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    // A zero draw vector has probability ~2^-53D; redraw deterministically if it ever happens.
    if norm == 0.0 {
        return hashed_token_vector(token, seed.wrapping_add(1), dim);
    }
    for x in &mut v {
        *x /= norm;
    }
    SemanticVector(v)
}

/// Vectors exported offline, keyed by token or by whole space-joined text.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    rows: HashMap<String, SemanticVector>,
    order: Vec<String>,
}

impl EmbeddingTable {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn get(&self, key: &str) -> Option<&SemanticVector> {
        self.rows.get(key)
    }

    /// Keys in file order.
    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.order.iter().map(String::as_str)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    /// Parse the table format: line 1 `D=<int>`, then `<key>\t<f1> ... <fD>`;
    /// `#` lines and blank lines are ignored.
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let (_, header) = lines
            .next()
            .ok_or_else(|| Error::parse(origin, 1, "missing `D=<int>` header"))?;
        let dim = header
            .trim_end_matches('\r')
            .strip_prefix("D=")
            .and_then(|d| d.parse::<usize>().ok())
            .ok_or_else(|| Error::parse(origin, 1, format!("malformed header {header:?}")))?;
        if dim < 2 {
            return Err(Error::parse(origin, 1, format!("dimension {dim} < 2")));
        }

        let mut rows = HashMap::new();
        let mut order = Vec::new();
        for (lineno, raw) in lines {
            let line = raw.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, values) = line
                .split_once('\t')
                .ok_or_else(|| Error::parse(origin, lineno, "expected `<token>\\t<values>`"))?;
            if key.is_empty() {
                return Err(Error::parse(origin, lineno, "empty token"));
            }
            let mut comps = Vec::with_capacity(dim);
            for field in values.split_whitespace() {
                let x: f64 = field
                    .parse()
                    .map_err(|_| Error::parse(origin, lineno, format!("bad float {field:?}")))?;
                if !x.is_finite() {
                    return Err(Error::parse(
                        origin,
                        lineno,
                        format!("non-finite value {field:?}"),
                    ));
                }
                comps.push(x);
            }
            if comps.len() != dim {
                return Err(Error::parse(
                    origin,
                    lineno,
                    format!("row has {} values, header says D={dim}", comps.len()),
                ));
            }
            if rows.contains_key(key) {
                return Err(Error::parse(
                    origin,
                    lineno,
                    format!("duplicate token {key:?}"),
                ));
            }
            rows.insert(key.to_string(), SemanticVector(comps));
            order.push(key.to_string());
        }
        Ok(Self { dim, rows, order })
    }
}

/// An immutable embedding function. The only interior state is a counter of
/// out-of-vocabulary fallbacks.
#[derive(Debug)]
pub struct Embedder {
    config: EmbedderConfig,
    table: Option<EmbeddingTable>,
    fingerprint: String,
    oov_fallbacks: AtomicUsize,
}

impl Clone for Embedder {
    /// The clone starts with a fresh fallback counter.
    fn clone(&self) -> Self {
        Self {
            config: self.config.clone(),
            table: self.table.clone(),
            fingerprint: self.fingerprint.clone(),
            oov_fallbacks: AtomicUsize::new(0),
        }
    }
}

impl Embedder {
    /// Build from a config, loading the table when the backend needs one. For
    /// the table backend the dimension is taken from the table header.
    pub fn new(config: EmbedderConfig) -> Result<Self> {
        match config.backend {
            EmbedderBackend::Hashed => Self::with_table(config, None),
            EmbedderBackend::Table => {
                let path = config.table_path.clone().ok_or_else(|| {
                    Error::Config("table backend requires an embedding table path".into())
                })?;
                let table = EmbeddingTable::load(&path)?;
                Self::with_table(config, Some(table))
            }
        }
    }

    pub fn hashed(dimension: usize, seed: u64) -> Result<Self> {
        Self::new(EmbedderConfig::hashed(dimension, seed))
    }

    /// Build a table-backed embedder from an already-parsed table.
    pub fn with_table(mut config: EmbedderConfig, table: Option<EmbeddingTable>) -> Result<Self> {
        if let Some(t) = &table {
            config.backend = EmbedderBackend::Table;
            config.dimension = t.dim();
        }
        if config.backend == EmbedderBackend::Table && table.is_none() {
            return Err(Error::Config("table backend without a table".into()));
        }
        if config.dimension < 2 {
            return Err(Error::Config(format!(
                "embedding dimension must be >= 2, got {}",
                config.dimension
            )));
        }
        let fingerprint = fingerprint(&config, table.as_ref());
        Ok(Self {
            config,
            table,
            fingerprint,
            oov_fallbacks: AtomicUsize::new(0),
        })
    }

    pub fn config(&self) -> &EmbedderConfig {
        &self.config
    }

    pub fn dim(&self) -> usize {
        self.config.dimension
    }

    /// Hash of the config and (for the table backend) the table contents.
    /// The table path itself is not part of the fingerprint.
    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    /// Number of table misses served by the hashed fallback so far.
    pub fn oov_fallbacks(&self) -> usize {
        self.oov_fallbacks.load(Ordering::Relaxed)
    }

    pub fn embed_token(&self, token: &str) -> Result<SemanticVector> {
        debug_assert!(!token.is_empty());
        match &self.table {
            None => Ok(hashed_token_vector(token, self.config.seed, self.dim())),
            Some(table) => match table.get(token) {
                Some(v) => Ok(v.clone()),
                None => match self.config.oov_policy {
                    OovPolicy::Error => Err(Error::OovToken(token.to_string())),
                    OovPolicy::FallbackHashed => {
                        self.oov_fallbacks.fetch_add(1, Ordering::Relaxed);
                        Ok(hashed_token_vector(token, self.config.seed, self.dim()))
                    }
                },
            },
        }
    }

    /// Mean of the token embeddings of `tokenize(text)`. An empty tokenization
    /// gives the zero vector, which [`SemanticVector::is_zero`] flags.
    pub fn embed_text(&self, text: &str) -> Result<SemanticVector> {
        let tokens = tokenize(text);
        if tokens.is_empty() {
            return Ok(SemanticVector::zeros(self.dim()));
        }
        if let Some(table) = &self.table {
            if tokens.len() > 1 {
                if let Some(v) = table.get(&tokens.joined()) {
                    return Ok(v.clone());
                }
            }
        }
        let vectors = tokens
            .iter()
            .map(|t| self.embed_token(t))
            .collect::<Result<Vec<_>>>()?;
        Ok(SemanticVector::mean(self.dim(), &vectors))
    }
}

fn fingerprint(config: &EmbedderConfig, table: Option<&EmbeddingTable>) -> String {
    let mut h = Sha256::new();
    h.update(b"emocap-embedder/1\n");
    h.update(format!("backend={}\n", config.backend).as_bytes());
    h.update(format!("dim={}\n", config.dimension).as_bytes());
    h.update(format!("seed={}\n", config.seed).as_bytes());
    if let Some(t) = table {
        h.update(format!("oov={}\n", config.oov_policy).as_bytes());
        for key in &t.order {
            h.update(key.as_bytes());
            h.update(b"\t");
            for x in t.rows[key].components() {
                h.update(x.to_bits().to_le_bytes());
            }
            h.update(b"\n");
        }
    }
    hex::encode(&h.finalize()[..16])
}

/// Cosine similarity, `None` when either side has zero norm.
pub fn cosine(a: &[f64], b: &[f64]) -> Option<f64> {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        None
    } else {
        Some((dot / (na * nb)).clamp(-1.0, 1.0))
    }
}
