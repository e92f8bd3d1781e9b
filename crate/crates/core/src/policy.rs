//! Context-conditioned tabular bigram caption policy.
//!
//! Logits are indexed `[context][previous token][next token]`. Every caption is
//! framed as `BOS y_1 ... y_T EOS`; the probability of a caption is the product
//! of one softmax per step, including the final step that emits EOS.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::formats;
use crate::rng::SplitMix64;
use crate::textproc::TokenSequence;

pub const BOS: &str = "<bos>";
pub const EOS: &str = "<eos>";
pub const BOS_ID: usize = 0;
pub const EOS_ID: usize = 1;

/// Temperatures below this decode greedily.
pub const GREEDY_TEMPERATURE: f64 = 1e-6;

/// A validated context id for one policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct MultimodalContext(usize);

impl MultimodalContext {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    vocab: Vec<String>,
    index: HashMap<String, usize>,
    contexts: usize,
    logits: Vec<f64>,
}

/// Dense tensor with the same shape as the logits.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    vocab_size: usize,
    values: Vec<f64>,
}

impl Gradient {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn row(&self, context: usize, prev: usize) -> &[f64] {
        let v = self.vocab_size;
        let start = (context * v + prev) * v;
        &self.values[start..start + v]
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|x| x.is_finite())
    }

    pub fn add_scaled(&mut self, other: &Gradient, factor: f64) {
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += factor * b;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for a in &mut self.values {
            *a *= factor;
        }
    }
}

/// A sampled caption with per-step log-probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// Token ids without BOS/EOS.
    pub ids: Vec<usize>,
    /// Whether generation stopped by emitting EOS (rather than hitting `max_len`).
    pub terminated: bool,
    /// Log-probability of each realized step under the untempered policy.
    pub log_probs: Vec<f64>,
    /// Log-probability of each realized step under the sampling distribution.
    pub tempered_log_probs: Vec<f64>,
}

/// Numerically stable log-softmax of one row into `out`.
pub fn log_softmax_into(row: &[f64], out: &mut Vec<f64>) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
    out.clear();
    out.extend(row.iter().map(|x| x - lse));
}

pub fn softmax(row: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(row.len());
    log_softmax_into(row, &mut out);
    out.iter_mut().for_each(|x| *x = x.exp());
    out
}

fn log_prob_at(row: &[f64], next: usize) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
    row[next] - lse
}

/// `(prev, next)` pairs visited by a caption, including the EOS step when `terminated`.
pub fn transitions(ids: &[usize], terminated: bool) -> Vec<(usize, usize)> {
    let mut steps = Vec::with_capacity(ids.len() + 1);
    let mut prev = BOS_ID;
    for &id in ids {
        steps.push((prev, id));
        prev = id;
    }
    if terminated {
        steps.push((prev, EOS_ID));
    }
    steps
}

impl PolicyParams {
    /// Zero logits over `BOS`, `EOS` and `tokens` (duplicates removed, order kept).
    pub fn uniform<I, S>(tokens: I, contexts: usize) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut vocab = vec![BOS.to_string(), EOS.to_string()];
        let mut seen: BTreeSet<String> = vocab.iter().cloned().collect();
        for t in tokens {
            let t = t.into();
            if seen.insert(t.clone()) {
                vocab.push(t);
            }
        }
        let v = vocab.len();
        Self::from_parts(vocab, contexts, vec![0.0; contexts * v * v])
    }

    /// Zero logits over the sorted set of tokens found in `captions`.
    pub fn for_corpus<'a, I>(captions: I, contexts: usize) -> Result<Self>
    where
        I: IntoIterator<Item = &'a TokenSequence>,
    {
        let tokens: BTreeSet<&str> = captions.into_iter().flat_map(|c| c.iter()).collect();
        Self::uniform(tokens, contexts)
    }

    pub fn from_parts(vocab: Vec<String>, contexts: usize, logits: Vec<f64>) -> Result<Self> {
        let v = vocab.len();
        if v < 3 {
            return Err(Error::Config(format!("vocabulary size {v} < 3")));
        }
        if contexts < 1 {
            return Err(Error::Config("policy needs at least one context".into()));
        }
        if vocab[BOS_ID] != BOS || vocab[EOS_ID] != EOS {
            return Err(Error::Config(
                "vocabulary must start with <bos>, <eos>".into(),
            ));
        }
        if logits.len() != contexts * v * v {
            return Err(Error::Config(format!(
                "expected {} logits for C={contexts} V={v}, got {}",
                contexts * v * v,
                logits.len()
            )));
        }
        if logits.iter().any(|x| !x.is_finite()) {
            return Err(Error::Config("logits must be finite".into()));
        }
        let mut index = HashMap::with_capacity(v);
        for (i, t) in vocab.iter().enumerate() {
            if t.is_empty() || t.chars().any(char::is_whitespace) {
                return Err(Error::Config(format!("invalid vocabulary token {t:?}")));
            }
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::Config(format!("duplicate vocabulary token {t:?}")));
            }
        }
        Ok(Self {
            vocab,
            index,
            contexts,
            logits,
        })
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn contexts(&self) -> usize {
        self.contexts
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    pub fn logits_mut(&mut self) -> &mut [f64] {
        &mut self.logits
    }

    pub fn context(&self, id: usize) -> Result<MultimodalContext> {
        if id < self.contexts {
            Ok(MultimodalContext(id))
        } else {
            Err(Error::Config(format!(
                "context id {id} out of range (C={})",
                self.contexts
            )))
        }
    }

    fn row_start(&self, context: MultimodalContext, prev: usize) -> usize {
        let v = self.vocab.len();
        (context.0 * v + prev) * v
    }

    pub fn row(&self, context: MultimodalContext, prev: usize) -> &[f64] {
        let s = self.row_start(context, prev);
        &self.logits[s..s + self.vocab.len()]
    }

    pub fn row_mut(&mut self, context: MultimodalContext, prev: usize) -> &mut [f64] {
        let s = self.row_start(context, prev);
        let v = self.vocab.len();
        &mut self.logits[s..s + v]
    }

    pub fn zero_gradient(&self) -> Gradient {
        Gradient {
            vocab_size: self.vocab.len(),
            values: vec![0.0; self.logits.len()],
        }
    }

    /// Plain gradient step: `logits += step * grad`.
    pub fn apply(&mut self, grad: &Gradient, step: f64) {
        for (w, g) in self.logits.iter_mut().zip(&grad.values) {
            *w += step * g;
        }
    }

    pub fn token_id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    /// Map tokens to ids; reserved or unknown tokens are vocabulary errors.
    pub fn encode(&self, sequence: &TokenSequence) -> Result<Vec<usize>> {
        sequence
            .iter()
            .map(|t| match self.index.get(t) {
                Some(&i) if i != BOS_ID && i != EOS_ID => Ok(i),
                _ => Err(Error::Vocabulary(t.to_string())),
            })
            .collect()
    }

    /// Caption text for sampled ids; a sampled BOS contributes no text.
    pub fn decode(&self, ids: &[usize]) -> String {
        ids.iter()
            .filter(|&&i| i != BOS_ID)
            .map(|&i| self.vocab[i].as_str())
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn step_log_prob(&self, context: MultimodalContext, prev: usize, next: usize) -> f64 {
        log_prob_at(self.row(context, prev), next)
    }

    /// Sum of step log-probabilities over `transitions(ids, terminated)`.
    pub fn log_prob_ids(&self, context: MultimodalContext, ids: &[usize], terminated: bool) -> f64 {
        transitions(ids, terminated)
            .into_iter()
            .map(|(p, n)| self.step_log_prob(context, p, n))
            .sum()
    }

    /// `log P(sequence | context)` with implicit BOS/EOS framing.
    pub fn log_prob(&self, context: MultimodalContext, sequence: &TokenSequence) -> Result<f64> {
        let ids = self.encode(sequence)?;
        Ok(self.log_prob_ids(context, &ids, true))
    }

    /// Add `coeff * d log pi(next | prev, context) / d logits` into `grad`.
    pub fn accumulate_step_grad(
        &self,
        context: MultimodalContext,
        prev: usize,
        next: usize,
        coeff: f64,
        grad: &mut Gradient,
    ) {
        let start = self.row_start(context, prev);
        let v = self.vocab.len();
        let probs = softmax(self.row(context, prev));
        let g = &mut grad.values[start..start + v];
        for (k, (gk, pk)) in g.iter_mut().zip(&probs).enumerate() {
            let onehot = if k == next { 1.0 } else { 0.0 };
            *gk += coeff * (onehot - pk);
        }
    }

    pub fn accumulate_grad_ids(
        &self,
        context: MultimodalContext,
        ids: &[usize],
        terminated: bool,
        coeff: f64,
        grad: &mut Gradient,
    ) {
        for (p, n) in transitions(ids, terminated) {
            self.accumulate_step_grad(context, p, n, coeff, grad);
        }
    }

    /// Gradient of `log_prob` with respect to every logit: for each visited
    /// row, `onehot(next) - softmax(row)`; zero elsewhere.
    pub fn grad_log_prob(
        &self,
        context: MultimodalContext,
        sequence: &TokenSequence,
    ) -> Result<Gradient> {
        let ids = self.encode(sequence)?;
        let mut grad = self.zero_gradient();
        self.accumulate_grad_ids(context, &ids, true, 1.0, &mut grad);
        Ok(grad)
    }

    /// Ancestral sampling until EOS or `max_len` tokens. Temperatures below
    /// [`GREEDY_TEMPERATURE`] decode greedily (lowest index wins ties).
    pub fn sample_with(
        &self,
        context: MultimodalContext,
        temperature: f64,
        max_len: usize,
        rng: &mut SplitMix64,
    ) -> Sample {
        assert!(temperature > 0.0, "temperature must be positive");
        assert!(max_len >= 1, "max_len must be >= 1");
        let greedy = temperature < GREEDY_TEMPERATURE;
        let mut out = Sample {
            ids: Vec::new(),
            terminated: false,
            log_probs: Vec::new(),
            tempered_log_probs: Vec::new(),
        };
        let mut prev = BOS_ID;
        let mut tempered = Vec::with_capacity(self.vocab.len());
        let mut scaled = Vec::with_capacity(self.vocab.len());
        loop {
            let row = self.row(context, prev);
            let next = if greedy {
                let mut best = 0;
                for (k, &x) in row.iter().enumerate() {
                    if x > row[best] {
                        best = k;
                    }
                }
                out.tempered_log_probs.push(0.0);
                best
            } else {
                scaled.clear();
                scaled.extend(row.iter().map(|x| x / temperature));
                log_softmax_into(&scaled, &mut tempered);
                let u = rng.next_f64();
                let mut cum = 0.0;
                let mut choice = None;
                for (k, lp) in tempered.iter().enumerate() {
                    cum += lp.exp();
                    if u < cum {
                        choice = Some(k);
                        break;
                    }
                }
                // rounding can leave cum slightly below u; take the last live token
                let k = choice.unwrap_or_else(|| {
                    tempered
                        .iter()
                        .rposition(|lp| lp.exp() > 0.0)
                        .expect("softmax has mass")
                });
                out.tempered_log_probs.push(tempered[k]);
                k
            };
            out.log_probs.push(log_prob_at(row, next));
            if next == EOS_ID {
                out.terminated = true;
                break;
            }
            out.ids.push(next);
            prev = next;
            if out.ids.len() >= max_len {
                break;
            }
        }
        out
    }

    pub fn sample(
        &self,
        context: MultimodalContext,
        temperature: f64,
        max_len: usize,
        seed: u64,
    ) -> Sample {
        self.sample_with(context, temperature, max_len, &mut SplitMix64::new(seed))
    }

    /// Checkpoint bytes: text header (format id, `V= C=`, one token per line),
    /// little-endian f64 logits, then the SHA-256 of everything before it.
    pub fn to_checkpoint_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(64 + self.logits.len() * 8);
        buf.extend_from_slice(formats::CHECKPOINT.as_bytes());
        buf.push(b'\n');
        buf.extend_from_slice(format!("V={} C={}\n", self.vocab.len(), self.contexts).as_bytes());
        for t in &self.vocab {
            buf.extend_from_slice(t.as_bytes());
            buf.push(b'\n');
        }
        for x in &self.logits {
            buf.extend_from_slice(&x.to_le_bytes());
        }
        let digest = Sha256::digest(&buf);
        buf.extend_from_slice(&digest);
        buf
    }

    pub fn from_checkpoint_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < 32 {
            return Err(bad("file too short"));
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(bad("checksum mismatch"));
        }
        let mut pos = 0;
        let mut next_line = || -> Result<&str> {
            let rest = &body[pos..];
            let end = rest
                .iter()
                .position(|&b| b == b'\n')
                .ok_or_else(|| bad("truncated header"))?;
            pos += end + 1;
            std::str::from_utf8(&rest[..end]).map_err(|_| bad("header is not UTF-8"))
        };
        if next_line()? != formats::CHECKPOINT {
            return Err(bad("unknown format identifier"));
        }
        let dims = next_line()?;
        let (v, c) = dims
            .split_once(' ')
            .and_then(|(v, c)| {
                Some((
                    v.strip_prefix("V=")?.parse::<usize>().ok()?,
                    c.strip_prefix("C=")?.parse::<usize>().ok()?,
                ))
            })
            .ok_or_else(|| bad("malformed dimension line"))?;
        let mut vocab = Vec::with_capacity(v);
        for _ in 0..v {
            vocab.push(next_line()?.to_string());
        }
        let payload = &body[pos..];
        let expected = c
            .checked_mul(v)
            .and_then(|x| x.checked_mul(v))
            .and_then(|x| x.checked_mul(8))
            .ok_or_else(|| bad("dimensions overflow"))?;
        if payload.len() != expected {
            return Err(bad("logit payload has the wrong length"));
        }
        let logits = payload
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect();
        Self::from_parts(vocab, c, logits).map_err(|e| Error::Checkpoint(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_checkpoint_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_checkpoint_bytes(&bytes)
    }
}
