//! CIDEr-D with one reference per hypothesis.

use std::collections::{HashMap, HashSet};

use super::ngrams;
use crate::error::{Error, Result};
use crate::textproc::TokenSequence;

pub const CIDER_SIGMA: f64 = 6.0;
pub const CIDER_SCALE: f64 = 10.0;
const MAX_N: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct CiderScores {
    pub per_sample: Vec<f64>,
    pub mean: f64,
}

type Weights<'a> = [HashMap<&'a [String], f64>; MAX_N];

struct Idf<'a> {
    log_docs: f64,
    doc_freq: HashMap<&'a [String], usize>,
}

impl<'a> Idf<'a> {
    fn over(refs: &'a [TokenSequence]) -> Self {
        let mut doc_freq = HashMap::new();
        for r in refs {
            let mut seen = HashSet::new();
            for n in 1..=MAX_N {
                for g in ngrams(r.tokens(), n) {
                    if seen.insert(g) {
                        *doc_freq.entry(g).or_insert(0) += 1;
                    }
                }
            }
        }
        Self {
            log_docs: (refs.len() as f64).ln(),
            doc_freq,
        }
    }

    fn vectorize(&self, tokens: &'a [String]) -> (Weights<'a>, [f64; MAX_N]) {
        let mut vec: Weights<'a> = Default::default();
        for n in 1..=MAX_N {
            for g in ngrams(tokens, n) {
                *vec[n - 1].entry(g).or_insert(0.0) += 1.0;
            }
        }
        let mut norms = [0.0; MAX_N];
        for (n, v) in vec.iter_mut().enumerate() {
            for (g, w) in v.iter_mut() {
                let df = self.doc_freq.get(g).copied().unwrap_or(0).max(1) as f64;
                *w *= self.log_docs - df.ln();
                norms[n] += *w * *w;
            }
            norms[n] = norms[n].sqrt();
        }
        (vec, norms)
    }
}

/// Per-sample CIDEr-D and its mean. Document frequencies come from the
/// reference corpus; hypothesis weights are clipped to the reference weights,
/// each order's similarity is multiplied by a Gaussian length penalty, orders
/// 1..=4 are averaged, and the result is scaled by 10.
pub fn cider_d(hyps: &[TokenSequence], refs: &[TokenSequence]) -> Result<CiderScores> {
    if hyps.len() != refs.len() {
        return Err(Error::Metric(format!(
            "cider_d: {} hypotheses for {} references",
            hyps.len(),
            refs.len()
        )));
    }
    if hyps.is_empty() {
        return Err(Error::Metric("cider_d: empty corpus".into()));
    }
    let idf = Idf::over(refs);
    let per_sample: Vec<f64> = hyps
        .iter()
        .zip(refs)
        .map(|(h, r)| {
            let (hv, hn) = idf.vectorize(h.tokens());
            let (rv, rn) = idf.vectorize(r.tokens());
            let delta = h.len() as f64 - r.len() as f64;
            let penalty = (-(delta * delta) / (2.0 * CIDER_SIGMA * CIDER_SIGMA)).exp();
            let mut total = 0.0;
            for n in 0..MAX_N {
                if hn[n] == 0.0 || rn[n] == 0.0 {
                    continue;
                }
                let dot: f64 = hv[n]
                    .iter()
                    .filter_map(|(g, &wh)| rv[n].get(g).map(|&wr| wh.min(wr) * wr))
                    .sum();
                total += dot / (hn[n] * rn[n]) * penalty;
            }
            total / MAX_N as f64 * CIDER_SCALE
        })
        .collect();
    let mean = per_sample.iter().sum::<f64>() / per_sample.len() as f64;
    Ok(CiderScores { per_sample, mean })
}
