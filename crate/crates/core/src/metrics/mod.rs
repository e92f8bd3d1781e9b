//! Reference-based caption metrics.
//!
//! `spice_lite` and `meteor_lite` are dependency-free stand-ins for the
//! scene-graph SPICE and WordNet METEOR scorers; reports carry
//! [`VARIANT_NOTES`] so the substitution is never silent.

mod bleu;
mod cider;
mod meteor;
mod rouge;
mod spice;

pub use bleu::{bleu, corpus_bleu, BleuStats};
pub use cider::{cider_d, CiderScores, CIDER_SCALE, CIDER_SIGMA};
pub use meteor::{align_unigrams, meteor_lite, Alignment};
pub use rouge::{lcs_len, rouge_l, ROUGE_BETA};
pub use spice::{propositions, spice_lite, Proposition, Stoplist};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::textproc::{unique_vocab, TokenSequence};

/// Header lines describing every way these metrics differ from the reference toolkits.
pub const VARIANT_NOTES: &[&str] = &[
    "spice_lite: F1 over content unigrams and adjacent content-word bigrams (no scene-graph parser)",
    "meteor_lite: exact unigram matches only (no stemming or synonyms), alpha=0.9 beta=3 gamma=0.5",
    "spider: (cider_d + spice_lite) / 2, i.e. computed with spice_lite",
    "bleu: corpus BLEU-1..4 unsmoothed; the reward uses smoothed sentence BLEU-4",
    "tokenization: lowercase, whitespace split, punctuation stripped, CJK per codepoint",
];

/// One row of the Table-2 style column set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub bleu1: f64,
    pub bleu2: f64,
    pub bleu3: f64,
    pub bleu4: f64,
    pub rouge_l: f64,
    pub meteor_lite: f64,
    pub cider_d: f64,
    pub spice_lite: f64,
    pub spider: f64,
    pub vocab: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub samples: Vec<MetricReport>,
    pub corpus: MetricReport,
}

/// Score every hypothesis against its reference and summarise the corpus.
/// Corpus BLEU pools n-gram statistics; the other metrics are sample means.
pub fn evaluate(hyps: &[TokenSequence], refs: &[TokenSequence]) -> Result<Evaluation> {
    if hyps.len() != refs.len() {
        return Err(Error::Metric(format!(
            "{} hypotheses for {} references",
            hyps.len(),
            refs.len()
        )));
    }
    if hyps.is_empty() {
        return Err(Error::Metric("empty corpus".into()));
    }
    let stop = Stoplist::shipped();
    let cider = cider_d(hyps, refs)?;
    let mut samples = Vec::with_capacity(hyps.len());
    for (i, (h, r)) in hyps.iter().zip(refs).enumerate() {
        let spice = spice_lite(h, r, stop);
        samples.push(MetricReport {
            bleu1: bleu(h, r, 1, false),
            bleu2: bleu(h, r, 2, false),
            bleu3: bleu(h, r, 3, false),
            bleu4: bleu(h, r, 4, false),
            rouge_l: rouge_l(h, r),
            meteor_lite: meteor_lite(h, r),
            cider_d: cider.per_sample[i],
            spice_lite: spice,
            spider: (cider.per_sample[i] + spice) / 2.0,
            vocab: unique_vocab([h]),
        });
    }
    let n = samples.len() as f64;
    let mean = |f: fn(&MetricReport) -> f64| samples.iter().map(f).sum::<f64>() / n;
    let pairs: Vec<_> = hyps.iter().zip(refs).collect();
    let spice_mean = mean(|m| m.spice_lite);
    let corpus = MetricReport {
        bleu1: corpus_bleu(&pairs, 1),
        bleu2: corpus_bleu(&pairs, 2),
        bleu3: corpus_bleu(&pairs, 3),
        bleu4: corpus_bleu(&pairs, 4),
        rouge_l: mean(|m| m.rouge_l),
        meteor_lite: mean(|m| m.meteor_lite),
        cider_d: cider.mean,
        spice_lite: spice_mean,
        spider: (cider.mean + spice_mean) / 2.0,
        vocab: unique_vocab(hyps),
    };
    Ok(Evaluation { samples, corpus })
}

/// n-grams of order `n` as slices, in order of occurrence.
pub(crate) fn ngrams(tokens: &[String], n: usize) -> impl Iterator<Item = &[String]> {
    tokens.windows(n)
}
