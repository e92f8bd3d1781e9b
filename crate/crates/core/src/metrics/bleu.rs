use std::collections::HashMap;

use super::ngrams;
use crate::textproc::TokenSequence;

fn counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut m = HashMap::new();
    for g in ngrams(tokens, n) {
        *m.entry(g).or_insert(0) += 1;
    }
    m
}

/// Clipped n-gram matches and candidate totals for orders 1..=4, plus lengths.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BleuStats {
    pub matches: [usize; 4],
    pub totals: [usize; 4],
    pub hyp_len: usize,
    pub ref_len: usize,
}

impl BleuStats {
    pub fn of(hyp: &TokenSequence, reference: &TokenSequence) -> Self {
        let (h, r) = (hyp.tokens(), reference.tokens());
        let mut s = BleuStats {
            hyp_len: h.len(),
            ref_len: r.len(),
            ..Default::default()
        };
        for n in 1..=4 {
            let ref_counts = counts(r, n);
            let hyp_counts = counts(h, n);
            s.matches[n - 1] = hyp_counts
                .iter()
                .map(|(g, &c)| c.min(ref_counts.get(g).copied().unwrap_or(0)))
                .sum();
            s.totals[n - 1] = h.len().saturating_sub(n - 1);
        }
        s
    }

    fn add(&mut self, other: &Self) {
        for i in 0..4 {
            self.matches[i] += other.matches[i];
            self.totals[i] += other.totals[i];
        }
        self.hyp_len += other.hyp_len;
        self.ref_len += other.ref_len;
    }

    /// Geometric mean of modified precisions times the brevity penalty. With
    /// `smoothed`, an order with zero matches uses `(0 + 1) / (total + 1)`.
    pub fn score(&self, max_n: usize, smoothed: bool) -> f64 {
        assert!((1..=4).contains(&max_n), "max_n must be in 1..=4");
        if self.hyp_len == 0 {
            return 0.0;
        }
        let mut log_sum = 0.0;
        for n in 0..max_n {
            let (m, t) = (self.matches[n], self.totals[n]);
            let p = if m == 0 {
                if !smoothed {
                    return 0.0;
                }
                1.0 / (t as f64 + 1.0)
            } else {
                m as f64 / t as f64
            };
            log_sum += p.ln();
        }
        let bp = if self.hyp_len < self.ref_len {
            (1.0 - self.ref_len as f64 / self.hyp_len as f64).exp()
        } else {
            1.0
        };
        bp * (log_sum / max_n as f64).exp()
    }
}

/// Sentence BLEU of `hyp` against a single reference.
pub fn bleu(hyp: &TokenSequence, reference: &TokenSequence, max_n: usize, smoothed: bool) -> f64 {
    BleuStats::of(hyp, reference).score(max_n, smoothed)
}

/// Corpus BLEU: statistics pooled over all pairs before the geometric mean.
pub fn corpus_bleu(pairs: &[(&TokenSequence, &TokenSequence)], max_n: usize) -> f64 {
    let mut total = BleuStats::default();
    for (h, r) in pairs {
        total.add(&BleuStats::of(h, r));
    }
    total.score(max_n, false)
}
