//! METEOR with exact unigram matching only.
//!
//! The alignment maximises the number of matched unigrams and, among maximal
//! alignments, minimises the number of chunks (runs that are contiguous in
//! both hypothesis and reference). The search is an exact branch and bound;
//! past [`NODE_BUDGET`] visited nodes it returns the best alignment found.

use std::collections::HashMap;

use crate::textproc::TokenSequence;

const ALPHA: f64 = 0.9;
const BETA: f64 = 3.0;
const GAMMA: f64 = 0.5;

pub const NODE_BUDGET: usize = 2_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Alignment {
    pub matches: usize,
    pub chunks: usize,
}

struct Search<'a> {
    hyp_types: Vec<usize>,
    cands: Vec<Vec<usize>>,
    ref_types: &'a [usize],
    // suffix_hyp[i][ty]: occurrences of type `ty` in hyp[i..]
    suffix_hyp: Vec<Vec<usize>>,
    ref_unused: Vec<usize>,
    used: Vec<bool>,
    target: usize,
    best: usize,
    nodes: usize,
}

impl Search<'_> {
    fn upper_bound(&self, i: usize) -> usize {
        self.suffix_hyp[i]
            .iter()
            .zip(&self.ref_unused)
            .map(|(&h, &r)| h.min(r))
            .sum()
    }

    fn take(&mut self, j: usize) {
        self.used[j] = true;
        self.ref_unused[self.ref_types[j]] -= 1;
    }

    fn release(&mut self, j: usize) {
        self.used[j] = false;
        self.ref_unused[self.ref_types[j]] += 1;
    }

    /// `prev`: ref position matched by hyp `i - 1`, if any.
    fn dfs(&mut self, i: usize, matched: usize, chunks: usize, prev: Option<usize>) {
        self.nodes += 1;
        if self.best != usize::MAX && self.nodes > NODE_BUDGET {
            return;
        }
        if chunks >= self.best {
            return;
        }
        if i == self.hyp_types.len() {
            if matched == self.target {
                self.best = chunks;
            }
            return;
        }
        if matched + self.upper_bound(i) < self.target {
            return;
        }
        // continue the current chunk first
        if let Some(p) = prev {
            let j = p + 1;
            if j < self.used.len() && !self.used[j] && self.ref_types[j] == self.hyp_types[i] {
                self.take(j);
                self.dfs(i + 1, matched + 1, chunks, Some(j));
                self.release(j);
            }
        }
        for k in 0..self.cands[i].len() {
            let j = self.cands[i][k];
            if self.used[j] || prev.is_some_and(|p| p + 1 == j) {
                continue;
            }
            self.take(j);
            self.dfs(i + 1, matched + 1, chunks + 1, Some(j));
            self.release(j);
        }
        self.dfs(i + 1, matched, chunks, None);
    }
}

fn intern<'a>(tokens: &'a [String], ids: &mut HashMap<&'a str, usize>) -> Vec<usize> {
    tokens
        .iter()
        .map(|s| {
            let n = ids.len();
            *ids.entry(s.as_str()).or_insert(n)
        })
        .collect()
}

/// Maximum-match, minimum-chunk exact unigram alignment.
pub fn align_unigrams(hyp: &[String], reference: &[String]) -> Alignment {
    let mut ids: HashMap<&str, usize> = HashMap::new();
    let hyp_types = intern(hyp, &mut ids);
    let ref_types = intern(reference, &mut ids);
    let n_types = ids.len();

    let mut hyp_count = vec![0usize; n_types];
    let mut ref_count = vec![0usize; n_types];
    hyp_types.iter().for_each(|&t| hyp_count[t] += 1);
    ref_types.iter().for_each(|&t| ref_count[t] += 1);
    let target: usize = hyp_count
        .iter()
        .zip(&ref_count)
        .map(|(a, b)| *a.min(b))
        .sum();
    if target == 0 {
        return Alignment {
            matches: 0,
            chunks: 0,
        };
    }

    let mut suffix_hyp = vec![vec![0usize; n_types]; hyp_types.len() + 1];
    for i in (0..hyp_types.len()).rev() {
        suffix_hyp[i] = suffix_hyp[i + 1].clone();
        suffix_hyp[i][hyp_types[i]] += 1;
    }
    let cands = hyp_types
        .iter()
        .map(|&t| {
            (0..ref_types.len())
                .filter(|&j| ref_types[j] == t)
                .collect()
        })
        .collect();

    let mut search = Search {
        hyp_types,
        cands,
        ref_types: &ref_types,
        suffix_hyp,
        ref_unused: ref_count,
        used: vec![false; reference.len()],
        target,
        best: usize::MAX,
        nodes: 0,
    };
    search.dfs(0, 0, 0, None);
    Alignment {
        matches: target,
        chunks: search.best,
    }
}

/// `F_mean * (1 - 0.5 (chunks / matches)^3)` with `F_mean = 10 P R / (R + 9 P)`.
pub fn meteor_lite(hyp: &TokenSequence, reference: &TokenSequence) -> f64 {
    let a = align_unigrams(hyp.tokens(), reference.tokens());
    if a.matches == 0 {
        return 0.0;
    }
    let m = a.matches as f64;
    let p = m / hyp.len() as f64;
    let r = m / reference.len() as f64;
    let f_mean = p * r / (ALPHA * p + (1.0 - ALPHA) * r);
    let penalty = GAMMA * (a.chunks as f64 / m).powf(BETA);
    f_mean * (1.0 - penalty)
}
