//! SPICE-lite: F1 between proposition sets built from content words.

use std::collections::HashSet;
use std::sync::OnceLock;

use crate::textproc::TokenSequence;

static SHIPPED: &str = include_str!("../../data/stoplist.txt");

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Stoplist {
    words: HashSet<String>,
}

impl Stoplist {
    /// One word per line; `#` lines are comments.
    pub fn parse(text: &str) -> Self {
        let words = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(str::to_string)
            .collect();
        Self { words }
    }

    /// The versioned stoplist bundled with the crate.
    pub fn shipped() -> &'static Stoplist {
        static CELL: OnceLock<Stoplist> = OnceLock::new();
        CELL.get_or_init(|| Stoplist::parse(SHIPPED))
    }

    pub fn contains(&self, word: &str) -> bool {
        self.words.contains(word)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Proposition {
    Object(String),
    Relation(String, String),
}

/// Content unigrams plus bigrams of consecutive content words (adjacent once
/// stopwords are removed).
pub fn propositions(tokens: &TokenSequence, stop: &Stoplist) -> HashSet<Proposition> {
    let content: Vec<&str> = tokens.iter().filter(|t| !stop.contains(t)).collect();
    let mut set: HashSet<Proposition> = content
        .iter()
        .map(|w| Proposition::Object(w.to_string()))
        .collect();
    set.extend(
        content
            .windows(2)
            .map(|w| Proposition::Relation(w[0].to_string(), w[1].to_string())),
    );
    set
}

pub fn spice_lite(hyp: &TokenSequence, reference: &TokenSequence, stop: &Stoplist) -> f64 {
    let h = propositions(hyp, stop);
    let r = propositions(reference, stop);
    if h.is_empty() || r.is_empty() {
        return 0.0;
    }
    let common = h.intersection(&r).count() as f64;
    if common == 0.0 {
        return 0.0;
    }
    let p = common / h.len() as f64;
    let rc = common / r.len() as f64;
    2.0 * p * rc / (p + rc)
}
