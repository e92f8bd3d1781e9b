//! Composite caption reward: `alpha * R_emo + beta * (S_BLEU + S_SPICE)`.
//!
//! `S_BLEU` is add-one smoothed sentence BLEU-4 and `S_SPICE` is
//! [`spice_lite`](crate::metrics::spice_lite). A generated caption with no
//! tokens (or one whose emotion coordinates vanish) gets `emo_floor` for its
//! emotion term and is flagged degenerate instead of failing the rollout.

use serde::{Deserialize, Serialize};

use crate::embedding::Embedder;
use crate::emotion_space::{coordinate_similarity, EmotionAnchorSet, EmotionCoordinates};
use crate::error::{Error, Result};
use crate::metrics::{bleu, spice_lite, Stoplist};
use crate::textproc::{tokenize, TokenSequence};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardWeights {
    pub alpha: f64,
    pub beta: f64,
    pub emo_floor: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 1.0,
            emo_floor: 0.0,
        }
    }
}

impl RewardWeights {
    /// Both weights must be strictly positive and finite.
    pub fn new(alpha: f64, beta: f64, emo_floor: f64) -> Result<Self> {
        let w = Self::ablation(alpha, beta, emo_floor)?;
        if alpha <= 0.0 || beta <= 0.0 {
            return Err(Error::Config(format!(
                "reward weights must be positive, got alpha={alpha} beta={beta}"
            )));
        }
        Ok(w)
    }

    /// Like [`RewardWeights::new`] but admits zero weights, for ablation runs
    /// that switch a reward term off.
    pub fn ablation(alpha: f64, beta: f64, emo_floor: f64) -> Result<Self> {
        if !(alpha.is_finite() && beta.is_finite() && emo_floor.is_finite()) {
            return Err(Error::Config("reward weights must be finite".into()));
        }
        if alpha < 0.0 || beta < 0.0 {
            return Err(Error::Config(format!(
                "reward weights must be non-negative, got alpha={alpha} beta={beta}"
            )));
        }
        Ok(Self {
            alpha,
            beta,
            emo_floor,
        })
    }

    pub fn total(&self, r_emo: f64, s_bleu: f64, s_spice: f64) -> f64 {
        self.alpha * r_emo + self.beta * (s_bleu + s_spice)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub r_emo: f64,
    pub s_bleu: f64,
    pub s_spice: f64,
    pub r_total: f64,
    pub degenerate: bool,
}

/// A reference caption with its tokens and emotion coordinates computed once.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedReference {
    tokens: TokenSequence,
    coords: EmotionCoordinates,
}

impl PreparedReference {
    pub fn tokens(&self) -> &TokenSequence {
        &self.tokens
    }

    pub fn coordinates(&self) -> &EmotionCoordinates {
        &self.coords
    }
}

/// Anchors, embedder and weights bundled for repeated scoring.
#[derive(Debug)]
pub struct RewardModel {
    anchors: EmotionAnchorSet,
    embedder: Embedder,
    weights: RewardWeights,
}

impl RewardModel {
    /// Fails if the anchors were built under a different embedder.
    pub fn new(
        anchors: EmotionAnchorSet,
        embedder: Embedder,
        weights: RewardWeights,
    ) -> Result<Self> {
        anchors.check_embedder(&embedder)?;
        Ok(Self {
            anchors,
            embedder,
            weights,
        })
    }

    pub fn anchors(&self) -> &EmotionAnchorSet {
        &self.anchors
    }

    pub fn embedder(&self) -> &Embedder {
        &self.embedder
    }

    pub fn weights(&self) -> RewardWeights {
        self.weights
    }

    pub fn with_weights(mut self, weights: RewardWeights) -> Self {
        self.weights = weights;
        self
    }

    pub fn prepare(&self, reference: &str) -> Result<PreparedReference> {
        let tokens = tokenize(reference);
        let bad = |message: &str| Error::Data {
            id: "reference".into(),
            message: format!("{message}: {reference:?}"),
        };
        if tokens.is_empty() {
            return Err(bad("reference caption has no tokens"));
        }
        let coords = match self.anchors.coordinates_of(reference, &self.embedder) {
            Ok(c) => c,
            Err(Error::UndefinedProjection) => return Err(bad("reference embeds to zero")),
            Err(e) => return Err(e),
        };
        if coords.values().iter().all(|&c| c == 0.0) {
            return Err(bad("reference has zero emotion coordinates"));
        }
        Ok(PreparedReference { tokens, coords })
    }

    pub fn score_prepared(
        &self,
        generated: &str,
        reference: &PreparedReference,
    ) -> Result<RewardBreakdown> {
        let tokens = tokenize(generated);
        let s_bleu = bleu(&tokens, &reference.tokens, 4, true);
        let s_spice = spice_lite(&tokens, &reference.tokens, Stoplist::shipped());
        let emo = if tokens.is_empty() {
            None
        } else {
            match self.anchors.coordinates_of(generated, &self.embedder) {
                Ok(c) => coordinate_similarity(&c, &reference.coords).ok(),
                Err(Error::UndefinedProjection) => None,
                Err(e) => return Err(e),
            }
        };
        let (r_emo, degenerate) = match emo {
            Some(r) => (r, false),
            None => (self.weights.emo_floor, true),
        };
        Ok(RewardBreakdown {
            r_emo,
            s_bleu,
            s_spice,
            r_total: self.weights.total(r_emo, s_bleu, s_spice),
            degenerate,
        })
    }

    pub fn score_pair(&self, generated: &str, reference: &str) -> Result<RewardBreakdown> {
        self.score_prepared(generated, &self.prepare(reference)?)
    }

    /// Element-wise [`RewardModel::score_pair`] over a rollout group, in input order.
    pub fn score_group<S: AsRef<str>>(
        &self,
        generated: &[S],
        reference: &str,
    ) -> Result<Vec<RewardBreakdown>> {
        if generated.len() < 2 {
            return Err(Error::Config(format!(
                "a rollout group needs at least 2 members, got {}",
                generated.len()
            )));
        }
        let prepared = self.prepare(reference)?;
        generated
            .iter()
            .map(|g| self.score_prepared(g.as_ref(), &prepared))
            .collect()
    }
}
