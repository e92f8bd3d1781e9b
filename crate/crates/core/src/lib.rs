//! Emotion-aware caption rewards and a desk-scale two-phase trainer.
//!
//! The crate is organised bottom-up:
//!
//! * [`textproc`] tokenizes captions and counts vocabulary.
//! * [`embedding`] maps text into a fixed-dimension latent space, either via a
//!   seeded hash construction or an exported vector table.
//! * [`emotion_space`] builds emotion anchors from lexicons and projects texts
//!   onto them; the cosine between two projections is the emotion reward.
//! * [`metrics`] holds the reference-based caption metrics.
//! * [`reward`] combines the emotion reward with sentence BLEU and SPICE-lite.
//! * [`policy`] is a context-conditioned tabular bigram caption model with exact
//!   log-probabilities and analytic gradients.
//! * [`training`] runs supervised fine-tuning followed by group relative policy
//!   optimisation against the composite reward.
//! * [`data`] reads and writes datasets and generates the synthetic corpus.

pub mod data;
pub mod embedding;
pub mod emotion_space;
pub mod error;
pub mod formats;
pub mod metrics;
pub mod policy;
pub mod reward;
pub mod rng;
pub mod textproc;
pub mod training;

pub use data::{CaptionSample, Split, SynthOutput, SynthSpec};
pub use embedding::{Embedder, EmbedderBackend, EmbedderConfig, OovPolicy, SemanticVector};
pub use emotion_space::{EmotionAnchorSet, EmotionCoordinates, EmotionLexicon};
pub use error::{Error, Result};
pub use metrics::MetricReport;
pub use policy::{MultimodalContext, PolicyParams};
pub use reward::{RewardBreakdown, RewardModel, RewardWeights};
pub use textproc::TokenSequence;
pub use training::{GrpoConfig, SftConfig, TrainLog};
