use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::grpo::TrainItem;
use crate::error::Result;
use crate::policy::PolicyParams;
use crate::reward::RewardModel;
use crate::rng::{derive_seed, Stream};
use crate::textproc::tokenize;

/// Held-out behaviour of a policy under sampling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyEval {
    pub mean_r_total: f64,
    pub mean_r_emo: f64,
    pub mean_s_bleu: f64,
    pub mean_s_spice: f64,
    /// Distinct tokens over every sampled caption.
    pub vocab: usize,
    pub captions: Vec<String>,
}

/// Draw `samples_per_item` captions per item and average their rewards.
/// Streams depend only on `(seed, item index, draw index)`, so two policies
/// evaluated with the same seed see the same random numbers.
pub fn evaluate_policy(
    params: &PolicyParams,
    items: &[TrainItem],
    model: &RewardModel,
    temperature: f64,
    max_len: usize,
    samples_per_item: usize,
    seed: u64,
) -> Result<PolicyEval> {
    let mut captions = Vec::with_capacity(items.len() * samples_per_item);
    let (mut total, mut emo, mut bleu, mut spice) = (0.0, 0.0, 0.0, 0.0);
    let mut vocab = HashSet::new();
    for (i, item) in items.iter().enumerate() {
        for k in 0..samples_per_item {
            let s = params.sample(
                item.context,
                temperature,
                max_len,
                derive_seed(seed, Stream::Evaluation, &[i as u64, k as u64]),
            );
            let text = params.decode(&s.ids);
            let b = model.score_prepared(&text, &item.reference)?;
            total += b.r_total;
            emo += b.r_emo;
            bleu += b.s_bleu;
            spice += b.s_spice;
            vocab.extend(tokenize(&text).tokens().iter().cloned());
            captions.push(text);
        }
    }
    let n = captions.len().max(1) as f64;
    Ok(PolicyEval {
        mean_r_total: total / n,
        mean_r_emo: emo / n,
        mean_s_bleu: bleu / n,
        mean_s_spice: spice / n,
        vocab: vocab.len(),
        captions,
    })
}
