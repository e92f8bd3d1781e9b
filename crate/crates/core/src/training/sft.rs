use serde::{Deserialize, Serialize};

use super::{require, StepIndexed, TrainLog};
use crate::data::CaptionSample;
use crate::error::{Error, Result};
use crate::policy::{Gradient, MultimodalContext, PolicyParams};
use crate::rng::{derive_seed, SplitMix64, Stream};
use crate::textproc::tokenize;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SftConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub grad_accum: usize,
    pub seed: u64,
}

impl Default for SftConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            epochs: 1,
            batch_size: 1,
            grad_accum: 2,
            seed: 0,
        }
    }
}

impl SftConfig {
    pub fn validate(&self) -> Result<()> {
        require(
            self.learning_rate.is_finite() && self.learning_rate > 0.0,
            || {
                format!(
                    "sft learning_rate must be positive, got {}",
                    self.learning_rate
                )
            },
        )?;
        require(self.batch_size > 0, || {
            "sft batch_size must be positive".into()
        })?;
        require(self.grad_accum > 0, || {
            "sft grad_accum must be positive".into()
        })
    }
}

/// A reference caption already mapped to policy token ids.
#[derive(Debug, Clone, PartialEq)]
pub struct SftExample {
    pub id: String,
    pub context: MultimodalContext,
    pub ids: Vec<usize>,
}

/// Encode dataset samples against the policy vocabulary and context range.
pub fn encode_samples(params: &PolicyParams, samples: &[CaptionSample]) -> Result<Vec<SftExample>> {
    samples
        .iter()
        .map(|s| {
            let data_err = |e: Error| Error::Data {
                id: s.id.clone(),
                message: e.to_string(),
            };
            let context = params.context(s.context_id).map_err(data_err)?;
            let ids = params
                .encode(&tokenize(&s.reference_caption))
                .map_err(data_err)?;
            Ok(SftExample {
                id: s.id.clone(),
                context,
                ids,
            })
        })
        .collect()
}

/// Negative log-likelihood summed over the batch and its gradient with respect
/// to the logits.
pub fn sft_loss(params: &PolicyParams, batch: &[SftExample]) -> (f64, Gradient) {
    let mut grad = params.zero_gradient();
    let mut loss = 0.0;
    for ex in batch {
        loss -= params.log_prob_ids(ex.context, &ex.ids, true);
        params.accumulate_grad_ids(ex.context, &ex.ids, true, -1.0, &mut grad);
    }
    (loss, grad)
}

/// Total NLL and number of predicted steps (tokens plus EOS) over a corpus.
pub fn corpus_nll(params: &PolicyParams, examples: &[SftExample]) -> (f64, usize) {
    examples.iter().fold((0.0, 0), |(nll, steps), ex| {
        (
            nll - params.log_prob_ids(ex.context, &ex.ids, true),
            steps + ex.ids.len() + 1,
        )
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SftRecord {
    pub step: usize,
    pub epoch: usize,
    /// Mean per-sample NLL of the effective batch before the update.
    pub loss: f64,
    pub grad_norm: f64,
}

impl StepIndexed for SftRecord {
    fn step(&self) -> usize {
        self.step
    }
}

/// Plain gradient descent. Each optimizer step accumulates
/// `batch_size * grad_accum` samples and descends along their mean gradient.
/// Sample order is reshuffled every epoch from the config seed.
pub fn run_sft(
    config: &SftConfig,
    dataset: &[CaptionSample],
    initial: &PolicyParams,
) -> Result<(PolicyParams, TrainLog<SftRecord>)> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::Config("sft dataset is empty".into()));
    }
    let examples = encode_samples(initial, dataset)?;
    let mut params = initial.clone();
    let mut log = TrainLog::default();
    let effective = config.batch_size * config.grad_accum;
    let mut step = 0;
    for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..examples.len()).collect();
        SplitMix64::new(derive_seed(
            config.seed,
            Stream::SftShuffle,
            &[epoch as u64],
        ))
        .shuffle(&mut order);
        for chunk in order.chunks(effective) {
            let batch: Vec<SftExample> = chunk.iter().map(|&i| examples[i].clone()).collect();
            let (loss, grad) = sft_loss(&params, &batch);
            let n = batch.len() as f64;
            if !loss.is_finite() || !grad.is_finite() {
                return Err(Error::Divergence {
                    step,
                    message: format!("non-finite sft loss {loss}"),
                    last_good: Some(Box::new(params)),
                });
            }
            log.push(SftRecord {
                step,
                epoch,
                loss: loss / n,
                grad_norm: grad.norm() / n,
            });
            params.apply(&grad, -config.learning_rate / n);
            step += 1;
        }
    }
    Ok((params, log))
}
