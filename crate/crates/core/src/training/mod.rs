//! Supervised fine-tuning followed by group relative policy optimisation.

mod eval;
mod grpo;
mod sft;

pub use eval::{evaluate_policy, PolicyEval};
pub use grpo::{
    encode_caption, group_advantages, k3, kl_penalty, run_grpo, GrpoConfig, GrpoRecord,
    GrpoTrainer, Rollout, RolloutGroup, Surrogate, TrainItem,
};
pub use sft::{corpus_nll, encode_samples, run_sft, sft_loss, SftConfig, SftExample, SftRecord};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::formats;

/// Per-optimizer-step records with strictly increasing step indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLog<R> {
    records: Vec<R>,
}

pub trait StepIndexed {
    fn step(&self) -> usize;
}

impl<R> Default for TrainLog<R> {
    fn default() -> Self {
        Self {
            records: Vec::new(),
        }
    }
}

impl<R: StepIndexed + Serialize> TrainLog<R> {
    pub fn push(&mut self, record: R) {
        if let Some(last) = self.records.last() {
            assert!(record.step() > last.step(), "train log steps must increase");
        }
        self.records.push(record);
    }

    pub fn records(&self) -> &[R] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Header line then one JSON record per line.
    pub fn to_jsonl(&self) -> String {
        let mut out = format!("{{\"format\":\"{}\"}}\n", formats::TRAIN_LOG);
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("record serializes"));
            out.push('\n');
        }
        out
    }
}

/// Linear warmup over the first `ceil(ratio * total)` steps.
pub fn warmup_lr(base: f64, step: usize, total: usize, ratio: f64) -> f64 {
    let warm = (ratio * total as f64).ceil() as usize;
    if warm == 0 || step >= warm {
        base
    } else {
        base * (step + 1) as f64 / warm as f64
    }
}

pub(crate) fn require(cond: bool, message: impl FnOnce() -> String) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::Config(message()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn warmup_schedule() {
        assert_eq!(warmup_lr(1.0, 0, 200, 0.05), 0.1);
        assert_eq!(warmup_lr(1.0, 9, 200, 0.05), 1.0);
        assert_eq!(warmup_lr(1.0, 50, 200, 0.05), 1.0);
        assert_eq!(warmup_lr(2.0, 0, 0, 0.05), 2.0);
        assert_eq!(warmup_lr(2.0, 0, 10, 0.0), 2.0);
    }
}
