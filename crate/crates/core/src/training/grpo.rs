//! Group relative policy optimisation against the composite caption reward.
//!
//! Per prompt, `G` captions are sampled, scored, and their rewards normalised
//! within the group into advantages. The surrogate maximised per token is
//!
//! ```text
//! min(rho * A, clip(rho, 1 - eps, 1 + eps) * A) - kl_coeff * k3
//! ```
//!
//! averaged over the tokens of each caption, then over the group, then over
//! the batch. `rho` is the ratio to the policy that sampled the captions; with
//! a single update per batch it equals one at the point where the gradient is
//! taken. `k3 = r - ln r - 1` with `r = pi_ref / pi_theta` and the reference
//! policy frozen at the supervised checkpoint.

use serde::{Deserialize, Serialize};

use super::{require, warmup_lr, StepIndexed, TrainLog};
use crate::data::CaptionSample;
use crate::error::{Error, Result};
use crate::policy::{transitions, Gradient, MultimodalContext, PolicyParams};
use crate::reward::{PreparedReference, RewardModel};
use crate::rng::{derive_seed, SplitMix64, Stream};
use crate::textproc::{tokenize, TokenSequence};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrpoConfig {
    /// Rollouts per prompt (`G`).
    pub group_size: usize,
    pub kl_coeff: f64,
    pub max_response_len: usize,
    pub temperature: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub grad_accum: usize,
    pub warmup_ratio: f64,
    pub clip_eps: f64,
    pub adv_epsilon: f64,
    /// Global gradient-norm clip; `0` disables it.
    pub max_grad_norm: f64,
    pub steps: usize,
    pub seed: u64,
}

impl Default for GrpoConfig {
    fn default() -> Self {
        Self {
            group_size: 4,
            kl_coeff: 0.5,
            max_response_len: 32,
            temperature: 1.0,
            learning_rate: 1e-4,
            batch_size: 1,
            grad_accum: 4,
            warmup_ratio: 0.05,
            clip_eps: 0.2,
            adv_epsilon: 1e-8,
            max_grad_norm: 1.0,
            steps: 0,
            seed: 0,
        }
    }
}

impl GrpoConfig {
    pub fn validate(&self) -> Result<()> {
        require(self.group_size >= 2, || {
            format!("group_size must be >= 2, got {}", self.group_size)
        })?;
        require(self.kl_coeff.is_finite() && self.kl_coeff >= 0.0, || {
            format!("kl_coeff must be >= 0, got {}", self.kl_coeff)
        })?;
        require(
            self.temperature.is_finite() && self.temperature > 0.0,
            || format!("temperature must be > 0, got {}", self.temperature),
        )?;
        require(self.max_response_len >= 1, || {
            "max_response_len must be >= 1".into()
        })?;
        require(
            self.learning_rate.is_finite() && self.learning_rate > 0.0,
            || format!("learning_rate must be > 0, got {}", self.learning_rate),
        )?;
        require(self.batch_size >= 1 && self.grad_accum >= 1, || {
            "batch_size and grad_accum must be >= 1".into()
        })?;
        require((0.0..=1.0).contains(&self.warmup_ratio), || {
            format!("warmup_ratio must be in [0, 1], got {}", self.warmup_ratio)
        })?;
        require(self.clip_eps > 0.0 && self.clip_eps < 1.0, || {
            format!("clip_eps must be in (0, 1), got {}", self.clip_eps)
        })?;
        require(self.adv_epsilon >= 0.0, || {
            "adv_epsilon must be >= 0".into()
        })?;
        require(self.max_grad_norm >= 0.0, || {
            "max_grad_norm must be >= 0".into()
        })
    }

    /// Prompts consumed per optimizer step.
    pub fn prompts_per_step(&self) -> usize {
        self.batch_size * self.grad_accum
    }
}

/// `(r_i - mean) / (population std + epsilon)`.
pub fn group_advantages(rewards: &[f64], epsilon: f64) -> Vec<f64> {
    assert!(rewards.len() >= 2, "a group needs at least two rewards");
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let var = rewards.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n;
    let denom = var.sqrt() + epsilon;
    rewards.iter().map(|r| (r - mean) / denom).collect()
}

/// `r - ln r - 1` for `ln r = log_ratio`.
pub fn k3(log_ratio: f64) -> f64 {
    log_ratio.exp_m1() - log_ratio
}

/// Mean per-step k3 estimate of KL(pi_theta || pi_ref) along `sequence`.
pub fn kl_penalty(
    params: &PolicyParams,
    reference: &PolicyParams,
    context: MultimodalContext,
    sequence: &TokenSequence,
) -> Result<f64> {
    same_shape(params, reference)?;
    let ids = params.encode(sequence)?;
    Ok(mean_k3(params, reference, context, &ids, true))
}

fn mean_k3(
    params: &PolicyParams,
    reference: &PolicyParams,
    context: MultimodalContext,
    ids: &[usize],
    terminated: bool,
) -> f64 {
    let steps = transitions(ids, terminated);
    let total: f64 = steps
        .iter()
        .map(|&(p, n)| {
            k3(reference.step_log_prob(context, p, n) - params.step_log_prob(context, p, n))
        })
        .sum();
    total / steps.len() as f64
}

fn same_shape(a: &PolicyParams, b: &PolicyParams) -> Result<()> {
    if a.vocab() != b.vocab() || a.contexts() != b.contexts() {
        return Err(Error::Config(
            "policy and reference policy have different vocabularies or context counts".into(),
        ));
    }
    Ok(())
}

/// One sampled caption frozen for the update.
#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub ids: Vec<usize>,
    pub terminated: bool,
    /// Per-step log-probabilities under the sampling (old) policy.
    pub old_log_probs: Vec<f64>,
    pub advantage: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RolloutGroup {
    pub context: MultimodalContext,
    pub rollouts: Vec<Rollout>,
}

/// The clipped, KL-regularised surrogate and its analytic gradient.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Surrogate {
    pub kl_coeff: f64,
    pub clip_eps: f64,
}

impl Surrogate {
    /// Visit every token with its weight `1 / (|o| G B)`, the ratio terms and the
    /// derivative of the per-token objective with respect to `log pi_theta`.
    fn walk(
        &self,
        params: &PolicyParams,
        reference: &PolicyParams,
        groups: &[RolloutGroup],
        mut visit: impl FnMut(MultimodalContext, usize, usize, f64, f64, f64),
    ) {
        let n_groups = groups.len() as f64;
        for group in groups {
            let g = group.rollouts.len() as f64;
            for ro in &group.rollouts {
                let steps = transitions(&ro.ids, ro.terminated);
                debug_assert_eq!(steps.len(), ro.old_log_probs.len());
                let weight = 1.0 / (steps.len() as f64 * g * n_groups);
                for (&(p, n), &old) in steps.iter().zip(&ro.old_log_probs) {
                    let lp = params.step_log_prob(group.context, p, n);
                    let ratio = (lp - old).exp();
                    let unclipped = ratio * ro.advantage;
                    let clipped =
                        ratio.clamp(1.0 - self.clip_eps, 1.0 + self.clip_eps) * ro.advantage;
                    let (term, d_term) = if unclipped <= clipped {
                        (unclipped, unclipped)
                    } else {
                        (clipped, 0.0)
                    };
                    let log_ref_ratio = reference.step_log_prob(group.context, p, n) - lp;
                    let kl = k3(log_ref_ratio);
                    let d_kl = -log_ref_ratio.exp_m1();
                    let value = term - self.kl_coeff * kl;
                    let slope = d_term - self.kl_coeff * d_kl;
                    visit(group.context, p, n, weight, value, slope);
                }
            }
        }
    }

    pub fn objective(
        &self,
        params: &PolicyParams,
        reference: &PolicyParams,
        groups: &[RolloutGroup],
    ) -> f64 {
        let mut total = 0.0;
        self.walk(params, reference, groups, |_, _, _, w, v, _| total += w * v);
        total
    }

    /// Gradient of [`Surrogate::objective`] with rollouts held fixed.
    pub fn gradient(
        &self,
        params: &PolicyParams,
        reference: &PolicyParams,
        groups: &[RolloutGroup],
    ) -> Gradient {
        let mut grad = params.zero_gradient();
        self.walk(params, reference, groups, |ctx, p, n, w, _, slope| {
            params.accumulate_step_grad(ctx, p, n, w * slope, &mut grad);
        });
        grad
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrpoRecord {
    pub step: usize,
    pub learning_rate: f64,
    pub mean_r_total: f64,
    pub max_r_total: f64,
    pub mean_r_emo: f64,
    pub mean_s_bleu: f64,
    pub mean_s_spice: f64,
    pub mean_kl: f64,
    pub adv_mean: f64,
    pub adv_std: f64,
    pub zero_adv_groups: usize,
    pub degenerate: usize,
    pub grad_norm: f64,
    pub grad_clipped: bool,
    pub example: String,
}

impl StepIndexed for GrpoRecord {
    fn step(&self) -> usize {
        self.step
    }
}

/// A training prompt: context plus its prepared reference caption.
#[derive(Debug, Clone)]
pub struct TrainItem {
    pub id: String,
    pub context: MultimodalContext,
    pub reference: PreparedReference,
}

impl TrainItem {
    pub fn prepare_all(
        params: &PolicyParams,
        samples: &[CaptionSample],
        model: &RewardModel,
    ) -> Result<Vec<TrainItem>> {
        samples
            .iter()
            .map(|s| {
                let data_err = |e: Error| Error::Data {
                    id: s.id.clone(),
                    message: e.to_string(),
                };
                let context = params.context(s.context_id).map_err(data_err)?;
                let reference = model.prepare(&s.reference_caption).map_err(data_err)?;
                Ok(TrainItem {
                    id: s.id.clone(),
                    context,
                    reference,
                })
            })
            .collect()
    }
}

/// Holds the frozen reference policy, reward model and prompt schedule.
pub struct GrpoTrainer<'a> {
    config: GrpoConfig,
    reference: PolicyParams,
    model: &'a RewardModel,
    items: Vec<TrainItem>,
    pass_order: Option<(usize, Vec<usize>)>,
}

impl<'a> GrpoTrainer<'a> {
    pub fn new(
        config: GrpoConfig,
        dataset: &[CaptionSample],
        reference: PolicyParams,
        model: &'a RewardModel,
    ) -> Result<Self> {
        config.validate()?;
        if dataset.is_empty() {
            return Err(Error::Config("grpo dataset is empty".into()));
        }
        let items = TrainItem::prepare_all(&reference, dataset, model)?;
        Ok(Self {
            config,
            reference,
            model,
            items,
            pass_order: None,
        })
    }

    pub fn config(&self) -> &GrpoConfig {
        &self.config
    }

    pub fn reference(&self) -> &PolicyParams {
        &self.reference
    }

    /// Item at global schedule position `q`: passes over the data in an order
    /// reshuffled per pass.
    fn item_at(&mut self, q: usize) -> usize {
        let n = self.items.len();
        let pass = q / n;
        if self.pass_order.as_ref().map(|(p, _)| *p) != Some(pass) {
            let mut order: Vec<usize> = (0..n).collect();
            SplitMix64::new(derive_seed(
                self.config.seed,
                Stream::GrpoBatch,
                &[pass as u64],
            ))
            .shuffle(&mut order);
            self.pass_order = Some((pass, order));
        }
        self.pass_order.as_ref().unwrap().1[q % n]
    }

    /// Sample and score the groups for optimizer step `step` without updating.
    pub fn collect(
        &mut self,
        params: &PolicyParams,
        step: usize,
    ) -> Result<(Vec<RolloutGroup>, GrpoRecord)> {
        let cfg = self.config.clone();
        let per_step = cfg.prompts_per_step();
        let mut groups = Vec::with_capacity(per_step);
        let mut totals = Vec::new();
        let (mut sum_emo, mut sum_bleu, mut sum_spice, mut sum_kl) = (0.0, 0.0, 0.0, 0.0);
        let mut advs = Vec::new();
        let mut degenerate = 0;
        let mut zero_adv_groups = 0;
        let mut example = String::new();
        for slot in 0..per_step {
            let idx = self.item_at(step * per_step + slot);
            let item = &self.items[idx];
            let mut samples = Vec::with_capacity(cfg.group_size);
            let mut rewards = Vec::with_capacity(cfg.group_size);
            for member in 0..cfg.group_size {
                let seed = derive_seed(
                    cfg.seed,
                    Stream::GrpoRollout,
                    &[step as u64, slot as u64, member as u64],
                );
                let s = params.sample(item.context, cfg.temperature, cfg.max_response_len, seed);
                let text = params.decode(&s.ids);
                let b = self.model.score_prepared(&text, &item.reference)?;
                if slot == 0 && member == 0 {
                    example = text;
                }
                sum_emo += b.r_emo;
                sum_bleu += b.s_bleu;
                sum_spice += b.s_spice;
                sum_kl += mean_k3(params, &self.reference, item.context, &s.ids, s.terminated);
                degenerate += b.degenerate as usize;
                rewards.push(b.r_total);
                samples.push(s);
            }
            let a = group_advantages(&rewards, cfg.adv_epsilon);
            if a.iter().all(|&x| x == 0.0) {
                zero_adv_groups += 1;
            }
            totals.extend_from_slice(&rewards);
            advs.extend_from_slice(&a);
            let rollouts = samples
                .into_iter()
                .zip(a)
                .map(|(s, advantage)| Rollout {
                    ids: s.ids,
                    terminated: s.terminated,
                    old_log_probs: s.log_probs,
                    advantage,
                })
                .collect();
            groups.push(RolloutGroup {
                context: item.context,
                rollouts,
            });
        }
        let n = totals.len() as f64;
        let adv_mean = advs.iter().sum::<f64>() / n;
        let adv_std = (advs.iter().map(|a| (a - adv_mean).powi(2)).sum::<f64>() / n).sqrt();
        let record = GrpoRecord {
            step,
            learning_rate: warmup_lr(cfg.learning_rate, step, cfg.steps, cfg.warmup_ratio),
            mean_r_total: totals.iter().sum::<f64>() / n,
            max_r_total: totals.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            mean_r_emo: sum_emo / n,
            mean_s_bleu: sum_bleu / n,
            mean_s_spice: sum_spice / n,
            mean_kl: sum_kl / n,
            adv_mean,
            adv_std,
            zero_adv_groups,
            degenerate,
            grad_norm: 0.0,
            grad_clipped: false,
            example,
        };
        Ok((groups, record))
    }

    /// One optimizer step: collect rollouts, ascend the surrogate.
    pub fn step(&mut self, params: &mut PolicyParams, step: usize) -> Result<GrpoRecord> {
        let (groups, mut record) = self.collect(params, step)?;
        let surrogate = Surrogate {
            kl_coeff: self.config.kl_coeff,
            clip_eps: self.config.clip_eps,
        };
        let mut grad = surrogate.gradient(params, &self.reference, &groups);
        let norm = grad.norm();
        if !norm.is_finite() {
            return Err(Error::Divergence {
                step,
                message: format!(
                    "non-finite gradient (mean reward {}, mean kl {})",
                    record.mean_r_total, record.mean_kl
                ),
                last_good: Some(Box::new(params.clone())),
            });
        }
        record.grad_norm = norm;
        if self.config.max_grad_norm > 0.0 && norm > self.config.max_grad_norm {
            grad.scale(self.config.max_grad_norm / norm);
            record.grad_clipped = true;
        }
        params.apply(&grad, record.learning_rate);
        Ok(record)
    }
}

/// Run `config.steps` optimizer steps starting from (and regularised towards)
/// the supervised checkpoint.
pub fn run_grpo(
    config: &GrpoConfig,
    dataset: &[CaptionSample],
    sft_params: &PolicyParams,
    model: &RewardModel,
) -> Result<(PolicyParams, TrainLog<GrpoRecord>)> {
    let mut trainer = GrpoTrainer::new(config.clone(), dataset, sft_params.clone(), model)?;
    let mut params = sft_params.clone();
    let mut log = TrainLog::default();
    for step in 0..config.steps {
        log.push(trainer.step(&mut params, step)?);
    }
    Ok((params, log))
}

/// Tokenize and encode, for callers holding caption text.
pub fn encode_caption(params: &PolicyParams, text: &str) -> Result<Vec<usize>> {
    params.encode(&tokenize(text))
}
