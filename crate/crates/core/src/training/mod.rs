//! Policy-gradient meta-training of the retriever and test-time adaptation.

mod meta_train;
mod tta;

use alloc::vec::Vec;

pub use meta_train::{meta_train, validation_reward, EpochStats, TrainHooks, TrainOutcome, TrainReport};
pub use tta::{tta_select, tta_update, TtaConfig, TtaState};

use crate::datamodel::Episode;
use crate::environment::{reward, Scorer};
use crate::error::{Error, Result};
use crate::numerics::{adam_step, AdamState, Tape};
use crate::retriever::{sample_set, Retriever};
use crate::rng::{self, Rng};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub tasks_per_epoch: usize,
    /// Probability that a training task is replaced by a mixed task.
    pub mixup_ratio: f64,
    /// Upper end of the uniform range the mixing ratio is drawn from.
    pub mixup_max_lambda: f64,
    /// Prompt-set size sampled during training and selected at validation.
    pub k_train: usize,
    pub seed: u64,
    pub tta_lr: f64,
    /// Random baseline draws averaged per shaped reward.
    pub baselines: usize,
    /// Support pool size of sampled tasks.
    pub n_support: usize,
    /// Query set size of sampled tasks.
    pub n_query: usize,
    pub validation_tasks: usize,
    pub validation_heldout_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-4,
            batch_size: 64,
            epochs: 10,
            tasks_per_epoch: 2000,
            mixup_ratio: 0.1,
            mixup_max_lambda: 0.5,
            k_train: 2,
            seed: 0,
            tta_lr: 1e-5,
            baselines: 1,
            n_support: 1000,
            n_query: 100,
            validation_tasks: 50,
            validation_heldout_fraction: 0.5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("batch_size", self.batch_size),
            ("tasks_per_epoch", self.tasks_per_epoch),
            ("k_train", self.k_train),
            ("baselines", self.baselines),
            ("n_support", self.n_support),
            ("n_query", self.n_query),
            ("validation_tasks", self.validation_tasks),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::invalid(alloc::format!("{name} must be positive")));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) || !(self.tta_lr >= 0.0 && self.tta_lr.is_finite()) {
            return Err(Error::invalid("learning rates must be finite, lr > 0, tta_lr >= 0"));
        }
        for (name, v) in [
            ("mixup_ratio", self.mixup_ratio),
            ("mixup_max_lambda", self.mixup_max_lambda),
            ("validation_heldout_fraction", self.validation_heldout_fraction),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::invalid(alloc::format!("{name} must lie in [0, 1]")));
            }
        }
        if self.k_train > self.n_support {
            return Err(Error::InvalidK { k: self.k_train, n: self.n_support });
        }
        Ok(())
    }
}

/// Raw reward of a selection, the random-baseline reward it is compared
/// against, and their difference.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardSample {
    pub raw: f64,
    pub baseline: f64,
    pub shaped: f64,
}

/// `R(p) - mean_b R(p'_b)` where each `p'_b` is drawn uniformly without
/// replacement from the same pool with `|p'_b| = |p|`.
pub fn shaped_reward(
    indices: &[usize],
    episode: &Episode,
    scorer: &mut dyn Scorer,
    baselines: usize,
    rng: &mut Rng,
) -> Result<RewardSample> {
    let n = episode.support.len();
    if indices.is_empty() || indices.len() > n {
        return Err(Error::InvalidK { k: indices.len(), n });
    }
    if baselines == 0 {
        return Err(Error::invalid("at least one baseline draw is required"));
    }
    let raw = reward(indices, episode, scorer)?;
    let mut total = 0.0;
    for _ in 0..baselines {
        let other = rng::sample_indices(rng, n, indices.len());
        total += reward(&other, episode, scorer)?;
    }
    let baseline = total / baselines as f64;
    Ok(RewardSample { raw, baseline, shaped: raw - baseline })
}

/// Batch averages from one optimizer step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepStats {
    pub mean_shaped: f64,
    pub mean_raw: f64,
}

/// One REINFORCE update: for each task sample a `k`-set from the policy,
/// score it with `reward_fn`, accumulate `-shaped * log_prob / batch`, then
/// take a single Adam step.
pub fn reinforce_step<F>(
    model: &mut Retriever,
    adam: &mut AdamState,
    batch: &[Episode],
    k: usize,
    rng: &mut Rng,
    mut reward_fn: F,
) -> Result<StepStats>
where
    F: FnMut(&Episode, &[usize], &mut Rng) -> Result<RewardSample>,
{
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    model.params_mut().zero_grads();
    let scale = 1.0 / batch.len() as f64;
    let (mut shaped, mut raw) = (0.0, 0.0);
    for (index, ep) in batch.iter().enumerate() {
        let mut tape = Tape::new();
        let logits = model.encode_task(&mut tape, &ep.support_matrix()?, &ep.query_matrix()?)?;
        let sel = sample_set(&mut tape, logits, k, rng)?;
        let r = reward_fn(ep, &sel.indices, rng)?;
        let lp = tape.value(sel.log_prob).item();
        if !(lp.is_finite() && r.shaped.is_finite()) {
            return Err(Error::NonFiniteLoss(index));
        }
        shaped += r.shaped;
        raw += r.raw;
        let loss = tape.scale(sel.log_prob, -r.shaped * scale);
        tape.backward(loss, model.params_mut())?;
    }
    adam_step(model.params_mut(), adam)?;
    Ok(StepStats { mean_shaped: shaped * scale, mean_raw: raw * scale })
}

/// [`shaped_reward`] as a reward function for [`reinforce_step`].
pub fn shaped_reward_fn(
    scorer: &mut dyn Scorer,
    baselines: usize,
) -> impl FnMut(&Episode, &[usize], &mut Rng) -> Result<RewardSample> + '_ {
    move |ep, idx, rng| shaped_reward(idx, ep, scorer, baselines, rng)
}

/// Deterministic top-`k` selection of the policy for `episode`.
pub fn policy_topk(model: &Retriever, episode: &Episode, k: usize) -> Result<Vec<usize>> {
    let probs = model.probs(&episode.support_matrix()?, &episode.query_matrix()?)?;
    crate::retriever::select_topk(&probs, k)
}
