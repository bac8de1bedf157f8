use alloc::vec::Vec;
use core::sync::atomic::{AtomicBool, Ordering};

use super::{policy_topk, reinforce_step, shaped_reward_fn, TrainConfig};
use crate::datamodel::{mixup_episodes, sample_meta_task, Dataset, Episode, MetaTask, Phase};
use crate::environment::{reward, Scorer};
use crate::error::Result;
use crate::numerics::{AdamState, ParamSet};
use crate::retriever::Retriever;
use crate::rng::{self, Rng};

const STREAM_TASKS: u64 = 1;
const STREAM_STEPS: u64 = 2;
const STREAM_VALIDATION: u64 = 3;

/// Summary of one completed epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    /// 1-based.
    pub epoch: usize,
    pub mean_shaped_reward: f64,
    pub mean_raw_reward: f64,
    pub val_reward: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainReport {
    /// Validation reward of the model before any update.
    pub initial_val_reward: Option<f64>,
    pub epochs: Vec<EpochStats>,
    /// Set when training stopped early on request.
    pub interrupted: bool,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub report: TrainReport,
    /// Parameters after the epoch with the highest validation reward.
    pub best_params: Option<ParamSet>,
    pub best_epoch: Option<usize>,
    /// Optimizer steps taken.
    pub steps: u64,
}

/// Optional observers for [`meta_train`].
#[derive(Default)]
pub struct TrainHooks<'a> {
    /// Monotonic seconds, used for the per-epoch wall-clock column.
    pub clock: Option<&'a dyn Fn() -> f64>,
    /// Checked before every batch; when set, training stops and the epochs
    /// completed so far are reported.
    pub interrupt: Option<&'a AtomicBool>,
    pub on_epoch: Option<&'a mut dyn FnMut(&EpochStats)>,
}

/// Mean raw reward of the policy's top-`k` selection over `episodes`.
pub fn validation_reward(model: &Retriever, episodes: &[Episode], k: usize, scorer: &mut dyn Scorer) -> Result<f64> {
    let mut total = 0.0;
    for ep in episodes {
        total += reward(&policy_topk(model, ep, k)?, ep, scorer)?;
    }
    Ok(total / episodes.len().max(1) as f64)
}

/// Meta-trains `model` on train-phase tasks from `dataset`.
///
/// `tasks_per_epoch` tasks are drawn once and revisited in a fresh order each
/// epoch. Each visit is replaced by a mix with a newly drawn task with
/// probability `mixup_ratio`. After every epoch the deterministic top-`k`
/// policy is scored on a fixed set of validation-phase tasks.
pub fn meta_train(
    model: &mut Retriever,
    dataset: &Dataset,
    cfg: &TrainConfig,
    scorer: &mut dyn Scorer,
    mut hooks: TrainHooks<'_>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut outcome = TrainOutcome { report: TrainReport::default(), best_params: None, best_epoch: None, steps: 0 };
    if cfg.epochs == 0 {
        return Ok(outcome);
    }
    let now = |h: &TrainHooks<'_>| h.clock.map_or(0.0, |c| c());
    let stop = |h: &TrainHooks<'_>| h.interrupt.is_some_and(|f| f.load(Ordering::Relaxed));

    let mut task_rng = rng::seeded(rng::derive_seed(cfg.seed, STREAM_TASKS));
    let mut step_rng = rng::seeded(rng::derive_seed(cfg.seed, STREAM_STEPS));
    let mut val_rng = rng::seeded(rng::derive_seed(cfg.seed, STREAM_VALIDATION));
    let (n, m) = (cfg.n_support, cfg.n_query);

    let tasks: Vec<MetaTask> = (0..cfg.tasks_per_epoch)
        .map(|_| sample_meta_task(dataset, n, m, Phase::Train, &mut task_rng))
        .collect::<Result<_>>()?;
    let val_phase = Phase::Validation { heldout_fraction: cfg.validation_heldout_fraction };
    let validation: Vec<Episode> = (0..cfg.validation_tasks)
        .map(|_| dataset.materialize(&sample_meta_task(dataset, n, m, val_phase, &mut val_rng)?))
        .collect::<Result<_>>()?;

    let mut adam = AdamState::new(model.params(), cfg.lr);
    let mut best = validation_reward(model, &validation, cfg.k_train, scorer)?;
    outcome.report.initial_val_reward = Some(best);
    best = f64::NEG_INFINITY;

    'epochs: for epoch in 1..=cfg.epochs {
        let started = now(&hooks);
        let mut order: Vec<usize> = (0..tasks.len()).collect();
        rng::shuffle(&mut step_rng, &mut order);
        let (mut shaped, mut raw, mut seen) = (0.0, 0.0, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            if stop(&hooks) {
                outcome.report.interrupted = true;
                break 'epochs;
            }
            let batch = chunk
                .iter()
                .map(|&t| training_episode(dataset, &tasks[t], cfg, &mut step_rng))
                .collect::<Result<Vec<_>>>()?;
            let stats = reinforce_step(
                model,
                &mut adam,
                &batch,
                cfg.k_train,
                &mut step_rng,
                shaped_reward_fn(scorer, cfg.baselines),
            )?;
            shaped += stats.mean_shaped * batch.len() as f64;
            raw += stats.mean_raw * batch.len() as f64;
            seen += batch.len();
        }
        let val_reward = validation_reward(model, &validation, cfg.k_train, scorer)?;
        let stats = EpochStats {
            epoch,
            mean_shaped_reward: shaped / seen as f64,
            mean_raw_reward: raw / seen as f64,
            val_reward,
            seconds: now(&hooks) - started,
        };
        if val_reward > best {
            best = val_reward;
            outcome.best_params = Some(model.params().clone());
            outcome.best_epoch = Some(epoch);
        }
        outcome.report.epochs.push(stats);
        if let Some(f) = hooks.on_epoch.as_mut() {
            f(&stats);
        }
    }
    outcome.steps = adam.step;
    Ok(outcome)
}

fn training_episode(ds: &Dataset, task: &MetaTask, cfg: &TrainConfig, rng: &mut Rng) -> Result<Episode> {
    let anchor = ds.materialize(task)?;
    if cfg.mixup_ratio > 0.0 && rng::uniform(rng) < cfg.mixup_ratio {
        let partner = sample_meta_task(ds, cfg.n_support, cfg.n_query, Phase::Train, rng)?;
        let lambda = rng::uniform(rng) * cfg.mixup_max_lambda;
        let (mixed, _) = mixup_episodes(&anchor, &ds.materialize(&partner)?, lambda)?;
        return Ok(mixed);
    }
    Ok(anchor)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::{synth_generate, Surrogate, SynthSpec};
    use crate::retriever::RetrieverConfig;
    use alloc::collections::BTreeSet;

    fn setup() -> (Retriever, Dataset, TrainConfig) {
        let ds = synth_generate(&SynthSpec { records: 300, ..SynthSpec::default() }).unwrap();
        let ds = crate::datamodel::split_heldout(&ds, &BTreeSet::from([7])).unwrap();
        let model = Retriever::new(
            RetrieverConfig { d_model: 8, n_heads: 2, n_encoder: 1, d_ff: 16, ..RetrieverConfig::default() },
            0,
        )
        .unwrap();
        let cfg = TrainConfig {
            lr: 1e-3,
            batch_size: 4,
            epochs: 2,
            tasks_per_epoch: 8,
            n_support: 10,
            n_query: 4,
            validation_tasks: 3,
            mixup_ratio: 0.5,
            ..TrainConfig::default()
        };
        (model, ds, cfg)
    }

    #[test]
    fn zero_epochs_is_a_no_op() {
        let (mut model, ds, cfg) = setup();
        let before = model.params().clone();
        let out = meta_train(
            &mut model,
            &ds,
            &TrainConfig { epochs: 0, ..cfg },
            &mut Surrogate::default(),
            TrainHooks::default(),
        )
        .unwrap();
        assert!(out.report.epochs.is_empty());
        assert_eq!(model.params(), &before);
    }

    #[test]
    fn seeded_runs_are_identical() {
        let (model, ds, cfg) = setup();
        let run = || {
            let mut m = model.clone();
            let out = meta_train(&mut m, &ds, &cfg, &mut Surrogate::default(), TrainHooks::default()).unwrap();
            (out.report, m.params().clone(), out.steps)
        };
        let (a, pa, sa) = run();
        let (b, pb, sb) = run();
        assert_eq!(a, b);
        assert_eq!(pa, pb);
        assert_eq!(sa, 4);
        assert_eq!(sa, sb);
        assert_eq!(a.epochs.len(), 2);
    }

    #[test]
    fn interrupt_returns_partial_report() {
        let (mut model, ds, cfg) = setup();
        let flag = AtomicBool::new(false);
        let mut seen = 0;
        let mut on_epoch = |_: &EpochStats| {
            seen += 1;
            flag.store(true, Ordering::Relaxed);
        };
        let hooks = TrainHooks { interrupt: Some(&flag), on_epoch: Some(&mut on_epoch), ..TrainHooks::default() };
        let out =
            meta_train(&mut model, &ds, &TrainConfig { epochs: 5, ..cfg }, &mut Surrogate::default(), hooks).unwrap();
        assert!(out.report.interrupted);
        assert_eq!(out.report.epochs.len(), 1);
        assert_eq!(seen, 1);
        assert_eq!(out.best_epoch, Some(1));
    }
}
