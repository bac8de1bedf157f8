use alloc::vec::Vec;

use super::policy_topk;
use crate::datamodel::{Episode, Item};
use crate::environment::{score, Scorer};
use crate::error::{Error, Result};
use crate::numerics::{adam_step, AdamState, Tape};
use crate::retriever::{sample_set, Retriever};
use crate::rng::{self, Rng};

/// Settings of test-time adaptation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TtaConfig {
    pub lr: f64,
    /// Acquisition rounds, each followed by one policy-gradient step.
    pub rounds: usize,
    /// Size of the prompt sets sampled for the reward; normally the `k`
    /// the adapted policy will be asked for.
    pub set_size: usize,
    /// Policy samples averaged into each update.
    pub samples: usize,
    /// Random baseline draws per sample.
    pub baselines: usize,
}

impl Default for TtaConfig {
    fn default() -> Self {
        TtaConfig { lr: 1e-5, rounds: 10, set_size: 2, samples: 16, baselines: 1 }
    }
}

impl TtaConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::invalid("tta learning rate must be finite and >= 0"));
        }
        if self.set_size == 0 || self.samples == 0 || self.baselines == 0 {
            return Err(Error::invalid("set_size, samples and baselines must be positive"));
        }
        Ok(())
    }
}

/// Progress of test-time adaptation on one task.
#[derive(Debug, Clone)]
pub struct TtaState {
    /// Support positions not yet acquired.
    pub remaining: Vec<usize>,
    /// Labeled items gathered so far, starting from the seed set.
    pub labeled: Vec<Item>,
    /// Acquired support positions in acquisition order.
    pub acquired: Vec<usize>,
    adam: AdamState,
    cfg: TtaConfig,
}

impl TtaState {
    pub fn new(model: &Retriever, episode: &Episode, seed_labeled: Vec<Item>, cfg: TtaConfig) -> Result<Self> {
        cfg.validate()?;
        if seed_labeled.is_empty() {
            return Err(Error::invalid("test-time adaptation needs a nonempty labeled set"));
        }
        Ok(TtaState {
            remaining: (0..episode.support.len()).collect(),
            labeled: seed_labeled,
            acquired: Vec::new(),
            adam: AdamState::new(model.params(), cfg.lr),
            cfg,
        })
    }
}

/// One acquisition round.
///
/// Samples `cfg.samples` prompt sets from the policy restricted to the
/// not-yet-acquired pool and scores each against the labeled set, relative
/// to random sets from the same remaining pool. One Adam step follows on the
/// averaged `-shaped * log_prob`. The first draw of the first sample is
/// acquired: its mask is revealed and it joins the labeled set after the
/// update, so it never scores itself. Returns the acquired support position.
pub fn tta_update(
    model: &mut Retriever,
    episode: &Episode,
    state: &mut TtaState,
    scorer: &mut dyn Scorer,
    rng: &mut Rng,
) -> Result<usize> {
    if state.remaining.is_empty() {
        return Err(Error::EmptyPool);
    }
    let cfg = state.cfg;
    let size = cfg.set_size.min(state.remaining.len());
    let support = episode.support_matrix()?;
    let query = episode.query_matrix()?;
    let queries: Vec<&Item> = state.labeled.iter().collect();
    let prompts =
        |picks: &[usize]| -> Vec<&Item> { picks.iter().map(|&i| &episode.support[state.remaining[i]]).collect() };

    model.params_mut().zero_grads();
    let mut pick = None;
    for _ in 0..cfg.samples {
        let mut tape = Tape::new();
        let logits = model.encode_task(&mut tape, &support, &query)?;
        let open = tape.gather(logits, &state.remaining)?;
        let sel = sample_set(&mut tape, open, size, rng)?;
        pick.get_or_insert(sel.indices[0]);
        let raw = score(&prompts(&sel.indices), &queries, scorer)?.dice;
        let mut base = 0.0;
        for _ in 0..cfg.baselines {
            let other = rng::sample_indices(rng, state.remaining.len(), size);
            base += score(&prompts(&other), &queries, scorer)?.dice;
        }
        let shaped = raw - base / cfg.baselines as f64;
        let loss = tape.scale(sel.log_prob, -shaped / cfg.samples as f64);
        tape.backward(loss, model.params_mut())?;
    }
    adam_step(model.params_mut(), &mut state.adam)?;

    let pick = state.remaining.remove(pick.expect("at least one sample"));
    state.labeled.push(episode.support[pick].clone());
    state.acquired.push(pick);
    Ok(pick)
}

/// Adapts a copy of `model` for `cfg.rounds` acquisition rounds and returns
/// the adapted policy's top-`k` prompts. The input model is not modified.
pub fn tta_select(
    model: &Retriever,
    episode: &Episode,
    seed_labeled: Vec<Item>,
    k: usize,
    cfg: &TtaConfig,
    scorer: &mut dyn Scorer,
    rng: &mut Rng,
) -> Result<Vec<usize>> {
    let mut adapted = model.clone();
    let mut state = TtaState::new(&adapted, episode, seed_labeled, *cfg)?;
    // Leave at least `set_size` items so the last round still samples full sets.
    let rounds = cfg.rounds.min(episode.support.len().saturating_sub(cfg.set_size));
    for _ in 0..rounds {
        tta_update(&mut adapted, episode, &mut state, scorer, rng)?;
    }
    policy_topk(&adapted, episode, k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::{sample_meta_task, Phase};
    use crate::environment::{synth_generate, Surrogate, SynthSpec};
    use crate::retriever::RetrieverConfig;
    use alloc::collections::BTreeSet;

    fn setup() -> (Retriever, Episode, Vec<Item>) {
        let ds = synth_generate(&SynthSpec { records: 100, ..SynthSpec::default() }).unwrap();
        let t = sample_meta_task(&ds, 8, 5, Phase::Train, &mut rng::seeded(1)).unwrap();
        let ep = ds.materialize(&t).unwrap();
        let seed = ep.query[..2].to_vec();
        let model = Retriever::new(
            RetrieverConfig { d_model: 8, n_heads: 2, n_encoder: 1, d_ff: 16, ..RetrieverConfig::default() },
            0,
        )
        .unwrap();
        (model, ep, seed)
    }

    #[test]
    fn zero_lr_leaves_model_and_grows_labeled_set() {
        let (mut model, ep, seed) = setup();
        let before = model.params().clone();
        let mut st =
            TtaState::new(&model, &ep, seed, TtaConfig { lr: 0.0, samples: 2, ..TtaConfig::default() }).unwrap();
        tta_update(&mut model, &ep, &mut st, &mut Surrogate::default(), &mut rng::seeded(0)).unwrap();
        assert_eq!(st.labeled.len(), 3);
        for (a, b) in model.params().iter().zip(before.iter()) {
            assert_eq!(a.value, b.value);
        }
    }

    #[test]
    fn never_acquires_twice_and_errors_when_exhausted() {
        let (mut model, ep, seed) = setup();
        let mut st =
            TtaState::new(&model, &ep, seed, TtaConfig { lr: 1e-3, samples: 2, ..TtaConfig::default() }).unwrap();
        let mut r = rng::seeded(2);
        for _ in 0..8 {
            tta_update(&mut model, &ep, &mut st, &mut Surrogate::default(), &mut r).unwrap();
        }
        let distinct: BTreeSet<usize> = st.acquired.iter().copied().collect();
        assert_eq!(distinct.len(), 8);
        assert_eq!(tta_update(&mut model, &ep, &mut st, &mut Surrogate::default(), &mut r), Err(Error::EmptyPool));
    }

    #[test]
    fn needs_labeled_seed() {
        let (model, ep, _) = setup();
        assert!(TtaState::new(&model, &ep, Vec::new(), TtaConfig::default()).is_err());
    }
}
