//! Rewards: segmentation metrics, scorers that stand in for a frozen vision
//! model, and synthetic data.

pub mod metrics;
pub mod surrogate;
pub mod synth;

use alloc::vec::Vec;

pub use metrics::{dice, miou};
pub use surrogate::{surrogate_predict, Surrogate, SurrogateParams};
pub use synth::{synth_generate, SynthSpec};

use crate::datamodel::{Episode, Item};
use crate::error::{Error, Result};
use crate::mask::Mask;

/// Anything that segments query images given prompt image/mask pairs.
pub trait Scorer {
    /// One predicted mask per query, in query order.
    fn predict(&mut self, prompts: &[&Item], queries: &[&Item]) -> Result<Vec<Mask>>;
}

impl<S: Scorer + ?Sized> Scorer for &mut S {
    fn predict(&mut self, prompts: &[&Item], queries: &[&Item]) -> Result<Vec<Mask>> {
        (**self).predict(prompts, queries)
    }
}

/// Mean DICE and mean mIoU of one prompt set over a query set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Score {
    pub dice: f64,
    pub miou: f64,
}

pub fn score(prompts: &[&Item], queries: &[&Item], scorer: &mut dyn Scorer) -> Result<Score> {
    if queries.is_empty() {
        return Err(Error::invalid("empty query set"));
    }
    let preds = scorer.predict(prompts, queries)?;
    if preds.len() != queries.len() {
        return Err(Error::Scorer {
            index: preds.len().min(queries.len()),
            message: alloc::format!("response count mismatch: {} masks for {} queries", preds.len(), queries.len()),
        });
    }
    let (mut d, mut j) = (0.0, 0.0);
    for (index, (q, p)) in queries.iter().zip(&preds).enumerate() {
        let wrap = |e: Error| Error::Scorer { index, message: alloc::format!("{e}") };
        d += dice(&q.mask, p).map_err(wrap)?;
        j += miou(&q.mask, p).map_err(wrap)?;
    }
    let m = queries.len() as f64;
    Ok(Score { dice: d / m, miou: j / m })
}

/// Mean DICE over the episode's query set when prompting with the support
/// items at `indices`.
pub fn reward(indices: &[usize], episode: &Episode, scorer: &mut dyn Scorer) -> Result<f64> {
    Ok(score_selection(indices, episode, scorer)?.dice)
}

pub fn score_selection(indices: &[usize], episode: &Episode, scorer: &mut dyn Scorer) -> Result<Score> {
    if let Some(&bad) = indices.iter().find(|&&i| i >= episode.support.len()) {
        return Err(Error::InvalidK { k: bad, n: episode.support.len() });
    }
    let prompts = episode.selected(indices);
    let queries: Vec<&Item> = episode.query.iter().collect();
    score(&prompts, &queries, scorer)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::{sample_meta_task, Phase};
    use crate::rng;
    use alloc::string::ToString;
    use alloc::vec;

    /// Returns each query's ground truth.
    struct Echo;
    impl Scorer for Echo {
        fn predict(&mut self, _: &[&Item], queries: &[&Item]) -> Result<Vec<Mask>> {
            Ok(queries.iter().map(|q| q.mask.clone()).collect())
        }
    }

    /// Perfect on the first query, inverted on the rest.
    struct Alternating;
    impl Scorer for Alternating {
        fn predict(&mut self, _: &[&Item], queries: &[&Item]) -> Result<Vec<Mask>> {
            Ok(queries
                .iter()
                .enumerate()
                .map(|(i, q)| {
                    if i == 0 {
                        q.mask.clone()
                    } else {
                        Mask::from_fn(q.mask.h(), q.mask.w(), |r, c| !q.mask.get(r, c))
                    }
                })
                .collect())
        }
    }

    fn episode(m: usize) -> Episode {
        let ds = synth_generate(&SynthSpec { records: 30, ..SynthSpec::default() }).unwrap();
        let t = sample_meta_task(&ds, 6, m, Phase::Train, &mut rng::seeded(7)).unwrap();
        ds.materialize(&t).unwrap()
    }

    #[test]
    fn echo_scorer_is_perfect() {
        assert_eq!(reward(&[0], &episode(1), &mut Echo).unwrap(), 1.0);
    }

    #[test]
    fn reward_is_mean_over_queries() {
        assert_eq!(reward(&[0], &episode(2), &mut Alternating).unwrap(), 0.5);
    }

    /// n = 6, m = 3, seed 7, prompts {0, 1}: recompute by hand.
    #[test]
    fn composes_surrogate_and_dice() {
        let ep = episode(3);
        let params = SurrogateParams::default();
        let prompts = [&ep.support[0], &ep.support[1]];
        let mut total = 0.0;
        for q in &ep.query {
            let pred = surrogate_predict(&prompts, q, &params).unwrap();
            total += dice(&q.mask, &pred).unwrap();
        }
        let r = reward(&[0, 1], &ep, &mut Surrogate(params)).unwrap();
        assert_eq!(r, total / 3.0);
        assert_eq!(r, reward(&[1, 0], &ep, &mut Surrogate(params)).unwrap());
    }

    #[test]
    fn short_response_is_an_error() {
        struct Short;
        impl Scorer for Short {
            fn predict(&mut self, _: &[&Item], _: &[&Item]) -> Result<Vec<Mask>> {
                Ok(vec![])
            }
        }
        let err = reward(&[0], &episode(2), &mut Short).unwrap_err();
        assert!(err.to_string().contains("response count mismatch"));
    }
}
