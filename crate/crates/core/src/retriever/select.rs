use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::numerics::{Tape, Var};
use crate::rng::{self, Rng};

/// Indices of the `k` largest probabilities, largest first; ties go to the
/// lower index.
pub fn select_topk(probs: &[f64], k: usize) -> Result<Vec<usize>> {
    if k == 0 || k > probs.len() {
        return Err(Error::InvalidK { k, n: probs.len() });
    }
    let mut order: Vec<usize> = (0..probs.len()).collect();
    // Stable sort keeps index order among equal values.
    order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]));
    order.truncate(k);
    Ok(order)
}

/// A sampled prompt set and its differentiable log-probability.
#[derive(Debug, Clone)]
pub struct SelectionOutcome {
    /// Draw order.
    pub indices: Vec<usize>,
    /// Scalar node on the tape the logits came from.
    pub log_prob: Var,
    pub probs: Vec<f64>,
}

/// Draws `k` distinct indices from `probs` one at a time, renormalizing over
/// the remaining items after each draw.
pub fn sample_indices(probs: &[f64], k: usize, rng: &mut Rng) -> Result<Vec<usize>> {
    if k == 0 || k > probs.len() {
        return Err(Error::InvalidK { k, n: probs.len() });
    }
    let mut taken = alloc::vec![false; probs.len()];
    let mut out = Vec::with_capacity(k);
    for _ in 0..k {
        let mass: f64 = probs.iter().zip(&taken).filter(|(_, &t)| !t).map(|(p, _)| p).sum();
        let target = rng::uniform(rng) * mass;
        let mut acc = 0.0;
        let mut pick = None;
        for (i, &p) in probs.iter().enumerate() {
            if taken[i] {
                continue;
            }
            // Fallback for rounding at the top of the range.
            pick = Some(i);
            acc += p;
            if target < acc {
                break;
            }
        }
        let i = pick.expect("k <= n leaves an item to draw");
        taken[i] = true;
        out.push(i);
    }
    Ok(out)
}

/// Log-probability of drawing `indices` in order under sequential sampling
/// without replacement from `softmax(logits)`, recorded on `tape`.
pub fn sequence_log_prob(tape: &mut Tape, logits: Var, indices: &[usize]) -> Result<Var> {
    let n = tape.value(logits).len();
    if indices.is_empty() || indices.len() > n {
        return Err(Error::InvalidK { k: indices.len(), n });
    }
    let probs = tape.softmax(logits);
    let picked = tape.gather(probs, indices)?;
    let logs = tape.log(picked);
    let mut log_prob = tape.sum(logs);
    let mut remaining: Vec<usize> = (0..n).collect();
    for &i in &indices[..indices.len() - 1] {
        remaining.retain(|&r| r != i);
        let rest = tape.gather(probs, &remaining)?;
        let mass = tape.sum(rest);
        let log_mass = tape.log(mass);
        log_prob = tape.sub(log_prob, log_mass)?;
    }
    Ok(log_prob)
}

/// Samples a prompt set of size `k` from the policy with logits `logits`.
pub fn sample_set(tape: &mut Tape, logits: Var, k: usize, rng: &mut Rng) -> Result<SelectionOutcome> {
    let probs = crate::numerics::softmax(tape.value(logits).data())?;
    let indices = sample_indices(&probs, k, rng)?;
    let log_prob = sequence_log_prob(tape, logits, &indices)?;
    Ok(SelectionOutcome { indices, log_prob, probs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{softmax, Tensor};
    use alloc::vec;
    use proptest::prelude::*;

    #[test]
    fn topk_examples() {
        assert_eq!(select_topk(&[0.1, 0.5, 0.4], 2).unwrap(), vec![1, 2]);
        assert_eq!(select_topk(&[0.25; 4], 2).unwrap(), vec![0, 1]);
        assert_eq!(select_topk(&[0.5, 0.5], 3), Err(Error::InvalidK { k: 3, n: 2 }));
    }

    #[test]
    fn topk_matches_full_sort() {
        let mut r = rng::seeded(4);
        let p: Vec<f64> = (0..20).map(|_| rng::uniform(&mut r)).collect();
        let mut sorted: Vec<(f64, usize)> = p.iter().copied().zip(0..).collect();
        sorted.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
        let want: Vec<usize> = sorted[..5].iter().map(|x| x.1).collect();
        assert_eq!(select_topk(&p, 5).unwrap(), want);
    }

    fn run(logits: &[f64], k: usize, seed: u64) -> (Vec<usize>, f64) {
        let mut tape = Tape::new();
        let l = tape.constant(Tensor::vector(logits.to_vec()));
        let out = sample_set(&mut tape, l, k, &mut rng::seeded(seed)).unwrap();
        (out.indices, tape.value(out.log_prob).item())
    }

    #[test]
    fn full_draw_is_a_permutation() {
        let logits = [0.2, -0.4, 1.0, 0.0];
        let (idx, lp) = run(&logits, 4, 1);
        let mut sorted = idx.clone();
        sorted.sort();
        assert_eq!(sorted, vec![0, 1, 2, 3]);
        let p = softmax(&logits).unwrap();
        let mut rest = 1.0;
        let mut want = 1.0;
        for &i in &idx {
            want *= p[i] / rest;
            rest -= p[i];
        }
        assert!((lp.exp() - want).abs() < 1e-12);
    }

    #[test]
    fn bernoulli_frequency() {
        let mut r = rng::seeded(10);
        let hits = (0..10_000).filter(|_| sample_indices(&[0.75, 0.25], 1, &mut r).unwrap()[0] == 0).count();
        assert!((hits as f64 / 10_000.0 - 0.75).abs() < 0.02);
    }

    #[test]
    fn ordered_pair_frequency() {
        let mut r = rng::seeded(11);
        let hits = (0..10_000).filter(|_| sample_indices(&[0.5, 0.3, 0.2], 2, &mut r).unwrap() == [0, 1]).count();
        assert!((hits as f64 / 10_000.0 - 0.30).abs() < 0.02);
    }

    #[test]
    fn k_too_large() {
        assert!(sample_indices(&[1.0], 2, &mut rng::seeded(0)).is_err());
    }

    proptest! {
        #[test]
        fn log_prob_is_product_of_conditionals(
            logits in prop::collection::vec(-3.0f64..3.0, 2..10),
            k in 1usize..10,
            seed in any::<u64>(),
        ) {
            let k = k.min(logits.len());
            let (idx, lp) = run(&logits, k, seed);
            let p = softmax(&logits).unwrap();
            let mut left: Vec<usize> = (0..p.len()).collect();
            let mut want = 1.0;
            for &i in &idx {
                let mass: f64 = left.iter().map(|&j| p[j]).sum();
                want *= p[i] / mass;
                left.retain(|&j| j != i);
            }
            prop_assert!((lp.exp() - want).abs() <= 1e-12);
            prop_assert!(lp.exp() > 0.0 && lp.exp() <= 1.0);
        }

        #[test]
        fn topk_shift_invariant(logits in prop::collection::vec(-5.0f64..5.0, 1..20), c in -10.0f64..10.0, k in 1usize..20) {
            let k = k.min(logits.len());
            let shifted: Vec<f64> = logits.iter().map(|v| v + c).collect();
            let a = select_topk(&softmax(&logits).unwrap(), k).unwrap();
            let b = select_topk(&softmax(&shifted).unwrap(), k).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
