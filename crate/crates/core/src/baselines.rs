//! Reference selectors: uniform random, centroid TopK and the exhaustive oracle.

use alloc::vec::Vec;

use crate::datamodel::Episode;
use crate::environment::{reward, Scorer};
use crate::error::{Error, Result};
use crate::numerics::tensor::{cosine, norm};
use crate::rng::{self, Rng};

/// Default ceiling on the number of subsets the oracle may enumerate.
pub const ORACLE_CAP: u128 = 10_000;

/// `k` pool positions uniformly without replacement.
pub fn random_select(n: usize, k: usize, rng: &mut Rng) -> Result<Vec<usize>> {
    if k == 0 || k > n {
        return Err(Error::InvalidK { k, n });
    }
    Ok(rng::sample_indices(rng, n, k))
}

/// The `k` pool items with the highest cosine similarity to the mean query
/// embedding, most similar first; ties go to the lower index.
pub fn topk_select(pool: &[&[f64]], queries: &[&[f64]], k: usize) -> Result<Vec<usize>> {
    if k == 0 || k > pool.len() {
        return Err(Error::InvalidK { k, n: pool.len() });
    }
    let d = queries.first().ok_or_else(|| Error::invalid("empty query set"))?.len();
    for (i, q) in queries.iter().enumerate() {
        if q.len() != d || norm(q) == 0.0 {
            return Err(if q.len() != d { Error::shape("query embedding widths differ") } else { Error::ZeroNorm(i) });
        }
    }
    let mut centroid = alloc::vec![0.0; d];
    for q in queries {
        for (c, v) in centroid.iter_mut().zip(q.iter()) {
            *c += v;
        }
    }
    for c in &mut centroid {
        *c /= queries.len() as f64;
    }
    let sims = pool
        .iter()
        .enumerate()
        .map(|(i, e)| {
            if e.len() != d {
                return Err(Error::shape("pool embedding width differs from queries"));
            }
            // A zero centroid (queries cancelling out) ranks every item equally.
            cosine(e, &centroid).or(if norm(e) > 0.0 { Some(0.0) } else { None }).ok_or(Error::ZeroNorm(i))
        })
        .collect::<Result<Vec<f64>>>()?;
    let mut order: Vec<usize> = (0..pool.len()).collect();
    order.sort_by(|&a, &b| sims[b].total_cmp(&sims[a]));
    order.truncate(k);
    Ok(order)
}

/// [`topk_select`] over an episode's support pool and query set.
pub fn topk_for_episode(episode: &Episode, k: usize) -> Result<Vec<usize>> {
    let pool: Vec<&[f64]> = episode.support.iter().map(|it| it.embedding.as_slice()).collect();
    let queries: Vec<&[f64]> = episode.query.iter().map(|it| it.embedding.as_slice()).collect();
    topk_select(&pool, &queries, k)
}

/// Result of scoring every `k`-subset of the pool.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleResult {
    pub best: Vec<usize>,
    pub best_reward: f64,
    /// Every subset in lexicographic order with its reward.
    pub table: Vec<(Vec<usize>, f64)>,
}

impl OracleResult {
    pub fn worst_reward(&self) -> f64 {
        self.table.iter().map(|r| r.1).fold(f64::INFINITY, f64::min)
    }
}

/// `C(n, k)`, exact.
pub fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
    }
    acc
}

/// Scores every `k`-subset of the support pool and returns the best one;
/// among equal rewards the lexicographically first subset wins.
pub fn exhaustive_oracle(episode: &Episode, k: usize, scorer: &mut dyn Scorer, cap: u128) -> Result<OracleResult> {
    let n = episode.support.len();
    if k == 0 || k > n {
        return Err(Error::InvalidK { k, n });
    }
    let count = binomial(n, k);
    if count > cap {
        return Err(Error::CapExceeded { n, k, count, cap });
    }
    let mut table = Vec::with_capacity(count as usize);
    let mut subset: Vec<usize> = (0..k).collect();
    let mut best: Option<(usize, f64)> = None;
    loop {
        let r = reward(&subset, episode, scorer)?;
        if best.is_none_or(|(_, b)| r > b) {
            best = Some((table.len(), r));
        }
        table.push((subset.clone(), r));
        // Advance to the next combination in lexicographic order.
        let Some(pos) = (0..k).rev().find(|&i| subset[i] < n - k + i) else { break };
        subset[pos] += 1;
        for j in pos + 1..k {
            subset[j] = subset[j - 1] + 1;
        }
    }
    let (at, best_reward) = best.expect("at least one subset");
    Ok(OracleResult { best: table[at].0.clone(), best_reward, table })
}
