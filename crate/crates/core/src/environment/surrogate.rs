//! Deterministic stand-in for a frozen in-context segmentation model.
//!
//! The quality of a prediction grows with how close the best prompt is to
//! the query in embedding space and with whether any prompt comes from the
//! query's acquisition domain. Each pixel of the ground truth is kept or
//! flipped by comparing a hash-derived uniform against that quality.

use alloc::vec::Vec;

use super::Scorer;
use crate::datamodel::Item;
use crate::error::{Error, Result};
use crate::mask::Mask;
use crate::numerics::tensor::cosine;
use crate::rng::{splitmix64, unit_from_bits};

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurrogateParams {
    pub w_sim: f64,
    pub w_dom: f64,
    pub seed: u64,
}

impl Default for SurrogateParams {
    fn default() -> Self {
        SurrogateParams { w_sim: 0.7, w_dom: 0.3, seed: 0 }
    }
}

impl SurrogateParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.w_sim >= 0.0 && self.w_dom >= 0.0 && self.w_sim + self.w_dom <= 1.0 + 1e-12;
        if !ok {
            return Err(Error::invalid(alloc::format!(
                "surrogate weights w_sim={} w_dom={} must be nonnegative with sum <= 1",
                self.w_sim,
                self.w_dom
            )));
        }
        Ok(())
    }
}

/// Prediction quality `s` in `[0, 1]` for query `q` under `prompts`.
pub fn surrogate_quality(prompts: &[&Item], q: &Item, params: &SurrogateParams) -> Result<f64> {
    if prompts.is_empty() {
        return Err(Error::EmptyPrompts);
    }
    let best =
        prompts.iter().map(|p| cosine(&p.embedding, &q.embedding).unwrap_or(0.0)).fold(f64::NEG_INFINITY, f64::max);
    let same_domain = prompts.iter().any(|p| p.domain_id == q.domain_id);
    let s = params.w_sim * best + if same_domain { params.w_dom } else { 0.0 };
    Ok(s.clamp(0.0, 1.0))
}

/// The uniform draw deciding whether pixel `t` of query `image_id` survives.
pub fn pixel_uniform(seed: u64, image_id: u64, t: usize) -> f64 {
    unit_from_bits(splitmix64(seed ^ image_id.wrapping_mul(GOLDEN) ^ t as u64))
}

pub fn surrogate_predict(prompts: &[&Item], q: &Item, params: &SurrogateParams) -> Result<Mask> {
    let s = surrogate_quality(prompts, q, params)?;
    for p in prompts {
        p.mask.check_geometry(&q.mask)?;
    }
    Ok(corrupt(&q.mask, q.image_id, s, params.seed))
}

/// Keeps pixel `t` of `truth` where `u_t < s` and flips it elsewhere.
pub fn corrupt(truth: &Mask, image_id: u64, s: f64, seed: u64) -> Mask {
    let mut out = truth.clone();
    for t in 0..truth.pixels() {
        if pixel_uniform(seed, image_id, t) >= s {
            out.set_index(t, !truth.get_index(t));
        }
    }
    out
}

/// In-process surrogate scorer.
#[derive(Debug, Clone, Copy, Default)]
pub struct Surrogate(pub SurrogateParams);

impl Scorer for Surrogate {
    fn predict(&mut self, prompts: &[&Item], queries: &[&Item]) -> Result<Vec<Mask>> {
        queries.iter().map(|q| surrogate_predict(prompts, q, &self.0)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::metrics::dice;
    use alloc::vec;

    fn ellipse() -> Mask {
        Mask::from_fn(16, 16, |r, c| {
            let (y, x) = (r as f64 - 7.5, c as f64 - 6.0);
            (y / 5.0) * (y / 5.0) + (x / 4.0) * (x / 4.0) <= 1.0
        })
    }

    fn item(id: u64, e: Vec<f64>, dom: u16, mask: Mask) -> Item {
        Item { image_id: id, embedding: e, class_label: 0, domain_id: dom, mask }
    }

    #[test]
    fn perfect_quality_reproduces_truth() {
        let q = item(5, vec![0.6, 0.8], 1, ellipse());
        let p = item(9, vec![0.6, 0.8], 1, Mask::empty(16, 16));
        let pred = surrogate_predict(&[&p], &q, &SurrogateParams::default()).unwrap();
        assert_eq!(pred, q.mask);
        assert_eq!(dice(&q.mask, &pred).unwrap(), 1.0);
    }

    #[test]
    fn zero_quality_flips_everything() {
        let q = item(5, vec![1.0, 0.0], 1, ellipse());
        let p = item(9, vec![-1.0, 0.0], 2, Mask::empty(16, 16));
        let params = SurrogateParams::default();
        assert_eq!(surrogate_quality(&[&p], &q, &params).unwrap(), 0.0);
        let pred = surrogate_predict(&[&p], &q, &params).unwrap();
        let flipped = Mask::from_fn(16, 16, |r, c| !q.mask.get(r, c));
        assert_eq!(pred, flipped);
    }

    /// Seed 42, s = 0.8: recount the kept pixels with a hash written out inline.
    #[test]
    fn matches_pixelwise_enumeration() {
        fn mix(x: u64) -> u64 {
            let mut z = x.wrapping_add(0x9E3779B97F4A7C15);
            z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
            z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
            z ^ (z >> 31)
        }
        let truth = ellipse();
        let id = 1234u64;
        let s = 0.8;
        let (mut tp, mut fp, mut fnn) = (0usize, 0usize, 0usize);
        for t in 0..256 {
            let u = (mix(42 ^ id.wrapping_mul(0x9E3779B97F4A7C15) ^ t as u64) >> 11) as f64 / 9007199254740992.0;
            let y = truth.get_index(t);
            let yhat = if u < s { y } else { !y };
            match (y, yhat) {
                (true, true) => tp += 1,
                (false, true) => fp += 1,
                (true, false) => fnn += 1,
                _ => {}
            }
        }
        let expected = 2.0 * tp as f64 / (2 * tp + fp + fnn) as f64;
        let pred = corrupt(&truth, id, s, 42);
        assert_eq!(dice(&truth, &pred).unwrap(), expected);
    }

    #[test]
    fn raising_quality_never_loses_pixels() {
        let truth = ellipse();
        let mut last = 0;
        for step in 0..=20 {
            let s = step as f64 / 20.0;
            let pred = corrupt(&truth, 77, s, 3);
            let kept = (0..256).filter(|&t| pred.get_index(t) == truth.get_index(t)).count();
            assert!(kept >= last);
            last = kept;
        }
        assert_eq!(last, 256);
    }

    #[test]
    fn empty_prompts_error() {
        let q = item(5, vec![1.0], 1, ellipse());
        assert_eq!(surrogate_predict(&[], &q, &SurrogateParams::default()), Err(Error::EmptyPrompts));
    }

    #[test]
    fn weights_validated() {
        assert!(SurrogateParams { w_sim: 0.8, w_dom: 0.3, seed: 0 }.validate().is_err());
        assert!(SurrogateParams::default().validate().is_ok());
    }
}
