//! Synthetic embedding datasets with class and domain structure.

use alloc::string::String;
use alloc::vec::Vec;

use crate::datamodel::{Dataset, EmbeddingRecord};
use crate::error::{Error, Result};
use crate::mask::Mask;
use crate::math;
use crate::numerics::tensor::norm;
use crate::rng::{self, splitmix64, unit_from_bits, Rng};

/// Offset scale of the domain direction relative to the unit class prototype.
const DOMAIN_SCALE: f64 = 0.4;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub name: String,
    pub classes: u16,
    pub domains: u16,
    pub d: usize,
    pub records: usize,
    pub sigma: f64,
    pub seed: u64,
    pub mask_h: usize,
    pub mask_w: usize,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            name: "synthetic".into(),
            classes: 8,
            domains: 4,
            d: 32,
            records: 4000,
            sigma: 0.1,
            seed: 0,
            mask_h: Mask::DEFAULT_SIDE,
            mask_w: Mask::DEFAULT_SIDE,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.classes == 0 || self.domains == 0 || self.d == 0 || self.records == 0 {
            return Err(Error::invalid("classes, domains, d and records must be at least 1"));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::invalid(alloc::format!("noise sigma {} must be finite and >= 0", self.sigma)));
        }
        if self.mask_h.min(self.mask_w) < 6 {
            return Err(Error::invalid("mask sides must be at least 6 to fit the ellipse radii"));
        }
        Ok(())
    }
}

/// Generates a dataset. Every record's embedding is
/// `normalize(prototype[class] + 0.4 * offset[domain] + sigma * eps)` with
/// `eps ~ N(0, I / d)`, stored at `f32` precision so it survives the binary
/// file format unchanged. Masks are filled ellipses seeded by the image id.
pub fn synth_generate(spec: &SynthSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = rng::seeded(spec.seed);
    let d = spec.d;
    let prototypes: Vec<Vec<f64>> = (0..spec.classes).map(|_| unit_vector(&mut rng, d)).collect();
    let offsets: Vec<Vec<f64>> = (0..spec.domains).map(|_| unit_vector(&mut rng, d)).collect();
    let noise_scale = spec.sigma / math::sqrt(d as f64);

    let mut records = Vec::with_capacity(spec.records);
    let mut masks = Vec::with_capacity(spec.records);
    for i in 0..spec.records {
        let class_label = rng::uniform_index(&mut rng, spec.classes as usize) as u16;
        let domain_id = rng::uniform_index(&mut rng, spec.domains as usize) as u16;
        let proto = &prototypes[class_label as usize];
        let off = &offsets[domain_id as usize];
        let mut e: Vec<f64> =
            (0..d).map(|t| proto[t] + DOMAIN_SCALE * off[t] + noise_scale * rng::standard_normal(&mut rng)).collect();
        let n = norm(&e);
        if n == 0.0 {
            return Err(Error::ZeroNorm(i));
        }
        for v in &mut e {
            *v = (*v / n) as f32 as f64;
        }
        let image_id = splitmix64(spec.seed ^ splitmix64(i as u64));
        masks.push(ellipse_mask(image_id, spec.mask_h, spec.mask_w));
        records.push(EmbeddingRecord { image_id, embedding: e, class_label, domain_id, mask_id: i });
    }
    Dataset::new(spec.name.clone(), d, (spec.mask_h, spec.mask_w), records, masks)
}

fn unit_vector(rng: &mut Rng, d: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng::standard_normal(rng)).collect();
        let n = norm(&v);
        if n > 0.0 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// Filled ellipse with center and radii taken from the hash chain of `image_id`.
/// Radii lie in `[2, min(h, w) / 2 - 1]`.
pub fn ellipse_mask(image_id: u64, h: usize, w: usize) -> Mask {
    let h1 = splitmix64(image_id);
    let h2 = splitmix64(h1);
    let h3 = splitmix64(h2);
    let h4 = splitmix64(h3);
    let r_max = (h.min(w) / 2) as f64 - 1.0;
    let cy = unit_from_bits(h1) * h as f64;
    let cx = unit_from_bits(h2) * w as f64;
    let ry = 2.0 + unit_from_bits(h3) * (r_max - 2.0);
    let rx = 2.0 + unit_from_bits(h4) * (r_max - 2.0);
    Mask::from_fn(h, w, |r, c| {
        let y = (r as f64 + 0.5 - cy) / ry;
        let x = (c as f64 + 0.5 - cx) / rx;
        y * y + x * x <= 1.0
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::tensor::cosine;

    #[test]
    fn deterministic() {
        let spec = SynthSpec { records: 50, ..SynthSpec::default() };
        assert_eq!(synth_generate(&spec).unwrap(), synth_generate(&spec).unwrap());
    }

    #[test]
    fn noiseless_single_domain_collapses_classes() {
        let spec = SynthSpec { records: 60, sigma: 0.0, domains: 1, classes: 3, ..SynthSpec::default() };
        let ds = synth_generate(&spec).unwrap();
        for a in ds.records() {
            for b in ds.records() {
                if a.class_label == b.class_label {
                    assert_eq!(a.embedding, b.embedding);
                }
            }
        }
    }

    #[test]
    fn classes_cluster() {
        let spec = SynthSpec { records: 40, classes: 2, domains: 2, ..SynthSpec::default() };
        let ds = synth_generate(&spec).unwrap();
        let (mut within, mut nw, mut across, mut na) = (0.0, 0, 0.0, 0);
        for (i, a) in ds.records().iter().enumerate() {
            for b in &ds.records()[i + 1..] {
                let c = cosine(&a.embedding, &b.embedding).unwrap();
                if a.class_label == b.class_label {
                    within += c;
                    nw += 1;
                } else {
                    across += c;
                    na += 1;
                }
            }
        }
        assert!(within / nw as f64 > across / na as f64);
    }

    #[test]
    fn ellipse_radii_in_range() {
        for id in 0..200u64 {
            let m = ellipse_mask(id, 16, 16);
            // The smallest admissible ellipse (radii 2) covers several pixels
            // unless its center sits near a border.
            assert!(m.count() <= 256);
            let h3 = splitmix64(splitmix64(splitmix64(id)));
            let ry = 2.0 + unit_from_bits(h3) * 5.0;
            assert!((2.0..=7.0).contains(&ry));
        }
    }

    #[test]
    fn rejects_bad_spec() {
        assert!(synth_generate(&SynthSpec { classes: 0, ..SynthSpec::default() }).is_err());
        assert!(synth_generate(&SynthSpec { mask_h: 4, ..SynthSpec::default() }).is_err());
        assert!(synth_generate(&SynthSpec { sigma: -1.0, ..SynthSpec::default() }).is_err());
    }
}
