//! Dense `f64` tensors, reverse-mode gradients and the Adam optimizer.

mod adam;
mod gradcheck;
mod param;
mod tape;
pub mod tensor;

use alloc::vec::Vec;

pub use adam::{adam_step, AdamState};
pub use gradcheck::finite_difference_gradient;
pub use param::{ParamId, ParamSet, Parameter};
pub use tape::{Tape, Var};
pub use tensor::Tensor;

use crate::error::{Error, Result};

/// Numerically stable softmax of a logit vector.
pub fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.is_empty() {
        return Err(Error::EmptyLogits);
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("logits".into()));
    }
    let mut out = logits.to_vec();
    tape::softmax_in_place(&mut out);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn softmax_examples() {
        assert_eq!(softmax(&[0.0, 0.0]).unwrap(), [0.5, 0.5]);
        for c in [-7.5, 0.0, 3.0, 1e4] {
            for p in softmax(&[c; 4]).unwrap() {
                assert!((p - 0.25).abs() < 1e-15);
            }
        }
        let p = softmax(&[1f64.ln(), 2f64.ln(), 3f64.ln()]).unwrap();
        for (got, want) in p.iter().zip([1.0 / 6.0, 2.0 / 6.0, 3.0 / 6.0]) {
            assert!((got - want).abs() < 1e-12);
        }
        assert_eq!(softmax(&[]), Err(Error::EmptyLogits));
    }

    proptest! {
        #[test]
        fn softmax_normalized_and_shift_invariant(
            logits in prop::collection::vec(-50.0f64..50.0, 1..40),
            shift in -100.0f64..100.0,
        ) {
            let p = softmax(&logits).unwrap();
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
            prop_assert!(p.iter().all(|&v| v >= 0.0));
            let shifted: Vec<f64> = logits.iter().map(|v| v + shift).collect();
            let q = softmax(&shifted).unwrap();
            for (a, b) in p.iter().zip(&q) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
        }
    }
}
