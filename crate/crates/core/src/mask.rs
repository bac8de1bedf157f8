//! Binary segmentation masks stored one bit per pixel.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// An `h x w` binary mask, bit-packed row-major, most significant bit first.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Mask {
    h: usize,
    w: usize,
    bits: Vec<u8>,
}

impl Mask {
    pub const DEFAULT_SIDE: usize = 16;

    pub fn empty(h: usize, w: usize) -> Self {
        assert!(h > 0 && w > 0, "mask sides must be positive");
        Mask { h, w, bits: vec![0; packed_len(h, w)] }
    }

    pub fn full(h: usize, w: usize) -> Self {
        let mut m = Mask::empty(h, w);
        for t in 0..h * w {
            m.set_index(t, true);
        }
        m
    }

    pub fn from_fn(h: usize, w: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut m = Mask::empty(h, w);
        for r in 0..h {
            for c in 0..w {
                if f(r, c) {
                    m.set(r, c, true);
                }
            }
        }
        m
    }

    pub fn from_bools(h: usize, w: usize, values: &[bool]) -> Result<Self> {
        if h == 0 || w == 0 || values.len() != h * w {
            return Err(Error::shape(alloc::format!("{} values for a {h}x{w} mask", values.len())));
        }
        let mut m = Mask::empty(h, w);
        for (t, &v) in values.iter().enumerate() {
            m.set_index(t, v);
        }
        Ok(m)
    }

    /// Parses the packed byte layout; padding bits after the last pixel must be zero.
    pub fn from_packed(h: usize, w: usize, bytes: &[u8]) -> Result<Self> {
        if h == 0 || w == 0 || bytes.len() != packed_len(h, w) {
            return Err(Error::shape(alloc::format!("{} bytes for a {h}x{w} mask", bytes.len())));
        }
        let tail = (h * w) % 8;
        if tail != 0 && bytes[bytes.len() - 1] & (0xFF >> tail) != 0 {
            return Err(Error::invalid("nonzero padding bits in packed mask"));
        }
        Ok(Mask { h, w, bits: bytes.to_vec() })
    }

    pub fn h(&self) -> usize {
        self.h
    }

    pub fn w(&self) -> usize {
        self.w
    }

    pub fn pixels(&self) -> usize {
        self.h * self.w
    }

    pub fn packed(&self) -> &[u8] {
        &self.bits
    }

    pub fn get_index(&self, t: usize) -> bool {
        self.bits[t / 8] & (0x80 >> (t % 8)) != 0
    }

    pub fn set_index(&mut self, t: usize, v: bool) {
        assert!(t < self.pixels());
        let bit = 0x80 >> (t % 8);
        if v {
            self.bits[t / 8] |= bit;
        } else {
            self.bits[t / 8] &= !bit;
        }
    }

    pub fn get(&self, r: usize, c: usize) -> bool {
        self.get_index(r * self.w + c)
    }

    pub fn set(&mut self, r: usize, c: usize, v: bool) {
        self.set_index(r * self.w + c, v)
    }

    pub fn count(&self) -> usize {
        self.bits.iter().map(|b| b.count_ones() as usize).sum()
    }

    pub fn to_f64(&self) -> Vec<f64> {
        (0..self.pixels()).map(|t| if self.get_index(t) { 1.0 } else { 0.0 }).collect()
    }

    /// Thresholds a soft field: pixels `>= 0.5` are set.
    pub fn from_soft(h: usize, w: usize, field: &[f64]) -> Result<Self> {
        if field.len() != h * w {
            return Err(Error::shape(alloc::format!("{} values for a {h}x{w} mask", field.len())));
        }
        let mut m = Mask::empty(h, w);
        for (t, &v) in field.iter().enumerate() {
            if v >= 0.5 {
                m.set_index(t, true);
            }
        }
        Ok(m)
    }

    pub(crate) fn check_geometry(&self, other: &Mask) -> Result<()> {
        if self.h != other.h || self.w != other.w {
            return Err(Error::Geometry(self.h, self.w, other.h, other.w));
        }
        Ok(())
    }

    /// `(|a and b|, |a or b|)`.
    pub(crate) fn overlap(&self, other: &Mask) -> (usize, usize) {
        let mut inter = 0;
        let mut union = 0;
        for (a, b) in self.bits.iter().zip(&other.bits) {
            inter += (a & b).count_ones() as usize;
            union += (a | b).count_ones() as usize;
        }
        (inter, union)
    }
}

impl core::fmt::Debug for Mask {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        writeln!(f, "Mask {}x{}", self.h, self.w)?;
        for r in 0..self.h {
            for c in 0..self.w {
                f.write_str(if self.get(r, c) { "#" } else { "." })?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

/// Bytes needed to pack `h * w` pixels.
pub fn packed_len(h: usize, w: usize) -> usize {
    (h * w).div_ceil(8)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn bit_order_is_msb_first() {
        let mut m = Mask::empty(3, 3);
        m.set(0, 0, true);
        m.set(2, 2, true);
        assert_eq!(m.packed(), &[0x80, 0x80]);
        assert_eq!(m.count(), 2);
    }

    #[test]
    fn padding_must_be_zero() {
        assert!(Mask::from_packed(3, 3, &[0, 0x40]).is_err());
        assert!(Mask::from_packed(3, 3, &[0, 0]).is_ok());
        assert!(Mask::from_packed(3, 3, &[0]).is_err());
    }

    proptest! {
        #[test]
        fn packing_round_trips(h in 1usize..20, w in 1usize..20, seed in any::<u64>()) {
            let values: Vec<bool> = (0..h * w)
                .map(|t| crate::rng::splitmix64(seed ^ t as u64) & 1 == 1)
                .collect();
            let m = Mask::from_bools(h, w, &values).unwrap();
            let back = Mask::from_packed(h, w, m.packed()).unwrap();
            prop_assert_eq!(&back, &m);
            let unpacked: Vec<bool> = (0..h * w).map(|t| back.get_index(t)).collect();
            prop_assert_eq!(unpacked, values);
        }
    }
}
