use crate::error::Result;
use crate::mask::Mask;

/// `2 |y and yhat| / (|y| + |yhat|)`; two empty masks agree perfectly.
pub fn dice(y: &Mask, yhat: &Mask) -> Result<f64> {
    y.check_geometry(yhat)?;
    let (inter, _) = y.overlap(yhat);
    let total = y.count() + yhat.count();
    if total == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / total as f64)
}

/// Intersection over union; two empty masks agree perfectly.
pub fn miou(y: &Mask, yhat: &Mask) -> Result<f64> {
    y.check_geometry(yhat)?;
    let (inter, union) = y.overlap(yhat);
    if union == 0 {
        return Ok(1.0);
    }
    Ok(inter as f64 / union as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;

    fn mask(bits: &[bool]) -> Mask {
        Mask::from_bools(1, bits.len(), bits).unwrap()
    }

    #[test]
    fn examples() {
        let y = mask(&[true, true, true, false, false]);
        assert_eq!(dice(&y, &y).unwrap(), 1.0);
        let ones = Mask::full(2, 2);
        assert_eq!(dice(&ones, &Mask::empty(2, 2)).unwrap(), 0.0);
        let yhat = mask(&[true, true, false, true, false]);
        assert!((dice(&y, &yhat).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(miou(&y, &y).unwrap(), 1.0);
        assert_eq!(miou(&mask(&[true, false]), &mask(&[false, true])).unwrap(), 0.0);
        let a = mask(&[true, true, true, false]);
        let b = mask(&[false, true, true, true]);
        assert_eq!(miou(&a, &b).unwrap(), 0.5);
    }

    #[test]
    fn empty_pair_is_perfect() {
        let e = Mask::empty(3, 3);
        assert_eq!(dice(&e, &e).unwrap(), 1.0);
        assert_eq!(miou(&e, &e).unwrap(), 1.0);
    }

    #[test]
    fn geometry_mismatch() {
        assert_eq!(dice(&Mask::empty(2, 2), &Mask::empty(1, 4)), Err(Error::Geometry(2, 2, 1, 4)));
        assert!(miou(&Mask::empty(2, 2), &Mask::empty(2, 3)).is_err());
    }
}
