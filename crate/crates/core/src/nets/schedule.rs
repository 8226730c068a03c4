use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const POLY_POWER: f64 = 0.9;

/// Poly decay: `lr0 * (1 - iter / max_iter)^0.9`.
pub fn poly_lr<S: Scalar>(lr0: S, iter: usize, max_iter: usize) -> Result<S> {
    if max_iter == 0 {
        return Err(Error::Config("max_iter must be at least 1".into()));
    }
    if iter > max_iter {
        return Err(Error::Validation(format!("iteration {iter} exceeds max_iter {max_iter}")));
    }
    if iter == max_iter {
        return Ok(S::zero());
    }
    let frac = S::from_usize(iter).expect("iter") / S::from_usize(max_iter).expect("max_iter");
    Ok(lr0 * (S::one() - frac).powf(S::from_f64_lossy(POLY_POWER)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoints_are_exact() {
        assert_eq!(poly_lr(0.1f64, 0, 100).unwrap(), 0.1);
        assert_eq!(poly_lr(0.1f64, 100, 100).unwrap(), 0.0);
    }

    #[test]
    fn midpoint() {
        let v = poly_lr(0.1f64, 50, 100).unwrap();
        assert!((v - 0.053_588_673).abs() < 1e-9, "{v}");
    }

    #[test]
    fn rejects_overrun() {
        assert!(poly_lr(0.1f64, 101, 100).is_err());
        assert!(poly_lr(0.1f64, 0, 0).is_err());
    }
}
