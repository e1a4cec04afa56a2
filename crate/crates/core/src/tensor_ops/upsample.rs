use num_traits::Float;

use super::Tensor;
use crate::error::{Error, Result};

/// Separable bilinear upsampling of an `h × w × c` tensor by an integer factor.
pub fn bilinear_upsample<T: Float>(x: &Tensor<T>, factor: usize) -> Result<Tensor<T>> {
    if factor < 1 {
        return Err(Error::invalid("upsampling factor must be at least 1"));
    }
    let &[h, w, c] = x.shape() else {
        return Err(Error::ShapeMismatch(format!(
            "expected h×w×c input, got {:?}",
            x.shape()
        )));
    };
    if factor == 1 {
        return Ok(x.clone());
    }
    let (ho, wo) = (h * factor, w * factor);
    // Corner-aligned: output o sits at input coordinate o (n - 1) / (m - 1).
    let coord = |o: usize, n: usize, m: usize| -> (usize, usize, T) {
        let pos = o as f64 * (n - 1) as f64 / (m - 1) as f64;
        let lo = (pos.floor() as usize).min(n - 1);
        let hi = (lo + 1).min(n - 1);
        (lo, hi, T::from(pos - lo as f64).unwrap())
    };
    Ok(Tensor::from_fn(vec![ho, wo, c], |ix| {
        let (r0, r1, tr) = coord(ix[0], h, ho);
        let (c0, c1, tc) = coord(ix[1], w, wo);
        let at = |r: usize, q: usize| *x.get(&[r, q, ix[2]]);
        let top = at(r0, c0) * (T::one() - tc) + at(r0, c1) * tc;
        let bottom = at(r1, c0) * (T::one() - tc) + at(r1, c1) * tc;
        top * (T::one() - tr) + bottom * tr
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn row_of_two_factor_two() {
        let x = Tensor::new(vec![1, 2, 1], vec![0.0, 3.0]).unwrap();
        let y = bilinear_upsample(&x, 2).unwrap();
        assert_eq!(y.shape(), &[2, 4, 1]);
        assert_eq!(&y.data()[..4], &[0.0, 1.0, 2.0, 3.0]);
        assert_eq!(&y.data()[4..], &[0.0, 1.0, 2.0, 3.0]);
    }

    #[test]
    fn constant_is_preserved() {
        let x = Tensor::full(vec![3, 2, 2], 4.2);
        for factor in 1..5 {
            let y = bilinear_upsample(&x, factor).unwrap();
            assert!(y.data().iter().all(|&v| (v - 4.2f64).abs() < 1e-12));
        }
    }

    #[test]
    fn factor_one_is_identity() {
        let x = Tensor::from_fn(vec![3, 4, 2], |ix| (ix[0] + 2 * ix[1] + 5 * ix[2]) as f64);
        assert_eq!(bilinear_upsample(&x, 1).unwrap(), x);
    }

    #[test]
    fn factor_zero_rejected() {
        let x = Tensor::full(vec![1, 1, 1], 0.0);
        assert!(bilinear_upsample(&x, 0).is_err());
    }

    #[test]
    fn corners_are_exact() {
        let x = Tensor::from_fn(vec![3, 5, 1], |ix| (ix[0] * 5 + ix[1]) as f64);
        let y = bilinear_upsample(&x, 8).unwrap();
        assert_eq!(*y.get(&[0, 0, 0]), 0.0);
        assert_eq!(*y.get(&[0, 39, 0]), 4.0);
        assert_eq!(*y.get(&[23, 0, 0]), 10.0);
        assert_eq!(*y.get(&[23, 39, 0]), 14.0);
    }
}
