use num_traits::Float;
use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};

/// Geometry of a 2-D dilated convolution. Per-axis values are `[rows, cols]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DilatedConvSpec {
    pub kernel: [usize; 2],
    pub rate: [usize; 2],
    pub stride: [usize; 2],
    pub padding: [usize; 2],
    pub in_channels: usize,
    pub out_channels: usize,
}

impl DilatedConvSpec {
    pub fn square(
        kernel: usize,
        rate: usize,
        stride: usize,
        padding: usize,
        in_channels: usize,
        out_channels: usize,
    ) -> Self {
        Self {
            kernel: [kernel; 2],
            rate: [rate; 2],
            stride: [stride; 2],
            padding: [padding; 2],
            in_channels,
            out_channels,
        }
    }

    /// `K + (K - 1)(r - 1)` per axis.
    pub fn effective_extent(&self) -> [usize; 2] {
        [0, 1].map(|a| effective_extent(self.kernel[a], self.rate[a]))
    }

    pub fn validate(&self) -> Result<()> {
        for a in 0..2 {
            if self.kernel[a] == 0 || self.rate[a] == 0 || self.stride[a] == 0 {
                return Err(Error::invalid(format!(
                    "kernel, rate and stride must be positive: {self:?}"
                )));
            }
        }
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::invalid("channel counts must be positive"));
        }
        Ok(())
    }

    /// Output extent along `axis` for an input of length `input`, or `None`
    /// if the dilated kernel does not fit.
    pub fn output_len(&self, axis: usize, input: usize) -> Option<usize> {
        let padded = input + 2 * self.padding[axis];
        let extent = self.effective_extent()[axis];
        (padded >= extent).then(|| (padded - extent) / self.stride[axis] + 1)
    }
}

pub(crate) fn effective_extent(kernel: usize, rate: usize) -> usize {
    kernel + (kernel - 1) * (rate - 1)
}

/// One-dimensional dilated convolution, `y[i] = sum_{k=1..K} x[i + r k] w[k]`.
///
/// Taps are indexed from one, so the first tap reads `x[i + r]`. No padding;
/// the output has `len(x) - r K` elements, or none if the input is too short.
pub fn dilated_conv_1d<T: Float>(x: &[T], w: &[T], rate: usize) -> Result<Vec<T>> {
    if w.is_empty() {
        return Err(Error::invalid("empty filter"));
    }
    if rate == 0 {
        return Err(Error::invalid("dilation rate must be positive"));
    }
    let reach = rate * w.len();
    if x.len() <= reach {
        return Ok(Vec::new());
    }
    Ok((0..x.len() - reach)
        .map(|i| {
            w.iter()
                .enumerate()
                .fold(T::zero(), |acc, (k, &wk)| acc + x[i + rate * (k + 1)] * wk)
        })
        .collect())
}

/// Two-dimensional dilated cross-correlation over an `h × w × c_in` tensor.
///
/// `weights` is `K_h × K_w × c_in × c_out`; `bias`, when given, has `c_out`
/// entries. Output position `(i, j)` reads input
/// `(i·s + a·r - p, j·s + b·r - p)` for taps `a, b` counted from zero, with
/// zeros outside the input.
pub fn dilated_conv_2d<T: Float>(
    x: &Tensor<T>,
    spec: &DilatedConvSpec,
    weights: &Tensor<T>,
    bias: Option<&[T]>,
) -> Result<Tensor<T>> {
    spec.validate()?;
    let &[h, w, c_in] = x.shape() else {
        return Err(Error::ShapeMismatch(format!(
            "expected h×w×c input, got {:?}",
            x.shape()
        )));
    };
    if c_in != spec.in_channels {
        return Err(Error::invalid(format!(
            "input has {c_in} channels, spec expects {}",
            spec.in_channels
        )));
    }
    let [kh, kw] = spec.kernel;
    let c_out = spec.out_channels;
    if weights.shape() != [kh, kw, c_in, c_out] {
        return Err(Error::invalid(format!(
            "weights shape {:?} does not match {:?}",
            weights.shape(),
            [kh, kw, c_in, c_out]
        )));
    }
    if let Some(b) = bias {
        if b.len() != c_out {
            return Err(Error::invalid(format!(
                "bias has {} entries, expected {c_out}",
                b.len()
            )));
        }
    }
    let (Some(ho), Some(wo)) = (spec.output_len(0, h), spec.output_len(1, w)) else {
        return Tensor::new(vec![0, 0, c_out], Vec::new());
    };

    let mut out = Tensor::from_fn(vec![ho, wo, c_out], |ix| {
        bias.map_or(T::zero(), |b| b[ix[2]])
    });
    for i in 0..ho {
        for j in 0..wo {
            for a in 0..kh {
                let Some(row) = tap(i, a, spec.stride[0], spec.rate[0], spec.padding[0], h) else {
                    continue;
                };
                for b in 0..kw {
                    let Some(col) =
                        tap(j, b, spec.stride[1], spec.rate[1], spec.padding[1], w)
                    else {
                        continue;
                    };
                    for c in 0..c_in {
                        let xv = *x.get(&[row, col, c]);
                        for o in 0..c_out {
                            *out.get_mut(&[i, j, o]) =
                                *out.get(&[i, j, o]) + xv * *weights.get(&[a, b, c, o]);
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

fn tap(out: usize, k: usize, stride: usize, rate: usize, pad: usize, len: usize) -> Option<usize> {
    let pos = (out * stride + k * rate).checked_sub(pad)?;
    (pos < len).then_some(pos)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_d_examples() {
        let x: Vec<f64> = (1..=8).map(f64::from).collect();
        assert_eq!(dilated_conv_1d(&x, &[1.0, 0.0, 2.0], 2).unwrap(), vec![17.0, 20.0]);
        assert_eq!(dilated_conv_1d(&[1.0, 2.0, 3.0], &[1.0, 1.0], 1).unwrap(), vec![5.0]);
        assert_eq!(dilated_conv_1d(&[5.0, 6.0, 7.0, 8.0], &[1.0], 3).unwrap(), vec![8.0]);
    }

    #[test]
    fn one_d_short_input_is_empty() {
        assert!(dilated_conv_1d(&[5.0, 6.0, 7.0], &[1.0], 3).unwrap().is_empty());
        assert!(dilated_conv_1d::<f64>(&[], &[1.0], 1).unwrap().is_empty());
    }

    #[test]
    fn one_d_rejects_bad_arguments() {
        assert!(matches!(
            dilated_conv_1d::<f64>(&[1.0, 2.0], &[], 1),
            Err(Error::InvalidArgument(_))
        ));
        assert!(matches!(
            dilated_conv_1d(&[1.0, 2.0], &[1.0], 0),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn effective_extent_formula() {
        assert_eq!(DilatedConvSpec::square(3, 1, 1, 0, 1, 1).effective_extent(), [3, 3]);
        assert_eq!(DilatedConvSpec::square(3, 2, 1, 0, 1, 1).effective_extent(), [5, 5]);
        assert_eq!(DilatedConvSpec::square(3, 4, 1, 0, 1, 1).effective_extent(), [9, 9]);
        assert_eq!(DilatedConvSpec::square(1, 4, 1, 0, 1, 1).effective_extent(), [1, 1]);
    }

    #[test]
    fn identity_1x1() {
        let x = Tensor::from_fn(vec![4, 5, 3], |ix| (ix[0] * 31 + ix[1] * 7 + ix[2]) as f64 * 0.1);
        let spec = DilatedConvSpec::square(1, 3, 1, 0, 3, 3);
        let w = Tensor::from_fn(vec![1, 1, 3, 3], |ix| if ix[2] == ix[3] { 1.0 } else { 0.0 });
        assert_eq!(dilated_conv_2d(&x, &spec, &w, None).unwrap(), x);
    }

    #[test]
    fn constant_field_rate_two() {
        let x = Tensor::full(vec![9, 9, 1], 1.0);
        let spec = DilatedConvSpec::square(3, 2, 1, 0, 1, 1);
        let w = Tensor::full(vec![3, 3, 1, 1], 1.0);
        let y = dilated_conv_2d(&x, &spec, &w, None).unwrap();
        assert_eq!(y.shape(), &[5, 5, 1]);
        assert!(y.data().iter().all(|&v| v == 9.0));
    }

    #[test]
    fn output_size_with_stride_and_padding() {
        let x = Tensor::full(vec![10, 7, 2], 1.0);
        let spec = DilatedConvSpec::square(3, 2, 2, 2, 2, 4);
        let w = Tensor::full(vec![3, 3, 2, 4], 0.5);
        let y = dilated_conv_2d(&x, &spec, &w, Some(&[0.0, 1.0, 2.0, 3.0])).unwrap();
        // floor((10 + 4 - 5) / 2) + 1 = 5, floor((7 + 4 - 5) / 2) + 1 = 4
        assert_eq!(y.shape(), &[5, 4, 4]);
        // centre tap grid fully inside: 9 taps * 2 channels * 0.5
        assert_eq!(*y.get(&[2, 1, 0]), 9.0);
        assert_eq!(*y.get(&[2, 1, 3]), 12.0);
        // corner: only taps (1..3)x(1..3) land inside
        assert_eq!(*y.get(&[0, 0, 0]), 4.0);
    }

    #[test]
    fn channel_mismatch_is_rejected() {
        let x = Tensor::full(vec![4, 4, 2], 1.0);
        let spec = DilatedConvSpec::square(3, 1, 1, 0, 3, 1);
        let w = Tensor::full(vec![3, 3, 3, 1], 1.0);
        assert!(matches!(
            dilated_conv_2d(&x, &spec, &w, None),
            Err(Error::InvalidArgument(_))
        ));
    }
}
