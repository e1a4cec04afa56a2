use crate::backbone::engine::Real;
use crate::dataset::OneHotMask;
use crate::error::{Error, Result};
use crate::tensor_ops::Tensor;

/// Smallest probability fed to the logarithm.
pub const LOG_CLAMP: f64 = 1e-12;

/// Mean over pixels of `-sum_c target[p, c] log softmax(logits[p])[c]`, and its
/// gradient with respect to the logits, `(softmax - target) / pixels`.
///
/// `logits` and `targets` are pixel-major with `classes` values per pixel.
pub fn cross_entropy_with_grad<T: Real>(logits: &[T], targets: &[T], classes: usize) -> Result<(f64, Vec<T>)> {
    if classes == 0 || !logits.len().is_multiple_of(classes) {
        return Err(Error::invalid("logit count is not a multiple of the class count"));
    }
    if logits.len() != targets.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} logits against {} targets",
            logits.len(),
            targets.len()
        )));
    }
    let pixels = logits.len() / classes;
    if pixels == 0 {
        return Err(Error::invalid("no pixels"));
    }
    let scale = T::one() / T::from_f64(pixels as f64);
    let floor = LOG_CLAMP.ln();
    let mut total = 0.0f64;
    let mut grad = vec![T::zero(); logits.len()];
    let mut probs = vec![0.0f64; classes];
    for ((z, t), g) in logits
        .chunks_exact(classes)
        .zip(targets.chunks_exact(classes))
        .zip(grad.chunks_exact_mut(classes))
    {
        let max = z.iter().fold(f64::NEG_INFINITY, |m, v| m.max(v.to_f64().unwrap()));
        let mut sum = 0.0;
        for (p, v) in probs.iter_mut().zip(z) {
            *p = (v.to_f64().unwrap() - max).exp();
            sum += *p;
        }
        let log_sum = sum.ln();
        for c in 0..classes {
            let target = t[c].to_f64().unwrap();
            if target != 0.0 {
                // `f64::max` would swallow a NaN here.
                let log_p = z[c].to_f64().unwrap() - max - log_sum;
                let log_p = if log_p < floor { floor } else { log_p };
                total -= target * log_p;
            }
            g[c] = (T::from_f64(probs[c] / sum) - t[c]) * scale;
        }
    }
    Ok((total / pixels as f64, grad))
}

/// Normalised pixel-wise cross-entropy of `h × w × C` logits against a
/// one-hot target.
pub fn cross_entropy_loss<T: Real>(logits: &Tensor<T>, target: &OneHotMask) -> Result<f64> {
    if logits.shape() != target.shape() {
        return Err(Error::invalid(format!(
            "logits {:?} and target {:?} differ in shape",
            logits.shape(),
            target.shape()
        )));
    }
    let classes = target.shape()[2];
    let targets: Vec<T> = target
        .values()
        .iter()
        .map(|&v| T::from_f64(f64::from(v)))
        .collect();
    Ok(cross_entropy_with_grad(logits.data(), &targets, classes)?.0)
}
