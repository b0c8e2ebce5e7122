//! Scalar and small-vector primitives shared by the losses.

/// `ln(1 + e^x)` in the overflow-free form `max(x, 0) + ln(1 + e^{-|x|})`.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Logistic sigmoid; also the derivative of [`softplus`].
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable softmax over `values`, in place.
pub fn softmax_in_place(values: &mut [f64]) {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in values.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in values.iter_mut() {
        *v /= sum;
    }
}

/// Gradient through softmax: given outputs `probs` and `dL/dprobs`, returns `dL/dlogits` in place of `grad`.
pub fn softmax_backward_in_place(probs: &[f64], grad: &mut [f64]) {
    let dot: f64 = probs.iter().zip(grad.iter()).map(|(p, g)| p * g).sum();
    for (g, p) in grad.iter_mut().zip(probs) {
        *g = p * (*g - dot);
    }
}

/// Shannon entropy in nats; zero-probability entries contribute nothing.
pub fn entropy(probs: &[f64]) -> f64 {
    -probs
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|p| p * p.ln())
        .sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softplus_reference_points() {
        assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-15);
        assert!((softplus(50.0) - 50.0).abs() < 1e-12);
        let tiny = softplus(-50.0);
        assert!(tiny >= 0.0);
        assert!((tiny - (-50f64).exp()).abs() < 1e-30);
        assert!(softplus(1000.0).is_finite());
        assert!(softplus(-1000.0) >= 0.0);
    }

    #[test]
    fn softplus_derivative_at_zero_is_half() {
        assert_eq!(sigmoid(0.0), 0.5);
        let h = 1e-6;
        let fd = (softplus(h) - softplus(-h)) / (2.0 * h);
        assert!((fd - 0.5).abs() < 1e-9);
    }

    #[test]
    fn softmax_of_equal_logits_is_uniform() {
        let mut v = [0.0; 8];
        softmax_in_place(&mut v);
        for p in v {
            assert!((p - 0.125).abs() < 1e-15);
        }
        assert!((entropy(&v) - 8f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn softmax_handles_large_logits() {
        let mut v = [1000.0, 999.0, -1000.0];
        softmax_in_place(&mut v);
        assert!(v.iter().all(|p| p.is_finite()));
        assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
