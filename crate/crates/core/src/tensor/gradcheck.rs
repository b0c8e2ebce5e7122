//! Central finite-difference gradient checking.

use rand::Rng;

use crate::error::Result;
use crate::tensor::network::Network;
use crate::tensor::params::ParameterSet;

pub const FD_STEP: f64 = 1e-5;

/// Coordinates whose forward and backward one-sided slopes disagree by more
/// than this fraction of the larger one straddle a kink (a relu crossing)
/// and are skipped.
pub const KINK_RATIO: f64 = 2e-4;

/// Outcome of a gradient check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradReport {
    /// Largest `|a - n| / max(|a|, |n|, 1e-8)` over the smooth coordinates.
    pub worst: f64,
    pub checked: usize,
    /// Coordinates left out because the loss is not smooth there.
    pub skipped: usize,
}

impl GradReport {
    pub fn merge(self, other: GradReport) -> GradReport {
        GradReport {
            worst: self.worst.max(other.worst),
            checked: self.checked + other.checked,
            skipped: self.skipped + other.skipped,
        }
    }

    pub fn skipped_fraction(&self) -> f64 {
        self.skipped as f64 / (self.checked + self.skipped).max(1) as f64
    }
}

/// Step used when the first comparison is lost in round-off.
pub const WIDE_STEP: f64 = 1e-3;

/// A discrepancy below `ROUNDOFF * eps * max(|f0|, 1) / h` is attributed to
/// floating-point cancellation in the difference quotient.
const ROUNDOFF: f64 = 100.0;

fn relative(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-8)
}

/// Relative error below which the first step is taken as conclusive.
const RESOLVED: f64 = 1e-6;

fn central<F>(f0: f64, h: f64, eval: &mut F) -> Result<Option<f64>>
where
    F: FnMut(f64) -> Result<f64>,
{
    let plus = eval(h)?;
    let minus = eval(-h)?;
    let forward = (plus - f0) / h;
    let backward = (f0 - minus) / h;
    if (forward - backward).abs() > KINK_RATIO * forward.abs().max(backward.abs()).max(1e-6) {
        return Ok(None);
    }
    Ok(Some((plus - minus) / (2.0 * h)))
}

/// Compares `analytic` with central differences of a scalar function, where
/// `eval(d)` is the function at `x + d` and `f0` its value at `x`. Returns
/// `None` at a kink.
///
/// The step is [`FD_STEP`]. When that leaves a discrepancy small enough to be
/// cancellation error in the quotient, [`WIDE_STEP`] is tried as well and the
/// better of the two estimates kept.
pub fn probe<F>(analytic: f64, f0: f64, mut eval: F) -> Result<Option<f64>>
where
    F: FnMut(f64) -> Result<f64>,
{
    let Some(numeric) = central(f0, FD_STEP, &mut eval)? else {
        return Ok(None);
    };
    let err = relative(analytic, numeric);
    let noise = ROUNDOFF * f64::EPSILON * f0.abs().max(1.0) / FD_STEP;
    if err <= RESOLVED || (analytic - numeric).abs() > noise {
        return Ok(Some(err));
    }
    Ok(Some(match central(f0, WIDE_STEP, &mut eval)? {
        Some(wide) => err.min(relative(analytic, wide)),
        None => err,
    }))
}

/// Compares the analytic gradient produced by `loss` against central finite
/// differences with step [`FD_STEP`].
///
/// `loss` must evaluate the scalar loss for the current parameter values and
/// accumulate its gradient into `params`. At most `coords_per_param`
/// coordinates of each tensor are probed (all of them when the tensor is
/// smaller).
pub fn check_gradients<F, R>(params: &mut ParameterSet, mut loss: F, coords_per_param: usize, rng: &mut R) -> Result<GradReport>
where
    F: FnMut(&mut ParameterSet) -> Result<f64>,
    R: Rng + ?Sized,
{
    params.zero_grad();
    let f0 = loss(params)?;
    let analytic: Vec<Vec<f64>> = params.iter().map(|p| p.grad.data().to_vec()).collect();
    let mut report = GradReport {
        worst: 0.0,
        checked: 0,
        skipped: 0,
    };
    for (index, analytic) in analytic.iter().enumerate() {
        let len = analytic.len();
        let coords: Vec<usize> = if len <= coords_per_param {
            (0..len).collect()
        } else {
            (0..coords_per_param).map(|_| rng.random_range(0..len)).collect()
        };
        for c in coords {
            let original = params.get(index).value.data()[c];
            let outcome = probe(analytic[c], f0, |d| {
                params.get_mut(index).value.data_mut()[c] = original + d;
                loss(params)
            });
            params.get_mut(index).value.data_mut()[c] = original;
            match outcome? {
                Some(err) => {
                    report.worst = report.worst.max(err);
                    report.checked += 1;
                }
                None => report.skipped += 1,
            }
        }
    }
    params.zero_grad();
    Ok(report)
}

/// Gradient check of `network` under the loss `sum_k c_k * out_k` with fixed
/// random weights `c_k`.
pub fn grad_check<R: Rng + ?Sized>(
    network: &Network,
    params: &mut ParameterSet,
    input: &[f64],
    batch: usize,
    coords_per_param: usize,
    rng: &mut R,
) -> Result<GradReport> {
    let weights: Vec<f64> = (0..batch * network.output_dim())
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    check_gradients(
        params,
        |p| {
            let (out, tape) = network.forward(p, input, batch)?;
            network.backward(p, &tape, &weights, false)?;
            Ok(out.iter().zip(&weights).map(|(o, w)| o * w).sum())
        },
        coords_per_param,
        rng,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::layer::{Activation, LayerSpec};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_linear_neuron_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = Network::new("neuron", vec![LayerSpec::dense(5, 1, Activation::Linear)]).unwrap();
        let mut params = net.init_params(&mut rng);
        let input: Vec<f64> = (0..5).map(|i| i as f64 * 0.3 - 0.7).collect();
        let r = grad_check(&net, &mut params, &input, 1, 100, &mut rng).unwrap();
        assert!(r.worst < 1e-7, "{r:?}");
        assert_eq!((r.checked, r.skipped), (6, 0));
    }

    #[test]
    fn softmax_conv_stack() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let net = Network::new(
            "small",
            vec![
                LayerSpec::conv(5, 5, 2, 3, Activation::Tanh),
                LayerSpec::transposed_conv(3, 3, 3, 4, Activation::Softmax),
            ],
        )
        .unwrap();
        let mut params = net.init_params(&mut rng);
        let input: Vec<f64> = (0..2 * 50).map(|_| rng.random_range(-1.0..1.0)).collect();
        let r = grad_check(&net, &mut params, &input, 2, 200, &mut rng).unwrap();
        assert!(r.worst < 1e-6, "{r:?}");
        // smooth, but strong curvature can still look like a kink
        assert!(r.skipped * 50 <= r.checked, "{r:?}");
    }
}
