use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::linalg::gemm;
use crate::tensor::ops::{softmax_backward_in_place, softmax_in_place};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Relu,
    Tanh,
    Linear,
    Softmax,
}

/// The closed set of layers the agent networks are built from.
///
/// Image tensors are stored height-major, channels last (`h x w x c`), so a
/// reshape between a flat vector and an image is the identity on the buffer.
/// Convolutions are 3x3, stride 1, without padding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LayerKind {
    Dense {
        inputs: usize,
        outputs: usize,
    },
    /// `h x w x in` to `(h-2) x (w-2) x out`.
    Conv2d {
        height: usize,
        width: usize,
        in_channels: usize,
        out_channels: usize,
    },
    /// `h x w x in` to `(h+2) x (w+2) x out`; the adjoint of [`LayerKind::Conv2d`].
    TransposedConv2d {
        height: usize,
        width: usize,
        in_channels: usize,
        out_channels: usize,
    },
    /// Fixed recurrent cell. Input is `[x, h]`, output `act(W_in x + W_rec h)`.
    RecurrentFixed { inputs: usize, units: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub activation: Activation,
}

impl fmt::Display for LayerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            LayerKind::Dense { inputs, outputs } => write!(f, "dense {inputs}->{outputs}"),
            LayerKind::Conv2d {
                height,
                width,
                in_channels,
                out_channels,
            } => write!(f, "conv2d {height}x{width}x{in_channels}->{out_channels}"),
            LayerKind::TransposedConv2d {
                height,
                width,
                in_channels,
                out_channels,
            } => write!(f, "tconv2d {height}x{width}x{in_channels}->{out_channels}"),
            LayerKind::RecurrentFixed { inputs, units } => {
                write!(f, "recurrent {inputs}->{units}")
            }
        }
    }
}

impl LayerSpec {
    pub fn dense(inputs: usize, outputs: usize, activation: Activation) -> Self {
        LayerSpec {
            kind: LayerKind::Dense { inputs, outputs },
            activation,
        }
    }

    pub fn conv(height: usize, width: usize, in_channels: usize, out_channels: usize, activation: Activation) -> Self {
        LayerSpec {
            kind: LayerKind::Conv2d {
                height,
                width,
                in_channels,
                out_channels,
            },
            activation,
        }
    }

    pub fn transposed_conv(
        height: usize,
        width: usize,
        in_channels: usize,
        out_channels: usize,
        activation: Activation,
    ) -> Self {
        LayerSpec {
            kind: LayerKind::TransposedConv2d {
                height,
                width,
                in_channels,
                out_channels,
            },
            activation,
        }
    }

    pub fn recurrent(inputs: usize, units: usize) -> Self {
        LayerSpec {
            kind: LayerKind::RecurrentFixed { inputs, units },
            activation: Activation::Tanh,
        }
    }

    pub fn input_dim(&self) -> usize {
        match self.kind {
            LayerKind::Dense { inputs, .. } => inputs,
            LayerKind::Conv2d {
                height,
                width,
                in_channels,
                ..
            }
            | LayerKind::TransposedConv2d {
                height,
                width,
                in_channels,
                ..
            } => height * width * in_channels,
            LayerKind::RecurrentFixed { inputs, units } => inputs + units,
        }
    }

    pub fn output_dim(&self) -> usize {
        match self.kind {
            LayerKind::Dense { outputs, .. } => outputs,
            LayerKind::Conv2d {
                height,
                width,
                out_channels,
                ..
            } => (height - 2) * (width - 2) * out_channels,
            LayerKind::TransposedConv2d {
                height,
                width,
                out_channels,
                ..
            } => (height + 2) * (width + 2) * out_channels,
            LayerKind::RecurrentFixed { units, .. } => units,
        }
    }

    /// Width of the groups a softmax activation normalizes over.
    fn softmax_group(&self) -> usize {
        match self.kind {
            LayerKind::Dense { outputs, .. } => outputs,
            LayerKind::Conv2d { out_channels, .. } | LayerKind::TransposedConv2d { out_channels, .. } => out_channels,
            LayerKind::RecurrentFixed { units, .. } => units,
        }
    }

    pub fn is_trainable(&self) -> bool {
        !matches!(self.kind, LayerKind::RecurrentFixed { .. })
    }

    /// Shapes of the two parameter tensors: (weight, bias) or, for the
    /// recurrent cell, (input weights, recurrent weights).
    pub fn param_shapes(&self) -> [Vec<usize>; 2] {
        match self.kind {
            LayerKind::Dense { inputs, outputs } => [vec![inputs, outputs], vec![outputs]],
            LayerKind::Conv2d {
                in_channels,
                out_channels,
                ..
            } => [vec![9 * in_channels, out_channels], vec![out_channels]],
            LayerKind::TransposedConv2d {
                in_channels,
                out_channels,
                ..
            } => [vec![9 * out_channels, in_channels], vec![out_channels]],
            LayerKind::RecurrentFixed { inputs, units } => [vec![units, inputs], vec![units, units]],
        }
    }

    /// Uniform in `±sqrt(6 / (fan_in + fan_out))`, zero bias. The recurrent
    /// cell gets input weights in `±0.1` and zero recurrent weights; the echo
    /// state memory rescales its own.
    pub fn init_params<R: Rng + ?Sized>(&self, rng: &mut R) -> [Tensor; 2] {
        let [ws, bs] = self.param_shapes();
        let (fan_in, fan_out) = match self.kind {
            LayerKind::Dense { inputs, outputs } => (inputs, outputs),
            LayerKind::Conv2d {
                in_channels,
                out_channels,
                ..
            }
            | LayerKind::TransposedConv2d {
                in_channels,
                out_channels,
                ..
            } => (9 * in_channels, 9 * out_channels),
            LayerKind::RecurrentFixed { .. } => {
                let w_in = uniform(&ws, 0.1, rng);
                return [w_in, Tensor::zeros(&bs)];
            }
        };
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        [uniform(&ws, limit, rng), Tensor::zeros(&bs)]
    }
}

pub(crate) fn uniform<R: Rng + ?Sized>(shape: &[usize], limit: f64, rng: &mut R) -> Tensor {
    let len = shape.iter().product();
    let data = (0..len).map(|_| rng.random_range(-limit..=limit)).collect();
    Tensor::from_vec(shape, data).expect("shape product matches")
}

/// What a layer keeps from its forward pass for the backward pass.
#[derive(Debug, Clone)]
pub(crate) struct LayerRecord {
    /// Layer input, or the im2col patch matrix for convolutions.
    pub saved_input: Vec<f64>,
    /// Post-activation output.
    pub output: Vec<f64>,
}

/// Runs one layer over a batch. `input.len()` must be `batch * input_dim`.
pub(crate) fn forward_layer(
    spec: &LayerSpec,
    params: [&[f64]; 2],
    input: &[f64],
    batch: usize,
    keep: bool,
) -> (Vec<f64>, Option<Vec<f64>>) {
    let [w, b] = params;
    let out_dim = spec.output_dim();
    let mut out = vec![0.0; batch * out_dim];
    let saved = match spec.kind {
        LayerKind::Dense { inputs, outputs } => {
            gemm(batch, inputs, outputs, input, false, w, false, 0.0, &mut out);
            add_bias(&mut out, b);
            keep.then(|| input.to_vec())
        }
        LayerKind::Conv2d {
            height,
            width,
            in_channels,
            out_channels,
        } => {
            let patches = im2col(input, batch, height, width, in_channels);
            let rows = batch * (height - 2) * (width - 2);
            gemm(rows, 9 * in_channels, out_channels, &patches, false, w, false, 0.0, &mut out);
            add_bias(&mut out, b);
            keep.then_some(patches)
        }
        LayerKind::TransposedConv2d {
            height,
            width,
            in_channels,
            out_channels,
        } => {
            let rows = batch * height * width;
            let mut cols = vec![0.0; rows * 9 * out_channels];
            gemm(rows, in_channels, 9 * out_channels, input, false, w, true, 0.0, &mut cols);
            col2im(&cols, &mut out, batch, height + 2, width + 2, out_channels);
            add_bias(&mut out, b);
            keep.then(|| input.to_vec())
        }
        LayerKind::RecurrentFixed { inputs, units } => {
            let width = inputs + units;
            let (mut xs, mut hs) = (Vec::with_capacity(batch * inputs), Vec::with_capacity(batch * units));
            for row in input.chunks_exact(width) {
                xs.extend_from_slice(&row[..inputs]);
                hs.extend_from_slice(&row[inputs..]);
            }
            gemm(batch, inputs, units, &xs, false, w, true, 0.0, &mut out);
            gemm(batch, units, units, &hs, false, b, true, 1.0, &mut out);
            keep.then(|| input.to_vec())
        }
    };
    apply_activation(spec.activation, spec.softmax_group(), &mut out);
    (out, saved)
}

/// Accumulates parameter gradients and returns `dL/dinput` when asked.
pub(crate) fn backward_layer(
    spec: &LayerSpec,
    weight: &[f64],
    grads: [&mut [f64]; 2],
    record: &LayerRecord,
    grad_out: &[f64],
    batch: usize,
    want_input_grad: bool,
) -> Option<Vec<f64>> {
    let mut g = grad_out.to_vec();
    activation_backward(spec.activation, spec.softmax_group(), &record.output, &mut g);
    let [gw, gb] = grads;
    match spec.kind {
        LayerKind::Dense { inputs, outputs } => {
            gemm(inputs, batch, outputs, &record.saved_input, true, &g, false, 1.0, gw);
            bias_grad(&g, gb);
            want_input_grad.then(|| {
                let mut gx = vec![0.0; batch * inputs];
                gemm(batch, outputs, inputs, &g, false, weight, true, 0.0, &mut gx);
                gx
            })
        }
        LayerKind::Conv2d {
            height,
            width,
            in_channels,
            out_channels,
        } => {
            let rows = batch * (height - 2) * (width - 2);
            let k = 9 * in_channels;
            gemm(k, rows, out_channels, &record.saved_input, true, &g, false, 1.0, gw);
            bias_grad(&g, gb);
            want_input_grad.then(|| {
                let mut g_patches = vec![0.0; rows * k];
                gemm(rows, out_channels, k, &g, false, weight, true, 0.0, &mut g_patches);
                let mut gx = vec![0.0; batch * height * width * in_channels];
                col2im(&g_patches, &mut gx, batch, height, width, in_channels);
                gx
            })
        }
        LayerKind::TransposedConv2d {
            height,
            width,
            in_channels,
            out_channels,
        } => {
            let rows = batch * height * width;
            let k = 9 * out_channels;
            let g_cols = im2col(&g, batch, height + 2, width + 2, out_channels);
            gemm(k, rows, in_channels, &g_cols, true, &record.saved_input, false, 1.0, gw);
            bias_grad(&g, gb);
            want_input_grad.then(|| {
                let mut gx = vec![0.0; rows * in_channels];
                gemm(rows, k, in_channels, &g_cols, false, weight, false, 0.0, &mut gx);
                gx
            })
        }
        LayerKind::RecurrentFixed { .. } => unreachable!("fixed layers are rejected before backward"),
    }
}

fn add_bias(out: &mut [f64], bias: &[f64]) {
    for row in out.chunks_exact_mut(bias.len()) {
        for (o, b) in row.iter_mut().zip(bias) {
            *o += b;
        }
    }
}

fn bias_grad(g: &[f64], gb: &mut [f64]) {
    for row in g.chunks_exact(gb.len()) {
        for (acc, x) in gb.iter_mut().zip(row) {
            *acc += x;
        }
    }
}

pub(crate) fn apply_activation(activation: Activation, group: usize, out: &mut [f64]) {
    match activation {
        Activation::Linear => {}
        Activation::Relu => out.iter_mut().for_each(|x| *x = x.max(0.0)),
        Activation::Tanh => out.iter_mut().for_each(|x| *x = x.tanh()),
        Activation::Softmax => out.chunks_exact_mut(group).for_each(softmax_in_place),
    }
}

fn activation_backward(activation: Activation, group: usize, out: &[f64], g: &mut [f64]) {
    match activation {
        Activation::Linear => {}
        Activation::Relu => {
            for (g, y) in g.iter_mut().zip(out) {
                if *y <= 0.0 {
                    *g = 0.0;
                }
            }
        }
        Activation::Tanh => {
            for (g, y) in g.iter_mut().zip(out) {
                *g *= 1.0 - y * y;
            }
        }
        Activation::Softmax => {
            for (gs, ys) in g.chunks_exact_mut(group).zip(out.chunks_exact(group)) {
                softmax_backward_in_place(ys, gs);
            }
        }
    }
}

/// Patch matrix of a batch of `h x w x c` images: one row per output pixel
/// `(y, x)`, columns ordered `(ky, kx, c)`.
pub(crate) fn im2col(input: &[f64], batch: usize, h: usize, w: usize, c: usize) -> Vec<f64> {
    let (oh, ow) = (h - 2, w - 2);
    let row_len = 9 * c;
    let mut patches = vec![0.0; batch * oh * ow * row_len];
    let image = h * w * c;
    for n in 0..batch {
        let img = &input[n * image..(n + 1) * image];
        for y in 0..oh {
            for x in 0..ow {
                let row = ((n * oh + y) * ow + x) * row_len;
                for ky in 0..3 {
                    let src = ((y + ky) * w + x) * c;
                    let dst = row + ky * 3 * c;
                    patches[dst..dst + 3 * c].copy_from_slice(&img[src..src + 3 * c]);
                }
            }
        }
    }
    patches
}

/// Scatter-add inverse of [`im2col`] onto `batch` images of `h x w x c`.
pub(crate) fn col2im(cols: &[f64], out: &mut [f64], batch: usize, h: usize, w: usize, c: usize) {
    let (oh, ow) = (h - 2, w - 2);
    let row_len = 9 * c;
    let image = h * w * c;
    for n in 0..batch {
        let img = &mut out[n * image..(n + 1) * image];
        for y in 0..oh {
            for x in 0..ow {
                let row = ((n * oh + y) * ow + x) * row_len;
                for ky in 0..3 {
                    let dst = ((y + ky) * w + x) * c;
                    let src = row + ky * 3 * c;
                    for (o, v) in img[dst..dst + 3 * c].iter_mut().zip(&cols[src..src + 3 * c]) {
                        *o += v;
                    }
                }
            }
        }
    }
}

pub(crate) fn check_input(label: &str, spec: &LayerSpec, input: &[f64], batch: usize) -> Result<()> {
    let expected = batch * spec.input_dim();
    if batch == 0 || input.len() != expected {
        return Err(Error::shape(
            label,
            format!("{batch} x {}", spec.input_dim()),
            format!("{} values", input.len()),
        ));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random(len: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    /// Direct nested-loop convolution, independent of the patch/GEMM path.
    fn conv_reference(input: &[f64], w: &[f64], b: &[f64], h: usize, wd: usize, cin: usize, cout: usize) -> Vec<f64> {
        let (oh, ow) = (h - 2, wd - 2);
        let mut out = vec![0.0; oh * ow * cout];
        for y in 0..oh {
            for x in 0..ow {
                for co in 0..cout {
                    let mut acc = b[co];
                    for ky in 0..3 {
                        for kx in 0..3 {
                            for ci in 0..cin {
                                let inp = input[((y + ky) * wd + x + kx) * cin + ci];
                                let wt = w[((ky * 3 + kx) * cin + ci) * cout + co];
                                acc += inp * wt;
                            }
                        }
                    }
                    out[(y * ow + x) * cout + co] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn conv_matches_nested_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let spec = LayerSpec::conv(9, 9, 7, 16, Activation::Linear);
        let [w, b] = spec.param_shapes();
        let w = random(w.iter().product(), &mut rng);
        let b = random(b.iter().product(), &mut rng);
        let input = random(2 * 9 * 9 * 7, &mut rng);
        let (out, _) = forward_layer(&spec, [&w, &b], &input, 2, false);
        assert_eq!(out.len(), 2 * 7 * 7 * 16);
        for n in 0..2 {
            let want = conv_reference(&input[n * 567..(n + 1) * 567], &w, &b, 9, 9, 7, 16);
            for (got, want) in out[n * 784..(n + 1) * 784].iter().zip(&want) {
                assert!((got - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn transposed_conv_is_adjoint_of_conv() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let conv = LayerSpec::conv(9, 9, 7, 16, Activation::Linear);
        let tconv = LayerSpec::transposed_conv(7, 7, 16, 7, Activation::Linear);
        assert_eq!(conv.param_shapes()[0], tconv.param_shapes()[0]);
        for _ in 0..5 {
            let w = random(9 * 7 * 16, &mut rng);
            let zero_conv = vec![0.0; 16];
            let zero_tconv = vec![0.0; 7];
            let x = random(9 * 9 * 7, &mut rng);
            let y = random(7 * 7 * 16, &mut rng);
            let (cx, _) = forward_layer(&conv, [&w, &zero_conv], &x, 1, false);
            let (ty, _) = forward_layer(&tconv, [&w, &zero_tconv], &y, 1, false);
            let lhs: f64 = cx.iter().zip(&y).map(|(a, b)| a * b).sum();
            let rhs: f64 = x.iter().zip(&ty).map(|(a, b)| a * b).sum();
            assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs().max(rhs.abs()), "{lhs} vs {rhs}");
        }
    }

    #[test]
    fn zero_dense_relu_gives_zero() {
        let spec = LayerSpec::dense(4, 3, Activation::Relu);
        let (out, _) = forward_layer(&spec, [&[0.0; 12], &[0.0; 3]], &[1.0, -2.0, 3.0, 4.0], 1, false);
        assert_eq!(out, vec![0.0; 3]);
    }

    #[test]
    fn softmax_dense_of_zero_logits_is_uniform() {
        let spec = LayerSpec::dense(2, 8, Activation::Softmax);
        let (out, _) = forward_layer(&spec, [&[0.0; 16], &[0.0; 8]], &[0.3, 0.4], 1, false);
        assert!(out.iter().all(|p| (p - 0.125).abs() < 1e-15));
    }

    #[test]
    fn shape_mismatch_names_layer() {
        let spec = LayerSpec::dense(4, 3, Activation::Relu);
        let err = check_input("E_x[2] dense 4->3", &spec, &[0.0; 5], 1).unwrap_err();
        assert!(err.to_string().contains("E_x[2]"));
    }
}
