//! Social critic: a predictor of the next other-agent code and a statistic
//! network giving a Jensen-Shannon style lower bound on the mutual
//! information between the action distribution and that code.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{Action, NUM_ACTIONS};
use crate::error::{Error, Result};
use crate::sensors::{S_HAT_DIM, Y_DIM};
use crate::tensor::batching::{gather_rows, shuffled_batches};
use crate::tensor::ops::{sigmoid, softplus};
use crate::tensor::{Activation, LayerSpec, Network, ParameterSet};

pub const PREDICTOR_INPUT: usize = S_HAT_DIM + NUM_ACTIONS;
pub const STATISTIC_INPUT: usize = NUM_ACTIONS + Y_DIM;
/// Value of the estimate for `F = 0`, and its value at independence.
pub const ZERO_MI: f64 = -2.0 * std::f64::consts::LN_2;

pub fn predictor_network() -> Network {
    Network::new(
        "y",
        vec![
            LayerSpec::dense(PREDICTOR_INPUT, 128, Activation::Relu),
            LayerSpec::dense(128, 128, Activation::Relu),
            LayerSpec::dense(128, Y_DIM, Activation::Linear),
        ],
    )
    .expect("valid predictor")
}

pub fn statistic_network() -> Network {
    Network::new(
        "f",
        vec![
            LayerSpec::dense(STATISTIC_INPUT, 32, Activation::Relu),
            LayerSpec::dense(32, 32, Activation::Relu),
            LayerSpec::dense(32, 1, Activation::Linear),
        ],
    )
    .expect("valid statistic network")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
}

impl FitConfig {
    pub fn predictor() -> Self {
        FitConfig {
            learning_rate: 5e-4,
            batch_size: 32,
            epochs: 10,
        }
    }

    pub fn statistic() -> Self {
        FitConfig {
            learning_rate: 0.01,
            batch_size: 32,
            epochs: 10,
        }
    }
}

/// Aligned samples of `(p, y_next, y_marg)`, rows concatenated.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CriticBatch {
    pub p: Vec<f64>,
    pub y_next: Vec<f64>,
    pub y_marg: Vec<f64>,
}

impl CriticBatch {
    pub fn new(p: Vec<f64>, y_next: Vec<f64>, y_marg: Vec<f64>) -> Result<Self> {
        let batch = CriticBatch { p, y_next, y_marg };
        batch.validate()?;
        Ok(batch)
    }

    pub fn len(&self) -> usize {
        self.p.len() / NUM_ACTIONS
    }

    pub fn is_empty(&self) -> bool {
        self.p.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        if self.p.len() != n * NUM_ACTIONS || self.y_next.len() != n * Y_DIM || self.y_marg.len() != n * Y_DIM {
            return Err(Error::InvalidArgument(format!(
                "critic batch lengths p={} y_next={} y_marg={} are not aligned",
                self.p.len(),
                self.y_next.len(),
                self.y_marg.len()
            )));
        }
        for (i, row) in self.p.chunks_exact(NUM_ACTIONS).enumerate() {
            let sum: f64 = row.iter().sum();
            if row.iter().any(|&v| v.is_nan() || v < 0.0) || (sum - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidArgument(format!("p[{i}] is not a distribution")));
            }
        }
        Ok(())
    }

    pub fn subset(&self, indices: &[usize]) -> CriticBatch {
        CriticBatch {
            p: gather_rows(&self.p, NUM_ACTIONS, indices),
            y_next: gather_rows(&self.y_next, Y_DIM, indices),
            y_marg: gather_rows(&self.y_marg, Y_DIM, indices),
        }
    }

    /// Statistic network inputs: joint rows `[p_i, y_next_i]` followed by
    /// marginal rows `[p_i, y_marg_i]`.
    fn statistic_inputs(&self) -> Vec<f64> {
        let n = self.len();
        let mut rows = Vec::with_capacity(2 * n * STATISTIC_INPUT);
        for ys in [&self.y_next, &self.y_marg] {
            for (p, y) in self.p.chunks_exact(NUM_ACTIONS).zip(ys.chunks_exact(Y_DIM)) {
                rows.extend_from_slice(p);
                rows.extend_from_slice(y);
            }
        }
        rows
    }
}

/// Writes `[s_hat, one_hot(a)]`.
pub fn predictor_input(s_hat: &[f64], action: Action, out: &mut Vec<f64>) {
    out.extend_from_slice(s_hat);
    let start = out.len();
    out.resize(start + NUM_ACTIONS, 0.0);
    out[start + action.index()] = 1.0;
}

pub fn predict_y_next(net: &Network, params: &ParameterSet, s_hat: &[f64], action: Action) -> Result<Vec<f64>> {
    if s_hat.len() != S_HAT_DIM {
        return Err(Error::shape("s_hat", S_HAT_DIM, s_hat.len()));
    }
    let mut input = Vec::with_capacity(PREDICTOR_INPUT);
    predictor_input(s_hat, action, &mut input);
    net.infer(params, &input, 1)
}

/// Mean squared error over samples and components.
pub fn predictor_loss(net: &Network, params: &ParameterSet, s_hats: &[f64], actions: &[Action], y_next: &[f64]) -> Result<f64> {
    let n = actions.len();
    let mut input = Vec::with_capacity(n * PREDICTOR_INPUT);
    for (s, &a) in s_hats.chunks_exact(S_HAT_DIM).zip(actions) {
        predictor_input(s, a, &mut input);
    }
    let out = net.infer(params, &input, n)?;
    Ok(out.iter().zip(y_next).map(|(o, y)| (o - y) * (o - y)).sum::<f64>() / (n * Y_DIM) as f64)
}

/// Accumulates the gradient of the mean squared error on one minibatch and
/// returns the loss.
pub fn predictor_loss_grad(
    net: &Network,
    params: &mut ParameterSet,
    s_hats: &[f64],
    actions: &[Action],
    y_next: &[f64],
) -> Result<f64> {
    let n = actions.len();
    let mut input = Vec::with_capacity(n * PREDICTOR_INPUT);
    for (s, &a) in s_hats.chunks_exact(S_HAT_DIM).zip(actions) {
        predictor_input(s, a, &mut input);
    }
    let (out, tape) = net.forward(params, &input, n)?;
    let scale = 1.0 / (n * Y_DIM) as f64;
    let mut loss = 0.0;
    let grad: Vec<f64> = out
        .iter()
        .zip(y_next)
        .map(|(o, y)| {
            loss += (o - y) * (o - y);
            2.0 * (o - y) * scale
        })
        .collect();
    net.backward(params, &tape, &grad, false)?;
    Ok(loss * scale)
}

/// Fits `Y` by Adam on `(s_hat, a, y_next)` triples; returns the mean loss of
/// every epoch.
pub fn train_predictor<R: Rng + ?Sized>(
    net: &Network,
    params: &mut ParameterSet,
    s_hats: &[f64],
    actions: &[Action],
    y_next: &[f64],
    config: &FitConfig,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let n = actions.len();
    if n == 0 {
        return Err(Error::InvalidArgument("empty predictor batch".into()));
    }
    if s_hats.len() != n * S_HAT_DIM || y_next.len() != n * Y_DIM {
        return Err(Error::shape("predictor batch", n * S_HAT_DIM, s_hats.len()));
    }
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let mut total = 0.0;
        for batch in shuffled_batches(n, config.batch_size, rng) {
            let s = gather_rows(s_hats, S_HAT_DIM, &batch);
            let a: Vec<Action> = batch.iter().map(|&i| actions[i]).collect();
            let y = gather_rows(y_next, Y_DIM, &batch);
            let loss = predictor_loss_grad(net, params, &s, &a, &y)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!("predictor loss in epoch {epoch}")));
            }
            total += loss * batch.len() as f64;
            params.adam_step(config.learning_rate)?;
        }
        history.push(total / n as f64);
    }
    Ok(history)
}

/// `(1/8) sum_a Y(s_hat, a)` for every row of `s_hats`. The `s_hat` part of
/// the first layer is evaluated once per row.
pub fn marginal_samples(net: &Network, params: &ParameterSet, s_hats: &[f64]) -> Result<Vec<f64>> {
    if !s_hats.len().is_multiple_of(S_HAT_DIM) {
        return Err(Error::shape("s_hat batch", S_HAT_DIM, s_hats.len() % S_HAT_DIM));
    }
    let n = s_hats.len() / S_HAT_DIM;
    if n == 0 {
        return Ok(Vec::new());
    }
    let hidden = net.layers()[0].output_dim();
    let weight = params.get(0).value.data();
    let bias = params.get(1).value.data();
    if weight.len() != PREDICTOR_INPUT * hidden {
        return Err(Error::shape("y[0] weight", PREDICTOR_INPUT * hidden, weight.len()));
    }
    let mut shared = vec![0.0; n * hidden];
    crate::tensor::linalg::gemm(
        n,
        S_HAT_DIM,
        hidden,
        s_hats,
        false,
        &weight[..S_HAT_DIM * hidden],
        false,
        0.0,
        &mut shared,
    );
    let mut expanded = Vec::with_capacity(n * NUM_ACTIONS * hidden);
    for row in shared.chunks_exact(hidden) {
        for a in 0..NUM_ACTIONS {
            let action_row = &weight[(S_HAT_DIM + a) * hidden..(S_HAT_DIM + a + 1) * hidden];
            expanded.extend(row.iter().zip(action_row).zip(bias).map(|((s, w), b)| (s + w + b).max(0.0)));
        }
    }
    let out = net.infer_from(params, 1, &expanded, n * NUM_ACTIONS)?;
    let mut marg = vec![0.0; n * Y_DIM];
    for (m, group) in marg.chunks_exact_mut(Y_DIM).zip(out.chunks_exact(NUM_ACTIONS * Y_DIM)) {
        for y in group.chunks_exact(Y_DIM) {
            for (acc, v) in m.iter_mut().zip(y) {
                *acc += v;
            }
        }
        m.iter_mut().for_each(|v| *v /= NUM_ACTIONS as f64);
    }
    Ok(marg)
}

fn statistic_outputs(net: &Network, params: &ParameterSet, batch: &CriticBatch) -> Result<Vec<f64>> {
    net.infer(params, &batch.statistic_inputs(), 2 * batch.len())
}

fn mi_from_outputs(out: &[f64]) -> f64 {
    let n = out.len() / 2;
    let joint: f64 = out[..n].iter().map(|&f| softplus(-f)).sum();
    let marginal: f64 = out[n..].iter().map(|&f| softplus(f)).sum();
    -(joint + marginal) / n as f64
}

/// `dI/dF` for every joint then marginal output.
fn mi_output_grad(out: &[f64]) -> Vec<f64> {
    let n = out.len() / 2;
    let scale = 1.0 / n as f64;
    out.iter()
        .enumerate()
        .map(|(i, &f)| if i < n { sigmoid(-f) * scale } else { -sigmoid(f) * scale })
        .collect()
}

/// `I = -mean zeta(-F(p, y_next)) - mean zeta(F(p, y_marg))`.
pub fn mi_value(net: &Network, params: &ParameterSet, batch: &CriticBatch) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty critic batch".into()));
    }
    Ok(mi_from_outputs(&statistic_outputs(net, params, batch)?))
}

/// Accumulates `d(-I)/domega` into `params`; returns `I`.
pub fn mi_ascent_grad(net: &Network, params: &mut ParameterSet, batch: &CriticBatch) -> Result<f64> {
    let (out, tape) = net.forward(params, &batch.statistic_inputs(), 2 * batch.len())?;
    let grad: Vec<f64> = mi_output_grad(&out).into_iter().map(|g| -g).collect();
    net.backward(params, &tape, &grad, false)?;
    Ok(mi_from_outputs(&out))
}

/// Maximizes `I` over `omega` by Adam; returns `I` on the whole batch after
/// training.
pub fn train_statistic_network<R: Rng + ?Sized>(
    net: &Network,
    params: &mut ParameterSet,
    batch: &CriticBatch,
    config: &FitConfig,
    rng: &mut R,
) -> Result<f64> {
    batch.validate()?;
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty critic batch".into()));
    }
    for epoch in 0..config.epochs {
        for idx in shuffled_batches(batch.len(), config.batch_size, rng) {
            let i = mi_ascent_grad(net, params, &batch.subset(&idx))?;
            if !i.is_finite() {
                return Err(Error::NonFinite(format!("statistic network objective in epoch {epoch}")));
            }
            params.adam_step(config.learning_rate)?;
        }
    }
    mi_value(net, params, batch)
}

/// `dI/dp` for every row of the batch, holding `F`, `y_next` and `y_marg`
/// fixed. `p` enters both the joint and the marginal term.
pub fn mi_gradient_wrt_policy(net: &Network, params: &ParameterSet, batch: &CriticBatch) -> Result<(f64, Vec<f64>)> {
    let n = batch.len();
    if n == 0 {
        return Err(Error::InvalidArgument("empty critic batch".into()));
    }
    // gradients land in a scratch copy so the statistic network stays frozen
    let mut scratch = params.clone();
    let (out, tape) = net.forward(&scratch, &batch.statistic_inputs(), 2 * n)?;
    let grad_in = net
        .backward(&mut scratch, &tape, &mi_output_grad(&out), true)?
        .expect("input gradient requested");
    let mut dp = vec![0.0; n * NUM_ACTIONS];
    for (i, row) in grad_in.chunks_exact(STATISTIC_INPUT).enumerate() {
        let target = &mut dp[(i % n) * NUM_ACTIONS..(i % n + 1) * NUM_ACTIONS];
        for (d, g) in target.iter_mut().zip(&row[..NUM_ACTIONS]) {
            *d += g;
        }
    }
    Ok((mi_from_outputs(&out), dp))
}

/// Per-agent predictor and statistic network.
#[derive(Debug, Clone)]
pub struct SocialCritic {
    pub predictor: Network,
    pub predictor_params: ParameterSet,
    pub statistic: Network,
    pub statistic_params: ParameterSet,
}

impl SocialCritic {
    pub fn new<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let predictor = predictor_network();
        let statistic = statistic_network();
        SocialCritic {
            predictor_params: predictor.init_params(rng),
            statistic_params: statistic.init_params(rng),
            predictor,
            statistic,
        }
    }

    pub fn marginals(&self, s_hats: &[f64]) -> Result<Vec<f64>> {
        marginal_samples(&self.predictor, &self.predictor_params, s_hats)
    }

    pub fn mi(&self, batch: &CriticBatch) -> Result<f64> {
        mi_value(&self.statistic, &self.statistic_params, batch)
    }

    pub fn policy_gradient(&self, batch: &CriticBatch) -> Result<(f64, Vec<f64>)> {
        mi_gradient_wrt_policy(&self.statistic, &self.statistic_params, batch)
    }
}
