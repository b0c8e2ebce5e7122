//! Policy and value heads over `s_hat`, trained by clipped PPO plus an
//! optional mutual-information bonus from the social critic.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::critic::{CriticBatch, SocialCritic};
use crate::env::{Action, NUM_ACTIONS};
use crate::error::{Error, Result};
use crate::sensors::{S_HAT_DIM, Y_DIM};
use crate::tensor::batching::{gather_rows, shuffled_batches};
use crate::tensor::ops::{entropy, softmax_in_place};
use crate::tensor::{Activation, LayerSpec, Network, ParameterSet};

/// Eight action logits followed by the value.
pub const CONTROLLER_OUT: usize = NUM_ACTIONS + 1;

pub fn controller_network() -> Network {
    Network::new("pi", vec![LayerSpec::dense(S_HAT_DIM, CONTROLLER_OUT, Activation::Linear)]).expect("valid controller")
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolicyOutput {
    pub p: [f64; NUM_ACTIONS],
    pub v: f64,
}

fn split_outputs(out: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = out.len() / CONTROLLER_OUT;
    let mut probs = Vec::with_capacity(n * NUM_ACTIONS);
    let mut values = Vec::with_capacity(n);
    for row in out.chunks_exact(CONTROLLER_OUT) {
        let start = probs.len();
        probs.extend_from_slice(&row[..NUM_ACTIONS]);
        softmax_in_place(&mut probs[start..]);
        values.push(row[NUM_ACTIONS]);
    }
    (probs, values)
}

/// Probabilities (`n x 8`) and values for `n` states.
pub fn policy_forward_batch(net: &Network, params: &ParameterSet, s_hats: &[f64], n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    Ok(split_outputs(&net.infer(params, s_hats, n)?))
}

pub fn policy_forward(net: &Network, params: &ParameterSet, s_hat: &[f64]) -> Result<PolicyOutput> {
    let (probs, values) = policy_forward_batch(net, params, s_hat, 1)?;
    let mut p = [0.0; NUM_ACTIONS];
    p.copy_from_slice(&probs);
    Ok(PolicyOutput { p, v: values[0] })
}

/// Categorical draw from `p`.
pub fn sample_action<R: Rng + ?Sized>(p: &[f64], rng: &mut R) -> Action {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &pi) in p.iter().enumerate() {
        if pi > 0.0 {
            last = i;
        }
        acc += pi;
        if u < acc {
            return Action::ALL[i];
        }
    }
    Action::ALL[last]
}

pub fn clip(x: f64, lo: f64, hi: f64) -> f64 {
    x.max(lo).min(hi)
}

/// One agent step as seen by that agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub s_hat: Vec<f64>,
    pub action: Action,
    /// Action probabilities of the policy that acted.
    pub p: [f64; NUM_ACTIONS],
    pub reward: f64,
    pub y_next: Vec<f64>,
    /// Nothing after this transition belongs to the same segment.
    pub done: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub transitions: Vec<Transition>,
    /// State following the last transition, used to bootstrap when the last
    /// transition is not terminal.
    pub bootstrap: Option<Vec<f64>>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn s_hats(&self) -> Vec<f64> {
        self.transitions.iter().flat_map(|t| t.s_hat.iter().copied()).collect()
    }

    pub fn actions(&self) -> Vec<Action> {
        self.transitions.iter().map(|t| t.action).collect()
    }

    pub fn y_next(&self) -> Vec<f64> {
        self.transitions.iter().flat_map(|t| t.y_next.iter().copied()).collect()
    }

    pub fn probs(&self) -> Vec<f64> {
        self.transitions.iter().flat_map(|t| t.p).collect()
    }

    pub fn rewards(&self) -> Vec<f64> {
        self.transitions.iter().map(|t| t.reward).collect()
    }

    pub fn dones(&self) -> Vec<bool> {
        self.transitions.iter().map(|t| t.done).collect()
    }
}

/// `A_t = sum_k gamma^k r_{t+k} + gamma^m V(s_{t+m}) - V(s_t)` where the sum
/// runs to the end of the segment; the tail value is `bootstrap` at the end
/// of the buffer and 0 after a terminal transition.
pub fn compute_advantages(rewards: &[f64], dones: &[bool], values: &[f64], bootstrap: f64, gamma: f64) -> Vec<f64> {
    let mut returns = vec![0.0; rewards.len()];
    let mut next = bootstrap;
    for t in (0..rewards.len()).rev() {
        if dones[t] {
            next = 0.0;
        }
        next = rewards[t] + gamma * next;
        returns[t] = next;
    }
    returns.iter().zip(values).map(|(g, v)| g - v).collect()
}

/// Discounted reward sums to the end of each segment, without bootstrap.
pub fn value_targets(rewards: &[f64], dones: &[bool], gamma: f64) -> Vec<f64> {
    compute_advantages(rewards, dones, &vec![0.0; rewards.len()], 0.0, gamma)
}

/// `mean min(ratio A, clip(ratio, 1-eps, 1+eps) A)`.
pub fn ppo_policy_loss(probs: &[f64], old_probs: &[f64], actions: &[Action], advantages: &[f64], epsilon: f64) -> Result<f64> {
    let mut total = 0.0;
    for (i, (&a, &adv)) in actions.iter().zip(advantages).enumerate() {
        let old = old_probs[i * NUM_ACTIONS + a.index()];
        if old <= 0.0 {
            return Err(Error::InvalidArgument(format!("behaviour probability of sample {i} is zero")));
        }
        let ratio = probs[i * NUM_ACTIONS + a.index()] / old;
        total += (ratio * adv).min(clip(ratio, 1.0 - epsilon, 1.0 + epsilon) * adv);
    }
    Ok(total / actions.len() as f64)
}

pub fn value_loss(values: &[f64], targets: &[f64]) -> f64 {
    values.iter().zip(targets).map(|(v, r)| (v - r) * (v - r)).sum::<f64>() / values.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PpoConfig {
    pub gamma: f64,
    pub epsilon: f64,
    pub c_pi: f64,
    pub c_v: f64,
    pub c_h: f64,
    pub c_i: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub normalize_advantages: bool,
}

impl Default for PpoConfig {
    fn default() -> Self {
        PpoConfig {
            gamma: 0.99,
            epsilon: 0.2,
            c_pi: 1.0,
            c_v: 0.5,
            c_h: 0.01,
            c_i: 0.1,
            epochs: 5,
            batch_size: 32,
            learning_rate: 1e-4,
            normalize_advantages: true,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::Config(format!("epsilon {} must lie in (0, 1)", self.epsilon)));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::Config(format!("gamma {} must lie in [0, 1]", self.gamma)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("controller batch size must be positive".into()));
        }
        Ok(())
    }
}

/// A minibatch for the controller loss.
#[derive(Debug, Clone, PartialEq)]
pub struct ControllerBatch {
    pub s_hats: Vec<f64>,
    pub actions: Vec<Action>,
    pub old_probs: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
    pub y_next: Vec<f64>,
    pub y_marg: Vec<f64>,
}

impl ControllerBatch {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    fn subset(&self, idx: &[usize]) -> ControllerBatch {
        ControllerBatch {
            s_hats: gather_rows(&self.s_hats, S_HAT_DIM, idx),
            actions: idx.iter().map(|&i| self.actions[i]).collect(),
            old_probs: gather_rows(&self.old_probs, NUM_ACTIONS, idx),
            advantages: idx.iter().map(|&i| self.advantages[i]).collect(),
            returns: idx.iter().map(|&i| self.returns[i]).collect(),
            y_next: gather_rows(&self.y_next, Y_DIM, idx),
            y_marg: gather_rows(&self.y_marg, Y_DIM, idx),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub mi: f64,
    pub total_loss: f64,
    /// Share of samples whose final ratio lies outside `[0.6, 1.6]`.
    pub ratio_outliers: f64,
}

/// Loss `-c_pi L_pi + c_V L_V - c_H H - c_I I` on one minibatch; accumulates
/// its gradient into `params`. With `WITH_MI = false` the mutual-information
/// term does not exist in the compiled code.
pub fn minibatch_loss<const WITH_MI: bool>(
    net: &Network,
    params: &mut ParameterSet,
    batch: &ControllerBatch,
    critic: Option<&SocialCritic>,
    config: &PpoConfig,
) -> Result<UpdateStats> {
    let n = batch.len();
    let (out, tape) = net.forward(params, &batch.s_hats, n)?;
    let (probs, values) = split_outputs(&out);
    let scale = 1.0 / n as f64;
    let mut grad = vec![0.0; n * CONTROLLER_OUT];
    // d(total)/dp, later pushed through the softmax
    let mut grad_p = vec![0.0; n * NUM_ACTIONS];

    let l_pi = ppo_policy_loss(&probs, &batch.old_probs, &batch.actions, &batch.advantages, config.epsilon)?;
    let l_v = value_loss(&values, &batch.returns);
    let mut h = 0.0;
    for i in 0..n {
        let p = &probs[i * NUM_ACTIONS..(i + 1) * NUM_ACTIONS];
        let a = batch.actions[i].index();
        let adv = batch.advantages[i];
        let ratio = p[a] / batch.old_probs[i * NUM_ACTIONS + a];
        let clipped = clip(ratio, 1.0 - config.epsilon, 1.0 + config.epsilon);
        if ratio * adv <= clipped * adv {
            grad_p[i * NUM_ACTIONS + a] -= config.c_pi * scale * adv / batch.old_probs[i * NUM_ACTIONS + a];
        }
        let h_i = entropy(p);
        h += h_i;
        for (j, &pj) in p.iter().enumerate() {
            if pj > 0.0 {
                grad_p[i * NUM_ACTIONS + j] += config.c_h * scale * (pj.ln() + 1.0);
            }
        }
        grad[i * CONTROLLER_OUT + NUM_ACTIONS] = config.c_v * scale * 2.0 * (values[i] - batch.returns[i]);
    }
    h *= scale;

    let mut mi = 0.0;
    if WITH_MI && config.c_i != 0.0 {
        let critic = critic.ok_or_else(|| Error::InvalidArgument("c_I is nonzero but no social critic was given".into()))?;
        let critic_batch = CriticBatch {
            p: probs.clone(),
            y_next: batch.y_next.clone(),
            y_marg: batch.y_marg.clone(),
        };
        let (value, dp) = critic.policy_gradient(&critic_batch)?;
        mi = value;
        for (g, d) in grad_p.iter_mut().zip(&dp) {
            *g -= config.c_i * d;
        }
    }

    for i in 0..n {
        let p = &probs[i * NUM_ACTIONS..(i + 1) * NUM_ACTIONS];
        let gp = &grad_p[i * NUM_ACTIONS..(i + 1) * NUM_ACTIONS];
        let dot: f64 = p.iter().zip(gp).map(|(a, b)| a * b).sum();
        for j in 0..NUM_ACTIONS {
            grad[i * CONTROLLER_OUT + j] = p[j] * (gp[j] - dot);
        }
    }
    net.backward(params, &tape, &grad, false)?;

    let mut total = -config.c_pi * l_pi + config.c_v * l_v - config.c_h * h;
    if WITH_MI {
        total -= config.c_i * mi;
    }
    Ok(UpdateStats {
        policy_loss: l_pi,
        value_loss: l_v,
        entropy: h,
        mi,
        total_loss: total,
        ratio_outliers: 0.0,
    })
}

/// Advantages, returns and critic inputs for a whole trajectory, evaluated
/// with the parameters before the update.
pub fn prepare_batch(
    net: &Network,
    params: &ParameterSet,
    traj: &Trajectory,
    critic: Option<&SocialCritic>,
    config: &PpoConfig,
) -> Result<ControllerBatch> {
    let n = traj.len();
    let s_hats = traj.s_hats();
    let (_, values) = policy_forward_batch(net, params, &s_hats, n)?;
    let bootstrap = match (&traj.bootstrap, traj.transitions.last()) {
        (Some(s), Some(last)) if !last.done => policy_forward(net, params, s)?.v,
        _ => 0.0,
    };
    let rewards = traj.rewards();
    let dones = traj.dones();
    let mut advantages = compute_advantages(&rewards, &dones, &values, bootstrap, config.gamma);
    if config.normalize_advantages && n > 1 {
        let mean = advantages.iter().sum::<f64>() / n as f64;
        let var = advantages.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n as f64;
        let sd = var.sqrt();
        for a in &mut advantages {
            *a -= mean;
            if sd > 1e-8 {
                *a /= sd;
            }
        }
    }
    let y_marg = match critic {
        Some(c) => c.marginals(&s_hats)?,
        None => vec![0.0; n * Y_DIM],
    };
    Ok(ControllerBatch {
        returns: value_targets(&rewards, &dones, config.gamma),
        s_hats,
        actions: traj.actions(),
        old_probs: traj.probs(),
        advantages,
        y_next: traj.y_next(),
        y_marg,
    })
}

fn update_impl<const WITH_MI: bool, R: Rng + ?Sized>(
    net: &Network,
    params: &mut ParameterSet,
    traj: &Trajectory,
    critic: Option<&SocialCritic>,
    config: &PpoConfig,
    rng: &mut R,
) -> Result<UpdateStats> {
    config.validate()?;
    if traj.is_empty() {
        return Ok(UpdateStats::default());
    }
    let batch = prepare_batch(net, params, traj, if WITH_MI { critic } else { None }, config)?;
    let mut sum = UpdateStats::default();
    let mut count = 0usize;
    for _ in 0..config.epochs {
        for idx in shuffled_batches(batch.len(), config.batch_size, rng) {
            let stats = minibatch_loss::<WITH_MI>(net, params, &batch.subset(&idx), critic, config)?;
            if !stats.total_loss.is_finite() {
                return Err(Error::NonFinite(format!(
                    "controller loss (policy {}, value {}, entropy {}, mi {})",
                    stats.policy_loss, stats.value_loss, stats.entropy, stats.mi
                )));
            }
            params.adam_step(config.learning_rate)?;
            sum.policy_loss += stats.policy_loss;
            sum.value_loss += stats.value_loss;
            sum.entropy += stats.entropy;
            sum.mi += stats.mi;
            sum.total_loss += stats.total_loss;
            count += 1;
        }
    }
    if count > 0 {
        let c = count as f64;
        sum.policy_loss /= c;
        sum.value_loss /= c;
        sum.entropy /= c;
        sum.mi /= c;
        sum.total_loss /= c;
    }
    let (probs, _) = policy_forward_batch(net, params, &batch.s_hats, batch.len())?;
    let outliers = batch
        .actions
        .iter()
        .enumerate()
        .filter(|&(i, a)| {
            let r = probs[i * NUM_ACTIONS + a.index()] / batch.old_probs[i * NUM_ACTIONS + a.index()];
            !(0.6..=1.6).contains(&r)
        })
        .count();
    sum.ratio_outliers = outliers as f64 / batch.len() as f64;
    if sum.ratio_outliers > 0.01 {
        log::warn!("{:.1}% of probability ratios left [0.6, 1.6]", 100.0 * sum.ratio_outliers);
    }
    Ok(sum)
}

/// `epochs` passes of Adam over shuffled minibatches of `traj`, minimizing
/// the PPO loss minus `c_I` times the critic's estimate.
pub fn update_controller<R: Rng + ?Sized>(
    net: &Network,
    params: &mut ParameterSet,
    traj: &Trajectory,
    critic: Option<&SocialCritic>,
    config: &PpoConfig,
    rng: &mut R,
) -> Result<UpdateStats> {
    update_impl::<true, R>(net, params, traj, critic, config, rng)
}

/// [`update_controller`] with the mutual-information term removed at compile time.
pub fn update_controller_pure_ppo<R: Rng + ?Sized>(
    net: &Network,
    params: &mut ParameterSet,
    traj: &Trajectory,
    config: &PpoConfig,
    rng: &mut R,
) -> Result<UpdateStats> {
    update_impl::<false, R>(net, params, traj, None, config, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_weights_give_uniform_policy() {
        let net = controller_network();
        let mut params = net.init_params(&mut ChaCha8Rng::seed_from_u64(0));
        params.iter_mut().for_each(|p| p.value.fill(0.0));
        let out = policy_forward(&net, &params, &[0.7; S_HAT_DIM]).unwrap();
        assert!(out.p.iter().all(|&p| (p - 0.125).abs() < 1e-15));
        assert_eq!(out.v, 0.0);
        assert!((entropy(&out.p) - 8f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn one_hot_policy_always_picks_its_action() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut p = [0.0; NUM_ACTIONS];
        p[3] = 1.0;
        for _ in 0..1000 {
            assert_eq!(sample_action(&p, &mut rng), Action::ALL[3]);
        }
    }

    #[test]
    fn clip_cases() {
        assert_eq!(clip(0.5, 0.8, 1.2), 0.8);
        assert_eq!(clip(1.5, 0.8, 1.2), 1.2);
        assert_eq!(clip(1.0, 0.8, 1.2), 1.0);
    }

    #[test]
    fn single_step_advantage() {
        assert_eq!(compute_advantages(&[1.0], &[false], &[0.0], 0.0, 0.99), vec![1.0]);
        let adv = compute_advantages(&[0.0; 5], &[false; 5], &[2.0; 5], 2.0, 1.0);
        assert!(adv.iter().all(|&a| a == 0.0));
    }

    #[test]
    fn value_target_example() {
        let targets = value_targets(&[1.0, 0.0], &[false, false], 0.5);
        assert_eq!(targets[0], 1.0);
        assert_eq!(value_loss(&[0.0], &targets[..1]), 1.0);
    }

    #[test]
    fn terminal_cuts_the_return() {
        let adv = compute_advantages(&[1.0, 1.0, 1.0], &[false, true, false], &[0.0; 3], 10.0, 1.0);
        assert_eq!(adv, vec![2.0, 1.0, 11.0]);
    }

    #[test]
    fn identical_policies_give_mean_advantage() {
        let probs = vec![0.125; 16];
        let loss = ppo_policy_loss(&probs, &probs, &[Action::Up, Action::Shoot], &[2.0, -1.0], 0.2).unwrap();
        assert!((loss - 0.5).abs() < 1e-15);
    }

    #[test]
    fn zero_coefficients_leave_parameters_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let net = controller_network();
        let mut params = net.init_params(&mut rng);
        let before = params.clone();
        let traj = Trajectory {
            transitions: (0..10)
                .map(|i| Transition {
                    s_hat: vec![0.1 * i as f64; S_HAT_DIM],
                    action: Action::ALL[i % 8],
                    p: [0.125; 8],
                    reward: i as f64,
                    y_next: vec![0.0; Y_DIM],
                    done: false,
                })
                .collect(),
            bootstrap: None,
        };
        let config = PpoConfig {
            c_pi: 0.0,
            c_v: 0.0,
            c_h: 0.0,
            c_i: 0.0,
            ..PpoConfig::default()
        };
        update_controller(&net, &mut params, &traj, None, &config, &mut rng).unwrap();
        assert!(params.values_equal(&before));
    }
}
