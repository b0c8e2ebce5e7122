//! The interaction loop: pretrained sensors, shared environment, and per-agent
//! predictor, statistic network and controller updates on staggered schedules.

pub mod config;

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::controller::{self, controller_network, policy_forward_batch, sample_action, Trajectory, Transition, UpdateStats};
use crate::critic::{self, CriticBatch, SocialCritic};
use crate::env::{render_observation, Action, EventLog, GridState, Observation, NUM_ACTIONS};
use crate::error::{Error, Result};
use crate::metrics::{IterationRecord, WindowLog};
use crate::seed::{derive_seed, rng_for, serde_rng, Rng, Stream};
use crate::sensors::{sample_pretrain_dataset, Sensors, H_DIM, S_HAT_DIM, X_DIM, Y_DIM};
use crate::tensor::{checkpoint, Network, ParameterSet};

pub use config::{schedule_flags, ExperimentConfig, Mode, ScheduleFlags};

pub const STATE_VERSION: u32 = 1;

/// Codes of the agent's latest observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CachedCodes {
    pub s_hat: Vec<f64>,
    pub y: Vec<f64>,
}

/// One agent's private learning state.
#[derive(Debug, Clone)]
pub struct Learner {
    pub controller: ParameterSet,
    pub critic: SocialCritic,
    pub memory: Vec<f64>,
    pub rng: Rng,
    pub codes: Option<CachedCodes>,
}

impl Learner {
    pub fn new(seed: u64, id: usize, controller_net: &Network) -> Self {
        let mut init = rng_for(seed, Stream::AgentInit, id as u64);
        Learner {
            controller: controller_net.init_params(&mut init),
            critic: SocialCritic::new(&mut init),
            memory: vec![0.0; H_DIM],
            rng: rng_for(seed, Stream::Agent, id as u64),
            codes: None,
        }
    }
}

/// Encodes the current observation of every agent in `ids`, advancing their
/// memories.
fn perceive_all(sensors: &Sensors, env: &GridState, learners: &mut [Learner], ids: &[usize]) -> Result<()> {
    if ids.is_empty() {
        return Ok(());
    }
    let frames = ids.iter().map(|&i| render_observation(env, i)).collect::<Result<Vec<_>>>()?;
    let (xs, ys) = sensors.encode_batch(&frames)?;
    let mut hs = Vec::with_capacity(ids.len() * H_DIM);
    for &i in ids {
        hs.extend_from_slice(&learners[i].memory);
    }
    for (k, &i) in ids.iter().enumerate() {
        let mut s_hat = Vec::with_capacity(S_HAT_DIM);
        s_hat.extend_from_slice(&xs[k * X_DIM..(k + 1) * X_DIM]);
        s_hat.extend_from_slice(&learners[i].memory);
        learners[i].codes = Some(CachedCodes {
            s_hat,
            y: ys[k * Y_DIM..(k + 1) * Y_DIM].to_vec(),
        });
    }
    sensors.reservoir().step_batch(&mut hs, &xs, ids.len());
    for (k, &i) in ids.iter().enumerate() {
        learners[i].memory.copy_from_slice(&hs[k * H_DIM..(k + 1) * H_DIM]);
    }
    Ok(())
}

/// Gives every active agent without codes its first perception.
pub fn prime_learners(sensors: &Sensors, env: &GridState, learners: &mut [Learner]) -> Result<()> {
    let ids: Vec<usize> = (0..learners.len())
        .filter(|&i| env.agents()[i].is_active() && learners[i].codes.is_none())
        .collect();
    perceive_all(sensors, env, learners, &ids)
}

/// Output of one interaction window.
#[derive(Debug, Clone, Default)]
pub struct Collected {
    pub trajectories: Vec<Trajectory>,
    pub window: WindowLog,
    pub events: EventLog,
}

/// Input, action and policy of a step whose next latent is not known yet.
type Pending = (Vec<f64>, Action, [f64; NUM_ACTIONS]);

/// Steps the shared environment `l` times with every active agent acting
/// on its cached `s_hat`.
pub fn collect_trajectories(
    env: &mut GridState,
    sensors: &Sensors,
    controller_net: &Network,
    learners: &mut [Learner],
    l: usize,
) -> Result<Collected> {
    let n = learners.len();
    if env.num_agents() != n {
        return Err(Error::InvalidArgument(format!(
            "environment has {} agents but {} learners were given",
            env.num_agents(),
            n
        )));
    }
    prime_learners(sensors, env, learners)?;
    let (_, sentinel_y) = sensors.encode(&Observation::timeout())?;
    let mut out = Collected {
        trajectories: vec![Trajectory::default(); n],
        window: WindowLog {
            payoffs: vec![0.0; n],
            timeout_slots: 0,
            steps: l,
            apple_counts: Vec::with_capacity(l),
            policies: vec![Vec::new(); n],
        },
        events: EventLog::default(),
    };
    let mut actions = vec![Action::Still; n];
    let mut pending: Vec<Option<Pending>> = vec![None; n];
    for _ in 0..l {
        for i in 0..n {
            actions[i] = Action::Still;
            pending[i] = None;
            if !env.agents()[i].is_active() {
                continue;
            }
            let codes = learners[i].codes.as_ref().ok_or_else(|| {
                Error::InvalidArgument(format!("agent {i} is active but has not perceived"))
            })?;
            let (probs, _) = policy_forward_batch(controller_net, &learners[i].controller, &codes.s_hat, 1)?;
            let mut p = [0.0; NUM_ACTIONS];
            p.copy_from_slice(&probs);
            let a = sample_action(&p, &mut learners[i].rng);
            actions[i] = a;
            pending[i] = Some((codes.s_hat.clone(), a, p));
            out.window.policies[i].push(p);
        }
        let step = env.step(&actions)?;
        if step.terminated {
            for learner in learners.iter_mut() {
                learner.memory.iter_mut().for_each(|h| *h = 0.0);
                learner.codes = None;
            }
        }
        let active: Vec<usize> = (0..n).filter(|&i| env.agents()[i].is_active()).collect();
        perceive_all(sensors, env, learners, &active)?;
        for i in 0..n {
            out.window.payoffs[i] += step.rewards[i];
            if let Some((s_hat, action, p)) = pending[i].take() {
                let present = env.agents()[i].is_active();
                let y_next = if present {
                    learners[i].codes.as_ref().expect("just perceived").y.clone()
                } else {
                    sentinel_y.clone()
                };
                out.trajectories[i].transitions.push(Transition {
                    s_hat,
                    action,
                    p,
                    reward: step.rewards[i],
                    y_next,
                    done: step.terminated || !present,
                });
            }
        }
        out.window.timeout_slots += n - active.len();
        out.window.apple_counts.push(env.apple_count());
        out.events.extend(step.events);
    }
    for (i, traj) in out.trajectories.iter_mut().enumerate() {
        traj.bootstrap = learners[i].codes.as_ref().map(|c| c.s_hat.clone());
    }
    Ok(out)
}

/// What one agent's training produced in one iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgentUpdate {
    /// Predictor loss on the buffer after any training.
    pub predictor_mse: f64,
    /// Critic estimate on the buffer after any training.
    pub mi: f64,
    pub controller: Option<UpdateStats>,
}

/// Trains one agent's networks on its own trajectory. Reads nothing but the
/// learner and the trajectory.
pub fn train_agent(
    learner: &mut Learner,
    controller_net: &Network,
    traj: &Trajectory,
    flags: ScheduleFlags,
    config: &ExperimentConfig,
) -> Result<AgentUpdate> {
    train_agent_impl::<true>(learner, controller_net, traj, flags, config)
}

/// [`train_agent`] with the controller's MI term compiled out. The critic
/// is still trained and evaluated so the MI estimate stays observable.
pub fn train_agent_without_mi(
    learner: &mut Learner,
    controller_net: &Network,
    traj: &Trajectory,
    flags: ScheduleFlags,
    config: &ExperimentConfig,
) -> Result<AgentUpdate> {
    train_agent_impl::<false>(learner, controller_net, traj, flags, config)
}

fn train_agent_impl<const WITH_MI: bool>(
    learner: &mut Learner,
    controller_net: &Network,
    traj: &Trajectory,
    flags: ScheduleFlags,
    config: &ExperimentConfig,
) -> Result<AgentUpdate> {
    if traj.is_empty() {
        return Ok(AgentUpdate {
            predictor_mse: f64::NAN,
            mi: f64::NAN,
            controller: None,
        });
    }
    let s_hats = traj.s_hats();
    let actions = traj.actions();
    let y_next = traj.y_next();
    let critic = &mut learner.critic;
    if flags.train_y {
        critic::train_predictor(
            &critic.predictor,
            &mut critic.predictor_params,
            &s_hats,
            &actions,
            &y_next,
            &config.predictor_fit(),
            &mut learner.rng,
        )?;
    }
    let predictor_mse = critic::predictor_loss(&critic.predictor, &critic.predictor_params, &s_hats, &actions, &y_next)?;
    let batch = CriticBatch::new(traj.probs(), y_next, critic.marginals(&s_hats)?)?;
    let mi = if flags.train_f {
        critic::train_statistic_network(
            &critic.statistic,
            &mut critic.statistic_params,
            &batch,
            &config.statistic_fit(),
            &mut learner.rng,
        )?
    } else {
        critic.mi(&batch)?
    };
    let stats = match (flags.train_c, WITH_MI) {
        (false, _) => None,
        (true, true) => Some(controller::update_controller(
            controller_net,
            &mut learner.controller,
            traj,
            Some(&learner.critic),
            &config.ppo(),
            &mut learner.rng,
        )?),
        (true, false) => Some(controller::update_controller_pure_ppo(
            controller_net,
            &mut learner.controller,
            traj,
            &config.ppo(),
            &mut learner.rng,
        )?),
    };
    Ok(AgentUpdate {
        predictor_mse,
        mi,
        controller: stats,
    })
}

fn finite_mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, count) = values.filter(|v| v.is_finite()).fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
    if count == 0 {
        f64::NAN
    } else {
        sum / count as f64
    }
}

/// A training run in progress.
pub struct Run {
    pub config: ExperimentConfig,
    pub sensors: Arc<Sensors>,
    pub controller_net: Network,
    pub env: GridState,
    pub learners: Vec<Learner>,
    pub t_total: u64,
    pub records: Vec<IterationRecord>,
    pub last_events: EventLog,
}

#[derive(Serialize, Deserialize)]
struct LearnerState {
    memory: Vec<f64>,
    #[serde(with = "serde_rng")]
    rng: Rng,
    codes: Option<CachedCodes>,
}

#[derive(Serialize, Deserialize)]
struct RunState {
    version: u32,
    t_total: u64,
    env: GridState,
    learners: Vec<LearnerState>,
    records: Vec<IterationRecord>,
}

impl Run {
    pub fn new(config: ExperimentConfig, sensors: Arc<Sensors>) -> Result<Self> {
        config.validate()?;
        let env = GridState::reset(config.map_spec()?, config.agents, derive_seed(config.seed, Stream::Environment, 0))?;
        let controller_net = controller_network();
        let learners = (0..config.agents)
            .map(|i| Learner::new(config.seed, i, &controller_net))
            .collect();
        Ok(Run {
            config,
            sensors,
            controller_net,
            env,
            learners,
            t_total: 0,
            records: Vec::new(),
            last_events: EventLog::default(),
        })
    }

    pub fn iteration(&self) -> usize {
        self.records.len()
    }

    pub fn is_finished(&self) -> bool {
        self.iteration() >= self.config.iterations()
    }

    /// One pass of the interaction loop: collect `l` steps, train on the
    /// schedule flags for the current `t_total`, then advance it by `l`.
    pub fn step_iteration(&mut self) -> Result<&IterationRecord> {
        self.step_impl::<true>()
    }

    /// [`Run::step_iteration`] built without the controller's MI term.
    pub fn step_iteration_without_mi(&mut self) -> Result<&IterationRecord> {
        self.step_impl::<false>()
    }

    fn step_impl<const WITH_MI: bool>(&mut self) -> Result<&IterationRecord> {
        let l = self.config.buffer_length;
        let flags = schedule_flags(self.t_total, self.config.n_y, self.config.n_f, self.config.n_c);
        let collected = collect_trajectories(&mut self.env, &self.sensors, &self.controller_net, &mut self.learners, l as usize)?;
        let mut updates = Vec::with_capacity(self.learners.len());
        for (learner, traj) in self.learners.iter_mut().zip(&collected.trajectories) {
            updates.push(train_agent_impl::<WITH_MI>(learner, &self.controller_net, traj, flags, &self.config)?);
        }
        let agent_mi: Vec<f64> = updates.iter().map(|u| u.mi).collect();
        let mse = finite_mean(updates.iter().map(|u| u.predictor_mse));
        let record = IterationRecord::from_window(self.iteration(), &collected.window, agent_mi, mse)?;
        log::debug!(
            "iter {} t={} U={:.2} E={:.3} P={:.3} S={:.0} H={:.3} I={:.4}",
            record.iteration,
            self.t_total,
            record.u,
            record.e,
            record.p,
            record.s,
            record.h_bar,
            record.i_shifted
        );
        self.records.push(record);
        self.last_events = collected.events;
        self.t_total += l;
        Ok(self.records.last().expect("just pushed"))
    }

    pub fn save_checkpoint(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("config.toml"), self.config.to_toml())?;
        self.sensors.save(&dir.join("sensors"))?;
        for (i, l) in self.learners.iter().enumerate() {
            checkpoint::save(&l.controller, &dir.join(format!("agent{i}.controller.smip")))?;
            checkpoint::save(&l.critic.predictor_params, &dir.join(format!("agent{i}.predictor.smip")))?;
            checkpoint::save(&l.critic.statistic_params, &dir.join(format!("agent{i}.statistic.smip")))?;
        }
        let state = RunState {
            version: STATE_VERSION,
            t_total: self.t_total,
            env: self.env.clone(),
            learners: self
                .learners
                .iter()
                .map(|l| LearnerState {
                    memory: l.memory.clone(),
                    rng: l.rng.clone(),
                    codes: l.codes.clone(),
                })
                .collect(),
            records: self.records.clone(),
        };
        // write then rename so a crash never leaves a half-written state file
        let tmp = dir.join("state.json.tmp");
        std::fs::write(&tmp, serde_json::to_vec(&state)?)?;
        std::fs::rename(tmp, dir.join("state.json"))?;
        Ok(())
    }

    pub fn load_checkpoint(dir: &Path) -> Result<Self> {
        let mut config = ExperimentConfig::from_toml(&std::fs::read_to_string(dir.join("config.toml"))?)?;
        config.base_dir = Some(dir.to_path_buf());
        let state_path = dir.join("state.json");
        let state: RunState = serde_json::from_slice(&std::fs::read(&state_path)?)
            .map_err(|e| Error::checkpoint(&state_path, e.to_string()))?;
        if state.version != STATE_VERSION {
            return Err(Error::checkpoint(
                &state_path,
                format!("state version {} is not {}", state.version, STATE_VERSION),
            ));
        }
        if state.learners.len() != config.agents || state.env.num_agents() != config.agents {
            return Err(Error::checkpoint(&state_path, "agent count does not match the config"));
        }
        let sensors = Arc::new(Sensors::load(&dir.join("sensors"))?);
        let controller_net = controller_network();
        let mut learners = Vec::with_capacity(config.agents);
        for (i, s) in state.learners.into_iter().enumerate() {
            let mut critic = SocialCritic::new(&mut rng_for(0, Stream::AgentInit, 0));
            critic.predictor_params = checkpoint::load(&dir.join(format!("agent{i}.predictor.smip")))?;
            critic.statistic_params = checkpoint::load(&dir.join(format!("agent{i}.statistic.smip")))?;
            if s.memory.len() != H_DIM {
                return Err(Error::checkpoint(&state_path, format!("memory of agent {i} has wrong size")));
            }
            learners.push(Learner {
                controller: checkpoint::load(&dir.join(format!("agent{i}.controller.smip")))?,
                critic,
                memory: s.memory,
                rng: s.rng,
                codes: s.codes,
            });
        }
        Ok(Run {
            config,
            sensors,
            controller_net,
            env: state.env,
            learners,
            t_total: state.t_total,
            records: state.records,
            last_events: EventLog::default(),
        })
    }
}

/// Plays `steps` steps with the current policies and no learning; the
/// record's MI values are the critics' estimates on that window.
pub fn evaluate_run(run: &mut Run, steps: usize) -> Result<IterationRecord> {
    if steps == 0 {
        return Err(Error::InvalidArgument("evaluation needs at least one step".into()));
    }
    let collected = collect_trajectories(&mut run.env, &run.sensors, &run.controller_net, &mut run.learners, steps)?;
    let mut agent_mi = Vec::with_capacity(run.learners.len());
    let mut mse = Vec::with_capacity(run.learners.len());
    for (learner, traj) in run.learners.iter().zip(&collected.trajectories) {
        if traj.is_empty() {
            agent_mi.push(f64::NAN);
            continue;
        }
        let critic = &learner.critic;
        let s_hats = traj.s_hats();
        mse.push(critic::predictor_loss(&critic.predictor, &critic.predictor_params, &s_hats, &traj.actions(), &traj.y_next())?);
        let batch = CriticBatch::new(traj.probs(), traj.y_next(), critic.marginals(&s_hats)?)?;
        agent_mi.push(critic.mi(&batch)?);
    }
    run.last_events = collected.events;
    IterationRecord::from_window(run.iteration(), &collected.window, agent_mi, finite_mean(mse.into_iter()))
}

/// Content address of the sensors a config would pretrain.
pub fn sensor_cache_key(config: &ExperimentConfig) -> Result<String> {
    let mut h = Sha256::new();
    h.update(config.map_spec()?.to_string().as_bytes());
    let fields = (
        config.pretrain_steps,
        config.pretrain_agents,
        config.pretrain_seed,
        config.validation_fraction,
        config.sensor_config(),
    );
    h.update(serde_json::to_vec(&fields)?);
    Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

/// Pretrains sensors for `config`, reusing `cache_dir/<key>` when present.
pub fn obtain_sensors(config: &ExperimentConfig, cache_dir: Option<&Path>) -> Result<Arc<Sensors>> {
    let cached = match cache_dir {
        Some(dir) => Some(dir.join(sensor_cache_key(config)?)),
        None => None,
    };
    if let Some(path) = &cached {
        if path.join("sensors.json").exists() {
            log::info!("reusing sensors from {}", path.display());
            return Ok(Arc::new(Sensors::load(path)?));
        }
    }
    let dataset = sample_pretrain_dataset(
        &config.map_spec()?,
        config.pretrain_steps,
        config.pretrain_agents,
        config.pretrain_seed,
        config.validation_fraction,
    )?;
    log::info!("pretraining sensors on {} frames", dataset.len());
    let sensors = Sensors::pretrain(&dataset, &config.sensor_config(), config.pretrain_seed)?;
    if let Some(path) = &cached {
        sensors.save(path)?;
    }
    Ok(Arc::new(sensors))
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub out_dir: Option<PathBuf>,
    pub cache_dir: Option<PathBuf>,
    /// Continue from `out_dir/checkpoint` when it exists.
    pub resume: bool,
    pub write_events: bool,
}

#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub records: Vec<IterationRecord>,
    pub checkpoint: Option<PathBuf>,
    pub metrics_csv: Option<PathBuf>,
}

/// Pretrains or loads sensors, then runs every remaining iteration, calling
/// `on_iteration` after each. With an output directory, metrics, events and
/// checkpoints are written there; on failure the state is saved to
/// `out_dir/failed`.
pub fn run_training<F: FnMut(&IterationRecord)>(
    config: &ExperimentConfig,
    options: &RunOptions,
    mut on_iteration: F,
) -> Result<RunArtifacts> {
    config.validate()?;
    let checkpoint_dir = options.out_dir.as_ref().map(|d| d.join("checkpoint"));
    let mut run = match &checkpoint_dir {
        Some(dir) if options.resume && dir.join("state.json").exists() => {
            log::info!("resuming from {}", dir.display());
            let run = Run::load_checkpoint(dir)?;
            if run.config.to_toml() != config.to_toml() {
                log::warn!("the checkpoint's own config is used; the config given for the resumed run is ignored");
            }
            run
        }
        _ => Run::new(config.clone(), obtain_sensors(config, options.cache_dir.as_deref())?)?,
    };
    if let Some(out) = &options.out_dir {
        std::fs::create_dir_all(out)?;
    }
    let mut events = match (&options.out_dir, options.write_events) {
        (Some(out), true) => Some(std::io::BufWriter::new(
            std::fs::OpenOptions::new()
                .create(true)
                .append(true)
                .open(out.join("events.jsonl"))?,
        )),
        _ => None,
    };
    while !run.is_finished() {
        if let Err(e) = run.step_iteration() {
            if let Some(out) = &options.out_dir {
                let _ = run.save_checkpoint(&out.join("failed"));
            }
            return Err(e);
        }
        on_iteration(run.records.last().expect("record"));
        if let Some(w) = events.as_mut() {
            run.last_events.write_jsonl(w)?;
        }
        let every = run.config.checkpoint_every;
        if let (Some(dir), true) = (&checkpoint_dir, every > 0 && run.iteration() % every == 0) {
            run.save_checkpoint(dir)?;
        }
    }
    let mut artifacts = RunArtifacts {
        records: run.records.clone(),
        checkpoint: None,
        metrics_csv: None,
    };
    if let (Some(out), Some(dir)) = (&options.out_dir, &checkpoint_dir) {
        run.save_checkpoint(dir)?;
        let csv = out.join("metrics.csv");
        crate::metrics::write_run_csv(&csv, &run.records)?;
        artifacts.checkpoint = Some(dir.clone());
        artifacts.metrics_csv = Some(csv);
    }
    Ok(artifacts)
}

/// Runs `base` once per mode and seed under `out/<mode>_seed<k>`. Runs whose
/// `metrics.csv` already exists are read back instead of retrained, and
/// interrupted runs continue from their checkpoint.
pub fn run_sweep(
    base: &ExperimentConfig,
    seeds: &[u64],
    modes: &[Mode],
    out: &Path,
    cache_dir: Option<&Path>,
) -> Result<Vec<(Mode, Vec<Vec<IterationRecord>>)>> {
    let mut results = Vec::with_capacity(modes.len());
    for &mode in modes {
        let mut runs = Vec::with_capacity(seeds.len());
        for &seed in seeds {
            let dir = out.join(format!("{}_seed{seed}", mode.label()));
            let csv = dir.join("metrics.csv");
            if !csv.exists() {
                let mut config = base.clone();
                config.mode = mode;
                config.seed = seed;
                log::info!("sweep run {}", dir.display());
                let options = RunOptions {
                    out_dir: Some(dir),
                    cache_dir: cache_dir.map(Path::to_path_buf),
                    resume: true,
                    write_events: false,
                };
                run_training(&config, &options, |r| log::debug!("{} seed {seed} iter {}", mode.label(), r.iteration))?;
            }
            runs.push(crate::metrics::read_run_csv(&csv)?);
        }
        results.push((mode, runs));
    }
    Ok(results)
}
