use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::controller::PpoConfig;
use crate::critic::FitConfig;
use crate::env::MapSpec;
use crate::error::{Error, Result};
use crate::sensors::dataset::DEFAULT_VALIDATION_FRACTION;
use crate::sensors::{AutoencoderConfig, SensorConfig, DEFAULT_SPECTRAL_RADIUS, DEFAULT_Y_CLASSES};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Cms,
    Baseline,
}

impl Mode {
    pub fn label(self) -> &'static str {
        match self {
            Mode::Cms => "cms",
            Mode::Baseline => "baseline",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cms" => Ok(Mode::Cms),
            "baseline" => Ok(Mode::Baseline),
            other => Err(Error::Config(format!("unknown mode {other:?}, expected cms or baseline"))),
        }
    }
}

/// Every experiment setting, read from a flat TOML file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// `default`, `small`, or a path to a map file (relative to the config).
    pub map: String,
    pub agents: usize,
    /// Steps per interaction buffer, `l`.
    pub buffer_length: u64,
    pub t_max: u64,
    pub n_y: u64,
    pub n_f: u64,
    pub n_c: u64,
    pub mode: Mode,
    pub seed: u64,

    pub gamma: f64,
    pub epsilon: f64,
    pub c_pi: f64,
    pub c_v: f64,
    pub c_h: f64,
    pub c_i: f64,
    pub controller_epochs: usize,
    pub controller_batch: usize,
    pub controller_lr: f64,
    pub normalize_advantages: bool,

    pub predictor_epochs: usize,
    pub predictor_batch: usize,
    pub predictor_lr: f64,
    pub statistic_epochs: usize,
    pub statistic_batch: usize,
    pub statistic_lr: f64,

    pub pretrain_steps: usize,
    pub pretrain_agents: usize,
    pub pretrain_seed: u64,
    pub validation_fraction: f64,
    pub autoencoder_epochs: usize,
    pub autoencoder_batch: usize,
    pub autoencoder_lr: f64,
    pub y_classes: usize,
    pub spectral_radius: f64,

    /// Iterations between checkpoints; 0 keeps only the final one.
    pub checkpoint_every: usize,

    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let ppo = PpoConfig::default();
        let y = FitConfig::predictor();
        let f = FitConfig::statistic();
        let ae = AutoencoderConfig::default();
        ExperimentConfig {
            map: "default".into(),
            agents: 10,
            buffer_length: 1000,
            t_max: 10_000_000,
            n_y: 1000,
            n_f: 2000,
            n_c: 4000,
            mode: Mode::Cms,
            seed: 0,
            gamma: ppo.gamma,
            epsilon: ppo.epsilon,
            c_pi: ppo.c_pi,
            c_v: ppo.c_v,
            c_h: ppo.c_h,
            c_i: ppo.c_i,
            controller_epochs: ppo.epochs,
            controller_batch: ppo.batch_size,
            controller_lr: ppo.learning_rate,
            normalize_advantages: ppo.normalize_advantages,
            predictor_epochs: y.epochs,
            predictor_batch: y.batch_size,
            predictor_lr: y.learning_rate,
            statistic_epochs: f.epochs,
            statistic_batch: f.batch_size,
            statistic_lr: f.learning_rate,
            pretrain_steps: 1_280_000,
            pretrain_agents: 10,
            pretrain_seed: 0,
            validation_fraction: DEFAULT_VALIDATION_FRACTION,
            autoencoder_epochs: ae.epochs,
            autoencoder_batch: ae.batch_size,
            autoencoder_lr: ae.learning_rate,
            y_classes: DEFAULT_Y_CLASSES,
            spectral_radius: DEFAULT_SPECTRAL_RADIUS,
            checkpoint_every: 0,
            base_dir: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut config = Self::from_toml(&std::fs::read_to_string(path)?)?;
        config.base_dir = path.parent().map(Path::to_path_buf);
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let l = self.buffer_length;
        if l == 0 {
            return Err(Error::Config("buffer_length must be positive".into()));
        }
        if self.agents == 0 {
            return Err(Error::Config("at least one agent is required".into()));
        }
        for (name, n) in [("n_y", self.n_y), ("n_f", self.n_f), ("n_c", self.n_c)] {
            if n == 0 || n % l != 0 {
                return Err(Error::Config(format!("{name} = {n} must be a positive multiple of buffer_length = {l}")));
            }
        }
        if !(self.n_y <= self.n_f && self.n_f < self.n_c) {
            return Err(Error::Config(format!(
                "schedules must satisfy n_y <= n_f < n_c, got {} {} {}",
                self.n_y, self.n_f, self.n_c
            )));
        }
        for (name, b) in [
            ("controller_batch", self.controller_batch),
            ("predictor_batch", self.predictor_batch),
            ("statistic_batch", self.statistic_batch),
            ("autoencoder_batch", self.autoencoder_batch),
        ] {
            if b == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.pretrain_steps == 0 || self.pretrain_agents == 0 {
            return Err(Error::Config("pretraining needs at least one step and one agent".into()));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::Config("validation_fraction must lie in [0, 1)".into()));
        }
        if !(self.spectral_radius > 0.0 && self.spectral_radius < 1.0) {
            return Err(Error::Config("spectral_radius must lie in (0, 1)".into()));
        }
        self.ppo().validate()
    }

    /// Controller settings; the baseline always runs with `c_I = 0`.
    pub fn ppo(&self) -> PpoConfig {
        PpoConfig {
            gamma: self.gamma,
            epsilon: self.epsilon,
            c_pi: self.c_pi,
            c_v: self.c_v,
            c_h: self.c_h,
            c_i: match self.mode {
                Mode::Cms => self.c_i,
                Mode::Baseline => 0.0,
            },
            epochs: self.controller_epochs,
            batch_size: self.controller_batch,
            learning_rate: self.controller_lr,
            normalize_advantages: self.normalize_advantages,
        }
    }

    pub fn predictor_fit(&self) -> FitConfig {
        FitConfig {
            learning_rate: self.predictor_lr,
            batch_size: self.predictor_batch,
            epochs: self.predictor_epochs,
        }
    }

    pub fn statistic_fit(&self) -> FitConfig {
        FitConfig {
            learning_rate: self.statistic_lr,
            batch_size: self.statistic_batch,
            epochs: self.statistic_epochs,
        }
    }

    pub fn sensor_config(&self) -> SensorConfig {
        SensorConfig {
            y_classes: self.y_classes,
            spectral_radius: self.spectral_radius,
            autoencoder: AutoencoderConfig {
                batch_size: self.autoencoder_batch,
                epochs: self.autoencoder_epochs,
                learning_rate: self.autoencoder_lr,
            },
        }
    }

    /// Number of interaction iterations, `floor(t_max / l)`.
    pub fn iterations(&self) -> usize {
        (self.t_max / self.buffer_length) as usize
    }

    pub fn map_spec(&self) -> Result<MapSpec> {
        match self.map.as_str() {
            "default" => Ok(MapSpec::default_map()),
            "small" => Ok(MapSpec::small_map()),
            path => {
                let p = Path::new(path);
                let full = match &self.base_dir {
                    Some(dir) if p.is_relative() => dir.join(p),
                    _ => p.to_path_buf(),
                };
                MapSpec::load(&full)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScheduleFlags {
    pub train_y: bool,
    pub train_f: bool,
    pub train_c: bool,
}

/// Each flag is set iff `t_total` is a multiple of its period.
pub fn schedule_flags(t_total: u64, n_y: u64, n_f: u64, n_c: u64) -> ScheduleFlags {
    ScheduleFlags {
        train_y: t_total.is_multiple_of(n_y),
        train_f: t_total.is_multiple_of(n_f),
        train_c: t_total.is_multiple_of(n_c),
    }
}
