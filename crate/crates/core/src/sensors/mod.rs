//! Frozen perception stack: observation autoencoder, other-agent
//! autoencoder and echo-state memory, producing `s_hat = [x, h]`.

pub mod autoencoder;
pub mod dataset;
pub mod memory;
pub mod networks;

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::env::{Observation, OBS_LEN, OBS_PIXELS};
use crate::error::{Error, Result};
use crate::seed::{rng_for, Stream};
use crate::tensor::{checkpoint, Network, ParameterSet};

pub use autoencoder::{AutoencoderConfig, EpochStats, TrainReport};
pub use dataset::{sample_pretrain_dataset, PretrainDataset};
pub use memory::{spectral_radius, EchoStateMemory, Reservoir, DEFAULT_SPECTRAL_RADIUS};
pub use networks::{H_DIM, S_HAT_DIM, X_DIM, Y_DIM};

use autoencoder::{class_targets, one_hot_rows, PixelAutoencoder};

pub const DEFAULT_Y_CLASSES: usize = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct SensorCodes {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub h: Vec<f64>,
    pub s_hat: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorConfig {
    pub y_classes: usize,
    pub spectral_radius: f64,
    pub autoencoder: AutoencoderConfig,
}

impl Default for SensorConfig {
    fn default() -> Self {
        SensorConfig {
            y_classes: DEFAULT_Y_CLASSES,
            spectral_radius: DEFAULT_SPECTRAL_RADIUS,
            autoencoder: AutoencoderConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PretrainReport {
    pub x: TrainReport,
    pub y: TrainReport,
}

#[derive(Debug, Serialize, Deserialize)]
struct SensorMeta {
    y_classes: usize,
    report: PretrainReport,
}

/// All sensor networks and their weights.
#[derive(Debug, Clone)]
pub struct Sensors {
    ex: Network,
    dx: Network,
    ey: Network,
    dy: Network,
    pub ex_params: ParameterSet,
    pub dx_params: ParameterSet,
    pub ey_params: ParameterSet,
    pub dy_params: ParameterSet,
    reservoir: Arc<Reservoir>,
    y_classes: usize,
    pub report: PretrainReport,
}

impl Sensors {
    /// Untrained sensors with a fresh reservoir.
    pub fn init(seed: u64, config: &SensorConfig) -> Result<Self> {
        if config.y_classes < 3 {
            return Err(Error::InvalidArgument(format!(
                "the other-agent decoder needs at least 3 classes, got {}",
                config.y_classes
            )));
        }
        let mut rng = rng_for(seed, Stream::SensorInit, 0);
        let (ex, dx, ey, dy) = (
            networks::encoder_x(),
            networks::decoder_x(),
            networks::encoder_y(),
            networks::decoder_y(config.y_classes),
        );
        Ok(Sensors {
            ex_params: ex.init_params(&mut rng),
            dx_params: dx.init_params(&mut rng),
            ey_params: ey.init_params(&mut rng),
            dy_params: dy.init_params(&mut rng),
            ex,
            dx,
            ey,
            dy,
            reservoir: Arc::new(Reservoir::new(seed, config.spectral_radius)?),
            y_classes: config.y_classes,
            report: PretrainReport::default(),
        })
    }

    /// Initializes and trains both autoencoders on `dataset`.
    pub fn pretrain(dataset: &PretrainDataset, config: &SensorConfig, seed: u64) -> Result<Self> {
        let mut sensors = Sensors::init(seed, config)?;
        let mut rng = rng_for(seed, Stream::SensorInit, 1);
        sensors.report.x = train_autoencoder_x(&mut sensors, dataset, &config.autoencoder, &mut rng)?;
        sensors.report.y = train_autoencoder_y(&mut sensors, dataset, &config.autoencoder, &mut rng)?;
        Ok(sensors)
    }

    pub fn y_classes(&self) -> usize {
        self.y_classes
    }

    pub fn reservoir(&self) -> &Arc<Reservoir> {
        &self.reservoir
    }

    pub fn new_memory(&self) -> EchoStateMemory {
        EchoStateMemory::with_reservoir(Arc::clone(&self.reservoir))
    }

    pub fn networks(&self) -> [&Network; 4] {
        [&self.ex, &self.dx, &self.ey, &self.dy]
    }

    /// `(x, y)` codes for a batch of observations, rows concatenated.
    pub fn encode_batch(&self, frames: &[Observation]) -> Result<(Vec<f64>, Vec<f64>)> {
        if frames.is_empty() {
            return Ok((Vec::new(), Vec::new()));
        }
        let mut input = vec![0.0; frames.len() * OBS_LEN];
        for (row, f) in input.chunks_exact_mut(OBS_LEN).zip(frames) {
            f.write_one_hot(row);
        }
        let x = self.ex.infer(&self.ex_params, &input, frames.len())?;
        let y = self.ey.infer(&self.ey_params, &x, frames.len())?;
        Ok((x, y))
    }

    pub fn encode(&self, frame: &Observation) -> Result<(Vec<f64>, Vec<f64>)> {
        self.encode_batch(std::slice::from_ref(frame))
    }

    /// Codes for `frame` with `s_hat` built from the memory state before it
    /// is advanced by `x`.
    pub fn perceive(&self, memory: &mut EchoStateMemory, frame: &Observation) -> Result<SensorCodes> {
        let (x, y) = self.encode(frame)?;
        let h = memory.state().to_vec();
        let mut s_hat = x.clone();
        s_hat.extend_from_slice(&h);
        memory.step(&x)?;
        Ok(SensorCodes { x, y, h, s_hat })
    }

    /// Most likely full frame for a code `x`.
    pub fn decode_x(&self, x: &[f64]) -> Result<Observation> {
        let probs = self.dx.infer(&self.dx_params, x, 1)?;
        let pixels = argmax_pixels(&probs, crate::env::NUM_CHANNELS);
        Ok(Observation::from_pixels(pixels))
    }

    /// Most likely masked frame for a code `y`.
    pub fn decode_y(&self, y: &[f64]) -> Result<Observation> {
        let probs = self.dy.infer(&self.dy_params, y, 1)?;
        Ok(Observation::from_pixels(argmax_pixels(&probs, self.y_classes)))
    }

    /// Hash of every sensor weight, including the reservoir.
    pub fn checksum(&self) -> u64 {
        let mut all = ParameterSet::new();
        for set in [&self.ex_params, &self.dx_params, &self.ey_params, &self.dy_params] {
            for p in set.iter() {
                all.push(p.clone());
            }
        }
        for p in self.reservoir.to_params().iter() {
            all.push(p.clone());
        }
        all.checksum()
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        checkpoint::save(&self.ex_params, &dir.join("ex.smip"))?;
        checkpoint::save(&self.dx_params, &dir.join("dx.smip"))?;
        checkpoint::save(&self.ey_params, &dir.join("ey.smip"))?;
        checkpoint::save(&self.dy_params, &dir.join("dy.smip"))?;
        checkpoint::save(&self.reservoir.to_params(), &dir.join("memory.smip"))?;
        let meta = SensorMeta {
            y_classes: self.y_classes,
            report: self.report.clone(),
        };
        std::fs::write(dir.join("sensors.json"), serde_json::to_string_pretty(&meta)?)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let meta: SensorMeta = serde_json::from_str(&std::fs::read_to_string(dir.join("sensors.json"))?)?;
        let (ex, dx, ey, dy) = (
            networks::encoder_x(),
            networks::decoder_x(),
            networks::encoder_y(),
            networks::decoder_y(meta.y_classes),
        );
        let sensors = Sensors {
            ex_params: checkpoint::load(&dir.join("ex.smip"))?,
            dx_params: checkpoint::load(&dir.join("dx.smip"))?,
            ey_params: checkpoint::load(&dir.join("ey.smip"))?,
            dy_params: checkpoint::load(&dir.join("dy.smip"))?,
            reservoir: Arc::new(Reservoir::from_params(&checkpoint::load(&dir.join("memory.smip"))?)?),
            ex,
            dx,
            ey,
            dy,
            y_classes: meta.y_classes,
            report: meta.report,
        };
        // shape validation happens on the first forward pass; do it eagerly
        let probe = Observation::timeout();
        sensors.encode(&probe)?;
        sensors.decode_x(&[0.0; X_DIM])?;
        sensors.decode_y(&[0.0; Y_DIM])?;
        Ok(sensors)
    }
}

fn argmax_pixels(probs: &[f64], classes: usize) -> [crate::env::Channel; OBS_PIXELS] {
    let mut pixels = [crate::env::Channel::Empty; OBS_PIXELS];
    for (p, px) in pixels.iter_mut().zip(probs.chunks_exact(classes)) {
        let best = px
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc })
            .0;
        *p = crate::env::Channel::ALL[best];
    }
    pixels
}

/// Trains `E_x`/`D_x` to reconstruct full frames.
pub fn train_autoencoder_x<R: rand::Rng + ?Sized>(
    sensors: &mut Sensors,
    dataset: &PretrainDataset,
    config: &AutoencoderConfig,
    rng: &mut R,
) -> Result<TrainReport> {
    if dataset.is_empty() {
        return Err(Error::InvalidArgument("empty pretraining dataset".into()));
    }
    let targets = class_targets(&dataset.frames, |f| *f);
    let frames = &dataset.frames;
    let validation = dataset.len() - dataset.train;
    let mut ae = PixelAutoencoder {
        encoder: &sensors.ex,
        encoder_params: &mut sensors.ex_params,
        decoder: &sensors.dx,
        decoder_params: &mut sensors.dx_params,
        classes: crate::env::NUM_CHANNELS,
    };
    ae.train(config, dataset.train, validation, |idx| Ok(one_hot_rows(frames, idx)), &targets, rng)
}

/// Trains `E_y`/`D_y` to reconstruct the other-agent mask from `x = E_x(o)`,
/// leaving `E_x` untouched.
pub fn train_autoencoder_y<R: rand::Rng + ?Sized>(
    sensors: &mut Sensors,
    dataset: &PretrainDataset,
    config: &AutoencoderConfig,
    rng: &mut R,
) -> Result<TrainReport> {
    if dataset.is_empty() {
        return Err(Error::InvalidArgument("empty pretraining dataset".into()));
    }
    let targets = class_targets(&dataset.frames, Observation::mask_others);
    let frames = &dataset.frames;
    let (ex, ex_params) = (&sensors.ex, &sensors.ex_params);
    let codes = |idx: &[usize]| ex.infer(ex_params, &one_hot_rows(frames, idx), idx.len());
    let validation = dataset.len() - dataset.train;
    let mut ae = PixelAutoencoder {
        encoder: &sensors.ey,
        encoder_params: &mut sensors.ey_params,
        decoder: &sensors.dy,
        decoder_params: &mut sensors.dy_params,
        classes: sensors.y_classes,
    };
    ae.train(config, dataset.train, validation, codes, &targets, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::MapSpec;

    #[test]
    fn perceive_orders_memory_before_update() {
        let sensors = Sensors::init(3, &SensorConfig::default()).unwrap();
        let mut mem = sensors.new_memory();
        let ds = sample_pretrain_dataset(&MapSpec::small_map(), 3, 2, 0, 0.0).unwrap();
        let first = sensors.perceive(&mut mem, &ds.frames[0]).unwrap();
        assert_eq!(first.s_hat.len(), S_HAT_DIM);
        assert_eq!(first.y.len(), Y_DIM);
        assert!(first.h.iter().all(|&h| h == 0.0));
        assert_eq!(&first.s_hat[..X_DIM], first.x.as_slice());
        let second = sensors.perceive(&mut mem, &ds.frames[0]).unwrap();
        assert_eq!(first.x, second.x);
        assert_ne!(first.s_hat, second.s_hat);
        mem.reset();
        assert_eq!(sensors.perceive(&mut mem, &ds.frames[0]).unwrap(), first);
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let sensors = Sensors::init(8, &SensorConfig::default()).unwrap();
        sensors.save(dir.path()).unwrap();
        let back = Sensors::load(dir.path()).unwrap();
        assert_eq!(back.checksum(), sensors.checksum());
    }

    #[test]
    fn too_few_y_classes_rejected() {
        let config = SensorConfig {
            y_classes: 2,
            ..SensorConfig::default()
        };
        assert!(Sensors::init(0, &config).is_err());
    }
}
