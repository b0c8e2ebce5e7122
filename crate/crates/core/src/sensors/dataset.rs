use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::env::{render_observation, Action, GridState, MapSpec, Observation, NUM_ACTIONS, NUM_CHANNELS, OBS_LEN, OBS_SIDE};
use crate::error::{Error, Result};
use crate::seed::{derive_seed, rng_for, Stream};

const MAGIC: &[u8; 4] = b"SMDS";
const VERSION: u32 = 1;
/// Share of frames held out for validation (2.8 of 12.8 million at full scale).
pub const DEFAULT_VALIDATION_FRACTION: f64 = 0.21875;

/// Frames recorded from random play, already shuffled; the first `train`
/// frames are the training split.
#[derive(Debug, Clone, PartialEq)]
pub struct PretrainDataset {
    pub frames: Vec<Observation>,
    pub train: usize,
}

impl PretrainDataset {
    pub fn new(frames: Vec<Observation>, validation_fraction: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&validation_fraction) {
            return Err(Error::InvalidArgument(format!("validation fraction {validation_fraction}")));
        }
        let validation = (frames.len() as f64 * validation_fraction).round() as usize;
        let train = frames.len() - validation.min(frames.len().saturating_sub(1));
        Ok(PretrainDataset { frames, train })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn train_frames(&self) -> &[Observation] {
        &self.frames[..self.train]
    }

    /// Falls back to the training frames when nothing was held out.
    pub fn validation_frames(&self) -> &[Observation] {
        if self.train == self.frames.len() {
            &self.frames
        } else {
            &self.frames[self.train..]
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = Vec::with_capacity(32 + self.frames.len() * OBS_LEN);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.frames.len() as u64).to_le_bytes());
        out.extend_from_slice(&(self.train as u64).to_le_bytes());
        for dim in [OBS_SIDE, OBS_SIDE, NUM_CHANNELS] {
            out.extend_from_slice(&(dim as u32).to_le_bytes());
        }
        for frame in &self.frames {
            out.extend(frame.one_hot().iter().map(|&v| v as u8));
        }
        std::fs::File::create(path)?.write_all(&out)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bad = |reason: &str| Error::checkpoint(path, reason);
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        if bytes.len() < 36 || &bytes[..4] != MAGIC {
            return Err(bad("not a dataset file"));
        }
        let u32_at = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes"));
        let u64_at = |i: usize| u64::from_le_bytes(bytes[i..i + 8].try_into().expect("8 bytes"));
        if u32_at(4) != VERSION {
            return Err(bad("unsupported dataset version"));
        }
        let count = u64_at(8) as usize;
        let train = u64_at(16) as usize;
        let dims = [u32_at(24), u32_at(28), u32_at(32)];
        if dims != [OBS_SIDE as u32, OBS_SIDE as u32, NUM_CHANNELS as u32] {
            return Err(bad("frame shape mismatch"));
        }
        let body = &bytes[36..];
        if body.len() != count * OBS_LEN || train > count {
            return Err(bad("truncated or inconsistent dataset"));
        }
        let mut frames = Vec::with_capacity(count);
        let mut buf = vec![0.0; OBS_LEN];
        for chunk in body.chunks_exact(OBS_LEN) {
            for (b, &v) in buf.iter_mut().zip(chunk) {
                *b = f64::from(v);
            }
            frames.push(Observation::from_one_hot(&buf).map_err(|_| bad("frame is not one-hot"))?);
        }
        Ok(PretrainDataset { frames, train })
    }
}

/// Runs `agents` uniformly random agents for `steps` steps and records every
/// agent's observation before each step, `agents * steps` frames in total.
pub fn sample_pretrain_dataset(
    map: &MapSpec,
    steps: usize,
    agents: usize,
    seed: u64,
    validation_fraction: f64,
) -> Result<PretrainDataset> {
    if steps == 0 {
        return Err(Error::InvalidArgument("pretraining needs at least one step".into()));
    }
    let mut env = GridState::reset(map.clone(), agents, derive_seed(seed, Stream::Pretrain, 0))?;
    let mut rng = rng_for(seed, Stream::Pretrain, 1);
    let mut frames = Vec::with_capacity(steps * agents);
    let mut actions = vec![Action::Still; agents];
    for _ in 0..steps {
        for id in 0..agents {
            frames.push(render_observation(&env, id)?);
        }
        for a in &mut actions {
            *a = Action::from_index(rng.random_range(0..NUM_ACTIONS)).expect("in range");
        }
        env.step(&actions)?;
    }
    frames.shuffle(&mut rng);
    PretrainDataset::new(frames, validation_fraction)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frame_count_is_agents_times_steps() {
        let ds = sample_pretrain_dataset(&MapSpec::small_map(), 50, 4, 1, 0.25).unwrap();
        assert_eq!(ds.len(), 200);
        assert_eq!(ds.train, 150);
        assert_eq!(ds.validation_frames().len(), 50);
    }

    #[test]
    fn sampling_is_deterministic() {
        let a = sample_pretrain_dataset(&MapSpec::small_map(), 10, 2, 9, 0.2).unwrap();
        let b = sample_pretrain_dataset(&MapSpec::small_map(), 10, 2, 9, 0.2).unwrap();
        assert_eq!(a, b);
        let c = sample_pretrain_dataset(&MapSpec::small_map(), 10, 2, 10, 0.2).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn zero_steps_rejected() {
        assert!(sample_pretrain_dataset(&MapSpec::small_map(), 0, 2, 0, 0.2).is_err());
    }

    #[test]
    fn file_round_trip_and_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("frames.bin");
        let ds = sample_pretrain_dataset(&MapSpec::small_map(), 5, 3, 2, 0.2).unwrap();
        ds.save(&path).unwrap();
        assert_eq!(PretrainDataset::load(&path).unwrap(), ds);
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 1]).unwrap();
        assert!(PretrainDataset::load(&path).is_err());
    }
}
