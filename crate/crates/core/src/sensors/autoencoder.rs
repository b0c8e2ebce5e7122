use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{Observation, OBS_LEN, OBS_PIXELS};
use crate::error::{Error, Result};
use crate::tensor::batching::shuffled_batches;
use crate::tensor::{Network, ParameterSet};

const PROB_FLOOR: f64 = 1e-12;
const EVAL_BATCH: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AutoencoderConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
}

impl Default for AutoencoderConfig {
    fn default() -> Self {
        AutoencoderConfig {
            batch_size: 128,
            epochs: 10,
            learning_rate: 1e-3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub validation_loss: f64,
    pub validation_accuracy: f64,
}

impl EpochStats {
    /// One minus validation pixel accuracy.
    pub fn reconstruction_error(&self) -> f64 {
        1.0 - self.validation_accuracy
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
}

impl TrainReport {
    pub fn final_accuracy(&self) -> f64 {
        self.epochs.last().map_or(0.0, |e| e.validation_accuracy)
    }
}

/// Mean per-pixel cross-entropy of softmax outputs `probs` (`classes` per
/// pixel) against `targets`; writes `dL/dprobs` into `grad` when given.
pub fn pixel_cross_entropy(probs: &[f64], targets: &[u8], classes: usize, grad: Option<&mut [f64]>) -> f64 {
    let pixels = targets.len();
    let scale = 1.0 / pixels as f64;
    let mut loss = 0.0;
    for (px, &t) in probs.chunks_exact(classes).zip(targets) {
        loss -= px[t as usize].max(PROB_FLOOR).ln();
    }
    if let Some(grad) = grad {
        grad.iter_mut().for_each(|g| *g = 0.0);
        for (i, (px, &t)) in probs.chunks_exact(classes).zip(targets).enumerate() {
            let p = px[t as usize];
            if p > PROB_FLOOR {
                grad[i * classes + t as usize] = -scale / p;
            }
        }
    }
    loss * scale
}

/// Number of pixels whose arg-max class equals the target.
pub fn correct_pixels(probs: &[f64], targets: &[u8], classes: usize) -> usize {
    probs
        .chunks_exact(classes)
        .zip(targets)
        .filter(|(px, &t)| {
            let best = px
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc });
            best.0 == t as usize
        })
        .count()
}

/// An encoder/decoder pair trained to classify every pixel of its target.
pub struct PixelAutoencoder<'a> {
    pub encoder: &'a Network,
    pub encoder_params: &'a mut ParameterSet,
    pub decoder: &'a Network,
    pub decoder_params: &'a mut ParameterSet,
    pub classes: usize,
}

impl PixelAutoencoder<'_> {
    fn evaluate<I>(&self, count: usize, inputs: &I, targets: &[u8]) -> Result<(f64, f64)>
    where
        I: Fn(&[usize]) -> Result<Vec<f64>>,
    {
        let mut loss = 0.0;
        let mut correct = 0usize;
        let all: Vec<usize> = (0..count).collect();
        for chunk in all.chunks(EVAL_BATCH) {
            let x = inputs(chunk)?;
            let code = self.encoder.infer(self.encoder_params, &x, chunk.len())?;
            let out = self.decoder.infer(self.decoder_params, &code, chunk.len())?;
            let t = gather_targets(targets, chunk);
            loss += pixel_cross_entropy(&out, &t, self.classes, None) * chunk.len() as f64;
            correct += correct_pixels(&out, &t, self.classes);
        }
        Ok((loss / count as f64, correct as f64 / (count * OBS_PIXELS) as f64))
    }

    /// Minibatch Adam over `train_count` samples. `inputs` builds the encoder
    /// input rows for a set of sample indices; validation indices are offset
    /// by `train_count`.
    pub fn train<I, R>(
        &mut self,
        config: &AutoencoderConfig,
        train_count: usize,
        validation_count: usize,
        inputs: I,
        targets: &[u8],
        rng: &mut R,
    ) -> Result<TrainReport>
    where
        I: Fn(&[usize]) -> Result<Vec<f64>>,
        R: Rng + ?Sized,
    {
        if train_count == 0 {
            return Err(Error::InvalidArgument("empty training set".into()));
        }
        let mut report = TrainReport::default();
        for epoch in 0..config.epochs {
            let mut total = 0.0;
            for batch in shuffled_batches(train_count, config.batch_size, rng) {
                let b = batch.len();
                let x = inputs(&batch)?;
                let (code, enc_tape) = self.encoder.forward(self.encoder_params, &x, b)?;
                let (out, dec_tape) = self.decoder.forward(self.decoder_params, &code, b)?;
                let t = gather_targets(targets, &batch);
                let mut grad = vec![0.0; out.len()];
                let loss = pixel_cross_entropy(&out, &t, self.classes, Some(&mut grad));
                if !loss.is_finite() {
                    return Err(Error::NonFinite(format!(
                        "{} reconstruction loss diverged in epoch {epoch}",
                        self.decoder.name()
                    )));
                }
                total += loss * b as f64;
                let g_code = self
                    .decoder
                    .backward(self.decoder_params, &dec_tape, &grad, true)?
                    .expect("input gradient requested");
                self.encoder.backward(self.encoder_params, &enc_tape, &g_code, false)?;
                self.decoder_params.adam_step(config.learning_rate)?;
                self.encoder_params.adam_step(config.learning_rate)?;
            }
            let (validation_loss, validation_accuracy) = if validation_count == 0 {
                self.evaluate(train_count, &inputs, targets)?
            } else {
                let offset = |idx: &[usize]| inputs(&idx.iter().map(|i| i + train_count).collect::<Vec<_>>());
                self.evaluate(validation_count, &offset, &targets[train_count * OBS_PIXELS..])?
            };
            let stats = EpochStats {
                epoch,
                train_loss: total / train_count as f64,
                validation_loss,
                validation_accuracy,
            };
            log::info!(
                "{} epoch {epoch}: loss {:.5} validation accuracy {:.5}",
                self.decoder.name(),
                stats.train_loss,
                stats.validation_accuracy
            );
            report.epochs.push(stats);
        }
        Ok(report)
    }
}

fn gather_targets(targets: &[u8], indices: &[usize]) -> Vec<u8> {
    let mut out = Vec::with_capacity(indices.len() * OBS_PIXELS);
    for &i in indices {
        out.extend_from_slice(&targets[i * OBS_PIXELS..(i + 1) * OBS_PIXELS]);
    }
    out
}

/// One-hot rows for the frames at `indices`.
pub fn one_hot_rows(frames: &[Observation], indices: &[usize]) -> Vec<f64> {
    let mut out = vec![0.0; indices.len() * OBS_LEN];
    for (row, &i) in out.chunks_exact_mut(OBS_LEN).zip(indices) {
        frames[i].write_one_hot(row);
    }
    out
}

pub fn class_targets<F: Fn(&Observation) -> Observation>(frames: &[Observation], view: F) -> Vec<u8> {
    frames.iter().flat_map(|f| view(f).classes()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cross_entropy_of_perfect_prediction_is_zero() {
        let probs = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0];
        let mut grad = [0.0; 6];
        let loss = pixel_cross_entropy(&probs, &[0, 1], 3, Some(&mut grad));
        assert_eq!(loss, 0.0);
        assert_eq!(grad, [-0.5, 0.0, 0.0, 0.0, -0.5, 0.0]);
        assert_eq!(correct_pixels(&probs, &[0, 1], 3), 2);
        assert_eq!(correct_pixels(&probs, &[1, 1], 3), 1);
    }

    #[test]
    fn uniform_prediction_costs_log_classes() {
        let probs = [0.25; 8];
        let loss = pixel_cross_entropy(&probs, &[3, 0], 4, None);
        assert!((loss - 4f64.ln()).abs() < 1e-12);
    }
}
