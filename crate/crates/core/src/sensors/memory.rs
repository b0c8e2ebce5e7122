use std::sync::Arc;

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::seed::{rng_for, Stream};
use crate::sensors::networks::{H_DIM, X_DIM};
use crate::tensor::linalg::gemm;
use crate::tensor::{Param, ParameterSet, Tensor};

/// Repeated squarings used by [`spectral_radius`].
pub const SQUARINGS: usize = 30;
pub const DEFAULT_SPECTRAL_RADIUS: f64 = 0.95;
const INPUT_SCALE: f64 = 0.1;

/// Spectral radius of a square row-major matrix from Gelfand's formula,
/// `rho = lim |A^k|^(1/k)`, evaluated at `k = 2^SQUARINGS` with the matrix
/// renormalized after every squaring.
pub fn spectral_radius(a: &[f64], n: usize) -> f64 {
    assert_eq!(a.len(), n * n);
    let frobenius = |m: &[f64]| m.iter().map(|x| x * x).sum::<f64>().sqrt();
    let norm = frobenius(a);
    if norm == 0.0 {
        return 0.0;
    }
    let mut m: Vec<f64> = a.iter().map(|x| x / norm).collect();
    let mut log_rho = norm.ln();
    let mut next = vec![0.0; n * n];
    let mut power = 1.0f64;
    for _ in 0..SQUARINGS {
        gemm(n, n, n, &m, false, &m, false, 0.0, &mut next);
        let c = frobenius(&next);
        if c == 0.0 || !c.is_finite() {
            return 0.0;
        }
        power *= 2.0;
        log_rho += c.ln() / power;
        for (dst, src) in m.iter_mut().zip(&next) {
            *dst = src / c;
        }
    }
    log_rho.exp()
}

/// Fixed weights of the echo-state memory, shared by every agent.
#[derive(Debug, Clone, PartialEq)]
pub struct Reservoir {
    /// `H_DIM x X_DIM`, row-major.
    w_in: Vec<f64>,
    /// `H_DIM x H_DIM`, row-major.
    w_rec: Vec<f64>,
}

impl Reservoir {
    pub fn new(seed: u64, target_radius: f64) -> Result<Self> {
        if !(target_radius > 0.0 && target_radius < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "spectral radius target {target_radius} must lie in (0, 1)"
            )));
        }
        let mut rng = rng_for(seed, Stream::Memory, 0);
        let w_in: Vec<f64> = (0..H_DIM * X_DIM).map(|_| rng.random_range(-INPUT_SCALE..INPUT_SCALE)).collect();
        let mut w_rec: Vec<f64> = (0..H_DIM * H_DIM).map(|_| rng.random_range(-1.0..1.0)).collect();
        let rho = spectral_radius(&w_rec, H_DIM);
        let scale = target_radius / rho;
        w_rec.iter_mut().for_each(|w| *w *= scale);
        Ok(Reservoir { w_in, w_rec })
    }

    pub fn input_weights(&self) -> &[f64] {
        &self.w_in
    }

    pub fn recurrent_weights(&self) -> &[f64] {
        &self.w_rec
    }

    pub fn spectral_radius(&self) -> f64 {
        spectral_radius(&self.w_rec, H_DIM)
    }

    /// `h <- tanh(W_rec h + W_in x)` for `batch` rows of `hs` and `xs` at once.
    pub fn step_batch(&self, hs: &mut [f64], xs: &[f64], batch: usize) {
        let mut pre = vec![0.0; batch * H_DIM];
        gemm(batch, X_DIM, H_DIM, xs, false, &self.w_in, true, 0.0, &mut pre);
        gemm(batch, H_DIM, H_DIM, hs, false, &self.w_rec, true, 1.0, &mut pre);
        for (h, p) in hs.iter_mut().zip(&pre) {
            *h = p.tanh();
        }
    }

    pub fn to_params(&self) -> ParameterSet {
        let mut set = ParameterSet::new();
        set.push(Param::new("memory.w_in", Tensor::from_vec(&[H_DIM, X_DIM], self.w_in.clone()).expect("shape")));
        set.push(Param::new("memory.w_rec", Tensor::from_vec(&[H_DIM, H_DIM], self.w_rec.clone()).expect("shape")));
        set
    }

    pub fn from_params(params: &ParameterSet) -> Result<Self> {
        let w_in = params
            .by_name("memory.w_in")
            .ok_or_else(|| Error::InvalidArgument("missing memory.w_in".into()))?;
        let w_rec = params
            .by_name("memory.w_rec")
            .ok_or_else(|| Error::InvalidArgument("missing memory.w_rec".into()))?;
        if w_in.value.shape() != [H_DIM, X_DIM] {
            return Err(Error::shape("memory.w_in", format!("{:?}", [H_DIM, X_DIM]), format!("{:?}", w_in.value.shape())));
        }
        if w_rec.value.shape() != [H_DIM, H_DIM] {
            return Err(Error::shape("memory.w_rec", format!("{:?}", [H_DIM, H_DIM]), format!("{:?}", w_rec.value.shape())));
        }
        Ok(Reservoir {
            w_in: w_in.value.data().to_vec(),
            w_rec: w_rec.value.data().to_vec(),
        })
    }
}

/// A reservoir plus one private state vector.
#[derive(Debug, Clone, PartialEq)]
pub struct EchoStateMemory {
    reservoir: Arc<Reservoir>,
    h: Vec<f64>,
}

impl EchoStateMemory {
    pub fn init(seed: u64, target_radius: f64) -> Result<Self> {
        Ok(Self::with_reservoir(Arc::new(Reservoir::new(seed, target_radius)?)))
    }

    pub fn with_reservoir(reservoir: Arc<Reservoir>) -> Self {
        EchoStateMemory {
            reservoir,
            h: vec![0.0; H_DIM],
        }
    }

    pub fn reservoir(&self) -> &Reservoir {
        &self.reservoir
    }

    pub fn state(&self) -> &[f64] {
        &self.h
    }

    pub fn set_state(&mut self, h: &[f64]) -> Result<()> {
        if h.len() != H_DIM {
            return Err(Error::shape("memory state", H_DIM, h.len()));
        }
        self.h.copy_from_slice(h);
        Ok(())
    }

    pub fn reset(&mut self) {
        self.h.iter_mut().for_each(|h| *h = 0.0);
    }

    pub fn step(&mut self, x: &[f64]) -> Result<&[f64]> {
        if x.len() != X_DIM {
            return Err(Error::shape("memory input", X_DIM, x.len()));
        }
        self.reservoir.step_batch(&mut self.h, x, 1);
        Ok(&self.h)
    }
}
