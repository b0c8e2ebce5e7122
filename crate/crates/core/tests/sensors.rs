use std::sync::Arc;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use socialmi::sensors::networks::{H_DIM, X_DIM};
use socialmi::sensors::{EchoStateMemory, Reservoir};

fn inputs(seed: u64, steps: usize) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..steps).map(|_| (0..X_DIM).map(|_| rng.random_range(-3.0..3.0)).collect()).collect()
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn state_stays_in_the_unit_cube(seed in any::<u64>()) {
        let mut memory = EchoStateMemory::init(seed % 4, 0.95).unwrap();
        for x in inputs(seed, 30) {
            let h = memory.step(&x).unwrap();
            prop_assert!(h.iter().all(|v| v.abs() <= 1.0));
        }
    }
}

#[test]
fn initial_state_is_forgotten() {
    let reservoir = Arc::new(Reservoir::new(2, 0.95).unwrap());
    let mut a = EchoStateMemory::with_reservoir(reservoir.clone());
    let mut b = EchoStateMemory::with_reservoir(reservoir);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let start: Vec<f64> = (0..H_DIM).map(|_| rng.random_range(-1.0..1.0)).collect();
    b.set_state(&start).unwrap();
    let initial = distance(a.state(), b.state());
    for x in inputs(8, 400) {
        a.step(&x).unwrap();
        b.step(&x).unwrap();
    }
    let last = distance(a.state(), b.state());
    assert!(last < 1e-3 * initial, "{initial} -> {last}");
}

#[test]
fn reset_returns_to_zero() {
    let mut memory = EchoStateMemory::init(0, 0.95).unwrap();
    memory.step(&vec![1.0; X_DIM]).unwrap();
    assert!(memory.state().iter().any(|h| *h != 0.0));
    memory.reset();
    assert!(memory.state().iter().all(|h| *h == 0.0));
}

#[test]
fn wrong_lengths_are_rejected() {
    let mut memory = EchoStateMemory::init(0, 0.95).unwrap();
    assert!(memory.step(&[0.0; X_DIM - 1]).is_err());
    assert!(memory.set_state(&[0.0; 3]).is_err());
}
