use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use socialmi::sensors::{spectral_radius, Reservoir};
use socialmi::tensor::batching::{gather_rows, shuffled_batches};
use socialmi::tensor::linalg::gemm;
use socialmi::tensor::ops::{entropy, sigmoid, softmax_in_place, softplus};

fn matrix(rows: usize, cols: usize, data: &[f64]) -> DMatrix<f64> {
    DMatrix::from_row_slice(rows, cols, data)
}

fn eigen_radius(a: &[f64], n: usize) -> f64 {
    matrix(n, n, a).complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max)
}

fn values(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-2.0f64..2.0, len)
}

proptest! {
    #[test]
    fn gemm_matches_nalgebra(
        (m, k, n) in (1usize..7, 1usize..7, 1usize..7),
        trans_a in any::<bool>(),
        trans_b in any::<bool>(),
        beta in prop_oneof![Just(0.0), -1.0f64..1.0],
        seed in any::<u64>(),
    ) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |len: usize| -> Vec<f64> { (0..len).map(|_| rng.random_range(-1.0..1.0)).collect() };
        let a = draw(m * k);
        let b = draw(k * n);
        let c0 = draw(m * n);
        let op_a = if trans_a { matrix(k, m, &a).transpose() } else { matrix(m, k, &a) };
        let op_b = if trans_b { matrix(n, k, &b).transpose() } else { matrix(k, n, &b) };
        let expected = &op_a * &op_b + matrix(m, n, &c0) * beta;
        let mut c = c0.clone();
        gemm(m, k, n, &a, trans_a, &b, trans_b, beta, &mut c);
        for i in 0..m {
            for j in 0..n {
                prop_assert!((c[i * n + j] - expected[(i, j)]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gelfand_radius_matches_eigenvalues(n in 2usize..9, seed in any::<u64>()) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a: Vec<f64> = (0..n * n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let expected = eigen_radius(&a, n);
        let got = spectral_radius(&a, n);
        prop_assert!((got - expected).abs() <= 1e-6 * expected.max(1.0), "{got} vs {expected}");
    }

    #[test]
    fn softmax_is_a_distribution(mut v in values(8)) {
        softmax_in_place(&mut v);
        prop_assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(v.iter().all(|p| *p > 0.0));
        let h = entropy(&v);
        prop_assert!(h >= 0.0 && h <= 8f64.ln() + 1e-12);
    }

    #[test]
    fn softplus_identities(x in -700.0f64..700.0) {
        prop_assert!((softplus(x) - softplus(-x) - x).abs() <= 1e-9 * x.abs().max(1.0));
        prop_assert!((sigmoid(x) + sigmoid(-x) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn shuffled_batches_partition_the_indices(n in 0usize..200, batch in 1usize..40, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let batches = shuffled_batches(n, batch, &mut rng);
        prop_assert!(batches.iter().all(|b| !b.is_empty() && b.len() <= batch));
        let mut all: Vec<usize> = batches.concat();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
    }

    #[test]
    fn gather_rows_copies_rows(rows in prop::collection::vec(0usize..5, 0..10)) {
        let data: Vec<f64> = (0..15).map(f64::from).collect();
        let out = gather_rows(&data, 3, &rows);
        for (k, &r) in rows.iter().enumerate() {
            prop_assert_eq!(&out[k * 3..k * 3 + 3], &data[r * 3..r * 3 + 3]);
        }
    }
}

#[test]
fn reservoir_radius_is_095_by_eigendecomposition() {
    for seed in [0, 1, 7, 12345] {
        let reservoir = Reservoir::new(seed, 0.95).unwrap();
        let w = reservoir.recurrent_weights();
        let n = (w.len() as f64).sqrt() as usize;
        let rho = eigen_radius(w, n);
        assert!((0.9499..=0.9501).contains(&rho), "seed {seed}: {rho}");
    }
}

#[test]
fn reservoir_rejects_unstable_targets() {
    assert!(Reservoir::new(0, 1.0).is_err());
    assert!(Reservoir::new(0, 0.0).is_err());
}
