use proptest::prelude::*;

use socialmi::critic::ZERO_MI;
use socialmi::metrics::{
    aggregate_sweep, band, cooperation_index, equity, parse_run_csv, peace, run_csv, shifted_mi, utilities, Index,
    IterationRecord, CI_Z,
};

fn payoffs() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..500.0, 1..12)
}

fn record(iteration: usize, u: f64, psi: Option<f64>) -> IterationRecord {
    IterationRecord {
        iteration,
        payoffs: vec![u, u],
        u,
        e: 1.0,
        p: 0.5,
        s: 10.0 * u,
        psi,
        h_bar: 1.25,
        i_raw: ZERO_MI + 0.1,
        i_shifted: 0.1,
        agent_mi: vec![0.1, 0.2],
        predictor_mse: 0.03,
    }
}

proptest! {
    #[test]
    fn equity_lies_in_unit_interval(g in payoffs()) {
        let e = equity(&g).unwrap();
        prop_assert!((-1e-12..=1.0 + 1e-12).contains(&e));
    }

    #[test]
    fn equity_ignores_order_and_scale(mut g in payoffs(), scale in 0.01f64..100.0) {
        let e = equity(&g).unwrap();
        let scaled: Vec<f64> = g.iter().map(|x| x * scale).collect();
        prop_assert!((equity(&scaled).unwrap() - e).abs() < 1e-9);
        g.reverse();
        prop_assert!((equity(&g).unwrap() - e).abs() < 1e-12);
    }

    #[test]
    fn equal_shares_are_perfectly_equitable(x in 0.0f64..100.0, n in 1usize..10) {
        prop_assert!((equity(&vec![x; n]).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn one_winner_gives_one_over_n(x in 1.0f64..100.0, n in 1usize..10) {
        let mut g = vec![0.0; n];
        g[0] = x;
        prop_assert!((equity(&g).unwrap() - 1.0 / n as f64).abs() < 1e-12);
    }

    #[test]
    fn utilities_is_the_mean(g in payoffs()) {
        let u = utilities(&g).unwrap();
        let lo = g.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = g.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(u >= lo - 1e-9 && u <= hi + 1e-9);
    }

    #[test]
    fn peace_counts_timeout_slots(n in 1usize..10, l in 1usize..100, frac in 0.0f64..=1.0) {
        let slots = ((n * l) as f64 * frac) as usize;
        let p = peace(slots, n, l).unwrap();
        prop_assert!((0.0..=1.0).contains(&p));
        prop_assert!((p - (1.0 - slots as f64 / (n * l) as f64)).abs() < 1e-15);
    }

    #[test]
    fn cooperation_index_is_nonnegative_for_nonnegative_utility(i in -3.0f64..3.0, h in 1e-5f64..2.1, u in 0.0f64..300.0) {
        let psi = cooperation_index(i, h, u).unwrap();
        prop_assert!(psi >= 0.0);
        if i <= 0.0 {
            prop_assert_eq!(psi, 0.0);
        }
    }

    #[test]
    fn csv_roundtrips(rows in prop::collection::vec((0.0f64..300.0, prop::option::of(0.0f64..50.0)), 1..20)) {
        let records: Vec<IterationRecord> = rows.iter().enumerate().map(|(k, (u, psi))| record(k, *u, *psi)).collect();
        prop_assert_eq!(parse_run_csv(&run_csv(&records)).unwrap(), records);
    }

    #[test]
    fn band_matches_sample_statistics(v in prop::collection::vec(-10.0f64..10.0, 2..20)) {
        let b = band(&v);
        let k = v.len() as f64;
        let mean = v.iter().sum::<f64>() / k;
        let sd = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (k - 1.0)).sqrt();
        prop_assert!((b.mean - mean).abs() < 1e-12);
        prop_assert!((b.half_width - CI_Z * sd / k.sqrt()).abs() < 1e-12);
    }
}

#[test]
fn independence_reads_zero_after_shift() {
    assert_eq!(shifted_mi(ZERO_MI), 0.0);
    assert!((ZERO_MI + 2.0 * 2f64.ln()).abs() < 1e-15);
}

#[test]
fn cooperation_index_is_missing_for_deterministic_policies() {
    assert_eq!(cooperation_index(1.0, 0.0, 10.0), None);
    assert_eq!(cooperation_index(1.0, 1e-6, 10.0), None);
}

#[test]
fn sweep_bands_skip_missing_values() {
    let runs = vec![
        vec![record(0, 1.0, Some(2.0)), record(1, 2.0, None)],
        vec![record(0, 3.0, Some(4.0)), record(1, 4.0, Some(6.0))],
    ];
    let summary = aggregate_sweep(&runs).unwrap();
    assert_eq!(summary.iterations(), 2);
    assert_eq!(summary.get(Index::U)[0].mean, 2.0);
    assert_eq!(summary.get(Index::Psi)[0].mean, 3.0);
    let lone = summary.get(Index::Psi)[1];
    assert_eq!(lone.mean, 6.0);
    assert!(lone.half_width.is_nan());
}

#[test]
fn invalid_inputs_are_rejected() {
    assert!(equity(&[]).is_err());
    assert!(equity(&[1.0, -1.0]).is_err());
    assert!(utilities(&[]).is_err());
    assert!(peace(11, 2, 5).is_err());
    assert!(peace(0, 0, 5).is_err());
}
