use std::collections::HashSet;

use proptest::prelude::*;

use socialmi::env::{
    render_observation, respawn_probability, Action, Cell, EventKind, GridState, MapSpec, Observation, TIMEOUT_STEPS,
};

fn actions(agents: usize, steps: usize) -> impl Strategy<Value = Vec<Vec<Action>>> {
    prop::collection::vec(prop::collection::vec(prop::sample::select(Action::ALL.to_vec()), agents), steps)
}

fn check_invariants(state: &GridState) -> Result<(), TestCaseError> {
    let map = state.map();
    let mut occupied = HashSet::new();
    for a in state.agents() {
        prop_assert!(a.timeout_remaining <= TIMEOUT_STEPS);
        if a.is_active() {
            prop_assert!(map.contains(a.position));
            prop_assert!(!map.is_wall(a.position));
            prop_assert!(occupied.insert(a.position), "two agents on {:?}", a.position);
        }
    }
    prop_assert_eq!(state.apples().len(), map.apple_sites().len());
    prop_assert_eq!(state.apple_count(), state.apples().iter().filter(|x| **x).count());
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn random_play_keeps_the_state_consistent(seed in any::<u64>(), plan in actions(4, 60)) {
        let mut state = GridState::reset(MapSpec::small_map(), 4, seed).unwrap();
        let mut last_step = 0;
        for joint in &plan {
            let outcome = state.step(joint).unwrap();
            check_invariants(&state)?;
            prop_assert!(outcome.rewards.iter().all(|r| *r == 0.0 || *r == 1.0));
            let collected = outcome.events.iter().filter(|e| matches!(e.kind, EventKind::Collected { .. })).count();
            prop_assert_eq!(collected as f64, outcome.rewards.iter().sum::<f64>());
            for e in outcome.events.iter() {
                prop_assert!(e.step >= last_step);
                last_step = e.step;
            }
            prop_assert_eq!(last_step.max(state.total_steps()), state.total_steps());
            for id in 0..4 {
                let obs = render_observation(&state, id).unwrap();
                prop_assert_eq!(obs.is_timeout(), !state.agents()[id].is_active());
                if !obs.is_timeout() {
                    prop_assert_eq!(obs.count(socialmi::env::Channel::Own), 1);
                }
            }
        }
    }

    #[test]
    fn same_seed_same_trajectory(seed in any::<u64>(), plan in actions(3, 30)) {
        let mut a = GridState::reset(MapSpec::small_map(), 3, seed).unwrap();
        let mut b = GridState::reset(MapSpec::small_map(), 3, seed).unwrap();
        for joint in &plan {
            prop_assert_eq!(a.step(joint).unwrap(), b.step(joint).unwrap());
        }
        prop_assert_eq!(a, b);
    }

    #[test]
    fn serialized_state_continues_identically(seed in any::<u64>(), plan in actions(2, 40)) {
        let mut a = GridState::reset(MapSpec::small_map(), 2, seed).unwrap();
        let (head, tail) = plan.split_at(20);
        for joint in head {
            a.step(joint).unwrap();
        }
        let mut b: GridState = serde_json::from_str(&serde_json::to_string(&a).unwrap()).unwrap();
        for joint in tail {
            prop_assert_eq!(a.step(joint).unwrap(), b.step(joint).unwrap());
        }
    }

    #[test]
    fn one_hot_roundtrips(classes in prop::collection::vec(0u8..7, socialmi::env::OBS_PIXELS)) {
        let values: Vec<f64> = classes
            .iter()
            .flat_map(|&c| (0..7u8).map(move |k| if k == c { 1.0 } else { 0.0 }))
            .collect();
        let obs = Observation::from_one_hot(&values).unwrap();
        prop_assert_eq!(obs.one_hot(), values);
        prop_assert_eq!(obs.classes().to_vec(), classes);
        let rotated = (0..4).fold(obs, |o, _| o.rotated_clockwise());
        prop_assert_eq!(rotated, obs);
    }
}

#[test]
fn respawn_probability_falls_with_fewer_neighbours() {
    let table: Vec<f64> = (0..8).map(respawn_probability).collect();
    assert_eq!(table[0], 0.0);
    assert!(table.windows(2).all(|w| w[0] <= w[1]));
    assert!(table.iter().all(|p| (0.0..=1.0).contains(p)));
}

#[test]
fn shipped_maps_parse() {
    for map in [MapSpec::default_map(), MapSpec::small_map()] {
        assert!(!map.apple_sites().is_empty());
        assert!(!map.spawn_points().is_empty());
        for &s in map.spawn_points() {
            assert_ne!(map.cell(s), Cell::Wall);
        }
    }
    assert_eq!((MapSpec::default_map().width(), MapSpec::default_map().height()), (25, 9));
}

#[test]
fn too_many_agents_is_an_error() {
    let map = MapSpec::small_map();
    let n = map.spawn_points().len() + 1;
    assert!(GridState::reset(map, n, 0).is_err());
}
