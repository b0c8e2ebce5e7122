use std::collections::VecDeque;

use rand::seq::SliceRandom;
use rand::{Rng as _, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::env::action::{Action, Orientation};
use crate::env::events::{Event, EventKind, EventLog};
use crate::env::map::{MapSpec, Pos};
use crate::error::{Error, Result};
use crate::seed::Rng;

/// Steps a beamed agent stays out of the game.
pub const TIMEOUT_STEPS: u32 = 25;
/// Half-width of the square field of vision.
pub const VISION_RADIUS: i32 = 4;

/// Respawn probability of a collected apple given the number of present
/// apples within Euclidean distance 2.
pub fn respawn_probability(nearby_apples: usize) -> f64 {
    match nearby_apples {
        0 => 0.0,
        1..=2 => 0.01,
        3..=4 => 0.05,
        _ => 0.1,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentState {
    pub id: usize,
    pub position: Pos,
    pub orientation: Orientation,
    /// Non-zero while the agent is out of the game.
    pub timeout_remaining: u32,
    pub spawn: Pos,
}

impl AgentState {
    pub fn is_active(&self) -> bool {
        self.timeout_remaining == 0
    }

    pub fn front(&self) -> Pos {
        let (dr, dc) = self.orientation.forward();
        self.position.offset(dr, dc)
    }
}

/// Result of one call to [`GridState::step`].
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub rewards: Vec<f64>,
    pub events: EventLog,
    /// The last apple was collected; the returned state is a fresh episode.
    pub terminated: bool,
}

/// Full state of the commons game.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridState {
    map: MapSpec,
    apples: Vec<bool>,
    agents: Vec<AgentState>,
    /// Steps since the start of the current episode.
    t: u64,
    /// Steps since construction, never reset.
    total_steps: u64,
    /// Cells swept by beams during the latest step.
    beams: Vec<Pos>,
    #[serde(with = "crate::seed::serde_rng")]
    rng: Rng,
}

impl GridState {
    /// All apple sites stocked; agents on the first `n` spawn points facing north.
    pub fn reset(map: MapSpec, n: usize, seed: u64) -> Result<Self> {
        if n > map.spawn_points().len() {
            return Err(Error::InvalidArgument(format!(
                "{n} agents but the map has {} spawn points",
                map.spawn_points().len()
            )));
        }
        let agents = map.spawn_points()[..n]
            .iter()
            .enumerate()
            .map(|(id, &spawn)| AgentState {
                id,
                position: spawn,
                orientation: Orientation::North,
                timeout_remaining: 0,
                spawn,
            })
            .collect();
        Ok(GridState {
            apples: vec![true; map.apple_sites().len()],
            map,
            agents,
            t: 0,
            total_steps: 0,
            beams: Vec::new(),
            rng: Rng::seed_from_u64(seed),
        })
    }

    fn restart_episode(&mut self) {
        self.apples.iter_mut().for_each(|a| *a = true);
        for agent in &mut self.agents {
            agent.position = agent.spawn;
            agent.orientation = Orientation::North;
            agent.timeout_remaining = 0;
        }
        self.t = 0;
        self.beams.clear();
    }

    pub fn map(&self) -> &MapSpec {
        &self.map
    }

    pub fn agents(&self) -> &[AgentState] {
        &self.agents
    }

    pub fn agent(&self, id: usize) -> Result<&AgentState> {
        self.agents.get(id).ok_or(Error::UnknownAgent(id))
    }

    pub fn num_agents(&self) -> usize {
        self.agents.len()
    }

    pub fn t(&self) -> u64 {
        self.t
    }

    pub fn total_steps(&self) -> u64 {
        self.total_steps
    }

    pub fn apples(&self) -> &[bool] {
        &self.apples
    }

    pub fn apple_count(&self) -> usize {
        self.apples.iter().filter(|&&a| a).count()
    }

    pub fn has_apple(&self, pos: Pos) -> bool {
        self.map.site_at(pos).is_some_and(|s| self.apples[s])
    }

    pub fn beams(&self) -> &[Pos] {
        &self.beams
    }

    /// Active agent standing on `pos`, if any.
    pub fn agent_at(&self, pos: Pos) -> Option<usize> {
        self.agents
            .iter()
            .position(|a| a.is_active() && a.position == pos)
    }

    /// Test and tooling hook: place an agent explicitly.
    pub fn place_agent(&mut self, id: usize, position: Pos, orientation: Orientation) -> Result<()> {
        if self.map.is_wall(position) {
            return Err(Error::InvalidArgument(format!("{position:?} is a wall")));
        }
        if self.agent_at(position).is_some_and(|other| other != id) {
            return Err(Error::InvalidArgument(format!("{position:?} is occupied")));
        }
        let agent = self.agents.get_mut(id).ok_or(Error::UnknownAgent(id))?;
        agent.position = position;
        agent.orientation = orientation;
        agent.timeout_remaining = 0;
        Ok(())
    }

    /// Test and tooling hook: set apple presence at an apple site.
    pub fn set_apple(&mut self, pos: Pos, present: bool) -> Result<()> {
        let site = self
            .map
            .site_at(pos)
            .ok_or_else(|| Error::InvalidArgument(format!("{pos:?} is not an apple site")))?;
        self.apples[site] = present;
        Ok(())
    }

    /// Advances the game by one step. `actions` holds one entry per agent;
    /// entries of agents that are out of the game when the step begins are
    /// ignored.
    pub fn step(&mut self, actions: &[Action]) -> Result<StepOutcome> {
        if actions.len() != self.agents.len() {
            return Err(Error::InvalidArgument(format!(
                "joint action has {} entries for {} agents",
                actions.len(),
                self.agents.len()
            )));
        }
        let step = self.total_steps + 1;
        let mut log = EventLog::default();
        let mut rewards = vec![0.0; self.agents.len()];
        self.beams.clear();
        let acting: Vec<bool> = self.agents.iter().map(AgentState::is_active).collect();

        // 1. timeouts tick down; agents whose timeout ends re-enter
        for id in 0..self.agents.len() {
            if self.agents[id].timeout_remaining > 0 {
                self.agents[id].timeout_remaining -= 1;
                if self.agents[id].timeout_remaining == 0 {
                    let cell = self.free_cell_near(self.agents[id].spawn, id);
                    let agent = &mut self.agents[id];
                    agent.position = cell;
                    agent.orientation = Orientation::North;
                    log.push(Event::new(step, Some(id), EventKind::Returned { row: cell.row, col: cell.col }));
                }
            }
        }

        // 2-3. moves and turns in random order; entering an apple collects it
        let mut order: Vec<usize> = (0..self.agents.len()).filter(|&i| acting[i]).collect();
        order.shuffle(&mut self.rng);
        for &id in &order {
            let agent = &self.agents[id];
            let (f, r) = (agent.orientation.forward(), agent.orientation.right());
            let delta = match actions[id] {
                Action::Up => Some(f),
                Action::Down => Some((-f.0, -f.1)),
                Action::Left => Some((-r.0, -r.1)),
                Action::Right => Some(r),
                Action::TurnLeft => {
                    self.agents[id].orientation = agent.orientation.turned_left();
                    None
                }
                Action::TurnRight => {
                    self.agents[id].orientation = agent.orientation.turned_right();
                    None
                }
                Action::Still | Action::Shoot => None,
            };
            if let Some((dr, dc)) = delta {
                let target = self.agents[id].position.offset(dr, dc);
                if self.map.is_wall(target) || self.agent_at(target).is_some() {
                    continue;
                }
                self.agents[id].position = target;
                if let Some(site) = self.map.site_at(target) {
                    if self.apples[site] {
                        self.apples[site] = false;
                        rewards[id] += 1.0;
                        log.push(Event::new(step, Some(id), EventKind::Collected { row: target.row, col: target.col }));
                    }
                }
            }
        }

        // 4. beams, resolved simultaneously from post-move positions
        let mut hit = vec![false; self.agents.len()];
        for id in 0..self.agents.len() {
            if !acting[id] || actions[id] != Action::Shoot || !self.agents[id].is_active() {
                continue;
            }
            log.push(Event::new(step, Some(id), EventKind::Fired));
            let agent = &self.agents[id];
            let (dr, dc) = agent.orientation.forward();
            for k in 1..=VISION_RADIUS {
                let cell = agent.position.offset(dr * k, dc * k);
                if self.map.is_wall(cell) {
                    break;
                }
                self.beams.push(cell);
                if let Some(victim) = self.agent_at(cell) {
                    if !hit[victim] {
                        hit[victim] = true;
                        log.push(Event::new(step, Some(victim), EventKind::Hit { by: id }));
                    }
                }
            }
        }
        for (agent, was_hit) in self.agents.iter_mut().zip(hit) {
            if was_hit {
                agent.timeout_remaining = TIMEOUT_STEPS;
            }
        }

        // 5. respawn against a snapshot of the present apples
        let snapshot = self.apples.clone();
        for site in 0..snapshot.len() {
            if snapshot[site] {
                continue;
            }
            let nearby = self.map.neighbours(site).iter().filter(|&&j| snapshot[j]).count();
            let p = respawn_probability(nearby);
            if p > 0.0 && self.rng.random::<f64>() < p {
                self.apples[site] = true;
                let pos = self.map.apple_sites()[site];
                log.push(Event::new(step, None, EventKind::AppleRespawned { row: pos.row, col: pos.col }));
            }
        }

        // 6-7. advance the clock; an empty field ends the episode
        self.t += 1;
        self.total_steps += 1;
        let terminated = self.apple_count() == 0;
        if terminated {
            self.restart_episode();
            log.push(Event::new(step, None, EventKind::EpisodeReset));
        }
        Ok(StepOutcome {
            rewards,
            events: log,
            terminated,
        })
    }

    /// Breadth-first search from `start` over non-wall cells for the nearest
    /// cell free of active agents; ties broken in reading order.
    fn free_cell_near(&self, start: Pos, ignoring: usize) -> Pos {
        let occupied = |p: Pos| {
            self.agents
                .iter()
                .any(|a| a.id != ignoring && a.is_active() && a.position == p)
        };
        let mut seen = vec![false; self.map.width() * self.map.height()];
        let index = |p: Pos| p.row as usize * self.map.width() + p.col as usize;
        let mut frontier = VecDeque::from([start]);
        seen[index(start)] = true;
        while !frontier.is_empty() {
            let mut layer: Vec<Pos> = frontier.drain(..).collect();
            layer.sort();
            if let Some(&free) = layer.iter().find(|&&p| !occupied(p)) {
                return free;
            }
            for p in layer {
                for (dr, dc) in [(-1, 0), (0, -1), (0, 1), (1, 0)] {
                    let q = p.offset(dr, dc);
                    if self.map.contains(q) && !self.map.is_wall(q) && !seen[index(q)] {
                        seen[index(q)] = true;
                        frontier.push_back(q);
                    }
                }
            }
        }
        start
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn open_map() -> MapSpec {
        "@@@@@@@@@@@\n@P.......P@\n@.........@\n@....a....@\n@.........@\n@P.......P@\n@@@@@@@@@@@\n"
            .parse()
            .unwrap()
    }

    #[test]
    fn respawn_table() {
        let expected = [0.0, 0.01, 0.01, 0.05, 0.05, 0.1, 0.1, 0.1, 0.1, 0.1, 0.1];
        for (n, p) in expected.iter().enumerate() {
            assert_eq!(respawn_probability(n), *p, "n_a = {n}");
        }
    }

    #[test]
    fn reset_places_agents_on_first_spawns() {
        let map = MapSpec::default_map();
        let state = GridState::reset(map.clone(), 10, 1).unwrap();
        assert_eq!(state.num_agents(), 10);
        assert!(state.agents().iter().all(|a| a.is_active()));
        for (a, s) in state.agents().iter().zip(map.spawn_points()) {
            assert_eq!(a.position, *s);
            assert_eq!(a.orientation, Orientation::North);
        }
        assert_eq!(state.apple_count(), map.apple_sites().len());
        assert_eq!(state.t(), 0);
        assert!(GridState::reset(map, 13, 1).is_err());
    }

    #[test]
    fn empty_population_still_steps() {
        let mut state = GridState::reset(open_map(), 0, 1).unwrap();
        let out = state.step(&[]).unwrap();
        assert!(out.rewards.is_empty());
        assert_eq!(state.t(), 1);
    }

    #[test]
    fn joint_action_length_is_checked() {
        let mut state = GridState::reset(open_map(), 2, 1).unwrap();
        assert!(state.step(&[Action::Still]).is_err());
    }

    #[test]
    fn moving_onto_apple_collects_it() {
        let mut state = GridState::reset(open_map(), 1, 1).unwrap();
        state.place_agent(0, Pos::new(4, 5), Orientation::North).unwrap();
        let out = state.step(&[Action::Up]).unwrap();
        assert_eq!(out.rewards, vec![1.0]);
        assert!(out.events.iter().any(|e| e.kind == EventKind::Collected { row: 3, col: 5 }));
        // the only apple is gone, so the episode restarted
        assert!(out.terminated);
        assert_eq!(state.apple_count(), 1);
        assert_eq!(state.t(), 0);
        assert_eq!(state.agents()[0].position, Pos::new(1, 1));
    }

    #[test]
    fn moves_are_egocentric() {
        let mut state = GridState::reset(open_map(), 1, 1).unwrap();
        state.place_agent(0, Pos::new(2, 3), Orientation::East).unwrap();
        state.step(&[Action::Up]).unwrap();
        assert_eq!(state.agents()[0].position, Pos::new(2, 4));
        state.step(&[Action::Left]).unwrap();
        assert_eq!(state.agents()[0].position, Pos::new(1, 4));
        state.step(&[Action::Left]).unwrap();
        assert_eq!(state.agents()[0].position, Pos::new(1, 4), "wall blocks");
        state.step(&[Action::TurnRight]).unwrap();
        assert_eq!(state.agents()[0].orientation, Orientation::South);
    }

    #[test]
    fn occupied_cell_blocks_move() {
        let mut state = GridState::reset(open_map(), 2, 1).unwrap();
        state.place_agent(0, Pos::new(2, 2), Orientation::East).unwrap();
        state.place_agent(1, Pos::new(2, 3), Orientation::North).unwrap();
        state.step(&[Action::Up, Action::Still]).unwrap();
        assert_eq!(state.agents()[0].position, Pos::new(2, 2));
    }

    #[test]
    fn contested_cell_goes_to_one_agent() {
        for seed in 0..20 {
            let mut state = GridState::reset(open_map(), 2, seed).unwrap();
            state.place_agent(0, Pos::new(2, 2), Orientation::East).unwrap();
            state.place_agent(1, Pos::new(2, 4), Orientation::West).unwrap();
            state.step(&[Action::Up, Action::Up]).unwrap();
            let at_target = state.agents().iter().filter(|a| a.position == Pos::new(2, 3)).count();
            assert_eq!(at_target, 1);
            assert_ne!(state.agents()[0].position, state.agents()[1].position);
        }
    }

    #[test]
    fn beam_times_out_victim_for_exactly_25_steps() {
        let mut state = GridState::reset(open_map(), 2, 1).unwrap();
        state.place_agent(0, Pos::new(4, 2), Orientation::East).unwrap();
        state.place_agent(1, Pos::new(4, 4), Orientation::North).unwrap();
        let out = state.step(&[Action::Shoot, Action::Still]).unwrap();
        assert!(out.events.iter().any(|e| e.kind == EventKind::Hit { by: 0 }));
        assert_eq!(state.agents()[1].timeout_remaining, TIMEOUT_STEPS);
        let mut absent = 0;
        while !state.agents()[1].is_active() {
            absent += 1;
            state.step(&[Action::Still, Action::Up]).unwrap();
        }
        assert_eq!(absent, 25);
        assert_eq!(state.agents()[1].position, Pos::new(1, 9));
    }

    #[test]
    fn beam_stops_at_wall_and_vision_edge() {
        let mut state = GridState::reset(open_map(), 1, 1).unwrap();
        state.place_agent(0, Pos::new(3, 2), Orientation::West).unwrap();
        state.step(&[Action::Shoot]).unwrap();
        assert_eq!(state.beams(), &[Pos::new(3, 1)]);
        state.place_agent(0, Pos::new(3, 1), Orientation::East).unwrap();
        state.step(&[Action::Shoot]).unwrap();
        assert_eq!(state.beams().len(), 4);
    }

    #[test]
    fn idle_agents_on_full_board_change_nothing() {
        let map = MapSpec::default_map();
        let mut state = GridState::reset(map, 10, 4).unwrap();
        let before = state.apples().to_vec();
        for _ in 0..10 {
            let out = state.step(&[Action::Still; 10]).unwrap();
            assert!(out.rewards.iter().all(|&r| r == 0.0));
        }
        assert_eq!(state.apples(), before.as_slice());
    }

    #[test]
    fn returning_agent_avoids_occupied_spawn() {
        let mut state = GridState::reset(open_map(), 2, 1).unwrap();
        state.place_agent(1, Pos::new(3, 2), Orientation::North).unwrap();
        state.place_agent(0, Pos::new(2, 2), Orientation::North).unwrap();
        state.step(&[Action::Still, Action::Shoot]).unwrap();
        assert!(!state.agents()[0].is_active());
        state.place_agent(1, Pos::new(1, 1), Orientation::North).unwrap();
        for _ in 0..25 {
            state.step(&[Action::Still, Action::Still]).unwrap();
        }
        // spawn (1,1) is occupied: distance-1 cells in reading order are (1,2) then (2,1)
        assert_eq!(state.agents()[0].position, Pos::new(1, 2));
    }

    #[test]
    fn same_seed_same_trajectory() {
        let run = |seed| {
            let mut state = GridState::reset(MapSpec::default_map(), 10, seed).unwrap();
            let mut rng = Rng::seed_from_u64(99);
            for _ in 0..200 {
                let actions: Vec<Action> = (0..10).map(|_| Action::ALL[rng.random_range(0..8)]).collect();
                state.step(&actions).unwrap();
            }
            state
        };
        assert_eq!(run(5), run(5));
    }
}
