use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const NUM_ACTIONS: usize = 8;

/// Agent actions. Moves are egocentric: `Up` steps toward the facing
/// direction, `Left`/`Right` strafe.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum Action {
    Still = 0,
    Up = 1,
    Down = 2,
    Left = 3,
    Right = 4,
    TurnLeft = 5,
    TurnRight = 6,
    Shoot = 7,
}

impl Action {
    pub const ALL: [Action; NUM_ACTIONS] = [
        Action::Still,
        Action::Up,
        Action::Down,
        Action::Left,
        Action::Right,
        Action::TurnLeft,
        Action::TurnRight,
        Action::Shoot,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Result<Action> {
        Action::ALL
            .get(index)
            .copied()
            .ok_or_else(|| Error::InvalidArgument(format!("action index {index} out of range")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Orientation {
    North,
    East,
    South,
    West,
}

impl Orientation {
    /// Unit step (row, col) in the facing direction.
    pub fn forward(self) -> (i32, i32) {
        match self {
            Orientation::North => (-1, 0),
            Orientation::East => (0, 1),
            Orientation::South => (1, 0),
            Orientation::West => (0, -1),
        }
    }

    /// Unit step (row, col) to the agent's right.
    pub fn right(self) -> (i32, i32) {
        match self {
            Orientation::North => (0, 1),
            Orientation::East => (1, 0),
            Orientation::South => (0, -1),
            Orientation::West => (-1, 0),
        }
    }

    pub fn turned_left(self) -> Self {
        match self {
            Orientation::North => Orientation::West,
            Orientation::West => Orientation::South,
            Orientation::South => Orientation::East,
            Orientation::East => Orientation::North,
        }
    }

    pub fn turned_right(self) -> Self {
        match self {
            Orientation::North => Orientation::East,
            Orientation::East => Orientation::South,
            Orientation::South => Orientation::West,
            Orientation::West => Orientation::North,
        }
    }
}
