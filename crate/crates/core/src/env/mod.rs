//! The commons harvesting game: a gridworld of regrowing apples shared by
//! agents that can temporarily remove each other with a beam.

pub mod action;
pub mod events;
pub mod game;
pub mod map;
pub mod observation;
pub mod render;

pub use action::{Action, Orientation, NUM_ACTIONS};
pub use events::{Event, EventKind, EventLog};
pub use game::{respawn_probability, AgentState, GridState, StepOutcome, TIMEOUT_STEPS};
pub use map::{Cell, MapSpec, Pos};
pub use observation::{render_observation, Channel, Observation, NUM_CHANNELS, OBS_LEN, OBS_PIXELS, OBS_SIDE};
