//! Grid-world exploration environment with occlusion-aware 3x5 sensing.

mod episode;
mod sensor;
mod world;

pub use episode::{Action, EpisodeState, Observation, RewardScheme, StepResult, MAX_EPISODE_STEPS};
pub use sensor::{
    footprint, line_of_sight, segment_touches_cell, sense, visible_cells, window_cell, AgentPose, Heading,
    VisibleCell, READING_FREE, READING_UNKNOWN, READING_WALL, SENSE_DEPTH, SENSE_WIDTH, SENSOR_LEN,
};
pub use world::{World, DEFAULT_DENSITY, MIN_OBSERVABLE_FRACTION};
