use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::sensor::{sense, visible_cells, AgentPose, SENSOR_LEN};
use super::world::World;
use crate::error::{Error, Result};

/// Default episode step cap.
pub const MAX_EPISODE_STEPS: usize = 750;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Action {
    StandStill = 0,
    TurnLeft = 1,
    TurnRight = 2,
    GoStraight = 3,
}

impl Action {
    pub const ALL: [Action; 4] = [Action::StandStill, Action::TurnLeft, Action::TurnRight, Action::GoStraight];
    pub const COUNT: usize = 4;

    pub fn id(self) -> usize {
        self as usize
    }

    pub fn from_id(id: usize) -> Option<Action> {
        Action::ALL.get(id).copied()
    }

    pub fn one_hot(self) -> [f64; 4] {
        let mut v = [0.0; 4];
        v[self.id()] = 1.0;
        v
    }
}

/// Reward terms for one step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardScheme {
    pub step: f64,
    pub collision: f64,
    pub per_new_cell: f64,
    pub completion: f64,
}

impl RewardScheme {
    pub const fn grid() -> Self {
        RewardScheme {
            step: -0.04,
            collision: -0.96,
            per_new_cell: 1.0 / 15.0,
            completion: 10.0,
        }
    }

    /// Scale used for the 3-D simulator experiments.
    pub const fn gazebo() -> Self {
        RewardScheme {
            step: -0.005,
            collision: -0.05,
            per_new_cell: 0.1 / 15.0,
            completion: 1.0,
        }
    }
}

impl Default for RewardScheme {
    fn default() -> Self {
        RewardScheme::grid()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    pub sensor: [f64; SENSOR_LEN],
    pub last_action: Action,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepResult {
    pub reward: f64,
    pub observation: Observation,
    pub new_cells: usize,
    pub collided: bool,
}

/// Per-episode state. The world is shared and immutable.
#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeState {
    world: Arc<World>,
    pose: AgentPose,
    observed: Vec<bool>,
    unobserved_remaining: usize,
    steps: usize,
    done: bool,
    solved: bool,
    last_action: Action,
    max_steps: Option<usize>,
    rewards: RewardScheme,
}

impl EpisodeState {
    /// Starts at a pose drawn uniformly over free cells and headings.
    pub fn reset(world: Arc<World>, seed: u64) -> (Self, Observation) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pose = world.random_pose(&mut rng);
        EpisodeState::start_at(world, pose).expect("random pose is free")
    }

    /// Starts at a fixed pose. Cells visible from it count as observed but
    /// earn no reward.
    pub fn start_at(world: Arc<World>, pose: AgentPose) -> Result<(Self, Observation)> {
        if world.is_wall(pose.x, pose.y) {
            return Err(Error::Invalid(format!("pose {pose:?} is not a free cell")));
        }
        let mut state = EpisodeState {
            observed: vec![false; world.num_cells()],
            unobserved_remaining: world.observable_count(),
            world,
            pose,
            steps: 0,
            done: false,
            solved: false,
            last_action: Action::StandStill,
            max_steps: Some(MAX_EPISODE_STEPS),
            rewards: RewardScheme::grid(),
        };
        state.observe();
        if state.unobserved_remaining == 0 {
            state.done = true;
            state.solved = true;
        }
        let obs = state.observation();
        Ok((state, obs))
    }

    /// `None` removes the cap.
    pub fn with_max_steps(mut self, cap: Option<usize>) -> Self {
        self.max_steps = cap;
        self
    }

    pub fn with_rewards(mut self, rewards: RewardScheme) -> Self {
        self.rewards = rewards;
        self
    }

    pub fn world(&self) -> &Arc<World> {
        &self.world
    }

    pub fn pose(&self) -> AgentPose {
        self.pose
    }

    pub fn observed(&self) -> &[bool] {
        &self.observed
    }

    pub fn observed_count(&self) -> usize {
        self.observed.iter().filter(|o| **o).count()
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn done(&self) -> bool {
        self.done
    }

    pub fn solved(&self) -> bool {
        self.solved
    }

    pub fn max_steps(&self) -> Option<usize> {
        self.max_steps
    }

    pub fn observation(&self) -> Observation {
        Observation {
            sensor: sense(&self.world, self.pose),
            last_action: self.last_action,
        }
    }

    /// Marks visible cells observed; returns how many were new.
    fn observe(&mut self) -> usize {
        let mut fresh = 0;
        for c in visible_cells(&self.world, self.pose) {
            let i = self.world.index(c.x, c.y);
            if !self.observed[i] {
                self.observed[i] = true;
                fresh += 1;
                if self.world.observable()[i] {
                    self.unobserved_remaining -= 1;
                }
            }
        }
        fresh
    }

    pub fn step(&mut self, action: Action) -> Result<StepResult> {
        if self.done {
            return Err(Error::EpisodeDone);
        }
        self.steps += 1;
        let mut collided = false;
        match action {
            Action::StandStill => {}
            Action::TurnLeft => self.pose.heading = self.pose.heading.left(),
            Action::TurnRight => self.pose.heading = self.pose.heading.right(),
            Action::GoStraight => {
                let (dx, dy) = self.pose.heading.forward();
                let (nx, ny) = (self.pose.x + dx, self.pose.y + dy);
                if self.world.is_wall(nx, ny) {
                    collided = true;
                } else {
                    self.pose.x = nx;
                    self.pose.y = ny;
                }
            }
        }
        self.last_action = action;
        let new_cells = self.observe();

        let r = self.rewards;
        let mut reward = r.step + r.per_new_cell * new_cells as f64;
        if collided {
            reward += r.collision;
        }
        if self.unobserved_remaining == 0 {
            self.solved = true;
            self.done = true;
            reward += r.completion;
        } else if self.max_steps.is_some_and(|cap| self.steps >= cap) {
            self.done = true;
        }
        Ok(StepResult {
            reward,
            observation: self.observation(),
            new_cells,
            collided,
        })
    }
}
