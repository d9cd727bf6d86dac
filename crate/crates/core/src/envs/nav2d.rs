//! Point-mass navigation to a goal in the plane.
//!
//! The agent starts at the origin and issues velocity commands, clipped to
//! `[-0.1, 0.1]` per coordinate. Reward is the negative squared distance to
//! the goal after the move; goals are uniform on `[-0.5, 0.5]²`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Action, EnvError, StepResult};

pub const MAX_SPEED: f64 = 0.1;
pub const GOAL_RANGE: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Nav2dConfig {
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    #[serde(default = "default_goal_eps")]
    pub goal_eps: f64,
}

fn default_horizon() -> usize {
    100
}

fn default_goal_eps() -> f64 {
    0.01
}

impl Default for Nav2dConfig {
    fn default() -> Self {
        Self {
            horizon: default_horizon(),
            goal_eps: default_goal_eps(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Nav2dTask {
    pub goal: [f64; 2],
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Nav2dState {
    pub pos: [f64; 2],
    pub t: usize,
    pub horizon: usize,
    pub done: bool,
}

pub fn sample_tasks(n: usize, rng: &mut impl Rng) -> Vec<Nav2dTask> {
    (0..n)
        .map(|_| Nav2dTask {
            goal: [
                rng.random_range(-GOAL_RANGE..=GOAL_RANGE),
                rng.random_range(-GOAL_RANGE..=GOAL_RANGE),
            ],
        })
        .collect()
}

pub fn reward(pos: [f64; 2], goal: [f64; 2]) -> f64 {
    let dx = pos[0] - goal[0];
    let dy = pos[1] - goal[1];
    -(dx * dx + dy * dy)
}

#[derive(Debug, Clone)]
pub struct Nav2dEnv {
    config: Nav2dConfig,
    task: Nav2dTask,
    state: Nav2dState,
}

impl Nav2dEnv {
    pub fn new(config: Nav2dConfig, task: Nav2dTask) -> Self {
        let mut env = Self {
            config,
            task,
            state: Nav2dState {
                pos: [0.0; 2],
                t: 0,
                horizon: config.horizon,
                done: false,
            },
        };
        env.reset();
        env
    }

    pub fn state(&self) -> &Nav2dState {
        &self.state
    }

    pub fn task(&self) -> &Nav2dTask {
        &self.task
    }

    pub fn reset(&mut self) -> Vec<f64> {
        self.state = Nav2dState {
            pos: [0.0; 2],
            t: 0,
            horizon: self.config.horizon,
            done: self.config.horizon == 0,
        };
        self.state.pos.to_vec()
    }

    pub fn step(&mut self, action: &Action) -> Result<StepResult, EnvError> {
        if self.state.done {
            return Err(EnvError::EpisodeDone);
        }
        let a = match action {
            Action::Continuous(v) if v.len() == 2 => [v[0], v[1]],
            other => return Err(EnvError::BadAction(format!("{other:?}"))),
        };
        if !a.iter().all(|v| v.is_finite()) {
            return Err(EnvError::BadAction(format!("{a:?}")));
        }
        let s = &mut self.state;
        for (p, v) in s.pos.iter_mut().zip(a) {
            *p += v.clamp(-MAX_SPEED, MAX_SPEED);
        }
        s.t += 1;
        let r = reward(s.pos, self.task.goal);
        let reached = (-r).sqrt() < self.config.goal_eps;
        s.done = s.t == s.horizon || reached;
        let mut result = StepResult::new(s.pos.to_vec(), r, s.done);
        if reached {
            result.info.insert("reached_goal".into(), "true".into());
        }
        Ok(result)
    }
}
