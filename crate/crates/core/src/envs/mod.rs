//! Task distributions and environments.

pub mod ctgraph;
pub mod nav2d;

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::layers::Head;

pub use ctgraph::{CtGraph, CtGraphConfig, CtGraphEnv, CtGraphTask};
pub use nav2d::{Nav2dConfig, Nav2dEnv, Nav2dState, Nav2dTask};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EnvError {
    #[error("step called on a finished episode")]
    EpisodeDone,
    #[error("invalid action {0}")]
    BadAction(String),
    #[error("invalid environment configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Action {
    Discrete(usize),
    Continuous(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub obs: Vec<f64>,
    pub reward: f64,
    pub done: bool,
    pub info: BTreeMap<String, String>,
}

impl StepResult {
    pub fn new(obs: Vec<f64>, reward: f64, done: bool) -> Self {
        Self {
            obs,
            reward,
            done,
            info: BTreeMap::new(),
        }
    }
}

/// Which environment family to run, with its parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "lowercase", deny_unknown_fields)]
pub enum EnvSpec {
    Nav2d(Nav2dConfig),
    CtGraph(CtGraphConfig),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Task {
    Nav2d(Nav2dTask),
    CtGraph(CtGraphTask),
}

/// A built environment family that can instantiate per-task environments.
#[derive(Debug, Clone)]
pub enum EnvFamily {
    Nav2d(Nav2dConfig),
    CtGraph(Arc<CtGraph>),
}

impl EnvSpec {
    pub fn build(&self) -> Result<EnvFamily, EnvError> {
        Ok(match *self {
            EnvSpec::Nav2d(c) => {
                if c.horizon == 0 || !(c.goal_eps >= 0.0) {
                    return Err(EnvError::Config(
                        "nav2d needs a positive horizon and non-negative goal_eps".into(),
                    ));
                }
                EnvFamily::Nav2d(c)
            }
            EnvSpec::CtGraph(c) => EnvFamily::CtGraph(Arc::new(CtGraph::build(c)?)),
        })
    }
}

impl EnvFamily {
    pub fn obs_dim(&self) -> usize {
        match self {
            EnvFamily::Nav2d(_) => 2,
            EnvFamily::CtGraph(g) => g.n_nodes(),
        }
    }

    pub fn head(&self) -> Head {
        match self {
            EnvFamily::Nav2d(_) => Head::Gaussian { action_dim: 2 },
            EnvFamily::CtGraph(g) => Head::Categorical {
                n_actions: g.config.n_actions(),
            },
        }
    }

    /// Upper bound on episode length.
    pub fn horizon(&self) -> usize {
        match self {
            EnvFamily::Nav2d(c) => c.horizon,
            EnvFamily::CtGraph(g) => g.config.horizon(),
        }
    }

    pub fn sample_tasks(&self, n: usize, rng: &mut impl Rng) -> Vec<Task> {
        match self {
            EnvFamily::Nav2d(_) => nav2d::sample_tasks(n, rng)
                .into_iter()
                .map(Task::Nav2d)
                .collect(),
            EnvFamily::CtGraph(g) => ctgraph::sample_tasks(&g.config, n, rng)
                .into_iter()
                .map(Task::CtGraph)
                .collect(),
        }
    }

    /// Tasks for representation analysis: every leaf of a CT-graph in leaf
    /// order, or `n` sampled nav2d goals.
    pub fn analysis_tasks(&self, n: usize, rng: &mut impl Rng) -> Vec<Task> {
        match self {
            EnvFamily::CtGraph(g) => (0..g.config.n_leaves())
                .map(|goal_leaf| Task::CtGraph(CtGraphTask { goal_leaf }))
                .collect(),
            EnvFamily::Nav2d(_) => self.sample_tasks(n, rng),
        }
    }

    pub fn make(&self, task: &Task) -> Result<Env, EnvError> {
        match (self, task) {
            (EnvFamily::Nav2d(c), Task::Nav2d(t)) => Ok(Env::Nav2d(Nav2dEnv::new(*c, *t))),
            (EnvFamily::CtGraph(g), Task::CtGraph(t)) => {
                Ok(Env::CtGraph(CtGraphEnv::new(g.clone(), *t)?))
            }
            _ => Err(EnvError::Config("task does not belong to this environment".into())),
        }
    }

    /// Probe observations shared by all tasks: every CT-graph node, or a
    /// fixed `side × side` grid over the nav2d goal box.
    pub fn probe_observations(&self, side: usize) -> Vec<Vec<f64>> {
        match self {
            EnvFamily::CtGraph(g) => (0..g.n_nodes()).map(|i| g.one_hot(i)).collect(),
            EnvFamily::Nav2d(_) => {
                let r = nav2d::GOAL_RANGE;
                let coord = |i: usize| {
                    if side <= 1 {
                        0.0
                    } else {
                        -r + 2.0 * r * i as f64 / (side - 1) as f64
                    }
                };
                (0..side * side)
                    .map(|k| vec![coord(k / side), coord(k % side)])
                    .collect()
            }
        }
    }
}

#[derive(Debug, Clone)]
pub enum Env {
    Nav2d(Nav2dEnv),
    CtGraph(CtGraphEnv),
}

impl Env {
    pub fn reset(&mut self) -> Vec<f64> {
        match self {
            Env::Nav2d(e) => e.reset(),
            Env::CtGraph(e) => e.reset(),
        }
    }

    pub fn step(&mut self, action: &Action) -> Result<StepResult, EnvError> {
        match self {
            Env::Nav2d(e) => e.step(action),
            Env::CtGraph(e) => e.step(action),
        }
    }
}
