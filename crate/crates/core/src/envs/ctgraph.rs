//! Configurable tree graph: a sparse-reward navigation task over a tree of
//! alternating wait and decision states.
//!
//! Node ids, in construction order:
//!
//! * `0` start (behaves as a wait state),
//! * `1` crash,
//! * `2` the root decision state,
//! * then for each level `l = 1..depth`: the `b^l` wait states of that
//!   level followed by its `b^l` decision states,
//! * finally the `b^depth` end states in leaf-index order.
//!
//! Action `0` is *wait* (forward); actions `1..=b` choose a branch. From the
//! start, an episode that never crashes takes exactly `2·depth` actions:
//! `wait, choose, wait, choose, …`. Leaf indices read the branch choices as
//! base-`b` digits, most significant first. Choosing the wrong kind of
//! action crashes the episode (reward `-0.01`, terminal); reaching the goal
//! leaf pays `1.0`, any other leaf `0.0`.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Action, EnvError, StepResult};

pub const CRASH_REWARD: f64 = -0.01;
pub const GOAL_REWARD: f64 = 1.0;
pub const START: usize = 0;
pub const CRASH: usize = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CtGraphConfig {
    #[serde(default = "default_branch")]
    pub branch: usize,
    #[serde(default = "default_depth")]
    pub depth: usize,
}

fn default_branch() -> usize {
    2
}

fn default_depth() -> usize {
    2
}

impl Default for CtGraphConfig {
    fn default() -> Self {
        Self {
            branch: default_branch(),
            depth: default_depth(),
        }
    }
}

impl CtGraphConfig {
    pub fn validate(&self) -> Result<(), EnvError> {
        if self.branch < 2 || self.depth < 1 {
            return Err(EnvError::Config(format!(
                "CT-graph needs branch >= 2 and depth >= 1, got b={} d={}",
                self.branch, self.depth
            )));
        }
        Ok(())
    }

    pub fn n_leaves(&self) -> usize {
        self.branch.pow(self.depth as u32)
    }

    pub fn n_actions(&self) -> usize {
        self.branch + 1
    }

    /// Longest possible episode.
    pub fn horizon(&self) -> usize {
        2 * self.depth
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeKind {
    Start,
    Crash,
    Wait { level: usize },
    Decision { level: usize },
    End { leaf: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub kind: NodeKind,
    /// For wait-like nodes: the one successor. For decisions: `b` children.
    pub next: Vec<usize>,
}

/// The built node table of one configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct CtGraph {
    pub config: CtGraphConfig,
    pub nodes: Vec<Node>,
}

impl CtGraph {
    pub fn build(config: CtGraphConfig) -> Result<Self, EnvError> {
        config.validate()?;
        let b = config.branch;
        let d = config.depth;
        let mut nodes = vec![
            Node {
                kind: NodeKind::Start,
                next: vec![2],
            },
            Node {
                kind: NodeKind::Crash,
                next: vec![],
            },
        ];
        // Decision ids of the previous level, in branch order.
        let mut decisions = vec![nodes.len()];
        nodes.push(Node {
            kind: NodeKind::Decision { level: 0 },
            next: vec![],
        });
        for level in 1..d {
            let count = b.pow(level as u32);
            let wait_base = nodes.len();
            let dec_base = wait_base + count;
            for i in 0..count {
                nodes.push(Node {
                    kind: NodeKind::Wait { level },
                    next: vec![dec_base + i],
                });
            }
            for _ in 0..count {
                nodes.push(Node {
                    kind: NodeKind::Decision { level },
                    next: vec![],
                });
            }
            for (p, &parent) in decisions.iter().enumerate() {
                nodes[parent].next = (0..b).map(|k| wait_base + p * b + k).collect();
            }
            decisions = (dec_base..dec_base + count).collect();
        }
        let leaf_base = nodes.len();
        for leaf in 0..b.pow(d as u32) {
            nodes.push(Node {
                kind: NodeKind::End { leaf },
                next: vec![],
            });
        }
        for (p, &parent) in decisions.iter().enumerate() {
            nodes[parent].next = (0..b).map(|k| leaf_base + p * b + k).collect();
        }
        Ok(Self { config, nodes })
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn leaf_node(&self, leaf: usize) -> usize {
        self.nodes.len() - self.config.n_leaves() + leaf
    }

    pub fn one_hot(&self, node: usize) -> Vec<f64> {
        let mut v = vec![0.0; self.nodes.len()];
        v[node] = 1.0;
        v
    }

    /// Next node for `action` taken at `node`, or `None` at terminal nodes.
    pub fn transition(&self, node: usize, action: usize) -> Option<usize> {
        let n = &self.nodes[node];
        match n.kind {
            NodeKind::Crash | NodeKind::End { .. } => None,
            NodeKind::Start | NodeKind::Wait { .. } => {
                Some(if action == 0 { n.next[0] } else { CRASH })
            }
            NodeKind::Decision { .. } => Some(if action == 0 {
                CRASH
            } else {
                n.next[action - 1]
            }),
        }
    }

    /// The crash-free action sequence that ends at `leaf`.
    pub fn path_to(&self, leaf: usize) -> Vec<usize> {
        let b = self.config.branch;
        let d = self.config.depth;
        let mut digits = vec![0; d];
        let mut rest = leaf;
        for slot in digits.iter_mut().rev() {
            *slot = rest % b;
            rest /= b;
        }
        digits.into_iter().flat_map(|k| [0, k + 1]).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CtGraphTask {
    pub goal_leaf: usize,
}

pub fn sample_tasks(config: &CtGraphConfig, n: usize, rng: &mut impl Rng) -> Vec<CtGraphTask> {
    let leaves = config.n_leaves();
    (0..n)
        .map(|_| CtGraphTask {
            goal_leaf: rng.random_range(0..leaves),
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct CtGraphEnv {
    graph: Arc<CtGraph>,
    task: CtGraphTask,
    node: usize,
}

impl CtGraphEnv {
    pub fn new(graph: Arc<CtGraph>, task: CtGraphTask) -> Result<Self, EnvError> {
        if task.goal_leaf >= graph.config.n_leaves() {
            return Err(EnvError::Config(format!(
                "goal leaf {} out of range for {} leaves",
                task.goal_leaf,
                graph.config.n_leaves()
            )));
        }
        Ok(Self {
            graph,
            task,
            node: START,
        })
    }

    pub fn node(&self) -> usize {
        self.node
    }

    pub fn graph(&self) -> &CtGraph {
        &self.graph
    }

    pub fn reset(&mut self) -> Vec<f64> {
        self.node = START;
        self.graph.one_hot(START)
    }

    pub fn step(&mut self, action: &Action) -> Result<StepResult, EnvError> {
        let a = match *action {
            Action::Discrete(a) if a < self.graph.config.n_actions() => a,
            ref other => return Err(EnvError::BadAction(format!("{other:?}"))),
        };
        let next = self
            .graph
            .transition(self.node, a)
            .ok_or(EnvError::EpisodeDone)?;
        self.node = next;
        let (reward, done, what) = match self.graph.nodes[next].kind {
            NodeKind::Crash => (CRASH_REWARD, true, "crash"),
            NodeKind::End { leaf } if leaf == self.task.goal_leaf => (GOAL_REWARD, true, "goal"),
            NodeKind::End { .. } => (0.0, true, "end"),
            _ => (0.0, false, "step"),
        };
        let mut result = StepResult::new(self.graph.one_hot(next), reward, done);
        result.info.insert("node".into(), next.to_string());
        result.info.insert("event".into(), what.into());
        Ok(result)
    }
}
