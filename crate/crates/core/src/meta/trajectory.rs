use rand::Rng;

use crate::autodiff::{Array, Tensor};
use crate::envs::{Action, EnvFamily, Task};
use crate::layers::{policy_forward, Actions, PolicyParams, PolicySpec};

use super::MetaError;

/// One episode.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// Observation at which each action was taken.
    pub observations: Vec<Vec<f64>>,
    pub actions: Vec<Action>,
    pub rewards: Vec<f64>,
    /// Log-probability of each action under the sampling parameters.
    pub log_probs: Vec<f64>,
    pub dones: Vec<bool>,
    pub task_id: usize,
}

impl Trajectory {
    fn new(task_id: usize) -> Self {
        Self {
            observations: Vec::new(),
            actions: Vec::new(),
            rewards: Vec::new(),
            log_probs: Vec::new(),
            dones: Vec::new(),
            task_id,
        }
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    /// Undiscounted sum of rewards.
    pub fn total_reward(&self) -> f64 {
        self.rewards.iter().sum()
    }
}

pub fn mean_return(trajs: &[Trajectory]) -> f64 {
    if trajs.is_empty() {
        return 0.0;
    }
    trajs.iter().map(Trajectory::total_reward).sum::<f64>() / trajs.len() as f64
}

fn rows_to_array(rows: &[&[f64]], cols: usize) -> Array {
    let mut data = Vec::with_capacity(rows.len() * cols);
    for r in rows {
        data.extend_from_slice(r);
    }
    Array::new(vec![rows.len(), cols], data).expect("rows have equal width")
}

/// Runs `n` episodes of `task` in lockstep with the stochastic policy (or
/// its mode when `greedy`). Actions are drawn from `rng` in episode order at
/// every step, so the result depends only on the inputs.
#[allow(clippy::too_many_arguments)]
pub fn collect_trajectories(
    family: &EnvFamily,
    spec: &PolicySpec,
    params: &PolicyParams,
    task: &Task,
    task_id: usize,
    n: usize,
    rng: &mut impl Rng,
    greedy: bool,
) -> Result<Vec<Trajectory>, MetaError> {
    let mut envs = (0..n)
        .map(|_| family.make(task))
        .collect::<Result<Vec<_>, _>>()?;
    let mut obs: Vec<Vec<f64>> = envs.iter_mut().map(|e| e.reset()).collect();
    let mut trajs: Vec<Trajectory> = (0..n).map(|_| Trajectory::new(task_id)).collect();
    let mut active: Vec<usize> = (0..n).collect();
    let net = params.theta.constants();
    let phi = Tensor::constant(params.phi.clone());
    let obs_dim = family.obs_dim();

    for _ in 0..family.horizon() {
        if active.is_empty() {
            break;
        }
        let rows: Vec<&[f64]> = active.iter().map(|&i| obs[i].as_slice()).collect();
        let batch = Tensor::constant(rows_to_array(&rows, obs_dim));
        let out = policy_forward(&batch, &phi, &net, spec)?;
        let actions = out.dist.sample(rng, greedy);
        let log_probs = out.dist.log_prob(&actions)?;
        let mut still = Vec::with_capacity(active.len());
        for (row, &i) in active.iter().enumerate() {
            let action = match &actions {
                Actions::Discrete(a) => Action::Discrete(a[row]),
                Actions::Continuous(a) => {
                    let d = a.shape()[1];
                    Action::Continuous(a.data()[row * d..(row + 1) * d].to_vec())
                }
            };
            let step = envs[i].step(&action)?;
            let t = &mut trajs[i];
            t.observations.push(std::mem::replace(&mut obs[i], step.obs));
            t.actions.push(action);
            t.rewards.push(step.reward);
            t.log_probs.push(log_probs.value().data()[row]);
            t.dones.push(step.done);
            if !step.done {
                still.push(i);
            }
        }
        active = still;
    }
    Ok(trajs)
}

/// All steps of a set of trajectories stacked for one loss evaluation.
#[derive(Debug, Clone)]
pub struct StepBatch {
    /// `steps × obs_dim`.
    pub obs: Array,
    pub actions: Actions,
    /// One weight (advantage) per step.
    pub weights: Vec<f64>,
}

impl StepBatch {
    pub fn new(trajs: &[Trajectory], weights: Vec<f64>) -> Result<Self, MetaError> {
        let steps: usize = trajs.iter().map(Trajectory::len).sum();
        if weights.len() != steps {
            return Err(MetaError::Contract(format!(
                "{} weights for {steps} steps",
                weights.len()
            )));
        }
        let obs_dim = trajs
            .iter()
            .find_map(|t| t.observations.first().map(Vec::len))
            .unwrap_or(0);
        let rows: Vec<&[f64]> = trajs
            .iter()
            .flat_map(|t| t.observations.iter().map(Vec::as_slice))
            .collect();
        let obs = rows_to_array(&rows, obs_dim);
        let actions: Vec<&Action> = trajs.iter().flat_map(|t| &t.actions).collect();
        let actions = match actions.first() {
            None | Some(Action::Discrete(_)) => Actions::Discrete(
                actions
                    .iter()
                    .map(|a| match a {
                        Action::Discrete(k) => Ok(*k),
                        _ => Err(MetaError::Contract("mixed action types".into())),
                    })
                    .collect::<Result<_, _>>()?,
            ),
            Some(Action::Continuous(first)) => {
                let d = first.len();
                let mut data = Vec::with_capacity(actions.len() * d);
                for a in &actions {
                    match a {
                        Action::Continuous(v) if v.len() == d => data.extend_from_slice(v),
                        _ => return Err(MetaError::Contract("mixed action types".into())),
                    }
                }
                Actions::Continuous(Array::new(vec![actions.len(), d], data)?)
            }
        };
        Ok(Self {
            obs,
            actions,
            weights,
        })
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}
