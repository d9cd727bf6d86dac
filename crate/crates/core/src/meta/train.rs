use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{grad, Array, GradRecord, Tensor};
use crate::envs::{EnvFamily, Task};
use crate::layers::{Network, PolicyParams, PolicySpec};
use crate::rng::{SeedTree, StreamRng};

use super::{
    collect_trajectories, compute_gae, fit_baseline, inner_adapt, inner_loss, mean_return,
    outer_update, Adam, MetaConfig, MetaError, StepBatch, Trajectory,
};

/// Per-task record of one meta-training iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskLog {
    pub slot: usize,
    pub task: String,
    pub pre_return: f64,
    pub post_return: f64,
    pub inner_loss: f64,
    pub outer_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationLog {
    pub iteration: usize,
    /// Mean episode return before adaptation (φ = 0).
    pub pre_return: f64,
    /// Mean episode return after the inner step.
    pub post_return: f64,
    pub inner_loss: f64,
    pub outer_loss: f64,
    pub tasks: Vec<TaskLog>,
}

#[derive(Debug, Clone)]
pub struct TaskOutcome {
    /// Gradient of this task's post-adaptation loss w.r.t. θ, in
    /// [`Network::named`] order.
    pub grads: Vec<Array>,
    pub log: TaskLog,
    pub adapted_phi: Array,
    /// `∇_θ` of `−mean log π` over the pre-adaptation episodes at φ = 0,
    /// present when the exploration credit is enabled.
    pub score_grads: Option<Vec<Array>>,
}

pub struct TrainOutcome {
    pub final_theta: Network<Array>,
    pub best_theta: Network<Array>,
    pub best_iteration: usize,
    pub best_post_return: f64,
    pub log: Vec<IterationLog>,
}

pub(crate) fn describe(task: &Task) -> String {
    match task {
        Task::Nav2d(t) => format!("goal=({:.6},{:.6})", t.goal[0], t.goal[1]),
        Task::CtGraph(t) => format!("goal_leaf={}", t.goal_leaf),
    }
}

fn advantage_batch(
    trajs: &[Trajectory],
    family: &EnvFamily,
    config: &MetaConfig,
) -> Result<StepBatch, MetaError> {
    let baseline = fit_baseline(trajs, config.gamma, family.horizon());
    let adv = compute_gae(trajs, &baseline, config.gamma, config.gae_lambda);
    StepBatch::new(trajs, adv.normalized())
}

/// Collects pre-adaptation episodes, takes the inner step(s) on φ, collects
/// post-adaptation episodes and returns ∇_θ of the post-adaptation loss,
/// differentiated through the inner step unless `first_order` is set.
pub fn task_meta_gradient(
    family: &EnvFamily,
    spec: &PolicySpec,
    theta: &Network<Array>,
    config: &MetaConfig,
    task: &Task,
    slot: usize,
    rng: &mut StreamRng,
) -> Result<TaskOutcome, MetaError> {
    let base = PolicyParams {
        theta: theta.clone(),
        phi: Array::zeros(&[spec.context_dim]),
    };
    let train = collect_trajectories(family, spec, &base, task, slot, config.n_traj_train, rng, false)?;
    let train_batch = advantage_batch(&train, family, config)?;

    let record = GradRecord::new();
    let theta_vars = theta.vars(&record);
    let phi0 = record.var(base.phi.clone());
    let differentiable = !config.first_order;
    let mut inner_value = 0.0;
    let phi = inner_adapt(
        &phi0,
        config.inner_lr,
        config.n_inner_steps_train,
        differentiable,
        |phi| {
            let l = inner_loss(spec, &theta_vars, phi, &train_batch)?;
            inner_value = l.item();
            Ok(l)
        },
    )?;

    let score_grads = if config.exploration_weight > 0.0 {
        let ones = StepBatch::new(&train, vec![1.0; train_batch.len()])?;
        let l = inner_loss(spec, &theta_vars, &phi0, &ones)?;
        let g = grad(&l, &theta_vars.tensors(), false)?;
        Some(g.into_iter().map(|g| g.value().clone()).collect())
    } else {
        None
    };
    let adapted = base.with_phi(phi.value().clone());
    let test = collect_trajectories(family, spec, &adapted, task, slot, config.n_traj_train, rng, false)?;
    let test_batch = advantage_batch(&test, family, config)?;
    // With first-order gradients φ comes back detached and is used as a constant.
    let outer = inner_loss(spec, &theta_vars, &phi, &test_batch)?;
    let params: Vec<&Tensor> = theta_vars.tensors();
    let grads: Vec<Array> = grad(&outer, &params, false)?
        .into_iter()
        .map(|g| g.value().clone())
        .collect();
    if !grads.iter().all(Array::all_finite) {
        return Err(MetaError::NonFinite(format!("meta-gradient of task slot {slot}")));
    }
    Ok(TaskOutcome {
        grads,
        log: TaskLog {
            slot,
            task: describe(task),
            pre_return: mean_return(&train),
            post_return: mean_return(&test),
            inner_loss: inner_value,
            outer_loss: outer.item(),
        },
        adapted_phi: adapted.phi,
        score_grads,
    })
}

fn pool(workers: usize) -> Result<rayon::ThreadPool, MetaError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| MetaError::Pool(e.to_string()))
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Adds `w · z_i · ∇_θ(−mean log π(pre-adaptation episodes of task i))` to
/// each task's meta-gradient, with `z_i` the task's post-adaptation return
/// standardised over the batch. Pre-adaptation behaviour that led to good
/// adapted returns becomes more likely. No-op when `weight` is zero.
pub fn add_exploration_credit(
    grads: &mut [Vec<Array>],
    outcomes: &[TaskOutcome],
    weight: f64,
) -> Result<(), MetaError> {
    if weight == 0.0 || outcomes.is_empty() {
        return Ok(());
    }
    let r: Vec<f64> = outcomes.iter().map(|o| o.log.post_return).collect();
    let m = mean(r.iter().copied());
    let sd = (r.iter().map(|x| (x - m).powi(2)).sum::<f64>() / r.len() as f64).sqrt();
    for ((g, o), ri) in grads.iter_mut().zip(outcomes).zip(&r) {
        let score = o
            .score_grads
            .as_ref()
            .ok_or_else(|| MetaError::Contract("task outcome lacks score gradients".into()))?;
        let a = weight * (ri - m) / (sd + 1e-8);
        for (gk, sk) in g.iter_mut().zip(score) {
            for (x, y) in gk.data_mut().iter_mut().zip(sk.data()) {
                *x += a * y;
            }
        }
    }
    Ok(())
}

/// Runs `config.n_iterations` outer iterations from a freshly initialised θ.
///
/// `on_iteration` sees every iteration's log and the updated θ; returning an
/// error stops training. Randomness comes from the `init`, `tasks` and
/// `rollout` streams of `seeds`.
pub fn meta_train(
    family: &EnvFamily,
    spec: &PolicySpec,
    config: &MetaConfig,
    seeds: &SeedTree,
    mut on_iteration: impl FnMut(&IterationLog, &Network<Array>) -> Result<(), MetaError>,
) -> Result<TrainOutcome, MetaError> {
    config.validate()?;
    spec.validate()?;
    let mut theta = Network::init(spec, &mut seeds.rng("init", &[]))?;
    let mut optimizer = Adam::new(config.outer_lr);
    let pool = pool(config.workers)?;
    let mut log = Vec::with_capacity(config.n_iterations);
    let mut best = (f64::NEG_INFINITY, 0, theta.clone());

    for iteration in 0..config.n_iterations {
        let tasks = family.sample_tasks(
            config.meta_batch_size,
            &mut seeds.rng("tasks", &[iteration as u64]),
        );
        let outcomes: Vec<TaskOutcome> = pool.install(|| {
            tasks
                .par_iter()
                .enumerate()
                .map(|(slot, task)| {
                    let mut rng = seeds.rng("rollout", &[iteration as u64, slot as u64]);
                    task_meta_gradient(family, spec, &theta, config, task, slot, &mut rng)
                })
                .collect::<Result<Vec<_>, _>>()
        })?;
        let mut grads: Vec<Vec<Array>> = outcomes.iter().map(|o| o.grads.clone()).collect();
        add_exploration_credit(&mut grads, &outcomes, config.exploration_weight)?;
        // Post-adaptation returns judge the θ that produced them.
        let entry = IterationLog {
            iteration,
            pre_return: mean(outcomes.iter().map(|o| o.log.pre_return)),
            post_return: mean(outcomes.iter().map(|o| o.log.post_return)),
            inner_loss: mean(outcomes.iter().map(|o| o.log.inner_loss)),
            outer_loss: mean(outcomes.iter().map(|o| o.log.outer_loss)),
            tasks: outcomes.into_iter().map(|o| o.log).collect(),
        };
        if entry.post_return > best.0 {
            best = (entry.post_return, iteration, theta.clone());
        }
        theta = outer_update(&theta, &grads, &mut optimizer)?;
        on_iteration(&entry, &theta)?;
        log.push(entry);
    }
    Ok(TrainOutcome {
        final_theta: theta,
        best_theta: best.2,
        best_iteration: best.1,
        best_post_return: best.0,
        log,
    })
}

/// Adaptation curves on fresh tasks.
#[derive(Debug, Clone, PartialEq)]
pub struct MetaTestResult {
    /// Mean return after `0..=n_steps` inner steps, averaged over tasks.
    pub curve: Vec<f64>,
    /// `per_task[i][k]`: mean return of task `i` after `k` steps.
    pub per_task: Vec<Vec<f64>>,
    /// `contexts[i][k]`: φ of task `i` after `k` steps (`k = 0` is zero).
    pub contexts: Vec<Vec<Array>>,
    pub tasks: Vec<Task>,
}

/// Evaluates adaptation: for each of `n_tasks` fresh tasks, collect
/// episodes at φ = 0, then alternately take one inner step on the latest
/// episodes and collect again, `n_steps` times.
pub fn meta_test(
    family: &EnvFamily,
    spec: &PolicySpec,
    theta: &Network<Array>,
    config: &MetaConfig,
    n_tasks: usize,
    n_steps: usize,
    seeds: &SeedTree,
) -> Result<MetaTestResult, MetaError> {
    let tasks = family.sample_tasks(n_tasks, &mut seeds.rng("test-tasks", &[]));
    meta_test_tasks(family, spec, theta, config, tasks, n_steps, seeds)
}

/// [`meta_test`] on a given task list.
pub fn meta_test_tasks(
    family: &EnvFamily,
    spec: &PolicySpec,
    theta: &Network<Array>,
    config: &MetaConfig,
    tasks: Vec<Task>,
    n_steps: usize,
    seeds: &SeedTree,
) -> Result<MetaTestResult, MetaError> {
    config.validate()?;
    let pool = pool(config.workers)?;
    let results: Vec<(Vec<f64>, Vec<Array>)> = pool.install(|| {
        tasks
            .par_iter()
            .enumerate()
            .map(|(i, task)| {
                let mut rng = seeds.rng("test-rollout", &[i as u64]);
                adaptation_curve(family, spec, theta, config, task, i, n_steps, &mut rng)
            })
            .collect::<Result<Vec<_>, _>>()
    })?;
    let curve = (0..=n_steps)
        .map(|k| mean(results.iter().map(|(r, _)| r[k])))
        .collect();
    let (per_task, contexts) = results.into_iter().unzip();
    Ok(MetaTestResult {
        curve,
        per_task,
        contexts,
        tasks,
    })
}

#[allow(clippy::too_many_arguments)]
fn adaptation_curve(
    family: &EnvFamily,
    spec: &PolicySpec,
    theta: &Network<Array>,
    config: &MetaConfig,
    task: &Task,
    task_id: usize,
    n_steps: usize,
    rng: &mut StreamRng,
) -> Result<(Vec<f64>, Vec<Array>), MetaError> {
    let constants = theta.constants();
    let mut params = PolicyParams {
        theta: theta.clone(),
        phi: Array::zeros(&[spec.context_dim]),
    };
    let mut returns = Vec::with_capacity(n_steps + 1);
    let mut contexts = vec![params.phi.clone()];
    for step in 0..=n_steps {
        let trajs =
            collect_trajectories(family, spec, &params, task, task_id, config.n_traj_test, rng, false)?;
        returns.push(mean_return(&trajs));
        if step == n_steps {
            break;
        }
        let batch = advantage_batch(&trajs, family, config)?;
        let phi0 = Tensor::constant(params.phi.clone());
        let phi = inner_adapt(&phi0, config.inner_lr, 1, false, |phi| {
            inner_loss(spec, &constants, phi, &batch)
        })?;
        params.phi = phi.value().clone();
        contexts.push(params.phi.clone());
    }
    Ok((returns, contexts))
}
