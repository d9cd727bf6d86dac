//! Inner-loop context adaptation and the outer-loop network update.

use crate::autodiff::{grad, Array, GradRecord, Tensor};
use crate::layers::{policy_forward, Network, PolicySpec};

use super::{MetaError, StepBatch};

/// Policy-gradient surrogate `-mean_t[log π(a_t | s_t; θ, φ) · w_t]`.
///
/// Minimising it ascends the expected return when `w_t` are advantages.
pub fn inner_loss(
    spec: &PolicySpec,
    theta: &Network<Tensor>,
    phi: &Tensor,
    batch: &StepBatch,
) -> Result<Tensor, MetaError> {
    if batch.is_empty() {
        return Ok(Tensor::scalar(0.0));
    }
    let obs = Tensor::constant(batch.obs.clone());
    let out = policy_forward(&obs, phi, theta, spec)?;
    let log_probs = out.dist.log_prob(&batch.actions)?;
    let weights = Tensor::constant(Array::vector(batch.weights.clone()));
    Ok(log_probs.mul(&weights)?.mean().neg())
}

/// `n_steps` plain gradient steps `φ ← φ − α ∇_φ loss(φ)` on the context only.
///
/// `loss` is re-evaluated at each step. With `differentiable` the returned
/// context stays on the record, so anything the loss depended on (the
/// network weights in particular) can be differentiated through the update.
pub fn inner_adapt<F>(
    phi0: &Tensor,
    alpha: f64,
    n_steps: usize,
    differentiable: bool,
    mut loss: F,
) -> Result<Tensor, MetaError>
where
    F: FnMut(&Tensor) -> Result<Tensor, MetaError>,
{
    // Untracked contexts get a fresh record per step; the loss must then not
    // involve tensors tracked elsewhere.
    let track = |v: &Tensor| match phi0.record() {
        Some(r) => r.var(v.value().clone()),
        None => GradRecord::new().var(v.value().clone()),
    };
    let mut phi = if phi0.requires_grad() {
        phi0.clone()
    } else {
        track(phi0)
    };
    for step in 0..n_steps {
        let l = loss(&phi)?;
        let mut g = grad(&l, &[&phi], differentiable)?;
        let g = g.pop().expect("one gradient per parameter");
        if !g.value().all_finite() {
            return Err(MetaError::NonFinite(format!(
                "context gradient at inner step {step} (loss {})",
                l.item()
            )));
        }
        let next = phi.sub(&g.scale(alpha))?;
        phi = if differentiable { next } else { track(&next) };
    }
    Ok(if differentiable { phi } else { phi.detach() })
}

/// Adaptive-moment gradient descent over a flat list of arrays.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Array>,
    v: Vec<Array>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Updates `params` in place along `-grads`.
    pub fn step(&mut self, params: &mut [Array], grads: &[Array]) -> Result<(), MetaError> {
        if params.len() != grads.len() {
            return Err(MetaError::Contract(format!(
                "{} gradients for {} parameters",
                grads.len(),
                params.len()
            )));
        }
        if self.m.is_empty() {
            self.m = params.iter().map(|p| Array::zeros(p.shape())).collect();
            self.v = self.m.clone();
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            if p.shape() != g.shape() {
                return Err(MetaError::Contract(format!(
                    "gradient shape {:?} for parameter {:?}",
                    g.shape(),
                    p.shape()
                )));
            }
            let data = p.data_mut();
            for i in 0..data.len() {
                let gi = g.data()[i];
                let mi = self.beta1 * m.data()[i] + (1.0 - self.beta1) * gi;
                let vi = self.beta2 * v.data()[i] + (1.0 - self.beta2) * gi * gi;
                m.data_mut()[i] = mi;
                v.data_mut()[i] = vi;
                data[i] -= self.lr * (mi / bc1) / ((vi / bc2).sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// Average of per-task gradients, accumulated in the given order.
pub fn mean_gradient(task_grads: &[Vec<Array>]) -> Result<Vec<Array>, MetaError> {
    let Some(first) = task_grads.first() else {
        return Err(MetaError::Contract("outer update over an empty task batch".into()));
    };
    let n = task_grads.len() as f64;
    let mut acc: Vec<Array> = first.iter().map(|a| Array::zeros(a.shape())).collect();
    for grads in task_grads {
        if grads.len() != acc.len() {
            return Err(MetaError::Contract("ragged task gradients".into()));
        }
        for (a, g) in acc.iter_mut().zip(grads) {
            for (x, y) in a.data_mut().iter_mut().zip(g.data()) {
                *x += y;
            }
        }
    }
    for a in &mut acc {
        for x in a.data_mut() {
            *x /= n;
        }
    }
    Ok(acc)
}

/// One optimizer step on θ along the task-averaged meta-gradient.
pub fn outer_update(
    theta: &Network<Array>,
    task_grads: &[Vec<Array>],
    optimizer: &mut Adam,
) -> Result<Network<Array>, MetaError> {
    let g = mean_gradient(task_grads)?;
    if !g.iter().all(Array::all_finite) {
        return Err(MetaError::NonFinite("meta-gradient".into()));
    }
    let mut params: Vec<Array> = theta.tensors().into_iter().cloned().collect();
    optimizer.step(&mut params, &g)?;
    Ok(theta.with_values(params))
}
