//! Linear centered kernel alignment between hidden representations.
//!
//! For each hidden layer and each adaptation step, the representation of a
//! task is the layer's activation on a fixed probe set under that task's
//! adapted context. Comparing tasks pairwise gives one task × task
//! similarity matrix per (layer, step).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{Array, Tensor};
use crate::layers::{policy_forward, LayerError, Network, PolicySpec};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalysisError {
    #[error("representations have {0} and {1} rows; probes must be aligned")]
    RowMismatch(usize, usize),
    #[error("probe set is empty")]
    EmptyProbes,
    #[error("{0}")]
    Contract(String),
    #[error(transparent)]
    Layer(#[from] LayerError),
}

/// Activations of one hidden layer on the probe set: `probes × units`.
#[derive(Debug, Clone, PartialEq)]
pub struct RepresentationMatrix {
    pub values: Array,
    pub task_id: usize,
    pub grad_step: usize,
    pub layer: usize,
}

/// Task × task CKA values for one layer at one adaptation step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CkaMatrix {
    pub layer: usize,
    pub grad_step: usize,
    /// Row-major `n_tasks × n_tasks`.
    pub values: Vec<f64>,
    pub n_tasks: usize,
    /// Set when some representation had no variance across probes.
    pub degenerate: bool,
}

impl CkaMatrix {
    pub fn get(&self, a: usize, b: usize) -> f64 {
        self.values[a * self.n_tasks + b]
    }

    /// Mean over `a ≠ b`; 1 for a single task.
    pub fn mean_off_diagonal(&self) -> f64 {
        let n = self.n_tasks;
        if n < 2 {
            return 1.0;
        }
        let mut s = 0.0;
        for a in 0..n {
            for b in 0..n {
                if a != b {
                    s += self.get(a, b);
                }
            }
        }
        s / (n * (n - 1)) as f64
    }
}

/// Column-centred copy of a `rows × cols` matrix.
fn center_columns(x: &Array) -> Array {
    let (rows, cols) = x.dims2().expect("representation is a matrix");
    let mut out = x.clone();
    if rows == 0 {
        return out;
    }
    for c in 0..cols {
        let mean = (0..rows).map(|r| x.get2(r, c)).sum::<f64>() / rows as f64;
        for r in 0..rows {
            out.data_mut()[r * cols + c] -= mean;
        }
    }
    out
}

fn frobenius_sq(m: &Array) -> f64 {
    m.data().iter().map(|v| v * v).sum()
}

/// Linear CKA `‖Yᵀ X‖²_F / (‖Xᵀ X‖_F ‖Yᵀ Y‖_F)` on column-centred inputs.
///
/// When a centred input is all zeros the index is undefined; it is taken
/// as 1 if both are zero and 0 otherwise.
pub fn linear_cka(x: &Array, y: &Array) -> Result<f64, AnalysisError> {
    let (xr, _) = x
        .dims2()
        .ok_or_else(|| AnalysisError::Contract("representation must be a matrix".into()))?;
    let (yr, _) = y
        .dims2()
        .ok_or_else(|| AnalysisError::Contract("representation must be a matrix".into()))?;
    if xr != yr {
        return Err(AnalysisError::RowMismatch(xr, yr));
    }
    let xc = center_columns(x);
    let yc = center_columns(y);
    let x_zero = xc.data().iter().all(|&v| v == 0.0);
    let y_zero = yc.data().iter().all(|&v| v == 0.0);
    if x_zero || y_zero {
        return Ok(if x_zero && y_zero { 1.0 } else { 0.0 });
    }
    let cross = yc.matmul(&xc, true, false).expect("row counts match");
    let xx = xc.matmul(&xc, true, false).expect("square");
    let yy = yc.matmul(&yc, true, false).expect("square");
    let denom = frobenius_sq(&xx).sqrt() * frobenius_sq(&yy).sqrt();
    Ok((frobenius_sq(&cross) / denom).clamp(0.0, 1.0))
}

fn is_degenerate(x: &Array) -> bool {
    center_columns(x).data().iter().all(|&v| v == 0.0)
}

/// Hidden activations on `probes` for each context in `contexts`
/// (one per adaptation step), for every hidden layer.
pub fn capture_representations(
    spec: &PolicySpec,
    theta: &Network<Array>,
    contexts: &[Array],
    probes: &[Vec<f64>],
    task_id: usize,
) -> Result<Vec<RepresentationMatrix>, AnalysisError> {
    if probes.is_empty() {
        return Err(AnalysisError::EmptyProbes);
    }
    let dim = probes[0].len();
    let mut data = Vec::with_capacity(probes.len() * dim);
    for p in probes {
        if p.len() != dim {
            return Err(AnalysisError::Contract("probe inputs differ in width".into()));
        }
        data.extend_from_slice(p);
    }
    let obs = Tensor::constant(Array::new(vec![probes.len(), dim], data).map_err(LayerError::from)?);
    let net = theta.constants();
    let mut out = Vec::new();
    for (grad_step, phi) in contexts.iter().enumerate() {
        let result = policy_forward(&obs, &Tensor::constant(phi.clone()), &net, spec)?;
        for (layer, h) in result.hidden.into_iter().enumerate() {
            out.push(RepresentationMatrix {
                values: h.value().clone(),
                task_id,
                grad_step,
                layer,
            });
        }
    }
    Ok(out)
}

/// CKA matrices for every (layer, step) from per-task context sequences.
///
/// `contexts[t][k]` is task `t`'s context after `k` inner steps; all tasks
/// need the same number of steps.
pub fn build_heatmaps(
    spec: &PolicySpec,
    theta: &Network<Array>,
    contexts: &[Vec<Array>],
    probes: &[Vec<f64>],
) -> Result<Vec<CkaMatrix>, AnalysisError> {
    let n_tasks = contexts.len();
    let n_steps = contexts.first().map_or(0, Vec::len);
    if contexts.iter().any(|c| c.len() != n_steps) {
        return Err(AnalysisError::Contract("tasks have different step counts".into()));
    }
    let reps: Vec<Vec<RepresentationMatrix>> = contexts
        .iter()
        .enumerate()
        .map(|(t, c)| capture_representations(spec, theta, c, probes, t))
        .collect::<Result<_, _>>()?;
    let n_layers = spec.hidden_sizes.len();
    let mut out = Vec::with_capacity(n_layers * n_steps);
    for layer in 0..n_layers {
        for step in 0..n_steps {
            let pick = |t: usize| &reps[t][step * n_layers + layer].values;
            let mut values = vec![0.0; n_tasks * n_tasks];
            for a in 0..n_tasks {
                values[a * n_tasks + a] = linear_cka(pick(a), pick(a))?;
                for b in a + 1..n_tasks {
                    let v = linear_cka(pick(a), pick(b))?;
                    values[a * n_tasks + b] = v;
                    values[b * n_tasks + a] = v;
                }
            }
            let degenerate = (0..n_tasks).any(|t| is_degenerate(pick(t)));
            out.push(CkaMatrix {
                layer,
                grad_step: step,
                values,
                n_tasks,
                degenerate,
            });
        }
    }
    Ok(out)
}

/// `1 − mean off-diagonal CKA` for each matrix, in input order.
pub fn dissimilarity_summary(matrices: &[CkaMatrix]) -> Vec<f64> {
    matrices.iter().map(|m| 1.0 - m.mean_off_diagonal()).collect()
}
