//! Finite-difference oracle and small helpers shared by the integration tests.
#![allow(dead_code)]

use nmrl::autodiff::{grad, Array, GradRecord, Tensor};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const FD_EPS: f64 = 1e-5;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_array(rng: &mut impl Rng, shape: &[usize], lo: f64, hi: f64) -> Array {
    let n = shape.iter().product();
    Array::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Central differences of `f` with respect to every element of every input.
pub fn numeric_grads(f: &dyn Fn(&[Array]) -> f64, inputs: &[Array], eps: f64) -> Vec<Array> {
    let mut work: Vec<Array> = inputs.to_vec();
    let mut out = Vec::with_capacity(inputs.len());
    for i in 0..inputs.len() {
        let mut g = Array::zeros(inputs[i].shape());
        for j in 0..inputs[i].len() {
            let x = inputs[i].data()[j];
            work[i].data_mut()[j] = x + eps;
            let hi = f(&work);
            work[i].data_mut()[j] = x - eps;
            let lo = f(&work);
            work[i].data_mut()[j] = x;
            g.data_mut()[j] = (hi - lo) / (2.0 * eps);
        }
        out.push(g);
    }
    out
}

/// Largest elementwise `|a − n| / (max(|a|, |n|) + floor)`.
pub fn max_rel_err(analytic: &Array, numeric: &Array, floor: f64) -> f64 {
    assert_eq!(analytic.shape(), numeric.shape());
    analytic
        .data()
        .iter()
        .zip(numeric.data())
        .map(|(a, n)| (a - n).abs() / (a.abs().max(n.abs()) + floor))
        .fold(0.0, f64::max)
}

/// Compares reverse-mode gradients of `f` against central differences.
///
/// `f` receives differentiable leaves for the analytic pass and constants
/// for the numeric pass, and must return a scalar.
pub fn check_grads<F>(inputs: &[Array], f: F, tol: f64) -> Result<f64, String>
where
    F: Fn(&[Tensor]) -> Tensor,
{
    let record = GradRecord::new();
    let vars: Vec<Tensor> = inputs.iter().map(|a| record.var(a.clone())).collect();
    let loss = f(&vars);
    let refs: Vec<&Tensor> = vars.iter().collect();
    let analytic = grad(&loss, &refs, false).map_err(|e| e.to_string())?;
    let scalar = |xs: &[Array]| {
        let consts: Vec<Tensor> = xs.iter().map(|a| Tensor::constant(a.clone())).collect();
        f(&consts).item()
    };
    let numeric = numeric_grads(&scalar, inputs, FD_EPS);
    let mut worst: f64 = 0.0;
    for (i, (a, n)) in analytic.iter().zip(&numeric).enumerate() {
        let err = max_rel_err(a.value(), n, 1e-5);
        if err > tol {
            return Err(format!(
                "input {i}: relative error {err:.3e} > {tol:.0e}\n analytic {:?}\n numeric  {:?}",
                a.value().data(),
                n.data()
            ));
        }
        worst = worst.max(err);
    }
    Ok(worst)
}
