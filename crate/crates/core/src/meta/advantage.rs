//! Discounted returns, the linear feature baseline and GAE(λ).

use super::Trajectory;

/// Per-trajectory advantages and discounted returns.
#[derive(Debug, Clone, PartialEq)]
pub struct AdvantageSet {
    pub advantages: Vec<Vec<f64>>,
    pub returns: Vec<Vec<f64>>,
    pub gamma: f64,
    pub gae_lambda: f64,
}

impl AdvantageSet {
    /// All advantages, in trajectory then step order.
    pub fn flat(&self) -> Vec<f64> {
        self.advantages.iter().flatten().copied().collect()
    }

    /// Flat advantages shifted and scaled to zero mean and unit variance
    /// over the whole batch.
    pub fn normalized(&self) -> Vec<f64> {
        normalize(&self.flat())
    }
}

pub fn normalize(values: &[f64]) -> Vec<f64> {
    if values.is_empty() {
        return Vec::new();
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    values.iter().map(|v| (v - mean) / (std + 1e-8)).collect()
}

/// `R_t = Σ_k γ^k r_{t+k}`.
pub fn discounted_returns(rewards: &[f64], gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for t in (0..rewards.len()).rev() {
        acc = rewards[t] + gamma * acc;
        out[t] = acc;
    }
    out
}

/// Linear least-squares value predictor over
/// `[obs, obs², τ, τ², τ³, 1]` with `τ = t / horizon`.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineParams {
    pub weights: Vec<f64>,
    pub horizon: usize,
}

fn features(obs: &[f64], t: usize, horizon: usize, out: &mut Vec<f64>) {
    out.clear();
    let o = obs.iter().map(|v| v.clamp(-10.0, 10.0));
    out.extend(o.clone());
    out.extend(o.map(|v| v * v));
    let tau = t as f64 / horizon.max(1) as f64;
    out.extend([tau, tau * tau, tau * tau * tau, 1.0]);
}

impl BaselineParams {
    /// A baseline that predicts zero everywhere.
    pub fn zero(obs_dim: usize, horizon: usize) -> Self {
        Self {
            weights: vec![0.0; 2 * obs_dim + 4],
            horizon,
        }
    }

    pub fn predict(&self, traj: &Trajectory) -> Vec<f64> {
        let mut f = Vec::with_capacity(self.weights.len());
        traj.observations
            .iter()
            .enumerate()
            .map(|(t, obs)| {
                features(obs, t, self.horizon, &mut f);
                if f.len() != self.weights.len() {
                    return 0.0;
                }
                f.iter().zip(&self.weights).map(|(a, b)| a * b).sum()
            })
            .collect()
    }
}

/// Ridge-regularised least squares of discounted returns on the baseline
/// features. The intercept is not penalised. The ridge strength starts tiny
/// and grows tenfold until the normal equations factor cleanly.
pub fn fit_baseline(trajs: &[Trajectory], gamma: f64, horizon: usize) -> BaselineParams {
    let obs_dim = trajs
        .iter()
        .find_map(|t| t.observations.first().map(Vec::len))
        .unwrap_or(0);
    let dim = 2 * obs_dim + 4;
    let mut gram = vec![0.0; dim * dim];
    let mut rhs = vec![0.0; dim];
    let mut f = Vec::with_capacity(dim);
    let mut n = 0usize;
    for traj in trajs {
        let returns = discounted_returns(&traj.rewards, gamma);
        for (t, (obs, &y)) in traj.observations.iter().zip(&returns).enumerate() {
            features(obs, t, horizon, &mut f);
            for i in 0..dim {
                rhs[i] += f[i] * y;
                for j in 0..=i {
                    gram[i * dim + j] += f[i] * f[j];
                }
            }
            n += 1;
        }
    }
    if n == 0 {
        return BaselineParams::zero(obs_dim, horizon);
    }
    for i in 0..dim {
        for j in 0..i {
            gram[j * dim + i] = gram[i * dim + j];
        }
    }
    let scale = (0..dim).map(|i| gram[i * dim + i]).fold(0.0, f64::max).max(1e-12);
    let mut reg = 1e-10 * scale;
    for _ in 0..8 {
        let mut a = gram.clone();
        for i in 0..dim - 1 {
            a[i * dim + i] += reg;
        }
        if let Some(w) = cholesky_solve(&mut a, &rhs, dim) {
            if w.iter().all(|v| v.is_finite()) {
                return BaselineParams { weights: w, horizon };
            }
        }
        reg *= 10.0;
    }
    BaselineParams::zero(obs_dim, horizon)
}

/// Solves `A x = b` for symmetric positive definite `A` (overwritten).
fn cholesky_solve(a: &mut [f64], b: &[f64], n: usize) -> Option<Vec<f64>> {
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d -= a[j * n + k] * a[j * n + k];
        }
        if !(d > 0.0) {
            return None;
        }
        let d = d.sqrt();
        a[j * n + j] = d;
        for i in j + 1..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= a[i * n + k] * a[j * n + k];
            }
            a[i * n + j] = s / d;
        }
    }
    let mut y = b.to_vec();
    for i in 0..n {
        for k in 0..i {
            y[i] -= a[i * n + k] * y[k];
        }
        y[i] /= a[i * n + i];
    }
    for i in (0..n).rev() {
        for k in i + 1..n {
            y[i] -= a[k * n + i] * y[k];
        }
        y[i] /= a[i * n + i];
    }
    Some(y)
}

/// GAE(λ) advantages against `baseline`; the value after the final step of
/// every trajectory is taken as zero.
pub fn compute_gae(
    trajs: &[Trajectory],
    baseline: &BaselineParams,
    gamma: f64,
    gae_lambda: f64,
) -> AdvantageSet {
    let mut advantages = Vec::with_capacity(trajs.len());
    let mut returns = Vec::with_capacity(trajs.len());
    for traj in trajs {
        let values = baseline.predict(traj);
        let n = traj.len();
        let mut adv = vec![0.0; n];
        let mut acc = 0.0;
        for t in (0..n).rev() {
            let next = if t + 1 < n { values[t + 1] } else { 0.0 };
            let delta = traj.rewards[t] + gamma * next - values[t];
            acc = delta + gamma * gae_lambda * acc;
            adv[t] = acc;
        }
        advantages.push(adv);
        returns.push(discounted_returns(&traj.rewards, gamma));
    }
    AdvantageSet {
        advantages,
        returns,
        gamma,
        gae_lambda,
    }
}
