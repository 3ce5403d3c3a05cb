//! Non-negative, ℓ1-bounded Lagrange multipliers.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Euclidean projection onto `{x >= 0, ||x||_1 <= radius}`: clip negatives,
/// then, if the mass still exceeds the radius, soft-threshold by the
/// sort-based simplex rule.
pub fn project_nonneg_l1_ball(v: &mut [f64], radius: f64) {
    for x in v.iter_mut() {
        if !(*x > 0.0) {
            *x = 0.0;
        }
    }
    let total: f64 = v.iter().sum();
    if total <= radius {
        return;
    }
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (j, &u) in sorted.iter().enumerate() {
        cum += u;
        let t = (cum - radius) / (j + 1) as f64;
        if u - t > 0.0 {
            theta = t;
        } else {
            break;
        }
    }
    for x in v.iter_mut() {
        *x = (*x - theta).max(0.0);
    }
}

/// `lambda` stacks `[λ^(1); λ^(2)]` over the global probes; `mu[k]` stacks
/// `[μ_k^(1); μ_k^(2)]` over client k's local probes. Each stacked vector is
/// its own ball of radius `bound`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualState {
    pub bound: f64,
    pub lambda: Vec<f64>,
    pub mu: Vec<Vec<f64>>,
}

impl DualState {
    pub fn zeros(num_global: usize, num_local: &[usize], bound: f64) -> Self {
        Self {
            bound,
            lambda: vec![0.0; 2 * num_global],
            mu: num_local.iter().map(|&n| vec![0.0; 2 * n]).collect(),
        }
    }

    pub fn num_global(&self) -> usize {
        self.lambda.len() / 2
    }

    pub fn num_local(&self, k: usize) -> usize {
        self.mu[k].len() / 2
    }

    /// `λ^(1)_u − λ^(2)_u`.
    pub fn lambda_diff(&self, u: usize) -> f64 {
        self.lambda[u] - self.lambda[self.num_global() + u]
    }

    /// `μ^(1)_{k,u} − μ^(2)_{k,u}`.
    pub fn mu_diff(&self, k: usize, u: usize) -> f64 {
        self.mu[k][u] - self.mu[k][self.num_local(k) + u]
    }

    pub fn is_zero(&self) -> bool {
        self.lambda.iter().chain(self.mu.iter().flatten()).all(|&v| v == 0.0)
    }

    pub fn lambda_norm(&self) -> f64 {
        self.lambda.iter().sum()
    }

    pub fn mu_norm(&self, k: usize) -> f64 {
        self.mu[k].iter().sum()
    }

    pub fn project(&mut self) {
        project_nonneg_l1_ball(&mut self.lambda, self.bound);
        for mu in &mut self.mu {
            project_nonneg_l1_ball(mu, self.bound);
        }
    }

    pub fn check_feasible(&self, tol: f64) -> Result<()> {
        let ok = |v: &[f64]| v.iter().all(|&x| x >= 0.0) && v.iter().sum::<f64>() <= self.bound + tol;
        if !ok(&self.lambda) || !self.mu.iter().all(|m| ok(m)) {
            return Err(Error::Numeric("dual state left the feasible ball".into()));
        }
        Ok(())
    }

    /// Projected ascent on one stacked block: `(1)` moves along `g − ξ`,
    /// `(2)` along `−g − ξ`.
    pub fn ascend(block: &mut [f64], signals: &[f64], xi: f64, step: f64, bound: f64) {
        let n = signals.len();
        for (u, &g) in signals.iter().enumerate() {
            block[u] += step * (g - xi);
            block[n + u] += step * (-g - xi);
        }
        project_nonneg_l1_ball(block, bound);
    }
}
