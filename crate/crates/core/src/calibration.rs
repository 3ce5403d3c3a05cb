//! Dual-adjusted calibration matrices `M^{λ,μ}(a,k)` and their positive
//! shifts used as cost rows.

use serde::{Deserialize, Serialize};

use crate::dual::DualState;
use crate::error::{Error, Result};
use crate::fairness::ConstraintSet;
use crate::model::argmax;
use crate::stats::PopulationStats;

/// Margin added on top of the minimal shift that makes every entry positive.
pub const KAPPA_MARGIN: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationCell {
    /// Row-major `M(a,k)`.
    pub matrix: Vec<f64>,
    /// Row-major `M̄(a,k) = M(a,k) + κ·1`.
    pub shifted: Vec<f64>,
    pub kappa: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationFamily {
    num_groups: usize,
    num_clients: usize,
    num_classes: usize,
    cells: Vec<CalibrationCell>,
}

/// `M(a,k) = I − (1/p_{a,k}) [Σ_u Δλ_u D^{a,k}_u + Σ_v Δμ_{k,v} D^{a,k}_v]`.
///
/// κ is zero when `M(a,k)` has no negative entry (so zero duals give `M̄ = I`
/// and the loss is plain cross-entropy); otherwise `−min M + KAPPA_MARGIN`.
pub fn build_calibration(
    dual: &DualState,
    constraints: &ConstraintSet,
    stats: &PopulationStats,
) -> Result<CalibrationFamily> {
    let (na, nm, nk) = (stats.num_groups(), stats.num_classes(), stats.num_clients());
    if dual.num_global() != constraints.num_global() {
        return Err(Error::DimensionMismatch { expected: constraints.num_global(), got: dual.num_global() });
    }
    let mut cells = Vec::with_capacity(na * nk);
    for a in 0..na {
        for k in 0..nk {
            if dual.num_local(k) != constraints.num_local(k) {
                return Err(Error::DimensionMismatch { expected: constraints.num_local(k), got: dual.num_local(k) });
            }
            // correction[i * m + j]
            let mut correction = vec![0.0; nm * nm];
            let mut add = |weight: f64, column: usize, values: &[f64]| {
                if weight == 0.0 {
                    return;
                }
                for (i, &d) in values.iter().enumerate() {
                    correction[i * nm + column] += weight * d;
                }
            };
            for (u, c) in constraints.global.iter().enumerate() {
                add(dual.lambda_diff(u), c.column(), c.cell(a, k));
            }
            for (v, c) in constraints.local[k].iter().enumerate() {
                add(dual.mu_diff(k, v), c.column(), c.cell(a, k));
            }
            let p = stats.p_ak(a, k);
            let touched = correction.iter().any(|&x| x != 0.0);
            if touched && p <= 0.0 {
                return Err(Error::EmptyCell { group: a, client: k });
            }
            let matrix: Vec<f64> = (0..nm * nm)
                .map(|idx| {
                    let eye = if idx / nm == idx % nm { 1.0 } else { 0.0 };
                    if touched {
                        eye - correction[idx] / p
                    } else {
                        eye
                    }
                })
                .collect();
            let min = matrix.iter().cloned().fold(f64::INFINITY, f64::min);
            let kappa = if min < 0.0 { -min + KAPPA_MARGIN } else { 0.0 };
            let shifted = matrix.iter().map(|v| v + kappa).collect();
            cells.push(CalibrationCell { matrix, shifted, kappa });
        }
    }
    Ok(CalibrationFamily { num_groups: na, num_clients: nk, num_classes: nm, cells })
}

impl CalibrationFamily {
    pub fn identity(num_groups: usize, num_clients: usize, num_classes: usize) -> Self {
        let m = num_classes;
        let eye: Vec<f64> = (0..m * m).map(|idx| if idx / m == idx % m { 1.0 } else { 0.0 }).collect();
        let cell = CalibrationCell { matrix: eye.clone(), shifted: eye, kappa: 0.0 };
        Self { num_groups, num_clients, num_classes, cells: vec![cell; num_groups * num_clients] }
    }

    pub fn cell(&self, a: usize, k: usize) -> &CalibrationCell {
        &self.cells[a * self.num_clients + k]
    }

    pub fn matrix(&self, a: usize, k: usize) -> &[f64] {
        &self.cell(a, k).matrix
    }

    /// Row `y` of `M̄(a,k)`: the cost row of a sample with label `y`.
    pub fn cost_row(&self, a: usize, k: usize, y: usize) -> &[f64] {
        let m = self.num_classes;
        &self.cell(a, k).shifted[y * m..(y + 1) * m]
    }

    /// `M(a,k)ᵀ η`.
    pub fn calibrated_scores(&self, a: usize, k: usize, eta: &[f64]) -> Vec<f64> {
        let m = self.num_classes;
        let mat = self.matrix(a, k);
        (0..m).map(|j| (0..m).map(|i| mat[i * m + j] * eta[i]).sum()).collect()
    }

    /// `argmax_j (M(a,k)ᵀ η)_j`, lowest index on ties.
    pub fn predict(&self, a: usize, k: usize, eta: &[f64]) -> usize {
        argmax(&self.calibrated_scores(a, k, eta))
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }
    pub fn num_groups(&self) -> usize {
        self.num_groups
    }
    pub fn num_clients(&self) -> usize {
        self.num_clients
    }
}
