//! Dense two-phase simplex with Bland's rule, for LPs of a few hundred
//! variables.
//!
//! Solves `min cᵀx` subject to `A_eq x = b_eq`, `A_le x <= b_le`, `x >= 0`.

use crate::error::{Error, Result};

const PIVOT_EPS: f64 = 1e-11;
const FEASIBILITY_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Default)]
pub struct LinearProgram {
    pub num_vars: usize,
    pub objective: Vec<f64>,
    pub eq: Vec<(Vec<f64>, f64)>,
    pub le: Vec<(Vec<f64>, f64)>,
}

#[derive(Debug, Clone)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    /// Slack of every `le` row at the solution.
    pub slacks: Vec<f64>,
    pub pivots: usize,
}

struct Tableau {
    rows: Vec<Vec<f64>>,
    cost: Vec<f64>,
    basis: Vec<usize>,
    width: usize,
    pivots: usize,
}

impl Tableau {
    fn rhs(&self, i: usize) -> f64 {
        self.rows[i][self.width]
    }

    fn pivot(&mut self, r: usize, c: usize) {
        let p = self.rows[r][c];
        for v in self.rows[r].iter_mut() {
            *v /= p;
        }
        let pivot_row = self.rows[r].clone();
        for (i, row) in self.rows.iter_mut().enumerate() {
            if i == r {
                continue;
            }
            let f = row[c];
            if f != 0.0 {
                for (v, pv) in row.iter_mut().zip(&pivot_row) {
                    *v -= f * pv;
                }
                row[c] = 0.0;
            }
        }
        let f = self.cost[c];
        if f != 0.0 {
            for (v, pv) in self.cost.iter_mut().zip(&pivot_row) {
                *v -= f * pv;
            }
            self.cost[c] = 0.0;
        }
        self.basis[r] = c;
        self.pivots += 1;
    }

    /// Bland's rule: lowest-index improving column, lowest-index leaving
    /// variable among ratio ties.
    fn optimize(&mut self, allowed: usize) -> Result<()> {
        loop {
            let Some(c) = (0..allowed).find(|&j| self.cost[j] < -PIVOT_EPS) else {
                return Ok(());
            };
            let mut leave: Option<(usize, f64)> = None;
            for i in 0..self.rows.len() {
                let a = self.rows[i][c];
                if a > PIVOT_EPS {
                    let ratio = self.rhs(i) / a;
                    leave = match leave {
                        None => Some((i, ratio)),
                        Some((j, best)) => {
                            if ratio < best - 1e-14 || (ratio <= best + 1e-14 && self.basis[i] < self.basis[j]) {
                                Some((i, ratio))
                            } else {
                                Some((j, best))
                            }
                        }
                    };
                }
            }
            let (r, _) = leave.ok_or_else(|| Error::Numeric("linear program is unbounded".into()))?;
            self.pivot(r, c);
        }
    }
}

pub fn solve(lp: &LinearProgram) -> Result<LpSolution> {
    let n = lp.num_vars;
    if lp.objective.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: lp.objective.len() });
    }
    for (a, _) in lp.eq.iter().chain(&lp.le) {
        if a.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: a.len() });
        }
    }
    let n_le = lp.le.len();
    let n_rows = lp.eq.len() + n_le;
    let art0 = n + n_le;
    let width = art0 + n_rows;
    let mut rows = Vec::with_capacity(n_rows);
    let tagged = lp.eq.iter().map(|r| (r, None)).chain(lp.le.iter().enumerate().map(|(s, r)| (r, Some(s))));
    for (i, ((a, b), slack)) in tagged.enumerate() {
        let mut row = vec![0.0; width + 1];
        row[..n].copy_from_slice(a);
        if let Some(s) = slack {
            row[n + s] = 1.0;
        }
        row[width] = *b;
        if *b < 0.0 {
            row.iter_mut().for_each(|v| *v = -*v);
        }
        row[art0 + i] = 1.0;
        rows.push(row);
    }
    // phase 1: minimise the artificial mass
    let mut cost = vec![0.0; width + 1];
    for row in &rows {
        for j in 0..art0 {
            cost[j] -= row[j];
        }
        cost[width] -= row[width];
    }
    let mut t = Tableau { rows, cost, basis: (art0..width).collect(), width, pivots: 0 };
    t.optimize(art0)?;
    if -t.cost[width] > FEASIBILITY_EPS {
        return Err(Error::Infeasible(format!("phase-one residual {:.3e}", -t.cost[width])));
    }
    // drive remaining artificials out of the basis where possible
    for i in 0..t.rows.len() {
        if t.basis[i] >= art0 {
            if let Some(c) = (0..art0).find(|&j| t.rows[i][j].abs() > PIVOT_EPS) {
                t.pivot(i, c);
            }
        }
    }
    // phase 2
    let mut cost = vec![0.0; width + 1];
    cost[..n].copy_from_slice(&lp.objective);
    for i in 0..t.rows.len() {
        let b = t.basis[i];
        let cb = if b < n { lp.objective[b] } else { 0.0 };
        if cb != 0.0 {
            for (v, r) in cost.iter_mut().zip(&t.rows[i]) {
                *v -= cb * r;
            }
        }
    }
    t.cost = cost;
    t.optimize(art0)?;

    let mut x = vec![0.0; n];
    for (i, &b) in t.basis.iter().enumerate() {
        if b < n {
            x[b] = t.rhs(i).max(0.0);
        }
    }
    let objective = lp.objective.iter().zip(&x).map(|(c, v)| c * v).sum();
    let slacks = lp
        .le
        .iter()
        .map(|(a, b)| b - a.iter().zip(&x).map(|(c, v)| c * v).sum::<f64>())
        .collect();
    Ok(LpSolution { x, objective, slacks, pivots: t.pivots })
}
