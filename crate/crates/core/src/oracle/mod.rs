//! Exact solvers on finite instances: the optimal randomized fair classifier
//! as a linear program, brute-force enumeration of deterministic classifiers,
//! and the hard-max dual function.
//!
//! Disparities here are computed from conditional prediction rates directly,
//! not from the constraint matrices, so the two constructions can be checked
//! against each other.

pub mod lp;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::calibration::build_calibration;
use crate::dual::DualState;
use crate::error::{Error, Result};
use crate::fairness::{probes, ConstraintIndex, ConstraintSet, Criterion, FairnessSpec, Scope};
use crate::model::argmax;
use crate::postprocessing::{PluginScores, ScoreRow};
use crate::rng;
use crate::stats::PopulationStats;

pub const ENUMERATION_BUDGET: u64 = 1_000_000;
/// Constraint satisfaction tolerance for LP solutions.
pub const LP_TOL: f64 = 1e-8;

/// Joint table `P(x, a, y, k)` on a finite feature support.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteInstance {
    pub num_points: usize,
    pub num_groups: usize,
    pub num_classes: usize,
    pub num_clients: usize,
    /// `prob[((x * A + a) * m + y) * N + k]`
    pub prob: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum OracleMode {
    /// `h_k(x, a)`.
    #[default]
    AttributeAware,
    /// `h_k(x)`, shared across groups.
    AttributeBlind,
}

impl DiscreteInstance {
    pub fn new(num_points: usize, num_groups: usize, num_classes: usize, num_clients: usize, prob: Vec<f64>) -> Result<Self> {
        let inst = Self { num_points, num_groups, num_classes, num_clients, prob };
        inst.validate()?;
        Ok(inst)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.num_points * self.num_groups * self.num_classes * self.num_clients;
        if n == 0 {
            return Err(Error::Empty("instance has an empty dimension".into()));
        }
        if self.prob.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: self.prob.len() });
        }
        if self.prob.iter().any(|&p| !(p >= 0.0 && p.is_finite())) {
            return Err(Error::InvalidArgument("probabilities must be finite and non-negative".into()));
        }
        let total: f64 = self.prob.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!("probabilities sum to {total}, not 1")));
        }
        Ok(())
    }

    /// Random instance; every `(x, a, k)` cell has positive mass and its
    /// conditional label distribution is drawn uniformly from the simplex.
    pub fn random(num_points: usize, num_groups: usize, num_classes: usize, num_clients: usize, seed: u64) -> Self {
        let mut rng = rng::rng_from(seed);
        let mut exp = || -> f64 { -(1.0 - rng.random::<f64>()).ln() };
        let (nx, na, nm, nk) = (num_points, num_groups, num_classes, num_clients);
        let mut prob = vec![0.0; nx * na * nm * nk];
        for x in 0..nx {
            for a in 0..na {
                for k in 0..nk {
                    let mass = 0.2 + exp();
                    let eta: Vec<f64> = (0..nm).map(|_| exp()).collect();
                    let z: f64 = eta.iter().sum();
                    for y in 0..nm {
                        prob[((x * na + a) * nm + y) * nk + k] = mass * eta[y] / z;
                    }
                }
            }
        }
        let total: f64 = prob.iter().sum();
        prob.iter_mut().for_each(|p| *p /= total);
        Self { num_points, num_groups, num_classes, num_clients, prob }
    }

    pub fn p(&self, x: usize, a: usize, y: usize, k: usize) -> f64 {
        self.prob[((x * self.num_groups + a) * self.num_classes + y) * self.num_clients + k]
    }

    /// `P(x, a, k)`.
    pub fn mass(&self, x: usize, a: usize, k: usize) -> f64 {
        (0..self.num_classes).map(|y| self.p(x, a, y, k)).sum()
    }

    /// `P(Y = · | x, a, k)`, or `None` on a zero-mass cell.
    pub fn eta(&self, x: usize, a: usize, k: usize) -> Option<Vec<f64>> {
        let m = self.mass(x, a, k);
        (m > 0.0).then(|| (0..self.num_classes).map(|y| self.p(x, a, y, k) / m).collect())
    }

    pub fn stats(&self) -> PopulationStats {
        let (na, nm, nk) = (self.num_groups, self.num_classes, self.num_clients);
        let mut mass = vec![0.0; na * nm * nk];
        for x in 0..self.num_points {
            for a in 0..na {
                for y in 0..nm {
                    for k in 0..nk {
                        mass[(a * nm + y) * nk + k] += self.p(x, a, y, k);
                    }
                }
            }
        }
        PopulationStats::from_masses(na, nm, nk, mass).expect("validated instance")
    }

    /// Exact posteriors as plug-in scores, one row per positive-mass
    /// `(x, a)` cell, weighted by `P(x, a, k)`. Also returns each row's `(x, a)`.
    pub fn plugin_scores(&self) -> (PluginScores, Vec<Vec<(usize, usize)>>) {
        let mut clients = Vec::with_capacity(self.num_clients);
        let mut cells = Vec::with_capacity(self.num_clients);
        for k in 0..self.num_clients {
            let mut rows = Vec::new();
            let mut ids = Vec::new();
            for x in 0..self.num_points {
                for a in 0..self.num_groups {
                    if let Some(eta) = self.eta(x, a, k) {
                        rows.push(ScoreRow { eta, group: a, label: None, weight: self.mass(x, a, k) });
                        ids.push((x, a));
                    }
                }
            }
            clients.push(rows);
            cells.push(ids);
        }
        let scores = PluginScores { num_classes: self.num_classes, num_groups: self.num_groups, clients };
        (scores, cells)
    }

    /// `Σ P(x,a,k) max_y η_y`, i.e. one minus the Bayes risk.
    pub fn bayes_accuracy(&self) -> f64 {
        let mut acc = 0.0;
        for k in 0..self.num_clients {
            for x in 0..self.num_points {
                for a in 0..self.num_groups {
                    acc += (0..self.num_classes).map(|y| self.p(x, a, y, k)).fold(0.0, f64::max);
                }
            }
        }
        acc
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let inst: Self = serde_json::from_str(s)?;
        inst.validate()?;
        Ok(inst)
    }

    pub fn num_cells(&self, mode: OracleMode) -> usize {
        match mode {
            OracleMode::AttributeAware => self.num_clients * self.num_points * self.num_groups,
            OracleMode::AttributeBlind => self.num_clients * self.num_points,
        }
    }

    /// Row of `(x, a, k)` in a classifier table of the given mode.
    pub fn cell(&self, mode: OracleMode, x: usize, a: usize, k: usize) -> usize {
        match mode {
            OracleMode::AttributeAware => (k * self.num_points + x) * self.num_groups + a,
            OracleMode::AttributeBlind => k * self.num_points + x,
        }
    }
}

/// Randomized classifier `h[cell][j]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierTable {
    pub mode: OracleMode,
    pub num_classes: usize,
    pub probs: Vec<f64>,
}

impl ClassifierTable {
    pub fn row(&self, cell: usize) -> &[f64] {
        &self.probs[cell * self.num_classes..(cell + 1) * self.num_classes]
    }

    pub fn num_cells(&self) -> usize {
        self.probs.len() / self.num_classes
    }

    pub fn deterministic(mode: OracleMode, num_classes: usize, assignment: &[usize]) -> Self {
        let mut probs = vec![0.0; assignment.len() * num_classes];
        for (c, &j) in assignment.iter().enumerate() {
            probs[c * num_classes + j] = 1.0;
        }
        Self { mode, num_classes, probs }
    }

    /// Aware table from weighted votes `(client, x, a, class, weight)`;
    /// cells without votes predict class 0.
    pub fn from_votes(
        instance: &DiscreteInstance,
        votes: impl IntoIterator<Item = (usize, usize, usize, usize, f64)>,
    ) -> Self {
        let mode = OracleMode::AttributeAware;
        let m = instance.num_classes;
        let cells = instance.num_cells(mode);
        let mut probs = vec![0.0; cells * m];
        let mut tot = vec![0.0; cells];
        for (k, x, a, j, w) in votes {
            let c = instance.cell(mode, x, a, k);
            probs[c * m + j] += w;
            tot[c] += w;
        }
        for c in 0..cells {
            if tot[c] > 0.0 {
                for j in 0..m {
                    probs[c * m + j] /= tot[c];
                }
            } else {
                probs[c * m] = 1.0;
            }
        }
        Self { mode, num_classes: m, probs }
    }
}

/// Linear functional over `h` for one probe: coefficient on `h[cell][y]`.
struct ProbeFunctional {
    index: ConstraintIndex,
    coef: Vec<f64>,
}

fn event_rate(
    instance: &DiscreteInstance,
    mode: OracleMode,
    index: &ConstraintIndex,
    in_event: impl Fn(usize, usize, usize) -> bool,
    what: &str,
) -> Result<Vec<f64>> {
    let mut coef = vec![0.0; instance.num_cells(mode)];
    let mut total = 0.0;
    for x in 0..instance.num_points {
        for a in 0..instance.num_groups {
            for y in 0..instance.num_classes {
                for k in 0..instance.num_clients {
                    if in_event(a, y, k) {
                        let p = instance.p(x, a, y, k);
                        coef[instance.cell(mode, x, a, k)] += p;
                        total += p;
                    }
                }
            }
        }
    }
    if total <= 0.0 {
        return Err(Error::DegenerateProbe { probe: index.to_string(), cell: what.to_string() });
    }
    coef.iter_mut().for_each(|c| *c /= total);
    Ok(coef)
}

/// `P(Ŷ = y | E_group) − P(Ŷ = y | E_all)` as coefficients.
fn probe_functional(instance: &DiscreteInstance, mode: OracleMode, index: ConstraintIndex) -> Result<ProbeFunctional> {
    let ap = index.probe_group;
    let yp = index.probe_class;
    let client_ok = move |k: usize| match index.scope {
        Scope::Global => true,
        Scope::Local(c) => k == c,
    };
    let label_ok = move |y: usize| match (index.criterion, index.branch) {
        (Criterion::Dp, _) => true,
        (_, 0) => y == yp,
        _ => y != yp,
    };
    let group_rate = event_rate(instance, mode, &index, |a, y, k| a == ap && label_ok(y) && client_ok(k), "group event")?;
    let base_rate = event_rate(instance, mode, &index, |_, y, k| label_ok(y) && client_ok(k), "reference event")?;
    let coef = group_rate.iter().zip(&base_rate).map(|(g, b)| g - b).collect();
    Ok(ProbeFunctional { index, coef })
}

struct Functionals {
    global: Vec<ProbeFunctional>,
    local: Vec<Vec<ProbeFunctional>>,
}

fn functionals(instance: &DiscreteInstance, spec: &FairnessSpec, mode: OracleMode) -> Result<Functionals> {
    let (na, nm) = (instance.num_groups, instance.num_classes);
    let build = |scope| {
        probes(spec.criterion, scope, na, nm)
            .into_iter()
            .map(|idx| probe_functional(instance, mode, idx))
            .collect::<Result<Vec<_>>>()
    };
    let global = if spec.scopes.global() { build(Scope::Global)? } else { Vec::new() };
    let mut local = Vec::new();
    for k in 0..instance.num_clients {
        local.push(if spec.scopes.local() { build(Scope::Local(k))? } else { Vec::new() });
    }
    Ok(Functionals { global, local })
}

/// Per-cell expected risk of predicting class `j`: `Σ_y P(x,a,y,k) R[y][j]`
/// with `R = 1 − I`.
fn risk_coefficients(instance: &DiscreteInstance, mode: OracleMode) -> Vec<f64> {
    let m = instance.num_classes;
    let mut coef = vec![0.0; instance.num_cells(mode) * m];
    for x in 0..instance.num_points {
        for a in 0..instance.num_groups {
            for k in 0..instance.num_clients {
                let c = instance.cell(mode, x, a, k);
                for y in 0..m {
                    let p = instance.p(x, a, y, k);
                    for j in 0..m {
                        if j != y {
                            coef[c * m + j] += p;
                        }
                    }
                }
            }
        }
    }
    coef
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeValue {
    pub probe: ConstraintIndex,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub risk: f64,
    pub global: Vec<ProbeValue>,
    pub local: Vec<Vec<ProbeValue>>,
}

impl Evaluation {
    pub fn max_global(&self) -> f64 {
        self.global.iter().map(|p| p.value.abs()).fold(0.0, f64::max)
    }

    pub fn max_local(&self) -> f64 {
        self.local.iter().flatten().map(|p| p.value.abs()).fold(0.0, f64::max)
    }

    /// Largest violation `|𝒟| − ξ` over all probes (negative when slack).
    pub fn max_violation(&self, spec: &FairnessSpec) -> f64 {
        let mut worst = f64::NEG_INFINITY;
        for p in &self.global {
            worst = worst.max(p.value.abs() - spec.xi_global);
        }
        for (k, ps) in self.local.iter().enumerate() {
            for p in ps {
                worst = worst.max(p.value.abs() - spec.xi_local_for(k));
            }
        }
        worst
    }
}

/// Risk and probe disparities of a randomized classifier on the instance.
pub fn evaluate(instance: &DiscreteInstance, spec: &FairnessSpec, table: &ClassifierTable) -> Result<Evaluation> {
    let mode = table.mode;
    if table.num_cells() != instance.num_cells(mode) || table.num_classes != instance.num_classes {
        return Err(Error::DimensionMismatch { expected: instance.num_cells(mode), got: table.num_cells() });
    }
    let m = instance.num_classes;
    let risk_coef = risk_coefficients(instance, mode);
    let risk = risk_coef.iter().zip(&table.probs).map(|(c, h)| c * h).sum();
    let f = functionals(instance, spec, mode)?;
    let value = |p: &ProbeFunctional| -> ProbeValue {
        let y = p.index.probe_class;
        let v = p.coef.iter().enumerate().map(|(c, w)| w * table.probs[c * m + y]).sum();
        ProbeValue { probe: p.index, value: v }
    };
    Ok(Evaluation {
        risk,
        global: f.global.iter().map(value).collect(),
        local: f.local.iter().map(|ps| ps.iter().map(value).collect()).collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleSolution {
    pub table: ClassifierTable,
    pub risk: f64,
    pub evaluation: Evaluation,
    /// Inequality rows active at the optimum.
    pub tight_constraints: usize,
}

/// Optimal randomized classifier under the spec's constraints.
pub fn solve_primal_lp(instance: &DiscreteInstance, spec: &FairnessSpec, mode: OracleMode) -> Result<OracleSolution> {
    instance.validate()?;
    spec.validate()?;
    let m = instance.num_classes;
    let cells = instance.num_cells(mode);
    let n = cells * m;
    let f = functionals(instance, spec, mode)?;
    let mut program = lp::LinearProgram { num_vars: n, objective: risk_coefficients(instance, mode), ..Default::default() };
    for c in 0..cells {
        let mut row = vec![0.0; n];
        row[c * m..(c + 1) * m].iter_mut().for_each(|v| *v = 1.0);
        program.eq.push((row, 1.0));
    }
    let mut push = |p: &ProbeFunctional, xi: f64| {
        if !xi.is_finite() {
            return;
        }
        let y = p.index.probe_class;
        let mut row = vec![0.0; n];
        for (c, w) in p.coef.iter().enumerate() {
            row[c * m + y] = *w;
        }
        let neg = row.iter().map(|v| -v).collect();
        program.le.push((row, xi));
        program.le.push((neg, xi));
    };
    for p in &f.global {
        push(p, spec.xi_global);
    }
    for (k, ps) in f.local.iter().enumerate() {
        for p in ps {
            push(p, spec.xi_local_for(k));
        }
    }
    let sol = lp::solve(&program)?;
    let tight = sol.slacks.iter().filter(|&&s| s.abs() <= LP_TOL).count();
    let mut probs = sol.x;
    // renormalize rows against round-off
    for c in 0..cells {
        let row = &mut probs[c * m..(c + 1) * m];
        let z: f64 = row.iter().sum();
        row.iter_mut().for_each(|v| *v /= z);
    }
    let table = ClassifierTable { mode, num_classes: m, probs };
    let evaluation = evaluate(instance, spec, &table)?;
    if evaluation.max_violation(spec) > LP_TOL {
        return Err(Error::Numeric(format!("LP solution violates constraints by {:.3e}", evaluation.max_violation(spec))));
    }
    Ok(OracleSolution { risk: evaluation.risk, table, evaluation, tight_constraints: tight })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Enumeration {
    pub total: u64,
    pub feasible: u64,
    pub best_risk: f64,
    pub best: Vec<usize>,
    /// Every constant classifier satisfied the constraints.
    pub constants_feasible: bool,
}

/// Evaluate all `m^cells` deterministic classifiers.
pub fn enumerate_deterministic(
    instance: &DiscreteInstance,
    spec: &FairnessSpec,
    mode: OracleMode,
    budget: u64,
) -> Result<Enumeration> {
    let m = instance.num_classes;
    let cells = instance.num_cells(mode);
    let total = (m as u64).checked_pow(cells as u32).filter(|&t| t <= budget).ok_or_else(|| {
        Error::Budget(format!("{m}^{cells} deterministic classifiers exceed the budget of {budget}"))
    })?;
    let f = functionals(instance, spec, mode)?;
    let risk_coef = risk_coefficients(instance, mode);
    // (coefficients per cell, class, slack)
    let mut probes: Vec<(&ProbeFunctional, f64)> = f.global.iter().map(|p| (p, spec.xi_global)).collect();
    for (k, ps) in f.local.iter().enumerate() {
        probes.extend(ps.iter().map(|p| (p, spec.xi_local_for(k))));
    }
    let contrib = |c: usize, j: usize, p: &ProbeFunctional| if p.index.probe_class == j { p.coef[c] } else { 0.0 };

    let mut digits = vec![0usize; cells];
    let mut risk: f64 = (0..cells).map(|c| risk_coef[c * m]).sum();
    let mut values: Vec<f64> = probes.iter().map(|(p, _)| (0..cells).map(|c| contrib(c, 0, p)).sum()).collect();
    let mut feasible = 0u64;
    let mut best_risk = f64::INFINITY;
    let mut best = digits.clone();
    let tol = 1e-12;
    let is_feasible = |values: &[f64]| values.iter().zip(&probes).all(|(v, (_, xi))| v.abs() <= xi + tol);
    for step in 0..total {
        if is_feasible(&values) {
            feasible += 1;
            if risk < best_risk - 1e-15 {
                best_risk = risk;
                best = digits.clone();
            }
        }
        if step + 1 == total {
            break;
        }
        // odometer increment with incremental updates
        let mut c = 0;
        loop {
            let old = digits[c];
            let new = (old + 1) % m;
            digits[c] = new;
            risk += risk_coef[c * m + new] - risk_coef[c * m + old];
            for (v, (p, _)) in values.iter_mut().zip(&probes) {
                *v += contrib(c, new, p) - contrib(c, old, p);
            }
            if new != 0 {
                break;
            }
            c += 1;
        }
    }
    let constants_feasible = (0..m).all(|j| {
        let t = ClassifierTable::deterministic(mode, m, &vec![j; cells]);
        evaluate(instance, spec, &t).map(|e| e.max_violation(spec) <= 1e-12).unwrap_or(false)
    });
    Ok(Enumeration { total, feasible, best_risk, best, constants_feasible })
}

/// Write a randomized table as a mixture of deterministic classifiers by
/// coupling all cells through one uniform draw: on each interval between
/// consecutive cumulative breakpoints every cell picks a fixed class.
pub fn decompose_mixture(table: &ClassifierTable) -> Vec<(f64, Vec<usize>)> {
    let m = table.num_classes;
    let cells = table.num_cells();
    let mut cuts = vec![0.0, 1.0];
    for c in 0..cells {
        let mut acc = 0.0;
        for &p in &table.row(c)[..m - 1] {
            acc += p;
            if acc > 1e-12 && acc < 1.0 - 1e-12 {
                cuts.push(acc);
            }
        }
    }
    cuts.sort_by(f64::total_cmp);
    cuts.dedup_by(|a, b| (*a - *b).abs() <= 1e-12);
    let mut out: Vec<(f64, Vec<usize>)> = Vec::new();
    for w in cuts.windows(2) {
        let width = w[1] - w[0];
        if width <= 1e-12 {
            continue;
        }
        let u = 0.5 * (w[0] + w[1]);
        let assignment: Vec<usize> = (0..cells)
            .map(|c| {
                let mut acc = 0.0;
                for (j, &p) in table.row(c).iter().enumerate() {
                    acc += p;
                    if u < acc {
                        return j;
                    }
                }
                m - 1
            })
            .collect();
        match out.last_mut() {
            Some(last) if last.1 == assignment => last.0 += width,
            _ => out.push((width, assignment)),
        }
    }
    out
}

/// Hard-max dual `H(λ, μ) = Σ_{a,k} p_{a,k} E[max_y (M(a,k)ᵀ η)_y] + ξ^g‖λ‖₁
/// + Σ_k ξ^{l,k}‖μ_k‖₁` on the exact instance.
pub fn dual_value(instance: &DiscreteInstance, spec: &FairnessSpec, dual: &DualState) -> Result<f64> {
    let stats = instance.stats();
    let constraints = ConstraintSet::build(spec, &stats, false)?;
    let calib = build_calibration(dual, &constraints, &stats)?;
    let mut h = spec.xi_global * dual.lambda_norm();
    for k in 0..instance.num_clients {
        h += spec.xi_local_for(k) * dual.mu_norm(k);
        for x in 0..instance.num_points {
            for a in 0..instance.num_groups {
                if let Some(eta) = instance.eta(x, a, k) {
                    let s = calib.calibrated_scores(a, k, &eta);
                    h += instance.mass(x, a, k) * s[argmax(&s)];
                }
            }
        }
    }
    Ok(h)
}
