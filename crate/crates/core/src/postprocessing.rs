//! Label-free post-hoc calibration of plug-in class probabilities by
//! federated bi-level descent on the smoothed dual.

use std::path::Path;

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibration::{build_calibration, CalibrationFamily};
use crate::data::FederatedDataset;
use crate::dual::{project_nonneg_l1_ball, DualState};
use crate::error::{Error, Result};
use crate::fairness::{ConfusionSet, ConstraintSet, FairnessSpec};
use crate::federated::{client_views, predict_views, run_fedavg, FedAvgConfig};
use crate::model::{softmax, ScoringModel};
use crate::rng;
use crate::stats::PopulationStats;

pub const DEFAULT_BETA: f64 = 0.1;
pub const DEFAULT_DUAL_BOUND: f64 = 5.0;
const SIMPLEX_TOL: f64 = 1e-9;

/// `Σ_i softmax(v/β)_i v_i`.
pub fn sigma_beta(v: &[f64], beta: f64) -> f64 {
    let s = softmax(&v.iter().map(|x| x / beta).collect::<Vec<_>>());
    s.iter().zip(v).map(|(a, b)| a * b).sum()
}

/// Value and gradient of `σ_β`: `∂σ/∂v_j = s_j (1 + (v_j − σ)/β)`.
pub fn sigma_beta_grad(v: &[f64], beta: f64) -> (f64, Vec<f64>) {
    let s = softmax(&v.iter().map(|x| x / beta).collect::<Vec<_>>());
    let sigma: f64 = s.iter().zip(v).map(|(a, b)| a * b).sum();
    let grad = s.iter().zip(v).map(|(sj, vj)| sj * (1.0 + (vj - sigma) / beta)).collect();
    (sigma, grad)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub eta: Vec<f64>,
    pub group: usize,
    /// Kept for evaluation; calibration never reads it.
    pub label: Option<usize>,
    pub weight: f64,
}

/// Per-client plug-in estimates `η̂(x, a, k)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PluginScores {
    pub num_classes: usize,
    pub num_groups: usize,
    pub clients: Vec<Vec<ScoreRow>>,
}

impl PluginScores {
    pub fn new(num_classes: usize, num_groups: usize, clients: Vec<Vec<ScoreRow>>) -> Result<Self> {
        if clients.is_empty() || clients.iter().any(Vec::is_empty) {
            return Err(Error::Empty("every client needs at least one score row".into()));
        }
        for (k, rows) in clients.iter().enumerate() {
            for (i, r) in rows.iter().enumerate() {
                let at = || format!("client {k}, row {i}");
                if r.eta.len() != num_classes {
                    return Err(Error::DimensionMismatch { expected: num_classes, got: r.eta.len() });
                }
                let total: f64 = r.eta.iter().sum();
                if r.eta.iter().any(|&p| !(p >= 0.0)) || (total - 1.0).abs() > SIMPLEX_TOL {
                    return Err(Error::InvalidArgument(format!("{}: scores are not a probability vector", at())));
                }
                if r.group >= num_groups || r.label.is_some_and(|y| y >= num_classes) {
                    return Err(Error::InvalidArgument(format!("{}: group or label out of range", at())));
                }
                if !(r.weight > 0.0 && r.weight.is_finite()) {
                    return Err(Error::InvalidArgument(format!("{}: weight must be positive", at())));
                }
            }
        }
        Ok(Self { num_classes, num_groups, clients })
    }

    pub fn num_clients(&self) -> usize {
        self.clients.len()
    }

    /// Client masses `p̂_k` from the row weights.
    pub fn client_mass(&self) -> Vec<f64> {
        let per: Vec<f64> = self.clients.iter().map(|c| c.iter().map(|r| r.weight).sum()).collect();
        let total: f64 = per.iter().sum();
        per.into_iter().map(|w| w / total).collect()
    }

    /// Softmax outputs of an attribute-aware model on `data`.
    pub fn from_model(model: &ScoringModel, data: &FederatedDataset) -> Result<Self> {
        let views = client_views(data, true);
        let clients = views
            .iter()
            .map(|v| {
                v.inputs
                    .iter()
                    .zip(v.labels.iter().zip(&v.groups))
                    .map(|(x, (&y, &a))| ScoreRow { eta: model.predict_proba(x), group: a, label: Some(y), weight: 1.0 })
                    .collect()
            })
            .collect();
        Self::new(data.num_classes(), data.num_groups(), clients)
    }

    /// Population statistics from labelled rows.
    pub fn label_stats(&self) -> Result<PopulationStats> {
        let (na, nm, nk) = (self.num_groups, self.num_classes, self.num_clients());
        let mut mass = vec![0.0; na * nm * nk];
        for (k, rows) in self.clients.iter().enumerate() {
            for r in rows {
                let y = r.label.ok_or_else(|| Error::InvalidArgument("statistics need labelled rows".into()))?;
                mass[(r.group * nm + y) * nk + k] += r.weight;
            }
        }
        PopulationStats::from_masses(na, nm, nk, mass)
    }

    /// Add `U(−amplitude, amplitude)` noise to every probability and
    /// renormalize.
    pub fn jitter(&self, amplitude: f64, seed: u64) -> Self {
        self.expand_jitter(1, amplitude, seed)
    }

    /// Replace every row with `copies` jittered rows of weight `w / copies`.
    /// Ties at decision boundaries then split fractionally, which lets a
    /// deterministic rule approximate a randomized one on atoms.
    pub fn expand_jitter(&self, copies: usize, amplitude: f64, seed: u64) -> Self {
        let copies = copies.max(1);
        let clients = self
            .clients
            .iter()
            .enumerate()
            .map(|(k, rows)| {
                let mut rng = rng::rng_at(seed, &[0x717, k as u64]);
                rows.iter()
                    .flat_map(|r| {
                        (0..copies)
                            .map(|_| {
                                let noisy: Vec<f64> = r
                                    .eta
                                    .iter()
                                    .map(|p| (p + rng.random_range(-amplitude..=amplitude)).max(0.0))
                                    .collect();
                                let z: f64 = noisy.iter().sum();
                                let eta = if z > 0.0 { noisy.iter().map(|p| p / z).collect() } else { r.eta.clone() };
                                ScoreRow { eta, group: r.group, label: r.label, weight: r.weight / copies as f64 }
                            })
                            .collect::<Vec<_>>()
                    })
                    .collect()
            })
            .collect();
        Self { num_classes: self.num_classes, num_groups: self.num_groups, clients }
    }

    /// CSV with header `client,group,p0..p{m-1}[,label][,weight]`.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
        let mut header = vec!["client".to_string(), "group".to_string()];
        header.extend((0..self.num_classes).map(|j| format!("p{j}")));
        header.push("label".into());
        header.push("weight".into());
        w.write_record(&header).map_err(csv_err)?;
        for (k, rows) in self.clients.iter().enumerate() {
            for r in rows {
                let mut rec = vec![k.to_string(), r.group.to_string()];
                rec.extend(r.eta.iter().map(|p| format!("{p:.16e}")));
                rec.push(r.label.map(|y| y.to_string()).unwrap_or_default());
                rec.push(format!("{:.16e}", r.weight));
                w.write_record(&rec).map_err(csv_err)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: std::io::Read>(reader: R, num_groups: Option<usize>) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let header = rdr.headers().map_err(csv_err)?.clone();
        let col = |name: &str| header.iter().position(|h| h == name);
        let client_col = col("client").ok_or_else(|| Error::Schema("missing `client` column".into()))?;
        let group_col = col("group").ok_or_else(|| Error::Schema("missing `group` column".into()))?;
        let prob_cols: Vec<usize> = (0..).map_while(|j| col(&format!("p{j}"))).collect();
        if prob_cols.len() < 2 {
            return Err(Error::Schema("need at least columns p0 and p1".into()));
        }
        let label_col = col("label");
        let weight_col = col("weight");
        let mut clients: Vec<Vec<ScoreRow>> = Vec::new();
        let mut max_group = 0;
        for (i, rec) in rdr.records().enumerate() {
            let row = i + 2;
            let rec = rec.map_err(|e| Error::Csv { row, message: e.to_string() })?;
            let field = |c: usize| rec.get(c).unwrap_or("").trim();
            let parse_usize = |c: usize| {
                field(c).parse::<usize>().map_err(|_| Error::Csv { row, message: format!("bad integer `{}`", field(c)) })
            };
            let parse_f64 = |c: usize| {
                field(c).parse::<f64>().map_err(|_| Error::Csv { row, message: format!("bad number `{}`", field(c)) })
            };
            let k = parse_usize(client_col)?;
            let group = parse_usize(group_col)?;
            max_group = max_group.max(group);
            let eta = prob_cols.iter().map(|&c| parse_f64(c)).collect::<Result<Vec<_>>>()?;
            let total: f64 = eta.iter().sum();
            if eta.iter().any(|&p| !(p >= 0.0)) || (total - 1.0).abs() > SIMPLEX_TOL {
                return Err(Error::Csv { row, message: "scores are not a probability vector".into() });
            }
            let label = match label_col {
                Some(c) if !field(c).is_empty() => Some(parse_usize(c)?),
                _ => None,
            };
            let weight = match weight_col {
                Some(c) if !field(c).is_empty() => parse_f64(c)?,
                _ => 1.0,
            };
            if clients.len() <= k {
                clients.resize_with(k + 1, Vec::new);
            }
            clients[k].push(ScoreRow { eta, group, label, weight });
        }
        if clients.is_empty() {
            return Err(Error::Empty("score file has no rows".into()));
        }
        Self::new(prob_cols.len(), num_groups.unwrap_or(max_group + 1), clients)
    }

    pub fn load_csv(path: impl AsRef<Path>, num_groups: Option<usize>) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?, num_groups)
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Csv { row: e.position().map_or(0, |p| p.line() as usize), message: e.to_string() }
}

/// Train an attribute-aware model `(x ⊕ onehot(a))` with FedAvg and return it
/// with its scores on `data`.
pub fn pretrain_plugin(data: &FederatedDataset, cfg: &FedAvgConfig) -> Result<(ScoringModel, PluginScores)> {
    let views = client_views(data, true);
    let model = run_fedavg(&views, data.num_classes(), cfg)?;
    if model.params().iter().any(|p| !p.is_finite()) {
        return Err(Error::Numeric("plug-in training diverged".into()));
    }
    let scores = PluginScores::from_model(&model, data)?;
    Ok((model, scores))
}

/// Accuracy of the plug-in argmax on labelled `data`.
pub fn plugin_accuracy(model: &ScoringModel, data: &FederatedDataset) -> f64 {
    crate::fairness::accuracy(data, &predict_views(model, &client_views(data, true)))
}

struct ClientObjective {
    /// Row weights normalized within the client.
    weights: Vec<f64>,
    etas: Vec<Vec<f64>>,
    /// `c[i][u] = <column of D^{a_i,k}_u, η_i> / p_{a_i,k}` for global probes.
    cg: Vec<Vec<f64>>,
    cl: Vec<Vec<f64>>,
    xi_local_scaled: f64,
}

/// `Ĥ'_k(λ, μ_k)` for every client, with `σ_β` in place of the hard max.
pub struct RelaxedObjective {
    pub beta: f64,
    pub xi_global: f64,
    global_cols: Vec<usize>,
    local_cols: Vec<Vec<usize>>,
    clients: Vec<ClientObjective>,
    client_mass: Vec<f64>,
}

fn inner_column(values: &[f64], eta: &[f64]) -> f64 {
    values.iter().zip(eta).map(|(d, e)| d * e).sum()
}

impl RelaxedObjective {
    pub fn new(
        scores: &PluginScores,
        constraints: &ConstraintSet,
        stats: &PopulationStats,
        spec: &FairnessSpec,
        beta: f64,
    ) -> Result<Self> {
        if !(beta > 0.0) {
            return Err(Error::InvalidArgument("temperature must be positive".into()));
        }
        let nk = scores.num_clients();
        if stats.num_clients() != nk || stats.num_classes() != scores.num_classes || stats.num_groups() != scores.num_groups {
            return Err(Error::InvalidArgument("statistics do not match the score layout".into()));
        }
        let client_mass = scores.client_mass();
        let mut clients = Vec::with_capacity(nk);
        for (k, rows) in scores.clients.iter().enumerate() {
            let total: f64 = rows.iter().map(|r| r.weight).sum();
            let mut cg = Vec::with_capacity(rows.len());
            let mut cl = Vec::with_capacity(rows.len());
            for r in rows {
                let p = stats.p_ak(r.group, k);
                let touches = constraints.global.iter().any(|c| !c.cell_is_zero(r.group, k))
                    || constraints.local[k].iter().any(|c| !c.cell_is_zero(r.group, k));
                if p <= 0.0 && touches {
                    return Err(Error::EmptyCell { group: r.group, client: k });
                }
                let coef = |c: &crate::fairness::ConstraintMatrix| {
                    if p > 0.0 {
                        inner_column(c.cell(r.group, k), &r.eta) / p
                    } else {
                        0.0
                    }
                };
                cg.push(constraints.global.iter().map(coef).collect());
                cl.push(constraints.local[k].iter().map(coef).collect());
            }
            let pk = stats.p_k(k);
            if pk <= 0.0 {
                return Err(Error::Empty(format!("client {k} has zero mass")));
            }
            clients.push(ClientObjective {
                weights: rows.iter().map(|r| r.weight / total).collect(),
                etas: rows.iter().map(|r| r.eta.clone()).collect(),
                cg,
                cl,
                xi_local_scaled: spec.xi_local_for(k) / pk,
            });
        }
        Ok(Self {
            beta,
            xi_global: spec.xi_global,
            global_cols: constraints.global.iter().map(|c| c.column()).collect(),
            local_cols: constraints.local.iter().map(|cs| cs.iter().map(|c| c.column()).collect()).collect(),
            clients,
            client_mass,
        })
    }

    pub fn num_clients(&self) -> usize {
        self.clients.len()
    }

    pub fn client_mass(&self) -> &[f64] {
        &self.client_mass
    }

    fn calibrated(&self, k: usize, i: usize, lambda: &[f64], mu: &[f64]) -> Vec<f64> {
        let c = &self.clients[k];
        let ng = self.global_cols.len();
        let nl = self.local_cols[k].len();
        let mut v = c.etas[i].clone();
        for (u, &col) in self.global_cols.iter().enumerate() {
            v[col] -= (lambda[u] - lambda[ng + u]) * c.cg[i][u];
        }
        for (u, &col) in self.local_cols[k].iter().enumerate() {
            v[col] -= (mu[u] - mu[nl + u]) * c.cl[i][u];
        }
        v
    }

    pub fn local_value(&self, k: usize, lambda: &[f64], mu: &[f64]) -> f64 {
        let c = &self.clients[k];
        let smooth: f64 = (0..c.etas.len())
            .map(|i| c.weights[i] * sigma_beta(&self.calibrated(k, i, lambda, mu), self.beta))
            .sum();
        smooth + self.xi_global * lambda.iter().sum::<f64>() + c.xi_local_scaled * mu.iter().sum::<f64>()
    }

    /// Value, `∇_λ`, `∇_{μ_k}`.
    pub fn local_gradient(&self, k: usize, lambda: &[f64], mu: &[f64]) -> (f64, Vec<f64>, Vec<f64>) {
        let c = &self.clients[k];
        let ng = self.global_cols.len();
        let nl = self.local_cols[k].len();
        let mut gl = vec![0.0; 2 * ng];
        let mut gm = vec![0.0; 2 * nl];
        let mut value = 0.0;
        for i in 0..c.etas.len() {
            let (s, g) = sigma_beta_grad(&self.calibrated(k, i, lambda, mu), self.beta);
            let w = c.weights[i];
            value += w * s;
            for (u, &col) in self.global_cols.iter().enumerate() {
                let d = w * g[col] * c.cg[i][u];
                gl[u] -= d;
                gl[ng + u] += d;
            }
            for (u, &col) in self.local_cols[k].iter().enumerate() {
                let d = w * g[col] * c.cl[i][u];
                gm[u] -= d;
                gm[nl + u] += d;
            }
        }
        gl.iter_mut().for_each(|x| *x += self.xi_global);
        gm.iter_mut().for_each(|x| *x += c.xi_local_scaled);
        value += self.xi_global * lambda.iter().sum::<f64>() + c.xi_local_scaled * mu.iter().sum::<f64>();
        (value, gl, gm)
    }

    /// `Σ_k p̂_k Ĥ'_k(λ, μ_k)`.
    pub fn total(&self, dual: &DualState) -> f64 {
        (0..self.num_clients())
            .map(|k| self.client_mass[k] * self.local_value(k, &dual.lambda, &dual.mu[k]))
            .sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum StepRule {
    /// Every projected step uses the configured rate.
    Fixed,
    /// Start each step at the configured rate and halve until the projected
    /// step gives sufficient decrease. Makes the objective trajectory monotone.
    #[default]
    Backtracking,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PostprocessingConfig {
    pub rounds: usize,
    pub local_rounds: usize,
    pub lr_dual: f64,
    pub beta: f64,
    pub dual_bound: f64,
    #[serde(default)]
    pub step_rule: StepRule,
    #[serde(default)]
    pub drop_degenerate: bool,
}

impl Default for PostprocessingConfig {
    fn default() -> Self {
        Self {
            rounds: 50,
            local_rounds: 5,
            lr_dual: 0.05,
            beta: DEFAULT_BETA,
            dual_bound: DEFAULT_DUAL_BOUND,
            step_rule: StepRule::Backtracking,
            drop_degenerate: false,
        }
    }
}

const MAX_HALVINGS: usize = 60;

/// One projected-gradient step on `x`; with backtracking the step is halved
/// until `f(x') <= f(x) + <g, x'−x> + |x'−x|² / (2s)`.
fn projected_step(
    x: &[f64],
    grad: &[f64],
    fx: f64,
    rate: f64,
    bound: f64,
    rule: StepRule,
    f: impl Fn(&[f64]) -> f64,
) -> Vec<f64> {
    let trial = |s: f64| {
        let mut y: Vec<f64> = x.iter().zip(grad).map(|(a, g)| a - s * g).collect();
        project_nonneg_l1_ball(&mut y, bound);
        y
    };
    match rule {
        StepRule::Fixed => trial(rate),
        StepRule::Backtracking => {
            let mut s = rate;
            for _ in 0..MAX_HALVINGS {
                let y = trial(s);
                let mut lin = 0.0;
                let mut sq = 0.0;
                for ((yi, xi), gi) in y.iter().zip(x).zip(grad) {
                    lin += gi * (yi - xi);
                    sq += (yi - xi) * (yi - xi);
                }
                if sq == 0.0 || f(&y) <= fx + lin + sq / (2.0 * s) {
                    return y;
                }
                s *= 0.5;
            }
            x.to_vec()
        }
    }
}

/// Final duals plus everything needed to reproduce predictions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibratedClassifier {
    pub dual: DualState,
    pub stats: PopulationStats,
    pub constraints: ConstraintSet,
    pub calibration: CalibrationFamily,
}

impl CalibratedClassifier {
    pub fn new(dual: DualState, stats: PopulationStats, constraints: ConstraintSet) -> Result<Self> {
        let calibration = build_calibration(&dual, &constraints, &stats)?;
        Ok(Self { dual, stats, constraints, calibration })
    }

    /// `argmax_j (M(a,k)ᵀ η̂)_j`.
    pub fn predict(&self, eta: &[f64], group: usize, client: usize) -> usize {
        self.calibration.predict(group, client, eta)
    }

    pub fn predict_scores(&self, scores: &PluginScores) -> Vec<Vec<usize>> {
        scores
            .clients
            .iter()
            .enumerate()
            .map(|(k, rows)| rows.iter().map(|r| self.predict(&r.eta, r.group, k)).collect())
            .collect()
    }

    /// Weighted confusion matrices of the predictions on labelled scores.
    pub fn confusions(&self, scores: &PluginScores) -> Result<ConfusionSet> {
        let preds = self.predict_scores(scores);
        let m = scores.num_classes;
        let eye: Vec<Vec<f64>> = crate::federated::identity_rows(m);
        let mut rows = Vec::new();
        for (k, client) in scores.clients.iter().enumerate() {
            for (r, &p) in client.iter().zip(&preds[k]) {
                let y = r.label.ok_or_else(|| Error::InvalidArgument("evaluation needs labels".into()))?;
                rows.push((k, r.group, y, &eye[p][..], r.weight));
            }
        }
        ConfusionSet::from_weighted(scores.num_groups, scores.num_clients(), m, rows)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PostprocessingResult {
    pub classifier: CalibratedClassifier,
    /// `Σ_k p̂_k Ĥ'_k(λ^t, μ^t)` for `t = 0..=T`.
    pub trajectory: Vec<f64>,
}

pub fn run_postprocessing(
    scores: &PluginScores,
    stats: &PopulationStats,
    spec: &FairnessSpec,
    cfg: &PostprocessingConfig,
) -> Result<PostprocessingResult> {
    spec.validate()?;
    if !(cfg.lr_dual > 0.0) || !(cfg.dual_bound > 0.0) {
        return Err(Error::InvalidArgument("dual rate and bound must be positive".into()));
    }
    let constraints = ConstraintSet::build(spec, stats, cfg.drop_degenerate)?;
    let objective = RelaxedObjective::new(scores, &constraints, stats, spec, cfg.beta)?;
    let nk = scores.num_clients();
    let local_counts: Vec<usize> = (0..nk).map(|k| constraints.num_local(k)).collect();
    let mut dual = DualState::zeros(constraints.num_global(), &local_counts, cfg.dual_bound);
    let mut trajectory = vec![objective.total(&dual)];

    for _t in 0..cfg.rounds {
        let lambda = dual.lambda.clone();
        let updates: Vec<(Vec<f64>, Vec<f64>)> = (0..nk)
            .into_par_iter()
            .map(|k| {
                let mut mu = dual.mu[k].clone();
                if !mu.is_empty() {
                    for _ in 0..cfg.local_rounds {
                        let (v, _, gm) = objective.local_gradient(k, &lambda, &mu);
                        mu = projected_step(&mu, &gm, v, cfg.lr_dual, cfg.dual_bound, cfg.step_rule, |m| {
                            objective.local_value(k, &lambda, m)
                        });
                    }
                }
                let (_, gl, _) = objective.local_gradient(k, &lambda, &mu);
                (mu, gl)
            })
            .collect();
        let mut grad = vec![0.0; lambda.len()];
        for (k, (mu, gl)) in updates.into_iter().enumerate() {
            dual.mu[k] = mu;
            for (g, v) in grad.iter_mut().zip(&gl) {
                *g += objective.client_mass()[k] * v;
            }
        }
        if !lambda.is_empty() {
            let server_value = |l: &[f64]| -> f64 {
                (0..nk).map(|k| objective.client_mass()[k] * objective.local_value(k, l, &dual.mu[k])).sum()
            };
            let fx = server_value(&lambda);
            dual.lambda = projected_step(&lambda, &grad, fx, cfg.lr_dual, cfg.dual_bound, cfg.step_rule, server_value);
        }
        dual.check_feasible(1e-9)?;
        let f = objective.total(&dual);
        if !f.is_finite() {
            return Err(Error::Numeric("post-processing objective is not finite".into()));
        }
        trajectory.push(f);
    }
    let classifier = CalibratedClassifier::new(dual, stats.clone(), constraints)?;
    Ok(PostprocessingResult { classifier, trajectory })
}

/// Rounds until the trajectory stays within `rel` of its final value.
pub fn rounds_to_converge(trajectory: &[f64], rel: f64) -> usize {
    let last = *trajectory.last().unwrap_or(&0.0);
    let tol = rel * last.abs();
    let mut t = trajectory.len();
    while t > 0 && (trajectory[t - 1] - last).abs() <= tol {
        t -= 1;
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fairness::Criterion;
    use crate::model::argmax;
    use proptest::prelude::*;

    #[test]
    fn sigma_of_constant_vector_is_that_constant() {
        assert!((sigma_beta(&[0.25; 4], 0.1) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn score_validation_rejects_non_simplex_rows() {
        let bad = vec![vec![ScoreRow { eta: vec![0.7, 0.4], group: 0, label: None, weight: 1.0 }]];
        assert!(PluginScores::new(2, 1, bad).is_err());
        let csv = "client,group,p0,p1\n0,0,0.5,0.6\n";
        assert!(matches!(PluginScores::read_csv(csv.as_bytes(), None), Err(Error::Csv { row: 2, .. })));
    }

    #[test]
    fn score_csv_round_trip() {
        let scores = PluginScores::new(
            2,
            2,
            vec![
                vec![ScoreRow { eta: vec![0.1, 0.9], group: 1, label: Some(1), weight: 1.0 }],
                vec![ScoreRow { eta: vec![0.3, 0.7], group: 0, label: None, weight: 2.5 }],
            ],
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        scores.write_csv(&path).unwrap();
        assert_eq!(PluginScores::load_csv(&path, Some(2)).unwrap(), scores);
    }

    fn toy_scores() -> (PluginScores, PopulationStats) {
        let mut clients = Vec::new();
        for k in 0..2 {
            let mut rows = Vec::new();
            for i in 0..20 {
                let p = 0.05 + 0.9 * (i as f64 / 19.0);
                let group = (i + k) % 2;
                let label = usize::from(p + 0.1 * group as f64 > 0.5);
                rows.push(ScoreRow { eta: vec![1.0 - p, p], group, label: Some(label), weight: 1.0 });
            }
            clients.push(rows);
        }
        let scores = PluginScores::new(2, 2, clients).unwrap();
        let stats = scores.label_stats().unwrap();
        (scores, stats)
    }

    #[test]
    fn zero_duals_objective_is_mean_sigma() {
        let (scores, stats) = toy_scores();
        let spec = FairnessSpec::new(Criterion::Dp, 0.01, 0.01, Default::default());
        let set = ConstraintSet::build(&spec, &stats, false).unwrap();
        let obj = RelaxedObjective::new(&scores, &set, &stats, &spec, 0.1).unwrap();
        let dual = DualState::zeros(set.num_global(), &[set.num_local(0), set.num_local(1)], 5.0);
        let direct: f64 = (0..2)
            .map(|k| {
                0.5 * scores.clients[k].iter().map(|r| sigma_beta(&r.eta, 0.1)).sum::<f64>() / 20.0
            })
            .sum();
        assert!((obj.total(&dual) - direct).abs() < 1e-12);
        // the ξ^g term contributes exactly ξ^g to each λ partial derivative
        let (_, g0, _) = obj.local_gradient(0, &dual.lambda, &dual.mu[0]);
        let spec_hi = FairnessSpec::new(Criterion::Dp, 0.31, 0.01, Default::default());
        let obj_hi = RelaxedObjective::new(&scores, &set, &stats, &spec_hi, 0.1).unwrap();
        let (_, g1, _) = obj_hi.local_gradient(0, &dual.lambda, &dual.mu[0]);
        for (a, b) in g0.iter().zip(&g1) {
            assert!((b - a - 0.3).abs() < 1e-12);
        }
    }

    #[test]
    fn vacuous_slacks_keep_plain_argmax() {
        let (scores, stats) = toy_scores();
        let spec = FairnessSpec::new(Criterion::Dp, 1.0, 1.0, Default::default());
        let out = run_postprocessing(&scores, &stats, &spec, &PostprocessingConfig::default()).unwrap();
        assert!(out.classifier.dual.is_zero());
        for (k, rows) in scores.clients.iter().enumerate() {
            for r in rows {
                assert_eq!(out.classifier.predict(&r.eta, r.group, k), argmax(&r.eta));
            }
        }
    }

    #[test]
    fn predictions_ignore_labels() {
        let (scores, stats) = toy_scores();
        let spec = FairnessSpec::new(Criterion::Dp, 0.0, 0.0, Default::default());
        let out = run_postprocessing(&scores, &stats, &spec, &PostprocessingConfig::default()).unwrap();
        let mut relabelled = scores.clone();
        for rows in &mut relabelled.clients {
            for r in rows.iter_mut() {
                r.label = r.label.map(|y| 1 - y);
            }
        }
        assert_eq!(out.classifier.predict_scores(&scores), out.classifier.predict_scores(&relabelled));
        let back = CalibratedClassifier::from_json(&out.classifier.to_json().unwrap()).unwrap();
        assert_eq!(back.predict_scores(&scores), out.classifier.predict_scores(&scores));
        assert_eq!(back, out.classifier);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(300))]

        #[test]
        fn sigma_sandwich(v in prop::collection::vec(-5.0f64..5.0, 1..8), beta in 0.001f64..2.0) {
            let s = sigma_beta(&v, beta);
            let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let m = v.len() as f64;
            prop_assert!(s <= max + 1e-12);
            prop_assert!(max <= s + beta * m.ln() + 1e-12);
        }
    }
}
