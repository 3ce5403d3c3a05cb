//! Federated saddle-point training: unified and personalized models trained
//! under dual-calibrated cost rows, with exponentiated ensemble weights and
//! projected dual ascent.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibration::{build_calibration, CalibrationFamily};
use crate::data::FederatedDataset;
use crate::dual::DualState;
use crate::error::{Error, Result};
use crate::fairness::{
    client_disparity, risk_from_confusions, ConfusionSet, ConstraintSet, DisparityReport,
    FairnessSpec, RiskMatrix,
};
use crate::federated::{
    aggregate, client_views, client_weights, initial_model, local_delta, ClientView, FedAvgConfig,
    STREAM_PERSONAL, STREAM_UNIFIED,
};
use crate::model::{argmax, mean_loss, sgd_steps, Architecture, ScoringModel, SgdConfig};
use crate::rng::derive_seed;
use crate::stats::{compute_stats, PopulationStats};

/// Ensemble weights are kept inside `[W_MIN, 1 − W_MIN]`.
pub const W_MIN: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InprocessingConfig {
    pub rounds: usize,
    pub local: SgdConfig,
    pub architecture: Architecture,
    pub lr_dual: f64,
    pub lr_weight: f64,
    pub dual_bound: f64,
    /// Use `lr_dual / sqrt(t + 1)` at round `t`.
    pub decay_dual: bool,
    /// When false the weights stay at exactly 1 and only θ is used.
    pub ensemble: bool,
    pub initial_weight: f64,
    /// Number of final rounds in the mixture classifier.
    pub mixture_window: usize,
    pub drop_degenerate: bool,
    pub seed: u64,
}

impl Default for InprocessingConfig {
    fn default() -> Self {
        Self {
            rounds: 30,
            local: SgdConfig::default(),
            architecture: Architecture::Linear,
            lr_dual: 0.2,
            lr_weight: 0.3,
            dual_bound: 5.0,
            decay_dual: true,
            ensemble: true,
            initial_weight: 0.5,
            mixture_window: 1,
            drop_degenerate: false,
            seed: 0,
        }
    }
}

impl InprocessingConfig {
    /// The FedAvg run that shares this configuration's seeds and schedule.
    pub fn fedavg(&self) -> FedAvgConfig {
        FedAvgConfig { rounds: self.rounds, local: self.local, architecture: self.architecture, seed: self.seed }
    }

    fn validate(&self) -> Result<()> {
        if self.rounds == 0 || self.local.steps == 0 {
            return Err(Error::InvalidArgument("rounds and local steps must be >= 1".into()));
        }
        if !(self.lr_dual > 0.0) || !(self.dual_bound > 0.0) || !(self.lr_weight >= 0.0) {
            return Err(Error::InvalidArgument("dual rate and bound must be positive".into()));
        }
        if !(self.initial_weight > 0.0 && self.initial_weight < 1.0) && self.ensemble {
            return Err(Error::InvalidArgument("initial weight must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

/// `w' = 1 / (1 + ((1−w)/w)·exp(−η_w (L_φ − L_θ)))`, clamped.
pub fn update_weight(w: f64, loss_personal: f64, loss_unified: f64, lr_weight: f64) -> f64 {
    let w = w.clamp(W_MIN, 1.0 - W_MIN);
    let odds = (1.0 - w) / w * (-lr_weight * (loss_personal - loss_unified)).exp();
    (1.0 / (1.0 + odds)).clamp(W_MIN, 1.0 - W_MIN)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleState {
    pub unified: ScoringModel,
    pub personal: Vec<ScoringModel>,
    pub weights: Vec<f64>,
}

impl EnsembleState {
    /// `w_k softmax(s(x;θ)) + (1 − w_k) softmax(s(x;φ_k))`.
    pub fn proba(&self, k: usize, x: &[f64]) -> Vec<f64> {
        let w = self.weights[k];
        let p = self.unified.predict_proba(x);
        let q = self.personal[k].predict_proba(x);
        p.iter().zip(&q).map(|(a, b)| w * a + (1.0 - w) * b).collect()
    }

    pub fn predict(&self, k: usize, x: &[f64]) -> usize {
        argmax(&self.proba(k, x))
    }

    pub fn predict_views(&self, views: &[ClientView]) -> Vec<Vec<usize>> {
        views
            .iter()
            .enumerate()
            .map(|(k, v)| v.inputs.iter().map(|x| self.predict(k, x)).collect())
            .collect()
    }

    pub fn predict_dataset(&self, data: &FederatedDataset) -> Vec<Vec<usize>> {
        self.predict_views(&client_views(data, false))
    }
}

/// Uniform mixture over several per-round classifiers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureClassifier {
    pub members: Vec<EnsembleState>,
}

impl MixtureClassifier {
    /// Probability of each class under a uniformly drawn member.
    pub fn vote_distribution(&self, k: usize, x: &[f64]) -> Vec<f64> {
        let m = self.members[0].unified.num_classes();
        let mut out = vec![0.0; m];
        let share = 1.0 / self.members.len() as f64;
        for h in &self.members {
            out[h.predict(k, x)] += share;
        }
        out
    }

    /// Confusion matrices of the randomized classifier, computed exactly from
    /// the vote distribution rather than by sampling.
    pub fn confusions(&self, data: &FederatedDataset) -> Result<ConfusionSet> {
        let views = client_views(data, false);
        let dists: Vec<Vec<Vec<f64>>> = views
            .iter()
            .enumerate()
            .map(|(k, v)| v.inputs.iter().map(|x| self.vote_distribution(k, x)).collect())
            .collect();
        let rows = data
            .clients()
            .iter()
            .enumerate()
            .flat_map(|(k, shard)| {
                shard.iter().zip(&dists[k]).map(move |(s, d)| (k, s.group, s.label, &d[..], 1.0))
            });
        ConfusionSet::from_weighted(data.num_groups(), data.num_clients(), data.num_classes(), rows)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    pub round: usize,
    /// Training risk of the round's ensemble classifier.
    pub risk: f64,
    pub global_disparities: Vec<f64>,
    pub local_disparities: Vec<Vec<f64>>,
    pub global_max: f64,
    pub local_max: f64,
    pub weights: Vec<f64>,
    pub lambda_norm: f64,
    pub mu_norms: Vec<f64>,
    pub loss_unified: Vec<f64>,
    pub loss_personal: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InprocessingResult {
    /// Classifier after the final round.
    pub state: EnsembleState,
    pub mixture: MixtureClassifier,
    pub dual: DualState,
    pub reports: Vec<RoundReport>,
    /// Empirical Lagrangian gap of the running-average classifier.
    pub gaps: Vec<f64>,
    pub constraints: ConstraintSet,
}

struct ClientRound {
    weight: f64,
    global_signals: Vec<f64>,
    local_signals: Vec<f64>,
    confusions: ConfusionSet,
    loss_unified: f64,
    loss_personal: f64,
    delta: Vec<f64>,
    personal: ScoringModel,
}

#[allow(clippy::too_many_arguments)]
fn client_round(
    k: usize,
    t: usize,
    view: &ClientView,
    data: &FederatedDataset,
    state: &EnsembleState,
    calib: &CalibrationFamily,
    constraints: &ConstraintSet,
    cfg: &InprocessingConfig,
) -> Result<ClientRound> {
    let costs: Vec<&[f64]> = view
        .labels
        .iter()
        .zip(&view.groups)
        .map(|(&y, &a)| calib.cost_row(a, k, y))
        .collect();
    let preds: Vec<usize> = view.inputs.iter().map(|x| state.predict(k, x)).collect();
    let mut confusions = ConfusionSet::empty(data.num_groups(), data.num_clients(), data.num_classes());
    confusions.fill_client(k, data.client(k), &preds)?;
    let global_signals = constraints
        .global
        .iter()
        .map(|c| client_disparity(c, &confusions, k))
        .collect::<Result<Vec<_>>>()?;
    let local_signals = constraints.local[k]
        .iter()
        .map(|c| client_disparity(c, &confusions, k))
        .collect::<Result<Vec<_>>>()?;

    let loss_unified = mean_loss(&state.unified, &view.inputs, &costs);
    let (weight, loss_personal) = if cfg.ensemble {
        let lp = mean_loss(&state.personal[k], &view.inputs, &costs);
        (update_weight(state.weights[k], lp, loss_unified, cfg.lr_weight), lp)
    } else {
        (state.weights[k], f64::NAN)
    };
    if !loss_unified.is_finite() || (cfg.ensemble && !loss_personal.is_finite()) {
        return Err(Error::Numeric(format!("non-finite loss at client {k}, round {t}")));
    }

    let delta = local_delta(
        &state.unified,
        &view.inputs,
        &costs,
        &cfg.local,
        derive_seed(cfg.seed, &[STREAM_UNIFIED, t as u64, k as u64]),
    )?;
    let mut personal = state.personal[k].clone();
    if cfg.ensemble {
        sgd_steps(
            &mut personal,
            &view.inputs,
            &costs,
            &cfg.local,
            derive_seed(cfg.seed, &[STREAM_PERSONAL, t as u64, k as u64]),
        )?;
    }
    Ok(ClientRound {
        weight,
        global_signals,
        local_signals,
        confusions,
        loss_unified,
        loss_personal,
        delta,
        personal,
    })
}

fn merge_confusions(parts: &[ClientRound], na: usize, nk: usize, m: usize) -> ConfusionSet {
    let mut out = ConfusionSet::empty(na, nk, m);
    for (k, part) in parts.iter().enumerate() {
        for a in 0..na {
            out.set(a, k, part.confusions.get(a, k).cloned());
        }
    }
    out
}

/// Max over the dual ball of `Σ_i c_i x_i` with `c = ±d − ξ`.
fn ball_max(disparities: &[f64], xi: f64, bound: f64) -> f64 {
    let worst = disparities.iter().fold(0.0f64, |acc, d| acc.max(d.abs() - xi));
    bound * worst.max(0.0)
}

/// Lagrangian gap `max_{λ,μ} L̂(h̄_t, λ, μ) − min_{h ∈ S} L̂(h, λ̄_t, μ̄_t)` for
/// every prefix `t`, where `h̄_t` and `(λ̄_t, μ̄_t)` are running averages and
/// `S` holds every per-round classifier plus the constant classifiers.
pub fn lagrangian_gaps(
    reports: &[RoundReport],
    duals: &[DualState],
    spec: &FairnessSpec,
    stats: &PopulationStats,
) -> Vec<f64> {
    let bound = duals.first().map(|d| d.bound).unwrap_or(0.0);
    let nk = stats.num_clients();
    let constant_risk = 1.0 - (0..stats.num_classes()).map(|y| stats.p_y(y)).fold(0.0, f64::max);
    let mut gaps = Vec::with_capacity(reports.len());
    let mut avg_risk = 0.0;
    let mut avg_global = vec![0.0; reports.first().map_or(0, |r| r.global_disparities.len())];
    let mut avg_local: Vec<Vec<f64>> = reports.first().map_or(Vec::new(), |r| {
        r.local_disparities.iter().map(|v| vec![0.0; v.len()]).collect()
    });
    let mut avg_dual = duals.first().cloned();
    for (t, report) in reports.iter().enumerate() {
        let n = (t + 1) as f64;
        let blend = |avg: &mut f64, v: f64| *avg += (v - *avg) / n;
        blend(&mut avg_risk, report.risk);
        for (a, &v) in avg_global.iter_mut().zip(&report.global_disparities) {
            blend(a, v);
        }
        for (ak, vk) in avg_local.iter_mut().zip(&report.local_disparities) {
            for (a, &v) in ak.iter_mut().zip(vk) {
                blend(a, v);
            }
        }
        let dual_avg = avg_dual.as_mut().expect("one dual per report");
        if t > 0 {
            for (a, &v) in dual_avg.lambda.iter_mut().zip(&duals[t].lambda) {
                blend(a, v);
            }
            for (ak, vk) in dual_avg.mu.iter_mut().zip(&duals[t].mu) {
                for (a, &v) in ak.iter_mut().zip(vk) {
                    blend(a, v);
                }
            }
        }

        let mut upper = avg_risk + ball_max(&avg_global, spec.xi_global, bound);
        for k in 0..nk {
            upper += ball_max(&avg_local[k], spec.xi_local_for(k), bound);
        }

        let penalty = |r: &RoundReport| -> f64 {
            let mut v = r.risk;
            for (u, d) in r.global_disparities.iter().enumerate() {
                v += dual_avg.lambda_diff(u) * d;
            }
            for k in 0..nk {
                for (u, d) in r.local_disparities[k].iter().enumerate() {
                    v += dual_avg.mu_diff(k, u) * d;
                }
            }
            v
        };
        let lower_core = reports.iter().map(penalty).fold(constant_risk, f64::min);
        let mut slack_terms = spec.xi_global * dual_avg.lambda_norm();
        for k in 0..nk {
            slack_terms += spec.xi_local_for(k) * dual_avg.mu_norm(k);
        }
        gaps.push(upper - (lower_core - slack_terms));
    }
    gaps
}

/// Least-squares slope of `values` over their last quarter.
pub fn last_quarter_slope(values: &[f64]) -> f64 {
    let n = values.len();
    let start = n - (n / 4).max(2).min(n);
    let tail = &values[start..];
    let len = tail.len() as f64;
    if tail.len() < 2 {
        return 0.0;
    }
    let mean_x = (len - 1.0) / 2.0;
    let mean_y = tail.iter().sum::<f64>() / len;
    let (mut num, mut den) = (0.0, 0.0);
    for (i, y) in tail.iter().enumerate() {
        let dx = i as f64 - mean_x;
        num += dx * (y - mean_y);
        den += dx * dx;
    }
    num / den
}

pub fn run_inprocessing(
    data: &FederatedDataset,
    spec: &FairnessSpec,
    cfg: &InprocessingConfig,
) -> Result<InprocessingResult> {
    cfg.validate()?;
    spec.validate()?;
    let (na, nm, nk) = (data.num_groups(), data.num_classes(), data.num_clients());
    let stats = compute_stats(data);
    let constraints = ConstraintSet::build(spec, &stats, cfg.drop_degenerate)?;
    let views = client_views(data, false);
    let p_k = client_weights(&views);
    let local_counts: Vec<usize> = (0..nk).map(|k| constraints.num_local(k)).collect();
    let mut dual = DualState::zeros(constraints.num_global(), &local_counts, cfg.dual_bound);
    let risk_matrix = RiskMatrix::classification_error(nm);

    let unified = initial_model(&cfg.fedavg(), data.dim(), nm);
    let personal = (0..nk)
        .map(|k| ScoringModel::init(cfg.architecture, data.dim(), nm, derive_seed(cfg.seed, &[STREAM_PERSONAL, u64::MAX, k as u64])))
        .collect();
    let w0 = if cfg.ensemble { cfg.initial_weight } else { 1.0 };
    let mut state = EnsembleState { unified, personal, weights: vec![w0; nk] };

    let mut reports = Vec::with_capacity(cfg.rounds);
    let mut duals = Vec::with_capacity(cfg.rounds);
    let window = cfg.mixture_window.clamp(1, cfg.rounds);
    let mut members = Vec::with_capacity(window);

    for t in 0..cfg.rounds {
        let calib = build_calibration(&dual, &constraints, &stats)?;
        let parts = views
            .par_iter()
            .enumerate()
            .map(|(k, view)| client_round(k, t, view, data, &state, &calib, &constraints, cfg))
            .collect::<Result<Vec<_>>>()?;

        let confusions = merge_confusions(&parts, na, nk, nm);
        let risk = risk_from_confusions(&confusions, &stats, &risk_matrix);
        let mut global = vec![0.0; constraints.num_global()];
        for part in &parts {
            for (g, s) in global.iter_mut().zip(&part.global_signals) {
                *g += s;
            }
        }
        let local: Vec<Vec<f64>> = parts.iter().map(|p| p.local_signals.clone()).collect();
        duals.push(dual.clone());

        let step = if cfg.decay_dual { cfg.lr_dual / ((t + 1) as f64).sqrt() } else { cfg.lr_dual };
        DualState::ascend(&mut dual.lambda, &global, spec.xi_global, step, cfg.dual_bound);
        for (k, signals) in local.iter().enumerate() {
            DualState::ascend(&mut dual.mu[k], signals, spec.xi_local_for(k), step, cfg.dual_bound);
        }
        dual.check_feasible(1e-9)?;

        let metrics = DisparityReport::compute(&constraints, &confusions, spec.criterion)?;
        let loss_unified = parts.iter().map(|p| p.loss_unified).collect();
        let loss_personal = parts.iter().map(|p| p.loss_personal).collect();
        let deltas: Vec<Vec<f64>> = parts.iter().map(|p| p.delta.clone()).collect();
        aggregate(state.unified.params_mut(), &deltas, &p_k);
        for (k, part) in parts.into_iter().enumerate() {
            state.weights[k] = part.weight;
            state.personal[k] = part.personal;
        }

        reports.push(RoundReport {
            round: t,
            risk,
            global_max: metrics.global_max,
            local_max: metrics.local_max,
            global_disparities: global,
            local_disparities: local,
            weights: state.weights.clone(),
            lambda_norm: dual.lambda_norm(),
            mu_norms: (0..nk).map(|k| dual.mu_norm(k)).collect(),
            loss_unified,
            loss_personal,
        });
        if t + window >= cfg.rounds {
            members.push(state.clone());
        }
    }
    let gaps = lagrangian_gaps(&reports, &duals, spec, &stats);
    Ok(InprocessingResult {
        state,
        mixture: MixtureClassifier { members },
        dual,
        reports,
        gaps,
        constraints,
    })
}
