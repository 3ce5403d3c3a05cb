//! Round-based FedAvg simulation shared by the baseline, plug-in
//! pre-training and the unified model of in-processing.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::FederatedDataset;
use crate::error::{Error, Result};
use crate::model::{sgd_steps, Architecture, ScoringModel, SgdConfig};
use crate::rng::derive_seed;

pub const STREAM_INIT: u64 = 0x1417;
pub const STREAM_UNIFIED: u64 = 0x7e7a;
pub const STREAM_PERSONAL: u64 = 0x9e55;

/// Model-ready view of one client shard.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientView {
    pub inputs: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub groups: Vec<usize>,
}

/// Inputs are the raw features, or features followed by a one-hot group
/// encoding when `attribute_aware`.
pub fn client_views(data: &FederatedDataset, attribute_aware: bool) -> Vec<ClientView> {
    let na = data.num_groups();
    data.clients()
        .iter()
        .map(|shard| ClientView {
            inputs: shard
                .iter()
                .map(|s| {
                    let mut x = s.features.clone();
                    if attribute_aware {
                        x.extend((0..na).map(|a| if a == s.group { 1.0 } else { 0.0 }));
                    }
                    x
                })
                .collect(),
            labels: shard.iter().map(|s| s.label).collect(),
            groups: shard.iter().map(|s| s.group).collect(),
        })
        .collect()
}

pub fn client_weights(views: &[ClientView]) -> Vec<f64> {
    let n: usize = views.iter().map(|v| v.inputs.len()).sum();
    views.iter().map(|v| v.inputs.len() as f64 / n as f64).collect()
}

/// `θ += Σ_k p_k Δθ_k`, reduced in client order.
pub fn aggregate(global: &mut [f64], deltas: &[Vec<f64>], weights: &[f64]) {
    let mut update = vec![0.0; global.len()];
    for (delta, &w) in deltas.iter().zip(weights) {
        for (u, d) in update.iter_mut().zip(delta) {
            *u += w * d;
        }
    }
    for (g, u) in global.iter_mut().zip(&update) {
        *g += u;
    }
}

/// Train a copy of `global` on one client and return the parameter delta.
pub fn local_delta(
    global: &ScoringModel,
    inputs: &[Vec<f64>],
    costs: &[&[f64]],
    cfg: &SgdConfig,
    seed: u64,
) -> Result<Vec<f64>> {
    let mut local = global.clone();
    sgd_steps(&mut local, inputs, costs, cfg, seed)?;
    Ok(local.params().iter().zip(global.params()).map(|(a, b)| a - b).collect())
}

pub fn identity_rows(m: usize) -> Vec<Vec<f64>> {
    (0..m).map(|y| (0..m).map(|j| if j == y { 1.0 } else { 0.0 }).collect()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FedAvgConfig {
    pub rounds: usize,
    pub local: SgdConfig,
    pub architecture: Architecture,
    pub seed: u64,
}

impl Default for FedAvgConfig {
    fn default() -> Self {
        Self { rounds: 30, local: SgdConfig::default(), architecture: Architecture::Linear, seed: 0 }
    }
}

pub fn initial_model(cfg: &FedAvgConfig, input_dim: usize, num_classes: usize) -> ScoringModel {
    ScoringModel::init(cfg.architecture, input_dim, num_classes, derive_seed(cfg.seed, &[STREAM_INIT]))
}

/// Plain FedAvg with cross-entropy. Returns the model after every round.
pub fn run_fedavg_trajectory(views: &[ClientView], num_classes: usize, cfg: &FedAvgConfig) -> Result<Vec<ScoringModel>> {
    let dim = views
        .first()
        .and_then(|v| v.inputs.first())
        .map(Vec::len)
        .ok_or_else(|| Error::Empty("no clients".into()))?;
    let weights = client_weights(views);
    let eye = identity_rows(num_classes);
    let costs: Vec<Vec<&[f64]>> =
        views.iter().map(|v| v.labels.iter().map(|&y| &eye[y][..]).collect()).collect();
    let mut model = initial_model(cfg, dim, num_classes);
    let mut out = Vec::with_capacity(cfg.rounds);
    for t in 0..cfg.rounds {
        let deltas = views
            .par_iter()
            .zip(&costs)
            .enumerate()
            .map(|(k, (view, c))| {
                let seed = derive_seed(cfg.seed, &[STREAM_UNIFIED, t as u64, k as u64]);
                local_delta(&model, &view.inputs, c, &cfg.local, seed)
            })
            .collect::<Result<Vec<_>>>()?;
        aggregate(model.params_mut(), &deltas, &weights);
        out.push(model.clone());
    }
    Ok(out)
}

pub fn run_fedavg(views: &[ClientView], num_classes: usize, cfg: &FedAvgConfig) -> Result<ScoringModel> {
    if cfg.rounds == 0 {
        let dim = views.first().and_then(|v| v.inputs.first()).map(Vec::len).unwrap_or(0);
        return Ok(initial_model(cfg, dim, num_classes));
    }
    Ok(run_fedavg_trajectory(views, num_classes, cfg)?.pop().expect("rounds >= 1"))
}

pub fn predict_views(model: &ScoringModel, views: &[ClientView]) -> Vec<Vec<usize>> {
    views.iter().map(|v| v.inputs.iter().map(|x| model.predict(x)).collect()).collect()
}
