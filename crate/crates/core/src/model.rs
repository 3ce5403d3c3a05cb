//! Scoring functions `s(x; φ): R^d -> R^m` with a softmax head, trained under
//! per-sample cost rows.

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

pub const CHECKPOINT_VERSION: u32 = 1;
pub const DEFAULT_HIDDEN: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Architecture {
    Linear,
    Mlp { hidden: usize },
}

impl Default for Architecture {
    fn default() -> Self {
        Architecture::Linear
    }
}

/// Parameters are one flat vector.
///
/// Linear: `W (m×d) | b (m)`. MLP: `W1 (h×d) | b1 (h) | W2 (m×h) | b2 (m)`,
/// ReLU hidden layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoringModel {
    pub architecture: Architecture,
    input_dim: usize,
    num_classes: usize,
    params: Vec<f64>,
}

pub fn param_count(architecture: Architecture, d: usize, m: usize) -> usize {
    match architecture {
        Architecture::Linear => m * d + m,
        Architecture::Mlp { hidden: h } => h * d + h + m * h + m,
    }
}

impl ScoringModel {
    pub fn zeros(architecture: Architecture, input_dim: usize, num_classes: usize) -> Self {
        let n = param_count(architecture, input_dim, num_classes);
        Self { architecture, input_dim, num_classes, params: vec![0.0; n] }
    }

    /// Kaiming-style uniform init: weights in ±sqrt(6 / fan_in) for the ReLU
    /// layer and ±sqrt(1 / fan_in) for the output layer; zero biases.
    pub fn init(architecture: Architecture, input_dim: usize, num_classes: usize, seed: u64) -> Self {
        let mut model = Self::zeros(architecture, input_dim, num_classes);
        let mut rng = rng::rng_from(seed);
        let (d, m) = (input_dim, num_classes);
        let mut fill = |slice: &mut [f64], bound: f64| {
            for v in slice {
                *v = rng.random_range(-bound..bound);
            }
        };
        match architecture {
            Architecture::Linear => {
                fill(&mut model.params[..m * d], (1.0 / d.max(1) as f64).sqrt());
            }
            Architecture::Mlp { hidden: h } => {
                fill(&mut model.params[..h * d], (6.0 / d.max(1) as f64).sqrt());
                let w2 = h * d + h;
                fill(&mut model.params[w2..w2 + m * h], (1.0 / h.max(1) as f64).sqrt());
            }
        }
        model
    }

    pub fn from_params(architecture: Architecture, input_dim: usize, num_classes: usize, params: Vec<f64>) -> Result<Self> {
        let n = param_count(architecture, input_dim, num_classes);
        if params.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: params.len() });
        }
        Ok(Self { architecture, input_dim, num_classes, params })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }
    pub fn num_classes(&self) -> usize {
        self.num_classes
    }
    pub fn params(&self) -> &[f64] {
        &self.params
    }
    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim {
            return Err(Error::DimensionMismatch { expected: self.input_dim, got: x.len() });
        }
        Ok(self.scores(x))
    }

    /// Forward pass without the dimension check.
    pub fn scores(&self, x: &[f64]) -> Vec<f64> {
        let (d, m) = (self.input_dim, self.num_classes);
        let p = &self.params;
        match self.architecture {
            Architecture::Linear => affine(&p[..m * d], &p[m * d..], x),
            Architecture::Mlp { hidden: h } => {
                let mut z = affine(&p[..h * d], &p[h * d..h * d + h], x);
                z.iter_mut().for_each(|v| *v = v.max(0.0));
                let w2 = h * d + h;
                affine(&p[w2..w2 + m * h], &p[w2 + m * h..], &z)
            }
        }
    }

    pub fn predict_proba(&self, x: &[f64]) -> Vec<f64> {
        softmax(&self.scores(x))
    }

    pub fn predict(&self, x: &[f64]) -> usize {
        argmax(&self.scores(x))
    }

    /// Adds the gradient of `ℓ(s(x), cost)` scaled by `scale` into `grad` and
    /// returns the unscaled loss.
    pub fn accumulate_gradient(&self, x: &[f64], cost: &[f64], scale: f64, grad: &mut [f64]) -> f64 {
        let (d, m) = (self.input_dim, self.num_classes);
        let p = &self.params;
        match self.architecture {
            Architecture::Linear => {
                let s = affine(&p[..m * d], &p[m * d..], x);
                let (loss, gs) = loss_and_score_gradient(&s, cost);
                for j in 0..m {
                    let g = scale * gs[j];
                    for i in 0..d {
                        grad[j * d + i] += g * x[i];
                    }
                    grad[m * d + j] += g;
                }
                loss
            }
            Architecture::Mlp { hidden: h } => {
                let pre = affine(&p[..h * d], &p[h * d..h * d + h], x);
                let z: Vec<f64> = pre.iter().map(|v| v.max(0.0)).collect();
                let w2 = h * d + h;
                let b2 = w2 + m * h;
                let s = affine(&p[w2..b2], &p[b2..], &z);
                let (loss, gs) = loss_and_score_gradient(&s, cost);
                let mut gz = vec![0.0; h];
                for j in 0..m {
                    let g = scale * gs[j];
                    for r in 0..h {
                        grad[w2 + j * h + r] += g * z[r];
                        gz[r] += g * p[w2 + j * h + r];
                    }
                    grad[b2 + j] += g;
                }
                for r in 0..h {
                    if pre[r] <= 0.0 {
                        continue;
                    }
                    for i in 0..d {
                        grad[r * d + i] += gz[r] * x[i];
                    }
                    grad[h * d + r] += gz[r];
                }
                loss
            }
        }
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint { version: CHECKPOINT_VERSION, model: self.clone() }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&self.to_checkpoint())?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(s)?;
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::Unsupported(format!("checkpoint version {}", ck.version)));
        }
        let m = ck.model;
        Self::from_params(m.architecture, m.input_dim, m.num_classes, m.params)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub model: ScoringModel,
}

fn affine(w: &[f64], b: &[f64], x: &[f64]) -> Vec<f64> {
    let d = x.len();
    b.iter()
        .enumerate()
        .map(|(j, &bj)| bj + w[j * d..(j + 1) * d].iter().zip(x).map(|(a, b)| a * b).sum::<f64>())
        .collect()
}

pub fn softmax(s: &[f64]) -> Vec<f64> {
    let top = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = s.iter().map(|v| (v - top).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

fn log_sum_exp(s: &[f64]) -> f64 {
    let top = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    top + s.iter().map(|v| (v - top).exp()).sum::<f64>().ln()
}

/// First index of the maximum.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (j, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = j;
        }
    }
    best
}

/// `−Σ_i c_i log softmax(s)_i`.
pub fn cost_sensitive_loss(scores: &[f64], cost: &[f64]) -> Result<f64> {
    if scores.len() != cost.len() {
        return Err(Error::DimensionMismatch { expected: scores.len(), got: cost.len() });
    }
    if scores.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite scores".into()));
    }
    if cost.iter().any(|&c| !(c >= 0.0)) {
        return Err(Error::InvalidArgument("cost rows must be non-negative".into()));
    }
    Ok(loss_and_score_gradient(scores, cost).0)
}

/// Loss and its gradient in the scores, `softmax(s)·Σc − c`.
pub fn loss_and_score_gradient(scores: &[f64], cost: &[f64]) -> (f64, Vec<f64>) {
    let lse = log_sum_exp(scores);
    let total: f64 = cost.iter().sum();
    let loss = cost.iter().zip(scores).map(|(c, s)| c * (lse - s)).sum();
    let grad = scores.iter().zip(cost).map(|(s, c)| (s - lse).exp() * total - c).collect();
    (loss, grad)
}

/// Mean loss and mean parameter gradient over `(input, cost row)` pairs.
pub fn loss_gradient(model: &ScoringModel, batch: &[(&[f64], &[f64])]) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::Empty("gradient batch".into()));
    }
    let mut grad = vec![0.0; model.params.len()];
    let scale = 1.0 / batch.len() as f64;
    let mut loss = 0.0;
    for (x, c) in batch {
        if x.len() != model.input_dim {
            return Err(Error::DimensionMismatch { expected: model.input_dim, got: x.len() });
        }
        if c.len() != model.num_classes {
            return Err(Error::DimensionMismatch { expected: model.num_classes, got: c.len() });
        }
        loss += model.accumulate_gradient(x, c, scale, &mut grad);
    }
    Ok((loss * scale, grad))
}

/// Mean loss over a dataset view.
pub fn mean_loss(model: &ScoringModel, inputs: &[Vec<f64>], costs: &[&[f64]]) -> f64 {
    let total: f64 = inputs
        .iter()
        .zip(costs)
        .map(|(x, c)| loss_and_score_gradient(&model.scores(x), c).0)
        .sum();
    total / inputs.len().max(1) as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    #[default]
    Sgd,
    Adam,
}

/// `steps` mini-batch updates of size `batch_size` at rate `lr`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SgdConfig {
    pub steps: usize,
    pub lr: f64,
    pub batch_size: usize,
    #[serde(default)]
    pub optimizer: Optimizer,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self { steps: 10, lr: 0.1, batch_size: 64, optimizer: Optimizer::Sgd }
    }
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Run `cfg.steps` mini-batch steps. Batches walk a seeded permutation of the
/// shard, reshuffling at each epoch boundary. Adam moments start at zero on
/// every call.
pub fn sgd_steps(
    model: &mut ScoringModel,
    inputs: &[Vec<f64>],
    costs: &[&[f64]],
    cfg: &SgdConfig,
    seed: u64,
) -> Result<()> {
    if inputs.is_empty() {
        return Err(Error::Empty("training shard".into()));
    }
    if inputs.len() != costs.len() {
        return Err(Error::DimensionMismatch { expected: inputs.len(), got: costs.len() });
    }
    if !(cfg.lr >= 0.0) || cfg.batch_size == 0 {
        return Err(Error::InvalidArgument("learning rate must be >= 0 and batch size >= 1".into()));
    }
    let n = inputs.len();
    let batch = cfg.batch_size.min(n);
    let mut rng = rng::rng_from(seed);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut cursor = 0;
    let np = model.params.len();
    let mut grad = vec![0.0; np];
    let (mut m1, mut m2) = match cfg.optimizer {
        Optimizer::Adam => (vec![0.0; np], vec![0.0; np]),
        Optimizer::Sgd => (Vec::new(), Vec::new()),
    };
    for step in 0..cfg.steps {
        if cursor + batch > n {
            order.shuffle(&mut rng);
            cursor = 0;
        }
        grad.iter_mut().for_each(|g| *g = 0.0);
        let scale = 1.0 / batch as f64;
        let mut loss = 0.0;
        for &i in &order[cursor..cursor + batch] {
            loss += model.accumulate_gradient(&inputs[i], costs[i], scale, &mut grad);
        }
        cursor += batch;
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Numeric(format!("non-finite loss or gradient at step {step}")));
        }
        match cfg.optimizer {
            Optimizer::Sgd => {
                for (p, g) in model.params.iter_mut().zip(&grad) {
                    *p -= cfg.lr * g;
                }
            }
            Optimizer::Adam => {
                let t = (step + 1) as i32;
                let c1 = 1.0 - ADAM_BETA1.powi(t);
                let c2 = 1.0 - ADAM_BETA2.powi(t);
                for i in 0..np {
                    m1[i] = ADAM_BETA1 * m1[i] + (1.0 - ADAM_BETA1) * grad[i];
                    m2[i] = ADAM_BETA2 * m2[i] + (1.0 - ADAM_BETA2) * grad[i] * grad[i];
                    model.params[i] -= cfg.lr * (m1[i] / c1) / ((m2[i] / c2).sqrt() + ADAM_EPS);
                }
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn one_hot(y: usize, m: usize) -> Vec<f64> {
        (0..m).map(|j| if j == y { 1.0 } else { 0.0 }).collect()
    }

    #[test]
    fn zero_linear_model_is_uniform() {
        let model = ScoringModel::zeros(Architecture::Linear, 3, 4);
        assert_eq!(model.forward(&[1.0, -2.0, 0.5]).unwrap(), vec![0.0; 4]);
        assert_eq!(model.predict_proba(&[1.0, 2.0, 3.0]), vec![0.25; 4]);
        assert!(model.forward(&[1.0]).is_err());
    }

    #[test]
    fn basis_vector_selects_weight_column() {
        let mut model = ScoringModel::zeros(Architecture::Linear, 2, 3);
        model.params_mut()[..6].copy_from_slice(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(model.forward(&[0.0, 1.0]).unwrap(), vec![2.0, 4.0, 6.0]);
    }

    #[test]
    fn loss_hand_values() {
        let ce = cost_sensitive_loss(&[1.0, 2.0, 0.5], &one_hot(1, 3)).unwrap();
        let expected = -softmax(&[1.0, 2.0, 0.5])[1].ln();
        assert!((ce - expected).abs() < 1e-14);
        let l = cost_sensitive_loss(&[0.0, 0.0], &[0.5, 0.5]).unwrap();
        assert!((l - 2f64.ln()).abs() < 1e-15);
        let s = [0.3, -1.2, 2.0];
        let c = [0.2, 1.5, 0.7];
        let scaled: Vec<f64> = c.iter().map(|v| 3.0 * v).collect();
        let a = cost_sensitive_loss(&s, &c).unwrap();
        assert!((cost_sensitive_loss(&s, &scaled).unwrap() - 3.0 * a).abs() < 1e-12);
        assert!(cost_sensitive_loss(&[f64::NAN, 0.0], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn saturated_correct_model_has_small_gradient() {
        let mut model = ScoringModel::zeros(Architecture::Linear, 1, 2);
        model.params_mut().copy_from_slice(&[0.0, 0.0, -20.0, 20.0]);
        let c = one_hot(1, 2);
        let (_, g) = loss_gradient(&model, &[(&[1.0][..], &c[..]), (&[-3.0][..], &c[..])]).unwrap();
        assert!(g.iter().map(|v| v * v).sum::<f64>().sqrt() < 1e-3);
    }

    #[test]
    fn duplicated_batch_keeps_mean_gradient() {
        let model = ScoringModel::init(Architecture::Mlp { hidden: 5 }, 3, 3, 4);
        let xs = [vec![0.1, 0.2, -0.3], vec![1.0, -0.5, 0.4]];
        let cs = [vec![1.0, 0.2, 0.3], vec![0.1, 0.1, 2.0]];
        let once: Vec<(&[f64], &[f64])> = xs.iter().zip(&cs).map(|(x, c)| (&x[..], &c[..])).collect();
        let twice: Vec<(&[f64], &[f64])> = once.iter().chain(once.iter()).cloned().collect();
        let (l1, g1) = loss_gradient(&model, &once).unwrap();
        let (l2, g2) = loss_gradient(&model, &twice).unwrap();
        assert!((l1 - l2).abs() < 1e-12);
        for (a, b) in g1.iter().zip(&g2) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    fn separable(n: usize) -> (Vec<Vec<f64>>, Vec<usize>) {
        let mut rng = rng::rng_from(1);
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for i in 0..n {
            let y = i % 2;
            let centre = if y == 1 { 2.0 } else { -2.0 };
            xs.push(vec![centre + rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]);
            ys.push(y);
        }
        (xs, ys)
    }

    #[test]
    fn trains_on_separable_data() {
        let (xs, ys) = separable(200);
        let rows: Vec<Vec<f64>> = ys.iter().map(|&y| one_hot(y, 2)).collect();
        let costs: Vec<&[f64]> = rows.iter().map(|r| &r[..]).collect();
        for arch in [Architecture::Linear, Architecture::Mlp { hidden: 8 }] {
            let mut model = ScoringModel::init(arch, 2, 2, 3);
            let cfg = SgdConfig { steps: 200, lr: 0.1, batch_size: 16, optimizer: Optimizer::Sgd };
            sgd_steps(&mut model, &xs, &costs, &cfg, 7).unwrap();
            let acc = xs.iter().zip(&ys).filter(|(x, &y)| model.predict(x) == y).count() as f64 / 200.0;
            assert!(acc >= 0.95, "{arch:?} accuracy {acc}");
        }
    }

    #[test]
    fn zero_rate_and_fixed_seed() {
        let (xs, ys) = separable(50);
        let rows: Vec<Vec<f64>> = ys.iter().map(|&y| one_hot(y, 2)).collect();
        let costs: Vec<&[f64]> = rows.iter().map(|r| &r[..]).collect();
        let start = ScoringModel::init(Architecture::Mlp { hidden: 4 }, 2, 2, 0);
        let mut frozen = start.clone();
        let cfg = SgdConfig { steps: 20, lr: 0.0, batch_size: 8, optimizer: Optimizer::Sgd };
        sgd_steps(&mut frozen, &xs, &costs, &cfg, 1).unwrap();
        assert_eq!(frozen, start);
        for optimizer in [Optimizer::Sgd, Optimizer::Adam] {
            let cfg = SgdConfig { steps: 20, lr: 0.05, batch_size: 8, optimizer };
            let mut a = start.clone();
            let mut b = start.clone();
            sgd_steps(&mut a, &xs, &costs, &cfg, 1).unwrap();
            sgd_steps(&mut b, &xs, &costs, &cfg, 1).unwrap();
            assert_eq!(a, b);
            assert_ne!(a, start);
        }
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let model = ScoringModel::init(Architecture::Mlp { hidden: 7 }, 4, 3, 99);
        let back = ScoringModel::from_json(&model.to_json().unwrap()).unwrap();
        assert_eq!(back, model);
        assert!(ScoringModel::from_json(r#"{"version":9,"model":{"architecture":{"kind":"linear"},"input_dim":1,"num_classes":2,"params":[0,0,0,0]}}"#).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn softmax_normalizes(s in prop::collection::vec(-50.0f64..50.0, 1..8)) {
            let p = softmax(&s);
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn loss_is_shift_invariant(
            s in prop::collection::vec(-5.0f64..5.0, 3),
            c in prop::collection::vec(0.01f64..2.0, 3),
            shift in -10.0f64..10.0,
        ) {
            let shifted: Vec<f64> = s.iter().map(|v| v + shift).collect();
            let a = cost_sensitive_loss(&s, &c).unwrap();
            let b = cost_sensitive_loss(&shifted, &c).unwrap();
            prop_assert!((a - b).abs() < 1e-10);
        }
    }
}
