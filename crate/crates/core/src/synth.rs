//! Seeded Gaussian-mixture generator with a closed-form posterior, for
//! desk-scale experiments where the true class probabilities are known.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{FederatedDataset, Sample};
use crate::error::{Error, Result};
use crate::rng;

/// One mixture component: `count` samples at (client, group, label) drawn
/// from N(mean, cov).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureCell {
    #[serde(default)]
    pub client: usize,
    pub group: usize,
    pub label: usize,
    pub mean: Vec<f64>,
    /// Either a full row-major d×d matrix or a length-d diagonal.
    pub cov: Vec<f64>,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub num_classes: usize,
    pub num_groups: usize,
    pub cells: Vec<MixtureCell>,
}

struct Factor {
    chol: Vec<f64>,
    log_det: f64,
    dim: usize,
}

impl Factor {
    fn new(cov: &[f64], dim: usize) -> Result<Self> {
        let full: Vec<f64> = if cov.len() == dim {
            let mut m = vec![0.0; dim * dim];
            for i in 0..dim {
                m[i * dim + i] = cov[i];
            }
            m
        } else if cov.len() == dim * dim {
            cov.to_vec()
        } else {
            return Err(Error::DimensionMismatch { expected: dim * dim, got: cov.len() });
        };
        for i in 0..dim {
            for j in 0..i {
                if (full[i * dim + j] - full[j * dim + i]).abs() > 1e-12 {
                    return Err(Error::InvalidArgument("covariance is not symmetric".into()));
                }
            }
        }
        let mut l = vec![0.0; dim * dim];
        for i in 0..dim {
            for j in 0..=i {
                let mut sum = full[i * dim + j];
                for p in 0..j {
                    sum -= l[i * dim + p] * l[j * dim + p];
                }
                if i == j {
                    if sum <= 0.0 || !sum.is_finite() {
                        return Err(Error::InvalidArgument(
                            "covariance is not positive definite".into(),
                        ));
                    }
                    l[i * dim + i] = sum.sqrt();
                } else {
                    l[i * dim + j] = sum / l[j * dim + j];
                }
            }
        }
        let log_det = 2.0 * (0..dim).map(|i| l[i * dim + i].ln()).sum::<f64>();
        Ok(Self { chol: l, log_det, dim })
    }

    fn transform(&self, z: &[f64], mean: &[f64]) -> Vec<f64> {
        let d = self.dim;
        (0..d)
            .map(|i| mean[i] + (0..=i).map(|j| self.chol[i * d + j] * z[j]).sum::<f64>())
            .collect()
    }

    /// Log density up to the shared −d/2·log(2π) constant.
    fn log_density(&self, x: &[f64], mean: &[f64]) -> f64 {
        let d = self.dim;
        let mut w = vec![0.0; d];
        for i in 0..d {
            let mut s = x[i] - mean[i];
            for j in 0..i {
                s -= self.chol[i * d + j] * w[j];
            }
            w[i] = s / self.chol[i * d + i];
        }
        -0.5 * (w.iter().map(|v| v * v).sum::<f64>() + self.log_det)
    }
}

impl SyntheticSpec {
    fn dim(&self) -> Result<usize> {
        self.cells
            .first()
            .map(|c| c.mean.len())
            .ok_or_else(|| Error::Empty("synthetic spec has no cells".into()))
    }

    fn factors(&self) -> Result<Vec<Factor>> {
        let dim = self.dim()?;
        self.cells
            .iter()
            .map(|c| {
                if c.mean.len() != dim {
                    return Err(Error::DimensionMismatch { expected: dim, got: c.mean.len() });
                }
                Factor::new(&c.cov, dim)
            })
            .collect()
    }

    pub fn num_clients(&self) -> usize {
        self.cells.iter().map(|c| c.client + 1).max().unwrap_or(0)
    }

    /// Exact P(Y = · | X = x, A = a, K = k) under the generator, using cell
    /// counts as mixture weights.
    pub fn posterior(&self, x: &[f64], group: usize, client: usize) -> Result<Vec<f64>> {
        let factors = self.factors()?;
        let mut logp = vec![f64::NEG_INFINITY; self.num_classes];
        for (cell, f) in self.cells.iter().zip(&factors) {
            if cell.group != group || cell.client != client || cell.count == 0 {
                continue;
            }
            let lp = (cell.count as f64).ln() + f.log_density(x, &cell.mean);
            let slot = &mut logp[cell.label];
            *slot = if slot.is_finite() { log_add(*slot, lp) } else { lp };
        }
        let top = logp.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if !top.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "no mixture cell for group {group} at client {client}"
            )));
        }
        let w: Vec<f64> = logp.iter().map(|l| (l - top).exp()).collect();
        let z: f64 = w.iter().sum();
        Ok(w.into_iter().map(|v| v / z).collect())
    }

    /// Two binary groups with different base rates of the positive label.
    /// Group membership also shifts the features, so a label model picks up
    /// the group signal.
    pub fn biased_binary(n: usize, base_rates: (f64, f64), separation: f64, group_shift: f64) -> Self {
        let per_group = n / 2;
        let mut cells = Vec::new();
        for (a, &rate) in [base_rates.0, base_rates.1].iter().enumerate() {
            let pos = (per_group as f64 * rate).round() as usize;
            let sign_a = if a == 1 { 1.0 } else { -1.0 };
            for (y, count) in [(0usize, per_group - pos), (1usize, pos)] {
                let sign_y = if y == 1 { 1.0 } else { -1.0 };
                cells.push(MixtureCell {
                    client: 0,
                    group: a,
                    label: y,
                    mean: vec![sign_y * separation / 2.0, sign_a * group_shift, 0.0],
                    cov: vec![1.0, 1.0, 1.0],
                    count: count.max(1),
                });
            }
        }
        Self { num_classes: 2, num_groups: 2, cells }
    }
}

fn log_add(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Draw the dataset described by `spec`. Cells are generated in order, so a
/// fixed seed yields a bit-identical dataset.
pub fn synth_gaussian_mixture(spec: &SyntheticSpec, seed: u64) -> Result<FederatedDataset> {
    let factors = spec.factors()?;
    let dim = spec.dim()?;
    let mut clients: Vec<Vec<Sample>> = vec![Vec::new(); spec.num_clients()];
    let mut rng = rng::rng_from(seed);
    for (cell, f) in spec.cells.iter().zip(&factors) {
        if cell.count == 0 {
            return Err(Error::InvalidArgument("cell counts must be at least 1".into()));
        }
        if cell.label >= spec.num_classes || cell.group >= spec.num_groups {
            return Err(Error::InvalidArgument(format!(
                "cell (group {}, label {}) out of range",
                cell.group, cell.label
            )));
        }
        for _ in 0..cell.count {
            let z: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
            clients[cell.client].push(Sample::new(f.transform(&z, &cell.mean), cell.label, cell.group));
        }
    }
    FederatedDataset::new(clients, spec.num_classes, spec.num_groups)
}
