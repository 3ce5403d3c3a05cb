//! Empirical probability tables over (group, label, client).

use serde::{Deserialize, Serialize};

use crate::data::FederatedDataset;
use crate::error::{Error, Result};

/// Joint and derived probabilities of the sensitive attribute `a`, label `y`
/// and client `k`.
///
/// Built from non-negative masses (integer counts for datasets, exact
/// probabilities for finite instances). Every family is a single division of
/// summed masses, so count-based tables are exact ratios of integers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationStats {
    num_groups: usize,
    num_classes: usize,
    num_clients: usize,
    total: f64,
    /// mass[(a * m + y) * N + k]
    mass: Vec<f64>,
    p_k: Vec<f64>,
    p_a: Vec<f64>,
    p_y: Vec<f64>,
    p_ak: Vec<f64>,
    p_ay: Vec<f64>,
    p_yk: Vec<f64>,
}

fn ratio(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

impl PopulationStats {
    /// `mass` is indexed `[(a * num_classes + y) * num_clients + k]`.
    pub fn from_masses(
        num_groups: usize,
        num_classes: usize,
        num_clients: usize,
        mass: Vec<f64>,
    ) -> Result<Self> {
        let (na, nm, nk) = (num_groups, num_classes, num_clients);
        if mass.len() != na * nm * nk {
            return Err(Error::DimensionMismatch { expected: na * nm * nk, got: mass.len() });
        }
        if mass.iter().any(|&v| !(v >= 0.0 && v.is_finite())) {
            return Err(Error::InvalidArgument("masses must be finite and non-negative".into()));
        }
        let total: f64 = mass.iter().sum();
        if total <= 0.0 {
            return Err(Error::Empty("population has zero mass".into()));
        }
        let at = |a: usize, y: usize, k: usize| mass[(a * nm + y) * nk + k];
        let mut m_k = vec![0.0; nk];
        let mut m_a = vec![0.0; na];
        let mut m_y = vec![0.0; nm];
        let mut m_ak = vec![0.0; na * nk];
        let mut m_ay = vec![0.0; na * nm];
        let mut m_yk = vec![0.0; nm * nk];
        for a in 0..na {
            for y in 0..nm {
                for k in 0..nk {
                    let v = at(a, y, k);
                    m_k[k] += v;
                    m_a[a] += v;
                    m_y[y] += v;
                    m_ak[a * nk + k] += v;
                    m_ay[a * nm + y] += v;
                    m_yk[y * nk + k] += v;
                }
            }
        }
        let norm = |v: Vec<f64>| v.into_iter().map(|x| x / total).collect::<Vec<_>>();
        Ok(Self {
            num_groups: na,
            num_classes: nm,
            num_clients: nk,
            total,
            p_k: norm(m_k),
            p_a: norm(m_a),
            p_y: norm(m_y),
            p_ak: norm(m_ak),
            p_ay: norm(m_ay),
            p_yk: norm(m_yk),
            mass,
        })
    }

    pub fn num_groups(&self) -> usize {
        self.num_groups
    }
    pub fn num_classes(&self) -> usize {
        self.num_classes
    }
    pub fn num_clients(&self) -> usize {
        self.num_clients
    }
    pub fn total_mass(&self) -> f64 {
        self.total
    }

    fn mass_at(&self, a: usize, y: usize, k: usize) -> f64 {
        self.mass[(a * self.num_classes + y) * self.num_clients + k]
    }

    fn mass_ak(&self, a: usize, k: usize) -> f64 {
        (0..self.num_classes).map(|y| self.mass_at(a, y, k)).sum()
    }

    fn mass_k(&self, k: usize) -> f64 {
        (0..self.num_groups).map(|a| self.mass_ak(a, k)).sum()
    }

    fn mass_a(&self, a: usize) -> f64 {
        (0..self.num_clients).map(|k| self.mass_ak(a, k)).sum()
    }

    pub fn p_k(&self, k: usize) -> f64 {
        self.p_k[k]
    }
    pub fn p_a(&self, a: usize) -> f64 {
        self.p_a[a]
    }
    pub fn p_y(&self, y: usize) -> f64 {
        self.p_y[y]
    }
    pub fn p_ak(&self, a: usize, k: usize) -> f64 {
        self.p_ak[a * self.num_clients + k]
    }
    pub fn p_ay(&self, a: usize, y: usize) -> f64 {
        self.p_ay[a * self.num_classes + y]
    }
    pub fn p_yk(&self, y: usize, k: usize) -> f64 {
        self.p_yk[y * self.num_clients + k]
    }
    pub fn p_ayk(&self, a: usize, y: usize, k: usize) -> f64 {
        self.mass_at(a, y, k) / self.total
    }
    /// P(A = a | K = k); zero when client `k` has no mass.
    pub fn p_a_given_k(&self, a: usize, k: usize) -> f64 {
        ratio(self.mass_ak(a, k), self.mass_k(k))
    }
    /// P(K = k | A = a); zero when group `a` has no mass.
    pub fn p_k_given_a(&self, k: usize, a: usize) -> f64 {
        ratio(self.mass_ak(a, k), self.mass_a(a))
    }
    /// P(Y = y | A = a, K = k); zero on empty cells.
    pub fn p_y_given_ak(&self, y: usize, a: usize, k: usize) -> f64 {
        ratio(self.mass_at(a, y, k), self.mass_ak(a, k))
    }
}

/// Count-based statistics of a federated dataset.
pub fn compute_stats(data: &FederatedDataset) -> PopulationStats {
    let (na, nm, nk) = (data.num_groups(), data.num_classes(), data.num_clients());
    let mut counts = vec![0u64; na * nm * nk];
    for (k, s) in data.iter() {
        counts[(s.group * nm + s.label) * nk + k] += 1;
    }
    PopulationStats::from_masses(na, nm, nk, counts.into_iter().map(|c| c as f64).collect())
        .expect("a valid dataset has positive mass")
}
