//! Group-specific confusion matrices and the linear constraint functionals
//! that express DP / EOP / EO at global and local scope.
//!
//! A constraint `u` is a family of m×m matrices `D^{a,k}_u`, one per
//! (group, client) cell. Its disparity is `Σ_a Σ_k <D^{a,k}_u, C^{a,k}>`.
//! Every matrix is zero outside column `probe_class`, so a cell is stored as
//! that single column.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::data::{FederatedDataset, Sample};
use crate::error::{Error, Result};
use crate::stats::PopulationStats;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Criterion {
    Dp,
    Eop,
    Eo,
}

impl Criterion {
    pub fn branches(self) -> &'static [u8] {
        match self {
            Criterion::Eo => &[0, 1],
            _ => &[0],
        }
    }
}

impl fmt::Display for Criterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Criterion::Dp => "dp",
            Criterion::Eop => "eop",
            Criterion::Eo => "eo",
        })
    }
}

impl std::str::FromStr for Criterion {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "dp" => Ok(Criterion::Dp),
            "eop" => Ok(Criterion::Eop),
            "eo" => Ok(Criterion::Eo),
            other => Err(Error::Config(format!("unknown criterion `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scope {
    Global,
    Local(usize),
}

/// Identifies one probe: criterion, scope, probe group `a'`, probe class `y`,
/// and for EO the branch (0 = true-positive rate, 1 = false-positive rate).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConstraintIndex {
    pub criterion: Criterion,
    pub scope: Scope,
    pub probe_group: usize,
    pub probe_class: usize,
    #[serde(default)]
    pub branch: u8,
}

impl fmt::Display for ConstraintIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.scope {
            Scope::Global => write!(f, "{}[global", self.criterion)?,
            Scope::Local(k) => write!(f, "{}[client {k}", self.criterion)?,
        }
        write!(f, ", a'={}, y={}", self.probe_group, self.probe_class)?;
        if self.criterion == Criterion::Eo {
            write!(f, ", {}", if self.branch == 0 { "tpr" } else { "fpr" })?;
        }
        f.write_str("]")
    }
}

/// All probes of one criterion at one scope, ordered by (a', y, branch).
pub fn probes(criterion: Criterion, scope: Scope, num_groups: usize, num_classes: usize) -> Vec<ConstraintIndex> {
    let mut out = Vec::new();
    for probe_group in 0..num_groups {
        for probe_class in 0..num_classes {
            for &branch in criterion.branches() {
                out.push(ConstraintIndex { criterion, scope, probe_group, probe_class, branch });
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintMatrix {
    pub index: ConstraintIndex,
    num_groups: usize,
    num_clients: usize,
    num_classes: usize,
    /// cells[a * N + k][i] = D^{a,k}[i, probe_class]
    cells: Vec<Vec<f64>>,
}

impl ConstraintMatrix {
    pub fn column(&self) -> usize {
        self.index.probe_class
    }

    /// Non-zero column of `D^{a,k}`, indexed by row.
    pub fn cell(&self, a: usize, k: usize) -> &[f64] {
        &self.cells[a * self.num_clients + k]
    }

    pub fn cell_is_zero(&self, a: usize, k: usize) -> bool {
        self.cell(a, k).iter().all(|&v| v == 0.0)
    }

    pub fn dense(&self, a: usize, k: usize) -> Vec<f64> {
        let m = self.num_classes;
        let mut out = vec![0.0; m * m];
        for (i, &v) in self.cell(a, k).iter().enumerate() {
            out[i * m + self.column()] = v;
        }
        out
    }

    /// `<D^{a,k}, C>` for a row-major m×m matrix `C`.
    pub fn inner(&self, a: usize, k: usize, c: &ConfusionMatrix) -> f64 {
        let y = self.column();
        self.cell(a, k).iter().enumerate().map(|(i, &d)| d * c.get(i, y)).sum()
    }

    pub fn num_groups(&self) -> usize {
        self.num_groups
    }
    pub fn num_clients(&self) -> usize {
        self.num_clients
    }
    pub fn num_classes(&self) -> usize {
        self.num_classes
    }
}

fn positive(p: f64, index: &ConstraintIndex, cell: impl FnOnce() -> String) -> Result<f64> {
    if p > 0.0 {
        Ok(p)
    } else {
        Err(Error::DegenerateProbe { probe: index.to_string(), cell: cell() })
    }
}

/// Build the family `{D^{a,k}_u}` for one probe from population statistics.
pub fn build_constraint(index: ConstraintIndex, stats: &PopulationStats) -> Result<ConstraintMatrix> {
    let (na, nm, nk) = (stats.num_groups(), stats.num_classes(), stats.num_clients());
    let ap = index.probe_group;
    let y = index.probe_class;
    if ap >= na || y >= nm {
        return Err(Error::InvalidArgument(format!("probe {index} out of range")));
    }
    if let Scope::Local(k) = index.scope {
        if k >= nk {
            return Err(Error::InvalidArgument(format!("probe {index}: no client {k}")));
        }
    }
    if index.criterion != Criterion::Eo && index.branch != 0 {
        return Err(Error::InvalidArgument(format!("branch {} only exists for EO", index.branch)));
    }
    let mut cells = vec![vec![0.0; nm]; na * nk];
    let ind = |a: usize| if a == ap { 1.0 } else { 0.0 };
    let off_y: Vec<usize> = (0..nm).filter(|&j| j != y).collect();

    match (index.criterion, index.branch, index.scope) {
        (Criterion::Dp, _, Scope::Global) => {
            positive(stats.p_a(ap), &index, || format!("P(A={ap})"))?;
            for a in 0..na {
                for k in 0..nk {
                    let v = stats.p_k_given_a(k, ap) * ind(a) - stats.p_ak(a, k);
                    cells[a * nk + k].iter_mut().for_each(|c| *c = v);
                }
            }
        }
        (Criterion::Dp, _, Scope::Local(k)) => {
            positive(stats.p_ak(ap, k), &index, || format!("P(A={ap}, K={k})"))?;
            for a in 0..na {
                let v = ind(a) - stats.p_a_given_k(a, k);
                cells[a * nk + k].iter_mut().for_each(|c| *c = v);
            }
        }
        (Criterion::Eop | Criterion::Eo, 0, Scope::Global) => {
            let p_apy = positive(stats.p_ay(ap, y), &index, || format!("P(A={ap}, Y={y})"))?;
            let p_y = positive(stats.p_y(y), &index, || format!("P(Y={y})"))?;
            for a in 0..na {
                for k in 0..nk {
                    cells[a * nk + k][y] = stats.p_ak(ap, k) / p_apy * ind(a) - stats.p_ak(a, k) / p_y;
                }
            }
        }
        (Criterion::Eop | Criterion::Eo, 0, Scope::Local(k)) => {
            let p_apyk =
                positive(stats.p_ayk(ap, y, k), &index, || format!("P(A={ap}, Y={y}, K={k})"))?;
            let p_yk = positive(stats.p_yk(y, k), &index, || format!("P(Y={y}, K={k})"))?;
            for a in 0..na {
                cells[a * nk + k][y] = stats.p_ak(ap, k) / p_apyk * ind(a) - stats.p_ak(a, k) / p_yk;
            }
        }
        (Criterion::Eo, 1, Scope::Global) => {
            let p_ap_not_y: f64 = off_y.iter().map(|&j| stats.p_ay(ap, j)).sum();
            let p_not_y: f64 = off_y.iter().map(|&j| stats.p_y(j)).sum();
            positive(p_ap_not_y, &index, || format!("P(A={ap}, Y!={y})"))?;
            positive(p_not_y, &index, || format!("P(Y!={y})"))?;
            for a in 0..na {
                for k in 0..nk {
                    let v = stats.p_ak(ap, k) / p_ap_not_y * ind(a) - stats.p_ak(a, k) / p_not_y;
                    for &i in &off_y {
                        cells[a * nk + k][i] = v;
                    }
                }
            }
        }
        (Criterion::Eo, 1, Scope::Local(k)) => {
            let p_ap_not_y: f64 = off_y.iter().map(|&j| stats.p_ayk(ap, j, k)).sum();
            let p_not_y: f64 = off_y.iter().map(|&j| stats.p_yk(j, k)).sum();
            positive(p_ap_not_y, &index, || format!("P(A={ap}, Y!={y}, K={k})"))?;
            positive(p_not_y, &index, || format!("P(Y!={y}, K={k})"))?;
            for a in 0..na {
                let v = stats.p_ak(ap, k) / p_ap_not_y * ind(a) - stats.p_ak(a, k) / p_not_y;
                for &i in &off_y {
                    cells[a * nk + k][i] = v;
                }
            }
        }
        _ => return Err(Error::InvalidArgument(format!("invalid probe {index}"))),
    }
    Ok(ConstraintMatrix { index, num_groups: na, num_clients: nk, num_classes: nm, cells })
}

/// Which constraint levels are enforced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Scopes {
    Global,
    Local,
    #[default]
    Both,
}

impl Scopes {
    pub fn global(self) -> bool {
        matches!(self, Scopes::Global | Scopes::Both)
    }
    pub fn local(self) -> bool {
        matches!(self, Scopes::Local | Scopes::Both)
    }
}

impl std::str::FromStr for Scopes {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "global" => Ok(Scopes::Global),
            "local" => Ok(Scopes::Local),
            "both" | "global+local" => Ok(Scopes::Both),
            other => Err(Error::Config(format!("unknown scopes `{other}`"))),
        }
    }
}

/// Criterion plus global and per-client slack bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FairnessSpec {
    pub criterion: Criterion,
    pub xi_global: f64,
    pub xi_local: f64,
    /// Per-client overrides of `xi_local`.
    #[serde(default)]
    pub xi_local_per_client: Option<Vec<f64>>,
    #[serde(default)]
    pub scopes: Scopes,
}

impl Default for FairnessSpec {
    fn default() -> Self {
        Self::new(Criterion::Dp, 0.01, 0.01, Scopes::Both)
    }
}

impl FairnessSpec {
    pub fn new(criterion: Criterion, xi_global: f64, xi_local: f64, scopes: Scopes) -> Self {
        Self { criterion, xi_global, xi_local, xi_local_per_client: None, scopes }
    }

    pub fn xi_local_for(&self, k: usize) -> f64 {
        self.xi_local_per_client
            .as_ref()
            .and_then(|v| v.get(k).copied())
            .unwrap_or(self.xi_local)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |v: f64| !(v >= 0.0) || v.is_nan();
        if bad(self.xi_global) || bad(self.xi_local) {
            return Err(Error::InvalidArgument("slacks must be non-negative".into()));
        }
        if let Some(v) = &self.xi_local_per_client {
            if v.iter().any(|&x| bad(x)) {
                return Err(Error::InvalidArgument("slacks must be non-negative".into()));
            }
        }
        Ok(())
    }
}

/// Global probes plus per-client local probes; degenerate probes may be
/// dropped instead of failing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintSet {
    pub global: Vec<ConstraintMatrix>,
    pub local: Vec<Vec<ConstraintMatrix>>,
    pub dropped: Vec<(ConstraintIndex, String)>,
}

impl ConstraintSet {
    pub fn build(spec: &FairnessSpec, stats: &PopulationStats, drop_degenerate: bool) -> Result<Self> {
        Self::build_scopes(spec.criterion, spec.scopes, stats, drop_degenerate)
    }

    pub fn build_scopes(
        criterion: Criterion,
        scopes: Scopes,
        stats: &PopulationStats,
        drop_degenerate: bool,
    ) -> Result<Self> {
        let (na, nm, nk) = (stats.num_groups(), stats.num_classes(), stats.num_clients());
        let mut dropped = Vec::new();
        let mut collect = |scope: Scope| -> Result<Vec<ConstraintMatrix>> {
            let mut out = Vec::new();
            for idx in probes(criterion, scope, na, nm) {
                match build_constraint(idx, stats) {
                    Ok(c) => out.push(c),
                    Err(e @ Error::DegenerateProbe { .. }) if drop_degenerate => {
                        dropped.push((idx, e.to_string()))
                    }
                    Err(e) => return Err(e),
                }
            }
            Ok(out)
        };
        let global = if scopes.global() { collect(Scope::Global)? } else { Vec::new() };
        let mut local = Vec::with_capacity(nk);
        for k in 0..nk {
            local.push(if scopes.local() { collect(Scope::Local(k))? } else { Vec::new() });
        }
        Ok(Self { global, local, dropped })
    }

    pub fn num_global(&self) -> usize {
        self.global.len()
    }

    pub fn num_local(&self, k: usize) -> usize {
        self.local[k].len()
    }
}

/// Empirical `C^{a,k}_{i,j} = P(Y=i, Ŷ=j | A=a, K=k)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub group: usize,
    pub client: usize,
    num_classes: usize,
    entries: Vec<f64>,
}

impl ConfusionMatrix {
    pub fn from_entries(group: usize, client: usize, num_classes: usize, entries: Vec<f64>) -> Self {
        assert_eq!(entries.len(), num_classes * num_classes);
        Self { group, client, num_classes, entries }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.num_classes + j]
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn total(&self) -> f64 {
        self.entries.iter().sum()
    }
}

/// Confusion matrix of group `a` within one client shard.
pub fn empirical_confusion(
    predictions: &[usize],
    shard: &[Sample],
    group: usize,
    client: usize,
    num_classes: usize,
) -> Result<ConfusionMatrix> {
    if predictions.len() != shard.len() {
        return Err(Error::DimensionMismatch { expected: shard.len(), got: predictions.len() });
    }
    let mut counts = vec![0u64; num_classes * num_classes];
    let mut n = 0u64;
    for (s, &p) in shard.iter().zip(predictions) {
        if s.group == group {
            if p >= num_classes {
                return Err(Error::InvalidArgument(format!("prediction {p} out of range")));
            }
            counts[s.label * num_classes + p] += 1;
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::EmptyCell { group, client });
    }
    let entries = counts.into_iter().map(|c| c as f64 / n as f64).collect();
    Ok(ConfusionMatrix { group, client, num_classes, entries })
}

/// Every `Ĉ^{a,k}`; cells without samples are `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionSet {
    num_groups: usize,
    num_clients: usize,
    num_classes: usize,
    cells: Vec<Option<ConfusionMatrix>>,
}

impl ConfusionSet {
    pub fn empty(num_groups: usize, num_clients: usize, num_classes: usize) -> Self {
        Self { num_groups, num_clients, num_classes, cells: vec![None; num_groups * num_clients] }
    }

    /// From hard predictions aligned with `data`'s client shards.
    pub fn from_predictions(data: &FederatedDataset, predictions: &[Vec<usize>]) -> Result<Self> {
        if predictions.len() != data.num_clients() {
            return Err(Error::DimensionMismatch { expected: data.num_clients(), got: predictions.len() });
        }
        let mut set = Self::empty(data.num_groups(), data.num_clients(), data.num_classes());
        for (k, preds) in predictions.iter().enumerate() {
            set.fill_client(k, data.client(k), preds)?;
        }
        Ok(set)
    }

    /// Replace client `k`'s cells from its shard and predictions.
    pub fn fill_client(&mut self, k: usize, shard: &[Sample], predictions: &[usize]) -> Result<()> {
        for a in 0..self.num_groups {
            self.cells[a * self.num_clients + k] =
                match empirical_confusion(predictions, shard, a, k, self.num_classes) {
                    Ok(c) => Some(c),
                    Err(Error::EmptyCell { .. }) => None,
                    Err(e) => return Err(e),
                };
        }
        Ok(())
    }

    /// Weighted accumulation of `(client, group, label, prediction distribution, weight)`.
    pub fn from_weighted<'a, I>(num_groups: usize, num_clients: usize, num_classes: usize, rows: I) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, usize, usize, &'a [f64], f64)>,
    {
        let m = num_classes;
        let mut acc = vec![vec![0.0; m * m]; num_groups * num_clients];
        let mut mass = vec![0.0; num_groups * num_clients];
        for (k, a, y, pred, w) in rows {
            if pred.len() != m {
                return Err(Error::DimensionMismatch { expected: m, got: pred.len() });
            }
            let cell = a * num_clients + k;
            for (j, &q) in pred.iter().enumerate() {
                acc[cell][y * m + j] += w * q;
            }
            mass[cell] += w;
        }
        let cells = acc
            .into_iter()
            .zip(mass)
            .enumerate()
            .map(|(idx, (entries, w))| {
                (w > 0.0).then(|| ConfusionMatrix {
                    group: idx / num_clients,
                    client: idx % num_clients,
                    num_classes: m,
                    entries: entries.into_iter().map(|v| v / w).collect(),
                })
            })
            .collect();
        Ok(Self { num_groups, num_clients, num_classes, cells })
    }

    pub fn get(&self, a: usize, k: usize) -> Option<&ConfusionMatrix> {
        self.cells[a * self.num_clients + k].as_ref()
    }

    pub fn set(&mut self, a: usize, k: usize, c: Option<ConfusionMatrix>) {
        self.cells[a * self.num_clients + k] = c;
    }

    pub fn num_groups(&self) -> usize {
        self.num_groups
    }
    pub fn num_clients(&self) -> usize {
        self.num_clients
    }
    pub fn num_classes(&self) -> usize {
        self.num_classes
    }
}

/// Signed `Σ_a Σ_k <D^{a,k}_u, Ĉ^{a,k}>`. Cells where `D` vanishes may be
/// missing; a missing cell under a non-zero `D` is an error.
pub fn disparity(constraint: &ConstraintMatrix, confusions: &ConfusionSet) -> Result<f64> {
    let mut total = 0.0;
    for a in 0..constraint.num_groups {
        for k in 0..constraint.num_clients {
            if constraint.cell_is_zero(a, k) {
                continue;
            }
            let c = confusions.get(a, k).ok_or(Error::EmptyCell { group: a, client: k })?;
            total += constraint.inner(a, k, c);
        }
    }
    Ok(total)
}

/// Client `k`'s share of a constraint: `Σ_a <D^{a,k}_u, Ĉ^{a,k}>`.
pub fn client_disparity(constraint: &ConstraintMatrix, confusions: &ConfusionSet, k: usize) -> Result<f64> {
    let mut total = 0.0;
    for a in 0..constraint.num_groups {
        if constraint.cell_is_zero(a, k) {
            continue;
        }
        let c = confusions.get(a, k).ok_or(Error::EmptyCell { group: a, client: k })?;
        total += constraint.inner(a, k, c);
    }
    Ok(total)
}

/// Linear performance metric over the population confusion matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskMatrix {
    num_classes: usize,
    entries: Vec<f64>,
}

impl RiskMatrix {
    /// `1 - I`: plain classification error.
    pub fn classification_error(num_classes: usize) -> Self {
        let m = num_classes;
        let entries = (0..m * m).map(|idx| if idx / m == idx % m { 0.0 } else { 1.0 }).collect();
        Self { num_classes, entries }
    }

    pub fn new(num_classes: usize, entries: Vec<f64>) -> Result<Self> {
        if entries.len() != num_classes * num_classes {
            return Err(Error::DimensionMismatch { expected: num_classes * num_classes, got: entries.len() });
        }
        Ok(Self { num_classes, entries })
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.num_classes + j]
    }
}

/// `Σ_a Σ_k p_{a,k} <R, C^{a,k}>`.
pub fn risk_from_confusions(confusions: &ConfusionSet, stats: &PopulationStats, r: &RiskMatrix) -> f64 {
    let m = confusions.num_classes;
    let mut total = 0.0;
    for a in 0..confusions.num_groups {
        for k in 0..confusions.num_clients {
            if let Some(c) = confusions.get(a, k) {
                let inner: f64 = (0..m * m).map(|idx| r.entries[idx] * c.entries[idx]).sum();
                total += stats.p_ak(a, k) * inner;
            }
        }
    }
    total
}

pub fn risk(data: &FederatedDataset, predictions: &[Vec<usize>], r: &RiskMatrix) -> Result<f64> {
    let conf = ConfusionSet::from_predictions(data, predictions)?;
    Ok(risk_from_confusions(&conf, &crate::stats::compute_stats(data), r))
}

pub fn accuracy(data: &FederatedDataset, predictions: &[Vec<usize>]) -> f64 {
    let correct: usize = data
        .clients()
        .iter()
        .zip(predictions)
        .map(|(shard, preds)| shard.iter().zip(preds).filter(|(s, &p)| s.label == p).count())
        .sum();
    correct as f64 / data.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeValue {
    pub probe: ConstraintIndex,
    pub label: String,
    pub value: f64,
}

/// Signed per-probe disparities and the reported maxima.
///
/// For EO the per-probe magnitude is the mean of the TPR and FPR branch
/// magnitudes. Local maxima are per client; `local_max` is the worst client.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisparityReport {
    pub criterion: Criterion,
    pub global: Vec<ProbeValue>,
    pub local: Vec<Vec<ProbeValue>>,
    pub global_max: f64,
    pub local_max_per_client: Vec<f64>,
    pub local_max: f64,
    pub skipped: Vec<String>,
}

fn reported_max(values: &[ProbeValue]) -> f64 {
    let mut best: f64 = 0.0;
    let mut i = 0;
    while i < values.len() {
        let v = &values[i];
        if v.probe.criterion == Criterion::Eo {
            let partner = values.get(i + 1).filter(|w| {
                w.probe.probe_group == v.probe.probe_group
                    && w.probe.probe_class == v.probe.probe_class
                    && w.probe.branch != v.probe.branch
            });
            match partner {
                Some(w) => {
                    best = best.max(0.5 * (v.value.abs() + w.value.abs()));
                    i += 2;
                }
                None => {
                    best = best.max(0.5 * v.value.abs());
                    i += 1;
                }
            }
        } else {
            best = best.max(v.value.abs());
            i += 1;
        }
    }
    best
}

impl DisparityReport {
    pub fn compute(constraints: &ConstraintSet, confusions: &ConfusionSet, criterion: Criterion) -> Result<Self> {
        let eval = |c: &ConstraintMatrix| -> Result<ProbeValue> {
            Ok(ProbeValue { probe: c.index, label: c.index.to_string(), value: disparity(c, confusions)? })
        };
        let global = constraints.global.iter().map(eval).collect::<Result<Vec<_>>>()?;
        let local = constraints
            .local
            .iter()
            .map(|cs| cs.iter().map(eval).collect::<Result<Vec<_>>>())
            .collect::<Result<Vec<_>>>()?;
        let local_max_per_client: Vec<f64> = local.iter().map(|v| reported_max(v)).collect();
        Ok(Self {
            criterion,
            global_max: reported_max(&global),
            local_max: local_max_per_client.iter().cloned().fold(0.0, f64::max),
            local_max_per_client,
            global,
            local,
            skipped: constraints.dropped.iter().map(|(_, why)| why.clone()).collect(),
        })
    }

    /// Evaluate both scopes of `criterion` on `data`, skipping degenerate probes.
    pub fn evaluate(data: &FederatedDataset, predictions: &[Vec<usize>], criterion: Criterion) -> Result<Self> {
        let stats = crate::stats::compute_stats(data);
        let constraints = ConstraintSet::build_scopes(criterion, Scopes::Both, &stats, true)?;
        let conf = ConfusionSet::from_predictions(data, predictions)?;
        Self::compute(&constraints, &conf, criterion)
    }
}
