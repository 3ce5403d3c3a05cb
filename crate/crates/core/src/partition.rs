//! Client partitioners for single-client datasets.

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Gamma};

use crate::data::{FederatedDataset, Sample};
use crate::error::{Error, Result};
use crate::rng;

/// Maximum number of Dirichlet redraws before giving up on a partition that
/// leaves some client empty.
pub const DIRICHLET_RETRY_BUDGET: usize = 100;

fn single_client(data: &FederatedDataset) -> Result<&[Sample]> {
    if data.num_clients() != 1 {
        return Err(Error::InvalidArgument(format!(
            "partitioner expects a single-client dataset, got {} clients",
            data.num_clients()
        )));
    }
    Ok(data.client(0))
}

/// Split each sensitive group across `num_clients` clients according to a
/// `Dir(gamma)` draw of client proportions.
pub fn dirichlet_partition(
    data: &FederatedDataset,
    num_clients: usize,
    gamma: f64,
    seed: u64,
) -> Result<FederatedDataset> {
    let samples = single_client(data)?;
    if num_clients < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 clients, got {num_clients}")));
    }
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::InvalidArgument(format!("concentration must be positive, got {gamma}")));
    }
    let gamma_dist = Gamma::new(gamma, 1.0).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut by_group: Vec<Vec<usize>> = vec![Vec::new(); data.num_groups()];
    for (i, s) in samples.iter().enumerate() {
        by_group[s.group].push(i);
    }
    let mut rng = rng::rng_from(seed);

    for _attempt in 0..DIRICHLET_RETRY_BUDGET {
        let mut shards: Vec<Vec<Sample>> = vec![Vec::new(); num_clients];
        let mut degenerate = false;
        for members in &by_group {
            if members.is_empty() {
                continue;
            }
            let draws: Vec<f64> = (0..num_clients).map(|_| gamma_dist.sample(&mut rng)).collect();
            let total: f64 = draws.iter().sum();
            if !(total > 0.0 && total.is_finite()) {
                degenerate = true;
                break;
            }
            let mut order = members.clone();
            order.shuffle(&mut rng);
            // cumulative cut points, last client takes the tail
            let n = order.len();
            let mut start = 0;
            let mut acc = 0.0;
            for (k, d) in draws.iter().enumerate() {
                acc += d / total;
                let end = if k + 1 == num_clients { n } else { ((acc * n as f64).floor() as usize).min(n) };
                let end = end.max(start);
                shards[k].extend(order[start..end].iter().map(|&i| samples[i].clone()));
                start = end;
            }
        }
        if degenerate || shards.iter().any(Vec::is_empty) {
            continue;
        }
        return data.with_clients(shards);
    }
    Err(Error::Partition(format!(
        "a client stayed empty after {DIRICHLET_RETRY_BUDGET} Dirichlet draws"
    )))
}

/// Integer allocation of `total` items proportional to `weights`: floors
/// first, then one extra item each to the largest fractional remainders.
/// Ties go to the lowest index.
pub fn largest_remainder_counts(weights: &[f64], total: usize) -> Vec<usize> {
    let weight_sum: f64 = weights.iter().sum();
    if weights.is_empty() || weight_sum <= 0.0 {
        let mut out = vec![0; weights.len()];
        if let Some(first) = out.first_mut() {
            *first = total;
        }
        return out;
    }
    let shares: Vec<f64> = weights.iter().map(|w| w / weight_sum * total as f64).collect();
    let mut counts: Vec<usize> = shares.iter().map(|s| s.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&i, &j| {
        let ri = shares[i] - shares[i].floor();
        let rj = shares[j] - shares[j].floor();
        rj.total_cmp(&ri).then(i.cmp(&j))
    });
    for &k in order.iter().cycle().take(total.saturating_sub(assigned)) {
        counts[k] += 1;
    }
    counts
}

/// Per-client attribute/label correlation split for binary group and label.
///
/// Client `k` draws `gamma_k ~ Uniform[lo, hi]`; joint classes (0,0) and (1,1)
/// are allocated with weight `gamma_k`, classes (1,0) and (0,1) with
/// `1 - gamma_k`.
pub fn heterogeneous_split(
    data: &FederatedDataset,
    num_clients: usize,
    corr_range: (f64, f64),
    seed: u64,
) -> Result<FederatedDataset> {
    let (lo, hi) = corr_range;
    if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo > hi {
        return Err(Error::InvalidArgument(format!(
            "correlation range must satisfy 0 <= a <= b <= 1, got [{lo}, {hi}]"
        )));
    }
    if num_clients < 1 {
        return Err(Error::InvalidArgument("need at least one client".into()));
    }
    let mut rng = rng::rng_at(seed, &[0x4e7]);
    let gammas: Vec<f64> = (0..num_clients)
        .map(|_| if hi > lo { rng.random_range(lo..=hi) } else { lo })
        .collect();
    heterogeneous_split_with(data, &gammas, seed)
}

/// [`heterogeneous_split`] with explicit per-client correlation weights.
pub fn heterogeneous_split_with(
    data: &FederatedDataset,
    gammas: &[f64],
    seed: u64,
) -> Result<FederatedDataset> {
    let samples = single_client(data)?;
    if data.num_groups() != 2 || data.num_classes() != 2 {
        return Err(Error::Unsupported(format!(
            "heterogeneous split needs binary group and label, got {} groups and {} classes",
            data.num_groups(),
            data.num_classes()
        )));
    }
    let num_clients = gammas.len();
    if num_clients == 0 {
        return Err(Error::InvalidArgument("need at least one client".into()));
    }
    let mut shards: Vec<Vec<Sample>> = vec![Vec::new(); num_clients];
    for a in 0..2 {
        for y in 0..2 {
            let mut members: Vec<usize> = samples
                .iter()
                .enumerate()
                .filter(|(_, s)| s.group == a && s.label == y)
                .map(|(i, _)| i)
                .collect();
            let weights: Vec<f64> = gammas
                .iter()
                .map(|&g| if a == y { g } else { 1.0 - g })
                .collect();
            let counts = largest_remainder_counts(&weights, members.len());
            members.shuffle(&mut rng::rng_at(seed, &[0x5e1, a as u64, y as u64]));
            let mut start = 0;
            for (k, c) in counts.into_iter().enumerate() {
                shards[k].extend(members[start..start + c].iter().map(|&i| samples[i].clone()));
                start += c;
            }
        }
    }
    if let Some(k) = shards.iter().position(Vec::is_empty) {
        return Err(Error::Partition(format!("client {k} received no samples")));
    }
    data.with_clients(shards)
}
