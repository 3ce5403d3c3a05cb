//! Federated datasets: per-client sample lists with dense label and group
//! indices, CSV ingestion, seeded train/test splitting.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// One labelled observation. `label` and `group` are dense zero-based indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub features: Vec<f64>,
    pub label: usize,
    pub group: usize,
}

impl Sample {
    pub fn new(features: Vec<f64>, label: usize, group: usize) -> Self {
        Self { features, label, group }
    }
}

/// Samples partitioned across clients.
///
/// Every client holds at least one sample and all samples share the same
/// feature dimension. `label_names` / `group_names` map dense indices back to
/// the raw values seen at load time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FederatedDataset {
    clients: Vec<Vec<Sample>>,
    num_classes: usize,
    num_groups: usize,
    dim: usize,
    pub label_names: Vec<String>,
    pub group_names: Vec<String>,
}

impl FederatedDataset {
    pub fn new(clients: Vec<Vec<Sample>>, num_classes: usize, num_groups: usize) -> Result<Self> {
        if clients.is_empty() {
            return Err(Error::Empty("dataset has no clients".into()));
        }
        if num_classes < 2 {
            return Err(Error::InvalidArgument(format!(
                "need at least two classes, got {num_classes}"
            )));
        }
        if num_groups < 1 {
            return Err(Error::InvalidArgument("need at least one sensitive group".into()));
        }
        let dim = clients
            .iter()
            .flat_map(|c| c.first())
            .map(|s| s.features.len())
            .next()
            .ok_or_else(|| Error::Empty("dataset has no samples".into()))?;
        for (k, shard) in clients.iter().enumerate() {
            if shard.is_empty() {
                return Err(Error::Empty(format!("client {k} has no samples")));
            }
            for s in shard {
                if s.features.len() != dim {
                    return Err(Error::DimensionMismatch { expected: dim, got: s.features.len() });
                }
                if s.label >= num_classes {
                    return Err(Error::InvalidArgument(format!(
                        "label {} out of range for {num_classes} classes",
                        s.label
                    )));
                }
                if s.group >= num_groups {
                    return Err(Error::InvalidArgument(format!(
                        "group {} out of range for {num_groups} groups",
                        s.group
                    )));
                }
            }
        }
        Ok(Self {
            clients,
            num_classes,
            num_groups,
            dim,
            label_names: (0..num_classes).map(|i| i.to_string()).collect(),
            group_names: (0..num_groups).map(|i| i.to_string()).collect(),
        })
    }

    /// Same label/group spaces and names, different client shards.
    pub fn with_clients(&self, clients: Vec<Vec<Sample>>) -> Result<Self> {
        let mut out = Self::new(clients, self.num_classes, self.num_groups)?;
        out.label_names = self.label_names.clone();
        out.group_names = self.group_names.clone();
        Ok(out)
    }

    pub fn num_clients(&self) -> usize {
        self.clients.len()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn num_groups(&self) -> usize {
        self.num_groups
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn clients(&self) -> &[Vec<Sample>] {
        &self.clients
    }

    pub fn client(&self, k: usize) -> &[Sample] {
        &self.clients[k]
    }

    pub fn client_sizes(&self) -> Vec<usize> {
        self.clients.iter().map(Vec::len).collect()
    }

    pub fn len(&self) -> usize {
        self.clients.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &Sample)> {
        self.clients
            .iter()
            .enumerate()
            .flat_map(|(k, shard)| shard.iter().map(move |s| (k, s)))
    }

    /// All samples merged into a single client, in client order.
    pub fn pooled(&self) -> Self {
        let merged = self.clients.iter().flatten().cloned().collect();
        let mut out = Self::new(vec![merged], self.num_classes, self.num_groups)
            .expect("pooling a valid dataset");
        out.label_names = self.label_names.clone();
        out.group_names = self.group_names.clone();
        out
    }

    /// Seeded per-client split; `test_fraction` of each shard goes to the
    /// test side. Both sides keep every client non-empty.
    pub fn train_test_split(&self, test_fraction: f64, seed: u64) -> Result<(Self, Self)> {
        if !(0.0..1.0).contains(&test_fraction) || test_fraction == 0.0 {
            return Err(Error::InvalidArgument(format!(
                "test fraction must lie in (0,1), got {test_fraction}"
            )));
        }
        let mut train = Vec::with_capacity(self.clients.len());
        let mut test = Vec::with_capacity(self.clients.len());
        for (k, shard) in self.clients.iter().enumerate() {
            if shard.len() < 2 {
                return Err(Error::Partition(format!(
                    "client {k} has {} samples, cannot split",
                    shard.len()
                )));
            }
            let mut idx: Vec<usize> = (0..shard.len()).collect();
            idx.shuffle(&mut rng::rng_at(seed, &[0x5917, k as u64]));
            let n_test = ((shard.len() as f64) * test_fraction).round() as usize;
            let n_test = n_test.clamp(1, shard.len() - 1);
            test.push(idx[..n_test].iter().map(|&i| shard[i].clone()).collect());
            train.push(idx[n_test..].iter().map(|&i| shard[i].clone()).collect());
        }
        Ok((self.with_clients(train)?, self.with_clients(test)?))
    }

    /// Per-feature min-max scaling to [0,1] using ranges from `self`.
    pub fn min_max_ranges(&self) -> Vec<(f64, f64)> {
        let mut ranges = vec![(f64::INFINITY, f64::NEG_INFINITY); self.dim];
        for (_, s) in self.iter() {
            for (r, &v) in ranges.iter_mut().zip(&s.features) {
                r.0 = r.0.min(v);
                r.1 = r.1.max(v);
            }
        }
        ranges
    }

    pub fn apply_min_max(&mut self, ranges: &[(f64, f64)]) {
        for shard in &mut self.clients {
            for s in shard {
                for (v, &(lo, hi)) in s.features.iter_mut().zip(ranges) {
                    let span = hi - lo;
                    *v = if span > 0.0 { (*v - lo) / span } else { 0.0 };
                }
            }
        }
    }
}

/// Column roles for CSV ingestion. Every other column is a numeric feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvSchema {
    pub label_col: String,
    pub group_col: String,
    #[serde(default)]
    pub client_col: Option<String>,
}

/// Sorted dense remapping: numeric values sort numerically, otherwise lexically.
fn dense_index(values: &[String]) -> BTreeMap<String, usize> {
    let mut uniq: Vec<&String> = values.iter().collect();
    uniq.sort();
    uniq.dedup();
    let numeric: Option<Vec<f64>> = uniq.iter().map(|v| v.trim().parse::<f64>().ok()).collect();
    if let Some(nums) = numeric {
        let mut pairs: Vec<(f64, &String)> = nums.into_iter().zip(uniq).collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        pairs.into_iter().enumerate().map(|(i, (_, v))| (v.clone(), i)).collect()
    } else {
        uniq.into_iter().enumerate().map(|(i, v)| (v.clone(), i)).collect()
    }
}

fn names_of(map: &BTreeMap<String, usize>) -> Vec<String> {
    let mut names = vec![String::new(); map.len()];
    for (name, &i) in map {
        names[i] = name.clone();
    }
    names
}

pub fn load_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<FederatedDataset> {
    let file = std::fs::File::open(path.as_ref())?;
    read_csv(file, schema)
}

pub fn read_csv<R: std::io::Read>(reader: R, schema: &CsvSchema) -> Result<FederatedDataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Csv { row: 0, message: e.to_string() })?
        .clone();
    if headers.is_empty() || (headers.len() == 1 && headers[0].trim().is_empty()) {
        return Err(Error::Empty("csv has no header".into()));
    }
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::Schema(format!("column `{name}` not found in header")))
    };
    let label_pos = find(&schema.label_col)?;
    let group_pos = find(&schema.group_col)?;
    let client_pos = schema.client_col.as_deref().map(find).transpose()?;
    let feature_pos: Vec<usize> = (0..headers.len())
        .filter(|&i| i != label_pos && i != group_pos && Some(i) != client_pos)
        .collect();

    let mut labels = Vec::new();
    let mut groups = Vec::new();
    let mut client_ids = Vec::new();
    let mut features = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        // header is row 1
        let row = i + 2;
        let record = record.map_err(|e| Error::Csv { row, message: e.to_string() })?;
        if record.len() != headers.len() {
            return Err(Error::Csv {
                row,
                message: format!("expected {} fields, found {}", headers.len(), record.len()),
            });
        }
        let mut x = Vec::with_capacity(feature_pos.len());
        for &p in &feature_pos {
            let v = record[p].trim().parse::<f64>().map_err(|_| Error::Csv {
                row,
                message: format!("non-numeric value `{}` in feature column `{}`", &record[p], &headers[p]),
            })?;
            x.push(v);
        }
        features.push(x);
        labels.push(record[label_pos].trim().to_string());
        groups.push(record[group_pos].trim().to_string());
        client_ids.push(client_pos.map(|p| record[p].trim().to_string()).unwrap_or_default());
    }
    if features.is_empty() {
        return Err(Error::Empty("csv has no data rows".into()));
    }

    let label_map = dense_index(&labels);
    let group_map = dense_index(&groups);
    let client_map = dense_index(&client_ids);
    let mut clients = vec![Vec::new(); client_map.len()];
    for (((x, y), a), c) in features.into_iter().zip(&labels).zip(&groups).zip(&client_ids) {
        clients[client_map[c]].push(Sample::new(x, label_map[y], group_map[a]));
    }
    let num_classes = label_map.len().max(2);
    let mut ds = FederatedDataset::new(clients, num_classes, group_map.len())?;
    let mut label_names = names_of(&label_map);
    while label_names.len() < num_classes {
        label_names.push(format!("<unseen {}>", label_names.len()));
    }
    ds.label_names = label_names;
    ds.group_names = names_of(&group_map);
    Ok(ds)
}
