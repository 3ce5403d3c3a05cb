//! Experiment configuration, end-to-end runs, slack sweeps and Pareto
//! extraction. Reports are deterministic for a fixed config; wall-clock
//! timing is kept out of the report so reruns compare byte for byte.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{load_csv, CsvSchema, FederatedDataset};
use crate::error::{Error, Result};
use crate::fairness::{
    accuracy, risk_from_confusions, ConfusionSet, ConstraintSet, Criterion, DisparityReport, FairnessSpec, RiskMatrix,
    Scopes,
};
use crate::federated::{client_views, predict_views, run_fedavg, FedAvgConfig};
use crate::inprocessing::{run_inprocessing, InprocessingConfig, RoundReport};
use crate::oracle::{
    enumerate_deterministic, evaluate, solve_primal_lp, ClassifierTable, DiscreteInstance, OracleMode,
    OracleSolution, ENUMERATION_BUDGET,
};
use crate::partition::{dirichlet_partition, heterogeneous_split};
use crate::postprocessing::{pretrain_plugin, run_postprocessing, PluginScores, PostprocessingConfig};
use crate::stats::compute_stats;
use crate::synth::{synth_gaussian_mixture, SyntheticSpec};

/// Accuracy drop tolerated by the sweep monotonicity check.
pub const MONOTONE_TOL: f64 = 0.005;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default)]
pub enum Method {
    #[serde(rename = "fedavg-baseline", alias = "fedavg")]
    FedAvg,
    #[serde(rename = "inprocessing")]
    Inprocessing,
    #[default]
    #[serde(rename = "postprocessing")]
    Postprocessing,
    #[serde(rename = "oracle")]
    Oracle,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::FedAvg => "fedavg-baseline",
            Method::Inprocessing => "inprocessing",
            Method::Postprocessing => "postprocessing",
            Method::Oracle => "oracle",
        })
    }
}

impl std::str::FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fedavg" | "fedavg-baseline" => Ok(Method::FedAvg),
            "inprocessing" | "in" => Ok(Method::Inprocessing),
            "postprocessing" | "post" => Ok(Method::Postprocessing),
            "oracle" => Ok(Method::Oracle),
            other => Err(Error::Config(format!("unknown method `{other}`"))),
        }
    }
}

/// Parameters of the built-in two-group generator, or an explicit mixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticData {
    pub n: usize,
    pub base_rates: (f64, f64),
    pub separation: f64,
    pub group_shift: f64,
    /// Overrides the generator when present.
    pub spec: Option<SyntheticSpec>,
}

impl Default for SyntheticData {
    fn default() -> Self {
        Self { n: 4000, base_rates: (0.40, 0.55), separation: 1.0, group_shift: 1.0, spec: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvData {
    pub path: PathBuf,
    pub label_col: String,
    pub group_col: String,
    #[serde(default)]
    pub client_col: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase")]
pub enum DataSource {
    Synthetic(SyntheticData),
    Csv(CsvData),
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Synthetic(SyntheticData::default())
    }
}

fn default_clients() -> usize {
    2
}

fn default_range() -> (f64, f64) {
    (0.2, 0.8)
}

fn default_gamma() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Partition {
    /// Label/group correlated split with per-client weights in `range`.
    Hetero {
        #[serde(default = "default_clients")]
        clients: usize,
        #[serde(default = "default_range")]
        range: (f64, f64),
    },
    /// Group proportions per client drawn from `Dir(gamma)`.
    Dirichlet {
        #[serde(default = "default_clients")]
        clients: usize,
        #[serde(default = "default_gamma")]
        gamma: f64,
    },
    /// Keep the clients of the source (CSV client column or mixture cells).
    Given,
}

impl Default for Partition {
    fn default() -> Self {
        Partition::Hetero { clients: default_clients(), range: default_range() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleConfig {
    pub points: usize,
    pub groups: usize,
    pub classes: usize,
    pub clients: usize,
    pub mode: OracleMode,
    /// JSON instance file; a random instance is drawn from the seed otherwise.
    pub instance: Option<PathBuf>,
    /// Jittered copies per support point fed to post-processing.
    pub copies: usize,
    pub jitter: f64,
    /// Also enumerate deterministic classifiers when within budget.
    pub enumerate: bool,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            points: 6,
            groups: 2,
            classes: 2,
            clients: 2,
            mode: OracleMode::AttributeAware,
            instance: None,
            copies: 1,
            jitter: 0.0,
            enumerate: false,
        }
    }
}

/// Grid over methods, slacks and seeds; an absent list keeps the base value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct SweepGrid {
    pub methods: Option<Vec<Method>>,
    pub xi_global: Option<Vec<f64>>,
    pub xi_local: Option<Vec<f64>>,
    pub seeds: Option<Vec<u64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub method: Method,
    pub seed: u64,
    /// Held-out fraction per client; 0 evaluates on the training data only.
    pub test_fraction: f64,
    /// Min-max scale features with ranges taken from the training split.
    pub normalize: bool,
    pub out: Option<PathBuf>,
    pub data: DataSource,
    pub partition: Partition,
    pub fairness: FairnessSpec,
    /// Plug-in pretraining and the FedAvg baseline.
    pub train: FedAvgConfig,
    pub inprocessing: InprocessingConfig,
    pub postprocessing: PostprocessingConfig,
    pub oracle: OracleConfig,
    pub sweep: Option<SweepGrid>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            method: Method::default(),
            seed: 0,
            test_fraction: 0.4,
            normalize: false,
            out: None,
            data: DataSource::default(),
            partition: Partition::default(),
            fairness: FairnessSpec::default(),
            train: FedAvgConfig::default(),
            inprocessing: InprocessingConfig::default(),
            postprocessing: PostprocessingConfig::default(),
            oracle: OracleConfig::default(),
            sweep: None,
        }
    }
}

fn config_err(e: impl fmt::Display) -> Error {
    Error::Config(e.to_string())
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(config_err)?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| Error::Config(format!("{}: {e}", path.as_ref().display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(config_err)
    }

    /// Checks every field the chosen method reads, before any compute.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(0.0..1.0).contains(&self.test_fraction) {
            return bad(format!("test_fraction must lie in [0, 1), got {}", self.test_fraction));
        }
        self.fairness.validate().map_err(config_err)?;
        match &self.partition {
            Partition::Hetero { clients, range } => {
                if *clients == 0 {
                    return bad("partition needs at least one client".into());
                }
                if !(0.0 <= range.0 && range.0 <= range.1 && range.1 <= 1.0) {
                    return bad(format!("hetero range must satisfy 0 <= a <= b <= 1, got {range:?}"));
                }
            }
            Partition::Dirichlet { clients, gamma } => {
                if *clients < 2 {
                    return bad("dirichlet partition needs at least 2 clients".into());
                }
                if !(*gamma > 0.0 && gamma.is_finite()) {
                    return bad(format!("gamma must be positive, got {gamma}"));
                }
            }
            Partition::Given => {}
        }
        if let DataSource::Synthetic(s) = &self.data {
            if s.spec.is_none() && s.n < 8 {
                return bad(format!("synthetic n must be at least 8, got {}", s.n));
            }
            let (a, b) = s.base_rates;
            if !((0.0..=1.0).contains(&a) && (0.0..=1.0).contains(&b)) {
                return bad(format!("base rates must lie in [0, 1], got {:?}", s.base_rates));
            }
        }
        if self.train.rounds == 0 || self.train.local.steps == 0 || self.train.local.batch_size == 0 {
            return bad("train rounds, steps and batch size must be positive".into());
        }
        match self.method {
            Method::Inprocessing => {
                let c = &self.inprocessing;
                if c.rounds == 0 || c.local.steps == 0 || !(c.lr_dual > 0.0) || !(c.dual_bound > 0.0) {
                    return bad("inprocessing rounds, steps, lr_dual and dual_bound must be positive".into());
                }
            }
            Method::Postprocessing | Method::Oracle => {
                let c = &self.postprocessing;
                if c.rounds == 0 || !(c.lr_dual > 0.0) || !(c.dual_bound > 0.0) || !(c.beta > 0.0) {
                    return bad("postprocessing rounds, lr_dual, dual_bound and beta must be positive".into());
                }
            }
            Method::FedAvg => {}
        }
        if self.method == Method::Oracle {
            let o = &self.oracle;
            if o.instance.is_none() && (o.points == 0 || o.groups == 0 || o.classes < 2 || o.clients == 0) {
                return bad("oracle instance needs points, groups and clients >= 1 and classes >= 2".into());
            }
            if o.copies == 0 || !(o.jitter >= 0.0) {
                return bad("oracle copies must be >= 1 and jitter >= 0".into());
            }
        }
        Ok(())
    }
}

/// Accuracy and both disparity scopes of one classifier on one split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitMetrics {
    pub accuracy: f64,
    pub global_max: f64,
    pub local_max: f64,
    pub disparities: DisparityReport,
}

impl SplitMetrics {
    fn from_predictions(data: &FederatedDataset, preds: &[Vec<usize>], criterion: Criterion) -> Result<Self> {
        let disparities = DisparityReport::evaluate(data, preds, criterion)?;
        Ok(Self::new(accuracy(data, preds), disparities))
    }

    fn from_confusions(data: &FederatedDataset, conf: &ConfusionSet, criterion: Criterion) -> Result<Self> {
        let stats = compute_stats(data);
        let set = ConstraintSet::build_scopes(criterion, Scopes::Both, &stats, true)?;
        let disparities = DisparityReport::compute(&set, conf, criterion)?;
        let risk = risk_from_confusions(conf, &stats, &RiskMatrix::classification_error(data.num_classes()));
        Ok(Self::new(1.0 - risk, disparities))
    }

    fn new(accuracy: f64, disparities: DisparityReport) -> Self {
        Self { accuracy, global_max: disparities.global_max, local_max: disparities.local_max, disparities }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleSummary {
    pub bayes_accuracy: f64,
    pub lp_risk: f64,
    pub lp_tight_constraints: usize,
    pub postprocessing_risk: f64,
    pub postprocessing_global_max: f64,
    pub postprocessing_local_max: f64,
    /// Largest `|𝒟| − ξ` of the post-processed table; negative when slack.
    pub postprocessing_max_violation: f64,
    pub deterministic_best_risk: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub method: Method,
    pub seed: u64,
    pub train: Option<SplitMetrics>,
    pub test: Option<SplitMetrics>,
    /// Exact metrics of the in-processing mixture over the final rounds.
    pub mixture_test: Option<SplitMetrics>,
    pub oracle: Option<OracleSummary>,
    /// Post-processing objective per round.
    pub trajectory: Vec<f64>,
    pub rounds: Vec<RoundReport>,
    pub config: ExperimentConfig,
}

impl ExperimentReport {
    /// `(accuracy, global, local)` on the test split when there is one.
    pub fn headline(&self) -> (f64, f64, f64) {
        if let Some(m) = self.test.as_ref().or(self.train.as_ref()) {
            return (m.accuracy, m.global_max, m.local_max);
        }
        match &self.oracle {
            Some(o) => (1.0 - o.postprocessing_risk, o.postprocessing_global_max, o.postprocessing_local_max),
            None => (f64::NAN, f64::NAN, f64::NAN),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub data_seconds: f64,
    pub fit_seconds: f64,
    pub eval_seconds: f64,
}

#[derive(Debug)]
pub struct RunOutput {
    pub report: ExperimentReport,
    pub timing: Timing,
    pub oracle_artifacts: Option<(DiscreteInstance, OracleSolution)>,
}

/// Partitioned train and optional test splits described by the config.
pub fn prepare_data(cfg: &ExperimentConfig) -> Result<(FederatedDataset, Option<FederatedDataset>)> {
    let seed = cfg.seed;
    let raw = match &cfg.data {
        DataSource::Synthetic(s) => {
            let spec = match &s.spec {
                Some(spec) => spec.clone(),
                None => SyntheticSpec::biased_binary(s.n, s.base_rates, s.separation, s.group_shift),
            };
            synth_gaussian_mixture(&spec, seed)?
        }
        DataSource::Csv(c) => {
            let schema =
                CsvSchema { label_col: c.label_col.clone(), group_col: c.group_col.clone(), client_col: c.client_col.clone() };
            load_csv(&c.path, &schema)?
        }
    };
    let data = match &cfg.partition {
        Partition::Hetero { clients, range } => heterogeneous_split(&raw.pooled(), *clients, *range, seed)?,
        Partition::Dirichlet { clients, gamma } => dirichlet_partition(&raw.pooled(), *clients, *gamma, seed)?,
        Partition::Given => raw,
    };
    let (mut train, mut test) = if cfg.test_fraction > 0.0 {
        let (a, b) = data.train_test_split(cfg.test_fraction, seed)?;
        (a, Some(b))
    } else {
        (data, None)
    };
    if cfg.normalize {
        let ranges = train.min_max_ranges();
        train.apply_min_max(&ranges);
        if let Some(t) = test.as_mut() {
            t.apply_min_max(&ranges);
        }
    }
    Ok((train, test))
}

fn seeded<T: Clone>(c: &T, seed: u64, set: impl Fn(&mut T, u64)) -> T {
    let mut out = c.clone();
    set(&mut out, seed);
    out
}

/// End-to-end run of one configuration.
pub fn run(cfg: &ExperimentConfig) -> Result<RunOutput> {
    cfg.validate()?;
    if cfg.method == Method::Oracle {
        return run_oracle(cfg);
    }
    let criterion = cfg.fairness.criterion;
    let t0 = Instant::now();
    let (train, test) = prepare_data(cfg)?;
    let data_seconds = t0.elapsed().as_secs_f64();
    let train_cfg = seeded(&cfg.train, cfg.seed, |c, s| c.seed = s);

    let mut report = ExperimentReport {
        method: cfg.method,
        seed: cfg.seed,
        train: None,
        test: None,
        mixture_test: None,
        oracle: None,
        trajectory: Vec::new(),
        rounds: Vec::new(),
        config: cfg.clone(),
    };
    let t1 = Instant::now();
    let fit_seconds;
    let t2;
    match cfg.method {
        Method::FedAvg => {
            let model = run_fedavg(&client_views(&train, false), train.num_classes(), &train_cfg)?;
            if model.params().iter().any(|p| !p.is_finite()) {
                return Err(Error::Numeric("FedAvg training diverged".into()));
            }
            fit_seconds = t1.elapsed().as_secs_f64();
            t2 = Instant::now();
            let eval = |d: &FederatedDataset| {
                SplitMetrics::from_predictions(d, &predict_views(&model, &client_views(d, false)), criterion)
            };
            report.train = Some(eval(&train)?);
            report.test = test.as_ref().map(eval).transpose()?;
        }
        Method::Inprocessing => {
            let in_cfg = seeded(&cfg.inprocessing, cfg.seed, |c, s| c.seed = s);
            let res = run_inprocessing(&train, &cfg.fairness, &in_cfg)?;
            fit_seconds = t1.elapsed().as_secs_f64();
            t2 = Instant::now();
            let eval = |d: &FederatedDataset| SplitMetrics::from_predictions(d, &res.state.predict_dataset(d), criterion);
            report.train = Some(eval(&train)?);
            report.test = test.as_ref().map(eval).transpose()?;
            if let Some(t) = test.as_ref() {
                report.mixture_test = Some(SplitMetrics::from_confusions(t, &res.mixture.confusions(t)?, criterion)?);
            }
            report.rounds = res.reports;
        }
        Method::Postprocessing => {
            let (model, scores) = pretrain_plugin(&train, &train_cfg)?;
            let stats = scores.label_stats()?;
            let out = run_postprocessing(&scores, &stats, &cfg.fairness, &cfg.postprocessing)?;
            fit_seconds = t1.elapsed().as_secs_f64();
            t2 = Instant::now();
            let eval = |d: &FederatedDataset| -> Result<SplitMetrics> {
                let s = PluginScores::from_model(&model, d)?;
                SplitMetrics::from_predictions(d, &out.classifier.predict_scores(&s), criterion)
            };
            report.train = Some(eval(&train)?);
            report.test = test.as_ref().map(eval).transpose()?;
            report.trajectory = out.trajectory;
        }
        Method::Oracle => unreachable!(),
    }
    let timing = Timing { data_seconds, fit_seconds, eval_seconds: t2.elapsed().as_secs_f64() };
    Ok(RunOutput { report, timing, oracle_artifacts: None })
}

fn run_oracle(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let o = &cfg.oracle;
    let t0 = Instant::now();
    let instance = match &o.instance {
        Some(path) => DiscreteInstance::from_json(&std::fs::read_to_string(path)?)?,
        None => DiscreteInstance::random(o.points, o.groups, o.classes, o.clients, cfg.seed),
    };
    instance.validate()?;
    let data_seconds = t0.elapsed().as_secs_f64();

    let t1 = Instant::now();
    let spec = &cfg.fairness;
    let lp = solve_primal_lp(&instance, spec, o.mode)?;
    let (scores, cells) = instance.plugin_scores();
    let scores = scores.expand_jitter(o.copies, o.jitter, cfg.seed);
    let out = run_postprocessing(&scores, &instance.stats(), spec, &cfg.postprocessing)?;
    let preds = out.classifier.predict_scores(&scores);
    let fit_seconds = t1.elapsed().as_secs_f64();

    let t2 = Instant::now();
    let votes = scores.clients.iter().enumerate().flat_map(|(k, rows)| {
        let (cells, preds) = (&cells[k], &preds[k]);
        rows.iter().enumerate().map(move |(j, r)| {
            let (x, a) = cells[j / o.copies];
            (k, x, a, preds[j], r.weight)
        })
    });
    let table = ClassifierTable::from_votes(&instance, votes);
    let eval = evaluate(&instance, spec, &table)?;
    // over-budget enumeration is skipped rather than failing the run
    let deterministic_best_risk = if o.enumerate {
        match enumerate_deterministic(&instance, spec, o.mode, ENUMERATION_BUDGET) {
            Ok(e) => Some(e.best_risk).filter(|r| r.is_finite()),
            Err(Error::Budget(_)) => None,
            Err(e) => return Err(e),
        }
    } else {
        None
    };
    let summary = OracleSummary {
        bayes_accuracy: instance.bayes_accuracy(),
        lp_risk: lp.risk,
        lp_tight_constraints: lp.tight_constraints,
        postprocessing_risk: eval.risk,
        postprocessing_global_max: eval.max_global(),
        postprocessing_local_max: eval.max_local(),
        postprocessing_max_violation: eval.max_violation(spec),
        deterministic_best_risk,
    };
    let report = ExperimentReport {
        method: Method::Oracle,
        seed: cfg.seed,
        train: None,
        test: None,
        mixture_test: None,
        oracle: Some(summary),
        trajectory: out.trajectory,
        rounds: Vec::new(),
        config: cfg.clone(),
    };
    let timing = Timing { data_seconds, fit_seconds, eval_seconds: t2.elapsed().as_secs_f64() };
    Ok(RunOutput { report, timing, oracle_artifacts: Some((instance, lp)) })
}

/// 17 significant digits.
pub fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}

pub const ROW_HEADER: [&str; 14] = [
    "method",
    "seed",
    "criterion",
    "scopes",
    "xi_global",
    "xi_local",
    "clients",
    "accuracy",
    "global_max",
    "local_max",
    "train_accuracy",
    "train_global_max",
    "train_local_max",
    "error",
];

/// Flat CSV record of one run, or of one failed run with its error.
pub fn csv_row(cfg: &ExperimentConfig, outcome: std::result::Result<&ExperimentReport, &Error>) -> Vec<String> {
    let clients = match (&cfg.partition, cfg.method) {
        (_, Method::Oracle) => cfg.oracle.clients.to_string(),
        (Partition::Hetero { clients, .. } | Partition::Dirichlet { clients, .. }, _) => clients.to_string(),
        (Partition::Given, _) => String::new(),
    };
    let mut row = vec![
        cfg.method.to_string(),
        cfg.seed.to_string(),
        cfg.fairness.criterion.to_string(),
        format!("{:?}", cfg.fairness.scopes).to_ascii_lowercase(),
        fmt_float(cfg.fairness.xi_global),
        fmt_float(cfg.fairness.xi_local),
        clients,
    ];
    match outcome {
        Ok(r) => {
            let (a, g, l) = r.headline();
            row.extend([a, g, l].map(fmt_float));
            match &r.train {
                Some(t) => row.extend([t.accuracy, t.global_max, t.local_max].map(fmt_float)),
                None => row.extend(std::iter::repeat_n(String::new(), 3)),
            }
            row.push(String::new());
        }
        Err(e) => {
            row.extend(std::iter::repeat_n(String::new(), 6));
            row.push(e.to_string());
        }
    }
    row
}

fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Io(e.into()))?;
    w.write_record(header).map_err(|e| Error::Io(e.into()))?;
    for r in rows {
        w.write_record(r).map_err(|e| Error::Io(e.into()))?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `report.json`, `row.csv`, `rounds.jsonl`, `timing.json` and the
/// resolved `config.toml` into `dir`.
pub fn write_run(dir: &Path, out: &RunOutput) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let r = &out.report;
    std::fs::write(dir.join("report.json"), to_json(r)?)?;
    std::fs::write(dir.join("config.toml"), r.config.to_toml()?)?;
    std::fs::write(dir.join("timing.json"), to_json(&out.timing)?)?;
    write_csv(&dir.join("row.csv"), &ROW_HEADER, &[csv_row(&r.config, Ok(r))])?;
    let mut lines = std::fs::File::create(dir.join("rounds.jsonl"))?;
    if r.rounds.is_empty() {
        for (t, v) in r.trajectory.iter().enumerate() {
            writeln!(lines, "{}", serde_json::json!({ "round": t, "objective": v }))?;
        }
    } else {
        for round in &r.rounds {
            writeln!(lines, "{}", serde_json::to_string(round).map_err(|e| Error::Numeric(e.to_string()))?)?;
        }
    }
    if let Some((instance, solution)) = &out.oracle_artifacts {
        std::fs::write(dir.join("instance.json"), instance.to_json()?)?;
        std::fs::write(dir.join("solution.json"), to_json(solution)?)?;
    }
    Ok(())
}

fn to_json<T: Serialize>(v: &T) -> Result<String> {
    serde_json::to_string_pretty(v).map_err(|e| Error::Numeric(format!("serialization: {e}")))
}

/// Expand the config's grid in fixed order: method, ξ^g, ξ^l, seed.
pub fn expand_grid(cfg: &ExperimentConfig) -> Result<Vec<ExperimentConfig>> {
    let grid = cfg.sweep.clone().unwrap_or_default();
    fn axis<T: Clone>(name: &str, list: Option<Vec<T>>, base: T) -> Result<Vec<T>> {
        match list {
            Some(v) if v.is_empty() => Err(Error::Config(format!("sweep axis `{name}` is empty"))),
            Some(v) => Ok(v),
            None => Ok(vec![base]),
        }
    }
    let methods = axis("methods", grid.methods, cfg.method)?;
    let xg = axis("xi_global", grid.xi_global, cfg.fairness.xi_global)?;
    let xl = axis("xi_local", grid.xi_local, cfg.fairness.xi_local)?;
    let seeds = axis("seeds", grid.seeds, cfg.seed)?;
    let mut out = Vec::new();
    for &method in &methods {
        for &g in &xg {
            for &l in &xl {
                for &seed in &seeds {
                    let mut c = cfg.clone();
                    c.sweep = None;
                    c.method = method;
                    c.fairness.xi_global = g;
                    c.fairness.xi_local = l;
                    c.seed = seed;
                    out.push(c);
                }
            }
        }
    }
    Ok(out)
}

/// Mean and sample standard deviation over the seeds of one grid point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub method: Method,
    pub xi_global: f64,
    pub xi_local: f64,
    pub runs: usize,
    pub failures: usize,
    pub accuracy_mean: f64,
    pub accuracy_std: f64,
    pub global_mean: f64,
    pub global_std: f64,
    pub local_mean: f64,
    pub local_std: f64,
}

/// Does mean accuracy rise as both slacks loosen? `worst_drop` is the largest
/// accuracy loss between a grid point and any componentwise looser one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonotonicitySummary {
    pub method: Method,
    pub worst_drop: f64,
    pub tolerance: f64,
    pub monotone: bool,
}

#[derive(Debug)]
pub struct SweepOutput {
    pub configs: Vec<ExperimentConfig>,
    pub results: Vec<Result<ExperimentReport>>,
    pub groups: Vec<GroupSummary>,
    pub monotonicity: Vec<MonotonicitySummary>,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Run every grid point in parallel; failures are kept per row.
pub fn sweep(cfg: &ExperimentConfig) -> Result<SweepOutput> {
    let configs = expand_grid(cfg)?;
    if configs.is_empty() {
        return Err(Error::Config("sweep grid is empty".into()));
    }
    let results: Vec<Result<ExperimentReport>> =
        configs.par_iter().map(|c| run(c).map(|o| o.report)).collect();

    let mut order: Vec<(Method, u64, u64)> = Vec::new();
    let mut buckets: BTreeMap<(Method, u64, u64), (Vec<[f64; 3]>, usize)> = BTreeMap::new();
    for (c, r) in configs.iter().zip(&results) {
        let key = (c.method, c.fairness.xi_global.to_bits(), c.fairness.xi_local.to_bits());
        let entry = buckets.entry(key).or_insert_with(|| {
            order.push(key);
            (Vec::new(), 0)
        });
        match r {
            Ok(rep) => {
                let (a, g, l) = rep.headline();
                entry.0.push([a, g, l]);
            }
            Err(_) => entry.1 += 1,
        }
    }
    let groups: Vec<GroupSummary> = order
        .iter()
        .map(|key| {
            let (vals, failures) = &buckets[key];
            let col = |i: usize| mean_std(&vals.iter().map(|v| v[i]).collect::<Vec<_>>());
            let ((am, asd), (gm, gsd), (lm, lsd)) = (col(0), col(1), col(2));
            GroupSummary {
                method: key.0,
                xi_global: f64::from_bits(key.1),
                xi_local: f64::from_bits(key.2),
                runs: vals.len() + failures,
                failures: *failures,
                accuracy_mean: am,
                accuracy_std: asd,
                global_mean: gm,
                global_std: gsd,
                local_mean: lm,
                local_std: lsd,
            }
        })
        .collect();

    let mut methods: Vec<Method> = groups.iter().map(|g| g.method).collect();
    methods.dedup();
    let monotonicity = methods
        .into_iter()
        .map(|method| {
            let pts: Vec<&GroupSummary> = groups.iter().filter(|g| g.method == method).collect();
            let mut worst = 0.0f64;
            for p in &pts {
                for q in &pts {
                    if q.xi_global >= p.xi_global && q.xi_local >= p.xi_local {
                        worst = worst.max(p.accuracy_mean - q.accuracy_mean);
                    }
                }
            }
            MonotonicitySummary { method, worst_drop: worst, tolerance: MONOTONE_TOL, monotone: worst <= MONOTONE_TOL }
        })
        .collect();
    Ok(SweepOutput { configs, results, groups, monotonicity })
}

/// Writes `runs.csv`, `summary.csv` and `monotonicity.json` into `dir`.
pub fn write_sweep(dir: &Path, out: &SweepOutput) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let rows: Vec<Vec<String>> =
        out.configs.iter().zip(&out.results).map(|(c, r)| csv_row(c, r.as_ref())).collect();
    write_csv(&dir.join("runs.csv"), &ROW_HEADER, &rows)?;
    let header = [
        "method",
        "xi_global",
        "xi_local",
        "runs",
        "failures",
        "accuracy_mean",
        "accuracy_std",
        "global_mean",
        "global_std",
        "local_mean",
        "local_std",
    ];
    let rows: Vec<Vec<String>> = out
        .groups
        .iter()
        .map(|g| {
            let mut r = vec![g.method.to_string(), fmt_float(g.xi_global), fmt_float(g.xi_local)];
            r.extend([g.runs, g.failures].map(|v| v.to_string()));
            r.extend(
                [g.accuracy_mean, g.accuracy_std, g.global_mean, g.global_std, g.local_mean, g.local_std]
                    .map(fmt_float),
            );
            r
        })
        .collect();
    write_csv(&dir.join("summary.csv"), &header, &rows)?;
    std::fs::write(dir.join("monotonicity.json"), to_json(&out.monotonicity)?)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoPoint {
    pub label: String,
    pub accuracy: f64,
    pub disparity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoRow {
    pub label: String,
    pub accuracy: f64,
    pub disparity: f64,
    pub dominated: bool,
}

/// Flags points beaten on both accuracy (higher) and disparity (lower).
pub fn emit_pareto(points: &[ParetoPoint]) -> Result<Vec<ParetoRow>> {
    if points.len() < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 reports, got {}", points.len())));
    }
    Ok(points
        .iter()
        .map(|p| {
            let dominated = points.iter().any(|q| {
                q.accuracy >= p.accuracy
                    && q.disparity <= p.disparity
                    && (q.accuracy > p.accuracy || q.disparity < p.disparity)
            });
            ParetoRow { label: p.label.clone(), accuracy: p.accuracy, disparity: p.disparity, dominated }
        })
        .collect())
}

/// Points from run CSVs; rows with an error are skipped.
pub fn read_pareto_points(path: &Path, disparity_col: &str) -> Result<Vec<ParetoPoint>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::Io(e.into()))?;
    let headers = rdr.headers().map_err(|e| Error::Io(e.into()))?.clone();
    let col = |name: &str| {
        headers.iter().position(|h| h == name).ok_or_else(|| Error::Schema(format!("{}: no `{name}` column", path.display())))
    };
    let (ia, id, ie) = (col("accuracy")?, col(disparity_col)?, col("error")?);
    let label_cols: Vec<usize> =
        ["method", "xi_global", "xi_local", "seed"].iter().filter_map(|n| headers.iter().position(|h| h == *n)).collect();
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::Csv { row: i + 2, message: e.to_string() })?;
        if !rec.get(ie).unwrap_or("").is_empty() {
            continue;
        }
        let num = |j: usize| {
            rec.get(j)
                .unwrap_or("")
                .parse::<f64>()
                .map_err(|e| Error::Csv { row: i + 2, message: e.to_string() })
        };
        let label = label_cols
            .iter()
            .map(|&j| {
                let v = rec.get(j).unwrap_or("");
                v.parse::<f64>().ok().filter(|_| v.contains('e')).map(|x| x.to_string()).unwrap_or_else(|| v.to_string())
            })
            .collect::<Vec<_>>()
            .join("/");
        out.push(ParetoPoint { label, accuracy: num(ia)?, disparity: num(id)? });
    }
    Ok(out)
}

pub fn write_pareto(path: &Path, rows: &[ParetoRow]) -> Result<()> {
    let recs: Vec<Vec<String>> = rows
        .iter()
        .map(|r| vec![r.label.clone(), fmt_float(r.accuracy), fmt_float(r.disparity), r.dominated.to_string()])
        .collect();
    write_csv(path, &["label", "accuracy", "disparity", "dominated"], &recs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(method: Method) -> ExperimentConfig {
        let mut cfg = ExperimentConfig { method, seed: 3, ..Default::default() };
        if let DataSource::Synthetic(s) = &mut cfg.data {
            s.n = 600;
        }
        cfg.train.rounds = 5;
        cfg.inprocessing.rounds = 5;
        cfg.postprocessing.rounds = 10;
        cfg
    }

    #[test]
    fn default_config_round_trips_through_toml() {
        let cfg = ExperimentConfig::default();
        let text = cfg.to_toml().unwrap();
        assert_eq!(ExperimentConfig::from_toml(&text).unwrap(), cfg);
    }

    #[test]
    fn partial_toml_fills_defaults() {
        let cfg = ExperimentConfig::from_toml(
            "method = \"inprocessing\"\n[fairness]\ncriterion = \"eo\"\nxi_global = 0.02\n[partition]\nkind = \"dirichlet\"\ngamma = 0.3\n",
        )
        .unwrap();
        assert_eq!(cfg.method, Method::Inprocessing);
        assert_eq!(cfg.fairness.criterion, Criterion::Eo);
        assert_eq!(cfg.fairness.xi_local, 0.01);
        assert_eq!(cfg.partition, Partition::Dirichlet { clients: 2, gamma: 0.3 });
        assert_eq!(cfg.inprocessing, InprocessingConfig::default());
    }

    #[test]
    fn unknown_keys_and_bad_values_are_config_errors() {
        assert!(matches!(ExperimentConfig::from_toml("methd = \"oracle\""), Err(Error::Config(_))));
        let cfg = ExperimentConfig { test_fraction: 1.5, ..Default::default() };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        let mut cfg = ExperimentConfig::default();
        cfg.fairness.xi_global = -1.0;
        assert!(matches!(run(&cfg), Err(Error::Config(_))));
    }

    #[test]
    fn fedavg_baseline_shows_bias() {
        let out = run(&small(Method::FedAvg)).unwrap();
        let test = out.report.test.unwrap();
        assert!(test.global_max > 0.0 && test.accuracy > 0.5);
    }

    #[test]
    fn reports_are_deterministic() {
        for method in [Method::Inprocessing, Method::Postprocessing, Method::Oracle] {
            let cfg = small(method);
            let a = to_json(&run(&cfg).unwrap().report).unwrap();
            let b = to_json(&run(&cfg).unwrap().report).unwrap();
            assert_eq!(a, b, "{method}");
        }
    }

    #[test]
    fn echoed_config_reproduces_the_report() {
        let out = run(&small(Method::Postprocessing)).unwrap();
        let echo = ExperimentConfig::from_toml(&out.report.config.to_toml().unwrap()).unwrap();
        assert_eq!(run(&echo).unwrap().report, out.report);
    }

    #[test]
    fn oracle_run_is_close_to_the_lp() {
        let mut cfg = small(Method::Oracle);
        cfg.fairness = FairnessSpec::new(Criterion::Dp, 1.0, 1.0, Scopes::Both);
        let o = run(&cfg).unwrap().report.oracle.unwrap();
        assert!((o.postprocessing_risk - o.lp_risk).abs() < 1e-8);
        assert!((1.0 - o.lp_risk - o.bayes_accuracy).abs() < 1e-8);
    }

    #[test]
    fn grid_expands_in_fixed_order() {
        let mut cfg = ExperimentConfig::default();
        cfg.sweep = Some(SweepGrid {
            methods: None,
            xi_global: Some(vec![0.0, 0.02, 0.04]),
            xi_local: Some(vec![0.0, 0.02, 0.04]),
            seeds: Some(vec![1, 2]),
        });
        let grid = expand_grid(&cfg).unwrap();
        assert_eq!(grid.len(), 18);
        assert_eq!((grid[0].fairness.xi_global, grid[0].fairness.xi_local, grid[0].seed), (0.0, 0.0, 1));
        assert_eq!((grid[3].fairness.xi_global, grid[3].fairness.xi_local, grid[3].seed), (0.0, 0.02, 2));
        assert!(grid.iter().all(|c| c.sweep.is_none()));
    }

    #[test]
    fn empty_grid_is_an_error() {
        let mut cfg = ExperimentConfig::default();
        cfg.sweep = Some(SweepGrid { xi_global: Some(vec![]), ..Default::default() });
        assert!(matches!(sweep(&cfg), Err(Error::Config(_))));
    }

    #[test]
    fn sweep_records_failures_and_aggregates_seeds() {
        let mut cfg = small(Method::Postprocessing);
        cfg.sweep = Some(SweepGrid {
            methods: None,
            xi_global: Some(vec![0.05, -1.0]),
            xi_local: None,
            seeds: Some(vec![1, 2]),
        });
        let out = sweep(&cfg).unwrap();
        assert_eq!(out.results.len(), 4);
        assert!(out.results[0].is_ok() && out.results[2].is_err());
        assert_eq!(out.groups.len(), 2);
        assert_eq!((out.groups[0].runs, out.groups[0].failures), (2, 0));
        assert_eq!(out.groups[1].failures, 2);
        assert!(out.groups[0].accuracy_std >= 0.0);
        let row = csv_row(&out.configs[2], out.results[2].as_ref());
        assert_eq!(row.len(), ROW_HEADER.len());
        assert!(!row.last().unwrap().is_empty());
    }

    #[test]
    fn pareto_examples() {
        let p = |label: &str, accuracy, disparity| ParetoPoint { label: label.into(), accuracy, disparity };
        let rows = emit_pareto(&[p("a", 0.8, 0.1), p("b", 0.7, 0.2)]).unwrap();
        assert_eq!(rows.iter().filter(|r| !r.dominated).count(), 1);
        assert!(rows[1].dominated);
        let chain = [p("a", 0.8, 0.3), p("b", 0.75, 0.2), p("c", 0.7, 0.1)];
        assert!(emit_pareto(&chain).unwrap().iter().all(|r| !r.dominated));
        assert!(emit_pareto(&chain[..1]).is_err());
    }

    #[test]
    fn run_files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let out = run(&small(Method::Inprocessing)).unwrap();
        write_run(dir.path(), &out).unwrap();
        let text = std::fs::read_to_string(dir.path().join("report.json")).unwrap();
        let back: ExperimentReport = serde_json::from_str(&text).unwrap();
        assert_eq!(back, out.report);
        let lines = std::fs::read_to_string(dir.path().join("rounds.jsonl")).unwrap();
        assert_eq!(lines.lines().count(), out.report.rounds.len());
        let pts = read_pareto_points(&dir.path().join("row.csv"), "global_max").unwrap();
        assert_eq!(pts.len(), 1);
        assert_eq!(pts[0].accuracy, out.report.test.as_ref().unwrap().accuracy);
    }
}
