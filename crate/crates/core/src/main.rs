use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use fairfl::experiment::{
    emit_pareto, read_pareto_points, run, sweep, write_pareto, write_run, write_sweep, DataSource, CsvData,
    ExperimentConfig, Method, Partition,
};
use fairfl::fairness::Criterion;
use fairfl::Error;

#[derive(Parser)]
#[command(name = "fairfl", version, about = "Group-fair federated classification experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write its report.
    Run(Overrides),
    /// Run the config's grid over methods, slacks and seeds.
    Sweep(Overrides),
    /// Mark dominated (accuracy, disparity) points in run CSVs.
    Pareto {
        /// `runs.csv` or `row.csv` files.
        #[arg(long = "input", required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long, default_value = "global", value_parser = ["global", "local"])]
        metric: String,
        #[arg(long, default_value = "pareto.csv")]
        out: PathBuf,
    },
    /// Compare post-processing with the exact LP optimum on a finite instance.
    Oracle(Overrides),
}

#[derive(Args, Default)]
struct Overrides {
    /// TOML experiment file; built-in defaults otherwise.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    method: Option<String>,
    #[arg(long, value_parser = ["dp", "eop", "eo"])]
    criterion: Option<String>,
    #[arg(long, allow_negative_numbers = true)]
    xi_global: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    xi_local: Option<f64>,
    #[arg(long)]
    clients: Option<usize>,
    /// Switches to a Dirichlet partition with this concentration.
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    rounds: Option<usize>,
    #[arg(long)]
    local_rounds: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    lr_dual: Option<f64>,
    #[arg(long)]
    lr_weight: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    dual_bound: Option<f64>,
    #[arg(long)]
    drop_degenerate_probes: bool,
    /// Read samples from a CSV instead of the synthetic generator.
    #[arg(long)]
    dataset_csv: Option<PathBuf>,
    #[arg(long, default_value = "label")]
    label_col: String,
    #[arg(long, default_value = "group")]
    group_col: String,
    #[arg(long)]
    client_col: Option<String>,
}

impl Overrides {
    fn resolve(&self) -> Result<ExperimentConfig, Error> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(o) = &self.out {
            cfg.out = Some(o.clone());
        }
        if let Some(m) = &self.method {
            cfg.method = m.parse::<Method>()?;
        }
        if let Some(c) = &self.criterion {
            cfg.fairness.criterion = c.parse::<Criterion>().map_err(|e| Error::Config(e.to_string()))?;
        }
        if let Some(v) = self.xi_global {
            cfg.fairness.xi_global = v;
        }
        if let Some(v) = self.xi_local {
            cfg.fairness.xi_local = v;
        }
        if let Some(path) = &self.dataset_csv {
            cfg.data = DataSource::Csv(CsvData {
                path: path.clone(),
                label_col: self.label_col.clone(),
                group_col: self.group_col.clone(),
                client_col: self.client_col.clone(),
            });
            if self.client_col.is_some() && self.clients.is_none() && self.gamma.is_none() {
                cfg.partition = Partition::Given;
            }
        }
        if let Some(g) = self.gamma {
            let clients = self.clients.unwrap_or(match cfg.partition {
                Partition::Hetero { clients, .. } | Partition::Dirichlet { clients, .. } => clients,
                Partition::Given => 2,
            });
            cfg.partition = Partition::Dirichlet { clients, gamma: g };
        }
        if let Some(n) = self.clients {
            match &mut cfg.partition {
                Partition::Hetero { clients, .. } | Partition::Dirichlet { clients, .. } => *clients = n,
                Partition::Given => return Err(Error::Config("--clients needs a hetero or dirichlet partition".into())),
            }
            cfg.oracle.clients = n;
        }
        if let Some(r) = self.rounds {
            match cfg.method {
                Method::FedAvg => cfg.train.rounds = r,
                Method::Inprocessing => cfg.inprocessing.rounds = r,
                Method::Postprocessing | Method::Oracle => cfg.postprocessing.rounds = r,
            }
        }
        if let Some(r) = self.local_rounds {
            cfg.train.local.steps = r;
            cfg.inprocessing.local.steps = r;
            cfg.postprocessing.local_rounds = r;
        }
        if let Some(v) = self.lr {
            cfg.train.local.lr = v;
            cfg.inprocessing.local.lr = v;
        }
        if let Some(v) = self.lr_dual {
            cfg.inprocessing.lr_dual = v;
            cfg.postprocessing.lr_dual = v;
        }
        if let Some(v) = self.lr_weight {
            cfg.inprocessing.lr_weight = v;
        }
        if let Some(v) = self.beta {
            cfg.postprocessing.beta = v;
        }
        if let Some(v) = self.dual_bound {
            cfg.inprocessing.dual_bound = v;
            cfg.postprocessing.dual_bound = v;
        }
        if self.drop_degenerate_probes {
            cfg.inprocessing.drop_degenerate = true;
            cfg.postprocessing.drop_degenerate = true;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn out_dir(cfg: &ExperimentConfig, fallback: &str) -> PathBuf {
    cfg.out.clone().unwrap_or_else(|| PathBuf::from(fallback))
}

fn execute(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Run(o) => {
            let cfg = o.resolve()?;
            let out = run(&cfg)?;
            let dir = out_dir(&cfg, "runs/latest");
            write_run(&dir, &out)?;
            let (acc, g, l) = out.report.headline();
            println!("{} seed {}: accuracy {acc:.4}, global {g:.4}, local {l:.4}", cfg.method, cfg.seed);
            println!("wrote {}", dir.display());
        }
        Command::Oracle(o) => {
            let mut cfg = o.resolve()?;
            cfg.method = Method::Oracle;
            let out = run(&cfg)?;
            let dir = out_dir(&cfg, "runs/oracle");
            write_run(&dir, &out)?;
            let s = out.report.oracle.as_ref().expect("oracle summary");
            println!(
                "LP risk {:.6}, post-processing risk {:.6}, max violation {:.2e}",
                s.lp_risk, s.postprocessing_risk, s.postprocessing_max_violation
            );
            println!("wrote {}", dir.display());
        }
        Command::Sweep(o) => {
            let cfg = o.resolve()?;
            let out = sweep(&cfg)?;
            let dir = out_dir(&cfg, "runs/sweep");
            write_sweep(&dir, &out)?;
            let failed = out.results.iter().filter(|r| r.is_err()).count();
            println!("{} runs, {failed} failed", out.results.len());
            for m in &out.monotonicity {
                println!(
                    "{}: worst accuracy drop when loosening {:.4} (tolerance {}), monotone {}",
                    m.method, m.worst_drop, m.tolerance, m.monotone
                );
            }
            println!("wrote {}", dir.display());
        }
        Command::Pareto { inputs, metric, out } => {
            let col = format!("{metric}_max");
            let mut points = Vec::new();
            for path in &inputs {
                points.extend(read_pareto_points(path, &col)?);
            }
            let rows = emit_pareto(&points)?;
            write_pareto(&out, &rows)?;
            println!("{} of {} points on the frontier", rows.iter().filter(|r| !r.dominated).count(), rows.len());
        }
    }
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Numeric(_) => 3,
        Error::Config(_)
        | Error::Schema(_)
        | Error::InvalidArgument(_)
        | Error::Unsupported(_)
        | Error::DegenerateProbe { .. }
        | Error::EmptyCell { .. } => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
