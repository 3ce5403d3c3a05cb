//! End-to-end acceptance suite. Each criterion prints one PASS/FAIL line;
//! the test fails if any criterion does.

use std::time::Instant;

use fairfl::calibration::build_calibration;
use fairfl::data::FederatedDataset;
use fairfl::dual::{project_nonneg_l1_ball, DualState};
use fairfl::fairness::{
    accuracy, ConfusionSet, ConstraintSet, Criterion, DisparityReport, FairnessSpec, Scopes,
};
use fairfl::federated::{client_views, predict_views, run_fedavg, FedAvgConfig};
use fairfl::inprocessing::{run_inprocessing, InprocessingConfig};
use fairfl::model::{argmax, loss_gradient, Architecture, ScoringModel};
use fairfl::oracle::{
    dual_value, evaluate, solve_primal_lp, ClassifierTable, DiscreteInstance, OracleMode,
};
use fairfl::partition::{dirichlet_partition, heterogeneous_split};
use fairfl::postprocessing::{
    pretrain_plugin, rounds_to_converge, run_postprocessing, sigma_beta, PluginScores,
    PostprocessingConfig, PostprocessingResult, RelaxedObjective,
};
use fairfl::synth::{synth_gaussian_mixture, SyntheticSpec};
use proptest::prelude::*;
use proptest::test_runner::{Config as RunnerConfig, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

/// Instance shapes cycled through by the oracle criteria.
fn instance_shape(i: u64) -> (usize, usize, usize) {
    let shapes = [(8, 2, 2), (6, 3, 2), (4, 2, 1), (5, 3, 1), (8, 3, 2), (3, 2, 2), (7, 2, 2), (4, 3, 2), (2, 2, 1), (6, 2, 2)];
    shapes[i as usize % shapes.len()]
}

/// Classifier table from the per-row predictions of a calibrated classifier
/// on (possibly jittered) exact scores.
fn table_from_predictions(
    inst: &DiscreteInstance,
    scores: &PluginScores,
    cells: &[Vec<(usize, usize)>],
    copies: usize,
    preds: &[Vec<usize>],
) -> ClassifierTable {
    let votes = scores.clients.iter().enumerate().flat_map(|(k, rows)| {
        rows.iter().enumerate().map(move |(i, r)| {
            let (x, a) = cells[k][i / copies];
            (k, x, a, preds[k][i], r.weight)
        })
    });
    ClassifierTable::from_votes(inst, votes)
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let spec = FairnessSpec::new(Criterion::Dp, 1.0, 1.0, Scopes::Both);
    let (mut points, mut matched, mut worst_gap) = (0usize, 0usize, 0.0f64);
    for i in 0..10 {
        let (nx, nm, nk) = instance_shape(i);
        let inst = DiscreteInstance::random(nx, 2, nm, nk, 1000 + i);
        let (scores, cells) = inst.plugin_scores();
        let out = run_postprocessing(&scores, &inst.stats(), &spec, &PostprocessingConfig::default()).unwrap();
        let preds = out.classifier.predict_scores(&scores);
        for (k, rows) in scores.clients.iter().enumerate() {
            for (r, &p) in rows.iter().zip(&preds[k]) {
                points += 1;
                matched += usize::from(p == argmax(&r.eta));
            }
        }
        let table = table_from_predictions(&inst, &scores, &cells, 1, &preds);
        let risk = evaluate(&inst, &spec, &table).unwrap().risk;
        let lp = solve_primal_lp(&inst, &spec, OracleMode::AttributeAware).unwrap();
        worst_gap = worst_gap.max((risk - lp.risk).abs());
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        matched == points && worst_gap <= 1e-8 && secs < 5.0,
        format!("argmax match {matched}/{points}, max |risk - LP| = {worst_gap:.2e}, {secs:.2} s"),
    )
}

const C2_COPIES: usize = 40;
const C2_JITTER: f64 = 0.02;

fn criterion_2_config() -> PostprocessingConfig {
    PostprocessingConfig { rounds: 200, beta: 0.01, ..Default::default() }
}

/// Post-processing runs on the constrained oracle instances, shared with the
/// convergence criterion.
fn constrained_runs() -> Vec<(DiscreteInstance, PluginScores, Vec<Vec<(usize, usize)>>, PostprocessingResult)> {
    let spec = FairnessSpec::new(Criterion::Dp, 0.05, 0.05, Scopes::Both);
    (0..10)
        .map(|i| {
            let (nx, nm, nk) = instance_shape(i);
            let inst = DiscreteInstance::random(nx, 2, nm, nk, 2000 + i);
            let (exact, cells) = inst.plugin_scores();
            let scores = exact.expand_jitter(C2_COPIES, C2_JITTER, i);
            let out = run_postprocessing(&scores, &inst.stats(), &spec, &criterion_2_config()).unwrap();
            (inst, scores, cells, out)
        })
        .collect()
}

fn criterion_2(runs: &[(DiscreteInstance, PluginScores, Vec<Vec<(usize, usize)>>, PostprocessingResult)], secs: f64) -> Outcome {
    let spec = FairnessSpec::new(Criterion::Dp, 0.05, 0.05, Scopes::Both);
    let (mut worst_risk, mut worst_violation) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for (inst, scores, cells, out) in runs {
        let preds = out.classifier.predict_scores(scores);
        let table = table_from_predictions(inst, scores, cells, C2_COPIES, &preds);
        let eval = evaluate(inst, &spec, &table).unwrap();
        let lp = solve_primal_lp(inst, &spec, OracleMode::AttributeAware).unwrap();
        worst_risk = worst_risk.max(eval.risk - lp.risk);
        worst_violation = worst_violation.max(eval.max_violation(&spec));
    }
    outcome(
        worst_risk <= 0.02 && worst_violation <= 0.02 && secs < 60.0,
        format!("max risk - LP = {worst_risk:.4}, max |D| - xi = {worst_violation:.4}, {secs:.2} s"),
    )
}

fn criterion_3() -> Outcome {
    let (mut points, mut matched) = (0usize, 0usize);
    for i in 0..5u64 {
        let (nx, nk, nm) = (6, 2, [2, 3][i as usize % 2]);
        let inst = DiscreteInstance::random(nx, 2, nm, nk, 3000 + i);
        let criterion = [Criterion::Dp, Criterion::Eop, Criterion::Eo][i as usize % 3];
        let spec = FairnessSpec::new(criterion, 0.02, 0.02, Scopes::Both);
        let stats = inst.stats();
        let set = ConstraintSet::build(&spec, &stats, false).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(i);
        let sizes: Vec<usize> = (0..nk).map(|k| set.num_local(k)).collect();
        let mut dual = DualState::zeros(set.num_global(), &sizes, 2.0);
        dual.lambda.iter_mut().for_each(|v| *v = rng.random::<f64>());
        dual.mu.iter_mut().flatten().for_each(|v| *v = rng.random::<f64>());
        dual.project();
        let calib = build_calibration(&dual, &set, &stats).unwrap();

        for k in 0..nk {
            // weighted samples (x one-hot, cost row M̄(a,k)[y]) of client k
            let mut inputs = Vec::new();
            let mut costs = Vec::new();
            let mass_k: f64 = (0..nx).flat_map(|x| (0..2).map(move |a| (x, a))).map(|(x, a)| inst.mass(x, a, k)).sum();
            for x in 0..nx {
                for a in 0..2 {
                    for y in 0..nm {
                        let w = inst.p(x, a, y, k) / mass_k;
                        let mut onehot = vec![0.0; nx];
                        onehot[x] = 1.0;
                        inputs.push(onehot);
                        costs.push(calib.cost_row(a, k, y).iter().map(|c| c * w).collect::<Vec<f64>>());
                    }
                }
            }
            // tabular scores: one free score vector per support point
            let mut model = ScoringModel::zeros(Architecture::Linear, nx, nm);
            let batch: Vec<(&[f64], &[f64])> = inputs.iter().zip(&costs).map(|(x, c)| (&x[..], &c[..])).collect();
            // the mean loss has curvature at most Σ|c| / n in any parameter
            let n = batch.len() as f64;
            let step = n / costs.iter().flatten().sum::<f64>();
            for _ in 0..20_000 {
                let (_, grad) = loss_gradient(&model, &batch).unwrap();
                for (p, g) in model.params_mut().iter_mut().zip(&grad) {
                    *p -= step * g;
                }
            }
            for x in 0..nx {
                let mut target = vec![0.0; nm];
                for a in 0..2 {
                    let s = calib.calibrated_scores(a, k, &inst.eta(x, a, k).unwrap());
                    for (t, v) in target.iter_mut().zip(&s) {
                        *t += inst.mass(x, a, k) * v;
                    }
                }
                let mut onehot = vec![0.0; nx];
                onehot[x] = 1.0;
                points += 1;
                matched += usize::from(model.predict(&onehot) == argmax(&target));
            }
        }
    }
    let rate = matched as f64 / points as f64;
    outcome(rate >= 0.99, format!("loss minimizer argmax matches calibrated rule on {matched}/{points} points"))
}

fn criterion_4() -> Outcome {
    let data = biased_dataset(1200, 41).0;
    let spec = FairnessSpec::new(Criterion::Dp, 1.0, 1.0, Scopes::Both);
    let views = client_views(&data, false);
    let mut ok = true;
    let mut notes = Vec::new();
    for ensemble in [false, true] {
        let cfg = InprocessingConfig { rounds: 5, ensemble, seed: 7, ..Default::default() };
        let res = run_inprocessing(&data, &spec, &cfg).unwrap();
        let baseline = run_fedavg(&views, 2, &cfg.fedavg()).unwrap();
        let same_params = res.state.unified.params() == baseline.params();
        ok &= same_params && res.dual.is_zero();
        if !ensemble {
            let same_preds = res.state.predict_views(&views) == predict_views(&baseline, &views);
            ok &= same_preds;
            notes.push(format!("unified-only: params {same_params}, predictions {same_preds}"));
        } else {
            notes.push(format!("with ensemble: unified params {same_params}"));
        }
    }
    outcome(ok, format!("T=5 bit-identity to FedAvg ({})", notes.join("; ")))
}

fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
    if scale < 1e-12 {
        diff
    } else {
        diff / scale
    }
}

fn criterion_5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let h = 1e-5;
    let mut worst_loss = 0.0f64;
    for case in 0..100 {
        let d = rng.random_range(1..5);
        let m = rng.random_range(2..5);
        let arch = if case % 2 == 0 { Architecture::Linear } else { Architecture::Mlp { hidden: rng.random_range(2..6) } };
        let model = ScoringModel::init(arch, d, m, rng.random());
        let xs: Vec<Vec<f64>> = (0..3).map(|_| (0..d).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
        let cs: Vec<Vec<f64>> = (0..3).map(|_| (0..m).map(|_| rng.random_range(0.0..2.0)).collect()).collect();
        let batch: Vec<(&[f64], &[f64])> = xs.iter().zip(&cs).map(|(x, c)| (&x[..], &c[..])).collect();
        let (_, grad) = loss_gradient(&model, &batch).unwrap();
        let mut fd = vec![0.0; grad.len()];
        for j in 0..grad.len() {
            let mut plus = model.clone();
            plus.params_mut()[j] += h;
            let mut minus = model.clone();
            minus.params_mut()[j] -= h;
            fd[j] = (loss_gradient(&plus, &batch).unwrap().0 - loss_gradient(&minus, &batch).unwrap().0) / (2.0 * h);
        }
        worst_loss = worst_loss.max(relative_error(&grad, &fd));
    }

    let mut worst_dual = 0.0f64;
    for case in 0..100u64 {
        let (nx, nm, nk) = instance_shape(case);
        let inst = DiscreteInstance::random(nx.min(4), 2, nm, nk, 5000 + case);
        let criterion = [Criterion::Dp, Criterion::Eop, Criterion::Eo][case as usize % 3];
        let spec = FairnessSpec::new(criterion, 0.03, 0.04, Scopes::Both);
        let stats = inst.stats();
        let set = ConstraintSet::build(&spec, &stats, false).unwrap();
        let (scores, _) = inst.plugin_scores();
        let obj = RelaxedObjective::new(&scores, &set, &stats, &spec, 0.1).unwrap();
        let k = case as usize % nk;
        let lambda: Vec<f64> = (0..2 * set.num_global()).map(|_| rng.random::<f64>()).collect();
        let mu: Vec<f64> = (0..2 * set.num_local(k)).map(|_| rng.random::<f64>()).collect();
        let (_, gl, gm) = obj.local_gradient(k, &lambda, &mu);
        let mut analytic = gl.clone();
        analytic.extend(&gm);
        let mut fd = Vec::with_capacity(analytic.len());
        for j in 0..lambda.len() {
            let (mut p, mut q) = (lambda.clone(), lambda.clone());
            p[j] += h;
            q[j] -= h;
            fd.push((obj.local_value(k, &p, &mu) - obj.local_value(k, &q, &mu)) / (2.0 * h));
        }
        for j in 0..mu.len() {
            let (mut p, mut q) = (mu.clone(), mu.clone());
            p[j] += h;
            q[j] -= h;
            fd.push((obj.local_value(k, &lambda, &p) - obj.local_value(k, &lambda, &q)) / (2.0 * h));
        }
        worst_dual = worst_dual.max(relative_error(&analytic, &fd));
    }
    outcome(
        worst_loss < 1e-4 && worst_dual < 1e-4,
        format!("max relative error: loss {worst_loss:.2e}, relaxed dual {worst_dual:.2e}"),
    )
}

/// Synthetic biased data split over two clients with `[0.2, 0.8]`
/// correlation, then 60/40 train/test.
fn biased_dataset(n: usize, seed: u64) -> (FederatedDataset, FederatedDataset) {
    let spec = SyntheticSpec::biased_binary(n, (0.40, 0.55), 1.0, 1.0);
    let pooled = synth_gaussian_mixture(&spec, seed).unwrap();
    let split = heterogeneous_split(&pooled, 2, (0.2, 0.8), seed).unwrap();
    split.train_test_split(0.4, seed).unwrap()
}

fn dp_global(data: &FederatedDataset, preds: &[Vec<usize>]) -> f64 {
    DisparityReport::evaluate(data, preds, Criterion::Dp).unwrap().global_max
}

fn plugin_config(seed: u64) -> FedAvgConfig {
    FedAvgConfig { rounds: 30, seed, ..Default::default() }
}

/// Calibrated post-processing predictions on the test split.
fn postprocess_test_predictions(
    train: &FederatedDataset,
    test: &FederatedDataset,
    spec: &FairnessSpec,
    seed: u64,
) -> (Vec<Vec<usize>>, Vec<Vec<usize>>, PostprocessingResult) {
    let (model, train_scores) = pretrain_plugin(train, &plugin_config(seed)).unwrap();
    let stats = train_scores.label_stats().unwrap();
    let out = run_postprocessing(&train_scores, &stats, spec, &PostprocessingConfig::default()).unwrap();
    let test_scores = PluginScores::from_model(&model, test).unwrap();
    let plain = predict_views(&model, &client_views(test, true));
    (plain, out.classifier.predict_scores(&test_scores), out)
}

fn criterion_6() -> (Outcome, PostprocessingResult) {
    let (train, test) = biased_dataset(4000, 6);
    let spec = FairnessSpec::new(Criterion::Dp, 0.01, 0.01, Scopes::Both);

    let blind = client_views(&test, false);
    let fedavg = run_fedavg(&client_views(&train, false), 2, &plugin_config(6)).unwrap();
    let base_preds = predict_views(&fedavg, &blind);
    let (base_acc, base_dp) = (accuracy(&test, &base_preds), dp_global(&test, &base_preds));

    let cfg = InprocessingConfig { rounds: 30, seed: 6, ..Default::default() };
    let res = run_inprocessing(&train, &spec, &cfg).unwrap();
    let in_preds = res.state.predict_dataset(&test);
    let (in_acc, in_dp) = (accuracy(&test, &in_preds), dp_global(&test, &in_preds));

    let (plain, post_preds, post) = postprocess_test_predictions(&train, &test, &spec, 6);
    let (aware_acc, aware_dp) = (accuracy(&test, &plain), dp_global(&test, &plain));
    let (post_acc, post_dp) = (accuracy(&test, &post_preds), dp_global(&test, &post_preds));

    let in_ok = in_dp <= 0.5 * base_dp && in_acc >= base_acc - 0.05;
    let post_ok = post_dp <= 0.5 * aware_dp && post_acc >= aware_acc - 0.05;
    let detail = format!(
        "test split: fedavg acc {:.2}% dp {:.4}; in-processing acc {:.2}% dp {:.4}; \
         aware fedavg acc {:.2}% dp {:.4}; post-processing acc {:.2}% dp {:.4}",
        100.0 * base_acc, base_dp, 100.0 * in_acc, in_dp, 100.0 * aware_acc, aware_dp, 100.0 * post_acc, post_dp
    );
    (outcome(in_ok && post_ok, detail), post)
}

fn criterion_7() -> Outcome {
    let grid = [0.0, 0.02, 0.04];
    let seeds = [70u64, 71, 72];
    let mut acc = [[0.0; 3]; 3];
    for (i, &xg) in grid.iter().enumerate() {
        for (j, &xl) in grid.iter().enumerate() {
            let spec = FairnessSpec::new(Criterion::Dp, xg, xl, Scopes::Both);
            for &seed in &seeds {
                let (train, test) = biased_dataset(4000, seed);
                let (_, preds, _) = postprocess_test_predictions(&train, &test, &spec, seed);
                acc[i][j] += accuracy(&test, &preds) / seeds.len() as f64;
            }
        }
    }
    let tol = 0.005;
    let mut worst = f64::NEG_INFINITY;
    for i in 0..3 {
        for j in 0..3 {
            for i2 in i..3 {
                for j2 in j..3 {
                    worst = worst.max(acc[i][j] - acc[i2][j2]);
                }
            }
        }
    }
    let rows: Vec<String> = acc
        .iter()
        .map(|r| r.iter().map(|a| format!("{:.2}", 100.0 * a)).collect::<Vec<_>>().join(" "))
        .collect();
    outcome(
        worst <= tol,
        format!("mean accuracy grid (rows xi_g, cols xi_l) [{}], largest drop when loosening {:.2} points", rows.join(" | "), 100.0 * worst.max(0.0)),
    )
}

fn criterion_8() -> Outcome {
    let config = RunnerConfig { cases: 200, failure_persistence: None, ..RunnerConfig::default() };
    let mut results: Vec<(&str, bool)> = Vec::new();

    let mut runner = TestRunner::new(config.clone());
    let projection = runner.run(&(prop::collection::vec(-10.0f64..10.0, 1..12), 0.01f64..8.0), |(mut v, r)| {
        project_nonneg_l1_ball(&mut v, r);
        prop_assert!(v.iter().all(|&x| x >= 0.0));
        prop_assert!(v.iter().sum::<f64>() <= r + 1e-9);
        Ok(())
    });
    results.push(("projection feasibility", projection.is_ok()));

    let mut runner = TestRunner::new(config.clone());
    let confusion = runner.run(&(any::<u64>(), 1usize..4, 2usize..4), |(seed, nx, nm)| {
        let inst = DiscreteInstance::random(nx, 2, nm, 2, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let preds: Vec<usize> = (0..nx * 2 * 2).map(|_| rng.random_range(0..nm)).collect();
        let table = ClassifierTable::deterministic(OracleMode::AttributeAware, nm, &preds);
        let mut rows = Vec::new();
        for x in 0..nx {
            for a in 0..2 {
                for y in 0..nm {
                    for k in 0..2 {
                        rows.push((k, a, y, table.row(inst.cell(OracleMode::AttributeAware, x, a, k)), inst.p(x, a, y, k)));
                    }
                }
            }
        }
        let conf = ConfusionSet::from_weighted(2, 2, nm, rows).unwrap();
        for a in 0..2 {
            for k in 0..2 {
                prop_assert!((conf.get(a, k).unwrap().total() - 1.0).abs() < 1e-12);
            }
        }
        Ok(())
    });
    results.push(("confusion normalization", confusion.is_ok()));

    let mut runner = TestRunner::new(config.clone());
    let constant = runner.run(&(any::<u64>(), 1usize..5, 2usize..4, 0u8..3), |(seed, nx, nm, c)| {
        let inst = DiscreteInstance::random(nx, 2, nm, 2, seed);
        let criterion = [Criterion::Dp, Criterion::Eop, Criterion::Eo][c as usize];
        let spec = FairnessSpec::new(criterion, 0.0, 0.0, Scopes::Both);
        for j in 0..nm {
            let table = ClassifierTable::deterministic(OracleMode::AttributeBlind, nm, &vec![j; nx * 2]);
            prop_assert!(evaluate(&inst, &spec, &table).unwrap().max_violation(&spec) < 1e-12);
        }
        Ok(())
    });
    results.push(("constant-classifier zero disparity", constant.is_ok()));

    let mut runner = TestRunner::new(config.clone());
    let sandwich = runner.run(&(prop::collection::vec(-5.0f64..5.0, 1..8), 0.001f64..2.0), |(v, beta)| {
        let s = sigma_beta(&v, beta);
        let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(s <= max + 1e-12 && max <= s + beta * (v.len() as f64).ln() + 1e-12);
        Ok(())
    });
    results.push(("sigma sandwich", sandwich.is_ok()));

    let mut runner = TestRunner::new(config.clone());
    let duality = runner.run(&(any::<u64>(), 1usize..4, 2usize..4, 0.0f64..0.1), |(seed, nx, nm, xi)| {
        let inst = DiscreteInstance::random(nx, 2, nm, 2, seed);
        let spec = FairnessSpec::new(Criterion::Eo, xi, xi, Scopes::Both);
        let lp = solve_primal_lp(&inst, &spec, OracleMode::AttributeAware).unwrap();
        let set = ConstraintSet::build(&spec, &inst.stats(), false).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut dual = DualState::zeros(set.num_global(), &[set.num_local(0), set.num_local(1)], 5.0);
        dual.lambda.iter_mut().for_each(|v| *v = 3.0 * rng.random::<f64>());
        dual.mu.iter_mut().flatten().for_each(|v| *v = 3.0 * rng.random::<f64>());
        dual.project();
        prop_assert!(1.0 - dual_value(&inst, &spec, &dual).unwrap() <= lp.risk + 1e-8);
        Ok(())
    });
    results.push(("weak duality", duality.is_ok()));

    let mut runner = TestRunner::new(config);
    let conservation = runner.run(&(any::<u64>(), 30usize..200, 2usize..5, 0.3f64..20.0), |(seed, n, nk, gamma)| {
        let spec = SyntheticSpec::biased_binary(n, (0.3, 0.6), 1.0, 0.5);
        let pooled = synth_gaussian_mixture(&spec, seed).unwrap();
        let a = dirichlet_partition(&pooled, nk, gamma, seed).unwrap();
        let b = heterogeneous_split(&pooled, nk, (0.2, 0.8), seed).unwrap();
        prop_assert_eq!(a.len(), pooled.len());
        prop_assert_eq!(b.len(), pooled.len());
        for g in 0..2 {
            for y in 0..2 {
                let count = |d: &FederatedDataset| d.iter().filter(|(_, s)| s.group == g && s.label == y).count();
                prop_assert_eq!(count(&a), count(&pooled));
                prop_assert_eq!(count(&b), count(&pooled));
            }
        }
        Ok(())
    });
    results.push(("partition conservation", conservation.is_ok()));

    let failed: Vec<&str> = results.iter().filter(|r| !r.1).map(|r| r.0).collect();
    let detail = if failed.is_empty() {
        format!("{} suites x 200 cases", results.len())
    } else {
        format!("failed: {}", failed.join(", "))
    };
    outcome(failed.is_empty(), detail)
}

fn criterion_9(trajectories: &[(String, Vec<f64>)]) -> Outcome {
    let mut worst_rise = 0.0f64;
    let mut slowest = (0usize, String::new());
    for (name, traj) in trajectories {
        for w in traj.windows(2) {
            worst_rise = worst_rise.max(w[1] - w[0]);
        }
        let t = rounds_to_converge(traj, 0.01);
        if t >= slowest.0 {
            slowest = (t, name.clone());
        }
    }
    outcome(
        worst_rise <= 1e-6 && slowest.0 <= 10,
        format!(
            "{} runs, largest increase {:.2e}, slowest reaches 1% of final at round {} ({})",
            trajectories.len(),
            worst_rise,
            slowest.0,
            slowest.1
        ),
    )
}

#[test]
fn acceptance() {
    let mut lines = Vec::new();
    lines.push(("oracle equivalence, vacuous slacks", criterion_1()));

    let start = Instant::now();
    let runs = constrained_runs();
    let c2_secs = start.elapsed().as_secs_f64();
    lines.push(("oracle near-optimality, DP slack 0.05", criterion_2(&runs, c2_secs)));
    lines.push(("loss calibration", criterion_3()));
    lines.push(("FedAvg degeneracy", criterion_4()));
    lines.push(("gradient checks", criterion_5()));
    let (c6, post6) = criterion_6();
    lines.push(("desk-scale fairness pattern", c6));
    lines.push(("sensitivity monotonicity", criterion_7()));
    lines.push(("invariant suites", criterion_8()));

    let mut trajectories: Vec<(String, Vec<f64>)> =
        runs.iter().enumerate().map(|(i, r)| (format!("oracle instance {i}"), r.3.trajectory.clone())).collect();
    trajectories.push(("synthetic biased data".into(), post6.trajectory));
    lines.push(("convergence efficiency", criterion_9(&trajectories)));

    let mut all = true;
    for (i, (name, o)) in lines.iter().enumerate() {
        println!("criterion {}: {} {}: {}", i + 1, if o.pass { "PASS" } else { "FAIL" }, name, o.detail);
        all &= o.pass;
    }
    assert!(all, "acceptance criteria failed");
}
