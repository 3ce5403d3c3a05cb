use std::path::Path;
use std::process::Command;

fn fairfl(args: &[&str], cwd: &Path) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_fairfl")).args(args).current_dir(cwd).output().unwrap()
}

fn write_config(dir: &Path, name: &str, body: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, body).unwrap();
    path.to_string_lossy().into_owned()
}

const SMALL: &str = "
seed = 4
[data]
source = \"synthetic\"
n = 2000
[train]
rounds = 15
[inprocessing]
rounds = 15
[postprocessing]
rounds = 30
";

fn headline(dir: &Path) -> (f64, f64) {
    let text = std::fs::read_to_string(dir.join("report.json")).unwrap();
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    let t = &v["test"];
    (t["accuracy"].as_f64().unwrap(), t["global_max"].as_f64().unwrap())
}

#[test]
fn run_reports_are_byte_identical_and_postprocessing_halves_disparity() {
    let tmp = tempfile::tempdir().unwrap();
    let again = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "exp.toml", SMALL);
    for (method, out, cwd) in [("fedavg", "base", &tmp), ("postprocessing", "post1", &tmp), ("postprocessing", "post1", &again)] {
        let o = fairfl(&["run", "--config", &cfg, "--method", method, "--out", out], cwd.path());
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let read = |d: &Path| std::fs::read(d.join("post1").join("report.json")).unwrap();
    assert_eq!(read(tmp.path()), read(again.path()));
    for f in ["row.csv", "rounds.jsonl", "timing.json", "config.toml"] {
        assert!(tmp.path().join("post1").join(f).exists(), "{f}");
    }
    let (_, base) = headline(&tmp.path().join("base"));
    let (_, post) = headline(&tmp.path().join("post1"));
    assert!(base > 0.0);
    assert!(post <= 0.5 * base, "post {post} vs baseline {base}");
}

#[test]
fn echoed_config_reruns_to_the_same_report() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "exp.toml", SMALL);
    let o = fairfl(&["run", "--config", &cfg, "--method", "inprocessing", "--xi-local", "0.05", "--out", "a"], tmp.path());
    assert!(o.status.success());
    let first = std::fs::read(tmp.path().join("a/report.json")).unwrap();
    let echo = tmp.path().join("echo.toml");
    std::fs::copy(tmp.path().join("a/config.toml"), &echo).unwrap();
    let o = fairfl(&["run", "--config", echo.to_str().unwrap()], tmp.path());
    assert!(o.status.success());
    assert_eq!(std::fs::read(tmp.path().join("a/report.json")).unwrap(), first);
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "exp.toml", SMALL);
    let code = |args: &[&str]| fairfl(args, tmp.path()).status.code();
    assert_eq!(code(&["run", "--config", &cfg, "--xi-global", "-0.1"]), Some(2));
    assert_eq!(code(&["run", "--config", "missing.toml"]), Some(2));
    assert_eq!(code(&["run", "--method", "bogus"]), Some(2));
    let bad = write_config(tmp.path(), "bad.toml", "seeed = 1");
    assert_eq!(code(&["run", "--config", &bad]), Some(2));
    assert_eq!(code(&["run", "--config", &cfg, "--method", "fedavg", "--lr", "inf", "--rounds", "2"]), Some(3));
}

#[test]
fn sweep_and_pareto() {
    let tmp = tempfile::tempdir().unwrap();
    let body = format!("{SMALL}\n[sweep]\nmethods = [\"fedavg\", \"postprocessing\"]\nxi_global = [0.0, 0.04]\nseeds = [1, 2]\n");
    let cfg = write_config(tmp.path(), "grid.toml", &body);
    let o = fairfl(&["sweep", "--config", &cfg, "--out", "sw"], tmp.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let runs = std::fs::read_to_string(tmp.path().join("sw/runs.csv")).unwrap();
    assert_eq!(runs.lines().count(), 1 + 8);
    let summary = std::fs::read_to_string(tmp.path().join("sw/summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 1 + 4);
    assert!(tmp.path().join("sw/monotonicity.json").exists());

    let o = fairfl(&["pareto", "--input", "sw/runs.csv", "--out", "front.csv"], tmp.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let front = std::fs::read_to_string(tmp.path().join("front.csv")).unwrap();
    assert_eq!(front.lines().count(), 1 + 8);
    assert!(front.contains(",false"));

    let empty = write_config(tmp.path(), "empty.toml", &format!("{SMALL}\n[sweep]\nseeds = []\n"));
    assert_eq!(fairfl(&["sweep", "--config", &empty], tmp.path()).status.code(), Some(2));
}

#[test]
fn oracle_subcommand_writes_instance_and_solution() {
    let tmp = tempfile::tempdir().unwrap();
    let o = fairfl(&["oracle", "--xi-global", "0.05", "--xi-local", "0.05", "--out", "o"], tmp.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["instance.json", "solution.json", "report.json"] {
        assert!(tmp.path().join("o").join(f).exists(), "{f}");
    }
    let inst = tmp.path().join("o/instance.json");
    let toml = format!("method = \"oracle\"\n[oracle]\ninstance = {:?}\n", inst.to_str().unwrap());
    let cfg = write_config(tmp.path(), "oracle.toml", &toml);
    let o = fairfl(&["run", "--config", &cfg, "--out", "o2"], tmp.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn csv_dataset_path() {
    let tmp = tempfile::tempdir().unwrap();
    let mut text = String::from("x1,x2,sex,income,site\n");
    for i in 0..400 {
        let a = i % 2;
        let y = usize::from((i * 7) % 10 < 4 + 2 * a);
        let x1 = y as f64 + 0.3 * ((i * 13) % 7) as f64;
        text.push_str(&format!("{x1},{},{a},{y},{}\n", a as f64 + 0.1 * (i % 5) as f64, i % 2 + (i / 2) % 2));
    }
    std::fs::write(tmp.path().join("d.csv"), text).unwrap();
    let args = ["run", "--dataset-csv", "d.csv", "--label-col", "income", "--group-col", "sex", "--out", "c"];
    let o = fairfl(&args, tmp.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let mut with_clients = args.to_vec();
    with_clients.extend(["--client-col", "site", "--method", "fedavg"]);
    let o = fairfl(&with_clients, tmp.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let missing = ["run", "--dataset-csv", "d.csv", "--label-col", "income", "--group-col", "race"];
    assert_eq!(fairfl(&missing, tmp.path()).status.code(), Some(2));
}
