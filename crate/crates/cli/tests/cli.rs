use std::path::Path;
use std::process::{Command, Output};

fn kmplab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kmplab"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

const EQUILIBRIUM: &str = r#"
schema_version = 1
experiment = "equilibrium-sim"
seed = 5
replicas = 3
horizon = 0.1
snapshots = 4

[lattice]
dim = 1
side = 16
"#;

fn summary(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("summary.json")).unwrap()).unwrap()
}

#[test]
fn equilibrium_run_conserves_energy() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "eq.toml", EQUILIBRIUM);
    let out = tmp.path().join("out");
    let o = kmplab(&["run", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let s = summary(&out);
    assert_eq!(s["passed"], true);
    assert_eq!(s["checks"][0]["name"], "energy conservation");
    assert!(s["metrics"]["max_energy_drift"].as_f64().unwrap() <= 1e-12);
    for f in [
        "replicas.csv",
        "trajectory_0.kmp",
        "trajectory_0.csv",
        "config.resolved.toml",
    ] {
        assert!(out.join(f).exists(), "missing {f}");
    }
}

#[test]
fn same_config_and_seed_give_identical_csv() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "eq.toml", EQUILIBRIUM);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for d in [&a, &b] {
        assert!(
            kmplab(&["--sequential", "run", &cfg, "--out", d.to_str().unwrap()])
                .status
                .success()
        );
    }
    for f in ["replicas.csv", "trajectory_0.csv"] {
        assert_eq!(
            std::fs::read(a.join(f)).unwrap(),
            std::fs::read(b.join(f)).unwrap(),
            "{f} differs"
        );
    }
    let first = std::fs::read_to_string(a.join("replicas.csv")).unwrap();
    assert!(first.starts_with("run,seed,"));
}

#[test]
fn summary_reproduces_its_run() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "eq.toml", EQUILIBRIUM);
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    assert!(kmplab(&["run", &cfg, "--out", a.to_str().unwrap()])
        .status
        .success());
    let again = a.join("summary.json");
    assert!(
        kmplab(&["run", again.to_str().unwrap(), "--out", b.to_str().unwrap()])
            .status
            .success()
    );
    assert_eq!(summary(&a)["config_hash"], summary(&b)["config_hash"]);
    assert_eq!(
        std::fs::read(a.join("replicas.csv")).unwrap(),
        std::fs::read(b.join("replicas.csv")).unwrap()
    );
}

#[test]
fn uniform_target_gives_decreasing_cost_table() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(
        tmp.path(),
        "p3.toml",
        "schema_version = 1\nexperiment = \"pathological-3d\"\n[pathological]\ntarget = \"uniform\"\nrelaxed_n = [2, 4]\n",
    );
    let out = tmp.path().join("out");
    let o = kmplab(&["run", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let s = summary(&out);
    let (u2, u4) = (
        s["metrics"]["upper_n2"].as_f64().unwrap(),
        s["metrics"]["upper_n4"].as_f64().unwrap(),
    );
    assert!(u4 < u2);
}

#[test]
fn schema_errors_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    for text in [
        "schema_version = 9\nexperiment = \"equilibrium-sim\"\n",
        "schema_version = 1\nexperiment = \"equilibrium-sim\"\nunknown_key = 1\n",
        "schema_version = 1\nexperiment = \"tilted-sim\"\n[lattice]\ndim = 3\n",
        "schema_version = 1\nexperiment = \"equilibrium-sim\"\n[lattice]\nside = 2\n",
    ] {
        let cfg = write(tmp.path(), "bad.toml", text);
        assert_eq!(kmplab(&["run", &cfg]).status.code(), Some(2), "{text}");
    }
    assert_eq!(kmplab(&["verify", "nightly"]).status.code(), Some(2));
}

#[test]
fn budget_overrun_exits_with_three() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(
        tmp.path(),
        "b.toml",
        &EQUILIBRIUM.replacen("snapshots = 4", "snapshots = 4\nevent_budget = 10", 1),
    );
    let out = tmp.path().join("out");
    assert_eq!(
        kmplab(&["run", &cfg, "--out", out.to_str().unwrap()])
            .status
            .code(),
        Some(3)
    );
}

#[test]
fn identities_suite_passes() {
    let o = kmplab(&["verify", "identities"]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v.as_array().unwrap().len(), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("criterion  2"));
}

#[test]
fn export_round_trips_a_trajectory() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "eq.toml", EQUILIBRIUM);
    let out = tmp.path().join("out");
    assert!(kmplab(&["run", &cfg, "--out", out.to_str().unwrap()])
        .status
        .success());
    let kmp = out.join("trajectory_0.kmp");
    let o = kmplab(&["export", kmp.to_str().unwrap(), "--format", "csv"]);
    assert!(o.status.success());
    let csv = String::from_utf8(o.stdout).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("t,site_index,energy"));
    // 5 snapshots of 16 sites
    assert_eq!(lines.count(), 80);
    let sim = std::fs::read_to_string(out.join("trajectory_0.csv")).unwrap();
    let energies: Vec<&str> = sim
        .lines()
        .skip(1)
        .map(|l| l.rsplit(',').next().unwrap())
        .collect();
    let exported: Vec<&str> = csv
        .lines()
        .skip(1)
        .map(|l| l.rsplit(',').next().unwrap())
        .collect();
    assert_eq!(energies, exported);

    let json = tmp.path().join("t.json");
    assert!(kmplab(&[
        "export",
        kmp.to_str().unwrap(),
        "--format",
        "json",
        "--out",
        json.to_str().unwrap()
    ])
    .status
    .success());
    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(json).unwrap()).unwrap();
    assert_eq!(v["kind"], "trajectory");
    assert_eq!(v["seed"], 5);
    assert_eq!(v["snapshots"].as_array().unwrap().len(), 5);
}

#[test]
fn export_rejects_garbage_with_five() {
    let tmp = tempfile::tempdir().unwrap();
    let p = write(tmp.path(), "junk.kmp", "not a container");
    assert_eq!(kmplab(&["export", &p]).status.code(), Some(5));
}
