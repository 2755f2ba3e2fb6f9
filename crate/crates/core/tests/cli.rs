use std::path::Path;
use std::process::{Command, Output};

fn harvest(out_dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_harvest"))
        .arg("--out-dir")
        .arg(out_dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn derive_reports_fix1() {
    let dir = tempfile::tempdir().unwrap();
    let o = harvest(dir.path(), &["derive"]);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["pass"], true);
    let xt = v["constants"]["x_tilde"].as_f64().unwrap();
    assert!((xt - 0.375).abs() < 1e-12);
    assert!(dir.path().join("derive.json").exists());
}

#[test]
fn derive_flags_violated_assumptions() {
    let dir = tempfile::tempdir().unwrap();
    let params = dir.path().join("p.json");
    std::fs::write(
        &params,
        r#"{"production":{"type":"logistic","a":1,"k":1},"delta":1.5,"gamma":0,"p":2,"c":0.5,"r":0.1}"#,
    )
    .unwrap();
    let o = harvest(dir.path(), &["--params", params.to_str().unwrap(), "derive"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("V2"));

    std::fs::write(&params, "{ nope").unwrap();
    let o = harvest(dir.path(), &["--params", params.to_str().unwrap(), "derive"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(harvest(dir.path(), &["simulate", "0.5"]).status.code(), Some(2));
    assert_eq!(harvest(dir.path(), &["frobnicate"]).status.code(), Some(2));
    assert_eq!(harvest(dir.path(), &["value", "0.5", "0.5", "--horizon", "-1"]).status.code(), Some(2));
    assert_eq!(harvest(dir.path(), &["--help"]).status.code(), Some(0));
}

#[test]
fn classify_tags_and_unsupported_starts() {
    let dir = tempfile::tempdir().unwrap();
    let o = harvest(dir.path(), &["classify", "0.8", "0.1"]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o).trim(), "R1");
    let o = harvest(dir.path(), &["classify", "1.5", "0.1"]);
    assert_eq!(o.status.code(), Some(3));
    assert_eq!(harvest(dir.path(), &["classify", "0.5", "-1"]).status.code(), Some(3));
    assert_eq!(harvest(dir.path(), &["value", "0.5", "-1"]).status.code(), Some(3));
}

#[test]
fn curves_exports_every_curve() {
    let dir = tempfile::tempdir().unwrap();
    let o = harvest(dir.path(), &["curves"]);
    assert_eq!(o.status.code(), Some(0));
    for name in ["gamma1", "gamma2", "gamma3", "gamma4", "sigma_star", "sigma_tilde", "sigma0", "sigma_s"] {
        let text = std::fs::read_to_string(dir.path().join(format!("{name}.csv"))).unwrap();
        assert!(text.lines().count() > 10, "{name}");
    }
    let sp: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(sp["case"], "I");
    assert!(sp["K_dtilde"].as_f64().unwrap() > sp["K_tilde"].as_f64().unwrap());
}

#[test]
fn simulate_then_replay_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let o = harvest(dir.path(), &["simulate", "0.8", "0.1", "--dt", "0.05"]);
    assert_eq!(o.status.code(), Some(0));
    let sched: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(sched["region"], "R1");
    assert_eq!(sched["phases"][0]["phase"], "JumpTo");
    let jumps: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("jumps.json")).unwrap()).unwrap();
    // The initial jump onto Σₛ, then the capture onto K* at Σ*.
    let jumps = jumps.as_array().unwrap();
    assert_eq!(jumps.len(), 2);
    assert_eq!(jumps[0]["t"], 0.0);
    assert!((jumps[1]["K_plus"].as_f64().unwrap() - 0.5431942319580115).abs() < 1e-9);

    let value: f64 = stdout(&harvest(dir.path(), &["value", "0.8", "0.1"])).trim().parse().unwrap();
    let path = dir.path().join("schedule.json");
    let o = harvest(dir.path(), &["value", "--replay", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let replayed: f64 = stdout(&o).trim().parse().unwrap();
    assert!((replayed - value).abs() <= 1e-9, "{replayed} vs {value}");
    assert!((sched["value"].as_f64().unwrap() - value).abs() <= 1e-12);
}

#[test]
fn simulate_is_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        assert_eq!(harvest(d.path(), &["simulate", "0.2", "1.5"]).status.code(), Some(0));
    }
    for name in ["trajectory.csv", "jumps.json", "schedule.json"] {
        let x = std::fs::read(a.path().join(name)).unwrap();
        let y = std::fs::read(b.path().join(name)).unwrap();
        assert!(x == y, "{name} differs between runs");
    }
}

#[test]
fn sigma_tilde_start_follows_the_singular_arc() {
    let dir = tempfile::tempdir().unwrap();
    let o = harvest(dir.path(), &["simulate", "0.375", "1.0"]);
    assert_eq!(o.status.code(), Some(0));
    let sched: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(sched["region"], "SigmaTilde");
    assert_eq!(sched["phases"][0]["phase"], "SingularTildeArc");
    let csv = std::fs::read_to_string(dir.path().join("trajectory.csv")).unwrap();
    let mut rows = csv.lines();
    assert_eq!(rows.next(), Some("t,x,K,u,z,lambda,J_running"));
    // x stays on x̃ while K decays toward K̃̃.
    let row: Vec<f64> = rows.nth(10).unwrap().split(',').map(|v| v.parse().unwrap()).collect();
    assert!((row[1] - 0.375).abs() < 1e-8);
    assert!(row[2] < 1.0);
}

#[test]
fn out_dir_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_harvest"))
        .env("HARVEST_OUT_DIR", dir.path())
        .arg("derive")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0));
    assert!(dir.path().join("derive.json").exists());
}

#[test]
fn tolerance_override() {
    let dir = tempfile::tempdir().unwrap();
    let base: f64 = stdout(&harvest(dir.path(), &["value", "0.2", "0.3"])).trim().parse().unwrap();
    let o = harvest(dir.path(), &["--tol", "1e-9", "value", "0.2", "0.3"]);
    assert_eq!(o.status.code(), Some(0));
    let loose: f64 = stdout(&o).trim().parse().unwrap();
    assert!((loose - base).abs() < 1e-7);
    assert_eq!(harvest(dir.path(), &["--tol", "0", "value", "0.2", "0.3"]).status.code(), Some(2));
    assert_eq!(harvest(dir.path(), &["--tol", "0.5", "value", "0.2", "0.3"]).status.code(), Some(2));
}
