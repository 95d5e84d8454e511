//! End-to-end runs of the `catchain` binary on a reduced problem.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const SMALL: &str = r#"
[chain]
cutoff = 4

[scenario]
n_steps = 100

[krotov]
max_iters = 30
goal = 1e-3

[outputs]
wigner_times = [0.0, 5.0]
wigner_points = 41
"#;

/// `SMALL` with `root` keys placed before its tables and `extra` tables after.
fn write_config(dir: &Path, root: &str, extra: &str) -> PathBuf {
    let path = dir.join("config.toml");
    std::fs::write(&path, format!("{root}\n{SMALL}\n{extra}")).unwrap();
    path
}

fn write_edited(dir: &Path, from: &str, to: &str, extra: &str) -> PathBuf {
    let path = dir.join("config.toml");
    std::fs::write(&path, format!("{}\n{extra}", SMALL.replace(from, to))).unwrap();
    path
}

fn catchain(config: &Path, out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_catchain"))
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn summary(out: &Path, command: &str) -> Value {
    let text = std::fs::read_to_string(out.join(format!("{command}_summary.json"))).unwrap();
    serde_json::from_str(&text).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn optimize_then_propagate_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "", "[bath]\nlambda = 0.1\ngamma = 1.8\n");
    let out = dir.path().join("out");
    let o = catchain(&cfg, &out, &["optimize"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let s = summary(&out, "optimize");
    assert_eq!(s["converged"], Value::Bool(true));
    let jt = s["final_jt"].as_f64().unwrap();
    assert!(jt <= 1e-3);
    let closed = s["closed_delta_f"].as_f64().unwrap();
    assert!((closed - jt).abs() < 1e-9, "J_T {jt} vs closed replay {closed}");
    assert!(s["open_delta_f"].as_f64().unwrap() > closed);

    let replay = dir.path().join("replay");
    let controls = out.join("controls.csv");
    let o = catchain(&cfg, &replay, &["propagate", "--controls", controls.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let p = summary(&replay, "propagate");
    assert!((p["closed_delta_f"].as_f64().unwrap() - closed).abs() < 1e-12);
    for name in ["fidelity.csv", "populations.csv", "wigner_site3_k00100.csv", "wigner_site1_k00000.json"] {
        assert!(replay.join(name).exists(), "{name} missing");
    }
    let fid = std::fs::read_to_string(replay.join("fidelity.csv")).unwrap();
    assert!(fid.starts_with("t,fidelity_closed,fidelity_open"));
    assert_eq!(fid.lines().count(), 102);
}

#[test]
fn optimization_is_reproducible_byte_for_byte() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "seed = 11", "[krotov.guess]\nkind = \"random\"\namplitude = 0.1\n");
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = catchain(&cfg, out, &["optimize"]);
        assert!(o.status.code().is_some_and(|c| c == 0 || c == 2), "{}", stderr(&o));
    }
    for name in ["controls.csv", "history.csv"] {
        assert_eq!(std::fs::read(a.join(name)).unwrap(), std::fs::read(b.join(name)).unwrap(), "{name}");
    }
}

#[test]
fn loose_goal_from_zero_guess_stops_early() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_edited(dir.path(), "goal = 1e-3", "goal = 0.5", "[krotov.guess]\nkind = \"zero\"\n");
    let out = dir.path().join("out");
    let o = catchain(&cfg, &out, &["optimize"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let s = summary(&out, "optimize");
    assert!(s["iterations"].as_u64().unwrap() <= 2);
    assert!(s["final_jt"].as_f64().unwrap() <= 0.5);
}

#[test]
fn unconverged_optimization_exits_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_edited(dir.path(), "max_iters = 30\ngoal = 1e-3", "max_iters = 1\ngoal = 1e-12", "");
    let out = dir.path().join("out");
    let o = catchain(&cfg, &out, &["optimize"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert_eq!(summary(&out, "optimize")["converged"], Value::Bool(false));
}

#[test]
fn unknown_config_key_exits_with_4() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "", "[bath]\nlambda = 0.1\ngama = 1.8\n");
    let o = catchain(&cfg, &dir.path().join("out"), &["optimize"]);
    assert_eq!(o.status.code(), Some(4));
    assert!(stderr(&o).contains("gama"), "{}", stderr(&o));
}

#[test]
fn controls_on_a_different_grid_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "", "");
    let out = dir.path().join("out");
    assert!(catchain(&cfg, &out, &["optimize"]).status.success());

    let other = dir.path().join("other.toml");
    std::fs::write(&other, SMALL.replace("n_steps = 100", "n_steps = 500")).unwrap();
    let controls = out.join("controls.csv");
    let o = catchain(&other, &dir.path().join("x"), &["propagate", "--controls", controls.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(4));
    let msg = stderr(&o);
    assert!(msg.contains("500") && msg.contains("found 100"), "{msg}");
}

#[test]
fn wigner_from_density_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_edited(dir.path(), "wigner_points = 41", "wigner_points = 41\nfinal_density = true\nwigner = false", "");
    let out = dir.path().join("out");
    assert!(catchain(&cfg, &out, &["optimize"]).status.success());
    let controls = out.join("controls.csv");
    let rep = dir.path().join("rep");
    let o = catchain(&cfg, &rep, &["propagate", "--controls", controls.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(!rep.join("wigner_site1_k00000.csv").exists());

    let density = rep.join("final_density.json");
    let w = dir.path().join("w");
    let o = catchain(&cfg, &w, &["wigner", "--density", density.to_str().unwrap(), "--site", "3"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let sidecar: Value = serde_json::from_str(&std::fs::read_to_string(w.join("wigner_site3_density.json")).unwrap()).unwrap();
    assert_eq!(sidecar["mode"], 2);
    let csv = std::fs::read_to_string(w.join("wigner_site3_density.csv")).unwrap();
    assert!(csv.starts_with("x,p,W"));
    assert_eq!(csv.lines().count(), 1 + 41 * 41);

    let o = catchain(&cfg, &w, &["wigner", "--density", density.to_str().unwrap(), "--site", "4"]);
    assert_eq!(o.status.code(), Some(4));
}

#[test]
fn sweep_on_a_small_grid() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "", "[sweep]\nlambda_grid = [0.0, 0.2]\ngamma_grid = [0.5, 5.0]\n");
    let out = dir.path().join("out");
    let o = catchain(&cfg, &out, &["sweep", "--jobs", "2"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let s = summary(&out, "sweep");
    assert_eq!(s["sweep_failures"], 0);
    let sweep = std::fs::read_to_string(out.join("sweep.csv")).unwrap();
    assert_eq!(sweep.lines().count(), 5);
    let rows: Vec<Vec<f64>> =
        sweep.lines().skip(1).map(|l| l.split(',').map(|v| v.trim().parse().unwrap()).collect()).collect();
    assert_eq!(rows[0][2], rows[1][2], "lambda = 0 column is the closed value");
    assert!(rows[2][2] < rows[0][2] && rows[3][2] < rows[0][2]);
    assert!(out.join("contour.csv").exists() && out.join("controls.csv").exists());
}
