use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn config() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs/paper.cfg")
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pathbench"))
        .arg("--config")
        .arg(config())
        .args(args)
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn usage_errors_exit_2() {
    let o = Command::new(env!("CARGO_BIN_EXE_pathbench")).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(run(&["fly-somewhere"]).status.code(), Some(2));
    assert_eq!(run(&["eval"]).status.code(), Some(2));
    assert_eq!(run(&["feasmap", "--checkpoint", "x", "--out", "y", "--grid", "1,2"]).status.code(), Some(2));
}

#[test]
fn missing_checkpoint_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["eval", "--checkpoint", p(&dir.path().join("none"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).starts_with("error[io]"), "{}", stderr(&o));
}

#[test]
fn bad_config_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "[env]\nzone_radius = -3.0\n").unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_pathbench"))
        .args(["--config", p(&cfg), "heatmap", "--out", p(dir.path())])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).starts_with("error[config]"), "{}", stderr(&o));
}

#[test]
fn heatmap_writes_raster_and_values() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["heatmap", "--out", p(dir.path()), "--spacing", "100"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    for ext in ["pgm", "csv", "meta.json"] {
        assert!(dir.path().join(format!("heatmap.{ext}")).is_file());
    }
    let meta: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(meta["nx"], 21);
}

#[test]
fn train_eval_resume_feasmap_compare() {
    let dir = tempfile::tempdir().unwrap();
    let run_dir = dir.path().join("run");

    let o = run(&["--seed", "4", "train", "--out", p(&run_dir), "--max-episodes", "3", "--stop-reward", "1e12"]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    assert!(stderr(&o).starts_with("not-converged:"));
    for f in ["checkpoint/agent.meta.json", "curve.csv", "eval.csv", "summary.json"] {
        assert!(run_dir.join(f).is_file(), "{f}");
    }
    let ckpt = run_dir.join("checkpoint");

    let o = run(&["train", "--out", p(&dir.path().join("quick")), "--stop-reward=-inf"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));

    let o = run(&["eval", "--checkpoint", p(&ckpt), "--start", "400,400"]);
    assert!(matches!(o.status.code(), Some(0 | 1)), "{}", stderr(&o));
    let csv = String::from_utf8(o.stdout).unwrap();
    assert!(csv.starts_with("step,t,x,y,heading,action,reward,terminal"));

    let o = run(&["resume", "--checkpoint", p(&ckpt), "--out", p(&dir.path().join("more")), "--max-episodes", "2"]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));

    let maps = dir.path().join("maps");
    let grid = "-1000,-1000,200,11,11";
    let a = run(&["feasmap", "--checkpoint", p(&ckpt), "--out", p(&maps), "--name", "a", "--grid", grid]);
    let b = run(&["feasmap", "--checkpoint", p(&ckpt), "--out", p(&maps), "--name", "b", "--grid", grid, "--workers", "2"]);
    assert_eq!(a.status.code(), Some(0), "{}", stderr(&a));
    assert_eq!(a.stdout, b.stdout);
    assert_eq!(std::fs::read(maps.join("a.csv")).unwrap(), std::fs::read(maps.join("b.csv")).unwrap());

    let o = run(&["compare", "--checkpoint", p(&ckpt), "--out", p(&dir.path().join("cmp"))]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("cmp/compare.json")).unwrap()).unwrap();
    assert_eq!(report["rows"].as_array().unwrap().len(), 1);
    assert!(report["summary"]["median_speed_ratio"].as_f64().unwrap() > 0.0);
}

#[test]
fn ps_solve_writes_solution() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["ps-solve", "--out", p(dir.path()), "--intervals", "4", "--nodes", "6"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let summary: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["converged"], true);
    let tf = summary["t_f"].as_f64().unwrap();
    assert!(tf > 5.26 && tf < 5.6, "{tf}");
    let rows = std::fs::read_to_string(dir.path().join("solution.csv")).unwrap();
    assert_eq!(rows.lines().next(), Some("node,t,px,py,vx,vy,ux,uy"));
}
