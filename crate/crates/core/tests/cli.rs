use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn semiheat(args: &[&str], out_root: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_semiheat"));
    cmd.args(args).env_remove("SEMIHEAT_OUT");
    if let Some(root) = out_root {
        cmd.env("SEMIHEAT_OUT", root);
    }
    cmd.output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const SMALL: &str = "[problem]
nonlinearity=exp
N=3
R=1
k=0
initial=bump:A=1,m=2

[grid]
M=32

[solver]
t_horizon=2
snapshot_dt=0.05
";

#[test]
fn exponents_line() {
    let o = semiheat(&["exponents", "3"], None);
    assert!(o.status.success());
    assert_eq!(stdout(&o).trim(), "p_S=5 p_JL=inf q_S=1.25 q_JL=1");
    let o = semiheat(&["exponents", "11"], None);
    assert!(stdout(&o).contains("p_JL=6.92202"), "{}", stdout(&o));
}

#[test]
fn usage_and_spec_errors_exit_two() {
    let o = semiheat(&["frobnicate"], None);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).starts_with("error code=usage"), "{}", stderr(&o));

    let o = semiheat(&["steady", "--nl", "cosh", "--n", "3", "--alpha", "1", "--r-max", "1"], None);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(err.starts_with("error code="), "{err}");
}

#[test]
fn missing_config_is_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = semiheat(&["simulate", dir.path().join("nope.ini").to_str().unwrap(), "--out", "x"], None);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(stderr(&o).lines().count(), 1);
}

#[test]
fn simulate_writes_complete_directory_under_out_root() {
    let root = tempfile::tempdir().unwrap();
    let cfg = root.path().join("small.ini");
    fs::write(&cfg, SMALL).unwrap();
    let o = semiheat(&["simulate", cfg.to_str().unwrap(), "--out", "runs/a"], Some(root.path()));
    assert!(o.status.success(), "{}", stderr(&o));
    let line: serde_json::Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    assert_eq!(line["termination"], "horizon");
    assert_eq!(line["verdict"], "global_bounded");

    let run = root.path().join("runs/a");
    for f in ["config.ini", "snapshots.csv", "run.json", "summary.json", "report.json", "series.csv"] {
        assert!(run.join(f).is_file(), "missing {f}");
    }
    assert!(!run.join("PARTIAL").exists());
    assert!(!root.path().join("runs/.a.partial").exists());

    let o = semiheat(&["classify", run.to_str().unwrap()], None);
    assert!(o.status.success(), "{}", stderr(&o));
    let rep: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(rep["verdict"], "global_bounded");
}

#[test]
fn repeated_runs_are_byte_identical() {
    let root = tempfile::tempdir().unwrap();
    let cfg = root.path().join("small.ini");
    fs::write(&cfg, SMALL).unwrap();
    for name in ["a", "b"] {
        let o = semiheat(&["simulate", cfg.to_str().unwrap(), "--set", "M=48", "--out", name], Some(root.path()));
        assert!(o.status.success(), "{}", stderr(&o));
    }
    for f in ["snapshots.csv", "series.csv", "config.ini"] {
        let a = fs::read(root.path().join("a").join(f)).unwrap();
        let b = fs::read(root.path().join("b").join(f)).unwrap();
        assert_eq!(a, b, "{f} differs");
    }
    let ini = fs::read_to_string(root.path().join("a/config.ini")).unwrap();
    assert!(ini.contains("M=48"));
}

#[test]
fn bad_override_fails_without_output() {
    let root = tempfile::tempdir().unwrap();
    let cfg = root.path().join("small.ini");
    fs::write(&cfg, SMALL).unwrap();
    let o = semiheat(&["simulate", cfg.to_str().unwrap(), "--set", "M=two", "--out", "bad"], Some(root.path()));
    assert_eq!(o.status.code(), Some(2));
    assert!(!root.path().join("bad").exists());
}

#[test]
fn sweep_indexes_every_combination() {
    let root = tempfile::tempdir().unwrap();
    let cfg = root.path().join("small.ini");
    fs::write(&cfg, SMALL).unwrap();
    let o = semiheat(
        &["sweep", cfg.to_str().unwrap(), "--param", "N=3,5", "--param", "M=32,40", "--out", "sw"],
        Some(root.path()),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let index = fs::read_to_string(root.path().join("sw/index.csv")).unwrap();
    let lines: Vec<&str> = index.lines().collect();
    assert_eq!(lines[0], "run,status,N,M,verdict");
    assert_eq!(lines.len(), 5);
    assert!(lines[1..].iter().all(|l| l.contains(",ok,")), "{index}");
    assert!(root.path().join("sw/aggregate.csv").is_file());
    assert!(root.path().join("sw/run_0003/snapshots.csv").is_file());
}

#[test]
fn singular_and_intersect_round_trip() {
    let root = tempfile::tempdir().unwrap();
    let o = semiheat(&["singular", "--nl", "power:p=3", "--n", "5", "--out", "sing"], Some(root.path()));
    assert!(o.status.success(), "{}", stderr(&o));
    let summary: serde_json::Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    assert_eq!(summary["q"], 1.5);

    let reg = root.path().join("reg.csv");
    let o = semiheat(
        &["steady", "--nl", "power:p=3", "--n", "5", "--alpha", "1", "--r-max", "2", "--out", reg.to_str().unwrap()],
        None,
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let sing = root.path().join("sing/profile.csv");
    let o = semiheat(&["intersect", reg.to_str().unwrap(), sing.to_str().unwrap(), "--lo", "0.01", "--hi", "0.13"], None);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("count"), "{}", stdout(&o));
}
