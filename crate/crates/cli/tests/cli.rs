use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn biaslab(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_biaslab"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const POP_A_SWEEP: &str = r#"{
  "population": {"fixture": "pop_a"},
  "sweep": {"tau_grid": [0.0, 0.3, 0.45], "rule": {"c": 0.45}, "c_min": 0.45}
}"#;

#[test]
fn oracle_check_passes_every_line() {
    let tmp = tempfile::tempdir().unwrap();
    let o = biaslab(&["oracle-check"], tmp.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = stdout(&o);
    let checks: Vec<&str> = out
        .lines()
        .filter(|l| l.starts_with("PASS") || l.starts_with("FAIL"))
        .collect();
    assert!(checks.len() >= 20, "{out}");
    assert!(checks.iter().all(|l| l.starts_with("PASS")), "{out}");
    assert!(!tmp.path().join("out").exists());
}

#[test]
fn pop_a_sweep_writes_worked_values() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("pop_a.json"), POP_A_SWEEP).unwrap();
    let o = biaslab(
        &["sweep", "--config", "pop_a.json", "--format", "csv+svg"],
        tmp.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("manifest: out/manifest.json"));

    let mut rdr = csv::Reader::from_path(tmp.path().join("out/sweep.csv")).unwrap();
    let headers = rdr.headers().unwrap().clone();
    let col = |name: &str| headers.iter().position(|h| h == name).unwrap();
    let (tau, ex, blind, x, r, pred) = (
        col("tau"),
        col("exercise"),
        col("group_blind"),
        col("x"),
        col("r"),
        col("prediction"),
    );
    let want = [
        ("y_given_selected", [0.5, 0.4, 0.3]),
        ("s_full", [1.0 / 3.0, 2.0 / 3.0, 1.0]),
        ("ys_full", [1.0 / 6.0, 4.0 / 15.0, 0.3]),
    ];
    let mut seen = 0;
    for rec in rdr.records() {
        let rec = rec.unwrap();
        if &rec[x] != "0" || &rec[r] != "1" || &rec[blind] != "0" {
            continue;
        }
        let t: f64 = rec[tau].parse().unwrap();
        let i = [0.0, 0.3, 0.45].iter().position(|&g| g == t).unwrap();
        let (_, vals) = want.iter().find(|w| w.0 == &rec[ex]).unwrap();
        let p: f64 = rec[pred].parse().unwrap();
        assert!((p - vals[i]).abs() < 1e-12, "{} at {t}: {p}", &rec[ex]);
        seen += 1;
    }
    assert_eq!(seen, 9);
    assert!(tmp
        .path()
        .join("out/sweep_y_given_selected_group_fraction.svg")
        .exists());
}

#[test]
fn unknown_subcommand_exits_one_with_usage() {
    let tmp = tempfile::tempdir().unwrap();
    let o = biaslab(&["frobnicate"], tmp.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("Usage"), "{}", stderr(&o));
}

#[test]
fn malformed_config_reports_location() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("bad.json"), "{\n  \"population\": {\"fixture\": \"pop_a\"},\n  \"sweep\": {\"tau_grid\": [0.0,, 0.1]}\n}\n").unwrap();
    let o = biaslab(&["sweep", "--config", "bad.json"], tmp.path());
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("bad.json") && err.contains("line 3"), "{err}");

    fs::write(
        tmp.path().join("typo.json"),
        r#"{"population": {"fixture": "pop_a"}, "swep": {}}"#,
    )
    .unwrap();
    let o = biaslab(&["sweep", "--config", "typo.json"], tmp.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("swep"), "{}", stderr(&o));
}

#[test]
fn stochastic_commands_require_a_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let o = biaslab(&["generate"], tmp.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("--seed"));
}

#[test]
fn manifest_rerun_is_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(
        tmp.path().join("mc.json"),
        r#"{
  "population": {"fixture": "pop_a"},
  "sweep": {
    "tau_grid": [0.0, 0.15, 0.3, 0.45],
    "rule": {"c": 0.45, "noise": {"family": "normal", "scale": 0.1}},
    "mode": {"kind": "monte_carlo", "n": 40000, "seed": 3}
  }
}"#,
    )
    .unwrap();
    let o = biaslab(
        &[
            "sweep",
            "--config",
            "mc.json",
            "--out",
            "a",
            "--threads",
            "1",
        ],
        tmp.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let o = biaslab(
        &[
            "sweep",
            "--config",
            "a/manifest.json",
            "--out",
            "b",
            "--threads",
            "8",
        ],
        tmp.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    for f in ["sweep.csv", "mlr.csv", "manifest.json"] {
        assert_eq!(
            fs::read(tmp.path().join("a").join(f)).unwrap(),
            fs::read(tmp.path().join("b").join(f)).unwrap(),
            "{f}"
        );
    }

    let o = biaslab(
        &["sqf", "--config", "a/manifest.json", "--seed", "1"],
        tmp.path(),
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("sweep"));
}

#[test]
fn sqf_runs_end_to_end_on_generated_stops() {
    let tmp = tempfile::tempdir().unwrap();
    let o = biaslab(&["generate", "--seed", "4", "--out", "data"], tmp.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let stops = tmp.path().join("data/stops.csv");
    assert!(fs::read_to_string(&stops).unwrap().starts_with("race,"));

    fs::write(
        tmp.path().join("sqf.json"),
        format!(
            r#"{{"input": {{"csv": {{"path": {:?}}}}}, "figure": {{"share_grid": [0.8, 0.9], "bootstrap_reps": 3}}}}"#,
            stops.display().to_string()
        ),
    )
    .unwrap();
    let o = biaslab(
        &[
            "sqf", "--config", "sqf.json", "--seed", "2", "--format", "csv+svg",
        ],
        tmp.path(),
    );
    let code = o.status.code();
    assert!(code == Some(0) || code == Some(2), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(
        out.contains("ingest:") && out.contains("share 0.800"),
        "{out}"
    );
    for f in [
        "figure1.csv",
        "figure1.svg",
        "sqf_report.json",
        "manifest.json",
    ] {
        assert!(tmp.path().join("out").join(f).exists(), "{f}");
    }
    let fig = fs::read_to_string(tmp.path().join("out/figure1.csv")).unwrap();
    assert_eq!(fig.lines().count(), 1 + 2 * 3 * 2);
}
