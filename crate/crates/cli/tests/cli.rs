use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn matchforge(args: &[&str], threads: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_matchforge"));
    cmd.args(args);
    match threads {
        Some(n) => cmd.env("MATCHFORGE_THREADS", n),
        None => cmd.env_remove("MATCHFORGE_THREADS"),
    };
    cmd.output().expect("binary runs")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn generate_then_run_writes_all_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let task = dir.path().join("task");
    let out = dir.path().join("run");
    let g = matchforge(
        &[
            "generate",
            "--k",
            "3",
            "--samples",
            "300",
            "--seed",
            "2",
            "--out",
            path(&task),
        ],
        None,
    );
    assert!(g.status.success(), "{}", String::from_utf8_lossy(&g.stderr));
    assert!(task.join("truth.json").exists());
    let r = matchforge(
        &[
            "run",
            "--data",
            path(&task.join("data.csv")),
            "--schema",
            path(&task.join("schema.json")),
            "--bootstraps",
            "3",
            "--out",
            path(&out),
        ],
        None,
    );
    assert_eq!(r.status.code(), Some(0), "{}", String::from_utf8_lossy(&r.stderr));
    for f in [
        "report.json",
        "report.md",
        "candidates.csv",
        "a2a_bootstraps.csv",
        "balance.csv",
        "smd_a2a.csv",
        "propensity_cv.csv",
    ] {
        assert!(out.join(f).exists(), "{f}");
    }
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["candidates"].as_array().unwrap().len(), 12);
    assert_eq!(report["strategies"].as_array().unwrap().len(), 5);
}

#[test]
fn report_is_identical_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let mut reports = Vec::new();
    for threads in ["1", "3"] {
        let out = dir.path().join(threads);
        let r = matchforge(
            &[
                "run",
                "--synth",
                "k=4",
                "--samples",
                "250",
                "--bootstraps",
                "4",
                "--seed",
                "9",
                "--out",
                path(&out),
            ],
            Some(threads),
        );
        assert_eq!(r.status.code(), Some(0), "{}", String::from_utf8_lossy(&r.stderr));
        reports.push(fs::read(out.join("report.json")).unwrap());
    }
    assert_eq!(reports[0], reports[1]);
}

#[test]
fn all_candidates_failing_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    // Four treated rows cannot be split into five stratified folds.
    let mut csv = String::from("a,t,y\n");
    for i in 0..40 {
        csv.push_str(&format!("{},{},{}\n", i as f64 * 0.37 % 5.0, u8::from(i % 10 == 0), i));
    }
    fs::write(dir.path().join("d.csv"), csv).unwrap();
    fs::write(
        dir.path().join("s.json"),
        r#"{"a": "continuous", "t": "treatment", "y": "outcome"}"#,
    )
    .unwrap();
    let r = matchforge(
        &[
            "run",
            "--data",
            path(&dir.path().join("d.csv")),
            "--schema",
            path(&dir.path().join("s.json")),
            "--bootstraps",
            "2",
            "--out",
            path(&dir.path().join("out")),
        ],
        None,
    );
    assert_eq!(r.status.code(), Some(3), "{}", String::from_utf8_lossy(&r.stderr));
    assert!(dir.path().join("out/report.json").exists());
}

#[test]
fn usage_errors_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x");
    assert_eq!(
        matchforge(&["run", "--synth", "five", "--out", path(&out)], None)
            .status
            .code(),
        Some(1)
    );
    assert_eq!(matchforge(&["run", "--out", path(&out)], None).status.code(), Some(1));
    assert_eq!(
        matchforge(&["run", "--synth", "k=1", "--out", path(&out)], Some("zero"))
            .status
            .code(),
        Some(1)
    );
    assert!(!matchforge(
        &[
            "run",
            "--synth",
            "k=1",
            "--candidates",
            "LR-probit-nearest",
            "--out",
            path(&out)
        ],
        None
    )
    .status
    .success());
}

#[test]
fn experiment_writes_tables() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("exp");
    let common = [
        "--k",
        "0,2",
        "--seeds",
        "1",
        "--samples",
        "300",
        "--bootstraps",
        "3",
        "--out",
        path(&out),
    ];
    let r = matchforge(&[&["experiment", "confounders"][..], &common].concat(), None);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let overlap = fs::read_to_string(out.join("overlap.csv")).unwrap();
    assert_eq!(overlap.lines().count(), 3);
    let errors = fs::read_to_string(out.join("strategy_errors.csv")).unwrap();
    assert_eq!(errors.lines().count(), 1 + 2 * 5);
    let r = matchforge(&[&["experiment", "smd-correlation"][..], &common].concat(), None);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let corr = fs::read_to_string(out.join("smd_correlation.csv")).unwrap();
    assert!(corr.starts_with("k,magnitude_tau_mean,"));
    assert_eq!(corr.lines().count(), 3);
}
