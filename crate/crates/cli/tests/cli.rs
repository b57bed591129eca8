mod common;

use common::{ok, p, tabopt, DESK_SPACE};

#[test]
fn full_pipeline_writes_runs_and_reports() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let out = tmp.path().join("out");
    ok(&["gen-data", "--kind", "two_gaussians", "--n", "400", "--out", p(&data)]);
    for opt in ["adamw", "muon"] {
        ok(&[
            "tune", "--data", p(&data), "--model", "mlp", "--optimizer", opt, "--budget", "3", "--space", DESK_SPACE,
            "--max-epochs", "5", "--out", p(&out),
        ]);
        ok(&[
            "train", "--data", p(&data), "--model", "mlp", "--optimizer", opt, "--seeds", "0..2", "--max-epochs", "5",
            "--out", p(&out),
        ]);
    }
    let method = out.join("two_gaussians").join("mlp__muon");
    for f in ["space.json", "tuning.jsonl", "best_config.json", "runs.jsonl", "timings.jsonl"] {
        assert!(method.join(f).is_file(), "{f} missing");
    }
    let runs = std::fs::read_to_string(method.join("runs.jsonl")).unwrap();
    assert_eq!(runs.lines().count(), 3);
    assert!(!runs.contains("wall_time"));

    ok(&["aggregate", "--runs", p(&out), "--min-seeds", "3"]);
    let md = std::fs::read_to_string(out.join("report.md")).unwrap();
    let base = md.lines().find(|l| l.starts_with("| mlp:adamw |")).unwrap();
    assert!(base.starts_with("| mlp:adamw | 0.00 |"), "{base}");
    for f in ["aggregate.json", "report.csv", "plotdata.json"] {
        assert!(out.join(f).is_file());
    }

    let rendered = tmp.path().join("rendered");
    ok(&["report", "--aggregate", p(&out.join("aggregate.json")), "--out", p(&rendered)]);
    assert_eq!(std::fs::read_to_string(rendered.join("report.md")).unwrap(), md);
}

#[test]
fn existing_outputs_are_refused_without_force() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let args = ["gen-data", "--kind", "friedman", "--n", "100", "--out", p(&data)];
    ok(&args);
    assert_eq!(tabopt(&args).status.code(), Some(1));
    let mut forced = args.to_vec();
    forced.push("--force");
    ok(&forced);
}

#[test]
fn config_file_values_override_flags() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let cfg = tmp.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"kind": "linear_regression", "n": 150, "name": "from_config"}"#).unwrap();
    ok(&["gen-data", "--kind", "friedman", "--n", "999", "--out", p(&data), "--config", p(&cfg)]);
    let meta = std::fs::read_to_string(data.join("meta.json")).unwrap();
    assert!(meta.contains("from_config"), "{meta}");

    std::fs::write(&cfg, r#"{"no_such_option": 1}"#).unwrap();
    let out = tabopt(&["gen-data", "--kind", "friedman", "--n", "10", "--out", p(&data), "--config", p(&cfg), "--force"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn invalid_invocations_exit_with_one() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(tabopt(&["train", "--bogus"]).status.code(), Some(1));
    let missing = tmp.path().join("missing");
    let out = tabopt(&["train", "--data", p(&missing), "--model", "mlp", "--optimizer", "adamw", "--out", p(tmp.path())]);
    assert_eq!(out.status.code(), Some(1));
    let data = tmp.path().join("data");
    ok(&["gen-data", "--kind", "two_gaussians", "--n", "100", "--out", p(&data)]);
    let out = tabopt(&["train", "--data", p(&data), "--model", "mlp", "--optimizer", "adagrad", "--out", p(tmp.path())]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(tabopt(&["aggregate", "--runs", p(&missing)]).status.code(), Some(1));
    assert_eq!(tabopt(&["--help"]).status.code(), Some(0));
}

#[test]
fn training_twice_gives_identical_run_logs() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    ok(&["gen-data", "--kind", "friedman", "--n", "300", "--out", p(&data)]);
    let best = tmp.path().join("best.json");
    std::fs::write(
        &best,
        r#"{"dataset": "friedman", "model": "tabm_packed", "optimizer": "soap", "trial": 0, "objective": 0.0,
            "model_config": {"kind": "tabm_packed", "k": 3, "n_layers": 2, "width": 32, "dropout": 0.1},
            "optimizer_spec": {"rule": "soap", "lr": 0.001, "weight_decay": 0.01}}"#,
    )
    .unwrap();
    let logs: Vec<String> = ["a", "b"]
        .iter()
        .map(|run| {
            let out = tmp.path().join(run);
            ok(&[
                "train", "--data", p(&data), "--model", "tabm_packed", "--optimizer", "soap", "--seeds", "0,1",
                "--workers", "1", "--max-epochs", "4", "--best-config", p(&best), "--out", p(&out),
            ]);
            std::fs::read_to_string(out.join("friedman").join("tabm_packed__soap").join("runs.jsonl")).unwrap()
        })
        .collect();
    assert_eq!(logs[0], logs[1]);
}

#[test]
fn selftest_passes() {
    let stdout = ok(&["selftest"]);
    assert!(stdout.lines().all(|l| l.starts_with("PASS")), "{stdout}");
}
