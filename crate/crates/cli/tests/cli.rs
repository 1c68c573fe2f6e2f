use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn repgan(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_repgan"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn smoke_run_writes_a_complete_run_directory() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let res = repgan(&["run", "--config", p(&configs().join("smoke.json")), "--out", p(&out), "--single-thread"]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    for f in [
        "data.csv",
        "model.json",
        "train_curve.csv",
        "samples_gan.csv",
        "samples_drs.csv",
        "samples_mh_gan.csv",
        "samples_rep_tau0.05.csv",
        "chains_rep_tau0.05.csv",
        "chains_ddls_tau0.05.csv",
        "acceptance.csv",
        "metrics.json",
        "summary.csv",
        "manifest.json",
    ] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    assert!(!out.join("chains_gan.csv").exists());
    let summary = fs::read_to_string(out.join("summary.csv")).unwrap();
    assert!(summary.starts_with("label,method,tau,"));
    assert_eq!(summary.lines().count(), 6);
    let acc = fs::read_to_string(out.join("acceptance.csv")).unwrap();
    assert_eq!(acc.lines().next().unwrap(), "checkpoint_step,method,mean_acceptance,std_acceptance,chains");
    // Two checkpoints times the two MH-corrected methods.
    assert_eq!(acc.lines().count(), 5);

    // The manifest replays to identical artifacts.
    let replay = dir.path().join("replay");
    let res = repgan(&["run", "--config", p(&out.join("manifest.json")), "--out", p(&replay), "--single-thread"]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    for a in manifest["artifacts"].as_array().unwrap() {
        let f = a["file"].as_str().unwrap();
        assert_eq!(fs::read(out.join(f)).unwrap(), fs::read(replay.join(f)).unwrap(), "{f}");
    }

    // Samples from the run can be re-evaluated and appended to a summary.
    let eval_summary = dir.path().join("eval.csv");
    let res = repgan(&[
        "eval",
        "--samples",
        p(&out.join("samples_rep_tau0.05.csv")),
        "--target",
        "grid:3:1:0.1",
        "--summary",
        p(&eval_summary),
    ]);
    assert!(res.status.success());
    let report: serde_json::Value = serde_json::from_slice(&res.stdout).unwrap();
    assert_eq!(report["sample_count"], 200);
    assert_eq!(report["modes_covered"]["total"], 9);
    let rows = fs::read_to_string(&eval_summary).unwrap();
    assert!(rows.lines().nth(1).unwrap().starts_with("samples_rep_tau0.05,external,"));

    // Sampling from the saved model.
    let sdir = dir.path().join("sampled");
    let res = repgan(&[
        "sample", "--model", p(&out.join("model.json")), "--method", "rep", "--tau", "0.05", "--steps", "5", "--chains",
        "7", "--seed", "3", "--out", p(&sdir),
    ]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let chains = fs::read_to_string(sdir.join("chains_rep_tau0.05.csv")).unwrap();
    assert_eq!(chains.lines().count(), 1 + 7 * 5);
    assert_eq!(fs::read_to_string(sdir.join("samples_rep_tau0.05.csv")).unwrap().lines().count(), 8);
}

#[test]
fn train_subcommand_matches_the_experiment_model() {
    let dir = tempfile::tempdir().unwrap();
    let job = dir.path().join("job.json");
    fs::write(
        &job,
        r#"{"schema_version": 1, "dataset": {"kind": "swiss_roll", "n": 500},
            "train": {"gan_kind": "wasserstein", "iterations": 5, "batch_size": 32,
                      "arch": {"latent_dim": 2, "hidden": [8]}},
            "master_seed": 11}"#,
    )
    .unwrap();
    let out = dir.path().join("trained");
    let res = repgan(&["train", "--config", p(&job), "--out", p(&out)]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let curve = fs::read_to_string(out.join("train_curve.csv")).unwrap();
    assert_eq!(curve.lines().next().unwrap(), "step,loss_d,loss_g");

    let exp = dir.path().join("exp.json");
    fs::write(
        &exp,
        format!(
            r#"{{"schema_version": 1, "dataset": {{"kind": "swiss_roll", "n": 500}},
                "model": {{"train": {{"gan_kind": "wasserstein", "iterations": 5, "batch_size": 32,
                                      "arch": {{"latent_dim": 2, "hidden": [8]}}}}}},
                "methods": [{{"method": "gan"}}], "chains": 10, "output_dir": "{}", "master_seed": 11}}"#,
            p(&dir.path().join("exp_out"))
        ),
    )
    .unwrap();
    let res = repgan(&["run", "--config", p(&exp)]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    assert_eq!(
        fs::read(out.join("model.json")).unwrap(),
        fs::read(dir.path().join("exp_out/model.json")).unwrap()
    );
}

#[test]
fn verify_balance_suite_passes_and_reports_json() {
    let res = repgan(&["verify", "--suite", "balance"]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let report: serde_json::Value = serde_json::from_slice(&res.stdout).unwrap();
    assert_eq!(report["pass"], true);
    assert_eq!(report["suite"], "balance");
    assert!(report["checks"].as_array().unwrap().len() >= 5);
}

#[test]
fn bad_inputs_exit_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    fs::write(
        &cfg,
        r#"{"schema_version": 1, "dataset": {"kind": "grid", "n_side": 3, "n": 10},
            "model": {"train": {"gan_kind": "vanilla"}},
            "methods": [{"method": "rep", "tau": -1}], "output_dir": "x", "master_seed": 0}"#,
    )
    .unwrap();
    let res = repgan(&["run", "--config", p(&cfg)]);
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&res.stderr).contains("methods[0].tau"));

    let missing = dir.path().join("nope.json");
    let res = repgan(&["sample", "--model", p(&missing), "--method", "mh", "--out", p(dir.path())]);
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&res.stderr).contains("missing checkpoint"));

    let res = repgan(&["eval", "--samples", p(&missing), "--target", "grid:0:1:1"]);
    assert_eq!(res.status.code(), Some(2));

    let res = repgan(&["verify", "--suite", "everything"]);
    assert_eq!(res.status.code(), Some(2));
}
