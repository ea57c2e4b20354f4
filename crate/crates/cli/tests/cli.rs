use std::process::Command;

fn holdpp() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_holdpp"));
    cmd.env_remove("HOLDPP_OUTPUT_DIR");
    cmd
}

#[test]
fn failure_exits_nonzero_with_json_record() {
    let dir = tempfile::tempdir().unwrap();
    let out = holdpp()
        .args(["train", "--data"])
        .arg(dir.path().join("missing.csv"))
        .arg("--out")
        .arg(dir.path().join("m.ckpt"))
        .output()
        .unwrap();
    assert!(!out.status.success());
    let line = String::from_utf8(out.stderr).unwrap();
    let record: serde_json::Value = serde_json::from_str(line.trim()).unwrap();
    assert_eq!(record["status"], "error");
    assert!(record["error"].as_str().unwrap().contains("missing.csv"));
}

#[test]
fn pipeline_through_subcommands() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let ok = |cmd: &mut Command| {
        let out = cmd.output().unwrap();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        serde_json::from_slice::<serde_json::Value>(&out.stdout).unwrap()
    };

    // Output directory from the environment.
    let v = ok(holdpp().args(["generate-data", "--count", "40", "--seed", "1"]).env("HOLDPP_OUTPUT_DIR", d));
    assert_eq!(v["members"], 20);
    assert!(d.join("members.csv").exists() && d.join("holdouts.csv").exists());

    let model = d.join("model.ckpt");
    ok(holdpp()
        .args(["train", "--order", "2", "--depth", "2", "--width", "8", "--epochs", "5", "--data"])
        .arg(d.join("members.csv"))
        .arg("--out")
        .arg(&model));
    assert!(d.join("model.params.json").exists() && d.join("model.loss.csv").exists());

    let v = ok(holdpp()
        .args(["attack", "--n-time", "4", "--model"])
        .arg(&model)
        .arg("--members")
        .arg(d.join("members.csv"))
        .arg("--holdouts")
        .arg(d.join("holdouts.csv"))
        .arg("--out")
        .arg(d.join("attack.json")));
    let auroc = v["auroc"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&auroc));
    assert!(d.join("attack.roc.csv").exists());

    ok(holdpp()
        .args(["sample", "--count", "7", "--steps", "10", "--model"])
        .arg(&model)
        .arg("--out")
        .arg(d.join("samples.csv")));
    assert_eq!(std::fs::read_to_string(d.join("samples.csv")).unwrap().lines().count(), 8);

    let v = ok(holdpp()
        .args(["privacy-report", "--order", "1", "--eps-num", "1e-3", "--diameter-sq", "4", "--out"])
        .arg(d.join("privacy.json")));
    assert_eq!(v["epsilon_bound"].as_f64().unwrap(), 4000.0);
}

#[test]
fn sweep_prints_resolved_config() {
    let out = holdpp()
        .args(["sweep", "--preset", "full", "--orders", "1,3", "--print-config"])
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let cfg = holdpp::ExperimentConfig::from_toml_str(&text).unwrap();
    assert_eq!(cfg.grid.orders, vec![1, 3]);
    assert_eq!(cfg.train.epochs, 40_000);
    assert_eq!(cfg.repeats, 25);
}

#[test]
fn plot_without_records_fails() {
    let dir = tempfile::tempdir().unwrap();
    let out = holdpp().arg("plot").arg("--input").arg(dir.path()).output().unwrap();
    assert!(!out.status.success());
    assert!(!dir.path().join("plots").exists());
}
