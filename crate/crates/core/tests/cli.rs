use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use psdebnn::inference::{Checkpoint, CHECKPOINT_VERSION};

fn psdebnn(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_psdebnn"))
        .args(args)
        .current_dir(cwd)
        .env("PSDEBNN_DATA_DIR", cwd.join("data"))
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn first_line(path: &Path) -> String {
    fs::read_to_string(path).unwrap().lines().next().unwrap_or_default().to_string()
}

const TINY: &[&str] = &[
    "--set",
    "dataset.n=80",
    "--set",
    "train.epochs=2",
    "--set",
    "train.batch_size=32",
    "--set",
    "model.schedule.num_steps=10",
];

fn train_tiny(dir: &Path, out: &str) -> Output {
    let mut args = vec!["train", "--config", "odefirst", "--seed", "3", "--out", out];
    args.extend_from_slice(TINY);
    psdebnn(&args, dir)
}

#[test]
fn train_writes_run_artifacts_and_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let out = train_tiny(tmp.path(), "runs");
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let run = tmp.path().join("runs/odefirst");
    for file in ["config.json", "log.csv", "checkpoint.bin", "metrics.csv", "entropy_hist.csv"] {
        assert!(run.join(file).exists(), "{file}");
    }
    assert_eq!(
        first_line(&run.join("log.csv")),
        "epoch,elbo,log_likelihood,kl,val_accuracy,val_ece,grad_norm,seconds,event"
    );
    assert_eq!(first_line(&run.join("metrics.csv")), "metric,value,split");
    assert_eq!(first_line(&run.join("entropy_hist.csv")), "bin_left,bin_right,count,source");
    let snapshot: serde_json::Value = serde_json::from_str(&fs::read_to_string(run.join("config.json")).unwrap()).unwrap();
    assert_eq!(snapshot["seed"], 3);

    let again = train_tiny(tmp.path(), "runs2");
    assert!(again.status.success());
    let a = fs::read(run.join("checkpoint.bin")).unwrap();
    let b = fs::read(tmp.path().join("runs2/odefirst/checkpoint.bin")).unwrap();
    assert_eq!(a, b);

    let eval = psdebnn(
        &["eval", "--checkpoint", "runs/odefirst/checkpoint.bin", "--samples", "2"],
        tmp.path(),
    );
    assert!(eval.status.success(), "{}", String::from_utf8_lossy(&eval.stderr));
    let text = stdout(&eval);
    assert!(text.starts_with("metric,value,split"));
    assert!(text.contains("roc_auc"));
    assert!(text.contains("brownian_draws"));
}

#[test]
fn eval_rejects_a_checkpoint_with_another_version() {
    let tmp = tempfile::tempdir().unwrap();
    let model = psdebnn::cli::run_preset("ode").unwrap().model;
    let params = psdebnn::inference::Psdebnn::new(model.clone()).unwrap().init_params(0).unwrap();
    let ck = Checkpoint {
        config: model,
        metadata: serde_json::json!({}),
        params,
    };
    let mut bytes = ck.to_bytes().unwrap();
    bytes[8..12].copy_from_slice(&(CHECKPOINT_VERSION + 1).to_le_bytes());
    fs::write(tmp.path().join("bad.bin"), bytes).unwrap();
    let out = psdebnn(&["eval", "--checkpoint", "bad.bin"], tmp.path());
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("version"));
}

#[test]
fn invalid_config_fields_exit_with_a_field_message() {
    let tmp = tempfile::tempdir().unwrap();
    let out = psdebnn(&["train", "--config", "odefirst", "--set", "train.epoch=3"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("epoch"));

    let out = psdebnn(&["train", "--config", "no-such-preset"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn kl_diagnose_prints_a_table_and_writes_csv() {
    let tmp = tempfile::tempdir().unwrap();
    let out = psdebnn(
        &["kl-diagnose", "--sigma-q", "1", "--sigma-p", "0.5", "--steps", "1024,2048", "--out", "kl.csv"],
        tmp.path(),
    );
    assert!(out.status.success());
    let text = stdout(&out);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "steps,kl,kl_per_step");
    let per_step: f64 = lines[2].split(',').nth(2).unwrap().parse().unwrap();
    assert!((per_step - 0.806853).abs() / 0.806853 < 0.01);
    assert_eq!(fs::read_to_string(tmp.path().join("kl.csv")).unwrap(), text);

    let matched = psdebnn(&["kl-diagnose", "--sigma-q", "0.7", "--sigma-p", "0.7", "--steps", "16,32"], tmp.path());
    for line in stdout(&matched).lines().skip(1) {
        assert_eq!(line.split(',').nth(1).unwrap().parse::<f64>().unwrap(), 0.0);
    }
}

#[test]
fn sample_paths_writes_one_csv_per_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let out = psdebnn(&["sample-paths", "--config", "fig1-fixed", "--seeds", "3", "--out", "p"], tmp.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for k in 0..3 {
        let file = tmp.path().join(format!("p/fig1-fixed/seed_{k}.csv"));
        let text = fs::read_to_string(&file).unwrap();
        assert_eq!(text.lines().count(), 102);
        assert!(text.starts_with('t'));
    }
}

#[test]
fn gen_data_caches_the_dataset() {
    let tmp = tempfile::tempdir().unwrap();
    let out = psdebnn(&["gen-data", "--config", "ode", "--set", "dataset.n=50"], tmp.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let path = stdout(&out).trim().to_string();
    assert!(path.starts_with(tmp.path().join("data").to_str().unwrap()));
    let text = fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().next().unwrap(), "label,x_1,x_2");
    assert_eq!(text.lines().count(), 51);
}
