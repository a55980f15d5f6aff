use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn micnn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_micnn")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = micnn(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn write_config(dir: &Path) -> String {
    let path = dir.join("train.cfg");
    fs::write(&path, "# short run\ncrop_size = 32\nepochs = 2\nconv1_channels = 4\nconv2_channels = 4\n").unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn pipeline_from_generate_to_mcnemar() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let cfg = write_config(dir.path());

    let out = ok(&["--seed", "3", "--out", d, "generate", "--groups", "12"]);
    assert!(out.contains("6 train and 6 test bags"), "{out}");

    let run_a = dir.path().join("a");
    let run_b = dir.path().join("b");
    for run in [&run_a, &run_b] {
        ok(&["--config", &cfg, "--seed", "1", "--out", run.to_str().unwrap(), "train", "--data", d]);
    }
    let ck_a = fs::read(run_a.join("checkpoint.bin")).unwrap();
    assert_eq!(ck_a, fs::read(run_b.join("checkpoint.bin")).unwrap());
    let history = fs::read_to_string(run_a.join("loss_history.csv")).unwrap();
    assert_eq!(history.lines().count(), 3);
    assert_eq!(history, fs::read_to_string(run_b.join("loss_history.csv")).unwrap());

    let test = dir.path().join("test.bin");
    let ck = run_a.join("checkpoint.bin");
    let out = ok(&["--out", run_a.to_str().unwrap(), "eval", "--checkpoint", ck.to_str().unwrap(), "--data", test.to_str().unwrap()]);
    assert!(out.contains("task 1 accuracy"), "{out}");
    let preds = fs::read_to_string(run_a.join("predictions.csv")).unwrap();
    assert_eq!(preds.lines().next(), Some("group,task,label,predicted"));
    assert_eq!(preds.lines().count(), 1 + 6 * 2);
    assert!(run_a.join("heterogeneity_task0.csv").exists());

    ok(&[
        "--out",
        run_a.to_str().unwrap(),
        "visualize",
        "--checkpoint",
        ck.to_str().unwrap(),
        "--data",
        test.to_str().unwrap(),
        "--count",
        "2",
    ]);
    let ppm = fs::read(run_a.join("heatmap_1_task0.ppm")).unwrap();
    assert!(ppm.starts_with(b"P6\n64 64\n255\n"));

    let p = run_a.join("predictions.csv");
    let out = ok(&["mcnemar", p.to_str().unwrap(), p.to_str().unwrap(), "--task", "1"]);
    assert!(out.contains("b=0 c=0"), "{out}");
    assert!(out.contains("p=1.0"), "{out}");
}

#[test]
fn crop_size_experiment_writes_rows() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let cfg = write_config(dir.path());
    ok(&["--seed", "5", "--out", d, "generate", "--groups", "8"]);
    let out = ok(&["--config", &cfg, "--out", d, "experiment", "crop-size", "--data", d, "--sizes", "11,64"]);
    assert!(out.contains("task 1 accuracy"), "{out}");
    let csv = fs::read_to_string(dir.path().join("crop_size.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("cell,task,accuracy,stderr,seeds"));
    assert_eq!(csv.lines().count(), 1 + 2 * 2);
}

#[test]
fn unknown_config_key_is_reported_with_its_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, "epochs = 2\nlearning_rate = 0.1\n").unwrap();
    let out = micnn(&["--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap(), "train"]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 2"), "{err}");
    assert!(err.contains("learning_rate"), "{err}");
}

#[test]
fn unknown_prior_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = micnn(&["--out", dir.path().to_str().unwrap(), "generate", "--prior", "uniform"]);
    assert!(!out.status.success());
}
