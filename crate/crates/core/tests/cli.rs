use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use peil_core::io::{sha256_hex, Manifest};
use peil_core::metrics::experiments::ExperimentResult;

fn peil(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_peil")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) {
    let out = peil(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
}

fn p(dir: &Path, name: &str) -> PathBuf {
    dir.join(name)
}

fn s(path: &Path) -> &str {
    path.to_str().unwrap()
}

const TINY_RUN: &str = r#"{"estimator": {"layers": 1, "hidden": 4, "cfo_layers": 1, "cfo_hidden": 4}, "init_seed": 3}"#;

#[test]
fn gen_wireless_is_byte_identical_and_manifested() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (p(dir.path(), "a.peib"), p(dir.path(), "b.peib"));
    for f in [&a, &b] {
        ok(&["gen-wireless", "--frames", "6", "--seed", "4", "--snr", "20:20", "-o", s(f)]);
    }
    let bytes = fs::read(&a).unwrap();
    assert_eq!(bytes, fs::read(&b).unwrap());
    let m = Manifest::load(&p(dir.path(), "a.peib.manifest.json")).unwrap();
    assert_eq!(m.command, "gen-wireless");
    assert_eq!(m.seeds, vec![4]);
    assert_eq!(m.outputs[0].sha256, sha256_hex(&bytes));

    let c = p(dir.path(), "c.peib");
    ok(&["gen-wireless", "--frames", "6", "--seed", "5", "--snr", "20:20", "-o", s(&c)]);
    assert_ne!(fs::read(&c).unwrap(), bytes);
}

#[test]
fn config_errors_exit_one_with_json_diagnostic() {
    let dir = tempfile::tempdir().unwrap();
    let out = peil(&["gen-wireless", "--profile", "xyz", "--frames", "2", "-o", s(&p(dir.path(), "x"))]);
    assert_eq!(out.status.code(), Some(1));
    let line = String::from_utf8(out.stderr).unwrap();
    let diag: serde_json::Value = serde_json::from_str(line.trim()).unwrap();
    assert_eq!(diag["error"], "UnknownProfile");

    assert_eq!(peil(&["gen-wireless", "--snr", "9:1", "-o", "x"]).status.code(), Some(1));
    assert_eq!(peil(&["train", "--task", "radar", "--data", "x", "-o", "y"]).status.code(), Some(1));
    assert_eq!(peil(&["frobnicate"]).status.code(), Some(1));
    let missing = peil(&["train", "--task", "wireless", "--data", s(&p(dir.path(), "none.peib")), "-o", "y"]);
    assert_eq!(missing.status.code(), Some(1));
    assert!(!p(dir.path(), "x").exists());
}

#[test]
fn corrupt_dataset_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let data = p(dir.path(), "d.peib");
    ok(&["gen-wireless", "--frames", "3", "-o", s(&data)]);
    let mut bytes = fs::read(&data).unwrap();
    bytes.truncate(bytes.len() / 2);
    fs::write(&data, &bytes).unwrap();
    let out = peil(&[
        "eval",
        "--data",
        s(&data),
        "--methods",
        "oracle_ls",
        "--out",
        s(&p(dir.path(), "r.csv")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("CorruptPayload"));
}

#[test]
fn wireless_train_eval_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let data = p(dir.path(), "train.peib");
    let test = p(dir.path(), "test.peib");
    let run = p(dir.path(), "run.json");
    fs::write(&run, TINY_RUN).unwrap();
    ok(&["gen-wireless", "--frames", "8", "--seed", "1", "-o", s(&data)]);
    ok(&["gen-wireless", "--frames", "4", "--seed", "2", "--snr", "30:30", "-o", s(&test)]);
    let (c1, c2) = (p(dir.path(), "m1.ckpt"), p(dir.path(), "m2.ckpt"));
    for c in [&c1, &c2] {
        ok(&[
            "train",
            "--task",
            "wireless",
            "--config",
            s(&run),
            "--data",
            s(&data),
            "--val",
            s(&test),
            "--steps",
            "3",
            "--batch",
            "4",
            "--seed",
            "7",
            "-o",
            s(c),
        ]);
    }
    assert_eq!(fs::read(&c1).unwrap(), fs::read(&c2).unwrap());
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(p(dir.path(), "m1.ckpt.report.json")).unwrap()).unwrap();
    assert_eq!(report["step_losses"].as_array().unwrap().len(), 3);
    assert!(Manifest::load(&p(dir.path(), "m1.ckpt.manifest.json")).is_ok());

    let sup = p(dir.path(), "sup.ckpt");
    ok(&[
        "train",
        "--task",
        "wireless",
        "--mode",
        "supervised",
        "--config",
        s(&run),
        "--data",
        s(&data),
        "--steps",
        "2",
        "--batch",
        "4",
        "-o",
        s(&sup),
    ]);

    let (r1, r2) = (p(dir.path(), "r1.csv"), p(dir.path(), "r2.csv"));
    for r in [&r1, &r2] {
        ok(&[
            "eval",
            "--ckpt",
            s(&c1),
            "--ckpt",
            s(&sup),
            "--data",
            s(&test),
            "--methods",
            "peil,supervised,oracle_ls,oracle_bound",
            "--out",
            s(r),
        ]);
    }
    let text = fs::read_to_string(&r1).unwrap();
    assert_eq!(text, fs::read_to_string(&r2).unwrap());
    let res = ExperimentResult::from_csv(&text).unwrap();
    assert_eq!(res.rows.len(), 4 * 5);
    assert!(res.rows.iter().all(|r| r.snr_db == 30.0 && r.value.is_finite()));
}

#[test]
fn perturbation_experiment_writes_csv_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let data = p(dir.path(), "train.peib");
    let run = p(dir.path(), "run.json");
    fs::write(&run, TINY_RUN).unwrap();
    ok(&["gen-wireless", "--frames", "4", "-o", s(&data)]);
    let ckpt = p(dir.path(), "m.ckpt");
    ok(&[
        "train",
        "--task",
        "wireless",
        "--config",
        s(&run),
        "--data",
        s(&data),
        "--steps",
        "1",
        "--batch",
        "2",
        "-o",
        s(&ckpt),
    ]);
    let cfg = p(dir.path(), "exp.json");
    let exp = serde_json::json!({
        "peil_ckpt": ckpt,
        "grid": {"n_seeds": 1, "frames": 3, "base_seed": 10},
        "deltas": [-0.1, 0.0, 0.1],
        "snrs": [10.0, 30.0],
    });
    fs::write(&cfg, exp.to_string()).unwrap();
    let out = p(dir.path(), "out");
    ok(&["experiment", "perturb", "--config", s(&cfg), "--out", s(&out)]);
    let text = fs::read_to_string(out.join("perturb.csv")).unwrap();
    assert!(text.starts_with("delta_theta,csi_nmse,delta_phi,ser,oracle_ls_csi_nmse,oracle_ls_ser\n"));
    assert_eq!(text.lines().count(), 1 + 3 + 1);
    ok(&["experiment", "gate", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(fs::read_to_string(out.join("gate.csv")).unwrap().lines().count(), 3);
    assert!(out.join("gate.csv.manifest.json").exists());

    let bad = peil(&["experiment", "mri", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn mri_generate_train_eval() {
    let dir = tempfile::tempdir().unwrap();
    let data = p(dir.path(), "mri.peib");
    ok(&["gen-mri", "--size", "16", "--coils", "2", "--n", "2", "--seed", "3", "-o", s(&data)]);
    let run = p(dir.path(), "run.json");
    fs::write(&run, r#"{"unet": {"base": 4, "depth": 1, "cg_iters": 3}}"#).unwrap();
    let ckpt = p(dir.path(), "m.ckpt");
    ok(&[
        "train",
        "--task",
        "mri",
        "--config",
        s(&run),
        "--data",
        s(&data),
        "--steps",
        "1",
        "--batch",
        "2",
        "-o",
        s(&ckpt),
    ]);
    let csv = p(dir.path(), "r.csv");
    ok(&[
        "eval",
        "--ckpt",
        s(&ckpt),
        "--data",
        s(&data),
        "--methods",
        "peil,zerofill,sense",
        "--out",
        s(&csv),
    ]);
    let res = ExperimentResult::from_csv(&fs::read_to_string(&csv).unwrap()).unwrap();
    assert!(res.rows.iter().any(|r| r.metric == "rss_object_mean"));
    assert_eq!(res.rows.iter().filter(|r| r.metric == "nmse").count(), 2 * 3);

    let wrong = peil(&["eval", "--data", s(&data), "--methods", "oracle_ls", "--out", s(&csv)]);
    assert_eq!(wrong.status.code(), Some(1));
}

#[test]
fn selftest_passes() {
    let out = peil(&["selftest"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.lines().count() > 20);
    assert!(text.lines().all(|l| l.starts_with("ok")));
}
