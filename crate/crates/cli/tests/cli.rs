use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_outfit-rank"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn gen(dir: &Path, seed: &str) {
    ok(&[
        "gen", "--users", "8", "--tops", "20", "--bottoms", "20", "--outfits", "10", "--seed", seed, "--out",
        dir.to_str().unwrap(),
    ]);
}

fn train(data: &Path, out: &Path, epochs: &str) -> String {
    ok(&[
        "train", "--data", data.to_str().unwrap(), "--out", out.to_str().unwrap(), "--epochs", epochs,
        "--batch-size", "16", "--latent-dim", "4", "--preset", "desk", "--seed", "3",
    ])
}

#[test]
fn gen_reports_counts_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let out = ok(&[
        "gen", "--users", "8", "--tops", "20", "--bottoms", "20", "--outfits", "10", "--seed", "5", "--out",
        a.to_str().unwrap(),
    ]);
    assert!(out.contains("users=8 tops=20 bottoms=20 outfits=80 train=64 test=16"), "{out}");
    gen(&b, "5");
    for f in ["schema.json", "items.jsonl", "users.jsonl", "train_users.jsonl", "test_users.jsonl", "truth.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let lines = fs::read_to_string(a.join("items.jsonl")).unwrap().lines().count();
    assert_eq!(lines, 40);
}

#[test]
fn missing_required_flag_exits_2() {
    let out = run(&["gen", "--users", "8"]);
    assert_eq!(out.status.code(), Some(2));
    let out = run(&["train", "--out", "/nonexistent"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn invalid_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    gen(dir.path(), "1");
    let out = run(&[
        "train", "--data", dir.path().to_str().unwrap(), "--out", dir.path().join("m").to_str().unwrap(),
        "--mu", "1.5",
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error[config]"));
}

#[test]
fn eval_rand_baseline_writes_metrics() {
    let dir = tempfile::tempdir().unwrap();
    gen(dir.path(), "2");
    let out_dir = dir.path().join("eval");
    let out = ok(&[
        "eval", "--data", dir.path().to_str().unwrap(), "--out", out_dir.to_str().unwrap(), "--baseline", "rand",
    ]);
    assert!(out.contains("rand"), "{out}");
    let v: serde_json::Value = serde_json::from_slice(&fs::read(out_dir.join("metrics.json")).unwrap()).unwrap();
    let reports = v.as_array().unwrap();
    assert_eq!(reports.len(), 1);
    assert_eq!(reports[0]["scorer"], "rand");
    assert_eq!(reports[0]["T"], 10);
    let auc = reports[0]["auc"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&auc));
}

#[test]
fn train_rank_eval_explain_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let model = dir.path().join("model");
    gen(&data, "4");
    let log = train(&data, &model, "2");
    assert_eq!(log.lines().filter(|l| l.starts_with("epoch=")).count(), 3, "{log}");
    let ckpt = model.join("model.ckpt");
    assert!(ckpt.exists() && model.join("manifest.json").exists());

    let rank_dir = dir.path().join("rank");
    let out = ok(&[
        "rank", "--data", data.to_str().unwrap(), "--out", rank_dir.to_str().unwrap(), "--checkpoint",
        ckpt.to_str().unwrap(), "--user", "u00000", "--top", "t00003", "--limit", "5",
    ]);
    assert_eq!(out.lines().count(), 2 + 5, "{out}");
    let v: serde_json::Value = serde_json::from_slice(&fs::read(rank_dir.join("ranking.json")).unwrap()).unwrap();
    let c = v["candidates"].as_array().unwrap();
    assert_eq!(c.len(), 20);
    let p: Vec<f64> = c.iter().map(|r| r["p_mij"].as_f64().unwrap()).collect();
    assert!(p.windows(2).all(|w| w[0] >= w[1]));

    let eval_dir = dir.path().join("eval");
    ok(&[
        "eval", "--data", data.to_str().unwrap(), "--out", eval_dir.to_str().unwrap(), "--checkpoint",
        ckpt.to_str().unwrap(),
    ]);
    let v: serde_json::Value = serde_json::from_slice(&fs::read(eval_dir.join("metrics.json")).unwrap()).unwrap();
    let names: Vec<&str> = v.as_array().unwrap().iter().map(|r| r["scorer"].as_str().unwrap()).collect();
    assert_eq!(names, ["model", "pop_t", "pop_u", "rand"]);
    assert!(v[0]["checkpoint_sha256"].is_string());

    let explain_dir = dir.path().join("explain");
    ok(&[
        "explain", "--data", data.to_str().unwrap(), "--out", explain_dir.to_str().unwrap(), "--checkpoint",
        ckpt.to_str().unwrap(), "--user", "u00001", "--samples", "100",
    ]);
    assert!(explain_dir.join("correlation.csv").exists());
    assert!(explain_dir.join("importance.json").exists());

    let mut written: Vec<String> = fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    written.sort();
    assert_eq!(written, ["data", "eval", "explain", "model", "rank"]);
}

#[test]
fn unknown_user_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let model = dir.path().join("model");
    gen(&data, "6");
    train(&data, &model, "1");
    let out = run(&[
        "rank", "--data", data.to_str().unwrap(), "--out", dir.path().join("r").to_str().unwrap(), "--checkpoint",
        model.join("model.ckpt").to_str().unwrap(), "--user", "nobody", "--top", "t00000",
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn training_twice_gives_identical_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    gen(&data, "7");
    train(&data, &dir.path().join("a"), "2");
    train(&data, &dir.path().join("b"), "2");
    let read = |d: &str| fs::read(dir.path().join(d).join("model.ckpt")).unwrap();
    assert_eq!(read("a"), read("b"));
}

#[test]
fn gradcheck_passes_and_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["gradcheck", "--instances", "2", "--out", dir.path().to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("PASS"));
    assert!(dir.path().join("gradcheck.json").exists());
}
