use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::{json, Value};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_vfl-recon"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, name: &str, config: Value) -> String {
    let path = dir.join(name);
    fs::write(&path, serde_json::to_string_pretty(&config).unwrap()).unwrap();
    path.to_string_lossy().into_owned()
}

fn synth(n: usize, epochs: usize, defense: Value) -> Value {
    json!({
        "dataset": {"source": "synth", "n": n, "d_a": 6, "d_b": 3, "binary_cols": [0, 1]},
        "train": {"epochs": epochs},
        "defense": defense,
        "seeds": [3]
    })
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

/// Data rows of a CSV written with a leading provenance comment.
fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("# config_sha256: "));
    lines.skip(1).map(|l| l.split(',').map(str::to_string).collect()).collect()
}

fn train_and_attack(dir: &Path, defense: Value, extra: &[&str]) -> (Value, Vec<Vec<String>>) {
    let cfg = write_config(dir, "cfg.json", synth(1500, 3, defense));
    let out = dir.join("run");
    let o = run(&["train", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let transcript = out.join("transcript.vflt");
    let out_s = out.to_str().unwrap();
    let mut args = vec![
        "attack",
        "--transcript",
        transcript.to_str().unwrap(),
        "--reference",
        out_s,
        "--out",
        out_s,
    ];
    args.extend_from_slice(extra);
    let o = bin().args(&args).output().unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    (read_json(&out.join("attack.json")), csv_rows(&out.join("accuracy.csv")))
}

#[test]
fn train_writes_checkpoint_transcript_and_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "cfg.json", synth(600, 2, json!({"kind": "none"})));
    let out = dir.path().join("out");
    let o = run(&["train", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["checkpoint.json", "checkpoint.bin", "transcript.vflt", "metrics.csv"] {
        assert!(out.join(f).is_file(), "{f} missing");
    }
    let rows = csv_rows(&out.join("metrics.csv"));
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[1][0], "1");

    let echo = read_json(&out.join("config.json"));
    let hash = echo["config_sha256"].as_str().unwrap();
    assert_eq!(read_json(&out.join("checkpoint.json"))["config_hash"], hash);
    let metrics = fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert!(metrics.starts_with(&format!("# config_sha256: {hash}")));
    assert_eq!(echo["config"]["hidden_sizes"], json!([32, 16]));
    assert_eq!(echo["config"]["passive_cols"], json!([0, 1, 2, 3, 4, 5]));
}

#[test]
fn repeated_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "cfg.json", synth(500, 2, json!({"kind": "masquerade"})));
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        assert!(run(&["train", "--config", &cfg, "--out", out.to_str().unwrap()]).status.success());
    }
    for entry in fs::read_dir(&a).unwrap() {
        let name = entry.unwrap().file_name();
        assert_eq!(
            fs::read(a.join(&name)).unwrap(),
            fs::read(b.join(&name)).unwrap(),
            "{name:?} differs"
        );
    }
}

#[test]
fn masquerade_transcript_records_the_defense_kind() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "cfg.json", synth(500, 1, json!({"kind": "masquerade"})));
    let out = dir.path().join("out");
    assert!(run(&["train", "--config", &cfg, "--out", out.to_str().unwrap()]).status.success());
    let o = run(&["transcript", "inspect", out.join("transcript.vflt").to_str().unwrap()]);
    assert!(o.status.success());
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["header"]["defense"]["kind"], "masquerade");
    assert_eq!(v["summary"]["phase"], "inference");
    assert_eq!(v["summary"]["rows"], 500);
    // The fabricated bits stay with the passive side.
    let header = serde_json::to_string(&v["header"]).unwrap();
    assert!(!header.contains("fabricated"));
}

#[test]
fn undefended_attack_reaches_full_accuracy() {
    let dir = tempfile::tempdir().unwrap();
    let (report, rows) = train_and_attack(dir.path(), json!({"kind": "none"}), &[]);
    assert_eq!(report["best_accuracy"], 1.0);
    assert_eq!(report["report"]["d"], 6);
    assert!(rows.iter().filter(|r| r[3] == "1").count() >= 2);
}

#[test]
fn heavy_noise_leaves_no_solution_and_marks_accuracy_na() {
    let dir = tempfile::tempdir().unwrap();
    let (report, rows) = train_and_attack(dir.path(), json!({"kind": "gaussian", "sigma": 0.5}), &[]);
    assert_eq!(report["report"]["solutions"], json!([]));
    assert_eq!(report["best_accuracy"], Value::Null);
    assert_eq!(rows, vec![vec!["none", "", "", "n/a"]]);
}

#[test]
fn masqueraded_attack_returns_only_the_fabricated_vector() {
    let dir = tempfile::tempdir().unwrap();
    let (report, _) = train_and_attack(dir.path(), json!({"kind": "masquerade"}), &[]);
    let reference = read_json(&dir.path().join("run/reference.json"));
    assert_eq!(report["report"]["solutions"], json!([reference["fabricated_bits"]]));
    assert_eq!(report["matches_fabricated"], true);
}

#[test]
fn regression_attack_is_selectable() {
    let dir = tempfile::tempdir().unwrap();
    let (report, rows) =
        train_and_attack(dir.path(), json!({"kind": "none"}), &["--algorithm", "regression"]);
    assert_eq!(report["report"]["algorithm"], "regression");
    assert_eq!(report["report"]["r_used"], 7);
    assert_eq!(rows.len(), 1);
}

/// Bank-marketing-like table: numeric, yes/no and categorical columns with
/// a label that depends on several of them.
fn bank_like_csv(rows: usize) -> String {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
    let jobs = ["admin", "technician", "services", "retired"];
    let mut s = String::from("age,job,housing,loan,balance,campaign,y\n");
    for _ in 0..rows {
        let age: f64 = rng.random_range(18.0..90.0);
        let job = jobs[rng.random_range(0..4)];
        let housing = rng.random_bool(0.5);
        let loan = rng.random_bool(0.2);
        let balance: f64 = rng.random_range(-500.0..5000.0);
        let campaign: u32 = rng.random_range(1..10);
        let score = 0.04 * (age - 50.0) + if job == "retired" { 1.0 } else { -0.3 }
            - if housing { 0.8 } else { 0.0 }
            + balance / 2500.0
            - 0.2 * campaign as f64
            + rng.random_range(-0.7..0.7);
        let yn = |b: bool| if b { "yes" } else { "no" };
        s.push_str(&format!(
            "{age:.0},{job},{},{},{balance:.0},{campaign},{}\n",
            yn(housing),
            yn(loan),
            yn(score > 0.0)
        ));
    }
    s
}

#[test]
fn bank_like_csv_beats_the_majority_baseline() {
    let dir = tempfile::tempdir().unwrap();
    let text = bank_like_csv(2000);
    let data = dir.path().join("bank.csv");
    fs::write(&data, &text).unwrap();
    let yes = text.lines().skip(1).filter(|l| l.ends_with(",yes")).count();
    let baseline = yes.max(2000 - yes) as f64 / 2000.0;

    let cfg = write_config(
        dir.path(),
        "cfg.json",
        json!({
            "dataset": {"source": "csv", "path": data, "label_column": "y"},
            "train": {"epochs": 20},
            "seeds": [1]
        }),
    );
    let out = dir.path().join("out");
    let o = run(&["train", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = csv_rows(&out.join("metrics.csv"));
    let final_acc: f64 = rows.last().unwrap()[2].parse().unwrap();
    assert!(final_acc > baseline, "{final_acc} <= baseline {baseline}");

    // 9 encoded columns: the leading half is widened to keep the job group whole.
    let echo = read_json(&out.join("config.json"));
    assert_eq!(echo["config"]["passive_cols"], json!([0, 1, 2, 3, 4]));
}

#[test]
fn bench_writes_one_row_per_cell() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("bench");
    let o = run(&[
        "bench", "--n", "300,600", "--d-min", "3", "--d-max", "6", "--reps", "1", "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = csv_rows(&out.join("bench.csv"));
    assert_eq!(rows.len(), 8);
    assert_eq!(rows[0], vec!["300", "3", rows[0][2].as_str()]);
    let summary = read_json(&out.join("bench_summary.json"));
    assert_eq!(summary["slopes"].as_array().unwrap().len(), 2);
}

#[test]
fn exit_codes_distinguish_config_and_dimension_errors() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write_config(dir.path(), "bad.json", json!({"defense": {"kind": "gaussian", "sigma": -0.1}}));
    assert_eq!(run(&["train", "--config", &bad]).status.code(), Some(2));
    assert_eq!(run(&["train", "--config", "/nonexistent/cfg.json"]).status.code(), Some(2));
    let cols = write_config(dir.path(), "cols.json", json!({"passive_cols": [0, 99], "seeds": [1]}));
    let o = run(&["train", "--config", &cols, "--out", dir.path().join("x").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("column 99"));

    let o = run(&["bench", "--d-min", "30", "--d-max", "31", "--n", "100"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("cap"));

    let o = bin()
        .args(["default-config"])
        .env("VFL_RECON_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn repro_exact_cover_reports_full_agreement() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["repro", "exact-cover", "--out", dir.path().to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stdout));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("[PASS] decisions agree with brute force: 100/100"));
    assert_eq!(csv_rows(&dir.path().join("exact-cover/exact_cover.csv")).len(), 100);
}

#[test]
fn repro_invariance_passes() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["repro", "invariance", "--out", dir.path().to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stdout));
    let report = read_json(&dir.path().join("invariance/report.json"));
    assert_eq!(report["checks"].as_array().unwrap().len(), 2);
}
