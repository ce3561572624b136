use std::path::Path;
use std::process::{Command, Output};

fn srlf(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_srlf")).current_dir(dir).arg("--quiet").args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn digest(o: &Output) -> String {
    stdout(o).lines().find_map(|l| l.strip_prefix("log digest: ")).expect("digest line").to_string()
}

/// Users u1..u5 have 4 ratings each, u6 has 2: five are eligible.
fn movielens_fixture(dir: &Path) {
    let mut ratings = String::new();
    for u in 1..=6 {
        let n = if u == 6 { 2 } else { 4 };
        for k in 0..n {
            let item = (u + k) % 12 + 1;
            ratings.push_str(&format!("{u}::{item}::4::{}\n", 1000 + k));
        }
    }
    std::fs::write(dir.join("ratings.dat"), ratings).unwrap();
    let movies: String = (1..=12).map(|i| format!("{i}::Movie {i} ({})::Drama|Comedy\n", 1990 + i)).collect();
    std::fs::write(dir.join("movies.dat"), movies).unwrap();
}

fn ingest(dir: &Path, extra: &[&str]) -> Output {
    let mut args =
        vec!["ingest", "--dataset", "movielens", "--ratings", "ratings.dat", "--meta", "movies.dat", "--out", "data"];
    args.extend_from_slice(extra);
    srlf(dir, &args)
}

#[test]
fn ingest_writes_tables() {
    let tmp = tempfile::tempdir().unwrap();
    movielens_fixture(tmp.path());
    let o = ingest(tmp.path(), &[]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    for table in ["interactions.jsonl", "catalog.jsonl", "splits.jsonl", "ingest.json"] {
        assert!(tmp.path().join("data").join(table).is_file(), "{table}");
    }
    let splits = std::fs::read_to_string(tmp.path().join("data/splits.jsonl")).unwrap();
    assert_eq!(splits.lines().count(), 5);
}

#[test]
fn ingest_missing_file_names_the_path() {
    let tmp = tempfile::tempdir().unwrap();
    movielens_fixture(tmp.path());
    std::fs::remove_file(tmp.path().join("movies.dat")).unwrap();
    let o = ingest(tmp.path(), &[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("movies.dat"), "{}", stderr(&o));
}

#[test]
fn ingest_oversampling_reports_stats() {
    let tmp = tempfile::tempdir().unwrap();
    movielens_fixture(tmp.path());
    let o = ingest(tmp.path(), &["--sample-count", "6"]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("only 5 are eligible"), "{err}");
    assert!(err.contains("6 users total"), "{err}");
    assert!(ingest(tmp.path(), &["--sample-count", "5"]).status.success());
}

#[test]
fn ingest_malformed_rows_abort() {
    let tmp = tempfile::tempdir().unwrap();
    movielens_fixture(tmp.path());
    let mut ratings = std::fs::read_to_string(tmp.path().join("ratings.dat")).unwrap();
    ratings.push_str("garbage line\n");
    std::fs::write(tmp.path().join("ratings.dat"), ratings).unwrap();
    assert_eq!(ingest(tmp.path(), &[]).status.code(), Some(2));
    assert!(ingest(tmp.path(), &["--max-malformed", "0.1"]).status.success());
}

#[test]
fn train_eval_report_on_synthetic_fixture() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let o = srlf(dir, &["synth-fixture", "--out", "fx", "--users", "8"]);
    assert!(o.status.success(), "{}", stderr(&o));

    let a = srlf(dir, &["train", "--data", "fx", "--epochs", "1", "--checkpoint-dir", "a"]);
    assert!(a.status.success(), "{}", stderr(&a));
    let b = srlf(dir, &["train", "--data", "fx", "--epochs", "1", "--checkpoint-dir", "b"]);
    assert_eq!(digest(&a), digest(&b));

    // Interrupted, then resumed: same digest.
    let args = ["train", "--data", "fx", "--epochs", "1", "--checkpoint-dir", "c"];
    let partial = srlf(dir, &[&args[..], &["--stop-after-users", "3"]].concat());
    assert!(stdout(&partial).contains("completed: false"));
    let resumed = srlf(dir, &[&args[..], &["--resume"]].concat());
    assert_eq!(digest(&resumed), digest(&a));

    let full = srlf(dir, &["eval", "--data", "fx", "--state", "a/state.json", "--label", "full", "--out", "full.json"]);
    assert!(full.status.success(), "{}", stderr(&full));
    srlf(dir, &["train", "--data", "fx", "--epochs", "1", "--ablation", "no-reflection", "--checkpoint-dir", "nr"]);
    let nr = srlf(
        dir,
        &["eval", "--data", "fx", "--state", "nr/state.json", "--label", "no_reflection", "--out", "nr.json"],
    );
    assert!(nr.status.success(), "{}", stderr(&nr));

    let report = srlf(dir, &["report", "full.json", "nr.json"]);
    assert!(report.status.success());
    let text = stdout(&report);
    let table: Vec<&str> = text.split("\n\n").next().unwrap().lines().collect();
    assert_eq!(table.len(), 4, "{text}");
    assert!(table[2].starts_with("full") && table[3].starts_with("no_reflection"));
    assert!(text.contains("Reference"));
}

#[test]
fn baselines_on_synthetic_fixture() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    assert!(srlf(dir, &["synth-fixture", "--out", "fx", "--users", "60"]).status.success());
    let metric = |method: &str| -> f64 {
        let out = format!("{method}.json");
        let o = srlf(dir, &["eval", "--data", "fx", "--method", method, "--out", &out]);
        assert!(o.status.success(), "{}", stderr(&o));
        let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.join(&out)).unwrap()).unwrap();
        v["metrics"]["NDCG@1"].as_f64().unwrap()
    };
    let random = metric("random");
    assert!((0.0..=0.3).contains(&random), "{random}");
    assert!(metric("bm25") >= random);
    assert_eq!(metric("perfect"), 1.0);
}

#[test]
fn state_and_usage_errors_exit_1() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    assert!(srlf(dir, &["synth-fixture", "--out", "fx", "--users", "3"]).status.success());
    let cases: [&[&str]; 5] = [
        &["train", "--data", "fx", "--checkpoint-dir", "none", "--resume"],
        &["eval", "--data", "fx", "--method", "srlf"],
        &["eval", "--data", "fx", "--state", "missing/state.json"],
        &["train", "--data", "nowhere"],
        &["train", "--data", "fx", "--window", "1"],
    ];
    for args in cases {
        let o = srlf(dir, args);
        assert_eq!(o.status.code(), Some(1), "{args:?}: {}", stderr(&o));
    }
    assert!(!dir.join("none").exists());
}

#[test]
fn backend_misconfiguration_exits_2_before_writing() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    assert!(srlf(dir, &["synth-fixture", "--out", "fx", "--users", "3"]).status.success());
    let o = Command::new(env!("CARGO_BIN_EXE_srlf"))
        .current_dir(dir)
        .args(["--quiet", "train", "--data", "fx", "--backend", "live", "--model", "m"])
        .args(["--checkpoint-dir", "live"])
        .env_remove("SRLF_API_KEY")
        .env_remove("SRLF_API_BASE")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(!dir.join("live").exists());

    std::fs::write(dir.join("bad.jsonl"), "not json\n").unwrap();
    let o = srlf(dir, &["train", "--data", "fx", "--backend", "scripted", "--script", "bad.jsonl"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn config_file_and_cache_tools() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    assert!(srlf(dir, &["synth-fixture", "--out", "fx", "--users", "3"]).status.success());
    std::fs::write(dir.join("c.toml"), "[loop]\nepochs = 1\nablation = \"no_setwise\"\n").unwrap();
    let o =
        srlf(dir, &["train", "--data", "fx", "--config", "c.toml", "--checkpoint-dir", "r", "--cache", "cache.jsonl"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let saved: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("r/config.json")).unwrap()).unwrap();
    assert_eq!(saved["loop"]["ablation"], "no_setwise");
    assert_eq!(saved["loop"]["epochs"], 1);

    let stats = srlf(dir, &["cache", "stats", "cache.jsonl"]);
    assert!(stdout(&stats).contains("assess:"), "{}", stdout(&stats));
    assert!(srlf(dir, &["cache", "verify", "cache.jsonl", "--model", "latent-oracle"]).status.success());
    assert_eq!(srlf(dir, &["cache", "verify", "cache.jsonl", "--model", "other"]).status.code(), Some(2));

    // Replay from the warm cache reproduces the run.
    let replay = srlf(
        dir,
        &[
            "train",
            "--data",
            "fx",
            "--config",
            "c.toml",
            "--checkpoint-dir",
            "r2",
            "--cache",
            "cache.jsonl",
            "--replay",
        ],
    );
    assert_eq!(digest(&replay), digest(&o));
}
