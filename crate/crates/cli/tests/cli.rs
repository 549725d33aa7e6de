use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rtm_core::features::FeatureManifest;

const TINY: [&str; 10] = [
    "--format", "synthetic", "--d-e", "8", "--h", "5", "--n-h", "6", "--dropout", "0",
];

fn rtm(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rtm"))
        .args(args)
        .env("RTM_CACHE_DIR", dir.join("cache"))
        .env_remove("RUST_LOG")
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn with<A: AsRef<str>, B: AsRef<str>>(base: &[A], extra: &[B]) -> Vec<String> {
    let base = base.iter().map(|s| s.as_ref().to_string());
    base.chain(extra.iter().map(|s| s.as_ref().to_string())).collect()
}

fn run(args: &[String], dir: &Path) -> Output {
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    rtm(&refs, dir)
}

fn train_tiny(dir: &Path, out: &str, extra: &[&str]) -> Output {
    let mut args = with(&["train"], &TINY);
    args.extend(with(&["--out-dir", out, "--max-epochs", "3"], extra));
    run(&args, dir)
}

/// Canonical TSV dataset with `dev` empty, plus matching 4-d vectors.
fn write_fixture(dir: &Path) -> (PathBuf, PathBuf) {
    let data = dir.join("data");
    fs::create_dir_all(&data).unwrap();
    let train = "q1\twhat is a cat\ta1\ta cat is an animal\t1\n\
                 q1\twhat is a cat\ta2\tthe sky is blue\t0\n\
                 q2\twho wrote it\ta3\tshe wrote it\t1\n\
                 q2\twho wrote it\ta4\ta dog ran\t0\n";
    let test = "q3\twhere is it\tb1\tit is here\t1\n\
                q3\twhere is it\tb2\tnot there\t0\n\
                q3\twhere is it\tb3\tnowhere at all\t1\n\
                q4\twhen\tb4\tnow\t0\n\
                q4\twhen\tb5\tlater\t1\n";
    fs::write(data.join("train.tsv"), train).unwrap();
    fs::write(data.join("dev.tsv"), "").unwrap();
    fs::write(data.join("test.tsv"), test).unwrap();
    let words = [
        "what", "is", "a", "cat", "an", "animal", "the", "sky", "blue", "who", "wrote", "it", "she", "dog", "ran",
        "where", "here", "not", "there",
    ];
    let mut vectors = String::new();
    for (i, w) in words.iter().enumerate() {
        let v: Vec<String> = (0..4).map(|j| format!("{:.3}", ((i * 7 + j * 3) % 11) as f64 / 11.0 - 0.5)).collect();
        vectors.push_str(&format!("{w} {}\n", v.join(" ")));
    }
    let vec_path = dir.join("vectors.txt");
    fs::write(&vec_path, vectors).unwrap();
    (data, vec_path)
}

fn fixture_args<'a>(data: &'a str, vectors: &'a str) -> Vec<&'a str> {
    vec!["--format", "trecqa", "--dataset", data, "--embeddings", vectors, "--d-e", "4"]
}

#[test]
fn prepare_reports_51_features_and_reuses_the_cache() {
    let dir = tempfile::tempdir().unwrap();
    let args = with(&["prepare"], &TINY);
    let first = run(&args, dir.path());
    assert_eq!(code(&first), 0, "{}", stderr(&first));
    assert!(stdout(&first).contains("features: 51"));
    assert!(stdout(&first).contains("cache: miss"));
    assert!(dir.path().join("cache").is_dir(), "RTM_CACHE_DIR honored");
    let second = run(&args, dir.path());
    assert!(stdout(&second).contains("cache: hit"));
}

#[test]
fn missing_embedding_file_exits_2_naming_it() {
    let dir = tempfile::tempdir().unwrap();
    let (data, _) = write_fixture(dir.path());
    let o = rtm(
        &["prepare", "--format", "trecqa", "--dataset", data.to_str().unwrap(), "--embeddings", "no-such-vectors.txt", "--d-e", "4"],
        dir.path(),
    );
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("no-such-vectors.txt"));
}

#[test]
fn usage_and_config_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&rtm(&["train", "--no-such-flag"], dir.path())), 1);
    assert_eq!(code(&rtm(&["train", "--format", "synthetic", "--dropout", "1.5"], dir.path())), 1);
    assert_eq!(code(&rtm(&["--help"], dir.path())), 0);
}

#[test]
fn training_is_deterministic_and_records_its_config() {
    let dir = tempfile::tempdir().unwrap();
    let a = train_tiny(dir.path(), "out", &["--seed", "7", "--attention", "phrase", "--k", "1"]);
    assert_eq!(code(&a), 0, "{}", stderr(&a));
    let first = fs::read(dir.path().join("out/model.rtm")).unwrap();
    let b = train_tiny(dir.path(), "out", &["--seed", "7", "--attention", "phrase", "--k", "1"]);
    assert_eq!(code(&b), 0);
    let second = fs::read(dir.path().join("out/model.rtm")).unwrap();
    assert_eq!(first, second);

    let header = String::from_utf8_lossy(&first[..2000.min(first.len())]).into_owned();
    for line in ["config.attention=phrase", "config.k=1", "config.seed=7"] {
        assert!(header.contains(line), "missing {line}");
    }
    // Omitted flags fall back to the published defaults.
    for line in ["config.dropout=0.4", "config.lr=0.001", "config.lambda=1e-6"] {
        let o = rtm(&["train", "--format", "synthetic", "--d-e", "8", "--h", "5", "--max-epochs", "1", "--out-dir", "defaults"], dir.path());
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        let bytes = fs::read(dir.path().join("defaults/model.rtm")).unwrap();
        assert!(String::from_utf8_lossy(&bytes).contains(line), "missing {line}");
    }
    let report = fs::read_to_string(dir.path().join("out/train-report.txt")).unwrap();
    assert!(report.contains("# seed\t7"));
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("run.cfg"), "k=2\npooling=average\nmax_epochs=1\n").unwrap();
    let mut args = with(&["train"], &TINY);
    args.extend(with(&["--config", "run.cfg", "--k", "4", "--out-dir", "o"], &[] as &[&str]));
    let o = run(&args, dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = String::from_utf8_lossy(&fs::read(dir.path().join("o/model.rtm")).unwrap()).into_owned();
    assert!(text.contains("config.k=4"));
    assert!(text.contains("config.pooling=average"));
    assert!(text.contains("config.max_epochs=1"));
}

#[test]
fn evaluate_matches_hand_computed_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let (data, vectors) = write_fixture(dir.path());
    let (data, vectors) = (data.to_str().unwrap().to_string(), vectors.to_str().unwrap().to_string());
    let base = fixture_args(&data, &vectors);

    // Perfect oracle: score = label.
    fs::write(dir.path().join("oracle.tsv"), "q3\tb1\t1\nq3\tb2\t0\nq3\tb3\t1\nq4\tb4\t0\nq4\tb5\t1\n").unwrap();
    let o = run(&with(&["evaluate"], &with(&base, &["--scores", "oracle.tsv"])), dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("MAP\t1\n"));

    // q3 ranks b2, b1, b3: AP (1/2 + 2/3)/2 = 7/12, RR 1/2. q4 ranks b4, b5:
    // AP 1/2, RR 1/2. MAP = 13/24, MRR = 1/2, P@1 = 0.
    fs::write(dir.path().join("s.tsv"), "q3\tb1\t0.5\nq3\tb2\t0.9\nq3\tb3\t0.1\nq4\tb4\t2\nq4\tb5\t1\n").unwrap();
    let o = run(&with(&["evaluate"], &with(&base, &["--scores", "s.tsv", "--report", "r.json"])), dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let out = stdout(&o);
    let metric = |name: &str| -> f64 {
        let line = out.lines().find(|l| l.starts_with(&format!("{name}\t"))).unwrap();
        line.split('\t').nth(1).unwrap().parse().unwrap()
    };
    assert!((metric("MAP") - 13.0 / 24.0).abs() < 1e-15, "{out}");
    assert!(out.contains("MRR\t0.5\n"));
    assert!(out.contains("P@1\t0\n"));
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("r.json")).unwrap()).unwrap();
    assert_eq!(json["questions"].as_array().unwrap().len(), 2);
    assert_eq!(json["provenance"]["run.format"], "trecqa");

    let o = run(&with(&["evaluate"], &with(&base, &["--scores", "s.tsv", "--trigger"])), dir.path());
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("dev"));
}

#[test]
fn manifest_mismatch_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let o = train_tiny(dir.path(), "out", &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = FeatureManifest::default_51().to_text();
    let mut lines: Vec<&str> = text.lines().collect();
    lines.swap(0, 1);
    fs::write(dir.path().join("swapped.txt"), lines.join("\n")).unwrap();
    let model = dir.path().join("out/model.rtm");
    let args = ["evaluate", "--format", "synthetic", "--model", model.to_str().unwrap()];
    let ok = rtm(&args, dir.path());
    assert_eq!(code(&ok), 0, "{}", stderr(&ok));
    let bad = rtm(&[&args[..], &["--manifest", "swapped.txt"]].concat(), dir.path());
    assert_eq!(code(&bad), 4, "{}", stderr(&bad));
}

#[test]
fn corrupt_model_file_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.rtm"), b"RTMMODEL garbage").unwrap();
    let o = rtm(&["evaluate", "--format", "synthetic", "--model", "bad.rtm"], dir.path());
    assert_eq!(code(&o), 2);
}

#[test]
fn grad_check_passes_and_names_a_corrupted_block() {
    let dir = tempfile::tempdir().unwrap();
    let o = rtm(&["grad-check", "--attention", "phrase", "--pooling", "max", "--k", "4", "--report", "g.json"], dir.path());
    assert_eq!(code(&o), 0, "{}{}", stdout(&o), stderr(&o));
    assert!(stdout(&o).contains("tensor slices checked: 12"));
    assert!(dir.path().join("g.json").exists());

    let o = rtm(&["grad-check", "--attention", "token", "--pooling", "average", "--k", "1", "--corrupt", "attention"], dir.path());
    assert_eq!(code(&o), 5);
    assert!(stderr(&o).contains("attention"));
}

#[test]
fn kfold_reports_runs_and_spread() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = with(&["kfold"], &TINY);
    args.extend(with(&["--folds", "2", "--k", "1,4", "--max-epochs", "5", "--lr", "0.01", "--jobs", "2", "--out-dir", "o"], &[] as &[&str]));
    let o = run(&args, dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("scheduled runs: 4"));
    assert!(stdout(&o).contains("spread(k=1) <= spread(k=4)"));
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("o/kfold.json")).unwrap()).unwrap();
    let runs = json["report"]["runs"].as_array().unwrap();
    assert_eq!(runs.len(), 4);
    assert!(runs.iter().all(|r| r["map"].is_number()));
    assert_eq!(json["report"]["fold_seed"], 1);
    assert_eq!(json["config"]["k"], "1");
    assert_eq!(json["report"]["summaries"].as_array().unwrap().len(), 2);
}

#[test]
fn kfold_schedules_folds_times_k() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = with(&["kfold"], &TINY);
    args.extend(with(&["--folds", "10", "--k", "1,2,4", "--max-epochs", "1", "--out-dir", "o"], &[] as &[&str]));
    let o = run(&args, dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("scheduled runs: 30"));
}

#[test]
fn features_dump_has_a_header_and_rows() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&with(&["features"], &with(&TINY, &["--split", "dev", "--limit", "3"])), dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let out = stdout(&o);
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines.len(), 4);
    assert_eq!(lines[0].split('\t').count(), 53);
    assert!(lines[1].starts_with("dev"));
}

#[test]
fn divergence_exits_3_with_a_loadable_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let o = train_tiny(dir.path(), "out", &["--lr", "1e300"]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    let err = stderr(&o);
    let path = err.split("checkpoint: ").nth(1).unwrap().trim();
    assert!(rtm_core::trainer::load_model::<f64>(&dir.path().join(path)).is_ok());
}
