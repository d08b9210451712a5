use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use taco_core::corpus::write_dataset;
use taco_core::toy::{keyword_corpus, ToyConfig};

fn taco(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_taco"))
        .args(args)
        .current_dir(dir)
        .env_remove("TACO_API_KEY")
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn dataset(dir: &Path, prompts: usize) -> PathBuf {
    let path = dir.join("data.jsonl");
    let samples: Vec<_> = keyword_corpus(&ToyConfig { prompts, seed: 3, ..ToyConfig::default() })
        .into_iter()
        .map(|p| p.sample)
        .collect();
    write_dataset(&path, &samples).unwrap();
    path
}

fn bootstrap(dir: &Path, out: &str, seed: &str) -> Output {
    taco(&["bootstrap", "--data", "data.jsonl", "--out", out, "--hidden", "8", "--epochs", "1", "--seed", seed], dir)
}

#[test]
fn missing_dataset_exits_2_and_names_path() {
    let dir = tempfile::tempdir().unwrap();
    let o = taco(&["bootstrap", "--data", "nowhere.jsonl", "--out", "m.ckpt"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("nowhere.jsonl"), "{}", stderr(&o));
}

#[test]
fn empty_dataset_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("data.jsonl"), "").unwrap();
    assert_eq!(bootstrap(dir.path(), "m.ckpt", "1").status.code(), Some(2));
}

#[test]
fn malformed_dataset_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("data.jsonl"), "{not json\n").unwrap();
    let o = bootstrap(dir.path(), "m.ckpt", "1");
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("line 1"));
}

#[test]
fn bootstrap_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    dataset(dir.path(), 20);
    assert!(bootstrap(dir.path(), "a.ckpt", "4").status.success());
    assert!(bootstrap(dir.path(), "b.ckpt", "4").status.success());
    assert!(bootstrap(dir.path(), "c.ckpt", "5").status.success());
    let read = |n: &str| std::fs::read(dir.path().join(n)).unwrap();
    assert_eq!(read("a.ckpt"), read("b.ckpt"));
    assert_ne!(read("a.ckpt"), read("c.ckpt"));
    assert!(dir.path().join("a.ckpt.vocab.json").is_file());
}

#[test]
fn remote_oracle_without_key_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    dataset(dir.path(), 5);
    assert!(bootstrap(dir.path(), "m.ckpt", "1").status.success());
    let o = taco(&["train", "--data", "data.jsonl", "--init", "m.ckpt", "--out", "rl.ckpt", "--oracle", "remote"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("TACO_API_KEY"));
}

#[test]
fn unknown_config_key_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    dataset(dir.path(), 5);
    assert!(bootstrap(dir.path(), "m.ckpt", "1").status.success());
    std::fs::write(dir.path().join("train.cfg"), "epochs = 1\nwarmup = 3\n").unwrap();
    let o = taco(&["train", "--data", "data.jsonl", "--init", "m.ckpt", "--out", "rl.ckpt", "--config", "train.cfg"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("warmup"));
}

#[test]
fn compress_keeps_half_and_reports_stats() {
    let dir = tempfile::tempdir().unwrap();
    dataset(dir.path(), 20);
    assert!(bootstrap(dir.path(), "m.ckpt", "1").status.success());
    let words: Vec<&str> = ["anchor", "of", "basalt", "and", "canyon"].iter().copied().cycle().take(100).collect();
    let text = words.join(" ");
    let o = taco(&["compress", "--checkpoint", "m.ckpt", "--text", &text, "--rate", "0.5"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o).split_whitespace().count(), 50);
    let stats = stderr(&o);
    assert!(stats.contains("original_n=100 compressed_n=50"), "{stats}");
    let field = |k: &str| -> f64 {
        stats.split_whitespace().find_map(|kv| kv.strip_prefix(k)).unwrap().parse().unwrap()
    };
    assert!((field("tau=") * field("cr=") - 1.0).abs() < 1e-3);

    let o = taco(&["compress", "--checkpoint", "m.ckpt", "--text", "anchor , of basalt .", "--rate", "1.0"], dir.path());
    assert_eq!(stdout(&o).trim(), "anchor , of basalt .");
    let o = taco(&["compress", "--checkpoint", "m.ckpt", "--text", "x", "--rate", "1.5"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn resumed_training_matches_uninterrupted() {
    let dir = tempfile::tempdir().unwrap();
    dataset(dir.path(), 12);
    assert!(bootstrap(dir.path(), "m.ckpt", "1").status.success());
    let common = ["train", "--data", "data.jsonl", "--init", "m.ckpt", "--epochs", "2", "--lr", "0.001", "--seed", "9", "--set", "tolerance=5", "--set", "max_output_tokens=5"];
    let run = |extra: &[&str]| {
        let mut args = common.to_vec();
        args.extend_from_slice(extra);
        let o = taco(&args, dir.path());
        assert!(o.status.success(), "{}", stderr(&o));
        stdout(&o)
    };
    let full = run(&["--out", "full.ckpt", "--cache-dir", "c1"]);
    assert!(full.contains("step 24"), "{full}");
    assert!(full.contains("seed 9"));
    run(&["--out", "part.ckpt", "--cache-dir", "c2", "--stop-at", "7"]);
    let resumed = run(&["--out", "part.ckpt", "--cache-dir", "c2", "--resume"]);
    assert!(resumed.contains("start step 7"), "{resumed}");
    assert!(resumed.contains("step 24"), "{resumed}");
    let read = |n: &str| std::fs::read(dir.path().join(n)).unwrap();
    assert_eq!(read("full.ckpt"), read("part.ckpt"));
}

#[test]
fn evaluate_writes_report_and_table() {
    let dir = tempfile::tempdir().unwrap();
    dataset(dir.path(), 10);
    assert!(bootstrap(dir.path(), "m.ckpt", "1").status.success());
    let args = ["evaluate", "--checkpoint", "m.ckpt", "--data", "data.jsonl", "--max-output-tokens", "5", "--out", "r.jsonl"];
    let o = taco(&args, dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let report = std::fs::read_to_string(dir.path().join("r.jsonl")).unwrap();
    // 5 rates x 7 metrics x (original, reference)
    assert_eq!(report.lines().count(), 70);
    assert!(dir.path().join("r.txt").is_file());
    assert!(!stderr(&o).contains("WARNING"));
    let stats = |d: &Path| stdout(&taco(&["cache", "stats", "--cache-dir", ".taco-cache"], d));
    let before = stats(dir.path());
    assert!(taco(&args, dir.path()).status.success());
    assert_eq!(before, stats(dir.path()));
    assert!(stdout(&taco(&["cache", "clear"], dir.path())).contains("removed"));

    std::fs::write(dir.path().join("empty.jsonl"), "").unwrap();
    let o = taco(&["evaluate", "--checkpoint", "m.ckpt", "--data", "empty.jsonl"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}
