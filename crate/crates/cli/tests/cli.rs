use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_contextcache"));
    c.env_remove("CONTEXTCACHE_STORE_PATH").env_remove("CONTEXTCACHE_D");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn write_dialogues(path: &Path, n: usize) -> usize {
    let ds: Vec<_> = contextcache::bench::bundled_dialogues().into_iter().take(n).collect();
    contextcache::bench::write_dialogues(std::fs::File::create(path).unwrap(), &ds).unwrap();
    ds.iter().map(|d| d.turns.len() / 2).sum()
}

#[test]
fn inspect_empty_store_prints_header_only() {
    let dir = tempfile::tempdir().unwrap();
    let store = dir.path().join("c.log");
    let o = run(&["inspect", "--store-path", store.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(stdout(&o).lines().count(), 1);
    assert!(stdout(&o).contains("query"));
}

#[test]
fn warm_then_inspect_lists_every_exchange_then_flush_empties() {
    let dir = tempfile::tempdir().unwrap();
    let store = dir.path().join("c.log");
    let file = dir.path().join("d.jsonl");
    let exchanges = write_dialogues(&file, 12);
    let s = store.to_str().unwrap();
    let o = run(&["warm", "--file", file.to_str().unwrap(), "--store-path", s]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let o = run(&["inspect", "--store-path", s]);
    assert_eq!(stdout(&o).lines().count(), 1 + exchanges);

    assert!(run(&["flush", "--store-path", s]).status.success());
    assert_eq!(stdout(&run(&["inspect", "--store-path", s])).lines().count(), 1);
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(run(&["inspect", "--no-such-flag"]).status.code(), Some(2));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(run(&[]).status.code(), Some(2));
}

#[test]
fn runtime_errors_exit_one_with_diagnostic() {
    let o = run(&["inspect"]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.starts_with("error:"), "{err}");
    let o = run(&["inspect", "--store-path", "/tmp/x", "--theta1", "2"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("theta1"));
}

#[test]
fn flag_beats_env_beats_file() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b, c) = (dir.path().join("a.log"), dir.path().join("b.log"), dir.path().join("c.log"));
    let cfg = dir.path().join("cfg.toml");
    std::fs::write(&cfg, format!("store_path = {:?}\n", a.to_str().unwrap())).unwrap();
    let cfg = cfg.to_str().unwrap();

    assert!(run(&["inspect", "--config", cfg]).status.success());
    assert!(a.exists());
    let o = bin().args(["inspect", "--config", cfg]).env("CONTEXTCACHE_STORE_PATH", &b).output().unwrap();
    assert!(o.status.success());
    assert!(b.exists());
    let o = bin()
        .args(["inspect", "--config", cfg, "--store-path", c.to_str().unwrap()])
        .env("CONTEXTCACHE_STORE_PATH", &b)
        .output()
        .unwrap();
    assert!(o.status.success());
    assert!(c.exists());
}

#[test]
fn bench_writes_reports() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.jsonl");
    write_dialogues(&data, 30);
    let out = dir.path().join("out");
    let o = run(&["bench", "--dataset", data.to_str().unwrap(), "--seed", "3", "--out", out.to_str().unwrap(), "--llm-delay-ms", "0"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(out.join("report.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);
    assert!(out.join("workload.jsonl").exists());
    assert!(out.join("attention.log.jsonl").exists());
    assert!(stdout(&o).contains("precision"));

    let one = dir.path().join("one");
    let o = run(&[
        "bench", "--workload", out.join("workload.jsonl").to_str().unwrap(), "--strategy", "attention",
        "--out", one.to_str().unwrap(), "--llm-delay-ms", "0",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(one.join("report.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
    assert!(csv.lines().nth(1).unwrap().starts_with("attention,"));
}

#[test]
fn train_writes_loadable_weights() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.jsonl");
    write_dialogues(&data, 20);
    let weights = dir.path().join("w.bin");
    let o = run(&["train", "--dataset", data.to_str().unwrap(), "--epochs", "2", "--d", "8", "--out", weights.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(stdout(&o).lines().filter(|l| l.starts_with("epoch")).count(), 3);
    let params = contextcache::attention::read_weights(&weights).unwrap();
    assert_eq!(params.dim(), 8);

    // the weights plug back in through weights_path
    let store = dir.path().join("c.log");
    let o = run(&[
        "warm", "--file", data.to_str().unwrap(), "--d", "8",
        "--weights-path", weights.to_str().unwrap(), "--store-path", store.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}
