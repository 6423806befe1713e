use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mergeidx"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn mergeidx")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "mergeidx {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// 100 items that are all the same unit vector, one tag.
fn tight_stream(dir: &Path) -> PathBuf {
    let path = dir.join("tight.csv");
    let mut s = String::new();
    for i in 0..100 {
        s.push_str(&format!("{i},0,{},1,0,0,0\n", 10 + i));
    }
    fs::write(&path, s).unwrap();
    path
}

fn small_gen(dir: &Path, name: &str, seed: u64) -> PathBuf {
    let out = dir.join(name);
    ok(&[
        "gen", "--out", p(&out), "--items", "3000", "--clusters", "20", "--dim", "16", "--tags", "5",
        "--seed", &seed.to_string(),
    ]);
    out
}

fn data_rows(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn gen_is_deterministic() {
    let dir = TempDir::new().unwrap();
    let a = small_gen(dir.path(), "a.csv", 7);
    let b = small_gen(dir.path(), "b.csv", 7);
    let c = small_gen(dir.path(), "c.csv", 8);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    assert_ne!(fs::read(&a).unwrap(), fs::read(&c).unwrap());
    let truth = fs::read_to_string(dir.path().join("a.csv.truth.csv")).unwrap();
    assert_eq!(truth.lines().filter(|l| !l.starts_with("item_id")).count(), 3000);
    assert!(dir.path().join("a.csv.manifest.json").exists());
}

#[test]
fn gen_rejects_bad_cluster_counts() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("x.csv");
    let zero = run(&["gen", "--out", p(&out), "--clusters", "0"]);
    assert_eq!(zero.status.code(), Some(2));
    let too_many = run(&["gen", "--out", p(&out), "--items", "5", "--clusters", "10"]);
    assert!(!too_many.status.success());
    assert!(String::from_utf8_lossy(&too_many.stderr).contains("exceeds"));
}

#[test]
fn train_tight_stream_gives_one_slot() {
    let dir = TempDir::new().unwrap();
    let stream = tight_stream(dir.path());
    let cb = dir.path().join("m.cb");
    let stdout = ok(&["train", "--stream", p(&stream), "--out", p(&cb), "--batch-size", "16"]);
    assert!(stdout.starts_with("active slots: 1 "), "{stdout}");
    let rows = data_rows(&dir.path().join("m.cb.index.csv"));
    assert_eq!(rows.len(), 100);
    assert!(rows.iter().all(|r| r[2] == rows[0][2]));
    let steps = fs::read_to_string(dir.path().join("m.cb.steps.jsonl")).unwrap();
    assert_eq!(steps.lines().count(), 7);
}

#[test]
fn vq_keeps_its_size_and_reruns_match() {
    let dir = TempDir::new().unwrap();
    let stream = small_gen(dir.path(), "s.csv", 1);
    let a = dir.path().join("a.cb");
    let b = dir.path().join("b.cb");
    for out in [&a, &b] {
        let s = ok(&["train", "--stream", p(&stream), "--algo", "vq", "--codebook-size", "16", "--out", p(out)]);
        assert!(s.starts_with("active slots: 16 "), "{s}");
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());

    let m1 = dir.path().join("m1.cb");
    let m2 = dir.path().join("m2.cb");
    ok(&["train", "--stream", p(&stream), "--out", p(&m1)]);
    ok(&["train", "--stream", p(&stream), "--out", p(&m2)]);
    assert_eq!(fs::read(&m1).unwrap(), fs::read(&m2).unwrap());
    assert_eq!(
        fs::read(dir.path().join("m1.cb.index.csv")).unwrap(),
        fs::read(dir.path().join("m2.cb.index.csv")).unwrap()
    );
}

fn active_slots(stdout: &str) -> usize {
    stdout.trim_start_matches("active slots: ").split(' ').next().unwrap().parse().unwrap()
}

#[test]
fn merge_targets() {
    let dir = TempDir::new().unwrap();
    let stream = small_gen(dir.path(), "s.csv", 2);
    let cb = dir.path().join("m.cb");
    let n = active_slots(&ok(&["train", "--stream", p(&stream), "--out", p(&cb)]));
    assert!(n > 1);

    let same = dir.path().join("same.cb");
    let s = ok(&["merge", "--codebook", p(&cb), "--target", &n.to_string(), "--out", p(&same)]);
    assert_eq!(s.trim(), format!("coarse prototypes: {n}"));

    let one = dir.path().join("one.cb");
    let s = ok(&["merge", "--codebook", p(&cb), "--target", "1", "--out", p(&one), "--index", p(&dir.path().join("m.cb.index.csv"))]);
    let k: usize = s.trim().trim_start_matches("coarse prototypes: ").parse().unwrap();
    assert!(k >= 1 && k < n, "{s}");
    let rows = data_rows(&dir.path().join("m.cb.index.csv"));
    assert!(rows.iter().all(|r| r[1] != "-"));

    let big = run(&["merge", "--codebook", p(&cb), "--target", &(n + 1).to_string(), "--out", p(&dir.path().join("big.cb"))]);
    assert!(!big.status.success());
}

#[test]
fn assign_scores_and_sentinel() {
    let dir = TempDir::new().unwrap();
    let stream = tight_stream(dir.path());
    let cb = dir.path().join("m.cb");
    ok(&["train", "--stream", p(&stream), "--out", p(&cb), "--batch-size", "16"]);

    let input = dir.path().join("q.csv");
    fs::write(&input, "1,0,1,1,0,0,0\n2,0,1,0,1,0,0\n").unwrap();
    let out = dir.path().join("a.csv");
    ok(&["assign", "--codebook", p(&cb), "--input", p(&input), "--out", p(&out)]);
    let rows = data_rows(&out);
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0][2], "0");
    assert!((rows[0][3].parse::<f64>().unwrap() - 1.0).abs() < 1e-12);
    assert_eq!(rows[1][2], "-1");
    assert_eq!(rows[1][1], "-1");
}

#[test]
fn assign_matches_training_index_for_stable_items() {
    let dir = TempDir::new().unwrap();
    let stream = small_gen(dir.path(), "s.csv", 4);
    let cb = dir.path().join("m.cb");
    ok(&["train", "--stream", p(&stream), "--out", p(&cb)]);
    let out = dir.path().join("a.csv");
    ok(&["assign", "--codebook", p(&cb), "--input", p(&stream), "--out", p(&out)]);
    let index = data_rows(&dir.path().join("m.cb.index.csv"));
    let assigned = data_rows(&out);
    let by_id: std::collections::HashMap<_, _> = assigned.iter().map(|r| (r[0].clone(), r[2].clone())).collect();
    // codewords move after an item is indexed, so only most lookups agree
    let agree = index.iter().filter(|r| by_id.get(&r[0]) == Some(&r[2])).count();
    assert!(agree as f64 >= 0.9 * index.len() as f64, "{agree} of {}", index.len());
}

fn summary_value(summary: &str, key: &str) -> String {
    summary
        .lines()
        .find(|l| l.starts_with(key))
        .unwrap_or_else(|| panic!("no {key} in {summary}"))[key.len()..]
        .trim()
        .to_string()
}

#[test]
fn eval_tight_run_has_unit_i2c() {
    let dir = TempDir::new().unwrap();
    let stream = tight_stream(dir.path());
    let cb = dir.path().join("m.cb");
    ok(&["train", "--stream", p(&stream), "--out", p(&cb), "--batch-size", "16"]);
    let ev = dir.path().join("ev");
    ok(&["eval", "--codebook", p(&cb), "--stream", p(&stream), "--index", p(&dir.path().join("m.cb.index.csv")), "--out-dir", p(&ev), "--trials", "100"]);
    let summary = fs::read_to_string(ev.join("summary.txt")).unwrap();
    let i2c = summary_value(&summary, "I2C mean / median");
    let mean: f64 = i2c.split(' ').next().unwrap().parse().unwrap();
    assert!((mean - 1.0).abs() < 1e-6, "{i2c}");
    for f in ["i2c.csv", "sizes.csv", "buckets.csv", "report.json"] {
        assert!(ev.join(f).exists(), "{f}");
    }
    // one codeword has no pairs
    assert!(!ev.join("c2c.csv").exists());
    let mass: u64 = data_rows(&ev.join("i2c.csv")).iter().map(|r| r.last().unwrap().parse::<u64>().unwrap()).sum();
    assert_eq!(mass, 100);
}

#[test]
fn eval_compare_with_itself_has_zero_deltas() {
    let dir = TempDir::new().unwrap();
    let stream = small_gen(dir.path(), "s.csv", 5);
    let cb = dir.path().join("m.cb");
    ok(&["train", "--stream", p(&stream), "--out", p(&cb)]);
    let ev = dir.path().join("ev");
    ok(&["eval", "--codebook", p(&cb), "--stream", p(&stream), "--compare", p(&cb), "--out-dir", p(&ev), "--trials", "0"]);
    let rows = data_rows(&ev.join("comparison.csv"));
    assert!(!rows.is_empty());
    for r in rows {
        assert_eq!(r[1], r[2], "{r:?}");
        assert_eq!(r[3].parse::<f64>().unwrap(), 0.0, "{r:?}");
    }
}

#[test]
fn eval_compare_dimension_mismatch_fails() {
    let dir = TempDir::new().unwrap();
    let stream = small_gen(dir.path(), "s.csv", 6);
    let cb = dir.path().join("m.cb");
    ok(&["train", "--stream", p(&stream), "--out", p(&cb)]);
    let tight = tight_stream(dir.path());
    let other = dir.path().join("t.cb");
    ok(&["train", "--stream", p(&tight), "--out", p(&other), "--batch-size", "16"]);
    let out = run(&["eval", "--codebook", p(&cb), "--stream", p(&stream), "--compare", p(&other), "--out-dir", p(&dir.path().join("ev")), "--trials", "0"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("dim"));
}

#[test]
fn corrupted_codebook_is_rejected() {
    let dir = TempDir::new().unwrap();
    let stream = tight_stream(dir.path());
    let cb = dir.path().join("m.cb");
    ok(&["train", "--stream", p(&stream), "--out", p(&cb), "--batch-size", "16"]);
    let mut bytes = fs::read(&cb).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x40;
    fs::write(&cb, bytes).unwrap();
    let out = run(&["assign", "--codebook", p(&cb), "--input", p(&stream), "--out", p(&dir.path().join("a.csv"))]);
    assert!(!out.status.success());
}
