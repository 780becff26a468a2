use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &[&str] = &[
    "--set", "synth_users=40",
    "--set", "synth_items=60",
    "--set", "epochs=2",
    "--set", "ablate_ks=2,8",
    "--set", "ablate_seeds=2",
    "--set", "triples=data/kg.tsv",
    "--set", "interactions=data/interactions.tsv",
];

fn kgrec(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kgrec"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("spawn kgrec")
}

fn ok(dir: &Path, sub: &str, extra: &[&str]) -> String {
    let args: Vec<&str> = [sub].iter().chain(SMALL).chain(extra).copied().collect();
    let out = kgrec(dir, &args);
    assert!(out.status.success(), "{sub}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn pipeline(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let _ = fs::remove_dir_all(dir.join("runs"));
    ok(dir, "synth", &["--out", "data"]);
    ok(dir, "preprocess", &[]);
    ok(dir, "train", &[]);
    ok(dir, "evaluate", &[]);
    ok(dir, "ablate", &[]);
    let mut files = BTreeMap::new();
    for entry in fs::read_dir(dir.join("runs/default")).unwrap() {
        let path = entry.unwrap().path();
        let name = path.file_name().unwrap().to_string_lossy().into_owned();
        if name != "train.timing.tsv" {
            files.insert(name, fs::read(&path).unwrap());
        }
    }
    files
}

#[test]
fn full_pipeline_is_byte_identical_on_rerun() {
    let tmp = tempfile::tempdir().unwrap();
    let first = pipeline(tmp.path());
    let second = pipeline(tmp.path());
    for name in ["checkpoint.bin", "train.log.tsv", "metrics.tsv", "metrics.txt", "ablation.tsv", "co_graph.tsv"] {
        assert!(first.contains_key(name), "missing {name}");
    }
    assert_eq!(first, second);
}

#[test]
fn train_log_has_one_row_per_epoch() {
    let tmp = tempfile::tempdir().unwrap();
    ok(tmp.path(), "synth", &["--out", "data"]);
    ok(tmp.path(), "preprocess", &[]);
    let stdout = ok(tmp.path(), "train", &[]);
    assert_eq!(stdout.lines().count(), 2);
    let log = fs::read_to_string(tmp.path().join("runs/default/train.log.tsv")).unwrap();
    assert_eq!(log.lines().next(), Some("epoch\tloss\ttau"));
    assert_eq!(log.lines().count(), 3);
}

#[test]
fn seed_flag_changes_the_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    ok(tmp.path(), "synth", &["--out", "data"]);
    ok(tmp.path(), "preprocess", &[]);
    ok(tmp.path(), "train", &[]);
    let a = fs::read(tmp.path().join("runs/default/checkpoint.bin")).unwrap();
    ok(tmp.path(), "train", &["--seed", "5"]);
    let b = fs::read(tmp.path().join("runs/default/checkpoint.bin")).unwrap();
    assert_ne!(a, b);
}

#[test]
fn effective_config_round_trips_through_the_config_flag() {
    let tmp = tempfile::tempdir().unwrap();
    ok(tmp.path(), "synth", &["--out", "data"]);
    ok(tmp.path(), "preprocess", &["--set", "k=4", "--set", "strategy=l2"]);
    let written = fs::read_to_string(tmp.path().join("runs/default/config.effective")).unwrap();
    fs::write(tmp.path().join("again.conf"), &written).unwrap();
    let out = kgrec(tmp.path(), &["preprocess", "--config", "again.conf"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rewritten = fs::read_to_string(tmp.path().join("runs/default/config.effective")).unwrap();
    assert_eq!(written, rewritten);
    assert!(written.contains("k = 4"));
}

#[test]
fn exit_codes_distinguish_config_data_and_divergence() {
    let tmp = tempfile::tempdir().unwrap();
    let code = |args: &[&str]| kgrec(tmp.path(), args).status.code();

    assert_eq!(code(&["train", "--set", "bogus=1"]), Some(1));
    assert_eq!(code(&["train", "--set", "k=0"]), Some(1));
    assert_eq!(code(&["train", "--config", "missing.conf"]), Some(1));
    assert_eq!(code(&["frobnicate"]), Some(1));

    assert_eq!(code(&["preprocess", "--set", "triples=nope.tsv", "--set", "interactions=nope.tsv"]), Some(2));
    assert_eq!(code(&["evaluate"]), Some(2));

    ok(tmp.path(), "synth", &["--out", "data"]);
    ok(tmp.path(), "preprocess", &[]);
    let out = kgrec(tmp.path(), &[&["train"], SMALL, &["--set", "lr=1e300"]].concat());
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(tmp.path().join("runs/default/checkpoint.bin").exists());
}

#[test]
fn evaluate_rejects_a_checkpoint_of_another_dimension() {
    let tmp = tempfile::tempdir().unwrap();
    ok(tmp.path(), "synth", &["--out", "data"]);
    ok(tmp.path(), "preprocess", &[]);
    ok(tmp.path(), "train", &["--set", "epochs=0"]);
    let out = kgrec(tmp.path(), &[&["evaluate"], SMALL, &["--set", "dim=32"]].concat());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("dim"));
}
