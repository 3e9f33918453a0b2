use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use stormloc::pack::read_pack;

fn run(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stormloc")).args(args).env("STORMLOC_OUT", out).output().unwrap()
}

fn ok(out: &Path, args: &[&str]) -> String {
    let o = run(out, args);
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout).unwrap()
}

#[test]
fn every_subcommand_has_help() {
    let dir = tempfile::tempdir().unwrap();
    let commands: [&[&str]; 12] = [
        &[],
        &["gen"],
        &["ingest"],
        &["train"],
        &["eval"],
        &["sweep"],
        &["plot"],
        &["study"],
        &["study", "serve"],
        &["study", "report"],
        &["oracle-study"],
        &["replay"],
    ];
    for c in commands {
        let mut args = c.to_vec();
        args.push("--help");
        let text = ok(dir.path(), &args);
        assert!(text.contains("Usage"), "{c:?}");
    }
}

#[test]
fn gen_writes_the_seventy_fifteen_fifteen_split() {
    let dir = tempfile::tempdir().unwrap();
    let text = ok(dir.path(), &["gen", "--n", "2000", "--seed", "0"]);
    assert!(text.contains("1400 train / 300 val / 300 test"), "{text}");
    let d = read_pack(dir.path().join("dataset.pack")).unwrap();
    assert_eq!(d.split_counts(), [1400, 300, 300]);
    assert!(dir.path().join("gen.manifest.json").exists());
}

#[test]
fn plot_draws_every_cell_and_one_label_cross() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["gen", "--n", "20"]);
    ok(dir.path(), &["plot", "--index", "3"]);
    let svg = fs::read_to_string(dir.path().join("sample-3.svg")).unwrap();
    assert_eq!(svg.matches("class=\"arrow\"").count(), 1792);
    assert_eq!(svg.matches("#ff7f0e").count(), 1);
    assert!(!svg.contains("class=\"prob\""));
}

#[test]
fn exit_codes_separate_config_data_and_numeric_failures() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    // Usage errors come from the argument parser.
    assert_eq!(run(p, &["gen", "--n", "many"]).status.code(), Some(2));
    assert_eq!(run(p, &["gen", "--n", "10", "--grid", "0,44,1,1,0,8"]).status.code(), Some(2));
    // A missing input path is a configuration problem, a corrupt file is a data one.
    assert_eq!(run(p, &["train"]).status.code(), Some(2));
    fs::write(p.join("dataset.pack"), b"not a pack").unwrap();
    assert_eq!(run(p, &["train", "--epochs", "1"]).status.code(), Some(3));
    ok(p, &["gen", "--n", "40"]);
    assert_eq!(run(p, &["train", "--epochs", "1", "--batch-size", "0"]).status.code(), Some(2));
    let blown = run(p, &["train", "--epochs", "3", "--lr", "1e30", "--no-calibrate"]);
    assert_eq!(blown.status.code(), Some(4), "{}", String::from_utf8_lossy(&blown.stderr));
    assert_eq!(run(p, &["study", "report", "--counts", "test=1,2"]).status.code(), Some(2));
}

#[test]
fn replay_reproduces_the_recorded_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    ok(p, &["gen", "--n", "60", "--seed", "7"]);
    ok(p, &["train", "--epochs", "1"]);
    let pack = fs::read(p.join("dataset.pack")).unwrap();
    let ckpt = fs::read(p.join("model.ckpt")).unwrap();
    fs::remove_file(p.join("dataset.pack")).unwrap();
    fs::remove_file(p.join("model.ckpt")).unwrap();
    let elsewhere = tempfile::tempdir().unwrap();
    ok(elsewhere.path(), &["replay", p.join("gen.manifest.json").to_str().unwrap()]);
    ok(elsewhere.path(), &["replay", p.join("train.manifest.json").to_str().unwrap()]);
    assert_eq!(fs::read(p.join("dataset.pack")).unwrap(), pack);
    assert_eq!(fs::read(p.join("model.ckpt")).unwrap(), ckpt);
}

#[test]
fn eval_and_oracle_study_write_their_tables() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    ok(p, &["gen", "--n", "60"]);
    ok(p, &["train", "--epochs", "1", "--no-calibrate"]);
    let text = ok(p, &["eval", "--split", "test"]);
    assert!(text.starts_with("split\t"), "{text}");
    assert!(p.join("eval-test.tsv").exists());
    let table = ok(p, &["oracle-study", "--n-items", "5"]);
    assert!(table.contains("p-value"));
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(p.join("oracle-study.json")).unwrap()).unwrap();
    assert_eq!(json["test"]["total"], 5);
    assert_eq!(json["train"]["total"], 5);
}
