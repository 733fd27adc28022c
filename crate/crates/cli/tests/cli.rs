use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};
use tabsynth::fixtures::{fixture_corpus, fixture_utterances};
use tabsynth::table::TableSchema;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_tabsynth"));
    for (k, _) in std::env::vars() {
        if k.starts_with("TABSYNTH_") {
            c.env_remove(k);
        }
    }
    c
}

fn run(args: &[&str], dir: &Path) -> Output {
    bin().args(args).current_dir(dir).output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn table_json(t: &TableSchema) -> Value {
    let header: Vec<&str> = t.columns.iter().map(|c| c.name.as_str()).collect();
    json!({"id": t.table_id, "name": t.name, "header": header, "rows": t.rows, "db_id": t.db_id})
}

fn write_lines(path: &Path, values: impl IntoIterator<Item = Value>) {
    let text: String = values.into_iter().map(|v| format!("{v}\n")).collect();
    fs::write(path, text).unwrap();
}

/// A temp dir holding `corpus.jsonl` with `n` fixture tables.
fn workspace(n: usize) -> (tempfile::TempDir, Vec<TableSchema>) {
    let dir = tempfile::tempdir().unwrap();
    let tables = fixture_corpus(n, 3);
    write_lines(&dir.path().join("corpus.jsonl"), tables.iter().map(table_json));
    (dir, tables)
}

fn lines(path: &Path) -> Vec<Value> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

fn synthesize(dir: &Path, out: &str, extra: &[&str]) -> Output {
    let mut args = vec!["synthesize", "--corpus", "corpus.jsonl", "--output", out];
    args.extend_from_slice(extra);
    run(&args, dir)
}

#[test]
fn synthesize_is_labeled_and_reproducible() {
    let (dir, tables) = workspace(40);
    let d = dir.path();
    let o = synthesize(d, "a.jsonl", &["-n", "100", "--seed", "1", "--workers", "1"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let records = lines(&d.join("a.jsonl"));
    assert_eq!(records.len(), 100);
    for r in &records {
        let labels = r["labels"].as_object().unwrap();
        let width = match r.get("table_ids") {
            Some(ids) => ids
                .as_array()
                .unwrap()
                .iter()
                .map(|id| tables.iter().find(|t| t.table_id == *id).unwrap().columns.len())
                .sum(),
            None => tables.iter().find(|t| t.table_id == r["table_id"]).unwrap().columns.len(),
        };
        assert_eq!(labels.len(), width, "{r}");
    }
    assert!(synthesize(d, "b.jsonl", &["-n", "100", "--seed", "1", "--workers", "4"]).status.success());
    assert_eq!(fs::read(d.join("a.jsonl")).unwrap(), fs::read(d.join("b.jsonl")).unwrap());
    assert!(synthesize(d, "c.jsonl", &["-n", "100", "--seed", "2"]).status.success());
    assert_ne!(fs::read(d.join("a.jsonl")).unwrap(), fs::read(d.join("c.jsonl")).unwrap());
}

#[test]
fn zero_examples_gives_empty_file() {
    let (dir, _) = workspace(5);
    let o = synthesize(dir.path(), "empty.jsonl", &["-n", "0"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(fs::read(dir.path().join("empty.jsonl")).unwrap(), b"");
}

#[test]
fn ineligible_rules_exit_partial() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let narrow = TableSchema::new(
        "narrow",
        "narrow",
        &["name".to_string(), "wins".to_string()],
        vec![vec!["Ajax".into(), "3".into()], vec!["PSV".into(), "5".into()]],
        "test",
    )
    .unwrap();
    write_lines(&d.join("corpus.jsonl"), [table_json(&narrow)]);
    fs::write(
        d.join("wide.grammar"),
        "[lexicon]\n=: is\n!=: is not\n\n\
         [rule]\nid: five_columns\nsql: SELECT COLUMN0 , COLUMN1 , COLUMN2 , COLUMN3 , COLUMN4\nnl: List COLUMN0 COLUMN1 COLUMN2 COLUMN3 COLUMN4\n\n\
         [rule]\nid: three_and_filter\nsql: SELECT COLUMN0 , COLUMN1 WHERE COLUMN2 OP0 VALUE0\nnl: COLUMN0 and COLUMN1 where COLUMN2 OP0 VALUE0\n\n\
         [rule]\nid: one_column\nsql: SELECT COLUMN0\nnl: List the COLUMN0\n",
    )
    .unwrap();
    let o = synthesize(d, "partial.jsonl", &["--grammar", "wide.grammar", "-n", "60", "--seed", "4"]);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
    let err = stderr(&o);
    assert!(err.contains("five_columns") && err.contains("three_and_filter"), "{err}");
    let kept = lines(&d.join("partial.jsonl"));
    assert!(!kept.is_empty() && kept.len() < 60);
    assert!(kept.iter().all(|r| r["rule_id"] == "one_column"));
}

#[test]
fn invalid_grammar_exits_3() {
    let (dir, _) = workspace(5);
    let d = dir.path();
    fs::write(d.join("bad.grammar"), "[rule]\nid: r\nsql: SELECT COLUMN0\nnl: about VALUE0\n").unwrap();
    let o = run(&["validate-grammar", "--grammar", "bad.grammar"], d);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("VALUE0"), "{}", stderr(&o));
    assert_eq!(synthesize(d, "x.jsonl", &["--grammar", "bad.grammar", "-n", "5"]).status.code(), Some(3));

    let ok = run(&["validate-grammar", "--corpus", "corpus.jsonl"], d);
    assert!(ok.status.success());
    let text = String::from_utf8(ok.stdout).unwrap();
    assert!(text.starts_with("ok: 32 rules, 17 column labels"), "{text}");
    assert!(text.contains("count_by_group\t"));
}

#[test]
fn unreadable_inputs_exit_2() {
    let (dir, _) = workspace(5);
    let d = dir.path();
    let o = run(&["mine", "--seeds", "missing.jsonl", "--corpus", "corpus.jsonl"], d);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("missing.jsonl"));
    assert_eq!(run(&["stats", "nope.jsonl"], d).status.code(), Some(2));
    assert_eq!(synthesize(d, "x.jsonl", &["--corpus", "absent.jsonl"]).status.code(), Some(2));
    fs::write(d.join("bad.conf"), "colour = blue\n").unwrap();
    assert_eq!(run(&["--config", "bad.conf", "stats", "corpus.jsonl"], d).status.code(), Some(2));
}

fn seed_pairs(dir: &Path) -> PathBuf {
    // Built from synthesized examples so the template counts are known.
    assert!(synthesize(dir, "seeds_src.jsonl", &["-n", "50", "--seed", "9"]).status.success());
    let pairs: Vec<Value> = lines(&dir.join("seeds_src.jsonl"))
        .into_iter()
        .filter(|r| r.get("table_ids").is_none())
        .map(|r| json!({"question": r["question"], "sql": r["sql"], "table_id": r["table_id"]}))
        .collect();
    let path = dir.join("seeds.jsonl");
    write_lines(&path, pairs);
    path
}

#[test]
fn mine_top_k() {
    let (dir, _) = workspace(30);
    let d = dir.path();
    seed_pairs(d);
    let o = run(
        &["mine", "--seeds", "seeds.jsonl", "--corpus", "corpus.jsonl", "--top-k", "5", "--output", "stubs.grammar", "--frequencies", "freq.tsv"],
        d,
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let stubs = fs::read_to_string(d.join("stubs.grammar")).unwrap();
    assert_eq!(stubs.matches("[rule]").count(), 5);
    let freq = fs::read_to_string(d.join("freq.tsv")).unwrap();
    assert_eq!(String::from_utf8(o.stdout).unwrap(), freq);
    let counts: Vec<usize> = freq.lines().map(|l| l.split('\t').next().unwrap().parse().unwrap()).collect();
    assert_eq!(counts.len(), 5);
    assert!(counts.windows(2).all(|w| w[0] >= w[1]));

    let one = run(&["mine", "--seeds", "seeds.jsonl", "--corpus", "corpus.jsonl", "--top-k", "1", "--output", "one.grammar"], d);
    assert!(one.status.success());
    assert_eq!(String::from_utf8(one.stdout).unwrap(), format!("{}\n", freq.lines().next().unwrap()));
    assert_eq!(fs::read_to_string(d.join("one.grammar")).unwrap().matches("[rule]").count(), 1);
}

#[test]
fn label_matches_inline_labels() {
    let (dir, _) = workspace(30);
    let d = dir.path();
    assert!(synthesize(d, "ex.jsonl", &["-n", "80", "--seed", "5"]).status.success());
    let stripped: Vec<Value> = lines(&d.join("ex.jsonl"))
        .into_iter()
        .map(|mut r| {
            r.as_object_mut().unwrap().remove("labels");
            r
        })
        .collect();
    write_lines(&d.join("bare.jsonl"), stripped);
    let o = run(&["label", "--input", "bare.jsonl", "--corpus", "corpus.jsonl", "--output", "relabeled.jsonl"], d);
    assert!(o.status.success(), "{}", stderr(&o));
    let relabeled = lines(&d.join("relabeled.jsonl"));
    let original = lines(&d.join("ex.jsonl"));
    assert_eq!(relabeled.len(), original.len());
    for (a, b) in relabeled.iter().zip(&original) {
        assert_eq!(a["labels"], b["labels"], "{}", b["sql"]);
    }
}

#[test]
fn serialize_and_stats() {
    let (dir, tables) = workspace(30);
    let d = dir.path();
    assert!(synthesize(d, "ex.jsonl", &["-n", "3", "--seed", "5"]).status.success());
    write_lines(
        &d.join("utt.jsonl"),
        fixture_utterances(&tables, 2, 1).iter().map(|u| serde_json::to_value(u).unwrap()),
    );
    let args = [
        "serialize", "--examples", "ex.jsonl", "--utterances", "utt.jsonl", "--corpus", "corpus.jsonl",
        "--output", "data.jsonl", "--vocab-out", "vocab.txt", "--seed", "3",
    ];
    let o = run(&args, d);
    assert!(o.status.success(), "{}", stderr(&o));
    let first = fs::read(d.join("data.jsonl")).unwrap();
    assert_eq!(fs::read_to_string(d.join("vocab.txt")).unwrap().lines().next(), Some("NONE"));
    assert!(run(&args, d).status.success());
    assert_eq!(fs::read(d.join("data.jsonl")).unwrap(), first);

    let o = run(&["stats", "data.jsonl", "--vocab", "vocab.txt", "--json"], d);
    assert!(o.status.success(), "{}", stderr(&o));
    let s: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!((s["records"].as_u64(), s["ssp"].as_u64(), s["mlm"].as_u64()), (Some(5), Some(3), Some(2)));
    assert!(s["label_histogram"].as_object().unwrap().contains_key("NONE"));
    let text = String::from_utf8(run(&["stats", "data.jsonl"], d).stdout).unwrap();
    assert!(text.contains("SSP: 3  MLM: 2"), "{text}");

    fs::write(d.join("empty.jsonl"), "").unwrap();
    let o = run(&["stats", "empty.jsonl", "--json"], d);
    assert_eq!(o.status.code(), Some(0));
    let s: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(s["records"], 0);
    assert_eq!(s["mask_rate"], Value::Null);

    let bad = run(&["serialize", "--examples", "ex.jsonl", "--corpus", "corpus.jsonl", "--mask-probability", "1.5"], d);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn settings_precedence() {
    let (dir, _) = workspace(20);
    let d = dir.path();
    fs::write(d.join("run.conf"), "# test run\ncorpus = corpus.jsonl\nseed = 1\nn_examples = 7\noutput_dir = out\n").unwrap();
    fs::create_dir(d.join("out")).unwrap();
    let produce = |extra: &[&str], env: Option<&str>| {
        let mut c = bin();
        c.current_dir(d).args(["--config", "run.conf", "synthesize"]).args(extra);
        if let Some(seed) = env {
            c.env("TABSYNTH_SEED", seed);
        }
        let o = c.output().unwrap();
        assert!(o.status.success(), "{}", stderr(&o));
        fs::read(d.join("out/examples.jsonl")).unwrap()
    };
    let from_file = produce(&[], None);
    assert_eq!(from_file.iter().filter(|&&b| b == b'\n').count(), 7);
    assert!(synthesize(d, "s1.jsonl", &["-n", "7", "--seed", "1"]).status.success());
    assert!(synthesize(d, "s2.jsonl", &["-n", "7", "--seed", "2"]).status.success());
    assert!(synthesize(d, "s3.jsonl", &["-n", "7", "--seed", "3"]).status.success());
    let s = |n: u8| fs::read(d.join(format!("s{n}.jsonl"))).unwrap();
    assert_eq!(from_file, s(1));
    assert_eq!(produce(&[], Some("2")), s(2));
    assert_eq!(produce(&["--seed", "3"], Some("2")), s(3));
}
