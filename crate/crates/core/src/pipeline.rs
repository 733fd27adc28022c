//! File-level stages shared by the CLI and tests: example JSONL IO,
//! relabeling, dataset assembly and statistics.

use std::collections::BTreeMap;
use std::io::{self, BufRead, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;
use serde_json::Value;
use thiserror::Error;

use crate::rng;
use crate::serialize::{
    serialize_mlm, serialize_ssp, DatasetRecord, MaskPolicy, Objective, SerializeError,
};
use crate::sql::{parse_sql, ParseMode};
use crate::ssp::{label_columns, LabelVocabulary};
use crate::synth::SynthExample;
use crate::table::{Corpus, Schema, SkipRecord, UtteranceRecord};

/// Runs `f` on a pool with `workers` threads.
pub fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .expect("thread pool")
        .install(f)
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> io::Result<()> {
    let mut w = io::BufWriter::new(std::fs::File::create(path)?);
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

pub fn read_examples(path: &Path) -> io::Result<Vec<SynthExample>> {
    let f = io::BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for line in f.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

/// Schema for an example: its bound tables.
pub fn example_schema<'c>(corpus: &'c Corpus, example: &SynthExample) -> Option<Schema<'c>> {
    corpus.schema_of(&example.schema_ids())
}

#[derive(Debug, Error)]
pub enum BuildError {
    #[error("example {0}: tables not in the corpus")]
    UnknownTables(String),
    #[error(transparent)]
    Serialize(#[from] SerializeError),
}

pub fn build_ssp_records(
    examples: &[SynthExample],
    corpus: &Corpus,
    vocab: &LabelVocabulary,
    separator: &str,
    workers: usize,
) -> Result<Vec<DatasetRecord>, BuildError> {
    with_workers(workers, || {
        examples
            .par_iter()
            .map(|e| {
                let schema = example_schema(corpus, e).ok_or_else(|| BuildError::UnknownTables(e.id.clone()))?;
                let (seq, classes) = serialize_ssp(e, &schema, vocab, separator)?;
                Ok(DatasetRecord::ssp(e, seq, classes))
            })
            .collect()
    })
}

/// MLM records; record `i` masks from its own stream of `seed`, so the output
/// does not depend on the worker count. Records whose schema is missing are
/// skipped.
pub fn build_mlm_records(
    records: &[UtteranceRecord],
    corpus: &Corpus,
    policy: &MaskPolicy,
    separator: &str,
    seed: u64,
    workers: usize,
) -> Vec<DatasetRecord> {
    with_workers(workers, || {
        records
            .par_iter()
            .enumerate()
            .filter_map(|(i, r)| {
                let schema = corpus.schema_for(&r.table_id)?;
                let mut g = rng::indexed_stream(seed, "mask", i as u64);
                let (seq, sel) = serialize_mlm(r, &schema, policy, separator, &mut g);
                Some(DatasetRecord::mlm(r, seq, sel))
            })
            .collect()
    })
}

pub struct RelabelOutput {
    pub records: Vec<Value>,
    pub skips: Vec<SkipRecord>,
}

/// Adds (or replaces) `labels` on every JSONL object with `sql` and
/// `table_id` (and optionally `table_ids`). Other fields pass through.
pub fn relabel(path: &Path, corpus: &Corpus) -> io::Result<RelabelOutput> {
    let f = io::BufReader::new(std::fs::File::open(path)?);
    let mut records = Vec::new();
    let mut skips = Vec::new();
    for (i, line) in f.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let skip = |reason: String| SkipRecord {
            path: path.display().to_string(),
            line: i + 1,
            reason,
        };
        let mut v: Value = match serde_json::from_str(&line) {
            Ok(v @ Value::Object(_)) => v,
            Ok(_) => {
                skips.push(skip("not a JSON object".into()));
                continue;
            }
            Err(e) => {
                skips.push(skip(e.to_string()));
                continue;
            }
        };
        let sql = v.get("sql").and_then(Value::as_str);
        let table_id = v.get("table_id").and_then(Value::as_str);
        let (Some(sql), Some(table_id)) = (sql, table_id) else {
            skips.push(skip("missing sql or table_id".into()));
            continue;
        };
        let ids: Option<Vec<String>> = v
            .get("table_ids")
            .and_then(Value::as_array)
            .map(|a| a.iter().filter_map(|x| x.as_str().map(String::from)).collect());
        let schema = match &ids {
            Some(ids) if !ids.is_empty() => corpus.schema_of(ids),
            _ => corpus.schema_for(table_id),
        };
        let Some(schema) = schema else {
            skips.push(skip(format!("unknown table {table_id:?}")));
            continue;
        };
        let labels = parse_sql(sql, ParseMode::Concrete)
            .map_err(|e| e.to_string())
            .and_then(|q| label_columns(&q, &schema).map_err(|e| e.to_string()));
        match labels {
            Ok(l) => {
                v["labels"] = serde_json::to_value(l)?;
                records.push(v);
            }
            Err(reason) => skips.push(skip(reason)),
        }
    }
    Ok(RelabelOutput { records, skips })
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct Stats {
    pub records: usize,
    pub synthetic: usize,
    pub ssp: usize,
    pub mlm: usize,
    pub per_rule: BTreeMap<String, usize>,
    pub label_histogram: BTreeMap<String, usize>,
    pub vocabulary_size: usize,
    pub mlm_eligible_tokens: usize,
    pub mlm_masked_tokens: usize,
    pub mask_rate: Option<f64>,
    pub unrecognized: usize,
}

/// Summarizes a synthetic-example JSONL or a pre-training dataset JSONL (or a
/// mix). SSP class indices are shown as labels when `vocab` is given.
pub fn stats(path: &Path, vocab: Option<&LabelVocabulary>) -> io::Result<Stats> {
    let f = io::BufReader::new(std::fs::File::open(path)?);
    let mut s = Stats::default();
    for line in f.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        s.records += 1;
        if let Ok(r) = serde_json::from_str::<DatasetRecord>(&line) {
            match r.objective {
                Objective::Ssp => {
                    s.ssp += 1;
                    if let Some(rule) = r.meta.get("rule_id").and_then(Value::as_str) {
                        *s.per_rule.entry(rule.to_string()).or_default() += 1;
                    }
                    for &c in r.classes.iter().flatten() {
                        let key = vocab
                            .and_then(|v| v.labels().get(c))
                            .map(|l| l.to_string())
                            .unwrap_or_else(|| format!("class {c}"));
                        *s.label_histogram.entry(key).or_default() += 1;
                    }
                }
                Objective::Mlm => {
                    s.mlm += 1;
                    s.mlm_eligible_tokens += r.eligible_tokens();
                    s.mlm_masked_tokens += r.mask_positions.as_ref().map_or(0, Vec::len);
                }
            }
        } else if let Ok(e) = serde_json::from_str::<SynthExample>(&line) {
            s.synthetic += 1;
            *s.per_rule.entry(e.rule_id).or_default() += 1;
            for l in e.labels.values() {
                *s.label_histogram.entry(l.to_string()).or_default() += 1;
            }
        } else {
            s.unrecognized += 1;
        }
    }
    s.vocabulary_size = s.label_histogram.len();
    if s.mlm_eligible_tokens > 0 {
        s.mask_rate = Some(s.mlm_masked_tokens as f64 / s.mlm_eligible_tokens as f64);
    }
    Ok(s)
}

impl Stats {
    pub fn render(&self) -> String {
        use std::fmt::Write as _;
        let mut o = String::new();
        let _ = writeln!(o, "records: {}", self.records);
        let _ = writeln!(o, "synthetic examples: {}", self.synthetic);
        let _ = writeln!(o, "SSP: {}  MLM: {}", self.ssp, self.mlm);
        if self.unrecognized > 0 {
            let _ = writeln!(o, "unrecognized lines: {}", self.unrecognized);
        }
        let total: usize = self.per_rule.values().sum();
        if total > 0 {
            let _ = writeln!(o, "per rule:");
            for (rule, n) in &self.per_rule {
                let _ = writeln!(o, "  {rule}\t{n}\t{:.2}%", 100.0 * *n as f64 / total as f64);
            }
        }
        let _ = writeln!(o, "label vocabulary size: {}", self.vocabulary_size);
        for (label, n) in &self.label_histogram {
            let _ = writeln!(o, "  {label}\t{n}");
        }
        match self.mask_rate {
            Some(r) => {
                let _ = writeln!(
                    o,
                    "mask rate: {r:.4} ({} of {} eligible tokens)",
                    self.mlm_masked_tokens, self.mlm_eligible_tokens
                );
            }
            None => {
                let _ = writeln!(o, "mask rate: n/a");
            }
        }
        o
    }
}
