//! Pre-training records: the flat `utterance </s> col </s> col ...` token
//! sequence, SSP class indices at separator positions, and MLM mask
//! selections.
//!
//! Tokens are whitespace-level; subword tokenization is left to the trainer.
//! MLM records keep their original tokens and record, per masked position,
//! which replacement the trainer should apply.

use std::io::{self, BufRead, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::rng;
use crate::ssp::{LabelVocabulary, SspLabel, VocabError};
use crate::synth::SynthExample;
use crate::table::{Schema, UtteranceRecord};

pub const DEFAULT_SEPARATOR: &str = "</s>";
pub const DEFAULT_MASK_PROBABILITY: f64 = 0.15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Objective {
    Ssp,
    Mlm,
}

impl Objective {
    pub fn as_str(self) -> &'static str {
        match self {
            Objective::Ssp => "SSP",
            Objective::Mlm => "MLM",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlatSequence {
    pub tokens: Vec<String>,
    /// Index of the separator preceding each column.
    pub sep_positions: Vec<usize>,
    /// Global column index serialized after each separator.
    pub column_order: Vec<usize>,
    pub objective: Objective,
}

/// Utterance tokens, then a separator and the column's tokens for every
/// column. Column names get their table name prepended when the schema spans
/// several tables.
pub fn flatten(utterance: &str, schema: &Schema<'_>, separator: &str, objective: Objective) -> FlatSequence {
    let mut tokens: Vec<String> = utterance.split_whitespace().map(String::from).collect();
    let mut sep_positions = Vec::with_capacity(schema.column_count());
    let mut column_order = Vec::with_capacity(schema.column_count());
    let prefix = schema.is_multi_table();
    for col in schema.columns() {
        sep_positions.push(tokens.len());
        column_order.push(col.global);
        tokens.push(separator.to_string());
        if prefix {
            tokens.extend(col.table.name.split_whitespace().map(String::from));
        }
        tokens.extend(col.meta.name.split_whitespace().map(String::from));
    }
    FlatSequence {
        tokens,
        sep_positions,
        column_order,
        objective,
    }
}

#[derive(Debug, Error)]
pub enum SerializeError {
    #[error(transparent)]
    Vocab(#[from] VocabError),
    #[error("example {id} has no label for column {column}")]
    MissingLabel { id: String, column: usize },
}

/// Flat sequence plus one class index per separator.
pub fn serialize_ssp(
    example: &SynthExample,
    schema: &Schema<'_>,
    vocab: &LabelVocabulary,
    separator: &str,
) -> Result<(FlatSequence, Vec<usize>), SerializeError> {
    let seq = flatten(&example.question, schema, separator, Objective::Ssp);
    let classes = seq
        .column_order
        .iter()
        .map(|&c| {
            let label: &SspLabel = example.labels.get(&c).ok_or_else(|| SerializeError::MissingLabel {
                id: example.id.clone(),
                column: c,
            })?;
            Ok(vocab.index_of(label)?)
        })
        .collect::<Result<Vec<_>, SerializeError>>()?;
    Ok((seq, classes))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskAction {
    /// Replace with the mask token.
    Mask,
    /// Replace with a random vocabulary token.
    Random,
    /// Leave unchanged.
    Keep,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaskPolicy {
    pub probability: f64,
    pub mask: f64,
    pub random: f64,
    pub keep: f64,
}

impl Default for MaskPolicy {
    fn default() -> Self {
        Self::with_probability(DEFAULT_MASK_PROBABILITY)
    }
}

impl MaskPolicy {
    pub fn with_probability(probability: f64) -> Self {
        Self {
            probability,
            mask: 0.8,
            random: 0.1,
            keep: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskSelection {
    pub positions: Vec<usize>,
    pub actions: Vec<MaskAction>,
    pub policy: MaskPolicy,
}

/// Selects each non-separator token independently with the policy's
/// probability, covering utterance and header tokens alike.
pub fn select_masks<R: Rng + ?Sized>(seq: &FlatSequence, policy: &MaskPolicy, rng: &mut R) -> MaskSelection {
    let mut positions = Vec::new();
    let mut actions = Vec::new();
    let mut seps = seq.sep_positions.iter().peekable();
    for i in 0..seq.tokens.len() {
        if seps.peek() == Some(&&i) {
            seps.next();
            continue;
        }
        if rng.gen_bool(policy.probability) {
            positions.push(i);
            let r: f64 = rng.gen();
            actions.push(if r < policy.mask {
                MaskAction::Mask
            } else if r < policy.mask + policy.random {
                MaskAction::Random
            } else {
                MaskAction::Keep
            });
        }
    }
    MaskSelection {
        positions,
        actions,
        policy: *policy,
    }
}

pub fn serialize_mlm<R: Rng + ?Sized>(
    record: &UtteranceRecord,
    schema: &Schema<'_>,
    policy: &MaskPolicy,
    separator: &str,
    rng: &mut R,
) -> (FlatSequence, MaskSelection) {
    let seq = flatten(&record.text, schema, separator, Objective::Mlm);
    let sel = select_masks(&seq, policy, rng);
    (seq, sel)
}

/// One line of the pre-training dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub objective: Objective,
    pub tokens: Vec<String>,
    pub sep_positions: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub classes: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask_positions: Option<Vec<usize>>,
    pub meta: serde_json::Value,
}

impl DatasetRecord {
    pub fn ssp(example: &SynthExample, seq: FlatSequence, classes: Vec<usize>) -> Self {
        Self {
            objective: Objective::Ssp,
            tokens: seq.tokens,
            sep_positions: seq.sep_positions,
            classes: Some(classes),
            mask_positions: None,
            meta: json!({
                "id": example.id,
                "rule_id": example.rule_id,
                "table_ids": example.schema_ids(),
                "column_order": seq.column_order,
            }),
        }
    }

    pub fn mlm(record: &UtteranceRecord, seq: FlatSequence, sel: MaskSelection) -> Self {
        Self {
            objective: Objective::Mlm,
            tokens: seq.tokens,
            sep_positions: seq.sep_positions,
            classes: None,
            mask_positions: Some(sel.positions),
            meta: json!({
                "table_id": record.table_id,
                "source": record.source,
                "column_order": seq.column_order,
                "mask_actions": sel.actions,
                "mask_policy": sel.policy,
            }),
        }
    }

    /// Tokens that are not separators.
    pub fn eligible_tokens(&self) -> usize {
        self.tokens.len() - self.sep_positions.len()
    }
}

/// Writes SSP and MLM records as one JSONL file, shuffled once from
/// `shuffle_seed`.
pub fn write_dataset(
    ssp: Vec<DatasetRecord>,
    mlm: Vec<DatasetRecord>,
    path: &Path,
    shuffle_seed: u64,
) -> io::Result<usize> {
    let mut all: Vec<DatasetRecord> = ssp.into_iter().chain(mlm).collect();
    if all.is_empty() {
        return Err(io::Error::new(
            io::ErrorKind::InvalidInput,
            "dataset needs at least one record",
        ));
    }
    all.shuffle(&mut rng::stream(shuffle_seed, "shuffle"));
    let mut w = io::BufWriter::new(std::fs::File::create(path)?);
    for r in &all {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(all.len())
}

pub fn read_dataset(path: &Path) -> io::Result<Vec<DatasetRecord>> {
    let f = io::BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for line in f.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}
