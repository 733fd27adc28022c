//! Data-side toolkit for grammar-augmented table pre-training.
//!
//! The pipeline mines SQL templates from seed question/SQL pairs, samples a
//! synchronous grammar of aligned question and SQL templates against
//! relational tables, labels every column with the role it plays in the
//! generated SQL, and serializes flat sequences for the SSP (column
//! operation) and MLM (masked token) objectives.
//!
//! Module map:
//!
//! * [`table`]: corpus ingestion, column typing, header deduplication.
//! * [`sql`]: syntax tree, parser, canonical renderer, slot substitution.
//! * [`scfg`]: production rules, terminal lexicon, grammar file format.
//! * [`miner`]: template abstraction and frequency ranking.
//! * [`synth`]: rule binding and example generation.
//! * [`ssp`]: per-column operation labels and the label vocabulary.
//! * [`serialize`]: flat sequences, mask selection, dataset files.
//! * [`pipeline`]: file-level stages shared by the CLI: relabeling, dataset
//!   assembly, statistics.
//! * [`fixtures`]: seeded synthetic corpora.

pub mod fixtures;
pub mod miner;
pub mod pipeline;
pub mod rng;
pub mod scfg;
pub mod serialize;
pub mod sql;
pub mod ssp;
pub mod synth;
pub mod table;
