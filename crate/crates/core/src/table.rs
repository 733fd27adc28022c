//! Table corpus ingestion: loading, column typing, header deduplication and
//! natural-utterance records.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use once_cell::sync::Lazy;
use rayon::prelude::*;
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Share of non-empty cells that must match a type for the column to take it.
pub const TYPE_THRESHOLD: f64 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum ColumnType {
    Number,
    Text,
    Date,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnMeta {
    pub name: String,
    pub col_type: ColumnType,
    pub index: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableSchema {
    pub table_id: String,
    pub name: String,
    pub columns: Vec<ColumnMeta>,
    pub rows: Vec<Vec<String>>,
    pub source: String,
    /// Tables sharing a `db_id` form one database for multi-table rules.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub db_id: Option<String>,
}

#[derive(Debug, Error)]
pub enum TableError {
    #[error("table has no columns")]
    NoColumns,
    #[error("column {0} has an empty name")]
    EmptyHeader(usize),
    #[error("row {row} has {found} cells, expected {expected}")]
    Ragged {
        row: usize,
        found: usize,
        expected: usize,
    },
}

impl TableSchema {
    /// Builds a table from raw header and rows, normalizing header whitespace,
    /// checking rectangularity and inferring column types.
    pub fn new(
        table_id: impl Into<String>,
        name: impl Into<String>,
        header: &[String],
        rows: Vec<Vec<String>>,
        source: impl Into<String>,
    ) -> Result<Self, TableError> {
        if header.is_empty() {
            return Err(TableError::NoColumns);
        }
        let mut columns = Vec::with_capacity(header.len());
        for (index, raw) in header.iter().enumerate() {
            let name = normalize_whitespace(raw);
            if name.is_empty() {
                return Err(TableError::EmptyHeader(index));
            }
            columns.push(ColumnMeta {
                name,
                col_type: ColumnType::Text,
                index,
            });
        }
        if let Some((row, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != header.len()) {
            return Err(TableError::Ragged {
                row,
                found: r.len(),
                expected: header.len(),
            });
        }
        let table = TableSchema {
            table_id: table_id.into(),
            name: name.into(),
            columns,
            rows,
            source: source.into(),
            db_id: None,
        };
        Ok(infer_column_types(table))
    }

    pub fn with_db(mut self, db_id: impl Into<String>) -> Self {
        self.db_id = Some(db_id.into());
        self
    }

    pub fn cells(&self, column: usize) -> impl Iterator<Item = &str> {
        self.rows.iter().map(move |r| r[column].as_str())
    }

    /// Distinct non-empty cells of a column, in first-occurrence order.
    pub fn distinct_values(&self, column: usize) -> Vec<&str> {
        let mut seen = HashSet::new();
        self.cells(column)
            .filter(|c| !c.trim().is_empty())
            .filter(|c| seen.insert(*c))
            .collect()
    }

    pub fn column_named(&self, name: &str) -> impl Iterator<Item = &ColumnMeta> {
        let name = name.to_string();
        self.columns.iter().filter(move |c| c.name == name)
    }

    /// Normalized ordered header tuple used as the deduplication key.
    pub fn header_key(&self) -> Vec<String> {
        self.columns
            .iter()
            .map(|c| normalize_whitespace(&c.name).to_lowercase())
            .collect()
    }
}

/// Trims and collapses internal whitespace runs to single spaces.
pub fn normalize_whitespace(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

static NUMBER: Lazy<Regex> = Lazy::new(|| {
    Regex::new(r"^[+-]?(?:\d+|\d{1,3}(?:,\d{3})+)?(?:\.\d+)?$").unwrap()
});

static ISO_DATE: Lazy<Regex> =
    Lazy::new(|| Regex::new(r"^\d{4}[-/]\d{1,2}[-/]\d{1,2}(?:[T ]\d{1,2}:\d{2}(?::\d{2})?)?$").unwrap());

static MONTH_DATE: Lazy<Regex> = Lazy::new(|| {
    Regex::new(
        r"(?i)^(?:jan(?:uary)?|feb(?:ruary)?|mar(?:ch)?|apr(?:il)?|may|june?|july?|aug(?:ust)?|sep(?:t(?:ember)?)?|oct(?:ober)?|nov(?:ember)?|dec(?:ember)?)\.?\s+\d{1,2},\s*\d{4}$",
    )
    .unwrap()
});

/// Integer or decimal, optionally signed, optionally with thousands separators.
pub fn is_numeric_cell(cell: &str) -> bool {
    let c = cell.trim();
    c.bytes().any(|b| b.is_ascii_digit()) && NUMBER.is_match(c)
}

/// Parses a numeric cell to a float (thousands separators stripped).
pub fn numeric_value(cell: &str) -> Option<f64> {
    if !is_numeric_cell(cell) {
        return None;
    }
    cell.trim().replace(',', "").parse().ok()
}

pub fn is_date_cell(cell: &str) -> bool {
    let c = cell.trim();
    ISO_DATE.is_match(c) || MONTH_DATE.is_match(c)
}

fn classify<'a>(cells: impl Iterator<Item = &'a str>) -> ColumnType {
    let (mut total, mut numeric, mut date) = (0usize, 0usize, 0usize);
    for cell in cells.filter(|c| !c.trim().is_empty()) {
        total += 1;
        numeric += is_numeric_cell(cell) as usize;
        date += is_date_cell(cell) as usize;
    }
    if total == 0 {
        return ColumnType::Text;
    }
    let share = |k: usize| k as f64 / total as f64;
    if share(numeric) >= TYPE_THRESHOLD {
        ColumnType::Number
    } else if share(date) >= TYPE_THRESHOLD {
        ColumnType::Date
    } else {
        ColumnType::Text
    }
}

/// Assigns a type to every column from its cell strings alone.
pub fn infer_column_types(mut table: TableSchema) -> TableSchema {
    for i in 0..table.columns.len() {
        let ty = classify(table.rows.iter().map(|r| r[i].as_str()));
        table.columns[i].col_type = ty;
    }
    table
}

/// Keeps the first table of every group with identical normalized, ordered
/// headers. Output order follows input order.
pub fn dedup_by_headers(tables: Vec<TableSchema>) -> Vec<TableSchema> {
    let mut seen = HashSet::new();
    tables
        .into_iter()
        .filter(|t| seen.insert(t.header_key()))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorpusFormat {
    JsonlTables,
    CsvDir,
}

impl std::str::FromStr for CorpusFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "jsonl" | "jsonl_tables" => Ok(CorpusFormat::JsonlTables),
            "csv" | "csv_dir" => Ok(CorpusFormat::CsvDir),
            other => Err(format!("unknown corpus format {other:?}")),
        }
    }
}

/// One entry of a skip report.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkipRecord {
    pub path: String,
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Default)]
pub struct CorpusLoad {
    pub tables: Vec<TableSchema>,
    pub skips: Vec<SkipRecord>,
}

#[derive(Deserialize)]
struct RawTable {
    #[serde(default)]
    id: Option<String>,
    #[serde(default)]
    name: Option<String>,
    header: Vec<serde_json::Value>,
    #[serde(default)]
    rows: Vec<Vec<serde_json::Value>>,
    #[serde(default)]
    db_id: Option<String>,
}

fn cell_string(v: &serde_json::Value) -> String {
    match v {
        serde_json::Value::String(s) => s.clone(),
        serde_json::Value::Null => String::new(),
        other => other.to_string(),
    }
}

fn files_with_ext(dir: &Path, ext: &str) -> Result<Vec<PathBuf>, CorpusError> {
    let mut files = Vec::new();
    for entry in fs::read_dir(dir).map_err(io_err(dir))? {
        let path = entry.map_err(io_err(dir))?.path();
        if path.is_file() && path.extension().is_some_and(|e| e.eq_ignore_ascii_case(ext)) {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

fn file_stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn load_jsonl_file(path: &Path) -> Result<CorpusLoad, CorpusError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let stem = file_stem(path);
    let display = path.display().to_string();
    let mut out = CorpusLoad::default();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let skip = |reason: String| SkipRecord {
            path: display.clone(),
            line: lineno,
            reason,
        };
        let raw: RawTable = match serde_json::from_str(&line) {
            Ok(r) => r,
            Err(e) => {
                out.skips.push(skip(format!("invalid table record: {e}")));
                continue;
            }
        };
        let table_id = raw
            .id
            .filter(|s| !s.trim().is_empty())
            .unwrap_or_else(|| format!("{stem}:{lineno}"));
        let name = raw.name.unwrap_or_else(|| table_id.clone());
        let header: Vec<String> = raw.header.iter().map(cell_string).collect();
        let rows = raw
            .rows
            .iter()
            .map(|r| r.iter().map(cell_string).collect())
            .collect();
        match TableSchema::new(table_id, name, &header, rows, format!("jsonl:{display}")) {
            Ok(mut t) => {
                t.db_id = raw.db_id.filter(|s| !s.trim().is_empty());
                out.tables.push(t);
            }
            Err(e) => out.skips.push(skip(e.to_string())),
        }
    }
    Ok(out)
}

fn load_csv_file(path: &Path) -> Result<CorpusLoad, CorpusError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let display = path.display().to_string();
    let stem = file_stem(path);
    let mut out = CorpusLoad::default();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(bytes.as_slice());
    let mut records = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        match rec {
            Ok(r) => records.push(r.iter().map(str::to_string).collect::<Vec<_>>()),
            Err(e) => {
                let line = e.position().map(|p| p.line() as usize).unwrap_or(i + 1);
                out.skips.push(SkipRecord {
                    path: display,
                    line,
                    reason: format!("malformed csv: {e}"),
                });
                return Ok(out);
            }
        }
    }
    if records.is_empty() {
        out.skips.push(SkipRecord {
            path: display,
            line: 1,
            reason: "missing header row".into(),
        });
        return Ok(out);
    }
    let header = records.remove(0);
    match TableSchema::new(stem.clone(), stem, &header, records, format!("csv:{display}")) {
        Ok(t) => out.tables.push(t),
        Err(e) => {
            let line = match e {
                TableError::Ragged { row, .. } => row + 2,
                _ => 1,
            };
            out.skips.push(SkipRecord {
                path: display,
                line,
                reason: e.to_string(),
            });
        }
    }
    Ok(out)
}

/// Loads every parseable table under `path`. Malformed entries are skipped and
/// reported; only I/O failures abort. Files are processed in parallel and
/// merged in sorted path order.
pub fn load_corpus(path: &Path, format: CorpusFormat) -> Result<CorpusLoad, CorpusError> {
    let files = match format {
        CorpusFormat::JsonlTables if path.is_dir() => files_with_ext(path, "jsonl")?,
        CorpusFormat::JsonlTables => {
            fs::metadata(path).map_err(io_err(path))?;
            vec![path.to_path_buf()]
        }
        CorpusFormat::CsvDir => files_with_ext(path, "csv")?,
    };
    let parts: Vec<CorpusLoad> = files
        .par_iter()
        .map(|f| match format {
            CorpusFormat::JsonlTables => load_jsonl_file(f),
            CorpusFormat::CsvDir => load_csv_file(f),
        })
        .collect::<Result<_, _>>()?;

    let mut out = CorpusLoad::default();
    let mut ids = HashSet::new();
    for part in parts {
        for t in part.tables {
            if ids.insert(t.table_id.clone()) {
                out.tables.push(t);
            } else {
                out.skips.push(SkipRecord {
                    path: t.source.clone(),
                    line: 0,
                    reason: format!("duplicate table id {:?}", t.table_id),
                });
            }
        }
        out.skips.extend(part.skips);
    }
    Ok(out)
}

pub fn write_skip_report(path: &Path, skips: &[SkipRecord]) -> io::Result<()> {
    let mut w = io::BufWriter::new(fs::File::create(path)?);
    for s in skips {
        serde_json::to_writer(&mut w, s)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

/// Tables indexed by id, with database groupings.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    tables: Vec<TableSchema>,
    by_id: HashMap<String, usize>,
    dbs: BTreeMap<String, Vec<usize>>,
}

impl Corpus {
    pub fn new(tables: Vec<TableSchema>) -> Self {
        let mut by_id = HashMap::new();
        let mut dbs: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (i, t) in tables.iter().enumerate() {
            by_id.entry(t.table_id.clone()).or_insert(i);
            if let Some(db) = &t.db_id {
                dbs.entry(db.clone()).or_default().push(i);
            }
        }
        Self { tables, by_id, dbs }
    }

    pub fn tables(&self) -> &[TableSchema] {
        &self.tables
    }

    pub fn len(&self) -> usize {
        self.tables.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tables.is_empty()
    }

    pub fn get(&self, table_id: &str) -> Option<&TableSchema> {
        self.by_id.get(table_id).map(|&i| &self.tables[i])
    }

    /// Tables of the database `table` belongs to, in corpus order.
    pub fn db_members<'a>(&'a self, table: &'a TableSchema) -> Vec<&'a TableSchema> {
        match table.db_id.as_ref().and_then(|db| self.dbs.get(db)) {
            Some(idx) => idx.iter().map(|&i| &self.tables[i]).collect(),
            None => vec![table],
        }
    }

    pub fn db(&self, db_id: &str) -> Option<Vec<&TableSchema>> {
        self.dbs
            .get(db_id)
            .map(|idx| idx.iter().map(|&i| &self.tables[i]).collect())
    }

    /// A table id as a single-table schema, or a database id as the whole
    /// database.
    pub fn schema_for(&self, reference: &str) -> Option<Schema<'_>> {
        match self.get(reference) {
            Some(t) => Some(Schema::single(t)),
            None => self.db(reference).map(Schema::new),
        }
    }

    /// Schema made of exactly the listed tables.
    pub fn schema_of(&self, table_ids: &[String]) -> Option<Schema<'_>> {
        table_ids
            .iter()
            .map(|id| self.get(id))
            .collect::<Option<Vec<_>>>()
            .map(Schema::new)
    }
}

/// A read-only view of one or more tables with globally indexed columns.
#[derive(Debug, Clone)]
pub struct Schema<'a> {
    pub tables: Vec<&'a TableSchema>,
}

/// A column located within a [`Schema`].
#[derive(Debug, Clone, Copy)]
pub struct SchemaColumn<'a> {
    pub global: usize,
    pub table: &'a TableSchema,
    pub meta: &'a ColumnMeta,
}

impl<'a> Schema<'a> {
    pub fn new(tables: Vec<&'a TableSchema>) -> Self {
        Self { tables }
    }

    pub fn single(table: &'a TableSchema) -> Self {
        Self {
            tables: vec![table],
        }
    }

    pub fn is_multi_table(&self) -> bool {
        self.tables.len() > 1
    }

    pub fn columns(&self) -> impl Iterator<Item = SchemaColumn<'a>> + '_ {
        let mut offset = 0;
        self.tables.iter().flat_map(move |&table| {
            let start = offset;
            offset += table.columns.len();
            table.columns.iter().map(move |meta| SchemaColumn {
                global: start + meta.index,
                table,
                meta,
            })
        })
    }

    pub fn column_count(&self) -> usize {
        self.tables.iter().map(|t| t.columns.len()).sum()
    }

    /// Global index of the first column of `table_id`.
    pub fn offset_of(&self, table_id: &str) -> Option<usize> {
        let mut offset = 0;
        for t in &self.tables {
            if t.table_id == table_id {
                return Some(offset);
            }
            offset += t.columns.len();
        }
        None
    }

    pub fn table_ids(&self) -> Vec<String> {
        self.tables.iter().map(|t| t.table_id.clone()).collect()
    }
}

/// A natural utterance paired with a table, used for MLM-only records.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UtteranceRecord {
    pub text: String,
    pub table_id: String,
    #[serde(default)]
    pub source: String,
}

#[derive(Debug, Default)]
pub struct UtteranceLoad {
    pub records: Vec<UtteranceRecord>,
    pub skips: Vec<SkipRecord>,
}

/// Loads utterance records, skipping malformed lines and unknown table ids.
pub fn load_utterances(path: &Path, corpus: &Corpus) -> Result<UtteranceLoad, CorpusError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let display = path.display().to_string();
    let mut out = UtteranceLoad::default();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let reason = match serde_json::from_str::<UtteranceRecord>(&line) {
            Err(e) => format!("invalid utterance record: {e}"),
            Ok(r) if r.text.trim().is_empty() => "empty utterance text".into(),
            Ok(r) if corpus.get(&r.table_id).is_none() => {
                format!("unknown table id {:?}", r.table_id)
            }
            Ok(r) => {
                out.records.push(r);
                continue;
            }
        };
        out.skips.push(SkipRecord {
            path: display.clone(),
            line: i + 1,
            reason,
        });
    }
    Ok(out)
}
