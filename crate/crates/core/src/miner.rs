//! Template mining: abstract concrete seed SQL into slot templates, group by
//! template, rank by frequency, and write grammar stubs for hand authoring.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::io::{self, BufRead};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scfg::{lexicon_text, TerminalLexicon};
use crate::sql::{
    parse_sql, render_sql, walk_query, AggArg, AggFn, Bindings, ColumnRef, CompareOp, Literal,
    OperandShape, ParseMode, Query, SlotKind, SlotName, Slotted, SortDir, Terminal, TermVisitor,
};
use crate::table::{normalize_whitespace, Corpus, CorpusError, Schema, SkipRecord};

/// Exemplars kept per template group.
pub const EXEMPLAR_CAP: usize = 16;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedPair {
    pub question: String,
    pub sql: String,
    pub table_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AbstractionError {
    #[error("query contains slot {0}; abstraction needs concrete SQL")]
    NotConcrete(SlotName),
    #[error("table {0:?} is not in the schema")]
    UnknownTable(String),
    #[error("column {0:?} does not resolve against the schema")]
    UnknownColumn(String),
    #[error("column {0:?} is ambiguous between several tables")]
    AmbiguousColumn(String),
}

#[derive(Default)]
struct Counters {
    next: HashMap<SlotKind, u32>,
}

impl Counters {
    fn fresh(&mut self, kind: SlotKind) -> SlotName {
        let n = self.next.entry(kind).or_default();
        let s = SlotName::new(kind, *n);
        *n += 1;
        s
    }
}

struct Abstractor<'s> {
    schema: &'s Schema<'s>,
    counters: Counters,
    tables: HashMap<String, SlotName>,
    columns: HashMap<(usize, String), SlotName>,
    values: HashMap<Literal, SlotName>,
    aggs: HashMap<AggFn, SlotName>,
    ops: HashMap<CompareOp, SlotName>,
    sorts: HashMap<SortDir, SlotName>,
    binding: Bindings,
}

impl Abstractor<'_> {
    fn table_index(&self, name: &str) -> Result<usize, AbstractionError> {
        let tables = &self.schema.tables;
        tables
            .iter()
            .position(|t| t.name == name)
            .or_else(|| tables.iter().position(|t| t.name.eq_ignore_ascii_case(name)))
            .ok_or_else(|| AbstractionError::UnknownTable(name.to_string()))
    }

    fn has_column(&self, table: usize, name: &str, ignore_case: bool) -> bool {
        self.schema.tables[table].columns.iter().any(|c| {
            if ignore_case {
                c.name.eq_ignore_ascii_case(name)
            } else {
                c.name == name
            }
        })
    }

    fn table_slot(&mut self, name: &str) -> Result<SlotName, AbstractionError> {
        self.table_index(name)?;
        if let Some(s) = self.tables.get(name) {
            return Ok(*s);
        }
        let s = self.counters.fresh(SlotKind::Table);
        self.tables.insert(name.to_string(), s);
        self.binding.insert(s, Terminal::Table(name.to_string()));
        Ok(s)
    }
}

fn concrete<T: Clone>(x: &Slotted<T>) -> Result<T, AbstractionError> {
    match x {
        Slotted::Fixed(v) => Ok(v.clone()),
        Slotted::Slot(s) => Err(AbstractionError::NotConcrete(*s)),
    }
}

impl TermVisitor for Abstractor<'_> {
    type Error = AbstractionError;

    fn table(&mut self, t: &mut Slotted<String>) -> Result<(), Self::Error> {
        let name = concrete(t)?;
        *t = Slotted::Slot(self.table_slot(&name)?);
        Ok(())
    }

    fn column(&mut self, c: &mut ColumnRef, scope: &[Slotted<String>]) -> Result<(), Self::Error> {
        let name = concrete(&c.column)?;
        let table = match &mut c.table {
            Some(q) => {
                let qname = concrete(q)?;
                let idx = self.table_index(&qname)?;
                *q = Slotted::Slot(self.table_slot(&qname)?);
                if !self.has_column(idx, &name, false) && !self.has_column(idx, &name, true) {
                    return Err(AbstractionError::UnknownColumn(name));
                }
                idx
            }
            None => {
                let candidates: Vec<usize> = if scope.is_empty() {
                    (0..self.schema.tables.len()).collect()
                } else {
                    scope
                        .iter()
                        .map(|t| self.table_index(&concrete(t)?))
                        .collect::<Result<_, _>>()?
                };
                let mut hits: Vec<usize> = candidates
                    .iter()
                    .copied()
                    .filter(|&t| self.has_column(t, &name, false))
                    .collect();
                if hits.is_empty() {
                    hits = candidates
                        .into_iter()
                        .filter(|&t| self.has_column(t, &name, true))
                        .collect();
                }
                hits.dedup();
                match hits[..] {
                    [t] => t,
                    [] => return Err(AbstractionError::UnknownColumn(name)),
                    _ => return Err(AbstractionError::AmbiguousColumn(name)),
                }
            }
        };
        let key = (table, name.clone());
        let slot = match self.columns.get(&key) {
            Some(s) => *s,
            None => {
                let s = self.counters.fresh(SlotKind::Column);
                self.columns.insert(key, s);
                self.binding.insert(s, Terminal::Column(name));
                s
            }
        };
        c.column = Slotted::Slot(slot);
        Ok(())
    }

    fn value(&mut self, v: &mut Slotted<Literal>) -> Result<(), Self::Error> {
        let lit = concrete(v)?;
        let slot = match self.values.get(&lit) {
            Some(s) => *s,
            None => {
                let s = self.counters.fresh(SlotKind::Value);
                self.values.insert(lit.clone(), s);
                self.binding.insert(s, Terminal::Value(lit));
                s
            }
        };
        *v = Slotted::Slot(slot);
        Ok(())
    }

    fn agg(&mut self, f: &mut Slotted<AggFn>, arg: &AggArg) -> Result<(), Self::Error> {
        let func = concrete(f)?;
        // COUNT ( * ) is structure, not a choice.
        if func == AggFn::Count && matches!(arg, AggArg::Star) {
            return Ok(());
        }
        let slot = match self.aggs.get(&func) {
            Some(s) => *s,
            None => {
                let s = self.counters.fresh(SlotKind::Agg);
                self.aggs.insert(func, s);
                self.binding.insert(s, Terminal::Agg(func));
                s
            }
        };
        *f = Slotted::Slot(slot);
        Ok(())
    }

    fn op(&mut self, op: &mut Slotted<CompareOp>, _: OperandShape) -> Result<(), Self::Error> {
        let o = concrete(op)?;
        let slot = match self.ops.get(&o) {
            Some(s) => *s,
            None => {
                let s = self.counters.fresh(SlotKind::Op);
                self.ops.insert(o, s);
                self.binding.insert(s, Terminal::Op(o));
                s
            }
        };
        *op = Slotted::Slot(slot);
        Ok(())
    }

    fn sort(&mut self, d: &mut Slotted<SortDir>) -> Result<(), Self::Error> {
        let dir = concrete(d)?;
        let slot = match self.sorts.get(&dir) {
            Some(s) => *s,
            None => {
                let s = self.counters.fresh(SlotKind::Sc);
                self.sorts.insert(dir, s);
                self.binding.insert(s, Terminal::Sort(dir));
                s
            }
        };
        *d = Slotted::Slot(slot);
        Ok(())
    }
}

/// Replaces identifiers, literals, aggregates over columns, operators and
/// sort directions with slots numbered by first textual occurrence; repeats
/// reuse their slot. Returns the template and the binding that restores `sql`.
pub fn abstract_sql(sql: &Query, schema: &Schema<'_>) -> Result<(Query, Bindings), AbstractionError> {
    let mut out = sql.clone();
    let mut a = Abstractor {
        schema,
        counters: Counters::default(),
        tables: HashMap::new(),
        columns: HashMap::new(),
        values: HashMap::new(),
        aggs: HashMap::new(),
        ops: HashMap::new(),
        sorts: HashMap::new(),
        binding: Bindings::new(),
    };
    walk_query(&mut out, &[], &mut a)?;
    Ok((out, a.binding))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TemplateGroup {
    pub beta: Query,
    pub template: String,
    pub count: usize,
    pub exemplars: Vec<SeedPair>,
}

#[derive(Debug, Clone)]
pub struct MineResult {
    /// Ranked groups, truncated to `top_k`.
    pub groups: Vec<TemplateGroup>,
    pub distinct_templates: usize,
    /// Pairs that abstracted successfully, across all groups.
    pub grouped: usize,
    pub skipped: Vec<SkipRecord>,
}

/// Groups pairs by abstracted template and ranks groups by count, then by
/// template text. Pairs that do not parse or resolve are skipped.
pub fn mine_templates(pairs: &[SeedPair], corpus: &Corpus, top_k: usize) -> MineResult {
    let abstracted: Vec<Result<(Query, String), String>> = pairs
        .par_iter()
        .map(|p| {
            let q = parse_sql(&p.sql, ParseMode::Concrete).map_err(|e| e.to_string())?;
            let schema = corpus
                .schema_for(&p.table_id)
                .ok_or_else(|| format!("unknown table id {:?}", p.table_id))?;
            let (t, _) = abstract_sql(&q, &schema).map_err(|e| e.to_string())?;
            let key = render_sql(&t);
            Ok((t, key))
        })
        .collect();

    let mut groups: BTreeMap<String, TemplateGroup> = BTreeMap::new();
    let mut skipped = Vec::new();
    let mut grouped = 0;
    for (i, (pair, r)) in pairs.iter().zip(abstracted).enumerate() {
        match r {
            Ok((beta, key)) => {
                grouped += 1;
                let g = groups.entry(key.clone()).or_insert_with(|| TemplateGroup {
                    beta,
                    template: key,
                    count: 0,
                    exemplars: Vec::new(),
                });
                g.count += 1;
                if g.exemplars.len() < EXEMPLAR_CAP {
                    g.exemplars.push(pair.clone());
                }
            }
            Err(reason) => skipped.push(SkipRecord {
                path: String::new(),
                line: i + 1,
                reason,
            }),
        }
    }
    let distinct_templates = groups.len();
    let mut ranked: Vec<TemplateGroup> = groups.into_values().collect();
    ranked.sort_by(|a, b| b.count.cmp(&a.count).then_with(|| a.template.cmp(&b.template)));
    ranked.truncate(top_k.max(1));
    MineResult {
        groups: ranked,
        distinct_templates,
        grouped,
        skipped,
    }
}

pub struct SeedLoad {
    pub pairs: Vec<SeedPair>,
    pub skips: Vec<SkipRecord>,
}

/// Reads JSONL seed pairs `{"question", "sql", "table_id"}`.
pub fn load_seed_pairs(path: &Path) -> Result<SeedLoad, CorpusError> {
    let io_err = |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    };
    let f = std::fs::File::open(path).map_err(io_err)?;
    let mut pairs = Vec::new();
    let mut skips = Vec::new();
    for (i, line) in io::BufReader::new(f).lines().enumerate() {
        let line = line.map_err(io_err)?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<SeedPair>(&line) {
            Ok(p) => pairs.push(p),
            Err(e) => skips.push(SkipRecord {
                path: path.display().to_string(),
                line: i + 1,
                reason: e.to_string(),
            }),
        }
    }
    Ok(SeedLoad { pairs, skips })
}

/// Grammar stub text: the lexicon, then one `[rule]` block per group with the
/// SQL template, up to `exemplar_cap` exemplar questions as comments, and an
/// empty `nl:` line to fill in.
pub fn rule_stubs(groups: &[TemplateGroup], lexicon: &TerminalLexicon, exemplar_cap: usize) -> String {
    let mut out = String::from("# Mined rule stubs. Fill in each `nl:` line before loading.\n\n");
    out.push_str(&lexicon_text(lexicon));
    let width = groups.len().to_string().len().max(3);
    for (rank, g) in groups.iter().enumerate() {
        let _ = writeln!(out, "\n[rule]\nid: mined_{:0width$}", rank + 1);
        let _ = writeln!(out, "weight: {}", g.count);
        let _ = writeln!(out, "sql: {}", g.template);
        for e in g.exemplars.iter().take(exemplar_cap) {
            let _ = writeln!(out, "# {}", normalize_whitespace(&e.question));
        }
        out.push_str("nl:\n");
    }
    out
}

pub fn emit_rule_stubs(
    groups: &[TemplateGroup],
    lexicon: &TerminalLexicon,
    exemplar_cap: usize,
    path: &Path,
) -> io::Result<()> {
    std::fs::write(path, rule_stubs(groups, lexicon, exemplar_cap))
}
