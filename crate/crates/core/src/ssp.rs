//! Per-column operation labels for SQL semantic prediction, and the closed
//! label vocabulary.
//!
//! A label is `NONE` or a set of clause-role atoms joined by ` AND `. An atom
//! is a role (SELECT, FROM, WHERE, GROUP BY, GROUP BY HAVING, HAVING,
//! ORDER BY, ORDER BY LIMIT) optionally prefixed by the set-operation arms and
//! subqueries it sits in, e.g. `INTERSECT SELECT` or `SUB WHERE`.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io::{self, BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::scfg::{Grammar, ProductionRule};
use crate::sql::{
    AggArg, ColumnRef, Expr, Operand, Predicate, Query, Select, SetOpKind, SlotKind, SlotName,
    Slotted,
};
use crate::synth::{Bound, SynthExample};
use crate::table::Schema;

pub const NONE: &str = "NONE";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Role {
    Select,
    From,
    Where,
    GroupBy,
    GroupByHaving,
    Having,
    OrderBy,
    OrderByLimit,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Select => "SELECT",
            Role::From => "FROM",
            Role::Where => "WHERE",
            Role::GroupBy => "GROUP BY",
            Role::GroupByHaving => "GROUP BY HAVING",
            Role::Having => "HAVING",
            Role::OrderBy => "ORDER BY",
            Role::OrderByLimit => "ORDER BY LIMIT",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Context {
    Intersect,
    Union,
    Except,
    Sub,
}

impl Context {
    pub fn as_str(self) -> &'static str {
        match self {
            Context::Intersect => "INTERSECT",
            Context::Union => "UNION",
            Context::Except => "EXCEPT",
            Context::Sub => "SUB",
        }
    }

    fn of_set_op(kind: SetOpKind) -> Self {
        match kind {
            SetOpKind::Intersect => Context::Intersect,
            SetOpKind::Union => Context::Union,
            SetOpKind::Except => Context::Except,
        }
    }
}

/// One clause role under a nesting context. Atoms sort by context (outermost
/// query first), then by clause order.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Atom {
    pub context: Vec<Context>,
    pub role: Role,
}

impl fmt::Display for Atom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.context {
            write!(f, "{} ", c.as_str())?;
        }
        f.write_str(self.role.as_str())
    }
}

/// Canonical label string.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SspLabel(String);

impl SspLabel {
    pub fn none() -> Self {
        SspLabel(NONE.to_string())
    }

    pub fn from_atoms(atoms: &BTreeSet<Atom>) -> Self {
        if atoms.is_empty() {
            return Self::none();
        }
        let parts: Vec<String> = atoms.iter().map(Atom::to_string).collect();
        SspLabel(parts.join(" AND "))
    }

    /// Wraps an existing label string, e.g. one read from a vocabulary file.
    pub fn from_raw(s: impl Into<String>) -> Self {
        SspLabel(s.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn is_none(&self) -> bool {
        self.0 == NONE
    }
}

impl fmt::Display for SspLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// A column reference together with the clause role it plays.
#[derive(Debug, Clone)]
pub struct Occurrence<'q> {
    pub column: &'q ColumnRef,
    /// FROM tables in effect where the reference appears.
    pub scope: Vec<&'q Slotted<String>>,
    pub atom: Atom,
}

struct Collector<'q> {
    out: Vec<Occurrence<'q>>,
}

impl<'q> Collector<'q> {
    fn push(&mut self, c: &'q ColumnRef, scope: &[&'q Slotted<String>], ctx: &[Context], role: Role) {
        self.out.push(Occurrence {
            column: c,
            scope: scope.to_vec(),
            atom: Atom {
                context: ctx.to_vec(),
                role,
            },
        });
    }

    fn expr(&mut self, e: &'q Expr, scope: &[&'q Slotted<String>], ctx: &[Context], role: Role) {
        match e {
            Expr::Star => {}
            Expr::Column(c) => self.push(c, scope, ctx, role),
            Expr::Agg { arg, .. } => {
                if let AggArg::Column(c) = arg {
                    self.push(c, scope, ctx, role);
                }
            }
        }
    }

    fn predicate(
        &mut self,
        p: &'q Predicate,
        scope: &[&'q Slotted<String>],
        ctx: &[Context],
        role: Role,
    ) {
        for cond in p.conditions() {
            self.expr(&cond.lhs, scope, ctx, role);
            if let Operand::Subquery(q) = &cond.rhs {
                let mut inner = ctx.to_vec();
                inner.push(Context::Sub);
                self.query(q, scope, &inner);
            }
        }
    }

    fn select(&mut self, s: &'q Select, outer: &[&'q Slotted<String>], ctx: &[Context]) {
        let scope: Vec<&Slotted<String>> = match &s.from {
            Some(f) => f.tables().collect(),
            None => outer.to_vec(),
        };
        for p in &s.projections {
            self.expr(p, &scope, ctx, Role::Select);
        }
        if let Some(join) = s.from.as_ref().and_then(|f| f.join.as_ref()) {
            self.push(&join.left, &scope, ctx, Role::From);
            self.push(&join.right, &scope, ctx, Role::From);
        }
        if let Some(p) = &s.filter {
            self.predicate(p, &scope, ctx, Role::Where);
        }
        let group_role = if s.having.is_some() {
            Role::GroupByHaving
        } else {
            Role::GroupBy
        };
        for c in &s.group_by {
            self.push(c, &scope, ctx, group_role);
        }
        if let Some(p) = &s.having {
            self.predicate(p, &scope, ctx, Role::Having);
        }
        let order_role = if s.limit.is_some() {
            Role::OrderByLimit
        } else {
            Role::OrderBy
        };
        for item in &s.order_by {
            self.expr(&item.expr, &scope, ctx, order_role);
        }
    }

    fn query(&mut self, q: &'q Query, scope: &[&'q Slotted<String>], ctx: &[Context]) {
        match q {
            Query::Select(s) => self.select(s, scope, ctx),
            Query::SetOp { kind, left, right } => {
                self.query(left, scope, ctx);
                let mut arm = ctx.to_vec();
                arm.push(Context::of_set_op(*kind));
                self.query(right, scope, &arm);
            }
        }
    }
}

/// Every column reference in `q` with its clause role, in textual order.
pub fn column_occurrences(q: &Query) -> Vec<Occurrence<'_>> {
    let mut c = Collector { out: Vec::new() };
    c.query(q, &[], &[]);
    c.out
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LabelError {
    #[error("table {0:?} is not in the schema")]
    UnknownTable(String),
    #[error("column {0:?} does not resolve against the schema")]
    UnknownColumn(String),
    #[error("query still contains slot {0}")]
    Slot(SlotName),
}

fn fixed(s: &Slotted<String>) -> Result<&str, LabelError> {
    match s {
        Slotted::Fixed(n) => Ok(n),
        Slotted::Slot(slot) => Err(LabelError::Slot(*slot)),
    }
}

/// Tables matching `name`, exact spelling first, then ignoring case.
fn tables_named(schema: &Schema<'_>, name: &str) -> Vec<usize> {
    let exact: Vec<usize> = (0..schema.tables.len())
        .filter(|&i| schema.tables[i].name == name)
        .collect();
    if !exact.is_empty() {
        return exact;
    }
    (0..schema.tables.len())
        .filter(|&i| schema.tables[i].name.eq_ignore_ascii_case(name))
        .collect()
}

fn resolve(
    occ: &Occurrence<'_>,
    schema: &Schema<'_>,
    offsets: &[usize],
) -> Result<Vec<usize>, LabelError> {
    let column = fixed(&occ.column.column)?;
    let candidates: Vec<usize> = match &occ.column.table {
        Some(t) => {
            let name = fixed(t)?;
            let found = tables_named(schema, name);
            if found.is_empty() {
                return Err(LabelError::UnknownTable(name.to_string()));
            }
            found
        }
        None if occ.scope.is_empty() => (0..schema.tables.len()).collect(),
        None => {
            let mut v = Vec::new();
            for t in &occ.scope {
                let name = fixed(t)?;
                let found = tables_named(schema, name);
                if found.is_empty() {
                    return Err(LabelError::UnknownTable(name.to_string()));
                }
                v.extend(found);
            }
            v
        }
    };
    let collect = |ignore_case: bool| -> Vec<usize> {
        candidates
            .iter()
            .flat_map(|&t| {
                schema.tables[t]
                    .columns
                    .iter()
                    .filter(move |c| {
                        if ignore_case {
                            c.name.eq_ignore_ascii_case(column)
                        } else {
                            c.name == column
                        }
                    })
                    .map(move |c| offsets[t] + c.index)
            })
            .collect()
    };
    let exact = collect(false);
    let hits = if exact.is_empty() { collect(true) } else { exact };
    if hits.is_empty() {
        return Err(LabelError::UnknownColumn(column.to_string()));
    }
    Ok(hits)
}

fn offsets(schema: &Schema<'_>) -> Vec<usize> {
    schema
        .tables
        .iter()
        .scan(0, |acc, t| {
            let at = *acc;
            *acc += t.columns.len();
            Some(at)
        })
        .collect()
}

/// Labels every column of `schema` (by global index over the flattened
/// schema) for a concrete query. Columns resolve by name, so labels do not
/// depend on column order.
pub fn label_columns(
    sql: &Query,
    schema: &Schema<'_>,
) -> Result<BTreeMap<usize, SspLabel>, LabelError> {
    let offsets = offsets(schema);
    let mut atoms: Vec<BTreeSet<Atom>> = vec![BTreeSet::new(); schema.column_count()];
    for occ in column_occurrences(sql) {
        for g in resolve(&occ, schema, &offsets)? {
            atoms[g].insert(occ.atom.clone());
        }
    }
    Ok(atoms
        .iter()
        .enumerate()
        .map(|(i, a)| (i, SspLabel::from_atoms(a)))
        .collect())
}

/// Atoms of each COLUMN slot in a template.
pub fn template_atoms(template: &Query) -> BTreeMap<SlotName, BTreeSet<Atom>> {
    let mut out: BTreeMap<SlotName, BTreeSet<Atom>> = BTreeMap::new();
    for occ in column_occurrences(template) {
        if let Slotted::Slot(s) = &occ.column.column {
            if s.kind == SlotKind::Column {
                out.entry(*s).or_default().insert(occ.atom.clone());
            }
        }
    }
    out
}

/// Labels implied by a rule template and a binding, over a schema of
/// `column_count` columns.
pub fn template_labels(
    rule: &ProductionRule,
    binding: &BTreeMap<SlotName, Bound>,
    column_count: usize,
) -> BTreeMap<usize, SspLabel> {
    let mut labels: BTreeMap<usize, SspLabel> =
        (0..column_count).map(|i| (i, SspLabel::none())).collect();
    for (slot, atoms) in template_atoms(&rule.sql) {
        if let Some(Bound::Column { index, .. }) = binding.get(&slot) {
            labels.insert(*index, SspLabel::from_atoms(&atoms));
        }
    }
    labels
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LabelDiff {
    pub column: usize,
    pub name: String,
    pub stored: Option<SspLabel>,
    pub from_sql: Option<SspLabel>,
    pub from_template: Option<SspLabel>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Verification {
    pub ok: bool,
    pub diffs: Vec<LabelDiff>,
    pub error: Option<String>,
}

/// Checks an example's stored labels against labels recomputed from its SQL
/// and against labels implied by the rule template and binding.
pub fn verify_against_binding(
    example: &SynthExample,
    rule: &ProductionRule,
    schema: &Schema<'_>,
) -> Verification {
    let parsed = match crate::sql::parse_sql(&example.sql, crate::sql::ParseMode::Concrete) {
        Ok(q) => q,
        Err(e) => {
            return Verification {
                ok: false,
                diffs: vec![],
                error: Some(e.to_string()),
            }
        }
    };
    let from_sql = match label_columns(&parsed, schema) {
        Ok(l) => l,
        Err(e) => {
            return Verification {
                ok: false,
                diffs: vec![],
                error: Some(e.to_string()),
            }
        }
    };
    let from_template = template_labels(rule, &example.binding, schema.column_count());
    let names: Vec<String> = schema.columns().map(|c| c.meta.name.clone()).collect();
    let mut diffs = Vec::new();
    for i in 0..schema.column_count().max(example.labels.len()) {
        let stored = example.labels.get(&i);
        let a = from_sql.get(&i);
        let b = from_template.get(&i);
        if stored.is_none() || stored != a || stored != b {
            diffs.push(LabelDiff {
                column: i,
                name: names.get(i).cloned().unwrap_or_default(),
                stored: stored.cloned(),
                from_sql: a.cloned(),
                from_template: b.cloned(),
            });
        }
    }
    Verification {
        ok: diffs.is_empty(),
        diffs,
        error: None,
    }
}

#[derive(Debug, Error)]
pub enum VocabError {
    #[error("label {0:?} is not in the vocabulary")]
    Unknown(String),
    #[error("vocabulary must start with NONE")]
    MissingNone,
    #[error("duplicate label {0:?}")]
    Duplicate(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Closed label set: `NONE` at index 0, then the remaining labels sorted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelVocabulary {
    labels: Vec<SspLabel>,
    index: HashMap<SspLabel, usize>,
    /// Hash of the dataset the vocabulary was built from.
    pub provenance: String,
}

impl LabelVocabulary {
    pub fn from_labels<I: IntoIterator<Item = SspLabel>>(labels: I, provenance: String) -> Self {
        let mut set: BTreeSet<SspLabel> = labels.into_iter().collect();
        set.remove(&SspLabel::none());
        let labels: Vec<SspLabel> = std::iter::once(SspLabel::none()).chain(set).collect();
        let index = labels.iter().cloned().enumerate().map(|(i, l)| (l, i)).collect();
        Self {
            labels,
            index,
            provenance,
        }
    }

    pub fn labels(&self) -> &[SspLabel] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn index_of(&self, label: &SspLabel) -> Result<usize, VocabError> {
        self.index
            .get(label)
            .copied()
            .ok_or_else(|| VocabError::Unknown(label.to_string()))
    }

    pub fn contains(&self, label: &SspLabel) -> bool {
        self.index.contains_key(label)
    }

    pub fn is_subset_of(&self, other: &LabelVocabulary) -> bool {
        self.labels.iter().all(|l| other.contains(l))
    }

    /// One label per line; the line number is the class index.
    pub fn write(&self, path: &Path) -> io::Result<()> {
        let mut f = io::BufWriter::new(std::fs::File::create(path)?);
        for l in &self.labels {
            writeln!(f, "{l}")?;
        }
        f.flush()
    }

    pub fn read(path: &Path) -> Result<Self, VocabError> {
        let f = io::BufReader::new(std::fs::File::open(path)?);
        let mut labels = Vec::new();
        for line in f.lines() {
            let line = line?;
            let line = line.trim_end_matches('\r');
            if !line.is_empty() {
                labels.push(SspLabel::from_raw(line));
            }
        }
        if labels.first().map(SspLabel::is_none) != Some(true) {
            return Err(VocabError::MissingNone);
        }
        let mut seen = BTreeSet::new();
        for l in &labels {
            if !seen.insert(l.clone()) {
                return Err(VocabError::Duplicate(l.to_string()));
            }
        }
        let index = labels.iter().cloned().enumerate().map(|(i, l)| (l, i)).collect();
        Ok(Self {
            labels,
            index,
            provenance: String::new(),
        })
    }
}

/// Builds the vocabulary over labeled examples. Neither the label order nor
/// the provenance hash depends on example order.
pub fn build_vocabulary(examples: &[SynthExample]) -> LabelVocabulary {
    let mut digests: Vec<[u8; 32]> = examples
        .iter()
        .map(|e| {
            let line = serde_json::to_string(e).expect("example serializes");
            Sha256::digest(line.as_bytes()).into()
        })
        .collect();
    digests.sort_unstable();
    let mut h = Sha256::new();
    for d in &digests {
        h.update(d);
    }
    let provenance = format!("sha256:{:x}", h.finalize());
    LabelVocabulary::from_labels(
        examples.iter().flat_map(|e| e.labels.values().cloned()),
        provenance,
    )
}

/// Every label the grammar can produce: each COLUMN slot's template label,
/// plus `NONE`.
pub fn grammar_label_space(grammar: &Grammar) -> LabelVocabulary {
    let labels = grammar.rules.iter().flat_map(|r| {
        template_atoms(&r.sql)
            .into_values()
            .map(|a| SspLabel::from_atoms(&a))
            .collect::<Vec<_>>()
    });
    LabelVocabulary::from_labels(labels, "grammar".to_string())
}
