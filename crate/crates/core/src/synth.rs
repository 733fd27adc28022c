//! Grounded generation: bind a production rule against a table, render the
//! question and SQL, and label the result.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use once_cell::sync::Lazy;
use rand::distributions::WeightedIndex;
use rand::prelude::*;
use rayon::prelude::*;
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng;
use crate::scfg::{
    op_candidates, realize_phrase, Grammar, LexTerminal, LexiconError, Lhs, NlTemplate, NlToken,
    ProductionRule, TerminalLexicon, ValueContext,
};
use crate::sql::{
    render_sql, substitute_slots, AggFn, CompareOp, Literal, Query, SlotKind, SlotName, Slotted,
    SortDir, SubstituteError, Terminal,
};
use crate::ssp::{label_columns, LabelError, SspLabel};
use crate::table::{numeric_value, ColumnType, Corpus, Schema, TableSchema};

pub const DEFAULT_RETRY_BUDGET: usize = 50;

/// Range for thresholds that are counts rather than cells: HAVING COUNT
/// comparisons and LIMIT.
pub const SMALL_INT_RANGE: std::ops::RangeInclusive<u32> = 1..=5;

static PLAIN_NUMBER: Lazy<Regex> = Lazy::new(|| Regex::new(r"^-?\d+(\.\d+)?$").unwrap());

/// What a slot is bound to. Column indices are global over the example's
/// flattened schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Bound {
    Table {
        table_id: String,
        name: String,
    },
    Column {
        table_id: String,
        name: String,
        index: usize,
        col_type: ColumnType,
    },
    Value {
        literal: Literal,
        surface: String,
    },
    Agg {
        terminal: AggFn,
        phrase: String,
    },
    Op {
        terminal: CompareOp,
        phrase: String,
    },
    Sort {
        terminal: SortDir,
        phrase: String,
    },
}

impl Bound {
    /// The form the question shows.
    pub fn surface(&self) -> &str {
        match self {
            Bound::Table { name, .. } | Bound::Column { name, .. } => name,
            Bound::Value { surface, .. } => surface,
            Bound::Agg { phrase, .. } | Bound::Op { phrase, .. } | Bound::Sort { phrase, .. } => {
                phrase
            }
        }
    }

    pub fn terminal(&self) -> Terminal {
        match self {
            Bound::Table { name, .. } => Terminal::Table(name.clone()),
            Bound::Column { name, .. } => Terminal::Column(name.clone()),
            Bound::Value { literal, .. } => Terminal::Value(literal.clone()),
            Bound::Agg { terminal, .. } => Terminal::Agg(*terminal),
            Bound::Op { terminal, .. } => Terminal::Op(*terminal),
            Bound::Sort { terminal, .. } => Terminal::Sort(*terminal),
        }
    }
}

pub type Binding = BTreeMap<SlotName, Bound>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthExample {
    pub id: String,
    pub question: String,
    pub sql: String,
    pub table_id: String,
    /// All bound tables in schema order; present only for multi-table examples.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub table_ids: Vec<String>,
    pub rule_id: String,
    pub binding: Binding,
    pub labels: BTreeMap<usize, SspLabel>,
}

impl SynthExample {
    /// Table ids making up the example's schema.
    pub fn schema_ids(&self) -> Vec<String> {
        if self.table_ids.is_empty() {
            vec![self.table_id.clone()]
        } else {
            self.table_ids.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BindFailure {
    #[error("rule needs {need} usable columns, table has {have}")]
    TooFewColumns { need: usize, have: usize },
    #[error("rule needs {need} NUMBER columns, table has {have}")]
    TooFewNumeric { need: usize, have: usize },
    #[error("rule needs {0} distinctly named tables from one database")]
    NoDatabase(usize),
    #[error("column bound to {0} has no non-empty cells")]
    EmptyColumn(SlotName),
    #[error("no compatible lexicon-backed terminal for {0}")]
    NoTerminal(SlotName),
    #[error("no value fits every position of {0}")]
    NoValue(SlotName),
    #[error(transparent)]
    Lexicon(#[from] LexiconError),
}

impl BindFailure {
    /// Short class name used in diagnostics.
    pub fn class(&self) -> &'static str {
        match self {
            BindFailure::TooFewColumns { .. } => "too_few_columns",
            BindFailure::TooFewNumeric { .. } => "too_few_numeric",
            BindFailure::NoDatabase(_) => "no_database",
            BindFailure::EmptyColumn(_) => "empty_column",
            BindFailure::NoTerminal(_) => "no_terminal",
            BindFailure::NoValue(_) => "no_value",
            BindFailure::Lexicon(_) => "lexicon",
        }
    }
}

/// A successful binding and the tables it ranges over, in TABLE slot order.
#[derive(Debug, Clone)]
pub struct BoundRule<'a> {
    pub binding: Binding,
    pub tables: Vec<&'a TableSchema>,
}

impl<'a> BoundRule<'a> {
    pub fn schema(&self) -> Schema<'a> {
        Schema::new(self.tables.clone())
    }
}

/// Columns of a table whose name is unique within it, so name-based labels
/// stay unambiguous.
fn usable_columns(t: &TableSchema) -> Vec<usize> {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for c in &t.columns {
        *counts.entry(c.name.as_str()).or_default() += 1;
    }
    t.columns
        .iter()
        .filter(|c| counts[c.name.as_str()] == 1)
        .map(|c| c.index)
        .collect()
}

fn literal_for(cell: &str, col_type: ColumnType) -> Literal {
    if col_type == ColumnType::Number && PLAIN_NUMBER.is_match(cell) {
        Literal::Number(cell.to_string())
    } else {
        Literal::Text(cell.to_string())
    }
}

fn small_int<R: Rng + ?Sized>(rng: &mut R) -> Bound {
    let n = rng.gen_range(SMALL_INT_RANGE).to_string();
    Bound::Value {
        literal: Literal::Number(n.clone()),
        surface: n,
    }
}

/// A LIKE pattern built around a random piece of `cell`: `x%`, `%x` or `%x%`.
/// Returns the pattern and the core substring.
pub fn like_pattern<R: Rng + ?Sized>(cell: &str, rng: &mut R) -> (String, String) {
    let chars: Vec<char> = cell.chars().collect();
    let n = chars.len();
    match rng.gen_range(0..3) {
        0 => {
            let k = rng.gen_range(1..=n);
            let core: String = chars[..k].iter().collect();
            (format!("{core}%"), core)
        }
        1 => {
            let k = rng.gen_range(0..n);
            let core: String = chars[k..].iter().collect();
            (format!("%{core}"), core)
        }
        _ => {
            let start = rng.gen_range(0..n);
            let end = rng.gen_range(start + 1..=n);
            let core: String = chars[start..end].iter().collect();
            (format!("%{core}%"), core)
        }
    }
}

fn choose_lexical<R: Rng + ?Sized, T: Copy>(
    slot: SlotName,
    candidates: Vec<T>,
    wrap: impl Fn(T) -> LexTerminal,
    lexicon: &TerminalLexicon,
    rng: &mut R,
) -> Result<(T, String), BindFailure> {
    let backed: Vec<T> = candidates
        .into_iter()
        .filter(|&t| lexicon.has(wrap(t)))
        .collect();
    let &chosen = backed.choose(rng).ok_or(BindFailure::NoTerminal(slot))?;
    let phrase = realize_phrase(wrap(chosen), lexicon, rng)?.to_string();
    Ok((chosen, phrase))
}

/// Binds every slot of `rule`. `table` fills TABLE0; further TABLE slots are
/// drawn from `companions`, which should be the other tables of its database.
pub fn bind_rule<'a, R: Rng + ?Sized>(
    rule: &ProductionRule,
    lexicon: &TerminalLexicon,
    table: &'a TableSchema,
    companions: &[&'a TableSchema],
    rng: &mut R,
) -> Result<BoundRule<'a>, BindFailure> {
    let plan = &rule.plan;

    // Tables.
    let mut tables = vec![table];
    if plan.tables.len() > 1 {
        let mut pool: Vec<&TableSchema> = companions
            .iter()
            .copied()
            .filter(|t| t.table_id != table.table_id)
            .collect();
        pool.shuffle(rng);
        for t in pool {
            if tables.len() == plan.tables.len() {
                break;
            }
            if tables.iter().all(|c| c.name != t.name) {
                tables.push(t);
            }
        }
        if tables.len() < plan.tables.len() {
            return Err(BindFailure::NoDatabase(plan.tables.len()));
        }
    }
    let schema = Schema::new(tables.clone());
    let mut binding = Binding::new();
    for (slot, t) in plan.tables.iter().zip(&tables) {
        binding.insert(
            *slot,
            Bound::Table {
                table_id: t.table_id.clone(),
                name: t.name.clone(),
            },
        );
    }

    // Columns, per table; numeric-constrained slots first so unconstrained
    // ones cannot use up the NUMBER columns.
    for (ti, tslot) in plan.tables.iter().enumerate() {
        let t = tables[ti];
        let offset = schema.offset_of(&t.table_id).unwrap_or(0);
        let slots: Vec<SlotName> = plan
            .column_tables
            .iter()
            .filter(|(_, owner)| *owner == tslot)
            .map(|(c, _)| *c)
            .collect();
        let (numeric, free): (Vec<SlotName>, Vec<SlotName>) = slots
            .iter()
            .partition(|s| plan.requires_numeric.contains(s));
        let usable = usable_columns(t);
        if usable.len() < slots.len() {
            return Err(BindFailure::TooFewColumns {
                need: slots.len(),
                have: usable.len(),
            });
        }
        let mut numeric_cols: Vec<usize> = usable
            .iter()
            .copied()
            .filter(|&i| t.columns[i].col_type == ColumnType::Number)
            .collect();
        if numeric_cols.len() < numeric.len() {
            return Err(BindFailure::TooFewNumeric {
                need: numeric.len(),
                have: numeric_cols.len(),
            });
        }
        numeric_cols.shuffle(rng);
        let assign = |slot: SlotName, col: usize, binding: &mut Binding| {
            let meta = &t.columns[col];
            binding.insert(
                slot,
                Bound::Column {
                    table_id: t.table_id.clone(),
                    name: meta.name.clone(),
                    index: offset + col,
                    col_type: meta.col_type,
                },
            );
        };
        for (slot, &col) in numeric.iter().zip(&numeric_cols) {
            assign(*slot, col, &mut binding);
        }
        let taken_now: HashSet<usize> = numeric_cols[..numeric.len()].iter().copied().collect();
        let mut rest: Vec<usize> = usable
            .iter()
            .copied()
            .filter(|c| !taken_now.contains(c))
            .collect();
        rest.shuffle(rng);
        for (slot, &col) in free.iter().zip(&rest) {
            assign(*slot, col, &mut binding);
        }
    }
    let column_of = |binding: &Binding, slot: SlotName| -> (usize, usize, ColumnType) {
        match &binding[&slot] {
            Bound::Column {
                table_id,
                index,
                col_type,
                ..
            } => {
                let ti = tables.iter().position(|t| &t.table_id == table_id).unwrap();
                let offset = schema.offset_of(table_id).unwrap_or(0);
                (ti, index - offset, *col_type)
            }
            _ => unreachable!("column slot bound to a column"),
        }
    };
    for &slot in &plan.condition_columns {
        let (ti, col, _) = column_of(&binding, slot);
        if tables[ti].distinct_values(col).is_empty() {
            return Err(BindFailure::EmptyColumn(slot));
        }
    }

    // AGG slots: COUNT is the only aggregate over '*'; column arguments are
    // NUMBER columns by construction.
    for (&slot, args) in &plan.aggs {
        let candidates: Vec<AggFn> = if args.iter().all(Option::is_some) {
            AggFn::ALL.to_vec()
        } else {
            vec![AggFn::Count]
        };
        let (f, phrase) = choose_lexical(slot, candidates, LexTerminal::Agg, lexicon, rng)?;
        binding.insert(slot, Bound::Agg { terminal: f, phrase });
    }

    // OP slots.
    for (&slot, ctxs) in &plan.ops {
        let mut allowed: Option<BTreeSet<CompareOp>> = None;
        for ctx in ctxs {
            let (numeric, textual) = match &ctx.lhs {
                Lhs::Column(c) => {
                    let (_, _, ty) = column_of(&binding, *c);
                    (ty == ColumnType::Number, ty != ColumnType::Number)
                }
                Lhs::Agg { .. } => (true, false),
            };
            let here: BTreeSet<CompareOp> = op_candidates(ctx, numeric, textual).into_iter().collect();
            allowed = Some(match allowed {
                None => here,
                Some(prev) => prev.intersection(&here).copied().collect(),
            });
        }
        let candidates: Vec<CompareOp> = allowed.unwrap_or_default().into_iter().collect();
        let (op, phrase) = choose_lexical(slot, candidates, LexTerminal::Op, lexicon, rng)?;
        binding.insert(slot, Bound::Op { terminal: op, phrase });
    }

    for &slot in &plan.sorts {
        let (d, phrase) = choose_lexical(
            slot,
            vec![SortDir::Asc, SortDir::Desc],
            LexTerminal::Sort,
            lexicon,
            rng,
        )?;
        binding.insert(slot, Bound::Sort { terminal: d, phrase });
    }

    // VALUE slots.
    let resolved_op = |binding: &Binding, op: &Slotted<CompareOp>| match op {
        Slotted::Fixed(o) => *o,
        Slotted::Slot(s) => match &binding[s] {
            Bound::Op { terminal, .. } => *terminal,
            _ => unreachable!("op slot bound to an operator"),
        },
    };
    let resolved_agg = |binding: &Binding, f: &Slotted<AggFn>| match f {
        Slotted::Fixed(a) => *a,
        Slotted::Slot(s) => match &binding[s] {
            Bound::Agg { terminal, .. } => *terminal,
            _ => unreachable!("agg slot bound to an aggregate"),
        },
    };
    for (&slot, ctxs) in &plan.values {
        if binding.contains_key(&slot) {
            continue;
        }
        if ctxs.len() > 1 {
            // A repeated VALUE slot must be one cell that every context accepts.
            let mut common: Option<Vec<(String, ColumnType)>> = None;
            for ctx in ctxs {
                let ValueContext::Compare { column, op } = ctx else {
                    return Err(BindFailure::NoValue(slot));
                };
                if resolved_op(&binding, op) == CompareOp::Like {
                    return Err(BindFailure::NoValue(slot));
                }
                let (ti, col, ty) = column_of(&binding, *column);
                let cells: Vec<(String, ColumnType)> = tables[ti]
                    .distinct_values(col)
                    .into_iter()
                    .map(|c| (c.to_string(), ty))
                    .collect();
                common = Some(match common {
                    None => cells,
                    Some(prev) => prev
                        .into_iter()
                        .filter(|(c, _)| cells.iter().any(|(d, _)| d == c))
                        .collect(),
                });
            }
            let (cell, ty) = common
                .unwrap_or_default()
                .choose(rng)
                .cloned()
                .ok_or(BindFailure::NoValue(slot))?;
            binding.insert(
                slot,
                Bound::Value {
                    literal: literal_for(&cell, ty),
                    surface: cell,
                },
            );
            continue;
        }
        match &ctxs[0] {
            ValueContext::Compare { column, op } => {
                let (ti, col, ty) = column_of(&binding, *column);
                let cells = tables[ti].distinct_values(col);
                let &cell = cells.choose(rng).ok_or(BindFailure::EmptyColumn(*column))?;
                let bound = if resolved_op(&binding, op) == CompareOp::Like {
                    let (pattern, core) = like_pattern(cell, rng);
                    Bound::Value {
                        literal: Literal::Text(pattern),
                        surface: core,
                    }
                } else {
                    Bound::Value {
                        literal: literal_for(cell, ty),
                        surface: cell.to_string(),
                    }
                };
                binding.insert(slot, bound);
            }
            ValueContext::Range { column, low, high } => {
                let exclusive = |s: &SlotName| plan.values.get(s).map_or(0, Vec::len) == 1;
                if !exclusive(low) || !exclusive(high) || low == high {
                    return Err(BindFailure::NoValue(slot));
                }
                let (ti, col, ty) = column_of(&binding, *column);
                let numeric: Vec<(&str, f64)> = tables[ti]
                    .distinct_values(col)
                    .into_iter()
                    .filter_map(|c| numeric_value(c).map(|v| (c, v)))
                    .collect();
                if numeric.is_empty() {
                    return Err(BindFailure::NoValue(slot));
                }
                let a = numeric[rng.gen_range(0..numeric.len())];
                let b = numeric[rng.gen_range(0..numeric.len())];
                let (lo, hi) = if b.1 < a.1 { (b, a) } else { (a, b) };
                for (s, (cell, _)) in [(*low, lo), (*high, hi)] {
                    binding.insert(
                        s,
                        Bound::Value {
                            literal: literal_for(cell, ty),
                            surface: cell.to_string(),
                        },
                    );
                }
            }
            ValueContext::Aggregate { func, column } => {
                let f = resolved_agg(&binding, func);
                let bound = match (f, column) {
                    (AggFn::Count, _) | (_, None) => small_int(rng),
                    (_, Some(c)) => {
                        let (ti, col, ty) = column_of(&binding, *c);
                        let cells = tables[ti].distinct_values(col);
                        let &cell = cells.choose(rng).ok_or(BindFailure::EmptyColumn(*c))?;
                        Bound::Value {
                            literal: literal_for(cell, ty),
                            surface: cell.to_string(),
                        }
                    }
                };
                binding.insert(slot, bound);
            }
            ValueContext::Limit => {
                binding.insert(slot, small_int(rng));
            }
        }
    }

    Ok(BoundRule { binding, tables })
}

/// Terminal bindings for substitution.
pub fn terminals(binding: &Binding) -> BTreeMap<SlotName, Terminal> {
    binding.iter().map(|(k, v)| (*k, v.terminal())).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("question template slot {0} is unbound")]
pub struct UnboundSlot(pub SlotName);

/// Renders a question: words joined by single spaces, slots replaced by
/// their surface forms.
pub fn render_question(nl: &NlTemplate, binding: &Binding) -> Result<String, UnboundSlot> {
    let mut parts = Vec::with_capacity(nl.tokens.len());
    for t in &nl.tokens {
        match t {
            NlToken::Word(w) => parts.push(w.as_str()),
            NlToken::Slot(s) => parts.push(binding.get(s).ok_or(UnboundSlot(*s))?.surface()),
        }
    }
    Ok(parts.join(" "))
}

#[derive(Debug, Error)]
pub enum RealizeError {
    #[error(transparent)]
    Substitute(#[from] SubstituteError),
    #[error(transparent)]
    Question(#[from] UnboundSlot),
    #[error(transparent)]
    Label(#[from] LabelError),
}

/// Turns a bound rule into a labeled example.
pub fn realize(
    id: String,
    rule: &ProductionRule,
    nl: &NlTemplate,
    bound: &BoundRule<'_>,
) -> Result<SynthExample, RealizeError> {
    let query: Query = substitute_slots(&rule.sql, &terminals(&bound.binding))?;
    let question = render_question(nl, &bound.binding)?;
    let schema = bound.schema();
    let labels = label_columns(&query, &schema)?;
    let table_ids = if bound.tables.len() > 1 {
        schema.table_ids()
    } else {
        Vec::new()
    };
    Ok(SynthExample {
        id,
        question,
        sql: render_sql(&query),
        table_id: bound.tables[0].table_id.clone(),
        table_ids,
        rule_id: rule.rule_id.clone(),
        binding: bound.binding.clone(),
        labels,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RuleEligibility {
    pub rule_id: String,
    pub eligible_tables: usize,
    pub total_tables: usize,
}

/// Structural eligibility: enough usable and NUMBER columns per table, and a
/// database with enough tables for multi-table rules. Value availability is
/// not checked.
pub fn eligibility(grammar: &Grammar, corpus: &Corpus) -> Vec<RuleEligibility> {
    grammar
        .rules
        .iter()
        .map(|rule| {
            let per_table = |slot: &SlotName| {
                let cols: Vec<&SlotName> = rule
                    .plan
                    .column_tables
                    .iter()
                    .filter(|(_, t)| *t == slot)
                    .map(|(c, _)| c)
                    .collect();
                let numeric = cols
                    .iter()
                    .filter(|c| rule.requires_numeric.contains(c))
                    .count();
                (cols.len(), numeric)
            };
            let fits = |t: &TableSchema, (need, numeric): (usize, usize)| {
                let usable = usable_columns(t);
                let nums = usable
                    .iter()
                    .filter(|&&i| t.columns[i].col_type == ColumnType::Number)
                    .count();
                usable.len() >= need && nums >= numeric
            };
            let eligible = corpus
                .tables()
                .iter()
                .filter(|t| {
                    if !fits(t, per_table(&rule.plan.tables[0])) {
                        return false;
                    }
                    if rule.plan.tables.len() == 1 {
                        return true;
                    }
                    let names: BTreeSet<&str> = corpus
                        .db_members(t)
                        .iter()
                        .filter(|m| m.table_id != t.table_id && m.name != t.name)
                        .map(|m| m.name.as_str())
                        .collect();
                    t.db_id.is_some() && names.len() + 1 >= rule.plan.tables.len()
                })
                .count();
            RuleEligibility {
                rule_id: rule.rule_id.clone(),
                eligible_tables: eligible,
                total_tables: corpus.len(),
            }
        })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct FailedIndex {
    pub index: usize,
    pub rule_id: String,
    pub reasons: BTreeMap<String, usize>,
}

/// Generation ran out of retries for some indices.
#[derive(Debug, Error)]
#[error("generated {} of {requested} examples; {} indices exhausted the retry budget", examples.len(), failed.len())]
pub struct PartialOutput {
    pub requested: usize,
    pub examples: Vec<SynthExample>,
    pub failed: Vec<FailedIndex>,
    pub eligibility: Vec<RuleEligibility>,
}

impl PartialOutput {
    /// Rules no table in the corpus can host.
    pub fn ineligible_rules(&self) -> Vec<&str> {
        self.eligibility
            .iter()
            .filter(|e| e.eligible_tables == 0)
            .map(|e| e.rule_id.as_str())
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct GenerateOptions {
    pub n: usize,
    pub seed: u64,
    pub workers: usize,
    pub retry_budget: usize,
}

impl Default for GenerateOptions {
    fn default() -> Self {
        Self {
            n: 0,
            seed: 0,
            workers: 1,
            retry_budget: DEFAULT_RETRY_BUDGET,
        }
    }
}

pub fn example_id(index: usize) -> String {
    format!("syn-{index:07}")
}

fn generate_one(
    grammar: &Grammar,
    weights: &WeightedIndex<f64>,
    corpus: &Corpus,
    opts: &GenerateOptions,
    index: usize,
) -> Result<SynthExample, FailedIndex> {
    let mut rng = rng::indexed_stream(opts.seed, "synth", index as u64);
    let rule = &grammar.rules[weights.sample(&mut rng)];
    let nl = rule.nl.choose(&mut rng).expect("rules have a question template");
    let tables = corpus.tables();
    let mut reasons: BTreeMap<String, usize> = BTreeMap::new();
    if !tables.is_empty() {
        for _ in 0..opts.retry_budget {
            let table = &tables[rng.gen_range(0..tables.len())];
            let companions = if rule.plan.is_multi_table() {
                corpus.db_members(table)
            } else {
                Vec::new()
            };
            match bind_rule(rule, &grammar.lexicon, table, &companions, &mut rng) {
                Ok(bound) => match realize(example_id(index), rule, nl, &bound) {
                    Ok(ex) => return Ok(ex),
                    Err(e) => *reasons.entry(format!("realize: {e}")).or_default() += 1,
                },
                Err(f) => *reasons.entry(f.class().to_string()).or_default() += 1,
            }
        }
    } else {
        reasons.insert("empty_corpus".into(), 1);
    }
    Err(FailedIndex {
        index,
        rule_id: rule.rule_id.clone(),
        reasons,
    })
}

/// Generates `opts.n` examples. Each index draws a rule by weight, then up to
/// `retry_budget` tables uniformly. Output depends only on the inputs and
/// seed, not on the worker count.
pub fn generate(
    grammar: &Grammar,
    corpus: &Corpus,
    opts: &GenerateOptions,
) -> Result<Vec<SynthExample>, PartialOutput> {
    if opts.n == 0 {
        return Ok(Vec::new());
    }
    let weights = WeightedIndex::new(grammar.rules.iter().map(|r| r.weight))
        .expect("validated grammars have positive weights");
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.workers.max(1))
        .build()
        .expect("thread pool");
    let results: Vec<Result<SynthExample, FailedIndex>> = pool.install(|| {
        (0..opts.n)
            .into_par_iter()
            .map(|i| generate_one(grammar, &weights, corpus, opts, i))
            .collect()
    });
    let mut examples = Vec::with_capacity(opts.n);
    let mut failed = Vec::new();
    for r in results {
        match r {
            Ok(e) => examples.push(e),
            Err(f) => failed.push(f),
        }
    }
    if failed.is_empty() {
        Ok(examples)
    } else {
        Err(PartialOutput {
            requested: opts.n,
            examples,
            failed,
            eligibility: eligibility(grammar, corpus),
        })
    }
}

/// True if `text` contains a token that looks like a slot.
pub fn has_slot_token(text: &str) -> bool {
    text.split_whitespace().any(|w| {
        SlotKind::ALL.iter().any(|k| {
            w.strip_prefix(k.as_str())
                .is_some_and(|rest| !rest.is_empty() && rest.bytes().all(|b| b.is_ascii_digit()))
        })
    })
}
