//! Synchronous grammar: aligned question/SQL production rules, the terminal
//! lexicon, and the plain-text grammar file format.
//!
//! ```text
//! # comment
//! [lexicon]
//! MAX: maximum | the largest
//! <=: no more than | no above
//!
//! [rule]
//! id: count_by_group
//! weight: 1
//! sql: SELECT COLUMN0 , COUNT ( * ) WHERE COLUMN1 OP0 VALUE0 GROUP BY COLUMN0
//! nl: For each COLUMN0 , return how many times TABLE0 with COLUMN1 OP0 VALUE0 ?
//! ```
//!
//! A rule may carry several `nl:` lines; each is an alternative question
//! template for the same SQL template. Templates that elide FROM range over a
//! single implicit table, `TABLE0`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use thiserror::Error;

use crate::sql::{
    parse_sql, render_sql, slot_occurrences, AggArg, AggFn, ColumnRef, CompareOp, Condition, Expr,
    Literal, OperandShape, Operand, ParseError, ParseMode, Predicate, Query, Select, SlotKind,
    SlotName, Slotted, SortDir,
};

/// A terminal that has natural-language realizations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum LexTerminal {
    Agg(AggFn),
    Op(CompareOp),
    Sort(SortDir),
}

impl LexTerminal {
    pub fn parse(key: &str) -> Option<Self> {
        let key = key.trim();
        if let Some(a) = AggFn::from_keyword(key) {
            return Some(LexTerminal::Agg(a));
        }
        if key.eq_ignore_ascii_case("ASC") {
            return Some(LexTerminal::Sort(SortDir::Asc));
        }
        if key.eq_ignore_ascii_case("DESC") {
            return Some(LexTerminal::Sort(SortDir::Desc));
        }
        let collapsed = key.split_whitespace().collect::<Vec<_>>().join(" ");
        CompareOp::from_symbol(&collapsed).map(LexTerminal::Op)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            LexTerminal::Agg(a) => a.as_str(),
            LexTerminal::Op(o) => o.as_str(),
            LexTerminal::Sort(s) => s.as_str(),
        }
    }
}

impl fmt::Display for LexTerminal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("no natural-language phrase for terminal {0}")]
pub struct LexiconError(pub LexTerminal);

/// Maps SQL terminals to their natural-language phrases.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TerminalLexicon {
    pub entries: BTreeMap<LexTerminal, Vec<String>>,
}

impl TerminalLexicon {
    pub fn insert(&mut self, terminal: LexTerminal, phrases: Vec<String>) {
        self.entries.entry(terminal).or_default().extend(phrases);
    }

    pub fn has(&self, terminal: LexTerminal) -> bool {
        self.entries.get(&terminal).is_some_and(|p| !p.is_empty())
    }
}

/// Picks one phrase for `terminal` uniformly at random.
pub fn realize_phrase<'a, R: Rng + ?Sized>(
    terminal: LexTerminal,
    lexicon: &'a TerminalLexicon,
    rng: &mut R,
) -> Result<&'a str, LexiconError> {
    lexicon
        .entries
        .get(&terminal)
        .and_then(|p| p.choose(rng))
        .map(String::as_str)
        .ok_or(LexiconError(terminal))
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum NlToken {
    Word(String),
    Slot(SlotName),
}

/// A question template: literal words interleaved with slots.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct NlTemplate {
    pub tokens: Vec<NlToken>,
}

impl NlTemplate {
    pub fn parse(text: &str) -> Self {
        let tokens = text
            .split_whitespace()
            .map(|w| match SlotName::parse(w) {
                Some(s) => NlToken::Slot(s),
                None => NlToken::Word(w.to_string()),
            })
            .collect();
        Self { tokens }
    }

    pub fn slots(&self) -> impl Iterator<Item = SlotName> + '_ {
        self.tokens.iter().filter_map(|t| match t {
            NlToken::Slot(s) => Some(*s),
            NlToken::Word(_) => None,
        })
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

impl fmt::Display for NlTemplate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, t) in self.tokens.iter().enumerate() {
            if i > 0 {
                f.write_char(' ')?;
            }
            match t {
                NlToken::Word(w) => f.write_str(w)?,
                NlToken::Slot(s) => write!(f, "{s}")?,
            }
        }
        Ok(())
    }
}

/// What a rule violates.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Violation {
    #[error("sql template does not parse: {0}")]
    SqlParse(ParseError),
    #[error("no natural-language template")]
    NoQuestion,
    #[error("slot {0} appears in the question template but not in the SQL template")]
    SlotNotInSql(SlotName),
    #[error("weight must be a positive number, got {0:?}")]
    BadWeight(String),
    #[error("duplicate rule id")]
    DuplicateId,
    #[error("concrete identifier {0:?} in a template; use TABLE/COLUMN slots")]
    ConcreteIdentifier(String),
    #[error("column {0} must be qualified by a TABLE slot when several tables are in scope")]
    UnqualifiedColumn(SlotName),
    #[error("column {0} is qualified by different tables")]
    InconsistentQualifier(SlotName),
    #[error("table slots must be numbered TABLE0..TABLE{0} without gaps")]
    TableOrdinals(usize),
    #[error("fixed literal {0:?} compared against a column cannot be grounded; use a VALUE slot")]
    FixedConditionValue(String),
    #[error("'*' cannot be compared")]
    StarComparison,
    #[error("slot {0} has no lexicon-backed terminal it could take")]
    NoLexiconTerminal(SlotName),
}

/// Left-hand side of a comparison, as the binder needs to know it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Lhs {
    Column(SlotName),
    Agg {
        func: Slotted<AggFn>,
        column: Option<SlotName>,
    },
}

/// Where a VALUE slot sits.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ValueContext {
    /// `column op VALUE`: a cell of the column (a pattern when op is LIKE).
    Compare {
        column: SlotName,
        op: Slotted<CompareOp>,
    },
    /// One end of `column BETWEEN low AND high`.
    Range {
        column: SlotName,
        low: SlotName,
        high: SlotName,
    },
    /// Threshold on an aggregate, e.g. `HAVING COUNT ( * ) >= VALUE0`.
    Aggregate {
        func: Slotted<AggFn>,
        column: Option<SlotName>,
    },
    Limit,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OpContext {
    pub lhs: Lhs,
    pub shape: OperandShape,
    /// For subquery operands: whether the subquery projects an aggregate.
    pub scalar_subquery: bool,
}

/// Everything the binder needs to know about a rule's slots, derived from its
/// SQL template.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RulePlan {
    /// TABLE slots in ordinal order.
    pub tables: Vec<SlotName>,
    /// FROM was elided, so `TABLE0` is implicit.
    pub implicit_table: bool,
    /// COLUMN slot to the TABLE slot it belongs to.
    pub column_tables: BTreeMap<SlotName, SlotName>,
    /// COLUMN slots that appear as condition left-hand sides against values.
    pub condition_columns: BTreeSet<SlotName>,
    pub aggs: BTreeMap<SlotName, Vec<Option<SlotName>>>,
    pub ops: BTreeMap<SlotName, Vec<OpContext>>,
    pub values: BTreeMap<SlotName, Vec<ValueContext>>,
    pub sorts: BTreeSet<SlotName>,
    pub requires_numeric: BTreeSet<SlotName>,
}

impl RulePlan {
    pub fn is_multi_table(&self) -> bool {
        self.tables.len() > 1
    }

    /// Slots the SQL side makes available, including the implicit table.
    pub fn available_slots(&self, sql: &Query) -> BTreeSet<SlotName> {
        let mut s: BTreeSet<_> = slot_occurrences(sql).into_iter().collect();
        if self.implicit_table {
            s.insert(SlotName::new(SlotKind::Table, 0));
        }
        s
    }
}

/// Operators an OP slot may take for a left-hand side of the given type.
pub fn op_candidates(ctx: &OpContext, lhs_numeric: bool, lhs_textual: bool) -> Vec<CompareOp> {
    use CompareOp::*;
    let mut ops = Vec::new();
    match ctx.shape {
        OperandShape::Range => {
            if lhs_numeric {
                ops.push(Between);
            }
        }
        OperandShape::Value => {
            ops.extend([Eq, Ne]);
            if lhs_numeric {
                ops.extend([Lt, Le, Gt, Ge]);
            }
            if lhs_textual {
                ops.push(Like);
            }
        }
        OperandShape::Subquery if ctx.scalar_subquery => {
            ops.extend([Eq, Ne]);
            if lhs_numeric {
                ops.extend([Lt, Le, Gt, Ge]);
            }
        }
        OperandShape::Subquery => ops.extend([In, NotIn]),
    }
    ops
}

struct Analyzer {
    plan: RulePlan,
    table_slots: BTreeSet<SlotName>,
}

impl Analyzer {
    fn table_name(&mut self, t: &Slotted<String>) -> Result<SlotName, Violation> {
        match t {
            Slotted::Slot(s) => {
                self.table_slots.insert(*s);
                Ok(*s)
            }
            Slotted::Fixed(name) => Err(Violation::ConcreteIdentifier(name.clone())),
        }
    }

    fn column(&mut self, c: &ColumnRef, scope: &[SlotName]) -> Result<SlotName, Violation> {
        let col = match &c.column {
            Slotted::Slot(s) => *s,
            Slotted::Fixed(name) => return Err(Violation::ConcreteIdentifier(name.clone())),
        };
        let table = match &c.table {
            Some(t) => self.table_name(t)?,
            None if scope.len() == 1 => scope[0],
            None => return Err(Violation::UnqualifiedColumn(col)),
        };
        match self.plan.column_tables.insert(col, table) {
            Some(prev) if prev != table => Err(Violation::InconsistentQualifier(col)),
            _ => Ok(col),
        }
    }

    fn expr(&mut self, e: &Expr, scope: &[SlotName]) -> Result<Option<Lhs>, Violation> {
        match e {
            Expr::Star => Ok(None),
            Expr::Column(c) => Ok(Some(Lhs::Column(self.column(c, scope)?))),
            Expr::Agg { func, arg, .. } => {
                let column = match arg {
                    AggArg::Star => None,
                    AggArg::Column(c) => Some(self.column(c, scope)?),
                };
                if let Some(col) = column {
                    let numeric = match func {
                        Slotted::Slot(_) => true,
                        Slotted::Fixed(f) => f.is_numeric(),
                    };
                    if numeric {
                        self.plan.requires_numeric.insert(col);
                    }
                }
                if let Slotted::Slot(s) = func {
                    self.plan.aggs.entry(*s).or_default().push(column);
                }
                Ok(Some(Lhs::Agg {
                    func: func.clone(),
                    column,
                }))
            }
        }
    }

    fn value(&mut self, v: &Slotted<Literal>, ctx: ValueContext) -> Result<(), Violation> {
        match v {
            Slotted::Slot(s) => {
                self.plan.values.entry(*s).or_default().push(ctx);
                Ok(())
            }
            Slotted::Fixed(lit) => match ctx {
                ValueContext::Compare { .. } | ValueContext::Range { .. } => {
                    Err(Violation::FixedConditionValue(lit.text().to_string()))
                }
                _ => Ok(()),
            },
        }
    }

    fn condition(&mut self, cond: &Condition, scope: &[SlotName]) -> Result<(), Violation> {
        let lhs = self.expr(&cond.lhs, scope)?.ok_or(Violation::StarComparison)?;
        let shape = OperandShape::of(&cond.rhs);
        if let (Lhs::Column(c), Slotted::Fixed(op)) = (&lhs, &cond.op) {
            if op.is_arithmetic() {
                self.plan.requires_numeric.insert(*c);
            }
        }
        let scalar_subquery = match &cond.rhs {
            Operand::Subquery(q) => matches!(
                q.leading_select().projections.first(),
                Some(Expr::Agg { .. })
            ),
            _ => false,
        };
        if let Slotted::Slot(s) = &cond.op {
            self.plan.ops.entry(*s).or_default().push(OpContext {
                lhs: lhs.clone(),
                shape,
                scalar_subquery,
            });
        }
        match (&cond.rhs, &lhs) {
            (Operand::Value(v), Lhs::Column(c)) => {
                self.plan.condition_columns.insert(*c);
                self.value(
                    v,
                    ValueContext::Compare {
                        column: *c,
                        op: cond.op.clone(),
                    },
                )
            }
            (Operand::Range(low, high), Lhs::Column(c)) => {
                self.plan.condition_columns.insert(*c);
                // A range needs ordered ends, so both ends come from one numeric column.
                self.plan.requires_numeric.insert(*c);
                let (l, h) = match (low.slot(), high.slot()) {
                    (Some(l), Some(h)) => (l, h),
                    _ => {
                        let lit = low.fixed().or(high.fixed()).map(|l| l.text().to_string());
                        return Err(Violation::FixedConditionValue(lit.unwrap_or_default()));
                    }
                };
                let ctx = ValueContext::Range {
                    column: *c,
                    low: l,
                    high: h,
                };
                self.value(low, ctx.clone())?;
                self.value(high, ctx)
            }
            (Operand::Value(v), Lhs::Agg { func, column }) => self.value(
                v,
                ValueContext::Aggregate {
                    func: func.clone(),
                    column: *column,
                },
            ),
            (Operand::Range(low, high), Lhs::Agg { func, column }) => {
                let ctx = ValueContext::Aggregate {
                    func: func.clone(),
                    column: *column,
                };
                self.value(low, ctx.clone())?;
                self.value(high, ctx)
            }
            (Operand::Subquery(q), _) => self.query(q, scope),
        }
    }

    fn predicate(&mut self, p: &Predicate, scope: &[SlotName]) -> Result<(), Violation> {
        p.conditions().try_for_each(|c| self.condition(c, scope))
    }

    fn select(&mut self, s: &Select, outer: &[SlotName]) -> Result<(), Violation> {
        let scope: Vec<SlotName> = match &s.from {
            Some(from) => from
                .tables()
                .map(|t| self.table_name(t))
                .collect::<Result<_, _>>()?,
            None => outer.to_vec(),
        };
        for p in &s.projections {
            self.expr(p, &scope)?;
        }
        if let Some(join) = s.from.as_ref().and_then(|f| f.join.as_ref()) {
            self.column(&join.left, &scope)?;
            self.column(&join.right, &scope)?;
        }
        if let Some(p) = &s.filter {
            self.predicate(p, &scope)?;
        }
        for c in &s.group_by {
            self.column(c, &scope)?;
        }
        if let Some(p) = &s.having {
            self.predicate(p, &scope)?;
        }
        for item in &s.order_by {
            self.expr(&item.expr, &scope)?;
            if let Some(Slotted::Slot(sc)) = &item.dir {
                self.plan.sorts.insert(*sc);
            }
        }
        if let Some(limit) = &s.limit {
            self.value(limit, ValueContext::Limit)?;
        }
        Ok(())
    }

    fn query(&mut self, q: &Query, scope: &[SlotName]) -> Result<(), Violation> {
        match q {
            Query::Select(s) => self.select(s, scope),
            Query::SetOp { left, right, .. } => {
                self.query(left, scope)?;
                self.query(right, scope)
            }
        }
    }
}

/// Derives the binding plan for a SQL template.
pub fn analyze_template(sql: &Query) -> Result<RulePlan, Violation> {
    let table0 = SlotName::new(SlotKind::Table, 0);
    let has_from = slot_occurrences(sql).iter().any(|s| s.kind == SlotKind::Table)
        || query_has_from(sql);
    let outer: Vec<SlotName> = if has_from { vec![] } else { vec![table0] };
    let mut a = Analyzer {
        plan: RulePlan::default(),
        table_slots: BTreeSet::new(),
    };
    a.query(sql, &outer)?;
    let mut plan = a.plan;
    if has_from {
        plan.tables = a.table_slots.into_iter().collect();
        let contiguous = plan
            .tables
            .iter()
            .enumerate()
            .all(|(i, s)| s.ordinal as usize == i);
        if !contiguous || plan.tables.is_empty() {
            return Err(Violation::TableOrdinals(plan.tables.len().saturating_sub(1)));
        }
    } else {
        plan.tables = vec![table0];
        plan.implicit_table = true;
    }
    Ok(plan)
}

fn query_has_from(q: &Query) -> bool {
    match q {
        Query::Select(s) => s.from.is_some(),
        Query::SetOp { left, right, .. } => query_has_from(left) || query_has_from(right),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProductionRule {
    pub rule_id: String,
    pub nl: Vec<NlTemplate>,
    pub sql: Query,
    pub weight: f64,
    /// Number of distinct COLUMN slots.
    pub min_columns: usize,
    /// COLUMN slots that must bind NUMBER columns.
    pub requires_numeric: BTreeSet<SlotName>,
    pub plan: RulePlan,
}

impl ProductionRule {
    /// Builds a rule and derives its constraints. Fails on any invariant
    /// violation except lexicon coverage, which needs the whole grammar.
    pub fn new(
        rule_id: impl Into<String>,
        mut nl: Vec<NlTemplate>,
        sql: Query,
        weight: f64,
    ) -> Result<Self, Violation> {
        if !(weight.is_finite() && weight > 0.0) {
            return Err(Violation::BadWeight(weight.to_string()));
        }
        nl.retain(|t| !t.is_empty());
        let rule = derive_constraints(ProductionRule {
            rule_id: rule_id.into(),
            nl,
            sql,
            weight,
            min_columns: 0,
            requires_numeric: BTreeSet::new(),
            plan: RulePlan::default(),
        })?;
        if rule.nl.is_empty() {
            return Err(Violation::NoQuestion);
        }
        let available = rule.plan.available_slots(&rule.sql);
        for t in &rule.nl {
            if let Some(missing) = t.slots().find(|s| !available.contains(s)) {
                return Err(Violation::SlotNotInSql(missing));
            }
        }
        Ok(rule)
    }

    pub fn sql_text(&self) -> String {
        render_sql(&self.sql)
    }

    pub fn column_slots(&self) -> impl Iterator<Item = SlotName> + '_ {
        self.plan.column_tables.keys().copied()
    }
}

/// Recomputes `min_columns`, `requires_numeric` and the binding plan from the
/// SQL template.
pub fn derive_constraints(mut rule: ProductionRule) -> Result<ProductionRule, Violation> {
    let plan = analyze_template(&rule.sql)?;
    rule.min_columns = plan.column_tables.len();
    rule.requires_numeric = plan.requires_numeric.clone();
    rule.plan = plan;
    Ok(rule)
}

#[derive(Debug, Error)]
pub enum GrammarError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("rule {rule}: {violation}")]
    Rule { rule: String, violation: Violation },
    #[error("grammar has no rules")]
    Empty,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Grammar {
    pub lexicon: TerminalLexicon,
    pub rules: Vec<ProductionRule>,
}

impl Grammar {
    pub fn rule(&self, rule_id: &str) -> Option<&ProductionRule> {
        self.rules.iter().find(|r| r.rule_id == rule_id)
    }

    /// Checks lexicon coverage: every AGG/OP/SC slot must have at least one
    /// phrase-backed terminal it could bind to.
    pub fn check_coverage(&self) -> Result<(), GrammarError> {
        for rule in &self.rules {
            let fail = |slot| GrammarError::Rule {
                rule: rule.rule_id.clone(),
                violation: Violation::NoLexiconTerminal(slot),
            };
            for (slot, args) in &rule.plan.aggs {
                let any = AggFn::ALL.iter().any(|&f| {
                    (f == AggFn::Count || args.iter().all(Option::is_some))
                        && self.lexicon.has(LexTerminal::Agg(f))
                });
                if !any {
                    return Err(fail(*slot));
                }
            }
            for (slot, ctxs) in &rule.plan.ops {
                let any = CompareOp::ALL.iter().any(|&op| {
                    self.lexicon.has(LexTerminal::Op(op))
                        && ctxs.iter().all(|c| op_candidates(c, true, true).contains(&op))
                });
                if !any {
                    return Err(fail(*slot));
                }
            }
            for slot in &rule.plan.sorts {
                let any = [SortDir::Asc, SortDir::Desc]
                    .iter()
                    .any(|&d| self.lexicon.has(LexTerminal::Sort(d)));
                if !any {
                    return Err(fail(*slot));
                }
            }
        }
        Ok(())
    }

    /// Serializes to the grammar text format; loading the output yields an
    /// equal grammar.
    pub fn to_text(&self) -> String {
        let mut out = lexicon_text(&self.lexicon);
        for rule in &self.rules {
            let _ = writeln!(out, "\n[rule]\nid: {}\nweight: {}", rule.rule_id, rule.weight);
            let _ = writeln!(out, "sql: {}", rule.sql_text());
            for nl in &rule.nl {
                let _ = writeln!(out, "nl: {nl}");
            }
        }
        out
    }
}

/// The `[lexicon]` section for `lexicon`.
pub fn lexicon_text(lexicon: &TerminalLexicon) -> String {
    let mut out = String::from("[lexicon]\n");
    for (term, phrases) in &lexicon.entries {
        let _ = writeln!(out, "{term}: {}", phrases.join(" | "));
    }
    out
}

#[derive(Default)]
struct RuleDraft {
    line: usize,
    id: Option<String>,
    sql: Option<String>,
    nl: Vec<NlTemplate>,
    weight: Option<String>,
}

impl RuleDraft {
    fn finish(self) -> Result<ProductionRule, GrammarError> {
        let rule = self.id.clone().ok_or(GrammarError::Syntax {
            line: self.line,
            message: "rule without id".into(),
        })?;
        let fail = |violation| GrammarError::Rule {
            rule: rule.clone(),
            violation,
        };
        let sql_text = self.sql.ok_or_else(|| GrammarError::Syntax {
            line: self.line,
            message: format!("rule {rule} has no sql line"),
        })?;
        let sql = parse_sql(&sql_text, ParseMode::Template).map_err(|e| fail(Violation::SqlParse(e)))?;
        let weight = match self.weight {
            None => 1.0,
            Some(w) => w
                .trim()
                .parse::<f64>()
                .map_err(|_| fail(Violation::BadWeight(w.clone())))?,
        };
        ProductionRule::new(rule.clone(), self.nl, sql, weight).map_err(fail)
    }
}

/// Parses and validates grammar text.
pub fn parse_grammar(text: &str) -> Result<Grammar, GrammarError> {
    #[derive(PartialEq)]
    enum Section {
        None,
        Lexicon,
        Rule,
    }
    let mut section = Section::None;
    let mut lexicon = TerminalLexicon::default();
    let mut drafts: Vec<RuleDraft> = Vec::new();

    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let syntax = |message: String| GrammarError::Syntax { line, message };
        match trimmed {
            "[lexicon]" => {
                section = Section::Lexicon;
                continue;
            }
            "[rule]" => {
                section = Section::Rule;
                drafts.push(RuleDraft {
                    line,
                    ..Default::default()
                });
                continue;
            }
            _ => {}
        }
        let (key, value) = trimmed
            .split_once(':')
            .ok_or_else(|| syntax(format!("expected `key: value`, got {trimmed:?}")))?;
        let value = value.trim();
        match section {
            Section::None => return Err(syntax("content before any [lexicon] or [rule] section".into())),
            Section::Lexicon => {
                let term = LexTerminal::parse(key)
                    .ok_or_else(|| syntax(format!("unknown terminal {:?}", key.trim())))?;
                let phrases: Vec<String> = value
                    .split('|')
                    .map(|p| p.split_whitespace().collect::<Vec<_>>().join(" "))
                    .filter(|p| !p.is_empty())
                    .collect();
                if phrases.is_empty() {
                    return Err(syntax(format!("terminal {term} has no phrases")));
                }
                lexicon.insert(term, phrases);
            }
            Section::Rule => {
                let draft = drafts.last_mut().expect("rule section has a draft");
                let once = |slot: &mut Option<String>, what: &str| {
                    if slot.replace(value.to_string()).is_some() {
                        Err(syntax(format!("duplicate `{what}:` line")))
                    } else {
                        Ok(())
                    }
                };
                match key.trim() {
                    "id" => once(&mut draft.id, "id")?,
                    "sql" => once(&mut draft.sql, "sql")?,
                    "weight" => once(&mut draft.weight, "weight")?,
                    "nl" => {
                        let t = NlTemplate::parse(value);
                        if !t.is_empty() {
                            draft.nl.push(t);
                        }
                    }
                    other => return Err(syntax(format!("unknown rule key {other:?}"))),
                }
            }
        }
    }

    let mut rules: Vec<ProductionRule> = Vec::with_capacity(drafts.len());
    for d in drafts {
        let rule = d.finish()?;
        if rules.iter().any(|r| r.rule_id == rule.rule_id) {
            return Err(GrammarError::Rule {
                rule: rule.rule_id,
                violation: Violation::DuplicateId,
            });
        }
        rules.push(rule);
    }
    if rules.is_empty() {
        return Err(GrammarError::Empty);
    }
    let grammar = Grammar { lexicon, rules };
    grammar.check_coverage()?;
    Ok(grammar)
}

pub fn load_grammar(path: &Path) -> Result<Grammar, GrammarError> {
    let text = std::fs::read_to_string(path).map_err(|source| GrammarError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_grammar(&text)
}

/// The bundled starter grammar.
pub const STARTER_GRAMMAR: &str = include_str!("../assets/starter.grammar");

pub fn starter_grammar() -> Grammar {
    parse_grammar(STARTER_GRAMMAR).expect("bundled starter grammar is valid")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    const GOLDEN: &str = include_str!("../assets/golden.grammar");

    fn slot(s: &str) -> SlotName {
        SlotName::parse(s).unwrap()
    }

    fn rule(sql: &str, nl: &str) -> Result<ProductionRule, Violation> {
        ProductionRule::new(
            "r",
            vec![NlTemplate::parse(nl)],
            parse_sql(sql, ParseMode::Template).unwrap(),
            1.0,
        )
    }

    #[test]
    fn golden_grammar_loads() {
        let g = parse_grammar(GOLDEN).unwrap();
        assert_eq!(g.rules.len(), 2);
        assert_eq!(
            g.rules[0].sql_text(),
            "SELECT COLUMN0 , COUNT ( * ) WHERE COLUMN1 OP0 VALUE0 GROUP BY COLUMN0"
        );
        assert!(g.lexicon.entries[&LexTerminal::Agg(AggFn::Max)].contains(&"the largest".into()));
        assert!(g.lexicon.entries[&LexTerminal::Op(CompareOp::Le)].contains(&"no above".into()));
    }

    #[test]
    fn rule2_constraints() {
        let r = rule(
            "SELECT COLUMN0 , COLUMN1 WHERE COLUMN2 OP0 ( SELECT AGG0 ( COLUMN2 ) )",
            "What are the COLUMN0 and COLUMN1 of the TABLE0 whose COLUMN2 is OP0 AGG0 COLUMN2 ?",
        )
        .unwrap();
        assert_eq!(r.min_columns, 3);
        assert_eq!(r.requires_numeric, BTreeSet::from([slot("COLUMN2")]));
        assert!(r.plan.implicit_table);
    }

    #[test]
    fn simple_and_count_only_constraints() {
        let r = rule("SELECT COLUMN0", "list COLUMN0").unwrap();
        assert_eq!(r.min_columns, 1);
        assert!(r.requires_numeric.is_empty());
        let r = rule("SELECT COUNT ( * )", "how many TABLE0 ?").unwrap();
        assert_eq!(r.min_columns, 0);
        assert!(r.requires_numeric.is_empty());
        let r = rule("SELECT COLUMN0 WHERE COLUMN1 BETWEEN VALUE0 AND VALUE1", "x").unwrap();
        assert_eq!(r.requires_numeric, BTreeSet::from([slot("COLUMN1")]));
    }

    #[test]
    fn question_slot_outside_sql_is_rejected() {
        let e = rule("SELECT COLUMN0", "the COLUMN0 and COLUMN2").unwrap_err();
        assert_eq!(e, Violation::SlotNotInSql(slot("COLUMN2")));
        let text = format!(
            "{GOLDEN}\n[rule]\nid: bad\nsql: SELECT COLUMN0\nnl: show COLUMN2\n"
        );
        let err = parse_grammar(&text).unwrap_err();
        assert!(err.to_string().contains("rule bad"), "{err}");
        assert!(err.to_string().contains("COLUMN2"), "{err}");
    }

    #[test]
    fn structural_violations() {
        assert!(matches!(
            rule("SELECT name", "x"),
            Err(Violation::ConcreteIdentifier(_))
        ));
        assert!(matches!(
            rule("SELECT COLUMN0 WHERE COLUMN1 = 'x'", "x"),
            Err(Violation::FixedConditionValue(_))
        ));
        assert!(matches!(
            rule(
                "SELECT TABLE0.COLUMN0 FROM TABLE0 JOIN TABLE1 ON TABLE0.COLUMN1 = TABLE1.COLUMN2 WHERE COLUMN3 = VALUE0",
                "x"
            ),
            Err(Violation::UnqualifiedColumn(_))
        ));
        assert!(matches!(
            rule("SELECT COLUMN0 FROM TABLE1", "x"),
            Err(Violation::TableOrdinals(_))
        ));
        assert!(matches!(rule("SELECT COLUMN0", ""), Err(Violation::NoQuestion)));
        assert!(ProductionRule::new(
            "w",
            vec![NlTemplate::parse("x")],
            parse_sql("SELECT COLUMN0", ParseMode::Template).unwrap(),
            0.0
        )
        .is_err());
        // Fixed literals are fine where they are not grounded in cells.
        assert!(rule(
            "SELECT COLUMN0 GROUP BY COLUMN0 HAVING COUNT ( * ) > 1 ORDER BY COUNT ( * ) DESC LIMIT 1",
            "x"
        )
        .is_ok());
    }

    #[test]
    fn lexicon_coverage_is_checked() {
        let text = "[lexicon]\nMAX: maximum\n[rule]\nid: r\nsql: SELECT COLUMN0 WHERE COLUMN0 OP0 VALUE0\nnl: x\n";
        let err = parse_grammar(text).unwrap_err();
        assert!(matches!(
            err,
            GrammarError::Rule {
                violation: Violation::NoLexiconTerminal(_),
                ..
            }
        ));
    }

    #[test]
    fn syntax_errors_have_lines() {
        let err = parse_grammar("[lexicon]\nFOO: bar\n").unwrap_err();
        assert!(matches!(err, GrammarError::Syntax { line: 2, .. }));
        let err = parse_grammar("[rule]\nid: a\nsql: SELECT COLUMN0\nnl: x\nbogus: 1\n").unwrap_err();
        assert!(matches!(err, GrammarError::Syntax { line: 5, .. }));
        assert!(matches!(parse_grammar("# nothing\n"), Err(GrammarError::Empty)));
    }

    #[test]
    fn grammar_text_round_trips() {
        for text in [GOLDEN, STARTER_GRAMMAR] {
            let g = parse_grammar(text).unwrap();
            let again = parse_grammar(&g.to_text()).unwrap();
            assert_eq!(g, again);
            assert_eq!(g.to_text(), again.to_text());
        }
    }

    #[test]
    fn phrases_are_seeded() {
        let g = parse_grammar(GOLDEN).unwrap();
        let max = LexTerminal::Agg(AggFn::Max);
        let draw = |seed| {
            let mut r = rng::seeded(seed);
            (0..16)
                .map(|_| realize_phrase(max, &g.lexicon, &mut r).unwrap().to_string())
                .collect::<Vec<_>>()
        };
        assert_eq!(draw(3), draw(3));
        let all: BTreeSet<_> = draw(3).into_iter().collect();
        assert!(all.iter().all(|p| p == "maximum" || p == "the largest"));

        let mut single = TerminalLexicon::default();
        single.insert(LexTerminal::Op(CompareOp::Le), vec!["no more than".into()]);
        let mut r = rng::seeded(0);
        for _ in 0..5 {
            assert_eq!(
                realize_phrase(LexTerminal::Op(CompareOp::Le), &single, &mut r).unwrap(),
                "no more than"
            );
        }
        assert_eq!(
            realize_phrase(LexTerminal::Sort(SortDir::Asc), &single, &mut r),
            Err(LexiconError(LexTerminal::Sort(SortDir::Asc)))
        );
    }

    #[test]
    fn lexicon_keys() {
        assert_eq!(LexTerminal::parse("≤"), Some(LexTerminal::Op(CompareOp::Le)));
        assert_eq!(LexTerminal::parse("not  in"), Some(LexTerminal::Op(CompareOp::NotIn)));
        assert_eq!(LexTerminal::parse("desc"), Some(LexTerminal::Sort(SortDir::Desc)));
        assert_eq!(LexTerminal::parse("avg"), Some(LexTerminal::Agg(AggFn::Avg)));
        assert_eq!(LexTerminal::parse("FOO"), None);
    }
}
