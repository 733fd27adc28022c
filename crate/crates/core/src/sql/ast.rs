//! Syntax tree for the template SQL dialect.
//!
//! Every position a grammar non-terminal can occupy is a [`Slotted`] value:
//! either a fixed terminal or a typed [`SlotName`] placeholder. Concrete
//! queries contain no slots.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Non-terminal category of a slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SlotKind {
    Table,
    Column,
    Value,
    Agg,
    Op,
    Sc,
}

impl SlotKind {
    pub const ALL: [SlotKind; 6] = [
        SlotKind::Table,
        SlotKind::Column,
        SlotKind::Value,
        SlotKind::Agg,
        SlotKind::Op,
        SlotKind::Sc,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SlotKind::Table => "TABLE",
            SlotKind::Column => "COLUMN",
            SlotKind::Value => "VALUE",
            SlotKind::Agg => "AGG",
            SlotKind::Op => "OP",
            SlotKind::Sc => "SC",
        }
    }
}

/// A typed placeholder such as `COLUMN1` or `OP0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SlotName {
    pub kind: SlotKind,
    pub ordinal: u32,
}

impl SlotName {
    pub fn new(kind: SlotKind, ordinal: u32) -> Self {
        Self { kind, ordinal }
    }

    /// Parses the exact uppercase slot syntax (`KIND` followed by digits).
    pub fn parse(token: &str) -> Option<Self> {
        for kind in SlotKind::ALL {
            if let Some(rest) = token.strip_prefix(kind.as_str()) {
                if !rest.is_empty() && rest.bytes().all(|b| b.is_ascii_digit()) {
                    // Reject leading zeros so the rendering stays injective.
                    if rest.len() > 1 && rest.starts_with('0') {
                        return None;
                    }
                    return rest.parse().ok().map(|ordinal| Self { kind, ordinal });
                }
            }
        }
        None
    }
}

impl fmt::Display for SlotName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.kind.as_str(), self.ordinal)
    }
}

impl FromStr for SlotName {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        SlotName::parse(s).ok_or_else(|| format!("not a slot name: {s:?}"))
    }
}

impl Serialize for SlotName {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for SlotName {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// A position that holds either a fixed terminal or a slot.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Slotted<T> {
    Fixed(T),
    Slot(SlotName),
}

impl<T> Slotted<T> {
    pub fn slot(&self) -> Option<SlotName> {
        match self {
            Slotted::Slot(s) => Some(*s),
            Slotted::Fixed(_) => None,
        }
    }

    pub fn fixed(&self) -> Option<&T> {
        match self {
            Slotted::Fixed(v) => Some(v),
            Slotted::Slot(_) => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum AggFn {
    Max,
    Min,
    Count,
    Avg,
    Sum,
}

impl AggFn {
    pub const ALL: [AggFn; 5] = [AggFn::Max, AggFn::Min, AggFn::Count, AggFn::Avg, AggFn::Sum];

    pub fn as_str(self) -> &'static str {
        match self {
            AggFn::Max => "MAX",
            AggFn::Min => "MIN",
            AggFn::Count => "COUNT",
            AggFn::Avg => "AVG",
            AggFn::Sum => "SUM",
        }
    }

    pub fn from_keyword(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|a| a.as_str().eq_ignore_ascii_case(s))
    }

    /// Whether the function only makes sense over numeric input.
    pub fn is_numeric(self) -> bool {
        !matches!(self, AggFn::Count)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum CompareOp {
    #[serde(rename = "=")]
    Eq,
    #[serde(rename = "!=")]
    Ne,
    #[serde(rename = "<")]
    Lt,
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = ">")]
    Gt,
    #[serde(rename = ">=")]
    Ge,
    #[serde(rename = "LIKE")]
    Like,
    #[serde(rename = "BETWEEN")]
    Between,
    #[serde(rename = "IN")]
    In,
    #[serde(rename = "NOT IN")]
    NotIn,
}

impl CompareOp {
    pub const ALL: [CompareOp; 10] = [
        CompareOp::Eq,
        CompareOp::Ne,
        CompareOp::Lt,
        CompareOp::Le,
        CompareOp::Gt,
        CompareOp::Ge,
        CompareOp::Like,
        CompareOp::Between,
        CompareOp::In,
        CompareOp::NotIn,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CompareOp::Eq => "=",
            CompareOp::Ne => "!=",
            CompareOp::Lt => "<",
            CompareOp::Le => "<=",
            CompareOp::Gt => ">",
            CompareOp::Ge => ">=",
            CompareOp::Like => "LIKE",
            CompareOp::Between => "BETWEEN",
            CompareOp::In => "IN",
            CompareOp::NotIn => "NOT IN",
        }
    }

    /// Accepts the canonical spelling plus common aliases (`<>`, `≤`, `≥`, `≠`).
    pub fn from_symbol(s: &str) -> Option<Self> {
        let op = match s.to_ascii_uppercase().as_str() {
            "=" => CompareOp::Eq,
            "!=" | "<>" | "≠" => CompareOp::Ne,
            "<" => CompareOp::Lt,
            "<=" | "≤" => CompareOp::Le,
            ">" => CompareOp::Gt,
            ">=" | "≥" => CompareOp::Ge,
            "LIKE" => CompareOp::Like,
            "BETWEEN" => CompareOp::Between,
            "IN" => CompareOp::In,
            "NOT IN" => CompareOp::NotIn,
            _ => return None,
        };
        Some(op)
    }

    /// Ordering comparisons that need an orderable (numeric) operand.
    pub fn is_arithmetic(self) -> bool {
        matches!(
            self,
            CompareOp::Lt | CompareOp::Le | CompareOp::Gt | CompareOp::Ge | CompareOp::Between
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum SortDir {
    Asc,
    Desc,
}

impl SortDir {
    pub fn as_str(self) -> &'static str {
        match self {
            SortDir::Asc => "ASC",
            SortDir::Desc => "DESC",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum SetOpKind {
    Intersect,
    Union,
    Except,
}

impl SetOpKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SetOpKind::Intersect => "INTERSECT",
            SetOpKind::Union => "UNION",
            SetOpKind::Except => "EXCEPT",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Conjunction {
    And,
    Or,
}

impl Conjunction {
    pub fn as_str(self) -> &'static str {
        match self {
            Conjunction::And => "AND",
            Conjunction::Or => "OR",
        }
    }
}

/// A literal value. Numbers keep their source spelling.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", content = "text", rename_all = "lowercase")]
pub enum Literal {
    Number(String),
    Text(String),
}

impl Literal {
    /// The unquoted text of the literal.
    pub fn text(&self) -> &str {
        match self {
            Literal::Number(s) | Literal::Text(s) => s,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ColumnRef {
    pub table: Option<Slotted<String>>,
    pub column: Slotted<String>,
}

impl ColumnRef {
    pub fn bare(column: Slotted<String>) -> Self {
        Self { table: None, column }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum AggArg {
    Star,
    Column(ColumnRef),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Expr {
    Star,
    Column(ColumnRef),
    Agg {
        func: Slotted<AggFn>,
        distinct: bool,
        arg: AggArg,
    },
}

impl Expr {
    pub fn column(&self) -> Option<&ColumnRef> {
        match self {
            Expr::Column(c) => Some(c),
            Expr::Agg {
                arg: AggArg::Column(c),
                ..
            } => Some(c),
            _ => None,
        }
    }
}

/// Right-hand side of a comparison.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Operand {
    Value(Slotted<Literal>),
    /// `low AND high`, only valid under BETWEEN.
    Range(Slotted<Literal>, Slotted<Literal>),
    Subquery(Box<Query>),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Condition {
    pub lhs: Expr,
    pub op: Slotted<CompareOp>,
    pub rhs: Operand,
}

/// Conditions chained left to right by AND/OR, without grouping.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Predicate {
    pub first: Condition,
    pub rest: Vec<(Conjunction, Condition)>,
}

impl Predicate {
    pub fn single(cond: Condition) -> Self {
        Self {
            first: cond,
            rest: Vec::new(),
        }
    }

    pub fn conditions(&self) -> impl Iterator<Item = &Condition> {
        std::iter::once(&self.first).chain(self.rest.iter().map(|(_, c)| c))
    }

    pub fn conditions_mut(&mut self) -> impl Iterator<Item = &mut Condition> {
        std::iter::once(&mut self.first).chain(self.rest.iter_mut().map(|(_, c)| c))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Join {
    pub table: Slotted<String>,
    pub left: ColumnRef,
    pub right: ColumnRef,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct FromClause {
    pub table: Slotted<String>,
    pub join: Option<Join>,
}

impl FromClause {
    pub fn tables(&self) -> impl Iterator<Item = &Slotted<String>> {
        std::iter::once(&self.table).chain(self.join.as_ref().map(|j| &j.table))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct OrderItem {
    pub expr: Expr,
    pub dir: Option<Slotted<SortDir>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Select {
    pub distinct: bool,
    pub projections: Vec<Expr>,
    pub from: Option<FromClause>,
    pub filter: Option<Predicate>,
    pub group_by: Vec<ColumnRef>,
    pub having: Option<Predicate>,
    pub order_by: Vec<OrderItem>,
    pub limit: Option<Slotted<Literal>>,
}

impl Select {
    pub fn new(projections: Vec<Expr>) -> Self {
        Self {
            distinct: false,
            projections,
            from: None,
            filter: None,
            group_by: Vec::new(),
            having: None,
            order_by: Vec::new(),
            limit: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Query {
    Select(Box<Select>),
    SetOp {
        kind: SetOpKind,
        left: Box<Query>,
        right: Box<Query>,
    },
}

impl Query {
    pub fn select(select: Select) -> Self {
        Query::Select(Box::new(select))
    }

    /// The leftmost SELECT, whose projection defines the result shape.
    pub fn leading_select(&self) -> &Select {
        match self {
            Query::Select(s) => s,
            Query::SetOp { left, .. } => left.leading_select(),
        }
    }
}
