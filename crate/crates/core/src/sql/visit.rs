//! In-order traversal over every slot-capable position of a query, plus the
//! slot substitution built on it.

use std::collections::BTreeMap;

use thiserror::Error;

use super::ast::*;

/// Shape of a comparison's right-hand side, as seen by an operator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OperandShape {
    Value,
    Range,
    Subquery,
}

impl OperandShape {
    pub fn of(rhs: &Operand) -> Self {
        match rhs {
            Operand::Value(_) => OperandShape::Value,
            Operand::Range(..) => OperandShape::Range,
            Operand::Subquery(_) => OperandShape::Subquery,
        }
    }

    /// Whether a fixed operator may take this operand shape.
    pub fn accepts(self, op: CompareOp) -> bool {
        match op {
            CompareOp::Between => self == OperandShape::Range,
            CompareOp::In | CompareOp::NotIn => self == OperandShape::Subquery,
            CompareOp::Like => self == OperandShape::Value,
            _ => self != OperandShape::Range,
        }
    }
}

/// Visits positions in textual order. `scope` lists the FROM tables in effect
/// (empty when the query elides FROM).
pub trait TermVisitor {
    type Error;

    fn table(&mut self, table: &mut Slotted<String>) -> Result<(), Self::Error>;
    fn column(&mut self, column: &mut ColumnRef, scope: &[Slotted<String>])
        -> Result<(), Self::Error>;
    fn value(&mut self, value: &mut Slotted<Literal>) -> Result<(), Self::Error>;
    fn agg(&mut self, func: &mut Slotted<AggFn>, arg: &AggArg) -> Result<(), Self::Error>;
    fn op(&mut self, op: &mut Slotted<CompareOp>, shape: OperandShape) -> Result<(), Self::Error>;
    fn sort(&mut self, dir: &mut Slotted<SortDir>) -> Result<(), Self::Error>;
}

pub fn walk_query<V: TermVisitor>(
    q: &mut Query,
    scope: &[Slotted<String>],
    v: &mut V,
) -> Result<(), V::Error> {
    match q {
        Query::Select(s) => walk_select(s, scope, v),
        Query::SetOp { left, right, .. } => {
            walk_query(left, scope, v)?;
            walk_query(right, scope, v)
        }
    }
}

fn walk_select<V: TermVisitor>(
    s: &mut Select,
    outer: &[Slotted<String>],
    v: &mut V,
) -> Result<(), V::Error> {
    let scope: Vec<Slotted<String>> = match &s.from {
        Some(from) => from.tables().cloned().collect(),
        None => outer.to_vec(),
    };
    for p in &mut s.projections {
        walk_expr(p, &scope, v)?;
    }
    if let Some(from) = &mut s.from {
        v.table(&mut from.table)?;
        if let Some(join) = &mut from.join {
            v.table(&mut join.table)?;
            v.column(&mut join.left, &scope)?;
            v.column(&mut join.right, &scope)?;
        }
    }
    if let Some(pred) = &mut s.filter {
        walk_predicate(pred, &scope, v)?;
    }
    for c in &mut s.group_by {
        v.column(c, &scope)?;
    }
    if let Some(pred) = &mut s.having {
        walk_predicate(pred, &scope, v)?;
    }
    for item in &mut s.order_by {
        walk_expr(&mut item.expr, &scope, v)?;
        if let Some(dir) = &mut item.dir {
            v.sort(dir)?;
        }
    }
    if let Some(limit) = &mut s.limit {
        v.value(limit)?;
    }
    Ok(())
}

fn walk_expr<V: TermVisitor>(
    e: &mut Expr,
    scope: &[Slotted<String>],
    v: &mut V,
) -> Result<(), V::Error> {
    match e {
        Expr::Star => Ok(()),
        Expr::Column(c) => v.column(c, scope),
        Expr::Agg { func, arg, .. } => {
            v.agg(func, arg)?;
            match arg {
                AggArg::Star => Ok(()),
                AggArg::Column(c) => v.column(c, scope),
            }
        }
    }
}

fn walk_predicate<V: TermVisitor>(
    p: &mut Predicate,
    scope: &[Slotted<String>],
    v: &mut V,
) -> Result<(), V::Error> {
    for cond in p.conditions_mut() {
        walk_expr(&mut cond.lhs, scope, v)?;
        let shape = OperandShape::of(&cond.rhs);
        v.op(&mut cond.op, shape)?;
        match &mut cond.rhs {
            Operand::Value(x) => v.value(x)?,
            Operand::Range(low, high) => {
                v.value(low)?;
                v.value(high)?;
            }
            Operand::Subquery(q) => walk_query(q, scope, v)?,
        }
    }
    Ok(())
}

struct SlotCollector(Vec<SlotName>);

impl SlotCollector {
    fn push<T>(&mut self, s: &Slotted<T>) {
        if let Some(slot) = s.slot() {
            self.0.push(slot);
        }
    }
}

impl TermVisitor for SlotCollector {
    type Error = std::convert::Infallible;

    fn table(&mut self, t: &mut Slotted<String>) -> Result<(), Self::Error> {
        self.push(t);
        Ok(())
    }
    fn column(&mut self, c: &mut ColumnRef, _: &[Slotted<String>]) -> Result<(), Self::Error> {
        if let Some(t) = &c.table {
            self.push(t);
        }
        self.push(&c.column);
        Ok(())
    }
    fn value(&mut self, x: &mut Slotted<Literal>) -> Result<(), Self::Error> {
        self.push(x);
        Ok(())
    }
    fn agg(&mut self, f: &mut Slotted<AggFn>, _: &AggArg) -> Result<(), Self::Error> {
        self.push(f);
        Ok(())
    }
    fn op(&mut self, op: &mut Slotted<CompareOp>, _: OperandShape) -> Result<(), Self::Error> {
        self.push(op);
        Ok(())
    }
    fn sort(&mut self, d: &mut Slotted<SortDir>) -> Result<(), Self::Error> {
        self.push(d);
        Ok(())
    }
}

/// All slot occurrences in textual order (repeats included).
pub fn slot_occurrences(q: &Query) -> Vec<SlotName> {
    let mut copy = q.clone();
    let mut collector = SlotCollector(Vec::new());
    let Ok(()) = walk_query(&mut copy, &[], &mut collector);
    collector.0
}

/// Whether the query contains no slots.
pub fn is_concrete(q: &Query) -> bool {
    slot_occurrences(q).is_empty()
}

/// A terminal symbol that can fill a slot.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Terminal {
    Table(String),
    Column(String),
    Value(Literal),
    Agg(AggFn),
    Op(CompareOp),
    Sort(SortDir),
}

impl Terminal {
    pub fn kind(&self) -> SlotKind {
        match self {
            Terminal::Table(_) => SlotKind::Table,
            Terminal::Column(_) => SlotKind::Column,
            Terminal::Value(_) => SlotKind::Value,
            Terminal::Agg(_) => SlotKind::Agg,
            Terminal::Op(_) => SlotKind::Op,
            Terminal::Sort(_) => SlotKind::Sc,
        }
    }

    /// The SQL-side spelling of the terminal.
    pub fn sql_text(&self) -> String {
        match self {
            Terminal::Table(s) | Terminal::Column(s) => s.clone(),
            Terminal::Value(l) => super::render::render_literal(l),
            Terminal::Agg(f) => f.as_str().into(),
            Terminal::Op(o) => o.as_str().into(),
            Terminal::Sort(d) => d.as_str().into(),
        }
    }
}

pub type Bindings = BTreeMap<SlotName, Terminal>;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SubstituteError {
    #[error("unbound slot {0}")]
    UnboundSlot(SlotName),
    #[error("slot {slot} cannot take terminal {found:?}")]
    BindingType { slot: SlotName, found: Terminal },
    #[error("operator {op} bound to {slot} does not fit its operand")]
    OperandMismatch { slot: SlotName, op: &'static str },
}

struct Substituter<'a>(&'a Bindings);

impl Substituter<'_> {
    fn lookup(&self, slot: SlotName) -> Result<&Terminal, SubstituteError> {
        let t = self.0.get(&slot).ok_or(SubstituteError::UnboundSlot(slot))?;
        if t.kind() != slot.kind {
            return Err(SubstituteError::BindingType {
                slot,
                found: t.clone(),
            });
        }
        Ok(t)
    }

    fn name(&self, n: &mut Slotted<String>) -> Result<(), SubstituteError> {
        if let Slotted::Slot(slot) = *n {
            match self.lookup(slot)? {
                Terminal::Table(s) | Terminal::Column(s) => *n = Slotted::Fixed(s.clone()),
                _ => unreachable!("kind checked"),
            }
        }
        Ok(())
    }
}

impl TermVisitor for Substituter<'_> {
    type Error = SubstituteError;

    fn table(&mut self, t: &mut Slotted<String>) -> Result<(), Self::Error> {
        self.name(t)
    }

    fn column(&mut self, c: &mut ColumnRef, _: &[Slotted<String>]) -> Result<(), Self::Error> {
        if let Some(t) = &mut c.table {
            self.name(t)?;
        }
        self.name(&mut c.column)
    }

    fn value(&mut self, x: &mut Slotted<Literal>) -> Result<(), Self::Error> {
        if let Slotted::Slot(slot) = *x {
            let Terminal::Value(lit) = self.lookup(slot)? else {
                unreachable!()
            };
            *x = Slotted::Fixed(lit.clone());
        }
        Ok(())
    }

    fn agg(&mut self, f: &mut Slotted<AggFn>, _: &AggArg) -> Result<(), Self::Error> {
        if let Slotted::Slot(slot) = *f {
            let Terminal::Agg(a) = self.lookup(slot)? else {
                unreachable!()
            };
            *f = Slotted::Fixed(*a);
        }
        Ok(())
    }

    fn op(&mut self, op: &mut Slotted<CompareOp>, shape: OperandShape) -> Result<(), Self::Error> {
        if let Slotted::Slot(slot) = *op {
            let Terminal::Op(o) = self.lookup(slot)? else {
                unreachable!()
            };
            if !shape.accepts(*o) {
                return Err(SubstituteError::OperandMismatch {
                    slot,
                    op: o.as_str(),
                });
            }
            *op = Slotted::Fixed(*o);
        }
        Ok(())
    }

    fn sort(&mut self, d: &mut Slotted<SortDir>) -> Result<(), Self::Error> {
        if let Slotted::Slot(slot) = *d {
            let Terminal::Sort(s) = self.lookup(slot)? else {
                unreachable!()
            };
            *d = Slotted::Fixed(*s);
        }
        Ok(())
    }
}

/// Replaces every slot with its bound terminal. The tree shape is unchanged.
pub fn substitute_slots(template: &Query, bindings: &Bindings) -> Result<Query, SubstituteError> {
    let mut out = template.clone();
    walk_query(&mut out, &[], &mut Substituter(bindings))?;
    Ok(out)
}
