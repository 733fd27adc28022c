//! Hand-written lexer and recursive-descent parser for the template dialect.

use thiserror::Error;

use super::ast::*;

/// Whether slot tokens are accepted.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParseMode {
    Template,
    Concrete,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("parse error at byte {position}: {message}")]
pub struct ParseError {
    pub position: usize,
    pub message: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kw {
    Select,
    From,
    Join,
    On,
    Where,
    Group,
    Order,
    By,
    Having,
    Limit,
    Asc,
    Desc,
    And,
    Or,
    Not,
    In,
    Like,
    Between,
    Intersect,
    Union,
    Except,
    Distinct,
    Agg(AggFn),
}

pub(crate) const KEYWORDS: &[&str] = &[
    "SELECT", "FROM", "JOIN", "ON", "WHERE", "GROUP", "ORDER", "BY", "HAVING", "LIMIT", "ASC",
    "DESC", "AND", "OR", "NOT", "IN", "LIKE", "BETWEEN", "INTERSECT", "UNION", "EXCEPT",
    "DISTINCT", "MAX", "MIN", "COUNT", "AVG", "SUM",
];

fn keyword(word: &str) -> Option<Kw> {
    let kw = match word.to_ascii_uppercase().as_str() {
        "SELECT" => Kw::Select,
        "FROM" => Kw::From,
        "JOIN" => Kw::Join,
        "ON" => Kw::On,
        "WHERE" => Kw::Where,
        "GROUP" => Kw::Group,
        "ORDER" => Kw::Order,
        "BY" => Kw::By,
        "HAVING" => Kw::Having,
        "LIMIT" => Kw::Limit,
        "ASC" => Kw::Asc,
        "DESC" => Kw::Desc,
        "AND" => Kw::And,
        "OR" => Kw::Or,
        "NOT" => Kw::Not,
        "IN" => Kw::In,
        "LIKE" => Kw::Like,
        "BETWEEN" => Kw::Between,
        "INTERSECT" => Kw::Intersect,
        "UNION" => Kw::Union,
        "EXCEPT" => Kw::Except,
        "DISTINCT" => Kw::Distinct,
        other => Kw::Agg(AggFn::from_keyword(other)?),
    };
    Some(kw)
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Kw(Kw),
    Ident(String),
    Number(String),
    Str(String),
    Slot(SlotName),
    Cmp(CompareOp),
    LParen,
    RParen,
    Comma,
    Star,
    Dot,
}

fn describe(tok: Option<&Tok>) -> String {
    match tok {
        None => "end of input".to_string(),
        Some(Tok::Kw(k)) => format!("keyword {k:?}").to_uppercase(),
        Some(Tok::Ident(s)) => format!("identifier {s:?}"),
        Some(Tok::Number(s)) => format!("number {s}"),
        Some(Tok::Str(s)) => format!("string '{s}'"),
        Some(Tok::Slot(s)) => format!("slot {s}"),
        Some(Tok::Cmp(op)) => format!("operator {}", op.as_str()),
        Some(Tok::LParen) => "'('".into(),
        Some(Tok::RParen) => "')'".into(),
        Some(Tok::Comma) => "','".into(),
        Some(Tok::Star) => "'*'".into(),
        Some(Tok::Dot) => "'.'".into(),
    }
}

fn err(position: usize, message: impl Into<String>) -> ParseError {
    ParseError {
        position,
        message: message.into(),
    }
}

fn lex(text: &str, mode: ParseMode) -> Result<Vec<(Tok, usize)>, ParseError> {
    let mut out = Vec::new();
    let mut chars = text.char_indices().peekable();
    while let Some(&(pos, c)) = chars.peek() {
        if c.is_whitespace() {
            chars.next();
            continue;
        }
        let single = match c {
            '(' => Some(Tok::LParen),
            ')' => Some(Tok::RParen),
            ',' => Some(Tok::Comma),
            '*' => Some(Tok::Star),
            '.' => Some(Tok::Dot),
            '=' => Some(Tok::Cmp(CompareOp::Eq)),
            '≤' => Some(Tok::Cmp(CompareOp::Le)),
            '≥' => Some(Tok::Cmp(CompareOp::Ge)),
            '≠' => Some(Tok::Cmp(CompareOp::Ne)),
            _ => None,
        };
        if let Some(tok) = single {
            chars.next();
            out.push((tok, pos));
            continue;
        }
        match c {
            '<' | '>' | '!' => {
                chars.next();
                let next = chars.peek().map(|&(_, n)| n);
                let (op, consume) = match (c, next) {
                    ('<', Some('=')) => (CompareOp::Le, true),
                    ('<', Some('>')) => (CompareOp::Ne, true),
                    ('<', _) => (CompareOp::Lt, false),
                    ('>', Some('=')) => (CompareOp::Ge, true),
                    ('>', _) => (CompareOp::Gt, false),
                    ('!', Some('=')) => (CompareOp::Ne, true),
                    _ => return Err(err(pos, "expected '=' after '!'")),
                };
                if consume {
                    chars.next();
                }
                out.push((Tok::Cmp(op), pos));
            }
            '\'' | '"' => {
                let quote = c;
                chars.next();
                let mut buf = String::new();
                loop {
                    match chars.next() {
                        None => return Err(err(pos, "unterminated quoted token")),
                        Some((_, ch)) if ch == quote => {
                            if matches!(chars.peek(), Some(&(_, n)) if n == quote) {
                                chars.next();
                                buf.push(quote);
                            } else {
                                break;
                            }
                        }
                        Some((_, ch)) => buf.push(ch),
                    }
                }
                if quote == '\'' {
                    out.push((Tok::Str(buf), pos));
                } else {
                    if buf.is_empty() {
                        return Err(err(pos, "empty quoted identifier"));
                    }
                    out.push((Tok::Ident(buf), pos));
                }
            }
            '-' | '0'..='9' => {
                let mut buf = String::new();
                if c == '-' {
                    buf.push('-');
                    chars.next();
                }
                let mut seen_dot = false;
                while let Some(&(_, ch)) = chars.peek() {
                    if ch.is_ascii_digit() {
                        buf.push(ch);
                        chars.next();
                    } else if ch == '.' && !seen_dot {
                        // Only a decimal point if a digit follows.
                        let mut ahead = chars.clone();
                        ahead.next();
                        if matches!(ahead.peek(), Some(&(_, d)) if d.is_ascii_digit()) {
                            seen_dot = true;
                            buf.push('.');
                            chars.next();
                        } else {
                            break;
                        }
                    } else {
                        break;
                    }
                }
                if buf == "-" {
                    return Err(err(pos, "expected digits after '-'"));
                }
                if let Some(&(p, ch)) = chars.peek() {
                    if ch.is_alphanumeric() || ch == '_' {
                        return Err(err(p, format!("unexpected character {ch:?} after number")));
                    }
                }
                out.push((Tok::Number(buf), pos));
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let mut buf = String::new();
                while let Some(&(_, ch)) = chars.peek() {
                    if ch.is_ascii_alphanumeric() || ch == '_' {
                        buf.push(ch);
                        chars.next();
                    } else {
                        break;
                    }
                }
                if let Some(slot) = SlotName::parse(&buf) {
                    if mode == ParseMode::Concrete {
                        return Err(err(pos, format!("slot {slot} in a concrete query")));
                    }
                    out.push((Tok::Slot(slot), pos));
                } else if let Some(kw) = keyword(&buf) {
                    out.push((Tok::Kw(kw), pos));
                } else {
                    out.push((Tok::Ident(buf), pos));
                }
            }
            other => return Err(err(pos, format!("unexpected character {other:?}"))),
        }
    }
    Ok(out)
}

struct Parser {
    toks: Vec<(Tok, usize)>,
    pos: usize,
    end: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(t, _)| t)
    }

    fn peek_at(&self, offset: usize) -> Option<&Tok> {
        self.toks.get(self.pos + offset).map(|(t, _)| t)
    }

    fn offset(&self) -> usize {
        self.toks.get(self.pos).map(|&(_, p)| p).unwrap_or(self.end)
    }

    fn next(&mut self) -> Option<Tok> {
        let tok = self.toks.get(self.pos).map(|(t, _)| t.clone());
        if tok.is_some() {
            self.pos += 1;
        }
        tok
    }

    fn unexpected<T>(&self, expected: &str) -> Result<T, ParseError> {
        Err(err(
            self.offset(),
            format!("expected {expected}, found {}", describe(self.peek())),
        ))
    }

    fn eat_kw(&mut self, kw: Kw) -> bool {
        if self.peek() == Some(&Tok::Kw(kw)) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect_kw(&mut self, kw: Kw, name: &str) -> Result<(), ParseError> {
        if self.eat_kw(kw) {
            Ok(())
        } else {
            self.unexpected(name)
        }
    }

    fn expect(&mut self, tok: Tok, name: &str) -> Result<(), ParseError> {
        if self.peek() == Some(&tok) {
            self.pos += 1;
            Ok(())
        } else {
            self.unexpected(name)
        }
    }

    fn query(&mut self) -> Result<Query, ParseError> {
        let mut query = Query::select(self.select()?);
        loop {
            let kind = match self.peek() {
                Some(Tok::Kw(Kw::Intersect)) => SetOpKind::Intersect,
                Some(Tok::Kw(Kw::Union)) => SetOpKind::Union,
                Some(Tok::Kw(Kw::Except)) => SetOpKind::Except,
                _ => return Ok(query),
            };
            self.pos += 1;
            let right = Query::select(self.select()?);
            query = Query::SetOp {
                kind,
                left: Box::new(query),
                right: Box::new(right),
            };
        }
    }

    fn select(&mut self) -> Result<Select, ParseError> {
        self.expect_kw(Kw::Select, "SELECT")?;
        let distinct = self.eat_kw(Kw::Distinct);
        let mut projections = vec![self.expr()?];
        while self.peek() == Some(&Tok::Comma) {
            self.pos += 1;
            projections.push(self.expr()?);
        }
        let mut select = Select::new(projections);
        select.distinct = distinct;
        if self.eat_kw(Kw::From) {
            select.from = Some(self.parse_from()?);
        }
        if self.eat_kw(Kw::Where) {
            select.filter = Some(self.predicate()?);
        }
        if self.eat_kw(Kw::Group) {
            self.expect_kw(Kw::By, "BY")?;
            select.group_by.push(self.column_ref()?);
            while self.peek() == Some(&Tok::Comma) {
                self.pos += 1;
                select.group_by.push(self.column_ref()?);
            }
        }
        if self.eat_kw(Kw::Having) {
            select.having = Some(self.predicate()?);
        }
        if self.eat_kw(Kw::Order) {
            self.expect_kw(Kw::By, "BY")?;
            select.order_by.push(self.order_item()?);
            while self.peek() == Some(&Tok::Comma) {
                self.pos += 1;
                select.order_by.push(self.order_item()?);
            }
        }
        if self.eat_kw(Kw::Limit) {
            let at = self.offset();
            let value = self.value()?;
            if matches!(value, Slotted::Fixed(Literal::Text(_))) {
                return Err(err(at, "LIMIT takes a number"));
            }
            select.limit = Some(value);
        }
        Ok(select)
    }

    fn parse_from(&mut self) -> Result<FromClause, ParseError> {
        let table = self.name(SlotKind::Table, "table name")?;
        let join = if self.eat_kw(Kw::Join) {
            let table = self.name(SlotKind::Table, "table name")?;
            self.expect_kw(Kw::On, "ON")?;
            let left = self.column_ref()?;
            self.expect(Tok::Cmp(CompareOp::Eq), "'='")?;
            let right = self.column_ref()?;
            Some(Join { table, left, right })
        } else {
            None
        };
        Ok(FromClause { table, join })
    }

    /// An identifier or a slot of the given kind.
    fn name(&mut self, kind: SlotKind, what: &str) -> Result<Slotted<String>, ParseError> {
        let at = self.offset();
        match self.next() {
            Some(Tok::Ident(s)) => Ok(Slotted::Fixed(s)),
            Some(Tok::Slot(slot)) if slot.kind == kind => Ok(Slotted::Slot(slot)),
            Some(Tok::Slot(slot)) => Err(err(at, format!("slot {slot} cannot stand for a {what}"))),
            other => {
                self.pos -= other.is_some() as usize;
                self.unexpected(what)
            }
        }
    }

    fn column_ref(&mut self) -> Result<ColumnRef, ParseError> {
        let at = self.offset();
        let first = match self.next() {
            Some(Tok::Ident(s)) => Slotted::Fixed(s),
            Some(Tok::Slot(slot)) if matches!(slot.kind, SlotKind::Table | SlotKind::Column) => {
                Slotted::Slot(slot)
            }
            Some(Tok::Slot(slot)) => {
                return Err(err(at, format!("slot {slot} cannot stand for a column")))
            }
            other => {
                self.pos -= other.is_some() as usize;
                return self.unexpected("column reference");
            }
        };
        if self.peek() == Some(&Tok::Dot) {
            self.pos += 1;
            if let Slotted::Slot(s) = &first {
                if s.kind != SlotKind::Table {
                    return Err(err(at, format!("slot {s} cannot qualify a column")));
                }
            }
            let column = self.name(SlotKind::Column, "column name")?;
            Ok(ColumnRef {
                table: Some(first),
                column,
            })
        } else {
            if let Slotted::Slot(s) = &first {
                if s.kind != SlotKind::Column {
                    return Err(err(at, format!("slot {s} cannot stand for a column")));
                }
            }
            Ok(ColumnRef::bare(first))
        }
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let func = match self.peek() {
            Some(Tok::Star) => {
                self.pos += 1;
                return Ok(Expr::Star);
            }
            Some(Tok::Kw(Kw::Agg(f))) => Slotted::Fixed(*f),
            Some(Tok::Slot(s)) if s.kind == SlotKind::Agg => Slotted::Slot(*s),
            _ => return Ok(Expr::Column(self.column_ref()?)),
        };
        self.pos += 1;
        self.expect(Tok::LParen, "'('")?;
        let distinct = self.eat_kw(Kw::Distinct);
        let arg = if self.peek() == Some(&Tok::Star) {
            self.pos += 1;
            AggArg::Star
        } else {
            AggArg::Column(self.column_ref()?)
        };
        self.expect(Tok::RParen, "')'")?;
        Ok(Expr::Agg {
            func,
            distinct,
            arg,
        })
    }

    fn order_item(&mut self) -> Result<OrderItem, ParseError> {
        let expr = self.expr()?;
        let dir = match self.peek() {
            Some(Tok::Kw(Kw::Asc)) => Some(Slotted::Fixed(SortDir::Asc)),
            Some(Tok::Kw(Kw::Desc)) => Some(Slotted::Fixed(SortDir::Desc)),
            Some(Tok::Slot(s)) if s.kind == SlotKind::Sc => Some(Slotted::Slot(*s)),
            _ => None,
        };
        if dir.is_some() {
            self.pos += 1;
        }
        Ok(OrderItem { expr, dir })
    }

    fn predicate(&mut self) -> Result<Predicate, ParseError> {
        let mut pred = Predicate::single(self.condition()?);
        loop {
            let conj = match self.peek() {
                Some(Tok::Kw(Kw::And)) => Conjunction::And,
                Some(Tok::Kw(Kw::Or)) => Conjunction::Or,
                _ => return Ok(pred),
            };
            self.pos += 1;
            pred.rest.push((conj, self.condition()?));
        }
    }

    fn is_value_start(tok: Option<&Tok>) -> bool {
        match tok {
            Some(Tok::Number(_)) | Some(Tok::Str(_)) => true,
            Some(Tok::Slot(s)) => s.kind == SlotKind::Value,
            _ => false,
        }
    }

    fn value(&mut self) -> Result<Slotted<Literal>, ParseError> {
        let at = self.offset();
        match self.next() {
            Some(Tok::Number(s)) => Ok(Slotted::Fixed(Literal::Number(s))),
            Some(Tok::Str(s)) => Ok(Slotted::Fixed(Literal::Text(s))),
            Some(Tok::Slot(slot)) if slot.kind == SlotKind::Value => Ok(Slotted::Slot(slot)),
            Some(Tok::Slot(slot)) => Err(err(at, format!("slot {slot} cannot stand for a value"))),
            other => {
                self.pos -= other.is_some() as usize;
                self.unexpected("value")
            }
        }
    }

    fn subquery(&mut self) -> Result<Operand, ParseError> {
        self.expect(Tok::LParen, "'('")?;
        let q = self.query()?;
        self.expect(Tok::RParen, "')'")?;
        Ok(Operand::Subquery(Box::new(q)))
    }

    fn condition(&mut self) -> Result<Condition, ParseError> {
        let lhs = self.expr()?;
        let op = match self.next() {
            Some(Tok::Cmp(op)) => Slotted::Fixed(op),
            Some(Tok::Kw(Kw::Like)) => Slotted::Fixed(CompareOp::Like),
            Some(Tok::Kw(Kw::Between)) => Slotted::Fixed(CompareOp::Between),
            Some(Tok::Kw(Kw::In)) => Slotted::Fixed(CompareOp::In),
            Some(Tok::Kw(Kw::Not)) => {
                self.expect_kw(Kw::In, "IN after NOT")?;
                Slotted::Fixed(CompareOp::NotIn)
            }
            Some(Tok::Slot(s)) if s.kind == SlotKind::Op => Slotted::Slot(s),
            other => {
                self.pos -= other.is_some() as usize;
                return self.unexpected("comparison operator");
            }
        };
        let rhs = match op {
            Slotted::Fixed(CompareOp::Between) => {
                let low = self.value()?;
                self.expect_kw(Kw::And, "AND")?;
                let high = self.value()?;
                Operand::Range(low, high)
            }
            Slotted::Fixed(CompareOp::In | CompareOp::NotIn) => self.subquery()?,
            Slotted::Fixed(CompareOp::Like) => Operand::Value(self.value()?),
            _ if self.peek() == Some(&Tok::LParen) => self.subquery()?,
            Slotted::Fixed(_) => Operand::Value(self.value()?),
            Slotted::Slot(_) => {
                let low = self.value()?;
                // `OP0 VALUE0 AND VALUE1` is a range: a condition never starts with a value.
                if self.peek() == Some(&Tok::Kw(Kw::And)) && Self::is_value_start(self.peek_at(1)) {
                    self.pos += 1;
                    Operand::Range(low, self.value()?)
                } else {
                    Operand::Value(low)
                }
            }
        };
        Ok(Condition { lhs, op, rhs })
    }
}

/// Parses `text` into a query. In [`ParseMode::Concrete`] slot tokens are rejected.
pub fn parse_sql(text: &str, mode: ParseMode) -> Result<Query, ParseError> {
    if text.trim().is_empty() {
        return Err(err(0, "empty query"));
    }
    let toks = lex(text, mode)?;
    let mut parser = Parser {
        toks,
        pos: 0,
        end: text.len(),
    };
    let query = parser.query()?;
    if parser.peek().is_some() {
        return parser.unexpected("end of query");
    }
    Ok(query)
}
