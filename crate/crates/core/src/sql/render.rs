//! Canonical single-line rendering: one space between all tokens, uppercase
//! keywords, identifiers verbatim (double-quoted when they would not lex back
//! as a bare identifier).

use super::ast::*;
use super::parser::KEYWORDS;

/// Renders a query in canonical form. `parse_sql(render_sql(q))` is `q`.
pub fn render_sql(query: &Query) -> String {
    let mut out = Vec::new();
    query_tokens(query, &mut out);
    out.join(" ")
}

fn is_bare_ident(name: &str) -> bool {
    let mut chars = name.chars();
    let Some(first) = chars.next() else {
        return false;
    };
    (first.is_ascii_alphabetic() || first == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
        && !KEYWORDS.iter().any(|k| k.eq_ignore_ascii_case(name))
        && SlotName::parse(name).is_none()
}

/// Identifier as it appears in SQL text.
pub fn quote_ident(name: &str) -> String {
    if is_bare_ident(name) {
        name.to_string()
    } else {
        format!("\"{}\"", name.replace('"', "\"\""))
    }
}

pub fn render_literal(lit: &Literal) -> String {
    match lit {
        Literal::Number(n) => n.clone(),
        Literal::Text(s) => format!("'{}'", s.replace('\'', "''")),
    }
}

fn name_token(name: &Slotted<String>) -> String {
    match name {
        Slotted::Fixed(s) => quote_ident(s),
        Slotted::Slot(s) => s.to_string(),
    }
}

fn column_token(col: &ColumnRef) -> String {
    match &col.table {
        Some(t) => format!("{}.{}", name_token(t), name_token(&col.column)),
        None => name_token(&col.column),
    }
}

fn value_token(v: &Slotted<Literal>) -> String {
    match v {
        Slotted::Fixed(lit) => render_literal(lit),
        Slotted::Slot(s) => s.to_string(),
    }
}

fn expr_tokens(expr: &Expr, out: &mut Vec<String>) {
    match expr {
        Expr::Star => out.push("*".into()),
        Expr::Column(c) => out.push(column_token(c)),
        Expr::Agg {
            func,
            distinct,
            arg,
        } => {
            out.push(match func {
                Slotted::Fixed(f) => f.as_str().to_string(),
                Slotted::Slot(s) => s.to_string(),
            });
            out.push("(".into());
            if *distinct {
                out.push("DISTINCT".into());
            }
            match arg {
                AggArg::Star => out.push("*".into()),
                AggArg::Column(c) => out.push(column_token(c)),
            }
            out.push(")".into());
        }
    }
}

fn predicate_tokens(pred: &Predicate, out: &mut Vec<String>) {
    condition_tokens(&pred.first, out);
    for (conj, cond) in &pred.rest {
        out.push(conj.as_str().into());
        condition_tokens(cond, out);
    }
}

fn condition_tokens(cond: &Condition, out: &mut Vec<String>) {
    expr_tokens(&cond.lhs, out);
    out.push(match &cond.op {
        Slotted::Fixed(op) => op.as_str().to_string(),
        Slotted::Slot(s) => s.to_string(),
    });
    match &cond.rhs {
        Operand::Value(v) => out.push(value_token(v)),
        Operand::Range(low, high) => {
            out.push(value_token(low));
            out.push("AND".into());
            out.push(value_token(high));
        }
        Operand::Subquery(q) => {
            out.push("(".into());
            query_tokens(q, out);
            out.push(")".into());
        }
    }
}

fn comma_list<T>(items: &[T], out: &mut Vec<String>, mut each: impl FnMut(&T, &mut Vec<String>)) {
    for (i, item) in items.iter().enumerate() {
        if i > 0 {
            out.push(",".into());
        }
        each(item, out);
    }
}

fn select_tokens(s: &Select, out: &mut Vec<String>) {
    out.push("SELECT".into());
    if s.distinct {
        out.push("DISTINCT".into());
    }
    comma_list(&s.projections, out, expr_tokens);
    if let Some(from) = &s.from {
        out.push("FROM".into());
        out.push(name_token(&from.table));
        if let Some(join) = &from.join {
            out.push("JOIN".into());
            out.push(name_token(&join.table));
            out.push("ON".into());
            out.push(column_token(&join.left));
            out.push("=".into());
            out.push(column_token(&join.right));
        }
    }
    if let Some(pred) = &s.filter {
        out.push("WHERE".into());
        predicate_tokens(pred, out);
    }
    if !s.group_by.is_empty() {
        out.push("GROUP BY".into());
        comma_list(&s.group_by, out, |c, out| out.push(column_token(c)));
    }
    if let Some(pred) = &s.having {
        out.push("HAVING".into());
        predicate_tokens(pred, out);
    }
    if !s.order_by.is_empty() {
        out.push("ORDER BY".into());
        comma_list(&s.order_by, out, |item, out| {
            expr_tokens(&item.expr, out);
            if let Some(dir) = &item.dir {
                out.push(match dir {
                    Slotted::Fixed(d) => d.as_str().to_string(),
                    Slotted::Slot(s) => s.to_string(),
                });
            }
        });
    }
    if let Some(limit) = &s.limit {
        out.push("LIMIT".into());
        out.push(value_token(limit));
    }
}

fn query_tokens(q: &Query, out: &mut Vec<String>) {
    match q {
        Query::Select(s) => select_tokens(s, out),
        Query::SetOp { kind, left, right } => {
            query_tokens(left, out);
            out.push(kind.as_str().into());
            query_tokens(right, out);
        }
    }
}
