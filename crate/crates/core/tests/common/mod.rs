//! Test oracles written independently of the library's labeler: a token-level
//! clause scanner over canonical SQL text, and a groundedness checker.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use tabsynth::sql::{parse_sql, AggArg, AggFn, CompareOp, Expr, Literal, Operand, ParseMode, Predicate, Query, Slotted};
use tabsynth::synth::SynthExample;
use tabsynth::table::TableSchema;

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Word(String),
    Quoted(String),
    Str,
    Num,
    Sym(String),
}

fn lex(sql: &str) -> Vec<Tok> {
    let chars: Vec<char> = sql.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c == ' ' {
            i += 1;
        } else if c == '\'' || c == '"' {
            let mut s = String::new();
            i += 1;
            loop {
                if chars[i] == c {
                    if i + 1 < chars.len() && chars[i + 1] == c {
                        s.push(c);
                        i += 2;
                        continue;
                    }
                    i += 1;
                    break;
                }
                s.push(chars[i]);
                i += 1;
            }
            if c == '\'' {
                out.push(Tok::Str);
            } else if i < chars.len() && chars[i] == '.' {
                // "quoted table".column
                i += 1;
                let (col, next) = ident_at(&chars, i);
                i = next;
                out.push(Tok::Word(format!("{s}\u{1}{col}")));
            } else {
                out.push(Tok::Quoted(s));
            }
        } else if c.is_ascii_digit() || (c == '-' && i + 1 < chars.len() && chars[i + 1].is_ascii_digit()) {
            i += 1;
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                i += 1;
            }
            out.push(Tok::Num);
        } else if c.is_alphanumeric() || c == '_' {
            let (w, next) = ident_at(&chars, i);
            i = next;
            if i < chars.len() && chars[i] == '.' {
                i += 1;
                let (col, next) = ident_at(&chars, i);
                i = next;
                out.push(Tok::Word(format!("{w}\u{1}{col}")));
            } else {
                out.push(Tok::Word(w));
            }
        } else {
            let mut s = c.to_string();
            i += 1;
            if i < chars.len() && matches!((c, chars[i]), ('<', '=') | ('>', '=') | ('!', '=') | ('<', '>')) {
                s.push(chars[i]);
                i += 1;
            }
            out.push(Tok::Sym(s));
        }
    }
    out
}

fn ident_at(chars: &[char], mut i: usize) -> (String, usize) {
    if chars[i] == '"' {
        let mut s = String::new();
        i += 1;
        loop {
            if chars[i] == '"' {
                if i + 1 < chars.len() && chars[i + 1] == '"' {
                    s.push('"');
                    i += 2;
                    continue;
                }
                return (s, i + 1);
            }
            s.push(chars[i]);
            i += 1;
        }
    }
    let start = i;
    while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
        i += 1;
    }
    (chars[start..i].iter().collect(), i)
}

const NON_COLUMN_WORDS: &[&str] = &[
    "SELECT", "DISTINCT", "FROM", "JOIN", "ON", "WHERE", "GROUP", "BY", "HAVING", "ORDER", "LIMIT",
    "AND", "OR", "NOT", "IN", "LIKE", "BETWEEN", "ASC", "DESC", "COUNT", "MAX", "MIN", "AVG", "SUM",
    "INTERSECT", "UNION", "EXCEPT",
];

fn kw(t: &Tok, k: &str) -> bool {
    matches!(t, Tok::Word(w) if w.eq_ignore_ascii_case(k))
}

/// Splits `toks` at depth-0 positions where `is_split` holds.
fn split_top(toks: &[Tok], is_split: impl Fn(&[Tok], usize) -> Option<usize>) -> Vec<(usize, &[Tok])> {
    let mut out = Vec::new();
    let mut depth = 0i32;
    let mut start = 0;
    let mut tag = usize::MAX;
    let mut i = 0;
    while i < toks.len() {
        match &toks[i] {
            Tok::Sym(s) if s == "(" => depth += 1,
            Tok::Sym(s) if s == ")" => depth -= 1,
            _ => {}
        }
        if depth == 0 {
            if let Some(t) = is_split(toks, i) {
                if i > start || tag != usize::MAX {
                    out.push((tag, &toks[start..i]));
                }
                tag = t;
                let width = if matches!(t, 3 | 5) { 2 } else { 1 };
                i += width;
                start = i;
                continue;
            }
        }
        i += 1;
    }
    out.push((tag, &toks[start..]));
    out
}

const CTX_ORDER: [&str; 4] = ["INTERSECT", "UNION", "EXCEPT", "SUB"];
const ROLE_ORDER: [&str; 8] = [
    "SELECT", "FROM", "WHERE", "GROUP BY", "GROUP BY HAVING", "HAVING", "ORDER BY", "ORDER BY LIMIT",
];

type Hit = (Option<String>, String, Vec<&'static str>, &'static str);

struct Scan {
    hits: Vec<Hit>,
}

impl Scan {
    fn query(&mut self, toks: &[Tok], ctx: &[&'static str], outer: &[String]) {
        let arms = split_top(toks, |t, i| {
            ["INTERSECT", "UNION", "EXCEPT"]
                .iter()
                .position(|k| kw(&t[i], k))
                .map(|p| 100 + p)
        });
        for (tag, arm) in arms {
            let mut c = ctx.to_vec();
            if tag >= 100 && tag != usize::MAX {
                c.push(CTX_ORDER[tag - 100]);
            }
            self.select(arm, &c, outer);
        }
    }

    fn select(&mut self, toks: &[Tok], ctx: &[&'static str], outer: &[String]) {
        // Clause tags: 0 SELECT, 1 FROM, 2 WHERE, 3 GROUP BY, 4 HAVING, 5 ORDER BY, 6 LIMIT.
        let clauses = split_top(toks, |t, i| {
            let next_by = i + 1 < t.len() && kw(&t[i + 1], "BY");
            if kw(&t[i], "SELECT") {
                Some(0)
            } else if kw(&t[i], "FROM") {
                Some(1)
            } else if kw(&t[i], "WHERE") {
                Some(2)
            } else if kw(&t[i], "GROUP") && next_by {
                Some(3)
            } else if kw(&t[i], "HAVING") {
                Some(4)
            } else if kw(&t[i], "ORDER") && next_by {
                Some(5)
            } else if kw(&t[i], "LIMIT") {
                Some(6)
            } else {
                None
            }
        });
        let has = |k: usize| clauses.iter().any(|(t, _)| *t == k);
        let mut scope: Vec<String> = Vec::new();
        for (tag, seg) in &clauses {
            if *tag == 1 {
                let mut expect_table = true;
                for t in seg.iter() {
                    if kw(t, "JOIN") {
                        expect_table = true;
                    } else if expect_table {
                        match t {
                            Tok::Word(w) => scope.push(w.clone()),
                            Tok::Quoted(w) => scope.push(w.clone()),
                            _ => {}
                        }
                        expect_table = false;
                    }
                }
            }
        }
        if scope.is_empty() {
            scope = outer.to_vec();
        }
        for (tag, seg) in &clauses {
            let role = match tag {
                0 => "SELECT",
                1 => "FROM",
                2 => "WHERE",
                3 if has(4) => "GROUP BY HAVING",
                3 => "GROUP BY",
                4 => "HAVING",
                5 if has(6) => "ORDER BY LIMIT",
                5 => "ORDER BY",
                _ => continue,
            };
            self.segment(seg, *tag == 1, role, ctx, &scope);
        }
    }

    fn segment(&mut self, seg: &[Tok], is_from: bool, role: &'static str, ctx: &[&'static str], scope: &[String]) {
        let mut i = 0;
        let mut after_on = !is_from;
        while i < seg.len() {
            match &seg[i] {
                Tok::Sym(s) if s == "(" => {
                    let mut depth = 0;
                    let mut j = i;
                    loop {
                        match &seg[j] {
                            Tok::Sym(s) if s == "(" => depth += 1,
                            Tok::Sym(s) if s == ")" => {
                                depth -= 1;
                                if depth == 0 {
                                    break;
                                }
                            }
                            _ => {}
                        }
                        j += 1;
                    }
                    let inner = &seg[i + 1..j];
                    if inner.first().is_some_and(|t| kw(t, "SELECT")) {
                        let mut c = ctx.to_vec();
                        c.push("SUB");
                        self.query(inner, &c, scope);
                    } else {
                        self.segment(inner, false, role, ctx, scope);
                    }
                    i = j + 1;
                    continue;
                }
                t if is_from && kw(t, "ON") => after_on = true,
                Tok::Word(w) if after_on && !NON_COLUMN_WORDS.iter().any(|k| w.eq_ignore_ascii_case(k)) => {
                    self.push(w, role, ctx);
                }
                Tok::Quoted(w) if after_on => self.push(&w.clone(), role, ctx),
                _ => {}
            }
            i += 1;
        }
        let _ = scope;
    }

    fn push(&mut self, w: &str, role: &'static str, ctx: &[&'static str]) {
        let (table, col) = match w.split_once('\u{1}') {
            Some((t, c)) => (Some(t.to_string()), c.to_string()),
            None => (None, w.to_string()),
        };
        self.hits.push((table, col, ctx.to_vec(), role));
    }
}

/// Labels for every column of `tables`, computed from the SQL text alone.
pub fn oracle_labels(sql: &str, tables: &[&TableSchema]) -> BTreeMap<usize, String> {
    let toks = lex(sql);
    let mut scan = Scan { hits: Vec::new() };
    scan.query(&toks, &[], &[]);
    let mut offsets = Vec::new();
    let mut acc = 0;
    for t in tables {
        offsets.push(acc);
        acc += t.columns.len();
    }
    let mut atoms: Vec<BTreeSet<(Vec<usize>, usize)>> = vec![BTreeSet::new(); acc];
    for (table, col, ctx, role) in scan.hits {
        for (ti, t) in tables.iter().enumerate() {
            if table.as_ref().is_some_and(|name| *name != t.name) {
                continue;
            }
            for (ci, c) in t.columns.iter().enumerate() {
                if c.name == col {
                    let key = (
                        ctx.iter().map(|c| CTX_ORDER.iter().position(|x| x == c).unwrap()).collect(),
                        ROLE_ORDER.iter().position(|r| *r == role).unwrap(),
                    );
                    atoms[offsets[ti] + ci].insert(key);
                }
            }
        }
    }
    atoms
        .into_iter()
        .enumerate()
        .map(|(i, set)| {
            let label = if set.is_empty() {
                "NONE".to_string()
            } else {
                set.iter()
                    .map(|(ctx, role)| {
                        let mut parts: Vec<&str> = ctx.iter().map(|&c| CTX_ORDER[c]).collect();
                        parts.push(ROLE_ORDER[*role]);
                        parts.join(" ")
                    })
                    .collect::<Vec<_>>()
                    .join(" AND ")
            };
            (i, label)
        })
        .collect()
}

/// SQL LIKE matching: `%` is any run, `_` any single character.
pub fn like_matches(pattern: &str, text: &str) -> bool {
    let p: Vec<char> = pattern.chars().collect();
    let t: Vec<char> = text.chars().collect();
    let mut dp = vec![vec![false; t.len() + 1]; p.len() + 1];
    dp[0][0] = true;
    for i in 1..=p.len() {
        if p[i - 1] == '%' {
            dp[i][0] = dp[i - 1][0];
        }
        for j in 1..=t.len() {
            dp[i][j] = match p[i - 1] {
                '%' => dp[i - 1][j] || dp[i][j - 1],
                '_' => dp[i - 1][j - 1],
                c => dp[i - 1][j - 1] && c == t[j - 1],
            };
        }
    }
    dp[p.len()][t.len()]
}

#[derive(Debug, Default)]
pub struct GroundTally {
    pub cell_literals: usize,
    pub like_literals: usize,
    pub count_thresholds: usize,
    pub failures: Vec<String>,
}

fn cells_of<'a>(tables: &[&'a TableSchema], table: Option<&str>, column: &str) -> Vec<&'a str> {
    let mut out = Vec::new();
    for t in tables {
        if table.is_some_and(|n| n != t.name) {
            continue;
        }
        for c in t.columns.iter().filter(|c| c.name == column) {
            out.extend(t.rows.iter().map(|r| r[c.index].as_str()));
        }
    }
    out
}

/// Checks every literal in WHERE/HAVING conditions of `ex` against the table
/// cells of the column it is compared with.
pub fn check_grounded(ex: &SynthExample, tables: &[&TableSchema], tally: &mut GroundTally) {
    let q = match parse_sql(&ex.sql, ParseMode::Concrete) {
        Ok(q) => q,
        Err(e) => {
            tally.failures.push(format!("{}: {e}", ex.id));
            return;
        }
    };
    walk(&q, ex, tables, tally);
}

fn walk(q: &Query, ex: &SynthExample, tables: &[&TableSchema], tally: &mut GroundTally) {
    match q {
        Query::SetOp { left, right, .. } => {
            walk(left, ex, tables, tally);
            walk(right, ex, tables, tally);
        }
        Query::Select(s) => {
            if let Some(p) = &s.filter {
                predicate(p, ex, tables, tally);
            }
            if let Some(p) = &s.having {
                predicate(p, ex, tables, tally);
            }
        }
    }
}

fn fixed<T: Clone>(x: &Slotted<T>) -> T {
    x.fixed().cloned().expect("concrete")
}

fn predicate(p: &Predicate, ex: &SynthExample, tables: &[&TableSchema], tally: &mut GroundTally) {
    for cond in p.conditions() {
        let op = fixed(&cond.op);
        let literals: Vec<Literal> = match &cond.rhs {
            Operand::Value(v) => vec![fixed(v)],
            Operand::Range(a, b) => vec![fixed(a), fixed(b)],
            Operand::Subquery(q) => {
                walk(q, ex, tables, tally);
                continue;
            }
        };
        let column = match &cond.lhs {
            Expr::Column(c) => Some(c),
            Expr::Agg { func, arg, .. } => match (fixed(func), arg) {
                (AggFn::Count, _) | (_, AggArg::Star) => None,
                (_, AggArg::Column(c)) => Some(c),
            },
            Expr::Star => None,
        };
        let Some(c) = column else {
            for l in literals {
                tally.count_thresholds += 1;
                let ok = matches!(&l, Literal::Number(n) if n.parse::<u32>().is_ok_and(|v| (1..=5).contains(&v)));
                if !ok {
                    tally.failures.push(format!("{}: count threshold {l:?}", ex.id));
                }
            }
            continue;
        };
        let table = c.table.as_ref().map(fixed);
        let cells = cells_of(tables, table.as_deref(), &fixed(&c.column));
        for l in literals {
            let text = l.text();
            if op == CompareOp::Like {
                tally.like_literals += 1;
                if !cells.iter().any(|cell| like_matches(text, cell)) {
                    tally.failures.push(format!("{}: LIKE {text:?} matches no cell", ex.id));
                }
            } else {
                tally.cell_literals += 1;
                if !cells.contains(&text) {
                    tally.failures.push(format!("{}: literal {text:?} not a cell of {:?}", ex.id, c.column));
                }
            }
        }
    }
}
