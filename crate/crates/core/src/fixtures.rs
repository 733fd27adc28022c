//! Seeded synthetic corpora for tests, benchmarks and demos.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::rng;
use crate::table::{TableSchema, UtteranceRecord};

const TABLE_NAMES: &[&str] = &[
    "performance", "club", "player", "stadium", "concert", "store", "school", "film", "airline",
    "museum", "ship", "election", "church", "festival", "hospital", "library",
];
const TEXT_COLUMNS: &[&str] = &[
    "name", "city", "country", "team", "host", "venue", "category", "title", "owner", "locations",
    "region", "genre", "status", "manager", "sponsor",
];
const NUMBER_COLUMNS: &[&str] = &[
    "wins", "age", "year", "score", "attendance", "price", "rank", "height", "budget",
    "population", "capacity", "rating",
];
const DATE_COLUMNS: &[&str] = &["date", "opened", "founded on"];
const WORDS: &[&str] = &[
    "Boston", "TD Garden", "Madison Square", "Ann", "Bob", "Celtics", "O'Brien", "Lakers",
    "Paris", "Berlin", "North", "South", "rock", "jazz", "open", "closed", "Green Bay", "Oslo",
    "Kyoto", "Lima", "St. Louis", "Cairo", "blue", "red", "Acme Co", "Zed",
];
const MONTHS: &[&str] = &["January", "March", "May", "July", "September", "November"];

fn text_cell<R: Rng + ?Sized>(rng: &mut R) -> String {
    let w = *WORDS.choose(rng).unwrap();
    if rng.gen_bool(0.3) {
        format!("{w} {}", rng.gen_range(1..40))
    } else {
        w.to_string()
    }
}

fn number_cell<R: Rng + ?Sized>(rng: &mut R) -> String {
    match rng.gen_range(0..10) {
        0 => format!("{:.1}", rng.gen_range(0.0..500.0)),
        1 => rng.gen_range(-20..0).to_string(),
        _ => rng.gen_range(0..2000).to_string(),
    }
}

fn date_cell<R: Rng + ?Sized>(rng: &mut R) -> String {
    if rng.gen_bool(0.5) {
        format!(
            "{}-{:02}-{:02}",
            rng.gen_range(1990..2024),
            rng.gen_range(1..13),
            rng.gen_range(1..29)
        )
    } else {
        format!(
            "{} {}, {}",
            MONTHS.choose(rng).unwrap(),
            rng.gen_range(1..29),
            rng.gen_range(1990..2024)
        )
    }
}

#[derive(Clone, Copy)]
enum Kind {
    Text,
    Number,
    Date,
}

/// One table with 6 to 8 columns, at least 3 NUMBER and 3 TEXT, and 6 to 20
/// rows with an occasional empty cell.
pub fn fixture_table<R: Rng + ?Sized>(id: &str, name: &str, rng: &mut R) -> TableSchema {
    let n_cols = rng.gen_range(6..=8);
    let n_num = rng.gen_range(3..=n_cols - 3);
    let n_date = usize::from(n_cols - n_num > 3 && rng.gen_bool(0.5));
    let n_text = n_cols - n_num - n_date;
    let mut cols: Vec<(String, Kind)> = Vec::new();
    cols.extend(
        TEXT_COLUMNS
            .choose_multiple(rng, n_text)
            .map(|c| (c.to_string(), Kind::Text)),
    );
    cols.extend(
        NUMBER_COLUMNS
            .choose_multiple(rng, n_num)
            .map(|c| (c.to_string(), Kind::Number)),
    );
    cols.extend(
        DATE_COLUMNS
            .choose_multiple(rng, n_date)
            .map(|c| (c.to_string(), Kind::Date)),
    );
    cols.shuffle(rng);
    let n_rows = rng.gen_range(6..=20);
    let rows: Vec<Vec<String>> = (0..n_rows)
        .map(|_| {
            cols.iter()
                .map(|(_, k)| {
                    if rng.gen_bool(0.02) {
                        return String::new();
                    }
                    match k {
                        Kind::Text => text_cell(rng),
                        Kind::Number => number_cell(rng),
                        Kind::Date => date_cell(rng),
                    }
                })
                .collect()
        })
        .collect();
    let header: Vec<String> = cols.into_iter().map(|(n, _)| n).collect();
    TableSchema::new(id, name, &header, rows, "fixture").expect("fixture tables are rectangular")
}

/// `n` tables, mostly grouped into databases of 2 or 3 tables with distinct
/// names; about one in five tables stands alone.
pub fn fixture_corpus(n: usize, seed: u64) -> Vec<TableSchema> {
    let mut g = rng::stream(seed, "fixture-corpus");
    let mut out = Vec::with_capacity(n);
    let mut db = 0;
    while out.len() < n {
        let size = if g.gen_bool(0.2) { 1 } else { g.gen_range(2..=3) };
        let size = size.min(n - out.len());
        let names: Vec<&str> = TABLE_NAMES.choose_multiple(&mut g, size).copied().collect();
        let db_id = format!("db-{db:05}");
        db += 1;
        for name in names {
            let id = format!("fx-{:06}", out.len());
            let t = fixture_table(&id, name, &mut g);
            out.push(if size > 1 { t.with_db(db_id.clone()) } else { t });
        }
    }
    out
}

/// Natural-looking utterances over corpus tables, for MLM records.
pub fn fixture_utterances(tables: &[TableSchema], n: usize, seed: u64) -> Vec<UtteranceRecord> {
    const LEAD: &[&str] = &["what", "which", "how many", "show", "list", "find", "tell me"];
    let mut g = rng::stream(seed, "fixture-utterances");
    (0..n)
        .map(|_| {
            let t = tables.choose(&mut g).expect("non-empty corpus");
            let col = &t.columns.choose(&mut g).unwrap().name;
            let k = g.gen_range(1..4);
            let extra: Vec<&str> = WORDS.choose_multiple(&mut g, k).copied().collect();
            UtteranceRecord {
                text: format!(
                    "{} {col} of the {} with {} ?",
                    LEAD.choose(&mut g).unwrap(),
                    t.name,
                    extra.join(" and ")
                ),
                table_id: t.table_id.clone(),
                source: "fixture".into(),
            }
        })
        .collect()
}
