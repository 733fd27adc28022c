mod common;

use std::collections::BTreeMap;

use proptest::prelude::*;
use proptest::sample::subsequence;
use tabsynth::fixtures::{fixture_corpus, fixture_utterances};
use tabsynth::miner::{abstract_sql, mine_templates, SeedPair};
use tabsynth::pipeline::build_mlm_records;
use tabsynth::rng;
use tabsynth::scfg::starter_grammar;
use tabsynth::serialize::{flatten, select_masks, MaskPolicy, Objective, DEFAULT_SEPARATOR};
use tabsynth::sql::{parse_sql, render_sql, substitute_slots, ParseMode};
use tabsynth::ssp::{build_vocabulary, label_columns};
use tabsynth::synth::{generate, GenerateOptions, SynthExample};
use tabsynth::table::{Corpus, Schema, TableSchema};

fn corpus() -> Corpus {
    Corpus::new(fixture_corpus(60, 5))
}

fn examples(n: usize, seed: u64, workers: usize) -> Vec<SynthExample> {
    let opts = GenerateOptions {
        n,
        seed,
        workers,
        ..Default::default()
    };
    generate(&starter_grammar(), &corpus(), &opts).unwrap()
}

const COLUMNS: &[&str] = &["name", "wins", "city", "\"founded on\"", "age"];
const VALUES: &[&str] = &["'Boston'", "3", "-1.5", "'O''Brien'", "'St. Louis'"];

fn column() -> impl Strategy<Value = String> {
    prop::sample::select(COLUMNS).prop_map(String::from)
}

fn condition() -> impl Strategy<Value = String> {
    prop_oneof![
        (column(), prop::sample::select(&["=", "!=", "<", ">=", "LIKE"][..]), prop::sample::select(VALUES))
            .prop_map(|(c, o, v)| format!("{c} {o} {v}")),
        column().prop_map(|c| format!("{c} BETWEEN 1 AND 9")),
        (column(), column()).prop_map(|(a, b)| format!("{a} > ( SELECT AVG ( {b} ) FROM t )")),
        (column(), column()).prop_map(|(a, b)| format!("{a} NOT IN ( SELECT {b} FROM t WHERE {b} < 4 )")),
    ]
}

fn select_item() -> impl Strategy<Value = String> {
    prop_oneof![
        column(),
        Just("COUNT ( * )".to_string()),
        (prop::sample::select(&["MAX", "MIN", "SUM", "AVG", "COUNT"][..]), column())
            .prop_map(|(a, c)| format!("{a} ( {c} )")),
    ]
}

prop_compose! {
    fn simple_query()(
        items in prop::collection::vec(select_item(), 1..4),
        distinct in any::<bool>(),
        from in any::<bool>(),
        conds in prop::collection::vec(condition(), 0..3),
        conj in prop::sample::select(&["AND", "OR"][..]),
        group in prop::option::of(column()),
        order in prop::option::of((column(), prop::sample::select(&["ASC", "DESC"][..]), prop::option::of(1u32..10))),
    ) -> String {
        let mut s = format!("SELECT {}{}", if distinct { "DISTINCT " } else { "" }, items.join(" , "));
        if from {
            s.push_str(" FROM t");
        }
        if !conds.is_empty() {
            s.push_str(&format!(" WHERE {}", conds.join(&format!(" {conj} "))));
        }
        if let Some(g) = group {
            s.push_str(&format!(" GROUP BY {g} HAVING COUNT ( * ) > 2"));
        }
        if let Some((c, d, limit)) = order {
            s.push_str(&format!(" ORDER BY {c} {d}"));
            if let Some(l) = limit {
                s.push_str(&format!(" LIMIT {l}"));
            }
        }
        s
    }
}

fn query() -> impl Strategy<Value = String> {
    prop_oneof![
        3 => simple_query(),
        1 => (simple_query(), prop::sample::select(&["INTERSECT", "UNION", "EXCEPT"][..]), simple_query())
            .prop_map(|(a, op, b)| format!("{a} {op} {b}")),
    ]
}

/// Lowercases keywords and pads the gaps between tokens unevenly, leaving
/// quoted text alone; the parser must not care.
fn scramble(sql: &str, pad: &[bool]) -> String {
    let mut out = String::new();
    let mut quote: Option<char> = None;
    let mut gap = 0;
    let mut word = String::new();
    let flush = |word: &mut String, out: &mut String| {
        if word.len() > 2 && word.chars().all(|c| c.is_ascii_uppercase()) {
            *word = word.to_lowercase();
        }
        out.push_str(word);
        word.clear();
    };
    for c in sql.chars() {
        match quote {
            Some(q) => {
                out.push(c);
                if c == q {
                    quote = None;
                }
            }
            None if c == '\'' || c == '"' => {
                flush(&mut word, &mut out);
                out.push(c);
                quote = Some(c);
            }
            None if c == ' ' => {
                flush(&mut word, &mut out);
                out.push_str(if pad[gap % pad.len()] { "  \t " } else { " " });
                gap += 1;
            }
            None => word.push(c),
        }
    }
    flush(&mut word, &mut out);
    out
}

fn table(header: &[&str], rows: &[&[&str]]) -> TableSchema {
    let header: Vec<String> = header.iter().map(|s| s.to_string()).collect();
    let rows = rows.iter().map(|r| r.iter().map(|s| s.to_string()).collect()).collect();
    TableSchema::new("t", "t", &header, rows, "test").unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn render_parse_round_trip(sql in query(), pad in prop::collection::vec(any::<bool>(), 1..6)) {
        let q = parse_sql(&sql, ParseMode::Concrete).unwrap();
        let canonical = render_sql(&q);
        prop_assert_eq!(&canonical, &sql);
        let again = parse_sql(&scramble(&sql, &pad), ParseMode::Concrete).unwrap();
        prop_assert_eq!(render_sql(&again), canonical);
    }

    #[test]
    fn abstraction_inverts(sql in query()) {
        let t = table(&["name", "wins", "city", "founded on", "age"], &[&["a", "1", "b", "2001-01-01", "3"]]);
        let schema = Schema::single(&t);
        let q = parse_sql(&sql, ParseMode::Concrete).unwrap();
        let (template, binding) = abstract_sql(&q, &schema).unwrap();
        let restored = substitute_slots(&template, &binding).unwrap();
        prop_assert_eq!(render_sql(&restored), render_sql(&q));
        // Abstraction is idempotent on the template's shape.
        let (again, _) = abstract_sql(&restored, &schema).unwrap();
        prop_assert_eq!(render_sql(&again), render_sql(&template));
    }

    #[test]
    fn labels_ignore_column_order(sql in query(), perm in Just((0..5).collect::<Vec<usize>>()).prop_shuffle()) {
        let names = ["name", "wins", "city", "founded on", "age"];
        let base = table(&names, &[&["a", "1", "b", "2001-01-01", "3"]]);
        let cells = ["a", "1", "b", "2001-01-01", "3"];
        let shuffled_names: Vec<&str> = perm.iter().map(|&i| names[i]).collect();
        let shuffled_cells: Vec<&str> = perm.iter().map(|&i| cells[i]).collect();
        let other = table(&shuffled_names, &[&shuffled_cells]);
        let q = parse_sql(&sql, ParseMode::Concrete).unwrap();
        let by_name = |t: &TableSchema| -> BTreeMap<String, String> {
            label_columns(&q, &Schema::single(t))
                .unwrap()
                .into_iter()
                .map(|(i, l)| (t.columns[i].name.clone(), l.to_string()))
                .collect()
        };
        prop_assert_eq!(by_name(&base), by_name(&other));
        let oracle = common::oracle_labels(&sql, &[&base]);
        let got: BTreeMap<usize, String> = label_columns(&q, &Schema::single(&base))
            .unwrap()
            .into_iter()
            .map(|(i, l)| (i, l.to_string()))
            .collect();
        prop_assert_eq!(oracle, got);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn generation_is_seed_deterministic(seed in any::<u64>(), n in 0usize..60) {
        let a = examples(n, seed, 1);
        prop_assert_eq!(a.len(), n);
        prop_assert_eq!(&a, &examples(n, seed, 3));
        for e in &a {
            prop_assert!(!tabsynth::synth::has_slot_token(&e.question), "{}", e.question);
            prop_assert!(!tabsynth::synth::has_slot_token(&e.sql), "{}", e.sql);
        }
    }

    #[test]
    fn prefix_of_longer_run_matches(seed in any::<u64>(), n in 1usize..40) {
        let long = examples(n + 10, seed, 2);
        prop_assert_eq!(&long[..n], &examples(n, seed, 1)[..]);
    }

    #[test]
    fn vocabulary_of_subset_is_subset(seed in any::<u64>(), picks in subsequence((0..80).collect::<Vec<usize>>(), 0..80)) {
        let all = examples(80, seed, 2);
        let sub: Vec<SynthExample> = picks.iter().map(|&i| all[i].clone()).collect();
        let full = build_vocabulary(&all);
        let part = build_vocabulary(&sub);
        prop_assert!(part.is_subset_of(&full));
        prop_assert_eq!(part.labels()[0].as_str(), "NONE");
    }

    #[test]
    fn masks_avoid_separators(seed in any::<u64>(), p in 0.0f64..=1.0) {
        let corpus = corpus();
        let utts = fixture_utterances(corpus.tables(), 30, seed);
        let policy = MaskPolicy::with_probability(p);
        for r in build_mlm_records(&utts, &corpus, &policy, DEFAULT_SEPARATOR, seed, 2) {
            let positions = r.mask_positions.as_ref().unwrap();
            prop_assert!(positions.windows(2).all(|w| w[0] < w[1]));
            for pos in positions {
                prop_assert!(*pos < r.tokens.len());
                prop_assert!(r.tokens[*pos] != DEFAULT_SEPARATOR);
            }
        }
    }

    #[test]
    fn miner_partitions_pairs(seed in any::<u64>(), top_k in 1usize..40) {
        let corpus = corpus();
        let pairs: Vec<SeedPair> = examples(120, seed, 2)
            .into_iter()
            .map(|e| {
                // Multi-table examples reference their database.
                let table_id = match e.table_ids.len() {
                    0 => e.table_id,
                    _ => corpus.get(&e.table_id).unwrap().db_id.clone().unwrap(),
                };
                SeedPair { question: e.question, sql: e.sql, table_id }
            })
            .collect();
        let all = mine_templates(&pairs, &corpus, usize::MAX);
        prop_assert!(all.skipped.is_empty(), "{:?}", all.skipped);
        prop_assert_eq!(all.groups.iter().map(|g| g.count).sum::<usize>(), pairs.len());
        prop_assert_eq!(all.groups.len(), all.distinct_templates);
        prop_assert!(all.groups.windows(2).all(|w| w[0].count >= w[1].count));
        let top = mine_templates(&pairs, &corpus, top_k);
        prop_assert_eq!(&top.groups[..], &all.groups[..top_k.min(all.groups.len())]);
        for g in &all.groups {
            for e in &g.exemplars {
                let q = parse_sql(&e.sql, ParseMode::Concrete).unwrap();
                let schema = corpus.schema_for(&e.table_id).unwrap();
                let (t, b) = abstract_sql(&q, &schema).unwrap();
                prop_assert_eq!(render_sql(&t), g.template.clone());
                prop_assert_eq!(render_sql(&substitute_slots(&t, &b).unwrap()), render_sql(&q));
            }
        }
    }
}

#[test]
fn flat_sequence_alignment() {
    let c = corpus();
    let t = &c.tables()[0];
    let schema = Schema::single(t);
    let seq = flatten("how many wins ?", &schema, "[SEP]", Objective::Ssp);
    assert_eq!(seq.sep_positions.len(), t.columns.len());
    assert_eq!(seq.column_order, (0..t.columns.len()).collect::<Vec<_>>());
    assert_eq!(&seq.tokens[..3], ["how", "many", "wins"]);
    for (k, &p) in seq.sep_positions.iter().enumerate() {
        assert_eq!(seq.tokens[p], "[SEP]");
        let end = seq.sep_positions.get(k + 1).copied().unwrap_or(seq.tokens.len());
        assert_eq!(seq.tokens[p + 1..end].join(" "), t.columns[k].name);
    }

    let never = select_masks(&seq, &MaskPolicy::with_probability(0.0), &mut rng::seeded(1));
    assert!(never.positions.is_empty());
    let always = select_masks(&seq, &MaskPolicy::with_probability(1.0), &mut rng::seeded(1));
    assert_eq!(always.positions.len(), seq.tokens.len() - seq.sep_positions.len());
    assert_eq!(always.actions.len(), always.positions.len());
}

#[test]
fn multi_table_headers_carry_table_names() {
    let c = corpus();
    let t = c.tables().iter().find(|t| t.db_id.is_some()).unwrap();
    let schema = c.schema_for(t.db_id.as_deref().unwrap()).unwrap();
    assert!(schema.is_multi_table());
    let seq = flatten("q", &schema, DEFAULT_SEPARATOR, Objective::Mlm);
    let first = schema.columns().next().unwrap();
    assert_eq!(seq.tokens[seq.sep_positions[0] + 1], first.table.name.split_whitespace().next().unwrap());
}
