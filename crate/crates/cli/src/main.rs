//! `tabsynth` command-line driver.
//!
//! Settings resolve in order: command-line flags, `TABSYNTH_*` environment
//! variables, the `key = value` config file given by `--config`, built-in
//! defaults.

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand};
use tabsynth::miner::{emit_rule_stubs, load_seed_pairs, mine_templates, EXEMPLAR_CAP};
use tabsynth::pipeline::{build_mlm_records, build_ssp_records, read_examples, relabel, stats, write_jsonl};
use tabsynth::scfg::{load_grammar, starter_grammar, Grammar};
use tabsynth::serialize::{write_dataset, MaskPolicy, DEFAULT_MASK_PROBABILITY, DEFAULT_SEPARATOR};
use tabsynth::ssp::{build_vocabulary, grammar_label_space, LabelVocabulary};
use tabsynth::synth::{eligibility, generate, GenerateOptions, DEFAULT_RETRY_BUDGET};
use tabsynth::table::{load_corpus, load_utterances, write_skip_report, Corpus, CorpusFormat, SkipRecord};

const EXIT_IO: u8 = 2;
const EXIT_GRAMMAR: u8 = 3;
const EXIT_PARTIAL: u8 = 4;

const CONFIG_KEYS: &[&str] = &[
    "corpus",
    "corpus_format",
    "grammar",
    "seed",
    "n_examples",
    "top_k",
    "output_dir",
    "separator",
    "mask_probability",
    "retry_budget",
    "workers",
];

#[derive(Parser)]
#[command(name = "tabsynth", version, about = "Synthesize grounded question/SQL pre-training data over tables")]
struct Cli {
    /// `key = value` settings file; flags and environment variables win.
    #[arg(long, global = true, env = "TABSYNTH_CONFIG")]
    config: Option<PathBuf>,
    /// Worker threads (default: available cores). Output does not depend on it.
    #[arg(long, global = true, env = "TABSYNTH_WORKERS")]
    workers: Option<usize>,
    /// Run seed; every stage derives its own streams from it.
    #[arg(long, global = true, env = "TABSYNTH_SEED")]
    seed: Option<u64>,
    /// Directory for outputs whose path is not given explicitly.
    #[arg(long, global = true, env = "TABSYNTH_OUTPUT_DIR")]
    output_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CorpusArgs {
    /// Table corpus file or directory; repeatable.
    #[arg(long, env = "TABSYNTH_CORPUS", value_delimiter = ',')]
    corpus: Vec<PathBuf>,
    /// `jsonl` (tables, one per line) or `csv` (directory of CSV files).
    #[arg(long, env = "TABSYNTH_CORPUS_FORMAT")]
    corpus_format: Option<CorpusFormat>,
    /// Write skipped records here as JSONL.
    #[arg(long)]
    skip_report: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Abstract seed pairs into SQL templates and emit rule stubs for the most frequent ones.
    Mine {
        /// JSONL of {"question", "sql", "table_id"}.
        #[arg(long)]
        seeds: PathBuf,
        #[command(flatten)]
        corpus: CorpusArgs,
        #[arg(long, env = "TABSYNTH_TOP_K")]
        top_k: Option<usize>,
        /// Stub grammar output (default: <output-dir>/stubs.grammar).
        #[arg(long)]
        output: Option<PathBuf>,
        /// Also write the frequency table (count, template) as TSV.
        #[arg(long)]
        frequencies: Option<PathBuf>,
    },
    /// Check a grammar file; with --corpus also report how many tables fit each rule.
    ValidateGrammar {
        #[arg(long, env = "TABSYNTH_GRAMMAR")]
        grammar: Option<PathBuf>,
        #[command(flatten)]
        corpus: CorpusArgs,
    },
    /// Generate labeled question/SQL examples.
    Synthesize {
        /// Grammar file (default: the bundled starter grammar).
        #[arg(long, env = "TABSYNTH_GRAMMAR")]
        grammar: Option<PathBuf>,
        #[command(flatten)]
        corpus: CorpusArgs,
        #[arg(long, short = 'n', env = "TABSYNTH_N_EXAMPLES")]
        n_examples: Option<usize>,
        #[arg(long, env = "TABSYNTH_RETRY_BUDGET")]
        retry_budget: Option<usize>,
        /// Example JSONL output (default: <output-dir>/examples.jsonl).
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Recompute column labels for an existing JSONL with `sql` and `table_id` fields.
    Label {
        #[arg(long)]
        input: PathBuf,
        #[command(flatten)]
        corpus: CorpusArgs,
        /// Default: <output-dir>/labeled.jsonl.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Build the pre-training dataset from labeled examples and optional MLM utterances.
    Serialize {
        #[arg(long)]
        examples: Option<PathBuf>,
        /// JSONL of {"text", "table_id"} for MLM records.
        #[arg(long)]
        utterances: Option<PathBuf>,
        #[command(flatten)]
        corpus: CorpusArgs,
        /// Label vocabulary to use; built from the examples when absent.
        #[arg(long)]
        vocab: Option<PathBuf>,
        /// Where to write the vocabulary in use (default: <output-dir>/vocab.txt).
        #[arg(long)]
        vocab_out: Option<PathBuf>,
        #[arg(long, env = "TABSYNTH_SEPARATOR")]
        separator: Option<String>,
        #[arg(long, env = "TABSYNTH_MASK_PROBABILITY")]
        mask_probability: Option<f64>,
        /// Dataset output (default: <output-dir>/dataset.jsonl).
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Summarize an example or dataset JSONL.
    Stats {
        input: PathBuf,
        /// Shows SSP class indices as labels.
        #[arg(long)]
        vocab: Option<PathBuf>,
        /// Print JSON instead of text.
        #[arg(long)]
        json: bool,
    },
}

struct Failure {
    code: u8,
    error: anyhow::Error,
}

type Result<T> = std::result::Result<T, Failure>;

trait OrExit<T> {
    fn or_exit(self, code: u8) -> Result<T>;
}

impl<T, E: Into<anyhow::Error>> OrExit<T> for std::result::Result<T, E> {
    fn or_exit(self, code: u8) -> Result<T> {
        self.map_err(|e| Failure { code, error: e.into() })
    }
}

/// Settings from the config file.
#[derive(Default)]
struct Config {
    values: BTreeMap<String, String>,
}

impl Config {
    fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut values = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("{}:{}: expected `key = value`", path.display(), i + 1))?;
            let key = k.trim().replace('-', "_");
            if !CONFIG_KEYS.contains(&key.as_str()) {
                bail!("{}:{}: unknown key {key:?}", path.display(), i + 1);
            }
            values.insert(key, v.trim().to_string());
        }
        Ok(Self { values })
    }

    fn get<T: FromStr>(&self, key: &str) -> anyhow::Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        self.values
            .get(key)
            .map(|v| v.parse::<T>().map_err(|e| anyhow!("config {key} = {v:?}: {e}")))
            .transpose()
    }

    /// `flag` if set, else the config value.
    fn pick<T: FromStr>(&self, flag: Option<T>, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        match flag {
            Some(v) => Ok(Some(v)),
            None => self.get(key).or_exit(EXIT_IO),
        }
    }
}

struct RunContext {
    config: Config,
    workers: usize,
    seed: u64,
    output_dir: PathBuf,
}

impl RunContext {
    fn output(&self, explicit: Option<PathBuf>, default_name: &str) -> PathBuf {
        explicit.unwrap_or_else(|| self.output_dir.join(default_name))
    }

    fn corpus(&self, args: &CorpusArgs) -> Result<Corpus> {
        let paths: Vec<PathBuf> = if args.corpus.is_empty() {
            self.config
                .values
                .get("corpus")
                .map(|v| v.split(',').map(|p| PathBuf::from(p.trim())).collect())
                .unwrap_or_default()
        } else {
            args.corpus.clone()
        };
        if paths.is_empty() {
            return Err(Failure {
                code: EXIT_IO,
                error: anyhow!("no corpus given (--corpus or `corpus` in the config file)"),
            });
        }
        let format = self.config.pick(args.corpus_format, "corpus_format")?;
        let mut tables = Vec::new();
        let mut skips: Vec<SkipRecord> = Vec::new();
        for p in &paths {
            let format = format.unwrap_or(if p.is_dir() && !has_jsonl(p) {
                CorpusFormat::CsvDir
            } else {
                CorpusFormat::JsonlTables
            });
            let load = load_corpus(p, format).or_exit(EXIT_IO)?;
            tables.extend(load.tables);
            skips.extend(load.skips);
        }
        let mut seen = std::collections::HashSet::new();
        tables.retain(|t| {
            let fresh = seen.insert(t.table_id.clone());
            if !fresh {
                skips.push(SkipRecord {
                    path: t.source.clone(),
                    line: 0,
                    reason: format!("duplicate table id {:?}", t.table_id),
                });
            }
            fresh
        });
        report_skips("corpus", &skips, args.skip_report.as_deref())?;
        eprintln!("loaded {} tables", tables.len());
        Ok(Corpus::new(tables))
    }

    fn grammar(&self, flag: Option<PathBuf>) -> Result<Grammar> {
        match self.config.pick(flag, "grammar")? {
            Some(path) => load_grammar(&path)
                .with_context(|| format!("grammar {}", path.display()))
                .or_exit(EXIT_GRAMMAR),
            None => Ok(starter_grammar()),
        }
    }
}

fn has_jsonl(dir: &Path) -> bool {
    std::fs::read_dir(dir).is_ok_and(|entries| {
        entries
            .flatten()
            .any(|e| e.path().extension().is_some_and(|x| x == "jsonl"))
    })
}

fn report_skips(what: &str, skips: &[SkipRecord], path: Option<&Path>) -> Result<()> {
    if !skips.is_empty() {
        eprintln!("{what}: skipped {} records", skips.len());
        for s in skips.iter().take(5) {
            eprintln!("  {}:{}: {}", s.path, s.line, s.reason);
        }
    }
    if let Some(p) = path {
        write_skip_report(p, skips)
            .with_context(|| format!("writing {}", p.display()))
            .or_exit(EXIT_IO)?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let config = match &cli.config {
        Some(p) => Config::load(p).or_exit(EXIT_IO)?,
        None => Config::default(),
    };
    let default_workers = std::thread::available_parallelism().map_or(1, |n| n.get());
    let ctx = RunContext {
        workers: config.pick(cli.workers, "workers")?.unwrap_or(default_workers),
        seed: config.pick(cli.seed, "seed")?.unwrap_or(0),
        output_dir: config.pick(cli.output_dir, "output_dir")?.unwrap_or_else(|| PathBuf::from(".")),
        config,
    };
    match cli.command {
        Command::Mine {
            seeds,
            corpus,
            top_k,
            output,
            frequencies,
        } => {
            let top_k = ctx.config.pick(top_k, "top_k")?.unwrap_or(50);
            let corpus_ = ctx.corpus(&corpus)?;
            let load = load_seed_pairs(&seeds).or_exit(EXIT_IO)?;
            let result = mine_templates(&load.pairs, &corpus_, top_k);
            let mut skips = load.skips;
            skips.extend(result.skipped.iter().map(|s| SkipRecord {
                path: seeds.display().to_string(),
                ..s.clone()
            }));
            report_skips("seeds", &skips, None)?;
            let out = ctx.output(output, "stubs.grammar");
            let lexicon = starter_grammar().lexicon;
            emit_rule_stubs(&result.groups, &lexicon, EXEMPLAR_CAP, &out)
                .with_context(|| format!("writing {}", out.display()))
                .or_exit(EXIT_IO)?;
            let table: String = result
                .groups
                .iter()
                .map(|g| format!("{}\t{}\n", g.count, g.template))
                .collect();
            if let Some(p) = frequencies {
                std::fs::write(&p, &table)
                    .with_context(|| format!("writing {}", p.display()))
                    .or_exit(EXIT_IO)?;
            }
            print!("{table}");
            eprintln!(
                "{} pairs grouped into {} templates; wrote {} stubs to {}",
                result.grouped,
                result.distinct_templates,
                result.groups.len(),
                out.display()
            );
        }
        Command::ValidateGrammar { grammar, corpus } => {
            let g = ctx.grammar(grammar)?;
            println!(
                "ok: {} rules, {} column labels",
                g.rules.len(),
                grammar_label_space(&g).len()
            );
            if !corpus.corpus.is_empty() || ctx.config.values.contains_key("corpus") {
                let c = ctx.corpus(&corpus)?;
                for e in eligibility(&g, &c) {
                    println!("{}\t{}/{} tables", e.rule_id, e.eligible_tables, e.total_tables);
                }
            }
        }
        Command::Synthesize {
            grammar,
            corpus,
            n_examples,
            retry_budget,
            output,
        } => {
            let g = ctx.grammar(grammar)?;
            let c = ctx.corpus(&corpus)?;
            let opts = GenerateOptions {
                n: ctx.config.pick(n_examples, "n_examples")?.unwrap_or(1000),
                seed: ctx.seed,
                workers: ctx.workers,
                retry_budget: ctx.config.pick(retry_budget, "retry_budget")?.unwrap_or(DEFAULT_RETRY_BUDGET),
            };
            let out = ctx.output(output, "examples.jsonl");
            match generate(&g, &c, &opts) {
                Ok(examples) => {
                    write_jsonl(&out, &examples).or_exit(EXIT_IO)?;
                    eprintln!("wrote {} examples to {}", examples.len(), out.display());
                }
                Err(partial) => {
                    write_jsonl(&out, &partial.examples).or_exit(EXIT_IO)?;
                    eprintln!("{partial}; partial output kept at {}", out.display());
                    let ineligible = partial.ineligible_rules();
                    if !ineligible.is_empty() {
                        eprintln!("rules no table can host:");
                        for r in &ineligible {
                            eprintln!("  {r}");
                        }
                    }
                    let mut reasons: BTreeMap<(&str, &str), usize> = BTreeMap::new();
                    for f in &partial.failed {
                        for (why, n) in &f.reasons {
                            *reasons.entry((f.rule_id.as_str(), why.as_str())).or_default() += n;
                        }
                    }
                    eprintln!("binding failures by rule:");
                    for ((rule, why), n) in reasons {
                        eprintln!("  {rule}\t{why}\t{n}");
                    }
                    return Err(Failure {
                        code: EXIT_PARTIAL,
                        error: anyhow!("partial generation"),
                    });
                }
            }
        }
        Command::Label { input, corpus, output } => {
            let c = ctx.corpus(&corpus)?;
            let result = relabel(&input, &c)
                .with_context(|| format!("reading {}", input.display()))
                .or_exit(EXIT_IO)?;
            report_skips("input", &result.skips, corpus.skip_report.as_deref())?;
            let out = ctx.output(output, "labeled.jsonl");
            write_jsonl(&out, &result.records).or_exit(EXIT_IO)?;
            eprintln!("labeled {} records into {}", result.records.len(), out.display());
        }
        Command::Serialize {
            examples,
            utterances,
            corpus,
            vocab,
            vocab_out,
            separator,
            mask_probability,
            output,
        } => {
            let separator = ctx.config.pick(separator, "separator")?.unwrap_or_else(|| DEFAULT_SEPARATOR.into());
            let p = ctx
                .config
                .pick(mask_probability, "mask_probability")?
                .unwrap_or(DEFAULT_MASK_PROBABILITY);
            if !(0.0..=1.0).contains(&p) {
                return Err(Failure {
                    code: EXIT_IO,
                    error: anyhow!("mask probability {p} is outside [0, 1]"),
                });
            }
            if examples.is_none() && utterances.is_none() {
                return Err(Failure {
                    code: EXIT_IO,
                    error: anyhow!("nothing to serialize: give --examples and/or --utterances"),
                });
            }
            let c = ctx.corpus(&corpus)?;
            let examples = match &examples {
                Some(p) => read_examples(p)
                    .with_context(|| format!("reading {}", p.display()))
                    .or_exit(EXIT_IO)?,
                None => Vec::new(),
            };
            let vocab = match &vocab {
                Some(p) => LabelVocabulary::read(p)
                    .with_context(|| format!("reading {}", p.display()))
                    .or_exit(EXIT_IO)?,
                None => build_vocabulary(&examples),
            };
            let ssp = build_ssp_records(&examples, &c, &vocab, &separator, ctx.workers).or_exit(EXIT_IO)?;
            let mlm = match &utterances {
                Some(path) => {
                    let load = load_utterances(path, &c).or_exit(EXIT_IO)?;
                    report_skips("utterances", &load.skips, None)?;
                    let policy = MaskPolicy::with_probability(p);
                    build_mlm_records(&load.records, &c, &policy, &separator, ctx.seed, ctx.workers)
                }
                None => Vec::new(),
            };
            let (n_ssp, n_mlm) = (ssp.len(), mlm.len());
            let out = ctx.output(output, "dataset.jsonl");
            write_dataset(ssp, mlm, &out, ctx.seed)
                .with_context(|| format!("writing {}", out.display()))
                .or_exit(EXIT_IO)?;
            let vocab_path = ctx.output(vocab_out, "vocab.txt");
            vocab.write(&vocab_path).or_exit(EXIT_IO)?;
            eprintln!(
                "wrote {n_ssp} SSP and {n_mlm} MLM records to {}; vocabulary of {} labels to {}",
                out.display(),
                vocab.len(),
                vocab_path.display()
            );
        }
        Command::Stats { input, vocab, json } => {
            let vocab = match &vocab {
                Some(p) => Some(LabelVocabulary::read(p).or_exit(EXIT_IO)?),
                None => None,
            };
            let s = stats(&input, vocab.as_ref())
                .with_context(|| format!("reading {}", input.display()))
                .or_exit(EXIT_IO)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&s).or_exit(EXIT_IO)?);
            } else {
                print!("{}", s.render());
            }
        }
    }
    std::io::stdout().flush().or_exit(EXIT_IO)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
