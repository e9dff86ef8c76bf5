//! Subcommands. Exit codes: 0 success, 1 runtime failure, 2 usage or
//! configuration error.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use nlspan_core::checkpoint;
use nlspan_core::eval::{f1_by_min_span_length, score_corpus, EvalParams, EvalReport, LengthF1};
use nlspan_core::model::Model;
use nlspan_core::patterns::{build_pattern_vocab, NGramSet, PatternFilter};
use nlspan_core::selftest::{self, SelftestOptions};
use nlspan_core::training::{evaluate_corpus, fit_with, EpochLog};
use nlspan_core::treebank::{collapse_unaries, Tree};

use crate::config::RunConfig;
use crate::tokens::parse_tagged_text;
use crate::treebank_io::{format_treebank, read_treebank};

#[derive(Debug, Parser)]
#[command(name = "nlspan", version, about = "Span-based constituency parser with pattern and consistency objectives")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model from a key = value config file.
    Train {
        config: PathBuf,
        /// Do not echo log lines to stdout.
        #[arg(long)]
        quiet: bool,
    },
    /// Parse sentences of word_POS tokens, one per line.
    Parse {
        #[arg(long)]
        checkpoint: PathBuf,
        input: PathBuf,
        /// Defaults to stdout.
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
    /// Labeled bracketing precision, recall and F1.
    Eval {
        gold: PathBuf,
        pred: PathBuf,
        /// Also report F1 over brackets of at least each of these lengths.
        #[arg(long, value_delimiter = ',')]
        by_length: Vec<usize>,
        /// Print the length breakdown as tab-separated rows.
        #[arg(long)]
        tsv: bool,
        /// Do not score the outermost bracket.
        #[arg(long)]
        exclude_root: bool,
        /// Delete punctuation tokens and treat PRT as ADVP.
        #[arg(long)]
        ignore_punct: bool,
    },
    /// Print the pattern vocabulary of a treebank.
    Patterns {
        treebank: PathBuf,
        /// N-gram sizes, e.g. 3 or 2,3.
        #[arg(long, short, default_value = "3")]
        n: NGramSet,
        #[arg(long, default_value_t = 0)]
        min_count: usize,
        #[arg(long, default_value_t = 0.0)]
        min_frac: f64,
    },
    /// Check the decoder against exhaustive search and all gradients
    /// against finite differences.
    Selftest {
        #[arg(long, hide = true)]
        corrupt_backward: bool,
    },
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

fn read_trees(path: &Path) -> Result<Vec<Tree>, CliError> {
    read_treebank(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let text = e.render().to_string();
            let _ = if code == 0 { out.write_all(text.as_bytes()) } else { err.write_all(text.as_bytes()) };
            return code;
        }
    };
    match execute(cli.command, out) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(command: Command, out: &mut dyn Write) -> Result<i32, CliError> {
    match command {
        Command::Train { config, quiet } => cmd_train(&config, quiet, out).map(|_| 0),
        Command::Parse { checkpoint, input, output } => {
            cmd_parse(&checkpoint, &input, output.as_deref(), out).map(|_| 0)
        }
        Command::Eval { gold, pred, by_length, tsv, exclude_root, ignore_punct } => {
            let mut params = if ignore_punct { EvalParams::punctuation_insensitive() } else { EvalParams::default() };
            params.exclude_root = exclude_root;
            cmd_eval(&gold, &pred, &by_length, tsv, &params, out).map(|_| 0)
        }
        Command::Patterns { treebank, n, min_count, min_frac } => {
            if !(0.0..=1.0).contains(&min_frac) {
                return Err(CliError::Usage("--min-frac must be in [0, 1]".to_string()));
            }
            cmd_patterns(&treebank, &n, PatternFilter { min_count, min_frac }, out).map(|_| 0)
        }
        Command::Selftest { corrupt_backward } => {
            let ok = cmd_selftest(SelftestOptions { corrupt_backward, ..SelftestOptions::default() }, out)?;
            Ok(if ok { 0 } else { 1 })
        }
    }
}

/// Summary of a finished training run.
#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
    pub test: Option<EvalReport>,
}

pub fn cmd_train(config_path: &Path, quiet: bool, out: &mut dyn Write) -> Result<TrainSummary, CliError> {
    let config = RunConfig::load(config_path).map_err(|e| CliError::Usage(e.to_string()))?;
    config.validate_paths().map_err(|e| CliError::Usage(e.to_string()))?;
    let train = read_trees(&config.train_path)?;
    let dev = read_trees(&config.dev_path)?;
    let test = config.test_path.as_deref().map(read_trees).transpose()?;
    if train.is_empty() || dev.is_empty() {
        return Err(CliError::Runtime("training and dev treebanks must be non-empty".to_string()));
    }

    let mut log = fs::File::create(&config.log_path)
        .map_err(|e| CliError::Runtime(format!("{}: {e}", config.log_path.display())))?;
    let mut io_error: Option<io::Error> = None;
    let mut emit = |line: &str, out: &mut dyn Write| {
        if io_error.is_none() {
            if let Err(e) = writeln!(log, "{line}") {
                io_error = Some(e);
            }
        }
        if !quiet {
            let _ = writeln!(out, "{line}");
        }
    };
    emit(EpochLog::HEADER, out);
    let outcome = fit_with(&train, &dev, &config.train, |l| emit(&l.to_string(), out)).map_err(runtime)?;
    if let Some(e) = io_error {
        return Err(CliError::Runtime(format!("{}: {e}", config.log_path.display())));
    }
    write_file(&config.checkpoint_path, &checkpoint::save(&outcome.model))?;

    let best = outcome.best();
    let _ = writeln!(out, "best epoch {} dev F1 {:.2}", best.epoch, best.dev.f1);
    let test = match test {
        Some(t) => {
            let r = evaluate_corpus(&outcome.model, &t, &config.train.eval).map_err(runtime)?;
            let _ = writeln!(out, "test LP {:.2} LR {:.2} F1 {:.2}", r.precision, r.recall, r.f1);
            Some(r)
        }
        None => None,
    };
    Ok(TrainSummary { best_epoch: outcome.best_epoch, log: outcome.log, test })
}

pub fn load_model(path: &Path) -> Result<Model, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    checkpoint::load(&text).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

pub fn cmd_parse(checkpoint: &Path, input: &Path, output: Option<&Path>, out: &mut dyn Write) -> Result<(), CliError> {
    let model = load_model(checkpoint)?;
    let text = fs::read_to_string(input).map_err(|e| CliError::Runtime(format!("{}: {e}", input.display())))?;
    let sentences = parse_tagged_text(&text).map_err(|e| CliError::Runtime(format!("{}: {e}", input.display())))?;
    let trees = sentences.iter().map(|s| model.parse(s)).collect::<Result<Vec<_>, _>>().map_err(runtime)?;
    let text = format_treebank(&trees);
    match output {
        Some(p) => write_file(p, &text),
        None => out.write_all(text.as_bytes()).map_err(runtime),
    }
}

fn format_f1(row: &LengthF1) -> String {
    row.f1.map_or_else(|| "undefined".to_string(), |f| format!("{f:.2}"))
}

pub fn cmd_eval(
    gold_path: &Path,
    pred_path: &Path,
    thresholds: &[usize],
    tsv: bool,
    params: &EvalParams,
    out: &mut dyn Write,
) -> Result<EvalReport, CliError> {
    if thresholds.windows(2).any(|w| w[0] >= w[1]) || thresholds.contains(&0) {
        return Err(CliError::Usage("--by-length thresholds must be positive and ascending".to_string()));
    }
    let gold = read_trees(gold_path)?;
    let pred = read_trees(pred_path)?;
    let r = score_corpus(&gold, &pred, params).map_err(runtime)?;
    let c = r.counts;
    let rows = [
        ("sentences", r.sentences.to_string()),
        ("gold brackets", c.gold.to_string()),
        ("predicted brackets", c.predicted.to_string()),
        ("matched brackets", c.matched.to_string()),
        ("exact matches", r.exact_matches.to_string()),
        ("LP", format!("{:.2}", r.precision)),
        ("LR", format!("{:.2}", r.recall)),
        ("F1", format!("{:.2}", r.f1)),
    ];
    let mut text = String::new();
    for (k, v) in rows {
        text += &format!("{k:<20}{v}\n");
    }
    if !thresholds.is_empty() {
        let breakdown = f1_by_min_span_length(&gold, &pred, thresholds, params).map_err(runtime)?;
        text.push('\n');
        if tsv {
            text += "min_len\tmatched\tgold\tpredicted\tF1\n";
            for b in &breakdown {
                let c = b.counts;
                text += &format!("{}\t{}\t{}\t{}\t{}\n", b.min_len, c.matched, c.gold, c.predicted, format_f1(b));
            }
        } else {
            text += &format!("{:<10}{:>10}{:>10}{:>10}{:>12}\n", "min_len", "matched", "gold", "predicted", "F1");
            for b in &breakdown {
                let c = b.counts;
                text += &format!(
                    "{:<10}{:>10}{:>10}{:>10}{:>12}\n",
                    b.min_len,
                    c.matched,
                    c.gold,
                    c.predicted,
                    format_f1(b)
                );
            }
        }
    }
    out.write_all(text.as_bytes()).map_err(runtime)?;
    Ok(r)
}

pub fn cmd_patterns(
    path: &Path,
    ngrams: &NGramSet,
    filter: PatternFilter,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    let trees: Vec<Tree> = read_trees(path)?.iter().map(collapse_unaries).collect();
    let vocab = build_pattern_vocab(&trees, ngrams, filter);
    let mut text = format!(
        "# {} patterns kept from {} occurrences in {} trees (n = {ngrams})\n",
        vocab.len() - 1,
        vocab.total_occurrences(),
        trees.len()
    );
    text += "index\tcount\tlabel\n";
    for (k, (label, count)) in vocab.vocab().labels().iter().zip(vocab.counts()).enumerate() {
        text += &format!("{k}\t{count}\t{label}\n");
    }
    out.write_all(text.as_bytes()).map_err(runtime)
}

pub fn cmd_selftest(options: SelftestOptions, out: &mut dyn Write) -> Result<bool, CliError> {
    let results = selftest::run(options);
    let width = results.iter().map(|r| r.name.len()).max().unwrap_or(0);
    let mut text = String::new();
    for r in &results {
        let status = if r.passed { "PASS" } else { "FAIL" };
        text += &format!("{status}  {:<width$}  {}\n", r.name, r.detail);
    }
    let failed = results.iter().filter(|r| !r.passed).count();
    if failed == 0 {
        text += &format!("all {} checks passed\n", results.len());
    } else {
        text += &format!("{failed} of {} checks failed\n", results.len());
    }
    out.write_all(text.as_bytes()).map_err(runtime)?;
    Ok(failed == 0)
}
