//! Self-describing text checkpoints.
//!
//! ```text
//! nlspan-checkpoint 1
//! [config]
//! word_dim 32
//! ...
//! [words 51]
//! <unk>
//! the
//! ...
//! [tags N] / [labels N]     one label per line
//! [patterns N TOTAL]        "<count>\t<label>" per line
//! [param NAME ROWS COLS]    one matrix row per line, f64 bit patterns in hex
//! [end]
//! ```
//!
//! Floats are stored as their IEEE-754 bit patterns, so `load(save(m))`
//! reproduces every parameter bit for bit.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt::{self, Write as _};

use crate::model::{ConsistencyMode, Model, ModelConfig, ModelError, PatternNorm, Vocabularies};
use crate::numerics::{Matrix, ParameterStore};
use crate::patterns::{Membership, NGramSet, PatternVocab};
use crate::vocab::Vocab;

pub const MAGIC: &str = "nlspan-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum CheckpointError {
    /// Malformed content at a 1-based line.
    Syntax {
        line: usize,
        message: String,
    },
    UnsupportedVersion(String),
    Model(ModelError),
}

impl fmt::Display for CheckpointError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CheckpointError::Syntax { line, message } => write!(f, "checkpoint line {line}: {message}"),
            CheckpointError::UnsupportedVersion(v) => write!(f, "unsupported checkpoint version {v:?}"),
            CheckpointError::Model(e) => write!(f, "checkpoint does not describe a valid model: {e}"),
        }
    }
}

impl core::error::Error for CheckpointError {}

impl From<ModelError> for CheckpointError {
    fn from(e: ModelError) -> Self {
        CheckpointError::Model(e)
    }
}

fn hex(x: f64) -> String {
    format!("{:016x}", x.to_bits())
}

fn write_vocab(out: &mut String, name: &str, v: &Vocab) {
    let _ = writeln!(out, "[{name} {}]", v.len());
    for l in v.labels() {
        out.push_str(l);
        out.push('\n');
    }
}

pub fn save(model: &Model) -> String {
    let c = &model.config;
    let mut out = String::new();
    let _ = writeln!(out, "{MAGIC} {VERSION}");
    out.push_str("[config]\n");
    let _ = writeln!(out, "word_dim {}", c.word_dim);
    let _ = writeln!(out, "pos_dim {}", c.pos_dim);
    let _ = writeln!(out, "hidden_dim {}", c.hidden_dim);
    let _ = writeln!(out, "ngrams {}", c.ngrams);
    let _ = writeln!(out, "pattern_scale {}", hex(c.pattern_scale));
    let _ = writeln!(out, "consistency_scale {}", hex(c.consistency_scale));
    let norm = match c.pattern_norm {
        PatternNorm::Mean => "mean",
        PatternNorm::Sum => "sum",
    };
    let _ = writeln!(out, "pattern_norm {norm}");
    let mode = match c.consistency_mode {
        ConsistencyMode::Full => "full",
        ConsistencyMode::PositiveOnly => "positive_only",
    };
    let _ = writeln!(out, "consistency_mode {mode}");
    let membership = match c.membership {
        Membership::DirectElement => "direct",
        Membership::Nested => "nested",
    };
    let _ = writeln!(out, "membership {membership}");
    let _ = writeln!(out, "seed {}", c.seed);

    let v = &model.vocabs;
    write_vocab(&mut out, "words", &v.words);
    write_vocab(&mut out, "tags", &v.tags);
    write_vocab(&mut out, "labels", &v.labels);
    let _ = writeln!(out, "[patterns {} {}]", v.patterns.len(), v.patterns.total_occurrences());
    for (label, count) in v.patterns.vocab().labels().iter().zip(v.patterns.counts()) {
        let _ = writeln!(out, "{count}\t{label}");
    }

    for (_, p) in model.store.iter() {
        let (rows, cols) = p.value.shape();
        let _ = writeln!(out, "[param {} {rows} {cols}]", p.name);
        for r in 0..rows {
            let row: Vec<String> = p.value.row(r).iter().map(|&x| hex(x)).collect();
            out.push_str(&row.join(" "));
            out.push('\n');
        }
    }
    out.push_str("[end]\n");
    out
}

struct Lines<'a> {
    inner: core::iter::Enumerate<core::str::Lines<'a>>,
    line: usize,
}

impl<'a> Lines<'a> {
    fn err(&self, message: impl Into<String>) -> CheckpointError {
        CheckpointError::Syntax { line: self.line, message: message.into() }
    }

    fn next(&mut self) -> Result<&'a str, CheckpointError> {
        match self.inner.next() {
            Some((k, l)) => {
                self.line = k + 1;
                Ok(l)
            }
            None => {
                self.line += 1;
                Err(self.err("unexpected end of file"))
            }
        }
    }

    /// Reads `[name args...]` and returns the args.
    fn header(&mut self, name: &str) -> Result<Vec<&'a str>, CheckpointError> {
        let l = self.next()?;
        let inner = l
            .strip_prefix('[')
            .and_then(|s| s.strip_suffix(']'))
            .ok_or_else(|| self.err(format!("expected [{name} ...]")))?;
        let mut parts = inner.split(' ');
        if parts.next() != Some(name) {
            return Err(self.err(format!("expected [{name} ...], found {l:?}")));
        }
        Ok(parts.collect())
    }

    fn key(&mut self, key: &str) -> Result<&'a str, CheckpointError> {
        let l = self.next()?;
        l.strip_prefix(key).and_then(|s| s.strip_prefix(' ')).ok_or_else(|| self.err(format!("expected key {key}")))
    }

    fn parse<T: core::str::FromStr>(&self, s: &str, what: &str) -> Result<T, CheckpointError> {
        s.parse().map_err(|_| self.err(format!("invalid {what} {s:?}")))
    }

    fn float(&self, s: &str) -> Result<f64, CheckpointError> {
        if s.len() != 16 {
            return Err(self.err(format!("invalid float bits {s:?}")));
        }
        u64::from_str_radix(s, 16).map(f64::from_bits).map_err(|_| self.err(format!("invalid float bits {s:?}")))
    }

    fn vocab(&mut self, name: &str) -> Result<Vocab, CheckpointError> {
        let args = self.header(name)?;
        let [n] = args[..] else { return Err(self.err("expected one count")) };
        let n: usize = self.parse(n, "count")?;
        if n == 0 {
            return Err(self.err("vocabulary needs its reserved entry"));
        }
        let labels = (0..n).map(|_| self.next()).collect::<Result<Vec<_>, _>>()?;
        let v = Vocab::from_labels(labels.iter());
        if v.len() != n {
            return Err(self.err(format!("duplicate entries in {name}")));
        }
        Ok(v)
    }
}

pub fn load(text: &str) -> Result<Model, CheckpointError> {
    let mut r = Lines { inner: text.lines().enumerate(), line: 0 };
    let first = r.next()?;
    let version =
        first.strip_prefix(MAGIC).and_then(|s| s.strip_prefix(' ')).ok_or_else(|| r.err("not a checkpoint"))?;
    if version != VERSION.to_string() {
        return Err(CheckpointError::UnsupportedVersion(version.to_string()));
    }
    r.header("config")?;
    let word_dim = r.key("word_dim")?;
    let word_dim = r.parse(word_dim, "word_dim")?;
    let pos_dim = r.key("pos_dim")?;
    let pos_dim = r.parse(pos_dim, "pos_dim")?;
    let hidden_dim = r.key("hidden_dim")?;
    let hidden_dim = r.parse(hidden_dim, "hidden_dim")?;
    let ngrams = r.key("ngrams")?;
    let ngrams: NGramSet = r.parse(ngrams, "ngrams")?;
    let pattern_scale = r.key("pattern_scale")?;
    let pattern_scale = r.float(pattern_scale)?;
    let consistency_scale = r.key("consistency_scale")?;
    let consistency_scale = r.float(consistency_scale)?;
    let pattern_norm = match r.key("pattern_norm")? {
        "mean" => PatternNorm::Mean,
        "sum" => PatternNorm::Sum,
        other => return Err(r.err(format!("invalid pattern_norm {other:?}"))),
    };
    let consistency_mode = match r.key("consistency_mode")? {
        "full" => ConsistencyMode::Full,
        "positive_only" => ConsistencyMode::PositiveOnly,
        other => return Err(r.err(format!("invalid consistency_mode {other:?}"))),
    };
    let membership = match r.key("membership")? {
        "direct" => Membership::DirectElement,
        "nested" => Membership::Nested,
        other => return Err(r.err(format!("invalid membership {other:?}"))),
    };
    let seed = r.key("seed")?;
    let seed = r.parse(seed, "seed")?;
    let config = ModelConfig {
        word_dim,
        pos_dim,
        hidden_dim,
        ngrams,
        pattern_scale,
        consistency_scale,
        pattern_norm,
        consistency_mode,
        membership,
        seed,
    };

    let words = r.vocab("words")?;
    let tags = r.vocab("tags")?;
    let labels = r.vocab("labels")?;
    let args = r.header("patterns")?;
    let [n, total] = args[..] else { return Err(r.err("expected pattern count and total")) };
    let n: usize = r.parse(n, "count")?;
    let total: usize = r.parse(total, "total")?;
    let mut names = Vec::with_capacity(n);
    let mut counts = Vec::with_capacity(n);
    for _ in 0..n {
        let l = r.next()?;
        let (c, label) = l.split_once('\t').ok_or_else(|| r.err("expected <count>\\t<label>"))?;
        counts.push(r.parse(c, "count")?);
        names.push(label.to_string());
    }
    let patterns = PatternVocab::from_parts(names, counts, total).ok_or_else(|| r.err("invalid pattern vocabulary"))?;
    let vocabs = Vocabularies { words, tags, labels, patterns };

    let mut store = ParameterStore::new();
    loop {
        let args = {
            let l = r.next()?;
            if l == "[end]" {
                break;
            }
            let inner = l
                .strip_prefix("[param ")
                .and_then(|s| s.strip_suffix(']'))
                .ok_or_else(|| r.err("expected [param ...] or [end]"))?;
            inner.split(' ').collect::<Vec<_>>()
        };
        let [name, rows, cols] = args[..] else { return Err(r.err("expected name, rows and cols")) };
        let rows: usize = r.parse(rows, "rows")?;
        let cols: usize = r.parse(cols, "cols")?;
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            let l = r.next()?;
            let before = data.len();
            for tok in l.split(' ').filter(|t| !t.is_empty()) {
                data.push(r.float(tok)?);
            }
            if data.len() - before != cols {
                return Err(r.err(format!("expected {cols} values")));
            }
        }
        let m = Matrix::from_vec(rows, cols, data).map_err(|e| r.err(e.to_string()))?;
        store.add(name, m).map_err(|e| r.err(e.to_string()))?;
    }
    Ok(Model::from_parts(config, vocabs, store)?)
}
