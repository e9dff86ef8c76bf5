//! `key = value` run configuration for `nlspan train`.
//!
//! Blank lines and lines starting with `#` are ignored. Relative paths are
//! resolved against the directory holding the config file. `preset = ptb`
//! (default) or `preset = ctb` chooses the n-gram size and pattern
//! filter; explicit keys override the preset regardless of order.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nlspan_core::model::{ConsistencyMode, PatternNorm};
use nlspan_core::patterns::{Membership, NGramSet, PatternFilter};
use nlspan_core::training::TrainConfig;

pub const KEYS: &[&str] = &[
    "train_path",
    "dev_path",
    "test_path",
    "checkpoint_path",
    "log_path",
    "preset",
    "n_set",
    "min_pattern_count",
    "min_pattern_frac",
    "embed_dim",
    "pos_dim",
    "hidden_dim",
    "lr",
    "max_epochs",
    "patience",
    "pattern_scale",
    "consistency_scale",
    "pattern_norm",
    "consistency_mode",
    "membership",
    "seed",
];

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {message}")]
    Read { path: PathBuf, message: String },
    #[error("line {line}: expected key = value")]
    Syntax { line: usize },
    #[error("line {line}: unknown key {key:?}")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: key {key:?} given twice")]
    DuplicateKey { line: usize, key: String },
    #[error("line {line}: invalid value {value:?} for {key}: {reason}")]
    InvalidValue { line: usize, key: String, value: String, reason: String },
    #[error("missing required key {0}")]
    Missing(&'static str),
    #[error("{key} = {path}: {reason}")]
    BadPath { key: &'static str, path: PathBuf, reason: &'static str },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub train_path: PathBuf,
    pub dev_path: PathBuf,
    pub test_path: Option<PathBuf>,
    pub checkpoint_path: PathBuf,
    /// Defaults to the checkpoint path with `.log` appended.
    pub log_path: PathBuf,
    pub train: TrainConfig,
}

struct Entry {
    line: usize,
    value: String,
}

fn value<T: FromStr>(entries: &BTreeMap<String, Entry>, key: &str) -> Result<Option<T>, ConfigError>
where
    T::Err: std::fmt::Display,
{
    entries
        .get(key)
        .map(|e| {
            e.value.parse::<T>().map_err(|err| ConfigError::InvalidValue {
                line: e.line,
                key: key.to_string(),
                value: e.value.clone(),
                reason: err.to_string(),
            })
        })
        .transpose()
}

fn choice<T: Copy>(
    entries: &BTreeMap<String, Entry>,
    key: &str,
    options: &[(&str, T)],
) -> Result<Option<T>, ConfigError> {
    let Some(e) = entries.get(key) else { return Ok(None) };
    options.iter().find(|(name, _)| *name == e.value).map(|&(_, v)| Some(v)).ok_or_else(|| {
        let names: Vec<&str> = options.iter().map(|(n, _)| *n).collect();
        ConfigError::InvalidValue {
            line: e.line,
            key: key.to_string(),
            value: e.value.clone(),
            reason: format!("expected one of {}", names.join(", ")),
        }
    })
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path)
            .map_err(|e| ConfigError::Read { path: path.to_path_buf(), message: e.to_string() })?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }

    pub fn parse(text: &str, base: &Path) -> Result<Self, ConfigError> {
        let mut entries: BTreeMap<String, Entry> = BTreeMap::new();
        for (k, raw) in text.lines().enumerate() {
            let line = k + 1;
            let l = raw.trim();
            if l.is_empty() || l.starts_with('#') {
                continue;
            }
            let (key, val) = l.split_once('=').ok_or(ConfigError::Syntax { line })?;
            let (key, val) = (key.trim(), val.trim());
            if !KEYS.contains(&key) {
                return Err(ConfigError::UnknownKey { line, key: key.to_string() });
            }
            if entries.contains_key(key) {
                return Err(ConfigError::DuplicateKey { line, key: key.to_string() });
            }
            entries.insert(key.to_string(), Entry { line, value: val.to_string() });
        }

        let path = |key: &'static str| entries.get(key).map(|e| base.join(&e.value));
        let train_path = path("train_path").ok_or(ConfigError::Missing("train_path"))?;
        let dev_path = path("dev_path").ok_or(ConfigError::Missing("dev_path"))?;
        let checkpoint_path = path("checkpoint_path").ok_or(ConfigError::Missing("checkpoint_path"))?;
        let test_path = path("test_path");
        let log_path = path("log_path").unwrap_or_else(|| {
            let mut p = checkpoint_path.clone().into_os_string();
            p.push(".log");
            PathBuf::from(p)
        });

        let mut t = TrainConfig::default();
        let ctb = choice(&entries, "preset", &[("ptb", false), ("ctb", true)])?.unwrap_or(false);
        if ctb {
            t.model.ngrams = NGramSet::single(2).expect("2 is a valid size");
            t.pattern_filter = PatternFilter::ctb();
        }
        if let Some(n) = value::<NGramSet>(&entries, "n_set")? {
            t.model.ngrams = n;
        }
        if let Some(c) = value(&entries, "min_pattern_count")? {
            t.pattern_filter.min_count = c;
        }
        if let Some(f) = value(&entries, "min_pattern_frac")? {
            t.pattern_filter.min_frac = f;
        }
        if let Some(d) = value(&entries, "embed_dim")? {
            t.model.word_dim = d;
        }
        if let Some(d) = value(&entries, "pos_dim")? {
            t.model.pos_dim = d;
        }
        if let Some(d) = value(&entries, "hidden_dim")? {
            t.model.hidden_dim = d;
        }
        if let Some(lr) = value(&entries, "lr")? {
            t.learning_rate = lr;
        }
        if let Some(e) = value(&entries, "max_epochs")? {
            t.max_epochs = e;
        }
        if let Some(p) = value(&entries, "patience")? {
            t.patience = p;
        }
        if let Some(s) = value(&entries, "pattern_scale")? {
            t.model.pattern_scale = s;
        }
        if let Some(s) = value(&entries, "consistency_scale")? {
            t.model.consistency_scale = s;
        }
        if let Some(n) = choice(&entries, "pattern_norm", &[("mean", PatternNorm::Mean), ("sum", PatternNorm::Sum)])? {
            t.model.pattern_norm = n;
        }
        if let Some(m) = choice(
            &entries,
            "consistency_mode",
            &[("full", ConsistencyMode::Full), ("positive_only", ConsistencyMode::PositiveOnly)],
        )? {
            t.model.consistency_mode = m;
        }
        if let Some(m) =
            choice(&entries, "membership", &[("direct", Membership::DirectElement), ("nested", Membership::Nested)])?
        {
            t.model.membership = m;
        }
        if let Some(s) = value(&entries, "seed")? {
            t.seed = s;
            t.model.seed = s;
        }
        if !(0.0..=1.0).contains(&t.pattern_filter.min_frac) {
            return Err(ConfigError::Invalid("min_pattern_frac must be in [0, 1]".to_string()));
        }
        t.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(RunConfig { train_path, dev_path, test_path, checkpoint_path, log_path, train: t })
    }

    /// Input files must exist; output files must have an existing parent.
    pub fn validate_paths(&self) -> Result<(), ConfigError> {
        let inputs = [
            ("train_path", Some(&self.train_path)),
            ("dev_path", Some(&self.dev_path)),
            ("test_path", self.test_path.as_ref()),
        ];
        for (key, p) in inputs {
            if let Some(p) = p {
                if !p.is_file() {
                    return Err(ConfigError::BadPath { key, path: p.clone(), reason: "not a readable file" });
                }
            }
        }
        for (key, p) in [("checkpoint_path", &self.checkpoint_path), ("log_path", &self.log_path)] {
            let parent = p.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
            if !parent.is_dir() {
                return Err(ConfigError::BadPath { key, path: p.clone(), reason: "directory does not exist" });
            }
            if p.is_dir() {
                return Err(ConfigError::BadPath { key, path: p.clone(), reason: "is a directory" });
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MIN: &str = "train_path = a.trees\ndev_path = b.trees\ncheckpoint_path = out/model.ckpt\n";

    #[test]
    fn defaults() {
        let c = RunConfig::parse(MIN, Path::new("/data")).unwrap();
        assert_eq!(c.train_path, PathBuf::from("/data/a.trees"));
        assert_eq!(c.log_path, PathBuf::from("/data/out/model.ckpt.log"));
        assert_eq!(c.test_path, None);
        let t = &c.train;
        assert_eq!(t.model.ngrams.sizes(), &[3]);
        assert_eq!((t.pattern_filter.min_count, t.pattern_filter.min_frac), (5, 0.0));
        assert_eq!((t.model.pattern_scale, t.model.consistency_scale, t.patience), (1.0, 5.0, 60));
        assert_eq!((t.model.word_dim, t.model.pos_dim, t.model.hidden_dim), (32, 16, 64));
    }

    #[test]
    fn preset_and_overrides() {
        let text = format!(
            "{MIN}n_set = 2,3\npreset = ctb\n# comment\n\nconsistency_scale=0\nseed = 9\nmembership = nested\n"
        );
        let c = RunConfig::parse(&text, Path::new(".")).unwrap();
        assert_eq!(c.train.model.ngrams.sizes(), &[2, 3]);
        assert_eq!((c.train.pattern_filter.min_count, c.train.pattern_filter.min_frac), (0, 0.005));
        assert_eq!(c.train.model.consistency_scale, 0.0);
        assert_eq!((c.train.seed, c.train.model.seed), (9, 9));
        assert_eq!(c.train.model.membership, Membership::Nested);
        let ctb = RunConfig::parse(&format!("{MIN}preset = ctb\n"), Path::new(".")).unwrap();
        assert_eq!(ctb.train.model.ngrams.sizes(), &[2]);
    }

    #[test]
    fn rejections() {
        let p = Path::new(".");
        assert_eq!(RunConfig::parse("dev_path = b\ncheckpoint_path = c\n", p), Err(ConfigError::Missing("train_path")));
        assert!(RunConfig::parse("dev_path = b\ncheckpoint_path = c\n", p)
            .unwrap_err()
            .to_string()
            .contains("train_path"));
        assert_eq!(
            RunConfig::parse(&format!("{MIN}colour = red\n"), p),
            Err(ConfigError::UnknownKey { line: 4, key: "colour".to_string() })
        );
        assert!(matches!(
            RunConfig::parse(&format!("{MIN}seed = 1\nseed = 2\n"), p),
            Err(ConfigError::DuplicateKey { line: 5, .. })
        ));
        assert!(matches!(RunConfig::parse(&format!("{MIN}lr 0.1\n"), p), Err(ConfigError::Syntax { line: 4 })));
        assert!(matches!(
            RunConfig::parse(&format!("{MIN}lr = fast\n"), p),
            Err(ConfigError::InvalidValue { line: 4, .. })
        ));
        assert!(matches!(RunConfig::parse(&format!("{MIN}n_set = 1\n"), p), Err(ConfigError::InvalidValue { .. })));
        assert!(matches!(RunConfig::parse(&format!("{MIN}patience = 0\n"), p), Err(ConfigError::Invalid(_))));
        assert!(matches!(RunConfig::parse(&format!("{MIN}hidden_dim = 7\n"), p), Err(ConfigError::Invalid(_))));
        assert!(matches!(RunConfig::parse(&format!("{MIN}pattern_scale = -1\n"), p), Err(ConfigError::Invalid(_))));
        assert!(matches!(RunConfig::parse(&format!("{MIN}preset = wsj\n"), p), Err(ConfigError::InvalidValue { .. })));
    }

    #[test]
    fn path_validation() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("a.trees"), "").unwrap();
        let c = RunConfig::parse(MIN, dir.path()).unwrap();
        assert!(matches!(c.validate_paths(), Err(ConfigError::BadPath { key: "dev_path", .. })));
        std::fs::write(dir.path().join("b.trees"), "").unwrap();
        assert!(matches!(c.validate_paths(), Err(ConfigError::BadPath { key: "checkpoint_path", .. })));
        std::fs::create_dir(dir.path().join("out")).unwrap();
        c.validate_paths().unwrap();
    }
}
