//! Treebank files: any number of bracketed trees separated by whitespace.
//! Trees may span several lines. Lines starting with `#` outside a tree are
//! comments. A PTB-style unlabeled wrapper `( (S ...) )` is removed.

use std::fs;
use std::path::{Path, PathBuf};

use nlspan_core::treebank::{parse_bracketed, serialize, FormatError, Tree};

#[derive(Debug, thiserror::Error)]
pub enum TreebankError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {source}")]
    Format { line: usize, source: FormatError },
    #[error("line {line}: unbalanced parentheses in tree starting here")]
    Unterminated { line: usize },
    #[error("line {line}: text outside a tree")]
    Stray { line: usize },
}

impl TreebankError {
    fn with_path(self, path: &Path) -> Self {
        match self {
            TreebankError::Io { .. } => self,
            other => TreebankError::Io {
                path: path.to_path_buf(),
                source: std::io::Error::new(std::io::ErrorKind::InvalidData, other.to_string()),
            },
        }
    }
}

/// Splits `text` into `(first line, tree text)` chunks of balanced brackets.
fn chunks(text: &str) -> Result<Vec<(usize, &str)>, TreebankError> {
    let mut out = Vec::new();
    let mut depth = 0usize;
    let mut start = 0;
    let mut start_line = 0;
    let mut line = 1;
    let mut at_line_start = true;
    let mut in_comment = false;
    for (i, c) in text.char_indices() {
        if c == '\n' {
            line += 1;
            at_line_start = true;
            in_comment = false;
            continue;
        }
        if in_comment {
            continue;
        }
        if depth == 0 {
            if c.is_whitespace() {
                continue;
            }
            if c == '#' && at_line_start {
                in_comment = true;
                continue;
            }
            if c != '(' {
                return Err(TreebankError::Stray { line });
            }
            start = i;
            start_line = line;
        }
        at_line_start = false;
        match c {
            '(' => depth += 1,
            ')' => {
                depth -= 1;
                if depth == 0 {
                    out.push((start_line, &text[start..=i]));
                }
            }
            _ => {}
        }
    }
    if depth > 0 {
        return Err(TreebankError::Unterminated { line: start_line });
    }
    Ok(out)
}

/// `( (S ...) )` -> `(S ...)`.
fn strip_wrapper(chunk: &str) -> &str {
    let inner = chunk[1..chunk.len() - 1].trim();
    let balanced_single = inner.starts_with('(') && {
        let mut depth = 0i64;
        let mut closes_at_end = false;
        for (i, c) in inner.char_indices() {
            match c {
                '(' => depth += 1,
                ')' => {
                    depth -= 1;
                    if depth == 0 {
                        closes_at_end = i == inner.len() - 1;
                        break;
                    }
                }
                _ => {}
            }
        }
        closes_at_end
    };
    if balanced_single {
        inner
    } else {
        chunk
    }
}

pub fn parse_treebank(text: &str) -> Result<Vec<Tree>, TreebankError> {
    chunks(text)?
        .into_iter()
        .map(|(line, chunk)| {
            parse_bracketed(strip_wrapper(chunk)).map_err(|source| {
                // report the line of the offending byte, not of the tree start
                let offset = chunk.len().min(source.offset);
                let line = line + chunk[..offset].matches('\n').count();
                TreebankError::Format { line, source }
            })
        })
        .collect()
}

pub fn read_treebank(path: &Path) -> Result<Vec<Tree>, TreebankError> {
    let text = fs::read_to_string(path).map_err(|source| TreebankError::Io { path: path.to_path_buf(), source })?;
    parse_treebank(&text).map_err(|e| e.with_path(path))
}

/// One canonical tree per line.
pub fn format_treebank(trees: &[Tree]) -> String {
    trees.iter().map(|t| serialize(t) + "\n").collect()
}

pub fn write_treebank(path: &Path, trees: &[Tree]) -> Result<(), TreebankError> {
    fs::write(path, format_treebank(trees)).map_err(|source| TreebankError::Io { path: path.to_path_buf(), source })
}
