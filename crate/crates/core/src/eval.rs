//! Labeled bracketing precision, recall and F1 in the style of EVALB.
//!
//! Both trees are unary-expanded, preterminals are ignored, and brackets are
//! matched as multisets of `(start, end, label)` per sentence. Tokens whose
//! POS tag is in [`EvalParams::deleted_pos`] are removed before computing
//! bracket spans, brackets left empty by the removal are dropped, and labels
//! are mapped through [`EvalParams::equivalences`].

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use crate::treebank::{expand_unaries, Tree};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvalParams {
    /// Skip the outermost bracket of every tree.
    pub exclude_root: bool,
    /// Constituent labels never scored.
    pub deleted_labels: BTreeSet<String>,
    /// POS tags whose tokens are removed before scoring.
    pub deleted_pos: BTreeSet<String>,
    /// Labels rewritten before comparison, e.g. `PRT -> ADVP`.
    pub equivalences: BTreeMap<String, String>,
}

impl Default for EvalParams {
    /// Scores every bracket except `TOP`/`ROOT` wrappers; deletes no tokens.
    fn default() -> Self {
        EvalParams {
            exclude_root: false,
            deleted_labels: ["TOP", "ROOT"].into_iter().map(String::from).collect(),
            deleted_pos: BTreeSet::new(),
            equivalences: BTreeMap::new(),
        }
    }
}

impl EvalParams {
    /// Punctuation deletion and `ADVP = PRT`, as in the common EVALB
    /// parameter files.
    pub fn punctuation_insensitive() -> Self {
        EvalParams {
            deleted_pos: [",", ":", "``", "''", ".", "-NONE-"].into_iter().map(String::from).collect(),
            deleted_labels: ["TOP", "ROOT", "-NONE-"].into_iter().map(String::from).collect(),
            equivalences: [(String::from("PRT"), String::from("ADVP"))].into_iter().collect(),
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EvalError {
    LengthMismatch { gold: usize, predicted: usize },
    TokenMismatch { sentence: usize },
}

impl fmt::Display for EvalError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EvalError::LengthMismatch { gold, predicted } => {
                write!(f, "gold has {gold} sentences but prediction has {predicted}")
            }
            EvalError::TokenMismatch { sentence } => write!(f, "sentence {} has different tokens", sentence + 1),
        }
    }
}

impl core::error::Error for EvalError {}

/// A scored bracket after token deletion.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct Bracket {
    pub start: usize,
    pub end: usize,
    pub label: String,
}

impl Bracket {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }
}

/// Sorted brackets of one tree and its kept words.
pub fn brackets(tree: &Tree, params: &EvalParams) -> (Vec<Bracket>, Vec<String>) {
    let tree = expand_unaries(tree);
    let leaves = tree.leaves();
    // kept_before[t] = number of kept tokens among the first t
    let mut kept_before = Vec::with_capacity(leaves.len() + 1);
    let mut words = Vec::new();
    kept_before.push(0);
    for leaf in &leaves {
        let keep = !params.deleted_pos.contains(&leaf.pos);
        if keep {
            words.push(leaf.word.clone());
        }
        kept_before.push(words.len());
    }
    let mut out = Vec::new();
    let mut is_root = true;
    tree.visit(&mut |node| {
        if let Tree::Internal(n) = node {
            let root = core::mem::replace(&mut is_root, false);
            let (start, end) = (kept_before[n.start], kept_before[n.end]);
            if start == end || (root && params.exclude_root) || params.deleted_labels.contains(&n.label) {
                return;
            }
            let label = params.equivalences.get(&n.label).unwrap_or(&n.label).clone();
            out.push(Bracket { start, end, label });
        }
    });
    out.sort();
    (out, words)
}

/// Size of the multiset intersection of two sorted lists.
fn matched<T: Ord>(a: &[T], b: &[T]) -> usize {
    let (mut i, mut j, mut m) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            core::cmp::Ordering::Less => i += 1,
            core::cmp::Ordering::Greater => j += 1,
            core::cmp::Ordering::Equal => {
                m += 1;
                i += 1;
                j += 1;
            }
        }
    }
    m
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Counts {
    pub matched: usize,
    pub predicted: usize,
    pub gold: usize,
}

impl Counts {
    pub fn add(&mut self, other: Counts) {
        self.matched += other.matched;
        self.predicted += other.predicted;
        self.gold += other.gold;
    }

    pub fn precision(&self) -> f64 {
        ratio(self.matched, self.predicted)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.matched, self.gold)
    }

    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        100.0 * a as f64 / b as f64
    }
}

/// Corpus-level scores, as percentages.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalReport {
    pub counts: Counts,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub sentences: usize,
    pub exact_matches: usize,
}

impl EvalReport {
    fn from_counts(counts: Counts, sentences: usize, exact_matches: usize) -> Self {
        EvalReport {
            counts,
            precision: counts.precision(),
            recall: counts.recall(),
            f1: counts.f1(),
            sentences,
            exact_matches,
        }
    }
}

/// Gold and predicted brackets of one sentence.
type BracketPair = (Vec<Bracket>, Vec<Bracket>);

fn sentence_brackets(gold: &[Tree], pred: &[Tree], params: &EvalParams) -> Result<Vec<BracketPair>, EvalError> {
    if gold.len() != pred.len() {
        return Err(EvalError::LengthMismatch { gold: gold.len(), predicted: pred.len() });
    }
    gold.iter()
        .zip(pred)
        .enumerate()
        .map(|(k, (g, p))| {
            let (gb, gw) = brackets(g, params);
            let (pb, pw) = brackets(p, params);
            if gw != pw {
                return Err(EvalError::TokenMismatch { sentence: k });
            }
            Ok((gb, pb))
        })
        .collect()
}

pub fn score_sentence(gold: &[Bracket], pred: &[Bracket]) -> Counts {
    Counts { matched: matched(gold, pred), predicted: pred.len(), gold: gold.len() }
}

pub fn score_corpus(gold: &[Tree], pred: &[Tree], params: &EvalParams) -> Result<EvalReport, EvalError> {
    let mut total = Counts::default();
    let mut exact = 0;
    for (g, p) in sentence_brackets(gold, pred, params)? {
        let c = score_sentence(&g, &p);
        if c.matched == c.gold && c.matched == c.predicted {
            exact += 1;
        }
        total.add(c);
    }
    Ok(EvalReport::from_counts(total, gold.len(), exact))
}

/// F1 over brackets of at least `min_len` tokens.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LengthF1 {
    pub min_len: usize,
    pub counts: Counts,
    /// `None` when neither side has a bracket that long.
    pub f1: Option<f64>,
}

pub fn f1_by_min_span_length(
    gold: &[Tree],
    pred: &[Tree],
    thresholds: &[usize],
    params: &EvalParams,
) -> Result<Vec<LengthF1>, EvalError> {
    let per_sentence = sentence_brackets(gold, pred, params)?;
    Ok(thresholds
        .iter()
        .map(|&m| {
            let mut counts = Counts::default();
            for (g, p) in &per_sentence {
                let g: Vec<Bracket> = g.iter().filter(|b| b.len() >= m).cloned().collect();
                let p: Vec<Bracket> = p.iter().filter(|b| b.len() >= m).cloned().collect();
                counts.add(score_sentence(&g, &p));
            }
            let f1 = (counts.gold + counts.predicted > 0).then(|| counts.f1());
            LengthF1 { min_len: m, counts, f1 }
        })
        .collect())
}
