//! N-gram sibling patterns.
//!
//! A pattern is a window of `n` consecutive children of one parent node,
//! labeled by the ordered list of those children's labels (constituent labels
//! for internal children, POS tags for preterminals). In
//! `(VP (VBD saw) (NP ...) (PP ...))` the 3-gram window is labeled
//! `"VBD NP PP"` and spans from the verb's left fencepost to the PP's right
//! fencepost.
//!
//! This module also derives the per-sentence supervision for the pattern
//! head (one gold pattern label per span) and for the consistency head (which
//! constituent labels occur as elements of which pattern labels).

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::chart::{span_count, span_index};
use crate::treebank::Tree;
use crate::vocab::{Vocab, NO_PATTERN};

/// Sorted, de-duplicated window sizes, each at least 2.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct NGramSet(Vec<usize>);

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum NGramSetError {
    Empty,
    TooSmall(usize),
    Invalid(String),
}

impl fmt::Display for NGramSetError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NGramSetError::Empty => f.write_str("n-gram set is empty"),
            NGramSetError::TooSmall(n) => write!(f, "n-gram size {n} is below 2"),
            NGramSetError::Invalid(s) => write!(f, "invalid n-gram size {s:?}"),
        }
    }
}

impl core::error::Error for NGramSetError {}

impl NGramSet {
    pub fn new(sizes: &[usize]) -> Result<Self, NGramSetError> {
        if sizes.is_empty() {
            return Err(NGramSetError::Empty);
        }
        if let Some(&bad) = sizes.iter().find(|&&n| n < 2) {
            return Err(NGramSetError::TooSmall(bad));
        }
        let set: BTreeSet<usize> = sizes.iter().copied().collect();
        Ok(NGramSet(set.into_iter().collect()))
    }

    pub fn single(n: usize) -> Result<Self, NGramSetError> {
        Self::new(&[n])
    }

    pub fn sizes(&self) -> &[usize] {
        &self.0
    }

    pub fn min(&self) -> usize {
        self.0[0]
    }
}

impl FromStr for NGramSet {
    type Err = NGramSetError;

    /// Parses `"3"` or `"2,3"`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let sizes = s
            .split(',')
            .map(|p| p.trim().parse::<usize>().map_err(|_| NGramSetError::Invalid(String::from(p.trim()))))
            .collect::<Result<Vec<_>, _>>()?;
        NGramSet::new(&sizes)
    }
}

impl fmt::Display for NGramSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, n) in self.0.iter().enumerate() {
            if k > 0 {
                f.write_str(",")?;
            }
            write!(f, "{n}")?;
        }
        Ok(())
    }
}

/// One sibling window.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct PatternInstance {
    pub start: usize,
    pub end: usize,
    pub elements: Vec<String>,
    /// Span of the parent whose children form the window.
    pub parent: (usize, usize),
}

impl PatternInstance {
    pub fn n(&self) -> usize {
        self.elements.len()
    }

    /// Canonical label: elements joined by single spaces.
    pub fn label(&self) -> String {
        self.elements.join(" ")
    }
}

/// Calls `f(parent, window)` for every window of every size in `ngrams`, in
/// pre-order over parents, sizes ascending, windows left to right.
fn for_each_window<'a>(tree: &'a Tree, ngrams: &NGramSet, f: &mut impl FnMut(&'a Tree, &'a [Tree])) {
    if let Tree::Internal(node) = tree {
        for &n in ngrams.sizes() {
            if node.children.len() >= n {
                for window in node.children.windows(n) {
                    f(tree, window);
                }
            }
        }
        for child in &node.children {
            for_each_window(child, ngrams, f);
        }
    }
}

fn instance(parent: &Tree, window: &[Tree]) -> PatternInstance {
    PatternInstance {
        start: window[0].start(),
        end: window[window.len() - 1].end(),
        elements: window.iter().map(|c| String::from(c.label())).collect(),
        parent: parent.span(),
    }
}

/// Every sibling n-gram window of a (unary-collapsed) tree.
pub fn extract_patterns(tree: &Tree, ngrams: &NGramSet) -> Vec<PatternInstance> {
    let mut out = Vec::new();
    for_each_window(tree, ngrams, &mut |parent, window| out.push(instance(parent, window)));
    out
}

/// Frequency thresholds for the pattern vocabulary. A label is kept when its
/// count is at least `min_count` and its share of all occurrences is at
/// least `min_frac`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PatternFilter {
    pub min_count: usize,
    pub min_frac: f64,
}

impl PatternFilter {
    pub const NONE: PatternFilter = PatternFilter { min_count: 0, min_frac: 0.0 };

    /// Drop patterns seen fewer than 5 times (English treebank setting).
    pub fn ptb() -> Self {
        PatternFilter { min_count: 5, min_frac: 0.0 }
    }

    /// Drop patterns below 0.5% of all occurrences (Chinese treebank setting).
    pub fn ctb() -> Self {
        PatternFilter { min_count: 0, min_frac: 0.005 }
    }

    fn keeps(&self, count: usize, total: usize) -> bool {
        count >= self.min_count && total > 0 && (count as f64) / (total as f64) >= self.min_frac
    }
}

/// Pattern labels with their training counts. Index 0 is the no-pattern
/// class; the rest are ordered by descending count, ties by label.
#[derive(Debug, Clone, PartialEq)]
pub struct PatternVocab {
    vocab: Vocab,
    counts: Vec<usize>,
    total: usize,
}

impl PatternVocab {
    /// Rebuilds a vocabulary from stored labels (index 0 must be the
    /// no-pattern label) and counts.
    pub fn from_parts(labels: Vec<String>, counts: Vec<usize>, total: usize) -> Option<Self> {
        if labels.first().map(String::as_str) != Some(NO_PATTERN) || labels.len() != counts.len() {
            return None;
        }
        let vocab = Vocab::from_labels(labels.iter());
        (vocab.len() == labels.len()).then_some(PatternVocab { vocab, counts, total })
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn get(&self, label: &str) -> Option<usize> {
        self.vocab.get(label).filter(|&i| i != 0)
    }

    pub fn label(&self, index: usize) -> &str {
        self.vocab.label(index)
    }

    pub fn count(&self, index: usize) -> usize {
        self.counts[index]
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    /// Total number of pattern occurrences seen, kept or not.
    pub fn total_occurrences(&self) -> usize {
        self.total
    }

    /// Labels including the no-pattern class.
    pub fn len(&self) -> usize {
        self.vocab.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vocab.len() <= 1
    }

    /// `(count, label)` pairs of the real patterns, in index order.
    pub fn entries(&self) -> impl Iterator<Item = (usize, &str)> {
        self.vocab.labels().iter().zip(&self.counts).skip(1).map(|(l, &c)| (c, l.as_str()))
    }
}

/// Counts every pattern label in `corpus` and keeps those passing `filter`.
pub fn build_pattern_vocab(corpus: &[Tree], ngrams: &NGramSet, filter: PatternFilter) -> PatternVocab {
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    let mut total = 0;
    for tree in corpus {
        for_each_window(tree, ngrams, &mut |parent, window| {
            *counts.entry(instance(parent, window).label()).or_insert(0) += 1;
            total += 1;
        });
    }
    let mut kept: Vec<(String, usize)> = counts.into_iter().filter(|&(_, c)| filter.keeps(c, total)).collect();
    // BTreeMap order gives the lexicographic tie-break; the sort is stable
    kept.sort_by_key(|e| core::cmp::Reverse(e.1));
    let mut vocab = Vocab::new(NO_PATTERN);
    let mut out_counts = vec![0];
    for (label, c) in kept {
        vocab.insert(&label);
        out_counts.push(c);
    }
    PatternVocab { vocab, counts: out_counts, total }
}

/// Gold pattern index for every span of one sentence (0 = no pattern).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatternChart {
    n: usize,
    labels: Vec<usize>,
}

impl PatternChart {
    pub fn new(n: usize) -> Self {
        PatternChart { n, labels: vec![0; span_count(n)] }
    }

    pub fn sentence_len(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> usize {
        self.labels[span_index(self.n, i, j)]
    }

    pub fn set(&mut self, i: usize, j: usize, label: usize) {
        self.labels[span_index(self.n, i, j)] = label;
    }

    /// Labels in [`crate::chart::spans`] order.
    pub fn as_slice(&self) -> &[usize] {
        &self.labels
    }

    pub fn non_empty(&self) -> usize {
        self.labels.iter().filter(|&&l| l != 0).count()
    }
}

/// Assigns each span the in-vocabulary instance with exactly that span. When
/// several qualify, the largest `n` wins, then the smallest label.
pub fn resolve_pattern_chart(n: usize, instances: &[PatternInstance], vocab: &PatternVocab) -> PatternChart {
    let mut best: BTreeMap<(usize, usize), (usize, String, usize)> = BTreeMap::new();
    for inst in instances {
        let label = inst.label();
        let Some(index) = vocab.get(&label) else { continue };
        let key = (inst.start, inst.end);
        let better = match best.get(&key) {
            None => true,
            Some((bn, bl, _)) => inst.n() > *bn || (inst.n() == *bn && label < *bl),
        };
        if better {
            best.insert(key, (inst.n(), label, index));
        }
    }
    let mut chart = PatternChart::new(n);
    for ((i, j), (_, _, index)) in best {
        chart.labels[span_index(n, i, j)] = index;
    }
    chart
}

pub fn gold_pattern_chart(tree: &Tree, vocab: &PatternVocab, ngrams: &NGramSet) -> PatternChart {
    resolve_pattern_chart(tree.len(), &extract_patterns(tree, ngrams), vocab)
}

/// Which constituents count as belonging to a pattern window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Membership {
    /// Only the window's own children.
    #[default]
    DirectElement,
    /// The window's children and every constituent below them.
    Nested,
}

/// Binary matrix over (constituent label, pattern label). Row `r` is the
/// constituent label with vocabulary index `r + 1` (the empty label has no
/// row); column `b` is pattern index `b`, so column 0 is always zero.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConsistencyMatrix {
    rows: usize,
    cols: usize,
    bits: Vec<bool>,
}

impl ConsistencyMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        ConsistencyMatrix { rows, cols, bits: vec![false; rows * cols] }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.bits[row * self.cols + col]
    }

    pub fn set(&mut self, row: usize, col: usize) {
        self.bits[row * self.cols + col] = true;
    }

    pub fn ones(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// Row-major 0.0 / 1.0 values.
    pub fn to_f64(&self) -> Vec<f64> {
        self.bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()
    }
}

/// Gold consistency matrix of one sentence. `labels` is the constituent
/// vocabulary (index 0 = empty label); unknown labels are ignored.
pub fn gold_consistency(
    tree: &Tree,
    labels: &Vocab,
    patterns: &PatternVocab,
    ngrams: &NGramSet,
    membership: Membership,
) -> ConsistencyMatrix {
    let mut y = ConsistencyMatrix::zeros(labels.len().saturating_sub(1), patterns.len());
    for_each_window(tree, ngrams, &mut |parent, window| {
        let Some(b) = patterns.get(&instance(parent, window).label()) else { return };
        let mut mark = |node: &Tree| {
            if let Tree::Internal(n) = node {
                if let Some(a) = labels.get(&n.label).filter(|&a| a > 0) {
                    y.set(a - 1, b);
                }
            }
        };
        for child in window {
            match membership {
                Membership::DirectElement => mark(child),
                Membership::Nested => child.visit(&mut mark),
            }
        }
    });
    y
}
