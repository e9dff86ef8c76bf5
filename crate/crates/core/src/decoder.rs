//! Exact chart decoding over span scores.
//!
//! A tree's score is the sum of its span scores. Decoding searches over all
//! binary bracketings of the sentence; each bracket picks its best label,
//! where label 0 is the empty label with a fixed score of 0. Dropping the
//! empty-labeled brackets yields an n-ary tree. Ties are broken towards the
//! smallest split point and then the smallest label index.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use rand::Rng;

use crate::chart::{span_count, span_index};

/// Largest sentence [`brute_force_best`] will enumerate.
pub const BRUTE_FORCE_MAX_LEN: usize = 10;

/// A span with a constituent label index (0 = empty label).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct IndexedSpan {
    pub start: usize,
    pub end: usize,
    pub label: usize,
}

impl IndexedSpan {
    pub fn new(start: usize, end: usize, label: usize) -> Self {
        IndexedSpan { start, end, label }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DecodeError {
    TooLong { len: usize, max: usize },
}

impl fmt::Display for DecodeError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DecodeError::TooLong { len, max } => {
                write!(f, "sentence of length {len} exceeds brute-force limit {max}")
            }
        }
    }
}

impl core::error::Error for DecodeError {}

/// Scores for every span and every real label `1..=num_labels`. The empty
/// label 0 is implicit and scores 0.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreChart {
    n: usize,
    num_labels: usize,
    scores: Vec<f64>,
}

impl ScoreChart {
    /// All-zero chart. Panics if `n == 0` or `num_labels == 0`.
    pub fn new(n: usize, num_labels: usize) -> Self {
        assert!(n >= 1, "chart needs at least one token");
        assert!(num_labels >= 1, "chart needs at least one real label");
        ScoreChart { n, num_labels, scores: vec![0.0; span_count(n) * num_labels] }
    }

    /// Scores drawn uniformly from `[-1, 1)`.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, n: usize, num_labels: usize) -> Self {
        let mut chart = ScoreChart::new(n, num_labels);
        chart.scores.iter_mut().for_each(|s| *s = rng.gen_range(-1.0..1.0));
        chart
    }

    pub fn sentence_len(&self) -> usize {
        self.n
    }

    /// Number of real labels (the empty label excluded).
    pub fn num_labels(&self) -> usize {
        self.num_labels
    }

    pub fn score(&self, i: usize, j: usize, label: usize) -> f64 {
        if label == 0 {
            0.0
        } else {
            self.scores[span_index(self.n, i, j) * self.num_labels + label - 1]
        }
    }

    pub fn set(&mut self, i: usize, j: usize, label: usize, value: f64) {
        assert!(label >= 1, "the empty label has a fixed score");
        self.scores[span_index(self.n, i, j) * self.num_labels + label - 1] = value;
    }

    /// Scores of labels `1..=num_labels` for span `(i, j)`.
    pub fn row(&self, i: usize, j: usize) -> &[f64] {
        let k = span_index(self.n, i, j) * self.num_labels;
        &self.scores[k..k + self.num_labels]
    }

    pub fn row_mut(&mut self, i: usize, j: usize) -> &mut [f64] {
        let k = span_index(self.n, i, j) * self.num_labels;
        &mut self.scores[k..k + self.num_labels]
    }

    /// Sum of the scores of `spans`.
    pub fn tree_score(&self, spans: &[IndexedSpan]) -> f64 {
        spans.iter().map(|s| self.score(s.start, s.end, s.label)).sum()
    }
}

/// Result of decoding: the binary bracketing that was chosen and its
/// non-empty spans.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodedTree {
    /// Non-empty labeled spans, pre-order. Always contains the root `(0, n)`.
    pub spans: Vec<IndexedSpan>,
    /// Every bracket of the binary tree including empty-labeled ones, pre-order.
    pub binary: Vec<IndexedSpan>,
    /// Value of the decoded objective.
    pub score: f64,
}

impl DecodedTree {
    fn from_binary(binary: Vec<IndexedSpan>, score: f64) -> Self {
        let spans = binary.iter().copied().filter(|s| s.label != 0).collect();
        DecodedTree { spans, binary, score }
    }

    /// Non-empty spans sorted, for set comparison.
    pub fn span_set(&self) -> Vec<IndexedSpan> {
        let mut s = self.spans.clone();
        s.sort_unstable();
        s
    }
}

/// Best label for a span under the tie-break rule; the root may not take the
/// empty label.
fn best_label(num_labels: usize, is_root: bool, score: &impl Fn(usize) -> f64) -> (usize, f64) {
    let first = usize::from(is_root);
    let mut best = (first, score(first));
    for l in first + 1..=num_labels {
        let s = score(l);
        if s > best.1 {
            best = (l, s);
        }
    }
    best
}

#[derive(Clone, Copy)]
struct Cell {
    value: f64,
    label: usize,
    split: usize,
}

fn decode_with(n: usize, num_labels: usize, score: impl Fn(usize, usize, usize) -> f64) -> DecodedTree {
    let mut cells = vec![Cell { value: 0.0, label: 0, split: 0 }; span_count(n)];
    for len in 1..=n {
        for i in 0..=n - len {
            let j = i + len;
            let (label, label_score) = best_label(num_labels, len == n, &|l| score(i, j, l));
            let mut cell = Cell { value: label_score, label, split: 0 };
            if len > 1 {
                let mut best_split = (0, f64::NEG_INFINITY);
                for k in i + 1..j {
                    let v = cells[span_index(n, i, k)].value + cells[span_index(n, k, j)].value;
                    if v > best_split.1 {
                        best_split = (k, v);
                    }
                }
                cell.split = best_split.0;
                cell.value = label_score + best_split.1;
            }
            cells[span_index(n, i, j)] = cell;
        }
    }
    let mut binary = Vec::with_capacity(2 * n - 1);
    let mut stack = vec![(0, n)];
    while let Some((i, j)) = stack.pop() {
        let cell = cells[span_index(n, i, j)];
        binary.push(IndexedSpan::new(i, j, cell.label));
        if j - i > 1 {
            stack.push((cell.split, j));
            stack.push((i, cell.split));
        }
    }
    DecodedTree::from_binary(binary, cells[span_index(n, 0, n)].value)
}

/// Highest-scoring tree.
pub fn cky(chart: &ScoreChart) -> DecodedTree {
    decode_with(chart.n, chart.num_labels, |i, j, l| chart.score(i, j, l))
}

/// Gold label index at each gold span; every other span has gold label 0.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct GoldLabels(BTreeMap<(usize, usize), usize>);

impl GoldLabels {
    pub fn new(gold: &[IndexedSpan]) -> Self {
        GoldLabels(gold.iter().map(|s| ((s.start, s.end), s.label)).collect())
    }

    pub fn label(&self, i: usize, j: usize) -> usize {
        self.0.get(&(i, j)).copied().unwrap_or(0)
    }
}

/// Span-level Hamming cost: brackets whose label differs from the gold label
/// at the same span.
pub fn hamming(binary: &[IndexedSpan], gold: &GoldLabels) -> usize {
    binary.iter().filter(|s| s.label != gold.label(s.start, s.end)).count()
}

/// Decodes `argmax_T s(T) + hamming(T, gold)`. The returned `score` is the
/// augmented objective.
pub fn loss_augmented_cky(chart: &ScoreChart, gold: &[IndexedSpan]) -> DecodedTree {
    let gold = GoldLabels::new(gold);
    decode_with(chart.n, chart.num_labels, |i, j, l| {
        chart.score(i, j, l) + if l != gold.label(i, j) { 1.0 } else { 0.0 }
    })
}

/// Best completions of each span, keyed by span.
type Memo = BTreeMap<(usize, usize), Vec<(f64, Vec<IndexedSpan>)>>;

/// Exhaustive search over every binary bracketing, for testing [`cky`].
pub fn brute_force_best(chart: &ScoreChart) -> Result<DecodedTree, DecodeError> {
    let n = chart.n;
    if n > BRUTE_FORCE_MAX_LEN {
        return Err(DecodeError::TooLong { len: n, max: BRUTE_FORCE_MAX_LEN });
    }
    let mut memo: Memo = BTreeMap::new();
    let all = enumerate(chart, 0, n, &mut memo);
    let mut best: Option<&(f64, Vec<IndexedSpan>)> = None;
    for cand in &all {
        if best.is_none_or(|b| cand.0 > b.0) {
            best = Some(cand);
        }
    }
    let (score, binary) = best.cloned().expect("at least one bracketing");
    Ok(DecodedTree::from_binary(binary, score))
}

/// All bracketings of `(i, j)` with their scores, ordered by split point and
/// then by the orders of the sub-enumerations.
fn enumerate(chart: &ScoreChart, i: usize, j: usize, memo: &mut Memo) -> Vec<(f64, Vec<IndexedSpan>)> {
    if let Some(hit) = memo.get(&(i, j)) {
        return hit.clone();
    }
    let (label, label_score) = best_label(chart.num_labels, i == 0 && j == chart.n, &|l| chart.score(i, j, l));
    let here = IndexedSpan::new(i, j, label);
    let mut out = Vec::new();
    if j - i == 1 {
        out.push((label_score, vec![here]));
    } else {
        for k in i + 1..j {
            let left = enumerate(chart, i, k, memo);
            let right = enumerate(chart, k, j, memo);
            for (ls, lt) in &left {
                for (rs, rt) in &right {
                    let mut spans = Vec::with_capacity(1 + lt.len() + rt.len());
                    spans.push(here);
                    spans.extend_from_slice(lt);
                    spans.extend_from_slice(rt);
                    out.push((label_score + (ls + rs), spans));
                }
            }
        }
    }
    memo.insert((i, j), out.clone());
    out
}
