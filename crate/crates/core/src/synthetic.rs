//! Seeded generators for small treebanks, used by tests, the self-check and
//! the memorization experiments.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::treebank::Tree;

const DT: &[&str] = &["the", "a", "every", "this"];
const NN: &[&str] = &["cat", "dog", "park", "man", "telescope", "bird", "house", "tree", "river", "book"];
const NNS: &[&str] = &["cats", "dogs", "birds", "books"];
const JJ: &[&str] = &["old", "small", "red", "quiet", "happy"];
const NNP: &[&str] = &["Alice", "Bob", "Paris"];
const PRP: &[&str] = &["she", "he", "they"];
const VBD: &[&str] = &["saw", "liked", "found", "chased", "read", "slept"];
const IN: &[&str] = &["in", "near", "with", "under"];
const RB: &[&str] = &["quickly", "often", "never"];
const CC: &[&str] = &["and"];
const MD: &[&str] = &["will", "can"];
const VB: &[&str] = &["see", "read"];

/// Generates trees from a small English-like grammar over a 50-word
/// vocabulary. Every tree has at most `max_tokens` tokens.
#[derive(Debug, Clone)]
pub struct ToyGrammar {
    rng: ChaCha8Rng,
    pub max_tokens: usize,
}

impl ToyGrammar {
    pub fn new(seed: u64, max_tokens: usize) -> Self {
        assert!(max_tokens >= 2, "grammar needs at least two tokens per sentence");
        ToyGrammar { rng: ChaCha8Rng::seed_from_u64(seed), max_tokens }
    }

    fn word(&mut self, pos: &str, words: &[&str]) -> Tree {
        Tree::leaf(pos, *words.choose(&mut self.rng).expect("non-empty word list"))
    }

    fn np(&mut self, depth: usize) -> Tree {
        let roll = self.rng.gen_range(0..10);
        match roll {
            0..=2 => Tree::internal("NP", vec![self.word("DT", DT), self.word("NN", NN)]),
            3 => Tree::internal("NP", vec![self.word("DT", DT), self.word("JJ", JJ), self.word("NN", NN)]),
            4 => Tree::internal("NP", vec![self.word("PRP", PRP)]),
            5 => Tree::internal("NP", vec![self.word("NNP", NNP)]),
            6 => Tree::internal("NP", vec![self.word("NNS", NNS)]),
            7 if depth < 2 => Tree::internal("NP", vec![self.np(depth + 1), self.pp(depth + 1)]),
            _ => Tree::internal("NP", vec![self.word("DT", DT), self.word("NN", NN)]),
        }
    }

    fn pp(&mut self, depth: usize) -> Tree {
        Tree::internal("PP", vec![self.word("IN", IN), self.np(depth + 1)])
    }

    fn vp(&mut self, depth: usize) -> Tree {
        match self.rng.gen_range(0..8) {
            0 => Tree::internal("VP", vec![self.word("VBD", VBD)]),
            1 | 2 => Tree::internal("VP", vec![self.word("VBD", VBD), self.np(depth + 1)]),
            3 => Tree::internal("VP", vec![self.word("VBD", VBD), self.np(depth + 1), self.pp(depth + 1)]),
            4 => Tree::internal("VP", vec![self.word("VBD", VBD), self.pp(depth + 1)]),
            5 => Tree::internal(
                "VP",
                vec![self.word("MD", MD), Tree::internal("VP", vec![self.word("VB", VB), self.np(depth + 1)])],
            ),
            6 => Tree::internal(
                "VP",
                vec![Tree::internal("ADVP", vec![self.word("RB", RB)]), self.word("VBD", VBD), self.np(depth + 1)],
            ),
            _ => Tree::internal("VP", vec![self.word("VBD", VBD), self.np(depth + 1)]),
        }
    }

    fn sentence(&mut self) -> Tree {
        match self.rng.gen_range(0..10) {
            0 => {
                let left = Tree::internal("S", vec![self.np(1), self.vp(1)]);
                let right = Tree::internal("S", vec![self.np(1), self.vp(1)]);
                Tree::internal("S", vec![left, self.word("CC", CC), right])
            }
            1 | 2 => Tree::internal("S", vec![self.np(0), self.vp(0), Tree::leaf(".", ".")]),
            _ => Tree::internal("S", vec![self.np(0), self.vp(0)]),
        }
    }

    /// Next tree with at most `max_tokens` tokens.
    pub fn sample(&mut self) -> Tree {
        loop {
            let t = self.sentence();
            if t.len() <= self.max_tokens {
                return t;
            }
        }
    }

    pub fn corpus(&mut self, size: usize) -> Vec<Tree> {
        (0..size).map(|_| self.sample()).collect()
    }
}

/// Every word the toy grammar can emit.
pub fn toy_vocabulary() -> Vec<&'static str> {
    [DT, NN, NNS, JJ, NNP, PRP, VBD, IN, RB, CC, MD, VB, &["."]].concat()
}

/// A random n-ary tree over `leaves` tokens with labels drawn from `labels`
/// and POS tags from `tags`. Unary chains appear with small probability.
pub fn random_tree<R: Rng + ?Sized>(rng: &mut R, leaves: usize, labels: &[&str], tags: &[&str]) -> Tree {
    assert!(leaves >= 1);
    let mut t = random_subtree(rng, leaves, 0, labels, tags);
    if t.is_leaf() {
        t = Tree::internal(*labels.choose(rng).expect("labels"), vec![t]);
    }
    t.reindex(0);
    t
}

fn random_subtree<R: Rng + ?Sized>(rng: &mut R, leaves: usize, offset: usize, labels: &[&str], tags: &[&str]) -> Tree {
    if leaves == 1 && rng.gen_bool(0.75) {
        let pos = *tags.choose(rng).expect("tags");
        return Tree::leaf(pos, alloc::format!("w{offset}"));
    }
    let label = String::from(*labels.choose(rng).expect("labels"));
    if leaves == 1 {
        return Tree::internal(label, vec![random_subtree(rng, 1, offset, labels, tags)]);
    }
    let arity = rng.gen_range(2..=leaves.min(4));
    // random composition of `leaves` into `arity` positive parts
    let mut cuts: Vec<usize> = (1..leaves).collect();
    cuts.shuffle(rng);
    let mut cuts: Vec<usize> = cuts.into_iter().take(arity - 1).collect();
    cuts.sort_unstable();
    let mut children = Vec::with_capacity(arity);
    let mut prev = 0;
    for cut in cuts.into_iter().chain(core::iter::once(leaves)) {
        children.push(random_subtree(rng, cut - prev, offset + prev, labels, tags));
        prev = cut;
    }
    Tree::internal(label, children)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::treebank::{parse_bracketed, serialize};

    #[test]
    fn toy_corpus_is_bounded_and_deterministic() {
        let a = ToyGrammar::new(11, 8).corpus(20);
        let b = ToyGrammar::new(11, 8).corpus(20);
        assert_eq!(a, b);
        assert!(a.iter().all(|t| t.len() <= 8));
        assert!(toy_vocabulary().len() <= 50);
        for t in &a {
            assert_eq!(parse_bracketed(&serialize(t)).unwrap(), *t);
        }
    }

    #[test]
    fn random_tree_has_requested_length() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for leaves in 1..10 {
            let t = random_tree(&mut rng, leaves, &["A", "B", "C"], &["x", "y"]);
            assert_eq!(t.len(), leaves);
            assert!(!t.is_leaf());
        }
    }
}
