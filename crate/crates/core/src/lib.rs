//! Span-based constituency parsing with non-local training objectives.
//!
//! The parser scores every span of a sentence from differences of encoder
//! states, decodes the best tree with CKY, and is trained with a structured
//! hinge loss plus two auxiliary objectives: predicting the sibling n-gram
//! pattern that exactly covers each span, and a corpus-level consistency
//! matrix tying constituent labels to the patterns they occur in.
//!
//! The crate is `no_std` and only needs `alloc`. File IO and the command
//! line live in the `nlspan` crate.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod chart;
pub mod checkpoint;
pub mod decoder;
pub mod eval;
pub mod model;
pub mod numerics;
pub mod patterns;
pub mod selftest;
pub mod synthetic;
pub mod training;
pub mod treebank;
pub mod vocab;
