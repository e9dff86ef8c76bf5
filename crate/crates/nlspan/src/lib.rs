//! File formats, IO and the command line of the `nlspan` parser. The model
//! itself lives in `nlspan-core`.

pub mod cli;
pub mod config;
pub mod tokens;
pub mod treebank_io;
