//! Token-sequence indexes backing the drafter.
//!
//! [`SuffixTree`] is the production structure: online insertion, longest
//! suffix matching and frequency-guided draft proposal. [`SuffixArrayIndex`]
//! is a static baseline kept for benchmarking, and [`PrefixTrie`] routes a
//! generation to a shard by its leading tokens.

mod array;
pub mod bench;
mod tree;
mod trie;

pub use array::SuffixArrayIndex;
pub use bench::{bench_index, write_bench_csv, BenchRow, Structure};
pub use tree::{MatchPoint, MatchResult, SequenceId, SuffixTree};
pub use trie::PrefixTrie;
