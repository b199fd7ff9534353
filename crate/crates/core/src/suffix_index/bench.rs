//! Wall-clock comparison of the online suffix tree against the rebuilt
//! suffix array: draft-query latency and the cost of absorbing a new batch of
//! tokens, across corpus sizes.

use std::fmt;
use std::io::Write;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{SuffixArrayIndex, SuffixTree};
use crate::corpus::TokenId;

pub const CSV_HEADER: &str = "structure,corpus_size,spec_time_us,update_time_us";

const SEQ_LEN: usize = 256;
const VOCAB: u32 = 32_000;
const QUERY_LEN: usize = 32;
const QUERIES: usize = 50;
const DRAFT_LEN: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Structure {
    SuffixTree,
    SuffixArray,
}

impl fmt::Display for Structure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Structure::SuffixTree => "suffix_tree",
            Structure::SuffixArray => "suffix_array",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub structure: Structure,
    pub corpus_size: usize,
    /// Mean latency of one draft query.
    pub spec_time_us: f64,
    /// Median time to absorb `insert_batch` new tokens.
    pub update_time_us: f64,
}

/// Rollout-like corpus: sequences stitched from a shared pool of motifs with
/// sparse substitutions, so that matches of useful length exist.
pub fn synthetic_corpus(total_tokens: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<TokenId>> {
    let motifs: Vec<Vec<TokenId>> = (0..64)
        .map(|_| {
            let len = rng.random_range(8..48);
            (0..len).map(|_| rng.random_range(0..VOCAB)).collect()
        })
        .collect();
    let mut out = Vec::new();
    let mut remaining = total_tokens;
    while remaining > 0 {
        let len = remaining.min(SEQ_LEN);
        out.push(synthetic_sequence(len, &motifs, rng));
        remaining -= len;
    }
    out
}

fn synthetic_sequence(len: usize, motifs: &[Vec<TokenId>], rng: &mut ChaCha8Rng) -> Vec<TokenId> {
    let mut seq = Vec::with_capacity(len);
    while seq.len() < len {
        let m = &motifs[rng.random_range(0..motifs.len())];
        for &t in m {
            if seq.len() == len {
                break;
            }
            seq.push(if rng.random_bool(0.1) { rng.random_range(0..VOCAB) } else { t });
        }
    }
    seq
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    xs[xs.len() / 2]
}

fn make_queries(corpus: &[Vec<TokenId>], rng: &mut ChaCha8Rng) -> Vec<Vec<TokenId>> {
    (0..QUERIES)
        .map(|_| {
            let mut q: Vec<TokenId> = match corpus.iter().filter(|s| s.len() >= QUERY_LEN).count() {
                0 => (0..QUERY_LEN).map(|_| rng.random_range(0..VOCAB)).collect(),
                _ => loop {
                    let s = &corpus[rng.random_range(0..corpus.len())];
                    if s.len() >= QUERY_LEN {
                        let at = rng.random_range(0..=s.len() - QUERY_LEN);
                        break s[at..at + QUERY_LEN].to_vec();
                    }
                },
            };
            // perturb the tail so most lookups must fall back to shorter suffixes
            for t in q.iter_mut().rev().take(4) {
                if rng.random_bool(0.5) {
                    *t = rng.random_range(0..VOCAB);
                }
            }
            q
        })
        .collect()
}

/// Benchmarks both structures at every size in `corpus_sizes`.
pub fn bench_index(corpus_sizes: &[usize], insert_batch: usize, seed: u64) -> Vec<BenchRow> {
    let mut rows = Vec::with_capacity(corpus_sizes.len() * 2);
    for &size in corpus_sizes {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (size as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let corpus = synthetic_corpus(size, &mut rng);
        let batch_motifs = synthetic_corpus(insert_batch.max(1), &mut rng);
        let batch: Vec<TokenId> = batch_motifs.concat().into_iter().take(insert_batch).collect();
        let queries = make_queries(&corpus, &mut rng);
        let reps = if size >= 50_000 { 3 } else { 7 };

        let mut tree = SuffixTree::new();
        for s in &corpus {
            tree.add_sequence(s, 0);
        }
        let t0 = Instant::now();
        for q in &queries {
            std::hint::black_box(tree.propose(q, DRAFT_LEN));
        }
        let tree_spec = t0.elapsed().as_secs_f64() * 1e6 / queries.len() as f64;
        let tree_update = median(
            (0..reps)
                .map(|_| {
                    let t0 = Instant::now();
                    tree.add_sequence(&batch, 0);
                    t0.elapsed().as_secs_f64() * 1e6
                })
                .collect(),
        );

        let sa = SuffixArrayIndex::build(&corpus);
        let t0 = Instant::now();
        for q in &queries {
            std::hint::black_box(sa.longest_match(q));
        }
        let sa_spec = t0.elapsed().as_secs_f64() * 1e6 / queries.len() as f64;
        let mut grown = corpus.clone();
        grown.push(batch.clone());
        let sa_update = median(
            (0..reps)
                .map(|_| {
                    let t0 = Instant::now();
                    std::hint::black_box(SuffixArrayIndex::build(&grown));
                    t0.elapsed().as_secs_f64() * 1e6
                })
                .collect(),
        );

        rows.push(BenchRow {
            structure: Structure::SuffixTree,
            corpus_size: size,
            spec_time_us: tree_spec,
            update_time_us: tree_update,
        });
        rows.push(BenchRow {
            structure: Structure::SuffixArray,
            corpus_size: size,
            spec_time_us: sa_spec,
            update_time_us: sa_update,
        });
    }
    rows
}

pub fn write_bench_csv<W: Write>(rows: &[BenchRow], mut out: W) -> std::io::Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{:.3},{:.3}",
            r.structure, r.corpus_size, r.spec_time_us, r.update_time_us
        )?;
    }
    Ok(())
}
