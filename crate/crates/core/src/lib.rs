//! History-indexed speculative decoding for RL rollouts, on abstract token
//! streams.
//!
//! * [`corpus`]: trace ingestion and the sliding-window rollout history.
//! * [`suffix_index`]: online generalized suffix tree, suffix-array baseline,
//!   prefix-trie router.
//! * [`drafter`]: per-problem shards over the window, draft proposal and
//!   acceptance bookkeeping.
//! * [`latency`]: linear per-pass latency model and its fit.
//! * [`budget`]: saturating acceptance model and the speculative-budget
//!   optimizer.
//! * [`length_policy`]: Short/Medium/Long length classes from history.
//! * [`sim`]: synchronous batched draft/verify simulator.

// `!(x > 0.0)` style checks are deliberate: NaN must fail them.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod budget;
pub mod corpus;
pub mod drafter;
pub mod latency;
pub mod length_policy;
pub mod sim;
pub mod suffix_index;

pub use corpus::{RolloutRecord, TokenId, Window, WindowStore};
