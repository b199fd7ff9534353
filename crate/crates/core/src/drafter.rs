//! Draft proposal over recent rollout history.
//!
//! The drafter keeps a [`WindowStore`] of recent trajectories and a suffix
//! tree per shard over it: one per problem, or a single global one. New
//! rollouts are added online; moving to a new epoch slides the window and
//! rebuilds the shards from what survives when anything was evicted.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{InsertOutcome, RolloutRecord, TokenId, Window, WindowStore};
use crate::suffix_index::{PrefixTrie, SuffixTree};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DrafterError {
    #[error("accepted length {accepted} exceeds proposal length {proposed}")]
    AcceptedOutOfRange { accepted: usize, proposed: usize },
    #[error("invalid drafter config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    /// One tree over every problem.
    Global,
    /// One tree per problem, chosen by problem id.
    PerProblem,
    /// Per-problem trees, chosen by the generated prefix when it is
    /// recognized and by problem id otherwise.
    PerProblemWithTrie,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DrafterConfig {
    pub scope: Scope,
    pub window: Window,
    /// Weight decay per epoch of age when ranking continuations.
    pub recency_gamma: f64,
    pub max_draft_len: usize,
    /// Leading tokens stored in the routing trie.
    pub trie_depth: usize,
    /// Trie matches shorter than this fall back to the problem id.
    pub min_trie_depth: usize,
    /// Only this many trailing context tokens are matched.
    pub max_context: usize,
    /// Per-problem capacity of the round outcome buffer.
    pub fit_buffer_cap: usize,
    /// `(epoch, window)` pairs; the last entry not after the refresh epoch
    /// replaces `window`.
    pub window_schedule: Vec<(u64, Window)>,
}

impl Default for DrafterConfig {
    fn default() -> Self {
        Self {
            scope: Scope::PerProblem,
            window: Window::Epochs(16),
            recency_gamma: 0.8,
            max_draft_len: 16,
            trie_depth: 16,
            min_trie_depth: 4,
            max_context: 64,
            fit_buffer_cap: 512,
            window_schedule: Vec::new(),
        }
    }
}

impl DrafterConfig {
    pub fn validate(&self) -> Result<(), DrafterError> {
        let bad = |m: &str| Err(DrafterError::Config(m.into()));
        if self.window == Window::Epochs(0) {
            return bad("window must be at least 1 epoch");
        }
        if self.max_draft_len == 0 {
            return bad("max_draft_len must be >= 1");
        }
        if !(self.recency_gamma > 0.0 && self.recency_gamma <= 1.0) {
            return bad("recency_gamma must lie in (0, 1]");
        }
        if self.max_context == 0 {
            return bad("max_context must be >= 1");
        }
        Ok(())
    }

    fn window_at(&self, epoch: u64) -> Window {
        self.window_schedule
            .iter()
            .filter(|(e, _)| *e <= epoch)
            .max_by_key(|(e, _)| *e)
            .map_or(self.window, |&(_, w)| w)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ShardId {
    Global,
    Problem(String),
}

impl fmt::Display for ShardId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ShardId::Global => f.write_str("global"),
            ShardId::Problem(p) => write!(f, "problem:{p}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DraftProposal {
    pub problem_id: String,
    pub tokens: Vec<TokenId>,
    /// Shard that produced the draft; `None` when no shard was available.
    pub source_shard: Option<ShardId>,
    /// Length of the context suffix matched in the shard.
    pub match_len: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct AcceptanceStats {
    pub proposed_tokens: u64,
    pub accepted_tokens: u64,
    pub verification_rounds: u64,
}

impl AcceptanceStats {
    pub fn mean_accepted_per_round(&self) -> f64 {
        if self.verification_rounds == 0 {
            0.0
        } else {
            self.accepted_tokens as f64 / self.verification_rounds as f64
        }
    }

    pub fn acceptance_ratio(&self) -> f64 {
        if self.proposed_tokens == 0 {
            0.0
        } else {
            self.accepted_tokens as f64 / self.proposed_tokens as f64
        }
    }
}

/// One verification round: tokens drafted and tokens accepted.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RoundOutcome {
    pub proposed: usize,
    pub accepted: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShardSummary {
    pub shard: ShardId,
    pub sequences: usize,
    pub nodes: usize,
    /// Distinct epochs among the shard's sequences.
    pub window_occupancy: usize,
}

#[derive(Debug, Clone)]
pub struct Drafter {
    config: DrafterConfig,
    store: WindowStore,
    shards: BTreeMap<ShardId, SuffixTree>,
    trie: Option<PrefixTrie<String>>,
    stats: AcceptanceStats,
    rounds: BTreeMap<String, VecDeque<RoundOutcome>>,
    stale: u64,
}

impl Drafter {
    /// Builds shards over `store`, whose window is replaced by the config's.
    pub fn new(config: DrafterConfig, mut store: WindowStore) -> Result<Self, DrafterError> {
        config.validate()?;
        store.set_window(config.window_at(store.current_epoch()));
        let mut d = Self {
            trie: None,
            config,
            store,
            shards: BTreeMap::new(),
            stats: AcceptanceStats::default(),
            rounds: BTreeMap::new(),
            stale: 0,
        };
        d.rebuild();
        Ok(d)
    }

    pub fn config(&self) -> &DrafterConfig {
        &self.config
    }

    pub fn store(&self) -> &WindowStore {
        &self.store
    }

    pub fn stats(&self) -> AcceptanceStats {
        self.stats
    }

    /// Records refused for falling outside the window.
    pub fn stale_count(&self) -> u64 {
        self.stale
    }

    pub fn shard_count(&self) -> usize {
        self.shards.len()
    }

    pub fn shard(&self, id: &ShardId) -> Option<&SuffixTree> {
        self.shards.get(id)
    }

    /// Total suffix-tree nodes over all shards.
    pub fn node_count(&self) -> usize {
        self.shards.values().map(SuffixTree::node_count).sum()
    }

    pub fn round_outcomes(&self, problem_id: &str) -> impl Iterator<Item = &RoundOutcome> {
        self.rounds.get(problem_id).into_iter().flatten()
    }

    fn shard_for(&self, problem_id: &str) -> ShardId {
        match self.config.scope {
            Scope::Global => ShardId::Global,
            _ => ShardId::Problem(problem_id.to_owned()),
        }
    }

    fn rebuild(&mut self) {
        let epoch = self.store.current_epoch();
        let gamma = self.config.recency_gamma;
        self.shards.clear();
        let mut trie = (self.config.scope == Scope::PerProblemWithTrie).then(|| PrefixTrie::new(self.config.trie_depth));
        let mut records: Vec<&RolloutRecord> = self.store.iter().collect();
        // epoch order keeps "most recent" meaningful for trie routing
        records.sort_by_key(|r| r.epoch);
        for r in records {
            let id = self.shard_for(&r.problem_id);
            self.shards
                .entry(id)
                .or_insert_with(|| SuffixTree::with_recency(gamma, epoch))
                .add_sequence(&r.tokens, r.epoch);
            if let Some(t) = trie.as_mut() {
                t.insert(&r.tokens, r.problem_id.clone());
            }
        }
        self.trie = trie;
    }

    /// Adds a finished rollout. Returns false if it was refused as stale.
    pub fn observe(&mut self, record: RolloutRecord) -> bool {
        let before = self.store.current_epoch();
        let (pid, epoch) = (record.problem_id.clone(), record.epoch);
        let tokens = record.tokens.clone();
        match self.store.insert(record) {
            InsertOutcome::Stale => {
                self.stale += 1;
                false
            }
            InsertOutcome::Inserted { evicted } => {
                let now = self.store.current_epoch();
                if evicted > 0 {
                    self.rebuild();
                } else {
                    if now != before {
                        self.reweight(now);
                    }
                    let id = self.shard_for(&pid);
                    let gamma = self.config.recency_gamma;
                    self.shards
                        .entry(id)
                        .or_insert_with(|| SuffixTree::with_recency(gamma, now))
                        .add_sequence(&tokens, epoch);
                    if let Some(t) = self.trie.as_mut() {
                        t.insert(&tokens, pid);
                    }
                }
                true
            }
        }
    }

    /// Moves to `new_epoch`: applies the window schedule, slides the window
    /// and rebuilds every shard from the surviving records if any were evicted.
    pub fn refresh(&mut self, new_epoch: u64) {
        let new_epoch = new_epoch.max(self.store.current_epoch());
        let mut evicted = self.store.set_window(self.config.window_at(new_epoch));
        evicted += self.store.slide_window(new_epoch).expect("epoch does not regress");
        if evicted > 0 {
            self.rebuild();
        } else {
            self.reweight(new_epoch);
        }
    }

    /// Nothing left the window: the trees stay and only recency weights move.
    fn reweight(&mut self, epoch: u64) {
        for t in self.shards.values_mut() {
            t.set_current_epoch(epoch);
        }
    }

    /// Draft of at most `min(budget, max_draft_len)` tokens continuing
    /// `context`, which is the request's generation so far.
    pub fn draft(&self, problem_id: &str, context: &[TokenId], budget: usize) -> DraftProposal {
        let n = budget.min(self.config.max_draft_len);
        let mut out = DraftProposal {
            problem_id: problem_id.to_owned(),
            tokens: Vec::new(),
            source_shard: None,
            match_len: 0,
        };
        if n == 0 {
            return out;
        }
        let routed = self.trie.as_ref().and_then(|t| {
            t.route_with_depth(context)
                .filter(|&(_, depth)| depth >= self.config.min_trie_depth)
                .map(|(p, _)| ShardId::Problem(p.clone()))
        });
        let id = routed
            .filter(|id| self.shards.contains_key(id))
            .unwrap_or_else(|| self.shard_for(problem_id));
        let Some(tree) = self.shards.get(&id) else {
            return out;
        };
        let tail = &context[context.len().saturating_sub(self.config.max_context)..];
        let m = tree.longest_match(tail);
        out.source_shard = Some(id);
        out.match_len = m.match_len;
        if m.match_len > 0 {
            out.tokens = tree.continue_from(m.point, n);
        }
        out
    }

    /// Books the verification result of `proposal`.
    pub fn record_outcome(&mut self, proposal: &DraftProposal, accepted_len: usize) -> Result<(), DrafterError> {
        let proposed = proposal.tokens.len();
        if accepted_len > proposed {
            return Err(DrafterError::AcceptedOutOfRange { accepted: accepted_len, proposed });
        }
        self.stats.proposed_tokens += proposed as u64;
        self.stats.accepted_tokens += accepted_len as u64;
        self.stats.verification_rounds += 1;
        let buf = self.rounds.entry(proposal.problem_id.clone()).or_default();
        buf.push_back(RoundOutcome { proposed, accepted: accepted_len });
        while buf.len() > self.config.fit_buffer_cap {
            buf.pop_front();
        }
        Ok(())
    }

    pub fn reset_stats(&mut self) {
        self.stats = AcceptanceStats::default();
    }

    pub fn summary(&self) -> Vec<ShardSummary> {
        self.shards
            .iter()
            .map(|(id, t)| ShardSummary {
                shard: id.clone(),
                sequences: t.sequence_count(),
                nodes: t.node_count(),
                window_occupancy: t.sequence_ids().map(|s| t.sequence_epoch(s)).collect::<BTreeSet<_>>().len(),
            })
            .collect()
    }

    pub fn write_summary_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "shard,sequences,nodes,window_occupancy")?;
        for s in self.summary() {
            writeln!(out, "{},{},{},{}", s.shard, s.sequences, s.nodes, s.window_occupancy)?;
        }
        Ok(())
    }
}
