//! Rollout trace ingestion, the per-problem sliding-window history store and
//! trajectory similarity statistics.
//!
//! Traces are line-delimited JSON, one [`RolloutRecord`] per line:
//!
//! ```text
//! {"problem_id":"p0","epoch":3,"sample_index":1,"tokens":[17,4,99]}
//! ```

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Token identifier. Traces carry raw ids; there is no tokenizer here.
pub type TokenId = u32;

/// Default cap on trajectories retained per problem.
pub const DEFAULT_PER_PROBLEM_CAP: usize = 256;

/// Default n-gram order for [`ngram_reuse_ratio`].
pub const DEFAULT_NGRAM: usize = 8;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: token {token} is outside the vocabulary (size {vocab_size})")]
    VocabViolation {
        line: usize,
        token: TokenId,
        vocab_size: u32,
    },
    #[error("cannot slide window backwards from epoch {current} to {requested}")]
    EpochRegression { current: u64, requested: u64 },
    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

/// One generated trajectory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RolloutRecord {
    pub problem_id: String,
    pub epoch: u64,
    pub sample_index: u64,
    pub tokens: Vec<TokenId>,
}

impl RolloutRecord {
    pub fn new(
        problem_id: impl Into<String>,
        epoch: u64,
        sample_index: u64,
        tokens: Vec<TokenId>,
    ) -> Self {
        Self {
            problem_id: problem_id.into(),
            epoch,
            sample_index,
            tokens,
        }
    }

    pub fn final_length(&self) -> usize {
        self.tokens.len()
    }
}

/// History window measured in epochs. `All` never evicts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub enum Window {
    Epochs(u64),
    #[default]
    All,
}

impl Window {
    /// Whether a record from `epoch` is retained when the store sits at `current`.
    pub fn retains(self, current: u64, epoch: u64) -> bool {
        match self {
            Window::All => true,
            Window::Epochs(w) => current.saturating_sub(epoch) < w,
        }
    }
}


impl fmt::Display for Window {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Window::All => f.write_str("all"),
            Window::Epochs(w) => write!(f, "{w}"),
        }
    }
}

impl FromStr for Window {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("all") {
            return Ok(Window::All);
        }
        match s.parse::<u64>() {
            Ok(0) => Err("window must be at least 1 epoch".into()),
            Ok(w) => Ok(Window::Epochs(w)),
            Err(_) => Err(format!("invalid window `{s}` (expected a positive integer or `all`)")),
        }
    }
}

impl Serialize for Window {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match self {
            Window::All => serializer.serialize_str("all"),
            Window::Epochs(w) => serializer.serialize_u64(*w),
        }
    }
}

impl<'de> Deserialize<'de> for Window {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Int(u64),
            Str(String),
        }
        match Raw::deserialize(deserializer)? {
            Raw::Int(0) => Err(serde::de::Error::custom("window must be at least 1 epoch")),
            Raw::Int(w) => Ok(Window::Epochs(w)),
            Raw::Str(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// Result of [`WindowStore::insert`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InsertOutcome {
    /// Stored; `evicted` counts records dropped by an implied slide or the
    /// per-problem cap.
    Inserted { evicted: usize },
    /// The record's epoch already falls outside the window.
    Stale,
}

/// Per-problem history of recent rollouts.
///
/// Every stored record satisfies the window predicate for `current_epoch`, and
/// each problem's list is sorted by epoch (insertion order within an epoch).
/// The store is plain data: callers serialize mutation against reads.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WindowStore {
    window: Window,
    per_problem_cap: usize,
    current_epoch: u64,
    records: BTreeMap<String, Vec<RolloutRecord>>,
}

impl Default for WindowStore {
    fn default() -> Self {
        Self::new(Window::All)
    }
}

impl WindowStore {
    pub fn new(window: Window) -> Self {
        Self::with_cap(window, DEFAULT_PER_PROBLEM_CAP)
    }

    pub fn with_cap(window: Window, per_problem_cap: usize) -> Self {
        Self {
            window,
            per_problem_cap: per_problem_cap.max(1),
            current_epoch: 0,
            records: BTreeMap::new(),
        }
    }

    pub fn window(&self) -> Window {
        self.window
    }

    pub fn per_problem_cap(&self) -> usize {
        self.per_problem_cap
    }

    pub fn current_epoch(&self) -> u64 {
        self.current_epoch
    }

    /// Changes the window and evicts whatever no longer fits. Returns the
    /// number of evicted records.
    pub fn set_window(&mut self, window: Window) -> usize {
        self.window = window;
        self.evict_outside_window()
    }

    /// Adds a record. Records from a future epoch slide the window forward
    /// first; records already outside the window are refused.
    pub fn insert(&mut self, record: RolloutRecord) -> InsertOutcome {
        let mut evicted = 0;
        if record.epoch > self.current_epoch {
            evicted += self
                .slide_window(record.epoch)
                .expect("forward slide cannot fail");
        }
        if !self.window.retains(self.current_epoch, record.epoch) {
            return InsertOutcome::Stale;
        }
        let list = self.records.entry(record.problem_id.clone()).or_default();
        let at = list.partition_point(|r| r.epoch <= record.epoch);
        list.insert(at, record);
        while list.len() > self.per_problem_cap {
            list.remove(0);
            evicted += 1;
        }
        InsertOutcome::Inserted { evicted }
    }

    /// Advances the store to `new_epoch`, dropping every record with
    /// `new_epoch - epoch >= window`. Returns the number evicted.
    pub fn slide_window(&mut self, new_epoch: u64) -> Result<usize, CorpusError> {
        if new_epoch < self.current_epoch {
            return Err(CorpusError::EpochRegression {
                current: self.current_epoch,
                requested: new_epoch,
            });
        }
        self.current_epoch = new_epoch;
        Ok(self.evict_outside_window())
    }

    fn evict_outside_window(&mut self) -> usize {
        let (window, current) = (self.window, self.current_epoch);
        let mut evicted = 0;
        self.records.retain(|_, list| {
            let before = list.len();
            list.retain(|r| window.retains(current, r.epoch));
            evicted += before - list.len();
            !list.is_empty()
        });
        evicted
    }

    pub fn problems(&self) -> impl Iterator<Item = &str> {
        self.records.keys().map(String::as_str)
    }

    pub fn records(&self, problem_id: &str) -> &[RolloutRecord] {
        self.records.get(problem_id).map(Vec::as_slice).unwrap_or(&[])
    }

    /// All records, grouped by problem (lexicographic) then epoch.
    pub fn iter(&self) -> impl Iterator<Item = &RolloutRecord> {
        self.records.values().flatten()
    }

    pub fn len(&self) -> usize {
        self.records.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn problem_count(&self) -> usize {
        self.records.len()
    }
}

/// Outcome of [`ingest`].
#[derive(Debug, Clone)]
pub struct IngestReport {
    pub store: WindowStore,
    pub rejected: usize,
    /// 1-based line numbers of skipped lines.
    pub rejected_lines: Vec<usize>,
}

/// Reads a line-delimited trace into a store with an unbounded window.
///
/// Malformed lines (bad JSON, missing fields, empty token lists) are skipped
/// and counted. A token outside `vocab_size` aborts the whole ingest.
pub fn ingest<R: BufRead>(reader: R, vocab_size: Option<u32>) -> Result<IngestReport, CorpusError> {
    ingest_into(reader, vocab_size, WindowStore::new(Window::All))
}

/// Like [`ingest`] but fills a caller-configured store.
pub fn ingest_into<R: BufRead>(
    reader: R,
    vocab_size: Option<u32>,
    mut store: WindowStore,
) -> Result<IngestReport, CorpusError> {
    let mut rejected_lines = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let record: RolloutRecord = match serde_json::from_str(&line) {
            Ok(r) => r,
            Err(e) => {
                log::debug!("line {line_no}: skipped ({e})");
                rejected_lines.push(line_no);
                continue;
            }
        };
        if record.tokens.is_empty() {
            rejected_lines.push(line_no);
            continue;
        }
        if let Some(vocab) = vocab_size {
            if let Some(&token) = record.tokens.iter().find(|&&t| t >= vocab) {
                return Err(CorpusError::VocabViolation {
                    line: line_no,
                    token,
                    vocab_size: vocab,
                });
            }
        }
        store.insert(record);
    }
    Ok(IngestReport {
        store,
        rejected: rejected_lines.len(),
        rejected_lines,
    })
}

/// Writes every record in the store in trace format.
pub fn write_trace<W: Write>(store: &WindowStore, mut out: W) -> Result<(), CorpusError> {
    for record in store.iter() {
        serde_json::to_writer(&mut out, record)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

fn distinct_ngrams(tokens: &[TokenId], n: usize) -> HashSet<&[TokenId]> {
    if n == 0 || tokens.len() < n {
        return HashSet::new();
    }
    tokens.windows(n).collect()
}

/// Fraction of the distinct n-grams of `a` that occur anywhere in `b`.
///
/// Zero when `n == 0` or either trajectory is shorter than `n`.
pub fn ngram_reuse_ratio(a: &[TokenId], b: &[TokenId], n: usize) -> f64 {
    let grams_a = distinct_ngrams(a, n);
    if grams_a.is_empty() || b.len() < n {
        return 0.0;
    }
    let grams_b = distinct_ngrams(b, n);
    let shared = grams_a.iter().filter(|g| grams_b.contains(*g)).count();
    shared as f64 / grams_a.len() as f64
}

/// Mean reuse ratios between the epoch groups of one problem.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochSimilarity {
    pub epochs: Vec<u64>,
    /// `matrix[i][j]` pairs `epochs[i]` with `epochs[j]`; symmetric.
    pub matrix: Vec<Vec<f64>>,
}

impl EpochSimilarity {
    /// Mean off-diagonal similarity at each epoch distance `1..len`.
    pub fn mean_by_distance(&self) -> Vec<f64> {
        let k = self.epochs.len();
        (1..k)
            .map(|d| {
                let vals: Vec<f64> = (0..k - d).map(|i| self.matrix[i][i + d]).collect();
                vals.iter().sum::<f64>() / vals.len() as f64
            })
            .collect()
    }
}

/// Similarity matrix across the epochs of `problem_id`.
///
/// Off-diagonal cells average the symmetrized ratio `(r(a,b) + r(b,a)) / 2`
/// over all cross-epoch pairs; diagonal cells average distinct within-epoch
/// pairs, or are 1.0 when the epoch holds a single trajectory. Returns `None`
/// for unknown problems and problems spanning fewer than two epochs.
pub fn pairwise_epoch_similarity(
    store: &WindowStore,
    problem_id: &str,
    n: usize,
) -> Option<EpochSimilarity> {
    let records = store.records(problem_id);
    let mut groups: BTreeMap<u64, Vec<&[TokenId]>> = BTreeMap::new();
    for r in records {
        groups.entry(r.epoch).or_default().push(&r.tokens);
    }
    if groups.len() < 2 {
        return None;
    }
    let epochs: Vec<u64> = groups.keys().copied().collect();
    let groups: Vec<Vec<&[TokenId]>> = groups.into_values().collect();
    let sym = |a: &[TokenId], b: &[TokenId]| {
        (ngram_reuse_ratio(a, b, n) + ngram_reuse_ratio(b, a, n)) / 2.0
    };
    let k = groups.len();
    let mut matrix = vec![vec![0.0; k]; k];
    for i in 0..k {
        for j in i..k {
            let (mut sum, mut count) = (0.0, 0usize);
            if i == j {
                let g = &groups[i];
                for x in 0..g.len() {
                    for y in x + 1..g.len() {
                        sum += sym(g[x], g[y]);
                        count += 1;
                    }
                }
                if count == 0 {
                    sum = 1.0;
                    count = 1;
                }
            } else {
                for a in &groups[i] {
                    for b in &groups[j] {
                        sum += sym(a, b);
                        count += 1;
                    }
                }
            }
            let mean = sum / count as f64;
            matrix[i][j] = mean;
            matrix[j][i] = mean;
        }
    }
    Some(EpochSimilarity { epochs, matrix })
}
