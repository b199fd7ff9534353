//! Short/Medium/Long length classes.
//!
//! A request starts in the class its problem most often ended in, is
//! re-classified as its generation grows using how historical trajectories
//! of the same starting class ended, and the class picks the speculation
//! settings.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::WindowStore;

pub const DEFAULT_Q_LO: f64 = 0.5;
pub const DEFAULT_Q_HI: f64 = 0.9;
pub const DEFAULT_BUCKET: u64 = 256;
/// Below this many records the conditional table is left uniform.
pub const MIN_CONFIDENT_RECORDS: usize = 10;

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("history is empty")]
    EmptyHistory,
    #[error("quantiles must satisfy 0 <= lo <= hi <= 1, got ({0}, {1})")]
    Quantiles(f64, f64),
    #[error("bucket width must be >= 1")]
    Bucket,
    #[error("malformed class table: {0}")]
    Parse(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LengthClass {
    Short,
    Medium,
    Long,
}

impl LengthClass {
    pub const ALL: [LengthClass; 3] = [LengthClass::Short, LengthClass::Medium, LengthClass::Long];

    fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for LengthClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LengthClass::Short => "short",
            LengthClass::Medium => "medium",
            LengthClass::Long => "long",
        })
    }
}

impl FromStr for LengthClass {
    type Err = PolicyError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "short" => Ok(LengthClass::Short),
            "medium" => Ok(LengthClass::Medium),
            "long" => Ok(LengthClass::Long),
            other => Err(PolicyError::Parse(format!("unknown class `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassSettings {
    pub speculation_enabled: bool,
    pub per_round_draft_len: usize,
    /// Multiplier on the budget optimizer's per-request budget.
    pub p_scale: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassBudgets {
    pub short: ClassSettings,
    pub medium: ClassSettings,
    pub long: ClassSettings,
}

impl Default for ClassBudgets {
    fn default() -> Self {
        Self {
            short: ClassSettings { speculation_enabled: false, per_round_draft_len: 0, p_scale: 0.0 },
            medium: ClassSettings { speculation_enabled: true, per_round_draft_len: 4, p_scale: 1.0 },
            long: ClassSettings { speculation_enabled: true, per_round_draft_len: 12, p_scale: 1.0 },
        }
    }
}

impl ClassBudgets {
    pub fn get(&self, class: LengthClass) -> ClassSettings {
        match class {
            LengthClass::Short => self.short,
            LengthClass::Medium => self.medium,
            LengthClass::Long => self.long,
        }
    }
}

/// Final lengths of past trajectories, grouped by problem.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LengthHistory {
    by_problem: BTreeMap<String, Vec<u64>>,
}

impl LengthHistory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_store(store: &WindowStore) -> Self {
        let mut h = Self::new();
        for r in store.iter() {
            h.push(&r.problem_id, r.final_length() as u64);
        }
        h
    }

    pub fn push(&mut self, problem_id: &str, final_len: u64) {
        self.by_problem.entry(problem_id.to_owned()).or_default().push(final_len);
    }

    pub fn len(&self) -> usize {
        self.by_problem.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn lengths(&self, problem_id: &str) -> &[u64] {
        self.by_problem.get(problem_id).map_or(&[], Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, u64)> {
        self.by_problem
            .iter()
            .flat_map(|(p, ls)| ls.iter().map(move |&l| (p.as_str(), l)))
    }
}

/// Linear-interpolated quantile of a sorted slice.
fn quantile(sorted: &[u64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] as f64 * (1.0 - frac) + sorted[hi] as f64 * frac
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassTable {
    pub q_short: f64,
    pub q_long: f64,
    pub bucket: u64,
    pub records: usize,
    pub low_confidence: bool,
    /// `conditional[bucket][init][final]`.
    pub conditional: Vec<[[f64; 3]; 3]>,
    pub class_budgets: ClassBudgets,
}

/// Highest-probability class; ties go to `init`, then to the longer class.
fn argmax(row: &[f64; 3], init: LengthClass) -> LengthClass {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if row[init.index()] == max {
        return init;
    }
    *LengthClass::ALL.iter().rev().find(|c| row[c.index()] == max).unwrap()
}

impl ClassTable {
    pub fn classify_len(&self, len: f64) -> LengthClass {
        if len < self.q_short {
            LengthClass::Short
        } else if len > self.q_long {
            LengthClass::Long
        } else {
            LengthClass::Medium
        }
    }

    fn bucket_of(&self, partial_len: u64) -> usize {
        ((partial_len / self.bucket) as usize).min(self.conditional.len() - 1)
    }

    pub fn row(&self, partial_len: u64, init: LengthClass) -> [f64; 3] {
        self.conditional[self.bucket_of(partial_len)][init.index()]
    }

    pub fn settings(&self, class: LengthClass) -> ClassSettings {
        self.class_budgets.get(class)
    }

    /// `key=value` header followed by one matrix line per (bucket, init).
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "q_short={}", self.q_short).unwrap();
        writeln!(s, "q_long={}", self.q_long).unwrap();
        writeln!(s, "bucket={}", self.bucket).unwrap();
        writeln!(s, "records={}", self.records).unwrap();
        writeln!(s, "low_confidence={}", self.low_confidence).unwrap();
        for c in LengthClass::ALL {
            let b = self.class_budgets.get(c);
            writeln!(s, "class.{c}={},{},{}", b.speculation_enabled, b.per_round_draft_len, b.p_scale).unwrap();
        }
        writeln!(s, "matrix={}", self.conditional.len()).unwrap();
        for (b, rows) in self.conditional.iter().enumerate() {
            for init in LengthClass::ALL {
                let r = rows[init.index()];
                writeln!(s, "{b} {init} {} {} {}", r[0], r[1], r[2]).unwrap();
            }
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self, PolicyError> {
        let bad = |m: String| PolicyError::Parse(m);
        let mut kv = BTreeMap::new();
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let mut n_buckets = None;
        for line in lines.by_ref() {
            let (k, v) = line.split_once('=').ok_or_else(|| bad(format!("expected key=value: `{line}`")))?;
            if k.trim() == "matrix" {
                n_buckets = Some(v.trim().parse::<usize>().map_err(|_| bad("bad matrix size".into()))?);
                break;
            }
            kv.insert(k.trim().to_owned(), v.trim().to_owned());
        }
        let n_buckets = n_buckets.ok_or_else(|| bad("missing matrix block".into()))?;
        let get = |k: &str| kv.get(k).ok_or_else(|| bad(format!("missing `{k}`")));
        let num = |k: &str| -> Result<f64, PolicyError> { get(k)?.parse().map_err(|_| bad(format!("bad `{k}`"))) };

        let mut class_budgets = ClassBudgets::default();
        for c in LengthClass::ALL {
            let key = format!("class.{c}");
            let parts: Vec<&str> = get(&key)?.split(',').map(str::trim).collect();
            let parsed = match parts.as_slice() {
                [e, d, p] => (e.parse().ok(), d.parse().ok(), p.parse().ok()),
                _ => (None, None, None),
            };
            let (Some(speculation_enabled), Some(per_round_draft_len), Some(p_scale)) = parsed else {
                return Err(bad(format!("bad `{key}`")));
            };
            let s = ClassSettings { speculation_enabled, per_round_draft_len, p_scale };
            match c {
                LengthClass::Short => class_budgets.short = s,
                LengthClass::Medium => class_budgets.medium = s,
                LengthClass::Long => class_budgets.long = s,
            }
        }

        let mut conditional = vec![[[0.0; 3]; 3]; n_buckets];
        let mut seen = 0;
        for line in lines {
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 5 {
                return Err(bad(format!("bad matrix line `{line}`")));
            }
            let b: usize = f[0].parse().map_err(|_| bad(format!("bad bucket `{}`", f[0])))?;
            let init: LengthClass = f[1].parse()?;
            if b >= n_buckets {
                return Err(bad(format!("bucket {b} out of range")));
            }
            for j in 0..3 {
                conditional[b][init.index()][j] =
                    f[2 + j].parse().map_err(|_| bad(format!("bad probability `{}`", f[2 + j])))?;
            }
            seen += 1;
        }
        if seen != n_buckets * 3 || n_buckets == 0 {
            return Err(bad(format!("expected {} matrix lines, got {seen}", n_buckets * 3)));
        }
        Ok(Self {
            q_short: num("q_short")?,
            q_long: num("q_long")?,
            bucket: num("bucket")? as u64,
            records: num("records")? as usize,
            low_confidence: get("low_confidence")? == "true",
            conditional,
            class_budgets,
        })
    }
}

fn majority(counts: [usize; 3]) -> LengthClass {
    let max = *counts.iter().max().unwrap();
    *LengthClass::ALL.iter().rev().find(|c| counts[c.index()] == max).unwrap()
}

fn counts_of<'a>(table: &ClassTable, lens: impl Iterator<Item = &'a u64>) -> [usize; 3] {
    let mut counts = [0; 3];
    for &l in lens {
        counts[table.classify_len(l as f64).index()] += 1;
    }
    counts
}

/// Majority class of the problem's past final lengths, or of the whole
/// history for an unseen problem. Ties go to the longer class.
pub fn classify_init(table: &ClassTable, history: &LengthHistory, problem_id: &str) -> LengthClass {
    let own = history.lengths(problem_id);
    if own.is_empty() {
        let all: Vec<u64> = history.iter().map(|(_, l)| l).collect();
        if all.is_empty() {
            return LengthClass::Medium;
        }
        return majority(counts_of(table, all.iter()));
    }
    majority(counts_of(table, own.iter()))
}

/// Re-classifies a running request after `partial_len` generated tokens.
pub fn update_class(table: &ClassTable, partial_len: u64, init: LengthClass) -> LengthClass {
    if partial_len as f64 > table.q_long {
        return LengthClass::Long;
    }
    argmax(&table.row(partial_len, init), init)
}

pub fn class_to_budget(table: &ClassTable, class: LengthClass) -> ClassSettings {
    table.settings(class)
}

/// Builds thresholds from the `q_lo`/`q_hi` quantiles of final lengths and
/// the conditional class table from partial-length buckets.
pub fn build_class_table(
    history: &LengthHistory,
    q_lo: f64,
    q_hi: f64,
    bucket: u64,
    class_budgets: ClassBudgets,
) -> Result<ClassTable, PolicyError> {
    if history.is_empty() {
        return Err(PolicyError::EmptyHistory);
    }
    if !(0.0..=1.0).contains(&q_lo) || !(0.0..=1.0).contains(&q_hi) || q_lo > q_hi {
        return Err(PolicyError::Quantiles(q_lo, q_hi));
    }
    if bucket == 0 {
        return Err(PolicyError::Bucket);
    }
    let mut sorted: Vec<u64> = history.iter().map(|(_, l)| l).collect();
    sorted.sort_unstable();
    let max_len = *sorted.last().unwrap();
    let n_buckets = (max_len / bucket) as usize + 1;
    let mut table = ClassTable {
        q_short: quantile(&sorted, q_lo),
        q_long: quantile(&sorted, q_hi),
        bucket,
        records: sorted.len(),
        low_confidence: sorted.len() < MIN_CONFIDENT_RECORDS,
        conditional: vec![[[1.0 / 3.0; 3]; 3]; n_buckets],
        class_budgets,
    };
    if table.low_confidence {
        log::warn!("only {} history records; length table left uniform", sorted.len());
        return Ok(table);
    }

    let mut counts = vec![[[0.0f64; 3]; 3]; n_buckets];
    let inits: BTreeMap<&str, LengthClass> = history
        .by_problem
        .keys()
        .map(|p| (p.as_str(), classify_init(&table, history, p)))
        .collect();
    for (pid, len) in history.iter() {
        let init = inits[pid].index();
        let fin = table.classify_len(len as f64).index();
        // the trajectory was still running at every partial length below len
        let last = if len == 0 { 0 } else { ((len - 1) / bucket) as usize };
        for row in counts.iter_mut().take(last + 1) {
            row[init][fin] += 1.0;
        }
    }
    for init in LengthClass::ALL {
        let i = init.index();
        // at zero progress the start class should win
        let others = counts[0][i]
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .map(|(_, &c)| c)
            .fold(0.0, f64::max);
        if counts[0][i][i] <= others {
            counts[0][i][i] = others + 1.0;
        }
    }
    for (out, rows) in table.conditional.iter_mut().zip(&counts) {
        for (dst, row) in out.iter_mut().zip(rows) {
            let total: f64 = row.iter().sum::<f64>() + 3.0;
            for (d, c) in dst.iter_mut().zip(row) {
                *d = (c + 1.0) / total;
            }
        }
    }
    enforce_monotone(&mut table.conditional);
    Ok(table)
}

/// Makes the argmax class of each init's rows non-decreasing with bucket.
fn enforce_monotone(cond: &mut [[[f64; 3]; 3]]) {
    for init in LengthClass::ALL {
        let i = init.index();
        let mut floor = 0;
        for rows in cond.iter_mut() {
            let row = &mut rows[i];
            let a = argmax(row, init).index();
            if a < floor {
                row.swap(a, floor);
                if row[a] >= row[floor] {
                    let eps = 1e-6 * row[a];
                    row[floor] += eps;
                    row[a] -= eps;
                }
            }
            floor = floor.max(argmax(row, init).index());
        }
    }
}
