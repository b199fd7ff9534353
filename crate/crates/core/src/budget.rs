//! Speculative-token budgets.
//!
//! A request of length `l` given `p` drafted tokens gets
//! `A(p) = k·l·(1 − e^{−αp/l})` of them accepted, so it needs
//! `l − A(p)` target forward passes. A batch finishes after the slowest
//! request, which turns the per-request budgets into a one-variable problem
//! in the batch pass count `N`: every request still running at `N` gets
//! exactly the budget that brings it down to `N`, and `N` trades base cost
//! against drafted-token cost.

use std::io::{Read, Write};

use serde::Deserialize;
use thiserror::Error;

use crate::latency::LatencyParams;

pub const DEFAULT_P_MAX_FACTOR: f64 = 4.0;
pub const DEFAULT_UNLIMITED_FACTOR: f64 = 10.0;

#[derive(Debug, Error)]
pub enum BudgetError {
    #[error("invalid profile: {0}")]
    Profile(String),
    #[error("invalid batch csv:\n{}", .0.join("\n"))]
    Rows(Vec<String>),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RequestProfile {
    /// Target generation length in tokens.
    pub l: f64,
    /// Accept efficiency.
    pub alpha: f64,
    /// Capacity: the fraction of the request the drafter can ever cover.
    pub k: f64,
}

impl RequestProfile {
    pub fn new(l: f64, alpha: f64, k: f64) -> Result<Self, BudgetError> {
        if !(l >= 1.0 && l.is_finite()) {
            return Err(BudgetError::Profile(format!("l must be >= 1, got {l}")));
        }
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(BudgetError::Profile(format!("alpha must be > 0, got {alpha}")));
        }
        if !(k > 0.0 && k <= 1.0) {
            return Err(BudgetError::Profile(format!("k must be in (0, 1], got {k}")));
        }
        Ok(Self { l, alpha, k })
    }

    fn p_max(&self, factor: f64) -> f64 {
        factor * self.l / self.alpha
    }
}

/// Per-round acceptance that decays geometrically with round depth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoundParams {
    pub a0: f64,
    pub beta: f64,
    pub d: f64,
    pub rounds: u32,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BudgetConfig {
    /// Budget ceiling as a multiple of `l/α`, used where no finite budget
    /// reaches the requested pass count.
    pub p_max_factor: f64,
    /// Budget of the unlimited policy, as a multiple of `l/α`.
    pub unlimited_factor: f64,
}

impl Default for BudgetConfig {
    fn default() -> Self {
        Self {
            p_max_factor: DEFAULT_P_MAX_FACTOR,
            unlimited_factor: DEFAULT_UNLIMITED_FACTOR,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BudgetPlan {
    /// Optimized batch forward-pass count.
    pub n_fwd_star: f64,
    /// Drafted-token budget per request, in batch order.
    pub budgets: Vec<f64>,
    /// Modeled batch cost at `n_fwd_star`.
    pub modeled_cost: f64,
}

pub fn accepted_tokens(profile: &RequestProfile, p: f64) -> f64 {
    // -expm1 keeps precision for tiny p
    profile.k * profile.l * -(-profile.alpha * p / profile.l).exp_m1()
}

pub fn remaining_tokens(profile: &RequestProfile, p: f64) -> f64 {
    profile.l - accepted_tokens(profile, p)
}

/// Tokens accepted after `rounds` rounds of `d` drafts each, when round `j`
/// accepts a fraction `a0·e^{−β(j−1)}`.
pub fn accepted_tokens_rounds(rp: &RoundParams) -> f64 {
    let k = f64::from(rp.rounds);
    if rp.beta == 0.0 {
        return rp.a0 * rp.d * k;
    }
    rp.a0 * rp.d * ((-rp.beta * k).exp_m1() / (-rp.beta).exp_m1())
}

/// Smallest budget that brings the request's pass count down to `n_fwd`.
///
/// Zero once `n_fwd >= l`. Pass counts at or below `l(1 − k)` cannot be
/// reached by any finite budget and get the cap `p_max_factor·l/α`.
pub fn optimal_budget_given_nfwd(profile: &RequestProfile, n_fwd: f64, p_max_factor: f64) -> f64 {
    if n_fwd >= profile.l {
        return 0.0;
    }
    let arg = 1.0 - (1.0 - n_fwd / profile.l) / profile.k;
    if arg <= 0.0 {
        return profile.p_max(p_max_factor);
    }
    -(profile.l / profile.alpha) * arg.ln()
}

/// Batch cost when every request runs on the budget that brings it to
/// `n_fwd` passes.
///
/// Where some request cannot reach `n_fwd` and falls back to its cap, the
/// base term is charged for the passes the batch actually needs, so an
/// unreachable `n_fwd` never looks cheaper than a reachable one.
pub fn objective(batch: &[RequestProfile], n_fwd: f64, params: &LatencyParams, cfg: &BudgetConfig) -> f64 {
    let mut passes = n_fwd;
    let mut drafted = 0.0;
    for r in batch {
        if r.l <= n_fwd {
            continue;
        }
        let p = optimal_budget_given_nfwd(r, n_fwd, cfg.p_max_factor);
        passes = passes.max(remaining_tokens(r, p));
        drafted += p;
    }
    params.c_base * passes + params.c_tok * drafted + params.c_fixed
}

/// Batch cost of arbitrary budgets: the slowest request sets the pass count.
pub fn realized_cost(batch: &[RequestProfile], budgets: &[f64], params: &LatencyParams) -> f64 {
    let passes = batch
        .iter()
        .zip(budgets)
        .map(|(r, &p)| remaining_tokens(r, p))
        .fold(0.0, f64::max);
    params.c_base * passes + params.c_tok * budgets.iter().sum::<f64>() + params.c_fixed
}

/// dJ/dN on the reachable region, with the active set taken at `n`.
fn slope(batch: &[RequestProfile], n: f64, c_base: f64, c_tok: f64) -> f64 {
    let s: f64 = batch
        .iter()
        .filter(|r| r.l > n)
        .map(|r| 1.0 / (r.alpha * (r.k - 1.0 + n / r.l)))
        .sum();
    c_base - c_tok * s
}

/// Minimizer of [`objective`] over `[0, max l]`, ties toward smaller `N`.
///
/// On the reachable region `N > max l_i(1 − k_i)` the objective is convex
/// between consecutive request lengths, so each segment is solved by
/// bisection on the slope. Below that region it never beats the reachable
/// optimum, and `N = 0` is checked only so exact ties resolve downward.
/// With free drafted tokens the answer is the floor itself.
pub fn solve_optimal_nfwd(batch: &[RequestProfile], params: &LatencyParams, cfg: &BudgetConfig) -> f64 {
    if batch.is_empty() {
        return 0.0;
    }
    let floor = batch.iter().map(|r| r.l * (1.0 - r.k)).fold(0.0, f64::max);
    let (c_base, c_tok) = (params.c_base, params.c_tok);
    let j = |n: f64| objective(batch, n, params, cfg);

    if c_tok <= 0.0 {
        // drafted tokens are free: the pass count drops to the floor
        return floor;
    }

    let mut points: Vec<f64> = batch.iter().map(|r| r.l).filter(|&l| l > floor).collect();
    points.push(floor);
    points.sort_by(f64::total_cmp);
    points.dedup();

    let mut candidates = vec![0.0];
    for w in points.windows(2) {
        let (a, b) = (w[0], w[1]);
        let (mut lo, mut hi) = (a, b);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if slope(batch, mid, c_base, c_tok) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        if a > floor {
            candidates.push(a);
        }
        if hi > floor {
            candidates.push(hi);
        }
        candidates.push(b);
    }
    candidates.sort_by(f64::total_cmp);

    let mut best = (candidates[0], j(candidates[0]));
    for &n in &candidates[1..] {
        let v = j(n);
        if v < best.1 - 1e-12 * best.1.abs().max(1e-300) {
            best = (n, v);
        }
    }
    best.0
}

/// Budget plan minimizing modeled batch cost.
pub fn allocate(batch: &[RequestProfile], params: &LatencyParams, cfg: &BudgetConfig) -> BudgetPlan {
    let n = solve_optimal_nfwd(batch, params, cfg);
    BudgetPlan {
        n_fwd_star: n,
        budgets: batch
            .iter()
            .map(|r| optimal_budget_given_nfwd(r, n, cfg.p_max_factor))
            .collect(),
        modeled_cost: objective(batch, n, params, cfg),
    }
}

/// Every request drafts `unlimited_factor·l/α` tokens regardless of cost.
pub fn unlimited_plan(batch: &[RequestProfile], params: &LatencyParams, cfg: &BudgetConfig) -> BudgetPlan {
    let budgets: Vec<f64> = batch.iter().map(|r| r.p_max(cfg.unlimited_factor)).collect();
    let n = batch
        .iter()
        .zip(&budgets)
        .map(|(r, &p)| remaining_tokens(r, p))
        .fold(0.0, f64::max);
    BudgetPlan {
        n_fwd_star: n,
        modeled_cost: realized_cost(batch, &budgets, params),
        budgets,
    }
}

/// One observed (budget, accepted, length) triple.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AcceptanceObservation {
    pub p: f64,
    pub accepted: f64,
    pub l: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FitFlag {
    Ok,
    /// Nothing was ever accepted; capacity sits at the grid minimum.
    LowCapacity,
    /// Too few or too uniform observations; defaults returned.
    Default,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AcceptanceFit {
    pub alpha: f64,
    pub k: f64,
    pub flag: FitFlag,
}

pub const DEFAULT_ALPHA: f64 = 1.0;
pub const DEFAULT_K: f64 = 0.8;
const K_GRID_STEP: f64 = 0.05;

/// Fits `(α, k)` of the saturating acceptance curve.
///
/// For each `k` on a 0.05 grid, `α` is solved per observation in closed form
/// and averaged; the pair with the smallest squared error wins.
pub fn fit_acceptance(obs: &[AcceptanceObservation]) -> AcceptanceFit {
    let fallback = AcceptanceFit { alpha: DEFAULT_ALPHA, k: DEFAULT_K, flag: FitFlag::Default };
    let obs: Vec<_> = obs
        .iter()
        .copied()
        .filter(|o| o.p > 0.0 && o.l >= 1.0 && o.accepted >= 0.0 && o.p.is_finite())
        .collect();
    let distinct = |f: fn(&AcceptanceObservation) -> f64| {
        let mut v: Vec<f64> = obs.iter().map(f).collect();
        v.sort_by(f64::total_cmp);
        v.dedup();
        v.len()
    };
    if obs.len() < 3 || (distinct(|o| o.p) < 2 && distinct(|o| o.l) < 2) {
        return fallback;
    }
    if obs.iter().all(|o| o.accepted == 0.0) {
        return AcceptanceFit { alpha: DEFAULT_ALPHA, k: K_GRID_STEP, flag: FitFlag::LowCapacity };
    }

    let mut best: Option<(f64, AcceptanceFit)> = None;
    for step in 1..=20 {
        let k = K_GRID_STEP * f64::from(step);
        let alphas: Vec<f64> = obs
            .iter()
            .filter_map(|o| {
                let frac = o.accepted / (k * o.l);
                (frac < 1.0).then(|| -(o.l / o.p) * (-frac).ln_1p())
            })
            .filter(|a| *a > 0.0 && a.is_finite())
            .collect();
        if alphas.is_empty() {
            continue;
        }
        let alpha = alphas.iter().sum::<f64>() / alphas.len() as f64;
        let sse: f64 = obs
            .iter()
            .map(|o| {
                let prof = RequestProfile { l: o.l, alpha, k };
                (accepted_tokens(&prof, o.p) - o.accepted).powi(2)
            })
            .sum();
        if best.is_none_or(|(e, _)| sse < e) {
            best = Some((sse, AcceptanceFit { alpha, k, flag: FitFlag::Ok }));
        }
    }
    best.map_or(fallback, |(_, f)| f)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchRow {
    pub request_id: String,
    pub profile: RequestProfile,
}

#[derive(Deserialize)]
struct RawRow {
    request_id: String,
    l: f64,
    alpha: f64,
    k: f64,
}

/// Reads `request_id,l,alpha,k` CSV. Every invalid row is reported.
pub fn read_batch_csv<R: Read>(reader: R) -> Result<Vec<BatchRow>, BudgetError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut rows = Vec::new();
    let mut errors = Vec::new();
    for (i, rec) in rdr.deserialize::<RawRow>().enumerate() {
        let line = i + 2;
        match rec {
            Ok(r) => match RequestProfile::new(r.l, r.alpha, r.k) {
                Ok(profile) => rows.push(BatchRow { request_id: r.request_id, profile }),
                Err(e) => errors.push(format!("line {line}: {e}")),
            },
            Err(e) => errors.push(format!("line {line}: {e}")),
        }
    }
    if errors.is_empty() {
        Ok(rows)
    } else {
        Err(BudgetError::Rows(errors))
    }
}

/// Writes `request_id,p_star` rows followed by a `n_fwd_star,J` summary.
pub fn write_plan_csv<W: Write>(ids: &[String], plan: &BudgetPlan, mut out: W) -> std::io::Result<()> {
    writeln!(out, "request_id,p_star")?;
    for (id, p) in ids.iter().zip(&plan.budgets) {
        writeln!(out, "{id},{p:.6}")?;
    }
    writeln!(out, "n_fwd_star,J")?;
    writeln!(out, "{:.6},{:.6}", plan.n_fwd_star, plan.modeled_cost)
}
