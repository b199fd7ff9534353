//! Synchronous batched draft/verify simulator.
//!
//! A [`MockTarget`] replays a reference sequence per request with random
//! divergence. Each step, every unfinished request drafts, has the draft
//! verified and advances by what the target emits; a step is one batched
//! forward pass. Speculation only changes timing, never the emitted tokens.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::TokenId;

mod engine;
mod report;
mod scenario;
mod target;

pub use engine::{
    run_episode, BudgetSettings, DraftSource, LengthPolicySettings, RequestMetrics, SimConfig, SimMetrics, StepTrace,
};
pub use report::{
    read_summary_csv, summarize, write_requests_csv, write_summary, write_summary_csv, write_token_dump,
    write_trace_csv, ModeSummary, REQUESTS_HEADER, TRACE_HEADER,
};
pub use scenario::{BatchSpec, ExplicitRequest, HistorySpec, Scenario, ScenarioError, SyntheticBatch};
pub use target::{MockTarget, Verification};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BudgetMode {
    /// Plain autoregressive decoding.
    None,
    /// Every request drafts the maximum length every step.
    Unlimited,
    /// Draft lengths from the budget optimizer.
    Das,
}

impl fmt::Display for BudgetMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BudgetMode::None => "none",
            BudgetMode::Unlimited => "unlimited",
            BudgetMode::Das => "das",
        })
    }
}

impl FromStr for BudgetMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "none" => Ok(BudgetMode::None),
            "unlimited" => Ok(BudgetMode::Unlimited),
            "das" => Ok(BudgetMode::Das),
            _ => Err(format!("unknown mode `{s}` (expected none, unlimited or das)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Request {
    pub problem_id: String,
    /// The target's generation when it never diverges.
    pub reference: Vec<TokenId>,
}

impl Request {
    pub fn len(&self) -> usize {
        self.reference.len()
    }

    pub fn is_empty(&self) -> bool {
        self.reference.is_empty()
    }
}
