use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::engine::{run_episode, BudgetSettings, DraftSource, LengthPolicySettings, SimConfig, SimMetrics};
use super::target::{stream_key, MockTarget};
use super::{BudgetMode, Request};
use crate::budget::{fit_acceptance, AcceptanceObservation, FitFlag};
use crate::corpus::{RolloutRecord, TokenId, WindowStore};
use crate::drafter::{Drafter, DrafterConfig, DrafterError};
use crate::latency::LatencyParams;
use crate::length_policy::LengthHistory;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("invalid scenario at `{path}`: {message}")]
    Invalid { path: String, message: String },
    #[error(transparent)]
    Drafter(#[from] DrafterError),
}

fn invalid(path: &str, message: impl Into<String>) -> ScenarioError {
    ScenarioError::Invalid { path: path.into(), message: message.into() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticBatch {
    pub requests: usize,
    /// Median of the lognormal length distribution.
    pub median_len: f64,
    pub sigma: f64,
    pub min_len: usize,
    pub max_len: usize,
}

impl Default for SyntheticBatch {
    fn default() -> Self {
        Self { requests: 64, median_len: 512.0, sigma: 1.0, min_len: 16, max_len: 16_384 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExplicitRequest {
    pub problem_id: String,
    pub reference: Vec<TokenId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BatchSpec {
    Synthetic(SyntheticBatch),
    Explicit(Vec<ExplicitRequest>),
}

impl Default for BatchSpec {
    fn default() -> Self {
        BatchSpec::Synthetic(SyntheticBatch::default())
    }
}

/// Earlier samples of each request's problem, seeded into the drafter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HistorySpec {
    pub samples_per_request: usize,
    /// Per-token substitution rate relative to the reference.
    pub noise: f64,
    /// Lengths are scaled by a uniform factor in `[1 - j, 1 + j]`.
    pub length_jitter: f64,
}

impl Default for HistorySpec {
    fn default() -> Self {
        Self { samples_per_request: 4, noise: 0.1, length_jitter: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Scenario {
    pub seed: u64,
    pub modes: Vec<BudgetMode>,
    pub batch: BatchSpec,
    pub history: HistorySpec,
    pub divergence_rate: f64,
    pub drafter: DrafterConfig,
    pub latency: LatencyParams,
    pub budget: BudgetSettings,
    pub length_policy: LengthPolicySettings,
    pub draft_source: DraftSource,
    pub max_steps: usize,
    pub epochs: u64,
    /// Per-token substitution rate applied to references between epochs.
    pub mutation_rate: f64,
    pub vocab: u32,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            seed: 0,
            modes: vec![BudgetMode::None, BudgetMode::Unlimited, BudgetMode::Das],
            batch: BatchSpec::default(),
            history: HistorySpec::default(),
            divergence_rate: 0.1,
            drafter: DrafterConfig::default(),
            latency: LatencyParams::new(1.0, 0.05, 0.0),
            budget: BudgetSettings::default(),
            length_policy: LengthPolicySettings::default(),
            draft_source: DraftSource::History,
            max_steps: 1_000_000,
            epochs: 1,
            mutation_rate: 0.0,
            vocab: 32_000,
        }
    }
}

fn check_rate(path: &str, v: f64) -> Result<(), ScenarioError> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(invalid(path, format!("must lie in [0, 1], got {v}")))
    }
}

impl Scenario {
    /// Parses JSON; errors name the offending field path.
    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let sc: Scenario = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            invalid(&path, e.into_inner().to_string())
        })?;
        sc.validate()?;
        Ok(sc)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        check_rate("divergence_rate", self.divergence_rate)?;
        check_rate("mutation_rate", self.mutation_rate)?;
        check_rate("history.noise", self.history.noise)?;
        check_rate("history.length_jitter", self.history.length_jitter)?;
        if self.modes.is_empty() {
            return Err(invalid("modes", "at least one mode is required"));
        }
        if self.epochs == 0 {
            return Err(invalid("epochs", "must be >= 1"));
        }
        if self.vocab < 2 {
            return Err(invalid("vocab", "must be >= 2"));
        }
        let l = &self.latency;
        if !(l.c_base >= 0.0 && l.c_tok >= 0.0 && l.c_fixed >= 0.0) {
            return Err(invalid("latency", "coefficients must be >= 0"));
        }
        if !(self.budget.alpha > 0.0) {
            return Err(invalid("budget.alpha", "must be > 0"));
        }
        if !(self.budget.k > 0.0 && self.budget.k <= 1.0) {
            return Err(invalid("budget.k", "must lie in (0, 1]"));
        }
        if let DraftSource::Static { acceptance } = self.draft_source {
            check_rate("draft_source.static.acceptance", acceptance)?;
        }
        match &self.batch {
            BatchSpec::Synthetic(s) => {
                if s.requests == 0 {
                    return Err(invalid("batch.synthetic.requests", "must be >= 1"));
                }
                if !(s.median_len >= 1.0) || !(s.sigma >= 0.0) {
                    return Err(invalid("batch.synthetic", "median_len must be >= 1 and sigma >= 0"));
                }
                if s.min_len == 0 || s.min_len > s.max_len {
                    return Err(invalid("batch.synthetic", "need 1 <= min_len <= max_len"));
                }
            }
            BatchSpec::Explicit(reqs) => {
                if reqs.is_empty() {
                    return Err(invalid("batch.explicit", "at least one request is required"));
                }
                for (i, r) in reqs.iter().enumerate() {
                    if r.reference.is_empty() {
                        return Err(invalid(&format!("batch.explicit[{i}].reference"), "must be non-empty"));
                    }
                }
            }
        }
        self.drafter
            .validate()
            .map_err(|e| invalid("drafter", e.to_string()))
    }

    pub fn sim_config(&self, mode: BudgetMode) -> SimConfig {
        SimConfig {
            mode,
            latency: self.latency,
            budget: self.budget,
            length_policy: self.length_policy,
            draft_source: self.draft_source,
            max_steps: self.max_steps,
            seed: self.seed,
            vocab: self.vocab,
        }
    }

    /// The batch of the first epoch.
    pub fn build_requests(&self) -> Vec<Request> {
        match &self.batch {
            BatchSpec::Explicit(reqs) => reqs
                .iter()
                .map(|r| Request { problem_id: r.problem_id.clone(), reference: r.reference.clone() })
                .collect(),
            BatchSpec::Synthetic(s) => {
                let mut rng = ChaCha8Rng::seed_from_u64(stream_key(self.seed, 0, 0, 10));
                let dist = LogNormal::new(s.median_len.ln(), s.sigma).expect("validated parameters");
                (0..s.requests)
                    .map(|i| {
                        let l = (dist.sample(&mut rng).round() as usize).clamp(s.min_len, s.max_len);
                        Request {
                            problem_id: format!("p{i:04}"),
                            reference: (0..l).map(|_| rng.random_range(0..self.vocab)).collect(),
                        }
                    })
                    .collect()
            }
        }
    }

    /// Earlier noisy samples of every request, at epoch 0.
    pub fn build_history(&self, requests: &[Request]) -> WindowStore {
        let mut store = WindowStore::new(crate::corpus::Window::All);
        let h = self.history;
        for (i, r) in requests.iter().enumerate() {
            for s in 0..h.samples_per_request {
                let mut rng = ChaCha8Rng::seed_from_u64(stream_key(self.seed, i as u64, s as u64, 11));
                let scale = 1.0 + h.length_jitter * rng.random_range(-1.0..=1.0);
                let len = ((r.len() as f64 * scale).round() as usize).max(1);
                let tokens = (0..len)
                    .map(|p| match r.reference.get(p) {
                        Some(&t) if !rng.random_bool(h.noise) => t,
                        _ => rng.random_range(0..self.vocab),
                    })
                    .collect();
                store.insert(RolloutRecord::new(r.problem_id.clone(), 0, s as u64, tokens));
            }
        }
        store
    }

    fn mutate(&self, requests: &[Request], epoch: u64) -> Vec<Request> {
        requests
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let mut rng = ChaCha8Rng::seed_from_u64(stream_key(self.seed, i as u64, epoch, 12));
                let reference = r
                    .reference
                    .iter()
                    .map(|&t| if rng.random_bool(self.mutation_rate) { rng.random_range(0..self.vocab) } else { t })
                    .collect();
                Request { problem_id: r.problem_id.clone(), reference }
            })
            .collect()
    }

    fn target(&self, requests: &[Request], epoch: u64) -> MockTarget {
        let refs = requests.iter().map(|r| r.reference.clone()).collect();
        MockTarget::new(refs, self.divergence_rate, stream_key(self.seed, epoch, 0, 13), self.vocab)
    }

    /// Runs `self.epochs` episodes in `mode`. Between epochs the finished
    /// trajectories are fed to the drafter, the window slides, and the
    /// references drift by `mutation_rate`.
    pub fn epoch_loop(&self, mode: BudgetMode) -> Result<Vec<SimMetrics>, ScenarioError> {
        self.validate()?;
        let mut requests = self.build_requests();
        let mut drafter = Drafter::new(self.drafter.clone(), self.build_history(&requests))?;
        let mut cfg = self.sim_config(mode);
        let mut out = Vec::with_capacity(self.epochs as usize);
        for epoch in 1..=self.epochs {
            if epoch > 1 {
                requests = self.mutate(&requests, epoch);
            }
            let target = self.target(&requests, epoch);
            let history = LengthHistory::from_store(drafter.store());
            let mut m = run_episode(&cfg, &requests, &target, &mut drafter, &history);
            m.epoch = epoch;
            for (i, r) in m.requests.iter().enumerate() {
                if r.completed {
                    drafter.observe(RolloutRecord::new(r.problem_id.clone(), epoch, i as u64, r.tokens.clone()));
                }
            }
            drafter.refresh(epoch);
            if mode == BudgetMode::Das && self.budget.fit_between_epochs {
                let obs: Vec<AcceptanceObservation> = m
                    .requests
                    .iter()
                    .filter(|r| r.completed && r.proposed > 0)
                    .map(|r| AcceptanceObservation { p: r.proposed as f64, accepted: r.accepted as f64, l: r.l as f64 })
                    .collect();
                let fit = fit_acceptance(&obs);
                if fit.flag == FitFlag::Ok {
                    cfg.budget.alpha = fit.alpha;
                    cfg.budget.k = fit.k;
                }
            }
            out.push(m);
        }
        Ok(out)
    }

    /// Single episode in `mode` against the first epoch's batch.
    pub fn run_single(&self, mode: BudgetMode) -> Result<SimMetrics, ScenarioError> {
        let one = Scenario { epochs: 1, ..self.clone() };
        Ok(one.epoch_loop(mode)?.remove(0))
    }
}
