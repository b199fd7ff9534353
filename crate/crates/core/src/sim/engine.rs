use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::target::{other_token, stream_key, MockTarget};
use super::{BudgetMode, Request};
use crate::budget::{allocate, BudgetConfig, RequestProfile};
use crate::corpus::TokenId;
use crate::drafter::{DraftProposal, Drafter};
use crate::latency::LatencyParams;
use crate::length_policy::{
    build_class_table, classify_init, update_class, ClassBudgets, ClassTable, LengthClass, LengthHistory,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BudgetSettings {
    /// Acceptance prior used until something better is fitted.
    pub alpha: f64,
    pub k: f64,
    /// Steps between re-plans.
    pub replan_interval: usize,
    pub p_max_factor: f64,
    /// Refit `(alpha, k)` from finished requests between epochs.
    pub fit_between_epochs: bool,
}

impl Default for BudgetSettings {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            k: 0.8,
            replan_interval: 32,
            p_max_factor: crate::budget::DEFAULT_P_MAX_FACTOR,
            fit_between_epochs: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LengthPolicySettings {
    pub enabled: bool,
    pub q_lo: f64,
    pub q_hi: f64,
    pub bucket: u64,
    pub classes: ClassBudgets,
}

impl Default for LengthPolicySettings {
    fn default() -> Self {
        Self {
            enabled: false,
            q_lo: crate::length_policy::DEFAULT_Q_LO,
            q_hi: crate::length_policy::DEFAULT_Q_HI,
            bucket: crate::length_policy::DEFAULT_BUCKET,
            classes: ClassBudgets::default(),
        }
    }
}

/// Where drafts come from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DraftSource {
    /// The suffix-tree drafter over rollout history.
    #[default]
    History,
    /// Each drafted token matches the target with a fixed probability,
    /// independent of history.
    Static { acceptance: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub mode: BudgetMode,
    pub latency: LatencyParams,
    pub budget: BudgetSettings,
    pub length_policy: LengthPolicySettings,
    pub draft_source: DraftSource,
    pub max_steps: usize,
    pub seed: u64,
    pub vocab: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RequestMetrics {
    pub problem_id: String,
    pub l: usize,
    /// Forward passes this request took part in.
    pub n_fwd: usize,
    pub proposed: usize,
    pub accepted: usize,
    /// Tokens produced by the target itself rather than accepted drafts.
    pub decoded: usize,
    pub completed: bool,
    pub tokens: Vec<TokenId>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepTrace {
    pub step: usize,
    pub effective_batch: usize,
    /// Requests that attempted speculation this step.
    pub rounds: usize,
    pub proposed: usize,
    pub accepted: usize,
    /// Tokens processed by the pass: drafts plus one per request.
    pub n_toks: usize,
}

impl StepTrace {
    pub fn accepted_per_round(&self) -> f64 {
        if self.rounds == 0 {
            0.0
        } else {
            self.accepted as f64 / self.rounds as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimMetrics {
    pub mode: BudgetMode,
    pub epoch: u64,
    pub requests: Vec<RequestMetrics>,
    pub trace: Vec<StepTrace>,
    pub n_toks_total: usize,
    /// Token total when only emitted tokens are charged.
    pub n_toks_accepted_only: usize,
    pub makespan_model_time: f64,
    pub makespan_accepted_only: f64,
    /// Every request reached its length within `max_steps`.
    pub complete: bool,
    /// Drafter index size at the end of the episode.
    pub drafter_nodes: usize,
}

impl SimMetrics {
    /// Batch forward passes.
    pub fn n_fwd(&self) -> usize {
        self.trace.len()
    }

    pub fn total_rounds(&self) -> usize {
        self.trace.iter().map(|s| s.rounds).sum()
    }

    pub fn total_accepted(&self) -> usize {
        self.requests.iter().map(|r| r.accepted).sum()
    }

    pub fn total_proposed(&self) -> usize {
        self.requests.iter().map(|r| r.proposed).sum()
    }

    pub fn mean_accepted_per_round(&self) -> f64 {
        match self.total_rounds() {
            0 => 0.0,
            n => self.total_accepted() as f64 / n as f64,
        }
    }
}

struct Live {
    generated: Vec<TokenId>,
    n_fwd: usize,
    proposed: usize,
    accepted: usize,
    decoded: usize,
    class: LengthClass,
    /// Per-round draft length from the last plan.
    planned: usize,
    /// Budget multiplier from the last plan, before class scaling.
    plan_budget: f64,
    plan_rounds: f64,
}

fn static_draft(cfg: &SimConfig, target: &MockTarget, req: usize, pos: usize, n: usize, acceptance: f64) -> Vec<TokenId> {
    (0..n)
        .map_while(|j| {
            let truth = target.target_next(req, pos + j)?;
            let mut rng = ChaCha8Rng::seed_from_u64(stream_key(cfg.seed, req as u64, (pos + j) as u64, 2));
            Some(if rng.random_bool(acceptance.clamp(0.0, 1.0)) {
                truth
            } else {
                other_token(&mut rng, truth, cfg.vocab)
            })
        })
        .collect()
}

/// Expected total length per request from history: the problem's mean,
/// else the mean over all history, else the median request length.
fn length_estimates(requests: &[Request], history: &LengthHistory) -> Vec<f64> {
    let mean = |ls: &[u64]| ls.iter().sum::<u64>() as f64 / ls.len() as f64;
    let all: Vec<u64> = history.iter().map(|(_, l)| l).collect();
    let global = if all.is_empty() {
        let mut ls: Vec<usize> = requests.iter().map(Request::len).collect();
        ls.sort_unstable();
        ls.get(ls.len() / 2).copied().unwrap_or(1) as f64
    } else {
        mean(&all)
    };
    requests
        .iter()
        .map(|r| match history.lengths(&r.problem_id) {
            [] => global,
            ls => mean(ls),
        })
        .collect()
}

fn replan(cfg: &SimConfig, live: &mut [Live], estimates: &[f64], active: &[usize], max_draft: usize) {
    let profiles: Vec<RequestProfile> = active
        .iter()
        .map(|&i| {
            let pos = live[i].generated.len() as f64;
            // a request past its estimate is assumed to run half as long again
            let rem = if estimates[i] > pos { estimates[i] - pos } else { 0.5 * pos };
            RequestProfile { l: rem.max(1.0), alpha: cfg.budget.alpha, k: cfg.budget.k.clamp(1e-6, 1.0) }
        })
        .collect();
    let bc = BudgetConfig { p_max_factor: cfg.budget.p_max_factor, ..BudgetConfig::default() };
    let plan = allocate(&profiles, &cfg.latency, &bc);
    let rounds = plan.n_fwd_star.max(1.0);
    for (&i, &p) in active.iter().zip(&plan.budgets) {
        live[i].plan_budget = p;
        live[i].plan_rounds = rounds;
        live[i].planned = ((p / rounds).ceil() as usize).min(max_draft);
    }
}

/// Runs one synchronous batch: every step each active request drafts,
/// is verified, and advances by the tokens the target emits.
pub fn run_episode(
    cfg: &SimConfig,
    requests: &[Request],
    target: &MockTarget,
    drafter: &mut Drafter,
    history: &LengthHistory,
) -> SimMetrics {
    let max_draft = drafter.config().max_draft_len;
    let table: Option<ClassTable> = (cfg.length_policy.enabled && !history.is_empty())
        .then(|| {
            let lp = &cfg.length_policy;
            build_class_table(history, lp.q_lo, lp.q_hi, lp.bucket.max(1), lp.classes).ok()
        })
        .flatten();
    let estimates = length_estimates(requests, history);
    let mut live: Vec<Live> = requests
        .iter()
        .map(|r| Live {
            generated: Vec::with_capacity(r.len()),
            n_fwd: 0,
            proposed: 0,
            accepted: 0,
            decoded: 0,
            class: table.as_ref().map_or(LengthClass::Medium, |t| classify_init(t, history, &r.problem_id)),
            planned: 0,
            plan_budget: 0.0,
            plan_rounds: 1.0,
        })
        .collect();

    let mut trace = Vec::new();
    let (mut n_toks_total, mut n_toks_emitted) = (0usize, 0usize);
    let mut step = 0;
    loop {
        let active: Vec<usize> = (0..requests.len()).filter(|&i| live[i].generated.len() < requests[i].len()).collect();
        if active.is_empty() || step >= cfg.max_steps {
            break;
        }
        if cfg.mode == BudgetMode::Das && step % cfg.budget.replan_interval.max(1) == 0 {
            replan(cfg, &mut live, &estimates, &active, max_draft);
        }
        let mut st = StepTrace { step, effective_batch: active.len(), rounds: 0, proposed: 0, accepted: 0, n_toks: 0 };
        for &i in &active {
            let req = &requests[i];
            let s = &mut live[i];
            let pos = s.generated.len();
            if let Some(t) = &table {
                s.class = update_class(t, pos as u64, s.class);
            }
            let settings = table.as_ref().map(|t| t.settings(s.class));
            let want = match cfg.mode {
                BudgetMode::None => 0,
                BudgetMode::Unlimited => match settings {
                    Some(c) if !c.speculation_enabled => 0,
                    Some(c) => c.per_round_draft_len.min(max_draft),
                    None => max_draft,
                },
                BudgetMode::Das => match settings {
                    Some(c) if !c.speculation_enabled => 0,
                    Some(c) => (((s.plan_budget * c.p_scale) / s.plan_rounds).ceil() as usize).min(max_draft),
                    None => s.planned,
                },
            };
            let want = want.min(req.len() - pos);
            let draft = match (want, cfg.draft_source) {
                (0, _) => Vec::new(),
                (n, DraftSource::History) => drafter.draft(&req.problem_id, &s.generated, n).tokens,
                (n, DraftSource::Static { acceptance }) => static_draft(cfg, target, i, pos, n, acceptance),
            };
            let v = target.verify_draft(i, pos, &draft);
            if want > 0 {
                st.rounds += 1;
                let proposal = DraftProposal {
                    problem_id: req.problem_id.clone(),
                    tokens: draft.clone(),
                    source_shard: None,
                    match_len: 0,
                };
                drafter.record_outcome(&proposal, v.accepted).expect("accepted never exceeds draft");
            }
            st.proposed += draft.len();
            st.accepted += v.accepted;
            st.n_toks += draft.len() + 1;
            n_toks_emitted += v.emitted.len();
            s.n_fwd += 1;
            s.proposed += draft.len();
            s.accepted += v.accepted;
            s.decoded += v.emitted.len() - v.accepted;
            s.generated.extend_from_slice(&v.emitted);
        }
        n_toks_total += st.n_toks;
        trace.push(st);
        step += 1;
    }

    let steps = trace.len() as f64;
    let lat = &cfg.latency;
    let metrics: Vec<RequestMetrics> = requests
        .iter()
        .zip(live)
        .map(|(r, s)| RequestMetrics {
            problem_id: r.problem_id.clone(),
            l: r.len(),
            n_fwd: s.n_fwd,
            proposed: s.proposed,
            accepted: s.accepted,
            decoded: s.decoded,
            completed: s.generated.len() == r.len(),
            tokens: s.generated,
        })
        .collect();
    let complete = metrics.iter().all(|m| m.completed);
    if !complete {
        log::warn!("episode stopped at max_steps={} with unfinished requests", cfg.max_steps);
    }
    SimMetrics {
        mode: cfg.mode,
        epoch: 0,
        requests: metrics,
        trace,
        n_toks_total,
        n_toks_accepted_only: n_toks_emitted,
        makespan_model_time: lat.predict_total(steps, n_toks_total as f64),
        makespan_accepted_only: lat.predict_total(steps, n_toks_emitted as f64),
        complete,
        drafter_nodes: drafter.node_count(),
    }
}
