use proptest::prelude::*;

use specroll::corpus::{RolloutRecord, TokenId, Window, WindowStore};
use specroll::drafter::{Drafter, DrafterConfig, Scope};
use specroll::sim::{write_requests_csv, write_trace_csv, BatchSpec, BudgetMode, Scenario, SimMetrics, SyntheticBatch};

fn mode() -> impl Strategy<Value = BudgetMode> {
    prop_oneof![Just(BudgetMode::None), Just(BudgetMode::Unlimited), Just(BudgetMode::Das)]
}

fn small(seed: u64) -> Scenario {
    Scenario {
        seed,
        batch: BatchSpec::Synthetic(SyntheticBatch { requests: 8, median_len: 96.0, sigma: 0.8, ..SyntheticBatch::default() }),
        ..Scenario::default()
    }
}

fn csv(m: &SimMetrics) -> Vec<u8> {
    let mut buf = Vec::new();
    write_requests_csv(m, &mut buf).unwrap();
    write_trace_csv(m, &mut buf).unwrap();
    buf
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    // problem i only ever uses tokens in [100i, 100i + 10)
    #[test]
    fn per_problem_shards_are_isolated(
        seqs in prop::collection::vec((0u32..3, prop::collection::vec(0u32..10, 1..40)), 1..20),
        query in (0u32..3, prop::collection::vec(0u32..40, 0..12)),
        budget in 0usize..24,
    ) {
        let mut store = WindowStore::new(Window::All);
        for (i, (p, toks)) in seqs.iter().enumerate() {
            let toks: Vec<TokenId> = toks.iter().map(|t| t + 100 * p).collect();
            store.insert(RolloutRecord::new(format!("p{p}"), 0, i as u64, toks));
        }
        let cfg = DrafterConfig { scope: Scope::PerProblem, window: Window::All, ..DrafterConfig::default() };
        let d = Drafter::new(cfg, store).unwrap();
        let (p, ctx) = query;
        let ctx: Vec<TokenId> = ctx.iter().map(|t| t * 10).collect();
        let prop = d.draft(&format!("p{p}"), &ctx, budget);
        prop_assert!(prop.tokens.len() <= budget);
        prop_assert!(prop.tokens.iter().all(|&t| (100 * p..100 * p + 10).contains(&t)));
    }

    #[test]
    fn draft_within_budget(
        seqs in prop::collection::vec(prop::collection::vec(0u32..4, 1..40), 1..10),
        ctx in prop::collection::vec(0u32..4, 0..20),
        budget in 0usize..40,
        global in any::<bool>(),
    ) {
        let mut store = WindowStore::new(Window::All);
        for (i, s) in seqs.into_iter().enumerate() {
            store.insert(RolloutRecord::new(format!("p{}", i % 3), 0, i as u64, s));
        }
        let scope = if global { Scope::Global } else { Scope::PerProblemWithTrie };
        let d = Drafter::new(DrafterConfig { scope, max_draft_len: 8, ..DrafterConfig::default() }, store).unwrap();
        let prop = d.draft("p0", &ctx, budget);
        prop_assert!(prop.tokens.len() <= budget.min(8));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn completed_requests_conserve_tokens(seed in 0u64..1000, m in mode(), div in 0.0f64..0.5) {
        let sc = Scenario { divergence_rate: div, ..small(seed) };
        let r = sc.run_single(m).unwrap();
        prop_assert!(r.complete);
        for q in &r.requests {
            prop_assert!(q.completed);
            prop_assert_eq!(q.accepted + q.decoded, q.l);
            prop_assert_eq!(q.tokens.len(), q.l);
            prop_assert!(q.accepted <= q.proposed);
        }
    }

    #[test]
    fn same_seed_same_bytes(seed in 0u64..1000, m in mode()) {
        let sc = small(seed);
        prop_assert_eq!(csv(&sc.run_single(m).unwrap()), csv(&sc.run_single(m).unwrap()));
    }

    #[test]
    fn speculation_is_lossless(seed in 0u64..1000, div in 0.0f64..0.5, policy in any::<bool>()) {
        let mut sc = Scenario { divergence_rate: div, ..small(seed) };
        sc.length_policy.enabled = policy;
        let tokens = |m| sc.run_single(m).unwrap().requests.into_iter().map(|r| r.tokens).collect::<Vec<_>>();
        let base = tokens(BudgetMode::None);
        prop_assert_eq!(&base, &tokens(BudgetMode::Unlimited));
        prop_assert_eq!(&base, &tokens(BudgetMode::Das));
    }
}

#[test]
fn lower_divergence_never_slows_down() {
    for seed in 0..4 {
        for m in [BudgetMode::Unlimited, BudgetMode::Das] {
            let mut last = 0.0;
            for div in [0.4, 0.3, 0.2, 0.1, 0.05, 0.0] {
                let sc = Scenario { divergence_rate: div, ..small(seed) };
                let none = sc.run_single(BudgetMode::None).unwrap().makespan_model_time;
                let speedup = none / sc.run_single(m).unwrap().makespan_model_time;
                assert!(speedup >= last, "seed {seed} {m}: speedup {speedup} at divergence {div} < {last}");
                last = speedup;
            }
        }
    }
}

#[test]
fn wider_window_helps_without_drift() {
    for seed in 0..3 {
        let mut last = 0.0;
        for w in [Window::Epochs(1), Window::Epochs(4), Window::Epochs(16), Window::All] {
            let sc = Scenario {
                seed,
                epochs: 8,
                divergence_rate: 0.1,
                batch: BatchSpec::Synthetic(SyntheticBatch { requests: 8, median_len: 128.0, sigma: 0.5, ..SyntheticBatch::default() }),
                drafter: DrafterConfig { window: w, ..DrafterConfig::default() },
                ..Scenario::default()
            };
            let runs = sc.epoch_loop(BudgetMode::Unlimited).unwrap();
            let acc: usize = runs.iter().map(SimMetrics::total_accepted).sum();
            let rounds: usize = runs.iter().map(SimMetrics::total_rounds).sum();
            let apr = acc as f64 / rounds as f64;
            assert!(apr >= last, "seed {seed} window {w:?}: {apr} < {last}");
            last = apr;
        }
    }
}
