//! End-to-end acceptance checks. Runs without the libtest harness so every
//! criterion prints its own line; exits non-zero if any fails.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use specroll::budget::{
    accepted_tokens_rounds, allocate, objective, optimal_budget_given_nfwd, remaining_tokens, solve_optimal_nfwd,
    unlimited_plan, BudgetConfig, RequestProfile, RoundParams,
};
use specroll::corpus::{TokenId, Window};
use specroll::drafter::DrafterConfig;
use specroll::latency::{fit, LatencyParams, ProfileSample};
use specroll::sim::{write_token_dump, BatchSpec, BudgetMode, Scenario, SimMetrics, SyntheticBatch};
use specroll::suffix_index::{bench_index, Structure, SuffixArrayIndex, SuffixTree};

type Criterion = (&'static str, fn() -> Outcome);

struct Outcome {
    pass: bool,
    detail: String,
}

fn check(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

fn random_profile(rng: &mut ChaCha8Rng) -> RequestProfile {
    RequestProfile::new(rng.random_range(16.0..=4096.0), rng.random_range(0.5..=4.0), rng.random_range(0.3..=1.0))
        .unwrap()
}

fn random_batch(rng: &mut ChaCha8Rng) -> Vec<RequestProfile> {
    let n = rng.random_range(1..=8);
    (0..n).map(|_| random_profile(rng)).collect()
}

fn random_params(rng: &mut ChaCha8Rng) -> LatencyParams {
    // c_tok/c_base log-uniform over [1e-3, 1e-1]
    let ratio = 10f64.powf(rng.random_range(-3.0..=-1.0));
    LatencyParams::new(1.0, ratio, rng.random_range(0.0..=10.0))
}

fn c1_optimizer_vs_grid() -> Outcome {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let cfg = BudgetConfig::default();
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let batch = random_batch(&mut rng);
        let params = random_params(&mut rng);
        let l_max = batch.iter().map(|r| r.l).fold(0.0, f64::max);
        let step = 1e-3 * l_max;
        let grid = (0..=1000)
            .map(|i| objective(&batch, i as f64 * step, &params, &cfg))
            .fold(f64::INFINITY, f64::min);
        let j = objective(&batch, solve_optimal_nfwd(&batch, &params, &cfg), &params, &cfg);
        // the solver may only beat the grid, never lose to it by more than the tolerance
        worst = worst.max((j - grid) / grid);
    }
    let elapsed = t0.elapsed();
    check(
        worst <= 1e-3 && elapsed < Duration::from_secs(10),
        format!("worst (J_solver - J_grid)/J_grid = {worst:.2e}, {elapsed:.2?}"),
    )
}

fn c2_round_trip() -> Outcome {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let r = random_profile(&mut rng);
        let lo = r.l * (1.0 - r.k);
        let n = loop {
            let n = rng.random_range(lo..r.l);
            if n > lo {
                break n;
            }
        };
        let p = optimal_budget_given_nfwd(&r, n, f64::INFINITY);
        worst = worst.max(rel(remaining_tokens(&r, p), n));
    }
    let elapsed = t0.elapsed();
    check(
        worst <= 1e-9 && elapsed < Duration::from_secs(1),
        format!("worst relative error {worst:.2e}, {elapsed:.2?}"),
    )
}

fn c3_observations() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let cfg = BudgetConfig::default();
    let mut failures = Vec::new();

    // budget grows with length at a fixed reachable pass count
    for _ in 0..200 {
        let (alpha, k) = (rng.random_range(0.5..=4.0), rng.random_range(0.3..=1.0));
        let mut ls: Vec<f64> = (0..8).map(|_| rng.random_range(16.0..=4096.0)).collect();
        ls.sort_by(f64::total_cmp);
        let n = rng.random_range(ls[7] * (1.0 - k)..=ls[7]) + 1e-9;
        let ps: Vec<f64> = ls
            .iter()
            .map(|&l| optimal_budget_given_nfwd(&RequestProfile::new(l, alpha, k).unwrap(), n, cfg.p_max_factor))
            .collect();
        if ps.windows(2).any(|w| w[1] < w[0]) {
            failures.push(format!("p* decreasing in l at N={n}"));
            break;
        }
    }

    let mut das_worse = 0;
    let mut zero_branch = 0;
    let mut monotone_at_opt = 0;
    for _ in 0..200 {
        let mut batch = random_batch(&mut rng);
        let params = random_params(&mut rng);
        let plan = allocate(&batch, &params, &cfg);
        let unl = unlimited_plan(&batch, &params, &cfg);
        if plan.modeled_cost > unl.modeled_cost {
            das_worse += 1;
        }
        for (r, &p) in batch.iter().zip(&plan.budgets) {
            if r.l <= plan.n_fwd_star && p != 0.0 {
                zero_branch += 1;
            }
        }
        // shared (α, k): the optimal plan orders budgets by length
        let (a, k) = (batch[0].alpha, batch[0].k);
        for r in &mut batch {
            r.alpha = a;
            r.k = k;
        }
        batch.sort_by(|x, y| x.l.total_cmp(&y.l));
        let plan = allocate(&batch, &params, &cfg);
        if plan.budgets.windows(2).any(|w| w[1] < w[0]) {
            monotone_at_opt += 1;
        }
    }
    if das_worse > 0 {
        failures.push(format!("J(das) > J(unlimited) on {das_worse} batches"));
    }
    if zero_branch > 0 {
        failures.push(format!("{zero_branch} requests with l <= N* got p > 0"));
    }
    if monotone_at_opt > 0 {
        failures.push(format!("optimal budgets not ordered by l on {monotone_at_opt} batches"));
    }

    // limits: free drafted tokens send N* to 0 when every request can be fully
    // covered, and to the reachable floor otherwise; free passes zero all budgets
    let free_tokens = LatencyParams::new(1.0, 0.0, 0.0);
    let free_passes = LatencyParams::new(0.0, 1.0, 0.0);
    for _ in 0..100 {
        let mut batch = random_batch(&mut rng);
        let floor = batch.iter().map(|r| r.l * (1.0 - r.k)).fold(0.0, f64::max);
        if solve_optimal_nfwd(&batch, &free_tokens, &cfg) != floor {
            failures.push("c_tok = 0 did not reach the floor".into());
            break;
        }
        let plan = allocate(&batch, &free_passes, &cfg);
        if plan.budgets.iter().any(|&p| p != 0.0) {
            failures.push("c_base = 0 left a non-zero budget".into());
            break;
        }
        for r in &mut batch {
            r.k = 1.0;
        }
        if solve_optimal_nfwd(&batch, &free_tokens, &cfg) != 0.0 {
            failures.push("c_tok = 0 with k = 1 did not give N* = 0".into());
            break;
        }
        // and N* shrinks as c_tok/c_base does
        let mut last = f64::INFINITY;
        for ratio in [1e-1, 1e-2, 1e-3, 1e-4, 1e-5] {
            let n = solve_optimal_nfwd(&batch, &LatencyParams::new(1.0, ratio, 0.0), &cfg);
            if n > last {
                failures.push(format!("N* grew as c_tok shrank ({last} -> {n})"));
                break;
            }
            last = n;
        }
    }

    let pass = failures.is_empty();
    check(pass, if pass { "all directions hold on 200 random batches".into() } else { failures.join("; ") })
}

fn c4_rounds() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let rp = RoundParams {
            a0: rng.random_range(0.01..=1.0),
            beta: rng.random_range(0.001..=2.0),
            d: f64::from(rng.random_range(1..=16u32)),
            rounds: rng.random_range(1..=64),
        };
        let explicit: f64 = (1..=rp.rounds).map(|j| rp.a0 * rp.d * (-rp.beta * f64::from(j - 1)).exp()).sum();
        worst = worst.max(rel(accepted_tokens_rounds(&rp), explicit));
    }
    let mut worst_limit = 0.0f64;
    for _ in 0..200 {
        let mut rp = RoundParams {
            a0: rng.random_range(0.01..=1.0),
            beta: 1e-12,
            d: f64::from(rng.random_range(1..=16u32)),
            rounds: rng.random_range(1..=64),
        };
        let want = rp.a0 * rp.d * f64::from(rp.rounds);
        worst_limit = worst_limit.max(rel(accepted_tokens_rounds(&rp), want));
        rp.beta = 0.0;
        worst_limit = worst_limit.max(rel(accepted_tokens_rounds(&rp), want));
    }
    check(
        worst <= 1e-9 && worst_limit <= 1e-6,
        format!("geometric sum error {worst:.2e}, beta->0 error {worst_limit:.2e}"),
    )
}

fn brute_longest(corpus: &[Vec<TokenId>], query: &[TokenId]) -> usize {
    for start in 0..query.len() {
        let s = &query[start..];
        if corpus.iter().any(|seq| seq.windows(s.len()).any(|w| w == s)) {
            return s.len();
        }
    }
    0
}

fn c5_suffix_oracle() -> Outcome {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut mismatches = 0;
    for _ in 0..1000 {
        let alphabet = rng.random_range(1..=6u32);
        let total = rng.random_range(1..=200usize);
        let parts = rng.random_range(1..=4usize).min(total);
        let mut corpus: Vec<Vec<TokenId>> = vec![Vec::new(); parts];
        for i in 0..total {
            corpus[i % parts].push(rng.random_range(0..alphabet));
        }
        let qlen = rng.random_range(0..=50usize);
        let query: Vec<TokenId> = (0..qlen).map(|_| rng.random_range(0..alphabet + 1)).collect();

        let want = brute_longest(&corpus, &query);
        let mut tree = SuffixTree::new();
        for s in &corpus {
            tree.add_sequence(s, 0);
        }
        let sa = SuffixArrayIndex::build(&corpus);
        if tree.longest_match(&query).match_len != want || sa.longest_match(&query) != want {
            mismatches += 1;
        }
    }
    let elapsed = t0.elapsed();
    check(
        mismatches == 0 && elapsed < Duration::from_secs(30),
        format!("{mismatches} mismatches in 1000 instances, {elapsed:.2?}"),
    )
}

fn c6_insert_vs_rebuild() -> Outcome {
    let t0 = Instant::now();
    let rows = bench_index(&[100_000], 100, 6);
    let elapsed = t0.elapsed();
    let get = |s: Structure| rows.iter().find(|r| r.structure == s).unwrap().update_time_us;
    let (tree, sa) = (get(Structure::SuffixTree), get(Structure::SuffixArray));
    let speedup = sa / tree.max(1e-3);
    check(
        speedup >= 10.0 && elapsed < Duration::from_secs(120),
        format!("tree insert {tree:.1}us, array rebuild {sa:.1}us, {speedup:.0}x, {elapsed:.2?}"),
    )
}

fn quantile(sorted: &[usize], q: f64) -> f64 {
    sorted[((sorted.len() - 1) as f64 * q).round() as usize] as f64
}

fn c7_batch_collapse() -> Outcome {
    let sc = Scenario {
        seed: 7,
        batch: BatchSpec::Synthetic(SyntheticBatch { requests: 256, median_len: 512.0, sigma: 1.2, ..SyntheticBatch::default() }),
        ..Scenario::default()
    };
    let mut lens: Vec<usize> = sc.build_requests().iter().map(|r| r.len()).collect();
    lens.sort_unstable();
    let tail = quantile(&lens, 0.99) / quantile(&lens, 0.5);
    let mut failures = Vec::new();
    let mut last_share = 0.0f64;
    for mode in [BudgetMode::None, BudgetMode::Unlimited, BudgetMode::Das] {
        let m = sc.run_single(mode).unwrap();
        let b: Vec<usize> = m.trace.iter().map(|s| s.effective_batch).collect();
        if b.windows(2).any(|w| w[1] > w[0]) {
            failures.push(format!("{mode}: effective batch increased"));
        }
        let steps = b.len();
        let from = steps - (steps as f64 * 0.1).ceil() as usize;
        let worst = b[from..].iter().copied().max().unwrap_or(0) as f64 / b[0] as f64;
        last_share = last_share.max(worst);
        if worst > 0.1 {
            failures.push(format!("{mode}: {:.0}% active in the last 10% of steps", worst * 100.0));
        }
    }
    if tail < 8.0 {
        failures.push(format!("p99/p50 only {tail:.1}"));
    }
    check(
        failures.is_empty(),
        format!("p99/p50 = {tail:.1}, max active share in final 10% = {:.1}%{}", last_share * 100.0, tail_note(&failures)),
    )
}

fn tail_note(failures: &[String]) -> String {
    if failures.is_empty() {
        String::new()
    } else {
        format!("; {}", failures.join("; "))
    }
}

fn c8_budget_vs_unlimited() -> Outcome {
    let mut lines = Vec::new();
    let mut pass = true;
    let (mut min_gain, mut max_unl, mut max_das) = (f64::INFINITY, 0.0f64, 0.0f64);
    for seed in 0..5 {
        let sc = Scenario {
            seed,
            divergence_rate: 0.1,
            latency: LatencyParams::new(1.0, 0.01, 0.0),
            ..Scenario::default()
        };
        let run = |m| sc.run_single(m).unwrap().makespan_model_time;
        let (none, unl, das) = (run(BudgetMode::None), run(BudgetMode::Unlimited), run(BudgetMode::Das));
        let gain = 1.0 - das / unl;
        min_gain = min_gain.min(gain);
        max_unl = max_unl.max(unl / none);
        max_das = max_das.max(das / none);
        if gain < 0.10 || unl > 0.7 * none || das > 0.7 * none {
            pass = false;
            lines.push(format!("seed {seed} fails"));
        }
    }
    check(
        pass,
        format!(
            "das vs unlimited >= {:.1}% lower; unlimited/none <= {max_unl:.3}, das/none <= {max_das:.3}{}",
            min_gain * 100.0,
            tail_note(&lines)
        ),
    )
}

fn mean_apr(runs: &[SimMetrics]) -> f64 {
    let acc: usize = runs.iter().map(SimMetrics::total_accepted).sum();
    let rounds: usize = runs.iter().map(SimMetrics::total_rounds).sum();
    acc as f64 / rounds.max(1) as f64
}

fn c9_window_under_drift() -> Outcome {
    let mut pass = true;
    let mut details = Vec::new();
    for seed in 0..3 {
        let run = |w: Window| {
            let sc = Scenario {
                seed,
                epochs: 32,
                mutation_rate: 0.3,
                divergence_rate: 0.05,
                batch: BatchSpec::Synthetic(SyntheticBatch { requests: 16, median_len: 256.0, sigma: 0.5, ..SyntheticBatch::default() }),
                drafter: DrafterConfig { window: w, ..DrafterConfig::default() },
                ..Scenario::default()
            };
            let runs = sc.epoch_loop(BudgetMode::Unlimited).unwrap();
            let nodes = runs.iter().map(|m| m.drafter_nodes).max().unwrap_or(0);
            (mean_apr(&runs), nodes)
        };
        let finite: Vec<(u64, f64, usize)> = [1, 4, 16, 32]
            .iter()
            .map(|&w| {
                let (a, n) = run(Window::Epochs(w));
                (w, a, n)
            })
            .collect();
        let (all_apr, all_nodes) = run(Window::All);
        let best = finite.iter().max_by(|a, b| a.1.total_cmp(&b.1)).unwrap();
        let max_finite_nodes = finite.iter().map(|f| f.2).max().unwrap();
        let ok = best.1 >= 0.95 * all_apr && all_nodes >= max_finite_nodes;
        pass &= ok;
        details.push(format!(
            "seed {seed}: best W={} {:.3} vs all {:.3}, nodes all {} vs finite max {}",
            best.0, best.1, all_apr, all_nodes, max_finite_nodes
        ));
    }
    check(pass, details.join("; "))
}

fn c10_lossless() -> Outcome {
    let mut differing = 0;
    for seed in 0..3 {
        for policy in [false, true] {
            let mut sc = Scenario {
                seed,
                batch: BatchSpec::Synthetic(SyntheticBatch { requests: 32, median_len: 256.0, ..SyntheticBatch::default() }),
                ..Scenario::default()
            };
            sc.length_policy.enabled = policy;
            let dumps: Vec<Vec<u8>> = [BudgetMode::None, BudgetMode::Unlimited, BudgetMode::Das]
                .iter()
                .map(|&m| {
                    let mut buf = Vec::new();
                    write_token_dump(&sc.run_single(m).unwrap(), &mut buf).unwrap();
                    buf
                })
                .collect();
            if dumps[1] != dumps[0] || dumps[2] != dumps[0] {
                differing += 1;
            }
        }
    }
    check(differing == 0, format!("{differing} of 6 configurations differ across modes"))
}

fn c11_latency_fit() -> Outcome {
    let (c_base, c_tok) = (5.0, 0.1);
    let noise = Normal::new(0.0, 0.1).unwrap();
    let (mut worst_base, mut worst_tok, mut worst_mre) = (0.0f64, 0.0f64, 0.0f64);
    for seed in 0..100 {
        let mut rng = ChaCha8Rng::seed_from_u64(1100 + seed);
        let samples: Vec<ProfileSample> = (1..=256)
            .map(|n| {
                let t = (c_base + c_tok * f64::from(n)) * (1.0 + noise.sample(&mut rng));
                ProfileSample { n_toks: f64::from(n), t_observed: t.max(1e-6) }
            })
            .collect();
        let f = fit(&samples).unwrap();
        worst_base = worst_base.max(rel(f.params.c_base, c_base));
        worst_tok = worst_tok.max(rel(f.params.c_tok, c_tok));
        worst_mre = worst_mre.max(f.mean_relative_error);
    }
    check(
        worst_base <= 0.1 && worst_tok <= 0.1 && worst_mre <= 0.15,
        format!("worst c_base error {:.1}%, c_tok error {:.1}%, MRE {worst_mre:.3}", worst_base * 100.0, worst_tok * 100.0),
    )
}

fn main() -> ExitCode {
    let criteria: [Criterion; 11] = [
        ("budget optimizer matches grid search", c1_optimizer_vs_grid),
        ("closed-form budget round trip", c2_round_trip),
        ("budget observations", c3_observations),
        ("per-round acceptance sum", c4_rounds),
        ("suffix index vs brute force", c5_suffix_oracle),
        ("tree insert vs array rebuild", c6_insert_vs_rebuild),
        ("effective batch collapse", c7_batch_collapse),
        ("budget-aware vs unlimited drafting", c8_budget_vs_unlimited),
        ("history window under drift", c9_window_under_drift),
        ("lossless across modes", c10_lossless),
        ("latency fit on noisy data", c11_latency_fit),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let o = f();
        if !o.pass {
            failed += 1;
        }
        println!("acceptance {:>2} {:<36} {}  {}", i + 1, name, if o.pass { "PASS" } else { "FAIL" }, o.detail);
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
