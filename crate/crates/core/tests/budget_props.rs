use proptest::prelude::*;

use specroll::budget::{
    accepted_tokens, accepted_tokens_rounds, allocate, objective, optimal_budget_given_nfwd, remaining_tokens,
    solve_optimal_nfwd, unlimited_plan, BudgetConfig, RequestProfile, RoundParams,
};
use specroll::latency::LatencyParams;

fn profile() -> impl Strategy<Value = RequestProfile> {
    (16.0f64..4096.0, 0.5f64..4.0, 0.3f64..=1.0).prop_map(|(l, a, k)| RequestProfile::new(l, a, k).unwrap())
}

fn batch() -> impl Strategy<Value = Vec<RequestProfile>> {
    prop::collection::vec(profile(), 1..=8)
}

fn params() -> impl Strategy<Value = LatencyParams> {
    (-3.0f64..-1.0, 0.0f64..10.0).prop_map(|(e, c)| LatencyParams::new(1.0, 10f64.powf(e), c))
}

fn cfg() -> BudgetConfig {
    BudgetConfig::default()
}

proptest! {
    #[test]
    fn acceptance_curve_increasing_and_concave(r in profile()) {
        let step = r.l / r.alpha / 50.0;
        let ys: Vec<f64> = (0..200).map(|i| accepted_tokens(&r, i as f64 * step)).collect();
        let d: Vec<f64> = ys.windows(2).map(|w| w[1] - w[0]).collect();
        prop_assert!(d.iter().all(|&x| x > 0.0));
        prop_assert!(d.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-9)));
        prop_assert!(ys.iter().all(|&y| y <= r.k * r.l));
    }

    #[test]
    fn budget_round_trip(r in profile(), u in 0.001f64..0.999) {
        let lo = r.l * (1.0 - r.k);
        let n = lo + u * (r.l - lo);
        let p = optimal_budget_given_nfwd(&r, n, f64::INFINITY);
        prop_assert!((remaining_tokens(&r, p) - n).abs() <= 1e-9 * n);
    }

    // sweeps stay inside the reachable region, where the closed form applies
    #[test]
    fn budget_non_increasing_in_nfwd(r in profile()) {
        let lo = r.l * (1.0 - r.k);
        let ps: Vec<f64> = (1..=100)
            .map(|i| lo + (r.l * 1.2 - lo) * i as f64 / 100.0)
            .map(|n| optimal_budget_given_nfwd(&r, n, cfg().p_max_factor))
            .collect();
        prop_assert!(ps.windows(2).all(|w| w[1] <= w[0]));
        prop_assert_eq!(*ps.last().unwrap(), 0.0);
    }

    #[test]
    fn budget_non_decreasing_in_l(alpha in 0.5f64..4.0, k in 0.3f64..=1.0, n in 16.0f64..2048.0) {
        let l_top = if k < 1.0 { n / (1.0 - k) } else { 8.0 * n };
        let ps: Vec<f64> = (1..100)
            .map(|i| 1.0 + (l_top - 1.0) * i as f64 / 100.0)
            .map(|l| optimal_budget_given_nfwd(&RequestProfile::new(l, alpha, k).unwrap(), n, cfg().p_max_factor))
            .collect();
        prop_assert!(ps.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn solver_is_global_minimum(b in batch(), p in params()) {
        let n = solve_optimal_nfwd(&b, &p, &cfg());
        let j = objective(&b, n, &p, &cfg());
        let l_max = b.iter().map(|r| r.l).fold(0.0, f64::max);
        for i in 0..=1000 {
            let other = objective(&b, i as f64 * 1e-3 * l_max, &p, &cfg());
            prop_assert!(j <= other * (1.0 + 1e-9), "J({n}) = {j} > J at grid point {i} = {other}");
        }
    }

    #[test]
    fn unlimited_never_beats_optimized(b in batch(), p in params()) {
        let das = allocate(&b, &p, &cfg());
        let unl = unlimited_plan(&b, &p, &cfg());
        prop_assert!(das.modeled_cost <= unl.modeled_cost);
        for (r, &x) in b.iter().zip(&das.budgets) {
            if r.l <= das.n_fwd_star {
                prop_assert_eq!(x, 0.0);
            }
        }
    }

    // capacity: the optimum only gets better as k grows
    #[test]
    fn optimum_improves_with_capacity(mut b in batch(), p in params(), k0 in 0.3f64..0.9, dk in 0.0f64..0.1) {
        let alpha = b[0].alpha;
        let plan_at = |b: &mut Vec<RequestProfile>, k: f64| {
            for r in b.iter_mut() {
                r.k = k;
                r.alpha = alpha;
            }
            allocate(b, &p, &cfg())
        };
        let lo = plan_at(&mut b, k0);
        let hi = plan_at(&mut b, k0 + dk);
        let baseline = p.c_base * b.iter().map(|r| r.l).fold(0.0, f64::max) + p.c_fixed;
        prop_assert!(baseline / hi.modeled_cost >= baseline / lo.modeled_cost * (1.0 - 1e-9));
    }

    #[test]
    fn single_request_budget_grows_with_capacity(l in 16.0f64..4096.0, alpha in 0.5f64..4.0, k0 in 0.3f64..0.95, dk in 0.0f64..0.05, p in params()) {
        let at = |k: f64| allocate(&[RequestProfile::new(l, alpha, k).unwrap()], &p, &cfg()).budgets[0];
        prop_assert!(at(k0 + dk) >= at(k0) * (1.0 - 1e-9));
    }

    #[test]
    fn rounds_match_geometric_sum(a0 in 0.0f64..=1.0, beta in 0.0f64..3.0, d in 1u32..32, rounds in 0u32..80) {
        let rp = RoundParams { a0, beta, d: f64::from(d), rounds };
        let explicit: f64 = (0..rounds).map(|j| a0 * f64::from(d) * (-beta * f64::from(j)).exp()).sum();
        let got = accepted_tokens_rounds(&rp);
        prop_assert!((got - explicit).abs() <= 1e-9 * explicit.max(1e-12));
    }
}
