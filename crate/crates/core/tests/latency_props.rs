use proptest::prelude::*;

use specroll::latency::{fit, LatencyParams, ProfileSample};

fn samples(c_base: f64, c_tok: f64, ns: &[u32]) -> Vec<ProfileSample> {
    ns.iter()
        .map(|&n| ProfileSample { n_toks: f64::from(n), t_observed: c_base + c_tok * f64::from(n) })
        .collect()
}

fn ns() -> impl Strategy<Value = Vec<u32>> {
    prop::collection::vec(1u32..512, 2..40).prop_filter("two distinct sizes", |v| v.iter().any(|&x| x != v[0]))
}

proptest! {
    #[test]
    fn predict_total_is_linear(c in (0.0f64..10.0, 0.0f64..1.0, 0.0f64..50.0), a in 0.0f64..1e4, b in 0.0f64..1e5, s in 0.0f64..5.0) {
        let p = LatencyParams::new(c.0, c.1, c.2);
        let tol = 1e-9 * (1.0 + p.predict_total((1.0 + s) * a, (1.0 + s) * b).abs());
        let fa = |x: f64| p.predict_total(x, b) - p.predict_total(0.0, b);
        let fb = |x: f64| p.predict_total(a, x) - p.predict_total(a, 0.0);
        prop_assert!((fa(s * a) - s * fa(a)).abs() <= tol);
        prop_assert!((fb(s * b) - s * fb(b)).abs() <= tol);
    }

    #[test]
    fn fit_recovers_noiseless_line(c_base in 0.1f64..50.0, c_tok in 0.001f64..2.0, ns in ns()) {
        let f = fit(&samples(c_base, c_tok, &ns)).unwrap();
        prop_assert!((f.params.c_base - c_base).abs() <= 1e-9 * c_base.max(1.0));
        prop_assert!((f.params.c_tok - c_tok).abs() <= 1e-9 * c_tok.max(1.0));
        prop_assert!(f.mean_relative_error < 1e-9);
    }

    #[test]
    fn fit_scales_with_time_unit(c_base in 0.1f64..50.0, c_tok in 0.001f64..2.0, ns in ns(), noise in prop::collection::vec(-0.1f64..0.1, 40), k in 0.001f64..1000.0) {
        let mut s = samples(c_base, c_tok, &ns);
        for (x, e) in s.iter_mut().zip(&noise) {
            x.t_observed *= 1.0 + e;
        }
        let scaled: Vec<ProfileSample> = s.iter().map(|x| ProfileSample { n_toks: x.n_toks, t_observed: k * x.t_observed }).collect();
        let (a, b) = (fit(&s).unwrap().params, fit(&scaled).unwrap().params);
        prop_assert!((b.c_base - k * a.c_base).abs() <= 1e-8 * (k * a.c_base).abs().max(k));
        prop_assert!((b.c_tok - k * a.c_tok).abs() <= 1e-8 * (k * a.c_tok).abs().max(k * 1e-3));
    }
}
