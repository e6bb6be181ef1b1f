#![allow(clippy::needless_range_loop)]

use etpt::etm::{eta_derivative, eta_derivative_capped, local_disagreement, trigger_fired, EtmKind, EtmParams};
use etpt::graph::build_network;
use etpt::objectives::{lp_value, update_weights, ObjectiveFn, PreferenceIndex, TechnicalForm};
use etpt::oracle::solve_dispatch;
use etpt::projection::{ConvexSet, Interval};
use etpt::tbg::{TbgKind, TbgSpec};
use proptest::prelude::*;

fn interval() -> impl Strategy<Value = Interval> {
    (-100.0..100.0f64, 0.5..80.0f64).prop_map(|(lo, w)| Interval { lower: lo, upper: lo + w })
}

fn objective() -> impl Strategy<Value = ObjectiveFn> {
    prop_oneof![
        (0.01..3.0f64, -20.0..20.0f64, -10.0..10.0f64).prop_map(|(a, b, c)| ObjectiveFn::Quadratic { a, b, c }),
        (0.05..1.0f64, 0.01..3.0f64, -20.0..20.0f64, -10.0..10.0f64)
            .prop_map(|(r_t, a, b, c)| ObjectiveFn::ScaledQuadratic { r_t, a, b, c }),
        (0.1..3.0f64, -50.0..50.0f64).prop_map(|(a_tec, p_opt)| ObjectiveFn::Technical {
            a_tec,
            p_opt,
            form: TechnicalForm::SquaredDeviation
        }),
    ]
}

fn etm_params() -> impl Strategy<Value = EtmParams> {
    (0.01..1.0f64, 0.05..=1.0f64, 0.01..0.99f64, 0.01..1.0f64, 0.1..1000.0f64, 0.0..5.0f64).prop_map(
        |(phi, delta, beta, varsigma, eta0, extra)| EtmParams {
            alpha: (1.0 - delta) / phi + 0.1 + extra,
            phi,
            delta,
            beta,
            varsigma,
            eta0,
        },
    )
}

fn central_difference(f: impl Fn(f64) -> f64, x: f64) -> f64 {
    let h = 1e-6;
    (f(x + h) - f(x - h)) / (2.0 * h)
}

fn relative_gap(fd: f64, g: f64) -> f64 {
    (fd - g).abs() / g.abs().max(1.0)
}

proptest! {
    #[test]
    fn projection_lands_in_set_and_is_idempotent(set in interval(), x in -300.0..300.0f64) {
        let p = set.project_point(x);
        prop_assert!(set.contains(p, 0.0));
        prop_assert_eq!(set.project_point(p), p);
        if set.contains(x, 0.0) {
            prop_assert_eq!(p, x);
        }
    }

    #[test]
    fn tangent_projection_is_directional_derivative(set in interval(), s in 0.0..=1.0f64, v in -50.0..50.0f64) {
        let x = if s < 0.1 { set.lower } else if s > 0.9 { set.upper } else { set.lower + s * set.width() };
        let d = set.project_tangent(x, v).unwrap();
        let h = 1e-7;
        let fd = (set.project_point(x + h * v) - x) / h;
        prop_assert!((d - fd).abs() <= 1e-6 * v.abs().max(1.0), "{d} vs {fd}");
        // the flow never points out of the set
        prop_assert!(set.contains(x + 1e-6 * d, 1e-12));
    }

    #[test]
    fn objective_gradient_matches_finite_difference(f in objective(), set in interval(), s in 0.01..0.99f64) {
        let x = set.lower + s * set.width();
        prop_assert!(relative_gap(central_difference(|y| f.value(y), x), f.gradient(x)) < 1e-5);
    }

    #[test]
    fn strong_convexity_witness(f in objective(), set in interval(), s1 in 0.0..=1.0f64, s2 in 0.0..=1.0f64) {
        let (x1, x2) = (set.lower + s1 * set.width(), set.lower + s2 * set.width());
        let m = f.modulus_on(&set);
        prop_assert!(m > 0.0);
        let lhs = (f.gradient(x2) - f.gradient(x1)) * (x2 - x1);
        prop_assert!(lhs >= m * (x2 - x1).powi(2) * (1.0 - 1e-9) - 1e-12);
    }

    #[test]
    fn preference_gradient_matches_finite_difference(
        fs in prop::collection::vec(objective(), 1..4),
        raw in prop::collection::vec(0.05..1.0f64, 3),
        p in prop_oneof![Just(1.0), Just(2.0), 1.5..4.0f64],
        set in interval(),
        s in 0.02..0.98f64,
    ) {
        let k = fs.len();
        let weights = update_weights(&raw[..k]).unwrap();
        // ideal values below every attainable value keep the gaps positive
        let ideals: Vec<f64> = fs.iter().map(|f| {
            let grid = (0..=200).map(|j| f.value(set.lower + set.width() * j as f64 / 200.0));
            grid.fold(f64::INFINITY, f64::min) - 1.0
        }).collect();
        let u = PreferenceIndex::new(p, weights, ideals, fs).unwrap();
        let x = set.lower + s * set.width();
        let fd = central_difference(|y| u.value(y).unwrap(), x);
        prop_assert!(relative_gap(fd, u.gradient(x).unwrap()) < 1e-5);
    }

    #[test]
    fn preference_is_monotone_in_each_gap(
        raw in prop::collection::vec(0.01..1.0f64, 1..5),
        gaps in prop::collection::vec(0.0..100.0f64, 5),
        bump in 0.0..10.0f64,
        idx in 0usize..5,
        p in 1.0..5.0f64,
    ) {
        let k = raw.len();
        let w = update_weights(&raw).unwrap();
        let g = gaps[..k].to_vec();
        let mut h = g.clone();
        h[idx % k] += bump;
        prop_assert!(lp_value(p, &w, &h) >= lp_value(p, &w, &g) * (1.0 - 1e-12));
    }

    #[test]
    fn weights_lie_on_simplex(values in prop::collection::vec(-1e4..1e4f64, 1..8)) {
        prop_assume!(values.iter().any(|v| v.abs() > 1e-9));
        let w = update_weights(&values).unwrap();
        prop_assert!(w.iter().all(|x| *x >= 0.0));
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn disagreement_sums_to_laplacian_form(
        n in 2usize..8,
        edges in prop::collection::vec(0.0..2.0f64, 28),
        values in prop::collection::vec(-10.0..10.0f64, 8),
    ) {
        let mut a = vec![vec![0.0; n]; n];
        let mut e = edges.iter();
        for i in 0..n {
            for j in (i + 1)..n {
                let w = *e.next().unwrap();
                a[i][j] = w;
                a[j][i] = w;
            }
        }
        // keep the graph connected
        for i in 0..n - 1 {
            a[i][i + 1] += 0.5;
            a[i + 1][i] += 0.5;
        }
        let net = build_network(a).unwrap();
        let v = &values[..n];
        let total: f64 = (0..n)
            .map(|i| local_disagreement(v[i], net.neighbors(i).iter().map(|&(j, w)| (w, v[j]))))
            .sum();
        prop_assert!((total - net.quadratic_form(v)).abs() <= 1e-9 * total.abs().max(1.0));
    }

    #[test]
    fn dynamic_rule_fires_only_when_prior_rule_does(
        p in etm_params(),
        e in -5.0..5.0f64,
        q in 0.0..50.0f64,
        l_ii in 0.0..4.0f64,
        eta in 1e-6..100.0f64,
    ) {
        let dynamic = trigger_fired(&p, EtmKind::DynamicPaper, e, q, l_ii, eta).unwrap();
        let prior = trigger_fired(&p, EtmKind::DynamicPrior, e, q, l_ii, eta).unwrap();
        prop_assert!(!dynamic || prior);
        prop_assert!(!trigger_fired(&p, EtmKind::Static, 0.0, q.max(1e-3), l_ii, eta).unwrap());
    }

    #[test]
    fn eta_decay_is_bounded_between_events(
        p in etm_params(),
        e in -5.0..5.0f64,
        q in 0.0..50.0f64,
        l_ii in 0.0..4.0f64,
        eta in 1e-6..100.0f64,
        gain in 0.0..100.0f64,
    ) {
        for kind in [EtmKind::DynamicPaper, EtmKind::DynamicPrior] {
            if !trigger_fired(&p, kind, e, q, l_ii, eta).unwrap() {
                let d = eta_derivative(&p, kind, gain, e, q, l_ii, eta);
                prop_assert!(d >= -gain * p.envelope_rate() * eta * (1.0 + 1e-12) - 1e-12);
            }
        }
        prop_assert_eq!(eta_derivative(&p, EtmKind::DynamicPaper, 0.0, e, q, l_ii, eta), 0.0);
    }

    #[test]
    fn capped_eta_rate_matches_between_events_and_is_bounded(
        p in etm_params(),
        e in -50.0..50.0f64,
        q in 0.0..50.0f64,
        l_ii in 0.0..4.0f64,
        eta in 1e-6..100.0f64,
        gain in 0.0..100.0f64,
    ) {
        for kind in [EtmKind::DynamicPaper, EtmKind::DynamicPrior] {
            let capped = eta_derivative_capped(&p, kind, gain, e, q, l_ii, eta);
            prop_assert!(capped >= -gain * p.envelope_rate() * eta * (1.0 + 1e-12) - 1e-12);
            if !trigger_fired(&p, kind, e, q, l_ii, eta).unwrap() {
                prop_assert_eq!(capped, eta_derivative(&p, kind, gain, e, q, l_ii, eta));
            }
        }
    }

    #[test]
    fn gauge_is_monotone_and_integrates_gain(
        kind in prop_oneof![Just(TbgKind::Quadratic), Just(TbgKind::ConstantBoost), Just(TbgKind::PolynomialBlowup)],
        t_pre in 0.5..5.0f64,
        s1 in 0.0..2.0f64,
        s2 in 0.0..2.0f64,
    ) {
        let g = TbgSpec::new(kind, t_pre).with_epsilon_reg(1e-3);
        let (a, b) = if s1 <= s2 { (s1 * t_pre, s2 * t_pre) } else { (s2 * t_pre, s1 * t_pre) };
        prop_assert!(g.gauge(b).unwrap() >= g.gauge(a).unwrap());
        prop_assert!(g.gain(a).unwrap() >= 0.0);
        let t = a + 1e-3;
        if (t - t_pre).abs() > 1e-2 {
            let fd = central_difference(|x| g.gauge(x).unwrap(), t);
            prop_assert!(relative_gap(fd, g.gain(t).unwrap()) < 1e-5);
        }
    }

    #[test]
    fn dispatch_is_monotone_in_demand(
        coeffs in prop::collection::vec((0.05..2.0f64, -5.0..5.0f64), 2..6),
        s1 in 0.0..=1.0f64,
        s2 in 0.0..=1.0f64,
    ) {
        let costs: Vec<ObjectiveFn> = coeffs.iter().map(|&(a, b)| ObjectiveFn::Quadratic { a, b, c: 0.0 }).collect();
        let bounds: Vec<Interval> = (0..costs.len()).map(|i| Interval { lower: i as f64, upper: 10.0 + i as f64 }).collect();
        let lo: f64 = bounds.iter().map(|b| b.lower).sum();
        let hi: f64 = bounds.iter().map(|b| b.upper).sum();
        let (d1, d2) = (lo + s1.min(s2) * (hi - lo), lo + s1.max(s2) * (hi - lo));
        let a = solve_dispatch(&costs, &bounds, d1).unwrap();
        let b = solve_dispatch(&costs, &bounds, d2).unwrap();
        prop_assert!(b.multiplier >= a.multiplier - 1e-9);
        for (xa, xb) in a.x_star.iter().zip(&b.x_star) {
            prop_assert!(*xb >= *xa - 1e-8);
        }
    }
}
