//! Closed-form gauges against adaptive Simpson quadrature of the gains.

use etpt::tbg::{error_bound, ConvergenceBound, TbgKind, TbgSpec};

#[allow(clippy::too_many_arguments)]
fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol.max(1e-13 * (left + right).abs()) {
        return left + right + delta / 15.0;
    }
    simpson(f, a, m, fa, flm, fm, left, tol, depth - 1) + simpson(f, m, b, fm, frm, fb, right, tol, depth - 1)
}

fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson(&f, a, b, fa, fm, fb, whole, tol, 40)
}

fn check(spec: TbgSpec, times: &[f64], rel: f64) {
    for &t in times {
        // geometric panels towards t_pre resolve the spike of the blow-up gain
        let end = t.min(spec.t_pre);
        let mut cuts = vec![0.0];
        cuts.extend((1..=14).map(|j| spec.t_pre * (1.0 - 10f64.powi(-j))).filter(|c| *c < end));
        cuts.push(end);
        let mut q: f64 = cuts.windows(2).map(|w| integrate(|s| spec.gain_on_segment(s, true), w[0], w[1], 1e-13)).sum();
        if t > spec.t_pre {
            q += integrate(|s| spec.gain_on_segment(s, false), spec.t_pre, t, 1e-12);
        }
        let g = spec.gauge(t).unwrap();
        assert!((g - q).abs() <= rel * g.abs().max(1.0), "{:?} t = {t}: closed form {g}, quadrature {q}", spec.kind);
    }
}

#[test]
fn quadratic_and_constant_gauges() {
    check(TbgSpec::new(TbgKind::Quadratic, 2.0), &[0.3, 1.0, 2.0, 4.5], 1e-12);
    check(TbgSpec::new(TbgKind::ConstantBoost, 3.0), &[0.3, 3.0, 7.0], 1e-12);
    assert_eq!(TbgSpec::new(TbgKind::Quadratic, 2.0).gauge(2.0).unwrap(), 48.0);
}

#[test]
fn blowup_gauge_matches_quadrature() {
    for eps in [1e-3, 1e-7, 1e-9] {
        let spec = TbgSpec::new(TbgKind::PolynomialBlowup, 3.0).with_epsilon_reg(eps);
        check(spec, &[0.5, 1.5, 2.5, 2.9, 2.99, 3.0, 5.0], 1e-8);
    }
}

#[test]
fn blowup_gauge_at_settling_time() {
    // the polynomial reaches 1 at t_pre, so the log term is ln((1 + ε)/ε)
    let spec = TbgSpec::new(TbgKind::PolynomialBlowup, 3.0).with_epsilon_reg(1e-7);
    let want = 3.0 + (1.0f64 + 1e-7).ln() - (1e-7f64).ln();
    assert!((spec.gauge(3.0).unwrap() - want).abs() < 1e-12);
    assert!((spec.gauge(3.0).unwrap() - 19.118095751).abs() < 1e-8);
    assert_eq!(spec.gain(3.0).unwrap(), 1.0);
}

#[test]
fn error_bound_shrinks_with_gauge() {
    let a = error_bound(0.5, 100.0, 0.5, 10.0).unwrap();
    let b = error_bound(0.5, 100.0, 0.5, 20.0).unwrap();
    assert!(b < a);
    assert!((a - (200.0 * (-5.0f64).exp()).sqrt()).abs() < 1e-12);
    assert!(error_bound(0.5, 1.0, 0.0, 1.0).is_err());
    assert!(ConvergenceBound::new(-1.0, 1.0, 1.0, 1.0).is_err());
}
