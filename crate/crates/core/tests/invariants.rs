use std::sync::Arc;

use proptest::prelude::*;

use ratetip::asymptotics::{compute_coefficients, partial_sum_to};
use ratetip::equilibria::{find_equilibria, min_branch_gap, trace_branch, Stability};
use ratetip::grid::{TauGrid, DEFAULT_GRID_POINTS};
use ratetip::integrate::{estimate_pullback_attractor, solve_ivp, PullbackOptions};
use ratetip::model::{quad_arctan, quad_tanh, BoundBox, ModelSpec, PolynomialField, RampFunction, RampShape, StandardRamp};
use ratetip::tipping::{d_in, d_out, delta_curve, detect_tipping, refine_bracket, ProbeConfig, TipOptions, TippingSetup};

fn scaled_quadratic(zeta: f64, c: f64) -> ModelSpec {
    let field = PolynomialField::quadratic(zeta, BoundBox::new(-1e6, 1e6, -1.0, 1.0)).scaled(c);
    ModelSpec::new("scaled", Arc::new(field), Arc::new(StandardRamp::new(RampShape::Arctan, -1.0, 1.0))).unwrap()
}

fn r_star(model: &ModelSpec) -> f64 {
    let setup = TippingSetup::new(model, 1).unwrap();
    let opts = TipOptions { oracle_tol: None, rel_width: 1e-6, ..TipOptions::default() };
    detect_tipping(&setup, 1, 0.2, 30.0, (0.05, 5.0), &opts).unwrap().r_star.unwrap()
}

#[test]
fn critical_rate_scales_with_the_field() {
    let base = r_star(&quad_arctan(0.1).unwrap());
    let doubled = r_star(&scaled_quadratic(0.1, 2.0));
    assert!((doubled / 2.0 - base).abs() < 1e-4 * base, "{doubled} vs 2 × {base}");
}

#[test]
fn pullback_attractor_is_independent_of_anchor_spacing() {
    let m = quad_arctan(0.1).unwrap();
    let setup = TippingSetup::new(&m, 0).unwrap();
    let mut a = PullbackOptions::new(1e-10);
    a.anchor_spacing = Some(20.0);
    let mut b = PullbackOptions::new(1e-10);
    b.anchor_spacing = Some(75.0);
    let sa = estimate_pullback_attractor(&m, setup.stable(), 0.2, (-30.0, 30.0), &a).unwrap();
    let sb = estimate_pullback_attractor(&m, setup.stable(), 0.2, (-30.0, 30.0), &b).unwrap();
    for t in sa.checkpoints(121) {
        assert!((sa.eval(t).unwrap() - sb.eval(t).unwrap()).abs() < 1e-8, "t = {t}");
    }
}

#[test]
fn tanh_ramp_tips_earlier_than_arctan() {
    // the tanh ramp is steeper at the origin, so the pullback attractor tips at a lower rate
    let arctan = r_star(&quad_arctan(0.1).unwrap());
    let tanh = r_star(&quad_tanh(0.1).unwrap());
    assert!(tanh < arctan, "{tanh} vs {arctan}");
}

#[test]
fn delta_shrinks_with_the_horizon() {
    let setup = TippingSetup::new(&quad_arctan(0.1).unwrap(), 1).unwrap();
    let opts = TipOptions { oracle_tol: None, ..TipOptions::default() };
    let [lo, hi] = detect_tipping(&setup, 1, 0.2, 30.0, (0.05, 5.0), &opts).unwrap().bracket.unwrap();
    let (rs, _) = refine_bracket(&setup, 1, 0.2, 30.0, lo, hi, 1e-12, 1e-10).unwrap();
    let curve = delta_curve(&setup, 1, 0.2, rs, &[0.0, 5.0, 10.0, 30.0], 1e-11, 1e-10).unwrap();
    assert!(curve.iter().all(|d| d.defined));
    assert!(curve.windows(2).all(|w| w[1].delta < w[0].delta));
    assert!((curve[0].delta - 0.1649).abs() < 1e-3 && (curve[2].delta - 0.0050).abs() < 2e-4);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn branches_follow_closed_form(zeta in 0.01f64..3.0, tau in -200.0f64..200.0) {
        let m = quad_arctan(zeta).unwrap();
        let lam = std::f64::consts::FRAC_2_PI * tau.atan();
        let eq = find_equilibria(m.field(), lam).unwrap();
        prop_assert_eq!(eq.len(), 2);
        let s = eq.iter().find(|e| e.stability == Stability::Stable).unwrap();
        let u = eq.iter().find(|e| e.stability == Stability::Unstable).unwrap();
        prop_assert!((s.x - (lam + zeta.sqrt())).abs() < 1e-10);
        prop_assert!((u.x - (lam - zeta.sqrt())).abs() < 1e-10);
        prop_assert!((s.derivative + 2.0 * zeta.sqrt()).abs() < 1e-8);
    }

    #[test]
    fn collision_gap_is_twice_root_zeta(zeta in 0.01f64..3.0) {
        let m = quad_arctan(zeta).unwrap();
        let grid = TauGrid::graded(StandardRamp::new(RampShape::Arctan, -1.0, 1.0).tail_tau(), 801, 1.0);
        let eq = find_equilibria(m.field(), -1.0).unwrap();
        let s = trace_branch(&m, eq.iter().find(|e| e.stability == Stability::Stable).unwrap(), &grid).unwrap();
        let u = trace_branch(&m, eq.iter().find(|e| e.stability == Stability::Unstable).unwrap(), &grid).unwrap();
        prop_assert!((min_branch_gap(&s, &u).unwrap() - 2.0 * zeta.sqrt()).abs() < 1e-9);
    }

    #[test]
    fn solutions_preserve_order(x0 in -0.5f64..0.9, dx in 1e-3f64..0.3, r in 0.02f64..1.0, t0 in -40.0f64..0.0) {
        let m = quad_arctan(0.1).unwrap();
        let a = solve_ivp(&m, r, t0, x0, t0 + 15.0, 1e-10).unwrap();
        let b = solve_ivp(&m, r, t0, x0 + dx, t0 + 15.0, 1e-10).unwrap();
        let (ta, tb) = (a.t_range(), b.t_range());
        let end = ta.1.min(tb.1);
        for k in 0..=60 {
            let t = t0 + (end - t0) * k as f64 / 60.0;
            if let (Some(xa), Some(xb)) = (a.eval(t), b.eval(t)) {
                prop_assert!(xa < xb, "t = {}: {} !< {}", t, xa, xb);
            }
        }
    }

    #[test]
    fn discriminants_positive_at_small_rates(r in 0.01f64..0.08, tau in 0.0f64..30.0) {
        let setup = TippingSetup::new(&quad_arctan(0.1).unwrap(), 1).unwrap();
        let cfg = ProbeConfig { n: 1, epsilon: 0.2, tau, r };
        prop_assert!(d_out(&setup, &cfg, 1e-10).unwrap().is_positive());
        prop_assert!(d_in(&setup, &cfg, 1e-10).unwrap().is_positive());
    }

    #[test]
    fn first_coefficients_are_antisymmetric(zeta in 0.05f64..2.0, tau in -30.0f64..30.0) {
        let m = quad_arctan(zeta).unwrap();
        let grid = TauGrid::graded(40.0, DEFAULT_GRID_POINTS / 4, 1.0);
        let eq = find_equilibria(m.field(), -1.0).unwrap();
        let branch = |k: Stability| trace_branch(&m, eq.iter().find(|e| e.stability == k).unwrap(), &grid).unwrap();
        let ss = compute_coefficients(&branch(Stability::Stable), 1).unwrap();
        let su = compute_coefficients(&branch(Stability::Unstable), 1).unwrap();
        prop_assert!((ss.coefficient(1, tau) + su.coefficient(1, tau)).abs() < 1e-9);
        let r = 0.05;
        let gap = partial_sum_to(&ss, 1, r, tau / r) - partial_sum_to(&su, 1, r, tau / r);
        prop_assert!((gap - 2.0 * zeta.sqrt() - 2.0 * r * ss.coefficient(1, tau)).abs() < 1e-9);
    }
}
