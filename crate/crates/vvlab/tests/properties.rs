use proptest::prelude::*;

use vvlab::agmon::AgmonProfile;
use vvlab::bounds::Bounds;
use vvlab::classical::{interaction_time, period, phase_volume};
use vvlab::moment::{gevrey_derivative, sine_biorthogonal, KernelEvaluator, DEFAULT_ALPHA_MARGIN};
use vvlab::problem::{validate_assumptions, CaseSign, Potential, Sign, VectorField};
use vvlab::sim::{duality_residual, solve_control_conjugated, solve_observation, TimeGrid};
use vvlab::spectral::{discretize, points_for};
use vvlab::transport::FlowMap;

fn preset() -> VectorField {
    VectorField::example(1.0, 2.0, Sign::Minus, 2.0).unwrap()
}

fn sign() -> impl Strategy<Value = Sign> {
    prop_oneof![Just(Sign::Plus), Just(Sign::Minus)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn potential_invariant_under_constant_shift(c in -5.0f64..5.0, x in 0.0f64..2.0) {
        let f = preset();
        let g = f.clone().with_offset(c);
        prop_assert_eq!(f.v(x), g.v(x));
        prop_assert!((g.f(x) - f.f(x) - c).abs() < 1e-12);
    }

    #[test]
    fn example_potential_even_about_midpoint(m in 0.5f64..2.0, a in 0.5f64..4.0, l in 1.0f64..2.0, s in sign(), u in 0.0f64..1.0) {
        let f = VectorField::example(m, a, s, l).unwrap();
        let pot = Potential::new(&f).unwrap();
        prop_assert!((pot.x0 - l / 2.0).abs() < 1e-9 * l);
        let y = u * l / 2.0;
        let (v1, v2) = (f.v(l / 2.0 - y), f.v(l / 2.0 + y));
        prop_assert!((v1 - v2).abs() <= 1e-12 * v1.abs().max(1.0));
    }

    #[test]
    fn case_sign_matches_derivative_sign(m in 0.5f64..2.0, a in 0.5f64..4.0, l in 1.0f64..2.0, s in sign()) {
        let f = VectorField::example(m, a, s, l).unwrap();
        let rep = validate_assumptions(&f);
        let grid = f.grid(2001);
        let min = grid.iter().map(|&x| f.fp(x)).fold(f64::INFINITY, f64::min);
        let max = grid.iter().map(|&x| f.fp(x)).fold(f64::NEG_INFINITY, f64::max);
        prop_assert_eq!(rep.case_sign == CaseSign::Increasing, min > 0.0);
        prop_assert_eq!(rep.case_sign == CaseSign::Decreasing, max < 0.0);
    }

    #[test]
    fn agmon_distance_derivative_is_root_gap(e_frac in 0.05f64..0.95, u in 0.02f64..0.98) {
        let pot = Potential::new(&preset()).unwrap();
        let e = pot.e0 + e_frac * (pot.vmax - pot.e0);
        let p = AgmonProfile::new(&pot, e).unwrap();
        let x = u * p.x_minus;
        let h = 1e-6;
        let fd = (p.d(x + h) - p.d(x - h)) / (2.0 * h);
        let exact = (pot.v(x) - e).max(0.0).sqrt();
        prop_assert!((fd.abs() - exact).abs() < 1e-6 * exact.max(1.0), "fd {} exact {}", fd, exact);
    }

    #[test]
    fn agmon_distance_nonincreasing_in_energy(e1 in 0.0f64..1.0, e2 in 0.0f64..1.0, x in 0.0f64..2.0) {
        let pot = Potential::new(&preset()).unwrap();
        let (lo, hi) = if e1 < e2 { (e1, e2) } else { (e2, e1) };
        let at = |s: f64| AgmonProfile::new(&pot, pot.e0 + s * (pot.vmax - pot.e0)).unwrap().d(x);
        prop_assert!(at(hi) <= at(lo) + 1e-12);
    }

    #[test]
    fn weights_shift_covariant(c in -3.0f64..3.0, e_frac in 0.0f64..1.0, x in 0.0f64..2.0) {
        let f = preset();
        let pot = Potential::new(&f).unwrap();
        let pot_c = Potential::new(&f.clone().with_offset(c)).unwrap();
        let e = pot.e0 + e_frac * (pot.vmax - pot.e0);
        let p = AgmonProfile::new(&pot, e).unwrap();
        let q = AgmonProfile::new(&pot_c, e).unwrap();
        prop_assert!((q.w(x) - p.w(x) - c / 2.0).abs() < 1e-10);
        prop_assert!((q.wt(x) - p.wt(x) - c / 2.0).abs() < 1e-10);
    }

    #[test]
    fn kernel_bounded_by_s(u in 0.01f64..0.99, v in -0.999f64..0.999) {
        let s_half = 3.0;
        let k = KernelEvaluator::for_window(s_half, 1.5, DEFAULT_ALPHA_MARGIN).unwrap();
        let (t, s) = (u * 1.5, v * s_half);
        prop_assert!(k.eval(t, s).unwrap().abs() <= s.abs());
    }

    #[test]
    fn gevrey_derivatives_reflect(u in 0.02f64..0.98, j in 0usize..12) {
        let (alpha, t_end) = (3.0, 1.3);
        let t = u * t_end;
        let a = gevrey_derivative(alpha, t_end, t, j).unwrap();
        let b = gevrey_derivative(alpha, t_end, t_end - t, j).unwrap();
        let sgn = if j % 2 == 0 { 1.0 } else { -1.0 };
        prop_assert!((a - sgn * b).abs() <= 1e-10 * a.abs().max(1e-300));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn phase_volume_derivative_matches_period(u in 0.1f64..0.9, high in any::<bool>()) {
        let pot = Potential::new(&preset()).unwrap();
        let e = if high { 1.3 * pot.vmax + u * 3.0 } else { pot.e0 + (0.05 + 0.9 * u) * (pot.vmax - pot.e0) };
        let h = 1e-4 * e;
        let fd = (phase_volume(&pot, e + h).unwrap() - phase_volume(&pot, e - h).unwrap()) / (2.0 * h);
        let exact = period(&pot, e).unwrap() / (4.0 * e.sqrt());
        prop_assert!((fd - exact).abs() < 1e-5 * fd.abs(), "E {} fd {} exact {}", e, fd, exact);
    }

    #[test]
    fn interaction_time_nondecreasing_in_b(e_frac in 0.0f64..1.0, b0 in 0.0f64..1.0) {
        let pot = Potential::new(&preset()).unwrap();
        let e = pot.e0 + e_frac * (pot.vmax - pot.e0);
        let ts: Vec<f64> = (0..5).map(|i| interaction_time(&pot, e, b0 * (1 + i) as f64).unwrap()).collect();
        prop_assert!(ts.windows(2).all(|w| w[1] >= w[0] - 1e-10), "{:?}", ts);
    }

    #[test]
    fn compare_chain(e_frac in 0.0f64..1.0, b in 0.0f64..5.0) {
        let pot = Potential::new(&preset()).unwrap();
        let bounds = Bounds::new(&pot).unwrap();
        let e = pot.e0 + e_frac * (pot.vmax - pot.e0);
        let (g14, g15) = bounds.g14_g15(e).unwrap();
        prop_assert!(g14 / pot.e0 >= g14 / e - 1e-12);
        prop_assert!(g14 / e >= g15 / (e + b) - 1e-12);
        let tb = interaction_time(&pot, e, b).unwrap();
        prop_assert!(tb >= 0.0 && tb / (e + b) <= vvlab::classical::kappa0() * bounds.s16() / pot.e0);
    }

    #[test]
    fn flow_semigroup(x in 0.1f64..1.9, a in 0.0f64..1.0, b in 0.0f64..1.0) {
        let flow = FlowMap::new(&VectorField::example(1.0, 2.0, Sign::Plus, 2.0).unwrap()).unwrap();
        let t_exit = flow.exit_time(x);
        let (s, t) = (a * 0.5 * t_exit, b * 0.5 * t_exit);
        let y = flow.flow(flow.flow(x, s).unwrap(), t).unwrap();
        let z = flow.flow(x, s + t).unwrap();
        prop_assert!((y - z).abs() < 1e-9, "{} vs {}", y, z);
    }

    #[test]
    fn sine_family_biorthogonal_for_separated_frequencies(gaps in proptest::collection::vec(1.0f64..3.0, 3..7), s_half in 2.0f64..4.0) {
        let mut b = 0.5;
        let betas: Vec<f64> = gaps.iter().map(|g| { b += g; b }).collect();
        let fam = sine_biorthogonal(&betas, s_half, betas.len()).unwrap();
        prop_assert!(fam.gram_residual < 1e-20);
        prop_assert!(fam.quadrature_residual() < 1e-8);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn duality_on_random_smooth_data(c in proptest::collection::vec(-1.0f64..1.0, 9)) {
        let f = preset();
        let eps = 0.05;
        let disc = discretize(&f, eps, points_for(&f, eps, 20.0)).unwrap();
        let grid = TimeGrid::for_eps(0.3, eps);
        let pi = std::f64::consts::PI;
        let u0: Vec<f64> = disc.x.iter().map(|&x| c[0] * (pi * x / 2.0).sin() + c[1] * (pi * x).sin() + c[2] * (1.5 * pi * x).sin()).collect();
        let y0: Vec<f64> = disc.x.iter().map(|&x| c[3] * (pi * x / 2.0).sin() + c[4] * (pi * x).sin() + c[5] * (2.0 * pi * x).sin()).collect();
        let h = |t: f64| c[6] + c[7] * (3.0 * t).sin() + c[8] * (7.0 * t).cos();
        let u = solve_observation(&f, &disc, grid, &u0, grid.nt).unwrap();
        let y = solve_control_conjugated(&f, &disc, grid, h, &y0, grid.nt).unwrap();
        prop_assert!(duality_residual(&u, &y, h).unwrap() < 1e-5);
    }
}
