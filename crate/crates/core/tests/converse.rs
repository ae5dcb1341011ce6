use std::sync::Arc;

use mrf_core::catalog;
use mrf_core::converse::{
    build_bilateral_sequence, build_ell1, build_phi_psi, estimate_uniform_times, evaluate_j, kappa, max_speed,
    CrossingRule, JParams, JValue, KappaOptions, StripTimeOptions,
};
use mrf_core::kl::KlFunction;
use mrf_core::tables::{geometric_ladder, linear_ladder};
use mrf_core::{integrate_trajectory, BracketPair, ControlSchedule, ControlSystem};
use proptest::prelude::*;

fn beta_2r() -> KlFunction<f64> {
    let mut kr = vec![0.0];
    kr.extend(geometric_ladder(1e-12, 1e4, 300));
    KlFunction::from_fn(
        kr,
        linear_ladder(0.0, 40.0, 81),
        |r: f64, t: f64| 2.0 * r * (-t / (1.0 + r)).exp(),
        1e-4,
    )
    .unwrap()
}

fn beta_bar_exp() -> KlFunction<f64> {
    let mut kr = vec![0.0];
    kr.extend(geometric_ladder(1e-6, 1e3, 200));
    KlFunction::from_fn(
        kr,
        linear_ladder(0.0, 40.0, 401),
        |r: f64, t: f64| 2.0 * r * (-t).exp(),
        1.0,
    )
    .unwrap()
}

fn decay() -> ControlSystem<f64> {
    ControlSystem::new(
        "decay",
        1,
        vec![vec![0.0]],
        Arc::new(|x: &[f64], _u: &[f64], out: &mut [f64]| out[0] = -x[0]),
        Arc::new(|_x: &[f64], _u: &[f64]| 1.0),
        Arc::new(|x: &[f64]| x[0].abs()),
    )
    .unwrap()
    .with_ball_target(0.0)
}

fn hold(_z: &[f64]) -> ControlSchedule<f64> {
    ControlSchedule::constant(vec![0.0])
}

fn toward_origin(z: &[f64]) -> ControlSchedule<f64> {
    ControlSchedule::constant(vec![-z[0].signum()])
}

#[test]
fn decay_crossing_times() {
    let rt = build_bilateral_sequence(&beta_2r(), &BracketPair::identity(), -1, 4).unwrap();
    for (rule, expected) in [
        (CrossingRule::Midpoint, 6.4f64.ln()),
        (CrossingRule::StripEntry, 4f64.ln()),
    ] {
        let opts = StripTimeOptions {
            samples_per_strip: 8,
            rule,
            ..StripTimeOptions::default()
        };
        let times = estimate_uniform_times(&decay(), &hold, &rt, &opts).unwrap();
        for (obs, t) in times.observed.iter().zip(&times.times) {
            assert!(
                (obs - expected).abs() <= 1e-3 * expected,
                "{rule:?}: {obs} vs {expected}"
            );
            assert!((t - 1.5 * obs).abs() <= 1e-12);
        }
    }
}

#[test]
fn uniform_time_vanishes_below_r1_and_partial_sums_grow() {
    let sys = catalog::int1d_mintime::<f64>(3, vec![-2.0], vec![2.0]).without_domain();
    let rt = build_bilateral_sequence(&beta_2r(), &BracketPair::identity(), -3, 8).unwrap();
    let times = estimate_uniform_times(&sys, &toward_origin, &rt, &StripTimeOptions::default()).unwrap();
    let r1 = rt.r(1).unwrap();
    for r in [r1, 0.5 * r1, 0.01 * r1] {
        assert_eq!(times.uniform_time(r, &rt).unwrap(), 0.0);
    }
    assert!(times.uniform_time(2.0 * r1, &rt).unwrap() > 0.0);
    let floor = times.times.iter().copied().fold(f64::INFINITY, f64::min);
    assert!(floor > 0.0);
    let mut prev = 0.0;
    for n in 0..40 {
        let s = times.cumulative(times.first, n);
        assert!(s >= prev + floor * (1.0 - 1e-12));
        prev = s;
    }
    // unit speed: crossing (r_{i-1} -> midpoint of strip i) takes the distance gap
    for (k, obs) in times.observed.iter().enumerate() {
        let i = times.first + k as i32;
        let gap = rt.r(i - 1).unwrap() - 0.5 * (rt.r(i).unwrap() + rt.r(i + 1).unwrap());
        assert!((obs - gap).abs() <= 1e-6 * gap.max(1.0), "strip {i}: {obs} vs {gap}");
    }
}

#[test]
fn strip_times_are_deterministic_and_seeded() {
    let sys = catalog::int1d_mintime::<f64>(3, vec![-2.0], vec![2.0]).without_domain();
    let rt = build_bilateral_sequence(&beta_2r(), &BracketPair::identity(), -2, 6).unwrap();
    let a = estimate_uniform_times(&sys, &toward_origin, &rt, &StripTimeOptions::default()).unwrap();
    let b = estimate_uniform_times(&sys, &toward_origin, &rt, &StripTimeOptions::default()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn kappa_speed_bounds() {
    let ell1 = build_ell1(&beta_bar_exp(), &geometric_ladder(1e-3, 10.0, 50)).unwrap();
    let opts = KappaOptions::default();
    let int1d = catalog::int1d_mintime::<f64>(3, vec![-2.0], vec![2.0]);
    assert!((max_speed(&int1d, 0.5, 1.0, &opts).unwrap() - 1.0).abs() <= 1e-12);
    let k1 = kappa(0.5, 1.0, &int1d, &ell1, &opts).unwrap();
    assert!((k1 - ell1.value(0.5).unwrap()).abs() <= 1e-12);
    let fast = ControlSystem::new(
        "fast",
        1,
        vec![vec![-1.0], vec![0.0], vec![1.0]],
        Arc::new(|_x: &[f64], u: &[f64], out: &mut [f64]| out[0] = 2.0 * u[0]),
        Arc::new(|_x: &[f64], _u: &[f64]| 1.0),
        Arc::new(|x: &[f64]| (x[0].abs() - 0.1).max(0.0)),
    )
    .unwrap()
    .with_ball_target(0.1);
    assert!((kappa(0.5, 1.0, &fast, &ell1, &opts).unwrap() - 0.5 * k1).abs() <= 1e-12);
    let zermelo = catalog::zermelo::<f64>(16, vec![-2.0, -2.0], vec![2.0, 2.0]);
    // |f| <= 1 + 0.5 |y|, attained at y = 1.1 with heading along the current
    let bound = 1.0 + catalog::ZERMELO_DRIFT * 1.1;
    let m = max_speed(&zermelo, 0.5, 1.0, &opts).unwrap();
    assert!(m <= bound + 1e-12 && m >= bound - 1e-3, "{m} vs {bound}");
    assert!(max_speed(&int1d, 1.0, 0.5, &opts).is_err());
}

#[test]
fn phi_and_psi_on_powers_of_four() {
    let id = BracketPair::<f64>::identity();
    let rt = build_bilateral_sequence(&beta_2r(), &id, -4, 10).unwrap();
    let bb = beta_bar_exp();
    let pp = build_phi_psi(&rt, &id, &bb, 6.0, 2000).unwrap();
    for i in (rt.i_min() + 2)..=rt.i_max() {
        let expected = 32.0 / 3.0 * 4f64.powi(-i);
        assert!((pp.phi.eval(rt.r(i).unwrap()).unwrap() - expected).abs() <= 1e-9 * expected);
    }
    assert!((pp.psi.eval(0.0).unwrap() - (bb.value(1.0, 0.0) + 2.0)).abs() <= 1e-12);
    for j in 1..6 {
        let r = j as f64;
        assert!(pp.psi.eval(r).unwrap() >= bb.value(r, 0.0) + 2.0);
    }
}

#[test]
fn j_examples() {
    let sys = catalog::int1d_mintime::<f64>(3, vec![-2.0], vec![2.0]).without_domain();
    let ell = |r: f64| r;
    let p = JParams::default();
    match evaluate_j(&sys, &ell, &[0.5], &ControlSchedule::constant(vec![-1.0]), &p).unwrap() {
        // int_0^0.4 (0.4 - t) + 1 dt
        JValue::Finite { value, exit_time } => {
            assert!((value - 0.48).abs() <= 1e-9);
            assert!((exit_time - 0.4).abs() <= 1e-9);
        }
        other => panic!("expected finite J, got {other:?}"),
    }
    let out = evaluate_j(&sys, &ell, &[0.5], &ControlSchedule::constant(vec![1.0]), &p).unwrap();
    assert!(!out.is_finite());
    let capped = JParams { cap: 10.0, ..p };
    let slow = evaluate_j(
        &sys,
        &|r: f64| 1e3 * r,
        &[1.5],
        &ControlSchedule::constant(vec![-1.0]),
        &capped,
    )
    .unwrap();
    assert!(matches!(slow, JValue::Infinite { .. }));
    let free = sys.clone().with_running_cost(Arc::new(|_x: &[f64], _u: &[f64]| 0.0));
    let zero = evaluate_j(
        &free,
        &|_r: f64| 0.0,
        &[1.2],
        &ControlSchedule::constant(vec![-1.0]),
        &p,
    )
    .unwrap();
    assert_eq!(zero.value(), Some(0.0));
}

#[test]
fn strip_index_advances_one_at_a_time() {
    let id = BracketPair::<f64>::identity();
    let rt = build_bilateral_sequence(&beta_2r(), &id, -3, 10).unwrap();
    let sys = catalog::int1d_mintime::<f64>(3, vec![-20.0], vec![20.0]);
    for z in [15.0, -7.3, 2.2, 0.9] {
        let traj = integrate_trajectory(&sys, &[z], &toward_origin(&[z]), 1e-3, 100.0, rt.r(10).unwrap()).unwrap();
        let mut strip = rt.strip_index(sys.target_distance(&[z])).unwrap();
        let mut entered = 0.0;
        for (t, x) in traj.times.iter().zip(&traj.states) {
            let d = sys.target_distance(x);
            if d <= rt.r(rt.i_max()).unwrap() {
                break;
            }
            let i = rt.strip_index(d).unwrap();
            assert!(i == strip || i == strip + 1, "jumped from {strip} to {i}");
            if i == strip + 1 {
                // cost (= time) spent in the closed strip
                assert!(t - entered <= 0.5 * id.d_plus(rt.r(strip - 2).unwrap()) + 1e-9);
                strip = i;
                entered = *t;
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn strip_index_brackets_its_argument(e in -9.0f64..5.0) {
        let rt = build_bilateral_sequence(&beta_2r(), &BracketPair::identity(), -4, 8).unwrap();
        let r = 4f64.powf(e);
        prop_assume!(r > rt.r(rt.i_max()).unwrap() && r <= rt.r(rt.i_min()).unwrap());
        let i = rt.strip_index(r).unwrap();
        prop_assert!(r > rt.r(i).unwrap() && r <= rt.r(i - 1).unwrap());
    }

    #[test]
    fn kappa_inequality_on_confined_paths(
        start in 0.65f64..1.05,
        controls in prop::collection::vec(prop::sample::select(vec![-1.0f64, -0.5, 0.0, 0.5, 1.0]), 1..20),
    ) {
        let (b, c) = (0.5, 1.0);
        let ell1 = build_ell1(&beta_bar_exp(), &geometric_ladder(1e-3, 10.0, 50)).unwrap();
        let sys = catalog::int1d_mintime::<f64>(5, vec![-2.0], vec![2.0]);
        let k = kappa(b, c, &sys, &ell1, &KappaOptions::default()).unwrap();
        let (mut x, mut integral) = (start, 0.0);
        let dt = 0.01;
        'outer: for u in controls {
            for _ in 0..10 {
                let y = x + dt * u;
                let d = sys.target_distance(&[y]);
                if d < b || d > c {
                    break 'outer;
                }
                let (d0, d1) = (sys.target_distance(&[x]), d);
                integral += 0.5 * dt * (ell1.value(d0).unwrap() + ell1.value(d1).unwrap());
                x = y;
            }
        }
        prop_assert!(integral >= k * (x - start).abs() - 1e-9);
    }
}
