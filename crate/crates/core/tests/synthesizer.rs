use mrf_core::catalog;
use mrf_core::comparators::{builtin_gamma, builtin_p0};
use mrf_core::hjb::solve_value_function;
use mrf_core::synth::{
    build_descent_rate, check_superoptimality, cost_bound, greedy_control_index, levels_needed,
    synthesize_level_halving, total_time_bound, DescentOptions, SynthesisParams,
};
use mrf_core::verify::{check_integrability, compute_brackets, QuadratureOptions};
use mrf_core::{
    integrate_trajectory, BracketPair, ComparatorPair, ControlSchedule, ControlSystem, GridField, GridShape,
    SolverParams,
};
use proptest::prelude::*;

struct Setup {
    sys: ControlSystem<f64>,
    w: GridField<f64>,
    comp: ComparatorPair<f64>,
    brackets: BracketPair<f64>,
}

fn setup() -> Setup {
    let sys = catalog::int1d_mintime::<f64>(3, vec![-2.0], vec![2.0]);
    let shape = GridShape::with_spacing(vec![-2.0], vec![2.0], 0.01).unwrap();
    let d = sys.target_distance_fn();
    let w = GridField::from_fn(shape, |x| d(x), 1e-9, |x| 2.0 * d(x));
    let comp = ComparatorPair::new(builtin_p0("one").unwrap(), builtin_gamma("saturating").unwrap());
    let brackets = compute_brackets(&w, 1e-9).unwrap();
    Setup { sys, w, comp, brackets }
}

#[test]
fn levels_chain_and_halve() {
    let s = setup();
    let p = check_integrability(&s.comp.p0, 4.0, 6, None, &QuadratureOptions::default()).unwrap();
    for z in [1.9, -1.2, 0.7, -0.35] {
        let out = synthesize_level_halving(
            &s.sys,
            &s.w,
            &s.comp,
            &s.brackets,
            p.p_table.as_ref(),
            &[z],
            &SynthesisParams::for_step(0.01),
        )
        .unwrap();
        let wz = out.summary.w_start;
        assert!(out.summary.reached_target);
        assert_eq!(out.segments[0].level_before, wz);
        for pair in out.segments.windows(2) {
            assert_eq!(pair[0].level_after, pair[1].level_before);
        }
        for seg in &out.segments {
            let nominal = wz / 2f64.powi(seg.index as i32);
            assert!((seg.level_after - nominal).abs() <= out.summary.halving_tol);
            assert!(seg.level_after <= seg.level_before / 2.0 + out.summary.halving_tol);
            assert!(!seg.rel3 || seg.duration <= seg.time_bound);
        }
        assert_eq!(out.summary.within_cost_bound, Some(true));
        let costs: Vec<f64> = out.trajectory.accumulated_cost.clone();
        assert!(costs.windows(2).all(|c| c[1] >= c[0]));
    }
}

#[test]
fn trajectories_stay_under_the_descent_rate() {
    let s = setup();
    let rate = build_descent_rate(&s.brackets, &s.comp.gamma, 2.0, 1e-3, &DescentOptions::default()).unwrap();
    assert!(rate.beta.check_axioms().is_empty());
    assert!(rate.min_margin >= 0.0);
    for z in [1.9, -1.5, 0.9, 0.3] {
        let out = synthesize_level_halving(
            &s.sys,
            &s.w,
            &s.comp,
            &s.brackets,
            None,
            &[z],
            &SynthesisParams::for_step(0.01),
        )
        .unwrap();
        let dz = s.sys.target_distance(&[z]);
        for (t, x) in out.trajectory.times.iter().zip(&out.trajectory.states) {
            assert!(s.sys.target_distance(x) <= rate.beta.value(dz, *t) + 1e-12);
        }
    }
}

#[test]
fn superoptimality_grows_along_an_outward_path() {
    let s = setup();
    let traj = integrate_trajectory(&s.sys, &[0.5], &ControlSchedule::constant(vec![1.0]), 0.01, 1.0, 1e-6).unwrap();
    let half = traj.states.len() / 2;
    let mut early = traj.clone();
    early.states.truncate(half + 1);
    early.times.truncate(half + 1);
    early.controls.truncate(half);
    early.accumulated_cost.truncate(half + 1);
    let a = check_superoptimality(&early, &s.w, &s.sys, &s.comp).unwrap();
    let b = check_superoptimality(&traj, &s.w, &s.sys, &s.comp).unwrap();
    assert!(a.residual > 0.0 && b.residual > a.residual);
}

#[test]
fn stationary_path_without_cost_has_zero_residual() {
    let s = setup();
    let zero = s
        .sys
        .clone()
        .with_running_cost(std::sync::Arc::new(|_x: &[f64], _u: &[f64]| 0.0));
    let comp = ComparatorPair::new(builtin_p0("one").unwrap(), mrf_core::MonotoneFn::constant(0.0));
    let traj = integrate_trajectory(&zero, &[0.5], &ControlSchedule::constant(vec![0.0]), 0.01, 1.0, 1e-6).unwrap();
    let r = check_superoptimality(&traj, &s.w, &zero, &comp).unwrap();
    assert_eq!(r.residual, 0.0);
}

#[test]
fn cost_bound_with_square_root_p0() {
    let p = check_integrability(
        &builtin_p0::<f64>("sqrt_cap").unwrap(),
        2.0,
        6,
        None,
        &QuadratureOptions::default(),
    )
    .unwrap()
    .p_table
    .unwrap();
    assert!((cost_bound(2.0, &p).unwrap() - 8.0).abs() <= 4e-6);
    assert_eq!(cost_bound(0.0, &p).unwrap(), 0.0);
    assert!(cost_bound(10.0, &p).is_err());
}

#[test]
fn greedy_matches_enumeration_on_lq() {
    let sys = catalog::scalar_lq::<f64>(11, vec![-2.0], vec![2.0]);
    let shape = GridShape::with_spacing(vec![-2.0], vec![2.0], 0.02).unwrap();
    let cost = sys.running_cost_fn();
    let lag = move |x: &[f64], u: &[f64]| cost(x, u);
    let v = solve_value_function(&sys, &shape, &lag, SolverParams::for_shape(&shape))
        .unwrap()
        .field;
    let comp = ComparatorPair::new(builtin_p0("one").unwrap(), builtin_gamma("saturating").unwrap());
    for x in [0.5, -0.8, 1.3, 0.15] {
        let k = greedy_control_index(&[x], &v, &sys, &comp, 0.02).unwrap();
        let wx = v.interpolate(&[x]).unwrap();
        let objective = |u: f64| (v.interpolate(&[x + 0.02 * u]).unwrap() - wx) / 0.02 + x * x + u * u;
        let brute = sys
            .control_samples()
            .iter()
            .map(|u| objective(u[0]))
            .fold(f64::INFINITY, f64::min);
        assert_eq!(objective(sys.control_samples()[k][0]), brute);
        assert!(sys.control_samples()[..k].iter().all(|u| objective(u[0]) > brute));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn total_time_bound_is_monotone(big_r in 0.05f64..2.0, a in 0.01f64..1.0, b in 0.01f64..1.0, grow in 1.0f64..3.0) {
        let id = BracketPair::<f64>::identity();
        let g = builtin_gamma::<f64>("saturating").unwrap();
        let (r1, r2) = (a.min(b) * big_r, a.max(b) * big_r);
        prop_assert!(total_time_bound(&id, &g, big_r, r1).unwrap() >= total_time_bound(&id, &g, big_r, r2).unwrap());
        prop_assert!(total_time_bound(&id, &g, big_r * grow, r1).unwrap() >= total_time_bound(&id, &g, big_r, r1).unwrap());
        let n = levels_needed(&id, big_r, r1).unwrap();
        prop_assert!(2f64.powi(n as i32) >= 3.0 * big_r / r1 * (1.0 - 1e-12));
        prop_assert!(n == 1 || 2f64.powi(n as i32 - 1) < 3.0 * big_r / r1);
    }
}
