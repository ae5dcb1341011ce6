mod common;

use mrf_core::catalog;
use mrf_core::hjb::supersolution_residual;
use mrf_core::kl::halton;
use mrf_core::{solve_min_time, solve_value_function, GridField, GridShape, SolverParams};
use proptest::prelude::*;

fn int1d_shape(lo: f64, hi: f64, h: f64) -> GridShape<f64> {
    GridShape::with_spacing(vec![lo], vec![hi], h).unwrap()
}

fn max_error(lo: f64, hi: f64, h: f64) -> f64 {
    let sys = catalog::int1d_mintime::<f64>(3, vec![lo], vec![hi]);
    let shape = int1d_shape(lo, hi, h);
    let out = solve_min_time(&sys, &shape, SolverParams::for_shape(&shape)).unwrap();
    assert!(out.converged);
    (0..shape.len())
        .map(|i| {
            let x = shape.node(i)[0];
            (out.field.values()[i] - common::int1d_time(x)).abs()
        })
        .fold(0.0, f64::max)
}

#[test]
fn min_time_error_shrinks_linearly() {
    let hs = [0.04, 0.02, 0.01];
    let errs: Vec<f64> = hs.iter().map(|&h| max_error(-2.018, 1.982, h)).collect();
    for (h, e) in hs.iter().zip(&errs) {
        assert!(*e <= 3.0 * h, "h = {h}: error {e}");
    }
    for w in errs.windows(2) {
        assert!(w[0] / w[1] >= 1.6, "ratio {}", w[0] / w[1]);
    }
}

#[test]
fn aligned_box_reproduces_transit_time() {
    assert!(max_error(-2.0, 2.0, 0.02) <= 0.06);
}

#[test]
fn lagrangian_bounded_by_distance_gives_positive_values() {
    let sys = catalog::int1d_mintime::<f64>(3, vec![-2.0], vec![2.0]);
    let shape = int1d_shape(-2.0, 2.0, 0.02);
    let d = sys.target_distance_fn();
    let lag = move |x: &[f64], _u: &[f64]| {
        let r = d(x);
        r * (-r).exp()
    };
    let out = solve_value_function(&sys, &shape, &lag, SolverParams::for_shape(&shape)).unwrap();
    let f = &out.field;
    for i in 0..f.len() {
        if f.distances()[i] > 1e-9 {
            assert!(f.values()[i] > 0.0, "node {i}");
        } else {
            assert_eq!(f.values()[i], 0.0);
        }
    }
}

#[test]
fn double_integrator_unit_offset_matches_oracle() {
    let sys = catalog::double_integrator_mintime::<f64>(3, vec![-2.0, -2.0], vec![2.0, 2.0]);
    let shape = GridShape::with_spacing(vec![-2.0, -2.0], vec![2.0, 2.0], 0.02).unwrap();
    let out = solve_min_time(&sys, &shape, SolverParams::for_shape(&shape)).unwrap();
    assert!(out.converged);
    for (x, v) in [(1.0, 0.0), (-1.0, 0.0), (0.0, 1.0), (0.7, 0.7)] {
        let oracle = common::double_integrator_ball_time(x, v, 0.1);
        let got = out.field.interpolate(&[x, v]).unwrap();
        assert!((got - oracle).abs() <= 0.1 * oracle, "({x}, {v}): {got} vs {oracle}");
        assert!(oracle <= common::double_integrator_origin_time(x, v) + 1e-9);
    }
}

#[test]
fn oracle_is_sandwiched_by_switching_curve_formula() {
    // T_ball <= T_origin <= T_ball + max over the ball of T_origin
    let rho: f64 = 0.02;
    let slack = rho + 2.0 * (rho + 0.5 * rho * rho).sqrt();
    for k in 1..20u64 {
        let (x, v) = (-1.5 + 3.0 * halton(k, 2), -1.5 + 3.0 * halton(k, 3));
        let a = common::double_integrator_ball_time(x, v, rho);
        let b = common::double_integrator_origin_time(x, v);
        assert!(a <= b + 1e-9 && b <= a + slack + 1e-2, "({x}, {v}): {a} vs {b}");
    }
}

fn one_step_update(field: &GridField<f64>, tau: f64, lag: f64) -> Vec<Option<f64>> {
    let sys = catalog::int1d_mintime::<f64>(3, vec![-1.0], vec![1.0]);
    let r = supersolution_residual(field, &sys, &move |_x: &[f64], _u: &[f64]| lag, tau).unwrap();
    (0..field.len())
        .map(|i| {
            r.status[i]
                .is_evaluated()
                .then(|| field.values()[i] + tau * r.residuals.values()[i])
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn scheme_is_monotone(
        vals in prop::collection::vec(0.0f64..3.0, 41),
        node in 0usize..41,
        bump in 0.0f64..1.0,
    ) {
        let shape = int1d_shape(-1.0, 1.0, 0.05);
        let base = GridField::from_fn(shape, |x: &[f64]| (x[0].abs() - 0.1).max(0.0), 1e-9, |_| 0.0);
        let a = base.with_values(vals.clone());
        let mut raised = vals;
        raised[node] += bump;
        let b = base.with_values(raised);
        let (ua, ub) = (one_step_update(&a, 0.05, 1.0), one_step_update(&b, 0.05, 1.0));
        for i in 0..ua.len() {
            if let (Some(x), Some(y)) = (ua[i], ub[i]) {
                prop_assert!(y >= x - 1e-12, "node {}: {} < {}", i, y, x);
            }
        }
    }

    #[test]
    fn larger_lagrangian_gives_larger_value(a in 0.2f64..2.0, extra in 0.0f64..2.0, s in 0.0f64..1.0) {
        let sys = catalog::int1d_mintime::<f64>(3, vec![-1.0], vec![1.0]);
        let shape = int1d_shape(-1.0, 1.0, 0.05);
        let params = SolverParams::for_shape(&shape);
        let l1 = move |x: &[f64], _u: &[f64]| a + s * x[0].abs();
        let l2 = move |x: &[f64], _u: &[f64]| a + extra + s * x[0].abs();
        let v1 = solve_value_function(&sys, &shape, &l1, params).unwrap().field;
        let v2 = solve_value_function(&sys, &shape, &l2, params).unwrap().field;
        for i in 0..v1.len() {
            prop_assert!(v1.values()[i] <= v2.values()[i] + 1e-12);
        }
    }

    #[test]
    fn interpolation_stays_within_cell_corners(
        corners in prop::collection::vec(-5.0f64..5.0, 4),
        px in 0.0f64..1.0,
        py in 0.0f64..1.0,
    ) {
        let shape = GridShape::new(vec![0.0, 0.0], vec![1.0, 1.0], vec![2, 2]).unwrap();
        let field = GridField::from_fn(shape, |_: &[f64]| 1.0, 0.0, |_| 0.0).with_values(corners.clone());
        let v = field.interpolate(&[px, py]).unwrap();
        let lo = corners.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = corners.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
    }
}

#[test]
fn single_precision_min_time() {
    let sys = catalog::int1d_mintime::<f32>(3, vec![-2.0], vec![2.0]);
    let shape = GridShape::<f32>::with_spacing(vec![-2.0], vec![2.0], 0.02).unwrap();
    let out = solve_min_time(
        &sys,
        &shape,
        SolverParams {
            fixed_point_tol: 1e-5,
            ..SolverParams::for_shape(&shape)
        },
    )
    .unwrap();
    assert!(out.converged);
    let v = out.field.interpolate(&[0.5f32]).unwrap();
    assert!((v - 0.4).abs() <= 0.06);
}
