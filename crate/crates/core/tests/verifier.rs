use std::sync::Arc;

use mrf_core::catalog;
use mrf_core::comparators::{builtin_gamma, builtin_p0};
use mrf_core::verify::{
    check_decrease, check_integrability, check_structure, compute_brackets, petrov_min_time_bound, QuadratureOptions,
    StructureOptions,
};
use mrf_core::{solve_min_time, ComparatorPair, ControlSystem, GridField, GridShape, MonotoneFn, SolverParams};
use proptest::prelude::*;

fn int1d(h: f64) -> (ControlSystem<f64>, GridShape<f64>) {
    let sys = catalog::int1d_mintime::<f64>(3, vec![-2.0], vec![2.0]);
    let shape = GridShape::with_spacing(vec![-2.0], vec![2.0], h).unwrap();
    (sys, shape)
}

fn distance_field(sys: &ControlSystem<f64>, shape: GridShape<f64>, f: impl Fn(f64) -> f64) -> GridField<f64> {
    let d = sys.target_distance_fn();
    GridField::from_fn(shape, |x| d(x), 1e-9, |x| f(d(x)))
}

#[test]
fn discrimination_and_worst_residual() {
    let (sys, shape) = int1d(0.01);
    let comp = ComparatorPair::new(builtin_p0("one").unwrap(), builtin_gamma("saturating").unwrap());
    let pass = check_decrease(
        &distance_field(&sys, shape.clone(), |r| 2.0 * r),
        &sys,
        &comp,
        0.01,
        0.0,
    )
    .unwrap();
    assert!(pass.pass && pass.violations.is_empty());
    let w = distance_field(&sys, shape, |r| r);
    let fail = check_decrease(&w, &sys, &comp, 0.01, 0.0).unwrap();
    assert!(!fail.pass);
    let node = fail.worst_node.unwrap();
    let d = w.distances()[node];
    assert!(fail.worst_residual.unwrap() >= 0.5 * d / (1.0 + d));
    assert_eq!(fail.histogram.total(), fail.evaluated);
}

#[test]
fn structure_and_brackets_of_solved_min_time() {
    let (sys, shape) = int1d(0.02);
    let v = solve_min_time(&sys, &shape, SolverParams::for_shape(&shape))
        .unwrap()
        .field;
    assert!(check_structure(&v, 1e-9, &StructureOptions::default()).pass());
    let b = compute_brackets(&v, 1e-9).unwrap();
    let s = b.sandwich(&v);
    assert!(s.violations.is_empty());
    assert!(s.min_slack >= -1e-12);
}

#[test]
fn petrov_bound_dominates_solver_time() {
    let (sys, shape) = int1d(0.01);
    let w = distance_field(&sys, shape.clone(), |r| r);
    let comp = ComparatorPair::new(builtin_p0("half").unwrap(), builtin_gamma("half_saturating").unwrap());
    assert!(check_decrease(&w, &sys, &comp, 0.01, 0.0).unwrap().pass);
    let bound = petrov_min_time_bound(&w, &comp, &[0.5], 6, &QuadratureOptions::default())
        .unwrap()
        .bound
        .unwrap();
    // int_0^0.4 dr / (1/2 + r / (2 (1 + r))) = int (2 + 2r) / (1 + 2r) dr
    let exact = 0.4 + 0.5 * (1.8f64).ln();
    assert!((bound - exact).abs() <= 1e-6);
    let v = solve_min_time(&sys, &shape, SolverParams::for_shape(&shape))
        .unwrap()
        .field;
    assert!(v.interpolate(&[0.5]).unwrap() <= bound + 0.03);
}

#[test]
fn petrov_bound_diverges_for_vanishing_rate() {
    let (sys, shape) = int1d(0.05);
    let w = distance_field(&sys, shape, |r| r);
    let comp = ComparatorPair::new(MonotoneFn::closure("zero", |_| 0.0), builtin_gamma("linear").unwrap());
    let b = petrov_min_time_bound(&w, &comp, &[1.0], 6, &QuadratureOptions::default()).unwrap();
    assert!(b.bound.is_none());
}

#[test]
fn quadrature_closed_forms() {
    let opts = QuadratureOptions::default();
    let sqrt = check_integrability::<f64>(&builtin_p0("sqrt_cap").unwrap(), 1.0, 6, None, &opts).unwrap();
    assert!(sqrt.pass);
    assert!((sqrt.p_table.unwrap().eval(1.0).unwrap() - 2.0).abs() <= 1e-6);
    let one = check_integrability::<f64>(&builtin_p0("one").unwrap(), 3.0, 6, None, &opts).unwrap();
    let p = one.p_table.unwrap();
    for v in [0.5, 1.0, 2.5] {
        assert!((p.eval(v).unwrap() - v).abs() <= 1e-6);
    }
    let lin = check_integrability(&builtin_p0("linear_cap").unwrap(), 1.0, 6, None, &opts).unwrap();
    assert!(!lin.pass && lin.p_table.is_none());
    assert!(lin.verdict.starts_with("IC-fail"));
}

fn power_cap(a: f64) -> MonotoneFn<f64> {
    MonotoneFn::closure("power_cap", move |v: f64| v.max(0.0).powf(a).min(1.0))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn residuals_scale_with_field(c in 0.2f64..5.0, k in 1.5f64..3.0) {
        let (sys, shape) = int1d(0.02);
        let sys = sys.with_running_cost(Arc::new(|_x: &[f64], _u: &[f64]| 0.0));
        let w = distance_field(&sys, shape.clone(), |r| k * r + r * r);
        let cw = distance_field(&sys, shape, |r| c * (k * r + r * r));
        let gamma = |v: f64| v / (1.0 + v);
        let base = ComparatorPair::new(builtin_p0("one").unwrap(), MonotoneFn::closure("g", gamma));
        let scaled = ComparatorPair::new(
            builtin_p0("one").unwrap(),
            MonotoneFn::closure("g_c", move |v: f64| c * gamma(v / c)),
        );
        let r1 = check_decrease(&w, &sys, &base, 0.02, 0.0).unwrap().residuals;
        let r2 = check_decrease(&cw, &sys, &scaled, 0.02, 0.0).unwrap().residuals;
        for i in 0..w.len() {
            prop_assert_eq!(r1.status[i], r2.status[i]);
            if r1.status[i].is_evaluated() {
                let (a, b) = (r1.residuals.values()[i], r2.residuals.values()[i]);
                prop_assert!((b - c * a).abs() <= 1e-9 * (1.0 + a.abs() * c), "{} vs {}", b, c * a);
            }
        }
    }

    #[test]
    fn smaller_gamma_never_breaks_a_pass(k in 1.0f64..3.0, s in 0.0f64..1.0) {
        let (sys, shape) = int1d(0.02);
        let w = distance_field(&sys, shape, |r| k * r);
        let big = ComparatorPair::new(builtin_p0("one").unwrap(), builtin_gamma("saturating").unwrap());
        let small = ComparatorPair::new(
            builtin_p0("one").unwrap(),
            MonotoneFn::closure("scaled", move |v: f64| s * v / (1.0 + v)),
        );
        let a = check_decrease(&w, &sys, &big, 0.02, 0.0).unwrap();
        let b = check_decrease(&w, &sys, &small, 0.02, 0.0).unwrap();
        for i in 0..w.len() {
            if a.residuals.status[i].is_evaluated() && a.residuals.residuals.values()[i] <= 0.0 {
                prop_assert!(b.residuals.residuals.values()[i] <= 0.0);
            }
        }
        prop_assert!(!a.pass || b.pass);
    }

    #[test]
    fn integrability_is_monotone_in_p0(a in 0.1f64..0.9, frac in 0.1f64..1.0) {
        let opts = QuadratureOptions::default();
        let weaker = check_integrability(&power_cap(a), 2.0, 6, None, &opts).unwrap();
        let stronger = check_integrability(&power_cap(a * frac), 2.0, 6, None, &opts).unwrap();
        prop_assert!(!weaker.pass || stronger.pass);
    }

    #[test]
    fn sandwich_holds_for_random_fields(
        vals in prop::collection::vec(0.001f64..5.0, 81),
        h in prop::sample::select(vec![0.05f64, 0.025]),
    ) {
        let sys = catalog::int1d_mintime::<f64>(3, vec![-1.0], vec![1.0]);
        let shape = GridShape::with_spacing(vec![-1.0], vec![1.0], h).unwrap();
        let d = sys.target_distance_fn();
        let n = shape.len();
        let w = GridField::from_fn(shape, |x| d(x), 1e-9, |x| {
            let r = d(x);
            if r <= 1e-9 { 0.0 } else { r * vals[((x[0] + 1.0) * 40.0).round() as usize % 81] }
        });
        let b = compute_brackets(&w, 1e-9).unwrap();
        let s = b.sandwich(&w);
        prop_assert_eq!(s.checked, n);
        prop_assert!(s.violations.is_empty());
        prop_assert!(s.min_slack >= -1e-12);
    }
}
