//! Semi-Lagrangian value iteration for exit-time problems and the
//! one-step supersolution residual.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::error::{MrfError, Result};
use crate::grid::{GridField, GridShape};
use crate::scalar::Real;
use crate::system::ControlSystem;

/// Parameters of the value iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverParams<T> {
    /// Pseudo-time step; the stencil point is `x + tau f(x, u)`.
    pub tau: T,
    pub fixed_point_tol: T,
    pub max_sweeps: usize,
    /// Value assigned outside the box; also the initial value and the cap.
    pub boundary_value: T,
    /// Nodes with `target_distance <= target_tol` are target nodes.
    pub target_tol: T,
}

impl<T: Real> SolverParams<T> {
    /// Defaults for a grid: `tau = h` (smallest spacing).
    pub fn for_shape(shape: &GridShape<T>) -> Self {
        Self {
            tau: shape.min_spacing(),
            fixed_point_tol: T::lit(1e-9),
            max_sweeps: 20_000,
            boundary_value: T::lit(1e6),
            target_tol: T::lit(1e-9),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > T::zero()) || !(self.fixed_point_tol > T::zero()) {
            return Err(MrfError::InvalidArgument(
                "tau and fixed_point_tol must be positive".into(),
            ));
        }
        if self.max_sweeps == 0 || !(self.boundary_value > T::zero()) {
            return Err(MrfError::InvalidArgument(
                "max_sweeps and boundary_value must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Solved field plus convergence bookkeeping.
#[derive(Debug, Clone)]
pub struct SolveOutcome<T> {
    /// Solution; saturated nodes carry `boundary_value` and the field's cap.
    pub field: GridField<T>,
    pub sweeps: usize,
    pub converged: bool,
    /// Sup-norm update of every sweep.
    pub history: Vec<T>,
    pub params: SolverParams<T>,
}

/// Lagrangian `L(x, u)` of the exit-time problem.
pub type Lagrangian<'a, T> = &'a (dyn Fn(&[T], &[T]) -> T + Sync);

pub(crate) fn stencil<T: Real>(system: &ControlSystem<T>, x: &[T], u: &[T], tau: T, f: &mut [T], y: &mut [T]) {
    system.dynamics_into(x, u, f);
    for k in 0..x.len() {
        y[k] = x[k] + tau * f[k];
    }
}

/// Template field (values zero) with the system's distances and target mask.
pub fn target_field<T: Real>(system: &ControlSystem<T>, shape: &GridShape<T>, target_tol: T) -> Result<GridField<T>> {
    if shape.dim() != system.state_dim() {
        return Err(MrfError::InvalidArgument(format!(
            "grid dimension {} does not match state dimension {}",
            shape.dim(),
            system.state_dim()
        )));
    }
    let dist = system.target_distance_fn();
    Ok(GridField::from_fn(
        shape.clone(),
        |x| dist(x),
        target_tol,
        |_| T::zero(),
    ))
}

/// Fixed point of `V(x) <- min_u { tau L(x,u) + V(x + tau f(x,u)) }` with
/// `V = 0` on target nodes and `boundary_value` outside the box.
///
/// Sweeps are Jacobi style and run in parallel; the result does not depend on
/// the number of worker threads.
pub fn solve_value_function<T: Real>(
    system: &ControlSystem<T>,
    shape: &GridShape<T>,
    lagrangian: Lagrangian<'_, T>,
    params: SolverParams<T>,
) -> Result<SolveOutcome<T>> {
    params.validate()?;
    let template = target_field(system, shape, params.target_tol)?;
    let n = shape.dim();
    let len = shape.len();
    let bv = params.boundary_value;
    let tau = params.tau;
    let mask = template.mask().to_vec();

    if mask.iter().all(|&m| m) {
        return Ok(SolveOutcome {
            field: template.with_cap(bv),
            sweeps: 0,
            converged: true,
            history: Vec::new(),
            params,
        });
    }

    // Node coordinates and per-control stencil points, computed once.
    let controls = system.control_samples();
    let m = controls.len();
    let mut costs = vec![T::zero(); len * m];
    let mut targets: Vec<Option<Vec<T>>> = vec![None; len * m];
    {
        let mut x = vec![T::zero(); n];
        let mut f = vec![T::zero(); n];
        let mut y = vec![T::zero(); n];
        for i in 0..len {
            if mask[i] {
                continue;
            }
            shape.node_into(i, &mut x);
            for (c, u) in controls.iter().enumerate() {
                let l = lagrangian(&x, u);
                if l < T::zero() || !l.is_finite() {
                    return Err(MrfError::Precondition(format!(
                        "lagrangian must be finite and nonnegative, got {l} at {x:?}"
                    )));
                }
                costs[i * m + c] = tau * l;
                stencil(system, &x, u, tau, &mut f, &mut y);
                if shape.contains(&y) {
                    targets[i * m + c] = Some(y.clone());
                }
            }
        }
    }
    let any_interior =
        (0..len).any(|i| !mask[i] && !shape.is_boundary_node(i) && (0..m).any(|c| targets[i * m + c].is_some()));
    if !any_interior {
        return Err(MrfError::DegenerateStencil {
            tau: tau.to_f64_lossy(),
        });
    }

    let mut values: Vec<T> = mask.iter().map(|&t| if t { T::zero() } else { bv }).collect();
    let mut history = Vec::new();
    let mut converged = false;
    let mut sweeps = 0;
    while sweeps < params.max_sweeps {
        let prev = &values;
        let next: Vec<T> = (0..len)
            .into_par_iter()
            .map(|i| {
                if mask[i] {
                    return T::zero();
                }
                let mut best = bv;
                for c in 0..m {
                    let next_val = match &targets[i * m + c] {
                        Some(y) => shape.interpolate_values(prev, y).unwrap_or(bv),
                        None => bv,
                    };
                    let cand = costs[i * m + c] + next_val;
                    if cand < best {
                        best = cand;
                    }
                }
                best
            })
            .collect();
        let update = next
            .par_iter()
            .zip(prev.par_iter())
            .map(|(&a, &b)| (a - b).abs())
            .reduce(T::zero, T::max);
        values = next;
        sweeps += 1;
        history.push(update);
        if update < params.fixed_point_tol {
            converged = true;
            break;
        }
    }
    Ok(SolveOutcome {
        field: template.with_values(values).with_cap(bv),
        sweeps,
        converged,
        history,
        params,
    })
}

/// Minimum-time problem: `solve_value_function` with `L = 1`.
pub fn solve_min_time<T: Real>(
    system: &ControlSystem<T>,
    shape: &GridShape<T>,
    params: SolverParams<T>,
) -> Result<SolveOutcome<T>> {
    solve_value_function(system, shape, &|_x: &[T], _u: &[T]| T::one(), params)
}

/// Why a node carries no residual.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeStatus {
    Evaluated,
    Target,
    BoxBoundary,
    Saturated,
    NoStencil,
}

impl NodeStatus {
    pub fn is_evaluated(self) -> bool {
        self == NodeStatus::Evaluated
    }
}

/// Node-wise residuals; non-evaluated nodes hold NaN.
#[derive(Debug, Clone)]
pub struct ResidualField<T> {
    pub residuals: GridField<T>,
    pub status: Vec<NodeStatus>,
}

impl<T: Real> ResidualField<T> {
    pub fn evaluated(&self) -> usize {
        self.status.iter().filter(|s| s.is_evaluated()).count()
    }

    pub fn not_evaluated(&self) -> usize {
        self.status.len() - self.evaluated()
    }

    /// Largest evaluated residual and its node.
    pub fn worst(&self) -> Option<(usize, T)> {
        let vals = self.residuals.values();
        (0..vals.len())
            .filter(|&i| self.status[i].is_evaluated())
            .fold(None, |acc: Option<(usize, T)>, i| match acc {
                Some((_, w)) if w >= vals[i] => acc,
                _ => Some((i, vals[i])),
            })
    }
}

/// Node classification shared by the residual checks.
pub(crate) fn classify<T: Real>(field: &GridField<T>, i: usize) -> NodeStatus {
    if field.mask()[i] {
        NodeStatus::Target
    } else if field.shape().is_boundary_node(i) {
        NodeStatus::BoxBoundary
    } else if field.is_saturated(i) {
        NodeStatus::Saturated
    } else {
        NodeStatus::Evaluated
    }
}

/// Generic one-step residual `min_u { [V(x + tau f) - V(x)]/tau + extra(x, u, V(x)) }`
/// over controls whose stencil stays in the box.
pub(crate) fn one_step_residual<T, F>(
    field: &GridField<T>,
    system: &ControlSystem<T>,
    tau: T,
    extra: F,
) -> Result<ResidualField<T>>
where
    T: Real,
    F: Fn(&[T], &[T], T) -> Result<T> + Sync,
{
    if !(tau > T::zero()) {
        return Err(MrfError::InvalidArgument("tau must be positive".into()));
    }
    let shape = field.shape();
    if shape.dim() != system.state_dim() {
        return Err(MrfError::InvalidArgument("field and system dimensions differ".into()));
    }
    let n = shape.dim();
    let results: Vec<Result<(T, NodeStatus)>> = (0..field.len())
        .into_par_iter()
        .map(|i| {
            let status = classify(field, i);
            if status != NodeStatus::Evaluated {
                return Ok((T::nan(), status));
            }
            let x = shape.node(i);
            let v = field.values()[i];
            let mut f = vec![T::zero(); n];
            let mut y = vec![T::zero(); n];
            let mut best: Option<T> = None;
            for u in system.control_samples() {
                stencil(system, &x, u, tau, &mut f, &mut y);
                let Some(vy) = field.try_interpolate(&y) else {
                    continue;
                };
                let r = (vy - v) / tau + extra(&x, u, v)?;
                best = Some(match best {
                    Some(b) if b <= r => b,
                    _ => r,
                });
            }
            Ok(match best {
                Some(r) => (r, NodeStatus::Evaluated),
                None => (T::nan(), NodeStatus::NoStencil),
            })
        })
        .collect();
    let mut values = Vec::with_capacity(results.len());
    let mut status = Vec::with_capacity(results.len());
    for r in results {
        let (v, s) = r?;
        values.push(v);
        status.push(s);
    }
    Ok(ResidualField {
        residuals: field.with_values(values),
        status,
    })
}

/// Discrete supersolution residual
/// `R(x) = min_u { [V(x + tau f) - V(x)]/tau + L(x, u) }`; `R <= 0` is the
/// decrease-along-best-control surrogate.
pub fn supersolution_residual<T: Real>(
    field: &GridField<T>,
    system: &ControlSystem<T>,
    lagrangian: Lagrangian<'_, T>,
    tau: T,
) -> Result<ResidualField<T>> {
    one_step_residual(field, system, tau, |x, u, _v| Ok(lagrangian(x, u)))
}

/// Flat CSV of a field: a `#` header with the grid and solver metadata, one
/// column per coordinate, then `value,mask`.
pub fn field_to_csv<T: Real>(field: &GridField<T>, meta: &[(&str, String)]) -> String {
    let shape = field.shape();
    let mut out = String::new();
    let join = |v: &[T]| v.iter().map(|x| format!("{x}")).collect::<Vec<_>>().join(" ");
    let _ = writeln!(out, "# lower: {}", join(shape.lower()));
    let _ = writeln!(out, "# upper: {}", join(shape.upper()));
    let _ = writeln!(
        out,
        "# resolution: {}",
        shape
            .resolution()
            .iter()
            .map(|r| r.to_string())
            .collect::<Vec<_>>()
            .join(" ")
    );
    for (k, v) in meta {
        let _ = writeln!(out, "# {k}: {v}");
    }
    let cols: Vec<String> = (0..shape.dim()).map(|k| format!("x{k}")).collect();
    let _ = writeln!(out, "{},value,mask", cols.join(","));
    let mut x = vec![T::zero(); shape.dim()];
    for i in 0..field.len() {
        shape.node_into(i, &mut x);
        for c in &x {
            let _ = write!(out, "{c},");
        }
        let _ = writeln!(out, "{},{}", field.values()[i], u8::from(field.mask()[i]));
    }
    out
}

/// Header lines describing a solve.
pub fn solve_metadata<T: Real>(outcome: &SolveOutcome<T>) -> Vec<(&'static str, String)> {
    vec![
        ("tau", format!("{}", outcome.params.tau)),
        ("fixed_point_tol", format!("{}", outcome.params.fixed_point_tol)),
        ("boundary_value", format!("{}", outcome.params.boundary_value)),
        ("sweeps", outcome.sweeps.to_string()),
        ("converged", outcome.converged.to_string()),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog;

    fn int1d(h: f64) -> (ControlSystem<f64>, GridShape<f64>) {
        let sys = catalog::int1d_mintime(3, vec![-2.0], vec![2.0]);
        let shape = GridShape::with_spacing(vec![-2.0], vec![2.0], h).unwrap();
        (sys, shape)
    }

    #[test]
    fn int1d_min_time_matches_transit_time() {
        let h = 0.01;
        let (sys, shape) = int1d(h);
        let out = solve_min_time(&sys, &shape, SolverParams::for_shape(&shape)).unwrap();
        assert!(out.converged);
        let v = out.field.interpolate(&[0.5]).unwrap();
        assert!((v - 0.4).abs() <= 3.0 * h, "{v}");
        assert_eq!(out.field.interpolate(&[0.05]).unwrap(), 0.0);
    }

    #[test]
    fn doubled_lagrangian_doubles_value() {
        let h = 0.01;
        let (sys, shape) = int1d(h);
        let out = solve_value_function(
            &sys,
            &shape,
            &|_x: &[f64], _u: &[f64]| 2.0,
            SolverParams::for_shape(&shape),
        )
        .unwrap();
        let v = out.field.interpolate(&[0.5]).unwrap();
        assert!((v - 0.8).abs() <= 6.0 * h, "{v}");
    }

    #[test]
    fn all_target_grid_is_zero() {
        let sys = catalog::int1d_mintime(3, vec![-0.05], vec![0.05]);
        let shape = GridShape::with_spacing(vec![-0.05], vec![0.05], 0.01).unwrap();
        let out = solve_min_time(&sys, &shape, SolverParams::for_shape(&shape)).unwrap();
        assert!(out.field.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn huge_tau_is_degenerate() {
        let sys = catalog::int1d_mintime(2, vec![-2.0], vec![2.0]);
        let shape = GridShape::with_spacing(vec![-2.0], vec![2.0], 0.1).unwrap();
        let mut p = SolverParams::for_shape(&shape);
        p.tau = 10.0;
        let err = solve_min_time(&sys, &shape, p).unwrap_err();
        assert!(matches!(err, MrfError::DegenerateStencil { .. }));
    }

    #[test]
    fn sweep_budget_exhaustion_is_reported() {
        let (sys, shape) = int1d(0.01);
        let mut p = SolverParams::for_shape(&shape);
        p.max_sweeps = 5;
        let out = solve_min_time(&sys, &shape, p).unwrap();
        assert!(!out.converged);
        assert_eq!(out.sweeps, 5);
    }

    #[test]
    fn zero_field_cannot_supersolve_unit_lagrangian() {
        let (sys, shape) = int1d(0.01);
        let w = target_field(&sys, &shape, 1e-9).unwrap();
        let r = supersolution_residual(&w, &sys, &|_x: &[f64], _u: &[f64]| 1.0, 0.01).unwrap();
        assert!(r.evaluated() > 0);
        for (i, s) in r.status.iter().enumerate() {
            if s.is_evaluated() {
                assert_eq!(r.residuals.values()[i], 1.0);
            }
        }
        assert_eq!(r.status[0], NodeStatus::BoxBoundary);
    }

    #[test]
    fn solved_field_is_discrete_supersolution() {
        let (sys, shape) = int1d(0.01);
        let p = SolverParams::for_shape(&shape);
        let out = solve_min_time(&sys, &shape, p).unwrap();
        let r = supersolution_residual(&out.field, &sys, &|_x: &[f64], _u: &[f64]| 1.0, p.tau).unwrap();
        let (_, worst) = r.worst().unwrap();
        assert!(worst <= p.fixed_point_tol / p.tau);
    }

    #[test]
    fn csv_has_header_and_one_row_per_node() {
        let (sys, shape) = int1d(0.5);
        let out = solve_min_time(&sys, &shape, SolverParams::for_shape(&shape)).unwrap();
        let csv = field_to_csv(&out.field, &solve_metadata(&out));
        let rows = csv.lines().filter(|l| !l.starts_with('#')).count();
        assert_eq!(rows, shape.len() + 1);
        assert!(csv.contains("# converged: true"));
    }
}
