//! Builtin benchmark systems.
//!
//! Every catalog target is the closed ball (interval in 1D) of radius
//! [`TARGET_RADIUS`] around the origin, so `target_distance(x) = max(|x| - 0.1, 0)`.

use std::sync::Arc;

use crate::error::{MrfError, Result};
use crate::scalar::{norm, Real};
use crate::system::ControlSystem;

pub const TARGET_RADIUS: f64 = 0.1;

/// Names accepted by [`build`].
pub const SYSTEM_NAMES: &[&str] = &["int1d_mintime", "double_integrator_mintime", "zermelo", "scalar_lq"];

/// Drift coefficient of the Zermelo current `(0.5 y, 0)`.
pub const ZERMELO_DRIFT: f64 = 0.5;

fn ball_distance<T: Real>() -> Arc<dyn Fn(&[T]) -> T + Send + Sync> {
    let r = T::lit(TARGET_RADIUS);
    Arc::new(move |x: &[T]| (norm(x) - r).max(T::zero()))
}

fn unit_cost<T: Real>() -> Arc<dyn Fn(&[T], &[T]) -> T + Send + Sync> {
    Arc::new(|_x: &[T], _u: &[T]| T::one())
}

/// `count` evenly spaced scalar controls on `[-1, 1]` (just `0` when `count == 1`).
pub fn scalar_controls<T: Real>(count: usize) -> Vec<Vec<T>> {
    if count <= 1 {
        return vec![vec![T::zero()]];
    }
    let step = T::lit(2.0) / T::from_usize_lossy(count - 1);
    (0..count)
        .map(|k| {
            let u = if 2 * k + 1 == count {
                T::zero()
            } else {
                -T::one() + step * T::from_usize_lossy(k)
            };
            vec![u]
        })
        .collect()
}

/// `x' = u`, `u` in `[-1, 1]`, `l = 1`.
pub fn int1d_mintime<T: Real>(controls: usize, lower: Vec<T>, upper: Vec<T>) -> ControlSystem<T> {
    ControlSystem::new(
        "int1d_mintime",
        1,
        scalar_controls(controls),
        Arc::new(|_x: &[T], u: &[T], out: &mut [T]| out[0] = u[0]),
        unit_cost(),
        ball_distance(),
    )
    .expect("catalog system is well formed")
    .with_domain(lower, upper)
    .with_lipschitz_hint(T::one())
    .with_ball_target(T::lit(TARGET_RADIUS))
}

/// `x' = v, v' = u`, `u` in `[-1, 1]`, `l = 1`, target ball in the `(x, v)` plane.
pub fn double_integrator_mintime<T: Real>(controls: usize, lower: Vec<T>, upper: Vec<T>) -> ControlSystem<T> {
    let vmax = lower[1].abs().max(upper[1].abs());
    ControlSystem::new(
        "double_integrator_mintime",
        2,
        scalar_controls(controls),
        Arc::new(|x: &[T], u: &[T], out: &mut [T]| {
            out[0] = x[1];
            out[1] = u[0];
        }),
        unit_cost(),
        ball_distance(),
    )
    .expect("catalog system is well formed")
    .with_domain(lower, upper)
    .with_lipschitz_hint(vmax + T::one())
    .with_ball_target(T::lit(TARGET_RADIUS))
}

/// Planar unit-speed boat steered by heading, in the shear current `(0.5 y, 0)`.
/// Controls are `(cos theta, sin theta)` for `headings` equally spaced angles.
pub fn zermelo<T: Real>(headings: usize, lower: Vec<T>, upper: Vec<T>) -> ControlSystem<T> {
    let n = headings.max(1);
    let controls = (0..n)
        .map(|k| {
            let th = T::lit(std::f64::consts::TAU) * T::from_usize_lossy(k) / T::from_usize_lossy(n);
            vec![th.cos(), th.sin()]
        })
        .collect();
    let ymax = lower[1].abs().max(upper[1].abs());
    let c = T::lit(ZERMELO_DRIFT);
    ControlSystem::new(
        "zermelo",
        2,
        controls,
        Arc::new(move |x: &[T], u: &[T], out: &mut [T]| {
            out[0] = u[0] + c * x[1];
            out[1] = u[1];
        }),
        unit_cost(),
        ball_distance(),
    )
    .expect("catalog system is well formed")
    .with_domain(lower, upper)
    .with_lipschitz_hint(T::one() + c * ymax)
    .with_ball_target(T::lit(TARGET_RADIUS))
}

/// `x' = u`, `u` in `[-1, 1]`, `l = x^2 + u^2`.
pub fn scalar_lq<T: Real>(controls: usize, lower: Vec<T>, upper: Vec<T>) -> ControlSystem<T> {
    ControlSystem::new(
        "scalar_lq",
        1,
        scalar_controls(controls),
        Arc::new(|_x: &[T], u: &[T], out: &mut [T]| out[0] = u[0]),
        Arc::new(|x: &[T], u: &[T]| x[0] * x[0] + u[0] * u[0]),
        ball_distance(),
    )
    .expect("catalog system is well formed")
    .with_domain(lower, upper)
    .with_lipschitz_hint(T::one())
    .with_ball_target(T::lit(TARGET_RADIUS))
}

/// Looks a catalog system up by name. `controls` is the number of control
/// samples (headings for `zermelo`).
pub fn build<T: Real>(name: &str, controls: usize, lower: Vec<T>, upper: Vec<T>) -> Result<ControlSystem<T>> {
    let dim = match name {
        "int1d_mintime" | "scalar_lq" => 1,
        "double_integrator_mintime" | "zermelo" => 2,
        _ => {
            return Err(MrfError::InvalidArgument(format!(
                "unknown system `{name}` (known: {})",
                SYSTEM_NAMES.join(", ")
            )))
        }
    };
    if lower.len() != dim || upper.len() != dim {
        return Err(MrfError::InvalidArgument(format!(
            "system `{name}` needs a {dim}-dimensional box"
        )));
    }
    if controls == 0 {
        return Err(MrfError::InvalidArgument("need at least one control sample".into()));
    }
    Ok(match name {
        "int1d_mintime" => int1d_mintime(controls, lower, upper),
        "scalar_lq" => scalar_lq(controls, lower, upper),
        "double_integrator_mintime" => double_integrator_mintime(controls, lower, upper),
        _ => zermelo(controls, lower, upper),
    })
}

/// Default computational box of a catalog system.
pub fn default_box(name: &str) -> Option<(Vec<f64>, Vec<f64>)> {
    match name {
        "int1d_mintime" | "scalar_lq" => Some((vec![-2.0], vec![2.0])),
        "double_integrator_mintime" | "zermelo" => Some((vec![-2.0, -2.0], vec![2.0, 2.0])),
        _ => None,
    }
}

/// Default number of control samples of a catalog system.
pub fn default_controls(name: &str) -> usize {
    match name {
        "zermelo" => 16,
        _ => 3,
    }
}
