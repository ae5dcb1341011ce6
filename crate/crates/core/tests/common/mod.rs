//! Reference solutions shared by integration tests.

#![allow(dead_code)]

/// First time in `[0, horizon]` at which the constant-control double
/// integrator arc from `(x, v)` enters the disc of radius `rho`.
fn arc_entry(x: f64, v: f64, u: f64, rho: f64, horizon: f64, step: f64) -> Option<f64> {
    let g = |t: f64| {
        let (px, pv) = (x + v * t + 0.5 * u * t * t, v + u * t);
        px * px + pv * pv - rho * rho
    };
    if g(0.0) <= 0.0 {
        return Some(0.0);
    }
    let mut a = 0.0;
    while a < horizon {
        let b = (a + step).min(horizon);
        if g(b) <= 0.0 {
            let (mut lo, mut hi) = (a, b);
            for _ in 0..60 {
                let m = 0.5 * (lo + hi);
                if g(m) <= 0.0 {
                    hi = m;
                } else {
                    lo = m;
                }
            }
            return Some(hi);
        }
        // minimum of g on [a, b] can dip below zero between samples; look at the
        // vertex of the distance in position when the arc grazes the disc
        let m = 0.5 * (a + b);
        if g(m) <= 0.0 {
            let (mut lo, mut hi) = (a, m);
            for _ in 0..60 {
                let c = 0.5 * (lo + hi);
                if g(c) <= 0.0 {
                    hi = c;
                } else {
                    lo = c;
                }
            }
            return Some(hi);
        }
        a = b;
    }
    None
}

/// Minimum time for `x' = v, v' = u`, `|u| <= 1`, to reach the disc of radius
/// `rho` around the origin, by brute force over bang-bang controls with at most
/// one switch.
pub fn double_integrator_ball_time(x: f64, v: f64, rho: f64) -> f64 {
    let horizon = 8.0;
    let (ds, step) = (4e-3, 1e-2);
    let mut best = f64::INFINITY;
    for u1 in [-1.0, 1.0] {
        if let Some(t) = arc_entry(x, v, u1, rho, horizon, step) {
            best = best.min(t);
        }
        let mut s = 0.0;
        while s < best.min(horizon) {
            let (xs, vs) = (x + v * s + 0.5 * u1 * s * s, v + u1 * s);
            if let Some(t) = arc_entry(xs, vs, -u1, rho, (best - s).min(horizon), step) {
                best = best.min(s + t);
            }
            s += ds;
        }
    }
    best
}

/// Minimum time to the origin for the double integrator (switching curve
/// `x = -v|v|/2`).
pub fn double_integrator_origin_time(x: f64, v: f64) -> f64 {
    let s = x + 0.5 * v * v.abs();
    if s > 0.0 {
        v + 2.0 * (x + 0.5 * v * v).sqrt()
    } else if s < 0.0 {
        -v + 2.0 * (-x + 0.5 * v * v).sqrt()
    } else {
        v.abs()
    }
}

/// Largest oracle change over eight neighbours at distance `radius`; large
/// values flag the grazing curves where the minimum time jumps.
pub fn double_integrator_local_jump(x: f64, v: f64, rho: f64, radius: f64) -> f64 {
    let c = double_integrator_ball_time(x, v, rho);
    (0..8)
        .map(|q| {
            let a = q as f64 * std::f64::consts::FRAC_PI_4;
            (double_integrator_ball_time(x + radius * a.cos(), v + radius * a.sin(), rho) - c).abs()
        })
        .fold(0.0, f64::max)
}

/// Exact minimum time of `x' = u`, `|u| <= 1`, to `[-0.1, 0.1]`.
pub fn int1d_time(x: f64) -> f64 {
    (x.abs() - 0.1).max(0.0)
}
