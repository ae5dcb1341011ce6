//! Trajectory synthesis from a verified minimum restraint function by level
//! halving, with per-segment certificates, the global cost bound and an
//! explicit KL descent rate.

use crate::comparators::{ComparatorPair, MonotoneFn};
use crate::error::{MrfError, Result};
use crate::grid::GridField;
use crate::hjb::stencil;
use crate::kl::{halton_rect, KlFunction, MajorantOptions};
use crate::scalar::Real;
use crate::system::ControlSystem;
use crate::tables::{geometric_ladder, linear_ladder, MonotoneTable};
use crate::trajectory::{rk4_step, trapezoid_increment, TerminalFlag, Trajectory};
use crate::verify::BracketPair;

/// Index of the control sample minimizing the one-step objective
/// `[W(x + tau f(x,u)) - W(x)]/tau + p0(W(x)) l(x,u)` (lowest index on ties).
pub fn greedy_control_index<T: Real>(
    x: &[T],
    w: &GridField<T>,
    system: &ControlSystem<T>,
    comp: &ComparatorPair<T>,
    tau: T,
) -> Result<usize> {
    let wx = w.interpolate(x)?;
    let p = comp.p0(wx)?;
    let n = x.len();
    let mut f = vec![T::zero(); n];
    let mut y = vec![T::zero(); n];
    let mut best: Option<(usize, T)> = None;
    for (k, u) in system.control_samples().iter().enumerate() {
        stencil(system, x, u, tau, &mut f, &mut y);
        let Some(wy) = w.try_interpolate(&y) else {
            continue;
        };
        let obj = (wy - wx) / tau + p * system.running_cost(x, u);
        if best.is_none_or(|(_, b)| obj < b) {
            best = Some((k, obj));
        }
    }
    best.map(|(k, _)| k).ok_or_else(|| MrfError::Stuck {
        position: x.iter().map(|v| v.to_f64_lossy()).collect(),
    })
}

/// The minimizing control sample itself; see [`greedy_control_index`].
pub fn greedy_control<T: Real>(
    x: &[T],
    w: &GridField<T>,
    system: &ControlSystem<T>,
    comp: &ComparatorPair<T>,
    tau: T,
) -> Result<Vec<T>> {
    let k = greedy_control_index(x, w, system, comp, tau)?;
    Ok(system.control_samples()[k].clone())
}

/// `3 d_plus(R) / (2^N gamma(d_minus(R) / 2^N))`.
pub fn segment_time_bound<T: Real>(n: usize, r: T, brackets: &BracketPair<T>, gamma: &MonotoneFn<T>) -> Result<T> {
    if n == 0 {
        return Err(MrfError::Precondition("segment levels start at 1".into()));
    }
    let scale = T::lit(2.0).powi(n as i32);
    let g = gamma.eval(brackets.d_minus(r) / scale)?;
    if !(g > T::zero()) {
        return Err(MrfError::Precondition(format!(
            "gamma vanishes at {}",
            brackets.d_minus(r) / scale
        )));
    }
    Ok(T::lit(3.0) * brackets.d_plus(r) / (scale * g))
}

/// `4 P(Wz / 2)`.
pub fn cost_bound<T: Real>(wz: T, p_table: &MonotoneTable<T>) -> Result<T> {
    if wz <= T::zero() {
        return Ok(T::zero());
    }
    let v = wz * T::lit(0.5);
    let (lo, hi) = p_table.domain();
    if v < lo || v > hi {
        return Err(MrfError::Range {
            value: v.to_f64_lossy(),
            lo: lo.to_f64_lossy(),
            hi: hi.to_f64_lossy(),
        });
    }
    Ok(T::lit(4.0) * p_table.eval(v)?)
}

// ----------------------------------------------------------- level halving

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthesisParams<T> {
    /// Sample-and-hold integration step.
    pub dt: T,
    /// Stencil step of the greedy selector.
    pub tau: T,
    /// Crossing tolerance relative to `W(z)`.
    pub halving_tol_rel: T,
    pub max_levels: usize,
    pub target_tol: T,
    /// Segments longer than `safety_factor * T_N` stall.
    pub safety_factor: T,
    pub quad_tol: T,
}

impl<T: Real> SynthesisParams<T> {
    pub fn for_step(h: T) -> Self {
        Self {
            dt: h,
            tau: h,
            halving_tol_rel: T::lit(1e-6),
            max_levels: 64,
            target_tol: T::lit(1e-6),
            safety_factor: T::lit(5.0),
            quad_tol: T::lit(1e-6),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentCertificate<T> {
    pub index: usize,
    pub start: Vec<T>,
    pub end: Vec<T>,
    pub start_time: T,
    pub duration: T,
    pub cost: T,
    pub level_before: T,
    pub level_after: T,
    /// `W(z) / 2^N`.
    pub nominal_level: T,
    /// Largest `W` seen inside the segment.
    pub peak_level: T,
    pub time_bound: T,
    /// `2 (level_before - level_after) / p0(level_after)`.
    pub cost_bound_rhs: T,
    pub rel1: bool,
    pub rel2: bool,
    pub rel3: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthesisSummary<T> {
    pub reached_target: bool,
    pub terminal: TerminalFlag,
    pub w_start: T,
    pub distance_start: T,
    pub total_time: T,
    pub total_cost: T,
    /// `4 P(W(z)/2)` when a P table was supplied.
    pub cost_bound: Option<T>,
    pub within_cost_bound: Option<bool>,
    pub three_halves_ok: bool,
    pub rel1_ok: bool,
    pub rel2_ok: bool,
    pub rel3_ok: bool,
    pub halving_tol: T,
}

#[derive(Debug, Clone)]
pub struct Synthesis<T> {
    pub trajectory: Trajectory<T>,
    pub segments: Vec<SegmentCertificate<T>>,
    pub summary: SynthesisSummary<T>,
}

/// Level-halving synthesis from `z`: sample-and-hold greedy control, one
/// segment per halving of `W`, crossings located by bisection on the last step.
#[allow(clippy::too_many_arguments)]
pub fn synthesize_level_halving<T: Real>(
    system: &ControlSystem<T>,
    w: &GridField<T>,
    comp: &ComparatorPair<T>,
    brackets: &BracketPair<T>,
    p_table: Option<&MonotoneTable<T>>,
    z: &[T],
    params: &SynthesisParams<T>,
) -> Result<Synthesis<T>> {
    if !(params.dt > T::zero()) || !(params.tau > T::zero()) {
        return Err(MrfError::InvalidArgument("dt and tau must be positive".into()));
    }
    let d_z = system.target_distance(z);
    if d_z <= params.target_tol {
        return Err(MrfError::Precondition("start point lies in the target band".into()));
    }
    let wz = w.interpolate(z)?;
    if !(wz > T::zero()) {
        return Err(MrfError::Precondition("W(z) must be positive".into()));
    }
    let tol = params.halving_tol_rel * wz;
    let half = T::lit(0.5);
    let cost_fn = system.running_cost_fn();
    let mut traj = Trajectory::start(z.to_vec());
    let mut segments = Vec::new();
    let mut x = z.to_vec();
    let (mut t, mut cost) = (T::zero(), T::zero());
    let mut level_before = wz;
    let mut three_halves_ok = true;
    let mut terminal = TerminalFlag::HorizonExhausted;

    'levels: for n in 1..=params.max_levels {
        let nominal = wz / T::lit(2.0).powi(n as i32);
        let time_bound = segment_time_bound(n, d_z, brackets, &comp.gamma)?;
        let window = params.safety_factor * time_bound;
        let (t0, c0, x0) = (t, cost, x.clone());
        let mut peak = level_before;
        let crossed;
        loop {
            if t - t0 > window {
                return Err(MrfError::SynthesisStalled {
                    segment: n,
                    elapsed: (t - t0).to_f64_lossy(),
                    window: window.to_f64_lossy(),
                });
            }
            let u = greedy_control(&x, w, system, comp, params.tau)?;
            let mut h = params.dt;
            let mut x1 = rk4_step(system, &x, &u, h);
            if x1.iter().any(|v| !v.is_finite()) {
                return Err(MrfError::IntegrationDiverged {
                    last_time: t.to_f64_lossy(),
                });
            }
            let Some(mut w1) = w.try_interpolate(&x1) else {
                terminal = TerminalFlag::LeftDomain;
                break 'levels;
            };
            let in_band = |y: &[T]| system.target_distance(y) <= params.target_tol;
            let stop = |y: &[T], wy: T| wy <= nominal || in_band(y);
            if stop(&x1, w1) {
                let mut lo = T::zero();
                let width = params.dt * T::lit(1e-12);
                for _ in 0..200 {
                    let settled = (w1 <= nominal && w1 >= nominal - tol && !in_band(&x1)) || h - lo <= width;
                    if settled {
                        break;
                    }
                    let mid = lo + (h - lo) * half;
                    if mid <= lo || mid >= h {
                        break;
                    }
                    let xm = rk4_step(system, &x, &u, mid);
                    match w.try_interpolate(&xm) {
                        Some(wm) if stop(&xm, wm) => {
                            h = mid;
                            x1 = xm;
                            w1 = wm;
                        }
                        _ => lo = mid,
                    }
                }
            }
            let hit = w1 <= nominal;
            cost = cost + trapezoid_increment(&*cost_fn, &x, &x1, &u, h);
            t = t + h;
            peak = peak.max(w1);
            x = x1;
            traj.push(t, x.clone(), u, cost);
            if hit {
                crossed = true;
                break;
            }
            if system.target_distance(&x) <= params.target_tol {
                crossed = false;
                break;
            }
        }
        if crossed {
            let level_after = w.interpolate(&x)?;
            let rhs = T::lit(2.0) * (level_before - level_after) / comp.p0(level_after)?;
            let duration = t - t0;
            let seg_cost = cost - c0;
            let peak_ok = peak <= T::lit(1.5) * level_before;
            three_halves_ok &= peak_ok;
            segments.push(SegmentCertificate {
                index: n,
                start: x0,
                end: x.clone(),
                start_time: t0,
                duration,
                cost: seg_cost,
                level_before,
                level_after,
                nominal_level: nominal,
                peak_level: peak,
                time_bound,
                cost_bound_rhs: rhs,
                rel1: (level_after - nominal).abs() <= tol && level_after <= level_before * half + tol && peak_ok,
                rel2: seg_cost <= rhs + params.quad_tol,
                rel3: duration <= time_bound,
            });
            level_before = level_after;
        } else {
            three_halves_ok &= peak <= T::lit(1.5) * level_before;
        }
        if system.target_distance(&x) <= params.target_tol {
            terminal = TerminalFlag::ReachedTarget;
            break;
        }
    }
    traj.terminal = terminal;
    let bound = match p_table {
        Some(p) => Some(cost_bound(wz, p)?),
        None => None,
    };
    let summary = SynthesisSummary {
        reached_target: terminal == TerminalFlag::ReachedTarget,
        terminal,
        w_start: wz,
        distance_start: d_z,
        total_time: t,
        total_cost: cost,
        cost_bound: bound,
        within_cost_bound: bound.map(|b| cost <= b + params.quad_tol),
        three_halves_ok,
        rel1_ok: segments.iter().all(|s| s.rel1),
        rel2_ok: segments.iter().all(|s| s.rel2),
        rel3_ok: segments.iter().all(|s| s.rel3),
        halving_tol: tol,
    };
    Ok(Synthesis {
        trajectory: traj,
        segments,
        summary,
    })
}

// ---------------------------------------------------------- super-optimality

#[derive(Debug, Clone, PartialEq)]
pub struct SuperoptimalityReport<T> {
    /// `sup_T { int_0^T [p0(W) l + gamma(W)] dt + W(x(T)) } - W(z)`.
    pub residual: T,
    pub worst_time: T,
    pub w_start: T,
    /// Set when the trajectory left the field box and the sup was cut short.
    pub truncated: bool,
    pub samples: usize,
}

/// Super-optimality residual along a stored trajectory (trapezoidal rule).
pub fn check_superoptimality<T: Real>(
    traj: &Trajectory<T>,
    w: &GridField<T>,
    system: &ControlSystem<T>,
    comp: &ComparatorPair<T>,
) -> Result<SuperoptimalityReport<T>> {
    let wz = w.interpolate(&traj.states[0])?;
    let integrand =
        |x: &[T], u: &[T], v: T| -> Result<T> { Ok(comp.p0(v)? * system.running_cost(x, u) + comp.gamma(v)?) };
    let mut report = SuperoptimalityReport {
        residual: T::zero(),
        worst_time: T::zero(),
        w_start: wz,
        truncated: false,
        samples: 1,
    };
    let mut acc = T::zero();
    let mut w_prev = wz;
    for k in 0..traj.controls.len() {
        let u = &traj.controls[k];
        let Some(w_next) = w.try_interpolate(&traj.states[k + 1]) else {
            report.truncated = true;
            break;
        };
        let h = traj.times[k + 1] - traj.times[k];
        let g0 = integrand(&traj.states[k], u, w_prev)?;
        let g1 = integrand(&traj.states[k + 1], u, w_next)?;
        acc = acc + T::lit(0.5) * h * (g0 + g1);
        let r = acc + w_next - wz;
        if r > report.residual {
            report.residual = r;
            report.worst_time = traj.times[k + 1];
        }
        report.samples += 1;
        w_prev = w_next;
    }
    Ok(report)
}

// ------------------------------------------------------------- descent rate

/// `Gamma(R) = d_minus^{-1}(3/2 d_plus(R))`.
pub fn capital_gamma<T: Real>(brackets: &BracketPair<T>, r: T) -> Result<T> {
    brackets.d_minus_inv(T::lit(1.5) * brackets.d_plus(r))
}

/// Smallest `N >= 1` with `2^N >= 3 d_plus(R) / d_minus(r)`.
pub fn levels_needed<T: Real>(brackets: &BracketPair<T>, big_r: T, r: T) -> Result<usize> {
    let dm = brackets.d_minus(r);
    if !(dm > T::zero()) {
        return Err(MrfError::Precondition("d_minus must be positive".into()));
    }
    let q = T::lit(3.0) * brackets.d_plus(big_r) / dm;
    let mut n = q.log2().ceil().to_i64().unwrap_or(1).max(1) as usize;
    while T::lit(2.0).powi(n as i32) < q {
        n += 1;
    }
    while n > 1 && T::lit(2.0).powi(n as i32 - 1) >= q {
        n -= 1;
    }
    Ok(n)
}

/// `sum_{j=1}^{N(R,r)} T_j(R)`.
pub fn total_time_bound<T: Real>(brackets: &BracketPair<T>, gamma: &MonotoneFn<T>, big_r: T, r: T) -> Result<T> {
    let n = levels_needed(brackets, big_r, r)?;
    (1..=n).try_fold(T::zero(), |acc, j| {
        Ok(acc + segment_time_bound(j, big_r, brackets, gamma)?)
    })
}

/// `t_k = T(R, R/(k+1))`.
pub fn switch_time<T: Real>(brackets: &BracketPair<T>, gamma: &MonotoneFn<T>, big_r: T, k: u64) -> Result<T> {
    total_time_bound(brackets, gamma, big_r, big_r / T::lit((k + 1) as f64))
}

/// Step function `b(R, t)`: `Gamma(R)` before `t_1`, then `R/(j+1)` with
/// `j = max{k : t_k <= t}`.
pub fn step_rate<T: Real>(brackets: &BracketPair<T>, gamma: &MonotoneFn<T>, big_r: T, t: T) -> Result<T> {
    if !(big_r > T::zero()) {
        return Ok(T::zero());
    }
    if t < switch_time(brackets, gamma, big_r, 1)? {
        return capital_gamma(brackets, big_r);
    }
    let cap = 1u64 << 52;
    let (mut lo, mut hi) = (1u64, 2u64);
    while switch_time(brackets, gamma, big_r, hi)? <= t {
        lo = hi;
        if hi >= cap {
            return Ok(big_r / T::lit((lo + 1) as f64));
        }
        hi *= 2;
    }
    // t_lo <= t < t_hi
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if switch_time(brackets, gamma, big_r, mid)? <= t {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(big_r / T::lit((lo + 1) as f64))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DescentOptions<T> {
    pub n_r: usize,
    pub n_t: usize,
    pub samples: usize,
    pub majorant: MajorantOptions<T>,
}

impl<T: Real> Default for DescentOptions<T> {
    fn default() -> Self {
        Self {
            n_r: 32,
            n_t: 64,
            samples: 10_000,
            majorant: MajorantOptions::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct DescentRate<T> {
    pub beta: KlFunction<T>,
    pub r_min: T,
    pub r_max: T,
    /// `T(R_max, r_min)`, the time extent of the working rectangle.
    pub t_max: T,
    /// `(R, Gamma(R))` on the r knots.
    pub gamma_cap: Vec<(T, T)>,
    /// `(R, t_1(R))` on the r knots.
    pub first_switch: Vec<(T, T)>,
    pub samples_checked: usize,
    /// Smallest `beta - b` over the check samples.
    pub min_margin: T,
    pub refined: bool,
}

/// KL majorant of the step function `b` on `[r_min, R_max] x [0, T(R_max, r_min)]`,
/// verified on quasi-random samples; the knot grid is refined once on failure.
pub fn build_descent_rate<T: Real>(
    brackets: &BracketPair<T>,
    gamma: &MonotoneFn<T>,
    r_max: T,
    r_min: T,
    opts: &DescentOptions<T>,
) -> Result<DescentRate<T>> {
    if !(r_min > T::zero()) || !(r_max > r_min) {
        return Err(MrfError::InvalidArgument("need 0 < r_min < R_max".into()));
    }
    for r in [r_min, r_max] {
        if !(brackets.d_minus(r) > T::zero()) || !(brackets.d_plus(r) > T::zero()) {
            return Err(MrfError::Precondition(
                "brackets must be positive on [r_min, R_max]".into(),
            ));
        }
    }
    let t_max = total_time_bound(brackets, gamma, r_max, r_min)?;
    let b = |r: T, t: T| step_rate(brackets, gamma, r, t).unwrap_or(T::infinity());
    let samples = halton_rect(opts.samples, (r_min, r_max), (T::zero(), t_max));
    let mut last_failure = None;
    for attempt in 0..2 {
        let factor = 1 << attempt;
        let mut knots_r = vec![T::zero()];
        knots_r.extend(geometric_ladder(r_min, r_max, opts.n_r * factor));
        let mut knots_t = vec![T::zero()];
        knots_t.extend(
            linear_ladder(T::zero(), t_max, opts.n_t * factor + 1)
                .into_iter()
                .skip(1),
        );
        let mopts = MajorantOptions {
            r_subsamples: opts.majorant.r_subsamples * factor,
            ..opts.majorant
        };
        let beta = KlFunction::majorize(&b, knots_r.clone(), knots_t, mopts)?;
        let mut min_margin = T::infinity();
        let mut failure = None;
        for &(r, t) in &samples {
            let bv = step_rate(brackets, gamma, r, t)?;
            let margin = beta.value(r, t) - bv;
            min_margin = min_margin.min(margin);
            if margin < T::zero() && failure.is_none() {
                failure = Some(MrfError::Majorization {
                    r: r.to_f64_lossy(),
                    t: t.to_f64_lossy(),
                    beta: beta.value(r, t).to_f64_lossy(),
                    b: bv.to_f64_lossy(),
                });
            }
        }
        if failure.is_none() {
            let gamma_cap = knots_r[1..]
                .iter()
                .map(|&r| Ok((r, capital_gamma(brackets, r)?)))
                .collect::<Result<Vec<_>>>()?;
            let first_switch = knots_r[1..]
                .iter()
                .map(|&r| Ok((r, switch_time(brackets, gamma, r, 1)?)))
                .collect::<Result<Vec<_>>>()?;
            return Ok(DescentRate {
                beta,
                r_min,
                r_max,
                t_max,
                gamma_cap,
                first_switch,
                samples_checked: samples.len(),
                min_margin,
                refined: attempt > 0,
            });
        }
        last_failure = failure;
    }
    Err(last_failure.expect("failure recorded"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog;
    use crate::comparators::{builtin_gamma, builtin_p0};
    use crate::grid::GridShape;

    fn setup() -> (ControlSystem<f64>, GridField<f64>, ComparatorPair<f64>) {
        let sys = catalog::int1d_mintime(3, vec![-2.0], vec![2.0]);
        let shape = GridShape::with_spacing(vec![-2.0], vec![2.0], 0.01).unwrap();
        let d = sys.target_distance_fn();
        let w = GridField::from_fn(shape, |x| d(x), 1e-9, |x| 2.0 * d(x));
        let c = ComparatorPair::new(builtin_p0("one").unwrap(), builtin_gamma("saturating").unwrap());
        (sys, w, c)
    }

    #[test]
    fn greedy_descends() {
        let (sys, w, c) = setup();
        assert_eq!(greedy_control(&[0.5], &w, &sys, &c, 0.01).unwrap(), vec![-1.0]);
        assert_eq!(greedy_control(&[-0.5], &w, &sys, &c, 0.01).unwrap(), vec![1.0]);
    }

    #[test]
    fn time_bound_examples() {
        let id = BracketPair::<f64>::identity();
        let lin = builtin_gamma::<f64>("linear").unwrap();
        for n in 1..5 {
            assert!((segment_time_bound(n, 0.7, &id, &lin).unwrap() - 3.0).abs() < 1e-12);
        }
        let sq = builtin_gamma::<f64>("square").unwrap();
        assert!((segment_time_bound(1, 1.0, &id, &sq).unwrap() - 6.0).abs() < 1e-12);
        assert!(segment_time_bound(0, 1.0, &id, &lin).is_err());
    }

    #[test]
    fn descent_rate_intermediates() {
        let id = BracketPair::<f64>::identity();
        let lin = builtin_gamma::<f64>("linear").unwrap();
        assert!((capital_gamma(&id, 2.0).unwrap() - 3.0).abs() < 1e-12);
        assert_eq!(levels_needed(&id, 1.0, 1.0).unwrap(), 2);
        assert!((total_time_bound(&id, &lin, 1.0, 1.0).unwrap() - 6.0).abs() < 1e-12);
    }

    #[test]
    fn synthesis_from_one_point_six() {
        let (sys, w, c) = setup();
        let b = crate::verify::compute_brackets(&w, 1e-9).unwrap();
        let p = MonotoneTable::new(vec![0.0, 10.0], vec![0.0, 10.0]).unwrap();
        let s = synthesize_level_halving(&sys, &w, &c, &b, Some(&p), &[1.6], &SynthesisParams::for_step(0.01)).unwrap();
        assert!(s.summary.reached_target);
        assert!(s.summary.total_cost >= 1.5 - 2e-6 && s.summary.total_cost <= 6.4);
        assert_eq!(s.summary.within_cost_bound, Some(true));
        for seg in s.segments.iter().take(8) {
            let nominal = 3.0 / 2f64.powi(seg.index as i32);
            assert!((seg.level_after - nominal).abs() <= 1e-6 * 3.0);
        }
        let r = check_superoptimality(&s.trajectory, &w, &sys, &c).unwrap();
        assert!(r.residual <= 1.5 + 1e-4);
    }

    #[test]
    fn synthesis_on_target_is_rejected() {
        let (sys, w, c) = setup();
        let b = crate::verify::compute_brackets(&w, 1e-9).unwrap();
        let e = synthesize_level_halving(&sys, &w, &c, &b, None, &[0.05], &SynthesisParams::for_step(0.01));
        assert!(matches!(e, Err(MrfError::Precondition(_))));
    }

    #[test]
    fn cost_bound_examples() {
        let p = MonotoneTable::new(vec![0.0, 10.0], vec![0.0, 10.0]).unwrap();
        assert!((cost_bound(3.0f64, &p).unwrap() - 6.0).abs() < 1e-12);
        assert_eq!(cost_bound(0.0, &p).unwrap(), 0.0);
        assert!(matches!(cost_bound(30.0, &p), Err(MrfError::Range { .. })));
    }
}
