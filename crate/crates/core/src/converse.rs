//! Constructive objects of the converse direction: from controllability data
//! `(beta, W)` and a controller to a running-cost augmentation `ell` whose
//! value function is a minimum restraint function.
//!
//! Pipeline: bilateral radius sequence and strips, uniform strip-crossing
//! times, the enlarged descent rate `beta_bar`, `ell_1`, `kappa`, `Phi`/`Psi`,
//! the recursive sequence `ell_j`, and the augmented functional `J`.

use std::fmt::Write as _;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{MrfError, Result};
use crate::kl::{bisect, halton, halton_rect, KlFunction, MajorantOptions};
use crate::scalar::{norm, Real};
use crate::system::ControlSystem;
use crate::tables::{geometric_ladder, linear_ladder, Extrapolation, MonotoneTable};
use crate::trajectory::{integrate_policy, rk4_step, ControlSchedule, StepParams, TerminalFlag};
use crate::verify::BracketPair;

// --------------------------------------------------------------- r sequence

/// `r_i` for `i` in `[i_min, i_max]`, strictly decreasing, `r_0 = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct RTable<T> {
    i_min: i32,
    values: Vec<T>,
}

impl<T: Real> RTable<T> {
    pub fn i_min(&self) -> i32 {
        self.i_min
    }

    pub fn i_max(&self) -> i32 {
        self.i_min + self.values.len() as i32 - 1
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn r(&self, i: i32) -> Option<T> {
        if i < self.i_min {
            return None;
        }
        self.values.get((i - self.i_min) as usize).copied()
    }

    /// `r_i`, with indices past `i_max` clamped to `r_{i_max}`.
    fn r_clamped_above(&self, i: i32) -> T {
        self.r(i.min(self.i_max())).expect("index above i_min")
    }

    /// `i(r) = i` iff `r` lies in `(r_i, r_{i-1}]`.
    pub fn strip_index(&self, r: T) -> Result<i32> {
        let (lo, hi) = (self.values[self.values.len() - 1], self.values[0]);
        if !(r > lo) || r > hi {
            return Err(MrfError::Range {
                value: r.to_f64_lossy(),
                lo: lo.to_f64_lossy(),
                hi: hi.to_f64_lossy(),
            });
        }
        // values decreasing: first k with values[k] < r is the strip
        let k = self.values.partition_point(|&v| v >= r);
        Ok(self.i_min + k as i32)
    }
}

/// See [`RTable::strip_index`].
pub fn strip_index<T: Real>(r: T, table: &RTable<T>) -> Result<i32> {
    table.strip_index(r)
}

/// `r -> min{ beta^{-1}(r, 0), d_plus^{-1}(d_minus(r) / 4) }`.
fn backward_step<T: Real>(beta: &KlFunction<T>, brackets: &BracketPair<T>, r: T) -> Result<T> {
    let a = beta.inverse_r(r, T::zero())?;
    let b = brackets.d_plus_inv(brackets.d_minus(r) * T::lit(0.25))?;
    Ok(a.min(b))
}

/// `r_0 = 1`, `r_i = min{ beta^{-1}(r_{i-1}, 0), d_plus^{-1}(d_minus(r_{i-1})/4) }`;
/// negative indices invert the same recursion forwards by bisection.
pub fn build_bilateral_sequence<T: Real>(
    beta: &KlFunction<T>,
    brackets: &BracketPair<T>,
    i_min: i32,
    i_max: i32,
) -> Result<RTable<T>> {
    if i_min > 0 || i_max < 1 {
        return Err(MrfError::InvalidArgument("need i_min <= 0 < i_max".into()));
    }
    let mut up = vec![T::one()];
    for i in 1..=i_max {
        let prev = *up.last().expect("nonempty");
        let r = backward_step(beta, brackets, prev).map_err(|e| MrfError::Inverse(format!("r_{i}: {e}")))?;
        if !(r > T::zero() && r < prev) {
            return Err(MrfError::Inverse(format!("r_{i} = {r} does not decrease")));
        }
        up.push(r);
    }
    let mut down: Vec<T> = Vec::new();
    let mut next = T::one();
    for i in (i_min..0).rev() {
        let target = next;
        let reaches = |s: T| backward_step(beta, brackets, s).map(|v| v >= target).unwrap_or(false);
        let mut hi = target * T::lit(2.0);
        let mut tries = 0;
        while !reaches(hi) {
            hi = hi * T::lit(2.0);
            tries += 1;
            if tries > 200 || !hi.is_finite() {
                return Err(MrfError::Inverse(format!("r_{i}: forward inverse not bracketed")));
            }
        }
        let r = bisect(target, hi, reaches);
        down.push(r);
        next = r;
    }
    down.reverse();
    down.extend(up);
    Ok(RTable { i_min, values: down })
}

// -------------------------------------------------------------- strip times

/// Where a strip crossing ends.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CrossingRule {
    /// First time `d = (r_i + r_{i+1}) / 2`.
    Midpoint,
    /// First time `d = r_i`, i.e. entry into the next strip.
    StripEntry,
}

impl CrossingRule {
    pub fn as_str(self) -> &'static str {
        match self {
            CrossingRule::Midpoint => "midpoint",
            CrossingRule::StripEntry => "strip_entry",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "midpoint" => Some(CrossingRule::Midpoint),
            "strip_entry" => Some(CrossingRule::StripEntry),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StripTimeOptions<T> {
    pub samples_per_strip: usize,
    pub safety_factor: T,
    /// Floor on every `T_i`.
    pub min_strip_time: T,
    pub dt_max: T,
    /// Simulated time after which a start counts as stuck.
    pub hard_cap: T,
    pub seed: u64,
    pub rule: CrossingRule,
}

impl<T: Real> Default for StripTimeOptions<T> {
    fn default() -> Self {
        Self {
            samples_per_strip: 32,
            safety_factor: T::lit(1.5),
            min_strip_time: T::lit(1e-2),
            dt_max: T::lit(1e-2),
            hard_cap: T::lit(1e4),
            seed: 0,
            rule: CrossingRule::Midpoint,
        }
    }
}

/// Open-loop schedule generator of a controllability strategy.
pub type GacController<T> = dyn Fn(&[T]) -> ControlSchedule<T> + Send + Sync;

#[derive(Debug, Clone, PartialEq)]
pub struct StripTimes<T> {
    /// Index of `times[0]`.
    pub first: i32,
    pub times: Vec<T>,
    /// Largest observed crossing time per strip.
    pub observed: Vec<T>,
    pub options: StripTimeOptions<T>,
}

impl<T: Real> StripTimes<T> {
    pub fn last(&self) -> i32 {
        self.first + self.times.len() as i32 - 1
    }

    /// `T_i`; indices outside the estimated range reuse the nearest estimate.
    pub fn t_i(&self, i: i32) -> T {
        let k = (i - self.first).clamp(0, self.times.len() as i32 - 1);
        self.times[k as usize]
    }

    /// `sum_{j=0}^{n} T_{i+j}` (`0` for `n = -1`).
    pub fn cumulative(&self, i: i32, n: i64) -> T {
        (0..=n).fold(T::zero(), |acc, j| acc + self.t_i(i + j as i32))
    }

    /// `T(R) = Tbar_{i(R), max(-1, 1 - i(R))}`; zero for `R <= r_1`.
    pub fn uniform_time(&self, big_r: T, rtable: &RTable<T>) -> Result<T> {
        let i = rtable.strip_index(big_r)?;
        if i >= 2 {
            return Ok(T::zero());
        }
        Ok(self.cumulative(i, (1 - i) as i64))
    }
}

fn strip_seed(seed: u64, i: i32) -> u64 {
    seed ^ (i as i64 as u64).wrapping_add(0x51).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

fn random_direction(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    if dim == 1 {
        return vec![if rng.gen::<bool>() { 1.0 } else { -1.0 }];
    }
    loop {
        let v: Vec<f64> = (0..dim)
            .map(|_| {
                let (a, b): (f64, f64) = (rng.gen::<f64>().max(1e-300), rng.gen());
                (-2.0 * a.ln()).sqrt() * (std::f64::consts::TAU * b).cos()
            })
            .collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// Time for the schedule from `z` to bring `d` down to `level`, with the
/// crossing located by bisection on the last step.
fn crossing_time<T: Real>(
    system: &ControlSystem<T>,
    schedule: &ControlSchedule<T>,
    z: &[T],
    level: T,
    dt: T,
    cap: T,
    strip: i32,
) -> Result<T> {
    let mut x = z.to_vec();
    let mut t = T::zero();
    if system.target_distance(&x) <= level {
        return Ok(t);
    }
    loop {
        if t > cap {
            return Err(MrfError::ControllerInadequate {
                start: z.iter().map(|v| v.to_f64_lossy()).collect(),
                strip,
                cap: cap.to_f64_lossy(),
            });
        }
        let u = schedule.control_at(t).to_vec();
        let x1 = rk4_step(system, &x, &u, dt);
        if x1.iter().any(|v| !v.is_finite()) {
            return Err(MrfError::IntegrationDiverged {
                last_time: t.to_f64_lossy(),
            });
        }
        if system.target_distance(&x1) <= level {
            let h = bisect(T::zero(), dt, |h| {
                system.target_distance(&rk4_step(system, &x, &u, h)) <= level
            });
            return Ok(t + h);
        }
        x = x1;
        t = t + dt;
    }
}

/// Monte-Carlo strip-crossing times: for every strip `i` with both neighbours
/// in the table, `T_i = max(safety_factor * max observed, min_strip_time)`.
/// Starts sit at distance `d` uniform in `[r_i, r_{i-1}]` (plus both ends)
/// from a ball target, in random directions.
pub fn estimate_uniform_times<T: Real>(
    system: &ControlSystem<T>,
    controller: &GacController<T>,
    rtable: &RTable<T>,
    opts: &StripTimeOptions<T>,
) -> Result<StripTimes<T>> {
    let radius = system
        .ball_target_radius()
        .ok_or_else(|| MrfError::Geometry("strip sampling needs a ball target".into()))?;
    if !(opts.safety_factor >= T::one()) {
        return Err(MrfError::InvalidArgument("safety factor must be at least 1".into()));
    }
    let first = rtable.i_min() + 1;
    let last = rtable.i_max() - 1;
    if last < first {
        return Err(MrfError::InvalidArgument("r table too short for strip times".into()));
    }
    let dim = system.state_dim();
    let mut times = Vec::new();
    let mut observed = Vec::new();
    for i in first..=last {
        let (r_next, r_i, r_prev) = (
            rtable.r(i + 1).expect("in table"),
            rtable.r(i).expect("in table"),
            rtable.r(i - 1).expect("in table"),
        );
        let level = match opts.rule {
            CrossingRule::Midpoint => (r_i + r_next) * T::lit(0.5),
            CrossingRule::StripEntry => r_i,
        };
        let dt = opts.dt_max.min(T::lit(0.01) * (r_i - r_next));
        let mut rng = ChaCha8Rng::seed_from_u64(strip_seed(opts.seed, i));
        let mut starts = Vec::with_capacity(opts.samples_per_strip + 2);
        for k in 0..opts.samples_per_strip + 2 {
            let d = match k {
                0 => r_i,
                1 => r_prev,
                _ => r_i + (r_prev - r_i) * T::lit(rng.gen::<f64>()),
            };
            let dir = random_direction(&mut rng, dim);
            starts.push(dir.iter().map(|&c| T::lit(c) * (radius + d)).collect::<Vec<T>>());
        }
        let results: Vec<Result<T>> = starts
            .par_iter()
            .map(|z| {
                let schedule = controller(z);
                crossing_time(system, &schedule, z, level, dt, opts.hard_cap, i)
            })
            .collect();
        let mut max_obs = T::zero();
        for r in results {
            max_obs = max_obs.max(r?);
        }
        observed.push(max_obs);
        times.push((opts.safety_factor * max_obs).max(opts.min_strip_time));
    }
    Ok(StripTimes {
        first,
        times,
        observed,
        options: *opts,
    })
}

// ----------------------------------------------------------------- beta_bar

/// The step function `b(R, t) = r_{i+N-2}` on `(r_i, r_{i-1}] x [Tbar_{i,N-1}, Tbar_{i,N})`.
/// Radii past the end of the table are clamped to the last entry, which
/// only enlarges `b`.
pub fn lemma_step<T: Real>(rtable: &RTable<T>, times: &StripTimes<T>, big_r: T, t: T) -> Result<T> {
    if !(big_r > T::zero()) {
        return Ok(T::zero());
    }
    let r_last = rtable.r(rtable.i_max()).expect("nonempty");
    if big_r <= r_last {
        return Ok(r_last);
    }
    let i = rtable.strip_index(big_r)?;
    if i - 2 < rtable.i_min() {
        let hi = rtable.r(rtable.i_min() + 1).expect("in table");
        return Err(MrfError::Range {
            value: big_r.to_f64_lossy(),
            lo: 0.0,
            hi: hi.to_f64_lossy(),
        });
    }
    let mut acc = T::zero();
    let mut n = 0i32;
    loop {
        acc = acc + times.t_i(i + n);
        if t < acc || i + n - 2 >= rtable.i_max() {
            return Ok(rtable.r_clamped_above(i + n - 2));
        }
        n += 1;
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BetaBarOptions<T> {
    pub n_r: usize,
    pub n_t: usize,
    pub samples: usize,
    pub majorant: MajorantOptions<T>,
}

impl<T: Real> Default for BetaBarOptions<T> {
    fn default() -> Self {
        Self {
            n_r: 96,
            n_t: 256,
            samples: 10_000,
            majorant: MajorantOptions::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct BetaBar<T> {
    pub beta_bar: KlFunction<T>,
    pub r_lo: T,
    pub r_hi: T,
    pub t_max: T,
    pub samples_checked: usize,
    pub min_margin: T,
}

fn sorted_unique<T: Real>(mut v: Vec<T>) -> Vec<T> {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let mut out: Vec<T> = Vec::with_capacity(v.len());
    for x in v {
        match out.last() {
            Some(&p) if x - p <= T::lit(1e-9) * x.abs().max(T::lit(1e-12)) => {}
            _ => out.push(x),
        }
    }
    out
}

/// KL majorant of `max(b, beta)` on `[r_{i_max}, r_hi] x [0, t_max]`, where
/// `t_max` lets every row run through the whole table and lets `beta(1, .)`
/// fall below `r_{i_max}`. Verified on quasi-random samples.
pub fn build_beta_bar<T: Real>(
    beta: &KlFunction<T>,
    rtable: &RTable<T>,
    times: &StripTimes<T>,
    r_hi: T,
    opts: &BetaBarOptions<T>,
) -> Result<BetaBar<T>> {
    let r_lo = rtable.r(rtable.i_max()).expect("nonempty");
    let i_hi = rtable.strip_index(r_hi)?;
    if i_hi - 2 < rtable.i_min() {
        return Err(MrfError::Refinement {
            lo: r_lo.to_f64_lossy(),
            hi: r_hi.to_f64_lossy(),
        });
    }
    let t_strips = times.cumulative(i_hi, (rtable.i_max() - i_hi + 2) as i64);
    let t_beta = beta.inverse_t(r_lo, T::one())?.unwrap_or(T::zero());
    let t_max = t_strips.max(t_beta).max(T::one());
    let g = |r: T, t: T| {
        let b = lemma_step(rtable, times, r, t).unwrap_or(T::infinity());
        b.max(beta.value(r, t))
    };
    let samples = halton_rect(opts.samples, (r_lo, r_hi), (T::zero(), t_max));
    let mut last_failure = None;
    for attempt in 0..2usize {
        let factor = 1 << attempt;
        let mut kr = geometric_ladder(r_lo, r_hi, opts.n_r * factor);
        kr.extend(rtable.values().iter().copied().filter(|&r| r > r_lo && r < r_hi));
        let mut knots_r = vec![T::zero()];
        knots_r.extend(sorted_unique(kr));
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
        let bb = KlFunction::majorize(&g, knots_r, knots_t, mopts)?;
        let mut min_margin = T::infinity();
        let mut failure = None;
        for &(r, t) in &samples {
            let gv = g(r, t);
            let margin = bb.value(r, t) - gv;
            min_margin = min_margin.min(margin);
            if margin < T::zero() && failure.is_none() {
                failure = Some(MrfError::Majorization {
                    r: r.to_f64_lossy(),
                    t: t.to_f64_lossy(),
                    beta: bb.value(r, t).to_f64_lossy(),
                    b: gv.to_f64_lossy(),
                });
            }
        }
        if failure.is_none() {
            return Ok(BetaBar {
                beta_bar: bb,
                r_lo,
                r_hi,
                t_max,
                samples_checked: samples.len(),
                min_margin,
            });
        }
        last_failure = failure;
    }
    Err(last_failure.expect("failure recorded"))
}

// ---------------------------------------------------------------------- ell1

/// `ell_1(R) = R exp(-tau(R))`, `tau` the inverse of `t -> beta_bar(1, t)`
/// extended by `beta_bar(1, 0) - t` to negative times.
#[derive(Debug, Clone)]
pub struct Ell1<T> {
    beta_bar: KlFunction<T>,
    b10: T,
    pub table: MonotoneTable<T>,
}

impl<T: Real> Ell1<T> {
    pub fn beta_bar_1_0(&self) -> T {
        self.b10
    }

    pub fn tau(&self, big_r: T) -> Result<T> {
        if big_r >= self.b10 {
            return Ok(self.b10 - big_r);
        }
        self.beta_bar
            .inverse_t(big_r, T::one())?
            .ok_or_else(|| MrfError::Inverse(format!("tau({big_r})")))
    }

    /// Exact `ell_1(R)` (not interpolated).
    pub fn value(&self, big_r: T) -> Result<T> {
        if !(big_r > T::zero()) {
            return Ok(T::zero());
        }
        Ok(big_r * (-self.tau(big_r)?).exp())
    }
}

/// Tabulates `ell_1` on `ladder` (positive, increasing) plus a `0` knot.
pub fn build_ell1<T: Real>(beta_bar: &KlFunction<T>, ladder: &[T]) -> Result<Ell1<T>> {
    let row: Vec<T> = beta_bar
        .knots_t()
        .iter()
        .map(|&t| beta_bar.value(T::one(), t))
        .collect();
    if row.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(MrfError::InvalidKl(
            "beta_bar(1, .) is not strictly decreasing at the knots".into(),
        ));
    }
    let b10 = beta_bar.value(T::one(), T::zero());
    let mut ell = Ell1 {
        beta_bar: beta_bar.clone(),
        b10,
        table: MonotoneTable::new(vec![T::zero(), T::one()], vec![T::zero(), T::one()])?,
    };
    let mut xs = vec![T::zero()];
    let mut ys = vec![T::zero()];
    for &r in ladder {
        if r > *xs.last().expect("nonempty") {
            xs.push(r);
            ys.push(ell.value(r)?);
        }
    }
    ell.table = MonotoneTable::new(xs, ys)?.with_extrapolation(Extrapolation::Clamp, Extrapolation::Linear);
    Ok(ell)
}

// --------------------------------------------------------------------- kappa

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KappaOptions {
    pub radial: usize,
    pub angular: usize,
}

impl Default for KappaOptions {
    fn default() -> Self {
        Self {
            radial: 64,
            angular: 256,
        }
    }
}

/// Sampled `max{|f(x,u)| : b <= d(x) <= c, u in U}` around a ball target,
/// restricted to the system's domain when it has one.
pub fn max_speed<T: Real>(system: &ControlSystem<T>, b: T, c: T, opts: &KappaOptions) -> Result<T> {
    if !(b > T::zero() && c > b) {
        return Err(MrfError::Precondition("need 0 < b < c".into()));
    }
    let radius = system
        .ball_target_radius()
        .ok_or_else(|| MrfError::Geometry("annulus sampling needs a ball target".into()))?;
    let dim = system.state_dim();
    let mut dirs: Vec<Vec<T>> = Vec::new();
    if dim == 1 {
        dirs.push(vec![T::one()]);
        dirs.push(vec![-T::one()]);
    } else {
        for a in 0..dim {
            for bb in a + 1..dim {
                for k in 0..opts.angular {
                    let th = T::lit(std::f64::consts::TAU * k as f64 / opts.angular as f64);
                    let mut v = vec![T::zero(); dim];
                    v[a] = th.cos();
                    v[bb] = th.sin();
                    dirs.push(v);
                }
            }
        }
    }
    let radii = linear_ladder(b, c, opts.radial.max(2));
    let mut best: Option<T> = None;
    for dir in &dirs {
        for &r in &radii {
            let x: Vec<T> = dir.iter().map(|&v| v * (radius + r)).collect();
            if !system.in_domain(&x) {
                continue;
            }
            for u in system.control_samples() {
                let s = norm(&system.dynamics(&x, u));
                best = Some(best.map_or(s, |m: T| m.max(s)));
            }
        }
    }
    match best {
        Some(m) if m > T::zero() => Ok(m),
        Some(_) => Err(MrfError::Geometry("dynamics vanish on the annulus".into())),
        None => Err(MrfError::Geometry(format!(
            "annulus [{b}, {c}] has no sample in the domain"
        ))),
    }
}

/// `kappa(b, c) = ell_1(b) / M(b, c)`.
pub fn kappa<T: Real>(b: T, c: T, system: &ControlSystem<T>, ell1: &Ell1<T>, opts: &KappaOptions) -> Result<T> {
    Ok(ell1.value(b)? / max_speed(system, b, c, opts)?)
}

// ---------------------------------------------------------------- Phi / Psi

/// `(1/2) sum_{j >= 0} 4^{-j}`.
pub const PHI_CONSTANT: f64 = 2.0 / 3.0;

#[derive(Debug, Clone, PartialEq)]
pub struct PhiPsi<T> {
    /// Piecewise linear, `Phi(0) = 0`, `Phi(r_i) = C d_plus(r_{i-2})`.
    pub phi: MonotoneTable<T>,
    /// `Psi(R) = beta_bar(R + 1, 0) + 2` on a ladder.
    pub psi: MonotoneTable<T>,
    pub samples_checked: usize,
}

/// Builds `Phi` and `Psi`; the majorization `C d_plus(r_{i(R)-2}) <= Phi(R)`
/// is checked on `samples` points of `(r_{i_max}, r_{i_min+2}]`.
pub fn build_phi_psi<T: Real>(
    rtable: &RTable<T>,
    brackets: &BracketPair<T>,
    beta_bar: &KlFunction<T>,
    psi_max: T,
    samples: usize,
) -> Result<PhiPsi<T>> {
    let c = T::lit(PHI_CONSTANT);
    let mut xs = vec![T::zero()];
    let mut ys = vec![T::zero()];
    for i in ((rtable.i_min() + 2)..=rtable.i_max()).rev() {
        xs.push(rtable.r(i).expect("in table"));
        ys.push(c * brackets.d_plus(rtable.r(i - 2).expect("in table")));
    }
    let phi = MonotoneTable::new(xs, ys)?.with_extrapolation(Extrapolation::Proportional, Extrapolation::Linear);
    let lo = rtable.r(rtable.i_max()).expect("nonempty");
    let hi = rtable.r(rtable.i_min() + 2).expect("in table");
    for k in 1..=samples {
        let r = lo + (hi - lo) * T::lit(halton(k as u64, 2));
        if !(r > lo) {
            continue;
        }
        let i = rtable.strip_index(r)?;
        let step = c * brackets.d_plus(rtable.r(i - 2).expect("in table"));
        let v = phi.eval(r)?;
        if v < step {
            return Err(MrfError::Majorization {
                r: r.to_f64_lossy(),
                t: 0.0,
                beta: v.to_f64_lossy(),
                b: step.to_f64_lossy(),
            });
        }
    }
    let mut px = linear_ladder(T::zero(), psi_max, 257);
    let mut k = 1;
    while T::from_usize_lossy(k) < psi_max {
        px.push(T::from_usize_lossy(k));
        k += 1;
    }
    let px = sorted_unique(px);
    let py: Vec<T> = px
        .iter()
        .map(|&r| beta_bar.value(r + T::one(), T::zero()) + T::lit(2.0))
        .collect();
    let psi = MonotoneTable::new(px, py)?.with_extrapolation(Extrapolation::Clamp, Extrapolation::Linear);
    Ok(PhiPsi {
        phi,
        psi,
        samples_checked: samples,
    })
}

// ---------------------------------------------------------------- ell_j

#[derive(Debug, Clone, PartialEq)]
pub struct BumpRecord<T> {
    pub j: usize,
    /// `beta_bar(j, 0)`.
    pub base: T,
    /// `T(j)`.
    pub uniform_time: T,
    pub ell_at_base: T,
    /// `L_j = ell_j(beta_bar(j,0)) T(j) + beta_bar(1,0)`.
    pub big_l: T,
    pub phi_j: T,
    pub kappa_j: T,
    /// `(L_j + Phi(j)) / kappa_j`.
    pub plateau: T,
}

impl<T: Real> BumpRecord<T> {
    /// Trapezoid `rho_j`: zero outside `(base, base+3)`, plateau on `[base+1, base+2]`.
    pub fn rho(&self, r: T) -> T {
        let s = r - self.base;
        if s <= T::zero() || s >= T::lit(3.0) {
            T::zero()
        } else if s < T::one() {
            self.plateau * s
        } else if s <= T::lit(2.0) {
            self.plateau
        } else {
            self.plateau * (T::lit(3.0) - s)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EllOptions<T> {
    /// Smallest positive ladder point.
    pub r_small: T,
    /// Geometric points on `[r_small, 1]`.
    pub small_points: usize,
    /// Linear spacing above `1`.
    pub step: T,
    pub kappa: KappaOptions,
}

impl<T: Real> Default for EllOptions<T> {
    fn default() -> Self {
        Self {
            r_small: T::lit(1e-9),
            small_points: 180,
            step: T::lit(0.02),
            kappa: KappaOptions::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct EllSequence<T> {
    pub ladder: Vec<T>,
    /// `levels[j-1][m] = ell_j(ladder[m])`.
    pub levels: Vec<Vec<T>>,
    pub bumps: Vec<BumpRecord<T>>,
    /// `ell_1` times the running maximum of the bump product; increasing.
    pub ell: MonotoneTable<T>,
}

impl<T: Real> EllSequence<T> {
    pub fn j_max(&self) -> usize {
        self.levels.len()
    }

    pub fn value(&self, r: T) -> T {
        self.ell.eval(r).unwrap_or(T::nan())
    }

    /// `ell` as a comparator usable with closures.
    pub fn ell_fn(&self) -> Arc<dyn Fn(T) -> T + Send + Sync> {
        let table = self.ell.clone();
        Arc::new(move |r| table.eval(r).unwrap_or(T::nan()))
    }
}

fn product_factor<T: Real>(bumps: &[BumpRecord<T>], r: T) -> T {
    bumps.iter().fold(T::one(), |acc, b| acc * (T::one() + b.rho(r)))
}

/// `ell_{j+1} = (1 + rho_j) ell_j` for `j = 1..j_max-1` on a ladder covering
/// `[0, beta_bar(j_max, 0) + 3]` with every bump kink as a node.
#[allow(clippy::too_many_arguments)]
pub fn build_ell_sequence<T: Real>(
    j_max: usize,
    beta_bar: &KlFunction<T>,
    phi: &MonotoneTable<T>,
    times: &StripTimes<T>,
    rtable: &RTable<T>,
    system: &ControlSystem<T>,
    ell1: &Ell1<T>,
    opts: &EllOptions<T>,
) -> Result<EllSequence<T>> {
    if j_max < 2 {
        return Err(MrfError::Precondition("j_max must be at least 2".into()));
    }
    let bases: Vec<T> = (1..=j_max)
        .map(|j| beta_bar.value(T::from_usize_lossy(j), T::zero()))
        .collect();
    let mut bumps: Vec<BumpRecord<T>> = Vec::new();
    for j in 1..j_max {
        let base = bases[j - 1];
        let uniform_time = times.uniform_time(T::from_usize_lossy(j), rtable)?;
        let ell_at_base = ell1.value(base)? * product_factor(&bumps, base);
        let big_l = ell_at_base * uniform_time + ell1.beta_bar_1_0();
        let phi_j = phi.eval(T::from_usize_lossy(j))?;
        let kappa_j = kappa(base + T::one(), base + T::lit(2.0), system, ell1, &opts.kappa)?;
        bumps.push(BumpRecord {
            j,
            base,
            uniform_time,
            ell_at_base,
            big_l,
            phi_j,
            kappa_j,
            plateau: (big_l + phi_j) / kappa_j,
        });
    }
    let top = bases[j_max - 1] + T::lit(3.0);
    let mut pts = geometric_ladder(opts.r_small, T::one(), opts.small_points.max(2));
    let n_lin = ((top - T::one()) / opts.step).ceil().to_usize().unwrap_or(1).max(1) + 1;
    pts.extend(linear_ladder(T::one(), top, n_lin));
    for b in &bumps {
        for k in 0..4 {
            pts.push(b.base + T::from_usize_lossy(k));
        }
    }
    let mut ladder = vec![T::zero()];
    ladder.extend(sorted_unique(pts).into_iter().filter(|&r| r > T::zero()));
    let covered = *ladder.last().expect("nonempty");
    if let Some(b) = bumps.last() {
        if covered < b.base + T::lit(3.0) {
            return Err(MrfError::Refinement {
                lo: 0.0,
                hi: (b.base + T::lit(3.0)).to_f64_lossy(),
            });
        }
    }
    let base_vals: Vec<T> = ladder.iter().map(|&r| ell1.value(r)).collect::<Result<_>>()?;
    let mut levels = Vec::with_capacity(j_max);
    for j in 1..=j_max {
        let used = &bumps[..j - 1];
        levels.push(
            ladder
                .iter()
                .zip(&base_vals)
                .map(|(&r, &v)| v * product_factor(used, r))
                .collect::<Vec<T>>(),
        );
    }
    let mut running = T::one();
    let ys: Vec<T> = ladder
        .iter()
        .zip(&base_vals)
        .map(|(&r, &v)| {
            running = running.max(product_factor(&bumps, r));
            v * running
        })
        .collect();
    let ell = MonotoneTable::new(ladder.clone(), ys)?.with_extrapolation(Extrapolation::Clamp, Extrapolation::Linear);
    Ok(EllSequence {
        ladder,
        levels,
        bumps,
        ell,
    })
}

// ------------------------------------------------------------------------- J

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JParams<T> {
    pub dt: T,
    pub horizon: T,
    pub target_tol: T,
    /// Accumulated values above the cap count as divergent.
    pub cap: T,
}

impl<T: Real> Default for JParams<T> {
    fn default() -> Self {
        Self {
            dt: T::lit(1e-2),
            horizon: T::lit(100.0),
            target_tol: T::lit(1e-6),
            cap: T::lit(1e6),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum JValue<T> {
    Finite {
        value: T,
        exit_time: T,
    },
    /// Divergence marker with the partial integral and the reason.
    Infinite {
        partial: T,
        elapsed: T,
        reason: String,
    },
}

impl<T: Real> JValue<T> {
    pub fn is_finite(&self) -> bool {
        matches!(self, JValue::Finite { .. })
    }

    pub fn value(&self) -> Option<T> {
        match self {
            JValue::Finite { value, .. } => Some(*value),
            JValue::Infinite { .. } => None,
        }
    }
}

/// `J(z, u) = int_0^{T_z(u)} [ell(d(x)) + l(x, u)] dt` along an open-loop schedule.
pub fn evaluate_j<T: Real>(
    system: &ControlSystem<T>,
    ell: &dyn Fn(T) -> T,
    z: &[T],
    schedule: &ControlSchedule<T>,
    params: &JParams<T>,
) -> Result<JValue<T>> {
    let l = system.running_cost_fn();
    let d = system.target_distance_fn();
    let cost = move |x: &[T], u: &[T]| ell(d(x)) + l(x, u);
    let traj = integrate_policy(
        system,
        z,
        |t, _x| Ok(schedule.control_at(t).to_vec()),
        &cost,
        StepParams {
            dt: params.dt,
            horizon: params.horizon,
            target_tol: params.target_tol,
        },
    )?;
    let value = traj.final_cost();
    let elapsed = traj.final_time();
    Ok(match traj.terminal {
        TerminalFlag::ReachedTarget if value <= params.cap => JValue::Finite {
            value,
            exit_time: elapsed,
        },
        TerminalFlag::ReachedTarget => JValue::Infinite {
            partial: value,
            elapsed,
            reason: format!("integral exceeds cap {}", params.cap),
        },
        flag => JValue::Infinite {
            partial: value,
            elapsed,
            reason: flag.as_str().to_string(),
        },
    })
}

// --------------------------------------------------------------- pipeline

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConverseParams<T> {
    pub i_max: i32,
    pub j_max: usize,
    pub strip: StripTimeOptions<T>,
    pub beta_bar: BetaBarOptions<T>,
    pub ell: EllOptions<T>,
    pub phi_samples: usize,
}

impl<T: Real> Default for ConverseParams<T> {
    fn default() -> Self {
        Self {
            i_max: 16,
            j_max: 5,
            strip: StripTimeOptions::default(),
            beta_bar: BetaBarOptions::default(),
            ell: EllOptions::default(),
            phi_samples: 2000,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Converse<T> {
    pub rtable: RTable<T>,
    pub times: StripTimes<T>,
    pub beta_bar: BetaBar<T>,
    pub ell1: Ell1<T>,
    pub phi_psi: PhiPsi<T>,
    pub ell: EllSequence<T>,
    pub params: ConverseParams<T>,
}

/// Runs the whole construction for controllability data `(beta, brackets of W)`
/// and a controller. Simulations use the system without its domain.
pub fn build_converse<T: Real>(
    system: &ControlSystem<T>,
    beta: &KlFunction<T>,
    brackets: &BracketPair<T>,
    controller: &GacController<T>,
    params: &ConverseParams<T>,
) -> Result<Converse<T>> {
    let free = system.clone().without_domain();
    let r_top = T::from_usize_lossy(params.j_max + 1);
    let mut i_min = -1;
    let rtable = loop {
        let table = build_bilateral_sequence(beta, brackets, i_min, params.i_max)?;
        if table.r(i_min + 3).is_some_and(|r| r >= r_top) {
            break table;
        }
        i_min -= 1;
        if i_min < -64 {
            return Err(MrfError::Refinement {
                lo: 0.0,
                hi: r_top.to_f64_lossy(),
            });
        }
    };
    let times = estimate_uniform_times(&free, controller, &rtable, &params.strip)?;
    let beta_bar = build_beta_bar(beta, &rtable, &times, r_top, &params.beta_bar)?;
    let mut ladder = geometric_ladder(params.ell.r_small, T::one(), params.ell.small_points.max(2));
    ladder.extend(linear_ladder(T::one(), r_top * T::lit(2.0), 200).into_iter().skip(1));
    let ell1 = build_ell1(&beta_bar.beta_bar, &ladder)?;
    let phi_psi = build_phi_psi(&rtable, brackets, &beta_bar.beta_bar, r_top, params.phi_samples)?;
    let ell = build_ell_sequence(
        params.j_max,
        &beta_bar.beta_bar,
        &phi_psi.phi,
        &times,
        &rtable,
        &free,
        &ell1,
        &params.ell,
    )?;
    Ok(Converse {
        rtable,
        times,
        beta_bar,
        ell1,
        phi_psi,
        ell,
        params: *params,
    })
}

// ---------------------------------------------------------------------- CSV

/// CSV with `# key: value` header lines, a column row, and one row per entry.
pub fn table_to_csv<T: Real>(meta: &[(&str, String)], columns: &[&str], rows: &[Vec<T>]) -> String {
    let mut out = String::new();
    for (k, v) in meta {
        let _ = writeln!(out, "# {k}: {v}");
    }
    let _ = writeln!(out, "{}", columns.join(","));
    for row in rows {
        let cells: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        let _ = writeln!(out, "{}", cells.join(","));
    }
    out
}

impl<T: Real> Converse<T> {
    /// Parameters shared by every exported table.
    pub fn metadata(&self) -> Vec<(&'static str, String)> {
        let s = &self.params.strip;
        vec![
            ("i_min", self.rtable.i_min().to_string()),
            ("i_max", self.rtable.i_max().to_string()),
            ("j_max", self.params.j_max.to_string()),
            ("samples_per_strip", s.samples_per_strip.to_string()),
            ("safety_factor", format!("{}", s.safety_factor)),
            ("min_strip_time", format!("{}", s.min_strip_time)),
            ("dt_max", format!("{}", s.dt_max)),
            ("hard_cap", format!("{}", s.hard_cap)),
            ("crossing_rule", s.rule.as_str().to_string()),
            ("seed", s.seed.to_string()),
            (
                "beta_bar_knots",
                format!("{}x{}", self.params.beta_bar.n_r, self.params.beta_bar.n_t),
            ),
            ("beta_bar_t_max", format!("{}", self.beta_bar.t_max)),
            ("ell_r_small", format!("{}", self.params.ell.r_small)),
            ("ell_step", format!("{}", self.params.ell.step)),
        ]
    }

    /// `i, r_i, T_i, observed max` (times blank as NaN outside the estimated range).
    pub fn strips_csv(&self) -> String {
        let rows: Vec<Vec<T>> = (self.rtable.i_min()..=self.rtable.i_max())
            .map(|i| {
                let inside = i >= self.times.first && i <= self.times.last();
                let k = (i - self.times.first) as usize;
                vec![
                    T::lit(i as f64),
                    self.rtable.r(i).expect("in table"),
                    if inside { self.times.times[k] } else { T::nan() },
                    if inside { self.times.observed[k] } else { T::nan() },
                ]
            })
            .collect();
        table_to_csv(&self.metadata(), &["i", "r_i", "T_i", "observed_max"], &rows)
    }

    /// `R, ell_1, ell_1..ell_jmax, ell` on the ell ladder.
    pub fn ell_csv(&self) -> String {
        let mut cols: Vec<String> = vec!["R".into()];
        for j in 1..=self.ell.j_max() {
            cols.push(format!("ell_{j}"));
        }
        cols.push("ell".into());
        let col_refs: Vec<&str> = cols.iter().map(|s| s.as_str()).collect();
        let rows: Vec<Vec<T>> = self
            .ell
            .ladder
            .iter()
            .enumerate()
            .map(|(m, &r)| {
                let mut row = vec![r];
                row.extend(self.ell.levels.iter().map(|lv| lv[m]));
                row.push(self.ell.ell.ys()[m]);
                row
            })
            .collect();
        table_to_csv(&self.metadata(), &col_refs, &rows)
    }

    /// `R, Phi(R), Psi(R), T(R)` on the Psi ladder.
    pub fn phi_psi_csv(&self) -> String {
        let rows: Vec<Vec<T>> = self
            .phi_psi
            .psi
            .xs()
            .iter()
            .zip(self.phi_psi.psi.ys())
            .map(|(&r, &p)| {
                let t = if r > T::zero() {
                    self.times.uniform_time(r, &self.rtable).unwrap_or(T::nan())
                } else {
                    T::zero()
                };
                vec![r, self.phi_psi.phi.eval(r).unwrap_or(T::nan()), p, t]
            })
            .collect();
        table_to_csv(&self.metadata(), &["R", "Phi", "Psi", "T"], &rows)
    }

    /// `j, beta_bar(j,0), T(j), ell_j(base), L_j, Phi(j), kappa_j, plateau`.
    pub fn bumps_csv(&self) -> String {
        let rows: Vec<Vec<T>> = self
            .ell
            .bumps
            .iter()
            .map(|b| {
                vec![
                    T::from_usize_lossy(b.j),
                    b.base,
                    b.uniform_time,
                    b.ell_at_base,
                    b.big_l,
                    b.phi_j,
                    b.kappa_j,
                    b.plateau,
                ]
            })
            .collect();
        table_to_csv(
            &self.metadata(),
            &["j", "base", "T_j", "ell_at_base", "L_j", "Phi_j", "kappa_j", "plateau"],
            &rows,
        )
    }
}
