//! Sample-and-hold trajectories: fixed-step RK4 for the state with trapezoidal
//! accumulation of the running cost.

use crate::error::{MrfError, Result};
use crate::scalar::Real;
use crate::system::ControlSystem;

/// Why an integration stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TerminalFlag {
    ReachedTarget,
    HorizonExhausted,
    LeftDomain,
}

impl TerminalFlag {
    pub fn as_str(self) -> &'static str {
        match self {
            TerminalFlag::ReachedTarget => "reached-target",
            TerminalFlag::HorizonExhausted => "horizon-exhausted",
            TerminalFlag::LeftDomain => "left-domain",
        }
    }
}

/// State path, piecewise-constant controls and accumulated cost.
///
/// `controls[k]` is held on `[times[k], times[k+1])`. After the last sample the
/// state and cost are frozen.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<T> {
    pub times: Vec<T>,
    pub states: Vec<Vec<T>>,
    pub controls: Vec<Vec<T>>,
    pub accumulated_cost: Vec<T>,
    pub terminal: TerminalFlag,
}

impl<T: Real> Trajectory<T> {
    pub fn start(z: Vec<T>) -> Self {
        Self {
            times: vec![T::zero()],
            states: vec![z],
            controls: Vec::new(),
            accumulated_cost: vec![T::zero()],
            terminal: TerminalFlag::HorizonExhausted,
        }
    }

    pub fn push(&mut self, t: T, x: Vec<T>, u: Vec<T>, cost: T) {
        self.times.push(t);
        self.states.push(x);
        self.controls.push(u);
        self.accumulated_cost.push(cost);
    }

    pub fn final_time(&self) -> T {
        *self.times.last().expect("trajectory has a start sample")
    }

    pub fn final_state(&self) -> &[T] {
        self.states.last().expect("trajectory has a start sample")
    }

    pub fn final_cost(&self) -> T {
        *self.accumulated_cost.last().expect("trajectory has a start sample")
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Appends another trajectory whose first sample coincides with our last one.
    pub fn extend_from(&mut self, other: &Trajectory<T>) {
        let t0 = self.final_time();
        let c0 = self.final_cost();
        for k in 1..other.times.len() {
            self.times.push(t0 + other.times[k]);
            self.states.push(other.states[k].clone());
            self.controls.push(other.controls[k - 1].clone());
            self.accumulated_cost.push(c0 + other.accumulated_cost[k]);
        }
        self.terminal = other.terminal;
    }
}

/// Piecewise-constant open-loop control: `controls[k]` applies from
/// `breaks[k]` until the next break.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlSchedule<T> {
    breaks: Vec<T>,
    controls: Vec<Vec<T>>,
}

impl<T: Real> ControlSchedule<T> {
    pub fn new(breaks: Vec<T>, controls: Vec<Vec<T>>) -> Result<Self> {
        if breaks.is_empty() || breaks.len() != controls.len() || breaks[0] != T::zero() {
            return Err(MrfError::InvalidArgument(
                "schedule needs matching breaks/controls starting at t = 0".into(),
            ));
        }
        if breaks.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(MrfError::InvalidArgument(
                "schedule breaks must be strictly increasing".into(),
            ));
        }
        Ok(Self { breaks, controls })
    }

    pub fn constant(u: Vec<T>) -> Self {
        Self {
            breaks: vec![T::zero()],
            controls: vec![u],
        }
    }

    pub fn control_at(&self, t: T) -> &[T] {
        let k = self.breaks.partition_point(|&b| b <= t).max(1) - 1;
        &self.controls[k]
    }
}

/// Integration controls shared by the trajectory routines.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepParams<T> {
    pub dt: T,
    pub horizon: T,
    pub target_tol: T,
}

fn axpy<T: Real>(x: &[T], a: T, k: &[T], out: &mut [T]) {
    for i in 0..x.len() {
        out[i] = x[i] + a * k[i];
    }
}

/// One classical RK4 step of `x' = f(x, u)` with `u` held constant.
pub fn rk4_step<T: Real>(system: &ControlSystem<T>, x: &[T], u: &[T], h: T) -> Vec<T> {
    let n = x.len();
    let two = T::lit(2.0);
    let half = T::lit(0.5);
    let mut k1 = vec![T::zero(); n];
    let mut k2 = vec![T::zero(); n];
    let mut k3 = vec![T::zero(); n];
    let mut k4 = vec![T::zero(); n];
    let mut tmp = vec![T::zero(); n];
    system.dynamics_into(x, u, &mut k1);
    axpy(x, half * h, &k1, &mut tmp);
    system.dynamics_into(&tmp, u, &mut k2);
    axpy(x, half * h, &k2, &mut tmp);
    system.dynamics_into(&tmp, u, &mut k3);
    axpy(x, h, &k3, &mut tmp);
    system.dynamics_into(&tmp, u, &mut k4);
    (0..n)
        .map(|i| x[i] + h / T::lit(6.0) * (k1[i] + two * k2[i] + two * k3[i] + k4[i]))
        .collect()
}

/// Trapezoidal cost increment over a step from `x0` to `x1` under `u`.
#[inline]
pub fn trapezoid_increment<T: Real>(cost: &dyn Fn(&[T], &[T]) -> T, x0: &[T], x1: &[T], u: &[T], h: T) -> T {
    T::lit(0.5) * h * (cost(x0, u) + cost(x1, u))
}

/// Integrates a sample-and-hold feedback `policy(t, x)` (evaluated at the start
/// of every step) with running cost `cost`.
pub fn integrate_policy<T: Real>(
    system: &ControlSystem<T>,
    z: &[T],
    mut policy: impl FnMut(T, &[T]) -> Result<Vec<T>>,
    cost: &dyn Fn(&[T], &[T]) -> T,
    params: StepParams<T>,
) -> Result<Trajectory<T>> {
    if z.len() != system.state_dim() {
        return Err(MrfError::InvalidArgument("start point has wrong dimension".into()));
    }
    if !(params.dt > T::zero()) || !(params.dt < params.horizon) {
        return Err(MrfError::Precondition("need 0 < dt < horizon".into()));
    }
    if system.target_distance(z) <= params.target_tol {
        return Err(MrfError::Precondition(
            "start point already lies in the target band".into(),
        ));
    }
    let mut traj = Trajectory::start(z.to_vec());
    let mut x = z.to_vec();
    let mut cost_acc = T::zero();
    let mut t = T::zero();
    let mut k = 0usize;
    loop {
        let remaining = params.horizon - t;
        if remaining <= params.dt * T::lit(1e-9) {
            traj.terminal = TerminalFlag::HorizonExhausted;
            return Ok(traj);
        }
        let h = params.dt.min(remaining);
        let u = policy(t, &x)?;
        let x_new = rk4_step(system, &x, &u, h);
        if x_new.iter().any(|v| !v.is_finite()) {
            return Err(MrfError::IntegrationDiverged {
                last_time: t.to_f64_lossy(),
            });
        }
        let inc = trapezoid_increment(cost, &x, &x_new, &u, h);
        cost_acc = cost_acc + inc;
        k += 1;
        t = if h < params.dt {
            params.horizon
        } else {
            params.dt * T::from_usize_lossy(k)
        };
        x = x_new;
        traj.push(t, x.clone(), u, cost_acc);
        if system.target_distance(&x) <= params.target_tol {
            traj.terminal = TerminalFlag::ReachedTarget;
            return Ok(traj);
        }
        if !system.in_domain(&x) {
            traj.terminal = TerminalFlag::LeftDomain;
            return Ok(traj);
        }
    }
}

/// Integrates an open-loop piecewise-constant schedule with the system's own
/// running cost.
pub fn integrate_trajectory<T: Real>(
    system: &ControlSystem<T>,
    z: &[T],
    schedule: &ControlSchedule<T>,
    dt: T,
    horizon: T,
    target_tol: T,
) -> Result<Trajectory<T>> {
    let cost = system.running_cost_fn();
    integrate_policy(
        system,
        z,
        |t, _x| Ok(schedule.control_at(t).to_vec()),
        &*cost,
        StepParams {
            dt,
            horizon,
            target_tol,
        },
    )
}
