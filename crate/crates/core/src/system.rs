//! Control systems: dynamics, running cost, control samples and target distance.

use std::fmt;
use std::sync::Arc;

use crate::error::{MrfError, Result};
use crate::scalar::{distance, Real};

/// Dynamics `f(x, u)` written into the output slice.
pub type DynamicsFn<T> = Arc<dyn Fn(&[T], &[T], &mut [T]) + Send + Sync>;
/// State/control cost such as the running cost `l(x, u)`.
pub type CostFn<T> = Arc<dyn Fn(&[T], &[T]) -> T + Send + Sync>;
/// State function such as the target distance.
pub type StateFn<T> = Arc<dyn Fn(&[T]) -> T + Send + Sync>;

/// A control-affine-or-not system `x' = f(x, u)` with a finite control sample
/// set, a nonnegative running cost and the distance to a closed target.
#[derive(Clone)]
pub struct ControlSystem<T> {
    name: String,
    state_dim: usize,
    control_samples: Vec<Vec<T>>,
    dynamics: DynamicsFn<T>,
    running_cost: CostFn<T>,
    target_distance: StateFn<T>,
    domain: Option<(Vec<T>, Vec<T>)>,
    lipschitz_hint: Option<T>,
    ball_target_radius: Option<T>,
}

impl<T> fmt::Debug for ControlSystem<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ControlSystem")
            .field("name", &self.name)
            .field("state_dim", &self.state_dim)
            .field("controls", &self.control_samples.len())
            .finish()
    }
}

impl<T: Real> ControlSystem<T> {
    pub fn new(
        name: impl Into<String>,
        state_dim: usize,
        control_samples: Vec<Vec<T>>,
        dynamics: DynamicsFn<T>,
        running_cost: CostFn<T>,
        target_distance: StateFn<T>,
    ) -> Result<Self> {
        if state_dim == 0 {
            return Err(MrfError::InvalidArgument("state dimension must be positive".into()));
        }
        if control_samples.is_empty() {
            return Err(MrfError::InvalidArgument("control sample set is empty".into()));
        }
        let m = control_samples[0].len();
        if control_samples.iter().any(|u| u.len() != m) {
            return Err(MrfError::InvalidArgument(
                "control samples must share one dimension".into(),
            ));
        }
        Ok(Self {
            name: name.into(),
            state_dim,
            control_samples,
            dynamics,
            running_cost,
            target_distance,
            domain: None,
            lipschitz_hint: None,
            ball_target_radius: None,
        })
    }

    /// Computational box; trajectories stop when they leave it.
    pub fn with_domain(mut self, lower: Vec<T>, upper: Vec<T>) -> Self {
        assert_eq!(lower.len(), self.state_dim);
        assert_eq!(upper.len(), self.state_dim);
        self.domain = Some((lower, upper));
        self
    }

    pub fn without_domain(mut self) -> Self {
        self.domain = None;
        self
    }

    pub fn with_lipschitz_hint(mut self, l: T) -> Self {
        self.lipschitz_hint = Some(l);
        self
    }

    /// Declares the target to be the closed ball of this radius around the origin.
    pub fn with_ball_target(mut self, radius: T) -> Self {
        self.ball_target_radius = Some(radius);
        self
    }

    /// Replaces the running cost, keeping everything else.
    pub fn with_running_cost(mut self, cost: CostFn<T>) -> Self {
        self.running_cost = cost;
        self
    }

    pub fn with_control_samples(mut self, samples: Vec<Vec<T>>) -> Result<Self> {
        if samples.is_empty() {
            return Err(MrfError::InvalidArgument("control sample set is empty".into()));
        }
        self.control_samples = samples;
        Ok(self)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn control_dim(&self) -> usize {
        self.control_samples[0].len()
    }

    pub fn control_samples(&self) -> &[Vec<T>] {
        &self.control_samples
    }

    pub fn domain(&self) -> Option<(&[T], &[T])> {
        self.domain.as_ref().map(|(a, b)| (a.as_slice(), b.as_slice()))
    }

    pub fn lipschitz_hint(&self) -> Option<T> {
        self.lipschitz_hint
    }

    pub fn ball_target_radius(&self) -> Option<T> {
        self.ball_target_radius
    }

    #[inline]
    pub fn dynamics_into(&self, x: &[T], u: &[T], out: &mut [T]) {
        (self.dynamics)(x, u, out)
    }

    pub fn dynamics(&self, x: &[T], u: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); self.state_dim];
        (self.dynamics)(x, u, &mut out);
        out
    }

    #[inline]
    pub fn running_cost(&self, x: &[T], u: &[T]) -> T {
        (self.running_cost)(x, u)
    }

    #[inline]
    pub fn target_distance(&self, x: &[T]) -> T {
        (self.target_distance)(x)
    }

    pub fn running_cost_fn(&self) -> CostFn<T> {
        self.running_cost.clone()
    }

    pub fn target_distance_fn(&self) -> StateFn<T> {
        self.target_distance.clone()
    }

    pub fn in_domain(&self, x: &[T]) -> bool {
        match &self.domain {
            None => true,
            Some((lo, hi)) => x.iter().zip(lo.iter().zip(hi)).all(|(&v, (&a, &b))| v >= a && v <= b),
        }
    }

    /// Checks the structural invariants on a set of sample states: nonnegative
    /// running cost and a 1-Lipschitz target distance. Returns one message per
    /// violation.
    pub fn check_invariants(&self, states: &[Vec<T>], tol: T) -> Vec<String> {
        let mut issues = Vec::new();
        for x in states {
            if self.target_distance(x) < T::zero() {
                issues.push(format!("negative target distance at {x:?}"));
            }
            for u in &self.control_samples {
                if self.running_cost(x, u) < T::zero() {
                    issues.push(format!("negative running cost at x={x:?}, u={u:?}"));
                }
            }
        }
        for (i, x) in states.iter().enumerate() {
            for y in &states[i + 1..] {
                let gap = (self.target_distance(x) - self.target_distance(y)).abs();
                if gap > distance(x, y) + tol {
                    issues.push(format!("target distance not 1-Lipschitz between {x:?} and {y:?}"));
                }
            }
        }
        issues
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> ControlSystem<f64> {
        ControlSystem::new(
            "toy",
            1,
            vec![vec![-1.0], vec![1.0]],
            Arc::new(|_x: &[f64], u: &[f64], out: &mut [f64]| out[0] = u[0]),
            Arc::new(|_x: &[f64], _u: &[f64]| 1.0),
            Arc::new(|x: &[f64]| (x[0].abs() - 0.1).max(0.0)),
        )
        .unwrap()
    }

    #[test]
    fn empty_control_set_rejected() {
        let r = ControlSystem::<f64>::new(
            "bad",
            1,
            vec![],
            Arc::new(|_x: &[f64], _u: &[f64], _o: &mut [f64]| {}),
            Arc::new(|_x: &[f64], _u: &[f64]| 0.0),
            Arc::new(|_x: &[f64]| 0.0),
        );
        assert!(r.is_err());
    }

    #[test]
    fn invariants_hold_for_interval_target() {
        let sys = toy();
        let states: Vec<Vec<f64>> = (0..41).map(|k| vec![-2.0 + 0.1 * k as f64]).collect();
        assert!(sys.check_invariants(&states, 1e-12).is_empty());
    }

    #[test]
    fn invariants_flag_non_lipschitz_distance() {
        let sys = toy();
        let sys = ControlSystem::new(
            "steep",
            1,
            sys.control_samples().to_vec(),
            Arc::new(|_x: &[f64], u: &[f64], out: &mut [f64]| out[0] = u[0]),
            Arc::new(|_x: &[f64], _u: &[f64]| 1.0),
            Arc::new(|x: &[f64]| 3.0 * x[0].abs()),
        )
        .unwrap();
        let states = vec![vec![0.0], vec![1.0]];
        assert_eq!(sys.check_invariants(&states, 1e-12).len(), 1);
    }

    #[test]
    fn domain_membership() {
        let sys = toy().with_domain(vec![-2.0], vec![2.0]);
        assert!(sys.in_domain(&[1.5]));
        assert!(!sys.in_domain(&[2.5]));
    }
}
