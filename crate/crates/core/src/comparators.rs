//! The comparison functions `p0` and `gamma` of the decrease condition, and
//! the builtin registry used by configuration files.

use std::fmt;
use std::sync::Arc;

use crate::error::{MrfError, Result};
use crate::scalar::Real;
use crate::tables::MonotoneTable;

/// A monotone scalar function given either as a closure or as a table.
#[derive(Clone)]
pub enum MonotoneFn<T> {
    Closure {
        label: String,
        f: Arc<dyn Fn(T) -> T + Send + Sync>,
    },
    Table(MonotoneTable<T>),
}

impl<T> fmt::Debug for MonotoneFn<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MonotoneFn::Closure { label, .. } => write!(f, "Closure({label})"),
            MonotoneFn::Table(t) => write!(f, "Table({} knots)", t.xs().len()),
        }
    }
}

impl<T: Real> MonotoneFn<T> {
    pub fn closure(label: impl Into<String>, f: impl Fn(T) -> T + Send + Sync + 'static) -> Self {
        MonotoneFn::Closure {
            label: label.into(),
            f: Arc::new(f),
        }
    }

    pub fn constant(c: T) -> Self {
        Self::closure(format!("const({c})"), move |_| c)
    }

    pub fn label(&self) -> String {
        match self {
            MonotoneFn::Closure { label, .. } => label.clone(),
            MonotoneFn::Table(t) => format!("table[{}]", t.len()),
        }
    }

    /// Evaluates the function; table lookups outside the covered range are
    /// reported as [`MrfError::RangeExtension`].
    pub fn eval(&self, v: T) -> Result<T> {
        match self {
            MonotoneFn::Closure { f, .. } => Ok(f(v)),
            MonotoneFn::Table(t) => t.eval(v).map_err(|_| {
                let (lo, hi) = t.domain();
                MrfError::RangeExtension {
                    value: v.to_f64_lossy(),
                    lo: lo.to_f64_lossy(),
                    hi: hi.to_f64_lossy(),
                }
            }),
        }
    }

    /// Covered argument range for tables; closures cover everything.
    pub fn domain(&self) -> Option<(T, T)> {
        match self {
            MonotoneFn::Closure { .. } => None,
            MonotoneFn::Table(t) => Some(t.domain()),
        }
    }

    pub fn covers(&self, lo: T, hi: T) -> bool {
        match self.domain() {
            None => true,
            Some((a, b)) => a <= lo && hi <= b,
        }
    }
}

/// The pair `(p0, gamma)` appearing in the decrease condition
/// `H(x, p0(W), dW) <= -gamma(W)`.
#[derive(Debug, Clone)]
pub struct ComparatorPair<T> {
    pub p0: MonotoneFn<T>,
    pub gamma: MonotoneFn<T>,
}

/// Outcome of [`ComparatorPair::validate`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ComparatorCheck {
    pub errors: Vec<String>,
    pub warnings: Vec<String>,
}

impl ComparatorCheck {
    pub fn is_valid(&self) -> bool {
        self.errors.is_empty()
    }
}

impl<T: Real> ComparatorPair<T> {
    pub fn new(p0: MonotoneFn<T>, gamma: MonotoneFn<T>) -> Self {
        Self { p0, gamma }
    }

    pub fn p0(&self, v: T) -> Result<T> {
        self.p0.eval(v)
    }

    pub fn gamma(&self, v: T) -> Result<T> {
        self.gamma.eval(v)
    }

    /// Checks `p0` in `[0, 1]` and nondecreasing, `gamma` positive and
    /// increasing on the sampled arguments. A `gamma` that is constant on the
    /// samples is accepted with a warning.
    pub fn validate(&self, samples: &[T]) -> ComparatorCheck {
        let mut check = ComparatorCheck::default();
        let mut prev: Option<(T, T, T)> = None;
        let mut gamma_strict = true;
        for &v in samples {
            let (p, g) = match (self.p0.eval(v), self.gamma.eval(v)) {
                (Ok(p), Ok(g)) => (p, g),
                (Err(e), _) | (_, Err(e)) => {
                    check.errors.push(format!("evaluation failed at {v}: {e}"));
                    continue;
                }
            };
            if p < T::zero() || p > T::one() || !p.is_finite() {
                check.errors.push(format!("p0({v}) = {p} outside [0, 1]"));
            }
            if !(g > T::zero()) || !g.is_finite() {
                check.errors.push(format!("gamma({v}) = {g} is not positive"));
            }
            if let Some((pv, pp, pg)) = prev {
                if v > pv {
                    if p < pp {
                        check.errors.push(format!("p0 decreases between {pv} and {v}"));
                    }
                    if g < pg {
                        check.errors.push(format!("gamma decreases between {pv} and {v}"));
                    } else if g <= pg {
                        gamma_strict = false;
                    }
                }
            }
            prev = Some((v, p, g));
        }
        if !gamma_strict {
            check
                .warnings
                .push("gamma is not strictly increasing on the samples (constant-rate certificate)".into());
        }
        check
    }
}

/// Names accepted by [`builtin_p0`].
pub const P0_NAMES: &[&str] = &["one", "half", "sqrt_cap", "linear_cap"];
/// Names accepted by [`builtin_gamma`].
pub const GAMMA_NAMES: &[&str] = &[
    "saturating",
    "saturating_tiny",
    "linear",
    "square",
    "half_saturating",
    "const_half",
];

/// Builtin `p0` functions: `one` (1), `half` (1/2), `sqrt_cap` (min(1, sqrt v)),
/// `linear_cap` (min(1, v)).
pub fn builtin_p0<T: Real>(name: &str) -> Option<MonotoneFn<T>> {
    let f = match name {
        "one" => MonotoneFn::closure("one", |_| T::one()),
        "half" => MonotoneFn::closure("half", |_| T::lit(0.5)),
        "sqrt_cap" => MonotoneFn::closure("sqrt_cap", |v: T| v.max(T::zero()).sqrt().min(T::one())),
        "linear_cap" => MonotoneFn::closure("linear_cap", |v: T| v.max(T::zero()).min(T::one())),
        _ => return None,
    };
    Some(f)
}

/// Builtin `gamma` functions: `saturating` (v/(1+v)), `saturating_tiny`
/// (1e-9 v/(1+v)), `linear` (v), `square` (v^2), `half_saturating`
/// (v/(2(1+v))), `const_half` (1/2).
pub fn builtin_gamma<T: Real>(name: &str) -> Option<MonotoneFn<T>> {
    let f = match name {
        "saturating" => MonotoneFn::closure("saturating", |v: T| v / (T::one() + v)),
        "saturating_tiny" => MonotoneFn::closure("saturating_tiny", |v: T| T::lit(1e-9) * v / (T::one() + v)),
        "linear" => MonotoneFn::closure("linear", |v: T| v),
        "square" => MonotoneFn::closure("square", |v: T| v * v),
        "half_saturating" => MonotoneFn::closure("half_saturating", |v: T| v / (T::lit(2.0) * (T::one() + v))),
        "const_half" => MonotoneFn::closure("const_half", |_| T::lit(0.5)),
        _ => return None,
    };
    Some(f)
}
