//! Monotone lookup tables with linear interpolation and bisection inverses.

use crate::error::{MrfError, Result};
use crate::scalar::Real;

/// Behaviour of a [`MonotoneTable`] outside its knot range.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Extrapolation {
    /// Out-of-range queries are errors.
    Error,
    /// Hold the end value.
    Clamp,
    /// Continue the end segment linearly.
    Linear,
    /// Scale the end value proportionally, `y_end * x / x_end`. Below the
    /// table this tends to zero at the origin.
    Proportional,
}

/// Piecewise-linear table `x -> y` over strictly increasing knots with
/// nondecreasing values.
#[derive(Debug, Clone, PartialEq)]
pub struct MonotoneTable<T> {
    xs: Vec<T>,
    ys: Vec<T>,
    below: Extrapolation,
    above: Extrapolation,
}

impl<T> MonotoneTable<T> {
    pub fn xs(&self) -> &[T] {
        &self.xs
    }

    pub fn ys(&self) -> &[T] {
        &self.ys
    }

    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }
}

impl<T: Real> MonotoneTable<T> {
    pub fn new(xs: Vec<T>, ys: Vec<T>) -> Result<Self> {
        if xs.is_empty() || xs.len() != ys.len() {
            return Err(MrfError::InvalidArgument(
                "table needs equal, nonzero numbers of knots and values".into(),
            ));
        }
        for w in xs.windows(2) {
            if !(w[1] > w[0]) {
                return Err(MrfError::InvalidArgument(
                    "table knots must be strictly increasing".into(),
                ));
            }
        }
        for w in ys.windows(2) {
            if w[1] < w[0] {
                return Err(MrfError::InvalidArgument("table values must be nondecreasing".into()));
            }
        }
        if xs.iter().chain(&ys).any(|v| !v.is_finite()) {
            return Err(MrfError::InvalidArgument("table entries must be finite".into()));
        }
        Ok(Self {
            xs,
            ys,
            below: Extrapolation::Error,
            above: Extrapolation::Error,
        })
    }

    /// Tabulates `f` at the given knots.
    pub fn from_fn(xs: Vec<T>, f: impl Fn(T) -> T) -> Result<Self> {
        let ys = xs.iter().map(|&x| f(x)).collect();
        Self::new(xs, ys)
    }

    pub fn with_extrapolation(mut self, below: Extrapolation, above: Extrapolation) -> Self {
        self.below = below;
        self.above = above;
        self
    }

    pub fn domain(&self) -> (T, T) {
        (self.xs[0], self.xs[self.xs.len() - 1])
    }

    pub fn is_strictly_increasing(&self) -> bool {
        self.ys.windows(2).all(|w| w[1] > w[0])
    }

    fn range_error(&self, x: T) -> MrfError {
        let (lo, hi) = self.domain();
        MrfError::Range {
            value: x.to_f64_lossy(),
            lo: lo.to_f64_lossy(),
            hi: hi.to_f64_lossy(),
        }
    }

    pub fn eval(&self, x: T) -> Result<T> {
        let n = self.xs.len();
        let (lo, hi) = self.domain();
        if x < lo {
            return match self.below {
                Extrapolation::Error => Err(self.range_error(x)),
                Extrapolation::Clamp => Ok(self.ys[0]),
                Extrapolation::Proportional => Ok(if lo > T::zero() {
                    self.ys[0] * x.max(T::zero()) / lo
                } else {
                    self.ys[0]
                }),
                Extrapolation::Linear => Ok(self.ys[0] + self.slope(0) * (x - lo)),
            };
        }
        if x > hi {
            return match self.above {
                Extrapolation::Error => Err(self.range_error(x)),
                Extrapolation::Clamp => Ok(self.ys[n - 1]),
                Extrapolation::Proportional => Ok(if hi > T::zero() {
                    self.ys[n - 1] * x / hi
                } else {
                    self.ys[n - 1]
                }),
                Extrapolation::Linear => Ok(self.ys[n - 1] + self.slope(n.saturating_sub(2)) * (x - hi)),
            };
        }
        if n == 1 {
            return Ok(self.ys[0]);
        }
        let i = self.segment(x);
        let (x0, x1) = (self.xs[i], self.xs[i + 1]);
        if x == x0 {
            return Ok(self.ys[i]);
        }
        if x == x1 {
            return Ok(self.ys[i + 1]);
        }
        let w = (x - x0) / (x1 - x0);
        Ok(self.ys[i] + (self.ys[i + 1] - self.ys[i]) * w)
    }

    fn slope(&self, i: usize) -> T {
        if self.xs.len() < 2 {
            return T::zero();
        }
        (self.ys[i + 1] - self.ys[i]) / (self.xs[i + 1] - self.xs[i])
    }

    /// Index `i` with `xs[i] <= x <= xs[i+1]`, found by bisection.
    fn segment(&self, x: T) -> usize {
        let n = self.xs.len();
        let (mut lo, mut hi) = (0usize, n - 1);
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if self.xs[mid] <= x {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    }

    /// Smallest `x` with `eval(x) >= y`, computed by bisection over the rows and
    /// a linear solve inside the bracketing segment. Requires strictly
    /// increasing values on the segments that are crossed.
    pub fn inverse(&self, y: T) -> Result<T> {
        let n = self.ys.len();
        let (y_lo, y_hi) = (self.ys[0], self.ys[n - 1]);
        let inv_err = |side: &str| {
            MrfError::Inverse(format!(
                "value {} {side} table range [{}, {}]",
                y.to_f64_lossy(),
                y_lo.to_f64_lossy(),
                y_hi.to_f64_lossy()
            ))
        };
        if y < y_lo {
            let x0 = self.xs[0];
            return match self.below {
                Extrapolation::Proportional if y_lo > T::zero() && x0 > T::zero() => Ok(x0 * y.max(T::zero()) / y_lo),
                Extrapolation::Linear if self.slope(0) > T::zero() => Ok(x0 + (y - y_lo) / self.slope(0)),
                _ => Err(inv_err("below")),
            };
        }
        if y > y_hi {
            let x1 = self.xs[n - 1];
            return match self.above {
                Extrapolation::Proportional if y_hi > T::zero() => Ok(x1 * y / y_hi),
                Extrapolation::Linear if n >= 2 && self.slope(n - 2) > T::zero() => {
                    Ok(x1 + (y - y_hi) / self.slope(n - 2))
                }
                _ => Err(inv_err("above")),
            };
        }
        if n == 1 || y <= y_lo {
            return Ok(self.xs[0]);
        }
        let (mut lo, mut hi) = (0usize, n - 1);
        // invariant: ys[lo] < y <= ys[hi]
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if self.ys[mid] < y {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let (y0, y1) = (self.ys[lo], self.ys[hi]);
        if y == y1 {
            return Ok(self.xs[hi]);
        }
        let w = (y - y0) / (y1 - y0);
        Ok(self.xs[lo] + (self.xs[hi] - self.xs[lo]) * w)
    }
}

/// `n` points spaced geometrically from `lo` to `hi` (both positive).
pub fn geometric_ladder<T: Real>(lo: T, hi: T, n: usize) -> Vec<T> {
    assert!(lo > T::zero() && hi > lo && n >= 2);
    let ratio = (hi / lo).ln() / T::from_usize_lossy(n - 1);
    (0..n)
        .map(|k| {
            if k == n - 1 {
                hi
            } else {
                lo * (ratio * T::from_usize_lossy(k)).exp()
            }
        })
        .collect()
}

/// `n` points spaced uniformly from `lo` to `hi`.
pub fn linear_ladder<T: Real>(lo: T, hi: T, n: usize) -> Vec<T> {
    assert!(n >= 2);
    let step = (hi - lo) / T::from_usize_lossy(n - 1);
    (0..n)
        .map(|k| {
            if k == n - 1 {
                hi
            } else {
                lo + step * T::from_usize_lossy(k)
            }
        })
        .collect()
}
