//! Tabulated class-KL functions.
//!
//! Values are stored on a rectangular `(r, t)` knot grid whose first `r` knot
//! is `0`. Between knots the function is linear in `r` and geometric in `t`
//! (so exponentials in `t` are reproduced exactly); beyond the last `t` knot it
//! decays exponentially and beyond the last `r` knot it continues linearly.

use crate::error::{MrfError, Result};
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq)]
pub struct KlFunction<T> {
    knots_r: Vec<T>,
    knots_t: Vec<T>,
    /// Row-major: `values[i * nt + j]` is the value at `(knots_r[i], knots_t[j])`.
    values: Vec<T>,
    tail_rate: T,
}

fn strictly_increasing<T: Real>(v: &[T]) -> bool {
    v.windows(2).all(|w| w[1] > w[0])
}

/// Index `i` with `xs[i] <= x < xs[i+1]`, clamped to the last segment.
fn segment<T: Real>(xs: &[T], x: T) -> usize {
    let k = xs.partition_point(|&v| v <= x);
    k.saturating_sub(1).min(xs.len().saturating_sub(2))
}

impl<T: Real> KlFunction<T> {
    pub fn new(knots_r: Vec<T>, knots_t: Vec<T>, values: Vec<T>, tail_rate: T) -> Result<Self> {
        if knots_r.len() < 2 || knots_t.len() < 2 {
            return Err(MrfError::InvalidKl("need at least two knots per axis".into()));
        }
        if knots_r[0] != T::zero() || knots_t[0] != T::zero() {
            return Err(MrfError::InvalidKl("first r and t knots must be 0".into()));
        }
        if !strictly_increasing(&knots_r) || !strictly_increasing(&knots_t) {
            return Err(MrfError::InvalidKl("knots must be strictly increasing".into()));
        }
        if values.len() != knots_r.len() * knots_t.len() {
            return Err(MrfError::InvalidKl("node value count does not match knots".into()));
        }
        if !(tail_rate > T::zero()) || !tail_rate.is_finite() {
            return Err(MrfError::InvalidKl("tail rate must be positive".into()));
        }
        let kl = Self {
            knots_r,
            knots_t,
            values,
            tail_rate,
        };
        let issues = kl.check_axioms();
        if let Some(first) = issues.first() {
            return Err(MrfError::InvalidKl(format!("{first} ({} violation(s))", issues.len())));
        }
        Ok(kl)
    }

    /// Tabulates `f` at the knots.
    pub fn from_fn(knots_r: Vec<T>, knots_t: Vec<T>, f: impl Fn(T, T) -> T, tail_rate: T) -> Result<Self> {
        let mut values = Vec::with_capacity(knots_r.len() * knots_t.len());
        for &r in &knots_r {
            for &t in &knots_t {
                values.push(if r == T::zero() { T::zero() } else { f(r, t) });
            }
        }
        Self::new(knots_r, knots_t, values, tail_rate)
    }

    pub fn knots_r(&self) -> &[T] {
        &self.knots_r
    }

    pub fn knots_t(&self) -> &[T] {
        &self.knots_t
    }

    pub fn tail_rate(&self) -> T {
        self.tail_rate
    }

    /// Node value at knot indices `(i, j)`.
    pub fn node(&self, i: usize, j: usize) -> T {
        self.values[i * self.knots_t.len() + j]
    }

    /// KL axioms at the knots: zero row at `r = 0`, strictly increasing in `r`,
    /// strictly decreasing in `t` for `r > 0`, finite positive values.
    pub fn check_axioms(&self) -> Vec<String> {
        let (nr, nt) = (self.knots_r.len(), self.knots_t.len());
        let mut issues = Vec::new();
        for j in 0..nt {
            if self.node(0, j) != T::zero() {
                issues.push(format!("value at r = 0, t = {} is not 0", self.knots_t[j]));
            }
            for i in 1..nr {
                let v = self.node(i, j);
                if !v.is_finite() || !(v > T::zero()) {
                    issues.push(format!("value at knot ({i}, {j}) is not finite and positive"));
                }
                if !(v > self.node(i - 1, j)) {
                    issues.push(format!("not strictly increasing in r at knot ({i}, {j})"));
                }
                if j > 0 && !(v < self.node(i, j - 1)) {
                    issues.push(format!("not strictly decreasing in t at knot ({i}, {j})"));
                }
            }
        }
        issues
    }

    fn row_at(&self, i: usize, t: T) -> T {
        let nt = self.knots_t.len();
        let t_last = self.knots_t[nt - 1];
        if t >= t_last {
            return self.node(i, nt - 1) * (-(self.tail_rate * (t - t_last))).exp();
        }
        let t = t.max(T::zero());
        let j = segment(&self.knots_t, t);
        let (t0, t1) = (self.knots_t[j], self.knots_t[j + 1]);
        let (v0, v1) = (self.node(i, j), self.node(i, j + 1));
        if t == t0 {
            return v0;
        }
        let w = (t - t0) / (t1 - t0);
        if v0 > T::zero() && v1 > T::zero() {
            v0 * (v1 / v0).powf(w)
        } else {
            v0 + (v1 - v0) * w
        }
    }

    /// `beta(r, t)`; negative arguments are clamped to zero.
    pub fn value(&self, r: T, t: T) -> T {
        if !(r > T::zero()) {
            return T::zero();
        }
        let nr = self.knots_r.len();
        let r_last = self.knots_r[nr - 1];
        if r >= r_last {
            let a = self.row_at(nr - 2, t);
            let b = self.row_at(nr - 1, t);
            let slope = (b - a) / (r_last - self.knots_r[nr - 2]);
            return b + slope * (r - r_last);
        }
        let i = segment(&self.knots_r, r);
        let (r0, r1) = (self.knots_r[i], self.knots_r[i + 1]);
        let a = self.row_at(i, t);
        if r == r0 {
            return a;
        }
        let b = self.row_at(i + 1, t);
        a + (b - a) * ((r - r0) / (r1 - r0))
    }

    /// Smallest `r` with `beta(r, t) = y`, by bisection.
    pub fn inverse_r(&self, y: T, t: T) -> Result<T> {
        if y <= T::zero() {
            return Ok(T::zero());
        }
        let mut hi = self.knots_r[self.knots_r.len() - 1];
        let mut doublings = 0;
        while self.value(hi, t) < y {
            hi = hi * T::lit(2.0);
            doublings += 1;
            if doublings > 200 || !hi.is_finite() {
                return Err(MrfError::Inverse(format!("beta(., {t}) never reaches {y}")));
            }
        }
        Ok(bisect(T::zero(), hi, |r| self.value(r, t) >= y))
    }

    /// Time `t >= 0` with `beta(r, t) = y`, or `None` when `y >= beta(r, 0)`.
    pub fn inverse_t(&self, y: T, r: T) -> Result<Option<T>> {
        let v0 = self.value(r, T::zero());
        if y >= v0 {
            return Ok(None);
        }
        if !(y > T::zero()) {
            return Err(MrfError::Inverse("time inverse needs a positive level".into()));
        }
        let mut hi = self.knots_t[self.knots_t.len() - 1].max(T::one());
        let mut doublings = 0;
        while self.value(r, hi) > y {
            hi = hi * T::lit(2.0);
            doublings += 1;
            if doublings > 200 || !hi.is_finite() {
                return Err(MrfError::Inverse(format!("beta({r}, .) never drops to {y}")));
            }
        }
        Ok(Some(bisect(T::zero(), hi, |t| self.value(r, t) <= y)))
    }

    /// Builds a KL majorant of `g` on the knot grid.
    ///
    /// `g(r, .)` must be nonincreasing in `t`, so a cell's supremum is attained
    /// on its left `t` edge; in `r` it is taken over `opts.r_subsamples` points
    /// including both cell ends. Node values are the maximum over the adjacent
    /// cells, made monotone, and scaled by a small strictly monotone factor.
    pub fn majorize(
        g: &(dyn Fn(T, T) -> T + Sync),
        knots_r: Vec<T>,
        knots_t: Vec<T>,
        opts: MajorantOptions<T>,
    ) -> Result<Self> {
        let (nr, nt) = (knots_r.len(), knots_t.len());
        if nr < 2 || nt < 2 {
            return Err(MrfError::InvalidKl("need at least two knots per axis".into()));
        }
        let subs = opts.r_subsamples.max(2);
        // cell_sup[i * (nt-1) + j]: sup of g over [r_i, r_{i+1}] x [t_j, t_{j+1}]
        let mut cell_sup = vec![T::zero(); (nr - 1) * (nt - 1)];
        for i in 0..nr - 1 {
            let (r0, r1) = (knots_r[i], knots_r[i + 1]);
            for j in 0..nt - 1 {
                let t = knots_t[j];
                let mut m = T::zero();
                for s in 0..subs {
                    let w = T::from_usize_lossy(s) / T::from_usize_lossy(subs - 1);
                    let r = if s + 1 == subs { r1 } else { r0 + (r1 - r0) * w };
                    if r > T::zero() {
                        m = m.max(g(r, t));
                    }
                }
                cell_sup[i * (nt - 1) + j] = m;
            }
        }
        let mut values = vec![T::zero(); nr * nt];
        for i in 1..nr {
            for j in 0..nt {
                let mut m = T::zero();
                for ci in [i.wrapping_sub(1), i] {
                    for cj in [j.wrapping_sub(1), j] {
                        if ci < nr - 1 && cj < nt - 1 {
                            m = m.max(cell_sup[ci * (nt - 1) + cj]);
                        }
                    }
                }
                values[i * nt + j] = m;
            }
        }
        for j in 0..nt {
            for i in 2..nr {
                values[i * nt + j] = values[i * nt + j].max(values[(i - 1) * nt + j]);
            }
        }
        for i in 1..nr {
            for j in (0..nt - 1).rev() {
                values[i * nt + j] = values[i * nt + j].max(values[i * nt + j + 1]);
            }
        }
        let floor = values
            .iter()
            .copied()
            .filter(|&v| v > T::zero())
            .fold(T::infinity(), T::min);
        let floor = if floor.is_finite() { floor } else { T::one() };
        let t_last = knots_t[nt - 1];
        let eta = opts.strict_eta;
        for i in 1..nr {
            for j in 0..nt {
                let fr = T::from_usize_lossy(i) / T::from_usize_lossy(nr - 1);
                let ft = (-(knots_t[j] / t_last)).exp();
                let v = values[i * nt + j];
                values[i * nt + j] = v * (T::one() + eta * fr) * (T::one() + eta * ft) + eta * floor * fr * ft;
            }
        }
        let dt = t_last - knots_t[nt - 2];
        let mut rate = T::infinity();
        for i in 1..nr {
            let (a, b) = (values[i * nt + nt - 2], values[i * nt + nt - 1]);
            if a > T::zero() && b > T::zero() {
                rate = rate.min((a / b).ln() / dt);
            }
        }
        let floor = T::lit(1e-3) / t_last;
        let rate = if rate.is_finite() { rate.max(floor) } else { floor };
        Self::new(knots_r, knots_t, values, rate)
    }
}

/// Parameters of [`KlFunction::majorize`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MajorantOptions<T> {
    pub r_subsamples: usize,
    /// Relative size of the strictly monotone factor applied to every node.
    pub strict_eta: T,
}

impl<T: Real> Default for MajorantOptions<T> {
    fn default() -> Self {
        Self {
            r_subsamples: 16,
            strict_eta: T::lit(1e-6),
        }
    }
}

/// Bisection for the boundary of a monotone predicate: `pred(lo)` false,
/// `pred(hi)` true. Returns the smallest point found with `pred` true.
pub fn bisect<T: Real>(mut lo: T, mut hi: T, pred: impl Fn(T) -> bool) -> T {
    if pred(lo) {
        return lo;
    }
    for _ in 0..200 {
        let mid = lo + (hi - lo) * T::lit(0.5);
        if mid <= lo || mid >= hi {
            break;
        }
        if pred(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

/// Radical inverse of `index` in `base` (Halton / van der Corput).
pub fn halton(mut index: u64, base: u64) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    while index > 0 {
        f /= base as f64;
        r += f * (index % base) as f64;
        index /= base;
    }
    r
}

/// `n` points of the 2D Halton sequence (bases 2 and 3) mapped to a rectangle.
pub fn halton_rect<T: Real>(n: usize, r: (T, T), t: (T, T)) -> Vec<(T, T)> {
    (1..=n as u64)
        .map(|k| {
            let a = T::lit(halton(k, 2));
            let b = T::lit(halton(k, 3));
            (r.0 + (r.1 - r.0) * a, t.0 + (t.1 - t.0) * b)
        })
        .collect()
}
