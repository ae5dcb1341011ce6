//! Checks that a candidate field is a minimum restraint function: structure,
//! bracket functions, the decrease condition, the integrability condition and
//! the minimum-time bound.

use crate::comparators::{ComparatorPair, MonotoneFn};
use crate::error::{MrfError, Result};
use crate::grid::GridField;
use crate::hjb::{one_step_residual, ResidualField};
use crate::scalar::Real;
use crate::system::ControlSystem;
use crate::tables::{Extrapolation, MonotoneTable};

// ---------------------------------------------------------------- structure

/// Options of [`check_structure`].
#[derive(Debug, Clone, PartialEq)]
pub struct StructureOptions<T> {
    /// Largest value tolerated on target nodes.
    pub band_tol: T,
    /// Levels whose sublevel sets must stay off the box boundary.
    pub levels: Vec<T>,
}

impl<T: Real> Default for StructureOptions<T> {
    fn default() -> Self {
        Self {
            band_tol: T::lit(1e-12),
            levels: vec![T::lit(0.5), T::lit(0.9)],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StructureReport<T> {
    pub positive_definite: bool,
    pub vanishes_on_target: bool,
    pub proper: bool,
    pub finite: bool,
    /// Off-target nodes with `W <= 0`.
    pub nonpositive_nodes: Vec<usize>,
    /// Target nodes with `W > band_tol`.
    pub nonzero_target_nodes: Vec<usize>,
    /// `(level, boundary node)` pairs where a sublevel set reaches the box face.
    pub boundary_witnesses: Vec<(T, usize)>,
    pub non_finite_nodes: Vec<usize>,
    pub levels: Vec<T>,
}

impl<T> StructureReport<T> {
    pub fn pass(&self) -> bool {
        self.positive_definite && self.vanishes_on_target && self.proper && self.finite
    }
}

/// Positive definiteness, vanishing on the target band and the properness
/// surrogate (sublevel sets kept away from the box faces).
pub fn check_structure<T: Real>(w: &GridField<T>, target_tol: T, opts: &StructureOptions<T>) -> StructureReport<T> {
    let vals = w.values();
    let dist = w.distances();
    let non_finite_nodes = w.non_finite_nodes();
    let nonpositive_nodes: Vec<usize> = (0..w.len())
        .filter(|&i| dist[i] > target_tol && !(vals[i] > T::zero()))
        .collect();
    let nonzero_target_nodes: Vec<usize> = (0..w.len())
        .filter(|&i| w.mask()[i] && !(vals[i] <= opts.band_tol))
        .collect();
    let mut boundary_witnesses = Vec::new();
    for &level in &opts.levels {
        if let Some(i) = (0..w.len()).find(|&i| w.shape().is_boundary_node(i) && vals[i] <= level) {
            boundary_witnesses.push((level, i));
        }
    }
    StructureReport {
        positive_definite: nonpositive_nodes.is_empty(),
        vanishes_on_target: nonzero_target_nodes.is_empty(),
        proper: boundary_witnesses.is_empty(),
        finite: non_finite_nodes.is_empty(),
        nonpositive_nodes,
        nonzero_target_nodes,
        boundary_witnesses,
        non_finite_nodes,
        levels: opts.levels.clone(),
    }
}

// ----------------------------------------------------------------- brackets

/// Per-row perturbation that makes the bracket tables strictly increasing.
pub const BRACKET_EPS: f64 = 1e-12;

/// Monotone functions `d_minus <= W <= d_plus` of the target distance.
#[derive(Debug, Clone, PartialEq)]
pub struct BracketPair<T> {
    pub d_minus: MonotoneTable<T>,
    pub d_plus: MonotoneTable<T>,
    pub warnings: Vec<String>,
}

impl<T: Real> BracketPair<T> {
    /// Both tables must be strictly increasing; extrapolation is
    /// proportional towards zero and linear above.
    pub fn from_tables(d_minus: MonotoneTable<T>, d_plus: MonotoneTable<T>) -> Result<Self> {
        if !d_minus.is_strictly_increasing() || !d_plus.is_strictly_increasing() {
            return Err(MrfError::InvalidArgument(
                "bracket tables must be strictly increasing".into(),
            ));
        }
        Ok(Self {
            d_minus: d_minus.with_extrapolation(Extrapolation::Proportional, Extrapolation::Linear),
            d_plus: d_plus.with_extrapolation(Extrapolation::Proportional, Extrapolation::Linear),
            warnings: Vec::new(),
        })
    }

    /// `d_minus = d_plus = identity`.
    pub fn identity() -> Self {
        let t = MonotoneTable::new(vec![T::one(), T::lit(2.0)], vec![T::one(), T::lit(2.0)])
            .expect("valid table")
            .with_extrapolation(Extrapolation::Proportional, Extrapolation::Proportional);
        Self {
            d_minus: t.clone(),
            d_plus: t,
            warnings: Vec::new(),
        }
    }

    pub fn d_minus(&self, r: T) -> T {
        self.d_minus.eval(r).unwrap_or(T::nan())
    }

    pub fn d_plus(&self, r: T) -> T {
        self.d_plus.eval(r).unwrap_or(T::nan())
    }

    pub fn d_minus_inv(&self, v: T) -> Result<T> {
        self.d_minus.inverse(v)
    }

    pub fn d_plus_inv(&self, v: T) -> Result<T> {
        self.d_plus.inverse(v)
    }

    /// Radius range covered by the tables (without extrapolation).
    pub fn domain(&self) -> (T, T) {
        let (a, b) = self.d_minus.domain();
        let (c, d) = self.d_plus.domain();
        (a.max(c), b.min(d))
    }

    /// Checks `d_minus(d(x)) <= W(x) <= d_plus(d(x))` at every unsaturated node.
    pub fn sandwich(&self, w: &GridField<T>) -> SandwichReport<T> {
        let mut report = SandwichReport {
            checked: 0,
            violations: Vec::new(),
            min_slack: T::infinity(),
        };
        for i in 0..w.len() {
            if w.is_saturated(i) || !w.values()[i].is_finite() {
                continue;
            }
            let d = w.distances()[i];
            let v = w.values()[i];
            let slack = (v - self.d_minus(d)).min(self.d_plus(d) - v);
            report.checked += 1;
            report.min_slack = report.min_slack.min(slack);
            if slack < -T::lit(BRACKET_EPS) {
                report.violations.push(i);
            }
        }
        report
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SandwichReport<T> {
    pub checked: usize,
    pub violations: Vec<usize>,
    pub min_slack: T,
}

/// Bracket tables of a field on the ladder of its distinct node distances
/// above `target_tol`. Saturated nodes are ignored.
pub fn compute_brackets<T: Real>(w: &GridField<T>, target_tol: T) -> Result<BracketPair<T>> {
    compute_brackets_on_ladder(w, target_tol, None)
}

/// As [`compute_brackets`] with an optional explicit radius ladder. A ladder
/// coarser than the grid spacing is accepted with a refinement warning.
pub fn compute_brackets_on_ladder<T: Real>(
    w: &GridField<T>,
    target_tol: T,
    ladder: Option<&[T]>,
) -> Result<BracketPair<T>> {
    let mut nodes: Vec<(T, T)> = (0..w.len())
        .filter(|&i| !w.is_saturated(i) && w.values()[i].is_finite())
        .map(|i| (w.distances()[i], w.values()[i]))
        .collect();
    nodes.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal));
    let mut warnings = Vec::new();

    // rows: (radius, d_plus, d_minus) before perturbation
    let mut rows: Vec<(T, T, T)> = Vec::new();
    match ladder {
        None => {
            // clusters of numerically equal distances
            let mut starts: Vec<usize> = Vec::new();
            for (k, &(d, _)) in nodes.iter().enumerate() {
                let new_cluster = match starts.last() {
                    None => true,
                    Some(&s) => {
                        let prev: T = nodes[s].0;
                        d - prev > T::tiny() * d.abs().max(T::one())
                    }
                };
                if new_cluster {
                    starts.push(k);
                }
            }
            let mut prefix_max = vec![T::neg_infinity(); starts.len()];
            let mut suffix_min = vec![T::infinity(); starts.len()];
            for c in 0..starts.len() {
                let end = starts.get(c + 1).copied().unwrap_or(nodes.len());
                let m = nodes[starts[c]..end]
                    .iter()
                    .map(|p| p.1)
                    .fold(T::neg_infinity(), T::max);
                prefix_max[c] = if c == 0 { m } else { prefix_max[c - 1].max(m) };
            }
            for c in (0..starts.len()).rev() {
                let end = starts.get(c + 1).copied().unwrap_or(nodes.len());
                let m = nodes[starts[c]..end].iter().map(|p| p.1).fold(T::infinity(), T::min);
                suffix_min[c] = if c + 1 == starts.len() {
                    m
                } else {
                    suffix_min[c + 1].min(m)
                };
            }
            for c in 0..starts.len() {
                let r = nodes[starts[c]].0;
                if r > target_tol {
                    rows.push((r, prefix_max[c], suffix_min[c]));
                }
            }
        }
        Some(radii) => {
            let h = w.shape().max_spacing();
            if radii.windows(2).any(|p| p[1] - p[0] > h * (T::one() + T::tiny())) {
                warnings.push(format!(
                    "radius ladder is coarser than the grid spacing {h}; refine the ladder"
                ));
            }
            for &r in radii {
                let dp = nodes
                    .iter()
                    .filter(|p| p.0 <= r)
                    .map(|p| p.1)
                    .fold(T::neg_infinity(), T::max);
                let dm = nodes
                    .iter()
                    .filter(|p| p.0 >= r)
                    .map(|p| p.1)
                    .fold(T::infinity(), T::min);
                if dp.is_finite() && dm.is_finite() && r > T::zero() {
                    rows.push((r, dp, dm));
                }
            }
        }
    }
    if rows.len() < 2 {
        return Err(MrfError::InvalidArgument(
            "need at least two radii off the target to build brackets".into(),
        ));
    }
    let k_rows = rows.len();
    let eps = T::lit(BRACKET_EPS);
    let xs: Vec<T> = rows.iter().map(|r| r.0).collect();
    let bump = |v: T| eps * v.abs().max(T::one());
    let mut plus: Vec<T> = Vec::with_capacity(k_rows);
    for r in &rows {
        let v = match plus.last() {
            Some(&p) => r.1.max(p + bump(p)),
            None => r.1,
        };
        plus.push(v);
    }
    let mut below = vec![T::zero(); k_rows];
    for k in (0..k_rows).rev() {
        below[k] = if k + 1 == k_rows {
            rows[k].2
        } else {
            rows[k].2.min(below[k + 1] - bump(below[k + 1]))
        };
    }
    let minus: Vec<T> = below
        .iter()
        .enumerate()
        .map(|(k, &b)| b.max(rows[k].2 * T::from_usize_lossy(k + 1) / T::from_usize_lossy(k_rows + 1)))
        .collect();
    if minus[0] <= T::zero() {
        return Err(MrfError::Precondition(
            "field is not positive off the target; run check_structure first".into(),
        ));
    }
    let mut pair = BracketPair::from_tables(MonotoneTable::new(xs.clone(), minus)?, MonotoneTable::new(xs, plus)?)?;
    pair.warnings = warnings;
    Ok(pair)
}

// ----------------------------------------------------------------- decrease

/// Fixed residual histogram edges.
pub const RESIDUAL_BIN_EDGES: [f64; 11] = [-10.0, -1.0, -0.1, -0.01, -1e-3, 0.0, 1e-3, 0.01, 0.1, 1.0, 10.0];

#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub edges: Vec<f64>,
    /// `edges.len() + 1` counts; the first and last bins are open.
    pub counts: Vec<usize>,
}

impl Histogram {
    pub fn new(edges: &[f64], samples: impl IntoIterator<Item = f64>) -> Self {
        let mut counts = vec![0; edges.len() + 1];
        for s in samples {
            let k = edges.partition_point(|&e| e <= s);
            counts[k] += 1;
        }
        Self {
            edges: edges.to_vec(),
            counts,
        }
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }
}

#[derive(Debug, Clone)]
pub struct DecreaseReport<T> {
    pub pass: bool,
    pub tol: T,
    pub worst_residual: Option<T>,
    pub worst_node: Option<usize>,
    pub worst_point: Option<Vec<T>>,
    pub violations: Vec<usize>,
    pub evaluated: usize,
    pub not_evaluated: usize,
    pub residuals: ResidualField<T>,
    pub histogram: Histogram,
}

/// Decrease condition on the grid:
/// `R(x) = min_u { [W(x + tau f) - W(x)]/tau + p0(W(x)) l(x,u) + gamma(W(x)) } <= tol`
/// at every evaluable node.
pub fn check_decrease<T: Real>(
    w: &GridField<T>,
    system: &ControlSystem<T>,
    comp: &ComparatorPair<T>,
    tau: T,
    tol: T,
) -> Result<DecreaseReport<T>> {
    let residuals = one_step_residual(w, system, tau, |x, u, v| {
        Ok(comp.p0(v)? * system.running_cost(x, u) + comp.gamma(v)?)
    })?;
    let vals = residuals.residuals.values();
    let violations: Vec<usize> = (0..vals.len())
        .filter(|&i| residuals.status[i].is_evaluated() && vals[i] > tol)
        .collect();
    let worst = residuals.worst();
    let histogram = Histogram::new(
        &RESIDUAL_BIN_EDGES,
        (0..vals.len())
            .filter(|&i| residuals.status[i].is_evaluated())
            .map(|i| vals[i].to_f64_lossy()),
    );
    let evaluated = residuals.evaluated();
    Ok(DecreaseReport {
        pass: violations.is_empty() && evaluated > 0,
        tol,
        worst_residual: worst.map(|w| w.1),
        worst_node: worst.map(|w| w.0),
        worst_point: worst.map(|w| w_point(residuals.residuals.shape(), w.0)),
        violations,
        evaluated,
        not_evaluated: residuals.not_evaluated(),
        residuals,
        histogram,
    })
}

fn w_point<T: Real>(shape: &crate::grid::GridShape<T>, i: usize) -> Vec<T> {
    shape.node(i)
}

// ------------------------------------------------------------ integrability

/// Quadrature settings for improper integrals at `0+`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureOptions<T> {
    pub quadrature_tol: T,
    /// Lower cut-offs `delta_k = delta0 * factor^k`.
    pub delta0: T,
    pub delta_factor: T,
    /// Trapezoid nodes per decade of the logarithmic variable.
    pub points_per_decade: usize,
}

impl<T: Real> Default for QuadratureOptions<T> {
    fn default() -> Self {
        Self {
            quadrature_tol: T::lit(1e-6),
            delta0: T::lit(1e-3),
            delta_factor: T::lit(1e-3),
            points_per_decade: 2000,
        }
    }
}

/// Cumulative trapezoid quadrature of `f` on `[a, b]` in the variable
/// `y = ln s`, with extra nodes at `breaks` and every power of ten.
/// Returns `(nodes, cumulative integrals)`.
fn log_trapezoid<T: Real>(f: &dyn Fn(T) -> T, a: T, b: T, breaks: &[T], points_per_decade: usize) -> (Vec<T>, Vec<T>) {
    let mut cuts: Vec<T> = vec![a, b];
    cuts.extend(breaks.iter().copied().filter(|&x| x > a && x < b));
    let lo_dec = a.log10().floor().to_i32().unwrap_or(0);
    let hi_dec = b.log10().ceil().to_i32().unwrap_or(0);
    for e in lo_dec..=hi_dec {
        let p = T::lit(10f64.powi(e));
        if p > a && p < b {
            cuts.push(p);
        }
    }
    cuts.sort_by(|x, y| x.partial_cmp(y).unwrap_or(std::cmp::Ordering::Equal));
    cuts.dedup();
    let mut nodes = vec![a];
    let mut cum = vec![T::zero()];
    let mut acc = T::zero();
    let mut prev_s = a;
    let mut prev_g = f(a) * a;
    for w in cuts.windows(2) {
        let (y0, y1) = (w[0].ln(), w[1].ln());
        let decades = (y1 - y0) / T::lit(std::f64::consts::LN_10);
        let n = (decades * T::from_usize_lossy(points_per_decade))
            .ceil()
            .to_usize()
            .unwrap_or(1)
            .max(1);
        let dy = (y1 - y0) / T::from_usize_lossy(n);
        for k in 1..=n {
            let s = if k == n {
                w[1]
            } else {
                (y0 + dy * T::from_usize_lossy(k)).exp()
            };
            let g = f(s) * s;
            let step = s.ln() - prev_s.ln();
            acc = acc + T::lit(0.5) * step * (g + prev_g);
            nodes.push(s);
            cum.push(acc);
            prev_s = s;
            prev_g = g;
        }
    }
    (nodes, cum)
}

/// Partial integrals `int_{delta_k}^{upper} f` for a decreasing cut-off ladder.
#[derive(Debug, Clone, PartialEq)]
pub struct ImproperIntegral<T> {
    pub deltas: Vec<T>,
    pub partials: Vec<T>,
    pub converged: bool,
    pub finite_integrand: bool,
    /// Quadrature nodes from the smallest cut-off to `upper`, and the integral
    /// from `0` (tail estimate `delta * f(delta)` included) to each node.
    pub nodes: Vec<T>,
    pub cumulative: Vec<T>,
}

impl<T: Real> ImproperIntegral<T> {
    pub fn value(&self) -> Option<T> {
        (self.converged && self.finite_integrand).then(|| *self.cumulative.last().expect("nonempty"))
    }

    pub fn differences(&self) -> Vec<T> {
        self.partials.windows(2).map(|w| (w[1] - w[0]).abs()).collect()
    }
}

/// Improper integral of `f` over `(0, upper]` by the cut-off ladder.
pub fn improper_integral<T: Real>(
    f: &dyn Fn(T) -> T,
    upper: T,
    levels: usize,
    opts: &QuadratureOptions<T>,
) -> Result<ImproperIntegral<T>> {
    if !(upper > T::zero()) || levels < 2 {
        return Err(MrfError::InvalidArgument(
            "improper integral needs a positive upper limit and at least two levels".into(),
        ));
    }
    let deltas: Vec<T> = (0..levels)
        .map(|k| opts.delta0 * opts.delta_factor.powi(k as i32))
        .map(|d| d.min(upper * T::lit(0.5)))
        .collect();
    let smallest = deltas[levels - 1];
    let (nodes, cum) = log_trapezoid(f, smallest, upper, &deltas, opts.points_per_decade);
    let finite_integrand = cum.iter().all(|v| v.is_finite());
    let total = *cum.last().expect("nonempty");
    let partials: Vec<T> = deltas
        .iter()
        .map(|&d| {
            let k = nodes.partition_point(|&s| s < d).min(nodes.len() - 1);
            total - cum[k]
        })
        .collect();
    let last_diff = (partials[levels - 1] - partials[levels - 2]).abs();
    let converged = finite_integrand && last_diff < opts.quadrature_tol;
    let tail = smallest * f(smallest);
    let cumulative = cum.iter().map(|&c| c + tail).collect();
    Ok(ImproperIntegral {
        deltas,
        partials,
        converged,
        finite_integrand,
        nodes,
        cumulative,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct IcReport<T> {
    pub pass: bool,
    pub v_max: T,
    pub integral: ImproperIntegral<T>,
    pub p_at_vmax: T,
    pub growth_threshold: T,
    /// `P` on `[0, v_max]`; present when the condition holds.
    pub p_table: Option<MonotoneTable<T>>,
    pub verdict: String,
}

/// Integrability condition: `P(v) = int_0^v ds / p0(s)` is finite.
///
/// Passes when the partial integrals over the cut-off ladder settle within
/// `quadrature_tol` and `P(v_max)` reaches `growth_threshold` (default
/// `v_max / 2`).
pub fn check_integrability<T: Real>(
    p0: &MonotoneFn<T>,
    v_max: T,
    refinement_levels: usize,
    growth_threshold: Option<T>,
    opts: &QuadratureOptions<T>,
) -> Result<IcReport<T>> {
    let f = |s: T| match p0.eval(s) {
        Ok(p) if p > T::zero() => T::one() / p,
        _ => T::infinity(),
    };
    let integral = improper_integral(&f, v_max, refinement_levels, opts)?;
    let threshold = growth_threshold.unwrap_or(v_max * T::lit(0.5));
    let p_at_vmax = *integral.cumulative.last().expect("nonempty");
    let (pass, verdict) = if !integral.finite_integrand {
        (false, "IC-fail: 1/p0 is not finite on (0, v_max]".to_string())
    } else if !integral.converged {
        let d = integral.differences();
        (
            false,
            format!(
                "IC-fail: partial integrals do not settle (last difference {})",
                d.last().copied().unwrap_or(T::nan())
            ),
        )
    } else if p_at_vmax < threshold {
        (
            false,
            format!("IC-fail: P(v_max) = {p_at_vmax} below growth threshold {threshold}"),
        )
    } else {
        (true, "IC-pass".to_string())
    };
    let p_table = if pass {
        let mut xs = vec![T::zero()];
        let mut ys = vec![T::zero()];
        for (&s, &c) in integral.nodes.iter().zip(&integral.cumulative) {
            if s > *xs.last().expect("nonempty") {
                xs.push(s);
                ys.push(c.max(*ys.last().expect("nonempty")));
            }
        }
        Some(MonotoneTable::new(xs, ys)?)
    } else {
        None
    };
    Ok(IcReport {
        pass,
        v_max,
        integral,
        p_at_vmax,
        growth_threshold: threshold,
        p_table,
        verdict,
    })
}

// -------------------------------------------------------------------- petrov

#[derive(Debug, Clone, PartialEq)]
pub struct PetrovBound<T> {
    pub distance: T,
    /// `int_0^d dr / (p0(r) + gamma(r))`; `None` when the integral diverges.
    pub bound: Option<T>,
}

/// Minimum-time bound from a decrease certificate of the distance field.
pub fn petrov_min_time_bound<T: Real>(
    w: &GridField<T>,
    comp: &ComparatorPair<T>,
    z: &[T],
    levels: usize,
    opts: &QuadratureOptions<T>,
) -> Result<PetrovBound<T>> {
    let d = w.interpolate(z)?;
    if !(d > T::zero()) {
        return Ok(PetrovBound {
            distance: d,
            bound: Some(T::zero()),
        });
    }
    let f = |r: T| match (comp.p0(r), comp.gamma(r)) {
        (Ok(p), Ok(g)) if p + g > T::zero() => T::one() / (p + g),
        _ => T::infinity(),
    };
    let integral = improper_integral(&f, d, levels, opts)?;
    Ok(PetrovBound {
        distance: d,
        bound: integral.value(),
    })
}
