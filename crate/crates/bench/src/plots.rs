//! Minimal SVG figures.

use std::fmt::Write as _;

use mrf_core::GridField;

use crate::pipeline::RunOutput;

const W: f64 = 640.0;
const H: f64 = 480.0;
const M: f64 = 56.0;
const PALETTE: [&str; 10] = [
    "#f7fbff", "#deebf7", "#c6dbef", "#9ecae1", "#6baed6", "#4292c6", "#2171b5", "#08519c", "#08306b", "#041f45",
];
/// States of a 2D path and its segment end points.
pub type Path2d = (Vec<Vec<f64>>, Vec<Vec<f64>>);
/// Times, positions and `(t, x)` segment ends of a 1D path.
pub type Path1d = (Vec<f64>, Vec<f64>, Vec<(f64, f64)>);

const LINES: [&str; 6] = ["#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf"];

struct Frame {
    x: (f64, f64),
    y: (f64, f64),
    body: String,
}

impl Frame {
    fn new(x: (f64, f64), y: (f64, f64)) -> Self {
        let pad = |r: (f64, f64)| if r.1 > r.0 { r } else { (r.0 - 0.5, r.0 + 0.5) };
        Self {
            x: pad(x),
            y: pad(y),
            body: String::new(),
        }
    }

    fn px(&self, x: f64) -> f64 {
        M + (x - self.x.0) / (self.x.1 - self.x.0) * (W - 2.0 * M)
    }

    fn py(&self, y: f64) -> f64 {
        H - M - (y - self.y.0) / (self.y.1 - self.y.0) * (H - 2.0 * M)
    }

    fn polyline(&mut self, pts: &[(f64, f64)], color: &str, width: f64) {
        let mut d = String::new();
        for &(x, y) in pts {
            if x.is_finite() && y.is_finite() {
                let _ = write!(d, "{:.2},{:.2} ", self.px(x), self.py(y.clamp(self.y.0, self.y.1)));
            }
        }
        let _ = writeln!(
            self.body,
            r#"<polyline points="{d}" fill="none" stroke="{color}" stroke-width="{width}"/>"#
        );
    }

    fn rect(&mut self, x0: f64, y0: f64, x1: f64, y1: f64, fill: &str, opacity: f64) {
        let (a, b) = (self.px(x0.min(x1)), self.px(x0.max(x1)));
        let (c, d) = (self.py(y0.max(y1)), self.py(y0.min(y1)));
        let _ = writeln!(
            self.body,
            r#"<rect x="{a:.2}" y="{c:.2}" width="{:.2}" height="{:.2}" fill="{fill}" fill-opacity="{opacity}"/>"#,
            b - a,
            d - c
        );
    }

    fn dot(&mut self, x: f64, y: f64, color: &str) {
        if x.is_finite() && y.is_finite() {
            let _ = writeln!(
                self.body,
                r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{color}"/>"#,
                self.px(x),
                self.py(y)
            );
        }
    }

    fn finish(self, title: &str, xlabel: &str, ylabel: &str) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
        s.push_str(&self.body);
        let _ = writeln!(
            s,
            r#"<rect x="{M}" y="{M}" width="{}" height="{}" fill="none" stroke="black"/>"#,
            W - 2.0 * M,
            H - 2.0 * M
        );
        for k in 0..=4 {
            let f = k as f64 / 4.0;
            let xv = self.x.0 + f * (self.x.1 - self.x.0);
            let yv = self.y.0 + f * (self.y.1 - self.y.0);
            let _ = writeln!(
                s,
                r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
                self.px(xv),
                H - M + 16.0,
                tick(xv)
            );
            let _ = writeln!(
                s,
                r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
                M - 4.0,
                self.py(yv) + 4.0,
                tick(yv)
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{title}</text>"#,
            W / 2.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="middle">{xlabel}</text>"#,
            W / 2.0,
            H - 12.0
        );
        let _ = writeln!(
            s,
            r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{ylabel}</text>"#,
            H / 2.0,
            H / 2.0
        );
        s.push_str("</svg>\n");
        s
    }
}

fn tick(v: f64) -> String {
    if v != 0.0 && (v.abs() < 1e-2 || v.abs() >= 1e4) {
        format!("{v:.1e}")
    } else {
        format!("{v:.2}")
    }
}

fn notice(title: &str, text: &str) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"120\" font-family=\"sans-serif\">\n\
         <text x=\"20\" y=\"40\" font-size=\"15\">{title}</text>\n<text x=\"20\" y=\"80\">{text}</text>\n</svg>\n"
    )
}

fn finite_range(vals: impl Iterator<Item = f64>) -> (f64, f64) {
    vals.filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)))
}

fn visible(field: &GridField<f64>, cap: f64) -> Vec<f64> {
    field
        .values()
        .iter()
        .map(|&v| if v.is_finite() && v < cap { v } else { f64::NAN })
        .collect()
}

/// 1D candidate curve with the target band shaded.
pub fn field_1d(field: &GridField<f64>, cap: f64) -> String {
    let shape = field.shape();
    let vals = visible(field, cap);
    let xs: Vec<f64> = (0..field.len()).map(|i| shape.node(i)[0]).collect();
    let (lo, hi) = finite_range(vals.iter().copied());
    let mut f = Frame::new((shape.lower()[0], shape.upper()[0]), (lo.min(0.0), hi));
    let band: Vec<f64> = xs
        .iter()
        .zip(field.mask())
        .filter(|(_, m)| **m)
        .map(|(x, _)| *x)
        .collect();
    if let (Some(a), Some(b)) = (band.first(), band.last()) {
        let (y0, y1) = f.y;
        f.rect(*a, y0, *b, y1, "#ffd54f", 0.4);
    }
    let pts: Vec<(f64, f64)> = xs.iter().copied().zip(vals).collect();
    f.polyline(&pts, "#08519c", 2.0);
    f.finish("candidate W", "x", "W")
}

/// Levels at the deciles of the finite values.
fn quantile_levels(vals: &[f64]) -> Vec<f64> {
    let mut v: Vec<f64> = vals.iter().copied().filter(|x| x.is_finite()).collect();
    v.sort_by(f64::total_cmp);
    if v.is_empty() {
        return Vec::new();
    }
    (1..10).map(|k| v[(k * (v.len() - 1)) / 10]).collect()
}

/// 2D quantile bands of the candidate with optional trajectory overlays.
pub fn field_2d(field: &GridField<f64>, cap: f64, switching_curve: bool, paths: &[Path2d]) -> String {
    let shape = field.shape();
    let vals = visible(field, cap);
    let levels = quantile_levels(&vals);
    let mut f = Frame::new(
        (shape.lower()[0], shape.upper()[0]),
        (shape.lower()[1], shape.upper()[1]),
    );
    let (hx, hy) = (shape.spacing(0), shape.spacing(1));
    let (nx, ny) = (shape.resolution()[0], shape.resolution()[1]);
    let band = |v: f64| {
        if v.is_finite() {
            levels.partition_point(|l| *l < v)
        } else {
            PALETTE.len()
        }
    };
    for j in 0..ny {
        let mut i = 0;
        while i < nx {
            let b = band(vals[shape.flat_index(&[i, j])]);
            let mut e = i + 1;
            while e < nx && band(vals[shape.flat_index(&[e, j])]) == b {
                e += 1;
            }
            let p = shape.node(shape.flat_index(&[i, j]));
            let q = shape.node(shape.flat_index(&[e - 1, j]));
            let color = PALETTE.get(b).copied().unwrap_or("#bbbbbb");
            f.rect(
                p[0] - hx / 2.0,
                p[1] - hy / 2.0,
                q[0] + hx / 2.0,
                p[1] + hy / 2.0,
                color,
                1.0,
            );
            i = e;
        }
    }
    if switching_curve {
        let (v0, v1) = f.y;
        let pts: Vec<(f64, f64)> = (0..=200)
            .map(|k| {
                let v = v0 + (v1 - v0) * k as f64 / 200.0;
                (-v * v.abs() / 2.0, v)
            })
            .filter(|(x, _)| *x >= f.x.0 && *x <= f.x.1)
            .collect();
        f.polyline(&pts, "black", 1.5);
    }
    for (k, (states, marks)) in paths.iter().enumerate() {
        let c = LINES[k % LINES.len()];
        let pts: Vec<(f64, f64)> = states.iter().map(|x| (x[0], x[1])).collect();
        f.polyline(&pts, c, 1.5);
        for m in marks {
            f.dot(m[0], m[1], c);
        }
    }
    f.finish("candidate W, decile bands", "x0", "x1")
}

/// `x(t)` of 1D trajectories with segment ends marked.
pub fn trajectories_1d(paths: &[Path1d]) -> String {
    let (t0, t1) = finite_range(paths.iter().flat_map(|p| p.0.iter().copied()));
    let (x0, x1) = finite_range(paths.iter().flat_map(|p| p.1.iter().copied()));
    let mut f = Frame::new((t0.min(0.0), t1), (x0, x1));
    for (k, (t, x, marks)) in paths.iter().enumerate() {
        let c = LINES[k % LINES.len()];
        let pts: Vec<(f64, f64)> = t.iter().copied().zip(x.iter().copied()).collect();
        f.polyline(&pts, c, 1.2);
        for &(a, b) in marks {
            f.dot(a, b, c);
        }
    }
    f.finish("synthesized trajectories", "t", "x")
}

/// Bar chart of residual histogram counts.
pub fn histogram(edges: &[f64], counts: &[usize]) -> String {
    let n = counts.len();
    let top = counts.iter().copied().max().unwrap_or(0).max(1) as f64;
    let mut f = Frame::new((0.0, n as f64), (0.0, top));
    for (k, &c) in counts.iter().enumerate() {
        let color = if k > edges.partition_point(|&e| e <= 0.0) {
            "#d62728"
        } else {
            "#4292c6"
        };
        f.rect(k as f64 + 0.1, 0.0, k as f64 + 0.9, c as f64, color, 1.0);
    }
    let mut s = f.finish("decrease residuals", "bin", "count");
    let labels: Vec<String> = edges.iter().map(|e| tick(*e)).collect();
    s = s.replace(
        "</svg>\n",
        &format!(
            "<text x=\"{M}\" y=\"44\" font-size=\"10\">edges: {}</text>\n</svg>\n",
            labels.join(" ")
        ),
    );
    s
}

/// Accumulated cost against distance with the `4 P(W/2)` bound.
pub fn cost_vs_bound(points: &[(f64, f64, f64)]) -> String {
    let (d0, d1) = finite_range(points.iter().map(|p| p.0));
    let (c0, c1) = finite_range(points.iter().flat_map(|p| [p.1, p.2]));
    let mut f = Frame::new((d0.min(0.0), d1), (c0.min(0.0), c1));
    for &(d, c, b) in points {
        f.dot(d, b, "#ff7f0e");
        f.dot(d, c, "#08519c");
    }
    f.finish("cost (blue) and bound (orange)", "d(z)", "cost")
}

/// Every figure of a run, by file name.
pub fn render_all(out: &RunOutput) -> Vec<(String, String)> {
    let mut figs = Vec::new();
    let cap = 0.5 * out.plan.boundary_value;
    if let Some(field) = &out.field {
        match field.shape().dim() {
            1 => {
                figs.push(("value_function.svg".into(), field_1d(field, cap)));
                if !out.starts.is_empty() {
                    let paths: Vec<Path1d> = out
                        .starts
                        .iter()
                        .map(|r| {
                            let t = &r.synthesis.trajectory;
                            let marks = r
                                .record
                                .segments
                                .iter()
                                .map(|g| (g.start_time + g.duration, g.end[0]))
                                .collect();
                            (t.times.clone(), t.states.iter().map(|x| x[0]).collect(), marks)
                        })
                        .collect();
                    figs.push(("trajectories.svg".into(), trajectories_1d(&paths)));
                }
            }
            2 => {
                let paths: Vec<Path2d> = out
                    .starts
                    .iter()
                    .map(|r| {
                        let marks = r.record.segments.iter().map(|g| g.end.clone()).collect();
                        (r.synthesis.trajectory.states.clone(), marks)
                    })
                    .collect();
                let di = out.plan.system == "double_integrator_mintime";
                figs.push(("value_function.svg".into(), field_2d(field, cap, di, &paths)));
            }
            d => figs.push((
                "value_function.svg".into(),
                notice("candidate W", &format!("no figure for state dimension {d}")),
            )),
        }
    }
    if let Some(v) = &out.verify {
        let h = &v.decrease.histogram;
        figs.push(("residual_histogram.svg".into(), histogram(&h.edges, &h.counts)));
    }
    if !out.starts.is_empty() {
        let pts: Vec<(f64, f64, f64)> = out
            .starts
            .iter()
            .map(|r| {
                let s = &r.record.summary;
                (s.distance_start, s.total_cost, s.cost_bound.unwrap_or(f64::NAN))
            })
            .collect();
        figs.push(("cost_vs_bound.svg".into(), cost_vs_bound(&pts)));
    }
    figs
}
