//! Plain-text run report: plan echo, stage results, certificate summary.

use std::fmt::Write as _;

use crate::pipeline::RunOutput;

fn verdict(pass: bool) -> &'static str {
    if pass {
        "PASS"
    } else {
        "FAIL"
    }
}

pub fn render(out: &RunOutput) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "== plan");
    s.push_str(&out.plan.echo());

    let _ = writeln!(s, "\n== stages");
    for (stage, secs) in &out.timings {
        let _ = writeln!(s, "{:<11} {:>9.3} s", stage.as_str(), secs);
    }

    if let Some(c) = &out.converse {
        let _ = writeln!(s, "\n== converse");
        let _ = writeln!(
            s,
            "strips i = {}..{}, beta_bar t_max {:.4}, beta_bar(1,0) {:.6e}",
            c.rtable.i_min(),
            c.rtable.i_max(),
            c.beta_bar.t_max,
            c.ell1.beta_bar_1_0()
        );
        for b in &c.ell.bumps {
            let _ = writeln!(
                s,
                "  j = {}: base {:.4e}, T_j {:.4e}, L_j {:.4e}, plateau {:.4e}",
                b.j, b.base, b.uniform_time, b.big_l, b.plateau
            );
        }
    }

    if let Some(o) = &out.solve {
        let _ = writeln!(s, "\n== solve");
        let _ = writeln!(
            s,
            "{} nodes, {} sweeps, converged {}, max value {:.6e}",
            o.field.len(),
            o.sweeps,
            o.converged,
            o.field.max_value()
        );
    }

    if let Some(v) = &out.verify {
        let _ = writeln!(s, "\n== verify");
        let h = &v.decrease.histogram;
        let _ = writeln!(s, "residual histogram (edges {:?}):", h.edges);
        let _ = writeln!(s, "  {:?}", h.counts);
        let _ = writeln!(
            s,
            "P(v_max) = {:.6e} at v_max {:.6e}: {}",
            v.ic.p_at_vmax, v.ic.v_max, v.ic.verdict
        );
        for (z, b) in &v.petrov {
            let bound = b.bound.map_or("diverges".to_string(), |x| format!("{x:.6e}"));
            let _ = writeln!(s, "petrov bound at {z:?}: d = {:.6e}, T <= {bound}", b.distance);
        }
    }

    if !out.starts.is_empty() {
        let _ = writeln!(s, "\n== synthesize");
        let n = out.starts.len() as f64;
        let mean = |f: &dyn Fn(&crate::pipeline::StartResult) -> f64| out.starts.iter().map(f).sum::<f64>() / n;
        let _ = writeln!(
            s,
            "{} starts, mean cost {:.4}, mean time {:.4}, mean segments {:.2}",
            out.starts.len(),
            mean(&|r| r.record.summary.total_cost),
            mean(&|r| r.record.summary.total_time),
            mean(&|r| r.record.segments.len() as f64)
        );
        for (k, r) in out.starts.iter().enumerate().filter(|(_, r)| !r.record.pass()) {
            let sm = &r.record.summary;
            let _ = writeln!(
                s,
                "  start {k} {:?}: terminal {}, rel1 {}, rel2 {}, 3/2 {}, cost bound {:?}, superopt {:.3e}",
                r.start,
                sm.terminal.as_str(),
                sm.rel1_ok,
                sm.rel2_ok,
                sm.three_halves_ok,
                sm.within_cost_bound,
                r.record.superoptimality_residual
            );
        }
    }

    let _ = writeln!(s, "\n== checks");
    for c in &out.checks {
        let _ = writeln!(s, "{} {}: {}", verdict(c.pass), c.name, c.detail);
    }
    let _ = writeln!(s, "\n== certificate");
    match &out.certificate {
        Some(c) => {
            let _ = writeln!(s, "{}", if c.pass() { "MRF-PASS" } else { "MRF-FAIL" });
        }
        None => {
            let _ = writeln!(s, "not assembled (needs verify and synthesize)");
        }
    }
    let _ = writeln!(s, "overall {}", verdict(out.pass()));
    s
}
