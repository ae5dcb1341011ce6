//! Stage runner: converse, solve, verify, synthesize.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use mrf_core::catalog;
use mrf_core::certificate::SynthesisRecord;
use mrf_core::comparators::{builtin_gamma, builtin_p0};
use mrf_core::converse::{build_converse, Converse, ConverseParams, GacController, StripTimeOptions};
use mrf_core::hjb::{field_to_csv, solve_metadata, solve_value_function, SolveOutcome};
use mrf_core::kl::KlFunction;
use mrf_core::synth::{
    build_descent_rate, check_superoptimality, synthesize_level_halving, DescentOptions, DescentRate, Synthesis,
    SynthesisParams,
};
use mrf_core::tables::{geometric_ladder, linear_ladder};
use mrf_core::verify::{
    check_decrease, check_integrability, check_structure, compute_brackets, petrov_min_time_bound, DecreaseReport,
    IcReport, PetrovBound, QuadratureOptions, SandwichReport, StructureOptions, StructureReport,
};
use mrf_core::{
    BracketPair, ComparatorPair, ControlSchedule, ControlSystem, GridField, GridShape, MonotoneFn, MrfCertificate,
    SolverParams,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::{CandidateKind, Plan, Stage};
use crate::{plots, report};

/// One PASS/FAIL line of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &str, pass: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            pass,
            detail: detail.into(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct StartResult {
    pub start: Vec<f64>,
    pub synthesis: Synthesis<f64>,
    pub record: SynthesisRecord<f64>,
    /// `max_t d(x(t)) - beta(d(z), t)` when a descent rate was built.
    pub descent_excess: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct VerifyResult {
    pub structure: StructureReport<f64>,
    pub sandwich: SandwichReport<f64>,
    pub decrease: DecreaseReport<f64>,
    pub ic: IcReport<f64>,
    pub petrov: Vec<(Vec<f64>, PetrovBound<f64>)>,
}

/// Everything a run produced. `files` maps output names to contents and
/// holds nothing that depends on timing.
pub struct RunOutput {
    pub plan: Plan,
    pub checks: Vec<Check>,
    pub timings: Vec<(Stage, f64)>,
    pub files: BTreeMap<String, String>,
    pub system: ControlSystem<f64>,
    pub converse: Option<Converse<f64>>,
    pub solve: Option<SolveOutcome<f64>>,
    pub field: Option<GridField<f64>>,
    pub comparators: Option<ComparatorPair<f64>>,
    pub brackets: Option<BracketPair<f64>>,
    pub verify: Option<VerifyResult>,
    pub descent: Option<DescentRate<f64>>,
    pub starts: Vec<StartResult>,
    pub certificate: Option<MrfCertificate<f64>>,
}

impl RunOutput {
    pub fn pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    /// Writes every output file plus `report.txt` (which carries the timings).
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        for (name, body) in &self.files {
            std::fs::write(dir.join(name), body).with_context(|| format!("writing {name}"))?;
        }
        if self.plan.report {
            std::fs::write(dir.join("report.txt"), report::render(self))?;
        }
        Ok(())
    }
}

/// `beta(r, t) = 2 r exp(-t / (1 + r))`.
pub fn exp_2r_gac() -> KlFunction<f64> {
    let mut kr = vec![0.0];
    kr.extend(geometric_ladder(1e-12, 1e4, 400));
    KlFunction::from_fn(
        kr,
        linear_ladder(0.0, 60.0, 121),
        |r: f64, t: f64| 2.0 * r * (-t / (1.0 + r)).exp(),
        1e-4,
    )
    .expect("closed-form KL data")
}

/// Constant control pointing most directly at the origin.
pub fn toward_origin(system: &ControlSystem<f64>) -> Arc<GacController<f64>> {
    let sys = system.clone();
    Arc::new(move |z: &[f64]| {
        let mut best = (f64::INFINITY, 0);
        for (k, u) in sys.control_samples().iter().enumerate() {
            let f = sys.dynamics(z, u);
            let s: f64 = f.iter().zip(z).map(|(a, b)| a * b).sum();
            if s < best.0 {
                best = (s, k);
            }
        }
        ControlSchedule::constant(sys.control_samples()[best.1].clone())
    })
}

fn csv_row(out: &mut String, cells: &[String]) {
    let _ = writeln!(out, "{}", cells.join(","));
}

fn nums(v: &[f64]) -> Vec<String> {
    v.iter().map(|x| format!("{x}")).collect()
}

pub fn build_shape(plan: &Plan) -> Result<GridShape<f64>> {
    let shape = match &plan.resolution {
        Some(r) => GridShape::new(plan.lower.clone(), plan.upper.clone(), r.clone()),
        None => GridShape::with_spacing(plan.lower.clone(), plan.upper.clone(), plan.h),
    };
    shape.map_err(|e| anyhow!("grid: {e}"))
}

/// Runs the plan, on a pool of `plan.workers` threads when set.
pub fn run(plan: &Plan) -> Result<RunOutput> {
    match plan.workers {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(n).build()?;
            pool.install(|| run_stages(plan))
        }
        None => run_stages(plan),
    }
}

fn run_stages(plan: &Plan) -> Result<RunOutput> {
    let system = catalog::build::<f64>(&plan.system, plan.controls, plan.lower.clone(), plan.upper.clone())?;
    let mut out = RunOutput {
        plan: plan.clone(),
        checks: Vec::new(),
        timings: Vec::new(),
        files: BTreeMap::new(),
        system,
        converse: None,
        solve: None,
        field: None,
        comparators: None,
        brackets: None,
        verify: None,
        descent: None,
        starts: Vec::new(),
        certificate: None,
    };
    let mut stages = plan.stages.clone();
    stages.sort();
    stages.dedup();
    for stage in stages {
        let t0 = Instant::now();
        match stage {
            Stage::Converse => converse_stage(&mut out)?,
            Stage::Solve => solve_stage(&mut out)?,
            Stage::Verify => verify_stage(&mut out)?,
            Stage::Synthesize => synthesize_stage(&mut out)?,
        }
        out.timings.push((stage, t0.elapsed().as_secs_f64()));
    }
    if let (Some(v), false) = (&out.verify, out.starts.is_empty()) {
        let cert = MrfCertificate {
            structure: v.structure.clone(),
            decrease: v.decrease.clone(),
            brackets: out.brackets.clone(),
            ic: v.ic.clone(),
            synthesis: out.starts.iter().map(|s| s.record.clone()).collect(),
        };
        out.checks.push(Check::new(
            "certificate",
            cert.pass(),
            if cert.pass() { "MRF-PASS" } else { "MRF-FAIL" },
        ));
        out.certificate = Some(cert);
    }
    if plan.plots {
        for (name, svg) in plots::render_all(&out) {
            out.files.insert(name, svg);
        }
    }
    Ok(out)
}

fn converse_stage(out: &mut RunOutput) -> Result<()> {
    let plan = &out.plan;
    let params = ConverseParams {
        i_max: plan.i_max,
        j_max: plan.j_max,
        strip: StripTimeOptions {
            samples_per_strip: plan.samples_per_strip,
            safety_factor: plan.strip_safety,
            min_strip_time: plan.min_strip_time,
            seed: plan.seed,
            rule: plan.rule,
            ..StripTimeOptions::default()
        },
        ..ConverseParams::default()
    };
    let ctrl = toward_origin(&out.system);
    let c = build_converse(&out.system, &exp_2r_gac(), &BracketPair::identity(), &*ctrl, &params)
        .context("converse stage")?;
    let axioms = c.beta_bar.beta_bar.check_axioms();
    out.checks.push(Check::new(
        "converse: beta_bar majorant",
        axioms.is_empty() && c.beta_bar.min_margin >= 0.0,
        format!(
            "min margin {:e}, {} axiom violations",
            c.beta_bar.min_margin,
            axioms.len()
        ),
    ));
    let ys = c.ell.ell.ys();
    let increasing = ys.windows(2).all(|w| w[1] > w[0]);
    out.checks.push(Check::new(
        "converse: ell increasing",
        increasing,
        format!("{} ladder points", ys.len()),
    ));
    if plan.csv {
        out.files.insert("converse_strips.csv".into(), c.strips_csv());
        out.files.insert("converse_ell.csv".into(), c.ell_csv());
        out.files.insert("converse_phi_psi.csv".into(), c.phi_psi_csv());
        out.files.insert("converse_bumps.csv".into(), c.bumps_csv());
    }
    out.converse = Some(c);
    Ok(())
}

fn solve_stage(out: &mut RunOutput) -> Result<()> {
    let plan = out.plan.clone();
    let shape = build_shape(&plan)?;
    let sys = &out.system;
    let params = SolverParams {
        tau: plan.tau,
        fixed_point_tol: plan.fixed_point_tol,
        max_sweeps: plan.max_sweeps,
        boundary_value: plan.boundary_value,
        target_tol: plan.solver_target_tol,
    };
    let outcome = match plan.candidate {
        CandidateKind::Distance { scale } => {
            let d = sys.target_distance_fn();
            let field = GridField::from_fn(shape, &*d, plan.solver_target_tol, |x| scale * d(x));
            if plan.csv {
                let meta = vec![("candidate", plan.candidate.label())];
                out.files
                    .insert("value_function.csv".into(), field_to_csv(&field, &meta));
            }
            out.checks
                .push(Check::new("solve: candidate sampled", true, plan.candidate.label()));
            out.field = Some(field);
            return Ok(());
        }
        CandidateKind::ValueFunction => {
            let g = builtin_gamma::<f64>(&plan.gamma).expect("validated");
            let d = sys.target_distance_fn();
            let l = sys.running_cost_fn();
            let lag = move |x: &[f64], u: &[f64]| g.eval(d(x)).unwrap_or(f64::NAN) + l(x, u);
            solve_value_function(sys, &shape, &lag, params)?
        }
        CandidateKind::Converse => {
            let c = out
                .converse
                .as_ref()
                .ok_or_else(|| anyhow!("candidate converse needs the converse stage"))?;
            let ell = c.ell.ell_fn();
            let d = sys.target_distance_fn();
            let l = sys.running_cost_fn();
            let lag = move |x: &[f64], u: &[f64]| ell(d(x)) + l(x, u);
            solve_value_function(sys, &shape, &lag, params)?
        }
    };
    out.checks.push(Check::new(
        "solve: converged",
        outcome.converged,
        format!(
            "{} sweeps, last update {:e}",
            outcome.sweeps,
            outcome.history.last().copied().unwrap_or(0.0)
        ),
    ));
    if plan.csv {
        let mut meta = vec![("candidate", plan.candidate.label())];
        meta.extend(solve_metadata(&outcome));
        out.files
            .insert("value_function.csv".into(), field_to_csv(&outcome.field, &meta));
        let mut conv = String::from("sweep,update\n");
        for (k, u) in outcome.history.iter().enumerate() {
            csv_row(&mut conv, &[(k + 1).to_string(), format!("{u}")]);
        }
        out.files.insert("convergence.csv".into(), conv);
    }
    out.field = Some(outcome.field.clone());
    out.solve = Some(outcome);
    Ok(())
}

fn require_field(out: &RunOutput, stage: &str) -> Result<GridField<f64>> {
    out.field
        .clone()
        .ok_or_else(|| anyhow!("stage {stage} needs a candidate field; add the solve stage"))
}

/// Comparators and brackets shared by verify and synthesize.
fn ensure_context(out: &mut RunOutput, field: &GridField<f64>) -> Result<()> {
    if out.brackets.is_none() {
        out.brackets = Some(compute_brackets(field, out.plan.solver_target_tol).context("brackets")?);
    }
    if out.comparators.is_none() {
        let b = out.brackets.clone().expect("set above");
        let comp = match out.plan.candidate {
            CandidateKind::Converse => {
                let c = out.converse.as_ref().expect("converse candidate was solved");
                let ell = c.ell.ell_fn();
                let gamma = MonotoneFn::closure("ell_of_dplus_inv", move |s: f64| {
                    ell(b.d_plus_inv(s).unwrap_or(f64::NAN))
                });
                ComparatorPair::new(MonotoneFn::constant(1.0), gamma)
            }
            CandidateKind::ValueFunction => {
                let g = builtin_gamma::<f64>(&out.plan.gamma).expect("validated");
                let label = format!("{}_of_dplus_inv", out.plan.gamma);
                let gamma = MonotoneFn::closure(label, move |s: f64| {
                    g.eval(b.d_plus_inv(s).unwrap_or(f64::NAN)).unwrap_or(f64::NAN)
                });
                ComparatorPair::new(builtin_p0(&out.plan.p0).expect("validated"), gamma)
            }
            CandidateKind::Distance { .. } => ComparatorPair::new(
                builtin_p0(&out.plan.p0).expect("validated"),
                builtin_gamma(&out.plan.gamma).expect("validated"),
            ),
        };
        out.comparators = Some(comp);
    }
    Ok(())
}

fn default_v_max(plan: &Plan, field: &GridField<f64>) -> f64 {
    if let Some(v) = plan.v_max {
        return v;
    }
    let cap = 0.5 * plan.boundary_value;
    let m = field
        .values()
        .iter()
        .copied()
        .filter(|v| v.is_finite() && *v < cap)
        .fold(0.0, f64::max);
    if m > 0.0 {
        m
    } else {
        1.0
    }
}

fn verify_stage(out: &mut RunOutput) -> Result<()> {
    let field = require_field(out, "verify")?;
    ensure_context(out, &field)?;
    let plan = out.plan.clone();
    let comp = out.comparators.clone().expect("context");
    let brackets = out.brackets.clone().expect("context");

    let structure = check_structure(&field, plan.solver_target_tol, &StructureOptions::default());
    out.checks.push(Check::new(
        "verify: structure",
        structure.pass(),
        format!(
            "positive {}, vanishes {}, proper {}, finite {}",
            structure.positive_definite, structure.vanishes_on_target, structure.proper, structure.finite
        ),
    ));
    let sandwich = brackets.sandwich(&field);
    out.checks.push(Check::new(
        "verify: bracket sandwich",
        sandwich.violations.is_empty(),
        format!("min slack {:e}", sandwich.min_slack),
    ));
    let decrease = check_decrease(&field, &out.system, &comp, plan.tau, plan.decrease_tol)?;
    out.checks.push(Check::new(
        "verify: decrease",
        decrease.pass,
        format!(
            "worst residual {:e} at {:?}, {} violations of {} evaluated (tol {:e})",
            decrease.worst_residual.unwrap_or(f64::NAN),
            decrease.worst_point.clone().unwrap_or_default(),
            decrease.violations.len(),
            decrease.evaluated,
            decrease.tol
        ),
    ));
    let quad = QuadratureOptions::default();
    let ic = check_integrability(&comp.p0, default_v_max(&plan, &field), plan.ic_levels, None, &quad)?;
    out.checks
        .push(Check::new("verify: integrability", ic.pass, ic.verdict.clone()));
    let mut petrov = Vec::new();
    for z in &plan.petrov_points {
        petrov.push((
            z.clone(),
            petrov_min_time_bound(&field, &comp, z, plan.ic_levels, &quad)?,
        ));
    }

    if plan.csv {
        let shape = field.shape();
        let mut s = String::new();
        let cols: Vec<String> = (0..shape.dim()).map(|k| format!("x{k}")).collect();
        csv_row(&mut s, &[cols.join(","), "residual".into(), "status".into()]);
        let res = decrease.residuals.residuals.values();
        for (i, r) in res.iter().enumerate() {
            csv_row(
                &mut s,
                &[
                    nums(&shape.node(i)).join(","),
                    format!("{r}"),
                    format!("{:?}", decrease.residuals.status[i]),
                ],
            );
        }
        out.files.insert("residuals.csv".into(), s);

        let (lo, hi) = brackets.domain();
        let mut b = String::from("r,d_minus,d_plus\n");
        let lo = lo.max(1e-6 * hi);
        if hi > lo {
            for r in geometric_ladder(lo, hi, 200) {
                csv_row(&mut b, &nums(&[r, brackets.d_minus(r), brackets.d_plus(r)]));
            }
        }
        out.files.insert("brackets.csv".into(), b);

        if let Some(p) = &ic.p_table {
            let mut t = String::from("v,P\n");
            let n = p.xs().len();
            let stride = n.div_ceil(2000).max(1);
            for k in (0..n).filter(|k| k % stride == 0 || k + 1 == n) {
                csv_row(&mut t, &nums(&[p.xs()[k], p.ys()[k]]));
            }
            out.files.insert("p_table.csv".into(), t);
        }
    }
    out.verify = Some(VerifyResult {
        structure,
        sandwich,
        decrease,
        ic,
        petrov,
    });
    Ok(())
}

/// Seeded start points inside the box, off the target and inside the
/// region where the candidate is finite.
pub fn sample_starts(plan: &Plan, system: &ControlSystem<f64>, field: &GridField<f64>) -> (Vec<Vec<f64>>, usize) {
    if let Some(p) = &plan.points {
        return (p.clone(), 0);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
    let cap = 0.5 * plan.boundary_value;
    let mut starts = Vec::with_capacity(plan.starts);
    let mut rejected = 0;
    let budget = 1000 * plan.starts.max(1);
    for _ in 0..budget {
        if starts.len() == plan.starts {
            break;
        }
        let z: Vec<f64> = plan
            .lower
            .iter()
            .zip(&plan.upper)
            .map(|(a, b)| rng.gen_range(*a..*b))
            .collect();
        let ok = system.target_distance(&z) > plan.min_start_distance
            && field.try_interpolate(&z).is_some_and(|w| w.is_finite() && w < cap);
        if ok {
            starts.push(z);
        } else {
            rejected += 1;
        }
    }
    (starts, rejected)
}

fn synthesize_stage(out: &mut RunOutput) -> Result<()> {
    let field = require_field(out, "synthesize")?;
    ensure_context(out, &field)?;
    let plan = out.plan.clone();
    let comp = out.comparators.clone().expect("context");
    let brackets = out.brackets.clone().expect("context");
    let system = out.system.clone();
    let p_table = match &out.verify {
        Some(v) => v.ic.p_table.clone(),
        None => {
            let v_max = default_v_max(&plan, &field);
            check_integrability(&comp.p0, v_max, plan.ic_levels, None, &QuadratureOptions::default())?.p_table
        }
    };
    let (starts, rejected) = sample_starts(&plan, &system, &field);
    if starts.is_empty() {
        bail!("synthesize: no admissible start points");
    }
    let params = SynthesisParams {
        dt: plan.dt,
        tau: plan.synth_tau,
        halving_tol_rel: plan.halving_tol_rel,
        max_levels: plan.max_levels,
        target_tol: plan.synth_target_tol,
        safety_factor: plan.safety_factor,
        quad_tol: plan.quad_tol,
    };

    let descent = if plan.descent_rate {
        let r_max = starts.iter().map(|z| system.target_distance(z)).fold(0.0, f64::max);
        let r_max = r_max.min(brackets.domain().1);
        if r_max > plan.descent_r_min {
            match build_descent_rate(
                &brackets,
                &comp.gamma,
                r_max,
                plan.descent_r_min,
                &DescentOptions::default(),
            ) {
                Ok(rate) => {
                    let axioms = rate.beta.check_axioms();
                    out.checks.push(Check::new(
                        "synthesize: descent rate majorant",
                        axioms.is_empty() && rate.min_margin >= 0.0,
                        format!(
                            "{} samples, min margin {:e}, refined {}",
                            rate.samples_checked, rate.min_margin, rate.refined
                        ),
                    ));
                    Some(rate)
                }
                Err(e) => {
                    out.checks
                        .push(Check::new("synthesize: descent rate majorant", false, e.to_string()));
                    None
                }
            }
        } else {
            None
        }
    } else {
        None
    };

    let results: Vec<Result<StartResult>> = starts
        .par_iter()
        .map(|z| {
            let s = synthesize_level_halving(&system, &field, &comp, &brackets, p_table.as_ref(), z, &params)?;
            let so = check_superoptimality(&s.trajectory, &field, &system, &comp)?;
            let dz = system.target_distance(z);
            let descent_excess = descent.as_ref().filter(|r| dz <= r.r_max).map(|r| {
                s.trajectory
                    .times
                    .iter()
                    .zip(&s.trajectory.states)
                    .map(|(t, x)| system.target_distance(x) - r.beta.value(dz, *t))
                    .fold(f64::NEG_INFINITY, f64::max)
            });
            let record = SynthesisRecord {
                start: z.clone(),
                segments: s.segments.clone(),
                summary: s.summary.clone(),
                superoptimality_residual: so.residual,
            };
            Ok(StartResult {
                start: z.clone(),
                synthesis: s,
                record,
                descent_excess,
            })
        })
        .collect();
    let results: Vec<StartResult> = results.into_iter().collect::<Result<_>>()?;

    let passed = results.iter().filter(|r| r.record.pass()).count();
    out.checks.push(Check::new(
        "synthesize: level halving",
        passed == results.len(),
        format!(
            "{passed}/{} starts pass ({rejected} candidates rejected)",
            results.len()
        ),
    ));
    if descent.is_some() {
        let worst = results
            .iter()
            .filter_map(|r| r.descent_excess)
            .fold(f64::NEG_INFINITY, f64::max);
        out.checks.push(Check::new(
            "synthesize: descent envelope",
            worst <= 1e-12,
            format!("max d(x(t)) - beta(d(z), t) = {worst:e}"),
        ));
    }

    if plan.csv {
        write_synthesis_csvs(out, &results, descent.as_ref());
    }
    out.descent = descent;
    out.starts = results;
    Ok(())
}

fn write_synthesis_csvs(out: &mut RunOutput, results: &[StartResult], descent: Option<&DescentRate<f64>>) {
    let dim = out.system.state_dim();
    let cdim = out.system.control_dim();
    let xs: Vec<String> = (0..dim).map(|k| format!("x{k}")).collect();
    let zs: Vec<String> = (0..dim).map(|k| format!("z{k}")).collect();
    let us: Vec<String> = (0..cdim).map(|k| format!("u{k}")).collect();
    let field = out.field.as_ref().expect("synthesis ran on a field");

    let mut starts = String::new();
    csv_row(
        &mut starts,
        &[
            "start".into(),
            zs.join(","),
            "d".into(),
            "W".into(),
            "reached".into(),
            "terminal".into(),
            "segments".into(),
            "total_time".into(),
            "total_cost".into(),
            "cost_bound".into(),
            "superoptimality".into(),
            "pass".into(),
        ],
    );
    let mut segs = String::from(
        "start,segment,start_time,duration,cost,level_before,level_after,nominal_level,peak_level,time_bound,cost_bound_rhs,rel1,rel2,rel3\n",
    );
    let mut traj = String::new();
    csv_row(
        &mut traj,
        &[
            "start".into(),
            "t".into(),
            xs.join(","),
            us.join(","),
            "d".into(),
            "W".into(),
            "beta".into(),
        ],
    );
    for (k, r) in results.iter().enumerate() {
        let s = &r.record.summary;
        csv_row(
            &mut starts,
            &[
                k.to_string(),
                nums(&r.start).join(","),
                format!("{}", s.distance_start),
                format!("{}", s.w_start),
                s.reached_target.to_string(),
                s.terminal.as_str().to_string(),
                r.record.segments.len().to_string(),
                format!("{}", s.total_time),
                format!("{}", s.total_cost),
                format!("{}", s.cost_bound.unwrap_or(f64::NAN)),
                format!("{}", r.record.superoptimality_residual),
                r.record.pass().to_string(),
            ],
        );
        for g in &r.record.segments {
            csv_row(
                &mut segs,
                &[
                    k.to_string(),
                    g.index.to_string(),
                    nums(&[
                        g.start_time,
                        g.duration,
                        g.cost,
                        g.level_before,
                        g.level_after,
                        g.nominal_level,
                        g.peak_level,
                        g.time_bound,
                        g.cost_bound_rhs,
                    ])
                    .join(","),
                    g.rel1.to_string(),
                    g.rel2.to_string(),
                    g.rel3.to_string(),
                ],
            );
        }
        let t = &r.synthesis.trajectory;
        let dz = s.distance_start;
        for (i, (time, x)) in t.times.iter().zip(&t.states).enumerate() {
            let u = t.controls.get(i).cloned().unwrap_or_else(|| vec![f64::NAN; cdim]);
            let beta = descent
                .filter(|d| dz <= d.r_max)
                .map_or(f64::NAN, |d| d.beta.value(dz, *time));
            csv_row(
                &mut traj,
                &[
                    k.to_string(),
                    format!("{time}"),
                    nums(x).join(","),
                    nums(&u).join(","),
                    format!("{}", out.system.target_distance(x)),
                    format!("{}", field.try_interpolate(x).unwrap_or(f64::NAN)),
                    format!("{beta}"),
                ],
            );
        }
    }
    out.files.insert("starts.csv".into(), starts);
    out.files.insert("segments.csv".into(), segs);
    out.files.insert("trajectories.csv".into(), traj);
    if let Some(d) = descent {
        let mut s = String::from("R,Gamma,t1\n");
        for ((r, g), (_, t1)) in d.gamma_cap.iter().zip(&d.first_switch) {
            csv_row(&mut s, &nums(&[*r, *g, *t1]));
        }
        out.files.insert("descent_rate.csv".into(), s);
    }
}
