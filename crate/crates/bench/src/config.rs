//! TOML run configuration and its resolved plan.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::{bail, Context, Result};
use mrf_core::catalog;
use mrf_core::comparators::{builtin_gamma, builtin_p0, GAMMA_NAMES, P0_NAMES};
use mrf_core::converse::CrossingRule;
use serde::Deserialize;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub system: SystemSection,
    #[serde(default)]
    pub grid: GridSection,
    #[serde(default)]
    pub comparators: ComparatorSection,
    #[serde(default)]
    pub candidate: CandidateSection,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub verify: VerifySection,
    #[serde(default)]
    pub synthesis: SynthesisSection,
    #[serde(default)]
    pub converse: ConverseSection,
    #[serde(default)]
    pub outputs: OutputSection,
    #[serde(default)]
    pub run: RunSection,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSection {
    pub name: String,
    pub controls: Option<usize>,
    pub lower: Option<Vec<f64>>,
    pub upper: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub h: Option<f64>,
    pub resolution: Option<Vec<usize>>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComparatorSection {
    pub p0: Option<String>,
    pub gamma: Option<String>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CandidateSection {
    /// `value_function`, `distance` or `converse`.
    pub kind: Option<String>,
    /// Multiplier of the distance candidate.
    pub scale: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    pub tau: Option<f64>,
    pub fixed_point_tol: Option<f64>,
    pub max_sweeps: Option<usize>,
    pub boundary_value: Option<f64>,
    pub target_tol: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifySection {
    pub decrease_tol: Option<f64>,
    pub ic_levels: Option<usize>,
    pub v_max: Option<f64>,
    pub petrov_points: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthesisSection {
    pub starts: Option<usize>,
    pub points: Option<Vec<Vec<f64>>>,
    pub min_start_distance: Option<f64>,
    pub dt: Option<f64>,
    pub tau: Option<f64>,
    pub halving_tol_rel: Option<f64>,
    pub max_levels: Option<usize>,
    pub target_tol: Option<f64>,
    pub safety_factor: Option<f64>,
    pub quad_tol: Option<f64>,
    pub descent_rate: Option<bool>,
    pub descent_r_min: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConverseSection {
    pub i_max: Option<i32>,
    pub j_max: Option<usize>,
    pub samples_per_strip: Option<usize>,
    pub safety_factor: Option<f64>,
    pub min_strip_time: Option<f64>,
    /// `midpoint` or `strip_entry`.
    pub rule: Option<String>,
    /// Controllability data; only `exp_2r` is built in.
    pub gac: Option<String>,
    /// Open-loop strategy; only `toward_origin` is built in.
    pub controller: Option<String>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub csv: Option<bool>,
    pub plots: Option<bool>,
    pub report: Option<bool>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub stages: Option<Vec<String>>,
    pub seed: Option<u64>,
    pub workers: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Converse,
    Solve,
    Verify,
    Synthesize,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Converse => "converse",
            Stage::Solve => "solve",
            Stage::Verify => "verify",
            Stage::Synthesize => "synthesize",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "converse" => Some(Stage::Converse),
            "solve" => Some(Stage::Solve),
            "verify" => Some(Stage::Verify),
            "synthesize" => Some(Stage::Synthesize),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CandidateKind {
    /// Solve with the running cost `gamma(d) + l`; certified with `gamma` of `d_plus^{-1}`.
    ValueFunction,
    /// `W = scale * d`.
    Distance { scale: f64 },
    /// Solve with the running cost `ell(d) + l` from the converse construction.
    Converse,
}

impl CandidateKind {
    pub fn label(&self) -> String {
        match self {
            CandidateKind::ValueFunction => "value_function".into(),
            CandidateKind::Distance { scale } => format!("distance (scale {scale})"),
            CandidateKind::Converse => "converse".into(),
        }
    }

    pub fn needs_solve(&self) -> bool {
        !matches!(self, CandidateKind::Distance { .. })
    }
}

/// Fully resolved run plan; every default is filled in.
#[derive(Debug, Clone, PartialEq)]
pub struct Plan {
    pub system: String,
    pub controls: usize,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub h: f64,
    pub resolution: Option<Vec<usize>>,
    pub p0: String,
    pub gamma: String,
    pub candidate: CandidateKind,
    pub tau: f64,
    pub fixed_point_tol: f64,
    pub max_sweeps: usize,
    pub boundary_value: f64,
    pub solver_target_tol: f64,
    pub decrease_tol: f64,
    pub ic_levels: usize,
    pub v_max: Option<f64>,
    pub petrov_points: Vec<Vec<f64>>,
    pub starts: usize,
    pub points: Option<Vec<Vec<f64>>>,
    pub min_start_distance: f64,
    pub dt: f64,
    pub synth_tau: f64,
    pub halving_tol_rel: f64,
    pub max_levels: usize,
    pub synth_target_tol: f64,
    pub safety_factor: f64,
    pub quad_tol: f64,
    pub descent_rate: bool,
    pub descent_r_min: f64,
    pub i_max: i32,
    pub j_max: usize,
    pub samples_per_strip: usize,
    pub strip_safety: f64,
    pub min_strip_time: f64,
    pub rule: CrossingRule,
    pub gac: String,
    pub controller: String,
    pub csv: bool,
    pub plots: bool,
    pub report: bool,
    pub stages: Vec<Stage>,
    pub seed: u64,
    pub workers: Option<usize>,
}

pub fn parse_config(text: &str) -> Result<Plan> {
    let cfg: Config = toml::from_str(text).context("config parse error")?;
    resolve(cfg)
}

pub fn load_config(path: &Path) -> Result<Plan> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse_config(&text).with_context(|| format!("in {}", path.display()))
}

fn positive(name: &str, v: f64) -> Result<f64> {
    if !(v > 0.0) || !v.is_finite() {
        bail!("{name}: must be a positive number, got {v}");
    }
    Ok(v)
}

fn resolve(cfg: Config) -> Result<Plan> {
    let name = cfg.system.name.clone();
    if !catalog::SYSTEM_NAMES.contains(&name.as_str()) {
        bail!(
            "system.name: unknown system `{name}` (known: {})",
            catalog::SYSTEM_NAMES.join(", ")
        );
    }
    let (dl, du) = catalog::default_box(&name).expect("catalog name");
    let lower = cfg.system.lower.unwrap_or(dl);
    let upper = cfg.system.upper.unwrap_or(du);
    if lower.len() != upper.len() || lower.iter().zip(&upper).any(|(a, b)| !(a < b)) {
        bail!("system.lower/upper: need matching lengths with lower < upper");
    }
    let controls = cfg.system.controls.unwrap_or_else(|| catalog::default_controls(&name));
    if controls == 0 {
        bail!("system.controls: must be positive");
    }
    let dim = lower.len();

    let h = positive("grid.h", cfg.grid.h.unwrap_or(if dim == 1 { 0.01 } else { 0.02 }))?;
    if let Some(res) = &cfg.grid.resolution {
        if res.len() != dim || res.iter().any(|&n| n < 2) {
            bail!("grid.resolution: need {dim} entries, each at least 2");
        }
    }

    let p0 = cfg.comparators.p0.unwrap_or_else(|| "one".into());
    if builtin_p0::<f64>(&p0).is_none() {
        bail!("comparators.p0: unknown `{p0}` (known: {})", P0_NAMES.join(", "));
    }
    let gamma = cfg.comparators.gamma.unwrap_or_else(|| "saturating".into());
    if builtin_gamma::<f64>(&gamma).is_none() {
        bail!(
            "comparators.gamma: unknown `{gamma}` (known: {})",
            GAMMA_NAMES.join(", ")
        );
    }

    let candidate = match cfg.candidate.kind.as_deref().unwrap_or("value_function") {
        "value_function" => CandidateKind::ValueFunction,
        "distance" => CandidateKind::Distance {
            scale: positive("candidate.scale", cfg.candidate.scale.unwrap_or(1.0))?,
        },
        "converse" => CandidateKind::Converse,
        other => bail!("candidate.kind: unknown `{other}` (value_function, distance, converse)"),
    };
    if cfg.candidate.scale.is_some() && !matches!(candidate, CandidateKind::Distance { .. }) {
        bail!("candidate.scale: only used with kind = \"distance\"");
    }

    let tau = positive("solver.tau", cfg.solver.tau.unwrap_or(h))?;
    let fixed_point_tol = positive("solver.fixed_point_tol", cfg.solver.fixed_point_tol.unwrap_or(1e-9))?;
    let max_sweeps = cfg.solver.max_sweeps.unwrap_or(20_000);
    if max_sweeps == 0 {
        bail!("solver.max_sweeps: must be positive");
    }
    let boundary_value = positive("solver.boundary_value", cfg.solver.boundary_value.unwrap_or(1e6))?;
    let solver_target_tol = positive("solver.target_tol", cfg.solver.target_tol.unwrap_or(1e-9))?;

    let decrease_tol = match cfg.verify.decrease_tol {
        Some(t) if t >= 0.0 => t,
        Some(t) => bail!("verify.decrease_tol: must be nonnegative, got {t}"),
        None if candidate.needs_solve() => 2.0 * fixed_point_tol / tau,
        None => 0.0,
    };
    let ic_levels = cfg.verify.ic_levels.unwrap_or(6);
    if ic_levels == 0 {
        bail!("verify.ic_levels: must be positive");
    }
    let v_max = cfg.verify.v_max.map(|v| positive("verify.v_max", v)).transpose()?;
    let petrov_points = cfg.verify.petrov_points.unwrap_or_default();
    if petrov_points.iter().any(|p| p.len() != dim) {
        bail!("verify.petrov_points: every point needs {dim} coordinates");
    }

    let s = cfg.synthesis;
    if let Some(pts) = &s.points {
        if pts.iter().any(|p| p.len() != dim) {
            bail!("synthesis.points: every point needs {dim} coordinates");
        }
    }
    let rule = match cfg.converse.rule.as_deref() {
        None => CrossingRule::Midpoint,
        Some(r) => {
            CrossingRule::parse(r).with_context(|| format!("converse.rule: unknown `{r}` (midpoint, strip_entry)"))?
        }
    };
    let gac = cfg.converse.gac.unwrap_or_else(|| "exp_2r".into());
    if gac != "exp_2r" {
        bail!("converse.gac: unknown `{gac}` (exp_2r)");
    }
    let controller = cfg.converse.controller.unwrap_or_else(|| "toward_origin".into());
    if controller != "toward_origin" {
        bail!("converse.controller: unknown `{controller}` (toward_origin)");
    }
    let i_max = cfg.converse.i_max.unwrap_or(16);
    if i_max < 2 {
        bail!("converse.i_max: must be at least 2");
    }
    let j_max = cfg.converse.j_max.unwrap_or(5);
    if j_max < 2 {
        bail!("converse.j_max: must be at least 2");
    }

    let stages = match cfg.run.stages {
        Some(list) => {
            let mut out = Vec::new();
            for s in &list {
                out.push(Stage::parse(s).with_context(|| {
                    format!("run.stages: unknown stage `{s}` (converse, solve, verify, synthesize)")
                })?);
            }
            out
        }
        None => {
            let mut v = vec![Stage::Solve, Stage::Verify, Stage::Synthesize];
            if candidate == CandidateKind::Converse {
                v.insert(0, Stage::Converse);
            }
            v
        }
    };
    if let Some(0) = cfg.run.workers {
        bail!("run.workers: must be positive");
    }

    Ok(Plan {
        system: name,
        controls,
        lower,
        upper,
        h,
        resolution: cfg.grid.resolution,
        p0,
        gamma,
        candidate,
        tau,
        fixed_point_tol,
        max_sweeps,
        boundary_value,
        solver_target_tol,
        decrease_tol,
        ic_levels,
        v_max,
        petrov_points,
        starts: s.starts.unwrap_or(50),
        points: s.points,
        min_start_distance: positive("synthesis.min_start_distance", s.min_start_distance.unwrap_or(1e-3))?,
        dt: positive("synthesis.dt", s.dt.unwrap_or(h))?,
        synth_tau: positive("synthesis.tau", s.tau.unwrap_or(tau))?,
        halving_tol_rel: positive("synthesis.halving_tol_rel", s.halving_tol_rel.unwrap_or(1e-6))?,
        max_levels: s.max_levels.unwrap_or(64),
        synth_target_tol: positive("synthesis.target_tol", s.target_tol.unwrap_or(1e-6))?,
        safety_factor: positive("synthesis.safety_factor", s.safety_factor.unwrap_or(5.0))?,
        quad_tol: positive("synthesis.quad_tol", s.quad_tol.unwrap_or(1e-6))?,
        descent_rate: s.descent_rate.unwrap_or(true),
        descent_r_min: positive("synthesis.descent_r_min", s.descent_r_min.unwrap_or(1e-3))?,
        i_max,
        j_max,
        samples_per_strip: cfg.converse.samples_per_strip.unwrap_or(32),
        strip_safety: positive("converse.safety_factor", cfg.converse.safety_factor.unwrap_or(1.5))?,
        min_strip_time: positive("converse.min_strip_time", cfg.converse.min_strip_time.unwrap_or(1e-2))?,
        rule,
        gac,
        controller,
        csv: cfg.outputs.csv.unwrap_or(true),
        plots: cfg.outputs.plots.unwrap_or(true),
        report: cfg.outputs.report.unwrap_or(true),
        stages,
        seed: cfg.run.seed.unwrap_or(0),
        workers: cfg.run.workers,
    })
}

fn list(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x}")).collect();
    format!("[{}]", parts.join(", "))
}

impl Plan {
    pub fn has(&self, stage: Stage) -> bool {
        self.stages.contains(&stage)
    }

    /// Every resolved value, one `key = value` line each.
    pub fn echo(&self) -> String {
        let mut s = String::new();
        let stages: Vec<&str> = self.stages.iter().map(|s| s.as_str()).collect();
        let _ = writeln!(s, "system.name = {}", self.system);
        let _ = writeln!(s, "system.controls = {}", self.controls);
        let _ = writeln!(s, "system.lower = {}", list(&self.lower));
        let _ = writeln!(s, "system.upper = {}", list(&self.upper));
        let _ = writeln!(s, "grid.h = {}", self.h);
        if let Some(r) = &self.resolution {
            let _ = writeln!(s, "grid.resolution = {r:?}");
        }
        let _ = writeln!(s, "comparators.p0 = {}", self.p0);
        let _ = writeln!(s, "comparators.gamma = {}", self.gamma);
        let _ = writeln!(s, "candidate = {}", self.candidate.label());
        let _ = writeln!(s, "solver.tau = {}", self.tau);
        let _ = writeln!(s, "solver.fixed_point_tol = {}", self.fixed_point_tol);
        let _ = writeln!(s, "solver.max_sweeps = {}", self.max_sweeps);
        let _ = writeln!(s, "solver.boundary_value = {}", self.boundary_value);
        let _ = writeln!(s, "solver.target_tol = {}", self.solver_target_tol);
        let _ = writeln!(s, "verify.decrease_tol = {}", self.decrease_tol);
        let _ = writeln!(s, "verify.ic_levels = {}", self.ic_levels);
        let _ = writeln!(
            s,
            "verify.v_max = {}",
            self.v_max.map_or("max(W)".into(), |v| v.to_string())
        );
        let _ = writeln!(s, "verify.petrov_points = {}", self.petrov_points.len());
        match &self.points {
            Some(p) => {
                let _ = writeln!(s, "synthesis.points = {}", p.len());
            }
            None => {
                let _ = writeln!(s, "synthesis.starts = {}", self.starts);
            }
        }
        let _ = writeln!(s, "synthesis.min_start_distance = {}", self.min_start_distance);
        let _ = writeln!(s, "synthesis.dt = {}", self.dt);
        let _ = writeln!(s, "synthesis.tau = {}", self.synth_tau);
        let _ = writeln!(s, "synthesis.halving_tol_rel = {}", self.halving_tol_rel);
        let _ = writeln!(s, "synthesis.max_levels = {}", self.max_levels);
        let _ = writeln!(s, "synthesis.target_tol = {}", self.synth_target_tol);
        let _ = writeln!(s, "synthesis.safety_factor = {}", self.safety_factor);
        let _ = writeln!(s, "synthesis.quad_tol = {}", self.quad_tol);
        let _ = writeln!(s, "synthesis.descent_rate = {}", self.descent_rate);
        let _ = writeln!(s, "synthesis.descent_r_min = {}", self.descent_r_min);
        let _ = writeln!(s, "converse.i_max = {}", self.i_max);
        let _ = writeln!(s, "converse.j_max = {}", self.j_max);
        let _ = writeln!(s, "converse.samples_per_strip = {}", self.samples_per_strip);
        let _ = writeln!(s, "converse.safety_factor = {}", self.strip_safety);
        let _ = writeln!(s, "converse.min_strip_time = {}", self.min_strip_time);
        let _ = writeln!(s, "converse.rule = {}", self.rule.as_str());
        let _ = writeln!(s, "converse.gac = {}", self.gac);
        let _ = writeln!(s, "converse.controller = {}", self.controller);
        let _ = writeln!(s, "outputs.csv = {}", self.csv);
        let _ = writeln!(s, "outputs.plots = {}", self.plots);
        let _ = writeln!(s, "outputs.report = {}", self.report);
        let _ = writeln!(s, "run.stages = [{}]", stages.join(", "));
        let _ = writeln!(s, "run.seed = {}", self.seed);
        let _ = writeln!(
            s,
            "run.workers = {}",
            self.workers.map_or("default".into(), |w| w.to_string())
        );
        s
    }
}
