//! Configuration, stage orchestration, reports and SVG figures around
//! `mrf-core`. The `mrf` binary is a thin wrapper over [`pipeline::run`].

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod pipeline;
pub mod plots;
pub mod report;

pub use config::{load_config, parse_config, Plan, Stage};
pub use pipeline::{run, Check, RunOutput};

/// Stage list for a CLI subcommand; the converse stage is prepended when the
/// candidate needs it.
pub fn stages_for(command: &str, plan: &Plan) -> Vec<Stage> {
    let mut stages = match command {
        "solve" => vec![Stage::Solve],
        "verify" => vec![Stage::Solve, Stage::Verify],
        "synthesize" => vec![Stage::Solve, Stage::Synthesize],
        "converse" => vec![Stage::Converse],
        _ => plan.stages.clone(),
    };
    if plan.candidate == config::CandidateKind::Converse
        && stages.contains(&Stage::Solve)
        && !stages.contains(&Stage::Converse)
    {
        stages.insert(0, Stage::Converse);
    }
    stages
}
