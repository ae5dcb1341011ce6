use thiserror::Error;

/// Errors raised by the numerical routines.
///
/// Coordinates and times are carried as `f64` so the error type does not depend
/// on the scalar parameter of the routine that produced it.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum MrfError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("point {point:?} lies outside the grid box")]
    OutOfDomain { point: Vec<f64> },

    #[error("integration diverged (non-finite state) after t = {last_time}")]
    IntegrationDiverged { last_time: f64 },

    #[error("degenerate stencil: no interior node has an in-box step for any control (tau = {tau})")]
    DegenerateStencil { tau: f64 },

    #[error("comparator table does not cover value {value} (covered range [{lo}, {hi}])")]
    RangeExtension { value: f64, lo: f64, hi: f64 },

    #[error("value {value} outside table range [{lo}, {hi}]")]
    Range { value: f64, lo: f64, hi: f64 },

    #[error("no evaluable control at {position:?}: every stencil leaves the box")]
    Stuck { position: Vec<f64> },

    #[error("synthesis stalled in segment {segment}: elapsed {elapsed} exceeds window {window}")]
    SynthesisStalled { segment: usize, elapsed: f64, window: f64 },

    #[error("KL majorization failed at (r = {r}, t = {t}): beta = {beta} < b = {b}")]
    Majorization { r: f64, t: f64, beta: f64, b: f64 },

    #[error("invalid KL function: {0}")]
    InvalidKl(String),

    #[error("inverse lookup failed: {0}")]
    Inverse(String),

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("controller inadequate: start {start:?} did not advance strip {strip} within {cap}")]
    ControllerInadequate { start: Vec<f64>, strip: i32, cap: f64 },

    #[error("ladder does not cover [{lo}, {hi}]")]
    Refinement { lo: f64, hi: f64 },
}

pub type Result<T, E = MrfError> = std::result::Result<T, E>;
