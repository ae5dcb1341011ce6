//! Evidence bundle for a candidate minimum restraint function.

use crate::scalar::Real;
use crate::synth::{SegmentCertificate, SynthesisSummary};
use crate::verify::{BracketPair, DecreaseReport, IcReport, StructureReport};

/// Synthesis evidence from one start point.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthesisRecord<T> {
    pub start: Vec<T>,
    pub segments: Vec<SegmentCertificate<T>>,
    pub summary: SynthesisSummary<T>,
    pub superoptimality_residual: T,
}

impl<T: Real> SynthesisRecord<T> {
    pub fn pass(&self) -> bool {
        let s = &self.summary;
        s.reached_target
            && s.rel1_ok
            && s.rel2_ok
            && s.three_halves_ok
            && s.within_cost_bound.unwrap_or(true)
            && self.superoptimality_residual <= s.w_start * T::lit(0.5) + T::lit(1e-4)
    }
}

#[derive(Debug, Clone)]
pub struct MrfCertificate<T> {
    pub structure: StructureReport<T>,
    pub decrease: DecreaseReport<T>,
    pub brackets: Option<BracketPair<T>>,
    pub ic: IcReport<T>,
    pub synthesis: Vec<SynthesisRecord<T>>,
}

impl<T: Real> MrfCertificate<T> {
    /// PASS needs every part to pass, no violating node, and a finite P table.
    pub fn pass(&self) -> bool {
        self.structure.pass()
            && self.decrease.pass
            && self.decrease.violations.is_empty()
            && self.brackets.is_some()
            && self.ic.pass
            && self
                .ic
                .p_table
                .as_ref()
                .is_some_and(|p| p.ys().iter().all(|v| v.is_finite()))
            && self.synthesis.iter().all(|s| s.pass())
    }
}
