//! Proofreading workflow engine: body state, decision log replay, focused
//! merge triage, orphan-link automation and connectivity completeness.

mod bodies;
mod calibrate;
mod completeness;
mod log;
mod orphan;
mod triage;

pub use bodies::{BodySnapshot, BodyState};
pub use calibrate::{calibrate_threshold, one_sided_z, wilson_upper};
pub use completeness::{completeness, completeness_counts, CompletenessCounts};
pub use log::{
    replay, validate_sequence, Clock, Decision, DecisionLog, DecisionSource, LogicalClock, SystemClock,
    Verdict,
};
pub use orphan::{orphan_link_run, OrphanPolicy, OrphanProposal, OrphanRun};
pub use triage::{triage, TriageResult};
