//! Segmentation proofreading automation: block-parallel adjacency
//! extraction, merge-candidate evidence, from-scratch merge classifiers,
//! workflow engine (triage, orphan linking, completeness) and evaluation.

pub mod adjacency;
pub mod error;
pub mod evalkit;
pub mod evidence;
pub mod io;
pub mod models;
pub mod pipeline;
pub mod synapse;
pub mod synth;
pub mod taskserve;
pub mod volume;
pub mod workflow;

pub use adjacency::{AdjacencyEdge, CandidateFilter, CandidateId, MergeCandidate, Workflow};
pub use error::{Error, Result};
pub use synapse::SynapseRecord;
pub use volume::{GrayVolume, Grid3, LabelVolume, Voxel, VolumeMeta};
pub use workflow::{BodyState, Decision, DecisionLog, DecisionSource, Verdict};
