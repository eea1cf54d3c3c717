//! Per-candidate model inputs: the local evidence cube, point-cloud shape
//! descriptors and synapse connectivity features.

mod connectivity;
mod shape;
mod tensor;

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use connectivity::{connectivity_features, swap_sides, SynapseGraph, CONN_LEN, DEFAULT_TOP_K};
pub use shape::{
    sample_points, shape_descriptor, symmetric_eigen3, PointIndex, PointSets, DEFAULT_CONTEXT_EDGE,
    DEFAULT_N_POINTS, DEFAULT_POINT_FACTOR, RADIAL_BINS, SHAPE_LEN,
};
pub use tensor::{extract_evidence, EvidenceTensor, CHANNELS, DEFAULT_EDGE, DEFAULT_PROX_RADIUS_NM};

use crate::adjacency::{CandidateId, MergeCandidate};
use crate::error::{Error, Result};
use crate::io::write_jsonl;
use crate::workflow::BodyState;

/// One line of `features.jsonl`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureRecord {
    pub candidate_id: CandidateId,
    pub shape: Vec<f64>,
    pub connectivity: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureParams {
    pub context_edge: u32,
    pub point_factor: u32,
    pub n_points: usize,
    pub top_k: usize,
}

impl Default for FeatureParams {
    fn default() -> Self {
        FeatureParams {
            context_edge: DEFAULT_CONTEXT_EDGE,
            point_factor: DEFAULT_POINT_FACTOR,
            n_points: DEFAULT_N_POINTS,
            top_k: DEFAULT_TOP_K,
        }
    }
}

/// Shape and connectivity features for one candidate. The point sample is
/// seeded with `seed ^ id`.
pub fn candidate_features(
    points: &PointIndex,
    graph: &SynapseGraph,
    bodies: &BodyState,
    types: &HashMap<u64, u32>,
    cand: &MergeCandidate,
    params: &FeatureParams,
    seed: u64,
) -> Result<FeatureRecord> {
    let sets = sample_points(points, cand, params.context_edge, params.n_points, seed ^ cand.id.0)?;
    let shape = shape_descriptor(&sets, cand, params.context_edge);
    let conn = connectivity_features(graph, bodies, types, cand.edge.a, cand.edge.b, params.top_k)?;
    Ok(FeatureRecord {
        candidate_id: cand.id,
        shape: shape.to_vec(),
        connectivity: conn.to_vec(),
    })
}

pub fn write_features(path: &Path, records: &[FeatureRecord]) -> Result<()> {
    write_jsonl(path, records)
}

pub fn read_features(path: &Path) -> Result<Vec<FeatureRecord>> {
    let recs: Vec<FeatureRecord> = crate::io::read_jsonl(path)?;
    for r in &recs {
        if r.shape.len() != SHAPE_LEN || r.connectivity.len() != CONN_LEN {
            return Err(Error::LayoutMismatch(format!(
                "candidate {} has {} shape and {} connectivity entries",
                r.candidate_id,
                r.shape.len(),
                r.connectivity.len()
            )));
        }
    }
    Ok(recs)
}

/// Writes tensors as little-endian f32 records (`4 × edge³` values each,
/// channel-major) to `bin`, and `candidate_id\toffset` lines to `index`.
pub fn write_evidence_bin(bin: &Path, index: &Path, tensors: &[(CandidateId, EvidenceTensor)]) -> Result<()> {
    let mut w = BufWriter::new(File::create(bin).map_err(|e| Error::io(bin, e))?);
    let mut idx = String::from("candidate_id\toffset\n");
    let mut offset = 0u64;
    for (id, t) in tensors {
        idx.push_str(&format!("{id}\t{offset}\n"));
        for v in t.to_dense() {
            w.write_all(&v.to_le_bytes()).map_err(|e| Error::io(bin, e))?;
        }
        offset += (t.to_dense().len() * 4) as u64;
    }
    w.flush().map_err(|e| Error::io(bin, e))?;
    crate::io::write_text(index, &idx)
}

/// Reads back the dense records of [`write_evidence_bin`].
pub fn read_evidence_bin(bin: &Path, index: &Path, edge: u32) -> Result<Vec<(CandidateId, Vec<f32>)>> {
    let text = std::fs::read_to_string(index).map_err(|e| Error::io(index, e))?;
    let mut r = BufReader::new(File::open(bin).map_err(|e| Error::io(bin, e))?);
    let n = CHANNELS * (edge as usize).pow(3);
    let mut out = Vec::new();
    for line in text.lines().skip(1) {
        let id: CandidateId = line
            .split('\t')
            .next()
            .unwrap_or_default()
            .parse()
            .map_err(|_| Error::InvalidArgument(format!("bad evidence index line {line:?}")))?;
        let mut buf = vec![0u8; n * 4];
        r.read_exact(&mut buf).map_err(|e| Error::io(bin, e))?;
        out.push((id, buf.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect()));
    }
    Ok(out)
}
