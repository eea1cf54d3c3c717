//! Segment spatial-adjacency table and merge-candidate generation.
//!
//! Contact is 6-connected face adjacency between distinct non-zero labels.
//! The volume is processed in independent blocks; each block owns the voxel
//! pairs whose first voxel lies inside it (its neighbour may sit one voxel
//! past the positive faces), so per-block tables reduce without double
//! counting.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::{BufRead, Write};
use std::ops::RangeInclusive;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::volume::{check_factor, downsample_grid, Grid3, LabelVolume, Voxel};
use crate::workflow::BodyState;

pub const MIN_BLOCK_EDGE: u32 = 16;
pub const DEFAULT_BLOCK_EDGE: u32 = 64;
/// Saturation constant of the contact-area baseline score.
pub const BASELINE_KAPPA: f64 = 50.0;
pub const TSV_HEADER: &str = "a\tb\tcontact_voxels\trep_x\trep_y\trep_z\tfactor";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdjacencyEdge {
    pub a: u64,
    pub b: u64,
    pub contact_voxels: u64,
    /// Full-resolution representative location on the `a` side of the contact.
    pub rep_location: Voxel,
    pub factor: u32,
}

impl AdjacencyEdge {
    pub fn pair(&self) -> (u64, u64) {
        (self.a, self.b)
    }
}

/// Stable 64-bit candidate identifier, rendered as 16 hex digits.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CandidateId(pub u64);

impl CandidateId {
    pub fn for_edge(a: u64, b: u64, rep: Voxel) -> Self {
        let mut h = Sha256::new();
        h.update(a.to_le_bytes());
        h.update(b.to_le_bytes());
        for c in rep.as_array() {
            h.update(c.to_le_bytes());
        }
        let digest = h.finalize();
        CandidateId(u64::from_be_bytes(digest[..8].try_into().expect("8 bytes")))
    }
}

impl fmt::Display for CandidateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:016x}", self.0)
    }
}

impl FromStr for CandidateId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        if s.len() != 16 {
            return Err(Error::UnknownCandidate(s.to_string()));
        }
        u64::from_str_radix(s, 16)
            .map(CandidateId)
            .map_err(|_| Error::UnknownCandidate(s.to_string()))
    }
}

impl Serialize for CandidateId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for CandidateId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Workflow {
    Focused,
    Orphan,
}

impl FromStr for Workflow {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "focused" => Ok(Workflow::Focused),
            "orphan" => Ok(Workflow::Orphan),
            other => Err(Error::InvalidArgument(format!("unknown workflow {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MergeCandidate {
    pub id: CandidateId,
    pub edge: AdjacencyEdge,
    pub scores: BTreeMap<String, f64>,
    pub workflow: Workflow,
}

impl MergeCandidate {
    pub fn new(edge: AdjacencyEdge, workflow: Workflow) -> Self {
        let id = CandidateId::for_edge(edge.a, edge.b, edge.rep_location);
        let mut scores = BTreeMap::new();
        scores.insert(
            "baseline".to_string(),
            baseline_score(edge.contact_voxels, BASELINE_KAPPA),
        );
        MergeCandidate {
            id,
            edge,
            scores,
            workflow,
        }
    }

    pub fn score(&self, source: &str) -> Option<f64> {
        self.scores.get(source).copied()
    }
}

pub fn baseline_score(contact_voxels: u64, kappa: f64) -> f64 {
    let c = contact_voxels as f64;
    c / (c + kappa)
}

#[derive(Clone, Debug, PartialEq)]
pub enum CandidateFilter {
    /// Every edge with at least `min_contact` contact voxels.
    Focused { min_contact: u64 },
    /// Edges between a non-identified body and an identified one. When
    /// `weight` is set the orphan side's synapse weight must fall inside it.
    Orphan { weight: Option<RangeInclusive<u64>> },
}

#[derive(Clone, Copy)]
struct Acc {
    contact: u64,
    rep_score: u64,
    rep: [u32; 3],
}

impl Acc {
    fn offer_rep(&mut self, score: u64, v: [u32; 3]) {
        if score > self.rep_score || (score == self.rep_score && v < self.rep) {
            self.rep_score = score;
            self.rep = v;
        }
    }

    fn merge(&mut self, other: &Acc) {
        self.contact += other.contact;
        self.offer_rep(other.rep_score, other.rep);
    }
}

const FACES: [[i64; 3]; 6] = [
    [1, 0, 0],
    [-1, 0, 0],
    [0, 1, 0],
    [0, -1, 0],
    [0, 0, 1],
    [0, 0, -1],
];

#[inline]
fn face_count(g: &Grid3<u64>, x: i64, y: i64, z: i64, label: u64) -> u64 {
    FACES
        .iter()
        .filter(|d| g.get_or_default(x + d[0], y + d[1], z + d[2]) == label)
        .count() as u64
}

/// Number of (a,b) face pairs whose `a` voxel lies in the 3³ neighbourhood of (x,y,z).
fn neighbourhood_pairs(g: &Grid3<u64>, x: i64, y: i64, z: i64, a: u64, b: u64) -> u64 {
    let mut total = 0;
    for dz in -1..=1 {
        for dy in -1..=1 {
            for dx in -1..=1 {
                let (px, py, pz) = (x + dx, y + dy, z + dz);
                if g.get_or_default(px, py, pz) == a {
                    total += face_count(g, px, py, pz, b);
                }
            }
        }
    }
    total
}

fn scan_block(g: &Grid3<u64>, lo: [usize; 3], hi: [usize; 3]) -> HashMap<(u64, u64), Acc> {
    let mut table: HashMap<(u64, u64), Acc> = HashMap::new();
    let mut higher: Vec<u64> = Vec::with_capacity(6);
    for z in lo[2]..hi[2] {
        for y in lo[1]..hi[1] {
            for x in lo[0]..hi[0] {
                let l = g.get(x, y, z);
                if l == 0 {
                    continue;
                }
                let (xi, yi, zi) = (x as i64, y as i64, z as i64);
                higher.clear();
                for (k, d) in FACES.iter().enumerate() {
                    let m = g.get_or_default(xi + d[0], yi + d[1], zi + d[2]);
                    if m == 0 || m == l {
                        continue;
                    }
                    // Even faces are the positive directions: this block owns the pair.
                    if k % 2 == 0 {
                        let key = (l.min(m), l.max(m));
                        table
                            .entry(key)
                            .or_insert(Acc {
                                contact: 0,
                                rep_score: 0,
                                rep: [u32::MAX; 3],
                            })
                            .contact += 1;
                    }
                    if m > l && !higher.contains(&m) {
                        higher.push(m);
                    }
                }
                for &m in &higher {
                    let score = neighbourhood_pairs(g, xi, yi, zi, l, m);
                    table
                        .entry((l, m))
                        .or_insert(Acc {
                            contact: 0,
                            rep_score: 0,
                            rep: [u32::MAX; 3],
                        })
                        .offer_rep(score, [x as u32, y as u32, z as u32]);
                }
            }
        }
    }
    table
}

/// Adjacency over an already-downsampled grid. `full_dims` and `factor`
/// are used only to map representative locations back to full resolution.
pub fn adjacency_from_grid(
    g: &Grid3<u64>,
    full_dims: [u32; 3],
    factor: u32,
    block_edge: u32,
) -> Result<Vec<AdjacencyEdge>> {
    check_factor(factor)?;
    if block_edge < MIN_BLOCK_EDGE {
        return Err(Error::InvalidArgument(format!(
            "block_edge must be >= {MIN_BLOCK_EDGE}, got {block_edge}"
        )));
    }
    let be = block_edge as usize;
    let nb = [
        g.dims[0].div_ceil(be),
        g.dims[1].div_ceil(be),
        g.dims[2].div_ceil(be),
    ];
    let blocks: Vec<[usize; 3]> = (0..nb[2])
        .flat_map(|bz| (0..nb[1]).flat_map(move |by| (0..nb[0]).map(move |bx| [bx, by, bz])))
        .collect();
    let partials: Vec<HashMap<(u64, u64), Acc>> = blocks
        .par_iter()
        .map(|b| {
            let lo = [b[0] * be, b[1] * be, b[2] * be];
            let hi = [
                (lo[0] + be).min(g.dims[0]),
                (lo[1] + be).min(g.dims[1]),
                (lo[2] + be).min(g.dims[2]),
            ];
            scan_block(g, lo, hi)
        })
        .collect();

    let mut merged: BTreeMap<(u64, u64), Acc> = BTreeMap::new();
    for part in partials {
        // HashMap iteration order is irrelevant: merge is commutative.
        for (k, acc) in part {
            merged
                .entry(k)
                .and_modify(|m| m.merge(&acc))
                .or_insert(acc);
        }
    }
    let half = factor / 2;
    Ok(merged
        .into_iter()
        .map(|((a, b), acc)| {
            let r = acc.rep;
            let scale = |c: u32, d: u32| (c * factor + half).min(d - 1);
            AdjacencyEdge {
                a,
                b,
                contact_voxels: acc.contact,
                rep_location: Voxel::new(
                    scale(r[0], full_dims[0]),
                    scale(r[1], full_dims[1]),
                    scale(r[2], full_dims[2]),
                ),
                factor,
            }
        })
        .collect())
}

/// Adjacency table of `v` at the given downsample factor, sorted by `(a, b)`.
pub fn compute_adjacency(v: &LabelVolume, factor: u32, block_edge: u32) -> Result<Vec<AdjacencyEdge>> {
    check_factor(factor)?;
    let grid = downsample_grid(&v.to_grid(), factor)?;
    adjacency_from_grid(&grid, v.dims(), factor, block_edge)
}

pub fn candidates_for(
    edges: &[AdjacencyEdge],
    filter: &CandidateFilter,
    bodies: Option<&BodyState>,
) -> Result<Vec<MergeCandidate>> {
    match filter {
        CandidateFilter::Focused { min_contact } => Ok(edges
            .iter()
            .filter(|e| e.contact_voxels >= *min_contact)
            .map(|e| MergeCandidate::new(e.clone(), Workflow::Focused))
            .collect()),
        CandidateFilter::Orphan { weight } => {
            let bodies = bodies.ok_or_else(|| {
                Error::InvalidArgument("orphan filter requires a body state".to_string())
            })?;
            let mut out = Vec::new();
            for e in edges {
                let ra = bodies.root(e.a)?;
                let rb = bodies.root(e.b)?;
                if ra == rb {
                    continue;
                }
                let orphan = match (bodies.is_identified(ra)?, bodies.is_identified(rb)?) {
                    (false, true) => ra,
                    (true, false) => rb,
                    _ => continue,
                };
                if let Some(range) = weight {
                    if !range.contains(&bodies.weight(orphan)?) {
                        continue;
                    }
                }
                out.push(MergeCandidate::new(e.clone(), Workflow::Orphan));
            }
            Ok(out)
        }
    }
}

pub fn write_adjacency_tsv(edges: &[AdjacencyEdge], path: &Path) -> Result<()> {
    let mut out = Vec::with_capacity(edges.len() * 40 + 64);
    writeln!(out, "{TSV_HEADER}").expect("vec write");
    for e in edges {
        let r = e.rep_location;
        writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}",
            e.a, e.b, e.contact_voxels, r.x, r.y, r.z, e.factor
        )
        .expect("vec write");
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_adjacency_tsv(path: &Path) -> Result<Vec<AdjacencyEdge>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut edges = Vec::new();
    for (n, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if n == 0 && line == TSV_HEADER {
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        let bad = || Error::InvalidArgument(format!("{}:{}: malformed adjacency row", path.display(), n + 1));
        if f.len() != 7 {
            return Err(bad());
        }
        let p = |i: usize| f[i].parse::<u64>().map_err(|_| bad());
        edges.push(AdjacencyEdge {
            a: p(0)?,
            b: p(1)?,
            contact_voxels: p(2)?,
            rep_location: Voxel::new(p(3)? as u32, p(4)? as u32, p(5)? as u32),
            factor: p(6)? as u32,
        });
    }
    Ok(edges)
}
