use std::collections::{BTreeMap, HashSet};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::adjacency::MergeCandidate;
use crate::error::{Error, Result};
use crate::volume::{downsample, LabelVolume, Voxel};

pub const SHAPE_LEN: usize = 32;
pub const DEFAULT_CONTEXT_EDGE: u32 = 300;
pub const DEFAULT_POINT_FACTOR: u32 = 4;
pub const DEFAULT_N_POINTS: usize = 2048;
pub const RADIAL_BINS: usize = 8;

/// Voxels of each segment at a coarser resolution, for point sampling.
#[derive(Clone, Debug)]
pub struct PointIndex {
    factor: u32,
    segments: BTreeMap<u64, Vec<Voxel>>,
}

impl PointIndex {
    pub fn new(labels: &LabelVolume, factor: u32) -> Result<Self> {
        let small = downsample(labels, factor)?;
        let g = small.to_grid();
        let mut segments: BTreeMap<u64, Vec<Voxel>> = BTreeMap::new();
        let mut i = 0;
        for z in 0..g.dims[2] {
            for y in 0..g.dims[1] {
                for x in 0..g.dims[0] {
                    let l = g.data[i];
                    if l != 0 {
                        segments.entry(l).or_default().push(Voxel::new(x as u32, y as u32, z as u32));
                    }
                    i += 1;
                }
            }
        }
        Ok(PointIndex { factor, segments })
    }

    pub fn factor(&self) -> u32 {
        self.factor
    }

    /// Coarse voxels of `label` inside the cube `[lo, lo + edge)`.
    pub fn voxels_in(&self, label: u64, lo: [i64; 3], edge: u32) -> Vec<Voxel> {
        let hi = lo.map(|c| c + edge as i64);
        self.segments
            .get(&label)
            .map(|vs| {
                vs.iter()
                    .copied()
                    .filter(|v| {
                        let c = [v.x as i64, v.y as i64, v.z as i64];
                        (0..3).all(|k| c[k] >= lo[k] && c[k] < hi[k])
                    })
                    .collect()
            })
            .unwrap_or_default()
    }
}

/// Points sampled from each side of a candidate, in coarse voxel coordinates.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PointSets {
    pub a: Vec<Voxel>,
    pub b: Vec<Voxel>,
    pub factor: u32,
}

/// Context cube origin (coarse coordinates) for a candidate.
fn context_origin(rep: Voxel, factor: u32, context_edge: u32) -> [i64; 3] {
    let half = (context_edge / 2) as i64;
    [rep.x, rep.y, rep.z].map(|c| (c / factor) as i64 - half)
}

/// Samples `n_points / 2` coarse voxels of each segment within the context
/// cube around the candidate's representative voxel. Without replacement
/// when the segment has enough voxels, with replacement otherwise.
pub fn sample_points(
    index: &PointIndex,
    cand: &MergeCandidate,
    context_edge: u32,
    n_points: usize,
    seed: u64,
) -> Result<PointSets> {
    if n_points % 2 != 0 {
        return Err(Error::InvalidArgument(format!("n_points must be even, got {n_points}")));
    }
    let half = n_points / 2;
    let lo = context_origin(cand.edge.rep_location, index.factor, context_edge);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |label: u64| {
        let pool = index.voxels_in(label, lo, context_edge);
        if pool.is_empty() {
            return Vec::new();
        }
        let mut pts: Vec<Voxel> = if pool.len() >= half {
            sample(&mut rng, pool.len(), half).into_iter().map(|i| pool[i]).collect()
        } else {
            (0..half).map(|_| pool[rng.random_range(0..pool.len())]).collect()
        };
        pts.sort_unstable();
        pts
    };
    let a = draw(cand.edge.a);
    let b = draw(cand.edge.b);
    Ok(PointSets { a, b, factor: index.factor })
}

/// Eigen-decomposition of a symmetric 3×3 matrix by cyclic Jacobi rotations.
/// Eigenvalues descending; `vectors[i]` belongs to `values[i]`.
pub fn symmetric_eigen3(m: [[f64; 3]; 3]) -> ([f64; 3], [[f64; 3]; 3]) {
    let mut a = m;
    let mut v = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    for _ in 0..64 {
        let off = a[0][1].powi(2) + a[0][2].powi(2) + a[1][2].powi(2);
        let scale = a[0][0].powi(2) + a[1][1].powi(2) + a[2][2].powi(2) + off;
        if off <= 1e-30 * scale || off == 0.0 {
            break;
        }
        for (p, q) in [(0, 1), (0, 2), (1, 2)] {
            if a[p][q] == 0.0 {
                continue;
            }
            let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
            let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
            let t = if theta == 0.0 { 1.0 } else { t };
            let c = 1.0 / (t * t + 1.0).sqrt();
            let s = t * c;
            for k in 0..3 {
                let (akp, akq) = (a[k][p], a[k][q]);
                a[k][p] = c * akp - s * akq;
                a[k][q] = s * akp + c * akq;
            }
            for k in 0..3 {
                let (apk, aqk) = (a[p][k], a[q][k]);
                a[p][k] = c * apk - s * aqk;
                a[q][k] = s * apk + c * aqk;
            }
            for row in v.iter_mut() {
                let (vp, vq) = (row[p], row[q]);
                row[p] = c * vp - s * vq;
                row[q] = s * vp + c * vq;
            }
        }
    }
    let mut order = [0, 1, 2];
    order.sort_by(|&i, &j| a[j][j].total_cmp(&a[i][i]));
    let values = order.map(|i| a[i][i]);
    let vectors = order.map(|i| [v[0][i], v[1][i], v[2][i]]);
    (values, vectors)
}

struct Cloud {
    centroid: [f64; 3],
    eig: [f64; 3],
    axis: [f64; 3],
}

fn cloud_stats(points: &[Voxel]) -> Option<Cloud> {
    if points.is_empty() {
        return None;
    }
    let n = points.len() as f64;
    let p: Vec<[f64; 3]> = points.iter().map(|v| [v.x as f64, v.y as f64, v.z as f64]).collect();
    let mut c = [0.0; 3];
    for q in &p {
        for k in 0..3 {
            c[k] += q[k];
        }
    }
    c = c.map(|s| s / n);
    let mut cov = [[0.0; 3]; 3];
    for q in &p {
        let d = [q[0] - c[0], q[1] - c[1], q[2] - c[2]];
        for i in 0..3 {
            for j in 0..3 {
                cov[i][j] += d[i] * d[j];
            }
        }
    }
    for row in cov.iter_mut() {
        for x in row.iter_mut() {
            *x /= n;
        }
    }
    let (vals, vecs) = symmetric_eigen3(cov);
    Some(Cloud {
        centroid: c,
        eig: vals.map(|x| x.max(0.0)),
        axis: vecs[0],
    })
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn norm(a: [f64; 3]) -> f64 {
    dot(a, a).sqrt()
}

fn abs_cos(a: [f64; 3], b: [f64; 3]) -> f64 {
    let d = norm(a) * norm(b);
    if d == 0.0 {
        0.0
    } else {
        (dot(a, b) / d).abs().min(1.0)
    }
}

/// Fraction of sampled points with a 26-neighbour sampled on the other side.
fn contact_fraction(a: &[Voxel], b: &[Voxel]) -> f64 {
    if a.is_empty() || b.is_empty() {
        return 0.0;
    }
    let sa: HashSet<Voxel> = a.iter().copied().collect();
    let sb: HashSet<Voxel> = b.iter().copied().collect();
    let touches = |v: &Voxel, other: &HashSet<Voxel>| {
        for dz in -1i64..=1 {
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let (x, y, z) = (v.x as i64 + dx, v.y as i64 + dy, v.z as i64 + dz);
                    if x >= 0 && y >= 0 && z >= 0 && other.contains(&Voxel::new(x as u32, y as u32, z as u32)) {
                        return true;
                    }
                }
            }
        }
        false
    };
    let hits = a.iter().filter(|v| touches(v, &sb)).count() + b.iter().filter(|v| touches(v, &sa)).count();
    hits as f64 / (a.len() + b.len()) as f64
}

fn bbox_occupancy(points: &[Voxel]) -> f64 {
    if points.is_empty() {
        return 0.0;
    }
    let distinct: HashSet<Voxel> = points.iter().copied().collect();
    let mut lo = [u32::MAX; 3];
    let mut hi = [0u32; 3];
    for v in &distinct {
        for (k, c) in v.as_array().into_iter().enumerate() {
            lo[k] = lo[k].min(c);
            hi[k] = hi[k].max(c);
        }
    }
    let vol: f64 = (0..3).map(|k| (hi[k] - lo[k] + 1) as f64).product();
    distinct.len() as f64 / vol
}

/// Fixed-length shape summary of the two sampled point sets. Layout:
///
/// | index | entry |
/// |-------|-------|
/// | 0-2, 3-5 | PCA eigenvalues of a, b, normalized to sum 1 |
/// | 6, 7 | elongation `1 - λ2/λ1` of a, b |
/// | 8-10 | centroid offset `b - a` divided by the context edge |
/// | 11 | norm of that offset |
/// | 12 | `|cos|` between the principal axes of a and b |
/// | 13, 14 | `|cos|` between the offset and the axis of a, b |
/// | 15 | fraction of points touching the other side |
/// | 16, 17 | bounding-box occupancy of a, b |
/// | 18-25 | radial histogram of all points around the representative voxel |
/// | 26, 27 | `ln(1 + distinct points)` of a, b |
/// | 28, 29 | planarity `(λ2 - λ3)/λ1` of a, b |
/// | 30, 31 | mean distance to the representative voxel over the context edge, a and b |
///
/// Entries that need a missing side are 0.
pub fn shape_descriptor(points: &PointSets, cand: &MergeCandidate, context_edge: u32) -> [f64; SHAPE_LEN] {
    let mut d = [0.0; SHAPE_LEN];
    let edge = context_edge.max(1) as f64;
    let f = points.factor as f64;
    let r = cand.edge.rep_location;
    let rep = [r.x as f64 / f, r.y as f64 / f, r.z as f64 / f].map(|c| c.floor());
    let ca = cloud_stats(&points.a);
    let cb = cloud_stats(&points.b);
    for (side, cloud) in [&ca, &cb].into_iter().enumerate() {
        let Some(c) = cloud else { continue };
        let sum: f64 = c.eig.iter().sum();
        if sum > 0.0 {
            for k in 0..3 {
                d[3 * side + k] = c.eig[k] / sum;
            }
        }
        if c.eig[0] > 0.0 {
            d[6 + side] = 1.0 - c.eig[1] / c.eig[0];
            d[28 + side] = (c.eig[1] - c.eig[2]) / c.eig[0];
        }
    }
    if let (Some(a), Some(b)) = (&ca, &cb) {
        let off = [0, 1, 2].map(|k| (b.centroid[k] - a.centroid[k]) / edge);
        d[8..11].copy_from_slice(&off);
        d[11] = norm(off);
        if a.eig[0] > 0.0 && b.eig[0] > 0.0 {
            d[12] = abs_cos(a.axis, b.axis);
        }
        if a.eig[0] > 0.0 {
            d[13] = abs_cos(off, a.axis);
        }
        if b.eig[0] > 0.0 {
            d[14] = abs_cos(off, b.axis);
        }
    }
    d[15] = contact_fraction(&points.a, &points.b);
    d[16] = bbox_occupancy(&points.a);
    d[17] = bbox_occupancy(&points.b);

    let bin_width = (edge / 2.0) / RADIAL_BINS as f64;
    let dist = |v: &Voxel| norm([v.x as f64 - rep[0], v.y as f64 - rep[1], v.z as f64 - rep[2]]);
    let total = points.a.len() + points.b.len();
    if total > 0 {
        for v in points.a.iter().chain(&points.b) {
            let bin = ((dist(v) / bin_width) as usize).min(RADIAL_BINS - 1);
            d[18 + bin] += 1.0;
        }
        for x in &mut d[18..26] {
            *x /= total as f64;
        }
    }
    for (side, pts) in [&points.a, &points.b].into_iter().enumerate() {
        let distinct: HashSet<&Voxel> = pts.iter().collect();
        d[26 + side] = (distinct.len() as f64).ln_1p();
        if !pts.is_empty() {
            d[30 + side] = pts.iter().map(dist).sum::<f64>() / pts.len() as f64 / edge;
        }
    }
    d
}
