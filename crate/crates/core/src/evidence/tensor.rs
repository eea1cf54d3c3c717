use crate::adjacency::MergeCandidate;
use crate::error::{Error, Result};
use crate::synapse::SiteIndex;
use crate::volume::{extract_subvolume, GrayVolume, LabelVolume, Voxel};

pub const DEFAULT_EDGE: u32 = 33;
pub const DEFAULT_PROX_RADIUS_NM: f64 = 80.0;
pub const CHANNELS: usize = 4;

const MASK_A: u8 = 1;
const MASK_B: u8 = 2;
const MASK_SYN: u8 = 4;

/// Four-channel local cube around a candidate's representative voxel:
/// grayscale, mask of `a`, mask of `b`, synapse proximity. Stored as one
/// gray byte plus mask bits per voxel; [`EvidenceTensor::to_dense`] expands
/// to channel-major reals.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EvidenceTensor {
    edge: u32,
    center: Voxel,
    gray: Vec<u8>,
    masks: Vec<u8>,
}

impl EvidenceTensor {
    pub fn edge(&self) -> u32 {
        self.edge
    }

    pub fn center(&self) -> Voxel {
        self.center
    }

    pub fn voxels(&self) -> usize {
        self.gray.len()
    }

    /// Channel `c` at linear index `i` (x-fastest).
    pub fn value(&self, c: usize, i: usize) -> f32 {
        match c {
            0 => self.gray[i] as f32 / 255.0,
            1 => f32::from(self.masks[i] & MASK_A != 0),
            2 => f32::from(self.masks[i] & MASK_B != 0),
            3 => f32::from(self.masks[i] & MASK_SYN != 0),
            _ => panic!("channel {c} out of range"),
        }
    }

    /// Channel-major `[4][edge³]` values.
    pub fn to_dense(&self) -> Vec<f32> {
        let n = self.voxels();
        let mut out = vec![0.0; CHANNELS * n];
        for c in 0..CHANNELS {
            for i in 0..n {
                out[c * n + i] = self.value(c, i);
            }
        }
        out
    }

    /// Raw per-voxel parts, for compact storage.
    pub fn parts(&self) -> (&[u8], &[u8]) {
        (&self.gray, &self.masks)
    }

    pub fn from_parts(edge: u32, center: Voxel, gray: Vec<u8>, masks: Vec<u8>) -> Result<Self> {
        let n = (edge as usize).pow(3);
        if edge % 2 == 0 || gray.len() != n || masks.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "tensor edge {edge} with {} gray and {} mask bytes",
                gray.len(),
                masks.len()
            )));
        }
        if masks.iter().any(|&m| m & !(MASK_A | MASK_B | MASK_SYN) != 0 || m & (MASK_A | MASK_B) == MASK_A | MASK_B) {
            return Err(Error::ShapeMismatch("invalid mask bits".into()));
        }
        Ok(EvidenceTensor { edge, center, gray, masks })
    }

    /// Mirrors the cube along the given axes (x, y, z).
    pub fn flipped(&self, axes: [bool; 3]) -> Self {
        let e = self.edge as usize;
        let mut gray = vec![0; self.gray.len()];
        let mut masks = vec![0; self.masks.len()];
        let map = |v: usize, f: bool| if f { e - 1 - v } else { v };
        let mut i = 0;
        for z in 0..e {
            for y in 0..e {
                for x in 0..e {
                    let j = map(x, axes[0]) + e * (map(y, axes[1]) + e * map(z, axes[2]));
                    gray[j] = self.gray[i];
                    masks[j] = self.masks[i];
                    i += 1;
                }
            }
        }
        EvidenceTensor {
            edge: self.edge,
            center: self.center,
            gray,
            masks,
        }
    }
}

/// Builds the evidence cube for `cand` centred on its representative voxel.
/// Voxels outside the volume read as zero in every channel.
pub fn extract_evidence(
    gray: &GrayVolume,
    labels: &LabelVolume,
    sites: &SiteIndex,
    cand: &MergeCandidate,
    edge: u32,
    prox_radius_nm: f64,
) -> Result<EvidenceTensor> {
    if gray.dims() != labels.dims() {
        return Err(Error::ShapeMismatch(format!(
            "gray dims {:?} differ from label dims {:?}",
            gray.dims(),
            labels.dims()
        )));
    }
    let center = cand.edge.rep_location;
    let g = extract_subvolume(gray, center, edge)?;
    let l = extract_subvolume(labels, center, edge)?;
    let (a, b) = (cand.edge.a, cand.edge.b);
    let mut masks: Vec<u8> = l
        .data
        .iter()
        .map(|&v| {
            if v == a {
                MASK_A
            } else if v == b {
                MASK_B
            } else {
                0
            }
        })
        .collect();

    let e = edge as i64;
    let half = e / 2;
    let origin = [center.x as i64 - half, center.y as i64 - half, center.z as i64 - half];
    let vs = labels.meta().voxel_size_nm;
    let reach = [0, 1, 2].map(|k| (prox_radius_nm / vs[k]).floor() as i64);
    let dims = labels.dims().map(|d| d as i64);
    let lo = [0, 1, 2].map(|k| origin[k] - reach[k]);
    let hi = [0, 1, 2].map(|k| origin[k] + e - 1 + reach[k]);
    let r2 = prox_radius_nm * prox_radius_nm;
    for s in sites.sites_in_box(lo, hi) {
        let sc = [s.x as i64, s.y as i64, s.z as i64];
        // Clip the stamped sphere to the cube and to the volume.
        let from = [0, 1, 2].map(|k| (sc[k] - reach[k]).max(origin[k]).max(0));
        let to = [0, 1, 2].map(|k| (sc[k] + reach[k]).min(origin[k] + e - 1).min(dims[k] - 1));
        for z in from[2]..=to[2] {
            let dz = (z - sc[2]) as f64 * vs[2];
            for y in from[1]..=to[1] {
                let dy = (y - sc[1]) as f64 * vs[1];
                for x in from[0]..=to[0] {
                    let dx = (x - sc[0]) as f64 * vs[0];
                    if dx * dx + dy * dy + dz * dz <= r2 {
                        let i = (x - origin[0]) + e * ((y - origin[1]) + e * (z - origin[2]));
                        masks[i as usize] |= MASK_SYN;
                    }
                }
            }
        }
    }
    EvidenceTensor::from_parts(edge, center, g.data, masks)
}
