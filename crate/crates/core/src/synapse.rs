use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::io::{read_jsonl, write_jsonl};
use crate::volume::Voxel;

/// One pre-synaptic T-bar and its post-synaptic densities.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynapseRecord {
    pub tbar: Voxel,
    pub psds: Vec<Voxel>,
    pub pre_fragment: u64,
    /// Fragment holding each entry of `psds`, index-aligned.
    pub post_fragments: Vec<u64>,
}

impl SynapseRecord {
    /// `(pre, post)` fragment pairs, one per PSD.
    pub fn connections(&self) -> impl Iterator<Item = (u64, u64)> + '_ {
        self.post_fragments.iter().map(move |&post| (self.pre_fragment, post))
    }

    pub fn sites(&self) -> impl Iterator<Item = Voxel> + '_ {
        std::iter::once(self.tbar).chain(self.psds.iter().copied())
    }
}

pub fn write_synapses(path: &Path, synapses: &[SynapseRecord]) -> Result<()> {
    write_jsonl(path, synapses)
}

pub fn read_synapses(path: &Path) -> Result<Vec<SynapseRecord>> {
    read_jsonl(path)
}

/// Uniform-grid bucket index over T-bar and PSD sites.
#[derive(Clone, Debug)]
pub struct SiteIndex {
    bucket: u32,
    buckets: HashMap<[u32; 3], Vec<Voxel>>,
}

impl SiteIndex {
    pub fn new(synapses: &[SynapseRecord], bucket: u32) -> Self {
        let bucket = bucket.max(1);
        let mut buckets: HashMap<[u32; 3], Vec<Voxel>> = HashMap::new();
        for s in synapses {
            for v in s.sites() {
                buckets
                    .entry([v.x / bucket, v.y / bucket, v.z / bucket])
                    .or_default()
                    .push(v);
            }
        }
        SiteIndex { bucket, buckets }
    }

    /// Sites inside the inclusive box `[lo, hi]` (signed, may extend past the volume).
    pub fn sites_in_box(&self, lo: [i64; 3], hi: [i64; 3]) -> Vec<Voxel> {
        let b = self.bucket as i64;
        let blo = lo.map(|c| c.max(0) / b);
        let bhi = hi.map(|c| if c < 0 { -1 } else { c / b });
        let mut out = Vec::new();
        for bz in blo[2]..=bhi[2] {
            for by in blo[1]..=bhi[1] {
                for bx in blo[0]..=bhi[0] {
                    if let Some(list) = self.buckets.get(&[bx as u32, by as u32, bz as u32]) {
                        out.extend(list.iter().copied().filter(|v| {
                            let c = [v.x as i64, v.y as i64, v.z as i64];
                            (0..3).all(|k| c[k] >= lo[k] && c[k] <= hi[k])
                        }));
                    }
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jsonl_shape() {
        let s = SynapseRecord {
            tbar: Voxel::new(1, 2, 3),
            psds: vec![Voxel::new(1, 2, 4)],
            pre_fragment: 7,
            post_fragments: vec![9],
        };
        let line = serde_json::to_string(&s).unwrap();
        assert_eq!(
            line,
            r#"{"tbar":[1,2,3],"psds":[[1,2,4]],"pre_fragment":7,"post_fragments":[9]}"#
        );
        assert_eq!(s.connections().collect::<Vec<_>>(), vec![(7, 9)]);
    }

    #[test]
    fn site_index_box_query() {
        let s = SynapseRecord {
            tbar: Voxel::new(10, 10, 10),
            psds: vec![Voxel::new(40, 3, 3), Voxel::new(11, 10, 10)],
            pre_fragment: 1,
            post_fragments: vec![2, 3],
        };
        let idx = SiteIndex::new(&[s], 16);
        let mut got = idx.sites_in_box([-5, -5, -5], [12, 12, 12]);
        got.sort();
        assert_eq!(got, vec![Voxel::new(10, 10, 10), Voxel::new(11, 10, 10)]);
        assert!(idx.sites_in_box([-10, -10, -10], [-1, -1, -1]).is_empty());
    }
}
