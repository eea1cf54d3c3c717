//! Deterministic synthetic connectome generator.
//!
//! Neurons are random-walk tubes of varying radius rendered into a label
//! volume. The "automated segmentation" is the neuron volume with planar cuts
//! applied along the tube axis, each cut splitting one fragment in two.
//! Grayscale shows dark membranes wherever two neurons (or a neuron and
//! background) touch, plus Gaussian noise; some cuts also get a false
//! membrane so that image evidence alone is sometimes misleading. Synapses
//! sit on contact sites between distinct neurons.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::adjacency::{adjacency_from_grid, AdjacencyEdge};
use crate::error::{Error, Result};
use crate::io::{read_json, write_json};
use crate::synapse::{read_synapses, write_synapses, SynapseRecord};
use crate::volume::{
    read_gray_volume, read_label_volume, write_volume, GrayVolume, Grid3, LabelVolume, Voxel, DEFAULT_CHUNK,
    DEFAULT_VOXEL_SIZE_NM,
};

pub const INTERIOR_GRAY: f64 = 175.0;
pub const MEMBRANE_GRAY: f64 = 70.0;
pub const BACKGROUND_GRAY: f64 = 110.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub dims: [u32; 3],
    pub neuron_count: u32,
    /// Inclusive tube radius range in voxels.
    pub tube_radius_vox: [f64; 2],
    /// Inclusive range of random-walk steps per neuron.
    pub path_length: [u32; 2],
    pub split_count: u32,
    /// Expected synapses per 1000 face-adjacent voxel pairs between neurons.
    pub synapse_density: f64,
    pub noise_sigma: f64,
    pub p_false_membrane: f64,
    pub type_count: u32,
    /// Fraction of neurons that keep an uncut core of `core_span` of their path.
    pub core_fraction: f64,
    pub core_span: f64,
    /// Shortest fragment, in path steps, a cut may leave behind.
    pub min_piece: u32,
    /// Added to every neuron and fragment id so several volumes can share
    /// one id space.
    pub id_base: u64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            dims: [256, 256, 256],
            neuron_count: 60,
            tube_radius_vox: [3.0, 6.0],
            path_length: [1200, 1800],
            split_count: 400,
            synapse_density: 20.0,
            noise_sigma: 20.0,
            p_false_membrane: 0.05,
            type_count: 5,
            core_fraction: 0.8,
            core_span: 0.55,
            min_piece: 20,
            id_base: 0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.neuron_count < 1 {
            return bad("neuron_count must be >= 1".into());
        }
        if self.dims.iter().any(|&d| d < 8) {
            return bad(format!("dims too small: {:?}", self.dims));
        }
        let [rmin, rmax] = self.tube_radius_vox;
        if !(rmin >= 1.0 && rmax >= rmin) {
            return bad(format!("invalid tube radius range {:?}", self.tube_radius_vox));
        }
        if self.path_length[0] < 2 || self.path_length[1] < self.path_length[0] {
            return bad(format!("invalid path length range {:?}", self.path_length));
        }
        if !(self.synapse_density >= 0.0 && self.noise_sigma >= 0.0) {
            return bad("densities and noise must be >= 0".into());
        }
        if !(0.0..=1.0).contains(&self.p_false_membrane) || !(0.0..=1.0).contains(&self.core_fraction) {
            return bad("probabilities must lie in [0, 1]".into());
        }
        if !(0.0..1.0).contains(&self.core_span) || self.type_count < 1 || self.min_piece < 1 {
            return bad("invalid core_span, type_count or min_piece".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct GroundTruth {
    pub neuron_volume: LabelVolume,
    pub fragment_volume: LabelVolume,
    pub fragment_to_neuron: BTreeMap<u64, u64>,
    /// Cut pairs that remained face-adjacent, as `(smaller, larger)` ids.
    pub true_merge_edges: BTreeSet<(u64, u64)>,
    pub synapses: Vec<SynapseRecord>,
    pub neuron_types: BTreeMap<u64, u32>,
    /// Fragments holding at least half of their neuron's voxels.
    pub identified: BTreeSet<u64>,
}

/// The JSON part of a ground truth (`truth.json`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruthTables {
    pub fragment_to_neuron: BTreeMap<u64, u64>,
    pub true_merge_edges: Vec<(u64, u64)>,
    pub neuron_types: BTreeMap<u64, u32>,
    pub identified_fragments: Vec<u64>,
}

impl GroundTruth {
    pub fn tables(&self) -> TruthTables {
        TruthTables {
            fragment_to_neuron: self.fragment_to_neuron.clone(),
            true_merge_edges: self.true_merge_edges.iter().copied().collect(),
            neuron_types: self.neuron_types.clone(),
            identified_fragments: self.identified.iter().copied().collect(),
        }
    }

    /// Cell type of each fragment, through its neuron.
    pub fn fragment_types(&self) -> HashMap<u64, u32> {
        self.tables().fragment_types()
    }
}

impl TruthTables {
    pub fn fragment_types(&self) -> HashMap<u64, u32> {
        self.fragment_to_neuron
            .iter()
            .filter_map(|(&f, n)| self.neuron_types.get(n).map(|&t| (f, t)))
            .collect()
    }

    pub fn same_neuron(&self, a: u64, b: u64) -> Result<bool> {
        let na = self.fragment_to_neuron.get(&a).ok_or(Error::UnknownFragment(a))?;
        let nb = self.fragment_to_neuron.get(&b).ok_or(Error::UnknownFragment(b))?;
        Ok(na == nb)
    }
}

struct Neuron {
    path: Vec<[f64; 3]>,

}

fn unit(v: [f64; 3]) -> [f64; 3] {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt().max(1e-12);
    [v[0] / n, v[1] / n, v[2] / n]
}

fn random_dir(rng: &mut ChaCha8Rng) -> [f64; 3] {
    unit([
        StandardNormal.sample(rng),
        StandardNormal.sample(rng),
        StandardNormal.sample(rng),
    ])
}

/// Per-voxel owner while rendering: neuron index + 1 (0 = empty), closest
/// path step, and squared distance to it.
struct Canvas {
    owner: Grid3<u32>,
    step: Grid3<u32>,
    dist2: Grid3<f32>,
}

impl Canvas {
    fn claimed_by_other(&self, p: [f64; 3], me: u32) -> bool {
        let (x, y, z) = (p[0].round() as i64, p[1].round() as i64, p[2].round() as i64);
        let o = self.owner.get_or_default(x, y, z);
        o != 0 && o != me
    }

    fn stamp(&mut self, c: [f64; 3], r: f64, me: u32, step: u32) {
        let d = self.owner.dims;
        let lo = |v: f64| (v - r).floor().max(0.0) as usize;
        let hi = |v: f64, n: usize| ((v + r).ceil() as usize).min(n - 1);
        let r2 = (r * r) as f32;
        for z in lo(c[2])..=hi(c[2], d[2]) {
            for y in lo(c[1])..=hi(c[1], d[1]) {
                for x in lo(c[0])..=hi(c[0], d[0]) {
                    let dd = ((x as f64 - c[0]).powi(2) + (y as f64 - c[1]).powi(2) + (z as f64 - c[2]).powi(2)) as f32;
                    if dd > r2 {
                        continue;
                    }
                    let i = self.owner.index(x, y, z);
                    let o = self.owner.data[i];
                    if o == 0 || (o == me && dd < self.dist2.data[i]) {
                        self.owner.data[i] = me;
                        self.step.data[i] = step;
                        self.dist2.data[i] = dd;
                    }
                }
            }
        }
    }
}

fn walk_neuron(cfg: &SynthConfig, canvas: &mut Canvas, rng: &mut ChaCha8Rng, me: u32) -> Option<Neuron> {
    let d = [cfg.dims[0] as f64, cfg.dims[1] as f64, cfg.dims[2] as f64];
    let [rmin, rmax] = cfg.tube_radius_vox;
    let margin = rmax.min(d[0].min(d[1]).min(d[2]) / 4.0);
    let target = rng.random_range(cfg.path_length[0]..=cfg.path_length[1]) as usize;
    let turn = Normal::new(0.0, 0.15).expect("valid sigma");

    let mut start = None;
    for _ in 0..200 {
        let p = [
            rng.random_range(margin..d[0] - margin),
            rng.random_range(margin..d[1] - margin),
            rng.random_range(margin..d[2] - margin),
        ];
        if !canvas.claimed_by_other(p, me) {
            start = Some(p);
            break;
        }
    }
    let mut p = start?;
    let mut dir = random_dir(rng);
    let mut r = rng.random_range(rmin..=rmax);
    let mut path = Vec::with_capacity(target);

    path.push(p);

    canvas.stamp(p, r, me, 0);
    while path.len() < target {
        let mut moved = false;
        for attempt in 0..12 {
            let mut nd = if attempt == 0 {
                unit([
                    dir[0] + turn.sample(rng),
                    dir[1] + turn.sample(rng),
                    dir[2] + turn.sample(rng),
                ])
            } else {
                random_dir(rng)
            };
            let mut np = [p[0] + nd[0], p[1] + nd[1], p[2] + nd[2]];
            for k in 0..3 {
                if np[k] < margin || np[k] > d[k] - 1.0 - margin {
                    nd[k] = -nd[k];
                    np[k] = p[k] + nd[k];
                }
            }
            let probe = [np[0] + nd[0] * r * 0.7, np[1] + nd[1] * r * 0.7, np[2] + nd[2] * r * 0.7];
            if canvas.claimed_by_other(np, me) || canvas.claimed_by_other(probe, me) {
                continue;
            }
            dir = nd;
            p = np;
            moved = true;
            break;
        }
        if !moved {
            break;
        }
        r = (r + rng.random_range(-0.1..=0.1)).clamp(rmin, rmax);
        let step = path.len() as u32;
        path.push(p);

        canvas.stamp(p, r, me, step);
    }
    Some(Neuron { path })
}

/// Chooses cut positions per neuron. A cut at `k` splits `[lo, hi)` into
/// `[lo, k)` and `[k, hi)`.
fn choose_cuts(cfg: &SynthConfig, lengths: &[usize], rng: &mut ChaCha8Rng) -> Result<Vec<BTreeSet<usize>>> {
    let min_piece = cfg.min_piece as usize;
    let cores: Vec<Option<(usize, usize)>> = lengths
        .iter()
        .map(|&len| {
            if rng.random::<f64>() < cfg.core_fraction {
                let span = ((len as f64) * cfg.core_span).ceil() as usize;
                let start = rng.random_range(0..=len.saturating_sub(span));
                Some((start, start + span))
            } else {
                None
            }
        })
        .collect();
    let mut cuts: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); lengths.len()];
    let budget = cfg.split_count as usize * 50 + 1000;
    let mut placed = 0;
    let mut tries = 0;
    while placed < cfg.split_count as usize {
        tries += 1;
        if tries > budget {
            return Err(Error::Infeasible(format!(
                "placed {placed} of {} cuts before exhausting the retry budget",
                cfg.split_count
            )));
        }
        let n = rng.random_range(0..lengths.len());
        let len = lengths[n];
        if len < 2 * min_piece {
            continue;
        }
        let k = rng.random_range(min_piece..=len - min_piece);
        if let Some((c0, c1)) = cores[n] {
            if k > c0 && k < c1 {
                continue;
            }
        }
        let below = cuts[n].range(..k).next_back().copied().unwrap_or(0);
        let above = cuts[n].range(k..).next().copied().unwrap_or(len);
        if k - below < min_piece || above - k < min_piece {
            continue;
        }
        cuts[n].insert(k);
        placed += 1;
    }
    Ok(cuts)
}

pub fn generate(cfg: &SynthConfig) -> Result<(GroundTruth, GrayVolume)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let dims = [cfg.dims[0] as usize, cfg.dims[1] as usize, cfg.dims[2] as usize];
    let mut canvas = Canvas {
        owner: Grid3::new(dims),
        step: Grid3::new(dims),
        dist2: Grid3::from_vec(dims, vec![f32::INFINITY; dims[0] * dims[1] * dims[2]])?,
    };

    let mut neurons = Vec::with_capacity(cfg.neuron_count as usize);
    let mut failures = 0;
    while neurons.len() < cfg.neuron_count as usize {
        let me = neurons.len() as u32 + 1;
        match walk_neuron(cfg, &mut canvas, &mut rng, me) {
            Some(n) if n.path.len() >= 2 * cfg.min_piece as usize => neurons.push(n),
            other => {
                // Roll back a too-short walk before retrying.
                if other.is_some() {
                    for i in 0..canvas.owner.data.len() {
                        if canvas.owner.data[i] == me {
                            canvas.owner.data[i] = 0;
                            canvas.dist2.data[i] = f32::INFINITY;
                        }
                    }
                }
                failures += 1;
                if failures > 20 * cfg.neuron_count as usize {
                    return Err(Error::Infeasible(format!(
                        "could not place {} neurons in {:?}",
                        cfg.neuron_count, cfg.dims
                    )));
                }
            }
        }
    }
    let lengths: Vec<usize> = neurons.iter().map(|n| n.path.len()).collect();
    let cuts = choose_cuts(cfg, &lengths, &mut rng)?;

    // Fragment index per (neuron, piece); pieces with no voxels get no id.
    let piece_of = |n: usize, step: u32| cuts[n].range(..=step as usize).count();
    let mut piece_voxels: Vec<Vec<u64>> = cuts.iter().map(|c| vec![0; c.len() + 1]).collect();
    for i in 0..canvas.owner.data.len() {
        let o = canvas.owner.data[i];
        if o != 0 {
            let n = o as usize - 1;
            piece_voxels[n][piece_of(n, canvas.step.data[i])] += 1;
        }
    }
    let mut fragment_id: Vec<Vec<u64>> = Vec::with_capacity(neurons.len());
    let mut fragment_to_neuron = BTreeMap::new();
    let mut identified = BTreeSet::new();
    let mut next = cfg.id_base + 1;
    for (n, counts) in piece_voxels.iter().enumerate() {
        let neuron_id = cfg.id_base + 1 + n as u64;
        let total: u64 = counts.iter().sum();
        let mut ids = Vec::with_capacity(counts.len());
        for &c in counts {
            if c == 0 {
                ids.push(0);
                continue;
            }
            ids.push(next);
            fragment_to_neuron.insert(next, neuron_id);
            if 2 * c >= total {
                identified.insert(next);
            }
            next += 1;
        }
        fragment_id.push(ids);
    }

    let mut neuron_grid: Grid3<u64> = Grid3::new(dims);
    let mut fragment_grid: Grid3<u64> = Grid3::new(dims);
    for i in 0..canvas.owner.data.len() {
        let o = canvas.owner.data[i];
        if o != 0 {
            let n = o as usize - 1;
            neuron_grid.data[i] = cfg.id_base + o as u64;
            fragment_grid.data[i] = fragment_id[n][piece_of(n, canvas.step.data[i])];
        }
    }
    drop(canvas);

    // Cut pairs are consecutive non-empty pieces of one neuron.
    let mut cut_pairs = BTreeSet::new();
    for ids in &fragment_id {
        let present: Vec<u64> = ids.iter().copied().filter(|&id| id != 0).collect();
        for w in present.windows(2) {
            cut_pairs.insert((w[0].min(w[1]), w[0].max(w[1])));
        }
    }
    let edges = adjacency_from_grid(&fragment_grid, cfg.dims, 1, 64)?;
    let true_merge_edges: BTreeSet<(u64, u64)> = edges
        .iter()
        .map(|e| (e.a, e.b))
        .filter(|p| cut_pairs.contains(p))
        .collect();

    let mut order: Vec<u64> = (0..neurons.len() as u64).collect();
    order.shuffle(&mut rng);
    let neuron_types: BTreeMap<u64, u32> = order
        .iter()
        .enumerate()
        .map(|(rank, &n)| (cfg.id_base + 1 + n, (rank as u32) % cfg.type_count))
        .collect();

    let gray = render_gray(cfg, &neuron_grid, &fragment_grid, &true_merge_edges, &mut rng)?;
    let synapses = place_synapses(cfg, &neuron_grid, &fragment_grid, &mut rng);

    let vs = [DEFAULT_VOXEL_SIZE_NM; 3];
    let gt = GroundTruth {
        neuron_volume: LabelVolume::from_grid(&neuron_grid, vs, DEFAULT_CHUNK)?,
        fragment_volume: LabelVolume::from_grid(&fragment_grid, vs, DEFAULT_CHUNK)?,
        fragment_to_neuron,
        true_merge_edges,
        synapses,
        neuron_types,
        identified,
    };
    Ok((gt, GrayVolume::from_grid(&gray, vs, DEFAULT_CHUNK)?))
}

const FACES: [[i64; 3]; 6] = [
    [1, 0, 0],
    [-1, 0, 0],
    [0, 1, 0],
    [0, -1, 0],
    [0, 0, 1],
    [0, 0, -1],
];

fn render_gray(
    cfg: &SynthConfig,
    neurons: &Grid3<u64>,
    fragments: &Grid3<u64>,
    merges: &BTreeSet<(u64, u64)>,
    rng: &mut ChaCha8Rng,
) -> Result<Grid3<u8>> {
    let false_membrane: BTreeSet<(u64, u64)> = merges
        .iter()
        .copied()
        .filter(|_| rng.random::<f64>() < cfg.p_false_membrane)
        .collect();
    let noise = Normal::new(0.0, cfg.noise_sigma.max(1e-9)).expect("valid sigma");
    let d = neurons.dims;
    let mut out = Grid3::new(d);
    let mut i = 0;
    for z in 0..d[2] as i64 {
        for y in 0..d[1] as i64 {
            for x in 0..d[0] as i64 {
                let n = neurons.data[i];
                let base = if n == 0 {
                    BACKGROUND_GRAY
                } else {
                    let f = fragments.data[i];
                    let mut membrane = false;
                    for dd in FACES {
                        let (nx, ny, nz) = (x + dd[0], y + dd[1], z + dd[2]);
                        if nx < 0 || ny < 0 || nz < 0 || nx >= d[0] as i64 || ny >= d[1] as i64 || nz >= d[2] as i64 {
                            continue;
                        }
                        let j = neurons.index(nx as usize, ny as usize, nz as usize);
                        if neurons.data[j] != n {
                            membrane = true;
                            break;
                        }
                        let g = fragments.data[j];
                        if g != f && false_membrane.contains(&(f.min(g), f.max(g))) {
                            membrane = true;
                            break;
                        }
                    }
                    if membrane {
                        MEMBRANE_GRAY
                    } else {
                        INTERIOR_GRAY
                    }
                };
                let v = if cfg.noise_sigma > 0.0 { base + noise.sample(rng) } else { base };
                out.data[i] = v.round().clamp(0.0, 255.0) as u8;
                i += 1;
            }
        }
    }
    Ok(out)
}

fn place_synapses(
    cfg: &SynthConfig,
    neurons: &Grid3<u64>,
    fragments: &Grid3<u64>,
    rng: &mut ChaCha8Rng,
) -> Vec<SynapseRecord> {
    let p = (cfg.synapse_density / 1000.0).clamp(0.0, 1.0);
    let d = neurons.dims;
    let mut out = Vec::new();
    for z in 0..d[2] {
        for y in 0..d[1] {
            for x in 0..d[0] {
                let n = neurons.get(x, y, z);
                if n == 0 {
                    continue;
                }
                for dd in [[1usize, 0, 0], [0, 1, 0], [0, 0, 1]] {
                    let (nx, ny, nz) = (x + dd[0], y + dd[1], z + dd[2]);
                    if nx >= d[0] || ny >= d[1] || nz >= d[2] {
                        continue;
                    }
                    let m = neurons.get(nx, ny, nz);
                    if m == 0 || m == n || rng.random::<f64>() >= p {
                        continue;
                    }
                    let (pre, post) = if rng.random::<bool>() {
                        ([x, y, z], [nx, ny, nz])
                    } else {
                        ([nx, ny, nz], [x, y, z])
                    };
                    let pre_neuron = neurons.get(pre[0], pre[1], pre[2]);
                    let mut psds = vec![post];
                    if rng.random::<f64>() < 0.5 {
                        if let Some(extra) = extra_psd(neurons, pre, pre_neuron, &psds, rng) {
                            psds.push(extra);
                        }
                    }
                    let vox = |c: [usize; 3]| Voxel::new(c[0] as u32, c[1] as u32, c[2] as u32);
                    out.push(SynapseRecord {
                        tbar: vox(pre),
                        pre_fragment: fragments.get(pre[0], pre[1], pre[2]),
                        post_fragments: psds.iter().map(|c| fragments.get(c[0], c[1], c[2])).collect(),
                        psds: psds.into_iter().map(vox).collect(),
                    });
                }
            }
        }
    }
    out
}

/// A second PSD within 3 voxels of the T-bar, on a different neuron.
fn extra_psd(
    neurons: &Grid3<u64>,
    tbar: [usize; 3],
    pre_neuron: u64,
    taken: &[[usize; 3]],
    rng: &mut ChaCha8Rng,
) -> Option<[usize; 3]> {
    let d = neurons.dims;
    let mut options = Vec::new();
    for z in tbar[2].saturating_sub(3)..=(tbar[2] + 3).min(d[2] - 1) {
        for y in tbar[1].saturating_sub(3)..=(tbar[1] + 3).min(d[1] - 1) {
            for x in tbar[0].saturating_sub(3)..=(tbar[0] + 3).min(d[0] - 1) {
                let m = neurons.get(x, y, z);
                if m != 0 && m != pre_neuron && !taken.contains(&[x, y, z]) {
                    options.push([x, y, z]);
                }
            }
        }
    }
    if options.is_empty() {
        None
    } else {
        Some(options[rng.random_range(0..options.len())])
    }
}

/// Merge label for each edge: true iff both fragments belong to one neuron.
pub fn label_candidates(truth: &TruthTables, edges: &[AdjacencyEdge]) -> Result<Vec<(AdjacencyEdge, bool)>> {
    edges
        .iter()
        .map(|e| Ok((e.clone(), truth.same_neuron(e.a, e.b)?)))
        .collect()
}

pub const GRAY_DIR: &str = "gray";
pub const FRAGMENTS_DIR: &str = "fragments";
pub const NEURONS_DIR: &str = "neurons";
pub const SYNAPSES_FILE: &str = "synapses.jsonl";
pub const TRUTH_FILE: &str = "truth.json";

pub fn write_ground_truth(dir: &Path, gt: &GroundTruth, gray: &GrayVolume) -> Result<()> {
    write_volume(gray, &dir.join(GRAY_DIR))?;
    write_volume(&gt.fragment_volume, &dir.join(FRAGMENTS_DIR))?;
    write_volume(&gt.neuron_volume, &dir.join(NEURONS_DIR))?;
    write_synapses(&dir.join(SYNAPSES_FILE), &gt.synapses)?;
    write_json(&dir.join(TRUTH_FILE), &gt.tables())
}

pub fn read_truth(dir: &Path) -> Result<TruthTables> {
    read_json(&dir.join(TRUTH_FILE))
}

pub fn read_ground_truth(dir: &Path) -> Result<(GroundTruth, GrayVolume)> {
    let t = read_truth(dir)?;
    let gt = GroundTruth {
        neuron_volume: read_label_volume(&dir.join(NEURONS_DIR))?,
        fragment_volume: read_label_volume(&dir.join(FRAGMENTS_DIR))?,
        fragment_to_neuron: t.fragment_to_neuron,
        true_merge_edges: t.true_merge_edges.into_iter().collect(),
        synapses: read_synapses(&dir.join(SYNAPSES_FILE))?,
        neuron_types: t.neuron_types,
        identified: t.identified_fragments.into_iter().collect(),
    };
    Ok((gt, read_gray_volume(&dir.join(GRAY_DIR))?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adjacency::compute_adjacency;

    fn small(seed: u64, splits: u32) -> SynthConfig {
        SynthConfig {
            dims: [48, 48, 48],
            neuron_count: 6,
            tube_radius_vox: [2.0, 3.5],
            path_length: [120, 200],
            split_count: splits,
            synapse_density: 40.0,
            min_piece: 12,
            seed,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn no_splits_means_fragments_are_neurons() {
        let (gt, _) = generate(&small(1, 0)).unwrap();
        assert!(gt.true_merge_edges.is_empty());
        let n = gt.neuron_volume.to_grid();
        let f = gt.fragment_volume.to_grid();
        let mut map = HashMap::new();
        for (a, b) in n.data.iter().zip(&f.data) {
            assert_eq!(*a == 0, *b == 0);
            if *a != 0 {
                assert_eq!(*map.entry(*b).or_insert(*a), *a);
            }
        }
        assert_eq!(map.len(), 6);
    }

    #[test]
    fn same_seed_same_output() {
        let (a, ga) = generate(&small(5, 10)).unwrap();
        let (b, gb) = generate(&small(5, 10)).unwrap();
        assert_eq!(ga, gb);
        assert_eq!(a.fragment_volume, b.fragment_volume);
        assert_eq!(a.synapses, b.synapses);
        assert_eq!(a.tables(), b.tables());
    }

    #[test]
    fn truth_invariants() {
        for seed in 0..3 {
            let (gt, gray) = generate(&small(seed, 12)).unwrap();
            let f = gt.fragment_volume.to_grid();
            let n = gt.neuron_volume.to_grid();
            // Fragment ids partition the neuron voxels.
            for (a, b) in n.data.iter().zip(&f.data) {
                assert_eq!(*a == 0, *b == 0);
                if *b != 0 {
                    assert_eq!(gt.fragment_to_neuron[b], *a);
                }
            }
            // Cuts applied are each recorded once when adjacent.
            assert!(gt.true_merge_edges.len() <= 12);
            assert!(gt.true_merge_edges.len() >= 10, "seed {seed}: {}", gt.true_merge_edges.len());
            let edges = compute_adjacency(&gt.fragment_volume, 1, 16).unwrap();
            let pairs: BTreeSet<(u64, u64)> = edges.iter().map(|e| (e.a, e.b)).collect();
            for e in &gt.true_merge_edges {
                assert!(pairs.contains(e));
                assert_eq!(gt.fragment_to_neuron[&e.0], gt.fragment_to_neuron[&e.1]);
            }
            for s in &gt.synapses {
                assert_eq!(f.get(s.tbar.x as usize, s.tbar.y as usize, s.tbar.z as usize), s.pre_fragment);
                assert_eq!(s.psds.len(), s.post_fragments.len());
                for (p, &post) in s.psds.iter().zip(&s.post_fragments) {
                    assert_eq!(f.get(p.x as usize, p.y as usize, p.z as usize), post);
                    assert_ne!(post, s.pre_fragment);
                    assert_ne!(gt.fragment_to_neuron[&post], gt.fragment_to_neuron[&s.pre_fragment]);
                }
            }
            assert!(!gt.synapses.is_empty());
            // Membrane contrast.
            let g = gray.to_grid();
            let (mut bsum, mut bn, mut isum, mut inn) = (0f64, 0f64, 0f64, 0f64);
            for z in 1..47 {
                for y in 1..47 {
                    for x in 1..47 {
                        let l = n.get(x, y, z);
                        if l == 0 {
                            continue;
                        }
                        let boundary = [(x + 1, y, z), (x - 1, y, z), (x, y + 1, z), (x, y - 1, z), (x, y, z + 1), (x, y, z - 1)]
                            .iter()
                            .any(|&(a, b, c)| n.get(a, b, c) != l);
                        let v = g.get(x, y, z) as f64;
                        if boundary {
                            bsum += v;
                            bn += 1.0;
                        } else {
                            isum += v;
                            inn += 1.0;
                        }
                    }
                }
            }
            assert!(isum / inn - bsum / bn >= small(seed, 12).noise_sigma);
        }
    }

    #[test]
    fn label_candidates_recount() {
        let (gt, _) = generate(&small(2, 12)).unwrap();
        let t = gt.tables();
        let edges = compute_adjacency(&gt.fragment_volume, 1, 16).unwrap();
        let labeled = label_candidates(&t, &edges).unwrap();
        let merges = labeled.iter().filter(|(_, l)| *l).count();
        let recount = edges
            .iter()
            .filter(|e| gt.fragment_to_neuron[&e.a] == gt.fragment_to_neuron[&e.b])
            .count();
        assert_eq!(merges, recount);
        for (e, l) in &labeled {
            if gt.true_merge_edges.contains(&(e.a, e.b)) {
                assert!(*l);
            }
        }
        let bogus = AdjacencyEdge {
            a: 999_999,
            b: 1_000_000,
            contact_voxels: 1,
            rep_location: Voxel::new(0, 0, 0),
            factor: 1,
        };
        assert!(label_candidates(&t, &[bogus]).is_err());
    }

    #[test]
    fn ground_truth_round_trip() {
        let (gt, gray) = generate(&small(3, 5)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_ground_truth(dir.path(), &gt, &gray).unwrap();
        let (back, gray2) = read_ground_truth(dir.path()).unwrap();
        assert_eq!(gray2, gray);
        assert_eq!(back.tables(), gt.tables());
        assert_eq!(back.synapses, gt.synapses);
    }

    #[test]
    fn infeasible_split_count() {
        let mut cfg = small(1, 10_000);
        cfg.neuron_count = 2;
        assert!(matches!(generate(&cfg), Err(Error::Infeasible(_))));
    }
}
