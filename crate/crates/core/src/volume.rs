//! Chunked 3D volumes of segment labels or grayscale intensities, their
//! on-disk directory format, downsampling and subvolume extraction.
//!
//! A volume directory holds `manifest.json` plus one raw little-endian file
//! per chunk, named `cx_cy_cz.raw`, with voxels in x-fastest order. Edge
//! chunks are padded with zeros to the full `chunk³` extent.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;
pub const DEFAULT_CHUNK: u32 = 64;
pub const DEFAULT_VOXEL_SIZE_NM: f64 = 8.0;
pub const VALID_FACTORS: [u32; 5] = [1, 2, 4, 8, 16];

const MANIFEST: &str = "manifest.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Dtype {
    #[serde(rename = "label64")]
    Label64,
    #[serde(rename = "gray8")]
    Gray8,
}

/// A voxel coordinate. Serialized as `[x, y, z]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(from = "[u32; 3]", into = "[u32; 3]")]
pub struct Voxel {
    pub x: u32,
    pub y: u32,
    pub z: u32,
}

impl Voxel {
    pub const fn new(x: u32, y: u32, z: u32) -> Self {
        Voxel { x, y, z }
    }

    pub fn as_array(self) -> [u32; 3] {
        [self.x, self.y, self.z]
    }
}

impl From<[u32; 3]> for Voxel {
    fn from(v: [u32; 3]) -> Self {
        Voxel::new(v[0], v[1], v[2])
    }
}

impl From<Voxel> for [u32; 3] {
    fn from(v: Voxel) -> Self {
        v.as_array()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VolumeMeta {
    pub dims: [u32; 3],
    pub voxel_size_nm: [f64; 3],
    pub dtype: Dtype,
    pub chunk: u32,
}

impl VolumeMeta {
    pub fn validate(&self) -> Result<()> {
        if self.dims.iter().any(|&d| d == 0) {
            return Err(Error::InvalidManifest(format!("dims must be >= 1, got {:?}", self.dims)));
        }
        if self.chunk < 8 {
            return Err(Error::InvalidManifest(format!("chunk must be >= 8, got {}", self.chunk)));
        }
        if self.voxel_size_nm.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(Error::InvalidManifest(format!(
                "voxel_size_nm must be > 0, got {:?}",
                self.voxel_size_nm
            )));
        }
        Ok(())
    }

    pub fn voxel_count(&self) -> usize {
        self.dims.iter().map(|&d| d as usize).product()
    }

    pub fn chunk_grid(&self) -> [u32; 3] {
        let c = self.chunk;
        [
            self.dims[0].div_ceil(c),
            self.dims[1].div_ceil(c),
            self.dims[2].div_ceil(c),
        ]
    }

    pub fn contains(&self, v: Voxel) -> bool {
        v.x < self.dims[0] && v.y < self.dims[1] && v.z < self.dims[2]
    }
}

/// Field order here is the on-disk order.
#[derive(Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    dims: [u32; 3],
    voxel_size_nm: [f64; 3],
    dtype: Dtype,
    chunk: u32,
}

pub trait VoxelValue: Copy + Default + PartialEq + Send + Sync + std::fmt::Debug + 'static {
    const DTYPE: Dtype;
    const BYTES: usize;
    fn put_le(self, out: &mut Vec<u8>);
    fn get_le(bytes: &[u8]) -> Self;
}

impl VoxelValue for u64 {
    const DTYPE: Dtype = Dtype::Label64;
    const BYTES: usize = 8;
    fn put_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn get_le(bytes: &[u8]) -> Self {
        u64::from_le_bytes(bytes.try_into().expect("8-byte slice"))
    }
}

impl VoxelValue for u8 {
    const DTYPE: Dtype = Dtype::Gray8;
    const BYTES: usize = 1;
    fn put_le(self, out: &mut Vec<u8>) {
        out.push(self);
    }
    fn get_le(bytes: &[u8]) -> Self {
        bytes[0]
    }
}

/// Dense 3D array in x-fastest order: `index = x + dx * (y + dy * z)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid3<T> {
    pub dims: [usize; 3],
    pub data: Vec<T>,
}

impl<T: Copy + Default> Grid3<T> {
    pub fn new(dims: [usize; 3]) -> Self {
        Grid3 {
            dims,
            data: vec![T::default(); dims[0] * dims[1] * dims[2]],
        }
    }

    pub fn from_vec(dims: [usize; 3], data: Vec<T>) -> Result<Self> {
        if data.len() != dims[0] * dims[1] * dims[2] {
            return Err(Error::ShapeMismatch(format!(
                "grid {:?} needs {} values, got {}",
                dims,
                dims[0] * dims[1] * dims[2],
                data.len()
            )));
        }
        Ok(Grid3 { dims, data })
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> T {
        self.data[self.index(x, y, z)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, z: usize, v: T) {
        let i = self.index(x, y, z);
        self.data[i] = v;
    }

    /// Zero-filled (default-filled) read at a signed coordinate.
    #[inline]
    pub fn get_or_default(&self, x: i64, y: i64, z: i64) -> T {
        if x < 0
            || y < 0
            || z < 0
            || x >= self.dims[0] as i64
            || y >= self.dims[1] as i64
            || z >= self.dims[2] as i64
        {
            T::default()
        } else {
            self.get(x as usize, y as usize, z as usize)
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// Chunked volume. Chunks live in a dense grid indexed by chunk coordinate.
#[derive(Clone, Debug, PartialEq)]
pub struct Volume<T> {
    meta: VolumeMeta,
    chunks: Vec<Vec<T>>,
}

pub type LabelVolume = Volume<u64>;
pub type GrayVolume = Volume<u8>;

/// Result of reading a volume directory whose dtype is not known up front.
#[derive(Clone, Debug, PartialEq)]
pub enum AnyVolume {
    Label(LabelVolume),
    Gray(GrayVolume),
}

impl<T: VoxelValue> Volume<T> {
    pub fn new(dims: [u32; 3], voxel_size_nm: [f64; 3], chunk: u32) -> Result<Self> {
        let meta = VolumeMeta {
            dims,
            voxel_size_nm,
            dtype: T::DTYPE,
            chunk,
        };
        meta.validate()?;
        let g = meta.chunk_grid();
        let n = (g[0] * g[1] * g[2]) as usize;
        let c3 = (chunk as usize).pow(3);
        Ok(Volume {
            meta,
            chunks: vec![vec![T::default(); c3]; n],
        })
    }

    pub fn from_grid(grid: &Grid3<T>, voxel_size_nm: [f64; 3], chunk: u32) -> Result<Self> {
        let dims = [grid.dims[0] as u32, grid.dims[1] as u32, grid.dims[2] as u32];
        let mut v = Self::new(dims, voxel_size_nm, chunk)?;
        let c = chunk as usize;
        let g = v.meta.chunk_grid();
        for cz in 0..g[2] as usize {
            for cy in 0..g[1] as usize {
                for cx in 0..g[0] as usize {
                    let ci = cx + g[0] as usize * (cy + g[1] as usize * cz);
                    let chunk_data = &mut v.chunks[ci];
                    for lz in 0..c {
                        let z = cz * c + lz;
                        if z >= grid.dims[2] {
                            break;
                        }
                        for ly in 0..c {
                            let y = cy * c + ly;
                            if y >= grid.dims[1] {
                                break;
                            }
                            let x0 = cx * c;
                            let x1 = (x0 + c).min(grid.dims[0]);
                            let src = grid.index(x0, y, z);
                            let dst = c * (ly + c * lz);
                            chunk_data[dst..dst + (x1 - x0)]
                                .copy_from_slice(&grid.data[src..src + (x1 - x0)]);
                        }
                    }
                }
            }
        }
        Ok(v)
    }

    pub fn to_grid(&self) -> Grid3<T> {
        let d = self.dims_usize();
        let mut grid = Grid3::new(d);
        let c = self.meta.chunk as usize;
        let g = self.meta.chunk_grid();
        for (ci, chunk_data) in self.chunks.iter().enumerate() {
            let cx = ci % g[0] as usize;
            let cy = (ci / g[0] as usize) % g[1] as usize;
            let cz = ci / (g[0] as usize * g[1] as usize);
            for lz in 0..c {
                let z = cz * c + lz;
                if z >= d[2] {
                    break;
                }
                for ly in 0..c {
                    let y = cy * c + ly;
                    if y >= d[1] {
                        break;
                    }
                    let x0 = cx * c;
                    let x1 = (x0 + c).min(d[0]);
                    let dst = grid.index(x0, y, z);
                    let src = c * (ly + c * lz);
                    grid.data[dst..dst + (x1 - x0)].copy_from_slice(&chunk_data[src..src + (x1 - x0)]);
                }
            }
        }
        grid
    }

    pub fn meta(&self) -> &VolumeMeta {
        &self.meta
    }

    pub fn dims(&self) -> [u32; 3] {
        self.meta.dims
    }

    pub fn dims_usize(&self) -> [usize; 3] {
        [
            self.meta.dims[0] as usize,
            self.meta.dims[1] as usize,
            self.meta.dims[2] as usize,
        ]
    }

    /// Chunk blocks keyed by chunk coordinate.
    pub fn chunks(&self) -> HashMap<[u32; 3], &[T]> {
        let g = self.meta.chunk_grid();
        self.chunks
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let i = i as u32;
                ([i % g[0], (i / g[0]) % g[1], i / (g[0] * g[1])], c.as_slice())
            })
            .collect()
    }

    #[inline]
    fn locate(&self, x: u32, y: u32, z: u32) -> (usize, usize) {
        let c = self.meta.chunk;
        let g = self.meta.chunk_grid();
        let ci = (x / c) + g[0] * ((y / c) + g[1] * (z / c));
        let li = (x % c) + c * ((y % c) + c * (z % c));
        (ci as usize, li as usize)
    }

    /// Value at an in-bounds voxel. Panics when out of bounds.
    #[inline]
    pub fn get(&self, v: Voxel) -> T {
        assert!(self.meta.contains(v), "voxel {:?} outside {:?}", v, self.meta.dims);
        let (ci, li) = self.locate(v.x, v.y, v.z);
        self.chunks[ci][li]
    }

    /// Zero-filled read at a signed coordinate.
    #[inline]
    pub fn get_or_default(&self, x: i64, y: i64, z: i64) -> T {
        let d = self.meta.dims;
        if x < 0 || y < 0 || z < 0 || x >= d[0] as i64 || y >= d[1] as i64 || z >= d[2] as i64 {
            return T::default();
        }
        let (ci, li) = self.locate(x as u32, y as u32, z as u32);
        self.chunks[ci][li]
    }

    pub fn set(&mut self, v: Voxel, value: T) {
        assert!(self.meta.contains(v), "voxel {:?} outside {:?}", v, self.meta.dims);
        let (ci, li) = self.locate(v.x, v.y, v.z);
        self.chunks[ci][li] = value;
    }
}

pub fn write_volume<T: VoxelValue>(v: &Volume<T>, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        dims: v.meta.dims,
        voxel_size_nm: v.meta.voxel_size_nm,
        dtype: v.meta.dtype,
        chunk: v.meta.chunk,
    };
    let path = dir.join(MANIFEST);
    let text = serde_json::to_string(&manifest).map_err(|e| Error::json(&path, e))?;
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    let g = v.meta.chunk_grid();
    v.chunks.par_iter().enumerate().try_for_each(|(i, chunk)| {
        let i = i as u32;
        let (cx, cy, cz) = (i % g[0], (i / g[0]) % g[1], i / (g[0] * g[1]));
        let mut bytes = Vec::with_capacity(chunk.len() * T::BYTES);
        for &val in chunk {
            val.put_le(&mut bytes);
        }
        let p = dir.join(format!("{cx}_{cy}_{cz}.raw"));
        fs::write(&p, bytes).map_err(|e| Error::io(&p, e))
    })
}

fn read_manifest(dir: &Path) -> Result<VolumeMeta> {
    let path = dir.join(MANIFEST);
    if !path.is_file() {
        return Err(Error::MissingManifest(path));
    }
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let m: Manifest = serde_json::from_str(&text).map_err(|e| Error::json(&path, e))?;
    if m.format_version != FORMAT_VERSION {
        return Err(Error::InvalidManifest(format!(
            "unsupported format_version {}",
            m.format_version
        )));
    }
    let meta = VolumeMeta {
        dims: m.dims,
        voxel_size_nm: m.voxel_size_nm,
        dtype: m.dtype,
        chunk: m.chunk,
    };
    meta.validate()?;
    Ok(meta)
}

fn read_typed<T: VoxelValue>(dir: &Path, meta: VolumeMeta) -> Result<Volume<T>> {
    let g = meta.chunk_grid();
    let c3 = (meta.chunk as usize).pow(3);
    let n = (g[0] * g[1] * g[2]) as usize;
    let chunks = (0..n)
        .into_par_iter()
        .map(|i| {
            let i32_ = i as u32;
            let (cx, cy, cz) = (i32_ % g[0], (i32_ / g[0]) % g[1], i32_ / (g[0] * g[1]));
            let p = dir.join(format!("{cx}_{cy}_{cz}.raw"));
            let bytes = fs::read(&p).map_err(|e| Error::io(&p, e))?;
            let expected = c3 * T::BYTES;
            if bytes.len() != expected {
                return Err(Error::ChunkSizeMismatch {
                    path: p,
                    expected,
                    found: bytes.len(),
                });
            }
            Ok(bytes.chunks_exact(T::BYTES).map(T::get_le).collect())
        })
        .collect::<Result<Vec<Vec<T>>>>()?;
    Ok(Volume { meta, chunks })
}

pub fn read_volume(dir: &Path) -> Result<AnyVolume> {
    let meta = read_manifest(dir)?;
    match meta.dtype {
        Dtype::Label64 => Ok(AnyVolume::Label(read_typed(dir, meta)?)),
        Dtype::Gray8 => Ok(AnyVolume::Gray(read_typed(dir, meta)?)),
    }
}

pub fn read_label_volume(dir: &Path) -> Result<LabelVolume> {
    match read_volume(dir)? {
        AnyVolume::Label(v) => Ok(v),
        AnyVolume::Gray(_) => Err(Error::InvalidManifest(format!(
            "{} holds gray8, expected label64",
            dir.display()
        ))),
    }
}

pub fn read_gray_volume(dir: &Path) -> Result<GrayVolume> {
    match read_volume(dir)? {
        AnyVolume::Gray(v) => Ok(v),
        AnyVolume::Label(_) => Err(Error::InvalidManifest(format!(
            "{} holds label64, expected gray8",
            dir.display()
        ))),
    }
}

/// Per-block reduction used by [`downsample`].
pub trait Downsample: VoxelValue {
    fn reduce(block: &mut Vec<Self>) -> Self;
}

impl Downsample for u64 {
    /// Mode; ties go to the smallest label.
    fn reduce(block: &mut Vec<u64>) -> u64 {
        block.sort_unstable();
        let mut best = block[0];
        let mut best_count = 0usize;
        let mut i = 0;
        while i < block.len() {
            let mut j = i;
            while j < block.len() && block[j] == block[i] {
                j += 1;
            }
            if j - i > best_count {
                best_count = j - i;
                best = block[i];
            }
            i = j;
        }
        best
    }
}

impl Downsample for u8 {
    /// Mean rounded half-up.
    fn reduce(block: &mut Vec<u8>) -> u8 {
        let n = block.len() as u64;
        let sum: u64 = block.iter().map(|&v| v as u64).sum();
        ((2 * sum + n) / (2 * n)) as u8
    }
}

pub fn check_factor(factor: u32) -> Result<()> {
    if VALID_FACTORS.contains(&factor) {
        Ok(())
    } else {
        Err(Error::InvalidFactor(factor))
    }
}

/// Reduce each `factor³` block (clipped at the volume edge) to one voxel.
pub fn downsample_grid<T: Downsample>(grid: &Grid3<T>, factor: u32) -> Result<Grid3<T>> {
    check_factor(factor)?;
    if factor == 1 {
        return Ok(grid.clone());
    }
    let f = factor as usize;
    let out_dims = [
        grid.dims[0].div_ceil(f),
        grid.dims[1].div_ceil(f),
        grid.dims[2].div_ceil(f),
    ];
    let plane = out_dims[0] * out_dims[1];
    let data: Vec<T> = (0..out_dims[2])
        .into_par_iter()
        .flat_map_iter(|oz| {
            let mut out = Vec::with_capacity(plane);
            let mut block = Vec::with_capacity(f * f * f);
            for oy in 0..out_dims[1] {
                for ox in 0..out_dims[0] {
                    block.clear();
                    for z in oz * f..((oz + 1) * f).min(grid.dims[2]) {
                        for y in oy * f..((oy + 1) * f).min(grid.dims[1]) {
                            for x in ox * f..((ox + 1) * f).min(grid.dims[0]) {
                                block.push(grid.get(x, y, z));
                            }
                        }
                    }
                    out.push(T::reduce(&mut block));
                }
            }
            out
        })
        .collect();
    Grid3::from_vec(out_dims, data)
}

pub fn downsample<T: Downsample>(v: &Volume<T>, factor: u32) -> Result<Volume<T>> {
    check_factor(factor)?;
    if factor == 1 {
        return Ok(v.clone());
    }
    let grid = downsample_grid(&v.to_grid(), factor)?;
    let f = factor as f64;
    let vs = v.meta.voxel_size_nm;
    Volume::from_grid(&grid, [vs[0] * f, vs[1] * f, vs[2] * f], v.meta.chunk)
}

/// `edge³` block centred on `center`, x-fastest, zero-filled outside the volume.
pub fn extract_subvolume<T: VoxelValue>(v: &Volume<T>, center: Voxel, edge: u32) -> Result<Grid3<T>> {
    if edge % 2 == 0 {
        return Err(Error::InvalidArgument(format!("subvolume edge must be odd, got {edge}")));
    }
    let e = edge as usize;
    let half = (edge / 2) as i64;
    let mut out = Grid3::new([e, e, e]);
    let (cx, cy, cz) = (center.x as i64, center.y as i64, center.z as i64);
    let mut i = 0;
    for dz in 0..e as i64 {
        for dy in 0..e as i64 {
            for dx in 0..e as i64 {
                out.data[i] = v.get_or_default(cx - half + dx, cy - half + dy, cz - half + dz);
                i += 1;
            }
        }
    }
    Ok(out)
}
