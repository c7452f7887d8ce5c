//! Sparse voxelization of point clouds and per-voxel scalar features.
//!
//! Only occupied voxels are stored. Every voxel of a grid that holds no
//! point carries the no-feature value φ implicitly; callers that need the
//! number of φ voxels in a region derive it from [`overlap_voxel_count`].

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{Execution, CHUNK};
use crate::geometry::{Point3, PointCloud};

/// Voxel indices must lie in `[-KEY_LIMIT, KEY_LIMIT)` on every axis so a key
/// packs into 63 bits.
/// Key boxes up to this many cells are bucketed without sorting.
const DENSE_VOLUME_LIMIT: u64 = 1 << 22;

pub const KEY_LIMIT: i64 = 1 << 20;
const KEY_BITS: u32 = 21;
const KEY_MASK: u64 = (1 << KEY_BITS) - 1;

/// A regular cubic grid anchored at `origin`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub origin: [f64; 3],
    /// Edge length of one voxel, in meters.
    pub resolution: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            origin: [0.0; 3],
            resolution: 1.0,
        }
    }
}

impl GridSpec {
    pub fn new(origin: Point3, resolution: f64) -> Result<Self> {
        let g = Self {
            origin: [origin.x, origin.y, origin.z],
            resolution,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn with_resolution(resolution: f64) -> Result<Self> {
        Self::new(Point3::origin(), resolution)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.resolution > 0.0 && self.resolution.is_finite()) {
            return Err(Error::Config(format!(
                "grid resolution must be positive and finite, got {}",
                self.resolution
            )));
        }
        if !self.origin.iter().all(|v| v.is_finite()) {
            return Err(Error::Config("grid origin must be finite".into()));
        }
        Ok(())
    }

    /// Floor-indexed voxel containing `p`; `None` outside the key range.
    /// A point on a face belongs to the higher-index voxel.
    pub fn key_of(&self, p: &Point3) -> Option<VoxelKey> {
        let idx = |v: f64, o: f64| -> Option<i32> {
            let k = ((v - o) / self.resolution).floor();
            (k >= -(KEY_LIMIT as f64) && k < KEY_LIMIT as f64).then_some(k as i32)
        };
        Some(VoxelKey {
            ix: idx(p.x, self.origin[0])?,
            iy: idx(p.y, self.origin[1])?,
            iz: idx(p.z, self.origin[2])?,
        })
    }
}

/// Integer voxel coordinates. Ordering is lexicographic `(ix, iy, iz)`,
/// which matches the ordering of the packed form.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct VoxelKey {
    pub ix: i32,
    pub iy: i32,
    pub iz: i32,
}

impl VoxelKey {
    pub const fn new(ix: i32, iy: i32, iz: i32) -> Self {
        Self { ix, iy, iz }
    }

    pub fn in_range(&self) -> bool {
        [self.ix, self.iy, self.iz]
            .iter()
            .all(|&v| (v as i64) >= -KEY_LIMIT && (v as i64) < KEY_LIMIT)
    }

    pub fn pack(&self) -> u64 {
        debug_assert!(self.in_range());
        let f = |v: i32| ((v as i64 + KEY_LIMIT) as u64) & KEY_MASK;
        (f(self.ix) << (2 * KEY_BITS)) | (f(self.iy) << KEY_BITS) | f(self.iz)
    }

    pub fn unpack(packed: u64) -> Self {
        let f = |v: u64| ((v & KEY_MASK) as i64 - KEY_LIMIT) as i32;
        Self {
            ix: f(packed >> (2 * KEY_BITS)),
            iy: f(packed >> KEY_BITS),
            iz: f(packed),
        }
    }

    pub fn as_array(&self) -> [i32; 3] {
        [self.ix, self.iy, self.iz]
    }
}

/// Inclusive integer axis-aligned box of voxel indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VoxelBounds {
    pub min: [i32; 3],
    pub max: [i32; 3],
}

impl VoxelBounds {
    pub fn new(min: [i32; 3], max: [i32; 3]) -> Self {
        Self { min, max }
    }

    pub fn from_key(k: VoxelKey) -> Self {
        Self {
            min: k.as_array(),
            max: k.as_array(),
        }
    }

    pub fn include(&mut self, k: VoxelKey) {
        for (a, v) in k.as_array().into_iter().enumerate() {
            self.min[a] = self.min[a].min(v);
            self.max[a] = self.max[a].max(v);
        }
    }

    /// Number of voxels along each axis.
    fn extent(&self) -> [u64; 3] {
        [0, 1, 2].map(|a| (self.max[a] as i64 - self.min[a] as i64 + 1) as u64)
    }

    /// Tight bounds over `keys`; `None` when empty.
    pub fn of_keys<'a>(keys: impl IntoIterator<Item = &'a VoxelKey>) -> Option<Self> {
        let mut it = keys.into_iter();
        let first = *it.next()?;
        let mut b = Self::from_key(first);
        for k in it {
            b.include(*k);
        }
        Some(b)
    }
}

/// Voxel subgrid shared by two scans: per-axis max of minima and min of maxima.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OverlapRegion {
    pub min: [i32; 3],
    pub max: [i32; 3],
}

impl OverlapRegion {
    /// Canonical empty region.
    pub const EMPTY: OverlapRegion = OverlapRegion {
        min: [0; 3],
        max: [-1; 3],
    };

    pub fn is_empty(&self) -> bool {
        (0..3).any(|a| self.min[a] > self.max[a])
    }

    pub fn contains(&self, k: &VoxelKey) -> bool {
        let v = k.as_array();
        (0..3).all(|a| v[a] >= self.min[a] && v[a] <= self.max[a])
    }

    pub fn x_min_o(&self) -> i32 {
        self.min[0]
    }
    pub fn x_max_o(&self) -> i32 {
        self.max[0]
    }
    pub fn y_min_o(&self) -> i32 {
        self.min[1]
    }
    pub fn y_max_o(&self) -> i32 {
        self.max[1]
    }
    pub fn z_min_o(&self) -> i32 {
        self.min[2]
    }
    pub fn z_max_o(&self) -> i32 {
        self.max[2]
    }
}

pub fn compute_overlap(a: &VoxelBounds, b: &VoxelBounds) -> OverlapRegion {
    let mut min = [0; 3];
    let mut max = [0; 3];
    for ax in 0..3 {
        min[ax] = a.min[ax].max(b.min[ax]);
        max[ax] = a.max[ax].min(b.max[ax]);
    }
    let r = OverlapRegion { min, max };
    if r.is_empty() {
        OverlapRegion::EMPTY
    } else {
        r
    }
}

/// Number of voxels in `region`, occupied or not.
pub fn overlap_voxel_count(region: &OverlapRegion) -> u64 {
    if region.is_empty() {
        return 0;
    }
    (0..3)
        .map(|a| (region.max[a] as i64 - region.min[a] as i64 + 1) as u64)
        .product()
}

/// Occupied voxels of one cloud and the indices of the points each contains.
///
/// Stored in compressed-row form: keys ascending, point indices ascending
/// within each voxel.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelMap {
    keys: Vec<VoxelKey>,
    offsets: Vec<usize>,
    indices: Vec<usize>,
    bounds: VoxelBounds,
}

impl VoxelMap {
    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn keys(&self) -> &[VoxelKey] {
        &self.keys
    }

    pub fn bounds(&self) -> VoxelBounds {
        self.bounds
    }

    pub fn point_count(&self) -> usize {
        self.indices.len()
    }

    /// Point indices of the `i`-th occupied voxel.
    pub fn members(&self, i: usize) -> &[usize] {
        &self.indices[self.offsets[i]..self.offsets[i + 1]]
    }

    pub fn get(&self, key: &VoxelKey) -> Option<&[usize]> {
        self.keys.binary_search(key).ok().map(|i| self.members(i))
    }

    pub fn iter(&self) -> impl Iterator<Item = (VoxelKey, &[usize])> + '_ {
        (0..self.keys.len()).map(move |i| (self.keys[i], self.members(i)))
    }
}

pub fn voxelize(cloud: &PointCloud, grid: &GridSpec) -> Result<VoxelMap> {
    voxelize_with(cloud, grid, Execution::Serial)
}

/// Assigns every point to its voxel. Voxels are ordered by key and member
/// indices ascend within a voxel, so serial and parallel results are equal.
/// Compact clouds are bucketed with a counting sort over their key box;
/// sparse ones fall back to sorting `(key, index)` pairs.
pub fn voxelize_with(cloud: &PointCloud, grid: &GridSpec, exec: Execution) -> Result<VoxelMap> {
    grid.validate()?;
    if cloud.is_empty() {
        return Err(Error::InvalidArgument("cannot voxelize an empty cloud".into()));
    }
    let pts = cloud.points();
    let key = |p: &Point3| grid.key_of(p).ok_or(());
    let collected: std::result::Result<Vec<VoxelKey>, ()> = match exec {
        Execution::Serial => pts.iter().map(key).collect(),
        Execution::Parallel => pts.par_iter().with_min_len(CHUNK).map(key).collect(),
    };
    // report the first offending point regardless of which thread hit one
    let point_keys = collected.map_err(|_| Error::OutOfBounds {
        index: pts.iter().position(|p| grid.key_of(p).is_none()).unwrap_or(0),
    })?;
    let span = VoxelBounds::of_keys(&point_keys).expect("non-empty cloud");
    let ext = span.extent();
    let volume = ext[0].saturating_mul(ext[1]).saturating_mul(ext[2]);

    let (keys, offsets, indices) = if volume <= DENSE_VOLUME_LIMIT.max(8 * pts.len() as u64) {
        bucket_dense(&point_keys, &span)
    } else {
        bucket_sorted(&point_keys, exec)
    };
    let bounds = span;
    Ok(VoxelMap {
        keys,
        offsets,
        indices,
        bounds,
    })
}

type Buckets = (Vec<VoxelKey>, Vec<usize>, Vec<usize>);

/// Counting sort over the dense key box `span`; stable in point index.
fn bucket_dense(point_keys: &[VoxelKey], span: &VoxelBounds) -> Buckets {
    let ext = span.extent();
    let volume = (ext[0] * ext[1] * ext[2]) as usize;
    let cell = |k: &VoxelKey| {
        let d = |a: usize, v: i32| (v as i64 - span.min[a] as i64) as u64;
        ((d(0, k.ix) * ext[1] + d(1, k.iy)) * ext[2] + d(2, k.iz)) as usize
    };
    let mut keys = Vec::new();
    let mut offsets = Vec::new();
    let mut start = vec![0usize; volume + 1];
    for k in point_keys {
        start[cell(k) + 1] += 1;
    }
    for c in 0..volume {
        if start[c + 1] > 0 {
            let c64 = c as u64;
            keys.push(VoxelKey {
                ix: span.min[0] + (c64 / (ext[1] * ext[2])) as i32,
                iy: span.min[1] + (c64 / ext[2] % ext[1]) as i32,
                iz: span.min[2] + (c64 % ext[2]) as i32,
            });
            offsets.push(start[c]);
        }
        start[c + 1] += start[c];
    }
    offsets.push(point_keys.len());
    let mut indices = vec![0usize; point_keys.len()];
    for (i, k) in point_keys.iter().enumerate() {
        let c = cell(k);
        indices[start[c]] = i;
        start[c] += 1;
    }
    (keys, offsets, indices)
}

/// Sorts unique `(packed key, index)` pairs; used for sparse key boxes.
fn bucket_sorted(point_keys: &[VoxelKey], exec: Execution) -> Buckets {
    let mut pairs: Vec<(u64, usize)> =
        point_keys.iter().enumerate().map(|(i, k)| (k.pack(), i)).collect();
    match exec {
        Execution::Serial => pairs.sort_unstable(),
        Execution::Parallel => pairs.par_sort_unstable(),
    }
    let mut keys = Vec::new();
    let mut offsets = Vec::new();
    let mut prev = None;
    for (i, &(k, _)) in pairs.iter().enumerate() {
        if prev != Some(k) {
            keys.push(VoxelKey::unpack(k));
            offsets.push(i);
            prev = Some(k);
        }
    }
    offsets.push(pairs.len());
    (keys, offsets, pairs.into_iter().map(|(_, i)| i).collect())
}

/// Per-voxel scalar summarizing the points inside.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    /// Population variance of the z coordinates (m²).
    VarZ,
    /// Number of points.
    Count,
}

impl fmt::Display for FeatureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FeatureKind::VarZ => "varz",
            FeatureKind::Count => "count",
        })
    }
}

impl FromStr for FeatureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "varz" | "var_z" | "variance" => Ok(FeatureKind::VarZ),
            "count" | "n" => Ok(FeatureKind::Count),
            other => Err(Error::InvalidArgument(format!("unknown feature '{other}'"))),
        }
    }
}

/// Sparse voxel → feature table. Absent keys carry φ.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    kind: FeatureKind,
    entries: Vec<(VoxelKey, f64)>,
    bounds: Option<VoxelBounds>,
}

impl FeatureMap {
    /// Builds a map from arbitrary entries. Sorts by key; rejects duplicates
    /// and negative or non-finite features.
    pub fn from_entries(kind: FeatureKind, mut entries: Vec<(VoxelKey, f64)>) -> Result<Self> {
        entries.sort_by_key(|e| e.0);
        if entries.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::InvalidArgument("duplicate voxel key".into()));
        }
        if let Some((k, v)) = entries.iter().find(|(_, v)| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidArgument(format!(
                "feature {v} at {k:?} must be finite and non-negative"
            )));
        }
        if let Some((k, _)) = entries.iter().find(|(k, _)| !k.in_range()) {
            return Err(Error::InvalidArgument(format!("key {k:?} out of range")));
        }
        let bounds = VoxelBounds::of_keys(entries.iter().map(|(k, _)| k));
        Ok(Self {
            kind,
            entries,
            bounds,
        })
    }

    pub fn kind(&self) -> FeatureKind {
        self.kind
    }

    /// Occupied voxels in ascending key order.
    pub fn entries(&self) -> &[(VoxelKey, f64)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Tight bounds over occupied voxels; `None` for an empty map.
    pub fn bounds(&self) -> Option<VoxelBounds> {
        self.bounds
    }

    /// Feature of `key`, or `None` for φ.
    pub fn get(&self, key: &VoxelKey) -> Option<f64> {
        self.entries
            .binary_search_by_key(key, |e| e.0)
            .ok()
            .map(|i| self.entries[i].1)
    }

    /// Debug dump, one `ix,iy,iz,feature` row per occupied voxel.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["ix", "iy", "iz", "feature"])?;
        for (k, v) in &self.entries {
            wr.serialize((k.ix, k.iy, k.iz, v))?;
        }
        wr.flush().map_err(|e| Error::Csv(e.into()))?;
        Ok(())
    }
}

fn voxel_feature(kind: FeatureKind, cloud: &PointCloud, members: &[usize]) -> f64 {
    match kind {
        FeatureKind::Count => members.len() as f64,
        FeatureKind::VarZ => {
            let pts = cloud.points();
            let n = members.len() as f64;
            let mean = members.iter().map(|&i| pts[i].z).sum::<f64>() / n;
            members
                .iter()
                .map(|&i| {
                    let d = pts[i].z - mean;
                    d * d
                })
                .sum::<f64>()
                / n
        }
    }
}

pub fn compute_feature_map(
    voxels: &VoxelMap,
    cloud: &PointCloud,
    kind: FeatureKind,
) -> FeatureMap {
    compute_feature_map_with(voxels, cloud, kind, Execution::Serial)
}

/// Evaluates the feature of every occupied voxel. Member points are summed in
/// index order, so serial and parallel paths give bit-identical features.
pub fn compute_feature_map_with(
    voxels: &VoxelMap,
    cloud: &PointCloud,
    kind: FeatureKind,
    exec: Execution,
) -> FeatureMap {
    let feature = |i: usize| (voxels.keys[i], voxel_feature(kind, cloud, voxels.members(i)));
    let entries = match exec {
        Execution::Serial => (0..voxels.len()).map(feature).collect(),
        Execution::Parallel => (0..voxels.len())
            .into_par_iter()
            .with_min_len(CHUNK / 8)
            .map(feature)
            .collect(),
    };
    FeatureMap {
        kind,
        entries,
        bounds: Some(voxels.bounds),
    }
}

/// Voxelizes and featurizes in one call.
pub fn feature_map_of(
    cloud: &PointCloud,
    grid: &GridSpec,
    kind: FeatureKind,
    exec: Execution,
) -> Result<FeatureMap> {
    let voxels = voxelize_with(cloud, grid, exec)?;
    Ok(compute_feature_map_with(&voxels, cloud, kind, exec))
}
