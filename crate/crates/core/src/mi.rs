//! Joint feature histograms over an overlap region and the mutual
//! information between the two scans' voxel features.
//!
//! Bin 0 on each axis is reserved for φ (unoccupied voxel). Occupied
//! features use `bins` linear bins over `[0, upper_clamp)`; anything at or
//! above the clamp lands in the top bin. Entropies are in nats.

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{Execution, CHUNK};
use crate::geometry::{apply_transform, euler_to_transform, EulerPose, PointCloud};
use crate::voxel::{
    compute_overlap, feature_map_of, overlap_voxel_count, FeatureKind, FeatureMap, GridSpec,
    OverlapRegion, VoxelKey,
};

/// Objective value reported for poses where the scans do not overlap.
pub const NO_OVERLAP_SENTINEL: f64 = f64::NEG_INFINITY;

/// Slack allowed on entropy identities.
pub const ENTROPY_TOLERANCE: f64 = 1e-12;

const ENTROPY_CHUNK: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinningSpec {
    pub kind: FeatureKind,
    /// Number of bins for occupied voxels (φ gets one more).
    pub bins: usize,
    /// Feature value mapped to the last bin.
    pub upper_clamp: f64,
}

impl BinningSpec {
    pub const DEFAULT_BINS: usize = 32;
    pub const DEFAULT_VARZ_CLAMP: f64 = 2.0;
    pub const DEFAULT_COUNT_CLAMP: f64 = 64.0;

    pub fn new(kind: FeatureKind, bins: usize, upper_clamp: f64) -> Result<Self> {
        let s = Self {
            kind,
            bins,
            upper_clamp,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn default_for(kind: FeatureKind) -> Self {
        Self {
            kind,
            bins: Self::DEFAULT_BINS,
            upper_clamp: match kind {
                FeatureKind::VarZ => Self::DEFAULT_VARZ_CLAMP,
                FeatureKind::Count => Self::DEFAULT_COUNT_CLAMP,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.bins < 2 {
            return Err(Error::Config(format!("need at least 2 bins, got {}", self.bins)));
        }
        if !(self.upper_clamp > 0.0 && self.upper_clamp.is_finite()) {
            return Err(Error::Config(format!(
                "upper clamp must be positive and finite, got {}",
                self.upper_clamp
            )));
        }
        Ok(())
    }

    #[inline]
    fn occupied_bin(&self, value: f64) -> usize {
        let b = (value / self.upper_clamp * self.bins as f64).floor();
        // also catches values >= upper_clamp
        1 + (b as usize).min(self.bins - 1)
    }
}

/// Histogram bin of a voxel feature; `None` is φ.
pub fn bin_feature(value: Option<f64>, spec: &BinningSpec) -> Result<usize> {
    match value {
        None => Ok(0),
        Some(v) if v.is_finite() && v >= 0.0 => Ok(spec.occupied_bin(v)),
        Some(v) => Err(Error::InvalidArgument(format!(
            "feature value {v} must be finite and non-negative"
        ))),
    }
}

/// Square matrix of counts indexed `[bin of A][bin of B]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JointHistogram {
    bins: usize,
    includes_phi: bool,
    counts: Vec<u64>,
}

impl JointHistogram {
    pub fn zeros(bins: usize) -> Self {
        Self {
            bins,
            includes_phi: true,
            counts: vec![0; (bins + 1) * (bins + 1)],
        }
    }

    /// Wraps a row-major square matrix. `includes_phi` says whether row and
    /// column 0 are the φ bin.
    pub fn from_counts(counts: Vec<u64>, dim: usize, includes_phi: bool) -> Result<Self> {
        if dim == 0 || counts.len() != dim * dim {
            return Err(Error::InvalidArgument(format!(
                "expected {dim}x{dim} counts, got {}",
                counts.len()
            )));
        }
        let bins = if includes_phi { dim - 1 } else { dim };
        Ok(Self {
            bins,
            includes_phi,
            counts,
        })
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn includes_phi(&self) -> bool {
        self.includes_phi
    }

    /// Side length of the count matrix.
    pub fn dim(&self) -> usize {
        if self.includes_phi {
            self.bins + 1
        } else {
            self.bins
        }
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn get(&self, a: usize, b: usize) -> u64 {
        self.counts[a * self.dim() + b]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Marginal over scan A (row sums).
    pub fn row_sums(&self) -> Vec<u64> {
        self.counts.chunks(self.dim()).map(|r| r.iter().sum()).collect()
    }

    /// Marginal over scan B (column sums).
    pub fn col_sums(&self) -> Vec<u64> {
        let d = self.dim();
        let mut out = vec![0; d];
        for row in self.counts.chunks(d) {
            for (o, c) in out.iter_mut().zip(row) {
                *o += c;
            }
        }
        out
    }

    pub fn transpose(&self) -> Self {
        let d = self.dim();
        let mut counts = vec![0; d * d];
        for a in 0..d {
            for b in 0..d {
                counts[b * d + a] = self.counts[a * d + b];
            }
        }
        Self {
            counts,
            ..self.clone()
        }
    }

    /// Drops the φ row and column, keeping voxels occupied in both scans.
    pub fn without_phi(&self) -> Self {
        if !self.includes_phi {
            return self.clone();
        }
        let d = self.dim();
        let counts = self
            .counts
            .chunks(d)
            .skip(1)
            .flat_map(|row| row[1..].iter().copied())
            .collect();
        Self {
            bins: self.bins,
            includes_phi: false,
            counts,
        }
    }

    /// Count-weighted Pearson correlation between A and B bin indices over
    /// cells occupied in both scans. `None` when either side has no spread.
    pub fn occupied_correlation(&self) -> Option<f64> {
        let d = self.dim();
        let first = usize::from(self.includes_phi);
        let (mut n, mut sa, mut sb) = (0.0, 0.0, 0.0);
        for a in first..d {
            for b in first..d {
                let w = self.get(a, b) as f64;
                n += w;
                sa += w * a as f64;
                sb += w * b as f64;
            }
        }
        if n == 0.0 {
            return None;
        }
        let (ma, mb) = (sa / n, sb / n);
        let (mut cab, mut caa, mut cbb) = (0.0, 0.0, 0.0);
        for a in first..d {
            for b in first..d {
                let w = self.get(a, b) as f64;
                let (da, db) = (a as f64 - ma, b as f64 - mb);
                cab += w * da * db;
                caa += w * da * da;
                cbb += w * db * db;
            }
        }
        (caa > 0.0 && cbb > 0.0).then(|| cab / (caa * cbb).sqrt())
    }

    /// Writes the matrix as CSV: a header row naming the binning, then one
    /// row of counts per A bin. With `omit_phi` row and column 0 are left out.
    pub fn write_csv<W: Write>(&self, spec: &BinningSpec, omit_phi: bool, mut w: W) -> Result<()> {
        let h = if omit_phi { self.without_phi() } else { self.clone() };
        let mut s = String::new();
        writeln!(
            s,
            "feature={},bins={},upper_clamp={},phi={}",
            spec.kind,
            spec.bins,
            spec.upper_clamp,
            if h.includes_phi { "included" } else { "omitted" }
        )
        .unwrap();
        for row in h.counts.chunks(h.dim()) {
            let cells: Vec<String> = row.iter().map(|c| c.to_string()).collect();
            s.push_str(&cells.join(","));
            s.push('\n');
        }
        w.write_all(s.as_bytes())
            .map_err(|e| Error::io("<histogram csv>", e))
    }

    /// Reads a matrix written by [`JointHistogram::write_csv`].
    pub fn read_csv<R: BufRead>(r: R) -> Result<(Self, BinningSpec)> {
        let bad = |line: usize, msg: &str| Error::format("<histogram csv>", format!("line {line}"), msg);
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| bad(1, "empty file"))?
            .map_err(|e| Error::io("<histogram csv>", e))?;
        let mut kind = None;
        let mut bins = None;
        let mut clamp = None;
        let mut phi = None;
        for field in header.split(',') {
            let (k, v) = field.split_once('=').ok_or_else(|| bad(1, "malformed header"))?;
            match k {
                "feature" => kind = Some(v.parse::<FeatureKind>()?),
                "bins" => bins = v.parse::<usize>().ok(),
                "upper_clamp" => clamp = v.parse::<f64>().ok(),
                "phi" => phi = Some(v == "included"),
                _ => return Err(bad(1, "unknown header field")),
            }
        }
        let (Some(kind), Some(bins), Some(clamp), Some(phi)) = (kind, bins, clamp, phi) else {
            return Err(bad(1, "incomplete header"));
        };
        let spec = BinningSpec::new(kind, bins, clamp)?;
        let dim = if phi { bins + 1 } else { bins };
        let mut counts = Vec::with_capacity(dim * dim);
        for (i, line) in lines.enumerate() {
            let line = line.map_err(|e| Error::io("<histogram csv>", e))?;
            let row: Vec<u64> = line
                .split(',')
                .map(|c| c.trim().parse::<u64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| bad(i + 2, "non-integer count"))?;
            if row.len() != dim {
                return Err(bad(i + 2, "row length does not match bins"));
            }
            counts.extend(row);
        }
        Ok((Self::from_counts(counts, dim, phi)?, spec))
    }
}

/// Entries of `fm` whose keys fall inside `region`, still in key order.
fn entries_in(fm: &FeatureMap, region: &OverlapRegion) -> Vec<(VoxelKey, f64)> {
    let e = fm.entries();
    // keys are sorted by ix first, so the x slab is contiguous
    let lo = e.partition_point(|(k, _)| k.ix < region.min[0]);
    let hi = e.partition_point(|(k, _)| k.ix <= region.max[0]);
    e[lo..hi]
        .iter()
        .filter(|(k, _)| region.contains(k))
        .copied()
        .collect()
}

fn check_kinds(a: &FeatureMap, b: &FeatureMap, spec: &BinningSpec) -> Result<()> {
    spec.validate()?;
    if a.kind() != spec.kind || b.kind() != spec.kind {
        return Err(Error::InvalidArgument(format!(
            "feature kinds {} / {} do not match binning kind {}",
            a.kind(),
            b.kind(),
            spec.kind
        )));
    }
    Ok(())
}

pub fn build_joint_histogram(
    feat_a: &FeatureMap,
    feat_b: &FeatureMap,
    region: &OverlapRegion,
    spec: &BinningSpec,
) -> Result<JointHistogram> {
    build_joint_histogram_with(feat_a, feat_b, region, spec, Execution::Serial)
}

/// Bins every voxel of `region` by its pair of features. Occupied voxels are
/// visited explicitly; the (φ, φ) cell is filled analytically so the total
/// equals [`overlap_voxel_count`].
pub fn build_joint_histogram_with(
    feat_a: &FeatureMap,
    feat_b: &FeatureMap,
    region: &OverlapRegion,
    spec: &BinningSpec,
    exec: Execution,
) -> Result<JointHistogram> {
    check_kinds(feat_a, feat_b, spec)?;
    if region.is_empty() {
        return Err(Error::EmptyOverlap);
    }
    let a = entries_in(feat_a, region);
    let b = entries_in(feat_b, region);
    let mut hist = JointHistogram::zeros(spec.bins);
    let d = hist.dim();

    let union = match exec {
        Execution::Serial => {
            let (mut i, mut j) = (0, 0);
            let mut union = 0u64;
            while i < a.len() || j < b.len() {
                let (ba, bb) = match (a.get(i), b.get(j)) {
                    (Some(x), Some(y)) if x.0 == y.0 => {
                        i += 1;
                        j += 1;
                        (spec.occupied_bin(x.1), spec.occupied_bin(y.1))
                    }
                    (Some(x), Some(y)) if x.0 < y.0 => {
                        i += 1;
                        (spec.occupied_bin(x.1), 0)
                    }
                    (Some(x), None) => {
                        i += 1;
                        (spec.occupied_bin(x.1), 0)
                    }
                    (_, Some(y)) => {
                        j += 1;
                        (0, spec.occupied_bin(y.1))
                    }
                    (None, None) => unreachable!(),
                };
                hist.counts[ba * d + bb] += 1;
                union += 1;
            }
            union
        }
        Execution::Parallel => {
            let lookup = |set: &[(VoxelKey, f64)], k: &VoxelKey| {
                set.binary_search_by_key(k, |e| e.0).ok().map(|i| set[i].1)
            };
            // Map: every A voxel paired with B's feature or φ.
            let from_a = a.par_chunks(CHUNK).map(|chunk| {
                let mut local = vec![0u64; d * d];
                for (k, fa) in chunk {
                    let bb = lookup(&b, k).map_or(0, |v| spec.occupied_bin(v));
                    local[spec.occupied_bin(*fa) * d + bb] += 1;
                }
                (local, chunk.len() as u64)
            });
            // Map: B voxels that are φ in A.
            let from_b = b.par_chunks(CHUNK).map(|chunk| {
                let mut local = vec![0u64; d * d];
                let mut n = 0;
                for (k, fb) in chunk {
                    if lookup(&a, k).is_none() {
                        local[spec.occupied_bin(*fb)] += 1;
                        n += 1;
                    }
                }
                (local, n)
            });
            let partials: Vec<(Vec<u64>, u64)> = from_a.chain(from_b).collect();
            // Reduce in chunk order.
            let mut union = 0;
            for (local, n) in partials {
                for (c, l) in hist.counts.iter_mut().zip(local) {
                    *c += l;
                }
                union += n;
            }
            union
        }
    };
    hist.counts[0] = overlap_voxel_count(region) - union;
    Ok(hist)
}

fn plogp_sum(counts: &[u64], total: f64) -> f64 {
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / total;
            p * p.ln()
        })
        .sum()
}

/// Shannon entropy (nats) of the distribution proportional to `counts`.
pub fn entropy(counts: &[u64]) -> Result<f64> {
    entropy_with(counts, Execution::Serial)
}

pub fn entropy_with(counts: &[u64], exec: Execution) -> Result<f64> {
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return Err(Error::InvalidArgument("entropy of an all-zero distribution".into()));
    }
    let t = total as f64;
    // Canonical summation order: the result does not depend on cell layout,
    // so transposing a histogram leaves its joint entropy bit-identical.
    let mut nz: Vec<u64> = counts.iter().copied().filter(|&c| c > 0).collect();
    nz.sort_unstable();
    let s = match exec {
        Execution::Serial => plogp_sum(&nz, t),
        Execution::Parallel => nz
            .par_chunks(ENTROPY_CHUNK)
            .map(|c| plogp_sum(c, t))
            .collect::<Vec<_>>()
            .into_iter()
            .sum(),
    };
    Ok((-s).max(0.0))
}

/// Entropies and mutual information of one joint histogram, in nats.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MIResult {
    pub mi: f64,
    pub h_x: f64,
    pub h_y: f64,
    pub h_xy: f64,
}

pub fn mutual_information(hist: &JointHistogram) -> Result<MIResult> {
    mutual_information_with(hist, Execution::Serial)
}

/// `MI = H(X) + H(Y) − H(X, Y)` with X the row (scan A) and Y the column (scan B) variable.
pub fn mutual_information_with(hist: &JointHistogram, exec: Execution) -> Result<MIResult> {
    if hist.total() == 0 {
        return Err(Error::InvalidArgument("histogram is empty".into()));
    }
    let h_x = entropy_with(&hist.row_sums(), exec)?;
    let h_y = entropy_with(&hist.col_sums(), exec)?;
    let h_xy = entropy_with(hist.counts(), exec)?;
    let mut mi = h_x + h_y - h_xy;
    if mi < 0.0 && mi > -ENTROPY_TOLERANCE {
        mi = 0.0;
    }
    Ok(MIResult { mi, h_x, h_y, h_xy })
}

/// Full breakdown of one objective evaluation.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub mi: MIResult,
    pub histogram: JointHistogram,
    pub region: OverlapRegion,
}

/// Moves `cloud_b` by `pose`, featurizes it on `grid`, and scores it against
/// `feat_a` over their overlap. With `phi_enabled = false` only voxels
/// occupied in both scans enter the histogram used for MI.
pub fn evaluate_pose(
    feat_a: &FeatureMap,
    cloud_b: &PointCloud,
    pose: &EulerPose,
    grid: &GridSpec,
    spec: &BinningSpec,
    phi_enabled: bool,
    exec: Execution,
) -> Result<Evaluation> {
    let t = euler_to_transform(pose)?;
    let moved = apply_transform(cloud_b, &t);
    let feat_b = feature_map_of(&moved, grid, spec.kind, exec)?;
    let (Some(ba), Some(bb)) = (feat_a.bounds(), feat_b.bounds()) else {
        return Err(Error::EmptyOverlap);
    };
    let region = compute_overlap(&ba, &bb);
    let histogram = build_joint_histogram_with(feat_a, &feat_b, &region, spec, exec)?;
    let scored = if phi_enabled {
        histogram
    } else {
        histogram.without_phi()
    };
    if scored.total() == 0 {
        return Err(Error::EmptyOverlap);
    }
    let mi = mutual_information_with(&scored, exec)?;
    Ok(Evaluation {
        mi,
        histogram: scored,
        region,
    })
}

/// MI between `feat_a` and `cloud_b` seen through `pose`, or
/// [`NO_OVERLAP_SENTINEL`] when the overlap is empty.
pub fn mi_objective(
    feat_a: &FeatureMap,
    cloud_b: &PointCloud,
    pose: &EulerPose,
    grid: &GridSpec,
    spec: &BinningSpec,
) -> f64 {
    evaluate_pose(feat_a, cloud_b, pose, grid, spec, true, Execution::default())
        .map_or(NO_OVERLAP_SENTINEL, |e| e.mi.mi)
}
