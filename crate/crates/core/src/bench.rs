//! Benchmark harness: synthetic scenes, perturbed initial estimates, error
//! metrics, batch runs and CSV output for boxplots and mean-error tables.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::align::{align, AlignmentConfig};
use crate::error::{Error, Result};
use crate::geometry::{
    apply_transform, euler_to_transform, transform_to_euler, EulerPose, Point3, PointCloud,
    RigidTransform,
};
use crate::scan_io::{list_kitti_scans, load_kitti_bin, load_kitti_poses, relative_ground_truth};

/// Parameters of a synthetic urban-like scene: a ground plane at `z = 0`
/// with axis-aligned boxes standing on it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub seed: u64,
    /// Side of the square ground patch, in meters, centered on the origin.
    pub extent: f64,
    pub n_points: usize,
    pub n_structures: usize,
    /// Standard deviation of the noise added along each surface normal, in meters.
    pub noise_sigma: f64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            seed: 1,
            extent: 80.0,
            n_points: 50_000,
            n_structures: 40,
            noise_sigma: 0.02,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.extent > 0.0 && self.extent.is_finite()) {
            return Err(Error::Config("scene extent must be positive".into()));
        }
        if self.n_points == 0 {
            return Err(Error::Config("scene needs at least one point".into()));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::Config("noise sigma must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Block {
    cx: f64,
    cy: f64,
    hx: f64,
    hy: f64,
    height: f64,
}

impl Block {
    fn covers(&self, x: f64, y: f64) -> bool {
        (x - self.cx).abs() < self.hx && (y - self.cy).abs() < self.hy
    }
}

#[derive(Debug, Clone, Copy)]
enum Surface {
    Ground,
    /// Wall of a block; `axis` 0 faces ±x, 1 faces ±y.
    Wall { block: usize, axis: usize, sign: f64 },
    Roof { block: usize },
}

/// Geometry of a synthetic scene, independent of how it is sampled.
#[derive(Debug, Clone)]
pub struct SceneLayout {
    extent: f64,
    blocks: Vec<Block>,
    surfaces: Vec<Surface>,
    cumulative_area: Vec<f64>,
}

impl SceneLayout {
    pub fn generate(spec: &SceneSpec) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let half = spec.extent / 2.0;
        let mut blocks: Vec<Block> = Vec::with_capacity(spec.n_structures);
        let mut attempts = 0;
        while blocks.len() < spec.n_structures && attempts < 100 * spec.n_structures.max(1) {
            attempts += 1;
            let hx = rng.random_range(1.0..4.0f64).min(half / 2.0);
            let hy = rng.random_range(1.0..4.0f64).min(half / 2.0);
            let lim_x = (0.9 * half - hx).max(0.0);
            let lim_y = (0.9 * half - hy).max(0.0);
            let b = Block {
                cx: rng.random_range(-lim_x..=lim_x),
                cy: rng.random_range(-lim_y..=lim_y),
                hx,
                hy,
                height: rng.random_range(1.0..6.0),
            };
            let clear = blocks.iter().all(|o| {
                (o.cx - b.cx).abs() > o.hx + b.hx + 1.0 || (o.cy - b.cy).abs() > o.hy + b.hy + 1.0
            });
            if clear {
                blocks.push(b);
            }
        }

        let mut surfaces = vec![Surface::Ground];
        let mut areas = vec![spec.extent * spec.extent];
        for (i, b) in blocks.iter().enumerate() {
            for (axis, len) in [(0, 2.0 * b.hy), (1, 2.0 * b.hx)] {
                for sign in [-1.0, 1.0] {
                    surfaces.push(Surface::Wall { block: i, axis, sign });
                    areas.push(len * b.height);
                }
            }
            surfaces.push(Surface::Roof { block: i });
            areas.push(4.0 * b.hx * b.hy);
        }
        let cumulative_area = areas
            .iter()
            .scan(0.0, |acc, a| {
                *acc += a;
                Some(*acc)
            })
            .collect();
        Ok(Self {
            extent: spec.extent,
            blocks,
            surfaces,
            cumulative_area,
        })
    }

    pub fn block_count(&self) -> usize {
        self.blocks.len()
    }

    fn sample_one(&self, rng: &mut ChaCha8Rng, noise: &Normal<f64>) -> Point3 {
        let total = *self.cumulative_area.last().unwrap();
        let u = rng.random_range(0.0..total);
        let s = self.cumulative_area.partition_point(|&c| c <= u).min(self.surfaces.len() - 1);
        let n = noise.sample(rng);
        let half = self.extent / 2.0;
        match self.surfaces[s] {
            Surface::Ground => loop {
                let x = rng.random_range(-half..half);
                let y = rng.random_range(-half..half);
                if !self.blocks.iter().any(|b| b.covers(x, y)) {
                    return Point3::new(x, y, n);
                }
            },
            Surface::Wall { block, axis, sign } => {
                let b = &self.blocks[block];
                let z = rng.random_range(0.0..b.height);
                if axis == 0 {
                    let y = rng.random_range(-b.hy..b.hy);
                    Point3::new(b.cx + sign * b.hx + n, b.cy + y, z)
                } else {
                    let x = rng.random_range(-b.hx..b.hx);
                    Point3::new(b.cx + x, b.cy + sign * b.hy + n, z)
                }
            }
            Surface::Roof { block } => {
                let b = &self.blocks[block];
                Point3::new(
                    b.cx + rng.random_range(-b.hx..b.hx),
                    b.cy + rng.random_range(-b.hy..b.hy),
                    b.height + n,
                )
            }
        }
    }

    /// Draws exactly `n` surface points accepted by `keep`, area-weighted.
    /// Fails when `keep` rejects nearly everything.
    pub fn sample(
        &self,
        n: usize,
        noise_sigma: f64,
        rng: &mut ChaCha8Rng,
        keep: impl Fn(&Point3) -> bool,
    ) -> Result<PointCloud> {
        let noise = Normal::new(0.0, noise_sigma)
            .map_err(|e| Error::Config(format!("noise sigma: {e}")))?;
        let mut pts = Vec::with_capacity(n);
        let mut draws = 0usize;
        while pts.len() < n {
            draws += 1;
            if draws > 1000 * n.max(1) {
                return Err(Error::Config("sampling region barely intersects the scene".into()));
            }
            let p = self.sample_one(rng, &noise);
            if keep(&p) {
                pts.push(p);
            }
        }
        Ok(PointCloud::from_points(pts))
    }
}

/// Deterministic synthetic scene for `spec`.
pub fn synth_scene(spec: &SceneSpec) -> Result<PointCloud> {
    let layout = SceneLayout::generate(spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(1);
    layout.sample(spec.n_points, spec.noise_sigma, &mut rng, |_| true)
}

/// A scan pair with known ground truth (`truth` takes B's points into A's frame).
#[derive(Debug, Clone)]
pub struct BenchmarkCase {
    pub label: String,
    pub scan_a: PointCloud,
    pub scan_b: PointCloud,
    pub truth: RigidTransform,
}

/// Two independent samplings of one scene taken from sensor poses `identity`
/// and `truth`, each keeping only points within `range` meters (horizontal)
/// of its sensor. Scan B is expressed in its own sensor frame.
pub fn synth_pair(spec: &SceneSpec, truth: &EulerPose, range: f64) -> Result<BenchmarkCase> {
    if range.is_nan() || range <= 0.0 {
        return Err(Error::Config("sensor range must be positive".into()));
    }
    let layout = SceneLayout::generate(spec)?;
    let t = euler_to_transform(truth)?;
    let mut rng_a = ChaCha8Rng::seed_from_u64(spec.seed);
    rng_a.set_stream(2);
    let mut rng_b = ChaCha8Rng::seed_from_u64(spec.seed);
    rng_b.set_stream(3);
    let within = |cx: f64, cy: f64| move |p: &Point3| (p.x - cx).hypot(p.y - cy) <= range;
    let scan_a = layout.sample(spec.n_points, spec.noise_sigma, &mut rng_a, within(0.0, 0.0))?;
    let world_b = layout.sample(
        spec.n_points,
        spec.noise_sigma,
        &mut rng_b,
        within(truth.tx, truth.ty),
    )?;
    let scan_b = apply_transform(&world_b, &t.inverse());
    Ok(BenchmarkCase {
        label: format!("synthetic-{}", spec.seed),
        scan_a,
        scan_b,
        truth: t,
    })
}

/// Horizontal sensor range used for synthetic scans, in meters.
pub const DEFAULT_SENSOR_RANGE: f64 = 40.0;

/// Seeded synthetic cases: one scene per seed, each with a modest planar
/// ground-truth motion (up to 3 m and 10° of yaw).
pub fn synthetic_cases(base: &SceneSpec, seeds: &[u64], range: f64) -> Result<Vec<BenchmarkCase>> {
    seeds
        .par_iter()
        .map(|&seed| {
            let spec = SceneSpec { seed, ..*base };
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(4);
            let dir = rng.random_range(0.0..2.0 * PI);
            let dist = rng.random_range(0.0..3.0);
            let truth = EulerPose::new(
                dist * dir.cos(),
                dist * dir.sin(),
                0.0,
                0.0,
                0.0,
                rng.random_range(-10.0f64..10.0).to_radians(),
            );
            synth_pair(&spec, &truth, range)
        })
        .collect()
}

/// KITTI-style cases pairing scan `i` with scan `i + offset` every `stride`
/// scans. Scans and poses must already share a frame.
pub fn kitti_cases(
    scan_dir: impl AsRef<Path>,
    poses: impl AsRef<Path>,
    stride: usize,
    offset: usize,
    max_pairs: usize,
) -> Result<Vec<BenchmarkCase>> {
    if stride == 0 || offset == 0 {
        return Err(Error::Config("stride and offset must be positive".into()));
    }
    let scans = list_kitti_scans(scan_dir)?;
    let track = load_kitti_poses(poses)?;
    let n = scans.len().min(track.len());
    let mut cases = Vec::new();
    for i in (0..n.saturating_sub(offset)).step_by(stride).take(max_pairs) {
        let j = i + offset;
        cases.push(BenchmarkCase {
            label: format!("kitti-{i}-{j}"),
            scan_a: load_kitti_bin(&scans[i])?,
            scan_b: load_kitti_bin(&scans[j])?,
            truth: relative_ground_truth(&track, i, j)?,
        });
    }
    Ok(cases)
}

/// Fraction of the swept magnitude that leaks into the constrained axes.
pub const LEAK_FRACTION: f64 = 0.05;

/// Offsets `truth` by exactly `dt` meters in a random planar direction and by
/// `±dtheta_deg` of yaw, plus Gaussian leakage into z, roll and pitch with a
/// standard deviation of 5 % of the respective magnitude.
pub fn perturb_pose(truth: &EulerPose, dt: f64, dtheta_deg: f64, seed: u64) -> EulerPose {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dir = rng.random_range(0.0..2.0 * PI);
    let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
    let dtheta = dtheta_deg.to_radians();
    let tz = Normal::new(0.0, LEAK_FRACTION * dt).expect("dt >= 0");
    let rot = Normal::new(0.0, LEAK_FRACTION * dtheta).expect("dtheta >= 0");
    EulerPose {
        tx: truth.tx + dt * dir.cos(),
        ty: truth.ty + dt * dir.sin(),
        tz: truth.tz + tz.sample(&mut rng),
        rx: truth.rx + rot.sample(&mut rng),
        ry: truth.ry + rot.sample(&mut rng),
        rz: truth.rz + sign * dtheta,
    }
}

pub fn translation_error(est: &RigidTransform, truth: &RigidTransform) -> f64 {
    (est.translation() - truth.translation()).norm()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RotationError {
    /// L2 norm of the Euler angles of `inverse(truth) · est`, in degrees.
    /// Equal to `geodesic_deg` when that decomposition is degenerate.
    pub euler_l2_deg: f64,
    /// Angle of the relative rotation, in degrees.
    pub geodesic_deg: f64,
    pub degenerate: bool,
}

pub fn rotation_error(est: &RigidTransform, truth: &RigidTransform) -> RotationError {
    let rel = truth.inverse().compose(est);
    let r = rel.rotation();
    let cos = ((r.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
    let geodesic_deg = cos.acos().to_degrees();
    match transform_to_euler(&rel) {
        Ok(p) => RotationError {
            euler_l2_deg: (p.rx * p.rx + p.ry * p.ry + p.rz * p.rz).sqrt().to_degrees(),
            geodesic_deg,
            degenerate: false,
        },
        Err(_) => RotationError {
            euler_l2_deg: geodesic_deg,
            geodesic_deg,
            degenerate: true,
        },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationSpec {
    /// Planar translation offsets in meters.
    pub translation_magnitudes: Vec<f64>,
    /// Yaw offsets in degrees.
    pub rotation_magnitudes: Vec<f64>,
    pub trials_per_magnitude: usize,
    pub seed: u64,
}

/// One initial-error class: a planar offset and a yaw offset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MagnitudeClass {
    pub translation_m: f64,
    pub rotation_deg: f64,
    /// Value reported in the `magnitude` column.
    pub magnitude: f64,
}

impl PerturbationSpec {
    /// Magnitude classes. When both lists are given they are paired element
    /// by element; when only one is given it is swept with the other at zero.
    pub fn classes(&self) -> Result<Vec<MagnitudeClass>> {
        let t = &self.translation_magnitudes;
        let r = &self.rotation_magnitudes;
        if t.iter().chain(r).any(|m| !(*m > 0.0 && m.is_finite())) {
            return Err(Error::Config("perturbation magnitudes must be positive".into()));
        }
        if self.trials_per_magnitude == 0 {
            return Err(Error::Config("need at least one trial per magnitude".into()));
        }
        Ok(match (t.is_empty(), r.is_empty()) {
            (true, true) => vec![],
            (false, true) => t
                .iter()
                .map(|&m| MagnitudeClass { translation_m: m, rotation_deg: 0.0, magnitude: m })
                .collect(),
            (true, false) => r
                .iter()
                .map(|&m| MagnitudeClass { translation_m: 0.0, rotation_deg: m, magnitude: m })
                .collect(),
            (false, false) => {
                if t.len() != r.len() {
                    return Err(Error::Config(format!(
                        "paired sweeps need equal lengths ({} translation vs {} rotation)",
                        t.len(),
                        r.len()
                    )));
                }
                t.iter()
                    .zip(r)
                    .map(|(&tm, &rm)| MagnitudeClass { translation_m: tm, rotation_deg: rm, magnitude: tm })
                    .collect()
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub class_index: usize,
    pub class: MagnitudeClass,
    pub trial: usize,
    pub case_index: usize,
    pub init_terr_m: f64,
    pub final_terr_m: f64,
    pub init_rerr_deg: f64,
    pub final_rerr_deg: f64,
    pub geodesic_rerr_deg: f64,
    pub rotation_degenerate: bool,
    pub iters: usize,
    pub wall_s: f64,
    pub converged: bool,
    pub error: Option<String>,
    pub initial_pose: EulerPose,
    pub estimated_pose: EulerPose,
}

impl TrialRecord {
    /// Final error below the initial error on every perturbed component.
    pub fn improved(&self) -> bool {
        let t_ok = self.class.translation_m == 0.0 || self.final_terr_m < self.init_terr_m;
        let r_ok = self.class.rotation_deg == 0.0 || self.final_rerr_deg < self.init_rerr_deg;
        self.error.is_none() && t_ok && r_ok
    }
}

fn trial_seed(seed: u64, class: usize, trial: usize) -> u64 {
    seed ^ ((class as u64) << 40) ^ ((trial as u64) << 8) ^ 0x9E37_79B9_7F4A_7C15
}

fn run_trial(
    cases: &[BenchmarkCase],
    class_index: usize,
    class: MagnitudeClass,
    trial: usize,
    pert: &PerturbationSpec,
    cfg: &AlignmentConfig,
) -> TrialRecord {
    let case_index = trial % cases.len();
    let case = &cases[case_index];
    let truth_pose = transform_to_euler(&case.truth).unwrap_or_default();
    let initial_pose = perturb_pose(
        &truth_pose,
        class.translation_m,
        class.rotation_deg,
        trial_seed(pert.seed, class_index, trial),
    );
    let t0 = euler_to_transform(&initial_pose).expect("finite perturbed pose");
    let init_terr_m = translation_error(&t0, &case.truth);
    let init_rot = rotation_error(&t0, &case.truth);
    let mut rec = TrialRecord {
        class_index,
        class,
        trial,
        case_index,
        init_terr_m,
        final_terr_m: init_terr_m,
        init_rerr_deg: init_rot.euler_l2_deg,
        final_rerr_deg: init_rot.euler_l2_deg,
        geodesic_rerr_deg: init_rot.geodesic_deg,
        rotation_degenerate: init_rot.degenerate,
        iters: 0,
        wall_s: 0.0,
        converged: false,
        error: None,
        initial_pose,
        estimated_pose: initial_pose,
    };
    match align(&case.scan_a, &case.scan_b, &t0, cfg) {
        Ok(report) => {
            let rot = rotation_error(&report.estimated, &case.truth);
            rec.final_terr_m = translation_error(&report.estimated, &case.truth);
            rec.final_rerr_deg = rot.euler_l2_deg;
            rec.geodesic_rerr_deg = rot.geodesic_deg;
            rec.rotation_degenerate = rot.degenerate;
            rec.iters = report.iterations;
            rec.wall_s = report.wall_time;
            rec.converged = report.converged();
            rec.estimated_pose = report.estimated_pose;
        }
        Err(e) => {
            log::warn!("{} class {class_index} trial {trial}: {e}", case.label);
            rec.error = Some(e.to_string());
        }
    }
    rec
}

/// Runs every magnitude class × trial. Trial `k` uses case `k % cases.len()`.
/// With `jobs > 1` trials run on a dedicated pool; output order is always
/// `(class, trial)`. Failed alignments are kept as non-converged rows.
pub fn run_benchmark(
    cases: &[BenchmarkCase],
    pert: &PerturbationSpec,
    cfg: &AlignmentConfig,
    jobs: usize,
) -> Result<Vec<TrialRecord>> {
    cfg.validate()?;
    let classes = pert.classes()?;
    if classes.is_empty() {
        return Ok(vec![]);
    }
    if cases.is_empty() {
        return Err(Error::Config("benchmark needs at least one scan pair".into()));
    }
    let work: Vec<(usize, MagnitudeClass, usize)> = classes
        .iter()
        .enumerate()
        .flat_map(|(ci, c)| (0..pert.trials_per_magnitude).map(move |t| (ci, *c, t)))
        .collect();
    let go = |&(ci, c, t): &(usize, MagnitudeClass, usize)| run_trial(cases, ci, c, t, pert, cfg);
    let mut records: Vec<TrialRecord> = if jobs <= 1 {
        work.iter().map(go).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::Config(e.to_string()))?;
        pool.install(|| work.par_iter().map(go).collect())
    };
    records.sort_by_key(|r| (r.class_index, r.trial));
    Ok(records)
}

pub const TRIAL_CSV_HEADER: [&str; 10] = [
    "magnitude",
    "trial",
    "init_terr_m",
    "final_terr_m",
    "init_rerr_deg",
    "final_rerr_deg",
    "geodesic_rerr_deg",
    "iters",
    "wall_s",
    "converged",
];

/// One per-trial CSV row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRow {
    pub magnitude: f64,
    pub trial: usize,
    pub init_terr_m: f64,
    pub final_terr_m: f64,
    pub init_rerr_deg: f64,
    pub final_rerr_deg: f64,
    pub geodesic_rerr_deg: f64,
    pub iters: usize,
    pub wall_s: f64,
    pub converged: bool,
}

impl From<&TrialRecord> for TrialRow {
    fn from(r: &TrialRecord) -> Self {
        Self {
            magnitude: r.class.magnitude,
            trial: r.trial,
            init_terr_m: r.init_terr_m,
            final_terr_m: r.final_terr_m,
            init_rerr_deg: r.init_rerr_deg,
            final_rerr_deg: r.final_rerr_deg,
            geodesic_rerr_deg: r.geodesic_rerr_deg,
            iters: r.iters,
            wall_s: r.wall_s,
            converged: r.converged,
        }
    }
}

pub fn write_trials_csv<W: Write>(records: &[TrialRecord], w: W) -> Result<()> {
    let mut wr = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    wr.write_record(TRIAL_CSV_HEADER)?;
    for r in records {
        wr.serialize(TrialRow::from(r))?;
    }
    wr.flush().map_err(|e| Error::Csv(e.into()))?;
    Ok(())
}

pub fn read_trials_csv<R: Read>(r: R) -> Result<Vec<TrialRow>> {
    let mut rd = csv::Reader::from_reader(r);
    rd.deserialize().map(|row| row.map_err(Error::from)).collect()
}

/// Linearly interpolated quantile of sorted data (`q` in [0, 1]).
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    match sorted.len() {
        0 => f64::NAN,
        1 => sorted[0],
        n => {
            let pos = q * (n - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = pos.ceil() as usize;
            sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
        }
    }
}

/// Boxplot statistics of one column.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColumnStats {
    pub mean: f64,
    pub median: f64,
    pub q25: f64,
    pub q75: f64,
}

impl ColumnStats {
    pub fn of(values: &[f64]) -> Self {
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        Self {
            mean: values.iter().sum::<f64>() / values.len() as f64,
            median: quantile_sorted(&v, 0.5),
            q25: quantile_sorted(&v, 0.25),
            q75: quantile_sorted(&v, 0.75),
        }
    }
}

const SUMMARY_COLUMNS: [&str; 5] = [
    "init_terr_m",
    "final_terr_m",
    "init_rerr_deg",
    "final_rerr_deg",
    "geodesic_rerr_deg",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub magnitude: f64,
    pub n: usize,
    /// Same order as the error columns of the trial CSV.
    pub columns: Vec<ColumnStats>,
}

/// Per-magnitude statistics, in order of first appearance.
pub fn summarize(rows: &[TrialRow]) -> Vec<SummaryRow> {
    let mut order: Vec<u64> = Vec::new();
    let mut groups: BTreeMap<u64, Vec<&TrialRow>> = BTreeMap::new();
    for r in rows {
        let key = r.magnitude.to_bits();
        if !groups.contains_key(&key) {
            order.push(key);
        }
        groups.entry(key).or_default().push(r);
    }
    order
        .into_iter()
        .map(|key| {
            let g = &groups[&key];
            let col = |f: fn(&TrialRow) -> f64| ColumnStats::of(&g.iter().map(|r| f(r)).collect::<Vec<_>>());
            SummaryRow {
                magnitude: f64::from_bits(key),
                n: g.len(),
                columns: vec![
                    col(|r| r.init_terr_m),
                    col(|r| r.final_terr_m),
                    col(|r| r.init_rerr_deg),
                    col(|r| r.final_rerr_deg),
                    col(|r| r.geodesic_rerr_deg),
                ],
            }
        })
        .collect()
}

pub fn summary_header() -> Vec<String> {
    let mut h = vec!["magnitude".to_string(), "n".to_string()];
    for c in SUMMARY_COLUMNS {
        for s in ["mean", "median", "q25", "q75"] {
            h.push(format!("{c}_{s}"));
        }
    }
    h
}

pub fn write_summary_csv<W: Write>(records: &[TrialRecord], w: W) -> Result<()> {
    let rows: Vec<TrialRow> = records.iter().map(TrialRow::from).collect();
    write_summary_rows(&summarize(&rows), w)
}

pub fn write_summary_rows<W: Write>(summary: &[SummaryRow], w: W) -> Result<()> {
    let mut wr = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    wr.write_record(summary_header())?;
    for s in summary {
        let stats: Vec<f64> = s.columns.iter().flat_map(|c| [c.mean, c.median, c.q25, c.q75]).collect();
        wr.serialize((s.magnitude, s.n, stats))?;
    }
    wr.flush().map_err(|e| Error::Csv(e.into()))?;
    Ok(())
}

/// Parses a summary CSV written by [`write_summary_csv`].
pub fn read_summary_csv<R: Read>(r: R) -> Result<Vec<SummaryRow>> {
    let mut rd = csv::Reader::from_reader(r);
    let mut out = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        let nums: Vec<f64> = rec
            .iter()
            .map(|f| f.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::format("<summary csv>", "row", e.to_string()))?;
        if nums.len() != 2 + 4 * SUMMARY_COLUMNS.len() {
            return Err(Error::format("<summary csv>", "row", "wrong column count"));
        }
        out.push(SummaryRow {
            magnitude: nums[0],
            n: nums[1] as usize,
            columns: nums[2..]
                .chunks(4)
                .map(|c| ColumnStats { mean: c[0], median: c[1], q25: c[2], q75: c[3] })
                .collect(),
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuntimeInvariance {
    /// `(magnitude, mean wall time in seconds)` per class, in class order.
    pub class_means: Vec<(f64, f64)>,
    /// Largest class mean over the smallest.
    pub ratio: f64,
}

/// Mean wall time per magnitude class and the max/min ratio of those means.
pub fn runtime_invariance_check(records: &[TrialRecord]) -> Result<RuntimeInvariance> {
    let mut by_class: BTreeMap<usize, (f64, Vec<f64>)> = BTreeMap::new();
    for r in records {
        by_class
            .entry(r.class_index)
            .or_insert_with(|| (r.class.magnitude, Vec::new()))
            .1
            .push(r.wall_s);
    }
    if by_class.len() < 3 {
        return Err(Error::InsufficientClasses {
            needed: 3,
            got: by_class.len(),
        });
    }
    let class_means: Vec<(f64, f64)> = by_class
        .values()
        .map(|(m, v)| (*m, v.iter().sum::<f64>() / v.len() as f64))
        .collect();
    let max = class_means.iter().map(|c| c.1).fold(f64::NEG_INFINITY, f64::max);
    let min = class_means.iter().map(|c| c.1).fold(f64::INFINITY, f64::min);
    Ok(RuntimeInvariance {
        class_means,
        ratio: max / min,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::voxel::FeatureKind;

    fn small_spec(seed: u64) -> SceneSpec {
        SceneSpec {
            seed,
            extent: 40.0,
            n_points: 4000,
            n_structures: 6,
            noise_sigma: 0.02,
        }
    }

    #[test]
    fn scene_is_deterministic() {
        let a = synth_scene(&small_spec(1)).unwrap();
        let b = synth_scene(&small_spec(1)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, synth_scene(&small_spec(2)).unwrap());
    }

    #[test]
    fn scene_point_count() {
        let spec = SceneSpec { n_points: 50_000, ..SceneSpec::default() };
        assert_eq!(synth_scene(&spec).unwrap().len(), 50_000);
    }

    #[test]
    fn bare_plane_is_flat() {
        let spec = SceneSpec { n_structures: 0, ..small_spec(4) };
        let c = synth_scene(&spec).unwrap();
        assert!(c.points().iter().all(|p| p.z.abs() <= 4.0 * spec.noise_sigma));
    }

    #[test]
    fn zero_perturbation_is_identity() {
        let truth = EulerPose::new(1.0, -2.0, 0.1, 0.01, 0.02, 0.3);
        assert_eq!(perturb_pose(&truth, 0.0, 0.0, 9), truth);
    }

    #[test]
    fn planar_offset_magnitude_is_exact() {
        for seed in 0..50 {
            let p = perturb_pose(&EulerPose::IDENTITY, 5.0, 0.0, seed);
            assert!((p.tx.hypot(p.ty) - 5.0).abs() < 1e-9);
        }
    }

    #[test]
    fn yaw_offset_has_exact_magnitude() {
        let p = perturb_pose(&EulerPose::IDENTITY, 0.0, 10.0, 3);
        assert!((p.rz.abs() - 10f64.to_radians()).abs() < 1e-15);
    }

    #[test]
    fn leakage_std_is_five_percent() {
        let dt = 4.0;
        let tz: Vec<f64> = (0..100).map(|s| perturb_pose(&EulerPose::IDENTITY, dt, 0.0, s).tz).collect();
        let mean = tz.iter().sum::<f64>() / tz.len() as f64;
        let std = (tz.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (tz.len() - 1) as f64).sqrt();
        let target = LEAK_FRACTION * dt;
        assert!((std - target).abs() < 0.3 * target, "std {std} vs {target}");
    }

    #[test]
    fn error_metrics() {
        let truth = euler_to_transform(&EulerPose::new(1.0, 1.0, 0.0, 0.0, 0.0, 0.2)).unwrap();
        assert_eq!(translation_error(&truth, &truth), 0.0);
        let r = rotation_error(&truth, &truth);
        assert!(r.euler_l2_deg.abs() < 1e-6 && r.geodesic_deg.abs() < 1e-6);

        let shifted = euler_to_transform(&EulerPose::new(4.0, 5.0, 0.0, 0.0, 0.0, 0.2)).unwrap();
        assert!((translation_error(&shifted, &truth) - 5.0).abs() < 1e-12);

        let yawed = truth.compose(
            &euler_to_transform(&EulerPose::new(0.0, 0.0, 0.0, 0.0, 0.0, 10f64.to_radians())).unwrap(),
        );
        let r = rotation_error(&yawed, &truth);
        assert!((r.euler_l2_deg - 10.0).abs() < 1e-6);
        assert!((r.geodesic_deg - 10.0).abs() < 1e-6);
        assert!(!r.degenerate);
    }

    #[test]
    fn degenerate_rotation_falls_back_to_geodesic() {
        let pitch = euler_to_transform(&EulerPose::new(0.0, 0.0, 0.0, 0.0, PI / 2.0, 0.0)).unwrap();
        let r = rotation_error(&pitch, &RigidTransform::identity());
        assert!(r.degenerate);
        assert!((r.euler_l2_deg - 90.0).abs() < 1e-6);
    }

    #[test]
    fn magnitude_classes() {
        let mut p = PerturbationSpec {
            translation_magnitudes: vec![1.0, 3.0],
            rotation_magnitudes: vec![],
            trials_per_magnitude: 2,
            seed: 0,
        };
        assert_eq!(p.classes().unwrap().len(), 2);
        p.rotation_magnitudes = vec![2.0];
        assert!(p.classes().is_err());
        p.rotation_magnitudes = vec![2.0, 4.0];
        let c = p.classes().unwrap();
        assert_eq!((c[1].translation_m, c[1].rotation_deg), (3.0, 4.0));
        p.translation_magnitudes = vec![-1.0, 2.0];
        assert!(p.classes().is_err());
    }

    #[test]
    fn empty_magnitudes_give_header_only() {
        let pert = PerturbationSpec {
            translation_magnitudes: vec![],
            rotation_magnitudes: vec![],
            trials_per_magnitude: 3,
            seed: 0,
        };
        let recs = run_benchmark(&[], &pert, &AlignmentConfig::default(), 1).unwrap();
        assert!(recs.is_empty());
        let mut out = Vec::new();
        write_trials_csv(&recs, &mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), TRIAL_CSV_HEADER.join(",") + "\n");
    }

    fn fake(class_index: usize, magnitude: f64, wall_s: f64, final_terr_m: f64) -> TrialRecord {
        TrialRecord {
            class_index,
            class: MagnitudeClass { translation_m: magnitude, rotation_deg: 0.0, magnitude },
            trial: 0,
            case_index: 0,
            init_terr_m: magnitude,
            final_terr_m,
            init_rerr_deg: 0.0,
            final_rerr_deg: 0.1,
            geodesic_rerr_deg: 0.1,
            rotation_degenerate: false,
            iters: 10,
            wall_s,
            converged: true,
            error: None,
            initial_pose: EulerPose::IDENTITY,
            estimated_pose: EulerPose::IDENTITY,
        }
    }

    #[test]
    fn runtime_ratio() {
        let recs = vec![fake(0, 1.0, 0.5, 0.1), fake(1, 5.0, 0.5, 0.1), fake(2, 9.0, 0.5, 0.1)];
        let r = runtime_invariance_check(&recs).unwrap();
        assert_eq!(r.ratio, 1.0);
        assert!(matches!(
            runtime_invariance_check(&recs[..1]),
            Err(Error::InsufficientClasses { got: 1, .. })
        ));
        let recs = vec![fake(0, 1.0, 0.4, 0.1), fake(1, 5.0, 0.6, 0.1), fake(2, 9.0, 0.5, 0.1)];
        assert!((runtime_invariance_check(&recs).unwrap().ratio - 1.5).abs() < 1e-12);
    }

    #[test]
    fn summary_mean_matches_rows_and_round_trips() {
        let recs: Vec<TrialRecord> = [0.3, 0.1, 0.7, 0.2]
            .iter()
            .enumerate()
            .map(|(i, &e)| TrialRecord { trial: i, ..fake(0, 2.0, 0.1, e) })
            .chain([fake(1, 4.0, 0.1, 1.5)])
            .collect();
        let rows: Vec<TrialRow> = recs.iter().map(TrialRow::from).collect();
        let s = summarize(&rows);
        assert_eq!(s.len(), 2);
        assert_eq!(s[0].n, 4);
        assert_eq!(s[0].columns[1].mean, (0.3 + 0.1 + 0.7 + 0.2) / 4.0);
        assert!((s[0].columns[1].median - 0.25).abs() < 1e-15);
        assert!((s[0].columns[1].q25 - 0.175).abs() < 1e-15);

        let mut trials = Vec::new();
        write_trials_csv(&recs, &mut trials).unwrap();
        let mut summary = Vec::new();
        write_summary_csv(&recs, &mut summary).unwrap();
        let reparsed = summarize(&read_trials_csv(&trials[..]).unwrap());
        assert_eq!(read_summary_csv(&summary[..]).unwrap(), reparsed);
    }

    #[test]
    fn quantiles() {
        let v = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(quantile_sorted(&v, 0.5), 3.0);
        assert_eq!(quantile_sorted(&v, 0.25), 2.0);
        assert_eq!(quantile_sorted(&[7.0], 0.75), 7.0);
    }

    #[test]
    fn synthetic_pair_relates_by_truth() {
        let truth = EulerPose::new(2.0, -1.0, 0.0, 0.0, 0.0, 0.1);
        let case = synth_pair(&small_spec(3), &truth, 15.0).unwrap();
        assert_eq!(case.scan_a.len(), 4000);
        assert_eq!(case.scan_b.len(), 4000);
        // B brought back into A's frame lies within range of B's sensor
        let back = apply_transform(&case.scan_b, &case.truth);
        assert!(back.points().iter().all(|p| (p.x - 2.0).hypot(p.y + 1.0) <= 15.0 + 1e-9));
    }

    #[test]
    fn small_benchmark_runs() {
        let cases = synthetic_cases(&small_spec(5), &[5], 18.0).unwrap();
        let pert = PerturbationSpec {
            translation_magnitudes: vec![1.0],
            rotation_magnitudes: vec![],
            trials_per_magnitude: 2,
            seed: 1,
        };
        let cfg = AlignmentConfig::for_feature(FeatureKind::VarZ);
        let recs = run_benchmark(&cases, &pert, &cfg, 2).unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[0].trial, 0);
        assert!(recs.iter().all(|r| r.init_terr_m >= 1.0));
    }
}
