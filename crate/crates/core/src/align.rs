//! End-to-end alignment of two scans by mutual-information maximization.
//!
//! Scan A is voxelized and featurized once on a grid anchored at its own
//! origin. Every objective evaluation moves scan B by the candidate pose,
//! re-voxelizes it on the same grid, intersects the occupied bounds of both
//! scans, and scores the joint feature histogram over that overlap. The
//! pose is driven by a Nelder-Mead simplex.

use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::geometry::{euler_to_transform, transform_to_euler, EulerPose, PointCloud, RigidTransform};
use crate::mi::{evaluate_pose, BinningSpec, Evaluation, MIResult, NO_OVERLAP_SENTINEL};
use crate::optim::{nelder_mead_maximize, SimplexConfig, Termination, TraceEntry};
use crate::scan_io::format_kitti_pose_line;
use crate::voxel::{feature_map_of, FeatureKind, FeatureMap, GridSpec};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignmentConfig {
    pub grid: GridSpec,
    pub binning: BinningSpec,
    pub feature: FeatureKind,
    pub simplex: SimplexConfig,
    /// Whether unoccupied (φ) voxels take part in the MI.
    pub phi_enabled: bool,
    pub execution: Execution,
}

impl AlignmentConfig {
    pub fn for_feature(feature: FeatureKind) -> Self {
        Self {
            grid: GridSpec::default(),
            binning: BinningSpec::default_for(feature),
            feature,
            simplex: SimplexConfig::default(),
            phi_enabled: true,
            execution: Execution::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        self.binning.validate()?;
        self.simplex.validate()?;
        if self.binning.kind != self.feature {
            return Err(Error::Config(format!(
                "binning is for {} but feature is {}",
                self.binning.kind, self.feature
            )));
        }
        Ok(())
    }
}

impl Default for AlignmentConfig {
    fn default() -> Self {
        Self::for_feature(FeatureKind::VarZ)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentReport {
    /// Transform taking scan B into scan A's frame.
    pub estimated: RigidTransform,
    /// Angles wrapped to (−π, π].
    pub estimated_pose: EulerPose,
    pub initial_pose: EulerPose,
    pub initial_mi: f64,
    pub final_mi: f64,
    /// Entropy breakdown at the estimate.
    pub final_entropies: MIResult,
    /// Best MI after each optimizer iteration.
    pub mi_trace: Vec<f64>,
    pub iterations: usize,
    pub evaluations: usize,
    pub wall_time: f64,
    pub termination: Termination,
    /// `estimated` as a KITTI pose row (12 floats, row-major 3×4).
    pub kitti_pose: String,
    #[serde(skip)]
    pub trace: Vec<TraceEntry>,
}

impl AlignmentReport {
    pub fn converged(&self) -> bool {
        self.termination.converged()
    }
}

/// Scan A's precomputed features plus scan B, ready for repeated evaluation.
pub struct Aligner<'a> {
    feat_a: FeatureMap,
    scan_b: &'a PointCloud,
    cfg: AlignmentConfig,
}

impl<'a> Aligner<'a> {
    pub fn new(scan_a: &PointCloud, scan_b: &'a PointCloud, cfg: &AlignmentConfig) -> Result<Self> {
        cfg.validate()?;
        if scan_a.is_empty() || scan_b.is_empty() {
            return Err(Error::InvalidArgument("both scans must be non-empty".into()));
        }
        let feat_a = feature_map_of(scan_a, &cfg.grid, cfg.feature, cfg.execution)?;
        Ok(Self {
            feat_a,
            scan_b,
            cfg: *cfg,
        })
    }

    pub fn feature_map_a(&self) -> &FeatureMap {
        &self.feat_a
    }

    pub fn evaluate(&self, pose: &EulerPose) -> Result<Evaluation> {
        evaluate_pose(
            &self.feat_a,
            self.scan_b,
            pose,
            &self.cfg.grid,
            &self.cfg.binning,
            self.cfg.phi_enabled,
            self.cfg.execution,
        )
    }

    /// MI at `pose`, or the no-overlap sentinel.
    pub fn objective(&self, pose: &EulerPose) -> f64 {
        self.evaluate(pose).map_or(NO_OVERLAP_SENTINEL, |e| e.mi.mi)
    }

    pub fn run(&self, initial: &RigidTransform) -> Result<AlignmentReport> {
        let started = Instant::now();
        let x0 = transform_to_euler(initial)?;
        let result = nelder_mead_maximize(
            |p| self.objective(&EulerPose::from_array(*p)),
            x0.to_array(),
            &self.cfg.simplex,
        )?;
        if !result.best_value.is_finite() {
            return Err(Error::NoOverlap);
        }
        let raw = EulerPose::from_array(result.best);
        let estimated_pose = raw.normalized();
        let estimated = euler_to_transform(&estimated_pose)?;
        let final_entropies = self.evaluate(&estimated_pose)?.mi;
        let initial_mi = self.objective(&x0);
        Ok(AlignmentReport {
            kitti_pose: format_kitti_pose_line(&estimated),
            estimated,
            estimated_pose,
            initial_pose: x0,
            initial_mi,
            final_mi: result.best_value,
            final_entropies,
            mi_trace: result.trace.iter().map(|t| t.best).collect(),
            iterations: result.iterations,
            evaluations: result.evaluations,
            wall_time: started.elapsed().as_secs_f64(),
            termination: result.termination,
            trace: result.trace,
        })
    }

    pub fn sweep(&self, base: &EulerPose, axis: PoseAxis, values: &[f64]) -> Vec<SweepSample> {
        let eval = |&value: &f64| {
            let pose = axis.set(*base, value);
            SweepSample {
                value,
                mi: self.evaluate(&pose).ok().map(|e| e.mi),
            }
        };
        match self.cfg.execution {
            Execution::Serial => values.iter().map(eval).collect(),
            Execution::Parallel => values.par_iter().map(eval).collect(),
        }
    }
}

/// Registers `scan_b` onto `scan_a`, starting from `initial`.
pub fn align(
    scan_a: &PointCloud,
    scan_b: &PointCloud,
    initial: &RigidTransform,
    cfg: &AlignmentConfig,
) -> Result<AlignmentReport> {
    Aligner::new(scan_a, scan_b, cfg)?.run(initial)
}

/// One objective evaluation with its entropy breakdown.
pub fn mi_at(
    scan_a: &PointCloud,
    scan_b: &PointCloud,
    pose: &EulerPose,
    cfg: &AlignmentConfig,
) -> Result<MIResult> {
    Ok(Aligner::new(scan_a, scan_b, cfg)?.evaluate(pose)?.mi)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoseAxis {
    Tx,
    Ty,
    Tz,
    Rx,
    Ry,
    Rz,
}

impl PoseAxis {
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn is_rotation(self) -> bool {
        matches!(self, PoseAxis::Rx | PoseAxis::Ry | PoseAxis::Rz)
    }

    pub fn get(self, pose: &EulerPose) -> f64 {
        pose.to_array()[self.index()]
    }

    pub fn set(self, pose: EulerPose, value: f64) -> EulerPose {
        let mut a = pose.to_array();
        a[self.index()] = value;
        EulerPose::from_array(a)
    }
}

impl FromStr for PoseAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "tx" => PoseAxis::Tx,
            "ty" => PoseAxis::Ty,
            "tz" => PoseAxis::Tz,
            "rx" | "roll" => PoseAxis::Rx,
            "ry" | "pitch" => PoseAxis::Ry,
            "rz" | "yaw" => PoseAxis::Rz,
            other => return Err(Error::InvalidArgument(format!("unknown axis '{other}'"))),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepSample {
    pub value: f64,
    /// `None` where the scans do not overlap.
    pub mi: Option<MIResult>,
}

/// `n` evenly spaced values from `lo` to `hi` inclusive; `[lo]` when `n == 1`.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![lo],
        _ => (0..n)
            .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
            .collect(),
    }
}

/// MI along one pose axis with the other five held at `base`.
pub fn sweep(
    scan_a: &PointCloud,
    scan_b: &PointCloud,
    base: &EulerPose,
    axis: PoseAxis,
    values: &[f64],
    cfg: &AlignmentConfig,
) -> Result<Vec<SweepSample>> {
    Ok(Aligner::new(scan_a, scan_b, cfg)?.sweep(base, axis, values))
}

/// Index of the unique maximum of a sweep, `None` on ties or if no sample overlaps.
pub fn unique_argmax(samples: &[SweepSample]) -> Option<usize> {
    let vals: Vec<f64> = samples
        .iter()
        .map(|s| s.mi.map_or(f64::NEG_INFINITY, |m| m.mi))
        .collect();
    let (best, &max) = vals
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))?;
    if !max.is_finite() || vals.iter().filter(|&&v| v == max).count() > 1 {
        return None;
    }
    Some(best)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_validation() {
        let mut cfg = AlignmentConfig::default();
        assert!(cfg.validate().is_ok());
        cfg.feature = FeatureKind::Count;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        let mut cfg = AlignmentConfig::default();
        cfg.grid.resolution = -1.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn defaults_follow_published_setup() {
        let cfg = AlignmentConfig::default();
        assert_eq!(cfg.grid.resolution, 1.0);
        assert_eq!(cfg.simplex.initial_steps, [8.0, 8.0, 1.0, 0.1, 0.1, 0.8]);
        assert!(cfg.phi_enabled);
    }

    #[test]
    fn axis_parsing_and_set() {
        assert_eq!("yaw".parse::<PoseAxis>().unwrap(), PoseAxis::Rz);
        assert_eq!("TX".parse::<PoseAxis>().unwrap(), PoseAxis::Tx);
        assert!("q".parse::<PoseAxis>().is_err());
        let p = PoseAxis::Ry.set(EulerPose::IDENTITY, 0.25);
        assert_eq!(p.ry, 0.25);
        assert_eq!(PoseAxis::Ry.get(&p), 0.25);
    }

    #[test]
    fn linspace_edges() {
        assert_eq!(linspace(-1.0, 1.0, 1), vec![-1.0]);
        assert_eq!(linspace(-1.0, 1.0, 3), vec![-1.0, 0.0, 1.0]);
        assert!(linspace(0.0, 1.0, 0).is_empty());
    }

    #[test]
    fn argmax_rejects_ties() {
        let s = |v: f64| SweepSample {
            value: 0.0,
            mi: Some(MIResult { mi: v, h_x: 0.0, h_y: 0.0, h_xy: 0.0 }),
        };
        assert_eq!(unique_argmax(&[s(0.1), s(0.3), s(0.2)]), Some(1));
        assert_eq!(unique_argmax(&[s(0.3), s(0.3)]), None);
        assert_eq!(unique_argmax(&[SweepSample { value: 0.0, mi: None }]), None);
    }

    #[test]
    fn empty_scans_rejected() {
        let empty = PointCloud::default();
        let one = PointCloud::from_points(vec![crate::geometry::Point3::origin()]);
        assert!(align(&empty, &one, &RigidTransform::identity(), &AlignmentConfig::default()).is_err());
    }
}
