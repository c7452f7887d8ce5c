//! Point-cloud registration by maximizing mutual information between
//! voxelized geometric features of two scans.
//!
//! The pipeline: load scans ([`scan_io`]), voxelize them and compute a
//! per-voxel feature ([`voxel`]), build a joint histogram of binned features
//! over the overlap of the two grids and score it ([`mi`]), then search the
//! six pose parameters with a derivative-free simplex ([`optim`], [`align`]).
//! [`bench`] runs perturbation studies on synthetic or KITTI-style data.

pub mod align;
pub mod bench;
pub mod error;
pub mod exec;
pub mod geometry;
pub mod mi;
pub mod optim;
pub mod scan_io;
pub mod voxel;

pub use align::{align, AlignmentConfig, AlignmentReport};
pub use error::{Error, Result};
pub use exec::Execution;
pub use geometry::{EulerPose, Point3, PointCloud, RigidTransform};
pub use voxel::{FeatureKind, GridSpec};
