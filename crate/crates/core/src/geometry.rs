//! Rigid transforms, the six-parameter Euler pose, and point-cloud containers.
//!
//! Rotations follow the yaw-pitch-roll convention `R = Rz(rz) · Ry(ry) · Rx(rx)`,
//! i.e. extrinsic rotations about x, then y, then z. Angles are radians and
//! are applied about the sensor origin.

use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::{Matrix3, Matrix4, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point3 = nalgebra::Point3<f64>;

/// Tolerance on `RᵀR = I` and `det R = 1` for a matrix to count as a rotation.
pub const ROTATION_TOLERANCE: f64 = 1e-9;

/// Pitch values closer than this to ±π/2 are rejected by [`transform_to_euler`].
pub const GIMBAL_GUARD: f64 = 1e-6;

/// An ordered set of 3D points in meters with optional per-point intensity.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    points: Vec<Point3>,
    intensity: Option<Vec<f64>>,
}

impl PointCloud {
    pub fn new(points: Vec<Point3>, intensity: Option<Vec<f64>>) -> Result<Self> {
        if let Some(i) = &intensity {
            if i.len() != points.len() {
                return Err(Error::InvalidArgument(format!(
                    "intensity length {} does not match point count {}",
                    i.len(),
                    points.len()
                )));
            }
        }
        if let Some(idx) = points.iter().position(|p| !p.coords.iter().all(|c| c.is_finite())) {
            return Err(Error::InvalidArgument(format!("point {idx} is not finite")));
        }
        Ok(Self { points, intensity })
    }

    /// Builds a cloud without intensity. Panics on non-finite coordinates.
    pub fn from_points(points: Vec<Point3>) -> Self {
        Self::new(points, None).expect("finite points")
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    pub fn intensity(&self) -> Option<&[f64]> {
        self.intensity.as_deref()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Keeps the points for which `keep` returns true, along with their intensities.
    pub fn filter(&self, mut keep: impl FnMut(&Point3) -> bool) -> PointCloud {
        let mask: Vec<bool> = self.points.iter().map(&mut keep).collect();
        let points = self
            .points
            .iter()
            .zip(&mask)
            .filter_map(|(p, &k)| k.then_some(*p))
            .collect();
        let intensity = self.intensity.as_ref().map(|i| {
            i.iter()
                .zip(&mask)
                .filter_map(|(v, &k)| k.then_some(*v))
                .collect()
        });
        PointCloud { points, intensity }
    }
}

/// Six-parameter pose: translation in meters, rotation about x, y, z in radians.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EulerPose {
    pub tx: f64,
    pub ty: f64,
    pub tz: f64,
    pub rx: f64,
    pub ry: f64,
    pub rz: f64,
}

impl EulerPose {
    pub const IDENTITY: EulerPose = EulerPose {
        tx: 0.0,
        ty: 0.0,
        tz: 0.0,
        rx: 0.0,
        ry: 0.0,
        rz: 0.0,
    };

    pub fn new(tx: f64, ty: f64, tz: f64, rx: f64, ry: f64, rz: f64) -> Self {
        Self {
            tx,
            ty,
            tz,
            rx,
            ry,
            rz,
        }
    }

    pub fn from_array(v: [f64; 6]) -> Self {
        Self::new(v[0], v[1], v[2], v[3], v[4], v[5])
    }

    pub fn to_array(self) -> [f64; 6] {
        [self.tx, self.ty, self.tz, self.rx, self.ry, self.rz]
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }

    /// Same pose with every angle wrapped into (−π, π]. Used for reporting only.
    pub fn normalized(self) -> Self {
        Self {
            rx: wrap_angle(self.rx),
            ry: wrap_angle(self.ry),
            rz: wrap_angle(self.rz),
            ..self
        }
    }
}

/// Wraps an angle into (−π, π].
pub fn wrap_angle(a: f64) -> f64 {
    let w = a.rem_euclid(2.0 * PI);
    if w > PI {
        w - 2.0 * PI
    } else {
        w
    }
}

/// A proper rigid transform stored as a row-major 4×4 homogeneous matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(into = "[[f64; 4]; 4]", try_from = "[[f64; 4]; 4]")]
pub struct RigidTransform {
    matrix: Matrix4<f64>,
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            matrix: Matrix4::identity(),
        }
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Self::from_parts_unchecked(Matrix3::identity(), t)
    }

    /// Validates that `m` has an orthonormal, right-handed rotation block and a
    /// `[0, 0, 0, 1]` last row.
    pub fn from_matrix(m: Matrix4<f64>) -> Result<Self> {
        if !m.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidArgument("matrix has non-finite entries".into()));
        }
        if m[(3, 0)] != 0.0 || m[(3, 1)] != 0.0 || m[(3, 2)] != 0.0 || m[(3, 3)] != 1.0 {
            return Err(Error::InvalidArgument(
                "last row of a rigid transform must be [0, 0, 0, 1]".into(),
            ));
        }
        let r: Matrix3<f64> = m.fixed_view::<3, 3>(0, 0).into_owned();
        if !is_rotation(&r, ROTATION_TOLERANCE) {
            return Err(Error::InvalidArgument(
                "rotation block is not orthonormal with det +1".into(),
            ));
        }
        Ok(Self { matrix: m })
    }

    /// Assembles a transform from a rotation matrix and translation, validating the rotation.
    pub fn from_parts(r: Matrix3<f64>, t: Vector3<f64>) -> Result<Self> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&r);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&t);
        Self::from_matrix(m)
    }

    pub(crate) fn from_parts_unchecked(r: Matrix3<f64>, t: Vector3<f64>) -> Self {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&r);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&t);
        Self { matrix: m }
    }

    pub fn matrix(&self) -> &Matrix4<f64> {
        &self.matrix
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        self.matrix.fixed_view::<3, 3>(0, 0).into_owned()
    }

    pub fn translation(&self) -> Vector3<f64> {
        self.matrix.fixed_view::<3, 1>(0, 3).into_owned()
    }

    pub fn transform_point(&self, p: &Point3) -> Point3 {
        let r = self.matrix.fixed_view::<3, 3>(0, 0);
        let t = self.matrix.fixed_view::<3, 1>(0, 3);
        Point3::from(r * p.coords + t)
    }

    /// `self · other`: applies `other` first, then `self`.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            matrix: self.matrix * other.matrix,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation().transpose();
        let t = -(rt * self.translation());
        Self::from_parts_unchecked(rt, t)
    }

    /// The top three rows, row-major, as written in KITTI pose files.
    pub fn to_kitti_row(&self) -> [f64; 12] {
        let mut out = [0.0; 12];
        for r in 0..3 {
            for c in 0..4 {
                out[r * 4 + c] = self.matrix[(r, c)];
            }
        }
        out
    }

    pub fn to_rows(&self) -> [[f64; 4]; 4] {
        let mut out = [[0.0; 4]; 4];
        for (r, row) in out.iter_mut().enumerate() {
            for (c, v) in row.iter_mut().enumerate() {
                *v = self.matrix[(r, c)];
            }
        }
        out
    }
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl From<RigidTransform> for [[f64; 4]; 4] {
    fn from(t: RigidTransform) -> Self {
        t.to_rows()
    }
}

impl TryFrom<[[f64; 4]; 4]> for RigidTransform {
    type Error = Error;

    fn try_from(rows: [[f64; 4]; 4]) -> Result<Self> {
        RigidTransform::from_matrix(Matrix4::from_fn(|r, c| rows[r][c]))
    }
}

pub(crate) fn is_rotation(r: &Matrix3<f64>, tol: f64) -> bool {
    let err = (r.transpose() * r - Matrix3::identity()).abs().max();
    err < tol && (r.determinant() - 1.0).abs() <= tol
}

/// Closest rotation to `m` in the Frobenius sense (polar factor via SVD).
pub(crate) fn nearest_rotation(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let u = svd.u.expect("u requested");
    let v_t = svd.v_t.expect("v_t requested");
    let mut r = u * v_t;
    if r.determinant() < 0.0 {
        let mut u = u;
        u.column_mut(2).neg_mut();
        r = u * v_t;
    }
    r
}

fn rotation_from_euler(rx: f64, ry: f64, rz: f64) -> Matrix3<f64> {
    let (sx, cx) = rx.sin_cos();
    let (sy, cy) = ry.sin_cos();
    let (sz, cz) = rz.sin_cos();
    Matrix3::new(
        cz * cy,
        cz * sy * sx - sz * cx,
        cz * sy * cx + sz * sx,
        sz * cy,
        sz * sy * sx + cz * cx,
        sz * sy * cx - cz * sx,
        -sy,
        cy * sx,
        cy * cx,
    )
}

pub fn euler_to_transform(pose: &EulerPose) -> Result<RigidTransform> {
    if !pose.is_finite() {
        return Err(Error::InvalidArgument(format!("non-finite pose {pose:?}")));
    }
    let r = rotation_from_euler(pose.rx, pose.ry, pose.rz);
    Ok(RigidTransform::from_parts_unchecked(
        r,
        Vector3::new(pose.tx, pose.ty, pose.tz),
    ))
}

/// Recovers the Euler pose of `t`. Angles come back in (−π, π].
pub fn transform_to_euler(t: &RigidTransform) -> Result<EulerPose> {
    let r = t.rotation();
    let pitch = (-r[(2, 0)]).clamp(-1.0, 1.0).asin();
    if pitch.abs() >= FRAC_PI_2 - GIMBAL_GUARD {
        return Err(Error::DegenerateOrientation { pitch });
    }
    let roll = r[(2, 1)].atan2(r[(2, 2)]);
    let yaw = r[(1, 0)].atan2(r[(0, 0)]);
    let tr = t.translation();
    Ok(EulerPose::new(
        tr.x,
        tr.y,
        tr.z,
        wrap_angle(roll),
        pitch,
        wrap_angle(yaw),
    ))
}

pub fn apply_transform(cloud: &PointCloud, t: &RigidTransform) -> PointCloud {
    PointCloud {
        points: cloud.points.iter().map(|p| t.transform_point(p)).collect(),
        intensity: cloud.intensity.clone(),
    }
}

pub fn compose(a: &RigidTransform, b: &RigidTransform) -> RigidTransform {
    a.compose(b)
}

pub fn inverse(t: &RigidTransform) -> RigidTransform {
    t.inverse()
}
