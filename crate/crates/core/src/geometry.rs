//! Pose parameterization, rigid transforms and the platform frame chain.
//!
//! Frames: `O_B` (fixed base), `O_P` (moving platform centre), `O_UG` (fixed
//! upper grip) and `O_LG` (moving lower grip). A [`PoseVector`] describes the
//! lower grip centre relative to its home pose, with translations along the
//! base axes and fixed-axis roll/pitch/yaw, `R = Rz(gamma) * Ry(beta) * Rx(alpha)`.

use nalgebra::{Matrix3, Matrix4, Vector3};
use thiserror::Error;

/// Tolerance used when checking that a rotation matrix is orthonormal.
pub const ORTHONORMAL_TOL: f64 = 1e-9;

/// `|cos(beta)|` below this value makes the Euler decomposition non-unique.
pub const GIMBAL_LOCK_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("gimbal lock: |cos(beta)| = {cos_beta:e}, roll and yaw are not separable")]
    GimbalLock { cos_beta: f64 },
    #[error("pose parameter `{0}` is not finite")]
    NonFinite(&'static str),
    #[error("rotation matrix is not orthonormal (deviation {0:e})")]
    NotOrthonormal(f64),
    #[error("invalid geometry: {0}")]
    Invalid(String),
}

/// Names of the six pose parameters, in storage order.
pub const POSE_PARAM_NAMES: [&str; 6] = ["x", "y", "z", "alpha", "beta", "gamma"];

/// Wraps an angle in degrees to `(-180, 180]`.
pub fn normalize_deg(angle: f64) -> f64 {
    if angle > -180.0 && angle <= 180.0 {
        return angle;
    }
    let r = angle.rem_euclid(360.0);
    if r > 180.0 {
        r - 360.0
    } else {
        r
    }
}

/// Signed difference `to - from` in degrees, on the short branch.
pub fn angle_diff_deg(to: f64, from: f64) -> f64 {
    normalize_deg(to - from)
}

/// Position (mm) and roll/pitch/yaw (deg) of the lower grip centre relative
/// to its home pose.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PoseVector {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl PoseVector {
    /// Builds a pose, wrapping the angles to `(-180, 180]`.
    pub fn new(x: f64, y: f64, z: f64, alpha: f64, beta: f64, gamma: f64) -> Self {
        Self {
            x,
            y,
            z,
            alpha: normalize_deg(alpha),
            beta: normalize_deg(beta),
            gamma: normalize_deg(gamma),
        }
    }

    pub fn home() -> Self {
        Self::default()
    }

    pub fn from_array(v: [f64; 6]) -> Self {
        Self::new(v[0], v[1], v[2], v[3], v[4], v[5])
    }

    pub fn to_array(&self) -> [f64; 6] {
        [self.x, self.y, self.z, self.alpha, self.beta, self.gamma]
    }

    pub fn translation(&self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }

    /// Rejects non-finite parameters.
    pub fn validate(&self) -> Result<(), GeometryError> {
        for (v, name) in self.to_array().iter().zip(POSE_PARAM_NAMES) {
            if !v.is_finite() {
                return Err(GeometryError::NonFinite(name));
            }
        }
        Ok(())
    }
}

/// Rotation plus translation (mm).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn identity() -> Self {
        Self::new(Matrix3::identity(), Vector3::zeros())
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Self::new(Matrix3::identity(), t)
    }

    pub fn from_rotation(r: Matrix3<f64>) -> Self {
        Self::new(r, Vector3::zeros())
    }

    /// `self * other`: apply `other` first, then `self`.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform::new(
            self.rotation * other.rotation,
            self.rotation * other.translation + self.translation,
        )
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform::new(rt, -(rt * self.translation))
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn to_homogeneous(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// Largest entry of `|R^T R - I|` plus `|det R - 1|`.
    pub fn orthonormality_error(&self) -> f64 {
        let d = self.rotation.transpose() * self.rotation - Matrix3::identity();
        d.amax() + (self.rotation.determinant() - 1.0).abs()
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let e = self.orthonormality_error();
        if e.is_finite() && e <= ORTHONORMAL_TOL {
            Ok(())
        } else {
            Err(GeometryError::NotOrthonormal(e))
        }
    }

    /// Frobenius norm of the difference between the two homogeneous matrices.
    pub fn frobenius_distance(&self, other: &RigidTransform) -> f64 {
        (self.to_homogeneous() - other.to_homogeneous()).norm()
    }
}

pub fn rot_x(deg: f64) -> Matrix3<f64> {
    let (s, c) = deg.to_radians().sin_cos();
    Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

pub fn rot_y(deg: f64) -> Matrix3<f64> {
    let (s, c) = deg.to_radians().sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

pub fn rot_z(deg: f64) -> Matrix3<f64> {
    let (s, c) = deg.to_radians().sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

/// Fixed-axis roll/pitch/yaw: `Rz(gamma) * Ry(beta) * Rx(alpha)`.
pub fn rpy_rotation(alpha: f64, beta: f64, gamma: f64) -> Matrix3<f64> {
    rot_z(gamma) * rot_y(beta) * rot_x(alpha)
}

pub fn pose_to_transform(pose: &PoseVector) -> RigidTransform {
    RigidTransform::new(
        rpy_rotation(pose.alpha, pose.beta, pose.gamma),
        pose.translation(),
    )
}

/// Inverse of [`pose_to_transform`]. Fails when `|cos(beta)| < 1e-9`.
pub fn transform_to_pose(t: &RigidTransform) -> Result<PoseVector, GeometryError> {
    let r = &t.rotation;
    let cos_beta = r[(0, 0)].hypot(r[(1, 0)]);
    if cos_beta < GIMBAL_LOCK_TOL {
        return Err(GeometryError::GimbalLock { cos_beta });
    }
    let beta = (-r[(2, 0)]).atan2(cos_beta);
    let alpha = r[(2, 1)].atan2(r[(2, 2)]);
    let gamma = r[(1, 0)].atan2(r[(0, 0)]);
    Ok(PoseVector::new(
        t.translation.x,
        t.translation.y,
        t.translation.z,
        alpha.to_degrees(),
        beta.to_degrees(),
        gamma.to_degrees(),
    ))
}

/// Per-parameter limits of the pose workspace, in `[x, y, z, alpha, beta, gamma]` order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseBounds {
    pub min: [f64; 6],
    pub max: [f64; 6],
}

impl PoseBounds {
    pub fn contains(&self, pose: &PoseVector) -> bool {
        self.violations(pose).is_empty()
    }

    /// Human-readable description of every violated bound, e.g. `"z above bound"`.
    pub fn violations(&self, pose: &PoseVector) -> Vec<String> {
        let v = pose.to_array();
        let mut out = Vec::new();
        for k in 0..6 {
            if v[k] > self.max[k] {
                out.push(format!("{} above bound", POSE_PARAM_NAMES[k]));
            } else if v[k] < self.min[k] {
                out.push(format!("{} below bound", POSE_PARAM_NAMES[k]));
            }
        }
        out
    }
}

/// Joint layout and limits of a 6-UPS platform.
#[derive(Debug, Clone, PartialEq)]
pub struct PlatformGeometry {
    /// Universal-joint centres in `O_B`.
    pub base_joints: [Vector3<f64>; 6],
    /// Spherical-joint centres in `O_P`.
    pub platform_joints: [Vector3<f64>; 6],
    pub leg_min: f64,
    pub leg_max: f64,
    /// Offset `O_P -> O_LG` along the platform z axis.
    pub fd: f64,
    /// Home gauge distance `O_UG -> O_LG`.
    pub gd_home: f64,
    /// Position of `O_UG` in `O_B`.
    pub ug_offset: Vector3<f64>,
    pub pose_bounds: PoseBounds,
    pub singularity_tol: f64,
}

impl PlatformGeometry {
    /// Symmetric 6-6 layout: base joints on a 400 mm circle in pairs at
    /// 0/120/240 deg +-15 deg, platform joints on a 250 mm circle with the
    /// pairs rotated by 60 deg, so each leg crosses to the neighbouring pair.
    pub fn reference() -> Self {
        let on_circle = |r: f64, deg: f64| {
            let (s, c) = deg.to_radians().sin_cos();
            Vector3::new(r * c, r * s, 0.0)
        };
        let base_az = [-15.0, 15.0, 105.0, 135.0, 225.0, 255.0];
        let plat_az = [-45.0, 45.0, 75.0, 165.0, 195.0, 285.0];
        PlatformGeometry {
            base_joints: base_az.map(|a| on_circle(400.0, a)),
            platform_joints: plat_az.map(|a| on_circle(250.0, a)),
            leg_min: 500.0,
            leg_max: 800.0,
            fd: 100.0,
            gd_home: 50.0,
            ug_offset: Vector3::new(0.0, 0.0, 750.0),
            pose_bounds: PoseBounds {
                min: [-50.0, -50.0, -40.0, -12.0, -12.0, -15.0],
                max: [50.0, 50.0, 40.0, 12.0, 12.0, 15.0],
            },
            singularity_tol: 1e-8,
        }
    }

    /// Home position of `O_LG` in `O_B`: `gd_home` below the upper grip.
    pub fn home_grip_position(&self) -> Vector3<f64> {
        self.ug_offset - Vector3::new(0.0, 0.0, self.gd_home)
    }

    /// Spherical-joint centre `i` expressed in the lower-grip frame.
    pub fn platform_joint_in_grip(&self, i: usize) -> Vector3<f64> {
        self.platform_joints[i] - Vector3::new(0.0, 0.0, self.fd)
    }

    /// Leg lengths at the home pose.
    pub fn home_leg_lengths(&self) -> [f64; 6] {
        let t = grip_to_platform(&PoseVector::home(), self);
        std::array::from_fn(|i| {
            (t.transform_point(&self.platform_joints[i]) - self.base_joints[i]).norm()
        })
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let bad = |m: String| Err(GeometryError::Invalid(m));
        let all_finite = self
            .base_joints
            .iter()
            .chain(self.platform_joints.iter())
            .chain(std::iter::once(&self.ug_offset))
            .all(|v| v.iter().all(|c| c.is_finite()));
        if !all_finite {
            return bad("joint coordinates must be finite".into());
        }
        if !(self.leg_min > 0.0 && self.leg_min < self.leg_max) {
            return bad(format!(
                "need 0 < leg_min < leg_max, got {} and {}",
                self.leg_min, self.leg_max
            ));
        }
        if !(self.fd >= 0.0) {
            return bad(format!("fd must be >= 0, got {}", self.fd));
        }
        if !(self.gd_home > 0.0) {
            return bad(format!("gd_home must be > 0, got {}", self.gd_home));
        }
        if !(self.singularity_tol > 0.0) {
            return bad(format!(
                "singularity_tol must be > 0, got {}",
                self.singularity_tol
            ));
        }
        for k in 0..6 {
            let (lo, hi) = (self.pose_bounds.min[k], self.pose_bounds.max[k]);
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return bad(format!(
                    "pose_bounds for {} must satisfy min <= max, got [{lo}, {hi}]",
                    POSE_PARAM_NAMES[k]
                ));
            }
        }
        if !self.pose_bounds.contains(&PoseVector::home()) {
            return bad("pose_bounds must contain the home pose".into());
        }
        for (i, l) in self.home_leg_lengths().iter().enumerate() {
            if *l < self.leg_min || *l > self.leg_max {
                return bad(format!(
                    "home length of leg {i} is {l:.3} mm, outside [{}, {}]",
                    self.leg_min, self.leg_max
                ));
            }
        }
        Ok(())
    }
}

/// Base-frame transform of the lower grip for a pose.
pub fn grip_transform(pose: &PoseVector, geom: &PlatformGeometry) -> RigidTransform {
    let rel = pose_to_transform(pose);
    RigidTransform::new(rel.rotation, geom.home_grip_position() + rel.translation)
}

/// Base-frame transform of the platform centre `O_P` implied by a lower-grip pose.
pub fn grip_to_platform(pose_lg: &PoseVector, geom: &PlatformGeometry) -> RigidTransform {
    let grip = grip_transform(pose_lg, geom);
    let grip_to_p = RigidTransform::from_translation(Vector3::new(0.0, 0.0, -geom.fd));
    grip.compose(&grip_to_p)
}
