//! Inverse kinematics, damped Newton forward kinematics, the leg-length
//! Jacobian and singularity tests for the 6-UPS platform.

use nalgebra::{Matrix3, Matrix6, Vector3, Vector6};
use thiserror::Error;

use crate::geometry::{
    grip_transform, rot_x, rot_y, rot_z, PlatformGeometry, PoseVector,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KinematicsError {
    #[error("forward kinematics did not converge after {iterations} iterations (residual {residual:e} mm)")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("Jacobian is singular at iteration {iteration}, Newton step unsolvable")]
    SingularJacobian { iteration: usize },
    #[error("leg length {index} is not a positive finite number ({value})")]
    InvalidLength { index: usize, value: f64 },
}

/// Six actuator lengths (mm) and whether all lie within the actuator stroke.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LegLengths {
    pub lengths: [f64; 6],
    pub valid: bool,
}

impl LegLengths {
    pub fn new(lengths: [f64; 6], geom: &PlatformGeometry) -> Self {
        let valid = lengths
            .iter()
            .all(|l| *l >= geom.leg_min && *l <= geom.leg_max);
        Self { lengths, valid }
    }

    fn check_finite(&self) -> Result<(), KinematicsError> {
        for (index, &value) in self.lengths.iter().enumerate() {
            if !(value.is_finite() && value > 0.0) {
                return Err(KinematicsError::InvalidLength { index, value });
            }
        }
        Ok(())
    }
}

/// Rows are legs; columns are `x, y, z` (mm/mm) and `alpha, beta, gamma` (mm/deg).
pub type JacobianMatrix = Matrix6<f64>;

/// Leg vectors `platform joint - base joint` in the base frame.
fn leg_vectors(pose: &PoseVector, geom: &PlatformGeometry) -> [Vector3<f64>; 6] {
    let grip = grip_transform(pose, geom);
    std::array::from_fn(|i| {
        grip.transform_point(&geom.platform_joint_in_grip(i)) - geom.base_joints[i]
    })
}

fn raw_lengths(pose: &PoseVector, geom: &PlatformGeometry) -> [f64; 6] {
    leg_vectors(pose, geom).map(|q| q.norm())
}

pub fn inverse_kinematics(pose: &PoseVector, geom: &PlatformGeometry) -> LegLengths {
    LegLengths::new(raw_lengths(pose, geom), geom)
}

fn d_rot_x(deg: f64) -> Matrix3<f64> {
    let (s, c) = deg.to_radians().sin_cos();
    Matrix3::new(0.0, 0.0, 0.0, 0.0, -s, -c, 0.0, c, -s)
}

fn d_rot_y(deg: f64) -> Matrix3<f64> {
    let (s, c) = deg.to_radians().sin_cos();
    Matrix3::new(-s, 0.0, c, 0.0, 0.0, 0.0, -c, 0.0, -s)
}

fn d_rot_z(deg: f64) -> Matrix3<f64> {
    let (s, c) = deg.to_radians().sin_cos();
    Matrix3::new(-s, -c, 0.0, c, -s, 0.0, 0.0, 0.0, 0.0)
}

/// Analytic gradient of each leg length with respect to the pose parameters.
pub fn jacobian(pose: &PoseVector, geom: &PlatformGeometry) -> JacobianMatrix {
    let (a, b, g) = (pose.alpha, pose.beta, pose.gamma);
    let (rx, ry, rz) = (rot_x(a), rot_y(b), rot_z(g));
    let per_deg = 1f64.to_radians();
    let partials = [
        rz * ry * d_rot_x(a) * per_deg,
        rz * d_rot_y(b) * rx * per_deg,
        d_rot_z(g) * ry * rx * per_deg,
    ];
    let legs = leg_vectors(pose, geom);
    let mut j = Matrix6::zeros();
    for i in 0..6 {
        let u = legs[i] / legs[i].norm();
        let s = geom.platform_joint_in_grip(i);
        for k in 0..3 {
            j[(i, k)] = u[k];
            j[(i, 3 + k)] = u.dot(&(partials[k] * s));
        }
    }
    j
}

/// `|det J|` divided by the product of the row norms of `J`.
pub fn normalized_determinant(pose: &PoseVector, geom: &PlatformGeometry) -> f64 {
    let j = jacobian(pose, geom);
    let scale: f64 = j.row_iter().map(|r| r.norm()).product();
    if scale == 0.0 {
        return 0.0;
    }
    j.determinant().abs() / scale
}

pub fn is_singular(pose: &PoseVector, geom: &PlatformGeometry) -> bool {
    normalized_determinant(pose, geom) < geom.singularity_tol
}

/// Iteration limits for [`forward_kinematics_with`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FkOptions {
    pub max_iterations: usize,
    /// Convergence threshold on the largest leg residual (mm).
    pub tolerance: f64,
    pub max_halvings: usize,
}

impl Default for FkOptions {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            tolerance: 1e-9,
            max_halvings: 20,
        }
    }
}

pub fn forward_kinematics(
    legs: &LegLengths,
    geom: &PlatformGeometry,
    guess: &PoseVector,
) -> Result<PoseVector, KinematicsError> {
    forward_kinematics_with(legs, geom, guess, &FkOptions::default())
}

fn residual(p: &[f64; 6], geom: &PlatformGeometry, target: &[f64; 6]) -> (Vector6<f64>, f64) {
    let l = raw_lengths(&PoseVector::from_array(*p), geom);
    let r = Vector6::from_fn(|i, _| l[i] - target[i]);
    (r, r.amax())
}

/// Damped Newton-Raphson on `IK(pose) - legs`, starting from `guess`.
///
/// Each step is halved until the residual max-norm decreases. The iterate stays
/// on the assembly branch of the guess as long as the steps do not cross a
/// singularity.
pub fn forward_kinematics_with(
    legs: &LegLengths,
    geom: &PlatformGeometry,
    guess: &PoseVector,
    opts: &FkOptions,
) -> Result<PoseVector, KinematicsError> {
    legs.check_finite()?;
    let target = legs.lengths;
    let mut p = guess.to_array();
    let (mut r, mut norm) = residual(&p, geom, &target);
    for iteration in 0..opts.max_iterations {
        if norm < opts.tolerance {
            return Ok(PoseVector::from_array(p));
        }
        let j = jacobian(&PoseVector::from_array(p), geom);
        let step = j
            .lu()
            .solve(&(-r))
            .filter(|s| s.iter().all(|v| v.is_finite()))
            .ok_or(KinematicsError::SingularJacobian { iteration })?;
        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..=opts.max_halvings {
            let cand: [f64; 6] = std::array::from_fn(|k| p[k] + scale * step[k]);
            let (rc, nc) = residual(&cand, geom, &target);
            if nc < norm {
                p = cand;
                r = rc;
                norm = nc;
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        if !accepted {
            return Err(KinematicsError::NoConvergence {
                iterations: iteration + 1,
                residual: norm,
            });
        }
    }
    if norm < opts.tolerance {
        return Ok(PoseVector::from_array(p));
    }
    Err(KinematicsError::NoConvergence {
        iterations: opts.max_iterations,
        residual: norm,
    })
}
