//! Seeded measurement simulator: random target poses, a perturbed "true"
//! machine and pose-space measurement noise.
//!
//! All randomness comes from ChaCha8 seeded with `seed_from_u64(seed)`. Each
//! pose draws from its own stream `(domain << 48) | index`, so results do not
//! depend on evaluation order or thread count.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use thiserror::Error;

use crate::calibration::{CalibrationDataset, Exclusion, ExclusionKind, OUTLIER_MARGIN};
use crate::calibration::PoseObservation;
use crate::geometry::{GeometryError, PlatformGeometry, PoseVector};
use crate::kinematics::{
    forward_kinematics, inverse_kinematics, normalized_determinant, KinematicsError, LegLengths,
};

/// Draws allowed per requested pose before sampling gives up.
pub const REJECTION_BUDGET: usize = 1000;

/// Targets are rounded to multiples of `1 / TARGET_SCALE` so they survive a
/// 9-digit text round trip.
pub const TARGET_SCALE: f64 = 1e6;

const DOMAIN_TARGETS: u64 = 1;
const DOMAIN_PERTURBATION: u64 = 2;
const DOMAIN_MEASUREMENT: u64 = 3;
const DOMAIN_VERIFICATION: u64 = 4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimulatorError {
    #[error("pose count must be at least 1")]
    ZeroCount,
    #[error("no valid pose for sample {index} after {attempts} draws, pose bounds may be too tight")]
    ExhaustedSampling { index: usize, attempts: usize },
    #[error("perturbed geometry is invalid: {0}")]
    InvalidatedGeometry(GeometryError),
    #[error("invalid simulator spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
}

/// Discrepancy between the nominal model and the simulated machine.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationSpec {
    /// Per-coordinate bound (mm) on the uniform displacement of every joint.
    pub joint_position_noise: f64,
    /// Constant actuator length offsets (mm).
    pub leg_offset_bias: [f64; 6],
    pub seed: u64,
    /// Pose error `slope * commanded + intercept` added after the reached pose,
    /// per `[x, y, z, alpha, beta, gamma]`.
    pub pose_error_slope: [f64; 6],
    pub pose_error_intercept: [f64; 6],
}

impl Default for PerturbationSpec {
    fn default() -> Self {
        Self {
            joint_position_noise: 0.0,
            leg_offset_bias: [0.0; 6],
            seed: 0,
            pose_error_slope: [0.0; 6],
            pose_error_intercept: [0.0; 6],
        }
    }
}

impl PerturbationSpec {
    pub fn validate(&self) -> Result<(), SimulatorError> {
        if !(self.joint_position_noise.is_finite() && self.joint_position_noise >= 0.0) {
            return Err(SimulatorError::InvalidSpec(format!(
                "joint_position_noise must be >= 0, got {}",
                self.joint_position_noise
            )));
        }
        let finite = self
            .leg_offset_bias
            .iter()
            .chain(&self.pose_error_slope)
            .chain(&self.pose_error_intercept)
            .all(|v| v.is_finite());
        if !finite {
            return Err(SimulatorError::InvalidSpec(
                "bias and pose error terms must be finite".into(),
            ));
        }
        Ok(())
    }
}

/// Zero-mean Gaussian measurement noise in pose space.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSpec {
    pub position_sigma: f64,
    pub orientation_sigma: f64,
    pub seed: u64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        // 3 sigma of the position noise is about 0.425 mm
        Self {
            position_sigma: 0.14,
            orientation_sigma: 0.05,
            seed: 0,
        }
    }
}

impl NoiseSpec {
    pub fn none() -> Self {
        Self {
            position_sigma: 0.0,
            orientation_sigma: 0.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), SimulatorError> {
        for (name, v) in [
            ("position_sigma", self.position_sigma),
            ("orientation_sigma", self.orientation_sigma),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(SimulatorError::InvalidSpec(format!("{name} must be >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// The simulated machine: its real joint layout plus error sources that
/// the nominal model does not know about.
#[derive(Debug, Clone, PartialEq)]
pub struct TruthModel {
    pub geometry: PlatformGeometry,
    pub leg_bias: [f64; 6],
    pub pose_error_slope: [f64; 6],
    pub pose_error_intercept: [f64; 6],
}

impl TruthModel {
    /// A machine that matches the nominal model exactly.
    pub fn perfect(geom: &PlatformGeometry) -> Self {
        Self {
            geometry: geom.clone(),
            leg_bias: [0.0; 6],
            pose_error_slope: [0.0; 6],
            pose_error_intercept: [0.0; 6],
        }
    }
}

/// Which measurement campaign a noise draw belongs to. Verification runs use
/// fresh noise, independent of the calibration measurements.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeasurementPass {
    Calibration,
    Verification,
}

impl MeasurementPass {
    fn domain(self) -> u64 {
        match self {
            MeasurementPass::Calibration => DOMAIN_MEASUREMENT,
            MeasurementPass::Verification => DOMAIN_VERIFICATION,
        }
    }
}

fn stream_rng(seed: u64, domain: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((domain << 48) | (index & ((1 << 48) - 1)));
    rng
}

fn quantize(v: f64) -> f64 {
    (v * TARGET_SCALE).round() / TARGET_SCALE
}

fn draw_pose(rng: &mut ChaCha8Rng, geom: &PlatformGeometry) -> PoseVector {
    let b = &geom.pose_bounds;
    let v: [f64; 6] = std::array::from_fn(|k| {
        let (lo, hi) = (b.min[k], b.max[k]);
        let u = if lo < hi { rng.random_range(lo..=hi) } else { lo };
        quantize(u).clamp(lo, hi)
    });
    PoseVector::from_array(v)
}

/// Whether a pose is usable as a calibration target: inside the bounds,
/// reachable by the actuators and clear of singularities by the outlier margin.
pub fn is_valid_target(pose: &PoseVector, geom: &PlatformGeometry) -> bool {
    geom.pose_bounds.contains(pose)
        && inverse_kinematics(pose, geom).valid
        && normalized_determinant(pose, geom) >= OUTLIER_MARGIN * geom.singularity_tol
}

/// `n` poses drawn uniformly over the pose bounds, rejecting singular and
/// unreachable ones.
pub fn generate_random_poses(
    n: usize,
    geom: &PlatformGeometry,
    seed: u64,
) -> Result<Vec<PoseVector>, SimulatorError> {
    if n == 0 {
        return Err(SimulatorError::ZeroCount);
    }
    (0..n)
        .into_par_iter()
        .map(|index| {
            let mut rng = stream_rng(seed, DOMAIN_TARGETS, index as u64);
            for _ in 0..REJECTION_BUDGET {
                let p = draw_pose(&mut rng, geom);
                if is_valid_target(&p, geom) {
                    return Ok(p);
                }
            }
            Err(SimulatorError::ExhaustedSampling {
                index,
                attempts: REJECTION_BUDGET,
            })
        })
        .collect()
}

/// Builds the simulated machine by displacing every joint coordinate by a
/// uniform draw in `[-joint_position_noise, joint_position_noise]`.
pub fn perturb_geometry(
    geom: &PlatformGeometry,
    spec: &PerturbationSpec,
) -> Result<TruthModel, SimulatorError> {
    spec.validate()?;
    let mut truth = geom.clone();
    let b = spec.joint_position_noise;
    if b > 0.0 {
        let mut rng = stream_rng(spec.seed, DOMAIN_PERTURBATION, 0);
        let mut jitter = |v: &mut Vector3<f64>| {
            for c in v.iter_mut() {
                *c += rng.random_range(-b..=b);
            }
        };
        truth.base_joints.iter_mut().for_each(&mut jitter);
        truth.platform_joints.iter_mut().for_each(&mut jitter);
    }
    truth.validate().map_err(SimulatorError::InvalidatedGeometry)?;
    Ok(TruthModel {
        geometry: truth,
        leg_bias: spec.leg_offset_bias,
        pose_error_slope: spec.pose_error_slope,
        pose_error_intercept: spec.pose_error_intercept,
    })
}

/// Commands `target` on the simulated machine and returns the measured pose.
///
/// The controller computes legs from the nominal model, the actuators add
/// their bias, the real machine settles where its own geometry puts those
/// legs, and the measurement adds pose-space noise drawn from stream `index`.
pub fn simulate_measurement(
    target: &PoseVector,
    nominal: &PlatformGeometry,
    truth: &TruthModel,
    noise: &NoiseSpec,
    pass: MeasurementPass,
    index: u64,
) -> Result<PoseVector, SimulatorError> {
    let commanded = inverse_kinematics(target, nominal).lengths;
    let legs = std::array::from_fn(|i| commanded[i] + truth.leg_bias[i]);
    let legs = LegLengths::new(legs, &truth.geometry);
    let reached = forward_kinematics(&legs, &truth.geometry, target)
        .or_else(|_| forward_kinematics(&legs, &truth.geometry, &PoseVector::home()))?;

    let t = target.to_array();
    let mut v = reached.to_array();
    for k in 0..6 {
        v[k] += truth.pose_error_slope[k] * t[k] + truth.pose_error_intercept[k];
    }
    let sigmas = [noise.position_sigma, noise.orientation_sigma];
    if sigmas.iter().any(|s| *s > 0.0) {
        let mut rng = stream_rng(noise.seed, pass.domain(), index);
        for (k, x) in v.iter_mut().enumerate() {
            let sigma = sigmas[k / 3];
            let d = Normal::new(0.0, sigma)
                .map_err(|e| SimulatorError::InvalidSpec(e.to_string()))?;
            *x += d.sample(&mut rng);
        }
    }
    Ok(PoseVector::from_array(v))
}

/// Simulates a full measurement campaign. Pose ids run from 1 and each pose
/// uses its id as noise stream. Failed measurements become exclusions.
pub fn build_dataset(
    targets: &[PoseVector],
    nominal: &PlatformGeometry,
    truth: &TruthModel,
    noise: &NoiseSpec,
) -> CalibrationDataset {
    let ided: Vec<(u32, PoseVector)> = targets
        .iter()
        .enumerate()
        .map(|(i, t)| (i as u32 + 1, *t))
        .collect();
    measure_poses(&ided, nominal, truth, noise, MeasurementPass::Calibration)
}

/// Measures already-numbered poses. Shared by calibration and verification runs.
pub fn measure_poses(
    poses: &[(u32, PoseVector)],
    nominal: &PlatformGeometry,
    truth: &TruthModel,
    noise: &NoiseSpec,
    pass: MeasurementPass,
) -> CalibrationDataset {
    let results: Vec<(PoseObservation, Option<Exclusion>)> = poses
        .par_iter()
        .map(|(id, t)| {
            match simulate_measurement(t, nominal, truth, noise, pass, *id as u64) {
                Ok(m) => (PoseObservation::new(*id, *t, m), None),
                Err(e) => (
                    PoseObservation {
                        pose_id: *id,
                        target: *t,
                        measured: None,
                    },
                    Some(Exclusion::new(ExclusionKind::MeasurementFailed, e.to_string())),
                ),
            }
        })
        .collect();
    let mut exclusions = std::collections::BTreeMap::new();
    let mut obs = Vec::with_capacity(results.len());
    for (o, ex) in results {
        if let Some(ex) = ex {
            exclusions.insert(o.pose_id, ex);
        }
        obs.push(o);
    }
    CalibrationDataset::with_exclusions(obs, exclusions)
        .expect("simulated pose ids are unique and failures are excluded")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calibration::error_vector;
    use crate::kinematics::is_singular;

    fn reference() -> PlatformGeometry {
        PlatformGeometry::reference()
    }

    #[test]
    fn random_poses_are_valid_and_reproducible() {
        let g = reference();
        let a = generate_random_poses(34, &g, 1).unwrap();
        assert_eq!(a.len(), 34);
        for p in &a {
            assert!(g.pose_bounds.contains(p));
            assert!(!is_singular(p, &g));
            // oracle: leg lengths from the raw vector norm
            let t = crate::geometry::grip_transform(p, &g);
            for i in 0..6 {
                let l = (t.transform_point(&g.platform_joint_in_grip(i)) - g.base_joints[i]).norm();
                assert!(l >= g.leg_min && l <= g.leg_max);
            }
        }
        let b = generate_random_poses(34, &g, 1).unwrap();
        assert_eq!(a, b);
        let c = generate_random_poses(34, &g, 2).unwrap();
        assert_ne!(a, c);
        // a prefix of a longer run is the shorter run
        let d = generate_random_poses(40, &g, 1).unwrap();
        assert_eq!(&d[..34], &a[..]);
    }

    #[test]
    fn collapsed_bounds_give_home_poses() {
        let mut g = reference();
        g.pose_bounds.min = [0.0; 6];
        g.pose_bounds.max = [0.0; 6];
        let p = generate_random_poses(5, &g, 9).unwrap();
        assert_eq!(p, vec![PoseVector::home(); 5]);
    }

    #[test]
    fn impossible_bounds_exhaust_sampling() {
        let mut g = reference();
        // z = 200 over-extends every leg
        g.pose_bounds.min[2] = 200.0;
        g.pose_bounds.max[2] = 200.0;
        assert!(matches!(
            generate_random_poses(2, &g, 0),
            Err(SimulatorError::ExhaustedSampling { .. })
        ));
        assert_eq!(generate_random_poses(0, &g, 0), Err(SimulatorError::ZeroCount));
    }

    #[test]
    fn zero_perturbation_is_bitwise_identity() {
        let g = reference();
        let t = perturb_geometry(&g, &PerturbationSpec { seed: 77, ..Default::default() }).unwrap();
        assert_eq!(t, TruthModel::perfect(&g));
    }

    #[test]
    fn joint_noise_stays_within_bound() {
        let g = reference();
        let spec = PerturbationSpec {
            joint_position_noise: 0.5,
            seed: 3,
            ..Default::default()
        };
        let t = perturb_geometry(&g, &spec).unwrap();
        let pairs = g
            .base_joints
            .iter()
            .zip(&t.geometry.base_joints)
            .chain(g.platform_joints.iter().zip(&t.geometry.platform_joints));
        let mut moved = false;
        for (a, b) in pairs {
            for k in 0..3 {
                assert!((a[k] - b[k]).abs() <= 0.5);
                moved |= a[k] != b[k];
            }
        }
        assert!(moved);
        assert_eq!(perturb_geometry(&g, &spec).unwrap(), t);
        let bad = PerturbationSpec {
            joint_position_noise: -1.0,
            ..Default::default()
        };
        assert!(perturb_geometry(&g, &bad).is_err());
        let wrecked = PerturbationSpec {
            joint_position_noise: 500.0,
            ..Default::default()
        };
        assert!(matches!(
            perturb_geometry(&g, &wrecked),
            Err(SimulatorError::InvalidatedGeometry(_))
        ));
    }

    #[test]
    fn perfect_machine_measures_targets() {
        let g = reference();
        let truth = TruthModel::perfect(&g);
        let targets = generate_random_poses(34, &g, 5).unwrap();
        let ds = build_dataset(&targets, &g, &truth, &NoiseSpec::none());
        assert_eq!(ds.len(), 34);
        assert!(ds.exclusions().is_empty());
        for (i, o) in ds.observations().iter().enumerate() {
            assert_eq!(o.pose_id, i as u32 + 1);
            for e in o.error().unwrap() {
                assert!(e.abs() < 1e-9);
            }
        }
        assert!(build_dataset(&[], &g, &truth, &NoiseSpec::none()).is_empty());
    }

    #[test]
    fn noise_statistics() {
        let g = reference();
        let truth = TruthModel::perfect(&g);
        let noise = NoiseSpec {
            position_sigma: 0.1,
            orientation_sigma: 0.0,
            seed: 11,
        };
        let target = PoseVector::new(5.0, -3.0, 2.0, 1.0, 2.0, 3.0);
        let n = 1000;
        let mut sum = [0.0; 3];
        let mut sq = [0.0; 3];
        for i in 0..n {
            let m = simulate_measurement(&target, &g, &truth, &noise, MeasurementPass::Calibration, i).unwrap();
            let e = error_vector(&target, &m);
            for k in 0..3 {
                sum[k] += e[k];
                sq[k] += e[k] * e[k];
            }
            for e in &e[3..] {
                assert!(e.abs() < 1e-9);
            }
        }
        for k in 0..3 {
            let mean = sum[k] / n as f64;
            let sd = (sq[k] / n as f64 - mean * mean).sqrt();
            assert!(mean.abs() < 0.01, "mean {mean}");
            assert!((sd - 0.1).abs() < 0.01, "sd {sd}");
        }
    }

    #[test]
    fn leg_bias_matches_fk_oracle() {
        let g = reference();
        let mut truth = TruthModel::perfect(&g);
        truth.leg_bias = [0.2; 6];
        let home = PoseVector::home();
        let m = simulate_measurement(&home, &g, &truth, &NoiseSpec::none(), MeasurementPass::Calibration, 1).unwrap();
        let legs = g.home_leg_lengths().map(|l| l + 0.2);
        // the reached pose reproduces the biased legs
        let back = inverse_kinematics(&m, &g).lengths;
        for i in 0..6 {
            assert!((back[i] - legs[i]).abs() < 1e-9);
        }
        // equal extension of all legs of a symmetric platform is pure heave
        assert!(m.z > 0.2);
        for v in [m.x, m.y, m.alpha, m.beta, m.gamma] {
            assert!(v.abs() < 1e-9);
        }
    }

    #[test]
    fn passes_use_independent_noise() {
        let g = reference();
        let truth = TruthModel::perfect(&g);
        let noise = NoiseSpec { seed: 4, ..NoiseSpec::default() };
        let t = PoseVector::home();
        let a = simulate_measurement(&t, &g, &truth, &noise, MeasurementPass::Calibration, 1).unwrap();
        let b = simulate_measurement(&t, &g, &truth, &noise, MeasurementPass::Verification, 1).unwrap();
        let c = simulate_measurement(&t, &g, &truth, &noise, MeasurementPass::Calibration, 1).unwrap();
        assert_ne!(a, b);
        assert_eq!(a, c);
    }

    #[test]
    fn dataset_is_thread_count_independent() {
        let g = reference();
        let truth = perturb_geometry(
            &g,
            &PerturbationSpec {
                joint_position_noise: 0.5,
                leg_offset_bias: [0.2; 6],
                seed: 8,
                ..Default::default()
            },
        )
        .unwrap();
        let noise = NoiseSpec { seed: 8, ..NoiseSpec::default() };
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| {
                    let t = generate_random_poses(34, &g, 8).unwrap();
                    build_dataset(&t, &g, &truth, &noise)
                })
        };
        assert_eq!(run(1), run(4));
    }
}
