//! Error vectors, least-squares corrections and the three compensation options.
//!
//! | option | position                      | orientation      |
//! |--------|-------------------------------|------------------|
//! | 1      | corrected DH chains, averaged | target unchanged |
//! | 2      | corrected DH chains, averaged | pose-space fit   |
//! | 3      | pose-space fit                | pose-space fit   |
//!
//! Every correction is an affine model of the error as a function of the
//! commanded value, `e(x) = slope * x + intercept`. A correction is applied by
//! commanding the value `x` that the fitted model sends onto the target,
//! `x + e(x) = target`.

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use nalgebra::Vector3;
use rayon::prelude::*;
use thiserror::Error;

use crate::dh::{
    chain_forward, extract_all_chains, unify_positions, DhChain, DhError, DhParam, JointKind,
    JOINT_KINDS,
};
use crate::geometry::{angle_diff_deg, normalize_deg, PlatformGeometry, PoseVector};
use crate::kinematics::{inverse_kinematics, normalized_determinant};

/// `|1 + slope|` below this makes a correction non-invertible.
const INVERTIBILITY_TOL: f64 = 1e-9;

/// Multiple of `singularity_tol` under which a target pose is flagged as near-singular.
pub const OUTLIER_MARGIN: f64 = 10.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CalibrationError {
    #[error("need at least 2 usable observations, have {available}")]
    InsufficientData { available: usize },
    #[error("pose {pose_id}: {source}")]
    SingularPose { pose_id: u32, source: DhError },
    #[error("correction for {what} has slope {slope} and cannot be inverted")]
    NonInvertible { what: String, slope: f64 },
    #[error("regressor and response lengths differ ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("duplicate pose id {0}")]
    DuplicatePoseId(u32),
    #[error("unknown pose id {0}")]
    UnknownPoseId(u32),
    #[error("pose {0} has no measurement and is not excluded")]
    MissingMeasurement(u32),
    #[error("model for option {0} is missing its {1} corrections")]
    IncompleteModel(u8, &'static str),
}

/// One commanded pose and the pose actually reached.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseObservation {
    pub pose_id: u32,
    pub target: PoseVector,
    /// `None` when the measurement could not be produced.
    pub measured: Option<PoseVector>,
}

impl PoseObservation {
    pub fn new(pose_id: u32, target: PoseVector, measured: PoseVector) -> Self {
        Self {
            pose_id,
            target,
            measured: Some(measured),
        }
    }

    pub fn error(&self) -> Option<[f64; 6]> {
        self.measured.as_ref().map(|m| error_vector(&self.target, m))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ExclusionKind {
    Outlier,
    OutOfRange,
    MeasurementFailed,
}

impl ExclusionKind {
    pub fn tag(self) -> &'static str {
        match self {
            ExclusionKind::Outlier => "outlier",
            ExclusionKind::OutOfRange => "out_of_range",
            ExclusionKind::MeasurementFailed => "measurement_failed",
        }
    }

    pub fn from_tag(s: &str) -> Option<Self> {
        [Self::Outlier, Self::OutOfRange, Self::MeasurementFailed]
            .into_iter()
            .find(|k| k.tag() == s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Exclusion {
    pub kind: ExclusionKind,
    pub detail: String,
}

impl Exclusion {
    pub fn new(kind: ExclusionKind, detail: impl Into<String>) -> Self {
        Self {
            kind,
            detail: detail.into(),
        }
    }

    /// Parses the `tag` or `tag: detail` form written by [`fmt::Display`].
    pub fn parse(s: &str) -> Option<Self> {
        let (tag, detail) = match s.split_once(':') {
            Some((t, d)) => (t.trim(), d.trim()),
            None => (s.trim(), ""),
        };
        ExclusionKind::from_tag(tag).map(|k| Exclusion::new(k, detail))
    }
}

impl fmt::Display for Exclusion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.detail.is_empty() {
            f.write_str(self.kind.tag())
        } else {
            write!(f, "{}: {}", self.kind.tag(), self.detail)
        }
    }
}

/// Ordered observations plus the audit trail of exclusions.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CalibrationDataset {
    observations: Vec<PoseObservation>,
    excluded: BTreeMap<u32, Exclusion>,
}

impl CalibrationDataset {
    pub fn new(observations: Vec<PoseObservation>) -> Result<Self, CalibrationError> {
        Self::with_exclusions(observations, BTreeMap::new())
    }

    pub fn with_exclusions(
        observations: Vec<PoseObservation>,
        excluded: BTreeMap<u32, Exclusion>,
    ) -> Result<Self, CalibrationError> {
        let mut seen = HashSet::new();
        for o in &observations {
            if !seen.insert(o.pose_id) {
                return Err(CalibrationError::DuplicatePoseId(o.pose_id));
            }
        }
        for id in excluded.keys() {
            if !seen.contains(id) {
                return Err(CalibrationError::UnknownPoseId(*id));
            }
        }
        for o in &observations {
            if o.measured.is_none() && !excluded.contains_key(&o.pose_id) {
                return Err(CalibrationError::MissingMeasurement(o.pose_id));
            }
        }
        Ok(Self {
            observations,
            excluded,
        })
    }

    pub fn observations(&self) -> &[PoseObservation] {
        &self.observations
    }

    pub fn exclusions(&self) -> &BTreeMap<u32, Exclusion> {
        &self.excluded
    }

    pub fn exclusion(&self, pose_id: u32) -> Option<&Exclusion> {
        self.excluded.get(&pose_id)
    }

    pub fn is_excluded(&self, pose_id: u32) -> bool {
        self.excluded.contains_key(&pose_id)
    }

    pub fn exclude(&mut self, pose_id: u32, why: Exclusion) -> Result<(), CalibrationError> {
        if !self.observations.iter().any(|o| o.pose_id == pose_id) {
            return Err(CalibrationError::UnknownPoseId(pose_id));
        }
        self.excluded.insert(pose_id, why);
        Ok(())
    }

    /// Non-excluded observations with a measurement, in dataset order.
    pub fn usable(&self) -> Vec<(u32, PoseVector, PoseVector)> {
        self.observations
            .iter()
            .filter(|o| !self.excluded.contains_key(&o.pose_id))
            .filter_map(|o| o.measured.map(|m| (o.pose_id, o.target, m)))
            .collect()
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }
}

/// `measured - target`, angles differenced on the short branch.
pub fn error_vector(target: &PoseVector, measured: &PoseVector) -> [f64; 6] {
    [
        measured.x - target.x,
        measured.y - target.y,
        measured.z - target.z,
        angle_diff_deg(measured.alpha, target.alpha),
        angle_diff_deg(measured.beta, target.beta),
        angle_diff_deg(measured.gamma, target.gamma),
    ]
}

/// Least-squares line `error = slope * value + intercept`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AffineCorrection {
    pub slope: f64,
    pub intercept: f64,
    /// Set when the regressor had no spread and only the mean was fitted.
    pub degenerate: bool,
}

impl AffineCorrection {
    /// Slope-free model fitted to the mean of `ys`.
    pub fn intercept_only(ys: &[f64]) -> Result<Self, CalibrationError> {
        if ys.is_empty() {
            return Err(CalibrationError::InsufficientData { available: 0 });
        }
        Ok(Self {
            slope: 0.0,
            intercept: ys.iter().sum::<f64>() / ys.len() as f64,
            degenerate: false,
        })
    }

    pub fn error_at(&self, value: f64) -> f64 {
        self.slope * value + self.intercept
    }

    /// The command `x` with `x + error_at(x) = target`.
    pub fn command_for(&self, target: f64) -> Option<f64> {
        let gain = 1.0 + self.slope;
        (gain.abs() >= INVERTIBILITY_TOL).then(|| (target - self.intercept) / gain)
    }
}

/// Ordinary least squares fit of `ys` against `xs`.
///
/// With no spread in `xs` the slope is undefined; the fit falls back to
/// `slope = 0`, `intercept = mean(ys)` and sets `degenerate`.
pub fn fit_affine(xs: &[f64], ys: &[f64]) -> Result<AffineCorrection, CalibrationError> {
    if xs.len() != ys.len() {
        return Err(CalibrationError::LengthMismatch(xs.len(), ys.len()));
    }
    let n = xs.len();
    if n < 2 {
        return Err(CalibrationError::InsufficientData { available: n });
    }
    let nf = n as f64;
    let mx = xs.iter().sum::<f64>() / nf;
    let my = ys.iter().sum::<f64>() / nf;
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let dx = x - mx;
        sxx += dx * dx;
        sxy += dx * (y - my);
    }
    let floor = 1e-12 * mx.abs().max(1.0);
    if sxx <= nf * floor * floor {
        return Ok(AffineCorrection {
            slope: 0.0,
            intercept: my,
            degenerate: true,
        });
    }
    let slope = sxy / sxx;
    Ok(AffineCorrection {
        slope,
        intercept: my - slope * mx,
        degenerate: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CompensationOption {
    /// Position through DH corrections, orientation unchanged.
    DhPosition,
    /// Position through DH corrections, orientation by pose-space fit.
    DhPositionFittedOrientation,
    /// All six parameters by pose-space fit.
    PoseSpace,
}

impl CompensationOption {
    pub fn number(self) -> u8 {
        match self {
            Self::DhPosition => 1,
            Self::DhPositionFittedOrientation => 2,
            Self::PoseSpace => 3,
        }
    }

    pub fn from_number(n: u8) -> Option<Self> {
        match n {
            1 => Some(Self::DhPosition),
            2 => Some(Self::DhPositionFittedOrientation),
            3 => Some(Self::PoseSpace),
            _ => None,
        }
    }

    fn uses_dh(self) -> bool {
        self != Self::PoseSpace
    }

    /// Pose parameters corrected in pose space.
    fn pose_params(self) -> std::ops::Range<usize> {
        match self {
            Self::DhPosition => 0..0,
            Self::DhPositionFittedOrientation => 3..6,
            Self::PoseSpace => 0..6,
        }
    }
}

/// Corrections indexed `[leg][row][DhParam as usize]`.
pub type DhCorrections = [[[AffineCorrection; 4]; 6]; 6];

/// A fitted calibration that can be applied to new targets without refitting.
#[derive(Debug, Clone, PartialEq)]
pub struct CompensationModel {
    pub option: CompensationOption,
    pub dh_corrections: Option<Box<DhCorrections>>,
    /// Per pose parameter, `[x, y, z, alpha, beta, gamma]`.
    pub pose_corrections: [Option<AffineCorrection>; 6],
}

fn dh_param_index(p: DhParam) -> usize {
    DhParam::ALL.iter().position(|q| *q == p).unwrap()
}

/// Whether `(row, param)` is a joint variable, i.e. moves with the pose.
pub fn is_joint_variable(row: usize, param: DhParam) -> bool {
    matches!(
        (JOINT_KINDS[row], param),
        (JointKind::Revolute, DhParam::Theta) | (JointKind::Prismatic, DhParam::D)
    )
}

fn dh_error(param: DhParam, measured: f64, target: f64) -> f64 {
    if param.is_angle() {
        angle_diff_deg(measured, target)
    } else {
        measured - target
    }
}

type ChainPair = ([DhChain; 6], [DhChain; 6]);

fn fit_dh(
    usable: &[(u32, PoseVector, PoseVector)],
    geom: &PlatformGeometry,
) -> Result<Box<DhCorrections>, CalibrationError> {
    let chains: Vec<ChainPair> = usable
        .par_iter()
        .map(|(id, t, m)| {
            let wrap = |source| CalibrationError::SingularPose {
                pose_id: *id,
                source,
            };
            Ok((
                extract_all_chains(t, geom).map_err(wrap)?,
                extract_all_chains(m, geom).map_err(wrap)?,
            ))
        })
        .collect::<Result<_, CalibrationError>>()?;

    let mut out: Box<DhCorrections> = Box::default();
    for leg in 0..6 {
        for row in 0..6 {
            for param in DhParam::ALL {
                let xs: Vec<f64> = chains.iter().map(|(t, _)| t[leg].rows[row].get(param)).collect();
                let ys: Vec<f64> = chains
                    .iter()
                    .map(|(t, m)| dh_error(param, m[leg].rows[row].get(param), t[leg].rows[row].get(param)))
                    .collect();
                out[leg][row][dh_param_index(param)] = if is_joint_variable(row, param) {
                    fit_affine(&xs, &ys)?
                } else {
                    AffineCorrection::intercept_only(&ys)?
                };
            }
        }
    }
    Ok(out)
}

/// Fits the corrections for `option` on the usable observations of `ds`.
pub fn fit_model(
    ds: &CalibrationDataset,
    geom: &PlatformGeometry,
    option: CompensationOption,
) -> Result<CompensationModel, CalibrationError> {
    let usable = ds.usable();
    if usable.len() < 2 {
        return Err(CalibrationError::InsufficientData {
            available: usable.len(),
        });
    }
    let dh_corrections = if option.uses_dh() {
        Some(fit_dh(&usable, geom)?)
    } else {
        None
    };
    let errors: Vec<[f64; 6]> = usable.iter().map(|(_, t, m)| error_vector(t, m)).collect();
    let mut pose_corrections = [None; 6];
    for k in option.pose_params() {
        let xs: Vec<f64> = usable.iter().map(|(_, t, _)| t.to_array()[k]).collect();
        let ys: Vec<f64> = errors.iter().map(|e| e[k]).collect();
        pose_corrections[k] = Some(fit_affine(&xs, &ys)?);
    }
    Ok(CompensationModel {
        option,
        dh_corrections,
        pose_corrections,
    })
}

fn invert(c: &AffineCorrection, target: f64, what: impl FnOnce() -> String) -> Result<f64, CalibrationError> {
    c.command_for(target).ok_or_else(|| CalibrationError::NonInvertible {
        what: what(),
        slope: c.slope,
    })
}

/// Unified grip position from the target's corrected DH chains. `forward`
/// adds the modelled error (where a command lands), otherwise the model is
/// inverted (what to command to land on the target).
fn dh_position(
    pose_id: u32,
    target: &PoseVector,
    corrections: &DhCorrections,
    geom: &PlatformGeometry,
    forward: bool,
) -> Result<Vector3<f64>, CalibrationError> {
    let chains = extract_all_chains(target, geom)
        .map_err(|source| CalibrationError::SingularPose { pose_id, source })?;
    let mut positions = [Vector3::zeros(); 6];
    for (leg, chain) in chains.iter().enumerate() {
        let mut corrected = chain.clone();
        for (row, r) in corrected.rows.iter_mut().enumerate() {
            for param in DhParam::ALL {
                let c = &corrections[leg][row][dh_param_index(param)];
                let v = if forward {
                    r.get(param) + c.error_at(r.get(param))
                } else {
                    invert(c, r.get(param), || {
                        format!("leg {leg} row {row} {}", param.name())
                    })?
                };
                r.set(param, v);
            }
        }
        positions[leg] = chain_forward(&corrected).translation;
    }
    Ok(unify_positions(&positions) - geom.home_grip_position())
}

/// Predicted (compensated) commands for the given targets.
pub fn apply_model(
    model: &CompensationModel,
    targets: &[(u32, PoseVector)],
    geom: &PlatformGeometry,
) -> Result<Vec<(u32, PoseVector)>, CalibrationError> {
    let n = model.option.number();
    if model.option.uses_dh() && model.dh_corrections.is_none() {
        return Err(CalibrationError::IncompleteModel(n, "DH"));
    }
    for k in model.option.pose_params() {
        if model.pose_corrections[k].is_none() {
            return Err(CalibrationError::IncompleteModel(n, "pose"));
        }
    }
    targets
        .par_iter()
        .map(|(id, target)| {
            let t = target.to_array();
            let mut p = t;
            if let Some(dh) = &model.dh_corrections {
                let pos = dh_position(*id, target, dh, geom, false)?;
                p[..3].copy_from_slice(pos.as_slice());
            }
            for k in 0..6 {
                if let Some(c) = &model.pose_corrections[k] {
                    p[k] = invert(c, t[k], || crate::geometry::POSE_PARAM_NAMES[k].to_string())?;
                }
            }
            for v in &mut p[3..] {
                *v = normalize_deg(*v);
            }
            // untouched orientation components stay bitwise equal to the target
            Ok((*id, PoseVector { x: p[0], y: p[1], z: p[2], alpha: p[3], beta: p[4], gamma: p[5] }))
        })
        .collect()
}

/// Pose the fitted model expects the machine to reach when `commanded` is
/// sent uncorrected. Parameters the option does not model are taken as exact.
pub fn predict_reached(
    model: &CompensationModel,
    pose_id: u32,
    commanded: &PoseVector,
    geom: &PlatformGeometry,
) -> Result<PoseVector, CalibrationError> {
    let c = commanded.to_array();
    let mut p = c;
    if let Some(dh) = &model.dh_corrections {
        let pos = dh_position(pose_id, commanded, dh, geom, true)?;
        p[..3].copy_from_slice(pos.as_slice());
    }
    for k in 0..6 {
        if let Some(corr) = &model.pose_corrections[k] {
            p[k] = c[k] + corr.error_at(c[k]);
        }
    }
    Ok(PoseVector::from_array(p))
}

/// In-sample residuals `measured - predict_reached(target)` for the usable
/// observations: the errors left over once the model has explained what it can.
pub fn model_residuals(
    model: &CompensationModel,
    ds: &CalibrationDataset,
    geom: &PlatformGeometry,
) -> Result<Vec<(u32, [f64; 6])>, CalibrationError> {
    ds.usable()
        .par_iter()
        .map(|(id, t, m)| Ok((*id, error_vector(&predict_reached(model, *id, t, geom)?, m))))
        .collect()
}

fn compensate(
    ds: &CalibrationDataset,
    geom: &PlatformGeometry,
    option: CompensationOption,
) -> Result<Vec<(u32, PoseVector)>, CalibrationError> {
    let model = fit_model(ds, geom, option)?;
    let targets: Vec<(u32, PoseVector)> = ds.usable().iter().map(|(id, t, _)| (*id, *t)).collect();
    apply_model(&model, &targets, geom)
}

/// Positions from corrected DH chains; target orientation passed through.
pub fn compensate_option1(
    ds: &CalibrationDataset,
    geom: &PlatformGeometry,
) -> Result<Vec<(u32, PoseVector)>, CalibrationError> {
    compensate(ds, geom, CompensationOption::DhPosition)
}

/// Positions as option 1; orientation from per-angle least-squares corrections.
pub fn compensate_option2(
    ds: &CalibrationDataset,
    geom: &PlatformGeometry,
) -> Result<Vec<(u32, PoseVector)>, CalibrationError> {
    compensate(ds, geom, CompensationOption::DhPositionFittedOrientation)
}

/// Every pose parameter corrected by its own least-squares fit; no kinematics.
pub fn compensate_option3(
    ds: &CalibrationDataset,
    geom: &PlatformGeometry,
) -> Result<Vec<(u32, PoseVector)>, CalibrationError> {
    compensate(ds, geom, CompensationOption::PoseSpace)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DroppedPose {
    pub pose_id: u32,
    pub pose: PoseVector,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct WorkspaceFilter {
    pub kept: Vec<(u32, PoseVector)>,
    pub dropped: Vec<DroppedPose>,
}

/// Splits predictions into those inside the pose bounds and actuator stroke
/// and those outside, naming every violated limit.
pub fn filter_workspace(predicted: &[(u32, PoseVector)], geom: &PlatformGeometry) -> WorkspaceFilter {
    let mut out = WorkspaceFilter::default();
    for (id, pose) in predicted {
        let mut reasons = geom.pose_bounds.violations(pose);
        let legs = inverse_kinematics(pose, geom);
        for (i, l) in legs.lengths.iter().enumerate() {
            if *l > geom.leg_max {
                reasons.push(format!("leg {i} over-extended"));
            } else if *l < geom.leg_min {
                reasons.push(format!("leg {i} under-extended"));
            }
        }
        if reasons.is_empty() {
            out.kept.push((*id, *pose));
        } else {
            out.dropped.push(DroppedPose {
                pose_id: *id,
                pose: *pose,
                reason: reasons.join("; "),
            });
        }
    }
    out
}

/// Non-excluded observations whose target is within the near-singular margin,
/// with their normalized `|det J|`.
pub fn detect_outliers(ds: &CalibrationDataset, geom: &PlatformGeometry) -> Vec<(u32, f64)> {
    let limit = OUTLIER_MARGIN * geom.singularity_tol;
    ds.observations()
        .iter()
        .filter(|o| !ds.is_excluded(o.pose_id))
        .filter_map(|o| {
            let nd = normalized_determinant(&o.target, geom);
            (nd < limit).then_some((o.pose_id, nd))
        })
        .collect()
}
