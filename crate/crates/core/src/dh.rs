//! Modified Denavit-Hartenberg chains along each UPS actuator path.
//!
//! Each leg is written as six rows `(theta, d, a, alpha_link)` evaluated as
//! `Rx(alpha_link) * Tx(a) * Rz(theta) * Tz(d)`:
//!
//! | row | joint                | variable | alpha_link |
//! |-----|----------------------|----------|------------|
//! | 0   | universal, base x    | theta    | 0          |
//! | 1   | universal, base y    | theta    | -90        |
//! | 2   | prismatic, leg axis  | d        | -90        |
//! | 3   | spherical            | theta    | -90        |
//! | 4   | spherical            | theta    | -90        |
//! | 5   | spherical            | theta    | 90         |
//!
//! All joint axes of a joint intersect, so every `a` is zero and the prismatic
//! `d` is the full leg length. The base anchor places the first joint frame at
//! the universal-joint centre with its z axis along base x. The tool anchor is
//! fixed per leg and chosen so the spherical angles read `(0, 90, 0)` at home,
//! which keeps the wrist far from its lock configuration (last axis parallel
//! to the first) across the workspace.

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

use crate::geometry::{
    grip_transform, normalize_deg, rot_x, rot_y, rot_z, PlatformGeometry, PoseVector,
    RigidTransform,
};

/// `sin` of the middle spherical angle below which the wrist is locked.
pub const WRIST_LOCK_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DhError {
    #[error("leg {leg}: {what}, frame assignment is ill-defined")]
    SingularPose { leg: usize, what: &'static str },
    #[error("leg index {0} out of range 0..6")]
    LegIndex(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum JointKind {
    Revolute,
    Prismatic,
}

/// Joint type of each row, in chain order.
pub const JOINT_KINDS: [JointKind; 6] = [
    JointKind::Revolute,
    JointKind::Revolute,
    JointKind::Prismatic,
    JointKind::Revolute,
    JointKind::Revolute,
    JointKind::Revolute,
];

const ALPHA_LINKS: [f64; 6] = [0.0, -90.0, -90.0, -90.0, -90.0, 90.0];

/// One modified-DH row. Angles in degrees, lengths in mm.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DhRow {
    pub theta: f64,
    pub d: f64,
    pub a: f64,
    pub alpha_link: f64,
}

/// The four row parameters, used as keys for per-parameter corrections.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DhParam {
    Theta,
    D,
    A,
    AlphaLink,
}

impl DhParam {
    pub const ALL: [DhParam; 4] = [DhParam::Theta, DhParam::D, DhParam::A, DhParam::AlphaLink];

    pub fn name(self) -> &'static str {
        match self {
            DhParam::Theta => "theta",
            DhParam::D => "d",
            DhParam::A => "a",
            DhParam::AlphaLink => "alpha_link",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.name() == s)
    }

    pub fn is_angle(self) -> bool {
        matches!(self, DhParam::Theta | DhParam::AlphaLink)
    }
}

impl DhRow {
    pub fn new(theta: f64, d: f64, a: f64, alpha_link: f64) -> Self {
        Self {
            theta: normalize_deg(theta),
            d,
            a,
            alpha_link: normalize_deg(alpha_link),
        }
    }

    pub fn get(&self, p: DhParam) -> f64 {
        match p {
            DhParam::Theta => self.theta,
            DhParam::D => self.d,
            DhParam::A => self.a,
            DhParam::AlphaLink => self.alpha_link,
        }
    }

    /// Sets a parameter, wrapping angles.
    pub fn set(&mut self, p: DhParam, v: f64) {
        match p {
            DhParam::Theta => self.theta = normalize_deg(v),
            DhParam::D => self.d = v,
            DhParam::A => self.a = v,
            DhParam::AlphaLink => self.alpha_link = normalize_deg(v),
        }
    }

    /// `Rx(alpha_link) * Tx(a) * Rz(theta) * Tz(d)`.
    pub fn transform(&self) -> RigidTransform {
        let rx = rot_x(self.alpha_link);
        let rz = rot_z(self.theta);
        RigidTransform::new(
            rx * rz,
            rx * Vector3::new(self.a, 0.0, 0.0) + rx * Vector3::new(0.0, 0.0, self.d),
        )
    }
}

/// Modified-DH description of one actuator path from `O_B` to `O_LG`.
#[derive(Debug, Clone, PartialEq)]
pub struct DhChain {
    pub leg_index: usize,
    pub rows: [DhRow; 6],
    /// `O_B` -> first joint frame.
    pub base_anchor: RigidTransform,
    /// Last joint frame -> `O_LG`.
    pub tool_anchor: RigidTransform,
}

/// Rotation taking base axes to the first joint frame: z along base x, y along base y.
fn base_alignment() -> Matrix3<f64> {
    rot_y(90.0)
}

/// Joint variables of the universal + prismatic part for leg direction `u`.
fn leg_joint_angles(leg: usize, u: &Vector3<f64>) -> Result<(f64, f64), DhError> {
    let f0 = base_alignment();
    let v = f0.transpose() * u;
    if v.x.hypot(v.y) < 1e-12 {
        return Err(DhError::SingularPose {
            leg,
            what: "leg axis parallel to the first universal axis",
        });
    }
    // Branch chosen so theta1 is near zero for a near-vertical leg.
    let theta1 = (-v.y).atan2(-v.x);
    let g = f0 * rot_z(theta1.to_degrees()) * rot_x(-90.0);
    let w = g.transpose() * u;
    let theta2 = (-w.x).atan2(w.y);
    Ok((theta1.to_degrees(), theta2.to_degrees()))
}

/// Rotation of the prismatic (leg body) frame.
fn leg_frame_rotation(theta1: f64, theta2: f64) -> Matrix3<f64> {
    base_alignment() * rot_z(theta1) * rot_x(-90.0) * rot_z(theta2) * rot_x(-90.0)
}

struct LegState {
    theta1: f64,
    theta2: f64,
    length: f64,
    leg_rot: Matrix3<f64>,
}

fn leg_state(pose: &PoseVector, geom: &PlatformGeometry, leg: usize) -> Result<LegState, DhError> {
    let grip = grip_transform(pose, geom);
    let q = grip.transform_point(&geom.platform_joint_in_grip(leg)) - geom.base_joints[leg];
    let length = q.norm();
    if !(length > 0.0) {
        return Err(DhError::SingularPose {
            leg,
            what: "zero-length leg",
        });
    }
    let (theta1, theta2) = leg_joint_angles(leg, &(q / length))?;
    Ok(LegState {
        theta1,
        theta2,
        length,
        leg_rot: leg_frame_rotation(theta1, theta2),
    })
}

/// Constant last-joint -> grip transform for a leg, fixed by the home pose.
fn tool_anchor(geom: &PlatformGeometry, leg: usize) -> Result<RigidTransform, DhError> {
    let home = leg_state(&PoseVector::home(), geom, leg)?;
    let wrist_home = home.leg_rot * rot_x(-90.0) * rot_y(90.0);
    let c = wrist_home.transpose();
    Ok(RigidTransform::new(c, -(c * geom.platform_joint_in_grip(leg))))
}

/// DH chain of leg `leg` whose forward evaluation reproduces the grip pose.
pub fn extract_dh_chain(
    pose: &PoseVector,
    geom: &PlatformGeometry,
    leg: usize,
) -> Result<DhChain, DhError> {
    if leg >= 6 {
        return Err(DhError::LegIndex(leg));
    }
    let st = leg_state(pose, geom, leg)?;
    let tool = tool_anchor(geom, leg)?;
    let grip = grip_transform(pose, geom);
    let wrist = grip.rotation * tool.rotation.transpose();
    // Rx(-90) Rz(t4) Rx(-90) Rz(t5) Rx(90) Rz(t6) = Rx(-90) Rz(t4) Ry(t5) Rz(t6)
    let n = rot_x(90.0) * st.leg_rot.transpose() * wrist;
    let sin5 = n[(0, 2)].hypot(n[(1, 2)]);
    if sin5 < WRIST_LOCK_TOL {
        return Err(DhError::SingularPose {
            leg,
            what: "spherical joint at wrist lock",
        });
    }
    let theta5 = sin5.atan2(n[(2, 2)]);
    let theta4 = n[(1, 2)].atan2(n[(0, 2)]);
    let theta6 = n[(2, 1)].atan2(-n[(2, 0)]);

    let thetas = [
        st.theta1,
        st.theta2,
        0.0,
        theta4.to_degrees(),
        theta5.to_degrees(),
        theta6.to_degrees(),
    ];
    let rows = std::array::from_fn(|k| {
        let d = if JOINT_KINDS[k] == JointKind::Prismatic {
            st.length
        } else {
            0.0
        };
        DhRow::new(thetas[k], d, 0.0, ALPHA_LINKS[k])
    });
    Ok(DhChain {
        leg_index: leg,
        rows,
        base_anchor: RigidTransform::new(base_alignment(), geom.base_joints[leg]),
        tool_anchor: tool,
    })
}

/// Chains for all six legs.
pub fn extract_all_chains(
    pose: &PoseVector,
    geom: &PlatformGeometry,
) -> Result<[DhChain; 6], DhError> {
    let v: Vec<DhChain> = (0..6)
        .map(|leg| extract_dh_chain(pose, geom, leg))
        .collect::<Result<_, _>>()?;
    Ok(v.try_into().expect("six chains"))
}

/// `base_anchor * row_0 * ... * row_5 * tool_anchor`.
pub fn chain_forward(chain: &DhChain) -> RigidTransform {
    let mut t = chain.base_anchor;
    for row in &chain.rows {
        t = t.compose(&row.transform());
    }
    t.compose(&chain.tool_anchor)
}

/// Component-wise mean of the six per-leg positions.
pub fn unify_positions(positions: &[Vector3<f64>; 6]) -> Vector3<f64> {
    positions.iter().fold(Vector3::zeros(), |acc, p| acc + p) / 6.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::grip_transform;
    use crate::kinematics::inverse_kinematics;
    use nalgebra::Matrix4;

    fn geom() -> PlatformGeometry {
        PlatformGeometry::reference()
    }

    fn oracle_row(r: &DhRow) -> Matrix4<f64> {
        let (sa, ca) = r.alpha_link.to_radians().sin_cos();
        let (st, ct) = r.theta.to_radians().sin_cos();
        // Rx(alpha) Tx(a) Rz(theta) Tz(d), multiplied out
        Matrix4::new(
            ct, -st, 0.0, r.a,
            st * ca, ct * ca, -sa, -sa * r.d,
            st * sa, ct * sa, ca, ca * r.d,
            0.0, 0.0, 0.0, 1.0,
        )
    }

    fn oracle_forward(c: &DhChain) -> Matrix4<f64> {
        let mut m = c.base_anchor.to_homogeneous();
        for r in &c.rows {
            m *= oracle_row(r);
        }
        m * c.tool_anchor.to_homogeneous()
    }

    #[test]
    fn home_chain_reproduces_home_transform() {
        let g = geom();
        let home = grip_transform(&PoseVector::home(), &g);
        let l = inverse_kinematics(&PoseVector::home(), &g);
        for leg in 0..6 {
            let c = extract_dh_chain(&PoseVector::home(), &g, leg).unwrap();
            assert!(chain_forward(&c).frobenius_distance(&home) < 1e-9);
            assert!((c.rows[2].d - l.lengths[leg]).abs() < 1e-9);
            assert!(c.rows[3].theta.abs() < 1e-9);
            assert!((c.rows[4].theta - 90.0).abs() < 1e-9);
            assert!(c.rows[5].theta.abs() < 1e-9);
        }
    }

    #[test]
    fn empty_chain_is_identity() {
        let c = DhChain {
            leg_index: 0,
            rows: [DhRow::default(); 6],
            base_anchor: RigidTransform::identity(),
            tool_anchor: RigidTransform::identity(),
        };
        assert!(chain_forward(&c).frobenius_distance(&RigidTransform::identity()) < 1e-15);
    }

    #[test]
    fn perturbed_row_matches_matrix_product_oracle() {
        let g = geom();
        let mut c = extract_dh_chain(&PoseVector::new(5.0, 3.0, -2.0, 4.0, 1.0, -6.0), &g, 3).unwrap();
        c.rows[1].theta += 1.0;
        let t = chain_forward(&c);
        assert!((t.to_homogeneous() - oracle_forward(&c)).norm() < 1e-9);
    }

    #[test]
    fn z_translation_moves_only_joint_variables() {
        let g = geom();
        for leg in 0..6 {
            let a = extract_dh_chain(&PoseVector::home(), &g, leg).unwrap();
            let b = extract_dh_chain(&PoseVector::new(0.0, 0.0, 20.0, 0.0, 0.0, 0.0), &g, leg).unwrap();
            for k in 0..6 {
                assert_eq!(a.rows[k].a, b.rows[k].a);
                assert_eq!(a.rows[k].alpha_link, b.rows[k].alpha_link);
            }
            assert!((b.rows[2].d - a.rows[2].d).abs() > 1.0);
            assert_eq!(a.tool_anchor, b.tool_anchor);
        }
    }

    #[test]
    fn bad_leg_index() {
        assert_eq!(
            extract_dh_chain(&PoseVector::home(), &geom(), 6),
            Err(DhError::LegIndex(6))
        );
    }

    #[test]
    fn unify_examples() {
        let v = Vector3::new(1.5, -2.0, 3.0);
        assert_eq!(unify_positions(&[v; 6]), v);
        let sym = [
            Vector3::x(),
            -Vector3::x(),
            Vector3::y(),
            -Vector3::y(),
            Vector3::z(),
            -Vector3::z(),
        ];
        assert_eq!(unify_positions(&sym), Vector3::zeros());
        let r = [
            Vector3::new(0.3, 1.7, -2.2),
            Vector3::new(4.1, -0.6, 0.9),
            Vector3::new(-1.3, 2.2, 5.5),
            Vector3::new(0.0, 0.1, -0.4),
            Vector3::new(7.2, -3.3, 1.1),
            Vector3::new(-2.8, 0.4, 0.6),
        ];
        let mut s = [0.0; 3];
        for p in &r {
            for k in 0..3 {
                s[k] += p[k];
            }
        }
        let m = unify_positions(&r);
        for k in 0..3 {
            assert!((m[k] - s[k] / 6.0).abs() < 1e-15);
        }
    }

    proptest::proptest! {
        #[test]
        fn extract_forward_round_trip(
            x in -50.0f64..50.0, y in -50.0f64..50.0, z in -40.0f64..40.0,
            a in -12.0f64..12.0, b in -12.0f64..12.0, c in -15.0f64..15.0,
            leg in 0usize..6,
        ) {
            let g = geom();
            let p = PoseVector::new(x, y, z, a, b, c);
            let chain = extract_dh_chain(&p, &g, leg).unwrap();
            let target = grip_transform(&p, &g);
            proptest::prop_assert!(chain_forward(&chain).frobenius_distance(&target) < 1e-9);
            proptest::prop_assert!((chain_forward(&chain).to_homogeneous() - oracle_forward(&chain)).norm() < 1e-9);
            let l = inverse_kinematics(&p, &g);
            proptest::prop_assert!((chain.rows[2].d - l.lengths[leg]).abs() < 1e-9);
        }

        #[test]
        fn unify_is_translation_equivariant(t in proptest::array::uniform3(-100.0f64..100.0)) {
            let base: [Vector3<f64>; 6] = std::array::from_fn(|i| Vector3::new(i as f64, 2.0 * i as f64, -(i as f64)));
            let tv = Vector3::from(t);
            let shifted = base.map(|p| p + tv);
            proptest::prop_assert!((unify_positions(&shifted) - unify_positions(&base) - tv).norm() < 1e-12);
            let mut rev = base;
            rev.reverse();
            proptest::prop_assert!((unify_positions(&rev) - unify_positions(&base)).norm() < 1e-12);
        }
    }
}
