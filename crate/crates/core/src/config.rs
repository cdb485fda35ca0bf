//! TOML geometry and scenario files.
//!
//! ```toml
//! base_joints = [[386.37, -103.53, 0.0], ...]      # 6 x [x, y, z], mm
//! platform_joints = [[176.78, -176.78, 0.0], ...]  # 6 x [x, y, z], mm
//! leg_min_mm = 500.0
//! leg_max_mm = 800.0
//! fd_mm = 100.0
//! gd_home_mm = 50.0
//! ug_offset_mm = [0.0, 0.0, 750.0]
//! pose_bounds = [[-50.0, 50.0], ...]               # 6 x [min, max] for x y z alpha beta gamma
//! singularity_tol = 1e-8
//! ```
//!
//! A scenario file has `pose_count`, `seed`, optional `[geometry]`,
//! `[perturbation]` and `[noise]` tables. Section seeds default to `seed`.

use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{PlatformGeometry, PoseBounds};
use crate::simulator::{NoiseSpec, PerturbationSpec};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("{0}")]
    Invalid(String),
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].bytes().filter(|b| *b == b'\n').count() + 1
}

fn parse_toml<T: serde::de::DeserializeOwned>(text: &str) -> Result<T, ConfigError> {
    toml::from_str(text).map_err(|e| ConfigError::Syntax {
        line: e.span().map(|s| line_of(text, s.start)).unwrap_or(1),
        message: e.message().trim().to_string(),
    })
}

fn read(path: &Path) -> Result<String, ConfigError> {
    std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GeometryFile {
    base_joints: [[f64; 3]; 6],
    platform_joints: [[f64; 3]; 6],
    leg_min_mm: f64,
    leg_max_mm: f64,
    fd_mm: f64,
    gd_home_mm: f64,
    ug_offset_mm: [f64; 3],
    pose_bounds: [[f64; 2]; 6],
    singularity_tol: f64,
}

impl GeometryFile {
    fn into_geometry(self) -> Result<PlatformGeometry, ConfigError> {
        let v = |a: [f64; 3]| Vector3::new(a[0], a[1], a[2]);
        let g = PlatformGeometry {
            base_joints: self.base_joints.map(v),
            platform_joints: self.platform_joints.map(v),
            leg_min: self.leg_min_mm,
            leg_max: self.leg_max_mm,
            fd: self.fd_mm,
            gd_home: self.gd_home_mm,
            ug_offset: v(self.ug_offset_mm),
            pose_bounds: PoseBounds {
                min: self.pose_bounds.map(|b| b[0]),
                max: self.pose_bounds.map(|b| b[1]),
            },
            singularity_tol: self.singularity_tol,
        };
        g.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(g)
    }

    fn from_geometry(g: &PlatformGeometry) -> Self {
        let a = |v: &Vector3<f64>| [v.x, v.y, v.z];
        Self {
            base_joints: g.base_joints.each_ref().map(a),
            platform_joints: g.platform_joints.each_ref().map(a),
            leg_min_mm: g.leg_min,
            leg_max_mm: g.leg_max,
            fd_mm: g.fd,
            gd_home_mm: g.gd_home,
            ug_offset_mm: a(&g.ug_offset),
            pose_bounds: std::array::from_fn(|k| [g.pose_bounds.min[k], g.pose_bounds.max[k]]),
            singularity_tol: g.singularity_tol,
        }
    }
}

pub fn parse_geometry(text: &str) -> Result<PlatformGeometry, ConfigError> {
    parse_toml::<GeometryFile>(text)?.into_geometry()
}

pub fn load_geometry(path: &Path) -> Result<PlatformGeometry, ConfigError> {
    parse_geometry(&read(path)?)
}

pub fn geometry_to_toml(g: &PlatformGeometry) -> String {
    toml::to_string(&GeometryFile::from_geometry(g)).expect("geometry serializes")
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct PerturbationSection {
    #[serde(default)]
    joint_position_noise: f64,
    #[serde(default)]
    leg_offset_bias: [f64; 6],
    seed: Option<u64>,
    #[serde(default)]
    pose_error_slope: [f64; 6],
    #[serde(default)]
    pose_error_intercept: [f64; 6],
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct NoiseSection {
    position_sigma: Option<f64>,
    orientation_sigma: Option<f64>,
    seed: Option<u64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    pose_count: usize,
    seed: u64,
    geometry: Option<GeometryFile>,
    perturbation: Option<PerturbationSection>,
    noise: Option<NoiseSection>,
}

/// Everything needed to reproduce a simulated calibration campaign.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    /// `None` when the scenario relies on an externally supplied geometry.
    pub geometry: Option<PlatformGeometry>,
    pub perturbation: PerturbationSpec,
    pub noise: NoiseSpec,
    pub pose_count: usize,
    /// Seed for target generation.
    pub seed: u64,
}

impl Scenario {
    /// Replaces every seed in the scenario.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.perturbation.seed = seed;
        self.noise.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.pose_count == 0 {
            return Err(ConfigError::Invalid("pose_count must be at least 1".into()));
        }
        let inv = |e: crate::simulator::SimulatorError| ConfigError::Invalid(e.to_string());
        self.perturbation.validate().map_err(inv)?;
        self.noise.validate().map_err(inv)?;
        Ok(())
    }
}

pub fn parse_scenario(text: &str) -> Result<Scenario, ConfigError> {
    let f: ScenarioFile = parse_toml(text)?;
    let geometry = f.geometry.map(GeometryFile::into_geometry).transpose()?;
    let p = f.perturbation.unwrap_or_default();
    let defaults = NoiseSpec::default();
    let noise = match f.noise {
        Some(n) => NoiseSpec {
            position_sigma: n.position_sigma.unwrap_or(defaults.position_sigma),
            orientation_sigma: n.orientation_sigma.unwrap_or(defaults.orientation_sigma),
            seed: n.seed.unwrap_or(f.seed),
        },
        None => NoiseSpec { seed: f.seed, ..defaults },
    };
    let s = Scenario {
        geometry,
        perturbation: PerturbationSpec {
            joint_position_noise: p.joint_position_noise,
            leg_offset_bias: p.leg_offset_bias,
            seed: p.seed.unwrap_or(f.seed),
            pose_error_slope: p.pose_error_slope,
            pose_error_intercept: p.pose_error_intercept,
        },
        noise,
        pose_count: f.pose_count,
        seed: f.seed,
    };
    s.validate()?;
    Ok(s)
}

pub fn load_scenario(path: &Path) -> Result<Scenario, ConfigError> {
    parse_scenario(&read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn geometry_round_trips_through_toml() {
        let g = PlatformGeometry::reference();
        let text = geometry_to_toml(&g);
        assert_eq!(parse_geometry(&text).unwrap(), g);
    }

    #[test]
    fn missing_field_is_reported() {
        let text = geometry_to_toml(&PlatformGeometry::reference());
        let cut: String = text
            .lines()
            .filter(|l| !l.starts_with("fd_mm"))
            .map(|l| format!("{l}\n"))
            .collect();
        let e = parse_geometry(&cut).unwrap_err();
        assert!(matches!(e, ConfigError::Syntax { .. }));
        assert!(e.to_string().contains("fd_mm"), "{e}");
    }

    #[test]
    fn wrong_arity_reports_its_line() {
        let text = "\
base_joints = [[1, 0, 0], [1, 0, 0], [1, 0, 0], [1, 0, 0], [1, 0, 0], [1, 0, 0]]
platform_joints = [[1, 0, 0], [1, 0, 0], [1, 0, 0], [1, 0, 0], [1, 0, 0], [1, 0, 0]]
leg_min_mm = 500.0
leg_max_mm = 800.0
fd_mm = 100.0
gd_home_mm = 50.0
ug_offset_mm = [0.0, 750.0]
pose_bounds = [[-1, 1], [-1, 1], [-1, 1], [-1, 1], [-1, 1], [-1, 1]]
singularity_tol = 1e-8
";
        match parse_geometry(text).unwrap_err() {
            ConfigError::Syntax { line, .. } => assert_eq!(line, 7),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn invalid_values_are_rejected() {
        let mut g = PlatformGeometry::reference();
        g.leg_min = 900.0;
        g.leg_max = 1000.0;
        let e = parse_geometry(&geometry_to_toml(&g)).unwrap_err();
        assert!(matches!(e, ConfigError::Invalid(_)));
    }

    #[test]
    fn scenario_seeds_default_to_top_level() {
        let s = parse_scenario(
            "pose_count = 34\nseed = 9\n[perturbation]\njoint_position_noise = 0.5\nleg_offset_bias = [0.2, 0.2, 0.2, 0.2, 0.2, 0.2]\n[noise]\nposition_sigma = 0.0\nseed = 4\n",
        )
        .unwrap();
        assert_eq!(s.perturbation.seed, 9);
        assert_eq!(s.noise.seed, 4);
        assert_eq!(s.noise.position_sigma, 0.0);
        assert_eq!(s.noise.orientation_sigma, 0.05);
        assert!(s.geometry.is_none());
        let s = s.with_seed(1);
        assert_eq!((s.seed, s.perturbation.seed, s.noise.seed), (1, 1, 1));
    }

    #[test]
    fn scenario_rejects_bad_sections() {
        assert!(parse_scenario("pose_count = 0\nseed = 1\n").is_err());
        let e = parse_scenario("pose_count = 3\nseed = 1\n[noise]\nposition_sigma = -1.0\n").unwrap_err();
        assert!(e.to_string().contains("position_sigma"));
        let e = parse_scenario("pose_count = 3\nseed = 1\n[noise]\nsigma = 1.0\n").unwrap_err();
        assert!(matches!(e, ConfigError::Syntax { line: 4, .. }), "{e}");
    }
}
