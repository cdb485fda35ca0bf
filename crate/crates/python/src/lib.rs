//! Python bindings for `hexcal`.

use hexcal::calibration::{
    apply_model, fit_model, filter_workspace, model_residuals, CalibrationDataset,
    CompensationModel, CompensationOption,
};
use hexcal::config::{geometry_to_toml, parse_geometry, parse_scenario};
use hexcal::geometry::{PlatformGeometry, PoseVector};
use hexcal::io::{model_to_toml, parse_dataset, parse_model, write_dataset};
use hexcal::kinematics::{self, LegLengths};
use hexcal::metrics::{build_report, report_from_errors, ErrorReport};
use hexcal::simulator::{build_dataset, generate_random_poses, perturb_geometry};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

fn err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Joint layout, actuator stroke and workspace bounds.
#[pyclass(name = "Geometry", module = "pyhexcal", from_py_object)]
#[derive(Clone)]
struct PyGeometry(PlatformGeometry);

#[pymethods]
impl PyGeometry {
    #[staticmethod]
    fn reference() -> Self {
        Self(PlatformGeometry::reference())
    }

    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        parse_geometry(text).map(Self).map_err(err)
    }

    fn to_toml(&self) -> String {
        geometry_to_toml(&self.0)
    }

    fn home_leg_lengths(&self) -> [f64; 6] {
        self.0.home_leg_lengths()
    }

    #[getter]
    fn leg_min(&self) -> f64 {
        self.0.leg_min
    }

    #[getter]
    fn leg_max(&self) -> f64 {
        self.0.leg_max
    }
}

/// `x, y, z` in mm and `alpha, beta, gamma` in degrees.
#[pyclass(name = "Pose", module = "pyhexcal", from_py_object)]
#[derive(Clone, Copy)]
struct PyPose(PoseVector);

#[pymethods]
impl PyPose {
    #[new]
    #[pyo3(signature = (x=0.0, y=0.0, z=0.0, alpha=0.0, beta=0.0, gamma=0.0))]
    fn new(x: f64, y: f64, z: f64, alpha: f64, beta: f64, gamma: f64) -> Self {
        Self(PoseVector::new(x, y, z, alpha, beta, gamma))
    }

    fn to_list(&self) -> [f64; 6] {
        self.0.to_array()
    }

    #[getter]
    fn x(&self) -> f64 {
        self.0.x
    }
    #[getter]
    fn y(&self) -> f64 {
        self.0.y
    }
    #[getter]
    fn z(&self) -> f64 {
        self.0.z
    }
    #[getter]
    fn alpha(&self) -> f64 {
        self.0.alpha
    }
    #[getter]
    fn beta(&self) -> f64 {
        self.0.beta
    }
    #[getter]
    fn gamma(&self) -> f64 {
        self.0.gamma
    }

    fn __repr__(&self) -> String {
        let p = self.0;
        format!(
            "Pose(x={}, y={}, z={}, alpha={}, beta={}, gamma={})",
            p.x, p.y, p.z, p.alpha, p.beta, p.gamma
        )
    }
}

fn geom(g: Option<&PyGeometry>) -> PlatformGeometry {
    g.map(|g| g.0.clone()).unwrap_or_else(PlatformGeometry::reference)
}

/// Returns `(lengths, valid)`.
#[pyfunction]
#[pyo3(signature = (pose, geometry=None))]
fn inverse_kinematics(pose: &PyPose, geometry: Option<&PyGeometry>) -> ([f64; 6], bool) {
    let l = kinematics::inverse_kinematics(&pose.0, &geom(geometry));
    (l.lengths, l.valid)
}

#[pyfunction]
#[pyo3(signature = (legs, geometry=None, guess=None))]
fn forward_kinematics(
    legs: [f64; 6],
    geometry: Option<&PyGeometry>,
    guess: Option<&PyPose>,
) -> PyResult<PyPose> {
    let g = geom(geometry);
    let guess = guess.map(|p| p.0).unwrap_or_else(PoseVector::home);
    kinematics::forward_kinematics(&LegLengths::new(legs, &g), &g, &guess)
        .map(PyPose)
        .map_err(err)
}

/// Rows are legs, columns `x, y, z` (mm/mm) then `alpha, beta, gamma` (mm/deg).
#[pyfunction]
#[pyo3(signature = (pose, geometry=None))]
fn jacobian(pose: &PyPose, geometry: Option<&PyGeometry>) -> Vec<[f64; 6]> {
    let j = kinematics::jacobian(&pose.0, &geom(geometry));
    (0..6).map(|r| std::array::from_fn(|c| j[(r, c)])).collect()
}

#[pyfunction]
#[pyo3(signature = (pose, geometry=None))]
fn normalized_determinant(pose: &PyPose, geometry: Option<&PyGeometry>) -> f64 {
    kinematics::normalized_determinant(&pose.0, &geom(geometry))
}

/// Commanded targets paired with measured poses.
#[pyclass(name = "Dataset", module = "pyhexcal")]
struct PyDataset(CalibrationDataset);

#[pymethods]
impl PyDataset {
    #[staticmethod]
    fn from_csv(text: &str) -> PyResult<Self> {
        parse_dataset(text).map(Self).map_err(err)
    }

    fn to_csv(&self) -> String {
        write_dataset(&self.0)
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    /// `(pose_id, reason)` for every excluded observation.
    fn exclusions(&self) -> Vec<(u32, String)> {
        self.0.exclusions().iter().map(|(id, e)| (*id, e.to_string())).collect()
    }

    fn report(&self) -> PyResult<PyReport> {
        build_report(&self.0, None).map(PyReport).map_err(err)
    }
}

/// Error ranges and their RMS magnitudes.
#[pyclass(name = "Report", module = "pyhexcal")]
struct PyReport(ErrorReport);

#[pymethods]
impl PyReport {
    #[getter]
    fn ranges(&self) -> [f64; 6] {
        self.0.ranges
    }
    #[getter]
    fn position_magnitude(&self) -> f64 {
        self.0.position_magnitude
    }
    #[getter]
    fn orientation_magnitude(&self) -> f64 {
        self.0.orientation_magnitude
    }
    #[getter]
    fn improvement_position_pct(&self) -> Option<f64> {
        self.0.improvement_position_pct
    }
    #[getter]
    fn improvement_orientation_pct(&self) -> Option<f64> {
        self.0.improvement_orientation_pct
    }
    #[getter]
    fn pose_count(&self) -> usize {
        self.0.pose_count
    }

    fn to_csv(&self) -> String {
        self.0.to_csv()
    }

    #[pyo3(signature = (title="error report"))]
    fn render(&self, title: &str) -> String {
        self.0.render_text(title)
    }
}

/// Runs the campaign described by a scenario TOML and returns the dataset.
#[pyfunction]
#[pyo3(signature = (scenario_toml, seed=None, geometry=None))]
fn simulate(scenario_toml: &str, seed: Option<u64>, geometry: Option<&PyGeometry>) -> PyResult<PyDataset> {
    let mut s = parse_scenario(scenario_toml).map_err(err)?;
    if let Some(seed) = seed {
        s = s.with_seed(seed);
    }
    let g = match geometry {
        Some(g) => g.0.clone(),
        None => s.geometry.clone().unwrap_or_else(PlatformGeometry::reference),
    };
    let truth = perturb_geometry(&g, &s.perturbation).map_err(err)?;
    let targets = generate_random_poses(s.pose_count, &g, s.seed).map_err(err)?;
    Ok(PyDataset(build_dataset(&targets, &g, &truth, &s.noise)))
}

/// A fitted compensation model.
#[pyclass(name = "Model", module = "pyhexcal")]
struct PyModel(CompensationModel);

#[pymethods]
impl PyModel {
    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        parse_model(text).map(Self).map_err(err)
    }

    fn to_toml(&self) -> String {
        model_to_toml(&self.0)
    }

    #[getter]
    fn option(&self) -> u8 {
        self.0.option.number()
    }

    /// Compensated commands for `(pose_id, target)` pairs, with workspace
    /// violations reported separately as `(pose_id, reason)`.
    #[pyo3(signature = (targets, geometry=None))]
    fn apply(
        &self,
        targets: Vec<(u32, PyPose)>,
        geometry: Option<&PyGeometry>,
    ) -> PyResult<(Vec<(u32, PyPose)>, Vec<(u32, String)>)> {
        let g = geom(geometry);
        let t: Vec<_> = targets.into_iter().map(|(id, p)| (id, p.0)).collect();
        let predicted = apply_model(&self.0, &t, &g).map_err(err)?;
        let f = filter_workspace(&predicted, &g);
        Ok((
            f.kept.into_iter().map(|(id, p)| (id, PyPose(p))).collect(),
            f.dropped.into_iter().map(|d| (d.pose_id, d.reason)).collect(),
        ))
    }

    /// Report over the residual errors the model leaves on `dataset`.
    #[pyo3(signature = (dataset, geometry=None))]
    fn residual_report(&self, dataset: &PyDataset, geometry: Option<&PyGeometry>) -> PyResult<PyReport> {
        let g = geom(geometry);
        let base = build_report(&dataset.0, None).map_err(err)?;
        let res: Vec<_> = model_residuals(&self.0, &dataset.0, &g)
            .map_err(err)?
            .into_iter()
            .map(|(_, e)| e)
            .collect();
        report_from_errors(&res, Some(&base)).map(PyReport).map_err(err)
    }
}

/// Fits compensation option 1, 2 or 3 to the usable observations.
#[pyfunction]
#[pyo3(signature = (dataset, option, geometry=None))]
fn calibrate(dataset: &PyDataset, option: u8, geometry: Option<&PyGeometry>) -> PyResult<PyModel> {
    let opt = CompensationOption::from_number(option)
        .ok_or_else(|| PyValueError::new_err(format!("option must be 1, 2 or 3, got {option}")))?;
    fit_model(&dataset.0, &geom(geometry), opt).map(PyModel).map_err(err)
}

#[pymodule]
fn pyhexcal(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyGeometry>()?;
    m.add_class::<PyPose>()?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PyReport>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(inverse_kinematics, m)?)?;
    m.add_function(wrap_pyfunction!(forward_kinematics, m)?)?;
    m.add_function(wrap_pyfunction!(jacobian, m)?)?;
    m.add_function(wrap_pyfunction!(normalized_determinant, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(calibrate, m)?)?;
    Ok(())
}
