//! Command implementations behind the `hexcal` binary.
//!
//! Each command returns the text it would print and an exit code, so the
//! binary stays a thin argument parser and tests can drive the commands
//! directly.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context as _;
use hexcal::calibration::{
    apply_model, detect_outliers, error_vector, filter_workspace, fit_model, model_residuals,
    CalibrationDataset, CalibrationError, CompensationOption, Exclusion, ExclusionKind,
};
use hexcal::config::{load_geometry, load_scenario, Scenario};
use hexcal::dh::extract_all_chains;
use hexcal::geometry::{PlatformGeometry, PoseVector};
use hexcal::io::{
    model_to_toml, parse_dataset, parse_error_table, parse_predictions, write_dataset,
    write_dh_table, write_error_table, write_predictions, PredictionRow, DATASET_HEADER,
};
use hexcal::kinematics::{forward_kinematics, inverse_kinematics, LegLengths};
use hexcal::metrics::{report_from_errors, ErrorReport};
use hexcal::simulator::{
    build_dataset, generate_random_poses, measure_poses, perturb_geometry, MeasurementPass,
};
use log::{info, warn};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 1;
pub const EXIT_WARNING: i32 = 2;
pub const EXIT_INSUFFICIENT: i32 = 3;

/// A failed command: message for stderr and the exit code to return.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError {
            code: EXIT_INPUT,
            message: format!("{e:#}"),
        }
    }
}

fn insufficient(e: impl std::fmt::Display) -> CliError {
    CliError {
        code: EXIT_INSUFFICIENT,
        message: e.to_string(),
    }
}

fn calibration_failure(e: CalibrationError) -> CliError {
    match e {
        CalibrationError::InsufficientData { .. } => insufficient(e),
        e => CliError {
            code: EXIT_INPUT,
            message: e.to_string(),
        },
    }
}

pub type CmdResult = Result<Outcome, CliError>;

/// Printed output and exit code of a successful (or warning) run.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub stdout: String,
    pub code: i32,
}

impl Outcome {
    fn ok(stdout: String) -> Self {
        Self {
            stdout,
            code: EXIT_OK,
        }
    }
}

/// Global flags.
#[derive(Debug, Clone, Default)]
pub struct Globals {
    pub geometry: Option<PathBuf>,
    pub seed: Option<u64>,
    pub output: Option<PathBuf>,
}

impl Globals {
    /// Geometry from `--geometry`, else the reference layout.
    pub fn geometry(&self) -> anyhow::Result<PlatformGeometry> {
        match &self.geometry {
            Some(p) => load_geometry(p).with_context(|| format!("geometry {}", p.display())),
            None => Ok(PlatformGeometry::reference()),
        }
    }

    /// Scenario with the seed override applied. `--geometry` takes precedence
    /// over an inline `[geometry]` table.
    pub fn scenario(&self, path: &Path) -> anyhow::Result<(Scenario, PlatformGeometry)> {
        let mut s = load_scenario(path).with_context(|| format!("scenario {}", path.display()))?;
        if let Some(seed) = self.seed {
            s = s.with_seed(seed);
        }
        let geom = match (&self.geometry, &s.geometry) {
            (None, Some(g)) => g.clone(),
            _ => self.geometry()?,
        };
        Ok((s, geom))
    }

    fn output(&self, what: &str) -> anyhow::Result<&Path> {
        self.output
            .as_deref()
            .with_context(|| format!("--output is required for {what}"))
    }
}

fn read(path: &Path) -> anyhow::Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn write(path: &Path, text: &str) -> anyhow::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn cmd_ik(g: &Globals, pose: [f64; 6]) -> CmdResult {
    let geom = g.geometry()?;
    let pose = PoseVector::from_array(pose);
    pose.validate().map_err(anyhow::Error::from)?;
    let legs = inverse_kinematics(&pose, &geom);
    let mut out = String::new();
    for (i, l) in legs.lengths.iter().enumerate() {
        let _ = writeln!(out, "leg {}: {l:.6}", i + 1);
    }
    let _ = writeln!(out, "valid: {}", legs.valid);
    Ok(Outcome {
        stdout: out,
        code: if legs.valid { EXIT_OK } else { EXIT_WARNING },
    })
}

pub fn cmd_fk(g: &Globals, legs: [f64; 6], guess: Option<[f64; 6]>) -> CmdResult {
    let geom = g.geometry()?;
    let legs = LegLengths::new(legs, &geom);
    let guess = guess.map(PoseVector::from_array).unwrap_or_default();
    let pose = forward_kinematics(&legs, &geom, &guess).map_err(anyhow::Error::from)?;
    let mut out = String::new();
    for (name, v) in ["x", "y", "z", "alpha", "beta", "gamma"].iter().zip(pose.to_array()) {
        let _ = writeln!(out, "{name}: {v:.9}");
    }
    let _ = writeln!(out, "valid: {}", legs.valid);
    Ok(Outcome {
        stdout: out,
        code: if legs.valid { EXIT_OK } else { EXIT_WARNING },
    })
}

/// Runs a scenario and writes the dataset CSV to `--output`.
pub fn cmd_simulate(g: &Globals, scenario: &Path) -> CmdResult {
    let (s, geom) = g.scenario(scenario)?;
    let out = g.output("simulate")?;
    let truth = perturb_geometry(&geom, &s.perturbation).map_err(anyhow::Error::from)?;
    let targets = generate_random_poses(s.pose_count, &geom, s.seed).map_err(anyhow::Error::from)?;
    let ds = build_dataset(&targets, &geom, &truth, &s.noise);
    for (id, ex) in ds.exclusions() {
        warn!("pose {id} excluded: {ex}");
    }
    write(out, &write_dataset(&ds))?;
    Ok(Outcome::ok(format!(
        "wrote {} poses ({} excluded) to {}\n",
        ds.len(),
        ds.exclusions().len(),
        out.display()
    )))
}

/// File names written by `calibrate` inside the `--output` directory.
pub const MODEL_FILE: &str = "model.toml";
pub const PREDICTIONS_FILE: &str = "predictions.csv";
pub const REPORT_CSV: &str = "report.csv";
pub const REPORT_TXT: &str = "report.txt";
pub const DH_TABLE: &str = "dh_chains.csv";

/// What `calibrate` did, for callers that need more than the printed text.
#[derive(Debug, Clone)]
pub struct CalibrateSummary {
    pub outliers: Vec<u32>,
    pub predictions: Vec<PredictionRow>,
    pub uncompensated: ErrorReport,
    /// Errors left after the model explains what it can, over kept poses.
    pub compensated: ErrorReport,
}

pub fn calibrate(
    g: &Globals,
    dataset: &Path,
    option: CompensationOption,
) -> Result<(Outcome, CalibrateSummary), CliError> {
    let geom = g.geometry()?;
    let dir = g.output("calibrate")?.to_path_buf();
    let mut ds = parse_dataset(&read(dataset)?)
        .with_context(|| format!("dataset {}", dataset.display()))?;

    let mut outliers = Vec::new();
    for (id, nd) in detect_outliers(&ds, &geom) {
        if ds.is_excluded(id) {
            continue;
        }
        warn!("pose {id} excluded as near-singular (normalized det {nd:e})");
        ds.exclude(id, Exclusion::new(ExclusionKind::Outlier, format!("normalized det {nd:e}")))
            .map_err(calibration_failure)?;
        outliers.push(id);
    }
    let usable = ds.usable();
    if usable.len() < 2 {
        return Err(insufficient(format!(
            "need at least 2 usable observations, have {}",
            usable.len()
        )));
    }
    let baseline = hexcal::metrics::build_report(&ds, None).map_err(insufficient)?;

    let model = fit_model(&ds, &geom, option).map_err(calibration_failure)?;
    let targets: Vec<(u32, PoseVector)> = usable.iter().map(|(id, t, _)| (*id, *t)).collect();
    let predicted = apply_model(&model, &targets, &geom).map_err(calibration_failure)?;
    let filtered = filter_workspace(&predicted, &geom);
    let mut drop_reason: BTreeMap<u32, String> = BTreeMap::new();
    for d in &filtered.dropped {
        warn!("prediction for pose {} dropped: {}", d.pose_id, d.reason);
        drop_reason.insert(d.pose_id, d.reason.clone());
    }
    let rows: Vec<PredictionRow> = targets
        .iter()
        .zip(&predicted)
        .map(|((id, t), (_, p))| PredictionRow {
            pose_id: *id,
            target: *t,
            predicted: *p,
            dropped: drop_reason.get(id).cloned(),
        })
        .collect();

    let residuals: Vec<[f64; 6]> = model_residuals(&model, &ds, &geom)
        .map_err(calibration_failure)?
        .into_iter()
        .filter(|(id, _)| !drop_reason.contains_key(id))
        .map(|(_, e)| e)
        .collect();
    if residuals.is_empty() {
        return Err(insufficient("every prediction left the workspace"));
    }
    let compensated = report_from_errors(&residuals, Some(&baseline)).map_err(insufficient)?;

    let chains: Vec<_> = usable
        .iter()
        .map(|(id, t, _)| extract_all_chains(t, &geom).map(|c| (*id, c)))
        .collect::<Result<_, _>>()
        .map_err(anyhow::Error::from)?;

    let title = format!(
        "option {} ({} poses used, {} predictions dropped, compensated = model residual)",
        option.number(),
        usable.len(),
        filtered.dropped.len()
    );
    let text = ErrorReport::render_comparison_text(&title, &baseline, &compensated);
    write(&dir.join(MODEL_FILE), &model_to_toml(&model))?;
    write(&dir.join(PREDICTIONS_FILE), &write_predictions(&rows))?;
    write(&dir.join(REPORT_CSV), &ErrorReport::comparison_csv(&baseline, &compensated))?;
    write(&dir.join(REPORT_TXT), &text)?;
    write(&dir.join(DH_TABLE), &write_dh_table(&chains))?;
    info!("calibration outputs written to {}", dir.display());

    Ok((
        Outcome::ok(text),
        CalibrateSummary {
            outliers,
            predictions: rows,
            uncompensated: baseline,
            compensated,
        },
    ))
}

pub fn cmd_calibrate(g: &Globals, dataset: &Path, option: CompensationOption) -> CmdResult {
    calibrate(g, dataset, option).map(|(o, _)| o)
}

fn is_dataset(text: &str) -> bool {
    text.lines().next().map(|h| h.trim() == DATASET_HEADER.join(",")).unwrap_or(false)
}

/// Baseline from a report CSV or, when given a dataset, from its usable
/// observations. A dataset also pins the expected targets per pose id.
fn load_baseline(path: &Path) -> anyhow::Result<(ErrorReport, Option<CalibrationDataset>)> {
    let text = read(path)?;
    if is_dataset(&text) {
        let ds = parse_dataset(&text).with_context(|| format!("baseline {}", path.display()))?;
        let rep = hexcal::metrics::build_report(&ds, None)?;
        Ok((rep, Some(ds)))
    } else {
        let rep = ErrorReport::from_csv(&text).with_context(|| format!("baseline {}", path.display()))?;
        Ok((rep, None))
    }
}

/// Re-measures the kept predictions on the scenario's machine and reports the
/// errors against the original targets.
pub fn verify(
    g: &Globals,
    predictions: &Path,
    scenario: &Path,
    baseline: &Path,
) -> Result<(Outcome, ErrorReport), CliError> {
    let (s, geom) = g.scenario(scenario)?;
    let rows = parse_predictions(&read(predictions)?)
        .with_context(|| format!("predictions {}", predictions.display()))?;
    let (base, base_ds) = load_baseline(baseline)?;
    if let Some(ds) = &base_ds {
        for r in &rows {
            let o = ds.observations().iter().find(|o| o.pose_id == r.pose_id);
            match o {
                None => {
                    return Err(anyhow::anyhow!("pose_id {} is not in the baseline dataset", r.pose_id).into())
                }
                Some(o) if o.target != r.target => {
                    return Err(anyhow::anyhow!("pose_id {} has a different target in the baseline dataset", r.pose_id).into())
                }
                _ => {}
            }
        }
    }
    let truth = perturb_geometry(&geom, &s.perturbation).map_err(anyhow::Error::from)?;
    let kept: Vec<(u32, PoseVector)> = rows
        .iter()
        .filter(|r| r.dropped.is_none())
        .map(|r| (r.pose_id, r.predicted))
        .collect();
    let targets: BTreeMap<u32, PoseVector> = rows.iter().map(|r| (r.pose_id, r.target)).collect();
    let measured = measure_poses(&kept, &geom, &truth, &s.noise, MeasurementPass::Verification);
    for (id, ex) in measured.exclusions() {
        warn!("pose {id} excluded: {ex}");
    }
    let errors: Vec<(u32, [f64; 6])> = measured
        .usable()
        .iter()
        .map(|(id, _, m)| (*id, error_vector(&targets[id], m)))
        .collect();
    let flat: Vec<[f64; 6]> = errors.iter().map(|(_, e)| *e).collect();
    let report = report_from_errors(&flat, Some(&base)).map_err(insufficient)?;
    let text = ErrorReport::render_comparison_text(
        &format!("verification ({} poses re-measured)", flat.len()),
        &base,
        &report,
    );
    if let Some(out) = &g.output {
        write(out, &ErrorReport::comparison_csv(&base, &report))?;
    }
    Ok((Outcome::ok(text), report))
}

pub fn cmd_verify(g: &Globals, predictions: &Path, scenario: &Path, baseline: &Path) -> CmdResult {
    verify(g, predictions, scenario, baseline).map(|(o, _)| o)
}

/// Report over a dataset CSV or a signed per-pose error CSV.
pub fn cmd_report(g: &Globals, input: &Path, baseline: Option<&Path>, plot: Option<&Path>) -> CmdResult {
    let text = read(input)?;
    let errors: Vec<(u32, [f64; 6])> = if is_dataset(&text) {
        let ds = parse_dataset(&text).with_context(|| format!("dataset {}", input.display()))?;
        ds.usable().iter().map(|(id, t, m)| (*id, error_vector(t, m))).collect()
    } else {
        parse_error_table(&text).with_context(|| format!("error table {}", input.display()))?
    };
    if errors.is_empty() {
        return Err(anyhow::anyhow!("{} has no usable rows", input.display()).into());
    }
    let base = baseline.map(load_baseline).transpose()?.map(|(r, _)| r);
    let flat: Vec<[f64; 6]> = errors.iter().map(|(_, e)| *e).collect();
    let report = report_from_errors(&flat, base.as_ref()).map_err(anyhow::Error::from)?;
    let (stdout, csv) = match &base {
        Some(b) => (
            ErrorReport::render_comparison_text("report", b, &report),
            ErrorReport::comparison_csv(b, &report),
        ),
        None => (report.render_text("report"), report.to_csv()),
    };
    if let Some(out) = &g.output {
        write(out, &csv)?;
    }
    if let Some(p) = plot {
        write(p, &write_error_table(&errors, true))?;
    }
    Ok(Outcome::ok(stdout))
}
