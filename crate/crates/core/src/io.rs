//! CSV and TOML file formats: datasets, predictions, fitted models, DH audit
//! tables and per-pose error tables.
//!
//! Floats are written with 9 significant digits (`%.9g`), records end in LF.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calibration::{
    AffineCorrection, CalibrationDataset, CalibrationError, CompensationModel, CompensationOption,
    DhCorrections, Exclusion, PoseObservation,
};
use crate::dh::{DhChain, DhParam};
use crate::geometry::{PoseVector, POSE_PARAM_NAMES};
use crate::metrics::PARAM_COLUMNS;

pub const DATASET_HEADER: [&str; 15] = [
    "pose_id", "tx", "ty", "tz", "ta", "tb", "tg", "mx", "my", "mz", "ma", "mb", "mg", "excluded",
    "reason",
];

pub const PREDICTION_HEADER: [&str; 15] = [
    "pose_id", "tx", "ty", "tz", "ta", "tb", "tg", "px", "py", "pz", "pa", "pb", "pg", "dropped",
    "reason",
];

pub const DH_HEADER: [&str; 7] = ["pose_id", "leg", "row_index", "theta_deg", "d_mm", "a_mm", "alpha_deg"];

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("line {line}: {message}")]
    Line { line: u64, message: String },
    #[error("unexpected header `{found}`, expected `{expected}`")]
    Header { expected: String, found: String },
    #[error(transparent)]
    Dataset(#[from] CalibrationError),
    #[error("model file: {0}")]
    Model(String),
}

fn line_err(line: u64, message: impl Into<String>) -> FormatError {
    FormatError::Line {
        line,
        message: message.into(),
    }
}

fn strip_fraction_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// C-style `%.9g`.
pub fn fmt_sig9(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    if !v.is_finite() {
        return v.to_string();
    }
    let sci = format!("{v:.8e}");
    let (mant, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..9).contains(&exp) {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{sign}{:02}", strip_fraction_zeros(mant), exp.abs())
    } else {
        let decimals = (8 - exp) as usize;
        strip_fraction_zeros(&format!("{v:.decimals$}")).to_string()
    }
}

fn writer() -> csv::Writer<Vec<u8>> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new())
}

fn finish(w: csv::Writer<Vec<u8>>) -> String {
    String::from_utf8(w.into_inner().expect("in-memory writer")).expect("utf-8 output")
}

fn write_row(w: &mut csv::Writer<Vec<u8>>, row: &[String]) {
    w.write_record(row).expect("in-memory writer");
}

fn pose_cells(p: &PoseVector) -> impl Iterator<Item = String> {
    p.to_array().into_iter().map(fmt_sig9)
}

struct Rows {
    records: Vec<(u64, csv::StringRecord)>,
}

fn read_rows(text: &str, header: &[&str]) -> Result<Rows, FormatError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(text.as_bytes());
    let found = rdr
        .headers()
        .map_err(|e| line_err(1, e.to_string()))?
        .iter()
        .map(str::trim)
        .collect::<Vec<_>>();
    if found != header {
        return Err(FormatError::Header {
            expected: header.join(","),
            found: found.join(","),
        });
    }
    let mut records = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            line_err(line, e.to_string())
        })?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.len() != header.len() {
            return Err(line_err(
                line,
                format!("expected {} fields, found {}", header.len(), rec.len()),
            ));
        }
        records.push((line, rec));
    }
    Ok(Rows { records })
}

fn cell_f64(line: u64, rec: &csv::StringRecord, i: usize, name: &str) -> Result<f64, FormatError> {
    let s = rec[i].trim();
    s.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| line_err(line, format!("{name}: `{s}` is not a finite number")))
}

fn cell_id(line: u64, rec: &csv::StringRecord) -> Result<u32, FormatError> {
    let s = rec[0].trim();
    s.parse()
        .map_err(|_| line_err(line, format!("pose_id: `{s}` is not a non-negative integer")))
}

fn cell_bool(line: u64, rec: &csv::StringRecord, i: usize, name: &str) -> Result<bool, FormatError> {
    match rec[i].trim() {
        "true" | "1" => Ok(true),
        "false" | "0" | "" => Ok(false),
        s => Err(line_err(line, format!("{name}: `{s}` is not true/false"))),
    }
}

fn cell_pose(
    line: u64,
    rec: &csv::StringRecord,
    start: usize,
    header: &[&str],
) -> Result<PoseVector, FormatError> {
    let mut v = [0.0; 6];
    for k in 0..6 {
        v[k] = cell_f64(line, rec, start + k, header[start + k])?;
    }
    Ok(PoseVector::from_array(v))
}

pub fn write_dataset(ds: &CalibrationDataset) -> String {
    let mut w = writer();
    write_row(&mut w, &DATASET_HEADER.map(String::from));
    for o in ds.observations() {
        let mut row = vec![o.pose_id.to_string()];
        row.extend(pose_cells(&o.target));
        match &o.measured {
            Some(m) => row.extend(pose_cells(m)),
            None => row.extend(std::iter::repeat_n(String::new(), 6)),
        }
        let ex = ds.exclusion(o.pose_id);
        row.push(ex.is_some().to_string());
        row.push(ex.map(|e| e.to_string()).unwrap_or_default());
        write_row(&mut w, &row);
    }
    finish(w)
}

pub fn parse_dataset(text: &str) -> Result<CalibrationDataset, FormatError> {
    let rows = read_rows(text, &DATASET_HEADER)?;
    let mut obs = Vec::new();
    let mut excluded = BTreeMap::new();
    for (line, rec) in &rows.records {
        let line = *line;
        let pose_id = cell_id(line, rec)?;
        let target = cell_pose(line, rec, 1, &DATASET_HEADER)?;
        let measured = if (7..13).all(|i| rec[i].trim().is_empty()) {
            None
        } else {
            Some(cell_pose(line, rec, 7, &DATASET_HEADER)?)
        };
        if cell_bool(line, rec, 13, "excluded")? {
            let reason = rec[14].trim();
            let ex = Exclusion::parse(reason)
                .ok_or_else(|| line_err(line, format!("reason: unknown exclusion `{reason}`")))?;
            excluded.insert(pose_id, ex);
        }
        obs.push(PoseObservation {
            pose_id,
            target,
            measured,
        });
    }
    Ok(CalibrationDataset::with_exclusions(obs, excluded)?)
}

/// One line of the predictions file.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRow {
    pub pose_id: u32,
    pub target: PoseVector,
    pub predicted: PoseVector,
    /// Why the prediction was left out of the workspace, if it was.
    pub dropped: Option<String>,
}

pub fn write_predictions(rows: &[PredictionRow]) -> String {
    let mut w = writer();
    write_row(&mut w, &PREDICTION_HEADER.map(String::from));
    for r in rows {
        let mut row = vec![r.pose_id.to_string()];
        row.extend(pose_cells(&r.target));
        row.extend(pose_cells(&r.predicted));
        row.push(r.dropped.is_some().to_string());
        row.push(r.dropped.clone().unwrap_or_default());
        write_row(&mut w, &row);
    }
    finish(w)
}

pub fn parse_predictions(text: &str) -> Result<Vec<PredictionRow>, FormatError> {
    let rows = read_rows(text, &PREDICTION_HEADER)?;
    let mut seen = std::collections::HashSet::new();
    rows.records
        .iter()
        .map(|(line, rec)| {
            let line = *line;
            let pose_id = cell_id(line, rec)?;
            if !seen.insert(pose_id) {
                return Err(line_err(line, format!("duplicate pose_id {pose_id}")));
            }
            let dropped = cell_bool(line, rec, 13, "dropped")?.then(|| rec[14].trim().to_string());
            Ok(PredictionRow {
                pose_id,
                target: cell_pose(line, rec, 1, &PREDICTION_HEADER)?,
                predicted: cell_pose(line, rec, 7, &PREDICTION_HEADER)?,
                dropped,
            })
        })
        .collect()
}

/// Per-pose error table, `pose_id,x_tran,...,z_rot`. With `absolute` set the
/// magnitudes are written, which is the form used for plotting.
pub fn write_error_table(rows: &[(u32, [f64; 6])], absolute: bool) -> String {
    let mut w = writer();
    let mut header = vec!["pose_id".to_string()];
    header.extend(PARAM_COLUMNS.map(String::from));
    write_row(&mut w, &header);
    for (id, e) in rows {
        let mut row = vec![id.to_string()];
        row.extend(e.iter().map(|v| fmt_sig9(if absolute { v.abs() } else { *v })));
        write_row(&mut w, &row);
    }
    finish(w)
}

pub fn parse_error_table(text: &str) -> Result<Vec<(u32, [f64; 6])>, FormatError> {
    let mut header = vec!["pose_id"];
    header.extend(PARAM_COLUMNS);
    let rows = read_rows(text, &header)?;
    rows.records
        .iter()
        .map(|(line, rec)| {
            let mut e = [0.0; 6];
            for k in 0..6 {
                e[k] = cell_f64(*line, rec, k + 1, header[k + 1])?;
            }
            Ok((cell_id(*line, rec)?, e))
        })
        .collect()
}

/// DH audit table, one line per `(pose, leg, row)`.
pub fn write_dh_table(chains: &[(u32, [DhChain; 6])]) -> String {
    let mut w = writer();
    write_row(&mut w, &DH_HEADER.map(String::from));
    for (id, legs) in chains {
        for chain in legs {
            for (i, r) in chain.rows.iter().enumerate() {
                let mut row = vec![id.to_string(), chain.leg_index.to_string(), i.to_string()];
                row.extend([r.theta, r.d, r.a, r.alpha_link].map(fmt_sig9));
                write_row(&mut w, &row);
            }
        }
    }
    finish(w)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PoseEntry {
    param: String,
    slope: f64,
    intercept: f64,
    degenerate: bool,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DhEntry {
    leg: usize,
    row: usize,
    param: String,
    slope: f64,
    intercept: f64,
    degenerate: bool,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    option: u8,
    #[serde(default)]
    pose: Vec<PoseEntry>,
    #[serde(default)]
    dh: Vec<DhEntry>,
}

/// Serializes a fitted model; floats keep full precision.
pub fn model_to_toml(model: &CompensationModel) -> String {
    let pose = model
        .pose_corrections
        .iter()
        .zip(POSE_PARAM_NAMES)
        .filter_map(|(c, name)| {
            c.map(|c| PoseEntry {
                param: name.to_string(),
                slope: c.slope,
                intercept: c.intercept,
                degenerate: c.degenerate,
            })
        })
        .collect();
    let mut dh = Vec::new();
    if let Some(corr) = &model.dh_corrections {
        for (leg, rows) in corr.iter().enumerate() {
            for (row, params) in rows.iter().enumerate() {
                for (p, c) in DhParam::ALL.iter().zip(params) {
                    dh.push(DhEntry {
                        leg,
                        row,
                        param: p.name().to_string(),
                        slope: c.slope,
                        intercept: c.intercept,
                        degenerate: c.degenerate,
                    });
                }
            }
        }
    }
    let file = ModelFile {
        option: model.option.number(),
        pose,
        dh,
    };
    toml::to_string(&file).expect("model serializes")
}

pub fn parse_model(text: &str) -> Result<CompensationModel, FormatError> {
    let bad = |m: String| FormatError::Model(m);
    let f: ModelFile = toml::from_str(text).map_err(|e| bad(e.to_string()))?;
    let option = CompensationOption::from_number(f.option)
        .ok_or_else(|| bad(format!("option must be 1, 2 or 3, got {}", f.option)))?;
    let mut pose_corrections = [None; 6];
    for e in f.pose {
        let k = POSE_PARAM_NAMES
            .iter()
            .position(|n| *n == e.param)
            .ok_or_else(|| bad(format!("unknown pose parameter `{}`", e.param)))?;
        pose_corrections[k] = Some(AffineCorrection {
            slope: e.slope,
            intercept: e.intercept,
            degenerate: e.degenerate,
        });
    }
    let dh_corrections = if f.dh.is_empty() {
        None
    } else {
        let mut out: Box<DhCorrections> = Box::default();
        let mut filled = [[[false; 4]; 6]; 6];
        for e in f.dh {
            let p = DhParam::from_name(&e.param)
                .ok_or_else(|| bad(format!("unknown DH parameter `{}`", e.param)))?;
            if e.leg >= 6 || e.row >= 6 {
                return Err(bad(format!("DH entry leg {} row {} out of range", e.leg, e.row)));
            }
            let j = DhParam::ALL.iter().position(|q| *q == p).expect("listed");
            out[e.leg][e.row][j] = AffineCorrection {
                slope: e.slope,
                intercept: e.intercept,
                degenerate: e.degenerate,
            };
            filled[e.leg][e.row][j] = true;
        }
        if filled.iter().flatten().flatten().any(|f| !f) {
            return Err(bad("DH corrections must cover every leg, row and parameter".into()));
        }
        Some(out)
    };
    Ok(CompensationModel {
        option,
        dh_corrections,
        pose_corrections,
    })
}
