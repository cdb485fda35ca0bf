//! Error ranges, RMSE magnitudes and improvement percentages.

use std::fmt::Write as _;

use thiserror::Error;

use crate::calibration::CalibrationDataset;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("no values to summarize")]
    EmptyInput,
    #[error("baseline magnitude is zero, improvement is undefined")]
    ZeroBaseline,
    #[error("dataset has no usable observations")]
    EmptyDataset,
    #[error("report csv: {0}")]
    Parse(String),
}

/// Column labels shared by the report and per-pose error tables.
pub const PARAM_COLUMNS: [&str; 6] = ["x_tran", "y_tran", "z_tran", "x_rot", "y_rot", "z_rot"];

/// Spread `max - min` of signed errors.
pub fn error_range(errors: &[f64]) -> Result<f64, MetricsError> {
    let first = *errors.first().ok_or(MetricsError::EmptyInput)?;
    let (lo, hi) = errors
        .iter()
        .fold((first, first), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    Ok(hi - lo)
}

/// `sqrt((r1^2 + r2^2 + r3^2) / 3)`.
pub fn rmse_magnitude(r1: f64, r2: f64, r3: f64) -> f64 {
    ((r1 * r1 + r2 * r2 + r3 * r3) / 3.0).sqrt()
}

pub fn improvement_pct(before: f64, after: f64) -> Result<f64, MetricsError> {
    if before == 0.0 {
        return Err(MetricsError::ZeroBaseline);
    }
    Ok(100.0 * (before - after) / before)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorReport {
    /// `x/y/z` ranges in mm, then roll/pitch/yaw ranges in deg.
    pub ranges: [f64; 6],
    pub position_magnitude: f64,
    pub orientation_magnitude: f64,
    pub improvement_position_pct: Option<f64>,
    pub improvement_orientation_pct: Option<f64>,
    pub pose_count: usize,
}

/// Magnitudes at or below this are treated as exact when the baseline is zero.
pub const EXACT_MAGNITUDE: f64 = 1e-9;

// A zero baseline with an (effectively) zero result counts as "no change"
// rather than undefined.
fn improvement_vs(before: f64, after: f64) -> Option<f64> {
    match improvement_pct(before, after) {
        Ok(v) => Some(v),
        Err(_) if after <= EXACT_MAGNITUDE => Some(0.0),
        Err(_) => None,
    }
}

impl ErrorReport {
    /// Report with magnitudes recomputed from the six ranges.
    pub fn from_ranges(ranges: [f64; 6], pose_count: usize, baseline: Option<&ErrorReport>) -> Self {
        let position_magnitude = rmse_magnitude(ranges[0], ranges[1], ranges[2]);
        let orientation_magnitude = rmse_magnitude(ranges[3], ranges[4], ranges[5]);
        let (ip, io) = match baseline {
            Some(b) => (
                improvement_vs(b.position_magnitude, position_magnitude),
                improvement_vs(b.orientation_magnitude, orientation_magnitude),
            ),
            None => (None, None),
        };
        Self {
            ranges,
            position_magnitude,
            orientation_magnitude,
            improvement_position_pct: ip,
            improvement_orientation_pct: io,
            pose_count,
        }
    }

    /// Rows for the report CSV. `suffix` is appended to the range and
    /// magnitude labels, e.g. `_compensated`.
    fn csv_rows(&self, suffix: &str, out: &mut String) {
        let r = &self.ranges;
        let _ = writeln!(
            out,
            "error_range{suffix},{},{},{},{},{},{}",
            r[0], r[1], r[2], r[3], r[4], r[5]
        );
        let _ = writeln!(
            out,
            "magnitude{suffix},{},,,{},,",
            self.position_magnitude, self.orientation_magnitude
        );
        let _ = writeln!(out, "pose_count{suffix},{},,,,,", self.pose_count);
    }

    fn improvement_row(&self, out: &mut String) {
        if self.improvement_position_pct.is_none() && self.improvement_orientation_pct.is_none() {
            return;
        }
        let f = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let _ = writeln!(
            out,
            "improvement_pct,{},,,{},,",
            f(self.improvement_position_pct),
            f(self.improvement_orientation_pct)
        );
    }

    /// CSV with header `metric,x_tran,y_tran,z_tran,x_rot,y_rot,z_rot`.
    pub fn to_csv(&self) -> String {
        let mut out = format!("metric,{}\n", PARAM_COLUMNS.join(","));
        self.csv_rows("", &mut out);
        self.improvement_row(&mut out);
        out
    }

    /// Uncompensated and compensated reports side by side, as in a before/after table.
    pub fn comparison_csv(baseline: &ErrorReport, compensated: &ErrorReport) -> String {
        let mut out = format!("metric,{}\n", PARAM_COLUMNS.join(","));
        baseline.csv_rows("_uncompensated", &mut out);
        compensated.csv_rows("_compensated", &mut out);
        compensated.improvement_row(&mut out);
        out
    }

    /// Parses a report written by [`ErrorReport::to_csv`] or the uncompensated
    /// half of [`ErrorReport::comparison_csv`].
    pub fn from_csv(text: &str) -> Result<Self, MetricsError> {
        let mut ranges = None;
        let mut count = None;
        for (lineno, line) in text.lines().enumerate().skip(1) {
            let cells: Vec<&str> = line.split(',').collect();
            let parse = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| MetricsError::Parse(format!("line {}: `{s}`: {e}", lineno + 1)))
            };
            match cells[0] {
                "error_range" | "error_range_uncompensated" => {
                    if cells.len() != 7 {
                        return Err(MetricsError::Parse(format!(
                            "line {}: expected 7 cells, found {}",
                            lineno + 1,
                            cells.len()
                        )));
                    }
                    let mut r = [0.0; 6];
                    for k in 0..6 {
                        r[k] = parse(cells[k + 1])?;
                    }
                    ranges = Some(r);
                }
                "pose_count" | "pose_count_uncompensated" => {
                    count = Some(parse(cells.get(1).copied().unwrap_or(""))? as usize);
                }
                _ => {}
            }
        }
        let ranges = ranges.ok_or_else(|| MetricsError::Parse("no error_range row".into()))?;
        Ok(Self::from_ranges(ranges, count.unwrap_or(0), None))
    }

    /// Aligned plain-text table, full precision and 2 decimals.
    pub fn render_text(&self, title: &str) -> String {
        render_table(title, &[("", self)], self)
    }

    pub fn render_comparison_text(title: &str, baseline: &ErrorReport, compensated: &ErrorReport) -> String {
        render_table(
            title,
            &[("uncompensated", baseline), ("compensated", compensated)],
            compensated,
        )
    }
}

fn render_table(title: &str, sections: &[(&str, &ErrorReport)], last: &ErrorReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{title}");
    let _ = write!(out, "{:<44}", "parameter");
    for c in PARAM_COLUMNS {
        let _ = write!(out, "{c:>16}");
    }
    out.push('\n');
    let label = |base: &str, sfx: &str| {
        if sfx.is_empty() {
            base.to_string()
        } else {
            format!("{base} - {sfx}")
        }
    };
    for (sfx, r) in sections {
        let _ = write!(out, "{:<44}", label("error range", sfx));
        for v in r.ranges {
            let _ = write!(out, "{v:>16.2}");
        }
        out.push('\n');
        let _ = write!(out, "{:<44}", label("error range (full)", sfx));
        for v in r.ranges {
            let _ = write!(out, "{v:>16.9}");
        }
        out.push('\n');
        let _ = writeln!(
            out,
            "{:<44}{:>16.2}{:>32}{:>16.2}",
            label("magnitude of errors", sfx),
            r.position_magnitude,
            "",
            r.orientation_magnitude
        );
        let _ = writeln!(
            out,
            "{:<44}{:>16.9}{:>32}{:>16.9}",
            label("magnitude of errors (full)", sfx),
            r.position_magnitude,
            "",
            r.orientation_magnitude
        );
        let _ = writeln!(out, "{:<44}{:>16}", label("poses", sfx), r.pose_count);
    }
    if last.improvement_position_pct.is_some() || last.improvement_orientation_pct.is_some() {
        let f = |v: Option<f64>, prec: usize| match v {
            Some(x) => format!("{x:.prec$}%"),
            None => "n/a".to_string(),
        };
        let _ = writeln!(
            out,
            "{:<44}{:>16}{:>32}{:>16}",
            "magnitude of improvement",
            f(last.improvement_position_pct, 1),
            "",
            f(last.improvement_orientation_pct, 1)
        );
        let _ = writeln!(
            out,
            "{:<44}{:>16}{:>32}{:>16}",
            "magnitude of improvement (full)",
            f(last.improvement_position_pct, 6),
            "",
            f(last.improvement_orientation_pct, 6)
        );
    }
    out
}

/// Report over a set of per-pose error vectors.
pub fn report_from_errors(
    errors: &[[f64; 6]],
    baseline: Option<&ErrorReport>,
) -> Result<ErrorReport, MetricsError> {
    if errors.is_empty() {
        return Err(MetricsError::EmptyDataset);
    }
    let mut ranges = [0.0; 6];
    for (k, r) in ranges.iter_mut().enumerate() {
        let col: Vec<f64> = errors.iter().map(|e| e[k]).collect();
        *r = error_range(&col)?;
    }
    Ok(ErrorReport::from_ranges(ranges, errors.len(), baseline))
}

/// Report over the usable (non-excluded, measured) observations of a dataset.
pub fn build_report(
    ds: &CalibrationDataset,
    baseline: Option<&ErrorReport>,
) -> Result<ErrorReport, MetricsError> {
    let errors: Vec<[f64; 6]> = ds
        .usable()
        .iter()
        .map(|(_, t, m)| crate::calibration::error_vector(t, m))
        .collect();
    report_from_errors(&errors, baseline)
}
