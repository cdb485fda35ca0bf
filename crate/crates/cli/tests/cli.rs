use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use hexcal::calibration::{CalibrationDataset, PoseObservation};
use hexcal::geometry::PoseVector;
use hexcal::io::{parse_dataset, parse_predictions, write_dataset, write_error_table};
use hexcal::metrics::ErrorReport;

fn hexcal(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hexcal"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn configs(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(name)
        .display()
        .to_string()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn leg_values(text: &str) -> Vec<f64> {
    text.lines()
        .filter(|l| l.starts_with("leg "))
        .map(|l| l.rsplit(' ').next().unwrap().parse().unwrap())
        .collect()
}

#[test]
fn ik_home_prints_six_equal_lengths() {
    let o = hexcal(&["--geometry", &configs("reference_geometry.toml"), "ik", "0", "0", "0", "0", "0", "0"]);
    assert_eq!(o.status.code(), Some(0));
    let legs = leg_values(&stdout(&o));
    assert_eq!(legs.len(), 6);
    assert!(legs.iter().all(|l| *l == legs[0]));
    assert!(stdout(&o).contains("valid: true"));
}

#[test]
fn ik_over_extended_pose_warns() {
    let o = hexcal(&["ik", "0", "0", "200", "0", "0", "0"]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(leg_values(&stdout(&o)).len(), 6);
    assert!(stdout(&o).contains("valid: false"));
}

#[test]
fn ik_fk_round_trip_through_the_binary() {
    let pose = ["12.5", "-7.25", "10", "3", "-4.5", "6"];
    let mut args = vec!["ik"];
    args.extend(pose);
    let legs: Vec<String> = leg_values(&stdout(&hexcal(&args)))
        .iter()
        .map(|l| format!("{l:.6}"))
        .collect();
    let mut args = vec!["fk"];
    args.extend(legs.iter().map(String::as_str));
    let o = hexcal(&args);
    assert_eq!(o.status.code(), Some(0));
    let got: Vec<f64> = stdout(&o)
        .lines()
        .take(6)
        .map(|l| l.rsplit(' ').next().unwrap().parse().unwrap())
        .collect();
    for (g, e) in got.iter().zip(pose) {
        // legs are printed to 1e-6 mm
        assert!((g - e.parse::<f64>().unwrap()).abs() < 1e-4, "{got:?}");
    }
}

#[test]
fn malformed_input_exits_1() {
    assert_eq!(hexcal(&["ik", "0", "0", "zero", "0", "0", "0"]).status.code(), Some(1));
    assert_eq!(hexcal(&["ik", "0", "0"]).status.code(), Some(1));
    assert_eq!(hexcal(&["--geometry", "/nonexistent.toml", "ik", "0", "0", "0", "0", "0", "0"]).status.code(), Some(1));
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "pose_count = 3\nseed = 1\n[noise]\nposition_sigma = -2.0\n").unwrap();
    let o = hexcal(&["simulate", "--scenario", p(&bad), "--output", p(&dir.path().join("x.csv"))]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("position_sigma"));
    assert!(!dir.path().join("x.csv").exists());
}

#[test]
fn perfect_scenario_targets_equal_measurements() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("ds.csv");
    let o = hexcal(&["simulate", "--scenario", &configs("perfect.toml"), "--output", p(&out)]);
    assert_eq!(o.status.code(), Some(0));
    let text = fs::read_to_string(&out).unwrap();
    for line in text.lines().skip(1) {
        let c: Vec<&str> = line.split(',').collect();
        assert_eq!(&c[1..7], &c[7..13], "{line}");
    }
    let ds = parse_dataset(&text).unwrap();
    assert_eq!(ds.len(), 34);
}

#[test]
fn simulate_is_idempotent_and_seed_override_changes_output() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str, seed: Option<&str>| {
        let out = dir.path().join(name);
        let mut args = vec!["simulate", "--scenario"];
        let sc = configs("perturbed.toml");
        args.push(&sc);
        args.extend(["--output", p(&out)]);
        if let Some(s) = seed {
            args.extend(["--seed", s]);
        }
        assert_eq!(hexcal(&args).status.code(), Some(0));
        fs::read(out).unwrap()
    };
    let a = run("a.csv", None);
    assert_eq!(a, run("b.csv", None));
    assert_ne!(a, run("c.csv", Some("3")));
}

#[test]
fn calibrate_pipeline_and_option_1_2_share_positions() {
    let dir = tempfile::tempdir().unwrap();
    let ds = dir.path().join("ds.csv");
    let sc = configs("perturbed.toml");
    assert_eq!(hexcal(&["simulate", "--scenario", &sc, "--output", p(&ds)]).status.code(), Some(0));
    let before = fs::read(&ds).unwrap();
    let mut preds = Vec::new();
    for opt in ["1", "2", "3"] {
        let od = dir.path().join(format!("o{opt}"));
        let o = hexcal(&["calibrate", "--dataset", p(&ds), "--option", opt, "--output", p(&od)]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        assert!(stdout(&o).contains("magnitude of errors"));
        for f in ["model.toml", "predictions.csv", "report.csv", "report.txt", "dh_chains.csv"] {
            assert!(od.join(f).exists(), "{f}");
        }
        preds.push(parse_predictions(&fs::read_to_string(od.join("predictions.csv")).unwrap()).unwrap());
        let rep = ErrorReport::from_csv(&fs::read_to_string(od.join("report.csv")).unwrap()).unwrap();
        assert_eq!(rep.pose_count, 34);
    }
    // inputs are never modified
    assert_eq!(fs::read(&ds).unwrap(), before);
    for (a, b) in preds[0].iter().zip(&preds[1]) {
        assert_eq!(a.predicted.translation(), b.predicted.translation());
        assert_eq!(
            [a.predicted.alpha, a.predicted.beta, a.predicted.gamma],
            [a.target.alpha, a.target.beta, a.target.gamma]
        );
    }
    // option 3 in-sample residual is below the uncompensated magnitude
    let r3 = fs::read_to_string(dir.path().join("o3/report.csv")).unwrap();
    let mag = |tag: &str| -> f64 {
        r3.lines()
            .find(|l| l.starts_with(tag))
            .unwrap()
            .split(',')
            .nth(1)
            .unwrap()
            .parse()
            .unwrap()
    };
    assert!(mag("magnitude_compensated") < mag("magnitude_uncompensated"));

    let vo = dir.path().join("verify.csv");
    let o = hexcal(&[
        "verify", "--predictions", p(&dir.path().join("o3/predictions.csv")), "--scenario", &sc,
        "--baseline", p(&ds), "--output", p(&vo),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(fs::read_to_string(&vo).unwrap().contains("improvement_pct,"));
}

fn tiny_dataset(dir: &Path, n: u32, excluded_all_but: u32) -> PathBuf {
    let obs: Vec<_> = (1..=n)
        .map(|i| {
            let t = PoseVector::new(i as f64, 0.0, 0.0, 0.0, 0.0, 0.0);
            PoseObservation::new(i, t, PoseVector::new(i as f64 + 0.1, 0.0, 0.0, 0.0, 0.0, 0.0))
        })
        .collect();
    let mut ds = CalibrationDataset::new(obs).unwrap();
    for i in excluded_all_but + 1..=n {
        ds.exclude(i, hexcal::calibration::Exclusion::new(hexcal::calibration::ExclusionKind::OutOfRange, "test"))
            .unwrap();
    }
    let path = dir.join("tiny.csv");
    fs::write(&path, write_dataset(&ds)).unwrap();
    path
}

#[test]
fn calibrate_with_one_usable_pose_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let ds = tiny_dataset(dir.path(), 4, 1);
    let o = hexcal(&["calibrate", "--dataset", p(&ds), "--option", "3", "--output", p(&dir.path().join("o"))]);
    assert_eq!(o.status.code(), Some(3));
    assert_eq!(
        hexcal(&["calibrate", "--dataset", p(&ds), "--option", "4", "--output", "x"]).status.code(),
        Some(1)
    );
}

#[test]
fn verify_rejects_pose_id_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let ds = tiny_dataset(dir.path(), 4, 4);
    let od = dir.path().join("o");
    assert_eq!(
        hexcal(&["calibrate", "--dataset", p(&ds), "--option", "3", "--output", p(&od)]).status.code(),
        Some(0)
    );
    let other = dir.path().join("other");
    fs::create_dir(&other).unwrap();
    let ds3 = tiny_dataset(&other, 3, 3);
    let o = hexcal(&[
        "verify", "--predictions", p(&od.join("predictions.csv")), "--scenario", &configs("perfect.toml"),
        "--baseline", p(&ds3),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("pose_id 4"));
}

#[test]
fn verify_on_perfect_machine_reports_zero_improvement() {
    let dir = tempfile::tempdir().unwrap();
    let ds = dir.path().join("ds.csv");
    let sc = configs("perfect.toml");
    hexcal(&["simulate", "--scenario", &sc, "--output", p(&ds)]);
    let od = dir.path().join("o");
    hexcal(&["calibrate", "--dataset", p(&ds), "--option", "1", "--output", p(&od)]);
    let o = hexcal(&[
        "verify", "--predictions", p(&od.join("predictions.csv")), "--scenario", &sc, "--baseline",
        p(&od.join("report.csv")),
    ]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("0.000000%"));
}

// Error lists whose per-column ranges equal the given rows.
fn errors_with_ranges(r: [f64; 6]) -> Vec<(u32, [f64; 6])> {
    vec![(1, [0.0; 6]), (2, r), (3, r.map(|v| 0.5 * v))]
}

#[test]
fn report_reconstructs_table_shaped_errors() {
    let dir = tempfile::tempdir().unwrap();
    let base = dir.path().join("base.csv");
    let comp = dir.path().join("comp.csv");
    fs::write(&base, write_error_table(&errors_with_ranges([26.54, 16.67, 13.49, 8.27, 11.99, 12.59]), false)).unwrap();
    fs::write(&comp, write_error_table(&errors_with_ranges([20.25, 18.44, 14.01, 6.86, 10.29, 9.2]), false)).unwrap();
    let base_report = dir.path().join("base_report.csv");
    let o = hexcal(&["report", "--input", p(&base), "--output", p(&base_report)]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("19.70") && stdout(&o).contains("11.12"));
    let o = hexcal(&["report", "--input", p(&comp), "--baseline", p(&base_report)]);
    let out = stdout(&o);
    assert!(out.contains("17.76") && out.contains("8.90"), "{out}");
    assert!(out.contains("9.8%") && out.contains("19.9%"), "{out}");
}

#[test]
fn report_plot_csv_and_zero_input() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("e.csv");
    fs::write(&input, write_error_table(&[(1, [0.0; 6]), (2, [0.0; 6])], false)).unwrap();
    let plot = dir.path().join("plot.csv");
    let rep = dir.path().join("rep.csv");
    let o = hexcal(&["report", "--input", p(&input), "--plot", p(&plot), "--output", p(&rep)]);
    assert_eq!(o.status.code(), Some(0));
    let plot = fs::read_to_string(plot).unwrap();
    assert_eq!(plot.lines().next().unwrap(), "pose_id,x_tran,y_tran,z_tran,x_rot,y_rot,z_rot");
    let r = ErrorReport::from_csv(&fs::read_to_string(rep).unwrap()).unwrap();
    assert_eq!(r.ranges, [0.0; 6]);
    assert_eq!(r.position_magnitude, 0.0);

    let empty = dir.path().join("empty.csv");
    fs::write(&empty, "pose_id,x_tran,y_tran,z_tran,x_rot,y_rot,z_rot\n").unwrap();
    assert_eq!(hexcal(&["report", "--input", p(&empty)]).status.code(), Some(1));
}
