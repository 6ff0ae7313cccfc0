//! End-to-end tests of the `lorafind` binary: each test spawns the real
//! executable and checks its exit status, stdout/stderr, and file artifacts.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use lorafind::geo::{GeoPoint, LocalPoint};
use lorafind::multilat::{write_datapoints_csv, Datapoint};
use lorafind::run::RunConfig;
use lorafind::signal::{expected_esp, rssi_from_esp_snr, vertical_angle_deg};
use lorafind::{AntennaModel, PathLossModel};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_lorafind"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary should spawn")
}

fn stdout_json(out: &Output) -> serde_json::Value {
    assert!(
        out.status.success(),
        "expected success, got {:?}\nstderr: {}",
        out.status,
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("stdout should be JSON")
}

#[test]
fn simulate_writes_artifacts_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let out_path = dir.path().join("run");
    let out = run(&[
        "simulate",
        "--preset",
        "discrete-1drone",
        "--seed",
        "3",
        "--out-dir",
        out_path.to_str().unwrap(),
    ]);
    let summary = stdout_json(&out);

    for name in ["events.ndjson", "trajectory.csv", "summary.json"] {
        assert!(out_path.join(name).is_file(), "missing artifact {name}");
    }
    // The preset has no geodetic origin, so no GeoJSON must appear.
    assert!(
        !out_path.join("trajectory.geojson").exists(),
        "GeoJSON must only be written when an origin is configured"
    );

    // Stdout and summary.json carry the same result.
    let on_disk: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_path.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary, on_disk);
    assert_eq!(summary["seed"], 3);
    assert!(summary["error_m"].as_f64().unwrap().is_finite());
    assert!(summary["flight_time_s"].as_f64().unwrap() > 0.0);
}

#[test]
fn simulate_with_origin_emits_geojson() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig::preset("discrete-1drone").unwrap();
    cfg.world.origin = Some(GeoPoint::new(45.0, 7.6, 240.0).unwrap());
    let cfg_path = dir.path().join("with-origin.json");
    fs::write(&cfg_path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();

    let out_path = dir.path().join("run");
    let out = run(&[
        "simulate",
        "--config",
        cfg_path.to_str().unwrap(),
        "--seed",
        "3",
        "--out-dir",
        out_path.to_str().unwrap(),
    ]);
    stdout_json(&out);

    let geojson: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_path.join("trajectory.geojson")).unwrap())
            .unwrap();
    assert_eq!(geojson["type"], "FeatureCollection");
    let features = geojson["features"].as_array().unwrap();
    // One track per drone plus the final-estimate point.
    assert!(features.len() >= 2, "features: {}", features.len());
    assert!(features
        .iter()
        .any(|f| f["properties"]["kind"] == "final_estimate"));
}

#[test]
fn campaign_outputs_are_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let mut artifacts: Vec<(Vec<u8>, Vec<u8>, Vec<u8>)> = Vec::new();
    for pass in 0..2 {
        let out_path = dir.path().join(format!("pass-{pass}"));
        let out = run(&[
            "campaign",
            "--preset",
            "discrete-3drone",
            "--seed",
            "11",
            "--trials",
            "5",
            "--out-dir",
            out_path.to_str().unwrap(),
        ]);
        assert!(
            out.status.success(),
            "stderr: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        artifacts.push((
            fs::read(out_path.join("trials.csv")).unwrap(),
            fs::read(out_path.join("stats.json")).unwrap(),
            out.stdout.clone(),
        ));
    }
    assert_eq!(artifacts[0].0, artifacts[1].0, "trials.csv differs");
    assert_eq!(artifacts[0].1, artifacts[1].1, "stats.json differs");
    assert_eq!(artifacts[0].2, artifacts[1].2, "stdout differs");

    let csv = String::from_utf8(artifacts[0].0.clone()).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next(),
        Some("trial,seed,error_m,flight_time_s,n_datapoints")
    );
    assert_eq!(lines.count(), 5, "one row per requested trial");

    let stats: serde_json::Value = serde_json::from_slice(&artifacts[0].1).unwrap();
    assert_eq!(stats["seed0"], 11);
    assert_eq!(stats["stats"]["n_trials"], 5);
}

/// Writes a characterization CSV sampled exactly from the reference ESP
/// model (no noise) and returns its path.
fn noiseless_characterization_csv(dir: &Path) -> std::path::PathBuf {
    let model = PathLossModel::esp_characterization();
    let antenna = AntennaModel::default();
    let mut body = String::from("distance_m,theta_deg,rssi_dbm,snr_db\n");
    for i in 0..60 {
        // Distances log-spaced over 10 m .. 1 km, all at zero elevation angle.
        let d = 10.0 * 100.0f64.powf(i as f64 / 59.0);
        let esp = expected_esp(d, 0.0, &model, &antenna).unwrap();
        let rssi = rssi_from_esp_snr(esp, 7.5);
        body.push_str(&format!("{d},0,{rssi},7.5\n"));
    }
    let path = dir.join("characterization.csv");
    fs::write(&path, body).unwrap();
    path
}

#[test]
fn fit_recovers_reference_coefficients_from_noiseless_data() {
    let dir = tempfile::tempdir().unwrap();
    let csv = noiseless_characterization_csv(dir.path());
    let report_path = dir.path().join("fit.json");
    let out = run(&[
        "fit",
        csv.to_str().unwrap(),
        "--out",
        report_path.to_str().unwrap(),
    ]);
    let report = stdout_json(&out);

    let a = report["path_loss"]["a"].as_f64().unwrap();
    let b = report["path_loss"]["b"].as_f64().unwrap();
    assert_eq!(report["path_loss"]["form"], "exponential");
    assert!((a - 0.1973).abs() < 1e-6, "a = {a}");
    assert!((b - -0.0902).abs() < 1e-6, "b = {b}");
    assert!(report["rms_residual_m"].as_f64().unwrap() < 1e-6);

    // --out writes the same report that went to stdout.
    let on_disk: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&report_path).unwrap()).unwrap();
    assert_eq!(report, on_disk);
}

#[test]
fn linear_fit_has_larger_residual_than_exponential() {
    let dir = tempfile::tempdir().unwrap();
    let csv = noiseless_characterization_csv(dir.path());
    let exp = stdout_json(&run(&["fit", csv.to_str().unwrap()]));
    let lin = stdout_json(&run(&["fit", csv.to_str().unwrap(), "--form", "linear"]));
    assert_eq!(lin["path_loss"]["form"], "linear");
    let exp_rms = exp["rms_residual_m"].as_f64().unwrap();
    let lin_rms = lin["rms_residual_m"].as_f64().unwrap();
    assert!(
        lin_rms > 10.0 * exp_rms.max(1e-9),
        "linear rms {lin_rms} should exceed exponential rms {exp_rms} on a wide range"
    );
}

#[test]
fn estimate_recovers_truth_from_noiseless_datapoints() {
    let dir = tempfile::tempdir().unwrap();
    let truth = LocalPoint::new(60.0, -45.0, 0.0);
    let model = PathLossModel::esp_characterization();
    let antenna = AntennaModel::default();
    let receivers = [
        LocalPoint::new(-150.0, -120.0, 25.0),
        LocalPoint::new(210.0, -80.0, 25.0),
        LocalPoint::new(30.0, 180.0, 25.0),
        LocalPoint::new(-60.0, 90.0, 40.0),
        LocalPoint::new(160.0, 120.0, 40.0),
    ];
    let points: Vec<Datapoint> = receivers
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let h = truth.horizontal_distance_to(r);
            let theta = vertical_angle_deg(h, r.up - truth.up);
            let esp = expected_esp(truth.distance_to(r), theta, &model, &antenna).unwrap();
            Datapoint {
                msg_id: i as u64,
                source_id: format!("gw-{i}"),
                receiver_pos: *r,
                esp_dbm: esp,
                low_confidence: false,
            }
        })
        .collect();
    let csv_path = dir.path().join("points.csv");
    let mut buf = Vec::new();
    write_datapoints_csv(&mut buf, &points).unwrap();
    fs::write(&csv_path, buf).unwrap();

    let report = stdout_json(&run(&["estimate", csv_path.to_str().unwrap()]));
    let east = report["position"]["east_m"].as_f64().unwrap();
    let north = report["position"]["north_m"].as_f64().unwrap();
    let err = ((east - 60.0).powi(2) + (north - -45.0).powi(2)).sqrt();
    assert!(err < 0.1, "error = {err} m");
    assert_eq!(report["converged"], true);
    assert_eq!(report["n_points"], 5);
    assert!(report.get("geodetic").is_none(), "no origin configured");
}

#[test]
fn estimate_reports_geodetic_position_when_config_has_origin() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig::preset("discrete-1drone").unwrap();
    cfg.world.origin = Some(GeoPoint::new(45.0, 7.6, 240.0).unwrap());
    let cfg_path = dir.path().join("with-origin.json");
    fs::write(&cfg_path, serde_json::to_string(&cfg).unwrap()).unwrap();

    // Symmetric square of receivers around the origin of the local frame:
    // identical ESPs put the estimate at the centroid.
    let model = PathLossModel::esp_characterization();
    let antenna = AntennaModel::default();
    let esp = {
        let h = 100.0f64.hypot(100.0);
        let theta = vertical_angle_deg(h, 30.0);
        expected_esp(h.hypot(30.0), theta, &model, &antenna).unwrap()
    };
    let points: Vec<Datapoint> = [
        (100.0, 100.0),
        (-100.0, 100.0),
        (-100.0, -100.0),
        (100.0, -100.0),
    ]
    .iter()
    .enumerate()
    .map(|(i, &(e, n))| Datapoint {
        msg_id: i as u64,
        source_id: format!("gw-{i}"),
        receiver_pos: LocalPoint::new(e, n, 30.0),
        esp_dbm: esp,
        low_confidence: false,
    })
    .collect();
    let csv_path = dir.path().join("points.csv");
    let mut buf = Vec::new();
    write_datapoints_csv(&mut buf, &points).unwrap();
    fs::write(&csv_path, buf).unwrap();

    let report = stdout_json(&run(&[
        "estimate",
        csv_path.to_str().unwrap(),
        "--config",
        cfg_path.to_str().unwrap(),
    ]));
    let east = report["position"]["east_m"].as_f64().unwrap();
    let north = report["position"]["north_m"].as_f64().unwrap();
    assert!(east.abs() < 0.1 && north.abs() < 0.1, "({east}, {north})");
    let lat = report["geodetic"]["lat"].as_f64().unwrap();
    let lon = report["geodetic"]["lon"].as_f64().unwrap();
    assert!((lat - 45.0).abs() < 1e-4, "lat = {lat}");
    assert!((lon - 7.6).abs() < 1e-4, "lon = {lon}");
}

#[test]
fn config_with_unknown_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = serde_json::to_value(RunConfig::preset("discrete-1drone").unwrap()).unwrap();
    cfg["banana_factor"] = serde_json::json!(3.5);
    let cfg_path = dir.path().join("bad.json");
    fs::write(&cfg_path, serde_json::to_string(&cfg).unwrap()).unwrap();

    let out = run(&[
        "simulate",
        "--config",
        cfg_path.to_str().unwrap(),
        "--out-dir",
        dir.path().join("run").to_str().unwrap(),
    ]);
    assert!(!out.status.success(), "unknown keys must be rejected");
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(
        stderr.contains("banana_factor"),
        "stderr should name the offending field: {stderr}"
    );
}

#[test]
fn unknown_preset_lists_available_names() {
    let out = run(&["simulate", "--preset", "nope", "--out-dir", "/tmp/x"]);
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(
        stderr.contains("discrete-1drone") && stderr.contains("bench-3x4"),
        "stderr should list presets: {stderr}"
    );
}

#[test]
fn missing_config_source_is_an_error() {
    let out = run(&["campaign", "--out-dir", "/tmp/x"]);
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("--preset") && stderr.contains("--config"));
}
