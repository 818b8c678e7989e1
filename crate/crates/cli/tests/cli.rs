//! Runs the `vsp` binary on small configurations.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

/// Coarse grids keep each run to a few seconds.
const COARSE: &str = r#"
output_dir = "out"

[grid]
classes = 301

[probe]
min_MHz = -300.0
max_MHz = 500.0
points = 200
"#;

fn vsp(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vsp"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("vsp runs")
}

fn setup(config: &str) -> TempDir {
    let dir = TempDir::new().unwrap();
    fs::write(dir.path().join("run.toml"), config).unwrap();
    dir
}

fn ok(dir: &Path, args: &[&str]) {
    let out = vsp(dir, args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

fn read(dir: &Path, name: &str) -> String {
    fs::read_to_string(dir.join("out").join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

fn toml_file(dir: &Path, name: &str) -> toml::Table {
    read(dir, name).parse().unwrap()
}

fn float(t: &toml::Table, key: &str) -> f64 {
    match &t[key] {
        toml::Value::Float(f) => *f,
        toml::Value::Integer(i) => *i as f64,
        v => panic!("{key} = {v}"),
    }
}

/// Data rows of a CSV with `#` metadata lines.
fn rows(text: &str) -> Vec<Vec<f64>> {
    text.lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(|l| l.split(',').map(|v| v.parse().unwrap_or(f64::INFINITY)).collect())
        .collect()
}

#[test]
fn thermal_only_spectrum_equals_baseline() {
    let dir = setup(COARSE);
    ok(dir.path(), &["spectrum", "run.toml"]);
    assert_eq!(read(dir.path(), "spectrum.csv"), read(dir.path(), "baseline.csv"));

    let manifest = toml_file(dir.path(), "manifest.toml");
    assert_eq!(manifest["command"].as_str(), Some("spectrum"));
    assert_eq!(manifest["species"].as_str(), Some("Cs-133"));
    let hash = manifest["config_sha256"].as_str().unwrap();
    assert_eq!(hash.len(), 64);
    let outputs = manifest["outputs"].as_array().unwrap();
    let names: Vec<&str> = outputs.iter().map(|o| o["path"].as_str().unwrap()).collect();
    assert_eq!(names, ["spectrum.csv", "baseline.csv", "spectrum_summary.toml"]);
}

#[test]
fn low_power_feature_is_narrow_and_lorentzian() {
    let dir = setup(&format!(
        "{COARSE}\n[pump_back]\npower_mW = 0.86\nvelocity_m_s = -100.0\nduration_us = 0.2\n"
    ));
    ok(dir.path(), &["spectrum", "run.toml"]);
    let summary = toml_file(dir.path(), "spectrum_summary.toml");
    let s = summary["spectra"].as_array().unwrap()[0].as_table().unwrap();
    let lor = s["lorentzian"].as_table().unwrap();
    // Laser plus the natural widths of the pump-back and probe lines.
    let combined = 6.0 + 4.575 + 5.234;
    let fwhm = float(lor, "fwhm_mhz");
    assert!(fwhm < 2.0 * combined && fwhm > 0.5 * combined, "{fwhm}");
    assert!(float(lor, "r_squared") > 0.95);
    // The -100 m/s class appears blue of the F'=5 line for a counter-propagating probe.
    let centre = float(s, "peak_detuning_mhz");
    assert!((centre - 100.0 / 852.35e-9 / 1e6).abs() < 15.0, "{centre}");
}

#[test]
fn sequence_writes_one_spectrum_per_probe_window() {
    let config = format!(
        r#"{COARSE}
[sequence]
repeat = 2

[[sequence.preamble]]
role = "pump"
transition = "D2:4-4"
power_mW = 20.0
duration_us = 2000.0

[[sequence.stages]]
role = "pump-back"
transition = "D1:3-4"
power_mW = 1.0
velocity_m_s = -100.0
duration_us = 0.2

[[sequence.stages]]
role = "probe"
duration_us = 1.0

[[sequence.stages]]
role = "reset"
transition = "D2:4-4"
power_mW = 20.0
duration_us = 400.0
"#
    );
    let dir = setup(&config);
    ok(dir.path(), &["spectrum", "run.toml"]);
    let a = read(dir.path(), "spectrum_probe_1.csv");
    let b = read(dir.path(), "spectrum_probe_2.csv");
    assert!(a.contains("# sequence_hash = "));
    let peak = |t: &str| rows(t).iter().map(|r| r[1]).fold(0.0, f64::max);
    assert!((peak(&a) / peak(&b) - 1.0).abs() < 1e-3);
    // Initial state plus 1 + 2 x 3 snapshots of 301 classes.
    assert_eq!(read(dir.path(), "trajectory.csv").lines().count(), 1 + 8 * 301);
}

#[test]
fn thermal_dephasing_and_zero_mismatch() {
    let dir = setup(&format!(
        r#"{COARSE}
[[ladders]]
name = "6D5/2"

[[ladders]]
name = "collinear"
signal_nm = 852.0
control_nm = 852.0
storage_lifetime_ns = 60.0
"#
    ));
    ok(dir.path(), &["dephasing", "run.toml"]);
    let report = toml_file(dir.path(), "dephasing.toml");
    let ladders = report["ladders"].as_array().unwrap();
    let tau = float(ladders[0].as_table().unwrap(), "dephasing_thermal_ns");
    assert!((tau / 14.0 - 1.0).abs() < 0.05, "{tau}");
    assert_eq!(ladders[1]["dephasing_thermal_ns"].as_str(), Some("unbounded"));
    assert!(ladders[0].get("beta").is_none());
    let curve = rows(&read(dir.path(), "coherence_Cs-133_6D5_2_thermal.csv"));
    assert_eq!(curve.len(), 601);
    assert_eq!(curve[0][1], 1.0);
}

#[test]
fn selected_distribution_lengthens_dephasing() {
    let dir = setup(&format!(
        "{COARSE}\n[pump_back]\npower_mW = 4.1\nvelocity_m_s = -100.0\nduration_us = 1.2\n"
    ));
    ok(dir.path(), &["dephasing", "run.toml"]);
    let report = toml_file(dir.path(), "dephasing.toml");
    let row = report["ladders"].as_array().unwrap()[0].as_table().unwrap().clone();
    let tau = float(&row, "dephasing_vsp_ns");
    assert!(tau > 30.0 && tau < 160.0, "{tau}");
    assert!(float(&row, "beta") > 1.0);
    let drift = report["drift"].as_table().unwrap();
    assert!(float(drift, "drift_rate_per_s") > 1e5);
    assert_eq!(rows(&read(dir.path(), "velocity_distribution.csv"))[0].len(), 3);
}

#[test]
fn predict_table_and_its_limits() {
    let dir = setup("output_dir = \"out\"\n[grid]\nclasses = 401\n");
    ok(dir.path(), &["predict", "run.toml"]);
    let table = rows(&read(dir.path(), "predict.csv"));
    let labels: Vec<String> = read(dir.path(), "predict.csv")
        .lines()
        .skip(1)
        .map(|l| l.split(',').take(2).collect::<Vec<_>>().join(" "))
        .collect();
    assert_eq!(labels, ["Cs-133 6D5/2", "Cs-133 7S1/2", "Rb-87 5D5/2", "Rb-87 4D5/2"]);
    for r in &table {
        assert!(r[7] > 1.0, "{r:?}");
    }

    let dir = setup("output_dir = \"out\"\n[grid]\nclasses = 401\n[predict]\nvelocity_selection = false\n");
    ok(dir.path(), &["predict", "run.toml"]);
    for r in rows(&read(dir.path(), "predict.csv")) {
        assert_eq!(r[7], 1.0);
    }

    let dir = setup("output_dir = \"out\"\n[grid]\nclasses = 401\n[predict]\nstorage_lifetime_ns = 0.01\n");
    ok(dir.path(), &["predict", "run.toml"]);
    for r in rows(&read(dir.path(), "predict.csv")) {
        assert!(
            (r[5] / 0.01 - 1.0).abs() < 0.01 && (r[6] / 0.01 - 1.0).abs() < 0.01,
            "{r:?}"
        );
    }
}

#[test]
fn spectrum_fit_round_trip() {
    let dir = setup(&format!(
        "{COARSE}\n[pump_back]\npower_mW = 2.0\nvelocity_m_s = -100.0\nduration_us = 0.8\n"
    ));
    ok(dir.path(), &["spectrum", "run.toml"]);
    fs::copy(dir.path().join("out/spectrum.csv"), dir.path().join("measured.csv")).unwrap();
    fs::write(
        dir.path().join("fit.toml"),
        format!(
            "{COARSE}\n[fit]\ndata = \"measured.csv\"\nduration_us = 0.8\npower_mW = 2.5\nlinewidth_MHz = 7.0\nvelocity_m_s = -90.0\n"
        ),
    )
    .unwrap();
    ok(dir.path(), &["fit", "fit.toml"]);
    let report = toml_file(dir.path(), "fit_report.toml");
    assert_eq!(report["status"].as_str(), Some("converged"));
    assert!((float(&report, "power_mW") / 2.0 - 1.0).abs() < 1e-4);
    assert!((float(&report, "linewidth_MHz") / 6.0 - 1.0).abs() < 1e-4);
    assert!((float(&report, "velocity_m_per_s") + 100.0).abs() < 0.05);
    assert_eq!(rows(&read(dir.path(), "fit_model.csv")).len(), 200);

    let manifest = toml_file(dir.path(), "manifest.toml");
    let inputs = manifest["inputs"].as_array().unwrap();
    assert!(inputs[0]["path"].as_str().unwrap().ends_with("measured.csv"));
}

#[test]
fn relaxation_fit_recovers_rates() {
    let dir = setup("output_dir = \"out\"\n[fit_relaxation]\ndata = \"relax.csv\"\n");
    let mut csv = String::from("time_s,transmission\n");
    for i in 0..150 {
        let t = 1e-6 * 10f64.powf(i as f64 * 5.3 / 149.0);
        // Deterministic pseudo-noise at the 0.2% level.
        let noise = 2e-3 * ((i * 7919 % 101) as f64 / 50.0 - 1.0);
        let v = 0.5 * (-40.0 * t).exp() - 0.3 * (-8e4 * t).exp() + 0.2 + noise;
        csv.push_str(&format!("{t:e},{v:e}\n"));
    }
    fs::write(dir.path().join("relax.csv"), csv).unwrap();
    ok(dir.path(), &["fit-relaxation", "run.toml"]);
    let report = toml_file(dir.path(), "relaxation_report.toml");
    assert_eq!(report["flag"].as_str(), Some("identified"));
    assert!((float(&report, "slow_rate_per_s") / 40.0 - 1.0).abs() < 0.1);
    assert!((float(&report, "fast_rate_per_s") / 8e4 - 1.0).abs() < 0.1);
    assert_eq!(rows(&read(dir.path(), "relaxation_model.csv")).len(), 150);
}

#[test]
fn sweep_grid_is_deterministic_across_thread_counts() {
    let dir = setup(COARSE);
    ok(dir.path(), &["--threads", "1", "sweep", "run.toml"]);
    let table = read(dir.path(), "sweep.csv");
    let spectra = read(dir.path(), "sweep_spectra.csv");
    assert_eq!(rows(&table).len(), 9);
    assert_eq!(rows(&spectra).len(), 9 * 200);
    let order: Vec<String> = table
        .lines()
        .skip(1)
        .map(|l| l.split(',').take(2).collect::<Vec<_>>().join(","))
        .collect();
    assert_eq!(order[..3], ["0.86,0.2", "0.86,1.2", "0.86,2"]);

    ok(dir.path(), &["--threads", "3", "sweep", "run.toml"]);
    assert_eq!(read(dir.path(), "sweep.csv"), table);
    assert_eq!(read(dir.path(), "sweep_spectra.csv"), spectra);
    let manifest = toml_file(dir.path(), "manifest.toml");
    assert_eq!(manifest["threads"].as_integer(), Some(3));
}

#[test]
fn configuration_errors_exit_with_2() {
    let dir = setup("[ensemble]\ntemperature_K = 300.0\ntemprature_K = 310.0\n");
    let out = vsp(dir.path(), &["spectrum", "run.toml"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 3") && err.contains("temprature_K"), "{err}");

    let dir = setup("[pump_back]\npower_mW = -1.0\nduration_us = 1.0\n");
    assert_eq!(vsp(dir.path(), &["spectrum", "run.toml"]).status.code(), Some(2));

    let dir = setup("[fit_relaxation]\ndata = \"missing.csv\"\n");
    let out = vsp(dir.path(), &["fit-relaxation", "run.toml"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("does not exist"));

    let dir = setup("");
    assert_eq!(vsp(dir.path(), &["fit", "run.toml"]).status.code(), Some(2));
    assert_eq!(vsp(dir.path(), &["spectrum", "absent.toml"]).status.code(), Some(2));
    assert_eq!(vsp(dir.path(), &["spectrum"]).status.code(), Some(2));
}

#[test]
fn malformed_data_exits_with_3() {
    let dir = setup("output_dir = \"out\"\n[fit_relaxation]\ndata = \"relax.csv\"\n");
    fs::write(
        dir.path().join("relax.csv"),
        "time_s,transmission\n1e-6,0.5\n2e-6,oops\n",
    )
    .unwrap();
    let out = vsp(dir.path(), &["fit-relaxation", "run.toml"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 3"));

    let dir = setup(&format!(
        "{COARSE}\n[fit]\ndata = \"measured.csv\"\nduration_us = 1.0\npower_mW = 1.0\n"
    ));
    fs::write(dir.path().join("measured.csv"), "detuning_MHz,OD\n0,0.1\n1,x\n").unwrap();
    let out = vsp(dir.path(), &["fit", "run.toml"]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}
