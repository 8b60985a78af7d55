use std::path::PathBuf;

use relkin::harness::{exit_code, run_experiment, write_artifacts, ExperimentConfig};
use relkin::Error;

fn configs() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

#[test]
fn soft_b_above_four_is_a_config_error() {
    let e = ExperimentConfig::load(&configs().join("bad_soft_b.toml")).unwrap_err();
    assert_eq!(exit_code(&e), 2);
    let msg = e.to_string();
    assert!(msg.contains("bad_soft_b.toml:5:1"), "{msg}");
    assert!(msg.contains("0 < b < min(4, 4+γ)"), "{msg}");
}

#[test]
fn malformed_value_reports_its_line() {
    let src = "kind = \"vidav_check\"\n\n[time]\nhorizon = \"long\"\n";
    let e = ExperimentConfig::parse(src, "x.toml").unwrap_err();
    assert!(matches!(e, Error::Config(_)));
    assert!(e.to_string().contains("x.toml:4:"), "{e}");
}

#[test]
fn non_dividing_step_is_rejected() {
    let src = "kind = \"linear_decay\"\n[time]\nhorizon = 10.0\ndt = 0.3\n";
    let e = ExperimentConfig::parse(src, "x.toml").unwrap_err();
    assert!(e.to_string().contains("x.toml:4:1"), "{e}");
}

#[test]
fn unresolved_low_frequencies_exit_3() {
    let src = "kind = \"linear_decay\"\n[grid]\np_max = 4.0\nn_per_axis = 5\nmax_defect = 0.5\n[frequencies]\nmin = 0.5\nmax = 5.0\ncount = 4\n[time]\nhorizon = 20.0\n";
    let cfg = ExperimentConfig::parse(src, "x.toml").unwrap();
    let e = run_experiment(&cfg).unwrap_err();
    assert!(matches!(e, Error::Resolution(_)), "{e}");
    assert_eq!(exit_code(&e), 3);
}

#[test]
fn rerun_is_byte_identical() {
    let src = "kind = \"homogeneous_relax\"\nseed = 9\n[homogeneous]\np_max = 4.0\nn_per_axis = 5\ndt = 0.1\nhorizon = 2.0\nentropy_trials = 10\n";
    let cfg = ExperimentConfig::parse(src, "x.toml").unwrap();
    let dir = std::env::temp_dir().join(format!("relkin-rerun-{}", std::process::id()));
    let mut csv = Vec::new();
    for i in 0..2 {
        let out = run_experiment(&cfg).unwrap();
        assert!(out.passed);
        let d = dir.join(i.to_string());
        write_artifacts(&out, &d).unwrap();
        csv.push(std::fs::read(d.join("homogeneous_relax.csv")).unwrap());
    }
    assert!(!csv[0].is_empty());
    assert_eq!(csv[0], csv[1]);
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn linear_decay_config_lands_in_band() {
    let cfg = ExperimentConfig::load(&configs().join("linear_decay.toml")).unwrap();
    let out = run_experiment(&cfg).unwrap();
    let r = &out.manifest["results"];
    let e = r["fit"]["exponent"].as_f64().unwrap();
    let band = r["band"].as_array().unwrap();
    let (lo, hi) = (band[0].as_f64().unwrap(), band[1].as_f64().unwrap());
    assert!((lo - 1.275).abs() < 1e-12 && (hi - 1.725).abs() < 1e-12);
    assert!((lo..=hi).contains(&e), "exponent {e}");
    assert!(out.passed);
    assert!(out.manifest["results"]["assembly"]["report"]["leakage"]["max_node"].is_number());
}
