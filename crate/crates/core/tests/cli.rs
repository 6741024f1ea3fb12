use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn shiftgen(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_shiftgen"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn stdout_json(out: &Output) -> Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("single JSON object on stdout")
}

/// The one-line diagnostic on stderr, with its exit code checked.
fn failure(out: &Output, code: i32) -> Value {
    assert_eq!(out.status.code(), Some(code), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8_lossy(&out.stderr);
    assert_eq!(text.trim_end().lines().count(), 1, "diagnostic is one line: {text}");
    serde_json::from_str(text.trim_end()).expect("diagnostic is JSON")
}

#[test]
fn gen_latents_output_validates() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    let out = shiftgen(
        dir,
        &["gen-latents", "--family", "overlap", "--theta", "0.5236", "--d", "64", "--n", "1000", "--seed", "7", "--out", "a.cslt"],
    );
    let summary = stdout_json(&out);
    assert_eq!(summary["n"], 1000);
    let v = stdout_json(&shiftgen(dir, &["validate", "a.cslt", "a.cslt.manifest.json"]));
    assert_eq!(v["valid"], true);
    assert_eq!(v["files"][0]["kind"], "cslt");
    assert_eq!(v["files"][1]["kind"], "manifest");
}

#[test]
fn slope_of_hand_example() {
    let tmp = TempDir::new().unwrap();
    std::fs::write(
        tmp.path().join("pts.csv"),
        "shift_param,nn_distance,accuracy,n_test\n0,0.5,0.9,100\n1,0.6,0.8,100\n2,0.7,0.7,100\n",
    )
    .unwrap();
    let fit = stdout_json(&shiftgen(tmp.path(), &["slope", "--points", "pts.csv"]));
    assert!((fit["slope"].as_f64().unwrap() + 0.1).abs() < 1e-12);
    assert!((fit["r_squared"].as_f64().unwrap() - 1.0).abs() < 1e-12);
    assert_eq!(fit["x_axis"], "shift_param");

    let fit = stdout_json(&shiftgen(tmp.path(), &["slope", "--points", "pts.csv", "--x-axis", "nn_distance"]));
    assert!((fit["slope"].as_f64().unwrap() + 1.0).abs() < 1e-9);
}

#[test]
fn degenerate_fit_exits_three() {
    let tmp = TempDir::new().unwrap();
    std::fs::write(
        tmp.path().join("flat.csv"),
        "shift_param,nn_distance,accuracy,n_test\n1,0.5,0.9,100\n1,0.5,0.8,100\n",
    )
    .unwrap();
    let err = failure(&shiftgen(tmp.path(), &["slope", "--points", "flat.csv"]), 3);
    assert_eq!(err["error"], "degenerate-fit");
}

#[test]
fn nn_dist_self_distance_is_zero_in_memory_and_streamed() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    stdout_json(&shiftgen(dir, &["toy-gen", "--family", "overlap", "--theta", "0.4", "--n", "200", "--out", "a.csim"]));
    let mem = stdout_json(&shiftgen(dir, &["nn-dist", "--train", "a.csim", "--shift", "a.csim", "--per-point", "pp.csv"]));
    assert_eq!(mem["mean_distance"], 0.0);
    assert_eq!(mem["streamed"], false);
    let csv = std::fs::read_to_string(dir.join("pp.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("shift_index,distance,argmin_train_index"));
    assert_eq!(csv.lines().count(), 201);

    let streamed = stdout_json(&shiftgen(dir, &["nn-dist", "--train", "a.csim", "--shift", "a.csim", "--budget", "100000"]));
    assert_eq!(streamed["mean_distance"], 0.0);
    assert_eq!(streamed["streamed"], true);
}

#[test]
fn toy_gen_keeps_labels_and_order() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    stdout_json(&shiftgen(
        dir,
        &["gen-latents", "--family", "prior", "--d", "6", "--n", "9", "--classes", "2", "--out", "z.cslt"],
    ));
    stdout_json(&shiftgen(dir, &["toy-gen", "--latents", "z.cslt", "--out", "x.csim"]));
    let latents = shiftgen::format::read_latents(&dir.join("z.cslt")).unwrap();
    let images = shiftgen::format::read_images(&dir.join("x.csim")).unwrap();
    assert_eq!(latents.labels, images.labels);
    let cfg = shiftgen::toy::ToyDecoderConfig::default();
    let batch = latents.to_batch();
    for (i, z) in batch.rows().enumerate() {
        let want = shiftgen::toy::toy_decode(z, batch.labels[i], &cfg).unwrap();
        let p = images.pixels_per_image();
        assert_eq!(&images.values[i * p..(i + 1) * p], &want[..]);
    }
}

#[test]
fn flags_override_config_keys() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    std::fs::write(dir.join("c.json"), r#"{"family": "truncation", "radius": 0.9, "d": 8, "n": 20, "seed": 1}"#).unwrap();
    stdout_json(&shiftgen(dir, &["gen-latents", "--config", "c.json", "--radius", "1.1", "--out", "t.cslt"]));
    let file = shiftgen::format::read_latents(&dir.join("t.cslt")).unwrap();
    assert_eq!(file.param, 1.1);
    assert_eq!(file.dim, 8);

    std::fs::write(dir.join("bad.json"), r#"{"familly": "prior"}"#).unwrap();
    let err = failure(&shiftgen(dir, &["gen-latents", "--config", "bad.json"]), 2);
    assert_eq!(err["error"], "config");
}

#[test]
fn usage_errors_exit_one() {
    let tmp = TempDir::new().unwrap();
    let err = failure(&shiftgen(tmp.path(), &["gen-latents", "--bogus"]), 1);
    assert_eq!(err["error"], "usage");
    let err = failure(&shiftgen(tmp.path(), &["gen-latents", "--family", "extend", "--d", "4", "--n", "3", "--out", "x"]), 1);
    assert_eq!(err["error"], "invalid-argument");
}

#[test]
fn malformed_files_exit_two_with_offset() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    stdout_json(&shiftgen(dir, &["gen-latents", "--family", "prior", "--d", "4", "--n", "10", "--out", "a.cslt"]));
    let mut bytes = std::fs::read(dir.join("a.cslt")).unwrap();
    bytes[0] = b'X';
    std::fs::write(dir.join("x.cslt"), &bytes).unwrap();
    let err = failure(&shiftgen(dir, &["validate", "x.cslt"]), 2);
    assert_eq!(err["error"], "format");
    assert_eq!(err["offset"], 0);

    let bytes = std::fs::read(dir.join("a.cslt")).unwrap();
    std::fs::write(dir.join("short.cslt"), &bytes[..bytes.len() - 4]).unwrap();
    let err = failure(&shiftgen(dir, &["validate", "short.cslt"]), 2);
    assert!(err["message"].as_str().unwrap().contains("length mismatch"));
}

#[test]
fn tampered_output_fails_manifest_check() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    stdout_json(&shiftgen(dir, &["gen-latents", "--family", "prior", "--d", "4", "--n", "10", "--out", "a.cslt"]));
    let mut bytes = std::fs::read(dir.join("a.cslt")).unwrap();
    let last = bytes.len() - 1;
    bytes[last] ^= 1;
    std::fs::write(dir.join("a.cslt"), &bytes).unwrap();
    failure(&shiftgen(dir, &["validate", "a.cslt.manifest.json"]), 2);
}

#[test]
fn intensity_reports_analytic_and_monte_carlo() {
    let tmp = TempDir::new().unwrap();
    let r = stdout_json(&shiftgen(
        tmp.path(),
        &["intensity", "--family", "truncation", "--radius", "1.0", "--d", "3", "--n", "200000", "--out", "i.json"],
    ));
    let analytic = r["analytic"].as_f64().unwrap();
    assert!((analytic - (1.0 - 0.8f64.powi(3))).abs() < 1e-12);
    let mc = r["mc_estimate"].as_f64().unwrap();
    assert!((mc - analytic).abs() <= 4.0 * r["mc_stderr"].as_f64().unwrap() + 1e-3);
    assert!(tmp.path().join("i.json.manifest.json").exists());
}

#[test]
fn toy_run_writes_a_complete_report() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    std::fs::write(
        dir.join("exp.json"),
        r#"{"n_train": 300, "n_test": 100, "grid": [0.0, 0.5, 1.0], "train": {"epochs": 20}}"#,
    )
    .unwrap();
    stdout_json(&shiftgen(dir, &["toy-run", "--config", "exp.json", "--out", "rep", "--latent-seed", "3"]));
    let csv = std::fs::read_to_string(dir.join("rep/points.csv")).unwrap();
    assert_eq!(
        csv.lines().next(),
        Some("shift_param,nn_distance,accuracy,n_test,delta_accuracy,intensity")
    );
    assert_eq!(csv.lines().count(), 4);
    let fits: Value = serde_json::from_str(&std::fs::read_to_string(dir.join("rep/fits.json")).unwrap()).unwrap();
    assert!(fits["fit_nn_distance"]["slope"].is_number());
    let manifest: Value = serde_json::from_str(&std::fs::read_to_string(dir.join("rep/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["latent_seed"], 3);
    assert_eq!(manifest["metric"], "euclidean");
    stdout_json(&shiftgen(dir, &["validate", "rep/manifest.json"]));

    let slope = stdout_json(&shiftgen(dir, &["slope", "--points", "rep/points.csv"]));
    assert_eq!(slope["n_points"], 3);
}
