//! End-to-end runs of the `lnseg` binary: phantom generation, the
//! preprocessing chain, slab decomposition and stitching, ensembling,
//! instance extraction, cohort evaluation, cross-validation, and exit
//! codes.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn lnseg() -> Command {
    Command::new(env!("CARGO_BIN_EXE_lnseg"))
}

fn run_ok(cmd: &mut Command) -> Output {
    let out = cmd.output().expect("spawn lnseg");
    assert!(
        out.status.success(),
        "command failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn write_template(dir: &Path) -> PathBuf {
    let spec = dir.join("spec.json");
    run_ok(lnseg().args(["phantom", "--template"]).arg(&spec));
    spec
}

#[test]
fn version_reports_format_schemas() {
    let out = run_ok(lnseg().arg("--version"));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("lnseg"));
    assert!(text.contains("manifest v1"), "format versions missing: {text}");
}

#[test]
fn unknown_flag_exits_one_with_usage_on_stderr() {
    let out = lnseg().args(["evaluate", "--bogus"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(out.stdout.is_empty());
    assert!(!out.stderr.is_empty());
}

#[test]
fn missing_input_file_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = lnseg()
        .args(["preprocess", "--ct", "does-not-exist.nii.gz"])
        .arg("--out-volume")
        .arg(dir.path().join("v.nii.gz"))
        .arg("--out-record")
        .arg(dir.path().join("r.json"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn phantom_writes_ct_labels_stations() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_template(dir.path());
    let out_dir = dir.path().join("patient");
    run_ok(lnseg()
        .args(["phantom", "--spec"])
        .arg(&spec)
        .arg("--out")
        .arg(&out_dir));
    for file in ["ct.nii.gz", "labels.nii.gz", "stations.json", "manifest.json"] {
        assert!(out_dir.join(file).exists(), "{file} missing");
    }
}

#[test]
fn full_pipeline_over_files() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_template(dir.path());
    let pat = dir.path().join("pat");
    run_ok(lnseg()
        .args(["phantom", "--spec"])
        .arg(&spec)
        .arg("--out")
        .arg(&pat)
        .args(["--prob"]));

    // Preprocess in slab mode.
    let pre = dir.path().join("pre.nii.gz");
    let rec = dir.path().join("record.json");
    run_ok(lnseg()
        .args(["preprocess", "--mode", "slab", "--ct"])
        .arg(pat.join("ct.nii.gz"))
        .arg("--out-volume")
        .arg(&pre)
        .arg("--out-record")
        .arg(&rec));

    // Slab decomposition and identity stitching.
    let slabs = dir.path().join("slabs");
    run_ok(lnseg()
        .args(["slab", "--slab-size", "16", "--stride", "8", "--volume"])
        .arg(&pre)
        .arg("--out-dir")
        .arg(&slabs));
    assert!(slabs.join("slabs.json").exists());
    assert!(slabs.join("slab_000.nii.gz").exists());
    let stitched = dir.path().join("stitched.nii.gz");
    run_ok(lnseg()
        .args(["stitch", "--meta"])
        .arg(slabs.join("slabs.json"))
        .arg("-o")
        .arg(&stitched));

    // Stitching the extracted slabs reproduces the preprocessed volume.
    let a = lnseg_cli::nifti::read_volume(&pre).unwrap();
    let b = lnseg_cli::nifti::read_volume(&stitched).unwrap();
    assert_eq!(a.as_probability().unwrap(), b.as_probability().unwrap());

    // Pixel-wise max with itself is itself.
    let fused = dir.path().join("fused.nii.gz");
    run_ok(lnseg()
        .arg("ensemble")
        .arg(&stitched)
        .arg(&stitched)
        .arg("-o")
        .arg(&fused));
    let f = lnseg_cli::nifti::read_volume(&fused).unwrap();
    assert_eq!(a.as_probability().unwrap(), f.as_probability().unwrap());

    // Restoration to the original patient space runs in its own
    // invocation off the persisted geometry record.
    let restored = dir.path().join("restored.nii.gz");
    run_ok(lnseg()
        .arg("ensemble")
        .arg(&fused)
        .arg("--restore-record")
        .arg(&rec)
        .arg("-o")
        .arg(&restored));
    let ct = lnseg_cli::nifti::read_volume(&pat.join("ct.nii.gz")).unwrap();
    let r = lnseg_cli::nifti::read_volume(&restored).unwrap();
    assert_eq!(r.dims(), ct.dims());

    // Instances from the synthetic probability map.
    let inst = dir.path().join("instances.json");
    run_ok(lnseg()
        .args(["instances", "--pt", "0.5", "--prob"])
        .arg(pat.join("prob.nii.gz"))
        .arg("--out")
        .arg(&inst));
    let parsed: serde_json::Value =
        serde_json::from_slice(&std::fs::read(&inst).unwrap()).unwrap();
    assert_eq!(parsed["instances"].as_array().unwrap().len(), 3);
    for record in parsed["instances"].as_array().unwrap() {
        assert!(record["volume_ml"].as_f64().unwrap() > 0.0);
        assert!(record["short_axis_mm"].as_f64().unwrap() > 0.0);
    }

    // Ground-truth instances with clustering carry stations.
    let gt_inst = dir.path().join("gt_instances.json");
    run_ok(lnseg()
        .args(["instances", "--cluster", "--labels"])
        .arg(pat.join("labels.nii.gz"))
        .arg("--stations")
        .arg(pat.join("stations.json"))
        .arg("--out")
        .arg(&gt_inst));
    let parsed: serde_json::Value =
        serde_json::from_slice(&std::fs::read(&gt_inst).unwrap()).unwrap();
    let first = &parsed["instances"][0];
    assert!(first["stations"].as_array().is_some());
}

#[test]
fn evaluate_and_crossval_over_phantom_cohort() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_template(dir.path());
    let cohort = dir.path().join("cohort");
    run_ok(lnseg()
        .args(["phantom", "--count", "6", "--prob", "--fp-blobs", "2", "--drop-labels", "1", "--spec"])
        .arg(&spec)
        .arg("--out")
        .arg(&cohort));
    let manifest = cohort.join("manifest.json");
    assert!(manifest.exists());

    // Sweep evaluation with JSON + CSV reports.
    let report = dir.path().join("report.json");
    let csv = dir.path().join("report.csv");
    run_ok(lnseg()
        .args(["evaluate", "--model", "synthetic", "--pt", "sweep", "--manifest"])
        .arg(&manifest)
        .arg("--out")
        .arg(&report)
        .arg("--csv")
        .arg(&csv));
    let parsed: serde_json::Value =
        serde_json::from_slice(&std::fs::read(&report).unwrap()).unwrap();
    assert_eq!(parsed["patients"].as_array().unwrap().len(), 6);
    assert_eq!(parsed["sweep"].as_array().unwrap().len(), 10);
    // Dropping one of three nodes caps recall at 2/3.
    let recall = parsed["cohort"]["recall_global"].as_f64().unwrap();
    assert!((recall - 2.0 / 3.0).abs() < 1e-12, "recall {recall}");

    // Identical invocation gives byte-identical reports, also when the
    // thread count differs.
    let report2 = dir.path().join("report2.json");
    run_ok(lnseg()
        .args(["evaluate", "--jobs", "1", "--model", "synthetic", "--pt", "sweep", "--manifest"])
        .arg(&manifest)
        .arg("--out")
        .arg(&report2));
    assert_eq!(
        std::fs::read(&report).unwrap(),
        std::fs::read(&report2).unwrap()
    );

    // CSV as the primary output format.
    let csv_out = dir.path().join("report_direct.csv");
    run_ok(lnseg()
        .args(["evaluate", "--model", "synthetic", "--pt", "0.5", "--format", "csv", "--manifest"])
        .arg(&manifest)
        .arg("--out")
        .arg(&csv_out));
    let text = std::fs::read_to_string(&csv_out).unwrap();
    assert!(text.starts_with("patient_id,stratum,pt,"));

    // Cross-validation with CSV tables.
    let cv = dir.path().join("cv.json");
    let tables = dir.path().join("tables");
    run_ok(lnseg()
        .args(["crossval", "--folds", "3", "--seed", "7", "--model", "synthetic", "--manifest"])
        .arg(&manifest)
        .arg("--out")
        .arg(&cv)
        .arg("--csv-dir")
        .arg(&tables));
    let parsed: serde_json::Value = serde_json::from_slice(&std::fs::read(&cv).unwrap()).unwrap();
    assert_eq!(parsed["models"][0]["fold_rows"].as_array().unwrap().len(), 3);
    assert!(parsed["models"][0]["total"]["n_gt"].as_u64().unwrap() > 0);
    for file in ["synthetic_folds.csv", "synthetic_strata.csv", "synthetic_stations.csv"] {
        assert!(tables.join(file).exists(), "{file} missing");
    }
    let folds_csv = std::fs::read_to_string(tables.join("synthetic_folds.csv")).unwrap();
    assert_eq!(folds_csv.lines().count(), 1 + 3 + 1, "3 folds + total");
}

#[test]
fn evaluate_reports_missing_probability_role() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_template(dir.path());
    let cohort = dir.path().join("cohort");
    run_ok(lnseg()
        .args(["phantom", "--count", "3", "--spec"])
        .arg(&spec)
        .arg("--out")
        .arg(&cohort));
    let out = lnseg()
        .args(["evaluate", "--model", "missing-model", "--manifest"])
        .arg(cohort.join("manifest.json"))
        .arg("--out")
        .arg(dir.path().join("r.json"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("p000"), "names the patient: {stderr}");
    assert!(stderr.contains("missing-model"), "names the role: {stderr}");
}

#[test]
fn bench_on_small_synthetic_volume() {
    let dir = tempfile::tempdir().unwrap();
    let timing = dir.path().join("timing.json");
    let out = run_ok(lnseg()
        .args([
            "bench",
            "--synthetic",
            "48x48x40",
            "--spacing",
            "1x1x1",
            "--repeats",
            "2",
            "--slab-size",
            "16",
        ])
        .arg("--out")
        .arg(&timing));
    let stdout = String::from_utf8_lossy(&out.stdout);
    for stage in ["load", "preprocess", "slab_stitch", "restore", "ensemble", "instancer", "metrics", "total"] {
        assert!(stdout.contains(stage), "missing stage {stage}:\n{stdout}");
    }
    let parsed: serde_json::Value =
        serde_json::from_slice(&std::fs::read(&timing).unwrap()).unwrap();
    assert_eq!(parsed["repeats"], 2);
    assert_eq!(parsed["stages"].as_array().unwrap().len(), 7);
}
