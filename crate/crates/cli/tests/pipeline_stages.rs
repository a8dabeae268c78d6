mod common;

use std::fs;

use pothole_cli::pipeline::{
    cmd_angles, cmd_eval, cmd_perturb, cmd_reconstruct, cmd_report, cmd_stats, cmd_synth, cmd_train,
};
use pothole_core::colormap::jet_encode_u8;
use pothole_core::craters::write_sample;
use pothole_core::heightfield::PotholeSample;

fn flat_scan(id: &str, size: usize, value: f64) -> PotholeSample {
    let px = jet_encode_u8(value).unwrap();
    PotholeSample {
        id: id.to_string(),
        width: size,
        height: size,
        rgb: vec![90; size * size * 3],
        heatmap: px.repeat(size * size),
        mask: vec![true; size * size],
    }
}

#[test]
fn stats_of_constant_scans_equal_the_constant() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = common::tiny_config(&dir.path().join("out"));
    let root = dir.path().join("scans");
    cfg.paths.pothole_root = Some(root.clone());
    // 0.375 sits on a jet knot, (0, 255, 255), so 8-bit encoding is exact
    for id in ["a", "b", "c"] {
        write_sample(&root, &flat_scan(id, 40, 0.375)).unwrap();
    }
    let (scalars, stats) = cmd_stats(&cfg).unwrap();
    let want = 110.0 * 0.375;
    assert_eq!(scalars.len(), 3);
    for s in &scalars {
        assert!((s.characteristic_depth - want).abs() < 1e-9);
        assert!(s.mean_gradient.abs() < 1e-12);
    }
    for (name, v) in stats.rows() {
        let expected = if name == "std" { 0.0 } else { want };
        assert!((v - expected).abs() < 1e-9, "{name} {v}");
    }

    let text = fs::read_to_string(cfg.out_path("stats.csv")).unwrap();
    let summary: Vec<&str> = text.split("\n\n").nth(1).unwrap().lines().collect();
    assert_eq!(summary[0], "statistic,value_mm");
    let names: Vec<&str> = summary[1..].iter().map(|l| l.split(',').next().unwrap()).collect();
    assert!(["mean", "std", "min", "25%", "50%", "75%", "max"].iter().all(|n| names.contains(n)));
}

#[test]
fn stats_of_mixed_knot_scans() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = common::tiny_config(&dir.path().join("out"));
    let root = dir.path().join("scans");
    cfg.paths.pothole_root = Some(root.clone());
    for (id, v) in [("a", 0.125), ("b", 0.375), ("c", 0.625)] {
        write_sample(&root, &flat_scan(id, 40, v)).unwrap();
    }
    let (_, stats) = cmd_stats(&cfg).unwrap();
    assert!((stats.mean - 41.25).abs() < 1e-9);
    assert!((stats.median - 41.25).abs() < 1e-9);
    assert!((stats.std - 27.5).abs() < 1e-9);
    assert!((stats.min - 13.75).abs() < 1e-9 && (stats.max - 68.75).abs() < 1e-9);
}

fn full_run(out: &std::path::Path) {
    let cfg = common::tiny_config(out);
    assert_eq!(cmd_synth(&cfg).unwrap().potholes, 4);
    let logs = cmd_reconstruct(&cfg).unwrap();
    assert!(logs.iter().all(|l| l.vertices == 81 && l.faces == 128));
    cmd_stats(&cfg).unwrap();
    assert_eq!(cmd_angles(&cfg).unwrap().len(), 4);
    cmd_perturb(&cfg).unwrap();
    let summary = cmd_train(&cfg).unwrap();
    assert_eq!(summary.pretrain.rows.len(), 1);
    assert_eq!(summary.dae.rows.len(), 2);
    cmd_eval(&cfg).unwrap();
    assert_eq!(cmd_report(&cfg).unwrap().rows.len(), 2);
}

#[test]
fn repeated_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    full_run(&out);
    let first = common::snapshot(&out, &["timings.csv"]);
    fs::remove_dir_all(&out).unwrap();
    full_run(&out);
    let second = common::snapshot(&out, &["timings.csv"]);

    let names: Vec<_> = first.iter().map(|f| f.0.display().to_string()).collect();
    for expected in ["run_manifest.json", "steering.ckpt", "dae.ckpt", "report.csv", "meshes/0000.obj"] {
        assert!(names.contains(&expected.to_string()), "missing {expected}");
    }
    assert_eq!(first.len(), second.len());
    for (a, b) in first.iter().zip(&second) {
        assert_eq!(a.0, b.0);
        assert!(a.1 == b.1, "{} differs", a.0.display());
    }
}

#[test]
fn manifest_tracks_every_stage() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    full_run(&out);
    let m: serde_json::Value = serde_json::from_slice(&fs::read(out.join("run_manifest.json")).unwrap()).unwrap();
    let stages = m["stages"].as_object().unwrap();
    for s in ["synth", "reconstruct", "stats", "angles", "perturb", "train", "eval", "report"] {
        let rec = &stages[s];
        assert_eq!(rec["timestamp"], 1_700_000_000u64);
        assert_eq!(rec["config"].as_str().unwrap().len(), 64);
    }
    // a later stage's input digest is an earlier stage's output digest
    assert_eq!(stages["angles"]["inputs"]["stats"], stages["stats"]["outputs"]["stats"]);
    assert_eq!(stages["eval"]["inputs"]["dae_ckpt"], stages["train"]["outputs"]["dae_ckpt"]);
}
