//! The pipeline stages. Each reads only on-disk artifacts of earlier stages
//! and records itself in the run manifest.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use pothole_core::augment::{perturb_dataset, DriveSample, PerturbManifest};
use pothole_core::craters::{random_craters, write_sample};
use pothole_core::dataset::{read_dataset, write_dataset, write_manifest};
use pothole_core::geometry::{
    angle_rows, read_angles_csv, write_angles_csv, AngleRow, CarGeometry, PerturbDistribution,
};
use pothole_core::gradstats::{
    aggregate_stats, chunk_average, pixel_gradients, pothole_scalar, read_stats_csv,
    write_stats_csv, PotholeScalar, PotholeStats,
};
use pothole_core::heightfield::{
    depthfield_to_mesh, discover_samples, export_obj, heatmap_to_depthfield, DepthField,
    SamplePaths,
};
use pothole_core::neural::checkpoint::{load_dae, load_steering, save_dae, save_steering};
use pothole_core::neural::{
    evaluate, pretrain_steering, train_dae, DaeArch, DenoiseAE, Evaluation, Pairs, Precision,
    Reference, Scalar, SteeringArch, SteeringNet, TrainReport,
};
use pothole_core::rng::derive_seed;
use pothole_core::synthroad::{gen_dataset, split_seed, RenderOptions};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{layout, Command, RunConfig};
use crate::error::{stage, CliError};
use crate::manifest;
use crate::svg::line_chart;

fn mkdir(p: &Path) -> Result<(), CliError> {
    fs::create_dir_all(p).map_err(|e| CliError::io(p, e))
}

fn write_file(p: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    fs::write(p, contents).map_err(|e| CliError::io(p, e))
}

fn split_dirs(root: &Path) -> [PathBuf; 2] {
    layout::SPLITS.map(|s| root.join(s))
}

fn load_field(cfg: &RunConfig, paths: &SamplePaths) -> Result<(DepthField, usize), CliError> {
    let sample = paths.load().map_err(stage("load"))?;
    let (field, stats) =
        heatmap_to_depthfield(&sample, cfg.heightfield.depth_scale, cfg.heightfield.pixel_pitch)
            .map_err(stage("decode"))?;
    Ok((field, stats.off_curve))
}

fn potholes(cfg: &RunConfig) -> Result<Vec<SamplePaths>, CliError> {
    let list = discover_samples(&cfg.pothole_root()).map_err(stage("discover"))?;
    if list.is_empty() {
        return Err(CliError::Stage {
            stage: "discover",
            message: format!("no scans under {}", cfg.pothole_root().display()),
        });
    }
    Ok(list)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeshLog {
    pub id: String,
    pub vertices: usize,
    pub faces: usize,
    pub max_depth_mm: f64,
    pub off_curve_pixels: usize,
}

/// Meshes every scan to `<out>/meshes/<id>.obj` and writes a per-sample log.
pub fn cmd_reconstruct(cfg: &RunConfig) -> Result<Vec<MeshLog>, CliError> {
    cfg.validate(Command::Reconstruct)?;
    let dir = cfg.out_path(layout::MESHES);
    mkdir(&dir)?;
    let logs = potholes(cfg)?
        .par_iter()
        .map(|p| {
            let (field, off_curve) = load_field(cfg, p)?;
            let mesh = depthfield_to_mesh(&field, cfg.heightfield.subdivisions)
                .map_err(stage("reconstruct"))?;
            export_obj(&mesh, &dir.join(format!("{}.obj", p.id))).map_err(stage("reconstruct"))?;
            Ok(MeshLog {
                id: p.id.clone(),
                vertices: mesh.vertices.len(),
                faces: mesh.faces.len(),
                max_depth_mm: field.max_depth(),
                off_curve_pixels: off_curve,
            })
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let mut log = String::from("id,vertices,faces,max_depth_mm,off_curve_pixels\n");
    for l in &logs {
        let _ = writeln!(log, "{},{},{},{},{}", l.id, l.vertices, l.faces, l.max_depth_mm, l.off_curve_pixels);
    }
    let log_path = cfg.out_path(layout::RECONSTRUCT_LOG);
    write_file(&log_path, log)?;
    manifest::record(
        cfg,
        "reconstruct",
        &[("potholes", cfg.pothole_root())],
        &[("meshes", dir), ("reconstruct_log", log_path)],
    )?;
    Ok(logs)
}

/// Per-scan characteristic depth and mean chunk gradient, plus the summary block.
pub fn cmd_stats(cfg: &RunConfig) -> Result<(Vec<PotholeScalar>, PotholeStats), CliError> {
    cfg.validate(Command::Stats)?;
    mkdir(cfg.out())?;
    let s = &cfg.stats;
    let scalars = potholes(cfg)?
        .par_iter()
        .map(|p| {
            let (field, _) = load_field(cfg, p)?;
            let grads = pixel_gradients(&field).map_err(stage("stats"))?;
            let grid = chunk_average(&grads, s.chunk_rows, s.chunk_cols).map_err(stage("stats"))?;
            pothole_scalar(&p.id, &field, &grid, s.reducer).map_err(stage("stats"))
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let depths: Vec<f64> = scalars.iter().map(|s| s.characteristic_depth).collect();
    let summary = aggregate_stats(&depths).map_err(stage("stats"))?;
    let path = cfg.out_path(layout::STATS);
    write_stats_csv(&path, &scalars, &summary).map_err(stage("stats"))?;
    manifest::record(cfg, "stats", &[("potholes", cfg.pothole_root())], &[("stats", path)])?;
    Ok((scalars, summary))
}

/// Plain-text rendering of the seven-row summary.
pub fn summary_table(stats: &PotholeStats) -> String {
    let mut s = format!("{:<10}{:>14}\n", "statistic", "depth (mm)");
    let _ = writeln!(s, "{:<10}{:>14}", "count", stats.count);
    for (name, v) in stats.rows() {
        let _ = writeln!(s, "{name:<10}{v:>14.6}");
    }
    s
}

/// Roll angles for every scan from `stats.csv`.
pub fn cmd_angles(cfg: &RunConfig) -> Result<Vec<AngleRow>, CliError> {
    cfg.validate(Command::Angles)?;
    let stats_path = cfg.out_path(layout::STATS);
    let scalars = read_stats_csv(&stats_path).map_err(stage("angles"))?;
    let geometry = CarGeometry::new(cfg.geometry.axle_width).map_err(stage("angles"))?;
    let rows = angle_rows(&scalars, &geometry);
    let path = cfg.out_path(layout::ANGLES);
    write_angles_csv(&path, &rows).map_err(stage("angles"))?;
    manifest::record(cfg, "angles", &[("stats", stats_path)], &[("angles", path)])?;
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSummary {
    pub train: usize,
    pub val: usize,
    pub potholes: usize,
}

/// Synthetic driving splits and, optionally, synthetic scan triplets.
pub fn cmd_synth(cfg: &RunConfig) -> Result<SynthSummary, CliError> {
    cfg.validate(Command::Synth)?;
    mkdir(cfg.out())?;
    let s = &cfg.synth;
    let opts = RenderOptions {
        width: s.width,
        height: s.height,
        texture: s.texture,
    };
    let root = cfg.driving_root();
    let mut outputs = Vec::new();
    for (split, n) in [("train", s.train), ("val", s.val)] {
        let data = gen_dataset(n, split_seed(cfg.seed, split), &opts).map_err(stage("synth"))?;
        let dir = root.join(split);
        write_dataset(&dir, &data).map_err(stage("synth"))?;
        outputs.push((split, dir));
    }
    if s.potholes > 0 {
        let proot = cfg.pothole_root();
        let craters = random_craters(s.potholes, s.pothole_size, derive_seed(cfg.seed, "synth/potholes"));
        craters
            .par_iter()
            .enumerate()
            .map(|(i, c)| {
                let sample = c.render(&format!("{i:04}"), s.pothole_size, s.pothole_size, cfg.heightfield.depth_scale);
                write_sample(&proot, &sample).map_err(stage("synth"))
            })
            .collect::<Result<(), CliError>>()?;
        outputs.push(("potholes", proot));
    }
    manifest::record(cfg, "synth", &[], &outputs)?;
    Ok(SynthSummary {
        train: s.train,
        val: s.val,
        potholes: s.potholes,
    })
}

fn read_split(root: &Path, split: &str) -> Result<Vec<DriveSample>, CliError> {
    read_dataset(&root.join(split)).map_err(stage("dataset"))
}

/// Rolls every driving image by a draw from the angle distribution.
pub fn cmd_perturb(cfg: &RunConfig) -> Result<Vec<PerturbManifest>, CliError> {
    cfg.validate(Command::Perturb)?;
    let angles_path = cfg.out_path(layout::ANGLES);
    let rows = read_angles_csv(&angles_path).map_err(stage("perturb"))?;
    let magnitudes: Vec<f64> = rows.iter().map(|r| r.theta2_deg).collect();
    let (drive, pert) = (cfg.driving_root(), cfg.perturbed_root());
    let mut manifests = Vec::new();
    for split in layout::SPLITS {
        let dist = PerturbDistribution::new(
            magnitudes.clone(),
            cfg.geometry.sign_policy,
            derive_seed(cfg.seed, &format!("perturb/{split}")),
        )
        .map_err(stage("perturb"))?;
        let clean = read_split(&drive, split)?;
        let (perturbed, m) =
            perturb_dataset(&clean, &dist, cfg.perturb.center_crop).map_err(stage("perturb"))?;
        let dir = pert.join(split);
        write_dataset(&dir, &perturbed).map_err(stage("perturb"))?;
        write_manifest(&dir, &m).map_err(stage("perturb"))?;
        manifests.push(m);
    }
    let [dt, dv] = split_dirs(&drive);
    let [pt, pv] = split_dirs(&pert);
    manifest::record(
        cfg,
        "perturb",
        &[("angles", angles_path), ("driving/train", dt), ("driving/val", dv)],
        &[("perturbed/train", pt), ("perturbed/val", pv)],
    )?;
    Ok(manifests)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub steering_params: usize,
    pub dae_params: usize,
    /// Steering net on clean validation images against labels.
    pub clean: Evaluation,
    /// Steering net on perturbed validation images against its clean predictions.
    pub baseline: Evaluation,
    /// Same, with the denoiser in front.
    pub denoised: Evaluation,
    #[serde(skip)]
    pub pretrain: TrainReport,
    #[serde(skip)]
    pub dae: TrainReport,
}

struct Splits {
    train: Vec<DriveSample>,
    val: Vec<DriveSample>,
    ptrain: Vec<DriveSample>,
    pval: Vec<DriveSample>,
}

fn read_splits(cfg: &RunConfig) -> Result<Splits, CliError> {
    let (drive, pert) = (cfg.driving_root(), cfg.perturbed_root());
    Ok(Splits {
        train: read_split(&drive, "train")?,
        val: read_split(&drive, "val")?,
        ptrain: read_split(&pert, "train")?,
        pval: read_split(&pert, "val")?,
    })
}

fn input_shape(data: &[DriveSample]) -> (usize, usize, usize) {
    let im = &data[0].image;
    (im.channels, im.height, im.width)
}

fn evaluations<T: Scalar>(
    net: &SteeringNet<T>,
    ae: &DenoiseAE<T>,
    d: &Splits,
) -> Result<(Evaluation, Evaluation, Evaluation), CliError> {
    let clean = evaluate(net, None, &d.val, Reference::Labels).map_err(stage("evaluate"))?;
    let reference = Reference::CleanPredictions(&d.val);
    let baseline = evaluate(net, None, &d.pval, reference).map_err(stage("evaluate"))?;
    let denoised = evaluate(net, Some(ae), &d.pval, reference).map_err(stage("evaluate"))?;
    Ok((clean, baseline, denoised))
}

fn train_typed<T: Scalar>(cfg: &RunConfig, d: &Splits) -> Result<TrainSummary, CliError> {
    let (c, h, w) = input_shape(&d.train);
    let pre_cfg = cfg.pretrain.to_train_config(cfg.seed, "pretrain");
    let dae_cfg = cfg.train.to_train_config(cfg.seed, "dae");
    let mut net = SteeringNet::<T>::new(SteeringArch::new(c, h, w), derive_seed(cfg.seed, "init/steering"))
        .map_err(stage("train"))?;
    let pretrain = pretrain_steering(&mut net, &d.train, &d.val, &pre_cfg).map_err(stage("pretrain"))?;
    net.freeze();
    let mut ae = DenoiseAE::<T>::new(DaeArch::new(c, h, w), derive_seed(cfg.seed, "init/dae"))
        .map_err(stage("train"))?;
    let dae = train_dae(
        &net,
        &mut ae,
        Pairs {
            clean: &d.train,
            perturbed: &d.ptrain,
        },
        Pairs {
            clean: &d.val,
            perturbed: &d.pval,
        },
        &dae_cfg,
    )
    .map_err(stage("train"))?;
    save_steering(&cfg.out_path(layout::STEERING_CKPT), &net).map_err(stage("train"))?;
    save_dae(&cfg.out_path(layout::DAE_CKPT), &ae).map_err(stage("train"))?;
    let (clean, baseline, denoised) = evaluations(&net, &ae, d)?;
    Ok(TrainSummary {
        steering_params: net.num_params(),
        dae_params: ae.num_params(),
        clean,
        baseline,
        denoised,
        pretrain,
        dae,
    })
}

fn timings_csv(pretrain: &TrainReport, dae: &TrainReport) -> String {
    let mut s = String::from("stage,epoch,seconds\n");
    for (name, r) in [("pretrain", pretrain), ("dae", dae)] {
        for row in &r.rows {
            let _ = writeln!(s, "{name},{},{:.3}", row.epoch, row.seconds);
        }
    }
    s
}

fn plot(report: &TrainReport) -> String {
    let pts: Vec<(f64, f64)> = report.rows.iter().map(|r| (r.epoch as f64, r.val_mse)).collect();
    line_chart(&pts, "Validation steering MSE with denoiser", "epoch", "val MSE")
}

/// Pretrains the steering net, freezes it, then trains the denoiser against it.
pub fn cmd_train(cfg: &RunConfig) -> Result<TrainSummary, CliError> {
    cfg.validate(Command::Train)?;
    let d = read_splits(cfg)?;
    let summary = match cfg.train.precision {
        Precision::F32 => train_typed::<f32>(cfg, &d)?,
        Precision::F64 => train_typed::<f64>(cfg, &d)?,
    };
    let out = |n: &str| cfg.out_path(n);
    write_file(&out(layout::STEERING_REPORT), summary.pretrain.to_csv())?;
    write_file(&out(layout::REPORT), summary.dae.to_csv())?;
    write_file(&out(layout::PLOT), plot(&summary.dae))?;
    write_file(&out(layout::TIMINGS), timings_csv(&summary.pretrain, &summary.dae))?;
    let mut json = serde_json::to_string_pretty(&summary).expect("summary serializes");
    json.push('\n');
    write_file(&out(layout::TRAIN_SUMMARY), json)?;
    let [dt, dv] = split_dirs(&cfg.driving_root());
    let [pt, pv] = split_dirs(&cfg.perturbed_root());
    manifest::record(
        cfg,
        "train",
        &[("driving/train", dt), ("driving/val", dv), ("perturbed/train", pt), ("perturbed/val", pv)],
        &[
            ("steering_ckpt", out(layout::STEERING_CKPT)),
            ("dae_ckpt", out(layout::DAE_CKPT)),
            ("steering_report", out(layout::STEERING_REPORT)),
            ("report", out(layout::REPORT)),
            ("plot", out(layout::PLOT)),
            ("train_summary", out(layout::TRAIN_SUMMARY)),
        ],
    )?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOutcome {
    pub clean: Evaluation,
    pub baseline: Evaluation,
    pub denoised: Evaluation,
    pub ratio: f64,
    pub threshold: f64,
    pub passed: bool,
}

fn eval_typed<T: Scalar>(cfg: &RunConfig, d: &Splits) -> Result<(Evaluation, Evaluation, Evaluation), CliError> {
    let net = load_steering::<T>(&cfg.out_path(layout::STEERING_CKPT)).map_err(stage("eval"))?;
    let ae = load_dae::<T>(&cfg.out_path(layout::DAE_CKPT)).map_err(stage("eval"))?;
    evaluations(&net, &ae, d)
}

/// Scores the checkpoints on the validation split. Writes `eval.json` and
/// returns the outcome; callers map `passed == false` to a threshold failure.
pub fn cmd_eval(cfg: &RunConfig) -> Result<EvalOutcome, CliError> {
    cfg.validate(Command::Eval)?;
    let d = read_splits(cfg)?;
    let (clean, baseline, denoised) = match cfg.train.precision {
        Precision::F32 => eval_typed::<f32>(cfg, &d)?,
        Precision::F64 => eval_typed::<f64>(cfg, &d)?,
    };
    let ratio = if baseline.mse > 0.0 {
        denoised.mse / baseline.mse
    } else if denoised.mse == 0.0 {
        0.0
    } else {
        f64::INFINITY
    };
    let threshold = cfg.eval.threshold;
    let outcome = EvalOutcome {
        clean,
        baseline,
        denoised,
        ratio,
        threshold,
        passed: ratio <= threshold,
    };
    let path = cfg.out_path(layout::EVAL);
    let mut json = serde_json::to_string_pretty(&outcome).expect("outcome serializes");
    json.push('\n');
    write_file(&path, json)?;
    let [pv, dv] = [cfg.perturbed_root().join("val"), cfg.driving_root().join("val")];
    manifest::record(
        cfg,
        "eval",
        &[
            ("steering_ckpt", cfg.out_path(layout::STEERING_CKPT)),
            ("dae_ckpt", cfg.out_path(layout::DAE_CKPT)),
            ("driving/val", dv),
            ("perturbed/val", pv),
        ],
        &[("eval", path)],
    )?;
    Ok(outcome)
}

/// Rebuilds `mse.svg` from `report.csv` and returns the parsed report.
pub fn cmd_report(cfg: &RunConfig) -> Result<TrainReport, CliError> {
    cfg.validate(Command::Report)?;
    let path = cfg.out_path(layout::REPORT);
    let text = fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
    let report = TrainReport::from_csv(&text).map_err(stage("report"))?;
    let svg = cfg.out_path(layout::PLOT);
    write_file(&svg, plot(&report))?;
    manifest::record(cfg, "report", &[("report", path)], &[("plot", svg)])?;
    Ok(report)
}

/// Plain-text epoch table.
pub fn report_table(report: &TrainReport) -> String {
    let mut s = format!("{:>5} {:>12} {:>12} {:>8}\n", "epoch", "train_mse", "val_mse", "val_%");
    for r in &report.rows {
        let _ = writeln!(s, "{:>5} {:>12.6} {:>12.6} {:>8.3}", r.epoch, r.train_mse, r.val_mse, r.val_percent);
    }
    s
}

/// Every stage in order: synth, reconstruct, stats, angles, perturb, train, eval, report.
pub fn run_all(cfg: &RunConfig) -> Result<EvalOutcome, CliError> {
    cmd_synth(cfg)?;
    cmd_reconstruct(cfg)?;
    cmd_stats(cfg)?;
    cmd_angles(cfg)?;
    cmd_perturb(cfg)?;
    cmd_train(cfg)?;
    let outcome = cmd_eval(cfg)?;
    cmd_report(cfg)?;
    Ok(outcome)
}
