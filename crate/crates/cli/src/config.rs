//! Run configuration: a TOML file with one table per stage.
//!
//! Every field has a default, so an empty file is a valid configuration.
//! `--seed` and `--out` on the command line override the file.

use std::path::{Path, PathBuf};

use pothole_core::geometry::SignPolicy;
use pothole_core::gradstats::{Reducer, DEFAULT_CHUNKS};
use pothole_core::heightfield::{
    DEFAULT_DEPTH_SCALE_MM, DEFAULT_PIXEL_PITCH_MM, DEFAULT_SUBDIVISIONS, MAX_SUBDIVISIONS,
};
use pothole_core::neural::{OptimizerKind, Precision, Schedule, TrainConfig};
use pothole_core::rng;
use pothole_core::synthroad::MIN_SIZE;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Reconstruct,
    Stats,
    Angles,
    Synth,
    Perturb,
    Train,
    Eval,
    Report,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Reconstruct => "reconstruct",
            Command::Stats => "stats",
            Command::Angles => "angles",
            Command::Synth => "synth",
            Command::Perturb => "perturb",
            Command::Train => "train",
            Command::Eval => "eval",
            Command::Report => "report",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Unix time recorded in manifests; falls back to `SOURCE_DATE_EPOCH`, then the clock.
    pub fixed_timestamp: Option<u64>,
    pub paths: Paths,
    pub heightfield: HeightfieldSection,
    pub stats: StatsSection,
    pub geometry: GeometrySection,
    pub synth: SynthSection,
    pub perturb: PerturbSection,
    pub pretrain: TrainSection,
    pub train: TrainSection,
    pub eval: EvalSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            fixed_timestamp: None,
            paths: Paths::default(),
            heightfield: HeightfieldSection::default(),
            stats: StatsSection::default(),
            geometry: GeometrySection::default(),
            synth: SynthSection::default(),
            perturb: PerturbSection::default(),
            pretrain: TrainSection {
                epochs: 30,
                learning_rate: 3e-4,
                ..TrainSection::default()
            },
            train: TrainSection {
                batch_size: 16,
                schedule: Schedule::Cosine,
                weight_average: 0.995,
                ..TrainSection::default()
            },
            eval: EvalSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Scan triplets (`rgb/ tdisp/ label/`); defaults to `<output_root>/potholes`.
    pub pothole_root: Option<PathBuf>,
    /// Driving dataset with `train/` and `val/`; defaults to `<output_root>/driving`.
    pub driving_root: Option<PathBuf>,
    pub output_root: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            pothole_root: None,
            driving_root: None,
            output_root: PathBuf::from("out"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeightfieldSection {
    pub depth_scale: f64,
    pub pixel_pitch: f64,
    pub subdivisions: u32,
}

impl Default for HeightfieldSection {
    fn default() -> Self {
        Self {
            depth_scale: DEFAULT_DEPTH_SCALE_MM,
            pixel_pitch: DEFAULT_PIXEL_PITCH_MM,
            subdivisions: DEFAULT_SUBDIVISIONS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StatsSection {
    pub chunk_rows: usize,
    pub chunk_cols: usize,
    pub reducer: Reducer,
}

impl Default for StatsSection {
    fn default() -> Self {
        Self {
            chunk_rows: DEFAULT_CHUNKS,
            chunk_cols: DEFAULT_CHUNKS,
            reducer: Reducer::Max,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeometrySection {
    pub axle_width: f64,
    pub sign_policy: SignPolicy,
}

impl Default for GeometrySection {
    fn default() -> Self {
        Self {
            axle_width: 1780.0,
            sign_policy: SignPolicy::SymmetricRandom,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub train: usize,
    pub val: usize,
    pub width: usize,
    pub height: usize,
    pub texture: bool,
    /// Synthetic scan triplets written to the pothole root; 0 disables.
    pub potholes: usize,
    pub pothole_size: usize,
}

impl Default for SynthSection {
    fn default() -> Self {
        Self {
            train: 2000,
            val: 500,
            width: 64,
            height: 64,
            texture: true,
            potholes: 0,
            pothole_size: 100,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerturbSection {
    pub center_crop: bool,
}

/// A training block; its seed is derived from the run seed and the stage name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub schedule: Schedule,
    pub precision: Precision,
    /// Per-step decay of the weight average; 0 disables it.
    pub weight_average: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let d = TrainConfig::default();
        Self {
            epochs: d.epochs,
            batch_size: d.batch_size,
            learning_rate: d.learning_rate,
            optimizer: d.optimizer,
            schedule: d.schedule,
            precision: d.precision,
            weight_average: d.weight_average,
        }
    }
}

impl TrainSection {
    pub fn to_train_config(&self, run_seed: u64, stage: &str) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            optimizer: self.optimizer,
            schedule: self.schedule,
            seed: rng::derive_seed(run_seed, stage),
            precision: self.precision,
            weight_average: self.weight_average,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    /// Pass when denoised MSE <= threshold * no-denoiser MSE.
    pub threshold: f64,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self { threshold: 0.5 }
    }
}

/// Output file and directory names under the output root.
pub mod layout {
    pub const MESHES: &str = "meshes";
    pub const RECONSTRUCT_LOG: &str = "reconstruct.csv";
    pub const STATS: &str = "stats.csv";
    pub const ANGLES: &str = "angles.csv";
    pub const PERTURBED: &str = "perturbed";
    pub const STEERING_CKPT: &str = "steering.ckpt";
    pub const DAE_CKPT: &str = "dae.ckpt";
    pub const STEERING_REPORT: &str = "steering_report.csv";
    pub const REPORT: &str = "report.csv";
    pub const PLOT: &str = "mse.svg";
    pub const TIMINGS: &str = "timings.csv";
    pub const TRAIN_SUMMARY: &str = "train_summary.json";
    pub const EVAL: &str = "eval.json";
    pub const MANIFEST: &str = "run_manifest.json";
    pub const SPLITS: [&str; 2] = ["train", "val"];
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(vec![e.message().to_string()]))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            CliError::Config(vec![format!("cannot read config {}: {e}", path.display())])
        })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn out(&self) -> &Path {
        &self.paths.output_root
    }

    pub fn out_path(&self, name: &str) -> PathBuf {
        self.paths.output_root.join(name)
    }

    pub fn pothole_root(&self) -> PathBuf {
        self.paths
            .pothole_root
            .clone()
            .unwrap_or_else(|| self.out_path("potholes"))
    }

    pub fn driving_root(&self) -> PathBuf {
        self.paths
            .driving_root
            .clone()
            .unwrap_or_else(|| self.out_path("driving"))
    }

    pub fn perturbed_root(&self) -> PathBuf {
        self.out_path(layout::PERTURBED)
    }

    /// Range violations, independent of the command.
    pub fn range_violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        let h = &self.heightfield;
        if !(h.depth_scale.is_finite() && h.depth_scale > 0.0) {
            v.push(format!("heightfield.depth_scale must be > 0, got {}", h.depth_scale));
        }
        if !(h.pixel_pitch.is_finite() && h.pixel_pitch > 0.0) {
            v.push(format!("heightfield.pixel_pitch must be > 0, got {}", h.pixel_pitch));
        }
        if h.subdivisions > MAX_SUBDIVISIONS {
            v.push(format!(
                "heightfield.subdivisions must be <= {MAX_SUBDIVISIONS}, got {}",
                h.subdivisions
            ));
        }
        if self.stats.chunk_rows == 0 || self.stats.chunk_cols == 0 {
            v.push("stats.chunk_rows and stats.chunk_cols must be >= 1".into());
        }
        let a = self.geometry.axle_width;
        if !(a.is_finite() && a > 0.0) {
            v.push(format!("geometry.axle_width must be > 0, got {a}"));
        }
        let s = &self.synth;
        if s.train == 0 || s.val == 0 {
            v.push("synth.train and synth.val must be >= 1".into());
        }
        if s.width < MIN_SIZE || s.height < MIN_SIZE || s.width % 4 != 0 || s.height % 4 != 0 {
            v.push(format!(
                "synth.width and synth.height must be >= {MIN_SIZE} and divisible by 4, got {}x{}",
                s.width, s.height
            ));
        }
        if s.potholes > 0 && s.pothole_size < 8 {
            v.push(format!("synth.pothole_size must be >= 8, got {}", s.pothole_size));
        }
        for (name, t) in [("pretrain", &self.pretrain), ("train", &self.train)] {
            let cfg = t.to_train_config(0, name);
            v.extend(cfg.violations().into_iter().map(|m| format!("{name}.{m}")));
        }
        let th = self.eval.threshold;
        if !(th.is_finite() && th > 0.0) {
            v.push(format!("eval.threshold must be > 0, got {th}"));
        }
        v
    }

    /// Paths the command reads, which must already exist.
    pub fn required_inputs(&self, cmd: Command) -> Vec<PathBuf> {
        let drive = self.driving_root();
        let pert = self.perturbed_root();
        let splits = |root: &Path| -> Vec<PathBuf> {
            layout::SPLITS.iter().map(|s| root.join(s)).collect()
        };
        match cmd {
            Command::Reconstruct | Command::Stats => vec![self.pothole_root()],
            Command::Angles => vec![self.out_path(layout::STATS)],
            Command::Synth => vec![],
            Command::Perturb => {
                let mut v = splits(&drive);
                v.push(self.out_path(layout::ANGLES));
                v
            }
            Command::Train => [splits(&drive), splits(&pert)].concat(),
            Command::Eval => {
                let mut v = [splits(&drive), splits(&pert)].concat();
                v.push(self.out_path(layout::STEERING_CKPT));
                v.push(self.out_path(layout::DAE_CKPT));
                v
            }
            Command::Report => vec![self.out_path(layout::REPORT)],
        }
    }

    /// Every violation for running `cmd`, ranges first, then missing inputs.
    pub fn violations(&self, cmd: Command) -> Vec<String> {
        let mut v = self.range_violations();
        for p in self.required_inputs(cmd) {
            if !p.exists() {
                v.push(format!("{}: required input {} does not exist", cmd.name(), p.display()));
            }
        }
        v
    }

    pub fn validate(&self, cmd: Command) -> Result<(), CliError> {
        let v = self.violations(cmd);
        if v.is_empty() {
            Ok(())
        } else {
            Err(CliError::Config(v))
        }
    }

    /// Manifest timestamp in Unix seconds.
    pub fn timestamp(&self) -> u64 {
        if let Some(t) = self.fixed_timestamp {
            return t;
        }
        if let Some(t) = std::env::var("SOURCE_DATE_EPOCH").ok().and_then(|s| s.parse().ok()) {
            return t;
        }
        std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(RunConfig::from_toml("").unwrap(), RunConfig::default());
    }

    #[test]
    fn toml_round_trip() {
        let mut c = RunConfig::default();
        c.stats.reducer = Reducer::P95;
        c.geometry.sign_policy = SignPolicy::AlwaysPositive;
        c.train.optimizer = OptimizerKind::MomentumSgd;
        c.paths.pothole_root = Some("/data/p".into());
        assert_eq!(RunConfig::from_toml(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn unknown_keys_are_config_errors() {
        let e = RunConfig::from_toml("[stats]\nchunks = 3\n").unwrap_err();
        assert_eq!(e.exit_code(), 2);
    }

    #[test]
    fn all_range_violations_are_listed() {
        let mut c = RunConfig::default();
        c.heightfield.depth_scale = -1.0;
        c.geometry.axle_width = 0.0;
        c.train.epochs = 0;
        c.pretrain.learning_rate = 0.0;
        c.synth.width = 30;
        assert_eq!(c.range_violations().len(), 5, "{:?}", c.range_violations());
    }

    #[test]
    fn missing_inputs_are_listed_per_command() {
        let mut c = RunConfig::default();
        c.paths.output_root = "/nonexistent/out".into();
        assert_eq!(c.violations(Command::Synth).len(), 0);
        assert_eq!(c.violations(Command::Perturb).len(), 3);
        assert_eq!(c.violations(Command::Eval).len(), 6);
    }
}
