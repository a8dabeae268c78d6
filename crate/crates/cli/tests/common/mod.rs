#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};

use pothole_cli::RunConfig;

/// A run small enough for a test: 32x32 frames, a few scans, short training.
pub fn tiny_config(out: &Path) -> RunConfig {
    let text = format!(
        r#"
seed = 7
fixed_timestamp = 1700000000

[paths]
output_root = "{}"

[heightfield]
subdivisions = 3

[synth]
train = 40
val = 16
width = 32
height = 32
potholes = 4
pothole_size = 40

[pretrain]
epochs = 1
batch_size = 8
learning_rate = 3e-4

[train]
epochs = 2
batch_size = 8
schedule = "cosine"
"#,
        out.display()
    );
    RunConfig::from_toml(&text).unwrap()
}

pub fn write_config(cfg: &RunConfig, path: &Path) {
    fs::write(path, cfg.to_toml()).unwrap();
}

/// Every file under `root` with its bytes, sorted by relative path.
pub fn snapshot(root: &Path, skip: &[&str]) -> Vec<(PathBuf, Vec<u8>)> {
    fn walk(dir: &Path, out: &mut Vec<PathBuf>) {
        for e in fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(&p, out);
            } else {
                out.push(p);
            }
        }
    }
    let mut files = Vec::new();
    walk(root, &mut files);
    files.sort();
    files
        .into_iter()
        .filter(|p| !skip.iter().any(|s| p.ends_with(s)))
        .map(|p| (p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap()))
        .collect()
}
