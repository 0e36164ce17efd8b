#![allow(dead_code)]

use std::path::Path;

use promptmr::config::ReconConfig;

/// Smallest configuration that exercises every stage.
pub const TINY: &str = r#"
seed: 3
data:
  grid: [16, 16]
  n_coils: 2
  n_frames: 4
  cases: {train: 2, val: 1, test: 1}
accelerations: [4]
mask: {acs_lines: 4}
stage1:
  cascades: 2
  adjacency: 1
  denoiser_width: 4
  sme_width: 4
  cab_per_block: 1
  reduction: 2
  prompt_components: 2
  prompt_sizes: [4, 2, 1]
stage2:
  n_unets: 1
  base_width: 4
  shift_groups: 2
  shift_offsets: [-1, 0, 1]
  boundary: cyclic
  cab_per_block: 1
  reduction: 2
train_stage1: {epochs: 2, steps_per_epoch: 3}
train_stage2: {epochs: 1, steps_per_epoch: 3}
export: {split: test, acceleration: 4}
"#;

/// Tiny config with data, checkpoints and outputs under `dir`.
pub fn tiny(dir: &Path) -> ReconConfig {
    let mut c = ReconConfig::from_yaml(TINY).unwrap();
    c.data.root = Some(dir.join("data"));
    c.checkpoint_dir = dir.join("runs");
    c.output_dir = dir.join("out");
    c.validate().unwrap();
    c
}

pub fn write_tiny_yaml(dir: &Path) -> std::path::PathBuf {
    let p = dir.join("tiny.yaml");
    std::fs::write(&p, TINY).unwrap();
    p
}
