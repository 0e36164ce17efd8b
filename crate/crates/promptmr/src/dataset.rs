//! Synthetic dataset generation with a split manifest, and loading.

use std::fs;
use std::path::{Path, PathBuf};

use promptmr_core::phantom::{default_contrast_schedule, simulate_case, CaseRecord, PhantomSpec};
use promptmr_core::physics::{make_mask, UndersampleMask};
use serde::{Deserialize, Serialize};

use crate::config::{DataConfig, MaskConfig, ReconConfig, Task, TaskSet};
use crate::container::{read_case, write_case};
use crate::error::{AppError, AppResult};

pub const SPLIT_MANIFEST: &str = "split.json";
pub const CASES_DIR: &str = "cases";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> AppResult<Self> {
        Split::ALL
            .into_iter()
            .find(|x| x.as_str() == s)
            .ok_or_else(|| AppError::Config(format!("unknown split {s}")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseMeta {
    pub name: String,
    pub task: Task,
    pub split: Split,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub schema_version: u32,
    pub seed: u64,
    pub data: DataConfig,
    pub cases: Vec<CaseMeta>,
}

/// A case loaded into memory with its identity.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedCase {
    pub name: String,
    pub task: Task,
    pub record: CaseRecord,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stable 64-bit hash of a string (FNV-1a followed by a mixer).
pub fn name_hash(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.bytes() {
        h = (h ^ b as u64).wrapping_mul(0x0100_0000_01b3);
    }
    splitmix(h)
}

/// Case list for a configuration; seeds derive from the master seed and
/// the case name, so splits are disjoint and reproducible.
pub fn plan_cases(seed: u64, data: &DataConfig) -> Vec<CaseMeta> {
    let mut out = Vec::new();
    for task in Task::ALL {
        for split in Split::ALL {
            let n = match split {
                Split::Train => data.cases.train,
                Split::Val => data.cases.val,
                Split::Test => data.cases.test,
            };
            for i in 0..n {
                let name = format!("{}_{}_{i:03}", task.as_str(), split.as_str());
                let seed = splitmix(seed ^ name_hash(&name));
                out.push(CaseMeta { name, task, split, seed });
            }
        }
    }
    out
}

pub fn phantom_spec(data: &DataConfig, task: Task, seed: u64) -> PhantomSpec {
    PhantomSpec {
        grid: data.grid,
        n_coils: data.n_coils,
        n_frames: data.n_frames,
        frame_axis: task.axis(),
        motion_amplitude: data.motion_amplitude,
        contrast_schedule: match task {
            Task::Temporal => Vec::new(),
            Task::Contrast => default_contrast_schedule(data.n_frames),
        },
        noise_std: data.noise_std,
        seed,
    }
}

pub fn simulate_meta(data: &DataConfig, meta: &CaseMeta) -> AppResult<LoadedCase> {
    Ok(LoadedCase {
        name: meta.name.clone(),
        task: meta.task,
        record: simulate_case(&phantom_spec(data, meta.task, meta.seed))?,
    })
}

/// In-memory cases of one split without touching disk.
pub fn simulate_split(seed: u64, data: &DataConfig, split: Split) -> AppResult<Vec<LoadedCase>> {
    plan_cases(seed, data)
        .iter()
        .filter(|m| m.split == split)
        .map(|m| simulate_meta(data, m))
        .collect()
}

pub fn case_dir(root: &Path, name: &str) -> PathBuf {
    root.join(CASES_DIR).join(name)
}

/// Writes every case and the split manifest under `root`.
pub fn simulate_dataset(cfg: &ReconConfig, root: &Path) -> AppResult<SplitManifest> {
    let mut data = cfg.data.clone();
    data.root = None;
    let manifest = SplitManifest {
        schema_version: cfg.schema_version,
        seed: cfg.seed,
        cases: plan_cases(cfg.seed, &data),
        data,
    };
    for meta in &manifest.cases {
        let case = simulate_meta(&manifest.data, meta)?;
        write_case(&case.record, &case_dir(root, &meta.name))?;
        log::debug!("wrote {}", meta.name);
    }
    let p = root.join(SPLIT_MANIFEST);
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&p, json + "\n").map_err(|e| AppError::io(&p, e))?;
    Ok(manifest)
}

pub fn read_split_manifest(root: &Path) -> AppResult<SplitManifest> {
    let p = root.join(SPLIT_MANIFEST);
    let text = fs::read_to_string(&p).map_err(|e| AppError::io(&p, e))?;
    serde_json::from_str(&text).map_err(|e| AppError::Data(format!("{}: {e}", p.display())))
}

/// Cases of `split` whose task is in `tasks`, in manifest order.
pub fn load_split(root: &Path, split: Split, tasks: TaskSet) -> AppResult<Vec<LoadedCase>> {
    let m = read_split_manifest(root)?;
    m.cases
        .iter()
        .filter(|c| c.split == split && tasks.includes(c.task))
        .map(|c| {
            let record = read_case(&case_dir(root, &c.name))?;
            if record.kspace.frame_axis != c.task.axis() {
                return Err(AppError::Data(format!("{}: frame axis disagrees with task", c.name)));
            }
            Ok(LoadedCase { name: c.name.clone(), task: c.task, record })
        })
        .collect()
}

/// Deterministic evaluation mask for a case at one acceleration.
pub fn eval_mask(mask: &MaskConfig, ky: usize, accel: usize, case: &str) -> AppResult<UndersampleMask> {
    let seed = name_hash(&format!("{case}@x{accel}"));
    Ok(make_mask(ky, accel, mask.acs_lines.min(ky), mask.scheme, seed)?)
}

/// Keeps at most `n` cases per task type (all when `n == 0`).
pub fn cap_per_task(cases: &[LoadedCase], n: usize) -> Vec<&LoadedCase> {
    let mut seen = std::collections::BTreeMap::new();
    cases
        .iter()
        .filter(|c| {
            let k = seen.entry(c.task).or_insert(0usize);
            *k += 1;
            n == 0 || *k <= n
        })
        .collect()
}
