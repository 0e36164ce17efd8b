//! Parameter checkpoints (`f32`, portable) and full-precision training
//! state for bit-exact resume.

use std::fs;
use std::path::Path;

use promptmr_core::nn::ParamStore;
use promptmr_core::optim::AdamW;
use promptmr_core::refine::{RefineConfig, Refiner};
use promptmr_core::unrolled::{UnrolledConfig, UnrolledModel};
use promptmr_core::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{AppError, AppResult};

pub const CKPT_MAGIC: &str = "PROMPTMR-CKPT";
pub const STATE_MAGIC: &str = "PROMPTMR-TRAINSTATE";
pub const CKPT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "stage", content = "config", rename_all = "snake_case")]
pub enum Architecture {
    Stage1(UnrolledConfig),
    Stage2(RefineConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset into `params.bin`.
    pub offset: u64,
    pub byte_length: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub magic: String,
    pub format_version: u32,
    pub architecture: Architecture,
    pub params: Vec<ParamEntry>,
}

fn read_json<T: for<'de> Deserialize<'de>>(p: &Path) -> AppResult<T> {
    let text = fs::read_to_string(p).map_err(|e| AppError::io(p, e))?;
    serde_json::from_str(&text).map_err(|e| AppError::Data(format!("{}: {e}", p.display())))
}

fn write_file(p: &Path, bytes: &[u8]) -> AppResult<()> {
    fs::write(p, bytes).map_err(|e| AppError::io(p, e))
}

fn check_header(p: &Path, magic: &str, version: u32, want_magic: &str) -> AppResult<()> {
    if magic != want_magic {
        return Err(AppError::Data(format!("{}: bad magic {magic:?}", p.display())));
    }
    if version != CKPT_VERSION {
        return Err(AppError::Data(format!("{}: unsupported format_version {version}", p.display())));
    }
    Ok(())
}

pub fn save_checkpoint(dir: &Path, architecture: &Architecture, store: &ParamStore) -> AppResult<()> {
    fs::create_dir_all(dir).map_err(|e| AppError::io(dir, e))?;
    let mut bytes = Vec::with_capacity(store.numel() * 4);
    let mut params = Vec::with_capacity(store.len());
    for id in store.ids() {
        let t = store.get(id);
        let offset = bytes.len() as u64;
        bytes.extend(t.data().iter().flat_map(|v| (*v as f32).to_le_bytes()));
        params.push(ParamEntry {
            name: store.name(id).into(),
            shape: t.shape().to_vec(),
            offset,
            byte_length: t.len() as u64 * 4,
        });
    }
    write_file(&dir.join("params.bin"), &bytes)?;
    let m = CheckpointManifest {
        magic: CKPT_MAGIC.into(),
        format_version: CKPT_VERSION,
        architecture: architecture.clone(),
        params,
    };
    write_file(&dir.join("manifest.json"), serde_json::to_string_pretty(&m).expect("serializes").as_bytes())
}

/// Manifest and named tensors of a checkpoint.
pub fn read_checkpoint(dir: &Path) -> AppResult<(Architecture, Vec<(String, Tensor)>)> {
    let mp = dir.join("manifest.json");
    let m: CheckpointManifest = read_json(&mp)?;
    check_header(&mp, &m.magic, m.format_version, CKPT_MAGIC)?;
    let bp = dir.join("params.bin");
    let bytes = fs::read(&bp).map_err(|e| AppError::io(&bp, e))?;
    let mut out = Vec::with_capacity(m.params.len());
    for e in &m.params {
        let n: usize = e.shape.iter().product();
        let end = e.offset.checked_add(e.byte_length).filter(|&x| x <= bytes.len() as u64);
        if e.byte_length != n as u64 * 4 || end.is_none() {
            return Err(AppError::Data(format!("{}: bad extent for {}", bp.display(), e.name)));
        }
        let raw = &bytes[e.offset as usize..(e.offset + e.byte_length) as usize];
        let data = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
            .collect();
        out.push((e.name.clone(), Tensor::new(&e.shape, data)?));
    }
    Ok((m.architecture, out))
}

fn fill_store(store: &mut ParamStore, params: Vec<(String, Tensor)>, dir: &Path) -> AppResult<()> {
    if params.len() != store.len() {
        return Err(AppError::Data(format!(
            "{}: {} parameters, architecture needs {}",
            dir.display(),
            params.len(),
            store.len()
        )));
    }
    for (name, t) in params {
        store
            .set_by_name(&name, t)
            .map_err(|e| AppError::Data(format!("{}: {e}", dir.display())))?;
    }
    Ok(())
}

pub fn load_stage1(dir: &Path) -> AppResult<(UnrolledModel, ParamStore)> {
    match read_checkpoint(dir)? {
        (Architecture::Stage1(cfg), params) => {
            let (model, mut store) = UnrolledModel::new(&cfg, 0)?;
            fill_store(&mut store, params, dir)?;
            Ok((model, store))
        }
        _ => Err(AppError::Data(format!("{}: not a stage-1 checkpoint", dir.display()))),
    }
}

pub fn load_stage2(dir: &Path) -> AppResult<(Refiner, ParamStore)> {
    match read_checkpoint(dir)? {
        (Architecture::Stage2(cfg), params) => {
            let (r, mut store) = Refiner::new(&cfg, 0)?;
            fill_store(&mut store, params, dir)?;
            Ok((r, store))
        }
        _ => Err(AppError::Data(format!("{}: not a stage-2 checkpoint", dir.display()))),
    }
}

/// Exact position of a ChaCha8 stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        let mut r = ChaCha8Rng::from_seed(self.seed);
        r.set_stream(self.stream);
        r.set_word_pos(self.word_pos);
        r
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub mean_loss: f64,
    pub val_ssim: f64,
}

/// Everything needed to continue training exactly where it stopped.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    /// Next epoch to run.
    pub epoch: usize,
    pub step: u64,
    pub best_val_ssim: Option<f64>,
    pub rng: RngState,
    pub optimizer: AdamW,
    pub params: ParamStore,
    pub losses: Vec<f64>,
    pub history: Vec<EpochLog>,
}

#[derive(Serialize, Deserialize)]
struct StateManifest {
    magic: String,
    format_version: u32,
    architecture: Architecture,
    epoch: usize,
    step: u64,
    best_val_ssim: Option<f64>,
    rng: RngState,
    optimizer: promptmr_core::optim::AdamWConfig,
    optimizer_step: u64,
    params: Vec<(String, Vec<usize>)>,
    losses: Vec<f64>,
    history: Vec<EpochLog>,
}

/// `train_state.json` plus `train_state.bin` holding, per parameter, its
/// value and both optimizer moments as `f64` LE.
pub fn save_train_state(dir: &Path, architecture: &Architecture, st: &TrainState) -> AppResult<()> {
    fs::create_dir_all(dir).map_err(|e| AppError::io(dir, e))?;
    let p = &st.params;
    let mut bytes = Vec::with_capacity(p.numel() * 24);
    for (i, id) in p.ids().enumerate() {
        for buf in [p.get(id).data(), &st.optimizer.m[i], &st.optimizer.v[i]] {
            bytes.extend(buf.iter().flat_map(|v| v.to_le_bytes()));
        }
    }
    write_file(&dir.join("train_state.bin"), &bytes)?;
    let m = StateManifest {
        magic: STATE_MAGIC.into(),
        format_version: CKPT_VERSION,
        architecture: architecture.clone(),
        epoch: st.epoch,
        step: st.step,
        best_val_ssim: st.best_val_ssim,
        rng: st.rng,
        optimizer: st.optimizer.cfg,
        optimizer_step: st.optimizer.step,
        params: p.ids().map(|id| (p.name(id).to_string(), p.get(id).shape().to_vec())).collect(),
        losses: st.losses.clone(),
        history: st.history.clone(),
    };
    write_file(&dir.join("train_state.json"), serde_json::to_string(&m).expect("serializes").as_bytes())
}

/// Restores a state onto `template`, a freshly built store of the same
/// architecture.
pub fn load_train_state(dir: &Path, template: &ParamStore) -> AppResult<(Architecture, TrainState)> {
    let mp = dir.join("train_state.json");
    let m: StateManifest = read_json(&mp)?;
    check_header(&mp, &m.magic, m.format_version, STATE_MAGIC)?;
    let bp = dir.join("train_state.bin");
    let bytes = fs::read(&bp).map_err(|e| AppError::io(&bp, e))?;
    let total: usize = m.params.iter().map(|(_, s)| s.iter().product::<usize>()).sum();
    if bytes.len() != total * 24 {
        return Err(AppError::Data(format!("{}: expected {} bytes, found {}", bp.display(), total * 24, bytes.len())));
    }
    if m.params.len() != template.len() {
        return Err(AppError::Data(format!("{}: parameter count mismatch", mp.display())));
    }
    let mut vals = bytes.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")));
    let mut params = template.clone();
    let mut opt = AdamW::new(m.optimizer, template);
    opt.step = m.optimizer_step;
    for (i, (name, shape)) in m.params.iter().enumerate() {
        let n: usize = shape.iter().product();
        let value: Vec<f64> = vals.by_ref().take(n).collect();
        params
            .set_by_name(name, Tensor::new(shape, value)?)
            .map_err(|e| AppError::Data(format!("{}: {e}", mp.display())))?;
        if params.name(params.ids().nth(i).expect("index")) != name {
            return Err(AppError::Data(format!("{}: parameter order differs at {name}", mp.display())));
        }
        opt.m[i] = vals.by_ref().take(n).collect();
        opt.v[i] = vals.by_ref().take(n).collect();
    }
    Ok((
        m.architecture,
        TrainState {
            epoch: m.epoch,
            step: m.step,
            best_val_ssim: m.best_val_ssim,
            rng: m.rng,
            optimizer: opt,
            params,
            losses: m.losses,
            history: m.history,
        },
    ))
}
