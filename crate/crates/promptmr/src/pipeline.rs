//! The six pipeline commands over on-disk datasets and checkpoints.

use std::fs;
use std::path::{Path, PathBuf};

use promptmr_core::metrics::{Aggregate, MetricReport};
use promptmr_core::physics::{apply_mask, zero_filled, FrameAxis, UndersampleMask};
use promptmr_core::unrolled::{prompt_rows, PromptRow, Stage1, UnrolledModel};
use promptmr_core::nn::ParamStore;

use crate::checkpoint::{load_stage1, load_stage2, load_train_state};
use crate::config::{ReconConfig, Task};
use crate::container::{mask_array, read_case, ArrayData, Container, KIND_RECON};
use crate::dataset::{case_dir, eval_mask, load_split, simulate_dataset, LoadedCase, Split, SplitManifest};
use crate::error::{AppError, AppResult};
use crate::report::{score, write_report, ZERO_FILLED};
use crate::train::{
    freeze_stage1, train_stage1, train_stage2, val_subset, LoopConfig, Stage1Data, BEST_DIR, STATE_DIR,
};

pub fn stage1_dir(cfg: &ReconConfig) -> PathBuf {
    cfg.checkpoint_dir.join("stage1")
}

pub fn stage2_dir(cfg: &ReconConfig) -> PathBuf {
    cfg.checkpoint_dir.join("stage2")
}

pub fn recon_dir(cfg: &ReconConfig) -> PathBuf {
    cfg.output_dir.join("recon")
}

fn require_dir(p: &Path, what: &str) -> AppResult<()> {
    if p.is_dir() {
        Ok(())
    } else {
        Err(AppError::Config(format!("{what} {} does not exist", p.display())))
    }
}

pub fn cmd_simulate(cfg: &ReconConfig) -> AppResult<SplitManifest> {
    let root = cfg.data_root();
    let m = simulate_dataset(cfg, &root)?;
    log::info!("simulated {} cases under {}", m.cases.len(), root.display());
    Ok(m)
}

fn task_for_axis(axis: FrameAxis) -> Task {
    match axis {
        FrameAxis::Temporal => Task::Temporal,
        FrameAxis::Contrast => Task::Contrast,
    }
}

/// Trains Stage I and returns the best-checkpoint directory.
pub fn cmd_train_stage1(cfg: &ReconConfig, resume: bool) -> AppResult<PathBuf> {
    let root = cfg.data_root();
    require_dir(&root, "dataset root")?;
    let train = load_split(&root, Split::Train, cfg.task)?;
    let val = load_split(&root, Split::Val, cfg.task)?;
    let model_cfg = cfg.stage1.unrolled()?;
    let out = stage1_dir(cfg);
    cfg.write_frozen(&out)?;
    let lc = LoopConfig::from_config(cfg, &cfg.train_stage1, train.len());
    let data = Stage1Data {
        train: &train,
        val: val_subset(&val, &cfg.train_stage1),
        accelerations: cfg.accelerations.clone(),
        mask: cfg.mask,
        val_frame_stride: cfg.train_stage1.val_frame_stride,
    };
    let state = if resume {
        let (_, template) = UnrolledModel::new(&model_cfg, cfg.seed)?;
        Some(load_train_state(&out.join(STATE_DIR), &template)?.1)
    } else {
        None
    };
    log::info!("stage I: {} training cases, {} parameters", train.len(), crate::config::param_count(&model_cfg)?);
    train_stage1(&model_cfg, &lc, &data, cfg.seed, Some(&out), state, None)?;
    Ok(out.join(BEST_DIR))
}

/// Trains Stage II on frozen Stage-I outputs.
pub fn cmd_train_stage2(cfg: &ReconConfig, stage1_ckpt: Option<&Path>, resume: bool) -> AppResult<PathBuf> {
    let root = cfg.data_root();
    require_dir(&root, "dataset root")?;
    let s1 = stage1_ckpt.map(Path::to_path_buf).unwrap_or_else(|| stage1_dir(cfg).join(BEST_DIR));
    require_dir(&s1, "stage-1 checkpoint")?;
    let (model, store) = load_stage1(&s1)?;
    let train = load_split(&root, Split::Train, cfg.task)?;
    let val = load_split(&root, Split::Val, cfg.task)?;
    let train_refs: Vec<&LoadedCase> = train.iter().collect();
    let frozen_train = freeze_stage1(&model, &store, &train_refs, &cfg.accelerations, &cfg.mask)?;
    let frozen_val = freeze_stage1(&model, &store, &val_subset(&val, &cfg.train_stage2), &cfg.accelerations, &cfg.mask)?;
    let out = stage2_dir(cfg);
    cfg.write_frozen(&out)?;
    let lc = LoopConfig::from_config(cfg, &cfg.train_stage2, frozen_train.len());
    let state = if resume {
        let (_, template) = promptmr_core::refine::Refiner::new(&cfg.stage2, cfg.seed)?;
        Some(load_train_state(&out.join(STATE_DIR), &template)?.1)
    } else {
        None
    };
    train_stage2(&cfg.stage2, &lc, &frozen_train, &frozen_val, cfg.seed, Some(&out), state, None)?;
    Ok(out.join(BEST_DIR))
}

/// Reconstruction container for one case at one acceleration.
pub fn reconstruction_container(
    name: &str,
    case: &LoadedCase,
    accel: usize,
    mask: &UndersampleMask,
    family: &str,
    stages: &[(&str, promptmr_core::Tensor)],
    source: &Path,
) -> Container {
    let mut c = Container::new(KIND_RECON, case.record.kspace.frame_axis);
    c.manifest.mask = Some(mask.clone());
    let meta = &mut c.manifest.meta;
    meta.insert("case".into(), name.into());
    meta.insert("task".into(), case.task.as_str().into());
    meta.insert("accel".into(), accel.to_string());
    meta.insert("model".into(), family.into());
    meta.insert("stages".into(), stages.iter().map(|s| s.0).collect::<Vec<_>>().join(","));
    meta.insert("source".into(), source.display().to_string());
    for (stage, img) in stages {
        c.insert(stage, &["frame", "ky", "kx"], ArrayData::Real(img.clone()));
    }
    c.insert("mask", &["ky"], mask_array(mask));
    c
}

fn family_name(model: &UnrolledModel) -> String {
    serde_json::to_value(model.config().model_family)
        .ok()
        .and_then(|v| v.as_str().map(String::from))
        .unwrap_or_default()
}

/// Reconstructs the given case directories (default: the test split) at
/// every configured acceleration.
pub fn cmd_reconstruct(
    cfg: &ReconConfig,
    stage1_ckpt: Option<&Path>,
    stage2_ckpt: Option<&Path>,
    case_paths: &[PathBuf],
    out_dir: Option<&Path>,
) -> AppResult<Vec<PathBuf>> {
    let s1 = stage1_ckpt.map(Path::to_path_buf).unwrap_or_else(|| stage1_dir(cfg).join(BEST_DIR));
    require_dir(&s1, "stage-1 checkpoint")?;
    let (model, store) = load_stage1(&s1)?;
    let s2_path = stage2_ckpt.map(Path::to_path_buf).unwrap_or_else(|| stage2_dir(cfg).join(BEST_DIR));
    let refiner = if s2_path.is_dir() {
        Some(load_stage2(&s2_path)?)
    } else if stage2_ckpt.is_some() {
        return Err(AppError::Config(format!("stage-2 checkpoint {} does not exist", s2_path.display())));
    } else {
        log::warn!("no stage-2 checkpoint at {}; writing stage-I outputs only", s2_path.display());
        None
    };
    let paths: Vec<PathBuf> = if case_paths.is_empty() {
        let root = cfg.data_root();
        crate::dataset::read_split_manifest(&root)?
            .cases
            .iter()
            .filter(|c| c.split == Split::Test && cfg.task.includes(c.task))
            .map(|c| case_dir(&root, &c.name))
            .collect()
    } else {
        case_paths.to_vec()
    };
    let out_root = out_dir.map(Path::to_path_buf).unwrap_or_else(|| recon_dir(cfg));
    let family = family_name(&model);
    let s1 = Stage1 { model: &model, store: &store };
    let mut written = Vec::new();
    for p in &paths {
        let record = read_case(p)?;
        let name = p
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .ok_or_else(|| AppError::Data(format!("{}: no case name", p.display())))?;
        let case = LoadedCase { name: name.clone(), task: task_for_axis(record.kspace.frame_axis), record };
        let source = fs::canonicalize(p).map_err(|e| AppError::io(p, e))?;
        for &acc in &cfg.accelerations {
            let mask = eval_mask(&cfg.mask, case.record.kspace.dims()[2], acc, &name)?;
            let y = apply_mask(&case.record.kspace, &mask)?;
            let stage1 = s1.reconstruct(&y, &mask)?;
            let mut stages = vec![("stage1", stage1.clone())];
            if let Some((r, rs)) = &refiner {
                stages.push(("stage2", r.refine(rs, &stage1)?));
            }
            let c = reconstruction_container(&name, &case, acc, &mask, &family, &stages, &source);
            let dir = out_root.join(format!("{name}_x{acc}"));
            c.write(&dir)?;
            written.push(dir);
        }
        log::info!("reconstructed {name}");
    }
    Ok(written)
}

/// Scores every reconstruction under `dir` against its source case and
/// writes `report.csv` / `report.txt` to the output directory.
pub fn cmd_evaluate(cfg: &ReconConfig, dir: Option<&Path>) -> AppResult<Vec<Aggregate>> {
    let dir = dir.map(Path::to_path_buf).unwrap_or_else(|| recon_dir(cfg));
    require_dir(&dir, "reconstruction directory")?;
    let mut entries: Vec<PathBuf> = fs::read_dir(&dir)
        .map_err(|e| AppError::io(&dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join(crate::container::MANIFEST).is_file())
        .collect();
    entries.sort();
    if entries.is_empty() {
        return Err(AppError::Data(format!("no reconstructions under {}", dir.display())));
    }
    let mut report = MetricReport::default();
    for e in &entries {
        let c = Container::read(e)?;
        if c.manifest.kind != KIND_RECON {
            continue;
        }
        let (case, task, model) = (c.meta("case")?, c.meta("task")?, c.meta("model")?);
        let accel: usize = c.meta("accel")?.parse().map_err(|_| AppError::Data(format!("{}: bad accel", e.display())))?;
        let source = PathBuf::from(c.meta("source")?);
        let record = read_case(&source)?;
        let mask = c
            .manifest
            .mask
            .clone()
            .ok_or_else(|| AppError::Data(format!("{}: manifest lacks mask", e.display())))?;
        let zf = zero_filled(&record.kspace, &mask)?;
        report.push(score(case, task, accel, ZERO_FILLED, "zf", &zf, &record.target)?);
        for stage in c.meta("stages")?.split(',') {
            report.push(score(case, task, accel, model, stage, c.real(stage)?, &record.target)?);
        }
    }
    let aggs = write_report(&report, &cfg.output_dir)?;
    print!("{}", crate::report::table(&aggs));
    Ok(aggs)
}

/// Prompt-weight rows at one acceleration for each case.
pub fn prompt_features(
    model: &UnrolledModel,
    store: &ParamStore,
    cases: &[&LoadedCase],
    accel: usize,
    mask: &crate::config::MaskConfig,
    cascade: usize,
) -> AppResult<Vec<(Task, PromptRow)>> {
    let s1 = Stage1 { model, store };
    let mut out = Vec::new();
    for c in cases {
        let m = eval_mask(mask, c.record.kspace.dims()[2], accel, &c.name)?;
        let y = apply_mask(&c.record.kspace, &m)?;
        let traces = s1.prompt_weights(&y, &m, cascade)?;
        out.extend(prompt_rows(&c.name, &traces).into_iter().map(|r| (c.task, r)));
    }
    Ok(out)
}

/// Writes `prompts.csv` with columns case, task, accel, cascade, frame,
/// level, w0..w(N-1); rows with fewer components leave trailing cells
/// empty.
pub fn cmd_export_prompts(cfg: &ReconConfig, ckpt: Option<&Path>) -> AppResult<PathBuf> {
    let s1 = ckpt.map(Path::to_path_buf).unwrap_or_else(|| stage1_dir(cfg).join(BEST_DIR));
    require_dir(&s1, "stage-1 checkpoint")?;
    let (model, store) = load_stage1(&s1)?;
    let cascades = model.config().cascades;
    let cascade = cfg.export.cascade.unwrap_or(cascades - 1);
    if cascade >= cascades {
        return Err(AppError::Config(format!("export.cascade {cascade} >= cascades {cascades}")));
    }
    let split = Split::parse(&cfg.export.split)?;
    let cases = load_split(&cfg.data_root(), split, cfg.task)?;
    let refs: Vec<&LoadedCase> = cases.iter().collect();
    let acc = cfg.export.acceleration;
    let rows = prompt_features(&model, &store, &refs, acc, &cfg.mask, cascade)?;
    let width = rows.iter().map(|(_, r)| r.weights.len()).max().unwrap_or(0);
    fs::create_dir_all(&cfg.output_dir).map_err(|e| AppError::io(&cfg.output_dir, e))?;
    let path = cfg.output_dir.join("prompts.csv");
    let err = |e: csv::Error| AppError::Data(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(&path).map_err(err)?;
    let mut header: Vec<String> = ["case", "task", "accel", "cascade", "frame", "level"].map(String::from).into();
    header.extend((0..width).map(|i| format!("w{i}")));
    w.write_record(&header).map_err(err)?;
    for (task, r) in &rows {
        let mut rec = vec![
            r.case.clone(),
            task.as_str().into(),
            acc.to_string(),
            cascade.to_string(),
            r.frame.to_string(),
            r.level.to_string(),
        ];
        rec.extend((0..width).map(|i| r.weights.get(i).map(|v| format!("{v:.9}")).unwrap_or_default()));
        w.write_record(&rec).map_err(err)?;
    }
    w.flush().map_err(|e| AppError::io(&path, e))?;
    Ok(path)
}
