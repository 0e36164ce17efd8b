//! Training loops for both stages.

use std::path::Path;

use promptmr_core::autograd::{Tape, Var};
use promptmr_core::metrics::{ssim_loss, ssim_with, SsimParams};
use promptmr_core::nn::{Bound, ParamStore};
use promptmr_core::optim::{AdamW, AdamWConfig, LrSchedule};
use promptmr_core::physics::{apply_mask, make_mask, UndersampleMask};
use promptmr_core::refine::{RefineConfig, Refiner};
use promptmr_core::unrolled::{Stage1, UnrolledConfig, UnrolledModel};
use promptmr_core::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::{save_checkpoint, save_train_state, Architecture, EpochLog, RngState, TrainState};
use crate::config::{MaskConfig, ReconConfig, TrainConfig};
use crate::dataset::{cap_per_task, eval_mask, LoadedCase};
use crate::error::{AppError, AppResult};

pub const BEST_DIR: &str = "best";
pub const STATE_DIR: &str = "state";

/// Schedule and optimizer of one run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoopConfig {
    pub epochs: usize,
    pub steps_per_epoch: usize,
    pub grad_accum: usize,
    pub schedule: LrSchedule,
    pub adamw: AdamWConfig,
}

impl LoopConfig {
    pub fn from_config(cfg: &ReconConfig, t: &TrainConfig, n_train: usize) -> Self {
        Self {
            epochs: t.epochs,
            steps_per_epoch: if t.steps_per_epoch == 0 { n_train.max(1) } else { t.steps_per_epoch },
            grad_accum: t.grad_accum,
            schedule: cfg.optimizer.schedule(t.epochs),
            adamw: cfg.optimizer.adamw(),
        }
    }
}

impl TrainState {
    pub fn fresh(params: ParamStore, adamw: AdamWConfig, seed: u64) -> Self {
        Self {
            epoch: 0,
            step: 0,
            best_val_ssim: None,
            rng: RngState::capture(&ChaCha8Rng::seed_from_u64(seed)),
            optimizer: AdamW::new(adamw, &params),
            params,
            losses: Vec::new(),
            history: Vec::new(),
        }
    }
}

pub struct TrainOutcome {
    pub state: TrainState,
    /// Best parameters seen by this run (validation before training
    /// included), or `None` if a resumed run never improved.
    pub best: Option<ParamStore>,
}

/// Runs epochs `state.epoch..stop` (all remaining when `stop` is `None`).
///
/// `loss_fn` draws one sample from the generator and returns its loss with
/// a description used in divergence diagnostics. After every epoch the
/// state is written under `out/state` and improvements under `out/best`.
pub fn train_loop(
    arch: &Architecture,
    lc: &LoopConfig,
    mut state: TrainState,
    out: Option<&Path>,
    stop: Option<usize>,
    mut loss_fn: impl FnMut(&Tape, &Bound, &mut ChaCha8Rng) -> AppResult<(Var, String)>,
    mut validate: impl FnMut(&ParamStore) -> AppResult<f64>,
) -> AppResult<TrainOutcome> {
    let mut best = None;
    if state.best_val_ssim.is_none() {
        let v = validate(&state.params)?;
        log::info!("initial validation ssim {v:.4}");
        state.best_val_ssim = Some(v);
        best = Some(state.params.clone());
        if let Some(dir) = out {
            save_checkpoint(&dir.join(BEST_DIR), arch, &state.params)?;
        }
    }
    let mut rng = state.rng.restore();
    let end = stop.unwrap_or(lc.epochs).min(lc.epochs);
    while state.epoch < end {
        let lr = lc.schedule.lr(state.epoch);
        let mut epoch_loss = 0.0;
        for _ in 0..lc.steps_per_epoch {
            let mut acc: Option<Vec<Tensor>> = None;
            let mut step_loss = 0.0;
            for _ in 0..lc.grad_accum {
                let tape = Tape::new();
                let p = state.params.bind(&tape);
                let (loss, what) = loss_fn(&tape, &p, &mut rng)?;
                let l = loss.value().data()[0];
                if !l.is_finite() {
                    return Err(AppError::Divergence(format!(
                        "loss {l} at epoch {} step {} ({what})",
                        state.epoch, state.step
                    )));
                }
                step_loss += l / lc.grad_accum as f64;
                let g = p.grads(&tape.backward(&loss));
                match acc.as_mut() {
                    None => acc = Some(g),
                    Some(a) => a.iter_mut().zip(&g).for_each(|(a, g)| a.add_assign(g)),
                }
            }
            let mut grads = acc.expect("grad_accum >= 1");
            if lc.grad_accum > 1 {
                grads.iter_mut().for_each(|g| g.scale_assign(1.0 / lc.grad_accum as f64));
            }
            state.optimizer.update(&mut state.params, &grads, lr)?;
            state.step += 1;
            state.losses.push(step_loss);
            epoch_loss += step_loss;
        }
        let val = validate(&state.params)?;
        if !val.is_finite() {
            return Err(AppError::Divergence(format!("validation ssim {val} after epoch {}", state.epoch)));
        }
        let mean_loss = epoch_loss / lc.steps_per_epoch as f64;
        log::info!("epoch {} lr {lr:.1e} loss {mean_loss:.4} val ssim {val:.4}", state.epoch);
        state.history.push(EpochLog { epoch: state.epoch, lr, mean_loss, val_ssim: val });
        state.epoch += 1;
        state.rng = RngState::capture(&rng);
        if state.best_val_ssim.is_none_or(|b| val > b) {
            state.best_val_ssim = Some(val);
            best = Some(state.params.clone());
            if let Some(dir) = out {
                save_checkpoint(&dir.join(BEST_DIR), arch, &state.params)?;
            }
        }
        if let Some(dir) = out {
            save_train_state(&dir.join(STATE_DIR), arch, &state)?;
        }
    }
    Ok(TrainOutcome { state, best })
}

/// Mask for a training draw.
pub fn sample_mask(mask: &MaskConfig, ky: usize, accel: usize, seed: u64) -> AppResult<UndersampleMask> {
    Ok(make_mask(ky, accel, mask.acs_lines.min(ky), mask.scheme, seed)?)
}

/// Sampling space of Stage-I batches.
#[derive(Debug, Clone)]
pub struct Stage1Data<'a> {
    pub train: &'a [LoadedCase],
    pub val: Vec<&'a LoadedCase>,
    pub accelerations: Vec<usize>,
    pub mask: MaskConfig,
    pub val_frame_stride: usize,
}

/// Draws `(case, acceleration, center, mask seed)` in that order.
pub fn draw(rng: &mut ChaCha8Rng, n_cases: usize, accels: &[usize], n_frames: usize) -> (usize, usize, usize, u64) {
    let c = rng.random_range(0..n_cases);
    let a = accels[rng.random_range(0..accels.len())];
    let f = rng.random_range(0..n_frames);
    (c, a, f, rng.random())
}

/// Mean SSIM of Stage-I reconstructions over validation cases and
/// accelerations, each volume scored against its own target range.
pub fn stage1_val_ssim(model: &UnrolledModel, store: &ParamStore, d: &Stage1Data) -> AppResult<f64> {
    let s1 = Stage1 { model, store };
    let mut total = 0.0;
    let mut n = 0;
    for case in &d.val {
        let rec = &case.record;
        let [f, _, ky, _] = rec.kspace.dims();
        let frames: Vec<usize> = (0..f).step_by(d.val_frame_stride).collect();
        let target = Tensor::stack(&frames.iter().map(|&i| rec.target.index0(i)).collect::<Result<Vec<_>, _>>()?)?;
        for &acc in &d.accelerations {
            let mask = eval_mask(&d.mask, ky, acc, &case.name)?;
            let y = apply_mask(&rec.kspace, &mask)?;
            let out = s1.reconstruct_frames(&y, &mask, &frames)?;
            total += ssim_with(&out, &target, rec.target.max(), SsimParams::default())?;
            n += 1;
        }
    }
    Ok(if n == 0 { 0.0 } else { total / n as f64 })
}

pub struct Stage1Run {
    pub model: UnrolledModel,
    pub outcome: TrainOutcome,
}

/// Trains a Stage-I model; `resume` continues from a saved state.
pub fn train_stage1(
    model_cfg: &UnrolledConfig,
    lc: &LoopConfig,
    data: &Stage1Data,
    seed: u64,
    out: Option<&Path>,
    resume: Option<TrainState>,
    stop: Option<usize>,
) -> AppResult<Stage1Run> {
    if data.train.is_empty() {
        return Err(AppError::Data("no training cases".into()));
    }
    let (model, store) = UnrolledModel::new(model_cfg, seed)?;
    let state = match resume {
        Some(s) => s,
        None => TrainState::fresh(store, lc.adamw, seed ^ 0x5EED),
    };
    let arch = Architecture::Stage1(model_cfg.clone());
    let outcome = train_loop(
        &arch,
        lc,
        state,
        out,
        stop,
        |tape, p, rng| {
            let n_frames = data.train[0].record.kspace.n_frames();
            let (ci, acc, center, mseed) = draw(rng, data.train.len(), &data.accelerations, n_frames);
            let case = &data.train[ci];
            let rec = &case.record;
            let center = center.min(rec.kspace.n_frames() - 1);
            let mask = sample_mask(&data.mask, rec.kspace.dims()[2], acc, mseed)?;
            let y = apply_mask(&rec.kspace, &mask)?;
            let target = rec.target.index0(center)?;
            let t = target.clone().reshape(&[1, target.shape()[0], target.shape()[1]])?;
            let loss = model.center_loss(tape, p, &y, &mask, center, &t)?;
            Ok((loss, format!("case {} x{acc} frame {center}", case.name)))
        },
        |store| stage1_val_ssim(&model, store, data),
    )?;
    Ok(Stage1Run { model, outcome })
}

/// Frozen Stage-I output for one case at one acceleration.
#[derive(Debug, Clone)]
pub struct FrozenSample {
    pub case: String,
    pub accel: usize,
    pub stage1: Tensor,
    pub target: Tensor,
}

/// Stage-I reconstructions of every case at every acceleration.
pub fn freeze_stage1(
    model: &UnrolledModel,
    store: &ParamStore,
    cases: &[&LoadedCase],
    accels: &[usize],
    mask: &MaskConfig,
) -> AppResult<Vec<FrozenSample>> {
    let s1 = Stage1 { model, store };
    let mut out = Vec::new();
    for case in cases {
        let rec = &case.record;
        for &acc in accels {
            let m = eval_mask(mask, rec.kspace.dims()[2], acc, &case.name)?;
            let y = apply_mask(&rec.kspace, &m)?;
            out.push(FrozenSample {
                case: case.name.clone(),
                accel: acc,
                stage1: s1.reconstruct(&y, &m)?,
                target: rec.target.clone(),
            });
        }
    }
    Ok(out)
}

pub fn stage2_val_ssim(r: &Refiner, store: &ParamStore, val: &[FrozenSample]) -> AppResult<f64> {
    let mut total = 0.0;
    for s in val {
        let out = r.refine(store, &s.stage1)?;
        total += ssim_with(&out, &s.target, s.target.max(), SsimParams::default())?;
    }
    Ok(if val.is_empty() { 0.0 } else { total / val.len() as f64 })
}

pub struct Stage2Run {
    pub refiner: Refiner,
    pub outcome: TrainOutcome,
}

/// Trains the refiner on frozen Stage-I outputs.
pub fn train_stage2(
    cfg: &RefineConfig,
    lc: &LoopConfig,
    train: &[FrozenSample],
    val: &[FrozenSample],
    seed: u64,
    out: Option<&Path>,
    resume: Option<TrainState>,
    stop: Option<usize>,
) -> AppResult<Stage2Run> {
    if train.is_empty() {
        return Err(AppError::Data("no training samples".into()));
    }
    let (refiner, store) = Refiner::new(cfg, seed)?;
    let state = resume.unwrap_or_else(|| TrainState::fresh(store, lc.adamw, seed ^ 0x5EED));
    let arch = Architecture::Stage2(cfg.clone());
    let outcome = train_loop(
        &arch,
        lc,
        state,
        out,
        stop,
        |tape, p, rng| {
            let s = &train[rng.random_range(0..train.len())];
            let y = refiner.forward(tape, p, &Var::constant(s.stage1.clone()));
            Ok((ssim_loss(tape, &y, &s.target)?, format!("case {} x{}", s.case, s.accel)))
        },
        |store| stage2_val_ssim(&refiner, store, val),
    )?;
    Ok(Stage2Run { refiner, outcome })
}

/// Validation cases honoring the per-task cap.
pub fn val_subset<'a>(val: &'a [LoadedCase], t: &TrainConfig) -> Vec<&'a LoadedCase> {
    cap_per_task(val, t.val_max_cases)
}
