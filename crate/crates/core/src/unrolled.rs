//! Stage I: sensitivity-map estimation followed by `T` cascades of the
//! adjacent-frame k-space update
//!
//! ```text
//! k ← k − η·M(k − y) + F E D(R F⁻¹ k)
//! ```
//!
//! Frames of the adjacent stack are packed into the denoiser's channels.
//! The center frame of the final stack is coil-combined by RSS.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::nn::{Bound, Init, NetConfig, ParamId, ParamStore, Unet};
use crate::metrics::ssim_loss;
use crate::phantom::{adjacent_indices, Boundary};
use crate::physics::{CoilSensitivities, ComplexArray, KSpaceVolume, UndersampleMask};
use crate::tensor::Tensor;

/// Small constant keeping the scale normalization finite on empty inputs.
const SCALE_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelFamily {
    BaselineCaunet,
    Promptmr,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnrolledConfig {
    pub cascades: usize,
    /// Adjacency half-width `a`; the stack holds `2a + 1` frames.
    pub adjacency: usize,
    pub model_family: ModelFamily,
    #[serde(default)]
    pub share_weights: bool,
    pub denoiser: NetConfig,
    pub sme: NetConfig,
}

impl UnrolledConfig {
    /// Consistent denoiser / SME configs for `family`.
    pub fn new(family: ModelFamily, cascades: usize, adjacency: usize, den_width: usize, sme_width: usize) -> Self {
        let ch = 2 * (2 * adjacency + 1);
        let (denoiser, sme) = match family {
            ModelFamily::BaselineCaunet => (NetConfig::caunet(ch, ch, den_width), NetConfig::caunet(2, 2, sme_width)),
            ModelFamily::Promptmr => (
                NetConfig::prompt_unet(ch, ch, den_width),
                NetConfig::prompt_unet(2, 2, sme_width),
            ),
        };
        Self {
            cascades,
            adjacency,
            model_family: family,
            share_weights: false,
            denoiser,
            sme,
        }
    }

    /// 12 cascades, `a = 2`, denoiser width 32, SME width 8.
    pub fn desk(family: ModelFamily) -> Self {
        Self::new(family, 12, 2, 32, 8)
    }

    pub fn frames(&self) -> usize {
        2 * self.adjacency + 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.cascades == 0 {
            return Err(Error::config("cascades must be >= 1"));
        }
        let ch = 2 * self.frames();
        if self.denoiser.in_channels != ch || self.denoiser.out_channels != ch {
            return Err(Error::config(format!(
                "denoiser must map {ch} channels to {ch} for adjacency {}",
                self.adjacency
            )));
        }
        if self.sme.in_channels != 2 || self.sme.out_channels != 2 {
            return Err(Error::config("sme must map 2 channels to 2"));
        }
        let prompts = self.model_family == ModelFamily::Promptmr;
        if self.denoiser.use_prompts != prompts {
            return Err(Error::config("denoiser prompt usage must match the model family"));
        }
        self.denoiser.validate()?;
        self.sme.validate()
    }
}

/// Stage-I network and its parameter ids.
#[derive(Debug, Clone)]
pub struct UnrolledModel {
    cfg: UnrolledConfig,
    sme: Unet,
    denoisers: Vec<Unet>,
    etas: Vec<ParamId>,
}

impl UnrolledModel {
    /// Builds the model with seeded initialization. The SME and every
    /// denoiser start with zeroed output layers, so an untrained model
    /// reproduces data-consistent zero-filling with ACS-ratio maps.
    pub fn new(cfg: &UnrolledConfig, seed: u64) -> Result<(Self, ParamStore)> {
        cfg.validate()?;
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut init = Init { store: &mut store, rng: &mut rng };
        let sme = Unet::new(&mut init, "sme", &cfg.sme)?;
        let n_den = if cfg.share_weights { 1 } else { cfg.cascades };
        let denoisers = (0..n_den)
            .map(|t| Unet::new(&mut init, &format!("den{t}"), &cfg.denoiser))
            .collect::<Result<Vec<_>>>()?;
        let etas = (0..cfg.cascades)
            .map(|t| init.constant(format!("eta{t}"), &[1], 1.0))
            .collect();
        sme.zero_output(&mut store);
        for d in &denoisers {
            d.zero_output(&mut store);
        }
        Ok((
            Self {
                cfg: cfg.clone(),
                sme,
                denoisers,
                etas,
            },
            store,
        ))
    }

    pub fn config(&self) -> &UnrolledConfig {
        &self.cfg
    }

    pub fn eta(&self, t: usize) -> ParamId {
        self.etas[t]
    }

    pub fn denoiser(&self, t: usize) -> &Unet {
        &self.denoisers[if self.cfg.share_weights { 0 } else { t }]
    }

    pub fn sme(&self) -> &Unet {
        &self.sme
    }

    /// Coil maps `[C, H, W, 2]` from the ACS block of one frame
    /// `[C, H, W, 2]` of (masked) k-space.
    pub fn estimate_sensitivities_var(&self, tape: &Tape, p: &Bound, y_frame: &Var, mask: &UndersampleMask) -> Result<Var> {
        let s = y_frame.shape().to_vec();
        if s.len() != 4 || s[3] != 2 || s[1] != mask.len() {
            return Err(Error::shape("estimate_sensitivities", &[0, mask.len(), 0, 2], &s));
        }
        if mask.acs_lines == 0 || !mask.acs_range().any(|i| mask.keep[i]) {
            return Err(Error::config("mask has an empty ACS region"));
        }
        let acs = line_mask_tensor(&s, &acs_keep(mask));
        let x = tape.ifft2c(&tape.mul_const(y_frame, &acs));
        let (c, h, w) = (s[0], s[1], s[2]);
        // fold coils into the batch: [C, H, W, 2] → [C, 2, H, W]
        let ch = tape.reshape(&tape.complex_to_channels(&x), &[c, 2, h, w]);
        let out = scaled(tape, &ch, |t, v| self.sme.forward(t, p, v));
        let back = tape.channels_to_complex(&tape.reshape(&out, &[1, 2 * c, h, w]));
        Ok(tape.normalize_coils(&tape.add(&x, &back)))
    }

    /// Denoiser of cascade `t` on packed `[1, 2F, H, W]` channels, applied
    /// as `s · D(x / s)` with `s` the RMS of `x`.
    pub fn denoise(&self, tape: &Tape, p: &Bound, t: usize, x: &Var, trace: Option<&mut Vec<Tensor>>) -> Var {
        let net = self.denoiser(t);
        scaled(tape, x, |tp, v| net.forward_traced(tp, p, v, trace))
    }

    /// Runs all cascades on `[F, C, H, W, 2]` stacks and returns the final
    /// k-space stack. When `trace` is given, prompt weights of cascade
    /// `trace.0` are appended to `trace.1`.
    pub fn run_cascades(
        &self,
        tape: &Tape,
        p: &Bound,
        y_adj: &Var,
        mask: &UndersampleMask,
        sens: &Var,
        mut trace: Option<(usize, &mut Vec<Tensor>)>,
    ) -> Var {
        let m = line_mask_tensor(y_adj.shape(), &mask.keep);
        let mut k = y_adj.clone();
        for t in 0..self.cfg.cascades {
            let tr = match trace.as_mut() {
                Some((c, v)) if *c == t => Some(&mut **v),
                _ => None,
            };
            let g = regularizer_g(tape, &k, sens, |tp, x| self.denoise(tp, p, t, x, tr));
            k = cascade_update(tape, &k, y_adj, &m, p.get(self.etas[t]), &g);
        }
        k
    }

    /// Stage-I magnitude `[1, H, W]` of the center frame of one stack.
    pub fn forward_center(&self, tape: &Tape, p: &Bound, y_adj: &Var, mask: &UndersampleMask, sens: &Var) -> Var {
        let k = self.run_cascades(tape, p, y_adj, mask, sens, None);
        let center = tape.index0(&k, self.cfg.adjacency);
        let s = center.shape().to_vec();
        let coils = tape.reshape(&tape.ifft2c(&center), &[1, s[0], s[1], s[2], 2]);
        tape.rss(&coils)
    }

    /// SSIM loss of the center-frame reconstruction of masked `y` against
    /// `target` `[1, H, W]`; maps are estimated on the same tape.
    pub fn center_loss(
        &self,
        tape: &Tape,
        p: &Bound,
        y: &KSpaceVolume,
        mask: &UndersampleMask,
        center: usize,
        target: &Tensor,
    ) -> Result<Var> {
        let yc = Var::constant(y.frame(sensitivity_frame(y.n_frames()))?.to_tensor());
        let sens = self.estimate_sensitivities_var(tape, p, &yc, mask)?;
        let y_adj = Var::constant(self.adjacent_input(y, center, Boundary::for_axis(y.frame_axis))?);
        let out = self.forward_center(tape, p, &y_adj, mask, &sens);
        ssim_loss(tape, &out, target)
    }

    /// Masked stack around `center` as a `[2a+1, C, H, W, 2]` tensor.
    pub fn adjacent_input(&self, y: &KSpaceVolume, center: usize, boundary: Boundary) -> Result<Tensor> {
        let idx = adjacent_indices(y.n_frames(), center, self.cfg.adjacency, boundary)?;
        let frames = idx.iter().map(|&i| y.frame(i)).collect::<Result<Vec<_>>>()?;
        Ok(ComplexArray::stack(&frames)?.to_tensor())
    }
}

/// Frame used for sensitivity estimation.
pub fn sensitivity_frame(n_frames: usize) -> usize {
    n_frames / 2
}

/// `x ↦ s · f(x / s)` with `s = √mean(x²)`.
fn scaled(tape: &Tape, x: &Var, f: impl FnOnce(&Tape, &Var) -> Var) -> Var {
    let s = tape.add_scalar(&tape.sqrt(&tape.mean(&tape.mul(x, x))), SCALE_EPS);
    let xn = tape.mul_scalar_var(x, &tape.recip(&s));
    let y = f(tape, &xn);
    tape.mul_scalar_var(&y, &s)
}

fn acs_keep(mask: &UndersampleMask) -> Vec<bool> {
    let r = mask.acs_range();
    (0..mask.len()).map(|i| r.contains(&i) && mask.keep[i]).collect()
}

/// 0/1 tensor of `shape = [..., ky, kx, 2]` keeping the lines in `keep`.
pub fn line_mask_tensor(shape: &[usize], keep: &[bool]) -> Tensor {
    let n = shape.len();
    let (ky, kx) = (shape[n - 3], shape[n - 2]);
    assert_eq!(ky, keep.len(), "mask length");
    let outer: usize = shape[..n - 3].iter().product();
    let mut d = Vec::with_capacity(outer * ky * kx * 2);
    for _ in 0..outer {
        for &k in keep {
            let v = if k { 1.0 } else { 0.0 };
            d.extend(core::iter::repeat_n(v, kx * 2));
        }
    }
    Tensor::new(shape, d).expect("mask shape")
}

/// `G(k) = F E D(R F⁻¹ k)` for `k: [F, C, H, W, 2]` and maps `[C, H, W, 2]`;
/// `denoise` maps `[1, 2F, H, W]` channels to the same shape.
pub fn regularizer_g(tape: &Tape, k: &Var, sens: &Var, denoise: impl FnOnce(&Tape, &Var) -> Var) -> Var {
    let imgs = tape.ifft2c(k);
    let x = tape.coil_reduce(&imgs, sens);
    let d = denoise(tape, &tape.complex_to_channels(&x));
    let dx = tape.channels_to_complex(&d);
    tape.fft2c(&tape.coil_expand(&dx, sens))
}

/// `k − η·M(k − y) + g`, with `mask` a 0/1 tensor shaped like `k`.
pub fn cascade_update(tape: &Tape, k: &Var, y: &Var, mask: &Tensor, eta: &Var, g: &Var) -> Var {
    let dc = tape.mul_const(&tape.sub(k, y), mask);
    let step = tape.mul_scalar_var(&dc, eta);
    tape.add(&tape.sub(k, &step), g)
}

/// Complex-array view of the cascade state.
#[derive(Debug, Clone, PartialEq)]
pub struct CascadeState {
    pub k_adj: ComplexArray,
    pub y_adj: ComplexArray,
    pub mask: UndersampleMask,
    pub sens: CoilSensitivities,
    pub eta: f64,
}

impl CascadeState {
    /// One update with an arbitrary channel-space denoiser.
    pub fn step(&self, denoise: impl FnOnce(&Tape, &Var) -> Var) -> Result<CascadeState> {
        if self.k_adj.shape() != self.y_adj.shape() {
            return Err(Error::shape("cascade_update", self.y_adj.shape(), self.k_adj.shape()));
        }
        let tape = Tape::inference();
        let k = Var::constant(self.k_adj.to_tensor());
        let y = Var::constant(self.y_adj.to_tensor());
        let sens = Var::constant(self.sens.maps.to_tensor());
        let m = line_mask_tensor(k.shape(), &self.mask.keep);
        let g = regularizer_g(&tape, &k, &sens, denoise);
        let next = cascade_update(&tape, &k, &y, &m, &Var::constant(Tensor::scalar(self.eta)), &g);
        Ok(CascadeState {
            k_adj: ComplexArray::from_tensor(next.value())?,
            ..self.clone()
        })
    }
}

/// Inference-time helper holding a model and its parameters.
pub struct Stage1<'a> {
    pub model: &'a UnrolledModel,
    pub store: &'a ParamStore,
}

impl Stage1<'_> {
    /// Sensitivity maps for a (masked) case, estimated from its center frame.
    pub fn estimate_sensitivities(&self, y: &KSpaceVolume, mask: &UndersampleMask) -> Result<CoilSensitivities> {
        let tape = Tape::inference();
        let p = self.store.bind(&tape);
        let f = Var::constant(y.frame(sensitivity_frame(y.n_frames()))?.to_tensor());
        let s = self.model.estimate_sensitivities_var(&tape, &p, &f, mask)?;
        CoilSensitivities::new(ComplexArray::from_tensor(s.value())?)
    }

    /// Per-frame Stage-I magnitudes `[F, H, W]` for masked k-space `y`.
    pub fn reconstruct(&self, y: &KSpaceVolume, mask: &UndersampleMask) -> Result<Tensor> {
        let frames: Vec<usize> = (0..y.n_frames()).collect();
        self.reconstruct_frames(y, mask, &frames)
    }

    /// Stage-I magnitudes `[frames.len(), H, W]` for the listed centers.
    pub fn reconstruct_frames(&self, y: &KSpaceVolume, mask: &UndersampleMask, frames: &[usize]) -> Result<Tensor> {
        let [f, _, h, w] = y.dims();
        if let Some(&bad) = frames.iter().find(|&&c| c >= f) {
            return Err(Error::Index { index: bad, len: f });
        }
        if mask.len() != h {
            return Err(Error::shape("reconstruct_stage1", &[h], &[mask.len()]));
        }
        let sens = Var::constant(self.estimate_sensitivities(y, mask)?.maps.to_tensor());
        let boundary = Boundary::for_axis(y.frame_axis);
        let tape = Tape::inference();
        let p = self.store.bind(&tape);
        let mut out = Vec::with_capacity(frames.len() * h * w);
        for &center in frames {
            let y_adj = Var::constant(self.model.adjacent_input(y, center, boundary)?);
            let img = self.model.forward_center(&tape, &p, &y_adj, mask, &sens);
            if !img.value().all_finite() {
                return Err(Error::Divergence(format!("non-finite stage-I output at frame {center}")));
            }
            out.extend_from_slice(img.value().data());
        }
        Tensor::new(&[frames.len(), h, w], out)
    }

    /// Prompt weights `[level][Np]` at cascade `cascade` for every center
    /// frame of a case, finest level first.
    pub fn prompt_weights(&self, y: &KSpaceVolume, mask: &UndersampleMask, cascade: usize) -> Result<Vec<Vec<Tensor>>> {
        if self.model.cfg.model_family != ModelFamily::Promptmr {
            return Err(Error::config("prompt export needs a promptmr model"));
        }
        if cascade >= self.model.cfg.cascades {
            return Err(Error::Index { index: cascade, len: self.model.cfg.cascades });
        }
        let sens = Var::constant(self.estimate_sensitivities(y, mask)?.maps.to_tensor());
        let boundary = Boundary::for_axis(y.frame_axis);
        let tape = Tape::inference();
        let p = self.store.bind(&tape);
        (0..y.n_frames())
            .map(|center| {
                let y_adj = Var::constant(self.model.adjacent_input(y, center, boundary)?);
                let mut tr = Vec::new();
                self.model.run_cascades(&tape, &p, &y_adj, mask, &sens, Some((cascade, &mut tr)));
                Ok(tr)
            })
            .collect()
    }
}

/// One exported prompt-weight row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptRow {
    pub case: String,
    pub frame: usize,
    pub level: usize,
    pub weights: Vec<f64>,
}

/// Flattens per-frame prompt traces into rows.
pub fn prompt_rows(case: &str, traces: &[Vec<Tensor>]) -> Vec<PromptRow> {
    let mut rows = vec![];
    for (frame, levels) in traces.iter().enumerate() {
        for (level, w) in levels.iter().enumerate() {
            rows.push(PromptRow {
                case: case.into(),
                frame,
                level,
                weights: w.data().to_vec(),
            });
        }
    }
    rows
}
