//! Reconstruction quality metrics: NMSE, PSNR and fastMRI-style SSIM, plus
//! the differentiable SSIM loss.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::math;
use crate::tensor::Tensor;

/// SSIM window and stabilizer constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SsimParams {
    pub window: usize,
    pub k1: f64,
    pub k2: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        Self { window: 7, k1: 0.01, k2: 0.03 }
    }
}

fn check_same(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, b.shape(), a.shape()));
    }
    Ok(())
}

/// `‖pred − target‖² / ‖target‖²`.
pub fn nmse(pred: &Tensor, target: &Tensor) -> Result<f64> {
    check_same("nmse", pred, target)?;
    let den: f64 = target.data().iter().map(|t| t * t).sum();
    if den == 0.0 {
        return Err(Error::Metric("nmse of an all-zero target"));
    }
    let num: f64 = pred.data().iter().zip(target.data()).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok(num / den)
}

/// `10·log10(max(target)² / mse)`; `+∞` when the prediction is exact.
pub fn psnr(pred: &Tensor, target: &Tensor) -> Result<f64> {
    check_same("psnr", pred, target)?;
    if target.is_empty() {
        return Err(Error::Metric("psnr of an empty volume"));
    }
    let peak = target.max();
    if peak <= 0.0 {
        return Err(Error::Metric("psnr needs a positive target maximum"));
    }
    let mse = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / pred.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * math::log10(peak * peak / mse))
}

/// Views a 2D `[H, W]` or 3D `[F, H, W]` volume as `[F, H, W]`.
fn frames_shape(t: &[usize]) -> Result<[usize; 3]> {
    match *t {
        [h, w] => Ok([1, h, w]),
        [f, h, w] => Ok([f, h, w]),
        _ => Err(Error::shape("ssim", &[0, 0, 0], t)),
    }
}

/// Mean local SSIM over frames, as a differentiable function of `pred`.
///
/// `pred`/`target` are `[H, W]` or `[F, H, W]`; local statistics use a
/// uniform `window²` box over the valid region with the unbiased covariance
/// factor `N/(N−1)`, and the per-frame means are averaged.
pub fn ssim_var(tape: &Tape, pred: &Var, target: &Tensor, data_range: f64, p: SsimParams) -> Result<Var> {
    if pred.shape() != target.shape() {
        return Err(Error::shape("ssim", target.shape(), pred.shape()));
    }
    let [f, h, w] = frames_shape(target.shape())?;
    if h < p.window || w < p.window {
        return Err(Error::Metric("image smaller than the SSIM window"));
    }
    let x = tape.reshape(pred, &[f, h, w]);
    let yt = target.clone().reshape(&[f, h, w])?;
    let y = Var::constant(yt.clone());
    let np = (p.window * p.window) as f64;
    let cov_norm = np / (np - 1.0);
    let c1 = (p.k1 * data_range) * (p.k1 * data_range);
    let c2 = (p.k2 * data_range) * (p.k2 * data_range);
    let k = p.window;

    let ux = tape.box_filter(&x, k);
    let uy = tape.box_filter(&y, k);
    let uxx = tape.box_filter(&tape.mul(&x, &x), k);
    let uyy = tape.box_filter(&Var::constant(yt.map(|v| v * v)), k);
    let uxy = tape.box_filter(&tape.mul_const(&x, &yt), k);
    let ux2 = tape.mul(&ux, &ux);
    let uy2 = tape.mul(&uy, &uy);
    let uxuy = tape.mul(&ux, &uy);
    let vx = tape.scale(&tape.sub(&uxx, &ux2), cov_norm);
    let vy = tape.scale(&tape.sub(&uyy, &uy2), cov_norm);
    let vxy = tape.scale(&tape.sub(&uxy, &uxuy), cov_norm);
    let a1 = tape.add_scalar(&tape.scale(&uxuy, 2.0), c1);
    let a2 = tape.add_scalar(&tape.scale(&vxy, 2.0), c2);
    let b1 = tape.add_scalar(&tape.add(&ux2, &uy2), c1);
    let b2 = tape.add_scalar(&tape.add(&vx, &vy), c2);
    let s = tape.div(&tape.mul(&a1, &a2), &tape.mul(&b1, &b2));
    // frames have equal size, so the global mean is the mean of frame means
    Ok(tape.mean(&s))
}

/// Mean SSIM with the data range set to the target maximum.
pub fn ssim(pred: &Tensor, target: &Tensor) -> Result<f64> {
    ssim_with(pred, target, target.max(), SsimParams::default())
}

pub fn ssim_with(pred: &Tensor, target: &Tensor, data_range: f64, p: SsimParams) -> Result<f64> {
    check_same("ssim", pred, target)?;
    let t = Tape::inference();
    Ok(ssim_var(&t, &Var::constant(pred.clone()), target, data_range, p)?.value().data()[0])
}

/// `1 − ssim(pred, target)` on the tape.
pub fn ssim_loss(tape: &Tape, pred: &Var, target: &Tensor) -> Result<Var> {
    let s = ssim_var(tape, pred, target, target.max(), SsimParams::default())?;
    Ok(tape.add_scalar(&tape.scale(&s, -1.0), 1.0))
}

/// One evaluated reconstruction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub case: String,
    pub task: String,
    pub accel: usize,
    pub model: String,
    pub stage: String,
    pub nmse: f64,
    pub psnr: f64,
    pub ssim: f64,
}

impl MetricRow {
    pub fn key(&self) -> GroupKey {
        GroupKey {
            task: self.task.clone(),
            accel: self.accel,
            model: self.model.clone(),
            stage: self.stage.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct GroupKey {
    pub task: String,
    pub accel: usize,
    pub model: String,
    pub stage: String,
}

/// Means over one group of rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub key: GroupKey,
    pub cases: usize,
    pub nmse: f64,
    /// Mean over finite values only; `NaN` if none are finite.
    pub psnr: f64,
    /// Number of rows whose infinite PSNR was left out of the mean.
    pub psnr_excluded: usize,
    pub ssim: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub rows: Vec<MetricRow>,
}

impl MetricReport {
    pub fn push(&mut self, row: MetricRow) {
        self.rows.push(row);
    }

    /// Per-group means, sorted by key; independent of row order.
    pub fn aggregate(&self) -> Vec<Aggregate> {
        let mut groups: BTreeMap<GroupKey, Vec<&MetricRow>> = BTreeMap::new();
        for r in &self.rows {
            groups.entry(r.key()).or_default().push(r);
        }
        groups
            .into_iter()
            .map(|(key, rows)| {
                let n = rows.len() as f64;
                let mut finite: Vec<f64> = rows.iter().map(|r| r.psnr).filter(|p| p.is_finite()).collect();
                finite.sort_by(f64::total_cmp);
                let psnr = if finite.is_empty() {
                    f64::NAN
                } else {
                    finite.iter().sum::<f64>() / finite.len() as f64
                };
                Aggregate {
                    cases: rows.len(),
                    nmse: sorted_sum(rows.iter().map(|r| r.nmse)) / n,
                    psnr,
                    psnr_excluded: rows.len() - finite.len(),
                    ssim: sorted_sum(rows.iter().map(|r| r.ssim)) / n,
                    key,
                }
            })
            .collect()
    }
}

/// Sum in sorted order so the result does not depend on input order.
fn sorted_sum(v: impl Iterator<Item = f64>) -> f64 {
    let mut v: Vec<f64> = v.collect();
    v.sort_by(f64::total_cmp);
    v.iter().sum()
}
