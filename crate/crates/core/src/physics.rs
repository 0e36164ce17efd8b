//! Multi-coil Cartesian measurement model.
//!
//! `A = M F E`: expand an image into coil images with the sensitivity maps,
//! take the centered orthonormal 2D FFT of each coil image, and keep only the
//! sampled phase-encode lines. The adjoint is `Aᴴ = R F⁻¹ M`.

use alloc::vec;
use alloc::vec::Vec;

use num_complex::Complex64;
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft;
use crate::math;
use crate::tensor::Tensor;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Meaning of the leading frame axis of a k-space volume.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FrameAxis {
    Temporal,
    Contrast,
}

/// Row-major complex array.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexArray {
    shape: Vec<usize>,
    data: Vec<Complex64>,
}

impl ComplexArray {
    pub fn new(shape: &[usize], data: Vec<Complex64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::shape("ComplexArray::new", &[n], &[data.len()]));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![ZERO; shape.iter().product()],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<Complex64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Trailing `(ky, kx)` dimensions.
    pub fn spatial(&self) -> Result<(usize, usize)> {
        let n = self.shape.len();
        if n < 2 {
            return Err(Error::shape("spatial axes", &[0, 0], &self.shape));
        }
        Ok((self.shape[n - 2], self.shape[n - 1]))
    }

    pub fn index0(&self, i: usize) -> Result<ComplexArray> {
        let n0 = *self.shape.first().unwrap_or(&0);
        if i >= n0 {
            return Err(Error::Index { index: i, len: n0 });
        }
        let inner: usize = self.shape[1..].iter().product();
        Ok(Self {
            shape: self.shape[1..].to_vec(),
            data: self.data[i * inner..(i + 1) * inner].to_vec(),
        })
    }

    pub fn scale(&self, a: Complex64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| v * a).collect(),
        }
    }

    pub fn add(&self, other: &ComplexArray) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::shape("add", &self.shape, &other.shape));
        }
        Ok(Self {
            shape: self.shape.clone(),
            data: self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect(),
        })
    }

    /// `⟨self, other⟩ = Σ conj(self)·other`.
    pub fn inner(&self, other: &ComplexArray) -> Complex64 {
        self.data
            .iter()
            .zip(&other.data)
            .fold(ZERO, |acc, (a, b)| acc + a.conj() * b)
    }

    pub fn norm(&self) -> f64 {
        math::sqrt(self.data.iter().map(|v| v.norm_sqr()).sum())
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.re.is_finite() && v.im.is_finite())
    }

    /// Interleaved `[..., 2]` real tensor (re, im).
    pub fn to_tensor(&self) -> Tensor {
        let mut shape = self.shape.clone();
        shape.push(2);
        let data = self.data.iter().flat_map(|c| [c.re, c.im]).collect();
        Tensor::from_parts(shape, data)
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let s = t.shape();
        if s.last() != Some(&2) {
            return Err(Error::shape("from_tensor", &[2], s));
        }
        let data = t
            .data()
            .chunks_exact(2)
            .map(|p| Complex64::new(p[0], p[1]))
            .collect();
        Ok(Self {
            shape: s[..s.len() - 1].to_vec(),
            data,
        })
    }

    pub fn stack(parts: &[ComplexArray]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::config("cannot stack zero arrays"))?;
        let mut data = Vec::with_capacity(first.len() * parts.len());
        for p in parts {
            if p.shape != first.shape {
                return Err(Error::shape("stack", &first.shape, &p.shape));
            }
            data.extend_from_slice(&p.data);
        }
        let mut shape = vec![parts.len()];
        shape.extend_from_slice(&first.shape);
        Ok(Self { shape, data })
    }
}

/// Multi-coil k-space, axes `[frame, coil, ky, kx]`.
#[derive(Debug, Clone, PartialEq)]
pub struct KSpaceVolume {
    pub data: ComplexArray,
    pub frame_axis: FrameAxis,
}

impl KSpaceVolume {
    pub fn new(data: ComplexArray, frame_axis: FrameAxis) -> Result<Self> {
        if data.shape().len() != 4 {
            return Err(Error::shape("KSpaceVolume", &[0, 0, 0, 0], data.shape()));
        }
        Ok(Self { data, frame_axis })
    }

    pub fn dims(&self) -> [usize; 4] {
        let s = self.data.shape();
        [s[0], s[1], s[2], s[3]]
    }

    pub fn n_frames(&self) -> usize {
        self.dims()[0]
    }

    pub fn n_coils(&self) -> usize {
        self.dims()[1]
    }

    /// One frame as `[coil, ky, kx]`.
    pub fn frame(&self, f: usize) -> Result<ComplexArray> {
        self.data.index0(f)
    }
}

/// Phase-encode line mask; broadcast over kx, coils and frames.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UndersampleMask {
    pub keep: Vec<bool>,
    pub acceleration: usize,
    pub acs_lines: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskScheme {
    Equispaced,
    Random,
}

impl UndersampleMask {
    pub fn full(ky: usize) -> Self {
        Self {
            keep: vec![true; ky],
            acceleration: 1,
            acs_lines: ky,
        }
    }

    pub fn len(&self) -> usize {
        self.keep.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keep.is_empty()
    }

    /// Index range of the ACS block.
    pub fn acs_range(&self) -> core::ops::Range<usize> {
        acs_range(self.keep.len(), self.acs_lines)
    }

    pub fn sampled_fraction(&self) -> f64 {
        self.keep.iter().filter(|&&k| k).count() as f64 / self.keep.len().max(1) as f64
    }

    /// Mask values as `0.0 / 1.0`.
    pub fn weights(&self) -> Vec<f64> {
        self.keep.iter().map(|&k| if k { 1.0 } else { 0.0 }).collect()
    }
}

fn acs_range(ky: usize, acs: usize) -> core::ops::Range<usize> {
    let start = ky / 2 - acs / 2;
    start..start + acs
}

/// Builds a Cartesian line mask with a fully sampled central ACS block.
///
/// `Equispaced` keeps every `acceleration`-th outer line on a grid anchored at
/// the center line. `Random` draws `round(outer / acceleration)` of the
/// outer lines uniformly without replacement (seeded), so both schemes keep
/// the same outer density.
pub fn make_mask(
    ky: usize,
    acceleration: usize,
    acs_lines: usize,
    scheme: MaskScheme,
    seed: u64,
) -> Result<UndersampleMask> {
    if acceleration == 0 {
        return Err(Error::config("acceleration must be >= 1"));
    }
    if acs_lines >= ky && acceleration > 1 {
        return Err(Error::config("acs_lines must be smaller than ky"));
    }
    if acs_lines == 0 {
        return Err(Error::config("acs_lines must be positive"));
    }
    if acceleration == 1 {
        return Ok(UndersampleMask {
            keep: vec![true; ky],
            acceleration: 1,
            acs_lines: acs_lines.min(ky),
        });
    }
    let acs = acs_range(ky, acs_lines);
    let mut keep: Vec<bool> = (0..ky).map(|i| acs.contains(&i)).collect();
    match scheme {
        MaskScheme::Equispaced => {
            let anchor = (ky / 2) % acceleration;
            for (i, k) in keep.iter_mut().enumerate() {
                if i % acceleration == anchor {
                    *k = true;
                }
            }
        }
        MaskScheme::Random => {
            let outer: Vec<usize> = (0..ky).filter(|i| !acs.contains(i)).collect();
            let extra = ((outer.len() as f64 / acceleration as f64) + 0.5) as usize;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for j in index::sample(&mut rng, outer.len(), extra.min(outer.len())) {
                keep[outer[j]] = true;
            }
        }
    }
    Ok(UndersampleMask {
        keep,
        acceleration,
        acs_lines,
    })
}

fn check_spatial(op: &'static str, x: &ComplexArray) -> Result<(usize, usize)> {
    if x.shape().len() < 2 {
        return Err(Error::shape(op, &[0, 0], x.shape()));
    }
    x.spatial()
}

/// Centered orthonormal 2D FFT over the last two axes.
pub fn fft2c(x: &ComplexArray) -> Result<ComplexArray> {
    let (h, w) = check_spatial("fft2c", x)?;
    let mut out = x.clone();
    if h * w > 0 {
        fft::fft2c_inplace(&mut out.data, h, w);
    }
    Ok(out)
}

pub fn ifft2c(k: &ComplexArray) -> Result<ComplexArray> {
    let (h, w) = check_spatial("ifft2c", k)?;
    let mut out = k.clone();
    if h * w > 0 {
        fft::ifft2c_inplace(&mut out.data, h, w);
    }
    Ok(out)
}

/// Complex coil maps `[coil, ky, kx]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoilSensitivities {
    pub maps: ComplexArray,
}

impl CoilSensitivities {
    pub fn new(maps: ComplexArray) -> Result<Self> {
        if maps.shape().len() != 3 {
            return Err(Error::shape("CoilSensitivities", &[0, 0, 0], maps.shape()));
        }
        Ok(Self { maps })
    }

    /// Divides every coil by the pixelwise root-sum-of-squares; pixels where
    /// all coils vanish stay zero.
    pub fn normalized(maps: ComplexArray) -> Result<Self> {
        let mut s = Self::new(maps)?;
        let [c, h, w] = s.dims();
        let plane = h * w;
        for p in 0..plane {
            let r = math::sqrt((0..c).map(|i| s.maps.data[i * plane + p].norm_sqr()).sum());
            for i in 0..c {
                let v = &mut s.maps.data[i * plane + p];
                *v = if r > 0.0 { *v / r } else { ZERO };
            }
        }
        Ok(s)
    }

    pub fn unit(h: usize, w: usize) -> Self {
        Self {
            maps: ComplexArray::new(&[1, h, w], vec![Complex64::new(1.0, 0.0); h * w])
                .expect("shape"),
        }
    }

    pub fn dims(&self) -> [usize; 3] {
        let s = self.maps.shape();
        [s[0], s[1], s[2]]
    }

    pub fn n_coils(&self) -> usize {
        self.dims()[0]
    }
}

/// `E(x)_i = Ŝ_i · x`.
pub fn expand(image: &ComplexArray, sens: &CoilSensitivities) -> Result<ComplexArray> {
    let [c, h, w] = sens.dims();
    if image.shape() != [h, w] {
        return Err(Error::shape("expand", &[h, w], image.shape()));
    }
    let plane = h * w;
    let mut out = Vec::with_capacity(c * plane);
    for i in 0..c {
        let s = &sens.maps.data[i * plane..(i + 1) * plane];
        out.extend(s.iter().zip(&image.data).map(|(a, b)| a * b));
    }
    ComplexArray::new(&[c, h, w], out)
}

/// `R(x) = Σ_i conj(Ŝ_i) · x_i`.
pub fn reduce(coil_images: &ComplexArray, sens: &CoilSensitivities) -> Result<ComplexArray> {
    let dims = sens.dims();
    if coil_images.shape() != dims {
        return Err(Error::shape("reduce", &dims, coil_images.shape()));
    }
    let [c, h, w] = dims;
    let plane = h * w;
    let mut out = vec![ZERO; plane];
    for i in 0..c {
        let s = &sens.maps.data[i * plane..(i + 1) * plane];
        let x = &coil_images.data[i * plane..(i + 1) * plane];
        for ((o, a), b) in out.iter_mut().zip(s).zip(x) {
            *o += a.conj() * b;
        }
    }
    ComplexArray::new(&[h, w], out)
}

/// Zeroes non-sampled ky lines of any `[..., ky, kx]` array.
pub fn mask_lines(x: &ComplexArray, keep: &[bool]) -> Result<ComplexArray> {
    let (h, w) = x.spatial()?;
    if h != keep.len() {
        return Err(Error::shape("apply_mask", &[keep.len()], &[h]));
    }
    let mut out = x.clone();
    for plane in out.data.chunks_exact_mut(h * w) {
        for (row, &k) in plane.chunks_exact_mut(w).zip(keep) {
            if !k {
                row.fill(ZERO);
            }
        }
    }
    Ok(out)
}

pub fn apply_mask(k: &KSpaceVolume, m: &UndersampleMask) -> Result<KSpaceVolume> {
    Ok(KSpaceVolume {
        data: mask_lines(&k.data, &m.keep)?,
        frame_axis: k.frame_axis,
    })
}

/// Keeps only the ACS block.
pub fn extract_acs(k: &KSpaceVolume, m: &UndersampleMask) -> Result<KSpaceVolume> {
    let r = m.acs_range();
    let keep: Vec<bool> = (0..m.len()).map(|i| r.contains(&i)).collect();
    Ok(KSpaceVolume {
        data: mask_lines(&k.data, &keep)?,
        frame_axis: k.frame_axis,
    })
}

/// `A x = M F E x` for one image; returns a single-frame volume.
pub fn forward_a(
    x: &ComplexArray,
    sens: &CoilSensitivities,
    mask: &UndersampleMask,
) -> Result<KSpaceVolume> {
    let coils = fft2c(&expand(x, sens)?)?;
    let masked = mask_lines(&coils, &mask.keep)?;
    let [c, h, w] = sens.dims();
    KSpaceVolume::new(
        ComplexArray::new(&[1, c, h, w], masked.into_data())?,
        FrameAxis::Temporal,
    )
}

/// `Aᴴ k = R F⁻¹ M k`, applied per frame; returns `[frame, ky, kx]`.
pub fn adjoint_a(
    k: &KSpaceVolume,
    sens: &CoilSensitivities,
    mask: &UndersampleMask,
) -> Result<ComplexArray> {
    let masked = mask_lines(&k.data, &mask.keep)?;
    let imgs = ifft2c(&masked)?;
    let f = k.n_frames();
    let mut frames = Vec::with_capacity(f);
    for i in 0..f {
        frames.push(reduce(&imgs.index0(i)?, sens)?);
    }
    ComplexArray::stack(&frames)
}

/// Pixelwise root-sum-of-squares over the coil axis (third from last).
pub fn rss(coil_images: &ComplexArray) -> Result<Tensor> {
    let s = coil_images.shape();
    if s.len() < 3 {
        return Err(Error::shape("rss", &[0, 0, 0], s));
    }
    let n = s.len();
    let (c, h, w) = (s[n - 3], s[n - 2], s[n - 1]);
    let plane = h * w;
    let outer: usize = s[..n - 3].iter().product();
    let mut out = vec![0.0; outer * plane];
    for o in 0..outer {
        let base = o * c * plane;
        for p in 0..plane {
            let acc: f64 = (0..c)
                .map(|i| coil_images.data[base + i * plane + p].norm_sqr())
                .sum();
            out[o * plane + p] = math::sqrt(acc);
        }
    }
    Tensor::new(&s[..n - 3].iter().chain(&[h, w]).copied().collect::<Vec<_>>(), out)
}

/// Magnitude of a complex image.
pub fn magnitude(x: &ComplexArray) -> Tensor {
    Tensor::from_parts(x.shape().to_vec(), x.data.iter().map(|v| v.norm()).collect())
}

/// `rss(ifft2c(k))` per frame: `[frame, ky, kx]`.
pub fn rss_image(k: &KSpaceVolume) -> Result<Tensor> {
    rss(&ifft2c(&k.data)?)
}

/// Zero-filled baseline: `rss(ifft2c(M k))`.
pub fn zero_filled(k: &KSpaceVolume, m: &UndersampleMask) -> Result<Tensor> {
    rss_image(&apply_mask(k, m)?)
}
