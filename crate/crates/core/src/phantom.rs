//! Synthetic multi-coil cine / multi-contrast phantoms.
//!
//! Each case is a torso ellipse with a left-ventricle-like ring (myocardium
//! around a blood pool), two lungs and a bright spine, carrying a smooth
//! phase. Geometry and intensities are jittered per seed so that different
//! cases differ. In temporal mode the blood-pool radius follows one
//! sinusoidal cardiac cycle over the frame axis; in contrast mode geometry
//! is frozen and the fluid tissues (blood, fat) are scaled per frame.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math;
use crate::physics::{self, CoilSensitivities, ComplexArray, FrameAxis, KSpaceVolume};
use crate::tensor::Tensor;

/// Out-of-range policy for frame indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Boundary {
    Cyclic,
    Replicate,
}

impl Boundary {
    /// Cyclic for cine (periodic), replicate for contrast series.
    pub fn for_axis(axis: FrameAxis) -> Self {
        match axis {
            FrameAxis::Temporal => Boundary::Cyclic,
            FrameAxis::Contrast => Boundary::Replicate,
        }
    }

    pub fn resolve(self, index: isize, n: usize) -> usize {
        match self {
            Boundary::Cyclic => index.rem_euclid(n as isize) as usize,
            Boundary::Replicate => index.clamp(0, n as isize - 1) as usize,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub grid: [usize; 2],
    pub n_coils: usize,
    pub n_frames: usize,
    pub frame_axis: FrameAxis,
    /// Peak blood-pool radius excursion as a fraction of the FOV.
    pub motion_amplitude: f64,
    /// Per-frame multiplier of the fluid tissues; empty means all ones.
    #[serde(default)]
    pub contrast_schedule: Vec<f64>,
    /// Standard deviation of complex k-space noise, relative to the largest
    /// noiseless k-space magnitude of the case.
    pub noise_std: f64,
    pub seed: u64,
}

impl PhantomSpec {
    /// 64×64, 4 coils, 12 frames, 0.5% noise.
    pub fn desk(frame_axis: FrameAxis, seed: u64) -> Self {
        let n_frames = 12;
        let contrast_schedule = match frame_axis {
            FrameAxis::Temporal => Vec::new(),
            FrameAxis::Contrast => default_contrast_schedule(n_frames),
        };
        Self {
            grid: [64, 64],
            n_coils: 4,
            n_frames,
            frame_axis,
            motion_amplitude: 0.05,
            contrast_schedule,
            noise_std: 0.005,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_frames == 0 || self.n_coils == 0 {
            return Err(Error::config("n_frames and n_coils must be >= 1"));
        }
        if self.grid[0] < 8 || self.grid[1] < 8 {
            return Err(Error::config("grid must be at least 8x8"));
        }
        if !(0.0..=0.2).contains(&self.motion_amplitude) {
            return Err(Error::config("motion_amplitude must lie in [0, 0.2]"));
        }
        if !self.contrast_schedule.is_empty() && self.contrast_schedule.len() != self.n_frames {
            return Err(Error::config("contrast_schedule needs one entry per frame"));
        }
        if self.contrast_schedule.iter().any(|c| !c.is_finite() || *c < 0.0) {
            return Err(Error::config("contrast multipliers must be finite and >= 0"));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::config("noise_std must be finite and >= 0"));
        }
        Ok(())
    }

    fn contrast(&self, frame: usize) -> f64 {
        self.contrast_schedule.get(frame).copied().unwrap_or(1.0)
    }
}

/// Linearly spaced fluid multipliers from 0.35 to 1.65.
pub fn default_contrast_schedule(n_frames: usize) -> Vec<f64> {
    if n_frames == 1 {
        return vec![1.0];
    }
    (0..n_frames)
        .map(|f| 0.35 + 1.3 * f as f64 / (n_frames - 1) as f64)
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaseRecord {
    /// Fully sampled (noisy) k-space.
    pub kspace: KSpaceVolume,
    /// RSS of the noiseless coil images, `[frame, ky, kx]`.
    pub target: Tensor,
    pub sens_true: CoilSensitivities,
    pub spec: PhantomSpec,
}

/// Seed-dependent anatomy.
#[derive(Debug, Clone, Copy)]
struct Anatomy {
    body: [f64; 4],
    heart: [f64; 2],
    pool_radius: f64,
    wall: f64,
    lungs: [[f64; 4]; 2],
    spine: [f64; 4],
    muscle: f64,
    fat: f64,
    myocardium: f64,
    blood: f64,
    phase: [f64; 3],
    texture: [[f64; 3]; 3],
}

impl Anatomy {
    fn sample(rng: &mut ChaCha8Rng) -> Self {
        let mut j = |scale: f64| scale * (2.0 * rng.random::<f64>() - 1.0);
        let body = [j(0.02), j(0.02), 0.40 + j(0.03), 0.33 + j(0.03)];
        let heart = [0.04 + j(0.04), -0.03 + j(0.04)];
        let lungs = [
            [-0.21 + j(0.02), -0.02 + j(0.03), 0.10 + j(0.015), 0.17 + j(0.02)],
            [0.22 + j(0.02), -0.02 + j(0.03), 0.09 + j(0.015), 0.16 + j(0.02)],
        ];
        let spine = [j(0.01), 0.25 + j(0.02), 0.04 + j(0.008), 0.04 + j(0.008)];
        Self {
            body,
            heart,
            pool_radius: 0.085 + j(0.012),
            wall: 0.045 + j(0.008),
            lungs,
            spine,
            muscle: 0.45 + j(0.06),
            fat: 0.75 + j(0.08),
            myocardium: 0.35 + j(0.05),
            blood: 0.95 + j(0.05),
            phase: [j(1.5), j(1.5), j(PI)],
            texture: [[j(0.06), 1.0 + j(0.8), j(PI)], [j(0.06), 1.0 + j(0.8), j(PI)], [j(0.04), 2.0 + j(1.0), j(PI)]],
        }
    }
}

/// Blood-pool radius at frame `t` of an `n_frames`-periodic cycle.
pub fn cardiac_radius(base: f64, amplitude: f64, t: isize, n_frames: usize) -> f64 {
    let phase = 2.0 * PI * t.rem_euclid(n_frames.max(1) as isize) as f64 / n_frames.max(1) as f64;
    (base + 0.5 * amplitude * math::sin(phase)).max(0.02)
}

/// Smooth ellipse indicator, edge width ~0.7 pixels.
fn ellipse(x: f64, y: f64, e: [f64; 4], px: f64) -> f64 {
    let (dx, dy) = (x - e[0], y - e[1]);
    let d = math::sqrt((dx / e[2]) * (dx / e[2]) + (dy / e[3]) * (dy / e[3]));
    let scale = e[2].min(e[3]);
    let z = (d - 1.0) * scale / (0.7 * px);
    0.5 * (1.0 - math::tanh(z))
}

fn frame_image(spec: &PhantomSpec, a: &Anatomy, t: isize) -> ComplexArray {
    let [h, w] = spec.grid;
    let px = 1.0 / h.max(w) as f64;
    let n = spec.n_frames;
    let pool = match spec.frame_axis {
        FrameAxis::Temporal => cardiac_radius(a.pool_radius, spec.motion_amplitude, t, n),
        FrameAxis::Contrast => a.pool_radius,
    };
    let fluid = spec.contrast(t.rem_euclid(n as isize) as usize);
    let outer = pool + a.wall;
    let mut data = Vec::with_capacity(h * w);
    for r in 0..h {
        let y = (r as f64 - (h / 2) as f64) / h as f64;
        for c in 0..w {
            let x = (c as f64 - (w / 2) as f64) / w as f64;
            let body = ellipse(x, y, a.body, px);
            let fat_ring = body - ellipse(x, y, [a.body[0], a.body[1], a.body[2] - 0.035, a.body[3] - 0.035], px);
            let heart_outer = ellipse(x, y, [a.heart[0], a.heart[1], outer, outer * 0.92], px);
            let heart_inner = ellipse(x, y, [a.heart[0], a.heart[1], pool, pool * 0.92], px);
            let lungs: f64 = a.lungs.iter().map(|l| ellipse(x, y, *l, px)).sum::<f64>() * (1.0 - heart_outer);
            let spine = ellipse(x, y, a.spine, px);
            let tex: f64 = 1.0
                + a.texture
                    .iter()
                    .zip([x, y, x + y])
                    .map(|(t, u)| t[0] * math::sin(2.0 * PI * t[1] * u + t[2]))
                    .sum::<f64>();
            let muscle_region = (body - fat_ring - heart_outer - lungs - spine).max(0.0);
            let mag = a.muscle * tex * muscle_region
                + a.fat * fluid * fat_ring
                + a.myocardium * tex * (heart_outer - heart_inner)
                + a.blood * fluid * heart_inner
                + 0.06 * lungs
                + 0.85 * spine;
            let phi = a.phase[0] * x + a.phase[1] * y + a.phase[2] + 1.2 * (x * x + y * y);
            data.push(Complex64::from_polar(mag.max(0.0), phi));
        }
    }
    ComplexArray::new(&[h, w], data).expect("grid shape")
}

/// Complex ground-truth image of frame `t` (any integer; periodic in
/// temporal mode).
pub fn phantom_frame(spec: &PhantomSpec, t: isize) -> Result<ComplexArray> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let a = Anatomy::sample(&mut rng);
    Ok(frame_image(spec, &a, t))
}

/// Smooth complex Gaussian coil profiles on a ring around the FOV,
/// RSS-normalized. A single coil gets the identity map.
pub fn coil_maps(grid: [usize; 2], n_coils: usize, rng: &mut ChaCha8Rng) -> Result<CoilSensitivities> {
    let [h, w] = grid;
    if n_coils == 1 {
        return Ok(CoilSensitivities::unit(h, w));
    }
    let offset = 2.0 * PI * rng.random::<f64>();
    let mut data = Vec::with_capacity(n_coils * h * w);
    for i in 0..n_coils {
        let ang = offset + 2.0 * PI * i as f64 / n_coils as f64;
        let (cx, cy) = (0.55 * math::cos(ang), 0.55 * math::sin(ang));
        let sigma = 0.38 + 0.06 * rng.random::<f64>();
        let (p0, px, py) = (
            2.0 * PI * rng.random::<f64>(),
            2.0 * (rng.random::<f64>() - 0.5),
            2.0 * (rng.random::<f64>() - 0.5),
        );
        for r in 0..h {
            let y = (r as f64 - (h / 2) as f64) / h as f64;
            for c in 0..w {
                let x = (c as f64 - (w / 2) as f64) / w as f64;
                let d2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
                let mag = math::exp(-d2 / (2.0 * sigma * sigma));
                data.push(Complex64::from_polar(mag, p0 + PI * (px * x + py * y)));
            }
        }
    }
    CoilSensitivities::normalized(ComplexArray::new(&[n_coils, h, w], data)?)
}

/// Simulates one fully sampled case; deterministic in `spec.seed`.
pub fn simulate_case(spec: &PhantomSpec) -> Result<CaseRecord> {
    spec.validate()?;
    let [h, w] = spec.grid;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let anatomy = Anatomy::sample(&mut rng);
    let sens = coil_maps(spec.grid, spec.n_coils, &mut rng)?;
    let c = spec.n_coils;
    let mut frames = Vec::with_capacity(spec.n_frames);
    let mut targets = Vec::with_capacity(spec.n_frames * h * w);
    for t in 0..spec.n_frames {
        let img = frame_image(spec, &anatomy, t as isize);
        let coils = physics::expand(&img, &sens)?;
        targets.extend_from_slice(physics::rss(&coils)?.data());
        frames.push(physics::fft2c(&coils)?);
    }
    let mut k = ComplexArray::stack(&frames)?;
    if spec.noise_std > 0.0 {
        let peak = k.data().iter().map(|v| v.norm()).fold(0.0, f64::max);
        let sd = spec.noise_std * peak / core::f64::consts::SQRT_2;
        for v in k.data_mut() {
            let re: f64 = StandardNormal.sample(&mut rng);
            let im: f64 = StandardNormal.sample(&mut rng);
            *v += Complex64::new(sd * re, sd * im);
        }
    }
    debug_assert_eq!(k.shape(), &[spec.n_frames, c, h, w]);
    Ok(CaseRecord {
        kspace: KSpaceVolume::new(k, spec.frame_axis)?,
        target: Tensor::new(&[spec.n_frames, h, w], targets)?,
        sens_true: sens,
        spec: spec.clone(),
    })
}

/// Frame indices `center − a ..= center + a` under `boundary`.
pub fn adjacent_indices(n_frames: usize, center: usize, a: usize, boundary: Boundary) -> Result<Vec<usize>> {
    if center >= n_frames {
        return Err(Error::Index { index: center, len: n_frames });
    }
    Ok((-(a as isize)..=a as isize)
        .map(|d| boundary.resolve(center as isize + d, n_frames))
        .collect())
}

/// `[2a+1, coil, ky, kx]` stack of frames around `center`.
pub fn build_adjacent_stack(k: &KSpaceVolume, center: usize, a: usize, boundary: Boundary) -> Result<ComplexArray> {
    let idx = adjacent_indices(k.n_frames(), center, a, boundary)?;
    let frames = idx.iter().map(|&i| k.frame(i)).collect::<Result<Vec<_>>>()?;
    ComplexArray::stack(&frames)
}
