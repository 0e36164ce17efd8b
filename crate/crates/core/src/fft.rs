//! Discrete Fourier transforms.
//!
//! Power-of-two lengths use an iterative radix-2 kernel; every other length
//! goes through Bluestein's chirp-z reformulation on a padded radix-2 plan.
//! The 2D helpers implement the centered, orthonormal convention used by the
//! measurement model: `fftshift(fft2(ifftshift(x))) / sqrt(H·W)`.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use num_complex::Complex64;

use crate::math;

#[derive(Debug, Clone)]
pub struct FftPlan {
    n: usize,
    kind: PlanKind,
}

#[derive(Debug, Clone)]
enum PlanKind {
    Radix2 {
        twiddles: Vec<Complex64>,
        bitrev: Vec<usize>,
    },
    Bluestein {
        inner: Radix2Plan,
        chirp: Vec<Complex64>,
        kernel_hat: Vec<Complex64>,
    },
}

#[derive(Debug, Clone)]
struct Radix2Plan {
    n: usize,
    twiddles: Vec<Complex64>,
    bitrev: Vec<usize>,
}

impl Radix2Plan {
    fn new(n: usize) -> Self {
        debug_assert!(n.is_power_of_two());
        let bits = n.trailing_zeros();
        let bitrev = (0..n)
            .map(|i| {
                if bits == 0 {
                    0
                } else {
                    i.reverse_bits() >> (usize::BITS - bits)
                }
            })
            .collect();
        let twiddles = (0..n / 2)
            .map(|k| {
                let a = -2.0 * PI * k as f64 / n as f64;
                Complex64::new(math::cos(a), math::sin(a))
            })
            .collect();
        Self {
            n,
            twiddles,
            bitrev,
        }
    }

    fn forward(&self, buf: &mut [Complex64]) {
        radix2(buf, &self.twiddles, &self.bitrev, self.n);
    }
}

fn radix2(buf: &mut [Complex64], twiddles: &[Complex64], bitrev: &[usize], n: usize) {
    for i in 0..n {
        let j = bitrev[i];
        if j > i {
            buf.swap(i, j);
        }
    }
    let mut len = 2;
    while len <= n {
        let half = len / 2;
        let stride = n / len;
        for start in (0..n).step_by(len) {
            for k in 0..half {
                let w = twiddles[k * stride];
                let a = buf[start + k];
                let b = buf[start + k + half] * w;
                buf[start + k] = a + b;
                buf[start + k + half] = a - b;
            }
        }
        len <<= 1;
    }
}

impl FftPlan {
    pub fn new(n: usize) -> Self {
        assert!(n > 0, "FFT length must be positive");
        if n.is_power_of_two() {
            let p = Radix2Plan::new(n);
            return Self {
                n,
                kind: PlanKind::Radix2 {
                    twiddles: p.twiddles,
                    bitrev: p.bitrev,
                },
            };
        }
        let m = (2 * n - 1).next_power_of_two();
        let inner = Radix2Plan::new(m);
        // k^2 is reduced mod 2n so the phase argument stays small.
        let chirp: Vec<Complex64> = (0..n)
            .map(|k| {
                let k2 = (k * k) % (2 * n);
                let a = -PI * k2 as f64 / n as f64;
                Complex64::new(math::cos(a), math::sin(a))
            })
            .collect();
        let mut kernel = vec![Complex64::new(0.0, 0.0); m];
        kernel[0] = chirp[0].conj();
        for k in 1..n {
            kernel[k] = chirp[k].conj();
            kernel[m - k] = chirp[k].conj();
        }
        inner.forward(&mut kernel);
        Self {
            n,
            kind: PlanKind::Bluestein {
                inner,
                chirp,
                kernel_hat: kernel,
            },
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Unnormalized forward DFT, `X_k = Σ x_j e^{-2πi jk/n}`.
    pub fn forward(&self, buf: &mut [Complex64]) {
        debug_assert_eq!(buf.len(), self.n);
        match &self.kind {
            PlanKind::Radix2 { twiddles, bitrev } => radix2(buf, twiddles, bitrev, self.n),
            PlanKind::Bluestein {
                inner,
                chirp,
                kernel_hat,
            } => {
                let m = inner.n;
                let mut a = vec![Complex64::new(0.0, 0.0); m];
                for k in 0..self.n {
                    a[k] = buf[k] * chirp[k];
                }
                inner.forward(&mut a);
                for (x, h) in a.iter_mut().zip(kernel_hat) {
                    *x *= h;
                }
                // inverse via conjugation
                for x in a.iter_mut() {
                    *x = x.conj();
                }
                inner.forward(&mut a);
                let scale = 1.0 / m as f64;
                for k in 0..self.n {
                    buf[k] = a[k].conj() * scale * chirp[k];
                }
            }
        }
    }

    /// Unnormalized inverse DFT, `x_j = Σ X_k e^{+2πi jk/n}`.
    pub fn inverse(&self, buf: &mut [Complex64]) {
        for x in buf.iter_mut() {
            *x = x.conj();
        }
        self.forward(buf);
        for x in buf.iter_mut() {
            *x = x.conj();
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Direction {
    Forward,
    Inverse,
}

/// Centered orthonormal 2D transform over the trailing `[h, w]` axes of a
/// batch of images stored contiguously.
pub fn fft2c_inplace(data: &mut [Complex64], h: usize, w: usize) {
    transform2c(data, h, w, Direction::Forward);
}

pub fn ifft2c_inplace(data: &mut [Complex64], h: usize, w: usize) {
    transform2c(data, h, w, Direction::Inverse);
}

fn transform2c(data: &mut [Complex64], h: usize, w: usize, dir: Direction) {
    let plane = h * w;
    assert!(plane > 0 && data.len() % plane == 0);
    let row_plan = FftPlan::new(w);
    let col_plan = FftPlan::new(h);
    let scale = 1.0 / math::sqrt(plane as f64);
    let mut line = vec![Complex64::new(0.0, 0.0); h.max(w)];
    let mut out = vec![Complex64::new(0.0, 0.0); plane];
    for img in data.chunks_exact_mut(plane) {
        // ifftshift on input indices, fftshift on output indices, both axes.
        // Rows first: gather with the input shift along x.
        for r in 0..h {
            let src_r = (r + h / 2) % h;
            let row = &img[src_r * w..(src_r + 1) * w];
            for c in 0..w {
                line[c] = row[(c + w / 2) % w];
            }
            let l = &mut line[..w];
            match dir {
                Direction::Forward => row_plan.forward(l),
                Direction::Inverse => row_plan.inverse(l),
            }
            // out row r holds the ifftshifted row src_r, spectrum along x
            // placed with the output fftshift.
            for c in 0..w {
                out[r * w + (c + w / 2) % w] = l[c];
            }
        }
        for c in 0..w {
            for r in 0..h {
                line[r] = out[r * w + c];
            }
            let l = &mut line[..h];
            match dir {
                Direction::Forward => col_plan.forward(l),
                Direction::Inverse => col_plan.inverse(l),
            }
            for r in 0..h {
                img[((r + h / 2) % h) * w + c] = l[r] * scale;
            }
        }
    }
}
