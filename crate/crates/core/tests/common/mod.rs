#![allow(dead_code)]

use promptmr_core::physics::ComplexArray;
use promptmr_core::{Complex64, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn randn(shape: &[usize], r: &mut ChaCha8Rng) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| StandardNormal.sample(r)).collect()).unwrap()
}

pub fn randc(shape: &[usize], r: &mut ChaCha8Rng) -> ComplexArray {
    let n: usize = shape.iter().product();
    let d = (0..n)
        .map(|_| Complex64::new(StandardNormal.sample(r), StandardNormal.sample(r)))
        .collect();
    ComplexArray::new(shape, d).unwrap()
}

pub fn crel(a: &ComplexArray, b: &ComplexArray) -> f64 {
    assert_eq!(a.shape(), b.shape());
    let num: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).norm_sqr()).sum();
    let den: f64 = b.data().iter().map(|y| y.norm_sqr()).sum();
    (num / den.max(1e-300)).sqrt()
}

pub fn zrel(a: Complex64, b: Complex64) -> f64 {
    (a - b).norm() / a.norm().max(b.norm()).max(1e-300)
}

/// Direct O(N²) centered orthonormal 2D DFT (sign −1 forward, +1 inverse).
pub fn direct_dft2c(x: &ComplexArray, inverse: bool) -> ComplexArray {
    let s = x.shape();
    let (h, w) = (s[0], s[1]);
    let sign = if inverse { 1.0 } else { -1.0 };
    let norm = 1.0 / ((h * w) as f64).sqrt();
    let mut out = vec![Complex64::new(0.0, 0.0); h * w];
    // centered: index i corresponds to coordinate i − ⌊n/2⌋
    for ky in 0..h {
        for kx in 0..w {
            let (u, v) = (ky as f64 - (h / 2) as f64, kx as f64 - (w / 2) as f64);
            let mut acc = Complex64::new(0.0, 0.0);
            for y in 0..h {
                for xx in 0..w {
                    let (py, px) = (y as f64 - (h / 2) as f64, xx as f64 - (w / 2) as f64);
                    let ph = sign * 2.0 * std::f64::consts::PI * (u * py / h as f64 + v * px / w as f64);
                    acc += x.data()[y * w + xx] * Complex64::from_polar(1.0, ph);
                }
            }
            out[ky * w + kx] = acc * norm;
        }
    }
    ComplexArray::new(&[h, w], out).unwrap()
}
