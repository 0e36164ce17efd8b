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

/// `‖a − b‖ / ‖b‖` over complex entries.
pub fn crel(a: &ComplexArray, b: &ComplexArray) -> f64 {
    assert_eq!(a.shape(), b.shape());
    let num: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).norm_sqr()).sum();
    let den: f64 = b.data().iter().map(|y| y.norm_sqr()).sum();
    (num / den.max(1e-300)).sqrt()
}

pub fn zrel(a: Complex64, b: Complex64) -> f64 {
    (a - b).norm() / a.norm().max(b.norm()).max(1e-300)
}

/// `‖a − b‖ / ‖b‖` over real entries.
pub fn rel(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
    let den: f64 = b.iter().map(|y| y * y).sum();
    (num / den.max(1e-300)).sqrt()
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len().max(1) as f64
}
