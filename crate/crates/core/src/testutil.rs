use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::gradcheck::GradProbe;
use crate::tensor::Tensor;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn randn(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n: usize = shape.iter().product();
    let d: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
    Tensor::new(shape, d).unwrap()
}

/// Up to `per_input` spread-out indices into each input.
pub fn probes(inputs: &[Tensor], per_input: usize, rng: &mut ChaCha8Rng) -> Vec<(usize, usize)> {
    use rand::Rng;
    inputs
        .iter()
        .enumerate()
        .flat_map(|(i, t)| {
            let n = t.len();
            (0..per_input.min(n)).map(|_| (i, rng.random_range(0..n))).collect::<Vec<_>>()
        })
        .collect()
}

pub fn assert_probes(ps: &[GradProbe], tol: f64) {
    for p in ps {
        let e = p.rel_err(1e-5);
        assert!(e < tol, "gradient mismatch at input {} index {}: analytic {} numeric {} (rel {e:e})", p.input, p.index, p.analytic, p.numeric);
    }
}
