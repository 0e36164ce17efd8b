mod common;

use common::{randn, rng};
use promptmr_core::autograd::Tape;
use promptmr_core::gradcheck::probe_gradients;
use promptmr_core::metrics::{nmse, psnr, ssim, ssim_loss, ssim_with, SsimParams};
use promptmr_core::Tensor;
use rand::Rng;

/// Direct per-window SSIM: every 7×7 window's statistics recomputed from
/// scratch, unbiased covariance, then the mean over windows and frames.
fn oracle_ssim(x: &Tensor, y: &Tensor, range: f64) -> f64 {
    let s = x.shape();
    let (f, h, w) = if s.len() == 2 { (1, s[0], s[1]) } else { (s[0], s[1], s[2]) };
    let k = 7usize;
    let n = (k * k) as f64;
    let (c1, c2) = ((0.01 * range).powi(2), (0.03 * range).powi(2));
    let mut total = 0.0;
    for fr in 0..f {
        let at = |d: &Tensor, r: usize, c: usize| d.data()[fr * h * w + r * w + c];
        let mut acc = 0.0;
        for r0 in 0..=h - k {
            for c0 in 0..=w - k {
                let (mut mx, mut my) = (0.0, 0.0);
                for r in r0..r0 + k {
                    for c in c0..c0 + k {
                        mx += at(x, r, c);
                        my += at(y, r, c);
                    }
                }
                mx /= n;
                my /= n;
                let (mut vx, mut vy, mut cxy) = (0.0, 0.0, 0.0);
                for r in r0..r0 + k {
                    for c in c0..c0 + k {
                        let (dx, dy) = (at(x, r, c) - mx, at(y, r, c) - my);
                        vx += dx * dx;
                        vy += dy * dy;
                        cxy += dx * dy;
                    }
                }
                vx /= n - 1.0;
                vy /= n - 1.0;
                cxy /= n - 1.0;
                acc += (2.0 * mx * my + c1) * (2.0 * cxy + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
            }
        }
        total += acc / ((h - k + 1) * (w - k + 1)) as f64;
    }
    total / f as f64
}

fn oracle_nmse(x: &Tensor, y: &Tensor) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..x.len() {
        num += (x.data()[i] - y.data()[i]).powi(2);
        den += y.data()[i].powi(2);
    }
    num / den
}

fn oracle_psnr(x: &Tensor, y: &Tensor) -> f64 {
    let mut mse = 0.0;
    let mut peak = f64::MIN;
    for i in 0..x.len() {
        mse += (x.data()[i] - y.data()[i]).powi(2);
        peak = peak.max(y.data()[i]);
    }
    mse /= x.len() as f64;
    20.0 * peak.log10() - 10.0 * mse.log10()
}

fn random_pair(seed: u64) -> (Tensor, Tensor) {
    let mut r = rng(seed);
    let f = r.random_range(1..3);
    let h = r.random_range(7..15);
    let w = r.random_range(7..15);
    let t = randn(&[f, h, w], &mut r).map(|v| v.abs());
    let noise = randn(&[f, h, w], &mut r);
    let p = Tensor::new(
        &[f, h, w],
        t.data().iter().zip(noise.data()).map(|(a, b)| (a + 0.3 * b).max(0.0)).collect(),
    )
    .unwrap();
    (p, t)
}

#[test]
fn metrics_match_brute_force_oracles() {
    for seed in 0..10 {
        let (p, t) = random_pair(seed);
        assert!((nmse(&p, &t).unwrap() - oracle_nmse(&p, &t)).abs() < 1e-9);
        assert!((psnr(&p, &t).unwrap() - oracle_psnr(&p, &t)).abs() < 1e-9);
        assert!((ssim(&p, &t).unwrap() - oracle_ssim(&p, &t, t.max())).abs() < 1e-9);
    }
}

#[test]
fn constant_prediction_against_structured_target() {
    let t = Tensor::new(
        &[16, 16],
        (0..256).map(|i| ((i / 16) as f64 * 0.4).sin().abs() + (i % 16) as f64 / 16.0).collect(),
    )
    .unwrap();
    let p = Tensor::full(&[16, 16], 0.5);
    let got = ssim(&p, &t).unwrap();
    assert!((got - oracle_ssim(&p, &t, t.max())).abs() < 1e-6);
    assert!((-1.0..=1.0).contains(&got));
}

#[test]
fn ssim_range_property() {
    for seed in 20..30 {
        let (p, t) = random_pair(seed);
        let v = ssim_with(&p.map(|x| -x), &t, 1.0, SsimParams::default()).unwrap();
        assert!((-1.0..=1.0).contains(&v));
    }
}

#[test]
fn ssim_loss_gradient_matches_finite_differences() {
    let (p, t) = random_pair(40);
    let mut r = rng(41);
    let probes: Vec<(usize, usize)> = (0..20).map(|_| (0, r.random_range(0..p.len()))).collect();
    let res = probe_gradients(&[p], &probes, 1e-5, |tape: &Tape, v| ssim_loss(tape, &v[0], &t).unwrap());
    for g in res {
        assert!(g.rel_err(1e-5) < 1e-4, "{g:?}");
    }
}
