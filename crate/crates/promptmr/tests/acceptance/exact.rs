//! Operator, gradient, degenerate-case and metric checks.

use std::time::Instant;

use promptmr_core::autograd::{Tape, Var};
use promptmr_core::gradcheck::{probe_gradients, GradProbe};
use promptmr_core::metrics::{nmse, psnr, ssim, ssim_loss};
use promptmr_core::nn::{Bound, Cab, Init, NetConfig, ParamStore, PromptBlock, PromptLevel, Unet};
use promptmr_core::phantom::{default_contrast_schedule, simulate_case, Boundary, CaseRecord, PhantomSpec};
use promptmr_core::physics::{
    adjoint_a, apply_mask, expand, fft2c, forward_a, ifft2c, make_mask, reduce, rss, rss_image, CoilSensitivities,
    ComplexArray, FrameAxis, KSpaceVolume, MaskScheme, UndersampleMask,
};
use promptmr_core::refine::{RefineConfig, Refiner};
use promptmr_core::unrolled::{sensitivity_frame, CascadeState, ModelFamily, Stage1, UnrolledConfig, UnrolledModel};
use promptmr_core::Tensor;
use rand::Rng;

use crate::common::{crel, randc, randn, rel, rng, zrel};
use crate::Outcome;

const INSTANCES: u64 = 24;

pub fn operators() -> Outcome {
    let t0 = Instant::now();
    let mut r = rng(1);
    let (mut fft_err, mut er_err, mut a_err) = (0f64, 0f64, 0f64);
    for i in 0..INSTANCES {
        let (h, w) = [(16, 16), (9, 12), (7, 5), (32, 8)][i as usize % 4];
        let x = randc(&[2, h, w], &mut r);
        let k = fft2c(&x).unwrap();
        fft_err = fft_err
            .max(crel(&ifft2c(&k).unwrap(), &x))
            .max(crel(&fft2c(&ifft2c(&x).unwrap()).unwrap(), &x))
            .max((k.norm() - x.norm()).abs() / x.norm());

        let s = CoilSensitivities::normalized(randc(&[4, 16, 12], &mut r)).unwrap();
        let x = randc(&[16, 12], &mut r);
        let y = randc(&[4, 16, 12], &mut r);
        let lhs = expand(&x, &s).unwrap().inner(&y);
        let rhs = x.inner(&reduce(&y, &s).unwrap());
        er_err = er_err
            .max(zrel(lhs, rhs))
            .max(crel(&reduce(&expand(&x, &s).unwrap(), &s).unwrap(), &x));

        let m = make_mask(16, 2 + (i as usize % 4), 4, MaskScheme::Random, i).unwrap();
        let yk = KSpaceVolume::new(randc(&[1, 4, 16, 12], &mut r), FrameAxis::Temporal).unwrap();
        let lhs = forward_a(&x, &s, &m).unwrap().data.inner(&yk.data);
        let x1 = ComplexArray::new(&[1, 16, 12], x.data().to_vec()).unwrap();
        let rhs = x1.inner(&adjoint_a(&yk, &s, &m).unwrap());
        a_err = a_err.max(zrel(lhs, rhs));
    }
    let secs = t0.elapsed().as_secs_f64();
    let worst = fft_err.max(er_err).max(a_err);
    Outcome::new(
        worst < 1e-6 && secs < 30.0,
        format!(
            "{INSTANCES} instances each; max rel err fft {fft_err:.1e}, expand/reduce {er_err:.1e}, forward_A adjoint {a_err:.1e} (< 1e-6); {secs:.2} s (< 30 s)"
        ),
    )
}

fn grad_err(ps: &[GradProbe]) -> f64 {
    ps.iter().map(|p| p.rel_err(1e-5)).fold(0.0, f64::max)
}

/// Max relative gradient error of a random projection of `forward` over
/// random parameter entries, the first entry of every parameter whose name
/// contains `focus`, and a few input entries.
fn model_grad(store: &ParamStore, x: &Tensor, focus: &str, forward: impl Fn(&Tape, &Bound, &Var) -> Var) -> f64 {
    let mut inputs: Vec<Tensor> = store.ids().map(|id| store.get(id).clone()).collect();
    let np = inputs.len();
    inputs.push(x.clone());
    let mut r = rng(7);
    let mut ps: Vec<(usize, usize)> = (0..12)
        .map(|_| {
            let i = r.random_range(0..np);
            (i, r.random_range(0..inputs[i].len()))
        })
        .collect();
    if !focus.is_empty() {
        ps.extend(store.ids().filter(|&id| store.name(id).contains(focus)).map(|id| (id.index(), 0)));
    }
    ps.extend((0..3).map(|_| (np, r.random_range(0..x.len()))));
    let c_seed = 31;
    grad_err(&probe_gradients(&inputs, &ps, 1e-5, |t, v| {
        let bound = Bound::from_vars(v[..np].to_vec());
        let y = forward(t, &bound, &v[np]);
        let c = randn(y.shape(), &mut rng(c_seed));
        t.sum(&t.mul_const(&y, &c))
    }))
}

fn tiny_net(prompts: bool) -> NetConfig {
    let mut c = if prompts { NetConfig::prompt_unet(2, 3, 4) } else { NetConfig::caunet(2, 3, 4) };
    c.cab_per_block = 1;
    c.reduction = 2;
    if let Some(p) = c.prompt.as_mut() {
        for l in p.levels.iter_mut() {
            l.n_p = 2;
            l.h_p = 4;
            l.w_p = 3;
        }
    }
    c
}

fn tiny_unrolled(family: ModelFamily, cascades: usize, a: usize) -> UnrolledConfig {
    let mut c = UnrolledConfig::new(family, cascades, a, 4, 4);
    for net in [&mut c.denoiser, &mut c.sme] {
        net.cab_per_block = 1;
        net.reduction = 2;
        if let Some(p) = net.prompt.as_mut() {
            for (i, l) in p.levels.iter_mut().enumerate() {
                l.n_p = 3;
                l.h_p = 6 >> i;
                l.w_p = 6 >> i;
            }
        }
    }
    c
}

/// Small random values in the zero-initialized output layers so every
/// sub-network contributes.
fn randomize_outputs(store: &mut ParamStore, seed: u64) {
    let mut r = rng(seed);
    for id in store.ids().collect::<Vec<_>>() {
        if store.name(id).contains(".output.") {
            let shape = store.get(id).shape().to_vec();
            store.set(id, randn(&shape, &mut r).map(|v| 0.05 * v)).unwrap();
        }
    }
}

fn small_case(axis: FrameAxis, seed: u64, n: usize, coils: usize) -> CaseRecord {
    let mut s = PhantomSpec::desk(axis, seed);
    s.grid = [n, n];
    s.n_frames = 4;
    s.n_coils = coils;
    s.contrast_schedule = match axis {
        FrameAxis::Temporal => vec![],
        FrameAxis::Contrast => default_contrast_schedule(4),
    };
    simulate_case(&s).unwrap()
}

fn unrolled_grad() -> f64 {
    let case = small_case(FrameAxis::Temporal, 9, 8, 2);
    let cfg = tiny_unrolled(ModelFamily::Promptmr, 2, 1);
    let (model, mut store) = UnrolledModel::new(&cfg, 6).unwrap();
    randomize_outputs(&mut store, 7);
    store.get_mut(model.eta(0)).data_mut()[0] = 0.8;
    let mask = make_mask(8, 2, 2, MaskScheme::Equispaced, 0).unwrap();
    let y = apply_mask(&case.kspace, &mask).unwrap();
    let y_adj = model.adjacent_input(&y, 1, Boundary::Cyclic).unwrap();
    let y_center = y.frame(sensitivity_frame(4)).unwrap().to_tensor();
    let target = Tensor::new(&[1, 8, 8], case.target.data()[64..128].to_vec()).unwrap();
    let inputs: Vec<Tensor> = store.ids().map(|id| store.get(id).clone()).collect();
    let np = inputs.len();
    let mut r = rng(8);
    let mut probes: Vec<(usize, usize)> = (0..cfg.cascades).map(|t| (model.eta(t).index(), 0)).collect();
    for _ in 0..14 {
        let i = r.random_range(0..np);
        probes.push((i, r.random_range(0..inputs[i].len())));
    }
    for id in store.ids() {
        let n = store.name(id);
        if n.starts_with("den1.output") || n.starts_with("sme.input") || n.contains(".prompt") {
            probes.push((id.index(), 0));
        }
    }
    grad_err(&probe_gradients(&inputs, &probes, 1e-5, |tape, v| {
        let p = Bound::from_vars(v.to_vec());
        let sens = model
            .estimate_sensitivities_var(tape, &p, &Var::constant(y_center.clone()), &mask)
            .unwrap();
        let out = model.forward_center(tape, &p, &Var::constant(y_adj.clone()), &mask, &sens);
        ssim_loss(tape, &out, &target).unwrap()
    }))
}

pub fn gradients() -> Outcome {
    let t0 = Instant::now();
    let mut errs: Vec<(&str, f64, f64)> = Vec::new();

    let (mut store, mut r) = (ParamStore::new(), rng(3));
    let cab = Cab::new(&mut Init { store: &mut store, rng: &mut r }, "cab", 4, 2).unwrap();
    let x = randn(&[1, 4, 6, 6], &mut r);
    errs.push(("CAB", model_grad(&store, &x, "", |t, p, x| cab.forward(t, p, x)), 1e-4));

    let (mut store, mut r) = (ParamStore::new(), rng(8));
    let lvl = PromptLevel { n_p: 3, h_p: 6, w_p: 5, c_p: 3 };
    let pb = PromptBlock::new(&mut Init { store: &mut store, rng: &mut r }, "pb", 4, lvl);
    let x = randn(&[1, 4, 7, 5], &mut r);
    let e = model_grad(&store, &x, "pb.", |t, p, x| {
        let o = pb.forward(t, p, x);
        t.concat(&[&o.prompt, x], 1)
    });
    errs.push(("PromptBlock", e, 1e-4));

    for (name, prompts) in [("CAUnet", false), ("PromptUnet", true)] {
        let (mut store, mut r) = (ParamStore::new(), rng(12));
        let net = Unet::new(&mut Init { store: &mut store, rng: &mut r }, "net", &tiny_net(prompts)).unwrap();
        let x = randn(&[1, 2, 8, 8], &mut r);
        let focus = if prompts { ".prompt" } else { "" };
        errs.push((name, model_grad(&store, &x, focus, |t, p, x| net.forward(t, p, x)), 1e-4));
    }

    errs.push(("unrolled(T=2)", unrolled_grad(), 1e-3));

    let mut r = rng(40);
    let tgt = randn(&[2, 10, 9], &mut r).map(f64::abs);
    let pred = Tensor::new(tgt.shape(), tgt.data().iter().map(|v| v + 0.3 * r.random::<f64>()).collect()).unwrap();
    let probes: Vec<(usize, usize)> = (0..20).map(|_| (0, r.random_range(0..pred.len()))).collect();
    let e = grad_err(&probe_gradients(&[pred], &probes, 1e-5, |tape, v| {
        ssim_loss(tape, &v[0], &tgt).unwrap()
    }));
    errs.push(("ssim_loss", e, 1e-4));

    let secs = t0.elapsed().as_secs_f64();
    let ok = errs.iter().all(|(_, e, tol)| e < tol) && secs < 300.0;
    let parts: Vec<String> = errs.iter().map(|(n, e, tol)| format!("{n} {e:.1e} (<{tol:.0e})")).collect();
    Outcome::new(ok, format!("max rel err {}; {secs:.1} s (< 300 s)", parts.join(", ")))
}

pub fn degenerate() -> Outcome {
    // acceleration 1, eta 1, zero regularizer
    let zero_g = |_: &Tape, x: &Var| Var::constant(Tensor::zeros(x.shape()));
    let mut r = rng(2);
    let full = UndersampleMask::full(12);
    let y = randc(&[3, 2, 12, 6], &mut r);
    let st = CascadeState {
        k_adj: randc(&[3, 2, 12, 6], &mut r),
        y_adj: y.clone(),
        mask: full,
        sens: CoilSensitivities::normalized(randc(&[2, 12, 6], &mut r)).unwrap(),
        eta: 1.0,
    };
    let step_err = crel(&st.step(zero_g).unwrap().k_adj, &y);
    let case = small_case(FrameAxis::Temporal, 3, 16, 3);
    let (model, store) = UnrolledModel::new(&tiny_unrolled(ModelFamily::Promptmr, 2, 1), 0).unwrap();
    let eta_one = (0..2).all(|t| store.get(model.eta(t)).data()[0] == 1.0);
    let mask1 = make_mask(16, 1, 4, MaskScheme::Equispaced, 0).unwrap();
    let out = Stage1 { model: &model, store: &store }.reconstruct(&case.kspace, &mask1).unwrap();
    let rss_err = rel(out.data(), rss_image(&case.kspace).unwrap().data());

    // a = 0 against a hand-rolled single-frame cascade loop
    let case = small_case(FrameAxis::Temporal, 4, 16, 2);
    let (model, mut store) = UnrolledModel::new(&tiny_unrolled(ModelFamily::Promptmr, 3, 0), 1).unwrap();
    randomize_outputs(&mut store, 2);
    store.get_mut(model.eta(1)).data_mut()[0] = 0.6;
    let mask = make_mask(16, 4, 4, MaskScheme::Equispaced, 0).unwrap();
    let y = apply_mask(&case.kspace, &mask).unwrap();
    let s1 = Stage1 { model: &model, store: &store };
    let out = s1.reconstruct(&y, &mask).unwrap();
    let sens = s1.estimate_sensitivities(&y, &mask).unwrap();
    let mut single_err = 0f64;
    for frame in 0..4 {
        let stacked = ComplexArray::stack(&[y.frame(frame).unwrap()]).unwrap();
        let mut st = CascadeState { k_adj: stacked.clone(), y_adj: stacked, mask: mask.clone(), sens: sens.clone(), eta: 0.0 };
        for t in 0..3 {
            st.eta = store.get(model.eta(t)).data()[0];
            st = st.step(|tape, x| model.denoise(tape, &store.bind(tape), t, x, None)).unwrap();
        }
        let img = rss(&ifft2c(&st.k_adj).unwrap()).unwrap();
        single_err = single_err.max(rel(&out.data()[frame * 256..(frame + 1) * 256], img.data()));
    }

    // untrained refiner
    let cfg = RefineConfig { base_width: 8, ..RefineConfig::default() };
    let (refiner, rstore) = Refiner::new(&cfg, 5).unwrap();
    let mut refine_err = 0f64;
    for f in [1, 3, 6] {
        let x = randn(&[f, 12, 10], &mut rng(f as u64)).map(f64::abs);
        refine_err = refine_err.max(rel(refiner.refine(&rstore, &x).unwrap().data(), x.data()));
    }

    let ok = step_err < 1e-6 && eta_one && rss_err < 1e-6 && single_err < 1e-6 && refine_err < 1e-6;
    Outcome::new(
        ok,
        format!(
            "acc1/eta1/G=0: cascade {step_err:.1e}, model vs rss(ifft2c(y)) {rss_err:.1e}; a=0 vs single-frame loop {single_err:.1e}; zero-init refiner vs identity {refine_err:.1e} (all < 1e-6)"
        ),
    )
}

/// Softmax prompt weights on random inputs; returns (ok, detail).
pub fn prompt_softmax() -> (bool, String) {
    let (mut store, mut r) = (ParamStore::new(), rng(4));
    let lvl = PromptLevel { n_p: 5, h_p: 6, w_p: 5, c_p: 3 };
    let pb = PromptBlock::new(&mut Init { store: &mut store, rng: &mut r }, "pb", 4, lvl);
    let t = Tape::inference();
    let p = store.bind(&t);
    let (mut worst, mut neg) = (0f64, 0usize);
    for _ in 0..100 {
        let x = randn(&[1, 4, 4, 4], &mut r).map(|v| 10.0 * v);
        let w = pb.weights(&t, &p, &Var::constant(x));
        let d = w.value().data();
        neg += d.iter().filter(|&&v| v < 0.0).count();
        worst = worst.max((d.iter().sum::<f64>() - 1.0).abs());
    }
    (worst < 1e-6 && neg == 0, format!("softmax on 100 inputs: max |sum-1| {worst:.1e}, {neg} negative"))
}

fn oracle_ssim(x: &Tensor, y: &Tensor, range: f64) -> f64 {
    let s = x.shape();
    let (f, h, w) = (s[0], s[1], s[2]);
    let k = 7usize;
    let n = (k * k) as f64;
    let (c1, c2) = ((0.01 * range).powi(2), (0.03 * range).powi(2));
    let mut total = 0.0;
    for fr in 0..f {
        let at = |d: &Tensor, r: usize, c: usize| d.data()[fr * h * w + r * w + c];
        let mut acc = 0.0;
        for r0 in 0..=h - k {
            for c0 in 0..=w - k {
                let win = |d: &Tensor| -> Vec<f64> {
                    (r0..r0 + k).flat_map(|r| (c0..c0 + k).map(move |c| (r, c))).map(|(r, c)| at(d, r, c)).collect()
                };
                let (a, b) = (win(x), win(y));
                let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
                let va = a.iter().map(|v| (v - ma).powi(2)).sum::<f64>() / (n - 1.0);
                let vb = b.iter().map(|v| (v - mb).powi(2)).sum::<f64>() / (n - 1.0);
                let cab = a.iter().zip(&b).map(|(u, v)| (u - ma) * (v - mb)).sum::<f64>() / (n - 1.0);
                acc += (2.0 * ma * mb + c1) * (2.0 * cab + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            }
        }
        total += acc / ((h - k + 1) * (w - k + 1)) as f64;
    }
    total / f as f64
}

pub fn metrics() -> Outcome {
    let mut worst = [0f64; 3];
    for seed in 0..10 {
        let mut r = rng(100 + seed);
        let (f, h, w) = (r.random_range(1..3), r.random_range(7..15), r.random_range(7..15));
        let t = randn(&[f, h, w], &mut r).map(f64::abs);
        let noise = randn(&[f, h, w], &mut r);
        let p = Tensor::new(
            &[f, h, w],
            t.data().iter().zip(noise.data()).map(|(a, b)| (a + 0.3 * b).max(0.0)).collect(),
        )
        .unwrap();
        let (mut num, mut den, mut peak) = (0.0, 0.0, f64::MIN);
        for (a, b) in p.data().iter().zip(t.data()) {
            num += (a - b).powi(2);
            den += b * b;
            peak = peak.max(*b);
        }
        let o_nmse = num / den;
        let o_psnr = 20.0 * peak.log10() - 10.0 * (num / p.len() as f64).log10();
        worst[0] = worst[0].max((nmse(&p, &t).unwrap() - o_nmse).abs());
        worst[1] = worst[1].max((psnr(&p, &t).unwrap() - o_psnr).abs());
        worst[2] = worst[2].max((ssim(&p, &t).unwrap() - oracle_ssim(&p, &t, peak)).abs());
    }
    Outcome::new(
        worst.iter().all(|&e| e < 1e-6),
        format!(
            "10 random images; max |diff| nmse {:.1e}, psnr {:.1e}, ssim {:.1e} (< 1e-6)",
            worst[0], worst[1], worst[2]
        ),
    )
}
