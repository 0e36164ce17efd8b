use alloc::vec;
use alloc::vec::Vec;

use super::*;
use crate::gradcheck::probe_gradients;
use crate::testutil::{assert_probes, randn, rng};

fn init_store(seed: u64) -> (ParamStore, ChaCha8Rng) {
    (ParamStore::new(), rng(seed))
}

/// Gradient of a random projection of `forward` w.r.t. `n` random parameter
/// entries and a few input entries.
fn grad_check_model(store: &ParamStore, x: &Tensor, n: usize, tol: f64, forward: impl Fn(&Tape, &Bound, &Var) -> Var) {
    use rand::Rng;
    let mut inputs: Vec<Tensor> = store.ids().map(|id| store.get(id).clone()).collect();
    let np = inputs.len();
    inputs.push(x.clone());
    let mut r = rng(7);
    let mut ps: Vec<(usize, usize)> = (0..n)
        .map(|_| {
            let i = r.random_range(0..np);
            (i, r.random_range(0..inputs[i].len()))
        })
        .collect();
    ps.extend((0..3).map(|_| (np, r.random_range(0..x.len()))));
    let res = probe_gradients(&inputs, &ps, 1e-5, |t, v| {
        let bound = Bound::from_vars(v[..np].to_vec());
        let y = forward(t, &bound, &v[np]);
        let c = randn(y.shape(), &mut rng(31));
        t.sum(&t.mul_const(&y, &c))
    });
    assert_probes(&res, tol);
}

#[test]
fn cab_with_zero_branch_is_identity() {
    let (mut store, mut r) = init_store(1);
    let cab = Cab::new(&mut Init { store: &mut store, rng: &mut r }, "cab", 8, 4).unwrap();
    store.get_mut(cab.conv2.weight).data_mut().fill(0.0);
    if let Some(b) = cab.conv2.bias {
        store.get_mut(b).data_mut().fill(0.0);
    }
    let x = randn(&[2, 8, 5, 6], &mut r);
    let t = Tape::inference();
    let y = cab.forward(&t, &store.bind(&t), &Var::constant(x.clone()));
    assert_eq!(y.value(), &x);
}

#[test]
fn cab_shapes_gates_and_config_errors() {
    let (mut store, mut r) = init_store(2);
    let mut init = Init { store: &mut store, rng: &mut r };
    assert!(Cab::new(&mut init, "bad", 6, 4).is_err());
    let cab = Cab::new(&mut init, "cab", 8, 2).unwrap();
    let t = Tape::inference();
    for (i, &(h, w)) in [(4, 4), (7, 5), (9, 12)].iter().enumerate() {
        let x = randn(&[1, 8, h, w], &mut rng(i as u64)).map(|v| 50.0 * v);
        let p = store.bind(&t);
        let xv = Var::constant(x);
        assert_eq!(cab.forward(&t, &p, &xv).shape(), &[1, 8, h, w]);
        let g = cab.gates(&t, &p, &xv);
        assert!(g.value().data().iter().all(|&v| v > 0.0 && v < 1.0));
    }
}

#[test]
fn cab_gradients() {
    let (mut store, mut r) = init_store(3);
    let cab = Cab::new(&mut Init { store: &mut store, rng: &mut r }, "cab", 4, 2).unwrap();
    let x = randn(&[1, 4, 6, 6], &mut r);
    grad_check_model(&store, &x, 12, 1e-4, |t, p, x| cab.forward(t, p, x));
}

fn prompt_block(n_p: usize, seed: u64) -> (ParamStore, PromptBlock) {
    let (mut store, mut r) = init_store(seed);
    let lvl = PromptLevel { n_p, h_p: 6, w_p: 5, c_p: 3 };
    let pb = PromptBlock::new(&mut Init { store: &mut store, rng: &mut r }, "pb", 4, lvl);
    (store, pb)
}

#[test]
fn prompt_weights_are_a_distribution() {
    let (store, pb) = prompt_block(5, 4);
    let t = Tape::inference();
    let p = store.bind(&t);
    let mut r = rng(40);
    for _ in 0..100 {
        let x = randn(&[1, 4, 4, 4], &mut r).map(|v| 10.0 * v);
        let w = pb.weights(&t, &p, &Var::constant(x));
        let d = w.value().data();
        assert!(d.iter().all(|&v| v >= 0.0));
        assert!((d.iter().sum::<f64>() - 1.0).abs() < 1e-6);
    }
}

#[test]
fn prompt_weights_invariant_to_logit_shift() {
    let (mut store, pb) = prompt_block(4, 5);
    let x = Var::constant(randn(&[2, 4, 5, 5], &mut rng(1)));
    let t = Tape::inference();
    let before = pb.weights(&t, &store.bind(&t), &x).value().clone();
    store.get_mut(pb.weight_head.bias).data_mut().iter_mut().for_each(|b| *b += 3.25);
    let after = pb.weights(&t, &store.bind(&t), &x).value().clone();
    assert!(crate::tensor::rel_err(before.data(), after.data()) < 1e-12);
}

#[test]
fn single_component_prompt_ignores_content() {
    let (store, pb) = prompt_block(1, 6);
    let t = Tape::inference();
    let p = store.bind(&t);
    let a = pb.forward(&t, &p, &Var::constant(randn(&[1, 4, 7, 6], &mut rng(1))));
    let b = pb.forward(&t, &p, &Var::constant(randn(&[1, 4, 7, 6], &mut rng(2))));
    assert_eq!(a.weights.value().data(), &[1.0]);
    assert_eq!(a.prompt.value(), b.prompt.value());
    assert_eq!(a.prompt.shape(), &[1, 3, 7, 6]);
}

#[test]
fn equal_pooled_features_give_equal_weights() {
    let (store, pb) = prompt_block(5, 7);
    let t = Tape::inference();
    let p = store.bind(&t);
    let x = randn(&[1, 4, 4, 4], &mut rng(3));
    // a spatial permutation keeps every channel mean
    let mut y = x.clone();
    y.data_mut().chunks_exact_mut(16).for_each(|c| c.reverse());
    let a = pb.weights(&t, &p, &Var::constant(x));
    let b = pb.weights(&t, &p, &Var::constant(y));
    assert!(crate::tensor::rel_err(a.value().data(), b.value().data()) < 1e-12);
}

#[test]
fn prompt_block_gradients() {
    let (store, pb) = prompt_block(3, 8);
    let x = randn(&[1, 4, 7, 5], &mut rng(5));
    grad_check_model(&store, &x, 12, 1e-4, |t, p, x| {
        let o = pb.forward(t, p, x);
        t.concat(&[&o.prompt, x], 1)
    });
}

fn tiny_cfg(prompts: bool) -> NetConfig {
    let mut c = if prompts { NetConfig::prompt_unet(2, 3, 4) } else { NetConfig::caunet(2, 3, 4) };
    c.cab_per_block = 1;
    c.reduction = 2;
    if let Some(p) = c.prompt.as_mut() {
        for (i, l) in p.levels.iter_mut().enumerate() {
            l.n_p = 2;
            l.h_p = 4 >> i.min(1);
            l.w_p = 3;
        }
    }
    c
}

fn build(cfg: &NetConfig, seed: u64) -> (ParamStore, Unet) {
    let (mut store, mut r) = init_store(seed);
    let net = Unet::new(&mut Init { store: &mut store, rng: &mut r }, "net", cfg).unwrap();
    (store, net)
}

#[test]
fn unet_preserves_shape_for_odd_and_even_sizes() {
    for prompts in [false, true] {
        let (store, net) = build(&tiny_cfg(prompts), 9);
        let t = Tape::inference();
        for s in [63, 64, 65] {
            let x = Var::constant(randn(&[1, 2, s, s - 1], &mut rng(s as u64)));
            let y = net.forward(&t, &store.bind(&t), &x);
            assert_eq!(y.shape(), &[1, 3, s, s - 1]);
            assert!(y.value().all_finite());
        }
    }
}

#[test]
fn unet_is_deterministic() {
    let (store, net) = build(&tiny_cfg(true), 10);
    let x = Var::constant(randn(&[1, 2, 12, 8], &mut rng(1)));
    let t = Tape::inference();
    let a = net.forward(&t, &store.bind(&t), &x);
    let b = net.forward(&t, &store.bind(&t), &x);
    assert_eq!(a.value(), b.value());
    let (store2, net2) = build(&tiny_cfg(true), 10);
    let c = net2.forward(&t, &store2.bind(&t), &x);
    assert_eq!(a.value(), c.value());
}

#[test]
fn unet_constructor_variants_are_checked() {
    let (mut store, mut r) = init_store(11);
    let mut init = Init { store: &mut store, rng: &mut r };
    assert!(Unet::prompt_unet(&mut init, "a", &tiny_cfg(false)).is_err());
    assert!(Unet::caunet(&mut init, "b", &tiny_cfg(true)).is_err());
    let mut bad = tiny_cfg(false);
    bad.levels = 4;
    assert!(Unet::caunet(&mut init, "c", &bad).is_err());
}

#[test]
fn caunet_gradients() {
    let (store, net) = build(&tiny_cfg(false), 12);
    let x = randn(&[1, 2, 8, 8], &mut rng(2));
    grad_check_model(&store, &x, 10, 1e-4, |t, p, x| net.forward(t, p, x));
}

#[test]
fn prompt_unet_gradients_including_prompts() {
    let (store, net) = build(&tiny_cfg(true), 13);
    let x = randn(&[1, 2, 8, 8], &mut rng(3));
    grad_check_model(&store, &x, 10, 1e-4, |t, p, x| net.forward(t, p, x));
    // probe prompt parameters specifically
    let prompt_ids: Vec<usize> = store
        .ids()
        .filter(|&id| store.name(id).contains(".prompt"))
        .map(|id| id.index())
        .collect();
    assert!(!prompt_ids.is_empty());
    let mut inputs: Vec<Tensor> = store.ids().map(|id| store.get(id).clone()).collect();
    let np = inputs.len();
    inputs.push(x);
    let ps: Vec<(usize, usize)> = prompt_ids.iter().map(|&i| (i, inputs[i].len() / 2)).collect();
    let res = probe_gradients(&inputs, &ps, 1e-5, |t, v| {
        let bound = Bound::from_vars(v[..np].to_vec());
        let y = net.forward(t, &bound, &v[np]);
        let c = randn(y.shape(), &mut rng(31));
        t.sum(&t.mul_const(&y, &c))
    });
    assert_probes(&res, 1e-4);
}

#[test]
fn zero_prompts_match_caunet_with_zero_channels() {
    let cfg = tiny_cfg(true);
    let (mut pstore, pnet) = build(&cfg, 14);
    for id in pstore.ids().collect::<Vec<_>>() {
        if pstore.name(id).ends_with(".components") {
            pstore.get_mut(id).data_mut().fill(0.0);
        }
    }
    let plain_cfg = NetConfig { use_prompts: false, prompt: None, ..cfg.clone() };
    let (mut cstore, cnet) = build(&plain_cfg, 99);
    for id in cstore.ids().collect::<Vec<_>>() {
        let name = String::from(cstore.name(id));
        let src = pstore.get(pstore.find(&name).unwrap()).clone();
        let value = if name.contains(".fuse") && name.ends_with(".weight") {
            // keep the columns for the skip-joined features, drop the prompt ones
            let s = src.shape();
            let (co, ci_full) = (s[0], s[1]);
            let ci = cstore.get(id).shape()[1];
            let mut d = Vec::with_capacity(co * ci);
            for o in 0..co {
                d.extend_from_slice(&src.data()[o * ci_full..o * ci_full + ci]);
            }
            Tensor::new(&[co, ci, 1, 1], d).unwrap()
        } else {
            src
        };
        cstore.set(id, value).unwrap();
    }
    let t = Tape::inference();
    let x = Var::constant(randn(&[1, 2, 12, 9], &mut rng(4)));
    let a = pnet.forward(&t, &pstore.bind(&t), &x);
    let b = cnet.forward(&t, &cstore.bind(&t), &x);
    assert!(crate::tensor::rel_err(a.value().data(), b.value().data()) < 1e-12);
}

#[test]
fn trace_records_one_weight_row_per_level() {
    let (store, net) = build(&tiny_cfg(true), 15);
    let t = Tape::inference();
    let mut trace = vec![];
    net.forward_traced(&t, &store.bind(&t), &Var::constant(randn(&[1, 2, 8, 8], &mut rng(5))), Some(&mut trace));
    assert_eq!(trace.len(), 3);
    for w in &trace {
        assert!((w.sum() - 1.0).abs() < 1e-12);
    }
}
