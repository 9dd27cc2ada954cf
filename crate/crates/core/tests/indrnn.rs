mod common;

use common::*;
use gesture_core::indrnn::{bi_indrnn_forward, indrnn_forward, rbi_block_forward, LayerVars};
use gesture_core::tensor::{ForwardCtx, Graph, Mode, Tensor};

#[test]
fn three_step_unroll() {
    for seed in 0..20 {
        assert!(indrnn_unroll_gap(seed) <= f64::EPSILON, "seed {seed}");
    }
}

fn layer(g: &mut Graph, w: &Tensor, u: &Tensor, b: &Tensor) -> LayerVars {
    LayerVars {
        input: g.constant(w.clone()).unwrap(),
        recurrent: g.constant(u.clone()).unwrap(),
        bias: g.constant(b.clone()).unwrap(),
    }
}

#[test]
fn bidirectional_composes_forward_and_reversed_passes() {
    let mut r = rng(3);
    let x = rand_tensor(&[2, 5, 4], &mut r);
    let (wf, wb) = (rand_tensor(&[4, 3], &mut r), rand_tensor(&[4, 3], &mut r));
    let (uf, ub) = (rand_tensor(&[3], &mut r), rand_tensor(&[3], &mut r));
    let b = Tensor::full(&[3], 0.2);

    let mut g = Graph::new();
    let vx = g.constant(x.clone()).unwrap();
    let lf = layer(&mut g, &wf, &uf, &b);
    let lb = layer(&mut g, &wb, &ub, &b);
    let bi = bi_indrnn_forward(&mut g, vx, &lf, &lb).unwrap();
    let hf = indrnn_forward(&mut g, vx, &lf, None).unwrap();
    let xr = g.reverse_time(vx).unwrap();
    let hb = indrnn_forward(&mut g, xr, &lb, None).unwrap();

    let (bi, hf, hb) = (g.value(bi), g.value(hf), g.value(hb));
    assert_eq!(bi.shape(), &[2, 5, 6]);
    for s in 0..2 {
        for t in 0..5 {
            for n in 0..3 {
                assert_eq!(bi.at(&[s, t, n]), hf.at(&[s, t, n]));
                assert_eq!(bi.at(&[s, t, 3 + n]), hb.at(&[s, 4 - t, n]));
            }
        }
    }
}

#[test]
fn palindrome_with_shared_weights_mirrors() {
    let mut r = rng(4);
    let half = rand_tensor(&[1, 3, 2], &mut r);
    let mut data = half.data().to_vec();
    data.extend_from_slice(&half.data()[2..4]);
    data.extend_from_slice(&half.data()[0..2]);
    let x = Tensor::new(vec![1, 5, 2], data).unwrap();
    let w = rand_tensor(&[2, 4], &mut r);
    let u = rand_tensor(&[4], &mut r);
    let b = Tensor::full(&[4], 0.3);
    let mut g = Graph::new();
    let vx = g.constant(x).unwrap();
    let l = layer(&mut g, &w, &u, &b);
    let y = bi_indrnn_forward(&mut g, vx, &l, &l).unwrap();
    let y = g.value(y);
    for t in 0..5 {
        for n in 0..4 {
            assert_eq!(y.at(&[0, t, n]), y.at(&[0, 4 - t, 4 + n]));
        }
    }
}

#[test]
fn dead_branch_block_is_identity() {
    let mut net = small_rbi(3, 1, 4, 2);
    let (w, b) = (net.blocks[0].post_weight, net.blocks[0].post_bias);
    for v in net.store.get_mut(w).data_mut() {
        *v = 0.0;
    }
    for v in net.store.get_mut(b).data_mut() {
        *v = 0.0;
    }
    let x = rand_tensor(&[2, 4, 6], &mut rng(6));
    for mode in [Mode::Train, Mode::Infer] {
        let mut g = Graph::new();
        let pv = net.store.bind(&mut g).unwrap();
        let vx = g.constant(x.clone()).unwrap();
        let mut ctx = ForwardCtx::new(mode, 0);
        let y = rbi_block_forward(&mut g, &pv, &net.blocks[0], vx, true, 0.0, &mut ctx).unwrap();
        assert_eq!(g.value(y), &x);
    }
}

#[test]
fn block_gradients() {
    let r = rbi_block_gradcheck();
    assert!(r.max_rel_error < GRAD_TOL, "{r:?}");
}

#[test]
fn long_memory_probe() {
    let jac = long_memory_jacobian(100, 4);
    for (i, row) in jac.iter().enumerate() {
        for (k, &v) in row.iter().enumerate() {
            assert_eq!(v, if i == k { 1.0 } else { 0.0 });
        }
    }
}

#[test]
fn clamp_respects_bound() {
    for horizon in [1, 5, 20, 100] {
        assert!(clamped_magnitude(horizon) <= bound(horizon) + 1e-12);
    }
    assert_eq!(clamped_magnitude(20), bound(20));
}

#[test]
fn dead_branches_make_the_stack_transparent() {
    let mut net = small_rbi(3, 6, 4, 8);
    for block in net.blocks.clone() {
        for id in [block.post_weight, block.post_bias] {
            for v in net.store.get_mut(id).data_mut() {
                *v = 0.0;
            }
        }
    }
    let x = rand_tensor(&[2, 4, 6], &mut rng(10));
    let mut g = Graph::new();
    let pv = net.store.bind(&mut g).unwrap();
    let vx = g.constant(x).unwrap();
    let mut ctx = ForwardCtx::new(Mode::Train, 0);
    let h = net.features(&mut g, &pv, vx, &mut ctx).unwrap();
    let p = g.matmul(vx, pv.var(net.proj_weight)).unwrap();
    let p = g.add_bias(p, pv.var(net.proj_bias)).unwrap();
    assert_eq!(g.value(h), g.value(p));
}
