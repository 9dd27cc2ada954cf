//! Fixtures and oracles shared by the integration suites.
#![allow(dead_code)]

use gesture_core::indrnn::{
    indrnn_forward, rbi_block_forward, recurrent_bound, LayerVars, RbiConfig, RbiNetwork,
};
use gesture_core::sagcn::{
    attention_map, row_sum_deviation, sagcn_spatial, sagcn_unit_forward, SagcnConfig, SagcnNetwork,
    SpatialWeights,
};
use gesture_core::skeleton::{
    normalize_matrix, partition_adjacency, DatasetKind, PartitionedAdjacency, ReferencePose,
    SkeletonTopology,
};
use gesture_core::tensor::{
    finite_diff_check, ForwardCtx, GradCheckReport, Graph, Mode, ParamVars, Tensor, Var,
};
use gesture_core::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const GRAD_H: f64 = 1e-4;
pub const GRAD_TOL: f64 = 1e-4;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rand_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

pub fn weighted(g: &mut Graph, y: Var) -> Result<Var> {
    let n = g.value(y).len();
    let w = (0..n).map(|i| 0.3 + ((i * 7) % 11) as f64 * 0.1).collect();
    g.weighted_sum(y, w)
}

pub fn chain_topology(n: usize) -> SkeletonTopology {
    let edges = (1..n).map(|i| (i - 1, i)).collect();
    SkeletonTopology::new(n, edges, DatasetKind::Custom).unwrap()
}

pub fn random_pose(n: usize, rng: &mut ChaCha8Rng) -> ReferencePose {
    ReferencePose::new(
        (0..n)
            .map(|_| {
                [
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                ]
            })
            .collect(),
    )
    .unwrap()
}

pub fn chain_adjacency(n: usize) -> [Tensor; 3] {
    let pose = ReferencePose::new((0..n).map(|i| [i as f64 * 0.3, 0.1, 0.0]).collect()).unwrap();
    PartitionedAdjacency::for_pose(&chain_topology(n), &pose)
        .unwrap()
        .normalized()
        .unwrap()
        .clone()
}

/// Every labeled tree on `n` nodes, decoded from its Prüfer sequence.
pub fn labeled_trees(n: usize) -> Vec<Vec<(usize, usize)>> {
    if n == 1 {
        return vec![vec![]];
    }
    if n == 2 {
        return vec![vec![(0, 1)]];
    }
    let len = n - 2;
    let mut out = Vec::new();
    let mut seq = vec![0; len];
    loop {
        let mut degree = vec![1; n];
        for &s in &seq {
            degree[s] += 1;
        }
        let mut edges = Vec::with_capacity(n - 1);
        for &s in &seq {
            let leaf = (0..n).find(|&i| degree[i] == 1).unwrap();
            edges.push((leaf, s));
            degree[leaf] -= 1;
            degree[s] -= 1;
        }
        let rest: Vec<usize> = (0..n).filter(|&i| degree[i] == 1).collect();
        edges.push((rest[0], rest[1]));
        out.push(edges);

        let mut i = 0;
        while i < len {
            seq[i] += 1;
            if seq[i] < n {
                break;
            }
            seq[i] = 0;
            i += 1;
        }
        if i == len {
            return out;
        }
    }
}

/// Checks the partition and normalization invariants on every labeled
/// tree of `1..=max_nodes` nodes. Returns the number of graphs checked and
/// the first violation.
pub fn structural_sweep(max_nodes: usize, seed: u64) -> (usize, Option<String>) {
    let mut r = rng(seed);
    let mut checked = 0;
    for n in 1..=max_nodes {
        for edges in labeled_trees(n) {
            let topo = SkeletonTopology::new(n, edges.clone(), DatasetKind::Custom).unwrap();
            let pose = random_pose(n, &mut r);
            let part = partition_adjacency(&topo, &pose).unwrap();
            let adj = topo.adjacency_matrix();
            if part.raw[0] != Tensor::eye(n) {
                return (checked, Some(format!("A_0 != I for {edges:?}")));
            }
            for (i, (a1, a2)) in part.raw[1]
                .data()
                .iter()
                .zip(part.raw[2].data())
                .enumerate()
            {
                if a1 + a2 != adj.data()[i] || a1 * a2 != 0.0 {
                    return (checked, Some(format!("A_1 + A_2 != A for {edges:?}")));
                }
            }
            let mut mats = part.raw.to_vec();
            mats.push(adj);
            for m in &mats {
                if let Some(e) = normalization_mismatch(m) {
                    return (checked, Some(format!("{e} for {edges:?}")));
                }
            }
            checked += 1;
        }
    }
    (checked, None)
}

/// Compares the normalized matrix against `A_ij / √(d_i d_j)`; entries
/// touching a zero-degree row must be zero.
pub fn normalization_mismatch(a: &Tensor) -> Option<String> {
    let n = a.shape()[0];
    let d: Vec<f64> = a.data().chunks(n).map(|r| r.iter().sum()).collect();
    let got = normalize_matrix(a).unwrap();
    for i in 0..n {
        for j in 0..n {
            let v = got.at(&[i, j]);
            let want = if d[i] > 0.0 && d[j] > 0.0 {
                a.at(&[i, j]) / (d[i] * d[j]).sqrt()
            } else {
                0.0
            };
            if (v - want).abs() > 4.0 * f64::EPSILON * want.abs() {
                return Some(format!("entry ({i},{j}) = {v}, expected {want}"));
            }
        }
    }
    None
}

/// Direct loop implementation of `ReLU(Σ_k W_k f A_k)` for `[B, C, T, J]`
/// features.
pub fn spatial_oracle(x: &Tensor, adj: &[Tensor; 3], w: &[Tensor; 3]) -> Vec<f64> {
    let [b, ci, t, j] = *x.shape() else { panic!() };
    let co = w[0].shape()[0];
    let mut terms = Vec::new();
    for k in 0..3 {
        let mut mixed = vec![0.0; b * ci * t * j];
        for bi in 0..b {
            for c in 0..ci {
                for ti in 0..t {
                    for jo in 0..j {
                        let mut s = 0.0;
                        for ji in 0..j {
                            s += x.at(&[bi, c, ti, ji]) * adj[k].at(&[ji, jo]);
                        }
                        mixed[((bi * ci + c) * t + ti) * j + jo] = s;
                    }
                }
            }
        }
        let mut term = vec![0.0; b * co * t * j];
        for bi in 0..b {
            for o in 0..co {
                for tj in 0..t * j {
                    let mut s = 0.0;
                    for c in 0..ci {
                        s += w[k].at(&[o, c]) * mixed[(bi * ci + c) * t * j + tj];
                    }
                    term[(bi * co + o) * t * j + tj] = s;
                }
            }
        }
        terms.push(term);
    }
    (0..terms[0].len())
        .map(|i| (terms[0][i] + terms[1][i] + terms[2][i]).max(0.0))
        .collect()
}

/// Runs `count` random instances of the spatial aggregation with a zero
/// global weight against [`spatial_oracle`]; returns how many matched
/// exactly.
pub fn spatial_oracle_sweep(count: usize, seed: u64) -> usize {
    let mut r = rng(seed);
    let mut exact = 0;
    for _ in 0..count {
        let b = r.random_range(1..=3);
        let ci = r.random_range(1..=4);
        let co = r.random_range(1..=4);
        let t = r.random_range(1..=5);
        let j = r.random_range(2..=8);
        let x = rand_tensor(&[b, ci, t, j], &mut r);
        let adj = [0, 1, 2].map(|_| rand_tensor(&[j, j], &mut r));
        let w = [0, 1, 2].map(|_| rand_tensor(&[co, ci], &mut r));
        let wa = rand_tensor(&[2, ci], &mut r);

        let mut g = Graph::new();
        let vx = g.constant(x.clone()).unwrap();
        let va = adj.clone().map(|a| g.constant(a).unwrap());
        let weights = SpatialWeights {
            attention: g.constant(wa).unwrap(),
            graph: w.clone().map(|m| g.constant(m).unwrap()),
            global: g.constant(Tensor::zeros(&[co, ci])).unwrap(),
        };
        let a_g = attention_map(&mut g, vx, weights.attention).unwrap();
        let y = sagcn_spatial(&mut g, vx, &va, a_g, &weights).unwrap();
        let want = spatial_oracle(&x, &adj, &w);
        if g.value(y).data() == want.as_slice() {
            exact += 1;
        }
    }
    exact
}

/// Largest attention row-sum deviation over `passes` forward passes of a
/// small network on random inputs of varying scale.
pub fn row_sum_fuzz(passes: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    let mut worst: f64 = 0.0;
    let topo = SkeletonTopology::hand(DatasetKind::Dhg22).unwrap();
    let pose = random_pose(22, &mut r);
    let adj = PartitionedAdjacency::for_pose(&topo, &pose).unwrap();
    let adj = adj.normalized().unwrap().clone();
    let mut cfg = SagcnConfig::with_channels(vec![4, 4], 22, 3);
    cfg.strides = vec![1, 1];
    cfg.dropout = 0.0;
    let net = SagcnNetwork::new(cfg, seed).unwrap();
    for pass in 0..passes {
        let scale = 10f64.powf(r.random_range(-3.0..2.0));
        let x = Tensor::from_fn(&[1, 3, 4, 22], |_| scale * r.random_range(-1.0..1.0));
        let mut g = Graph::new();
        let pv = net.store.bind(&mut g).unwrap();
        let vx = g.constant(x).unwrap();
        let va = adj.clone().map(|a| g.constant(a).unwrap());
        let mode = if pass % 2 == 0 {
            Mode::Train
        } else {
            Mode::Infer
        };
        let mut ctx = ForwardCtx::new(mode, pass as u64).capture_attention();
        net.logits(&mut g, &pv, vx, &va, &mut ctx).unwrap();
        for m in ctx.captured_attention() {
            worst = worst.max(row_sum_deviation(m));
        }
    }
    worst
}

/// Finite-difference check of one SAGCN unit on a 4-joint chain with two
/// channels and four frames, over every parameter and the input.
pub fn sagcn_unit_gradcheck() -> GradCheckReport {
    let mut cfg = SagcnConfig::with_channels(vec![2], 4, 2);
    cfg.in_channels = 2;
    cfg.dropout = 0.0;
    let net = SagcnNetwork::new(cfg, 3).unwrap();
    let unit = net.units[0].clone();
    let adj = chain_adjacency(4);
    let mut r = rng(5);
    let mut params: Vec<Tensor> = net
        .store
        .entries()
        .iter()
        .map(|e| e.tensor.clone())
        .collect();
    let n = params.len();
    params.push(rand_tensor(&[2, 2, 4, 4], &mut r));
    finite_diff_check(
        |g, v| {
            let pv = ParamVars::from_vars(v[..n].to_vec());
            let a = adj.clone().map(|m| g.constant(m).unwrap());
            let mut ctx = ForwardCtx::new(Mode::Train, 0);
            let y = sagcn_unit_forward(g, &pv, &unit, v[n], &a, 0.0, &mut ctx)?;
            weighted(g, y)
        },
        &params,
        GRAD_H,
    )
    .unwrap()
}

/// Finite-difference check of the attention map alone.
pub fn attention_gradcheck() -> GradCheckReport {
    let mut r = rng(8);
    let x = rand_tensor(&[2, 2, 3, 4], &mut r);
    let w = rand_tensor(&[3, 2], &mut r);
    finite_diff_check(
        |g, v| {
            let a = attention_map(g, v[0], v[1])?;
            weighted(g, a)
        },
        &[x, w],
        GRAD_H,
    )
    .unwrap()
}

pub fn small_rbi(hidden: usize, blocks: usize, horizon: usize, seed: u64) -> RbiNetwork {
    let cfg = RbiConfig {
        input_width: 6,
        hidden,
        blocks,
        dropout: 0.0,
        bidirectional: true,
        residual: true,
        horizon,
        num_classes: 2,
    };
    RbiNetwork::new(cfg, seed).unwrap()
}

/// Finite-difference check of one residual bidirectional block with three
/// neurons per direction over three steps.
pub fn rbi_block_gradcheck() -> GradCheckReport {
    let net = small_rbi(3, 1, 3, 4);
    let block = net.blocks[0].clone();
    let mut r = rng(9);
    let mut params: Vec<Tensor> = net
        .store
        .entries()
        .iter()
        .map(|e| e.tensor.clone())
        .collect();
    let n = params.len();
    params.push(rand_tensor(&[2, 3, 6], &mut r));
    finite_diff_check(
        |g, v| {
            let pv = ParamVars::from_vars(v[..n].to_vec());
            let mut ctx = ForwardCtx::new(Mode::Train, 0);
            let y = rbi_block_forward(g, &pv, &block, v[n], true, 0.0, &mut ctx)?;
            weighted(g, y)
        },
        &params,
        GRAD_H,
    )
    .unwrap()
}

/// Largest relative gap between `indrnn_forward` and a hand-unrolled
/// three-step recurrence.
pub fn indrnn_unroll_gap(seed: u64) -> f64 {
    let mut r = rng(seed);
    let (d, n) = (4, 3);
    let x = rand_tensor(&[1, 3, d], &mut r);
    let w = rand_tensor(&[d, n], &mut r);
    let u = rand_tensor(&[n], &mut r);
    let b = Tensor::from_fn(&[n], |_| r.random_range(0.0..0.5));
    let mut g = Graph::new();
    let vx = g.constant(x.clone()).unwrap();
    let layer = LayerVars {
        input: g.constant(w.clone()).unwrap(),
        recurrent: g.constant(u.clone()).unwrap(),
        bias: g.constant(b.clone()).unwrap(),
    };
    let h = indrnn_forward(&mut g, vx, &layer, None).unwrap();
    let got = g.value(h);

    let step = |t: usize, prev: &[f64]| -> Vec<f64> {
        (0..n)
            .map(|i| {
                let mut wx = 0.0;
                for k in 0..d {
                    wx += x.at(&[0, t, k]) * w.at(&[k, i]);
                }
                (wx + b.data()[i] + u.data()[i] * prev[i]).max(0.0)
            })
            .collect()
    };
    let h1 = step(0, &[0.0; 3]);
    let h2 = step(1, &h1);
    let h3 = step(2, &h2);
    let mut worst: f64 = 0.0;
    for (t, h) in [h1, h2, h3].iter().enumerate() {
        for i in 0..n {
            let a = got.at(&[0, t, i]);
            let gap = (a - h[i]).abs() / h[i].abs().max(f64::MIN_POSITIVE);
            worst = worst.max(if a == h[i] { 0.0 } else { gap });
        }
    }
    worst
}

/// Gradients `∂h_T/∂h_0` of a width-`n` recurrence with `u = 1`, `W = 0`
/// over `t` steps, one row per output neuron.
pub fn long_memory_jacobian(t: usize, n: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|i| {
            let mut g = Graph::new();
            let x = g.constant(Tensor::full(&[1, t, 2], 0.7)).unwrap();
            let layer = LayerVars {
                input: g.constant(Tensor::zeros(&[2, n])).unwrap(),
                recurrent: g.constant(Tensor::full(&[n], 1.0)).unwrap(),
                bias: g.constant(Tensor::zeros(&[n])).unwrap(),
            };
            let h0 = g
                .param(Tensor::from_fn(&[1, n], |k| 0.5 + k as f64))
                .unwrap();
            let h = indrnn_forward(&mut g, x, &layer, Some(h0)).unwrap();
            let last = g.select_time(h, t - 1).unwrap();
            let pick = (0..n).map(|k| if k == i { 1.0 } else { 0.0 }).collect();
            let out = g.weighted_sum(last, pick).unwrap();
            g.backward(out).unwrap().wrt(h0).unwrap().data().to_vec()
        })
        .collect()
}

/// Max `|u|` after clamping a network whose recurrent weights were pushed
/// far outside the bound.
pub fn clamped_magnitude(horizon: usize) -> f64 {
    let mut net = small_rbi(5, 2, horizon, 1);
    let mut r = rng(2);
    for id in net.recurrent_ids() {
        for u in net.store.get_mut(id).data_mut() {
            *u = r.random_range(-3.0..3.0);
        }
    }
    net.clamp_recurrent_weights(horizon);
    net.max_recurrent_magnitude()
}

pub fn bound(horizon: usize) -> f64 {
    recurrent_bound(horizon)
}

pub struct SyntheticSplits {
    pub train: Vec<gesture_core::data::PreparedSample>,
    pub val: Vec<gesture_core::data::PreparedSample>,
    pub test: Vec<gesture_core::data::PreparedSample>,
}

/// Generates, splits and prepares a synthetic DHG-layout dataset. With a
/// zero `test_fraction` everything but the validation draw trains.
pub fn synthetic_splits(
    ids: &[&str],
    noise: f64,
    per_class: usize,
    seed: u64,
    test_fraction: f64,
) -> SyntheticSplits {
    use gesture_core::data::{
        build_split, generate_synthetic, PrepareOptions, SplitProtocol, SyntheticSpec,
    };
    use gesture_core::train::prepare_all;
    let topo = SkeletonTopology::hand(DatasetKind::Dhg22).unwrap();
    let spec = SyntheticSpec::from_ids(ids, noise, per_class, seed).unwrap();
    let seqs = generate_synthetic(&spec, &topo).unwrap();
    let labels: Vec<usize> = seqs.iter().map(|s| s.label).collect();
    let split = build_split(
        &labels,
        &SplitProtocol::SyntheticRandom {
            seed,
            test_fraction,
        },
    )
    .unwrap();
    let pick = |idx: &[usize]| {
        let s: Vec<_> = idx.iter().map(|&i| seqs[i].clone()).collect();
        prepare_all(&s, &topo, PrepareOptions::default()).unwrap()
    };
    SyntheticSplits {
        train: pick(&split.train),
        val: pick(&split.val),
        test: pick(&split.test),
    }
}
