//! Reverse-mode differentiation over an explicitly recorded computation
//! graph. One [`Graph`] is built per forward pass; [`Graph::backward`]
//! sweeps it once in reverse insertion order.

use super::kernels::{gemm_nn, gemm_nt, gemm_tn, ConvGeometry};
use super::Tensor;
use crate::{Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    MulConst(Var, Vec<f64>),
    AddBias(Var, Var),
    Relu(Var),
    Reshape(Var),
    Transpose {
        x: Var,
        batch: usize,
        rows: usize,
        cols: usize,
    },
    MatMul {
        a: Var,
        b: Var,
        batch: usize,
        m: usize,
        k: usize,
        n: usize,
        a_batched: bool,
        b_batched: bool,
    },
    SoftmaxLast {
        x: Var,
        width: usize,
    },
    TemporalConv {
        x: Var,
        w: Var,
        geom: ConvGeometry,
        batch: usize,
        out_channels: usize,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        outer: usize,
        channels: usize,
        inner: usize,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        training: bool,
    },
    MeanPool {
        x: Var,
        len: usize,
    },
    SelectTime {
        x: Var,
        t: usize,
        time: usize,
        width: usize,
    },
    ReverseTime {
        x: Var,
        time: usize,
        width: usize,
    },
    Concat {
        a: Var,
        b: Var,
        wa: usize,
        wb: usize,
    },
    IndRnn {
        pre: Var,
        u: Var,
        h0: Option<Var>,
        batch: usize,
        time: usize,
        width: usize,
    },
    SoftmaxCrossEntropy {
        logits: Var,
        probs: Vec<f64>,
        labels: Vec<usize>,
        classes: usize,
    },
    Sum(Var),
    WeightedSum(Var, Vec<f64>),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::MulConst(..) => "mul_const",
            Op::AddBias(..) => "add_bias",
            Op::Relu(..) => "relu",
            Op::Reshape(..) => "reshape",
            Op::Transpose { .. } => "transpose",
            Op::MatMul { .. } => "matmul",
            Op::SoftmaxLast { .. } => "softmax",
            Op::TemporalConv { .. } => "temporal_conv",
            Op::BatchNorm { .. } => "batch_norm",
            Op::MeanPool { .. } => "mean_pool",
            Op::SelectTime { .. } => "select_time",
            Op::ReverseTime { .. } => "reverse_time",
            Op::Concat { .. } => "concat",
            Op::IndRnn { .. } => "indrnn",
            Op::SoftmaxCrossEntropy { .. } => "softmax_cross_entropy",
            Op::Sum(..) => "sum",
            Op::WeightedSum(..) => "weighted_sum",
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Batch statistics computed by a training-mode batch normalization.
#[derive(Clone, Debug)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of one backward sweep, indexed by leaf [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient with respect to a leaf, or `None` when the leaf did not
    /// require gradients or did not influence the loss.
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(
            op,
            format!("{:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    Ok(())
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite(op.name().to_string()));
        }
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Result<Var> {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn param(&mut self, value: Tensor) -> Result<Var> {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        same_shape("add", ta, tb)?;
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(x, y)| x + y)
            .collect();
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        let rg = self.rg(&[a, b]);
        self.push(out, Op::Add(a, b), rg)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        same_shape("mul", ta, tb)?;
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(x, y)| x * y)
            .collect();
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        let rg = self.rg(&[a, b]);
        self.push(out, Op::Mul(a, b), rg)
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Result<Var> {
        let tx = self.value(x);
        let out = Tensor::new(
            tx.shape().to_vec(),
            tx.data().iter().map(|v| v * s).collect(),
        )?;
        let rg = self.rg(&[x]);
        self.push(out, Op::Scale(x, s), rg)
    }

    /// Elementwise product with a constant (e.g. a dropout mask).
    pub fn mul_const(&mut self, x: Var, factors: Vec<f64>) -> Result<Var> {
        let tx = self.value(x);
        if factors.len() != tx.len() {
            return Err(Error::shape(
                "mul_const",
                format!("{} factors for {} values", factors.len(), tx.len()),
            ));
        }
        let data = tx.data().iter().zip(&factors).map(|(x, f)| x * f).collect();
        let out = Tensor::new(tx.shape().to_vec(), data)?;
        let rg = self.rg(&[x]);
        self.push(out, Op::MulConst(x, factors), rg)
    }

    /// Adds a bias vector along the last axis.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (tx, tb) = (self.value(x), self.value(bias));
        let w = *tx.shape().last().unwrap();
        if tb.len() != w {
            return Err(Error::shape(
                "add_bias",
                format!("bias {:?} for {:?}", tb.shape(), tx.shape()),
            ));
        }
        let data = tx
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| v + tb.data()[i % w])
            .collect();
        let out = Tensor::new(tx.shape().to_vec(), data)?;
        let rg = self.rg(&[x, bias]);
        self.push(out, Op::AddBias(x, bias), rg)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let tx = self.value(x);
        let out = Tensor::new(
            tx.shape().to_vec(),
            tx.data().iter().map(|v| v.max(0.0)).collect(),
        )?;
        let rg = self.rg(&[x]);
        self.push(out, Op::Relu(x), rg)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshaped(shape)?;
        let rg = self.rg(&[x]);
        self.push(out, Op::Reshape(x), rg)
    }

    /// Swaps the last two axes of a rank-2 or rank-3 tensor.
    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let tx = self.value(x);
        let (batch, rows, cols) = match *tx.shape() {
            [r, c] => (1, r, c),
            [b, r, c] => (b, r, c),
            ref s => return Err(Error::shape("transpose", format!("rank {} input", s.len()))),
        };
        let mut data = vec![0.0; tx.len()];
        for bi in 0..batch {
            let src = &tx.data()[bi * rows * cols..(bi + 1) * rows * cols];
            let dst = &mut data[bi * rows * cols..(bi + 1) * rows * cols];
            for r in 0..rows {
                for c in 0..cols {
                    dst[c * rows + r] = src[r * cols + c];
                }
            }
        }
        let mut shape = tx.shape().to_vec();
        let n = shape.len();
        shape.swap(n - 2, n - 1);
        let out = Tensor::new(shape, data)?;
        let rg = self.rg(&[x]);
        self.push(
            out,
            Op::Transpose {
                x,
                batch,
                rows,
                cols,
            },
            rg,
        )
    }

    /// Matrix product over the last two axes. Either operand may carry a
    /// leading batch axis; a rank-2 operand is shared across the batch.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (ba, m, k) = match *ta.shape() {
            [m, k] => (None, m, k),
            [b, m, k] => (Some(b), m, k),
            ref s => return Err(Error::shape("matmul", format!("lhs rank {}", s.len()))),
        };
        let (bb, k2, n) = match *tb.shape() {
            [k, n] => (None, k, n),
            [b, k, n] => (Some(b), k, n),
            ref s => return Err(Error::shape("matmul", format!("rhs rank {}", s.len()))),
        };
        if k != k2 {
            return Err(Error::shape(
                "matmul",
                format!("{:?} x {:?}", ta.shape(), tb.shape()),
            ));
        }
        let batch = match (ba, bb) {
            (Some(x), Some(y)) if x != y => {
                return Err(Error::shape("matmul", format!("batch {x} vs {y}")));
            }
            (Some(x), _) | (_, Some(x)) => x,
            (None, None) => 1,
        };
        let mut data = vec![0.0; batch * m * n];
        for bi in 0..batch {
            let ao = if ba.is_some() { bi * m * k } else { 0 };
            let bo = if bb.is_some() { bi * k * n } else { 0 };
            gemm_nn(
                m,
                k,
                n,
                &ta.data()[ao..ao + m * k],
                &tb.data()[bo..bo + k * n],
                &mut data[bi * m * n..(bi + 1) * m * n],
            );
        }
        let shape = if ba.is_some() || bb.is_some() {
            vec![batch, m, n]
        } else {
            vec![m, n]
        };
        let out = Tensor::new(shape, data)?;
        let rg = self.rg(&[a, b]);
        let op = Op::MatMul {
            a,
            b,
            batch,
            m,
            k,
            n,
            a_batched: ba.is_some(),
            b_batched: bb.is_some(),
        };
        self.push(out, op, rg)
    }

    /// Softmax over the last axis, stabilized by the row maximum.
    pub fn softmax_last(&mut self, x: Var) -> Result<Var> {
        let tx = self.value(x);
        let width = *tx.shape().last().unwrap();
        let mut data = tx.data().to_vec();
        for row in data.chunks_mut(width) {
            softmax_in_place(row);
        }
        let out = Tensor::new(tx.shape().to_vec(), data)?;
        let rg = self.rg(&[x]);
        self.push(out, Op::SoftmaxLast { x, width }, rg)
    }

    /// Node-wise convolution along time. `x` is `[B, C_in, T, J]`, `w` is
    /// `[C_out, C_in, taps]` with an odd tap count; zero padding `taps / 2`.
    pub fn temporal_conv(&mut self, x: Var, w: Var, stride: usize) -> Result<Var> {
        let (tx, tw) = (self.value(x), self.value(w));
        let [batch, cin, time, nodes] = *tx.shape() else {
            return Err(Error::shape(
                "temporal_conv",
                format!("input {:?} is not [B,C,T,J]", tx.shape()),
            ));
        };
        let [cout, cin_w, taps] = *tw.shape() else {
            return Err(Error::shape(
                "temporal_conv",
                format!("kernel {:?} is not [C_out,C_in,K]", tw.shape()),
            ));
        };
        if cin != cin_w {
            return Err(Error::shape(
                "temporal_conv",
                format!("input channels {cin} vs kernel {cin_w}"),
            ));
        }
        if taps % 2 == 0 {
            return Err(Error::InvalidArgument(format!(
                "temporal kernel must have an odd tap count, got {taps}"
            )));
        }
        if stride == 0 {
            return Err(Error::InvalidArgument(
                "temporal stride must be positive".into(),
            ));
        }
        let geom = ConvGeometry {
            channels: cin,
            time,
            nodes,
            taps,
            stride,
        };
        let (rows, cols_n) = (geom.col_rows(), geom.col_cols());
        let mut cols = vec![0.0; rows * cols_n];
        let block = cin * time * nodes;
        let mut data = vec![0.0; batch * cout * cols_n];
        for bi in 0..batch {
            geom.im2col(&tx.data()[bi * block..(bi + 1) * block], &mut cols);
            gemm_nn(
                cout,
                rows,
                cols_n,
                tw.data(),
                &cols,
                &mut data[bi * cout * cols_n..(bi + 1) * cout * cols_n],
            );
        }
        let out = Tensor::new(vec![batch, cout, geom.out_time(), nodes], data)?;
        let rg = self.rg(&[x, w]);
        self.push(
            out,
            Op::TemporalConv {
                x,
                w,
                geom,
                batch,
                out_channels: cout,
            },
            rg,
        )
    }

    /// Batch normalization over `channel_axis`. With `running = None` the
    /// batch statistics are used and returned; otherwise the given
    /// statistics are applied as constants.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        channel_axis: usize,
        eps: f64,
        running: Option<(&[f64], &[f64])>,
    ) -> Result<(Var, Option<BatchStats>)> {
        let tx = self.value(x);
        let shape = tx.shape();
        if channel_axis >= shape.len() {
            return Err(Error::shape(
                "batch_norm",
                format!("axis {channel_axis} for {shape:?}"),
            ));
        }
        let outer: usize = shape[..channel_axis].iter().product();
        let channels = shape[channel_axis];
        let inner: usize = shape[channel_axis + 1..].iter().product();
        let (tg, tb) = (self.value(gamma), self.value(beta));
        if tg.len() != channels || tb.len() != channels {
            return Err(Error::shape(
                "batch_norm",
                format!("{channels} channels, scale {} shift {}", tg.len(), tb.len()),
            ));
        }
        let count = (outer * inner) as f64;
        let idx = |o: usize, c: usize, i: usize| (o * channels + c) * inner + i;
        let (mean, var, training) = match running {
            Some((m, v)) => {
                if m.len() != channels || v.len() != channels {
                    return Err(Error::shape(
                        "batch_norm",
                        "running statistics length".to_string(),
                    ));
                }
                (m.to_vec(), v.to_vec(), false)
            }
            None => {
                let mut mean = vec![0.0; channels];
                let mut var = vec![0.0; channels];
                for c in 0..channels {
                    let mut s = 0.0;
                    for o in 0..outer {
                        for i in 0..inner {
                            s += tx.data()[idx(o, c, i)];
                        }
                    }
                    let mu = s / count;
                    let mut q = 0.0;
                    for o in 0..outer {
                        for i in 0..inner {
                            let d = tx.data()[idx(o, c, i)] - mu;
                            q += d * d;
                        }
                    }
                    mean[c] = mu;
                    var[c] = q / count;
                }
                (mean, var, true)
            }
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let mut xhat = vec![0.0; tx.len()];
        let mut data = vec![0.0; tx.len()];
        for o in 0..outer {
            for c in 0..channels {
                for i in 0..inner {
                    let p = idx(o, c, i);
                    let h = (tx.data()[p] - mean[c]) * inv_std[c];
                    xhat[p] = h;
                    data[p] = tg.data()[c] * h + tb.data()[c];
                }
            }
        }
        let out = Tensor::new(shape.to_vec(), data)?;
        let rg = self.rg(&[x, gamma, beta]);
        let v = self.push(
            out,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                outer,
                channels,
                inner,
                xhat,
                inv_std,
                training,
            },
            rg,
        )?;
        Ok((v, training.then_some(BatchStats { mean, var })))
    }

    /// Averages away every axis after the first `keep` axes.
    pub fn mean_pool(&mut self, x: Var, keep: usize) -> Result<Var> {
        let tx = self.value(x);
        if keep == 0 || keep >= tx.rank() {
            return Err(Error::shape(
                "mean_pool",
                format!("keep {keep} of {:?}", tx.shape()),
            ));
        }
        let out_shape = tx.shape()[..keep].to_vec();
        let len: usize = tx.shape()[keep..].iter().product();
        let data = tx
            .data()
            .chunks(len)
            .map(|c| c.iter().sum::<f64>() / len as f64)
            .collect();
        let out = Tensor::new(out_shape, data)?;
        let rg = self.rg(&[x]);
        self.push(out, Op::MeanPool { x, len }, rg)
    }

    /// Picks time step `t` of a `[B, T, W]` tensor, giving `[B, W]`.
    pub fn select_time(&mut self, x: Var, t: usize) -> Result<Var> {
        let tx = self.value(x);
        let [batch, time, width] = *tx.shape() else {
            return Err(Error::shape(
                "select_time",
                format!("{:?} is not [B,T,W]", tx.shape()),
            ));
        };
        if t >= time {
            return Err(Error::shape("select_time", format!("step {t} of {time}")));
        }
        let mut data = Vec::with_capacity(batch * width);
        for bi in 0..batch {
            let o = (bi * time + t) * width;
            data.extend_from_slice(&tx.data()[o..o + width]);
        }
        let out = Tensor::new(vec![batch, width], data)?;
        let rg = self.rg(&[x]);
        self.push(out, Op::SelectTime { x, t, time, width }, rg)
    }

    /// Reverses the time axis of a `[B, T, W]` tensor.
    pub fn reverse_time(&mut self, x: Var) -> Result<Var> {
        let tx = self.value(x);
        let [batch, time, width] = *tx.shape() else {
            return Err(Error::shape(
                "reverse_time",
                format!("{:?} is not [B,T,W]", tx.shape()),
            ));
        };
        let data = reverse_time_slice(tx.data(), batch, time, width);
        let out = Tensor::new(tx.shape().to_vec(), data)?;
        let rg = self.rg(&[x]);
        self.push(out, Op::ReverseTime { x, time, width }, rg)
    }

    /// Concatenates along the last axis.
    pub fn concat_last(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (sa, sb) = (ta.shape(), tb.shape());
        if sa.len() != sb.len() || sa[..sa.len() - 1] != sb[..sb.len() - 1] {
            return Err(Error::shape("concat", format!("{sa:?} vs {sb:?}")));
        }
        let (wa, wb) = (*sa.last().unwrap(), *sb.last().unwrap());
        let mut data = Vec::with_capacity(ta.len() + tb.len());
        for (ra, rb) in ta.data().chunks(wa).zip(tb.data().chunks(wb)) {
            data.extend_from_slice(ra);
            data.extend_from_slice(rb);
        }
        let mut shape = sa.to_vec();
        *shape.last_mut().unwrap() = wa + wb;
        let out = Tensor::new(shape, data)?;
        let rg = self.rg(&[a, b]);
        self.push(out, Op::Concat { a, b, wa, wb }, rg)
    }

    /// IndRNN recurrence `h_t = relu(pre_t + u ⊙ h_{t-1})` over a
    /// `[B, T, N]` pre-activation (`pre_t = W x_t + b`). `h0` is `[B, N]`
    /// and defaults to zeros.
    pub fn indrnn(&mut self, pre: Var, u: Var, h0: Option<Var>) -> Result<Var> {
        let (tp, tu) = (self.value(pre), self.value(u));
        let [batch, time, width] = *tp.shape() else {
            return Err(Error::shape(
                "indrnn",
                format!("{:?} is not [B,T,N]", tp.shape()),
            ));
        };
        if tu.len() != width {
            return Err(Error::shape(
                "indrnn",
                format!("recurrent weights {} for width {width}", tu.len()),
            ));
        }
        let mut prev = match h0 {
            Some(h) => {
                let th = self.value(h);
                if th.shape() != [batch, width] {
                    return Err(Error::shape(
                        "indrnn",
                        format!("h0 {:?}, expected [{batch}, {width}]", th.shape()),
                    ));
                }
                th.data().to_vec()
            }
            None => vec![0.0; batch * width],
        };
        let mut data = vec![0.0; tp.len()];
        for t in 0..time {
            for bi in 0..batch {
                let o = (bi * time + t) * width;
                for n in 0..width {
                    let z = tp.data()[o + n] + tu.data()[n] * prev[bi * width + n];
                    data[o + n] = z.max(0.0);
                }
            }
            for bi in 0..batch {
                let o = (bi * time + t) * width;
                prev[bi * width..(bi + 1) * width].copy_from_slice(&data[o..o + width]);
            }
        }
        let out = Tensor::new(tp.shape().to_vec(), data)?;
        let mut inputs = vec![pre, u];
        inputs.extend(h0);
        let rg = self.rg(&inputs);
        self.push(
            out,
            Op::IndRnn {
                pre,
                u,
                h0,
                batch,
                time,
                width,
            },
            rg,
        )
    }

    /// Mean softmax cross-entropy of `[B, K]` logits against class labels.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let tl = self.value(logits);
        let [batch, classes] = *tl.shape() else {
            return Err(Error::shape(
                "softmax_cross_entropy",
                format!("{:?} is not [B,K]", tl.shape()),
            ));
        };
        if labels.len() != batch {
            return Err(Error::shape(
                "softmax_cross_entropy",
                format!("{} labels for batch {batch}", labels.len()),
            ));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::InvalidArgument(format!(
                "label {bad} out of range for {classes} classes"
            )));
        }
        let mut probs = tl.data().to_vec();
        let mut loss = 0.0;
        for (row, &label) in probs.chunks_mut(classes).zip(labels) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            loss += lse - row[label];
            softmax_in_place(row);
        }
        let out = Tensor::scalar(loss / batch as f64);
        let rg = self.rg(&[logits]);
        self.push(
            out,
            Op::SoftmaxCrossEntropy {
                logits,
                probs,
                labels: labels.to_vec(),
                classes,
            },
            rg,
        )
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().sum();
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    /// `Σ x_i w_i` for constant weights.
    pub fn weighted_sum(&mut self, x: Var, weights: Vec<f64>) -> Result<Var> {
        let tx = self.value(x);
        if weights.len() != tx.len() {
            return Err(Error::shape(
                "weighted_sum",
                format!("{} weights for {} values", weights.len(), tx.len()),
            ));
        }
        let s = tx.data().iter().zip(&weights).map(|(a, b)| a * b).sum();
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(s), Op::WeightedSum(x, weights), rg)
    }

    /// Reverse sweep from a single-element `loss`. Gradients are kept for
    /// leaves only.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::shape(
                "backward",
                format!("loss has shape {:?}", self.shape(loss)),
            ));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(gout) = grads[idx].take() else {
                continue;
            };
            self.backprop_node(node, &gout, &mut grads);
        }

        let grads = grads
            .into_iter()
            .zip(&self.nodes)
            .map(|(g, n)| match (g, &n.op) {
                (Some(g), Op::Leaf) if n.requires_grad => {
                    Some(Tensor::new(n.value.shape().to_vec(), g).expect("gradient shape"))
                }
                _ => None,
            })
            .collect();
        Ok(Gradients { grads })
    }

    fn backprop_node(&self, node: &Node, gout: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let val = |v: Var| nodes[v.0].value.data();
        // Returns the accumulator of `v`, or None when it needs no gradient.
        fn acc<'g>(
            nodes: &[Node],
            grads: &'g mut [Option<Vec<f64>>],
            v: Var,
        ) -> Option<&'g mut Vec<f64>> {
            if !nodes[v.0].requires_grad {
                return None;
            }
            let n = nodes[v.0].value.len();
            Some(grads[v.0].get_or_insert_with(|| vec![0.0; n]))
        }

        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if let Some(g) = acc(nodes, grads, v) {
                        g.iter_mut().zip(gout).for_each(|(x, y)| *x += y);
                    }
                }
            }
            Op::Mul(a, b) => {
                if let Some(g) = acc(nodes, grads, *a) {
                    for ((x, y), o) in g.iter_mut().zip(gout).zip(val(*b)) {
                        *x += y * o;
                    }
                }
                if let Some(g) = acc(nodes, grads, *b) {
                    for ((x, y), o) in g.iter_mut().zip(gout).zip(val(*a)) {
                        *x += y * o;
                    }
                }
            }
            Op::Scale(x, s) => {
                if let Some(g) = acc(nodes, grads, *x) {
                    g.iter_mut().zip(gout).for_each(|(a, b)| *a += b * s);
                }
            }
            Op::MulConst(x, f) => {
                if let Some(g) = acc(nodes, grads, *x) {
                    for ((a, b), m) in g.iter_mut().zip(gout).zip(f) {
                        *a += b * m;
                    }
                }
            }
            Op::AddBias(x, bias) => {
                if let Some(g) = acc(nodes, grads, *x) {
                    g.iter_mut().zip(gout).for_each(|(a, b)| *a += b);
                }
                if let Some(g) = acc(nodes, grads, *bias) {
                    let w = g.len();
                    for (i, b) in gout.iter().enumerate() {
                        g[i % w] += b;
                    }
                }
            }
            Op::Relu(x) => {
                if let Some(g) = acc(nodes, grads, *x) {
                    for ((a, b), o) in g.iter_mut().zip(gout).zip(node.value.data()) {
                        if *o > 0.0 {
                            *a += b;
                        }
                    }
                }
            }
            Op::Reshape(x) => {
                if let Some(g) = acc(nodes, grads, *x) {
                    g.iter_mut().zip(gout).for_each(|(a, b)| *a += b);
                }
            }
            Op::Transpose {
                x,
                batch,
                rows,
                cols,
            } => {
                if let Some(g) = acc(nodes, grads, *x) {
                    let blk = rows * cols;
                    for bi in 0..*batch {
                        for r in 0..*rows {
                            for c in 0..*cols {
                                g[bi * blk + r * cols + c] += gout[bi * blk + c * rows + r];
                            }
                        }
                    }
                }
            }
            Op::MatMul {
                a,
                b,
                batch,
                m,
                k,
                n,
                a_batched,
                b_batched,
            } => {
                let (m, k, n) = (*m, *k, *n);
                let (av, bv) = (val(*a), val(*b));
                if let Some(g) = acc(nodes, grads, *a) {
                    for bi in 0..*batch {
                        let ao = if *a_batched { bi * m * k } else { 0 };
                        let bo = if *b_batched { bi * k * n } else { 0 };
                        gemm_nt(
                            m,
                            n,
                            k,
                            &gout[bi * m * n..(bi + 1) * m * n],
                            &bv[bo..bo + k * n],
                            &mut g[ao..ao + m * k],
                        );
                    }
                }
                if let Some(g) = acc(nodes, grads, *b) {
                    for bi in 0..*batch {
                        let ao = if *a_batched { bi * m * k } else { 0 };
                        let bo = if *b_batched { bi * k * n } else { 0 };
                        gemm_tn(
                            k,
                            m,
                            n,
                            &av[ao..ao + m * k],
                            &gout[bi * m * n..(bi + 1) * m * n],
                            &mut g[bo..bo + k * n],
                        );
                    }
                }
            }
            Op::SoftmaxLast { x, width } => {
                if let Some(g) = acc(nodes, grads, *x) {
                    let p = node.value.data();
                    for ((gr, dr), pr) in g
                        .chunks_mut(*width)
                        .zip(gout.chunks(*width))
                        .zip(p.chunks(*width))
                    {
                        let dot: f64 = dr.iter().zip(pr).map(|(d, p)| d * p).sum();
                        for ((gi, di), pi) in gr.iter_mut().zip(dr).zip(pr) {
                            *gi += pi * (di - dot);
                        }
                    }
                }
            }
            Op::TemporalConv {
                x,
                w,
                geom,
                batch,
                out_channels,
            } => {
                let (rows, cols_n) = (geom.col_rows(), geom.col_cols());
                let block = geom.channels * geom.time * geom.nodes;
                let out_block = out_channels * cols_n;
                let (xv, wv) = (val(*x), val(*w));
                let mut cols = vec![0.0; rows * cols_n];
                if nodes[w.0].requires_grad {
                    for bi in 0..*batch {
                        geom.im2col(&xv[bi * block..(bi + 1) * block], &mut cols);
                        let g = acc(nodes, grads, *w).unwrap();
                        gemm_nt(
                            *out_channels,
                            cols_n,
                            rows,
                            &gout[bi * out_block..(bi + 1) * out_block],
                            &cols,
                            g,
                        );
                    }
                }
                if let Some(g) = acc(nodes, grads, *x) {
                    for bi in 0..*batch {
                        cols.fill(0.0);
                        gemm_tn(
                            rows,
                            *out_channels,
                            cols_n,
                            wv,
                            &gout[bi * out_block..(bi + 1) * out_block],
                            &mut cols,
                        );
                        geom.col2im(&cols, &mut g[bi * block..(bi + 1) * block]);
                    }
                }
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                outer,
                channels,
                inner,
                xhat,
                inv_std,
                training,
            } => {
                let (outer, channels, inner) = (*outer, *channels, *inner);
                let idx = |o: usize, c: usize, i: usize| (o * channels + c) * inner + i;
                let gam = val(*gamma);
                let mut sum_dy = vec![0.0; channels];
                let mut sum_dy_xhat = vec![0.0; channels];
                for o in 0..outer {
                    for c in 0..channels {
                        for i in 0..inner {
                            let p = idx(o, c, i);
                            sum_dy[c] += gout[p];
                            sum_dy_xhat[c] += gout[p] * xhat[p];
                        }
                    }
                }
                if let Some(g) = acc(nodes, grads, *x) {
                    let count = (outer * inner) as f64;
                    for o in 0..outer {
                        for c in 0..channels {
                            for i in 0..inner {
                                let p = idx(o, c, i);
                                g[p] += if *training {
                                    gam[c] * inv_std[c] / count
                                        * (count * gout[p] - sum_dy[c] - xhat[p] * sum_dy_xhat[c])
                                } else {
                                    gam[c] * inv_std[c] * gout[p]
                                };
                            }
                        }
                    }
                }
                if let Some(g) = acc(nodes, grads, *gamma) {
                    g.iter_mut().zip(&sum_dy_xhat).for_each(|(a, b)| *a += b);
                }
                if let Some(g) = acc(nodes, grads, *beta) {
                    g.iter_mut().zip(&sum_dy).for_each(|(a, b)| *a += b);
                }
            }
            Op::MeanPool { x, len } => {
                if let Some(g) = acc(nodes, grads, *x) {
                    let inv = 1.0 / *len as f64;
                    for (chunk, d) in g.chunks_mut(*len).zip(gout) {
                        chunk.iter_mut().for_each(|a| *a += d * inv);
                    }
                }
            }
            Op::SelectTime { x, t, time, width } => {
                if let Some(g) = acc(nodes, grads, *x) {
                    for (bi, d) in gout.chunks(*width).enumerate() {
                        let o = (bi * time + t) * width;
                        g[o..o + width].iter_mut().zip(d).for_each(|(a, b)| *a += b);
                    }
                }
            }
            Op::ReverseTime { x, time, width } => {
                if let Some(g) = acc(nodes, grads, *x) {
                    let batch = gout.len() / (time * width);
                    let r = reverse_time_slice(gout, batch, *time, *width);
                    g.iter_mut().zip(&r).for_each(|(a, b)| *a += b);
                }
            }
            Op::Concat { a, b, wa, wb } => {
                let w = wa + wb;
                if let Some(g) = acc(nodes, grads, *a) {
                    for (gr, dr) in g.chunks_mut(*wa).zip(gout.chunks(w)) {
                        gr.iter_mut().zip(&dr[..*wa]).for_each(|(x, y)| *x += y);
                    }
                }
                if let Some(g) = acc(nodes, grads, *b) {
                    for (gr, dr) in g.chunks_mut(*wb).zip(gout.chunks(w)) {
                        gr.iter_mut().zip(&dr[*wa..]).for_each(|(x, y)| *x += y);
                    }
                }
            }
            Op::IndRnn {
                pre,
                u,
                h0,
                batch,
                time,
                width,
            } => {
                let (batch, time, width) = (*batch, *time, *width);
                let h = node.value.data();
                let uv = val(*u);
                let h0v = h0.map(|v| val(v));
                let mut dz = vec![0.0; h.len()];
                let mut du = vec![0.0; width];
                let mut carry = vec![0.0; batch * width];
                for t in (0..time).rev() {
                    for bi in 0..batch {
                        let o = (bi * time + t) * width;
                        for n in 0..width {
                            let c = bi * width + n;
                            let dh = gout[o + n] + carry[c];
                            let d = if h[o + n] > 0.0 { dh } else { 0.0 };
                            dz[o + n] = d;
                            let prev = if t > 0 {
                                h[o - width + n]
                            } else {
                                h0v.map_or(0.0, |h0| h0[c])
                            };
                            du[n] += d * prev;
                            carry[c] = d * uv[n];
                        }
                    }
                }
                if let Some(g) = acc(nodes, grads, *pre) {
                    g.iter_mut().zip(&dz).for_each(|(a, b)| *a += b);
                }
                if let Some(g) = acc(nodes, grads, *u) {
                    g.iter_mut().zip(&du).for_each(|(a, b)| *a += b);
                }
                if let Some(h0) = h0 {
                    if let Some(g) = acc(nodes, grads, *h0) {
                        g.iter_mut().zip(&carry).for_each(|(a, b)| *a += b);
                    }
                }
            }
            Op::SoftmaxCrossEntropy {
                logits,
                probs,
                labels,
                classes,
            } => {
                if let Some(g) = acc(nodes, grads, *logits) {
                    let scale = gout[0] / labels.len() as f64;
                    for (bi, &label) in labels.iter().enumerate() {
                        for c in 0..*classes {
                            let p = probs[bi * classes + c];
                            let y = if c == label { 1.0 } else { 0.0 };
                            g[bi * classes + c] += scale * (p - y);
                        }
                    }
                }
            }
            Op::Sum(x) => {
                if let Some(g) = acc(nodes, grads, *x) {
                    g.iter_mut().for_each(|a| *a += gout[0]);
                }
            }
            Op::WeightedSum(x, w) => {
                if let Some(g) = acc(nodes, grads, *x) {
                    g.iter_mut().zip(w).for_each(|(a, b)| *a += gout[0] * b);
                }
            }
        }
    }
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        s += *v;
    }
    row.iter_mut().for_each(|v| *v /= s);
}

fn reverse_time_slice(x: &[f64], batch: usize, time: usize, width: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for bi in 0..batch {
        for t in 0..time {
            let src = (bi * time + t) * width;
            let dst = (bi * time + time - 1 - t) * width;
            out[dst..dst + width].copy_from_slice(&x[src..src + width]);
        }
    }
    out
}
