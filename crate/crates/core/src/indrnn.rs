//! Residual bidirectional IndRNN stream.
//!
//! Sequences are `[B, T, D]`. Each recurrent layer computes
//! `h_t = ReLU(W x_t + u ⊙ h_{t-1} + b)` with an elementwise recurrent
//! weight `u`, so every neuron recurs only on itself.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::tensor::{
    dropout, BatchNorm, ForwardCtx, Graph, ParamId, ParamStore, ParamVars, Tensor, Var,
};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct RbiConfig {
    /// Per-frame feature width (`6·J`: coordinates then displacements).
    pub input_width: usize,
    /// Neurons per direction.
    pub hidden: usize,
    pub blocks: usize,
    pub dropout: f64,
    pub bidirectional: bool,
    pub residual: bool,
    /// Sequence length the recurrent-weight bound is computed for.
    pub horizon: usize,
    pub num_classes: usize,
}

impl RbiConfig {
    /// 512 neurons per direction, six blocks, 1024-wide classifier input.
    pub fn standard(joints: usize, num_classes: usize) -> Self {
        Self::with_hidden(512, joints, num_classes)
    }

    pub fn with_hidden(hidden: usize, joints: usize, num_classes: usize) -> Self {
        RbiConfig {
            input_width: 6 * joints,
            hidden,
            blocks: 6,
            dropout: 0.2,
            bidirectional: true,
            residual: true,
            horizon: 20,
            num_classes,
        }
    }

    /// Width of the residual stream and of the classifier input.
    pub fn width(&self) -> usize {
        if self.bidirectional {
            2 * self.hidden
        } else {
            self.hidden
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_width == 0
            || self.hidden == 0
            || self.blocks == 0
            || self.num_classes == 0
            || self.horizon == 0
        {
            return Err(Error::InvalidArgument(
                "recurrent stream sizes must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidArgument(format!(
                "dropout {} outside [0, 1)",
                self.dropout
            )));
        }
        Ok(())
    }
}

/// Largest admissible `|u_i|` for sequences of length `horizon`:
/// `2^(1/T)`, so `|u|^T ≤ 2`.
pub fn recurrent_bound(horizon: usize) -> f64 {
    2f64.powf(1.0 / horizon as f64)
}

#[derive(Clone, Debug)]
pub struct IndRnnLayer {
    pub input: ParamId,
    pub recurrent: ParamId,
    pub bias: ParamId,
    pub neurons: usize,
}

impl IndRnnLayer {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        input_width: usize,
        neurons: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let input = store.add(
            format!("{prefix}.input"),
            Tensor::glorot(&[input_width, neurons], input_width, neurons, rng),
        );
        let u = Tensor::from_fn(&[neurons], |_| rng.random_range(0.0..1.0));
        let recurrent = store.add(format!("{prefix}.recurrent"), u);
        let bias = store.add(format!("{prefix}.bias"), Tensor::zeros(&[neurons]));
        IndRnnLayer {
            input,
            recurrent,
            bias,
            neurons,
        }
    }

    pub fn vars(&self, pv: &ParamVars) -> LayerVars {
        LayerVars {
            input: pv.var(self.input),
            recurrent: pv.var(self.recurrent),
            bias: pv.var(self.bias),
        }
    }
}

/// Graph handles of one recurrent layer.
#[derive(Clone, Copy, Debug)]
pub struct LayerVars {
    pub input: Var,
    pub recurrent: Var,
    pub bias: Var,
}

/// `x` is `[B, T, D]`; returns the hidden sequence `[B, T, N]`.
pub fn indrnn_forward(g: &mut Graph, x: Var, layer: &LayerVars, h0: Option<Var>) -> Result<Var> {
    if g.shape(x).len() != 3 {
        return Err(Error::shape(
            "indrnn_forward",
            format!("{:?} is not [B,T,D]", g.shape(x)),
        ));
    }
    let pre = g.matmul(x, layer.input)?;
    let pre = g.add_bias(pre, layer.bias)?;
    g.indrnn(pre, layer.recurrent, h0)
}

/// Forward-time and reversed-time passes, concatenated per step as
/// `[h_fwd ‖ h_bwd]`.
pub fn bi_indrnn_forward(g: &mut Graph, x: Var, fwd: &LayerVars, bwd: &LayerVars) -> Result<Var> {
    let hf = indrnn_forward(g, x, fwd, None)?;
    let xr = g.reverse_time(x)?;
    let hb = indrnn_forward(g, xr, bwd, None)?;
    let hb = g.reverse_time(hb)?;
    g.concat_last(hf, hb)
}

#[derive(Clone, Debug)]
pub struct RbiBlock {
    pub bn: BatchNorm,
    pub forward: IndRnnLayer,
    pub backward: Option<IndRnnLayer>,
    pub post_weight: ParamId,
    pub post_bias: ParamId,
}

impl RbiBlock {
    fn new(store: &mut ParamStore, prefix: &str, config: &RbiConfig, rng: &mut ChaCha8Rng) -> Self {
        let w = config.width();
        let bn = BatchNorm::new(store, &format!("{prefix}.bn"), w);
        let forward = IndRnnLayer::new(store, &format!("{prefix}.fwd"), w, config.hidden, rng);
        let backward = config
            .bidirectional
            .then(|| IndRnnLayer::new(store, &format!("{prefix}.bwd"), w, config.hidden, rng));
        let post_weight = store.add(
            format!("{prefix}.post.weight"),
            Tensor::glorot(&[w, w], w, w, rng),
        );
        let post_bias = store.add(format!("{prefix}.post.bias"), Tensor::zeros(&[w]));
        RbiBlock {
            bn,
            forward,
            backward,
            post_weight,
            post_bias,
        }
    }
}

/// Pre-activation residual block: `y = x + Weight(BiIndRNN(BN(x)))`, with
/// dropout on the branch output.
pub fn rbi_block_forward(
    g: &mut Graph,
    pv: &ParamVars,
    block: &RbiBlock,
    x: Var,
    residual: bool,
    dropout_rate: f64,
    ctx: &mut ForwardCtx,
) -> Result<Var> {
    let h = block.bn.forward(g, pv, x, 2, ctx)?;
    let r = match &block.backward {
        Some(bwd) => bi_indrnn_forward(g, h, &block.forward.vars(pv), &bwd.vars(pv))?,
        None => indrnn_forward(g, h, &block.forward.vars(pv), None)?,
    };
    let r = g.matmul(r, pv.var(block.post_weight))?;
    let r = g.add_bias(r, pv.var(block.post_bias))?;
    let r = dropout(g, r, dropout_rate, ctx)?;
    if residual {
        g.add(x, r)
    } else {
        Ok(r)
    }
}

#[derive(Clone, Debug)]
pub struct RbiNetwork {
    pub config: RbiConfig,
    pub store: ParamStore,
    pub proj_weight: ParamId,
    pub proj_bias: ParamId,
    pub blocks: Vec<RbiBlock>,
    pub fc_weight: ParamId,
    pub fc_bias: ParamId,
}

impl RbiNetwork {
    pub fn new(config: RbiConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let (d, w, k) = (config.input_width, config.width(), config.num_classes);
        let proj_weight = store.add("proj.weight", Tensor::glorot(&[d, w], d, w, &mut rng));
        let proj_bias = store.add("proj.bias", Tensor::zeros(&[w]));
        let blocks = (0..config.blocks)
            .map(|i| RbiBlock::new(&mut store, &format!("block{i}"), &config, &mut rng))
            .collect();
        let fc_weight = store.add("fc.weight", Tensor::glorot(&[w, k], w, k, &mut rng));
        let fc_bias = store.add("fc.bias", Tensor::zeros(&[k]));
        Ok(RbiNetwork {
            config,
            store,
            proj_weight,
            proj_bias,
            blocks,
            fc_weight,
            fc_bias,
        })
    }

    /// Output of the block stack, `[B, T, width]`.
    pub fn features(
        &self,
        g: &mut Graph,
        pv: &ParamVars,
        x: Var,
        ctx: &mut ForwardCtx,
    ) -> Result<Var> {
        let shape = g.shape(x).to_vec();
        if shape.len() != 3 || shape[2] != self.config.input_width {
            return Err(Error::shape(
                "rbi_forward",
                format!(
                    "features {shape:?}, expected [B, T, {}]",
                    self.config.input_width
                ),
            ));
        }
        let mut h = g.matmul(x, pv.var(self.proj_weight))?;
        h = g.add_bias(h, pv.var(self.proj_bias))?;
        for block in &self.blocks {
            h = rbi_block_forward(
                g,
                pv,
                block,
                h,
                self.config.residual,
                self.config.dropout,
                ctx,
            )?;
        }
        Ok(h)
    }

    /// Class logits `[B, K]` from the last time step.
    pub fn logits(
        &self,
        g: &mut Graph,
        pv: &ParamVars,
        x: Var,
        ctx: &mut ForwardCtx,
    ) -> Result<Var> {
        let h = self.features(g, pv, x, ctx)?;
        let t = g.shape(h)[1];
        let last = g.select_time(h, t - 1)?;
        let z = g.matmul(last, pv.var(self.fc_weight))?;
        g.add_bias(z, pv.var(self.fc_bias))
    }

    /// Class probabilities `[B, K]`.
    pub fn forward(
        &self,
        g: &mut Graph,
        pv: &ParamVars,
        x: Var,
        ctx: &mut ForwardCtx,
    ) -> Result<Var> {
        let z = self.logits(g, pv, x, ctx)?;
        g.softmax_last(z)
    }

    pub fn recurrent_ids(&self) -> Vec<ParamId> {
        self.blocks
            .iter()
            .flat_map(|b| std::iter::once(&b.forward).chain(b.backward.as_ref()))
            .map(|l| l.recurrent)
            .collect()
    }

    /// Clips every recurrent weight into `[-2^(1/T), 2^(1/T)]`.
    pub fn clamp_recurrent_weights(&mut self, horizon: usize) {
        let bound = recurrent_bound(horizon.max(1));
        for id in self.recurrent_ids() {
            for u in self.store.get_mut(id).data_mut() {
                *u = u.clamp(-bound, bound);
            }
        }
    }

    pub fn max_recurrent_magnitude(&self) -> f64 {
        self.recurrent_ids()
            .into_iter()
            .flat_map(|id| self.store.get(id).data().to_vec())
            .fold(0.0, |m, u: f64| m.max(u.abs()))
    }
}
