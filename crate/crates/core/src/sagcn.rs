//! Self-attention graph convolution stream.
//!
//! Feature maps are laid out `[B, C, T, J]`. Channel maps are 1×1
//! convolutions (`[C_out, C_in]` weights); adjacency and attention matrices
//! multiply from the right along the joint axis, `f · A`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::tensor::{
    dropout, BatchNorm, ForwardCtx, Graph, ParamId, ParamStore, ParamVars, Tensor, Var,
};
use crate::{Error, Result};

/// Tolerance on the row sums of the attention map.
pub const ROW_SUM_TOL: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct SagcnConfig {
    pub in_channels: usize,
    pub channels: Vec<usize>,
    pub strides: Vec<usize>,
    pub temporal_kernel: usize,
    pub unit_shortcut: bool,
    pub dropout: f64,
    pub joints: usize,
    pub num_classes: usize,
}

impl SagcnConfig {
    /// Six units of 64, 64, 128, 128, 256, 256 channels; the fourth unit
    /// halves time.
    pub fn standard(joints: usize, num_classes: usize) -> Self {
        Self::with_channels(vec![64, 64, 128, 128, 256, 256], joints, num_classes)
    }

    pub fn with_channels(channels: Vec<usize>, joints: usize, num_classes: usize) -> Self {
        let strides = (0..channels.len())
            .map(|i| if i == 3 { 2 } else { 1 })
            .collect();
        SagcnConfig {
            in_channels: 3,
            channels,
            strides,
            temporal_kernel: 9,
            unit_shortcut: true,
            dropout: 0.5,
            joints,
            num_classes,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels.is_empty() || self.channels.contains(&0) {
            return Err(Error::InvalidArgument(
                "channel plan must be non-empty and positive".into(),
            ));
        }
        if self.strides.len() != self.channels.len() || self.strides.contains(&0) {
            return Err(Error::InvalidArgument(
                "one positive stride per unit required".into(),
            ));
        }
        if self.temporal_kernel % 2 == 0 {
            return Err(Error::InvalidArgument("temporal kernel must be odd".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidArgument(format!(
                "dropout {} outside [0, 1)",
                self.dropout
            )));
        }
        if self.joints == 0 || self.num_classes == 0 || self.in_channels == 0 {
            return Err(Error::InvalidArgument(
                "joints, classes and input channels must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub enum Shortcut {
    None,
    Identity,
    /// Strided 1×1 channel map, stored as a one-tap temporal kernel.
    Projection(ParamId),
}

#[derive(Clone, Debug)]
pub struct SagcnUnit {
    pub attention: ParamId,
    pub graph: [ParamId; 3],
    pub global: ParamId,
    pub temporal: ParamId,
    pub bn_spatial: BatchNorm,
    pub bn_temporal: BatchNorm,
    pub shortcut: Shortcut,
    pub stride: usize,
    pub in_channels: usize,
    pub out_channels: usize,
}

/// Parameter handles of one unit resolved against a graph.
#[derive(Clone, Copy, Debug)]
pub struct SpatialWeights {
    pub attention: Var,
    pub graph: [Var; 3],
    pub global: Var,
}

impl SagcnUnit {
    fn new(
        store: &mut ParamStore,
        prefix: &str,
        in_channels: usize,
        out_channels: usize,
        stride: usize,
        taps: usize,
        shortcut: bool,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let (ci, co) = (in_channels, out_channels);
        let mut mat = |store: &mut ParamStore, name: &str| {
            store.add(
                format!("{prefix}.{name}"),
                Tensor::glorot(&[co, ci], ci, co, rng),
            )
        };
        let attention = mat(store, "attention");
        let graph = [
            mat(store, "graph0"),
            mat(store, "graph1"),
            mat(store, "graph2"),
        ];
        let global = mat(store, "global");
        let temporal = store.add(
            format!("{prefix}.temporal"),
            Tensor::glorot(&[co, co, taps], co * taps, co * taps, rng),
        );
        let bn_spatial = BatchNorm::new(store, &format!("{prefix}.bn_spatial"), co);
        let bn_temporal = BatchNorm::new(store, &format!("{prefix}.bn_temporal"), co);
        let shortcut = if !shortcut {
            Shortcut::None
        } else if ci == co && stride == 1 {
            Shortcut::Identity
        } else {
            Shortcut::Projection(store.add(
                format!("{prefix}.shortcut"),
                Tensor::glorot(&[co, ci, 1], ci, co, rng),
            ))
        };
        SagcnUnit {
            attention,
            graph,
            global,
            temporal,
            bn_spatial,
            bn_temporal,
            shortcut,
            stride,
            in_channels: ci,
            out_channels: co,
        }
    }

    pub fn spatial_weights(&self, pv: &ParamVars) -> SpatialWeights {
        SpatialWeights {
            attention: pv.var(self.attention),
            graph: self.graph.map(|p| pv.var(p)),
            global: pv.var(self.global),
        }
    }
}

/// 1×1 channel map: `[C_out, C_in]` applied to `[B, C_in, T, J]`.
pub fn channel_map(g: &mut Graph, w: Var, x: Var) -> Result<Var> {
    let [b, c, t, j] = dims4(g, x, "channel_map")?;
    let xr = g.reshape(x, &[b, c, t * j])?;
    let y = g.matmul(w, xr)?;
    let co = g.shape(w)[0];
    g.reshape(y, &[b, co, t, j])
}

/// `f · A` along the joint axis; `a` is `[J, J]` or `[B, J, J]`.
pub fn joint_mix(g: &mut Graph, x: Var, a: Var) -> Result<Var> {
    let [b, c, t, j] = dims4(g, x, "joint_mix")?;
    let aj = *g.shape(a).last().unwrap();
    if aj != j {
        return Err(Error::shape(
            "joint_mix",
            format!("{j} joints vs matrix {:?}", g.shape(a)),
        ));
    }
    let xr = g.reshape(x, &[b, c * t, j])?;
    let y = g.matmul(xr, a)?;
    g.reshape(y, &[b, c, t, j])
}

fn dims4(g: &Graph, x: Var, op: &'static str) -> Result<[usize; 4]> {
    match *g.shape(x) {
        [b, c, t, j] => Ok([b, c, t, j]),
        ref s => Err(Error::shape(op, format!("{s:?} is not [B,C,T,J]"))),
    }
}

/// Learned joint-to-joint attention: `f_a = W_a f`, reshaped to
/// `(C_e·T) × J`, scores `f_aᵀ f_a` and a softmax along each row.
/// Returns `[B, J, J]`.
pub fn attention_map(g: &mut Graph, x: Var, w_attention: Var) -> Result<Var> {
    let fa = channel_map(g, w_attention, x)?;
    let [b, ce, t, j] = dims4(g, fa, "attention_map")?;
    let fa = g.reshape(fa, &[b, ce * t, j])?;
    let fat = g.transpose(fa)?;
    let scores = g.matmul(fat, fa)?;
    g.softmax_last(scores)
}

/// Max deviation of any row sum from one.
pub fn row_sum_deviation(m: &Tensor) -> f64 {
    let j = *m.shape().last().unwrap();
    m.data()
        .chunks(j)
        .map(|r| (r.iter().sum::<f64>() - 1.0).abs())
        .fold(0.0, f64::max)
}

/// `ReLU(Σ_k W_k f A_k + W_g f A_g)`.
pub fn sagcn_spatial(
    g: &mut Graph,
    x: Var,
    adjacency: &[Var; 3],
    attention: Var,
    w: &SpatialWeights,
) -> Result<Var> {
    let j = g.shape(x).last().copied().unwrap_or(0);
    for a in adjacency.iter().chain(std::iter::once(&attention)) {
        if g.shape(*a).last() != Some(&j) {
            return Err(Error::shape(
                "sagcn_spatial",
                format!("{j} joints vs matrix {:?}", g.shape(*a)),
            ));
        }
    }
    let mut acc = None;
    for (a, wk) in adjacency.iter().zip(w.graph) {
        let mixed = joint_mix(g, x, *a)?;
        let term = channel_map(g, wk, mixed)?;
        acc = Some(match acc {
            None => term,
            Some(s) => g.add(s, term)?,
        });
    }
    let mixed = joint_mix(g, x, attention)?;
    let global = channel_map(g, w.global, mixed)?;
    let sum = g.add(acc.unwrap(), global)?;
    g.relu(sum)
}

/// One unit: attention, spatial aggregation, BN, temporal convolution, BN,
/// shortcut, ReLU, dropout.
pub fn sagcn_unit_forward(
    g: &mut Graph,
    pv: &ParamVars,
    unit: &SagcnUnit,
    x: Var,
    adjacency: &[Var; 3],
    dropout_rate: f64,
    ctx: &mut ForwardCtx,
) -> Result<Var> {
    let [_, c, _, _] = dims4(g, x, "sagcn_unit")?;
    if c != unit.in_channels {
        return Err(Error::shape(
            "sagcn_unit",
            format!("{c} input channels, unit expects {}", unit.in_channels),
        ));
    }
    let w = unit.spatial_weights(pv);
    let a_g = attention_map(g, x, w.attention)?;
    let dev = row_sum_deviation(g.value(a_g));
    if dev > ROW_SUM_TOL {
        return Err(Error::InvalidArgument(format!(
            "attention rows deviate from 1 by {dev}"
        )));
    }
    ctx.record_attention(g.value(a_g));
    let s = sagcn_spatial(g, x, adjacency, a_g, &w)?;
    let s = unit.bn_spatial.forward(g, pv, s, 1, ctx)?;
    let t = g.temporal_conv(s, pv.var(unit.temporal), unit.stride)?;
    let t = unit.bn_temporal.forward(g, pv, t, 1, ctx)?;
    let y = match unit.shortcut {
        Shortcut::None => t,
        Shortcut::Identity => g.add(t, x)?,
        Shortcut::Projection(p) => {
            let r = g.temporal_conv(x, pv.var(p), unit.stride)?;
            g.add(t, r)?
        }
    };
    let y = g.relu(y)?;
    dropout(g, y, dropout_rate, ctx)
}

#[derive(Clone, Debug)]
pub struct SagcnNetwork {
    pub config: SagcnConfig,
    pub store: ParamStore,
    pub units: Vec<SagcnUnit>,
    pub fc_weight: ParamId,
    pub fc_bias: ParamId,
}

impl SagcnNetwork {
    pub fn new(config: SagcnConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let mut units = Vec::with_capacity(config.channels.len());
        let mut cin = config.in_channels;
        for (i, (&co, &stride)) in config.channels.iter().zip(&config.strides).enumerate() {
            units.push(SagcnUnit::new(
                &mut store,
                &format!("unit{i}"),
                cin,
                co,
                stride,
                config.temporal_kernel,
                config.unit_shortcut,
                &mut rng,
            ));
            cin = co;
        }
        let k = config.num_classes;
        let fc_weight = store.add("fc.weight", Tensor::glorot(&[cin, k], cin, k, &mut rng));
        let fc_bias = store.add("fc.bias", Tensor::zeros(&[k]));
        Ok(SagcnNetwork {
            config,
            store,
            units,
            fc_weight,
            fc_bias,
        })
    }

    /// Class logits `[B, K]` for coordinates `[B, 3, T, J]`.
    pub fn logits(
        &self,
        g: &mut Graph,
        pv: &ParamVars,
        coords: Var,
        adjacency: &[Var; 3],
        ctx: &mut ForwardCtx,
    ) -> Result<Var> {
        let [_, c, _, j] = dims4(g, coords, "sagcn_forward")?;
        if c != self.config.in_channels {
            return Err(Error::shape(
                "sagcn_forward",
                format!(
                    "{c} input channels, expected {} (coordinates only)",
                    self.config.in_channels
                ),
            ));
        }
        if j != self.config.joints {
            return Err(Error::shape(
                "sagcn_forward",
                format!("{j} joints, expected {}", self.config.joints),
            ));
        }
        let mut x = coords;
        for unit in &self.units {
            x = sagcn_unit_forward(g, pv, unit, x, adjacency, self.config.dropout, ctx)?;
        }
        let pooled = g.mean_pool(x, 2)?;
        let z = g.matmul(pooled, pv.var(self.fc_weight))?;
        g.add_bias(z, pv.var(self.fc_bias))
    }

    /// Class probabilities `[B, K]`.
    pub fn forward(
        &self,
        g: &mut Graph,
        pv: &ParamVars,
        coords: Var,
        adjacency: &[Var; 3],
        ctx: &mut ForwardCtx,
    ) -> Result<Var> {
        let z = self.logits(g, pv, coords, adjacency, ctx)?;
        g.softmax_last(z)
    }
}
