//! Layer-level helpers shared by both streams: execution mode, batch
//! normalization with running statistics, and dropout.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{BatchStats, Graph, ParamId, ParamStore, ParamVars, Tensor, Var};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.9;

#[derive(Clone, Debug)]
struct PendingStats {
    mean: ParamId,
    var: ParamId,
    momentum: f64,
    stats: BatchStats,
}

/// Per-forward-pass state: mode, the dropout stream, deferred running
/// statistics and optionally captured attention maps.
#[derive(Debug)]
pub struct ForwardCtx {
    pub mode: Mode,
    rng: ChaCha8Rng,
    pending: Vec<PendingStats>,
    capture: Option<Vec<Tensor>>,
}

impl ForwardCtx {
    pub fn new(mode: Mode, seed: u64) -> Self {
        ForwardCtx {
            mode,
            rng: ChaCha8Rng::seed_from_u64(seed),
            pending: Vec::new(),
            capture: None,
        }
    }

    pub fn infer() -> Self {
        Self::new(Mode::Infer, 0)
    }

    /// Starts recording every attention map produced by the pass.
    pub fn capture_attention(mut self) -> Self {
        self.capture = Some(Vec::new());
        self
    }

    pub fn record_attention(&mut self, map: &Tensor) {
        if let Some(c) = &mut self.capture {
            c.push(map.clone());
        }
    }

    pub fn captured_attention(&self) -> &[Tensor] {
        self.capture.as_deref().unwrap_or(&[])
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    /// Folds the batch statistics of this pass into the running statistics.
    /// Nothing is recorded in infer mode.
    pub fn apply_running_stats(&mut self, store: &mut ParamStore) {
        for p in self.pending.drain(..) {
            for (r, b) in store
                .get_mut(p.mean)
                .data_mut()
                .iter_mut()
                .zip(&p.stats.mean)
            {
                *r = p.momentum * *r + (1.0 - p.momentum) * b;
            }
            for (r, b) in store.get_mut(p.var).data_mut().iter_mut().zip(&p.stats.var) {
                *r = p.momentum * *r + (1.0 - p.momentum) * b;
            }
        }
    }
}

/// Per-channel normalization parameters and running statistics.
#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub scale: ParamId,
    pub shift: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub channels: usize,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNorm {
    pub fn new(store: &mut ParamStore, prefix: &str, channels: usize) -> Self {
        BatchNorm {
            scale: store.add(format!("{prefix}.scale"), Tensor::full(&[channels], 1.0)),
            shift: store.add(format!("{prefix}.shift"), Tensor::zeros(&[channels])),
            running_mean: store
                .add_buffer(format!("{prefix}.running_mean"), Tensor::zeros(&[channels])),
            running_var: store.add_buffer(
                format!("{prefix}.running_var"),
                Tensor::full(&[channels], 1.0),
            ),
            channels,
            momentum: BN_MOMENTUM,
            eps: BN_EPS,
        }
    }

    /// Normalizes `x` over `channel_axis`. Train mode uses batch statistics
    /// and queues a running-statistics update on `ctx`; infer mode uses the
    /// running statistics and never touches them.
    pub fn forward(
        &self,
        g: &mut Graph,
        pv: &ParamVars,
        x: Var,
        channel_axis: usize,
        ctx: &mut ForwardCtx,
    ) -> Result<Var> {
        let got = g.shape(x).get(channel_axis).copied();
        if got != Some(self.channels) {
            return Err(Error::shape(
                "batch_norm",
                format!(
                    "expected {} channels on axis {channel_axis}, input {:?}",
                    self.channels,
                    g.shape(x)
                ),
            ));
        }
        let (scale, shift) = (pv.var(self.scale), pv.var(self.shift));
        match ctx.mode {
            Mode::Train => {
                let (y, stats) = g.batch_norm(x, scale, shift, channel_axis, self.eps, None)?;
                ctx.pending.push(PendingStats {
                    mean: self.running_mean,
                    var: self.running_var,
                    momentum: self.momentum,
                    stats: stats.expect("training statistics"),
                });
                Ok(y)
            }
            Mode::Infer => {
                let mean = g.value(pv.var(self.running_mean)).data().to_vec();
                let var = g.value(pv.var(self.running_var)).data().to_vec();
                let (y, _) =
                    g.batch_norm(x, scale, shift, channel_axis, self.eps, Some((&mean, &var)))?;
                Ok(y)
            }
        }
    }
}

/// Inverted-dropout mask: each entry is 0 with probability `rate`, else
/// `1 / (1 - rate)`.
pub fn dropout_mask<R: Rng + ?Sized>(len: usize, rate: f64, rng: &mut R) -> Vec<f64> {
    let keep = 1.0 / (1.0 - rate);
    (0..len)
        .map(|_| {
            if rng.random::<f64>() < rate {
                0.0
            } else {
                keep
            }
        })
        .collect()
}

/// Dropout; the identity in infer mode or at rate 0.
pub fn dropout(g: &mut Graph, x: Var, rate: f64, ctx: &mut ForwardCtx) -> Result<Var> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::InvalidArgument(format!(
            "dropout rate {rate} outside [0, 1)"
        )));
    }
    if ctx.mode == Mode::Infer || rate == 0.0 {
        return Ok(x);
    }
    let mask = dropout_mask(g.value(x).len(), rate, ctx.rng());
    g.mul_const(x, mask)
}
