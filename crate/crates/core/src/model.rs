//! A trained stream of either kind, with checkpoint round-tripping.

use crate::config::{StreamKind, TrainConfig};
use crate::data::GestureBatch;
use crate::indrnn::{RbiConfig, RbiNetwork};
use crate::sagcn::{SagcnConfig, SagcnNetwork};
use crate::tensor::{Checkpoint, ForwardCtx, Graph, ParamStore, ParamVars, Tensor, Var};
use crate::{Error, Result};

#[derive(Clone, Debug)]
pub enum StreamModel {
    Sagcn(SagcnNetwork),
    Rbi(RbiNetwork),
}

impl StreamModel {
    /// Fresh parameters for `config.stream`, seeded by `config.seed`.
    pub fn new(config: &TrainConfig, joints: usize, num_classes: usize) -> Result<Self> {
        config.validate()?;
        Ok(match config.stream {
            StreamKind::Sagcn => {
                let mut c =
                    SagcnConfig::with_channels(config.channels.clone(), joints, num_classes);
                c.temporal_kernel = config.temporal_kernel;
                c.unit_shortcut = config.unit_shortcut;
                c.dropout = config.dropout;
                StreamModel::Sagcn(SagcnNetwork::new(c, config.seed)?)
            }
            StreamKind::Rbi => {
                let mut c = RbiConfig::with_hidden(config.hidden, joints, num_classes);
                c.blocks = config.blocks;
                c.dropout = config.dropout;
                c.bidirectional = config.bidirectional;
                c.residual = config.residual;
                c.horizon = config.horizon;
                StreamModel::Rbi(RbiNetwork::new(c, config.seed)?)
            }
        })
    }

    pub fn kind(&self) -> StreamKind {
        match self {
            StreamModel::Sagcn(_) => StreamKind::Sagcn,
            StreamModel::Rbi(_) => StreamKind::Rbi,
        }
    }

    pub fn store(&self) -> &ParamStore {
        match self {
            StreamModel::Sagcn(n) => &n.store,
            StreamModel::Rbi(n) => &n.store,
        }
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        match self {
            StreamModel::Sagcn(n) => &mut n.store,
            StreamModel::Rbi(n) => &mut n.store,
        }
    }

    pub fn num_classes(&self) -> usize {
        match self {
            StreamModel::Sagcn(n) => n.config.num_classes,
            StreamModel::Rbi(n) => n.config.num_classes,
        }
    }

    pub fn set_dropout(&mut self, rate: f64) {
        match self {
            StreamModel::Sagcn(n) => n.config.dropout = rate,
            StreamModel::Rbi(n) => n.config.dropout = rate,
        }
    }

    /// Binds the batch inputs this stream reads and returns logits `[B, K]`.
    pub fn logits(
        &self,
        g: &mut Graph,
        pv: &ParamVars,
        batch: &GestureBatch,
        ctx: &mut ForwardCtx,
    ) -> Result<Var> {
        match self {
            StreamModel::Sagcn(n) => {
                let x = g.constant(batch.coords.clone())?;
                let adj = [
                    g.constant(batch.adjacency[0].clone())?,
                    g.constant(batch.adjacency[1].clone())?,
                    g.constant(batch.adjacency[2].clone())?,
                ];
                n.logits(g, pv, x, &adj, ctx)
            }
            StreamModel::Rbi(n) => {
                let x = g.constant(batch.recurrent.clone())?;
                n.logits(g, pv, x, ctx)
            }
        }
    }

    /// Inference-mode class probabilities `[B, K]`.
    pub fn predict(&self, batch: &GestureBatch) -> Result<Tensor> {
        let mut g = Graph::new();
        let pv = self.store().bind(&mut g)?;
        let mut ctx = ForwardCtx::infer();
        let z = self.logits(&mut g, &pv, batch, &mut ctx)?;
        let p = g.softmax_last(z)?;
        Ok(g.value(p).clone())
    }

    /// Inference-mode attention maps, one `[B, J, J]` tensor per unit.
    pub fn attention_maps(&self, batch: &GestureBatch) -> Result<Vec<Tensor>> {
        if self.kind() != StreamKind::Sagcn {
            return Err(Error::InvalidArgument(
                "attention maps exist only in the sagcn stream".into(),
            ));
        }
        let mut g = Graph::new();
        let pv = self.store().bind(&mut g)?;
        let mut ctx = ForwardCtx::infer().capture_attention();
        self.logits(&mut g, &pv, batch, &mut ctx)?;
        Ok(ctx.captured_attention().to_vec())
    }

    /// Work after each optimizer step: the recurrent-weight clamp.
    pub fn after_step(&mut self) {
        if let StreamModel::Rbi(n) = self {
            let h = n.config.horizon;
            n.clamp_recurrent_weights(h);
        }
    }

    pub fn to_checkpoint(
        &self,
        config: &TrainConfig,
        joints: usize,
        class_names: &[String],
    ) -> Checkpoint {
        let mut ck = Checkpoint {
            params: self.store().clone(),
            ..Default::default()
        };
        for (k, v) in config.to_pairs() {
            ck.meta.insert(format!("config.{k}"), v);
        }
        ck.meta.insert("joints".into(), joints.to_string());
        ck.meta.insert("classes".into(), class_names.join(","));
        ck
    }

    /// Rebuilds the model described by a checkpoint's metadata and loads
    /// its parameters. Returns the model, its config, joint count and
    /// class names.
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<LoadedModel> {
        let meta = |k: &str| {
            ck.meta
                .get(k)
                .ok_or_else(|| Error::InvalidArgument(format!("checkpoint lacks `{k}` metadata")))
        };
        let stream = StreamKind::parse(meta("config.stream")?)?;
        let mut config = TrainConfig::for_stream(stream);
        for (k, v) in &ck.meta {
            if let Some(key) = k.strip_prefix("config.") {
                config.set(key, v)?;
            }
        }
        let joints: usize = meta("joints")?
            .parse()
            .map_err(|e| Error::InvalidArgument(format!("bad joint count: {e}")))?;
        let class_names: Vec<String> = meta("classes")?.split(',').map(String::from).collect();
        let mut model = StreamModel::new(&config, joints, class_names.len())?;
        model.store_mut().copy_values_from(&ck.params)?;
        Ok(LoadedModel {
            model,
            config,
            joints,
            class_names,
        })
    }
}

#[derive(Clone, Debug)]
pub struct LoadedModel {
    pub model: StreamModel,
    pub config: TrainConfig,
    pub joints: usize,
    pub class_names: Vec<String>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::path::Path;

    #[test]
    fn checkpoint_round_trip_rebuilds_the_model() {
        for stream in [StreamKind::Sagcn, StreamKind::Rbi] {
            let mut cfg = TrainConfig::for_stream(stream);
            cfg.channels = vec![4, 4, 6, 6];
            cfg.hidden = 3;
            cfg.blocks = 2;
            cfg.seed = 5;
            let names = vec!["a".to_string(), "b".to_string(), "c".to_string()];
            let m = StreamModel::new(&cfg, 4, 3).unwrap();
            let text = m.to_checkpoint(&cfg, 4, &names).to_text();
            let back = StreamModel::from_checkpoint(
                &Checkpoint::from_text(&text, Path::new("m")).unwrap(),
            )
            .unwrap();
            assert_eq!(back.config, cfg);
            assert_eq!(back.class_names, names);
            assert_eq!(back.model.kind(), stream);
            for (a, b) in back.model.store().entries().iter().zip(m.store().entries()) {
                assert_eq!(a.tensor, b.tensor);
                assert_eq!(a.trainable, b.trainable);
            }
        }
    }
}
