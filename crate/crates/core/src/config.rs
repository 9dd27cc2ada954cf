//! Training configuration and the flat `key = value` file format shared by
//! `train --config` and `synth --spec`.
//!
//! ```text
//! # comment
//! stream = sagcn
//! lr = 0.002
//! channels = 16, 16, 32, 32, 64, 64
//! ```

use std::fmt::Write as _;
use std::path::Path;

use crate::data::{GestureKind, SyntheticSpec};
use crate::skeleton::DatasetKind;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StreamKind {
    Sagcn,
    Rbi,
}

impl StreamKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sagcn" => Ok(StreamKind::Sagcn),
            "rbi" | "rbi-indrnn" | "indrnn" => Ok(StreamKind::Rbi),
            _ => Err(Error::InvalidArgument(format!(
                "unknown stream `{s}` (sagcn or rbi)"
            ))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            StreamKind::Sagcn => "sagcn",
            StreamKind::Rbi => "rbi",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DecayPolicy {
    /// Decay after `patience` epochs without a validation improvement.
    Plateau,
    /// Decay whenever validation accuracy improves.
    Literal,
}

impl DecayPolicy {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "plateau" => Ok(DecayPolicy::Plateau),
            "literal" => Ok(DecayPolicy::Literal),
            _ => Err(Error::InvalidArgument(format!(
                "unknown decay policy `{s}` (plateau or literal)"
            ))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            DecayPolicy::Plateau => "plateau",
            DecayPolicy::Literal => "literal",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub stream: StreamKind,
    pub dataset: DatasetKind,
    pub batch_size: usize,
    pub lr: f64,
    pub dropout: f64,
    pub max_epochs: usize,
    pub lr_decay: f64,
    pub decay_policy: DecayPolicy,
    pub patience: usize,
    /// Stop after this many epochs without a validation improvement.
    pub early_stop: usize,
    /// Stop once training accuracy reaches this value (`none` disables).
    pub stop_train_acc: Option<f64>,
    pub seed: u64,
    pub frames: usize,
    pub wrist_center: bool,
    /// SAGCN channel plan; the fourth unit halves time.
    pub channels: Vec<usize>,
    pub temporal_kernel: usize,
    pub unit_shortcut: bool,
    /// Recurrent neurons per direction.
    pub hidden: usize,
    pub blocks: usize,
    pub bidirectional: bool,
    pub residual: bool,
    /// Sequence length used for the recurrent-weight bound.
    pub horizon: usize,
}

impl TrainConfig {
    pub fn for_stream(stream: StreamKind) -> Self {
        let (lr, dropout) = match stream {
            StreamKind::Sagcn => (2e-3, 0.5),
            StreamKind::Rbi => (2e-4, 0.2),
        };
        TrainConfig {
            stream,
            dataset: DatasetKind::Dhg22,
            batch_size: 64,
            lr,
            dropout,
            max_epochs: 300,
            lr_decay: 0.1,
            decay_policy: DecayPolicy::Plateau,
            patience: 10,
            early_stop: 50,
            stop_train_acc: None,
            seed: 0,
            frames: 20,
            wrist_center: false,
            channels: vec![64, 64, 128, 128, 256, 256],
            temporal_kernel: 9,
            unit_shortcut: true,
            hidden: 512,
            blocks: 6,
            bidirectional: true,
            residual: true,
            horizon: 20,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad(format!("lr {} must be finite and >= 0", self.lr));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay < 1.0) {
            return bad(format!("lr_decay {} outside (0, 1)", self.lr_decay));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if self.batch_size == 0
            || self.frames == 0
            || self.horizon == 0
            || self.blocks == 0
            || self.hidden == 0
        {
            return bad("batch_size, frames, horizon, blocks and hidden must be positive".into());
        }
        if self.channels.is_empty() || self.channels.contains(&0) {
            return bad("channels must be a non-empty list of positive widths".into());
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T>
        where
            T::Err: std::fmt::Display,
        {
            v.parse()
                .map_err(|e| Error::InvalidArgument(format!("{key}: bad value `{v}`: {e}")))
        }
        fn flag(key: &str, v: &str) -> Result<bool> {
            match v {
                "true" | "yes" | "1" => Ok(true),
                "false" | "no" | "0" => Ok(false),
                _ => Err(Error::InvalidArgument(format!(
                    "{key}: expected true or false, got `{v}`"
                ))),
            }
        }
        match key {
            "stream" => self.stream = StreamKind::parse(value)?,
            "dataset" => self.dataset = DatasetKind::parse(value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            "lr" => self.lr = num(key, value)?,
            "dropout" => self.dropout = num(key, value)?,
            "max_epochs" => self.max_epochs = num(key, value)?,
            "lr_decay" => self.lr_decay = num(key, value)?,
            "decay_policy" => self.decay_policy = DecayPolicy::parse(value)?,
            "patience" => self.patience = num(key, value)?,
            "early_stop" => self.early_stop = num(key, value)?,
            "stop_train_acc" => {
                self.stop_train_acc = if value == "none" {
                    None
                } else {
                    Some(num(key, value)?)
                }
            }
            "seed" => self.seed = num(key, value)?,
            "frames" => self.frames = num(key, value)?,
            "wrist_center" => self.wrist_center = flag(key, value)?,
            "channels" => {
                self.channels = value
                    .split(',')
                    .map(|c| num(key, c.trim()))
                    .collect::<Result<_>>()?
            }
            "temporal_kernel" => self.temporal_kernel = num(key, value)?,
            "unit_shortcut" => self.unit_shortcut = flag(key, value)?,
            "hidden" => self.hidden = num(key, value)?,
            "blocks" => self.blocks = num(key, value)?,
            "bidirectional" => self.bidirectional = flag(key, value)?,
            "residual" => self.residual = flag(key, value)?,
            "horizon" => self.horizon = num(key, value)?,
            _ => {
                return Err(Error::InvalidArgument(format!(
                    "unknown configuration key `{key}`"
                )))
            }
        }
        Ok(())
    }

    /// Every field as `(key, value)` pairs, in file order.
    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        let ch: Vec<String> = self.channels.iter().map(|c| c.to_string()).collect();
        vec![
            ("stream", self.stream.as_str().into()),
            ("dataset", self.dataset.as_str().into()),
            ("batch_size", self.batch_size.to_string()),
            ("lr", format!("{:?}", self.lr)),
            ("dropout", format!("{:?}", self.dropout)),
            ("max_epochs", self.max_epochs.to_string()),
            ("lr_decay", format!("{:?}", self.lr_decay)),
            ("decay_policy", self.decay_policy.as_str().into()),
            ("patience", self.patience.to_string()),
            ("early_stop", self.early_stop.to_string()),
            (
                "stop_train_acc",
                self.stop_train_acc
                    .map_or("none".into(), |a| format!("{a:?}")),
            ),
            ("seed", self.seed.to_string()),
            ("frames", self.frames.to_string()),
            ("wrist_center", self.wrist_center.to_string()),
            ("channels", ch.join(", ")),
            ("temporal_kernel", self.temporal_kernel.to_string()),
            ("unit_shortcut", self.unit_shortcut.to_string()),
            ("hidden", self.hidden.to_string()),
            ("blocks", self.blocks.to_string()),
            ("bidirectional", self.bidirectional.to_string()),
            ("residual", self.residual.to_string()),
            ("horizon", self.horizon.to_string()),
        ]
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.to_pairs() {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    /// Starts from the defaults of the file's `stream` (or `default_stream`)
    /// and applies every other key.
    pub fn from_text(text: &str, path: &Path, default_stream: StreamKind) -> Result<Self> {
        let pairs = parse_key_values(text, path)?;
        let stream = match pairs.iter().find(|p| p.key == "stream") {
            Some(p) => StreamKind::parse(&p.value).map_err(|e| p.error(path, e))?,
            None => default_stream,
        };
        let mut cfg = TrainConfig::for_stream(stream);
        for p in &pairs {
            cfg.set(&p.key, &p.value).map_err(|e| p.error(path, e))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, default_stream: StreamKind) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_text(&text, path, default_stream)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KeyValue {
    pub line: usize,
    pub key: String,
    pub value: String,
}

impl KeyValue {
    fn error(&self, path: &Path, e: Error) -> Error {
        let msg = match e {
            Error::InvalidArgument(m) => m,
            other => other.to_string(),
        };
        Error::Parse {
            path: path.to_path_buf(),
            line: self.line,
            msg,
        }
    }
}

/// Parses `key = value` lines; `#` starts a comment line. Duplicate keys
/// are errors.
pub fn parse_key_values(text: &str, path: &Path) -> Result<Vec<KeyValue>> {
    let mut out: Vec<KeyValue> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg,
        };
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| err(format!("expected `key = value`, got `{line}`")))?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(err("empty key".into()));
        }
        if out.iter().any(|p| p.key == k) {
            return Err(err(format!("duplicate key `{k}`")));
        }
        out.push(KeyValue {
            line: i + 1,
            key: k.to_string(),
            value: v.to_string(),
        });
    }
    Ok(out)
}

/// A `synth --spec` file: the synthetic classes plus how to lay them out.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub spec: SyntheticSpec,
    pub dataset: DatasetKind,
    pub test_fraction: f64,
    pub split_seed: u64,
}

impl SynthConfig {
    pub fn from_text(text: &str, path: &Path) -> Result<Self> {
        let mut cfg = SynthConfig {
            spec: SyntheticSpec::all_families(0.02, 50, 0),
            dataset: DatasetKind::Dhg22,
            test_fraction: 0.2,
            split_seed: 0,
        };
        let mut split_seed = None;
        for p in parse_key_values(text, path)? {
            let num_err =
                |e: String| p.error(path, Error::InvalidArgument(format!("{}: {e}", p.key)));
            match p.key.as_str() {
                "classes" => {
                    cfg.spec.classes = p
                        .value
                        .split(',')
                        .map(|id| GestureKind::parse(id.trim()))
                        .collect::<Result<_>>()
                        .map_err(|e| p.error(path, e))?
                }
                "noise" => {
                    cfg.spec.noise = p
                        .value
                        .parse()
                        .map_err(|e: std::num::ParseFloatError| num_err(e.to_string()))?
                }
                "samples_per_class" => {
                    cfg.spec.samples_per_class = p
                        .value
                        .parse()
                        .map_err(|e: std::num::ParseIntError| num_err(e.to_string()))?
                }
                "seed" => {
                    cfg.spec.seed = p
                        .value
                        .parse()
                        .map_err(|e: std::num::ParseIntError| num_err(e.to_string()))?
                }
                "split_seed" => {
                    split_seed = Some(
                        p.value
                            .parse()
                            .map_err(|e: std::num::ParseIntError| num_err(e.to_string()))?,
                    )
                }
                "dataset" => {
                    cfg.dataset = DatasetKind::parse(&p.value).map_err(|e| p.error(path, e))?
                }
                "test_fraction" => {
                    cfg.test_fraction = p
                        .value
                        .parse()
                        .map_err(|e: std::num::ParseFloatError| num_err(e.to_string()))?
                }
                other => {
                    return Err(p.error(
                        path,
                        Error::InvalidArgument(format!("unknown synth key `{other}`")),
                    ));
                }
            }
        }
        cfg.split_seed = split_seed.unwrap_or(cfg.spec.seed);
        cfg.spec.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_text(&text, path)
    }
}
