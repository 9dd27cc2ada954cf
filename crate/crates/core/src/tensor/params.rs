//! Named parameter storage and the text checkpoint container.
//!
//! Checkpoint layout (UTF-8, line oriented):
//!
//! ```text
//! gesture-checkpoint 1
//! meta <key> <value...>          zero or more
//! tensor <name> <d0> <d1> ...    one per tensor, followed by
//! <v0> <v1> ...                  one line of row-major values
//! ```
//!
//! Names contain no whitespace. Values are written in Rust's shortest
//! round-trip decimal form, so a save/load cycle is bit-exact. Tensors
//! whose name ends in `.running_mean` / `.running_var` are non-trainable.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use super::{Gradients, Graph, Tensor, Var};
use crate::{Error, Result};

const MAGIC: &str = "gesture-checkpoint 1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

#[derive(Clone, Debug)]
pub struct ParamEntry {
    pub name: String,
    pub tensor: Tensor,
    pub trainable: bool,
}

#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor) -> ParamId {
        self.push(name.into(), tensor, true)
    }

    pub fn add_buffer(&mut self, name: impl Into<String>, tensor: Tensor) -> ParamId {
        self.push(name.into(), tensor, false)
    }

    fn push(&mut self, name: String, tensor: Tensor, trainable: bool) -> ParamId {
        debug_assert!(!name.contains(char::is_whitespace));
        debug_assert!(
            self.entries.iter().all(|e| e.name != name),
            "duplicate {name}"
        );
        self.entries.push(ParamEntry {
            name,
            tensor,
            trainable,
        });
        ParamId(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].tensor
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].tensor
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries
            .iter()
            .position(|e| e.name == name)
            .map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn trainable_ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.entries
            .iter()
            .enumerate()
            .filter(|(_, e)| e.trainable)
            .map(|(i, _)| ParamId(i))
    }

    /// Number of trainable scalars.
    pub fn trainable_count(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.trainable)
            .map(|e| e.tensor.len())
            .sum()
    }

    /// Inserts every entry into `graph` as a leaf; trainable entries
    /// require gradients.
    pub fn bind(&self, graph: &mut Graph) -> Result<ParamVars> {
        let vars = self
            .entries
            .iter()
            .map(|e| graph.leaf(e.tensor.clone(), e.trainable))
            .collect::<Result<_>>()?;
        Ok(ParamVars { vars })
    }

    /// Collects trainable gradients in `trainable_ids` order. Parameters the
    /// loss did not reach get zero gradients.
    pub fn gradients(&self, vars: &ParamVars, grads: &Gradients) -> Vec<Tensor> {
        self.trainable_ids()
            .map(|id| {
                grads
                    .wrt(vars.var(id))
                    .cloned()
                    .unwrap_or_else(|| Tensor::zeros(self.get(id).shape()))
            })
            .collect()
    }

    /// Copies values from `other` for every matching name and shape.
    pub fn copy_values_from(&mut self, other: &ParamStore) -> Result<()> {
        let by_name: BTreeMap<&str, &Tensor> = other
            .entries
            .iter()
            .map(|e| (e.name.as_str(), &e.tensor))
            .collect();
        for e in &mut self.entries {
            let Some(src) = by_name.get(e.name.as_str()) else {
                return Err(Error::InvalidArgument(format!(
                    "missing parameter {}",
                    e.name
                )));
            };
            if src.shape() != e.tensor.shape() {
                return Err(Error::shape(
                    "checkpoint",
                    format!("{}: {:?} vs {:?}", e.name, src.shape(), e.tensor.shape()),
                ));
            }
            e.tensor = (*src).clone();
        }
        Ok(())
    }
}

/// Graph handles for every entry of a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct ParamVars {
    vars: Vec<Var>,
}

impl ParamVars {
    /// Handles for leaves created elsewhere, one per store entry in order.
    pub fn from_vars(vars: Vec<Var>) -> Self {
        ParamVars { vars }
    }

    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }
}

/// A parameter store plus free-form metadata, as read from or written to a
/// checkpoint file.
#[derive(Clone, Debug, Default)]
pub struct Checkpoint {
    pub meta: BTreeMap<String, String>,
    pub params: ParamStore,
}

impl Checkpoint {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{MAGIC}");
        for (k, v) in &self.meta {
            let _ = writeln!(s, "meta {k} {v}");
        }
        for e in &self.params.entries {
            let _ = write!(s, "tensor {}", e.name);
            for d in e.tensor.shape() {
                let _ = write!(s, " {d}");
            }
            s.push('\n');
            let mut first = true;
            for v in e.tensor.data() {
                if !first {
                    s.push(' ');
                }
                first = false;
                let _ = write!(s, "{v:?}");
            }
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str, path: &Path) -> Result<Self> {
        let err = |line: usize, msg: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg,
        };
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        match lines.next() {
            Some((_, l)) if l.trim() == MAGIC => {}
            _ => return Err(err(1, format!("expected header `{MAGIC}`"))),
        }
        let mut ck = Checkpoint::default();
        while let Some((no, line)) = lines.next() {
            let mut tok = line.split_whitespace();
            match tok.next() {
                None => continue,
                Some("meta") => {
                    let key = tok
                        .next()
                        .ok_or_else(|| err(no, "meta line without key".into()))?;
                    let value = tok.collect::<Vec<_>>().join(" ");
                    ck.meta.insert(key.to_string(), value);
                }
                Some("tensor") => {
                    let name = tok
                        .next()
                        .ok_or_else(|| err(no, "tensor line without name".into()))?;
                    let shape = tok
                        .map(|d| {
                            d.parse::<usize>()
                                .map_err(|e| err(no, format!("bad extent `{d}`: {e}")))
                        })
                        .collect::<Result<Vec<_>>>()?;
                    let (vno, vline) = lines
                        .next()
                        .ok_or_else(|| err(no + 1, format!("missing values for {name}")))?;
                    let data = vline
                        .split_whitespace()
                        .map(|v| {
                            let x: f64 = v
                                .parse()
                                .map_err(|e| err(vno, format!("bad value `{v}`: {e}")))?;
                            if x.is_finite() {
                                Ok(x)
                            } else {
                                Err(err(vno, format!("non-finite value `{v}`")))
                            }
                        })
                        .collect::<Result<Vec<_>>>()?;
                    let tensor = Tensor::new(shape, data).map_err(|e| err(vno, e.to_string()))?;
                    if name.ends_with(".running_mean") || name.ends_with(".running_var") {
                        ck.params.add_buffer(name, tensor);
                    } else {
                        ck.params.add(name, tensor);
                    }
                }
                Some(other) => return Err(err(no, format!("unexpected record `{other}`"))),
            }
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_text(&text, path)
    }
}
