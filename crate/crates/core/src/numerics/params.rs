//! Named parameter storage, binding into a [`Graph`], and the text
//! checkpoint format.
//!
//! Checkpoint layout (UTF-8, line oriented):
//!
//! ```text
//! tvdbn-checkpoint v1
//! meta <key> <value>
//! param <name> <rows> <cols>
//! <rows*cols whitespace-separated values>
//! ```
//!
//! Values are written with the shortest representation that round-trips, so
//! save/load is bit-exact.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::ops::Index;
use std::path::Path;

use rand::Rng;

use super::autodiff::{Gradients, Graph, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

const MAGIC: &str = "tvdbn-checkpoint v1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        assert!(
            !self.names.contains(&name),
            "duplicate parameter name {}",
            name
        );
        assert!(value.is_matrix(), "parameters are rank 2");
        self.names.push(name);
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    /// Glorot-uniform matrix.
    pub fn add_glorot<R: Rng>(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        rng: &mut R,
    ) -> ParamId {
        let limit = (6.0 / (rows + cols) as f64).sqrt();
        let t = Tensor::from_fn(rows, cols, |_, _| rng.random_range(-limit..limit));
        self.add(name, t)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &[Tensor] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Tensor] {
        &mut self.values
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    /// Records every parameter as a trainable leaf of `g`.
    pub fn bind(&self, g: &mut Graph) -> Bindings {
        Bindings(self.values.iter().map(|t| g.param(t.clone())).collect())
    }

    /// Records every parameter as a constant of `g` (frozen evaluation).
    pub fn bind_frozen(&self, g: &mut Graph) -> Bindings {
        Bindings(self.values.iter().map(|t| g.input(t.clone())).collect())
    }

    pub fn zeros_like(&self) -> Vec<Tensor> {
        self.values.iter().map(|t| Tensor::zeros(t.shape())).collect()
    }

    pub fn to_text(&self, meta: &BTreeMap<String, String>) -> String {
        let mut s = String::new();
        s.push_str(MAGIC);
        s.push('\n');
        for (k, v) in meta {
            let _ = writeln!(s, "meta {} {}", k, v);
        }
        for (name, t) in self.iter() {
            let _ = writeln!(s, "param {} {} {}", name, t.rows(), t.cols());
            let line: Vec<String> = t.data().iter().map(|v| format!("{}", v)).collect();
            s.push_str(&line.join(" "));
            s.push('\n');
        }
        s
    }

    pub fn save(&self, path: &Path, meta: &BTreeMap<String, String>) -> Result<()> {
        std::fs::write(path, self.to_text(meta)).map_err(|e| Error::io(path, e))
    }

    /// Overwrites the values of this store from checkpoint text. Every
    /// parameter must be present with the same shape; extra or missing
    /// parameters are errors. Returns the checkpoint's metadata.
    pub fn load_text(&mut self, text: &str) -> Result<BTreeMap<String, String>> {
        let parsed = parse_checkpoint(text)?;
        if parsed.params.len() != self.values.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint has {} parameters, model expects {}",
                parsed.params.len(),
                self.values.len()
            )));
        }
        for (name, t) in &parsed.params {
            let idx = self
                .names
                .iter()
                .position(|n| n == name)
                .ok_or_else(|| Error::Checkpoint(format!("unexpected parameter {}", name)))?;
            if self.values[idx].shape() != t.shape() {
                return Err(Error::Checkpoint(format!(
                    "shape mismatch for {}: checkpoint {:?}, model {:?}",
                    name,
                    t.shape(),
                    self.values[idx].shape()
                )));
            }
        }
        for (name, t) in parsed.params {
            let idx = self.names.iter().position(|n| *n == name).unwrap();
            self.values[idx] = t;
        }
        Ok(parsed.meta)
    }

    pub fn load(&mut self, path: &Path) -> Result<BTreeMap<String, String>> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.load_text(&text)
    }
}

struct ParsedCheckpoint {
    meta: BTreeMap<String, String>,
    params: Vec<(String, Tensor)>,
}

fn parse_checkpoint(text: &str) -> Result<ParsedCheckpoint> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(MAGIC) {
        return Err(Error::Checkpoint("missing checkpoint header".into()));
    }
    let mut meta = BTreeMap::new();
    let mut params = Vec::new();
    while let Some(line) = lines.next() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        match parts.next() {
            Some("meta") => {
                let key = parts
                    .next()
                    .ok_or_else(|| Error::Checkpoint("meta line without key".into()))?;
                let value = parts.collect::<Vec<_>>().join(" ");
                meta.insert(key.to_string(), value);
            }
            Some("param") => {
                let fields: Vec<&str> = parts.collect();
                if fields.len() != 3 {
                    return Err(Error::Checkpoint(format!("malformed param line '{}'", line)));
                }
                let dim = |s: &str| {
                    s.parse::<usize>()
                        .map_err(|_| Error::Checkpoint(format!("bad dimension '{}'", s)))
                };
                let (rows, cols) = (dim(fields[1])?, dim(fields[2])?);
                let body = lines.next().unwrap_or("");
                let data = body
                    .split_whitespace()
                    .map(|v| {
                        v.parse::<f64>()
                            .map_err(|_| Error::Checkpoint(format!("bad value '{}'", v)))
                    })
                    .collect::<Result<Vec<f64>>>()?;
                let t = Tensor::matrix(rows, cols, data).map_err(|_| {
                    Error::Checkpoint(format!("value count mismatch for {}", fields[0]))
                })?;
                params.push((fields[0].to_string(), t));
            }
            _ => return Err(Error::Checkpoint(format!("unexpected line '{}'", line))),
        }
    }
    Ok(ParsedCheckpoint { meta, params })
}

/// Graph handles for every parameter of a [`ParamStore`], in store order.
#[derive(Clone, Debug)]
pub struct Bindings(Vec<Var>);

impl Bindings {
    /// Wraps graph handles that stand for a store's parameters, in store
    /// order.
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Bindings(vars)
    }

    /// Parameter gradients in store order; parameters that did not
    /// influence the root get zero gradients.
    pub fn collect(&self, grads: &mut Gradients, store: &ParamStore) -> Vec<Tensor> {
        self.0
            .iter()
            .zip(store.values())
            .map(|(&v, t)| grads.take(v).unwrap_or_else(|| Tensor::zeros(t.shape())))
            .collect()
    }
}

impl Index<ParamId> for Bindings {
    type Output = Var;

    fn index(&self, id: ParamId) -> &Var {
        &self.0[id.0]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store() -> ParamStore {
        let mut s = ParamStore::new();
        s.add("a", Tensor::from_fn(2, 3, |i, j| i as f64 * 0.1 + j as f64 / 3.0));
        s.add("b", Tensor::matrix(1, 1, vec![-1.0e-300]).unwrap());
        s
    }

    #[test]
    fn text_round_trip_is_bit_exact() {
        let s = store();
        let mut meta = BTreeMap::new();
        meta.insert("n".to_string(), "10".to_string());
        let text = s.to_text(&meta);
        let mut t = store();
        t.values_mut()[0] = Tensor::zeros(&[2, 3]);
        let got_meta = t.load_text(&text).unwrap();
        assert_eq!(t, s);
        assert_eq!(got_meta, meta);
    }

    #[test]
    fn load_rejects_shape_mismatch() {
        let text = store().to_text(&BTreeMap::new());
        let mut other = ParamStore::new();
        other.add("a", Tensor::zeros(&[3, 2]));
        other.add("b", Tensor::zeros(&[1, 1]));
        let err = other.load_text(&text).unwrap_err();
        assert!(err.to_string().contains("shape mismatch for a"), "{}", err);
    }

    #[test]
    fn load_rejects_missing_parameter() {
        let text = store().to_text(&BTreeMap::new());
        let mut other = ParamStore::new();
        other.add("a", Tensor::zeros(&[2, 3]));
        assert!(other.load_text(&text).is_err());
    }
}
