use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use super::m2tw;
use super::tape::{Gradients, Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Named parameter tensors, ordered by name.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    tensors: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        self.tensors.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::MissingTensor(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.tensors
            .get_mut(name)
            .ok_or_else(|| Error::MissingTensor(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Entries whose name starts with `prefix`.
    pub fn subset(&self, prefix: &str) -> ParamStore {
        ParamStore {
            tensors: self
                .tensors
                .iter()
                .filter(|(k, _)| k.starts_with(prefix))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        }
    }

    /// Insert or overwrite every entry of `other`.
    pub fn merge(&mut self, other: ParamStore) {
        self.tensors.extend(other.tensors);
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        m2tw::write_file(path, &self.tensors)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(Self {
            tensors: m2tw::read_file(path)?,
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        m2tw::write(&mut buf, &self.tensors).expect("write to Vec");
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Ok(Self {
            tensors: m2tw::read(&mut &bytes[..])?,
        })
    }
}

/// Which parameters receive gradients during a pass.
#[derive(Clone, Debug)]
pub enum Trainable {
    All,
    Nothing,
    Prefixes(Vec<String>),
    Names(BTreeSet<String>),
}

impl Trainable {
    pub fn names<I: IntoIterator<Item = S>, S: Into<String>>(names: I) -> Self {
        Trainable::Names(names.into_iter().map(Into::into).collect())
    }

    pub fn prefixes<I: IntoIterator<Item = S>, S: Into<String>>(p: I) -> Self {
        Trainable::Prefixes(p.into_iter().map(Into::into).collect())
    }

    pub fn includes(&self, name: &str) -> bool {
        match self {
            Trainable::All => true,
            Trainable::Nothing => false,
            Trainable::Prefixes(p) => p.iter().any(|p| name.starts_with(p.as_str())),
            Trainable::Names(n) => n.contains(name),
        }
    }
}

/// Lazily records store tensors on a tape, once per name.
pub struct Binding<'a> {
    store: &'a ParamStore,
    trainable: Trainable,
    vars: BTreeMap<String, Var>,
}

impl<'a> Binding<'a> {
    pub fn new(store: &'a ParamStore, trainable: Trainable) -> Self {
        Self {
            store,
            trainable,
            vars: BTreeMap::new(),
        }
    }

    pub fn store(&self) -> &'a ParamStore {
        self.store
    }

    pub fn var(&mut self, tape: &mut Tape, name: &str) -> Result<Var> {
        if let Some(&v) = self.vars.get(name) {
            return Ok(v);
        }
        let t = self.store.get(name)?;
        let v = if self.trainable.includes(name) {
            tape.param(t.shape().to_vec(), t.data().to_vec())?
        } else {
            tape.constant(t.shape().to_vec(), t.data().to_vec())?
        };
        self.vars.insert(name.to_string(), v);
        Ok(v)
    }

    /// Use `v` for `name` instead of reading the store.
    pub fn bind(&mut self, name: impl Into<String>, v: Var) {
        self.vars.insert(name.into(), v);
    }

    pub fn bound(&self) -> &BTreeMap<String, Var> {
        &self.vars
    }

    /// Gradients of every bound, trainable tensor (zeros if unreached).
    pub fn grads(&self, g: &Gradients) -> BTreeMap<String, Vec<f32>> {
        self.vars
            .iter()
            .filter(|(name, _)| self.trainable.includes(name))
            .map(|(name, &v)| (name.clone(), g.tensor(v).into_data()))
            .collect()
    }
}
