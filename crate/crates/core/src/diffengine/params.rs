use std::collections::HashMap;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Named parameter tensors of one or more networks.
///
/// Iteration order is insertion order, which keeps serialization and
/// optimizer updates deterministic.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet<T = f32> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
    index: HashMap<String, usize>,
    pub rng_seed: u64,
}

impl<T: Real> ParamSet<T> {
    pub fn new(rng_seed: u64) -> Self {
        Self {
            names: Vec::new(),
            tensors: Vec::new(),
            index: HashMap::new(),
            rng_seed,
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor<T>) -> Result<()> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::InvalidArgument(format!("duplicate parameter name `{name}`")));
        }
        self.index.insert(name.clone(), self.names.len());
        self.names.push(name);
        self.tensors.push(tensor);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.index.get(name).map(|&i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        match self.index.get(name) {
            Some(&i) => Some(&mut self.tensors[i]),
            None => None,
        }
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(self.tensors.iter())
    }

    pub fn tensor_at(&self, i: usize) -> &Tensor<T> {
        &self.tensors[i]
    }

    pub fn tensor_at_mut(&mut self, i: usize) -> &mut Tensor<T> {
        &mut self.tensors[i]
    }

    /// Gradient slots: same names and shapes, all zeros.
    pub fn zeros_like(&self) -> Self {
        Self {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(|t| Tensor::zeros(t.shape())).collect(),
            index: self.index.clone(),
            rng_seed: self.rng_seed,
        }
    }

    pub fn cast<U: Real>(&self) -> ParamSet<U> {
        ParamSet {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
            index: self.index.clone(),
            rng_seed: self.rng_seed,
        }
    }

    /// Parameters whose names start with `prefix`, in order.
    pub fn subset(&self, prefix: &str) -> Self {
        let mut out = Self::new(self.rng_seed);
        for (n, t) in self.iter() {
            if n.starts_with(prefix) {
                out.insert(n, t.clone()).expect("names are unique");
            }
        }
        out
    }

    /// Append every entry of `other`; names must not collide.
    pub fn extend(&mut self, other: &Self) -> Result<()> {
        for (n, t) in other.iter() {
            self.insert(n, t.clone())?;
        }
        Ok(())
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// SHA-256 over names, shapes and the exact value bits.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        for (n, t) in self.iter() {
            h.update((n.len() as u64).to_le_bytes());
            h.update(n.as_bytes());
            for d in t.shape() {
                h.update((*d as u64).to_le_bytes());
            }
            for v in t.data() {
                h.update(v.as_f64().to_bits().to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_unique_and_ordered() {
        let mut p = ParamSet::<f32>::new(1);
        p.insert("b", Tensor::zeros(&[2])).unwrap();
        p.insert("a", Tensor::zeros(&[3])).unwrap();
        assert!(p.insert("a", Tensor::zeros(&[1])).is_err());
        assert_eq!(p.names(), &["b".to_string(), "a".to_string()]);
        let g = p.zeros_like();
        assert_eq!(g.get("a").unwrap().shape(), &[3]);
    }

    #[test]
    fn hash_tracks_values() {
        let mut p = ParamSet::<f32>::new(1);
        p.insert("w", Tensor::zeros(&[2])).unwrap();
        let h0 = p.content_hash();
        p.get_mut("w").unwrap().data_mut()[1] = 1e-30;
        assert_ne!(h0, p.content_hash());
    }
}
