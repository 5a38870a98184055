//! Named parameter storage and seeded initialization.
//!
//! Every parameter draws from its own RNG stream derived from the root seed
//! and the parameter's name. Adding or removing a sub-network therefore
//! never shifts the initial values of the others, which is what lets the
//! ablation toggles be compared at initialization.

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
    index: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a parameter. Names are unique; a duplicate is a
    /// construction bug and panics.
    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter name {name}");
        let id = ParamId(self.values.len());
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.values.push(value);
        id
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Total number of scalar weights.
    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Tensor::numel).sum()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn by_name_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.id(name).map(|id| &mut self.values[id.0])
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor)> {
        self.names
            .iter()
            .zip(&self.values)
            .enumerate()
            .map(|(i, (n, v))| (ParamId(i), n.as_str(), v))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    /// Replaces every value by name. Shapes must match the registered ones.
    pub fn load_named(&mut self, blobs: &[(String, Tensor)]) -> Result<(), String> {
        if blobs.len() != self.values.len() {
            return Err(format!("expected {} tensors, found {}", self.values.len(), blobs.len()));
        }
        for (name, t) in blobs {
            let id = self.id(name).ok_or_else(|| format!("unknown parameter {name}"))?;
            if self.values[id.0].shape() != t.shape() {
                return Err(format!(
                    "parameter {name}: shape {:?} vs stored {:?}",
                    t.shape(),
                    self.values[id.0].shape()
                ));
            }
            self.values[id.0] = t.clone();
        }
        Ok(())
    }
}

/// Stable 64-bit FNV-1a; `std`'s hasher is not guaranteed stable across releases.
pub fn stable_hash(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Deterministic RNG for a named consumer of a root seed.
pub fn derived_rng(root: u64, consumer: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(root ^ stable_hash(consumer.as_bytes()).rotate_left(17))
}

/// He-normal initialization (`std = sqrt(2 / fan_in)`) for a weight of the
/// given shape; `fan_in` is the product of all but the leading dimension.
pub fn he_normal(root: u64, name: &str, shape: &[usize]) -> Tensor {
    let fan_in: usize = shape[1..].iter().product::<usize>().max(1);
    normal(root, name, shape, (2.0 / fan_in as f64).sqrt())
}

pub fn normal(root: u64, name: &str, shape: &[usize], std: f64) -> Tensor {
    let mut rng = derived_rng(root, name);
    let dist = Normal::new(0.0, std).expect("finite std");
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| dist.sample(&mut rng)).collect();
    Tensor::from_vec(shape.to_vec(), data).expect("shape/data agree")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_depends_only_on_seed_and_name() {
        let a = he_normal(7, "net.conv1.weight", &[4, 3, 3, 3]);
        let b = he_normal(7, "net.conv1.weight", &[4, 3, 3, 3]);
        let c = he_normal(7, "net.conv2.weight", &[4, 3, 3, 3]);
        let d = he_normal(8, "net.conv1.weight", &[4, 3, 3, 3]);
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(a, d);
    }

    #[test]
    fn load_named_checks_shapes() {
        let mut s = ParamStore::new();
        s.add("w", Tensor::zeros(&[2, 2]));
        assert!(s.load_named(&[("w".into(), Tensor::ones(&[2, 2]))]).is_ok());
        assert_eq!(s.by_name("w").unwrap().sum(), 4.0);
        assert!(s.load_named(&[("w".into(), Tensor::ones(&[3]))]).is_err());
        assert!(s.load_named(&[("v".into(), Tensor::ones(&[2, 2]))]).is_err());
    }
}
