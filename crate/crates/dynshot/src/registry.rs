//! Named parameter storage shared by every graph assembled over it.
//!
//! All assembled models for all class sizes alias one registry; creating a
//! parameter under an existing name returns a view of the same storage, which
//! is what makes weight sharing across graph instances work.

use std::collections::BTreeMap;
use std::sync::Arc;

use parking_lot::RwLock;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// How a parameter gets its first value.
#[derive(Debug, Clone)]
pub enum Init {
    /// Uniform in `[-sqrt(6/(fan_in+fan_out)), +sqrt(6/(fan_in+fan_out))]`,
    /// seeded from the registry seed mixed with the parameter name, so the
    /// draw does not depend on creation order.
    Default,
    /// All zeros.
    Zeros,
    /// Explicit values; length must match the shape.
    Values(Vec<f64>),
}

#[derive(Debug, Clone)]
pub struct ParamEntry {
    shape: Vec<usize>,
    value: Vec<f64>,
    grad: Vec<f64>,
}

impl ParamEntry {
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn value(&self) -> &[f64] {
        &self.value
    }

    pub fn grad(&self) -> &[f64] {
        &self.grad
    }
}

/// Registry mapping parameter name to shape, value, and gradient storage.
pub struct ParamRegistry {
    seed: u64,
    entries: BTreeMap<String, ParamEntry>,
}

/// Handle shared by every graph assembled over one set of weights.
pub type SharedRegistry = Arc<RwLock<ParamRegistry>>;

impl ParamRegistry {
    pub fn new(seed: u64) -> Self {
        ParamRegistry {
            seed,
            entries: BTreeMap::new(),
        }
    }

    pub fn shared(seed: u64) -> SharedRegistry {
        Arc::new(RwLock::new(ParamRegistry::new(seed)))
    }

    /// Number of registered parameters.
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar entries across all parameters.
    pub fn total_scalars(&self) -> usize {
        self.entries.values().map(|e| e.value.len()).sum()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(|s| s.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &ParamEntry)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn entry(&self, name: &str) -> Result<&ParamEntry> {
        self.entries
            .get(name)
            .ok_or_else(|| Error::UnknownParam(name.into()))
    }

    pub fn value_mut(&mut self, name: &str) -> Result<&mut [f64]> {
        self.entries
            .get_mut(name)
            .map(|e| e.value.as_mut_slice())
            .ok_or_else(|| Error::UnknownParam(name.into()))
    }

    pub fn set_value(&mut self, name: &str, data: &[f64]) -> Result<()> {
        let entry = self
            .entries
            .get_mut(name)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))?;
        if entry.value.len() != data.len() {
            return Err(Error::ParamShapeMismatch {
                name: name.into(),
                registered: entry.shape.clone(),
                requested: vec![data.len()],
            });
        }
        entry.value.copy_from_slice(data);
        Ok(())
    }

    pub fn set_grad(&mut self, name: &str, data: &[f64]) -> Result<()> {
        let entry = self
            .entries
            .get_mut(name)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))?;
        if entry.grad.len() != data.len() {
            return Err(Error::ParamShapeMismatch {
                name: name.into(),
                registered: entry.shape.clone(),
                requested: vec![data.len()],
            });
        }
        entry.grad.copy_from_slice(data);
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        for entry in self.entries.values_mut() {
            entry.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    pub(crate) fn add_grad(&mut self, name: &str, adjoint: &[f64]) {
        let entry = self.entries.get_mut(name).expect("parameter vanished");
        debug_assert_eq!(entry.grad.len(), adjoint.len());
        for (g, a) in entry.grad.iter_mut().zip(adjoint) {
            *g += a;
        }
    }

    /// Mutable view used by optimizer steps: `(name, value, grad)` per entry,
    /// in name order.
    pub fn for_each_param_mut(&mut self, mut f: impl FnMut(&str, &mut [f64], &[f64])) {
        for (name, entry) in self.entries.iter_mut() {
            let ParamEntry { value, grad, .. } = entry;
            f(name, value.as_mut_slice(), grad.as_slice());
        }
    }

    /// Create storage on first use; later calls with the same name must match
    /// the registered shape and leave the registry untouched. Returns `true`
    /// when a new entry was created.
    pub(crate) fn get_or_create(&mut self, name: &str, shape: &[usize], init: &Init) -> Result<bool> {
        if let Some(existing) = self.entries.get(name) {
            if existing.shape != shape {
                return Err(Error::ParamShapeMismatch {
                    name: name.into(),
                    registered: existing.shape.clone(),
                    requested: shape.to_vec(),
                });
            }
            return Ok(false);
        }
        let len: usize = shape.iter().product();
        let value = match init {
            Init::Default => glorot_uniform(self.seed, name, shape),
            Init::Zeros => vec![0.0; len],
            Init::Values(v) => {
                if v.len() != len {
                    return Err(Error::BadInitializer {
                        name: name.into(),
                        shape: shape.to_vec(),
                        given: v.len(),
                        needed: len,
                    });
                }
                v.clone()
            }
        };
        self.entries.insert(
            name.to_string(),
            ParamEntry {
                shape: shape.to_vec(),
                value,
                grad: vec![0.0; len],
            },
        );
        Ok(true)
    }
}

/// FNV-1a over the name, folded into the registry seed via splitmix64.
fn name_seed(seed: u64, name: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    splitmix64(seed ^ h)
}

pub(crate) fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

fn glorot_uniform(seed: u64, name: &str, shape: &[usize]) -> Vec<f64> {
    let len: usize = shape.iter().product();
    let (fan_in, fan_out) = match shape {
        [rows, cols] => (*rows, *cols),
        _ => (len, len),
    };
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(name_seed(seed, name));
    (0..len).map(|_| rng.random_range(-limit..limit)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn create_then_reuse_keeps_count() {
        let mut reg = ParamRegistry::new(7);
        assert!(reg.get_or_create("g/W1", &[16, 8], &Init::Default).unwrap());
        assert_eq!(reg.len(), 1);
        assert!(!reg.get_or_create("g/W1", &[16, 8], &Init::Default).unwrap());
        assert_eq!(reg.len(), 1);
    }

    #[test]
    fn shape_mismatch_on_reuse() {
        let mut reg = ParamRegistry::new(7);
        reg.get_or_create("g/W1", &[16, 8], &Init::Default).unwrap();
        let err = reg.get_or_create("g/W1", &[4, 4], &Init::Default);
        assert!(matches!(err, Err(Error::ParamShapeMismatch { .. })));
    }

    #[test]
    fn glorot_is_order_independent_and_bounded() {
        let mut a = ParamRegistry::new(3);
        a.get_or_create("p", &[4, 6], &Init::Default).unwrap();
        a.get_or_create("q", &[6, 4], &Init::Default).unwrap();
        let mut b = ParamRegistry::new(3);
        b.get_or_create("q", &[6, 4], &Init::Default).unwrap();
        b.get_or_create("p", &[4, 6], &Init::Default).unwrap();
        assert_eq!(a.entry("p").unwrap().value(), b.entry("p").unwrap().value());
        assert_eq!(a.entry("q").unwrap().value(), b.entry("q").unwrap().value());
        let limit = (6.0_f64 / 10.0).sqrt();
        assert!(a
            .entry("p")
            .unwrap()
            .value()
            .iter()
            .all(|v| v.abs() <= limit));
    }

    #[test]
    fn explicit_values_must_fit() {
        let mut reg = ParamRegistry::new(0);
        let err = reg.get_or_create("w", &[2, 2], &Init::Values(vec![1.0; 3]));
        assert!(matches!(err, Err(Error::BadInitializer { .. })));
    }
}
