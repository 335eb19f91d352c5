use std::collections::BTreeMap;

use candle_core::{DType, Device, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};

use crate::{Error, Result};

/// Copy of every parameter and buffer, keyed by path.
pub type Snapshot = BTreeMap<String, Tensor>;

/// Owns the variables of one network.
///
/// Trainable parameters and non-trainable buffers (batch-norm running
/// statistics) are kept apart so the optimizer only ever sees the former.
/// Keys are dotted paths such as `enc.0.conv1.weight`; iteration order is
/// lexicographic, which keeps hashing and serialization stable.
pub struct ParamStore {
    dtype: DType,
    device: Device,
    rng: ChaCha8Rng,
    params: BTreeMap<String, Var>,
    buffers: BTreeMap<String, Var>,
}

impl ParamStore {
    pub fn new(dtype: DType, seed: u64) -> Self {
        Self {
            dtype,
            device: Device::Cpu,
            rng: ChaCha8Rng::seed_from_u64(seed),
            params: BTreeMap::new(),
            buffers: BTreeMap::new(),
        }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn root(&mut self) -> ParamPath<'_> {
        ParamPath {
            store: self,
            prefix: String::new(),
        }
    }

    fn insert(&mut self, name: String, value: Tensor, trainable: bool) -> Result<Var> {
        if self.params.contains_key(&name) || self.buffers.contains_key(&name) {
            return Err(Error::InvalidArgument(format!("duplicate parameter `{name}`")));
        }
        let var = Var::from_tensor(&value)?;
        if trainable {
            self.params.insert(name, var.clone());
        } else {
            self.buffers.insert(name, var.clone());
        }
        Ok(var)
    }

    fn normal(&mut self, shape: &[usize], std: f64) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        let values: Vec<f64> = (0..n)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut self.rng);
                z * std
            })
            .collect();
        Ok(Tensor::from_vec(values, shape, &self.device)?.to_dtype(self.dtype)?)
    }

    /// Trainable parameters in path order.
    pub fn params(&self) -> impl Iterator<Item = (&str, &Var)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn buffers(&self) -> impl Iterator<Item = (&str, &Var)> {
        self.buffers.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn param(&self, name: &str) -> Option<&Var> {
        self.params.get(name)
    }

    /// Number of scalar trainable parameters.
    pub fn num_params(&self) -> usize {
        self.params.values().map(|v| v.elem_count()).sum()
    }

    /// Deep copy of parameters and buffers.
    pub fn snapshot(&self) -> Result<Snapshot> {
        self.params
            .iter()
            .chain(self.buffers.iter())
            .map(|(k, v)| Ok((k.clone(), v.as_tensor().copy()?)))
            .collect()
    }

    /// Overwrites every variable from a snapshot with exactly the same keys
    /// and shapes.
    pub fn restore(&self, snapshot: &Snapshot) -> Result<()> {
        let expected = self.params.len() + self.buffers.len();
        if snapshot.len() != expected {
            return Err(Error::shape(format!(
                "snapshot has {} entries, store has {expected}",
                snapshot.len()
            )));
        }
        for (name, var) in self.params.iter().chain(self.buffers.iter()) {
            let value = snapshot
                .get(name)
                .ok_or_else(|| Error::shape(format!("snapshot is missing `{name}`")))?;
            if value.dims() != var.dims() {
                return Err(Error::shape(format!(
                    "`{name}`: snapshot shape {:?}, store shape {:?}",
                    value.dims(),
                    var.dims()
                )));
            }
            var.set(&value.to_dtype(self.dtype)?)?;
        }
        Ok(())
    }

    /// SHA-256 over every path, shape and little-endian value.
    pub fn hash(&self) -> Result<String> {
        hash_snapshot(&self.snapshot()?)
    }
}

pub(crate) fn hash_snapshot(snapshot: &Snapshot) -> Result<String> {
    let mut hasher = Sha256::new();
    for (name, tensor) in snapshot {
        hasher.update(name.as_bytes());
        for d in tensor.dims() {
            hasher.update((*d as u64).to_le_bytes());
        }
        for v in tensor.flatten_all()?.to_dtype(DType::F64)?.to_vec1::<f64>()? {
            hasher.update(v.to_le_bytes());
        }
    }
    Ok(hex::encode(hasher.finalize()))
}

/// A cursor into a [`ParamStore`] under a dotted prefix.
pub struct ParamPath<'a> {
    store: &'a mut ParamStore,
    prefix: String,
}

impl ParamPath<'_> {
    pub fn pp(&mut self, name: impl std::fmt::Display) -> ParamPath<'_> {
        let prefix = if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{name}", self.prefix)
        };
        ParamPath {
            store: self.store,
            prefix,
        }
    }

    fn key(&self, name: &str) -> String {
        if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{name}", self.prefix)
        }
    }

    pub fn dtype(&self) -> DType {
        self.store.dtype
    }

    pub fn device(&self) -> Device {
        self.store.device.clone()
    }

    /// Zero-mean Gaussian parameter with the given standard deviation.
    pub fn normal(&mut self, name: &str, shape: &[usize], std: f64) -> Result<Var> {
        let value = self.store.normal(shape, std)?;
        self.store.insert(self.key(name), value, true)
    }

    pub fn constant(&mut self, name: &str, shape: &[usize], value: f64) -> Result<Var> {
        let t = (Tensor::ones(shape, self.store.dtype, &self.store.device)? * value)?;
        self.store.insert(self.key(name), t, true)
    }

    pub fn buffer(&mut self, name: &str, shape: &[usize], value: f64) -> Result<Var> {
        let t = (Tensor::ones(shape, self.store.dtype, &self.store.device)? * value)?;
        self.store.insert(self.key(name), t, false)
    }
}
