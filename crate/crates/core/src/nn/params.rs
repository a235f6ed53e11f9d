use std::collections::HashMap;

use candle_core::{DType, Device, Tensor, Var};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParamKind {
    /// Updated by the optimizer.
    Trainable,
    /// Persistent state that is never touched by gradients (codebooks, statistics).
    Buffer,
}

#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub var: Var,
    pub kind: ParamKind,
}

impl Param {
    pub fn tensor(&self) -> &Tensor {
        self.var.as_tensor()
    }
}

/// Ordered collection of named parameters.
#[derive(Debug)]
pub struct ParamStore {
    params: Vec<Param>,
    index: HashMap<String, usize>,
    dtype: DType,
    device: Device,
}

impl ParamStore {
    pub fn new(dtype: DType) -> Self {
        Self {
            params: Vec::new(),
            index: HashMap::new(),
            dtype,
            device: Device::Cpu,
        }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.index.get(name).map(|&i| &self.params[i])
    }

    pub fn with_prefix<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = &'a Param> + 'a {
        self.params
            .iter()
            .filter(move |p| p.name == prefix || p.name.starts_with(&format!("{prefix}.")))
    }

    fn insert(&mut self, name: String, tensor: Tensor, kind: ParamKind) -> Result<Tensor> {
        if self.index.contains_key(&name) {
            return Err(Error::config(format!("duplicate parameter name `{name}`")));
        }
        let var = Var::from_tensor(&tensor)?;
        let t = var.as_tensor().clone();
        self.index.insert(name.clone(), self.params.len());
        self.params.push(Param { name, var, kind });
        Ok(t)
    }

    /// Overwrites a parameter in place; every module holding the tensor sees the new value.
    pub fn set(&self, name: &str, value: &Tensor) -> Result<()> {
        let p = self
            .get(name)
            .ok_or_else(|| Error::state(format!("unknown parameter `{name}`")))?;
        if p.var.shape() != value.shape() {
            return Err(Error::input(format!(
                "shape mismatch for `{name}`: expected {:?}, got {:?}",
                p.var.shape(),
                value.shape()
            )));
        }
        p.var.set(&value.to_dtype(self.dtype)?)?;
        Ok(())
    }

    pub fn set_from_f32(&self, name: &str, values: &[f32]) -> Result<()> {
        let p = self
            .get(name)
            .ok_or_else(|| Error::state(format!("unknown parameter `{name}`")))?;
        let t = Tensor::from_slice(values, p.var.shape(), &self.device)?;
        self.set(name, &t)
    }

    /// Little-endian f32 bytes of a parameter, the unit used for checkpoint blobs
    /// and for byte-level freezing checks.
    pub fn bytes(&self, name: &str) -> Result<Vec<u8>> {
        let p = self
            .get(name)
            .ok_or_else(|| Error::state(format!("unknown parameter `{name}`")))?;
        tensor_le_bytes(p.tensor())
    }
}

pub fn tensor_le_bytes(t: &Tensor) -> Result<Vec<u8>> {
    let v = t.to_dtype(DType::F32)?.flatten_all()?.to_vec1::<f32>()?;
    let mut out = Vec::with_capacity(v.len() * 4);
    for x in v {
        out.extend_from_slice(&x.to_le_bytes());
    }
    Ok(out)
}

/// Scoped parameter factory: `init.pp("encoder").pp("layer0")` prefixes names.
pub struct Init<'a> {
    store: &'a mut ParamStore,
    rng: &'a mut ChaCha8Rng,
    prefix: String,
}

impl<'a> Init<'a> {
    pub fn new(store: &'a mut ParamStore, rng: &'a mut ChaCha8Rng) -> Self {
        Self {
            store,
            rng,
            prefix: String::new(),
        }
    }

    pub fn pp(&mut self, name: &str) -> Init<'_> {
        let prefix = if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{}", self.prefix, name)
        };
        Init {
            store: &mut *self.store,
            rng: &mut *self.rng,
            prefix,
        }
    }

    pub fn dtype(&self) -> DType {
        self.store.dtype
    }

    pub fn device(&self) -> Device {
        self.store.device.clone()
    }

    /// Fully qualified name of `name` under the current prefix.
    pub fn name(&self, name: &str) -> String {
        self.full_name(name)
    }

    fn full_name(&self, name: &str) -> String {
        if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{}", self.prefix, name)
        }
    }

    fn make(&mut self, name: &str, dims: &[usize], values: Vec<f64>, kind: ParamKind) -> Result<Tensor> {
        let t = Tensor::from_vec(values, dims, &self.store.device)?.to_dtype(self.store.dtype)?;
        let full = self.full_name(name);
        self.store.insert(full, t, kind)
    }

    pub fn uniform(&mut self, name: &str, dims: &[usize], bound: f64) -> Result<Tensor> {
        let n: usize = dims.iter().product();
        let values = (0..n)
            .map(|_| self.rng.random_range(-bound..=bound))
            .collect();
        self.make(name, dims, values, ParamKind::Trainable)
    }

    pub fn normal(&mut self, name: &str, dims: &[usize], std: f64) -> Result<Tensor> {
        let n: usize = dims.iter().product();
        let values = (0..n)
            .map(|_| {
                let z: f64 = StandardNormal.sample(self.rng);
                z * std
            })
            .collect();
        self.make(name, dims, values, ParamKind::Trainable)
    }

    pub fn constant(&mut self, name: &str, dims: &[usize], value: f64) -> Result<Tensor> {
        let n: usize = dims.iter().product();
        self.make(name, dims, vec![value; n], ParamKind::Trainable)
    }

    pub fn buffer(&mut self, name: &str, dims: &[usize], value: f64) -> Result<Tensor> {
        let n: usize = dims.iter().product();
        self.make(name, dims, vec![value; n], ParamKind::Buffer)
    }
}
