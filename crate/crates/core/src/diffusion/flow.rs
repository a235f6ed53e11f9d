use candle_core::{Device, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FlowConfig {
    pub sigma_min: f64,
    pub steps: usize,
    pub guidance_scale: f64,
    pub p_uncond: f64,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            sigma_min: 1e-4,
            steps: 25,
            guidance_scale: 1.0,
            p_uncond: 0.2,
        }
    }
}

impl FlowConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_min > 0.0 && self.sigma_min < 1.0) {
            return Err(Error::config("sigma_min must lie in (0, 1)"));
        }
        if self.steps < 1 {
            return Err(Error::config("steps must be ≥ 1"));
        }
        if !(self.guidance_scale >= 0.0) {
            return Err(Error::config("guidance scale must be ≥ 0"));
        }
        if !(0.0..=1.0).contains(&self.p_uncond) {
            return Err(Error::config("p_uncond must lie in [0, 1]"));
        }
        Ok(())
    }
}

fn same_shape(x0: &Tensor, x1: &Tensor) -> Result<()> {
    if x0.dims() != x1.dims() {
        return Err(Error::input(format!(
            "noise and data shapes differ: {:?} vs {:?}",
            x0.dims(),
            x1.dims()
        )));
    }
    Ok(())
}

/// `x_t = (1 − (1 − σ_min)·t)·x0 + t·x1`.
pub fn flow_interpolate(x0: &Tensor, x1: &Tensor, t: f64, sigma_min: f64) -> Result<Tensor> {
    same_shape(x0, x1)?;
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::input(format!("t = {t} outside [0, 1]")));
    }
    Ok(((x0 * (1.0 - (1.0 - sigma_min) * t))? + (x1 * t)?)?)
}

/// Per-item times for `[B, …]` tensors.
pub fn flow_interpolate_batch(x0: &Tensor, x1: &Tensor, t: &[f64], sigma_min: f64) -> Result<Tensor> {
    same_shape(x0, x1)?;
    let b = x0.dims()[0];
    if t.len() != b {
        return Err(Error::input("one time value per batch item required"));
    }
    if t.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::input("t outside [0, 1]"));
    }
    let mut shape = vec![1usize; x0.rank()];
    shape[0] = b;
    let a: Vec<f64> = t.iter().map(|&t| 1.0 - (1.0 - sigma_min) * t).collect();
    let a = Tensor::from_vec(a, shape.as_slice(), &Device::Cpu)?.to_dtype(x0.dtype())?;
    let tt = Tensor::from_vec(t.to_vec(), shape.as_slice(), &Device::Cpu)?.to_dtype(x0.dtype())?;
    Ok((x0.broadcast_mul(&a)? + x1.broadcast_mul(&tt)?)?)
}

/// `u = x1 − (1 − σ_min)·x0`, the time derivative of the path.
pub fn target_vector_field(x0: &Tensor, x1: &Tensor, sigma_min: f64) -> Result<Tensor> {
    same_shape(x0, x1)?;
    Ok((x1 - (x0 * (1.0 - sigma_min))?)?)
}
