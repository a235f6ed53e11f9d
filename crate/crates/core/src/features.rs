//! Per-band log-mel statistics stored as model buffers.

use candle_core::Tensor;
use ndarray::Array2;

use crate::error::{Error, Result};
use crate::nn::{Init, ParamStore};

#[derive(Debug, Clone)]
pub struct FeatureNorm {
    mean: Tensor,
    std: Tensor,
    prefix: String,
}

impl FeatureNorm {
    pub fn new(init: &mut Init, dim: usize) -> Result<Self> {
        let mean = init.buffer("mean", &[dim], 0.0)?;
        let std = init.buffer("std", &[dim], 1.0)?;
        let prefix = init.name("");
        Ok(Self {
            mean,
            std,
            prefix: prefix.trim_end_matches('.').to_string(),
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.dims()[0]
    }

    pub fn normalize(&self, x: &Tensor) -> Result<Tensor> {
        Ok(x.broadcast_sub(&self.mean)?.broadcast_div(&self.std)?)
    }

    pub fn denormalize(&self, x: &Tensor) -> Result<Tensor> {
        Ok(x.broadcast_mul(&self.std)?.broadcast_add(&self.mean)?)
    }

    pub fn mean_values(&self) -> Result<Vec<f32>> {
        Ok(self.mean.to_dtype(candle_core::DType::F32)?.to_vec1()?)
    }

    /// Fits mean/std over every frame of every matrix (std floored at 1e-3).
    pub fn fit<'a>(&self, store: &ParamStore, data: impl IntoIterator<Item = &'a Array2<f32>>) -> Result<()> {
        let dim = self.dim();
        let mut sum = vec![0f64; dim];
        let mut sq = vec![0f64; dim];
        let mut n = 0usize;
        for m in data {
            if m.ncols() != dim {
                return Err(Error::input(format!("expected {dim} columns, got {}", m.ncols())));
            }
            for row in m.rows() {
                for (j, &v) in row.iter().enumerate() {
                    sum[j] += v as f64;
                    sq[j] += (v as f64) * (v as f64);
                }
                n += 1;
            }
        }
        if n == 0 {
            return Err(Error::input("no frames to fit normalization on"));
        }
        let mean: Vec<f32> = sum.iter().map(|s| (s / n as f64) as f32).collect();
        let std: Vec<f32> = sq
            .iter()
            .zip(&sum)
            .map(|(q, s)| {
                let m = s / n as f64;
                ((q / n as f64 - m * m).max(0.0).sqrt().max(1e-3)) as f32
            })
            .collect();
        store.set_from_f32(&format!("{}.mean", self.prefix), &mean)?;
        store.set_from_f32(&format!("{}.std", self.prefix), &std)?;
        Ok(())
    }
}
