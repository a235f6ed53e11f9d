//! Padding helpers that turn ragged per-utterance arrays into batch tensors.

use candle_core::{DType, Device, Tensor};
use ndarray::ArrayView2;

use crate::error::{Error, Result};

/// Stacks `[T_i × F]` arrays into a zero-padded `[B × T_max × F]` tensor.
pub fn stack_padded(items: &[ArrayView2<f32>], dtype: DType, device: &Device) -> Result<(Tensor, Vec<usize>)> {
    if items.is_empty() {
        return Err(Error::input("empty batch"));
    }
    let f = items[0].ncols();
    if items.iter().any(|a| a.ncols() != f) {
        return Err(Error::input("feature widths differ within batch"));
    }
    let lengths: Vec<usize> = items.iter().map(|a| a.nrows()).collect();
    let t_max = lengths.iter().copied().max().unwrap_or(0).max(1);
    let mut buf = vec![0f32; items.len() * t_max * f];
    for (b, a) in items.iter().enumerate() {
        for (t, row) in a.rows().into_iter().enumerate() {
            let off = (b * t_max + t) * f;
            for (j, v) in row.iter().enumerate() {
                buf[off + j] = *v;
            }
        }
    }
    let t = Tensor::from_vec(buf, (items.len(), t_max, f), device)?.to_dtype(dtype)?;
    Ok((t, lengths))
}

/// Pads token sequences into a `[B × L_max]` u32 tensor.
pub fn pad_tokens(seqs: &[Vec<u32>], pad: u32, device: &Device) -> Result<(Tensor, Vec<usize>)> {
    if seqs.is_empty() {
        return Err(Error::input("empty batch"));
    }
    let lengths: Vec<usize> = seqs.iter().map(Vec::len).collect();
    let l_max = lengths.iter().copied().max().unwrap_or(0).max(1);
    let mut buf = vec![pad; seqs.len() * l_max];
    for (b, s) in seqs.iter().enumerate() {
        buf[b * l_max..b * l_max + s.len()].copy_from_slice(s);
    }
    Ok((Tensor::from_vec(buf, (seqs.len(), l_max), device)?, lengths))
}

/// Row-major `[B × L_max]` f32 values padded with `fill`.
pub fn pad_values(seqs: &[Vec<f32>], fill: f32, dtype: DType, device: &Device) -> Result<Tensor> {
    let l_max = seqs.iter().map(Vec::len).max().unwrap_or(0).max(1);
    let mut buf = vec![fill; seqs.len() * l_max];
    for (b, s) in seqs.iter().enumerate() {
        buf[b * l_max..b * l_max + s.len()].copy_from_slice(s);
    }
    Ok(Tensor::from_vec(buf, (seqs.len(), l_max), device)?.to_dtype(dtype)?)
}

pub fn scalar_f64(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}
