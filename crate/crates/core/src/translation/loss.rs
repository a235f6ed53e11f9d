use candle_core::{DType, Tensor};

use super::decoder::log_softmax;
use crate::batch::scalar_f64;
use crate::error::{Error, Result};

/// Mean cross-entropy of `logits` `[B, L, V]` (or `[L, V]`) against `targets`
/// `[B, L]` (or `[L]`, u32), skipping positions equal to `pad_id`.
pub fn phoneme_loss(logits: &Tensor, targets: &Tensor, pad_id: u32) -> Result<Tensor> {
    let (logits, targets) = match logits.rank() {
        2 => (logits.unsqueeze(0)?, targets.unsqueeze(0)?),
        3 => (logits.clone(), targets.clone()),
        r => return Err(Error::input(format!("logits must be rank 2 or 3, got {r}"))),
    };
    let (b, l, v) = logits.dims3()?;
    if targets.dims() != [b, l] {
        return Err(Error::input(format!(
            "targets shape {:?} does not match logits {:?}",
            targets.dims(),
            logits.dims()
        )));
    }
    let ids = targets.to_dtype(DType::U32)?.flatten_all()?.to_vec1::<u32>()?;
    let mut onehot = vec![0f32; b * l * v];
    let mut count = 0usize;
    for (pos, &id) in ids.iter().enumerate() {
        if id == pad_id {
            continue;
        }
        if id as usize >= v {
            return Err(Error::input(format!("target {id} outside vocabulary of size {v}")));
        }
        onehot[pos * v + id as usize] = 1.0;
        count += 1;
    }
    if count == 0 {
        return Err(Error::input("every target position is padding"));
    }
    let onehot = Tensor::from_vec(onehot, (b, l, v), logits.device())?.to_dtype(logits.dtype())?;
    let picked = (log_softmax(&logits)? * onehot)?.sum_all()?;
    Ok((picked.neg()? / count as f64)?)
}

pub fn phoneme_loss_value(logits: &Tensor, targets: &Tensor, pad_id: u32) -> Result<f64> {
    scalar_f64(&phoneme_loss(logits, targets, pad_id)?)
}
