use candle_core::{Tensor, D};

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::nn::{key_padding_bias, length_mask, softplus, Dropout, Init, LayerNorm, Linear, TransformerBlock};

/// Small transformer with a softplus scalar head. Its input is always
/// detached, so no gradient flows back into the translation stack.
#[derive(Debug, Clone)]
pub struct ScalarPredictor {
    input: Linear,
    blocks: Vec<TransformerBlock>,
    ln: LayerNorm,
    out: Linear,
    epsilon: f64,
}

impl ScalarPredictor {
    /// `target_init` is the softplus output the untrained head starts near.
    pub fn new(init: &mut Init, cfg: &ModelConfig, target_init: f64, epsilon: f64) -> Result<Self> {
        let dp = cfg.predictor_dim;
        let heads = if dp >= 32 { 2 } else { 1 };
        let blocks = (0..cfg.predictor_layers)
            .map(|i| TransformerBlock::new(&mut init.pp(&format!("layer{i}")), dp, heads, 2 * dp, false))
            .collect::<Result<Vec<_>>>()?;
        // inverse softplus so the head starts at `target_init`
        let bias = (target_init.exp() - 1.0).ln();
        Ok(Self {
            input: Linear::new(&mut init.pp("input"), cfg.d_model, dp, true)?,
            blocks,
            ln: LayerNorm::new(&mut init.pp("ln"), dp)?,
            out: Linear::with_bias(&mut init.pp("out"), dp, 1, bias)?,
            epsilon,
        })
    }

    /// `bridged` `[B, L, d]` → `[B, L]`; padded positions are zeroed.
    pub fn forward(&self, bridged: &Tensor, lengths: &[usize], drop: Option<&Dropout>) -> Result<Tensor> {
        let (b, l, _) = bridged.dims3()?;
        if l == 0 || lengths.len() != b || lengths.iter().any(|&n| n == 0 || n > l) {
            return Err(Error::input("predictor needs at least one token per item"));
        }
        let x = bridged.detach();
        let (dtype, dev) = (x.dtype(), x.device());
        let bias = key_padding_bias(lengths, l, dtype, dev)?;
        let mut h = self.input.forward(&x)?;
        for block in &self.blocks {
            h = block.forward(&h, Some(&bias), None, None, drop)?;
        }
        let y = (softplus(&self.out.forward(&self.ln.forward(&h)?)?)? + self.epsilon)?;
        let mask = length_mask(lengths, l, dtype, dev)?;
        Ok(y.broadcast_mul(&mask)?.squeeze(D::Minus1)?)
    }
}

/// Masked mean squared error between `[B, L]` predictions and targets.
pub fn duration_loss(pred: &Tensor, truth: &Tensor, lengths: &[usize]) -> Result<Tensor> {
    if pred.dims() != truth.dims() {
        return Err(Error::input(format!(
            "duration shapes differ: {:?} vs {:?}",
            pred.dims(),
            truth.dims()
        )));
    }
    let (b, l) = pred.dims2()?;
    if lengths.len() != b {
        return Err(Error::input("lengths do not match batch size"));
    }
    let count: usize = lengths.iter().map(|&n| n.min(l)).sum();
    if count == 0 {
        return Err(Error::input("no valid duration targets"));
    }
    let mask = length_mask(lengths, l, pred.dtype(), pred.device())?.squeeze(D::Minus1)?;
    let sq = ((pred - truth)?.sqr()? * mask)?.sum_all()?;
    Ok((sq / count as f64)?)
}

/// Plain-vector form of [`duration_loss`].
pub fn duration_loss_values(pred: &[f64], truth: &[f64]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::input(format!(
            "duration lengths differ: {} vs {}",
            pred.len(),
            truth.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::input("empty duration sequence"));
    }
    Ok(pred.iter().zip(truth).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / pred.len() as f64)
}
