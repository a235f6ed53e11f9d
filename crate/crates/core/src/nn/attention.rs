use candle_core::{DType, Device, Tensor, D};

use super::{dropout, Dropout, FeedForward, Init, LayerNorm, Linear, Rotary, RotaryTables};
use crate::error::Result;

const MASKED: f64 = -1e9;

/// Additive key-padding bias `[B, 1, 1, max_len]`: 0 for valid keys, a large
/// negative value for padding.
pub fn key_padding_bias(lengths: &[usize], max_len: usize, dtype: DType, device: &Device) -> Result<Tensor> {
    let mut v = vec![0f32; lengths.len() * max_len];
    for (b, &len) in lengths.iter().enumerate() {
        for t in len..max_len {
            v[b * max_len + t] = MASKED as f32;
        }
    }
    Ok(Tensor::from_vec(v, (lengths.len(), 1, 1, max_len), device)?.to_dtype(dtype)?)
}

/// Additive causal bias `[1, 1, L, L]`.
pub fn causal_bias(len: usize, dtype: DType, device: &Device) -> Result<Tensor> {
    let mut v = vec![0f32; len * len];
    for i in 0..len {
        for j in i + 1..len {
            v[i * len + j] = MASKED as f32;
        }
    }
    Ok(Tensor::from_vec(v, (1, 1, len, len), device)?.to_dtype(dtype)?)
}

#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
    n_heads: usize,
    head_dim: usize,
}

impl MultiHeadAttention {
    pub fn new(init: &mut Init, d_model: usize, n_heads: usize) -> Result<Self> {
        Ok(Self {
            q: Linear::new(&mut init.pp("q"), d_model, d_model, true)?,
            k: Linear::new(&mut init.pp("k"), d_model, d_model, true)?,
            v: Linear::new(&mut init.pp("v"), d_model, d_model, true)?,
            o: Linear::new(&mut init.pp("o"), d_model, d_model, true)?,
            n_heads,
            head_dim: d_model / n_heads,
        })
    }

    pub fn head_dim(&self) -> usize {
        self.head_dim
    }

    pub fn value_proj(&self) -> &Linear {
        &self.v
    }

    pub fn out_proj(&self) -> &Linear {
        &self.o
    }

    fn split(&self, x: &Tensor) -> Result<Tensor> {
        let (b, l, _) = x.dims3()?;
        Ok(x
            .reshape((b, l, self.n_heads, self.head_dim))?
            .transpose(1, 2)?
            .contiguous()?)
    }

    /// Attention probabilities `[B, H, Lq, Lk]`.
    pub fn weights(
        &self,
        query: &Tensor,
        memory: &Tensor,
        bias: Option<&Tensor>,
        rotary: Option<(&Rotary, &RotaryTables)>,
    ) -> Result<Tensor> {
        let mut q = self.split(&self.q.forward(query)?)?;
        let mut k = self.split(&self.k.forward(memory)?)?;
        if let Some((rot, tables)) = rotary {
            q = rot.apply(&q, tables)?;
            k = rot.apply(&k, tables)?;
        }
        let scale = 1.0 / (self.head_dim as f64).sqrt();
        let mut scores = (q.matmul(&k.t()?)? * scale)?;
        if let Some(bias) = bias {
            scores = scores.broadcast_add(bias)?;
        }
        let max = scores.max_keepdim(D::Minus1)?;
        let e = scores.broadcast_sub(&max)?.exp()?;
        Ok(e.broadcast_div(&e.sum_keepdim(D::Minus1)?)?)
    }

    pub fn forward(
        &self,
        query: &Tensor,
        memory: &Tensor,
        bias: Option<&Tensor>,
        rotary: Option<(&Rotary, &RotaryTables)>,
    ) -> Result<Tensor> {
        let (b, lq, d) = query.dims3()?;
        let w = self.weights(query, memory, bias, rotary)?;
        let v = self.split(&self.v.forward(memory)?)?;
        let ctx = w.matmul(&v)?.transpose(1, 2)?.contiguous()?.reshape((b, lq, d))?;
        self.o.forward(&ctx)
    }
}

/// Pre-norm transformer block with optional cross-attention.
#[derive(Debug, Clone)]
pub struct TransformerBlock {
    ln_self: LayerNorm,
    self_attn: MultiHeadAttention,
    cross: Option<(LayerNorm, MultiHeadAttention)>,
    ln_ff: LayerNorm,
    ff: FeedForward,
}

impl TransformerBlock {
    pub fn new(init: &mut Init, d_model: usize, n_heads: usize, ffn: usize, with_cross: bool) -> Result<Self> {
        let cross = if with_cross {
            Some((
                LayerNorm::new(&mut init.pp("ln_cross"), d_model)?,
                MultiHeadAttention::new(&mut init.pp("cross_attn"), d_model, n_heads)?,
            ))
        } else {
            None
        };
        Ok(Self {
            ln_self: LayerNorm::new(&mut init.pp("ln_self"), d_model)?,
            self_attn: MultiHeadAttention::new(&mut init.pp("self_attn"), d_model, n_heads)?,
            cross,
            ln_ff: LayerNorm::new(&mut init.pp("ln_ff"), d_model)?,
            ff: FeedForward::new(&mut init.pp("ff"), d_model, ffn)?,
        })
    }

    pub fn self_attn(&self) -> &MultiHeadAttention {
        &self.self_attn
    }

    pub fn forward(
        &self,
        x: &Tensor,
        self_bias: Option<&Tensor>,
        rotary: Option<(&Rotary, &RotaryTables)>,
        memory: Option<(&Tensor, Option<&Tensor>)>,
        drop: Option<&Dropout>,
    ) -> Result<Tensor> {
        let h = self.ln_self.forward(x)?;
        let a = self.self_attn.forward(&h, &h, self_bias, rotary)?;
        let mut x = (x + dropout(&a, drop)?)?;
        if let (Some((ln, attn)), Some((mem, mem_bias))) = (&self.cross, memory) {
            let h = ln.forward(&x)?;
            let a = attn.forward(&h, mem, mem_bias, None)?;
            x = (x + dropout(&a, drop)?)?;
        }
        let h = self.ln_ff.forward(&x)?;
        let f = self.ff.forward(&h, drop)?;
        Ok((x + dropout(&f, drop)?)?)
    }
}
