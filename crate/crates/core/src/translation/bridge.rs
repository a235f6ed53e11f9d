use candle_core::Tensor;

use super::EncoderStates;
use crate::error::{Error, Result};
use crate::nn::{Init, LayerNorm, MultiHeadAttention};

/// One unmasked cross-attention layer: decoder hidden states query all valid
/// encoder frames, and the readout is added back to the queries.
#[derive(Debug, Clone)]
pub struct AcousticBridge {
    ln: LayerNorm,
    attn: MultiHeadAttention,
}

impl AcousticBridge {
    pub fn new(init: &mut Init, d_model: usize, heads: usize) -> Result<Self> {
        Ok(Self {
            ln: LayerNorm::new(&mut init.pp("ln"), d_model)?,
            attn: MultiHeadAttention::new(&mut init.pp("attn"), d_model, heads)?,
        })
    }

    pub fn attention(&self) -> &MultiHeadAttention {
        &self.attn
    }

    /// Attention readout alone, `[B, L, d]`.
    pub fn readout(&self, hidden: &Tensor, enc: &EncoderStates) -> Result<Tensor> {
        let (b, _, d) = hidden.dims3()?;
        if b != enc.batch_size() || enc.states.dims()[2] != d {
            return Err(Error::input("bridge inputs have mismatched shapes"));
        }
        let bias = enc.bias()?;
        self.attn.forward(&self.ln.forward(hidden)?, &enc.states, Some(&bias), None)
    }

    pub fn forward(&self, hidden: &Tensor, enc: &EncoderStates) -> Result<Tensor> {
        Ok((hidden + self.readout(hidden, enc)?)?)
    }
}
