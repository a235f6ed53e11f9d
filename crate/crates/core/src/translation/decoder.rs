use candle_core::{Tensor, D};

use super::EncoderStates;
use crate::batch::pad_tokens;
use crate::config::{ModelConfig, Vocab};
use crate::error::{Error, Result};
use crate::nn::{causal_bias, dropout, Dropout, Init, LayerNorm, Linear, Rotary, TransformerBlock};

#[derive(Debug, Clone)]
pub struct DecoderOutput {
    /// `[B, L, V]`
    pub logits: Tensor,
    /// `[B, L, d_model]`, after the final layer norm.
    pub hidden: Tensor,
}

#[derive(Debug, Clone)]
pub struct PhonemeDecoder {
    embed: Tensor,
    blocks: Vec<TransformerBlock>,
    ln_out: LayerNorm,
    head: Linear,
    rotary: Rotary,
    vocab: usize,
}

impl PhonemeDecoder {
    pub fn new(init: &mut Init, cfg: &ModelConfig) -> Result<Self> {
        let vocab = cfg.vocab_size();
        let embed = init.normal("embed", &[vocab, cfg.d_model], 1.0)?;
        let blocks = (0..cfg.decoder_layers)
            .map(|i| TransformerBlock::new(&mut init.pp(&format!("layer{i}")), cfg.d_model, cfg.heads, cfg.ffn, true))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            embed,
            blocks,
            ln_out: LayerNorm::new(&mut init.pp("ln_out"), cfg.d_model)?,
            head: Linear::new(&mut init.pp("head"), cfg.d_model, vocab, true)?,
            rotary: Rotary::new(cfg.d_model / cfg.heads)?,
            vocab,
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab
    }

    /// Teacher-forced pass over `tokens` `[B, L]` (u32). Padding after a
    /// sequence is harmless: causal attention never looks forward.
    pub fn forward(&self, tokens: &Tensor, enc: &EncoderStates, drop: Option<&Dropout>) -> Result<DecoderOutput> {
        let (b, l) = tokens.dims2()?;
        if b != enc.batch_size() {
            return Err(Error::input("decoder and encoder batch sizes differ"));
        }
        let max = tokens.flatten_all()?.max(0)?.to_scalar::<u32>()?;
        if max as usize >= self.vocab {
            return Err(Error::input(format!("token {max} outside vocabulary of size {}", self.vocab)));
        }
        let d = self.embed.dims()[1];
        let x = self.embed.index_select(&tokens.flatten_all()?, 0)?.reshape((b, l, d))?;
        let mut h = dropout(&x, drop)?;
        let (dtype, dev) = (x.dtype(), x.device());
        let causal = causal_bias(l, dtype, dev)?;
        let positions: Vec<f64> = (0..l).map(|i| i as f64).collect();
        let tables = self.rotary.tables(&positions, dtype, dev)?;
        let mem_bias = enc.bias()?;
        for block in &self.blocks {
            h = block.forward(
                &h,
                Some(&causal),
                Some((&self.rotary, &tables)),
                Some((&enc.states, Some(&mem_bias))),
                drop,
            )?;
        }
        let hidden = self.ln_out.forward(&h)?;
        let logits = self.head.forward(&hidden)?;
        Ok(DecoderOutput { logits, hidden })
    }

    /// Single-sequence teacher-forced pass; `tokens` must start with BOS.
    pub fn forward_tokens(&self, tokens: &[u32], enc: &EncoderStates) -> Result<DecoderOutput> {
        if tokens.first() != Some(&Vocab::BOS) {
            return Err(Error::input("decoder input must begin with BOS"));
        }
        let (t, _) = pad_tokens(&[tokens.to_vec()], Vocab::PAD, enc.states.device())?;
        self.forward(&t, enc, None)
    }
}

/// Numerically stable log-softmax over the last axis.
pub fn log_softmax(x: &Tensor) -> Result<Tensor> {
    let max = x.max_keepdim(D::Minus1)?.detach();
    let shifted = x.broadcast_sub(&max)?;
    let lse = shifted.exp()?.sum_keepdim(D::Minus1)?.log()?;
    Ok(shifted.broadcast_sub(&lse)?)
}
