use candle_core::{DType, Tensor};
use ndarray::Array2;

use crate::batch::stack_padded;
use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::features::FeatureNorm;
use crate::nn::{dropout, key_padding_bias, length_mask, sinusoid_table, Dropout, Init, LayerNorm, Linear, TransformerBlock};

/// Encoder output for a batch. Rows past each length are exactly zero and are
/// excluded from every attention through [`EncoderStates::bias`].
#[derive(Debug, Clone)]
pub struct EncoderStates {
    pub states: Tensor,
    pub lengths: Vec<usize>,
}

impl EncoderStates {
    pub fn batch_size(&self) -> usize {
        self.lengths.len()
    }

    pub fn max_len(&self) -> usize {
        self.states.dims()[1]
    }

    pub fn bias(&self) -> Result<Tensor> {
        key_padding_bias(&self.lengths, self.max_len(), self.states.dtype(), self.states.device())
    }

    /// `true` marks padded frames.
    pub fn pad_mask(&self, b: usize) -> Vec<bool> {
        (0..self.max_len()).map(|t| t >= self.lengths[b]).collect()
    }

    pub fn item(&self, b: usize) -> Result<EncoderStates> {
        let len = self.lengths[b];
        Ok(EncoderStates {
            states: self.states.narrow(0, b, 1)?.narrow(1, 0, len)?.contiguous()?,
            lengths: vec![len],
        })
    }

    /// Repeats a single-item batch `n` times.
    pub fn repeat(&self, n: usize) -> Result<EncoderStates> {
        if self.batch_size() != 1 {
            return Err(Error::input("repeat expects a single-item batch"));
        }
        let (_, t, d) = self.states.dims3()?;
        Ok(EncoderStates {
            states: self.states.broadcast_as((n, t, d))?.contiguous()?,
            lengths: vec![self.lengths[0]; n],
        })
    }

    pub fn detach(&self) -> EncoderStates {
        EncoderStates {
            states: self.states.detach(),
            lengths: self.lengths.clone(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct AcousticEncoder {
    norm: FeatureNorm,
    input: Linear,
    blocks: Vec<TransformerBlock>,
    ln_out: LayerNorm,
    d_model: usize,
}

impl AcousticEncoder {
    pub fn new(init: &mut Init, cfg: &ModelConfig, norm: FeatureNorm) -> Result<Self> {
        let input = Linear::new(&mut init.pp("input"), cfg.n_mels, cfg.d_model, true)?;
        let blocks = (0..cfg.encoder_layers)
            .map(|i| TransformerBlock::new(&mut init.pp(&format!("layer{i}")), cfg.d_model, cfg.heads, cfg.ffn, false))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            norm,
            input,
            blocks,
            ln_out: LayerNorm::new(&mut init.pp("ln_out"), cfg.d_model)?,
            d_model: cfg.d_model,
        })
    }

    /// `mel`: raw log-mel `[B, T, n_mels]`.
    pub fn forward(&self, mel: &Tensor, lengths: &[usize], drop: Option<&Dropout>) -> Result<EncoderStates> {
        let (b, t, _) = mel.dims3()?;
        if lengths.len() != b || lengths.iter().any(|&l| l == 0 || l > t) {
            return Err(Error::input("encoder lengths must be in 1..=T for every item"));
        }
        let (dtype, dev) = (mel.dtype(), mel.device());
        let mask = length_mask(lengths, t, dtype, dev)?;
        let x = self.norm.normalize(mel)?.broadcast_mul(&mask)?;
        let positions: Vec<f64> = (0..t).map(|i| i as f64).collect();
        let pe = Tensor::from_vec(sinusoid_table(&positions, self.d_model), (1, t, self.d_model), dev)?.to_dtype(dtype)?;
        let mut h = dropout(&self.input.forward(&x)?.broadcast_add(&pe)?, drop)?;
        let bias = key_padding_bias(lengths, t, dtype, dev)?;
        for block in &self.blocks {
            h = block.forward(&h, Some(&bias), None, None, drop)?;
        }
        let states = self.ln_out.forward(&h)?.broadcast_mul(&mask)?;
        Ok(EncoderStates {
            states,
            lengths: lengths.to_vec(),
        })
    }

    pub fn forward_batch(&self, mels: &[&Array2<f32>], dtype: DType, drop: Option<&Dropout>) -> Result<EncoderStates> {
        let views: Vec<_> = mels.iter().map(|m| m.view()).collect();
        let (x, lengths) = stack_padded(&views, dtype, &candle_core::Device::Cpu)?;
        if lengths.iter().any(|&l| l == 0) {
            return Err(Error::input("empty mel spectrogram"));
        }
        self.forward(&x, &lengths, drop)
    }

    /// Single-utterance eval-mode encoding. `pad_mask[t] == true` marks padded
    /// frames, which must form a suffix.
    pub fn encode(&self, mel: &Array2<f32>, pad_mask: Option<&[bool]>, dtype: DType) -> Result<EncoderStates> {
        if mel.nrows() == 0 {
            return Err(Error::input("empty mel spectrogram"));
        }
        let len = match pad_mask {
            None => mel.nrows(),
            Some(m) => {
                if m.len() != mel.nrows() {
                    return Err(Error::input("pad mask length differs from frame count"));
                }
                let len = m.iter().position(|&p| p).unwrap_or(m.len());
                if m[len..].iter().any(|&p| !p) {
                    return Err(Error::input("padding must be a suffix"));
                }
                if len == 0 {
                    return Err(Error::input("every frame is padded"));
                }
                len
            }
        };
        let (x, _) = stack_padded(&[mel.view()], dtype, &candle_core::Device::Cpu)?;
        self.forward(&x, &[len], None)
    }
}
