use candle_core::{DType, Device, Tensor, D};

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::features::FeatureNorm;
use crate::nn::{dropout, key_padding_bias, length_mask, sinusoid_table, Dropout, Init, LayerNorm, Linear, TransformerBlock};

/// A conditional velocity field over latent sequences `[B, T, d_lat]`.
pub trait VectorField {
    fn velocity(&self, x_t: &Tensor, t: &[f64], context: &Tensor, cond: &Tensor, lengths: &[usize]) -> Result<Tensor>;

    /// The "no conditioning" input, `[B, T, d_lat]`.
    fn null_condition(&self, b: usize, t: usize) -> Result<Tensor>;
}

#[derive(Debug, Clone)]
pub struct ConditionProjector {
    mlp1: Linear,
    mlp2: Linear,
    pos: Linear,
    downsample: usize,
}

impl ConditionProjector {
    pub fn new(init: &mut Init, d_in: usize, d_pos: usize, d_lat: usize, downsample: usize) -> Result<Self> {
        Ok(Self {
            mlp1: Linear::new(&mut init.pp("mlp1"), d_in, d_in, true)?,
            mlp2: Linear::new(&mut init.pp("mlp2"), d_in, d_lat, true)?,
            pos: Linear::new(&mut init.pp("pos"), d_pos, d_lat, true)?,
            downsample,
        })
    }

    /// Masked average over consecutive groups of `downsample` frames:
    /// `[B, T_m, C]` → `[B, ceil(T_m/ds), C]`.
    pub fn pool(&self, x: &Tensor, frame_lengths: &[usize]) -> Result<Tensor> {
        let (b, t, c) = x.dims3()?;
        let ds = self.downsample;
        let t_lat = t.div_ceil(ds);
        let padded = t_lat * ds;
        let mask = length_mask(frame_lengths, padded, x.dtype(), x.device())?;
        let x = if padded > t {
            Tensor::cat(&[x, &Tensor::zeros((b, padded - t, c), x.dtype(), x.device())?], 1)?
        } else {
            x.clone()
        };
        let x = x.broadcast_mul(&mask)?.reshape((b, t_lat, ds, c))?.sum(2)?;
        let count = mask.reshape((b, t_lat, ds))?.sum_keepdim(2)?.clamp(1.0, f64::INFINITY)?;
        Ok(x.broadcast_div(&count)?)
    }

    /// Mel-rate conditioning `[B, T_m, d]` and duration encoding `[B, T_m, d_pos]`
    /// → latent-rate conditioning `[B, t_lat, d_lat]`.
    pub fn forward(&self, frames: &Tensor, pos: &Tensor, frame_lengths: &[usize], t_lat: usize) -> Result<Tensor> {
        let t_m = frames.dims()[1];
        if t_m.div_ceil(self.downsample) != t_lat || pos.dims()[1] != t_m {
            return Err(Error::config(format!(
                "conditioning rate mismatch: {t_m} frames do not pool to {t_lat} latents at downsample {}",
                self.downsample
            )));
        }
        let h = self.mlp2.forward(&self.mlp1.forward(frames)?.gelu()?)?;
        let p = self.pos.forward(&self.pool(pos, frame_lengths)?)?;
        Ok((self.pool(&h, frame_lengths)? + p)?)
    }

    pub fn positional_only(&self, pos: &Tensor, frame_lengths: &[usize]) -> Result<Tensor> {
        self.pos.forward(&self.pool(pos, frame_lengths)?)
    }
}

#[derive(Debug, Clone)]
pub struct DiffusionSynthesizer {
    latent_norm: FeatureNorm,
    input: Linear,
    blocks: Vec<TransformerBlock>,
    ln_out: LayerNorm,
    out: Linear,
    projector: ConditionProjector,
    null: Tensor,
    d_model: usize,
    d_lat: usize,
    t_embed: usize,
}

impl DiffusionSynthesizer {
    pub fn new(init: &mut Init, cfg: &ModelConfig) -> Result<Self> {
        let dc = &cfg.diffusion;
        let d_lat = cfg.codec.d_lat;
        let blocks = (0..dc.layers)
            .map(|i| TransformerBlock::new(&mut init.pp(&format!("layer{i}")), dc.d_model, dc.heads, dc.ffn, false))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            latent_norm: FeatureNorm::new(&mut init.pp("latent_norm"), d_lat)?,
            input: Linear::new(&mut init.pp("input"), 2 * d_lat + dc.t_embed, dc.d_model, true)?,
            blocks,
            ln_out: LayerNorm::new(&mut init.pp("ln_out"), dc.d_model)?,
            out: Linear::new(&mut init.pp("out"), dc.d_model, d_lat, true)?,
            projector: ConditionProjector::new(&mut init.pp("cond"), cfg.d_model, cfg.d_pos, d_lat, cfg.codec.downsample)?,
            null: init.normal("null", &[d_lat], 0.1)?,
            d_model: dc.d_model,
            d_lat,
            t_embed: dc.t_embed,
        })
    }

    pub fn latent_norm(&self) -> &FeatureNorm {
        &self.latent_norm
    }

    pub fn projector(&self) -> &ConditionProjector {
        &self.projector
    }

    pub fn d_lat(&self) -> usize {
        self.d_lat
    }

    pub fn forward(
        &self,
        x_t: &Tensor,
        t: &[f64],
        context: &Tensor,
        cond: &Tensor,
        lengths: &[usize],
        drop: Option<&Dropout>,
    ) -> Result<Tensor> {
        let (b, l, d) = x_t.dims3()?;
        if d != self.d_lat || context.dims() != x_t.dims() || cond.dims() != x_t.dims() {
            return Err(Error::input("diffusion inputs must share shape [B, T, d_lat]"));
        }
        if t.len() != b || lengths.len() != b || lengths.iter().any(|&n| n == 0 || n > l) {
            return Err(Error::input("diffusion batch metadata is inconsistent"));
        }
        let (dtype, dev) = (x_t.dtype(), x_t.device());
        let scaled: Vec<f64> = t.iter().map(|v| v * 1000.0).collect();
        let temb = Tensor::from_vec(sinusoid_table(&scaled, self.t_embed), (b, 1, self.t_embed), dev)?
            .to_dtype(dtype)?
            .broadcast_as((b, l, self.t_embed))?;
        let inp = Tensor::cat(&[x_t, &(context + cond)?, &temb], D::Minus1)?;
        let positions: Vec<f64> = (0..l).map(|i| i as f64).collect();
        let pe = Tensor::from_vec(sinusoid_table(&positions, self.d_model), (1, l, self.d_model), dev)?.to_dtype(dtype)?;
        let mut h = dropout(&self.input.forward(&inp)?.broadcast_add(&pe)?, drop)?;
        let bias = key_padding_bias(lengths, l, dtype, dev)?;
        for block in &self.blocks {
            h = block.forward(&h, Some(&bias), None, None, drop)?;
        }
        let mask = length_mask(lengths, l, dtype, dev)?;
        Ok(self.out.forward(&self.ln_out.forward(&h)?)?.broadcast_mul(&mask)?)
    }
}

impl VectorField for DiffusionSynthesizer {
    fn velocity(&self, x_t: &Tensor, t: &[f64], context: &Tensor, cond: &Tensor, lengths: &[usize]) -> Result<Tensor> {
        self.forward(x_t, t, context, cond, lengths, None)
    }

    fn null_condition(&self, b: usize, t: usize) -> Result<Tensor> {
        Ok(self.null.reshape((1, 1, self.d_lat))?.broadcast_as((b, t, self.d_lat))?.contiguous()?)
    }
}

/// Model wrapper that applies dropout during training.
pub struct Training<'a> {
    pub model: &'a DiffusionSynthesizer,
    pub drop: Option<&'a Dropout>,
}

impl VectorField for Training<'_> {
    fn velocity(&self, x_t: &Tensor, t: &[f64], context: &Tensor, cond: &Tensor, lengths: &[usize]) -> Result<Tensor> {
        self.model.forward(x_t, t, context, cond, lengths, self.drop)
    }

    fn null_condition(&self, b: usize, t: usize) -> Result<Tensor> {
        self.model.null_condition(b, t)
    }
}

/// Zero tensor helper used for the all-masked translation context.
pub fn zeros(b: usize, t: usize, d: usize, dtype: DType) -> Result<Tensor> {
    Ok(Tensor::zeros((b, t, d), dtype, &Device::Cpu)?)
}
