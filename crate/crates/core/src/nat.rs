//! Non-autoregressive mel synthesizer: stacked (shifted-frame convolution +
//! self-attention) layers over the upsampled conditioning.

use candle_core::{Tensor, D};
use ndarray::Array2;

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::features::FeatureNorm;
use crate::nn::{dropout, key_padding_bias, length_mask, Dropout, Init, LayerNorm, Linear, TransformerBlock};

#[derive(Debug, Clone)]
struct NatLayer {
    ln: LayerNorm,
    conv: Linear,
    block: TransformerBlock,
}

#[derive(Debug, Clone)]
pub struct NatSynthesizer {
    norm: FeatureNorm,
    input: Linear,
    pos: Linear,
    layers: Vec<NatLayer>,
    ln_out: LayerNorm,
    out: Linear,
}

/// `[x_{t−1}, x_t, x_{t+1}]` along the channel axis with zero boundaries.
fn shifted_context(x: &Tensor) -> Result<Tensor> {
    let (b, t, d) = x.dims3()?;
    let zero = Tensor::zeros((b, 1, d), x.dtype(), x.device())?;
    let (prev, next) = if t == 1 {
        (zero.clone(), zero)
    } else {
        (
            Tensor::cat(&[&zero, &x.narrow(1, 0, t - 1)?], 1)?,
            Tensor::cat(&[&x.narrow(1, 1, t - 1)?, &zero], 1)?,
        )
    };
    Ok(Tensor::cat(&[&prev, x, &next], D::Minus1)?)
}

impl NatSynthesizer {
    pub fn new(init: &mut Init, cfg: &ModelConfig, norm: FeatureNorm) -> Result<Self> {
        let d = cfg.d_model;
        let layers = (0..cfg.nat_layers)
            .map(|i| {
                let mut li = init.pp(&format!("layer{i}"));
                Ok(NatLayer {
                    ln: LayerNorm::new(&mut li.pp("ln"), d)?,
                    conv: Linear::new(&mut li.pp("conv"), 3 * d, d, true)?,
                    block: TransformerBlock::new(&mut li.pp("block"), d, cfg.heads, cfg.ffn, false)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            norm,
            input: Linear::new(&mut init.pp("input"), d, d, true)?,
            pos: Linear::new(&mut init.pp("pos"), cfg.d_pos, d, true)?,
            layers,
            ln_out: LayerNorm::new(&mut init.pp("ln_out"), d)?,
            out: Linear::new(&mut init.pp("out"), d, cfg.n_mels, true)?,
        })
    }

    /// `cond` `[B, T, d]`, `pos` `[B, T, d_pos]` → raw log-mel `[B, T, n_mels]`.
    pub fn forward(&self, cond: &Tensor, pos: &Tensor, lengths: &[usize], drop: Option<&Dropout>) -> Result<Tensor> {
        let (b, t, _) = cond.dims3()?;
        if pos.dims()[..2] != [b, t] {
            return Err(Error::input("conditioning and positional encoding lengths differ"));
        }
        if lengths.len() != b || lengths.iter().any(|&l| l == 0 || l > t) {
            return Err(Error::input("NAT lengths must lie in 1..=T"));
        }
        let (dtype, dev) = (cond.dtype(), cond.device());
        let mask = length_mask(lengths, t, dtype, dev)?;
        let bias = key_padding_bias(lengths, t, dtype, dev)?;
        let mut h = (self.input.forward(cond)? + self.pos.forward(pos)?)?.broadcast_mul(&mask)?;
        h = dropout(&h, drop)?;
        for layer in &self.layers {
            let c = shifted_context(&layer.ln.forward(&h)?.broadcast_mul(&mask)?)?;
            let c = layer.conv.forward(&c)?.gelu()?;
            h = (h + dropout(&c, drop)?)?.broadcast_mul(&mask)?;
            h = layer.block.forward(&h, Some(&bias), None, None, drop)?.broadcast_mul(&mask)?;
        }
        let y = self.out.forward(&self.ln_out.forward(&h)?)?;
        Ok(self.norm.denormalize(&y)?.broadcast_mul(&mask)?)
    }
}

/// Mean squared error over valid cells of `[B, T, F]` tensors.
pub fn nat_loss(pred: &Tensor, truth: &Tensor, lengths: &[usize]) -> Result<Tensor> {
    if pred.dims() != truth.dims() {
        return Err(Error::input(format!(
            "mel shapes differ: {:?} vs {:?}",
            pred.dims(),
            truth.dims()
        )));
    }
    let (b, t, f) = pred.dims3()?;
    if lengths.len() != b {
        return Err(Error::input("lengths do not match batch size"));
    }
    let cells: usize = lengths.iter().map(|&l| l.min(t) * f).sum();
    if cells == 0 {
        return Err(Error::input("no valid mel frames"));
    }
    let mask = length_mask(lengths, t, pred.dtype(), pred.device())?;
    let sq = (pred - truth)?.sqr()?.broadcast_mul(&mask)?.sum_all()?;
    Ok((sq / cells as f64)?)
}

/// Mean squared error between two mel matrices of identical shape.
pub fn nat_loss_arrays(pred: &Array2<f32>, truth: &Array2<f32>) -> Result<f64> {
    if pred.dim() != truth.dim() {
        return Err(Error::input(format!(
            "mel shapes differ: {:?} vs {:?}",
            pred.dim(),
            truth.dim()
        )));
    }
    if pred.is_empty() {
        return Err(Error::input("empty mel"));
    }
    let s: f64 = pred.iter().zip(truth).map(|(a, b)| ((a - b) as f64).powi(2)).sum();
    Ok(s / pred.len() as f64)
}

#[cfg(test)]
mod tests {
    use candle_core::{DType, Device};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::nn::ParamStore;

    fn model() -> (ParamStore, NatSynthesizer) {
        let cfg = ModelConfig::tiny();
        let mut store = ParamStore::new(DType::F32);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut init = Init::new(&mut store, &mut rng);
        let norm = FeatureNorm::new(&mut init.pp("frontend"), cfg.n_mels).unwrap();
        let nat = NatSynthesizer::new(&mut init.pp("nat"), &cfg, norm).unwrap();
        (store, nat)
    }

    fn rand_t(dims: (usize, usize, usize), seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v: Vec<f32> = (0..dims.0 * dims.1 * dims.2).map(|_| rng.random_range(-1.0..1.0)).collect();
        Tensor::from_vec(v, dims, &Device::Cpu).unwrap()
    }

    #[test]
    fn length_preserving_and_deterministic() {
        let (_, nat) = model();
        let cond = rand_t((1, 9, 32), 1);
        let pos = rand_t((1, 9, 16), 2);
        let a = nat.forward(&cond, &pos, &[9], None).unwrap();
        assert_eq!(a.dims(), &[1, 9, 40]);
        let b = nat.forward(&cond, &pos, &[9], None).unwrap();
        assert_eq!(a.to_vec3::<f32>().unwrap(), b.to_vec3::<f32>().unwrap());
        let zero = Tensor::zeros((1, 1, 32), DType::F32, &Device::Cpu).unwrap();
        let zpos = Tensor::zeros((1, 1, 16), DType::F32, &Device::Cpu).unwrap();
        assert_eq!(nat.forward(&zero, &zpos, &[1], None).unwrap().dims(), &[1, 1, 40]);
    }

    #[test]
    fn padding_does_not_leak() {
        let (_, nat) = model();
        let cond = rand_t((1, 6, 32), 3);
        let pos = rand_t((1, 6, 16), 4);
        let a = nat.forward(&cond, &pos, &[6], None).unwrap();
        let cond_p = Tensor::cat(&[&cond, &rand_t((1, 3, 32), 5)], 1).unwrap();
        let pos_p = Tensor::cat(&[&pos, &rand_t((1, 3, 16), 6)], 1).unwrap();
        let b = nat.forward(&cond_p, &pos_p, &[6], None).unwrap().narrow(1, 0, 6).unwrap();
        let d = (a - b).unwrap().abs().unwrap().max_all().unwrap().to_scalar::<f32>().unwrap();
        assert!(d < 1e-5);
    }

    #[test]
    fn loss_examples() {
        let a = Array2::from_elem((3, 4), 1.5f32);
        assert_eq!(nat_loss_arrays(&a, &a).unwrap(), 0.0);
        assert_eq!(nat_loss_arrays(&a, &a.mapv(|x| x + 1.0)).unwrap(), 1.0);
        assert_eq!(nat_loss_arrays(&a, &Array2::zeros((2, 4))).unwrap_err().category(), "input");
        let p = rand_t((2, 5, 40), 7);
        let q = (&p + 1.0).unwrap();
        let l = nat_loss(&p, &q, &[5, 3]).unwrap().to_scalar::<f32>().unwrap();
        assert!((l - 1.0).abs() < 1e-6);
    }
}
