use std::cell::RefCell;

use candle_core::{DType, Device, Tensor, D};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::Init;
use crate::error::Result;

#[derive(Debug, Clone)]
pub struct Linear {
    weight: Tensor,
    bias: Option<Tensor>,
}

impl Linear {
    pub fn new(init: &mut Init, in_dim: usize, out_dim: usize, bias: bool) -> Result<Self> {
        let bound = 1.0 / (in_dim as f64).sqrt();
        let weight = init.uniform("weight", &[in_dim, out_dim], bound)?;
        let bias = if bias {
            Some(init.constant("bias", &[out_dim], 0.0)?)
        } else {
            None
        };
        Ok(Self { weight, bias })
    }

    /// Like [`Linear::new`] with every bias entry set to `bias`.
    pub fn with_bias(init: &mut Init, in_dim: usize, out_dim: usize, bias: f64) -> Result<Self> {
        let bound = 1.0 / (in_dim as f64).sqrt();
        let weight = init.uniform("weight", &[in_dim, out_dim], bound)?;
        let bias = Some(init.constant("bias", &[out_dim], bias)?);
        Ok(Self { weight, bias })
    }

    /// Like [`Linear::new`] but starts from all-zero weights.
    pub fn zeros(init: &mut Init, in_dim: usize, out_dim: usize) -> Result<Self> {
        let weight = init.constant("weight", &[in_dim, out_dim], 0.0)?;
        let bias = Some(init.constant("bias", &[out_dim], 0.0)?);
        Ok(Self { weight, bias })
    }

    pub fn weight(&self) -> &Tensor {
        &self.weight
    }

    pub fn bias(&self) -> Option<&Tensor> {
        self.bias.as_ref()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.dims()[1]
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let dims = x.dims().to_vec();
        let in_dim = *dims.last().expect("linear input has at least one dim");
        let rows: usize = dims[..dims.len() - 1].iter().product();
        let flat = x.contiguous()?.reshape((rows, in_dim))?;
        let mut y = flat.matmul(&self.weight)?;
        if let Some(b) = &self.bias {
            y = y.broadcast_add(b)?;
        }
        let mut out_dims = dims;
        *out_dims.last_mut().unwrap() = self.out_dim();
        Ok(y.reshape(out_dims)?)
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    gamma: Tensor,
    beta: Tensor,
    eps: f64,
}

impl LayerNorm {
    pub fn new(init: &mut Init, dim: usize) -> Result<Self> {
        Ok(Self {
            gamma: init.constant("gamma", &[dim], 1.0)?,
            beta: init.constant("beta", &[dim], 0.0)?,
            eps: 1e-5,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mean = x.mean_keepdim(D::Minus1)?;
        let centered = x.broadcast_sub(&mean)?;
        let var = centered.sqr()?.mean_keepdim(D::Minus1)?;
        let normed = centered.broadcast_div(&(var + self.eps)?.sqrt()?)?;
        Ok(normed.broadcast_mul(&self.gamma)?.broadcast_add(&self.beta)?)
    }
}

#[derive(Debug, Clone)]
pub struct FeedForward {
    up: Linear,
    down: Linear,
}

impl FeedForward {
    pub fn new(init: &mut Init, dim: usize, hidden: usize) -> Result<Self> {
        Ok(Self {
            up: Linear::new(&mut init.pp("up"), dim, hidden, true)?,
            down: Linear::new(&mut init.pp("down"), hidden, dim, true)?,
        })
    }

    pub fn forward(&self, x: &Tensor, drop: Option<&Dropout>) -> Result<Tensor> {
        let h = self.up.forward(x)?.gelu()?;
        let h = dropout(&h, drop)?;
        self.down.forward(&h)
    }
}

/// Inverted dropout driven by a seeded generator.
#[derive(Debug)]
pub struct Dropout {
    p: f64,
    rng: RefCell<ChaCha8Rng>,
}

impl Dropout {
    pub fn new(p: f64, rng: ChaCha8Rng) -> Self {
        Self {
            p,
            rng: RefCell::new(rng),
        }
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        if self.p <= 0.0 {
            return Ok(x.clone());
        }
        let n = x.elem_count();
        let keep = 1.0 - self.p;
        let mut rng = self.rng.borrow_mut();
        let mask: Vec<f32> = (0..n)
            .map(|_| if rng.random::<f64>() < keep { (1.0 / keep) as f32 } else { 0.0 })
            .collect();
        let mask = Tensor::from_vec(mask, x.shape(), x.device())?.to_dtype(x.dtype())?;
        Ok((x * mask)?)
    }
}

pub fn dropout(x: &Tensor, drop: Option<&Dropout>) -> Result<Tensor> {
    match drop {
        Some(d) => d.apply(x),
        None => Ok(x.clone()),
    }
}

/// `softplus(x) = max(x, 0) + ln(1 + exp(-|x|))`, stable for large |x|.
pub fn softplus(x: &Tensor) -> Result<Tensor> {
    let tail = (x.abs()?.neg()?.exp()? + 1.0)?.log()?;
    Ok((x.relu()? + tail)?)
}

/// Transformer-style sinusoids, row-major `[positions.len() × dim]`.
pub fn sinusoid_table(positions: &[f64], dim: usize) -> Vec<f32> {
    let half = dim / 2;
    let mut out = vec![0f32; positions.len() * dim];
    for (r, &p) in positions.iter().enumerate() {
        for i in 0..half {
            let freq = 1.0 / 10000f64.powf(2.0 * i as f64 / dim as f64);
            out[r * dim + 2 * i] = (p * freq).sin() as f32;
            out[r * dim + 2 * i + 1] = (p * freq).cos() as f32;
        }
    }
    out
}

/// `[B, L, 1]` tensor holding 1 at valid positions and 0 at padding.
pub fn length_mask(lengths: &[usize], max_len: usize, dtype: DType, device: &Device) -> Result<Tensor> {
    let mut v = vec![0f32; lengths.len() * max_len];
    for (b, &len) in lengths.iter().enumerate() {
        for t in 0..len.min(max_len) {
            v[b * max_len + t] = 1.0;
        }
    }
    Ok(Tensor::from_vec(v, (lengths.len(), max_len, 1), device)?.to_dtype(dtype)?)
}
