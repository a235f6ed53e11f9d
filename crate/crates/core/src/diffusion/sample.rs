use candle_core::{Device, Tensor};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{FlowConfig, VectorField};
use crate::error::{Error, Result};

/// `v = v_u + s·(v_c − v_u)`, with `s = 0` and `s = 1` returning `v_u` and
/// `v_c` exactly. Without conditioning only `v_u` is evaluated.
pub fn cfg_vector_field(
    model: &dyn VectorField,
    x_t: &Tensor,
    t: f64,
    context: &Tensor,
    cond: Option<&Tensor>,
    scale: f64,
    lengths: &[usize],
) -> Result<Tensor> {
    let (b, l, _) = x_t.dims3()?;
    let ts = vec![t; b];
    let uncond = || -> Result<Tensor> {
        let null = model.null_condition(b, l)?;
        model.velocity(x_t, &ts, context, &null, lengths)
    };
    let Some(cond) = cond else { return uncond() };
    if scale == 1.0 {
        return model.velocity(x_t, &ts, context, cond, lengths);
    }
    if scale == 0.0 {
        return uncond();
    }
    let vu = uncond()?;
    let vc = model.velocity(x_t, &ts, context, cond, lengths)?;
    Ok((&vu + ((vc - &vu)? * scale)?)?)
}

/// Forward Euler from `x0` over `steps` uniform steps, `t_n = n / steps`.
pub fn euler_integrate(
    model: &dyn VectorField,
    x0: &Tensor,
    context: &Tensor,
    cond: Option<&Tensor>,
    lengths: &[usize],
    steps: usize,
    scale: f64,
) -> Result<Tensor> {
    if steps < 1 {
        return Err(Error::config("steps must be ≥ 1"));
    }
    let dt = 1.0 / steps as f64;
    let mut x = x0.clone();
    for n in 0..steps {
        let v = cfg_vector_field(model, &x, n as f64 * dt, context, cond, scale, lengths)?;
        x = (x + (v * dt)?)?.detach();
    }
    Ok(x)
}

pub fn standard_normal(dims: (usize, usize, usize), dtype: candle_core::DType, rng: &mut ChaCha8Rng) -> Result<Tensor> {
    let n = dims.0 * dims.1 * dims.2;
    let v: Vec<f32> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
    Ok(Tensor::from_vec(v, dims, &Device::Cpu)?.to_dtype(dtype)?)
}

/// Draws `x0 ~ N(0, I)` and integrates to a latent sample `[B, T, d]`.
pub fn euler_sample(
    model: &dyn VectorField,
    context: &Tensor,
    cond: Option<&Tensor>,
    lengths: &[usize],
    config: &FlowConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Tensor> {
    if config.steps < 1 {
        return Err(Error::config("steps must be ≥ 1"));
    }
    let x0 = standard_normal(context.dims3()?, context.dtype(), rng)?;
    euler_integrate(model, &x0, context, cond, lengths, config.steps, config.guidance_scale)
}
