use candle_core::{DType, Device, Tensor};
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::flow::{flow_interpolate_batch, target_vector_field};
use super::mask::{make_mlm_mask, MaskPolicy, MaskSpec};
use super::model::{DiffusionSynthesizer, Training};
use super::sample::{euler_integrate, standard_normal};
use super::{FlowConfig, VectorField};
use crate::batch::{scalar_f64, stack_padded};
use crate::codec::LatentSequence;
use crate::curriculum::{clip_grad_norm, AdamW, AdamWConfig};
use crate::error::{Error, Result};
use crate::nn::{length_mask, Dropout, ParamStore};
use crate::seed::SeedStream;

/// `[B, T, 1]` tensor with 1 at masked positions.
pub fn mask_tensor(masks: &[Vec<bool>], t: usize, dtype: DType) -> Result<Tensor> {
    let mut v = vec![0f32; masks.len() * t];
    for (b, m) in masks.iter().enumerate() {
        for (i, &x) in m.iter().enumerate() {
            if x {
                v[b * t + i] = 1.0;
            }
        }
    }
    Ok(Tensor::from_vec(v, (masks.len(), t, 1), &Device::Cpu)?.to_dtype(dtype)?)
}

/// Flow-matching loss for fixed noise and times: mean over masked positions
/// and channels of `(v − u)²`.
#[allow(clippy::too_many_arguments)]
pub fn cfm_loss_with(
    model: &dyn VectorField,
    x1: &Tensor,
    x0: &Tensor,
    t: &[f64],
    context: &Tensor,
    cond: &Tensor,
    mask: &Tensor,
    lengths: &[usize],
    sigma_min: f64,
) -> Result<Tensor> {
    let (_, _, d) = x1.dims3()?;
    let n_masked = scalar_f64(&mask.sum_all()?)?;
    if n_masked < 0.5 {
        return Err(Error::input("mask selects no positions"));
    }
    let x_t = flow_interpolate_batch(x0, x1, t, sigma_min)?;
    let u = target_vector_field(x0, x1, sigma_min)?;
    let v = model.velocity(&x_t, t, context, cond, lengths)?;
    let sq = (v - u)?.sqr()?.broadcast_mul(mask)?.sum_all()?;
    Ok((sq / (n_masked * d as f64))?)
}

/// Samples `t ~ U(0,1)` and `x0 ~ N(0, I)` per item, drops the conditioning to
/// the null embedding with probability `p_uncond`, and evaluates the loss.
#[allow(clippy::too_many_arguments)]
pub fn cfm_loss_batch(
    model: &dyn VectorField,
    x1: &Tensor,
    context: &Tensor,
    cond: Option<&Tensor>,
    masks: &[Vec<bool>],
    lengths: &[usize],
    config: &FlowConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Tensor> {
    let (b, l, _) = x1.dims3()?;
    if masks.len() != b {
        return Err(Error::input("one mask per batch item required"));
    }
    let t: Vec<f64> = (0..b).map(|_| rng.random::<f64>()).collect();
    let x0 = standard_normal(x1.dims3()?, x1.dtype(), rng)?;
    let null = model.null_condition(b, l)?;
    let cond_eff = match cond {
        None => null,
        Some(c) => {
            let keep: Vec<f32> = (0..b)
                .map(|_| if rng.random::<f64>() < config.p_uncond { 0.0 } else { 1.0 })
                .collect();
            let keep = Tensor::from_vec(keep, (b, 1, 1), &Device::Cpu)?.to_dtype(x1.dtype())?;
            (c.broadcast_mul(&keep)? + null.broadcast_mul(&(1.0 - &keep)?)?)?
        }
    };
    let mask = mask_tensor(masks, l, x1.dtype())?;
    cfm_loss_with(model, x1, &x0, &t, context, &cond_eff, &mask, lengths, config.sigma_min)
}

/// Single-sequence form: `cond` is latent-rate conditioning `[T, d_lat]`.
pub fn cfm_loss(
    model: &dyn VectorField,
    x1: &LatentSequence,
    cond: Option<&Tensor>,
    spec: &MaskSpec,
    config: &FlowConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Tensor> {
    let (dtype, len) = (cond.map(|c| c.dtype()).unwrap_or(DType::F32), x1.len());
    let (x, _) = stack_padded(&[x1.latents.view()], dtype, &Device::Cpu)?;
    let (ctx, _) = stack_padded(&[spec.context.latents.view()], dtype, &Device::Cpu)?;
    let cond = cond.map(|c| c.unsqueeze(0)).transpose()?;
    cfm_loss_batch(model, &x, &ctx, cond.as_ref(), std::slice::from_ref(&spec.mask), &[len], config, rng)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FlowTrainConfig {
    pub batch_size: usize,
    pub optimizer: AdamWConfig,
    pub grad_clip: f64,
    pub mask: MaskPolicy,
    pub flow: FlowConfig,
    /// With conditioning present, fraction of items that mask everything
    /// (the translation setting) instead of MLM spans.
    pub full_mask_prob: f64,
    pub dropout: f64,
}

impl Default for FlowTrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            optimizer: AdamWConfig::default(),
            grad_clip: 1.0,
            mask: MaskPolicy::default(),
            flow: FlowConfig::default(),
            full_mask_prob: 0.8,
            dropout: 0.0,
        }
    }
}

/// One training item: raw latents and optional mel-rate conditioning
/// (upsampled frames, duration encoding).
#[derive(Debug, Clone)]
pub struct FlowExample {
    pub latents: Array2<f32>,
    pub cond: Option<(Array2<f32>, Array2<f32>)>,
}

struct PreparedBatch {
    x1: Tensor,
    context: Tensor,
    cond: Option<Tensor>,
    masks: Vec<Vec<bool>>,
    lengths: Vec<usize>,
}

fn prepare(
    model: &DiffusionSynthesizer,
    items: &[&FlowExample],
    cfg: &FlowTrainConfig,
    dtype: DType,
    rng: &mut ChaCha8Rng,
) -> Result<PreparedBatch> {
    let views: Vec<_> = items.iter().map(|e| e.latents.view()).collect();
    let (raw, lengths) = stack_padded(&views, dtype, &Device::Cpu)?;
    let l = raw.dims()[1];
    let valid = length_mask(&lengths, l, dtype, &Device::Cpu)?;
    let x1 = model.latent_norm().normalize(&raw)?.broadcast_mul(&valid)?;
    let with_cond = items.iter().filter(|e| e.cond.is_some()).count();
    if with_cond != 0 && with_cond != items.len() {
        return Err(Error::input("batch mixes conditioned and unconditioned items"));
    }
    let mut masks = Vec::with_capacity(items.len());
    for &n in &lengths {
        let full = with_cond > 0 && rng.random::<f64>() < cfg.full_mask_prob;
        masks.push(if full { vec![true; n] } else { make_mlm_mask(n, rng, &cfg.mask)? });
    }
    let m = mask_tensor(&masks, l, dtype)?;
    let context = x1.broadcast_mul(&(1.0 - &m)?)?;
    let cond = if with_cond > 0 {
        let frames: Vec<_> = items.iter().map(|e| e.cond.as_ref().unwrap().0.view()).collect();
        let pes: Vec<_> = items.iter().map(|e| e.cond.as_ref().unwrap().1.view()).collect();
        let (f, frame_lengths) = stack_padded(&frames, dtype, &Device::Cpu)?;
        let (p, _) = stack_padded(&pes, dtype, &Device::Cpu)?;
        let c = model.projector().forward(&f, &p, &frame_lengths, l)?;
        Some(c.broadcast_mul(&valid)?)
    } else {
        None
    };
    Ok(PreparedBatch {
        x1,
        context,
        cond,
        masks,
        lengths,
    })
}

/// One pass over `examples` in a seeded order. Returns the mean batch loss.
#[allow(clippy::too_many_arguments)]
pub fn train_flow_epoch(
    model: &DiffusionSynthesizer,
    store: &ParamStore,
    opt: &mut AdamW,
    names: &[String],
    examples: &[FlowExample],
    cfg: &FlowTrainConfig,
    lr: f64,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::input("diffusion training set is empty"));
    }
    if cfg.batch_size == 0 {
        return Err(Error::config("batch_size must be ≥ 1"));
    }
    let dtype = store.dtype();
    let mut order: Vec<usize> = (0..examples.len()).collect();
    order.shuffle(rng);
    let drop = Dropout::new(cfg.dropout, ChaCha8Rng::seed_from_u64(rng.random()));
    let hyper = AdamWConfig { lr, ..cfg.optimizer };
    let (mut total, mut n) = (0.0, 0usize);
    for chunk in order.chunks(cfg.batch_size) {
        let items: Vec<&FlowExample> = chunk.iter().map(|&i| &examples[i]).collect();
        let b = prepare(model, &items, cfg, dtype, rng)?;
        let field = Training {
            model,
            drop: (cfg.dropout > 0.0).then_some(&drop),
        };
        let loss = cfm_loss_batch(&field, &b.x1, &b.context, b.cond.as_ref(), &b.masks, &b.lengths, &cfg.flow, rng)?;
        let v = scalar_f64(&loss)?;
        if !v.is_finite() {
            return Err(Error::Training(format!("diffusion loss became {v} after {n} batches")));
        }
        let mut grads = loss.backward()?;
        clip_grad_norm(store, &mut grads, names, cfg.grad_clip)?;
        opt.step(store, &grads, names, &hyper)?;
        total += v;
        n += 1;
    }
    Ok(total / n as f64)
}

/// Unconditional MLM pretraining on raw latents. Returns per-epoch losses.
pub fn pretrain_diffusion(
    model: &DiffusionSynthesizer,
    store: &ParamStore,
    latents: &[Array2<f32>],
    epochs: usize,
    cfg: &FlowTrainConfig,
    seeds: &SeedStream,
) -> Result<Vec<f64>> {
    if latents.is_empty() {
        return Err(Error::input("diffusion training set is empty"));
    }
    let names: Vec<String> = store
        .with_prefix("diffusion")
        .filter(|p| p.kind == crate::nn::ParamKind::Trainable)
        .map(|p| p.name.clone())
        .collect();
    let examples: Vec<FlowExample> = latents
        .iter()
        .map(|l| FlowExample {
            latents: l.clone(),
            cond: None,
        })
        .collect();
    let mut opt = AdamW::new();
    (0..epochs)
        .map(|e| {
            let mut rng = seeds.indexed("pretrain-epoch", e as u64).rng("flow");
            train_flow_epoch(model, store, &mut opt, &names, &examples, cfg, cfg.optimizer.lr, &mut rng)
        })
        .collect()
}

/// Masked-region reconstruction error of unconditional infilling against the
/// error of predicting the training-mean latent, both on raw latents.
pub fn infill_mse(
    model: &DiffusionSynthesizer,
    latents: &[Array2<f32>],
    policy: &MaskPolicy,
    steps: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(f64, f64)> {
    if latents.is_empty() {
        return Err(Error::input("no latents to infill"));
    }
    let dt = DType::F32;
    let (mut err, mut base, mut n) = (0.0, 0.0, 0.0);
    for chunk in latents.chunks(16) {
        let views: Vec<_> = chunk.iter().map(|l| l.view()).collect();
        let (raw, lengths) = stack_padded(&views, dt, &Device::Cpu)?;
        let (b, l, d) = raw.dims3()?;
        let valid = length_mask(&lengths, l, dt, &Device::Cpu)?;
        let x1 = model.latent_norm().normalize(&raw)?.broadcast_mul(&valid)?;
        let masks = lengths
            .iter()
            .map(|&n| make_mlm_mask(n, rng, policy))
            .collect::<Result<Vec<_>>>()?;
        let m = mask_tensor(&masks, l, dt)?;
        let ctx = x1.broadcast_mul(&(1.0 - &m)?)?;
        let x0 = standard_normal((b, l, d), dt, rng)?;
        let sample = euler_integrate(model, &x0, &ctx, None, &lengths, steps, 1.0)?;
        let pred = model.latent_norm().denormalize(&sample)?;
        let mean = model.latent_norm().denormalize(&Tensor::zeros((1, 1, d), dt, &Device::Cpu)?)?;
        n += scalar_f64(&m.sum_all()?)? * d as f64;
        err += scalar_f64(&(pred - &raw)?.sqr()?.broadcast_mul(&m)?.sum_all()?)?;
        base += scalar_f64(&raw.broadcast_sub(&mean)?.sqr()?.broadcast_mul(&m)?.sum_all()?)?;
    }
    let (err, base) = (err / n, base / n);
    Ok((err, base))
}

/// Eval-mode flow-matching loss over `examples` (no dropout, no conditioning
/// dropout), weighted by batch size.
pub fn evaluate_flow(
    model: &DiffusionSynthesizer,
    examples: &[FlowExample],
    cfg: &FlowTrainConfig,
    dtype: DType,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::input("nothing to evaluate"));
    }
    let flow = FlowConfig { p_uncond: 0.0, ..cfg.flow };
    let (mut total, mut n) = (0.0, 0usize);
    for chunk in examples.chunks(cfg.batch_size.max(1)) {
        let items: Vec<&FlowExample> = chunk.iter().collect();
        let b = prepare(model, &items, cfg, dtype, rng)?;
        let loss = cfm_loss_batch(model, &b.x1, &b.context, b.cond.as_ref(), &b.masks, &b.lengths, &flow, rng)?;
        total += scalar_f64(&loss)? * chunk.len() as f64;
        n += chunk.len();
    }
    Ok(total / n as f64)
}
