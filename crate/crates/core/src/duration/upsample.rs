use candle_core::{Tensor, D};

use crate::error::{Error, Result};

/// Variances below this are raised to it before upsampling (frames²).
pub const VARIANCE_FLOOR: f64 = 1e-2;

const MASKED: f64 = -1e9;

#[derive(Debug, Clone, PartialEq)]
pub struct DurationTrack {
    pub durations: Vec<f64>,
    pub variances: Vec<f64>,
}

impl DurationTrack {
    pub fn new(durations: Vec<f64>, variances: Vec<f64>) -> Result<Self> {
        let t = Self { durations, variances };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if self.durations.is_empty() {
            return Err(Error::input("duration track is empty"));
        }
        if self.durations.len() != self.variances.len() {
            return Err(Error::input("durations and variances differ in length"));
        }
        if self.durations.iter().any(|d| !(d.is_finite() && *d >= 0.0)) {
            return Err(Error::input("durations must be finite and non-negative"));
        }
        if self.variances.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::input("variances must be finite and positive"));
        }
        if self.durations.iter().all(|&d| d == 0.0) {
            return Err(Error::input("all durations are zero"));
        }
        Ok(())
    }
}

/// Output frame count: `round(Σ d)` with halves rounded up, at least 1.
pub fn frame_count(durations: &[f64]) -> usize {
    let s: f64 = durations.iter().sum();
    ((s + 0.5).floor() as usize).max(1)
}

/// `c_i = Σ_{j≤i} d_j − d_i / 2`.
pub fn token_centers(durations: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    durations
        .iter()
        .map(|&d| {
            acc += d;
            acc - d / 2.0
        })
        .collect()
}

pub fn frame_times(n_frames: usize) -> Vec<f64> {
    (0..n_frames).map(|k| k as f64 + 0.5).collect()
}

/// Gaussian attention weights `[B, T_max, L_max]`.
///
/// `durations[b]` holds the valid tokens of item `b`; `variances` is
/// `[B, L_max]` and may carry gradients. Rows past `n_frames[b]` are filled
/// but meaningless.
pub fn upsample_weights(durations: &[Vec<f64>], variances: &Tensor, n_frames: &[usize]) -> Result<Tensor> {
    let (b, l_max) = variances.dims2()?;
    if durations.len() != b || n_frames.len() != b {
        return Err(Error::input("upsampling batch sizes differ"));
    }
    let t_max = n_frames.iter().copied().max().unwrap_or(1).max(1);
    let mut dist = vec![0f64; b * t_max * l_max];
    let mut bias = vec![0f64; b * l_max];
    for (bi, d) in durations.iter().enumerate() {
        if d.is_empty() || d.len() > l_max {
            return Err(Error::input("each item needs 1..=L_max durations"));
        }
        if d.iter().all(|&x| x <= 0.0) {
            return Err(Error::input("all durations are zero"));
        }
        let centers = token_centers(d);
        for k in 0..t_max {
            let t = k as f64 + 0.5;
            for (i, c) in centers.iter().enumerate() {
                dist[(bi * t_max + k) * l_max + i] = (t - c) * (t - c);
            }
        }
        for v in &mut bias[bi * l_max + d.len()..(bi + 1) * l_max] {
            *v = MASKED;
        }
    }
    let (dtype, dev) = (variances.dtype(), variances.device());
    let dist = Tensor::from_vec(dist, (b, t_max, l_max), dev)?.to_dtype(dtype)?;
    let bias = Tensor::from_vec(bias, (b, 1, l_max), dev)?.to_dtype(dtype)?;
    // relu(v − floor) + floor keeps gradients above the floor
    let var = ((variances - VARIANCE_FLOOR)?.relu()? + VARIANCE_FLOOR)?;
    let logits = dist
        .broadcast_div(&(var * 2.0)?.unsqueeze(1)?)?
        .neg()?
        .broadcast_add(&bias)?;
    let max = logits.max_keepdim(D::Minus1)?.detach();
    let e = logits.broadcast_sub(&max)?.exp()?;
    Ok(e.broadcast_div(&e.sum_keepdim(D::Minus1)?)?)
}

/// Batched upsampling: `h` `[B, L_max, d]` → `[B, T_max, d]`.
pub fn upsample_batch(h: &Tensor, durations: &[Vec<f64>], variances: &Tensor, n_frames: &[usize]) -> Result<Tensor> {
    let w = upsample_weights(durations, variances, n_frames)?;
    Ok(w.matmul(&h.contiguous()?)?)
}

/// Upsampled frames of one utterance together with their alignment metadata.
#[derive(Debug, Clone)]
pub struct ConditioningTrack {
    /// `[T, d]`
    pub frames: Tensor,
    /// `[T, L]`
    pub weights: Tensor,
    pub frame_times: Vec<f64>,
    pub token_centers: Vec<f64>,
    pub durations: Vec<f64>,
}

impl ConditioningTrack {
    pub fn n_frames(&self) -> usize {
        self.frame_times.len()
    }
}

/// Single-utterance upsampling of `h` `[L, d]` with the track's durations and
/// variances (no gradient through either).
pub fn gaussian_upsample(h: &Tensor, track: &DurationTrack) -> Result<ConditioningTrack> {
    track.validate()?;
    let var = Tensor::from_vec(track.variances.clone(), (1, track.variances.len()), h.device())?.to_dtype(h.dtype())?;
    upsample_one(h, &track.durations, &var)
}

/// Upsampling with ground-truth durations and predicted variances `[L]`;
/// gradients flow through the variances only.
pub fn teacher_forced_upsample(h: &Tensor, truth: &[u32], variances: &Tensor) -> Result<ConditioningTrack> {
    let d: Vec<f64> = truth.iter().map(|&x| x as f64).collect();
    upsample_one(h, &d, &variances.reshape((1, variances.elem_count()))?)
}

fn upsample_one(h: &Tensor, durations: &[f64], variances: &Tensor) -> Result<ConditioningTrack> {
    let (l, _) = h.dims2()?;
    if l == 0 || durations.len() != l || variances.dims() != [1, l] {
        return Err(Error::input("upsampling inputs disagree on token count"));
    }
    let n = frame_count(durations);
    let w = upsample_weights(&[durations.to_vec()], variances, &[n])?.squeeze(0)?;
    let frames = w.matmul(h)?;
    Ok(ConditioningTrack {
        frames,
        weights: w,
        frame_times: frame_times(n),
        token_centers: token_centers(durations),
        durations: durations.to_vec(),
    })
}
