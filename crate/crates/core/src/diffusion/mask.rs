use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::codec::LatentSequence;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MaskPolicy {
    pub mask_fraction: f64,
    pub min_span: usize,
    pub max_span: usize,
}

impl Default for MaskPolicy {
    fn default() -> Self {
        Self {
            mask_fraction: 0.7,
            min_span: 2,
            max_span: 4,
        }
    }
}

impl MaskPolicy {
    pub fn validate(&self) -> Result<()> {
        if !(self.mask_fraction > 0.0 && self.mask_fraction <= 1.0) {
            return Err(Error::config("mask_fraction must lie in (0, 1]"));
        }
        if self.min_span == 0 || self.min_span > self.max_span {
            return Err(Error::config("span bounds must satisfy 1 ≤ min_span ≤ max_span"));
        }
        Ok(())
    }
}

/// Number of positions a policy masks in a sequence of length `t`.
pub fn masked_count(t: usize, fraction: f64) -> usize {
    ((fraction * t as f64 - 1e-9).ceil() as usize).clamp(1, t)
}

/// Contiguous masked spans covering exactly `ceil(fraction·T)` positions.
/// Span lengths are drawn from `[min_span, max_span]`; only the final span
/// may be shorter. Spans are kept apart by at least one visible position
/// whenever the visible budget allows it.
pub fn make_mlm_mask(t_lat: usize, rng: &mut ChaCha8Rng, policy: &MaskPolicy) -> Result<Vec<bool>> {
    policy.validate()?;
    if t_lat == 0 {
        return Err(Error::input("cannot mask an empty sequence"));
    }
    let target = masked_count(t_lat, policy.mask_fraction);
    if target == t_lat {
        return Ok(vec![true; t_lat]);
    }
    let mut spans = Vec::new();
    let mut left = target;
    while left > 0 {
        let len = rng.random_range(policy.min_span..=policy.max_span).min(left);
        spans.push(len);
        left -= len;
    }
    let visible = t_lat - target;
    let n = spans.len();
    let inner_min = if visible + 1 >= n { 1 } else { 0 };
    let free = visible - inner_min * (n - 1);
    // random composition of `free` into n + 1 gaps
    let mut cuts: Vec<usize> = (0..n).map(|_| rng.random_range(0..=free)).collect();
    cuts.sort_unstable();
    let mut gaps = Vec::with_capacity(n + 1);
    let mut prev = 0;
    for &c in &cuts {
        gaps.push(c - prev);
        prev = c;
    }
    gaps.push(free - prev);
    for g in gaps.iter_mut().take(n).skip(1) {
        *g += inner_min;
    }
    let mut mask = Vec::with_capacity(t_lat);
    for (i, &len) in spans.iter().enumerate() {
        mask.extend(std::iter::repeat_n(false, gaps[i]));
        mask.extend(std::iter::repeat_n(true, len));
    }
    mask.extend(std::iter::repeat_n(false, gaps[n]));
    debug_assert_eq!(mask.len(), t_lat);
    Ok(mask)
}

/// Masked target region plus the visible context (zeros where masked).
#[derive(Debug, Clone, PartialEq)]
pub struct MaskSpec {
    pub mask: Vec<bool>,
    pub context: LatentSequence,
}

impl MaskSpec {
    pub fn new(x1: &LatentSequence, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != x1.len() {
            return Err(Error::input("mask length differs from latent length"));
        }
        if !mask.iter().any(|&m| m) {
            return Err(Error::input("mask selects no positions"));
        }
        let mut ctx: Array2<f32> = x1.latents.clone();
        for (r, &m) in mask.iter().enumerate() {
            if m {
                ctx.row_mut(r).fill(0.0);
            }
        }
        Ok(Self {
            mask,
            context: LatentSequence::new(ctx, x1.downsample)?,
        })
    }

    /// Everything masked, zero context: the translation setting.
    pub fn full(t_lat: usize, d_lat: usize, downsample: usize) -> Result<Self> {
        if t_lat == 0 {
            return Err(Error::input("cannot mask an empty sequence"));
        }
        Ok(Self {
            mask: vec![true; t_lat],
            context: LatentSequence::new(Array2::zeros((t_lat, d_lat)), downsample)?,
        })
    }
}
