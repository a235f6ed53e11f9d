use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpecAugmentConfig {
    pub n_time_masks: usize,
    pub max_time_width: usize,
    pub n_freq_masks: usize,
    pub max_freq_width: usize,
    /// `None` masks with the utterance mean.
    pub mask_value: Option<f32>,
}

impl Default for SpecAugmentConfig {
    fn default() -> Self {
        Self {
            n_time_masks: 2,
            max_time_width: 4,
            n_freq_masks: 2,
            max_freq_width: 4,
            mask_value: None,
        }
    }
}

impl SpecAugmentConfig {
    pub fn validate(&self) -> Result<()> {
        if let Some(v) = self.mask_value {
            if !v.is_finite() {
                return Err(Error::config("mask_value must be finite"));
            }
        }
        Ok(())
    }
}

/// Time and frequency masking on a `[T × n_mels]` log-mel matrix.
pub fn spec_augment(mel: &Array2<f32>, rng: &mut ChaCha8Rng, config: &SpecAugmentConfig) -> Array2<f32> {
    let mut out = mel.clone();
    let (t, f) = mel.dim();
    if t == 0 || f == 0 {
        return out;
    }
    let value = config.mask_value.unwrap_or_else(|| mel.mean().unwrap_or(0.0));
    for _ in 0..config.n_time_masks {
        let w = rng.random_range(0..=config.max_time_width.min(t));
        let start = rng.random_range(0..=t - w);
        out.slice_mut(ndarray::s![start..start + w, ..]).fill(value);
    }
    for _ in 0..config.n_freq_masks {
        let w = rng.random_range(0..=config.max_freq_width.min(f));
        let start = rng.random_range(0..=f - w);
        out.slice_mut(ndarray::s![.., start..start + w]).fill(value);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn mel(t: usize, f: usize) -> Array2<f32> {
        Array2::from_shape_fn((t, f), |(i, j)| (i * 31 + j * 7) as f32 * 0.01 + 1.0)
    }

    #[test]
    fn zero_masks_is_identity() {
        let cfg = SpecAugmentConfig { n_time_masks: 0, n_freq_masks: 0, ..Default::default() };
        let x = mel(20, 8);
        assert_eq!(spec_augment(&x, &mut ChaCha8Rng::seed_from_u64(0), &cfg), x);
    }

    #[test]
    fn one_time_mask_is_a_short_run_of_columns() {
        let cfg = SpecAugmentConfig {
            n_time_masks: 1,
            max_time_width: 3,
            n_freq_masks: 0,
            mask_value: Some(-50.0),
            ..Default::default()
        };
        let x = mel(30, 8);
        for seed in 0..200 {
            let y = spec_augment(&x, &mut ChaCha8Rng::seed_from_u64(seed), &cfg);
            let masked: Vec<usize> = (0..30).filter(|&t| y.row(t).iter().all(|&v| v == -50.0)).collect();
            assert!(masked.len() <= 3);
            if let (Some(a), Some(b)) = (masked.first(), masked.last()) {
                assert_eq!(b - a + 1, masked.len());
            }
            for t in (0..30).filter(|t| !masked.contains(t)) {
                assert_eq!(y.row(t), x.row(t));
            }
        }
    }

    #[test]
    fn masked_cell_count_bound() {
        let cfg = SpecAugmentConfig { mask_value: Some(-50.0), ..Default::default() };
        let (t, f) = (25, 10);
        let x = mel(t, f);
        let bound = cfg.n_time_masks * cfg.max_time_width * f + cfg.n_freq_masks * cfg.max_freq_width * t;
        for seed in 0..200 {
            let y = spec_augment(&x, &mut ChaCha8Rng::seed_from_u64(seed), &cfg);
            let changed = y.iter().zip(&x).filter(|(a, b)| a != b).count();
            assert!(changed <= bound);
        }
    }
}
