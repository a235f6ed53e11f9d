use candle_core::{DType, Device, Tensor};

use super::upsample::frame_count;
use crate::error::{Error, Result};
use crate::nn::sinusoid_table;

/// For each frame time `k + 0.5`, the index of the token whose interval
/// `[start_i, start_i + d_i)` contains it (frames past the end map to the last
/// token) and the within-token progress `(t − start_i) / d_i`.
pub fn frame_progress(durations: &[f64], n_frames: usize) -> Vec<(usize, f64)> {
    let mut starts = Vec::with_capacity(durations.len());
    let mut acc = 0.0;
    for &d in durations {
        starts.push(acc);
        acc += d;
    }
    let last = durations.iter().rposition(|&d| d > 0.0).unwrap_or(0);
    let mut i = 0;
    (0..n_frames)
        .map(|k| {
            let t = k as f64 + 0.5;
            while i < last && (durations[i] <= 0.0 || t >= starts[i] + durations[i]) {
                i += 1;
            }
            let d = durations[i].max(1e-9);
            (i, ((t - starts[i]) / d).clamp(0.0, 1.0))
        })
        .collect()
}

/// `[T × d_pos]` row-major: half the channels encode absolute frame time with
/// standard sinusoids, the other half encode within-token progress as
/// `sin(π j p), cos(π j p)` for `j = 1..`.
pub fn duration_positional_encoding(durations: &[f64], n_frames: usize, d_pos: usize) -> Result<Vec<f32>> {
    if durations.is_empty() || durations.iter().any(|d| !(d.is_finite() && *d >= 0.0)) {
        return Err(Error::input("durations must be non-empty, finite and non-negative"));
    }
    if d_pos % 4 != 0 || d_pos == 0 {
        return Err(Error::config("d_pos must be a positive multiple of 4"));
    }
    let half = d_pos / 2;
    let times: Vec<f64> = (0..n_frames).map(|k| k as f64 + 0.5).collect();
    let abs = sinusoid_table(&times, half);
    let progress = frame_progress(durations, n_frames);
    let mut out = vec![0f32; n_frames * d_pos];
    for k in 0..n_frames {
        out[k * d_pos..k * d_pos + half].copy_from_slice(&abs[k * half..(k + 1) * half]);
        let p = progress[k].1;
        for j in 0..half / 2 {
            let a = std::f64::consts::PI * (j + 1) as f64 * p;
            out[k * d_pos + half + 2 * j] = a.sin() as f32;
            out[k * d_pos + half + 2 * j + 1] = a.cos() as f32;
        }
    }
    Ok(out)
}

/// Batched encodings `[B, T_max, d_pos]`, zero past each item's frame count.
pub fn positional_batch(
    durations: &[Vec<f64>],
    n_frames: &[usize],
    d_pos: usize,
    dtype: DType,
    device: &Device,
) -> Result<Tensor> {
    let t_max = n_frames.iter().copied().max().unwrap_or(1).max(1);
    let mut buf = vec![0f32; durations.len() * t_max * d_pos];
    for (b, (d, &n)) in durations.iter().zip(n_frames).enumerate() {
        let pe = duration_positional_encoding(d, n, d_pos)?;
        buf[b * t_max * d_pos..b * t_max * d_pos + pe.len()].copy_from_slice(&pe);
    }
    Ok(Tensor::from_vec(buf, (durations.len(), t_max, d_pos), device)?.to_dtype(dtype)?)
}

/// Convenience for a single track using its own frame count.
pub fn track_positional_encoding(durations: &[f64], d_pos: usize) -> Result<Vec<f32>> {
    duration_positional_encoding(durations, frame_count(durations), d_pos)
}
