use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex32;
use rustfft::{Fft, FftPlanner};

/// Framing convention shared by analysis and synthesis: frame `k` covers
/// samples `[k·hop, k·hop + win_len)`, weighted by a periodic Hann window and
/// zero-padded to `n_fft`.
#[derive(Clone)]
pub struct Stft {
    win_len: usize,
    hop: usize,
    n_fft: usize,
    window: Vec<f32>,
    forward: Arc<dyn Fft<f32>>,
    inverse: Arc<dyn Fft<f32>>,
}

impl std::fmt::Debug for Stft {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Stft")
            .field("win_len", &self.win_len)
            .field("hop", &self.hop)
            .field("n_fft", &self.n_fft)
            .finish()
    }
}

impl Stft {
    pub fn new(win_len: usize, hop: usize, n_fft: usize) -> Self {
        let window = (0..win_len)
            .map(|n| (0.5 - 0.5 * (2.0 * PI * n as f64 / win_len as f64).cos()) as f32)
            .collect();
        let mut planner = FftPlanner::new();
        Self {
            win_len,
            hop,
            n_fft,
            window,
            forward: planner.plan_fft_forward(n_fft),
            inverse: planner.plan_fft_inverse(n_fft),
        }
    }

    pub fn n_bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    pub fn win_len(&self) -> usize {
        self.win_len
    }

    pub fn hop(&self) -> usize {
        self.hop
    }

    pub fn n_fft(&self) -> usize {
        self.n_fft
    }

    pub fn n_frames(&self, n_samples: usize) -> usize {
        if n_samples < self.win_len {
            0
        } else {
            1 + (n_samples - self.win_len) / self.hop
        }
    }

    pub fn output_len(&self, n_frames: usize) -> usize {
        if n_frames == 0 {
            0
        } else {
            (n_frames - 1) * self.hop + self.win_len
        }
    }

    /// One-sided spectra, `n_frames × n_bins` row-major.
    pub fn analyze(&self, signal: &[f32]) -> Vec<Complex32> {
        let frames = self.n_frames(signal.len());
        let bins = self.n_bins();
        let mut out = Vec::with_capacity(frames * bins);
        let mut buf = vec![Complex32::new(0.0, 0.0); self.n_fft];
        for k in 0..frames {
            let start = k * self.hop;
            for (i, slot) in buf.iter_mut().enumerate() {
                *slot = if i < self.win_len {
                    Complex32::new(signal[start + i] * self.window[i], 0.0)
                } else {
                    Complex32::new(0.0, 0.0)
                };
            }
            self.forward.process(&mut buf);
            out.extend_from_slice(&buf[..bins]);
        }
        out
    }

    /// Windowed overlap-add inverse of one-sided spectra.
    pub fn synthesize(&self, spectra: &[Complex32], n_frames: usize) -> Vec<f32> {
        let bins = self.n_bins();
        let len = self.output_len(n_frames);
        let mut out = vec![0f32; len];
        let mut norm = vec![0f32; len];
        let mut buf = vec![Complex32::new(0.0, 0.0); self.n_fft];
        let scale = 1.0 / self.n_fft as f32;
        for k in 0..n_frames {
            let row = &spectra[k * bins..(k + 1) * bins];
            buf[..bins].copy_from_slice(row);
            for j in bins..self.n_fft {
                buf[j] = row[self.n_fft - j].conj();
            }
            self.inverse.process(&mut buf);
            let start = k * self.hop;
            for i in 0..self.win_len {
                let w = self.window[i];
                out[start + i] += buf[i].re * scale * w;
                norm[start + i] += w * w;
            }
        }
        for (o, n) in out.iter_mut().zip(&norm) {
            if *n > 1e-8 {
                *o /= *n;
            }
        }
        out
    }
}
