use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::Stft;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MelConfig {
    pub sample_rate: u32,
    pub win_len: usize,
    pub hop: usize,
    pub n_fft: usize,
    pub n_mels: usize,
    pub fmin: f64,
    pub fmax: f64,
    pub log_floor: f64,
}

impl Default for MelConfig {
    fn default() -> Self {
        Self {
            sample_rate: 8000,
            win_len: 256,
            hop: 64,
            n_fft: 512,
            n_mels: 40,
            fmin: 0.0,
            fmax: 4000.0,
            log_floor: 1e-10,
        }
    }
}

impl MelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_mels == 0 {
            return Err(Error::config("n_mels must be at least 1"));
        }
        if self.hop == 0 || self.win_len == 0 || self.n_fft < self.win_len {
            return Err(Error::config("need hop ≥ 1 and n_fft ≥ win_len ≥ 1"));
        }
        if !(self.fmin >= 0.0 && self.fmin < self.fmax && self.fmax <= self.sample_rate as f64 / 2.0) {
            return Err(Error::config(format!(
                "need 0 ≤ fmin < fmax ≤ sample_rate/2, got fmin={} fmax={}",
                self.fmin, self.fmax
            )));
        }
        if self.log_floor <= 0.0 {
            return Err(Error::config("log_floor must be positive"));
        }
        Ok(())
    }

    /// Duration in seconds of `n_samples` audio samples.
    pub fn seconds(&self, n_samples: usize) -> f64 {
        n_samples as f64 / self.sample_rate as f64
    }
}

/// Log-mel energies, `frames` is `[T_frames × n_mels]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram {
    pub frames: Array2<f32>,
    pub hop: usize,
    pub sample_rate: u32,
}

impl MelSpectrogram {
    pub fn n_frames(&self) -> usize {
        self.frames.nrows()
    }

    pub fn n_mels(&self) -> usize {
        self.frames.ncols()
    }
}

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Reusable analysis state: window, FFT plan and filterbank.
#[derive(Debug, Clone)]
pub struct MelFrontend {
    config: MelConfig,
    stft: Stft,
    /// `[n_mels × n_bins]`, every row sums to one.
    filterbank: Array2<f32>,
    centers_hz: Vec<f64>,
}

impl MelFrontend {
    pub fn new(config: &MelConfig) -> Result<Self> {
        config.validate()?;
        let stft = Stft::new(config.win_len, config.hop, config.n_fft);
        let n_bins = stft.n_bins();
        let mel_lo = hz_to_mel(config.fmin);
        let mel_hi = hz_to_mel(config.fmax);
        let points: Vec<f64> = (0..config.n_mels + 2)
            .map(|i| mel_to_hz(mel_lo + (mel_hi - mel_lo) * i as f64 / (config.n_mels + 1) as f64))
            .collect();
        let bin_hz = config.sample_rate as f64 / config.n_fft as f64;
        let mut fb = Array2::<f32>::zeros((config.n_mels, n_bins));
        for m in 0..config.n_mels {
            let (lo, center, hi) = (points[m], points[m + 1], points[m + 2]);
            let mut area = 0.0;
            for j in 0..n_bins {
                let f = j as f64 * bin_hz;
                let w = if f > lo && f <= center {
                    (f - lo) / (center - lo)
                } else if f > center && f < hi {
                    (hi - f) / (hi - center)
                } else {
                    0.0
                };
                fb[[m, j]] = w as f32;
                area += w;
            }
            if area <= 0.0 {
                return Err(Error::config(format!(
                    "mel band {m} covers no FFT bin; increase n_fft or reduce n_mels"
                )));
            }
            for j in 0..n_bins {
                fb[[m, j]] = (fb[[m, j]] as f64 / area) as f32;
            }
        }
        Ok(Self {
            config: config.clone(),
            stft,
            filterbank: fb,
            centers_hz: points[1..config.n_mels + 1].to_vec(),
        })
    }

    pub fn config(&self) -> &MelConfig {
        &self.config
    }

    pub fn stft(&self) -> &Stft {
        &self.stft
    }

    pub fn filterbank(&self) -> &Array2<f32> {
        &self.filterbank
    }

    pub fn band_centers_hz(&self) -> &[f64] {
        &self.centers_hz
    }

    /// Power spectrogram `[T × n_bins]`.
    pub fn power(&self, waveform: &[f32]) -> Result<Array2<f32>> {
        if waveform.len() < self.config.win_len {
            return Err(Error::input(format!(
                "waveform of {} samples is shorter than one {}-sample window",
                waveform.len(),
                self.config.win_len
            )));
        }
        let spectra = self.stft.analyze(waveform);
        let bins = self.stft.n_bins();
        let frames = spectra.len() / bins;
        let power = spectra.iter().map(|c| c.norm_sqr()).collect();
        Ok(Array2::from_shape_vec((frames, bins), power).expect("stft shape"))
    }

    /// Pre-log mel energies `[T × n_mels]`.
    pub fn mel_energy(&self, waveform: &[f32]) -> Result<Array2<f32>> {
        let power = self.power(waveform)?;
        Ok(power.dot(&self.filterbank.t()))
    }

    pub fn compute(&self, waveform: &[f32]) -> Result<MelSpectrogram> {
        let energy = self.mel_energy(waveform)?;
        let floor = self.config.log_floor;
        let frames = energy.mapv(|e| (e as f64).max(floor).ln() as f32);
        Ok(MelSpectrogram {
            frames,
            hop: self.config.hop,
            sample_rate: self.config.sample_rate,
        })
    }
}

pub fn mel_spectrogram(waveform: &[f32], config: &MelConfig) -> Result<MelSpectrogram> {
    MelFrontend::new(config)?.compute(waveform)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn sine(freq: f64, n: usize, sr: f64) -> Vec<f32> {
        (0..n).map(|i| (2.0 * PI * freq * i as f64 / sr).sin() as f32).collect()
    }

    #[test]
    fn frame_count_formula() {
        let cfg = MelConfig::default();
        let mel = mel_spectrogram(&vec![0.1; 1024], &cfg).unwrap();
        assert_eq!(mel.n_frames(), 13);
        assert_eq!(mel.n_mels(), 40);
    }

    #[test]
    fn silence_hits_the_floor() {
        let cfg = MelConfig::default();
        let mel = mel_spectrogram(&vec![0.0; 2000], &cfg).unwrap();
        let floor = (1e-10f64).ln() as f32;
        assert!(mel.frames.iter().all(|&v| v == floor));
    }

    #[test]
    fn short_waveform_is_input_error() {
        let cfg = MelConfig::default();
        assert!(matches!(mel_spectrogram(&[0.0; 100], &cfg), Err(Error::Input(_))));
    }

    #[test]
    fn bad_band_edges_are_config_errors() {
        let cfg = MelConfig { fmax: 5000.0, ..MelConfig::default() };
        assert!(matches!(mel_spectrogram(&[0.0; 1000], &cfg), Err(Error::Config(_))));
        let cfg = MelConfig { n_mels: 0, ..MelConfig::default() };
        assert!(matches!(mel_spectrogram(&[0.0; 1000], &cfg), Err(Error::Config(_))));
    }

    #[test]
    fn filterbank_rows_have_unit_area() {
        let fe = MelFrontend::new(&MelConfig::default()).unwrap();
        for row in fe.filterbank().rows() {
            let s: f32 = row.sum();
            assert!((s - 1.0).abs() < 1e-5);
        }
    }

    #[test]
    fn sine_at_band_center_peaks_in_that_band() {
        let cfg = MelConfig::default();
        let fe = MelFrontend::new(&cfg).unwrap();
        for k in 0..cfg.n_mels {
            let f = fe.band_centers_hz()[k];
            let mel = fe.compute(&sine(f, 2048, cfg.sample_rate as f64)).unwrap();
            let mid = mel.frames.row(mel.n_frames() / 2);
            let argmax = mid
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0;
            assert_eq!(argmax, k, "band {k} at {f:.1} Hz");
        }
    }

    #[test]
    fn mel_energy_is_quadratic_in_amplitude() {
        let fe = MelFrontend::new(&MelConfig::default()).unwrap();
        let x: Vec<f32> = (0..1500).map(|i| ((i * 7919) % 113) as f32 / 113.0 - 0.5).collect();
        let a = 3.0f32;
        let ax: Vec<f32> = x.iter().map(|v| a * v).collect();
        let e1 = fe.mel_energy(&x).unwrap();
        let e2 = fe.mel_energy(&ax).unwrap();
        for (u, v) in e1.iter().zip(e2.iter()) {
            let expect = (a * a) as f64 * *u as f64;
            assert!(((*v as f64) - expect).abs() <= 1e-5 * expect.abs().max(1e-12), "{v} vs {expect}");
        }
    }

    #[test]
    fn shift_by_hop_shifts_one_frame() {
        let cfg = MelConfig::default();
        let fe = MelFrontend::new(&cfg).unwrap();
        let x: Vec<f32> = (0..3000).map(|i| ((i as f32) * 0.031).sin() * ((i as f32) * 0.0007).cos()).collect();
        let shifted: Vec<f32> = std::iter::repeat(0.0).take(cfg.hop).chain(x.iter().copied()).collect();
        let a = fe.compute(&x).unwrap();
        let b = fe.compute(&shifted).unwrap();
        for t in 1..a.n_frames() - 1 {
            for m in 0..cfg.n_mels {
                assert!((a.frames[[t, m]] - b.frames[[t + 1, m]]).abs() < 1e-4);
            }
        }
    }
}
