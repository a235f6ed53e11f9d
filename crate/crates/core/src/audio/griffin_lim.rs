use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex32;

use super::{MelConfig, MelFrontend, MelSpectrogram};
use crate::error::{Error, Result};

const NNLS_ITERS: usize = 60;
const PHASE_SEED: u64 = 0x6c_696d;

/// Griffin-Lim phase reconstruction from a log-mel spectrogram.
///
/// The mel-to-linear step uses multiplicative non-negative least squares
/// against the analysis filterbank; the initial phase comes from a fixed seed
/// so the output is a deterministic function of the input.
#[derive(Debug, Clone)]
pub struct GriffinLim {
    frontend: MelFrontend,
}

impl GriffinLim {
    pub fn new(config: &MelConfig) -> Result<Self> {
        Ok(Self {
            frontend: MelFrontend::new(config)?,
        })
    }

    pub fn frontend(&self) -> &MelFrontend {
        &self.frontend
    }

    /// Linear magnitude `[T × n_bins]` consistent with the given log-mel.
    pub fn target_magnitude(&self, mel: &MelSpectrogram) -> Result<Array2<f32>> {
        let fb = self.frontend.filterbank();
        if mel.n_mels() != fb.nrows() {
            return Err(Error::input(format!(
                "mel has {} bands, inverter expects {}",
                mel.n_mels(),
                fb.nrows()
            )));
        }
        let energy = mel.frames.mapv(|v| v.exp());
        let fbt = fb.t();
        let numer = energy.dot(&fb.view());
        let gram = fbt.dot(&fb.view()); // fbᵀ·fb, [bins × bins], symmetric
        let mut power = numer.mapv(|v| v.max(1e-12));
        for _ in 0..NNLS_ITERS {
            let denom = power.dot(&gram);
            ndarray::Zip::from(&mut power)
                .and(&numer)
                .and(&denom)
                .for_each(|p, &n, &d| *p *= n / (d + 1e-20));
        }
        Ok(power.mapv(|p| p.max(0.0).sqrt()))
    }

    pub fn invert(&self, mel: &MelSpectrogram, iters: usize) -> Result<Vec<f32>> {
        if iters < 1 {
            return Err(Error::config("griffin-lim needs at least one iteration"));
        }
        if mel.n_frames() == 0 {
            return Err(Error::input("empty mel spectrogram"));
        }
        let target = self.target_magnitude(mel)?;
        let stft = self.frontend.stft();
        let frames = mel.n_frames();
        let bins = stft.n_bins();
        let mut rng = ChaCha8Rng::seed_from_u64(PHASE_SEED);
        let mut phase: Vec<Complex32> = (0..frames * bins)
            .map(|_| {
                let a: f32 = rng.random_range(0.0..std::f32::consts::TAU);
                Complex32::new(a.cos(), a.sin())
            })
            .collect();
        let mut spectra = vec![Complex32::new(0.0, 0.0); frames * bins];
        let mut signal = Vec::new();
        for it in 0..=iters {
            for (i, s) in spectra.iter_mut().enumerate() {
                *s = phase[i] * target[[i / bins, i % bins]];
            }
            signal = stft.synthesize(&spectra, frames);
            if it == iters {
                break;
            }
            let est = stft.analyze(&signal);
            for (p, e) in phase.iter_mut().zip(&est) {
                let n = e.norm();
                *p = if n > 1e-12 { *e / n } else { Complex32::new(1.0, 0.0) };
            }
        }
        Ok(signal)
    }
}

pub fn griffin_lim_invert(mel: &MelSpectrogram, iters: usize, config: &MelConfig) -> Result<Vec<f32>> {
    GriffinLim::new(config)?.invert(mel, iters)
}

/// `‖ |STFT(y)| − A ‖_F / ‖A‖_F` where `A` is the magnitude implied by `mel`.
pub fn spectral_convergence(mel: &MelSpectrogram, waveform: &[f32], config: &MelConfig) -> Result<f64> {
    let gl = GriffinLim::new(config)?;
    let target = gl.target_magnitude(mel)?;
    let est = gl.frontend.stft().analyze(waveform);
    let bins = gl.frontend.stft().n_bins();
    let frames = (est.len() / bins).min(target.nrows());
    let (mut num, mut den) = (0f64, 0f64);
    for t in 0..frames {
        for j in 0..bins {
            let a = target[[t, j]] as f64;
            let d = est[t * bins + j].norm() as f64 - a;
            num += d * d;
            den += a * a;
        }
    }
    Ok(if den > 0.0 { (num / den).sqrt() } else { num.sqrt() })
}

/// Drops the `(win_len − hop)/2` samples on each side that the framing adds, so a
/// `T`-frame spectrogram maps to exactly `T·hop` samples.
pub fn center_trim(waveform: &[f32], config: &MelConfig) -> Vec<f32> {
    let pad = (config.win_len - config.hop) / 2;
    if waveform.len() <= 2 * pad {
        return Vec::new();
    }
    waveform[pad..waveform.len() - pad].to_vec()
}
