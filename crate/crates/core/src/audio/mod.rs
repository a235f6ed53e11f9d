//! Waveform to log-mel conversion and a Griffin-Lim spectrogram inverter.

mod griffin_lim;
mod mel;
mod stft;

pub use griffin_lim::{center_trim, griffin_lim_invert, spectral_convergence, GriffinLim};
pub use mel::{hz_to_mel, mel_spectrogram, mel_to_hz, MelConfig, MelFrontend, MelSpectrogram};
pub use stft::Stft;
