use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::audio::MelConfig;
use crate::error::{Error, Result};
use crate::phoneme::PhonemeSequence;
use crate::seed::SeedStream;

/// Seed of the fixed toy languages; corpus seeds only affect sampling.
const LANGUAGE_SEED: u64 = 0x1a26_5eed;
const HARMONIC_CEIL_HZ: f64 = 3800.0;
const FORMANT_BANDWIDTH_HZ: f64 = 120.0;
const CROSSFADE: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Language {
    Src,
    Tgt,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeakerParams {
    pub pitch_hz: f64,
    pub timbre: [f64; 4],
    pub rate: f64,
}

impl SpeakerParams {
    pub fn validate(&self) -> Result<()> {
        if !(80.0..=300.0).contains(&self.pitch_hz) {
            return Err(Error::input(format!("pitch {} Hz outside [80, 300]", self.pitch_hz)));
        }
        if self.timbre.iter().any(|t| !(0.0..=1.0).contains(t)) {
            return Err(Error::input("timbre ratios must lie in [0, 1]"));
        }
        if !(0.7..=1.3).contains(&self.rate) {
            return Err(Error::input(format!("rate {} outside [0.7, 1.3]", self.rate)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub waveform: Vec<f32>,
    pub phonemes: PhonemeSequence,
    pub speaker: SpeakerParams,
    pub language: Language,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParallelPair {
    pub id: String,
    pub source: Utterance,
    pub target: Utterance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusConfig {
    pub n_src_phonemes: usize,
    pub n_tgt_phonemes: usize,
    pub min_phonemes: usize,
    pub max_phonemes: usize,
    /// Base per-phoneme durations are drawn from `[min_duration, max_duration]` frames.
    pub min_duration: u32,
    pub max_duration: u32,
    /// Per-occurrence duration jitter, uniform in `[-jitter, jitter]` frames.
    pub duration_jitter: u32,
    pub n_speakers: usize,
    pub noise_std: f64,
    /// Targets are reversed when the first source phoneme is a multiple of this.
    pub reverse_class: u32,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            n_src_phonemes: 16,
            n_tgt_phonemes: 16,
            min_phonemes: 3,
            max_phonemes: 6,
            min_duration: 4,
            max_duration: 12,
            duration_jitter: 1,
            n_speakers: 24,
            noise_std: 0.003,
            reverse_class: 3,
        }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_src_phonemes < 4 || self.n_tgt_phonemes < 4 {
            return Err(Error::config("each language needs at least 4 phonemes"));
        }
        if self.n_src_phonemes != self.n_tgt_phonemes {
            return Err(Error::config("the translation dictionary is a bijection; vocabulary sizes must match"));
        }
        if self.min_duration == 0 || self.max_duration < self.min_duration {
            return Err(Error::config("duration range must be non-empty and start at 1 or more frames"));
        }
        if self.min_phonemes == 0 || self.max_phonemes < self.min_phonemes {
            return Err(Error::config("utterance length range must be non-empty"));
        }
        if self.n_speakers == 0 {
            return Err(Error::config("need at least one speaker"));
        }
        if self.reverse_class == 0 {
            return Err(Error::config("reverse_class must be positive"));
        }
        Ok(())
    }
}

/// Fixed acoustic and lexical definition of the two toy languages.
#[derive(Debug, Clone)]
pub struct LanguageModel {
    config: CorpusConfig,
    src_formants: Vec<[f64; 2]>,
    tgt_formants: Vec<[f64; 2]>,
    src_base_durations: Vec<u32>,
    tgt_base_durations: Vec<u32>,
    dictionary: Vec<u32>,
}

fn formant_grid(n: usize, f1_base: f64, f2_base: f64) -> Vec<[f64; 2]> {
    let rows = n.div_ceil(4).max(1);
    (0..n)
        .map(|p| {
            let f1 = f1_base + 150.0 * (p % 4) as f64;
            let f2 = f2_base + 1800.0 * (p / 4) as f64 / rows as f64;
            [f1, f2]
        })
        .collect()
}

impl LanguageModel {
    pub fn new(config: &CorpusConfig) -> Result<Self> {
        config.validate()?;
        let seeds = SeedStream::new(LANGUAGE_SEED);
        let mut rng = seeds.rng("durations");
        let mut draw = |n: usize| -> Vec<u32> {
            (0..n)
                .map(|_| rng.random_range(config.min_duration..=config.max_duration))
                .collect()
        };
        let src_base_durations = draw(config.n_src_phonemes);
        let tgt_base_durations = draw(config.n_tgt_phonemes);
        let mut dictionary: Vec<u32> = (0..config.n_tgt_phonemes as u32).collect();
        dictionary.shuffle(&mut seeds.rng("dictionary"));
        Ok(Self {
            config: config.clone(),
            src_formants: formant_grid(config.n_src_phonemes, 300.0, 1000.0),
            tgt_formants: formant_grid(config.n_tgt_phonemes, 350.0, 1150.0),
            src_base_durations,
            tgt_base_durations,
            dictionary,
        })
    }

    pub fn config(&self) -> &CorpusConfig {
        &self.config
    }

    pub fn vocab_size(&self, lang: Language) -> usize {
        match lang {
            Language::Src => self.config.n_src_phonemes,
            Language::Tgt => self.config.n_tgt_phonemes,
        }
    }

    pub fn base_duration(&self, lang: Language, id: u32) -> u32 {
        match lang {
            Language::Src => self.src_base_durations[id as usize],
            Language::Tgt => self.tgt_base_durations[id as usize],
        }
    }

    fn formants(&self, lang: Language, id: u32) -> [f64; 2] {
        match lang {
            Language::Src => self.src_formants[id as usize],
            Language::Tgt => self.tgt_formants[id as usize],
        }
    }

    /// Dictionary translation, reversed when the first source phoneme falls in
    /// the reversal class.
    pub fn translate(&self, src: &[u32]) -> Vec<u32> {
        let mut out: Vec<u32> = src.iter().map(|&p| self.dictionary[p as usize]).collect();
        if src.first().is_some_and(|&p| p % self.config.reverse_class == 0) {
            out.reverse();
        }
        out
    }
}

/// Applies the speaking-rate multiplier to a raw duration in frames.
pub fn scale_duration(raw: u32, rate: f64) -> u32 {
    ((raw as f64 / rate).round() as u32).max(1)
}

fn harmonic_amplitude(freq: f64, formants: &[f64; 2], timbre: &[f64; 4]) -> f64 {
    let env: f64 = formants
        .iter()
        .map(|&f| (-(freq - f).powi(2) / (2.0 * FORMANT_BANDWIDTH_HZ.powi(2))).exp())
        .sum::<f64>()
        + 0.02;
    let band = ((freq / 1000.0) as usize).min(3);
    let tilt = 1.0 / (1.0 + freq / 1500.0);
    env * tilt * (0.3 + 0.7 * timbre[band])
}

/// Harmonic-tone rendering of a phoneme string.
///
/// Every phoneme occupies `duration·hop` samples; the signal is extended by
/// `(win_len − hop)/2` samples on both sides so that the analysis frame count
/// equals the total duration in frames.
pub fn render_utterance(
    lm: &LanguageModel,
    lang: Language,
    ids: &[u32],
    durations: &[u32],
    speaker: &SpeakerParams,
    audio: &MelConfig,
    noise_std: f64,
    rng: &mut ChaCha8Rng,
) -> Vec<f32> {
    let hop = audio.hop;
    let pad = (audio.win_len - audio.hop) / 2;
    let total_frames: usize = durations.iter().map(|&d| d as usize).sum();
    let n = total_frames * hop + 2 * pad;
    let sr = audio.sample_rate as f64;
    let f0 = speaker.pitch_hz;
    let n_harm = ((HARMONIC_CEIL_HZ.min(sr / 2.0 - 1.0)) / f0).floor() as usize;

    // Segment boundaries in samples; the first and last segments absorb the padding.
    let mut bounds = Vec::with_capacity(ids.len() + 1);
    bounds.push(0usize);
    let mut acc = pad;
    for &d in &durations[..durations.len().saturating_sub(1)] {
        acc += d as usize * hop;
        bounds.push(acc);
    }
    bounds.push(n);

    let amps: Vec<Vec<f64>> = ids
        .iter()
        .map(|&id| {
            let fm = lm.formants(lang, id);
            (1..=n_harm)
                .map(|h| harmonic_amplitude(h as f64 * f0, &fm, &speaker.timbre))
                .collect()
        })
        .collect();

    // Per-sample segment weights with short linear crossfades at boundaries.
    let mut out = vec![0f64; n];
    let phases: Vec<f64> = (0..n_harm).map(|_| rng.random_range(0.0..2.0 * PI)).collect();
    for h in 0..n_harm {
        let w = 2.0 * PI * (h + 1) as f64 * f0 / sr;
        let (sw, cw) = w.sin_cos();
        let (mut s, mut c) = phases[h].sin_cos();
        let mut seg = 0usize;
        for (i, o) in out.iter_mut().enumerate() {
            while seg + 1 < ids.len() && i >= bounds[seg + 1] + CROSSFADE / 2 {
                seg += 1;
            }
            let mut a = amps[seg][h];
            if seg + 1 < ids.len() {
                let b = bounds[seg + 1];
                if i + CROSSFADE / 2 >= b {
                    let frac = (i + CROSSFADE / 2 - b) as f64 / CROSSFADE as f64;
                    a = (1.0 - frac) * a + frac * amps[seg + 1][h];
                }
            }
            *o += a * s;
            let ns = s * cw + c * sw;
            c = c * cw - s * sw;
            s = ns;
        }
    }
    let rms = (out.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt().max(1e-12);
    let gain = 0.1 / rms;
    let noise = Normal::new(0.0, noise_std.max(0.0)).expect("valid noise std");
    out.iter()
        .map(|&v| (v * gain + if noise_std > 0.0 { noise.sample(rng) } else { 0.0 }) as f32)
        .collect()
}

fn draw_speaker(rng: &mut ChaCha8Rng) -> SpeakerParams {
    let pitch_hz = (80f64.ln() + rng.random::<f64>() * (300f64.ln() - 80f64.ln())).exp();
    SpeakerParams {
        pitch_hz,
        timbre: [rng.random(), rng.random(), rng.random(), rng.random()],
        rate: rng.random_range(0.7..=1.3),
    }
}

fn draw_durations(lm: &LanguageModel, lang: Language, ids: &[u32], rate: f64, rng: &mut ChaCha8Rng) -> Vec<u32> {
    let j = lm.config.duration_jitter as i64;
    ids.iter()
        .map(|&id| {
            let raw = (lm.base_duration(lang, id) as i64 + rng.random_range(-j..=j)).max(1) as u32;
            scale_duration(raw, rate)
        })
        .collect()
}

/// Deterministic synthetic parallel corpus; pair `i` depends only on
/// `(seed, i)`, so generation is parallel across pairs.
pub fn generate_corpus(
    seed: u64,
    n_pairs: usize,
    config: &CorpusConfig,
    audio: &MelConfig,
) -> Result<Vec<ParallelPair>> {
    if n_pairs == 0 {
        return Err(Error::input("n_pairs must be at least 1"));
    }
    audio.validate()?;
    let lm = LanguageModel::new(config)?;
    let seeds = SeedStream::new(seed);
    let mut spk_rng = seeds.rng("speakers");
    let speakers: Vec<SpeakerParams> = (0..config.n_speakers).map(|_| draw_speaker(&mut spk_rng)).collect();

    let pairs = (0..n_pairs)
        .into_par_iter()
        .map(|i| {
            let mut rng = seeds.indexed("pair", i as u64).rng("sample");
            let speaker = speakers[rng.random_range(0..speakers.len())].clone();
            let len = rng.random_range(config.min_phonemes..=config.max_phonemes);
            let src: Vec<u32> = (0..len)
                .map(|_| rng.random_range(0..config.n_src_phonemes as u32))
                .collect();
            let tgt = lm.translate(&src);
            let src_d = draw_durations(&lm, Language::Src, &src, speaker.rate, &mut rng);
            let tgt_d = draw_durations(&lm, Language::Tgt, &tgt, speaker.rate, &mut rng);
            let src_wave = render_utterance(&lm, Language::Src, &src, &src_d, &speaker, audio, config.noise_std, &mut rng);
            let tgt_wave = render_utterance(&lm, Language::Tgt, &tgt, &tgt_d, &speaker, audio, config.noise_std, &mut rng);
            ParallelPair {
                id: format!("pair{i:06}"),
                source: Utterance {
                    waveform: src_wave,
                    phonemes: PhonemeSequence::with_durations(src, src_d),
                    speaker: speaker.clone(),
                    language: Language::Src,
                },
                target: Utterance {
                    waveform: tgt_wave,
                    phonemes: PhonemeSequence::with_durations(tgt, tgt_d),
                    speaker,
                    language: Language::Tgt,
                },
            }
        })
        .collect();
    Ok(pairs)
}

/// Class index per pair, grouping pairs whose speaker parameters are identical.
pub fn speaker_classes(pairs: &[ParallelPair]) -> (Vec<usize>, usize) {
    let mut seen: Vec<&SpeakerParams> = Vec::new();
    let labels = pairs
        .iter()
        .map(|p| match seen.iter().position(|s| **s == p.source.speaker) {
            Some(i) => i,
            None => {
                seen.push(&p.source.speaker);
                seen.len() - 1
            }
        })
        .collect();
    (labels, seen.len())
}
