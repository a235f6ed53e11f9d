//! End-to-end inference: waveform in, translated phonemes and waveform out.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use candle_core::{DType, Device, Tensor};
use ndarray::{s, Array2};
use serde::{Deserialize, Serialize};

use crate::audio::{center_trim, GriffinLim, MelFrontend, MelSpectrogram};
use crate::codec::{rvq_quantize, to_array2, LatentSequence};
use crate::curriculum::Stage;
use crate::diffusion::{euler_sample, zeros, FlowConfig};
use crate::duration::{frame_count, positional_batch, upsample_batch};
use crate::error::{Error, Result};
use crate::model::S2stModel;
use crate::seed::SeedStream;
use crate::translation::beam_search;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Synth {
    Nat,
    Diffusion,
}

impl Synth {
    /// The stage a checkpoint must have completed to use this synthesizer.
    pub fn required_stage(self) -> Stage {
        match self {
            Synth::Nat => Stage::S3JointNat,
            Synth::Diffusion => Stage::S4DiffusionFinetune,
        }
    }
}

impl fmt::Display for Synth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Synth::Nat => "nat",
            Synth::Diffusion => "diffusion",
        })
    }
}

impl FromStr for Synth {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nat" => Ok(Synth::Nat),
            "diffusion" => Ok(Synth::Diffusion),
            _ => Err(Error::config(format!("unknown synthesizer {s:?}; expected nat or diffusion"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InferenceConfig {
    pub beam: usize,
    pub max_len: usize,
    pub steps: usize,
    pub guidance: f64,
    pub griffin_lim_iters: usize,
    pub seed: u64,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        Self {
            beam: 5,
            max_len: 32,
            steps: 25,
            guidance: 1.0,
            griffin_lim_iters: 32,
            seed: 0,
        }
    }
}

impl InferenceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.beam == 0 || self.max_len == 0 {
            return Err(Error::config("beam and max_len must be ≥ 1"));
        }
        if self.steps == 0 {
            return Err(Error::config("steps must be ≥ 1"));
        }
        if !(self.guidance >= 0.0 && self.guidance.is_finite()) {
            return Err(Error::config("guidance must be a finite value ≥ 0"));
        }
        if self.griffin_lim_iters == 0 {
            return Err(Error::config("griffin_lim_iters must be ≥ 1"));
        }
        Ok(())
    }
}

/// Wall-clock seconds per pipeline stage.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub frontend: f64,
    pub encoder: f64,
    pub beam_search: f64,
    /// Bridge, duration/variance predictors and upsampling.
    pub predictors: f64,
    pub synthesizer: f64,
    pub vocoder: f64,
}

impl StageTimings {
    pub const NAMES: [&'static str; 6] = ["frontend", "encoder", "beam_search", "predictors", "synthesizer", "vocoder"];

    pub fn values(&self) -> [f64; 6] {
        [
            self.frontend,
            self.encoder,
            self.beam_search,
            self.predictors,
            self.synthesizer,
            self.vocoder,
        ]
    }

    pub fn total(&self) -> f64 {
        self.values().iter().sum()
    }
}

#[derive(Debug, Clone)]
pub struct Translation {
    /// Target phoneme ids (not vocabulary tokens).
    pub phonemes: Vec<u32>,
    /// Predicted per-phoneme durations in frames.
    pub durations: Vec<f64>,
    pub mel: Array2<f32>,
    pub waveform: Vec<f32>,
    pub timings: StageTimings,
}

pub struct Pipeline<'a> {
    model: &'a S2stModel,
    frontend: MelFrontend,
    vocoder: GriffinLim,
    pub config: InferenceConfig,
}

fn lap(clock: &mut Instant) -> f64 {
    let now = Instant::now();
    let dt = now.duration_since(*clock).as_secs_f64();
    *clock = now;
    dt
}

impl<'a> Pipeline<'a> {
    pub fn new(model: &'a S2stModel, config: InferenceConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            model,
            frontend: MelFrontend::new(&model.audio)?,
            vocoder: GriffinLim::new(&model.audio)?,
            config,
        })
    }

    pub fn model(&self) -> &S2stModel {
        self.model
    }

    pub fn check_ready(&self, synth: Synth) -> Result<()> {
        let stage = synth.required_stage();
        if !self.model.stage_done(stage)? {
            return Err(Error::state(format!(
                "the {synth} synthesizer needs a checkpoint trained through {stage}"
            )));
        }
        Ok(())
    }

    pub fn translate(&self, waveform: &[f32], synth: Synth) -> Result<Translation> {
        self.check_ready(synth)?;
        let mut clock = Instant::now();
        let mel = self.frontend.compute(waveform)?;
        let frontend = lap(&mut clock);
        let mut out = self.translate_mel_unchecked(&mel.frames, synth)?;
        out.timings.frontend = frontend;
        Ok(out)
    }

    pub fn translate_mel(&self, mel: &Array2<f32>, synth: Synth) -> Result<Translation> {
        self.check_ready(synth)?;
        self.translate_mel_unchecked(mel, synth)
    }

    /// Encoder and beam search only.
    pub fn decode_phonemes(&self, mel: &Array2<f32>) -> Result<Vec<u32>> {
        let m = self.model;
        let enc = m.encoder.encode(mel, None, m.dtype())?;
        let (tokens, _) = beam_search(&m.decoder, &enc, self.config.beam, self.config.max_len)?;
        Ok(tokens.iter().filter_map(|&t| m.vocab.phoneme(t)).collect())
    }

    fn translate_mel_unchecked(&self, mel: &Array2<f32>, synth: Synth) -> Result<Translation> {
        let m = self.model;
        let dtype = m.dtype();
        let mut timings = StageTimings::default();
        let mut clock = Instant::now();
        let enc = m.encoder.encode(mel, None, dtype)?;
        timings.encoder = lap(&mut clock);
        let (tokens, _) = beam_search(&m.decoder, &enc, self.config.beam, self.config.max_len)?;
        // Only phoneme tokens reach the synthesizer; stray specials are dropped.
        let kept: Vec<u32> = tokens.into_iter().filter(|&t| m.vocab.phoneme(t).is_some()).collect();
        let phonemes: Vec<u32> = kept.iter().filter_map(|&t| m.vocab.phoneme(t)).collect();
        timings.beam_search = lap(&mut clock);
        if phonemes.is_empty() {
            let frames = m.config.codec.downsample;
            let floor = m.audio.log_floor.ln() as f32;
            let mel_out = Array2::from_elem((frames, m.audio.n_mels), floor);
            return Ok(Translation {
                phonemes,
                durations: Vec::new(),
                waveform: vec![0.0; frames * m.audio.hop],
                mel: mel_out,
                timings,
            });
        }

        let mut input = vec![crate::config::Vocab::BOS];
        input.extend(&kept);
        let dec = m.decoder.forward_tokens(&input, &enc)?;
        let l = kept.len();
        let rows = m.bridge.forward(&dec.hidden, &enc)?.narrow(1, 1, l)?;
        let durations: Vec<f64> = m.duration.forward(&rows, &[l], None)?.to_dtype(DType::F64)?.squeeze(0)?.to_vec1()?;
        let var = m.variance.forward(&rows, &[l], None)?;
        let n = frame_count(&durations);
        let track = [durations.clone()];
        let frames = upsample_batch(&rows, &track, &var, &[n])?;
        let pos = positional_batch(&track, &[n], m.config.d_pos, dtype, &Device::Cpu)?;
        timings.predictors = lap(&mut clock);

        let mel_out = match synth {
            Synth::Nat => to_array2(&m.nat.forward(&frames, &pos, &[n], None)?.squeeze(0)?)?,
            Synth::Diffusion => self.diffuse(&frames, &pos, n)?,
        };
        timings.synthesizer = lap(&mut clock);

        let spec = MelSpectrogram {
            frames: mel_out.clone(),
            hop: m.audio.hop,
            sample_rate: m.audio.sample_rate,
        };
        let waveform = center_trim(&self.vocoder.invert(&spec, self.config.griffin_lim_iters)?, &m.audio);
        timings.vocoder = lap(&mut clock);
        Ok(Translation {
            phonemes,
            durations,
            mel: mel_out,
            waveform,
            timings,
        })
    }

    /// Zero context, projected conditioning, Euler sampling, then the codec's
    /// quantizer and decoder. Returns `n` log-mel frames.
    fn diffuse(&self, frames: &Tensor, pos: &Tensor, n: usize) -> Result<Array2<f32>> {
        let m = self.model;
        let dtype = m.dtype();
        let ds = m.config.codec.downsample;
        let t_lat = n.div_ceil(ds);
        let cond = m.diffusion.projector().forward(frames, pos, &[n], t_lat)?;
        let context = zeros(1, t_lat, m.diffusion.d_lat(), dtype)?;
        let flow = FlowConfig {
            steps: self.config.steps,
            guidance_scale: self.config.guidance,
            ..FlowConfig::default()
        };
        let mut rng = SeedStream::new(self.config.seed).rng("noise");
        let x = euler_sample(&m.diffusion, &context, Some(&cond), &[t_lat], &flow, &mut rng)?;
        let lat = to_array2(&m.diffusion.latent_norm().denormalize(&x)?.squeeze(0)?)?;
        let q = rvq_quantize(&LatentSequence::new(lat, ds)?, &m.codec.codebooks(&m.store)?)?;
        let mel = m.codec.decode_mel(&q.quantized, dtype)?;
        Ok(mel.slice(s![..n, ..]).to_owned())
    }

    /// Synthesizes from given phonemes and durations (bypasses the decoder's
    /// choice but still conditions on the source audio).
    pub fn synthesize_with(&self, mel: &Array2<f32>, phonemes: &[u32], durations: &[f64], synth: Synth) -> Result<Array2<f32>> {
        let m = self.model;
        let dtype = m.dtype();
        if phonemes.is_empty() || phonemes.len() != durations.len() {
            return Err(Error::input("need one duration per phoneme"));
        }
        let enc = m.encoder.encode(mel, None, dtype)?;
        let mut input = vec![crate::config::Vocab::BOS];
        input.extend(phonemes.iter().map(|&p| m.vocab.token(p)));
        let dec = m.decoder.forward_tokens(&input, &enc)?;
        let l = phonemes.len();
        let rows = m.bridge.forward(&dec.hidden, &enc)?.narrow(1, 1, l)?;
        let var = m.variance.forward(&rows, &[l], None)?;
        let n = frame_count(durations);
        let track = [durations.to_vec()];
        let frames = upsample_batch(&rows, &track, &var, &[n])?;
        let pos = positional_batch(&track, &[n], m.config.d_pos, dtype, &Device::Cpu)?;
        match synth {
            Synth::Nat => to_array2(&m.nat.forward(&frames, &pos, &[n], None)?.squeeze(0)?),
            Synth::Diffusion => self.diffuse(&frames, &pos, n),
        }
    }
}
