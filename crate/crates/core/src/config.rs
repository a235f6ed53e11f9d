use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CodecConfig {
    pub d_lat: usize,
    pub stages: usize,
    pub n_codes: usize,
    /// Mel frames per latent frame.
    pub downsample: usize,
    pub hidden: usize,
    pub commitment: f64,
    pub ema_decay: f64,
}

impl Default for CodecConfig {
    fn default() -> Self {
        Self {
            d_lat: 16,
            stages: 4,
            n_codes: 64,
            downsample: 4,
            hidden: 256,
            commitment: 0.25,
            ema_decay: 0.99,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiffusionConfig {
    pub d_model: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn: usize,
    pub t_embed: usize,
}

impl Default for DiffusionConfig {
    fn default() -> Self {
        Self {
            d_model: 128,
            layers: 6,
            heads: 4,
            ffn: 256,
            t_embed: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub n_mels: usize,
    pub n_phonemes: usize,
    pub d_model: usize,
    pub heads: usize,
    pub ffn: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub predictor_dim: usize,
    pub predictor_layers: usize,
    pub nat_layers: usize,
    /// Width of the duration-derived positional encoding.
    pub d_pos: usize,
    pub dropout: f64,
    pub codec: CodecConfig,
    pub diffusion: DiffusionConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            n_mels: 40,
            n_phonemes: 16,
            d_model: 128,
            heads: 4,
            ffn: 256,
            encoder_layers: 4,
            decoder_layers: 4,
            predictor_dim: 64,
            predictor_layers: 1,
            nat_layers: 4,
            d_pos: 32,
            dropout: 0.1,
            codec: CodecConfig::default(),
            diffusion: DiffusionConfig::default(),
        }
    }
}

impl ModelConfig {
    /// A much smaller model for unit tests and smoke runs.
    pub fn tiny() -> Self {
        Self {
            d_model: 32,
            heads: 2,
            ffn: 64,
            encoder_layers: 1,
            decoder_layers: 1,
            predictor_dim: 16,
            nat_layers: 1,
            d_pos: 16,
            codec: CodecConfig {
                hidden: 32,
                n_codes: 16,
                stages: 2,
                ..CodecConfig::default()
            },
            diffusion: DiffusionConfig {
                d_model: 32,
                layers: 1,
                heads: 2,
                ffn: 64,
                t_embed: 16,
            },
            ..Self::default()
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.n_phonemes + Vocab::N_SPECIAL as usize
    }

    pub fn validate(&self) -> Result<()> {
        let heads_ok = |d: usize, h: usize| h > 0 && d % h == 0 && (d / h) % 2 == 0;
        if !heads_ok(self.d_model, self.heads) {
            return Err(Error::config("d_model must split into heads of even width"));
        }
        if !heads_ok(self.diffusion.d_model, self.diffusion.heads) {
            return Err(Error::config("diffusion d_model must split into heads of even width"));
        }
        if self.predictor_dim % 2 != 0 || self.predictor_dim == 0 {
            return Err(Error::config("predictor_dim must be even"));
        }
        if self.d_pos % 4 != 0 || self.d_pos == 0 {
            return Err(Error::config("d_pos must be a positive multiple of 4"));
        }
        if self.codec.stages == 0 || self.codec.n_codes < 2 || self.codec.downsample == 0 {
            return Err(Error::config("codec needs ≥ 1 stage, ≥ 2 codes and downsample ≥ 1"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config("dropout must lie in [0, 1)"));
        }
        Ok(())
    }
}

/// Decoder token space: four specials followed by the target phonemes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Vocab {
    n_phonemes: usize,
}

impl Vocab {
    pub const PAD: u32 = 0;
    pub const BOS: u32 = 1;
    pub const EOS: u32 = 2;
    pub const UNK: u32 = 3;
    pub const N_SPECIAL: u32 = 4;

    pub fn new(n_phonemes: usize) -> Self {
        Self { n_phonemes }
    }

    pub fn size(&self) -> usize {
        self.n_phonemes + Self::N_SPECIAL as usize
    }

    pub fn token(&self, phoneme: u32) -> u32 {
        phoneme + Self::N_SPECIAL
    }

    pub fn phoneme(&self, token: u32) -> Option<u32> {
        (token >= Self::N_SPECIAL && ((token - Self::N_SPECIAL) as usize) < self.n_phonemes)
            .then(|| token - Self::N_SPECIAL)
    }

    /// `[BOS, p…]` decoder inputs and `[p…, EOS]` targets.
    pub fn teacher_forcing(&self, phonemes: &[u32]) -> (Vec<u32>, Vec<u32>) {
        let mut input = Vec::with_capacity(phonemes.len() + 1);
        input.push(Self::BOS);
        input.extend(phonemes.iter().map(|&p| self.token(p)));
        let mut target: Vec<u32> = phonemes.iter().map(|&p| self.token(p)).collect();
        target.push(Self::EOS);
        (input, target)
    }
}
