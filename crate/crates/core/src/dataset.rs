//! In-memory training examples: mel features computed once per corpus.

use ndarray::Array2;
use rayon::prelude::*;

use crate::audio::{MelConfig, MelFrontend};
use crate::data::{speaker_classes, ParallelPair};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub id: String,
    pub src_mel: Array2<f32>,
    /// Target phoneme ids (not vocabulary tokens).
    pub tgt_ids: Vec<u32>,
    pub tgt_durations: Vec<u32>,
    pub tgt_mel: Array2<f32>,
    pub speaker: usize,
}

impl Example {
    pub fn n_target_frames(&self) -> usize {
        self.tgt_durations.iter().map(|&d| d as usize).sum()
    }
}

#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub examples: Vec<Example>,
    pub n_speakers: usize,
}

impl Dataset {
    pub fn from_pairs(pairs: &[ParallelPair], audio: &MelConfig) -> Result<Self> {
        let fe = MelFrontend::new(audio)?;
        let (labels, n_speakers) = speaker_classes(pairs);
        let examples = pairs
            .par_iter()
            .zip(labels.par_iter())
            .map(|(p, &speaker)| {
                let durations = p
                    .target
                    .phonemes
                    .durations
                    .clone()
                    .ok_or_else(|| Error::input(format!("pair {} has no target durations", p.id)))?;
                let tgt_mel = fe.compute(&p.target.waveform)?.frames;
                if tgt_mel.nrows() != durations.iter().map(|&d| d as usize).sum::<usize>() {
                    return Err(Error::input(format!(
                        "pair {}: durations sum to {} but the target has {} frames",
                        p.id,
                        durations.iter().sum::<u32>(),
                        tgt_mel.nrows()
                    )));
                }
                Ok(Example {
                    id: p.id.clone(),
                    src_mel: fe.compute(&p.source.waveform)?.frames,
                    tgt_ids: p.target.phonemes.ids.clone(),
                    tgt_durations: durations,
                    tgt_mel,
                    speaker,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { examples, n_speakers })
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// Deterministic split: the last `⌈fraction·n⌉` examples validate.
    pub fn split(&self, fraction: f64) -> (Vec<&Example>, Vec<&Example>) {
        let n = self.examples.len();
        let n_val = if fraction > 0.0 && n > 1 {
            ((fraction * n as f64).ceil() as usize).min(n - 1)
        } else {
            0
        };
        let (a, b) = self.examples.split_at(n - n_val);
        (a.iter().collect(), b.iter().collect())
    }
}
