//! Toy speaker embedder: a small classifier over utterance-level log-mel
//! statistics, used through its penultimate layer.

use candle_core::{DType, Device, Tensor};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::audio::{mel_spectrogram, MelConfig};
use crate::curriculum::{AdamW, AdamWConfig};
use crate::dataset::Example;
use crate::error::{Error, Result};
use crate::nn::{Init, Linear, ParamStore};
use crate::seed::SeedStream;
use crate::translation::phoneme_loss;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbedderConfig {
    pub hidden: usize,
    pub dim: usize,
    pub steps: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        Self {
            hidden: 64,
            dim: 32,
            steps: 400,
            lr: 1e-2,
            seed: 0,
        }
    }
}

pub struct SpeakerEmbedder {
    store: ParamStore,
    hidden: Linear,
    embed: Linear,
    classify: Linear,
    mean: Vec<f32>,
    std: Vec<f32>,
}

/// Per-band mean and standard deviation over time.
pub fn utterance_stats(mel: &Array2<f32>) -> Vec<f32> {
    let t = mel.nrows().max(1) as f32;
    let mut out = Vec::with_capacity(2 * mel.ncols());
    for col in mel.columns() {
        let m = col.sum() / t;
        let v = col.iter().map(|x| (x - m) * (x - m)).sum::<f32>() / t;
        out.push(m);
        out.push(v.sqrt());
    }
    out
}

pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| *x as f64 * *y as f64).sum();
    let na: f64 = a.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot / (na * nb)).clamp(-1.0, 1.0)
}

impl SpeakerEmbedder {
    /// Trains the classifier full-batch on `(mel, speaker)` examples.
    pub fn train(mels: &[&Array2<f32>], speakers: &[usize], n_speakers: usize, cfg: &EmbedderConfig) -> Result<Self> {
        if mels.is_empty() || mels.len() != speakers.len() {
            return Err(Error::input("embedder needs one speaker label per utterance"));
        }
        if n_speakers < 2 || speakers.iter().any(|&s| s >= n_speakers) {
            return Err(Error::input("speaker labels must lie in 0..n_speakers with n_speakers ≥ 2"));
        }
        let feats: Vec<Vec<f32>> = mels.iter().map(|m| utterance_stats(m)).collect();
        let d = feats[0].len();
        let n = feats.len() as f32;
        let mean: Vec<f32> = (0..d).map(|j| feats.iter().map(|f| f[j]).sum::<f32>() / n).collect();
        let std: Vec<f32> = (0..d)
            .map(|j| {
                let v = feats.iter().map(|f| (f[j] - mean[j]).powi(2)).sum::<f32>() / n;
                v.sqrt().max(1e-4)
            })
            .collect();

        let mut store = ParamStore::new(DType::F32);
        let mut rng = SeedStream::new(cfg.seed).rng("speaker-embedder");
        let mut init = Init::new(&mut store, &mut rng);
        let hidden = Linear::new(&mut init.pp("hidden"), d, cfg.hidden, true)?;
        let embed = Linear::new(&mut init.pp("embed"), cfg.hidden, cfg.dim, true)?;
        let classify = Linear::new(&mut init.pp("classify"), cfg.dim, n_speakers, true)?;
        let model = Self {
            store,
            hidden,
            embed,
            classify,
            mean,
            std,
        };
        let x = model.standardized(&feats)?;
        let y = Tensor::from_vec(speakers.iter().map(|&s| s as u32).collect::<Vec<_>>(), speakers.len(), &Device::Cpu)?;
        let names: Vec<String> = model.store.iter().map(|p| p.name.clone()).collect();
        let mut opt = AdamW::new();
        let hyper = AdamWConfig {
            lr: cfg.lr,
            weight_decay: 1e-4,
            ..AdamWConfig::default()
        };
        for _ in 0..cfg.steps {
            let logits = model.classify.forward(&model.forward_embed(&x)?)?;
            let loss = phoneme_loss(&logits, &y, u32::MAX)?;
            let grads = loss.backward()?;
            opt.step(&model.store, &grads, &names, &hyper)?;
        }
        Ok(model)
    }

    /// Trains on both sides of each pair so the embedding does not key on language.
    pub fn train_bilingual(examples: &[Example], n_speakers: usize, cfg: &EmbedderConfig) -> Result<Self> {
        let mels: Vec<&Array2<f32>> = examples.iter().flat_map(|e| [&e.src_mel, &e.tgt_mel]).collect();
        let labels: Vec<usize> = examples.iter().flat_map(|e| [e.speaker, e.speaker]).collect();
        Self::train(&mels, &labels, n_speakers, cfg)
    }

    fn standardized(&self, feats: &[Vec<f32>]) -> Result<Tensor> {
        let d = self.mean.len();
        let mut v = Vec::with_capacity(feats.len() * d);
        for f in feats {
            if f.len() != d {
                return Err(Error::input("mel band count differs from the embedder's training data"));
            }
            v.extend(f.iter().enumerate().map(|(j, x)| (x - self.mean[j]) / self.std[j]));
        }
        Ok(Tensor::from_vec(v, (feats.len(), d), &Device::Cpu)?)
    }

    fn forward_embed(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.embed.forward(&self.hidden.forward(x)?.tanh()?)?.tanh()?)
    }

    pub fn embed_mel(&self, mel: &Array2<f32>) -> Result<Vec<f32>> {
        let x = self.standardized(&[utterance_stats(mel)])?;
        Ok(self.forward_embed(&x)?.squeeze(0)?.to_vec1()?)
    }

    pub fn embed_waveform(&self, waveform: &[f32], audio: &MelConfig) -> Result<Vec<f32>> {
        self.embed_mel(&mel_spectrogram(waveform, audio)?.frames)
    }

    /// Classification accuracy of the full network.
    pub fn accuracy(&self, mels: &[&Array2<f32>], speakers: &[usize]) -> Result<f64> {
        if mels.is_empty() {
            return Err(Error::input("nothing to score"));
        }
        let feats: Vec<Vec<f32>> = mels.iter().map(|m| utterance_stats(m)).collect();
        let logits = self.classify.forward(&self.forward_embed(&self.standardized(&feats)?)?)?;
        let pred = logits.argmax(1)?.to_vec1::<u32>()?;
        let hit = pred.iter().zip(speakers).filter(|(p, s)| **p as usize == **s).count();
        Ok(hit as f64 / speakers.len() as f64)
    }
}

/// Cosine similarity of the two utterances' speaker embeddings.
pub fn speaker_similarity(a: &[f32], b: &[f32], embedder: &SpeakerEmbedder, audio: &MelConfig) -> Result<f64> {
    Ok(cosine(&embedder.embed_waveform(a, audio)?, &embedder.embed_waveform(b, audio)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub pairs: usize,
    pub wins: usize,
    pub mean_same: f64,
    pub mean_different: f64,
}

impl ProbeResult {
    pub fn win_rate(&self) -> f64 {
        self.wins as f64 / self.pairs.max(1) as f64
    }
}

/// For each `(output, speaker)` probe, compares its similarity to a reference
/// utterance of the same speaker with one of a different speaker. References
/// are picked round-robin so the probe is deterministic.
pub fn speaker_probe(
    outputs: &[(Vec<f32>, usize)],
    references: &[(Vec<f32>, usize)],
    exclude_same_index: bool,
) -> Result<ProbeResult> {
    let mut res = ProbeResult {
        pairs: 0,
        wins: 0,
        mean_same: 0.0,
        mean_different: 0.0,
    };
    for (i, (emb, spk)) in outputs.iter().enumerate() {
        let same = (1..=references.len())
            .map(|k| (i + k) % references.len())
            .find(|&j| references[j].1 == *spk && !(exclude_same_index && j == i));
        let diff = (1..=references.len())
            .map(|k| (i + k) % references.len())
            .find(|&j| references[j].1 != *spk);
        let (Some(s), Some(d)) = (same, diff) else {
            continue;
        };
        let cs = cosine(emb, &references[s].0);
        let cd = cosine(emb, &references[d].0);
        res.pairs += 1;
        res.wins += (cs > cd) as usize;
        res.mean_same += cs;
        res.mean_different += cd;
    }
    if res.pairs == 0 {
        return Err(Error::input("no probe pair has both a same- and a different-speaker reference"));
    }
    res.mean_same /= res.pairs as f64;
    res.mean_different /= res.pairs as f64;
    Ok(res)
}
