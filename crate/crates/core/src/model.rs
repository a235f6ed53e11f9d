//! The full translation model: every module sharing one parameter store.

use candle_core::{DType, Device, Tensor};
use ndarray::Array2;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audio::MelConfig;
use crate::batch::{pad_tokens, pad_values, scalar_f64, stack_padded};
use crate::codec::{to_array2, CodecModel};
use crate::config::{ModelConfig, Vocab};
use crate::curriculum::{LossKind, Stage};
use crate::dataset::Example;
use crate::diffusion::DiffusionSynthesizer;
use crate::duration::{duration_loss, positional_batch, upsample_batch, ScalarPredictor};
use crate::error::{Error, Result};
use crate::features::FeatureNorm;
use crate::nat::{nat_loss, NatSynthesizer};
use crate::nn::{Dropout, Init, ParamStore};
use crate::seed::SeedStream;
use crate::translation::{phoneme_loss, AcousticBridge, AcousticEncoder, DecoderOutput, EncoderStates, PhonemeDecoder};

const DURATION_INIT: f64 = 8.0;
const VARIANCE_INIT: f64 = 4.0;
const VARIANCE_EPS: f64 = 1e-4;

/// Per-component losses; `total` is their unweighted sum.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBundle {
    pub l_p: Option<f64>,
    pub l_d: Option<f64>,
    pub l_s: Option<f64>,
    pub total: f64,
}

impl LossBundle {
    pub fn new(l_p: Option<f64>, l_d: Option<f64>, l_s: Option<f64>) -> Self {
        let total = l_p.unwrap_or(0.0) + l_d.unwrap_or(0.0) + l_s.unwrap_or(0.0);
        Self { l_p, l_d, l_s, total }
    }

    pub fn get(&self, kind: LossKind) -> Option<f64> {
        match kind {
            LossKind::Lp => self.l_p,
            LossKind::Ld => self.l_d,
            LossKind::Ls => self.l_s,
        }
    }

    pub fn is_finite(&self) -> bool {
        [self.l_p, self.l_d, self.l_s].iter().flatten().all(|v| v.is_finite()) && self.total.is_finite()
    }
}

/// Differentiable losses for one batch.
#[derive(Debug, Clone, Default)]
pub struct LossTensors {
    pub l_p: Option<Tensor>,
    pub l_d: Option<Tensor>,
    pub l_s: Option<Tensor>,
}

impl LossTensors {
    pub fn total(&self) -> Result<Tensor> {
        let mut parts = [&self.l_p, &self.l_d, &self.l_s].into_iter().flatten();
        let first = parts.next().ok_or_else(|| Error::config("no loss component requested"))?.clone();
        parts.try_fold(first, |acc, t| Ok((acc + t)?))
    }

    pub fn values(&self) -> Result<LossBundle> {
        let v = |t: &Option<Tensor>| t.as_ref().map(scalar_f64).transpose();
        Ok(LossBundle::new(v(&self.l_p)?, v(&self.l_d)?, v(&self.l_s)?))
    }
}

/// Translation-side intermediate results for a batch.
pub struct TranslationPass {
    pub enc: EncoderStates,
    pub dec: DecoderOutput,
    /// Bridged states at the phoneme positions, `[B, L, d]`.
    pub rows: Option<Tensor>,
    pub lengths: Vec<usize>,
}

pub struct S2stModel {
    pub config: ModelConfig,
    pub audio: MelConfig,
    pub vocab: Vocab,
    pub store: ParamStore,
    pub seed: u64,
    pub frontend: FeatureNorm,
    pub codec: CodecModel,
    pub encoder: AcousticEncoder,
    pub decoder: PhonemeDecoder,
    pub bridge: AcousticBridge,
    pub duration: ScalarPredictor,
    pub variance: ScalarPredictor,
    pub nat: NatSynthesizer,
    pub diffusion: DiffusionSynthesizer,
}

impl S2stModel {
    pub fn new(config: &ModelConfig, audio: &MelConfig, seed: u64, dtype: DType) -> Result<Self> {
        config.validate()?;
        audio.validate()?;
        if config.n_mels != audio.n_mels {
            return Err(Error::config(format!(
                "model expects {} mel bands, audio config produces {}",
                config.n_mels, audio.n_mels
            )));
        }
        let mut store = ParamStore::new(dtype);
        let mut rng = SeedStream::new(seed).rng("init");
        let mut init = Init::new(&mut store, &mut rng);
        let frontend = FeatureNorm::new(&mut init.pp("frontend"), config.n_mels)?;
        let codec = CodecModel::new(&mut init.pp("codec"), &config.codec, config.n_mels, frontend.clone())?;
        let encoder = AcousticEncoder::new(&mut init.pp("encoder"), config, frontend.clone())?;
        let decoder = PhonemeDecoder::new(&mut init.pp("decoder"), config)?;
        let bridge = AcousticBridge::new(&mut init.pp("bridge"), config.d_model, config.heads)?;
        let duration = ScalarPredictor::new(&mut init.pp("duration"), config, DURATION_INIT, 0.0)?;
        let variance = ScalarPredictor::new(&mut init.pp("variance"), config, VARIANCE_INIT, VARIANCE_EPS)?;
        let nat = NatSynthesizer::new(&mut init.pp("nat"), config, frontend.clone())?;
        let diffusion = DiffusionSynthesizer::new(&mut init.pp("diffusion"), config)?;
        let mut state = init.pp("state");
        state.buffer("stages", &[4], 0.0)?;
        state.buffer("norm", &[1], 0.0)?;
        Ok(Self {
            config: config.clone(),
            audio: audio.clone(),
            vocab: Vocab::new(config.n_phonemes),
            store,
            seed,
            frontend,
            codec,
            encoder,
            decoder,
            bridge,
            duration,
            variance,
            nat,
            diffusion,
        })
    }

    pub fn dtype(&self) -> DType {
        self.store.dtype()
    }

    fn flags(&self, name: &str) -> Result<Vec<f32>> {
        let p = self.store.get(name).ok_or_else(|| Error::state(format!("missing `{name}`")))?;
        Ok(p.tensor().to_dtype(DType::F32)?.to_vec1::<f32>()?)
    }

    pub fn stage_done(&self, stage: Stage) -> Result<bool> {
        Ok(self.flags("state.stages")?[stage.number() as usize - 1] > 0.5)
    }

    pub fn completed_stages(&self) -> Result<Vec<Stage>> {
        let f = self.flags("state.stages")?;
        Ok(Stage::ALL.into_iter().filter(|s| f[s.number() as usize - 1] > 0.5).collect())
    }

    pub fn mark_stage(&self, stage: Stage) -> Result<()> {
        let mut f = self.flags("state.stages")?;
        f[stage.number() as usize - 1] = 1.0;
        self.store.set_from_f32("state.stages", &f)
    }

    pub fn norm_fitted(&self) -> Result<bool> {
        Ok(self.flags("state.norm")?[0] > 0.5)
    }

    /// Fits the log-mel statistics shared by the encoder, codec and NAT output.
    pub fn fit_frontend<'a>(&self, mels: impl IntoIterator<Item = &'a Array2<f32>>) -> Result<()> {
        self.frontend.fit(&self.store, mels)?;
        self.store.set_from_f32("state.norm", &[1.0])
    }

    /// Encoder, teacher-forced decoder and, when `bridged`, the bridge rows at
    /// the phoneme input positions.
    pub fn translate_batch(
        &self,
        src_mels: &[&Array2<f32>],
        tgt_ids: &[&[u32]],
        bridged: bool,
        drop: Option<&Dropout>,
    ) -> Result<(TranslationPass, Tensor)> {
        let enc = self.encoder.forward_batch(src_mels, self.dtype(), drop)?;
        let (inputs, outputs): (Vec<_>, Vec<_>) = tgt_ids.iter().map(|ids| self.vocab.teacher_forcing(ids)).unzip();
        let (inp, _) = pad_tokens(&inputs, Vocab::PAD, &Device::Cpu)?;
        let (out, _) = pad_tokens(&outputs, Vocab::PAD, &Device::Cpu)?;
        let dec = self.decoder.forward(&inp, &enc, drop)?;
        let lengths: Vec<usize> = tgt_ids.iter().map(|ids| ids.len()).collect();
        let rows = if bridged {
            let l_max = lengths.iter().copied().max().unwrap_or(0);
            if l_max == 0 {
                return Err(Error::input("target phoneme sequences are empty"));
            }
            Some(self.bridge.forward(&dec.hidden, &enc)?.narrow(1, 1, l_max)?)
        } else {
            None
        };
        Ok((TranslationPass { enc, dec, rows, lengths }, out))
    }

    /// Losses for a teacher-forced batch. `src_override` replaces the source
    /// mels (augmentation).
    pub fn losses(
        &self,
        items: &[&Example],
        src_override: Option<&[Array2<f32>]>,
        kinds: &[LossKind],
        drop: Option<&Dropout>,
    ) -> Result<LossTensors> {
        if items.is_empty() {
            return Err(Error::input("empty batch"));
        }
        let src: Vec<&Array2<f32>> = match src_override {
            Some(m) => m.iter().collect(),
            None => items.iter().map(|e| &e.src_mel).collect(),
        };
        let ids: Vec<&[u32]> = items.iter().map(|e| e.tgt_ids.as_slice()).collect();
        let need_rows = kinds.contains(&LossKind::Ld) || kinds.contains(&LossKind::Ls);
        let (pass, out) = self.translate_batch(&src, &ids, need_rows, drop)?;
        let mut l = LossTensors::default();
        if kinds.contains(&LossKind::Lp) {
            l.l_p = Some(phoneme_loss(&pass.dec.logits, &out, Vocab::PAD)?);
        }
        let Some(rows) = pass.rows else { return Ok(l) };
        let lengths = &pass.lengths;
        let truth: Vec<Vec<f64>> = items
            .iter()
            .map(|e| e.tgt_durations.iter().map(|&d| d as f64).collect())
            .collect();
        if kinds.contains(&LossKind::Ld) {
            let pred = self.duration.forward(&rows, lengths, drop)?;
            let t: Vec<Vec<f32>> = truth.iter().map(|d| d.iter().map(|&v| v as f32).collect()).collect();
            let t = pad_values(&t, 0.0, self.dtype(), &Device::Cpu)?;
            l.l_d = Some(duration_loss(&pred, &t, lengths)?);
        }
        if kinds.contains(&LossKind::Ls) {
            let var = self.variance.forward(&rows, lengths, drop)?;
            let n_frames: Vec<usize> = items.iter().map(|e| e.n_target_frames()).collect();
            let frames = upsample_batch(&rows, &truth, &var, &n_frames)?;
            let pos = positional_batch(&truth, &n_frames, self.config.d_pos, self.dtype(), &Device::Cpu)?;
            let pred = self.nat.forward(&frames, &pos, &n_frames, drop)?;
            let views: Vec<_> = items.iter().map(|e| e.tgt_mel.view()).collect();
            let (target, _) = stack_padded(&views, self.dtype(), &Device::Cpu)?;
            l.l_s = Some(nat_loss(&pred, &target, &n_frames)?);
        }
        Ok(l)
    }

    /// Eval-mode loss values averaged over `items` in batches of `batch_size`,
    /// weighted by batch size.
    pub fn evaluate_losses(&self, items: &[&Example], kinds: &[LossKind], batch_size: usize) -> Result<LossBundle> {
        if items.is_empty() {
            return Err(Error::input("nothing to evaluate"));
        }
        let mut acc = [0f64; 3];
        let mut n = 0usize;
        for chunk in items.chunks(batch_size.max(1)) {
            let v = self.losses(chunk, None, kinds, None)?.values()?;
            for (a, x) in acc.iter_mut().zip([v.l_p, v.l_d, v.l_s]) {
                *a += x.unwrap_or(0.0) * chunk.len() as f64;
            }
            n += chunk.len();
        }
        let pick = |k: LossKind, i: usize| kinds.contains(&k).then(|| acc[i] / n as f64);
        Ok(LossBundle::new(pick(LossKind::Lp, 0), pick(LossKind::Ld, 1), pick(LossKind::Ls, 2)))
    }

    /// Teacher-forced synthesizer conditioning per item: upsampled bridge
    /// states with ground-truth durations and predicted variances `[T, d]`,
    /// and the duration encoding `[T, d_pos]`.
    pub fn teacher_forced_conditioning(&self, items: &[&Example], batch_size: usize) -> Result<Vec<(Array2<f32>, Array2<f32>)>> {
        let mut out = Vec::with_capacity(items.len());
        for chunk in items.chunks(batch_size.max(1)) {
            let src: Vec<&Array2<f32>> = chunk.iter().map(|e| &e.src_mel).collect();
            let ids: Vec<&[u32]> = chunk.iter().map(|e| e.tgt_ids.as_slice()).collect();
            let (pass, _) = self.translate_batch(&src, &ids, true, None)?;
            let rows = pass.rows.expect("bridged rows requested");
            let var = self.variance.forward(&rows, &pass.lengths, None)?;
            let truth: Vec<Vec<f64>> = chunk
                .iter()
                .map(|e| e.tgt_durations.iter().map(|&d| d as f64).collect())
                .collect();
            let n_frames: Vec<usize> = chunk.iter().map(|e| e.n_target_frames()).collect();
            let frames = upsample_batch(&rows, &truth, &var, &n_frames)?;
            let pos = positional_batch(&truth, &n_frames, self.config.d_pos, self.dtype(), &Device::Cpu)?;
            for (b, &n) in n_frames.iter().enumerate() {
                out.push((
                    to_array2(&frames.get(b)?.narrow(0, 0, n)?)?,
                    to_array2(&pos.get(b)?.narrow(0, 0, n)?)?,
                ));
            }
        }
        Ok(out)
    }

    /// Predicted durations (frames) for teacher-forced targets.
    pub fn predicted_durations(&self, items: &[&Example], batch_size: usize) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::with_capacity(items.len());
        for chunk in items.chunks(batch_size.max(1)) {
            let src: Vec<&Array2<f32>> = chunk.iter().map(|e| &e.src_mel).collect();
            let ids: Vec<&[u32]> = chunk.iter().map(|e| e.tgt_ids.as_slice()).collect();
            let (pass, _) = self.translate_batch(&src, &ids, true, None)?;
            let pred = self
                .duration
                .forward(pass.rows.as_ref().expect("rows"), &pass.lengths, None)?
                .to_dtype(DType::F64)?
                .to_vec2::<f64>()?;
            for (row, &l) in pred.into_iter().zip(&pass.lengths) {
                out.push(row[..l].to_vec());
            }
        }
        Ok(out)
    }

    /// Teacher-forced next-token accuracy over non-pad target positions.
    pub fn teacher_forced_accuracy(&self, items: &[&Example], batch_size: usize) -> Result<f64> {
        let (mut hit, mut total) = (0usize, 0usize);
        for chunk in items.chunks(batch_size.max(1)) {
            let src: Vec<&Array2<f32>> = chunk.iter().map(|e| &e.src_mel).collect();
            let ids: Vec<&[u32]> = chunk.iter().map(|e| e.tgt_ids.as_slice()).collect();
            let (pass, out) = self.translate_batch(&src, &ids, false, None)?;
            let pred = pass.dec.logits.argmax(2)?.to_vec2::<u32>()?;
            let truth = out.to_vec2::<u32>()?;
            for (p, t) in pred.iter().zip(&truth) {
                for (a, b) in p.iter().zip(t) {
                    if *b != Vocab::PAD {
                        total += 1;
                        hit += (a == b) as usize;
                    }
                }
            }
        }
        if total == 0 {
            return Err(Error::input("nothing to score"));
        }
        Ok(hit as f64 / total as f64)
    }

    /// Fresh dropout driven by `rng`, or none when `p == 0`.
    pub fn dropout(p: f64, rng: ChaCha8Rng) -> Option<Dropout> {
        (p > 0.0).then(|| Dropout::new(p, rng))
    }
}
