use candle_core::{DType, Device, Tensor};
use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::rvq::{latent_len, rvq_quantize, LatentSequence, RvqCodebooks, RvqOutput};
use crate::audio::{center_trim, GriffinLim, MelConfig, MelSpectrogram};
use crate::batch::scalar_f64;
use crate::config::CodecConfig;
use crate::curriculum::{clip_grad_norm, AdamW, AdamWConfig};
use crate::error::{Error, Result};
use crate::features::FeatureNorm;
use crate::nn::{length_mask, Init, Linear, ParamKind, ParamStore};
use crate::seed::SeedStream;

/// Codes whose EMA usage count falls below this are re-seeded from data.
const DEAD_CODE_COUNT: f64 = 0.1;

#[derive(Debug, Clone)]
struct Mlp {
    layers: Vec<Linear>,
}

impl Mlp {
    fn new(init: &mut Init, dims: &[usize]) -> Result<Self> {
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(&mut init.pp(&format!("l{i}")), w[0], w[1], true))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { layers })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut h = x.clone();
        for (i, l) in self.layers.iter().enumerate() {
            h = l.forward(&h)?;
            if i + 1 < self.layers.len() {
                h = h.gelu()?;
            }
        }
        Ok(h)
    }
}

/// Mel autoencoder with a residual vector quantizer between encoder and decoder.
#[derive(Debug, Clone)]
pub struct CodecModel {
    cfg: CodecConfig,
    n_mels: usize,
    prefix: String,
    norm: FeatureNorm,
    enc: Mlp,
    dec: Mlp,
    trained: Tensor,
}

/// A batch of mel matrices grouped for the codec, padded by repeating each
/// item's last frame.
#[derive(Debug, Clone)]
pub struct GroupedBatch {
    /// Raw log-mel `[B, T_lat·downsample, n_mels]`.
    pub mel: Tensor,
    pub frame_lengths: Vec<usize>,
    pub latent_lengths: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CodecTrainConfig {
    pub batch_size: usize,
    pub optimizer: AdamWConfig,
    pub grad_clip: f64,
}

impl Default for CodecTrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            optimizer: AdamWConfig {
                lr: 2e-3,
                weight_decay: 0.0,
                ..AdamWConfig::default()
            },
            grad_clip: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CodecEpoch {
    pub recon: f64,
    pub commit: f64,
}

impl CodecModel {
    pub fn new(init: &mut Init, cfg: &CodecConfig, n_mels: usize, norm: FeatureNorm) -> Result<Self> {
        let group = cfg.downsample * n_mels;
        let enc = Mlp::new(&mut init.pp("enc"), &[group, cfg.hidden, cfg.hidden, cfg.d_lat])?;
        let dec = Mlp::new(&mut init.pp("dec"), &[cfg.d_lat, cfg.hidden, cfg.hidden, group])?;
        for k in 0..cfg.stages {
            let mut s = init.pp(&format!("rvq{k}"));
            s.buffer("codebook", &[cfg.n_codes, cfg.d_lat], 0.0)?;
            s.buffer("count", &[cfg.n_codes], 0.0)?;
            s.buffer("sum", &[cfg.n_codes, cfg.d_lat], 0.0)?;
        }
        let trained = init.buffer("trained", &[1], 0.0)?;
        let prefix = init.name("").trim_end_matches('.').to_string();
        Ok(Self {
            cfg: cfg.clone(),
            n_mels,
            prefix,
            norm,
            enc,
            dec,
            trained,
        })
    }

    pub fn config(&self) -> &CodecConfig {
        &self.cfg
    }

    fn name(&self, leaf: &str) -> String {
        if self.prefix.is_empty() {
            leaf.to_string()
        } else {
            format!("{}.{leaf}", self.prefix)
        }
    }

    pub fn is_trained(&self) -> Result<bool> {
        Ok(scalar_f64(&self.trained.sum_all()?)? > 0.5)
    }

    fn require_trained(&self) -> Result<()> {
        if self.is_trained()? {
            Ok(())
        } else {
            Err(Error::state("codec parameters are untrained"))
        }
    }

    pub fn trainable_names(&self, store: &ParamStore) -> Vec<String> {
        store
            .with_prefix(&self.prefix)
            .filter(|p| p.kind == ParamKind::Trainable)
            .map(|p| p.name.clone())
            .collect()
    }

    pub fn codebooks(&self, store: &ParamStore) -> Result<RvqCodebooks> {
        let stages = (0..self.cfg.stages)
            .map(|k| {
                let p = store
                    .get(&self.name(&format!("rvq{k}.codebook")))
                    .ok_or_else(|| Error::state("codebook buffer missing"))?;
                let v = p.tensor().to_dtype(DType::F32)?.flatten_all()?.to_vec1::<f32>()?;
                Ok(Array2::from_shape_vec((self.cfg.n_codes, self.cfg.d_lat), v).expect("codebook shape"))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(RvqCodebooks { stages })
    }

    pub fn group(&self, mels: &[&Array2<f32>], dtype: DType) -> Result<GroupedBatch> {
        if mels.is_empty() {
            return Err(Error::input("empty codec batch"));
        }
        let ds = self.cfg.downsample;
        let frame_lengths: Vec<usize> = mels.iter().map(|m| m.nrows()).collect();
        if frame_lengths.iter().any(|&n| n == 0) {
            return Err(Error::input("empty mel spectrogram"));
        }
        if mels.iter().any(|m| m.ncols() != self.n_mels) {
            return Err(Error::input(format!("codec expects {} mel bands", self.n_mels)));
        }
        let latent_lengths: Vec<usize> = frame_lengths.iter().map(|&n| latent_len(n, ds)).collect();
        let t = latent_lengths.iter().copied().max().unwrap() * ds;
        let f = self.n_mels;
        let mut buf = vec![0f32; mels.len() * t * f];
        for (b, m) in mels.iter().enumerate() {
            for k in 0..t {
                let row = m.row(k.min(m.nrows() - 1));
                let off = (b * t + k) * f;
                for (j, v) in row.iter().enumerate() {
                    buf[off + j] = *v;
                }
            }
        }
        let mel = Tensor::from_vec(buf, (mels.len(), t, f), &Device::Cpu)?.to_dtype(dtype)?;
        Ok(GroupedBatch {
            mel,
            frame_lengths,
            latent_lengths,
        })
    }

    /// Raw log-mel `[B, T_lat·ds, F]` → continuous latents `[B, T_lat, d_lat]`.
    pub fn encode_tensor(&self, mel: &Tensor) -> Result<Tensor> {
        let (b, t, f) = mel.dims3()?;
        let ds = self.cfg.downsample;
        if t % ds != 0 {
            return Err(Error::input("frame count must be a multiple of the downsample factor"));
        }
        let x = self.norm.normalize(mel)?.reshape((b, t / ds, ds * f))?;
        self.enc.forward(&x)
    }

    /// Latents `[B, T_lat, d_lat]` → normalized log-mel `[B, T_lat·ds, F]`.
    pub fn decode_normalized(&self, lat: &Tensor) -> Result<Tensor> {
        let (b, t, _) = lat.dims3()?;
        Ok(self.dec.forward(lat)?.reshape((b, t * self.cfg.downsample, self.n_mels))?)
    }

    pub fn decode_tensor(&self, lat: &Tensor) -> Result<Tensor> {
        self.norm.denormalize(&self.decode_normalized(lat)?)
    }

    pub fn encode(&self, mel: &MelSpectrogram, dtype: DType) -> Result<LatentSequence> {
        self.encode_frames(&mel.frames, dtype)
    }

    pub fn encode_frames(&self, frames: &Array2<f32>, dtype: DType) -> Result<LatentSequence> {
        self.require_trained()?;
        let g = self.group(&[frames], dtype)?;
        let z = self.encode_tensor(&g.mel)?.squeeze(0)?;
        LatentSequence::new(to_array2(&z)?, self.cfg.downsample)
    }

    /// Decoded log-mel frames, `[T_lat·ds × n_mels]`.
    pub fn decode_mel(&self, q: &LatentSequence, dtype: DType) -> Result<Array2<f32>> {
        self.require_trained()?;
        if q.dim() != self.cfg.d_lat || q.downsample != self.cfg.downsample {
            return Err(Error::input("latent sequence does not match codec configuration"));
        }
        if q.is_empty() {
            return Err(Error::input("empty latent sequence"));
        }
        let z = from_array2(&q.latents, dtype)?.unsqueeze(0)?;
        to_array2(&self.decode_tensor(&z)?.squeeze(0)?)
    }

    /// Quantizer + decoder + Griffin-Lim; returns exactly `T_lat·ds·hop` samples.
    pub fn decode_waveform(
        &self,
        q: &LatentSequence,
        gl: &GriffinLim,
        mel_cfg: &MelConfig,
        iters: usize,
        dtype: DType,
    ) -> Result<Vec<f32>> {
        let frames = self.decode_mel(q, dtype)?;
        let mel = MelSpectrogram {
            frames,
            hop: mel_cfg.hop,
            sample_rate: mel_cfg.sample_rate,
        };
        Ok(center_trim(&gl.invert(&mel, iters)?, mel_cfg))
    }

    /// `x + (q − x).detach()`: forward value `q`, gradient passed to `x`.
    pub fn straight_through(x: &Tensor, q: &Tensor) -> Result<Tensor> {
        Ok((x + (q - x)?.detach())?)
    }

    fn set_buffers(&self, store: &ParamStore, ema: &EmaState) -> Result<()> {
        for k in 0..self.cfg.stages {
            store.set_from_f32(&self.name(&format!("rvq{k}.codebook")), ema.codebooks.stages[k].as_slice().unwrap())?;
            let counts: Vec<f32> = ema.counts[k].iter().map(|&c| c as f32).collect();
            store.set_from_f32(&self.name(&format!("rvq{k}.count")), &counts)?;
            let sums: Vec<f32> = ema.sums[k].iter().map(|&c| c as f32).collect();
            store.set_from_f32(&self.name(&format!("rvq{k}.sum")), &sums)?;
        }
        store.set_from_f32(&self.name("trained"), &[1.0])
    }

    fn load_ema(&self, store: &ParamStore) -> Result<EmaState> {
        let codebooks = self.codebooks(store)?;
        let read = |leaf: String| -> Result<Vec<f64>> {
            let p = store.get(&leaf).ok_or_else(|| Error::state("codec buffer missing"))?;
            Ok(p.tensor().to_dtype(DType::F64)?.flatten_all()?.to_vec1::<f64>()?)
        };
        let counts = (0..self.cfg.stages)
            .map(|k| read(self.name(&format!("rvq{k}.count"))))
            .collect::<Result<Vec<_>>>()?;
        let sums = (0..self.cfg.stages)
            .map(|k| read(self.name(&format!("rvq{k}.sum"))))
            .collect::<Result<Vec<_>>>()?;
        Ok(EmaState { codebooks, counts, sums })
    }
}

pub fn to_array2(t: &Tensor) -> Result<Array2<f32>> {
    let (r, c) = t.dims2()?;
    let v = t.to_dtype(DType::F32)?.flatten_all()?.to_vec1::<f32>()?;
    Ok(Array2::from_shape_vec((r, c), v).expect("tensor shape"))
}

pub fn from_array2(a: &Array2<f32>, dtype: DType) -> Result<Tensor> {
    let v: Vec<f32> = a.iter().copied().collect();
    Ok(Tensor::from_vec(v, a.dim(), &Device::Cpu)?.to_dtype(dtype)?)
}

/// Codebooks plus their exponential-moving-average statistics.
#[derive(Debug, Clone)]
struct EmaState {
    codebooks: RvqCodebooks,
    counts: Vec<Vec<f64>>,
    sums: Vec<Vec<f64>>,
}

impl EmaState {
    fn initialize(&mut self, rows: &Array2<f32>, rng: &mut ChaCha8Rng) -> Result<()> {
        let mut residual = rows.clone();
        let n_codes = self.codebooks.stages[0].nrows();
        for k in 0..self.codebooks.n_stages() {
            let n = residual.nrows();
            let mut idx: Vec<usize> = (0..n).collect();
            idx.shuffle(rng);
            let d = residual.ncols();
            let mut book = Array2::<f32>::zeros((n_codes, d));
            for c in 0..n_codes {
                let src = residual.row(idx[c % n]);
                for j in 0..d {
                    let jitter: f64 = StandardNormal.sample(rng);
                    book[[c, j]] = src[j] + (1e-3 * jitter) as f32;
                }
            }
            self.counts[k] = vec![1.0; n_codes];
            self.sums[k] = book.iter().map(|&v| v as f64).collect();
            self.codebooks.stages[k] = book;
            let single = RvqCodebooks {
                stages: vec![self.codebooks.stages[k].clone()],
            };
            let q = rvq_quantize(&LatentSequence::new(residual.clone(), 1)?, &single)?;
            residual = &residual - &q.quantized.latents;
        }
        Ok(())
    }

    fn update(&mut self, out: &RvqOutput, decay: f64, rng: &mut ChaCha8Rng) {
        for k in 0..self.codebooks.n_stages() {
            let inputs = &out.stage_inputs[k];
            let book = &mut self.codebooks.stages[k];
            let (n_codes, d) = book.dim();
            let mut count = vec![0f64; n_codes];
            let mut sum = vec![0f64; n_codes * d];
            for (r, row) in inputs.rows().into_iter().enumerate() {
                let c = out.codes[r][k];
                count[c] += 1.0;
                for j in 0..d {
                    sum[c * d + j] += row[j] as f64;
                }
            }
            for c in 0..n_codes {
                self.counts[k][c] = decay * self.counts[k][c] + (1.0 - decay) * count[c];
                for j in 0..d {
                    let s = &mut self.sums[k][c * d + j];
                    *s = decay * *s + (1.0 - decay) * sum[c * d + j];
                }
                if self.counts[k][c] < DEAD_CODE_COUNT && inputs.nrows() > 0 {
                    let src = inputs.row(rng.random_range(0..inputs.nrows()));
                    for j in 0..d {
                        book[[c, j]] = src[j];
                        self.sums[k][c * d + j] = src[j] as f64;
                    }
                    self.counts[k][c] = 1.0;
                } else {
                    let n = self.counts[k][c].max(1e-6);
                    for j in 0..d {
                        book[[c, j]] = (self.sums[k][c * d + j] / n) as f32;
                    }
                }
            }
        }
    }
}

/// Valid latent rows of every batch item, stacked.
fn valid_rows(z: &Tensor, lengths: &[usize]) -> Result<Vec<Array2<f32>>> {
    (0..lengths.len())
        .map(|b| to_array2(&z.get(b)?.narrow(0, 0, lengths[b])?))
        .collect()
}

/// Trains the codec's encoder/decoder with a reconstruction loss plus a
/// commitment term, and its codebooks with EMA updates. Returns per-epoch
/// mean losses. Feature statistics must already be fitted.
pub fn train_codec(
    codec: &CodecModel,
    store: &ParamStore,
    mels: &[&Array2<f32>],
    epochs: usize,
    cfg: &CodecTrainConfig,
    seeds: &SeedStream,
) -> Result<Vec<CodecEpoch>> {
    if mels.is_empty() {
        return Err(Error::input("codec training set is empty"));
    }
    if cfg.batch_size == 0 {
        return Err(Error::config("batch_size must be ≥ 1"));
    }
    if epochs == 0 {
        return Ok(Vec::new());
    }
    let dtype = store.dtype();
    let names = codec.trainable_names(store);
    let mut opt = AdamW::new();
    let mut ema = codec.load_ema(store)?;
    let mut ema_rng = seeds.rng("codec-ema");
    if !codec.is_trained()? {
        let mut pick: Vec<usize> = (0..mels.len()).collect();
        pick.shuffle(&mut ema_rng);
        pick.truncate(256);
        let sample: Vec<&Array2<f32>> = pick.iter().map(|&i| mels[i]).collect();
        let g = codec.group(&sample, dtype)?;
        let z = codec.encode_tensor(&g.mel)?;
        let rows = valid_rows(&z, &g.latent_lengths)?;
        let views: Vec<_> = rows.iter().map(|r| r.view()).collect();
        let stacked = ndarray::concatenate(Axis(0), &views).map_err(|e| Error::Training(e.to_string()))?;
        ema.initialize(&stacked, &mut ema_rng)?;
    }
    let beta = codec.cfg.commitment;
    let mut history = Vec::with_capacity(epochs);
    for epoch in 0..epochs {
        let mut order: Vec<usize> = (0..mels.len()).collect();
        order.shuffle(&mut seeds.indexed("codec-epoch", epoch as u64).rng("order"));
        let (mut recon_sum, mut commit_sum, mut n_batches) = (0.0, 0.0, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&Array2<f32>> = chunk.iter().map(|&i| mels[i]).collect();
            let g = codec.group(&batch, dtype)?;
            let z = codec.encode_tensor(&g.mel)?;
            let (b, t_lat, d) = z.dims3()?;
            let rows = valid_rows(&z, &g.latent_lengths)?;
            let mut q_buf = vec![0f32; b * t_lat * d];
            let mut all_inputs: Vec<Array2<f32>> = Vec::new();
            let mut all_codes = Vec::new();
            let mut stage_inputs: Vec<Vec<Array2<f32>>> = vec![Vec::new(); codec.cfg.stages];
            for (bi, r) in rows.iter().enumerate() {
                let out = rvq_quantize(&LatentSequence::new(r.clone(), codec.cfg.downsample)?, &ema.codebooks)?;
                for (t, row) in out.quantized.latents.rows().into_iter().enumerate() {
                    let off = (bi * t_lat + t) * d;
                    for (j, v) in row.iter().enumerate() {
                        q_buf[off + j] = *v;
                    }
                }
                for (k, s) in out.stage_inputs.into_iter().enumerate() {
                    stage_inputs[k].push(s);
                }
                all_codes.extend(out.codes);
                all_inputs.push(r.clone());
            }
            let q = Tensor::from_vec(q_buf, (b, t_lat, d), &Device::Cpu)?.to_dtype(dtype)?;
            let lat_mask = length_mask(&g.latent_lengths, t_lat, dtype, &Device::Cpu)?;
            let frame_mask = length_mask(&g.frame_lengths, t_lat * codec.cfg.downsample, dtype, &Device::Cpu)?;
            let q_st = CodecModel::straight_through(&z, &q)?;
            let pred = codec.decode_normalized(&q_st)?;
            let target = codec.norm.normalize(&g.mel)?.detach();
            let n_frames: usize = g.frame_lengths.iter().sum();
            let n_lat: usize = g.latent_lengths.iter().sum();
            let recon = ((pred - target)?.sqr()?.broadcast_mul(&frame_mask)?.sum_all()? / (n_frames * codec.n_mels) as f64)?;
            let commit = ((&z - &q)?.sqr()?.broadcast_mul(&lat_mask)?.sum_all()? / (n_lat * d) as f64)?;
            let loss = (&recon + (&commit * beta)?)?;
            let lv = scalar_f64(&loss)?;
            if !lv.is_finite() {
                return Err(Error::Training(format!(
                    "codec loss became {lv} at epoch {} (recon {}, commit {})",
                    epoch + 1,
                    scalar_f64(&recon)?,
                    scalar_f64(&commit)?
                )));
            }
            let mut grads = loss.backward()?;
            clip_grad_norm(store, &mut grads, &names, cfg.grad_clip)?;
            opt.step(store, &grads, &names, &cfg.optimizer)?;
            let merged = RvqOutput {
                codes: all_codes,
                quantized: LatentSequence::new(Array2::zeros((0, d)), codec.cfg.downsample)?,
                residual_norms: Vec::new(),
                stage_inputs: stage_inputs
                    .iter()
                    .map(|s| {
                        let v: Vec<_> = s.iter().map(|a| a.view()).collect();
                        ndarray::concatenate(Axis(0), &v).expect("equal widths")
                    })
                    .collect(),
            };
            ema.update(&merged, codec.cfg.ema_decay, &mut ema_rng);
            recon_sum += scalar_f64(&recon)?;
            commit_sum += scalar_f64(&commit)?;
            n_batches += 1;
        }
        history.push(CodecEpoch {
            recon: recon_sum / n_batches as f64,
            commit: commit_sum / n_batches as f64,
        });
        tracing::debug!(epoch = epoch + 1, recon = history[epoch].recon, "codec epoch");
    }
    codec.set_buffers(store, &ema)?;
    Ok(history)
}
