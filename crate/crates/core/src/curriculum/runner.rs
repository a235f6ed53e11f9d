use std::collections::BTreeMap;
use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::augment::spec_augment;
use super::freeze::freeze_select;
use super::mix::{assign_tasks, Task};
use super::optim::{clip_grad_norm, AdamW, AdamWConfig, LrOnPlateau};
use super::plan::{LossKind, Stage, StagePlan};
use crate::checkpoint;
use crate::codec::{to_array2, train_codec, CodecTrainConfig};
use crate::dataset::{Dataset, Example};
use crate::diffusion::{evaluate_flow, train_flow_epoch, FlowExample, FlowTrainConfig};
use crate::error::{Error, Result};
use crate::model::{LossBundle, S2stModel};
use crate::seed::SeedStream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub stage: u8,
    /// `codec`, `diffusion` or `train`.
    pub phase: String,
    /// 1-based.
    pub epoch: usize,
    pub lr: f64,
    pub train: LossBundle,
    pub val: Option<LossBundle>,
    #[serde(default)]
    pub extra: BTreeMap<String, f64>,
}

/// Everything needed to continue a stage where it stopped.
#[derive(Debug, Clone)]
pub struct TrainingState {
    pub stage: Stage,
    pub epochs_done: usize,
    pub scheduler: LrOnPlateau,
    pub optimizer: AdamW,
    pub log: Vec<EpochMetrics>,
}

impl TrainingState {
    pub fn fresh(plan: &StagePlan) -> Self {
        Self {
            stage: plan.stage,
            epochs_done: 0,
            scheduler: LrOnPlateau::new(plan.lr, plan.plateau),
            optimizer: AdamW::new(),
            log: Vec::new(),
        }
    }
}

#[derive(Debug, Default)]
pub struct RunOptions<'a> {
    /// Rewritten after every epoch.
    pub checkpoint: Option<&'a Path>,
    /// Continue from this state; must belong to the same stage.
    pub resume: Option<TrainingState>,
    /// Stop after this many epochs in this call (the stage stays incomplete).
    pub stop_after: Option<usize>,
}

#[derive(Debug)]
pub struct StageOutcome {
    pub state: TrainingState,
    pub completed: bool,
}

fn check_prerequisites(model: &S2stModel, stage: Stage) -> Result<()> {
    for &p in stage.prerequisites() {
        if !model.stage_done(p)? {
            return Err(Error::state(format!(
                "{stage} requires {p}, which this model has not completed; resume from a checkpoint written after it"
            )));
        }
    }
    Ok(())
}

fn epoch_seeds(model: &S2stModel, stage: Stage, epoch: usize) -> SeedStream {
    SeedStream::new(model.seed)
        .child(&format!("stage{}", stage.number()))
        .indexed("epoch", epoch as u64)
}

/// Runs (or continues) one curriculum stage. Only parameters selected by the
/// plan change; per-epoch metrics accumulate in the returned state.
pub fn run_stage(model: &S2stModel, plan: &StagePlan, data: &Dataset, opts: RunOptions) -> Result<StageOutcome> {
    plan.validate()?;
    check_prerequisites(model, plan.stage)?;
    if data.is_empty() {
        return Err(Error::input("training data is empty"));
    }
    let mut state = match opts.resume {
        Some(s) if s.stage != plan.stage => {
            return Err(Error::state(format!(
                "resume state belongs to {}, not {}",
                s.stage, plan.stage
            )))
        }
        Some(s) => s,
        None => TrainingState::fresh(plan),
    };
    let (train, val) = data.split(plan.val_fraction);
    if !model.norm_fitted()? {
        model.fit_frontend(train.iter().flat_map(|e| [&e.src_mel, &e.tgt_mel]))?;
    }
    let budget = opts.stop_after.unwrap_or(usize::MAX);
    let ckpt = opts.checkpoint;
    match plan.stage {
        Stage::S1DiffusionPretrain => run_s1(model, plan, &train, &val, &mut state, budget, ckpt)?,
        Stage::S2S2ttPretrain | Stage::S3JointNat => run_supervised(model, plan, &train, &val, &mut state, budget, ckpt)?,
        Stage::S4DiffusionFinetune => run_s4(model, plan, &train, &val, &mut state, budget, ckpt)?,
    }
    let completed = state.epochs_done >= plan.epochs;
    if completed {
        model.mark_stage(plan.stage)?;
        if let Some(path) = ckpt {
            checkpoint::save(path, model, Some(&state))?;
        }
    }
    Ok(StageOutcome { state, completed })
}

fn after_epoch(model: &S2stModel, state: &mut TrainingState, metrics: EpochMetrics, ckpt: Option<&Path>) -> Result<()> {
    tracing::info!(
        stage = metrics.stage,
        phase = %metrics.phase,
        epoch = metrics.epoch,
        lr = metrics.lr,
        train = metrics.train.total,
        val = metrics.val.map(|v| v.total),
        "epoch"
    );
    let metric = metrics.val.map(|v| v.total).unwrap_or(metrics.train.total);
    state.scheduler.observe(metric);
    state.log.push(metrics);
    state.epochs_done += 1;
    if let Some(path) = ckpt {
        checkpoint::save(path, model, Some(state))?;
    }
    Ok(())
}

fn run_supervised(
    model: &S2stModel,
    plan: &StagePlan,
    train: &[&Example],
    val: &[&Example],
    state: &mut TrainingState,
    budget: usize,
    ckpt: Option<&Path>,
) -> Result<()> {
    let names = freeze_select(&model.store, &plan.trainable)?.trainable;
    let mut ran = 0;
    while state.epochs_done < plan.epochs && ran < budget {
        let epoch = state.epochs_done;
        let seeds = epoch_seeds(model, plan.stage, epoch);
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut seeds.rng("order"));
        let batches: Vec<&[usize]> = order.chunks(plan.batch_size).collect();
        let tasks = assign_tasks(batches.len(), plan.mix_ratio, &mut seeds.rng("tasks"));
        let drop = S2stModel::dropout(plan.dropout, seeds.rng("dropout"));
        let mut aug_rng = seeds.rng("augment");
        let lr = state.scheduler.lr;
        let hyper = AdamWConfig {
            lr,
            weight_decay: plan.weight_decay,
            ..AdamWConfig::default()
        };
        let mut sums = [0f64; 3];
        let mut counts = [0usize; 3];
        for (chunk, task) in batches.iter().zip(&tasks) {
            let items: Vec<&Example> = chunk.iter().map(|&i| train[i]).collect();
            let augmented: Option<Vec<Array2<f32>>> = plan.augment.then(|| {
                items
                    .iter()
                    .map(|e| spec_augment(&e.src_mel, &mut aug_rng, &plan.spec_augment))
                    .collect()
            });
            let kinds: &[LossKind] = match task {
                Task::S2tt => &[LossKind::Lp],
                Task::S2st => &plan.losses,
            };
            let losses = model.losses(&items, augmented.as_deref(), kinds, drop.as_ref())?;
            let values = losses.values()?;
            if !values.is_finite() {
                return Err(Error::Training(format!(
                    "{} epoch {}: non-finite loss {values:?}",
                    plan.stage,
                    epoch + 1
                )));
            }
            let mut grads = losses.total()?.backward()?;
            clip_grad_norm(&model.store, &mut grads, &names, plan.grad_clip)?;
            state.optimizer.step(&model.store, &grads, &names, &hyper)?;
            for (i, v) in [values.l_p, values.l_d, values.l_s].into_iter().enumerate() {
                if let Some(v) = v {
                    sums[i] += v;
                    counts[i] += 1;
                }
            }
        }
        let mean = |i: usize| (counts[i] > 0).then(|| sums[i] / counts[i] as f64);
        let train_bundle = LossBundle::new(mean(0), mean(1), mean(2));
        let val_bundle = if val.is_empty() {
            None
        } else {
            Some(model.evaluate_losses(val, &plan.losses, plan.batch_size)?)
        };
        let metrics = EpochMetrics {
            stage: plan.stage.number(),
            phase: "train".into(),
            epoch: epoch + 1,
            lr,
            train: train_bundle,
            val: val_bundle,
            extra: BTreeMap::new(),
        };
        after_epoch(model, state, metrics, ckpt)?;
        ran += 1;
    }
    Ok(())
}

/// Continuous (pre-quantization) codec latents of each mel.
pub fn encode_latents(model: &S2stModel, mels: &[&Array2<f32>], batch_size: usize) -> Result<Vec<Array2<f32>>> {
    let mut out = Vec::with_capacity(mels.len());
    for chunk in mels.chunks(batch_size.max(1)) {
        let g = model.codec.group(chunk, model.dtype())?;
        let z = model.codec.encode_tensor(&g.mel)?;
        for (b, &n) in g.latent_lengths.iter().enumerate() {
            out.push(to_array2(&z.get(b)?.narrow(0, 0, n)?)?);
        }
    }
    Ok(out)
}

fn flow_config(plan: &StagePlan, full_mask_prob: f64, dropout: f64) -> FlowTrainConfig {
    FlowTrainConfig {
        batch_size: plan.batch_size,
        optimizer: AdamWConfig {
            lr: plan.lr,
            weight_decay: plan.weight_decay,
            ..AdamWConfig::default()
        },
        grad_clip: plan.grad_clip,
        mask: plan.mask,
        flow: plan.flow,
        full_mask_prob,
        dropout,
    }
}

#[allow(clippy::too_many_arguments)]
fn flow_epochs(
    model: &S2stModel,
    plan: &StagePlan,
    cfg: &FlowTrainConfig,
    train: &[FlowExample],
    val: &[FlowExample],
    fixed: (Option<f64>, Option<f64>),
    state: &mut TrainingState,
    budget: usize,
    ckpt: Option<&Path>,
) -> Result<()> {
    let names = freeze_select(&model.store, &plan.trainable)?.trainable;
    let mut ran = 0;
    while state.epochs_done < plan.epochs && ran < budget {
        let epoch = state.epochs_done;
        let seeds = epoch_seeds(model, plan.stage, epoch);
        let lr = state.scheduler.lr;
        let loss = train_flow_epoch(
            &model.diffusion,
            &model.store,
            &mut state.optimizer,
            &names,
            train,
            cfg,
            lr,
            &mut seeds.rng("flow"),
        )?;
        let val_loss = if val.is_empty() {
            None
        } else {
            let mut rng = SeedStream::new(model.seed).child("flow-validation").rng("masks");
            Some(evaluate_flow(&model.diffusion, val, cfg, model.dtype(), &mut rng)?)
        };
        let metrics = EpochMetrics {
            stage: plan.stage.number(),
            phase: "diffusion".into(),
            epoch: epoch + 1,
            lr,
            train: LossBundle::new(None, fixed.0, Some(loss)),
            val: val_loss.map(|v| LossBundle::new(None, fixed.1, Some(v))),
            extra: BTreeMap::new(),
        };
        after_epoch(model, state, metrics, ckpt)?;
        ran += 1;
    }
    Ok(())
}

fn run_s1(
    model: &S2stModel,
    plan: &StagePlan,
    train: &[&Example],
    val: &[&Example],
    state: &mut TrainingState,
    budget: usize,
    ckpt: Option<&Path>,
) -> Result<()> {
    if !model.codec.is_trained()? {
        if plan.codec_epochs == 0 {
            return Err(Error::config("stage 1 needs codec_epochs ≥ 1 while the codec is untrained"));
        }
        let mels: Vec<&Array2<f32>> = train.iter().map(|e| &e.tgt_mel).collect();
        let cfg = CodecTrainConfig {
            batch_size: plan.batch_size,
            optimizer: AdamWConfig {
                lr: plan.lr,
                weight_decay: plan.weight_decay,
                ..AdamWConfig::default()
            },
            grad_clip: plan.grad_clip,
        };
        let seeds = SeedStream::new(model.seed).child("stage1").child("codec");
        let hist = train_codec(&model.codec, &model.store, &mels, plan.codec_epochs, &cfg, &seeds)?;
        for (i, h) in hist.iter().enumerate() {
            state.log.push(EpochMetrics {
                stage: 1,
                phase: "codec".into(),
                epoch: i + 1,
                lr: plan.lr,
                train: LossBundle::default(),
                val: None,
                extra: BTreeMap::from([("recon".to_string(), h.recon), ("commit".to_string(), h.commit)]),
            });
        }
        if let Some(path) = ckpt {
            checkpoint::save(path, model, Some(state))?;
        }
    }
    let bs = plan.batch_size;
    let train_lat = encode_latents(model, &train.iter().map(|e| &e.tgt_mel).collect::<Vec<_>>(), bs)?;
    let val_lat = encode_latents(model, &val.iter().map(|e| &e.tgt_mel).collect::<Vec<_>>(), bs)?;
    if state.epochs_done == 0 {
        model.diffusion.latent_norm().fit(&model.store, &train_lat)?;
    }
    let wrap = |v: Vec<Array2<f32>>| -> Vec<FlowExample> {
        v.into_iter().map(|latents| FlowExample { latents, cond: None }).collect()
    };
    let cfg = flow_config(plan, 0.0, plan.dropout);
    flow_epochs(model, plan, &cfg, &wrap(train_lat), &wrap(val_lat), (None, None), state, budget, ckpt)
}

fn conditioned_examples(model: &S2stModel, items: &[&Example], bs: usize) -> Result<Vec<FlowExample>> {
    let cond = model.teacher_forced_conditioning(items, bs)?;
    let lat = encode_latents(model, &items.iter().map(|e| &e.tgt_mel).collect::<Vec<_>>(), bs)?;
    Ok(lat
        .into_iter()
        .zip(cond)
        .map(|(latents, c)| FlowExample { latents, cond: Some(c) })
        .collect())
}

fn run_s4(
    model: &S2stModel,
    plan: &StagePlan,
    train: &[&Example],
    val: &[&Example],
    state: &mut TrainingState,
    budget: usize,
    ckpt: Option<&Path>,
) -> Result<()> {
    let bs = plan.batch_size;
    // The translation stack is frozen, so conditioning and L_d are constants.
    let train_ex = conditioned_examples(model, train, bs)?;
    let val_ex = conditioned_examples(model, val, bs)?;
    let ld_train = model.evaluate_losses(train, &[LossKind::Ld], bs)?.l_d;
    let ld_val = if val.is_empty() {
        None
    } else {
        model.evaluate_losses(val, &[LossKind::Ld], bs)?.l_d
    };
    let cfg = flow_config(plan, plan.full_mask_prob, plan.dropout);
    flow_epochs(model, plan, &cfg, &train_ex, &val_ex, (ld_train, ld_val), state, budget, ckpt)
}

