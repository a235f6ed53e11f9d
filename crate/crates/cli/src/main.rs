use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use candle_core::DType;
use clap::{Parser, Subcommand};
use serde_json::json;

use s2st::checkpoint;
use s2st::curriculum::{run_stage, RunOptions, Stage, StagePlan};
use s2st::data::{generate_corpus, read_audio, read_manifest, write_audio, write_manifest};
use s2st::dataset::Dataset;
use s2st::eval::{
    evaluate, latency_report, measure_latency, summary_report, EmbedderConfig, ReproHeader, SpeakerEmbedder,
    SynthPipeline,
};
use s2st::model::S2stModel;
use s2st::pipeline::{InferenceConfig, Pipeline, Synth};
use s2st::settings::PipelineConfig;
use s2st::{Error, Result};

#[derive(Parser)]
#[command(name = "s2st", version, about = "Toy direct speech-to-speech translation")]
struct Cli {
    /// Settings document (TOML); built-in defaults otherwise.
    #[arg(long, global = true)]
    settings: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic parallel corpus and its manifest.
    GenData {
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        n_pairs: Option<usize>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Run one curriculum stage.
    Train {
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=4))]
        stage: u8,
        /// Stage plan (TOML).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Checkpoint to start from.
        #[arg(long)]
        resume: Option<PathBuf>,
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Output checkpoint, rewritten every epoch.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Translate one audio file.
    Infer {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, default_value = "diffusion")]
        synth: Synth,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        knobs: Knobs,
    },
    /// Score a checkpoint on a manifest.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long, default_value = "diffusion")]
        synth: Synth,
        /// Evaluate only the first N pairs.
        #[arg(long)]
        limit: Option<usize>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[command(flatten)]
        knobs: Knobs,
    },
    /// Measure latency of both synthesizers on identical inputs.
    Bench {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long, default_value_t = 3)]
        reps: usize,
        #[arg(long, default_value_t = 1)]
        warmup: usize,
        /// Number of source utterances to time.
        #[arg(long, default_value_t = 8)]
        limit: usize,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[command(flatten)]
        knobs: Knobs,
    },
}

#[derive(clap::Args, Clone, Copy)]
struct Knobs {
    #[arg(long)]
    beam: Option<usize>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    guidance: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

impl Knobs {
    fn apply(self, base: &InferenceConfig) -> InferenceConfig {
        InferenceConfig {
            beam: self.beam.unwrap_or(base.beam),
            steps: self.steps.unwrap_or(base.steps),
            guidance: self.guidance.unwrap_or(base.guidance),
            seed: self.seed.unwrap_or(base.seed),
            ..base.clone()
        }
    }
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Serialization(e.to_string()))?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn header(settings: &PipelineConfig, seed: u64, ckpts: &[(&str, &Path)]) -> Result<ReproHeader> {
    let mut map = BTreeMap::new();
    for (name, path) in ckpts {
        map.insert(name.to_string(), checkpoint::file_sha256(path)?);
    }
    ReproHeader::new(settings, seed, map)
}

fn load_dataset(path: &Path, settings: &PipelineConfig, limit: Option<usize>) -> Result<(Dataset, Vec<s2st::data::ParallelPair>)> {
    let manifest = read_manifest(path)?;
    let mut pairs = manifest.load_all()?;
    if let Some(n) = limit {
        pairs.truncate(n);
    }
    let data = Dataset::from_pairs(&pairs, &settings.audio)?;
    Ok((data, pairs))
}

fn gen_data(settings: &PipelineConfig, seed: Option<u64>, n_pairs: Option<usize>, out_dir: Option<PathBuf>) -> Result<()> {
    let seed = seed.unwrap_or(settings.seed);
    let n = n_pairs.unwrap_or(settings.n_pairs);
    let dir = out_dir.unwrap_or_else(|| settings.paths.data_dir.clone());
    let pairs = generate_corpus(seed, n, &settings.corpus, &settings.audio)?;
    let path = dir.join("manifest.jsonl");
    write_manifest(&pairs, &path, settings.audio.sample_rate)?;
    write_json(
        &dir.join("header.json"),
        &json!({ "header": header(settings, seed, &[])?, "n_pairs": n }),
    )?;
    println!("wrote {n} pairs to {}", path.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn train(
    settings: &PipelineConfig,
    stage: u8,
    config: Option<PathBuf>,
    resume: Option<PathBuf>,
    manifest: Option<PathBuf>,
    out: Option<PathBuf>,
    epochs: Option<usize>,
) -> Result<()> {
    let stage = Stage::from_number(stage)?;
    let mut plan = match &config {
        Some(p) => StagePlan::load(p)?,
        None => settings.plan(stage),
    };
    if plan.stage != stage {
        return Err(Error::config(format!("--stage {} but the plan describes {}", stage.number(), plan.stage)));
    }
    if let Some(e) = epochs {
        plan.epochs = e;
    }
    let manifest = manifest
        .or_else(|| plan.dataset.clone())
        .unwrap_or_else(|| settings.manifest_path());
    let (data, _) = load_dataset(&manifest, settings, None)?;
    let (model, state) = match &resume {
        Some(p) => checkpoint::load(p)?,
        None => (
            S2stModel::new(&settings.model, &settings.audio, settings.seed, DType::F32)?,
            None,
        ),
    };
    let state = state.filter(|s| s.stage == stage && s.epochs_done < plan.epochs && !model.stage_done(stage).unwrap_or(false));
    let out = out.unwrap_or_else(|| settings.paths.checkpoint_dir.join(format!("stage{}.ckpt", stage.number())));
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let outcome = run_stage(
        &model,
        &plan,
        &data,
        RunOptions {
            checkpoint: Some(&out),
            resume: state,
            stop_after: None,
        },
    )?;
    let mut ckpts = vec![("output", out.as_path())];
    if let Some(p) = &resume {
        ckpts.push(("resumed", p.as_path()));
    }
    let log_path = out.with_extension("log.json");
    write_json(
        &log_path,
        &json!({
            "header": header(settings, model.seed, &ckpts)?,
            "plan": plan,
            "log": outcome.state.log,
        }),
    )?;
    for e in &outcome.state.log {
        println!(
            "{} epoch {:>3} lr {:.2e} train {:.4} val {}",
            e.phase,
            e.epoch,
            e.lr,
            e.train.total,
            e.val.map(|v| format!("{:.4}", v.total)).unwrap_or_else(|| "-".into())
        );
    }
    println!("{} complete; checkpoint {}", stage, out.display());
    Ok(())
}

fn infer(settings: &PipelineConfig, input: &Path, ckpt: &Path, synth: Synth, out: Option<PathBuf>, knobs: Knobs) -> Result<()> {
    let (waveform, sr) = read_audio(input)?;
    let (model, _) = checkpoint::load(ckpt)?;
    if sr != model.audio.sample_rate {
        return Err(Error::input(format!(
            "{} is sampled at {sr} Hz, the model expects {} Hz",
            input.display(),
            model.audio.sample_rate
        )));
    }
    let cfg = knobs.apply(&settings.inference);
    let pipeline = Pipeline::new(&model, cfg.clone())?;
    let t = pipeline.translate(&waveform, synth)?;
    let out = out.unwrap_or_else(|| input.with_extension("translated.f32"));
    write_audio(&out, &t.waveform, model.audio.sample_rate)?;
    write_json(
        &out.with_extension("json"),
        &json!({
            "header": header(settings, cfg.seed, &[("model", ckpt)])?,
            "synth": synth,
            "inference": cfg,
            "phonemes": t.phonemes,
            "durations": t.durations,
            "timings": t.timings,
            "total_s": t.timings.total(),
        }),
    )?;
    println!("phonemes {:?}", t.phonemes);
    println!("wrote {} ({:.3} s of audio)", out.display(), t.waveform.len() as f64 / model.audio.sample_rate as f64);
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn eval(
    settings: &PipelineConfig,
    ckpt: &Path,
    manifest: Option<PathBuf>,
    synth: Synth,
    limit: Option<usize>,
    out_dir: Option<PathBuf>,
    knobs: Knobs,
) -> Result<()> {
    let manifest = manifest.unwrap_or_else(|| settings.manifest_path());
    let (model, _) = checkpoint::load(ckpt)?;
    let (data, _) = load_dataset(&manifest, settings, limit)?;
    let embedder = if data.n_speakers >= 2 {
        Some(SpeakerEmbedder::train_bilingual(&data.examples, data.n_speakers, &EmbedderConfig::default())?)
    } else {
        None
    };
    let cfg = knobs.apply(&settings.inference);
    let pipeline = Pipeline::new(&model, cfg.clone())?;
    let items: Vec<_> = data.examples.iter().collect();
    let out = evaluate(&pipeline, &items, synth, embedder.as_ref(), 32)?;
    let report = summary_report(&[out.summary], Some(header(settings, cfg.seed, &[("model", ckpt)])?));
    let dir = out_dir.unwrap_or_else(|| settings.paths.report_dir.clone());
    let (j, t) = report.write(&dir)?;
    print!("{}", report.to_text()?);
    println!("wrote {} and {}", j.display(), t.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn bench(
    settings: &PipelineConfig,
    ckpt: &Path,
    manifest: Option<PathBuf>,
    reps: usize,
    warmup: usize,
    limit: usize,
    out_dir: Option<PathBuf>,
    knobs: Knobs,
) -> Result<()> {
    let manifest = manifest.unwrap_or_else(|| settings.manifest_path());
    let (model, _) = checkpoint::load(ckpt)?;
    let pairs = read_manifest(&manifest)?.load_all()?;
    let inputs: Vec<Vec<f32>> = pairs.into_iter().take(limit).map(|p| p.source.waveform).collect();
    let cfg = knobs.apply(&settings.inference);
    let pipeline = Pipeline::new(&model, cfg.clone())?;
    let mut reports = Vec::new();
    for synth in [Synth::Nat, Synth::Diffusion] {
        let target = SynthPipeline { pipeline: &pipeline, synth };
        reports.push(measure_latency(&synth.to_string(), &target, &inputs, model.audio.sample_rate, warmup, reps)?);
    }
    let report = latency_report(&reports, Some(header(settings, cfg.seed, &[("model", ckpt)])?));
    let dir = out_dir.unwrap_or_else(|| settings.paths.report_dir.join("bench"));
    let (j, t) = report.write(&dir)?;
    print!("{}", report.to_text()?);
    println!("wrote {} and {}", j.display(), t.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let settings = match &cli.settings {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    match cli.command {
        Command::GenData { seed, n_pairs, out_dir } => gen_data(&settings, seed, n_pairs, out_dir),
        Command::Train {
            stage,
            config,
            resume,
            manifest,
            out,
            epochs,
        } => train(&settings, stage, config, resume, manifest, out, epochs),
        Command::Infer {
            input,
            ckpt,
            synth,
            out,
            knobs,
        } => infer(&settings, &input, &ckpt, synth, out, knobs),
        Command::Eval {
            ckpt,
            manifest,
            synth,
            limit,
            out_dir,
            knobs,
        } => eval(&settings, &ckpt, manifest, synth, limit, out_dir, knobs),
        Command::Bench {
            ckpt,
            manifest,
            reps,
            warmup,
            limit,
            out_dir,
            knobs,
        } => bench(&settings, &ckpt, manifest, reps, warmup, limit, out_dir, knobs),
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()))
        .with_writer(std::io::stderr)
        .init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error [{}]: {e}", e.category());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
