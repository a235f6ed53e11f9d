use candle_core::DType;
use s2st::audio::{mel_spectrogram, MelConfig};
use s2st::config::ModelConfig;
use s2st::curriculum::{run_stage, RunOptions, Stage, StagePlan};
use s2st::data::{generate_corpus, CorpusConfig};
use s2st::dataset::Dataset;
use s2st::model::S2stModel;
use s2st::pipeline::{InferenceConfig, Pipeline, Synth};
use s2st::Error;

fn model(seed: u64) -> S2stModel {
    S2stModel::new(&ModelConfig::tiny(), &MelConfig::default(), seed, DType::F32).unwrap()
}

/// A tiny model with a briefly trained codec, flagged as fully trained.
fn ready(seed: u64) -> S2stModel {
    let m = model(seed);
    let pairs = generate_corpus(5, 12, &CorpusConfig::default(), &m.audio).unwrap();
    let data = Dataset::from_pairs(&pairs, &m.audio).unwrap();
    let plan = StagePlan {
        epochs: 1,
        batch_size: 8,
        codec_epochs: 1,
        ..StagePlan::default_for(Stage::S1DiffusionPretrain)
    };
    run_stage(&m, &plan, &data, RunOptions::default()).unwrap();
    for s in [Stage::S2S2ttPretrain, Stage::S3JointNat, Stage::S4DiffusionFinetune] {
        m.mark_stage(s).unwrap();
    }
    m
}

fn waveform() -> Vec<f32> {
    let pairs = generate_corpus(3, 1, &CorpusConfig::default(), &MelConfig::default()).unwrap();
    pairs[0].source.waveform.clone()
}

#[test]
fn defaults() {
    let c = InferenceConfig::default();
    assert_eq!((c.beam, c.steps, c.guidance), (5, 25, 1.0));
    assert_eq!("nat".parse::<Synth>().unwrap(), Synth::Nat);
    assert!(matches!("wavenet".parse::<Synth>(), Err(Error::Config(_))));
    assert!(InferenceConfig { steps: 0, ..c.clone() }.validate().is_err());
    assert!(InferenceConfig { guidance: f64::NAN, ..c }.validate().is_err());
}

#[test]
fn synthesizer_requires_its_stage() {
    let m = model(1);
    let p = Pipeline::new(&m, InferenceConfig::default()).unwrap();
    let x = waveform();
    assert!(matches!(p.translate(&x, Synth::Nat), Err(Error::State(_))));
    m.mark_stage(Stage::S3JointNat).unwrap();
    assert!(p.translate(&x, Synth::Nat).is_ok());
    match p.translate(&x, Synth::Diffusion) {
        Err(Error::State(msg)) => assert!(msg.contains("stage 4"), "{msg}"),
        other => panic!("expected a state error, got {other:?}"),
    }
}

#[test]
fn translation_is_deterministic_and_sized() {
    let m = ready(2);
    let x = waveform();
    let cfg = InferenceConfig { griffin_lim_iters: 4, ..InferenceConfig::default() };
    let p = Pipeline::new(&m, cfg).unwrap();
    for synth in [Synth::Nat, Synth::Diffusion] {
        let a = p.translate(&x, synth).unwrap();
        let b = p.translate(&x, synth).unwrap();
        assert_eq!(a.phonemes, b.phonemes);
        assert_eq!(a.mel, b.mel);
        assert_eq!(a.waveform, b.waveform);
        assert_eq!(a.waveform.len(), a.mel.nrows() * m.audio.hop);
        assert_eq!(a.durations.len(), a.phonemes.len());
        assert!(a.timings.total() >= 0.0);
    }
}

#[test]
fn given_durations_set_the_frame_count() {
    let m = ready(3);
    let mel = &mel_spectrogram(&waveform(), &m.audio).unwrap().frames;
    let phonemes = [0u32, 5, 2];
    let durations = [4.0, 7.0, 5.0];
    let p = Pipeline::new(&m, InferenceConfig::default()).unwrap();
    let nat = p.synthesize_with(mel, &phonemes, &durations, Synth::Nat).unwrap();
    assert_eq!(nat.dim(), (16, m.audio.n_mels));
    let d1 = p.synthesize_with(mel, &phonemes, &durations, Synth::Diffusion).unwrap();
    assert_eq!(d1.dim(), (16, m.audio.n_mels));
    assert!(d1.iter().all(|v| v.is_finite()));

    let q = Pipeline::new(&m, InferenceConfig { seed: 9, ..InferenceConfig::default() }).unwrap();
    assert_eq!(q.synthesize_with(mel, &phonemes, &durations, Synth::Nat).unwrap(), nat);
    assert_ne!(q.synthesize_with(mel, &phonemes, &durations, Synth::Diffusion).unwrap(), d1);
    assert!(matches!(p.synthesize_with(mel, &phonemes, &[4.0], Synth::Nat), Err(Error::Input(_))));
}
