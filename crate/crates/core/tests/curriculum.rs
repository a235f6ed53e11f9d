use candle_core::DType;
use s2st::audio::MelConfig;
use s2st::checkpoint;
use s2st::config::ModelConfig;
use s2st::curriculum::{run_stage, RunOptions, Stage, StagePlan};
use s2st::data::{generate_corpus, CorpusConfig};
use s2st::dataset::Dataset;
use s2st::model::S2stModel;
use s2st::Error;

fn dataset(n: usize) -> Dataset {
    let audio = MelConfig::default();
    let pairs = generate_corpus(5, n, &CorpusConfig::default(), &audio).unwrap();
    Dataset::from_pairs(&pairs, &audio).unwrap()
}

fn model(seed: u64) -> S2stModel {
    S2stModel::new(&ModelConfig::tiny(), &MelConfig::default(), seed, DType::F32).unwrap()
}

fn plan(stage: Stage, epochs: usize) -> StagePlan {
    StagePlan {
        epochs,
        batch_size: 8,
        codec_epochs: 1,
        ..StagePlan::default_for(stage)
    }
}

fn snapshot(m: &S2stModel) -> Vec<(String, Vec<u8>)> {
    m.store.iter().map(|p| (p.name.clone(), m.store.bytes(&p.name).unwrap())).collect()
}

#[test]
fn missing_prerequisite_names_the_stage() {
    let data = dataset(12);
    let m = model(1);
    match run_stage(&m, &plan(Stage::S3JointNat, 1), &data, RunOptions::default()) {
        Err(Error::State(msg)) => assert!(msg.contains("stage 2"), "{msg}"),
        other => panic!("expected a state error, got {other:?}"),
    }
    m.mark_stage(Stage::S3JointNat).unwrap();
    match run_stage(&m, &plan(Stage::S4DiffusionFinetune, 1), &data, RunOptions::default()) {
        Err(Error::State(msg)) => assert!(msg.contains("stage 1"), "{msg}"),
        other => panic!("expected a state error, got {other:?}"),
    }
}

#[test]
fn s2_logs_phoneme_loss_only_and_writes_checkpoints() {
    let data = dataset(24);
    let m = model(2);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s2.ckpt");
    let before = snapshot(&m);
    let out = run_stage(
        &m,
        &plan(Stage::S2S2ttPretrain, 2),
        &data,
        RunOptions { checkpoint: Some(&path), ..Default::default() },
    )
    .unwrap();
    assert!(out.completed);
    assert!(m.stage_done(Stage::S2S2ttPretrain).unwrap());
    assert_eq!(out.state.log.len(), 2);
    for e in &out.state.log {
        assert!(e.train.l_p.is_some() && e.train.l_d.is_none() && e.train.l_s.is_none());
        assert_eq!(e.train.total, e.train.l_p.unwrap());
    }
    // Only the translation stack moved.
    for ((name, a), (_, b)) in before.iter().zip(snapshot(&m)) {
        let head = name.split('.').next().unwrap();
        if !["encoder", "decoder", "bridge", "frontend", "state"].contains(&head) {
            assert_eq!(*a, b, "{name} changed");
        }
    }
    let (loaded, state) = checkpoint::load(&path).unwrap();
    assert_eq!(snapshot(&loaded), snapshot(&m));
    assert_eq!(state.unwrap().epochs_done, 2);
}

#[test]
fn resume_reproduces_the_next_epoch() {
    let data = dataset(24);
    let p = plan(Stage::S3JointNat, 2);
    let straight = model(3);
    straight.mark_stage(Stage::S2S2ttPretrain).unwrap();
    let full = run_stage(&straight, &p, &data, RunOptions::default()).unwrap();

    let first = model(3);
    first.mark_stage(Stage::S2S2ttPretrain).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s3.ckpt");
    let half = run_stage(
        &first,
        &p,
        &data,
        RunOptions { checkpoint: Some(&path), stop_after: Some(1), ..Default::default() },
    )
    .unwrap();
    assert!(!half.completed);
    assert!(!first.stage_done(Stage::S3JointNat).unwrap());

    let (resumed, state) = checkpoint::load(&path).unwrap();
    let rest = run_stage(&resumed, &p, &data, RunOptions { resume: state, ..Default::default() }).unwrap();
    assert!(rest.completed);
    let a = full.state.log[1].train;
    let b = rest.state.log[1].train;
    assert!((a.total - b.total).abs() <= 1e-5, "{} vs {}", a.total, b.total);
    assert_eq!(snapshot(&resumed), snapshot(&straight));
}

#[test]
fn s4_freezes_everything_but_the_synthesizer() {
    let data = dataset(24);
    let m = model(4);
    run_stage(&m, &plan(Stage::S1DiffusionPretrain, 1), &data, RunOptions::default()).unwrap();
    m.mark_stage(Stage::S2S2ttPretrain).unwrap();
    m.mark_stage(Stage::S3JointNat).unwrap();
    let before = snapshot(&m);
    let out = run_stage(&m, &plan(Stage::S4DiffusionFinetune, 2), &data, RunOptions::default()).unwrap();
    for e in &out.state.log {
        assert!(e.train.l_p.is_none() && e.train.l_d.is_some() && e.train.l_s.is_some());
    }
    // L_d is logged but constant: nothing it depends on can move.
    assert_eq!(out.state.log[0].train.l_d, out.state.log[1].train.l_d);
    let mut moved = 0;
    for ((name, a), (_, b)) in before.iter().zip(snapshot(&m)) {
        let head = name.split('.').next().unwrap();
        if head == "diffusion" {
            moved += (*a != b) as usize;
        } else if head != "state" {
            assert_eq!(*a, b, "{name} changed during stage 4");
        }
    }
    assert!(moved > 0);
}

#[test]
fn checkpoint_round_trip_and_corruption() {
    let m = model(6);
    let bytes = checkpoint::to_bytes(&m, None).unwrap();
    let (back, state) = checkpoint::from_bytes(&bytes, DType::F32).unwrap();
    assert!(state.is_none());
    assert_eq!(checkpoint::to_bytes(&back, None).unwrap(), bytes);
    assert_eq!(back.seed, 6);

    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(checkpoint::from_bytes(&bad, DType::F32), Err(Error::Serialization(_))));
    assert!(matches!(
        checkpoint::from_bytes(&bytes[..bytes.len() - 4], DType::F32),
        Err(Error::Serialization(_))
    ));
    let mut long = bytes.clone();
    long.push(0);
    assert!(matches!(checkpoint::from_bytes(&long, DType::F32), Err(Error::Serialization(_))));
}
