mod common;

use std::sync::OnceLock;

use chrono::Days;
use common::small_synth;
use ctrforge::autodiff::Tape;
use ctrforge::dataset::{default_schema, prepare, ContentType, DatasetConfig, EncodedExamples, PreparedData, SplitSpec};
use ctrforge::models::{Architecture, ModelConfig};
use ctrforge::synth::generate;
use ctrforge::train::{train, write_metrics_csv, Checkpoint, CheckpointError, TrainConfig, TrainError, FORMAT_VERSION};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn data() -> &'static PreparedData {
    static DATA: OnceLock<PreparedData> = OnceLock::new();
    DATA.get_or_init(|| {
        let out = generate(&small_synth(150, 45, 4)).unwrap();
        let cutoff = out.truth.config.start_date + Days::new(40);
        let spec = SplitSpec { train_cutoff_date: cutoff, test_date: cutoff, validation_fraction: 0.2, seed: 3 };
        let cfg = DatasetConfig { example_window_days: 10, negative_ratio: 4.0 };
        prepare(&out.events, ContentType::Drug, &default_schema(), &spec, &cfg).unwrap()
    })
}

fn small_model(arch: Architecture) -> ModelConfig {
    ModelConfig { hidden_units: vec![32, 16], embedding_dim: 8, cin_layer_sizes: vec![8, 8], ..ModelConfig::new(arch) }
}

fn fit(arch: Architecture, cfg: &TrainConfig) -> (Checkpoint, Vec<u8>) {
    let d = data();
    let out = train(small_model(arch), &d.encoder, d.content_type, &d.train, &d.validation, cfg).unwrap();
    let mut csv = Vec::new();
    write_metrics_csv(&mut csv, &out.metrics).unwrap();
    (out.checkpoint, csv)
}

fn quick() -> TrainConfig {
    TrainConfig { epochs: 2, ..TrainConfig::default() }
}

fn trained() -> &'static Checkpoint {
    static CKPT: OnceLock<Checkpoint> = OnceLock::new();
    CKPT.get_or_init(|| fit(Architecture::Difm, &quick()).0)
}

#[test]
fn same_seed_gives_identical_checkpoints_and_metrics() {
    for arch in Architecture::ALL {
        let (a, csv_a) = fit(arch, &quick());
        let (b, csv_b) = fit(arch, &quick());
        assert_eq!(a.to_bytes(), b.to_bytes(), "{arch}");
        assert_eq!(csv_a, csv_b, "{arch}");
    }
    let (other, _) = fit(Architecture::DeepFm, &TrainConfig { seed: 7, ..quick() });
    assert_ne!(other.to_bytes(), fit(Architecture::DeepFm, &quick()).0.to_bytes());
}

#[test]
fn checkpoint_round_trip_preserves_predictions() {
    let ckpt = trained();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    ckpt.save(&path).unwrap();
    let loaded = Checkpoint::load_expecting(&path, &ckpt.fingerprint()).unwrap();
    let test = &data().test;
    let (p, q) = (ckpt.predict(test).unwrap(), loaded.predict(test).unwrap());
    assert_eq!(p.iter().map(|x| x.to_bits()).collect::<Vec<_>>(), q.iter().map(|x| x.to_bits()).collect::<Vec<_>>());
    assert_eq!(loaded.to_bytes(), ckpt.to_bytes());
    assert_eq!(loaded.content_type(), ContentType::Drug);
}

#[test]
fn corrupted_files_are_rejected() {
    let bytes = trained().to_bytes();
    let mut bumped = bytes.clone();
    bumped[4] = FORMAT_VERSION + 1;
    assert_eq!(
        Checkpoint::from_bytes(&bumped).unwrap_err(),
        CheckpointError::Version { found: FORMAT_VERSION + 1, expected: FORMAT_VERSION }
    );
    let mut magic = bytes.clone();
    magic[0] = b'X';
    assert_eq!(Checkpoint::from_bytes(&magic).unwrap_err(), CheckpointError::BadMagic);
    let mut payload = bytes.clone();
    let mid = bytes.len() - 64;
    payload[mid] ^= 0x01;
    assert_eq!(Checkpoint::from_bytes(&payload).unwrap_err(), CheckpointError::Checksum);
    assert!(matches!(Checkpoint::from_bytes(&bytes[..bytes.len() - 9]), Err(CheckpointError::Truncated(_))));
    assert!(matches!(
        Checkpoint::load(std::path::Path::new("/nonexistent/x.ckpt")),
        Err(CheckpointError::Io { .. })
    ));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn any_truncation_or_byte_flip_is_an_error(cut in any::<prop::sample::Index>(), flip in any::<prop::sample::Index>(), bit in 0u8..8) {
        let bytes = trained().to_bytes();
        prop_assert!(Checkpoint::from_bytes(&bytes[..cut.index(bytes.len())]).is_err());
        let mut flipped = bytes.clone();
        flipped[flip.index(bytes.len())] ^= 1 << bit;
        prop_assert!(Checkpoint::from_bytes(&flipped).is_err());
    }
}

#[test]
fn schema_mismatch_is_a_fingerprint_error() {
    let ckpt = trained();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    ckpt.save(&path).unwrap();
    assert!(matches!(Checkpoint::load_expecting(&path, "deadbeef"), Err(CheckpointError::Fingerprint { .. })));
    let mut foreign: EncodedExamples = data().test.clone();
    foreign.schema_fingerprint = "0000".into();
    assert!(matches!(ckpt.predict(&foreign), Err(CheckpointError::Fingerprint { .. })));
}

#[test]
fn dropout_only_acts_in_training_mode() {
    let d = data();
    let net = trained().net();
    assert!(net.config().dropout > 0.0);
    let params = trained().params();
    let batch = d.test.slice(0, 64);
    let run = |rng: Option<&mut dyn rand::RngCore>| {
        let mut tape = Tape::new();
        let z = net.forward(params, &mut tape, &batch.as_batch(), rng);
        tape.value(z).data().to_vec()
    };
    let eval = run(None);
    assert_eq!(eval, run(None));
    assert_ne!(eval, run(Some(&mut ChaCha8Rng::seed_from_u64(1))));
}

#[test]
fn training_loss_falls_in_most_seeded_runs() {
    let cfg = |seed| TrainConfig { epochs: 4, seed, ..TrainConfig::default() };
    let monotone = (0..20)
        .filter(|&seed| {
            let (_, csv) = fit(Architecture::DeepFm, &cfg(seed));
            let losses: Vec<f64> = String::from_utf8(csv)
                .unwrap()
                .lines()
                .skip(1)
                .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
                .collect();
            losses.windows(2).all(|w| w[1] <= w[0])
        })
        .count();
    assert!(monotone >= 18, "{monotone}/20 runs had non-increasing training loss");
}

#[test]
fn probabilities_lie_strictly_inside_the_unit_interval() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let template = &data().test;
    let n = 10_000;
    let sizes: Vec<u32> = trained().net().schema().vocab_sizes().unwrap().iter().map(|&v| v as u32).collect();
    let mut random = template.slice(0, 0);
    for _ in 0..n {
        random.categorical.extend(sizes.iter().map(|&v| rng.gen_range(0..v)));
        random.numeric.extend((0..template.num_numeric).map(|_| rng.gen_range(-5.0f32..5.0)));
        random.labels.push(0.0);
        random.users.push(0);
        random.contents.push(0);
    }
    for arch in Architecture::ALL {
        let ckpt = if arch == Architecture::Difm { trained().clone() } else { fit(arch, &TrainConfig { epochs: 1, ..quick() }).0 };
        let p = ckpt.predict(&random).unwrap();
        assert_eq!(p.len(), n);
        assert!(p.iter().all(|&x| x > 0.0 && x < 1.0), "{arch}");
    }
}

#[test]
fn empty_training_set_is_fatal() {
    let d = data();
    let empty = d.train.slice(0, 0);
    let err = train(small_model(Architecture::Pnn), &d.encoder, d.content_type, &empty, &d.validation, &quick());
    assert_eq!(err.unwrap_err(), TrainError::EmptyTrainingSet);
    let bad = TrainConfig { learning_rate: 0.0, ..quick() };
    let err = train(small_model(Architecture::Pnn), &d.encoder, d.content_type, &d.train, &d.validation, &bad);
    assert!(matches!(err, Err(TrainError::InvalidConfig(_))));
}
