use std::path::Path;

use probunet_core::data::{generate_synthetic, write_dataset, Split, SplitSpec, SynthConfig};
use probunet_core::losses::ObjectiveSpec;
use probunet_core::probunet::ModelConfig;
use probunet_core::trainer::{
    train, train_observed, BatchObserver, CheckpointDir, TrainConfig, BEST_WEIGHTS_FILE, LOG_FILE, WEIGHTS_FILE,
};
use probunet_core::Error;

fn tiny_dataset(dir: &Path) {
    let split = SplitSpec { train_years: 1, val_years: 1, test_years: 1, test_extension_years: 1 };
    let synth = SynthConfig::default();
    let full = generate_synthetic(split.total_years(), (32, 32), 11, &synth).unwrap();
    write_dataset(dir, &full, split, 8, 11, &synth).unwrap();
}

fn tiny_config(epochs: usize) -> TrainConfig {
    let mut model = ModelConfig::desk();
    model.backbone.channel_schedule = vec![2, 2, 4, 4];
    model.probunet.encoder_channels = vec![2, 4, 4, 4];
    model.probunet.fusion_hidden = 4;
    TrainConfig {
        epochs,
        batch_size: 128,
        val_batch_size: 128,
        learning_rate: 1e-3,
        seed: 3,
        objective: ObjectiveSpec { members: 2, ..ObjectiveSpec::afcrps() },
        model,
        ..TrainConfig::default()
    }
}

#[derive(Default)]
struct Recorder {
    events: Vec<(Split, Vec<usize>, bool)>,
}

impl BatchObserver for Recorder {
    fn on_batch(&mut self, split: Split, indices: &[usize], gradient: bool) {
        self.events.push((split, indices.to_vec(), gradient));
    }
}

#[test]
fn resumed_run_matches_uninterrupted_run() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    tiny_dataset(&data);

    let straight = train(&data, &tiny_config(2), &tmp.path().join("a")).unwrap();
    let first = train(&data, &tiny_config(1), &tmp.path().join("b")).unwrap();
    assert_eq!(first.manifest.epochs_completed, 1);
    let resumed = train(&data, &tiny_config(2), &tmp.path().join("b")).unwrap();

    assert_eq!(straight.log, resumed.log);
    assert_eq!(straight.val_losses().len(), 2);
    let a = std::fs::read(tmp.path().join("a").join(WEIGHTS_FILE)).unwrap();
    let b = std::fs::read(tmp.path().join("b").join(WEIGHTS_FILE)).unwrap();
    assert_eq!(a, b);
    let la = std::fs::read_to_string(tmp.path().join("a").join(LOG_FILE)).unwrap();
    assert!(la.starts_with("step,epoch,recon_loss,kl,gamma,val_loss\n"));
    assert!(straight.log.iter().all(|r| r.recon_loss.is_finite() && r.kl >= 0.0));
}

#[test]
fn only_training_samples_receive_gradients() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    tiny_dataset(&data);
    let mut rec = Recorder::default();
    train_observed(&data, &tiny_config(1), &tmp.path().join("ck"), &mut rec).unwrap();

    let grad: Vec<_> = rec.events.iter().filter(|e| e.2).collect();
    assert!(!grad.is_empty());
    assert!(grad.iter().all(|e| e.0 == Split::Train));
    let mut seen: Vec<usize> = grad.iter().flat_map(|e| e.1.iter().copied()).collect();
    seen.sort_unstable();
    assert_eq!(seen, (0..365).collect::<Vec<_>>());
    assert!(rec.events.iter().any(|e| e.0 == Split::Val && !e.2));
    assert!(rec.events.iter().all(|e| e.0 != Split::Test));
}

#[test]
fn checkpoint_contents_are_hash_checked() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    tiny_dataset(&data);
    let ck = tmp.path().join("ck");
    let out = train(&data, &tiny_config(1), &ck).unwrap();
    assert_eq!(out.manifest.files.len(), 4);
    assert_eq!(out.manifest.content_hash.len(), 64);
    assert_eq!(out.manifest.best_epoch, 1);

    let dir = CheckpointDir::new(&ck);
    let model = dir.load_model(true).unwrap();
    assert_eq!(model.factor, 8);
    dir.load_model(false).unwrap();

    let path = ck.join(BEST_WEIGHTS_FILE);
    let mut bytes = std::fs::read(&path).unwrap();
    let last = bytes.len() - 1;
    bytes[last] ^= 1;
    std::fs::write(&path, bytes).unwrap();
    assert!(dir.load_model(true).is_err());
    assert!(matches!(
        CheckpointDir::new(tmp.path().join("missing")).load_model(true),
        Err(Error::MissingCheckpoint(_))
    ));
}

#[test]
fn changed_configuration_does_not_resume() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    tiny_dataset(&data);
    let ck = tmp.path().join("ck");
    train(&data, &tiny_config(1), &ck).unwrap();
    let other = TrainConfig { learning_rate: 5e-4, ..tiny_config(2) };
    assert!(matches!(train(&data, &other, &ck), Err(Error::Config(_))));
}

#[test]
fn divergence_aborts_training() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    tiny_dataset(&data);
    let cfg = TrainConfig { learning_rate: 1e36, batch_size: 16, ..tiny_config(1) };
    match train(&data, &cfg, &tmp.path().join("ck")) {
        Err(Error::NonFiniteLoss { step, .. }) => assert!(step >= 1),
        other => panic!("expected a non-finite loss abort, got {other:?}"),
    }
}
