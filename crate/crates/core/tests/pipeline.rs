use std::fs;

use faceage_core::checkpoint::{load_adapter, load_config, read_meta};
use faceage_core::data::load_manifest;
use faceage_core::eval::{run_protocol, EvalReport};
use faceage_core::synth::{write_synthetic_dataset, SyntheticSpec, ToyPerson};
use faceage_core::trainer::{parse_logs, LOSSES_CSV, SAMPLES_CSV};
use faceage_core::{AdapterShape, BackendBundle, EvalProtocol, Trainer, TrainingConfig};

fn small_config() -> TrainingConfig {
    TrainingConfig {
        iterations: 6,
        checkpoint_every: 3,
        adapter: AdapterShape::reduced(16),
        ..TrainingConfig::default()
    }
}

#[test]
fn dataset_to_report_on_disk() {
    let dir = tempfile::tempdir().unwrap();
    let bundle = BackendBundle::toy(0);
    let manifest = write_synthetic_dataset(&bundle, &ToyPerson::new(4), &SyntheticSpec::default(), &dir.path().join("data")).unwrap();
    let collection = load_manifest(&manifest).unwrap();
    assert_eq!(collection.len(), 25);

    let config = small_config();
    let trainer = Trainer::new(bundle.clone(), collection.clone(), config.clone()).unwrap();
    let run = dir.path().join("run");
    let last = trainer.train(&run).unwrap();
    assert_eq!(last, run.join("ckpt_6"));
    assert!(run.join("ckpt_3").is_dir());

    let meta = read_meta(&last).unwrap();
    assert_eq!(meta.iteration, 6);
    assert_eq!(meta.config_hash, config.hash());
    assert_eq!(load_config(&last).unwrap(), config);

    let log = parse_logs(
        &fs::read_to_string(run.join(LOSSES_CSV)).unwrap(),
        &fs::read_to_string(run.join(SAMPLES_CSV)).unwrap(),
    )
    .unwrap();
    assert_eq!(log.len(), 6);
    assert!(log.iter().all(|s| s.report.total.is_finite()));

    let (net, _) = load_adapter(&last).unwrap();
    let report = run_protocol(&bundle, Some(&net), &collection, &EvalProtocol::regression()).unwrap();
    let out = dir.path().join("eval");
    report.write(&out).unwrap();
    let back: EvalReport = serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(back, report);
    let rows = EvalReport::parse_csv(&fs::read_to_string(out.join("report.csv")).unwrap()).unwrap();
    assert_eq!(rows, report.per_age);
}

#[test]
fn same_seed_same_run() {
    let bundle = BackendBundle::toy(0);
    let collection = faceage_core::synth::synthetic_collection(&bundle, &ToyPerson::new(4), &SyntheticSpec::default()).unwrap();
    let a = Trainer::new(bundle.clone(), collection.clone(), small_config()).unwrap().train_in_memory().unwrap();
    let b = Trainer::new(bundle.clone(), collection.clone(), small_config()).unwrap().train_in_memory().unwrap();
    assert_eq!(a, b);
    let other = TrainingConfig {
        seed: 1,
        ..small_config()
    };
    let c = Trainer::new(bundle, collection, other).unwrap().train_in_memory().unwrap();
    assert_ne!(a.log, c.log);
}

#[test]
fn resume_rejects_a_different_config() {
    let dir = tempfile::tempdir().unwrap();
    let bundle = BackendBundle::toy(0);
    let collection = faceage_core::synth::synthetic_collection(&bundle, &ToyPerson::new(4), &SyntheticSpec::default()).unwrap();
    let trainer = Trainer::new(bundle.clone(), collection.clone(), small_config()).unwrap();
    trainer.train(dir.path()).unwrap();
    let changed = TrainingConfig {
        p_extrapolate: 0.25,
        ..small_config()
    };
    let other = Trainer::new(bundle, collection, changed).unwrap();
    assert!(other.resume(&dir.path().join("ckpt_3")).is_err());
}
