//! Small end-to-end run through the library: synthetic data, preprocessing,
//! one training epoch, checkpoint reload and evaluation.

use candle_core::Device;
use rgbt_core::checkpoint::load_checkpoint;
use rgbt_core::dataset::{preprocess_dataset, write_dataset};
use rgbt_core::losses::Lpips;
use rgbt_core::preprocess::PreprocessConfig;
use rgbt_core::synthetic::{synthetic_samples, SynthConfig};
use rgbt_core::train::{assign_folds, evaluate, load_processed, predict_sample, train_fold, RunContext, TrainConfig};
use rgbt_core::Error;

fn quick_config() -> TrainConfig {
    TrainConfig {
        epochs: 1,
        finetune_epochs: 0,
        batch_size: 4,
        seed: 3,
        ..TrainConfig::default()
    }
}

#[test]
fn train_reload_evaluate() {
    let tmp = tempfile::tempdir().unwrap();
    let raw = tmp.path().join("raw");
    let proc = tmp.path().join("proc");
    let samples = synthetic_samples(&SynthConfig {
        samples: 10,
        groups: 5,
        height: 40,
        width: 48,
        seed: 1,
    });
    write_dataset(&raw, &samples).unwrap();
    let pre = PreprocessConfig {
        target_size: 32,
        ..PreprocessConfig::default()
    };
    let manifest = preprocess_dataset(&raw, &proc, &pre).unwrap();
    let (data, read_back) = load_processed(&proc).unwrap();
    assert_eq!(read_back, manifest);
    assert_eq!(data.len(), 10);

    let cfg = quick_config();
    let groups: Vec<&str> = data.iter().map(|s| s.group.as_str()).collect();
    let assignment = assign_folds(&groups, cfg.folds, cfg.seed).unwrap();
    let dev = Device::Cpu;
    let run = |dir: &std::path::Path| {
        let ctx = RunContext {
            data: &data,
            cfg: &cfg,
            preprocess: &pre,
            run_dir: dir,
            device: &dev,
        };
        train_fold(&ctx, &assignment, 1).unwrap()
    };
    let a = run(&tmp.path().join("a"));
    let b = run(&tmp.path().join("b"));
    assert_eq!(a.history.len(), 1);
    assert!(a.history[0].loss.total.is_finite());
    assert_eq!(std::fs::read(&a.checkpoint).unwrap(), std::fs::read(&b.checkpoint).unwrap());
    assert!(a.val_ids.iter().all(|id| !a.train_ids.contains(id)));

    let (model, meta) = load_checkpoint(&a.checkpoint, &dev).unwrap();
    let (again, _) = load_checkpoint(&a.checkpoint, &dev).unwrap();
    assert_eq!(meta.epochs_completed, 1);
    assert_eq!(meta.standardizer, a.standardizer);
    let val: Vec<_> = data.iter().filter(|s| a.val_ids.contains(&s.id)).collect();
    let p1 = predict_sample(&model, &meta, val[0]).unwrap();
    let p2 = predict_sample(&again, &meta, val[0]).unwrap();
    assert_eq!(p1, p2);

    let lpips = Lpips::seeded(0, candle_core::DType::F32, &dev).unwrap();
    let (report, preds) = evaluate(&model, &meta, &val, &manifest.config_hash, 0.5, &lpips).unwrap();
    assert_eq!(report.per_sample.len(), val.len());
    assert_eq!(preds[0], p1);
    assert!(report.violations().is_empty(), "{:?}", report.violations());

    let other = PreprocessConfig {
        saturation_factor: 1.0,
        ..pre.clone()
    };
    let err = evaluate(&model, &meta, &val, &other.hash(), 0.5, &lpips).unwrap_err();
    assert!(matches!(err, Error::PreprocessMismatch { .. }), "{err}");
}
