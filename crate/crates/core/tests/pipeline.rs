use volt3d::dataset::{apply_augmentation, scan_directory, write_phantom_tree, PhantomDatasetConfig, Split};
use volt3d::model::{build_model, load_checkpoint, save_checkpoint, ArchitectureSpec, BlockOrder};
use volt3d::trainer::{curves_to_csv, evaluate, parse_curves, train, EpochRecord, TrainConfig};
use volt3d::volume_ops::{AugmentationPolicy, NormalizeMode};

fn spec() -> ArchitectureSpec {
    ArchitectureSpec {
        input_shape: [12, 12, 12, 1],
        block_filters: vec![3, 4],
        dense_units: 8,
        dropout_rate: 0.3,
        block_order: BlockOrder::ConvReluPoolBn,
    }
}

#[test]
fn disk_tree_to_checkpoint_and_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = PhantomDatasetConfig {
        grid_shape: [20, 20, 12],
        train_per_class: [3, 3],
        test_per_class: [2, 2],
        ..Default::default()
    };
    write_phantom_tree(&cfg, dir.path().join("data")).unwrap();
    let scanned = scan_directory(dir.path().join("data")).unwrap();
    let m = apply_augmentation(
        &scanned,
        &AugmentationPolicy {
            num_augmented_per_class: 2,
            ..Default::default()
        },
    )
    .unwrap();
    m.save(dir.path().join("manifest.jsonl")).unwrap();
    let m = volt3d::dataset::DatasetManifest::load(dir.path().join("manifest.jsonl")).unwrap();
    assert_eq!(m.class_counts(Split::Train), [5, 5]);

    let tc = TrainConfig {
        epochs: 3,
        ..TrainConfig::baseline()
    };
    let (model, history) = train(build_model(&spec(), 0).unwrap(), &m, &tc).unwrap();
    assert_eq!(history.len(), 3);
    let ckpt = dir.path().join("model.ckpt");
    save_checkpoint(&model, &ckpt).unwrap();
    let restored = load_checkpoint(&ckpt).unwrap();
    let a = evaluate(&model, &m, Split::Test, 0.5, NormalizeMode::MinMax).unwrap();
    let b = evaluate(&restored, &m, Split::Test, 0.5, NormalizeMode::MinMax).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.confusion.total(), 4);
}

#[test]
fn constant_half_model_scores_positive_fraction() {
    let m = volt3d::dataset::phantom_manifest(&PhantomDatasetConfig {
        grid_shape: [12, 12, 12],
        train_per_class: [1, 1],
        test_per_class: [3, 3],
        ..Default::default()
    })
    .unwrap();
    let mut model = build_model::<f32>(&spec(), 1).unwrap();
    for name in ["head.weight", "head.bias"] {
        let t = &mut model.params[name];
        *t = t.zeros_like();
    }
    let r = evaluate(&model, &m, Split::Test, 0.5, NormalizeMode::MinMax).unwrap();
    assert_eq!(r.accuracy, 0.5);
    assert_eq!((r.confusion.tp, r.confusion.fp), (3, 3));
    assert_eq!(r.auc, Some(0.5));
}

#[test]
fn curve_row_counts() {
    let rec = |epoch, val: bool| EpochRecord {
        epoch,
        train_loss: 0.5 + epoch as f64 * 1e-3,
        train_accuracy: 0.75,
        val_loss: val.then_some(std::f64::consts::LN_2),
        val_accuracy: val.then_some(0.5),
    };
    let baseline: Vec<EpochRecord> = (0..50).map(|e| rec(e, false)).collect();
    assert_eq!(curves_to_csv(&baseline).lines().count(), 51);
    let augmented: Vec<EpochRecord> = (0..80).map(|e| rec(e, true)).collect();
    let csv = curves_to_csv(&augmented);
    assert_eq!(csv.lines().count(), 161);
    let rows = parse_curves(&csv).unwrap();
    for (r, row) in augmented.iter().zip(rows.chunks(2)) {
        assert!(((row[0].loss - r.train_loss) / r.train_loss).abs() < 5e-6);
        assert!(((row[1].loss - r.val_loss.unwrap()) / r.val_loss.unwrap()).abs() < 5e-6);
        assert_eq!(row[1].split, "val");
    }
}
