//! Stratified 3-fold cross-validation of a small model on 9+9 phantoms.
//!
//! cargo run --release --example cross_validate

use volt3d::dataset::{phantom_manifest, PhantomDatasetConfig};
use volt3d::model::{ArchitectureSpec, BlockOrder};
use volt3d::trainer::{cross_validate, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let spec = ArchitectureSpec {
        input_shape: [16, 16, 10, 1],
        block_filters: vec![4, 8],
        dense_units: 16,
        dropout_rate: 0.3,
        block_order: BlockOrder::ConvReluPoolBn,
    };
    let data = phantom_manifest(&PhantomDatasetConfig {
        grid_shape: [16, 16, 10],
        ..Default::default()
    })?;
    let cfg = TrainConfig {
        epochs: 40,
        lr: 1e-3,
        ..TrainConfig::baseline()
    };
    let cv = cross_validate(&spec, &data, &cfg, 3, 0.5)?;
    for (fold, report) in &cv.folds {
        println!("fold {fold}: accuracy {:.3}  auc {:?}", report.accuracy, report.auc);
    }
    println!("accuracy {:.3} ± {:.3}  [{:.3}, {:.3}]", cv.accuracy.mean, cv.accuracy.std, cv.accuracy.min, cv.accuracy.max);
    if let Some(auc) = cv.auc {
        println!("auc      {:.3} ± {:.3}", auc.mean, auc.std);
    }
    Ok(())
}
