//! Trains a small model on phantoms with a 20% holdout, writes the curves,
//! evaluates on the test split and round-trips the checkpoint.
//!
//! cargo run --release --example train_phantom

use volt3d::dataset::{phantom_manifest, PhantomDatasetConfig, Split};
use volt3d::model::{build_model, load_checkpoint, save_checkpoint, ArchitectureSpec, BlockOrder};
use volt3d::trainer::{curves_to_csv, evaluate, train_with, TrainConfig, Validation};
use volt3d::volume_ops::{AugmentationPolicy, NormalizeMode};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let spec = ArchitectureSpec {
        input_shape: [32, 32, 16, 1],
        block_filters: vec![8, 16],
        dense_units: 32,
        dropout_rate: 0.3,
        block_order: BlockOrder::ConvReluPoolBn,
    };
    let data = phantom_manifest(&PhantomDatasetConfig::default())?;
    let cfg = TrainConfig {
        epochs: 30,
        validation: Validation::Holdout(0.2),
        augmentation: Some(AugmentationPolicy::default()),
        ..TrainConfig::augmented()
    };
    let run = train_with(build_model(&spec, 0)?, &data, &cfg, |r| {
        println!(
            "epoch {:>2}  loss {:.4}  acc {:.3}  val_acc {:.3}",
            r.epoch,
            r.train_loss,
            r.train_accuracy,
            r.val_accuracy.unwrap_or(f64::NAN)
        )
    })?;
    let dir = std::env::temp_dir().join("volt3d-train");
    std::fs::create_dir_all(&dir)?;
    std::fs::write(dir.join("curves.csv"), curves_to_csv(&run.history))?;
    save_checkpoint(&run.model, dir.join("model.ckpt"))?;
    let restored = load_checkpoint(dir.join("model.ckpt"))?;
    let report = evaluate(&restored, &data, Split::Test, 0.5, NormalizeMode::MinMax)?;
    println!("{}", report.to_json());
    println!("artifacts in {}", dir.display());
    Ok(())
}
