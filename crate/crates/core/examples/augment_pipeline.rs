//! Flip augmentation takes the 9+9 training set to 16+16; a batch size of 2
//! then yields 16 batches per epoch, each record visited once.

use volt3d::dataset::{apply_augmentation, make_batches, phantom_manifest, BatchStream, PhantomDatasetConfig, Preprocess, Split};
use volt3d::volume_ops::AugmentationPolicy;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let base = phantom_manifest(&PhantomDatasetConfig::default())?;
    let m = apply_augmentation(&base, &AugmentationPolicy::default())?;
    println!("train records: {:?} -> {:?}", base.class_counts(Split::Train), m.class_counts(Split::Train));
    for r in m.records.iter().filter(|r| r.is_augmented()).take(3) {
        println!("  {} (from {})", r.id(), r.augmented_from.as_deref().unwrap_or("?"));
    }
    let pre = Preprocess::new([32, 32, 16]);
    for epoch in 0..2 {
        let batches = make_batches(&m, Split::Train, &BatchStream::shuffled(2, 11), epoch, &pre)?;
        let mut seen: Vec<usize> = batches.iter().flat_map(|b| b.positions.clone()).collect();
        let first: Vec<_> = batches.iter().take(3).map(|b| b.positions.clone()).collect();
        seen.sort_unstable();
        seen.dedup();
        println!("epoch {epoch}: {} batches, {} distinct records, first {first:?}", batches.len(), seen.len());
    }
    Ok(())
}
