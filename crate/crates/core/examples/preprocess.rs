//! Resize, normalize, flip and noise one phantom, printing summary stats
//! after each step.

use volt3d::dataset::{generate_phantom, PhantomSpec};
use volt3d::nifti::Volume;
use volt3d::volume_ops::{add_gaussian_noise, flip_lr, normalize, resize_trilinear, NormalizeMode};

fn stats(name: &str, v: &Volume) {
    let n = v.data.len() as f64;
    let mean = v.data.iter().map(|&x| x as f64).sum::<f64>() / n;
    let var = v.data.iter().map(|&x| (x as f64 - mean).powi(2)).sum::<f64>() / n;
    let (lo, hi) = v.min_max();
    println!("{name:<12} shape {:?}  range [{lo:.3}, {hi:.3}]  mean {mean:.4}  std {:.4}", v.shape, var.sqrt());
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let raw = generate_phantom(&PhantomSpec::for_class([48, 48, 24], 1, 0.05, 7))?;
    stats("raw", &raw);
    let resized = resize_trilinear(&raw, [32, 32, 16])?;
    stats("resized", &resized);
    let minmax = normalize(&resized, NormalizeMode::MinMax)?;
    stats("minmax", &minmax);
    stats("zscore", &normalize(&resized, NormalizeMode::ZScore)?);
    let flipped = flip_lr(&minmax, 1)?;
    stats("flipped", &flipped);
    println!("flip is an involution: {}", flip_lr(&flipped, 1)? == minmax);
    stats("noised", &add_gaussian_noise(&flipped, 0.05, 3)?);
    Ok(())
}
