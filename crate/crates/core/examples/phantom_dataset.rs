//! Writes the 9+9 / 5+5 phantom tree, scans it back, and prints the central
//! axial slice of one healthy and one patient phantom.
//!
//! cargo run --example phantom_dataset -- [OUT_DIR]

use volt3d::dataset::{generate_phantom, scan_directory, PhantomDatasetConfig, Split};
use volt3d::nifti::Volume;

fn ascii_slice(v: &Volume, z: usize) -> String {
    let ramp = [' ', '.', ':', '+', '#'];
    let mut s = String::new();
    for y in 0..v.shape[1] {
        for x in 0..v.shape[0] {
            let t = v.at(x, y, z).clamp(0.0, 1.0);
            s.push(ramp[((t * 4.0).round()) as usize]);
        }
        s.push('\n');
    }
    s
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args()
        .nth(1)
        .map(Into::into)
        .unwrap_or_else(|| std::env::temp_dir().join("volt3d-phantoms"));
    let cfg = PhantomDatasetConfig::default();
    let paths = volt3d::dataset::write_phantom_tree(&cfg, &out)?;
    println!("wrote {} files under {}", paths.len(), out.display());
    let m = scan_directory(&out)?;
    for split in Split::ALL {
        let [h, p] = m.class_counts(split);
        println!("{}: {h} health, {p} patient", split.dir_name());
    }
    for label in 0..2u8 {
        let v = generate_phantom(&PhantomDatasetConfig { noise_sigma: 0.0, ..cfg.clone() }.spec(Split::Train, label, 0))?;
        println!("label {label}, z = {}:\n{}", v.shape[2] / 2, ascii_slice(&v, v.shape[2] / 2));
    }
    Ok(())
}
