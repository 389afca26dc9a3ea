//! Dumps a NIfTI-1 header. With no argument, writes a small volume in every
//! supported datatype and inspects each one.
//!
//! cargo run --example inspect_nifti -- [FILE]

use volt3d::cli::format_header;
use volt3d::nifti::{read_header, read_volume, write_volume_as, Datatype, Volume};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    if let Some(path) = std::env::args().nth(1) {
        println!("{}", format_header(&read_header(&path)?));
        let v = read_volume(&path)?;
        let (lo, hi) = v.min_max();
        println!("intensity range: [{lo}, {hi}]");
        return Ok(());
    }
    let dir = std::env::temp_dir().join("volt3d-inspect");
    std::fs::create_dir_all(&dir)?;
    let data: Vec<f32> = (0..4 * 3 * 2).map(|i| i as f32).collect();
    let v = Volume::new([4, 3, 2], [1.0, 1.0, 2.5], data, "ramp")?;
    for dt in Datatype::ALL {
        let path = dir.join(format!("ramp_{dt:?}.nii.gz").to_lowercase());
        write_volume_as(&path, &v, dt)?;
        let back = read_volume(&path)?;
        println!("--- {}", path.display());
        println!("{}", format_header(&read_header(&path)?));
        println!("round trip exact: {}", back.data == v.data && back.spacing == v.spacing);
    }
    Ok(())
}
