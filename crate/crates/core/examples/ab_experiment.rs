//! Baseline vs flip-augmented training over several phantom seeds, scored
//! on a shared 20+20 test split. Pass `full` for 5 seeds at 50/80 epochs.
//!
//! cargo run --release --example ab_experiment -- [full]

use volt3d::cli::{cmd_ab, RunConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let full = std::env::args().nth(1).as_deref() == Some("full");
    let mut pairs = vec![
        ("model.input_shape", "32,32,16"),
        ("model.filters", "8,16"),
        ("model.dense_units", "32"),
        ("data.phantom.test_per_class", "20,20"),
    ];
    if !full {
        pairs.extend([("data.phantom.seeds", "0,1"), ("ab.baseline_epochs", "10"), ("ab.augmented_epochs", "16")]);
    }
    let mut cfg = RunConfig::from_pairs(&pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect::<Vec<_>>())?;
    cfg.out_dir = std::env::temp_dir().join("volt3d-ab");
    let report = cmd_ab(&cfg, &mut std::io::stdout())?;
    print!("{}", report.to_csv());
    Ok(())
}
