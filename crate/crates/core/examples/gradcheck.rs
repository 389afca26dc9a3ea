//! Finite-difference checks of every layer and of the full model. Pass a
//! layer name (e.g. `conv3d`) to corrupt its backward pass and watch the
//! check fail.
//!
//! cargo run --release --example gradcheck -- [FAULTY_LAYER]

use volt3d::layers::gradcheck::{run_suite, LayerKind, SuiteOptions};
use volt3d::model::{check_model_gradients, gradcheck_spec, DEFAULT_MODEL_EPSILON};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let fault = std::env::args().nth(1).and_then(|s| LayerKind::parse(&s));
    let opts = SuiteOptions { fault, ..Default::default() };
    for check in run_suite(&opts)? {
        println!("{}  (threshold {:.0e}, {} inputs)", check.summary(), check.threshold, check.reports.len());
    }
    for seed in 0..3 {
        let reports = check_model_gradients(&gradcheck_spec(), seed, DEFAULT_MODEL_EPSILON)?;
        let worst = reports.iter().map(|r| r.max_rel_error).fold(0.0, f64::max);
        let ok = reports.iter().all(|r| r.passed);
        println!("model seed {seed}: {} parameter tensors, worst {worst:.2e}, passed {ok}", reports.len());
    }
    Ok(())
}
