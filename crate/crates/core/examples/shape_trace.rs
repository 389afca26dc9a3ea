//! Layer-by-layer shape trace and parameter count of the default
//! architecture, with the closed-form count alongside.

use volt3d::model::{build_model, count_parameters, ArchitectureSpec, KERNEL};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let spec = ArchitectureSpec::default();
    print!("{}", spec.to_canonical_text());
    for e in spec.shape_trace(1)? {
        println!("{:<14} {:?}", e.layer, e.shape);
    }
    let model = build_model::<f32>(&spec, 0)?;
    let count = count_parameters(&model);
    let mut c_in = spec.input_shape[3];
    let mut closed = 0;
    for &c in &spec.block_filters {
        closed += c * (KERNEL.pow(3) * c_in + 1) + 2 * c;
        c_in = c;
    }
    closed += c_in * spec.dense_units + spec.dense_units + spec.dense_units + 1;
    println!("trainable {}  total {}  closed form {closed}", count.trainable, count.total);
    Ok(())
}
