pub mod cli;
pub mod dataset;
pub mod layers;
pub mod metrics;
pub mod model;
pub mod nifti;
pub mod rng;
pub mod tensor;
pub mod trainer;
pub mod volume_ops;
