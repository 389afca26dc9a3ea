use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::DatasetError;
use crate::nifti::Volume;
use crate::rng;

/// Ventricle radii before class scaling, as a fraction of the brain radii.
pub const VENTRICLE_FRACTION: f64 = 0.3;
pub const VENTRICLE_INTENSITY: f64 = 0.2;
/// Relative jitter of the ventricle center and radii.
pub const JITTER: f64 = 0.1;
/// Default ventricle scales for labels 0 and 1.
pub const CLASS_SCALES: [f64; 2] = [1.0, 1.6];
/// Width of the logistic edge, in voxels.
const EDGE_WIDTH: f64 = 0.5;

/// A synthetic brain: an ellipsoid of intensity 1 with a darker ellipsoidal
/// ventricle whose size depends on the class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub grid_shape: [usize; 3],
    /// In voxels.
    pub brain_radii: [f64; 3],
    pub ventricle_scale: f64,
    pub noise_sigma: f64,
    pub seed: u64,
    pub label: u8,
}

impl PhantomSpec {
    /// Brain radii at 3/4 of the half-extent of each axis.
    pub fn default_radii(grid_shape: [usize; 3]) -> [f64; 3] {
        grid_shape.map(|e| 0.375 * e as f64)
    }

    /// Class-default spec with the default radii.
    pub fn for_class(grid_shape: [usize; 3], label: u8, noise_sigma: f64, seed: u64) -> Self {
        Self {
            grid_shape,
            brain_radii: Self::default_radii(grid_shape),
            ventricle_scale: CLASS_SCALES[(label != 0) as usize],
            noise_sigma,
            seed,
            label,
        }
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        if self.label > 1 {
            return Err(DatasetError::BadLabel(self.label));
        }
        if self.grid_shape.contains(&0) {
            return Err(DatasetError::InvalidSpec(format!("grid {:?} has a zero extent", self.grid_shape)));
        }
        if !(self.ventricle_scale > 0.0 && self.ventricle_scale.is_finite()) {
            return Err(DatasetError::InvalidSpec(format!(
                "ventricle scale {} must be positive",
                self.ventricle_scale
            )));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(DatasetError::InvalidSpec(format!("noise sigma {} must be >= 0", self.noise_sigma)));
        }
        for axis in 0..3 {
            let r = self.brain_radii[axis];
            let half = self.grid_shape[axis] as f64 / 2.0;
            if !(r > 0.0) || r > half {
                return Err(DatasetError::RadiiTooLarge(format!(
                    "brain radius {r} on axis {axis} must lie in (0, {half}]"
                )));
            }
        }
        // largest jittered ventricle plus the largest center offset
        let reach = VENTRICLE_FRACTION * self.ventricle_scale * (1.0 + JITTER) * (1.0 + JITTER);
        if reach >= 1.0 {
            return Err(DatasetError::RadiiTooLarge(format!(
                "ventricle scale {} lets the ventricle reach the brain surface",
                self.ventricle_scale
            )));
        }
        Ok(())
    }

    pub fn source_id(&self) -> String {
        format!("phantom-{}-{:016x}", self.label, self.seed)
    }
}

fn logistic(t: f64) -> f64 {
    1.0 / (1.0 + (-t).exp())
}

/// Soft indicator of the ellipsoid `sum(((p - c) / r)^2) <= 1`, with a
/// logistic edge about one voxel wide.
fn soft_ellipsoid(p: [f64; 3], c: [f64; 3], r: [f64; 3]) -> f64 {
    let rho = (0..3).map(|a| ((p[a] - c[a]) / r[a]).powi(2)).sum::<f64>().sqrt();
    let r_min = r.iter().cloned().fold(f64::INFINITY, f64::min);
    logistic((1.0 - rho) * r_min / EDGE_WIDTH)
}

/// Renders a phantom. The jitter is symmetric about the grid center on
/// every axis, so a mirrored phantom is another draw from the same class.
pub fn generate_phantom(spec: &PhantomSpec) -> Result<Volume, DatasetError> {
    spec.validate()?;
    let mut r = rng::stream(spec.seed, &[rng::tag::PHANTOM]);
    let center = spec.grid_shape.map(|e| (e as f64 - 1.0) / 2.0);
    let mut v_radii = [0.0; 3];
    let mut v_center = [0.0; 3];
    for a in 0..3 {
        v_radii[a] = spec.brain_radii[a] * VENTRICLE_FRACTION * spec.ventricle_scale * r.random_range(1.0 - JITTER..1.0 + JITTER);
    }
    for a in 0..3 {
        v_center[a] = center[a] + v_radii[a] * r.random_range(-JITTER..JITTER);
    }
    let [nx, ny, nz] = spec.grid_shape;
    let mut data = Vec::with_capacity(nx * ny * nz);
    let noise = Normal::new(0.0, spec.noise_sigma).expect("sigma validated");
    let mut noise_rng = rng::stream(spec.seed, &[rng::tag::PHANTOM, rng::tag::NOISE]);
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                let p = [i as f64, j as f64, k as f64];
                let brain = soft_ellipsoid(p, center, spec.brain_radii);
                let cavity = soft_ellipsoid(p, v_center, v_radii);
                let mut value = brain * (1.0 - (1.0 - VENTRICLE_INTENSITY) * cavity);
                if spec.noise_sigma > 0.0 {
                    value += noise.sample(&mut noise_rng);
                }
                data.push(value as f32);
            }
        }
    }
    Ok(Volume::new(spec.grid_shape, [1.0; 3], data, spec.source_id())?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn total(v: &Volume) -> f64 {
        v.data.iter().map(|&x| x as f64).sum()
    }

    #[test]
    fn deterministic_and_seed_sensitive() {
        let s = PhantomSpec::for_class([16, 16, 10], 1, 0.05, 3);
        assert_eq!(generate_phantom(&s).unwrap(), generate_phantom(&s).unwrap());
        let other = PhantomSpec { seed: 4, ..s.clone() };
        assert_ne!(generate_phantom(&s).unwrap().data, generate_phantom(&other).unwrap().data);
    }

    #[test]
    fn intensity_levels() {
        let s = PhantomSpec::for_class([32, 32, 16], 0, 0.0, 1);
        let v = generate_phantom(&s).unwrap();
        assert!(v.at(0, 0, 0) < 1e-3);
        let (lo, hi) = v.min_max();
        assert!(lo >= 0.0 && hi <= 1.0);
        // brain tissue between the ventricle and the surface
        assert!(v.at(16, 16, 4) > 0.9, "{}", v.at(16, 16, 4));
        let c = v.at(15, 15, 7).min(v.at(16, 16, 8));
        assert!(c < 0.35, "{c}");
    }

    #[test]
    fn larger_ventricles_darken_class_one() {
        for seed in 0..20 {
            let healthy = generate_phantom(&PhantomSpec::for_class([32, 32, 16], 0, 0.0, seed)).unwrap();
            let patient = generate_phantom(&PhantomSpec::for_class([32, 32, 16], 1, 0.0, seed)).unwrap();
            assert!(total(&patient) < total(&healthy), "seed {seed}");
        }
    }

    #[test]
    fn threshold_on_total_intensity_separates_classes() {
        let mut scored: Vec<(f64, u8)> = (0..100u64)
            .map(|i| {
                let label = (i % 2) as u8;
                let v = generate_phantom(&PhantomSpec::for_class([32, 32, 16], label, 0.0, 1000 + i)).unwrap();
                (total(&v), label)
            })
            .collect();
        scored.sort_by(|a, b| a.0.total_cmp(&b.0));
        // brute-force sweep over every cut between consecutive sorted totals
        let best = (0..=scored.len())
            .map(|cut| {
                let below_one = scored[..cut].iter().filter(|s| s.1 == 1).count();
                let above_zero = scored[cut..].iter().filter(|s| s.1 == 0).count();
                below_one + above_zero
            })
            .max()
            .unwrap();
        assert_eq!(best, 100);
    }

    #[test]
    fn validation_errors() {
        let mut s = PhantomSpec::for_class([16, 16, 8], 0, 0.0, 0);
        s.brain_radii[2] = 4.5;
        assert!(matches!(generate_phantom(&s), Err(DatasetError::RadiiTooLarge(_))));
        let s = PhantomSpec {
            ventricle_scale: 3.0,
            ..PhantomSpec::for_class([16, 16, 8], 0, 0.0, 0)
        };
        assert!(matches!(s.validate(), Err(DatasetError::RadiiTooLarge(_))));
        let s = PhantomSpec {
            ventricle_scale: 0.0,
            ..PhantomSpec::for_class([16, 16, 8], 0, 0.0, 0)
        };
        assert!(matches!(s.validate(), Err(DatasetError::InvalidSpec(_))));
        let s = PhantomSpec {
            label: 2,
            ..PhantomSpec::for_class([16, 16, 8], 0, 0.0, 0)
        };
        assert!(matches!(s.validate(), Err(DatasetError::BadLabel(2))));
    }
}
