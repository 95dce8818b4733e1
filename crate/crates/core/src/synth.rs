//! Seeded synthetic galleries: labeled clusters on the unit sphere.
//!
//! The stream is ChaCha8 seeded with `seed_from_u64(seed)`; Gaussian draws use
//! `rand_distr::StandardNormal` (ziggurat). All class means are drawn first,
//! then item noise class by class, component by component. For a fixed seed
//! the written `vectors.bin` is identical on every platform.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::index::IndexSnapshot;
use crate::model::{Embedding, GalleryRecord, Modality};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthParams {
    pub classes: usize,
    pub per_class: usize,
    pub dim: usize,
    /// Per-component standard deviation of the noise added to a class mean.
    pub noise: f64,
    pub seed: u64,
}

impl SynthParams {
    fn validate(&self) -> Result<()> {
        if self.classes == 0 || self.per_class == 0 || self.dim == 0 {
            return Err(Error::InvariantViolation("classes, per_class and dim must be at least 1".into()));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::InvariantViolation(format!("noise must be finite and >= 0, got {}", self.noise)));
        }
        Ok(())
    }
}

pub fn class_label(class: usize, classes: usize) -> String {
    let width = digits(classes - 1);
    format!("class_{class:0width$}")
}

fn digits(n: usize) -> usize {
    n.checked_ilog10().map_or(1, |d| d as usize + 1).max(3)
}

fn unit_gaussian(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// Generates `classes * per_class` items, class-major. Item `i` of class `c`
/// is `normalize(mean_c + noise * N(0, I))`.
pub fn generate(params: &SynthParams) -> Result<IndexSnapshot> {
    params.validate()?;
    let SynthParams { classes, per_class, dim, noise, seed } = *params;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let means: Vec<Vec<f64>> = (0..classes).map(|_| unit_gaussian(&mut rng, dim)).collect();

    let item_width = digits(per_class - 1);
    let mut records = Vec::with_capacity(classes * per_class);
    let mut vectors = Vec::with_capacity(classes * per_class * dim);
    let mut raw = vec![0.0f32; dim];
    for (c, mean) in means.iter().enumerate() {
        let label = class_label(c, classes);
        for i in 0..per_class {
            for (slot, m) in raw.iter_mut().zip(mean) {
                let g: f64 = rng.sample(StandardNormal);
                *slot = (m + noise * g) as f32;
            }
            let id = format!("{label}/{i:0item_width$}");
            let v = Embedding::normalize(&raw, dim).map_err(|e| e.with_id(&id))?;
            vectors.extend_from_slice(v.as_slice());
            records.push(GalleryRecord {
                uri: format!("synthetic://{id}"),
                id,
                row: records.len(),
                class_label: label.clone(),
                modality: Modality::Image,
                caption: None,
            });
        }
    }
    IndexSnapshot::new(records, vectors, dim)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(noise: f64, seed: u64) -> SynthParams {
        SynthParams { classes: 5, per_class: 4, dim: 16, noise, seed }
    }

    #[test]
    fn counts_and_labels() {
        let snap = generate(&params(0.1, 1)).unwrap();
        assert_eq!(snap.count(), 20);
        assert_eq!(snap.class_counts().len(), 5);
        assert_eq!(snap.record(0).id, "class_000/000");
        assert_eq!(snap.record(19).class_label, "class_004");
    }

    #[test]
    fn same_seed_same_vectors() {
        let a = generate(&params(0.05, 7)).unwrap();
        let b = generate(&params(0.05, 7)).unwrap();
        let c = generate(&params(0.05, 8)).unwrap();
        assert_eq!(a.vectors(), b.vectors());
        assert_ne!(a.vectors(), c.vectors());
    }

    #[test]
    fn zero_noise_collapses_classes() {
        let snap = generate(&params(0.0, 3)).unwrap();
        for c in 0..5 {
            let first = snap.row_vector(c * 4);
            for i in 1..4 {
                assert_eq!(snap.row_vector(c * 4 + i), first);
            }
        }
    }

    #[test]
    fn rejects_bad_params() {
        assert!(generate(&SynthParams { classes: 0, ..params(0.0, 0) }).is_err());
        assert!(generate(&params(-1.0, 0)).is_err());
        assert!(generate(&params(f64::NAN, 0)).is_err());
    }

    #[test]
    fn label_width_grows() {
        assert_eq!(class_label(7, 89), "class_007");
        assert_eq!(class_label(1234, 2000), "class_1234");
    }
}
