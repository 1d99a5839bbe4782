//! Gaussian-blob generator for two-modality classification data.
//!
//! Each class gets one mean per modality; the means are rescaled so the
//! closest pair sits exactly `class_separation` apart, which makes the
//! difficulty knob independent of dimension and class count. A sample's two
//! feature vectors are independently noised views of its class, so either
//! modality alone predicts the label and combining them helps under noise.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::data::{MultimodalSample, SyntheticSpec};
use crate::error::Result;
use crate::rng::substream;

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Vec<MultimodalSample>> {
    spec.validate()?;
    let mut rng = substream(spec.seed, "data");
    let means_a = class_means(&mut rng, spec.n_classes, spec.dim_a, spec.class_separation);
    let means_b = class_means(&mut rng, spec.n_classes, spec.dim_b, spec.class_separation);

    let mut samples = Vec::with_capacity(spec.n_samples);
    for i in 0..spec.n_samples {
        let label = i % spec.n_classes;
        let a = noisy(&mut rng, &means_a[label], spec.noise_std);
        let b = noisy(&mut rng, &means_b[label], spec.noise_std);
        samples.push(MultimodalSample::new(i as u64, Some(a), Some(b), label)?);
    }
    Ok(samples)
}

fn class_means<R: Rng>(rng: &mut R, k: usize, dim: usize, separation: f64) -> Vec<Vec<f64>> {
    loop {
        let means: Vec<Vec<f64>> = (0..k)
            .map(|_| (0..dim).map(|_| rng.sample(StandardNormal)).collect())
            .collect();
        let mut min_dist = f64::INFINITY;
        for i in 0..k {
            for j in i + 1..k {
                let d: f64 = means[i]
                    .iter()
                    .zip(&means[j])
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                min_dist = min_dist.min(d);
            }
        }
        // Coincident draws happen with probability zero; resample if the
        // scale factor would blow up.
        if min_dist > 1e-6 {
            let scale = separation / min_dist;
            return means
                .into_iter()
                .map(|m| m.into_iter().map(|v| v * scale).collect())
                .collect();
        }
    }
}

fn noisy<R: Rng>(rng: &mut R, mean: &[f64], std: f64) -> Vec<f64> {
    mean.iter()
        .map(|&m| m + std * rng.sample::<f64, _>(StandardNormal))
        .collect()
}
