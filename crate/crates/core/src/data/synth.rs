//! Synthetic classification images: each class is a fixed pattern of
//! Gaussian blobs on an 8×8 grid, samples add clipped pixel noise.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{Dataset, Split};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SynthConfig {
    pub side: usize,
    pub blobs_per_class: usize,
    /// Standard deviation of additive pixel noise (before clipping).
    pub noise: f64,
    /// Per-sample multiplicative jitter of the prototype, uniform in
    /// `[1 − jitter, 1]`.
    pub jitter: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self { side: 8, blobs_per_class: 3, noise: 0.25, jitter: 0.3 }
    }
}

/// Class prototypes, `[classes, side·side]`, peak value 1.
pub fn prototypes(classes: usize, cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let side = cfg.side as f64;
    (0..classes)
        .map(|_| {
            let blobs: Vec<(f64, f64, f64)> = (0..cfg.blobs_per_class)
                .map(|_| (rng.random_range(0.5..side - 0.5), rng.random_range(0.5..side - 0.5), rng.random_range(0.7..1.5)))
                .collect();
            let mut img: Vec<f64> = (0..cfg.side * cfg.side)
                .map(|i| {
                    let (r, c) = ((i / cfg.side) as f64, (i % cfg.side) as f64);
                    blobs
                        .iter()
                        .map(|(br, bc, s)| (-((r - br).powi(2) + (c - bc).powi(2)) / (2.0 * s * s)).exp())
                        .sum::<f64>()
                })
                .collect();
            let max = img.iter().cloned().fold(0.0, f64::max);
            img.iter_mut().for_each(|v| *v /= max);
            img
        })
        .collect()
}

pub fn gen_synth(n: usize, classes: usize, seed: u64) -> Result<Dataset> {
    gen_synth_with(n, classes, seed, &SynthConfig::default())
}

/// Class-balanced dataset of `n` samples, deterministic in `seed`.
pub fn gen_synth_with(n: usize, classes: usize, seed: u64, cfg: &SynthConfig) -> Result<Dataset> {
    if classes == 0 || n < classes {
        return Err(Error::invalid(format!("need n >= classes >= 1, got n={n}, classes={classes}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let protos = prototypes(classes, cfg, &mut rng);
    let mut labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
    labels.shuffle(&mut rng);
    let dims = cfg.side * cfg.side;
    let mut data = Vec::with_capacity(n * dims);
    for &l in &labels {
        let amp = if cfg.jitter > 0.0 { 1.0 - cfg.jitter * rng.random::<f64>() } else { 1.0 };
        for &p in &protos[l] {
            let noise = if cfg.noise > 0.0 { cfg.noise * rng.sample::<f64, _>(StandardNormal) } else { 0.0 };
            data.push((amp * p + noise).clamp(0.0, 1.0));
        }
    }
    let inputs = Tensor::new(vec![n, 1, cfg.side, cfg.side], data)?;
    Dataset::new(inputs, labels, classes, Split::Train)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_data() {
        assert_eq!(gen_synth(50, 5, 3).unwrap(), gen_synth(50, 5, 3).unwrap());
        assert_ne!(gen_synth(50, 5, 3).unwrap(), gen_synth(50, 5, 4).unwrap());
    }

    #[test]
    fn noiseless_classes_are_constant() {
        let cfg = SynthConfig { noise: 0.0, jitter: 0.0, ..SynthConfig::default() };
        let ds = gen_synth_with(40, 4, 1, &cfg).unwrap();
        for c in 0..4 {
            let rows: Vec<&[f64]> = (0..ds.len()).filter(|&i| ds.labels[i] == c).map(|i| ds.inputs.row(i)).collect();
            assert_eq!(rows.len(), 10);
            assert!(rows.windows(2).all(|w| w[0] == w[1]));
        }
    }

    #[test]
    fn values_in_unit_range_and_balanced() {
        let ds = gen_synth(100, 10, 8).unwrap();
        assert!(ds.inputs.data().iter().all(|v| (0.0..=1.0).contains(v)));
        for c in 0..10 {
            assert_eq!(ds.labels.iter().filter(|&&l| l == c).count(), 10);
        }
        assert!(gen_synth(3, 4, 0).is_err());
    }
}
