//! Rician corruption of magnitude images. The noise floor scales with
//! the image: sigma = 0.01 · RMS(signal) · 10^(dB/20), so a level of
//! 0 dB injects noise at 1% of the signal RMS and each +6 dB doubles
//! it. Draws are keyed on (seed, voxel index), so corruption of a
//! given image is reproducible voxel-for-voxel regardless of
//! traversal or thread order.

use serde::{Deserialize, Serialize};

use crate::rng;
use crate::volume::IntensityVolume;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    /// Level in dB relative to the 1%-of-RMS floor. `-inf` means no
    /// noise at all (exact identity).
    pub level_db: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn new(level_db: f64, seed: u64) -> Self {
        NoiseSpec { level_db, seed }
    }

    /// The no-noise sentinel.
    pub fn clean(seed: u64) -> Self {
        NoiseSpec {
            level_db: f64::NEG_INFINITY,
            seed,
        }
    }

    /// Gaussian sigma for this image.
    pub fn sigma_for(&self, image: &IntensityVolume) -> f64 {
        if self.level_db == f64::NEG_INFINITY {
            return 0.0;
        }
        0.01 * image.rms() * 10f64.powf(self.level_db / 20.0)
    }
}

const STREAM_RE: u64 = 0x5249_4345;
const STREAM_IM: u64 = 0x4E4F_4953;

/// out(x) = sqrt((x + n1)² + n2²) with n1, n2 ~ N(0, sigma²): the
/// magnitude of a complex signal whose real and imaginary channels
/// each pick up independent Gaussian noise.
pub fn rician_corrupt(image: &IntensityVolume, spec: &NoiseSpec) -> IntensityVolume {
    let sigma = spec.sigma_for(image);
    if sigma == 0.0 {
        return image.clone();
    }
    let data: Vec<f32> = image
        .data()
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let n1 = rng::gaussian(spec.seed, STREAM_RE, i as u64);
            let n2 = rng::gaussian(spec.seed, STREAM_IM, i as u64);
            let re = x as f64 + sigma * n1;
            let im = sigma * n2;
            (re * re + im * im).sqrt() as f32
        })
        .collect();
    IntensityVolume::new(image.dims(), data).expect("magnitudes are finite and non-negative")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::Dims;

    fn flat_image(value: f32, n: usize) -> IntensityVolume {
        IntensityVolume::new(Dims::new(n, 1, 1), vec![value; n]).unwrap()
    }

    #[test]
    fn sigma_follows_db_scale() {
        let img = flat_image(2.0, 100);
        // RMS = 2 → floor 0.02.
        let s0 = NoiseSpec::new(0.0, 0).sigma_for(&img);
        assert!((s0 - 0.02).abs() < 1e-12);
        let s6 = NoiseSpec::new(6.0, 0).sigma_for(&img);
        assert!((s6 / s0 - 10f64.powf(0.3)).abs() < 1e-9);
        // +20 dB is exactly a factor of 10.
        let s20 = NoiseSpec::new(20.0, 0).sigma_for(&img);
        assert!((s20 - 0.2).abs() < 1e-12);
    }

    #[test]
    fn clean_spec_is_identity() {
        let img = flat_image(1.5, 32);
        let out = rician_corrupt(&img, &NoiseSpec::clean(7));
        assert_eq!(out, img);
    }

    #[test]
    fn corruption_is_deterministic_per_seed() {
        let img = flat_image(1.0, 64);
        let a = rician_corrupt(&img, &NoiseSpec::new(5.0, 42));
        let b = rician_corrupt(&img, &NoiseSpec::new(5.0, 42));
        assert_eq!(a, b);
        let c = rician_corrupt(&img, &NoiseSpec::new(5.0, 43));
        assert_ne!(a, c);
    }

    #[test]
    fn output_stays_non_negative() {
        let img = flat_image(0.01, 1000);
        let out = rician_corrupt(&img, &NoiseSpec::new(9.0, 3));
        assert!(out.data().iter().all(|&v| v >= 0.0 && v.is_finite()));
    }

    #[test]
    fn zero_signal_gives_rayleigh_mean() {
        // With x = 0 the output is Rayleigh(sigma); its mean is
        // sigma·sqrt(pi/2).
        let n = 100_000;
        let img = IntensityVolume::new(Dims::new(n, 1, 1), vec![0.0; n]).unwrap();
        // sigma would be 0 off a zero image, so force a reference level
        // through a known sigma: use a spec whose RMS factor is taken
        // from a separate image with RMS 1.
        let reference = flat_image(1.0, 4);
        let spec = NoiseSpec::new(9.0, 11);
        let sigma = spec.sigma_for(&reference);
        // Corrupt manually at that sigma by scaling: corrupting the
        // zero image directly is the identity (RMS 0 → sigma 0).
        assert_eq!(spec.sigma_for(&img), 0.0);
        let noisy = {
            let data: Vec<f32> = (0..n)
                .map(|i| {
                    let n1 = crate::rng::gaussian(spec.seed, STREAM_RE, i as u64);
                    let n2 = crate::rng::gaussian(spec.seed, STREAM_IM, i as u64);
                    ((sigma * n1).powi(2) + (sigma * n2).powi(2)).sqrt() as f32
                })
                .collect();
            IntensityVolume::new(img.dims(), data).unwrap()
        };
        let mean: f64 = noisy.data().iter().map(|&v| v as f64).sum::<f64>() / n as f64;
        let expect = sigma * (std::f64::consts::PI / 2.0).sqrt();
        assert!(
            (mean - expect).abs() < 0.01 * expect,
            "mean {mean} vs {expect}"
        );
    }

    #[test]
    fn high_signal_noise_is_approximately_gaussian() {
        // For x >> sigma the Rician tends to N(x, sigma²): check the
        // sample mean and std against that limit.
        let n = 100_000;
        let img = flat_image(10.0, n);
        let spec = NoiseSpec::new(20.0, 5);
        let sigma = spec.sigma_for(&img); // 1.0
        let out = rician_corrupt(&img, &spec);
        let mean: f64 = out.data().iter().map(|&v| v as f64).sum::<f64>() / n as f64;
        let var: f64 = out
            .data()
            .iter()
            .map(|&v| (v as f64 - mean).powi(2))
            .sum::<f64>()
            / n as f64;
        // First-order Rician mean correction is sigma²/(2x).
        let expect_mean = 10.0 + sigma * sigma / 20.0;
        assert!((mean - expect_mean).abs() < 0.02, "mean {mean}");
        assert!((var.sqrt() - sigma).abs() < 0.02, "std {}", var.sqrt());
    }
}
