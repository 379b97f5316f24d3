//! Synthetic hyperspectral benchmark with planted contiguous band groups.
//!
//! Each class has a prototype level per band group. A pixel draws one latent
//! value per group around its class prototype, every band of the group
//! follows that latent value with its own gain and offset, the whole spectrum
//! is scaled by a per-pixel illumination factor, and an AR(1) noise process
//! runs across neighbouring bands.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::cube_io::HsiDataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub seed: u64,
    pub pixels_per_class: usize,
    pub num_classes: usize,
    /// Contiguous planted groups; their sum is the band count.
    pub group_sizes: Vec<usize>,
    /// Half-width of the uniform spread of class prototypes around a group level.
    pub class_spread: f64,
    /// Standard deviation of a pixel's group latent around its class prototype.
    pub within_class_sd: f64,
    pub illumination_range: (f64, f64),
    pub band_noise_sd: f64,
    /// Lag-one correlation of the band noise.
    pub noise_correlation: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            seed: 0,
            pixels_per_class: 500,
            num_classes: 4,
            group_sizes: vec![8, 12, 6, 10, 14, 10],
            class_spread: 0.12,
            within_class_sd: 0.07,
            illumination_range: (0.85, 1.15),
            band_noise_sd: 0.03,
            noise_correlation: 0.6,
        }
    }
}

impl SynthSpec {
    pub fn num_bands(&self) -> usize {
        self.group_sizes.iter().sum()
    }

    /// Planted groups as column positions.
    pub fn planted_groups(&self) -> Vec<Vec<usize>> {
        let mut start = 0;
        self.group_sizes
            .iter()
            .map(|&s| {
                let g = (start..start + s).collect();
                start += s;
                g
            })
            .collect()
    }
}

pub fn generate_synthetic(spec: &SynthSpec) -> Result<HsiDataset> {
    if spec.num_classes < 2 || spec.pixels_per_class < 3 {
        return Err(Error::Invalid("need at least 2 classes of 3 pixels".into()));
    }
    if spec.group_sizes.is_empty() || spec.group_sizes.contains(&0) {
        return Err(Error::Invalid("group sizes must be positive".into()));
    }
    let (lo, hi) = spec.illumination_range;
    if !(0.0 < lo && lo <= hi) || !(-1.0 < spec.noise_correlation && spec.noise_correlation < 1.0) {
        return Err(Error::Invalid("illumination range or noise correlation out of range".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let groups = spec.planted_groups();
    let b = spec.num_bands();
    let g = groups.len();
    let unit = Normal::new(0.0, 1.0).unwrap();

    let level: Vec<f64> = (0..g).map(|_| rng.random_range(0.3..0.7)).collect();
    let proto: Vec<Vec<f64>> = (0..spec.num_classes)
        .map(|_| level.iter().map(|l| l + rng.random_range(-spec.class_spread..=spec.class_spread)).collect())
        .collect();
    let gain: Vec<f64> = (0..b).map(|_| rng.random_range(0.8..1.2)).collect();
    let offset: Vec<f64> = (0..b).map(|_| rng.random_range(-0.05..0.05)).collect();

    let n = spec.pixels_per_class * spec.num_classes;
    let mut pixels = Array2::zeros((n, b));
    let mut labels = Vec::with_capacity(n);
    let rho = spec.noise_correlation;
    let innov = (1.0 - rho * rho).sqrt();
    for r in 0..n {
        let class = r % spec.num_classes;
        labels.push(class as i64 + 1);
        let illum = rng.random_range(lo..=hi);
        let latent: Vec<f64> = proto[class]
            .iter()
            .map(|p| p + spec.within_class_sd * unit.sample(&mut rng))
            .collect();
        let mut noise = unit.sample(&mut rng);
        for (k, members) in groups.iter().enumerate() {
            for &j in members {
                if j > 0 {
                    noise = rho * noise + innov * unit.sample(&mut rng);
                }
                pixels[[r, j]] = illum * (gain[j] * latent[k] + offset[j]) + spec.band_noise_sd * noise;
            }
        }
    }
    HsiDataset::from_raw_labels(pixels, &labels, (1..=b).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::proximity::{correlation_dm, DmMeasure};

    #[test]
    fn shape_and_determinism() {
        let spec = SynthSpec {
            pixels_per_class: 20,
            ..SynthSpec::default()
        };
        let a = generate_synthetic(&spec).unwrap();
        assert_eq!(a.num_pixels(), 80);
        assert_eq!(a.num_bands(), 60);
        assert_eq!(a.num_classes(), 4);
        assert_eq!(a.pixels, generate_synthetic(&spec).unwrap().pixels);
        let other = generate_synthetic(&SynthSpec { seed: 1, ..spec }).unwrap();
        assert_ne!(a.pixels, other.pixels);
    }

    #[test]
    fn planted_groups_are_tighter_than_across() {
        let spec = SynthSpec {
            pixels_per_class: 100,
            ..SynthSpec::default()
        };
        let ds = generate_synthetic(&spec).unwrap();
        let rows: Vec<usize> = (0..ds.num_pixels()).collect();
        let dm = correlation_dm(&ds, &rows).unwrap();
        assert_eq!(dm.measure, DmMeasure::Correlation);
        let groups = spec.planted_groups();
        let label: Vec<usize> = (0..60).map(|j| groups.iter().position(|g| g.contains(&j)).unwrap()).collect();
        let (mut within, mut nw, mut across, mut na) = (0.0, 0, 0.0, 0);
        for i in 0..60 {
            for j in 0..i {
                if label[i] == label[j] {
                    within += dm.values[[i, j]];
                    nw += 1;
                } else {
                    across += dm.values[[i, j]];
                    na += 1;
                }
            }
        }
        assert!(within / (nw as f64) < 0.5 * across / (na as f64));
    }
}
