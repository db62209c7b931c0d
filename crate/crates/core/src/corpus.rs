//! Procedural stand-in for a corpus of natural image patches.
//!
//! Patches are dead-leaves images: opaque disks with power-law distributed
//! radii stacked in random order. The model reproduces the two statistics the
//! rest of the crate relies on, a power spectrum falling roughly as `1/f^2`
//! and heavy-tailed (sparse) gradients. A faint smooth shading term keeps
//! large leaves from being perfectly flat.
//!
//! The bundled corpus is fully determined by [`BUNDLED_SEED`], so every
//! consumer sees the same pixels.

use std::collections::HashMap;
use std::sync::{Mutex, OnceLock};

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::image::Image;
use crate::prior::{estimate_prior, NaturalImagePrior};

/// Seed of the bundled corpus.
pub const BUNDLED_SEED: u64 = 0x0A9E_27E5;
/// Number of patches in the bundled corpus.
pub const BUNDLED_COUNT: usize = 20;
/// Side of the working spectrum used for pattern metrics.
pub const METRIC_SIZE: usize = 64;

const SUPERSAMPLE: usize = 3;

/// One dead-leaves image.
pub fn dead_leaves(width: usize, height: usize, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (sw, sh) = (width * SUPERSAMPLE, height * SUPERSAMPLE);
    let ss = SUPERSAMPLE as f64;
    let mut canvas = vec![rng.random_range(0.2..0.8); sw * sh];

    let r_min = 1.0;
    let r_max = 0.6 * width.max(height) as f64;
    let leaves = 40 + width * height / 6;
    for _ in 0..leaves {
        // inverse-CDF sample of p(r) ~ r^-3 on [r_min, r_max]
        let u: f64 = rng.random();
        let inv = 1.0 / (r_min * r_min) - u * (1.0 / (r_min * r_min) - 1.0 / (r_max * r_max));
        let r = 1.0 / inv.sqrt();
        let cx = rng.random_range(-r..width as f64 + r);
        let cy = rng.random_range(-r..height as f64 + r);
        let value: f64 = rng.random_range(0.05..0.95);
        let (x0, x1) = (
            ((cx - r) * ss).floor().max(0.0) as usize,
            ((cx + r) * ss).ceil().min(sw as f64) as usize,
        );
        let (y0, y1) = (
            ((cy - r) * ss).floor().max(0.0) as usize,
            ((cy + r) * ss).ceil().min(sh as f64) as usize,
        );
        let r2 = r * r;
        for y in y0..y1 {
            let dy = (y as f64 + 0.5) / ss - cy;
            for x in x0..x1 {
                let dx = (x as f64 + 0.5) / ss - cx;
                if dx * dx + dy * dy <= r2 {
                    canvas[y * sw + x] = value;
                }
            }
        }
    }

    let (fx, fy, phase): (f64, f64, f64) = (
        rng.random_range(0.02..0.08),
        rng.random_range(0.02..0.08),
        rng.random_range(0.0..6.3),
    );
    let mut data = Vec::with_capacity(width * height);
    for y in 0..height {
        for x in 0..width {
            let mut acc = 0.0;
            for sy in 0..SUPERSAMPLE {
                for sx in 0..SUPERSAMPLE {
                    acc += canvas[(y * SUPERSAMPLE + sy) * sw + x * SUPERSAMPLE + sx];
                }
            }
            let shade = 0.03 * (fx * x as f64 + fy * y as f64 + phase).sin();
            data.push(acc / (SUPERSAMPLE * SUPERSAMPLE) as f64 + shade);
        }
    }
    Image::clamp_from(width, height, data)
}

/// `count` patches of `size x size` drawn from consecutive seeds.
pub fn patches(count: usize, size: usize, seed: u64) -> Vec<Image> {
    (0..count as u64)
        .map(|i| dead_leaves(size, size, seed.wrapping_add(i.wrapping_mul(0x9E37_79B9))))
        .collect()
}

/// The bundled corpus at a given patch size.
pub fn bundled(size: usize) -> Vec<Image> {
    patches(BUNDLED_COUNT, size, BUNDLED_SEED)
}

/// Intensity-unit prior at `width x height`, estimated from bundled patches of
/// exactly that size. Cached per size.
pub fn intensity_prior(width: usize, height: usize) -> NaturalImagePrior {
    static CACHE: OnceLock<Mutex<HashMap<(usize, usize), NaturalImagePrior>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(p) = cache.lock().expect("prior cache poisoned").get(&(width, height)) {
        return p.clone();
    }
    let corpus: Vec<Image> = (0..BUNDLED_COUNT as u64)
        .map(|i| dead_leaves(width, height, BUNDLED_SEED.wrapping_add(i.wrapping_mul(0x9E37_79B9))))
        .collect();
    let prior = estimate_prior(&corpus, width, height).expect("non-empty corpus");
    cache
        .lock()
        .expect("prior cache poisoned")
        .insert((width, height), prior.clone());
    prior
}

/// Single-hole prior shape `A_1` for pattern metrics: bundled corpus at
/// [`METRIC_SIZE`], rescaled to unit mean.
pub fn metric_prior() -> NaturalImagePrior {
    intensity_prior(METRIC_SIZE, METRIC_SIZE).normalized_to_unit_mean()
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Spearman rank correlation, computed without ties handling (values are continuous).
    fn spearman(a: &[f64], b: &[f64]) -> f64 {
        fn ranks(v: &[f64]) -> Vec<f64> {
            let mut idx: Vec<usize> = (0..v.len()).collect();
            idx.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
            let mut r = vec![0.0; v.len()];
            for (rank, i) in idx.into_iter().enumerate() {
                r[i] = rank as f64;
            }
            r
        }
        let (ra, rb) = (ranks(a), ranks(b));
        let n = a.len() as f64;
        let ma = ra.iter().sum::<f64>() / n;
        let mb = rb.iter().sum::<f64>() / n;
        let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
        cov / (va * vb).sqrt()
    }

    #[test]
    fn deterministic() {
        assert_eq!(dead_leaves(32, 24, 5), dead_leaves(32, 24, 5));
        assert_ne!(dead_leaves(32, 24, 5), dead_leaves(32, 24, 6));
    }

    #[test]
    fn radial_power_decreases() {
        let corpus = patches(10, 64, 77);
        let prior = estimate_prior(&corpus, 64, 64).unwrap();
        let profile = prior.radial_profile();
        let radii: Vec<f64> = (0..profile.len()).map(|r| r as f64).collect();
        let rho = spearman(&radii, &profile);
        assert!(rho < -0.9, "rank correlation {rho}");
    }

    #[test]
    fn metric_prior_has_unit_mean_and_dc_peak() {
        let p = metric_prior();
        let mean = p.values().iter().sum::<f64>() / p.values().len() as f64;
        assert!((mean - 1.0).abs() < 1e-12);
        let max = p.values().iter().cloned().fold(0.0, f64::max);
        assert_eq!(p.get(0, 0), max);
    }
}
