//! Defocus simulation: convolution with a PSF plus additive Gaussian noise.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::psf::Psf;

/// Convolution with edge-replicated borders, without noise or clamping.
pub fn convolve_replicate(image: &Image, psf: &Psf) -> Result<Vec<f64>> {
    let (w, h) = image.dims();
    let side = psf.side();
    if side > w || side > h {
        return Err(Error::Dimension(format!(
            "kernel side {side} larger than image {w}x{h}"
        )));
    }
    let c = psf.center() as isize;
    let mut out = vec![0.0; w * h];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let mut acc = 0.0;
            for ky in 0..side as isize {
                for kx in 0..side as isize {
                    let k = psf.at(kx as usize, ky as usize);
                    if k != 0.0 {
                        acc += k * image.get_replicated(x + c - kx, y + c - ky);
                    }
                }
            }
            out[(y as usize) * w + x as usize] = acc;
        }
    }
    Ok(out)
}

/// Blurs `image` with `psf` and adds zero-mean Gaussian noise of standard
/// deviation `sigma`, clamping the result to `[0, 1]`.
pub fn blur<R: Rng + ?Sized>(image: &Image, psf: &Psf, sigma: f64, rng: &mut R) -> Result<Image> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::OutOfRange(format!("noise sigma {sigma}")));
    }
    let mut out = convolve_replicate(image, psf)?;
    if sigma > 0.0 {
        let normal = Normal::new(0.0, sigma).map_err(|e| Error::OutOfRange(e.to_string()))?;
        for v in &mut out {
            *v += normal.sample(rng);
        }
    }
    let (w, h) = image.dims();
    Ok(Image::clamp_from(w, h, out))
}

/// [`blur`] with a generator seeded from `seed`.
pub fn blur_seeded(image: &Image, psf: &Psf, sigma: f64, seed: u64) -> Result<Image> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    blur(image, psf, sigma, &mut rng)
}
