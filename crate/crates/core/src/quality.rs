//! No-reference quality measures used to rank deblurred candidates.
//!
//! Gradients are forward differences without wrap-around, except inside the
//! sharpness index where total variation is periodic to match the
//! random-phase surrogates.

use num_complex::Complex64;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::image::Image;
use crate::spectrum::{dft_real, fft2_in_place};

pub const W_NORM_SPARSITY: f64 = -12.65;
pub const W_SHARPNESS: f64 = 0.073;
pub const W_SPARSITY: f64 = -0.289;
pub const W_RING: f64 = -9.86;

/// Exponent of the heavy-tailed gradient prior.
pub const SPARSITY_EXPONENT: f64 = 0.8;
/// Upper clamp of the sharpness index.
pub const SI_MAX: f64 = 300.0;
pub const DEFAULT_SURROGATES: usize = 30;
pub const RING_LEVELS: usize = 3;
pub const RING_ALPHA: f64 = 1.5;

const SURROGATE_SEED: u64 = 0x51_C0DE;

/// The four measures and their weighted sum; higher aggregate means better.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QualityReport {
    pub norm_sparsity: f64,
    /// Mean of `|gradient|^0.8` per gradient sample.
    pub sparsity_prior: f64,
    pub sharpness_index: f64,
    pub pyramid_ring: f64,
    pub aggregate: f64,
}

impl QualityReport {
    pub fn from_components(norm_sparsity: f64, sparsity_prior: f64, sharpness_index: f64, pyramid_ring: f64) -> Self {
        Self {
            norm_sparsity,
            sparsity_prior,
            sharpness_index,
            pyramid_ring,
            aggregate: W_NORM_SPARSITY * norm_sparsity
                + W_SHARPNESS * sharpness_index
                + W_SPARSITY * sparsity_prior
                + W_RING * pyramid_ring,
        }
    }
}

fn check_min_size(img: &Image, min: usize, what: &str) -> Result<()> {
    if img.width() < min || img.height() < min {
        return Err(Error::Dimension(format!(
            "{what} needs at least {min}x{min}, got {}x{}",
            img.width(),
            img.height()
        )));
    }
    Ok(())
}

/// Forward differences in x then y, borders excluded.
fn gradients(img: &Image) -> impl Iterator<Item = f64> + '_ {
    let (w, h) = img.dims();
    let gx = (0..h).flat_map(move |y| (0..w - 1).map(move |x| img.get(x + 1, y) - img.get(x, y)));
    let gy = (0..h - 1).flat_map(move |y| (0..w).map(move |x| img.get(x, y + 1) - img.get(x, y)));
    gx.chain(gy)
}

/// `l1 / l2` of the gradient field; 0 for a constant image.
pub fn norm_sparsity(img: &Image) -> Result<f64> {
    check_min_size(img, 2, "norm sparsity")?;
    Ok(l1_over_l2(gradients(img)))
}

fn l1_over_l2(values: impl Iterator<Item = f64>) -> f64 {
    let (l1, l2sq) = values.fold((0.0, 0.0), |(a, b), g| (a + g.abs(), b + g * g));
    if l2sq == 0.0 {
        0.0
    } else {
        l1 / l2sq.sqrt()
    }
}

/// Sum of `|gradient|^0.8` over both directions.
pub fn sparsity_prior(img: &Image) -> Result<f64> {
    check_min_size(img, 2, "sparsity prior")?;
    Ok(gradients(img).map(|g| g.abs().powf(SPARSITY_EXPONENT)).sum())
}

fn periodic_tv(data: &[f64], w: usize, h: usize) -> f64 {
    let mut tv = 0.0;
    for y in 0..h {
        let row = &data[y * w..(y + 1) * w];
        let below = &data[((y + 1) % h) * w..((y + 1) % h + 1) * w];
        for x in 0..w {
            tv += (row[(x + 1) % w] - row[x]).abs() + (below[x] - row[x]).abs();
        }
    }
    tv
}

/// `-log10` of the upper Gaussian tail at `(mu - tv) / sigma`, clamped to `[0, SI_MAX]`.
pub fn sharpness_from_stats(tv: f64, mu: f64, sigma: f64) -> f64 {
    let t = if sigma > 0.0 {
        (mu - tv) / sigma
    } else if mu > tv {
        f64::INFINITY
    } else {
        0.0
    };
    let tail = 0.5 * erfc(t / std::f64::consts::SQRT_2);
    let value = if tail > 1e-300 {
        -tail.log10()
    } else if t.is_infinite() {
        SI_MAX
    } else {
        // log of the Mills-ratio approximation, valid far into the tail
        let ln_tail = -0.5 * t * t - (t * (2.0 * std::f64::consts::PI).sqrt()).ln() + (1.0 - 1.0 / (t * t)).ln();
        -ln_tail / std::f64::consts::LN_10
    };
    value.clamp(0.0, SI_MAX)
}

/// Sharpness index with [`DEFAULT_SURROGATES`] surrogates and the fixed seed.
pub fn sharpness_index(img: &Image) -> Result<f64> {
    sharpness_index_with(img, DEFAULT_SURROGATES, 0)
}

/// Compares the image's total variation with that of `surrogates`
/// random-phase images sharing its power spectrum.
pub fn sharpness_index_with(img: &Image, surrogates: usize, seed: u64) -> Result<f64> {
    check_min_size(img, 8, "sharpness index")?;
    if surrogates < 2 {
        return Err(Error::Config(format!("need at least 2 surrogates, got {surrogates}")));
    }
    let (w, h) = img.dims();
    let spec = dft_real(img.data(), w, h);
    let tv = periodic_tv(img.data(), w, h);

    let mut rng = ChaCha8Rng::seed_from_u64(SURROGATE_SEED ^ seed ^ ((w as u64) << 32 | h as u64));
    let mut tvs = Vec::with_capacity(surrogates);
    let mut noise = vec![Complex64::new(0.0, 0.0); w * h];
    let mut buf = vec![Complex64::new(0.0, 0.0); w * h];
    for _ in 0..surrogates {
        for z in noise.iter_mut() {
            *z = Complex64::new(rng.random::<f64>() - 0.5, 0.0);
        }
        // the spectrum of real noise is Hermitian, so its unit phases keep
        // the surrogate real
        fft2_in_place(&mut noise, w, h, false);
        for (i, (b, (f, n))) in buf.iter_mut().zip(spec.data().iter().zip(&noise)).enumerate() {
            let norm = n.norm();
            *b = if i == 0 || norm == 0.0 { *f } else { f.norm() * n / norm };
        }
        fft2_in_place(&mut buf, w, h, true);
        let real: Vec<f64> = buf.iter().map(|z| z.re).collect();
        tvs.push(periodic_tv(&real, w, h));
    }
    let m = tvs.len() as f64;
    let mu = tvs.iter().sum::<f64>() / m;
    let var = tvs.iter().map(|t| (t - mu).powi(2)).sum::<f64>() / (m - 1.0);
    Ok(sharpness_from_stats(tv, mu, var.sqrt()))
}

fn downsample(data: &[f64], w: usize, h: usize) -> (Vec<f64>, usize, usize) {
    let (nw, nh) = (w / 2, h / 2);
    let mut out = Vec::with_capacity(nw * nh);
    for y in 0..nh {
        for x in 0..nw {
            let i = 2 * y * w + 2 * x;
            out.push(0.25 * (data[i] + data[i + 1] + data[i + w] + data[i + w + 1]));
        }
    }
    (out, nw, nh)
}

/// Gradient magnitude from forward differences, zero past the last row/column.
fn gradient_magnitude(data: &[f64], w: usize, h: usize) -> Vec<f64> {
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let gx = if x + 1 < w { data[i + 1] - data[i] } else { 0.0 };
            let gy = if y + 1 < h { data[i + w] - data[i] } else { 0.0 };
            out[i] = (gx * gx + gy * gy).sqrt();
        }
    }
    out
}

fn max_filter3(data: &[f64], w: usize, h: usize) -> Vec<f64> {
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut m = f64::NEG_INFINITY;
            for yy in y.saturating_sub(1)..(y + 2).min(h) {
                for xx in x.saturating_sub(1)..(x + 2).min(w) {
                    m = m.max(data[yy * w + xx]);
                }
            }
            out[y * w + x] = m;
        }
    }
    out
}

/// Ringing estimate: over a three-level pyramid, the mean amount by which the
/// deblurred gradient magnitude exceeds `RING_ALPHA` times the local maximum
/// of the blurred gradient magnitude, summed over levels.
pub fn pyramid_ring(blurred: &Image, deblurred: &Image) -> Result<f64> {
    if blurred.dims() != deblurred.dims() {
        return Err(Error::Dimension(format!(
            "ringing compares {:?} with {:?}",
            blurred.dims(),
            deblurred.dims()
        )));
    }
    let (mut w, mut h) = blurred.dims();
    let mut b = blurred.data().to_vec();
    let mut d = deblurred.data().to_vec();
    let mut total = 0.0;
    for level in 0..RING_LEVELS {
        if level > 0 {
            if w < 4 || h < 4 {
                break;
            }
            (b, _, _) = downsample(&b, w, h);
            let (nd, nw, nh) = downsample(&d, w, h);
            d = nd;
            w = nw;
            h = nh;
        }
        let gb = max_filter3(&gradient_magnitude(&b, w, h), w, h);
        let gd = gradient_magnitude(&d, w, h);
        let excess: f64 = gd.iter().zip(&gb).map(|(d, b)| (d - RING_ALPHA * b).max(0.0)).sum();
        total += excess / (w * h) as f64;
    }
    Ok(total)
}

/// [`sparsity_prior`] divided by the number of gradient samples.
pub fn mean_sparsity_prior(img: &Image) -> Result<f64> {
    let (w, h) = img.dims();
    Ok(sparsity_prior(img)? / ((w - 1) * h + w * (h - 1)) as f64)
}

/// All four measures on `deblurred`, with ringing judged against `blurred`.
///
/// The sparsity component enters as a per-gradient mean so that the fixed
/// weights do not depend on the patch size.
pub fn aggregate_quality(blurred: &Image, deblurred: &Image) -> Result<QualityReport> {
    let ring = pyramid_ring(blurred, deblurred)?;
    Ok(QualityReport::from_components(
        norm_sparsity(deblurred)?,
        mean_sparsity_prior(deblurred)?,
        sharpness_index(deblurred)?,
        ring,
    ))
}
