//! Two-dimensional discrete Fourier transforms with DC at index `(0, 0)`.
//!
//! The forward transform is unnormalized; the inverse divides by the number
//! of bins, so `idft(dft(x)) == x`.

use std::cell::RefCell;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::image::Image;

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn plan(len: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        if inverse {
            p.plan_fft_inverse(len)
        } else {
            p.plan_fft_forward(len)
        }
    })
}

/// Complex frequency-domain array.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    width: usize,
    height: usize,
    data: Vec<Complex64>,
}

impl Spectrum {
    pub fn new(width: usize, height: usize, data: Vec<Complex64>) -> Result<Self> {
        if width == 0 || height == 0 || data.len() != width * height {
            return Err(Error::Dimension(format!(
                "spectrum {width}x{height} with {} bins",
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn filled(width: usize, height: usize, value: Complex64) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, u: usize, v: usize) -> Complex64 {
        self.data[v * self.width + u]
    }

    pub fn power(&self) -> Vec<f64> {
        self.data.iter().map(|c| c.norm_sqr()).collect()
    }

    pub fn check_same_dims(&self, other: &Spectrum) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::Dimension(format!(
                "spectrum {}x{} vs {}x{}",
                self.width, self.height, other.width, other.height
            )));
        }
        Ok(())
    }

    /// Elementwise product.
    pub fn mul(&self, other: &Spectrum) -> Result<Spectrum> {
        self.check_same_dims(other)?;
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a * b).collect();
        Ok(Spectrum {
            width: self.width,
            height: self.height,
            data,
        })
    }
}

/// In-place 2D FFT of a row-major complex buffer.
pub(crate) fn fft2_in_place(buf: &mut [Complex64], width: usize, height: usize, inverse: bool) {
    debug_assert_eq!(buf.len(), width * height);
    let row_fft = plan(width, inverse);
    row_fft.process(buf);

    let col_fft = plan(height, inverse);
    let mut col = vec![Complex64::new(0.0, 0.0); height];
    for x in 0..width {
        for (y, c) in col.iter_mut().enumerate() {
            *c = buf[y * width + x];
        }
        col_fft.process(&mut col);
        for (y, c) in col.iter().enumerate() {
            buf[y * width + x] = *c;
        }
    }
    if inverse {
        let scale = 1.0 / (width * height) as f64;
        for c in buf.iter_mut() {
            *c *= scale;
        }
    }
}

/// Forward transform of a real row-major buffer of exactly `width x height` samples.
pub fn dft_real(data: &[f64], width: usize, height: usize) -> Spectrum {
    let mut buf: Vec<Complex64> = data.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft2_in_place(&mut buf, width, height, false);
    Spectrum {
        width,
        height,
        data: buf,
    }
}

/// Forward transform of an image extended to `pad_w x pad_h` by edge replication.
///
/// Replication keeps a constant image constant on the padded support, so its
/// spectrum is a single DC bin whatever the padding.
pub fn dft(image: &Image, pad_w: usize, pad_h: usize) -> Result<Spectrum> {
    if pad_w == 0 || pad_h == 0 {
        return Err(Error::Dimension("zero padding dimension".into()));
    }
    if pad_w < image.width() || pad_h < image.height() {
        return Err(Error::Dimension(format!(
            "pad {pad_w}x{pad_h} smaller than image {}x{}",
            image.width(),
            image.height()
        )));
    }
    let mut buf = Vec::with_capacity(pad_w * pad_h);
    for y in 0..pad_h {
        for x in 0..pad_w {
            buf.push(Complex64::new(image.get_replicated(x as isize, y as isize), 0.0));
        }
    }
    fft2_in_place(&mut buf, pad_w, pad_h, false);
    Ok(Spectrum {
        width: pad_w,
        height: pad_h,
        data: buf,
    })
}

/// Inverse transform; returns the real part over the full spectrum support.
pub fn idft(spectrum: &Spectrum) -> Vec<f64> {
    let mut buf = spectrum.data.clone();
    fft2_in_place(&mut buf, spectrum.width, spectrum.height, true);
    buf.into_iter().map(|c| c.re).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn constant_image_has_only_dc() {
        let img = Image::constant(5, 3, 0.25).unwrap();
        for (pw, ph) in [(5, 3), (8, 6), (17, 9)] {
            let s = dft(&img, pw, ph).unwrap();
            assert!((s.get(0, 0).re - 0.25 * (pw * ph) as f64).abs() < 1e-10);
            for (i, c) in s.data().iter().enumerate().skip(1) {
                assert!(c.norm() < 1e-10, "bin {i} = {c}");
            }
        }
    }

    #[test]
    fn single_pixel_identity() {
        let img = Image::new(1, 1, vec![0.7]).unwrap();
        let s = dft(&img, 1, 1).unwrap();
        assert_eq!(s.data(), &[Complex64::new(0.7, 0.0)]);
    }

    #[test]
    fn round_trip_random_image() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let img = Image::from_fn(8, 8, |_, _| rng.random::<f64>()).unwrap();
        for (pw, ph) in [(8, 8), (13, 11)] {
            let back = idft(&dft(&img, pw, ph).unwrap());
            for y in 0..8 {
                for x in 0..8 {
                    assert!((back[y * pw + x] - img.get(x, y)).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn rejects_bad_padding() {
        let img = Image::constant(4, 4, 0.1).unwrap();
        assert!(matches!(dft(&img, 0, 4), Err(Error::Dimension(_))));
        assert!(matches!(dft(&img, 3, 4), Err(Error::Dimension(_))));
    }
}
