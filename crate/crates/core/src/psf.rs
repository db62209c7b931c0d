//! Point spread functions synthesized from aperture masks.
//!
//! A blur scale `s` produces an `|s| x |s|` kernel. Negative scales are the
//! 180-degree rotation of the positive kernel, which is how defocus on the
//! near side of the focal plane differs from the far side. The kernel centre
//! used for alignment is cell `ceil(|s| / 2) - 1` (zero-based) on both axes.

use std::fmt;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::pattern::{AperturePattern, GRID};
use crate::spectrum::{fft2_in_place, Spectrum};

/// Signed, non-zero blur scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BlurScale(i32);

impl BlurScale {
    pub fn new(s: i32) -> Result<Self> {
        if s == 0 {
            return Err(Error::OutOfRange("blur scale must be non-zero".into()));
        }
        Ok(Self(s))
    }

    pub fn get(self) -> i32 {
        self.0
    }

    /// Kernel side length.
    pub fn side(self) -> usize {
        self.0.unsigned_abs() as usize
    }

    pub fn is_flipped(self) -> bool {
        self.0 < 0
    }

    pub fn flipped(self) -> Self {
        Self(-self.0)
    }
}

impl fmt::Display for BlurScale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:+}", self.0)
    }
}

impl TryFrom<i32> for BlurScale {
    type Error = Error;

    fn try_from(s: i32) -> Result<Self> {
        Self::new(s)
    }
}

/// Normalized non-negative square blur kernel at a signed scale.
#[derive(Debug, Clone, PartialEq)]
pub struct Psf {
    side: usize,
    kernel: Vec<f64>,
    scale: BlurScale,
}

impl Psf {
    /// Validates and renormalizes a square kernel.
    pub fn new(side: usize, kernel: Vec<f64>, scale: BlurScale) -> Result<Self> {
        Self::from_rect(side, side, kernel, scale)
    }

    /// Accepts a rectangular kernel (calibrated banks are not always square)
    /// by centring it inside the smallest enclosing square.
    pub fn from_rect(width: usize, height: usize, kernel: Vec<f64>, scale: BlurScale) -> Result<Self> {
        if width == 0 || height == 0 || kernel.len() != width * height {
            return Err(Error::Dimension(format!(
                "kernel {width}x{height} with {} entries",
                kernel.len()
            )));
        }
        if let Some(v) = kernel.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::Input(format!("kernel entry {v} is negative or not finite")));
        }
        let side = width.max(height);
        let (ox, oy) = ((side - width) / 2, (side - height) / 2);
        let mut square = vec![0.0; side * side];
        for y in 0..height {
            for x in 0..width {
                square[(y + oy) * side + x + ox] = kernel[y * width + x];
            }
        }
        let total: f64 = square.iter().sum();
        if total <= 0.0 {
            return Err(Error::Input("kernel sums to zero".into()));
        }
        for v in &mut square {
            *v /= total;
        }
        Ok(Self {
            side,
            kernel: square,
            scale,
        })
    }

    /// The 1x1 identity kernel.
    pub fn delta() -> Self {
        Self {
            side: 1,
            kernel: vec![1.0],
            scale: BlurScale(1),
        }
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn scale(&self) -> BlurScale {
        self.scale
    }

    pub fn kernel(&self) -> &[f64] {
        &self.kernel
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.kernel[y * self.side + x]
    }

    /// Zero-based alignment centre on both axes.
    pub fn center(&self) -> usize {
        self.side.div_ceil(2) - 1
    }

    /// The kernel rotated by 180 degrees, tagged with the opposite scale sign.
    pub fn rot180(&self) -> Psf {
        let mut kernel = self.kernel.clone();
        kernel.reverse();
        Psf {
            side: self.side,
            kernel,
            scale: self.scale.flipped(),
        }
    }

    /// Transfer function on a `width x height` grid: the kernel is zero-padded
    /// and circularly shifted so its centre lands on bin `(0, 0)`.
    pub fn transfer(&self, width: usize, height: usize) -> Result<Spectrum> {
        if self.side > width || self.side > height {
            return Err(Error::Dimension(format!(
                "kernel side {} exceeds working size {width}x{height}",
                self.side
            )));
        }
        let c = self.center();
        let mut buf = vec![Complex64::new(0.0, 0.0); width * height];
        for y in 0..self.side {
            let ty = (y + height - c) % height;
            for x in 0..self.side {
                let tx = (x + width - c) % width;
                buf[ty * width + tx] = Complex64::new(self.at(x, y), 0.0);
            }
        }
        fft2_in_place(&mut buf, width, height, false);
        Spectrum::new(width, height, buf)
    }
}

/// Overlap lengths between `target` equal bins and `GRID` unit source cells
/// spanning the same interval. Row `i` holds the weights of target bin `i`.
fn overlap_weights(target: usize) -> Vec<[f64; GRID]> {
    let t = target as f64;
    let g = GRID as f64;
    (0..target)
        .map(|i| {
            let lo = i as f64 * g / t;
            let hi = (i + 1) as f64 * g / t;
            let mut row = [0.0; GRID];
            for (j, w) in row.iter_mut().enumerate() {
                let a = lo.max(j as f64);
                let b = hi.min((j + 1) as f64);
                *w = (b - a).max(0.0);
            }
            row
        })
        .collect()
}

/// Kernel for `pattern` at blur scale `s`.
///
/// Area-weighted resampling: each target cell integrates the fraction of every
/// mask cell it overlaps, then the kernel is renormalized to unit sum.
pub fn psf_from_pattern(pattern: &AperturePattern, s: BlurScale) -> Psf {
    let side = s.side();
    let w = overlap_weights(side);
    let mut kernel = vec![0.0; side * side];
    for (ty, wy) in w.iter().enumerate() {
        for (tx, wx) in w.iter().enumerate() {
            let mut acc = 0.0;
            for (r, &a) in wy.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for (c, &b) in wx.iter().enumerate() {
                    if b != 0.0 && pattern.is_open(r, c) {
                        acc += a * b;
                    }
                }
            }
            kernel[ty * side + tx] = acc;
        }
    }
    let total: f64 = kernel.iter().sum();
    for v in &mut kernel {
        *v /= total;
    }
    let psf = Psf {
        side,
        kernel,
        scale: BlurScale(s.side() as i32),
    };
    if s.is_flipped() {
        psf.rot180()
    } else {
        psf
    }
}

/// Uniform disk kernel of diameter `|s|` (the conventional circular aperture),
/// rasterized by supersampling each cell.
pub fn disk_psf(s: BlurScale) -> Psf {
    const SUB: usize = 16;
    let side = s.side();
    let r = side as f64 / 2.0;
    let mut kernel = vec![0.0; side * side];
    for ty in 0..side {
        for tx in 0..side {
            let mut inside = 0usize;
            for sy in 0..SUB {
                let y = ty as f64 + (sy as f64 + 0.5) / SUB as f64 - r;
                for sx in 0..SUB {
                    let x = tx as f64 + (sx as f64 + 0.5) / SUB as f64 - r;
                    if x * x + y * y <= r * r {
                        inside += 1;
                    }
                }
            }
            kernel[ty * side + tx] = inside as f64;
        }
    }
    let total: f64 = kernel.iter().sum();
    for v in &mut kernel {
        *v /= total;
    }
    Psf { side, kernel, scale: s }
}

/// Source of kernels at every blur scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelFamily {
    /// Kernels resampled from a binary mask.
    Coded(AperturePattern),
    /// Conventional circular aperture with a given number of open cells
    /// (throughput) and a disk-shaped kernel of diameter `|s|`.
    Conventional { throughput: usize },
}

impl KernelFamily {
    pub fn psf(&self, s: BlurScale) -> Psf {
        match self {
            KernelFamily::Coded(p) => psf_from_pattern(p, s),
            KernelFamily::Conventional { .. } => disk_psf(s),
        }
    }

    /// Open-cell count used by the noise model.
    pub fn throughput(&self) -> usize {
        match self {
            KernelFamily::Coded(p) => p.open_count(),
            KernelFamily::Conventional { throughput } => *throughput,
        }
    }
}
