//! Expected power spectrum of natural images.

use crate::error::{Error, Result};
use crate::image::Image;
use crate::spectrum::dft;

/// Lower bound applied to every prior bin.
pub const PRIOR_FLOOR: f64 = 1e-12;

/// Expected power `A(xi)` per frequency bin, DC at `(0, 0)`.
#[derive(Debug, Clone, PartialEq)]
pub struct NaturalImagePrior {
    width: usize,
    height: usize,
    a: Vec<f64>,
}

impl NaturalImagePrior {
    /// Wraps a power matrix, flooring every entry at [`PRIOR_FLOOR`].
    pub fn new(width: usize, height: usize, a: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 || a.len() != width * height {
            return Err(Error::Dimension(format!(
                "prior {width}x{height} with {} entries",
                a.len()
            )));
        }
        if let Some(v) = a.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::Input(format!("prior entry {v} is negative or not finite")));
        }
        let a = a.into_iter().map(|v| v.max(PRIOR_FLOOR)).collect();
        Ok(Self { width, height, a })
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

    pub fn values(&self) -> &[f64] {
        &self.a
    }

    #[inline]
    pub fn get(&self, u: usize, v: usize) -> f64 {
        self.a[v * self.width + u]
    }

    /// Same shape rescaled so the mean over all bins is one.
    pub fn normalized_to_unit_mean(&self) -> Self {
        let mean = self.a.iter().sum::<f64>() / self.a.len() as f64;
        Self {
            width: self.width,
            height: self.height,
            a: self.a.iter().map(|v| (v / mean).max(PRIOR_FLOOR)).collect(),
        }
    }

    /// Radially averaged power, indexed by integer radius in wrapped frequency units.
    pub fn radial_profile(&self) -> Vec<f64> {
        let max_r = ((self.width / 2).pow(2) as f64 + (self.height / 2).pow(2) as f64).sqrt() as usize + 1;
        let mut sum = vec![0.0; max_r + 1];
        let mut count = vec![0usize; max_r + 1];
        for v in 0..self.height {
            let fv = v.min(self.height - v) as f64;
            for u in 0..self.width {
                let fu = u.min(self.width - u) as f64;
                let r = (fu * fu + fv * fv).sqrt().round() as usize;
                sum[r] += self.get(u, v);
                count[r] += 1;
            }
        }
        sum.iter()
            .zip(&count)
            .filter(|(_, c)| **c > 0)
            .map(|(s, c)| s / *c as f64)
            .collect()
    }
}

/// Empirical mean of `|DFT|^2` over a corpus, each image extended to `pad_w x pad_h`.
pub fn estimate_prior(corpus: &[Image], pad_w: usize, pad_h: usize) -> Result<NaturalImagePrior> {
    if corpus.is_empty() {
        return Err(Error::EmptyInput("prior corpus has no images".into()));
    }
    let mut acc = vec![0.0; pad_w * pad_h];
    for img in corpus {
        let spec = dft(img, pad_w, pad_h)?;
        for (a, c) in acc.iter_mut().zip(spec.data()) {
            *a += c.norm_sqr();
        }
    }
    let n = corpus.len() as f64;
    for a in &mut acc {
        *a /= n;
    }
    NaturalImagePrior::new(pad_w, pad_h, acc)
}
