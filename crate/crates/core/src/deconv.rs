//! Non-blind deconvolution: a padded Wiener filter and a hyper-Laplacian
//! gradient-prior solver (iteratively reweighted least squares with a
//! conjugate-gradient inner solve).

use num_complex::Complex64;

use crate::corpus;
use crate::depth::{DepthMap, KernelBank};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::metrics::{wiener_deblur, NsrMatrix};
use crate::psf::Psf;
use crate::spectrum::{fft2_in_place, Spectrum};

/// Exponent of the gradient penalty.
pub const PRIOR_EXPONENT: f64 = 0.8;
/// Smoothing of the penalty near zero gradient, `(g^2 + eps^2)^(p/2)`.
pub const PRIOR_EPSILON: f64 = 1e-3;
/// Feather radius in pixels used when compositing per-label results.
pub const FEATHER_RADIUS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DeconvMethod {
    Wiener,
    Sparse,
}

impl std::str::FromStr for DeconvMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "wiener" => Ok(Self::Wiener),
            "sparse" => Ok(Self::Sparse),
            other => Err(Error::Config(format!("unknown deconvolution method '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeconvConfig {
    pub method: DeconvMethod,
    pub reg_weight: f64,
    pub irls_iters: usize,
    pub cg_iters: usize,
}

impl Default for DeconvConfig {
    fn default() -> Self {
        Self {
            method: DeconvMethod::Sparse,
            reg_weight: 2e-4,
            irls_iters: 8,
            cg_iters: 50,
        }
    }
}

impl DeconvConfig {
    pub fn wiener() -> Self {
        Self {
            method: DeconvMethod::Wiener,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.reg_weight.is_finite() && self.reg_weight > 0.0) {
            return Err(Error::Config(format!(
                "reg_weight must be positive, got {}",
                self.reg_weight
            )));
        }
        if self.irls_iters == 0 || self.cg_iters == 0 {
            return Err(Error::Config("iteration counts must be at least 1".into()));
        }
        Ok(())
    }
}

/// Deconvolution result with solver diagnostics.
#[derive(Debug, Clone)]
pub struct DeconvOutcome {
    pub image: Image,
    /// False when some inner solve stopped at `cg_iters` above tolerance.
    pub converged: bool,
    /// Sparse objective before the first and after every outer iteration.
    pub objective: Vec<f64>,
}

/// Working grid for Wiener deconvolution of a `width x height` image by a
/// kernel of side `side`: the image plus a margin of `side` on each side.
pub fn working_size(width: usize, height: usize, side: usize) -> (usize, usize) {
    (width + 2 * side, height + 2 * side)
}

/// Noise-to-signal matrix on the working grid for additive noise `sigma`,
/// using the bundled prior at that size.
pub fn nsr_for(width: usize, height: usize, side: usize, sigma: f64) -> Result<NsrMatrix> {
    let (pw, ph) = working_size(width, height, side);
    NsrMatrix::from_noise(sigma, &corpus::intensity_prior(pw, ph))
}

/// Extends `img` to `pw x ph` with a linear cross-fade from its last
/// row/column back to its first, so the periodic extension has no jump.
fn pad_periodic(img: &Image, pw: usize, ph: usize) -> Vec<f64> {
    let (w, h) = img.dims();
    let mut out = vec![0.0; pw * ph];
    let gap_x = (pw - w + 1) as f64;
    for y in 0..h {
        let row = &mut out[y * pw..(y + 1) * pw];
        for (x, v) in row[..w].iter_mut().enumerate() {
            *v = img.get(x, y);
        }
        let (last, first) = (img.get(w - 1, y), img.get(0, y));
        for (i, v) in row[w..].iter_mut().enumerate() {
            let t = (i + 1) as f64 / gap_x;
            *v = (1.0 - t) * last + t * first;
        }
    }
    let gap_y = (ph - h + 1) as f64;
    for y in h..ph {
        let t = (y - h + 1) as f64 / gap_y;
        for x in 0..pw {
            out[y * pw + x] = (1.0 - t) * out[(h - 1) * pw + x] + t * out[x];
        }
    }
    out
}

/// Wiener deconvolution on the grid of `c`, which must be at least as large
/// as the image and the kernel.
pub fn wiener(img: &Image, psf: &Psf, c: &NsrMatrix) -> Result<Image> {
    let (w, h) = img.dims();
    let (pw, ph) = c.dims();
    if pw < w || ph < h {
        return Err(Error::Dimension(format!(
            "nsr grid {pw}x{ph} smaller than image {w}x{h}"
        )));
    }
    let padded = pad_periodic(img, pw, ph);
    let mut buf: Vec<Complex64> = padded.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft2_in_place(&mut buf, pw, ph, false);
    let g = Spectrum::new(pw, ph, buf)?;
    let k = psf.transfer(pw, ph)?;
    let mut est = wiener_deblur(&g, &k, c)?.data().to_vec();
    fft2_in_place(&mut est, pw, ph, true);
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h {
        out.extend(est[y * pw..y * pw + w].iter().map(|z| z.re));
    }
    Ok(Image::clamp_from(w, h, out))
}

/// Convolution with edge replication, and its adjoint, computed by FFT on a
/// grid with a margin wide enough that no wrap-around reaches the image.
struct BlurOperator {
    w: usize,
    h: usize,
    margin: usize,
    pw: usize,
    ph: usize,
    k: Vec<Complex64>,
}

impl BlurOperator {
    fn new(w: usize, h: usize, psf: &Psf) -> Result<Self> {
        let margin = psf.side();
        let (pw, ph) = (w + 2 * margin, h + 2 * margin);
        let k = psf.transfer(pw, ph)?.data().to_vec();
        Ok(Self {
            w,
            h,
            margin,
            pw,
            ph,
            k,
        })
    }

    fn forward(&self, f: &[f64]) -> Vec<f64> {
        let (w, h, m) = (self.w as isize, self.h as isize, self.margin as isize);
        let mut buf = Vec::with_capacity(self.pw * self.ph);
        for py in 0..self.ph as isize {
            let y = (py - m).clamp(0, h - 1);
            for px in 0..self.pw as isize {
                let x = (px - m).clamp(0, w - 1);
                buf.push(Complex64::new(f[(y * w + x) as usize], 0.0));
            }
        }
        self.filter(&mut buf, false);
        let mut out = Vec::with_capacity(self.w * self.h);
        for y in 0..self.h {
            let row = (y + self.margin) * self.pw + self.margin;
            out.extend(buf[row..row + self.w].iter().map(|z| z.re));
        }
        out
    }

    fn adjoint(&self, r: &[f64]) -> Vec<f64> {
        let mut buf = vec![Complex64::new(0.0, 0.0); self.pw * self.ph];
        for y in 0..self.h {
            let row = (y + self.margin) * self.pw + self.margin;
            for x in 0..self.w {
                buf[row + x] = Complex64::new(r[y * self.w + x], 0.0);
            }
        }
        self.filter(&mut buf, true);
        let (w, h, m) = (self.w as isize, self.h as isize, self.margin as isize);
        let mut out = vec![0.0; self.w * self.h];
        for py in 0..self.ph as isize {
            let y = (py - m).clamp(0, h - 1);
            for px in 0..self.pw as isize {
                let x = (px - m).clamp(0, w - 1);
                out[(y * w + x) as usize] += buf[py as usize * self.pw + px as usize].re;
            }
        }
        out
    }

    fn filter(&self, buf: &mut [Complex64], conjugate: bool) {
        fft2_in_place(buf, self.pw, self.ph, false);
        for (b, k) in buf.iter_mut().zip(&self.k) {
            *b *= if conjugate { k.conj() } else { *k };
        }
        fft2_in_place(buf, self.pw, self.ph, true);
    }
}

/// Forward differences: `(w - 1) * h` horizontal then `w * (h - 1)` vertical.
fn grad(f: &[f64], w: usize, h: usize) -> Vec<f64> {
    let mut g = Vec::with_capacity((w - 1) * h + w * (h - 1));
    for y in 0..h {
        for x in 0..w - 1 {
            g.push(f[y * w + x + 1] - f[y * w + x]);
        }
    }
    for y in 0..h - 1 {
        for x in 0..w {
            g.push(f[(y + 1) * w + x] - f[y * w + x]);
        }
    }
    g
}

fn grad_adjoint(g: &[f64], w: usize, h: usize) -> Vec<f64> {
    let mut f = vec![0.0; w * h];
    let mut i = 0;
    for y in 0..h {
        for x in 0..w - 1 {
            f[y * w + x + 1] += g[i];
            f[y * w + x] -= g[i];
            i += 1;
        }
    }
    for y in 0..h - 1 {
        for x in 0..w {
            f[(y + 1) * w + x] += g[i];
            f[y * w + x] -= g[i];
            i += 1;
        }
    }
    f
}

fn penalty(g: f64) -> f64 {
    (g * g + PRIOR_EPSILON * PRIOR_EPSILON).powf(PRIOR_EXPONENT / 2.0)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

struct SparseProblem<'a> {
    op: BlurOperator,
    observed: &'a [f64],
    reg: f64,
}

impl SparseProblem<'_> {
    fn objective(&self, f: &[f64]) -> f64 {
        let r = self.op.forward(f);
        let data: f64 = r.iter().zip(self.observed).map(|(a, b)| (a - b).powi(2)).sum();
        let prior: f64 = grad(f, self.op.w, self.op.h).into_iter().map(penalty).sum();
        data + self.reg * prior
    }

    /// `(A^T A + reg * D^T W D) f`
    fn normal_apply(&self, f: &[f64], weights: &[f64]) -> Vec<f64> {
        let (w, h) = (self.op.w, self.op.h);
        let mut out = self.op.adjoint(&self.op.forward(f));
        let mut g = grad(f, w, h);
        for (gi, wi) in g.iter_mut().zip(weights) {
            *gi *= wi;
        }
        for (o, r) in out.iter_mut().zip(grad_adjoint(&g, w, h)) {
            *o += self.reg * r;
        }
        out
    }

    /// Conjugate gradients from `f`; returns whether the residual dropped
    /// below tolerance.
    fn solve(&self, f: &mut [f64], weights: &[f64], iters: usize) -> bool {
        let b = self.op.adjoint(self.observed);
        let ax = self.normal_apply(f, weights);
        let mut r: Vec<f64> = b.iter().zip(&ax).map(|(b, a)| b - a).collect();
        let mut p = r.clone();
        let mut rr = dot(&r, &r);
        let tol = 1e-10 * dot(&b, &b).max(1e-300);
        if rr <= tol {
            return true;
        }
        for _ in 0..iters {
            let ap = self.normal_apply(&p, weights);
            let pap = dot(&p, &ap);
            if pap <= 0.0 {
                return rr <= tol;
            }
            let alpha = rr / pap;
            for ((fi, pi), (ri, api)) in f.iter_mut().zip(&p).zip(r.iter_mut().zip(&ap)) {
                *fi += alpha * pi;
                *ri -= alpha * api;
            }
            let rr_new = dot(&r, &r);
            if rr_new <= tol {
                return true;
            }
            let beta = rr_new / rr;
            for (pi, ri) in p.iter_mut().zip(&r) {
                *pi = ri + beta * *pi;
            }
            rr = rr_new;
        }
        false
    }
}

/// Minimizes `||k * f - img||^2 + reg * sum (|grad f|^2 + eps^2)^0.4` with
/// majorize-minimize reweighting, so the objective never increases.
pub fn sparse(img: &Image, psf: &Psf, cfg: &DeconvConfig) -> Result<DeconvOutcome> {
    cfg.validate()?;
    let (w, h) = img.dims();
    if w < 2 || h < 2 {
        return Err(Error::Dimension(format!("image {w}x{h} too small to deconvolve")));
    }
    let problem = SparseProblem {
        op: BlurOperator::new(w, h, psf)?,
        observed: img.data(),
        reg: cfg.reg_weight,
    };
    let mut f = img.data().to_vec();
    let mut objective = vec![problem.objective(&f)];
    let mut converged = true;
    for _ in 0..cfg.irls_iters {
        let weights: Vec<f64> = grad(&f, w, h)
            .into_iter()
            .map(|g| PRIOR_EXPONENT * (g * g + PRIOR_EPSILON * PRIOR_EPSILON).powf(PRIOR_EXPONENT / 2.0 - 1.0))
            .collect();
        let mut next = f.clone();
        converged &= problem.solve(&mut next, &weights, cfg.cg_iters);
        let value = problem.objective(&next);
        // a truncated solve can still overshoot in floating point; keep the
        // previous iterate in that case
        if value <= *objective.last().unwrap() {
            f = next;
            objective.push(value);
        } else {
            objective.push(*objective.last().unwrap());
        }
    }
    Ok(DeconvOutcome {
        image: Image::clamp_from(w, h, f),
        converged,
        objective,
    })
}

fn check_kernel_fits(img: &Image, psf: &Psf) -> Result<()> {
    if psf.side() > img.width() || psf.side() > img.height() {
        return Err(Error::Dimension(format!(
            "kernel side {} larger than image {}x{}",
            psf.side(),
            img.width(),
            img.height()
        )));
    }
    Ok(())
}

/// Deconvolves `img` by `psf`; `c` is only consulted by the Wiener method.
pub fn deblur_detailed(img: &Image, psf: &Psf, cfg: &DeconvConfig, c: &NsrMatrix) -> Result<DeconvOutcome> {
    check_kernel_fits(img, psf)?;
    match cfg.method {
        DeconvMethod::Wiener => Ok(DeconvOutcome {
            image: wiener(img, psf, c)?,
            converged: true,
            objective: Vec::new(),
        }),
        DeconvMethod::Sparse => sparse(img, psf, cfg),
    }
}

pub fn deblur(img: &Image, psf: &Psf, cfg: &DeconvConfig, c: &NsrMatrix) -> Result<Image> {
    deblur_detailed(img, psf, cfg, c).map(|o| o.image)
}

/// Box average of radius `r` with replicated borders, separable.
fn box_blur(data: &[f64], w: usize, h: usize, r: usize) -> Vec<f64> {
    let r = r as isize;
    let norm = (2 * r + 1) as f64;
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w as isize {
            let s: f64 = (-r..=r)
                .map(|d| data[y * w + (x + d).clamp(0, w as isize - 1) as usize])
                .sum();
            tmp[y * w + x as usize] = s / norm;
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h as isize {
        for x in 0..w {
            let s: f64 = (-r..=r)
                .map(|d| tmp[(y + d).clamp(0, h as isize - 1) as usize * w + x])
                .sum();
            out[y as usize * w + x] = s / norm;
        }
    }
    out
}

/// All-focus image: each label present in `map` is deconvolved over the
/// whole image with its bank kernel, and the results are composited with
/// masks feathered over [`FEATHER_RADIUS`] pixels.
pub fn deblur_with_depthmap(
    img: &Image,
    map: &DepthMap,
    bank: &KernelBank,
    cfg: &DeconvConfig,
    c: &NsrMatrix,
) -> Result<Image> {
    let (w, h) = img.dims();
    if map.dims() != (w, h) {
        return Err(Error::Dimension(format!(
            "depth map {:?} vs image {:?}",
            map.dims(),
            img.dims()
        )));
    }
    let mut present: Vec<usize> = map.labels().to_vec();
    present.sort_unstable();
    present.dedup();
    let mut jobs = Vec::with_capacity(present.len());
    for &label in &present {
        let scale = map.legend().get(label).copied().ok_or(Error::Legend(label))?;
        let psf = bank.get(scale).ok_or(Error::Legend(label))?;
        jobs.push((label, psf));
    }

    let run = |&(label, psf): &(usize, &Psf)| -> Result<(Vec<f64>, Image)> {
        let mask: Vec<f64> = map
            .labels()
            .iter()
            .map(|&l| if l == label { 1.0 } else { 0.0 })
            .collect();
        Ok((box_blur(&mask, w, h, FEATHER_RADIUS), deblur(img, psf, cfg, c)?))
    };
    #[cfg(feature = "parallel")]
    let layers: Vec<Result<(Vec<f64>, Image)>> = {
        use rayon::prelude::*;
        jobs.par_iter().map(run).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let layers: Vec<Result<(Vec<f64>, Image)>> = jobs.iter().map(run).collect();

    let mut out = vec![0.0; w * h];
    let mut total = vec![0.0; w * h];
    for layer in layers {
        let (weight, restored) = layer?;
        for i in 0..w * h {
            out[i] += weight[i] * restored.data()[i];
            total[i] += weight[i];
        }
    }
    for (o, t) in out.iter_mut().zip(&total) {
        *o /= t;
    }
    Ok(Image::clamp_from(w, h, out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blur::convolve_replicate;
    use crate::pattern::AperturePattern;
    use crate::psf::{psf_from_pattern, BlurScale};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn coded(s: i32) -> Psf {
        psf_from_pattern(&AperturePattern::selected(), BlurScale::new(s).unwrap())
    }

    #[test]
    fn forward_matches_direct_convolution() {
        let img = corpus::dead_leaves(23, 17, 4);
        let psf = coded(5);
        let op = BlurOperator::new(23, 17, &psf).unwrap();
        let direct = convolve_replicate(&img, &psf).unwrap();
        for (a, b) in op.forward(img.data()).iter().zip(&direct) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn adjoint_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (w, h) = (19, 14);
        let op = BlurOperator::new(w, h, &coded(-6)).unwrap();
        let x: Vec<f64> = (0..w * h).map(|_| rng.random::<f64>() - 0.5).collect();
        let y: Vec<f64> = (0..w * h).map(|_| rng.random::<f64>() - 0.5).collect();
        let lhs = dot(&op.forward(&x), &y);
        let rhs = dot(&x, &op.adjoint(&y));
        assert!((lhs - rhs).abs() < 1e-10 * lhs.abs().max(1.0));

        let g: Vec<f64> = (0..(w - 1) * h + w * (h - 1)).map(|_| rng.random::<f64>()).collect();
        let lhs = dot(&grad(&x, w, h), &g);
        let rhs = dot(&x, &grad_adjoint(&g, w, h));
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn identity_kernel_returns_input() {
        let img = corpus::dead_leaves(32, 32, 11);
        let c = nsr_for(32, 32, 1, 0.0).unwrap();
        let out = deblur(&img, &Psf::delta(), &DeconvConfig::wiener(), &c).unwrap();
        assert!(out.rmse(&img).unwrap() < 1e-6);
        let out = deblur(&img, &Psf::delta(), &DeconvConfig::default(), &c).unwrap();
        assert!(out.rmse(&img).unwrap() < 1e-3, "{}", out.rmse(&img).unwrap());
    }

    #[test]
    fn objective_never_increases() {
        let img = corpus::dead_leaves(40, 40, 2);
        let psf = coded(7);
        let blurred = crate::blur::blur_seeded(&img, &psf, 0.01, 3).unwrap();
        let out = sparse(&blurred, &psf, &DeconvConfig::default()).unwrap();
        assert_eq!(out.objective.len(), 9);
        for pair in out.objective.windows(2) {
            assert!(pair[1] <= pair[0] + 1e-9, "{:?}", out.objective);
        }
        assert!(out.objective.last() < out.objective.first());
    }

    #[test]
    fn circular_wiener_round_trip() {
        // no padding when the grid equals the image: the model is exactly circular
        let img = corpus::dead_leaves(64, 64, 9);
        let psf = coded(6);
        let k = psf.transfer(64, 64).unwrap();
        let mut buf: Vec<Complex64> = img.data().iter().map(|&v| Complex64::new(v, 0.0)).collect();
        fft2_in_place(&mut buf, 64, 64, false);
        for (b, k) in buf.iter_mut().zip(k.data()) {
            *b *= k;
        }
        fft2_in_place(&mut buf, 64, 64, true);
        let blurred = Image::new(64, 64, buf.iter().map(|z| z.re.clamp(0.0, 1.0)).collect()).unwrap();
        let c = NsrMatrix::constant(64, 64, 1e-8).unwrap();
        let out = wiener(&blurred, &psf, &c).unwrap();
        assert!(out.rmse(&img).unwrap() < 1e-3, "{}", out.rmse(&img).unwrap());
    }

    #[test]
    fn random_image_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        let img = Image::new(32, 32, (0..32 * 32).map(|_| rng.random::<f64>()).collect()).unwrap();
        let psf = coded(5);
        let k = psf.transfer(32, 32).unwrap();
        let mut buf: Vec<Complex64> = img.data().iter().map(|&v| Complex64::new(v, 0.0)).collect();
        fft2_in_place(&mut buf, 32, 32, false);
        for (b, k) in buf.iter_mut().zip(k.data()) {
            *b *= k;
        }
        fft2_in_place(&mut buf, 32, 32, true);
        let blurred = Image::new(32, 32, buf.iter().map(|z| z.re).collect()).unwrap();
        let c = NsrMatrix::constant(32, 32, 1e-8).unwrap();
        let out = wiener(&blurred, &psf, &c).unwrap();
        assert!(out.rmse(&img).unwrap() < 1e-3);
    }

    #[test]
    fn config_checks() {
        let c = DeconvConfig {
            irls_iters: 0,
            ..DeconvConfig::default()
        };
        assert!(c.validate().is_err());
        assert!("sparse".parse::<DeconvMethod>().is_ok());
        assert!("lucy".parse::<DeconvMethod>().is_err());
        let img = Image::constant(4, 4, 0.5).unwrap();
        let c = NsrMatrix::constant(12, 12, 1e-3).unwrap();
        assert!(deblur(&img, &coded(5), &DeconvConfig::wiener(), &c).is_err());
    }
}
