//! Blur-scale estimation by deblur-and-assess, the per-pixel probability
//! volume, and MRF labeling of the final depth map.

pub mod maxflow;
mod mrf;

pub use mrf::{data_term, energy, icm, smoothness_lambda, solve_mrf, DataTerm, MrfParams};

use crate::deconv::wiener;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::metrics::NsrMatrix;
use crate::psf::{BlurScale, KernelFamily, Psf};
use crate::quality::aggregate_quality;

pub const DEFAULT_PATCH: usize = 48;
pub const DEFAULT_STRIDE: usize = 8;
/// Lower bound of the softmax temperature.
pub const MIN_TEMPERATURE: f64 = 1e-6;

/// PSFs indexed by signed blur scale, kept sorted by scale.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelBank {
    entries: Vec<Psf>,
}

impl KernelBank {
    pub fn new(mut entries: Vec<Psf>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::EmptyInput("kernel bank has no entries".into()));
        }
        entries.sort_by_key(|p| p.scale().get());
        if entries.windows(2).any(|w| w[0].scale() == w[1].scale()) {
            return Err(Error::Input("kernel bank has duplicate scales".into()));
        }
        Ok(Self { entries })
    }

    pub fn from_family(family: &KernelFamily, scales: &[i32]) -> Result<Self> {
        let psfs = scales
            .iter()
            .map(|&s| BlurScale::new(s).map(|s| family.psf(s)))
            .collect::<Result<Vec<_>>>()?;
        Self::new(psfs)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn scales(&self) -> Vec<i32> {
        self.entries.iter().map(|p| p.scale().get()).collect()
    }

    pub fn entries(&self) -> &[Psf] {
        &self.entries
    }

    pub fn get(&self, scale: i32) -> Option<&Psf> {
        self.index_of(scale).map(|i| &self.entries[i])
    }

    pub fn index_of(&self, scale: i32) -> Option<usize> {
        self.entries.binary_search_by_key(&scale, |p| p.scale().get()).ok()
    }

    pub fn max_side(&self) -> usize {
        self.entries.iter().map(Psf::side).max().unwrap_or(1)
    }
}

/// Parses `lo:hi` (inclusive, zero skipped) or a comma-separated list.
pub fn parse_scales(spec: &str) -> Result<Vec<i32>> {
    let bad = |what: &str| Error::Config(format!("bad scale list '{spec}': {what}"));
    let scales: Vec<i32> = if let Some((lo, hi)) = spec.split_once(':') {
        let lo: i32 = lo.trim().parse().map_err(|_| bad("lower bound"))?;
        let hi: i32 = hi.trim().parse().map_err(|_| bad("upper bound"))?;
        if lo > hi {
            return Err(bad("empty range"));
        }
        (lo..=hi).filter(|&s| s != 0).collect()
    } else {
        spec.split(',')
            .map(|t| t.trim().parse::<i32>().map_err(|_| bad(t)))
            .collect::<Result<_>>()?
    };
    if scales.is_empty() || scales.contains(&0) {
        return Err(bad("scales must be nonzero and non-empty"));
    }
    Ok(scales)
}

/// Per-pixel probabilities over the bank's scales, at most two nonzero.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthVolume {
    width: usize,
    height: usize,
    scales: Vec<i32>,
    /// Pixel-major: `(y * width + x) * S + s`.
    probs: Vec<f64>,
}

impl DepthVolume {
    pub fn new(width: usize, height: usize, scales: Vec<i32>, probs: Vec<f64>) -> Result<Self> {
        let s = scales.len();
        if s == 0 || probs.len() != width * height * s {
            return Err(Error::Dimension(format!(
                "volume {width}x{height}x{s} with {} entries",
                probs.len()
            )));
        }
        for (i, px) in probs.chunks(s).enumerate() {
            let nonzero = px.iter().filter(|p| **p != 0.0).count();
            let sum: f64 = px.iter().sum();
            if nonzero > 2 || (sum - 1.0).abs() > 1e-9 || px.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(Error::Input(format!("pixel {i} has an invalid probability vector")));
            }
        }
        Ok(Self {
            width,
            height,
            scales,
            probs,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn scales(&self) -> &[i32] {
        &self.scales
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[f64] {
        let s = self.scales.len();
        let i = (y * self.width + x) * s;
        &self.probs[i..i + s]
    }

    /// Most probable scale index per pixel, ties to the smaller `|s|` then positive.
    pub fn argmax_labels(&self) -> Vec<usize> {
        self.probs
            .chunks(self.scales.len())
            .map(|px| {
                (0..px.len())
                    .max_by(|&a, &b| {
                        px[a]
                            .total_cmp(&px[b])
                            .then_with(|| prefer(self.scales[b], self.scales[a]))
                    })
                    .unwrap()
            })
            .collect()
    }
}

/// Tie-break order on scales: `Less` means `a` is preferred.
fn prefer(a: i32, b: i32) -> std::cmp::Ordering {
    a.abs().cmp(&b.abs()).then_with(|| b.cmp(&a))
}

/// Per-pixel labels into `legend`, which maps label to signed scale.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    width: usize,
    height: usize,
    labels: Vec<usize>,
    legend: Vec<i32>,
}

impl DepthMap {
    pub fn new(width: usize, height: usize, labels: Vec<usize>, legend: Vec<i32>) -> Result<Self> {
        if labels.len() != width * height {
            return Err(Error::Dimension(format!(
                "depth map {width}x{height} with {} labels",
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= legend.len()) {
            return Err(Error::Legend(bad));
        }
        Ok(Self {
            width,
            height,
            labels,
            legend,
        })
    }

    pub fn constant(width: usize, height: usize, scale: i32) -> Self {
        Self {
            width,
            height,
            labels: vec![0; width * height],
            legend: vec![scale],
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn legend(&self) -> &[i32] {
        &self.legend
    }

    pub fn scale_at(&self, x: usize, y: usize) -> i32 {
        self.legend[self.labels[y * self.width + x]]
    }

    /// Most frequent scale, ties to the preferred scale.
    pub fn modal_scale(&self) -> i32 {
        let mut counts = vec![0usize; self.legend.len()];
        for &l in &self.labels {
            counts[l] += 1;
        }
        let best = (0..counts.len())
            .max_by(|&a, &b| {
                counts[a]
                    .cmp(&counts[b])
                    .then_with(|| prefer(self.legend[b], self.legend[a]))
            })
            .unwrap();
        self.legend[best]
    }
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Quality of the patch deblurred with each bank kernel, in bank order.
pub fn patch_qualities(patch: &Image, bank: &KernelBank, c: &NsrMatrix) -> Result<Vec<f64>> {
    let side = bank.max_side();
    if patch.width() < side || patch.height() < side {
        return Err(Error::Dimension(format!(
            "patch {}x{} smaller than the largest kernel ({side})",
            patch.width(),
            patch.height()
        )));
    }
    bank.entries()
        .iter()
        .map(|psf| aggregate_quality(patch, &wiener(patch, psf, c)?).map(|r| r.aggregate))
        .collect()
}

/// Two best scales by aggregate quality and their probabilities (softmax
/// over the pair with the interquartile range of all scores as temperature).
pub fn estimate_patch_scale(patch: &Image, bank: &KernelBank, c: &NsrMatrix) -> Result<Vec<(BlurScale, f64)>> {
    let q = patch_qualities(patch, bank, c)?;
    Ok(top_two(&q, bank))
}

fn top_two(q: &[f64], bank: &KernelBank) -> Vec<(BlurScale, f64)> {
    let scales = bank.scales();
    let mut order: Vec<usize> = (0..q.len()).collect();
    order.sort_by(|&a, &b| q[b].total_cmp(&q[a]).then_with(|| prefer(scales[a], scales[b])));
    let scale = |i: usize| bank.entries()[i].scale();
    if order.len() == 1 {
        return vec![(scale(order[0]), 1.0)];
    }
    let mut sorted = q.to_vec();
    sorted.sort_by(f64::total_cmp);
    let t = (quantile(&sorted, 0.75) - quantile(&sorted, 0.25)).max(MIN_TEMPERATURE);
    let (a, b) = (order[0], order[1]);
    let second = ((q[b] - q[a]) / t).exp();
    let p1 = 1.0 / (1.0 + second);
    vec![(scale(a), p1), (scale(b), 1.0 - p1)]
}

/// Window origins along one axis: multiples of `stride` up to `len - patch`.
fn window_origins(len: usize, patch: usize, stride: usize) -> Vec<usize> {
    (0..=(len - patch) / stride).map(|i| i * stride).collect()
}

/// Index of the window whose centre is nearest `pos`, ties to the lower one.
fn nearest_window(pos: usize, origins: &[usize], patch: usize) -> usize {
    let centre = |i: usize| origins[i] as f64 + (patch as f64 - 1.0) / 2.0;
    let p = pos as f64;
    (0..origins.len())
        .min_by(|&a, &b| (centre(a) - p).abs().total_cmp(&(centre(b) - p).abs()).then(a.cmp(&b)))
        .unwrap()
}

/// Sliding-window scale estimates expanded to every pixel; each pixel takes
/// the window whose centre is closest.
pub fn raw_depth_volume(
    img: &Image,
    bank: &KernelBank,
    c: &NsrMatrix,
    patch: usize,
    stride: usize,
) -> Result<DepthVolume> {
    let (w, h) = img.dims();
    if patch == 0 || stride == 0 {
        return Err(Error::Config("patch and stride must be positive".into()));
    }
    if patch > w || patch > h {
        return Err(Error::Dimension(format!("patch {patch} exceeds image {w}x{h}")));
    }
    let xs = window_origins(w, patch, stride);
    let ys = window_origins(h, patch, stride);
    let windows: Vec<(usize, usize)> = ys.iter().flat_map(|&y| xs.iter().map(move |&x| (x, y))).collect();

    let estimate = |&(x, y): &(usize, usize)| -> Result<Vec<(BlurScale, f64)>> {
        estimate_patch_scale(&img.crop(x, y, patch, patch)?, bank, c)
    };
    #[cfg(feature = "parallel")]
    let results: Vec<Result<Vec<(BlurScale, f64)>>> = {
        use rayon::prelude::*;
        windows.par_iter().map(estimate).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let results: Vec<Result<Vec<(BlurScale, f64)>>> = windows.iter().map(estimate).collect();

    let s = bank.len();
    let per_window: Vec<Vec<f64>> = results
        .into_iter()
        .map(|r| {
            r.map(|top| {
                let mut v = vec![0.0; s];
                for (scale, p) in top {
                    v[bank.index_of(scale.get()).expect("scale from bank")] = p;
                }
                v
            })
        })
        .collect::<Result<_>>()?;

    let col: Vec<usize> = (0..w).map(|x| nearest_window(x, &xs, patch)).collect();
    let row: Vec<usize> = (0..h).map(|y| nearest_window(y, &ys, patch)).collect();
    let mut probs = Vec::with_capacity(w * h * s);
    for &wy in &row {
        for &wx in &col {
            probs.extend_from_slice(&per_window[wy * xs.len() + wx]);
        }
    }
    DepthVolume::new(w, h, bank.scales(), probs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blur::blur_seeded;
    use crate::corpus;
    use crate::deconv::nsr_for;
    use crate::pattern::AperturePattern;

    #[test]
    fn bank_basics() {
        let fam = KernelFamily::Coded(AperturePattern::selected());
        let bank = KernelBank::from_family(&fam, &[3, -2, 1]).unwrap();
        assert_eq!(bank.scales(), vec![-2, 1, 3]);
        assert_eq!(bank.index_of(3), Some(2));
        assert!(bank.get(4).is_none());
        assert_eq!(bank.max_side(), 3);
        assert!(KernelBank::from_family(&fam, &[2, 2]).is_err());
        assert!(KernelBank::new(vec![]).is_err());
        assert!(KernelBank::from_family(&fam, &[0]).is_err());
    }

    #[test]
    fn scale_lists() {
        assert_eq!(parse_scales("-2:2").unwrap(), vec![-2, -1, 1, 2]);
        assert_eq!(parse_scales("3, -4").unwrap(), vec![3, -4]);
        assert!(parse_scales("0").is_err());
        assert!(parse_scales("4:1").is_err());
        assert!(parse_scales("x").is_err());
    }

    #[test]
    fn singleton_bank() {
        let bank = KernelBank::from_family(&KernelFamily::Coded(AperturePattern::selected()), &[1]).unwrap();
        let patch = corpus::dead_leaves(32, 32, 1);
        let c = nsr_for(32, 32, 1, 0.001).unwrap();
        let top = estimate_patch_scale(&patch, &bank, &c).unwrap();
        assert_eq!(top, vec![(BlurScale::new(1).unwrap(), 1.0)]);
    }

    #[test]
    fn top_two_probabilities() {
        let bank = KernelBank::from_family(&KernelFamily::Coded(AperturePattern::selected()), &[-1, 1, 2, 3]).unwrap();
        let top = top_two(&[1.0, 5.0, 4.0, 0.0], &bank);
        assert_eq!(top[0].0.get(), 1);
        assert_eq!(top[1].0.get(), 2);
        // interquartile range of {0, 1, 4, 5} is 4.25 - 0.75 = 3.5
        let want = 1.0 / (1.0 + (-1.0f64 / 3.5).exp());
        assert!((top[0].1 - want).abs() < 1e-12);
        assert!((top[0].1 + top[1].1 - 1.0).abs() < 1e-12);
        // exact tie prefers +1 over -1
        let tie = top_two(&[2.0, 2.0, 0.0, 0.0], &bank);
        assert_eq!(tie[0].0.get(), 1);
    }

    #[test]
    fn window_layout() {
        assert_eq!(window_origins(100, 48, 8), vec![0, 8, 16, 24, 32, 40, 48]);
        let origins = window_origins(96, 48, 48);
        assert_eq!(origins, vec![0, 48]);
        // block-constant when stride equals the patch
        let assign: Vec<usize> = (0..96).map(|x| nearest_window(x, &origins, 48)).collect();
        assert!(assign[..48].iter().all(|&i| i == 0));
        assert!(assign[48..].iter().all(|&i| i == 1));
    }

    #[test]
    fn patch_too_small_for_kernel() {
        let bank = KernelBank::from_family(&KernelFamily::Coded(AperturePattern::selected()), &[19]).unwrap();
        let patch = corpus::dead_leaves(16, 16, 1);
        let c = nsr_for(16, 16, 19, 0.001).unwrap();
        assert!(matches!(
            estimate_patch_scale(&patch, &bank, &c),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn volume_shape_and_invariants() {
        let fam = KernelFamily::Coded(AperturePattern::selected());
        let bank = KernelBank::from_family(&fam, &[2, 4, 6]).unwrap();
        let scene = corpus::dead_leaves(72, 60, 7);
        let img = blur_seeded(&scene, bank.get(4).unwrap(), 0.001, 1).unwrap();
        let c = nsr_for(48, 48, bank.max_side(), 0.001).unwrap();
        let vol = raw_depth_volume(&img, &bank, &c, 48, 12).unwrap();
        assert_eq!((vol.width(), vol.height(), vol.scales().len()), (72, 60, 3));
        for y in 0..60 {
            for x in 0..72 {
                let px = vol.pixel(x, y);
                assert!(px.iter().filter(|p| **p > 0.0).count() <= 2);
                assert!((px.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
        }
        assert!(DepthVolume::new(1, 1, vec![1, 2, 3], vec![0.4, 0.3, 0.3]).is_err());
    }

    #[test]
    fn depth_map_checks() {
        assert!(matches!(
            DepthMap::new(2, 1, vec![0, 2], vec![1, 2]),
            Err(Error::Legend(2))
        ));
        let m = DepthMap::new(3, 1, vec![0, 1, 1], vec![-3, 3]).unwrap();
        assert_eq!(m.modal_scale(), 3);
        assert_eq!(m.scale_at(0, 0), -3);
    }
}
