//! WebAssembly bindings for the browser demo in `www/`.
//!
//! Patterns cross the boundary as 49 row-major bytes (nonzero = open). The
//! `*_native` functions hold the logic and report errors as strings so they
//! can be tested off-wasm; the exported wrappers turn those into `JsError`.

use aperture_forge::blur::blur_seeded;
use aperture_forge::corpus;
use aperture_forge::deconv::nsr_for;
use aperture_forge::depth::{estimate_patch_scale, patch_qualities, KernelBank};
use aperture_forge::metrics::PatternEvaluator;
use aperture_forge::pattern::{AperturePattern, CELLS, GRID};
use aperture_forge::psf::{psf_from_pattern, BlurScale, KernelFamily};
use wasm_bindgen::prelude::*;

/// Side of the spectrum shown next to each kernel.
pub const SPECTRUM_SIZE: usize = 64;
/// Side of the synthetic scene used by the scale estimate.
pub const SCENE_SIZE: usize = 48;
/// Largest |scale| in the demo's kernel bank.
pub const MAX_SCALE: i32 = 10;

fn pattern_from_cells(cells: &[u8]) -> Result<AperturePattern, String> {
    if cells.len() != CELLS {
        return Err(format!("expected {CELLS} cells, got {}", cells.len()));
    }
    let mut grid = [[false; GRID]; GRID];
    for (i, &c) in cells.iter().enumerate() {
        grid[i / GRID][i % GRID] = c != 0;
    }
    AperturePattern::from_grid(&grid).map_err(|e| e.to_string())
}

fn cells_of(p: &AperturePattern) -> Vec<u8> {
    p.grid().iter().flatten().map(|&open| open as u8).collect()
}

#[wasm_bindgen]
pub fn selected_pattern() -> Vec<u8> {
    cells_of(&AperturePattern::selected())
}

#[wasm_bindgen]
pub fn circular_pattern() -> Vec<u8> {
    cells_of(&AperturePattern::circular())
}

/// A kernel and the log power of its transfer function.
#[wasm_bindgen]
pub struct KernelView {
    side: usize,
    kernel: Vec<f64>,
    spectrum: Vec<f64>,
}

#[wasm_bindgen]
impl KernelView {
    pub fn side(&self) -> usize {
        self.side
    }

    /// Row-major kernel weights, summing to one.
    pub fn kernel(&self) -> Vec<f64> {
        self.kernel.clone()
    }

    /// `log10 |K|^2` on a `SPECTRUM_SIZE` grid with zero frequency centred.
    pub fn spectrum(&self) -> Vec<f64> {
        self.spectrum.clone()
    }

    pub fn spectrum_size(&self) -> usize {
        SPECTRUM_SIZE
    }
}

pub fn kernel_view_native(cells: &[u8], scale: i32) -> Result<KernelView, String> {
    let p = pattern_from_cells(cells)?;
    let s = BlurScale::new(scale).map_err(|e| e.to_string())?;
    let psf = psf_from_pattern(&p, s);
    let k = psf.transfer(SPECTRUM_SIZE, SPECTRUM_SIZE).map_err(|e| e.to_string())?;
    let n = SPECTRUM_SIZE;
    let mut spectrum = vec![0.0; n * n];
    for v in 0..n {
        for u in 0..n {
            let shifted = ((v + n / 2) % n) * n + (u + n / 2) % n;
            spectrum[shifted] = k.get(u, v).norm_sqr().max(1e-12).log10();
        }
    }
    Ok(KernelView {
        side: psf.side(),
        kernel: psf.kernel().to_vec(),
        spectrum,
    })
}

#[wasm_bindgen]
pub fn kernel_view(cells: &[u8], scale: i32) -> Result<KernelView, JsError> {
    kernel_view_native(cells, scale).map_err(|e| JsError::new(&e))
}

/// `[r_max, d_min, d_r_min]` of the pattern and, after them, of the
/// conventional aperture with the same number of open cells.
pub fn score_native(cells: &[u8]) -> Result<Vec<f64>, String> {
    let p = pattern_from_cells(cells)?;
    let ev = PatternEvaluator::standard();
    let coded = ev.score_pattern(&p).map_err(|e| e.to_string())?;
    let disk = ev
        .score_family(&KernelFamily::Conventional {
            throughput: p.open_count(),
        })
        .map_err(|e| e.to_string())?;
    Ok(vec![
        coded.r_max,
        coded.d_min,
        coded.d_r_min,
        disk.r_max,
        disk.d_min,
        disk.d_r_min,
    ])
}

#[wasm_bindgen]
pub fn score(cells: &[u8]) -> Result<Vec<f64>, JsError> {
    score_native(cells).map_err(|e| JsError::new(&e))
}

/// A blurred synthetic scene and the scale recovered from it.
#[wasm_bindgen]
pub struct ScaleEstimate {
    blurred: Vec<f64>,
    scales: Vec<i32>,
    qualities: Vec<f64>,
    best: i32,
    best_prob: f64,
    second: i32,
    second_prob: f64,
}

#[wasm_bindgen]
impl ScaleEstimate {
    pub fn size(&self) -> usize {
        SCENE_SIZE
    }

    pub fn blurred(&self) -> Vec<f64> {
        self.blurred.clone()
    }

    /// Candidate scales in bank order.
    pub fn scales(&self) -> Vec<i32> {
        self.scales.clone()
    }

    /// Aggregate deblurring quality per candidate scale.
    pub fn qualities(&self) -> Vec<f64> {
        self.qualities.clone()
    }

    pub fn best(&self) -> i32 {
        self.best
    }

    pub fn best_prob(&self) -> f64 {
        self.best_prob
    }

    pub fn second(&self) -> i32 {
        self.second
    }

    pub fn second_prob(&self) -> f64 {
        self.second_prob
    }
}

/// Blurs a dead-leaves scene with the pattern at `scale` and estimates the
/// signed scale from the blurred image alone, over every |s| <= 10.
pub fn estimate_scale_native(cells: &[u8], scale: i32, sigma: f64, seed: u32) -> Result<ScaleEstimate, String> {
    let p = pattern_from_cells(cells)?;
    let err = |e: aperture_forge::Error| e.to_string();
    let scales: Vec<i32> = (-MAX_SCALE..=MAX_SCALE).filter(|&s| s != 0).collect();
    let bank = KernelBank::from_family(&KernelFamily::Coded(p), &scales).map_err(err)?;
    let psf = bank
        .get(scale)
        .ok_or_else(|| format!("scale must be a nonzero integer in -{MAX_SCALE}..={MAX_SCALE}"))?;
    let scene = corpus::dead_leaves(SCENE_SIZE, SCENE_SIZE, u64::from(seed));
    let blurred = blur_seeded(&scene, psf, sigma, u64::from(seed)).map_err(err)?;
    let c = nsr_for(SCENE_SIZE, SCENE_SIZE, bank.max_side(), sigma.max(1e-4)).map_err(err)?;
    let qualities = patch_qualities(&blurred, &bank, &c).map_err(err)?;
    let top = estimate_patch_scale(&blurred, &bank, &c).map_err(err)?;
    Ok(ScaleEstimate {
        blurred: blurred.into_data(),
        scales: bank.scales(),
        qualities,
        best: top[0].0.get(),
        best_prob: top[0].1,
        second: top[1].0.get(),
        second_prob: top[1].1,
    })
}

#[wasm_bindgen]
pub fn estimate_scale(cells: &[u8], scale: i32, sigma: f64, seed: u32) -> Result<ScaleEstimate, JsError> {
    estimate_scale_native(cells, scale, sigma, seed).map_err(|e| JsError::new(&e))
}
