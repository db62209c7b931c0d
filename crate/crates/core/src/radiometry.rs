//! Photon and read-noise model.
//!
//! A single open cell collects `J` photoelectrons per pixel; with `n` open
//! cells the signal is `n J` and the noise variance `sigma_r^2 + n J`
//! (read noise plus Gaussian-approximated shot noise).

use crate::error::{Error, Result};
use crate::pattern::CELLS;

/// Scene illumination and sensor parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImagingConfig {
    /// Sensor quantum efficiency, fraction in (0, 1].
    pub quantum_efficiency: f64,
    /// Average scene reflectivity, fraction in (0, 1].
    pub reflectivity: f64,
    /// Exposure time in seconds.
    pub exposure_s: f64,
    /// Pixel pitch in micrometres.
    pub pixel_um: f64,
    pub f_number: f64,
    /// Scene illumination in lux.
    pub lux: f64,
    /// Read-noise standard deviation in electrons.
    pub read_noise_e: f64,
}

impl Default for ImagingConfig {
    /// Consumer-photography settings: q = R = 0.5, 10 ms, 5.1 um pixels,
    /// f/18, 300 lux office light, 4 e- read noise.
    fn default() -> Self {
        Self {
            quantum_efficiency: 0.5,
            reflectivity: 0.5,
            exposure_s: 0.01,
            pixel_um: 5.1,
            f_number: 18.0,
            lux: 300.0,
            read_noise_e: 4.0,
        }
    }
}

impl ImagingConfig {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("q", self.quantum_efficiency),
            ("reflectivity", self.reflectivity),
            ("exposure_s", self.exposure_s),
            ("pixel_um", self.pixel_um),
            ("f_number", self.f_number),
            ("lux", self.lux),
        ];
        for (name, v) in fields {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        // zero read noise is allowed as an idealized sensor
        if !(self.read_noise_e.is_finite() && self.read_noise_e >= 0.0) {
            return Err(Error::Config(format!(
                "read_noise_e must be non-negative, got {}",
                self.read_noise_e
            )));
        }
        if self.quantum_efficiency > 1.0 || self.reflectivity > 1.0 {
            return Err(Error::Config("q and reflectivity must not exceed 1".into()));
        }
        Ok(())
    }

    /// Photoelectrons per pixel for a single open cell.
    pub fn photons_per_hole(&self) -> f64 {
        let pitch_m = self.pixel_um * 1e-6;
        1e15 / (self.f_number * self.f_number)
            * self.reflectivity
            * self.lux
            * self.quantum_efficiency
            * pitch_m
            * pitch_m
            * self.exposure_s
    }

    /// Total noise variance in electrons^2 for `n` open cells.
    pub fn noise_variance(&self, n: usize) -> Result<f64> {
        check_open_count(n)?;
        Ok(self.read_noise_e * self.read_noise_e + n as f64 * self.photons_per_hole())
    }

    pub fn noise_budget(&self, n: usize) -> Result<NoiseBudget> {
        Ok(NoiseBudget {
            j: self.photons_per_hole(),
            sigma_n_sq: self.noise_variance(n)?,
        })
    }
}

/// Noise quantities for one aperture throughput.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseBudget {
    /// Photoelectrons per pixel per open cell.
    pub j: f64,
    /// Total variance in electrons^2.
    pub sigma_n_sq: f64,
}

pub(crate) fn check_open_count(n: usize) -> Result<()> {
    if !(1..=CELLS).contains(&n) {
        return Err(Error::OutOfRange(format!("open-cell count {n} outside 1..={CELLS}")));
    }
    Ok(())
}

pub fn photons_per_hole(cfg: &ImagingConfig) -> f64 {
    cfg.photons_per_hole()
}

pub fn noise_variance(cfg: &ImagingConfig, n: usize) -> Result<f64> {
    cfg.noise_variance(n)
}
