//! Thin-lens defocus geometry.

use crate::error::{Error, Result};

/// Lens and sensor geometry. Lengths in millimetres, pixel pitch in micrometres.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThinLensConfig {
    pub focal_length_mm: f64,
    pub focus_distance_mm: f64,
    pub aperture_diameter_mm: f64,
    pub pixel_pitch_um: f64,
}

/// Side of the focal plane an object lies on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FocalSide {
    /// Farther than the focus distance; the image forms in front of the sensor.
    Behind,
    InFocus,
    /// Closer than the focus distance.
    InFront,
}

/// Blur diameter in pixels and the side of the focal plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlurSize {
    pub diameter_px: f64,
    pub side: FocalSide,
}

impl ThinLensConfig {
    pub fn new(
        focal_length_mm: f64,
        focus_distance_mm: f64,
        aperture_diameter_mm: f64,
        pixel_pitch_um: f64,
    ) -> Result<Self> {
        let cfg = Self {
            focal_length_mm,
            focus_distance_mm,
            aperture_diameter_mm,
            pixel_pitch_um,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let all_finite = [
            self.focal_length_mm,
            self.focus_distance_mm,
            self.aperture_diameter_mm,
            self.pixel_pitch_um,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !all_finite
            || self.focal_length_mm <= 0.0
            || self.focus_distance_mm <= self.focal_length_mm
            || self.aperture_diameter_mm <= 0.0
            || self.pixel_pitch_um <= 0.0
        {
            return Err(Error::Config(format!("invalid lens configuration {self:?}")));
        }
        Ok(())
    }

    /// Image distance for an object at `u` millimetres.
    pub fn image_distance(&self, u: f64) -> f64 {
        self.focal_length_mm * u / (u - self.focal_length_mm)
    }

    /// Defocus blur diameter for an object at distance `u` (mm).
    pub fn blur_size(&self, u: f64) -> Result<BlurSize> {
        if u.is_nan() || u <= self.focal_length_mm {
            return Err(Error::OutOfRange(format!(
                "object distance {u} mm not beyond focal length {} mm",
                self.focal_length_mm
            )));
        }
        let v0 = self.image_distance(self.focus_distance_mm);
        let v = self.image_distance(u);
        let blur_mm = self.aperture_diameter_mm * (v - v0) / v0;
        let side = if v > v0 {
            FocalSide::InFront
        } else if v < v0 {
            FocalSide::Behind
        } else {
            FocalSide::InFocus
        };
        Ok(BlurSize {
            diameter_px: blur_mm.abs() / (self.pixel_pitch_um * 1e-3),
            side,
        })
    }
}

/// Free-function form of [`ThinLensConfig::blur_size`].
pub fn blur_size(lens: &ThinLensConfig, u: f64) -> Result<BlurSize> {
    lens.blur_size(u)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lens(d: f64) -> ThinLensConfig {
        ThinLensConfig::new(50.0, 1200.0, d, 5.1).unwrap()
    }

    #[test]
    fn in_focus_plane_is_sharp() {
        let b = lens(20.0).blur_size(1200.0).unwrap();
        assert_eq!(b.diameter_px, 0.0);
        assert_eq!(b.side, FocalSide::InFocus);
    }

    #[test]
    fn worked_example() {
        let l = lens(20.0);
        assert!((l.image_distance(1200.0) - 52.173913).abs() < 1e-6);
        assert!((l.image_distance(1100.0) - 52.380952).abs() < 1e-6);
        let b = l.blur_size(1100.0).unwrap();
        assert!((b.diameter_px - 15.561780).abs() < 1e-4);
        assert_eq!(b.side, FocalSide::InFront);
        assert_eq!(l.blur_size(1500.0).unwrap().side, FocalSide::Behind);
    }

    #[test]
    fn linear_in_aperture() {
        for u in [300.0, 900.0, 1199.0, 1201.0, 5000.0] {
            let a = lens(8.21).blur_size(u).unwrap().diameter_px;
            let b = lens(16.42).blur_size(u).unwrap().diameter_px;
            assert!((b - 2.0 * a).abs() <= 1e-12 * b.max(1.0));
        }
    }

    #[test]
    fn monotone_away_from_focus() {
        let l = lens(20.0);
        let near: Vec<f64> = (0..50)
            .map(|i| l.blur_size(1200.0 - 10.0 * i as f64).unwrap().diameter_px)
            .collect();
        let far: Vec<f64> = (0..50)
            .map(|i| l.blur_size(1200.0 + 10.0 * i as f64).unwrap().diameter_px)
            .collect();
        assert!(near.windows(2).all(|w| w[1] > w[0]));
        assert!(far.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn errors() {
        assert!(matches!(lens(20.0).blur_size(50.0), Err(Error::OutOfRange(_))));
        assert!(matches!(lens(20.0).blur_size(10.0), Err(Error::OutOfRange(_))));
        assert!(ThinLensConfig::new(50.0, 40.0, 20.0, 5.1).is_err());
        assert!(ThinLensConfig::new(50.0, 1200.0, 0.0, 5.1).is_err());
    }
}
