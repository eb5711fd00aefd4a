//! Compression-cavity force sensor and OCT A-scan synthesis.
//!
//! Tip force compresses an air cavity in front of the fibre. The remaining gap
//! shows up as a reflectivity peak in the A-scan whose pixel position moves
//! towards zero as the load grows.

use rand::Rng;
use rand_distr::{Exp1, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const ASCAN_LEN: usize = 512;

#[derive(Debug, Error, PartialEq)]
pub enum SensorError {
    #[error("negative tip force {0} N")]
    NegativeForce(f64),
    #[error("A-scan must have {ASCAN_LEN} finite samples in [0, 1]: {0}")]
    InvalidFrame(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SensorConfig {
    pub rest_gap_mm: f64,
    /// Force scale of the saturating cavity spring.
    pub force_scale_n: f64,
    /// Imaging depth covered by the 512 pixels.
    pub imaging_depth_mm: f64,
    pub peak_amplitude: f64,
    pub peak_sigma_px: f64,
    pub base_level: f64,
    pub additive_sigma: f64,
    pub speckle: bool,
    /// Master switch for all stochastic terms.
    pub noise: bool,
    /// Width of the backlash band in the cavity; 0 disables hysteresis.
    pub hysteresis_mm: f64,
}

impl Default for SensorConfig {
    fn default() -> Self {
        Self {
            rest_gap_mm: 0.5,
            force_scale_n: 2.0,
            imaging_depth_mm: 2.6,
            peak_amplitude: 0.9,
            peak_sigma_px: 2.5,
            base_level: 0.03,
            additive_sigma: 0.01,
            speckle: true,
            noise: true,
            hysteresis_mm: 0.0,
        }
    }
}

impl SensorConfig {
    pub fn noiseless() -> Self {
        Self {
            noise: false,
            ..Self::default()
        }
    }

    pub fn px_per_mm(&self) -> f64 {
        ASCAN_LEN as f64 / self.imaging_depth_mm
    }

    pub fn cavity(&self, compression_mm: f64) -> CavityState {
        CavityState {
            rest_gap_mm: self.rest_gap_mm,
            compression_mm: compression_mm.clamp(0.0, self.rest_gap_mm),
        }
    }

    /// Saturating spring: `rest_gap * (1 - exp(-f / force_scale))`.
    pub fn cavity_compression(&self, f_tip: f64) -> Result<f64, SensorError> {
        if f_tip < 0.0 || f_tip.is_nan() {
            return Err(SensorError::NegativeForce(f_tip));
        }
        Ok(self.rest_gap_mm * (1.0 - (-f_tip / self.force_scale_n).exp()))
    }

    /// Exact inverse of [`cavity_compression`](Self::cavity_compression) on `[0, rest_gap)`.
    pub fn force_from_compression(&self, compression_mm: f64) -> f64 {
        let ratio = (compression_mm / self.rest_gap_mm).clamp(0.0, 1.0 - 1e-12);
        -self.force_scale_n * (1.0 - ratio).ln()
    }

    /// Pixel at which the cavity reflection peaks.
    pub fn peak_pixel(&self, cavity: &CavityState) -> f64 {
        cavity.effective_gap_mm() * self.px_per_mm()
    }

    pub fn render_ascan<R: Rng + ?Sized>(
        &self,
        cavity: &CavityState,
        t_s: f64,
        rng: &mut R,
    ) -> AScanFrame {
        let center = self.peak_pixel(cavity);
        let inv_two_var = 1.0 / (2.0 * self.peak_sigma_px * self.peak_sigma_px);
        let intensities = (0..ASCAN_LEN)
            .map(|i| {
                let d = i as f64 - center;
                let peak = self.peak_amplitude * (-d * d * inv_two_var).exp();
                let background = if self.noise {
                    let speckle: f64 = if self.speckle { rng.sample(Exp1) } else { 1.0 };
                    let additive: f64 = rng.sample(StandardNormal);
                    self.base_level * speckle + self.additive_sigma * additive
                } else {
                    self.base_level
                };
                (peak + background).clamp(0.0, 1.0) as f32
            })
            .collect();
        AScanFrame { intensities, t_s }
    }

    /// Stateless composition of compression and rendering.
    pub fn sense<R: Rng + ?Sized>(
        &self,
        f_tip: f64,
        t_s: f64,
        rng: &mut R,
    ) -> Result<AScanFrame, SensorError> {
        let c = self.cavity_compression(f_tip)?;
        Ok(self.render_ascan(&self.cavity(c), t_s, rng))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CavityState {
    pub rest_gap_mm: f64,
    pub compression_mm: f64,
}

impl CavityState {
    pub fn effective_gap_mm(&self) -> f64 {
        (self.rest_gap_mm - self.compression_mm).clamp(0.0, self.rest_gap_mm)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AScanFrame {
    pub intensities: Vec<f32>,
    pub t_s: f64,
}

impl AScanFrame {
    pub fn new(intensities: Vec<f32>, t_s: f64) -> Result<Self, SensorError> {
        let frame = Self { intensities, t_s };
        frame.validate()?;
        Ok(frame)
    }

    pub fn validate(&self) -> Result<(), SensorError> {
        if self.intensities.len() != ASCAN_LEN {
            return Err(SensorError::InvalidFrame(format!(
                "length {}",
                self.intensities.len()
            )));
        }
        if let Some(v) = self
            .intensities
            .iter()
            .find(|v| !v.is_finite() || **v < 0.0 || **v > 1.0)
        {
            return Err(SensorError::InvalidFrame(format!("value {v}")));
        }
        Ok(())
    }

    pub fn argmax(&self) -> usize {
        self.intensities
            .iter()
            .enumerate()
            .fold((0, f32::NEG_INFINITY), |(bi, bv), (i, &v)| {
                if v > bv {
                    (i, v)
                } else {
                    (bi, bv)
                }
            })
            .0
    }
}

/// Stateful sensor: carries the cavity backlash state between frames.
#[derive(Debug, Clone, PartialEq)]
pub struct Sensor {
    pub config: SensorConfig,
    compression_mm: f64,
}

impl Sensor {
    pub fn new(config: SensorConfig) -> Self {
        Self {
            config,
            compression_mm: 0.0,
        }
    }

    pub fn reset(&mut self) {
        self.compression_mm = 0.0;
    }

    pub fn sense<R: Rng + ?Sized>(
        &mut self,
        f_tip: f64,
        t_s: f64,
        rng: &mut R,
    ) -> Result<AScanFrame, SensorError> {
        let target = self.config.cavity_compression(f_tip)?;
        let half = 0.5 * self.config.hysteresis_mm;
        self.compression_mm = if half > 0.0 {
            self.compression_mm.clamp(target - half, target + half)
        } else {
            target
        };
        let cavity = self.config.cavity(self.compression_mm);
        Ok(self.config.render_ascan(&cavity, t_s, rng))
    }
}

/// Classical baseline: locate the reflection peak and invert the cavity spring.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnalyticInverse {
    pub config: SensorConfig,
}

impl AnalyticInverse {
    pub fn new(config: SensorConfig) -> Self {
        Self { config }
    }

    /// Sub-pixel peak location from a three-point Gaussian fit around the maximum.
    pub fn peak_position(&self, frame: &AScanFrame) -> f64 {
        let p = frame.argmax();
        let v = &frame.intensities;
        if p == 0 || p + 1 >= v.len() {
            return p as f64;
        }
        let base = self.config.base_level as f32;
        let (a, b, c) = (v[p - 1] - base, v[p] - base, v[p + 1] - base);
        let offset = if a > 0.0 && b > 0.0 && c > 0.0 {
            let (la, lb, lc) = ((a as f64).ln(), (b as f64).ln(), (c as f64).ln());
            let denom = la - 2.0 * lb + lc;
            if denom < 0.0 {
                0.5 * (la - lc) / denom
            } else {
                0.0
            }
        } else {
            let denom = (a - 2.0 * b + c) as f64;
            if denom < 0.0 {
                0.5 * (a - c) as f64 / denom
            } else {
                0.0
            }
        };
        p as f64 + offset.clamp(-0.5, 0.5)
    }

    pub fn estimate(&self, frame: &AScanFrame) -> f64 {
        let gap = self.peak_position(frame) / self.config.px_per_mm();
        let compression = (self.config.rest_gap_mm - gap).max(0.0);
        self.config.force_from_compression(compression)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream_rng, Stream};

    #[test]
    fn compression_examples() {
        let c = SensorConfig::default();
        assert_eq!(c.cavity_compression(0.0).unwrap(), 0.0);
        let two = c.cavity_compression(2.0).unwrap();
        assert!((two - 0.5 * (1.0 - (-1.0f64).exp())).abs() < 1e-15);
        assert!((two - 0.3161).abs() < 1e-4);
        assert!(c.cavity_compression(1e3).unwrap() <= c.rest_gap_mm);
        assert!((c.cavity_compression(1e3).unwrap() - c.rest_gap_mm).abs() < 1e-12);
        assert_eq!(
            c.cavity_compression(-0.1),
            Err(SensorError::NegativeForce(-0.1))
        );
    }

    #[test]
    fn compression_inverse_round_trips() {
        let c = SensorConfig::default();
        for i in 0..=50 {
            let f = i as f64 * 0.1;
            let back = c.force_from_compression(c.cavity_compression(f).unwrap());
            assert!((back - f).abs() < 1e-9);
        }
    }

    #[test]
    fn peak_pixel_mapping() {
        let c = SensorConfig::noiseless();
        let rest = c.peak_pixel(&c.cavity(0.0));
        assert!((rest - 0.5 / 2.6 * 512.0).abs() < 1e-12);
        assert!((rest - 98.46).abs() < 0.01);
        assert_eq!(c.peak_pixel(&c.cavity(0.5)), 0.0);
        let mut rng = stream_rng(0, Stream::SensorNoise, 0);
        let frame = c.render_ascan(&c.cavity(0.5), 0.0, &mut rng);
        assert_eq!(frame.argmax(), 0);
    }

    #[test]
    fn noiseless_argmax_is_rounded_peak() {
        let c = SensorConfig::noiseless();
        let mut rng = stream_rng(0, Stream::SensorNoise, 0);
        for i in 0..=100 {
            let f = i as f64 * 0.05;
            let cav = c.cavity(c.cavity_compression(f).unwrap());
            let frame = c.render_ascan(&cav, 0.0, &mut rng);
            assert_eq!(
                frame.argmax(),
                c.peak_pixel(&cav).round() as usize,
                "f = {f}"
            );
        }
    }

    #[test]
    fn sense_examples() {
        let c = SensorConfig::noiseless();
        let mut rng = stream_rng(0, Stream::SensorNoise, 0);
        let inv = AnalyticInverse::new(c);
        let zero = c.sense(0.0, 0.0, &mut rng).unwrap();
        assert!((inv.peak_position(&zero) - 98.46).abs() < 0.01);
        let five = c.sense(5.0, 0.0, &mut rng).unwrap();
        // gap 0.5 e^-2.5 = 0.041 mm
        assert!((inv.peak_position(&five) - 8.08).abs() < 0.02);
    }

    #[test]
    fn same_seed_same_frame() {
        let c = SensorConfig::default();
        let a = c
            .sense(1.3, 0.0, &mut stream_rng(4, Stream::SensorNoise, 0))
            .unwrap();
        let b = c
            .sense(1.3, 0.0, &mut stream_rng(4, Stream::SensorNoise, 0))
            .unwrap();
        assert_eq!(a, b);
        a.validate().unwrap();
    }

    #[test]
    fn analytic_inverse_is_quantization_limited() {
        let c = SensorConfig::noiseless();
        let inv = AnalyticInverse::new(c);
        let mut rng = stream_rng(0, Stream::SensorNoise, 0);
        let mut worst: f64 = 0.0;
        for i in 0..=500 {
            let f = i as f64 * 0.01;
            let frame = c.sense(f, 0.0, &mut rng).unwrap();
            worst = worst.max((inv.estimate(&frame) - f).abs());
        }
        assert!(worst < 0.02, "worst error {worst}");
    }

    #[test]
    fn hysteresis_band_holds_compression() {
        let cfg = SensorConfig {
            hysteresis_mm: 0.1,
            ..SensorConfig::noiseless()
        };
        let mut s = Sensor::new(cfg);
        let mut rng = stream_rng(0, Stream::SensorNoise, 0);
        let up = s.sense(3.0, 0.0, &mut rng).unwrap();
        let down = s.sense(2.8, 0.0, &mut rng).unwrap();
        assert_eq!(up, down);
    }

    #[test]
    fn frame_validation() {
        assert!(AScanFrame::new(vec![0.0; 10], 0.0).is_err());
        assert!(AScanFrame::new(vec![1.5; ASCAN_LEN], 0.0).is_err());
        assert!(AScanFrame::new(vec![0.5; ASCAN_LEN], 0.0).is_ok());
    }
}
