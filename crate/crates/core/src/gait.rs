//! Serpenoid traveling-wave template for the joint angles.
//!
//! Joint `i` (1-based, head-adjacent joint first) is driven by
//!
//! ```text
//! alpha_i(t) = A sin(2 pi xi i / N - 2 pi omega t)
//! ```
//!
//! so the wave travels from head to tail. Angles are radians throughout.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Parameters of the traveling-wave template.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaitParams {
    /// Amplitude in radians.
    pub amplitude: f64,
    /// Waves per body (dimensionless).
    pub spatial_freq: f64,
    /// Undulation frequency in Hz.
    pub temporal_freq: f64,
    pub joint_count: usize,
}

impl GaitParams {
    /// Validating constructor; `joint_limit` is the mechanical joint limit in radians.
    pub fn new(
        amplitude: f64,
        spatial_freq: f64,
        temporal_freq: f64,
        joint_count: usize,
        joint_limit: f64,
    ) -> Result<Self> {
        let p = GaitParams {
            amplitude,
            spatial_freq,
            temporal_freq,
            joint_count,
        };
        p.validate(joint_limit)?;
        Ok(p)
    }

    /// Same as [`GaitParams::new`] with the amplitude and limit given in degrees.
    pub fn from_degrees(
        amplitude_deg: f64,
        spatial_freq: f64,
        temporal_freq: f64,
        joint_count: usize,
        joint_limit_deg: f64,
    ) -> Result<Self> {
        Self::new(
            amplitude_deg.to_radians(),
            spatial_freq,
            temporal_freq,
            joint_count,
            joint_limit_deg.to_radians(),
        )
    }

    pub fn validate(&self, joint_limit: f64) -> Result<()> {
        if !(self.amplitude > 0.0 && self.amplitude <= joint_limit + 1e-12) {
            return Err(Error::Argument(format!(
                "amplitude {:.3} deg must lie in (0, {:.3}] deg",
                self.amplitude.to_degrees(),
                joint_limit.to_degrees()
            )));
        }
        if !(self.temporal_freq > 0.0 && self.temporal_freq.is_finite()) {
            return Err(Error::Argument(format!(
                "temporal frequency must be positive, got {}",
                self.temporal_freq
            )));
        }
        if !(self.spatial_freq >= 0.0 && self.spatial_freq.is_finite()) {
            return Err(Error::Argument(format!(
                "spatial frequency must be non-negative, got {}",
                self.spatial_freq
            )));
        }
        if self.joint_count == 0 {
            return Err(Error::Argument("joint count must be at least 1".into()));
        }
        Ok(())
    }

    /// Undulation period in seconds.
    pub fn period(&self) -> f64 {
        1.0 / self.temporal_freq
    }

    /// Phase of joint `i` at time `t` (no range check).
    fn phase(&self, i: usize, t: f64) -> f64 {
        TAU * self.spatial_freq * i as f64 / self.joint_count as f64 - TAU * self.temporal_freq * t
    }

    /// Suggested angle of joint `i` (1..=N) at time `t`.
    pub fn suggested_angle(&self, i: usize, t: f64) -> Result<f64> {
        if i == 0 || i > self.joint_count {
            return Err(Error::Argument(format!(
                "joint index {i} outside 1..={}",
                self.joint_count
            )));
        }
        if !(t >= 0.0) {
            return Err(Error::Argument(format!("time must be non-negative, got {t}")));
        }
        Ok(self.amplitude * self.phase(i, t).sin())
    }

    /// Suggested angles of all joints at time `t`, head to tail.
    pub fn suggested_profile(&self, t: f64) -> Vec<f64> {
        (1..=self.joint_count)
            .map(|i| self.amplitude * self.phase(i, t).sin())
            .collect()
    }

    /// Writes the profile into an existing buffer (used in the hot loop).
    pub(crate) fn fill_profile(&self, t: f64, out: &mut [f64]) {
        for (k, slot) in out.iter_mut().enumerate() {
            *slot = self.amplitude * self.phase(k + 1, t).sin();
        }
    }
}
