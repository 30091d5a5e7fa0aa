//! Decentralized compliance tuning from motor torque feedback.
//!
//! Each joint raises its own compliance in steps when the load on its
//! more heavily pulled cable crosses fractions of the servo stall torque:
//!
//! ```text
//! G_i = 1 + 0.2 s(tau_i - 0.3 T) + 0.2 s(tau_i - 0.5 T) + 0.2 s(tau_i - 0.7 T)
//! ```
//!
//! with `s` the unit step (`s(0) = 1`). A raised level is held for a minimum
//! dwell before the joint may step back down.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Servo stall torque of the reference hardware (N m).
pub const DEFAULT_STALL_TORQUE: f64 = 1.4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerConfig {
    /// Stall torque `T` (N m).
    pub stall_torque: f64,
    /// Threshold fractions of `T`, ascending.
    pub thresholds: Vec<f64>,
    /// G added per crossed threshold.
    pub increment: f64,
    /// Level with no threshold crossed.
    pub base_g: f64,
    /// Minimum dwell after an upward step (s).
    pub hold_duration: f64,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        ControllerConfig {
            stall_torque: DEFAULT_STALL_TORQUE,
            thresholds: vec![0.3, 0.5, 0.7],
            increment: 0.2,
            base_g: 1.0,
            hold_duration: 0.5,
        }
    }
}

impl ControllerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.stall_torque > 0.0) {
            return Err(Error::config("compliance.controller.T_Nm", "stall torque must be positive"));
        }
        if self.thresholds.is_empty()
            || self.thresholds.windows(2).any(|w| w[1] <= w[0])
            || self.thresholds.iter().any(|t| !(*t >= 0.0))
        {
            return Err(Error::config(
                "compliance.controller.thresholds",
                "thresholds must be non-negative and strictly ascending",
            ));
        }
        if !(self.increment >= 0.0) || !(self.base_g >= 0.0) {
            return Err(Error::config(
                "compliance.controller.increment",
                "increment and base level must be non-negative",
            ));
        }
        if !(self.hold_duration >= 0.0) {
            return Err(Error::config("compliance.controller.hold_s", "hold must be non-negative"));
        }
        Ok(())
    }

    /// Stepped compliance level for a torque magnitude.
    pub fn target(&self, tau: f64) -> f64 {
        let crossed = self
            .thresholds
            .iter()
            .filter(|&&frac| step(tau - frac * self.stall_torque) == 1.0)
            .count();
        self.base_g + self.increment * crossed as f64
    }

    /// Highest level the controller can reach.
    pub fn max_level(&self) -> f64 {
        self.base_g + self.increment * self.thresholds.len() as f64
    }
}

/// Unit step with `step(0) = 1`.
#[inline]
pub fn step(x: f64) -> f64 {
    if x >= 0.0 {
        1.0
    } else {
        0.0
    }
}

/// Compliance level for torque `tau` under stall torque `stall` with the
/// reference thresholds (0.3, 0.5, 0.7) and 0.2 increments.
pub fn target_g(tau: f64, stall: f64) -> Result<f64> {
    if !(tau >= 0.0) {
        return Err(Error::Argument(format!("torque magnitude must be non-negative, got {tau}")));
    }
    if !(stall > 0.0) {
        return Err(Error::Argument(format!("stall torque must be positive, got {stall}")));
    }
    let cfg = ControllerConfig {
        stall_torque: stall,
        ..ControllerConfig::default()
    };
    Ok(cfg.target(tau))
}

/// Servo torque estimate for a joint: the larger cable tension on the pulley.
pub fn estimate_motor_torque(tension_left: f64, tension_right: f64, pulley_radius: f64) -> f64 {
    tension_left.max(tension_right) * pulley_radius
}

/// Expiry tolerance for the accumulated hold timers.
const TIMER_EPS: f64 = 1e-9;

/// Per-joint controller state.
#[derive(Debug, Clone, PartialEq)]
pub struct ControllerState {
    config: ControllerConfig,
    g: Vec<f64>,
    hold: Vec<f64>,
}

impl ControllerState {
    pub fn new(config: ControllerConfig, joints: usize) -> Result<Self> {
        config.validate()?;
        Ok(ControllerState {
            g: vec![config.base_g; joints],
            hold: vec![0.0; joints],
            config,
        })
    }

    pub fn config(&self) -> &ControllerConfig {
        &self.config
    }

    pub fn g(&self) -> &[f64] {
        &self.g
    }

    pub fn hold_timers(&self) -> &[f64] {
        &self.hold
    }

    /// Advances every joint by `dt` given its torque and returns the new levels.
    ///
    /// Upward steps are adopted at once and restart the joint's hold timer.
    /// Once the timer has run out the joint follows its target downward.
    pub fn update(&mut self, torques: &[f64], dt: f64) -> Result<&[f64]> {
        if torques.len() != self.g.len() {
            return Err(Error::Argument(format!(
                "{} torques for {} joints",
                torques.len(),
                self.g.len()
            )));
        }
        if !(dt > 0.0) {
            return Err(Error::Argument(format!("controller dt must be positive, got {dt}")));
        }
        for ((g, hold), &tau) in self.g.iter_mut().zip(&mut self.hold).zip(torques) {
            *hold = (*hold - dt).max(0.0);
            let candidate = self.config.target(tau.abs());
            if candidate > *g {
                *g = candidate;
                *hold = self.config.hold_duration;
            } else if candidate < *g && *hold <= TIMER_EPS {
                *g = candidate;
            }
        }
        Ok(&self.g)
    }
}

/// Checks a logged trace of one joint: after every upward transition the
/// level must not drop within `hold` seconds (allowing `tick` of slack).
pub fn hold_respected(times: &[f64], levels: &[f64], hold: f64, tick: f64) -> bool {
    let mut last_rise: Option<f64> = None;
    for k in 1..levels.len().min(times.len()) {
        if levels[k] > levels[k - 1] {
            last_rise = Some(times[k]);
        } else if levels[k] < levels[k - 1] {
            if let Some(t0) = last_rise {
                if times[k] - t0 < hold - tick - 1e-9 {
                    return false;
                }
            }
        }
    }
    true
}
