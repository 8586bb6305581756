//! Averaging-rate schedulers.
//!
//! The averaging rate gamma scales the gossip error added to local
//! parameters each round. Unlike a learning rate it *grows* over training,
//! from a tuned floor gamma0 up to 1, so agents lean on their own data while
//! models are still far apart and average aggressively once they agree.

use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Schedule mapping epoch -> averaging rate in [gamma0, 1].
#[derive(Clone, Debug, PartialEq)]
pub enum ScheduleSpec {
    /// Fixed rate; gamma0 = 1 reproduces classic DSGD.
    Constant { gamma0: f64 },
    /// Multiply by `growth` every `period` epochs, clipped at 1.
    Exponential {
        gamma0: f64,
        growth: f64,
        period: usize,
    },
    /// Same rule as `Exponential`; conventionally a larger growth applied at
    /// a longer period.
    Step {
        gamma0: f64,
        growth: f64,
        period: usize,
    },
    /// Half-cosine ramp gamma0 -> 1 over `t_max` epochs, updated every
    /// `period` epochs. `period != 1` is a nonstandard generalization; the
    /// usual form updates every epoch.
    Cosine {
        gamma0: f64,
        t_max: usize,
        period: usize,
    },
}

impl ScheduleSpec {
    pub fn constant(gamma0: f64) -> Result<Self> {
        let s = ScheduleSpec::Constant { gamma0 };
        s.validate()?;
        Ok(s)
    }

    pub fn exponential(gamma0: f64, growth: f64, period: usize) -> Result<Self> {
        let s = ScheduleSpec::Exponential {
            gamma0,
            growth,
            period,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn step(gamma0: f64, growth: f64, period: usize) -> Result<Self> {
        let s = ScheduleSpec::Step {
            gamma0,
            growth,
            period,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn cosine(gamma0: f64, t_max: usize, period: usize) -> Result<Self> {
        let s = ScheduleSpec::Cosine {
            gamma0,
            t_max,
            period,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn gamma0(&self) -> f64 {
        match *self {
            ScheduleSpec::Constant { gamma0 }
            | ScheduleSpec::Exponential { gamma0, .. }
            | ScheduleSpec::Step { gamma0, .. }
            | ScheduleSpec::Cosine { gamma0, .. } => gamma0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let gamma0 = self.gamma0();
        if !(gamma0 > 0.0 && gamma0 <= 1.0) {
            return Err(Error::invalid(format!(
                "schedule: gamma0 must be in (0,1], got {gamma0}"
            )));
        }
        match *self {
            ScheduleSpec::Constant { .. } => {}
            ScheduleSpec::Exponential { growth, period, .. }
            | ScheduleSpec::Step { growth, period, .. } => {
                if growth < 1.0 || !growth.is_finite() {
                    return Err(Error::invalid(format!(
                        "schedule: growth rate must be >= 1, got {growth}"
                    )));
                }
                if period == 0 {
                    return Err(Error::invalid("schedule: period must be >= 1"));
                }
            }
            ScheduleSpec::Cosine { t_max, period, .. } => {
                if t_max == 0 {
                    return Err(Error::invalid("schedule: t_max must be >= 1"));
                }
                if period == 0 {
                    return Err(Error::invalid("schedule: period must be >= 1"));
                }
            }
        }
        Ok(())
    }

    /// Averaging rate for the given epoch. Non-decreasing in `epoch` and
    /// always within [gamma0, 1].
    pub fn gamma_at(&self, epoch: usize) -> f64 {
        let gamma = match *self {
            ScheduleSpec::Constant { gamma0 } => gamma0,
            ScheduleSpec::Exponential {
                gamma0,
                growth,
                period,
            }
            | ScheduleSpec::Step {
                gamma0,
                growth,
                period,
            } => {
                let steps = (epoch / period) as i32;
                gamma0 * growth.powi(steps)
            }
            ScheduleSpec::Cosine {
                gamma0,
                t_max,
                period,
            } => {
                if epoch >= t_max {
                    return 1.0;
                }
                let held = (epoch / period) * period;
                let phase = PI * held as f64 / t_max as f64;
                gamma0 + 0.5 * (1.0 - gamma0) * (1.0 - phase.cos())
            }
        };
        gamma.clamp(self.gamma0(), 1.0)
    }
}
