//! Convex, increasing rate-to-power maps and schedule energy.
//!
//! All Shannon-type models use base-2 logarithms, so that inverting
//! `r = 1/2 log2(1 + p / sigma2)` gives `p = sigma2 (2^(2r) - 1)`.

use std::f64::consts::LN_2;

use serde::{Deserialize, Serialize};

use crate::curves::Schedule;
use crate::error::{Error, Result};

/// Rate (bits/s) to power (W) map of the link.
///
/// Serialized with a `kind` tag, e.g.
/// `{"kind":"bandlimited_shannon","W":1000,"sigma2":1,"h2":2}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EnergyModel {
    /// `p = sigma2 (2^(2r) - 1)`.
    UnitShannon {
        #[serde(rename = "sigma2")]
        noise_power: f64,
    },
    /// `p = (W sigma2 / h2) (2^(r/W) - 1)`.
    BandlimitedShannon {
        #[serde(rename = "W")]
        bandwidth_hz: f64,
        #[serde(rename = "sigma2")]
        noise_power: f64,
        #[serde(rename = "h2")]
        channel_gain: f64,
    },
    /// `p = r^k` with `k >= 1`.
    Monomial { exponent: f64 },
}

impl Default for EnergyModel {
    fn default() -> Self {
        EnergyModel::UnitShannon { noise_power: 1.0 }
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidModel(format!("{name} must be positive, got {v}")))
    }
}

impl EnergyModel {
    pub fn unit_shannon(noise_power: f64) -> Result<Self> {
        let m = EnergyModel::UnitShannon { noise_power };
        m.validate()?;
        Ok(m)
    }

    pub fn bandlimited_shannon(bandwidth_hz: f64, noise_power: f64, channel_gain: f64) -> Result<Self> {
        let m = EnergyModel::BandlimitedShannon {
            bandwidth_hz,
            noise_power,
            channel_gain,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn monomial(exponent: f64) -> Result<Self> {
        let m = EnergyModel::Monomial { exponent };
        m.validate()?;
        Ok(m)
    }

    /// The link used in the Monte-Carlo experiment: W = 1 kHz, sigma2 = 1, |h|^2 = 2.
    pub fn experiment_link() -> Self {
        EnergyModel::BandlimitedShannon {
            bandwidth_hz: 1000.0,
            noise_power: 1.0,
            channel_gain: 2.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            EnergyModel::UnitShannon { noise_power } => positive("sigma2", noise_power),
            EnergyModel::BandlimitedShannon {
                bandwidth_hz,
                noise_power,
                channel_gain,
            } => {
                positive("W", bandwidth_hz)?;
                positive("sigma2", noise_power)?;
                positive("h2", channel_gain)
            }
            EnergyModel::Monomial { exponent } => {
                if exponent.is_finite() && exponent >= 1.0 {
                    Ok(())
                } else {
                    Err(Error::InvalidModel(format!("exponent must be >= 1, got {exponent}")))
                }
            }
        }
    }

    /// Writes every model as `p = scale * (2^(r * gain) - 1)` when it is
    /// exponential.
    fn exponential_form(&self) -> Option<(f64, f64)> {
        match *self {
            EnergyModel::UnitShannon { noise_power } => Some((noise_power, 2.0)),
            EnergyModel::BandlimitedShannon {
                bandwidth_hz,
                noise_power,
                channel_gain,
            } => Some((bandwidth_hz * noise_power / channel_gain, 1.0 / bandwidth_hz)),
            EnergyModel::Monomial { .. } => None,
        }
    }

    /// `f(rate)` for a checked, non-negative rate.
    pub fn power_of_rate(&self, rate: f64) -> Result<f64> {
        if !(rate >= 0.0) {
            return Err(Error::Domain(format!("rate must be non-negative, got {rate}")));
        }
        Ok(self.power(rate))
    }

    /// Inverse of [`EnergyModel::power_of_rate`].
    pub fn rate_of_power(&self, power: f64) -> Result<f64> {
        if !(power >= 0.0) {
            return Err(Error::Domain(format!("power must be non-negative, got {power}")));
        }
        Ok(match (self.exponential_form(), *self) {
            (Some((scale, gain)), _) => (power / scale).ln_1p() / (gain * LN_2),
            (None, EnergyModel::Monomial { exponent }) => power.powf(1.0 / exponent),
            _ => unreachable!(),
        })
    }

    /// Unchecked `f(rate)`. Negative rates are not meaningful; callers
    /// guarantee `rate >= 0`.
    #[inline]
    pub fn power(&self, rate: f64) -> f64 {
        match (self.exponential_form(), *self) {
            (Some((scale, gain)), _) => scale * (gain * LN_2 * rate).exp_m1(),
            (None, EnergyModel::Monomial { exponent }) => rate.powf(exponent),
            _ => unreachable!(),
        }
    }

    /// `f'(rate)`.
    #[inline]
    pub fn marginal_power(&self, rate: f64) -> f64 {
        match (self.exponential_form(), *self) {
            (Some((scale, gain)), _) => scale * gain * LN_2 * (gain * LN_2 * rate).exp(),
            (None, EnergyModel::Monomial { exponent }) => {
                if exponent == 1.0 {
                    1.0
                } else {
                    exponent * rate.powf(exponent - 1.0)
                }
            }
            _ => unreachable!(),
        }
    }

    /// `f''(rate)`.
    #[inline]
    pub fn power_curvature(&self, rate: f64) -> f64 {
        match (self.exponential_form(), *self) {
            (Some((scale, gain)), _) => {
                let k = gain * LN_2;
                scale * k * k * (k * rate).exp()
            }
            (None, EnergyModel::Monomial { exponent }) => {
                if exponent == 1.0 {
                    0.0
                } else if exponent == 2.0 {
                    2.0
                } else {
                    exponent * (exponent - 1.0) * rate.powf(exponent - 2.0)
                }
            }
            _ => unreachable!(),
        }
    }

    /// A rate scale at which the model is "moderate": 1 for the unit models,
    /// W for the bandlimited one.
    pub fn rate_scale(&self) -> f64 {
        match *self {
            EnergyModel::BandlimitedShannon { bandwidth_hz, .. } => bandwidth_hz,
            _ => 1.0,
        }
    }

    /// Exact energy of a piecewise-constant-rate schedule: `sum f(r_k) (t1 - t0)`.
    pub fn schedule_energy(&self, schedule: &Schedule) -> f64 {
        schedule
            .segments()
            .iter()
            .map(|s| self.power(s.rate) * (s.t1 - s.t0))
            .sum()
    }
}
