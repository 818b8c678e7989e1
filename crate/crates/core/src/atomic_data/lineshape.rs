use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::constants::SPEED_OF_LIGHT;
use crate::{Error, Result};

/// Propagation direction of a beam along the cell axis.
///
/// Pump and pump-back travel along +z; the probe counter-propagates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "i8", into = "i8")]
pub enum Direction {
    Forward,
    Backward,
}

impl Direction {
    pub fn sign(self) -> f64 {
        match self {
            Direction::Forward => 1.0,
            Direction::Backward => -1.0,
        }
    }
}

impl TryFrom<i8> for Direction {
    type Error = String;

    fn try_from(value: i8) -> std::result::Result<Self, Self::Error> {
        match value {
            1 => Ok(Direction::Forward),
            -1 => Ok(Direction::Backward),
            other => Err(format!("propagation sign must be +1 or -1, got {other}")),
        }
    }
}

impl From<Direction> for i8 {
    fn from(d: Direction) -> i8 {
        match d {
            Direction::Forward => 1,
            Direction::Backward => -1,
        }
    }
}

/// Unit-area Lorentzian with full width at half maximum `fwhm` (all in rad/s).
pub fn lorentzian(omega: f64, center: f64, fwhm: f64) -> Result<f64> {
    if !(fwhm > 0.0) {
        return Err(Error::domain(format!("Lorentzian FWHM must be positive, got {fwhm}")));
    }
    Ok(lorentzian_unchecked(omega - center, fwhm))
}

/// Lorentzian of a detuning without the width check, for inner loops.
#[inline]
pub fn lorentzian_unchecked(detuning: f64, fwhm: f64) -> f64 {
    let hw = 0.5 * fwhm;
    (hw / PI) / (detuning * detuning + hw * hw)
}

/// Resonance seen by an atom moving at `vz` for a beam travelling in `direction`.
pub fn doppler_shifted_resonance(omega0: f64, vz: f64, direction: Direction) -> f64 {
    omega0 * (1.0 + direction.sign() * vz / SPEED_OF_LIGHT)
}
