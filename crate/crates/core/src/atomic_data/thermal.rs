use std::f64::consts::PI;

use crate::atomic_data::Species;
use crate::constants::BOLTZMANN;
use crate::{Error, Result};

/// Bulk state of the vapour cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThermalEnsemble {
    /// Temperature (K).
    pub temperature: f64,
    /// Total number density (atoms/m^3).
    pub density: f64,
    /// Cell length along the beams (m).
    pub cell_length: f64,
}

impl ThermalEnsemble {
    pub fn new(temperature: f64, density: f64, cell_length: f64) -> Result<Self> {
        if !(temperature > 0.0) {
            return Err(Error::domain(format!(
                "temperature must be positive, got {temperature}"
            )));
        }
        if !(density >= 0.0) || !density.is_finite() {
            return Err(Error::domain(format!("density must be non-negative, got {density}")));
        }
        if !(cell_length > 0.0) {
            return Err(Error::domain(format!(
                "cell length must be positive, got {cell_length}"
            )));
        }
        Ok(ThermalEnsemble {
            temperature,
            density,
            cell_length,
        })
    }

    /// Ensemble at the saturated vapour density of `species`.
    pub fn saturated(species: &Species, temperature: f64, cell_length: f64) -> Result<Self> {
        if !(temperature > 0.0) {
            return Err(Error::domain(format!(
                "temperature must be positive, got {temperature}"
            )));
        }
        Self::new(
            temperature,
            species.vapour_pressure.number_density(temperature),
            cell_length,
        )
    }

    /// One-dimensional thermal velocity spread sqrt(k_B T / m) (m/s).
    pub fn velocity_std(&self, species: &Species) -> f64 {
        velocity_std(self.temperature, species.mass)
    }
}

pub fn velocity_std(temperature: f64, mass: f64) -> f64 {
    (BOLTZMANN * temperature / mass).sqrt()
}

/// Longitudinal Maxwell-Boltzmann density (s/m).
pub fn maxwell_boltzmann_pdf(vz: f64, ensemble: &ThermalEnsemble, species: &Species) -> Result<f64> {
    let t = ensemble.temperature;
    if !(t > 0.0) {
        return Err(Error::domain(format!("temperature must be positive, got {t}")));
    }
    let sigma = velocity_std(t, species.mass);
    let x = vz / sigma;
    Ok((-0.5 * x * x).exp() / (sigma * (2.0 * PI).sqrt()))
}
