use crate::atomic_data::{maxwell_boltzmann_pdf, Species, ThermalEnsemble};
use crate::{Error, Result};

/// Sample velocities along the beam axis with quadrature weights.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityGrid {
    velocities: Vec<f64>,
    weights: Vec<f64>,
}

impl VelocityGrid {
    pub fn new(velocities: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if velocities.is_empty() || velocities.len() != weights.len() {
            return Err(Error::config(
                "velocity grid needs matching, non-empty velocities and weights",
            ));
        }
        if velocities.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::config("velocity grid must be strictly increasing"));
        }
        if weights.iter().any(|&w| !(w > 0.0) || !w.is_finite()) {
            return Err(Error::config("velocity grid weights must be positive"));
        }
        Ok(VelocityGrid { velocities, weights })
    }

    /// `n` evenly spaced points on `[min, max]` with trapezoidal weights.
    pub fn uniform(min: f64, max: f64, n: usize) -> Result<Self> {
        if n < 2 || !(max > min) {
            return Err(Error::config("uniform grid needs n >= 2 and max > min"));
        }
        let h = (max - min) / (n - 1) as f64;
        let velocities = (0..n).map(|i| min + i as f64 * h).collect();
        let weights = (0..n).map(|i| if i == 0 || i == n - 1 { 0.5 * h } else { h }).collect();
        VelocityGrid::new(velocities, weights)
    }

    /// Symmetric uniform grid spanning `±sigmas` thermal standard deviations.
    pub fn thermal(ensemble: &ThermalEnsemble, species: &Species, sigmas: f64, n: usize) -> Result<Self> {
        let span = sigmas * ensemble.velocity_std(species);
        VelocityGrid::uniform(-span, span, n)
    }

    /// 2001 points over ±6 sigma.
    pub fn default_for(ensemble: &ThermalEnsemble, species: &Species) -> Result<Self> {
        VelocityGrid::thermal(ensemble, species, 6.0, 2001)
    }

    /// A single class of unit weight, for delta-like distributions.
    pub fn single(velocity: f64) -> Self {
        VelocityGrid {
            velocities: vec![velocity],
            weights: vec![1.0],
        }
    }

    pub fn velocities(&self) -> &[f64] {
        &self.velocities
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.velocities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.velocities.is_empty()
    }

    /// Quadrature of sampled values.
    pub fn integrate(&self, values: &[f64]) -> f64 {
        debug_assert_eq!(values.len(), self.len());
        self.weights.iter().zip(values).map(|(w, v)| w * v).sum()
    }

    /// Quadrature of the thermal distribution; close to one for adequate grids.
    pub fn thermal_mass(&self, ensemble: &ThermalEnsemble, species: &Species) -> Result<f64> {
        let mut acc = 0.0;
        for (v, w) in self.velocities.iter().zip(&self.weights) {
            acc += w * maxwell_boltzmann_pdf(*v, ensemble, species)?;
        }
        Ok(acc)
    }

    /// Errors unless the grid integrates the thermal distribution to 1 within 1e-6.
    pub fn check_covers(&self, ensemble: &ThermalEnsemble, species: &Species) -> Result<()> {
        let mass = self.thermal_mass(ensemble, species)?;
        if (mass - 1.0).abs() > 1e-6 {
            return Err(Error::config(format!(
                "velocity grid captures {mass} of the thermal distribution; widen or refine it"
            )));
        }
        Ok(())
    }
}
