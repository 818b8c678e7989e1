use std::f64::consts::PI;

use crate::atomic_data::{Species, ThermalEnsemble};
use crate::constants::BOLTZMANN;
use crate::{Error, Result};

/// Transverse sizes of the pump-back and probe beams.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BeamGeometry {
    /// Pump-back beam radius (m).
    pub pump_back_radius: f64,
    /// Probe beam radius (m).
    pub probe_radius: f64,
}

impl BeamGeometry {
    pub fn new(pump_back_radius: f64, probe_radius: f64) -> Result<Self> {
        if !(probe_radius > 0.0) || !(pump_back_radius > probe_radius) {
            return Err(Error::domain(format!(
                "need pump-back radius > probe radius > 0, got {pump_back_radius} and {probe_radius}"
            )));
        }
        Ok(BeamGeometry {
            pump_back_radius,
            probe_radius,
        })
    }
}

impl Default for BeamGeometry {
    /// 1.5 mm expanded pump-back beam around a 0.3 mm probe.
    fn default() -> Self {
        BeamGeometry {
            pump_back_radius: 1.5e-3,
            probe_radius: 0.3e-3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DriftEstimate {
    /// Distance covered at three thermal standard deviations during the dwell (m).
    pub three_sigma_distance: f64,
    /// Rate at which atoms cross from the probe region to the pump-back edge (1/s).
    pub drift_rate: f64,
}

/// Transverse drift estimates for atoms prepared inside the pump-back beam.
///
/// The drift rate is approximate: the mean two-dimensional thermal speed
/// sqrt(pi k_B T / 2m) divided by the width of the annulus between the probe
/// and pump-back radii.
pub fn drift_estimates(
    geometry: &BeamGeometry,
    ensemble: &ThermalEnsemble,
    species: &Species,
    dwell: f64,
) -> Result<DriftEstimate> {
    if !(dwell > 0.0) {
        return Err(Error::domain(format!("dwell time must be positive, got {dwell}")));
    }
    let sigma = ensemble.velocity_std(species);
    let mean_speed = (PI * BOLTZMANN * ensemble.temperature / (2.0 * species.mass)).sqrt();
    Ok(DriftEstimate {
        three_sigma_distance: 3.0 * sigma * dwell,
        drift_rate: mean_speed / (geometry.pump_back_radius - geometry.probe_radius),
    })
}
