use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::atomic_data::{
    doppler_shifted_resonance, lorentzian_unchecked, Direction, Species, Transition, TransitionId,
};
use crate::constants::SPEED_OF_LIGHT;
use crate::faddeeva::voigt;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StageRole {
    Pump,
    PumpBack,
    Reset,
    /// Weak probe window; reads the state without driving it.
    Probe,
    Dark,
}

impl StageRole {
    pub fn is_driven(self) -> bool {
        !matches!(self, StageRole::Probe | StageRole::Dark)
    }

    pub fn name(self) -> &'static str {
        match self {
            StageRole::Pump => "pump",
            StageRole::PumpBack => "pump-back",
            StageRole::Reset => "reset",
            StageRole::Probe => "probe",
            StageRole::Dark => "dark",
        }
    }
}

/// Spectral shape of a pumping laser.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpectralProfile {
    #[default]
    Lorentzian,
    Gaussian,
}

/// One plateau of the pulse sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct LaserStage {
    pub role: StageRole,
    /// Driven transition; `None` for dark and probe windows.
    pub transition: Option<TransitionId>,
    /// Laser centre frequency (rad/s).
    pub center: f64,
    /// Spectral FWHM (rad/s).
    pub linewidth: f64,
    /// Total optical power (W).
    pub power: f64,
    /// Beam radius (m); intensity is P / (pi r^2).
    pub beam_radius: f64,
    /// Plateau duration (s).
    pub duration: f64,
    pub direction: Direction,
    pub profile: SpectralProfile,
}

impl LaserStage {
    /// A stage without light.
    pub fn dark(duration: f64) -> Self {
        LaserStage {
            role: StageRole::Dark,
            transition: None,
            center: 0.0,
            linewidth: 1.0,
            power: 0.0,
            beam_radius: 1.0,
            duration,
            direction: Direction::Forward,
            profile: SpectralProfile::Lorentzian,
        }
    }

    /// A probe window, which leaves the populations untouched apart from spontaneous decay.
    pub fn probe(duration: f64) -> Self {
        LaserStage {
            role: StageRole::Probe,
            ..LaserStage::dark(duration)
        }
    }

    /// A forward-propagating stage tuned to resonance with the class `selected_velocity`.
    #[allow(clippy::too_many_arguments)]
    pub fn tuned(
        role: StageRole,
        species: &Species,
        transition: TransitionId,
        selected_velocity: f64,
        linewidth: f64,
        power: f64,
        beam_radius: f64,
        duration: f64,
    ) -> Result<Self> {
        let omega0 = species.transition(transition).omega0;
        let stage = LaserStage {
            role,
            transition: Some(transition),
            center: doppler_shifted_resonance(omega0, selected_velocity, Direction::Forward),
            linewidth,
            power,
            beam_radius,
            duration,
            direction: Direction::Forward,
            profile: SpectralProfile::Lorentzian,
        };
        stage.validate()?;
        Ok(stage)
    }

    pub fn with_profile(mut self, profile: SpectralProfile) -> Self {
        self.profile = profile;
        self
    }

    pub fn with_duration(mut self, duration: f64) -> Self {
        self.duration = duration;
        self
    }

    pub fn with_power(mut self, power: f64) -> Self {
        self.power = power;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.duration >= 0.0) || !self.duration.is_finite() {
            return Err(Error::config(format!(
                "stage duration must be finite and >= 0, got {}",
                self.duration
            )));
        }
        if !(self.power >= 0.0) || !self.power.is_finite() {
            return Err(Error::config(format!("stage power must be >= 0, got {}", self.power)));
        }
        if self.power > 0.0 {
            if !(self.linewidth > 0.0) {
                return Err(Error::config("driven stage needs a positive linewidth"));
            }
            if !(self.beam_radius > 0.0) {
                return Err(Error::config("driven stage needs a positive beam radius"));
            }
            if self.transition.is_none() {
                return Err(Error::config(format!(
                    "{} stage with power needs a transition",
                    self.role.name()
                )));
            }
        }
        Ok(())
    }

    /// Total intensity P / (pi r^2) (W/m^2).
    pub fn intensity(&self) -> f64 {
        if self.power == 0.0 {
            0.0
        } else {
            self.power / (PI * self.beam_radius * self.beam_radius)
        }
    }

    /// Velocity class whose Doppler-shifted resonance matches the laser centre.
    pub fn selected_velocity(&self, species: &Species) -> Option<f64> {
        let t = species.transition(self.transition?);
        Some(self.direction.sign() * SPEED_OF_LIGHT * (self.center / t.omega0 - 1.0))
    }

    /// True when the stage can change populations other than by spontaneous decay.
    pub fn drives(&self) -> bool {
        self.role.is_driven() && self.power > 0.0 && self.transition.is_some()
    }
}

/// Spectral intensity of a stage (W/m^2 per rad/s).
pub fn spectral_intensity(stage: &LaserStage, omega: f64) -> Result<f64> {
    if !(stage.beam_radius > 0.0) {
        return Err(Error::domain("beam radius must be positive"));
    }
    if stage.power == 0.0 {
        return Ok(0.0);
    }
    let detuning = omega - stage.center;
    let shape = match stage.profile {
        SpectralProfile::Lorentzian => lorentzian_unchecked(detuning, stage.linewidth),
        SpectralProfile::Gaussian => {
            let sigma = stage.linewidth / (8.0 * 2f64.ln()).sqrt();
            (-0.5 * (detuning / sigma).powi(2)).exp() / (sigma * (2.0 * PI).sqrt())
        }
    };
    Ok(stage.intensity() * shape)
}

/// Stimulated rate coefficient (1/s) for class `vz`: (B/c) times the overlap of the
/// laser spectrum with the Doppler-shifted natural line, in closed form.
pub fn overlap_rate(stage: &LaserStage, transition: &Transition, vz: f64) -> f64 {
    if stage.power == 0.0 {
        return 0.0;
    }
    let resonance = doppler_shifted_resonance(transition.omega0, vz, stage.direction);
    let detuning = stage.center - resonance;
    let overlap = match stage.profile {
        SpectralProfile::Lorentzian => lorentzian_unchecked(detuning, stage.linewidth + transition.linewidth),
        SpectralProfile::Gaussian => {
            let sigma = stage.linewidth / (8.0 * 2f64.ln()).sqrt();
            voigt(detuning, sigma, 0.5 * transition.linewidth)
        }
    };
    transition.b_coeff / SPEED_OF_LIGHT * stage.intensity() * overlap
}
