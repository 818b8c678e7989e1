//! Atomic constants, species tables, thermal statistics and lineshapes.

mod geometry;
mod lineshape;
mod species;
mod thermal;

pub use geometry::{drift_estimates, BeamGeometry, DriftEstimate};
pub use lineshape::{doppler_shifted_resonance, lorentzian, lorentzian_unchecked, Direction};
pub use species::{
    ExcitedLevel, HyperfineLevel, Line, Manifold, PumpingTransitions, Species, Transition, TransitionId, VapourPressure,
};
pub use thermal::{maxwell_boltzmann_pdf, velocity_std, ThermalEnsemble};
