//! Velocity-class-resolved pump / pump-back rate equations.
//!
//! Each velocity class carries four population densities: the auxiliary ground
//! level (`n3` for Cs), the memory ground level (`n4`), the excited level reached by
//! the pump (`ne1`) and the excited level reached by the pump-back (`ne2`). A stage
//! drives one ground level to one of the two excited levels with a stimulated rate
//! that depends on the class's Doppler shift; both excited levels always decay
//! spontaneously into both ground levels. Classes are uncoupled.

mod grid;
pub mod integrator;
mod laser;
mod rates;
mod sequence;
mod state;

pub use grid::VelocityGrid;
pub use laser::{overlap_rate, spectral_intensity, LaserStage, SpectralProfile, StageRole};
pub use rates::{EvolveOptions, Method, RateModel};
pub use sequence::{PulseSequence, Snapshot, StageFile, Trajectory};
pub use state::{thermal_state, Level, PopulationState, Populations};
