//! Spectrum and relaxation fits plus parameter sweeps.

mod lorentzian;
mod optimize;
mod relaxation;
mod spectrum;
mod sweep;

pub use lorentzian::{fit_lorentzian, fit_peak_lorentzian, LorentzianFit};
pub use optimize::FitStatus;
pub use relaxation::{fit_relaxation, RelaxationFit, RelaxationFlag, RelaxationSeries};
pub use spectrum::{fit_spectrum, FitOptions, ParamBounds, SpectrumFitParams, SpectrumFitResult};
pub use sweep::{sweep, write_sweep_csv, SweepPoint};
