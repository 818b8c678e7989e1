//! Pump-back power x duration sweeps of the full forward model.

use std::io::Write;

use rayon::prelude::*;

use crate::coherence::{dephasing_time, memory_lifetime, LadderConfig, Timescale};
use crate::constants::trim_digits;
use crate::pipeline::{Experiment, PumpBack};
use crate::Result;

/// Observables at one sweep grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    /// W.
    pub power: f64,
    /// s.
    pub duration: f64,
    pub peak_od: f64,
    pub peak_detuning_mhz: f64,
    /// `None` if the half-maximum crossings fall off the probe grid.
    pub fwhm_mhz: Option<f64>,
    pub dephasing_time: Timescale,
    /// s.
    pub memory_lifetime: f64,
}

/// Runs the pipeline for every (power, duration) pair with the given laser
/// linewidth (rad/s) and selected class (m/s). Rows are ordered power-major.
pub fn sweep(
    experiment: &Experiment,
    powers: &[f64],
    durations: &[f64],
    linewidth: f64,
    velocity: f64,
    ladder: &LadderConfig,
) -> Result<Vec<SweepPoint>> {
    // Shared by every grid point; computing it first avoids racing to fill it.
    experiment.pumped_state()?;
    let k_r = ladder.wavevector_mismatch();
    let grid: Vec<(f64, f64)> = powers
        .iter()
        .flat_map(|&p| durations.iter().map(move |&d| (p, d)))
        .collect();
    grid.par_iter()
        .map(|&(power, duration)| {
            let pb = PumpBack::new(power, linewidth, velocity, duration);
            let spectrum = experiment.spectrum(&pb)?;
            let f = experiment.memory_distribution(&pb)?;
            let (peak_od, peak_detuning_mhz) = spectrum.peak();
            Ok(SweepPoint {
                power,
                duration,
                peak_od,
                peak_detuning_mhz,
                fwhm_mhz: spectrum.peak_fwhm_mhz(),
                dephasing_time: dephasing_time(&f, k_r)?,
                memory_lifetime: memory_lifetime(&f, ladder)?,
            })
        })
        .collect()
}

/// CSV with columns
/// `power_mW,duration_us,peak_OD,peak_detuning_MHz,FWHM_MHz,dephasing_time_ns,memory_lifetime_ns`.
/// Missing widths are empty; an unbounded dephasing time is written as `inf`.
pub fn write_sweep_csv<W: Write>(points: &[SweepPoint], mut w: W) -> Result<()> {
    writeln!(
        w,
        "power_mW,duration_us,peak_OD,peak_detuning_MHz,FWHM_MHz,dephasing_time_ns,memory_lifetime_ns"
    )?;
    for p in points {
        let fwhm = p.fwhm_mhz.map(|v| v.to_string()).unwrap_or_default();
        let tau = p
            .dephasing_time
            .finite()
            .map(|t| (t * 1e9).to_string())
            .unwrap_or_else(|| "inf".into());
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            trim_digits(p.power * 1e3),
            trim_digits(p.duration * 1e6),
            p.peak_od,
            p.peak_detuning_mhz,
            fwhm,
            tau,
            p.memory_lifetime * 1e9
        )?;
    }
    Ok(())
}
