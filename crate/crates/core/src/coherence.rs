//! Collective-state overlap under thermal motion and the resulting memory lifetimes.
//!
//! A spin-wave written with wavevector mismatch `k_r` evolves as
//! `<psi(0)|psi(t)> = integral f(vz) exp(i k_r vz t) dvz`, the Fourier transform of
//! the longitudinal velocity distribution `f`. Times are reported at the 1/e point
//! of the squared overlap, optionally multiplied by the storage-state survival
//! `exp(-t / tau_sp)`.

use std::f64::consts::PI;
use std::io::Write;
use std::sync::Arc;

use num_complex::Complex64;

use crate::atomic_data::{maxwell_boltzmann_pdf, Species, ThermalEnsemble};
use crate::constants::trim_digits;
use crate::pumping::{Level, PopulationState, VelocityGrid};
use crate::{Error, Result};

const NORMALISATION_TOLERANCE: f64 = 1e-6;

/// A two-photon ladder memory: signal and control wavelengths plus storage lifetime.
#[derive(Debug, Clone, PartialEq)]
pub struct LadderConfig {
    pub name: String,
    pub species: String,
    /// Signal wavelength (m).
    pub signal_wavelength: f64,
    /// Control wavelength (m).
    pub control_wavelength: f64,
    /// Spontaneous lifetime of the storage state (s).
    pub storage_lifetime: f64,
    /// Operating temperature (K).
    pub temperature: f64,
}

impl LadderConfig {
    pub fn new(
        name: &str,
        signal_wavelength: f64,
        control_wavelength: f64,
        storage_lifetime: f64,
        temperature: f64,
    ) -> Result<Self> {
        if !(signal_wavelength > 0.0) || !(control_wavelength > 0.0) || !(storage_lifetime > 0.0) {
            return Err(Error::domain(
                "ladder wavelengths and storage lifetime must be positive",
            ));
        }
        if !(temperature > 0.0) {
            return Err(Error::domain("ladder temperature must be positive"));
        }
        Ok(LadderConfig {
            name: name.to_string(),
            species: String::new(),
            signal_wavelength,
            control_wavelength,
            storage_lifetime,
            temperature,
        })
    }

    pub fn with_species(mut self, species: &str) -> Self {
        self.species = species.to_string();
        self
    }

    pub fn wavevector_mismatch(&self) -> f64 {
        wavevector_mismatch(self)
    }
}

/// |2 pi / lambda_S - 2 pi / lambda_C| (rad/m).
pub fn wavevector_mismatch(config: &LadderConfig) -> f64 {
    (2.0 * PI / config.signal_wavelength - 2.0 * PI / config.control_wavelength).abs()
}

/// A velocity distribution sampled on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityDistribution {
    grid: Arc<VelocityGrid>,
    density: Vec<f64>,
}

impl VelocityDistribution {
    /// Wraps sampled values as they are; [`overlap`] insists on unit area.
    pub fn new(grid: Arc<VelocityGrid>, density: Vec<f64>) -> Result<Self> {
        if density.len() != grid.len() {
            return Err(Error::config("distribution and grid lengths differ"));
        }
        if density.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
            return Err(Error::domain("velocity distribution must be finite and non-negative"));
        }
        Ok(VelocityDistribution { grid, density })
    }

    /// Rescales arbitrary non-negative samples to unit area on the grid.
    pub fn normalised(grid: Arc<VelocityGrid>, values: Vec<f64>) -> Result<Self> {
        // Clip integrator-level negative noise.
        let values: Vec<f64> = values.into_iter().map(|x| x.max(0.0)).collect();
        let area = grid.integrate(&values);
        if !(area > 0.0) {
            return Err(Error::domain("velocity distribution has no weight"));
        }
        VelocityDistribution::new(grid, values.into_iter().map(|x| x / area).collect())
    }

    /// Maxwell-Boltzmann distribution of `ensemble`.
    pub fn thermal(ensemble: &ThermalEnsemble, species: &Species, grid: Arc<VelocityGrid>) -> Result<Self> {
        let values = grid
            .velocities()
            .iter()
            .map(|&v| maxwell_boltzmann_pdf(v, ensemble, species))
            .collect::<Result<Vec<_>>>()?;
        VelocityDistribution::normalised(grid, values)
    }

    /// The normalised profile of one level of a population state, e.g. f ∝ n4.
    pub fn from_state(state: &PopulationState, level: Level) -> Result<Self> {
        VelocityDistribution::normalised(state.shared_grid(), state.level(level))
    }

    /// All weight in the class nearest `velocity`.
    pub fn delta(grid: Arc<VelocityGrid>, velocity: f64) -> Result<Self> {
        let idx = grid
            .velocities()
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - velocity).abs().total_cmp(&(b.1 - velocity).abs()))
            .map(|(i, _)| i)
            .expect("grids are non-empty");
        let mut values = vec![0.0; grid.len()];
        values[idx] = 1.0;
        VelocityDistribution::normalised(grid, values)
    }

    pub fn grid(&self) -> &VelocityGrid {
        &self.grid
    }

    pub fn density(&self) -> &[f64] {
        &self.density
    }

    pub fn area(&self) -> f64 {
        self.grid.integrate(&self.density)
    }

    pub fn mean(&self) -> f64 {
        let v = self.grid.velocities();
        self.grid
            .weights()
            .iter()
            .zip(&self.density)
            .zip(v)
            .map(|((w, f), v)| w * f * v)
            .sum::<f64>()
            / self.area()
    }

    /// Standard deviation about the mean (m/s).
    pub fn std_dev(&self) -> f64 {
        let mean = self.mean();
        let v = self.grid.velocities();
        let var = self
            .grid
            .weights()
            .iter()
            .zip(&self.density)
            .zip(v)
            .map(|((w, f), v)| w * f * (v - mean).powi(2))
            .sum::<f64>()
            / self.area();
        var.max(0.0).sqrt()
    }

    fn check_normalised(&self) -> Result<f64> {
        let area = self.area();
        if (area - 1.0).abs() > NORMALISATION_TOLERANCE {
            return Err(Error::domain(format!(
                "velocity distribution integrates to {area}, expected 1 within {NORMALISATION_TOLERANCE}"
            )));
        }
        Ok(area)
    }
}

/// Overlap <psi(0)|psi(t)> as a discrete quadrature of the Fourier integral.
pub fn overlap(f: &VelocityDistribution, k_r: f64, t: f64) -> Result<Complex64> {
    let area = f.check_normalised()?;
    Ok(raw_overlap(f, k_r * t) / area)
}

fn raw_overlap(f: &VelocityDistribution, phase_per_velocity: f64) -> Complex64 {
    let (mut re, mut im) = (0.0, 0.0);
    for ((w, d), v) in f.grid.weights().iter().zip(&f.density).zip(f.grid.velocities()) {
        if *d == 0.0 {
            continue;
        }
        let (s, c) = (phase_per_velocity * v).sin_cos();
        re += w * d * c;
        im += w * d * s;
    }
    Complex64::new(re, im)
}

/// A decay time that may be infinite.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Timescale {
    Finite(f64),
    /// The signal never falls to 1/e (k_r = 0 or a single velocity class).
    Unbounded,
}

impl Timescale {
    pub fn finite(self) -> Option<f64> {
        match self {
            Timescale::Finite(t) => Some(t),
            Timescale::Unbounded => None,
        }
    }

    pub fn is_unbounded(self) -> bool {
        matches!(self, Timescale::Unbounded)
    }
}

impl std::fmt::Display for Timescale {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Timescale::Finite(t) => write!(f, "{t:e}"),
            Timescale::Unbounded => write!(f, "unbounded"),
        }
    }
}

const INV_E: f64 = 0.367_879_441_171_442_33;

/// Smallest t > 0 with `signal(t) <= 1/e`, assuming `signal(0) = 1`.
///
/// Brackets geometrically from `scale`, rescans the bracket on a 512-point grid to
/// catch the first crossing, then bisects to machine precision.
fn first_one_over_e<F: Fn(f64) -> f64>(signal: F, scale: f64) -> Option<f64> {
    let mut hi = scale / 64.0;
    let limit = scale * 1e7;
    while signal(hi) > INV_E {
        hi *= 2.0;
        if hi > limit {
            return None;
        }
    }
    let n = 512;
    let mut lo = 0.0;
    for i in 1..=n {
        let t = hi * i as f64 / n as f64;
        if signal(t) <= INV_E {
            hi = t;
            break;
        }
        lo = t;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if signal(mid) > INV_E {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Some(hi)
}

/// 1/e time of |overlap|^2.
pub fn dephasing_time(f: &VelocityDistribution, k_r: f64) -> Result<Timescale> {
    let area = f.check_normalised()?;
    if !(k_r >= 0.0) {
        return Err(Error::domain("k_r must be non-negative"));
    }
    let spread = f.std_dev();
    if k_r == 0.0 || spread == 0.0 {
        return Ok(Timescale::Unbounded);
    }
    let scale = 1.0 / (k_r * spread);
    Ok(first_one_over_e(|t| (raw_overlap(f, k_r * t) / area).norm_sqr(), scale)
        .map(Timescale::Finite)
        .unwrap_or(Timescale::Unbounded))
}

/// 1/e time of the memory efficiency |overlap|^2 exp(-t / tau_sp).
pub fn memory_lifetime(f: &VelocityDistribution, config: &LadderConfig) -> Result<f64> {
    let area = f.check_normalised()?;
    let k_r = config.wavevector_mismatch();
    let tau = config.storage_lifetime;
    let spread = f.std_dev();
    let scale = if k_r * spread > 0.0 {
        (1.0 / (k_r * spread)).min(tau)
    } else {
        tau
    };
    first_one_over_e(
        |t| (raw_overlap(f, k_r * t) / area).norm_sqr() * (-t / tau).exp(),
        scale,
    )
    .ok_or_else(|| Error::Numeric("memory efficiency never fell to 1/e".into()))
}

/// Ratio of memory lifetimes with and without velocity selection.
pub fn enhancement_factor(
    selected: &VelocityDistribution,
    thermal: &VelocityDistribution,
    config: &LadderConfig,
) -> Result<f64> {
    Ok(memory_lifetime(selected, config)? / memory_lifetime(thermal, config)?)
}

/// Sampled squared overlap together with the extracted timescales.
#[derive(Debug, Clone, PartialEq)]
pub struct CoherenceDecay {
    pub times: Vec<f64>,
    pub overlap_sq: Vec<f64>,
    pub k_r: f64,
    pub storage_lifetime: f64,
    /// k_r times the distribution's standard deviation (1/s).
    pub dephasing_rate: f64,
    pub dephasing_time: Timescale,
    pub memory_lifetime: f64,
}

impl CoherenceDecay {
    pub fn compute(f: &VelocityDistribution, config: &LadderConfig, times: &[f64]) -> Result<Self> {
        let k_r = config.wavevector_mismatch();
        let overlap_sq = times
            .iter()
            .map(|&t| overlap(f, k_r, t).map(|z| z.norm_sqr().min(1.0)))
            .collect::<Result<Vec<_>>>()?;
        Ok(CoherenceDecay {
            times: times.to_vec(),
            overlap_sq,
            k_r,
            storage_lifetime: config.storage_lifetime,
            dephasing_rate: k_r * f.std_dev(),
            dephasing_time: dephasing_time(f, k_r)?,
            memory_lifetime: memory_lifetime(f, config)?,
        })
    }

    /// CSV with a commented metadata header and columns `time_ns,overlap_sq`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "# k_r_rad_per_m = {:e}", self.k_r)?;
        writeln!(
            w,
            "# storage_lifetime_ns = {}",
            trim_digits(self.storage_lifetime * 1e9)
        )?;
        writeln!(w, "# dephasing_rate_per_s = {:e}", self.dephasing_rate)?;
        match self.dephasing_time {
            Timescale::Finite(t) => writeln!(w, "# dephasing_time_ns = {}", t * 1e9)?,
            Timescale::Unbounded => writeln!(w, "# dephasing_time_ns = unbounded")?,
        }
        writeln!(w, "# memory_lifetime_ns = {}", self.memory_lifetime * 1e9)?;
        writeln!(w, "time_ns,overlap_sq")?;
        for (t, o) in self.times.iter().zip(&self.overlap_sq) {
            writeln!(w, "{},{:e}", t * 1e9, o)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::atomic_data::Species;
    use proptest::prelude::*;

    fn cs_ladder() -> LadderConfig {
        Species::cesium().ladder("6D5/2").unwrap().clone()
    }

    fn gaussian(sigma: f64, n: usize) -> VelocityDistribution {
        let grid = Arc::new(VelocityGrid::uniform(-10.0 * sigma, 10.0 * sigma, n).unwrap());
        let values = grid
            .velocities()
            .iter()
            .map(|v| (-0.5 * (v / sigma).powi(2)).exp())
            .collect();
        VelocityDistribution::normalised(grid, values).unwrap()
    }

    #[test]
    fn wavevector_examples() {
        let l = |s: f64, c: f64| LadderConfig::new("x", s * 1e-9, c * 1e-9, 1e-7, 300.0).unwrap();
        assert_eq!(wavevector_mismatch(&l(852.0, 852.0)), 0.0);
        // 2 pi (1/852 nm - 1/917 nm) and 2 pi (1/780 nm - 1/1529 nm).
        assert!((wavevector_mismatch(&l(852.0, 917.0)) / 522_738.268 - 1.0).abs() < 1e-8);
        assert!((wavevector_mismatch(&l(780.0, 1529.0)) / 3_946_022.870 - 1.0).abs() < 1e-8);
        assert!(LadderConfig::new("x", 0.0, 1.0, 1.0, 300.0).is_err());
    }

    #[test]
    fn overlap_at_zero_time_is_one() {
        let f = gaussian(136.0, 2001);
        let z = overlap(&f, 5e5, 0.0).unwrap();
        assert!((z.re - 1.0).abs() < 1e-15 && z.im == 0.0);
    }

    #[test]
    fn gaussian_overlap_matches_analytic_transform() {
        let sigma = 136.1;
        let k = 5.2e5;
        let f = gaussian(sigma, 4001);
        for i in 0..=50 {
            let t = i as f64 * 0.1 / (k * sigma);
            let exact = (-0.5 * (k * sigma * t).powi(2)).exp();
            let got = overlap(&f, k, t).unwrap().norm();
            assert!((got - exact).abs() <= 1e-6 * exact, "t = {t}");
        }
    }

    #[test]
    fn delta_distribution_never_dephases() {
        let grid = Arc::new(VelocityGrid::uniform(-500.0, 500.0, 101).unwrap());
        let f = VelocityDistribution::delta(grid, 30.0).unwrap();
        for t in [0.0, 1e-9, 1e-6, 1e-3] {
            assert!((overlap(&f, 5e5, t).unwrap().norm() - 1.0).abs() < 1e-12);
        }
        assert!(dephasing_time(&f, 5e5).unwrap().is_unbounded());
        let cfg = cs_ladder();
        let life = memory_lifetime(&f, &cfg).unwrap();
        assert!((life / cfg.storage_lifetime - 1.0).abs() < 1e-12);
    }

    #[test]
    fn unnormalised_distribution_rejected() {
        let grid = Arc::new(VelocityGrid::uniform(-1.0, 1.0, 11).unwrap());
        let f = VelocityDistribution::new(grid, vec![1.0; 11]).unwrap();
        assert!((f.area() - 2.0).abs() < 1e-12);
        assert!(matches!(overlap(&f, 1.0, 1.0), Err(Error::Domain(_))));
        assert!(dephasing_time(&f, 1.0).is_err());
    }

    #[test]
    fn zero_wavevector_is_unbounded() {
        let f = gaussian(136.0, 1001);
        assert_eq!(dephasing_time(&f, 0.0).unwrap(), Timescale::Unbounded);
    }

    #[test]
    fn gaussian_dephasing_time_is_inverse_k_sigma() {
        let sigma = 136.1;
        let k = 5.23e5;
        let tau = dephasing_time(&gaussian(sigma, 2001), k).unwrap().finite().unwrap();
        assert!((tau * k * sigma - 1.0).abs() < 1e-4);
        // Ten times narrower dephases ten times slower.
        let narrow = dephasing_time(&gaussian(sigma / 10.0, 2001), k)
            .unwrap()
            .finite()
            .unwrap();
        assert!((narrow / tau - 10.0).abs() < 1e-3);
    }

    #[test]
    fn lifetime_limits() {
        let f = gaussian(136.0, 2001);
        let mut cfg = cs_ladder();
        let k = cfg.wavevector_mismatch();
        cfg.storage_lifetime = 1e3;
        let tau_d = dephasing_time(&f, k).unwrap().finite().unwrap();
        assert!((memory_lifetime(&f, &cfg).unwrap() / tau_d - 1.0).abs() < 1e-6);
        cfg.storage_lifetime = 1e-15;
        assert!((memory_lifetime(&f, &cfg).unwrap() / 1e-15 - 1.0).abs() < 1e-3);
        assert!((enhancement_factor(&f, &f, &cs_ladder()).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn decay_record_and_csv() {
        let f = gaussian(136.0, 1001);
        let cfg = cs_ladder();
        let times: Vec<f64> = (0..20).map(|i| i as f64 * 2e-9).collect();
        let d = CoherenceDecay::compute(&f, &cfg, &times).unwrap();
        assert_eq!(d.overlap_sq[0], 1.0);
        assert!(d.overlap_sq.windows(2).all(|w| w[1] <= w[0]));
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.contains("time_ns,overlap_sq"));
        assert!(text.contains("# memory_lifetime_ns"));
    }

    proptest! {
        #[test]
        fn overlap_bounds_and_symmetry(t in -1e-7f64..1e-7, mean in -200.0f64..200.0, scale in 0.1f64..1e3) {
            let grid = Arc::new(VelocityGrid::uniform(-800.0, 800.0, 801).unwrap());
            let raw: Vec<f64> = grid.velocities().iter().map(|v| (-0.5 * ((v - mean) / 60.0).powi(2)).exp() + 0.1 * (-(v / 200.0).powi(2)).exp()).collect();
            let f = VelocityDistribution::normalised(grid.clone(), raw.clone()).unwrap();
            let g = VelocityDistribution::normalised(grid, raw.iter().map(|x| x * scale).collect()).unwrap();
            let k = 5.2e5;
            let z = overlap(&f, k, t).unwrap();
            prop_assert!(z.norm() <= 1.0 + 1e-12);
            let zm = overlap(&f, k, -t).unwrap();
            prop_assert!((zm - z.conj()).norm() < 1e-12);
            prop_assert!((overlap(&g, k, t).unwrap() - z).norm() < 1e-12);
        }

        #[test]
        fn dephasing_time_times_k_is_invariant(k in 1e4f64..5e6) {
            let f = gaussian(100.0, 1001);
            let tau = dephasing_time(&f, k).unwrap().finite().unwrap();
            prop_assert!((tau * k * 100.0 - 1.0).abs() < 1e-4);
        }
    }
}
