//! Weak-probe absorption: cross sections, optical-depth spectra and their CSV form.

use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;

use crate::atomic_data::{
    doppler_shifted_resonance, lorentzian_unchecked, Direction, Species, ThermalEnsemble, Transition, TransitionId,
};
use crate::constants::{mhz_to_rad, rad_to_mhz, HBAR, SPEED_OF_LIGHT};
use crate::pumping::{thermal_state, Level, PopulationState, VelocityGrid};
use crate::{Error, Result};

/// Transitions further than this outside the probe grid are a configuration error.
const GRID_MARGIN_MHZ: f64 = 3000.0;

/// Absorption cross section (m^2) of `transition` for an atom at `vz`.
pub fn cross_section(transition: &Transition, omega: f64, vz: f64, direction: Direction) -> f64 {
    let resonance = doppler_shifted_resonance(transition.omega0, vz, direction);
    transition.b_coeff * HBAR * omega / SPEED_OF_LIGHT * lorentzian_unchecked(omega - resonance, transition.linewidth)
}

/// Probe frequencies together with the transition used as the detuning origin.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeGrid {
    reference: TransitionId,
    reference_omega: f64,
    omegas: Vec<f64>,
}

impl ProbeGrid {
    /// Grid from detunings (MHz) relative to the rest resonance of `reference`.
    pub fn from_detunings(species: &Species, reference: TransitionId, detunings_mhz: &[f64]) -> Result<Self> {
        let reference_omega = species.transition(reference).omega0;
        let omegas: Vec<f64> = detunings_mhz.iter().map(|&d| reference_omega + mhz_to_rad(d)).collect();
        if omegas.is_empty() {
            return Err(Error::config("probe grid is empty"));
        }
        if omegas.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::config("probe grid must be strictly increasing"));
        }
        Ok(ProbeGrid {
            reference,
            reference_omega,
            omegas,
        })
    }

    pub fn uniform(species: &Species, reference: TransitionId, min_mhz: f64, max_mhz: f64, n: usize) -> Result<Self> {
        if n < 2 || !(max_mhz > min_mhz) {
            return Err(Error::config("probe grid needs n >= 2 and max > min"));
        }
        let step = (max_mhz - min_mhz) / (n - 1) as f64;
        let d: Vec<f64> = (0..n).map(|i| min_mhz + i as f64 * step).collect();
        ProbeGrid::from_detunings(species, reference, &d)
    }

    /// 1000 points over -600..+800 MHz from the species' probe reference.
    pub fn default_for(species: &Species) -> Result<Self> {
        ProbeGrid::uniform(species, species.defaults.probe_reference, -600.0, 800.0, 1000)
    }

    pub fn reference(&self) -> TransitionId {
        self.reference
    }

    pub fn reference_omega(&self) -> f64 {
        self.reference_omega
    }

    pub fn omegas(&self) -> &[f64] {
        &self.omegas
    }

    pub fn detunings_mhz(&self) -> Vec<f64> {
        self.omegas
            .iter()
            .map(|w| rad_to_mhz(w - self.reference_omega))
            .collect()
    }

    pub fn len(&self) -> usize {
        self.omegas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.omegas.is_empty()
    }
}

/// Which transitions the probe addresses and how it propagates.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeSettings {
    pub transitions: Vec<TransitionId>,
    pub direction: Direction,
}

impl ProbeSettings {
    /// All transitions out of the memory level on the probe-reference line,
    /// counter-propagating with respect to the pump beams.
    pub fn default_for(species: &Species) -> Self {
        let line = species.transition(species.defaults.probe_reference).line;
        ProbeSettings {
            transitions: species.transitions_from(line, species.memory_level),
            direction: Direction::Backward,
        }
    }

    pub fn only(transitions: Vec<TransitionId>, direction: Direction) -> Self {
        ProbeSettings { transitions, direction }
    }
}

/// Descriptive fields carried alongside a spectrum.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SpectrumMeta {
    /// Cell temperature (K) when known.
    pub temperature: Option<f64>,
    /// Label of the reference transition, e.g. "D2:4-5".
    pub reference: String,
    pub direction: Option<Direction>,
    pub sequence_hash: Option<String>,
}

/// Optical depth sampled on a strictly increasing probe grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub grid: ProbeGrid,
    pub od: Vec<f64>,
    pub od_uncertainty: Option<Vec<f64>>,
    pub meta: SpectrumMeta,
}

impl Spectrum {
    pub fn new(grid: ProbeGrid, od: Vec<f64>, meta: SpectrumMeta) -> Result<Self> {
        if od.len() != grid.len() {
            return Err(Error::config("spectrum and grid lengths differ"));
        }
        Ok(Spectrum {
            grid,
            od,
            od_uncertainty: None,
            meta,
        })
    }

    pub fn omegas(&self) -> &[f64] {
        self.grid.omegas()
    }

    pub fn detunings_mhz(&self) -> Vec<f64> {
        self.grid.detunings_mhz()
    }

    pub fn transmission(&self) -> Vec<f64> {
        self.od.iter().map(|d| (-d).exp()).collect()
    }

    /// Largest OD and its detuning (MHz).
    pub fn peak(&self) -> (f64, f64) {
        let (i, od) = self.od.iter().enumerate().fold(
            (0, f64::NEG_INFINITY),
            |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc },
        );
        (od, rad_to_mhz(self.grid.omegas[i] - self.grid.reference_omega))
    }

    /// Full width at half maximum (MHz) of the highest feature, by linear
    /// interpolation of the half-maximum crossings. `None` if a crossing lies off-grid.
    pub fn peak_fwhm_mhz(&self) -> Option<f64> {
        let (i, peak) = self.od.iter().enumerate().fold(
            (0, f64::NEG_INFINITY),
            |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc },
        );
        if !(peak > 0.0) {
            return None;
        }
        let half = 0.5 * peak;
        let d = self.detunings_mhz();
        let cross = |a: usize, b: usize| d[a] + (half - self.od[a]) * (d[b] - d[a]) / (self.od[b] - self.od[a]);
        let left = (1..=i)
            .rev()
            .find(|&j| self.od[j - 1] < half)
            .map(|j| cross(j - 1, j))?;
        let right = (i..self.od.len() - 1)
            .find(|&j| self.od[j + 1] < half)
            .map(|j| cross(j, j + 1))?;
        Some(right - left)
    }

    /// Writes `#`-prefixed metadata followed by `detuning_MHz,OD[,OD_uncertainty]`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        if let Some(t) = self.meta.temperature {
            writeln!(w, "# temperature_K = {t}")?;
        }
        writeln!(w, "# reference = {}", self.meta.reference)?;
        if let Some(d) = self.meta.direction {
            writeln!(w, "# probe_sign = {}", i8::from(d))?;
        }
        if let Some(h) = &self.meta.sequence_hash {
            writeln!(w, "# sequence_hash = {h}")?;
        }
        let det = self.detunings_mhz();
        match &self.od_uncertainty {
            Some(u) => {
                writeln!(w, "detuning_MHz,OD,OD_uncertainty")?;
                for ((d, od), u) in det.iter().zip(&self.od).zip(u) {
                    writeln!(w, "{d},{od:e},{u:e}")?;
                }
            }
            None => {
                writeln!(w, "detuning_MHz,OD")?;
                for (d, od) in det.iter().zip(&self.od) {
                    writeln!(w, "{d},{od:e}")?;
                }
            }
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory cannot fail");
        String::from_utf8(buf).expect("CSV output is UTF-8")
    }

    pub fn write_csv_file(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_csv(f)
    }

    /// Parses the CSV produced by [`Spectrum::write_csv`]. Without a `reference`
    /// header the species' default probe reference is assumed.
    pub fn from_csv_str(text: &str, species: &Species) -> Result<Self> {
        let mut meta = SpectrumMeta::default();
        let mut reference = species.defaults.probe_reference;
        let mut header: Option<bool> = None;
        let (mut det, mut od, mut unc) = (Vec::new(), Vec::new(), Vec::new());
        for (idx, raw) in text.lines().enumerate() {
            let lineno = Some(idx + 1);
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                let Some((key, value)) = rest.split_once('=') else {
                    continue;
                };
                let value = value.trim();
                let bad = |what: &str| Error::ingestion(lineno, format!("invalid {what} '{value}'"));
                match key.trim() {
                    "temperature_K" => meta.temperature = Some(value.parse().map_err(|_| bad("temperature"))?),
                    "reference" => {
                        reference = species
                            .parse_transition(value)
                            .map_err(|e| Error::ingestion(lineno, e.to_string()))?;
                    }
                    "probe_sign" => {
                        let s: i8 = value.parse().map_err(|_| bad("probe sign"))?;
                        meta.direction = Some(Direction::try_from(s).map_err(|_| bad("probe sign"))?);
                    }
                    "sequence_hash" => meta.sequence_hash = Some(value.to_string()),
                    _ => {}
                }
                continue;
            }
            let cols: Vec<&str> = line.split(',').map(str::trim).collect();
            let Some(has_unc) = header else {
                match cols.as_slice() {
                    ["detuning_MHz", "OD"] => header = Some(false),
                    ["detuning_MHz", "OD", "OD_uncertainty"] => header = Some(true),
                    _ => {
                        return Err(Error::ingestion(
                            lineno,
                            "expected header 'detuning_MHz,OD[,OD_uncertainty]'",
                        ))
                    }
                }
                continue;
            };
            let expected = if has_unc { 3 } else { 2 };
            if cols.len() != expected {
                return Err(Error::ingestion(
                    lineno,
                    format!("expected {expected} columns, found {}", cols.len()),
                ));
            }
            let num = |s: &str, name: &str| -> Result<f64> {
                let v: f64 = s
                    .parse()
                    .map_err(|_| Error::ingestion(lineno, format!("{name} '{s}' is not a number")))?;
                if !v.is_finite() {
                    return Err(Error::ingestion(lineno, format!("{name} is not finite")));
                }
                Ok(v)
            };
            let d = num(cols[0], "detuning")?;
            if det.last().is_some_and(|&last| d <= last) {
                return Err(Error::ingestion(lineno, "detunings must be strictly increasing"));
            }
            det.push(d);
            od.push(num(cols[1], "OD")?);
            if has_unc {
                let u = num(cols[2], "OD uncertainty")?;
                if !(u > 0.0) {
                    return Err(Error::ingestion(lineno, "OD uncertainty must be positive"));
                }
                unc.push(u);
            }
        }
        if header.is_none() || det.is_empty() {
            return Err(Error::ingestion(None, "no spectrum data found"));
        }
        meta.reference = species.transition_label(species.transition(reference));
        let grid = ProbeGrid::from_detunings(species, reference, &det)?;
        let mut spectrum = Spectrum::new(grid, od, meta)?;
        if header == Some(true) {
            spectrum.od_uncertainty = Some(unc);
        }
        Ok(spectrum)
    }

    pub fn from_csv_file(path: impl AsRef<Path>, species: &Species) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Spectrum::from_csv_str(&text, species)
    }
}

fn check_grid_covers(species: &Species, grid: &ProbeGrid, settings: &ProbeSettings) -> Result<()> {
    if settings.transitions.is_empty() {
        return Err(Error::config("no probe transitions selected"));
    }
    let lo = grid.omegas[0] - mhz_to_rad(GRID_MARGIN_MHZ);
    let hi = grid.omegas[grid.len() - 1] + mhz_to_rad(GRID_MARGIN_MHZ);
    for &id in &settings.transitions {
        let Some(t) = species.transitions.get(id.0) else {
            return Err(Error::config(format!("unknown transition index {}", id.0)));
        };
        if t.lower != species.memory_level && t.lower != species.aux_level {
            return Err(Error::config(
                "probe transition does not start from a modelled ground level",
            ));
        }
        if t.omega0 < lo || t.omega0 > hi {
            return Err(Error::config(format!(
                "probe grid does not cover {}",
                species.transition_label(t)
            )));
        }
    }
    Ok(())
}

/// OD(omega) = L sum_transitions sum_i w_i n_F(v_i) sigma(omega, v_i).
pub fn optical_depth(
    state: &PopulationState,
    ensemble: &ThermalEnsemble,
    species: &Species,
    grid: &ProbeGrid,
    settings: &ProbeSettings,
) -> Result<Spectrum> {
    check_grid_covers(species, grid, settings)?;
    let vgrid = state.grid();
    let sign = settings.direction;

    // Per transition: the populated classes as (weighted density, resonance).
    struct Terms {
        coeff: f64,
        linewidth: f64,
        classes: Vec<(f64, f64)>,
    }
    let terms: Vec<Terms> = settings
        .transitions
        .iter()
        .map(|&id| {
            let t = species.transition(id);
            let level = if t.lower == species.memory_level {
                Level::Memory
            } else {
                Level::Aux
            };
            let classes = vgrid
                .velocities()
                .iter()
                .zip(vgrid.weights())
                .zip(state.classes())
                .filter_map(|((&v, &w), n)| {
                    let wn = w * n[level as usize];
                    (wn != 0.0).then(|| (wn, doppler_shifted_resonance(t.omega0, v, sign)))
                })
                .collect();
            Terms {
                coeff: t.b_coeff * HBAR / SPEED_OF_LIGHT,
                linewidth: t.linewidth,
                classes,
            }
        })
        .collect();

    let od: Vec<f64> = grid
        .omegas
        .par_iter()
        .map(|&omega| {
            let mut total = 0.0;
            for term in &terms {
                let s: f64 = term
                    .classes
                    .iter()
                    .map(|&(wn, res)| wn * lorentzian_unchecked(omega - res, term.linewidth))
                    .sum();
                total += term.coeff * omega * s;
            }
            ensemble.cell_length * total
        })
        .collect();
    if od.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numeric("optical depth is not finite".into()));
    }
    let meta = SpectrumMeta {
        temperature: Some(ensemble.temperature),
        reference: species.transition_label(species.transition(grid.reference)),
        direction: Some(settings.direction),
        sequence_hash: None,
    };
    Spectrum::new(grid.clone(), od, meta)
}

/// Spectrum of the thermal-equilibrium state on `vgrid`.
pub fn unpumped_spectrum(
    ensemble: &ThermalEnsemble,
    species: &Species,
    vgrid: Arc<VelocityGrid>,
    grid: &ProbeGrid,
    settings: &ProbeSettings,
) -> Result<Spectrum> {
    let state = thermal_state(ensemble, species, vgrid)?;
    optical_depth(&state, ensemble, species, grid, settings)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::atomic_data::velocity_std;
    use crate::constants::wavelength;
    use proptest::prelude::*;
    use rustfft::{num_complex::Complex, FftPlanner};
    use std::f64::consts::PI;

    fn cs() -> Species {
        Species::cesium()
    }

    fn room() -> ThermalEnsemble {
        ThermalEnsemble::new(296.15, 1e16, 0.025).unwrap()
    }

    fn d2_45(sp: &Species) -> TransitionId {
        sp.find_transition("D2", 4, 5).unwrap()
    }

    #[test]
    fn peak_cross_section_matches_closed_form() {
        let sp = cs();
        let t = sp.transition(d2_45(&sp));
        let (g, gp) = sp.degeneracies(t);
        let b = t.a_coeff / t.linewidth;
        let lambda = wavelength(t.omega0);
        let expected = gp / g * b * lambda * lambda / (2.0 * PI);
        let sigma = cross_section(t, t.omega0, 0.0, Direction::Forward);
        assert!((sigma / expected - 1.0).abs() < 1e-3, "{sigma} vs {expected}");
        // Isotropic value for the cycling line, about 1.4e-13 m^2.
        assert!(sigma > 1.3e-13 && sigma < 1.5e-13);
    }

    #[test]
    fn cross_section_half_width_and_tails() {
        let sp = cs();
        let t = sp.transition(d2_45(&sp));
        let peak = cross_section(t, t.omega0, 0.0, Direction::Forward);
        // Choose vz so the Doppler shift equals half the natural width.
        let vz = 0.5 * t.linewidth / t.omega0 * SPEED_OF_LIGHT;
        let half = cross_section(t, t.omega0, vz, Direction::Forward);
        assert!((half / peak - 0.5).abs() < 1e-6);
        let far = cross_section(t, t.omega0 + 1e6 * t.linewidth, 0.0, Direction::Forward);
        assert!(far / peak < 1e-11);
    }

    #[test]
    fn empty_state_gives_zero_od() {
        let sp = cs();
        let e = room();
        let vg = Arc::new(VelocityGrid::default_for(&e, &sp).unwrap());
        let state = PopulationState::new(vg.clone(), vec![[0.0; 4]; vg.len()], 0.0).unwrap();
        let s = optical_depth(
            &state,
            &e,
            &sp,
            &ProbeGrid::default_for(&sp).unwrap(),
            &ProbeSettings::default_for(&sp),
        )
        .unwrap();
        assert!(s.od.iter().all(|&x| x == 0.0));
        assert!(s.transmission().iter().all(|&x| x == 1.0));
    }

    #[test]
    fn doppler_width_of_single_component() {
        let sp = cs();
        let e = room();
        let vg = Arc::new(VelocityGrid::default_for(&e, &sp).unwrap());
        let grid = ProbeGrid::uniform(&sp, d2_45(&sp), -700.0, 700.0, 2801).unwrap();
        let settings = ProbeSettings::only(vec![d2_45(&sp)], Direction::Backward);
        let s = unpumped_spectrum(&e, &sp, vg, &grid, &settings).unwrap();
        let sigma_v = velocity_std(e.temperature, sp.mass);
        let lambda = wavelength(sp.transition(d2_45(&sp)).omega0);
        let analytic = 2.0 * (2.0 * 2f64.ln()).sqrt() * sigma_v / lambda / 1e6;
        assert!((analytic - 376.0).abs() < 1.0);
        let fwhm = s.peak_fwhm_mhz().unwrap();
        assert!((fwhm / analytic - 1.0).abs() < 0.05, "{fwhm} vs {analytic}");
    }

    #[test]
    fn delta_class_shifts_all_three_components() {
        let sp = cs();
        let e = room();
        let vg = Arc::new(VelocityGrid::single(-100.0));
        let state = PopulationState::new(vg, vec![[0.0, 1e15, 0.0, 0.0]], 0.0).unwrap();
        let grid = ProbeGrid::uniform(&sp, d2_45(&sp), -600.0, 800.0, 14001).unwrap();
        let s = optical_depth(&state, &e, &sp, &grid, &ProbeSettings::default_for(&sp)).unwrap();
        let d = s.detunings_mhz();
        // Local maxima of the spectrum.
        let peaks: Vec<f64> = (1..d.len() - 1)
            .filter(|&i| s.od[i] > s.od[i - 1] && s.od[i] >= s.od[i + 1])
            .map(|i| d[i])
            .collect();
        assert_eq!(peaks.len(), 3);
        let reference = sp.transition(d2_45(&sp)).omega0;
        for (peak, f_up) in peaks.iter().zip([3, 4, 5]) {
            let t = sp.transition(sp.find_transition("D2", 4, f_up).unwrap());
            let expected = rad_to_mhz(t.omega0 * (1.0 + 100.0 / SPEED_OF_LIGHT) - reference);
            assert!((peak - expected).abs() <= 0.1, "{peak} vs {expected}");
        }
        let shift = rad_to_mhz(reference * 100.0 / SPEED_OF_LIGHT);
        assert!((shift - 117.3).abs() < 0.1);
    }

    #[test]
    fn linear_in_density_and_length() {
        let sp = cs();
        let e = room();
        let vg = Arc::new(VelocityGrid::thermal(&e, &sp, 5.0, 301).unwrap());
        let grid = ProbeGrid::uniform(&sp, d2_45(&sp), -600.0, 800.0, 200).unwrap();
        let p = ProbeSettings::default_for(&sp);
        let a = unpumped_spectrum(&e, &sp, vg.clone(), &grid, &p).unwrap();
        let e2 = ThermalEnsemble::new(e.temperature, 3.0 * e.density, 2.0 * e.cell_length).unwrap();
        let b = unpumped_spectrum(&e2, &sp, vg, &grid, &p).unwrap();
        for (x, y) in a.od.iter().zip(&b.od) {
            assert!((y / x - 6.0).abs() < 1e-12);
        }
    }

    #[test]
    fn doubling_temperature_lowers_peak_by_root_two() {
        let sp = cs();
        let t1 = ThermalEnsemble::new(296.15, 1e16, 0.025).unwrap();
        let t2 = ThermalEnsemble::new(592.3, 1e16, 0.025).unwrap();
        let grid = ProbeGrid::uniform(&sp, d2_45(&sp), -1500.0, 1500.0, 3001).unwrap();
        let p = ProbeSettings::only(vec![d2_45(&sp)], Direction::Backward);
        let peak = |e: &ThermalEnsemble| {
            let vg = Arc::new(VelocityGrid::default_for(e, &sp).unwrap());
            unpumped_spectrum(e, &sp, vg, &grid, &p).unwrap().peak().0
        };
        let ratio = peak(&t1) / peak(&t2);
        assert!((ratio / 2f64.sqrt() - 1.0).abs() < 0.01, "{ratio}");
    }

    #[test]
    fn thermal_spectrum_matches_fft_convolution() {
        // Single component, uniform frequency grid equal to the velocity grid mapped
        // through the Doppler shift, so the spectrum is a discrete convolution.
        let sp = cs();
        let e = room();
        let id = d2_45(&sp);
        let t = sp.transition(id).clone();
        let n = 4096;
        let dv = 0.25;
        let v0 = -(n as f64 / 2.0) * dv;
        let velocities: Vec<f64> = (0..n).map(|i| v0 + i as f64 * dv).collect();
        let vg = Arc::new(VelocityGrid::new(velocities.clone(), vec![dv; n]).unwrap());
        let state = thermal_state(&e, &sp, vg).unwrap();
        // Forward probe: resonance = omega0 (1 + v/c), so omega_k = omega0 (1 + v_k / c).
        let omegas: Vec<f64> = velocities
            .iter()
            .map(|v| t.omega0 * (1.0 + v / SPEED_OF_LIGHT))
            .collect();
        let det: Vec<f64> = omegas.iter().map(|w| rad_to_mhz(w - t.omega0)).collect();
        let grid = ProbeGrid::from_detunings(&sp, id, &det).unwrap();
        let s = optical_depth(
            &state,
            &e,
            &sp,
            &grid,
            &ProbeSettings::only(vec![id], Direction::Forward),
        )
        .unwrap();

        let dw = t.omega0 * dv / SPEED_OF_LIGHT;
        let n4 = state.n4();
        let pad = 2 * n;
        let mut a: Vec<Complex<f64>> = (0..pad)
            .map(|i| Complex::new(if i < n { n4[i] * dv } else { 0.0 }, 0.0))
            .collect();
        // Kernel indexed by frequency offset k - j, wrapped.
        let mut k: Vec<Complex<f64>> = (0..pad)
            .map(|i| {
                let off = if i < n { i as f64 } else { i as f64 - pad as f64 };
                Complex::new(lorentzian_unchecked(off * dw, t.linewidth), 0.0)
            })
            .collect();
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(pad);
        let inv = planner.plan_fft_inverse(pad);
        fwd.process(&mut a);
        fwd.process(&mut k);
        let mut c: Vec<Complex<f64>> = a.iter().zip(&k).map(|(x, y)| x * y).collect();
        inv.process(&mut c);
        let peak = s.peak().0;
        for i in (0..n).step_by(7) {
            let conv = c[i].re / pad as f64;
            // The omega factor in sigma is kept outside the convolution.
            let expected = e.cell_length * t.b_coeff * HBAR / SPEED_OF_LIGHT * omegas[i] * conv;
            assert!((s.od[i] - expected).abs() <= 1e-6 * peak, "i = {i}");
        }
    }

    #[test]
    fn mismatched_grid_rejected() {
        let sp = cs();
        let e = room();
        let vg = Arc::new(VelocityGrid::thermal(&e, &sp, 5.0, 101).unwrap());
        let far = ProbeGrid::uniform(&sp, d2_45(&sp), 50_000.0, 60_000.0, 10).unwrap();
        let r = unpumped_spectrum(&e, &sp, vg.clone(), &far, &ProbeSettings::default_for(&sp));
        assert!(matches!(r, Err(Error::Config(_))));
        let none = ProbeSettings::only(vec![], Direction::Backward);
        assert!(unpumped_spectrum(&e, &sp, vg, &ProbeGrid::default_for(&sp).unwrap(), &none).is_err());
        assert!(ProbeGrid::from_detunings(&sp, d2_45(&sp), &[1.0, 1.0]).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let sp = cs();
        let e = room();
        let vg = Arc::new(VelocityGrid::thermal(&e, &sp, 5.0, 201).unwrap());
        let grid = ProbeGrid::uniform(&sp, d2_45(&sp), -600.0, 800.0, 50).unwrap();
        let mut s = unpumped_spectrum(&e, &sp, vg, &grid, &ProbeSettings::default_for(&sp)).unwrap();
        s.meta.sequence_hash = Some("abc123".into());
        s.od_uncertainty = Some(vec![0.01; 50]);
        let text = s.to_csv_string();
        assert!(text.contains("# reference = D2:4-5"));
        assert!(text.contains("# probe_sign = -1"));
        let back = Spectrum::from_csv_str(&text, &sp).unwrap();
        assert_eq!(back.meta, s.meta);
        assert_eq!(back.od, s.od);
        assert_eq!(back.od_uncertainty, s.od_uncertainty);
        for (a, b) in back.omegas().iter().zip(s.omegas()) {
            assert!((a - b).abs() < 1e-3 * b.abs() * 1e-9);
        }
    }

    #[test]
    fn csv_errors_carry_line_numbers() {
        let sp = cs();
        let err = Spectrum::from_csv_str("detuning_MHz,OD\n1,0.1\n2,abc\n", &sp).unwrap_err();
        assert!(matches!(err, Error::Ingestion { line: Some(3), .. }), "{err}");
        let err = Spectrum::from_csv_str("freq,OD\n", &sp).unwrap_err();
        assert!(matches!(err, Error::Ingestion { line: Some(1), .. }));
        let err = Spectrum::from_csv_str("detuning_MHz,OD\n2,0.1\n1,0.1\n", &sp).unwrap_err();
        assert!(matches!(err, Error::Ingestion { line: Some(3), .. }));
        let err = Spectrum::from_csv_str("# reference = D9:1-1\ndetuning_MHz,OD\n", &sp).unwrap_err();
        assert!(matches!(err, Error::Ingestion { line: Some(1), .. }));
        assert!(Spectrum::from_csv_str("", &sp).is_err());
    }

    fn random_state(vg: &Arc<VelocityGrid>, seed: &[f64]) -> PopulationState {
        let classes = (0..vg.len())
            .map(|i| {
                let x = seed[i % seed.len()];
                [x * 1e14, (1.0 - x) * 2e14, 0.0, 0.0]
            })
            .collect();
        PopulationState::new(vg.clone(), classes, 0.0).unwrap()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn od_is_linear_in_populations(a in prop::collection::vec(0.0f64..1.0, 7), b in prop::collection::vec(0.0f64..1.0, 5)) {
            let sp = cs();
            let e = room();
            let vg = Arc::new(VelocityGrid::thermal(&e, &sp, 5.0, 101).unwrap());
            let grid = ProbeGrid::uniform(&sp, d2_45(&sp), -600.0, 800.0, 60).unwrap();
            let p = ProbeSettings::default_for(&sp);
            let (sa, sb) = (random_state(&vg, &a), random_state(&vg, &b));
            let sum = sa.add(&sb).unwrap();
            let oa = optical_depth(&sa, &e, &sp, &grid, &p).unwrap();
            let ob = optical_depth(&sb, &e, &sp, &grid, &p).unwrap();
            let os = optical_depth(&sum, &e, &sp, &grid, &p).unwrap();
            for i in 0..grid.len() {
                let expect = oa.od[i] + ob.od[i];
                prop_assert!((os.od[i] - expect).abs() <= 1e-12 * expect.max(1e-300));
                prop_assert!(os.od[i] >= 0.0);
                prop_assert!((os.transmission()[i] - (-os.od[i]).exp()).abs() < 1e-12);
            }
        }

        #[test]
        fn translating_class_translates_feature(dv in -150.0f64..150.0) {
            let sp = cs();
            let e = room();
            let grid = ProbeGrid::uniform(&sp, d2_45(&sp), -300.0, 300.0, 6001).unwrap();
            let p = ProbeSettings::only(vec![d2_45(&sp)], Direction::Backward);
            let peak_at = |v: f64| {
                let st = PopulationState::new(Arc::new(VelocityGrid::single(v)), vec![[0.0, 1e15, 0.0, 0.0]], 0.0).unwrap();
                optical_depth(&st, &e, &sp, &grid, &p).unwrap().peak().1
            };
            let omega0 = sp.transition(d2_45(&sp)).omega0;
            let expected = rad_to_mhz(-omega0 * dv / SPEED_OF_LIGHT);
            prop_assert!((peak_at(dv) - peak_at(0.0) - expected).abs() <= 0.1);
        }
    }
}
