//! Experiment configuration files (TOML, units in key names).
//!
//! Every section is optional; an empty file simulates room-temperature Cs with
//! the default pump and no pump-back. Relative paths are resolved against the
//! directory containing the configuration file.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use vsp_core::atomic_data::{BeamGeometry, Direction, Species, ThermalEnsemble, TransitionId};
use vsp_core::coherence::LadderConfig;
use vsp_core::constants::mhz_to_rad;
use vsp_core::fitting::{FitOptions, ParamBounds, SpectrumFitParams};
use vsp_core::pipeline::{Experiment, PumpBack, DEFAULT_BEAM_RADIUS};
use vsp_core::pumping::{EvolveOptions, LaserStage, Method, PulseSequence, SpectralProfile, StageRole, VelocityGrid};
use vsp_core::spectroscopy::{ProbeGrid, ProbeSettings};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub species: SpeciesConfig,
    #[serde(default)]
    pub ensemble: EnsembleConfig,
    #[serde(default)]
    pub geometry: GeometryConfig,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub integrator: IntegratorConfig,
    #[serde(default)]
    pub pump: PumpConfig,
    /// Absent means no velocity selection: the memory level stays empty after the
    /// pump and dephasing uses the thermal distribution.
    pub pump_back: Option<PumpBackConfig>,
    /// Inline pulse sequence in the sequence-file format.
    pub sequence: Option<toml::Table>,
    pub sequence_file: Option<PathBuf>,
    #[serde(default)]
    pub probe: ProbeConfig,
    #[serde(default)]
    pub ladders: Vec<LadderEntry>,
    #[serde(default)]
    pub dephasing: DephasingConfig,
    #[serde(default)]
    pub predict: PredictConfig,
    pub fit: Option<FitConfig>,
    pub fit_relaxation: Option<RelaxationConfig>,
    #[serde(default)]
    pub sweep: SweepConfig,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("vsp-output")
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpeciesConfig {
    /// Bundled species ("Cs-133" or "Rb-87").
    pub name: Option<String>,
    /// Species data file; takes the place of `name`.
    pub file: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleConfig {
    #[serde(rename = "temperature_K", default = "room_temperature")]
    pub temperature_k: f64,
    /// A number, or "auto" for the saturated vapour density.
    #[serde(default)]
    pub density_per_m3: Density,
    #[serde(default = "default_cell_length")]
    pub cell_length_mm: f64,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        EnsembleConfig {
            temperature_k: room_temperature(),
            density_per_m3: Density::default(),
            cell_length_mm: default_cell_length(),
        }
    }
}

fn room_temperature() -> f64 {
    296.15
}

fn default_cell_length() -> f64 {
    25.0
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum Density {
    Value(f64),
    Keyword(String),
}

impl Default for Density {
    fn default() -> Self {
        Density::Keyword("auto".into())
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometryConfig {
    #[serde(default = "default_pump_back_radius")]
    pub pump_back_radius_mm: f64,
    #[serde(default = "default_probe_radius")]
    pub probe_radius_mm: f64,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        GeometryConfig {
            pump_back_radius_mm: default_pump_back_radius(),
            probe_radius_mm: default_probe_radius(),
        }
    }
}

fn default_pump_back_radius() -> f64 {
    BeamGeometry::default().pump_back_radius * 1e3
}

fn default_probe_radius() -> f64 {
    BeamGeometry::default().probe_radius * 1e3
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    #[serde(default = "default_classes")]
    pub classes: usize,
    /// Half-width of the velocity grid in thermal standard deviations.
    #[serde(default = "default_span")]
    pub span_sigma: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            classes: default_classes(),
            span_sigma: default_span(),
        }
    }
}

fn default_classes() -> usize {
    2001
}

fn default_span() -> f64 {
    6.0
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorConfig {
    /// "auto", "dopri5" or "rkc".
    #[serde(default = "default_method")]
    pub method: String,
    #[serde(default = "default_rtol")]
    pub rtol: f64,
    /// Early exit once a class has settled to this fraction; 0 disables it.
    #[serde(default = "default_settle")]
    pub settle_fraction: f64,
    /// Relaxation towards the thermal ground-state split by transverse drift.
    pub drift_rate_per_s: Option<f64>,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        IntegratorConfig {
            method: default_method(),
            rtol: default_rtol(),
            settle_fraction: default_settle(),
            drift_rate_per_s: None,
        }
    }
}

fn default_method() -> String {
    "auto".into()
}

fn default_rtol() -> f64 {
    EvolveOptions::default().rtol
}

fn default_settle() -> f64 {
    EvolveOptions::default().settle_fraction.unwrap_or(0.0)
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PumpConfig {
    /// Defaults to the species' pump transition.
    pub transition: Option<String>,
    #[serde(rename = "power_mW", default = "default_pump_power")]
    pub power_mw: f64,
    #[serde(rename = "linewidth_MHz", default = "default_linewidth")]
    pub linewidth_mhz: f64,
    #[serde(default)]
    pub velocity_m_s: f64,
    #[serde(default = "default_pump_duration")]
    pub duration_us: f64,
    #[serde(default = "default_beam_radius")]
    pub beam_radius_mm: f64,
    #[serde(default)]
    pub profile: SpectralProfile,
}

impl Default for PumpConfig {
    fn default() -> Self {
        PumpConfig {
            transition: None,
            power_mw: default_pump_power(),
            linewidth_mhz: default_linewidth(),
            velocity_m_s: 0.0,
            duration_us: default_pump_duration(),
            beam_radius_mm: default_beam_radius(),
            profile: SpectralProfile::default(),
        }
    }
}

fn default_pump_power() -> f64 {
    20.0
}

fn default_pump_duration() -> f64 {
    2000.0
}

fn default_linewidth() -> f64 {
    6.0
}

fn default_beam_radius() -> f64 {
    DEFAULT_BEAM_RADIUS * 1e3
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PumpBackConfig {
    /// Defaults to the species' pump-back transition.
    pub transition: Option<String>,
    #[serde(rename = "power_mW")]
    pub power_mw: f64,
    #[serde(rename = "linewidth_MHz", default = "default_linewidth")]
    pub linewidth_mhz: f64,
    #[serde(default)]
    pub velocity_m_s: f64,
    pub duration_us: f64,
    #[serde(default = "default_beam_radius")]
    pub beam_radius_mm: f64,
    #[serde(default)]
    pub profile: SpectralProfile,
}

impl PumpBackConfig {
    pub fn settings(&self) -> PumpBack {
        PumpBack::new(
            self.power_mw * 1e-3,
            mhz_to_rad(self.linewidth_mhz),
            self.velocity_m_s,
            self.duration_us * 1e-6,
        )
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeConfig {
    /// Transition the detuning axis is measured from.
    pub reference: Option<String>,
    #[serde(rename = "min_MHz")]
    pub min_mhz: Option<f64>,
    #[serde(rename = "max_MHz")]
    pub max_mhz: Option<f64>,
    pub points: Option<usize>,
    /// Probed transitions; defaults to every line out of the memory level.
    pub transitions: Option<Vec<String>>,
    /// +1 co-propagating with the pump beams, -1 (default) counter-propagating.
    pub propagation_sign: Option<Direction>,
}

/// A ladder either looked up by name among the species data or given in full.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LadderEntry {
    pub name: String,
    /// Defaults to the configured species.
    pub species: Option<String>,
    pub signal_nm: Option<f64>,
    pub control_nm: Option<f64>,
    pub storage_lifetime_ns: Option<f64>,
    #[serde(rename = "temperature_K")]
    pub temperature_k: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DephasingConfig {
    #[serde(default = "default_max_time")]
    pub max_time_ns: f64,
    #[serde(default = "default_time_points")]
    pub points: usize,
}

impl Default for DephasingConfig {
    fn default() -> Self {
        DephasingConfig {
            max_time_ns: default_max_time(),
            points: default_time_points(),
        }
    }
}

fn default_max_time() -> f64 {
    300.0
}

fn default_time_points() -> usize {
    601
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictConfig {
    /// Species whose bundled ladders form the table when no `[[ladders]]` are given.
    #[serde(default = "default_predict_species")]
    pub species: Vec<String>,
    /// `false` evaluates both columns without velocity selection.
    #[serde(default = "yes")]
    pub velocity_selection: bool,
    #[serde(rename = "power_mW", default = "default_predict_power")]
    pub power_mw: f64,
    #[serde(rename = "linewidth_MHz", default = "default_linewidth")]
    pub linewidth_mhz: f64,
    #[serde(default)]
    pub velocity_m_s: f64,
    #[serde(default = "default_predict_duration")]
    pub duration_us: f64,
    /// Replaces every ladder's storage lifetime.
    pub storage_lifetime_ns: Option<f64>,
}

impl Default for PredictConfig {
    fn default() -> Self {
        PredictConfig {
            species: default_predict_species(),
            velocity_selection: true,
            power_mw: default_predict_power(),
            linewidth_mhz: default_linewidth(),
            velocity_m_s: 0.0,
            duration_us: default_predict_duration(),
            storage_lifetime_ns: None,
        }
    }
}

fn default_predict_species() -> Vec<String> {
    vec!["Cs-133".into(), "Rb-87".into()]
}

fn yes() -> bool {
    true
}

fn default_predict_power() -> f64 {
    1.0
}

fn default_predict_duration() -> f64 {
    0.1
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    /// Measured spectrum CSV.
    pub data: PathBuf,
    pub duration_us: f64,
    /// Starting point.
    #[serde(rename = "power_mW")]
    pub power_mw: f64,
    #[serde(rename = "linewidth_MHz", default = "default_linewidth")]
    pub linewidth_mhz: f64,
    #[serde(default)]
    pub velocity_m_s: f64,
    #[serde(default = "default_evaluations")]
    pub max_evaluations: usize,
    #[serde(rename = "power_bounds_mW")]
    pub power_bounds_mw: Option<[f64; 2]>,
    #[serde(rename = "linewidth_bounds_MHz")]
    pub linewidth_bounds_mhz: Option<[f64; 2]>,
    pub velocity_bounds_m_s: Option<[f64; 2]>,
}

fn default_evaluations() -> usize {
    FitOptions::default().max_evaluations
}

impl FitConfig {
    pub fn initial(&self) -> CliResult<SpectrumFitParams> {
        let d = ParamBounds::default();
        let scale =
            |b: Option<[f64; 2]>, f: f64, default: (f64, f64)| b.map(|[lo, hi]| (lo * f, hi * f)).unwrap_or(default);
        let bounds = ParamBounds {
            power: scale(self.power_bounds_mw, 1e-3, d.power),
            linewidth: self
                .linewidth_bounds_mhz
                .map(|[lo, hi]| (mhz_to_rad(lo), mhz_to_rad(hi)))
                .unwrap_or(d.linewidth),
            velocity: scale(self.velocity_bounds_m_s, 1.0, d.velocity),
        };
        let p = SpectrumFitParams::new(self.power_mw * 1e-3, mhz_to_rad(self.linewidth_mhz), self.velocity_m_s)?
            .with_bounds(bounds)
            .map_err(|e| CliError::from(e).context("[fit]"))?;
        Ok(p)
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RelaxationConfig {
    /// `time_s,transmission` CSV.
    pub data: PathBuf,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    #[serde(rename = "powers_mW", default = "default_sweep_powers")]
    pub powers_mw: Vec<f64>,
    #[serde(default = "default_sweep_durations")]
    pub durations_us: Vec<f64>,
    #[serde(rename = "linewidth_MHz", default = "default_linewidth")]
    pub linewidth_mhz: f64,
    #[serde(default = "default_sweep_velocity")]
    pub velocity_m_s: f64,
    /// Ladder used for the dephasing columns; defaults to the first configured.
    pub ladder: Option<String>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            powers_mw: default_sweep_powers(),
            durations_us: default_sweep_durations(),
            linewidth_mhz: default_linewidth(),
            velocity_m_s: default_sweep_velocity(),
            ladder: None,
        }
    }
}

fn default_sweep_powers() -> Vec<f64> {
    vec![0.86, 4.1, 10.5]
}

fn default_sweep_durations() -> Vec<f64> {
    vec![0.2, 1.2, 2.0]
}

fn default_sweep_velocity() -> f64 {
    -100.0
}

/// A parsed configuration together with where it came from.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    pub path: PathBuf,
    pub text: String,
    pub base_dir: PathBuf,
}

fn positive(value: f64, key: &str) -> CliResult<()> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(CliError::config(format!(
            "{key} must be positive and finite, got {value}"
        )))
    }
}

fn finite(value: f64, key: &str) -> CliResult<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(CliError::config(format!("{key} must be finite, got {value}")))
    }
}

impl LoadedConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
        let config: ExperimentConfig =
            toml::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let loaded = LoadedConfig {
            config,
            path: path.to_path_buf(),
            text,
            base_dir,
        };
        loaded.validate()?;
        Ok(loaded)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn output_dir(&self) -> PathBuf {
        self.resolve(&self.config.output_dir)
    }

    /// Unit and range checks plus existence of every referenced file.
    fn validate(&self) -> CliResult<()> {
        let c = &self.config;
        if c.species.name.is_some() && c.species.file.is_some() {
            return Err(CliError::config("[species] takes either name or file, not both"));
        }
        positive(c.ensemble.temperature_k, "ensemble.temperature_K")?;
        positive(c.ensemble.cell_length_mm, "ensemble.cell_length_mm")?;
        match &c.ensemble.density_per_m3 {
            Density::Value(n) => positive(*n, "ensemble.density_per_m3")?,
            Density::Keyword(k) if k == "auto" => {}
            Density::Keyword(k) => {
                return Err(CliError::config(format!(
                    "ensemble.density_per_m3 must be a number or \"auto\", got {k:?}"
                )))
            }
        }
        positive(c.geometry.pump_back_radius_mm, "geometry.pump_back_radius_mm")?;
        positive(c.geometry.probe_radius_mm, "geometry.probe_radius_mm")?;
        if c.grid.classes < 3 {
            return Err(CliError::config("grid.classes must be at least 3"));
        }
        positive(c.grid.span_sigma, "grid.span_sigma")?;
        method(&c.integrator.method)?;
        positive(c.integrator.rtol, "integrator.rtol")?;
        if c.integrator.settle_fraction.is_nan() || c.integrator.settle_fraction < 0.0 {
            return Err(CliError::config("integrator.settle_fraction must be non-negative"));
        }
        if let Some(r) = c.integrator.drift_rate_per_s {
            positive(r, "integrator.drift_rate_per_s")?;
        }
        positive(c.pump.power_mw, "pump.power_mW")?;
        positive(c.pump.linewidth_mhz, "pump.linewidth_MHz")?;
        positive(c.pump.duration_us, "pump.duration_us")?;
        positive(c.pump.beam_radius_mm, "pump.beam_radius_mm")?;
        finite(c.pump.velocity_m_s, "pump.velocity_m_s")?;
        if let Some(pb) = &c.pump_back {
            positive(pb.power_mw, "pump_back.power_mW")?;
            positive(pb.linewidth_mhz, "pump_back.linewidth_MHz")?;
            positive(pb.duration_us, "pump_back.duration_us")?;
            positive(pb.beam_radius_mm, "pump_back.beam_radius_mm")?;
            finite(pb.velocity_m_s, "pump_back.velocity_m_s")?;
        }
        if c.sequence.is_some() && c.sequence_file.is_some() {
            return Err(CliError::config("give either [sequence] or sequence_file, not both"));
        }
        if let Some(n) = c.probe.points {
            if n < 2 {
                return Err(CliError::config("probe.points must be at least 2"));
            }
        }
        for l in &c.ladders {
            for (v, key) in [
                (l.signal_nm, "signal_nm"),
                (l.control_nm, "control_nm"),
                (l.storage_lifetime_ns, "storage_lifetime_ns"),
                (l.temperature_k, "temperature_K"),
            ] {
                if let Some(v) = v {
                    positive(v, &format!("ladders.{key} ({})", l.name))?;
                }
            }
        }
        positive(c.dephasing.max_time_ns, "dephasing.max_time_ns")?;
        if c.dephasing.points < 2 {
            return Err(CliError::config("dephasing.points must be at least 2"));
        }
        let p = &c.predict;
        positive(p.power_mw, "predict.power_mW")?;
        positive(p.linewidth_mhz, "predict.linewidth_MHz")?;
        positive(p.duration_us, "predict.duration_us")?;
        finite(p.velocity_m_s, "predict.velocity_m_s")?;
        if let Some(t) = p.storage_lifetime_ns {
            positive(t, "predict.storage_lifetime_ns")?;
        }
        if let Some(f) = &c.fit {
            positive(f.duration_us, "fit.duration_us")?;
            if f.max_evaluations < 10 {
                return Err(CliError::config("fit.max_evaluations must be at least 10"));
            }
        }
        let s = &c.sweep;
        if s.powers_mw.is_empty() || s.durations_us.is_empty() {
            return Err(CliError::config("sweep needs at least one power and one duration"));
        }
        for &v in &s.powers_mw {
            positive(v, "sweep.powers_mW")?;
        }
        for &v in &s.durations_us {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(CliError::config(format!(
                    "sweep.durations_us must be non-negative, got {v}"
                )));
            }
        }
        positive(s.linewidth_mhz, "sweep.linewidth_MHz")?;
        finite(s.velocity_m_s, "sweep.velocity_m_s")?;

        let mut files: Vec<(&Path, &str)> = Vec::new();
        if let Some(f) = &c.species.file {
            files.push((f, "species.file"));
        }
        if let Some(f) = &c.sequence_file {
            files.push((f, "sequence_file"));
        }
        if let Some(f) = &c.fit {
            files.push((&f.data, "fit.data"));
        }
        if let Some(f) = &c.fit_relaxation {
            files.push((&f.data, "fit_relaxation.data"));
        }
        for (f, key) in files {
            let p = self.resolve(f);
            if !p.is_file() {
                return Err(CliError::config(format!("{key}: file {} does not exist", p.display())));
            }
        }
        Ok(())
    }

    pub fn species(&self) -> CliResult<Species> {
        let s = &self.config.species;
        match (&s.file, &s.name) {
            (Some(f), _) => {
                let p = self.resolve(f);
                Species::from_file(&p).map_err(|e| CliError::from(e).context(p.display()))
            }
            (None, Some(n)) => bundled_species(n),
            (None, None) => Ok(Species::cesium()),
        }
    }

    /// Looks `name` up as the configured species first, then among the bundled ones.
    pub fn species_named(&self, name: &str, configured: &Species) -> CliResult<Species> {
        if name == configured.name {
            Ok(configured.clone())
        } else {
            bundled_species(name)
        }
    }

    pub fn ensemble(&self, species: &Species, temperature: f64) -> CliResult<ThermalEnsemble> {
        let e = &self.config.ensemble;
        let length = e.cell_length_mm * 1e-3;
        Ok(match e.density_per_m3 {
            Density::Value(n) => ThermalEnsemble::new(temperature, n, length)?,
            Density::Keyword(_) => ThermalEnsemble::saturated(species, temperature, length)?,
        })
    }

    pub fn geometry(&self) -> CliResult<BeamGeometry> {
        let g = &self.config.geometry;
        Ok(BeamGeometry::new(
            g.pump_back_radius_mm * 1e-3,
            g.probe_radius_mm * 1e-3,
        )?)
    }

    pub fn evolve_options(&self) -> CliResult<EvolveOptions> {
        let i = &self.config.integrator;
        Ok(EvolveOptions {
            method: method(&i.method)?,
            rtol: i.rtol,
            settle_fraction: (i.settle_fraction > 0.0).then_some(i.settle_fraction),
            drift_rate: i.drift_rate_per_s,
            ..EvolveOptions::default()
        })
    }

    fn transition(
        &self,
        species: &Species,
        label: &Option<String>,
        default: TransitionId,
        key: &str,
    ) -> CliResult<TransitionId> {
        match label {
            Some(l) => species.parse_transition(l).map_err(|e| CliError::from(e).context(key)),
            None => Ok(default),
        }
    }

    pub fn probe(&self, species: &Species) -> CliResult<(ProbeGrid, ProbeSettings)> {
        let p = &self.config.probe;
        let reference = self.transition(
            species,
            &p.reference,
            species.defaults.probe_reference,
            "probe.reference",
        )?;
        let grid = ProbeGrid::uniform(
            species,
            reference,
            p.min_mhz.unwrap_or(-600.0),
            p.max_mhz.unwrap_or(800.0),
            p.points.unwrap_or(1000),
        )
        .map_err(|e| CliError::from(e).context("[probe]"))?;
        let mut settings = ProbeSettings::default_for(species);
        if let Some(list) = &p.transitions {
            settings.transitions = list
                .iter()
                .map(|l| species.parse_transition(l))
                .collect::<vsp_core::Result<_>>()
                .map_err(|e| CliError::from(e).context("probe.transitions"))?;
        }
        if let Some(d) = p.propagation_sign {
            settings.direction = d;
        }
        Ok((grid, settings))
    }

    /// The cached forward model at `temperature`.
    pub fn experiment(&self, species: &Species, temperature: f64) -> CliResult<Experiment> {
        let c = &self.config;
        let ensemble = self.ensemble(species, temperature)?;
        let grid = VelocityGrid::thermal(&ensemble, species, c.grid.span_sigma, c.grid.classes)?;
        let pump_id = self.transition(species, &c.pump.transition, species.defaults.pump, "pump.transition")?;
        let pump = LaserStage::tuned(
            StageRole::Pump,
            species,
            pump_id,
            c.pump.velocity_m_s,
            mhz_to_rad(c.pump.linewidth_mhz),
            c.pump.power_mw * 1e-3,
            c.pump.beam_radius_mm * 1e-3,
            c.pump.duration_us * 1e-6,
        )?
        .with_profile(c.pump.profile);
        let (probe_grid, probe) = self.probe(species)?;
        let mut x = Experiment::new(species, ensemble)?
            .with_velocity_grid(grid)
            .map_err(|e| CliError::from(e).context("[grid]"))?
            .with_options(self.evolve_options()?)
            .with_probe(probe_grid, probe);
        if let Some(pb) = &c.pump_back {
            let id = self.transition(
                species,
                &pb.transition,
                species.defaults.pump_back,
                "pump_back.transition",
            )?;
            x = x
                .with_pump_back_transition(id)?
                .with_beam_radius(pb.beam_radius_mm * 1e-3)?
                .with_profile(pb.profile);
        }
        Ok(x.with_pump(pump)?)
    }

    /// The configured pulse sequence, if any, with its source text.
    pub fn sequence(&self, species: &Species) -> CliResult<Option<(PulseSequence, String)>> {
        let c = &self.config;
        let text = match (&c.sequence, &c.sequence_file) {
            (Some(table), _) => toml::to_string(table).map_err(|e| CliError::config(format!("[sequence]: {e}")))?,
            (None, Some(f)) => {
                let p = self.resolve(f);
                std::fs::read_to_string(&p)
                    .map_err(|e| CliError::config(format!("cannot read {}: {e}", p.display())))?
            }
            (None, None) => return Ok(None),
        };
        let seq =
            PulseSequence::from_toml_str(&text, species).map_err(|e| CliError::from(e).context("pulse sequence"))?;
        Ok(Some((seq, text)))
    }

    /// The configured ladders, or every ladder bundled with `species` when none are given.
    pub fn ladders(&self, species: &Species) -> CliResult<Vec<(Species, LadderConfig)>> {
        if self.config.ladders.is_empty() {
            return Ok(species.ladders.iter().map(|l| (species.clone(), l.clone())).collect());
        }
        self.config
            .ladders
            .iter()
            .map(|entry| self.ladder(entry, species))
            .collect()
    }

    fn ladder(&self, entry: &LadderEntry, configured: &Species) -> CliResult<(Species, LadderConfig)> {
        let species = match &entry.species {
            Some(n) => self.species_named(n, configured)?,
            None => configured.clone(),
        };
        let known = species.ladder(&entry.name).cloned();
        let pick = |v: Option<f64>, scale: f64, fallback: Option<f64>, key: &str| -> CliResult<f64> {
            v.map(|x| x * scale).or(fallback).ok_or_else(|| {
                CliError::config(format!(
                    "ladder {:?} is not bundled with {}; {key} is required",
                    entry.name, species.name
                ))
            })
        };
        let ladder = LadderConfig::new(
            &entry.name,
            pick(
                entry.signal_nm,
                1e-9,
                known.as_ref().map(|l| l.signal_wavelength),
                "signal_nm",
            )?,
            pick(
                entry.control_nm,
                1e-9,
                known.as_ref().map(|l| l.control_wavelength),
                "control_nm",
            )?,
            pick(
                entry.storage_lifetime_ns,
                1e-9,
                known.as_ref().map(|l| l.storage_lifetime),
                "storage_lifetime_ns",
            )?,
            entry
                .temperature_k
                .or(known.as_ref().map(|l| l.temperature))
                .unwrap_or(self.config.ensemble.temperature_k),
        )?
        .with_species(&species.name);
        Ok((species, ladder))
    }
}

fn bundled_species(name: &str) -> CliResult<Species> {
    Species::bundled(name).ok_or_else(|| CliError::config(format!("unknown species {name:?}; bundled: Cs-133, Rb-87")))
}

fn method(name: &str) -> CliResult<Method> {
    match name {
        "auto" => Ok(Method::Auto),
        "dopri5" => Ok(Method::Dopri5),
        "rkc" => Ok(Method::Rkc),
        other => Err(CliError::config(format!(
            "integrator.method must be \"auto\", \"dopri5\" or \"rkc\", got {other:?}"
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> CliResult<LoadedConfig> {
        let config: ExperimentConfig = toml::from_str(text).map_err(|e| CliError::config(e.to_string()))?;
        let loaded = LoadedConfig {
            config,
            path: PathBuf::from("test.toml"),
            text: text.to_string(),
            base_dir: PathBuf::new(),
        };
        loaded.validate()?;
        Ok(loaded)
    }

    #[test]
    fn empty_file_gives_defaults() {
        let c = parse("").unwrap();
        assert_eq!(c.config.ensemble.temperature_k, 296.15);
        assert_eq!(c.config.ensemble.density_per_m3, Density::Keyword("auto".into()));
        assert!(c.config.pump_back.is_none());
        assert_eq!(c.species().unwrap().name, "Cs-133");
        assert_eq!(c.ladders(&c.species().unwrap()).unwrap().len(), 2);
    }

    #[test]
    fn unknown_keys_are_rejected_with_a_line() {
        let e = parse("[ensemble]\ntemperature_K = 300\ntemprature_K = 310\n").unwrap_err();
        assert!(e.message.contains("unknown field"), "{}", e.message);
        assert!(e.message.contains("line 3"), "{}", e.message);
    }

    #[test]
    fn units_are_checked() {
        assert!(parse("[ensemble]\ntemperature_K = -4\n").is_err());
        assert!(parse("[ensemble]\ndensity_per_m3 = \"lots\"\n").is_err());
        assert!(parse("[ensemble]\ndensity_per_m3 = 2e16\n").is_ok());
        assert!(parse("[pump_back]\npower_mW = 0\nduration_us = 1\n").is_err());
        assert!(parse("[integrator]\nmethod = \"euler\"\n").is_err());
        assert!(parse("[species]\nname = \"Cs-133\"\nfile = \"x.toml\"\n").is_err());
    }

    #[test]
    fn missing_files_are_config_errors() {
        let e = parse("[fit_relaxation]\ndata = \"/nonexistent/relax.csv\"\n").unwrap_err();
        assert_eq!(e.kind, crate::error::Kind::Config);
        assert!(e.message.contains("does not exist"));
    }

    #[test]
    fn ladders_resolve_by_name_or_in_full() {
        let c = parse(
            "[[ladders]]\nname = \"5D5/2\"\nspecies = \"Rb-87\"\n\n[[ladders]]\nname = \"flat\"\nsignal_nm = 852\ncontrol_nm = 852\nstorage_lifetime_ns = 50\n",
        )
        .unwrap();
        let cs = c.species().unwrap();
        let ladders = c.ladders(&cs).unwrap();
        assert_eq!(ladders[0].0.name, "Rb-87");
        assert_eq!(
            ladders[0].1.temperature,
            Species::rubidium87().ladder("5D5/2").unwrap().temperature
        );
        assert_eq!(ladders[1].1.wavevector_mismatch(), 0.0);
        assert_eq!(ladders[1].1.temperature, 296.15);

        let c = parse("[[ladders]]\nname = \"9X\"\n").unwrap();
        assert!(c.ladders(&cs).is_err());
    }

    #[test]
    fn inline_sequence_is_parsed() {
        let c = parse(
            "[sequence]\nrepeat = 2\n[[sequence.stages]]\nrole = \"pump-back\"\ntransition = \"D1:3-4\"\npower_mW = 1.0\nduration_us = 0.5\n[[sequence.stages]]\nrole = \"probe\"\nduration_us = 1.0\n",
        )
        .unwrap();
        let (seq, _) = c.sequence(&Species::cesium()).unwrap().unwrap();
        assert_eq!(seq.repeat, 2);
        assert_eq!(seq.stages.len(), 2);
        assert!(parse("sequence_file = \"a\"\n[sequence]\nrepeat = 1\n").is_err());
    }
}
