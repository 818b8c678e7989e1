//! A pump / pump-back / probe experiment with cached intermediate states.
//!
//! The long pump stage is evaluated once per [`Experiment`]; pump-back results are
//! memoized on their (quantized) parameters because fits and sweeps revisit them.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use crate::atomic_data::{Species, ThermalEnsemble, TransitionId};
use crate::coherence::{dephasing_time, memory_lifetime, LadderConfig, Timescale, VelocityDistribution};
use crate::constants::mhz_to_rad;
use crate::pumping::{
    thermal_state, EvolveOptions, LaserStage, Level, PopulationState, RateModel, SpectralProfile, StageRole,
    VelocityGrid,
};
use crate::spectroscopy::{optical_depth, unpumped_spectrum, ProbeGrid, ProbeSettings, Spectrum};
use crate::{Error, Result};

/// Default beam radius of the pump and pump-back (m).
pub const DEFAULT_BEAM_RADIUS: f64 = 1.5e-3;
/// Default laser linewidth (rad/s).
pub fn default_linewidth() -> f64 {
    mhz_to_rad(6.0)
}

/// The adjustable pump-back settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PumpBack {
    /// Power (W).
    pub power: f64,
    /// Laser FWHM (rad/s).
    pub linewidth: f64,
    /// Selected velocity class (m/s).
    pub velocity: f64,
    /// Duration (s).
    pub duration: f64,
}

impl PumpBack {
    pub fn new(power: f64, linewidth: f64, velocity: f64, duration: f64) -> Self {
        PumpBack {
            power,
            linewidth,
            velocity,
            duration,
        }
    }

    /// 12 significant digits per field.
    fn key(&self) -> [u64; 4] {
        let q = |x: f64| {
            if x == 0.0 || !x.is_finite() {
                x.to_bits()
            } else {
                format!("{x:.11e}").parse::<f64>().unwrap_or(x).to_bits()
            }
        };
        [q(self.power), q(self.linewidth), q(self.velocity), q(self.duration)]
    }
}

/// Cached forward model for one species and cell.
#[derive(Debug)]
pub struct Experiment {
    species: Species,
    ensemble: ThermalEnsemble,
    grid: Arc<VelocityGrid>,
    model: RateModel,
    options: EvolveOptions,
    pump: LaserStage,
    pump_back_transition: TransitionId,
    beam_radius: f64,
    profile: SpectralProfile,
    probe_grid: ProbeGrid,
    probe: ProbeSettings,
    pumped: OnceLock<PopulationState>,
    cache: Mutex<HashMap<[u64; 4], Arc<PopulationState>>>,
}

impl Clone for Experiment {
    fn clone(&self) -> Self {
        Experiment {
            species: self.species.clone(),
            ensemble: self.ensemble,
            grid: self.grid.clone(),
            model: self.model.clone(),
            options: self.options,
            pump: self.pump.clone(),
            pump_back_transition: self.pump_back_transition,
            beam_radius: self.beam_radius,
            profile: self.profile,
            probe_grid: self.probe_grid.clone(),
            probe: self.probe.clone(),
            pumped: self.pumped.clone(),
            cache: Mutex::new(self.cache.lock().expect("cache lock").clone()),
        }
    }
}

impl Experiment {
    /// Defaults: 2001-class grid over ±6 sigma, a 2 ms 20 mW pump on the species'
    /// pump transition, pump-back on its default transition, default probe grid.
    pub fn new(species: &Species, ensemble: ThermalEnsemble) -> Result<Self> {
        let grid = Arc::new(VelocityGrid::default_for(&ensemble, species)?);
        let pump = LaserStage::tuned(
            StageRole::Pump,
            species,
            species.defaults.pump,
            0.0,
            default_linewidth(),
            20e-3,
            DEFAULT_BEAM_RADIUS,
            2e-3,
        )?;
        Ok(Experiment {
            species: species.clone(),
            ensemble,
            grid,
            model: RateModel::new(species)?,
            options: EvolveOptions::default(),
            pump,
            pump_back_transition: species.defaults.pump_back,
            beam_radius: DEFAULT_BEAM_RADIUS,
            profile: SpectralProfile::Lorentzian,
            probe_grid: ProbeGrid::default_for(species)?,
            probe: ProbeSettings::default_for(species),
            pumped: OnceLock::new(),
            cache: Mutex::new(HashMap::new()),
        })
    }

    fn invalidate(&mut self) {
        self.pumped = OnceLock::new();
        self.cache = Mutex::new(HashMap::new());
    }

    pub fn with_velocity_grid(mut self, grid: VelocityGrid) -> Result<Self> {
        grid.check_covers(&self.ensemble, &self.species)?;
        self.grid = Arc::new(grid);
        self.invalidate();
        Ok(self)
    }

    pub fn with_pump(mut self, pump: LaserStage) -> Result<Self> {
        pump.validate()?;
        self.model = RateModel::with_transitions(
            &self.species,
            pump.transition.unwrap_or(self.species.defaults.pump),
            self.pump_back_transition,
        )?;
        self.pump = pump;
        self.invalidate();
        Ok(self)
    }

    pub fn with_pump_back_transition(mut self, id: TransitionId) -> Result<Self> {
        let pump = self.pump.transition.unwrap_or(self.species.defaults.pump);
        self.model = RateModel::with_transitions(&self.species, pump, id)?;
        self.pump_back_transition = id;
        self.invalidate();
        Ok(self)
    }

    pub fn with_beam_radius(mut self, radius: f64) -> Result<Self> {
        if !(radius > 0.0) {
            return Err(Error::config("beam radius must be positive"));
        }
        self.beam_radius = radius;
        self.cache = Mutex::new(HashMap::new());
        Ok(self)
    }

    pub fn with_profile(mut self, profile: SpectralProfile) -> Self {
        self.profile = profile;
        self.cache = Mutex::new(HashMap::new());
        self
    }

    pub fn with_options(mut self, options: EvolveOptions) -> Self {
        self.options = options;
        self.invalidate();
        self
    }

    pub fn with_probe(mut self, grid: ProbeGrid, settings: ProbeSettings) -> Self {
        self.probe_grid = grid;
        self.probe = settings;
        self
    }

    pub fn species(&self) -> &Species {
        &self.species
    }

    pub fn ensemble(&self) -> &ThermalEnsemble {
        &self.ensemble
    }

    pub fn grid(&self) -> Arc<VelocityGrid> {
        self.grid.clone()
    }

    pub fn model(&self) -> &RateModel {
        &self.model
    }

    pub fn options(&self) -> &EvolveOptions {
        &self.options
    }

    pub fn pump(&self) -> &LaserStage {
        &self.pump
    }

    pub fn probe_grid(&self) -> &ProbeGrid {
        &self.probe_grid
    }

    pub fn probe_settings(&self) -> &ProbeSettings {
        &self.probe
    }

    pub fn thermal(&self) -> Result<PopulationState> {
        thermal_state(&self.ensemble, &self.species, self.grid.clone())
    }

    /// State after the pump stage, computed on first use.
    pub fn pumped_state(&self) -> Result<&PopulationState> {
        if let Some(s) = self.pumped.get() {
            return Ok(s);
        }
        let s = self.model.evolve_stage(&self.thermal()?, &self.pump, &self.options)?;
        Ok(self.pumped.get_or_init(|| s))
    }

    pub fn pump_back_stage(&self, p: &PumpBack) -> Result<LaserStage> {
        if !(p.linewidth > 0.0) {
            return Err(Error::domain("pump-back linewidth must be positive"));
        }
        Ok(LaserStage::tuned(
            StageRole::PumpBack,
            &self.species,
            self.pump_back_transition,
            p.velocity,
            p.linewidth,
            p.power,
            self.beam_radius,
            p.duration,
        )?
        .with_profile(self.profile))
    }

    /// Pumped state followed by the pump-back stage.
    pub fn after_pump_back(&self, p: &PumpBack) -> Result<Arc<PopulationState>> {
        let key = p.key();
        if let Some(s) = self.cache.lock().expect("cache lock").get(&key) {
            return Ok(s.clone());
        }
        let stage = self.pump_back_stage(p)?;
        let state = Arc::new(self.model.evolve_stage(self.pumped_state()?, &stage, &self.options)?);
        self.cache.lock().expect("cache lock").insert(key, state.clone());
        Ok(state)
    }

    pub fn spectrum(&self, p: &PumpBack) -> Result<Spectrum> {
        let state = self.after_pump_back(p)?;
        optical_depth(&state, &self.ensemble, &self.species, &self.probe_grid, &self.probe)
    }

    pub fn spectrum_of(&self, state: &PopulationState) -> Result<Spectrum> {
        optical_depth(state, &self.ensemble, &self.species, &self.probe_grid, &self.probe)
    }

    pub fn unpumped(&self) -> Result<Spectrum> {
        unpumped_spectrum(
            &self.ensemble,
            &self.species,
            self.grid.clone(),
            &self.probe_grid,
            &self.probe,
        )
    }

    /// f(vz) proportional to the memory-level population after the pump-back.
    pub fn memory_distribution(&self, p: &PumpBack) -> Result<VelocityDistribution> {
        VelocityDistribution::from_state(&*self.after_pump_back(p)?, Level::Memory)
    }

    pub fn thermal_distribution(&self) -> Result<VelocityDistribution> {
        VelocityDistribution::thermal(&self.ensemble, &self.species, self.grid.clone())
    }

    pub fn cached_states(&self) -> usize {
        self.cache.lock().expect("cache lock").len()
    }
}

/// One row of the ladder lifetime table.
#[derive(Debug, Clone, PartialEq)]
pub struct LadderPrediction {
    pub species: String,
    pub ladder: String,
    pub k_r: f64,
    pub storage_lifetime: f64,
    pub temperature: f64,
    /// Memory lifetime for the thermal distribution (s).
    pub no_vsp: f64,
    /// Memory lifetime after velocity-selective pumping (s).
    pub vsp: f64,
    pub beta: f64,
    pub dephasing_thermal: Timescale,
    pub dephasing_vsp: Timescale,
}

/// VSP settings of the lifetime table: 1 mW, 6 MHz, zero class, 0.1 us.
pub fn default_table_pump_back() -> PumpBack {
    PumpBack::new(1e-3, default_linewidth(), 0.0, 0.1e-6)
}

/// Predicts thermal and VSP lifetimes for `ladder`. `pump_back = None` means no
/// velocity selection, so both columns use the thermal distribution.
pub fn predict_ladder(
    experiment: &Experiment,
    ladder: &LadderConfig,
    pump_back: Option<&PumpBack>,
) -> Result<LadderPrediction> {
    let thermal = experiment.thermal_distribution()?;
    let selected = match pump_back {
        Some(p) => experiment.memory_distribution(p)?,
        None => thermal.clone(),
    };
    let k_r = ladder.wavevector_mismatch();
    let no_vsp = memory_lifetime(&thermal, ladder)?;
    let vsp = memory_lifetime(&selected, ladder)?;
    Ok(LadderPrediction {
        species: experiment.species.name.clone(),
        ladder: ladder.name.clone(),
        k_r,
        storage_lifetime: ladder.storage_lifetime,
        temperature: experiment.ensemble.temperature,
        no_vsp,
        vsp,
        beta: vsp / no_vsp,
        dephasing_thermal: dephasing_time(&thermal, k_r)?,
        dephasing_vsp: dephasing_time(&selected, k_r)?,
    })
}

/// Predictions for every ladder bundled with `species`, each at its own temperature.
pub fn predict_species(
    species: &Species,
    pump_back: Option<&PumpBack>,
    cell_length: f64,
) -> Result<Vec<LadderPrediction>> {
    let mut experiments: Vec<Experiment> = Vec::new();
    let mut rows = Vec::new();
    for ladder in &species.ladders {
        let idx = match experiments
            .iter()
            .position(|e| e.ensemble.temperature == ladder.temperature)
        {
            Some(i) => i,
            None => {
                let ens = ThermalEnsemble::saturated(species, ladder.temperature, cell_length)?;
                experiments.push(Experiment::new(species, ens)?);
                experiments.len() - 1
            }
        };
        rows.push(predict_ladder(&experiments[idx], ladder, pump_back)?);
    }
    Ok(rows)
}
