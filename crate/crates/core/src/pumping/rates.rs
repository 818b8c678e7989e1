use rayon::prelude::*;

use crate::atomic_data::{ExcitedLevel, Species, TransitionId};
use crate::pumping::integrator::{integrate, integrate_auto, integrate_rkc, StepStats, Tolerances};
use crate::pumping::{overlap_rate, LaserStage, Level, PopulationState, Populations};
use crate::{Error, Result};

/// Explicit scheme used for each velocity class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Method {
    /// Dormand-Prince 5(4).
    Dopri5,
    /// Second-order Runge-Kutta-Chebyshev; much cheaper when the excited-state
    /// decay makes a class stiff.
    Rkc,
    /// Per class: Dormand-Prince while accuracy limits the step, Chebyshev while
    /// stability does.
    #[default]
    Auto,
}

/// Controls for [`RateModel::evolve_stage`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvolveOptions {
    pub method: Method,
    pub rtol: f64,
    /// Absolute tolerance as a fraction of each class total.
    pub atol_fraction: f64,
    /// Largest step as a fraction of the stage duration.
    pub max_step_fraction: f64,
    /// A class stops integrating once its remaining change is provably below this
    /// fraction of its total. `None` always integrates to the end of the stage.
    pub settle_fraction: Option<f64>,
    /// Optional phenomenological relaxation rate towards the thermal split (1/s).
    pub drift_rate: Option<f64>,
}

impl Default for EvolveOptions {
    fn default() -> Self {
        EvolveOptions {
            method: Method::default(),
            rtol: 1e-8,
            atol_fraction: 1e-12,
            max_step_fraction: 0.1,
            settle_fraction: Some(1e-10),
            drift_rate: None,
        }
    }
}

/// Coupling of one stage to one velocity class.
#[derive(Debug, Clone, Copy)]
struct Drive {
    ground: Level,
    excited: Level,
    rate: f64,
    /// g_F / g_e of the driven pair.
    degeneracy_ratio: f64,
}

/// The four-level rate model of a species with fixed pump and pump-back excited levels.
#[derive(Debug, Clone)]
pub struct RateModel {
    species: Species,
    pump_excited: ExcitedLevel,
    pump_back_excited: ExcitedLevel,
    /// Spontaneous rates [to aux, to memory] for the pump and pump-back excited levels.
    decay: [[f64; 2]; 2],
    /// Thermal fractions of the aux and memory levels.
    thermal_split: [f64; 2],
}

impl RateModel {
    /// Model using the species' default pump and pump-back transitions.
    pub fn new(species: &Species) -> Result<Self> {
        Self::with_transitions(species, species.defaults.pump, species.defaults.pump_back)
    }

    /// Model whose excited slots are the upper levels of `pump` and `pump_back`.
    pub fn with_transitions(species: &Species, pump: TransitionId, pump_back: TransitionId) -> Result<Self> {
        let pe = species.transition(pump).excited();
        let pbe = species.transition(pump_back).excited();
        if pe == pbe {
            return Err(Error::config(
                "pump and pump-back must address different excited levels",
            ));
        }
        let split = |lvl: ExcitedLevel| {
            let r = species.decay_rates(lvl);
            [r[species.aux_level], r[species.memory_level]]
        };
        let g_aux = species.ground.levels[species.aux_level].degeneracy as f64;
        let g_mem = species.ground.levels[species.memory_level].degeneracy as f64;
        Ok(RateModel {
            species: species.clone(),
            pump_excited: pe,
            pump_back_excited: pbe,
            decay: [split(pe), split(pbe)],
            thermal_split: [g_aux / (g_aux + g_mem), g_mem / (g_aux + g_mem)],
        })
    }

    pub fn species(&self) -> &Species {
        &self.species
    }

    /// Total spontaneous rate of the pump (`Level::PumpExcited`) or pump-back excited level.
    pub fn total_decay(&self, level: Level) -> f64 {
        match level {
            Level::PumpExcited => self.decay[0][0] + self.decay[0][1],
            Level::PumpBackExcited => self.decay[1][0] + self.decay[1][1],
            _ => 0.0,
        }
    }

    /// Spontaneous rate from an excited slot into a ground slot.
    pub fn decay_rate(&self, from: Level, to: Level) -> f64 {
        let i = match from {
            Level::PumpExcited => 0,
            Level::PumpBackExcited => 1,
            _ => return 0.0,
        };
        match to {
            Level::Aux => self.decay[i][0],
            Level::Memory => self.decay[i][1],
            _ => 0.0,
        }
    }

    fn slots(&self, id: TransitionId) -> Result<(Level, Level, f64)> {
        let t = self.species.transition(id);
        let ground = if t.lower == self.species.memory_level {
            Level::Memory
        } else if t.lower == self.species.aux_level {
            Level::Aux
        } else {
            return Err(Error::config("stage drives an unknown ground level"));
        };
        let excited = if t.excited() == self.pump_excited {
            Level::PumpExcited
        } else if t.excited() == self.pump_back_excited {
            Level::PumpBackExcited
        } else {
            return Err(Error::config(format!(
                "stage transition {} does not reach the pump or pump-back excited level",
                self.species.transition_label(t)
            )));
        };
        let (gl, gu) = self.species.degeneracies(t);
        Ok((ground, excited, gl / gu))
    }

    /// Per-class stimulated rates of a stage, or `None` for undriven stages.
    fn drives(&self, state: &PopulationState, stage: &LaserStage) -> Result<Option<Vec<Drive>>> {
        stage.validate()?;
        if !stage.drives() {
            return Ok(None);
        }
        let id = stage.transition.expect("driven stage has a transition");
        let (ground, excited, ratio) = self.slots(id)?;
        let t = self.species.transition(id);
        let drives = state
            .grid()
            .velocities()
            .iter()
            .map(|&v| Drive {
                ground,
                excited,
                rate: overlap_rate(stage, t, v),
                degeneracy_ratio: ratio,
            })
            .collect();
        Ok(Some(drives))
    }

    /// Gershgorin bound on the eigenvalues of the (compartmental) rate matrix:
    /// each column's off-diagonal entries sum to its diagonal magnitude.
    fn spectral_radius(&self, drive: Option<&Drive>, relax: Option<(f64, f64)>) -> f64 {
        let mut diag = [
            0.0,
            0.0,
            self.decay[0][0] + self.decay[0][1],
            self.decay[1][0] + self.decay[1][1],
        ];
        if let Some(d) = drive {
            diag[d.ground as usize] += d.rate;
            diag[d.excited as usize] += d.rate * d.degeneracy_ratio;
        }
        let gamma = relax.map_or(0.0, |(g, _)| g);
        2.0 * diag.iter().fold(0.0f64, |m, &x| m.max(x + gamma))
    }

    #[inline]
    fn rhs(&self, n: &Populations, drive: Option<&Drive>, relax: Option<(f64, f64)>) -> Populations {
        let (e1, e2) = (n[Level::PumpExcited], n[Level::PumpBackExcited]);
        let mut d = [0.0; 4];
        d[Level::Aux] = self.decay[0][0] * e1 + self.decay[1][0] * e2;
        d[Level::Memory] = self.decay[0][1] * e1 + self.decay[1][1] * e2;
        d[Level::PumpExcited] = -(self.decay[0][0] + self.decay[0][1]) * e1;
        d[Level::PumpBackExcited] = -(self.decay[1][0] + self.decay[1][1]) * e2;
        if let Some(dr) = drive {
            let flow = dr.rate * (n[dr.ground] - dr.degeneracy_ratio * n[dr.excited]);
            d[dr.ground] -= flow;
            d[dr.excited] += flow;
        }
        if let Some((gamma, total)) = relax {
            let target = [total * self.thermal_split[0], total * self.thermal_split[1], 0.0, 0.0];
            for k in 0..4 {
                d[k] -= gamma * (n[k] - target[k]);
            }
        }
        d
    }

    /// Time derivatives of every class under `stage`.
    pub fn derivatives(&self, state: &PopulationState, stage: &LaserStage) -> Result<Vec<Populations>> {
        self.derivatives_with(state, stage, &EvolveOptions::default())
    }

    pub fn derivatives_with(
        &self,
        state: &PopulationState,
        stage: &LaserStage,
        options: &EvolveOptions,
    ) -> Result<Vec<Populations>> {
        let drives = self.drives(state, stage)?;
        Ok(state
            .classes()
            .iter()
            .enumerate()
            .map(|(i, n)| {
                let relax = options.drift_rate.map(|g| (g, n.iter().sum()));
                self.rhs(n, drives.as_ref().map(|d| &d[i]), relax)
            })
            .collect())
    }

    /// Integrates every class through one stage.
    pub fn evolve_stage(
        &self,
        state: &PopulationState,
        stage: &LaserStage,
        options: &EvolveOptions,
    ) -> Result<PopulationState> {
        self.evolve_stage_with_stats(state, stage, options).map(|(s, _)| s)
    }

    /// As [`RateModel::evolve_stage`], also returning step counts summed over classes.
    pub fn evolve_stage_with_stats(
        &self,
        state: &PopulationState,
        stage: &LaserStage,
        options: &EvolveOptions,
    ) -> Result<(PopulationState, StepStats)> {
        let drives = self.drives(state, stage)?;
        let duration = stage.duration;
        let results = state
            .classes()
            .par_iter()
            .enumerate()
            .map(|(i, n0)| {
                let total: f64 = n0.iter().sum();
                if duration == 0.0 || total == 0.0 {
                    return Ok((*n0, StepStats::default()));
                }
                let drive = drives.as_ref().map(|d| d[i]);
                let relax = options.drift_rate.map(|g| (g, total));
                if drive.is_none() && relax.is_none() && n0[2] == 0.0 && n0[3] == 0.0 {
                    return Ok((*n0, StepStats::default()));
                }
                let tol = Tolerances {
                    rtol: options.rtol,
                    atol: options.atol_fraction * total,
                    max_step: options.max_step_fraction * duration,
                    settle: options.settle_fraction.map(|f| f * total),
                };
                let rhs = |n: &Populations| self.rhs(n, drive.as_ref(), relax);
                let rho = || self.spectral_radius(drive.as_ref(), relax);
                let result = match options.method {
                    Method::Dopri5 => integrate(rhs, *n0, duration, &tol),
                    Method::Rkc => integrate_rkc(rhs, *n0, duration, rho(), &tol),
                    Method::Auto => integrate_auto(rhs, *n0, duration, rho(), &tol),
                };
                result.map_err(|u| Error::Integration {
                    class: i,
                    time: state.time + u.time,
                    step: u.step,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let mut stats = StepStats::default();
        let classes = results
            .into_iter()
            .map(|(n, s)| {
                stats.merge(&s);
                n
            })
            .collect();
        Ok((state.with_classes(classes, state.time + duration), stats))
    }
}
