use std::ops::{Index, IndexMut};
use std::sync::Arc;

use crate::atomic_data::{maxwell_boltzmann_pdf, Species, ThermalEnsemble};
use crate::pumping::VelocityGrid;
use crate::{Error, Result};

/// Per-class densities indexed by [`Level`].
pub type Populations = [f64; 4];

/// Slots of [`Populations`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Level {
    /// Auxiliary ground level (F=3 for Cs).
    Aux = 0,
    /// Memory ground level (F=4 for Cs).
    Memory = 1,
    /// Excited level addressed by the pump.
    PumpExcited = 2,
    /// Excited level addressed by the pump-back.
    PumpBackExcited = 3,
}

impl Level {
    pub const ALL: [Level; 4] = [Level::Aux, Level::Memory, Level::PumpExcited, Level::PumpBackExcited];
}

impl Index<Level> for [f64; 4] {
    type Output = f64;
    fn index(&self, l: Level) -> &f64 {
        &self[l as usize]
    }
}

impl IndexMut<Level> for [f64; 4] {
    fn index_mut(&mut self, l: Level) -> &mut f64 {
        &mut self[l as usize]
    }
}

/// Populations of every velocity class (atoms/m^3 per m/s) at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct PopulationState {
    pub time: f64,
    grid: Arc<VelocityGrid>,
    classes: Vec<Populations>,
}

impl PopulationState {
    pub fn new(grid: Arc<VelocityGrid>, classes: Vec<Populations>, time: f64) -> Result<Self> {
        if classes.len() != grid.len() {
            return Err(Error::config(format!(
                "{} classes for a grid of {} velocities",
                classes.len(),
                grid.len()
            )));
        }
        Ok(PopulationState { time, grid, classes })
    }

    pub fn grid(&self) -> &VelocityGrid {
        &self.grid
    }

    pub fn shared_grid(&self) -> Arc<VelocityGrid> {
        Arc::clone(&self.grid)
    }

    pub fn classes(&self) -> &[Populations] {
        &self.classes
    }

    pub(crate) fn with_classes(&self, classes: Vec<Populations>, time: f64) -> Self {
        debug_assert_eq!(classes.len(), self.classes.len());
        PopulationState {
            time,
            grid: Arc::clone(&self.grid),
            classes,
        }
    }

    /// Density profile of one level across the grid.
    pub fn level(&self, level: Level) -> Vec<f64> {
        self.classes.iter().map(|c| c[level]).collect()
    }

    pub fn n3(&self) -> Vec<f64> {
        self.level(Level::Aux)
    }

    pub fn n4(&self) -> Vec<f64> {
        self.level(Level::Memory)
    }

    /// Velocity-integrated density of a level (atoms/m^3).
    pub fn integrated(&self, level: Level) -> f64 {
        self.grid.integrate(&self.level(level))
    }

    pub fn class_total(&self, index: usize) -> f64 {
        self.classes[index].iter().sum()
    }

    /// Class-wise sum of two states on the same grid.
    pub fn add(&self, other: &PopulationState) -> Result<Self> {
        if self.grid != other.grid {
            return Err(Error::config("cannot add populations on different grids"));
        }
        let classes = self
            .classes
            .iter()
            .zip(&other.classes)
            .map(|(a, b)| [a[0] + b[0], a[1] + b[1], a[2] + b[2], a[3] + b[3]])
            .collect();
        Ok(self.with_classes(classes, self.time))
    }

    pub fn scaled(&self, factor: f64) -> Self {
        let classes = self.classes.iter().map(|c| c.map(|x| x * factor)).collect();
        self.with_classes(classes, self.time)
    }

    /// Largest relative change of any class total against `reference`.
    pub fn max_conservation_error(&self, reference: &PopulationState) -> f64 {
        self.classes
            .iter()
            .zip(&reference.classes)
            .map(|(a, b)| {
                let (ta, tb): (f64, f64) = (a.iter().sum(), b.iter().sum());
                if tb == 0.0 {
                    ta.abs()
                } else {
                    ((ta - tb) / tb).abs()
                }
            })
            .fold(0.0, f64::max)
    }

    /// Most negative population relative to its class total.
    pub fn min_relative_population(&self) -> f64 {
        self.classes
            .iter()
            .map(|c| {
                let total: f64 = c.iter().sum();
                let min = c.iter().cloned().fold(f64::INFINITY, f64::min);
                if total > 0.0 {
                    min / total
                } else {
                    0.0
                }
            })
            .fold(f64::INFINITY, f64::min)
    }
}

/// Thermal equilibrium: ground levels filled in proportion to their degeneracies,
/// each with a Maxwell-Boltzmann velocity profile; excited levels empty.
pub fn thermal_state(
    ensemble: &ThermalEnsemble,
    species: &Species,
    grid: Arc<VelocityGrid>,
) -> Result<PopulationState> {
    let g_aux = species.ground.levels[species.aux_level].degeneracy as f64;
    let g_mem = species.ground.levels[species.memory_level].degeneracy as f64;
    let (f_aux, f_mem) = (g_aux / (g_aux + g_mem), g_mem / (g_aux + g_mem));
    let classes = grid
        .velocities()
        .iter()
        .map(|&v| {
            let n = ensemble.density * maxwell_boltzmann_pdf(v, ensemble, species)?;
            Ok([n * f_aux, n * f_mem, 0.0, 0.0])
        })
        .collect::<Result<Vec<_>>>()?;
    PopulationState::new(grid, classes, 0.0)
}
