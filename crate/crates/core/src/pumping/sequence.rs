use std::io::Write;
use std::path::Path;

use serde::Deserialize;

use crate::atomic_data::{Direction, Species};
use crate::constants::mhz_to_rad;
use crate::pumping::{EvolveOptions, LaserStage, PopulationState, RateModel, SpectralProfile, StageRole};
use crate::{Error, Result};

/// Ordered experiment timeline: a one-off preamble followed by a repeated module.
#[derive(Debug, Clone, PartialEq)]
pub struct PulseSequence {
    pub preamble: Vec<LaserStage>,
    pub stages: Vec<LaserStage>,
    pub repeat: usize,
}

impl PulseSequence {
    pub fn new(preamble: Vec<LaserStage>, stages: Vec<LaserStage>, repeat: usize) -> Result<Self> {
        let seq = PulseSequence {
            preamble,
            stages,
            repeat,
        };
        seq.validate()?;
        Ok(seq)
    }

    /// Stages repeated `repeat` times with no preamble.
    pub fn repeated(stages: Vec<LaserStage>, repeat: usize) -> Result<Self> {
        PulseSequence::new(Vec::new(), stages, repeat)
    }

    pub fn validate(&self) -> Result<()> {
        if self.preamble.is_empty() && (self.stages.is_empty() || self.repeat == 0) {
            return Err(Error::config("pulse sequence is empty"));
        }
        for s in self.preamble.iter().chain(&self.stages) {
            s.validate()?;
        }
        Ok(())
    }

    /// Stages in execution order with their repeat index (`None` for the preamble).
    pub fn iter(&self) -> impl Iterator<Item = (Option<usize>, usize, &LaserStage)> {
        let pre = self.preamble.iter().enumerate().map(|(i, s)| (None, i, s));
        let body =
            (0..self.repeat).flat_map(move |r| self.stages.iter().enumerate().map(move |(i, s)| (Some(r), i, s)));
        pre.chain(body)
    }

    pub fn total_duration(&self) -> f64 {
        self.iter().map(|(_, _, s)| s.duration).sum()
    }

    /// Parses a sequence definition file (TOML, see [`StageFile`]).
    pub fn from_toml_str(text: &str, species: &Species) -> Result<Self> {
        let file: SequenceFile = toml::from_str(text).map_err(|e| Error::config(format!("sequence file: {e}")))?;
        file.build(species)
    }

    pub fn from_file(path: impl AsRef<Path>, species: &Species) -> Result<Self> {
        PulseSequence::from_toml_str(&std::fs::read_to_string(path)?, species)
    }
}

/// State after one stage of a sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub repeat: Option<usize>,
    pub stage: usize,
    pub role: StageRole,
    pub state: PopulationState,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub initial: PopulationState,
    pub snapshots: Vec<Snapshot>,
}

impl Trajectory {
    pub fn final_state(&self) -> &PopulationState {
        self.snapshots.last().map(|s| &s.state).unwrap_or(&self.initial)
    }

    /// Snapshots taken right after stages of `role`.
    pub fn after(&self, role: StageRole) -> impl Iterator<Item = &Snapshot> {
        self.snapshots.iter().filter(move |s| s.role == role)
    }

    /// CSV export with columns `time,vz,n3,n4,ne1,ne2`, one row per class per snapshot.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "time,vz,n3,n4,ne1,ne2")?;
        for state in std::iter::once(&self.initial).chain(self.snapshots.iter().map(|s| &s.state)) {
            for (v, c) in state.grid().velocities().iter().zip(state.classes()) {
                writeln!(w, "{:e},{},{:e},{:e},{:e},{:e}", state.time, v, c[0], c[1], c[2], c[3])?;
            }
        }
        Ok(())
    }
}

impl RateModel {
    /// Applies every stage of `sequence` in order, recording a snapshot after each.
    pub fn run_sequence(
        &self,
        initial: &PopulationState,
        sequence: &PulseSequence,
        options: &EvolveOptions,
    ) -> Result<Trajectory> {
        sequence.validate()?;
        let mut snapshots = Vec::new();
        let mut state = initial.clone();
        for (repeat, index, stage) in sequence.iter() {
            state = self.evolve_stage(&state, stage, options)?;
            snapshots.push(Snapshot {
                repeat,
                stage: index,
                role: stage.role,
                state: state.clone(),
            });
        }
        Ok(Trajectory {
            initial: initial.clone(),
            snapshots,
        })
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SequenceFile {
    #[serde(default)]
    preamble: Vec<StageFile>,
    #[serde(default)]
    stages: Vec<StageFile>,
    #[serde(default = "one")]
    repeat: usize,
}

fn one() -> usize {
    1
}

/// One stage of a sequence definition file. Units are carried in the key names.
///
/// ```toml
/// [[stages]]
/// role = "pump-back"
/// transition = "D1:3-4"
/// power_mW = 4.1
/// linewidth_MHz = 6.0
/// velocity_m_s = -100.0   # or detuning_MHz, relative to the rest resonance
/// duration_us = 1.2
/// beam_radius_mm = 1.5
/// ```
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageFile {
    pub role: StageRole,
    #[serde(default)]
    pub transition: Option<String>,
    #[serde(rename = "power_mW", default)]
    pub power_mw: f64,
    #[serde(rename = "linewidth_MHz", default = "default_linewidth")]
    pub linewidth_mhz: f64,
    #[serde(default)]
    pub velocity_m_s: Option<f64>,
    #[serde(rename = "detuning_MHz", default)]
    pub detuning_mhz: Option<f64>,
    pub duration_us: f64,
    #[serde(default = "default_radius")]
    pub beam_radius_mm: f64,
    #[serde(default = "default_sign")]
    pub propagation_sign: Direction,
    #[serde(default)]
    pub profile: SpectralProfile,
}

fn default_linewidth() -> f64 {
    6.0
}

fn default_radius() -> f64 {
    1.5
}

fn default_sign() -> Direction {
    Direction::Forward
}

impl StageFile {
    pub fn build(&self, species: &Species) -> Result<LaserStage> {
        let duration = self.duration_us * 1e-6;
        let transition = match &self.transition {
            Some(name) => Some(species.parse_transition(name)?),
            None => None,
        };
        let stage = match (self.role.is_driven(), transition) {
            (false, _) => {
                if self.power_mw != 0.0 {
                    return Err(Error::config(format!("{} stage cannot carry power", self.role.name())));
                }
                let base = if self.role == StageRole::Probe {
                    LaserStage::probe(duration)
                } else {
                    LaserStage::dark(duration)
                };
                LaserStage { transition, ..base }
            }
            (true, None) => {
                return Err(Error::config(format!("{} stage needs a transition", self.role.name())));
            }
            (true, Some(id)) => {
                let omega0 = species.transition(id).omega0;
                let center = match (self.velocity_m_s, self.detuning_mhz) {
                    (Some(_), Some(_)) => {
                        return Err(Error::config("give either velocity_m_s or detuning_MHz, not both"));
                    }
                    (_, Some(d)) => omega0 + mhz_to_rad(d),
                    (v, None) => {
                        crate::atomic_data::doppler_shifted_resonance(omega0, v.unwrap_or(0.0), self.propagation_sign)
                    }
                };
                LaserStage {
                    role: self.role,
                    transition: Some(id),
                    center,
                    linewidth: mhz_to_rad(self.linewidth_mhz),
                    power: self.power_mw * 1e-3,
                    beam_radius: self.beam_radius_mm * 1e-3,
                    duration,
                    direction: self.propagation_sign,
                    profile: self.profile,
                }
            }
        };
        stage.validate()?;
        Ok(stage)
    }
}

impl SequenceFile {
    fn build(&self, species: &Species) -> Result<PulseSequence> {
        let build_all = |v: &[StageFile]| v.iter().map(|s| s.build(species)).collect::<Result<Vec<_>>>();
        PulseSequence::new(build_all(&self.preamble)?, build_all(&self.stages)?, self.repeat)
    }
}
