use std::f64::consts::PI;
use std::path::Path;

use serde::Deserialize;

use crate::coherence::LadderConfig;
use crate::constants::{mhz_to_rad, BOLTZMANN, HBAR, SPEED_OF_LIGHT, TORR};
use crate::{Error, Result};

const CS133_TOML: &str = include_str!("../../data/cs133.toml");
const RB87_TOML: &str = include_str!("../../data/rb87.toml");

const SCHEMA: &str = "vsp-species/1";

/// A hyperfine level of a fine-structure manifold.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperfineLevel {
    pub label: String,
    pub f: u32,
    pub degeneracy: u32,
    /// Energy offset from the manifold centroid (rad/s).
    pub offset: f64,
}

impl HyperfineLevel {
    fn new(f: u32, offset: f64, primed: bool) -> Self {
        let label = if primed { format!("F'={f}") } else { format!("F={f}") };
        HyperfineLevel {
            label,
            f,
            degeneracy: 2 * f + 1,
            offset,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifold {
    pub name: String,
    pub j: f64,
    /// Sorted by increasing F.
    pub levels: Vec<HyperfineLevel>,
}

impl Manifold {
    pub fn level_index(&self, f: u32) -> Option<usize> {
        self.levels.iter().position(|l| l.f == f)
    }

    fn degeneracy(&self) -> f64 {
        2.0 * self.j + 1.0
    }
}

/// An excited fine-structure manifold together with its optical line.
#[derive(Debug, Clone, PartialEq)]
pub struct Line {
    pub name: String,
    pub manifold: Manifold,
    /// Centroid-to-centroid angular frequency (rad/s).
    pub omega: f64,
    /// Total spontaneous decay rate of every level in the manifold (1/s).
    pub decay_rate: f64,
}

/// Index of a transition in [`Species::transitions`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TransitionId(pub usize);

/// An excited hyperfine level, addressed by line and level index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ExcitedLevel {
    pub line: usize,
    pub level: usize,
}

/// Electric-dipole transition between a ground and an excited hyperfine level.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub line: usize,
    /// Index into the ground manifold.
    pub lower: usize,
    /// Index into the line's excited manifold.
    pub upper: usize,
    /// Resonance angular frequency (rad/s).
    pub omega0: f64,
    /// Spontaneous rate A_{F'->F} (1/s).
    pub a_coeff: f64,
    /// Absorption coefficient B_{F->F'} (m^3 / (J s^2)), defined against the spectral
    /// energy density per unit angular frequency.
    pub b_coeff: f64,
    /// Natural FWHM linewidth (rad/s).
    pub linewidth: f64,
    /// Relative hyperfine strength factor S_{FF'}.
    pub strength: f64,
}

impl Transition {
    pub fn excited(&self) -> ExcitedLevel {
        ExcitedLevel {
            line: self.line,
            level: self.upper,
        }
    }
}

/// log10(P / Torr) = a - b / T, solid below the melting point and liquid above.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
pub struct VapourPressure {
    #[serde(rename = "melting_K")]
    pub melting_point: f64,
    pub solid: VapourCoefficients,
    pub liquid: VapourCoefficients,
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
pub struct VapourCoefficients {
    pub a: f64,
    pub b: f64,
}

impl VapourPressure {
    /// Saturated vapour pressure (Pa).
    pub fn pressure(&self, temperature: f64) -> f64 {
        let c = if temperature < self.melting_point {
            self.solid
        } else {
            self.liquid
        };
        10f64.powf(c.a - c.b / temperature) * TORR
    }

    /// Saturated number density (atoms/m^3) from the ideal gas law.
    pub fn number_density(&self, temperature: f64) -> f64 {
        self.pressure(temperature) / (BOLTZMANN * temperature)
    }
}

/// The species' default pump, pump-back and probe reference transitions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PumpingTransitions {
    pub pump: TransitionId,
    pub pump_back: TransitionId,
    pub probe_reference: TransitionId,
}

#[derive(Debug, Clone)]
pub struct Species {
    pub name: String,
    pub mass: f64,
    pub ground: Manifold,
    pub lines: Vec<Line>,
    pub transitions: Vec<Transition>,
    /// Ground level taking part in the memory (|g>, F=4 for Cs).
    pub memory_level: usize,
    /// Auxiliary ground level (|aux>, F=3 for Cs).
    pub aux_level: usize,
    pub defaults: PumpingTransitions,
    pub vapour_pressure: VapourPressure,
    pub ladders: Vec<LadderConfig>,
    pub provenance: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSpecies {
    schema: String,
    name: String,
    mass_kg: f64,
    provenance: String,
    ground: RawGround,
    lines: Vec<RawLine>,
    scheme: RawScheme,
    vapour_pressure: VapourPressure,
    #[serde(default)]
    ladders: Vec<RawLadder>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGround {
    name: String,
    j: f64,
    memory_f: u32,
    aux_f: u32,
    levels: Vec<RawLevel>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLevel {
    f: u32,
    #[serde(rename = "offset_MHz")]
    offset_mhz: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLine {
    name: String,
    upper: String,
    j: f64,
    #[serde(rename = "frequency_THz")]
    frequency_thz: f64,
    lifetime_ns: f64,
    levels: Vec<RawLevel>,
    strengths: Vec<RawStrength>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawStrength {
    lower: u32,
    upper: u32,
    s: [u32; 2],
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTransitionRef {
    line: String,
    lower: u32,
    upper: u32,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScheme {
    pump: RawTransitionRef,
    pump_back: RawTransitionRef,
    probe_reference: RawTransitionRef,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLadder {
    name: String,
    signal_nm: f64,
    control_nm: f64,
    storage_lifetime_ns: f64,
    #[serde(rename = "temperature_K")]
    temperature_k: f64,
}

fn build_manifold(name: &str, j: f64, raw: &[RawLevel], primed: bool) -> Result<Manifold> {
    let mut levels: Vec<HyperfineLevel> = raw
        .iter()
        .map(|l| HyperfineLevel::new(l.f, mhz_to_rad(l.offset_mhz), primed))
        .collect();
    levels.sort_by_key(|l| l.f);
    for pair in levels.windows(2) {
        if pair[0].f == pair[1].f {
            return Err(Error::config(format!("{name}: duplicate level F={}", pair[0].f)));
        }
        if !(pair[0].offset < pair[1].offset) {
            return Err(Error::config(format!(
                "{name}: hyperfine offsets must increase with F ({} vs {})",
                pair[0].label, pair[1].label
            )));
        }
    }
    if !(j > 0.0) || (2.0 * j).fract() != 0.0 {
        return Err(Error::config(format!("{name}: J must be a positive half-integer")));
    }
    Ok(Manifold {
        name: name.to_string(),
        j,
        levels,
    })
}

impl Species {
    pub fn cesium() -> Species {
        Species::from_toml_str(CS133_TOML).expect("bundled Cs-133 data is valid")
    }

    pub fn rubidium87() -> Species {
        Species::from_toml_str(RB87_TOML).expect("bundled Rb-87 data is valid")
    }

    /// Looks up a bundled species by name ("Cs-133"/"cs"/"Rb-87"/"rb87", case-insensitive).
    pub fn bundled(name: &str) -> Option<Species> {
        match name.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "cs" | "cs133" | "cesium" | "caesium" => Some(Species::cesium()),
            "rb87" | "rubidium87" => Some(Species::rubidium87()),
            _ => None,
        }
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Species> {
        let text = std::fs::read_to_string(path.as_ref())?;
        Species::from_toml_str(&text)
    }

    pub fn from_toml_str(text: &str) -> Result<Species> {
        let raw: RawSpecies = toml::from_str(text).map_err(|e| Error::config(format!("species file: {e}")))?;
        if raw.schema != SCHEMA {
            return Err(Error::config(format!(
                "unsupported species schema '{}', expected '{SCHEMA}'",
                raw.schema
            )));
        }
        if !(raw.mass_kg > 0.0) {
            return Err(Error::config("atomic mass must be positive"));
        }

        let ground = build_manifold(&raw.ground.name, raw.ground.j, &raw.ground.levels, false)?;
        if ground.levels.len() != 2 {
            return Err(Error::config(format!(
                "expected exactly two ground hyperfine levels, found {}",
                ground.levels.len()
            )));
        }
        let memory_level = ground
            .level_index(raw.ground.memory_f)
            .ok_or_else(|| Error::config("memory_f is not a ground level"))?;
        let aux_level = ground
            .level_index(raw.ground.aux_f)
            .ok_or_else(|| Error::config("aux_f is not a ground level"))?;
        if memory_level == aux_level {
            return Err(Error::config("memory and auxiliary levels must differ"));
        }

        let mut lines = Vec::with_capacity(raw.lines.len());
        let mut transitions = Vec::new();
        for (li, rl) in raw.lines.iter().enumerate() {
            let manifold = build_manifold(&rl.upper, rl.j, &rl.levels, true)?;
            if !(rl.frequency_thz > 0.0) || !(rl.lifetime_ns > 0.0) {
                return Err(Error::config(format!(
                    "{}: frequency and lifetime must be positive",
                    rl.name
                )));
            }
            let line = Line {
                name: rl.name.clone(),
                manifold,
                omega: 2.0 * PI * rl.frequency_thz * 1e12,
                decay_rate: 1.0 / (rl.lifetime_ns * 1e-9),
            };
            for s in &rl.strengths {
                transitions.push(build_transition(&ground, &line, li, s)?);
            }
            lines.push(line);
        }

        let mut species = Species {
            name: raw.name,
            mass: raw.mass_kg,
            ground,
            lines,
            transitions,
            memory_level,
            aux_level,
            defaults: PumpingTransitions {
                pump: TransitionId(0),
                pump_back: TransitionId(0),
                probe_reference: TransitionId(0),
            },
            vapour_pressure: raw.vapour_pressure,
            ladders: Vec::new(),
            provenance: raw.provenance.trim().to_string(),
        };
        let lookup = |r: &RawTransitionRef| {
            species.find_transition(&r.line, r.lower, r.upper).ok_or_else(|| {
                Error::config(format!(
                    "scheme references unknown transition {} {}->{}",
                    r.line, r.lower, r.upper
                ))
            })
        };
        let defaults = PumpingTransitions {
            pump: lookup(&raw.scheme.pump)?,
            pump_back: lookup(&raw.scheme.pump_back)?,
            probe_reference: lookup(&raw.scheme.probe_reference)?,
        };
        species.defaults = defaults;
        species.ladders = raw
            .ladders
            .iter()
            .map(|l| {
                LadderConfig::new(
                    &l.name,
                    l.signal_nm * 1e-9,
                    l.control_nm * 1e-9,
                    l.storage_lifetime_ns * 1e-9,
                    l.temperature_k,
                )
                .map(|c| c.with_species(&species.name))
            })
            .collect::<Result<_>>()?;
        species.validate()?;
        Ok(species)
    }

    /// Checks the invariants of the level and transition tables.
    pub fn validate(&self) -> Result<()> {
        for (li, line) in self.lines.iter().enumerate() {
            for lower in 0..self.ground.levels.len() {
                let total: f64 = self
                    .transitions
                    .iter()
                    .filter(|t| t.line == li && t.lower == lower)
                    .map(|t| t.strength)
                    .sum();
                if total > 0.0 && (total - 1.0).abs() > 1e-12 {
                    return Err(Error::config(format!(
                        "{}: strengths from {} sum to {total}, expected 1",
                        line.name, self.ground.levels[lower].label
                    )));
                }
            }
            for upper in 0..line.manifold.levels.len() {
                let branching: f64 = self.decay_rates(ExcitedLevel { line: li, level: upper }).iter().sum();
                if (branching / line.decay_rate - 1.0).abs() > 1e-9 {
                    return Err(Error::config(format!(
                        "{} {}: spontaneous branching sums to {}, expected 1",
                        line.name,
                        line.manifold.levels[upper].label,
                        branching / line.decay_rate
                    )));
                }
            }
        }
        for t in &self.transitions {
            let (gl, gu) = self.degeneracies(t);
            let b_emission = t.a_coeff * PI * PI * SPEED_OF_LIGHT.powi(3) / (HBAR * t.omega0.powi(3));
            let lhs = gl * t.b_coeff;
            let rhs = gu * b_emission;
            if ((lhs - rhs) / rhs).abs() > 1e-9 {
                return Err(Error::config(format!(
                    "Einstein relation violated for {}",
                    self.transition_label(t)
                )));
            }
        }
        Ok(())
    }

    /// Finds a transition by line name and the F quantum numbers of its levels.
    pub fn find_transition(&self, line: &str, lower_f: u32, upper_f: u32) -> Option<TransitionId> {
        self.transitions
            .iter()
            .position(|t| {
                let l = &self.lines[t.line];
                l.name == line && self.ground.levels[t.lower].f == lower_f && l.manifold.levels[t.upper].f == upper_f
            })
            .map(TransitionId)
    }

    /// Parses "D2:4-5" style transition names.
    pub fn parse_transition(&self, spec: &str) -> Result<TransitionId> {
        let err = || Error::config(format!("bad transition '{spec}', expected e.g. D2:4-5"));
        let (line, fs) = spec.split_once(':').ok_or_else(err)?;
        let (lo, up) = fs.split_once('-').ok_or_else(err)?;
        let lo: u32 = lo.trim().parse().map_err(|_| err())?;
        let up: u32 = up.trim().parse().map_err(|_| err())?;
        self.find_transition(line.trim(), lo, up)
            .ok_or_else(|| Error::config(format!("{} has no transition {spec}", self.name)))
    }

    pub fn transition(&self, id: TransitionId) -> &Transition {
        &self.transitions[id.0]
    }

    pub fn transition_label(&self, t: &Transition) -> String {
        let line = &self.lines[t.line];
        format!(
            "{}:{}-{}",
            line.name, self.ground.levels[t.lower].f, line.manifold.levels[t.upper].f
        )
    }

    /// Degeneracies (g_F, g_F') of a transition's levels.
    pub fn degeneracies(&self, t: &Transition) -> (f64, f64) {
        let gl = self.ground.levels[t.lower].degeneracy as f64;
        let gu = self.lines[t.line].manifold.levels[t.upper].degeneracy as f64;
        (gl, gu)
    }

    /// Spontaneous rates from an excited level into each ground level (1/s).
    pub fn decay_rates(&self, level: ExcitedLevel) -> Vec<f64> {
        let mut rates = vec![0.0; self.ground.levels.len()];
        for t in self
            .transitions
            .iter()
            .filter(|t| t.line == level.line && t.upper == level.level)
        {
            rates[t.lower] += t.a_coeff;
        }
        rates
    }

    /// Transitions out of a ground level within a line (the probed set for that line).
    pub fn transitions_from(&self, line: usize, lower: usize) -> Vec<TransitionId> {
        (0..self.transitions.len())
            .filter(|&i| self.transitions[i].line == line && self.transitions[i].lower == lower)
            .map(TransitionId)
            .collect()
    }

    pub fn line_index(&self, name: &str) -> Option<usize> {
        self.lines.iter().position(|l| l.name == name)
    }

    pub fn ladder(&self, name: &str) -> Option<&LadderConfig> {
        self.ladders.iter().find(|l| l.name == name)
    }
}

fn build_transition(ground: &Manifold, line: &Line, li: usize, s: &RawStrength) -> Result<Transition> {
    let lower = ground
        .level_index(s.lower)
        .ok_or_else(|| Error::config(format!("{}: unknown lower F={}", line.name, s.lower)))?;
    let upper = line
        .manifold
        .level_index(s.upper)
        .ok_or_else(|| Error::config(format!("{}: unknown upper F'={}", line.name, s.upper)))?;
    if (s.lower as i64 - s.upper as i64).abs() > 1 {
        return Err(Error::config(format!(
            "{}: F={} -> F'={} violates the dipole selection rule",
            line.name, s.lower, s.upper
        )));
    }
    if s.s[1] == 0 || s.s[0] == 0 {
        return Err(Error::config(format!(
            "{}: strength must be a positive fraction",
            line.name
        )));
    }
    let strength = s.s[0] as f64 / s.s[1] as f64;
    let gl = ground.levels[lower].degeneracy as f64;
    let gu = line.manifold.levels[upper].degeneracy as f64;
    let omega0 = line.omega + line.manifold.levels[upper].offset - ground.levels[lower].offset;
    // Branching F' -> F follows from S_{FF'} and the degeneracies; B from the same S.
    let branching = strength * gl * line.manifold.degeneracy() / (gu * ground.degeneracy());
    let a_coeff = line.decay_rate * branching;
    let b_line = line.manifold.degeneracy() / ground.degeneracy() * line.decay_rate * PI * PI * SPEED_OF_LIGHT.powi(3)
        / (HBAR * omega0.powi(3));
    Ok(Transition {
        line: li,
        lower,
        upper,
        omega0,
        a_coeff,
        b_coeff: strength * b_line,
        linewidth: line.decay_rate,
        strength,
    })
}
