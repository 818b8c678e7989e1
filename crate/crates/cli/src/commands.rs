//! One function per subcommand. Each reads the configuration, runs the model and
//! writes its files through [`Outputs`].

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use serde::Serialize;
use vsp_core::atomic_data::{drift_estimates, Species};
use vsp_core::coherence::{CoherenceDecay, LadderConfig, Timescale, VelocityDistribution};
use vsp_core::constants::{mhz_to_rad, trim_digits};
use vsp_core::fitting::{
    fit_peak_lorentzian, fit_relaxation, fit_spectrum, sweep as run_sweep, write_sweep_csv, FitOptions,
    RelaxationSeries,
};
use vsp_core::pipeline::{predict_ladder, Experiment, LadderPrediction, PumpBack};
use vsp_core::pumping::StageRole;
use vsp_core::spectroscopy::{optical_depth, Spectrum};

use crate::config::LoadedConfig;
use crate::error::{CliError, CliResult};
use crate::output::{sha256_hex, Outputs};

fn io(e: std::io::Error) -> CliError {
    CliError::output(e.to_string())
}

fn short_hash(text: &str) -> String {
    sha256_hex(text.as_bytes())[..16].to_string()
}

/// File-name-safe form of a ladder label such as "Cs-133 6D5/2".
fn slug(species: &str, ladder: &str) -> String {
    format!("{species}_{ladder}")
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' })
        .collect()
}

/// A time in ns, or the string "unbounded".
#[derive(Serialize)]
#[serde(untagged)]
enum Nanoseconds {
    Finite(f64),
    Label(&'static str),
}

impl From<Timescale> for Nanoseconds {
    fn from(t: Timescale) -> Self {
        match t.finite() {
            Some(s) => Nanoseconds::Finite(s * 1e9),
            None => Nanoseconds::Label("unbounded"),
        }
    }
}

fn to_toml<T: Serialize>(value: &T) -> CliResult<String> {
    toml::to_string(value).map_err(|e| CliError::output(format!("report serialisation: {e}")))
}

/// Reads a data file, recording it as an input; failures are ingestion errors.
fn read_data(cfg: &LoadedConfig, out: &mut Outputs, path: &Path) -> CliResult<(String, String)> {
    let p = cfg.resolve(path);
    let text = std::fs::read_to_string(&p).map_err(|e| CliError::ingestion(format!("{}: {e}", p.display())))?;
    out.add_input(p.clone());
    Ok((text, p.display().to_string()))
}

fn as_ingestion(e: vsp_core::Error, file: &str) -> CliError {
    let mut e = CliError::from(e).context(file);
    e.kind = crate::error::Kind::Ingestion;
    e
}

#[derive(Serialize)]
struct LorentzianSummary {
    amplitude_od: f64,
    center_mhz: f64,
    fwhm_mhz: f64,
    offset_od: f64,
    r_squared: f64,
}

#[derive(Serialize)]
struct SpectrumSummary {
    file: String,
    peak_od: f64,
    peak_detuning_mhz: f64,
    fwhm_mhz: Option<f64>,
    lorentzian: Option<LorentzianSummary>,
}

fn summarise(file: &str, s: &Spectrum) -> SpectrumSummary {
    let (peak_od, peak_detuning_mhz) = s.peak();
    let lorentzian = fit_peak_lorentzian(s, 3.0).ok().map(|l| LorentzianSummary {
        amplitude_od: l.amplitude,
        center_mhz: l.center,
        fwhm_mhz: l.fwhm,
        offset_od: l.offset,
        r_squared: l.r_squared,
    });
    SpectrumSummary {
        file: file.to_string(),
        peak_od,
        peak_detuning_mhz,
        fwhm_mhz: s.peak_fwhm_mhz(),
        lorentzian,
    }
}

#[derive(Serialize)]
struct SpectrumReport {
    spectra: Vec<SpectrumSummary>,
}

/// OD spectrum after the pump-back (or after every probe window of a pulse
/// sequence) together with the unpumped baseline.
pub fn spectrum(cfg: &LoadedConfig, out: &mut Outputs) -> CliResult<Species> {
    let species = cfg.species()?;
    let x = cfg.experiment(&species, cfg.config.ensemble.temperature_k)?;
    let mut baseline = x.unpumped()?;
    let mut spectra: Vec<(String, Spectrum)> = Vec::new();

    match cfg.sequence(&species)? {
        Some((sequence, text)) => {
            let hash = short_hash(&text);
            let trajectory = x.model().run_sequence(&x.thermal()?, &sequence, x.options())?;
            let probes: Vec<_> = trajectory.after(StageRole::Probe).collect();
            if probes.is_empty() {
                spectra.push(("spectrum.csv".into(), x.spectrum_of(trajectory.final_state())?));
            }
            for (i, snap) in probes.iter().enumerate() {
                spectra.push((format!("spectrum_probe_{}.csv", i + 1), x.spectrum_of(&snap.state)?));
            }
            for (_, s) in &mut spectra {
                s.meta.sequence_hash = Some(hash.clone());
            }
            baseline.meta.sequence_hash = Some(hash);
            out.write("trajectory.csv", |w| Ok(trajectory.write_csv(w)?))?;
        }
        None => {
            let hash = short_hash(&cfg.text);
            let mut s = match &cfg.config.pump_back {
                Some(pb) => x.spectrum(&pb.settings())?,
                None => x.unpumped()?,
            };
            s.meta.sequence_hash = Some(hash.clone());
            baseline.meta.sequence_hash = Some(hash);
            spectra.push(("spectrum.csv".into(), s));
        }
    }

    for (name, s) in &spectra {
        out.write(name, |w| Ok(s.write_csv(w)?))?;
    }
    out.write("baseline.csv", |w| Ok(baseline.write_csv(w)?))?;
    let report = SpectrumReport {
        spectra: spectra.iter().map(|(n, s)| summarise(n, s)).collect(),
    };
    out.write_text("spectrum_summary.toml", &to_toml(&report)?)?;
    Ok(species)
}

#[derive(Serialize)]
struct LadderDephasing {
    species: String,
    ladder: String,
    k_r_per_m: f64,
    storage_lifetime_ns: f64,
    dephasing_thermal_ns: Nanoseconds,
    lifetime_thermal_ns: f64,
    dephasing_vsp_ns: Option<Nanoseconds>,
    lifetime_vsp_ns: Option<f64>,
    beta: Option<f64>,
}

#[derive(Serialize)]
struct DriftSummary {
    dwell_us: f64,
    three_sigma_distance_mm: f64,
    drift_rate_per_s: f64,
}

#[derive(Serialize)]
struct DephasingReport {
    temperature_k: f64,
    velocity_std_m_s: f64,
    selected_mean_m_s: Option<f64>,
    selected_std_m_s: Option<f64>,
    drift: Option<DriftSummary>,
    ladders: Vec<LadderDephasing>,
}

fn write_distributions(
    w: &mut impl Write,
    thermal: &VelocityDistribution,
    selected: Option<&VelocityDistribution>,
) -> CliResult<()> {
    match selected {
        Some(_) => writeln!(w, "vz_m_s,thermal_per_m_s,selected_per_m_s").map_err(io)?,
        None => writeln!(w, "vz_m_s,thermal_per_m_s").map_err(io)?,
    }
    for (i, v) in thermal.grid().velocities().iter().enumerate() {
        match selected {
            Some(s) => writeln!(w, "{v},{:e},{:e}", thermal.density()[i], s.density()[i]).map_err(io)?,
            None => writeln!(w, "{v},{:e}", thermal.density()[i]).map_err(io)?,
        }
    }
    Ok(())
}

/// Coherence decay curves and timescales for every configured ladder.
pub fn dephasing(cfg: &LoadedConfig, out: &mut Outputs) -> CliResult<Species> {
    let species = cfg.species()?;
    let temperature = cfg.config.ensemble.temperature_k;
    let x = cfg.experiment(&species, temperature)?;
    let thermal = x.thermal_distribution()?;
    let pump_back = cfg.config.pump_back.as_ref().map(|pb| pb.settings());
    let selected = pump_back.map(|pb| x.memory_distribution(&pb)).transpose()?;

    let d = &cfg.config.dephasing;
    let times: Vec<f64> = (0..d.points)
        .map(|i| d.max_time_ns * 1e-9 * i as f64 / (d.points - 1) as f64)
        .collect();

    let mut rows = Vec::new();
    for (sp, ladder) in cfg.ladders(&species)? {
        if sp.name != species.name {
            return Err(CliError::config(format!(
                "ladder {} belongs to {}, but the simulated species is {}",
                ladder.name, sp.name, species.name
            )));
        }
        let stem = slug(&sp.name, &ladder.name);
        let th = CoherenceDecay::compute(&thermal, &ladder, &times)?;
        out.write(&format!("coherence_{stem}_thermal.csv"), |w| Ok(th.write_csv(w)?))?;
        let vsp = match &selected {
            Some(f) => {
                let decay = CoherenceDecay::compute(f, &ladder, &times)?;
                out.write(&format!("coherence_{stem}_vsp.csv"), |w| Ok(decay.write_csv(w)?))?;
                Some(decay)
            }
            None => None,
        };
        rows.push(LadderDephasing {
            species: sp.name.clone(),
            ladder: ladder.name.clone(),
            k_r_per_m: th.k_r,
            storage_lifetime_ns: trim_digits(ladder.storage_lifetime * 1e9),
            dephasing_thermal_ns: th.dephasing_time.into(),
            lifetime_thermal_ns: th.memory_lifetime * 1e9,
            dephasing_vsp_ns: vsp.as_ref().map(|v| v.dephasing_time.into()),
            lifetime_vsp_ns: vsp.as_ref().map(|v| v.memory_lifetime * 1e9),
            beta: vsp.as_ref().map(|v| v.memory_lifetime / th.memory_lifetime),
        });
    }
    out.write("velocity_distribution.csv", |w| {
        write_distributions(w, &thermal, selected.as_ref())
    })?;

    let drift = match pump_back {
        Some(pb) if pb.duration > 0.0 => {
            let e = drift_estimates(&cfg.geometry()?, x.ensemble(), &species, pb.duration)?;
            Some(DriftSummary {
                dwell_us: trim_digits(pb.duration * 1e6),
                three_sigma_distance_mm: e.three_sigma_distance * 1e3,
                drift_rate_per_s: e.drift_rate,
            })
        }
        _ => None,
    };
    let report = DephasingReport {
        temperature_k: temperature,
        velocity_std_m_s: x.ensemble().velocity_std(&species),
        selected_mean_m_s: selected.as_ref().map(|f| f.mean()),
        selected_std_m_s: selected.as_ref().map(|f| f.std_dev()),
        drift,
        ladders: rows,
    };
    out.write_text("dephasing.toml", &to_toml(&report)?)?;
    Ok(species)
}

fn write_prediction_table(w: &mut impl Write, rows: &[LadderPrediction]) -> CliResult<()> {
    writeln!(
        w,
        "species,ladder,temperature_K,k_r_per_m,storage_lifetime_ns,no_vsp_ns,vsp_ns,beta,dephasing_thermal_ns,dephasing_vsp_ns"
    )
    .map_err(io)?;
    let ns = |t: Timescale| {
        t.finite()
            .map(|s| (s * 1e9).to_string())
            .unwrap_or_else(|| "inf".into())
    };
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{}",
            r.species,
            r.ladder,
            r.temperature,
            r.k_r,
            trim_digits(r.storage_lifetime * 1e9),
            r.no_vsp * 1e9,
            r.vsp * 1e9,
            r.beta,
            ns(r.dephasing_thermal),
            ns(r.dephasing_vsp)
        )
        .map_err(io)?;
    }
    Ok(())
}

/// Ladder lifetime table with and without velocity selection.
pub fn predict(cfg: &LoadedConfig, out: &mut Outputs) -> CliResult<Species> {
    let species = cfg.species()?;
    let p = &cfg.config.predict;
    let mut ladders: Vec<(Species, LadderConfig)> = Vec::new();
    if cfg.config.ladders.is_empty() {
        for name in &p.species {
            let sp = cfg.species_named(name, &species)?;
            ladders.extend(sp.ladders.iter().map(|l| (sp.clone(), l.clone())));
        }
    } else {
        ladders = cfg.ladders(&species)?;
    }
    if ladders.is_empty() {
        return Err(CliError::config("no ladders to predict"));
    }
    let pump_back = p.velocity_selection.then(|| {
        PumpBack::new(
            p.power_mw * 1e-3,
            mhz_to_rad(p.linewidth_mhz),
            p.velocity_m_s,
            p.duration_us * 1e-6,
        )
    });

    // One experiment per species and temperature.
    let mut experiments: HashMap<(String, u64), Experiment> = HashMap::new();
    let mut rows = Vec::new();
    for (sp, mut ladder) in ladders {
        if let Some(t) = p.storage_lifetime_ns {
            ladder.storage_lifetime = t * 1e-9;
        }
        let key = (sp.name.clone(), ladder.temperature.to_bits());
        if !experiments.contains_key(&key) {
            experiments.insert(key.clone(), cfg.experiment(&sp, ladder.temperature)?);
        }
        rows.push(predict_ladder(&experiments[&key], &ladder, pump_back.as_ref())?);
    }
    out.write("predict.csv", |w| write_prediction_table(w, &rows))?;
    Ok(species)
}

/// Fits the pump-back parameters to a measured spectrum.
pub fn fit(cfg: &LoadedConfig, out: &mut Outputs) -> CliResult<Species> {
    let f = cfg
        .config
        .fit
        .as_ref()
        .ok_or_else(|| CliError::config("the fit command needs a [fit] section"))?;
    let species = cfg.species()?;
    let (text, name) = read_data(cfg, out, &f.data)?;
    let measured = Spectrum::from_csv_str(&text, &species).map_err(|e| as_ingestion(e, &name))?;
    let x = cfg.experiment(&species, cfg.config.ensemble.temperature_k)?;
    let duration = f.duration_us * 1e-6;
    let options = FitOptions {
        max_evaluations: f.max_evaluations,
    };
    let result = fit_spectrum(&measured, &x, duration, &f.initial()?, &options)?;

    let state = x.after_pump_back(&result.params.pump_back(duration))?;
    let model = optical_depth(&state, x.ensemble(), x.species(), &measured.grid, x.probe_settings())?;
    out.write_text("fit_report.toml", &result.report())?;
    out.write("fit_model.csv", |w| {
        writeln!(w, "detuning_MHz,OD_measured,OD_model,residual").map_err(io)?;
        for ((d, m), y) in measured.detunings_mhz().iter().zip(&measured.od).zip(&model.od) {
            writeln!(w, "{d},{m:e},{y:e},{:e}", m - y).map_err(io)?;
        }
        Ok(())
    })?;
    Ok(species)
}

/// Fits the two-exponential relaxation model to a transmission time series.
pub fn fit_relaxation_cmd(cfg: &LoadedConfig, out: &mut Outputs) -> CliResult<Species> {
    let r = cfg
        .config
        .fit_relaxation
        .as_ref()
        .ok_or_else(|| CliError::config("the fit-relaxation command needs a [fit_relaxation] section"))?;
    let species = cfg.species()?;
    let (text, name) = read_data(cfg, out, &r.data)?;
    let series = RelaxationSeries::from_csv_str(&text).map_err(|e| as_ingestion(e, &name))?;
    let fit = fit_relaxation(&series)?;
    out.write_text("relaxation_report.toml", &fit.report())?;
    out.write("relaxation_model.csv", |w| {
        writeln!(w, "time_s,transmission,model").map_err(io)?;
        for (t, v) in series.times.iter().zip(&series.values) {
            writeln!(w, "{t:e},{v:e},{:e}", fit.evaluate(*t)).map_err(io)?;
        }
        Ok(())
    })?;
    Ok(species)
}

/// Pump-back power x duration grid: summary table plus every spectrum.
pub fn sweep(cfg: &LoadedConfig, out: &mut Outputs) -> CliResult<Species> {
    let species = cfg.species()?;
    let s = &cfg.config.sweep;
    let ladders = cfg.ladders(&species)?;
    let ladder = match &s.ladder {
        Some(name) => ladders
            .iter()
            .find(|(sp, l)| sp.name == species.name && &l.name == name)
            .map(|(_, l)| l.clone())
            .ok_or_else(|| CliError::config(format!("sweep.ladder {name:?} is not a ladder of {}", species.name)))?,
        None => ladders
            .iter()
            .find(|(sp, _)| sp.name == species.name)
            .map(|(_, l)| l.clone())
            .ok_or_else(|| CliError::config(format!("no ladder configured for {}", species.name)))?,
    };
    let x = cfg.experiment(&species, cfg.config.ensemble.temperature_k)?;
    let powers: Vec<f64> = s.powers_mw.iter().map(|p| p * 1e-3).collect();
    let durations: Vec<f64> = s.durations_us.iter().map(|d| d * 1e-6).collect();
    let linewidth = mhz_to_rad(s.linewidth_mhz);
    let rows = run_sweep(&x, &powers, &durations, linewidth, s.velocity_m_s, &ladder)?;
    out.write("sweep.csv", |w| Ok(write_sweep_csv(&rows, w)?))?;
    out.write("sweep_spectra.csv", |w| {
        writeln!(w, "power_mW,duration_us,detuning_MHz,OD").map_err(io)?;
        for r in &rows {
            let spectrum = x.spectrum(&PumpBack::new(r.power, linewidth, s.velocity_m_s, r.duration))?;
            for (d, od) in spectrum.detunings_mhz().iter().zip(&spectrum.od) {
                writeln!(
                    w,
                    "{},{},{d},{od:e}",
                    trim_digits(r.power * 1e3),
                    trim_digits(r.duration * 1e6)
                )
                .map_err(io)?;
            }
        }
        Ok(())
    })?;
    Ok(species)
}
