//! Recovery of pump-back power, linewidth and selected class from a measured
//! optical-depth spectrum by least squares against the rate-equation model.

use serde::Serialize;

use crate::constants::{mhz_to_rad, rad_to_mhz};
use crate::fitting::optimize::{covariance, levenberg_marquardt, nelder_mead, FitStatus, LeastSquares, LmSettings};
use crate::pipeline::{Experiment, PumpBack};
use crate::spectroscopy::{optical_depth, Spectrum};
use crate::{Error, Result};

/// Inclusive box for each fitted parameter, in SI units (W, rad/s, m/s).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParamBounds {
    pub power: (f64, f64),
    pub linewidth: (f64, f64),
    pub velocity: (f64, f64),
}

impl Default for ParamBounds {
    /// 1 uW to 200 mW, 0.1 MHz to 200 MHz, +-500 m/s. No constraint ties the
    /// power to its nominal value.
    fn default() -> Self {
        ParamBounds {
            power: (1e-6, 0.2),
            linewidth: (mhz_to_rad(0.1), mhz_to_rad(200.0)),
            velocity: (-500.0, 500.0),
        }
    }
}

/// Pump-back parameters as seen by the spectrum fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectrumFitParams {
    /// W.
    pub power: f64,
    /// Laser FWHM, rad/s.
    pub linewidth: f64,
    /// Selected class centre, m/s.
    pub velocity: f64,
    pub bounds: ParamBounds,
}

impl SpectrumFitParams {
    /// Parameters with the default bounds.
    pub fn new(power: f64, linewidth: f64, velocity: f64) -> Result<Self> {
        SpectrumFitParams {
            power,
            linewidth,
            velocity,
            bounds: ParamBounds::default(),
        }
        .validated()
    }

    pub fn with_bounds(mut self, bounds: ParamBounds) -> Result<Self> {
        self.bounds = bounds;
        self.validated()
    }

    fn validated(self) -> Result<Self> {
        let b = &self.bounds;
        let ok = |(lo, hi): (f64, f64), v: f64| lo.is_finite() && hi.is_finite() && lo <= v && v <= hi;
        if !(b.power.0 > 0.0 && b.linewidth.0 > 0.0) {
            return Err(Error::domain("power and linewidth bounds must be positive"));
        }
        if !(ok(b.power, self.power) && ok(b.linewidth, self.linewidth) && ok(b.velocity, self.velocity)) {
            return Err(Error::domain(format!(
                "initial parameters {} lie outside their bounds",
                self.describe()
            )));
        }
        Ok(self)
    }

    pub fn pump_back(&self, duration: f64) -> PumpBack {
        PumpBack::new(self.power, self.linewidth, self.velocity, duration)
    }

    /// Human-readable parameter summary for error messages.
    pub fn describe(&self) -> String {
        format!(
            "power = {} mW, linewidth = {} MHz, velocity = {} m/s",
            self.power * 1e3,
            rad_to_mhz(self.linewidth),
            self.velocity
        )
    }

    // Optimizer coordinates: log power, log linewidth, velocity.
    fn to_x(self) -> [f64; 3] {
        [self.power.ln(), self.linewidth.ln(), self.velocity]
    }

    fn from_x(x: &[f64], bounds: ParamBounds) -> Self {
        SpectrumFitParams {
            power: x[0].exp().clamp(bounds.power.0, bounds.power.1),
            linewidth: x[1].exp().clamp(bounds.linewidth.0, bounds.linewidth.1),
            velocity: x[2],
            bounds,
        }
    }

    fn box_x(&self) -> (Vec<f64>, Vec<f64>) {
        let b = &self.bounds;
        (
            vec![b.power.0.ln(), b.linewidth.0.ln(), b.velocity.0],
            vec![b.power.1.ln(), b.linewidth.1.ln(), b.velocity.1],
        )
    }
}

/// Optimizer controls.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    /// Total forward-model evaluations, including the final curvature estimate's.
    pub max_evaluations: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions { max_evaluations: 500 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumFitResult {
    pub params: SpectrumFitParams,
    /// One-sigma uncertainties of (power, linewidth, velocity) from the curvature
    /// of the objective, when it is non-singular.
    pub uncertainty: Option<[f64; 3]>,
    /// Weighted residual sum of squares.
    pub rss: f64,
    /// measured - model, per grid point (unweighted).
    pub residuals: Vec<f64>,
    pub status: FitStatus,
    /// Accepted steps that lowered the objective.
    pub iterations: usize,
    pub evaluations: usize,
}

#[derive(Serialize)]
struct Report {
    status: String,
    iterations: usize,
    evaluations: usize,
    points: usize,
    rss: f64,
    #[serde(rename = "power_mW")]
    power_mw: f64,
    #[serde(rename = "power_mW_uncertainty", skip_serializing_if = "Option::is_none")]
    power_mw_unc: Option<f64>,
    #[serde(rename = "linewidth_MHz")]
    linewidth_mhz: f64,
    #[serde(rename = "linewidth_MHz_uncertainty", skip_serializing_if = "Option::is_none")]
    linewidth_mhz_unc: Option<f64>,
    velocity_m_per_s: f64,
    #[serde(rename = "velocity_m_per_s_uncertainty", skip_serializing_if = "Option::is_none")]
    velocity_unc: Option<f64>,
}

impl SpectrumFitResult {
    /// TOML report with keys `status`, `iterations`, `evaluations`, `points`, `rss`,
    /// `power_mW`, `linewidth_MHz`, `velocity_m_per_s` and, when available, the
    /// matching `*_uncertainty` keys.
    pub fn report(&self) -> String {
        let u = self.uncertainty;
        let r = Report {
            status: self.status.to_string(),
            iterations: self.iterations,
            evaluations: self.evaluations,
            points: self.residuals.len(),
            rss: self.rss,
            power_mw: self.params.power * 1e3,
            power_mw_unc: u.map(|u| u[0] * 1e3),
            linewidth_mhz: rad_to_mhz(self.params.linewidth),
            linewidth_mhz_unc: u.map(|u| rad_to_mhz(u[1])),
            velocity_m_per_s: self.params.velocity,
            velocity_unc: u.map(|u| u[2]),
        };
        toml::to_string(&r).expect("report serializes")
    }
}

/// Fits the pump-back settings of `experiment` (pump-back of `duration`) to
/// `measured`. Points are weighted by `1/OD_uncertainty` when the spectrum has
/// uncertainties and uniformly otherwise.
///
/// A Nelder-Mead search over (ln P, ln linewidth, v) is refined by
/// Levenberg-Marquardt. Deterministic: no random restarts.
pub fn fit_spectrum(
    measured: &Spectrum,
    experiment: &Experiment,
    duration: f64,
    initial: &SpectrumFitParams,
    options: &FitOptions,
) -> Result<SpectrumFitResult> {
    let initial = initial.validated()?;
    if measured.od.iter().any(|v| !v.is_finite()) {
        return Err(Error::domain("measured spectrum contains non-finite values"));
    }
    let weights: Vec<f64> = match &measured.od_uncertainty {
        Some(sigma) => {
            if sigma.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
                return Err(Error::domain("OD uncertainties must be positive and finite"));
            }
            sigma.iter().map(|s| 1.0 / s).collect()
        }
        None => vec![1.0; measured.od.len()],
    };
    let bounds = initial.bounds;
    let model = |x: &[f64]| -> Result<Vec<f64>> {
        let p = SpectrumFitParams::from_x(x, bounds);
        let state = experiment.after_pump_back(&p.pump_back(duration))?;
        let od = optical_depth(
            &state,
            experiment.ensemble(),
            experiment.species(),
            &measured.grid,
            experiment.probe_settings(),
        )
        .map_err(|e| match e {
            Error::Numeric(m) => Error::Numeric(format!("{m} at {}", p.describe())),
            e => e,
        })?
        .od;
        Ok(od)
    };
    let residuals = |x: &[f64]| -> Result<Vec<f64>> {
        Ok(model(x)?
            .iter()
            .zip(&measured.od)
            .zip(&weights)
            .map(|((m, d), w)| w * (d - m))
            .collect())
    };

    // Leave room for the curvature estimate at the end.
    let budget = options.max_evaluations.saturating_sub(3).max(1);
    let (lower, upper) = initial.box_x();
    let mut problem = LeastSquares::new(residuals, lower, upper, budget);
    let x0 = initial.to_x();
    let simplex_budget = (budget * 2) / 5;
    nelder_mead(&mut problem, &x0, &[0.15, 0.15, 10.0], simplex_budget, 1e-4)?;
    let status = if problem.best_cost == 0.0 {
        FitStatus::Converged
    } else if problem.exhausted() {
        FitStatus::MaxIterations
    } else {
        levenberg_marquardt(&mut problem, &LmSettings::default())?
    };

    let x = problem.best_x.clone();
    let r = problem.best_r.clone();
    let rss = problem.best_cost;
    let params = SpectrumFitParams::from_x(&x, bounds);
    let n = r.len();
    let uncertainty = if n > 3 && rss > 0.0 {
        let jac = problem
            .jacobian(&x, &r, LmSettings::default().fd_step, true)?
            .expect("unbudgeted");
        let scale = if measured.od_uncertainty.is_some() {
            1.0
        } else {
            rss / (n - 3) as f64
        };
        covariance(&jac, scale).map(|c| {
            let s = |i: usize| c[(i, i)].max(0.0).sqrt();
            [params.power * s(0), params.linewidth * s(1), s(2)]
        })
    } else {
        None
    };
    let unweighted: Vec<f64> = r.iter().zip(&weights).map(|(r, w)| r / w).collect();
    Ok(SpectrumFitResult {
        params,
        uncertainty,
        rss,
        residuals: unweighted,
        status,
        iterations: problem.improvements,
        evaluations: problem.evaluations,
    })
}
