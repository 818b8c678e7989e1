//! Lorentzian fit to a single spectral feature.

use crate::fitting::optimize::{levenberg_marquardt, FitStatus, LeastSquares, LmSettings};
use crate::spectroscopy::Spectrum;
use crate::{Error, Result};

/// `y = amplitude * (w/2)^2 / ((x - center)^2 + (w/2)^2) + offset`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LorentzianFit {
    pub amplitude: f64,
    pub center: f64,
    /// Full width at half maximum `w`, in the units of `x`.
    pub fwhm: f64,
    pub offset: f64,
    /// Coefficient of determination over the fitted points.
    pub r_squared: f64,
    pub status: FitStatus,
}

impl LorentzianFit {
    pub fn evaluate(&self, x: f64) -> f64 {
        let h = 0.5 * self.fwhm;
        self.amplitude * h * h / ((x - self.center).powi(2) + h * h) + self.offset
    }
}

fn shape(p: &[f64], x: f64) -> f64 {
    let h = 0.5 * p[2].exp();
    p[0] * h * h / ((x - p[1]).powi(2) + h * h) + p[3]
}

/// Least-squares Lorentzian through `(x, y)`, seeded from the highest point.
pub fn fit_lorentzian(x: &[f64], y: &[f64]) -> Result<LorentzianFit> {
    if x.len() != y.len() || x.len() < 5 {
        return Err(Error::domain("Lorentzian fit needs at least 5 paired points"));
    }
    let (imax, &ymax) = y
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .expect("non-empty");
    let ymin = y.iter().copied().fold(f64::INFINITY, f64::min);
    let span = x.iter().copied().fold(f64::NEG_INFINITY, f64::max) - x.iter().copied().fold(f64::INFINITY, f64::min);
    if !(span > 0.0) || !(ymax > ymin) {
        return Err(Error::domain("Lorentzian fit needs a non-degenerate feature"));
    }
    // Width guess from the points above half height.
    let half = 0.5 * (ymax + ymin);
    let above: Vec<f64> = x.iter().zip(y).filter(|(_, &v)| v >= half).map(|(&x, _)| x).collect();
    let width = (above.iter().copied().fold(f64::NEG_INFINITY, f64::max)
        - above.iter().copied().fold(f64::INFINITY, f64::min))
    .max(span / x.len() as f64);
    let x0 = [ymax - ymin, x[imax], width.ln(), ymin];

    let residuals = |p: &[f64]| -> Result<Vec<f64>> { Ok(x.iter().zip(y).map(|(&x, &y)| y - shape(p, x)).collect()) };
    let scale = ymax.abs().max(ymin.abs()) * 1e3;
    let mut problem = LeastSquares::new(
        residuals,
        vec![-scale, x[0].min(x[x.len() - 1]) - span, (span * 1e-6).ln(), -scale],
        vec![scale, x[0].max(x[x.len() - 1]) + span, (span * 1e3).ln(), scale],
        400,
    );
    problem.eval(&x0)?;
    let status = levenberg_marquardt(
        &mut problem,
        &LmSettings {
            fd_step: 1e-7,
            ..LmSettings::default()
        },
    )?;
    let p = &problem.best_x;
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let total: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    Ok(LorentzianFit {
        amplitude: p[0],
        center: p[1],
        fwhm: p[2].exp(),
        offset: p[3],
        r_squared: 1.0 - problem.best_cost / total,
        status,
    })
}

/// Fits the highest feature of `spectrum` (x in MHz) over the points within
/// `half_window` half-maximum widths of its peak.
pub fn fit_peak_lorentzian(spectrum: &Spectrum, half_window: f64) -> Result<LorentzianFit> {
    let width = spectrum
        .peak_fwhm_mhz()
        .ok_or_else(|| Error::domain("spectrum peak has no resolvable half-maximum width"))?;
    let (_, center) = spectrum.peak();
    let d = spectrum.detunings_mhz();
    let (x, y): (Vec<f64>, Vec<f64>) = d
        .iter()
        .zip(&spectrum.od)
        .filter(|(x, _)| (*x - center).abs() <= half_window * width)
        .map(|(&x, &y)| (x, y))
        .unzip();
    fit_lorentzian(&x, &y)
}
