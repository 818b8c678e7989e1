//! Two-rate relaxation fit, T(t) = A1 exp(-g_s t) - A2 exp(-g_f t) + c.
//!
//! The amplitudes and offset enter linearly and are eliminated by linear least
//! squares (variable projection), leaving a two-parameter search over
//! `u1 = ln g_s` and `u2 = ln(g_f / g_s - 1)`, which keeps `g_f > g_s` by
//! construction. A coarse grid seeds Levenberg-Marquardt.

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::fitting::optimize::{covariance, levenberg_marquardt, FitStatus, LeastSquares, LmSettings};
use crate::{Error, Result};

/// A fitted term must exceed this many standard errors to count as identified.
const SIGNIFICANCE: f64 = 3.0;
const GRID_POINTS: usize = 48;

/// Measured transmission against time.
#[derive(Debug, Clone, PartialEq)]
pub struct RelaxationSeries {
    /// s.
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

impl RelaxationSeries {
    pub fn new(times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if times.len() != values.len() {
            return Err(Error::domain("time and value columns differ in length"));
        }
        if times.iter().chain(&values).any(|v| !v.is_finite()) {
            return Err(Error::domain("relaxation series contains non-finite values"));
        }
        if times.iter().any(|&t| t < 0.0) {
            return Err(Error::domain("relaxation times must be non-negative"));
        }
        Ok(RelaxationSeries { times, values })
    }

    /// Parses `time_s,transmission` CSV. Lines starting with `#` are ignored.
    pub fn from_csv_str(text: &str) -> Result<Self> {
        let mut rows = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        match rows.next() {
            Some((_, h)) if h.split(',').map(str::trim).eq(["time_s", "transmission"]) => {}
            Some((n, h)) => {
                return Err(Error::ingestion(
                    Some(n),
                    format!("expected header `time_s,transmission`, found `{h}`"),
                ))
            }
            None => return Err(Error::ingestion(None, "empty relaxation file")),
        }
        let mut times = Vec::new();
        let mut values = Vec::new();
        for (n, line) in rows {
            let cols: Vec<&str> = line.split(',').map(str::trim).collect();
            if cols.len() != 2 {
                return Err(Error::ingestion(
                    Some(n),
                    format!("expected 2 columns, found {}", cols.len()),
                ));
            }
            let parse = |s: &str| {
                s.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::ingestion(Some(n), format!("`{s}` is not a finite number")))
            };
            times.push(parse(cols[0])?);
            values.push(parse(cols[1])?);
        }
        RelaxationSeries::new(times, values).map_err(|e| Error::ingestion(None, e.to_string()))
    }

    pub fn from_csv_file(path: impl AsRef<Path>) -> Result<Self> {
        RelaxationSeries::from_csv_str(&std::fs::read_to_string(path)?)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "time_s,transmission")?;
        for (t, v) in self.times.iter().zip(&self.values) {
            writeln!(w, "{t:e},{v:e}")?;
        }
        Ok(())
    }
}

/// What the data could determine.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum RelaxationFlag {
    /// Both terms significant; all five parameters are meaningful.
    Identified,
    /// Only one exponential is supported by the data: `fast_rate` is NaN and
    /// `amplitude_fast` is zero.
    FastTermUnidentified,
    /// No significant time dependence: both rates are NaN, `offset` is the mean.
    Constant,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RelaxationFit {
    /// A1.
    pub amplitude_slow: f64,
    /// A2.
    pub amplitude_fast: f64,
    /// g_s (1/s).
    pub slow_rate: f64,
    /// g_f (1/s).
    pub fast_rate: f64,
    /// c.
    pub offset: f64,
    /// Covariance of (A1, A2, g_s, g_f, c); for a single-exponential fit only the
    /// (A1, g_s, c) entries are filled and the rest are NaN.
    pub covariance: Option<[[f64; 5]; 5]>,
    pub rss: f64,
    pub flag: RelaxationFlag,
    pub status: FitStatus,
}

#[derive(Serialize)]
struct Report {
    flag: RelaxationFlag,
    status: String,
    rss: f64,
    amplitude_slow: f64,
    amplitude_fast: f64,
    #[serde(rename = "slow_rate_per_s", skip_serializing_if = "Option::is_none")]
    slow_rate: Option<f64>,
    #[serde(rename = "fast_rate_per_s", skip_serializing_if = "Option::is_none")]
    fast_rate: Option<f64>,
    offset: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    uncertainty: Option<Uncertainty>,
}

#[derive(Serialize)]
struct Uncertainty {
    #[serde(skip_serializing_if = "Option::is_none")]
    amplitude_slow: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    amplitude_fast: Option<f64>,
    #[serde(rename = "slow_rate_per_s", skip_serializing_if = "Option::is_none")]
    slow_rate: Option<f64>,
    #[serde(rename = "fast_rate_per_s", skip_serializing_if = "Option::is_none")]
    fast_rate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    offset: Option<f64>,
}

impl RelaxationFit {
    pub fn evaluate(&self, t: f64) -> f64 {
        let fast = if self.amplitude_fast == 0.0 {
            0.0
        } else {
            self.amplitude_fast * (-self.fast_rate * t).exp()
        };
        let slow = if self.amplitude_slow == 0.0 {
            0.0
        } else {
            self.amplitude_slow * (-self.slow_rate * t).exp()
        };
        slow - fast + self.offset
    }

    /// One-sigma errors of (A1, A2, g_s, g_f, c), NaN where not available.
    pub fn standard_errors(&self) -> Option<[f64; 5]> {
        self.covariance.map(|c| std::array::from_fn(|i| c[i][i].sqrt()))
    }

    /// TOML report: `flag`, `status`, `rss`, the parameters and an
    /// `[uncertainty]` table of one-sigma errors. Undefined rates are omitted.
    pub fn report(&self) -> String {
        let finite = |v: f64| v.is_finite().then_some(v);
        let r = Report {
            flag: self.flag,
            status: self.status.to_string(),
            rss: self.rss,
            amplitude_slow: self.amplitude_slow,
            amplitude_fast: self.amplitude_fast,
            slow_rate: finite(self.slow_rate),
            fast_rate: finite(self.fast_rate),
            offset: self.offset,
            uncertainty: self.standard_errors().map(|e| Uncertainty {
                amplitude_slow: finite(e[0]),
                amplitude_fast: finite(e[1]),
                slow_rate: finite(e[2]),
                fast_rate: finite(e[3]),
                offset: finite(e[4]),
            }),
        };
        toml::to_string(&r).expect("report serializes")
    }
}

/// Linear least squares for the coefficients of `basis` columns; returns the
/// coefficients and residuals `y - B c`.
fn project(basis: &DMatrix<f64>, y: &DVector<f64>) -> Option<(DVector<f64>, DVector<f64>)> {
    let svd = basis.clone().svd(true, true);
    let c = svd.solve(y, 1e-13 * svd.singular_values.max()).ok()?;
    let r = y - basis * &c;
    Some((c, r))
}

fn two_term_basis(t: &[f64], gs: f64, gf: f64) -> DMatrix<f64> {
    DMatrix::from_fn(t.len(), 3, |i, j| match j {
        0 => (-gs * t[i]).exp(),
        1 => -(-gf * t[i]).exp(),
        _ => 1.0,
    })
}

fn one_term_basis(t: &[f64], g: f64) -> DMatrix<f64> {
    DMatrix::from_fn(t.len(), 2, |i, j| if j == 0 { (-g * t[i]).exp() } else { 1.0 })
}

fn rates(u: &[f64]) -> (f64, f64) {
    let gs = u[0].exp();
    (gs, gs * (1.0 + u[1].exp()))
}

/// Rates the sampling can resolve: from a tenth of the inverse span to ten
/// times the inverse of the finest spacing.
fn rate_range(times: &[f64]) -> (f64, f64) {
    let mut t: Vec<f64> = times.to_vec();
    t.sort_by(f64::total_cmp);
    t.dedup();
    let span = t[t.len() - 1] - t[0];
    let finest = t.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
    (0.1 / span, 10.0 / finest)
}

/// Fits `T(t) = A1 exp(-g_s t) - A2 exp(-g_f t) + c` to `series`.
pub fn fit_relaxation(series: &RelaxationSeries) -> Result<RelaxationFit> {
    let n = series.times.len();
    let mut distinct = series.times.clone();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < 8 {
        return Err(Error::domain("relaxation fit needs at least 8 distinct time points"));
    }
    let t = &series.times;
    let y = DVector::from_column_slice(&series.values);
    let (g_lo, g_hi) = rate_range(t);
    let (ln_lo, ln_hi) = (g_lo.ln(), g_hi.ln());
    let grid: Vec<f64> = (0..GRID_POINTS)
        .map(|i| ln_lo + (ln_hi - ln_lo) * i as f64 / (GRID_POINTS - 1) as f64)
        .collect();

    let constant = || {
        let mean = series.values.iter().sum::<f64>() / n as f64;
        let rss = series.values.iter().map(|v| (v - mean).powi(2)).sum();
        RelaxationFit {
            amplitude_slow: 0.0,
            amplitude_fast: 0.0,
            slow_rate: f64::NAN,
            fast_rate: f64::NAN,
            offset: mean,
            covariance: None,
            rss,
            flag: RelaxationFlag::Constant,
            status: FitStatus::Converged,
        }
    };
    let scale = series
        .values
        .iter()
        .map(|v| v.abs())
        .fold(0.0, f64::max)
        .max(f64::MIN_POSITIVE);
    let spread = series.values.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b))
        - series.values.iter().fold(f64::INFINITY, |a, &b| a.min(b));
    if spread <= 1e-12 * scale {
        return Ok(constant());
    }

    // Two-term search.
    let residual2 = |u: &[f64]| -> Result<Vec<f64>> {
        let (gs, gf) = rates(u);
        let (_, r) = project(&two_term_basis(t, gs, gf), &y)
            .ok_or_else(|| Error::Numeric("relaxation basis is singular".into()))?;
        Ok(r.as_slice().to_vec())
    };
    let mut seed = (f64::INFINITY, [0.0, 0.0]);
    for (i, &a) in grid.iter().enumerate() {
        for &b in &grid[i + 1..] {
            let u = [a, (b.exp() / a.exp() - 1.0).ln()];
            let cost: f64 = residual2(&u)?.iter().map(|v| v * v).sum();
            if cost < seed.0 {
                seed = (cost, u);
            }
        }
    }
    let lower2 = vec![ln_lo - 3.0, (1e-3f64).ln()];
    let upper2 = vec![ln_hi + 3.0, ln_hi - ln_lo + 6.0];
    let mut p2 = LeastSquares::new(residual2, lower2, upper2, 400);
    p2.eval(&seed.1)?;
    let lm = LmSettings {
        fd_step: 1e-7,
        ftol: 1e-14,
        predicted_tol: 1e-12,
        xtol: 1e-12,
    };
    let status2 = levenberg_marquardt(&mut p2, &lm)?;
    let (gs, gf) = rates(&p2.best_x);
    let (c2, r2) =
        project(&two_term_basis(t, gs, gf), &y).ok_or_else(|| Error::Numeric("relaxation basis is singular".into()))?;
    let rss2: f64 = r2.norm_squared();
    let (a1, a2, c) = (c2[0], c2[1], c2[2]);

    if n > 5 {
        let jac = DMatrix::from_fn(n, 5, |i, j| {
            let es = (-gs * t[i]).exp();
            let ef = (-gf * t[i]).exp();
            match j {
                0 => es,
                1 => -ef,
                2 => -a1 * t[i] * es,
                3 => a2 * t[i] * ef,
                _ => 1.0,
            }
        });
        if let Some(cov) = covariance(&jac, rss2 / (n - 5) as f64) {
            let sd = |i: usize| cov[(i, i)].max(0.0).sqrt();
            let significant = |v: f64, s: f64| v > 0.0 && v > SIGNIFICANCE * s;
            if significant(a1, sd(0)) && significant(a2, sd(1)) && significant(gf, sd(3)) && significant(gs, sd(2)) {
                return Ok(RelaxationFit {
                    amplitude_slow: a1,
                    amplitude_fast: a2,
                    slow_rate: gs,
                    fast_rate: gf,
                    offset: c,
                    covariance: Some(std::array::from_fn(|i| std::array::from_fn(|j| cov[(i, j)]))),
                    rss: rss2,
                    flag: RelaxationFlag::Identified,
                    status: status2,
                });
            }
        }
    }

    // Single exponential.
    let residual1 = |u: &[f64]| -> Result<Vec<f64>> {
        let (_, r) = project(&one_term_basis(t, u[0].exp()), &y)
            .ok_or_else(|| Error::Numeric("relaxation basis is singular".into()))?;
        Ok(r.as_slice().to_vec())
    };
    let mut seed1 = (f64::INFINITY, 0.0);
    for &a in &grid {
        let cost: f64 = residual1(&[a])?.iter().map(|v| v * v).sum();
        if cost < seed1.0 {
            seed1 = (cost, a);
        }
    }
    let mut p1 = LeastSquares::new(residual1, vec![ln_lo - 3.0], vec![ln_hi + 3.0], 200);
    p1.eval(&[seed1.1])?;
    let status1 = levenberg_marquardt(&mut p1, &lm)?;
    let g = p1.best_x[0].exp();
    let (c1, r1) =
        project(&one_term_basis(t, g), &y).ok_or_else(|| Error::Numeric("relaxation basis is singular".into()))?;
    let rss1 = r1.norm_squared();
    let jac = DMatrix::from_fn(n, 3, |i, j| {
        let e = (-g * t[i]).exp();
        match j {
            0 => e,
            1 => -c1[0] * t[i] * e,
            _ => 1.0,
        }
    });
    let Some(cov) = covariance(&jac, rss1 / (n - 3) as f64) else {
        return Ok(constant());
    };
    let sd_a = cov[(0, 0)].max(0.0).sqrt();
    let sd_g = cov[(1, 1)].max(0.0).sqrt();
    if !(c1[0].abs() > SIGNIFICANCE * sd_a && g > SIGNIFICANCE * sd_g) {
        return Ok(constant());
    }
    // Map (A1, g, c) into the five-parameter layout.
    let idx = [Some(0), None, Some(1), None, Some(2)];
    let full = std::array::from_fn(|i| {
        std::array::from_fn(|j| match (idx[i], idx[j]) {
            (Some(a), Some(b)) => cov[(a, b)],
            _ => f64::NAN,
        })
    });
    Ok(RelaxationFit {
        amplitude_slow: c1[0],
        amplitude_fast: 0.0,
        slow_rate: g,
        fast_rate: f64::NAN,
        offset: c1[1],
        covariance: Some(full),
        rss: rss1,
        flag: RelaxationFlag::FastTermUnidentified,
        status: status1,
    })
}
