//! Adaptive explicit integrators for small autonomous systems.
//!
//! Two embedded schemes share one driver:
//!
//! * Dormand-Prince 5(4) with the PI step control of Hairer, Norsett & Wanner
//!   (Solving ODEs I, II.4);
//! * the stabilised second-order Runge-Kutta-Chebyshev method of Sommeijer,
//!   Shampine & Verwer (1997), whose stability interval grows with the square of
//!   the stage count.
//!
//! [`integrate_auto`] runs Dormand-Prince while the step is set by accuracy and
//! hands over to Runge-Kutta-Chebyshev once the step is pinned at the stability
//! boundary, which is the usual situation for a velocity class whose excited state
//! decays in nanoseconds during a millisecond stage.

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    pub rtol: f64,
    pub atol: f64,
    pub max_step: f64,
    /// Stop early once `remaining_time * |dy/dt|_1` falls below this bound.
    ///
    /// Only valid for flows that do not expand the 1-norm of derivatives, such as
    /// linear compartmental systems (non-negative off-diagonal rates, zero column
    /// sums), where that product bounds the remaining change of `y`.
    pub settle: Option<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StepStats {
    pub accepted: usize,
    pub rejected: usize,
    pub evaluations: usize,
    /// Accepted steps taken by the Chebyshev scheme.
    pub chebyshev_steps: usize,
    /// True if integration stopped early at a settled state.
    pub settled: bool,
}

impl StepStats {
    pub fn merge(&mut self, other: &StepStats) {
        self.accepted += other.accepted;
        self.rejected += other.rejected;
        self.evaluations += other.evaluations;
        self.chebyshev_steps += other.chebyshev_steps;
        self.settled |= other.settled;
    }
}

/// Failure of the step-size controller.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepUnderflow {
    pub time: f64,
    pub step: f64,
}

// Autonomous right-hand sides only need the tableau weights, not the nodes.
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

const SAFETY: f64 = 0.9;
const MIN_FACTOR: f64 = 0.2;
const MAX_FACTOR: f64 = 10.0;
const BETA: f64 = 0.04;
const MAX_STEPS: usize = 200_000_000;

/// Damping of the Chebyshev stability polynomial.
const RKC_EPS: f64 = 2.0 / 13.0;
/// Dormand-Prince steps with `h * spectral_radius` above this are treated as
/// stability-limited. The radius is a Gershgorin bound, so the true boundary
/// lies somewhat further out.
const DOPRI_STIFF_THRESHOLD: f64 = 2.5;
/// Consecutive stability-limited (or, for Chebyshev, two-stage) steps before switching.
const SWITCH_AFTER: usize = 8;

#[inline]
fn axpy<const N: usize>(y: &[f64; N], h: f64, terms: &[(f64, &[f64; N])]) -> [f64; N] {
    let mut out = *y;
    for (c, k) in terms {
        let hc = h * c;
        for i in 0..N {
            out[i] += hc * k[i];
        }
    }
    out
}

#[inline]
fn scaled_norm<const N: usize>(v: &[f64; N], a: &[f64; N], b: &[f64; N], tol: &Tolerances) -> f64 {
    let s: f64 = (0..N)
        .map(|i| (v[i] / (tol.atol + tol.rtol * a[i].abs().max(b[i].abs()))).powi(2))
        .sum();
    (s / N as f64).sqrt()
}

/// One Dormand-Prince attempt: new state, its derivative (FSAL) and scaled error.
#[inline]
fn dopri_attempt<const N: usize, F>(
    rhs: &F,
    y: &[f64; N],
    k1: &[f64; N],
    h: f64,
    tol: &Tolerances,
) -> ([f64; N], [f64; N], f64)
where
    F: Fn(&[f64; N]) -> [f64; N],
{
    let k2 = rhs(&axpy(y, h, &[(A21, k1)]));
    let k3 = rhs(&axpy(y, h, &[(A31, k1), (A32, &k2)]));
    let k4 = rhs(&axpy(y, h, &[(A41, k1), (A42, &k2), (A43, &k3)]));
    let k5 = rhs(&axpy(y, h, &[(A51, k1), (A52, &k2), (A53, &k3), (A54, &k4)]));
    let k6 = rhs(&axpy(
        y,
        h,
        &[(A61, k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)],
    ));
    let y_new = axpy(y, h, &[(B1, k1), (B3, &k3), (B4, &k4), (B5, &k5), (B6, &k6)]);
    let k7 = rhs(&y_new);
    let err_vec = axpy(
        &[0.0; N],
        h,
        &[(E1, k1), (E3, &k3), (E4, &k4), (E5, &k5), (E6, &k6), (E7, &k7)],
    );
    let err = scaled_norm(&err_vec, y, &y_new, tol);
    (y_new, k7, err)
}

/// Recurrence coefficients of an `s`-stage second-order Runge-Kutta-Chebyshev step.
#[derive(Debug, Clone)]
struct RkcCoefficients {
    mu_tilde1: f64,
    /// (mu, nu, mu_tilde, gamma_tilde) for stages 2..=s.
    stages: Vec<(f64, f64, f64, f64)>,
}

impl RkcCoefficients {
    fn new(s: usize) -> Self {
        let w0 = 1.0 + RKC_EPS / (s * s) as f64;
        // Chebyshev polynomials and their first two derivatives at w0.
        let mut t = vec![1.0, w0];
        let mut dt = vec![0.0, 1.0];
        let mut ddt = vec![0.0, 0.0];
        for j in 2..=s {
            t.push(2.0 * w0 * t[j - 1] - t[j - 2]);
            dt.push(2.0 * t[j - 1] + 2.0 * w0 * dt[j - 1] - dt[j - 2]);
            ddt.push(4.0 * dt[j - 1] + 2.0 * w0 * ddt[j - 1] - ddt[j - 2]);
        }
        let w1 = dt[s] / ddt[s];
        let mut b = vec![0.0; s + 1];
        for j in 2..=s {
            b[j] = ddt[j] / (dt[j] * dt[j]);
        }
        b[0] = b[2];
        b[1] = b[2];
        let a = |j: usize| 1.0 - b[j] * t[j];
        let stages = (2..=s)
            .map(|j| {
                let mu = 2.0 * w0 * b[j] / b[j - 1];
                let nu = -b[j] / b[j - 2];
                let mu_t = 2.0 * w1 * b[j] / b[j - 1];
                (mu, nu, mu_t, -a(j - 1) * mu_t)
            })
            .collect();
        RkcCoefficients {
            mu_tilde1: b[1] * w1,
            stages,
        }
    }
}

/// Stage count giving a stability interval that covers `h * spectral_radius`.
fn rkc_stages(h: f64, spectral_radius: f64) -> usize {
    (1.0 + (1.54 * h * spectral_radius + 1.0).sqrt()).ceil().max(2.0) as usize
}

/// One Runge-Kutta-Chebyshev attempt: new state, its derivative and scaled error.
fn rkc_attempt<const N: usize, F>(
    rhs: &F,
    y: &[f64; N],
    f0: &[f64; N],
    h: f64,
    c: &RkcCoefficients,
    tol: &Tolerances,
) -> ([f64; N], [f64; N], f64)
where
    F: Fn(&[f64; N]) -> [f64; N],
{
    let mut y_jm2 = *y;
    let mut y_jm1: [f64; N] = std::array::from_fn(|i| y[i] + c.mu_tilde1 * h * f0[i]);
    for &(mu, nu, mu_t, gamma_t) in &c.stages {
        let fj = rhs(&y_jm1);
        let y_j: [f64; N] = std::array::from_fn(|i| {
            (1.0 - mu - nu) * y[i] + mu * y_jm1[i] + nu * y_jm2[i] + mu_t * h * fj[i] + gamma_t * h * f0[i]
        });
        y_jm2 = y_jm1;
        y_jm1 = y_j;
    }
    let f_new = rhs(&y_jm1);
    let est: [f64; N] = std::array::from_fn(|i| (12.0 * (y[i] - y_jm1[i]) + 6.0 * h * (f0[i] + f_new[i])) / 15.0);
    let err = scaled_norm(&est, y, &y_jm1, tol);
    (y_jm1, f_new, err)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Scheme {
    Dopri,
    Rkc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Policy {
    Fixed(Scheme),
    Auto,
}

/// Integrates `dy/dt = rhs(y)` over `duration` with Dormand-Prince 5(4).
pub fn integrate<const N: usize, F>(
    rhs: F,
    y0: [f64; N],
    duration: f64,
    tol: &Tolerances,
) -> Result<([f64; N], StepStats), StepUnderflow>
where
    F: Fn(&[f64; N]) -> [f64; N],
{
    drive(rhs, y0, duration, f64::INFINITY, tol, Policy::Fixed(Scheme::Dopri))
}

/// Integrates with Runge-Kutta-Chebyshev only. `spectral_radius` must bound the
/// Jacobian's eigenvalue magnitudes, assumed to lie near the negative real axis.
pub fn integrate_rkc<const N: usize, F>(
    rhs: F,
    y0: [f64; N],
    duration: f64,
    spectral_radius: f64,
    tol: &Tolerances,
) -> Result<([f64; N], StepStats), StepUnderflow>
where
    F: Fn(&[f64; N]) -> [f64; N],
{
    drive(rhs, y0, duration, spectral_radius, tol, Policy::Fixed(Scheme::Rkc))
}

/// Dormand-Prince while accuracy sets the step, Runge-Kutta-Chebyshev while
/// stability does; switches in both directions.
pub fn integrate_auto<const N: usize, F>(
    rhs: F,
    y0: [f64; N],
    duration: f64,
    spectral_radius: f64,
    tol: &Tolerances,
) -> Result<([f64; N], StepStats), StepUnderflow>
where
    F: Fn(&[f64; N]) -> [f64; N],
{
    drive(rhs, y0, duration, spectral_radius, tol, Policy::Auto)
}

fn drive<const N: usize, F>(
    rhs: F,
    y0: [f64; N],
    duration: f64,
    spectral_radius: f64,
    tol: &Tolerances,
    policy: Policy,
) -> Result<([f64; N], StepStats), StepUnderflow>
where
    F: Fn(&[f64; N]) -> [f64; N],
{
    let mut stats = StepStats::default();
    if duration <= 0.0 {
        return Ok((y0, stats));
    }
    let max_step = tol.max_step.min(duration);
    let min_step = 1e-14 * duration;
    // Values this far below atol only matter by producing subnormals, which slow
    // the arithmetic badly.
    let flush = (tol.atol * 1e-30).max(f64::MIN_POSITIVE);
    let mut rkc_cache: Vec<Option<RkcCoefficients>> = Vec::new();

    let mut y = y0;
    let mut dy = rhs(&y);
    stats.evaluations += 1;

    let mut scheme = match policy {
        Policy::Fixed(s) => s,
        Policy::Auto => Scheme::Dopri,
    };

    // Initial step from the size of the solution and its derivative.
    let d0 = scaled_norm(&y, &y, &y, tol);
    let d1 = scaled_norm(&dy, &y, &y, tol);
    let mut h = if d0 < 1e-5 || d1 < 1e-5 {
        1e-6 * duration
    } else {
        0.01 * d0 / d1
    };
    h = h.min(max_step).max(1e-10 * duration);

    let mut t = 0.0;
    // Controller memory: Dormand-Prince keeps ln(err), Chebyshev keeps (err, h).
    let mut ln_err_old: f64 = (1e-4f64).ln();
    let mut rkc_old: Option<(f64, f64)> = None;
    let mut last_rejected = false;
    let mut streak = 0usize;

    while t < duration {
        if stats.accepted + stats.rejected > MAX_STEPS || h < min_step || !h.is_finite() {
            return Err(StepUnderflow { time: t, step: h });
        }
        let remaining = duration - t;
        let last = h >= remaining;
        if last {
            h = remaining;
        }

        let (y_new, dy_new, err, stages) = match scheme {
            Scheme::Dopri => {
                let (a, b, e) = dopri_attempt(&rhs, &y, &dy, h, tol);
                stats.evaluations += 6;
                (a, b, e, 0)
            }
            Scheme::Rkc => {
                let s = rkc_stages(h, spectral_radius);
                if rkc_cache.len() <= s {
                    rkc_cache.resize(s + 1, None);
                }
                let c = rkc_cache[s].get_or_insert_with(|| RkcCoefficients::new(s));
                let (a, b, e) = rkc_attempt(&rhs, &y, &dy, h, c, tol);
                stats.evaluations += s;
                (a, b, e, s)
            }
        };

        if !(err <= 1.0 && err.is_finite()) {
            stats.rejected += 1;
            let factor = match (scheme, err.is_finite()) {
                (_, false) => MIN_FACTOR,
                (Scheme::Dopri, true) => (SAFETY / err.powf(0.2)).max(MIN_FACTOR),
                (Scheme::Rkc, true) => (0.8 / err.cbrt()).max(0.1),
            };
            h *= factor;
            last_rejected = true;
            continue;
        }

        stats.accepted += 1;
        y = y_new;
        dy = dy_new;
        let mut flushed = false;
        for v in y.iter_mut() {
            if *v != 0.0 && v.abs() < flush {
                *v = 0.0;
                flushed = true;
            }
        }
        if flushed {
            dy = rhs(&y);
            stats.evaluations += 1;
        }
        let h_taken = h;
        t = if last { duration } else { t + h };
        if let Some(bound) = tol.settle {
            let rate: f64 = dy.iter().map(|d| d.abs()).sum();
            if t < duration && (duration - t) * rate <= bound {
                stats.settled = true;
                break;
            }
        }

        let mut factor = match scheme {
            Scheme::Dopri => {
                let ln_err = err.max(1e-10).ln();
                let ln_fac = (0.2 - 0.75 * BETA) * ln_err - BETA * ln_err_old;
                ln_err_old = ln_err.max((1e-4f64).ln());
                (SAFETY * (-ln_fac).exp()).clamp(MIN_FACTOR, MAX_FACTOR)
            }
            Scheme::Rkc => {
                stats.chebyshev_steps += 1;
                let f = match rkc_old {
                    Some((e_old, h_old)) if err > 0.0 => 0.8 * (h_taken / h_old) * (e_old.cbrt() / (err * err).cbrt()),
                    _ if err > 0.0 => 0.8 / err.cbrt(),
                    _ => MAX_FACTOR,
                };
                rkc_old = Some((err.max(1e-10), h_taken));
                f.clamp(0.1, MAX_FACTOR)
            }
        };
        if last_rejected {
            factor = factor.min(1.0);
        }
        last_rejected = false;
        h = (h_taken * factor).min(max_step);

        if policy == Policy::Auto {
            let pinned = match scheme {
                Scheme::Dopri => h * spectral_radius > DOPRI_STIFF_THRESHOLD,
                Scheme::Rkc => stages <= 2,
            };
            streak = if pinned { streak + 1 } else { 0 };
            if streak >= SWITCH_AFTER {
                streak = 0;
                scheme = match scheme {
                    Scheme::Dopri => {
                        rkc_old = None;
                        Scheme::Rkc
                    }
                    Scheme::Rkc => {
                        ln_err_old = (1e-4f64).ln();
                        Scheme::Dopri
                    }
                };
            }
        }
    }
    Ok((y, stats))
}
