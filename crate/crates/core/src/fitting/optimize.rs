//! Small bounded least-squares optimizers: Nelder-Mead for the coarse search and
//! Levenberg-Marquardt with a forward-difference Jacobian for the refinement.
//!
//! Both work on a [`LeastSquares`] problem that owns the evaluation budget and
//! remembers the best point seen, so the caller always gets best-so-far results.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::Result;

/// Outcome of an optimizer run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum FitStatus {
    Converged,
    /// The evaluation budget ran out; parameters are the best seen.
    MaxIterations,
    /// No further decrease was found although the local model predicted one.
    Stalled,
}

impl std::fmt::Display for FitStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            FitStatus::Converged => "converged",
            FitStatus::MaxIterations => "max-iterations",
            FitStatus::Stalled => "stalled",
        })
    }
}

/// A residual function on a box, with an evaluation budget.
pub(crate) struct LeastSquares<F> {
    f: F,
    lower: Vec<f64>,
    upper: Vec<f64>,
    budget: usize,
    pub evaluations: usize,
    pub best_x: Vec<f64>,
    pub best_r: Vec<f64>,
    /// Sum of squared residuals at `best_x`.
    pub best_cost: f64,
    /// Number of times the best point strictly improved.
    pub improvements: usize,
    /// Cost after each Levenberg-Marquardt acceptance, starting point first.
    pub trail: Vec<f64>,
}

pub(crate) type Evaluation = (Vec<f64>, Vec<f64>, f64);

fn sum_sq(r: &[f64]) -> f64 {
    r.iter().map(|v| v * v).sum()
}

impl<F> LeastSquares<F>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    pub fn new(f: F, lower: Vec<f64>, upper: Vec<f64>, budget: usize) -> Self {
        debug_assert_eq!(lower.len(), upper.len());
        LeastSquares {
            f,
            lower,
            upper,
            budget,
            evaluations: 0,
            best_x: Vec::new(),
            best_r: Vec::new(),
            best_cost: f64::INFINITY,
            improvements: 0,
            trail: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn project(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(&v, (&lo, &hi))| v.clamp(lo, hi))
            .collect()
    }

    pub fn exhausted(&self) -> bool {
        self.evaluations >= self.budget
    }

    /// Residuals and cost at the projection of `x`; `None` once the budget is spent.
    pub fn eval(&mut self, x: &[f64]) -> Result<Option<Evaluation>> {
        if self.exhausted() {
            return Ok(None);
        }
        self.eval_unbudgeted(x).map(Some)
    }

    /// As [`eval`](Self::eval) but ignores the budget (used for the final curvature).
    pub fn eval_unbudgeted(&mut self, x: &[f64]) -> Result<Evaluation> {
        let x = self.project(x);
        let r = (self.f)(&x)?;
        self.evaluations += 1;
        let cost = sum_sq(&r);
        if cost < self.best_cost {
            if self.best_cost.is_finite() {
                self.improvements += 1;
            }
            self.best_cost = cost;
            self.best_x = x.clone();
            self.best_r = r.clone();
        }
        Ok((x, r, cost))
    }

    fn step_size(&self, x: &[f64], j: usize, rel: f64) -> f64 {
        let h = rel * x[j].abs().max(1.0);
        // Step inwards when the forward point would leave the box.
        if x[j] + h > self.upper[j] {
            -h
        } else {
            h
        }
    }

    /// Forward-difference Jacobian at `x` with residuals `r`. `None` when the
    /// budget runs out (unless `unbudgeted`).
    pub fn jacobian(&mut self, x: &[f64], r: &[f64], rel: f64, unbudgeted: bool) -> Result<Option<DMatrix<f64>>> {
        let m = r.len();
        let n = self.dim();
        let mut jac = DMatrix::zeros(m, n);
        for j in 0..n {
            let h = self.step_size(x, j, rel);
            let mut xp = x.to_vec();
            xp[j] += h;
            let rp = if unbudgeted {
                self.eval_unbudgeted(&xp)?.1
            } else {
                match self.eval(&xp)? {
                    Some(e) => e.1,
                    None => return Ok(None),
                }
            };
            for i in 0..m {
                jac[(i, j)] = (rp[i] - r[i]) / h;
            }
        }
        Ok(Some(jac))
    }
}

/// Bounded Nelder-Mead on the sum of squares, starting from `x0` with initial
/// edge lengths `steps`. Stops after `max_evals` evaluations or once the simplex
/// values agree to `ftol` relative. Returns true on convergence.
pub(crate) fn nelder_mead<F>(
    p: &mut LeastSquares<F>,
    x0: &[f64],
    steps: &[f64],
    max_evals: usize,
    ftol: f64,
) -> Result<bool>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    const ALPHA: f64 = 1.0;
    const GAMMA: f64 = 2.0;
    const RHO: f64 = 0.5;
    const SIGMA: f64 = 0.5;

    let n = p.dim();
    let stop_at = p.evaluations + max_evals;
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    let Some((x, _, c)) = p.eval(x0)? else { return Ok(false) };
    simplex.push((x.clone(), c));
    for j in 0..n {
        let mut v = x.clone();
        v[j] += steps[j];
        if v[j] > p.upper[j] {
            v[j] = x[j] - steps[j];
        }
        let Some((v, _, c)) = p.eval(&v)? else { return Ok(false) };
        simplex.push((v, c));
    }

    loop {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let best = simplex[0].1;
        let worst = simplex[n].1;
        if worst - best <= ftol * best.abs() + f64::MIN_POSITIVE {
            return Ok(true);
        }
        if p.evaluations >= stop_at {
            return Ok(false);
        }
        let centroid: Vec<f64> = (0..n)
            .map(|j| simplex[..n].iter().map(|v| v.0[j]).sum::<f64>() / n as f64)
            .collect();
        let towards =
            |t: f64, from: &[f64]| -> Vec<f64> { centroid.iter().zip(from).map(|(c, w)| c + t * (c - w)).collect() };
        let worst_x = simplex[n].0.clone();
        let Some((xr, _, fr)) = p.eval(&towards(ALPHA, &worst_x))? else {
            return Ok(false);
        };
        if fr < best {
            let Some((xe, _, fe)) = p.eval(&towards(GAMMA, &worst_x))? else {
                return Ok(false);
            };
            simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
            continue;
        }
        if fr < simplex[n - 1].1 {
            simplex[n] = (xr, fr);
            continue;
        }
        // Contract outside or inside, depending on which side is better.
        let (t, reference) = if fr < worst { (RHO * ALPHA, fr) } else { (-RHO, worst) };
        let Some((xc, _, fc)) = p.eval(&towards(t, &worst_x))? else {
            return Ok(false);
        };
        if fc < reference {
            simplex[n] = (xc, fc);
            continue;
        }
        let x_best = simplex[0].0.clone();
        for v in simplex.iter_mut().skip(1) {
            let shrunk: Vec<f64> = x_best.iter().zip(&v.0).map(|(b, x)| b + SIGMA * (x - b)).collect();
            let Some((xs, _, fs)) = p.eval(&shrunk)? else {
                return Ok(false);
            };
            *v = (xs, fs);
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct LmSettings {
    /// Relative forward-difference step.
    pub fd_step: f64,
    /// Converged once an accepted step lowers the cost by less than this fraction.
    pub ftol: f64,
    /// Converged once the Gauss-Newton model predicts less than this fractional decrease.
    pub predicted_tol: f64,
    pub xtol: f64,
}

impl Default for LmSettings {
    fn default() -> Self {
        LmSettings {
            fd_step: 1e-4,
            ftol: 1e-10,
            predicted_tol: 1e-8,
            xtol: 1e-10,
        }
    }
}

/// Solves `(A + lambda D) d = -g` with `D` the clipped diagonal of `A`.
fn damped_step(a: &DMatrix<f64>, g: &DVector<f64>, lambda: f64) -> Option<DVector<f64>> {
    let n = a.nrows();
    let scale = (0..n).map(|i| a[(i, i)]).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let mut m = a.clone();
    for i in 0..n {
        m[(i, i)] += lambda * a[(i, i)].max(1e-12 * scale);
    }
    m.cholesky().map(|c| -c.solve(g))
}

/// Levenberg-Marquardt from the problem's best point. Only steps that lower the
/// sum of squares are accepted, so the cost sequence is non-increasing.
pub(crate) fn levenberg_marquardt<F>(p: &mut LeastSquares<F>, settings: &LmSettings) -> Result<FitStatus>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    let mut x = p.best_x.clone();
    let mut r = p.best_r.clone();
    let mut cost = p.best_cost;
    let mut lambda = 1e-3;
    p.trail.push(cost);
    loop {
        if cost == 0.0 {
            return Ok(FitStatus::Converged);
        }
        let Some(jac) = p.jacobian(&x, &r, settings.fd_step, false)? else {
            return Ok(FitStatus::MaxIterations);
        };
        let rv = DVector::from_column_slice(&r);
        let a = jac.transpose() * &jac;
        let g = jac.transpose() * rv;
        // Decrease predicted by the undamped Gauss-Newton step.
        if let Some(d) = damped_step(&a, &g, 0.0) {
            let predicted = -g.dot(&d);
            if predicted <= settings.predicted_tol * cost {
                return Ok(FitStatus::Converged);
            }
        }
        loop {
            if lambda > 1e12 {
                return Ok(FitStatus::Stalled);
            }
            let Some(d) = damped_step(&a, &g, lambda) else {
                lambda *= 10.0;
                continue;
            };
            let trial: Vec<f64> = x.iter().zip(d.iter()).map(|(a, b)| a + b).collect();
            let trial = p.project(&trial);
            let moved: f64 = trial.iter().zip(&x).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let size: f64 = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            if moved <= settings.xtol * (size + settings.xtol) {
                return Ok(FitStatus::Converged);
            }
            let Some((xn, rn, cn)) = p.eval(&trial)? else {
                return Ok(FitStatus::MaxIterations);
            };
            if cn < cost {
                let gain = (cost - cn) / cost;
                x = xn;
                r = rn;
                cost = cn;
                p.trail.push(cost);
                lambda = (lambda / 3.0).max(1e-12);
                if gain < settings.ftol {
                    return Ok(FitStatus::Converged);
                }
                break;
            }
            lambda *= 4.0;
        }
    }
}

/// `scale * (J^T J)^-1`, or `None` if the normal matrix is singular.
pub(crate) fn covariance(jac: &DMatrix<f64>, scale: f64) -> Option<DMatrix<f64>> {
    let a = jac.transpose() * jac;
    let inv = a.cholesky()?.inverse();
    Some(inv * scale)
}
