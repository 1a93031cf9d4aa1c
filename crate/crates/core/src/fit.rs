//! Damped Gauss-Newton (Levenberg-Marquardt) least squares with a
//! central-difference Jacobian.

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmOptions {
    pub max_iterations: usize,
    /// Converged when an accepted step satisfies `|dx| <= xtol (|x| + xtol)`.
    pub xtol: f64,
    /// Converged when an accepted step lowers the cost by less than `ftol * cost`.
    pub ftol: f64,
    /// Converged when `max |J^T r| <= gtol`.
    pub gtol: f64,
    pub initial_damping: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            xtol: 1e-10,
            ftol: 1e-15,
            gtol: 1e-14,
            initial_damping: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LmOutcome {
    pub params: Vec<f64>,
    /// `sum r^2 / 2` at `params`.
    pub cost: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Cost after each accepted step, starting with the initial cost.
    pub cost_history: Vec<f64>,
    /// `(J^T J)^-1 * sum r^2 / (m - n)`, when `J^T J` is invertible and `m > n`.
    pub covariance: Option<DMatrix<f64>>,
    pub n_residuals: usize,
}

const DAMPING_LIMIT: f64 = 1e16;

fn cost_of(r: &[f64]) -> f64 {
    0.5 * r.iter().map(|v| v * v).sum::<f64>()
}

fn jacobian(
    f: &impl Fn(&[f64]) -> Result<Vec<f64>>,
    x: &[f64],
    m: usize,
) -> Result<DMatrix<f64>> {
    let n = x.len();
    let mut j = DMatrix::<f64>::zeros(m, n);
    let mut xp = x.to_vec();
    for c in 0..n {
        let h = f64::EPSILON.cbrt() * x[c].abs().max(1.0);
        xp[c] = x[c] + h;
        let up = f(&xp)?;
        xp[c] = x[c] - h;
        let down = f(&xp)?;
        xp[c] = x[c];
        if up.len() != m || down.len() != m {
            return Err(Error::DimensionMismatch {
                expected: m,
                found: up.len().min(down.len()),
            });
        }
        for r in 0..m {
            j[(r, c)] = (up[r] - down[r]) / (2.0 * h);
        }
    }
    Ok(j)
}

/// Minimizes `sum f(x)^2 / 2`. Non-finite residuals reject the step.
pub fn levenberg_marquardt(
    f: impl Fn(&[f64]) -> Result<Vec<f64>>,
    x0: &[f64],
    opts: &LmOptions,
) -> Result<LmOutcome> {
    let n = x0.len();
    if n == 0 {
        return Err(invalid("x0", "no parameters"));
    }
    let mut x = x0.to_vec();
    let mut r = f(&x)?;
    let m = r.len();
    if m < n {
        return Err(invalid("residuals", format!("{m} residuals for {n} parameters")));
    }
    if r.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite residual at the initial guess".into()));
    }
    let mut cost = cost_of(&r);
    let mut history = vec![cost];
    let mut lambda = opts.initial_damping;
    let mut converged = false;
    let mut iterations = 0;

    let mut j = jacobian(&f, &x, m)?;
    while iterations < opts.max_iterations {
        iterations += 1;
        let jt = j.transpose();
        let jtj = &jt * &j;
        let g = &jt * DVector::from_column_slice(&r);
        if g.amax() <= opts.gtol || cost == 0.0 {
            converged = true;
            break;
        }
        let mut accepted = false;
        while lambda < DAMPING_LIMIT {
            let mut a = jtj.clone();
            for i in 0..n {
                let d = jtj[(i, i)];
                a[(i, i)] += lambda * if d > 0.0 { d } else { 1.0 };
            }
            let Some(step) = a.cholesky().map(|c| c.solve(&(-&g))) else {
                lambda *= 10.0;
                continue;
            };
            let trial: Vec<f64> = x.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
            let tr = match f(&trial) {
                Ok(v) if v.iter().all(|e| e.is_finite()) => v,
                _ => {
                    lambda *= 10.0;
                    continue;
                }
            };
            let trial_cost = cost_of(&tr);
            if trial_cost < cost {
                let xnorm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
                let small_step = step.norm() <= opts.xtol * (xnorm + opts.xtol);
                let small_gain = cost - trial_cost <= opts.ftol * cost;
                x = trial;
                r = tr;
                cost = trial_cost;
                history.push(cost);
                lambda = (lambda / 10.0).max(1e-15);
                accepted = true;
                converged = small_step || small_gain;
                break;
            }
            lambda *= 10.0;
        }
        if !accepted {
            // No damping yields a decrease: x is a minimum to working precision.
            converged = true;
            break;
        }
        if converged {
            break;
        }
        j = jacobian(&f, &x, m)?;
    }

    let j = jacobian(&f, &x, m)?;
    let covariance = if m > n {
        let scale = 2.0 * cost / (m - n) as f64;
        (j.transpose() * &j).try_inverse().map(|inv| inv * scale)
    } else {
        None
    };
    Ok(LmOutcome {
        params: x,
        cost,
        iterations,
        converged,
        cost_history: history,
        covariance,
        n_residuals: m,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fits_an_exponential_exactly() {
        let t: Vec<f64> = (0..50).map(|i| i as f64 * 0.1).collect();
        let y: Vec<f64> = t.iter().map(|t| 3.0 * (-1.7 * t).exp()).collect();
        let out = levenberg_marquardt(
            |p| Ok(t.iter().zip(&y).map(|(t, y)| p[0] * (-p[1] * t).exp() - y).collect()),
            &[1.0, 0.5],
            &LmOptions::default(),
        )
        .unwrap();
        assert!(out.converged);
        assert!((out.params[0] - 3.0).abs() < 1e-8);
        assert!((out.params[1] - 1.7).abs() < 1e-8);
        assert!(out.cost_history.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn rosenbrock_reaches_the_valley_floor() {
        let out = levenberg_marquardt(
            |p| Ok(vec![10.0 * (p[1] - p[0] * p[0]), 1.0 - p[0]]),
            &[-1.2, 1.0],
            &LmOptions::default(),
        )
        .unwrap();
        assert!((out.params[0] - 1.0).abs() < 1e-6 && (out.params[1] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn too_few_residuals_is_an_error() {
        assert!(levenberg_marquardt(|_| Ok(vec![0.0]), &[1.0, 2.0], &LmOptions::default()).is_err());
    }
}
