//! Fits of coincidence histograms to the cooperative line shapes, lifetime
//! extraction and the noise-corrected entanglement-fidelity bound.

use nalgebra::DMatrix;

use crate::correlators::{analytic_g2_cw, analytic_g2_pulsed_peak, CorrelationTrace};
use crate::error::{invalid, Error, Result};
use crate::fit::{levenberg_marquardt, LmOptions};
use crate::instrument::{convolve_function, CountHistogram, IrfModel};

/// Value with its one-sigma uncertainty.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub sigma: f64,
}

impl Estimate {
    pub fn fixed(value: f64) -> Self {
        Self { value, sigma: 0.0 }
    }

    /// `|value - truth| / sigma`; infinite for a zero uncertainty unless exact.
    pub fn deviation(&self, truth: f64) -> f64 {
        let d = (self.value - truth).abs();
        if d == 0.0 {
            0.0
        } else {
            d / self.sigma
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FitKind {
    /// `A * g2_cw(tau)` with free `gamma`, `gamma_d`, `A`.
    Cw,
    /// `A * peak(tau) + B` with `gamma` fixed and free `gamma_d`, `A`, `B`.
    PulsedPeak,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub kind: FitKind,
    /// 1/ns
    pub gamma: Estimate,
    /// 1/ns
    pub gamma_d: Estimate,
    /// Counts per bin at the asymptote (CW) or side-peak maximum (pulsed).
    pub amplitude: Estimate,
    pub baseline: Estimate,
    /// `(2 gamma + gamma_d)^-1` for CW, `(gamma + gamma_d)^-1` for the pulsed peak (ns).
    pub coherence_time: Estimate,
    /// Euclidean norm of the residuals (Poisson deviance residuals for counts).
    pub residual_norm: f64,
    pub reduced_chi2: f64,
    pub converged: bool,
    pub iterations: usize,
    pub cost_history: Vec<f64>,
}

/// Starting point for a fit. Missing amplitude/baseline are estimated from the data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitInit {
    pub gamma: f64,
    pub gamma_d: f64,
    pub amplitude: Option<f64>,
    pub baseline: Option<f64>,
}

impl FitInit {
    pub fn new(gamma: f64, gamma_d: f64) -> Self {
        Self {
            gamma,
            gamma_d,
            amplitude: None,
            baseline: None,
        }
    }

    fn validate(&self) -> Result<()> {
        for (name, v) in [("gamma", self.gamma), ("gamma_d", self.gamma_d)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(invalid(name, "initial rate must be positive"));
            }
        }
        Ok(())
    }
}

/// Signed Poisson deviance residual. Its sum of squares is twice the negative
/// log-likelihood up to a constant, so least squares on it is the Poisson MLE.
/// Variance-weighted residuals with observed counts bias the amplitude low by
/// about one count per bin, which is several sigma at 10^6 total counts.
fn deviance_residual(mu: f64, c: u64) -> f64 {
    let mu = mu.max(f64::MIN_POSITIVE);
    let c = c as f64;
    let d = if c > 0.0 { mu - c + c * (c / mu).ln() } else { mu };
    (mu - c).signum() * (2.0 * d.max(0.0)).sqrt()
}

/// Line shape, optionally convolved with the IRF on a padded grid.
fn shape(grid: &[f64], irf: Option<&IrfModel>, f: impl Fn(f64) -> f64) -> Result<Vec<f64>> {
    match irf {
        Some(irf) => convolve_function(grid, irf, f),
        None => Ok(grid.iter().map(|t| f(*t)).collect()),
    }
}

/// Mean count of the outer tenth of the bins on each side.
fn edge_level(counts: &[u64]) -> f64 {
    let k = (counts.len() / 10).max(1);
    let outer: Vec<u64> = counts[..k].iter().chain(&counts[counts.len() - k..]).copied().collect();
    outer.iter().sum::<u64>() as f64 / outer.len() as f64
}

struct Fitted {
    params: Vec<f64>,
    covariance: DMatrix<f64>,
    residual_norm: f64,
    reduced_chi2: f64,
    converged: bool,
    iterations: usize,
    cost_history: Vec<f64>,
}

/// Poisson maximum-likelihood residuals against integer counts.
fn poisson_residuals<'a>(
    counts: &'a [u64],
    model: impl Fn(&[f64]) -> Result<Vec<f64>> + 'a,
) -> impl Fn(&[f64]) -> Result<Vec<f64>> + 'a {
    move |p| Ok(model(p)?.iter().zip(counts).map(|(m, c)| deviance_residual(*m, *c)).collect())
}

/// Plain residuals against a noiseless trace.
fn value_residuals<'a>(
    values: &'a [f64],
    model: impl Fn(&[f64]) -> Result<Vec<f64>> + 'a,
) -> impl Fn(&[f64]) -> Result<Vec<f64>> + 'a {
    move |p| Ok(model(p)?.iter().zip(values).map(|(m, v)| m - v).collect())
}

fn run(x0: Vec<f64>, residuals: impl Fn(&[f64]) -> Result<Vec<f64>>) -> Result<Fitted> {
    let out = levenberg_marquardt(residuals, &x0, &LmOptions::default())?;
    let n = x0.len();
    let dof = (out.n_residuals - n).max(1) as f64;
    Ok(Fitted {
        covariance: out
            .covariance
            .unwrap_or_else(|| DMatrix::from_element(n, n, f64::NAN)),
        residual_norm: (2.0 * out.cost).sqrt(),
        reduced_chi2: 2.0 * out.cost / dof,
        converged: out.converged,
        iterations: out.iterations,
        cost_history: out.cost_history,
        params: out.params,
    })
}

fn sd(c: &DMatrix<f64>, i: usize) -> f64 {
    c[(i, i)].max(0.0).sqrt()
}

/// Fits `A * g2_cw(tau; gamma, gamma_d)` (optionally IRF-convolved) to CW
/// coincidence counts. Rates are optimized on a log scale.
pub fn fit_g2_cw(hist: &CountHistogram, irf: Option<&IrfModel>, init: &FitInit) -> Result<FitResult> {
    init.validate()?;
    let grid = hist.delay();
    let amp0 = init.amplitude.unwrap_or_else(|| edge_level(hist.counts()).max(1.0));
    let model = cw_model(&grid, irf);
    let f = run(
        vec![init.gamma.ln(), init.gamma_d.ln(), amp0],
        poisson_residuals(hist.counts(), model),
    )?;
    Ok(cw_result(f))
}

/// Unweighted least-squares version of [`fit_g2_cw`] for a noiseless
/// simulated trace, used to read the line-shape rates off a simulation.
pub fn fit_g2_cw_trace(trace: &CorrelationTrace, irf: Option<&IrfModel>, init: &FitInit) -> Result<FitResult> {
    init.validate()?;
    let values = trace.values();
    let k = (values.len() / 10).max(1);
    let edge = (values[..k].iter().sum::<f64>() + values[values.len() - k..].iter().sum::<f64>()) / (2 * k) as f64;
    let amp0 = init.amplitude.unwrap_or(edge);
    let model = cw_model(trace.delay(), irf);
    let f = run(vec![init.gamma.ln(), init.gamma_d.ln(), amp0], value_residuals(values, model))?;
    Ok(cw_result(f))
}

fn cw_model<'a>(grid: &'a [f64], irf: Option<&'a IrfModel>) -> impl Fn(&[f64]) -> Result<Vec<f64>> + 'a {
    move |p| {
        let (g, gd, a) = (p[0].exp(), p[1].exp(), p[2]);
        Ok(shape(grid, irf, |t| analytic_g2_cw(g, gd, t))?
            .into_iter()
            .map(|v| a * v)
            .collect())
    }
}

fn cw_result(f: Fitted) -> FitResult {
    let (g, gd) = (f.params[0].exp(), f.params[1].exp());
    let c = &f.covariance;
    let tc = 1.0 / (2.0 * g + gd);
    // Gradient of tc with respect to (ln gamma, ln gamma_d).
    let (d0, d1) = (-2.0 * g * tc * tc, -gd * tc * tc);
    let tc_var = d0 * d0 * c[(0, 0)] + 2.0 * d0 * d1 * c[(0, 1)] + d1 * d1 * c[(1, 1)];
    FitResult {
        kind: FitKind::Cw,
        gamma: Estimate { value: g, sigma: g * sd(c, 0) },
        gamma_d: Estimate { value: gd, sigma: gd * sd(c, 1) },
        amplitude: Estimate { value: f.params[2], sigma: sd(c, 2) },
        baseline: Estimate::fixed(0.0),
        coherence_time: Estimate { value: tc, sigma: tc_var.max(0.0).sqrt() },
        residual_norm: f.residual_norm,
        reduced_chi2: f.reduced_chi2,
        converged: f.converged,
        iterations: f.iterations,
        cost_history: f.cost_history,
    }
}

/// Fits `A * peak(tau; gamma_fixed, gamma_d) + B` to the zero-delay peak of a
/// pulsed histogram, with `gamma` taken from an independent lifetime fit.
pub fn fit_g2_pulsed_peak(
    hist: &CountHistogram,
    irf: Option<&IrfModel>,
    gamma_fixed: f64,
    init: &FitInit,
) -> Result<FitResult> {
    init.validate()?;
    if !(gamma_fixed > 0.0) || !gamma_fixed.is_finite() {
        return Err(invalid("gamma", "fixed decay rate must be positive"));
    }
    let grid = hist.delay();
    let b0 = init.baseline.unwrap_or(0.0);
    let amp0 = init
        .amplitude
        .unwrap_or_else(|| hist.counts().iter().copied().max().unwrap_or(1) as f64 - b0)
        .max(1.0);
    let model = |p: &[f64]| -> Result<Vec<f64>> {
        let (gd, a, b) = (p[0].exp(), p[1], p[2]);
        Ok(shape(&grid, irf, |t| analytic_g2_pulsed_peak(gamma_fixed, gd, t))?
            .into_iter()
            .map(|v| a * v + b)
            .collect())
    };
    let f = run(vec![init.gamma_d.ln(), amp0, b0], poisson_residuals(hist.counts(), model))?;
    let gd = f.params[0].exp();
    let c = &f.covariance;
    let tc = 1.0 / (gamma_fixed + gd);
    Ok(FitResult {
        kind: FitKind::PulsedPeak,
        gamma: Estimate::fixed(gamma_fixed),
        gamma_d: Estimate { value: gd, sigma: gd * sd(c, 0) },
        amplitude: Estimate { value: f.params[1], sigma: sd(c, 1) },
        baseline: Estimate { value: f.params[2], sigma: sd(c, 2) },
        coherence_time: Estimate { value: tc, sigma: gd * tc * tc * sd(c, 0) },
        residual_norm: f.residual_norm,
        reduced_chi2: f.reduced_chi2,
        converged: f.converged,
        iterations: f.iterations,
        cost_history: f.cost_history,
    })
}

/// Noise-to-signal photon ratio from a single emitter's residual `g2(0)`,
/// the nonnegative root of `g = p (2 + p) / (1 + p)^2`.
pub fn noise_ratio_from_g2(g2_single_zero: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&g2_single_zero) {
        return Err(invalid("g2_single_zero", format!("{g2_single_zero} outside [0, 1)")));
    }
    Ok(1.0 / (1.0 - g2_single_zero).sqrt() - 1.0)
}

/// `p (2 + p) / (1 + p)^2`
pub fn g2_from_noise_ratio(p_n: f64) -> f64 {
    p_n * (2.0 + p_n) / ((1.0 + p_n) * (1.0 + p_n))
}

/// Lower bound on the fidelity to the symmetric Dicke state,
/// `(g (1+p)^2 - p (2+p))^2 / (g (1+p)^2)`, zero when the bracket is negative.
pub fn entanglement_fidelity(g2_zero: f64, p_n: f64) -> Result<f64> {
    if !(g2_zero > 0.0) || !g2_zero.is_finite() {
        return Err(invalid("g2_zero", "must be positive"));
    }
    if !(p_n >= 0.0) || !p_n.is_finite() {
        return Err(invalid("p_n", "must be >= 0"));
    }
    let scaled = g2_zero * (1.0 + p_n).powi(2);
    let root = scaled - p_n * (2.0 + p_n);
    if root <= 0.0 {
        return Ok(0.0);
    }
    Ok(root * root / scaled)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FidelityReport {
    pub g2_zero: f64,
    pub g2_single_zero: f64,
    pub p_n: f64,
    pub fidelity_lower_bound: f64,
}

pub fn fidelity_report(g2_zero: f64, g2_single_zero: f64) -> Result<FidelityReport> {
    let p_n = noise_ratio_from_g2(g2_single_zero)?;
    Ok(FidelityReport {
        g2_zero,
        g2_single_zero,
        p_n,
        fidelity_lower_bound: entanglement_fidelity(g2_zero, p_n)?,
    })
}

/// Decay constant (ns) from a straight-line fit of `ln I(t)` for `t >= t_min`.
pub fn exponential_tail_fit(intensity: &CorrelationTrace, t_min: f64) -> Result<f64> {
    let pts: Vec<(f64, f64)> = intensity
        .delay()
        .iter()
        .zip(intensity.values())
        .filter(|(t, _)| **t >= t_min)
        .map(|(t, v)| (*t, *v))
        .collect();
    if let Some((t, v)) = pts.iter().find(|(_, v)| !(*v > 0.0)) {
        return Err(Error::NonPositive { t: *t, value: *v });
    }
    if pts.len() < 2 {
        return Err(invalid("t_min", "fewer than two points beyond t_min"));
    }
    let n = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1.ln()).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|(t, v)| (t - mt) * (v.ln() - my)).sum();
    let sxx: f64 = pts.iter().map(|(t, _)| (t - mt).powi(2)).sum();
    let slope = sxy / sxx;
    if !(slope < 0.0) {
        return Err(Error::Numerical(format!("tail is not decaying (slope {slope})")));
    }
    Ok(-1.0 / slope)
}
