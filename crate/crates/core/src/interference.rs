//! Two-photon interference in an unbalanced Mach-Zehnder interferometer whose
//! delay matches the pulse separation.
//!
//! The delay is assumed long compared with every correlation time, so the two
//! arms carry statistically independent copies of the source field.

use crate::correlators::{
    pulsed_correlations, side_peak_count, g1_cw, g2_cw, integrate_peak, CoherenceTrace,
    CorrelationTrace, PulsedHistogram, Trace,
};
use crate::dynamics::{DriveProtocol, EmissionModel, EmitterParams, DEFAULT_PERIOD_NS};
use crate::error::{invalid, Error, Result};

/// Required ratio of interferometer delay to the slowest coherence time.
pub const LONG_DELAY_FACTOR: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HomConfig {
    /// Interferometer arm delay (ns).
    pub delay: f64,
    /// Polarization overlap of the two arms: 1 parallel, 0 perpendicular.
    pub polarization_overlap: f64,
}

impl Default for HomConfig {
    fn default() -> Self {
        Self {
            delay: DEFAULT_PERIOD_NS,
            polarization_overlap: 1.0,
        }
    }
}

impl HomConfig {
    pub fn new(delay: f64, polarization_overlap: f64) -> Result<Self> {
        let c = Self {
            delay,
            polarization_overlap,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn parallel() -> Self {
        Self::default()
    }

    pub fn perpendicular() -> Self {
        Self {
            polarization_overlap: 0.0,
            ..Self::default()
        }
    }

    pub fn with_overlap(self, polarization_overlap: f64) -> Result<Self> {
        Self::new(self.delay, polarization_overlap)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delay > 0.0) || !self.delay.is_finite() {
            return Err(invalid("hom_delay_ns", "must be positive"));
        }
        if !(0.0..=1.0).contains(&self.polarization_overlap) {
            return Err(invalid("polarization_overlap", "must lie in [0, 1]"));
        }
        Ok(())
    }

    /// Whether the arm delay exceeds `LONG_DELAY_FACTOR` coherence times.
    pub fn independent_arms(&self, coherence_time: f64) -> bool {
        self.delay >= LONG_DELAY_FACTOR * coherence_time
    }
}

/// First delay at which `|g1|` falls to `1/e`, by linear interpolation.
pub fn coherence_time(g1: &CoherenceTrace) -> Option<f64> {
    let target = (-1.0f64).exp();
    let pts: Vec<(f64, f64)> = g1
        .delay()
        .iter()
        .zip(g1.values())
        .filter(|(t, _)| **t >= 0.0)
        .map(|(t, v)| (*t, v.norm()))
        .collect();
    pts.windows(2).find_map(|w| {
        let ((t0, a), (t1, b)) = (w[0], w[1]);
        (a >= target && b < target).then(|| t0 + (a - target) / (a - b) * (t1 - t0))
    })
}

/// Coincidences between the interferometer outputs,
/// `(g2(tau) + 1 - eta^2 |g1(tau)|^2) / 2`.
pub fn hom_cross_correlation(
    g2: &CorrelationTrace,
    g1: &CoherenceTrace,
    cfg: &HomConfig,
) -> Result<CorrelationTrace> {
    cfg.validate()?;
    if !g2.same_grid(g1) {
        return Err(Error::GridMismatch("g2 and g1 use different delay grids".into()));
    }
    let eta2 = cfg.polarization_overlap.powi(2);
    let values = g2
        .values()
        .iter()
        .zip(g1.values())
        .map(|(g, c)| (0.5 * (g + 1.0 - eta2 * c.norm_sqr())).max(0.0))
        .collect();
    Trace::new(g2.delay().to_vec(), values, g2.normalization())
}

/// `V(tau) = 1 - g2_par(tau) / g2_perp(tau)`.
pub fn visibility(par: &CorrelationTrace, perp: &CorrelationTrace) -> Result<CorrelationTrace> {
    if !par.same_grid(perp) {
        return Err(Error::GridMismatch("parallel and perpendicular grids differ".into()));
    }
    let mut values = Vec::with_capacity(par.len());
    for (a, b) in par.values().iter().zip(perp.values()) {
        if *b <= 0.0 {
            return Err(Error::ZeroDenominator("g2_perp"));
        }
        values.push(1.0 - a / b);
    }
    Trace::new(par.delay().to_vec(), values, par.normalization())
}

/// Signed trapezoidal area of the visibility trace (ns).
pub fn coherence_time_window(v: &CorrelationTrace) -> f64 {
    v.integral()
}

/// Parallel, perpendicular and visibility traces for a CW drive.
#[derive(Debug, Clone, PartialEq)]
pub struct HomCw {
    pub parallel: CorrelationTrace,
    pub perpendicular: CorrelationTrace,
    pub visibility: CorrelationTrace,
    pub coherence_time: Option<f64>,
    /// False when the arm delay is not long against the coherence time.
    pub independent_arms: bool,
}

pub fn hom_cw(
    model: EmissionModel,
    params: &EmitterParams,
    drive: &DriveProtocol,
    tau_grid: &[f64],
    cfg: &HomConfig,
) -> Result<HomCw> {
    let g2 = g2_cw(model, params, drive, tau_grid)?;
    let g1 = g1_cw(model, params, drive, tau_grid)?;
    let parallel = hom_cross_correlation(&g2, &g1, cfg)?;
    let perpendicular = hom_cross_correlation(&g2, &g1, &cfg.with_overlap(0.0)?)?;
    let visibility = visibility(&parallel, &perpendicular)?;
    let tc = coherence_time(&g1);
    Ok(HomCw {
        parallel,
        perpendicular,
        visibility,
        coherence_time: tc,
        independent_arms: tc.is_none_or(|t| cfg.independent_arms(t)),
    })
}

/// Side peaks included in pulsed interference histograms.
pub const HOM_SIDE_PEAKS: usize = 2;

/// Pulsed interference histogram for the given polarization overlap.
///
/// The zero-delay peak is `(G2 + I x I - eta^2 |G1|^2) / 2` integrated over
/// emission time, where `G2` and `G1` are single-period two-time correlators
/// and `I x I` is the uncorrelated product of the two arms' profiles. The
/// other peaks are uncorrelated and have unit area.
pub fn hom_pulsed(
    model: EmissionModel,
    params: &EmitterParams,
    drive: &DriveProtocol,
    cfg: &HomConfig,
) -> Result<PulsedHistogram> {
    cfg.validate()?;
    let pulse = drive
        .pulse()
        .ok_or_else(|| invalid("drive", "a pulsed drive is required"))?;
    if (cfg.delay - pulse.period).abs() > 1e-9 * pulse.period {
        return Err(invalid(
            "hom_delay_ns",
            format!("{} ns must equal the pulse period {} ns", cfg.delay, pulse.period),
        ));
    }
    let n_side = side_peak_count(pulse, HOM_SIDE_PEAKS as f64 * pulse.period)?;
    let c = pulsed_correlations(model, params, drive, cfg.polarization_overlap > 0.0)?;
    let eta2 = cfg.polarization_overlap.powi(2);
    let q = c.interference.unwrap_or_else(|| vec![0.0; c.central.len()]);
    let central: Vec<f64> = c
        .central
        .iter()
        .zip(&c.side)
        .zip(&q)
        .map(|((g, s), q)| (0.5 * (g + s - eta2 * q)).max(0.0))
        .collect();
    PulsedHistogram::from_shapes(&central, &c.side, c.bin_width, c.period, n_side)
}

/// `1 - A_par / A_perp` for zero-delay windows of the given width.
pub fn windowed_visibility(par: &PulsedHistogram, perp: &PulsedHistogram, window: f64) -> Result<f64> {
    let a = integrate_peak(par, 0.0, window)?;
    let b = integrate_peak(perp, 0.0, window)?;
    if b <= 0.0 {
        return Err(Error::ZeroDenominator("perpendicular peak area"));
    }
    Ok(1.0 - a / b)
}
