//! Detector timing response and shot noise.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};

use crate::correlators::{check_grid, CorrelationTrace, Normalization, PulsedHistogram, Trace};
use crate::error::{invalid, Error, Result};

pub const DEFAULT_IRF_FWHM_NS: f64 = 0.240;
/// Kernel half-width in standard deviations.
pub const KERNEL_HALF_WIDTH_SIGMAS: f64 = 5.0;
/// Largest grid spacing accepted, as a fraction of the IRF width.
pub const MAX_SPACING_PER_FWHM: f64 = 0.1;

/// Gaussian timing jitter of the detection chain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IrfModel {
    pub fwhm: f64,
}

impl Default for IrfModel {
    fn default() -> Self {
        Self {
            fwhm: DEFAULT_IRF_FWHM_NS,
        }
    }
}

impl IrfModel {
    pub fn new(fwhm: f64) -> Result<Self> {
        if !(fwhm > 0.0) || !fwhm.is_finite() {
            return Err(invalid("irf_fwhm_ns", "must be positive"));
        }
        Ok(Self { fwhm })
    }

    pub fn sigma(&self) -> f64 {
        self.fwhm / crate::dynamics::FWHM_PER_SIGMA
    }

    /// Kernel half-width in grid points for the given spacing.
    pub fn half_width(&self, spacing: f64) -> usize {
        (KERNEL_HALF_WIDTH_SIGMAS * self.sigma() / spacing).ceil() as usize
    }

    /// Unit-sum kernel sampled at the grid spacing, truncated at five sigma.
    pub fn kernel(&self, spacing: f64) -> Result<Vec<f64>> {
        let limit = MAX_SPACING_PER_FWHM * self.fwhm;
        if !(spacing > 0.0) || spacing > limit * (1.0 + 1e-12) {
            return Err(Error::GridTooCoarse { spacing, limit });
        }
        let k = self.half_width(spacing) as i64;
        let s = self.sigma();
        let mut w: Vec<f64> = (-k..=k)
            .map(|i| {
                let x = i as f64 * spacing / s;
                (-0.5 * x * x).exp()
            })
            .collect();
        let total: f64 = w.iter().sum();
        w.iter_mut().for_each(|v| *v /= total);
        Ok(w)
    }
}

/// How values beyond the ends of a trace are supplied.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdgeMode {
    /// Mirror about the end points; for symmetric, asymptotically flat traces.
    Reflect,
    /// Zero outside; for isolated peaks.
    Zero,
}

fn reflect_index(i: i64, n: i64) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let j = i.rem_euclid(period);
    (if j < n { j } else { period - j }) as usize
}

/// Discrete convolution of uniformly spaced samples with the IRF kernel.
pub fn convolve_values(values: &[f64], spacing: f64, irf: &IrfModel, edge: EdgeMode) -> Result<Vec<f64>> {
    let kernel = irf.kernel(spacing)?;
    let k = (kernel.len() / 2) as i64;
    let n = values.len() as i64;
    let out = (0..n)
        .map(|i| {
            kernel
                .iter()
                .enumerate()
                .map(|(j, w)| {
                    let src = i + j as i64 - k;
                    let v = match edge {
                        EdgeMode::Reflect => values[reflect_index(src, n)],
                        EdgeMode::Zero if (0..n).contains(&src) => values[src as usize],
                        EdgeMode::Zero => 0.0,
                    };
                    w * v
                })
                .sum()
        })
        .collect();
    Ok(out)
}

/// Values of `f` convolved with the IRF at each grid point, evaluated on a
/// grid padded by the kernel half-width so no edge treatment is needed.
pub fn convolve_function(grid: &[f64], irf: &IrfModel, f: impl Fn(f64) -> f64) -> Result<Vec<f64>> {
    let h = uniform_spacing(grid)?;
    let kernel = irf.kernel(h)?;
    let k = kernel.len() / 2;
    let t0 = grid[0] - k as f64 * h;
    let padded: Vec<f64> = (0..grid.len() + 2 * k).map(|i| f(t0 + i as f64 * h)).collect();
    Ok((0..grid.len())
        .map(|i| kernel.iter().zip(&padded[i..]).map(|(w, v)| w * v).sum())
        .collect())
}

pub(crate) fn uniform_spacing(grid: &[f64]) -> Result<f64> {
    check_grid(grid)?;
    if grid.len() < 2 {
        return Err(invalid("grid", "at least two points are required"));
    }
    let h = (grid[grid.len() - 1] - grid[0]) / (grid.len() - 1) as f64;
    if grid.windows(2).any(|w| ((w[1] - w[0]) - h).abs() > 1e-6 * h) {
        return Err(invalid("grid", "spacing is not uniform"));
    }
    Ok(h)
}

/// Convolution with the detector response.
pub trait Convolve: Sized {
    fn convolve(&self, irf: &IrfModel) -> Result<Self>;
}

impl Convolve for CorrelationTrace {
    fn convolve(&self, irf: &IrfModel) -> Result<Self> {
        let h = uniform_spacing(self.delay())?;
        let v = convolve_values(self.values(), h, irf, EdgeMode::Reflect)?;
        Trace::new(self.delay().to_vec(), v, self.normalization())
    }
}

impl Convolve for PulsedHistogram {
    fn convolve(&self, irf: &IrfModel) -> Result<Self> {
        let v = convolve_values(self.trace.values(), self.bin_width, irf, EdgeMode::Zero)?;
        Ok(Self {
            trace: Trace::new(self.trace.delay().to_vec(), v, self.trace.normalization())?,
            ..self.clone()
        })
    }
}

/// Binned coincidence counts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CountHistogram {
    delay: Vec<u64>,
    counts: Vec<u64>,
}

// Delays are stored as raw f64 bits so the type can derive Eq.
impl CountHistogram {
    pub fn new(delay: Vec<f64>, counts: Vec<u64>) -> Result<Self> {
        check_grid(&delay)?;
        if delay.len() != counts.len() {
            return Err(Error::GridMismatch(format!(
                "{} delays but {} counts",
                delay.len(),
                counts.len()
            )));
        }
        Ok(Self {
            delay: delay.into_iter().map(f64::to_bits).collect(),
            counts,
        })
    }

    pub fn delay(&self) -> Vec<f64> {
        self.delay.iter().map(|b| f64::from_bits(*b)).collect()
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Spacing of the delay column; `None` for a single bin or a non-uniform grid.
    pub fn bin_width(&self) -> Option<f64> {
        uniform_spacing(&self.delay()).ok()
    }

    pub fn to_trace(&self) -> CorrelationTrace {
        Trace::new(
            self.delay(),
            self.counts.iter().map(|&c| c as f64).collect(),
            Normalization::Raw,
        )
        .expect("validated on construction")
    }
}

/// Independent Poisson counts per bin with mean proportional to the trace,
/// scaled so the expected total is `total_counts`.
pub fn sample_histogram(trace: &CorrelationTrace, total_counts: u64, seed: u64) -> Result<CountHistogram> {
    if total_counts == 0 {
        return Err(invalid("total_counts", "must be positive"));
    }
    if let Some(v) = trace.values().iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
        return Err(invalid("trace", format!("value {v} is negative or not finite")));
    }
    let sum: f64 = trace.values().iter().sum();
    if sum <= 0.0 {
        return Err(Error::ZeroDenominator("trace sum"));
    }
    let scale = total_counts as f64 / sum;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let counts = trace
        .values()
        .iter()
        .map(|v| {
            let mean = v * scale;
            if mean == 0.0 {
                return Ok(0);
            }
            let d = Poisson::new(mean).map_err(|e| Error::Numerical(e.to_string()))?;
            Ok(d.sample(&mut rng) as u64)
        })
        .collect::<Result<Vec<_>>>()?;
    CountHistogram::new(trace.delay().to_vec(), counts)
}
