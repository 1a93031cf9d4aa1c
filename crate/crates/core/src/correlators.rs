//! Two-time correlation functions by quantum regression, CW and pulsed,
//! and the closed-form cooperative line shapes.

use std::collections::HashMap;
use std::f64::consts::FRAC_PI_2;

use nalgebra::{DMatrix, DVector};

use crate::density::DensityOperator;
use crate::dynamics::{build_generator, DriveProtocol, EmissionModel, EmitterParams, Liouvillian, Pulse};
use crate::emission::DipoleSet;
use crate::error::{invalid, Error, Result};
use crate::operators::{self, dagger, SuperOperator, C64};
use crate::propagation::{self, expm, propagate_vec};

/// Points in the default delay grid.
pub const DEFAULT_GRID_POINTS: usize = 2001;
/// Target bin width of the pulsed two-time lattice (ns).
pub const PULSED_BIN_NS: f64 = 0.005;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Normalization {
    Raw,
    /// Divided by the squared stationary intensity (CW).
    SteadyStateSquared,
    /// Divided by `I(t1) I(t1 + tau)`.
    Instantaneous,
    /// Uncorrelated side peaks have unit area.
    SidePeak,
}

/// Sampled function of delay (or time) on a strictly increasing grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace<V> {
    delay: Vec<f64>,
    values: Vec<V>,
    normalization: Normalization,
}

pub type CorrelationTrace = Trace<f64>;
pub type CoherenceTrace = Trace<C64>;

pub(crate) fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(invalid("grid", "empty"));
    }
    if grid.iter().any(|t| !t.is_finite()) {
        return Err(invalid("grid", "non-finite entry"));
    }
    if let Some(i) = grid.windows(2).position(|w| w[1] <= w[0]) {
        return Err(invalid(
            "grid",
            format!("not strictly increasing at index {}", i + 1),
        ));
    }
    Ok(())
}

impl<V: Copy> Trace<V> {
    pub fn new(delay: Vec<f64>, values: Vec<V>, normalization: Normalization) -> Result<Self> {
        check_grid(&delay)?;
        if delay.len() != values.len() {
            return Err(Error::GridMismatch(format!(
                "{} delays but {} values",
                delay.len(),
                values.len()
            )));
        }
        Ok(Self {
            delay,
            values,
            normalization,
        })
    }

    pub fn delay(&self) -> &[f64] {
        &self.delay
    }

    pub fn values(&self) -> &[V] {
        &self.values
    }

    pub fn normalization(&self) -> Normalization {
        self.normalization
    }

    pub fn len(&self) -> usize {
        self.delay.len()
    }

    pub fn is_empty(&self) -> bool {
        self.delay.is_empty()
    }

    pub fn map<W: Copy>(&self, f: impl Fn(V) -> W) -> Trace<W> {
        Trace {
            delay: self.delay.clone(),
            values: self.values.iter().map(|&v| f(v)).collect(),
            normalization: self.normalization,
        }
    }

    pub fn with_normalization(mut self, normalization: Normalization) -> Self {
        self.normalization = normalization;
        self
    }

    /// Grid spacing if the grid is uniform to 1e-9 relative.
    pub fn uniform_spacing(&self) -> Option<f64> {
        if self.delay.len() < 2 {
            return None;
        }
        let h = (self.delay[self.len() - 1] - self.delay[0]) / (self.len() - 1) as f64;
        let uniform = self
            .delay
            .windows(2)
            .all(|w| ((w[1] - w[0]) - h).abs() <= 1e-9 * h);
        uniform.then_some(h)
    }

    pub fn same_grid<W>(&self, other: &Trace<W>) -> bool {
        self.delay == other.delay
    }
}

impl Trace<f64> {
    /// Linear interpolation; `None` outside the grid.
    pub fn value_at(&self, t: f64) -> Option<f64> {
        let d = &self.delay;
        if t < d[0] || t > d[d.len() - 1] {
            return None;
        }
        let i = d.partition_point(|&x| x <= t).min(d.len() - 1);
        if i == 0 {
            return Some(self.values[0]);
        }
        let (x0, x1) = (d[i - 1], d[i]);
        if t == x1 {
            return Some(self.values[i]);
        }
        let w = (t - x0) / (x1 - x0);
        Some(self.values[i - 1] * (1.0 - w) + self.values[i] * w)
    }

    /// Trapezoidal integral over the full grid.
    pub fn integral(&self) -> f64 {
        self.delay
            .windows(2)
            .zip(self.values.windows(2))
            .map(|(t, v)| 0.5 * (t[1] - t[0]) * (v[0] + v[1]))
            .sum()
    }

    /// Integral of the piecewise-linear interpolant over `[a, b]`, clipped to the grid.
    pub fn integrate(&self, a: f64, b: f64) -> f64 {
        let d = &self.delay;
        let lo = a.max(d[0]);
        let hi = b.min(d[d.len() - 1]);
        if hi <= lo {
            return 0.0;
        }
        let mut total = 0.0;
        let start = d.partition_point(|&x| x <= lo).saturating_sub(1);
        for i in start..d.len() - 1 {
            let (x0, x1) = (d[i], d[i + 1]);
            if x0 >= hi {
                break;
            }
            let s0 = x0.max(lo);
            let s1 = x1.min(hi);
            if s1 <= s0 {
                continue;
            }
            let f = |t: f64| {
                let w = (t - x0) / (x1 - x0);
                self.values[i] * (1.0 - w) + self.values[i + 1] * w
            };
            total += 0.5 * (s1 - s0) * (f(s0) + f(s1));
        }
        total
    }
}

/// `n` evenly spaced points on `[start, end]`.
pub fn uniform_grid(start: f64, end: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![start],
        _ => {
            let h = (end - start) / (n - 1) as f64;
            (0..n).map(|i| start + h * i as f64).collect()
        }
    }
}

/// Default delay grid: 2001 points over `[0, 5 * longest correlation time]`.
pub fn default_tau_grid(params: &EmitterParams) -> Result<Vec<f64>> {
    params.validate()?;
    let population = params.gamma + params.gamma_p;
    let coherence = 0.5 * (params.gamma + params.gamma_p + params.gamma_d);
    let slowest = [population, coherence]
        .into_iter()
        .filter(|r| *r > 0.0)
        .fold(f64::INFINITY, f64::min);
    if !slowest.is_finite() {
        return Err(invalid("gamma", "all rates vanish; no finite correlation time"));
    }
    Ok(uniform_grid(0.0, 5.0 / slowest, DEFAULT_GRID_POINTS))
}

/// Cooperative CW line shape `1 - (e^{-2 gamma tau} - e^{-(2 gamma + gamma_d) tau}) / 2`,
/// symmetric in `tau`.
pub fn analytic_g2_cw(gamma: f64, gamma_d: f64, tau: f64) -> f64 {
    let t = tau.abs();
    1.0 - 0.5 * ((-2.0 * gamma * t).exp() - (-(2.0 * gamma + gamma_d) * t).exp())
}

/// Zero-delay peak of pulsed cooperative emission normalized to the side peak
/// maximum, `(e^{-gamma |tau|} + e^{-(gamma + gamma_d) |tau|}) / 2`.
pub fn analytic_g2_pulsed_peak(gamma: f64, gamma_d: f64, tau: f64) -> f64 {
    let t = tau.abs();
    0.5 * ((-gamma * t).exp() + (-(gamma + gamma_d) * t).exp())
}

/// Steps a Liouville-space vector or matrix forward, caching `exp(L dt)` per
/// distinct static step.
struct Stepper<'a> {
    l: &'a Liouvillian,
    cache: HashMap<u64, SuperOperator>,
}

impl<'a> Stepper<'a> {
    fn new(l: &'a Liouvillian) -> Self {
        Self {
            l,
            cache: HashMap::new(),
        }
    }

    fn static_map(&mut self, dt: f64) -> &SuperOperator {
        let l = self.l;
        self.cache
            .entry(dt.to_bits())
            .or_insert_with(|| expm(&(l.static_part() * C64::new(dt, 0.0))))
    }

    fn step(&mut self, x: &DMatrix<C64>, t0: f64, dt: f64) -> Result<DMatrix<C64>> {
        if dt == 0.0 {
            return Ok(x.clone());
        }
        if self.l.is_static_on(t0, t0 + dt) {
            if t0 + dt == t0 {
                return Err(Error::StepUnderflow { t: t0, dt });
            }
            return Ok(self.static_map(dt) * x);
        }
        Ok(propagation::transfer_matrix(self.l, t0, dt)? * x)
    }
}

fn check_dim(model: EmissionModel, rho: &DensityOperator) -> Result<()> {
    if rho.dim() != model.hilbert_dim() {
        return Err(Error::DimensionMismatch {
            expected: model.hilbert_dim(),
            found: rho.dim(),
        });
    }
    Ok(())
}

/// Raw `G2(t1, tau) = sum_ij Tr[O_j^dag O_j Phi(t1 + tau, t1)(O_i rho(t1) O_i^dag)]`
/// for `tau` on a nonnegative grid, starting from `rho0` at t = 0.
pub fn two_time_g2(
    model: EmissionModel,
    params: &EmitterParams,
    drive: &DriveProtocol,
    rho0: &DensityOperator,
    t1: f64,
    tau_grid: &[f64],
) -> Result<CorrelationTrace> {
    let (g2, _) = two_time_g2_parts(model, params, drive, rho0, t1, tau_grid)?;
    Trace::new(tau_grid.to_vec(), g2, Normalization::Raw)
}

/// `G2(t1, tau) / (I(t1) I(t1 + tau))`.
pub fn two_time_g2_normalized(
    model: EmissionModel,
    params: &EmitterParams,
    drive: &DriveProtocol,
    rho0: &DensityOperator,
    t1: f64,
    tau_grid: &[f64],
) -> Result<CorrelationTrace> {
    let (g2, intensity) = two_time_g2_parts(model, params, drive, rho0, t1, tau_grid)?;
    let i1 = intensity[0];
    let mut values = Vec::with_capacity(g2.len());
    for (g, i2) in g2.iter().zip(&intensity[1..]) {
        let denom = i1 * i2;
        if denom.abs() < f64::MIN_POSITIVE {
            return Err(Error::ZeroDenominator("I(t1) I(t1 + tau)"));
        }
        values.push(g / denom);
    }
    Trace::new(tau_grid.to_vec(), values, Normalization::Instantaneous)
}

/// Returns `(G2(t1, tau), [I(t1), I(t1 + tau)...])`.
fn two_time_g2_parts(
    model: EmissionModel,
    params: &EmitterParams,
    drive: &DriveProtocol,
    rho0: &DensityOperator,
    t1: f64,
    tau_grid: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    check_dim(model, rho0)?;
    check_grid(tau_grid)?;
    if tau_grid[0] < 0.0 {
        return Err(invalid("tau_grid", "delays must be >= 0"));
    }
    if !(t1 >= 0.0) {
        return Err(invalid("t1", "must be >= 0"));
    }
    let l = build_generator(model, params, drive)?;
    let dipoles = DipoleSet::for_model(model);
    let b = operators::trace_functional(&dipoles.intensity_operator());
    let jump = dipoles.jump_superoperator();

    let rho_t1 = propagate_vec(&rho0.vectorized(), &l, 0.0, t1)?;
    let n = rho_t1.len();
    // Column 0: conditional state after the first detection. Column 1: unconditioned state.
    let mut x = DMatrix::<C64>::zeros(n, 2);
    x.set_column(0, &(&jump * &rho_t1));
    x.set_column(1, &rho_t1);

    let mut stepper = Stepper::new(&l);
    let mut g2 = Vec::with_capacity(tau_grid.len());
    let mut intensity = vec![b.dot(&rho_t1).re];
    let mut prev = 0.0;
    for &tau in tau_grid {
        x = stepper.step(&x, t1 + prev, tau - prev)?;
        prev = tau;
        g2.push(b.dot(&x.column(0)).re);
        intensity.push(b.dot(&x.column(1)).re);
    }
    Ok((g2, intensity))
}

/// Stationary correlation data shared by the CW correlators.
struct Stationary {
    l: Liouvillian,
    dipoles: DipoleSet,
    rho: DVector<C64>,
    intensity: f64,
}

fn stationary(model: EmissionModel, params: &EmitterParams, drive: &DriveProtocol) -> Result<Stationary> {
    if drive.is_pulsed() {
        return Err(invalid("drive", "CW correlators need a time-independent drive"));
    }
    let l = build_generator(model, params, drive)?;
    let ss = propagation::steady_state(&l)?;
    let dipoles = DipoleSet::for_model(model);
    let intensity = dipoles.intensity(&ss)?;
    if intensity.abs() < f64::MIN_POSITIVE {
        return Err(Error::ZeroDenominator("stationary intensity"));
    }
    Ok(Stationary {
        l,
        dipoles,
        rho: ss.vectorized(),
        intensity,
    })
}

/// Evaluates `f` on the columns propagated to each `|tau|`, visiting the
/// magnitudes in sorted order; results come back in grid order.
fn over_abs_delays<V: Copy + Default>(
    l: &Liouvillian,
    start: DMatrix<C64>,
    tau_grid: &[f64],
    f: impl Fn(&DMatrix<C64>) -> V,
) -> Result<Vec<V>> {
    let mut order: Vec<usize> = (0..tau_grid.len()).collect();
    order.sort_by(|&a, &b| tau_grid[a].abs().total_cmp(&tau_grid[b].abs()));
    let mut out = vec![V::default(); tau_grid.len()];
    let mut stepper = Stepper::new(l);
    let mut x = start;
    // Magnitudes equal to within rounding share one evaluation, so mirrored
    // grids give exactly symmetric results.
    let merge = 1e-12 * tau_grid.iter().fold(0.0f64, |m, t| m.max(t.abs()));
    let mut prev = 0.0;
    for i in order {
        let t = tau_grid[i].abs();
        if t - prev > merge {
            x = stepper.step(&x, 0.0, t - prev)?;
            prev = t;
        }
        out[i] = f(&x);
    }
    Ok(out)
}

/// Stationary `g2(tau)` normalized by the squared stationary intensity;
/// negative delays use `g2(-tau) = g2(tau)`.
pub fn g2_cw(
    model: EmissionModel,
    params: &EmitterParams,
    drive: &DriveProtocol,
    tau_grid: &[f64],
) -> Result<CorrelationTrace> {
    check_grid(tau_grid)?;
    let st = stationary(model, params, drive)?;
    let b = operators::trace_functional(&st.dipoles.intensity_operator());
    let x0 = DMatrix::from_column_slice(st.rho.len(), 1, (st.dipoles.jump_superoperator() * &st.rho).as_slice());
    let norm = st.intensity * st.intensity;
    let values = over_abs_delays(&st.l, x0, tau_grid, |x| b.dot(&x.column(0)).re / norm)?;
    Trace::new(tau_grid.to_vec(), values, Normalization::SteadyStateSquared)
}

/// Stationary first-order coherence
/// `g1(tau) = sum_i w_i <O_i^dag(tau) O_i(0)> / sum_i w_i <O_i^dag O_i>`,
/// with `g1(-tau) = conj(g1(tau))`.
pub fn g1_cw(
    model: EmissionModel,
    params: &EmitterParams,
    drive: &DriveProtocol,
    tau_grid: &[f64],
) -> Result<CoherenceTrace> {
    check_grid(tau_grid)?;
    let st = stationary(model, params, drive)?;
    let entries = st.dipoles.entries();
    let n = st.rho.len();
    let mut x0 = DMatrix::<C64>::zeros(n, entries.len());
    let mut functionals = Vec::with_capacity(entries.len());
    for (i, (o, w)) in entries.iter().enumerate() {
        x0.set_column(i, &(operators::left(o) * &st.rho * C64::new(*w, 0.0)));
        functionals.push(operators::trace_functional(&dagger(o)));
    }
    let norm = st.intensity;
    let values = over_abs_delays(&st.l, x0, tau_grid, |x| {
        functionals
            .iter()
            .enumerate()
            .map(|(i, c)| c.dot(&x.column(i)))
            .sum::<C64>()
            / norm
    })?;
    let values = values
        .into_iter()
        .zip(tau_grid)
        .map(|(v, &t)| if t < 0.0 { v.conj() } else { v })
        .collect();
    Trace::new(tau_grid.to_vec(), values, Normalization::SteadyStateSquared)
}

/// Detected intensity `<sum_i w_i O_i^dag O_i>(t)` from `rho0` at t = 0.
pub fn intensity_from(
    model: EmissionModel,
    params: &EmitterParams,
    drive: &DriveProtocol,
    rho0: &DensityOperator,
    t_grid: &[f64],
) -> Result<CorrelationTrace> {
    check_dim(model, rho0)?;
    check_grid(t_grid)?;
    if t_grid[0] < 0.0 {
        return Err(invalid("t_grid", "times must be >= 0"));
    }
    let l = build_generator(model, params, drive)?;
    let b = operators::trace_functional(&DipoleSet::for_model(model).intensity_operator());
    let mut stepper = Stepper::new(&l);
    let mut x = DMatrix::from_column_slice(rho0.dim().pow(2), 1, rho0.vectorized().as_slice());
    let mut prev = 0.0;
    let mut values = Vec::with_capacity(t_grid.len());
    for &t in t_grid {
        x = stepper.step(&x, prev, t - prev)?;
        prev = t;
        values.push(b.dot(&x.column(0)).re);
    }
    Trace::new(t_grid.to_vec(), values, Normalization::Raw)
}

/// Relative drive phases averaged over for a pulsed drive.
///
/// With random pulse-to-pulse phase between the two emitters, observables of
/// the collective dipole depend on the phase through harmonics of order at
/// most two, so four equally spaced phases give the exact average.
pub(crate) fn drive_phases(model: EmissionModel, pulse: &Pulse) -> Vec<f64> {
    let collective = matches!(model, EmissionModel::Cooperative | EmissionModel::Superradiant);
    if collective && pulse.phase_averaged {
        (0..4).map(|k| pulse.relative_phase + FRAC_PI_2 * k as f64).collect()
    } else {
        vec![pulse.relative_phase]
    }
}

fn pulse_of(drive: &DriveProtocol) -> Result<Pulse> {
    drive
        .pulse()
        .copied()
        .ok_or_else(|| invalid("drive", "a pulsed drive is required"))
}

/// Emission profile over one period in the periodic regime, averaged over
/// the relative drive phase where applicable. `t = 0` is the start of the
/// pulse window.
pub fn time_resolved_intensity(
    model: EmissionModel,
    params: &EmitterParams,
    drive: &DriveProtocol,
    t_grid: &[f64],
) -> Result<CorrelationTrace> {
    check_grid(t_grid)?;
    if t_grid[0] < 0.0 {
        return Err(invalid("t_grid", "times must be >= 0"));
    }
    let pulse = pulse_of(drive)?;
    let phases = drive_phases(model, &pulse);
    let b = operators::trace_functional(&DipoleSet::for_model(model).intensity_operator());
    let mut values = vec![0.0; t_grid.len()];
    for &phi in &phases {
        let l = build_generator(model, params, &drive.with_relative_phase(phi))?;
        let rho0 = periodic_state(&l, &pulse)?;
        let mut stepper = Stepper::new(&l);
        let mut x = DMatrix::from_column_slice(rho0.len(), 1, rho0.as_slice());
        let mut prev = 0.0;
        for (v, &t) in values.iter_mut().zip(t_grid) {
            x = stepper.step(&x, prev, t - prev)?;
            prev = t;
            *v += b.dot(&x.column(0)).re / phases.len() as f64;
        }
    }
    Trace::new(t_grid.to_vec(), values, Normalization::Raw)
}

/// Unit-trace fixed point of the one-period map, at the start of a period.
fn periodic_state(l: &Liouvillian, pulse: &Pulse) -> Result<DVector<C64>> {
    let p = propagation::transfer_matrix(l, 0.0, pulse.period)?;
    fixed_point(&p, l.hilbert_dim())
}

fn fixed_point(p: &SuperOperator, dim: usize) -> Result<DVector<C64>> {
    let n = p.nrows();
    let mut a = p - DMatrix::<C64>::identity(n, n);
    let tr = operators::trace_functional(&operators::identity(dim));
    for j in 0..n {
        a[(0, j)] = tr[j];
    }
    let mut rhs = DVector::<C64>::zeros(n);
    rhs[0] = C64::new(1.0, 0.0);
    let x = a
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Numerical("period map has no unique fixed point".into()))?;
    Ok(DensityOperator::from_vectorized(&x, dim).hermitized().vectorized())
}

/// Period-resolved two-time correlations on a uniform lattice, normalized so
/// an uncorrelated side peak has unit area.
#[derive(Debug, Clone, PartialEq)]
pub struct PulsedCorrelations {
    pub bin_width: f64,
    pub period: f64,
    /// `integral dt G2(t, tau_m)` for `tau_m = m * bin_width`, `m = 0..=bins/2`.
    pub central: Vec<f64>,
    /// `integral dt I(t) I(t + tau_m)` over one-period profiles.
    pub side: Vec<f64>,
    /// `integral dt |G1(t, tau_m)|^2`, present when requested.
    pub interference: Option<Vec<f64>>,
    /// Emission profile `I(t_k)` over one period (not normalized).
    pub intensity: Vec<f64>,
}

/// Lattice of `n` bins per period and the bins touched by the pulse.
struct Lattice {
    n: usize,
    dt: f64,
    n_pulse: usize,
}

impl Lattice {
    fn new(pulse: &Pulse) -> Self {
        let n = (pulse.period / PULSED_BIN_NS).round().max(4.0) as usize;
        let dt = pulse.period / n as f64;
        let n_pulse = ((pulse.support().1 / dt).ceil() as usize).clamp(1, n);
        Self { n, dt, n_pulse }
    }

    fn half(&self) -> usize {
        self.n / 2
    }
}

/// Per-phase results before averaging.
struct PhaseRun {
    central: Vec<f64>,
    intensity: Vec<f64>,
    /// `G1(k, m)` for start bins inside the pulse window.
    g1_pulse: Vec<Vec<C64>>,
    /// Stacked first-jump vectors for start bins after the pulse window.
    g1_static: Vec<DVector<C64>>,
}

pub fn pulsed_correlations(
    model: EmissionModel,
    params: &EmitterParams,
    drive: &DriveProtocol,
    with_interference: bool,
) -> Result<PulsedCorrelations> {
    let pulse = pulse_of(drive)?;
    let lat = Lattice::new(&pulse);
    let dipoles = DipoleSet::for_model(model);
    let phases = drive_phases(model, &pulse);

    let mut runs = Vec::with_capacity(phases.len());
    let mut e_step: Option<SuperOperator> = None;
    for &phi in &phases {
        let l = build_generator(model, params, &drive.with_relative_phase(phi))?;
        let e = e_step
            .get_or_insert_with(|| expm(&(l.static_part() * C64::new(lat.dt, 0.0))))
            .clone();
        runs.push(run_phase(&l, &pulse, &lat, &dipoles, &e, with_interference)?);
    }
    let e = e_step.expect("at least one phase");

    let w = 1.0 / runs.len() as f64;
    let m_max = lat.half();
    let mut central = vec![0.0; m_max + 1];
    let mut intensity = vec![0.0; lat.n];
    for r in &runs {
        for (c, v) in central.iter_mut().zip(&r.central) {
            *c += w * v;
        }
        for (c, v) in intensity.iter_mut().zip(&r.intensity) {
            *c += w * v;
        }
    }

    let mut side = vec![0.0; m_max + 1];
    for (m, s) in side.iter_mut().enumerate() {
        *s = (0..lat.n - m)
            .map(|k| intensity[k] * intensity[k + m])
            .sum::<f64>()
            * lat.dt;
    }

    let interference = if with_interference {
        Some(average_interference(&runs, &dipoles, &e, &lat, w))
    } else {
        None
    };

    let area = intensity.iter().sum::<f64>() * lat.dt;
    if area.abs() < f64::MIN_POSITIVE {
        return Err(Error::ZeroDenominator("emitted intensity per period"));
    }
    let norm = 1.0 / (area * area);
    let scale = |v: Vec<f64>| v.into_iter().map(|x| x * norm).collect::<Vec<_>>();
    Ok(PulsedCorrelations {
        bin_width: lat.dt,
        period: pulse.period,
        central: scale(central),
        side: scale(side),
        interference: interference.map(scale),
        intensity,
    })
}

fn run_phase(
    l: &Liouvillian,
    pulse: &Pulse,
    lat: &Lattice,
    dipoles: &DipoleSet,
    e: &SuperOperator,
    with_interference: bool,
) -> Result<PhaseRun> {
    let transfers: Vec<SuperOperator> = (0..lat.n_pulse)
        .map(|k| propagation::transfer_matrix(l, k as f64 * lat.dt, lat.dt))
        .collect::<Result<_>>()?;
    let step = |k: usize| -> &SuperOperator {
        if k < lat.n_pulse {
            &transfers[k]
        } else {
            e
        }
    };

    let rest = expm(&(l.static_part() * C64::new(pulse.period - lat.n_pulse as f64 * lat.dt, 0.0)));
    let period_map = transfers.iter().fold(DMatrix::identity(e.nrows(), e.ncols()), |acc, t| t * acc);
    let period_map = rest * period_map;
    let rho0 = fixed_point(&period_map, l.hilbert_dim())?;

    let b = operators::trace_functional(&dipoles.intensity_operator());
    let jump = dipoles.jump_superoperator();
    let m_max = lat.half();

    let mut states = Vec::with_capacity(lat.n);
    let mut rho = rho0;
    for k in 0..lat.n {
        let next = step(k) * &rho;
        states.push(rho);
        rho = next;
    }
    let intensity: Vec<f64> = states.iter().map(|r| b.dot(r).re).collect();

    let mut central = vec![0.0; m_max + 1];
    // Start bins inside the pulse window: propagate each jump individually.
    for (k, s) in states.iter().enumerate().take(lat.n_pulse) {
        let mut y = &jump * s;
        for (m, c) in central.iter_mut().enumerate() {
            *c += b.dot(&y).re * lat.dt;
            if m < m_max {
                y = step(k + m) * y;
            }
        }
    }
    // Later start bins see only the static generator until the next pulse,
    // so their jumps can be summed before propagation.
    let mut x = states[lat.n_pulse..]
        .iter()
        .fold(DVector::<C64>::zeros(e.nrows()), |acc, r| acc + &jump * r);
    for (m, c) in central.iter_mut().enumerate() {
        *c += b.dot(&x).re * lat.dt;
        if m < m_max {
            x = e * x;
        }
    }

    let (g1_pulse, g1_static) = if with_interference {
        first_order_parts(&states, dipoles, lat, &step)
    } else {
        (Vec::new(), Vec::new())
    };

    Ok(PhaseRun {
        central,
        intensity,
        g1_pulse,
        g1_static,
    })
}

fn first_order_parts<'s>(
    states: &[DVector<C64>],
    dipoles: &DipoleSet,
    lat: &Lattice,
    step: &impl Fn(usize) -> &'s SuperOperator,
) -> (Vec<Vec<C64>>, Vec<DVector<C64>>) {
    let m_max = lat.half();
    let lefts: Vec<(SuperOperator, DVector<C64>)> = dipoles
        .entries()
        .iter()
        .map(|(o, w)| {
            (
                operators::left(o) * C64::new(*w, 0.0),
                operators::trace_functional(&dagger(o)),
            )
        })
        .collect();
    let mut pulse_part = Vec::with_capacity(lat.n_pulse);
    for (k, rho) in states.iter().enumerate().take(lat.n_pulse) {
        let mut row = vec![C64::new(0.0, 0.0); m_max + 1];
        for (left, c) in &lefts {
            let mut y = left * rho;
            for (m, g) in row.iter_mut().enumerate() {
                *g += c.dot(&y);
                if m < m_max {
                    y = step(k + m) * y;
                }
            }
        }
        pulse_part.push(row);
    }
    let n = states[0].len();
    let static_part = states[lat.n_pulse..]
        .iter()
        .map(|rho| {
            let mut stacked = DVector::<C64>::zeros(n * lefts.len());
            for (i, (left, _)) in lefts.iter().enumerate() {
                stacked.rows_mut(i * n, n).copy_from(&(left * rho));
            }
            stacked
        })
        .collect();
    (pulse_part, static_part)
}

/// `sum_k dt |<G1(k, m)>_phase|^2` for each delay bin.
fn average_interference(
    runs: &[PhaseRun],
    dipoles: &DipoleSet,
    e: &SuperOperator,
    lat: &Lattice,
    w: f64,
) -> Vec<f64> {
    let m_max = lat.half();
    let mut out = vec![0.0; m_max + 1];

    for k in 0..lat.n_pulse {
        for (m, o) in out.iter_mut().enumerate() {
            let g: C64 = runs.iter().map(|r| r.g1_pulse[k][m]).sum::<C64>() * w;
            *o += g.norm_sqr() * lat.dt;
        }
    }

    // Static start bins: G1(k, m) = r_m . x_k with r_m the stacked rows c_i^T E^m,
    // so sum_k |G1|^2 = r_m X r_m^dag with X = sum_k x_k x_k^dag.
    let len = runs[0].g1_static.first().map_or(0, |v| v.len());
    if len == 0 {
        return out;
    }
    let mut gram = DMatrix::<C64>::zeros(len, len);
    for k in 0..runs[0].g1_static.len() {
        let mean = runs
            .iter()
            .fold(DVector::<C64>::zeros(len), |acc, r| acc + &r.g1_static[k])
            * C64::new(w, 0.0);
        gram += &mean * mean.adjoint();
    }
    let n = e.nrows();
    let mut rows: Vec<DVector<C64>> = dipoles
        .entries()
        .iter()
        .map(|(o, _)| operators::trace_functional(&dagger(o)))
        .collect();
    let et = e.transpose();
    for (m, o) in out.iter_mut().enumerate() {
        let mut r = DVector::<C64>::zeros(len);
        for (i, row) in rows.iter().enumerate() {
            r.rows_mut(i * n, n).copy_from(row);
        }
        // r^T X conj(r)
        let value = (r.transpose() * &gram * r.map(|z| z.conj()))[(0, 0)];
        *o += value.re * lat.dt;
        if m < m_max {
            for row in rows.iter_mut() {
                *row = &et * &*row;
            }
        }
    }
    out
}

/// Coincidence histogram over several repetition periods.
#[derive(Debug, Clone, PartialEq)]
pub struct PulsedHistogram {
    pub trace: CorrelationTrace,
    pub bin_width: f64,
    pub period: f64,
    /// Complete side peaks on each side of zero delay.
    pub n_side_peaks: usize,
}

impl PulsedHistogram {
    /// Places `central` at zero delay and `side` at every nonzero multiple of
    /// the period up to `n_side_peaks`. Both shapes are given for `m >= 0` bins
    /// and mirrored.
    pub fn from_shapes(
        central: &[f64],
        side: &[f64],
        bin_width: f64,
        period: f64,
        n_side_peaks: usize,
    ) -> Result<Self> {
        if central.len() != side.len() || central.is_empty() {
            return Err(Error::GridMismatch("central and side shapes differ in length".into()));
        }
        let n = (period / bin_width).round() as i64;
        let half = central.len() as i64 - 1;
        let reach = n_side_peaks as i64 * n + half;
        let mut delay = Vec::with_capacity((2 * reach + 1) as usize);
        let mut density = Vec::with_capacity((2 * reach + 1) as usize);
        for j in -reach..=reach {
            let mut v = 0.0;
            for p in -(n_side_peaks as i64)..=(n_side_peaks as i64) {
                let off = (j - p * n).abs();
                if off <= half {
                    v += if p == 0 { central[off as usize] } else { side[off as usize] };
                }
            }
            delay.push(j as f64 * bin_width);
            density.push(v);
        }
        Ok(Self {
            trace: Trace::new(delay, density, Normalization::SidePeak)?,
            bin_width,
            period,
            n_side_peaks,
        })
    }
}

/// Pulsed coincidence histogram spanning `[-tau_span, tau_span]` (extended to
/// complete the outermost side peaks).
///
/// The zero-delay peak comes from exact two-time regression within the
/// period; side peaks factorize into products of single-period profiles.
/// A delay that would cross the next pulse excitation sees free evolution;
/// the emitter has relaxed by then at realistic rates.
pub fn g2_pulsed(
    model: EmissionModel,
    params: &EmitterParams,
    drive: &DriveProtocol,
    tau_span: f64,
) -> Result<PulsedHistogram> {
    let pulse = pulse_of(drive)?;
    let n_side = side_peak_count(&pulse, tau_span)?;
    let c = pulsed_correlations(model, params, drive, false)?;
    PulsedHistogram::from_shapes(&c.central, &c.side, c.bin_width, c.period, n_side)
}

pub(crate) fn side_peak_count(pulse: &Pulse, tau_span: f64) -> Result<usize> {
    if !(tau_span >= pulse.period) {
        return Err(invalid(
            "tau_span",
            format!("{tau_span} ns is shorter than one period ({} ns)", pulse.period),
        ));
    }
    Ok((tau_span / pulse.period + 1e-9).floor() as usize)
}

/// Area within `[center - window/2, center + window/2]` divided by the mean
/// area of the same window placed on each side peak.
pub fn integrate_peak(h: &PulsedHistogram, center: f64, window: f64) -> Result<f64> {
    if !(window > 0.0) {
        return Err(invalid("window", "must be positive"));
    }
    if window > h.period {
        return Err(Error::WindowOverlap {
            window,
            period: h.period,
        });
    }
    if h.n_side_peaks == 0 {
        return Err(invalid("histogram", "no side peaks for normalization"));
    }
    let peak = (center / h.period).round();
    let offset = center - peak * h.period;
    let area = |c: f64| h.trace.integrate(c - 0.5 * window, c + 0.5 * window);
    let ns = h.n_side_peaks as i64;
    let sides: Vec<f64> = (-ns..=ns)
        .filter(|&p| p != 0)
        .map(|p| area(p as f64 * h.period + offset))
        .collect();
    let mean = sides.iter().sum::<f64>() / sides.len() as f64;
    if mean.abs() < f64::MIN_POSITIVE {
        return Err(Error::ZeroDenominator("side-peak area"));
    }
    Ok(area(center) / mean)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn pumped(gamma: f64, gd: f64) -> EmitterParams {
        EmitterParams::new(gamma, gamma, gd).unwrap()
    }

    #[test]
    fn trace_rejects_bad_grids() {
        assert!(Trace::new(vec![0.0, 0.0], vec![1.0, 1.0], Normalization::Raw).is_err());
        assert!(Trace::new(vec![0.0, 1.0], vec![1.0], Normalization::Raw).is_err());
        assert!(Trace::<f64>::new(vec![], vec![], Normalization::Raw).is_err());
    }

    #[test]
    fn partial_integration_matches_trapezoid() {
        let t = Trace::new(uniform_grid(-1.0, 1.0, 201), uniform_grid(-1.0, 1.0, 201), Normalization::Raw)
            .unwrap()
            .map(|x| x * x);
        assert!((t.integrate(-1.0, 1.0) - t.integral()).abs() < 1e-14);
        assert!((t.integrate(0.0, 0.5) - 0.125 / 3.0).abs() < 1e-4);
        assert!((t.integrate(-5.0, 5.0) - t.integral()).abs() < 1e-14);
        assert_eq!(t.integrate(2.0, 3.0), 0.0);
        assert!((t.value_at(0.505).unwrap() - 0.505f64.powi(2)).abs() < 1e-4);
    }

    #[test]
    fn analytic_forms_limits() {
        assert_eq!(analytic_g2_cw(1.0, 3.0, 0.0), 1.0);
        assert!((analytic_g2_cw(1.0, 3.0, 80.0) - 1.0).abs() < 1e-15);
        assert_eq!(analytic_g2_pulsed_peak(1.0, 3.0, 0.0), 1.0);
        let g = 1.0 / 0.643;
        assert!((analytic_g2_pulsed_peak(g, 0.0, -0.4) - (-g * 0.4).exp()).abs() < 1e-15);
    }

    #[test]
    fn single_emitter_has_no_zero_delay_pairs() {
        let p = EmitterParams::new(1.0, 0.5, 0.2).unwrap();
        let rho = DensityOperator::single_mixed(0.4).unwrap();
        let g = two_time_g2(EmissionModel::Single, &p, &DriveProtocol::IncoherentCw, &rho, 0.7, &[0.0, 0.5]).unwrap();
        assert_eq!(g.values()[0], 0.0);
        assert!(g.values()[1] > 0.0);
    }

    #[test]
    fn doubly_excited_pair_gives_unit_raw_coincidence() {
        let p = pumped(1.0, 0.0);
        let ee = DensityOperator::doubly_excited();
        let g = two_time_g2(EmissionModel::Cooperative, &p, &DriveProtocol::IncoherentCw, &ee, 0.0, &[0.0]).unwrap();
        assert!((g.values()[0] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn independent_half_filled_product_gives_one_half() {
        let p = pumped(1.0, 0.3);
        let rho = DensityOperator::product(0.5, 0.5).unwrap();
        let g = two_time_g2_normalized(EmissionModel::Independent, &p, &DriveProtocol::IncoherentCw, &rho, 0.0, &[0.0]).unwrap();
        assert!((g.values()[0] - 0.5).abs() < 1e-14);
    }

    #[test]
    fn cw_cooperative_matches_closed_form() {
        let gamma = 1.0 / 1.76;
        for gd in [0.0, gamma, 10.0 * gamma] {
            let p = pumped(gamma, gd);
            let grid = default_tau_grid(&p).unwrap();
            let g = g2_cw(EmissionModel::Cooperative, &p, &DriveProtocol::IncoherentCw, &grid).unwrap();
            for (t, v) in g.delay().iter().zip(g.values()) {
                let want = analytic_g2_cw(gamma, gd, *t);
                assert!(((v - want) / want).abs() < 1e-6, "gd={gd} t={t}: {v} vs {want}");
            }
        }
    }

    #[test]
    fn cw_single_pumped_matches_closed_form() {
        let (gamma, gp) = (1.0, 0.6);
        let p = EmitterParams::new(gamma, gp, 0.4).unwrap();
        let grid = uniform_grid(0.0, 6.0, 301);
        let g = g2_cw(EmissionModel::Single, &p, &DriveProtocol::IncoherentCw, &grid).unwrap();
        for (t, v) in g.delay().iter().zip(g.values()) {
            assert!((v - (1.0 - (-(gamma + gp) * t).exp())).abs() < 1e-8);
        }
        let g1 = g1_cw(EmissionModel::Single, &p, &DriveProtocol::IncoherentCw, &grid).unwrap();
        for (t, v) in g1.delay().iter().zip(g1.values()) {
            let want = (-(gamma + gp + 0.4) * t / 2.0).exp();
            assert!((v.norm() - want).abs() < 1e-10);
        }
    }

    #[test]
    fn cw_time_symmetry_is_exact() {
        let p = pumped(0.8, 1.1);
        let grid = uniform_grid(-3.0, 3.0, 121);
        let g = g2_cw(EmissionModel::Independent, &p, &DriveProtocol::coherent_cw(0.9), &grid).unwrap();
        let v = g.values();
        for i in 0..v.len() {
            assert_eq!(v[i], v[v.len() - 1 - i]);
        }
    }

    #[test]
    fn pulsed_requires_a_full_period() {
        let p = EmitterParams::new(1.0 / 0.643, 0.0, 0.0).unwrap();
        let drive = DriveProtocol::pulsed(PI / 2.0);
        assert!(g2_pulsed(EmissionModel::Single, &p, &drive, 5.0).is_err());
        assert!(g2_pulsed(EmissionModel::Single, &p, &DriveProtocol::IncoherentCw, 30.0).is_err());
    }

    #[test]
    fn pi_pulse_single_emitter_suppresses_central_peak() {
        let p = EmitterParams::new(1.0 / 0.643, 0.0, 1.0 / 0.28).unwrap();
        let h = g2_pulsed(EmissionModel::Single, &p, &DriveProtocol::pulsed(PI), 12.44).unwrap();
        let g = integrate_peak(&h, 0.0, 10.0).unwrap();
        assert!(g < 0.05, "{g}");
        assert!((integrate_peak(&h, h.period, 10.0).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn side_shape_is_profile_autocorrelation() {
        let p = EmitterParams::new(1.0 / 0.643, 0.0, 2.0).unwrap();
        let c = pulsed_correlations(EmissionModel::Single, &p, &DriveProtocol::pulsed(PI / 2.0), false).unwrap();
        let area = c.intensity.iter().sum::<f64>() * c.bin_width;
        let m = 37;
        let direct: f64 = (0..c.intensity.len() - m)
            .map(|k| c.intensity[k] * c.intensity[k + m])
            .sum::<f64>()
            * c.bin_width
            / (area * area);
        assert!((c.side[m] - direct).abs() < 1e-8);
    }

    #[test]
    fn window_wider_than_period_is_rejected() {
        let h = PulsedHistogram::from_shapes(&[1.0; 3], &[1.0; 3], 1.0, 4.0, 1).unwrap();
        assert!(matches!(integrate_peak(&h, 0.0, 5.0), Err(Error::WindowOverlap { .. })));
    }
}
