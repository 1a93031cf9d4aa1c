//! Liouville-space propagation: matrix exponential for static generators,
//! classical RK4 inside drive pulses, and stationary states.

use nalgebra::{DMatrix, DVector};

use crate::density::DensityOperator;
use crate::dynamics::Liouvillian;
use crate::error::{invalid, Error, Result};
use crate::operators::{self, SuperOperator, C64};

/// Singular values below this fraction of the largest count as null directions.
const NULL_SPACE_TOL: f64 = 1e-10;

/// Step bound inside pulses: `min(fwhm / 50, 0.1 / max_rate)`.
pub fn pulse_step_bound(l: &Liouvillian) -> f64 {
    let rate = l.max_rate().max(f64::MIN_POSITIVE);
    match l.driven_part() {
        Some(d) => (d.pulse.fwhm / 50.0).min(0.1 / rate),
        None => 0.1 / rate,
    }
}

/// `exp(A)` by scaling and squaring with a degree-13 Padé approximant.
pub fn expm(a: &DMatrix<C64>) -> DMatrix<C64> {
    const B: [f64; 14] = [
        64_764_752_532_480_000.0,
        32_382_376_266_240_000.0,
        7_771_770_303_897_600.0,
        1_187_353_796_428_800.0,
        129_060_195_264_000.0,
        10_559_470_521_600.0,
        670_442_572_800.0,
        33_522_128_640.0,
        1_323_241_920.0,
        40_840_800.0,
        960_960.0,
        16_380.0,
        182.0,
        1.0,
    ];
    const THETA_13: f64 = 5.371_920_351_148_152;

    let n = a.nrows();
    let eye = DMatrix::<C64>::identity(n, n);
    let norm = one_norm(a);
    if norm == 0.0 {
        return eye;
    }
    let s = if norm > THETA_13 {
        (norm / THETA_13).log2().ceil() as i32
    } else {
        0
    };
    let a = a * C64::new(0.5f64.powi(s), 0.0);
    let c = |k: usize| C64::new(B[k], 0.0);

    let a2 = &a * &a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;

    let u_inner = &a6 * (&a6 * c(13) + &a4 * c(11) + &a2 * c(9));
    let u = &a * (u_inner + &a6 * c(7) + &a4 * c(5) + &a2 * c(3) + &eye * c(1));
    let v = &a6 * (&a6 * c(12) + &a4 * c(10) + &a2 * c(8))
        + &a6 * c(6)
        + &a4 * c(4)
        + &a2 * c(2)
        + &eye * c(0);

    let p = &v + &u;
    let q = &v - &u;
    let mut r = q.lu().solve(&p).expect("Padé denominator is invertible");
    for _ in 0..s {
        r = &r * &r;
    }
    r
}

fn one_norm(a: &DMatrix<C64>) -> f64 {
    a.column_iter()
        .map(|c| c.iter().map(|z| z.norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

fn check_step(t0: f64, dt: f64) -> Result<()> {
    if !(dt >= 0.0) || !dt.is_finite() {
        return Err(invalid("dt", format!("{dt} must be finite and >= 0")));
    }
    if dt > 0.0 && t0 + dt == t0 {
        return Err(Error::StepUnderflow { t: t0, dt });
    }
    Ok(())
}

/// One classical RK4 step of `dx/dt = L(t) x`.
fn rk4_step(l: &Liouvillian, t: f64, h: f64, x: &DVector<C64>) -> DVector<C64> {
    let hc = C64::new(h, 0.0);
    let half = C64::new(0.5 * h, 0.0);
    let l0 = l.at(t);
    let lm = l.at(t + 0.5 * h);
    let l1 = l.at(t + h);
    let k1 = &l0 * x;
    let k2 = &lm * (x + &k1 * half);
    let k3 = &lm * (x + &k2 * half);
    let k4 = &l1 * (x + &k3 * hc);
    x + (k1 + (k2 + k3) * C64::new(2.0, 0.0) + k4) * C64::new(h / 6.0, 0.0)
}

fn rk4_step_matrix(l: &Liouvillian, t: f64, h: f64, x: &DMatrix<C64>) -> DMatrix<C64> {
    let hc = C64::new(h, 0.0);
    let half = C64::new(0.5 * h, 0.0);
    let l0 = l.at(t);
    let lm = l.at(t + 0.5 * h);
    let l1 = l.at(t + h);
    let k1 = &l0 * x;
    let k2 = &lm * (x + &k1 * half);
    let k3 = &lm * (x + &k2 * half);
    let k4 = &l1 * (x + &k3 * hc);
    x + (k1 + (k2 + k3) * C64::new(2.0, 0.0) + k4) * C64::new(h / 6.0, 0.0)
}

/// Fixed-step RK4 from `t0` to `t0 + dt` with steps no longer than `max_step`.
pub fn integrate_rk4(
    x: &DVector<C64>,
    l: &Liouvillian,
    t0: f64,
    dt: f64,
    max_step: f64,
) -> Result<DVector<C64>> {
    check_step(t0, dt)?;
    if !(max_step > 0.0) {
        return Err(invalid("max_step", "must be positive"));
    }
    if dt == 0.0 {
        return Ok(x.clone());
    }
    let n = (dt / max_step).ceil().max(1.0) as usize;
    let h = dt / n as f64;
    let mut y = x.clone();
    for k in 0..n {
        y = rk4_step(l, t0 + k as f64 * h, h, &y);
    }
    Ok(y)
}

/// Breakpoints splitting `[t0, t1]` into pieces on which the generator is
/// either static or inside a pulse window.
fn segments(l: &Liouvillian, t0: f64, t1: f64) -> Vec<(f64, f64)> {
    let mut cuts = vec![t0];
    if let Some(d) = l.driven_part() {
        let p = &d.pulse;
        let (lo, hi) = p.support();
        let mut k = (t0 / p.period).floor() - 1.0;
        while k * p.period <= t1 {
            for edge in [k * p.period + lo, k * p.period + hi] {
                if edge > t0 && edge < t1 {
                    cuts.push(edge);
                }
            }
            k += 1.0;
        }
    }
    cuts.push(t1);
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    cuts.windows(2).map(|w| (w[0], w[1])).collect()
}

/// Evolves a vectorized (pseudo-)density operator from `t0` to `t0 + dt`.
pub fn propagate_vec(x: &DVector<C64>, l: &Liouvillian, t0: f64, dt: f64) -> Result<DVector<C64>> {
    check_step(t0, dt)?;
    if x.len() != l.liouville_dim() {
        return Err(Error::DimensionMismatch {
            expected: l.liouville_dim(),
            found: x.len(),
        });
    }
    if dt == 0.0 {
        return Ok(x.clone());
    }
    if l.is_static() {
        return Ok(expm(&(l.static_part() * C64::new(dt, 0.0))) * x);
    }
    let h = pulse_step_bound(l);
    let mut y = x.clone();
    for (a, b) in segments(l, t0, t0 + dt) {
        let mid = 0.5 * (a + b);
        if l.is_static_on(mid, mid) && l.is_static_on(a, b) {
            y = expm(&(l.static_part() * C64::new(b - a, 0.0))) * y;
        } else {
            y = integrate_rk4(&y, l, a, b - a, h)?;
        }
    }
    Ok(y)
}

/// `exp(L dt) vec(rho)` for a static generator; piecewise exponential / RK4
/// across pulses otherwise. Unnormalized inputs are propagated as-is.
pub fn propagate(rho: &DensityOperator, l: &Liouvillian, dt: f64) -> Result<DensityOperator> {
    propagate_from(rho, l, 0.0, dt)
}

pub fn propagate_from(
    rho: &DensityOperator,
    l: &Liouvillian,
    t0: f64,
    dt: f64,
) -> Result<DensityOperator> {
    if rho.dim() != l.hilbert_dim() {
        return Err(Error::DimensionMismatch {
            expected: l.hilbert_dim(),
            found: rho.dim(),
        });
    }
    let y = propagate_vec(&rho.vectorized(), l, t0, dt)?;
    Ok(DensityOperator::from_vectorized(&y, rho.dim()))
}

/// Superoperator `Phi(t0 + dt, t0)`.
pub fn transfer_matrix(l: &Liouvillian, t0: f64, dt: f64) -> Result<SuperOperator> {
    check_step(t0, dt)?;
    let n = l.liouville_dim();
    if l.is_static_on(t0, t0 + dt) {
        return Ok(expm(&(l.static_part() * C64::new(dt, 0.0))));
    }
    let mut phi = DMatrix::<C64>::identity(n, n);
    let h = pulse_step_bound(l);
    for (a, b) in segments(l, t0, t0 + dt) {
        if l.is_static_on(a, b) {
            phi = expm(&(l.static_part() * C64::new(b - a, 0.0))) * phi;
        } else {
            let steps = ((b - a) / h).ceil().max(1.0) as usize;
            let hh = (b - a) / steps as f64;
            for k in 0..steps {
                phi = rk4_step_matrix(l, a + k as f64 * hh, hh, &phi);
            }
        }
    }
    Ok(phi)
}

/// Unique unit-trace stationary state of a static generator.
pub fn steady_state(l: &Liouvillian) -> Result<DensityOperator> {
    if !l.is_static() {
        return Err(invalid("liouvillian", "steady state requires a static generator"));
    }
    let m = l.static_part();
    let n = m.nrows();
    let d = l.hilbert_dim();

    let sv = m.clone().svd(false, false).singular_values;
    let smax = sv.max();
    let multiplicity = sv.iter().filter(|&&s| s <= NULL_SPACE_TOL * smax.max(1.0)).count();
    if multiplicity != 1 {
        if multiplicity == 0 {
            return Err(Error::Numerical(
                "generator has no stationary state (no null vector)".into(),
            ));
        }
        return Err(Error::DegenerateSteadyState { multiplicity });
    }

    // Replace one equation by the trace condition. The row of the first diagonal
    // element is redundant because columns of L sum to zero against <<1|.
    let mut a = m.clone();
    let tr = operators::trace_functional(&operators::identity(d));
    for j in 0..n {
        a[(0, j)] = tr[j];
    }
    let mut b = DVector::<C64>::zeros(n);
    b[0] = C64::new(1.0, 0.0);
    let x = a
        .lu()
        .solve(&b)
        .ok_or_else(|| Error::Numerical("singular stationary-state system".into()))?;
    let rho = DensityOperator::from_vectorized(&x, d).hermitized();
    Ok(rho)
}

/// `|| L vec(rho) ||_2`
pub fn stationarity_residual(l: &Liouvillian, rho: &DensityOperator) -> f64 {
    (l.static_part() * rho.vectorized()).norm()
}
