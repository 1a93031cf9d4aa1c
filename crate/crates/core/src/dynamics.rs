//! Emitter parameters, drive protocols and Lindblad generators for the four
//! emission models.
//!
//! Units: rates and Rabi frequencies in 1/ns (angular), times in ns, hbar = 1.

use std::f64::consts::PI;

use crate::error::{invalid, Error, Result};
use crate::operators::{
    self, commutator, dagger, identity, number, pair_sigma_minus, sandwich, symmetric_sigma_minus,
    Operator, SuperOperator, C64,
};

/// FWHM of a Gaussian in units of its standard deviation, `2 sqrt(2 ln 2)`.
pub const FWHM_PER_SIGMA: f64 = 2.354_820_045_030_949_3;

/// The Gaussian pulse envelope is treated as exactly zero beyond this many
/// standard deviations from its centre (relative amplitude below 1.3e-14).
pub const PULSE_HALF_SPAN_SIGMAS: f64 = 8.0;

pub const DEFAULT_LIFETIME_NS: f64 = 0.643;
pub const DEFAULT_PULSE_FWHM_NS: f64 = 0.040;
pub const DEFAULT_PERIOD_NS: f64 = 12.44;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmitterParams {
    /// Spontaneous emission rate of one emitter.
    pub gamma: f64,
    /// Incoherent pump rate.
    pub gamma_p: f64,
    /// Pure dephasing rate.
    pub gamma_d: f64,
    /// Collective decay rate of the superradiant model; `None` means `2 gamma`.
    pub gamma_sr: Option<f64>,
}

impl EmitterParams {
    pub fn new(gamma: f64, gamma_p: f64, gamma_d: f64) -> Result<Self> {
        let p = Self {
            gamma,
            gamma_p,
            gamma_d,
            gamma_sr: None,
        };
        p.validate()?;
        Ok(p)
    }

    /// Parameters from a radiative lifetime and dephasing time (ns); an infinite
    /// dephasing time means no pure dephasing.
    pub fn from_times(lifetime: f64, dephasing_time: f64) -> Result<Self> {
        if !(lifetime > 0.0) {
            return Err(invalid("lifetime", "must be positive"));
        }
        if !(dephasing_time > 0.0) {
            return Err(invalid("dephasing_time", "must be positive"));
        }
        Self::new(1.0 / lifetime, 0.0, 1.0 / dephasing_time)
    }

    pub fn with_pump(mut self, gamma_p: f64) -> Result<Self> {
        self.gamma_p = gamma_p;
        self.validate()?;
        Ok(self)
    }

    pub fn with_collective_rate(mut self, gamma_sr: f64) -> Result<Self> {
        self.gamma_sr = Some(gamma_sr);
        self.validate()?;
        Ok(self)
    }

    pub fn collective_rate(&self) -> f64 {
        self.gamma_sr.unwrap_or(2.0 * self.gamma)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("gamma", self.gamma),
            ("gamma_p", self.gamma_p),
            ("gamma_d", self.gamma_d),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(invalid(name, format!("rate {v} must be finite and >= 0")));
            }
        }
        if let Some(g) = self.gamma_sr {
            if !(g >= 0.0 && g.is_finite()) {
                return Err(invalid("gamma_sr", format!("rate {g} must be finite and >= 0")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EmissionModel {
    Single,
    Independent,
    Cooperative,
    Superradiant,
}

impl EmissionModel {
    pub const ALL: [EmissionModel; 4] = [
        EmissionModel::Single,
        EmissionModel::Independent,
        EmissionModel::Cooperative,
        EmissionModel::Superradiant,
    ];

    pub fn hilbert_dim(self) -> usize {
        match self {
            EmissionModel::Single => 2,
            _ => 4,
        }
    }

    pub fn n_emitters(self) -> usize {
        self.hilbert_dim() / 2
    }

    pub fn name(self) -> &'static str {
        match self {
            EmissionModel::Single => "single",
            EmissionModel::Independent => "independent",
            EmissionModel::Cooperative => "cooperative",
            EmissionModel::Superradiant => "superradiant",
        }
    }
}

impl std::str::FromStr for EmissionModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single" => Ok(EmissionModel::Single),
            "independent" => Ok(EmissionModel::Independent),
            "cooperative" => Ok(EmissionModel::Cooperative),
            "superradiant" => Ok(EmissionModel::Superradiant),
            other => Err(invalid("model", format!("unknown emission model `{other}`"))),
        }
    }
}

/// Gaussian coherent pulse train.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pulse {
    /// `integral of Omega(t) dt` (rad).
    pub area: f64,
    pub fwhm: f64,
    pub period: f64,
    /// Laser minus emitter detuning for each emitter (rad/ns).
    pub detuning: [f64; 2],
    /// Optical phase of the drive on emitter 2 relative to emitter 1.
    pub relative_phase: f64,
    /// Average pulse-to-pulse over the relative drive phase of the two emitters.
    pub phase_averaged: bool,
}

impl Pulse {
    pub fn new(area: f64, fwhm: f64, period: f64) -> Result<Self> {
        let p = Self {
            area,
            fwhm,
            period,
            detuning: [0.0; 2],
            relative_phase: 0.0,
            phase_averaged: true,
        };
        p.validate()?;
        Ok(p)
    }

    /// Pulse with the default 40 ps width and 12.44 ns repetition period.
    pub fn with_area(area: f64) -> Self {
        Self::new(area, DEFAULT_PULSE_FWHM_NS, DEFAULT_PERIOD_NS).expect("default pulse is valid")
    }

    pub fn sigma(&self) -> f64 {
        self.fwhm / FWHM_PER_SIGMA
    }

    pub fn center(&self) -> f64 {
        PULSE_HALF_SPAN_SIGMAS * self.sigma()
    }

    /// Time interval outside of which the envelope is zero.
    pub fn support(&self) -> (f64, f64) {
        (0.0, 2.0 * PULSE_HALF_SPAN_SIGMAS * self.sigma())
    }

    /// Rabi frequency `Omega(t)` within one period starting at t = 0.
    pub fn envelope(&self, t: f64) -> f64 {
        let (lo, hi) = self.support();
        if t < lo || t > hi {
            return 0.0;
        }
        let s = self.sigma();
        let x = (t - self.center()) / s;
        self.area / (s * (2.0 * PI).sqrt()) * (-0.5 * x * x).exp()
    }

    pub fn peak_rabi(&self) -> f64 {
        self.envelope(self.center()).abs()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fwhm > 0.0 && self.fwhm.is_finite()) {
            return Err(invalid("pulse_fwhm", "must be positive"));
        }
        if !(self.period > self.fwhm) {
            return Err(invalid("period", "must exceed the pulse width"));
        }
        if self.support().1 >= self.period {
            return Err(invalid(
                "period",
                format!(
                    "must exceed the pulse support {} ns",
                    self.support().1
                ),
            ));
        }
        if !self.area.is_finite() {
            return Err(invalid("pulse_area", "must be finite"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DriveProtocol {
    /// Incoherent pumping at `gamma_p`, no coherent field.
    IncoherentCw,
    /// Continuous resonant drive with Rabi frequency `rabi`.
    CoherentCw {
        rabi: f64,
        detuning: [f64; 2],
        relative_phase: f64,
    },
    CoherentPulsed(Pulse),
}

impl DriveProtocol {
    pub fn coherent_cw(rabi: f64) -> Self {
        DriveProtocol::CoherentCw {
            rabi,
            detuning: [0.0; 2],
            relative_phase: 0.0,
        }
    }

    pub fn pulsed(area: f64) -> Self {
        DriveProtocol::CoherentPulsed(Pulse::with_area(area))
    }

    pub fn is_pulsed(&self) -> bool {
        matches!(self, DriveProtocol::CoherentPulsed(_))
    }

    pub fn pulse(&self) -> Option<&Pulse> {
        match self {
            DriveProtocol::CoherentPulsed(p) => Some(p),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            DriveProtocol::IncoherentCw => Ok(()),
            DriveProtocol::CoherentCw { rabi, detuning, .. } => {
                if !rabi.is_finite() || detuning.iter().any(|d| !d.is_finite()) {
                    return Err(invalid("rabi", "drive parameters must be finite"));
                }
                Ok(())
            }
            DriveProtocol::CoherentPulsed(p) => p.validate(),
        }
    }

    /// Same drive with the relative optical phase on emitter 2 replaced.
    pub fn with_relative_phase(&self, phase: f64) -> Self {
        match *self {
            DriveProtocol::CoherentCw { rabi, detuning, .. } => DriveProtocol::CoherentCw {
                rabi,
                detuning,
                relative_phase: phase,
            },
            DriveProtocol::CoherentPulsed(mut p) => {
                p.relative_phase = phase;
                DriveProtocol::CoherentPulsed(p)
            }
            DriveProtocol::IncoherentCw => DriveProtocol::IncoherentCw,
        }
    }
}

/// Time-dependent coherent part: `Omega(t) * coupling`.
#[derive(Debug, Clone, PartialEq)]
pub struct DrivenPart {
    pub coupling: SuperOperator,
    pub pulse: Pulse,
}

/// Generator of the open-system dynamics acting on column-stacked density operators.
#[derive(Debug, Clone, PartialEq)]
pub struct Liouvillian {
    dim: usize,
    static_part: SuperOperator,
    driven: Option<DrivenPart>,
}

impl Liouvillian {
    pub fn from_static(dim: usize, matrix: SuperOperator) -> Result<Self> {
        if matrix.nrows() != dim * dim || matrix.ncols() != dim * dim {
            return Err(Error::DimensionMismatch {
                expected: dim * dim,
                found: matrix.nrows(),
            });
        }
        Ok(Self {
            dim,
            static_part: matrix,
            driven: None,
        })
    }

    pub fn zero(dim: usize) -> Self {
        Self {
            dim,
            static_part: SuperOperator::zeros(dim * dim, dim * dim),
            driven: None,
        }
    }

    pub fn hilbert_dim(&self) -> usize {
        self.dim
    }

    pub fn liouville_dim(&self) -> usize {
        self.dim * self.dim
    }

    pub fn is_static(&self) -> bool {
        self.driven.is_none()
    }

    pub fn static_part(&self) -> &SuperOperator {
        &self.static_part
    }

    pub fn driven_part(&self) -> Option<&DrivenPart> {
        self.driven.as_ref()
    }

    /// Generator matrix at time `t` (time measured within one drive period).
    pub fn at(&self, t: f64) -> SuperOperator {
        match &self.driven {
            None => self.static_part.clone(),
            Some(d) => {
                let omega = d.pulse.envelope(t.rem_euclid(d.pulse.period));
                if omega == 0.0 {
                    self.static_part.clone()
                } else {
                    &self.static_part + &d.coupling * C64::new(omega, 0.0)
                }
            }
        }
    }

    /// Whether the generator is time-independent on `[t0, t1]`.
    pub fn is_static_on(&self, t0: f64, t1: f64) -> bool {
        match &self.driven {
            None => true,
            Some(d) => {
                let p = &d.pulse;
                let (lo, hi) = p.support();
                let k0 = (t0 / p.period).floor();
                let k1 = (t1 / p.period).floor();
                if k1 > k0 + 1.0 {
                    return false;
                }
                // Pulse windows [k T + lo, k T + hi] for the periods touched.
                let mut k = k0;
                while k <= k1 {
                    let a = k * p.period + lo;
                    let b = k * p.period + hi;
                    if t1 > a && t0 < b {
                        return false;
                    }
                    k += 1.0;
                }
                true
            }
        }
    }

    /// Largest rate scale used to bound integrator steps.
    pub fn max_rate(&self) -> f64 {
        let base = operators::max_abs(self.static_part.iter());
        match &self.driven {
            None => base,
            Some(d) => base + d.pulse.peak_rabi() * operators::max_abs(d.coupling.iter()),
        }
    }

    /// Largest column sum of `|<<1| L|` entries; zero for a trace-preserving generator.
    pub fn trace_defect(&self) -> f64 {
        let t = operators::trace_functional(&identity(self.dim));
        let mut worst: f64 = 0.0;
        let mats: Vec<&SuperOperator> = match &self.driven {
            None => vec![&self.static_part],
            Some(d) => vec![&self.static_part, &d.coupling],
        };
        for m in mats {
            let row = t.transpose() * m;
            worst = worst.max(operators::max_abs(row.iter()));
        }
        worst
    }
}

/// `rate * L[A]` with `L[A](rho) = A rho A^+ - (A^+A rho + rho A^+A)/2`, vectorized.
pub fn lindblad_dissipator(a: &Operator, rate: f64) -> Result<SuperOperator> {
    if !a.is_square() {
        return Err(Error::DimensionMismatch {
            expected: a.nrows(),
            found: a.ncols(),
        });
    }
    if !(rate >= 0.0 && rate.is_finite()) {
        return Err(invalid("rate", format!("{rate} must be finite and >= 0")));
    }
    let ad = dagger(a);
    let ada = &ad * a;
    let eye = identity(a.nrows());
    let half = C64::new(0.5, 0.0);
    let d = sandwich(a, &ad) - (sandwich(&ada, &eye) + sandwich(&eye, &ada)) * half;
    Ok(d * C64::new(rate, 0.0))
}

fn drive_hamiltonian(
    model: EmissionModel,
    rabi: f64,
    detuning: [f64; 2],
    relative_phase: f64,
) -> (Operator, Operator) {
    // Returns (coupling per unit Omega, detuning part).
    let lowering: Vec<Operator> = match model {
        EmissionModel::Single => vec![operators::sigma_minus()],
        _ => vec![pair_sigma_minus(0), pair_sigma_minus(1)],
    };
    let dim = model.hilbert_dim();
    let mut coupling = Operator::zeros(dim, dim);
    let mut det = Operator::zeros(dim, dim);
    for (i, s) in lowering.iter().enumerate() {
        let phase = if i == 1 { relative_phase } else { 0.0 };
        let e = C64::from_polar(0.5, phase);
        coupling += dagger(s) * e + s * e.conj();
        det += number(s) * C64::new(detuning[i], 0.0);
    }
    (coupling * C64::new(rabi, 0.0), det)
}

/// Sums the dissipators of the chosen model and the coherent drive term.
///
/// The drive Hamiltonian in the laser frame is
/// `H = sum_i Omega(t)/2 (e^{i phi_i} sigma_i^+ + h.c.) + delta_i sigma_i^+ sigma_i^-`
/// with `phi_1 = 0` and `phi_2` the relative phase of the drive.
pub fn build_generator(
    model: EmissionModel,
    params: &EmitterParams,
    drive: &DriveProtocol,
) -> Result<Liouvillian> {
    params.validate()?;
    drive.validate()?;
    let dim = model.hilbert_dim();
    if model != EmissionModel::Superradiant && params.gamma_sr.is_some() {
        return Err(invalid(
            "gamma_sr",
            format!(
                "collective decay cannot be combined with the per-emitter decay of the {} model",
                model.name()
            ),
        ));
    }
    let lowering: Vec<Operator> = match model {
        EmissionModel::Single => vec![operators::sigma_minus()],
        _ => vec![pair_sigma_minus(0), pair_sigma_minus(1)],
    };

    let mut l = SuperOperator::zeros(dim * dim, dim * dim);
    for s in &lowering {
        if model != EmissionModel::Superradiant {
            l += lindblad_dissipator(s, params.gamma)?;
        }
        if params.gamma_p > 0.0 {
            l += lindblad_dissipator(&dagger(s), params.gamma_p)?;
        }
        if params.gamma_d > 0.0 {
            l += lindblad_dissipator(&number(s), params.gamma_d)?;
        }
    }
    if model == EmissionModel::Superradiant {
        l += lindblad_dissipator(&symmetric_sigma_minus(), params.collective_rate())?;
    }

    let driven = match *drive {
        DriveProtocol::IncoherentCw => None,
        DriveProtocol::CoherentCw {
            rabi,
            detuning,
            relative_phase,
        } => {
            let (h, det) = drive_hamiltonian(model, rabi, detuning, relative_phase);
            l += commutator(&(h + det));
            None
        }
        DriveProtocol::CoherentPulsed(pulse) => {
            let (h, det) = drive_hamiltonian(model, 1.0, pulse.detuning, pulse.relative_phase);
            l += commutator(&det);
            Some(DrivenPart {
                coupling: commutator(&h),
                pulse,
            })
        }
    };

    Ok(Liouvillian {
        dim,
        static_part: l,
        driven,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::DensityOperator;
    use crate::operators::{ket, unvectorize, vectorize, EE, EG, GE, GG};

    fn apply(l: &SuperOperator, rho: &Operator) -> Operator {
        let d = rho.nrows();
        unvectorize(&(l * vectorize(rho)), d)
    }

    #[test]
    fn decay_moves_population_from_excited_to_ground() {
        let gamma = 1.7;
        let l = lindblad_dissipator(&operators::sigma_minus(), gamma).unwrap();
        let rho = DensityOperator::basis_state(2, 1).unwrap();
        let d = apply(&l, rho.matrix());
        assert!((d[(0, 0)].re - gamma).abs() < 1e-14);
        assert!((d[(1, 1)].re + gamma).abs() < 1e-14);
    }

    #[test]
    fn dephasing_acts_only_on_coherences() {
        let gd = 0.8;
        let l = lindblad_dissipator(&number(&operators::sigma_minus()), gd).unwrap();
        let rho = Operator::from_element(2, 2, C64::new(0.5, 0.0));
        let d = apply(&l, &rho);
        assert!(d[(0, 0)].norm() < 1e-15 && d[(1, 1)].norm() < 1e-15);
        assert!((d[(0, 1)].re + gd / 2.0 * 0.5).abs() < 1e-15);
        assert!((d[(1, 0)].re + gd / 2.0 * 0.5).abs() < 1e-15);
    }

    #[test]
    fn collective_decay_feeds_only_the_symmetric_state() {
        // L[sigma_S^-] on |ee><ee|: sigma_S^- |ee> = |S>, <ee|sigma_S^+ sigma_S^-|ee> = 1,
        // so d rho/dt = Gamma (|S><S| - |ee><ee|).
        let big_gamma = 2.0 * 1.3;
        let l = lindblad_dissipator(&symmetric_sigma_minus(), big_gamma).unwrap();
        let d = apply(&l, DensityOperator::doubly_excited().matrix());
        let s = operators::symmetric_state();
        let a = operators::antisymmetric_state();
        let in_s = (s.adjoint() * &d * &s)[(0, 0)].re;
        let in_a = (a.adjoint() * &d * &a)[(0, 0)].re;
        assert!((in_s - big_gamma).abs() < 1e-14);
        assert!(in_a.abs() < 1e-15);
        assert!((d[(EE, EE)].re + big_gamma).abs() < 1e-14);
        // Coherence between |eg> and |ge> equals half of the symmetric population.
        assert!((d[(EG, GE)].re - big_gamma / 2.0).abs() < 1e-14);
        assert!(d[(GG, GG)].norm() < 1e-15);
        let _ = ket(4, 0);
    }

    #[test]
    fn dissipator_rejects_non_square_operator() {
        let a = Operator::zeros(2, 3);
        assert!(matches!(
            lindblad_dissipator(&a, 1.0),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn generators_preserve_trace() {
        let p = EmitterParams::new(1.0, 0.4, 0.7).unwrap();
        for model in EmissionModel::ALL {
            for drive in [
                DriveProtocol::IncoherentCw,
                DriveProtocol::coherent_cw(2.0),
                DriveProtocol::pulsed(PI),
            ] {
                let l = build_generator(model, &p, &drive).unwrap();
                assert!(l.trace_defect() < 1e-14, "{model:?} {drive:?}");
            }
        }
    }

    #[test]
    fn collective_rate_with_local_model_is_rejected() {
        let p = EmitterParams::new(1.0, 0.0, 0.0)
            .unwrap()
            .with_collective_rate(2.0)
            .unwrap();
        assert!(build_generator(EmissionModel::Cooperative, &p, &DriveProtocol::IncoherentCw).is_err());
        assert!(build_generator(EmissionModel::Superradiant, &p, &DriveProtocol::IncoherentCw).is_ok());
    }

    #[test]
    fn pulse_area_is_integral_of_envelope() {
        let p = Pulse::with_area(PI);
        let (lo, hi) = p.support();
        let n = 20000;
        let h = (hi - lo) / n as f64;
        let area: f64 = (0..=n)
            .map(|k| {
                let w = if k == 0 || k == n { 0.5 } else { 1.0 };
                w * p.envelope(lo + k as f64 * h)
            })
            .sum::<f64>()
            * h;
        assert!((area - PI).abs() < 1e-10);
    }

    #[test]
    fn invalid_pulses_are_rejected() {
        assert!(Pulse::new(PI, 0.0, 12.44).is_err());
        assert!(Pulse::new(PI, 0.04, 0.03).is_err());
        assert!(EmitterParams::new(-1.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn static_window_detection() {
        let l = build_generator(
            EmissionModel::Single,
            &EmitterParams::new(1.0, 0.0, 0.0).unwrap(),
            &DriveProtocol::pulsed(PI),
        )
        .unwrap();
        let hi = Pulse::with_area(PI).support().1;
        assert!(!l.is_static_on(0.0, 0.01));
        assert!(l.is_static_on(hi + 0.01, 5.0));
        assert!(!l.is_static_on(5.0, 12.45));
    }
}
