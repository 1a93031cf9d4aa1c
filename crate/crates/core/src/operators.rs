//! Ladder operators, basis states and column-stacking superoperator helpers.
//!
//! Single emitter basis: `|g>` = 0, `|e>` = 1.
//! Pair basis (emitter 1 is the left tensor factor): `|g1 g2>` = 0, `|g1 e2>` = 1,
//! `|e1 g2>` = 2, `|e1 e2>` = 3.
//!
//! Density operators are vectorized by stacking columns, so
//! `vec(A rho B) = (B^T (x) A) vec(rho)`. nalgebra stores matrices column-major,
//! which makes `vec` a plain reinterpretation of the storage.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

pub type C64 = Complex64;
pub type Operator = DMatrix<C64>;
pub type SuperOperator = DMatrix<C64>;

pub const ONE: C64 = C64::new(1.0, 0.0);
pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const I: C64 = C64::new(0.0, 1.0);

/// Index of the ground state in the pair basis.
pub const GG: usize = 0;
pub const GE: usize = 1;
pub const EG: usize = 2;
pub const EE: usize = 3;

pub fn identity(dim: usize) -> Operator {
    DMatrix::identity(dim, dim)
}

pub fn dagger(a: &Operator) -> Operator {
    a.adjoint()
}

/// `sigma^- = |g><e|` for one two-level emitter.
pub fn sigma_minus() -> Operator {
    let mut m = DMatrix::zeros(2, 2);
    m[(0, 1)] = ONE;
    m
}

pub fn sigma_plus() -> Operator {
    dagger(&sigma_minus())
}

/// Lowering operator of emitter `which` (0 or 1) in the four-dimensional pair space.
pub fn pair_sigma_minus(which: usize) -> Operator {
    assert!(which < 2, "emitter index must be 0 or 1");
    let (a, b) = if which == 0 {
        (sigma_minus(), identity(2))
    } else {
        (identity(2), sigma_minus())
    };
    a.kronecker(&b)
}

/// Collective lowering operator `(sigma_1^- + sigma_2^-)/sqrt(2)` coupling to the symmetric Dicke state.
pub fn symmetric_sigma_minus() -> Operator {
    (pair_sigma_minus(0) + pair_sigma_minus(1)) * C64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0)
}

/// Direction-dependent dipole `(e^{i phi/2} sigma_1^- + e^{-i phi/2} sigma_2^-)/sqrt(2)`
/// with `phi = k . r`.
pub fn phased_sigma_minus(phase: f64) -> Operator {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    pair_sigma_minus(0) * C64::from_polar(s, phase / 2.0)
        + pair_sigma_minus(1) * C64::from_polar(s, -phase / 2.0)
}

/// Number operator `sigma^+ sigma^-` for the given lowering operator.
pub fn number(lowering: &Operator) -> Operator {
    dagger(lowering) * lowering
}

pub fn ket(dim: usize, index: usize) -> DVector<C64> {
    let mut v = DVector::zeros(dim);
    v[index] = ONE;
    v
}

/// `(|e1 g2> + |g1 e2>)/sqrt(2)`
pub fn symmetric_state() -> DVector<C64> {
    (ket(4, EG) + ket(4, GE)) * C64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0)
}

/// `(|e1 g2> - |g1 e2>)/sqrt(2)`
pub fn antisymmetric_state() -> DVector<C64> {
    (ket(4, EG) - ket(4, GE)) * C64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0)
}

pub fn projector(psi: &DVector<C64>) -> Operator {
    psi * psi.adjoint()
}

pub fn vectorize(m: &Operator) -> DVector<C64> {
    DVector::from_column_slice(m.as_slice())
}

pub fn unvectorize(v: &DVector<C64>, dim: usize) -> Operator {
    DMatrix::from_column_slice(dim, dim, v.as_slice())
}

/// Superoperator for `rho -> A rho`.
pub fn left(a: &Operator) -> SuperOperator {
    identity(a.nrows()).kronecker(a)
}

/// Superoperator for `rho -> rho B`.
pub fn right(b: &Operator) -> SuperOperator {
    b.transpose().kronecker(&identity(b.nrows()))
}

/// Superoperator for `rho -> A rho B`.
pub fn sandwich(a: &Operator, b: &Operator) -> SuperOperator {
    b.transpose().kronecker(a)
}

/// Superoperator for `rho -> -i [H, rho]`.
pub fn commutator(h: &Operator) -> SuperOperator {
    (left(h) - right(h)) * (-I)
}

/// Row vector `t` with `t . vec(rho) = Tr[A rho]`.
pub fn trace_functional(a: &Operator) -> DVector<C64> {
    // Tr[A rho] = sum_{ij} A_ji rho_ij, and rho_ij sits at i + j*d.
    vectorize(&a.transpose())
}

/// `Tr[A rho]` evaluated directly on a vectorized operator.
pub fn expectation_vec(functional: &DVector<C64>, rho_vec: &DVector<C64>) -> C64 {
    functional
        .iter()
        .zip(rho_vec.iter())
        .fold(ZERO, |acc, (a, b)| acc + a * b)
}

/// Largest entry modulus.
pub fn max_abs<'a>(entries: impl IntoIterator<Item = &'a C64>) -> f64 {
    entries.into_iter().map(|z| z.norm()).fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sandwich_matches_direct_product() {
        let a = DMatrix::from_fn(4, 4, |i, j| C64::new(i as f64 + 0.3, j as f64 - 1.0));
        let b = DMatrix::from_fn(4, 4, |i, j| C64::new((i * j) as f64, 0.5 * i as f64));
        let rho = DMatrix::from_fn(4, 4, |i, j| C64::new(1.0 + i as f64, 2.0 * j as f64));
        let direct = &a * &rho * &b;
        let via = unvectorize(&(sandwich(&a, &b) * vectorize(&rho)), 4);
        assert!((direct - via).norm() < 1e-12);
    }

    #[test]
    fn symmetric_lowering_maps_doubly_excited_to_symmetric_state() {
        let out = symmetric_sigma_minus() * ket(4, EE);
        assert!((out - symmetric_state()).norm() < 1e-15);
        let out = symmetric_sigma_minus() * symmetric_state();
        assert!((out - ket(4, GG)).norm() < 1e-15);
        assert!((symmetric_sigma_minus() * antisymmetric_state()).norm() < 1e-15);
    }

    #[test]
    fn trace_functional_evaluates_trace() {
        let a = DMatrix::from_fn(2, 2, |i, j| C64::new(i as f64 + 2.0 * j as f64, 1.0));
        let rho = DMatrix::from_fn(2, 2, |i, j| C64::new(0.25 + i as f64, j as f64));
        let t = expectation_vec(&trace_functional(&a), &vectorize(&rho));
        assert!((t - (&a * &rho).trace()).norm() < 1e-14);
    }

    #[test]
    fn phased_dipole_reduces_to_symmetric_at_zero_phase() {
        assert!((phased_sigma_minus(0.0) - symmetric_sigma_minus()).norm() < 1e-15);
    }
}
