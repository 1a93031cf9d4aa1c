use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Error, Result};
use crate::operators::{self, Operator, C64, EE, ONE};

/// Tolerances a physical density operator must satisfy.
pub const HERMITICITY_TOL: f64 = 1e-12;
pub const TRACE_TOL: f64 = 1e-9;
pub const POSITIVITY_TOL: f64 = 1e-9;

/// Density operator on the single-emitter (2) or pair (4) Hilbert space.
///
/// `new` enforces the physical invariants. `pseudo` wraps the unnormalized
/// operators that appear after a photon-detection jump in the regression recipe.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityOperator {
    matrix: Operator,
}

impl DensityOperator {
    pub fn new(matrix: Operator) -> Result<Self> {
        let rho = Self::pseudo(matrix)?;
        let herm = rho.hermiticity_error();
        if herm > HERMITICITY_TOL {
            return Err(invalid("rho", format!("not Hermitian (asymmetry {herm:e})")));
        }
        let tr = rho.trace();
        if (tr - 1.0).abs() > TRACE_TOL {
            return Err(invalid("rho", format!("trace {tr} differs from 1")));
        }
        let min = rho.min_eigenvalue();
        if min < -POSITIVITY_TOL {
            return Err(invalid("rho", format!("negative eigenvalue {min:e}")));
        }
        Ok(rho)
    }

    /// Accepts any square 2x2 or 4x4 matrix without normalization checks.
    pub fn pseudo(matrix: Operator) -> Result<Self> {
        if !matrix.is_square() {
            return Err(invalid("rho", "matrix is not square"));
        }
        let d = matrix.nrows();
        if d != 2 && d != 4 {
            return Err(Error::DimensionMismatch {
                expected: 4,
                found: d,
            });
        }
        Ok(Self { matrix })
    }

    pub fn from_vectorized(v: &DVector<C64>, dim: usize) -> Self {
        Self {
            matrix: operators::unvectorize(v, dim),
        }
    }

    pub fn pure(psi: &DVector<C64>) -> Result<Self> {
        let n = psi.norm();
        if n == 0.0 {
            return Err(invalid("psi", "zero vector"));
        }
        let psi = psi / C64::new(n, 0.0);
        Self::new(operators::projector(&psi))
    }

    pub fn ground(dim: usize) -> Result<Self> {
        Self::basis_state(dim, 0)
    }

    pub fn basis_state(dim: usize, index: usize) -> Result<Self> {
        if index >= dim {
            return Err(invalid("index", format!("{index} outside dimension {dim}")));
        }
        let mut m = DMatrix::zeros(dim, dim);
        m[(index, index)] = ONE;
        Self::pseudo(m)
    }

    /// `|e1 e2><e1 e2|`
    pub fn doubly_excited() -> Self {
        Self::basis_state(4, EE).expect("valid basis index")
    }

    /// Diagonal single-emitter state with excited population `n`.
    pub fn single_mixed(n: f64) -> Result<Self> {
        check_population("n", n)?;
        Self::new(single_block(n))
    }

    /// Uncorrelated pair with excited populations `n1`, `n2` and no coherences.
    pub fn product(n1: f64, n2: f64) -> Result<Self> {
        check_population("n1", n1)?;
        check_population("n2", n2)?;
        Self::new(single_block(n1).kronecker(&single_block(n2)))
    }

    /// Tensor product of two single-emitter states.
    pub fn tensor(a: &DensityOperator, b: &DensityOperator) -> Result<Self> {
        if a.dim() != 2 || b.dim() != 2 {
            return Err(Error::DimensionMismatch {
                expected: 2,
                found: a.dim().max(b.dim()),
            });
        }
        Self::pseudo(a.matrix.kronecker(&b.matrix))
    }

    pub fn maximally_mixed(dim: usize) -> Result<Self> {
        Self::pseudo(DMatrix::identity(dim, dim) * C64::new(1.0 / dim as f64, 0.0))
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &Operator {
        &self.matrix
    }

    pub fn into_matrix(self) -> Operator {
        self.matrix
    }

    pub fn vectorized(&self) -> DVector<C64> {
        operators::vectorize(&self.matrix)
    }

    pub fn trace(&self) -> f64 {
        self.matrix.trace().re
    }

    /// `Tr[A rho]`
    pub fn expectation(&self, a: &Operator) -> Result<C64> {
        if a.nrows() != self.dim() || a.ncols() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: a.nrows(),
            });
        }
        Ok((a * &self.matrix).trace())
    }

    pub fn population(&self, index: usize) -> f64 {
        self.matrix[(index, index)].re
    }

    /// Largest absolute entry of `rho - rho^dagger`.
    pub fn hermiticity_error(&self) -> f64 {
        operators::max_abs((&self.matrix - self.matrix.adjoint()).iter())
    }

    pub fn min_eigenvalue(&self) -> f64 {
        let h = (&self.matrix + self.matrix.adjoint()) * C64::new(0.5, 0.0);
        h.symmetric_eigenvalues().min()
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        let h = (&self.matrix + self.matrix.adjoint()) * C64::new(0.5, 0.0);
        let mut ev: Vec<f64> = h.symmetric_eigenvalues().iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        ev
    }

    /// Replaces the matrix by its Hermitian part.
    pub fn hermitized(&self) -> Self {
        Self {
            matrix: (&self.matrix + self.matrix.adjoint()) * C64::new(0.5, 0.0),
        }
    }

    /// `A rho A^dagger` (unnormalized).
    pub fn jump(&self, a: &Operator) -> Result<Self> {
        if a.nrows() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: a.nrows(),
            });
        }
        Ok(Self {
            matrix: a * &self.matrix * a.adjoint(),
        })
    }

    /// Partial trace over the other emitter; `which` selects the kept emitter.
    pub fn reduced(&self, which: usize) -> Result<Self> {
        if self.dim() != 4 {
            return Err(Error::DimensionMismatch {
                expected: 4,
                found: self.dim(),
            });
        }
        let mut out = DMatrix::zeros(2, 2);
        for a in 0..2 {
            for b in 0..2 {
                for k in 0..2 {
                    let (i, j) = if which == 0 {
                        (2 * a + k, 2 * b + k)
                    } else {
                        (2 * k + a, 2 * k + b)
                    };
                    out[(a, b)] += self.matrix[(i, j)];
                }
            }
        }
        Self::pseudo(out)
    }
}

fn single_block(n: f64) -> Operator {
    DMatrix::from_diagonal(&DVector::from_vec(vec![
        C64::new(1.0 - n, 0.0),
        C64::new(n, 0.0),
    ]))
}

fn check_population(name: &'static str, n: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&n) {
        return Err(invalid(name, format!("population {n} outside [0, 1]")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_unit_trace() {
        let m = DMatrix::identity(2, 2) * C64::new(0.7, 0.0);
        assert!(DensityOperator::new(m).is_err());
    }

    #[test]
    fn rejects_negative_eigenvalue() {
        let mut m = DMatrix::zeros(2, 2);
        m[(0, 0)] = C64::new(1.2, 0.0);
        m[(1, 1)] = C64::new(-0.2, 0.0);
        assert!(DensityOperator::new(m).is_err());
    }

    #[test]
    fn rejects_bad_dimension() {
        assert!(DensityOperator::pseudo(DMatrix::identity(3, 3)).is_err());
    }

    #[test]
    fn product_state_reduces_to_factors() {
        let rho = DensityOperator::product(0.3, 0.8).unwrap();
        assert!((rho.reduced(0).unwrap().population(1) - 0.3).abs() < 1e-15);
        assert!((rho.reduced(1).unwrap().population(1) - 0.8).abs() < 1e-15);
        assert!((rho.population(EE) - 0.24).abs() < 1e-15);
    }
}
