//! What the detector sees for each emission scenario: measured dipoles,
//! zero-delay closed forms, and the far-field coincidence factor.

use crate::density::DensityOperator;
use crate::dynamics::EmissionModel;
use crate::error::{invalid, Error, Result};
use crate::operators::{
    self, antisymmetric_state, dagger, pair_sigma_minus, symmetric_state, symmetric_sigma_minus,
    Operator, SuperOperator, C64, EE,
};

/// Detected dipole operators with their weights.
///
/// Entries are summed incoherently: cross terms between different entries never
/// appear in correlators, so separate entries model distinguishable emitters.
#[derive(Debug, Clone, PartialEq)]
pub struct DipoleSet {
    entries: Vec<(Operator, f64)>,
}

impl DipoleSet {
    pub fn new(entries: Vec<(Operator, f64)>) -> Result<Self> {
        let Some((first, _)) = entries.first() else {
            return Err(invalid("dipoles", "at least one operator is required"));
        };
        let d = first.nrows();
        for (op, w) in &entries {
            if !op.is_square() || op.nrows() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    found: op.nrows(),
                });
            }
            if !(*w >= 0.0) || !w.is_finite() {
                return Err(invalid("dipole weight", format!("{w} must be finite and >= 0")));
            }
        }
        Ok(Self { entries })
    }

    /// Per-emitter lowering operators for Single/Independent, the symmetric
    /// collective dipole for Cooperative/Superradiant.
    pub fn for_model(model: EmissionModel) -> Self {
        let entries = match model {
            EmissionModel::Single => vec![(operators::sigma_minus(), 1.0)],
            EmissionModel::Independent => {
                vec![(pair_sigma_minus(0), 1.0), (pair_sigma_minus(1), 1.0)]
            }
            EmissionModel::Cooperative | EmissionModel::Superradiant => {
                vec![(symmetric_sigma_minus(), 1.0)]
            }
        };
        Self { entries }
    }

    /// Dipole coupling to the antisymmetric Dicke state. Not observed in the
    /// experiment; available for inspecting that channel.
    pub fn antisymmetric() -> Self {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let op = (pair_sigma_minus(0) - pair_sigma_minus(1)) * C64::new(s, 0.0);
        Self {
            entries: vec![(op, 1.0)],
        }
    }

    pub fn dim(&self) -> usize {
        self.entries[0].0.nrows()
    }

    pub fn entries(&self) -> &[(Operator, f64)] {
        &self.entries
    }

    /// `sum_i w_i O_i^dag O_i`
    pub fn intensity_operator(&self) -> Operator {
        let d = self.dim();
        self.entries
            .iter()
            .fold(Operator::zeros(d, d), |acc, (o, w)| {
                acc + dagger(o) * o * C64::new(*w, 0.0)
            })
    }

    /// Superoperator `rho -> sum_i w_i O_i rho O_i^dag`.
    pub fn jump_superoperator(&self) -> SuperOperator {
        let d = self.dim();
        self.entries
            .iter()
            .fold(SuperOperator::zeros(d * d, d * d), |acc, (o, w)| {
                acc + operators::sandwich(o, &dagger(o)) * C64::new(*w, 0.0)
            })
    }

    pub fn intensity(&self, rho: &DensityOperator) -> Result<f64> {
        Ok(rho.expectation(&self.intensity_operator())?.re)
    }
}

/// Zero-delay `g2` of two distinguishable emitters, `2 n1 n2 / (n1 + n2)^2`.
pub fn g2_zero_independent(n1: f64, n2: f64) -> Result<f64> {
    for (name, n) in [("n1", n1), ("n2", n2)] {
        if !(0.0..=1.0).contains(&n) {
            return Err(invalid(name, format!("population {n} outside [0, 1]")));
        }
    }
    let s = n1 + n2;
    if s == 0.0 {
        return Err(Error::ZeroDenominator("n1 + n2"));
    }
    Ok(2.0 * n1 * n2 / (s * s))
}

/// Population of the doubly excited state.
pub fn doubly_excited_population(rho: &DensityOperator) -> Result<f64> {
    require_pair(rho)?;
    Ok(rho.population(EE))
}

/// `<psi_S| rho |psi_S>`, including the inter-emitter coherence.
pub fn symmetric_population(rho: &DensityOperator) -> Result<f64> {
    require_pair(rho)?;
    Ok(rho.expectation(&operators::projector(&symmetric_state()))?.re)
}

pub fn antisymmetric_population(rho: &DensityOperator) -> Result<f64> {
    require_pair(rho)?;
    Ok(rho.expectation(&operators::projector(&antisymmetric_state()))?.re)
}

fn require_pair(rho: &DensityOperator) -> Result<()> {
    if rho.dim() != 4 {
        return Err(Error::DimensionMismatch {
            expected: 4,
            found: rho.dim(),
        });
    }
    Ok(())
}

/// Zero-delay `g2` of the symmetric collective dipole, `n_ee / (n_ee + n_S)^2`.
pub fn g2_zero_cooperative(rho: &DensityOperator) -> Result<f64> {
    let n_ee = doubly_excited_population(rho)?;
    let n_s = symmetric_population(rho)?;
    let denom = n_ee + n_s;
    if denom.abs() < f64::MIN_POSITIVE {
        return Err(Error::ZeroDenominator("n_ee + n_S"));
    }
    Ok(n_ee / (denom * denom))
}

/// Emission wave vectors (rad/nm) toward the two detectors and the emitter
/// separation (nm).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WaveVectorPair {
    pub k1: [f64; 3],
    pub k2: [f64; 3],
    pub r: [f64; 3],
}

impl WaveVectorPair {
    /// `(k2 - k1) . r`
    pub fn phase(&self) -> f64 {
        (0..3).map(|i| (self.k2[i] - self.k1[i]) * self.r[i]).sum()
    }
}

/// Zero-delay coincidence of the pair for detection directions `k1`, `k2`,
/// relative to co-directional detection: `(1 + cos((k2 - k1) . r)) / 2`.
pub fn directional_coincidence(pair: &WaveVectorPair) -> f64 {
    coincidence_from_phase(pair.phase())
}

pub fn coincidence_from_phase(phase: f64) -> f64 {
    0.5 * (1.0 + phase.cos())
}
