//! Spin-chain Hamiltonians as sums of Pauli strings.

use ndarray::{Array1, Array2, ArrayView1};
use num_traits::Zero;
use thiserror::Error;

use crate::pauli::{PauliAxis, PauliString};
use crate::scalar::ComplexScalar;

#[derive(Debug, Error)]
pub enum OperatorError {
    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("chain too large to densify: {n} sites (limit {limit})")]
    TooLargeToDensify { n: usize, limit: usize },
}

pub type OperatorResult<T> = Result<T, OperatorError>;

/// Nearest-neighbour spin-chain Hamiltonian, kept as an explicit term list.
///
/// Every term acts on at most two adjacent sites and carries a real
/// coefficient, so the operator is Hermitian by construction.
#[derive(Debug, Clone)]
pub struct SpinChainHamiltonian<A: ComplexScalar> {
    n: usize,
    terms: Vec<PauliString<A>>,
    coupling: A::Real,
    field_x: A::Real,
    field_z: A::Real,
}

/// `H = J Σ X_i X_{i+1} + h_x Σ X_i + h_z Σ Z_i` with open boundaries.
///
/// The term list always contains `(N-1) + N + N` entries, including any with
/// zero coefficient; the application routines skip those.
pub fn build_ising_hamiltonian<A: ComplexScalar>(
    n: usize,
    coupling: A::Real,
    field_x: A::Real,
    field_z: A::Real,
) -> OperatorResult<SpinChainHamiltonian<A>> {
    if n < 2 {
        return Err(OperatorError::InvalidModel(format!(
            "need at least 2 sites, got {n}"
        )));
    }
    for (name, v) in [("J", coupling), ("h_x", field_x), ("h_z", field_z)] {
        if !A::real_to_f64(v).is_finite() {
            return Err(OperatorError::InvalidModel(format!(
                "coupling {name} must be finite"
            )));
        }
    }
    let mut terms = Vec::with_capacity(3 * n - 1);
    for i in 0..n - 1 {
        terms.push(
            PauliString::two_site(
                (i, PauliAxis::X),
                (i + 1, PauliAxis::X),
                A::from_real(coupling),
            )
            .expect("adjacent sites are ordered"),
        );
    }
    for i in 0..n {
        terms.push(PauliString::single(i, PauliAxis::X).with_coefficient(A::from_real(field_x)));
    }
    for i in 0..n {
        terms.push(PauliString::single(i, PauliAxis::Z).with_coefficient(A::from_real(field_z)));
    }
    Ok(SpinChainHamiltonian { n, terms, coupling, field_x, field_z })
}

impl<A: ComplexScalar> SpinChainHamiltonian<A> {
    /// Build from an explicit term list. Each term must act on at most two
    /// adjacent sites inside the chain.
    pub fn from_terms(n: usize, terms: Vec<PauliString<A>>) -> OperatorResult<Self> {
        for t in &terms {
            t.check_range(n)
                .map_err(|e| OperatorError::InvalidModel(e.to_string()))?;
            let sites = t.sites();
            if sites.len() > 2 {
                return Err(OperatorError::InvalidModel(format!(
                    "term {} acts on more than two sites",
                    t.label()
                )));
            }
            if sites.len() == 2 && sites[1].0 != sites[0].0 + 1 {
                return Err(OperatorError::InvalidModel(format!(
                    "term {} acts on non-adjacent sites",
                    t.label()
                )));
            }
        }
        Ok(Self {
            n,
            terms,
            coupling: A::Real::zero(),
            field_x: A::Real::zero(),
            field_z: A::Real::zero(),
        })
    }

    pub fn sites(&self) -> usize {
        self.n
    }

    pub fn terms(&self) -> &[PauliString<A>] {
        &self.terms
    }

    pub fn parameters(&self) -> (A::Real, A::Real, A::Real) {
        (self.coupling, self.field_x, self.field_z)
    }

    /// `out += H|ψ⟩`, skipping zero-coefficient terms.
    pub fn accumulate_apply(&self, psi: &ArrayView1<A>, out: &mut Array1<A>) {
        for t in &self.terms {
            if t.coefficient() != A::zero() {
                t.accumulate_apply(psi, self.n, out);
            }
        }
    }

    pub fn apply(&self, psi: &ArrayView1<A>) -> Array1<A> {
        let mut out = Array1::zeros(psi.len());
        self.accumulate_apply(psi, &mut out);
        out
    }

    /// Dense `2^N x 2^N` matrix; guarded to 12 sites.
    pub fn densify(&self) -> OperatorResult<Array2<A>> {
        const LIMIT: usize = 12;
        if self.n > LIMIT {
            return Err(OperatorError::TooLargeToDensify { n: self.n, limit: LIMIT });
        }
        let dim = 1usize << self.n;
        let mut out = Array2::zeros((dim, dim));
        for t in &self.terms {
            if t.coefficient() != A::zero() {
                out = out + t.densify(self.n).expect("terms pre-validated");
            }
        }
        Ok(out)
    }
}
