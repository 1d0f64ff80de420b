//! Pauli strings and the local 2x2 operator zoo.
//!
//! Site 0 is the most significant bit of a basis index; `Z|0⟩ = +|0⟩` and
//! `σ⁺ = |1⟩⟨0|` raises the computational-basis bit. These conventions are
//! fixed crate-wide (see the crate-level docs).

use ndarray::{Array1, Array2, ArrayView1};
use thiserror::Error;

use crate::linalg::kron;
use crate::scalar::ComplexScalar;

#[derive(Debug, Error)]
pub enum PauliError {
    #[error("site indices must be strictly increasing, got {0:?}")]
    UnorderedSites(Vec<usize>),

    #[error("site index {site} out of range for {n} sites")]
    SiteOutOfRange { site: usize, n: usize },
}

pub type PauliResult<T> = Result<T, PauliError>;

/// Single-site Pauli axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PauliAxis {
    X,
    Y,
    Z,
}

impl PauliAxis {
    /// Dense 2x2 matrix.
    pub fn matrix<A: ComplexScalar>(self) -> Array2<A> {
        let z = A::zero();
        let one = A::one();
        let i = A::i();
        match self {
            PauliAxis::X => ndarray::array![[z, one], [one, z]],
            PauliAxis::Y => ndarray::array![[z, z - i], [i, z]],
            PauliAxis::Z => ndarray::array![[one, z], [z, z - one]],
        }
    }

    pub fn label(self) -> char {
        match self {
            PauliAxis::X => 'X',
            PauliAxis::Y => 'Y',
            PauliAxis::Z => 'Z',
        }
    }
}

/// `σ⁺ = |1⟩⟨0|` as a dense 2x2 matrix.
pub fn sigma_plus<A: ComplexScalar>() -> Array2<A> {
    let z = A::zero();
    ndarray::array![[z, z], [A::one(), z]]
}

/// `σ⁻ = |0⟩⟨1|` as a dense 2x2 matrix.
pub fn sigma_minus<A: ComplexScalar>() -> Array2<A> {
    let z = A::zero();
    ndarray::array![[z, A::one()], [z, z]]
}

/// A product of single-site Paulis with a complex coefficient.
///
/// The empty site list is the identity. Site indices are strictly increasing;
/// range checks against a concrete chain length happen where the string is
/// applied.
#[derive(Debug, Clone, PartialEq)]
pub struct PauliString<A: ComplexScalar> {
    sites: Vec<(usize, PauliAxis)>,
    coefficient: A,
}

impl<A: ComplexScalar> PauliString<A> {
    pub fn new(sites: Vec<(usize, PauliAxis)>, coefficient: A) -> PauliResult<Self> {
        if sites.windows(2).any(|w| w[0].0 >= w[1].0) {
            return Err(PauliError::UnorderedSites(
                sites.iter().map(|s| s.0).collect(),
            ));
        }
        Ok(Self { sites, coefficient })
    }

    /// The identity string with the given coefficient.
    pub fn identity(coefficient: A) -> Self {
        Self { sites: Vec::new(), coefficient }
    }

    /// Single-site Pauli with unit coefficient.
    pub fn single(site: usize, axis: PauliAxis) -> Self {
        Self { sites: vec![(site, axis)], coefficient: A::one() }
    }

    /// Two-site Pauli with the given coefficient; sites need not be adjacent.
    pub fn two_site(
        a: (usize, PauliAxis),
        b: (usize, PauliAxis),
        coefficient: A,
    ) -> PauliResult<Self> {
        Self::new(vec![a, b], coefficient)
    }

    pub fn sites(&self) -> &[(usize, PauliAxis)] {
        &self.sites
    }

    pub fn coefficient(&self) -> A {
        self.coefficient
    }

    pub fn with_coefficient(&self, coefficient: A) -> Self {
        Self { sites: self.sites.clone(), coefficient }
    }

    pub fn is_identity(&self) -> bool {
        self.sites.is_empty()
    }

    /// Largest site index plus one, or 0 for the identity.
    pub fn min_sites(&self) -> usize {
        self.sites.last().map(|&(s, _)| s + 1).unwrap_or(0)
    }

    pub fn check_range(&self, n: usize) -> PauliResult<()> {
        for &(site, _) in &self.sites {
            if site >= n {
                return Err(PauliError::SiteOutOfRange { site, n });
            }
        }
        Ok(())
    }

    /// Human-readable label, e.g. `Z3` or `X0X1`.
    pub fn label(&self) -> String {
        if self.sites.is_empty() {
            return "I".into();
        }
        self.sites
            .iter()
            .map(|&(s, a)| format!("{}{}", a.label(), s))
            .collect()
    }

    /// `out += P|ψ⟩` for an `n`-site state.
    ///
    /// Basis action: X flips the site bit, `Y|b⟩ = i(-1)^b |1-b⟩`,
    /// `Z|b⟩ = (-1)^b |b⟩`.
    pub fn accumulate_apply(&self, psi: &ArrayView1<A>, n: usize, out: &mut Array1<A>) {
        debug_assert_eq!(psi.len(), 1usize << n);
        let mut flip_mask = 0usize;
        let mut sign_mask = 0usize;
        let mut n_y = 0u32;
        for &(site, axis) in &self.sites {
            let bit = 1usize << (n - 1 - site);
            match axis {
                PauliAxis::X => flip_mask |= bit,
                PauliAxis::Y => {
                    flip_mask |= bit;
                    sign_mask |= bit;
                    n_y += 1;
                }
                PauliAxis::Z => sign_mask |= bit,
            }
        }
        // i^{n_y} as a complex phase
        let i_pow = match n_y % 4 {
            0 => A::one(),
            1 => A::i(),
            2 => A::zero() - A::one(),
            _ => A::zero() - A::i(),
        };
        let base = self.coefficient * i_pow;
        for b in 0..psi.len() {
            let amp = psi[b];
            if amp == A::zero() {
                continue;
            }
            let parity = (b & sign_mask).count_ones() & 1;
            let phase = if parity == 1 { A::zero() - base } else { base };
            out[b ^ flip_mask] += phase * amp;
        }
    }

    /// `P|ψ⟩` as a fresh vector.
    pub fn apply(&self, psi: &ArrayView1<A>, n: usize) -> Array1<A> {
        let mut out = Array1::zeros(psi.len());
        self.accumulate_apply(psi, n, &mut out);
        out
    }

    /// Dense matrix on the full `n`-site space.
    pub fn densify(&self, n: usize) -> PauliResult<Array2<A>> {
        self.check_range(n)?;
        let mut out = Array2::from_diag_elem(1, self.coefficient);
        let mut by_site = vec![None; n];
        for &(site, axis) in &self.sites {
            by_site[site] = Some(axis);
        }
        let id: Array2<A> = crate::linalg::identity(2);
        for s in 0..n {
            let local = match by_site[s] {
                Some(axis) => axis.matrix(),
                None => id.clone(),
            };
            out = kron(&out.view(), &local.view());
        }
        Ok(out)
    }
}
