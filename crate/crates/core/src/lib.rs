//! Dynamics of boundary-driven open quantum spin chains.
//!
//! The crate provides three interchangeable engines for the same family of
//! Lindblad models, plus the analysis layer used to compare them:
//!
//! - [`oracle`] — dense / matrix-free integration of the master equation at
//!   small site counts. This is the ground truth everything else is checked
//!   against.
//! - [`trajectory`] — stochastic quantum-jump unraveling on pure states,
//!   including detector-efficiency interpolation between ordinary Lindblad
//!   dynamics and purely non-Hermitian evolution.
//! - [`mps`] / [`tebd`] — a tensor-network engine evolving the vectorized
//!   density matrix (physical dimension 4 per site) under sequentially
//!   applied local exponentials with singular-value truncation.
//! - [`probes`] — correlation matrices, correlation lengths, mixing times and
//!   bond-dimension studies extracted from any of the engines.
//! - [`complexity`] — closed-form resource estimates parameterized by the
//!   measured correlation lengths.
//!
//! # Conventions
//!
//! Fixed project-wide and relied upon by every module:
//!
//! - Basis labels: `Z|0⟩ = +|0⟩`, `Z|1⟩ = -|1⟩`.
//! - Ladder operators: `σ⁺ = |1⟩⟨0|` raises the computational-basis bit,
//!   `σ⁻ = |0⟩⟨1|` lowers it.
//! - Site 0 maps to the most significant bit of a basis index, i.e. dense
//!   operators are built as `op(site 0) ⊗ op(site 1) ⊗ …`.
//! - Density matrices vectorize row-major: `(i, j) → i·2^N + j`. Inside the
//!   tensor-network engine the same pairing is applied per site, so the local
//!   physical index is `2·i_k + j_k`.
//!
//! All heavy numerics are generic over the working precision through
//! [`scalar::ComplexScalar`]; [`C64`] is the alias used by the binaries and
//! by every test with quantitative tolerances.

pub mod complexity;
pub mod decompose;
pub mod density;
pub mod linalg;
pub mod model;
pub mod mps;
pub mod operator;
pub mod oracle;
pub mod output;
pub mod pauli;
pub mod probes;
pub mod scalar;
pub mod tebd;
pub mod trajectory;

/// Double-precision complex scalar; the default working type.
pub type C64 = num_complex::Complex<f64>;
/// Single-precision complex scalar.
pub type C32 = num_complex::Complex<f32>;

pub use decompose::{decompose_jump, normalize_split, JumpDecomposition, NormalizedSplit};
pub use density::{unvectorize, vectorize, DensityMatrix, VectorizedDensity};
pub use model::{build_boundary_channels, JumpChannel, LindbladModel, LocalOperator, Schedule};
pub use operator::{build_ising_hamiltonian, SpinChainHamiltonian};
pub use pauli::{PauliAxis, PauliString};
pub use scalar::ComplexScalar;
