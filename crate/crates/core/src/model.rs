//! Lindblad models: jump channels, dissipation schedules, boundary driving.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use num_traits::{One, Zero};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use thiserror::Error;

use crate::linalg::{dagger, identity, kron};
use crate::operator::SpinChainHamiltonian;
use crate::pauli::{sigma_minus, sigma_plus, PauliAxis, PauliString};
use crate::scalar::ComplexScalar;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("negative rate: driving parameter mu = {mu} gives a channel weight below zero")]
    NegativeRate { mu: f64 },

    #[error("channel weight alpha must be nonnegative, got {0}")]
    NegativeAlpha(f64),

    #[error("detector efficiency eta must lie in [0, 1], got {0}")]
    EtaOutOfRange(f64),

    #[error("dissipation strength gamma must be nonnegative, got {0}")]
    NegativeGamma(f64),

    #[error("invalid model: {0}")]
    Invalid(String),
}

pub type ModelResult<T> = Result<T, ModelError>;

/// A local operator: either a Pauli string or a dense matrix on an explicit
/// site set.
#[derive(Debug, Clone)]
pub enum LocalOperator<A: ComplexScalar> {
    Pauli(PauliString<A>),
    Dense { sites: Vec<usize>, matrix: Array2<A> },
}

impl<A: ComplexScalar> LocalOperator<A> {
    pub fn dense(sites: Vec<usize>, matrix: Array2<A>) -> ModelResult<Self> {
        if sites.windows(2).any(|w| w[0] >= w[1]) {
            return Err(ModelError::Invalid(format!(
                "dense operator sites must be strictly increasing, got {sites:?}"
            )));
        }
        let dim = 1usize << sites.len();
        if matrix.dim() != (dim, dim) {
            return Err(ModelError::Invalid(format!(
                "dense operator on {} sites needs a {dim}x{dim} matrix, got {:?}",
                sites.len(),
                matrix.dim()
            )));
        }
        Ok(Self::Dense { sites, matrix })
    }

    /// `σ⁺` on one site.
    pub fn raise(site: usize) -> Self {
        Self::Dense { sites: vec![site], matrix: sigma_plus() }
    }

    /// `σ⁻` on one site.
    pub fn lower(site: usize) -> Self {
        Self::Dense { sites: vec![site], matrix: sigma_minus() }
    }

    /// Sites the operator acts on, ascending.
    pub fn support(&self) -> Vec<usize> {
        match self {
            Self::Pauli(p) => p.sites().iter().map(|&(s, _)| s).collect(),
            Self::Dense { sites, .. } => sites.clone(),
        }
    }

    /// The operator as a dense matrix on its own support (dimension `2^k`).
    /// For the identity Pauli string this is the 1x1 coefficient.
    pub fn dense_on_support(&self) -> Array2<A> {
        match self {
            Self::Pauli(p) => {
                let mut out = Array2::from_diag_elem(1, p.coefficient());
                for &(_, axis) in p.sites() {
                    out = kron(&out.view(), &axis.matrix().view());
                }
                out
            }
            Self::Dense { matrix, .. } => matrix.clone(),
        }
    }

    /// `L†L` on the support.
    pub fn dagger_product_on_support(&self) -> Array2<A> {
        let m = self.dense_on_support();
        dagger(&m.view()).dot(&m)
    }

    /// Dense matrix on the full `n`-site space.
    pub fn densify(&self, n: usize) -> Array2<A> {
        let sites = self.support();
        debug_assert!(sites.iter().all(|&s| s < n));
        let local = self.dense_on_support();
        let k = sites.len();
        let dim = 1usize << n;
        if k == 0 {
            return Array2::from_diag_elem(dim, local[[0, 0]]);
        }
        let mut out = Array2::zeros((dim, dim));
        let bit_of = |site: usize| n - 1 - site;
        for b in 0..dim {
            let mut loc = 0usize;
            for (j, &s) in sites.iter().enumerate() {
                loc |= ((b >> bit_of(s)) & 1) << (k - 1 - j);
            }
            let cleared = {
                let mut c = b;
                for &s in &sites {
                    c &= !(1usize << bit_of(s));
                }
                c
            };
            for locp in 0..(1usize << k) {
                let v = local[[locp, loc]];
                if v == A::zero() {
                    continue;
                }
                let mut bp = cleared;
                for (j, &s) in sites.iter().enumerate() {
                    if (locp >> (k - 1 - j)) & 1 == 1 {
                        bp |= 1usize << bit_of(s);
                    }
                }
                out[[bp, b]] += v;
            }
        }
        out
    }

    /// `out += M|ψ⟩` using strided local application, `O(2^n · 2^k)`.
    pub fn accumulate_apply(&self, psi: &ArrayView1<A>, n: usize, out: &mut Array1<A>) {
        match self {
            Self::Pauli(p) => p.accumulate_apply(psi, n, out),
            Self::Dense { sites, matrix } => {
                accumulate_apply_dense_local(&matrix.view(), sites, n, psi, out)
            }
        }
    }

    pub fn apply(&self, psi: &ArrayView1<A>, n: usize) -> Array1<A> {
        let mut out = Array1::zeros(psi.len());
        self.accumulate_apply(psi, n, &mut out);
        out
    }

    pub fn label(&self) -> String {
        match self {
            Self::Pauli(p) => p.label(),
            Self::Dense { sites, matrix } => {
                if matrix == &sigma_plus::<A>() {
                    format!("S+{}", sites[0])
                } else if matrix == &sigma_minus::<A>() {
                    format!("S-{}", sites[0])
                } else {
                    format!("M{sites:?}")
                }
            }
        }
    }
}

/// `out += M|ψ⟩` for a dense operator on `sites` (ascending) of an `n`-site
/// register.
pub fn accumulate_apply_dense_local<A: ComplexScalar>(
    m: &ArrayView2<A>,
    sites: &[usize],
    n: usize,
    psi: &ArrayView1<A>,
    out: &mut Array1<A>,
) {
    let k = sites.len();
    let dim = 1usize << n;
    debug_assert_eq!(psi.len(), dim);
    if k == 0 {
        let c = m[[0, 0]];
        out.zip_mut_with(psi, |o, &p| *o += c * p);
        return;
    }
    let bits: Vec<usize> = sites.iter().map(|&s| n - 1 - s).collect();
    let support_mask: usize = bits.iter().map(|&b| 1usize << b).sum();
    let rest_mask = (dim - 1) & !support_mask;
    let kdim = 1usize << k;
    // offsets[loc] is the index contribution of local configuration `loc`
    let offsets: Vec<usize> = (0..kdim)
        .map(|loc| {
            let mut off = 0usize;
            for (j, &b) in bits.iter().enumerate() {
                if (loc >> (k - 1 - j)) & 1 == 1 {
                    off |= 1usize << b;
                }
            }
            off
        })
        .collect();
    let mut gathered = vec![A::zero(); kdim];
    // enumerate all assignments of the non-support bits
    let mut base = 0usize;
    loop {
        for (loc, off) in offsets.iter().enumerate() {
            gathered[loc] = psi[base | off];
        }
        for (locp, off) in offsets.iter().enumerate() {
            let mut acc = A::zero();
            for (loc, &g) in gathered.iter().enumerate() {
                acc += m[[locp, loc]] * g;
            }
            out[base | off] += acc;
        }
        // next subset of rest_mask
        base = (base.wrapping_sub(rest_mask)) & rest_mask;
        if base == 0 {
            break;
        }
    }
}

/// One dissipation channel: a local jump operator with weight `alpha` and
/// detector efficiency `eta`. The shared dissipation strength `gamma` lives
/// on the model so that sweeping it reuses the channel set.
#[derive(Debug, Clone)]
pub struct JumpChannel<A: ComplexScalar> {
    pub operator: LocalOperator<A>,
    pub alpha: A::Real,
    pub eta: A::Real,
}

impl<A: ComplexScalar> JumpChannel<A> {
    pub fn new(operator: LocalOperator<A>, alpha: A::Real, eta: A::Real) -> ModelResult<Self> {
        let alpha_f = A::real_to_f64(alpha);
        let eta_f = A::real_to_f64(eta);
        if !alpha_f.is_finite() || alpha_f < 0.0 {
            return Err(ModelError::NegativeAlpha(alpha_f));
        }
        if !eta_f.is_finite() || !(0.0..=1.0).contains(&eta_f) {
            return Err(ModelError::EtaOutOfRange(eta_f));
        }
        Ok(Self { operator, alpha, eta })
    }

    pub fn with_eta(mut self, eta: A::Real) -> ModelResult<Self> {
        let eta_f = A::real_to_f64(eta);
        if !eta_f.is_finite() || !(0.0..=1.0).contains(&eta_f) {
            return Err(ModelError::EtaOutOfRange(eta_f));
        }
        self.eta = eta;
        Ok(self)
    }
}

/// Time dependence of the dissipation.
#[derive(Debug, Clone, PartialEq)]
pub enum Schedule {
    /// `γ(t) = γ`.
    Constant,
    /// `γ(t) = γ_max |sin(π t / t_total)|`.
    SinusoidalGamma { gamma_max: f64, t_total: f64 },
    /// Two random sites, each with a random Pauli jump operator, drawn once
    /// per run from the seed; `γ(t) = γ`.
    RandomSites { seed: u64 },
}

impl Schedule {
    pub fn validate(&self) -> ModelResult<()> {
        if let Schedule::SinusoidalGamma { gamma_max, t_total } = self {
            if !gamma_max.is_finite() || *gamma_max < 0.0 {
                return Err(ModelError::Invalid(format!(
                    "gamma_max must be finite and nonnegative, got {gamma_max}"
                )));
            }
            if !t_total.is_finite() || *t_total <= 0.0 {
                return Err(ModelError::Invalid(format!(
                    "t_total must be finite and positive, got {t_total}"
                )));
            }
        }
        Ok(())
    }
}

/// A complete open-system model: Hamiltonian, jump channels, global
/// dissipation strength and an optional time-dependence protocol.
#[derive(Debug, Clone)]
pub struct LindbladModel<A: ComplexScalar> {
    pub hamiltonian: SpinChainHamiltonian<A>,
    pub channels: Vec<JumpChannel<A>>,
    pub gamma: A::Real,
    pub schedule: Schedule,
}

impl<A: ComplexScalar> LindbladModel<A> {
    pub fn new(
        hamiltonian: SpinChainHamiltonian<A>,
        channels: Vec<JumpChannel<A>>,
        gamma: A::Real,
        schedule: Schedule,
    ) -> ModelResult<Self> {
        let gamma_f = A::real_to_f64(gamma);
        if !gamma_f.is_finite() || gamma_f < 0.0 {
            return Err(ModelError::NegativeGamma(gamma_f));
        }
        schedule.validate()?;
        let n = hamiltonian.sites();
        for ch in &channels {
            if ch.operator.support().iter().any(|&s| s >= n) {
                return Err(ModelError::Invalid(format!(
                    "channel {} acts outside the {n}-site chain",
                    ch.operator.label()
                )));
            }
        }
        Ok(Self { hamiltonian, channels, gamma, schedule })
    }

    pub fn sites(&self) -> usize {
        self.hamiltonian.sites()
    }

    /// Dissipation strength at time `t` per the schedule.
    pub fn gamma_at(&self, t: A::Real) -> A::Real {
        match &self.schedule {
            Schedule::Constant | Schedule::RandomSites { .. } => self.gamma,
            Schedule::SinusoidalGamma { gamma_max, t_total } => {
                let phase = std::f64::consts::PI * A::real_to_f64(t) / t_total;
                A::real_from_f64(gamma_max * phase.sin().abs())
            }
        }
    }

    /// True when every channel has `eta = 0` (ordinary linear Lindbladian).
    pub fn is_linear(&self) -> bool {
        self.channels.iter().all(|c| c.eta == A::Real::zero())
    }

    /// Replace all channel efficiencies by a common value.
    pub fn with_uniform_eta(mut self, eta: A::Real) -> ModelResult<Self> {
        self.channels = self
            .channels
            .into_iter()
            .map(|c| c.with_eta(eta))
            .collect::<ModelResult<_>>()?;
        Ok(self)
    }

    pub fn with_gamma(mut self, gamma: A::Real) -> ModelResult<Self> {
        let gamma_f = A::real_to_f64(gamma);
        if !gamma_f.is_finite() || gamma_f < 0.0 {
            return Err(ModelError::NegativeGamma(gamma_f));
        }
        self.gamma = gamma;
        Ok(self)
    }

    /// Resolve the random-site protocol into a concrete channel set.
    ///
    /// Draws two distinct sites and a Pauli axis for each from the schedule
    /// seed, replacing the channel list; the returned model has a constant
    /// schedule. Models without the random protocol are returned unchanged.
    pub fn resolve_protocol(&self) -> Self {
        let Schedule::RandomSites { seed } = self.schedule else {
            return self.clone();
        };
        let n = self.sites();
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let a = rng.gen_range(0..n);
        let b = loop {
            let b = rng.gen_range(0..n);
            if b != a {
                break b;
            }
        };
        let axes = [PauliAxis::X, PauliAxis::Y, PauliAxis::Z];
        let mut channels = Vec::new();
        for site in [a.min(b), a.max(b)] {
            let axis = axes[rng.gen_range(0..3)];
            let op = LocalOperator::Pauli(PauliString::single(site, axis));
            channels.push(JumpChannel::new(op, A::Real::one(), A::Real::zero()).unwrap());
        }
        Self {
            hamiltonian: self.hamiltonian.clone(),
            channels,
            gamma: self.gamma,
            schedule: Schedule::Constant,
        }
    }

    /// Sum of `alpha_k` over channels.
    pub fn alpha_total(&self) -> A::Real {
        self.channels
            .iter()
            .fold(A::Real::zero(), |acc, c| acc + c.alpha)
    }
}

/// The four boundary driving channels: `σ⁺/σ⁻` on each end of the chain with
/// weights `1 ± μ`. Channels whose weight vanishes are dropped from the
/// active set.
pub fn build_boundary_channels<A: ComplexScalar>(
    n: usize,
    mu: A::Real,
) -> ModelResult<Vec<JumpChannel<A>>> {
    let mu_f = A::real_to_f64(mu);
    if !mu_f.is_finite() || mu_f.abs() > 1.0 {
        return Err(ModelError::NegativeRate { mu: mu_f });
    }
    if n < 2 {
        return Err(ModelError::Invalid(format!("need at least 2 sites, got {n}")));
    }
    let one = A::Real::one();
    let specs = [
        (LocalOperator::raise(0), one + mu),
        (LocalOperator::lower(0), one - mu),
        (LocalOperator::raise(n - 1), one - mu),
        (LocalOperator::lower(n - 1), one + mu),
    ];
    let mut channels = Vec::new();
    for (op, alpha) in specs {
        if alpha > A::Real::zero() {
            channels.push(JumpChannel::new(op, alpha, A::Real::zero())?);
        }
    }
    Ok(channels)
}

/// Convenience constructor for the boundary-driven Ising model.
pub fn boundary_driven_ising<A: ComplexScalar>(
    n: usize,
    coupling: A::Real,
    field_x: A::Real,
    field_z: A::Real,
    gamma: A::Real,
    mu: A::Real,
) -> ModelResult<LindbladModel<A>> {
    let hamiltonian = crate::operator::build_ising_hamiltonian(n, coupling, field_x, field_z)
        .map_err(|e| ModelError::Invalid(e.to_string()))?;
    let channels = build_boundary_channels(n, mu)?;
    LindbladModel::new(hamiltonian, channels, gamma, Schedule::Constant)
}

/// Identity matrix helper re-exported for gate builders.
pub fn identity2<A: ComplexScalar>() -> Array2<A> {
    identity(2)
}
