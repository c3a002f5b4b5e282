//! Lindblad dynamics on column-stacked density matrices.
//!
//! With `vec(ρ)` stacking columns, `vec(AρB) = (Bᵀ ⊗ A) vec(ρ)`, so the
//! superoperator of `AρB†` is `B̄ ⊗ A`.

mod integrate;
mod steady;

pub use integrate::{evolve, evolve_with, EvolveOptions, EvolveStats, Trajectory, TRACE_DRIFT_TOL};
pub use steady::{steady_state, steady_state_report, SteadyStateReport, STEADY_RESIDUAL_TOL};

use num_complex::Complex64 as C64;

use crate::error::{QsimError, Result};
use crate::fockspace::{DensityMatrix, Operator, SpaceTag};
use crate::model::SplitHamiltonian;
use crate::sparse::CsrMatrix;

/// A collapse operator with its rate, contributing `rate · D[c]ρ`.
#[derive(Clone, Debug)]
pub struct DissipatorSpec {
    pub collapse_operator: Operator,
    pub rate: f64,
}

impl DissipatorSpec {
    pub fn new(collapse_operator: Operator, rate: f64) -> Result<Self> {
        if !(rate >= 0.0) || !rate.is_finite() {
            return Err(QsimError::InvalidArgument(format!("dissipator rate {rate} must be ≥ 0")));
        }
        Ok(Self {
            collapse_operator,
            rate,
        })
    }
}

/// Qubit decay at Γ plus thermal phonon exchange with a bath at `n_th`.
/// Zero rates drop their channel.
pub fn standard_dissipators(
    fock_cutoff: usize,
    qubit_decay: f64,
    mech_decay: f64,
    n_th: f64,
) -> Result<Vec<DissipatorSpec>> {
    let ops = crate::fockspace::CompositeOperators::new(fock_cutoff)?;
    let mut out = Vec::new();
    if qubit_decay > 0.0 {
        out.push(DissipatorSpec::new(ops.sigma_minus, qubit_decay)?);
    }
    if mech_decay > 0.0 {
        out.push(DissipatorSpec::new(ops.a, (n_th + 1.0) * mech_decay)?);
        if n_th > 0.0 {
            out.push(DissipatorSpec::new(ops.adag, n_th * mech_decay)?);
        }
    }
    Ok(out)
}

/// `L(t) = L₀ + Σ_k L_k e^{−iω_k t}` acting on `vec(ρ)`.
#[derive(Clone, Debug)]
pub struct Liouvillian {
    tag: SpaceTag,
    static_superop: CsrMatrix,
    time_dependent_parts: Vec<(CsrMatrix, f64)>,
}

fn spre(a: &CsrMatrix) -> CsrMatrix {
    CsrMatrix::identity(a.nrows()).kron(a)
}

fn spost(a: &CsrMatrix) -> CsrMatrix {
    a.transpose().kron(&CsrMatrix::identity(a.nrows()))
}

fn commutator_superop(h: &CsrMatrix) -> CsrMatrix {
    let minus_i = C64::new(0.0, -1.0);
    spre(h).sub(&spost(h)).scale(minus_i)
}

fn dissipator_superop(c: &CsrMatrix, rate: f64) -> CsrMatrix {
    let cdc = c.adjoint().matmul(c);
    let half = C64::new(-0.5, 0.0);
    c.conj()
        .kron(c)
        .add(&spre(&cdc).scale(half))
        .add(&spost(&cdc).scale(half))
        .scale(C64::new(rate, 0.0))
}

impl Liouvillian {
    pub fn tag(&self) -> SpaceTag {
        self.tag
    }

    pub fn dim(&self) -> usize {
        self.tag.dim()
    }

    pub fn static_superop(&self) -> &CsrMatrix {
        &self.static_superop
    }

    pub fn time_dependent_parts(&self) -> &[(CsrMatrix, f64)] {
        &self.time_dependent_parts
    }

    pub fn is_time_dependent(&self) -> bool {
        !self.time_dependent_parts.is_empty()
    }

    pub fn nnz(&self) -> usize {
        self.static_superop.nnz()
            + self
                .time_dependent_parts
                .iter()
                .map(|(m, _)| m.nnz())
                .sum::<usize>()
    }

    /// `out = L(t) x`.
    pub fn apply_into(&self, t: f64, x: &[C64], out: &mut [C64]) {
        out.iter_mut().for_each(|v| *v = C64::new(0.0, 0.0));
        self.static_superop.mul_vec_acc(x, C64::new(1.0, 0.0), out);
        for (m, w) in &self.time_dependent_parts {
            m.mul_vec_acc(x, C64::from_polar(1.0, -w * t), out);
        }
    }

    /// `L(t)` applied to a density matrix, returned as a raw matrix.
    pub fn apply(&self, t: f64, rho: &DensityMatrix) -> Result<nalgebra::DMatrix<C64>> {
        self.tag.ensure_same(&rho.tag(), "Liouvillian action")?;
        let x = rho.to_vec();
        let mut y = vec![C64::new(0.0, 0.0); x.len()];
        self.apply_into(t, &x, &mut y);
        let d = self.dim();
        Ok(nalgebra::DMatrix::from_column_slice(d, d, &y))
    }

    /// Largest column sum of the static superoperator over diagonal-index rows;
    /// zero for a trace-preserving generator.
    pub fn trace_functional_residual(&self) -> f64 {
        let d = self.dim();
        let mut col = vec![C64::new(0.0, 0.0); d * d];
        for (r, c, v) in self.static_superop.triplets() {
            if r % (d + 1) == 0 {
                col[c] += v;
            }
        }
        col.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }
}

/// `L(ρ) = −i[H(t), ρ] + Σ rate · D[c]ρ`.
pub fn build_liouvillian(h: &SplitHamiltonian, dissipators: &[DissipatorSpec]) -> Result<Liouvillian> {
    let tag = h.tag();
    let mut l0 = commutator_superop(h.static_part.data());
    for d in dissipators {
        tag.ensure_same(&d.collapse_operator.tag(), "collapse operator")?;
        if !(d.rate >= 0.0) {
            return Err(QsimError::InvalidArgument(format!("negative rate {}", d.rate)));
        }
        if d.rate > 0.0 {
            l0 = l0.add(&dissipator_superop(d.collapse_operator.data(), d.rate));
        }
    }
    let mut parts = Vec::with_capacity(h.phased.len());
    for (op, w) in &h.phased {
        tag.ensure_same(&op.tag(), "phased Hamiltonian term")?;
        parts.push((commutator_superop(op.data()), *w));
    }
    Ok(Liouvillian {
        tag,
        static_superop: l0,
        time_dependent_parts: parts,
    })
}

/// Direct evaluation `−i[H,ρ] + Σ rate (cρc† − ½{c†c, ρ})` on dense matrices.
pub fn lindblad_rhs_dense(
    h: &Operator,
    dissipators: &[DissipatorSpec],
    rho: &DensityMatrix,
) -> Result<nalgebra::DMatrix<C64>> {
    h.tag().ensure_same(&rho.tag(), "Lindblad right-hand side")?;
    let hd = h.to_dense();
    let r = rho.data();
    let mut out = (&hd * r - r * &hd) * C64::new(0.0, -1.0);
    for d in dissipators {
        let c = d.collapse_operator.to_dense();
        let cd = c.adjoint();
        let cdc = &cd * &c;
        out += (&c * r * &cd - (&cdc * r + r * &cdc) * C64::new(0.5, 0.0)) * C64::new(d.rate, 0.0);
    }
    Ok(out)
}
