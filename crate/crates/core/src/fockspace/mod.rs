//! Truncated Fock-space and qubit operator algebra.
//!
//! Composite spaces are laid out as qubit ⊗ oscillator with the qubit index
//! slow: basis index `q * N + n` with `q = 0` for `|g⟩` and `q = 1` for `|e⟩`.

mod states;

pub use states::{prepare_state, thermal_state, CatParity, StateSpec};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C64;

use crate::error::{QsimError, Result};
use crate::sparse::CsrMatrix;

pub const QUBIT_LEVELS: usize = 2;

const HERMITIAN_TOL: f64 = 1e-12;
const KET_NORM_TOL: f64 = 1e-10;

/// Which Hilbert space an operator or state lives on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SpaceTag {
    /// Oscillator alone, truncated to `fock_cutoff` levels.
    Oscillator { fock_cutoff: usize },
    /// Bare qubit.
    Qubit,
    /// Qubit ⊗ oscillator.
    Composite { fock_cutoff: usize },
}

impl SpaceTag {
    pub fn oscillator(fock_cutoff: usize) -> Result<Self> {
        check_cutoff(fock_cutoff)?;
        Ok(SpaceTag::Oscillator { fock_cutoff })
    }

    pub fn composite(fock_cutoff: usize) -> Result<Self> {
        check_cutoff(fock_cutoff)?;
        Ok(SpaceTag::Composite { fock_cutoff })
    }

    pub fn dim(&self) -> usize {
        match *self {
            SpaceTag::Oscillator { fock_cutoff } => fock_cutoff,
            SpaceTag::Qubit => QUBIT_LEVELS,
            SpaceTag::Composite { fock_cutoff } => QUBIT_LEVELS * fock_cutoff,
        }
    }

    pub fn fock_cutoff(&self) -> Option<usize> {
        match *self {
            SpaceTag::Oscillator { fock_cutoff } | SpaceTag::Composite { fock_cutoff } => {
                Some(fock_cutoff)
            }
            SpaceTag::Qubit => None,
        }
    }

    pub fn has_qubit(&self) -> bool {
        !matches!(self, SpaceTag::Oscillator { .. })
    }

    pub(crate) fn ensure_same(&self, other: &SpaceTag, what: &str) -> Result<()> {
        if self != other {
            return Err(QsimError::SpaceMismatch(format!("{what}: {self:?} vs {other:?}")));
        }
        Ok(())
    }
}

fn check_cutoff(n: usize) -> Result<()> {
    if n < 2 {
        return Err(QsimError::InvalidArgument(format!(
            "Fock cutoff must be at least 2, got {n}"
        )));
    }
    Ok(())
}

/// Sparse operator tagged with the space it acts on.
#[derive(Clone, Debug, PartialEq)]
pub struct Operator {
    tag: SpaceTag,
    data: CsrMatrix,
    hermitian_hint: bool,
}

impl Operator {
    pub fn new(tag: SpaceTag, data: CsrMatrix) -> Result<Self> {
        let d = tag.dim();
        if data.nrows() != d || data.ncols() != d {
            return Err(QsimError::SpaceMismatch(format!(
                "operator is {}x{}, space dimension is {d}",
                data.nrows(),
                data.ncols()
            )));
        }
        Ok(Self {
            tag,
            data,
            hermitian_hint: false,
        })
    }

    /// Marks the operator Hermitian after checking `max|A − A†| < 1e-12`.
    pub fn into_hermitian(mut self) -> Result<Self> {
        let dev = self.hermiticity_error();
        if dev >= HERMITIAN_TOL * self.data.max_abs().max(1.0) {
            return Err(QsimError::InvalidArgument(format!(
                "operator is not Hermitian (max deviation {dev:e})"
            )));
        }
        self.hermitian_hint = true;
        Ok(self)
    }

    pub fn identity(tag: SpaceTag) -> Self {
        Self {
            tag,
            data: CsrMatrix::identity(tag.dim()),
            hermitian_hint: true,
        }
    }

    pub fn zero(tag: SpaceTag) -> Self {
        let d = tag.dim();
        Self {
            tag,
            data: CsrMatrix::zeros(d, d),
            hermitian_hint: true,
        }
    }

    pub fn tag(&self) -> SpaceTag {
        self.tag
    }

    pub fn data(&self) -> &CsrMatrix {
        &self.data
    }

    pub fn dim(&self) -> usize {
        self.tag.dim()
    }

    pub fn is_hermitian_hint(&self) -> bool {
        self.hermitian_hint
    }

    pub fn hermiticity_error(&self) -> f64 {
        self.data.max_abs_diff(&self.data.adjoint())
    }

    pub fn to_dense(&self) -> DMatrix<C64> {
        self.data.to_dense()
    }

    pub fn element(&self, r: usize, c: usize) -> C64 {
        self.data.get(r, c)
    }

    pub fn adjoint(&self) -> Self {
        Self {
            tag: self.tag,
            data: self.data.adjoint(),
            hermitian_hint: self.hermitian_hint,
        }
    }

    pub fn scale(&self, s: C64) -> Self {
        Self {
            tag: self.tag,
            data: self.data.scale(s),
            hermitian_hint: self.hermitian_hint && s.im == 0.0,
        }
    }

    pub fn scale_re(&self, s: f64) -> Self {
        self.scale(C64::new(s, 0.0))
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.tag.ensure_same(&other.tag, "operator sum")?;
        Ok(Self {
            tag: self.tag,
            data: self.data.add(&other.data),
            hermitian_hint: self.hermitian_hint && other.hermitian_hint,
        })
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.add(&other.scale_re(-1.0))
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.tag.ensure_same(&other.tag, "operator product")?;
        Ok(Self {
            tag: self.tag,
            data: self.data.matmul(&other.data),
            hermitian_hint: false,
        })
    }

    /// `A + A†`.
    pub fn plus_hc(&self) -> Self {
        Self {
            tag: self.tag,
            data: self.data.add(&self.data.adjoint()),
            hermitian_hint: true,
        }
    }

    pub fn commutator(&self, other: &Self) -> Result<Self> {
        self.mul(other)?.sub(&other.mul(self)?)
    }

    pub fn apply(&self, ket: &Ket) -> Result<DVector<C64>> {
        self.tag.ensure_same(&ket.tag, "operator on ket")?;
        Ok(DVector::from_vec(self.data.mul_vec(ket.amplitudes.as_slice())))
    }

    /// Applies the operator to a raw amplitude vector with no normalization requirement.
    pub fn apply_vec(&self, v: &DVector<C64>) -> DVector<C64> {
        DVector::from_vec(self.data.mul_vec(v.as_slice()))
    }

    /// Lifts an oscillator operator to the composite space as `I₂ ⊗ A`.
    pub fn on_oscillator_of_composite(&self) -> Result<Self> {
        if !matches!(self.tag, SpaceTag::Oscillator { .. }) {
            return Err(QsimError::SpaceMismatch("expected an oscillator operator".into()));
        }
        let mut op = tensor(&Operator::identity(SpaceTag::Qubit), self)?;
        op.hermitian_hint = self.hermitian_hint;
        Ok(op)
    }

    /// Lifts a qubit operator to the composite space as `A ⊗ I_N`.
    pub fn on_qubit_of_composite(&self, fock_cutoff: usize) -> Result<Self> {
        if self.tag != SpaceTag::Qubit {
            return Err(QsimError::SpaceMismatch("expected a qubit operator".into()));
        }
        let id = Operator::identity(SpaceTag::oscillator(fock_cutoff)?);
        let mut op = tensor(self, &id)?;
        op.hermitian_hint = self.hermitian_hint;
        Ok(op)
    }
}

/// Normalized state vector.
#[derive(Clone, Debug, PartialEq)]
pub struct Ket {
    tag: SpaceTag,
    amplitudes: DVector<C64>,
}

impl Ket {
    pub fn new(tag: SpaceTag, amplitudes: DVector<C64>) -> Result<Self> {
        if amplitudes.len() != tag.dim() {
            return Err(QsimError::SpaceMismatch(format!(
                "ket has {} amplitudes, space dimension is {}",
                amplitudes.len(),
                tag.dim()
            )));
        }
        let norm = amplitudes.norm();
        if (norm - 1.0).abs() > KET_NORM_TOL {
            return Err(QsimError::InvalidArgument(format!("ket norm is {norm}, expected 1")));
        }
        Ok(Self { tag, amplitudes })
    }

    /// Normalizes `amplitudes` before wrapping them.
    pub fn normalized(tag: SpaceTag, amplitudes: DVector<C64>) -> Result<Self> {
        let norm = amplitudes.norm();
        if norm == 0.0 || !norm.is_finite() {
            return Err(QsimError::InvalidArgument("cannot normalize a null vector".into()));
        }
        Self::new(tag, amplitudes / C64::new(norm, 0.0))
    }

    pub fn basis(tag: SpaceTag, index: usize) -> Result<Self> {
        if index >= tag.dim() {
            return Err(QsimError::InvalidArgument(format!(
                "basis index {index} outside dimension {}",
                tag.dim()
            )));
        }
        let mut v = DVector::zeros(tag.dim());
        v[index] = C64::new(1.0, 0.0);
        Ok(Self { tag, amplitudes: v })
    }

    pub fn tag(&self) -> SpaceTag {
        self.tag
    }

    pub fn amplitudes(&self) -> &DVector<C64> {
        &self.amplitudes
    }

    pub fn inner(&self, other: &Ket) -> Result<C64> {
        self.tag.ensure_same(&other.tag, "inner product")?;
        Ok(self.amplitudes.dotc(&other.amplitudes))
    }

    pub fn to_density(&self) -> DensityMatrix {
        DensityMatrix {
            tag: self.tag,
            data: &self.amplitudes * self.amplitudes.adjoint(),
        }
    }

    /// `|q⟩ ⊗ |ψ⟩` for an oscillator ket and qubit level `q` (0 = g, 1 = e).
    pub fn with_qubit(&self, qubit_level: usize) -> Result<Ket> {
        let n = match self.tag {
            SpaceTag::Oscillator { fock_cutoff } => fock_cutoff,
            _ => return Err(QsimError::SpaceMismatch("expected an oscillator ket".into())),
        };
        if qubit_level >= QUBIT_LEVELS {
            return Err(QsimError::InvalidArgument("qubit level must be 0 or 1".into()));
        }
        let mut v = DVector::zeros(QUBIT_LEVELS * n);
        v.rows_mut(qubit_level * n, n).copy_from(&self.amplitudes);
        Ok(Ket {
            tag: SpaceTag::Composite { fock_cutoff: n },
            amplitudes: v,
        })
    }
}

/// Dense density matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityMatrix {
    tag: SpaceTag,
    data: DMatrix<C64>,
}

pub const DM_HERMITIAN_TOL: f64 = 1e-10;
pub const DM_TRACE_TOL: f64 = 1e-8;
pub const DM_MIN_EIG_TOL: f64 = -1e-8;

impl DensityMatrix {
    /// Wraps `data` after checking that it is a valid density matrix.
    pub fn new(tag: SpaceTag, data: DMatrix<C64>) -> Result<Self> {
        let rho = Self::new_unchecked(tag, data)?;
        rho.validate(DM_HERMITIAN_TOL, DM_TRACE_TOL, DM_MIN_EIG_TOL)?;
        Ok(rho)
    }

    /// Shape-checked only; used for intermediate integrator output.
    pub fn new_unchecked(tag: SpaceTag, data: DMatrix<C64>) -> Result<Self> {
        let d = tag.dim();
        if data.shape() != (d, d) {
            return Err(QsimError::SpaceMismatch(format!(
                "density matrix is {:?}, space dimension is {d}",
                data.shape()
            )));
        }
        Ok(Self { tag, data })
    }

    pub fn validate(&self, herm_tol: f64, trace_tol: f64, min_eig: f64) -> Result<()> {
        let herm = self.hermiticity_error();
        if herm > herm_tol {
            return Err(QsimError::InvalidArgument(format!(
                "density matrix not Hermitian (deviation {herm:e})"
            )));
        }
        let tr = self.trace();
        if (tr.re - 1.0).abs() > trace_tol || tr.im.abs() > trace_tol {
            return Err(QsimError::InvalidArgument(format!("density matrix trace is {tr}")));
        }
        let lmin = self.min_eigenvalue();
        if lmin < min_eig {
            return Err(QsimError::InvalidArgument(format!(
                "density matrix has eigenvalue {lmin:e}"
            )));
        }
        Ok(())
    }

    pub fn maximally_mixed(tag: SpaceTag) -> Self {
        let d = tag.dim();
        Self {
            tag,
            data: DMatrix::identity(d, d) * C64::new(1.0 / d as f64, 0.0),
        }
    }

    pub fn tag(&self) -> SpaceTag {
        self.tag
    }

    pub fn data(&self) -> &DMatrix<C64> {
        &self.data
    }

    pub fn dim(&self) -> usize {
        self.tag.dim()
    }

    pub fn trace(&self) -> C64 {
        self.data.trace()
    }

    pub fn hermiticity_error(&self) -> f64 {
        (&self.data - self.data.adjoint())
            .iter()
            .map(|v| v.norm())
            .fold(0.0, f64::max)
    }

    pub fn min_eigenvalue(&self) -> f64 {
        let h = (&self.data + self.data.adjoint()) * C64::new(0.5, 0.0);
        h.symmetric_eigenvalues().iter().cloned().fold(f64::INFINITY, f64::min)
    }

    /// `(ρ + ρ†)/2`, returning the removed anti-Hermitian magnitude.
    pub fn symmetrize(&mut self) -> f64 {
        let drift = self.hermiticity_error();
        self.data = (&self.data + self.data.adjoint()) * C64::new(0.5, 0.0);
        drift
    }

    /// Column-stacked vectorization.
    pub fn to_vec(&self) -> Vec<C64> {
        self.data.as_slice().to_vec()
    }

    pub fn from_vec(tag: SpaceTag, v: &[C64]) -> Result<Self> {
        let d = tag.dim();
        if v.len() != d * d {
            return Err(QsimError::SpaceMismatch(format!(
                "vectorized state has length {}, expected {}",
                v.len(),
                d * d
            )));
        }
        Ok(Self {
            tag,
            data: DMatrix::from_column_slice(d, d, v),
        })
    }

    /// Population of basis state `i`.
    pub fn population(&self, i: usize) -> f64 {
        self.data[(i, i)].re
    }
}

/// Truncated annihilation and creation operators on `N_trunc` levels.
pub fn ladder_operators(fock_cutoff: usize) -> Result<(Operator, Operator)> {
    let tag = SpaceTag::oscillator(fock_cutoff)?;
    let a = CsrMatrix::from_triplets(
        fock_cutoff,
        fock_cutoff,
        (1..fock_cutoff).map(|n| (n - 1, n, C64::new((n as f64).sqrt(), 0.0))),
    );
    let a = Operator::new(tag, a)?;
    let adag = a.adjoint();
    Ok((a, adag))
}

pub fn number_operator(fock_cutoff: usize) -> Result<Operator> {
    let tag = SpaceTag::oscillator(fock_cutoff)?;
    let diag: Vec<C64> = (0..fock_cutoff).map(|n| C64::new(n as f64, 0.0)).collect();
    Ok(Operator {
        tag,
        data: CsrMatrix::from_diagonal(&diag),
        hermitian_hint: true,
    })
}

/// Pauli-type qubit operators in the `{|g⟩, |e⟩}` basis.
#[derive(Clone, Debug)]
pub struct QubitOperators {
    pub sigma_z: Operator,
    pub sigma_x: Operator,
    pub sigma_plus: Operator,
    pub sigma_minus: Operator,
}

pub fn qubit_operators() -> QubitOperators {
    let one = C64::new(1.0, 0.0);
    let tag = SpaceTag::Qubit;
    let sigma_plus = Operator {
        tag,
        data: CsrMatrix::from_triplets(2, 2, [(1, 0, one)]),
        hermitian_hint: false,
    };
    let sigma_minus = sigma_plus.adjoint();
    let sigma_z = Operator {
        tag,
        data: CsrMatrix::from_diagonal(&[-one, one]),
        hermitian_hint: true,
    };
    let sigma_x = sigma_plus.plus_hc();
    QubitOperators {
        sigma_z,
        sigma_x,
        sigma_plus,
        sigma_minus,
    }
}

/// Kronecker product of a qubit operator with an oscillator operator.
pub fn tensor(qubit_op: &Operator, osc_op: &Operator) -> Result<Operator> {
    let n = match (qubit_op.tag, osc_op.tag) {
        (SpaceTag::Qubit, SpaceTag::Oscillator { fock_cutoff }) => fock_cutoff,
        (l, r) => {
            return Err(QsimError::SpaceMismatch(format!(
                "tensor expects qubit ⊗ oscillator, got {l:?} ⊗ {r:?}"
            )))
        }
    };
    Ok(Operator {
        tag: SpaceTag::Composite { fock_cutoff: n },
        data: qubit_op.data.kron(&osc_op.data),
        hermitian_hint: qubit_op.hermitian_hint && osc_op.hermitian_hint,
    })
}

/// Operators of the composite space that the model builders reuse.
#[derive(Clone, Debug)]
pub struct CompositeOperators {
    pub a: Operator,
    pub adag: Operator,
    pub num: Operator,
    pub sigma_z: Operator,
    pub sigma_x: Operator,
    pub sigma_plus: Operator,
    pub sigma_minus: Operator,
}

impl CompositeOperators {
    pub fn new(fock_cutoff: usize) -> Result<Self> {
        let (a, adag) = ladder_operators(fock_cutoff)?;
        let num = number_operator(fock_cutoff)?;
        let q = qubit_operators();
        Ok(Self {
            a: a.on_oscillator_of_composite()?,
            adag: adag.on_oscillator_of_composite()?,
            num: num.on_oscillator_of_composite()?,
            sigma_z: q.sigma_z.on_qubit_of_composite(fock_cutoff)?,
            sigma_x: q.sigma_x.on_qubit_of_composite(fock_cutoff)?,
            sigma_plus: q.sigma_plus.on_qubit_of_composite(fock_cutoff)?,
            sigma_minus: q.sigma_minus.on_qubit_of_composite(fock_cutoff)?,
        })
    }
}

/// `U₁ = exp[−λ σ_z (a† − a)]` on the composite space.
pub fn polaron_transform(lambda: f64, fock_cutoff: usize) -> Result<Operator> {
    if !lambda.is_finite() {
        return Err(QsimError::InvalidArgument("λ must be a finite real number".into()));
    }
    if lambda.abs() >= 1.0 {
        return Err(QsimError::InvalidArgument(format!("|λ| must be < 1, got {lambda}")));
    }
    let ops = CompositeOperators::new(fock_cutoff)?;
    let gen = ops.sigma_z.mul(&ops.adag.sub(&ops.a)?)?.scale_re(-lambda);
    // Padé scaling-and-squaring on the dense generator.
    let u = gen.to_dense().exp();
    Operator::new(gen.tag, CsrMatrix::from_dense(&u))
}

/// Traces out the qubit of a composite-space density matrix.
pub fn partial_trace_qubit(rho: &DensityMatrix) -> Result<DensityMatrix> {
    let n = match rho.tag {
        SpaceTag::Composite { fock_cutoff } => fock_cutoff,
        other => {
            return Err(QsimError::SpaceMismatch(format!(
                "partial trace needs a composite state, got {other:?}"
            )))
        }
    };
    let d = &rho.data;
    let reduced = d.view((0, 0), (n, n)) + d.view((n, n), (n, n));
    Ok(DensityMatrix {
        tag: SpaceTag::Oscillator { fock_cutoff: n },
        data: reduced,
    })
}

/// `Tr(O ρ)`.
pub fn expectation(op: &Operator, rho: &DensityMatrix) -> Result<C64> {
    op.tag.ensure_same(&rho.tag, "expectation value")?;
    let mut acc = C64::new(0.0, 0.0);
    for (r, c, v) in op.data.triplets() {
        acc += v * rho.data[(c, r)];
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn one() -> C64 {
        C64::new(1.0, 0.0)
    }

    #[test]
    fn ladder_matrix_elements() {
        let (a, adag) = ladder_operators(3).unwrap();
        assert_eq!(a.data().nnz(), 2);
        assert_eq!(a.element(0, 1), one());
        assert_abs_diff_eq!(a.element(1, 2).re, 2f64.sqrt(), epsilon = 1e-15);
        assert_eq!(adag.element(1, 0), one());
    }

    #[test]
    fn rejects_small_cutoff() {
        assert!(ladder_operators(1).is_err());
        assert!(SpaceTag::composite(0).is_err());
    }

    #[test]
    fn commutator_is_identity_below_cutoff() {
        for n_trunc in [2, 5, 12, 30] {
            let (a, adag) = ladder_operators(n_trunc).unwrap();
            let c = a.commutator(&adag).unwrap();
            let vac = Ket::basis(a.tag(), 0).unwrap();
            let out = c.apply(&vac).unwrap();
            assert_abs_diff_eq!((out - vac.amplitudes()).norm(), 0.0, epsilon = 1e-14);
            for n in 0..n_trunc.saturating_sub(1) {
                assert_abs_diff_eq!(c.element(n, n).re, 1.0, epsilon = 1e-12);
            }
            // truncation artifact: [a,a†] on the top level is 1 − N_trunc
            let top = n_trunc - 1;
            assert_abs_diff_eq!(c.element(top, top).re, 1.0 - n_trunc as f64, epsilon = 1e-12);
        }
    }

    #[test]
    fn pauli_actions() {
        let q = qubit_operators();
        let g = Ket::basis(SpaceTag::Qubit, 0).unwrap();
        let e = Ket::basis(SpaceTag::Qubit, 1).unwrap();
        assert_eq!(q.sigma_z.apply(&e).unwrap(), e.amplitudes().clone());
        assert_eq!(q.sigma_plus.apply(&g).unwrap(), e.amplitudes().clone());
        assert_eq!(q.sigma_plus.apply(&e).unwrap().norm(), 0.0);
        let x2 = q.sigma_x.mul(&q.sigma_x).unwrap();
        assert_eq!(x2.to_dense(), DMatrix::identity(2, 2));
        assert!(q.sigma_x.is_hermitian_hint());
    }

    #[test]
    fn tensor_actions() {
        let n = 4;
        let (a, _) = ladder_operators(n).unwrap();
        let id2 = Operator::identity(SpaceTag::Qubit);
        let op = tensor(&id2, &a).unwrap();
        let g1 = Ket::basis(SpaceTag::Composite { fock_cutoff: n }, 1).unwrap();
        let g0 = Ket::basis(SpaceTag::Composite { fock_cutoff: n }, 0).unwrap();
        assert_eq!(op.apply(&g1).unwrap(), g0.amplitudes().clone());

        let q = qubit_operators();
        let sz = tensor(&q.sigma_z, &Operator::identity(SpaceTag::Oscillator { fock_cutoff: n }))
            .unwrap();
        for k in 0..n {
            let e_k = Ket::basis(sz.tag(), n + k).unwrap();
            assert_eq!(sz.apply(&e_k).unwrap(), e_k.amplitudes().clone());
        }
        assert!(tensor(&a, &id2).is_err());
    }

    #[test]
    fn partial_trace_examples() {
        let n = 4;
        let tag = SpaceTag::Composite { fock_cutoff: n };
        let prod = Ket::basis(tag, 2).unwrap().to_density();
        let red = partial_trace_qubit(&prod).unwrap();
        assert_eq!(red.data()[(2, 2)], one());
        assert_abs_diff_eq!(red.trace().re, 1.0);

        let s = 0.5f64.sqrt();
        let mut v = DVector::zeros(2 * n);
        v[0] = C64::new(s, 0.0);
        v[n + 1] = C64::new(s, 0.0);
        let bell = Ket::new(tag, v).unwrap().to_density();
        let red = partial_trace_qubit(&bell).unwrap();
        assert_abs_diff_eq!(red.data()[(0, 0)].re, 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(red.data()[(1, 1)].re, 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(red.data()[(0, 1)].norm(), 0.0);

        assert!(partial_trace_qubit(&red).is_err());
    }

    #[test]
    fn expectation_examples() {
        let n = 6;
        let num = number_operator(n).unwrap();
        let three = Ket::basis(num.tag(), 3).unwrap().to_density();
        assert_abs_diff_eq!(expectation(&num, &three).unwrap().re, 3.0);

        let ops = CompositeOperators::new(n).unwrap();
        let g = Ket::basis(ops.a.tag(), 0).unwrap().to_density();
        assert_eq!(expectation(&ops.sigma_plus, &g).unwrap(), C64::new(0.0, 0.0));
        assert!(expectation(&num, &g).is_err());
    }

    #[test]
    fn polaron_identity_and_unitarity() {
        let u0 = polaron_transform(0.0, 8).unwrap();
        let dev0 = (u0.to_dense() - DMatrix::<C64>::identity(16, 16)).iter().map(|v| v.norm()).fold(0.0, f64::max);
        assert!(dev0 < 1e-14);

        let u = polaron_transform(0.07, 40).unwrap().to_dense();
        let prod = u.adjoint() * &u;
        let dev = (prod - DMatrix::<C64>::identity(80, 80))
            .iter()
            .map(|v| v.norm())
            .fold(0.0, f64::max);
        assert!(dev < 1e-9, "U†U deviates by {dev:e}");
        assert!(polaron_transform(f64::NAN, 8).is_err());
        assert!(polaron_transform(1.5, 8).is_err());
    }

    #[test]
    fn polaron_displaces_ground_branch() {
        let n = 30;
        let lambda = 0.07;
        let u = polaron_transform(lambda, n).unwrap();
        let g0 = Ket::basis(SpaceTag::Composite { fock_cutoff: n }, 0).unwrap();
        let out = u.apply(&g0).unwrap();
        let coh = prepare_state(&StateSpec::Coherent { re: lambda, im: 0.0 }, n)
            .unwrap()
            .with_qubit(0)
            .unwrap();
        let overlap = coh.amplitudes().dotc(&out).norm();
        assert_abs_diff_eq!(overlap, 1.0, epsilon = 1e-10);
    }

    fn dense_kron(a: &DMatrix<C64>, b: &DMatrix<C64>) -> DMatrix<C64> {
        let (ar, ac) = a.shape();
        let (br, bc) = b.shape();
        DMatrix::from_fn(ar * br, ac * bc, |i, j| a[(i / br, j / bc)] * b[(i % br, j % bc)])
    }

    fn arb_complex() -> impl Strategy<Value = C64> {
        (-2.0f64..2.0, -2.0f64..2.0).prop_map(|(r, i)| C64::new(r, i))
    }

    fn arb_sparse(n: usize) -> impl Strategy<Value = CsrMatrix> {
        prop::collection::vec((0..n, 0..n, arb_complex()), 0..(2 * n))
            .prop_map(move |t| CsrMatrix::from_triplets(n, n, t))
    }

    proptest! {
        #[test]
        fn mixed_product_identity(
            a in arb_sparse(2), c in arb_sparse(2),
            b in arb_sparse(4), d in arb_sparse(4),
        ) {
            let q = |m: CsrMatrix| Operator::new(SpaceTag::Qubit, m).unwrap();
            let o = |m: CsrMatrix| Operator::new(SpaceTag::Oscillator { fock_cutoff: 4 }, m).unwrap();
            let (a, b, c, d) = (q(a), o(b), q(c), o(d));
            let lhs = tensor(&a, &b).unwrap().mul(&tensor(&c, &d).unwrap()).unwrap().to_dense();
            let rhs = dense_kron(&(a.to_dense() * c.to_dense()), &(b.to_dense() * d.to_dense()));
            let dev = (lhs - rhs).iter().map(|v| v.norm()).fold(0.0, f64::max);
            prop_assert!(dev < 1e-12);
        }

        #[test]
        fn partial_trace_preserves_trace_and_positivity(
            amps in prop::collection::vec((arb_complex(), 0.0f64..1.0), 3),
            raw in prop::collection::vec(prop::collection::vec(arb_complex(), 8), 3),
        ) {
            let tag = SpaceTag::Composite { fock_cutoff: 4 };
            let total: f64 = amps.iter().map(|(_, w)| w).sum::<f64>() + 1e-3;
            let mut rho = DMatrix::<C64>::zeros(8, 8);
            for ((_, w), v) in amps.iter().zip(&raw) {
                let v = DVector::from_vec(v.clone());
                let nrm = v.norm();
                prop_assume!(nrm > 1e-6);
                let k = Ket::new(tag, v / C64::new(nrm, 0.0)).unwrap();
                rho += k.to_density().data() * C64::new((w + 1e-3 / 3.0) / total, 0.0);
            }
            let rho = DensityMatrix::new(tag, rho).unwrap();
            let red = partial_trace_qubit(&rho).unwrap();
            prop_assert!((red.trace() - rho.trace()).norm() < 1e-12);
            prop_assert!(red.min_eigenvalue() > -1e-12);
        }
    }
}
