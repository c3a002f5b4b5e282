//! Stationary states from a sparse LU solve of `L vec(ρ) = 0` with `Tr ρ = 1`.

use faer::prelude::*;
use faer::sparse::{SparseColMat, Triplet};
use num_complex::Complex64 as C64;

use super::Liouvillian;
use crate::error::{QsimError, Result};
use crate::fockspace::DensityMatrix;

/// Bound on `‖L vec(ρ)‖₂ / max|L_ij|` for an accepted steady state.
pub const STEADY_RESIDUAL_TOL: f64 = 1e-10;

#[derive(Clone, Debug)]
pub struct SteadyStateReport {
    pub state: DensityMatrix,
    /// `‖L vec(ρ)‖₂ / max|L_ij|`.
    pub residual: f64,
    /// Distance between solutions obtained with the trace row in two places.
    pub uniqueness_gap: f64,
}

/// Solves with the equation for diagonal element `pivot` replaced by the
/// trace condition.
fn solve_with_trace_row(l: &Liouvillian, pivot: usize) -> Result<Vec<C64>> {
    let d = l.dim();
    let n = d * d;
    let row = pivot * (d + 1);
    let mut trips: Vec<Triplet<usize, usize, C64>> = l
        .static_superop()
        .triplets()
        .filter(|(r, _, _)| *r != row)
        .map(|(r, c, v)| Triplet::new(r, c, v))
        .collect();
    for i in 0..d {
        trips.push(Triplet::new(row, i * (d + 1), C64::new(1.0, 0.0)));
    }
    let a = SparseColMat::<usize, C64>::try_new_from_triplets(n, n, &trips)
        .map_err(|e| QsimError::Solver(format!("assembling augmented system: {e:?}")))?;
    let lu = a
        .sp_lu()
        .map_err(|e| QsimError::DegenerateSteadyState(format!("LU factorization failed: {e:?}")))?;
    let mut b = Mat::<C64>::zeros(n, 1);
    b[(row, 0)] = C64::new(1.0, 0.0);
    let x = lu.solve(&b);
    let v: Vec<C64> = (0..n).map(|i| x[(i, 0)]).collect();
    if v.iter().any(|z| !z.is_finite()) {
        return Err(QsimError::DegenerateSteadyState("singular augmented system".into()));
    }
    Ok(v)
}

pub fn steady_state(l: &Liouvillian) -> Result<DensityMatrix> {
    steady_state_report(l).map(|r| r.state)
}

pub fn steady_state_report(l: &Liouvillian) -> Result<SteadyStateReport> {
    if l.is_time_dependent() {
        return Err(QsimError::InvalidArgument(
            "steady state needs a time-independent generator".into(),
        ));
    }
    let d = l.dim();
    let first = solve_with_trace_row(l, 0)?;
    let second = solve_with_trace_row(l, d - 1)?;

    // a unique stationary state does not depend on which equation was dropped
    let gap = first
        .iter()
        .zip(&second)
        .map(|(a, b)| (a - b).norm())
        .fold(0.0, f64::max);
    if gap > 1e-6 {
        return Err(QsimError::DegenerateSteadyState(format!(
            "solutions differ by {gap:.3e} depending on the constrained row"
        )));
    }

    let mut rho = DensityMatrix::from_vec(l.tag(), &first)?;
    rho.symmetrize();
    let tr = rho.trace().re;
    let rho = DensityMatrix::new_unchecked(l.tag(), rho.data() / C64::new(tr, 0.0))?;

    let x = rho.to_vec();
    let mut y = vec![C64::new(0.0, 0.0); x.len()];
    l.apply_into(0.0, &x, &mut y);
    let scale = l.static_superop().max_abs().max(f64::MIN_POSITIVE);
    let residual = y.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt() / scale;
    if residual > STEADY_RESIDUAL_TOL {
        return Err(QsimError::Solver(format!("steady-state residual {residual:.3e}")));
    }
    rho.validate(1e-10, 1e-8, -1e-8)?;
    Ok(SteadyStateReport {
        state: rho,
        residual,
        uniqueness_gap: gap,
    })
}
