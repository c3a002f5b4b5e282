use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use super::{DensityMatrix, Ket, SpaceTag};
use crate::error::{QsimError, Result};

/// Maximum probability allowed on the top two Fock levels.
pub const TAIL_LEAKAGE_TOL: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CatParity {
    Even,
    Odd,
}

/// Canonical states the protocols start from or compare against.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StateSpec {
    Fock { n: usize },
    Coherent { re: f64, im: f64 },
    /// `exp[½(η a² − η* a†²)]|0⟩`.
    SqueezedVacuum { re: f64, im: f64 },
    Cat { re: f64, im: f64, parity: CatParity },
    /// `|g⟩ ⊗ osc` on the composite space.
    GroundQubitProduct { osc: Box<StateSpec> },
}

pub fn prepare_state(spec: &StateSpec, fock_cutoff: usize) -> Result<Ket> {
    if let StateSpec::GroundQubitProduct { osc } = spec {
        return prepare_state(osc, fock_cutoff)?.with_qubit(0);
    }
    let tag = SpaceTag::oscillator(fock_cutoff)?;
    let amps = match *spec {
        StateSpec::Fock { n } => {
            if n + 2 >= fock_cutoff {
                return Err(QsimError::Truncation(format!(
                    "Fock state |{n}⟩ touches the top two levels of a {fock_cutoff}-level space"
                )));
            }
            let mut v = DVector::zeros(fock_cutoff);
            v[n] = C64::new(1.0, 0.0);
            v
        }
        StateSpec::Coherent { re, im } => {
            let alpha = C64::new(re, im);
            check_displacement_fits(alpha, fock_cutoff)?;
            coherent_amplitudes(alpha, fock_cutoff)
        }
        StateSpec::SqueezedVacuum { re, im } => squeezed_amplitudes(C64::new(re, im), fock_cutoff),
        StateSpec::Cat { re, im, parity } => {
            let alpha = C64::new(re, im);
            check_displacement_fits(alpha, fock_cutoff)?;
            let x = (-2.0 * alpha.norm_sqr()).exp();
            let (sign, norm) = match parity {
                CatParity::Even => (1.0, 2.0 * (1.0 + x)),
                CatParity::Odd => (-1.0, 2.0 * (1.0 - x)),
            };
            if norm <= 1e-300 || alpha.norm() == 0.0 && parity == CatParity::Odd {
                return Err(QsimError::InvalidArgument(
                    "odd cat with α = 0 is the null vector".into(),
                ));
            }
            let plus = coherent_amplitudes(alpha, fock_cutoff);
            let minus = coherent_amplitudes(-alpha, fock_cutoff);
            (plus + minus * C64::new(sign, 0.0)) / C64::new(norm.sqrt(), 0.0)
        }
        StateSpec::GroundQubitProduct { .. } => unreachable!(),
    };
    check_tail(&amps)?;
    Ket::normalized(tag, amps)
}

fn check_displacement_fits(alpha: C64, fock_cutoff: usize) -> Result<()> {
    let r = alpha.norm();
    if r * r + 5.0 * r >= fock_cutoff as f64 {
        return Err(QsimError::Truncation(format!(
            "|α|² + 5|α| = {:.3} does not fit below cutoff {fock_cutoff}",
            r * r + 5.0 * r
        )));
    }
    Ok(())
}

fn check_tail(amps: &DVector<C64>) -> Result<()> {
    let n = amps.len();
    let tail: f64 = amps.iter().skip(n - 2).map(|c| c.norm_sqr()).sum();
    if tail > TAIL_LEAKAGE_TOL {
        return Err(QsimError::Truncation(format!(
            "probability {tail:e} on the top two of {n} Fock levels"
        )));
    }
    Ok(())
}

/// Untruncated coherent-state amplitudes `e^{−|α|²/2} αⁿ/√n!` for `n < N`.
pub(crate) fn coherent_amplitudes(alpha: C64, n_levels: usize) -> DVector<C64> {
    let mut v = DVector::zeros(n_levels);
    let mut c = C64::new((-0.5 * alpha.norm_sqr()).exp(), 0.0);
    for n in 0..n_levels {
        if n > 0 {
            c = c * alpha / (n as f64).sqrt();
        }
        v[n] = c;
    }
    v
}

fn squeezed_amplitudes(eta: C64, n_levels: usize) -> DVector<C64> {
    let r = eta.norm();
    let mut v = DVector::zeros(n_levels);
    let phase = if r > 0.0 { eta.conj() / r } else { C64::new(1.0, 0.0) };
    let ratio = -phase * r.tanh();
    // c_{2m} = ratio^m √((2m)!)/(2^m m!) / √cosh r
    let mut c = C64::new(1.0 / r.cosh().sqrt(), 0.0);
    let mut m = 0usize;
    while 2 * m < n_levels {
        if m > 0 {
            let k = m as f64;
            c = c * ratio * ((2.0 * k) * (2.0 * k - 1.0)).sqrt() / (2.0 * k);
        }
        v[2 * m] = c;
        m += 1;
    }
    v
}

/// Bose–Einstein state with mean occupation `n_th`, renormalized on the
/// truncated space.
pub fn thermal_state(n_th: f64, fock_cutoff: usize) -> Result<DensityMatrix> {
    if !(n_th >= 0.0) || !n_th.is_finite() {
        return Err(QsimError::InvalidArgument(format!("thermal occupation {n_th}")));
    }
    let tag = SpaceTag::oscillator(fock_cutoff)?;
    let q = n_th / (n_th + 1.0);
    let p: Vec<f64> = (0..fock_cutoff)
        .map(|n| q.powi(n as i32) / (n_th + 1.0))
        .collect();
    let total: f64 = p.iter().sum();
    let tail = 1.0 - total;
    if tail > 1e-3 {
        log::warn!("thermal state n_th = {n_th} loses {tail:.2e} probability above cutoff {fock_cutoff}");
    }
    let diag = DVector::from_iterator(fock_cutoff, p.iter().map(|x| C64::new(x / total, 0.0)));
    DensityMatrix::new(tag, DMatrix::from_diagonal(&diag))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fockspace::ladder_operators;
    use approx::assert_abs_diff_eq;

    #[test]
    fn even_cat_has_no_odd_amplitudes() {
        let s = 2f64.sqrt();
        let k = prepare_state(&StateSpec::Cat { re: s, im: 0.0, parity: CatParity::Even }, 30).unwrap();
        for n in (1..30).step_by(2) {
            assert_eq!(k.amplitudes()[n], C64::new(0.0, 0.0));
        }
        assert_abs_diff_eq!(k.amplitudes().norm(), 1.0, epsilon = 1e-10);

        let odd = prepare_state(&StateSpec::Cat { re: s, im: 0.0, parity: CatParity::Odd }, 30).unwrap();
        for n in (0..30).step_by(2) {
            assert_eq!(odd.amplitudes()[n], C64::new(0.0, 0.0));
        }
    }

    #[test]
    fn cat_normalization_constant_matches_closed_form() {
        // with a large cutoff the analytic N leaves the vector normalized already
        let alpha = C64::new(1.1, 0.4);
        let x = (-2.0 * alpha.norm_sqr()).exp();
        let raw = coherent_amplitudes(alpha, 60) + coherent_amplitudes(-alpha, 60);
        let norm = (2.0 * (1.0 + x)).sqrt();
        assert_abs_diff_eq!(raw.norm() / norm, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn odd_cat_at_origin_rejected() {
        let r = prepare_state(&StateSpec::Cat { re: 0.0, im: 0.0, parity: CatParity::Odd }, 10);
        assert!(r.is_err());
    }

    #[test]
    fn coherent_zero_is_vacuum() {
        let k = prepare_state(&StateSpec::Coherent { re: 0.0, im: 0.0 }, 10).unwrap();
        let vac = prepare_state(&StateSpec::Fock { n: 0 }, 10).unwrap();
        assert_eq!(k, vac);
    }

    #[test]
    fn cutoff_too_small_is_rejected() {
        assert!(prepare_state(&StateSpec::Coherent { re: 2.0, im: 0.0 }, 12).is_err());
        assert!(prepare_state(&StateSpec::Fock { n: 8 }, 10).is_err());
        assert!(prepare_state(&StateSpec::SqueezedVacuum { re: 1.5, im: 0.0 }, 10).is_err());
    }

    #[test]
    fn squeezed_vacuum_variance_by_fock_summation() {
        let eta = 0.549;
        let n = 40;
        let k = prepare_state(&StateSpec::SqueezedVacuum { re: eta, im: 0.0 }, n).unwrap();
        for m in (1..n).step_by(2) {
            assert_eq!(k.amplitudes()[m], C64::new(0.0, 0.0));
        }
        // ⟨X₁²⟩ = ½⟨(a + a†)²⟩ = ½ Σ ( |c_m|²(2m + 1) + 2 Re[c_m* c_{m+2} √((m+1)(m+2))] )
        let c = k.amplitudes();
        let mut acc = 0.0;
        for m in 0..n {
            acc += c[m].norm_sqr() * (2 * m + 1) as f64;
            if m + 2 < n {
                acc += 2.0 * (c[m].conj() * c[m + 2]).re * (((m + 1) * (m + 2)) as f64).sqrt();
            }
        }
        let var = 0.5 * acc;
        assert_abs_diff_eq!(var, (-2.0 * eta).exp() / 2.0, epsilon = 1e-8);
        assert!((var - 0.1665).abs() < 1e-3);
    }

    #[test]
    fn squeezed_vacuum_matches_matrix_exponential() {
        // build exp[½(η a² − η* a†²)]|0⟩ on a much larger space and truncate
        let eta = C64::new(-0.3, 0.4);
        let big = 80;
        let (a, adag) = ladder_operators(big).unwrap();
        let gen = a.mul(&a).unwrap().scale(eta * 0.5).sub(&adag.mul(&adag).unwrap().scale(eta.conj() * 0.5)).unwrap();
        let u = gen.to_dense().exp();
        let psi_big = u.column(0).into_owned();
        let n = 30;
        let k = prepare_state(&StateSpec::SqueezedVacuum { re: eta.re, im: eta.im }, n).unwrap();
        for m in 0..n {
            assert_abs_diff_eq!((k.amplitudes()[m] - psi_big[m]).norm(), 0.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn ground_product_places_oscillator_in_g_block() {
        let spec = StateSpec::GroundQubitProduct { osc: Box::new(StateSpec::Fock { n: 2 }) };
        let k = prepare_state(&spec, 6).unwrap();
        assert_eq!(k.tag(), SpaceTag::Composite { fock_cutoff: 6 });
        assert_eq!(k.amplitudes()[2], C64::new(1.0, 0.0));
    }

    #[test]
    fn thermal_state_mean_occupation() {
        let rho = thermal_state(0.5, 40).unwrap();
        let mean: f64 = (0..40).map(|n| n as f64 * rho.population(n)).sum();
        assert_abs_diff_eq!(mean, 0.5, epsilon = 1e-9);
        assert!(thermal_state(-1.0, 10).is_err());
    }
}
