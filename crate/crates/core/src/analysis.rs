//! Measures on simulated states. Most act on the reduced oscillator state;
//! the reflection coefficient reads the qubit coherence.

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde::Serialize;
use std::f64::consts::{FRAC_1_SQRT_2, PI};

use crate::error::{QsimError, Result};
use crate::fockspace::{expectation, ladder_operators, CompositeOperators, DensityMatrix, Ket, SpaceTag};

/// Integration-noise floor below which the negativity volume is reported as 0.
pub const DELTA_N_NOISE_FLOOR: f64 = 1e-4;
/// Largest mass the Wigner function may carry outside the grid.
pub const GRID_TAIL_TOL: f64 = 1e-4;
/// Agreement required between the recursion and the displaced-parity sum.
pub const WIGNER_CROSSCHECK_TOL: f64 = 1e-6;
/// `|r|` above which a reflection point is flagged as suspicious.
pub const REFLECTION_SANITY_CAP: f64 = 2.0;

fn require_oscillator(tag: SpaceTag, what: &str) -> Result<usize> {
    match tag {
        SpaceTag::Oscillator { fock_cutoff } => Ok(fock_cutoff),
        other => Err(QsimError::SpaceMismatch(format!("{what} needs an oscillator state, got {other:?}"))),
    }
}

/// `⟨ψ|ρ|ψ⟩`.
pub fn fidelity(rho: &DensityMatrix, psi: &Ket) -> Result<f64> {
    rho.tag().ensure_same(&psi.tag(), "fidelity")?;
    let v = psi.amplitudes();
    let f = (v.adjoint() * rho.data() * v)[(0, 0)].re;
    Ok(f.clamp(0.0, 1.0 + 1e-9))
}

/// Uhlmann fidelity `(Tr √(√ρ σ √ρ))²` between two mixed states.
pub fn state_fidelity(rho: &DensityMatrix, sigma: &DensityMatrix) -> Result<f64> {
    rho.tag().ensure_same(&sigma.tag(), "state fidelity")?;
    let sr = psd_sqrt(rho.data());
    let inner = &sr * sigma.data() * &sr;
    let eig = hermitian_part(&inner).symmetric_eigenvalues();
    // roundoff eigenvalues of rank-deficient states would otherwise add √ε each
    let floor = 1e-13 * eig.iter().cloned().fold(0.0, f64::max);
    let s: f64 = eig.iter().filter(|&&x| x > floor).map(|&x| x.sqrt()).sum();
    Ok((s * s).clamp(0.0, 1.0 + 1e-9))
}

/// `½ Tr|ρ − σ|`.
pub fn trace_distance(rho: &DensityMatrix, sigma: &DensityMatrix) -> Result<f64> {
    rho.tag().ensure_same(&sigma.tag(), "trace distance")?;
    let diff = hermitian_part(&(rho.data() - sigma.data()));
    Ok(0.5 * diff.symmetric_eigenvalues().iter().map(|x| x.abs()).sum::<f64>())
}

fn hermitian_part(m: &DMatrix<C64>) -> DMatrix<C64> {
    (m + m.adjoint()) * C64::new(0.5, 0.0)
}

fn psd_sqrt(m: &DMatrix<C64>) -> DMatrix<C64> {
    let eig = hermitian_part(m).symmetric_eigen();
    let roots = eig.eigenvalues.map(|x| C64::new(x.max(0.0).sqrt(), 0.0));
    &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.adjoint()
}

/// `P(n) = ⟨n|ρ|n⟩`.
pub fn phonon_distribution(rho: &DensityMatrix) -> Result<Vec<f64>> {
    let n = require_oscillator(rho.tag(), "phonon distribution")?;
    Ok((0..n).map(|k| rho.population(k)).collect())
}

/// Total population of odd Fock levels.
pub fn odd_population(rho: &DensityMatrix) -> Result<f64> {
    Ok(phonon_distribution(rho)?.iter().skip(1).step_by(2).sum())
}

/// Var(X_θ) with `X_θ = (a e^{−iθ} + a† e^{iθ})/√2`.
pub fn quadrature_variance(rho: &DensityMatrix, angle: f64) -> Result<f64> {
    let n = require_oscillator(rho.tag(), "quadrature variance")?;
    let (a, adag) = ladder_operators(n)?;
    let x = a
        .scale(C64::from_polar(FRAC_1_SQRT_2, -angle))
        .add(&adag.scale(C64::from_polar(FRAC_1_SQRT_2, angle)))?;
    let mean = expectation(&x, rho)?.re;
    let sq = expectation(&x.mul(&x)?, rho)?.re;
    Ok(sq - mean * mean)
}

/// Extremes of the quadrature variance over all angles.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct QuadratureExtrema {
    pub min_variance: f64,
    pub min_angle: f64,
    pub max_variance: f64,
    pub max_angle: f64,
}

/// Uses `Var(X_θ) = ½(2⟨Δa†Δa⟩ + 1) + Re(⟨Δa²⟩ e^{−2iθ})`.
pub fn quadrature_extrema(rho: &DensityMatrix) -> Result<QuadratureExtrema> {
    let n = require_oscillator(rho.tag(), "quadrature extrema")?;
    let (a, adag) = ladder_operators(n)?;
    let m1 = expectation(&a, rho)?;
    let m2 = expectation(&a.mul(&a)?, rho)? - m1 * m1;
    let nn = expectation(&adag.mul(&a)?, rho)?.re - m1.norm_sqr();
    let centre = nn + 0.5;
    let amp = m2.norm();
    let phase = m2.arg();
    // Re(|m2| e^{i(φ−2θ)}) is −|m2| at θ = (φ − π)/2
    let min_angle = (phase - PI) / 2.0;
    Ok(QuadratureExtrema {
        min_variance: centre - amp,
        min_angle,
        max_variance: centre + amp,
        max_angle: min_angle + PI / 2.0,
    })
}

/// Square grid of phase-space points `α = x + iy` with optional samples.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PhaseSpaceGrid {
    pub half_width: f64,
    pub step: f64,
    /// `values[(i, j)]` belongs to `re = axis[i]`, `im = axis[j]`.
    #[serde(skip)]
    pub values: DMatrix<f64>,
}

impl PhaseSpaceGrid {
    pub const DEFAULT_HALF_WIDTH: f64 = 4.5;
    pub const DEFAULT_STEP: f64 = 0.05;

    pub fn new(half_width: f64, step: f64) -> Result<Self> {
        if !(step > 0.0) || !(half_width > 0.0) || !step.is_finite() || !half_width.is_finite() {
            return Err(QsimError::InvalidArgument(format!(
                "grid half-width {half_width} and step {step} must be positive"
            )));
        }
        let points = Self::count(half_width, step);
        Ok(Self {
            half_width,
            step,
            values: DMatrix::zeros(points, points),
        })
    }

    /// Default grid widened to `|α| ≤ 2 α_target + 2.5` when that is larger.
    pub fn covering(alpha_target: f64, step: Option<f64>) -> Result<Self> {
        let hw = Self::DEFAULT_HALF_WIDTH.max(2.0 * alpha_target.abs() + 2.5);
        Self::new(hw, step.unwrap_or(Self::DEFAULT_STEP))
    }

    fn count(half_width: f64, step: f64) -> usize {
        2 * (half_width / step + 1e-9).floor() as usize + 1
    }

    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn axis(&self) -> Vec<f64> {
        let m = (self.len() / 2) as f64;
        (0..self.len()).map(|i| (i as f64 - m) * self.step).collect()
    }

    /// 2-D trapezoid rule of `f(W)` over the grid.
    pub fn integrate<F: Fn(f64) -> f64>(&self, f: F) -> f64 {
        let n = self.len();
        let mut acc = 0.0;
        for i in 0..n {
            let wi = if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
            for j in 0..n {
                let wj = if j == 0 || j == n - 1 { 0.5 } else { 1.0 };
                acc += wi * wj * f(self.values[(i, j)]);
            }
        }
        acc * self.step * self.step
    }

    /// `(re, im, W)` rows in row-major order over `re` then `im`.
    pub fn rows(&self) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        let axis = self.axis();
        let n = self.len();
        (0..n).flat_map(move |i| {
            let x = axis[i];
            let axis = axis.clone();
            (0..n).map(move |j| (x, axis[j], self.values[(i, j)]))
        })
    }
}

/// Row-major copy of `ρ` plus the square-root tables of the recursion.
struct WignerKernel {
    n: usize,
    rows: Vec<C64>,
    sqrt: Vec<f64>,
    inv_sqrt: Vec<f64>,
}

impl WignerKernel {
    fn new(rho: &DMatrix<C64>) -> Self {
        let n = rho.nrows();
        let rows = (0..n * n).map(|i| rho[(i / n, i % n)]).collect();
        let sqrt: Vec<f64> = (0..n).map(|k| (k as f64).sqrt()).collect();
        let inv_sqrt = sqrt.iter().map(|s| if *s > 0.0 { 1.0 / s } else { 0.0 }).collect();
        Self { n, rows, sqrt, inv_sqrt }
    }

    /// Wigner function at one point via the Laguerre recursion over Fock
    /// matrix elements, normalized so that `W(0) = 2/π` for vacuum.
    fn eval(&self, alpha: C64, buf: &mut Vec<C64>) -> f64 {
        let n = self.n;
        buf.clear();
        buf.resize(n, C64::new(0.0, 0.0));
        let a2 = alpha * 2.0;
        buf[0] = C64::new((-2.0 * alpha.norm_sqr()).exp(), 0.0);
        let mut diag = self.rows[0].re * buf[0].re;
        let mut off = 0.0;
        for k in 1..n {
            buf[k] = a2 * buf[k - 1] * self.inv_sqrt[k];
            off += (self.rows[k] * buf[k]).re;
        }
        let a2c = a2.conj();
        for m in 1..n {
            let sm = self.sqrt[m];
            let row = &self.rows[m * n..(m + 1) * n];
            let mut temp = buf[m];
            buf[m] = (a2c * temp) * self.inv_sqrt[m] - buf[m - 1];
            diag += (row[m] * buf[m]).re;
            for k in m + 1..n {
                let next = (a2 * buf[k - 1] - temp * sm) * self.inv_sqrt[k];
                temp = buf[k];
                buf[k] = next;
                off += (row[k] * next).re;
            }
        }
        (diag + 2.0 * off) * 2.0 / PI
    }
}

/// Samples `W(α)` of an oscillator state on `grid` and checks that the
/// grid holds all but `GRID_TAIL_TOL` of the mass.
pub fn wigner(rho: &DensityMatrix, grid: &PhaseSpaceGrid) -> Result<PhaseSpaceGrid> {
    require_oscillator(rho.tag(), "Wigner function")?;
    let axis = grid.axis();
    let n = axis.len();
    // levels with vanishing population carry vanishing coherences as well
    let full = rho.dim();
    let support = (0..full).rev().find(|&k| rho.population(k) > 1e-20).map_or(1, |k| k + 1);
    let kernel = WignerKernel::new(&rho.data().view((0, 0), (support, support)).into_owned());
    let columns: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map_init(Vec::new, |buf, i| {
            (0..n)
                .map(|j| kernel.eval(C64::new(axis[i], axis[j]), buf))
                .collect()
        })
        .collect();
    let mut out = grid.clone();
    for (i, col) in columns.iter().enumerate() {
        for (j, v) in col.iter().enumerate() {
            out.values[(i, j)] = *v;
        }
    }
    let mass = out.integrate(|w| w);
    let tail = (1.0 - mass).abs();
    if tail > GRID_TAIL_TOL {
        return Err(QsimError::InvalidArgument(format!(
            "grid of half-width {} misses Wigner mass {tail:.3e}",
            grid.half_width
        )));
    }
    Ok(out)
}

/// `(2/π) Σ_n (−1)ⁿ ⟨n|D†(α) ρ D(α)|n⟩` with `D` from a matrix exponential
/// on a space enlarged by `extra_levels`.
pub fn wigner_displaced_parity(rho: &DensityMatrix, alpha: C64, extra_levels: usize) -> Result<f64> {
    let n = require_oscillator(rho.tag(), "displaced parity")?;
    let big = n + extra_levels;
    let (a, adag) = ladder_operators(big)?;
    let gen = adag.scale(alpha).sub(&a.scale(alpha.conj()))?.to_dense();
    let d = gen.exp();
    // only the first n rows of D touch ρ
    let dn = d.rows(0, n).into_owned();
    let m = dn.adjoint() * rho.data() * &dn;
    let w: f64 = (0..big).map(|k| if k % 2 == 0 { m[(k, k)].re } else { -m[(k, k)].re }).sum();
    Ok(2.0 / PI * w)
}

/// Wigner map plus a pointwise cross-check against the displaced-parity
/// sum on a coarse subgrid with `|α| ≤ 3`.
pub fn wigner_validated(rho: &DensityMatrix, grid: &PhaseSpaceGrid) -> Result<PhaseSpaceGrid> {
    let w = wigner(rho, grid)?;
    let axis = w.axis();
    let n = axis.len();
    let stride = (n / 6).max(1);
    let mut worst: f64 = 0.0;
    for i in (0..n).step_by(stride) {
        for j in (0..n).step_by(stride) {
            let alpha = C64::new(axis[i], axis[j]);
            if alpha.norm() > 3.0 {
                continue;
            }
            let reference = wigner_displaced_parity(rho, alpha, 60)?;
            worst = worst.max((reference - w.values[(i, j)]).abs());
        }
    }
    if worst > WIGNER_CROSSCHECK_TOL {
        return Err(QsimError::ToleranceNotMet(format!(
            "Wigner recursion disagrees with displaced parity by {worst:.3e}"
        )));
    }
    Ok(w)
}

/// `δ_N = ∫|W| d²α − 1`, zero below the integration-noise floor.
pub fn nonclassical_volume(rho: &DensityMatrix, grid: &PhaseSpaceGrid) -> Result<f64> {
    Ok(negativity_of(&wigner(rho, grid)?))
}

/// `δ_N` of an already sampled Wigner map.
pub fn negativity_of(w: &PhaseSpaceGrid) -> f64 {
    let d = w.integrate(f64::abs) - 1.0;
    if d.abs() < DELTA_N_NOISE_FLOOR {
        0.0
    } else {
        d
    }
}

/// Connected regions (4-neighbour) where `W < threshold`, with their minima.
pub fn negative_regions(w: &PhaseSpaceGrid, threshold: f64) -> Vec<f64> {
    let n = w.len();
    let mut seen = vec![false; n * n];
    let mut minima = Vec::new();
    for start in 0..n * n {
        if seen[start] || w.values[(start / n, start % n)] >= threshold {
            continue;
        }
        let mut stack = vec![start];
        seen[start] = true;
        let mut lo = f64::INFINITY;
        while let Some(p) = stack.pop() {
            let (i, j) = (p / n, p % n);
            lo = lo.min(w.values[(i, j)]);
            let nbrs = [
                (i.wrapping_sub(1), j),
                (i + 1, j),
                (i, j.wrapping_sub(1)),
                (i, j + 1),
            ];
            for (a, b) in nbrs {
                if a < n && b < n {
                    let q = a * n + b;
                    if !seen[q] && w.values[(a, b)] < threshold {
                        seen[q] = true;
                        stack.push(q);
                    }
                }
            }
        }
        minima.push(lo);
    }
    minima
}

/// `r = iΓ Tr(σ₋ρ)/(2ε₂)`; `r = 1` for a weakly driven bare qubit.
pub fn reflection_coefficient(rho: &DensityMatrix, big_gamma: f64, eps2: f64) -> Result<C64> {
    if eps2 == 0.0 || !eps2.is_finite() {
        return Err(QsimError::InvalidArgument("reflection undefined for ε₂ = 0".into()));
    }
    let n = match rho.tag() {
        SpaceTag::Composite { fock_cutoff } => fock_cutoff,
        other => {
            return Err(QsimError::SpaceMismatch(format!(
                "reflection needs the composite space, got {other:?}"
            )))
        }
    };
    let ops = CompositeOperators::new(n)?;
    let coherence = expectation(&ops.sigma_minus, rho)?;
    Ok(C64::new(0.0, big_gamma) * coherence / (2.0 * eps2))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ReflectionPoint {
    pub detuning: f64,
    pub r: C64,
    pub f_max: f64,
    /// Set when `|r|` exceeds the sanity cap.
    pub flagged: bool,
}

impl ReflectionPoint {
    pub fn new(detuning: f64, r: C64, f_max: f64) -> Self {
        Self {
            detuning,
            r,
            f_max,
            flagged: r.norm() > REFLECTION_SANITY_CAP,
        }
    }
}

/// First maximum of a sampled series as `(value, time)`.
pub fn peak(times: &[f64], values: &[f64]) -> Option<(f64, f64)> {
    times
        .iter()
        .zip(values)
        .fold(None, |best: Option<(f64, f64)>, (&t, &v)| match best {
            Some((bv, _)) if bv >= v => best,
            _ => Some((v, t)),
        })
}
