//! Hamiltonians of the qubit–oscillator hybrid in its working frames, plus
//! the device numbers they are derived from.
//!
//! All frequencies and rates are angular (rad/s). Device inputs are SI.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{QsimError, Result};
use crate::fockspace::{CompositeOperators, Operator, SpaceTag};

pub const HBAR: f64 = 1.054_571_817e-34;
pub const K_B: f64 = 1.380_649e-23;
pub const MU_0: f64 = 1.256_637_062_12e-6;
pub const FLUX_QUANTUM: f64 = 2.067_833_848e-15;

/// Converts an ordinary frequency in Hz to rad/s.
pub fn hz_to_rad(f: f64) -> f64 {
    2.0 * PI * f
}

pub fn rad_to_hz(w: f64) -> f64 {
    w / (2.0 * PI)
}

/// Flux sensitivity quoted as GHz per mΦ₀, converted to rad/s per Φ₀.
pub fn ghz_per_milli_flux_quantum(r: f64) -> f64 {
    hz_to_rad(r * 1e9) * 1e3
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeviceParams {
    /// dc current through the nanotube (A).
    pub current: f64,
    /// Nanotube length (m).
    pub cnt_length: f64,
    /// SQUID width (m).
    pub squid_width: f64,
    /// SQUID length (m).
    pub squid_length: f64,
    /// Effective mass (kg).
    pub mass: f64,
    /// Mechanical angular frequency.
    pub omega_m: f64,
    /// Flux sensitivity of the gap in rad/s per Φ₀.
    pub flux_sensitivity: f64,
    /// Temperature (K).
    pub temperature: f64,
    pub qubit_decay: f64,
    pub mech_decay: f64,
    /// Qubit energy bias; the protocols require the degeneracy point.
    #[serde(default)]
    pub energy_bias: f64,
    #[serde(default)]
    pub persistent_current: Option<f64>,
    #[serde(default)]
    pub mutual_inductance: Option<f64>,
    #[serde(default)]
    pub dipole: Option<f64>,
}

impl DeviceParams {
    /// The nanotube device the protocols are designed around.
    pub fn reference_device() -> Self {
        Self {
            current: 50e-6,
            cnt_length: 5e-6,
            squid_width: 0.6e-6,
            squid_length: 3e-6,
            mass: 4e-21,
            omega_m: hz_to_rad(50e6),
            flux_sensitivity: ghz_per_milli_flux_quantum(0.7),
            temperature: 15e-3,
            qubit_decay: hz_to_rad(0.4e6),
            mech_decay: hz_to_rad(10.0),
            energy_bias: 0.0,
            persistent_current: None,
            mutual_inductance: None,
            dipole: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("cnt_length", self.cnt_length),
            ("squid_width", self.squid_width),
            ("squid_length", self.squid_length),
            ("mass", self.mass),
            ("omega_m", self.omega_m),
            ("flux_sensitivity", self.flux_sensitivity),
            ("qubit_decay", self.qubit_decay),
            ("mech_decay", self.mech_decay),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(QsimError::InvalidArgument(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.current >= 0.0) {
            return Err(QsimError::InvalidArgument("current must be non-negative".into()));
        }
        if !(self.temperature >= 0.0) {
            return Err(QsimError::InvalidArgument("temperature must be non-negative".into()));
        }
        if self.energy_bias != 0.0 {
            return Err(QsimError::InvalidArgument(
                "the qubit must be operated at its degeneracy point (energy_bias = 0)".into(),
            ));
        }
        Ok(())
    }
}

/// Coupling strength and Lamb–Dicke parameter.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Coupling {
    pub g: f64,
    pub lambda: f64,
}

/// `g = R μ₀ I L x_zpf / (π d)` with `x_zpf = √(ħ / 2 m ω_m)` and `R` per Wb.
pub fn derive_coupling(p: &DeviceParams) -> Result<Coupling> {
    p.validate()?;
    let x_zpf = (HBAR / (2.0 * p.mass * p.omega_m)).sqrt();
    let flux_per_displacement = MU_0 * p.current * p.cnt_length / (PI * p.squid_width);
    let g = p.flux_sensitivity / FLUX_QUANTUM * flux_per_displacement * x_zpf;
    Ok(Coupling {
        g,
        lambda: g / p.omega_m,
    })
}

/// Bose–Einstein occupation with ħ and k_B restored.
pub fn thermal_occupation(omega_m: f64, temperature: f64) -> Result<f64> {
    if !(temperature >= 0.0) {
        return Err(QsimError::InvalidArgument(format!("temperature {temperature} K")));
    }
    if temperature == 0.0 {
        return Ok(0.0);
    }
    let x = HBAR * omega_m / (K_B * temperature);
    Ok(1.0 / x.exp_m1())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriveRole {
    RedSideband,
    BlueSideband,
    Resonant,
    TwoPhononSideband,
}

/// A classical drive `2ε σ_x cos(ω t)` on the qubit.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriveSpec {
    pub strength: f64,
    pub frequency: f64,
    pub role: DriveRole,
}

/// `H(t) = H₀ + Σ_k O_k e^{−i ω_k t}`; the phased terms come in Hermitian pairs.
#[derive(Clone, Debug)]
pub struct SplitHamiltonian {
    pub static_part: Operator,
    pub phased: Vec<(Operator, f64)>,
}

impl SplitHamiltonian {
    pub fn constant(h: Operator) -> Self {
        Self {
            static_part: h,
            phased: Vec::new(),
        }
    }

    pub fn tag(&self) -> SpaceTag {
        self.static_part.tag()
    }

    pub fn at(&self, t: f64) -> Result<Operator> {
        let mut h = self.static_part.clone();
        for (op, w) in &self.phased {
            h = h.add(&op.scale(C64::from_polar(1.0, -w * t)))?;
        }
        Ok(h)
    }
}

/// Working frame an effective Hamiltonian is written in.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Frame {
    Lab,
    PolaronExpanded,
    SqueezeEffective,
    CoolingJc,
    CatEffective,
}

#[derive(Clone, Debug)]
pub struct EffectiveModel {
    pub hamiltonian: Operator,
    pub frame: Frame,
    pub derived_constants: BTreeMap<String, f64>,
    /// The Bogoliubov mode, present for the squeezing frame.
    pub bogoliubov: Option<Operator>,
}

impl EffectiveModel {
    pub fn constant(&self, key: &str) -> Option<f64> {
        self.derived_constants.get(key).copied()
    }
}

/// Lab-frame Hamiltonian `(ω_q/2)σ_z + ω_m a†a + g σ_z(a† + a) + Σ 2ε_i σ_x cos(ω_i t)`.
pub fn build_lab_hamiltonian(
    omega_q: f64,
    omega_m: f64,
    g: f64,
    drives: &[DriveSpec],
    fock_cutoff: usize,
) -> Result<SplitHamiltonian> {
    let ops = CompositeOperators::new(fock_cutoff)?;
    let x = ops.a.plus_hc();
    let h0 = ops
        .sigma_z
        .scale_re(omega_q / 2.0)
        .add(&ops.num.scale_re(omega_m))?
        .add(&ops.sigma_z.mul(&x)?.scale_re(g))?
        .into_hermitian()?;
    let mut phased = Vec::new();
    for d in drives {
        if !d.strength.is_finite() {
            return Err(QsimError::InvalidArgument("drive strength must be finite".into()));
        }
        // 2ε cos(ωt) = ε e^{−iωt} + ε e^{iωt}
        let term = ops.sigma_x.scale_re(d.strength);
        phased.push((term.clone(), d.frequency));
        phased.push((term, -d.frequency));
    }
    Ok(SplitHamiltonian {
        static_part: h0,
        phased,
    })
}

/// Parameters of the small-λ expansion of the polaron-frame Hamiltonian.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpansionParams {
    /// Qubit–sideband-drive detuning Δ = ω_q − ω₁.
    pub delta: f64,
    pub omega_m: f64,
    pub lambda: f64,
    pub eps1: f64,
    pub eps2: f64,
    /// Drive–drive detuning δ₁₂ = ω₂ − ω₁.
    pub delta12: f64,
}

/// `(Δ/2)σ_z + ω_m a†a + ε₁σ_x + 2ε₁[λσ₊(a†−a) + λ²σ₊(a†−a)² + H.c.] + [ε₂σ₊e^{−iδ₁₂t} + H.c.]`.
pub fn build_polaron_expanded(p: &ExpansionParams, fock_cutoff: usize) -> Result<SplitHamiltonian> {
    if !(p.lambda.abs() <= 0.2) {
        return Err(QsimError::InvalidArgument(format!(
            "|λ| = {} outside the expansion range (≤ 0.2)",
            p.lambda.abs()
        )));
    }
    if p.eps2.abs() > p.eps1.abs() && p.eps1 != 0.0 {
        log::warn!("ε₂ = {} is not small compared with ε₁ = {}", p.eps2, p.eps1);
    }
    let ops = CompositeOperators::new(fock_cutoff)?;
    let x = ops.adag.sub(&ops.a)?;
    let x2 = x.mul(&x)?;
    let sideband = ops
        .sigma_plus
        .mul(&x)?
        .scale_re(p.lambda)
        .add(&ops.sigma_plus.mul(&x2)?.scale_re(p.lambda * p.lambda))?
        .scale_re(2.0 * p.eps1);
    let h0 = ops
        .sigma_z
        .scale_re(p.delta / 2.0)
        .add(&ops.num.scale_re(p.omega_m))?
        .add(&ops.sigma_x.scale_re(p.eps1))?
        .add(&sideband.plus_hc())?
        .into_hermitian()?;
    let mut phased = Vec::new();
    if p.eps2 != 0.0 {
        phased.push((ops.sigma_plus.scale_re(p.eps2), p.delta12));
        phased.push((ops.sigma_minus.scale_re(p.eps2), -p.delta12));
    }
    Ok(SplitHamiltonian {
        static_part: h0,
        phased,
    })
}

/// Dressed qubit splitting and renormalized mechanical frequency.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShiftedFrequencies {
    pub delta_tilde: f64,
    pub omega_m_prime: f64,
}

/// `Δ̃ = √(Δ² + 4ε₁²)`, `ω_m′ = ω_m − 4ε₁²g²/(3ω_m³)`.
pub fn shifted_frequencies(delta: f64, eps1: f64, g: f64, omega_m: f64) -> Result<ShiftedFrequencies> {
    if !(delta > 0.0) {
        return Err(QsimError::InvalidArgument(format!("Δ must be positive, got {delta}")));
    }
    Ok(ShiftedFrequencies {
        delta_tilde: (delta * delta + 4.0 * eps1 * eps1).sqrt(),
        omega_m_prime: omega_m - 4.0 * eps1 * eps1 * g * g / (3.0 * omega_m.powi(3)),
    })
}

/// Detunings that put the expanded model on the two-phonon resonance
/// `Δ̃ = 2ω_m′ = δ₁₂`.
pub fn resonant_expansion(
    omega_m: f64,
    lambda: f64,
    eps1: f64,
    eps2: f64,
) -> Result<(ExpansionParams, ShiftedFrequencies)> {
    let g = lambda * omega_m;
    let omega_m_prime = omega_m - 4.0 * eps1 * eps1 * g * g / (3.0 * omega_m.powi(3));
    let delta_tilde = 2.0 * omega_m_prime;
    let d2 = delta_tilde * delta_tilde - 4.0 * eps1 * eps1;
    if d2 <= 0.0 {
        return Err(QsimError::InvalidArgument(
            "sideband drive too strong for the two-phonon resonance".into(),
        ));
    }
    let delta = d2.sqrt();
    let shifted = shifted_frequencies(delta, eps1, g, omega_m)?;
    Ok((
        ExpansionParams {
            delta,
            omega_m,
            lambda,
            eps1,
            eps2,
            delta12: shifted.delta_tilde,
        },
        shifted,
    ))
}

fn bogoliubov_coupling(
    ops: &CompositeOperators,
    rate: f64,
    eta: f64,
) -> Result<(Operator, Operator)> {
    let b = if eta == 0.0 {
        ops.a.clone()
    } else {
        ops.adag.scale_re(eta.sinh()).add(&ops.a.scale_re(eta.cosh()))?
    };
    let h = ops.sigma_plus.mul(&b)?.scale_re(rate).plus_hc().into_hermitian()?;
    Ok((h, b))
}

/// `H = Θσ₊B + H.c.` with `Θ = 2λ√(ε₋² − ε₊²)`, `B = a†sinhη + a coshη`, `tanhη = −ε₊/ε₋`.
pub fn build_squeeze_effective(
    lambda: f64,
    eps_minus: f64,
    eps_plus: f64,
    fock_cutoff: usize,
) -> Result<EffectiveModel> {
    if !(eps_minus > eps_plus.abs()) {
        return Err(QsimError::InvalidArgument(format!(
            "need ε₋ > |ε₊| for a stable dark state (ε₋ = {eps_minus}, ε₊ = {eps_plus})"
        )));
    }
    let ops = CompositeOperators::new(fock_cutoff)?;
    let theta = 2.0 * lambda * (eps_minus * eps_minus - eps_plus * eps_plus).sqrt();
    let eta = (-eps_plus / eps_minus).atanh();
    let (h, b) = bogoliubov_coupling(&ops, theta, eta)?;
    let mut derived = BTreeMap::new();
    derived.insert("theta".to_string(), theta);
    derived.insert("eta".to_string(), eta);
    Ok(EffectiveModel {
        hamiltonian: h,
        frame: Frame::SqueezeEffective,
        derived_constants: derived,
        bogoliubov: Some(b),
    })
}

/// Red-sideband Jaynes–Cummings model `g_c σ₊a + H.c.`, `g_c = 2λε₋`.
pub fn build_cooling_jc(lambda: f64, eps_minus: f64, fock_cutoff: usize) -> Result<EffectiveModel> {
    if !(eps_minus > 0.0) {
        return Err(QsimError::InvalidArgument("ε₋ must be positive".into()));
    }
    let ops = CompositeOperators::new(fock_cutoff)?;
    let g_c = 2.0 * lambda * eps_minus;
    let (h, _) = bogoliubov_coupling(&ops, g_c, 0.0)?;
    let mut derived = BTreeMap::new();
    derived.insert("g_c".to_string(), g_c);
    Ok(EffectiveModel {
        hamiltonian: h,
        frame: Frame::CoolingJc,
        derived_constants: derived,
        bogoliubov: None,
    })
}

/// Predicted stationary phonon number and cooperativity.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoolingLimit {
    pub n_bar: f64,
    pub cooperativity: f64,
}

/// `n̄ = n_th γ Γ / (2 g_c²)`, `C = g_c² / (γ Γ)`.
pub fn predicted_cooling_limit(n_th: f64, gamma: f64, big_gamma: f64, g_c: f64) -> CoolingLimit {
    if big_gamma < 5.0 * g_c {
        log::warn!(
            "Γ/g_c = {:.2}: adiabatic elimination of the qubit is marginal",
            big_gamma / g_c
        );
    }
    CoolingLimit {
        n_bar: n_th * gamma * big_gamma / (2.0 * g_c * g_c),
        cooperativity: g_c * g_c / (gamma * big_gamma),
    }
}

/// Two-phonon model `(Δ_d/2)a†a + [Θ_c σ₊a² + ε₂σ₊ + H.c.]`.
pub fn build_cat_effective(
    theta_c: f64,
    eps2: f64,
    detuning: f64,
    fock_cutoff: usize,
) -> Result<EffectiveModel> {
    if !(theta_c > 0.0) {
        return Err(QsimError::InvalidArgument(format!("Θ_c must be positive, got {theta_c}")));
    }
    if eps2 > 0.0 {
        return Err(QsimError::InvalidArgument(
            "ε₂ and Θ_c share a sign: the target amplitude would be imaginary".into(),
        ));
    }
    let ops = CompositeOperators::new(fock_cutoff)?;
    let a2 = ops.a.mul(&ops.a)?;
    let coupling = ops
        .sigma_plus
        .mul(&a2)?
        .scale_re(theta_c)
        .add(&ops.sigma_plus.scale_re(eps2))?;
    let h = ops
        .num
        .scale_re(detuning / 2.0)
        .add(&coupling.plus_hc())?
        .into_hermitian()?;
    let mut derived = BTreeMap::new();
    derived.insert("theta_c".to_string(), theta_c);
    derived.insert("eps2".to_string(), eps2);
    derived.insert("alpha_target".to_string(), (-eps2 / theta_c).sqrt());
    derived.insert("detuning".to_string(), detuning);
    Ok(EffectiveModel {
        hamiltonian: h,
        frame: Frame::CatEffective,
        derived_constants: derived,
        bogoliubov: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fockspace::{prepare_state, CatParity, Ket, StateSpec};
    use approx::assert_abs_diff_eq;

    fn mhz(x: f64) -> f64 {
        hz_to_rad(x * 1e6)
    }

    #[test]
    fn coupling_scaling_laws() {
        let p = DeviceParams::reference_device();
        let base = derive_coupling(&p).unwrap();
        assert_abs_diff_eq!(base.lambda, base.g / p.omega_m);

        let mut q = p.clone();
        q.current = 0.0;
        assert_eq!(derive_coupling(&q).unwrap().g, 0.0);

        let mut q = p.clone();
        q.flux_sensitivity *= 2.0;
        assert_abs_diff_eq!(derive_coupling(&q).unwrap().g, 2.0 * base.g, epsilon = 1e-9 * base.g);

        for (field, factor) in [("I", 3.0), ("L", 1.7)] {
            let mut q = p.clone();
            match field {
                "I" => q.current *= factor,
                _ => q.cnt_length *= factor,
            }
            let r = derive_coupling(&q).unwrap().g / base.g;
            assert_abs_diff_eq!(r, factor, epsilon = 1e-12);
        }
        let mut q = p.clone();
        q.mass *= 4.0;
        assert_abs_diff_eq!(derive_coupling(&q).unwrap().g / base.g, 0.5, epsilon = 1e-12);
    }

    #[test]
    fn device_validation() {
        let mut p = DeviceParams::reference_device();
        p.energy_bias = 1.0;
        assert!(p.validate().is_err());
        let mut p = DeviceParams::reference_device();
        p.mass = 0.0;
        assert!(derive_coupling(&p).is_err());
    }

    #[test]
    fn thermal_occupation_limits() {
        assert_eq!(thermal_occupation(mhz(50.0), 0.0).unwrap(), 0.0);
        let n = thermal_occupation(mhz(50.0), 15e-3).unwrap();
        assert!((n - 5.0).abs() <= 1.0, "n_th = {n}");
        // k_B T ≫ ħω: n_th → k_B T/ħω − 1/2 + …
        let w = mhz(50.0);
        let n = thermal_occupation(w, 1.0).unwrap();
        let classical = K_B / (HBAR * w);
        assert!((n / classical - 1.0).abs() < 0.02);
        assert!(thermal_occupation(w, -1.0).is_err());
    }

    #[test]
    fn lab_spectrum_uncoupled() {
        let (wq, wm) = (3.0, 1.0);
        let n = 8;
        let h = build_lab_hamiltonian(wq, wm, 0.0, &[], n).unwrap().at(0.0).unwrap();
        let mut ev: Vec<f64> = h.to_dense().symmetric_eigenvalues().iter().cloned().collect();
        ev.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut expect: Vec<f64> = (0..n)
            .flat_map(|k| [-wq / 2.0 + k as f64 * wm, wq / 2.0 + k as f64 * wm])
            .collect();
        expect.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for (a, b) in ev.iter().zip(&expect) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn lab_spectrum_polaron_shift() {
        // displaced-oscillator spectrum ±ω_q/2 + nω_m − g²/ω_m; low levels converge quickly
        let (wq, wm, g) = (2.5, 1.0, 0.3);
        let n = 40;
        let h = build_lab_hamiltonian(wq, wm, g, &[], n).unwrap().at(0.0).unwrap();
        let mut ev: Vec<f64> = h.to_dense().symmetric_eigenvalues().iter().cloned().collect();
        ev.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut expect: Vec<f64> = (0..6)
            .flat_map(|k| [-wq / 2.0 + k as f64 * wm - g * g / wm, wq / 2.0 + k as f64 * wm - g * g / wm])
            .collect();
        expect.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for (a, b) in ev.iter().zip(expect.iter()).take(6) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-9);
        }
    }

    #[test]
    fn lab_hamiltonian_drive_terms() {
        let n = 5;
        let w = 2.0;
        let drive = DriveSpec { strength: 0.7, frequency: w, role: DriveRole::Resonant };
        let h = build_lab_hamiltonian(3.0, 1.0, 0.2, &[drive], n).unwrap();
        // cos(ωt) = 0 at ωt = π/2
        let hq = h.at(std::f64::consts::FRAC_PI_2 / w).unwrap();
        assert_abs_diff_eq!(hq.element(0, 0).re, -1.5, epsilon = 1e-12);
        let h0 = h.at(0.0).unwrap();
        assert_abs_diff_eq!(h0.element(n, 0).re, 1.4, epsilon = 1e-12);
        for t in [0.0, 0.37, 5.1] {
            assert!(h.at(t).unwrap().hermiticity_error() < 1e-12);
        }
    }

    #[test]
    fn expanded_model_collapses_without_coupling() {
        let n = 6;
        let p = ExpansionParams { delta: 4.0, omega_m: 1.5, lambda: 0.0, eps1: 0.3, eps2: 0.0, delta12: 1.0 };
        let h = build_polaron_expanded(&p, n).unwrap();
        assert!(h.phased.is_empty());
        let ops = CompositeOperators::new(n).unwrap();
        let expect = ops
            .sigma_z
            .scale_re(2.0)
            .add(&ops.num.scale_re(1.5))
            .unwrap()
            .add(&ops.sigma_x.scale_re(0.3))
            .unwrap();
        assert!(h.static_part.data().max_abs_diff(expect.data()) < 1e-15);
    }

    #[test]
    fn expanded_model_quadratic_element_and_hermiticity() {
        let n = 8;
        let p = ExpansionParams { delta: 4.0, omega_m: 1.5, lambda: 0.1, eps1: 0.3, eps2: -0.02, delta12: 3.0 };
        let h = build_polaron_expanded(&p, n).unwrap();
        let h0 = h.at(0.0).unwrap();
        // ⟨e,0|H|g,2⟩: only (a†−a)² = … + a² contributes, a²|2⟩ = √2|0⟩
        let v = h0.element(n, 2);
        assert_abs_diff_eq!(v.re, 2.0 * 0.3 * 0.01 * 2f64.sqrt(), epsilon = 1e-14);
        for t in [0.0, 0.123, 7.7] {
            assert!(h.at(t).unwrap().hermiticity_error() < 1e-12);
        }
        let bad = ExpansionParams { lambda: 0.3, ..p };
        assert!(build_polaron_expanded(&bad, n).is_err());
    }

    #[test]
    fn shifted_frequency_examples() {
        let s = shifted_frequencies(mhz(100.0), 0.0, mhz(3.0), mhz(50.0)).unwrap();
        assert_eq!(s.delta_tilde, mhz(100.0));
        assert_eq!(s.omega_m_prime, mhz(50.0));
        let s = shifted_frequencies(mhz(100.0), mhz(5.0), 0.0, mhz(50.0)).unwrap();
        assert_abs_diff_eq!(rad_to_hz(s.delta_tilde) / 1e6, 100.498_756_211_208_9, epsilon = 1e-9);
        assert_eq!(s.omega_m_prime, mhz(50.0));
        assert!(shifted_frequencies(-1.0, 0.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn resonant_expansion_satisfies_condition() {
        let (p, s) = resonant_expansion(mhz(50.0), 0.06, mhz(5.0), -hz_to_rad(72e3)).unwrap();
        assert_abs_diff_eq!(s.delta_tilde, 2.0 * s.omega_m_prime, epsilon = 1e-6);
        assert_abs_diff_eq!(p.delta12, s.delta_tilde);
    }

    #[test]
    fn squeeze_reduces_to_cooling_exactly() {
        let s = build_squeeze_effective(0.07, mhz(2.5), 0.0, 12).unwrap();
        let c = build_cooling_jc(0.07, mhz(2.5), 12).unwrap();
        assert_eq!(s.hamiltonian, c.hamiltonian);
        assert_eq!(s.constant("eta"), Some(0.0));
        assert_abs_diff_eq!(c.constant("g_c").unwrap(), mhz(0.35), epsilon = 1e-6);
    }

    #[test]
    fn squeeze_rejects_unstable_ratio() {
        assert!(build_squeeze_effective(0.07, 1.0, 1.0, 10).is_err());
        assert!(build_squeeze_effective(0.07, 1.0, -1.5, 10).is_err());
    }

    #[test]
    fn bogoliubov_commutator_and_dark_state() {
        let n = 40;
        let m = build_squeeze_effective(0.07, 1.0, 0.5, n).unwrap();
        let eta = m.constant("eta").unwrap();
        assert_abs_diff_eq!(eta, -(0.5f64).atanh(), epsilon = 1e-15);
        assert_abs_diff_eq!(eta, -0.5493, epsilon = 1e-4);

        let b = m.bogoliubov.as_ref().unwrap();
        let comm = b.commutator(&b.adjoint()).unwrap().to_dense();
        // restricted to the qubit-g block, bottom N−2 levels
        for i in 0..n - 2 {
            for j in 0..n - 2 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert_abs_diff_eq!(comm[(i, j)].re, expect, epsilon = 1e-10);
                assert_abs_diff_eq!(comm[(i, j)].im, 0.0, epsilon = 1e-10);
            }
        }

        let psi = prepare_state(
            &StateSpec::GroundQubitProduct { osc: Box::new(StateSpec::SqueezedVacuum { re: eta, im: 0.0 }) },
            n,
        )
        .unwrap();
        let out = m.hamiltonian.apply(&psi).unwrap();
        assert!(out.norm() < 1e-6, "‖H|Ψ_s⟩‖ = {:e}", out.norm());
    }

    #[test]
    fn cooling_jc_examples() {
        let n = 10;
        let m = build_cooling_jc(0.07, mhz(2.5), n).unwrap();
        let gc = m.constant("g_c").unwrap();
        let tag = m.hamiltonian.tag();
        let g0 = Ket::basis(tag, 0).unwrap();
        assert_eq!(m.hamiltonian.apply(&g0).unwrap().norm(), 0.0);
        assert_abs_diff_eq!(m.hamiltonian.element(n, 1).re, gc, epsilon = 1e-9);
    }

    #[test]
    fn cooling_limit_formula() {
        let l = predicted_cooling_limit(5.0, hz_to_rad(10.0), mhz(0.4), mhz(0.35));
        assert_abs_diff_eq!(l.n_bar, 8.163e-5, epsilon = 1e-7);
        assert_eq!(predicted_cooling_limit(5.0, 0.0, 1.0, 1.0).n_bar, 0.0);
        let a = predicted_cooling_limit(2.0, 1.0, 3.0, 1.0).n_bar;
        let b = predicted_cooling_limit(4.0, 1.0, 3.0, 1.0).n_bar;
        assert_abs_diff_eq!(b, 2.0 * a);
    }

    #[test]
    fn cat_model_target_and_dark_state() {
        let n = 30;
        let m = build_cat_effective(hz_to_rad(36e3), -hz_to_rad(72e3), 0.0, n).unwrap();
        let alpha = m.constant("alpha_target").unwrap();
        assert_abs_diff_eq!(alpha, 2f64.sqrt(), epsilon = 1e-12);

        let cat = prepare_state(&StateSpec::Cat { re: alpha, im: 0.0, parity: CatParity::Even }, n).unwrap();
        let (a, _) = crate::fockspace::ladder_operators(n).unwrap();
        let a2 = a.mul(&a).unwrap().scale_re(hz_to_rad(36e3));
        let v = a2.apply(&cat).unwrap() + cat.amplitudes() * C64::new(-hz_to_rad(72e3), 0.0);
        assert!(v.norm() < 1e-6 * hz_to_rad(36e3), "residual {:e}", v.norm());

        // dark state of the full composite model as well
        let dark = cat.with_qubit(0).unwrap();
        assert!(m.hamiltonian.apply(&dark).unwrap().norm() < 1e-6 * hz_to_rad(36e3));

        assert!(build_cat_effective(1.0, 0.5, 0.0, n).is_err());
        assert!(build_cat_effective(-1.0, -0.5, 0.0, n).is_err());
    }

    #[test]
    fn cat_model_vacuum_and_single_phonon_dark_without_drive() {
        let n = 10;
        let m = build_cat_effective(1.0, 0.0, 0.0, n).unwrap();
        let tag = m.hamiltonian.tag();
        for k in [0, 1] {
            let s = Ket::basis(tag, k).unwrap();
            assert_eq!(m.hamiltonian.apply(&s).unwrap().norm(), 0.0);
        }
        assert!(m.hamiltonian.to_dense() == m.hamiltonian.to_dense().adjoint());
    }
}
