//! JSON scenario configuration. Frequencies and rates arrive in Hz under
//! `*_over_2pi_hz` keys and are converted to rad/s on resolution.

use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::{QsimError, Result};
use crate::model::{self, hz_to_rad, DeviceParams};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    Cool,
    Squeeze,
    Cat,
    Detect,
    SweepAmplitude,
    SweepDetuning,
    SweepGamma,
    ValidateExpansion,
}

impl Protocol {
    pub fn name(self) -> &'static str {
        match self {
            Protocol::Cool => "cool",
            Protocol::Squeeze => "squeeze",
            Protocol::Cat => "cat",
            Protocol::Detect => "detect",
            Protocol::SweepAmplitude => "sweep_amplitude",
            Protocol::SweepDetuning => "sweep_detuning",
            Protocol::SweepGamma => "sweep_gamma",
            Protocol::ValidateExpansion => "validate_expansion",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_string()))
            .map_err(|_| QsimError::Config(format!("unknown protocol `{s}`")))
    }
}

/// Which Hamiltonian drives the cat-family protocols.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CatModel {
    #[default]
    Effective,
    /// Time-dependent second-order polaron expansion; needs `expansion`.
    Expanded,
}

/// Device description with frequencies in Hz.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceConfig {
    pub current_a: f64,
    pub cnt_length_m: f64,
    pub squid_width_m: f64,
    pub squid_length_m: f64,
    pub mass_kg: f64,
    pub omega_m_over_2pi_hz: f64,
    pub flux_sensitivity_ghz_per_milli_flux_quantum: f64,
    pub temperature_k: f64,
    pub qubit_decay_over_2pi_hz: f64,
    pub mech_decay_over_2pi_hz: f64,
    #[serde(default)]
    pub energy_bias_over_2pi_hz: f64,
}

impl DeviceConfig {
    pub fn to_params(&self) -> DeviceParams {
        DeviceParams {
            current: self.current_a,
            cnt_length: self.cnt_length_m,
            squid_width: self.squid_width_m,
            squid_length: self.squid_length_m,
            mass: self.mass_kg,
            omega_m: hz_to_rad(self.omega_m_over_2pi_hz),
            flux_sensitivity: model::ghz_per_milli_flux_quantum(self.flux_sensitivity_ghz_per_milli_flux_quantum),
            temperature: self.temperature_k,
            qubit_decay: hz_to_rad(self.qubit_decay_over_2pi_hz),
            mech_decay: hz_to_rad(self.mech_decay_over_2pi_hz),
            energy_bias: hz_to_rad(self.energy_bias_over_2pi_hz),
            persistent_current: None,
            mutual_inductance: None,
            dipole: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CouplingConfig {
    #[serde(default)]
    pub g_over_2pi_hz: Option<f64>,
    #[serde(default)]
    pub lambda: Option<f64>,
    #[serde(default)]
    pub omega_m_over_2pi_hz: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DrivesConfig {
    #[serde(default)]
    pub eps_minus_over_2pi_hz: Option<f64>,
    #[serde(default)]
    pub eps_plus_over_2pi_hz: Option<f64>,
    #[serde(default)]
    pub eps1_over_2pi_hz: Option<f64>,
    #[serde(default)]
    pub eps2_over_2pi_hz: Option<f64>,
    /// Two-phonon coupling; derived as `2 λ² ε₁` when absent.
    #[serde(default)]
    pub theta_c_over_2pi_hz: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RatesConfig {
    #[serde(default)]
    pub qubit_decay_over_2pi_hz: Option<f64>,
    #[serde(default)]
    pub mech_decay_over_2pi_hz: Option<f64>,
    #[serde(default)]
    pub n_th: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    #[serde(default)]
    pub half_width: Option<f64>,
    #[serde(default)]
    pub step: Option<f64>,
}

/// Points of a one-parameter sweep, in Hz.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub values_over_2pi_hz: Vec<f64>,
}

/// Parameters of the expanded polaron-frame model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExpansionConfig {
    pub omega_m_over_2pi_hz: f64,
    pub lambda: f64,
    pub eps1_over_2pi_hz: f64,
    /// Offset of δ₁₂ from resonance for the comparison run.
    #[serde(default = "default_mis_set")]
    pub delta12_offset_over_2pi_hz: f64,
}

fn default_mis_set() -> f64 {
    1e6
}

fn default_tolerance() -> f64 {
    1e-8
}

fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub protocol: Protocol,
    pub fock_cutoff: usize,
    #[serde(default)]
    pub device: Option<DeviceConfig>,
    #[serde(default)]
    pub coupling: Option<CouplingConfig>,
    #[serde(default)]
    pub drives: DrivesConfig,
    #[serde(default)]
    pub rates: RatesConfig,
    #[serde(default)]
    pub detuning_over_2pi_hz: f64,
    #[serde(default)]
    pub duration_s: Option<f64>,
    #[serde(default)]
    pub sample_step_s: Option<f64>,
    /// Relative tolerance of the integrator.
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    #[serde(default)]
    pub grid: Option<GridConfig>,
    #[serde(default)]
    pub sweep: Option<SweepConfig>,
    #[serde(default)]
    pub cat_model: CatModel,
    #[serde(default)]
    pub expansion: Option<ExpansionConfig>,
    /// Window for the negativity-lifetime run of the cat protocol.
    #[serde(default)]
    pub lifetime_s: Option<f64>,
    #[serde(default = "default_true")]
    pub convergence_gate: bool,
    #[serde(default)]
    pub output: Option<String>,
}

/// Rates in rad/s.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Rates {
    pub qubit_decay: f64,
    pub mech_decay: f64,
    pub n_th: f64,
}

fn finite_nonneg(name: &str, v: f64) -> Result<f64> {
    if !v.is_finite() || v < 0.0 {
        return Err(QsimError::Config(format!("{name} must be finite and ≥ 0, got {v}")));
    }
    Ok(v)
}

fn need<T: Copy>(v: Option<T>, name: &str, protocol: Protocol) -> Result<T> {
    v.ok_or_else(|| QsimError::Config(format!("protocol `{}` needs `{name}`", protocol.name())))
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ScenarioConfig =
            serde_json::from_str(text).map_err(|e| QsimError::Config(format!("parsing configuration: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| QsimError::Config(format!("reading {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Structural checks; protocol-specific quantities are checked again when
    /// resolved.
    pub fn validate(&self) -> Result<()> {
        if self.fock_cutoff < 2 {
            return Err(QsimError::Config("fock_cutoff must be ≥ 2".into()));
        }
        if !(self.tolerance > 0.0 && self.tolerance < 1e-2) {
            return Err(QsimError::Config(format!("tolerance {} out of range", self.tolerance)));
        }
        for (name, v) in [("duration_s", self.duration_s), ("sample_step_s", self.sample_step_s), ("lifetime_s", self.lifetime_s)] {
            if let Some(x) = v {
                if !(x > 0.0) || !x.is_finite() {
                    return Err(QsimError::Config(format!("{name} must be positive")));
                }
            }
        }
        if let (Some(d), Some(s)) = (self.duration_s, self.sample_step_s) {
            if s > d {
                return Err(QsimError::Config("sample_step_s exceeds duration_s".into()));
            }
        }
        if let Some(dev) = &self.device {
            dev.to_params().validate().map_err(|e| QsimError::Config(e.to_string()))?;
        }
        let p = self.protocol;
        match p {
            Protocol::Cool => {
                need(self.drives.eps_minus_over_2pi_hz, "drives.eps_minus_over_2pi_hz", p)?;
                if self.drives.eps_plus_over_2pi_hz.unwrap_or(0.0) != 0.0 {
                    return Err(QsimError::Config("cooling runs with ε₊ absent or zero".into()));
                }
            }
            Protocol::Squeeze => {
                need(self.drives.eps_minus_over_2pi_hz, "drives.eps_minus_over_2pi_hz", p)?;
                need(self.drives.eps_plus_over_2pi_hz, "drives.eps_plus_over_2pi_hz", p)?;
            }
            Protocol::Cat | Protocol::Detect | Protocol::SweepDetuning | Protocol::SweepGamma | Protocol::SweepAmplitude => {
                if p != Protocol::SweepAmplitude {
                    need(self.drives.eps2_over_2pi_hz, "drives.eps2_over_2pi_hz", p)?;
                }
                if self.cat_model == CatModel::Expanded && self.expansion.is_none() {
                    return Err(QsimError::Config("cat_model `expanded` needs an `expansion` block".into()));
                }
                if matches!(p, Protocol::SweepDetuning | Protocol::SweepGamma | Protocol::SweepAmplitude) {
                    let s = self.sweep.as_ref().ok_or_else(|| {
                        QsimError::Config(format!("protocol `{}` needs `sweep.values_over_2pi_hz`", p.name()))
                    })?;
                    if s.values_over_2pi_hz.is_empty() || s.values_over_2pi_hz.iter().any(|v| !v.is_finite()) {
                        return Err(QsimError::Config("sweep values must be finite and non-empty".into()));
                    }
                }
            }
            Protocol::ValidateExpansion => {
                need(self.expansion.as_ref(), "expansion", p)?;
                need(self.drives.eps2_over_2pi_hz, "drives.eps2_over_2pi_hz", p)?;
                if self.fock_cutoff > 15 {
                    return Err(QsimError::Config("validate_expansion is limited to fock_cutoff ≤ 15".into()));
                }
            }
        }
        Ok(())
    }

    pub fn device_params(&self) -> Option<DeviceParams> {
        self.device.as_ref().map(DeviceConfig::to_params)
    }

    /// Dissipation rates, falling back on the device block.
    pub fn rates(&self) -> Result<Rates> {
        let dev = self.device_params();
        let qubit_decay = match (self.rates.qubit_decay_over_2pi_hz, &dev) {
            (Some(x), _) => hz_to_rad(finite_nonneg("qubit decay", x)?),
            (None, Some(d)) => d.qubit_decay,
            (None, None) => return Err(QsimError::Config("missing rates.qubit_decay_over_2pi_hz".into())),
        };
        let mech_decay = match (self.rates.mech_decay_over_2pi_hz, &dev) {
            (Some(x), _) => hz_to_rad(finite_nonneg("mechanical decay", x)?),
            (None, Some(d)) => d.mech_decay,
            // swept per point
            (None, None) if self.protocol == Protocol::SweepGamma => 0.0,
            (None, None) => return Err(QsimError::Config("missing rates.mech_decay_over_2pi_hz".into())),
        };
        let n_th = match (self.rates.n_th, &dev) {
            (Some(x), _) => finite_nonneg("n_th", x)?,
            (None, Some(d)) => model::thermal_occupation(d.omega_m, d.temperature)?,
            (None, None) => return Err(QsimError::Config("missing rates.n_th (or a device block)".into())),
        };
        if !(qubit_decay > 0.0) {
            return Err(QsimError::Config("qubit decay must be positive".into()));
        }
        Ok(Rates {
            qubit_decay,
            mech_decay,
            n_th,
        })
    }

    /// Lamb–Dicke parameter from `coupling`, or derived from `device`.
    pub fn lambda(&self) -> Result<f64> {
        if let Some(c) = &self.coupling {
            if let Some(l) = c.lambda {
                return Ok(l);
            }
            if let Some(g) = c.g_over_2pi_hz {
                let wm = c
                    .omega_m_over_2pi_hz
                    .or_else(|| self.device.as_ref().map(|d| d.omega_m_over_2pi_hz))
                    .ok_or_else(|| QsimError::Config("coupling.g needs a mechanical frequency".into()))?;
                return Ok(g / wm);
            }
        }
        if let Some(d) = self.device_params() {
            return Ok(model::derive_coupling(&d)?.lambda);
        }
        Err(QsimError::Config("need coupling.lambda, coupling.g_over_2pi_hz or a device block".into()))
    }

    pub fn drive(&self, v: Option<f64>, name: &str) -> Result<f64> {
        let x = need(v, name, self.protocol)?;
        if !x.is_finite() {
            return Err(QsimError::Config(format!("{name} must be finite")));
        }
        Ok(hz_to_rad(x))
    }

    /// Θ_c in rad/s, given directly or as `2 λ² ε₁`.
    pub fn theta_c(&self) -> Result<f64> {
        if let Some(t) = self.drives.theta_c_over_2pi_hz {
            return Ok(hz_to_rad(t));
        }
        if let Some(e) = &self.expansion {
            return Ok(2.0 * e.lambda * e.lambda * hz_to_rad(e.eps1_over_2pi_hz));
        }
        let eps1 = self.drive(self.drives.eps1_over_2pi_hz, "drives.eps1_over_2pi_hz or drives.theta_c_over_2pi_hz")?;
        let l = self.lambda()?;
        Ok(2.0 * l * l * eps1)
    }

    /// Sweep points in rad/s.
    pub fn sweep_values(&self) -> Result<Vec<f64>> {
        self.sweep
            .as_ref()
            .map(|s| s.values_over_2pi_hz.iter().map(|v| hz_to_rad(*v)).collect())
            .ok_or_else(|| QsimError::Config("missing sweep block".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const CAT: &str = r#"{
        "protocol": "cat",
        "fock_cutoff": 30,
        "drives": {"theta_c_over_2pi_hz": 36e3, "eps2_over_2pi_hz": -72e3},
        "rates": {"qubit_decay_over_2pi_hz": 4e5, "mech_decay_over_2pi_hz": 10, "n_th": 5}
    }"#;

    #[test]
    fn parses_and_converts_units() {
        let cfg = ScenarioConfig::from_json(CAT).unwrap();
        let r = cfg.rates().unwrap();
        assert!((r.qubit_decay - 2.0 * std::f64::consts::PI * 4e5).abs() < 1e-6);
        assert!((cfg.theta_c().unwrap() / (2.0 * std::f64::consts::PI) - 36e3).abs() < 1e-9);
        assert_eq!(cfg.tolerance, 1e-8);
        assert!(cfg.convergence_gate);
    }

    #[test]
    fn rejects_unknown_keys_and_missing_fields() {
        assert!(matches!(
            ScenarioConfig::from_json(&CAT.replace("\"fock_cutoff\"", "\"bogus\": 1, \"fock_cutoff\"")),
            Err(QsimError::Config(_))
        ));
        let no_eps2 = CAT.replace(", \"eps2_over_2pi_hz\": -72e3", "");
        assert!(ScenarioConfig::from_json(&no_eps2).is_err());
        let cool_with_plus = r#"{"protocol": "cool", "fock_cutoff": 10,
            "drives": {"eps_minus_over_2pi_hz": 1e6, "eps_plus_over_2pi_hz": 1e5}}"#;
        assert!(ScenarioConfig::from_json(cool_with_plus).is_err());
        let sweep_without_points = CAT.replace("\"cat\"", "\"sweep_gamma\"");
        assert!(ScenarioConfig::from_json(&sweep_without_points).is_err());
    }

    #[test]
    fn theta_c_from_expansion_parameters() {
        let text = CAT.replace(
            "\"drives\": {\"theta_c_over_2pi_hz\": 36e3, ",
            "\"coupling\": {\"lambda\": 0.06}, \"drives\": {\"eps1_over_2pi_hz\": 5e6, ",
        );
        let cfg = ScenarioConfig::from_json(&text).unwrap();
        assert!((cfg.theta_c().unwrap() / (2.0 * std::f64::consts::PI) - 36e3).abs() < 1e-6);
    }

    #[test]
    fn protocol_names_round_trip() {
        for p in [Protocol::Cool, Protocol::SweepGamma, Protocol::ValidateExpansion] {
            assert_eq!(Protocol::parse(p.name()).unwrap(), p);
        }
        assert!(Protocol::parse("nope").is_err());
    }
}
