use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use rayon::prelude::*;
use std::collections::BTreeMap;

use super::config::{CatModel, Protocol, Rates, ScenarioConfig};
use super::report::{GateRecord, GateRun, Report, Table};
use crate::analysis::{
    self, fidelity, negative_regions, negativity_of, odd_population, phonon_distribution, quadrature_extrema,
    reflection_coefficient, state_fidelity, trace_distance, wigner, wigner_validated, PhaseSpaceGrid,
};
use crate::error::{QsimError, Result};
use crate::fockspace::{
    expectation, partial_trace_qubit, prepare_state, thermal_state, CatParity, CompositeOperators, DensityMatrix,
    Ket, SpaceTag, StateSpec,
};
use crate::lindblad::{
    build_liouvillian, evolve_with, standard_dissipators, steady_state, EvolveOptions, EvolveStats, Liouvillian,
};
use crate::model::{
    build_cat_effective, build_cooling_jc, build_polaron_expanded, build_squeeze_effective, hz_to_rad,
    predicted_cooling_limit, rad_to_hz, resonant_expansion, ExpansionParams, SplitHamiltonian,
};

/// Maximum change of a headline scalar allowed by the convergence gate.
pub const GATE_THRESHOLD: f64 = 1e-3;
/// Extra Fock levels used by the cutoff re-run of the gate.
pub const GATE_EXTRA_LEVELS: usize = 10;
/// Sample spacing when the configuration does not set one.
pub const DEFAULT_SAMPLE_STEP: f64 = 0.25e-6;
/// Trapping window of the detection protocols.
pub const DETECTION_WINDOW: f64 = 60e-6;
/// Fidelity peak time of the reference cat run, used to size amplitude sweeps.
pub const REFERENCE_PEAK_TIME: f64 = 27.5e-6;
/// Evolution window of every amplitude-sweep point. The peak time barely
/// moves with the target amplitude, so one window fits the whole sweep.
pub const AMPLITUDE_WINDOW: f64 = 3.0 * REFERENCE_PEAK_TIME;

#[derive(Clone, Copy, Debug)]
pub struct RunOptions {
    /// Width of the worker pool used for sweep points.
    pub workers: usize,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self { workers: 1 }
    }
}

/// Runs the configured protocol and, unless disabled, its convergence gate.
pub fn run(cfg: &ScenarioConfig, opts: &RunOptions) -> Result<Report> {
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.workers.max(1))
        .build()
        .map_err(|e| QsimError::Config(format!("worker pool: {e}")))?;
    pool.install(|| {
        let start = std::time::Instant::now();
        let mut report = run_at(cfg, cfg.fock_cutoff, cfg.tolerance, true)?;
        if cfg.convergence_gate {
            report.convergence_gate = Some(convergence_gate(cfg, &report)?);
        }
        report.wall_clock_s = start.elapsed().as_secs_f64();
        Ok(report)
    })
}

fn run_at(cfg: &ScenarioConfig, n: usize, tol: f64, primary: bool) -> Result<Report> {
    match cfg.protocol {
        Protocol::Cool => run_cool(cfg, n, primary),
        Protocol::Squeeze => run_squeeze(cfg, n, tol, primary),
        Protocol::Cat => run_cat(cfg, n, tol, primary),
        Protocol::Detect => run_detect(cfg, n, tol, primary),
        Protocol::SweepDetuning | Protocol::SweepGamma => run_reflection_sweep(cfg, n, tol),
        Protocol::SweepAmplitude => run_amplitude_sweep(cfg, n, tol),
        Protocol::ValidateExpansion => run_validate_expansion(cfg, n, tol, primary),
    }
}

fn gated_keys(report: &Report) -> Vec<String> {
    let fixed: &[&str] = match report.protocol {
        Protocol::Cool => &["n_ss"],
        Protocol::Squeeze => &["fidelity_squeezed_vacuum", "min_variance", "bogoliubov_occupation"],
        Protocol::Cat => &["f_max", "delta_n_max"],
        Protocol::Detect => &["f_max", "re_r", "im_r"],
        Protocol::ValidateExpansion => &["model_fidelity_end"],
        Protocol::SweepDetuning | Protocol::SweepGamma | Protocol::SweepAmplitude => &[],
    };
    let mut keys: Vec<String> = fixed.iter().map(|s| s.to_string()).collect();
    keys.extend(report.headline.keys().filter(|k| k.starts_with("point")).cloned());
    keys
}

fn gate_run(cfg: &ScenarioConfig, base: &Report, keys: &[String], n: usize, tol: f64) -> Result<GateRun> {
    let rerun = run_at(cfg, n, tol, false)?;
    let mut headline = BTreeMap::new();
    let mut worst: f64 = 0.0;
    for k in keys {
        if let (Some(a), Some(b)) = (base.value(k), rerun.value(k)) {
            headline.insert(k.clone(), b);
            worst = worst.max((a - b).abs());
        }
    }
    Ok(GateRun {
        fock_cutoff: n,
        tolerance: tol,
        headline,
        max_abs_change: worst,
    })
}

/// Re-runs at `N + 10` and at a tenfold tighter tolerance.
pub fn convergence_gate(cfg: &ScenarioConfig, report: &Report) -> Result<GateRecord> {
    let keys = gated_keys(report);
    let cutoff_rerun = gate_run(cfg, report, &keys, cfg.fock_cutoff + GATE_EXTRA_LEVELS, cfg.tolerance)?;
    let tolerance_rerun = gate_run(cfg, report, &keys, cfg.fock_cutoff, cfg.tolerance / 10.0)?;
    let passed = cutoff_rerun.max_abs_change < GATE_THRESHOLD && tolerance_rerun.max_abs_change < GATE_THRESHOLD;
    if !passed {
        log::warn!(
            "convergence gate failed: cutoff Δ = {:.3e}, tolerance Δ = {:.3e}",
            cutoff_rerun.max_abs_change,
            tolerance_rerun.max_abs_change
        );
    }
    Ok(GateRecord {
        threshold: GATE_THRESHOLD,
        cutoff_rerun,
        tolerance_rerun,
        passed,
    })
}

fn sample_times(duration: f64, step: f64) -> Vec<f64> {
    let count = (duration / step + 1e-9).floor() as usize;
    (0..=count).map(|k| k as f64 * step).collect()
}

fn evolve_options(tol: f64) -> EvolveOptions {
    EvolveOptions::default().with_rtol(tol)
}

/// `|g⟩⟨g| ⊗ ρ_osc`.
pub fn ground_product(rho_osc: &DensityMatrix) -> Result<DensityMatrix> {
    let n = match rho_osc.tag() {
        SpaceTag::Oscillator { fock_cutoff } => fock_cutoff,
        other => return Err(QsimError::SpaceMismatch(format!("expected an oscillator state, got {other:?}"))),
    };
    let mut data = DMatrix::zeros(2 * n, 2 * n);
    data.view_mut((0, 0), (n, n)).copy_from(rho_osc.data());
    DensityMatrix::new(SpaceTag::composite(n)?, data)
}

fn insert_hz(map: &mut BTreeMap<String, f64>, key: &str, rad_s: f64) {
    map.insert(format!("{key}_over_2pi_hz"), rad_to_hz(rad_s));
}

fn insert_rates(map: &mut BTreeMap<String, f64>, rates: &Rates) {
    insert_hz(map, "qubit_decay", rates.qubit_decay);
    insert_hz(map, "mech_decay", rates.mech_decay);
    map.insert("n_th".into(), rates.n_th);
}

fn run_cool(cfg: &ScenarioConfig, n: usize, primary: bool) -> Result<Report> {
    let rates = cfg.rates()?;
    let lambda = cfg.lambda()?;
    let eps_minus = cfg.drive(cfg.drives.eps_minus_over_2pi_hz, "drives.eps_minus_over_2pi_hz")?;
    let model = build_cooling_jc(lambda, eps_minus, n)?;
    let g_c = model.constant("g_c").expect("cooling model defines g_c");
    let diss = standard_dissipators(n, rates.qubit_decay, rates.mech_decay, rates.n_th)?;
    let l = build_liouvillian(&SplitHamiltonian::constant(model.hamiltonian.clone()), &diss)?;
    let rho = steady_state(&l)?;
    let ops = CompositeOperators::new(n)?;
    let n_ss = expectation(&ops.num, &rho)?.re;
    let limit = predicted_cooling_limit(rates.n_th, rates.mech_decay, rates.qubit_decay, g_c);

    let mut report = Report::new(cfg);
    insert_hz(&mut report.derived_constants, "g_c", g_c);
    report.derived_constants.insert("lambda".into(), lambda);
    report.derived_constants.insert("n_bar_predicted".into(), limit.n_bar);
    report.derived_constants.insert("cooperativity".into(), limit.cooperativity);
    insert_rates(&mut report.derived_constants, &rates);
    report.headline.insert("n_ss".into(), n_ss);
    report.headline.insert("n_bar_predicted".into(), limit.n_bar);
    if limit.n_bar > 0.0 {
        report.headline.insert("n_ss_over_predicted".into(), n_ss / limit.n_bar);
    }
    report.headline.insert("cooperativity".into(), limit.cooperativity);
    let rho_m = partial_trace_qubit(&rho)?;
    report.headline.insert("ground_population".into(), rho_m.population(0));

    if primary {
        if let Some(duration) = cfg.duration_s {
            let step = cfg.sample_step_s.unwrap_or(duration / 200.0);
            let times = sample_times(duration, step);
            let rho0 = ground_product(&thermal_state(rates.n_th, n)?)?;
            let mut table = Table::new("phonons_vs_time.csv", &["t_s", "n_phonon"]);
            evolve_with(&l, &rho0, &times, &evolve_options(cfg.tolerance), |t, r| {
                table.push(vec![t, expectation(&ops.num, r)?.re]);
                Ok(())
            })?;
            report.tables.push(table);
        }
    }
    Ok(report)
}

fn run_squeeze(cfg: &ScenarioConfig, n: usize, tol: f64, primary: bool) -> Result<Report> {
    let rates = cfg.rates()?;
    let lambda = cfg.lambda()?;
    let eps_minus = cfg.drive(cfg.drives.eps_minus_over_2pi_hz, "drives.eps_minus_over_2pi_hz")?;
    let eps_plus = cfg.drive(cfg.drives.eps_plus_over_2pi_hz, "drives.eps_plus_over_2pi_hz")?;
    let model = build_squeeze_effective(lambda, eps_minus, eps_plus, n)?;
    let eta = model.constant("eta").expect("squeeze model defines η");
    let theta = model.constant("theta").expect("squeeze model defines Θ");
    let b = model.bogoliubov.clone().expect("squeeze model defines B");
    let bdb = b.adjoint().mul(&b)?;
    let diss = standard_dissipators(n, rates.qubit_decay, rates.mech_decay, rates.n_th)?;
    let l = build_liouvillian(&SplitHamiltonian::constant(model.hamiltonian.clone()), &diss)?;
    let rho = steady_state(&l)?;
    let rho_m = partial_trace_qubit(&rho)?;
    let target = prepare_state(&StateSpec::SqueezedVacuum { re: eta, im: 0.0 }, n)?;
    let ext = quadrature_extrema(&rho_m)?;

    let mut report = Report::new(cfg);
    insert_hz(&mut report.derived_constants, "theta", theta);
    report.derived_constants.insert("eta".into(), eta);
    report.derived_constants.insert("lambda".into(), lambda);
    insert_rates(&mut report.derived_constants, &rates);
    let h = &mut report.headline;
    h.insert("bogoliubov_occupation".into(), expectation(&bdb, &rho)?.re);
    h.insert("fidelity_squeezed_vacuum".into(), fidelity(&rho_m, &target)?);
    h.insert("min_variance".into(), ext.min_variance);
    h.insert("min_variance_angle".into(), ext.min_angle);
    h.insert("max_variance".into(), ext.max_variance);
    h.insert("max_variance_angle".into(), ext.max_angle);
    h.insert("min_variance_expected".into(), (-2.0 * eta.abs()).exp() / 2.0);
    h.insert("max_variance_expected".into(), (2.0 * eta.abs()).exp() / 2.0);

    if primary {
        if let Some(duration) = cfg.duration_s {
            let step = cfg.sample_step_s.unwrap_or(duration / 200.0);
            let times = sample_times(duration, step);
            let rho0 = ground_product(&thermal_state(rates.n_th, n)?)?;
            let mut table = Table::new("squeeze_vs_time.csv", &["t_s", "bogoliubov_occupation", "fidelity"]);
            evolve_with(&l, &rho0, &times, &evolve_options(tol), |t, r| {
                let m = partial_trace_qubit(r)?;
                table.push(vec![t, expectation(&bdb, r)?.re, fidelity(&m, &target)?]);
                Ok(())
            })?;
            report.tables.push(table);
        }
    }
    Ok(report)
}

/// Everything needed to run the two-phonon trapping dynamics.
#[derive(Clone, Debug)]
pub struct CatSetup {
    pub fock_cutoff: usize,
    pub theta_c: f64,
    pub eps2: f64,
    pub detuning: f64,
    pub rates: Rates,
    pub model: CatModel,
    /// Expanded-model parameters; the oscillator is viewed in a frame rotating
    /// at `δ₁₂/2` so that both models share one target state.
    pub expansion: Option<ExpansionParams>,
}

impl CatSetup {
    pub fn from_config(cfg: &ScenarioConfig, fock_cutoff: usize) -> Result<Self> {
        let rates = cfg.rates()?;
        let eps2 = cfg.drive(cfg.drives.eps2_over_2pi_hz, "drives.eps2_over_2pi_hz")?;
        let theta_c = cfg.theta_c()?;
        let detuning = hz_to_rad(cfg.detuning_over_2pi_hz);
        let expansion = match cfg.cat_model {
            CatModel::Effective => None,
            CatModel::Expanded => {
                let e = cfg.expansion.as_ref().expect("validated");
                if detuning != 0.0 {
                    return Err(QsimError::Config("the expanded model runs on resonance only".into()));
                }
                let (p, _) = resonant_expansion(hz_to_rad(e.omega_m_over_2pi_hz), e.lambda, hz_to_rad(e.eps1_over_2pi_hz), eps2)?;
                Some(p)
            }
        };
        Ok(Self {
            fock_cutoff,
            theta_c,
            eps2,
            detuning,
            rates,
            model: cfg.cat_model,
            expansion,
        })
    }

    pub fn alpha_target(&self) -> f64 {
        (-self.eps2 / self.theta_c).sqrt()
    }

    pub fn with_mech_decay(&self, mech_decay: f64) -> Self {
        let mut s = self.clone();
        s.rates.mech_decay = mech_decay;
        s
    }

    pub fn liouvillian(&self) -> Result<Liouvillian> {
        let n = self.fock_cutoff;
        let h = match &self.expansion {
            Some(p) => build_polaron_expanded(p, n)?,
            None => SplitHamiltonian::constant(build_cat_effective(self.theta_c, self.eps2, self.detuning, n)?.hamiltonian),
        };
        let diss = standard_dissipators(n, self.rates.qubit_decay, self.rates.mech_decay, self.rates.n_th)?;
        build_liouvillian(&h, &diss)
    }

    /// Even cat with the target amplitude.
    pub fn target(&self) -> Result<Ket> {
        prepare_state(
            &StateSpec::Cat {
                re: self.alpha_target(),
                im: 0.0,
                parity: CatParity::Even,
            },
            self.fock_cutoff,
        )
    }

    /// Reduced oscillator state in the frame of the target.
    pub fn mechanical_state(&self, t: f64, rho: &DensityMatrix) -> Result<DensityMatrix> {
        let m = partial_trace_qubit(rho)?;
        match &self.expansion {
            None => Ok(m),
            Some(p) => Ok(rotate_oscillator(&m, p.delta12 / 2.0, t)),
        }
    }
}

/// `e^{iωt a†a} ρ e^{−iωt a†a}`.
pub fn rotate_oscillator(rho: &DensityMatrix, omega: f64, t: f64) -> DensityMatrix {
    let n = rho.dim();
    let mut data = rho.data().clone();
    for r in 0..n {
        for c in 0..n {
            data[(r, c)] *= C64::from_polar(1.0, omega * t * (r as f64 - c as f64));
        }
    }
    DensityMatrix::new_unchecked(rho.tag(), data).expect("same dimension")
}

#[derive(Clone, Debug, Default)]
pub struct CatSeries {
    pub times: Vec<f64>,
    pub fidelity: Vec<f64>,
    /// Empty unless a grid was supplied.
    pub delta_n: Vec<f64>,
    /// Empty for the expanded model.
    pub reflection: Vec<C64>,
    /// Empty unless requested.
    pub mechanical_states: Vec<DensityMatrix>,
    pub stats: EvolveStats,
}

impl CatSeries {
    pub fn peak(&self) -> (f64, f64) {
        analysis::peak(&self.times, &self.fidelity).unwrap_or((f64::NAN, f64::NAN))
    }

    pub fn peak_delta_n(&self) -> Option<(f64, f64)> {
        analysis::peak(&self.times, &self.delta_n)
    }

    /// Mean of `r` over samples in the final 10% of the window.
    pub fn late_reflection(&self) -> Option<C64> {
        let t_end = *self.times.last()?;
        let t0 = self.times[0] + 0.9 * (t_end - self.times[0]);
        let late: Vec<C64> = self
            .times
            .iter()
            .zip(&self.reflection)
            .filter(|(t, _)| **t >= t0 - 1e-15)
            .map(|(_, r)| *r)
            .collect();
        if late.is_empty() {
            return None;
        }
        Some(late.iter().sum::<C64>() / late.len() as f64)
    }
}

/// Evolves `|g,0⟩` and records per-sample diagnostics. Fidelity needs a
/// `target`; δ_N needs a grid.
pub fn cat_dynamics(
    setup: &CatSetup,
    target: Option<&Ket>,
    times: &[f64],
    tol: f64,
    grid: Option<&PhaseSpaceGrid>,
    keep_states: bool,
) -> Result<CatSeries> {
    let l = setup.liouvillian()?;
    let rho0 = Ket::basis(SpaceTag::composite(setup.fock_cutoff)?, 0)?.to_density();
    let mut out = CatSeries::default();
    let reflect = setup.expansion.is_none();
    out.stats = evolve_with(&l, &rho0, times, &evolve_options(tol), |t, rho| {
        let m = setup.mechanical_state(t, rho)?;
        out.times.push(t);
        if let Some(psi) = target {
            out.fidelity.push(fidelity(&m, psi)?);
        }
        if let Some(g) = grid {
            out.delta_n.push(negativity_of(&wigner(&m, g)?));
        }
        if reflect {
            out.reflection.push(reflection_coefficient(rho, setup.rates.qubit_decay, setup.eps2)?);
        }
        if keep_states {
            out.mechanical_states.push(m);
        }
        Ok(())
    })?;
    Ok(out)
}

fn grid_for(cfg: &ScenarioConfig, alpha: f64) -> Result<PhaseSpaceGrid> {
    let step = cfg.grid.as_ref().and_then(|g| g.step);
    let base = PhaseSpaceGrid::covering(alpha, step)?;
    match cfg.grid.as_ref().and_then(|g| g.half_width) {
        Some(hw) if hw > base.half_width => PhaseSpaceGrid::new(hw, base.step),
        _ => Ok(base),
    }
}

fn insert_cat_constants(report: &mut Report, setup: &CatSetup) {
    let d = &mut report.derived_constants;
    insert_hz(d, "theta_c", setup.theta_c);
    insert_hz(d, "eps2", setup.eps2);
    insert_hz(d, "detuning", setup.detuning);
    d.insert("alpha_target".into(), setup.alpha_target());
    insert_rates(d, &setup.rates);
    if let Some(p) = &setup.expansion {
        insert_hz(d, "delta", p.delta);
        insert_hz(d, "delta12", p.delta12);
        insert_hz(d, "eps1", p.eps1);
        d.insert("lambda".into(), p.lambda);
    }
}

fn run_cat(cfg: &ScenarioConfig, n: usize, tol: f64, primary: bool) -> Result<Report> {
    let setup = CatSetup::from_config(cfg, n)?;
    let duration = cfg.duration_s.unwrap_or(40e-6);
    let step = cfg.sample_step_s.unwrap_or(DEFAULT_SAMPLE_STEP);
    let times = sample_times(duration, step);
    let grid = grid_for(cfg, setup.alpha_target())?;

    let target = setup.target()?;
    let main = cat_dynamics(&setup, Some(&target), &times, tol, Some(&grid), primary)?;
    let (f_max, t_max) = main.peak();
    let (dn_max, t_dn) = main.peak_delta_n().unwrap_or((0.0, 0.0));

    let mut report = Report::new(cfg);
    insert_cat_constants(&mut report, &setup);
    report.headline.insert("f_max".into(), f_max);
    report.headline.insert("t_max_s".into(), t_max);
    report.headline.insert("delta_n_max".into(), dn_max);
    report.headline.insert("t_delta_n_max_s".into(), t_dn);
    if !primary {
        return Ok(report);
    }

    let companion = if setup.rates.mech_decay == 0.0 {
        main.clone()
    } else {
        cat_dynamics(&setup.with_mech_decay(0.0), Some(&target), &times, tol, None, false)?
    };
    let (f0_max, t0_max) = companion.peak();
    report.headline.insert("f_max_gamma0".into(), f0_max);
    report.headline.insert("t_max_gamma0_s".into(), t0_max);
    report.headline.insert("f_end_gamma0".into(), *companion.fidelity.last().unwrap_or(&f64::NAN));

    let mut curve = Table::new("fidelity_vs_time.csv", &["t_s", "F_gamma", "F_gamma0", "delta_N"]);
    for k in 0..main.times.len() {
        curve.push(vec![main.times[k], main.fidelity[k], companion.fidelity[k], main.delta_n[k]]);
    }
    report.tables.push(curve);

    let k_max = main.times.iter().position(|t| *t == t_max).unwrap_or(0);
    let rho_tmax = &main.mechanical_states[k_max];
    report.headline.insert("odd_population_tmax".into(), odd_population(rho_tmax)?);
    let w = wigner_validated(rho_tmax, &grid)?;
    let deep = negative_regions(&w, 0.0).into_iter().filter(|m| *m < -0.01).count();
    report.headline.insert("negative_regions_tmax".into(), deep as f64);
    report
        .headline
        .insert("wigner_min_tmax".into(), w.values.iter().cloned().fold(f64::INFINITY, f64::min));
    let mut wt = Table::new("wigner_tmax.csv", &["re_alpha", "im_alpha", "W"]);
    for (x, y, v) in w.rows() {
        wt.push(vec![x, y, v]);
    }
    report.tables.push(wt);
    let mut pt = Table::new("phonon_distribution_tmax.csv", &["n", "P"]);
    for (k, p) in phonon_distribution(rho_tmax)?.iter().enumerate() {
        pt.push(vec![k as f64, *p]);
    }
    report.tables.push(pt);

    if let Some(lifetime) = cfg.lifetime_s {
        // the lifetime run always uses the effective model
        let mut eff = setup.clone();
        eff.expansion = None;
        eff.model = CatModel::Effective;
        let coarse = step.max(lifetime / 200.0);
        let long_times = sample_times(lifetime, coarse);
        let series = cat_dynamics(&eff, Some(&target), &long_times, tol, Some(&grid), false)?;
        let mut lt = Table::new("delta_n_lifetime.csv", &["t_s", "delta_N", "F"]);
        for k in 0..series.times.len() {
            lt.push(vec![series.times[k], series.delta_n[k], series.fidelity[k]]);
        }
        report.tables.push(lt);
        let onset = series.delta_n.iter().position(|d| *d > 0.0);
        let (positive_through, min_after) = match onset {
            None => (0.0, 0.0),
            Some(k0) => {
                let tail = &series.delta_n[k0..];
                let first_zero = tail.iter().position(|d| *d <= 0.0);
                let through = match first_zero {
                    None => *series.times.last().unwrap(),
                    Some(j) => series.times[k0 + j - 1],
                };
                (through, tail.iter().cloned().fold(f64::INFINITY, f64::min))
            }
        };
        report.headline.insert("delta_n_onset_s".into(), onset.map_or(f64::NAN, |k| series.times[k]));
        report.headline.insert("delta_n_positive_through_s".into(), positive_through);
        report.headline.insert("delta_n_min_after_onset".into(), min_after);
        report.headline.insert("lifetime_window_s".into(), lifetime);
    }
    if setup.expansion.is_some() {
        report.notes.push("oscillator states are reported in the frame rotating at δ₁₂/2".into());
    }
    Ok(report)
}

fn detection_point(setup: &CatSetup, times: &[f64], tol: f64) -> Result<(f64, f64, C64, CatSeries)> {
    let s = cat_dynamics(setup, Some(&setup.target()?), times, tol, None, false)?;
    let (f_max, t_max) = s.peak();
    let r = s
        .late_reflection()
        .ok_or_else(|| QsimError::InvalidArgument("no samples in the late window".into()))?;
    Ok((f_max, t_max, r, s))
}

fn effective_only(cfg: &ScenarioConfig) -> Result<()> {
    if cfg.cat_model != CatModel::Effective {
        return Err(QsimError::Config(format!(
            "protocol `{}` runs with the effective model only",
            cfg.protocol.name()
        )));
    }
    Ok(())
}

fn run_detect(cfg: &ScenarioConfig, n: usize, tol: f64, primary: bool) -> Result<Report> {
    effective_only(cfg)?;
    let setup = CatSetup::from_config(cfg, n)?;
    let window = cfg.duration_s.unwrap_or(DETECTION_WINDOW);
    let times = sample_times(window, cfg.sample_step_s.unwrap_or(DEFAULT_SAMPLE_STEP));
    let (f_max, t_max, r, s) = detection_point(&setup, &times, tol)?;
    let mut report = Report::new(cfg);
    insert_cat_constants(&mut report, &setup);
    report.derived_constants.insert("window_s".into(), window);
    let h = &mut report.headline;
    h.insert("f_max".into(), f_max);
    h.insert("t_max_s".into(), t_max);
    h.insert("re_r".into(), r.re);
    h.insert("im_r".into(), r.im);
    h.insert("abs_r".into(), r.norm());
    h.insert("detuning_over_2pi_hz".into(), cfg.detuning_over_2pi_hz);
    if primary {
        let mut t = Table::new("detect_vs_time.csv", &["t_s", "F", "re_r", "im_r"]);
        for k in 0..s.times.len() {
            t.push(vec![s.times[k], s.fidelity[k], s.reflection[k].re, s.reflection[k].im]);
        }
        report.tables.push(t);
        if analysis::ReflectionPoint::new(setup.detuning, r, f_max).flagged {
            report.notes.push(format!("|r| = {:.3} exceeds the sanity cap", r.norm()));
        }
    }
    Ok(report)
}

fn run_reflection_sweep(cfg: &ScenarioConfig, n: usize, tol: f64) -> Result<Report> {
    effective_only(cfg)?;
    let base = CatSetup::from_config(cfg, n)?;
    let window = cfg.duration_s.unwrap_or(DETECTION_WINDOW);
    let times = sample_times(window, cfg.sample_step_s.unwrap_or(DEFAULT_SAMPLE_STEP));
    let values = cfg.sweep_values()?;
    let by_gamma = cfg.protocol == Protocol::SweepGamma;

    let points: Vec<Result<analysis::ReflectionPoint>> = values
        .par_iter()
        .map(|&v| {
            let mut s = base.clone();
            if by_gamma {
                s.rates.mech_decay = v;
            } else {
                s.detuning = v;
            }
            let (f_max, _, r, _) = detection_point(&s, &times, tol)?;
            Ok(analysis::ReflectionPoint::new(s.detuning, r, f_max))
        })
        .collect();

    let mut report = Report::new(cfg);
    insert_cat_constants(&mut report, &base);
    report.derived_constants.insert("window_s".into(), window);
    let (file, coord) = if by_gamma {
        ("reflection_vs_gamma.csv", "gamma_over_2pi_hz")
    } else {
        ("reflection_vs_detuning.csv", "delta_d_over_2pi_hz")
    };
    let mut table = Table::new(file, &[coord, "re_r", "im_r", "f_max"]);
    let coords_hz = &cfg.sweep.as_ref().expect("validated").values_over_2pi_hz;
    for (i, (p, hz)) in points.into_iter().zip(coords_hz).enumerate() {
        let p = p?;
        table.push(vec![*hz, p.r.re, p.r.im, p.f_max]);
        report.headline.insert(format!("point{i:03}_f_max"), p.f_max);
        report.headline.insert(format!("point{i:03}_re_r"), p.r.re);
        report.headline.insert(format!("point{i:03}_im_r"), p.r.im);
        if p.flagged {
            report.notes.push(format!("point {i}: |r| = {:.3} exceeds the sanity cap", p.r.norm()));
        }
    }
    report.tables.push(table);
    Ok(report)
}

fn run_amplitude_sweep(cfg: &ScenarioConfig, n: usize, tol: f64) -> Result<Report> {
    effective_only(cfg)?;
    let values = cfg.sweep_values()?;
    let mags: Vec<f64> = values.iter().map(|v| v.abs()).collect();
    let (lo, hi) = mags
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(a, b), &x| (a.min(x), b.max(x)));
    if !(lo > 0.0) || hi / lo < 10.0 - 1e-9 {
        return Err(QsimError::Config("amplitude sweep must span at least a factor of 10 with nonzero points".into()));
    }
    // each point sets ε₂ itself; the base only needs a resolvable value
    let mut seeded = cfg.clone();
    seeded.drives.eps2_over_2pi_hz = Some(cfg.sweep.as_ref().expect("validated").values_over_2pi_hz[0]);
    let mut base = CatSetup::from_config(&seeded, n)?;
    base.eps2 = -lo;
    let step = cfg.sample_step_s.unwrap_or(DEFAULT_SAMPLE_STEP);

    let rows: Vec<Result<Vec<f64>>> = mags
        .par_iter()
        .map(|&m| {
            let mut s = base.clone();
            s.eps2 = -m;
            let alpha = s.alpha_target();
            let window = AMPLITUDE_WINDOW;
            let times = sample_times(window, step);
            let grid = grid_for(cfg, alpha)?;
            let series = cat_dynamics(&s, Some(&s.target()?), &times, tol, Some(&grid), false)?;
            let (f_max, t_max) = series.peak();
            let (dn_max, _) = series.peak_delta_n().unwrap_or((0.0, 0.0));
            Ok(vec![0.0, alpha, f_max, t_max, dn_max, window])
        })
        .collect();

    let mut report = Report::new(cfg);
    insert_cat_constants(&mut report, &base);
    let mut table = Table::new(
        "amplitude_sweep.csv",
        &["eps_res_over_2pi_hz", "alpha_target", "f_max", "t_max_s", "delta_n_max", "window_s"],
    );
    let coords_hz = &cfg.sweep.as_ref().expect("validated").values_over_2pi_hz;
    for (i, row) in rows.into_iter().enumerate() {
        let mut row = row?;
        row[0] = coords_hz[i];
        report.headline.insert(format!("point{i:03}_f_max"), row[2]);
        report.headline.insert(format!("point{i:03}_delta_n_max"), row[4]);
        if row[3] >= 0.9 * row[5] {
            report
                .notes
                .push(format!("point {i}: fidelity still rising near the end of the window, F_max is a lower bound"));
        }
        table.push(row);
    }
    report.tables.push(table);
    report.notes.push("the swept variable is the resonant drive strength ε_res".into());
    Ok(report)
}

fn run_validate_expansion(cfg: &ScenarioConfig, n: usize, tol: f64, primary: bool) -> Result<Report> {
    let e = cfg.expansion.as_ref().expect("validated");
    let rates = cfg.rates()?;
    let eps2 = cfg.drive(cfg.drives.eps2_over_2pi_hz, "drives.eps2_over_2pi_hz")?;
    let omega_m = hz_to_rad(e.omega_m_over_2pi_hz);
    let eps1 = hz_to_rad(e.eps1_over_2pi_hz);
    let (resonant, shifted) = resonant_expansion(omega_m, e.lambda, eps1, eps2)?;
    let duration = cfg.duration_s.unwrap_or(5e-6);
    if duration < 5e-6 - 1e-15 {
        return Err(QsimError::Config("validate_expansion needs a window of at least 5 µs".into()));
    }
    let times = sample_times(duration, cfg.sample_step_s.unwrap_or(DEFAULT_SAMPLE_STEP));

    let effective = CatSetup {
        fock_cutoff: n,
        theta_c: 2.0 * e.lambda * e.lambda * eps1,
        eps2,
        detuning: 0.0,
        rates,
        model: CatModel::Effective,
        expansion: None,
    };
    let expanded = CatSetup {
        model: CatModel::Expanded,
        expansion: Some(resonant),
        ..effective.clone()
    };
    let mut mis_set = resonant;
    mis_set.delta12 += hz_to_rad(e.delta12_offset_over_2pi_hz);
    let detuned = CatSetup {
        model: CatModel::Expanded,
        expansion: Some(mis_set),
        ..effective.clone()
    };

    let eff = cat_dynamics(&effective, None, &times, tol, None, true)?;
    let on = cat_dynamics(&expanded, None, &times, tol, None, true)?;
    let off = if primary {
        Some(cat_dynamics(&detuned, None, &times, tol, None, true)?)
    } else {
        None
    };

    let mut report = Report::new(cfg);
    insert_cat_constants(&mut report, &expanded);
    insert_hz(&mut report.derived_constants, "omega_m_prime", shifted.omega_m_prime);
    insert_hz(&mut report.derived_constants, "delta_tilde", shifted.delta_tilde);
    let mut table = Table::new(
        "expansion_vs_effective.csv",
        &[
            "t_s",
            "fidelity_resonant",
            "trace_distance_resonant",
            "fidelity_detuned",
            "trace_distance_detuned",
        ],
    );
    for k in 0..times.len() {
        let f_on = state_fidelity(&on.mechanical_states[k], &eff.mechanical_states[k])?;
        let d_on = trace_distance(&on.mechanical_states[k], &eff.mechanical_states[k])?;
        let (f_off, d_off) = match &off {
            Some(s) => (
                state_fidelity(&s.mechanical_states[k], &eff.mechanical_states[k])?,
                trace_distance(&s.mechanical_states[k], &eff.mechanical_states[k])?,
            ),
            None => (f64::NAN, f64::NAN),
        };
        table.push(vec![times[k], f_on, d_on, f_off, d_off]);
    }
    let last = table.rows.last().expect("at least one sample").clone();
    report.headline.insert("t_end_s".into(), last[0]);
    report.headline.insert("model_fidelity_end".into(), last[1]);
    report.headline.insert("trace_distance_end".into(), last[2]);
    if primary {
        report.headline.insert("model_fidelity_end_detuned".into(), last[3]);
        report.headline.insert("trace_distance_end_detuned".into(), last[4]);
        report.tables.push(table);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(text: &str) -> ScenarioConfig {
        ScenarioConfig::from_json(text).unwrap()
    }

    #[test]
    fn sample_grid_is_exact_multiples() {
        let t = sample_times(1e-6, 0.25e-6);
        assert_eq!(t.len(), 5);
        assert_eq!(t[4], 4.0 * 0.25e-6);
    }

    #[test]
    fn ground_product_places_block() {
        let th = thermal_state(0.3, 5).unwrap();
        let r = ground_product(&th).unwrap();
        assert_eq!(r.dim(), 10);
        let back = partial_trace_qubit(&r).unwrap();
        assert!((back.data() - th.data()).iter().all(|v| v.norm() < 1e-15));
    }

    #[test]
    fn rotation_keeps_populations() {
        let k = prepare_state(&StateSpec::Coherent { re: 0.8, im: 0.0 }, 12).unwrap();
        let r = rotate_oscillator(&k.to_density(), 2.0, 0.7);
        for i in 0..12 {
            assert!((r.population(i) - k.to_density().population(i)).abs() < 1e-15);
        }
        // a coherent state rotates into |α e^{iωt}⟩
        let rotated = prepare_state(&StateSpec::Coherent { re: 0.8 * 1.4f64.cos(), im: 0.8 * 1.4f64.sin() }, 12).unwrap();
        assert!((fidelity(&r, &rotated).unwrap() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn cooling_without_mechanical_damping_reaches_ground_state() {
        let c = cfg(r#"{"protocol": "cool", "fock_cutoff": 12, "convergence_gate": false,
            "coupling": {"lambda": 0.05},
            "drives": {"eps_minus_over_2pi_hz": 3.5e6},
            "rates": {"qubit_decay_over_2pi_hz": 4e5, "mech_decay_over_2pi_hz": 0, "n_th": 5}}"#);
        let r = run(&c, &RunOptions::default()).unwrap();
        assert!(r.value("n_ss").unwrap() < 1e-8);
    }

    #[test]
    fn squeeze_with_zero_eps_plus_reproduces_cooling() {
        let base = r#"{"protocol": "PROTO", "fock_cutoff": 14, "convergence_gate": false,
            "coupling": {"lambda": 0.05},
            "drives": {"eps_minus_over_2pi_hz": 3.5e6 EXTRA},
            "rates": {"qubit_decay_over_2pi_hz": 4e5, "mech_decay_over_2pi_hz": 10, "n_th": 5}}"#;
        let cool = run(&cfg(&base.replace("PROTO", "cool").replace("EXTRA", "")), &RunOptions::default()).unwrap();
        let sq = run(
            &cfg(&base.replace("PROTO", "squeeze").replace("EXTRA", ", \"eps_plus_over_2pi_hz\": 0")),
            &RunOptions::default(),
        )
        .unwrap();
        let a = cool.value("n_ss").unwrap();
        let b = sq.value("bogoliubov_occupation").unwrap();
        assert!((a - b).abs() <= 1e-12 * a.max(1e-30) + 1e-15, "{a} vs {b}");
    }


    #[test]
    fn amplitude_sweep_requires_a_decade() {
        let c = cfg(r#"{"protocol": "sweep_amplitude", "fock_cutoff": 20, "convergence_gate": false,
            "drives": {"theta_c_over_2pi_hz": 36e3},
            "rates": {"qubit_decay_over_2pi_hz": 4e5, "mech_decay_over_2pi_hz": 10, "n_th": 5},
            "sweep": {"values_over_2pi_hz": [-10e3, -50e3]}}"#);
        assert!(matches!(run(&c, &RunOptions::default()), Err(QsimError::Config(_))));
    }

    #[test]
    fn late_reflection_averages_final_tenth() {
        let s = CatSeries {
            times: (0..=10).map(|k| k as f64).collect(),
            reflection: (0..=10).map(|k| C64::new(k as f64, 0.0)).collect(),
            ..CatSeries::default()
        };
        // samples at t = 9 and 10
        assert_eq!(s.late_reflection().unwrap(), C64::new(9.5, 0.0));
    }
}
