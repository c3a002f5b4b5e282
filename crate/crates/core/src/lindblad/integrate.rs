//! Adaptive Dormand–Prince 5(4) integration of `dρ/dt = L(t)ρ`.

use num_complex::Complex64 as C64;

use super::Liouvillian;
use crate::error::{QsimError, Result};
use crate::fockspace::{expectation, DensityMatrix, Operator};

/// Trace drift above which an integration is rejected.
pub const TRACE_DRIFT_TOL: f64 = 1e-7;

#[derive(Clone, Debug)]
pub struct EvolveOptions {
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
    /// Keep every sampled density matrix in the returned trajectory.
    pub retain_states: bool,
}

impl Default for EvolveOptions {
    fn default() -> Self {
        Self {
            rtol: 1e-8,
            atol: 1e-10,
            max_steps: 200_000_000,
            retain_states: false,
        }
    }
}

impl EvolveOptions {
    pub fn with_rtol(mut self, rtol: f64) -> Self {
        self.rtol = rtol;
        self.atol = rtol * 1e-2;
        self
    }

    pub fn retaining_states(mut self) -> Self {
        self.retain_states = true;
        self
    }
}

/// Integration bookkeeping.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EvolveStats {
    pub accepted_steps: usize,
    pub rejected_steps: usize,
    pub max_trace_drift: f64,
    pub max_hermiticity_drift: f64,
}

#[derive(Clone, Debug)]
pub struct Trajectory {
    pub times: Vec<f64>,
    /// One entry per sample, empty unless states were retained.
    pub states: Vec<DensityMatrix>,
    /// `observables[k][j] = Tr(O_k ρ(t_j))`.
    pub observables: Vec<Vec<C64>>,
    pub stats: EvolveStats,
}

/// Records `Tr(O ρ)` for each observable at each sample time.
pub fn evolve(
    l: &Liouvillian,
    rho0: &DensityMatrix,
    times: &[f64],
    observables: &[Operator],
    opts: &EvolveOptions,
) -> Result<Trajectory> {
    for o in observables {
        l.tag().ensure_same(&o.tag(), "observable")?;
    }
    let mut obs = vec![Vec::with_capacity(times.len()); observables.len()];
    let mut states = Vec::new();
    let stats = evolve_with(l, rho0, times, opts, |_, rho| {
        for (k, o) in observables.iter().enumerate() {
            obs[k].push(expectation(o, rho)?);
        }
        if opts.retain_states {
            states.push(rho.clone());
        }
        Ok(())
    })?;
    Ok(Trajectory {
        times: times.to_vec(),
        states,
        observables: obs,
        stats,
    })
}

// Dormand–Prince tableau.
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

struct Workspace {
    k: [Vec<C64>; 7],
    stage: Vec<C64>,
    y_new: Vec<C64>,
}

impl Workspace {
    fn new(n: usize) -> Self {
        let z = || vec![C64::new(0.0, 0.0); n];
        Self {
            k: [z(), z(), z(), z(), z(), z(), z()],
            stage: z(),
            y_new: z(),
        }
    }
}

fn combine(out: &mut [C64], y: &[C64], h: f64, terms: &[(f64, &[C64])]) {
    for (i, o) in out.iter_mut().enumerate() {
        let mut acc = C64::new(0.0, 0.0);
        for (c, k) in terms {
            acc += k[i] * *c;
        }
        *o = y[i] + acc * h;
    }
}

/// One trial step from `(t, y)` of size `h`; `ws.k[0]` must hold `L(t)y`.
/// Leaves the proposal in `ws.y_new`, `L(t+h) y_new` in `ws.k[6]` and
/// returns the scaled error norm.
fn try_step(l: &Liouvillian, t: f64, y: &[C64], h: f64, ws: &mut Workspace, opts: &EvolveOptions) -> f64 {
    let Workspace { k, stage, y_new } = ws;
    let [k1, k2, k3, k4, k5, k6, k7] = k;

    combine(stage, y, h, &[(A21, k1)]);
    l.apply_into(t + C2 * h, stage, k2);
    combine(stage, y, h, &[(A31, k1), (A32, k2)]);
    l.apply_into(t + C3 * h, stage, k3);
    combine(stage, y, h, &[(A41, k1), (A42, k2), (A43, k3)]);
    l.apply_into(t + C4 * h, stage, k4);
    combine(stage, y, h, &[(A51, k1), (A52, k2), (A53, k3), (A54, k4)]);
    l.apply_into(t + C5 * h, stage, k5);
    combine(stage, y, h, &[(A61, k1), (A62, k2), (A63, k3), (A64, k4), (A65, k5)]);
    l.apply_into(t + h, stage, k6);
    combine(y_new, y, h, &[(B1, k1), (B3, k3), (B4, k4), (B5, k5), (B6, k6)]);
    l.apply_into(t + h, y_new, k7);

    let mut sum = 0.0;
    for i in 0..y.len() {
        let e = (k1[i] * E1 + k3[i] * E3 + k4[i] * E4 + k5[i] * E5 + k6[i] * E6 + k7[i] * E7) * h;
        let sc = opts.atol + opts.rtol * y[i].norm().max(y_new[i].norm());
        sum += e.norm_sqr() / (sc * sc);
    }
    (sum / y.len() as f64).sqrt()
}

fn rms(v: &[C64], y: &[C64], opts: &EvolveOptions) -> f64 {
    let s: f64 = v
        .iter()
        .zip(y)
        .map(|(a, b)| {
            let sc = opts.atol + opts.rtol * b.norm();
            a.norm_sqr() / (sc * sc)
        })
        .sum();
    (s / v.len() as f64).sqrt()
}

/// Integrates from `times[0]` and hands the symmetrized state at every
/// sample time to `on_sample`.
pub fn evolve_with<F>(
    l: &Liouvillian,
    rho0: &DensityMatrix,
    times: &[f64],
    opts: &EvolveOptions,
    mut on_sample: F,
) -> Result<EvolveStats>
where
    F: FnMut(f64, &DensityMatrix) -> Result<()>,
{
    l.tag().ensure_same(&rho0.tag(), "initial state")?;
    if times.is_empty() {
        return Err(QsimError::InvalidArgument("no sample times".into()));
    }
    if times.iter().any(|t| !t.is_finite()) || times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(QsimError::InvalidArgument(
            "sample times must be finite and strictly increasing".into(),
        ));
    }
    if !(opts.rtol > 0.0) || !(opts.atol > 0.0) {
        return Err(QsimError::InvalidArgument("tolerances must be positive".into()));
    }

    let tag = l.tag();
    let trace0 = rho0.trace().re;
    let mut stats = EvolveStats::default();
    let mut y = rho0.to_vec();
    let n = y.len();
    let mut ws = Workspace::new(n);
    let mut t = times[0];

    let mut sample = |t: f64, y: &mut Vec<C64>, stats: &mut EvolveStats| -> Result<()> {
        let mut rho = DensityMatrix::from_vec(tag, y)?;
        let herm = rho.symmetrize();
        let drift = (rho.trace().re - trace0).abs();
        stats.max_hermiticity_drift = stats.max_hermiticity_drift.max(herm);
        stats.max_trace_drift = stats.max_trace_drift.max(drift);
        if herm > 1e-9 {
            log::debug!("hermiticity drift {herm:.2e} removed at t = {t:.4e}");
        }
        if drift > TRACE_DRIFT_TOL {
            return Err(QsimError::ToleranceNotMet(format!(
                "trace drift {drift:.3e} at t = {t:.4e} s"
            )));
        }
        y.copy_from_slice(rho.data().as_slice());
        on_sample(t, &rho)
    };

    sample(t, &mut y, &mut stats)?;
    if times.len() == 1 {
        return Ok(stats);
    }

    l.apply_into(t, &y, &mut ws.k[0]);
    let span = times[times.len() - 1] - t;

    // starting step from the size of the derivative
    let d0 = rms(&y, &y, opts);
    let d1 = rms(&ws.k[0], &y, opts);
    let mut h = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 * span } else { 0.01 * d0 / d1 };
    h = h.min(span);

    let mut next = 1;
    let mut last_rejected = false;
    while next < times.len() {
        let target = times[next];
        let remaining = target - t;
        let clipped = h >= remaining;
        let step = if clipped { remaining } else { h };

        if step < 1e-14 * span.max(t.abs()) {
            return Err(QsimError::StepUnderflow { t, step });
        }
        if stats.accepted_steps + stats.rejected_steps >= opts.max_steps {
            return Err(QsimError::ToleranceNotMet(format!(
                "step budget of {} exhausted at t = {t:.4e} s",
                opts.max_steps
            )));
        }

        let err = try_step(l, t, &y, step, &mut ws, opts);
        if !err.is_finite() {
            stats.rejected_steps += 1;
            h = step * 0.2;
            last_rejected = true;
            continue;
        }
        let mut fac = 0.9 * err.powf(-0.2);
        if err <= 1.0 {
            stats.accepted_steps += 1;
            t = if clipped { target } else { t + step };
            std::mem::swap(&mut y, &mut ws.y_new);
            let (first, rest) = ws.k.split_at_mut(1);
            std::mem::swap(&mut first[0], &mut rest[5]);
            if last_rejected {
                fac = fac.min(1.0);
            }
            // a clipped step says nothing about the natural step size
            let proposal = step * fac.clamp(0.2, 5.0);
            h = if clipped { h.max(proposal) } else { proposal };
            last_rejected = false;
            if clipped {
                sample(t, &mut y, &mut stats)?;
                // symmetrization may have touched y
                l.apply_into(t, &y, &mut ws.k[0]);
                next += 1;
            }
        } else {
            stats.rejected_steps += 1;
            h = step * fac.clamp(0.2, 1.0);
            last_rejected = true;
        }
    }
    log::debug!(
        "integration finished: {} accepted, {} rejected, trace drift {:.2e}",
        stats.accepted_steps,
        stats.rejected_steps,
        stats.max_trace_drift
    );
    Ok(stats)
}
