//! Pseudo-spectral RK4 integration of `d_t theta + u . grad theta = 0`,
//! `u = grad^perp P(Lambda) theta`, in the odd-odd basis.
//!
//! Products are formed on the quarter lattice in the mixed-parity bases
//! (`u1 d1 theta` and `u2 d2 theta` are both odd-odd) and truncated with the
//! 2/3 rule. There is no dissipation; runs stop when the spectral tail grows.

use ndarray::Zip;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::spectral::{
    dealias_in_place, derivative, divergence, h2_norm, sobolev_norm, Field, MultiplierSpec, SpectralError,
    SpectralOps, Spectrum, ODD_ODD,
};

#[derive(Debug, Error)]
pub enum EvolutionError {
    #[error("time step {dt:.3e} exceeds the CFL limit {limit:.3e}")]
    Cfl { dt: f64, limit: f64 },
    #[error("non-finite state at t = {t} (step {step})")]
    NonFinite { t: f64, step: usize, last_good: Box<Spectrum> },
    #[error("invalid evolution config: {0}")]
    Config(String),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DtPolicy {
    /// `dt = cfl * h / max|u|`, recomputed every step
    Cfl(f64),
    Fixed(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvolutionConfig {
    pub multiplier: MultiplierSpec,
    pub dt_policy: DtPolicy,
    pub t_end: f64,
    /// emit a snapshot every this many steps
    pub snapshot_stride: usize,
    pub dealias: bool,
    /// stop once the top-third energy fraction exceeds this
    pub exhaustion_threshold: f64,
}

impl Default for EvolutionConfig {
    fn default() -> Self {
        Self {
            multiplier: MultiplierSpec::sqg(),
            dt_policy: DtPolicy::Cfl(0.4),
            t_end: 0.1,
            snapshot_stride: 1,
            dealias: true,
            exhaustion_threshold: 0.01,
        }
    }
}

impl EvolutionConfig {
    pub fn validate(&self) -> Result<(), EvolutionError> {
        self.multiplier.validate()?;
        let bad = |s: String| Err(EvolutionError::Config(s));
        match self.dt_policy {
            DtPolicy::Cfl(c) if !(c > 0.0 && c < 1.0) => return bad(format!("cfl = {c} not in (0, 1)")),
            DtPolicy::Fixed(dt) if !(dt > 0.0 && dt.is_finite()) => return bad(format!("dt = {dt} must be positive")),
            _ => {}
        }
        if !(self.t_end >= 0.0 && self.t_end.is_finite()) {
            return bad(format!("t_end = {} must be finite and nonnegative", self.t_end));
        }
        if self.snapshot_stride == 0 {
            return bad("snapshot_stride must be at least 1".into());
        }
        if !(self.exhaustion_threshold > 0.0 && self.exhaustion_threshold < 1.0) {
            return bad(format!("exhaustion_threshold = {} not in (0, 1)", self.exhaustion_threshold));
        }
        Ok(())
    }
}

/// Field-level diagnostics at one time.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldDiagnostics {
    pub t: f64,
    pub step: usize,
    pub dt: f64,
    pub l2: f64,
    pub linf: f64,
    /// smallest node value on the quarter
    pub min_value: f64,
    pub h2dot: f64,
    pub h2: f64,
    pub grad_inf: f64,
    pub umax: f64,
    pub tail_fraction: f64,
    /// largest divergence coefficient of the velocity used in this step,
    /// relative to `pi L max|u_hat|` (roundoff level)
    pub divergence: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Completed,
    Exhausted,
}

#[derive(Clone, Debug)]
pub struct Snapshot {
    pub t: f64,
    pub step: usize,
    pub theta: Spectrum,
}

#[derive(Clone, Debug)]
pub struct RunSummary {
    pub records: Vec<FieldDiagnostics>,
    pub stop: StopReason,
    pub t_final: f64,
    pub steps: usize,
    /// largest relative divergence over every step taken
    pub max_divergence: f64,
    pub final_state: Spectrum,
}

/// Owns the transform plans for one grid and multiplier.
#[derive(Clone, Debug)]
pub struct Stepper {
    ops: SpectralOps,
    mult: MultiplierSpec,
    dealias: bool,
    /// `step` refuses `dt * max|u| / h` above this
    pub cfl_limit: f64,
}

struct Rhs {
    value: Spectrum,
    umax: f64,
    divergence: f64,
}

impl Stepper {
    pub fn new(ops: SpectralOps, mult: MultiplierSpec, dealias: bool) -> Self {
        Self { ops, mult, dealias, cfl_limit: 1.0 }
    }

    pub fn ops(&self) -> &SpectralOps {
        &self.ops
    }

    fn rhs(&self, theta: &Spectrum) -> Result<Rhs, SpectralError> {
        let (u1s, u2s) = self.ops.velocity_from_scalar(theta, &self.mult)?;
        let scale = std::f64::consts::PI * self.ops.grid().half() as f64 * u1s.max_abs().max(u2s.max_abs());
        let div = if scale > 0.0 { divergence(&u1s, &u2s)?.max_abs() / scale } else { 0.0 };
        let u1 = self.ops.inverse(&u1s)?;
        let u2 = self.ops.inverse(&u2s)?;
        let t1 = self.ops.inverse(&derivative(theta, 0))?;
        let t2 = self.ops.inverse(&derivative(theta, 1))?;
        let mut prod = u1.values().clone();
        let mut umax = 0.0f64;
        Zip::from(&mut prod)
            .and(u1.values())
            .and(u2.values())
            .and(t1.values())
            .and(t2.values())
            .for_each(|p, &a, &b, &c, &d| {
                umax = umax.max(a.hypot(b));
                *p = -(a * c + b * d);
            });
        let mut value = self.ops.forward(&Field::odd_odd(self.ops.grid(), prod)?)?;
        if self.dealias {
            dealias_in_place(&mut value);
        }
        Ok(Rhs { value, umax, divergence: div })
    }

    /// `max |u|` on the lattice.
    pub fn max_speed(&self, theta: &Spectrum) -> Result<f64, SpectralError> {
        let (u1s, u2s) = self.ops.velocity_from_scalar(theta, &self.mult)?;
        let (u1, u2) = (self.ops.inverse(&u1s)?, self.ops.inverse(&u2s)?);
        Ok(Zip::from(u1.values()).and(u2.values()).fold(0.0f64, |m, a, b| m.max(a.hypot(*b))))
    }

    fn rk4(&self, theta: &Spectrum, dt: f64, k1: Rhs) -> Result<Spectrum, EvolutionError> {
        let h = self.ops.grid().spacing();
        let limit = self.cfl_limit * h / k1.umax.max(f64::MIN_POSITIVE);
        if dt > limit * (1.0 + 1e-12) {
            return Err(EvolutionError::Cfl { dt, limit });
        }
        let k2 = self.rhs(&theta.axpy(0.5 * dt, &k1.value))?;
        let k3 = self.rhs(&theta.axpy(0.5 * dt, &k2.value))?;
        let k4 = self.rhs(&theta.axpy(dt, &k3.value))?;
        let mut out = theta.clone();
        Zip::from(out.coeffs_mut())
            .and(k1.value.coeffs())
            .and(k2.value.coeffs())
            .and(k3.value.coeffs())
            .and(k4.value.coeffs())
            .for_each(|o, &a, &b, &c, &d| *o += dt / 6.0 * (a + 2.0 * b + 2.0 * c + d));
        Ok(out)
    }

    /// One RK4 step.
    pub fn step(&self, theta: &Spectrum, dt: f64) -> Result<Spectrum, EvolutionError> {
        let k1 = self.rhs(theta)?;
        self.rk4(theta, dt, k1)
    }

    pub fn diagnostics(&self, theta: &Spectrum, t: f64, step: usize, dt: f64, divergence: f64) -> Result<FieldDiagnostics, SpectralError> {
        let field = self.ops.inverse(theta)?;
        let (g1, g2) = self.ops.gradient(theta)?;
        let grad_inf = Zip::from(g1.values()).and(g2.values()).fold(0.0f64, |m, a, b| m.max(a.hypot(*b)));
        let min_value = field.values().iter().fold(f64::INFINITY, |m, v| m.min(*v));
        Ok(FieldDiagnostics {
            t,
            step,
            dt,
            l2: sobolev_norm(theta, 0.0)?,
            linf: field.max_abs(),
            min_value,
            h2dot: sobolev_norm(theta, 2.0)?,
            h2: h2_norm(theta),
            grad_inf,
            umax: self.max_speed(theta)?,
            tail_fraction: theta.tail_fraction(),
            divergence,
        })
    }
}

/// One RK4 step with a fresh stepper (CFL number limit 1).
pub fn step(theta: &Spectrum, dt: f64, mult: &MultiplierSpec) -> Result<Spectrum, EvolutionError> {
    Stepper::new(SpectralOps::new(theta.grid()), *mult, true).step(theta, dt)
}

/// Integrate from `data` to `cfg.t_end`, calling `on_snapshot` at `t = 0`,
/// every `snapshot_stride` steps, and at the final time.
pub fn run_with(
    data: &Field,
    cfg: &EvolutionConfig,
    mut on_snapshot: impl FnMut(&Snapshot, &FieldDiagnostics),
) -> Result<RunSummary, EvolutionError> {
    cfg.validate()?;
    if data.parity() != ODD_ODD {
        return Err(EvolutionError::Config("data must be odd-odd".into()));
    }
    let ops = SpectralOps::new(data.grid());
    let stepper = Stepper::new(ops.clone(), cfg.multiplier, cfg.dealias);
    let mut theta = ops.forward(data)?;
    if cfg.dealias {
        dealias_in_place(&mut theta);
    }
    let h = data.grid().spacing();
    let mut t = 0.0;
    let mut steps = 0usize;
    let mut records = Vec::new();

    let first = stepper.rhs(&theta)?;
    let d0 = stepper.diagnostics(&theta, 0.0, 0, 0.0, first.divergence)?;
    on_snapshot(&Snapshot { t, step: 0, theta: theta.clone() }, &d0);
    records.push(d0);
    let mut max_divergence = first.divergence;
    let mut pending = Some(first);
    let mut stop = StopReason::Completed;

    while t < cfg.t_end * (1.0 - 1e-14) {
        if theta.tail_fraction() > cfg.exhaustion_threshold {
            stop = StopReason::Exhausted;
            break;
        }
        let k1 = match pending.take() {
            Some(k) => k,
            None => stepper.rhs(&theta)?,
        };
        let divergence = k1.divergence;
        max_divergence = max_divergence.max(divergence);
        let mut dt = match cfg.dt_policy {
            DtPolicy::Cfl(c) => c * h / k1.umax.max(f64::MIN_POSITIVE),
            DtPolicy::Fixed(dt) => dt,
        };
        dt = dt.min(cfg.t_end - t);
        let next = stepper.rk4(&theta, dt, k1)?;
        if next.coeffs().iter().any(|v| !v.is_finite()) {
            return Err(EvolutionError::NonFinite { t, step: steps, last_good: Box::new(theta) });
        }
        theta = next;
        t += dt;
        steps += 1;
        let last = t >= cfg.t_end * (1.0 - 1e-14);
        if steps.is_multiple_of(cfg.snapshot_stride) || last || theta.tail_fraction() > cfg.exhaustion_threshold {
            let d = stepper.diagnostics(&theta, t, steps, dt, divergence)?;
            on_snapshot(&Snapshot { t, step: steps, theta: theta.clone() }, &d);
            records.push(d);
        }
    }
    if stop == StopReason::Completed && theta.tail_fraction() > cfg.exhaustion_threshold && t < cfg.t_end * (1.0 - 1e-14) {
        stop = StopReason::Exhausted;
    }
    Ok(RunSummary { records, stop, t_final: t, steps, max_divergence, final_state: theta })
}

/// [`run_with`] collecting every snapshot in memory.
pub fn run(data: &Field, cfg: &EvolutionConfig) -> Result<(RunSummary, Vec<Snapshot>), EvolutionError> {
    let mut snaps = Vec::new();
    let summary = run_with(data, cfg, |s, _| snaps.push(s.clone()))?;
    Ok((summary, snaps))
}
