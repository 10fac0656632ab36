//! Fixed-step integration of `d/dt D z_t = F(t, z_t)`.
//!
//! The default route integrates `y(t) = D z_t` with Heun's predictor-corrector
//! and recovers the newest sample from `z(t) = y(t) + ∫ [dν] z_t`. That
//! recovery is explicit unless the neutral measure has mass within one step
//! of zero, in which case it is closed by Picard iteration.
//!
//! For diagonal atomic neutral parts a second mode follows the method of
//! steps, `z_i(t) = γ_i z_i(t - α_i) + c_i + ∫_0^t F_i`, with the integral
//! accumulated by the implicit trapezoidal rule. It serves as an independent
//! cross-check of the default route.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::history::{History, Trajectory, Window};
use crate::neutral::NeutralOperator;

/// A system `d/dt D z_t = F(t, z_t)` with a fixed neutral operator `D`.
pub trait NeutralSystem: Sync {
    fn dim(&self) -> usize;
    fn neutral(&self) -> &NeutralOperator;
    /// `F(t, x)` written into `out`.
    fn rhs(&self, t: f64, x: &Window<'_>, out: &mut [f64]);
    /// Farthest lag read by `F` or `D`.
    fn max_lag(&self) -> f64;

    /// Mass of all measures beyond `horizon`.
    fn tail_mass(&self, horizon: f64) -> f64 {
        self.neutral().tail_mass(horizon)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    #[default]
    Heun,
    Euler,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Integrate `y = D z` and recover `z`.
    #[default]
    Transformed,
    /// Accumulate `∫ F` directly; needs a diagonal atomic neutral part.
    MethodOfSteps,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IntegratorConfig {
    pub dt: f64,
    pub t_end: f64,
    pub t0: f64,
    pub scheme: Scheme,
    pub mode: Mode,
    pub picard_tol: f64,
    pub picard_max: usize,
}

impl IntegratorConfig {
    pub fn new(dt: f64, t_end: f64) -> Self {
        Self {
            dt,
            t_end,
            t0: 0.0,
            scheme: Scheme::Heun,
            mode: Mode::Transformed,
            picard_tol: 1e-12,
            picard_max: 50,
        }
    }

    pub fn with_t0(mut self, t0: f64) -> Self {
        self.t0 = t0;
        self
    }

    pub fn with_scheme(mut self, scheme: Scheme) -> Self {
        self.scheme = scheme;
        self
    }

    pub fn with_mode(mut self, mode: Mode) -> Self {
        self.mode = mode;
        self
    }

    /// Number of steps to reach `t_end` (which is rounded to the grid).
    pub fn steps(&self) -> usize {
        (self.t_end / self.dt - 1e-9).ceil().max(0.0) as usize
    }
}

/// Smallest grid horizon covering `max_lag` with room for the interpolation
/// stencil.
pub fn default_horizon(max_lag: f64, dt: f64) -> f64 {
    ((max_lag / dt - 1e-9).ceil() + 3.0) * dt
}

#[derive(Debug, Error)]
pub enum IntegrateError {
    #[error("initial history has dimension {got}, system has {expected}")]
    Dim { expected: usize, got: usize },
    #[error("initial history step {got} differs from integrator step {expected}")]
    Step { expected: f64, got: f64 },
    #[error("invalid step {0}")]
    BadStep(f64),
    #[error("neutral operator rejected: gamma = {0} >= 1")]
    Unstable(f64),
    #[error("neutral atom at lag {lag} is closer to zero than the step {dt}")]
    AtomTooClose { lag: f64, dt: f64 },
    #[error("method-of-steps mode needs a diagonal atomic neutral operator")]
    NotAtomic,
    #[error(
        "Picard iteration failed at step {step}: residual {residual:e} after {iterations} sweeps"
    )]
    Picard {
        step: usize,
        residual: f64,
        iterations: usize,
    },
    #[error("non-finite state at step {step}")]
    NonFinite { step: usize },
}

struct Scratch {
    f0: Vec<f64>,
    f1: Vec<f64>,
    y: Vec<f64>,
    target: Vec<f64>,
    nu: Vec<f64>,
}

impl Scratch {
    fn new(m: usize) -> Self {
        Self {
            f0: vec![0.0; m],
            f1: vec![0.0; m],
            y: vec![0.0; m],
            target: vec![0.0; m],
            nu: vec![0.0; m],
        }
    }
}

fn validate<S: NeutralSystem>(
    sys: &S,
    x0: &History,
    cfg: &IntegratorConfig,
) -> Result<(), IntegrateError> {
    if !(cfg.dt.is_finite() && cfg.dt > 0.0) {
        return Err(IntegrateError::BadStep(cfg.dt));
    }
    if x0.dim() != sys.dim() {
        return Err(IntegrateError::Dim {
            expected: sys.dim(),
            got: x0.dim(),
        });
    }
    if (x0.step() - cfg.dt).abs() > 1e-12 * cfg.dt {
        return Err(IntegrateError::Step {
            expected: cfg.dt,
            got: x0.step(),
        });
    }
    let nu = sys.neutral();
    let gamma = nu.gamma();
    if gamma >= 1.0 {
        return Err(IntegrateError::Unstable(gamma));
    }
    let m = sys.dim();
    for i in 0..m {
        for j in 0..m {
            if let Some(mu) = nu.entry(i, j) {
                if let Some(&(s, _)) = mu.atoms().iter().find(|a| -a.0 < cfg.dt * (1.0 - 1e-9)) {
                    return Err(IntegrateError::AtomTooClose {
                        lag: -s,
                        dt: cfg.dt,
                    });
                }
            }
        }
    }
    Ok(())
}

/// Integrates from `x0` (whose step must equal `cfg.dt`) up to `cfg.t_end`.
pub fn integrate<S: NeutralSystem>(
    sys: &S,
    x0: &History,
    cfg: &IntegratorConfig,
) -> Result<Trajectory, IntegrateError> {
    validate(sys, x0, cfg)?;
    let mut traj = Trajectory::start(x0, cfg.t0);
    traj.stats.tail_mass = sys.tail_mass(x0.horizon());
    match cfg.mode {
        Mode::Transformed => transformed(sys, &mut traj, cfg)?,
        Mode::MethodOfSteps => {
            let (gamma, alpha) = sys
                .neutral()
                .as_atomic_diagonal()
                .ok_or(IntegrateError::NotAtomic)?;
            method_of_steps(sys, &mut traj, cfg, &gamma, &alpha)?;
        }
    }
    Ok(traj)
}

/// Sets row `k` so that `D z` at node `k` equals `target`.
#[allow(clippy::too_many_arguments)]
fn recover(
    nu: &NeutralOperator,
    implicit: bool,
    buf: &mut [f64],
    m: usize,
    dt: f64,
    k: usize,
    target: &[f64],
    scratch: &mut [f64],
    cfg: &IntegratorConfig,
    stats: &mut crate::history::RunStats,
) -> Result<(), IntegrateError> {
    if nu.is_zero() {
        buf[k * m..(k + 1) * m].copy_from_slice(target);
        return Ok(());
    }
    let mut iterations = 0;
    loop {
        nu.integral_into(&Window::new(buf, m, dt, k), scratch);
        let row = &mut buf[k * m..(k + 1) * m];
        let mut update = 0.0f64;
        let mut scale = 1.0f64;
        for i in 0..m {
            let v = target[i] + scratch[i];
            update = update.max((v - row[i]).abs());
            scale = scale.max(v.abs());
            row[i] = v;
        }
        iterations += 1;
        if !implicit {
            return Ok(());
        }
        stats.picard_max_iters = stats.picard_max_iters.max(iterations);
        if update <= cfg.picard_tol * scale {
            stats.picard_max_residual = stats.picard_max_residual.max(update);
            return Ok(());
        }
        if iterations >= cfg.picard_max {
            return Err(IntegrateError::Picard {
                step: k,
                residual: update,
                iterations,
            });
        }
    }
}

fn transformed<S: NeutralSystem>(
    sys: &S,
    traj: &mut Trajectory,
    cfg: &IntegratorConfig,
) -> Result<(), IntegrateError> {
    let m = sys.dim();
    let dt = cfg.dt;
    let nu = sys.neutral();
    let implicit = nu.min_lag().is_some_and(|l| l < dt * (1.0 - 1e-9));
    let steps = cfg.steps();
    let start = traj.buffer().len() / m - 1;
    let mut s = Scratch::new(m);
    let mut stats = std::mem::take(&mut traj.stats);
    let buf = traj.buffer_mut();
    buf.reserve(steps * m);
    {
        let w = Window::new(buf, m, dt, start);
        s.y = nu.apply(&w);
    }
    for n in 0..steps {
        let k = start + n;
        let t = cfg.t0 + n as f64 * dt;
        let t1 = cfg.t0 + (n + 1) as f64 * dt;
        sys.rhs(t, &Window::new(buf, m, dt, k), &mut s.f0);
        for i in 0..m {
            s.target[i] = s.y[i] + dt * s.f0[i];
        }
        buf.extend_from_within(k * m..(k + 1) * m);
        recover(
            nu,
            implicit,
            buf,
            m,
            dt,
            k + 1,
            &s.target,
            &mut s.nu,
            cfg,
            &mut stats,
        )?;
        if cfg.scheme == Scheme::Heun {
            sys.rhs(t1, &Window::new(buf, m, dt, k + 1), &mut s.f1);
            for i in 0..m {
                s.target[i] = s.y[i] + 0.5 * dt * (s.f0[i] + s.f1[i]);
            }
            recover(
                nu,
                implicit,
                buf,
                m,
                dt,
                k + 1,
                &s.target,
                &mut s.nu,
                cfg,
                &mut stats,
            )?;
        }
        s.y.copy_from_slice(&s.target);
        if buf[(k + 1) * m..].iter().any(|v| !v.is_finite()) {
            return Err(IntegrateError::NonFinite { step: n + 1 });
        }
    }
    stats.steps += steps;
    traj.stats = stats;
    Ok(())
}

fn method_of_steps<S: NeutralSystem>(
    sys: &S,
    traj: &mut Trajectory,
    cfg: &IntegratorConfig,
    gamma: &[f64],
    alpha: &[f64],
) -> Result<(), IntegrateError> {
    let m = sys.dim();
    let dt = cfg.dt;
    let steps = cfg.steps();
    let start = traj.buffer().len() / m - 1;
    let mut s = Scratch::new(m);
    let mut stats = std::mem::take(&mut traj.stats);
    let buf = traj.buffer_mut();
    buf.reserve(steps * m);
    let base: Vec<f64> = {
        use crate::history::PastSampler;
        let w = Window::new(buf, m, dt, start);
        (0..m)
            .map(|i| w.component(i, 0.0) - gamma[i] * w.component(i, -alpha[i]))
            .collect()
    };
    let mut integral = vec![0.0; m];
    sys.rhs(cfg.t0, &Window::new(buf, m, dt, start), &mut s.f0);
    for n in 0..steps {
        use crate::history::PastSampler;
        let k = start + n;
        let t1 = cfg.t0 + (n + 1) as f64 * dt;
        let predicted: Vec<f64> = (0..m).map(|i| buf[k * m + i]).collect();
        buf.extend_from_slice(&predicted);
        let mut iterations = 0;
        loop {
            sys.rhs(t1, &Window::new(buf, m, dt, k + 1), &mut s.f1);
            let lagged: Vec<f64> = {
                let w = Window::new(buf, m, dt, k + 1);
                (0..m)
                    .map(|i| gamma[i] * w.component(i, -alpha[i]))
                    .collect()
            };
            let row = &mut buf[(k + 1) * m..(k + 2) * m];
            let mut update = 0.0f64;
            let mut scale = 1.0f64;
            for i in 0..m {
                s.y[i] = integral[i] + 0.5 * dt * (s.f0[i] + s.f1[i]);
                let v = lagged[i] + base[i] + s.y[i];
                update = update.max((v - row[i]).abs());
                scale = scale.max(v.abs());
                row[i] = v;
            }
            iterations += 1;
            stats.picard_max_iters = stats.picard_max_iters.max(iterations);
            if update <= cfg.picard_tol * scale {
                stats.picard_max_residual = stats.picard_max_residual.max(update);
                break;
            }
            if iterations >= cfg.picard_max {
                return Err(IntegrateError::Picard {
                    step: n + 1,
                    residual: update,
                    iterations,
                });
            }
        }
        integral.copy_from_slice(&s.y);
        sys.rhs(t1, &Window::new(buf, m, dt, k + 1), &mut s.f0);
        if buf[(k + 1) * m..].iter().any(|v| !v.is_finite()) {
            return Err(IntegrateError::NonFinite { step: n + 1 });
        }
    }
    stats.steps += steps;
    traj.stats = stats;
    Ok(())
}

/// Wraps a closure `F(t, x)` together with a neutral operator; handy for
/// equations that are not compartmental models.
pub struct FnSystem<F> {
    pub neutral: NeutralOperator,
    pub max_lag: f64,
    pub f: F,
}

impl<F> FnSystem<F>
where
    F: Fn(f64, &Window<'_>, &mut [f64]) + Sync,
{
    pub fn new(neutral: NeutralOperator, max_lag: f64, f: F) -> Self {
        Self {
            neutral,
            max_lag,
            f,
        }
    }
}

impl<F> NeutralSystem for FnSystem<F>
where
    F: Fn(f64, &Window<'_>, &mut [f64]) + Sync,
{
    fn dim(&self) -> usize {
        self.neutral.dim()
    }

    fn neutral(&self) -> &NeutralOperator {
        &self.neutral
    }

    fn rhs(&self, t: f64, x: &Window<'_>, out: &mut [f64]) {
        (self.f)(t, x, out)
    }

    fn max_lag(&self) -> f64 {
        self.max_lag
    }
}
