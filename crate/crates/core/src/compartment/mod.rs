//! Closed compartmental systems with transit delays in the pipes and a
//! neutral term in each compartment.
//!
//! Compartment `i` holds `D_i x` units of material; material leaves `i`
//! towards `j` at rate `g_ji(t, x_i(0))` and arrives after a random transit
//! time distributed as `μ_ji`.

mod certify;
mod transport;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::history::{History, PastSampler, Window};
use crate::integrator::NeutralSystem;
use crate::measure::{DelayMeasure, MeasureError};
use crate::neutral::{NeutralError, NeutralOperator};

pub use certify::{
    certify_rate_finite, certify_rate_infinite, check_finite_family, check_infinite_family,
    check_quasimonotone, damping_rate, maximize_on_log_grid, CertReport, Check, ComponentCert,
    KHat, QuasimonotoneReport, QuasimonotoneWitness, BETA_RANGE,
};
pub use transport::{Driver, Family, Modulation, TransportFunction};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("{0}")]
    Shape(String),
    #[error("transport[{i}][{j}]: {msg}")]
    Transport { i: usize, j: usize, msg: String },
    #[error("transport[{i}][{j}] has no pipe measure")]
    MissingPipe { i: usize, j: usize },
    #[error("{0}")]
    Parameter(String),
    #[error(transparent)]
    Measure(#[from] MeasureError),
    #[error(transparent)]
    Neutral(#[from] NeutralError),
}

/// Delay structure of the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DelaySpec {
    /// General measures: diagonal neutral part `ν_i` and pipes `μ_ij`.
    Infinite {
        neutral: Vec<Option<DelayMeasure>>,
        pipes: Vec<Vec<Option<DelayMeasure>>>,
    },
    /// `D_i x = x_i(0) - γ_i x_i(-α_i)`, pipes `μ_ij = δ_{-ρ_ij}`.
    Finite {
        gamma: Vec<f64>,
        alpha: Vec<f64>,
        rho: Vec<Vec<Option<f64>>>,
    },
}

/// Serializable model description; `transport[i][j]` is `g_ij`, the flux
/// from compartment `j` into compartment `i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub m: usize,
    #[serde(default)]
    pub driver: Driver,
    pub transport: Vec<Vec<Option<TransportFunction>>>,
    pub delays: DelaySpec,
    /// Rates of the diagonal ordering matrix `A = diag(-β)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DelayKind {
    Infinite,
    Finite,
}

#[derive(Debug, Clone)]
struct Inflow {
    into: usize,
    from: usize,
    g: TransportFunction,
    points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone)]
pub struct CompartmentModel {
    spec: ModelSpec,
    m: usize,
    kind: DelayKind,
    transport: Vec<Option<TransportFunction>>,
    pipes: Vec<Option<DelayMeasure>>,
    neutral: NeutralOperator,
    outflows: Vec<(usize, TransportFunction)>,
    inflows: Vec<Inflow>,
    max_lag: f64,
}

fn check_square<T>(name: &str, rows: &[Vec<T>], m: usize) -> Result<(), ModelError> {
    if rows.len() != m || rows.iter().any(|r| r.len() != m) {
        return Err(ModelError::Shape(format!("{name} must be {m}x{m}")));
    }
    Ok(())
}

fn check_len<T>(name: &str, v: &[T], m: usize) -> Result<(), ModelError> {
    if v.len() != m {
        return Err(ModelError::Shape(format!(
            "{name} must have length {m}, got {}",
            v.len()
        )));
    }
    Ok(())
}

impl CompartmentModel {
    pub fn new(spec: ModelSpec) -> Result<Self, ModelError> {
        let m = spec.m;
        if m == 0 {
            return Err(ModelError::Shape("m must be positive".into()));
        }
        check_square("transport", &spec.transport, m)?;
        let transport: Vec<Option<TransportFunction>> =
            spec.transport.iter().flatten().copied().collect();
        for (idx, g) in transport.iter().enumerate() {
            if let Some(g) = g {
                g.validate(&spec.driver)
                    .map_err(|msg| ModelError::Transport {
                        i: idx / m,
                        j: idx % m,
                        msg,
                    })?;
            }
        }
        if spec.driver.phase.len() > spec.driver.frequencies.len() {
            return Err(ModelError::Shape(
                "driver.phase longer than driver.frequencies".into(),
            ));
        }
        if let Some(beta) = &spec.beta {
            check_len("beta", beta, m)?;
            if beta.iter().any(|&b| !(b.is_finite() && b > 0.0)) {
                return Err(ModelError::Parameter(
                    "beta entries must be positive".into(),
                ));
            }
        }

        let (kind, pipes, neutral) = match &spec.delays {
            DelaySpec::Infinite { neutral, pipes } => {
                check_len("delays.neutral", neutral, m)?;
                check_square("delays.pipes", pipes, m)?;
                let nu = neutral
                    .iter()
                    .map(|n| n.clone().unwrap_or_else(DelayMeasure::zero))
                    .collect();
                let pipes: Vec<Option<DelayMeasure>> = pipes.iter().flatten().cloned().collect();
                (DelayKind::Infinite, pipes, NeutralOperator::diagonal(nu)?)
            }
            DelaySpec::Finite { gamma, alpha, rho } => {
                check_len("delays.gamma", gamma, m)?;
                check_len("delays.alpha", alpha, m)?;
                check_square("delays.rho", rho, m)?;
                if alpha.iter().any(|&a| !(a.is_finite() && a > 0.0)) {
                    return Err(ModelError::Parameter(
                        "delays.alpha entries must be positive".into(),
                    ));
                }
                let pipes = rho
                    .iter()
                    .flatten()
                    .map(|r| match r {
                        Some(r) if *r >= 0.0 => DelayMeasure::atom(-r, 1.0).map(Some),
                        Some(r) => Err(MeasureError::PositiveLocation(-r)),
                        None => Ok(None),
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                (
                    DelayKind::Finite,
                    pipes,
                    NeutralOperator::atomic(gamma, alpha)?,
                )
            }
        };

        let mut outflows = Vec::new();
        let mut inflows = Vec::new();
        for i in 0..m {
            for j in 0..m {
                if let Some(g) = transport[j * m + i] {
                    outflows.push((i, g));
                }
                if let Some(g) = transport[i * m + j] {
                    let pipe = pipes[i * m + j]
                        .as_ref()
                        .ok_or(ModelError::MissingPipe { i, j })?;
                    inflows.push(Inflow {
                        into: i,
                        from: j,
                        g,
                        points: pipe.points().collect(),
                    });
                }
            }
        }
        let pipe_lag = inflows
            .iter()
            .flat_map(|f| f.points.iter().map(|p| -p.0))
            .fold(0.0, f64::max);
        let max_lag = pipe_lag.max(neutral.max_lag());
        Ok(Self {
            spec,
            m,
            kind,
            transport,
            pipes,
            neutral,
            outflows,
            inflows,
            max_lag,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn kind(&self) -> DelayKind {
        self.kind
    }

    pub fn driver(&self) -> &Driver {
        &self.spec.driver
    }

    /// `g_ij`: flux from `j` into `i`.
    pub fn transport(&self, i: usize, j: usize) -> Option<&TransportFunction> {
        self.transport[i * self.m + j].as_ref()
    }

    /// `μ_ij`, only meaningful where `g_ij` is present.
    pub fn pipe(&self, i: usize, j: usize) -> Option<&DelayMeasure> {
        self.pipes[i * self.m + j].as_ref()
    }

    /// Largest lag of any neutral or pipe measure.
    pub fn max_lag(&self) -> f64 {
        self.max_lag
    }

    pub fn neutral_operator(&self) -> &NeutralOperator {
        &self.neutral
    }

    /// Configured ordering rates, if any.
    pub fn beta(&self) -> Option<&[f64]> {
        self.spec.beta.as_deref()
    }

    /// `(γ_i, α_i)` for the finite-delay family.
    pub fn finite_neutral(&self) -> Option<(&[f64], &[f64])> {
        match &self.spec.delays {
            DelaySpec::Finite { gamma, alpha, .. } => Some((gamma, alpha)),
            DelaySpec::Infinite { .. } => None,
        }
    }

    /// `ν_i`, the diagonal neutral measure of compartment `i`.
    pub fn nu(&self, i: usize) -> DelayMeasure {
        self.neutral
            .entry(i, i)
            .cloned()
            .unwrap_or_else(DelayMeasure::zero)
    }

    /// `Σ_i ν_i(-inf, 0]`.
    pub fn neutral_mass_sum(&self) -> f64 {
        (0..self.m).map(|i| self.nu(i).mass()).sum()
    }

    /// `L⁺_i = Σ_j l⁺_ji`, the largest total outflow rate of compartment `i`.
    pub fn outflow_bound(&self, i: usize) -> f64 {
        (0..self.m)
            .filter_map(|j| self.transport(j, i))
            .map(|g| g.l_plus())
            .sum()
    }

    /// Lipschitz constant of `F` in the sup norm.
    pub fn lipschitz_bound(&self) -> f64 {
        (0..self.m)
            .map(|i| {
                let inflow: f64 = (0..self.m)
                    .filter_map(|j| {
                        let g = self.transport(i, j)?;
                        Some(g.l_plus() * self.pipe(i, j).map_or(0.0, |p| p.total_variation()))
                    })
                    .sum();
                self.outflow_bound(i) + inflow
            })
            .fold(0.0, f64::max)
    }

    /// `F(t, x)` written into `out`.
    pub fn rhs_into<P: PastSampler + ?Sized>(&self, t: f64, x: &P, out: &mut [f64]) {
        let drv = &self.spec.driver;
        out[..self.m].fill(0.0);
        for &(i, ref g) in &self.outflows {
            out[i] -= g.eval(drv, t, x.component(i, 0.0));
        }
        for f in &self.inflows {
            let mut acc = 0.0;
            for &(s, w) in &f.points {
                acc += w * f.g.eval_lagged(drv, t, s, x.component(f.from, s));
            }
            out[f.into] += acc;
        }
    }

    /// `F(t, x)` for a stored history.
    pub fn eval_f(&self, t: f64, x: &History) -> Vec<f64> {
        let mut out = vec![0.0; self.m];
        self.rhs_into(t, &x.window(), &mut out);
        out
    }

    /// Total material in the system: the compartment contents `Σ D_i x` plus
    /// everything in transit, `ΣΣ ∫ (∫_s^0 g(t+τ, x(τ)) dτ) dμ(s)`.
    ///
    /// Inner integrals use the trapezoidal rule on the grid of `x`, with a
    /// partial last interval for off-grid transit times.
    pub fn total_mass<P: PastSampler + ?Sized>(&self, t: f64, x: &P) -> f64 {
        let contents: f64 = self.neutral.apply(x).iter().sum();
        let drv = &self.spec.driver;
        let dt = x.step();
        let mut transit = 0.0;
        let mut cum: Vec<f64> = Vec::new();
        let mut vals: Vec<f64> = Vec::new();
        for f in &self.inflows {
            let lag = f.points.iter().map(|p| -p.0).fold(0.0, f64::max);
            let nodes = (lag / dt + 1e-9).floor() as usize;
            vals.clear();
            cum.clear();
            for k in 0..=nodes {
                let s = -(k as f64) * dt;
                vals.push(f.g.eval_lagged(drv, t, s, x.component(f.from, s)));
            }
            cum.push(0.0);
            for k in 1..=nodes {
                cum.push(cum[k - 1] + 0.5 * dt * (vals[k - 1] + vals[k]));
            }
            for &(s, w) in &f.points {
                let k = ((-s) / dt + 1e-9).floor() as usize;
                let k = k.min(nodes);
                let rest = -s - k as f64 * dt;
                let mut inner = cum[k];
                if rest > 1e-9 * dt {
                    let end = f.g.eval_lagged(drv, t, s, x.component(f.from, s));
                    inner += 0.5 * rest * (vals[k] + end);
                }
                transit += w * inner;
            }
        }
        contents + transit
    }

    /// Mass of all delay measures beyond `horizon`.
    pub fn tail_beyond(&self, horizon: f64) -> f64 {
        let pipes: f64 = self
            .inflows
            .iter()
            .map(|f| {
                f.points
                    .iter()
                    .filter(|p| -p.0 > horizon)
                    .map(|p| p.1.abs())
                    .sum::<f64>()
            })
            .sum();
        pipes + self.neutral.tail_mass(horizon)
    }
}

impl NeutralSystem for CompartmentModel {
    fn dim(&self) -> usize {
        self.m
    }

    fn neutral(&self) -> &NeutralOperator {
        &self.neutral
    }

    fn rhs(&self, t: f64, x: &Window<'_>, out: &mut [f64]) {
        self.rhs_into(t, x, out);
    }

    fn max_lag(&self) -> f64 {
        self.max_lag
    }

    fn tail_mass(&self, horizon: f64) -> f64 {
        self.tail_beyond(horizon)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn loop1(sigma: f64, gamma: f64, alpha: f64) -> CompartmentModel {
        CompartmentModel::new(ModelSpec {
            m: 1,
            driver: Driver::autonomous(),
            transport: vec![vec![Some(TransportFunction::linear(1.0))]],
            delays: DelaySpec::Finite {
                gamma: vec![gamma],
                alpha: vec![alpha],
                rho: vec![vec![Some(sigma)]],
            },
            beta: None,
        })
        .unwrap()
    }

    #[test]
    fn f_vanishes_at_zero() {
        let model = loop1(1.0, 0.3, 0.5);
        let x = History::constant(&[0.0], 0.01, 2.0);
        assert_eq!(model.eval_f(0.0, &x), vec![0.0]);
        assert_eq!(model.total_mass(0.0, &x), 0.0);
    }

    #[test]
    fn single_loop_substitution() {
        let model = loop1(0.75, 0.0, 0.5);
        let x = History::from_fn(1, 0.01, 2.0, |s| vec![(3.0 * s).cos() + s]);
        let f = model.eval_f(0.0, &x);
        let expected = -1.0 + ((3.0 * -0.75f64).cos() - 0.75);
        assert!((f[0] - expected).abs() < 1e-12);
    }

    #[test]
    fn constant_mass_closed_form() {
        let (sigma, gamma, c) = (1.3, 0.25, 2.0);
        let model = loop1(sigma, gamma, 0.4);
        let x = History::constant(&[c], 1e-3, 2.0);
        let expected = c * (1.0 - gamma) + sigma * c;
        assert!((model.total_mass(0.0, &x) - expected).abs() < 1e-12);
    }

    #[test]
    fn mass_linear_in_state() {
        let model = loop1(0.9, 0.2, 0.3);
        let x = History::from_fn(1, 0.01, 2.0, |s| vec![s.sin() + 0.5 * s * s]);
        let a = -1.75;
        let lhs = model.total_mass(0.3, &x.scale(a));
        let rhs = a * model.total_mass(0.3, &x);
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn missing_pipe_rejected() {
        let spec = ModelSpec {
            m: 1,
            driver: Driver::autonomous(),
            transport: vec![vec![Some(TransportFunction::linear(1.0))]],
            delays: DelaySpec::Infinite {
                neutral: vec![None],
                pipes: vec![vec![None]],
            },
            beta: None,
        };
        assert!(matches!(
            CompartmentModel::new(spec),
            Err(ModelError::MissingPipe { i: 0, j: 0 })
        ));
    }

    #[test]
    fn periodic_driver_recurrence_is_exact() {
        let spec = ModelSpec {
            m: 1,
            driver: Driver::periodic(0.5),
            transport: vec![vec![Some(
                TransportFunction::linear(1.0).modulated(0, 0.5, 1.0),
            )]],
            delays: DelaySpec::Finite {
                gamma: vec![0.1],
                alpha: vec![0.3],
                rho: vec![vec![Some(0.7)]],
            },
            beta: None,
        };
        let model = CompartmentModel::new(spec).unwrap();
        let x = History::from_fn(1, 0.01, 1.0, |s| vec![1.0 + s.sin()]);
        for k in 0..20 {
            let t = 0.25 * k as f64;
            assert_eq!(model.eval_f(t, &x), model.eval_f(t + 2.0, &x));
        }
    }
}
