//! Sampled phase-space elements and trajectories.
//!
//! A [`History`] stores a vector-valued function on a uniform grid over
//! `[-T, 0]` and extends it by the constant `x(-T)` further back, which makes
//! it a bounded, uniformly continuous function on `(-inf, 0]`.
//!
//! Two evaluation rules share the [`PastSampler`] trait: `History` itself
//! interpolates linearly; [`Window`] uses four-point Lagrange interpolation
//! and is what the integrator and the model functionals see.

use std::io::{BufRead, Write};

use thiserror::Error;

/// Node snapping tolerance in units of the grid step.
const NODE_EPS: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum HistoryError {
    #[error("time {0} is not a grid node")]
    OffGrid(f64),
    #[error("time {t} outside [{lo}, {hi}]")]
    OutOfRange { t: f64, lo: f64, hi: f64 },
    #[error("dimension mismatch: {0} vs {1}")]
    Dim(usize, usize),
    #[error("step mismatch: {0} vs {1}")]
    Step(f64, f64),
    #[error("csv: {0}")]
    Csv(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Read access to a function on `(-inf, 0]` sampled on a uniform grid.
pub trait PastSampler {
    fn dim(&self) -> usize;
    fn step(&self) -> f64;
    /// Component `i` at time `s <= 0`.
    fn component(&self, i: usize, s: f64) -> f64;

    fn eval(&self, s: f64) -> Vec<f64> {
        (0..self.dim()).map(|i| self.component(i, s)).collect()
    }
}

/// Uniformly sampled function on `[-T, 0]` with constant tail extension.
#[derive(Debug, Clone, PartialEq)]
pub struct History {
    dim: usize,
    step: f64,
    /// Row-major `(N+1) × dim`; row 0 is `s = -T`, row `N` is `s = 0`.
    samples: Vec<f64>,
}

fn snap(p: f64) -> Option<usize> {
    let r = p.round();
    ((p - r).abs() < NODE_EPS && r >= 0.0).then_some(r as usize)
}

impl History {
    pub fn new(dim: usize, step: f64, samples: Vec<f64>) -> Self {
        assert!(dim > 0, "history dimension must be positive");
        assert!(
            step > 0.0 && step.is_finite(),
            "history step must be positive"
        );
        assert!(
            samples.len() >= 2 * dim && samples.len().is_multiple_of(dim),
            "need at least two nodes of dimension {dim}"
        );
        Self { dim, step, samples }
    }

    /// Number of grid intervals needed to cover `horizon`.
    pub fn nodes_for(horizon: f64, step: f64) -> usize {
        ((horizon / step) - NODE_EPS).ceil().max(1.0) as usize
    }

    /// Samples `f` on the grid covering `[-horizon, 0]`.
    pub fn from_fn(
        dim: usize,
        step: f64,
        horizon: f64,
        mut f: impl FnMut(f64) -> Vec<f64>,
    ) -> Self {
        let n = Self::nodes_for(horizon, step);
        let mut samples = Vec::with_capacity((n + 1) * dim);
        for k in 0..=n {
            let s = -((n - k) as f64) * step;
            let v = f(s);
            assert_eq!(v.len(), dim, "generator returned wrong dimension");
            samples.extend(v);
        }
        Self::new(dim, step, samples)
    }

    pub fn constant(value: &[f64], step: f64, horizon: f64) -> Self {
        Self::from_fn(value.len(), step, horizon, |_| value.to_vec())
    }

    /// `x(s) = intercept + slope·s`.
    pub fn linear(intercept: &[f64], slope: &[f64], step: f64, horizon: f64) -> Self {
        assert_eq!(intercept.len(), slope.len());
        Self::from_fn(intercept.len(), step, horizon, |s| {
            intercept
                .iter()
                .zip(slope)
                .map(|(a, b)| a + b * s)
                .collect()
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn len(&self) -> usize {
        self.samples.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn intervals(&self) -> usize {
        self.len() - 1
    }

    pub fn horizon(&self) -> f64 {
        self.intervals() as f64 * self.step
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    /// Row `k` (node `s = -T + k·Δ`).
    pub fn node(&self, k: usize) -> &[f64] {
        &self.samples[k * self.dim..(k + 1) * self.dim]
    }

    /// Time of node `k`.
    pub fn node_time(&self, k: usize) -> f64 {
        -((self.intervals() - k) as f64) * self.step
    }

    /// Node index for grid time `s`.
    pub fn node_index(&self, s: f64) -> Result<usize, HistoryError> {
        let p = self.intervals() as f64 + s / self.step;
        match snap(p) {
            Some(k) if k <= self.intervals() => Ok(k),
            Some(_) => Err(HistoryError::OutOfRange {
                t: s,
                lo: -self.horizon(),
                hi: 0.0,
            }),
            None => Err(HistoryError::OffGrid(s)),
        }
    }

    pub fn at_zero(&self) -> &[f64] {
        self.node(self.intervals())
    }

    /// `sup_s |x(s)|` in the max-norm.
    pub fn sup_norm(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Applies `f` to every sample, keeping the grid.
    pub fn map(&self, mut f: impl FnMut(usize, &[f64]) -> Vec<f64>) -> History {
        let mut out = Vec::with_capacity(self.samples.len());
        for k in 0..self.len() {
            out.extend(f(k, self.node(k)));
        }
        History::new(self.dim, self.step, out)
    }

    /// Nodewise `self + c·other`; grids must agree.
    pub fn axpy(&self, c: f64, other: &History) -> History {
        assert_eq!(self.dim, other.dim);
        assert_eq!(self.len(), other.len());
        let samples = self
            .samples
            .iter()
            .zip(&other.samples)
            .map(|(a, b)| a + c * b)
            .collect();
        History::new(self.dim, self.step, samples)
    }

    pub fn scale(&self, c: f64) -> History {
        History::new(
            self.dim,
            self.step,
            self.samples.iter().map(|v| c * v).collect(),
        )
    }

    /// `x + c·1`.
    pub fn shift(&self, c: f64) -> History {
        History::new(
            self.dim,
            self.step,
            self.samples.iter().map(|v| v + c).collect(),
        )
    }

    /// Derivative at a grid node: central difference inside, one-sided at the ends.
    pub fn derivative(&self, s: f64) -> Result<Vec<f64>, HistoryError> {
        Ok(self.derivative_at(self.node_index(s)?))
    }

    pub fn derivative_at(&self, k: usize) -> Vec<f64> {
        let n = self.intervals();
        let (lo, hi, span) = match k {
            0 => (0, 1, 1.0),
            _ if k == n => (n - 1, n, 1.0),
            _ => (k - 1, k + 1, 2.0),
        };
        let (a, b) = (self.node(lo), self.node(hi));
        a.iter()
            .zip(b)
            .map(|(a, b)| (b - a) / (span * self.step))
            .collect()
    }

    /// `max_k |x(s_{k+1}) - x(s_k)| / Δ`.
    pub fn lipschitz_constant(&self) -> f64 {
        (0..self.intervals())
            .map(|k| {
                self.node(k)
                    .iter()
                    .zip(self.node(k + 1))
                    .fold(0.0f64, |m, (a, b)| m.max((b - a).abs()))
            })
            .fold(0.0, f64::max)
            / self.step
    }

    /// Compact-open distance `Σ_{n=1}^{depth} 2^{-n} ‖x-y‖_n / (1 + ‖x-y‖_n)`
    /// with `‖·‖_n` the sup-norm on `[-n, 0]`.
    pub fn metric_d(&self, other: &History, depth: usize) -> f64 {
        assert_eq!(self.dim, other.dim, "metric_d: dimension mismatch");
        assert!(
            (self.step - other.step).abs() <= 1e-12 * self.step,
            "metric_d: step mismatch"
        );
        let last = self.intervals().max(other.intervals());
        let mut sup = 0.0f64;
        let mut k = 0usize;
        let mut total = 0.0;
        for n in 1..=depth {
            let kmax = ((n as f64 / self.step) + NODE_EPS).floor() as usize;
            while k <= kmax.min(last) {
                let s = -(k as f64) * self.step;
                for i in 0..self.dim {
                    sup = sup.max((self.component(i, s) - other.component(i, s)).abs());
                }
                k += 1;
            }
            total += 0.5f64.powi(n as i32) * sup / (1.0 + sup);
        }
        total
    }

    /// Reads `s,x_1,...,x_m` rows on a uniform grid ending at `s = 0`.
    pub fn from_csv(reader: impl BufRead) -> Result<Self, HistoryError> {
        let mut lines = reader.lines();
        let header = lines
            .next()
            .ok_or_else(|| HistoryError::Csv("empty input".into()))??;
        let cols: Vec<&str> = header.split(',').map(str::trim).collect();
        if cols.first() != Some(&"s") || cols.len() < 2 {
            return Err(HistoryError::Csv(format!("bad header {header:?}")));
        }
        let dim = cols.len() - 1;
        let mut times = Vec::new();
        let mut samples = Vec::new();
        for (lineno, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let vals: Result<Vec<f64>, _> =
                line.split(',').map(|v| v.trim().parse::<f64>()).collect();
            let vals = vals.map_err(|e| HistoryError::Csv(format!("line {}: {e}", lineno + 2)))?;
            if vals.len() != dim + 1 {
                return Err(HistoryError::Csv(format!(
                    "line {}: expected {} fields",
                    lineno + 2,
                    dim + 1
                )));
            }
            times.push(vals[0]);
            samples.extend_from_slice(&vals[1..]);
        }
        if times.len() < 2 {
            return Err(HistoryError::Csv("need at least two rows".into()));
        }
        let step = times[1] - times[0];
        if step <= 0.0 {
            return Err(HistoryError::Csv("times must increase".into()));
        }
        for w in times.windows(2) {
            if ((w[1] - w[0]) - step).abs() > 1e-9 * step.max(1.0) {
                return Err(HistoryError::Csv("non-uniform grid".into()));
            }
        }
        if times.last().unwrap().abs() > 1e-9 * step {
            return Err(HistoryError::Csv("last row must be s = 0".into()));
        }
        Ok(History::new(dim, step, samples))
    }

    pub fn to_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        write!(w, "s")?;
        for i in 1..=self.dim {
            write!(w, ",x_{i}")?;
        }
        writeln!(w)?;
        for k in 0..self.len() {
            write!(w, "{}", self.node_time(k))?;
            for v in self.node(k) {
                write!(w, ",{v}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    /// Four-point interpolating view over this history.
    pub fn window(&self) -> Window<'_> {
        Window::new(&self.samples, self.dim, self.step, self.intervals())
    }
}

impl PastSampler for History {
    fn dim(&self) -> usize {
        self.dim
    }

    fn step(&self) -> f64 {
        self.step
    }

    fn component(&self, i: usize, s: f64) -> f64 {
        assert!(
            s <= NODE_EPS * self.step,
            "history evaluated at s = {s} > 0"
        );
        let n = self.intervals();
        let p = n as f64 + s / self.step;
        if p <= 0.0 {
            return self.samples[i];
        }
        if let Some(k) = snap(p) {
            return self.samples[k.min(n) * self.dim + i];
        }
        let j = (p.floor() as usize).min(n - 1);
        let frac = p - j as f64;
        let a = self.samples[j * self.dim + i];
        let b = self.samples[(j + 1) * self.dim + i];
        a + frac * (b - a)
    }
}

/// Borrowed view of a sample buffer whose node `now` sits at `s = 0`.
///
/// Off-node values use four-point Lagrange interpolation. The stencil only
/// reaches node `now` when `s > -Δ`, so evaluations at lags of at least one
/// step never depend on the newest sample.
#[derive(Debug, Clone, Copy)]
pub struct Window<'a> {
    buf: &'a [f64],
    dim: usize,
    step: f64,
    now: usize,
}

impl<'a> Window<'a> {
    pub fn new(buf: &'a [f64], dim: usize, step: f64, now: usize) -> Self {
        debug_assert!((now + 1) * dim <= buf.len());
        Self {
            buf,
            dim,
            step,
            now,
        }
    }

    pub fn now(&self) -> usize {
        self.now
    }

    /// Value `lag` whole steps in the past.
    pub fn lagged(&self, lag: usize) -> &'a [f64] {
        let k = self.now.saturating_sub(lag);
        &self.buf[k * self.dim..(k + 1) * self.dim]
    }

    pub fn current(&self) -> &'a [f64] {
        self.lagged(0)
    }

    #[inline]
    fn at(&self, k: usize, i: usize) -> f64 {
        self.buf[k * self.dim + i]
    }
}

impl PastSampler for Window<'_> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn step(&self) -> f64 {
        self.step
    }

    #[inline]
    fn component(&self, i: usize, s: f64) -> f64 {
        let p = self.now as f64 + s / self.step;
        if p <= 0.0 {
            return self.at(0, i);
        }
        if let Some(k) = snap(p) {
            return self.at(k.min(self.now), i);
        }
        let hi = if p > self.now as f64 - 1.0 {
            self.now
        } else {
            self.now - 1
        };
        if hi < 3 {
            let j = p.floor() as usize;
            let frac = p - j as f64;
            let (a, b) = (self.at(j, i), self.at((j + 1).min(self.now), i));
            return a + frac * (b - a);
        }
        let j = p.floor() as usize;
        let start = j.saturating_sub(1).min(hi - 3);
        let x = p - start as f64;
        let (x1, x2, x3) = (x - 1.0, x - 2.0, x - 3.0);
        let w0 = -x1 * x2 * x3 / 6.0;
        let w1 = x * x2 * x3 / 2.0;
        let w2 = -x * x1 * x3 / 2.0;
        let w3 = x * x1 * x2 / 6.0;
        w0 * self.at(start, i)
            + w1 * self.at(start + 1, i)
            + w2 * self.at(start + 2, i)
            + w3 * self.at(start + 3, i)
    }
}

/// A `History` shifted into the past: `component(i, θ) = x_i(θ + by)`.
pub(crate) struct Shifted<'a, P: PastSampler + ?Sized> {
    pub inner: &'a P,
    pub by: f64,
}

impl<P: PastSampler + ?Sized> PastSampler for Shifted<'_, P> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn step(&self) -> f64 {
        self.inner.step()
    }

    fn component(&self, i: usize, s: f64) -> f64 {
        self.inner.component(i, s + self.by)
    }
}

/// Section `u(t)` of a trajectory together with the absolute time of the
/// driver (`ω·t` is the driver phase at `time`).
#[derive(Debug, Clone)]
pub struct Section {
    pub history: History,
    pub time: f64,
}

/// Diagnostics accumulated while integrating.
#[derive(Debug, Clone, Default, PartialEq, serde::Serialize)]
pub struct RunStats {
    pub steps: usize,
    pub picard_max_iters: usize,
    pub picard_max_residual: f64,
    /// Mass of all delay measures beyond the stored horizon.
    pub tail_mass: f64,
}

/// Initial history plus its forward extension on the same grid.
#[derive(Debug, Clone)]
pub struct Trajectory {
    dim: usize,
    step: f64,
    t0: f64,
    /// Intervals of the initial history.
    back: usize,
    buf: Vec<f64>,
    pub stats: RunStats,
}

impl Trajectory {
    /// Starts a trajectory from `x0`; `t0` is the absolute start time.
    pub fn start(x0: &History, t0: f64) -> Self {
        Self {
            dim: x0.dim,
            step: x0.step,
            t0,
            back: x0.intervals(),
            buf: x0.samples.clone(),
            stats: RunStats::default(),
        }
    }

    pub(crate) fn buffer_mut(&mut self) -> &mut Vec<f64> {
        &mut self.buf
    }

    pub(crate) fn buffer(&self) -> &[f64] {
        &self.buf
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn horizon(&self) -> f64 {
        self.back as f64 * self.step
    }

    /// Number of forward steps stored.
    pub fn steps(&self) -> usize {
        self.buf.len() / self.dim - 1 - self.back
    }

    pub fn t_end(&self) -> f64 {
        self.steps() as f64 * self.step
    }

    /// Buffer index of relative time `t` (grid-aligned, within `[-T, t_end]`).
    pub fn node_of(&self, t: f64) -> Result<usize, HistoryError> {
        let p = self.back as f64 + t / self.step;
        let last = self.buf.len() / self.dim - 1;
        match snap(p) {
            Some(k) if k <= last => Ok(k),
            Some(_) => Err(HistoryError::OutOfRange {
                t,
                lo: -self.horizon(),
                hi: self.t_end(),
            }),
            None if p < 0.0 || p > last as f64 => Err(HistoryError::OutOfRange {
                t,
                lo: -self.horizon(),
                hi: self.t_end(),
            }),
            None => Err(HistoryError::OffGrid(t)),
        }
    }

    /// `z(t)` at a grid time.
    pub fn z(&self, t: f64) -> Result<&[f64], HistoryError> {
        let k = self.node_of(t)?;
        Ok(self.row(k))
    }

    pub(crate) fn row(&self, k: usize) -> &[f64] {
        &self.buf[k * self.dim..(k + 1) * self.dim]
    }

    /// Forward samples `(t, z(t))` for `t = 0, Δ, …, t_end`.
    pub fn forward(&self) -> impl Iterator<Item = (f64, &[f64])> + '_ {
        (0..=self.steps()).map(move |n| (n as f64 * self.step, self.row(self.back + n)))
    }

    /// Interpolating view with `s = 0` at relative time `t`.
    pub fn window(&self, t: f64) -> Result<Window<'_>, HistoryError> {
        let k = self.node_of(t)?;
        Ok(Window::new(&self.buf, self.dim, self.step, k))
    }

    /// `u(t)(s) = z(t+s)` for `s ∈ [-T, 0]`, with the stored horizon `T`.
    pub fn section(&self, t: f64) -> Result<Section, HistoryError> {
        self.section_with_horizon(t, self.horizon())
    }

    /// Section over `[-horizon, 0]`; `horizon` may exceed `t + T` only through
    /// the constant tail of the initial history.
    pub fn section_with_horizon(&self, t: f64, horizon: f64) -> Result<Section, HistoryError> {
        if t < -NODE_EPS * self.step {
            return Err(HistoryError::OutOfRange {
                t,
                lo: 0.0,
                hi: self.t_end(),
            });
        }
        let k = self.node_of(t)?;
        let n = History::nodes_for(horizon, self.step);
        let mut samples = Vec::with_capacity((n + 1) * self.dim);
        for j in 0..=n {
            let idx = (k + j).saturating_sub(n);
            samples.extend_from_slice(self.row(idx));
        }
        Ok(Section {
            history: History::new(self.dim, self.step, samples),
            time: self.t0 + t,
        })
    }

    /// CSV with header `t,z_1,...,z_m`, every `stride`-th forward sample.
    pub fn to_csv(&self, mut w: impl Write, stride: usize) -> std::io::Result<()> {
        let stride = stride.max(1);
        write!(w, "t")?;
        for i in 1..=self.dim {
            write!(w, ",z_{i}")?;
        }
        writeln!(w)?;
        for (n, (t, z)) in self.forward().enumerate() {
            if n % stride != 0 && n != self.steps() {
                continue;
            }
            write!(w, "{t}")?;
            for v in z {
                write!(w, ",{v}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ramp() -> History {
        History::linear(&[1.0, -2.0], &[0.5, 3.0], 0.1, 2.0)
    }

    #[test]
    fn eval_nodes_midpoints_and_tail() {
        let x = ramp();
        assert_eq!(x.len(), 21);
        assert_eq!(x.eval(-1.0), vec![0.5, -5.0]);
        let mid = x.eval(-1.05);
        let (a, b) = (x.eval(-1.0), x.eval(-1.1));
        assert!((mid[0] - 0.5 * (a[0] + b[0])).abs() < 1e-14);
        assert_eq!(x.eval(-2.0 - 5.0), x.eval(-2.0));
    }

    #[test]
    #[should_panic]
    fn eval_future_is_a_contract_violation() {
        ramp().eval(0.5);
    }

    #[test]
    fn derivative_examples() {
        let x = ramp();
        let d = x.derivative(-1.0).unwrap();
        assert!((d[0] - 0.5).abs() < 1e-12 && (d[1] - 3.0).abs() < 1e-12);
        let c = History::constant(&[4.0], 0.1, 1.0);
        assert_eq!(c.derivative(-0.5).unwrap(), vec![0.0]);
        let dt = 0.01;
        let sq = History::from_fn(1, dt, 1.0, |s| vec![s * s]);
        let d0 = sq.derivative(0.0).unwrap()[0];
        assert!((d0 + dt).abs() < 1e-12);
        assert!(matches!(
            sq.derivative(-0.005),
            Err(HistoryError::OffGrid(_))
        ));
    }

    #[test]
    fn metric_examples() {
        let x = ramp();
        assert_eq!(x.metric_d(&x, 10), 0.0);
        let c = 0.7;
        let y = x.shift(c);
        for depth in [1usize, 3, 10] {
            let expect = (1.0 - 0.5f64.powi(depth as i32)) * c / (1.0 + c);
            assert!((x.metric_d(&y, depth) - expect).abs() < 1e-12);
        }
        assert!(x.metric_d(&x.shift(1e6), 40) < 1.0);
    }

    #[test]
    fn lipschitz_examples() {
        assert_eq!(
            History::constant(&[1.0, 2.0], 0.1, 1.0).lipschitz_constant(),
            0.0
        );
        assert!((ramp().lipschitz_constant() - 3.0).abs() < 1e-12);
        let s = History::from_fn(1, 0.01, 10.0, |s| vec![s.sin()]);
        assert!((s.lipschitz_constant() - 1.0).abs() < 1e-3);
    }

    #[test]
    fn csv_round_trip() {
        let x = ramp();
        let mut out = Vec::new();
        x.to_csv(&mut out).unwrap();
        let back = History::from_csv(&out[..]).unwrap();
        assert_eq!(back.samples(), x.samples());
        assert!((back.step() - x.step()).abs() < 1e-15);
        assert!(History::from_csv(&b"t,x\n0,1\n"[..]).is_err());
    }

    #[test]
    fn window_matches_nodes_and_cubics() {
        let dt = 0.1;
        let cubic = |s: f64| 1.0 + s - 2.0 * s * s + 0.5 * s * s * s;
        let x = History::from_fn(1, dt, 2.0, |s| vec![cubic(s)]);
        let w = x.window();
        for s in [-0.0, -0.1, -0.55, -0.05, -0.149, -1.97, -1.23] {
            assert!((w.component(0, s) - cubic(s)).abs() < 1e-12, "s = {s}");
        }
        assert_eq!(w.component(0, -50.0), x.node(0)[0]);
    }

    #[test]
    fn section_and_lookup_agree() {
        let x0 = History::from_fn(1, 0.5, 2.0, |s| vec![s]);
        let mut tr = Trajectory::start(&x0, 3.0);
        for k in 1..=6 {
            tr.buffer_mut().push(k as f64 * 0.5);
        }
        assert_eq!(tr.t_end(), 3.0);
        let sec = tr.section(2.0).unwrap();
        assert_eq!(sec.time, 5.0);
        for k in 0..sec.history.len() {
            let s = sec.history.node_time(k);
            assert_eq!(sec.history.node(k)[0], tr.z(2.0 + s).unwrap()[0]);
        }
        let s0 = tr.section(0.0).unwrap();
        assert_eq!(s0.history, x0);
        assert!(matches!(tr.section(0.25), Err(HistoryError::OffGrid(_))));
        assert!(tr.section(10.0).is_err());
    }

    proptest! {
        #[test]
        fn eval_is_continuous(a in -3.0f64..3.0, b in -3.0f64..3.0, s in -2.5f64..0.0) {
            let x = History::from_fn(1, 0.1, 2.0, |t| vec![a * (b * t).sin()]);
            let eps = 1e-9;
            let l = x.eval(s - eps)[0];
            let r = x.eval((s + eps).min(0.0))[0];
            prop_assert!((l - r).abs() < 1e-6);
        }

        #[test]
        fn metric_triangle(c1 in -2.0f64..2.0, c2 in -2.0f64..2.0, f in 0.1f64..3.0) {
            let x = History::from_fn(1, 0.05, 6.0, |t| vec![(f * t).sin()]);
            let y = x.map(|k, v| vec![v[0] + c1 * (k as f64 * 0.01).cos()]);
            let z = x.shift(c2);
            let (xy, yz, xz) = (x.metric_d(&y, 8), y.metric_d(&z, 8), x.metric_d(&z, 8));
            prop_assert!(xz <= xy + yz + 1e-12);
            prop_assert!((x.metric_d(&y, 8) - y.metric_d(&x, 8)).abs() < 1e-15);
        }
    }
}
