//! The neutral operator `Dx = x(0) - ∫ [dν(s)] x(s)` and its lift
//! `(D̂x)(s) = D x_s` acting history-to-history.
//!
//! Stability is certified through the total-variation contraction bound
//! `γ = max_i Σ_j |ν_ij|(-inf, 0] < 1`, under which `D̂` is inverted by the
//! Neumann series `Σ_n X^n` with `X x = ∫ [dν(θ)] x(· + θ)`.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::history::{History, PastSampler, Shifted};
use crate::measure::{DelayMeasure, MeasureError};

/// Criterion recorded in every stability report.
pub const STABILITY_CRITERION: &str =
    "sufficient condition: total-variation contraction max_i sum_j |nu_ij| < 1 (implies D stable)";

#[derive(Debug, Error)]
pub enum NeutralError {
    #[error("neutral operator is not a contraction: gamma = {0} >= 1")]
    Unstable(f64),
    #[error(
        "Neumann iteration did not converge in {iterations} sweeps (last update {residual:e})"
    )]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("expected {expected} measures, got {got}")]
    Shape { expected: usize, got: usize },
    #[error(transparent)]
    Measure(#[from] MeasureError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct NeutralOperator {
    dim: usize,
    /// Row-major `m × m`; `None` is the zero measure.
    entries: Vec<Option<DelayMeasure>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilityReport {
    pub gamma: f64,
    pub stable: bool,
    pub positive: bool,
    pub criterion: &'static str,
}

/// Result of [`NeutralOperator::invert_hat`].
#[derive(Debug, Clone)]
pub struct Inversion {
    pub solution: History,
    pub iterations: usize,
    /// Sup-norm update of each sweep.
    pub updates: Vec<f64>,
}

impl NeutralOperator {
    /// General matrix of measures, row-major.
    pub fn new(dim: usize, entries: Vec<Option<DelayMeasure>>) -> Result<Self, NeutralError> {
        if entries.len() != dim * dim {
            return Err(NeutralError::Shape {
                expected: dim * dim,
                got: entries.len(),
            });
        }
        let entries = entries
            .into_iter()
            .map(|e| match e {
                Some(m) if m.is_zero() => Ok(None),
                Some(m) => m.require_no_atom_at_zero().map(Some),
                None => Ok(None),
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { dim, entries })
    }

    /// `ν = diag(ν_1, …, ν_m)`.
    pub fn diagonal(measures: Vec<DelayMeasure>) -> Result<Self, NeutralError> {
        let dim = measures.len();
        let mut entries = vec![None; dim * dim];
        for (i, m) in measures.into_iter().enumerate() {
            entries[i * dim + i] = Some(m);
        }
        Self::new(dim, entries)
    }

    /// Finite-delay form `D_i x = x_i(0) - γ_i x_i(-α_i)`.
    pub fn atomic(gamma: &[f64], alpha: &[f64]) -> Result<Self, NeutralError> {
        let measures = gamma
            .iter()
            .zip(alpha)
            .map(|(&g, &a)| DelayMeasure::atom(-a, g))
            .collect::<Result<Vec<_>, _>>()?;
        Self::diagonal(measures)
    }

    pub fn zero(dim: usize) -> Self {
        Self {
            dim,
            entries: vec![None; dim * dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entry(&self, i: usize, j: usize) -> Option<&DelayMeasure> {
        self.entries[i * self.dim + j].as_ref()
    }

    pub fn is_zero(&self) -> bool {
        self.entries.iter().all(Option::is_none)
    }

    pub fn is_diagonal(&self) -> bool {
        (0..self.dim).all(|i| (0..self.dim).all(|j| i == j || self.entry(i, j).is_none()))
    }

    /// `(γ_i, α_i)` when every diagonal entry is a single atom (or zero) and
    /// the operator is diagonal.
    pub fn as_atomic_diagonal(&self) -> Option<(Vec<f64>, Vec<f64>)> {
        if !self.is_diagonal() {
            return None;
        }
        let mut gamma = vec![0.0; self.dim];
        let mut alpha = vec![1.0; self.dim];
        for i in 0..self.dim {
            if let Some(m) = self.entry(i, i) {
                let (s, w) = m.as_single_atom()?;
                gamma[i] = w;
                alpha[i] = -s;
            }
        }
        Some((gamma, alpha))
    }

    /// Contraction bound `max_i Σ_j |ν_ij|`.
    pub fn gamma(&self) -> f64 {
        (0..self.dim)
            .map(|i| {
                (0..self.dim)
                    .filter_map(|j| self.entry(i, j))
                    .map(DelayMeasure::total_variation)
                    .sum::<f64>()
            })
            .fold(0.0, f64::max)
    }

    pub fn is_positive(&self) -> bool {
        self.entries.iter().flatten().all(DelayMeasure::is_positive)
    }

    pub fn max_lag(&self) -> f64 {
        self.entries
            .iter()
            .flatten()
            .map(DelayMeasure::max_lag)
            .fold(0.0, f64::max)
    }

    pub fn min_lag(&self) -> Option<f64> {
        self.entries
            .iter()
            .flatten()
            .filter_map(DelayMeasure::min_lag)
            .reduce(f64::min)
    }

    pub fn tail_mass(&self, horizon: f64) -> f64 {
        self.entries
            .iter()
            .flatten()
            .map(|m| m.tail_mass(horizon))
            .sum()
    }

    pub fn check_stability(&self) -> StabilityReport {
        let gamma = self.gamma();
        StabilityReport {
            gamma,
            stable: gamma < 1.0,
            positive: self.is_positive(),
            criterion: STABILITY_CRITERION,
        }
    }

    /// `Σ_j ∫ x_j dν_ij`, written into `out`.
    pub fn integral_into<P: PastSampler + ?Sized>(&self, x: &P, out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate().take(self.dim) {
            *o = (0..self.dim)
                .filter_map(|j| self.entry(i, j).map(|m| m.integrate_component(x, j)))
                .sum();
        }
    }

    /// Component `i` of `Dx`.
    pub fn apply_component<P: PastSampler + ?Sized>(&self, x: &P, i: usize) -> f64 {
        let subtracted: f64 = (0..self.dim)
            .filter_map(|j| self.entry(i, j).map(|m| m.integrate_component(x, j)))
            .sum();
        x.component(i, 0.0) - subtracted
    }

    /// `Dx`.
    pub fn apply<P: PastSampler + ?Sized>(&self, x: &P) -> Vec<f64> {
        (0..self.dim).map(|i| self.apply_component(x, i)).collect()
    }

    /// `D̂x` on the grid of `x`; values beyond `-T` come from the constant tail.
    pub fn apply_hat(&self, x: &History) -> History {
        let mut buf = vec![0.0; self.dim];
        x.map(|k, v| {
            let s = x.node_time(k);
            self.integral_into(&Shifted { inner: x, by: s }, &mut buf);
            v.iter().zip(&buf).map(|(a, b)| a - b).collect()
        })
    }

    /// Solves `D̂x = h` by whole-window Neumann sweeps `x ← h + X x`,
    /// stopping once the sup-norm update is at most `tol`.
    pub fn invert_hat(&self, h: &History, tol: f64) -> Result<Inversion, NeutralError> {
        let gamma = self.gamma();
        if gamma >= 1.0 {
            return Err(NeutralError::Unstable(gamma));
        }
        let mut x = h.clone();
        let mut updates = Vec::new();
        if self.is_zero() {
            return Ok(Inversion {
                solution: x,
                iterations: 0,
                updates,
            });
        }
        let budget = iteration_bound(gamma, tol, h.sup_norm()).max(1) * 4 + 16;
        let mut buf = vec![0.0; self.dim];
        for it in 1..=budget {
            let next = h.map(|k, hv| {
                let s = h.node_time(k);
                self.integral_into(&Shifted { inner: &x, by: s }, &mut buf);
                hv.iter().zip(&buf).map(|(a, b)| a + b).collect()
            });
            let update = next
                .samples()
                .iter()
                .zip(x.samples())
                .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            updates.push(update);
            x = next;
            if update <= tol {
                return Ok(Inversion {
                    solution: x,
                    iterations: it,
                    updates,
                });
            }
        }
        Err(NeutralError::NoConvergence {
            iterations: budget,
            residual: *updates.last().unwrap_or(&f64::NAN),
        })
    }

    /// Whether `A(Dx) = D(Ax)` for all `x`. Exact for diagonal/diagonal and
    /// scalar `A`; otherwise tested on 32 random histories.
    pub fn check_commutation(&self, a: &DMatrix<f64>, tol: f64) -> bool {
        assert_eq!(a.nrows(), self.dim);
        let diag_a = (0..self.dim).all(|i| (0..self.dim).all(|j| i == j || a[(i, j)] == 0.0));
        let scalar_a = diag_a && (0..self.dim).all(|i| a[(i, i)] == a[(0, 0)]);
        if scalar_a || (diag_a && self.is_diagonal()) {
            return true;
        }
        let step = 0.05;
        let horizon = (self.max_lag() + 1.0).max(1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(0x005e_edd7);
        for _ in 0..32 {
            let coeffs: Vec<(f64, f64, f64)> = (0..self.dim)
                .map(|_| {
                    (
                        rng.random_range(-1.0..1.0),
                        rng.random_range(0.2..3.0),
                        rng.random_range(0.0..6.3),
                    )
                })
                .collect();
            let x = History::from_fn(self.dim, step, horizon, |s| {
                coeffs
                    .iter()
                    .map(|&(c, f, p)| c * (f * s + p).sin())
                    .collect()
            });
            let ax = x.map(|_, v| {
                (a * nalgebra::DVector::from_column_slice(v))
                    .as_slice()
                    .to_vec()
            });
            let lhs = a * nalgebra::DVector::from_vec(self.apply(&x));
            let rhs = self.apply(&ax);
            let scale = 1.0 + lhs.amax();
            if lhs
                .iter()
                .zip(&rhs)
                .any(|(l, r)| (l - r).abs() > tol * scale)
            {
                return false;
            }
        }
        true
    }
}

/// `⌈log(tol/‖h‖)/log γ⌉ + 1` sweeps suffice for the Neumann iteration.
pub fn iteration_bound(gamma: f64, tol: f64, h_norm: f64) -> usize {
    if gamma <= 0.0 || h_norm <= tol {
        return 1;
    }
    ((tol / h_norm).ln() / gamma.ln()).ceil().max(0.0) as usize + 1
}
