//! Exponential ordering on sampled histories.
//!
//! For a quasipositive matrix `A` (nonnegative off-diagonal entries) the cone
//! `{x ≥ 0 : x(t) ≥ e^{A(t-s)} x(s), s ≤ t}` is checked on the grid through
//! adjacent node pairs only: `e^{AΔ} ≥ 0` makes the pair condition
//! transitive, so adjacent pairs imply all pairs.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::history::History;

pub const DEFAULT_CONE_TOL: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum OrderError {
    #[error("matrix is not quasipositive (negative off-diagonal entry {0})")]
    NotQuasipositive(f64),
    #[error("cannot certify that all eigenvalues of A have negative real part")]
    NotHurwitz,
    #[error("A has a positive row sum ({0}); constant vectors are not in the cone")]
    RowSum(f64),
    #[error("dimension mismatch: {0} vs {1}")]
    Dim(usize, usize),
    #[error("empty sample set")]
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConeMode {
    /// Exponential ordering on `[-r, 0]`, pointwise ordering elsewhere.
    FiniteWindow(f64),
    FullLine,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConeParams {
    a: DMatrix<f64>,
    mode: ConeMode,
    tol: f64,
}

impl ConeParams {
    pub fn new(a: DMatrix<f64>, mode: ConeMode, tol: f64) -> Result<Self, OrderError> {
        if !a.is_square() {
            return Err(OrderError::Dim(a.nrows(), a.ncols()));
        }
        if let Some(v) = min_off_diagonal(&a).filter(|v| *v < 0.0) {
            return Err(OrderError::NotQuasipositive(v));
        }
        if mode == ConeMode::FullLine && !certify_hurwitz(&a) {
            return Err(OrderError::NotHurwitz);
        }
        Ok(Self { a, mode, tol })
    }

    /// `A = diag(-β_1, …, -β_m)` on the full line.
    pub fn diagonal(beta: &[f64], tol: f64) -> Result<Self, OrderError> {
        let a =
            DMatrix::from_diagonal(&DVector::from_iterator(beta.len(), beta.iter().map(|b| -b)));
        Self::new(a, ConeMode::FullLine, tol)
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn mode(&self) -> ConeMode {
        self.mode
    }

    pub fn tol(&self) -> f64 {
        self.tol
    }

    pub fn with_tol(&self, tol: f64) -> Self {
        Self {
            tol,
            ..self.clone()
        }
    }

    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn is_diagonal(&self) -> bool {
        min_off_diagonal(&self.a).is_none_or(|v| v == 0.0)
            && (0..self.dim()).all(|i| (0..self.dim()).all(|j| i == j || self.a[(i, j)] == 0.0))
    }
}

fn min_off_diagonal(a: &DMatrix<f64>) -> Option<f64> {
    let n = a.nrows();
    (0..n)
        .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
        .map(|(i, j)| a[(i, j)])
        .reduce(f64::min)
}

pub fn is_quasipositive(a: &DMatrix<f64>) -> bool {
    a.is_square() && min_off_diagonal(a).is_none_or(|v| v >= 0.0)
}

/// Exact for triangular `A`; Gershgorin rows or columns otherwise.
/// `false` means "not certified", not "unstable".
pub fn certify_hurwitz(a: &DMatrix<f64>) -> bool {
    let n = a.nrows();
    let upper = (0..n).all(|i| (0..i).all(|j| a[(i, j)] == 0.0));
    let lower = (0..n).all(|i| (i + 1..n).all(|j| a[(i, j)] == 0.0));
    if upper || lower {
        return (0..n).all(|i| a[(i, i)] < 0.0);
    }
    let rows = (0..n).all(|i| {
        a[(i, i)]
            + (0..n)
                .filter(|&j| j != i)
                .map(|j| a[(i, j)].abs())
                .sum::<f64>()
            < 0.0
    });
    let cols = (0..n).all(|j| {
        a[(j, j)]
            + (0..n)
                .filter(|&i| i != j)
                .map(|i| a[(i, j)].abs())
                .sum::<f64>()
            < 0.0
    });
    rows || cols
}

/// `e^{At}` by scaling and squaring a truncated Taylor series.
///
/// For quasipositive `A` the series is taken for `A + λI ≥ 0` and rescaled by
/// `e^{-λt}`, so every term is nonnegative and the result is entrywise
/// nonnegative with a positive diagonal.
pub fn matrix_exp(a: &DMatrix<f64>, t: f64) -> DMatrix<f64> {
    assert!(t >= 0.0, "matrix_exp requires t >= 0");
    let n = a.nrows();
    let shift = if is_quasipositive(a) {
        (0..n).map(|i| -a[(i, i)]).fold(0.0, f64::max)
    } else {
        0.0
    };
    let b = (a + DMatrix::identity(n, n) * shift) * t;
    let norm = b.iter().map(|v| v.abs()).fold(0.0, f64::max) * n as f64;
    let mut squarings = 0;
    let mut scale = 1.0;
    while norm * scale > 0.5 {
        scale *= 0.5;
        squarings += 1;
    }
    let bs = &b * scale;
    let mut term = DMatrix::identity(n, n);
    let mut sum = DMatrix::identity(n, n);
    for k in 1..=30 {
        term = &term * &bs / k as f64;
        sum += &term;
        if term.amax() <= f64::EPSILON * 1e-3 * sum.amax() {
            break;
        }
    }
    for _ in 0..squarings {
        sum = &sum * &sum;
    }
    sum * (-shift * t).exp()
}

/// Worst violation of cone membership (`≥ 0` means member within `tol = 0`).
///
/// The margin is the minimum over nonnegativity of every sample (and of the
/// constant tail) and over `w(s+Δ) - e^{AΔ} w(s)` for adjacent nodes in the
/// exponential window; on the full line the constant tail contributes
/// `w(-T) - e^{AΔ} w(-T)`.
pub fn cone_margin(w: &History, cone: &ConeParams) -> f64 {
    assert_eq!(w.dim(), cone.dim(), "cone_margin: dimension mismatch");
    let e = matrix_exp(&cone.a, w.step());
    let mut margin = w.samples().iter().copied().fold(f64::INFINITY, f64::min);
    let n = w.intervals();
    let first = match cone.mode {
        ConeMode::FullLine => {
            margin = margin.min(pair_margin(&e, w.node(0), w.node(0)));
            0
        }
        ConeMode::FiniteWindow(r) => n.saturating_sub(((r / w.step()) - 1e-9).ceil() as usize),
    };
    for k in first..n {
        margin = margin.min(pair_margin(&e, w.node(k), w.node(k + 1)));
    }
    margin
}

fn pair_margin(e: &DMatrix<f64>, from: &[f64], to: &[f64]) -> f64 {
    let m = from.len();
    (0..m)
        .map(|i| to[i] - (0..m).map(|j| e[(i, j)] * from[j]).sum::<f64>())
        .fold(f64::INFINITY, f64::min)
}

pub fn cone_contains(w: &History, cone: &ConeParams) -> bool {
    cone_margin(w, cone) >= -cone.tol
}

/// Margin of `x ≤_A y`.
pub fn order_margin(x: &History, y: &History, cone: &ConeParams) -> f64 {
    cone_margin(&y.axpy(-1.0, x), cone)
}

pub fn order_leq(x: &History, y: &History, cone: &ConeParams) -> bool {
    order_margin(x, y, cone) >= -cone.tol
}

/// `y = x + c·1`, which lies above `x` whenever `A` has nonpositive row sums.
pub fn perturb_in_cone(x: &History, c: f64, cone: &ConeParams) -> Result<History, OrderError> {
    assert!(c >= 0.0, "perturbation must be nonnegative");
    let a = &cone.a;
    if let Some(rs) = (0..a.nrows()).map(|i| a.row(i).sum()).find(|&rs| rs > 0.0) {
        return Err(OrderError::RowSum(rs));
    }
    Ok(x.shift(c))
}

/// Lower bound of a family of histories in the exponential ordering.
///
/// On each grid interval `h = min_x [(x_{k+1}-x_k)/Δ - A(x_k+x_{k+1})/2]`
/// (componentwise), and `a' = Aa + h` is integrated by the trapezoidal rule,
/// which reproduces any single input exactly. In `FiniteWindow(r)` mode
/// `a = min x` up to `-r`; on the full line the solve starts at `-T` from
/// `min x(-T)`, which is exact for constant tails.
pub fn cone_infimum_many(xs: &[&History], cone: &ConeParams) -> Result<History, OrderError> {
    let first = *xs.first().ok_or(OrderError::Empty)?;
    let m = first.dim();
    if m != cone.dim() {
        return Err(OrderError::Dim(m, cone.dim()));
    }
    for x in xs {
        if x.dim() != m || x.len() != first.len() {
            return Err(OrderError::Dim(x.len(), first.len()));
        }
    }
    let dt = first.step();
    let n = first.intervals();
    let start = match cone.mode {
        ConeMode::FullLine => 0,
        ConeMode::FiniteWindow(r) => n.saturating_sub(((r / dt) - 1e-9).ceil() as usize),
    };
    let id = DMatrix::<f64>::identity(m, m);
    let lhs = (&id - &cone.a * (0.5 * dt))
        .try_inverse()
        .expect("I - AΔ/2 is invertible for small Δ");
    let rhs = &id + &cone.a * (0.5 * dt);

    let pointwise_min = |k: usize| -> Vec<f64> {
        (0..m)
            .map(|i| {
                xs.iter()
                    .map(|x| x.node(k)[i])
                    .fold(f64::INFINITY, f64::min)
            })
            .collect()
    };
    let mut out = Vec::with_capacity(first.samples().len());
    for k in 0..=start {
        out.extend(pointwise_min(k));
    }
    let mut a = DVector::from_vec(pointwise_min(start));
    let mut h = DVector::zeros(m);
    for k in start..n {
        h.fill(f64::INFINITY);
        for x in xs {
            let (u, v) = (x.node(k), x.node(k + 1));
            for i in 0..m {
                let drift: f64 = (0..m).map(|j| cone.a[(i, j)] * 0.5 * (u[j] + v[j])).sum();
                h[i] = h[i].min((v[i] - u[i]) / dt - drift);
            }
        }
        a = &lhs * (&rhs * &a + &h * dt);
        out.extend(a.iter());
    }
    Ok(History::new(m, dt, out))
}

pub fn cone_infimum(x: &History, y: &History, cone: &ConeParams) -> Result<History, OrderError> {
    cone_infimum_many(&[x, y], cone)
}
