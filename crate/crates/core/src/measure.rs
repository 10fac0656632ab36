//! Finite signed Borel measures on `(-inf, 0]`.
//!
//! A [`DelayMeasure`] is a finite list of point masses plus an optional
//! piecewise-constant density stored as per-cell masses on a uniform grid.
//! Quadrature is exact on atoms and uses the midpoint rule on cells, so every
//! measure reduces to a finite list of weighted evaluation points.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::history::PastSampler;

/// Atoms closer than this are merged into one.
const MERGE_EPS: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum MeasureError {
    #[error("atom location {0} is positive; measures live on (-inf, 0]")]
    PositiveLocation(f64),
    #[error("non-finite atom ({0}, {1})")]
    NonFinite(f64, f64),
    #[error("density step must be positive and finite, got {0}")]
    BadStep(f64),
    #[error("density horizon {horizon} is not a multiple of step {step} matching {cells} cells")]
    CellCount {
        horizon: f64,
        step: f64,
        cells: usize,
    },
    #[error("measure has an atom at 0 (weight {0}) but must not")]
    AtomAtZero(f64),
}

/// Piecewise-constant density; cell `k` covers `[-(k+1)·step, -k·step]` and
/// holds mass `cells[k]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Density {
    pub step: f64,
    pub horizon: f64,
    pub cells: Vec<f64>,
}

impl Density {
    fn validate(&self) -> Result<(), MeasureError> {
        if !(self.step.is_finite() && self.step > 0.0) {
            return Err(MeasureError::BadStep(self.step));
        }
        let expect = (self.horizon / self.step).round();
        if !self.horizon.is_finite()
            || self.horizon < 0.0
            || (expect - self.horizon / self.step).abs() > 1e-6
            || expect as usize != self.cells.len()
        {
            return Err(MeasureError::CellCount {
                horizon: self.horizon,
                step: self.step,
                cells: self.cells.len(),
            });
        }
        if let Some(w) = self.cells.iter().find(|w| !w.is_finite()) {
            return Err(MeasureError::NonFinite(f64::NAN, *w));
        }
        Ok(())
    }

    fn midpoint(&self, k: usize) -> f64 {
        -(k as f64 + 0.5) * self.step
    }
}

/// Serialized form: `{atoms: [[s, w], ...], density: {step, horizon, cells}}`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasureSpec {
    #[serde(default)]
    pub atoms: Vec<[f64; 2]>,
    #[serde(default)]
    pub density: Option<Density>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MeasureSpec", into = "MeasureSpec")]
pub struct DelayMeasure {
    /// Sorted by location, descending (closest to 0 first), pairwise distinct.
    atoms: Vec<(f64, f64)>,
    density: Option<Density>,
    no_atom_at_zero: bool,
}

impl TryFrom<MeasureSpec> for DelayMeasure {
    type Error = MeasureError;

    fn try_from(spec: MeasureSpec) -> Result<Self, Self::Error> {
        DelayMeasure::new(
            spec.atoms.iter().map(|a| (a[0], a[1])).collect(),
            spec.density,
        )
    }
}

impl From<DelayMeasure> for MeasureSpec {
    fn from(m: DelayMeasure) -> Self {
        MeasureSpec {
            atoms: m.atoms.iter().map(|&(s, w)| [s, w]).collect(),
            density: m.density,
        }
    }
}

impl DelayMeasure {
    /// Builds a measure, merging coincident atoms and dropping zero weights.
    pub fn new(atoms: Vec<(f64, f64)>, density: Option<Density>) -> Result<Self, MeasureError> {
        for &(s, w) in &atoms {
            if !s.is_finite() || !w.is_finite() {
                return Err(MeasureError::NonFinite(s, w));
            }
            if s > 0.0 {
                return Err(MeasureError::PositiveLocation(s));
            }
        }
        if let Some(d) = &density {
            d.validate()?;
        }
        let mut sorted = atoms;
        sorted.sort_by(|a, b| b.0.total_cmp(&a.0));
        let mut merged: Vec<(f64, f64)> = Vec::with_capacity(sorted.len());
        for (s, w) in sorted {
            match merged.last_mut() {
                Some(last) if (last.0 - s).abs() <= MERGE_EPS => last.1 += w,
                _ => merged.push((s, w)),
            }
        }
        merged.retain(|&(_, w)| w != 0.0);
        Ok(Self {
            atoms: merged,
            density,
            no_atom_at_zero: false,
        })
    }

    pub fn zero() -> Self {
        Self {
            atoms: Vec::new(),
            density: None,
            no_atom_at_zero: false,
        }
    }

    /// Point mass `weight·δ_{location}`.
    pub fn atom(location: f64, weight: f64) -> Result<Self, MeasureError> {
        Self::new(vec![(location, weight)], None)
    }

    /// Uniform density of the given total mass on `[-horizon, 0]`.
    pub fn uniform(horizon: f64, step: f64, mass: f64) -> Result<Self, MeasureError> {
        let n = (horizon / step).round() as usize;
        let cells = vec![mass / n.max(1) as f64; n];
        Self::new(
            Vec::new(),
            Some(Density {
                step,
                horizon: n as f64 * step,
                cells,
            }),
        )
    }

    /// Exponential transit-time density `rate·e^{rate·s}` truncated at
    /// `horizon` and renormalized to `mass`.
    pub fn truncated_exponential(
        rate: f64,
        horizon: f64,
        step: f64,
        mass: f64,
    ) -> Result<Self, MeasureError> {
        let n = (horizon / step).round() as usize;
        let raw: Vec<f64> = (0..n)
            .map(|k| {
                let a = k as f64 * step;
                (-rate * a).exp() - (-rate * (a + step)).exp()
            })
            .collect();
        let total: f64 = raw.iter().sum();
        let cells = raw.into_iter().map(|c| mass * c / total).collect();
        Self::new(
            Vec::new(),
            Some(Density {
                step,
                horizon: n as f64 * step,
                cells,
            }),
        )
    }

    /// Marks the measure as required to have no atom at 0, failing if it does.
    pub fn require_no_atom_at_zero(mut self) -> Result<Self, MeasureError> {
        if let Some(&(s, w)) = self.atoms.first() {
            if s.abs() <= MERGE_EPS {
                return Err(MeasureError::AtomAtZero(w));
            }
        }
        self.no_atom_at_zero = true;
        Ok(self)
    }

    pub fn no_atom_at_zero(&self) -> bool {
        self.no_atom_at_zero
    }

    pub fn atoms(&self) -> &[(f64, f64)] {
        &self.atoms
    }

    pub fn density(&self) -> Option<&Density> {
        self.density.as_ref()
    }

    pub fn is_zero(&self) -> bool {
        self.atoms.is_empty()
            && self
                .density
                .as_ref()
                .is_none_or(|d| d.cells.iter().all(|&c| c == 0.0))
    }

    pub fn is_positive(&self) -> bool {
        self.points().all(|(_, w)| w >= 0.0)
    }

    /// Whether the measure is a single atom; returns `(location, weight)`.
    pub fn as_single_atom(&self) -> Option<(f64, f64)> {
        let cells_zero = self
            .density
            .as_ref()
            .is_none_or(|d| d.cells.iter().all(|&c| c == 0.0));
        match (self.atoms.as_slice(), cells_zero) {
            ([a], true) => Some(*a),
            _ => None,
        }
    }

    /// All quadrature points `(location, weight)`: atoms, then cell midpoints.
    pub fn points(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        let cells = self.density.iter().flat_map(|d| {
            d.cells
                .iter()
                .enumerate()
                .map(move |(k, &w)| (d.midpoint(k), w))
        });
        self.atoms
            .iter()
            .copied()
            .chain(cells.filter(|&(_, w)| w != 0.0))
    }

    pub fn total_variation(&self) -> f64 {
        self.points().map(|(_, w)| w.abs()).sum()
    }

    /// Signed total mass `μ(-inf, 0]`.
    pub fn mass(&self) -> f64 {
        self.points().map(|(_, w)| w).sum()
    }

    /// `|μ|((-inf, -T])`. Cells straddling `-T` contribute proportionally.
    pub fn tail_mass(&self, horizon: f64) -> f64 {
        assert!(horizon >= 0.0, "tail horizon must be nonnegative");
        let atoms: f64 = self
            .atoms
            .iter()
            .filter(|&&(s, _)| s <= -horizon)
            .map(|&(_, w)| w.abs())
            .sum();
        let cells: f64 = self.density.as_ref().map_or(0.0, |d| {
            d.cells
                .iter()
                .enumerate()
                .map(|(k, &w)| {
                    let hi = k as f64 * d.step;
                    let lo = hi + d.step;
                    let frac = ((lo - horizon.max(hi)) / d.step).clamp(0.0, 1.0);
                    frac * w.abs()
                })
                .sum()
        });
        atoms + cells
    }

    /// `|μ|((-T, 0])`, computed independently of [`Self::tail_mass`].
    pub fn window_mass(&self, horizon: f64) -> f64 {
        let atoms: f64 = self
            .atoms
            .iter()
            .filter(|&&(s, _)| s > -horizon)
            .map(|&(_, w)| w.abs())
            .sum();
        let cells: f64 = self.density.as_ref().map_or(0.0, |d| {
            d.cells
                .iter()
                .enumerate()
                .map(|(k, &w)| {
                    let hi = k as f64 * d.step;
                    let frac = ((horizon.min(hi + d.step) - hi) / d.step).clamp(0.0, 1.0);
                    frac * w.abs()
                })
                .sum()
        });
        atoms + cells
    }

    /// `∫ |s| d|μ|(s)`.
    pub fn first_moment(&self) -> f64 {
        self.points().map(|(s, w)| s.abs() * w.abs()).sum()
    }

    /// Farthest point of the support, as a nonnegative lag.
    pub fn max_lag(&self) -> f64 {
        let atom = self.atoms.last().map_or(0.0, |a| -a.0);
        let dens = self.density.as_ref().map_or(0.0, |d| {
            d.cells
                .iter()
                .rposition(|&c| c != 0.0)
                .map_or(0.0, |k| (k + 1) as f64 * d.step)
        });
        atom.max(dens)
    }

    /// Closest quadrature point to 0, as a nonnegative lag.
    pub fn min_lag(&self) -> Option<f64> {
        self.points().map(|(s, _)| -s).reduce(f64::min)
    }

    /// `∫ e^{-β s} dμ(s)`; `+inf` on overflow.
    pub fn exp_moment(&self, beta: f64) -> f64 {
        self.points().map(|(s, w)| w * (-beta * s).exp()).sum()
    }

    /// `∫ f(s) dμ(s)` for a scalar integrand.
    pub fn integrate_fn(&self, mut f: impl FnMut(f64) -> f64) -> f64 {
        self.points().map(|(s, w)| w * f(s)).sum()
    }

    /// `∫ f_j(s) dμ(s)` for component `j` of a sampled function.
    pub fn integrate_component<P: PastSampler + ?Sized>(&self, f: &P, j: usize) -> f64 {
        self.points().map(|(s, w)| w * f.component(j, s)).sum()
    }

    /// Componentwise `∫ f(s) dμ(s)`.
    pub fn integrate<P: PastSampler + ?Sized>(&self, f: &P) -> Vec<f64> {
        (0..f.dim())
            .map(|j| self.integrate_component(f, j))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::history::History;

    #[test]
    fn total_variation_examples() {
        assert_eq!(
            DelayMeasure::atom(-0.7, 1.0).unwrap().total_variation(),
            1.0
        );
        let m = DelayMeasure::new(vec![(-1.0, 0.3), (-2.0, 0.2)], None).unwrap();
        assert!((m.total_variation() - 0.5).abs() < 1e-15);
        let m = DelayMeasure::new(vec![(-1.0, 0.3), (-2.0, -0.2)], None).unwrap();
        assert!((m.total_variation() - 0.5).abs() < 1e-15);
        assert_eq!(DelayMeasure::zero().total_variation(), 0.0);
    }

    #[test]
    fn coincident_atoms_merge() {
        let m = DelayMeasure::new(vec![(-1.0, 0.3), (-1.0, 0.2), (-0.5, 0.1)], None).unwrap();
        assert_eq!(m.atoms().len(), 2);
        assert!((m.atoms()[1].1 - 0.5).abs() < 1e-15);
        let cancel = DelayMeasure::new(vec![(-1.0, 0.3), (-1.0, -0.3)], None).unwrap();
        assert!(cancel.is_zero());
    }

    #[test]
    fn rejects_bad_input() {
        assert_eq!(
            DelayMeasure::atom(0.5, 1.0),
            Err(MeasureError::PositiveLocation(0.5))
        );
        assert!(DelayMeasure::atom(0.0, 1.0)
            .unwrap()
            .require_no_atom_at_zero()
            .is_err());
        let bad = Density {
            step: 0.1,
            horizon: 1.0,
            cells: vec![0.0; 3],
        };
        assert!(DelayMeasure::new(vec![], Some(bad)).is_err());
    }

    #[test]
    fn tail_mass_examples() {
        let d = DelayMeasure::atom(-2.0, 1.0).unwrap();
        assert_eq!(d.tail_mass(1.0), 1.0);
        assert_eq!(d.tail_mass(3.0), 0.0);
        let m = DelayMeasure::new(vec![(-1.0, 0.3), (-4.0, 0.2)], None).unwrap();
        assert!((m.tail_mass(2.0) - 0.2).abs() < 1e-15);
        assert_eq!(m.tail_mass(0.0), m.total_variation());
    }

    #[test]
    fn first_moment_examples() {
        assert_eq!(DelayMeasure::atom(-1.5, 1.0).unwrap().first_moment(), 1.5);
        let m = DelayMeasure::new(vec![(-1.0, 0.5), (-3.0, 0.5)], None).unwrap();
        assert_eq!(m.first_moment(), 2.0);
        assert_eq!(DelayMeasure::zero().first_moment(), 0.0);
    }

    #[test]
    fn integrate_examples() {
        let x = History::from_fn(1, 0.01, 3.0, |s| vec![s.sin()]);
        let d = DelayMeasure::atom(-0.5, 1.0).unwrap();
        assert!((d.integrate(&x)[0] - (-0.5f64).sin()).abs() < 1e-12);
        assert_eq!(DelayMeasure::zero().integrate(&x), vec![0.0]);

        let lin = History::from_fn(1, 0.01, 3.0, |s| vec![s]);
        for step in [0.1, 0.05] {
            let u = DelayMeasure::uniform(1.0, step, 1.0).unwrap();
            let v = u.integrate(&lin)[0];
            // midpoint rule is exact on linear integrands
            assert!((v + 0.5).abs() < 1e-12, "{v}");
        }
    }

    #[test]
    fn truncated_exponential_has_requested_mass() {
        let m = DelayMeasure::truncated_exponential(1.0, 10.0, 0.1, 1.0).unwrap();
        assert!((m.mass() - 1.0).abs() < 1e-12);
        assert!(m.is_positive());
        assert!((m.max_lag() - 10.0).abs() < 1e-9);
    }

    #[test]
    fn serde_shape() {
        let m = DelayMeasure::new(
            vec![(-1.0, 0.25)],
            Some(Density {
                step: 0.5,
                horizon: 1.0,
                cells: vec![0.1, 0.2],
            }),
        )
        .unwrap();
        let txt = serde_json::to_string(&m).unwrap();
        assert_eq!(
            txt,
            r#"{"atoms":[[-1.0,0.25]],"density":{"step":0.5,"horizon":1.0,"cells":[0.1,0.2]}}"#
        );
        let back: DelayMeasure = serde_json::from_str(&txt).unwrap();
        assert_eq!(back, m);
    }
}
