//! Transport functions `g_ij(t, v)` and the quasi-periodic driver that
//! supplies their time dependence.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

/// Explicit torus flow `θ(t) = θ₀ + f·t mod 1` standing in for the hull of
/// the time-dependent coefficients.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Driver {
    #[serde(default)]
    pub frequencies: Vec<f64>,
    #[serde(default)]
    pub phase: Vec<f64>,
}

impl Driver {
    pub fn autonomous() -> Self {
        Self::default()
    }

    pub fn periodic(frequency: f64) -> Self {
        Self {
            frequencies: vec![frequency],
            phase: vec![0.0],
        }
    }

    pub fn harmonics(&self) -> usize {
        self.frequencies.len()
    }

    /// Phase of harmonic `h` at absolute time `t`, in `[0, 1)`.
    #[inline]
    pub fn phase_of(&self, h: usize, t: f64) -> f64 {
        let p0 = self.phase.get(h).copied().unwrap_or(0.0);
        (p0 + self.frequencies[h] * t).rem_euclid(1.0)
    }

    /// Phase of harmonic `h` at time `t + s`, advanced from the phase at `t`
    /// so that values at recurrent base times agree exactly.
    #[inline]
    pub fn phase_lagged(&self, h: usize, t: f64, s: f64) -> f64 {
        (self.phase_of(h, t) + self.frequencies[h] * s).rem_euclid(1.0)
    }

    pub fn phase_at(&self, t: f64) -> Vec<f64> {
        (0..self.harmonics()).map(|h| self.phase_of(h, t)).collect()
    }

    /// Period of a single-frequency driver.
    pub fn period(&self) -> Option<f64> {
        match self.frequencies.as_slice() {
            [f] if *f != 0.0 => Some(1.0 / f.abs()),
            _ => None,
        }
    }

    pub fn is_autonomous(&self) -> bool {
        self.frequencies.iter().all(|&f| f == 0.0)
    }

    /// Max-norm distance on the torus between the phases at two times.
    pub fn torus_distance(&self, t1: f64, t2: f64) -> f64 {
        (0..self.harmonics())
            .map(|h| {
                let d = (self.phase_of(h, t1) - self.phase_of(h, t2)).abs();
                d.min(1.0 - d)
            })
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    /// `φ(v) = v`
    Linear,
    /// `φ(v) = atan(k v) / k`
    SaturatingArctan,
    /// `φ(v) = tanh(k v) / k`
    LogisticSlope,
}

/// Time factor `p(t) = offset + amplitude·sin(2π θ_h(t))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Modulation {
    pub harmonic: usize,
    pub amplitude: f64,
    pub offset: f64,
}

fn one() -> f64 {
    1.0
}

/// `g(t, v) = coef · p(t) · φ(v)`; increasing in `v` with `g(t, 0) = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransportFunction {
    pub family: Family,
    pub coef: f64,
    #[serde(default = "one")]
    pub slope: f64,
    #[serde(default)]
    pub modulation: Option<Modulation>,
}

impl TransportFunction {
    pub fn linear(coef: f64) -> Self {
        Self {
            family: Family::Linear,
            coef,
            slope: 1.0,
            modulation: None,
        }
    }

    pub fn modulated(mut self, harmonic: usize, amplitude: f64, offset: f64) -> Self {
        self.modulation = Some(Modulation {
            harmonic,
            amplitude,
            offset,
        });
        self
    }

    /// Problems with the parameters, if any.
    pub fn validate(&self, driver: &Driver) -> Result<(), String> {
        if !(self.coef.is_finite() && self.coef >= 0.0) {
            return Err(format!("coef must be finite and >= 0, got {}", self.coef));
        }
        if !(self.slope.is_finite() && self.slope > 0.0) {
            return Err(format!("slope must be positive, got {}", self.slope));
        }
        if let Some(md) = &self.modulation {
            if md.harmonic >= driver.harmonics() {
                return Err(format!(
                    "modulation harmonic {} but driver has {}",
                    md.harmonic,
                    driver.harmonics()
                ));
            }
            if md.offset - md.amplitude.abs() <= 0.0 {
                return Err(format!(
                    "time factor must stay positive: offset {} amplitude {}",
                    md.offset, md.amplitude
                ));
            }
        }
        Ok(())
    }

    #[inline]
    pub fn time_factor(&self, driver: &Driver, t: f64) -> f64 {
        match &self.modulation {
            None => 1.0,
            Some(md) => md.offset + md.amplitude * (TAU * driver.phase_of(md.harmonic, t)).sin(),
        }
    }

    /// `p(t + s)`.
    #[inline]
    pub fn time_factor_lagged(&self, driver: &Driver, t: f64, s: f64) -> f64 {
        match &self.modulation {
            None => 1.0,
            Some(md) => {
                md.offset + md.amplitude * (TAU * driver.phase_lagged(md.harmonic, t, s)).sin()
            }
        }
    }

    #[inline]
    fn shape(&self, v: f64) -> f64 {
        match self.family {
            Family::Linear => v,
            Family::SaturatingArctan => (self.slope * v).atan() / self.slope,
            Family::LogisticSlope => (self.slope * v).tanh() / self.slope,
        }
    }

    fn shape_derivative(&self, v: f64) -> f64 {
        match self.family {
            Family::Linear => 1.0,
            Family::SaturatingArctan => 1.0 / (1.0 + (self.slope * v).powi(2)),
            Family::LogisticSlope => 1.0 - (self.slope * v).tanh().powi(2),
        }
    }

    #[inline]
    pub fn eval(&self, driver: &Driver, t: f64, v: f64) -> f64 {
        if self.coef == 0.0 {
            return 0.0;
        }
        self.coef * self.time_factor(driver, t) * self.shape(v)
    }

    /// `g(t + s, v)`.
    #[inline]
    pub fn eval_lagged(&self, driver: &Driver, t: f64, s: f64, v: f64) -> f64 {
        if self.coef == 0.0 {
            return 0.0;
        }
        self.coef * self.time_factor_lagged(driver, t, s) * self.shape(v)
    }

    /// `∂g/∂v`.
    pub fn derivative(&self, driver: &Driver, t: f64, v: f64) -> f64 {
        self.coef * self.time_factor(driver, t) * self.shape_derivative(v)
    }

    fn factor_range(&self) -> (f64, f64) {
        match &self.modulation {
            None => (1.0, 1.0),
            Some(md) => (
                md.offset - md.amplitude.abs(),
                md.offset + md.amplitude.abs(),
            ),
        }
    }

    /// `l⁺ = sup ∂g/∂v`, closed form.
    pub fn l_plus(&self) -> f64 {
        self.coef * self.factor_range().1
    }

    /// `l⁻ = inf ∂g/∂v`, closed form; zero for the saturating families.
    pub fn l_minus(&self) -> f64 {
        match self.family {
            Family::Linear => self.coef * self.factor_range().0,
            Family::SaturatingArctan | Family::LogisticSlope => 0.0,
        }
    }
}
