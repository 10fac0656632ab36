//! Numerical experiments that either corroborate or falsify the qualitative
//! theory on a concrete model: order preservation, mass conservation,
//! convergence to a copy of the driver, and super-equilibria.
//!
//! Every experiment is deterministic given its [`ExperimentSpec`] and seed,
//! and its report carries the command that replays it.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::compartment::{check_quasimonotone, CertReport, CompartmentModel};
use crate::config::{Config, ConfigError, InitialSpec};
use crate::history::{History, HistoryError, Trajectory};
use crate::integrator::{integrate, IntegrateError, IntegratorConfig};
use crate::order::{cone_infimum_many, order_margin, perturb_in_cone, ConeParams, OrderError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Monotone,
    Mass,
    Converge,
    Cover,
    Superq,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 5] = [
        Self::Monotone,
        Self::Mass,
        Self::Converge,
        Self::Cover,
        Self::Superq,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Monotone => "monotone",
            Self::Mass => "mass",
            Self::Converge => "converge",
            Self::Cover => "cover",
            Self::Superq => "superq",
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ExperimentKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown experiment `{s}`"))
    }
}

/// Tunable parameters of the experiments; every field has a default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSettings {
    /// Ordered pairs simulated by `monotone`.
    pub pairs: usize,
    /// Range of the constant shift `c` in `y = x + c·1`.
    pub shift_range: [f64; 2],
    /// Amplitude of the random smooth perturbation of the base datum.
    pub perturbation: f64,
    pub checkpoint_every: f64,
    pub tol_cone: f64,
    /// Slack added to the ordered-pair distance bound.
    pub stability_slack: f64,
    pub quasimonotone_samples: usize,
    /// Absolute drift tolerance; defaults to `1e-5·(1 + |M(0)|)`.
    pub tol_mass: Option<f64>,
    pub ratio_range: [f64; 2],
    pub tol_conv: f64,
    /// Required oscillation amplitude for models without a certificate.
    pub min_amplitude: Option<f64>,
    /// Torus distance below which a time counts as a recurrence.
    pub recurrence_tol: f64,
    pub tol_cover: f64,
    /// Fraction of the run discarded before sampling limit sets.
    pub burn_in: f64,
    pub sections: usize,
    pub superq_step: f64,
    pub superq_tol: f64,
    /// Second initial datum; defaults to the first one shifted by 0.5.
    pub alt_initial: Option<InitialSpec>,
}

impl Default for ExperimentSettings {
    fn default() -> Self {
        Self {
            pairs: 50,
            shift_range: [0.01, 0.5],
            perturbation: 0.2,
            checkpoint_every: 1.0,
            tol_cone: 1e-7,
            stability_slack: 1e-5,
            quasimonotone_samples: 1000,
            tol_mass: None,
            ratio_range: [2.5, 6.0],
            tol_conv: 1e-4,
            min_amplitude: None,
            recurrence_tol: 1e-3,
            tol_cover: 1e-4,
            burn_in: 0.8,
            sections: 20,
            superq_step: 1.0,
            superq_tol: 1e-6,
            alt_initial: None,
        }
    }
}

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("integration failed: {0}")]
    Integrate(#[from] IntegrateError),
    #[error("ordering: {0}")]
    Order(#[from] OrderError),
    #[error("history: {0}")]
    History(#[from] HistoryError),
    #[error("no ordering rates: configure `beta` or certify the model")]
    NoRates,
    #[error("cannot build an ordered pair: {0}")]
    Generation(String),
    #[error("no recurrence: {0}")]
    NoRecurrence(String),
    #[error("insufficient samples: {0}")]
    Insufficient(String),
}

/// What to run, on which model, with which seed.
#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub kind: ExperimentKind,
    pub config: Config,
    pub seed: u64,
    /// How the CLI names the model (`--preset x` or `--config path`).
    pub source: String,
}

impl ExperimentSpec {
    pub fn new(kind: ExperimentKind, config: Config, seed: u64) -> Self {
        let source = format!("--preset {}", config.name);
        Self {
            kind,
            config,
            seed,
            source,
        }
    }

    pub fn with_source(mut self, source: impl Into<String>) -> Self {
        self.source = source.into();
        self
    }

    pub fn replay_command(&self) -> String {
        format!(
            "nfde experiment {} {} --seed {} --dt {} --t-end {}",
            self.kind, self.source, self.seed, self.config.run.dt, self.config.run.t_end
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Assertion {
    pub name: String,
    pub pass: bool,
    pub value: f64,
    pub relation: &'static str,
    pub bound: f64,
    /// Lower end of the range for `in` assertions.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lower: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

impl Assertion {
    pub fn at_most(name: &str, value: f64, bound: f64) -> Self {
        Self {
            name: name.to_string(),
            pass: value <= bound,
            value,
            relation: "<=",
            bound,
            lower: None,
            detail: None,
        }
    }

    pub fn at_least(name: &str, value: f64, bound: f64) -> Self {
        Self {
            name: name.to_string(),
            pass: value >= bound,
            value,
            relation: ">=",
            bound,
            lower: None,
            detail: None,
        }
    }

    pub fn within(name: &str, value: f64, [lo, hi]: [f64; 2]) -> Self {
        Self {
            name: name.to_string(),
            pass: (lo..=hi).contains(&value),
            value,
            relation: "in",
            bound: hi,
            lower: Some(lo),
            detail: None,
        }
    }

    fn detail(mut self, d: impl Into<String>) -> Self {
        self.detail = Some(d.into());
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Series {
    pub name: String,
    pub t: Vec<f64>,
    pub v: Vec<f64>,
}

impl Series {
    fn new(name: impl Into<String>, points: impl IntoIterator<Item = (f64, f64)>) -> Self {
        let (t, v) = points.into_iter().unzip();
        Self {
            name: name.into(),
            t,
            v,
        }
    }

    pub fn last(&self) -> Option<f64> {
        self.v.last().copied()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Provenance {
    pub config: String,
    pub model_hash: String,
    pub dt: f64,
    pub t_end: f64,
    pub scheme: crate::integrator::Scheme,
    pub mode: crate::integrator::Mode,
    pub seed: u64,
    pub version: &'static str,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentReport {
    pub kind: ExperimentKind,
    pub pass: bool,
    /// "consistent with theorem" when every assertion holds; finite
    /// tolerances mean this is never a proof.
    pub verdict: String,
    pub assertions: Vec<Assertion>,
    pub series: Vec<Series>,
    pub data: serde_json::Map<String, Value>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub witness: Option<Value>,
    pub provenance: Provenance,
    pub replay: String,
}

impl ExperimentReport {
    fn new(spec: &ExperimentSpec) -> Self {
        let cfg = &spec.config;
        Self {
            kind: spec.kind,
            pass: true,
            verdict: String::new(),
            assertions: Vec::new(),
            series: Vec::new(),
            data: serde_json::Map::new(),
            witness: None,
            provenance: Provenance {
                config: cfg.name.clone(),
                model_hash: cfg.model_hash(),
                dt: cfg.run.dt,
                t_end: cfg.run.t_end,
                scheme: cfg.run.scheme,
                mode: cfg.run.mode,
                seed: spec.seed,
                version: env!("CARGO_PKG_VERSION"),
            },
            replay: spec.replay_command(),
        }
    }

    fn finish(mut self) -> Self {
        self.pass = self.assertions.iter().all(|a| a.pass);
        self.verdict = if self.pass {
            "consistent with theorem".into()
        } else {
            "inconsistent: see failed assertions".into()
        };
        self
    }

    pub fn assertion(&self, name: &str) -> Option<&Assertion> {
        self.assertions.iter().find(|a| a.name == name)
    }

    pub fn series(&self, name: &str) -> Option<&Series> {
        self.series.iter().find(|s| s.name == name)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

pub fn run(spec: &ExperimentSpec) -> Result<ExperimentReport, ExperimentError> {
    match spec.kind {
        ExperimentKind::Monotone => run_monotone(spec),
        ExperimentKind::Mass => run_mass(spec),
        ExperimentKind::Converge => run_converge(spec),
        ExperimentKind::Cover => run_cover(spec),
        ExperimentKind::Superq => run_superq(spec),
    }
}

struct Setup {
    model: CompartmentModel,
    icfg: IntegratorConfig,
    x0: History,
}

fn setup(spec: &ExperimentSpec) -> Result<Setup, ExperimentError> {
    let cfg = &spec.config;
    cfg.validate_run()?;
    let model = cfg.build_model()?;
    let icfg = cfg.integrator();
    let x0 = cfg.initial_history(&model, icfg.dt)?;
    Ok(Setup { model, icfg, x0 })
}

fn cone_for(model: &CompartmentModel, tol: f64) -> Result<ConeParams, ExperimentError> {
    let beta = match model.beta() {
        Some(b) => b.to_vec(),
        None => CertReport::certify(model)
            .witness_beta
            .ok_or(ExperimentError::NoRates)?,
    };
    Ok(ConeParams::diagonal(&beta, tol)?)
}

/// Grid times `every, 2·every, …` up to `t_end`.
fn checkpoints(every: f64, t_end: f64, dt: f64) -> Vec<f64> {
    let stride = ((every / dt).round() as usize).max(1);
    let steps = (t_end / dt - 1e-9).ceil() as usize;
    (1..=steps / stride)
        .map(|k| (k * stride) as f64 * dt)
        .collect()
}

fn seeded(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn smooth_perturbation(rng: &mut ChaCha8Rng, x: &History, amplitude: f64) -> History {
    let m = x.dim();
    let coeffs: Vec<[f64; 3]> = (0..m)
        .map(|_| {
            [
                rng.random_range(-amplitude..=amplitude),
                rng.random_range(0.2..3.0),
                rng.random_range(0.0..std::f64::consts::TAU),
            ]
        })
        .collect();
    x.map(|k, row| {
        let s = x.node_time(k);
        row.iter()
            .zip(&coeffs)
            .map(|(v, c)| v + c[0] * (c[1] * s + c[2]).sin())
            .collect()
    })
}

fn mass_at(model: &CompartmentModel, traj: &Trajectory, t: f64) -> Result<f64, ExperimentError> {
    Ok(model.total_mass(traj.t0() + t, &traj.window(t)?))
}

fn sup_distance(a: &Trajectory, b: &Trajectory) -> f64 {
    a.forward()
        .zip(b.forward())
        .map(|((_, p), (_, q))| {
            p.iter()
                .zip(q)
                .fold(0.0f64, |m, (u, v)| m.max((u - v).abs()))
        })
        .fold(0.0, f64::max)
}

struct PairOutcome {
    index: usize,
    shift: f64,
    margins: Vec<f64>,
    worst: (f64, f64),
    excess: f64,
    dist: f64,
    bound: f64,
}

/// Order preservation for ordered pairs `y = x + c·1`, and the mass-based
/// distance bound for them.
pub fn run_monotone(spec: &ExperimentSpec) -> Result<ExperimentReport, ExperimentError> {
    let Setup { model, icfg, x0 } = setup(spec)?;
    let st = &spec.config.experiment;
    let cone = cone_for(&model, st.tol_cone)?;
    let mut report = ExperimentReport::new(spec);

    let qm = check_quasimonotone(&model, &cone, st.quasimonotone_samples, spec.seed);
    report.data.insert(
        "quasimonotone_precondition".into(),
        serde_json::to_value(&qm).expect("serializable"),
    );

    let times = checkpoints(st.checkpoint_every, icfg.t_end, icfg.dt);
    let gamma_sum = model.neutral_mass_sum();
    let pairs: Vec<PairOutcome> = (0..st.pairs)
        .into_par_iter()
        .map(|k| -> Result<PairOutcome, ExperimentError> {
            let mut rng = seeded(spec.seed, k as u64);
            let x = smooth_perturbation(&mut rng, &x0, st.perturbation);
            let shift = rng.random_range(st.shift_range[0]..=st.shift_range[1]);
            let y = perturb_in_cone(&x, shift, &cone)
                .map_err(|e| ExperimentError::Generation(e.to_string()))?;
            let tx = integrate(&model, &x, &icfg)?;
            let ty = integrate(&model, &y, &icfg)?;
            let mut margins = Vec::with_capacity(times.len());
            let mut worst = (0.0, f64::INFINITY);
            for &t in &times {
                let m = order_margin(&tx.section(t)?.history, &ty.section(t)?.history, &cone);
                if m < worst.1 {
                    worst = (t, m);
                }
                margins.push(m);
            }
            let dm =
                model.total_mass(icfg.t0, &y.window()) - model.total_mass(icfg.t0, &x.window());
            let bound = dm / (1.0 - gamma_sum);
            let dist = sup_distance(&tx, &ty);
            Ok(PairOutcome {
                index: k,
                shift,
                margins,
                worst,
                excess: dist - bound,
                dist,
                bound,
            })
        })
        .collect::<Result<_, _>>()?;

    let per_time: Vec<(f64, f64)> = times
        .iter()
        .enumerate()
        .map(|(n, &t)| {
            (
                t,
                pairs
                    .iter()
                    .map(|p| p.margins[n])
                    .fold(f64::INFINITY, f64::min),
            )
        })
        .collect();
    let worst_pair = pairs
        .iter()
        .min_by(|a, b| a.worst.1.total_cmp(&b.worst.1))
        .ok_or_else(|| ExperimentError::Insufficient("no pairs".into()))?;
    let worst_margin = worst_pair.worst.1;
    let worst_excess = pairs
        .iter()
        .map(|p| p.excess)
        .fold(f64::NEG_INFINITY, f64::max);

    report.series.push(Series::new("cone_margin", per_time));
    report.assertions.push(
        Assertion::at_least("cone_margin", worst_margin, -st.tol_cone).detail(format!(
            "{} pairs, {} checkpoints",
            pairs.len(),
            times.len()
        )),
    );
    report.assertions.push(
        Assertion::at_most("stability_bound", worst_excess, st.stability_slack)
            .detail("sup_t |z(y)-z(x)| - (M(y)-M(x))/(1-sum nu)"),
    );
    report.data.insert("gamma_sum".into(), json!(gamma_sum));
    report.data.insert(
        "pairs".into(),
        Value::Array(
            pairs
                .iter()
                .map(|p| json!({"pair": p.index, "shift": p.shift, "worst_margin": p.worst.1, "distance": p.dist, "bound": p.bound}))
                .collect(),
        ),
    );
    if worst_margin < -st.tol_cone {
        report.witness = Some(json!({
            "pair": worst_pair.index,
            "seed": spec.seed,
            "shift": worst_pair.shift,
            "time": worst_pair.worst.0,
            "margin": worst_margin,
        }));
    }
    Ok(report.finish())
}

fn max_mass_drift(
    model: &CompartmentModel,
    traj: &Trajectory,
    times: &[f64],
) -> Result<(f64, Vec<(f64, f64)>), ExperimentError> {
    let m0 = mass_at(model, traj, 0.0)?;
    let mut series = vec![(0.0, 0.0)];
    let mut drift = 0.0f64;
    for &t in times {
        let d = (mass_at(model, traj, t)? - m0).abs();
        drift = drift.max(d);
        series.push((t, d));
    }
    Ok((drift, series))
}

/// Conservation of the total mass and its second-order discretization drift.
pub fn run_mass(spec: &ExperimentSpec) -> Result<ExperimentReport, ExperimentError> {
    let Setup { model, icfg, x0 } = setup(spec)?;
    let st = &spec.config.experiment;
    let mut report = ExperimentReport::new(spec);
    let times = checkpoints(st.checkpoint_every, icfg.t_end, icfg.dt);
    let traj = integrate(&model, &x0, &icfg)?;
    let m0 = mass_at(&model, &traj, 0.0)?;
    let (drift, series) = max_mass_drift(&model, &traj, &times)?;
    let tol = st.tol_mass.unwrap_or(1e-5 * (1.0 + m0.abs()));
    report.data.insert("mass_0".into(), json!(m0));
    report.data.insert("drift".into(), json!(drift));
    report.series.push(Series::new("drift", series));
    report
        .assertions
        .push(Assertion::at_most("drift", drift, tol));

    let initial = spec.config.initial_spec();
    let floor = 1e-12 * (1.0 + m0.abs());
    if !initial.is_resamplable() {
        report.data.insert(
            "ratio".into(),
            json!("skipped: initial data cannot be resampled"),
        );
    } else if drift <= floor {
        report
            .data
            .insert("ratio".into(), json!("skipped: drift at roundoff floor"));
    } else {
        let coarse_cfg = IntegratorConfig {
            dt: 2.0 * icfg.dt,
            ..icfg.clone()
        };
        let cx0 = initial.build(
            model.m(),
            coarse_cfg.dt,
            spec.config.horizon(&model, coarse_cfg.dt),
        )?;
        let coarse = integrate(&model, &cx0, &coarse_cfg)?;
        let ctimes = checkpoints(st.checkpoint_every, coarse_cfg.t_end, coarse_cfg.dt);
        let (cdrift, _) = max_mass_drift(&model, &coarse, &ctimes)?;
        let ratio = cdrift / drift;
        report.data.insert("drift_coarse".into(), json!(cdrift));
        report.assertions.push(
            Assertion::within("drift_ratio", ratio, st.ratio_range)
                .detail("drift(2dt) / drift(dt)"),
        );
    }
    Ok(report.finish())
}

enum Recurrence {
    Periodic(f64),
    Autonomous,
    QuasiPeriodic,
}

fn recurrence(model: &CompartmentModel) -> Recurrence {
    let drv = model.driver();
    if drv.is_autonomous() {
        Recurrence::Autonomous
    } else if let Some(p) = drv.period() {
        Recurrence::Periodic(p)
    } else {
        Recurrence::QuasiPeriodic
    }
}

/// Number of grid steps in `span`, which must be a whole number of steps.
fn whole_steps(span: f64, dt: f64, what: &str) -> Result<usize, ExperimentError> {
    let n = (span / dt).round();
    if n < 1.0 || (n - span / dt).abs() > 1e-6 {
        return Err(ExperimentError::NoRecurrence(format!(
            "{what} {span} is not a multiple of dt {dt}"
        )));
    }
    Ok(n as usize)
}

/// `sup_{s∈[-W,0]} ‖z(a+s) - z(b+s)‖` for node indices of relative times.
fn window_gap(traj: &Trajectory, a: f64, b: f64, width: f64) -> Result<f64, ExperimentError> {
    let (ka, kb) = (traj.node_of(a)?, traj.node_of(b)?);
    let n = (width / traj.step()).round() as usize;
    let m = traj.dim();
    let wa = traj.window(a)?;
    let wb = traj.window(b)?;
    let mut gap = 0.0f64;
    for j in 0..=n.min(ka).min(kb) {
        let (ra, rb) = (wa.lagged(j), wb.lagged(j));
        for i in 0..m {
            gap = gap.max((ra[i] - rb[i]).abs());
        }
    }
    Ok(gap)
}

fn alt_initial(spec: &ExperimentSpec, m: usize) -> Result<InitialSpec, ExperimentError> {
    if let Some(a) = &spec.config.experiment.alt_initial {
        return Ok(a.clone());
    }
    spec.config.initial_spec().shifted(0.5, m).ok_or_else(|| {
        ExperimentError::Generation("csv initial data need an explicit alt_initial".into())
    })
}

/// Recurrence residual `r(t)` of one trajectory.
fn residual_series(
    model: &CompartmentModel,
    traj: &Trajectory,
    width: f64,
    st: &ExperimentSettings,
) -> Result<Vec<(f64, f64)>, ExperimentError> {
    let dt = traj.step();
    let t_end = traj.t_end();
    let mut out = Vec::new();
    match recurrence(model) {
        Recurrence::Periodic(p) => {
            let n = whole_steps(p, dt, "driver period")?;
            let period = n as f64 * dt;
            let mut k = ((width + period) / period).ceil() as usize;
            while k as f64 * period <= t_end + 1e-9 * dt {
                let t = (k * n) as f64 * dt;
                out.push((t, window_gap(traj, t, t - period, width)?));
                k += 1;
            }
        }
        Recurrence::Autonomous => {
            for t in checkpoints(st.checkpoint_every, t_end, dt) {
                if t < width {
                    continue;
                }
                let now = traj.z(t)?.to_vec();
                let wt = traj.window(t)?;
                let n = (width / dt).round() as usize;
                let gap = (0..=n)
                    .map(|j| {
                        wt.lagged(j)
                            .iter()
                            .zip(&now)
                            .fold(0.0f64, |g, (a, b)| g.max((a - b).abs()))
                    })
                    .fold(0.0, f64::max);
                out.push((t, gap));
            }
        }
        Recurrence::QuasiPeriodic => {
            let drv = model.driver();
            let t0 = traj.t0();
            let steps = traj.steps();
            let mut hits: Vec<f64> = Vec::new();
            let mut inside = false;
            for n in 0..=steps {
                let t = n as f64 * dt;
                let close = t >= width && drv.torus_distance(t0 + t, t0) < st.recurrence_tol;
                if close && !inside {
                    hits.push(t);
                }
                inside = close;
            }
            if hits.len() < 3 {
                return Err(ExperimentError::NoRecurrence(format!(
                    "{} recurrence times within {t_end} at tolerance {}",
                    hits.len(),
                    st.recurrence_tol
                )));
            }
            for pair in hits.windows(2) {
                out.push((pair[1], window_gap(traj, pair[1], pair[0], width)?));
            }
        }
    }
    Ok(out)
}

fn late_amplitude(traj: &Trajectory, burn_in: f64) -> f64 {
    let start = burn_in * traj.t_end();
    let m = traj.dim();
    let mut lo = vec![f64::INFINITY; m];
    let mut hi = vec![f64::NEG_INFINITY; m];
    for (t, z) in traj.forward() {
        if t < start {
            continue;
        }
        for i in 0..m {
            lo[i] = lo[i].min(z[i]);
            hi[i] = hi[i].max(z[i]);
        }
    }
    (0..m).map(|i| 0.5 * (hi[i] - lo[i])).fold(0.0, f64::max)
}

/// Decay of the recurrence residual for certified models; persistence of
/// oscillations for models without a certificate.
pub fn run_converge(spec: &ExperimentSpec) -> Result<ExperimentReport, ExperimentError> {
    let Setup { model, icfg, x0 } = setup(spec)?;
    let st = &spec.config.experiment;
    let mut report = ExperimentReport::new(spec);
    let cert = CertReport::certify(&model);
    let alt = alt_initial(spec, model.m())?.build(model.m(), icfg.dt, x0.horizon())?;
    let width = x0.horizon();
    let data = [("primary", x0), ("alt", alt)];
    let trajs: Vec<Trajectory> = data
        .par_iter()
        .map(|(_, x)| integrate(&model, x, &icfg))
        .collect::<Result<_, _>>()?;
    report.data.insert("certified".into(), json!(cert.sat));
    let kind = match recurrence(&model) {
        Recurrence::Periodic(p) => json!({"periodic": p}),
        Recurrence::Autonomous => json!("autonomous"),
        Recurrence::QuasiPeriodic => json!("quasi_periodic"),
    };
    report.data.insert("driver".into(), kind);

    for ((label, x), traj) in data.iter().zip(&trajs) {
        let series = residual_series(&model, traj, width, st)?;
        let last = series.last().map(|p| p.1).ok_or_else(|| {
            ExperimentError::Insufficient(format!("run too short for a residual window of {width}"))
        })?;
        let first = series[0].1;
        let t_star = series.iter().find(|p| p.1 <= st.tol_conv).map(|p| p.0);
        let amplitude = late_amplitude(traj, st.burn_in);
        report.data.insert(
            label.to_string(),
            json!({
                "mass": model.total_mass(icfg.t0, &x.window()),
                "residual_final": last,
                "t_star": t_star,
                "late_amplitude": amplitude,
            }),
        );
        if cert.sat {
            let a = match recurrence(&model) {
                Recurrence::QuasiPeriodic => {
                    Assertion::at_most(&format!("residual_trend_{label}"), last, first)
                        .detail("r(last) <= r(first)")
                }
                _ => Assertion::at_most(&format!("residual_{label}"), last, st.tol_conv),
            };
            report.assertions.push(a);
        } else {
            let min_amp = st.min_amplitude.unwrap_or(0.1);
            report.assertions.push(
                Assertion::at_least(&format!("oscillation_{label}"), amplitude, min_amp)
                    .detail("no certificate: persistence of oscillation expected"),
            );
        }
        report
            .series
            .push(Series::new(format!("residual_{label}"), series));
    }
    let merge = window_gap2(&trajs[0], &trajs[1], icfg.t_end, width)?;
    report.data.insert("merge_distance".into(), json!(merge));
    Ok(report.finish())
}

/// `sup_{s∈[-W,0]} ‖z_a(t+s) - z_b(t+s)‖` for two trajectories on one grid.
fn window_gap2(a: &Trajectory, b: &Trajectory, t: f64, width: f64) -> Result<f64, ExperimentError> {
    let (wa, wb) = (a.window(t)?, b.window(t)?);
    let n = ((width / a.step()).round() as usize)
        .min(wa.now())
        .min(wb.now());
    Ok((0..=n)
        .map(|j| {
            wa.lagged(j)
                .iter()
                .zip(wb.lagged(j))
                .fold(0.0f64, |g, (p, q)| g.max((p - q).abs()))
        })
        .fold(0.0, f64::max))
}

/// Recurrence step of a periodic or autonomous driver.
fn recurrence_step(
    model: &CompartmentModel,
    st: &ExperimentSettings,
    dt: f64,
    what: &str,
) -> Result<f64, ExperimentError> {
    match recurrence(model) {
        Recurrence::Periodic(p) => Ok(whole_steps(p, dt, "driver period")? as f64 * dt),
        Recurrence::Autonomous => {
            Ok(whole_steps(st.checkpoint_every, dt, "checkpoint spacing")? as f64 * dt)
        }
        Recurrence::QuasiPeriodic => Err(ExperimentError::NoRecurrence(format!(
            "{what} needs a periodic or autonomous driver"
        ))),
    }
}

/// Grid times `t_end - offset - j·period` that lie after the burn-in.
fn late_times(t_end: f64, offset: f64, period: f64, burn_in: f64, dt: f64, max: usize) -> Vec<f64> {
    let pn = (period / dt).round() as usize;
    let end = ((t_end - offset) / dt + 1e-9).floor() as usize;
    let end = end - end % pn;
    let start = burn_in * t_end;
    let mut out: Vec<f64> = (0..max)
        .map_while(|j| end.checked_sub(j * pn))
        .map(|k| k as f64 * dt)
        .take_while(|&t| t >= start)
        .collect();
    out.reverse();
    out
}

fn metric_depth(h: &History) -> usize {
    (h.horizon().ceil() as usize).max(1)
}

/// Solves `M(base + c) = target` for the constant shift `c` by bisection.
fn match_mass(model: &CompartmentModel, base: &History, target: f64, t0: f64) -> History {
    let mass = |c: f64| model.total_mass(t0, &base.shift(c).window());
    let (mut lo, mut hi) = (-1.0, 1.0);
    while mass(lo) > target {
        lo *= 2.0;
    }
    while mass(hi) < target {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mass(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    base.shift(0.5 * (lo + hi))
}

/// Late sections at driver recurrences collapse onto one history per driver
/// phase; distinct masses give distinct limits.
pub fn run_cover(spec: &ExperimentSpec) -> Result<ExperimentReport, ExperimentError> {
    let Setup { model, icfg, x0 } = setup(spec)?;
    let st = &spec.config.experiment;
    let mut report = ExperimentReport::new(spec);
    let dt = icfg.dt;
    let period = recurrence_step(&model, st, dt, "cover")?;
    let m = model.m();

    let alt = alt_initial(spec, m)?.build(m, dt, x0.horizon())?;
    let target = model.total_mass(icfg.t0, &x0.window());
    let bumped = x0.map(|k, row| {
        let s = x0.node_time(k);
        row.iter().map(|v| v + 0.2 * (3.0 * s).sin()).collect()
    });
    let equal = match_mass(&model, &bumped, target, icfg.t0);
    let data = [x0, alt, equal];
    let trajs: Vec<Trajectory> = data
        .par_iter()
        .map(|x| integrate(&model, x, &icfg))
        .collect::<Result<_, _>>()?;

    let times = late_times(icfg.t_end, 0.0, period, st.burn_in, dt, usize::MAX);
    if times.len() < 2 {
        return Err(ExperimentError::Insufficient(format!(
            "{} recurrence sections after burn-in",
            times.len()
        )));
    }
    let sections: Vec<History> = times
        .iter()
        .map(|&t| trajs[0].section(t).map(|s| s.history))
        .collect::<Result<_, _>>()?;
    let depth = metric_depth(&sections[0]);
    let estimate = sections.last().expect("nonempty").clone();
    let t_last = *times.last().expect("nonempty");
    let dispersion = sections
        .iter()
        .map(|s| s.metric_d(&estimate, depth))
        .fold(0.0, f64::max);
    report.series.push(Series::new(
        "distance_to_estimate",
        times
            .iter()
            .zip(&sections)
            .map(|(&t, s)| (t, s.metric_d(&estimate, depth))),
    ));
    report
        .assertions
        .push(Assertion::at_most("dispersion", dispersion, st.tol_cover));

    let restart_periods = 10usize;
    let rcfg = IntegratorConfig {
        t0: icfg.t0 + t_last,
        t_end: restart_periods as f64 * period,
        ..icfg.clone()
    };
    let restarted = integrate(&model, &estimate, &rcfg)?;
    let restart_gap = (1..=restart_periods)
        .map(|k| {
            restarted
                .section(k as f64 * period)
                .map(|s| s.history.metric_d(&estimate, depth))
        })
        .collect::<Result<Vec<_>, _>>()?
        .into_iter()
        .fold(0.0, f64::max);
    report.assertions.push(
        Assertion::at_most("restart_from_estimate", restart_gap, st.tol_cover).detail(format!(
            "{restart_periods} recurrences after restarting at t = {t_last}"
        )),
    );

    let masses: Vec<f64> = data
        .iter()
        .map(|x| model.total_mass(icfg.t0, &x.window()))
        .collect();
    let late = |k: usize| trajs[k].section(t_last).map(|s| s.history);
    let separation = late(1)?.metric_d(&estimate, depth);
    let equal_gap = late(2)?.metric_d(&estimate, depth);
    report.data.insert("masses".into(), json!(masses));
    report
        .data
        .insert("separation_distinct_mass".into(), json!(separation));
    report
        .data
        .insert("distance_equal_mass".into(), json!(equal_gap));
    report.data.insert("sections".into(), json!(times.len()));
    if (masses[1] - masses[0]).abs() > 1e-6 * (1.0 + masses[0].abs()) {
        report.assertions.push(
            Assertion::at_least("distinct_mass_separation", separation, 10.0 * st.tol_cover)
                .detail(format!("mass {} vs {}", masses[0], masses[1])),
        );
    } else {
        report.data.insert(
            "distinct_mass_separation".into(),
            json!("skipped: alt datum has the same mass"),
        );
    }
    Ok(report.finish())
}

/// Lower bound of late sections in the exponential ordering and its
/// super-equilibrium inequality one step ahead.
pub fn run_superq(spec: &ExperimentSpec) -> Result<ExperimentReport, ExperimentError> {
    let Setup { model, icfg, x0 } = setup(spec)?;
    let st = &spec.config.experiment;
    let mut report = ExperimentReport::new(spec);
    let dt = icfg.dt;
    let period = recurrence_step(&model, st, dt, "superq")?;
    let step = whole_steps(st.superq_step, dt, "superq_step")? as f64 * dt;
    let cone = cone_for(&model, st.tol_cone)?;

    let traj = integrate(&model, &x0, &icfg)?;
    let times = late_times(icfg.t_end, step, period, st.burn_in, dt, st.sections);
    if times.is_empty() {
        return Err(ExperimentError::Insufficient(
            "no sections after burn-in".into(),
        ));
    }
    let now: Vec<History> = times
        .iter()
        .map(|&t| traj.section(t).map(|s| s.history))
        .collect::<Result<_, _>>()?;
    let later: Vec<History> = times
        .iter()
        .map(|&t| traj.section(t + step).map(|s| s.history))
        .collect::<Result<_, _>>()?;
    let a = cone_infimum_many(&now.iter().collect::<Vec<_>>(), &cone)?;
    let a_next = cone_infimum_many(&later.iter().collect::<Vec<_>>(), &cone)?;

    let lower = now
        .iter()
        .map(|x| order_margin(&a, x, &cone))
        .fold(f64::INFINITY, f64::min);
    report.assertions.push(
        Assertion::at_least("lower_bound", lower, -st.superq_tol)
            .detail(format!("{} sections", now.len())),
    );

    let t_ref = *times.last().expect("nonempty");
    let ucfg = IntegratorConfig {
        t0: icfg.t0 + t_ref,
        t_end: step,
        ..icfg.clone()
    };
    let u = integrate(&model, &a, &ucfg)?;
    let ua = u.section(step)?.history;
    let margin = order_margin(&ua, &a_next, &cone);
    report.assertions.push(
        Assertion::at_least("super_equilibrium", margin, -st.superq_tol)
            .detail(format!("u(step, a) <= a one step later, step = {step}")),
    );
    let spread = now
        .iter()
        .map(|x| x.axpy(-1.0, &a).sup_norm())
        .fold(0.0, f64::max);
    report.data.insert("sections".into(), json!(now.len()));
    report
        .data
        .insert("max_gap_above_bound".into(), json!(spread));
    Ok(report.finish())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kinds_roundtrip() {
        for k in ExperimentKind::ALL {
            assert_eq!(k.as_str().parse::<ExperimentKind>().unwrap(), k);
        }
        assert!("bogus".parse::<ExperimentKind>().is_err());
    }

    #[test]
    fn checkpoint_grid() {
        assert_eq!(checkpoints(1.0, 3.0, 1e-3), vec![1.0, 2.0, 3.0]);
        assert_eq!(checkpoints(0.5, 1.2, 0.1), vec![0.5, 1.0]);
    }

    #[test]
    fn late_times_are_recurrences() {
        let t = late_times(10.0, 1.0, 2.0, 0.5, 0.5, usize::MAX);
        assert_eq!(t, vec![6.0, 8.0]);
        let t = late_times(10.0, 0.0, 1.0, 0.8, 0.5, 2);
        assert_eq!(t, vec![9.0, 10.0]);
    }

    #[test]
    fn zero_data_have_zero_mass_drift() {
        let mut cfg = Config::preset("linear3").unwrap();
        cfg.initial = Some(InitialSpec::Constant {
            value: vec![0.0; 3],
        });
        cfg.run.t_end = 2.0;
        let report = run_mass(&ExperimentSpec::new(ExperimentKind::Mass, cfg, 1)).unwrap();
        assert!(report.pass);
        assert_eq!(report.data["drift"], json!(0.0));
    }
}
