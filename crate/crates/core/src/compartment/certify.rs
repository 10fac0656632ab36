//! Certification of the hypotheses that make the compartmental semiflow
//! monotone for the ordering `A = diag(-β)`, plus a randomized check of the
//! resulting quasimonotone inequality.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::{CompartmentModel, DelayKind, DelaySpec};
use crate::history::History;
use crate::measure::DelayMeasure;
use crate::neutral::StabilityReport;
use crate::order::{cone_contains, perturb_in_cone, ConeParams};

/// Search interval for the rates `β_i`.
pub const BETA_RANGE: (f64, f64) = (1e-3, 1e3);
const GRID_POINTS: usize = 4001;
const GOLDEN_ITERS: usize = 100;
const PIPE_MASS_TOL: f64 = 1e-9;

fn finite_or_neg_inf(v: f64) -> f64 {
    if v.is_nan() {
        f64::NEG_INFINITY
    } else {
        v
    }
}

/// Maximizes `f` on `[lo, hi]` with a log-spaced scan refined by
/// golden-section search around the best grid point. Returns the best
/// argument found and `f` evaluated there.
pub fn maximize_on_log_grid(f: impl Fn(f64) -> f64, lo: f64, hi: f64) -> (f64, f64) {
    assert!(lo > 0.0 && hi >= lo);
    let f = |b: f64| finite_or_neg_inf(f(b));
    if hi == lo {
        return (lo, f(lo));
    }
    let ratio = (hi / lo).ln() / (GRID_POINTS - 1) as f64;
    let node = |k: usize| {
        if k == GRID_POINTS - 1 {
            hi
        } else {
            lo * (ratio * k as f64).exp()
        }
    };
    let (mut best_k, mut best) = (0, f(lo));
    for k in 1..GRID_POINTS {
        let v = f(node(k));
        if v > best {
            best = v;
            best_k = k;
        }
    }
    let (mut a, mut b) = (
        node(best_k.saturating_sub(1)),
        node((best_k + 1).min(GRID_POINTS - 1)),
    );
    let inv_phi = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..GOLDEN_ITERS {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    let (arg, val) = if fc > fd { (c, fc) } else { (d, fd) };
    if val > best {
        (arg, val)
    } else {
        (node(best_k), best)
    }
}

/// `β (1 - ∫ e^{-βs} dν(s))`.
pub fn damping_rate(nu: &DelayMeasure, beta: f64) -> f64 {
    finite_or_neg_inf(beta * (1.0 - nu.exp_moment(beta)))
}

fn atomic_damping_rate(gamma: f64, alpha: f64, beta: f64) -> f64 {
    if gamma == 0.0 {
        return beta;
    }
    finite_or_neg_inf(beta * (1.0 - gamma * (beta * alpha).exp()))
}

fn self_loop_damping_rate(gamma: f64, alpha: f64, rho: f64, l_minus: f64, beta: f64) -> f64 {
    let tail = if l_minus == 0.0 {
        0.0
    } else {
        (beta * rho).exp() * l_minus
    };
    finite_or_neg_inf(atomic_damping_rate(gamma, alpha, beta) + tail)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub ok: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &str, ok: bool, detail: String) -> Self {
        Self {
            name: name.to_string(),
            ok,
            detail,
        }
    }
}

/// Outcome of the rate condition for one compartment.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComponentCert {
    pub index: usize,
    /// Condition that produced the verdict (`rate` or `rate_self_loop`).
    pub condition: String,
    pub l_plus: f64,
    pub sat: bool,
    /// Witness rate when `sat`, otherwise the located maximizer.
    pub beta: f64,
    /// Left-hand side of the condition at `beta`.
    pub value: f64,
    /// `value - l_plus`.
    pub margin: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl ComponentCert {
    fn from_scan(index: usize, condition: &str, l_plus: f64, (beta, value): (f64, f64)) -> Self {
        let sat = value > l_plus;
        Self {
            index,
            condition: condition.to_string(),
            l_plus,
            sat,
            beta,
            value,
            margin: value - l_plus,
            note: (!sat).then(|| "no witness found".to_string()),
        }
    }
}

/// Size of an absorbing ball for trajectories with Lipschitz data in `B_{k0}`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KHat {
    pub k0: f64,
    /// Bound `1 / (1 - γ)` on the norm of the inverse lifted operator.
    pub inverse_norm_bound: f64,
    /// Bound on `sup ‖F‖` over the image of `B_{k0}`, which lies in `B_{(1+γ)k0}`.
    pub f_sup_bound: f64,
    pub a_norm: f64,
    pub k_hat: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CertReport {
    pub family: DelayKind,
    pub sat: bool,
    pub checks: Vec<Check>,
    pub stability: StabilityReport,
    pub components: Vec<ComponentCert>,
    /// Witness rates, present when every component is certified.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub witness_beta: Option<Vec<f64>>,
    /// The rate condition evaluated at the configured `β`, if any.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub configured_beta: Option<Vec<ComponentCert>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k_hat: Option<KHat>,
}

impl CertReport {
    /// Runs the checks of the model's family with `k0 = 1` for the ball bound.
    pub fn certify(model: &CompartmentModel) -> Self {
        Self::certify_with_k0(model, 1.0)
    }

    pub fn certify_with_k0(model: &CompartmentModel, k0: f64) -> Self {
        match model.kind() {
            DelayKind::Infinite => check_infinite_family(model, k0),
            DelayKind::Finite => check_finite_family(model, k0),
        }
    }

    /// Rates for the ordering: the configured `β` if present, otherwise the
    /// witness.
    pub fn cone_beta(&self, model: &CompartmentModel) -> Option<Vec<f64>> {
        model
            .beta()
            .map(<[f64]>::to_vec)
            .or_else(|| self.witness_beta.clone())
    }

    pub fn failures(&self) -> Vec<String> {
        let mut out: Vec<String> = self
            .checks
            .iter()
            .filter(|c| !c.ok)
            .map(|c| format!("{}: {}", c.name, c.detail))
            .collect();
        out.extend(self.components.iter().filter(|c| !c.sat).map(|c| {
            format!(
                "{} compartment {}: max {:.6} at beta {:.6} <= L+ {:.6}",
                c.condition,
                c.index + 1,
                c.value,
                c.beta,
                c.l_plus
            )
        }));
        out
    }
}

fn transport_check(model: &CompartmentModel, name: &str) -> Check {
    let m = model.m();
    let count = (0..m * m)
        .filter(|&k| model.transport(k / m, k % m).is_some())
        .count();
    Check::new(
        name,
        true,
        format!("{count} transport functions, increasing with g(t,0)=0 by construction"),
    )
}

fn neutral_mass_check(model: &CompartmentModel, name: &str) -> Check {
    let sum = model.neutral_mass_sum();
    Check::new(name, sum < 1.0, format!("sum of neutral masses {sum}"))
}

fn finish(
    model: &CompartmentModel,
    k0: f64,
    checks: Vec<Check>,
    components: Vec<ComponentCert>,
    configured: Option<Vec<ComponentCert>>,
) -> CertReport {
    let stability = model.neutral_operator().check_stability();
    let sat = checks.iter().all(|c| c.ok) && components.iter().all(|c| c.sat);
    let witness_beta = components
        .iter()
        .all(|c| c.sat)
        .then(|| components.iter().map(|c| c.beta).collect::<Vec<_>>());
    let rates = model
        .beta()
        .map(<[f64]>::to_vec)
        .or_else(|| witness_beta.clone());
    let k_hat = rates.filter(|_| stability.stable).map(|b| {
        let gamma = stability.gamma;
        let inverse_norm_bound = 1.0 / (1.0 - gamma);
        let f_sup_bound = model.lipschitz_bound() * (1.0 + gamma) * k0;
        let a_norm = b.iter().copied().fold(0.0, f64::max);
        KHat {
            k0,
            inverse_norm_bound,
            f_sup_bound,
            a_norm,
            k_hat: inverse_norm_bound * f_sup_bound / a_norm + k0,
        }
    });
    CertReport {
        family: model.kind(),
        sat,
        checks,
        stability,
        components,
        witness_beta,
        configured_beta: configured,
        k_hat,
    }
}

/// Certifies a compartment's rate condition in the infinite-delay family.
pub fn certify_rate_infinite(index: usize, nu: &DelayMeasure, l_plus: f64) -> ComponentCert {
    if nu.is_zero() {
        let beta = l_plus + 1.0;
        return ComponentCert::from_scan(index, "rate", l_plus, (beta, beta));
    }
    let scan = maximize_on_log_grid(|b| damping_rate(nu, b), BETA_RANGE.0, BETA_RANGE.1);
    ComponentCert::from_scan(index, "rate", l_plus, scan)
}

/// Certifies a compartment's rate condition in the finite-delay family:
/// the plain condition first, then the self-loop variant when applicable.
pub fn certify_rate_finite(
    index: usize,
    gamma: f64,
    alpha: f64,
    self_loop: Option<(f64, f64)>,
    l_plus: f64,
) -> ComponentCert {
    let first = if gamma == 0.0 {
        let beta = l_plus + 1.0;
        ComponentCert::from_scan(index, "rate", l_plus, (beta, beta))
    } else {
        let scan = maximize_on_log_grid(
            |b| atomic_damping_rate(gamma, alpha, b),
            BETA_RANGE.0,
            BETA_RANGE.1,
        );
        ComponentCert::from_scan(index, "rate", l_plus, scan)
    };
    if first.sat {
        return first;
    }
    match self_loop {
        Some((rho, l_minus)) if alpha >= rho && l_plus < BETA_RANGE.1 => {
            let lo = l_plus.max(BETA_RANGE.0);
            let scan = maximize_on_log_grid(
                |b| self_loop_damping_rate(gamma, alpha, rho, l_minus, b),
                lo,
                BETA_RANGE.1,
            );
            let second = ComponentCert::from_scan(index, "rate_self_loop", l_plus, scan);
            if second.sat {
                second
            } else {
                ComponentCert {
                    note: Some(format!(
                        "no witness found; plain condition max {:.6} at beta {:.6}",
                        first.value, first.beta
                    )),
                    ..second
                }
            }
        }
        Some((rho, _)) => ComponentCert {
            note: Some(format!(
                "no witness found; self-loop condition not applicable (alpha {alpha} < rho {rho})"
            )),
            ..first
        },
        None => first,
    }
}

fn rate_at_infinite(nu: &DelayMeasure, index: usize, l_plus: f64, beta: f64) -> ComponentCert {
    ComponentCert::from_scan(index, "rate", l_plus, (beta, damping_rate(nu, beta)))
}

fn rate_at_finite(
    gamma: f64,
    alpha: f64,
    self_loop: Option<(f64, f64)>,
    index: usize,
    l_plus: f64,
    beta: f64,
) -> ComponentCert {
    let plain = ComponentCert::from_scan(
        index,
        "rate",
        l_plus,
        (beta, atomic_damping_rate(gamma, alpha, beta)),
    );
    match self_loop {
        Some((rho, l_minus)) if !plain.sat && alpha >= rho && beta >= l_plus => {
            ComponentCert::from_scan(
                index,
                "rate_self_loop",
                l_plus,
                (
                    beta,
                    self_loop_damping_rate(gamma, alpha, rho, l_minus, beta),
                ),
            )
        }
        _ => plain,
    }
}

/// Hypotheses of the infinite-delay family.
pub fn check_infinite_family(model: &CompartmentModel, k0: f64) -> CertReport {
    let m = model.m();
    let mut checks = vec![transport_check(model, "transport")];
    checks.push(Check::new(
        "neutral_atom",
        true,
        "neutral measures carry no atom at 0".into(),
    ));
    checks.push(neutral_mass_check(model, "neutral_mass"));
    let positive = (0..m).all(|i| model.nu(i).is_positive());
    checks.push(Check::new(
        "neutral_positive",
        positive,
        "neutral measures nonnegative".into(),
    ));
    let mut pipe_issues = Vec::new();
    let mut moment = 0.0f64;
    for i in 0..m {
        for j in 0..m {
            if model.transport(i, j).is_none() {
                continue;
            }
            if let Some(p) = model.pipe(i, j) {
                if !p.is_positive() || (p.mass() - 1.0).abs() > PIPE_MASS_TOL {
                    pipe_issues.push(format!(
                        "pipe[{i}][{j}] mass {} positive {}",
                        p.mass(),
                        p.is_positive()
                    ));
                }
                moment = moment.max(p.first_moment());
            }
        }
    }
    let detail = if pipe_issues.is_empty() {
        format!("pipes are probability measures; largest first moment {moment}")
    } else {
        pipe_issues.join("; ")
    };
    checks.push(Check::new("pipes", pipe_issues.is_empty(), detail));

    let components: Vec<ComponentCert> = (0..m)
        .into_par_iter()
        .map(|i| certify_rate_infinite(i, &model.nu(i), model.outflow_bound(i)))
        .collect();
    let configured = model.beta().map(|b| {
        (0..m)
            .map(|i| rate_at_infinite(&model.nu(i), i, model.outflow_bound(i), b[i]))
            .collect()
    });
    finish(model, k0, checks, components, configured)
}

fn self_loop(model: &CompartmentModel, rho: &[Vec<Option<f64>>], i: usize) -> Option<(f64, f64)> {
    let g = model.transport(i, i)?;
    Some((rho[i][i]?, g.l_minus()))
}

/// Hypotheses of the finite-delay family.
pub fn check_finite_family(model: &CompartmentModel, k0: f64) -> CertReport {
    let DelaySpec::Finite { gamma, alpha, rho } = &model.spec().delays else {
        panic!("check_finite_family requires the finite-delay family");
    };
    let m = model.m();
    let mut checks = vec![transport_check(model, "transport")];
    let sum: f64 = gamma.iter().sum();
    let nonneg = gamma.iter().all(|&g| g >= 0.0);
    checks.push(Check::new(
        "neutral_mass",
        sum < 1.0,
        format!("sum of gamma {sum}"),
    ));
    checks.push(Check::new(
        "neutral_positive",
        nonneg,
        format!("gamma {gamma:?}"),
    ));
    let components: Vec<ComponentCert> = (0..m)
        .into_par_iter()
        .map(|i| {
            certify_rate_finite(
                i,
                gamma[i],
                alpha[i],
                self_loop(model, rho, i),
                model.outflow_bound(i),
            )
        })
        .collect();
    let configured = model.beta().map(|b| {
        (0..m)
            .map(|i| {
                rate_at_finite(
                    gamma[i],
                    alpha[i],
                    self_loop(model, rho, i),
                    i,
                    model.outflow_bound(i),
                    b[i],
                )
            })
            .collect()
    });
    finish(model, k0, checks, components, configured)
}

/// Location of the most negative quasimonotonicity margin.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuasimonotoneWitness {
    pub sample: usize,
    pub component: usize,
    pub time: f64,
    pub margin: f64,
    pub kind: String,
    /// `y(0) - x(0)`.
    pub gap_at_zero: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuasimonotoneReport {
    pub samples: usize,
    pub rejected: usize,
    pub seed: u64,
    pub step: f64,
    pub tol: f64,
    pub worst_margin: f64,
    pub negative: usize,
    /// Components with `y_i > x_i` everywhere but a nonpositive margin.
    pub strict_violations: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub worst: Option<QuasimonotoneWitness>,
    pub pass: bool,
}

/// One cone element `w` for the diagonal rates `beta`, plus a label.
fn draw_cone_element(
    rng: &mut ChaCha8Rng,
    beta: &[f64],
    step: f64,
    horizon: f64,
) -> (Vec<History>, String) {
    let kind = rng.random_range(0..4u8);
    let m = beta.len();
    let mut parts = Vec::with_capacity(m);
    for &b in beta {
        let c = rng.random_range(0.0..1.0);
        let s0 = -rng.random_range(0.0..horizon);
        let slope = rng.random_range(0.0..1.0);
        let choice = if kind == 3 {
            rng.random_range(0..4u8)
        } else {
            kind
        };
        let h = match choice {
            0 => History::constant(&[c], step, horizon),
            1 => History::from_fn(1, step, horizon, |s| vec![c + slope * (s - s0).max(0.0)]),
            2 => History::from_fn(1, step, horizon, |s| vec![c * (-b * s.max(-horizon)).exp()]),
            _ => History::from_fn(1, step, horizon, |s| vec![c * (-b * s.max(s0)).exp()]),
        };
        parts.push(h);
    }
    let label = ["constant", "ramp", "extremal", "mixed"][kind as usize].to_string();
    (parts, label)
}

fn random_lipschitz(rng: &mut ChaCha8Rng, m: usize, step: f64, horizon: f64) -> History {
    let coeffs: Vec<[f64; 5]> = (0..m)
        .map(|_| {
            [
                rng.random_range(-1.0..2.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(0.1..3.0),
                rng.random_range(0.0..std::f64::consts::TAU),
                rng.random_range(-0.5..0.5),
            ]
        })
        .collect();
    History::from_fn(m, step, horizon, |s| {
        coeffs
            .iter()
            .map(|c| c[0] + c[1] * (c[2] * s + c[3]).sin() + c[4] * (0.5 * c[2] * s).cos())
            .collect()
    })
}

/// Samples ordered pairs `x ≤_A y` and checks
/// `F(t, y) - F(t, x) - A (Dy - Dx) ≥ -tol` componentwise, with strict
/// positivity where `y_i > x_i` throughout. Requires a diagonal `A`.
pub fn check_quasimonotone(
    model: &CompartmentModel,
    cone: &ConeParams,
    samples: usize,
    seed: u64,
) -> QuasimonotoneReport {
    assert!(
        cone.is_diagonal(),
        "randomized check needs a diagonal ordering matrix"
    );
    let m = model.m();
    let beta: Vec<f64> = (0..m).map(|i| -cone.a()[(i, i)]).collect();
    let step = 0.01;
    let horizon = (model.max_lag() + 0.5).max(1.0);
    let tol = 1e-9;
    let span = model.driver().period().unwrap_or(10.0);
    let nu = model.neutral_operator();

    let results: Vec<Option<(QuasimonotoneWitness, bool)>> = (0..samples)
        .into_par_iter()
        .map(|k| {
            let mut rng =
                ChaCha8Rng::seed_from_u64(seed ^ (k as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
            let x = random_lipschitz(&mut rng, m, step, horizon);
            let t = rng.random_range(0.0..span);
            let (y, label) = if rng.random_range(0..4u8) == 0 {
                let c = rng.random_range(0.0..1.0);
                (perturb_in_cone(&x, c, cone).ok()?, "shift".to_string())
            } else {
                let (parts, label) = draw_cone_element(&mut rng, &beta, step, horizon);
                let y = x.map(|n, row| {
                    row.iter()
                        .enumerate()
                        .map(|(i, v)| v + parts[i].node(n)[0])
                        .collect()
                });
                (y, label)
            };
            let w = y.axpy(-1.0, &x);
            if !cone_contains(&w, cone) {
                return None;
            }
            let (fx, fy) = (model.eval_f(t, &x), model.eval_f(t, &y));
            let dw = nu.apply(&w.window());
            let mut worst = (0usize, f64::INFINITY);
            let mut strict_bad = false;
            for i in 0..m {
                let a_dw: f64 = (0..m).map(|j| cone.a()[(i, j)] * dw[j]).sum();
                let margin = fy[i] - fx[i] - a_dw;
                let everywhere_above = (0..w.len()).all(|n| w.node(n)[i] > 0.0);
                if everywhere_above && margin <= 0.0 {
                    strict_bad = true;
                }
                if margin < worst.1 {
                    worst = (i, margin);
                }
            }
            let witness = QuasimonotoneWitness {
                sample: k,
                component: worst.0,
                time: t,
                margin: worst.1,
                kind: label,
                gap_at_zero: w.at_zero().to_vec(),
            };
            Some((witness, strict_bad))
        })
        .collect();

    let mut report = QuasimonotoneReport {
        samples,
        rejected: 0,
        seed,
        step,
        tol,
        worst_margin: f64::INFINITY,
        negative: 0,
        strict_violations: 0,
        worst: None,
        pass: true,
    };
    for r in results {
        let Some((witness, strict_bad)) = r else {
            report.rejected += 1;
            continue;
        };
        let margin = witness.margin;
        if margin < -tol {
            report.negative += 1;
        }
        if strict_bad {
            report.strict_violations += 1;
        }
        if margin < report.worst_margin {
            report.worst_margin = margin;
            report.worst = Some(witness);
        }
    }
    report.pass = report.negative == 0 && report.strict_violations == 0;
    report
}
