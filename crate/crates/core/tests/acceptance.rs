//! Acceptance suite: one line per criterion, nonzero exit if any fails.
//!
//! Run with `cargo test -p nfde-core --test acceptance`.

use std::f64::consts::PI;
use std::time::{Duration, Instant};

use nfde_core::compartment::{
    certify_rate_finite, certify_rate_infinite, check_quasimonotone, CertReport,
};
use nfde_core::config::Config;
use nfde_core::history::History;
use nfde_core::integrator::integrate;
use nfde_core::labsuite::{self, ExperimentKind, ExperimentReport, ExperimentSpec};
use nfde_core::measure::{DelayMeasure, Density};
use nfde_core::neutral::{iteration_bound, NeutralOperator};
use nfde_core::order::{cone_contains, cone_infimum, order_margin, ConeMode, ConeParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion<'a> = (&'static str, Box<dyn Fn() -> Outcome + 'a>);

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn experiment(preset: &str, kind: ExperimentKind, seed: u64) -> ExperimentReport {
    let cfg = Config::preset(preset).expect("preset");
    labsuite::run(&ExperimentSpec::new(kind, cfg, seed)).expect("experiment runs")
}

fn assertion_line(report: &ExperimentReport, name: &str) -> (bool, String) {
    match report.assertion(name) {
        Some(a) => match a.lower {
            Some(lo) => (
                a.pass,
                format!("{name} {:.3e} in [{lo}, {}]", a.value, a.bound),
            ),
            None => (
                a.pass,
                format!("{name} {:.3e} {} {:.3e}", a.value, a.relation, a.bound),
            ),
        },
        None => (false, format!("{name} missing")),
    }
}

/// Max error against `sin` of the sin-history run of the `krisztin` preset at step `dt`.
fn periodic_preset_error(dt: f64) -> (f64, Duration) {
    let cfg = Config::preset("krisztin").unwrap();
    let model = cfg.build_model().unwrap();
    let mut icfg = cfg.integrator();
    icfg.dt = dt;
    let x0 = cfg.initial_history(&model, dt).unwrap();
    let started = Instant::now();
    let traj = integrate(&model, &x0, &icfg).unwrap();
    let elapsed = started.elapsed();
    let err = traj
        .forward()
        .fold(0.0f64, |m, (t, z)| m.max((z[0] - t.sin()).abs()));
    (err, elapsed)
}

fn periodic_solution() -> Outcome {
    let (e1, elapsed) = periodic_preset_error(1e-3);
    let (e2, _) = periodic_preset_error(5e-4);
    let ratio = e1 / e2;
    check(
        e1 <= 1e-2 && elapsed < Duration::from_secs(10) && (3.0..=5.0).contains(&ratio),
        format!(
            "max|z-sin| {e1:.3e}, halving ratio {ratio:.3}, runtime {:.2}s",
            elapsed.as_secs_f64()
        ),
    )
}

/// Four-point Lagrange interpolation on uniform samples starting at `t0`.
fn interp(v: &[f64], t0: f64, dt: f64, t: f64) -> f64 {
    let p = (t - t0) / dt;
    let k = (p.floor() as usize).clamp(1, v.len() - 3) - 1;
    let u = p - k as f64;
    let nodes = [0.0, 1.0, 2.0, 3.0];
    (0..4)
        .map(|i| {
            let w: f64 = (0..4)
                .filter(|&j| j != i)
                .map(|j| (u - nodes[j]) / (nodes[i] - nodes[j]))
                .product();
            w * v[k + i]
        })
        .sum()
}

fn equation_residual() -> Outcome {
    let cfg = Config::preset("krisztin").unwrap();
    let model = cfg.build_model().unwrap();
    let icfg = cfg.integrator();
    let dt = icfg.dt;
    let x0 = cfg.initial_history(&model, dt).unwrap();
    let traj = integrate(&model, &x0, &icfg).unwrap();
    let (c, tau, sigma) = (2f64.sqrt() - 1.0, PI / 4.0, 7.0 * PI / 4.0);
    let back = x0.intervals();
    let t0 = -(back as f64) * dt;
    let v: Vec<f64> = (0..=back + traj.steps())
        .map(|k| traj.z(t0 + k as f64 * dt).unwrap()[0])
        .collect();
    let dz = |t: f64| interp(&v, t0, dt, t) - c * interp(&v, t0, dt, t - tau);
    let first = (1.0 / dt).round() as usize;
    let mut worst = 0.0f64;
    for n in first..traj.steps() {
        let t = n as f64 * dt;
        let lhs = (dz(t + dt) - dz(t - dt)) / (2.0 * dt);
        let rhs = -interp(&v, t0, dt, t) + interp(&v, t0, dt, t - sigma);
        worst = worst.max((lhs - rhs).abs());
    }
    check(
        worst <= 1e-4,
        format!("max residual on [1, 50] {worst:.3e}"),
    )
}

fn monotonicity(report: &ExperimentReport, elapsed: Duration) -> Outcome {
    let (ok, line) = assertion_line(report, "cone_margin");
    let pairs = report
        .data
        .get("pairs")
        .and_then(|p| p.as_array())
        .map_or(0, |p| p.len());
    check(
        ok && elapsed < Duration::from_secs(60),
        format!(
            "{line}, pairs {pairs}, runtime {:.2}s",
            elapsed.as_secs_f64()
        ),
    )
}

fn mass_conservation() -> Outcome {
    let report = experiment("linear3", ExperimentKind::Mass, 1);
    let (ok1, l1) = assertion_line(&report, "drift");
    let (ok2, l2) = assertion_line(&report, "drift_ratio");
    check(ok1 && ok2, format!("{l1}; {l2}"))
}

fn stability_bound(report: &ExperimentReport) -> Outcome {
    let (ok, line) = assertion_line(report, "stability_bound");
    check(ok, line)
}

fn copy_of_base() -> Outcome {
    let conv = experiment("neutral-ring", ExperimentKind::Converge, 1);
    let cover = experiment("neutral-ring", ExperimentKind::Cover, 1);
    let (ok1, l1) = assertion_line(&conv, "residual_primary");
    let (ok2, l2) = assertion_line(&conv, "residual_alt");
    let (ok3, l3) = assertion_line(&cover, "distinct_mass_separation");
    check(ok1 && ok2 && ok3, format!("{l1}; {l2}; {l3}"))
}

/// Brute-force maximum of `f` on a log grid of `points` nodes over `[1e-3, 1e3]`.
fn brute_max(f: impl Fn(f64) -> f64, points: usize) -> (f64, f64) {
    let (lo, hi) = (1e-3f64, 1e3f64);
    let r = (hi / lo).ln() / (points - 1) as f64;
    (0..points)
        .map(|k| {
            let b = lo * (r * k as f64).exp();
            let v = f(b);
            (b, if v.is_finite() { v } else { f64::NEG_INFINITY })
        })
        .fold(
            (lo, f64::NEG_INFINITY),
            |a, c| if c.1 > a.1 { c } else { a },
        )
}

fn certifier_soundness() -> Outcome {
    let nu = DelayMeasure::atom(-1.0, 0.5).unwrap();
    let mut lines = Vec::new();
    let mut ok = true;
    for l_plus in [0.05, 0.2] {
        let cert = certify_rate_infinite(0, &nu, l_plus);
        let (_, best) = brute_max(|b| b * (1.0 - 0.5 * b.exp()), 1_000_000);
        let agree = cert.sat == (best > l_plus) && (cert.value - best).abs() <= 1e-9;
        ok &= agree;
        lines.push(format!(
            "infinite family L+={l_plus}: sat={} scan max {best:.6}",
            cert.sat
        ));
    }
    let (gamma, alpha, rho) = (2f64.sqrt() - 1.0, PI / 4.0, 7.0 * PI / 4.0);
    let cert = certify_rate_finite(0, gamma, alpha, Some((rho, 1.0)), 1.0);
    let (_, best) = brute_max(|b| b * (1.0 - gamma * (b * alpha).exp()), 1_000_000);
    let agree = cert.sat == (best > 1.0) && (cert.value - best).abs() <= 1e-9;
    ok &= agree && !cert.sat;
    lines.push(format!(
        "finite family: sat={} scan max {best:.6}",
        cert.sat
    ));
    let preset = Config::preset("krisztin").unwrap().build_model().unwrap();
    let report = CertReport::certify(&preset);
    ok &= !report.sat;
    lines.push(format!("preset sat={}", report.sat));
    check(ok, lines.join("; "))
}

/// A random positive diagonal measure on grid-aligned lags with mass `≤ cap`.
fn random_measure(rng: &mut ChaCha8Rng, dt: f64, cap: f64) -> DelayMeasure {
    let total = rng.random_range(0.0..cap);
    let split = rng.random_range(0.0..1.0);
    let atoms: Vec<(f64, f64)> = (0..rng.random_range(0..3usize))
        .map(|_| (-(rng.random_range(1..150usize) as f64) * dt, 1.0))
        .collect();
    let cells = rng.random_range(1..20usize);
    let atom_mass = if atoms.is_empty() { 0.0 } else { total * split };
    let density_mass = total - atom_mass;
    let n = atoms.len().max(1) as f64;
    let atoms = atoms.into_iter().map(|(s, _)| (s, atom_mass / n)).collect();
    let density = Density {
        step: 2.0 * dt,
        horizon: 2.0 * dt * cells as f64,
        cells: vec![density_mass / cells as f64; cells],
    };
    DelayMeasure::new(atoms, Some(density)).unwrap()
}

fn operator_inversion() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (dt, horizon, m) = (0.01, 3.0, 2);
    let (mut worst_ratio, mut bound_ok, mut positive_ok) = (0.0f64, true, true);
    for _ in 0..100 {
        let measures: Vec<DelayMeasure> =
            (0..m).map(|_| random_measure(&mut rng, dt, 0.9)).collect();
        let op = NeutralOperator::diagonal(measures).unwrap();
        let gamma = op.gamma();
        let coeffs: Vec<[f64; 3]> = (0..m)
            .map(|_| {
                [
                    rng.random_range(-1.0..1.0),
                    rng.random_range(0.2..4.0),
                    rng.random_range(0.0..6.0),
                ]
            })
            .collect();
        let x = History::from_fn(m, dt, horizon, |s| {
            coeffs
                .iter()
                .map(|c| c[0] * (c[1] * s + c[2]).sin())
                .collect()
        });
        let h = op.apply_hat(&x);
        let tol = 1e-12;
        let inv = op.invert_hat(&h, tol).unwrap();
        let err = inv.solution.axpy(-1.0, &x).sup_norm();
        worst_ratio = worst_ratio.max(err / (1e-10 / (1.0 - gamma)));
        bound_ok &= inv.iterations <= iteration_bound(gamma, tol, h.sup_norm());
        let hp = History::from_fn(m, dt, horizon, |s| {
            coeffs
                .iter()
                .map(|c| c[0].abs() * (1.0 + (c[1] * s).cos()))
                .collect()
        });
        let sol = op.invert_hat(&hp, tol).unwrap().solution;
        positive_ok &= sol.samples().iter().all(|&v| v >= 0.0);
    }
    check(
        worst_ratio <= 1.0 && bound_ok && positive_ok,
        format!("worst error/bound {worst_ratio:.3e}, iterations within bound {bound_ok}, positivity {positive_ok}"),
    )
}

fn lipschitz_pair(rng: &mut ChaCha8Rng, m: usize, dt: f64, horizon: f64) -> History {
    let c: Vec<[f64; 4]> = (0..m)
        .map(|_| {
            [
                rng.random_range(-1.0..1.0),
                rng.random_range(0.2..1.0),
                rng.random_range(0.2..3.0),
                rng.random_range(0.0..6.0),
            ]
        })
        .collect();
    History::from_fn(m, dt, horizon, |s| {
        c.iter()
            .map(|c| c[0] + c[1] * (c[2] * s + c[3]).sin())
            .collect()
    })
}

/// All-pairs membership: nonnegative samples and `w(t) ≥ e^{-β(t-s)} w(s)`
/// for every `s < t`, plus the constant tail on the full line.
fn brute_cone(w: &History, beta: &[f64]) -> bool {
    let n = w.len();
    (0..w.dim()).all(|i| {
        let b = beta[i];
        (0..n).all(|k| w.node(k)[i] >= 0.0)
            && w.node(0)[i] >= (-b * w.step()).exp() * w.node(0)[i]
            && (0..n).all(|j| {
                (j + 1..n).all(|k| {
                    w.node(k)[i] >= (-b * w.step()).exp().powi((k - j) as i32) * w.node(j)[i]
                })
            })
    })
}

fn cone_infimum_properties() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (dt, horizon, m) = (0.01, 2.0, 2);
    let tol = dt * dt;
    let (mut idem, mut lower, mut reduce) = (0.0f64, f64::INFINITY, 0.0f64);
    for _ in 0..200 {
        let beta = [rng.random_range(0.1..3.0), rng.random_range(0.1..3.0)];
        let cone = ConeParams::diagonal(&beta, 0.0).unwrap();
        let x = lipschitz_pair(&mut rng, m, dt, horizon);
        let y = lipschitz_pair(&mut rng, m, dt, horizon);
        let a = cone_infimum(&x, &y, &cone).unwrap();
        idem = idem.max(
            cone_infimum(&a, &a, &cone)
                .unwrap()
                .axpy(-1.0, &a)
                .sup_norm(),
        );
        lower = lower
            .min(order_margin(&a, &x, &cone))
            .min(order_margin(&a, &y, &cone));
        let c = rng.random_range(0.0..1.0);
        let bumped = x.map(|k, v| {
            let s = x.node_time(k);
            v.iter()
                .zip(&beta)
                .map(|(xi, b)| xi + c * (-b * s).exp())
                .collect()
        });
        reduce = reduce.max(
            cone_infimum(&x, &bumped, &cone)
                .unwrap()
                .axpy(-1.0, &x)
                .sup_norm(),
        );
    }
    let (mut agree, mut mismatches, mut members) = (0, 0, 0);
    for trial in 0..400 {
        let beta = [rng.random_range(0.1..3.0), rng.random_range(0.1..3.0)];
        let cone = ConeParams::new(
            nalgebra::DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![
                -beta[0], -beta[1],
            ])),
            ConeMode::FullLine,
            0.0,
        )
        .unwrap();
        let nodes = rng.random_range(2..=64usize);
        let step = 0.05;
        let mut samples = vec![0.0; nodes * m];
        for i in 0..m {
            let mut v = rng.random_range(0.0..1.0);
            for k in 0..nodes {
                if k > 0 {
                    let decay = (-beta[i] * step).exp();
                    let jitter = if trial % 2 == 0 { 0.0 } else { 0.05 };
                    v = decay * v + rng.random_range(-jitter..0.3);
                }
                samples[k * m + i] = v;
            }
        }
        let w = History::new(m, step, samples);
        let brute = brute_cone(&w, &beta);
        members += brute as usize;
        if cone_contains(&w, &cone) == brute {
            agree += 1;
        } else {
            mismatches += 1;
        }
    }
    let ok = idem <= tol && lower >= -tol && reduce <= tol && mismatches == 0;
    check(
        ok,
        format!(
            "idempotence {idem:.2e}, lower-bound margin {lower:.2e}, reduction {reduce:.2e} (tol {tol:.0e}); adjacent vs all-pairs {agree}/{} ({members} members)",
            agree + mismatches
        ),
    )
}

fn canary() -> Outcome {
    let cfg = Config::preset("canary").unwrap();
    let model = cfg.build_model().unwrap();
    let cone = ConeParams::diagonal(model.beta().unwrap(), 1e-9).unwrap();
    let report = check_quasimonotone(&model, &cone, 1000, 10);
    check(
        report.negative >= 1,
        format!(
            "{} negative margins in {} samples, worst {:.3e}",
            report.negative, report.samples, report.worst_margin
        ),
    )
}

fn main() {
    let started = Instant::now();
    let monotone = experiment("linear3", ExperimentKind::Monotone, 1);
    let monotone_time = started.elapsed();
    let criteria: Vec<Criterion> = vec![
        ("periodic solution", Box::new(periodic_solution)),
        ("equation residual", Box::new(equation_residual)),
        (
            "monotonicity",
            Box::new(|| monotonicity(&monotone, monotone_time)),
        ),
        ("mass conservation", Box::new(mass_conservation)),
        (
            "ordered-pair stability",
            Box::new(|| stability_bound(&monotone)),
        ),
        ("copy of the base", Box::new(copy_of_base)),
        ("certifier soundness", Box::new(certifier_soundness)),
        ("operator inversion", Box::new(operator_inversion)),
        ("cone infimum", Box::new(cone_infimum_properties)),
        ("falsifiability canary", Box::new(canary)),
    ];
    let mut failed = 0;
    for (n, (name, run)) in criteria.iter().enumerate() {
        match run() {
            Ok(detail) => println!("criterion {:>2} {name}: PASS ({detail})", n + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {:>2} {name}: FAIL ({detail})", n + 1);
            }
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
