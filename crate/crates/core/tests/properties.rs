use nfde_core::config::Config;
use nfde_core::history::History;
use nfde_core::integrator::{integrate, IntegratorConfig, Mode};
use nfde_core::measure::{DelayMeasure, Density};
use nfde_core::neutral::NeutralOperator;
use nfde_core::order::{cone_infimum, order_margin, perturb_in_cone, ConeMode, ConeParams};
use proptest::prelude::*;
use serde_json::json;

const DT: f64 = 0.01;

fn wave(step: f64, horizon: f64, c: [f64; 4]) -> History {
    History::from_fn(1, step, horizon, move |s| {
        vec![c[0] + c[1] * (c[2] * s + c[3]).sin()]
    })
}

fn wave_coeffs() -> impl Strategy<Value = [f64; 4]> {
    [-1.0f64..1.0, 0.0f64..1.0, 0.1f64..3.0, 0.0f64..6.3]
}

/// Atoms on grid nodes plus an optional density whose cell midpoints are nodes.
fn grid_measure(max_mass: f64) -> impl Strategy<Value = DelayMeasure> {
    (
        proptest::collection::vec((1usize..200, 0.0f64..1.0), 0..3),
        1usize..30,
        0.0f64..1.0,
        0.0f64..1.0,
    )
        .prop_map(move |(atoms, cells, dens_share, scale)| {
            let total = max_mass * scale;
            let weight_sum: f64 = atoms.iter().map(|a| a.1).sum::<f64>() + dens_share;
            let norm = if weight_sum > 0.0 {
                total / weight_sum
            } else {
                0.0
            };
            let atoms = atoms
                .iter()
                .map(|&(k, w)| (-(k as f64) * DT, w * norm))
                .collect();
            let density = Density {
                step: 2.0 * DT,
                horizon: 2.0 * DT * cells as f64,
                cells: vec![dens_share * norm / cells as f64; cells],
            };
            DelayMeasure::new(atoms, Some(density)).unwrap()
        })
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn measure_moments_are_consistent(nu in grid_measure(2.0), beta in 0.0f64..3.0, c in -2.0f64..2.0) {
        prop_assert!((nu.exp_moment(0.0) - nu.mass()).abs() <= 1e-12);
        prop_assert!(nu.total_variation() + 1e-12 >= nu.mass().abs());
        prop_assert!(nu.exp_moment(beta) + 1e-12 >= nu.mass());
        let integral = nu.integrate_fn(|_| c);
        prop_assert!((integral - c * nu.mass()).abs() <= 1e-12 * (1.0 + c.abs()));
    }

    #[test]
    fn neutral_inverse_round_trips(nu in grid_measure(0.9), c in wave_coeffs()) {
        let op = NeutralOperator::diagonal(vec![nu]).unwrap();
        let gamma = op.gamma();
        let x = wave(DT, 3.0, c);
        let inv = op.invert_hat(&op.apply_hat(&x), 1e-12).unwrap();
        let err = inv.solution.axpy(-1.0, &x).sup_norm();
        prop_assert!(err <= 1e-10 / (1.0 - gamma), "error {err} for gamma {gamma}");
    }

    #[test]
    fn neutral_inverse_is_positive(nu in grid_measure(0.9), c in wave_coeffs()) {
        let op = NeutralOperator::diagonal(vec![nu]).unwrap();
        let h = wave(DT, 3.0, [c[1] + 0.01, c[1], c[2], c[3]]);
        let sol = op.invert_hat(&h, 1e-12).unwrap().solution;
        prop_assert!(sol.samples().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn infimum_is_a_lower_bound(cx in wave_coeffs(), cy in wave_coeffs(), beta in 0.1f64..3.0) {
        let cone = ConeParams::diagonal(&[beta], 0.0).unwrap();
        let (x, y) = (wave(DT, 2.0, cx), wave(DT, 2.0, cy));
        let a = cone_infimum(&x, &y, &cone).unwrap();
        prop_assert!(order_margin(&a, &x, &cone) >= -DT * DT);
        prop_assert!(order_margin(&a, &y, &cone) >= -DT * DT);
        let again = cone_infimum(&a, &a, &cone).unwrap();
        prop_assert!(again.axpy(-1.0, &a).sup_norm() <= DT * DT);
    }

    #[test]
    fn shifted_history_is_above(cx in wave_coeffs(), c in 0.0f64..2.0, off in 0.0f64..1.0) {
        let a = nalgebra::DMatrix::from_row_slice(2, 2, &[-2.0, off, off, -2.0]);
        let cone = ConeParams::new(a, ConeMode::FullLine, 0.0).unwrap();
        let x = History::from_fn(2, DT, 2.0, |s| vec![cx[0] + cx[1] * (cx[2] * s).sin(), (cx[3] * s).cos()]);
        let y = perturb_in_cone(&x, c, &cone).unwrap();
        prop_assert!(order_margin(&x, &y, &cone) >= -1e-12);
    }
}

fn two_compartments(
    g12: f64,
    g21: f64,
    lag12: f64,
    lag21: f64,
    w1: f64,
    w2: f64,
    spread: bool,
) -> serde_json::Value {
    let nu2 = if spread {
        json!({"density": {"step": 0.1, "horizon": 1.0, "cells": vec![w2 / 10.0; 10]}})
    } else {
        json!({"atoms": [[-0.8, w2]]})
    };
    json!({
        "schema": 1,
        "model": {
            "m": 2,
            "transport": [[null, {"family": "linear", "coef": g12}], [{"family": "saturating_arctan", "coef": g21}, null]],
            "delays": {
                "kind": "infinite",
                "neutral": [{"atoms": [[-0.5, w1]]}, nu2],
                "pipes": [[null, {"atoms": [[-lag12, 1.0]]}], [{"atoms": [[-lag21, 1.0]]}, null]]
            }
        }
    })
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 16, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn closed_models_conserve_mass(
        g12 in 0.1f64..1.0,
        g21 in 0.1f64..1.0,
        lag12 in 0.1f64..2.0,
        lag21 in 0.1f64..2.0,
        w1 in 0.0f64..0.4,
        w2 in 0.0f64..0.4,
        c in wave_coeffs(),
    ) {
        let cfg = Config::from_json(&two_compartments(g12, g21, lag12, lag21, w1, w2, true).to_string()).unwrap();
        let model = cfg.build_model().unwrap();
        let dt = 2e-3;
        let horizon = cfg.horizon(&model, dt);
        let x0 = History::from_fn(2, dt, horizon, |s| {
            vec![1.0 + c[1] * (c[2] * s + c[3]).sin(), 0.5 + 0.5 * c[1] * (c[2] * s).cos()]
        });
        let traj = integrate(&model, &x0, &IntegratorConfig::new(dt, 5.0)).unwrap();
        let m0 = model.total_mass(0.0, &x0.window());
        let m1 = model.total_mass(5.0, &traj.window(5.0).unwrap());
        prop_assert!((m1 - m0).abs() <= 1e-5 * (1.0 + m0.abs()), "M(0) = {m0}, M(5) = {m1}");
    }

    #[test]
    fn integration_modes_agree(w in 0.0f64..0.5, lag in 0.2f64..1.5, c in wave_coeffs()) {
        let cfg = Config::from_json(&two_compartments(0.5, 0.7, lag, 1.0, w, w, false).to_string()).unwrap();
        let model = cfg.build_model().unwrap();
        let dt = 5e-3;
        let x0 = History::from_fn(2, dt, cfg.horizon(&model, dt), |s| vec![1.0 + c[1] * (c[2] * s).sin(), 1.0]);
        let a = integrate(&model, &x0, &IntegratorConfig::new(dt, 3.0)).unwrap();
        let b = integrate(&model, &x0, &IntegratorConfig::new(dt, 3.0).with_mode(Mode::MethodOfSteps)).unwrap();
        let gap = a.forward().zip(b.forward()).fold(0.0f64, |m, ((_, p), (_, q))| {
            p.iter().zip(q).fold(m, |m, (u, v)| m.max((u - v).abs()))
        });
        prop_assert!(gap <= 1e-4, "modes differ by {gap}");
    }

    #[test]
    fn shifted_data_stay_ordered(shift in 0.01f64..0.5, c in wave_coeffs()) {
        let cfg = Config::preset("linear3").unwrap();
        let model = cfg.build_model().unwrap();
        let dt = 0.01;
        let x0 = History::from_fn(3, dt, cfg.horizon(&model, dt), |s| {
            vec![1.0 + c[1] * (c[2] * s + c[3]).sin(), 0.8, 0.6 + 0.2 * (c[2] * s).cos()]
        });
        let y0 = x0.shift(shift);
        let icfg = IntegratorConfig::new(dt, 10.0);
        let (tx, ty) = (integrate(&model, &x0, &icfg).unwrap(), integrate(&model, &y0, &icfg).unwrap());
        let cone = ConeParams::diagonal(model.beta().unwrap(), 0.0).unwrap();
        for t in 1..=10 {
            let margin = order_margin(&tx.section(t as f64).unwrap().history, &ty.section(t as f64).unwrap().history, &cone);
            prop_assert!(margin >= -1e-7, "t = {t}: margin {margin}");
        }
    }
}
