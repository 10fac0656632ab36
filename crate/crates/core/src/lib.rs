//! Numerics for neutral functional differential equations of the form
//! `d/dt D z_t = F(ω·t, z_t)`, exponential orderings of their phase space,
//! and closed compartmental systems with transit delays.
//!
//! The crate is organized bottom-up:
//!
//! - [`measure`]: delay measures (atoms plus piecewise-constant densities).
//! - [`history`]: sampled histories, trajectories and sections.
//! - [`neutral`]: the operator `D`, its lift to histories and its inverse.
//! - [`order`]: exponential ordering cones and lower bounds in them.
//! - [`compartment`]: the compartmental model family and its certifier.
//! - [`integrator`]: fixed-step time integration.
//! - [`config`]: model documents and the built-in presets.
//! - [`labsuite`]: reproducible numerical experiments.

pub mod compartment;
pub mod config;
pub mod history;
pub mod integrator;
pub mod labsuite;
pub mod measure;
pub mod neutral;
pub mod order;

pub use compartment::{CertReport, CompartmentModel, ModelSpec};
pub use config::Config;
pub use history::{History, PastSampler, Section, Trajectory, Window};
pub use integrator::{integrate, IntegratorConfig, NeutralSystem};
pub use measure::DelayMeasure;
pub use neutral::NeutralOperator;
pub use order::ConeParams;
