//! `nfde`: simulate, certify and run experiments on compartmental NFDE models.
//!
//! Exit codes: 0 ok, 1 configuration error, 2 integration failure,
//! 3 certification UNSAT, 4 experiment failure.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use log::info;
use nfde_core::compartment::{CertReport, CompartmentModel};
use nfde_core::config::{Config, ConfigError};
use nfde_core::integrator::integrate;
use nfde_core::labsuite::{
    self, ExperimentError, ExperimentKind, ExperimentReport, ExperimentSpec,
};
use serde::Serialize;
use serde_json::json;

const EXIT_CONFIG: u8 = 1;
const EXIT_INTEGRATION: u8 = 2;
const EXIT_UNSAT: u8 = 3;
const EXIT_EXPERIMENT: u8 = 4;

#[derive(Parser, Debug)]
#[command(
    name = "nfde",
    version,
    about = "Neutral delay compartmental models: simulate, certify, experiment"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Model document (JSON, `schema: 1`).
    #[arg(long, global = true, env = "NFDE_CONFIG", conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Built-in model: krisztin, linear3, neutral-ring, canary, decay.
    #[arg(long, global = true, env = "NFDE_PRESET")]
    preset: Option<String>,
    /// Output directory.
    #[arg(long, global = true, env = "NFDE_OUT", default_value = "out")]
    out: PathBuf,
    /// Overrides `run.dt`.
    #[arg(long, global = true, env = "NFDE_DT")]
    dt: Option<f64>,
    /// Overrides `run.t_end`.
    #[arg(long = "t-end", global = true, env = "NFDE_T_END")]
    t_end: Option<f64>,
    #[arg(long, global = true, env = "NFDE_SEED", default_value_t = 1)]
    seed: u64,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Integrate the model and write trajectory.csv plus run.json.
    Simulate {
        /// Write every n-th sample.
        #[arg(long, default_value_t = 1)]
        stride: usize,
    },
    /// Check the model hypotheses and write cert.json.
    Certify {
        /// Radius of the initial ball for the absorbing-ball bound.
        #[arg(long, default_value_t = 1.0)]
        k0: f64,
    },
    /// Run one or more experiments in parallel; each writes `<out>/<kind>/report.json`.
    Experiment {
        #[arg(required = true, value_parser = parse_kind)]
        kinds: Vec<ExperimentKind>,
    },
}

fn parse_kind(s: &str) -> Result<ExperimentKind, String> {
    s.parse()
}

/// Everything needed to reproduce a run; echoed into every JSON output.
#[derive(Debug, Clone, Serialize)]
struct RunManifest {
    source: String,
    subcommand: String,
    out: PathBuf,
    seed: u64,
    dt: Option<f64>,
    t_end: Option<f64>,
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn new(code: u8, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::new(EXIT_CONFIG, e.to_string())
    }
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure::new(EXIT_CONFIG, format!("{}: {e}", path.display()))
}

fn load(common: &Common) -> Result<(Config, String), Failure> {
    let (mut cfg, source) = match (&common.config, &common.preset) {
        (Some(path), _) => (
            Config::from_path(path)?,
            format!("--config {}", path.display()),
        ),
        (None, Some(name)) => (Config::preset(name)?, format!("--preset {name}")),
        (None, None) => {
            return Err(Failure::new(
                EXIT_CONFIG,
                "one of --config or --preset is required",
            ))
        }
    };
    if let Some(dt) = common.dt {
        cfg.run.dt = dt;
    }
    if let Some(t) = common.t_end {
        cfg.run.t_end = t;
    }
    cfg.validate_run()?;
    Ok((cfg, source))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).expect("serializable");
    fs::write(path, text + "\n").map_err(|e| io_failure(path, e))
}

fn simulate(
    cfg: &Config,
    model: &CompartmentModel,
    manifest: &RunManifest,
    stride: usize,
) -> Result<(), Failure> {
    let icfg = cfg.integrator();
    let x0 = cfg.initial_history(model, icfg.dt)?;
    let started = Instant::now();
    let traj =
        integrate(model, &x0, &icfg).map_err(|e| Failure::new(EXIT_INTEGRATION, e.to_string()))?;
    let elapsed = started.elapsed().as_secs_f64();
    info!("integrated {} steps in {elapsed:.3}s", traj.steps());

    let csv = manifest.out.join("trajectory.csv");
    let file = fs::File::create(&csv).map_err(|e| io_failure(&csv, e))?;
    let mut w = BufWriter::new(file);
    traj.to_csv(&mut w, stride)
        .and_then(|_| w.flush())
        .map_err(|e| io_failure(&csv, e))?;

    let mass0 = model.total_mass(0.0, &x0.window());
    let mass_end = traj
        .window(traj.t_end())
        .map(|w| model.total_mass(traj.t_end(), &w))
        .ok();
    let sidecar = json!({
        "manifest": manifest,
        "model_hash": cfg.model_hash(),
        "dt": icfg.dt,
        "t_end": traj.t_end(),
        "scheme": icfg.scheme,
        "mode": icfg.mode,
        "horizon": x0.horizon(),
        "stats": traj.stats,
        "mass_start": mass0,
        "mass_end": mass_end,
        "elapsed_seconds": elapsed,
        "config": cfg,
    });
    write_json(&manifest.out.join("run.json"), &sidecar)?;
    println!("wrote {} ({} steps)", csv.display(), traj.steps());
    Ok(())
}

fn certify(
    cfg: &Config,
    model: &CompartmentModel,
    manifest: &RunManifest,
    k0: f64,
) -> Result<(), Failure> {
    let report = CertReport::certify_with_k0(model, k0);
    let doc = json!({
        "manifest": manifest,
        "model_hash": cfg.model_hash(),
        "report": report,
    });
    write_json(&manifest.out.join("cert.json"), &doc)?;
    for c in &report.components {
        println!(
            "{} compartment {}: {} (beta {:.6}, margin {:.6})",
            c.condition,
            c.index + 1,
            if c.sat { "SAT" } else { "UNSAT" },
            c.beta,
            c.margin
        );
    }
    for c in report.checks.iter().filter(|c| !c.ok) {
        println!("{}: violated ({})", c.name, c.detail);
    }
    if report.sat {
        println!("SAT");
        Ok(())
    } else {
        println!("UNSAT");
        Err(Failure::new(EXIT_UNSAT, report.failures().join("; ")))
    }
}

fn experiment_code(e: &ExperimentError) -> u8 {
    match e {
        ExperimentError::Config(_) => EXIT_CONFIG,
        ExperimentError::Integrate(_) => EXIT_INTEGRATION,
        _ => EXIT_EXPERIMENT,
    }
}

fn experiments(
    cfg: &Config,
    source: &str,
    manifest: &RunManifest,
    kinds: &[ExperimentKind],
) -> Result<(), Failure> {
    let results: Vec<(ExperimentKind, Result<ExperimentReport, ExperimentError>)> =
        std::thread::scope(|scope| {
            let handles: Vec<_> = kinds
                .iter()
                .map(|&kind| {
                    let spec =
                        ExperimentSpec::new(kind, cfg.clone(), manifest.seed).with_source(source);
                    scope.spawn(move || (kind, labsuite::run(&spec)))
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("experiment thread"))
                .collect()
        });
    let mut code = 0u8;
    let mut messages = Vec::new();
    for (kind, result) in results {
        match result {
            Ok(report) => {
                let dir = manifest.out.join(kind.as_str());
                fs::create_dir_all(&dir).map_err(|e| io_failure(&dir, e))?;
                let doc = json!({"manifest": manifest, "report": report});
                write_json(&dir.join("report.json"), &doc)?;
                for a in &report.assertions {
                    let bound = match a.lower {
                        Some(lo) => format!("in [{lo}, {}]", a.bound),
                        None => format!("{} {:e}", a.relation, a.bound),
                    };
                    println!(
                        "{kind} {}: {} (value {:e}, {bound})",
                        a.name,
                        if a.pass { "pass" } else { "FAIL" },
                        a.value,
                    );
                }
                if !report.pass {
                    code = code.max(EXIT_EXPERIMENT);
                    messages.push(format!(
                        "{kind}: {}; replay: {}",
                        report.verdict, report.replay
                    ));
                }
            }
            Err(e) => {
                code = code.max(experiment_code(&e));
                messages.push(format!("{kind}: {e}"));
            }
        }
    }
    if code == 0 {
        Ok(())
    } else {
        Err(Failure::new(code, messages.join("\n")))
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let (cfg, source) = load(&cli.common)?;
    let model = cfg.build_model()?;
    let subcommand = match &cli.command {
        Command::Simulate { .. } => "simulate".to_string(),
        Command::Certify { .. } => "certify".to_string(),
        Command::Experiment { kinds } => {
            let names: Vec<&str> = kinds.iter().map(|k| k.as_str()).collect();
            format!("experiment {}", names.join(" "))
        }
    };
    let manifest = RunManifest {
        source: source.clone(),
        subcommand,
        out: cli.common.out.clone(),
        seed: cli.common.seed,
        dt: cli.common.dt,
        t_end: cli.common.t_end,
    };
    fs::create_dir_all(&manifest.out).map_err(|e| io_failure(&manifest.out, e))?;
    match cli.command {
        Command::Simulate { stride } => simulate(&cfg, &model, &manifest, stride),
        Command::Certify { k0 } => certify(&cfg, &model, &manifest, k0),
        Command::Experiment { kinds } => experiments(&cfg, &source, &manifest, &kinds),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_CONFIG)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("nfde: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
