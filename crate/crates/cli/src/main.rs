use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

use qtraj_core::lab::{convergence_report, girsanov_check, EnsembleSpec};
use qtraj_core::sde::{girsanov_weight, MAX_STEP};
use qtraj_core::{
    master_evolve, run_trajectory, simulate_physical, simulate_sde, simulate_wave, CMat2,
    DensityMatrix, WaveFunction,
};

mod config;

use config::{RawConfig, RunConfig};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{0}")]
    Runtime(String),
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            _ => 1,
        }
    }
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

#[derive(Parser)]
#[command(
    name = "qtraj",
    version,
    about = "Repeated-measurement quantum trajectories and their diffusive limit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Flat `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Base seed for all randomness.
    #[arg(long)]
    seed: Option<u64>,
    /// Output file (default: stdout).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Omit the timestamp line from the output.
    #[arg(long)]
    no_timestamp: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Form {
    Belavkin,
    Physical,
    Wave,
}

#[derive(Subcommand)]
enum Command {
    /// One trajectory of the repeated-measurement chain.
    SimulateDiscrete {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        n: Option<u32>,
    },
    /// One Euler–Maruyama path of the diffusive equation.
    SimulateSde {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "belavkin")]
        form: Form,
        #[arg(long)]
        h: Option<f64>,
    },
    /// RK4 solution of the master equation.
    Master {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        h: Option<f64>,
    },
    /// Convergence statistics of the chain toward its diffusive limit.
    Converge {
        #[command(flatten)]
        common: Common,
        /// Comma-separated, increasing.
        #[arg(long)]
        n_values: Option<String>,
        #[arg(long)]
        trajectories: Option<usize>,
        #[arg(long)]
        sde_step: Option<f64>,
        /// Comparison time (default: the horizon).
        #[arg(long)]
        t: Option<f64>,
    },
    /// Radon–Nikodym reweighting against the innovation-driven simulation.
    Girsanov {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        trajectories: Option<usize>,
        #[arg(long)]
        h: Option<f64>,
    },
}

fn load(common: &Common, overrides: &[(&str, Option<String>)]) -> Result<RunConfig, CliError> {
    let mut raw = RawConfig::load(common.config.as_deref())?;
    raw.set("seed", common.seed.map(|s| s.to_string()));
    for (key, value) in overrides {
        raw.set(key, value.clone());
    }
    RunConfig::from_raw(&raw)
}

fn check_sde_step(h: f64) -> Result<(), CliError> {
    if h > 0.0 && h <= MAX_STEP {
        Ok(())
    } else {
        Err(CliError::Config(format!(
            "step h = {h} must satisfy 0 < h <= {MAX_STEP}"
        )))
    }
}

fn open_output(path: Option<&Path>) -> Result<Box<dyn Write>, CliError> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).map_err(|e| {
            CliError::Runtime(format!("cannot create {}: {e}", p.display()))
        })?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

/// Writes the payload, preceded by a timestamp comment unless suppressed.
fn emit(
    common: &Common,
    body: impl FnOnce(&mut dyn Write) -> io::Result<()>,
) -> Result<(), CliError> {
    let mut out = open_output(common.out.as_deref())?;
    if !common.no_timestamp {
        let secs = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        writeln!(out, "# generated_at_unix = {secs}")?;
    }
    body(&mut out)?;
    out.flush()?;
    Ok(())
}

/// Summaries go to stdout when the data went to a file, to stderr otherwise.
fn say(common: &Common, text: &str) {
    if common.out.is_some() {
        print!("{text}");
    } else {
        eprint!("{text}");
    }
}

fn describe(rho: &DensityMatrix) -> String {
    let m = rho.matrix();
    format!(
        "rho = [[{:.6}, {:.6}{:+.6}i], [., {:.6}]], purity {:.6}",
        m.0[0][0].re,
        m.0[0][1].re,
        m.0[0][1].im,
        m.0[1][1].re,
        rho.purity()
    )
}

fn pure_vector(rho: &DensityMatrix) -> Result<WaveFunction, CliError> {
    if (rho.purity() - 1.0).abs() > 1e-10 {
        return Err(CliError::Config("--form wave needs a pure rho0".into()));
    }
    let eig = qtraj_core::linalg::herm_eigen2(rho.matrix()).map_err(runtime)?;
    WaveFunction::normalized(eig.vectors[0]).map_err(runtime)
}

fn simulate_discrete(common: &Common, n: Option<u32>) -> Result<(), CliError> {
    let cfg = load(common, &[("n", n.map(|v| v.to_string()))])?;
    let rec = run_trajectory(&cfg.model, &cfg.rho0, cfg.seed).map_err(runtime)?;
    emit(common, |out| rec.write_csv(out))?;
    let [zeros, ones] = rec.outcome_counts();
    say(
        common,
        &format!(
            "steps {}, outcomes 0: {zeros}, 1: {ones}\nfinal {}\n",
            rec.num_steps(),
            describe(rec.final_state())
        ),
    );
    Ok(())
}

fn simulate_sde_cmd(common: &Common, form: Form, h: Option<f64>) -> Result<(), CliError> {
    let cfg = load(common, &[("h", h.map(|v| v.to_string()))])?;
    check_sde_step(cfg.h)?;
    let summary = match form {
        Form::Belavkin | Form::Physical => {
            let mut path = match form {
                Form::Belavkin => simulate_sde(&cfg.model, &cfg.rho0, cfg.h, cfg.seed, None),
                _ => simulate_physical(&cfg.model, &cfg.rho0, cfg.h, cfg.seed),
            }
            .map_err(runtime)?;
            if matches!(form, Form::Belavkin) {
                path.weights = Some(girsanov_weight(&path, &cfg.model.coupling()));
            }
            emit(common, |out| path.write_csv(out))?;
            format!("final {}\n", describe(path.final_state()))
        }
        Form::Wave => {
            let psi0 = pure_vector(&cfg.rho0)?;
            let path = simulate_wave(&cfg.model, &psi0, cfg.h, cfg.seed, None).map_err(runtime)?;
            emit(common, |out| path.write_csv(out))?;
            let last = path.vectors.last().expect("nonempty").projector();
            format!("final {}\n", describe(&last))
        }
    };
    say(common, &summary);
    Ok(())
}

fn master(common: &Common, h: Option<f64>) -> Result<(), CliError> {
    let mut raw_seed = common.clone();
    // The master equation is deterministic; a seed is accepted but not needed.
    raw_seed.seed.get_or_insert(0);
    let cfg = load(&raw_seed, &[("h", h.map(|v| v.to_string()))])?;
    if cfg.h.is_nan() || cfg.h <= 0.0 {
        return Err(CliError::Config(format!(
            "step h = {} must be positive",
            cfg.h
        )));
    }
    let path = master_evolve(&cfg.model, &cfg.rho0, cfg.h).map_err(runtime)?;
    emit(common, |out| path.write_csv(out))?;
    say(common, &format!("final {}\n", describe(path.final_state())));
    Ok(())
}

fn converge(
    common: &Common,
    n_values: Option<String>,
    trajectories: Option<usize>,
    sde_step: Option<f64>,
    t: Option<f64>,
) -> Result<(), CliError> {
    let cfg = load(
        common,
        &[
            ("n_values", n_values),
            ("trajectories", trajectories.map(|v| v.to_string())),
            ("sde_step", sde_step.map(|v| v.to_string())),
            ("t", t.map(|v| v.to_string())),
        ],
    )?;
    check_sde_step(cfg.sde_step)?;
    let spec = EnsembleSpec {
        cfg: cfg.model,
        rho0: cfg.rho0,
        num_trajectories: cfg.trajectories,
        base_seed: cfg.seed,
        n_values: cfg.n_values.clone(),
        sde_step: cfg.sde_step,
    };
    spec.validate()
        .map_err(|e| CliError::Config(e.to_string()))?;
    let report = convergence_report(&spec, &cfg.functionals, cfg.t).map_err(runtime)?;
    emit(common, |out| report.write_csv(out))?;
    say(common, &report.summary());
    Ok(())
}

fn girsanov(common: &Common, trajectories: Option<usize>, h: Option<f64>) -> Result<(), CliError> {
    let cfg = load(
        common,
        &[
            ("trajectories", trajectories.map(|v| v.to_string())),
            ("h", h.map(|v| v.to_string())),
        ],
    )?;
    check_sde_step(cfg.h)?;
    let r = girsanov_check(
        &cfg.model,
        &cfg.rho0,
        cfg.h,
        cfg.trajectories,
        cfg.seed,
        &CMat2::pauli_z(),
    )
    .map_err(runtime)?;
    let rows = [
        ("weight_mean", r.weight.mean),
        ("weight_se", r.weight.se),
        ("reweighted_sigma_z_mean", r.reweighted.mean),
        ("reweighted_sigma_z_se", r.reweighted.se),
        ("physical_sigma_z_mean", r.physical.mean),
        ("physical_sigma_z_se", r.physical.se),
    ];
    emit(common, |out| {
        writeln!(out, "statistic,value")?;
        for (name, v) in rows {
            writeln!(out, "{name},{}", qtraj_core::discrete::fmt_f64(v))?;
        }
        Ok(())
    })?;
    say(
        common,
        &format!(
            "paths {}, h {}\nE[Z_T] = {:.6} +- {:.6}\nreweighted Tr[rho sigma_z] = {:.6} +- {:.6}\nphysical   Tr[rho sigma_z] = {:.6} +- {:.6}\n",
            r.paths, r.h, r.weight.mean, r.weight.se, r.reweighted.mean, r.reweighted.se,
            r.physical.mean, r.physical.se
        ),
    );
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::SimulateDiscrete { common, n } => simulate_discrete(&common, n),
        Command::SimulateSde { common, form, h } => simulate_sde_cmd(&common, form, h),
        Command::Master { common, h } => master(&common, h),
        Command::Converge {
            common,
            n_values,
            trajectories,
            sde_step,
            t,
        } => converge(&common, n_values, trajectories, sde_step, t),
        Command::Girsanov {
            common,
            trajectories,
            h,
        } => girsanov(&common, trajectories, h),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("qtraj: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
