//! Flat `key = value` run configuration. `#` starts a comment; flags given on
//! the command line override keys from the file.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use qtraj_core::lab::{Functional, DEFAULT_SDE_STEP};
use qtraj_core::{
    c, AnticommutatorOrder, CMat2, DensityMatrix, FieldHamiltonian, ModelConfig, Observable,
};

use crate::CliError;

const KNOWN_KEYS: &[&str] = &[
    "h0",
    "c",
    "phi",
    "lambda0",
    "lambda1",
    "theta",
    "n",
    "t_horizon",
    "field_hamiltonian",
    "lindblad_anticommutator",
    "rho0",
    "seed",
    "trajectories",
    "n_values",
    "sde_step",
    "h",
    "t",
    "functionals",
];

#[derive(Debug, Default, Clone)]
pub struct RawConfig(BTreeMap<String, String>);

impl RawConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut map = BTreeMap::new();
        for (no, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                CliError::Config(format!("line {}: expected `key = value`", no + 1))
            })?;
            let key = key.trim();
            if !KNOWN_KEYS.contains(&key) {
                return Err(CliError::Config(format!(
                    "line {}: unknown key `{key}`",
                    no + 1
                )));
            }
            map.insert(key.to_string(), value.trim().to_string());
        }
        Ok(RawConfig(map))
    }

    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        match path {
            None => Ok(RawConfig::default()),
            Some(p) => {
                let text = fs::read_to_string(p)
                    .map_err(|e| CliError::Config(format!("cannot read {}: {e}", p.display())))?;
                RawConfig::parse(&text)
            }
        }
    }

    pub fn set(&mut self, key: &str, value: Option<String>) {
        if let Some(v) = value {
            self.0.insert(key.to_string(), v);
        }
    }

    fn get(&self, key: &str) -> Option<&str> {
        self.0.get(key).map(String::as_str)
    }

    fn parse_or<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T, CliError> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| CliError::Config(format!("invalid value for `{key}`: `{v}`"))),
        }
    }

    fn reals(&self, key: &str, count: usize) -> Result<Option<Vec<f64>>, CliError> {
        let Some(v) = self.get(key) else {
            return Ok(None);
        };
        let vals = v
            .split(|ch: char| ch == ',' || ch.is_whitespace())
            .filter(|s| !s.is_empty())
            .map(str::parse)
            .collect::<Result<Vec<f64>, _>>()
            .map_err(|_| CliError::Config(format!("invalid number in `{key}`")))?;
        if vals.len() != count {
            return Err(CliError::Config(format!(
                "`{key}` needs {count} numbers, got {}",
                vals.len()
            )));
        }
        Ok(Some(vals))
    }
}

/// Everything a subcommand needs, after defaults and validation.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub rho0: DensityMatrix,
    pub seed: u64,
    pub trajectories: usize,
    pub n_values: Vec<u32>,
    pub sde_step: f64,
    pub h: f64,
    pub t: f64,
    pub functionals: Vec<Functional>,
}

fn parse_rho0(v: &str) -> Result<DensityMatrix, CliError> {
    let named = match v {
        "ground" => Some(DensityMatrix::ground()),
        "excited" => Some(DensityMatrix::excited()),
        "mixed" => Some(DensityMatrix::maximally_mixed()),
        "plus" => Some(
            DensityMatrix::new(CMat2::from_real(0.5, 0.5, 0.5, 0.5))
                .map_err(|e| CliError::Config(e.to_string()))?,
        ),
        _ => None,
    };
    if let Some(rho) = named {
        return Ok(rho);
    }
    let mut raw = RawConfig::default();
    raw.set("rho0", Some(v.to_string()));
    let x = raw.reals("rho0", 4)?.expect("just set");
    let m = CMat2::new(c(x[0], 0.0), c(x[1], x[2]), c(x[1], -x[2]), c(x[3], 0.0));
    DensityMatrix::new(m).map_err(|e| CliError::Config(format!("rho0: {e}")))
}

fn parse_functionals(v: &str) -> Result<Vec<Functional>, CliError> {
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|name| match name {
            "sigma_x" => Ok(Functional::new(name, CMat2::pauli_x())),
            "sigma_y" => Ok(Functional::new(name, CMat2::pauli_y())),
            "sigma_z" => Ok(Functional::new(name, CMat2::pauli_z())),
            other => Err(CliError::Config(format!("unknown functional `{other}`"))),
        })
        .collect()
}

impl RunConfig {
    pub fn from_raw(raw: &RawConfig) -> Result<Self, CliError> {
        let seed = match raw.get("seed") {
            None => {
                return Err(CliError::Config(
                    "missing required key `seed` (pass --seed or set it in the config file)".into(),
                ))
            }
            Some(_) => raw.parse_or("seed", 0u64)?,
        };

        let mut model = ModelConfig::amplitude_damping(
            raw.parse_or("phi", PI / 2.0)?,
            raw.parse_or("n", 100u32)?,
            raw.parse_or("t_horizon", 1.0)?,
        );
        let lambda0 = raw.parse_or("lambda0", model.observable.lambda0)?;
        let lambda1 = raw.parse_or("lambda1", model.observable.lambda1)?;
        model.observable = Observable::new(model.observable.mixing_angle, lambda0, lambda1)
            .map_err(|e| CliError::Config(e.to_string()))?;
        if let Some(h) = raw.reals("h0", 4)? {
            model.h0 = CMat2::new(c(h[0], 0.0), c(h[1], h[2]), c(h[1], -h[2]), c(h[3], 0.0));
        }
        if let Some(v) = raw.reals("c", 8)? {
            model.c = CMat2::new(c(v[0], v[1]), c(v[2], v[3]), c(v[4], v[5]), c(v[6], v[7]));
        }
        model.theta = raw.parse_or("theta", 0.0)?;
        model.field_hamiltonian = raw.parse_or("field_hamiltonian", FieldHamiltonian::default())?;
        model.anticommutator =
            raw.parse_or("lindblad_anticommutator", AnticommutatorOrder::default())?;
        model
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;

        let rho0 = parse_rho0(raw.get("rho0").unwrap_or("excited"))?;
        let n_values = match raw.get("n_values") {
            None => vec![model.n],
            Some(v) => v
                .split(',')
                .map(|s| s.trim().parse::<u32>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|_| CliError::Config(format!("invalid value for `n_values`: `{v}`")))?,
        };
        let functionals = match raw.get("functionals") {
            None => Functional::pauli(),
            Some(v) => parse_functionals(v)?,
        };
        let t = raw.parse_or("t", model.t_horizon)?;
        Ok(RunConfig {
            rho0,
            seed,
            trajectories: raw.parse_or("trajectories", 1000usize)?,
            n_values,
            sde_step: raw.parse_or("sde_step", DEFAULT_SDE_STEP)?,
            h: raw.parse_or("h", 1e-3)?,
            t,
            functionals,
            model,
        })
    }
}
