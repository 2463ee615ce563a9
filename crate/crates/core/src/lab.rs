//! Ensemble experiments comparing the measurement chain with its diffusive
//! limit: mean against the master equation, quadratic variation of `W_n`,
//! two-sample Kolmogorov–Smirnov tests and the decay of the residual `ε_n`.
//!
//! Trajectories run in parallel, but every reduction walks them in index
//! order, so a report is a deterministic function of its spec.

use std::fmt::Write as _;
use std::io::{self, Write};

use rayon::prelude::*;
use thiserror::Error;

use crate::discrete::{
    embed, fmt_f64, residual_epsilon, run_with_channel, sup_norm, MeasurementChannel,
    TrajectoryError,
};
use crate::linalg::{CMat2, HERMITICITY_TOL};
use crate::model::{floor_steps, DensityMatrix, ModelConfig, ModelError, WaveFunction};
use crate::sde::{
    brownian_increments, coarsen_noise, girsanov_weight, integrate_density, master_matrices,
    simulate_physical, simulate_sde, simulate_wave, SdeError,
};
use crate::seed::{stream_seed, trajectory_seed};

/// Largest RK4 step used for master-equation references.
pub const MASTER_STEP: f64 = 1e-3;
/// Default step of the SDE reference ensemble.
pub const DEFAULT_SDE_STEP: f64 = 5e-4;

/// Grid on which functional values are compared.
pub const FUNCTIONAL_RESOLUTION: f64 = 1e-12;

const CHUNK: usize = 512;

const TAG_MEAN: u64 = 1;
const TAG_QV: u64 = 2;
const TAG_KS_DISCRETE: u64 = 3;
const TAG_KS_SDE: u64 = 4;
const TAG_RESIDUAL: u64 = 5;
const TAG_GIRSANOV_P: u64 = 6;
const TAG_GIRSANOV_Q: u64 = 7;
const TAG_EMBEDDING: u64 = 8;

#[derive(Debug, Error)]
pub enum LabError {
    #[error("need at least 2 trajectories, got {0}")]
    TooFewTrajectories(usize),
    #[error("n values must be nonempty and strictly increasing")]
    BadNValues,
    #[error("the observable is diagonal: increments are not normalized")]
    DiagonalObservable,
    #[error("time {t} lies beyond the horizon {horizon}")]
    BeyondHorizon { t: f64, horizon: f64 },
    #[error("step sizes must be positive multiples of the smallest one")]
    StepLadder,
    #[error("trajectory {index}: {source}")]
    Trajectory {
        index: u64,
        #[source]
        source: TrajectoryError,
    },
    #[error("path {index}: {source}")]
    Sde {
        index: u64,
        #[source]
        source: SdeError,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleSpec {
    pub cfg: ModelConfig,
    pub rho0: DensityMatrix,
    pub num_trajectories: usize,
    pub base_seed: u64,
    pub n_values: Vec<u32>,
    pub sde_step: f64,
}

impl EnsembleSpec {
    pub fn validate(&self) -> Result<(), LabError> {
        if self.num_trajectories < 2 {
            return Err(LabError::TooFewTrajectories(self.num_trajectories));
        }
        if self.n_values.is_empty()
            || self.n_values[0] == 0
            || self.n_values.windows(2).any(|w| w[1] <= w[0])
        {
            return Err(LabError::BadNValues);
        }
        self.cfg.validate()?;
        Ok(())
    }

    fn check_time(&self, t: f64) -> Result<(), LabError> {
        if t < 0.0 || t > self.cfg.t_horizon + 1e-12 {
            return Err(LabError::BeyondHorizon {
                t,
                horizon: self.cfg.t_horizon,
            });
        }
        Ok(())
    }
}

/// Largest deviation of a state from Hermiticity, unit trace and positivity.
pub fn state_defect(rho: &DensityMatrix) -> f64 {
    let m = rho.matrix();
    m.hermiticity_defect()
        .max((m.trace() - 1.0).norm())
        .max(-rho.min_eigenvalue())
        .max(0.0)
}

fn max_defect<'a>(states: impl IntoIterator<Item = &'a DensityMatrix>) -> f64 {
    states.into_iter().map(state_defect).fold(0.0, f64::max)
}

/// Maps `job` over trajectory indices `0..m` in parallel and folds the
/// results in index order.
fn ensemble_fold<T, A, F, G>(m: usize, mut acc: A, job: F, mut fold: G) -> Result<A, LabError>
where
    T: Send,
    F: Fn(u64) -> Result<T, LabError> + Sync,
    G: FnMut(&mut A, T),
{
    for start in (0..m).step_by(CHUNK) {
        let end = (start + CHUNK).min(m);
        let part: Vec<T> = (start as u64..end as u64)
            .into_par_iter()
            .map(&job)
            .collect::<Result<_, _>>()?;
        for item in part {
            fold(&mut acc, item);
        }
    }
    Ok(acc)
}

/// Sample mean and standard error.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MeanSe {
    pub mean: f64,
    pub se: f64,
}

impl MeanSe {
    pub fn of(values: &[f64]) -> Self {
        let m = values.len() as f64;
        let mean = values.iter().sum::<f64>() / m;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1.0);
        MeanSe {
            mean,
            se: (var / m).sqrt(),
        }
    }
}

fn run_discrete(
    channel: &MeasurementChannel,
    cfg: &ModelConfig,
    rho0: &DensityMatrix,
    seed: u64,
    index: u64,
) -> Result<crate::discrete::TrajectoryRecord, LabError> {
    run_with_channel(
        channel,
        cfg.n,
        cfg.num_steps(),
        rho0,
        trajectory_seed(seed, index),
    )
    .map_err(|source| LabError::Trajectory { index, source })
}

/// Master-equation solution sampled at `k/n`, `k = 0..=steps`.
pub fn master_on_grid(cfg: &ModelConfig, rho0: &CMat2, n: u32, steps: usize) -> Vec<CMat2> {
    let dt = 1.0 / n as f64;
    let sub = (dt / MASTER_STEP).ceil().max(1.0) as usize;
    let fine = master_matrices(cfg, rho0, dt / sub as f64, steps * sub);
    fine.into_iter().step_by(sub).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanError {
    pub n: u32,
    /// `sup_k ‖E[ρ_k] − ν(k/n)‖` in max-entry norm.
    pub sup_error: f64,
    pub max_state_defect: f64,
}

/// Ensemble mean of the chain against the master equation, per `n`.
pub fn mean_vs_master(spec: &EnsembleSpec) -> Result<Vec<MeanError>, LabError> {
    spec.validate()?;
    spec.n_values
        .iter()
        .map(|&n| {
            let cfg = spec.cfg.with_n(n);
            let channel = MeasurementChannel::from_config(&cfg);
            let steps = cfg.num_steps();
            let seed = stream_seed(spec.base_seed, TAG_MEAN ^ ((n as u64) << 8));
            let (sum, defect) = ensemble_fold(
                spec.num_trajectories,
                (vec![CMat2::zero(); steps + 1], 0.0f64),
                |i| {
                    let rec = run_discrete(&channel, &cfg, &spec.rho0, seed, i)?;
                    let defect = max_defect(&rec.states);
                    Ok((rec.states, defect))
                },
                |(sum, defect), (states, d)| {
                    for (acc, s) in sum.iter_mut().zip(&states) {
                        *acc += *s.matrix();
                    }
                    *defect = defect.max(d);
                },
            )?;
            let master = master_on_grid(&cfg, spec.rho0.matrix(), n, steps);
            let inv_m = 1.0 / spec.num_trajectories as f64;
            let sup_error = sum
                .iter()
                .zip(&master)
                .map(|(s, nu)| (s.scale_re(inv_m) - *nu).max_norm())
                .fold(0.0, f64::max);
            Ok(MeanError {
                n,
                sup_error,
                max_state_defect: defect,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadraticVariationStat {
    pub n: u32,
    /// Sample `E([W_n,W_n]_t − [nt]/n)²`.
    pub deviation: f64,
    pub bracket: MeanSe,
    /// `[nt]/n`
    pub expected: f64,
    /// Ensemble average of `max_k |X_k|/√n`.
    pub mean_max_jump: f64,
    pub max_state_defect: f64,
}

/// Quadratic variation of the embedded martingale `W_n` at time `t`, per `n`.
pub fn quadratic_variation_stats(
    spec: &EnsembleSpec,
    t: f64,
) -> Result<Vec<QuadraticVariationStat>, LabError> {
    spec.validate()?;
    spec.check_time(t)?;
    if spec.cfg.observable.is_diagonal() {
        return Err(LabError::DiagonalObservable);
    }
    spec.n_values
        .iter()
        .map(|&n| {
            let cfg = spec.cfg.with_n(n);
            let channel = MeasurementChannel::from_config(&cfg);
            let seed = stream_seed(spec.base_seed, TAG_QV ^ ((n as u64) << 8));
            let expected = floor_steps(n, t) as f64 / n as f64;
            let (brackets, jumps, defect) = ensemble_fold(
                spec.num_trajectories,
                (Vec::new(), 0.0, 0.0f64),
                |i| {
                    let rec = run_discrete(&channel, &cfg, &spec.rho0, seed, i)?;
                    let e = embed(&rec, t)
                        .map_err(|source| LabError::Trajectory { index: i, source })?;
                    let k = e.grid.len() - 1;
                    let jump = rec.x_increments[..k]
                        .iter()
                        .map(|x| x.abs())
                        .fold(0.0, f64::max)
                        / (n as f64).sqrt();
                    Ok((e.bracket[k], jump, max_defect(&rec.states)))
                },
                |(b, j, d), (bracket, jump, defect)| {
                    b.push(bracket);
                    *j += jump;
                    *d = d.max(defect);
                },
            )?;
            let m = spec.num_trajectories as f64;
            let deviation = brackets.iter().map(|b| (b - expected).powi(2)).sum::<f64>() / m;
            Ok(QuadraticVariationStat {
                n,
                deviation,
                bracket: MeanSe::of(&brackets),
                expected,
                mean_max_jump: jumps / m,
                max_state_defect: defect,
            })
        })
        .collect()
}

/// Scalar functional `ρ ↦ Tr[ρA]` of a Hermitian `A`.
#[derive(Debug, Clone, PartialEq)]
pub struct Functional {
    pub name: String,
    pub matrix: CMat2,
}

impl Functional {
    pub fn new(name: impl Into<String>, matrix: CMat2) -> Self {
        Functional {
            name: name.into(),
            matrix,
        }
    }

    pub fn pauli() -> Vec<Functional> {
        vec![
            Functional::new("sigma_x", CMat2::pauli_x()),
            Functional::new("sigma_y", CMat2::pauli_y()),
            Functional::new("sigma_z", CMat2::pauli_z()),
        ]
    }

    /// `Tr[ρA]` rounded to a multiple of [`FUNCTIONAL_RESOLUTION`], so that
    /// rounding noise from different integrators does not split ties.
    pub fn eval(&self, rho: &DensityMatrix) -> f64 {
        (rho.expectation(&self.matrix) / FUNCTIONAL_RESOLUTION).round() * FUNCTIONAL_RESOLUTION
    }
}

/// Two-sample Kolmogorov–Smirnov statistic `sup_x |F_a(x) − F_b(x)|`.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (ma, mb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        let v = if a[i] <= b[j] { a[i] } else { b[j] };
        while i < a.len() && a[i] <= v {
            i += 1;
        }
        while j < b.len() && b[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / ma - j as f64 / mb).abs());
    }
    d
}

/// Asymptotic critical value `c(α)√((m+m')/(mm'))`, `c(α) = √(−½ ln(α/2))`.
pub fn ks_critical(alpha: f64, m: usize, m2: usize) -> f64 {
    let (m, m2) = (m as f64, m2 as f64);
    (-0.5 * (alpha / 2.0).ln()).sqrt() * ((m + m2) / (m * m2)).sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct KsResult {
    pub n: u32,
    pub functional: String,
    pub statistic: f64,
    pub critical_05: f64,
    pub critical_01: f64,
    pub m_discrete: usize,
    pub m_sde: usize,
}

impl KsResult {
    pub fn passes(&self, alpha: f64) -> bool {
        self.statistic < ks_critical(alpha, self.m_discrete, self.m_sde)
    }
}

/// Step of the SDE reference ensemble: `min(sde_step, 1/(10·max n))`.
pub fn reference_step(spec: &EnsembleSpec) -> f64 {
    let n_max = *spec.n_values.last().unwrap_or(&1) as f64;
    spec.sde_step.min(1.0 / (10.0 * n_max))
}

/// `f(ρ_{[nt]})` over a discrete ensemble, one vector per functional.
pub fn discrete_samples(
    cfg: &ModelConfig,
    rho0: &DensityMatrix,
    functionals: &[Functional],
    t: f64,
    m: usize,
    seed: u64,
) -> Result<(Vec<Vec<f64>>, f64), LabError> {
    let channel = MeasurementChannel::from_config(cfg);
    let k = floor_steps(cfg.n, t).min(cfg.num_steps());
    ensemble_fold(
        m,
        (vec![Vec::with_capacity(m); functionals.len()], 0.0f64),
        |i| {
            let rec = run_discrete(&channel, cfg, rho0, seed, i)?;
            Ok((rec.states[k], max_defect(&rec.states)))
        },
        |(samples, d), (rho, defect)| {
            for (s, f) in samples.iter_mut().zip(functionals) {
                s.push(f.eval(&rho));
            }
            *d = d.max(defect);
        },
    )
}

/// `f(ρ_t)` over an Euler–Maruyama ensemble of the diffusive limit.
pub fn sde_samples(
    cfg: &ModelConfig,
    rho0: &DensityMatrix,
    functionals: &[Functional],
    t: f64,
    h: f64,
    m: usize,
    seed: u64,
) -> Result<(Vec<Vec<f64>>, f64), LabError> {
    let limit = cfg.diffusion_limit().with_horizon(t);
    ensemble_fold(
        m,
        (vec![Vec::with_capacity(m); functionals.len()], 0.0f64),
        |i| {
            let path = simulate_sde(&limit, rho0, h, trajectory_seed(seed, i), None)
                .map_err(|source| LabError::Sde { index: i, source })?;
            Ok((*path.final_state(), max_defect(&path.states)))
        },
        |(samples, d), (rho, defect)| {
            for (s, f) in samples.iter_mut().zip(functionals) {
                s.push(f.eval(&rho));
            }
            *d = d.max(defect);
        },
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistributionalReport {
    pub results: Vec<KsResult>,
    pub sde_step: f64,
    pub max_state_defect: f64,
}

/// KS comparison of the chain at `[nt]` with an independent SDE ensemble at
/// `t`, per `n` and functional. Both ensembles have `num_trajectories` members.
pub fn distributional_test(
    spec: &EnsembleSpec,
    functionals: &[Functional],
    t: f64,
) -> Result<DistributionalReport, LabError> {
    spec.validate()?;
    spec.check_time(t)?;
    let m = spec.num_trajectories;
    let h = reference_step(spec);
    let (sde, mut defect) = sde_samples(
        &spec.cfg,
        &spec.rho0,
        functionals,
        t,
        h,
        m,
        stream_seed(spec.base_seed, TAG_KS_SDE),
    )?;
    let mut results = Vec::new();
    for &n in &spec.n_values {
        let cfg = spec.cfg.with_n(n);
        let seed = stream_seed(spec.base_seed, TAG_KS_DISCRETE ^ ((n as u64) << 8));
        let (disc, d) = discrete_samples(&cfg, &spec.rho0, functionals, t, m, seed)?;
        defect = defect.max(d);
        for ((f, a), b) in functionals.iter().zip(&disc).zip(&sde) {
            results.push(KsResult {
                n,
                functional: f.name.clone(),
                statistic: ks_statistic(a, b),
                critical_05: ks_critical(0.05, a.len(), b.len()),
                critical_01: ks_critical(0.01, a.len(), b.len()),
                m_discrete: a.len(),
                m_sde: b.len(),
            });
        }
    }
    Ok(DistributionalReport {
        results,
        sde_step: h,
        max_state_defect: defect,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResidualStat {
    pub n: u32,
    /// Ensemble mean of `sup_t ‖ε_n(t)‖`.
    pub sup_residual: MeanSe,
}

pub fn residual_decay(spec: &EnsembleSpec) -> Result<Vec<ResidualStat>, LabError> {
    spec.validate()?;
    spec.n_values
        .iter()
        .map(|&n| {
            let cfg = spec.cfg.with_n(n);
            let channel = MeasurementChannel::from_config(&cfg);
            let seed = stream_seed(spec.base_seed, TAG_RESIDUAL ^ ((n as u64) << 8));
            let sups = ensemble_fold(
                spec.num_trajectories,
                Vec::with_capacity(spec.num_trajectories),
                |i| {
                    let rec = run_discrete(&channel, &cfg, &spec.rho0, seed, i)?;
                    Ok(sup_norm(&residual_epsilon(&rec, &cfg)))
                },
                |v, s| v.push(s),
            )?;
            Ok(ResidualStat {
                n,
                sup_residual: MeanSe::of(&sups),
            })
        })
        .collect()
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn log_log_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let k = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / k, ly.iter().sum::<f64>() / k);
    let cov: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let var: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    cov / var
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GirsanovReport {
    pub paths: usize,
    pub h: f64,
    /// `E_P[Z_T]`
    pub weight: MeanSe,
    /// `E_P[Z_T f(ρ_T)]`
    pub reweighted: MeanSe,
    /// `E[f(ρ_T)]` under the innovation-driven simulation.
    pub physical: MeanSe,
    pub max_state_defect: f64,
}

impl GirsanovReport {
    pub fn combined_se(&self) -> f64 {
        self.reweighted.se.hypot(self.physical.se)
    }
}

/// Reweights Belavkin-form paths by their Radon–Nikodym density and compares
/// the weighted mean of `Tr[ρ_T A]` with the innovation-driven simulation.
pub fn girsanov_check(
    cfg: &ModelConfig,
    rho0: &DensityMatrix,
    h: f64,
    paths: usize,
    seed: u64,
    observable: &CMat2,
) -> Result<GirsanovReport, LabError> {
    if paths < 2 {
        return Err(LabError::TooFewTrajectories(paths));
    }
    let c_op = cfg.coupling();
    let seed_p = stream_seed(seed, TAG_GIRSANOV_P);
    let seed_q = stream_seed(seed, TAG_GIRSANOV_Q);
    let (z, zf, dp) = ensemble_fold(
        paths,
        (Vec::new(), Vec::new(), 0.0f64),
        |i| {
            let path = simulate_sde(cfg, rho0, h, trajectory_seed(seed_p, i), None)
                .map_err(|source| LabError::Sde { index: i, source })?;
            let z_t = *girsanov_weight(&path, &c_op).last().expect("nonempty");
            let f = path.final_state().expectation(observable);
            Ok((z_t, z_t * f, max_defect(&path.states)))
        },
        |(z, zf, d), (a, b, defect)| {
            z.push(a);
            zf.push(b);
            *d = d.max(defect);
        },
    )?;
    let (phys, dq) = ensemble_fold(
        paths,
        (Vec::new(), 0.0f64),
        |i| {
            let path = simulate_physical(cfg, rho0, h, trajectory_seed(seed_q, i))
                .map_err(|source| LabError::Sde { index: i, source })?;
            Ok((
                path.final_state().expectation(observable),
                max_defect(&path.states),
            ))
        },
        |(v, d), (f, defect)| {
            v.push(f);
            *d = d.max(defect);
        },
    )?;
    Ok(GirsanovReport {
        paths,
        h,
        weight: MeanSe::of(&z),
        reweighted: MeanSe::of(&zf),
        physical: MeanSe::of(&phys),
        max_state_defect: dp.max(dq),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmbeddingStat {
    pub h: f64,
    /// Mean of `‖ρ_T − |ψ_T⟩⟨ψ_T|‖` in max-entry norm.
    pub distance: f64,
    /// Mean of `1 − Tr ρ_T²`.
    pub impurity: f64,
    pub max_state_defect: f64,
}

/// Density and wave-function paths from the same pure state, driven by the
/// same Brownian path sampled at each step in `steps`. Every step must be an
/// integer multiple of the smallest.
pub fn pure_embedding_study(
    cfg: &ModelConfig,
    psi0: &WaveFunction,
    steps: &[f64],
    paths: usize,
    seed: u64,
) -> Result<Vec<EmbeddingStat>, LabError> {
    if paths < 2 {
        return Err(LabError::TooFewTrajectories(paths));
    }
    let h_min = steps.iter().copied().fold(f64::INFINITY, f64::min);
    let factors: Vec<usize> = steps
        .iter()
        .map(|h| {
            let f = (h / h_min).round();
            if f >= 1.0 && (f * h_min - h).abs() <= 1e-9 * h {
                Ok(f as usize)
            } else {
                Err(LabError::StepLadder)
            }
        })
        .collect::<Result<_, _>>()?;
    let rho0 = psi0.projector();
    let fine_steps = crate::sde::sde_steps(cfg.t_horizon, h_min);
    let base = stream_seed(seed, TAG_EMBEDDING);
    let k = steps.len();
    let (dist, impurity, defect) = ensemble_fold(
        paths,
        (vec![0.0; k], vec![0.0; k], vec![0.0f64; k]),
        |i| {
            let fine = brownian_increments(trajectory_seed(base, i), fine_steps, h_min);
            steps
                .iter()
                .zip(&factors)
                .map(|(&h, &f)| {
                    let noise = coarsen_noise(&fine, f);
                    let err = |source| LabError::Sde { index: i, source };
                    let states = integrate_density(cfg, &rho0, h, &noise, true).map_err(err)?;
                    let wave = simulate_wave(cfg, psi0, h, 0, Some(&noise)).map_err(err)?;
                    let rho_t = states.last().expect("nonempty");
                    let psi_t = wave.vectors.last().expect("nonempty").projector();
                    Ok((
                        (rho_t.matrix() - psi_t.matrix()).max_norm(),
                        1.0 - rho_t.purity(),
                        max_defect(&states),
                    ))
                })
                .collect::<Result<Vec<_>, LabError>>()
        },
        |(d, p, x), row| {
            for (j, (a, b, c)) in row.into_iter().enumerate() {
                d[j] += a;
                p[j] += b;
                x[j] = x[j].max(c);
            }
        },
    )?;
    let m = paths as f64;
    Ok(steps
        .iter()
        .enumerate()
        .map(|(j, &h)| EmbeddingStat {
            h,
            distance: dist[j] / m,
            impurity: impurity[j] / m,
            max_state_defect: defect[j],
        })
        .collect())
}

/// All four convergence statistics of one ensemble spec.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceReport {
    pub base_seed: u64,
    pub num_trajectories: usize,
    pub t: f64,
    pub mean_errors: Vec<MeanError>,
    /// Absent for a diagonal observable.
    pub quadratic_variation: Option<Vec<QuadraticVariationStat>>,
    pub distributional: DistributionalReport,
    pub residuals: Vec<ResidualStat>,
}

pub fn convergence_report(
    spec: &EnsembleSpec,
    functionals: &[Functional],
    t: f64,
) -> Result<ConvergenceReport, LabError> {
    let quadratic_variation = match quadratic_variation_stats(spec, t) {
        Ok(v) => Some(v),
        Err(LabError::DiagonalObservable) => None,
        Err(e) => return Err(e),
    };
    Ok(ConvergenceReport {
        base_seed: spec.base_seed,
        num_trajectories: spec.num_trajectories,
        t,
        mean_errors: mean_vs_master(spec)?,
        quadratic_variation,
        distributional: distributional_test(spec, functionals, t)?,
        residuals: residual_decay(spec)?,
    })
}

impl ConvergenceReport {
    fn rows(&self) -> Vec<(u32, String, f64)> {
        let mut rows = Vec::new();
        for e in &self.mean_errors {
            rows.push((e.n, "mean_sup_error".to_string(), e.sup_error));
        }
        for q in self.quadratic_variation.iter().flatten() {
            rows.push((q.n, "qv_deviation".into(), q.deviation));
            rows.push((q.n, "qv_bracket_mean".into(), q.bracket.mean));
            rows.push((q.n, "qv_bracket_se".into(), q.bracket.se));
            rows.push((q.n, "qv_expected".into(), q.expected));
            rows.push((q.n, "max_jump".into(), q.mean_max_jump));
        }
        for k in &self.distributional.results {
            rows.push((k.n, format!("ks_{}", k.functional), k.statistic));
            rows.push((k.n, format!("ks_{}_crit_05", k.functional), k.critical_05));
            rows.push((k.n, format!("ks_{}_crit_01", k.functional), k.critical_01));
        }
        for r in &self.residuals {
            rows.push((r.n, "residual_sup_mean".into(), r.sup_residual.mean));
            rows.push((r.n, "residual_sup_se".into(), r.sup_residual.se));
        }
        rows
    }

    /// One row per `(n, statistic)`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "n,statistic,value")?;
        for (n, name, v) in self.rows() {
            writeln!(out, "{n},{name},{}", fmt_f64(v))?;
        }
        Ok(())
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "base seed {}, {} trajectories per ensemble, t = {}",
            self.base_seed, self.num_trajectories, self.t
        );
        let _ = writeln!(s, "mean vs master (sup over grid, max-entry norm):");
        for e in &self.mean_errors {
            let _ = writeln!(s, "  n = {:>6}  error = {:.6e}", e.n, e.sup_error);
        }
        match &self.quadratic_variation {
            Some(qv) => {
                let _ = writeln!(s, "quadratic variation of W_n:");
                for q in qv {
                    let _ = writeln!(
                        s,
                        "  n = {:>6}  E(dev^2) = {:.6e}  [W,W] = {:.6} +- {:.2e} (expected {:.6})  max jump = {:.4e}",
                        q.n, q.deviation, q.bracket.mean, q.bracket.se, q.expected, q.mean_max_jump
                    );
                }
            }
            None => {
                let _ = writeln!(s, "quadratic variation: skipped (diagonal observable)");
            }
        }
        let _ = writeln!(
            s,
            "Kolmogorov-Smirnov against SDE ensemble (h = {:.3e}):",
            self.distributional.sde_step
        );
        for k in &self.distributional.results {
            let _ = writeln!(
                s,
                "  n = {:>6}  {:<8} D = {:.4}  crit(0.05) = {:.4}  crit(0.01) = {:.4}",
                k.n, k.functional, k.statistic, k.critical_05, k.critical_01
            );
        }
        let _ = writeln!(s, "residual sup norm:");
        for r in &self.residuals {
            let _ = writeln!(
                s,
                "  n = {:>6}  {:.6e} +- {:.2e}",
                r.n, r.sup_residual.mean, r.sup_residual.se
            );
        }
        s
    }
}

/// Threshold used when reporting states as valid.
pub const STATE_DEFECT_TOL: f64 = HERMITICITY_TOL;
