//! Continuous-time side: the Lindblad generator, the diffusive Belavkin
//! equation `dρ = L(ρ)dt + Θ(ρ)dW` integrated by Euler–Maruyama, its
//! wave-function unravelling, the innovation-driven form, Radon–Nikodym
//! weights and the averaged master equation.
//!
//! All stochastic integrals are Itô (left point).

use std::io::{self, Write};

use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::discrete::fmt_f64;
use crate::linalg::{c, herm_eigen2, CMat2, C64};
use crate::model::{AnticommutatorOrder, DensityMatrix, ModelConfig, ModelError, WaveFunction};
use crate::seed::rng_from_seed;

/// Largest accepted integration step.
pub const MAX_STEP: f64 = 1e-2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SdeError {
    #[error("step h = {0} must satisfy 0 < h <= {MAX_STEP}")]
    InvalidStep(f64),
    #[error("positivity projection failed: {0}")]
    ProjectionFailed(ModelError),
    #[error("state left the state space without projection: {0}")]
    LeftStateSpace(ModelError),
    #[error("shared noise has {got} increments, need {need}")]
    NoiseLength { got: usize, need: usize },
    #[error("step {step}: {source}")]
    Step {
        step: usize,
        #[source]
        source: Box<SdeError>,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// `L(ρ) = −i[H₀, ρ] − ½{C*C, ρ} + CρC*`.
pub fn lindblad(rho: &CMat2, h0: &CMat2, c_op: &CMat2) -> CMat2 {
    lindblad_with(rho, h0, c_op, AnticommutatorOrder::CStarC)
}

pub fn lindblad_with(rho: &CMat2, h0: &CMat2, c_op: &CMat2, order: AnticommutatorOrder) -> CMat2 {
    let c_adj = c_op.adjoint();
    let damping = match order {
        AnticommutatorOrder::CStarC => c_adj * *c_op,
        AnticommutatorOrder::CCStar => *c_op * c_adj,
    };
    h0.commutator(rho).scale(c(0.0, -1.0)) - damping.anticommutator(rho).scale_re(0.5)
        + *c_op * *rho * c_adj
}

/// Generator of `cfg`, with its coupling and anticommutator order.
pub fn lindblad_for(cfg: &ModelConfig, rho: &CMat2) -> CMat2 {
    lindblad_with(rho, &cfg.h0, &cfg.coupling(), cfg.anticommutator)
}

/// `(𝓙(ρ), 𝓛(ρ))` with `𝓙(ρ) = CρC*` and `𝓛 = L − 𝓙`.
pub fn jump_and_smooth_parts(rho: &CMat2, h0: &CMat2, c_op: &CMat2) -> (CMat2, CMat2) {
    let jump = *c_op * *rho * c_op.adjoint();
    (jump, lindblad(rho, h0, c_op) - jump)
}

/// `Θ(ρ) = ρC* + Cρ − Tr[ρ(C + C*)]ρ`.
pub fn theta(rho: &CMat2, c_op: &CMat2) -> CMat2 {
    let c_adj = c_op.adjoint();
    let mean = (*rho * (*c_op + c_adj)).trace();
    *rho * c_adj + *c_op * *rho - rho.scale(mean)
}

/// `Tr[ρ(C + C*)]`, the drift of the measurement record.
pub fn record_drift(rho: &CMat2, c_op: &CMat2) -> f64 {
    (*rho * (*c_op + c_op.adjoint())).trace().re
}

/// Nearest state in eigenvalue terms: negative eigenvalues are clipped to
/// zero and the trace restored to one.
pub fn project_positive(m: &CMat2) -> Result<DensityMatrix, SdeError> {
    let eig = herm_eigen2(m)
        .map_err(|e| SdeError::ProjectionFailed(ModelError::NotAState(e.to_string())))?;
    if eig.values[1] >= 0.0 {
        return DensityMatrix::new(m.hermitian_part().scale_re(1.0 / m.trace().re))
            .map_err(SdeError::ProjectionFailed);
    }
    let top = eig.values[0].max(0.0);
    if top <= 0.0 {
        return Err(SdeError::ProjectionFailed(ModelError::NotAState(
            "no positive eigenvalue".into(),
        )));
    }
    // Only the leading eigenvector survives.
    let v = eig.vectors[0];
    DensityMatrix::new(v.outer(&v)).map_err(SdeError::ProjectionFailed)
}

/// `ρ + h·L(ρ) + dW·Θ(ρ)` without any projection.
pub fn euler_step_raw(rho: &CMat2, h: f64, dw: f64, h0: &CMat2, c_op: &CMat2) -> CMat2 {
    *rho + lindblad(rho, h0, c_op).scale_re(h) + theta(rho, c_op).scale_re(dw)
}

pub fn euler_step_density(
    rho: &DensityMatrix,
    h: f64,
    dw: f64,
    h0: &CMat2,
    c_op: &CMat2,
    project: bool,
) -> Result<DensityMatrix, SdeError> {
    if h.is_nan() || h <= 0.0 {
        return Err(SdeError::InvalidStep(h));
    }
    let raw = euler_step_raw(rho.matrix(), h, dw, h0, c_op);
    if project {
        project_positive(&raw)
    } else {
        DensityMatrix::new(raw).map_err(SdeError::LeftStateSpace)
    }
}

/// `ν = ½⟨ψ, (C + C*)ψ⟩`
fn nu(psi: &crate::linalg::CVec2, c_op: &CMat2) -> f64 {
    0.5 * psi.dot(&(*c_op + c_op.adjoint()).apply(psi)).re
}

/// Euler step of `dψ = (C − ν)ψ dW + (−iH₀ − ½(C*C − 2νC + ν²))ψ dt`
/// before renormalization.
pub fn wavefunction_step_raw(
    psi: &WaveFunction,
    h: f64,
    dw: f64,
    h0: &CMat2,
    c_op: &CMat2,
) -> crate::linalg::CVec2 {
    let v = psi.vector();
    let nu = nu(v, c_op);
    let id = CMat2::identity();
    let diffusion = *c_op - id.scale_re(nu);
    let drift = h0.scale(c(0.0, -1.0))
        - (c_op.adjoint() * *c_op - c_op.scale_re(2.0 * nu) + id.scale_re(nu * nu)).scale_re(0.5);
    *v + diffusion.apply(v).scale(C64::from(dw)) + drift.apply(v).scale(C64::from(h))
}

pub fn wavefunction_step(
    psi: &WaveFunction,
    h: f64,
    dw: f64,
    h0: &CMat2,
    c_op: &CMat2,
) -> Result<WaveFunction, SdeError> {
    if h.is_nan() || h <= 0.0 {
        return Err(SdeError::InvalidStep(h));
    }
    Ok(WaveFunction::normalized(wavefunction_step_raw(
        psi, h, dw, h0, c_op,
    ))?)
}

/// Density-matrix path on a uniform grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SdePath {
    pub h: f64,
    pub grid: Vec<f64>,
    pub states: Vec<DensityMatrix>,
    /// Increments of the driving `W` of `dρ = L dt + Θ dW`.
    pub noise: Vec<f64>,
    /// Increments of the innovation `W̃_t = W_t − ∫Tr[ρ(C+C*)]ds`, when the
    /// path was simulated from it.
    pub innovation: Option<Vec<f64>>,
    pub weights: Option<Vec<f64>>,
}

impl SdePath {
    pub fn final_state(&self) -> &DensityMatrix {
        self.states.last().expect("path holds the initial state")
    }

    pub fn write_csv<W: Write>(&self, out: W) -> io::Result<()> {
        let mats: Vec<CMat2> = self.states.iter().map(|s| *s.matrix()).collect();
        write_path_csv(
            out,
            &self.grid,
            &self.noise,
            &mats,
            self.weights.as_deref(),
            None,
        )
    }
}

/// Wave-function path on a uniform grid.
#[derive(Debug, Clone, PartialEq)]
pub struct WavePath {
    pub h: f64,
    pub grid: Vec<f64>,
    pub vectors: Vec<WaveFunction>,
    pub noise: Vec<f64>,
}

impl WavePath {
    pub fn write_csv<W: Write>(&self, out: W) -> io::Result<()> {
        let mats: Vec<CMat2> = self
            .vectors
            .iter()
            .map(|v| *v.projector().matrix())
            .collect();
        write_path_csv(
            out,
            &self.grid,
            &self.noise,
            &mats,
            None,
            Some(&self.vectors),
        )
    }
}

/// Columns `time, dW, rho_00_re, rho_01_re, rho_01_im, rho_11_re`, then
/// `weight` and the four wave-function columns when present. Row `k` carries
/// the increment ending at `t_k`; row 0 leaves `dW` empty.
pub fn write_path_csv<W: Write>(
    mut out: W,
    grid: &[f64],
    noise: &[f64],
    states: &[CMat2],
    weights: Option<&[f64]>,
    psi: Option<&[WaveFunction]>,
) -> io::Result<()> {
    write!(out, "time,dW,rho_00_re,rho_01_re,rho_01_im,rho_11_re")?;
    if weights.is_some() {
        write!(out, ",weight")?;
    }
    if psi.is_some() {
        write!(out, ",psi_0_re,psi_0_im,psi_1_re,psi_1_im")?;
    }
    writeln!(out)?;
    for (k, (t, m)) in grid.iter().zip(states).enumerate() {
        write!(out, "{}", fmt_f64(*t))?;
        if k == 0 {
            write!(out, ",")?;
        } else {
            write!(out, ",{}", fmt_f64(noise[k - 1]))?;
        }
        write!(
            out,
            ",{},{},{},{}",
            fmt_f64(m.0[0][0].re),
            fmt_f64(m.0[0][1].re),
            fmt_f64(m.0[0][1].im),
            fmt_f64(m.0[1][1].re)
        )?;
        if let Some(w) = weights {
            write!(out, ",{}", fmt_f64(w[k]))?;
        }
        if let Some(p) = psi {
            let v = p[k].vector();
            write!(
                out,
                ",{},{},{},{}",
                fmt_f64(v.0[0].re),
                fmt_f64(v.0[0].im),
                fmt_f64(v.0[1].re),
                fmt_f64(v.0[1].im)
            )?;
        }
        writeln!(out)?;
    }
    Ok(())
}

/// Number of steps of size `h` covering `[0, T]`.
pub fn sde_steps(t_horizon: f64, h: f64) -> usize {
    (t_horizon / h).round() as usize
}

fn check_step(h: f64) -> Result<(), SdeError> {
    if h > 0.0 && h <= MAX_STEP && h.is_finite() {
        Ok(())
    } else {
        Err(SdeError::InvalidStep(h))
    }
}

/// `steps` independent `N(0, h)` increments from the stream `seed`.
pub fn brownian_increments(seed: u64, steps: usize, h: f64) -> Vec<f64> {
    let mut rng = rng_from_seed(seed);
    let sd = h.sqrt();
    (0..steps)
        .map(|_| sd * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng))
        .collect()
}

/// Sums consecutive groups of `factor` increments: the same Brownian path
/// sampled on a grid `factor` times coarser.
pub fn coarsen_noise(noise: &[f64], factor: usize) -> Vec<f64> {
    noise.chunks(factor).map(|ch| ch.iter().sum()).collect()
}

fn resolve_noise(
    seed: u64,
    steps: usize,
    h: f64,
    shared: Option<&[f64]>,
) -> Result<Vec<f64>, SdeError> {
    match shared {
        Some(noise) if noise.len() < steps => Err(SdeError::NoiseLength {
            got: noise.len(),
            need: steps,
        }),
        Some(noise) => Ok(noise[..steps].to_vec()),
        None => Ok(brownian_increments(seed, steps, h)),
    }
}

/// Integrates `dρ = L dt + Θ dW` along the given increments.
pub fn integrate_density(
    cfg: &ModelConfig,
    rho0: &DensityMatrix,
    h: f64,
    noise: &[f64],
    project: bool,
) -> Result<Vec<DensityMatrix>, SdeError> {
    let c_op = cfg.coupling();
    let mut states = Vec::with_capacity(noise.len() + 1);
    let mut rho = *rho0;
    states.push(rho);
    for (k, &dw) in noise.iter().enumerate() {
        rho = step_with(cfg, &rho, h, dw, &c_op, project).map_err(|e| SdeError::Step {
            step: k + 1,
            source: Box::new(e),
        })?;
        states.push(rho);
    }
    Ok(states)
}

fn step_with(
    cfg: &ModelConfig,
    rho: &DensityMatrix,
    h: f64,
    dw: f64,
    c_op: &CMat2,
    project: bool,
) -> Result<DensityMatrix, SdeError> {
    let raw = *rho.matrix()
        + lindblad_with(rho.matrix(), &cfg.h0, c_op, cfg.anticommutator).scale_re(h)
        + theta(rho.matrix(), c_op).scale_re(dw);
    if project {
        project_positive(&raw)
    } else {
        DensityMatrix::new(raw).map_err(SdeError::LeftStateSpace)
    }
}

fn uniform_grid(steps: usize, h: f64) -> Vec<f64> {
    (0..=steps).map(|k| k as f64 * h).collect()
}

/// Euler–Maruyama path of the Belavkin equation on `[0, T]` with positivity
/// projection. Noise comes from `seed` unless `shared_noise` is given.
pub fn simulate_sde(
    cfg: &ModelConfig,
    rho0: &DensityMatrix,
    h: f64,
    seed: u64,
    shared_noise: Option<&[f64]>,
) -> Result<SdePath, SdeError> {
    simulate_sde_with(cfg, rho0, h, seed, shared_noise, true)
}

pub fn simulate_sde_with(
    cfg: &ModelConfig,
    rho0: &DensityMatrix,
    h: f64,
    seed: u64,
    shared_noise: Option<&[f64]>,
    project: bool,
) -> Result<SdePath, SdeError> {
    check_step(h)?;
    cfg.validate()?;
    let steps = sde_steps(cfg.t_horizon, h);
    let noise = resolve_noise(seed, steps, h, shared_noise)?;
    let states = integrate_density(cfg, rho0, h, &noise, project)?;
    Ok(SdePath {
        h,
        grid: uniform_grid(steps, h),
        states,
        noise,
        innovation: None,
        weights: None,
    })
}

/// Wave-function path, renormalized after every step.
pub fn simulate_wave(
    cfg: &ModelConfig,
    psi0: &WaveFunction,
    h: f64,
    seed: u64,
    shared_noise: Option<&[f64]>,
) -> Result<WavePath, SdeError> {
    check_step(h)?;
    cfg.validate()?;
    let steps = sde_steps(cfg.t_horizon, h);
    let noise = resolve_noise(seed, steps, h, shared_noise)?;
    let c_op = cfg.coupling();
    let mut vectors = Vec::with_capacity(steps + 1);
    let mut psi = *psi0;
    vectors.push(psi);
    for (k, &dw) in noise.iter().enumerate() {
        psi = wavefunction_step(&psi, h, dw, &cfg.h0, &c_op).map_err(|e| SdeError::Step {
            step: k + 1,
            source: Box::new(e),
        })?;
        vectors.push(psi);
    }
    Ok(WavePath {
        h,
        grid: uniform_grid(steps, h),
        vectors,
        noise,
    })
}

/// Path whose innovation `W̃` is the simulated Brownian motion: each step
/// draws `dW̃ ~ N(0, h)`, sets `dW = dW̃ + Tr[ρ(C + C*)]h` and advances the
/// Belavkin equation with `dW`. Both increment sequences are stored.
pub fn simulate_physical(
    cfg: &ModelConfig,
    rho0: &DensityMatrix,
    h: f64,
    seed: u64,
) -> Result<SdePath, SdeError> {
    check_step(h)?;
    cfg.validate()?;
    let steps = sde_steps(cfg.t_horizon, h);
    let innovation = brownian_increments(seed, steps, h);
    let c_op = cfg.coupling();
    let mut states = Vec::with_capacity(steps + 1);
    let mut noise = Vec::with_capacity(steps);
    let mut rho = *rho0;
    states.push(rho);
    for (k, &dw_tilde) in innovation.iter().enumerate() {
        let dw = dw_tilde + record_drift(rho.matrix(), &c_op) * h;
        rho = step_with(cfg, &rho, h, dw, &c_op, true).map_err(|e| SdeError::Step {
            step: k + 1,
            source: Box::new(e),
        })?;
        noise.push(dw);
        states.push(rho);
    }
    Ok(SdePath {
        h,
        grid: uniform_grid(steps, h),
        states,
        noise,
        innovation: Some(innovation),
        weights: None,
    })
}

/// `dW̃_k = dW_k − Tr[ρ_k(C + C*)]h` along a path.
pub fn innovation_increments(path: &SdePath, c_op: &CMat2) -> Vec<f64> {
    path.noise
        .iter()
        .zip(&path.states)
        .map(|(dw, rho)| dw - record_drift(rho.matrix(), c_op) * path.h)
        .collect()
}

/// Radon–Nikodym density process `Z_{k+1} = Z_k exp(g_k ΔW_k − ½g_k²h)`,
/// `g_k = Tr[ρ_k(C + C*)]`, `Z_0 = 1`.
pub fn girsanov_weight(path: &SdePath, c_op: &CMat2) -> Vec<f64> {
    let mut log_z = 0.0;
    let mut out = Vec::with_capacity(path.noise.len() + 1);
    out.push(1.0);
    for (dw, rho) in path.noise.iter().zip(&path.states) {
        let g = record_drift(rho.matrix(), c_op);
        log_z += g * dw - 0.5 * g * g * path.h;
        out.push(log_z.exp());
    }
    out
}

/// Deterministic path of the master equation `dν/dt = L(ν)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MasterPath {
    pub h: f64,
    pub grid: Vec<f64>,
    pub states: Vec<DensityMatrix>,
}

impl MasterPath {
    pub fn final_state(&self) -> &DensityMatrix {
        self.states.last().expect("path holds the initial state")
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "time,rho_00_re,rho_01_re,rho_01_im,rho_11_re")?;
        for (t, s) in self.grid.iter().zip(&self.states) {
            let m = s.matrix();
            writeln!(
                out,
                "{},{},{},{},{}",
                fmt_f64(*t),
                fmt_f64(m.0[0][0].re),
                fmt_f64(m.0[0][1].re),
                fmt_f64(m.0[0][1].im),
                fmt_f64(m.0[1][1].re)
            )?;
        }
        Ok(())
    }
}

/// One classical Runge–Kutta step of a linear generator.
pub fn rk4_step(rho: &CMat2, h: f64, generator: impl Fn(&CMat2) -> CMat2) -> CMat2 {
    let k1 = generator(rho);
    let k2 = generator(&(*rho + k1.scale_re(0.5 * h)));
    let k3 = generator(&(*rho + k2.scale_re(0.5 * h)));
    let k4 = generator(&(*rho + k3.scale_re(h)));
    *rho + (k1 + k2.scale_re(2.0) + k3.scale_re(2.0) + k4).scale_re(h / 6.0)
}

/// Unvalidated RK4 path of `dν/dt = L(ν)` on `steps` steps of size `h`.
pub fn master_matrices(cfg: &ModelConfig, rho0: &CMat2, h: f64, steps: usize) -> Vec<CMat2> {
    let mut out = Vec::with_capacity(steps + 1);
    let mut nu = *rho0;
    out.push(nu);
    for _ in 0..steps {
        nu = rk4_step(&nu, h, |r| lindblad_for(cfg, r));
        out.push(nu);
    }
    out
}

/// RK4 solution of the master equation on `[0, T]`.
pub fn master_evolve(
    cfg: &ModelConfig,
    rho0: &DensityMatrix,
    h: f64,
) -> Result<MasterPath, SdeError> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(SdeError::InvalidStep(h));
    }
    cfg.validate()?;
    let steps = sde_steps(cfg.t_horizon, h);
    let states = master_matrices(cfg, rho0.matrix(), h, steps)
        .into_iter()
        .enumerate()
        .map(|(k, m)| {
            DensityMatrix::new(m).map_err(|e| SdeError::Step {
                step: k,
                source: Box::new(SdeError::LeftStateSpace(e)),
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(MasterPath {
        h,
        grid: uniform_grid(steps, h),
        states,
    })
}
