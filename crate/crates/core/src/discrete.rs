//! The repeated-interaction measurement chain.
//!
//! Each step couples the system to a fresh field copy prepared in `|Ω⟩⟨Ω|`,
//! applies `U`, measures the two-outcome observable on the field and keeps
//! the reduced state of the system conditioned on the outcome.

use std::io::{self, Write};

use rand::Rng;
use thiserror::Error;

use crate::linalg::{partial_trace_system, tensor, CMat2, CMat4};
use crate::model::{
    build_unitary, floor_steps, DensityMatrix, InteractionUnitary, ModelConfig, ModelError,
    Observable,
};
use crate::sde::{lindblad_for, theta};
use crate::seed::rng_from_seed;

/// Below this the two-point law of `X` is treated as degenerate.
pub const MIN_BRANCH_PROBABILITY: f64 = 1e-12;
/// A sampled branch with less mass than this cannot be normalized.
pub const NULL_BRANCH_TRACE: f64 = 1e-14;
/// Release builds re-validate the state every this many steps.
pub const VALIDATION_INTERVAL: usize = 100;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrajectoryError {
    #[error("branch {outcome} has trace {trace:e}, cannot normalize")]
    DegenerateProbability { outcome: u8, trace: f64 },
    #[error("step {step}: {source}")]
    Step {
        step: usize,
        #[source]
        source: Box<TrajectoryError>,
    },
    #[error("step {step}: {source}")]
    InvalidState {
        step: usize,
        #[source]
        source: ModelError,
    },
    #[error("record covers t <= {available}, requested horizon {requested}")]
    HorizonTooShort { available: f64, requested: f64 },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// `μ = U(ρ⊗β)U*` with `β = |Ω⟩⟨Ω|`.
pub fn interaction_state(rho: &DensityMatrix, u: &InteractionUnitary) -> CMat4 {
    let beta = CMat2::diag_real(1.0, 0.0);
    u.u * tensor(rho.matrix(), &beta) * u.u.adjoint()
}

/// The block form `(L₀₀ρL₀₀*, L₀₀ρL₁₀*; L₁₀ρL₀₀*, L₁₀ρL₁₀*)` of
/// [`interaction_state`].
pub fn interaction_state_blocks(rho: &DensityMatrix, u: &InteractionUnitary) -> CMat4 {
    let r = *rho.matrix();
    let (a, b) = (u.l00, u.l10);
    CMat4::from_blocks([
        [a * r * a.adjoint(), a * r * b.adjoint()],
        [b * r * a.adjoint(), b * r * b.adjoint()],
    ])
}

/// `(𝓛₀(ρ), 𝓛₁(ρ))`, with `𝓛ᵢ(ρ) = E₀[(I⊗Pᵢ) μ (I⊗Pᵢ)]`, computed on the
/// full composite space.
pub fn nonnormalized_maps(
    rho: &DensityMatrix,
    u: &InteractionUnitary,
    a: &Observable,
) -> (CMat2, CMat2) {
    let mu = interaction_state(rho, u);
    let id = CMat2::identity();
    let branch = |p: &CMat2| {
        let ip = tensor(&id, p);
        partial_trace_system(&(ip * mu * ip))
    };
    (branch(&a.p0), branch(&a.p1))
}

/// Kraus operators `Kᵢ = (⟨uᵢ|⊗I) U (|Ω⟩⊗I)` of the two outcomes, so that
/// `𝓛ᵢ(ρ) = Kᵢ ρ Kᵢ*`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeasurementChannel {
    pub kraus: [CMat2; 2],
}

impl MeasurementChannel {
    pub fn new(u: &InteractionUnitary, a: &Observable) -> Self {
        let kraus = a
            .eigvecs
            .map(|v| u.l00.scale(v.0[0].conj()) + u.l10.scale(v.0[1].conj()));
        Self { kraus }
    }

    pub fn from_config(cfg: &ModelConfig) -> Self {
        Self::new(&build_unitary(cfg), &cfg.observable)
    }

    pub fn branches(&self, rho: &DensityMatrix) -> (CMat2, CMat2) {
        let r = *rho.matrix();
        let [k0, k1] = self.kraus;
        (k0 * r * k0.adjoint(), k1 * r * k1.adjoint())
    }

    /// `𝓛₀(ρ) + 𝓛₁(ρ)`, the averaged one-step map.
    pub fn average(&self, rho: &CMat2) -> CMat2 {
        let [k0, k1] = self.kraus;
        k0 * *rho * k0.adjoint() + k1 * *rho * k1.adjoint()
    }
}

/// Value of `X_{k+1} = (ν − q)/√(pq)` for outcome `ν`.
pub fn increment(outcome: u8, p: f64, q: f64) -> f64 {
    if outcome == 0 {
        -(q / p).sqrt()
    } else {
        (p / q).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    /// Index of the observed eigenvalue.
    pub outcome: u8,
    /// Probability of outcome 0.
    pub p: f64,
    /// Probability of outcome 1.
    pub q: f64,
    pub x: f64,
    pub next_state: DensityMatrix,
}

fn branch_probabilities(l0: &CMat2, l1: &CMat2) -> (f64, f64) {
    (l0.trace().re.clamp(0.0, 1.0), l1.trace().re.clamp(0.0, 1.0))
}

fn normalize_branch(l: &CMat2, trace: f64) -> CMat2 {
    l.hermitian_part().scale_re(1.0 / trace)
}

/// One interaction followed by one measurement. Outcome 1 is recorded iff
/// `uniform_draw < q`. When `min(p, q) < 1e-12` the dominant branch is taken
/// and `x = 0`.
///
/// The returned state is symmetrized and trace-normalized but not
/// eigen-validated; [`run_trajectory`] validates on its own schedule.
pub fn measurement_step(
    rho: &DensityMatrix,
    channel: &MeasurementChannel,
    uniform_draw: f64,
) -> Result<StepOutcome, TrajectoryError> {
    let (l0, l1) = channel.branches(rho);
    let (p, q) = branch_probabilities(&l0, &l1);

    let (outcome, x) = if p.min(q) < MIN_BRANCH_PROBABILITY {
        (u8::from(q > p), 0.0)
    } else {
        let outcome = u8::from(uniform_draw < q);
        (outcome, increment(outcome, p, q))
    };
    let (chosen, mass) = if outcome == 0 { (l0, p) } else { (l1, q) };
    if mass < NULL_BRANCH_TRACE {
        return Err(TrajectoryError::DegenerateProbability {
            outcome,
            trace: mass,
        });
    }
    let next = normalize_branch(&chosen, chosen.trace().re);
    Ok(StepOutcome {
        outcome,
        p,
        q,
        x,
        next_state: DensityMatrix::new_unchecked(next),
    })
}

/// Right-hand side of the centered evolution equation
/// `𝓛₀ + 𝓛₁ + (−√(q/p)𝓛₀ + √(p/q)𝓛₁)·X` for the given outcome.
pub fn evolution_identity_rhs(
    rho: &DensityMatrix,
    channel: &MeasurementChannel,
    outcome: u8,
) -> Result<CMat2, TrajectoryError> {
    let (l0, l1) = channel.branches(rho);
    let (p, q) = branch_probabilities(&l0, &l1);
    if p.min(q) < MIN_BRANCH_PROBABILITY {
        let (o, trace) = if p < q { (0, p) } else { (1, q) };
        return Err(TrajectoryError::DegenerateProbability { outcome: o, trace });
    }
    let x = increment(outcome, p, q);
    let centered = l0.scale_re(-(q / p).sqrt()) + l1.scale_re((p / q).sqrt());
    Ok(l0 + l1 + centered.scale_re(x))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    /// `ρ₀, ρ₁, …, ρ_N`
    pub states: Vec<DensityMatrix>,
    pub outcomes: Vec<u8>,
    pub x_increments: Vec<f64>,
    /// `(p_{k+1}, q_{k+1})` of each step.
    pub probabilities: Vec<(f64, f64)>,
    pub n: u32,
    pub seed: u64,
}

impl TrajectoryRecord {
    pub fn num_steps(&self) -> usize {
        self.outcomes.len()
    }

    pub fn final_state(&self) -> &DensityMatrix {
        self.states.last().expect("record holds the initial state")
    }

    pub fn outcome_counts(&self) -> [usize; 2] {
        let ones = self.outcomes.iter().filter(|&&o| o == 1).count();
        [self.outcomes.len() - ones, ones]
    }

    /// CSV with one row per state; step 0 leaves the step columns empty.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(
            out,
            "step,time,outcome,p,q,x,rho_00_re,rho_01_re,rho_01_im,rho_11_re"
        )?;
        let h = 1.0 / self.n as f64;
        for (k, rho) in self.states.iter().enumerate() {
            let m = rho.matrix();
            write!(out, "{k},{}", fmt_f64(k as f64 * h))?;
            if k == 0 {
                write!(out, ",,,,")?;
            } else {
                let (p, q) = self.probabilities[k - 1];
                write!(
                    out,
                    ",{},{},{},{}",
                    self.outcomes[k - 1],
                    fmt_f64(p),
                    fmt_f64(q),
                    fmt_f64(self.x_increments[k - 1])
                )?;
            }
            writeln!(
                out,
                ",{},{},{},{}",
                fmt_f64(m.0[0][0].re),
                fmt_f64(m.0[0][1].re),
                fmt_f64(m.0[0][1].im),
                fmt_f64(m.0[1][1].re)
            )?;
        }
        Ok(())
    }
}

/// 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn validate_step(state: &DensityMatrix, step: usize) -> Result<DensityMatrix, TrajectoryError> {
    DensityMatrix::new(*state.matrix())
        .map_err(|source| TrajectoryError::InvalidState { step, source })
}

/// `⌊nT⌋` measurement steps from `ρ₀`, one uniform draw per step from the
/// stream seeded by `seed`.
pub fn run_trajectory(
    cfg: &ModelConfig,
    rho0: &DensityMatrix,
    seed: u64,
) -> Result<TrajectoryRecord, TrajectoryError> {
    cfg.validate()?;
    let channel = MeasurementChannel::from_config(cfg);
    run_with_channel(&channel, cfg.n, cfg.num_steps(), rho0, seed)
}

/// [`run_trajectory`] with a prebuilt channel, for ensembles.
pub fn run_with_channel(
    channel: &MeasurementChannel,
    n: u32,
    steps: usize,
    rho0: &DensityMatrix,
    seed: u64,
) -> Result<TrajectoryRecord, TrajectoryError> {
    let mut rng = rng_from_seed(seed);
    let mut record = TrajectoryRecord {
        states: Vec::with_capacity(steps + 1),
        outcomes: Vec::with_capacity(steps),
        x_increments: Vec::with_capacity(steps),
        probabilities: Vec::with_capacity(steps),
        n,
        seed,
    };
    let mut rho = *rho0;
    record.states.push(rho);
    for k in 0..steps {
        let draw: f64 = rng.random();
        let step = measurement_step(&rho, channel, draw).map_err(|e| TrajectoryError::Step {
            step: k + 1,
            source: Box::new(e),
        })?;
        rho = step.next_state;
        if cfg!(debug_assertions) || (k + 1) % VALIDATION_INTERVAL == 0 || k + 1 == steps {
            rho = validate_step(&rho, k + 1)?;
        }
        record.states.push(rho);
        record.outcomes.push(step.outcome);
        record.x_increments.push(step.x);
        record.probabilities.push((step.p, step.q));
    }
    Ok(record)
}

/// Piecewise-constant processes `W_n(t) = n^{-1/2} Σ_{k≤[nt]} X_k`,
/// `V_n(t) = [nt]/n` and `ρ_n(t) = ρ_{[nt]}`, stored on the grid `k/n`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddedProcesses {
    pub n: u32,
    pub grid: Vec<f64>,
    pub w_n: Vec<f64>,
    pub v_n: Vec<f64>,
    pub rho_n: Vec<DensityMatrix>,
    /// `(1/n) Σ_{k≤[nt]} X_k²` on the grid.
    pub bracket: Vec<f64>,
}

impl EmbeddedProcesses {
    fn index(&self, t: f64) -> usize {
        floor_steps(self.n, t).min(self.grid.len() - 1)
    }

    pub fn w_at(&self, t: f64) -> f64 {
        self.w_n[self.index(t)]
    }

    pub fn v_at(&self, t: f64) -> f64 {
        self.v_n[self.index(t)]
    }

    pub fn rho_at(&self, t: f64) -> &DensityMatrix {
        &self.rho_n[self.index(t)]
    }

    /// `[W_n, W_n]_t`
    pub fn quadratic_variation(&self, t: f64) -> f64 {
        self.bracket[self.index(t)]
    }
}

pub fn embed(record: &TrajectoryRecord, t: f64) -> Result<EmbeddedProcesses, TrajectoryError> {
    let n = record.n;
    let k_max = floor_steps(n, t);
    if k_max > record.num_steps() {
        return Err(TrajectoryError::HorizonTooShort {
            available: record.num_steps() as f64 / n as f64,
            requested: t,
        });
    }
    let h = 1.0 / n as f64;
    let scale = h.sqrt();
    let mut w = Vec::with_capacity(k_max + 1);
    let mut bracket = Vec::with_capacity(k_max + 1);
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    w.push(0.0);
    bracket.push(0.0);
    for &x in &record.x_increments[..k_max] {
        sum += x;
        sum_sq += x * x;
        w.push(scale * sum);
        bracket.push(h * sum_sq);
    }
    Ok(EmbeddedProcesses {
        n,
        grid: (0..=k_max).map(|k| k as f64 * h).collect(),
        w_n: w,
        v_n: (0..=k_max).map(|k| k as f64 * h).collect(),
        rho_n: record.states[..=k_max].to_vec(),
        bracket,
    })
}

/// `ε_n(k/n) = ρ_k − ρ₀ − Σ_{j<k} [L(ρ_j)/n + Θ(ρ_j) X_{j+1}/√n]`, where `Θ`
/// uses the coupling of the diffusive limit.
pub fn residual_epsilon(record: &TrajectoryRecord, cfg: &ModelConfig) -> Vec<CMat2> {
    let h = 1.0 / record.n as f64;
    let sqrt_h = h.sqrt();
    let limit = cfg.diffusion_limit();
    let c_lim = limit.coupling();
    let rho0 = *record.states[0].matrix();
    let mut drift_sum = CMat2::zero();
    let mut out = Vec::with_capacity(record.states.len());
    out.push(CMat2::zero());
    for (j, pair) in record.states.windows(2).enumerate() {
        let rho_j = pair[0].matrix();
        drift_sum += lindblad_for(&limit, rho_j).scale_re(h)
            + theta(rho_j, &c_lim).scale_re(sqrt_h * record.x_increments[j]);
        out.push(*pair[1].matrix() - rho0 - drift_sum);
    }
    out
}

/// Largest max-entry norm along a residual path.
pub fn sup_norm(path: &[CMat2]) -> f64 {
    path.iter().map(CMat2::max_norm).fold(0.0, f64::max)
}

/// Scalar helper used by tests and the lab: `Tr[ρ A]` along a record.
pub fn expectation_path(record: &TrajectoryRecord, a: &CMat2) -> Vec<f64> {
    record.states.iter().map(|r| r.expectation(a)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::c;
    use crate::model::{make_observable, AnticommutatorOrder, FieldHamiltonian};
    use crate::testutil::{random_config, random_state};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn identity_unitary() -> InteractionUnitary {
        InteractionUnitary::from_matrix(CMat4::identity())
    }

    #[test]
    fn identity_interaction_leaves_product_state() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let rho = random_state(&mut rng);
        let mu = interaction_state(&rho, &identity_unitary());
        let want = tensor(rho.matrix(), &CMat2::diag_real(1.0, 0.0));
        assert!((mu - want).max_norm() < 1e-15);
    }

    #[test]
    fn block_form_and_trace_of_interaction_state() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..500 {
            let cfg = random_config(&mut rng);
            let u = build_unitary(&cfg);
            let rho = random_state(&mut rng);
            let mu = interaction_state(&rho, &u);
            assert!((mu - interaction_state_blocks(&rho, &u)).max_norm() < 1e-12);
            assert!((mu.trace() - c(1.0, 0.0)).norm() < 1e-12);
        }
    }

    #[test]
    fn identity_interaction_maps() {
        let a = make_observable(0.0, 0.0, 1.0).unwrap();
        let rho = DensityMatrix::new(CMat2::new(
            c(0.3, 0.0),
            c(0.2, 0.1),
            c(0.2, -0.1),
            c(0.7, 0.0),
        ))
        .unwrap();
        let (l0, l1) = nonnormalized_maps(&rho, &identity_unitary(), &a);
        assert!((l0 - *rho.matrix()).max_norm() < 1e-15);
        assert!(l1.max_norm() < 1e-15);
    }

    #[test]
    fn maps_sum_to_unit_trace_and_match_kraus_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10_000 {
            let cfg = random_config(&mut rng);
            let u = build_unitary(&cfg);
            let rho = random_state(&mut rng);
            let (l0, l1) = nonnormalized_maps(&rho, &u, &cfg.observable);
            assert!(((l0 + l1).trace().re - 1.0).abs() < 1e-12);
            for l in [l0, l1] {
                let e = crate::linalg::herm_eigen2(&l).unwrap();
                assert!(e.values[1] > -1e-13);
            }
            let (k0, k1) = MeasurementChannel::new(&u, &cfg.observable).branches(&rho);
            assert!((k0 - l0).max_norm() < 1e-13 && (k1 - l1).max_norm() < 1e-13);
        }
    }

    #[test]
    fn diagonal_observable_jump_rate() {
        // n·Tr 𝓛₁(ρ) → Tr[CρC*] with a diagonal observable.
        let mut cfg = ModelConfig::amplitude_damping(0.0, 1, 1.0);
        cfg.h0 = CMat2::from_real(0.3, 0.2, 0.2, -0.3);
        cfg.c = CMat2::new(c(0.1, 0.0), c(0.8, 0.2), c(0.3, 0.0), c(-0.2, 0.1));
        let rho = DensityMatrix::new(CMat2::new(
            c(0.4, 0.0),
            c(0.1, 0.2),
            c(0.1, -0.2),
            c(0.6, 0.0),
        ))
        .unwrap();
        let cc = cfg.coupling();
        let target = (cc * *rho.matrix() * cc.adjoint()).trace().re;
        let errs: Vec<f64> = [100u32, 1000, 10_000]
            .iter()
            .map(|&n| {
                let cfg = cfg.with_n(n);
                let (_, l1) = nonnormalized_maps(&rho, &build_unitary(&cfg), &cfg.observable);
                (n as f64 * l1.trace().re - target).abs()
            })
            .collect();
        assert!(errs[0] > errs[1] && errs[1] > errs[2], "{errs:?}");
        assert!(errs[2] < 1e-3, "{errs:?}");
    }

    #[test]
    fn identity_interaction_step_is_certain() {
        let a = make_observable(0.0, 0.0, 1.0).unwrap();
        let channel = MeasurementChannel::new(&identity_unitary(), &a);
        let rho = DensityMatrix::maximally_mixed();
        for draw in [0.0, 0.3, 0.999] {
            let s = measurement_step(&rho, &channel, draw).unwrap();
            assert_eq!(s.outcome, 0);
            assert_eq!(s.x, 0.0);
            assert!((s.next_state.matrix() - rho.matrix()).max_norm() < 1e-15);
        }
    }

    #[test]
    fn increments_are_centered_and_normalized() {
        for (p, q) in [(0.5, 0.5), (0.9, 0.1), (0.123, 0.877), (1e-6, 1.0 - 1e-6)] {
            let (x0, x1) = (increment(0, p, q), increment(1, p, q));
            assert!((p * x0 + q * x1).abs() < 1e-12);
            assert!((p * x0 * x0 + q * x1 * x1 - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn branch_states_reconstruct_maps_and_match_centered_equation() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..2000 {
            let cfg = random_config(&mut rng);
            let channel = MeasurementChannel::from_config(&cfg);
            let rho = random_state(&mut rng);
            let (l0, l1) = channel.branches(&rho);
            for outcome in [0u8, 1] {
                // A draw below q forces outcome 1, at 1.0 forces outcome 0.
                let draw = if outcome == 1 { 0.0 } else { 1.0 };
                let s = measurement_step(&rho, &channel, draw).unwrap();
                if s.p.min(s.q) < MIN_BRANCH_PROBABILITY {
                    continue;
                }
                assert_eq!(s.outcome, outcome);
                let (l, mass) = if outcome == 0 { (l0, s.p) } else { (l1, s.q) };
                assert!((s.next_state.matrix().scale_re(mass) - l).max_norm() < 1e-12);
                let rhs = evolution_identity_rhs(&rho, &channel, outcome).unwrap();
                assert!((rhs - *s.next_state.matrix()).max_norm() < 1e-12);
                // Expanded forms: 𝓛₀(1 + q/p) and 𝓛₁/q.
                let expanded = if outcome == 0 {
                    l0.scale_re(1.0 + s.q / s.p)
                } else {
                    l1.scale_re(1.0 / s.q)
                };
                assert!((rhs - expanded).max_norm() < 1e-12);
            }
        }
    }

    #[test]
    fn sampling_convention() {
        let cfg = ModelConfig::amplitude_damping(PI / 2.0, 50, 1.0);
        let channel = MeasurementChannel::from_config(&cfg);
        let rho = DensityMatrix::excited();
        let (_, l1) = channel.branches(&rho);
        let q = l1.trace().re;
        assert_eq!(
            measurement_step(&rho, &channel, q - 1e-9).unwrap().outcome,
            1
        );
        assert_eq!(
            measurement_step(&rho, &channel, q + 1e-9).unwrap().outcome,
            0
        );
    }

    #[test]
    fn markov_replay() {
        let cfg = ModelConfig::amplitude_damping(1.0, 40, 1.0);
        let rec = run_trajectory(&cfg, &DensityMatrix::excited(), 9).unwrap();
        let channel = MeasurementChannel::from_config(&cfg);
        for k in 0..rec.num_steps() {
            let copy = rec.states[k];
            let draw = if rec.outcomes[k] == 1 { 0.0 } else { 1.0 };
            let replay = measurement_step(&copy, &channel, draw).unwrap();
            assert!((replay.next_state.matrix() - rec.states[k + 1].matrix()).max_norm() < 1e-14);
        }
    }

    #[test]
    fn trivial_dynamics_freeze_the_state() {
        let mut cfg = ModelConfig::amplitude_damping(PI / 3.0, 20, 2.0);
        cfg.c = CMat2::zero();
        let rho0 = DensityMatrix::new(CMat2::new(
            c(0.25, 0.0),
            c(0.1, -0.3),
            c(0.1, 0.3),
            c(0.75, 0.0),
        ))
        .unwrap();
        let rec = run_trajectory(&cfg, &rho0, 5).unwrap();
        assert_eq!(rec.states.len(), 41);
        assert_eq!(rec.outcomes.len(), 40);
        for s in &rec.states {
            assert!((s.matrix() - rho0.matrix()).max_norm() < 1e-14);
        }
        let eps = residual_epsilon(&rec, &cfg);
        assert!(sup_norm(&eps) < 1e-12);
    }

    #[test]
    fn determinism_contract() {
        let cfg = ModelConfig::amplitude_damping(PI / 2.0, 100, 1.0);
        let a = run_trajectory(&cfg, &DensityMatrix::excited(), 11).unwrap();
        let b = run_trajectory(&cfg, &DensityMatrix::excited(), 11).unwrap();
        let c2 = run_trajectory(&cfg, &DensityMatrix::excited(), 12).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.outcomes, c2.outcomes);
        let (mut x, mut y) = (Vec::new(), Vec::new());
        a.write_csv(&mut x).unwrap();
        b.write_csv(&mut y).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn every_state_is_valid() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for seed in 0..30 {
            let mut cfg = random_config(&mut rng);
            cfg.n = 200;
            let rho0 = random_state(&mut rng);
            let rec = run_trajectory(&cfg, &rho0, seed).unwrap();
            for (s, &(p, q)) in rec.states.iter().skip(1).zip(&rec.probabilities) {
                DensityMatrix::new(*s.matrix()).unwrap();
                assert!((p + q - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn embedding_examples() {
        let cfg = ModelConfig::amplitude_damping(PI / 2.0, 50, 1.0);
        let rho0 = DensityMatrix::excited();
        let rec = run_trajectory(&cfg, &rho0, 3).unwrap();
        let e = embed(&rec, 1.0).unwrap();
        assert_eq!(e.w_at(0.01), 0.0);
        assert_eq!(e.v_at(0.01), 0.0);
        assert_eq!(e.rho_at(0.01), &rho0);
        assert_eq!(e.v_at(1.0), 1.0);
        let e = embed(&rec, 0.735).unwrap();
        assert_eq!(e.v_at(0.735), 36.0 / 50.0);
        assert!(e.v_n.windows(2).all(|w| w[1] >= w[0]));
        let e = embed(&rec, 1.0).unwrap();

        // [W,W]_t from its definition W_t² − 2Σ W_{k−1}ΔW_k.
        let t = 0.9;
        let k = floor_steps(50, t);
        let mut by_definition = e.w_n[k].powi(2);
        for j in 1..=k {
            by_definition -= 2.0 * e.w_n[j - 1] * (e.w_n[j] - e.w_n[j - 1]);
        }
        let direct: f64 = rec.x_increments[..k].iter().map(|x| x * x).sum::<f64>() / 50.0;
        assert!((e.quadratic_variation(t) - direct).abs() < 1e-12);
        assert!((by_definition - direct).abs() < 1e-12);

        assert!(matches!(
            embed(&rec, 1.5),
            Err(TrajectoryError::HorizonTooShort { .. })
        ));
    }

    #[test]
    fn single_step_residual_is_order_one_over_n() {
        let n = 1000u32;
        let mut cfg = ModelConfig::amplitude_damping(PI / 3.0, n, 1.0);
        cfg.h0 = CMat2::from_real(0.5, 0.3, 0.3, -0.5);
        let channel = MeasurementChannel::from_config(&cfg);
        let rho0 = DensityMatrix::new(CMat2::new(
            c(0.6, 0.0),
            c(0.2, 0.1),
            c(0.2, -0.1),
            c(0.4, 0.0),
        ))
        .unwrap();
        let lim = cfg.diffusion_limit();
        for outcome in [0u8, 1] {
            let draw = if outcome == 1 { 0.0 } else { 1.0 };
            let s = measurement_step(&rho0, &channel, draw).unwrap();
            let r = *rho0.matrix();
            let predicted = r
                + lindblad_for(&lim, &r).scale_re(1.0 / n as f64)
                + theta(&r, &lim.coupling()).scale_re(s.x / (n as f64).sqrt());
            let err = (*s.next_state.matrix() - predicted).max_norm();
            assert!(
                err * n as f64 > 1e-3 && err * (n as f64) < 5.0,
                "err {err:e}"
            );
        }
    }

    #[test]
    fn conditional_moments_along_trajectory() {
        let cfg = ModelConfig::amplitude_damping(PI / 2.0, 200, 1.0);
        let rec = run_trajectory(&cfg, &DensityMatrix::excited(), 21).unwrap();
        for &(p, q) in &rec.probabilities {
            let (x0, x1) = (increment(0, p, q), increment(1, p, q));
            assert!((p * x0 + q * x1).abs() < 1e-12);
            assert!((p * x0 * x0 + q * x1 * x1 - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn degenerate_branch_is_handled() {
        // Diagonal observable, ground state, lowering coupling: q = 0 exactly.
        let mut cfg = ModelConfig::amplitude_damping(0.0, 5, 1.0);
        cfg.field_hamiltonian = FieldHamiltonian::GroundEnergy;
        cfg.anticommutator = AnticommutatorOrder::CStarC;
        let channel = MeasurementChannel::from_config(&cfg);
        let s = measurement_step(&DensityMatrix::ground(), &channel, 0.0).unwrap();
        assert_eq!((s.outcome, s.x), (0, 0.0));
        assert!(matches!(
            evolution_identity_rhs(&DensityMatrix::ground(), &channel, 1),
            Err(TrajectoryError::DegenerateProbability { .. })
        ));
    }
}
