//! States, observables and the interaction unitary of one repeated-interaction
//! step.

use thiserror::Error;

use crate::linalg::{c, expm4, herm_eigen2, tensor, CMat2, CMat4, CVec2, C64};

/// Hermiticity, trace and positivity tolerance for [`DensityMatrix`].
pub const STATE_TOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("not a state: {0}")]
    NotAState(String),
    #[error("not a wave function: norm {0}")]
    NotNormalized(f64),
    #[error("degenerate spectrum: lambda0 = lambda1 = {0}")]
    DegenerateSpectrum(f64),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

/// Positive, Hermitian, trace-one 2×2 matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DensityMatrix(CMat2);

impl DensityMatrix {
    /// Validates `m`, then symmetrizes it and rescales the trace to exactly 1.
    pub fn new(m: CMat2) -> Result<Self, ModelError> {
        if !m.is_finite() {
            return Err(ModelError::NotAState("non-finite entry".into()));
        }
        let defect = m.hermiticity_defect();
        if defect > STATE_TOL {
            return Err(ModelError::NotAState(format!(
                "hermiticity defect {defect:e}"
            )));
        }
        let tr = m.trace();
        if (tr.re - 1.0).abs() > STATE_TOL || tr.im.abs() > STATE_TOL {
            return Err(ModelError::NotAState(format!("trace {tr}")));
        }
        let h = m.hermitian_part();
        let eig = herm_eigen2(&h).map_err(|e| ModelError::NotAState(e.to_string()))?;
        if eig.values[1] < -STATE_TOL {
            return Err(ModelError::NotAState(format!(
                "negative eigenvalue {:e}",
                eig.values[1]
            )));
        }
        Ok(Self(h.scale_re(1.0 / h.trace().re)))
    }

    /// Wraps a matrix already known to be a state (symmetrized, trace one).
    /// Debug builds still check it.
    pub(crate) fn new_unchecked(m: CMat2) -> Self {
        debug_assert!(
            DensityMatrix::new(m).is_ok(),
            "invalid state {m:?}: {:?}",
            DensityMatrix::new(m)
        );
        Self(m)
    }

    /// `|ψ⟩⟨ψ|`
    pub fn pure(psi: &WaveFunction) -> Self {
        Self(psi.0.outer(&psi.0))
    }

    pub fn ground() -> Self {
        Self(CMat2::diag_real(1.0, 0.0))
    }

    pub fn excited() -> Self {
        Self(CMat2::diag_real(0.0, 1.0))
    }

    pub fn maximally_mixed() -> Self {
        Self(CMat2::diag_real(0.5, 0.5))
    }

    pub fn matrix(&self) -> &CMat2 {
        &self.0
    }

    pub fn into_matrix(self) -> CMat2 {
        self.0
    }

    /// `Tr ρ²`
    pub fn purity(&self) -> f64 {
        (self.0 * self.0).trace().re
    }

    /// `Tr[ρ A]` for Hermitian `A`.
    pub fn expectation(&self, a: &CMat2) -> f64 {
        (self.0 * *a).trace().re
    }

    /// Smallest eigenvalue.
    pub fn min_eigenvalue(&self) -> f64 {
        herm_eigen2(&self.0)
            .map(|e| e.values[1])
            .unwrap_or(f64::NEG_INFINITY)
    }
}

/// `Tr ρ²`
pub fn purity(rho: &DensityMatrix) -> f64 {
    rho.purity()
}

pub fn make_density(m: CMat2) -> Result<DensityMatrix, ModelError> {
    DensityMatrix::new(m)
}

/// Norm-one vector in C².
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WaveFunction(CVec2);

impl WaveFunction {
    pub fn new(v: CVec2) -> Result<Self, ModelError> {
        let norm = v.norm();
        if !v.is_finite() || (norm - 1.0).abs() > STATE_TOL {
            return Err(ModelError::NotNormalized(norm));
        }
        Ok(Self(v))
    }

    /// Divides `v` by its norm.
    pub fn normalized(v: CVec2) -> Result<Self, ModelError> {
        let norm = v.norm();
        if !v.is_finite() || norm == 0.0 {
            return Err(ModelError::NotNormalized(norm));
        }
        Ok(Self(v.scale(C64::from(1.0 / norm))))
    }

    pub fn vector(&self) -> &CVec2 {
        &self.0
    }

    pub fn projector(&self) -> DensityMatrix {
        DensityMatrix::pure(self)
    }
}

/// Two-outcome observable `λ₀P₀ + λ₁P₁` with `P₀ = |u⟩⟨u|`,
/// `u = cos(φ/2)Ω + sin(φ/2)X`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observable {
    pub lambda0: f64,
    pub lambda1: f64,
    pub mixing_angle: f64,
    pub p0: CMat2,
    pub p1: CMat2,
    /// Unit vectors spanning the ranges of `p0` and `p1`.
    pub eigvecs: [CVec2; 2],
}

impl Observable {
    pub fn new(mixing_angle: f64, lambda0: f64, lambda1: f64) -> Result<Self, ModelError> {
        if lambda0 == lambda1 {
            return Err(ModelError::DegenerateSpectrum(lambda0));
        }
        if !mixing_angle.is_finite() {
            return Err(ModelError::InvalidConfig(format!(
                "mixing angle {mixing_angle}"
            )));
        }
        let (s, co) = (0.5 * mixing_angle).sin_cos();
        let u = CVec2::new(C64::from(co), C64::from(s));
        let v = CVec2::new(C64::from(-s), C64::from(co));
        let p0 = u.outer(&u);
        let p1 = CMat2::identity() - p0;
        Ok(Self {
            lambda0,
            lambda1,
            mixing_angle,
            p0,
            p1,
            eigvecs: [u, v],
        })
    }

    pub fn matrix(&self) -> CMat2 {
        self.p0.scale_re(self.lambda0) + self.p1.scale_re(self.lambda1)
    }

    /// `p₀₀ = ⟨Ω, P₀Ω⟩`
    pub fn p00(&self) -> f64 {
        self.p0.0[0][0].re
    }

    /// `q₀₀ = ⟨Ω, P₁Ω⟩`
    pub fn q00(&self) -> f64 {
        self.p1.0[0][0].re
    }

    /// True when the eigenprojectors commute with the field basis, i.e. the
    /// chain has jumps rather than a diffusive limit.
    pub fn is_diagonal(&self) -> bool {
        self.p0.0[0][1].norm() < 1e-12
    }

    /// Phase `θ` picked up by the coupling in the diffusive limit of the
    /// chain: `e^{iθ} = q₀₁ / |q₀₁|`. Zero for a diagonal observable.
    pub fn measured_phase(&self) -> f64 {
        let q01 = self.p1.0[0][1];
        if q01.norm() < 1e-12 {
            0.0
        } else {
            q01.arg()
        }
    }
}

pub fn make_observable(phi: f64, lambda0: f64, lambda1: f64) -> Result<Observable, ModelError> {
    Observable::new(phi, lambda0, lambda1)
}

/// Free Hamiltonian of one field copy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FieldHamiltonian {
    /// `diag(1, 0)`: energy on the vacuum `Ω`.
    GroundEnergy,
    /// `diag(0, 1)`: energy on the excitation `X`.
    #[default]
    ExcitedEnergy,
}

impl FieldHamiltonian {
    pub fn matrix(self) -> CMat2 {
        match self {
            FieldHamiltonian::GroundEnergy => CMat2::diag_real(1.0, 0.0),
            FieldHamiltonian::ExcitedEnergy => CMat2::diag_real(0.0, 1.0),
        }
    }
}

impl std::str::FromStr for FieldHamiltonian {
    type Err = ModelError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ground_energy" => Ok(Self::GroundEnergy),
            "excited_energy" => Ok(Self::ExcitedEnergy),
            other => Err(ModelError::InvalidConfig(format!(
                "field_hamiltonian must be ground_energy or excited_energy, got {other:?}"
            ))),
        }
    }
}

/// Operator ordering inside the anticommutator of the Lindblad generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AnticommutatorOrder {
    /// `−½{C*C, ρ}`: trace preserving together with the `CρC*` term.
    #[default]
    CStarC,
    /// `−½{CC*, ρ}`: literal variant, trace preserving only for normal `C`.
    CCStar,
}

impl std::str::FromStr for AnticommutatorOrder {
    type Err = ModelError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "cstar_c" => Ok(Self::CStarC),
            "c_cstar" => Ok(Self::CCStar),
            other => Err(ModelError::InvalidConfig(format!(
                "lindblad_anticommutator must be cstar_c or c_cstar, got {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    pub h0: CMat2,
    pub c: CMat2,
    /// Phase applied as `C ← e^{iθ}C` before any dynamics.
    pub theta: f64,
    pub observable: Observable,
    /// Interactions per unit time; the step is `h = 1/n`.
    pub n: u32,
    pub t_horizon: f64,
    pub field_hamiltonian: FieldHamiltonian,
    pub anticommutator: AnticommutatorOrder,
}

impl ModelConfig {
    /// Two-level amplitude damping: `H₀ = 0`, `C = |Ω⟩⟨X|`, unit rate.
    pub fn amplitude_damping(mixing_angle: f64, n: u32, t_horizon: f64) -> Self {
        Self {
            h0: CMat2::zero(),
            c: CMat2::lowering(),
            theta: 0.0,
            observable: Observable::new(mixing_angle, 0.0, 1.0).expect("distinct eigenvalues"),
            n,
            t_horizon,
            field_hamiltonian: FieldHamiltonian::ExcitedEnergy,
            anticommutator: AnticommutatorOrder::CStarC,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.n == 0 {
            return Err(ModelError::InvalidConfig("n must be at least 1".into()));
        }
        if !(self.t_horizon > 0.0 && self.t_horizon.is_finite()) {
            return Err(ModelError::InvalidConfig(format!(
                "t_horizon must be positive, got {}",
                self.t_horizon
            )));
        }
        let defect = self.h0.hermiticity_defect();
        if defect > STATE_TOL {
            return Err(ModelError::InvalidConfig(format!(
                "h0 is not Hermitian (defect {defect:e})"
            )));
        }
        if !self.c.is_finite() || !self.theta.is_finite() {
            return Err(ModelError::InvalidConfig("non-finite coupling".into()));
        }
        Ok(())
    }

    pub fn with_n(mut self, n: u32) -> Self {
        self.n = n;
        self
    }

    pub fn with_horizon(mut self, t: f64) -> Self {
        self.t_horizon = t;
        self
    }

    pub fn step(&self) -> f64 {
        1.0 / self.n as f64
    }

    /// `⌊n·T⌋`
    pub fn num_steps(&self) -> usize {
        floor_steps(self.n, self.t_horizon)
    }

    /// `e^{iθ}C`, the coupling used by all dynamics.
    pub fn coupling(&self) -> CMat2 {
        self.c.scale(C64::from_polar(1.0, self.theta))
    }

    /// Configuration of the diffusion the measured chain converges to: the
    /// coupling carries the extra phase fixed by the observable.
    pub fn diffusion_limit(&self) -> Self {
        let mut cfg = *self;
        cfg.theta += self.observable.measured_phase();
        cfg
    }
}

/// `⌊n·t⌋`, robust to representation error in `t`.
pub fn floor_steps(n: u32, t: f64) -> usize {
    let x = n as f64 * t;
    (x + 1e-9 * x.abs().max(1.0)).floor().max(0.0) as usize
}

/// `U = exp(−i h H_tot)` and its field blocks `L_ij = ⟨X_i|U|X_j⟩`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InteractionUnitary {
    pub u: CMat4,
    pub l00: CMat2,
    pub l01: CMat2,
    pub l10: CMat2,
    pub l11: CMat2,
}

impl InteractionUnitary {
    pub fn from_matrix(u: CMat4) -> Self {
        Self {
            u,
            l00: u.block(0, 0),
            l01: u.block(0, 1),
            l10: u.block(1, 0),
            l11: u.block(1, 1),
        }
    }

    pub fn reassemble(&self) -> CMat4 {
        CMat4::from_blocks([[self.l00, self.l01], [self.l10, self.l11]])
    }

    /// `max |U U* − I|`
    pub fn unitarity_defect(&self) -> f64 {
        (self.u * self.u.adjoint() - CMat4::identity()).max_norm()
    }
}

/// Coupling part of `H_tot` before scaling: `i(C⊗σ₊ − C*⊗σ₋)`.
fn coupling_generator(c_op: &CMat2) -> CMat4 {
    let raise = tensor(c_op, &CMat2::raising());
    let lower = tensor(&c_op.adjoint(), &CMat2::lowering());
    (raise - lower).scale(c(0.0, 1.0))
}

/// `H_tot = H₀⊗I + I⊗H_field + √n · i(C⊗σ₊ − C*⊗σ₋)`.
///
/// With `U = exp(−iH_tot/n)` this gives `L₁₀ = C/√n + O(1/n)` and
/// `L₀₀ = I + (−iH₀ − ½C*C)/n + O(1/n²)` up to the field phase.
pub fn build_total_hamiltonian(cfg: &ModelConfig) -> CMat4 {
    let id = CMat2::identity();
    let free = tensor(&cfg.h0, &id) + tensor(&id, &cfg.field_hamiltonian.matrix());
    let scale = (cfg.n as f64).sqrt();
    free + coupling_generator(&cfg.coupling()).scale(C64::from(scale))
}

pub fn build_unitary(cfg: &ModelConfig) -> InteractionUnitary {
    let h = cfg.step();
    let generator = build_total_hamiltonian(cfg).scale(c(0.0, -h));
    InteractionUnitary::from_matrix(expm4(&generator))
}

/// Removes the global phase of `m` relative to `reference`: returns
/// `e^{-iα} m` with `α = arg Tr[reference* m]`.
pub fn align_phase(m: &CMat2, reference: &CMat2) -> CMat2 {
    let overlap = (reference.adjoint() * *m).trace();
    if overlap.norm() == 0.0 {
        return *m;
    }
    m.scale(C64::from_polar(1.0, -overlap.arg()))
}

/// First-order prediction `I + (−iH₀ − ½C*C)/n` for `L₀₀`.
pub fn l00_first_order(cfg: &ModelConfig) -> CMat2 {
    let cc = cfg.coupling();
    let damping = match cfg.anticommutator {
        AnticommutatorOrder::CStarC => cc.adjoint() * cc,
        AnticommutatorOrder::CCStar => cc * cc.adjoint(),
    };
    let drift = cfg.h0.scale(c(0.0, -1.0)) - damping.scale_re(0.5);
    CMat2::identity() + drift.scale_re(cfg.step())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    fn random_like_config(n: u32) -> ModelConfig {
        ModelConfig {
            h0: CMat2::new(c(0.4, 0.0), c(0.3, -0.2), c(0.3, 0.2), c(-0.1, 0.0)),
            c: CMat2::new(c(0.2, 0.1), c(0.9, 0.0), c(-0.3, 0.4), c(0.1, -0.5)),
            theta: 0.0,
            observable: Observable::new(1.1, -1.0, 1.0).unwrap(),
            n,
            t_horizon: 1.0,
            field_hamiltonian: FieldHamiltonian::ExcitedEnergy,
            anticommutator: AnticommutatorOrder::CStarC,
        }
    }

    #[test]
    fn density_constructor() {
        assert!(make_density(CMat2::diag_real(1.0, 0.0)).is_ok());
        assert!(make_density(CMat2::diag_real(0.5, 0.5)).is_ok());
        assert!(matches!(
            make_density(CMat2::diag_real(2.0, -1.0)),
            Err(ModelError::NotAState(_))
        ));
        assert!(make_density(CMat2::diag_real(0.5, 0.4)).is_err());
        assert!(make_density(CMat2::lowering() + CMat2::diag_real(0.5, 0.5)).is_err());
    }

    #[test]
    fn purity_examples() {
        assert_abs_diff_eq!(DensityMatrix::ground().purity(), 1.0);
        assert_abs_diff_eq!(DensityMatrix::maximally_mixed().purity(), 0.5);
        let rho = make_density(CMat2::diag_real(0.75, 0.25)).unwrap();
        assert_abs_diff_eq!(purity(&rho), 0.625, epsilon = 1e-15);
    }

    #[test]
    fn observable_examples() {
        let a = make_observable(0.0, 0.0, 1.0).unwrap();
        assert_eq!(a.p0, CMat2::diag_real(1.0, 0.0));
        assert!(a.is_diagonal());

        let a = make_observable(PI / 2.0, 0.0, 1.0).unwrap();
        let want = CMat2::from_real(0.5, 0.5, 0.5, 0.5);
        assert!((a.p0 - want).max_norm() < 1e-15);
        assert!(!a.is_diagonal());

        for k in 0..50 {
            let phi = k as f64 * 0.13;
            let a = make_observable(phi, 1.0, -2.0).unwrap();
            assert!((a.p0 + a.p1 - CMat2::identity()).max_norm() < 1e-12);
            assert!((a.p0 * a.p1).max_norm() < 1e-12);
            assert!((a.p0 * a.p0 - a.p0).max_norm() < 1e-12);
            assert!(a.p0.hermiticity_defect() < 1e-15);
        }

        assert!(matches!(
            make_observable(0.3, 2.0, 2.0),
            Err(ModelError::DegenerateSpectrum(_))
        ));
    }

    #[test]
    fn nondiagonal_observables_have_positive_p00_q00() {
        for k in 1..100 {
            let phi = PI * k as f64 / 100.0;
            let a = make_observable(phi, 0.0, 1.0).unwrap();
            assert!(a.p00() > 0.0 && a.q00() > 0.0);
            // q01 = -sin(φ/2)cos(φ/2) < 0 for real eigenvectors.
            assert_abs_diff_eq!(a.measured_phase(), PI, epsilon = 1e-12);
        }
    }

    #[test]
    fn total_hamiltonian_trivial_case() {
        let mut cfg = ModelConfig::amplitude_damping(0.0, 10, 1.0);
        cfg.c = CMat2::zero();
        cfg.field_hamiltonian = FieldHamiltonian::GroundEnergy;
        let want = tensor(&CMat2::identity(), &CMat2::diag_real(1.0, 0.0));
        assert_eq!(build_total_hamiltonian(&cfg), want);
    }

    #[test]
    fn total_hamiltonian_is_hermitian_and_coupling_scales_as_sqrt_n() {
        let cfg = random_like_config(25);
        let h = build_total_hamiltonian(&cfg);
        assert!((h - h.adjoint()).max_norm() < 1e-12);

        let mut uncoupled = cfg;
        uncoupled.c = CMat2::zero();
        let free = build_total_hamiltonian(&uncoupled);
        let d1 = (build_total_hamiltonian(&cfg) - free).max_norm();
        let d4 = (build_total_hamiltonian(&cfg.with_n(100)) - free).max_norm();
        assert_abs_diff_eq!(d4, 2.0 * d1, epsilon = 1e-12);
    }

    #[test]
    fn trivial_unitary_blocks() {
        let mut cfg = ModelConfig::amplitude_damping(0.7, 37, 1.0);
        cfg.c = CMat2::zero();
        let u = build_unitary(&cfg);
        assert!((u.l00 - CMat2::identity()).max_norm() < 1e-15);
        assert!(u.l10.max_norm() < 1e-15);
    }

    #[test]
    fn unitary_reassembles_and_is_unitary() {
        for n in [1, 3, 10, 100, 1000] {
            let u = build_unitary(&random_like_config(n));
            assert!(u.unitarity_defect() < 1e-12, "n = {n}");
            assert_eq!(u.reassemble(), u.u);
        }
    }

    #[test]
    fn l10_rate_is_one_over_n() {
        let cfg = random_like_config(1);
        let scaled: Vec<f64> = [100u32, 1000, 10_000]
            .iter()
            .map(|&n| {
                let u = build_unitary(&cfg.with_n(n));
                let sqrt_n = (n as f64).sqrt();
                n as f64 * (u.l10.scale_re(sqrt_n) - cfg.coupling()).max_norm()
            })
            .collect();
        for k in &scaled {
            assert!(*k < 10.0, "{scaled:?}");
        }
        assert!((scaled[2] / scaled[1] - 1.0).abs() < 0.05, "{scaled:?}");
    }

    #[test]
    fn ground_energy_field_only_adds_a_phase_at_first_order() {
        let mut cfg = random_like_config(10_000);
        cfg.field_hamiltonian = FieldHamiltonian::GroundEnergy;
        let u = build_unitary(&cfg);
        let predicted = l00_first_order(&cfg);
        let raw = (u.l00 - predicted).max_norm();
        let aligned = (align_phase(&u.l00, &predicted) - predicted).max_norm();
        assert!(raw > 5e-5, "raw {raw:e}");
        assert!(aligned < 1e-7, "aligned {aligned:e}");
    }

    #[test]
    fn theta_rotates_coupling() {
        let mut cfg = ModelConfig::amplitude_damping(PI / 2.0, 10, 1.0);
        cfg.theta = PI / 2.0;
        assert!((cfg.coupling() - CMat2::lowering().scale(c(0.0, 1.0))).max_norm() < 1e-15);
        let lim = ModelConfig::amplitude_damping(PI / 2.0, 10, 1.0).diffusion_limit();
        assert!((lim.coupling() + CMat2::lowering()).max_norm() < 1e-15);
    }

    #[test]
    fn floor_steps_is_robust() {
        assert_eq!(floor_steps(100, 1.0), 100);
        assert_eq!(floor_steps(10, 0.3), 3);
        assert_eq!(floor_steps(3, 0.2), 0);
        assert_eq!(floor_steps(7, 2.5), 17);
    }
}
