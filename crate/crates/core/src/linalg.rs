//! Fixed-size complex matrices for a qubit (`CMat2`) and a qubit coupled to
//! a single field mode (`CMat4`).
//!
//! Composite operators use the ordered basis `Ω⊗Ω, X⊗Ω, Ω⊗X, X⊗X`, where the
//! first factor is the system and the second the field. In that order the
//! system index varies fastest, so a `CMat4` splits into 2×2 system blocks
//! indexed by the field: block `(i, j)` is `⟨X_i| M |X_j⟩` on the field.

use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use num_complex::Complex64;
use thiserror::Error;

pub type C64 = Complex64;

/// Max-entry tolerance on `‖m − m*‖` accepted by [`herm_eigen2`].
pub const HERMITICITY_TOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("matrix is not Hermitian: max |m - m*| = {deviation:e}")]
    NotHermitian { deviation: f64 },
}

#[inline]
pub const fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

const ZERO: C64 = c(0.0, 0.0);
const ONE: C64 = c(1.0, 0.0);

/// Column vector in C².
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CVec2(pub [C64; 2]);

impl CVec2 {
    pub const fn new(a: C64, b: C64) -> Self {
        Self([a, b])
    }

    /// Basis vector `Ω` (index 0).
    pub const fn ground() -> Self {
        Self([ONE, ZERO])
    }

    /// Basis vector `X` (index 1).
    pub const fn excited() -> Self {
        Self([ZERO, ONE])
    }

    pub fn dot(&self, other: &CVec2) -> C64 {
        self.0[0].conj() * other.0[0] + self.0[1].conj() * other.0[1]
    }

    pub fn norm_sqr(&self) -> f64 {
        self.0[0].norm_sqr() + self.0[1].norm_sqr()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    pub fn scale(&self, s: C64) -> Self {
        Self([self.0[0] * s, self.0[1] * s])
    }

    /// `|self⟩⟨other|`
    pub fn outer(&self, other: &CVec2) -> CMat2 {
        let mut m = CMat2::zero();
        for i in 0..2 {
            for j in 0..2 {
                m.0[i][j] = self.0[i] * other.0[j].conj();
            }
        }
        m
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }
}

impl Add for CVec2 {
    type Output = CVec2;
    fn add(self, rhs: CVec2) -> CVec2 {
        CVec2([self.0[0] + rhs.0[0], self.0[1] + rhs.0[1]])
    }
}

impl Sub for CVec2 {
    type Output = CVec2;
    fn sub(self, rhs: CVec2) -> CVec2 {
        CVec2([self.0[0] - rhs.0[0], self.0[1] - rhs.0[1]])
    }
}

/// 2×2 complex matrix, row-major.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CMat2(pub [[C64; 2]; 2]);

impl Default for CMat2 {
    fn default() -> Self {
        Self::zero()
    }
}

impl CMat2 {
    pub const fn new(a: C64, b: C64, c: C64, d: C64) -> Self {
        Self([[a, b], [c, d]])
    }

    pub const fn zero() -> Self {
        Self([[ZERO; 2]; 2])
    }

    pub const fn identity() -> Self {
        Self([[ONE, ZERO], [ZERO, ONE]])
    }

    pub fn from_real(a: f64, b: f64, c: f64, d: f64) -> Self {
        Self::new(C64::from(a), C64::from(b), C64::from(c), C64::from(d))
    }

    pub fn diag(a: C64, d: C64) -> Self {
        Self::new(a, ZERO, ZERO, d)
    }

    pub fn diag_real(a: f64, d: f64) -> Self {
        Self::from_real(a, 0.0, 0.0, d)
    }

    pub fn pauli_x() -> Self {
        Self::from_real(0.0, 1.0, 1.0, 0.0)
    }

    pub fn pauli_y() -> Self {
        Self::new(ZERO, c(0.0, -1.0), c(0.0, 1.0), ZERO)
    }

    pub fn pauli_z() -> Self {
        Self::from_real(1.0, 0.0, 0.0, -1.0)
    }

    /// Lowering operator `|Ω⟩⟨X|` = (0 1; 0 0).
    pub fn lowering() -> Self {
        Self::from_real(0.0, 1.0, 0.0, 0.0)
    }

    /// Raising operator `|X⟩⟨Ω|` = (0 0; 1 0).
    pub fn raising() -> Self {
        Self::from_real(0.0, 0.0, 1.0, 0.0)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> C64 {
        self.0[i][j]
    }

    pub fn adjoint(&self) -> Self {
        let m = &self.0;
        Self([
            [m[0][0].conj(), m[1][0].conj()],
            [m[0][1].conj(), m[1][1].conj()],
        ])
    }

    pub fn trace(&self) -> C64 {
        self.0[0][0] + self.0[1][1]
    }

    pub fn scale(&self, s: C64) -> Self {
        let m = &self.0;
        Self([[m[0][0] * s, m[0][1] * s], [m[1][0] * s, m[1][1] * s]])
    }

    pub fn scale_re(&self, s: f64) -> Self {
        self.scale(C64::from(s))
    }

    pub fn apply(&self, v: &CVec2) -> CVec2 {
        let m = &self.0;
        CVec2([
            m[0][0] * v.0[0] + m[0][1] * v.0[1],
            m[1][0] * v.0[0] + m[1][1] * v.0[1],
        ])
    }

    /// `[self, other]`
    pub fn commutator(&self, other: &CMat2) -> Self {
        *self * *other - *other * *self
    }

    /// `{self, other}`
    pub fn anticommutator(&self, other: &CMat2) -> Self {
        *self * *other + *other * *self
    }

    /// Largest entry modulus.
    pub fn max_norm(&self) -> f64 {
        self.0
            .iter()
            .flatten()
            .map(|z| z.norm())
            .fold(0.0, f64::max)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.0
            .iter()
            .flatten()
            .map(|z| z.norm_sqr())
            .sum::<f64>()
            .sqrt()
    }

    pub fn hermiticity_defect(&self) -> f64 {
        (*self - self.adjoint()).max_norm()
    }

    /// `(m + m*) / 2`
    pub fn hermitian_part(&self) -> Self {
        (*self + self.adjoint()).scale_re(0.5)
    }

    pub fn is_finite(&self) -> bool {
        self.0
            .iter()
            .flatten()
            .all(|z| z.re.is_finite() && z.im.is_finite())
    }
}

impl Add for CMat2 {
    type Output = CMat2;
    fn add(self, rhs: CMat2) -> CMat2 {
        let (a, b) = (&self.0, &rhs.0);
        CMat2([
            [a[0][0] + b[0][0], a[0][1] + b[0][1]],
            [a[1][0] + b[1][0], a[1][1] + b[1][1]],
        ])
    }
}

impl AddAssign for CMat2 {
    fn add_assign(&mut self, rhs: CMat2) {
        *self = *self + rhs;
    }
}

impl Sub for CMat2 {
    type Output = CMat2;
    fn sub(self, rhs: CMat2) -> CMat2 {
        let (a, b) = (&self.0, &rhs.0);
        CMat2([
            [a[0][0] - b[0][0], a[0][1] - b[0][1]],
            [a[1][0] - b[1][0], a[1][1] - b[1][1]],
        ])
    }
}

impl Sub<&CMat2> for &CMat2 {
    type Output = CMat2;
    fn sub(self, rhs: &CMat2) -> CMat2 {
        *self - *rhs
    }
}

impl Sub<CMat2> for &CMat2 {
    type Output = CMat2;
    fn sub(self, rhs: CMat2) -> CMat2 {
        *self - rhs
    }
}

impl Neg for CMat2 {
    type Output = CMat2;
    fn neg(self) -> CMat2 {
        self.scale_re(-1.0)
    }
}

impl Mul for CMat2 {
    type Output = CMat2;
    fn mul(self, rhs: CMat2) -> CMat2 {
        let (a, b) = (&self.0, &rhs.0);
        CMat2([
            [
                a[0][0] * b[0][0] + a[0][1] * b[1][0],
                a[0][0] * b[0][1] + a[0][1] * b[1][1],
            ],
            [
                a[1][0] * b[0][0] + a[1][1] * b[1][0],
                a[1][0] * b[0][1] + a[1][1] * b[1][1],
            ],
        ])
    }
}

impl Mul<f64> for CMat2 {
    type Output = CMat2;
    fn mul(self, rhs: f64) -> CMat2 {
        self.scale_re(rhs)
    }
}

impl Mul<C64> for CMat2 {
    type Output = CMat2;
    fn mul(self, rhs: C64) -> CMat2 {
        self.scale(rhs)
    }
}

/// 4×4 complex matrix, row-major, in the `Ω⊗Ω, X⊗Ω, Ω⊗X, X⊗X` basis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CMat4(pub [[C64; 4]; 4]);

impl Default for CMat4 {
    fn default() -> Self {
        Self::zero()
    }
}

impl CMat4 {
    pub const fn zero() -> Self {
        Self([[ZERO; 4]; 4])
    }

    pub fn identity() -> Self {
        let mut m = Self::zero();
        for i in 0..4 {
            m.0[i][i] = ONE;
        }
        m
    }

    pub fn diag(d: [C64; 4]) -> Self {
        let mut m = Self::zero();
        for (i, v) in d.into_iter().enumerate() {
            m.0[i][i] = v;
        }
        m
    }

    /// 2×2 block `(i, j)` (field indices).
    pub fn block(&self, i: usize, j: usize) -> CMat2 {
        let (r, s) = (2 * i, 2 * j);
        CMat2([
            [self.0[r][s], self.0[r][s + 1]],
            [self.0[r + 1][s], self.0[r + 1][s + 1]],
        ])
    }

    /// Inverse of [`CMat4::block`]: `blocks[i][j]` becomes block `(i, j)`.
    pub fn from_blocks(blocks: [[CMat2; 2]; 2]) -> Self {
        let mut m = Self::zero();
        for (bi, row) in blocks.iter().enumerate() {
            for (bj, b) in row.iter().enumerate() {
                for r in 0..2 {
                    for s in 0..2 {
                        m.0[2 * bi + r][2 * bj + s] = b.0[r][s];
                    }
                }
            }
        }
        m
    }

    pub fn adjoint(&self) -> Self {
        let mut m = Self::zero();
        for i in 0..4 {
            for j in 0..4 {
                m.0[i][j] = self.0[j][i].conj();
            }
        }
        m
    }

    pub fn trace(&self) -> C64 {
        (0..4).map(|i| self.0[i][i]).sum()
    }

    pub fn scale(&self, s: C64) -> Self {
        let mut m = *self;
        m.0.iter_mut().flatten().for_each(|z| *z *= s);
        m
    }

    pub fn max_norm(&self) -> f64 {
        self.0
            .iter()
            .flatten()
            .map(|z| z.norm())
            .fold(0.0, f64::max)
    }

    /// Induced 1-norm (max column sum).
    pub fn one_norm(&self) -> f64 {
        (0..4)
            .map(|j| (0..4).map(|i| self.0[i][j].norm()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.0
            .iter()
            .flatten()
            .all(|z| z.re.is_finite() && z.im.is_finite())
    }
}

impl Add for CMat4 {
    type Output = CMat4;
    fn add(mut self, rhs: CMat4) -> CMat4 {
        for i in 0..4 {
            for j in 0..4 {
                self.0[i][j] += rhs.0[i][j];
            }
        }
        self
    }
}

impl Sub for CMat4 {
    type Output = CMat4;
    fn sub(mut self, rhs: CMat4) -> CMat4 {
        for i in 0..4 {
            for j in 0..4 {
                self.0[i][j] -= rhs.0[i][j];
            }
        }
        self
    }
}

impl Mul for CMat4 {
    type Output = CMat4;
    fn mul(self, rhs: CMat4) -> CMat4 {
        let mut m = CMat4::zero();
        for i in 0..4 {
            for k in 0..4 {
                let a = self.0[i][k];
                if a == ZERO {
                    continue;
                }
                for j in 0..4 {
                    m.0[i][j] += a * rhs.0[k][j];
                }
            }
        }
        m
    }
}

impl Mul<C64> for CMat4 {
    type Output = CMat4;
    fn mul(self, rhs: C64) -> CMat4 {
        self.scale(rhs)
    }
}

/// `system ⊗ field` in the `Ω⊗Ω, X⊗Ω, Ω⊗X, X⊗X` basis: block `(i, j)` equals
/// `field[i][j] · system`.
pub fn tensor(system: &CMat2, field: &CMat2) -> CMat4 {
    let mut blocks = [[CMat2::zero(); 2]; 2];
    for (i, row) in blocks.iter_mut().enumerate() {
        for (j, b) in row.iter_mut().enumerate() {
            *b = system.scale(field.0[i][j]);
        }
    }
    CMat4::from_blocks(blocks)
}

/// Partial trace over the field factor: `B₀₀ + B₁₁`.
pub fn partial_trace_system(m: &CMat4) -> CMat2 {
    m.block(0, 0) + m.block(1, 1)
}

/// Spectral decomposition of a Hermitian 2×2 matrix.
#[derive(Debug, Clone, Copy)]
pub struct HermEigen2 {
    /// Sorted descending.
    pub values: [f64; 2],
    pub vectors: [CVec2; 2],
}

impl HermEigen2 {
    pub fn reconstruct(&self) -> CMat2 {
        self.vectors[0]
            .outer(&self.vectors[0])
            .scale_re(self.values[0])
            + self.vectors[1]
                .outer(&self.vectors[1])
                .scale_re(self.values[1])
    }
}

/// Closed-form eigendecomposition. The input is symmetrized first; it must be
/// Hermitian to within [`HERMITICITY_TOL`].
pub fn herm_eigen2(m: &CMat2) -> Result<HermEigen2, LinalgError> {
    let deviation = m.hermiticity_defect();
    if deviation > HERMITICITY_TOL || !deviation.is_finite() {
        return Err(LinalgError::NotHermitian { deviation });
    }
    let h = m.hermitian_part();
    let a = h.0[0][0].re;
    let d = h.0[1][1].re;
    let b = h.0[0][1];
    let half_gap = 0.5 * (a - d);
    let mean = 0.5 * (a + d);
    let r = half_gap.hypot(b.norm());
    let values = [mean + r, mean - r];

    if r == 0.0 {
        return Ok(HermEigen2 {
            values,
            vectors: [CVec2::ground(), CVec2::excited()],
        });
    }
    // Pick the better-conditioned of the two equivalent null-space vectors.
    let v = if a >= d {
        CVec2::new(C64::from(half_gap + r), b.conj())
    } else {
        CVec2::new(b, C64::from(r - half_gap))
    };
    let v = v.scale(C64::from(1.0 / v.norm()));
    let w = CVec2::new(-v.0[1].conj(), v.0[0].conj());
    Ok(HermEigen2 {
        values,
        vectors: [v, w],
    })
}

/// Matrix exponential by scaling and squaring of a truncated Taylor series.
pub fn expm4(m: &CMat4) -> CMat4 {
    const TERM_TOL: f64 = 1e-13;
    let norm = m.one_norm();
    // With the scaled norm at most 1/8 the series tail past a 1e-13 term is
    // below rounding.
    let squarings = if norm > 0.125 {
        (norm / 0.125).log2().ceil() as i32
    } else {
        0
    };
    let a = m.scale(C64::from(0.5f64.powi(squarings)));

    let mut sum = CMat4::identity();
    let mut term = CMat4::identity();
    for k in 1..=30 {
        term = (term * a).scale(C64::from(1.0 / k as f64));
        sum = sum + term;
        if term.max_norm() < TERM_TOL {
            break;
        }
    }
    for _ in 0..squarings {
        sum = sum * sum;
    }
    sum
}
