use nalgebra::{Matrix2, Vector2};

use crate::error::{Error, Result};
use crate::linalg::{C64, CONE, CZERO};

const I: C64 = C64::new(0.0, 1.0);

/// Which boundary projection annihilates admissible spinors.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ChiralitySign {
    /// B⁺ψ = 0, so ψ|∂M ∈ V⁻.
    Plus,
    /// B⁻ψ = 0, so ψ|∂M ∈ V⁺.
    Minus,
}

impl ChiralitySign {
    /// Eigenvalue of n⃗·G on the admissible boundary line.
    pub fn admissible_eigenvalue(self) -> f64 {
        match self {
            ChiralitySign::Plus => -1.0,
            ChiralitySign::Minus => 1.0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ChiralitySign::Plus => "+",
            ChiralitySign::Minus => "-",
        }
    }
}

/// Clifford multiplication by the flat frame in the representation
/// `c₁ = iσ₁`, `c₂ = iσ₂`, with chirality `G = i c₁ c₂ = σ₃`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CliffordFrame {
    c1: Matrix2<C64>,
    c2: Matrix2<C64>,
    g: Matrix2<C64>,
}

impl Default for CliffordFrame {
    fn default() -> Self {
        let c1 = Matrix2::new(CZERO, I, I, CZERO);
        let c2 = Matrix2::new(CZERO, CONE, -CONE, CZERO);
        CliffordFrame { c1, c2, g: (c1 * c2) * I }
    }
}

impl CliffordFrame {
    pub fn c1(&self) -> &Matrix2<C64> {
        &self.c1
    }

    pub fn c2(&self) -> &Matrix2<C64> {
        &self.c2
    }

    pub fn chirality(&self) -> &Matrix2<C64> {
        &self.g
    }

    /// Matrix of Clifford multiplication by `X = x₁e₁ + x₂e₂`.
    pub fn clifford_matrix(&self, x: [f64; 2]) -> Matrix2<C64> {
        self.c1 * C64::from(x[0]) + self.c2 * C64::from(x[1])
    }

    pub fn clifford_multiply(&self, x: [f64; 2], psi: [C64; 2]) -> [C64; 2] {
        let v = self.clifford_matrix(x) * Vector2::new(psi[0], psi[1]);
        [v[0], v[1]]
    }

    /// n⃗·G, a Hermitian involution for unit n⃗.
    pub fn normal_chirality(&self, normal: [f64; 2]) -> Matrix2<C64> {
        self.clifford_matrix(normal) * self.g
    }

    /// (B⁺, B⁻) = ½(I ± n⃗·G).
    pub fn chirality_projectors(&self, normal: [f64; 2]) -> Result<(Matrix2<C64>, Matrix2<C64>)> {
        check_unit(normal)?;
        let ng = self.normal_chirality(normal);
        let id = Matrix2::<C64>::identity();
        let half = C64::from(0.5);
        Ok(((id + ng) * half, (id - ng) * half))
    }

    /// Unit vector spanning the admissible line at a boundary point with this normal.
    ///
    /// With n⃗ = (cos θ, sin θ), n⃗·G has the ±1 eigenvectors (1, ±i e^{iθ})/√2.
    pub fn admissible_vector(&self, normal: [f64; 2], sign: ChiralitySign) -> Result<[C64; 2]> {
        check_unit(normal)?;
        let e = C64::new(normal[0], normal[1]);
        let s = std::f64::consts::FRAC_1_SQRT_2;
        Ok([C64::from(s), I * e * (sign.admissible_eigenvalue() * s)])
    }
}

fn check_unit(n: [f64; 2]) -> Result<()> {
    let len = (n[0] * n[0] + n[1] * n[1]).sqrt();
    if !((len - 1.0).abs() <= 1e-9) {
        return Err(Error::Input(format!("normal {n:?} is not a unit vector (length {len})")));
    }
    Ok(())
}
