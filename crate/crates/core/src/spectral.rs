//! Weighted Dirac spectrum `A x = λ B_f x`, `B_f = diag(e^f) M_g`, and the
//! signed splitting and fractional norm built on it.

use faer::Mat;

use crate::error::{Error, Result};
use crate::linalg::{hermitian_eigen, matmul_new, matvec, matvec_adjoint, symmetrize, C64, CZERO};
use crate::spinor::DiracOperator;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModeCount {
    All,
    /// The given number of eigenpairs closest to zero.
    Lowest(usize),
}

#[derive(Clone, Debug)]
pub struct SpectralBasis {
    weight: Vec<f64>,
    b: Vec<f64>,
    eigenvalues: Vec<f64>,
    vectors: Mat<C64>,
    n_neg: usize,
    total: usize,
    kernel_dimension: usize,
}

/// Relative size below which an eigenvalue counts as kernel.
const KERNEL_RTOL: f64 = 1e-10;

pub fn solve_weighted_spectrum(d: &DiracOperator, f: &[f64], count: ModeCount) -> Result<SpectralBasis> {
    let dofs = d.dofs();
    if f.len() != dofs.num_vertices() {
        return Err(Error::Input(format!("weight has {} values, mesh has {} vertices", f.len(), dofs.num_vertices())));
    }
    if let Some(i) = f.iter().position(|v| !v.is_finite()) {
        return Err(Error::Input(format!("weight is not finite at vertex {i}")));
    }
    let n = d.num_dofs();
    let b: Vec<f64> = (0..n).map(|k| f[dofs.vertex_of(k)].exp() * d.mass()[k]).collect();
    // B^{-1/2} A B^{-1/2} = Z Λ Zᴴ with Z = B^{-1/2} M W.
    let w = d.modes();
    let z = Mat::from_fn(n, n, |i, j| w[(i, j)] * (d.mass()[i] / b[i].sqrt()));
    let zl = Mat::from_fn(n, n, |i, j| z[(i, j)] * d.eigenvalues()[j]);
    let mut h = matmul_new(zl.as_ref(), z.adjoint());
    drop((z, zl));
    symmetrize(&mut h);
    let (vals, u) = hermitian_eigen(h.as_ref())?;
    drop(h);
    let scale = vals.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let kernel_dimension = vals.iter().filter(|v| v.abs() <= KERNEL_RTOL * scale).count();
    let keep: Vec<usize> = match count {
        ModeCount::All => (0..n).collect(),
        ModeCount::Lowest(k) => {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.sort_by(|&i, &j| vals[i].abs().total_cmp(&vals[j].abs()).then(i.cmp(&j)));
            idx.truncate(k.min(n));
            idx.sort_unstable();
            idx
        }
    };
    let mut vectors = Mat::<C64>::zeros(n, keep.len());
    for (c, &k) in keep.iter().enumerate() {
        // Fix the phase: first significant coefficient real and positive.
        let col: Vec<C64> = (0..n).map(|i| u[(i, k)] / b[i].sqrt()).collect();
        let amax = col.iter().fold(0.0f64, |a, z| a.max(z.norm()));
        let lead = col.iter().find(|z| z.norm() > 1e-3 * amax).copied().unwrap_or(C64::new(1.0, 0.0));
        let phase = lead.conj() / lead.norm();
        for i in 0..n {
            vectors[(i, c)] = col[i] * phase;
        }
    }
    let eigenvalues: Vec<f64> = keep.iter().map(|&k| vals[k]).collect();
    let n_neg = eigenvalues.iter().filter(|v| **v < 0.0).count();
    Ok(SpectralBasis { weight: f.to_vec(), b, eigenvalues, vectors, n_neg, total: n, kernel_dimension })
}

impl SpectralBasis {
    pub fn weight(&self) -> &[f64] {
        &self.weight
    }

    /// Per-dof diagonal of B_f.
    pub fn b_weights(&self) -> &[f64] {
        &self.b
    }

    /// All kept eigenvalues, ascending.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn vectors(&self) -> faer::MatRef<'_, C64> {
        self.vectors.as_ref()
    }

    pub fn num_modes(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn num_negative(&self) -> usize {
        self.n_neg
    }

    pub fn num_positive(&self) -> usize {
        self.num_modes() - self.n_neg
    }

    pub fn kernel_dimension(&self) -> usize {
        self.kernel_dimension
    }

    pub fn is_complete(&self) -> bool {
        self.num_modes() == self.total
    }

    /// Column of signed index j: j = −1 is the negative eigenvalue closest to zero, j = 1 the positive one.
    pub fn position(&self, j: i64) -> Option<usize> {
        if j < 0 {
            let k = self.n_neg as i64 + j;
            (k >= 0).then_some(k as usize)
        } else if j > 0 {
            let k = self.n_neg + j as usize - 1;
            (k < self.num_modes()).then_some(k)
        } else {
            None
        }
    }

    /// Signed index of a column.
    pub fn index_of(&self, position: usize) -> i64 {
        if position < self.n_neg {
            position as i64 - self.n_neg as i64
        } else {
            (position - self.n_neg) as i64 + 1
        }
    }

    pub fn eigenvalue(&self, j: i64) -> Option<f64> {
        self.position(j).map(|k| self.eigenvalues[k])
    }

    pub fn mode(&self, j: i64) -> Option<Vec<C64>> {
        self.position(j).map(|k| (0..self.vectors.nrows()).map(|i| self.vectors[(i, k)]).collect())
    }

    /// Eigenvalue with signed index nearest to `x`, as (index, eigenvalue).
    pub fn nearest(&self, x: f64) -> (i64, f64) {
        let k = (0..self.num_modes())
            .min_by(|&a, &b| (self.eigenvalues[a] - x).abs().total_cmp(&(self.eigenvalues[b] - x).abs()))
            .expect("basis has at least one mode");
        (self.index_of(k), self.eigenvalues[k])
    }

    fn require_complete(&self) -> Result<()> {
        if self.is_complete() {
            Ok(())
        } else {
            Err(Error::TruncatedBasis { kept: self.num_modes(), total: self.total })
        }
    }

    /// `∫ e^f |ψ|² dv_g` with lumped quadrature.
    pub fn weighted_norm_sq(&self, x: &[C64]) -> f64 {
        x.iter().zip(&self.b).map(|(v, b)| b * v.norm_sqr()).sum()
    }

    /// Expansion coefficients `a = Φᴴ B_f x`.
    pub fn coefficients(&self, x: &[C64]) -> Vec<C64> {
        let bx: Vec<C64> = x.iter().zip(&self.b).map(|(v, b)| v * *b).collect();
        matvec_adjoint(self.vectors.as_ref(), &bx)
    }

    /// `Φ a`.
    pub fn synthesize(&self, a: &[C64]) -> Vec<C64> {
        matvec(self.vectors.as_ref(), a)
    }

    /// (ψ⁺, ψ⁻) with ψ = ψ⁺ + ψ⁻.
    pub fn split(&self, x: &[C64]) -> Result<(Vec<C64>, Vec<C64>)> {
        self.require_complete()?;
        let a = self.coefficients(x);
        let mut plus = a.clone();
        let mut minus = a;
        plus[..self.n_neg].iter_mut().for_each(|v| *v = CZERO);
        minus[self.n_neg..].iter_mut().for_each(|v| *v = CZERO);
        Ok((self.synthesize(&plus), self.synthesize(&minus)))
    }

    /// `Σ_j |λ_j| |a_j|²`, the squared fractional norm.
    pub fn frac_half_norm(&self, x: &[C64]) -> Result<f64> {
        self.require_complete()?;
        Ok(self.coefficients(x).iter().zip(&self.eigenvalues).map(|(a, l)| l.abs() * a.norm_sqr()).sum())
    }

    /// `max |Φᴴ B_f Φ − I|` over all entries.
    pub fn orthonormality_defect(&self) -> f64 {
        let n = self.vectors.nrows();
        let bphi = Mat::from_fn(n, self.num_modes(), |i, j| self.vectors[(i, j)] * self.b[i]);
        let g = matmul_new(self.vectors.adjoint(), bphi.as_ref());
        let mut worst = 0.0f64;
        for j in 0..g.ncols() {
            for i in 0..g.nrows() {
                let e = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((g[(i, j)] - e).norm());
            }
        }
        worst
    }
}
