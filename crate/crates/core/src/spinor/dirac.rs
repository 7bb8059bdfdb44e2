//! Discrete Dirac operator under the chirality boundary condition.
//!
//! Piecewise-linear Galerkin discretizations of a first-order operator carry
//! spurious modes, so the spectrum is taken from the square instead: the form
//! `Q(ψ, ψ) = ∫|D_g ψ|² dv_g` is H¹-conforming and is diagonalized against the
//! lumped spinor mass. On each cluster of eigenvalues μ of Q the Galerkin form
//! of D picks the signs, giving eigenvalues `±√μ`. The operator is then
//! `A = M W Λ Wᴴ M` with M-orthonormal modes W, Hermitian by construction.
//!
//! With `ψ̂ = e^{φ/2}ψ`, `D_g ψ = e^{−φ}(Dψ + ½ c(∇φ) ψ)` where D is the flat operator,
//! so both forms only need the flat hat gradients and the elementwise ∇φ.

use faer::Mat;
use nalgebra::Matrix2;

use super::{ChiralitySign, CliffordFrame, SpinorDofs, SpinorField};
use crate::error::{Error, Result};
use crate::geometry::{ConformalFactor, TriMesh};
use crate::linalg::{hermitian_eigen, matmul_new, CsrMatrix, C64, CZERO};

/// Relative width of an eigenvalue cluster of √Q.
const CLUSTER_RTOL: f64 = 0.03;
/// A Ritz value of the Galerkin operator smaller than this fraction of √μ is
/// considered sign-ambiguous, and its cluster is merged with the next one.
const SIGN_AMBIGUITY: f64 = 0.5;
const MAX_CLUSTER: usize = 256;

#[derive(Clone, Debug)]
pub struct DiracOperator {
    frame: CliffordFrame,
    dofs: SpinorDofs,
    phi: Vec<f64>,
    mass: Vec<f64>,
    galerkin: CsrMatrix<C64>,
    squared: CsrMatrix<C64>,
    presym_defect: f64,
    eigenvalues: Vec<f64>,
    modes: Mat<C64>,
}

struct Element {
    vertices: [usize; 3],
    area: f64,
    b: [Matrix2<C64>; 3],
    /// ½ c(∇φ).
    g: Matrix2<C64>,
}

fn elements<'a>(mesh: &'a TriMesh, frame: &'a CliffordFrame, phi: &'a [f64]) -> impl Iterator<Item = Element> + 'a {
    mesh.triangles().iter().enumerate().map(move |(t, tri)| {
        let grads = mesh.hat_gradients(t);
        let mut dphi = [0.0; 2];
        for k in 0..3 {
            dphi[0] += phi[tri[k]] * grads[k][0];
            dphi[1] += phi[tri[k]] * grads[k][1];
        }
        Element {
            vertices: *tri,
            area: mesh.triangle_area(t),
            b: [frame.clifford_matrix(grads[0]), frame.clifford_matrix(grads[1]), frame.clifford_matrix(grads[2])],
            g: frame.clifford_matrix(dphi) * C64::from(0.5),
        }
    })
}

/// Pushes `E_iᴴ X E_j` for the local admissible bases of vertices i and j.
fn push_block(dofs: &SpinorDofs, out: &mut Vec<(usize, usize, C64)>, vi: usize, vj: usize, x: &Matrix2<C64>) {
    for (r, er) in dofs.local(vi) {
        for (c, ec) in dofs.local(vj) {
            let mut s = CZERO;
            for a in 0..2 {
                for b in 0..2 {
                    s += er[a].conj() * x[(a, b)] * ec[b];
                }
            }
            out.push((r, c, s));
        }
    }
}

pub fn assemble_dirac(mesh: &TriMesh, phi: &ConformalFactor, sign: ChiralitySign) -> Result<DiracOperator> {
    phi.check_len(mesh)?;
    let frame = CliffordFrame::default();
    let dofs = SpinorDofs::new(mesh, &frame, sign)?;
    let p = phi.values();
    let n = dofs.num_dofs();
    let mut at = Vec::new();
    let mut qt = Vec::new();
    for el in elements(mesh, &frame, p) {
        let a = el.area;
        if !(a > 0.0 && a.is_finite()) {
            return Err(Error::Assembly(format!("degenerate element with area {a}")));
        }
        let gg = el.g.adjoint() * el.g;
        for i in 0..3 {
            let (vi, bi) = (el.vertices[i], el.b[i]);
            let bih = bi.adjoint();
            for j in 0..3 {
                let vj = el.vertices[j];
                let bj = el.b[j];
                // Vertex quadrature at the test node of ∫ e^{φ} ⟨Dψ + ½c(∇φ)ψ, χ⟩ dx.
                let mut blk = bj;
                if i == j {
                    blk += el.g;
                }
                push_block(&dofs, &mut at, vi, vj, &(blk * C64::from(a / 3.0 * p[vi].exp())));
                // ∫ |Dψ + ½c(∇φ)ψ|² dx integrated exactly for P1 ψ.
                let nn = if i == j { a / 6.0 } else { a / 12.0 };
                let q = bih * bj * C64::from(a) + (bih * el.g + el.g.adjoint() * bj) * C64::from(a / 3.0) + gg * C64::from(nn);
                push_block(&dofs, &mut qt, vi, vj, &q);
            }
        }
    }
    let galerkin = CsrMatrix::from_triplets(n, n, at);
    let squared = CsrMatrix::from_triplets(n, n, qt).hermitian_part();
    let presym_defect = galerkin.hermitian_defect();
    let mass_v: Vec<f64> = mesh.lumped_areas().iter().zip(p).map(|(m, f)| m * (2.0 * f).exp()).collect();
    let mass = dofs.expand_weights(&mass_v);
    let (eigenvalues, modes) = signed_root(&galerkin.hermitian_part(), &squared, &mass)?;
    Ok(DiracOperator { frame, dofs, phi: p.to_vec(), mass, galerkin, squared, presym_defect, eigenvalues, modes })
}

/// Signed square roots of the eigenvalues of Q against the diagonal mass M.
fn signed_root(a: &CsrMatrix<C64>, q: &CsrMatrix<C64>, mass: &[f64]) -> Result<(Vec<f64>, Mat<C64>)> {
    let n = mass.len();
    let isq: Vec<f64> = mass.iter().map(|m| 1.0 / m.sqrt()).collect();
    let mut qs = Mat::<C64>::zeros(n, n);
    for i in 0..n {
        for (j, v) in q.row(i) {
            qs[(i, j)] = v * (isq[i] * isq[j]);
        }
    }
    let (mu, u) = hermitian_eigen(qs.as_ref())?;
    drop(qs);
    if mu[0] <= 0.0 {
        return Err(Error::Eigen(format!("squared Dirac form is not positive definite (smallest eigenvalue {:e})", mu[0])));
    }
    let mut w = u;
    for j in 0..n {
        for i in 0..n {
            w[(i, j)] *= isq[i];
        }
    }
    let root: Vec<f64> = mu.iter().map(|m| m.sqrt()).collect();
    let mut lam = vec![0.0; n];
    let mut out = Mat::<C64>::zeros(n, n);
    let mut start = 0;
    while start < n {
        let cluster_end = |s: usize| {
            let mut e = s + 1;
            while e < n && root[e] - root[s] <= CLUSTER_RTOL * root[s] {
                e += 1;
            }
            e
        };
        let mut end = cluster_end(start);
        loop {
            let v = w.subrows(0, n).subcols(start, end - start);
            let av = apply_sparse(a, v);
            let t = matmul_new(v.adjoint(), av.as_ref());
            let (theta, r) = hermitian_eigen(t.as_ref())?;
            let ambiguous = theta.iter().any(|th| th.abs() < SIGN_AMBIGUITY * root[start]);
            if ambiguous && end < n && end - start < MAX_CLUSTER {
                end = cluster_end(end);
                continue;
            }
            let rotated = matmul_new(v, r.as_ref());
            for k in 0..(end - start) {
                let q: f64 = (0..end - start).map(|l| r[(l, k)].norm_sqr() * mu[start + l]).sum();
                lam[start + k] = theta[k].signum() * q.sqrt();
                for i in 0..n {
                    out[(i, start + k)] = rotated[(i, k)];
                }
            }
            break;
        }
        start = end;
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| lam[i].total_cmp(&lam[j]).then(i.cmp(&j)));
    let sorted: Vec<f64> = order.iter().map(|&k| lam[k]).collect();
    let modes = Mat::from_fn(n, n, |i, j| out[(i, order[j])]);
    Ok((sorted, modes))
}

fn apply_sparse(a: &CsrMatrix<C64>, v: faer::MatRef<'_, C64>) -> Mat<C64> {
    let mut out = Mat::<C64>::zeros(a.nrows(), v.ncols());
    for c in 0..v.ncols() {
        for i in 0..a.nrows() {
            let mut s = CZERO;
            for (j, x) in a.row(i) {
                s += x * v[(j, c)];
            }
            out[(i, c)] = s;
        }
    }
    out
}

impl DiracOperator {
    pub fn frame(&self) -> &CliffordFrame {
        &self.frame
    }

    pub fn dofs(&self) -> &SpinorDofs {
        &self.dofs
    }

    pub fn sign(&self) -> ChiralitySign {
        self.dofs.sign()
    }

    pub fn num_dofs(&self) -> usize {
        self.mass.len()
    }

    pub fn phi(&self) -> &[f64] {
        &self.phi
    }

    /// Lumped spinor mass of dv_g per dof.
    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    /// Constrained Galerkin matrix of the Dirac form before symmetrization.
    pub fn galerkin(&self) -> &CsrMatrix<C64> {
        &self.galerkin
    }

    /// Constrained matrix of ∫|D_g ψ|² dv_g.
    pub fn squared(&self) -> &CsrMatrix<C64> {
        &self.squared
    }

    /// ‖A_h − A_hᴴ‖_F / ‖A_h‖_F of the Galerkin matrix.
    pub fn presymmetrization_defect(&self) -> f64 {
        self.presym_defect
    }

    /// Eigenvalues of `A x = λ M x`, ascending.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// M-orthonormal eigenvectors, one column per eigenvalue.
    pub fn modes(&self) -> faer::MatRef<'_, C64> {
        self.modes.as_ref()
    }

    /// Smallest |λ|; positive means no discrete harmonic spinor.
    pub fn min_abs_eigenvalue(&self) -> f64 {
        self.eigenvalues.iter().fold(f64::INFINITY, |a, b| a.min(b.abs()))
    }

    /// `A x = M W Λ Wᴴ M x`.
    pub fn apply(&self, x: &[C64]) -> Vec<C64> {
        let mx: Vec<C64> = x.iter().zip(&self.mass).map(|(v, m)| v * *m).collect();
        let mut c = crate::linalg::matvec_adjoint(self.modes.as_ref(), &mx);
        for (ci, l) in c.iter_mut().zip(&self.eigenvalues) {
            *ci *= *l;
        }
        let mut y = crate::linalg::matvec(self.modes.as_ref(), &c);
        for (yi, m) in y.iter_mut().zip(&self.mass) {
            *yi *= *m;
        }
        y
    }

    /// Dense Hermitian matrix A.
    pub fn to_dense(&self) -> Mat<C64> {
        let n = self.num_dofs();
        let mw = Mat::from_fn(n, n, |i, j| self.modes[(i, j)] * self.mass[i]);
        let scaled = Mat::from_fn(n, n, |i, j| mw[(i, j)] * self.eigenvalues[j]);
        let mut a = matmul_new(scaled.as_ref(), mw.adjoint());
        crate::linalg::symmetrize(&mut a);
        a
    }

    /// Lumped boundary pairing `∫_{∂M} ⟨n⃗·ψ, χ⟩ dσ_g` of two constrained spinors.
    pub fn boundary_pairing(&self, mesh: &TriMesh, x: &[C64], y: &[C64]) -> C64 {
        let psi = self.dofs.prolong(x);
        let chi = self.dofs.prolong(y);
        let mut s = CZERO;
        for li in 0..mesh.num_boundary_components() {
            for bv in mesh.boundary_data(li) {
                let v = bv.vertex;
                let np = self.frame.clifford_multiply(bv.normal, psi.values()[v]);
                let c = chi.values()[v];
                s += (np[0] * c[0].conj() + np[1] * c[1].conj()) * (bv.dual_length * self.phi[v].exp());
            }
        }
        s
    }
}

/// Lumped strong form `M_g^{-1} A_h ψ` of the Galerkin operator on unconstrained nodal spinors.
pub fn strong_dirac(mesh: &TriMesh, phi: &ConformalFactor, psi: &SpinorField) -> Result<SpinorField> {
    phi.check_len(mesh)?;
    if psi.len() != mesh.num_vertices() {
        return Err(Error::Input(format!("spinor has {} vertices, mesh has {}", psi.len(), mesh.num_vertices())));
    }
    let frame = CliffordFrame::default();
    let p = phi.values();
    let vals = psi.values();
    let mut out = vec![[CZERO; 2]; mesh.num_vertices()];
    for el in elements(mesh, &frame, p) {
        let mut dpsi = nalgebra::Vector2::new(CZERO, CZERO);
        for k in 0..3 {
            dpsi += el.b[k] * nalgebra::Vector2::new(vals[el.vertices[k]][0], vals[el.vertices[k]][1]);
        }
        for &v in &el.vertices {
            let local = dpsi + el.g * nalgebra::Vector2::new(vals[v][0], vals[v][1]);
            let w = C64::from(el.area / 3.0 * p[v].exp());
            out[v][0] += local[0] * w;
            out[v][1] += local[1] * w;
        }
    }
    for (v, o) in out.iter_mut().enumerate() {
        let m = mesh.lumped_areas()[v] * (2.0 * p[v]).exp();
        o[0] /= m;
        o[1] /= m;
    }
    SpinorField::new(out)
}

/// `‖D_{g̃}(e^{−δφ/2}ψ) − e^{−3δφ/2} D_g ψ‖_{L²(g̃)} / ‖ψ‖_{L²(g)}` with g̃ = e^{2δφ}g,
/// both sides evaluated by [`strong_dirac`].
pub fn covariance_defect(mesh: &TriMesh, phi: &ConformalFactor, dphi: &ConformalFactor, psi: &SpinorField) -> Result<f64> {
    let phi2 = phi.add(dphi);
    let lhs = strong_dirac(mesh, &phi2, &super::conformal_push(psi, dphi)?)?;
    let rhs = strong_dirac(mesh, phi, psi)?;
    let d = dphi.values();
    let diff: Vec<[C64; 2]> = lhs
        .values()
        .iter()
        .zip(rhs.values())
        .zip(d)
        .map(|((l, r), d)| {
            let s = (-1.5 * d).exp();
            [l[0] - r[0] * s, l[1] - r[1] * s]
        })
        .collect();
    let w_new: Vec<f64> = mesh.lumped_areas().iter().zip(phi2.values()).map(|(m, f)| m * (2.0 * f).exp()).collect();
    let w_old: Vec<f64> = mesh.lumped_areas().iter().zip(phi.values()).map(|(m, f)| m * (2.0 * f).exp()).collect();
    let num = SpinorField { values: diff }.weighted_norm_sq(&w_new).sqrt();
    Ok(num / psi.weighted_norm_sq(&w_old).sqrt())
}
