//! The coupled functional
//!
//! `E_ρ(u, ψ) = I(u) + J(u, ψ)`, `J = 2(ψᴴAψ − ρ Σ_d e^{u_v} M_d |ψ_d|²)`,
//!
//! its Nehari constraint `G = Φ₋ᴴ(A − ρW_u)ψ = 0`, and the saddle searches built on it.
//! `I` is the normalized Liouville energy and `Φ` the weighted eigenbasis for the
//! weight `f` solving the scalar problem, so `(f, 0)` is always critical.
//!
//! Spinors are constrained dof vectors; `W_u = diag(e^{u_v} M_d)` and `B_f = W_f`.

mod linking;
mod mountain;
mod newton;

pub use linking::{linking_constants, linking_search, LinkingConstants, LinkingOptions, LinkingOutcome, SeedReport};
pub use mountain::{mountain_pass_endpoint, mountain_pass_search, MountainPassOptions, MountainPassOutcome};
pub use newton::{newton_refine, Basin, NewtonOutcome};

use std::cell::OnceCell;

use faer::Mat;

use crate::error::{Error, Result};
use crate::linalg::{dot, hermitian_eigen, matmul_new, matvec, matvec_adjoint, pcg, C64, CZERO};
use crate::liouville::LiouvilleProblem;
use crate::spectral::SpectralBasis;
use crate::spinor::DiracOperator;

/// Distance to the weighted spectrum below which ρ counts as resonant.
pub const RESONANCE_WINDOW: f64 = 1e-6;

/// Weighted spinor norm below which a state counts as trivial.
pub const NONTRIVIAL_THRESHOLD: f64 = 1e-3;

/// Where ρ sits relative to the positive weighted spectrum.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SpectralWindow {
    /// `0 < ρ < λ₁`.
    BelowFirst,
    /// `λ_k < ρ < λ_{k+1}`.
    Between(usize),
    /// ρ beyond the computed spectrum.
    AboveAll,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Energies {
    pub total: f64,
    pub scalar: f64,
    pub spinor: f64,
}

/// Covectors of dE: `δE = u·δu + Re(psiᴴ δψ)`.
#[derive(Clone, Debug)]
pub struct Gradient {
    pub u: Vec<f64>,
    pub psi: Vec<C64>,
}

#[derive(Clone, Debug)]
pub struct CoupledState {
    pub u: Vec<f64>,
    pub psi: Vec<C64>,
    pub rho: f64,
    pub energy: f64,
    pub scalar_energy: f64,
    pub spinor_energy: f64,
    /// H¹-dual norm of the scalar equation residual.
    pub scalar_residual: f64,
    /// `‖(A − ρW_u)ψ‖` in the lumped L²-dual norm.
    pub spinor_residual: f64,
    /// `‖ψ‖` in L²(e^f dv_g).
    pub spinor_norm: f64,
}

impl CoupledState {
    /// Joint residual of the discrete Euler-Lagrange system.
    pub fn el_residual(&self) -> f64 {
        self.scalar_residual.hypot(self.spinor_residual)
    }

    pub fn is_nontrivial(&self) -> bool {
        self.spinor_norm >= NONTRIVIAL_THRESHOLD
    }
}

#[derive(Clone, Debug)]
pub struct NehariResidual {
    /// `G_j` for j = −n₋, …, −1 in column order of the basis.
    pub values: Vec<C64>,
    pub sup_norm: f64,
}

#[derive(Clone, Debug)]
pub struct MultiplierFit {
    /// Complex multiplier per negative mode: `μ_j = μ_j^{Re G} + i μ_j^{Im G}`.
    pub mu: Vec<C64>,
    pub max_abs: f64,
    /// Relative weighted residual of the fit.
    pub residual: f64,
    /// `‖Σ μ_j φ_j‖` in H^{1/2}.
    pub aux_norm: f64,
    pub iterations: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct PsRecord {
    pub energy: f64,
    /// Norm of the reduced gradient along the constraint.
    pub gradient_norm: f64,
    pub max_multiplier: Option<f64>,
    pub aux_norm: Option<f64>,
    pub u_norm: f64,
    pub psi_norm: f64,
}

#[derive(Clone, Debug)]
pub struct PsDiagnostics {
    pub records: Vec<PsRecord>,
    /// Largest `‖u‖_{H¹} + ‖ψ‖_{H^{1/2}}` along the run.
    pub norm_bound: f64,
}

/// Coupled problem on a fixed mesh, metric, weight and ρ.
pub struct CoupledSystem<'a> {
    problem: &'a LiouvilleProblem,
    dirac: &'a DiracOperator,
    basis: &'a SpectralBasis,
    rho: f64,
    i_f: f64,
    dense: OnceCell<Mat<C64>>,
}

/// Everything the searches need at a point of the Nehari manifold.
#[derive(Clone, Debug)]
pub(crate) struct Reduced {
    pub u: Vec<f64>,
    /// Full coefficient vector, negative modes first.
    pub a: Vec<C64>,
    pub psi: Vec<C64>,
    pub energy: f64,
    /// Scalar covector 2F_u.
    pub cov_u: Vec<f64>,
    /// `4 Φ₊ᴴ(A − ρW_u)ψ`.
    pub cov_plus: Vec<C64>,
}

impl<'a> CoupledSystem<'a> {
    pub fn new(problem: &'a LiouvilleProblem, dirac: &'a DiracOperator, basis: &'a SpectralBasis, rho: f64) -> Result<Self> {
        if !problem.is_normalized() {
            return Err(Error::Input("the coupled functional is posed on the normalized metric".into()));
        }
        if !(rho.is_finite() && rho > 0.0) {
            return Err(Error::Input(format!("rho must be positive and finite, got {rho}")));
        }
        if basis.weight().len() != problem.num_vertices() || dirac.dofs().num_vertices() != problem.num_vertices() {
            return Err(Error::Input("Liouville problem, Dirac operator and basis live on different meshes".into()));
        }
        if basis.b_weights().len() != dirac.num_dofs() {
            return Err(Error::Input("basis and Dirac operator have different dof counts".into()));
        }
        if !basis.is_complete() {
            return Err(Error::TruncatedBasis { kept: basis.num_modes(), total: dirac.num_dofs() });
        }
        let i_f = problem.energy(basis.weight())?;
        Ok(CoupledSystem { problem, dirac, basis, rho, i_f, dense: OnceCell::new() })
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn f(&self) -> &[f64] {
        self.basis.weight()
    }

    pub fn problem(&self) -> &LiouvilleProblem {
        self.problem
    }

    pub fn dirac(&self) -> &DiracOperator {
        self.dirac
    }

    pub fn basis(&self) -> &SpectralBasis {
        self.basis
    }

    /// `I(f) = E_ρ(f, 0)`.
    pub fn trivial_energy(&self) -> f64 {
        self.i_f
    }

    pub fn num_vertices(&self) -> usize {
        self.problem.num_vertices()
    }

    pub fn num_dofs(&self) -> usize {
        self.dirac.num_dofs()
    }

    pub fn window(&self) -> SpectralWindow {
        let b = self.basis;
        let np = b.num_positive();
        let k = (1..=np as i64).take_while(|&j| b.eigenvalue(j).unwrap() < self.rho).count();
        if k == 0 {
            SpectralWindow::BelowFirst
        } else if k == np {
            SpectralWindow::AboveAll
        } else {
            SpectralWindow::Between(k)
        }
    }

    /// Rejects ρ within [`RESONANCE_WINDOW`] of a weighted eigenvalue.
    pub fn check_nonresonant(&self) -> Result<()> {
        let (index, eigenvalue) = self.basis.nearest(self.rho);
        let distance = (eigenvalue - self.rho).abs();
        if distance <= RESONANCE_WINDOW {
            return Err(Error::Resonant { rho: self.rho, eigenvalue, index, distance });
        }
        Ok(())
    }

    fn check(&self, u: &[f64], psi: &[C64]) -> Result<()> {
        if u.len() != self.num_vertices() || psi.len() != self.num_dofs() {
            return Err(Error::Input(format!(
                "state has {} scalar and {} spinor values, expected {} and {}",
                u.len(),
                psi.len(),
                self.num_vertices(),
                self.num_dofs()
            )));
        }
        if u.iter().any(|v| !v.is_finite()) || psi.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("state is not finite".into()));
        }
        Ok(())
    }

    /// `w_d = e^{u_v} M_d`.
    pub(crate) fn spinor_weights(&self, u: &[f64]) -> Vec<f64> {
        let dofs = self.dirac.dofs();
        self.dirac.mass().iter().enumerate().map(|(d, m)| u[dofs.vertex_of(d)].exp() * m).collect()
    }

    /// Per-vertex `Σ_{d at v} M_d |ψ_d|²`.
    pub(crate) fn vertex_density(&self, psi: &[C64]) -> Vec<f64> {
        let dofs = self.dirac.dofs();
        let mut q = vec![0.0; self.num_vertices()];
        for (d, (p, m)) in psi.iter().zip(self.dirac.mass()).enumerate() {
            q[dofs.vertex_of(d)] += m * p.norm_sqr();
        }
        q
    }

    /// Dense A, built once.
    pub(crate) fn dense_operator(&self) -> &Mat<C64> {
        self.dense.get_or_init(|| self.dirac.to_dense())
    }

    fn apply_a(&self, psi: &[C64]) -> Vec<C64> {
        match self.dense.get() {
            Some(a) => matvec(a.as_ref(), psi),
            None => self.dirac.apply(psi),
        }
    }

    pub fn energy(&self, u: &[f64], psi: &[C64]) -> Result<Energies> {
        self.check(u, psi)?;
        let scalar = self.problem.energy(u)?;
        let ap = self.apply_a(psi);
        let w = self.spinor_weights(u);
        let wn: f64 = psi.iter().zip(&w).map(|(p, w)| w * p.norm_sqr()).sum();
        let spinor = 2.0 * (dot(psi, &ap).re - self.rho * wn);
        Ok(Energies { total: scalar + spinor, scalar, spinor })
    }

    /// Half the scalar covector, `F_u = S u − m^g(h e^{2u} + 1 + ρ e^u |ψ|²) − ℓ^g λ e^u`.
    pub(crate) fn scalar_equation(&self, u: &[f64], psi: &[C64]) -> Result<Vec<f64>> {
        let mut r = self.problem.residual(u)?;
        let q = self.vertex_density(psi);
        for v in 0..r.len() {
            r[v] -= self.rho * u[v].exp() * q[v];
        }
        Ok(r)
    }

    /// `(A − ρW_u)ψ`.
    pub(crate) fn spinor_equation(&self, u: &[f64], psi: &[C64]) -> Vec<C64> {
        let mut r = self.apply_a(psi);
        let w = self.spinor_weights(u);
        for d in 0..r.len() {
            r[d] -= psi[d] * (self.rho * w[d]);
        }
        r
    }

    pub fn gradient(&self, u: &[f64], psi: &[C64]) -> Result<Gradient> {
        self.check(u, psi)?;
        let gu = self.scalar_equation(u, psi)?.into_iter().map(|v| 2.0 * v).collect();
        let gp = self.spinor_equation(u, psi).into_iter().map(|v| v * 4.0).collect();
        Ok(Gradient { u: gu, psi: gp })
    }

    /// Riesz representatives of the gradient in H¹ and in L²(e^f dv_g).
    pub fn gradient_riesz(&self, g: &Gradient) -> Result<(Vec<f64>, Vec<C64>)> {
        let ru = self.problem.ops().h1_riesz(&g.u)?;
        let rp = g.psi.iter().zip(self.basis.b_weights()).map(|(p, b)| p / *b).collect();
        Ok((ru, rp))
    }

    pub fn state(&self, u: Vec<f64>, psi: Vec<C64>) -> Result<CoupledState> {
        self.check(&u, &psi)?;
        let e = self.energy(&u, &psi)?;
        let fu = self.scalar_equation(&u, &psi)?;
        let scalar_residual = self.problem.ops().h1_dual_norm(&fu)?;
        let r = self.spinor_equation(&u, &psi);
        let spinor_residual = r.iter().zip(self.dirac.mass()).map(|(r, m)| r.norm_sqr() / m).sum::<f64>().sqrt();
        let spinor_norm = self.basis.weighted_norm_sq(&psi).sqrt();
        Ok(CoupledState {
            u,
            psi,
            rho: self.rho,
            energy: e.total,
            scalar_energy: e.scalar,
            spinor_energy: e.spinor,
            scalar_residual,
            spinor_residual,
            spinor_norm,
        })
    }

    pub fn trivial_state(&self) -> Result<CoupledState> {
        self.state(self.f().to_vec(), vec![CZERO; self.num_dofs()])
    }

    /// `G_j = Φ_jᴴ (A − ρW_u) ψ` for every negative mode.
    pub fn nehari_residual(&self, u: &[f64], psi: &[C64]) -> Result<NehariResidual> {
        self.check(u, psi)?;
        let r = self.spinor_equation(u, psi);
        let neg = self.basis.vectors().subcols(0, self.basis.num_negative());
        let values = matvec_adjoint(neg, &r);
        let sup_norm = values.iter().fold(0.0f64, |a, v| a.max(v.norm()));
        Ok(NehariResidual { values, sup_norm })
    }

    /// Negative coefficients `a₋` solving `(|Λ₋| + ρK₋₋) a₋ = −ρ K₋₊ a₊`, `K = Φᴴ W_u Φ`.
    pub(crate) fn negative_coefficients(&self, u: &[f64], a_plus: &[C64], warm: Option<&[C64]>) -> Result<Vec<C64>> {
        let b = self.basis;
        let nn = b.num_negative();
        let phi = b.vectors();
        let neg = phi.subcols(0, nn);
        let pos = phi.subcols(nn, b.num_positive());
        let w = self.spinor_weights(u);
        let wp: Vec<C64> = matvec(pos, a_plus).iter().zip(&w).map(|(p, w)| p * *w).collect();
        let rhs: Vec<C64> = matvec_adjoint(neg, &wp).into_iter().map(|v| v * (-self.rho)).collect();
        let lam = &b.eigenvalues()[..nn];
        let inv_diag: Vec<f64> = (0..nn)
            .map(|j| {
                let kjj: f64 = (0..phi.nrows()).map(|i| w[i] * phi[(i, j)].norm_sqr()).sum();
                1.0 / (lam[j].abs() + self.rho * kjj)
            })
            .collect();
        let mut x = match warm {
            Some(x0) if x0.len() == nn => x0.to_vec(),
            _ => vec![CZERO; nn],
        };
        pcg(
            |v: &[C64], out: &mut [C64]| {
                let wy: Vec<C64> = matvec(neg, v).iter().zip(&w).map(|(p, w)| p * *w).collect();
                let k = matvec_adjoint(neg, &wy);
                for j in 0..nn {
                    out[j] = v[j] * lam[j].abs() + k[j] * self.rho;
                }
            },
            &inv_diag,
            &rhs,
            &mut x,
            1e-14,
            4 * nn + 200,
        )?;
        Ok(x)
    }

    /// Completes positive coefficients to a point of the Nehari manifold over `u`.
    pub fn project_to_nehari(&self, u: &[f64], a_plus: &[C64]) -> Result<Vec<C64>> {
        if u.len() != self.num_vertices() || a_plus.len() != self.basis.num_positive() {
            return Err(Error::Input("projection needs a scalar field and one coefficient per positive mode".into()));
        }
        let a_minus = self.negative_coefficients(u, a_plus, None)?;
        Ok(self.synthesize(&a_minus, a_plus))
    }

    pub(crate) fn synthesize(&self, a_minus: &[C64], a_plus: &[C64]) -> Vec<C64> {
        let a: Vec<C64> = a_minus.iter().chain(a_plus).copied().collect();
        self.basis.synthesize(&a)
    }

    /// Evaluates the reduced functional at `(u, a₊)`, projecting onto the constraint.
    pub(crate) fn reduced(&self, u: &[f64], a_plus: &[C64], warm: Option<&[C64]>) -> Result<Reduced> {
        let b = self.basis;
        let nn = b.num_negative();
        let a_minus = self.negative_coefficients(u, a_plus, warm)?;
        let a: Vec<C64> = a_minus.iter().chain(a_plus).copied().collect();
        let psi = b.synthesize(&a);
        let w = self.spinor_weights(u);
        let wpsi: Vec<C64> = psi.iter().zip(&w).map(|(p, w)| p * *w).collect();
        let ka = matvec_adjoint(b.vectors(), &wpsi);
        let lam = b.eigenvalues();
        let quad: f64 = a.iter().zip(lam).map(|(a, l)| l * a.norm_sqr()).sum();
        let wn: f64 = psi.iter().zip(&w).map(|(p, w)| w * p.norm_sqr()).sum();
        let energy = self.problem.energy(u)? + 2.0 * (quad - self.rho * wn);
        let cov_u = self.scalar_equation(u, &psi)?.into_iter().map(|v| 2.0 * v).collect();
        let cov_plus = (nn..a.len()).map(|k| (a[k] * lam[k] - ka[k] * self.rho) * 4.0).collect();
        Ok(Reduced { u: u.to_vec(), a, psi, energy, cov_u, cov_plus })
    }

    /// Norm of the reduced gradient: H¹-dual in u, H^{-1/2} in the positive coefficients.
    pub(crate) fn reduced_gradient_norm(&self, r: &Reduced) -> Result<f64> {
        let gu = self.problem.ops().h1_dual_norm(&r.cov_u)?;
        let nn = self.basis.num_negative();
        let gp: f64 = r.cov_plus.iter().zip(&self.basis.eigenvalues()[nn..]).map(|(c, l)| c.norm_sqr() / l).sum();
        Ok(gu.hypot(gp.sqrt()))
    }

    /// `‖ψ⁻‖ / (ρ ‖ψ⁺‖)` in H^{1/2} after projecting `(u, a₊)` onto the constraint.
    pub fn negative_part_ratio(&self, u: &[f64], a_plus: &[C64]) -> Result<f64> {
        let a_minus = self.negative_coefficients(u, a_plus, None)?;
        let b = self.basis;
        let nn = b.num_negative();
        let lam = b.eigenvalues();
        let neg: f64 = a_minus.iter().zip(&lam[..nn]).map(|(a, l)| l.abs() * a.norm_sqr()).sum();
        let pos: f64 = a_plus.iter().zip(&lam[nn..]).map(|(a, l)| l * a.norm_sqr()).sum();
        if pos == 0.0 {
            return Err(Error::Input("positive part is zero".into()));
        }
        Ok((neg / pos).sqrt() / self.rho)
    }

    /// Largest `‖ψ⁻‖ / (ρ‖ψ⁺‖)` over ψ⁺ in the span of the lowest `modes` positive modes,
    /// with u = f + δu for each perturbation; per δu this is an operator norm.
    pub fn negative_part_constant(&self, perturbations: &[Vec<f64>], modes: usize) -> Result<f64> {
        let b = self.basis;
        let nn = b.num_negative();
        let np = b.num_positive();
        let modes = modes.min(np);
        if modes == 0 {
            return Err(Error::Input("need at least one positive mode".into()));
        }
        let lam = b.eigenvalues();
        let mut worst = 0.0f64;
        for du in perturbations {
            if du.len() != self.num_vertices() {
                return Err(Error::Input("perturbation size does not match the mesh".into()));
            }
            let u: Vec<f64> = self.f().iter().zip(du).map(|(f, d)| f + d).collect();
            // Columns: H^{1/2}-scaled negative parts of unit H^{1/2} positive modes.
            let mut cols = Mat::<C64>::zeros(nn, modes);
            for j in 0..modes {
                let mut ap = vec![CZERO; np];
                ap[j] = C64::new(1.0 / lam[nn + j].sqrt(), 0.0);
                let am = self.negative_coefficients(&u, &ap, None)?;
                for (i, a) in am.iter().enumerate() {
                    cols[(i, j)] = a * lam[i].abs().sqrt();
                }
            }
            let gram = matmul_new(cols.as_ref().adjoint(), cols.as_ref());
            let (vals, _) = hermitian_eigen(gram.as_ref())?;
            worst = worst.max(vals.last().copied().unwrap_or(0.0).max(0.0).sqrt());
        }
        Ok(worst / self.rho)
    }

    /// Least-squares multipliers for the gradient of E at `(u, ψ)`.
    pub fn multipliers(&self, u: &[f64], psi: &[C64]) -> Result<MultiplierFit> {
        let g = self.gradient(u, psi)?;
        self.fit_multipliers(u, psi, &g)
    }

    /// Fits `g ≈ Σ_j μ_j^R d(Re G_j) + μ_j^I d(Im G_j)` in the lumped dual norms.
    pub fn fit_multipliers(&self, u: &[f64], psi: &[C64], g: &Gradient) -> Result<MultiplierFit> {
        self.check(u, psi)?;
        if g.u.len() != u.len() || g.psi.len() != psi.len() {
            return Err(Error::Input("covector sizes do not match the state".into()));
        }
        let b = self.basis;
        let nn = b.num_negative();
        let neg = b.vectors().subcols(0, nn);
        let lam: Vec<f64> = b.eigenvalues()[..nn].to_vec();
        let dofs = self.dirac.dofs();
        let m = self.problem.ops().lumped_mass();
        let mass = self.dirac.mass();
        let bw = b.b_weights();
        let w = self.spinor_weights(u);
        let rho = self.rho;
        // Column scaling so that all columns have comparable norm.
        let scale: Vec<f64> = lam.iter().map(|l| 1.0 / (l.abs() + rho)).collect();

        let forward = |nu: &[C64]| -> (Vec<f64>, Vec<C64>) {
            let mu: Vec<C64> = nu.iter().zip(&scale).map(|(v, s)| v * *s).collect();
            let y = matvec(neg, &mu);
            let lm: Vec<C64> = mu.iter().zip(&lam).map(|(v, l)| v * *l).collect();
            let z = matvec(neg, &lm);
            let mut pu = vec![0.0; u.len()];
            let mut pp = vec![CZERO; psi.len()];
            for d in 0..psi.len() {
                let v = dofs.vertex_of(d);
                pu[v] -= rho * u[v].exp() * mass[d] * (y[d].conj() * psi[d]).re;
                pp[d] = z[d] * bw[d] - y[d] * (rho * w[d]);
            }
            (pu, pp)
        };
        let adjoint = |pu: &[f64], pp: &[C64]| -> Vec<C64> {
            let mut z1 = vec![CZERO; psi.len()];
            let mut z2 = vec![CZERO; psi.len()];
            for d in 0..psi.len() {
                let v = dofs.vertex_of(d);
                z1[d] = pp[d] * (bw[d] / mass[d]);
                z2[d] = pp[d] * (-rho * w[d] / mass[d]) - psi[d] * (rho * u[v].exp() * mass[d] * pu[v] / m[v]);
            }
            let t1 = matvec_adjoint(neg, &z1);
            let t2 = matvec_adjoint(neg, &z2);
            (0..nn).map(|j| (t1[j] * lam[j] + t2[j]) * scale[j]).collect()
        };
        let norm_sq = |pu: &[f64], pp: &[C64]| -> f64 {
            pu.iter().zip(m).map(|(a, m)| a * a / m).sum::<f64>()
                + pp.iter().zip(mass).map(|(a, m)| a.norm_sqr() / m).sum::<f64>()
        };

        // CGLS on the scaled unknowns.
        let rhs_norm = norm_sq(&g.u, &g.psi).sqrt();
        let mut nu = vec![CZERO; nn];
        let mut iterations = 0;
        if rhs_norm > 0.0 {
            let mut ru = g.u.clone();
            let mut rp = g.psi.clone();
            let mut s = adjoint(&ru, &rp);
            let mut p = s.clone();
            let s0: f64 = s.iter().map(|v| v.norm_sqr()).sum();
            let mut gamma = s0;
            let max_iter = 2 * nn + 100;
            while iterations < max_iter && gamma > 1e-28 * s0 {
                let (qu, qp) = forward(&p);
                let qq = norm_sq(&qu, &qp);
                if !(qq > 0.0) {
                    break;
                }
                let alpha = gamma / qq;
                for j in 0..nn {
                    nu[j] += p[j] * alpha;
                }
                for (r, q) in ru.iter_mut().zip(&qu) {
                    *r -= alpha * q;
                }
                for (r, q) in rp.iter_mut().zip(&qp) {
                    *r -= q * alpha;
                }
                s = adjoint(&ru, &rp);
                let gnew: f64 = s.iter().map(|v| v.norm_sqr()).sum();
                let beta = gnew / gamma;
                gamma = gnew;
                for j in 0..nn {
                    p[j] = s[j] + p[j] * beta;
                }
                iterations += 1;
            }
            if gamma > 1e-16 * s0 {
                return Err(Error::solver(
                    "multiplier fit did not converge; constraint gradients are numerically rank deficient",
                    vec![format!("normal-equation residual ratio {:e} after {iterations} iterations", (gamma / s0).sqrt())],
                ));
            }
        }
        let mu: Vec<C64> = nu.iter().zip(&scale).map(|(v, s)| v * *s).collect();
        let (fu, fp) = forward(&nu);
        let ru: Vec<f64> = g.u.iter().zip(&fu).map(|(a, b)| a - b).collect();
        let rp: Vec<C64> = g.psi.iter().zip(&fp).map(|(a, b)| a - b).collect();
        let residual = if rhs_norm > 0.0 { norm_sq(&ru, &rp).sqrt() / rhs_norm } else { 0.0 };
        let max_abs = mu.iter().fold(0.0f64, |a, v| a.max(v.norm()));
        let aux_norm = mu.iter().zip(&lam).map(|(v, l)| l.abs() * v.norm_sqr()).sum::<f64>().sqrt();
        Ok(MultiplierFit { mu, max_abs, residual, aux_norm, iterations })
    }

    /// `‖u‖_{H¹}` and `‖ψ‖_{H^{1/2}}`.
    pub fn state_norms(&self, u: &[f64], psi: &[C64]) -> Result<(f64, f64)> {
        Ok((self.problem.ops().h1_norm(u), self.basis.frac_half_norm(psi)?.sqrt()))
    }
}

/// Energy, reduced gradient, norms and optionally multipliers along a sequence of states
/// on the Nehari manifold.
pub fn ps_diagnostics(system: &CoupledSystem<'_>, iterates: &[CoupledState], with_multipliers: bool) -> Result<PsDiagnostics> {
    if iterates.len() < 2 {
        return Err(Error::Input(format!("need at least two iterates, got {}", iterates.len())));
    }
    let nn = system.basis.num_negative();
    let mut records = Vec::with_capacity(iterates.len());
    let mut norm_bound = 0.0f64;
    for s in iterates {
        let a = system.basis.coefficients(&s.psi);
        let red = system.reduced(&s.u, &a[nn..], Some(&a[..nn]))?;
        let gradient_norm = system.reduced_gradient_norm(&red)?;
        let (un, pn) = system.state_norms(&s.u, &s.psi)?;
        let (max_multiplier, aux_norm) = if with_multipliers {
            let fit = system.multipliers(&s.u, &s.psi)?;
            (Some(fit.max_abs), Some(fit.aux_norm))
        } else {
            (None, None)
        };
        norm_bound = norm_bound.max(un + pn);
        records.push(PsRecord { energy: s.energy, gradient_norm, max_multiplier, aux_norm, u_norm: un, psi_norm: pn });
    }
    Ok(PsDiagnostics { records, norm_bound })
}

#[cfg(test)]
pub(crate) mod tests;
