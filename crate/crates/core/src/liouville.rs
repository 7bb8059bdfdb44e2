//! The scalar Liouville Neumann problem and conformal normalization.
//!
//! All problems share the discrete energy
//!
//! `I(u) = uᵀSu − Σ m^g (h e^{2u} + 2 s u) − Σ ℓ^g (2 λ e^u + 2 σ u)`
//!
//! with `s = −K_g` and `σ = −k_g`. The normalized form has `s ≡ 1`, `σ ≡ 0`.
//! Under `h ≤ 0`, `λ ≤ 0`, not both zero, `I` is strictly convex.

use faer::{Mat, Side};

use crate::error::{Error, Result};
use crate::fem::{assemble_operators, FemOperators};
use crate::geometry::{gaussian_curvature, geodesic_curvature_all, ConformalFactor, TriMesh};
use crate::linalg::pcg;

/// Meshes up to this size also get a dense Cholesky factorization of the Hessian.
const DENSE_CERTIFICATE_LIMIT: usize = 2500;

#[derive(Clone, Debug)]
pub struct LiouvilleProblem {
    ops: FemOperators,
    h: Vec<f64>,
    lambda: Vec<f64>,
    source: Vec<f64>,
    boundary_source: Vec<f64>,
    normalized: bool,
}

/// Evidence that the Newton Hessian is positive definite at the solution.
#[derive(Clone, Copy, Debug)]
pub struct PdCertificate {
    /// Smallest eigenvalue of `S + diag(−2h m^g e^{2f} − λ ℓ^g e^f)` by inverse iteration.
    pub min_eigenvalue: f64,
    /// Dense Cholesky outcome, `None` above the dense size limit.
    pub cholesky: Option<bool>,
}

#[derive(Clone, Debug)]
pub struct LiouvilleSolution {
    pub f: Vec<f64>,
    pub residual_norm: f64,
    pub iterations: usize,
    pub energy: f64,
    /// `min |h| e^{2f}` over all vertices.
    pub c0: f64,
    pub certificate: PdCertificate,
    pub trace: Vec<String>,
}

fn check_hypotheses(mesh: &TriMesh, h: &[f64], lambda: &[f64]) -> Result<()> {
    let n = mesh.num_vertices();
    if h.len() != n || lambda.len() != n {
        return Err(Error::Input(format!("coefficients need {n} per-vertex values, got {} and {}", h.len(), lambda.len())));
    }
    if mesh.euler_characteristic() >= 0 {
        return Err(Error::Geometry(format!("need χ < 0, mesh has χ = {}", mesh.euler_characteristic())));
    }
    if let Some(i) = h.iter().position(|v| !(v.is_finite() && *v <= 0.0)) {
        return Err(Error::Input(format!("h must be finite and ≤ 0, h[{i}] = {}", h[i])));
    }
    for (i, l) in lambda.iter().enumerate() {
        if mesh.is_boundary(i) && !(l.is_finite() && *l <= 0.0) {
            return Err(Error::Input(format!("λ must be finite and ≤ 0 on the boundary, λ[{i}] = {l}")));
        }
    }
    let any_h = h.iter().any(|v| *v < 0.0);
    let any_l = lambda.iter().enumerate().any(|(i, v)| mesh.is_boundary(i) && *v < 0.0);
    if !any_h && !any_l {
        return Err(Error::Input("h and λ are both identically zero".into()));
    }
    Ok(())
}

impl LiouvilleProblem {
    /// Normalized problem: `−Δ_g u = h e^{2u} + 1`, `∂_n u = λ e^u`, for a metric with K = −1, k = 0.
    ///
    /// `lambda` is per vertex; interior entries are ignored.
    pub fn normalized(mesh: &TriMesh, phi: &ConformalFactor, h: Vec<f64>, lambda: Vec<f64>) -> Result<Self> {
        check_hypotheses(mesh, &h, &lambda)?;
        let ops = assemble_operators(mesh, phi)?;
        let n = mesh.num_vertices();
        let lambda = mask_interior(mesh, lambda);
        Ok(LiouvilleProblem { ops, h, lambda, source: vec![1.0; n], boundary_source: vec![0.0; n], normalized: true })
    }

    /// Problem on an arbitrary background: `−Δ_g u = h e^{2u} − K_g`, `∂_n u = λ e^u − k_g`.
    pub fn with_background(mesh: &TriMesh, phi: &ConformalFactor, h: Vec<f64>, lambda: Vec<f64>) -> Result<Self> {
        check_hypotheses(mesh, &h, &lambda)?;
        let ops = assemble_operators(mesh, phi)?;
        let source = gaussian_curvature(mesh, phi)?.into_iter().map(|k| -k).collect();
        let boundary_source = geodesic_curvature_all(mesh, phi)?.into_iter().map(|k| -k).collect();
        let lambda = mask_interior(mesh, lambda);
        Ok(LiouvilleProblem { ops, h, lambda, source, boundary_source, normalized: false })
    }

    pub fn ops(&self) -> &FemOperators {
        &self.ops
    }

    pub fn h(&self) -> &[f64] {
        &self.h
    }

    /// Boundary coefficient per vertex, zero at interior vertices.
    pub fn lambda(&self) -> &[f64] {
        &self.lambda
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn num_vertices(&self) -> usize {
        self.h.len()
    }

    /// Discrete energy I(u).
    pub fn energy(&self, u: &[f64]) -> Result<f64> {
        self.ops.check(u)?;
        let m = self.ops.lumped_mass();
        let l = self.ops.boundary_lumped();
        let mut e = self.ops.stiffness().form(u, u);
        for i in 0..u.len() {
            e -= m[i] * (self.h[i] * (2.0 * u[i]).exp() + 2.0 * self.source[i] * u[i]);
            if l[i] > 0.0 {
                e -= l[i] * (2.0 * self.lambda[i] * u[i].exp() + 2.0 * self.boundary_source[i] * u[i]);
            }
        }
        Ok(e)
    }

    /// Covector `F(u) = Su − m^g(h e^{2u} + s) − ℓ^g(λ e^u + σ)`; the gradient of I is 2F.
    pub fn residual(&self, u: &[f64]) -> Result<Vec<f64>> {
        self.ops.check(u)?;
        let m = self.ops.lumped_mass();
        let l = self.ops.boundary_lumped();
        let mut r = self.ops.stiffness().matvec(u);
        for i in 0..u.len() {
            r[i] -= m[i] * (self.h[i] * (2.0 * u[i]).exp() + self.source[i]);
            r[i] -= l[i] * (self.lambda[i] * u[i].exp() + self.boundary_source[i]);
        }
        Ok(r)
    }

    /// Nonnegative diagonal of the Hessian of I/2 beyond the stiffness.
    pub fn hessian_diagonal(&self, u: &[f64]) -> Vec<f64> {
        let m = self.ops.lumped_mass();
        let l = self.ops.boundary_lumped();
        (0..u.len())
            .map(|i| -2.0 * self.h[i] * m[i] * (2.0 * u[i]).exp() - self.lambda[i] * l[i] * u[i].exp())
            .collect()
    }

    /// Constant u solving the spatially integrated equation, or 0 if none exists.
    pub fn mean_field_guess(&self) -> f64 {
        let m = self.ops.lumped_mass();
        let l = self.ops.boundary_lumped();
        // a y² + b y + c = 0 with y = e^u, a, b ≤ 0.
        let a: f64 = (0..m.len()).map(|i| m[i] * self.h[i]).sum();
        let b: f64 = (0..m.len()).map(|i| l[i] * self.lambda[i]).sum();
        let c: f64 = (0..m.len()).map(|i| m[i] * self.source[i] + l[i] * self.boundary_source[i]).sum();
        if c <= 0.0 {
            return 0.0;
        }
        let y = if a < 0.0 { (b + (b * b - 4.0 * a * c).sqrt()) / (-2.0 * a) } else { -c / b };
        if y > 0.0 && y.is_finite() {
            y.ln()
        } else {
            0.0
        }
    }

    fn solve_hessian(&self, diag: &[f64], rhs: &[f64]) -> Result<Vec<f64>> {
        let s = self.ops.stiffness();
        let sd = s.diagonal();
        let inv: Vec<f64> = sd.iter().zip(diag).map(|(a, b)| 1.0 / (a + b)).collect();
        let mut x = vec![0.0; rhs.len()];
        pcg(
            |v, out| {
                s.matvec_into(v, out);
                for i in 0..v.len() {
                    out[i] += diag[i] * v[i];
                }
            },
            &inv,
            rhs,
            &mut x,
            1e-13,
            20 * rhs.len() + 200,
        )?;
        Ok(x)
    }
}

fn mask_interior(mesh: &TriMesh, mut lambda: Vec<f64>) -> Vec<f64> {
    for (i, l) in lambda.iter_mut().enumerate() {
        if !mesh.is_boundary(i) {
            *l = 0.0;
        }
    }
    lambda
}

/// Dual H¹ norm of the weak residual, i.e. the supremum over test functions v of |⟨F(f), v⟩| / ‖v‖_{H¹}.
pub fn weak_residual(problem: &LiouvilleProblem, f: &[f64]) -> Result<f64> {
    let r = problem.residual(f)?;
    problem.ops.h1_dual_norm(&r)
}

/// Damped Newton with Armijo backtracking on I.
pub fn solve_liouville(problem: &LiouvilleProblem, init: Option<&[f64]>, tol: f64) -> Result<LiouvilleSolution> {
    let n = problem.num_vertices();
    let mut u = match init {
        Some(v) => {
            problem.ops.check(v)?;
            v.to_vec()
        }
        None => vec![problem.mean_field_guess(); n],
    };
    let mut trace = Vec::new();
    let max_iter = 100;
    let mut e = problem.energy(&u)?;
    for it in 0..=max_iter {
        let r = problem.residual(&u)?;
        let res = problem.ops.h1_dual_norm(&r)?;
        trace.push(format!("iter {it}: I = {e:.15e}, residual = {res:.3e}"));
        if res <= tol {
            let certificate = pd_certificate(problem, &u)?;
            let c0 = u.iter().zip(&problem.h).map(|(f, h)| h.abs() * (2.0 * f).exp()).fold(f64::INFINITY, f64::min);
            return Ok(LiouvilleSolution { f: u, residual_norm: res, iterations: it, energy: e, c0, certificate, trace });
        }
        if it == max_iter {
            break;
        }
        let diag = problem.hessian_diagonal(&u);
        let neg: Vec<f64> = r.iter().map(|v| -v).collect();
        let du = problem.solve_hessian(&diag, &neg)?;
        let slope = 2.0 * r.iter().zip(&du).map(|(a, b)| a * b).sum::<f64>();
        let mut alpha = 1.0;
        let mut accepted = None;
        while alpha > 1e-12 {
            let trial: Vec<f64> = u.iter().zip(&du).map(|(a, b)| a + alpha * b).collect();
            let et = problem.energy(&trial)?;
            if et.is_finite() && et <= e + 1e-4 * alpha * slope {
                accepted = Some((trial, et));
                break;
            }
            // Near the minimum, roundoff in I hides the decrease; the residual still shows it.
            if alpha == 1.0 && et.is_finite() && (et - e).abs() <= 1e-12 * e.abs().max(1.0) {
                let rt = problem.ops.h1_dual_norm(&problem.residual(&trial)?)?;
                if rt < res {
                    accepted = Some((trial, et));
                    break;
                }
            }
            alpha *= 0.5;
        }
        match accepted {
            Some((t, et)) => {
                u = t;
                e = et;
            }
            None => {
                return Err(Error::solver(format!("line search failed at iteration {it}, residual {res:e}"), trace));
            }
        }
    }
    Err(Error::solver(format!("Newton did not reach tolerance {tol:e} in {max_iter} iterations"), trace))
}

fn pd_certificate(problem: &LiouvilleProblem, u: &[f64]) -> Result<PdCertificate> {
    let n = u.len();
    let diag = problem.hessian_diagonal(u);
    let s = problem.ops.stiffness();
    // Inverse iteration from a deterministic, non-constant start vector.
    let mut x: Vec<f64> = (0..n).map(|i| 1.0 + 0.5 * ((i as f64) * 0.7).sin()).collect();
    let mut rq = f64::NAN;
    for _ in 0..30 {
        let nx = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        x.iter_mut().for_each(|v| *v /= nx);
        let hx = s.matvec(&x);
        rq = (0..n).map(|i| x[i] * (hx[i] + diag[i] * x[i])).sum();
        x = problem.solve_hessian(&diag, &x)?;
    }
    let cholesky = if n <= DENSE_CERTIFICATE_LIMIT {
        let mut h: Mat<f64> = s.to_dense();
        for i in 0..n {
            h[(i, i)] += diag[i];
        }
        Some(h.llt(Side::Lower).is_ok())
    } else {
        None
    };
    Ok(PdCertificate { min_eigenvalue: rq, cholesky })
}

/// Conformal factor with K̃ = −1 in the interior and k̃ = 0 on the boundary.
///
/// Interior curvature of the result is −1 to roundoff; boundary curvature is
/// first-order accurate.
pub fn normalize_metric(mesh: &TriMesh, phi0: &ConformalFactor) -> Result<ConformalFactor> {
    let n = mesh.num_vertices();
    let problem = LiouvilleProblem::with_background(mesh, phi0, vec![-1.0; n], vec![0.0; n])?;
    let sol = solve_liouville(&problem, None, 1e-11)?;
    ConformalFactor::new(phi0.values().iter().zip(&sol.f).map(|(a, b)| a + b).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_pair_of_pants, geodesic_curvature};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pants(h: f64) -> TriMesh {
        build_pair_of_pants(1.0, [[-0.4, 0.0], [0.4, 0.0]], [0.15, 0.15], h, 5).unwrap()
    }

    fn max_boundary_curvature(m: &TriMesh, phi: &ConformalFactor) -> f64 {
        geodesic_curvature_all(m, phi).unwrap().iter().fold(0.0f64, |a, b| a.max(b.abs()))
    }

    #[test]
    fn normalized_flat_pants() {
        let m = pants(0.1);
        let phi = normalize_metric(&m, &ConformalFactor::flat(m.num_vertices())).unwrap();
        let k = gaussian_curvature(&m, &phi).unwrap();
        for i in 0..m.num_vertices() {
            if !m.is_boundary(i) {
                assert!((k[i] + 1.0).abs() < 1e-8, "K[{i}] = {}", k[i]);
            }
        }
        // The flat boundary turning angles sum to 2πχ exactly, so the area is exact too.
        let ops = assemble_operators(&m, &phi).unwrap();
        assert!((ops.area() - 2.0 * std::f64::consts::PI).abs() < 1e-8);
        assert!(geodesic_curvature(&m, &phi, 0).unwrap().iter().all(|k| k.is_finite()));
    }

    #[test]
    fn normalization_is_first_order_on_the_boundary() {
        let (coarse, fine) = (pants(0.1), pants(0.05));
        let pc = normalize_metric(&coarse, &ConformalFactor::flat(coarse.num_vertices())).unwrap();
        let pf = normalize_metric(&fine, &ConformalFactor::flat(fine.num_vertices())).unwrap();
        let (kc, kf) = (max_boundary_curvature(&coarse, &pc), max_boundary_curvature(&fine, &pf));
        assert!(kf < 0.65 * kc, "max |k̃| {kc} -> {kf}");
        // Re-normalizing an already normalized metric moves it by O(h).
        let shift = |m: &TriMesh, p: &ConformalFactor| {
            let q = normalize_metric(m, p).unwrap();
            p.values().iter().zip(q.values()).fold(0.0f64, |a, (x, y)| a.max((x - y).abs()))
        };
        let (dc, df) = (shift(&coarse, &pc), shift(&fine, &pf));
        assert!(df < 0.65 * dc, "correction {dc} -> {df}");
    }

    #[test]
    fn constant_shift_solution() {
        let m = pants(0.15);
        let phi = normalize_metric(&m, &ConformalFactor::flat(m.num_vertices())).unwrap();
        let n = m.num_vertices();
        let c: f64 = 0.3;
        let p = LiouvilleProblem::normalized(&m, &phi, vec![-(2.0 * c).exp(); n], vec![0.0; n]).unwrap();
        let s = solve_liouville(&p, None, 1e-10).unwrap();
        assert!(s.f.iter().all(|f| (f + c).abs() < 1e-8));
        assert!(s.certificate.min_eigenvalue > 0.0);
        assert_eq!(s.certificate.cholesky, Some(true));
        assert!((s.c0 - 1.0).abs() < 1e-8);
    }

    #[test]
    fn rejects_positive_coefficients() {
        let m = pants(0.2);
        let phi = ConformalFactor::flat(m.num_vertices());
        let n = m.num_vertices();
        let mut h = vec![-1.0; n];
        h[n / 2] = 0.1;
        assert!(LiouvilleProblem::normalized(&m, &phi, h, vec![0.0; n]).unwrap_err().is_input_error());
        assert!(LiouvilleProblem::normalized(&m, &phi, vec![0.0; n], vec![0.0; n]).unwrap_err().is_input_error());
        let b = m.boundary_loops()[1].vertices[0];
        let mut l = vec![0.0; n];
        l[b] = 0.5;
        assert!(LiouvilleProblem::normalized(&m, &phi, vec![-1.0; n], l).unwrap_err().is_input_error());
    }

    #[test]
    fn boundary_only_negativity_is_solvable() {
        let m = pants(0.15);
        let phi = normalize_metric(&m, &ConformalFactor::flat(m.num_vertices())).unwrap();
        let n = m.num_vertices();
        let p = LiouvilleProblem::normalized(&m, &phi, vec![0.0; n], vec![-1.0; n]).unwrap();
        let s = solve_liouville(&p, None, 1e-10).unwrap();
        assert!(weak_residual(&p, &s.f).unwrap() <= 1e-10);
        assert_eq!(s.c0, 0.0);
    }

    /// Plain gradient descent in the H¹ metric, an oracle independent of Newton.
    fn gradient_descent(p: &LiouvilleProblem, mut u: Vec<f64>) -> Vec<f64> {
        for _ in 0..20000 {
            let r = p.residual(&u).unwrap();
            let g = p.ops().h1_riesz(&r).unwrap();
            let gn: f64 = r.iter().zip(&g).map(|(a, b)| a * b).sum();
            if gn.sqrt() < 1e-9 {
                break;
            }
            let e0 = p.energy(&u).unwrap();
            let mut t = 1.0;
            loop {
                let trial: Vec<f64> = u.iter().zip(&g).map(|(a, b)| a - t * b).collect();
                if p.energy(&trial).unwrap() <= e0 - 0.5 * t * gn || t < 1e-12 {
                    u = trial;
                    break;
                }
                t *= 0.5;
            }
        }
        u
    }

    #[test]
    fn uniqueness_against_gradient_descent() {
        let m = pants(0.2);
        let phi = normalize_metric(&m, &ConformalFactor::flat(m.num_vertices())).unwrap();
        let h: Vec<f64> = m.vertices().iter().map(|p| -1.0 - 0.5 * (2.0 * p[0]).sin().powi(2) - 0.3 * p[1]).collect();
        let l: Vec<f64> = m.vertices().iter().map(|p| -0.5 - 0.4 * p[0] * p[0]).collect();
        let p = LiouvilleProblem::normalized(&m, &phi, h, l).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a: Vec<f64> = (0..m.num_vertices()).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let b: Vec<f64> = (0..m.num_vertices()).map(|_| rng.gen_range(-1.0..3.0)).collect();
        let fa = solve_liouville(&p, Some(&a), 1e-10).unwrap().f;
        let fb = solve_liouville(&p, Some(&b), 1e-10).unwrap().f;
        let oracle = gradient_descent(&p, vec![0.0; m.num_vertices()]);
        let d: Vec<f64> = fa.iter().zip(&fb).map(|(x, y)| x - y).collect();
        let e: Vec<f64> = fa.iter().zip(&oracle).map(|(x, y)| x - y).collect();
        assert!(p.ops().h1_norm(&d) < 1e-6);
        assert!(p.ops().h1_norm(&e) < 1e-6, "{}", p.ops().h1_norm(&e));
    }

    #[test]
    fn residual_grows_linearly_under_perturbation() {
        let m = pants(0.15);
        let phi = normalize_metric(&m, &ConformalFactor::flat(m.num_vertices())).unwrap();
        let n = m.num_vertices();
        let p = LiouvilleProblem::normalized(&m, &phi, vec![-1.0; n], vec![0.0; n]).unwrap();
        let v: Vec<f64> = m.vertices().iter().map(|q| (3.0 * q[0]).sin() * q[1]).collect();
        let r = |eps: f64| weak_residual(&p, &v.iter().map(|x| eps * x).collect::<Vec<_>>()).unwrap();
        assert!(r(0.0) < 1e-10);
        let ratio = r(2e-4) / r(1e-4);
        assert!((ratio - 2.0).abs() < 1e-3, "ratio {ratio}");
    }
}
