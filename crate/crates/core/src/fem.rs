//! Piecewise-linear finite elements for real scalar fields on a conformal metric.
//!
//! Nonlinear integrands are always evaluated at vertices and integrated with the
//! lumped weights `m^g_i = e^{2φ_i} m_i` (interior) and `ℓ^g_i = e^{φ_i} ℓ_i`
//! (boundary), which keeps Newton Hessians sparse.

use crate::error::{Error, Result};
use crate::geometry::{ConformalFactor, TriMesh};
use crate::linalg::{solve_spd, CsrMatrix};

/// Assembled linear forms for one (mesh, φ) pair.
#[derive(Clone, Debug)]
pub struct FemOperators {
    stiffness: CsrMatrix<f64>,
    mass: CsrMatrix<f64>,
    boundary_mass: Vec<CsrMatrix<f64>>,
    lumped_mass: Vec<f64>,
    boundary_lumped: Vec<f64>,
    phi: Vec<f64>,
    area: f64,
    perimeter: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MtMode {
    Interior,
    Boundary,
}

pub fn assemble_operators(mesh: &TriMesh, phi: &ConformalFactor) -> Result<FemOperators> {
    phi.check_len(mesh)?;
    let n = mesh.num_vertices();
    let p = phi.values();
    let w2: Vec<f64> = p.iter().map(|v| (2.0 * v).exp()).collect();
    let mut st = Vec::with_capacity(9 * mesh.num_triangles());
    let mut mt = Vec::with_capacity(9 * mesh.num_triangles());
    for (t, tri) in mesh.triangles().iter().enumerate() {
        let a = mesh.triangle_area(t);
        if !(a > 0.0 && a.is_finite()) {
            return Err(Error::Assembly(format!("triangle {t} has area {a}")));
        }
        let g = mesh.hat_gradients(t);
        let wsum: f64 = tri.iter().map(|&v| w2[v]).sum();
        for i in 0..3 {
            for j in 0..3 {
                st.push((tri[i], tri[j], a * (g[i][0] * g[j][0] + g[i][1] * g[j][1])));
                // ∫ N_i N_j (Σ_k w_k N_k) exactly: 2|T| a!b!c!/(a+b+c+2)!.
                let m = if i == j {
                    a * (w2[tri[i]] / 10.0 + (wsum - w2[tri[i]]) / 30.0)
                } else {
                    let k = 3 - i - j;
                    a * ((w2[tri[i]] + w2[tri[j]]) / 30.0 + w2[tri[k]] / 60.0)
                };
                mt.push((tri[i], tri[j], m));
            }
        }
    }
    let mut boundary_mass = Vec::with_capacity(mesh.num_boundary_components());
    let mut perimeter = 0.0;
    for lp in mesh.boundary_loops() {
        let vs = &lp.vertices;
        let mut bt = Vec::with_capacity(4 * vs.len());
        for k in 0..vs.len() {
            let (i, j) = (vs[k], vs[(k + 1) % vs.len()]);
            let pi = mesh.vertices()[i];
            let pj = mesh.vertices()[j];
            let len = ((pi[0] - pj[0]).powi(2) + (pi[1] - pj[1]).powi(2)).sqrt();
            let (wi, wj) = (p[i].exp(), p[j].exp());
            perimeter += len * (wi + wj) / 2.0;
            // ∫_e N_a N_b (w_i N_i + w_j N_j) ds = L a!b!c!/(a+b+c+1)!.
            bt.push((i, i, len * (wi / 4.0 + wj / 12.0)));
            bt.push((j, j, len * (wj / 4.0 + wi / 12.0)));
            bt.push((i, j, len * (wi + wj) / 12.0));
            bt.push((j, i, len * (wi + wj) / 12.0));
        }
        boundary_mass.push(CsrMatrix::from_triplets(n, n, bt));
    }
    let lumped_mass: Vec<f64> = mesh.lumped_areas().iter().zip(&w2).map(|(m, w)| m * w).collect();
    let boundary_lumped: Vec<f64> = mesh.boundary_lumped().iter().zip(p).map(|(l, v)| l * v.exp()).collect();
    let area = lumped_mass.iter().sum();
    Ok(FemOperators {
        stiffness: CsrMatrix::from_triplets(n, n, st),
        mass: CsrMatrix::from_triplets(n, n, mt),
        boundary_mass,
        lumped_mass,
        boundary_lumped,
        phi: p.to_vec(),
        area,
        perimeter,
    })
}

impl FemOperators {
    pub fn num_vertices(&self) -> usize {
        self.lumped_mass.len()
    }

    /// Flat cotangent stiffness; conformally invariant in two dimensions.
    pub fn stiffness(&self) -> &CsrMatrix<f64> {
        &self.stiffness
    }

    /// Consistent mass matrix of dv_g.
    pub fn mass(&self) -> &CsrMatrix<f64> {
        &self.mass
    }

    /// Consistent mass matrix of dσ_g on loop index `li`.
    pub fn boundary_mass(&self, li: usize) -> &CsrMatrix<f64> {
        &self.boundary_mass[li]
    }

    /// `m^g_i = e^{2φ_i} m_i`.
    pub fn lumped_mass(&self) -> &[f64] {
        &self.lumped_mass
    }

    /// `ℓ^g_i = e^{φ_i} ℓ_i`, zero at interior vertices.
    pub fn boundary_lumped(&self) -> &[f64] {
        &self.boundary_lumped
    }

    pub fn phi(&self) -> &[f64] {
        &self.phi
    }

    /// |M|_g with lumped quadrature (equal to `1ᵀ mass 1`).
    pub fn area(&self) -> f64 {
        self.area
    }

    /// |∂M|_g (equal to the sum of the boundary mass matrices).
    pub fn perimeter(&self) -> f64 {
        self.perimeter
    }

    pub(crate) fn check(&self, u: &[f64]) -> Result<()> {
        if u.len() != self.num_vertices() {
            return Err(Error::Input(format!("field has {} values, mesh has {} vertices", u.len(), self.num_vertices())));
        }
        Ok(())
    }

    /// ∫ u dv_g.
    pub fn integrate(&self, u: &[f64]) -> f64 {
        u.iter().zip(&self.lumped_mass).map(|(a, b)| a * b).sum()
    }

    /// ∫_{∂M} u dσ_g.
    pub fn integrate_boundary(&self, u: &[f64]) -> f64 {
        u.iter().zip(&self.boundary_lumped).map(|(a, b)| a * b).sum()
    }

    /// H¹ inner product `uᵀ(S + M^g_lumped)v`.
    pub fn h1_inner(&self, u: &[f64], v: &[f64]) -> f64 {
        self.stiffness.form(u, v) + u.iter().zip(v).zip(&self.lumped_mass).map(|((a, b), m)| a * b * m).sum::<f64>()
    }

    pub fn h1_norm(&self, u: &[f64]) -> f64 {
        self.h1_inner(u, u).max(0.0).sqrt()
    }

    /// Riesz representative of a covector in the H¹ inner product.
    pub fn h1_riesz(&self, r: &[f64]) -> Result<Vec<f64>> {
        solve_spd(&self.stiffness, Some(&self.lumped_mass), r, 1e-13)
    }

    /// Dual norm `sqrt(rᵀ (S + M)^{-1} r)` of a covector.
    pub fn h1_dual_norm(&self, r: &[f64]) -> Result<f64> {
        let z = self.h1_riesz(r)?;
        Ok(r.iter().zip(&z).map(|(a, b)| a * b).sum::<f64>().max(0.0).sqrt())
    }
}

pub fn dirichlet_energy(ops: &FemOperators, u: &[f64]) -> Result<f64> {
    ops.check(u)?;
    Ok(ops.stiffness.form(u, u).max(0.0))
}

/// log Σ w_i e^{x_i} with the maximum exponent factored out. Zero weights are skipped.
pub fn log_sum_exp(weights: &[f64], exponents: &[f64]) -> f64 {
    let mx = weights
        .iter()
        .zip(exponents)
        .filter(|(w, _)| **w > 0.0)
        .map(|(_, x)| *x)
        .fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = weights.iter().zip(exponents).filter(|(w, _)| **w > 0.0).map(|(w, x)| w * (x - mx).exp()).sum();
    mx + s.ln()
}

/// Gap of the interior or boundary Moser-Trudinger inequality, without its additive constant.
pub fn mt_inequality_gap(ops: &FemOperators, u: &[f64], mode: MtMode) -> Result<f64> {
    let d = dirichlet_energy(ops, u)?;
    Ok(match mode {
        MtMode::Interior => {
            let two_u: Vec<f64> = u.iter().map(|v| 2.0 * v).collect();
            log_sum_exp(&ops.lumped_mass, &two_u)
                - (d / (2.0 * std::f64::consts::PI) + 2.0 * ops.integrate(u) / ops.area)
        }
        MtMode::Boundary => {
            log_sum_exp(&ops.boundary_lumped, u)
                - (d / (4.0 * std::f64::consts::PI) + ops.integrate_boundary(u) / ops.perimeter)
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_pair_of_pants, BoundaryLoop};
    use proptest::prelude::*;

    fn unit_square(n: usize) -> TriMesh {
        let mut v = Vec::new();
        for j in 0..=n {
            for i in 0..=n {
                v.push([i as f64 / n as f64, j as f64 / n as f64]);
            }
        }
        let id = |i: usize, j: usize| j * (n + 1) + i;
        let mut t = Vec::new();
        for j in 0..n {
            for i in 0..n {
                t.push([id(i, j), id(i + 1, j), id(i + 1, j + 1)]);
                t.push([id(i, j), id(i + 1, j + 1), id(i, j + 1)]);
            }
        }
        let mut lp: Vec<usize> = (0..n).map(|i| id(i, 0)).collect();
        lp.extend((0..n).map(|j| id(n, j)));
        lp.extend((0..n).map(|i| id(n - i, n)));
        lp.extend((0..n).map(|j| id(0, n - j)));
        TriMesh::new(v, t, vec![BoundaryLoop { id: 0, vertices: lp }], 0).unwrap()
    }

    fn pants() -> TriMesh {
        build_pair_of_pants(1.0, [[-0.4, 0.0], [0.4, 0.0]], [0.15, 0.15], 0.15, 11).unwrap()
    }

    #[test]
    fn square_patch_quadrature() {
        let m = unit_square(4);
        let ops = assemble_operators(&m, &ConformalFactor::flat(m.num_vertices())).unwrap();
        let one = vec![1.0; m.num_vertices()];
        assert!((ops.mass().form(&one, &one) - 1.0).abs() < 1e-12);
        assert!((ops.perimeter() - 4.0).abs() < 1e-12);
        let x: Vec<f64> = m.vertices().iter().map(|p| p[0]).collect();
        assert!((dirichlet_energy(&ops, &x).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn weighted_mass_matches_area_element() {
        let m = pants();
        let phi = ConformalFactor::from_fn(&m, |x, y| 0.3 * x - 0.1 * y * y).unwrap();
        let ops = assemble_operators(&m, &phi).unwrap();
        let one = vec![1.0; m.num_vertices()];
        assert!((ops.mass().form(&one, &one) - ops.area()).abs() < 1e-12);
        let bsum: f64 = (0..3).map(|li| ops.boundary_mass(li).form(&one, &one)).sum();
        assert!((bsum - ops.perimeter()).abs() < 1e-12);
        assert!((ops.integrate_boundary(&one) - ops.perimeter()).abs() < 1e-12);
    }

    #[test]
    fn stiffness_kernel_is_constants() {
        let m = pants();
        let ops = assemble_operators(&m, &ConformalFactor::flat(m.num_vertices())).unwrap();
        let c = vec![2.5; m.num_vertices()];
        assert!(ops.stiffness().matvec(&c).iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn size_mismatch_is_input_error() {
        let m = pants();
        let ops = assemble_operators(&m, &ConformalFactor::flat(m.num_vertices())).unwrap();
        assert!(dirichlet_energy(&ops, &[0.0; 3]).unwrap_err().is_input_error());
    }

    #[test]
    fn mt_gap_of_zero_is_log_area() {
        let m = pants();
        let phi = ConformalFactor::from_fn(&m, |x, _| 0.2 * x).unwrap();
        let ops = assemble_operators(&m, &phi).unwrap();
        let z = vec![0.0; m.num_vertices()];
        assert!((mt_inequality_gap(&ops, &z, MtMode::Interior).unwrap() - ops.area().ln()).abs() < 1e-12);
        assert!((mt_inequality_gap(&ops, &z, MtMode::Boundary).unwrap() - ops.perimeter().ln()).abs() < 1e-12);
    }

    #[test]
    fn log_sum_exp_survives_large_exponents() {
        let v = log_sum_exp(&[1.0, 2.0, 0.0], &[1000.0, 1000.0, 5000.0]);
        assert!((v - (1000.0 + 3f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn green_identity_for_quadratic() {
        // u = x² + y²: ∫∇u·∇v = −∫Δu v + ∫∂_n u v = −4∫v + ∫2(x,y)·n v.
        let m = build_pair_of_pants(1.0, [[-0.4, 0.0], [0.4, 0.0]], [0.15, 0.15], 0.05, 2).unwrap();
        let ops = assemble_operators(&m, &ConformalFactor::flat(m.num_vertices())).unwrap();
        let u: Vec<f64> = m.vertices().iter().map(|p| p[0] * p[0] + p[1] * p[1]).collect();
        let v: Vec<f64> = m.vertices().iter().map(|p| (1.3 * p[0]).cos() + p[1]).collect();
        let mut flux = vec![0.0; m.num_vertices()];
        for li in 0..3 {
            for bv in m.boundary_data(li) {
                let p = m.vertices()[bv.vertex];
                flux[bv.vertex] = 2.0 * (p[0] * bv.normal[0] + p[1] * bv.normal[1]);
            }
        }
        let lhs = ops.stiffness().form(&u, &v);
        let fv: Vec<f64> = flux.iter().zip(&v).map(|(a, b)| a * b).collect();
        let rhs = -4.0 * ops.mass().matvec(&v).iter().sum::<f64>() + ops.integrate_boundary(&fv);
        assert!((lhs - rhs).abs() < 2e-2 * lhs.abs(), "{lhs} vs {rhs}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn dirichlet_energy_is_conformally_invariant(a in -1.0f64..1.0, b in -1.0f64..1.0, k in 0.5f64..3.0) {
            let m = pants();
            let u: Vec<f64> = m.vertices().iter().map(|p| (k * p[0]).sin() + p[1] * p[1]).collect();
            let e0 = dirichlet_energy(&assemble_operators(&m, &ConformalFactor::flat(m.num_vertices())).unwrap(), &u).unwrap();
            let phi = ConformalFactor::from_fn(&m, |x, y| a * x + b * y * x).unwrap();
            let e1 = dirichlet_energy(&assemble_operators(&m, &phi).unwrap(), &u).unwrap();
            prop_assert!((e0 - e1).abs() <= 1e-12 * e0.max(1.0));
        }

        #[test]
        fn mt_gap_is_translation_invariant(c in -20.0f64..20.0, k in 0.5f64..4.0) {
            let m = pants();
            let phi = ConformalFactor::from_fn(&m, |x, _| 0.1 * x).unwrap();
            let ops = assemble_operators(&m, &phi).unwrap();
            let u: Vec<f64> = m.vertices().iter().map(|p| (k * p[0] * p[1]).cos()).collect();
            let uc: Vec<f64> = u.iter().map(|v| v + c).collect();
            for mode in [MtMode::Interior, MtMode::Boundary] {
                let g0 = mt_inequality_gap(&ops, &u, mode).unwrap();
                let g1 = mt_inequality_gap(&ops, &uc, mode).unwrap();
                prop_assert!((g0 - g1).abs() < 1e-10);
            }
        }
    }
}
