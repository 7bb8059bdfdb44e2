use super::{ConformalFactor, TriMesh};
use crate::error::Result;

/// Weak flat Laplacian: `(Sφ)_i = ∫ ∇φ·∇N_i dx` with the cotangent stiffness.
pub fn weak_laplacian(mesh: &TriMesh, phi: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; mesh.num_vertices()];
    for (t, tri) in mesh.triangles().iter().enumerate() {
        let g = mesh.hat_gradients(t);
        let a = mesh.triangle_area(t);
        let mut grad = [0.0; 2];
        for k in 0..3 {
            grad[0] += phi[tri[k]] * g[k][0];
            grad[1] += phi[tri[k]] * g[k][1];
        }
        for k in 0..3 {
            out[tri[k]] += a * (grad[0] * g[k][0] + grad[1] * g[k][1]);
        }
    }
    out
}

/// Area-weighted average of the piecewise-constant gradient over the triangles at each vertex.
fn recovered_gradients(mesh: &TriMesh, phi: &[f64]) -> Vec<[f64; 2]> {
    let mut acc = vec![[0.0; 2]; mesh.num_vertices()];
    let mut w = vec![0.0; mesh.num_vertices()];
    for (t, tri) in mesh.triangles().iter().enumerate() {
        let g = mesh.hat_gradients(t);
        let a = mesh.triangle_area(t);
        let mut grad = [0.0; 2];
        for k in 0..3 {
            grad[0] += phi[tri[k]] * g[k][0];
            grad[1] += phi[tri[k]] * g[k][1];
        }
        for &v in tri {
            acc[v][0] += a * grad[0];
            acc[v][1] += a * grad[1];
            w[v] += a;
        }
    }
    acc.iter().zip(&w).map(|(g, w)| [g[0] / w, g[1] / w]).collect()
}

/// K_g = −e^{−2φ} Δ_flat φ per vertex.
///
/// Interior vertices use the cotangent Laplacian over lumped areas. The lumped
/// operator at a boundary vertex also carries the Neumann flux, so boundary
/// values are extrapolated as the area-weighted mean over interior neighbours.
pub fn gaussian_curvature(mesh: &TriMesh, phi: &ConformalFactor) -> Result<Vec<f64>> {
    phi.check_len(mesh)?;
    let p = phi.values();
    let lap = weak_laplacian(mesh, p);
    let m = mesh.lumped_areas();
    let n = mesh.num_vertices();
    let mut k: Vec<Option<f64>> = (0..n)
        .map(|i| if mesh.is_boundary(i) { None } else { Some((-2.0 * p[i]).exp() * lap[i] / m[i]) })
        .collect();
    let nb = mesh.vertex_neighbors();
    // Boundary vertices with no interior neighbour take values from assigned boundary neighbours.
    loop {
        let mut changed = false;
        let mut pending = false;
        let snapshot = k.clone();
        for i in 0..n {
            if snapshot[i].is_some() {
                continue;
            }
            let (mut s, mut w) = (0.0, 0.0);
            for &j in &nb[i] {
                if let Some(v) = snapshot[j] {
                    s += m[j] * v;
                    w += m[j];
                }
            }
            if w > 0.0 {
                k[i] = Some(s / w);
                changed = true;
            } else {
                pending = true;
            }
        }
        if !pending || !changed {
            break;
        }
    }
    Ok(k.into_iter().map(|v| v.unwrap_or(0.0)).collect())
}

/// k_g = e^{−φ}(k_flat + ∂φ/∂n) along one loop, aligned with the loop's vertex order.
///
/// k_flat is the turning angle over the dual boundary length; ∂φ/∂n uses the
/// recovered vertex gradient and the bisector normal.
pub fn geodesic_curvature(mesh: &TriMesh, phi: &ConformalFactor, loop_id: usize) -> Result<Vec<f64>> {
    phi.check_len(mesh)?;
    let li = mesh.loop_index(loop_id)?;
    let grads = recovered_gradients(mesh, phi.values());
    Ok(loop_curvature(mesh, phi.values(), &grads, li))
}

fn loop_curvature(mesh: &TriMesh, p: &[f64], grads: &[[f64; 2]], li: usize) -> Vec<f64> {
    mesh.boundary_data(li)
        .iter()
        .map(|bv| {
            let g = grads[bv.vertex];
            let dn = g[0] * bv.normal[0] + g[1] * bv.normal[1];
            (-p[bv.vertex]).exp() * (bv.turning_angle / bv.dual_length + dn)
        })
        .collect()
}

/// Geodesic curvature of every boundary vertex, zero at interior vertices.
pub fn geodesic_curvature_all(mesh: &TriMesh, phi: &ConformalFactor) -> Result<Vec<f64>> {
    phi.check_len(mesh)?;
    let grads = recovered_gradients(mesh, phi.values());
    let mut out = vec![0.0; mesh.num_vertices()];
    for li in 0..mesh.num_boundary_components() {
        let k = loop_curvature(mesh, phi.values(), &grads, li);
        for (bv, kv) in mesh.boundary_data(li).iter().zip(k) {
            out[bv.vertex] = kv;
        }
    }
    Ok(out)
}

/// ∫K dv_g + ∫k dσ_g − 2πχ with lumped vertex quadrature.
pub fn gauss_bonnet_defect(mesh: &TriMesh, phi: &ConformalFactor) -> Result<f64> {
    let k = gaussian_curvature(mesh, phi)?;
    let kg = geodesic_curvature_all(mesh, phi)?;
    let p = phi.values();
    let m = mesh.lumped_areas();
    let l = mesh.boundary_lumped();
    let mut total = 0.0;
    for i in 0..mesh.num_vertices() {
        total += m[i] * (2.0 * p[i]).exp() * k[i] + l[i] * p[i].exp() * kg[i];
    }
    Ok(total - 2.0 * std::f64::consts::PI * mesh.euler_characteristic() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_pair_of_pants, BoundaryLoop};

    fn pants(h: f64) -> TriMesh {
        build_pair_of_pants(1.0, [[-0.4, 0.0], [0.4, 0.0]], [0.15, 0.15], h, 3).unwrap()
    }

    #[test]
    fn flat_metric_has_zero_curvature() {
        let m = pants(0.15);
        let k = gaussian_curvature(&m, &ConformalFactor::flat(m.num_vertices())).unwrap();
        assert!(k.iter().all(|v| v.abs() < 1e-10));
    }

    #[test]
    fn affine_factor_is_flat() {
        let m = pants(0.15);
        let phi = ConformalFactor::from_fn(&m, |x, y| 0.3 * x - 0.2 * y + 0.1).unwrap();
        let k = gaussian_curvature(&m, &phi).unwrap();
        assert!(k.iter().all(|v| v.abs() < 1e-9), "max {}", k.iter().fold(0.0f64, |a, b| a.max(b.abs())));
    }

    #[test]
    fn circle_curvatures() {
        let m = pants(0.05);
        let flat = ConformalFactor::flat(m.num_vertices());
        let outer = geodesic_curvature(&m, &flat, 0).unwrap();
        assert!(outer.iter().all(|k| (k - 1.0).abs() < 1e-2));
        let inner = geodesic_curvature(&m, &flat, 1).unwrap();
        assert!(inner.iter().all(|k| (k + 1.0 / 0.15).abs() < 0.1));
        let c = 0.4;
        let scaled = geodesic_curvature(&m, &ConformalFactor::constant(m.num_vertices(), c), 0).unwrap();
        assert!(scaled.iter().all(|k| (k - (-c).exp()).abs() < 1e-2));
        assert!(geodesic_curvature(&m, &flat, 9).is_err());
    }

    #[test]
    fn flat_gauss_bonnet_is_exact() {
        let m = pants(0.1);
        let d0 = gauss_bonnet_defect(&m, &ConformalFactor::flat(m.num_vertices())).unwrap();
        let dc = gauss_bonnet_defect(&m, &ConformalFactor::constant(m.num_vertices(), 0.7)).unwrap();
        assert!(d0.abs() < 1e-10);
        assert!((d0 - dc).abs() < 1e-10);
    }

    #[test]
    fn hyperbolic_factor_has_curvature_minus_one() {
        let m = build_pair_of_pants(0.9, [[-0.4, 0.0], [0.4, 0.0]], [0.15, 0.15], 0.04, 3).unwrap();
        let phi = ConformalFactor::from_fn(&m, |x, y| -((1.0 - x * x - y * y) / 2.0).ln()).unwrap();
        let k = gaussian_curvature(&m, &phi).unwrap();
        // The lumped cotangent Laplacian is only consistent on average: irregular
        // vertex stars keep an O(1) pointwise error while the mean converges.
        let errs: Vec<f64> = m
            .vertices()
            .iter()
            .enumerate()
            .filter(|(i, p)| p[0].hypot(p[1]) < 0.7 && !m.is_boundary(*i))
            .map(|(i, _)| (k[i] + 1.0).abs())
            .collect();
        let mean = errs.iter().sum::<f64>() / errs.len() as f64;
        let worst = errs.iter().fold(0.0f64, |a, &b| a.max(b));
        assert!(mean < 0.01, "mean |K + 1| = {mean}");
        assert!(worst < 0.25, "worst |K + 1| = {worst}");
    }

    #[test]
    fn composition_law_at_interior_vertices() {
        let m = pants(0.1);
        let p1 = ConformalFactor::from_fn(&m, |x, y| 0.3 * (x * y).sin()).unwrap();
        let p2 = ConformalFactor::from_fn(&m, |x, y| 0.2 * x * x - 0.1 * y).unwrap();
        let k = gaussian_curvature(&m, &p1.add(&p2)).unwrap();
        let k1 = gaussian_curvature(&m, &p1).unwrap();
        let lap2 = weak_laplacian(&m, p2.values());
        for i in 0..m.num_vertices() {
            if m.is_boundary(i) {
                continue;
            }
            // Δ_{g1} φ₂ = e^{−2φ₁} Δ φ₂ with Δ = −S/m.
            let delta_g1 = -(-2.0 * p1.values()[i]).exp() * lap2[i] / m.lumped_areas()[i];
            let expect = (-2.0 * p2.values()[i]).exp() * (k1[i] - delta_g1);
            assert!((k[i] - expect).abs() < 1e-9 * (1.0 + expect.abs()));
        }
    }

    #[test]
    fn triangle_boundary_vertices_get_values() {
        // Single triangle: every vertex is on the boundary and K falls back to zero.
        let v = vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
        let m = TriMesh::new(v, vec![[0, 1, 2]], vec![BoundaryLoop { id: 0, vertices: vec![0, 1, 2] }], 0).unwrap();
        let k = gaussian_curvature(&m, &ConformalFactor::new(vec![0.1, 0.2, 0.3]).unwrap()).unwrap();
        assert_eq!(k, vec![0.0; 3]);
    }
}
