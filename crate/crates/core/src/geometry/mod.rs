//! Triangulated planar domains, conformal factors and discrete curvature.

mod build;
mod curvature;

pub use build::{build_circle_domain, build_pair_of_pants, Circle};
pub use curvature::{gauss_bonnet_defect, gaussian_curvature, geodesic_curvature, geodesic_curvature_all, weak_laplacian};

use std::collections::HashMap;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BoundaryLoop {
    pub id: usize,
    /// Ordered so that the domain lies to the left of each directed edge.
    pub vertices: Vec<usize>,
}

/// Per-vertex boundary data of the flat polygonal loop.
#[derive(Clone, Copy, Debug)]
pub struct BoundaryVertex {
    pub vertex: usize,
    /// Half the summed length of the two incident boundary edges.
    pub dual_length: f64,
    /// Signed exterior angle; positive where the loop turns left.
    pub turning_angle: f64,
    /// Unit outward normal, the bisector of the incident edge normals.
    pub normal: [f64; 2],
}

/// Triangulated planar domain with `b` boundary loops.
///
/// The type admits any `b ≥ 1` so that disks can serve as oracle domains; the
/// variational pipeline separately insists on `χ = 2 − b < 0`.
#[derive(Clone, Debug)]
pub struct TriMesh {
    vertices: Vec<[f64; 2]>,
    triangles: Vec<[usize; 3]>,
    loops: Vec<BoundaryLoop>,
    seed: u64,
    h: f64,
    n_edges: usize,
    areas: Vec<f64>,
    grads: Vec<[[f64; 2]; 3]>,
    lumped: Vec<f64>,
    boundary_pos: Vec<Option<(usize, usize)>>,
    boundary: Vec<Vec<BoundaryVertex>>,
}

impl TriMesh {
    /// Validates the combinatorics and geometry and precomputes element data.
    pub fn new(vertices: Vec<[f64; 2]>, triangles: Vec<[usize; 3]>, loops: Vec<BoundaryLoop>, seed: u64) -> Result<Self> {
        let nv = vertices.len();
        if nv < 3 || triangles.is_empty() {
            return Err(Error::Mesh("mesh needs at least three vertices and one triangle".into()));
        }
        if vertices.iter().any(|p| !p[0].is_finite() || !p[1].is_finite()) {
            return Err(Error::Mesh("non-finite vertex coordinate".into()));
        }
        let mut used = vec![false; nv];
        let mut areas = Vec::with_capacity(triangles.len());
        let mut grads = Vec::with_capacity(triangles.len());
        let mut edges: HashMap<(usize, usize), (usize, (usize, usize))> = HashMap::new();
        let mut h: f64 = 0.0;
        for (t, tri) in triangles.iter().enumerate() {
            let [a, b, c] = *tri;
            if a >= nv || b >= nv || c >= nv || a == b || b == c || a == c {
                return Err(Error::Mesh(format!("triangle {t} has invalid vertex indices {tri:?}")));
            }
            let (area, g) = element_geometry(vertices[a], vertices[b], vertices[c]);
            let scale = (0..3)
                .map(|k| dist(vertices[tri[k]], vertices[tri[(k + 1) % 3]]))
                .fold(0.0f64, f64::max);
            if !(area > 1e-12 * scale * scale) {
                return Err(Error::Mesh(format!("triangle {t} is degenerate or clockwise (area {area:e})")));
            }
            h = h.max(scale);
            areas.push(area);
            grads.push(g);
            for k in 0..3 {
                used[tri[k]] = true;
                let (p, q) = (tri[k], tri[(k + 1) % 3]);
                let e = edges.entry((p.min(q), p.max(q))).or_insert((0, (p, q)));
                e.0 += 1;
                if e.0 > 2 {
                    return Err(Error::Mesh(format!("edge ({p}, {q}) borders more than two triangles")));
                }
            }
        }
        if let Some(v) = used.iter().position(|u| !u) {
            return Err(Error::Mesh(format!("vertex {v} belongs to no triangle")));
        }
        let boundary_edges: HashMap<(usize, usize), (usize, usize)> =
            edges.iter().filter(|(_, (n, _))| *n == 1).map(|(k, (_, dir))| (*k, *dir)).collect();

        if loops.is_empty() {
            return Err(Error::Mesh("mesh has no boundary loop".into()));
        }
        let mut boundary_pos = vec![None; nv];
        let mut loop_edge_count = 0;
        for (li, lp) in loops.iter().enumerate() {
            if lp.vertices.len() < 3 {
                return Err(Error::Mesh(format!("boundary loop {} has fewer than three vertices", lp.id)));
            }
            if loops[..li].iter().any(|o| o.id == lp.id) {
                return Err(Error::Mesh(format!("duplicate boundary loop id {}", lp.id)));
            }
            for (k, &v) in lp.vertices.iter().enumerate() {
                if v >= nv {
                    return Err(Error::Mesh(format!("boundary loop {} references vertex {v}", lp.id)));
                }
                if boundary_pos[v].is_some() {
                    return Err(Error::Mesh(format!("boundary loop {} is not simple or overlaps another loop at vertex {v}", lp.id)));
                }
                boundary_pos[v] = Some((li, k));
            }
            for k in 0..lp.vertices.len() {
                let (p, q) = (lp.vertices[k], lp.vertices[(k + 1) % lp.vertices.len()]);
                match boundary_edges.get(&(p.min(q), p.max(q))) {
                    Some(&dir) if dir == (p, q) => loop_edge_count += 1,
                    Some(_) => {
                        return Err(Error::Mesh(format!("boundary loop {} has the domain on its right at edge ({p}, {q})", lp.id)))
                    }
                    None => return Err(Error::Mesh(format!("loop {} edge ({p}, {q}) is not a boundary edge", lp.id))),
                }
            }
        }
        if loop_edge_count != boundary_edges.len() {
            return Err(Error::Mesh(format!(
                "{} boundary edges but loops cover {loop_edge_count}",
                boundary_edges.len()
            )));
        }
        let n_edges = edges.len();
        let euler = nv as i64 - n_edges as i64 + triangles.len() as i64;
        if euler != 2 - loops.len() as i64 {
            return Err(Error::Mesh(format!(
                "Euler formula fails: V - E + F = {euler} but 2 - b = {}",
                2 - loops.len() as i64
            )));
        }

        let mut lumped = vec![0.0; nv];
        for (tri, a) in triangles.iter().zip(&areas) {
            for &v in tri {
                lumped[v] += a / 3.0;
            }
        }
        let boundary = loops.iter().map(|lp| loop_geometry(&vertices, &lp.vertices)).collect();
        Ok(TriMesh { vertices, triangles, loops, seed, h, n_edges, areas, grads, lumped, boundary_pos, boundary })
    }

    pub fn vertices(&self) -> &[[f64; 2]] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn boundary_loops(&self) -> &[BoundaryLoop] {
        &self.loops
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Maximum edge length.
    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_edges(&self) -> usize {
        self.n_edges
    }

    pub fn num_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn num_boundary_components(&self) -> usize {
        self.loops.len()
    }

    /// χ = 2 − b; equals V − E + F by construction.
    pub fn euler_characteristic(&self) -> i64 {
        2 - self.loops.len() as i64
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        self.areas[t]
    }

    /// Gradients of the three hat functions on triangle `t`, in vertex order.
    pub fn hat_gradients(&self, t: usize) -> &[[f64; 2]; 3] {
        &self.grads[t]
    }

    /// Barycentric (one third) lumped vertex areas of the flat metric.
    pub fn lumped_areas(&self) -> &[f64] {
        &self.lumped
    }

    pub fn is_boundary(&self, v: usize) -> bool {
        self.boundary_pos[v].is_some()
    }

    /// (loop index, position within loop) of a boundary vertex.
    pub fn boundary_position(&self, v: usize) -> Option<(usize, usize)> {
        self.boundary_pos[v]
    }

    pub fn loop_index(&self, loop_id: usize) -> Result<usize> {
        self.loops
            .iter()
            .position(|l| l.id == loop_id)
            .ok_or_else(|| Error::Input(format!("unknown boundary loop id {loop_id}")))
    }

    /// Flat boundary geometry of loop index `li`, aligned with `boundary_loops()[li].vertices`.
    pub fn boundary_data(&self, li: usize) -> &[BoundaryVertex] {
        &self.boundary[li]
    }

    pub fn boundary_vertex(&self, v: usize) -> Option<&BoundaryVertex> {
        self.boundary_pos[v].map(|(li, k)| &self.boundary[li][k])
    }

    /// Per-vertex dual boundary length; zero at interior vertices.
    pub fn boundary_lumped(&self) -> Vec<f64> {
        let mut l = vec![0.0; self.num_vertices()];
        for data in &self.boundary {
            for bv in data {
                l[bv.vertex] = bv.dual_length;
            }
        }
        l
    }

    pub fn total_area(&self) -> f64 {
        self.areas.iter().sum()
    }

    /// Sorted vertex neighbour lists.
    pub fn vertex_neighbors(&self) -> Vec<Vec<usize>> {
        let mut nb = vec![Vec::new(); self.num_vertices()];
        for tri in &self.triangles {
            for k in 0..3 {
                let (p, q) = (tri[k], tri[(k + 1) % 3]);
                nb[p].push(q);
                nb[q].push(p);
            }
        }
        for l in &mut nb {
            l.sort_unstable();
            l.dedup();
        }
        nb
    }

    /// Undirected edges as sorted pairs, in ascending order.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut e: Vec<(usize, usize)> = self
            .triangles
            .iter()
            .flat_map(|t| (0..3).map(move |k| (t[k].min(t[(k + 1) % 3]), t[k].max(t[(k + 1) % 3]))))
            .collect();
        e.sort_unstable();
        e.dedup();
        e
    }
}

/// Area and hat-function gradients of a counterclockwise triangle.
fn element_geometry(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> (f64, [[f64; 2]; 3]) {
    let det = (b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]);
    let area = 0.5 * det;
    let p = [a, b, c];
    let mut g = [[0.0; 2]; 3];
    for k in 0..3 {
        let q = p[(k + 1) % 3];
        let r = p[(k + 2) % 3];
        // Gradient of the hat at p[k] is the inward-rotated opposite edge over 2|T|.
        g[k] = [(q[1] - r[1]) / det, (r[0] - q[0]) / det];
    }
    (area, g)
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

fn loop_geometry(vertices: &[[f64; 2]], lp: &[usize]) -> Vec<BoundaryVertex> {
    let n = lp.len();
    (0..n)
        .map(|k| {
            let prev = vertices[lp[(k + n - 1) % n]];
            let cur = vertices[lp[k]];
            let next = vertices[lp[(k + 1) % n]];
            let d0 = [cur[0] - prev[0], cur[1] - prev[1]];
            let d1 = [next[0] - cur[0], next[1] - cur[1]];
            let l0 = dist(prev, cur);
            let l1 = dist(cur, next);
            let turning = (d0[0] * d1[1] - d0[1] * d1[0]).atan2(d0[0] * d1[0] + d0[1] * d1[1]);
            // Domain on the left, so the outward normal is the right-hand perpendicular.
            let n0 = [d0[1] / l0, -d0[0] / l0];
            let n1 = [d1[1] / l1, -d1[0] / l1];
            let s = [n0[0] + n1[0], n0[1] + n1[1]];
            let ns = (s[0] * s[0] + s[1] * s[1]).sqrt();
            let normal = if ns > 1e-12 { [s[0] / ns, s[1] / ns] } else { n1 };
            BoundaryVertex { vertex: lp[k], dual_length: 0.5 * (l0 + l1), turning_angle: turning, normal }
        })
        .collect()
}

/// Per-vertex log conformal factor φ of the metric e^{2φ}(dx² + dy²).
#[derive(Clone, Debug, PartialEq)]
pub struct ConformalFactor {
    values: Vec<f64>,
}

impl ConformalFactor {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Input(format!("conformal factor is not finite at vertex {i}")));
        }
        Ok(ConformalFactor { values })
    }

    pub fn flat(n: usize) -> Self {
        ConformalFactor { values: vec![0.0; n] }
    }

    pub fn constant(n: usize, c: f64) -> Self {
        ConformalFactor { values: vec![c; n] }
    }

    pub fn from_fn(mesh: &TriMesh, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        Self::new(mesh.vertices().iter().map(|p| f(p[0], p[1])).collect())
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn add(&self, other: &ConformalFactor) -> ConformalFactor {
        assert_eq!(self.len(), other.len());
        ConformalFactor { values: self.values.iter().zip(&other.values).map(|(a, b)| a + b).collect() }
    }

    pub(crate) fn check_len(&self, mesh: &TriMesh) -> Result<()> {
        if self.len() != mesh.num_vertices() {
            return Err(Error::Input(format!(
                "conformal factor has {} values but mesh has {} vertices",
                self.len(),
                mesh.num_vertices()
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square() -> TriMesh {
        // Unit square split along a diagonal, one loop.
        let v = vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]];
        let t = vec![[0, 1, 2], [0, 2, 3]];
        TriMesh::new(v, t, vec![BoundaryLoop { id: 0, vertices: vec![0, 1, 2, 3] }], 0).unwrap()
    }

    #[test]
    fn square_patch_geometry() {
        let m = square();
        assert_eq!(m.num_edges(), 5);
        assert_eq!(m.euler_characteristic(), 1);
        assert!((m.total_area() - 1.0).abs() < 1e-15);
        assert!((m.lumped_areas().iter().sum::<f64>() - 1.0).abs() < 1e-15);
        let total_turn: f64 = m.boundary_data(0).iter().map(|b| b.turning_angle).sum();
        assert!((total_turn - 2.0 * std::f64::consts::PI).abs() < 1e-12);
        assert!((m.h() - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn hat_gradients_sum_to_zero() {
        let m = square();
        for t in 0..m.num_triangles() {
            let g = m.hat_gradients(t);
            assert!((g[0][0] + g[1][0] + g[2][0]).abs() < 1e-14);
            assert!((g[0][1] + g[1][1] + g[2][1]).abs() < 1e-14);
        }
    }

    #[test]
    fn rejects_clockwise_triangle() {
        let v = vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
        let err = TriMesh::new(v, vec![[0, 2, 1]], vec![BoundaryLoop { id: 0, vertices: vec![0, 2, 1] }], 0);
        assert!(matches!(err, Err(Error::Mesh(_))));
    }

    #[test]
    fn rejects_reversed_loop() {
        let v = vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
        let err = TriMesh::new(v, vec![[0, 1, 2]], vec![BoundaryLoop { id: 0, vertices: vec![0, 2, 1] }], 0);
        assert!(matches!(err, Err(Error::Mesh(_))));
    }

    #[test]
    fn rejects_non_finite_factor() {
        assert!(ConformalFactor::new(vec![0.0, f64::NAN]).is_err());
    }
}
