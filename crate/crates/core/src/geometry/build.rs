use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spade::{ConstrainedDelaunayTriangulation, Point2, Triangulation};

use super::{BoundaryLoop, TriMesh};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Circle {
    pub center: [f64; 2],
    pub radius: f64,
}

impl Circle {
    pub fn new(center: [f64; 2], radius: f64) -> Self {
        Circle { center, radius }
    }

    fn center_dist(&self, p: [f64; 2]) -> f64 {
        ((p[0] - self.center[0]).powi(2) + (p[1] - self.center[1]).powi(2)).sqrt()
    }
}

/// Outer disk with two circular holes: b = 3, χ = −1.
pub fn build_pair_of_pants(
    outer_radius: f64,
    hole_centers: [[f64; 2]; 2],
    hole_radii: [f64; 2],
    target_h: f64,
    seed: u64,
) -> Result<TriMesh> {
    let holes = [Circle::new(hole_centers[0], hole_radii[0]), Circle::new(hole_centers[1], hole_radii[1])];
    build_circle_domain(Circle::new([0.0, 0.0], outer_radius), &holes, target_h, seed)
}

/// Constrained Delaunay mesh of a disk minus disjoint interior disks.
///
/// Boundary circles are sampled uniformly with a staggered offset ring inside each;
/// the rest is seeded with a jittered hexagonal lattice (jitter drawn from `seed`).
/// Free points are Laplacian-smoothed, and any edge still longer than `target_h`
/// gets a centroid inserted next to it, so the result has h ≤ target_h.
pub fn build_circle_domain(outer: Circle, holes: &[Circle], target_h: f64, seed: u64) -> Result<TriMesh> {
    if !(target_h.is_finite() && target_h > 0.0) {
        return Err(Error::Input(format!("target_h must be positive and finite, got {target_h}")));
    }
    for c in std::iter::once(&outer).chain(holes) {
        if !(c.radius.is_finite() && c.radius > 0.0) || !c.center.iter().all(|x| x.is_finite()) {
            return Err(Error::Input(format!("degenerate circle {c:?}")));
        }
    }
    for (i, hole) in holes.iter().enumerate() {
        if outer.center_dist(hole.center) + hole.radius >= outer.radius {
            return Err(Error::Geometry(format!("hole {i} is not strictly inside the outer disk")));
        }
        for (j, other) in holes.iter().enumerate().skip(i + 1) {
            if hole.center_dist(other.center) <= hole.radius + other.radius {
                return Err(Error::Geometry(format!("holes {i} and {j} overlap")));
            }
        }
    }

    let spacing = 0.7 * target_h;
    let mut points: Vec<[f64; 2]> = Vec::new();
    let mut loops: Vec<BoundaryLoop> = Vec::new();
    let mut constraints: Vec<[usize; 2]> = Vec::new();
    for (id, (c, ccw)) in std::iter::once((&outer, true)).chain(holes.iter().map(|h| (h, false))).enumerate() {
        let n = ((2.0 * std::f64::consts::PI * c.radius / spacing).ceil() as usize).max(12);
        let start = points.len();
        let mut lp = Vec::with_capacity(n);
        for k in 0..n {
            let t = 2.0 * std::f64::consts::PI * k as f64 / n as f64;
            let t = if ccw { t } else { -t };
            points.push([c.center[0] + c.radius * t.cos(), c.center[1] + c.radius * t.sin()]);
            lp.push(start + k);
        }
        for k in 0..n {
            constraints.push([start + k, start + (k + 1) % n]);
        }
        loops.push(BoundaryLoop { id, vertices: lp });
    }
    let n_boundary = points.len();

    // Staggered offset rings give near-equilateral elements along each circle.
    let ring_offset = spacing * 3f64.sqrt() / 2.0;
    for (c, inward) in std::iter::once((&outer, -1.0)).chain(holes.iter().map(|h| (h, 1.0))) {
        let r = c.radius + inward * ring_offset;
        let n = ((2.0 * std::f64::consts::PI * r / spacing).round() as usize).max(6);
        for k in 0..n {
            let t = 2.0 * std::f64::consts::PI * (k as f64 + 0.5) / n as f64;
            let p = [c.center[0] + r * t.cos(), c.center[1] + r * t.sin()];
            if inside_with_clearance(p, &outer, holes, 0.5 * ring_offset) {
                points.push(p);
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dy = spacing * 3f64.sqrt() / 2.0;
    let rows = (outer.radius / dy).ceil() as i64 + 1;
    let cols = (outer.radius / spacing).ceil() as i64 + 1;
    let clearance = ring_offset + 0.5 * spacing;
    for j in -rows..=rows {
        for i in -cols..=cols {
            let shift = if j.rem_euclid(2) == 1 { 0.5 * spacing } else { 0.0 };
            let jitter = [rng.gen_range(-0.05..0.05) * spacing, rng.gen_range(-0.05..0.05) * spacing];
            let p = [
                outer.center[0] + i as f64 * spacing + shift + jitter[0],
                outer.center[1] + j as f64 * dy + jitter[1],
            ];
            if inside_with_clearance(p, &outer, holes, clearance) {
                points.push(p);
            }
        }
    }

    let polygons: Vec<Vec<[f64; 2]>> =
        loops.iter().map(|l| l.vertices.iter().map(|&v| points[v]).collect()).collect();
    let mut triangles = triangulate(&points, &constraints, &polygons)?;
    // Long edges get a centroid of an incident triangle; smoothing afterwards keeps
    // vertex stars regular, which the pointwise cotangent Laplacian needs.
    for _ in 0..12 {
        for _ in 0..SMOOTHING_PASSES {
            smooth(&mut points, &triangles, n_boundary, &outer, holes, 0.25 * spacing);
            triangles = triangulate(&points, &constraints, &polygons)?;
        }
        let long = long_edge_triangles(&points, &triangles, target_h);
        if long.is_empty() {
            break;
        }
        for t in long {
            let [a, b, c] = triangles[t];
            points.push([
                (points[a][0] + points[b][0] + points[c][0]) / 3.0,
                (points[a][1] + points[b][1] + points[c][1]) / 3.0,
            ]);
        }
        triangles = triangulate(&points, &constraints, &polygons)?;
    }
    TriMesh::new(points, triangles, loops, seed)
}

const SMOOTHING_PASSES: usize = 4;

fn inside_with_clearance(p: [f64; 2], outer: &Circle, holes: &[Circle], clearance: f64) -> bool {
    outer.center_dist(p) <= outer.radius - clearance && holes.iter().all(|hc| hc.center_dist(p) >= hc.radius + clearance)
}

/// One Laplacian smoothing pass over the free points; moves that would leave the
/// domain interior (with the given clearance) are skipped.
fn smooth(points: &mut [[f64; 2]], tris: &[[usize; 3]], n_fixed: usize, outer: &Circle, holes: &[Circle], clearance: f64) {
    let n = points.len();
    let mut acc = vec![[0.0; 2]; n];
    let mut cnt = vec![0usize; n];
    let mut edges: Vec<(usize, usize)> = tris
        .iter()
        .flat_map(|t| (0..3).map(move |k| (t[k].min(t[(k + 1) % 3]), t[k].max(t[(k + 1) % 3]))))
        .collect();
    edges.sort_unstable();
    edges.dedup();
    for (a, b) in edges {
        for (p, q) in [(a, b), (b, a)] {
            acc[p][0] += points[q][0];
            acc[p][1] += points[q][1];
            cnt[p] += 1;
        }
    }
    for i in n_fixed..n {
        if cnt[i] == 0 {
            continue;
        }
        let target = [acc[i][0] / cnt[i] as f64, acc[i][1] / cnt[i] as f64];
        if inside_with_clearance(target, outer, holes, clearance) {
            points[i] = target;
        }
    }
}

fn triangulate(points: &[[f64; 2]], constraints: &[[usize; 2]], polygons: &[Vec<[f64; 2]>]) -> Result<Vec<[usize; 3]>> {
    let verts: Vec<Point2<f64>> = points.iter().map(|p| Point2::new(p[0], p[1])).collect();
    let cdt = ConstrainedDelaunayTriangulation::<Point2<f64>>::bulk_load_cdt(verts, constraints.to_vec())
        .map_err(|e| Error::Geometry(format!("triangulation failed: {e:?}")))?;
    if cdt.num_vertices() != points.len() {
        return Err(Error::Geometry("duplicate mesh points".into()));
    }
    let mut tris = Vec::with_capacity(cdt.num_inner_faces());
    for face in cdt.inner_faces() {
        let vs = face.vertices();
        let mut t = [vs[0].fix().index(), vs[1].fix().index(), vs[2].fix().index()];
        let (a, b, c) = (points[t[0]], points[t[1]], points[t[2]]);
        let centroid = [(a[0] + b[0] + c[0]) / 3.0, (a[1] + b[1] + c[1]) / 3.0];
        let inside = point_in_polygon(centroid, &polygons[0]) && !polygons[1..].iter().any(|h| point_in_polygon(centroid, h));
        if !inside {
            continue;
        }
        if (b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]) < 0.0 {
            t.swap(1, 2);
        }
        tris.push(t);
    }
    // Face iteration order follows spade's internal layout; sort for a canonical file.
    tris.sort_unstable();
    Ok(tris)
}

/// One triangle per edge longer than `target_h`, in ascending triangle order.
fn long_edge_triangles(points: &[[f64; 2]], tris: &[[usize; 3]], target_h: f64) -> Vec<usize> {
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::new();
    for (ti, t) in tris.iter().enumerate() {
        let mut pick = false;
        for k in 0..3 {
            let (a, b) = (t[k].min(t[(k + 1) % 3]), t[k].max(t[(k + 1) % 3]));
            let len = ((points[a][0] - points[b][0]).powi(2) + (points[a][1] - points[b][1]).powi(2)).sqrt();
            if len > target_h && seen.insert((a, b)) {
                pick = true;
            }
        }
        if pick {
            out.push(ti);
        }
    }
    out
}

fn point_in_polygon(p: [f64; 2], poly: &[[f64; 2]]) -> bool {
    let mut inside = false;
    let n = poly.len();
    let mut j = n - 1;
    for i in 0..n {
        let (a, b) = (poly[i], poly[j]);
        if (a[1] > p[1]) != (b[1] > p[1]) && p[0] < (b[0] - a[0]) * (p[1] - a[1]) / (b[1] - a[1]) + a[0] {
            inside = !inside;
        }
        j = i;
    }
    inside
}
