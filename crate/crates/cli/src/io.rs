//! Plain-text persistence. Every table is CSV with a header row; floats use Rust's
//! shortest round-trip formatting, so identical runs write identical bytes.
//!
//! Mesh file:
//!
//! ```text
//! # superliouville-mesh seed=7
//! vertices 3
//! 0 0
//! ...
//! triangles 1
//! 0 1 2
//! loops 1
//! 0 3 0 1 2        (loop id, length, vertices)
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};
use superliouville::geometry::{BoundaryLoop, TriMesh};
use superliouville::linalg::C64;
use superliouville::spectral::SpectralBasis;

use crate::CliError;

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

pub fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Runtime(format!("serialize: {e}")))?;
    text.push('\n');
    write_text(path, &text)
}

pub fn mesh_to_text(mesh: &TriMesh) -> String {
    let mut s = format!("# superliouville-mesh seed={}\n", mesh.seed());
    let _ = writeln!(s, "vertices {}", mesh.num_vertices());
    for p in mesh.vertices() {
        let _ = writeln!(s, "{} {}", p[0], p[1]);
    }
    let _ = writeln!(s, "triangles {}", mesh.num_triangles());
    for t in mesh.triangles() {
        let _ = writeln!(s, "{} {} {}", t[0], t[1], t[2]);
    }
    let _ = writeln!(s, "loops {}", mesh.boundary_loops().len());
    for l in mesh.boundary_loops() {
        let _ = write!(s, "{} {}", l.id, l.vertices.len());
        for v in &l.vertices {
            let _ = write!(s, " {v}");
        }
        s.push('\n');
    }
    s
}

struct Lines<'a> {
    inner: Box<dyn Iterator<Item = (usize, &'a str)> + 'a>,
}

impl<'a> Lines<'a> {
    fn new(text: &'a str) -> Self {
        Lines { inner: Box::new(text.lines().enumerate().map(|(i, l)| (i + 1, l.trim())).filter(|(_, l)| !l.is_empty())) }
    }

    fn next(&mut self) -> Result<(usize, &'a str), CliError> {
        self.inner.next().ok_or_else(|| parse_err(0, "unexpected end of file"))
    }

    fn count(&mut self, name: &str) -> Result<usize, CliError> {
        let (n, l) = self.next()?;
        l.strip_prefix(name)
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| parse_err(n, &format!("expected `{name} COUNT`")))
    }

    fn row<T: std::str::FromStr>(&mut self) -> Result<(usize, Vec<T>), CliError> {
        let (n, l) = self.next()?;
        let vals = l.split_whitespace().map(str::parse).collect::<Result<_, _>>().map_err(|_| parse_err(n, "bad number"))?;
        Ok((n, vals))
    }
}

fn parse_err(line: usize, what: &str) -> CliError {
    CliError::Input(format!("mesh file line {line}: {what}"))
}

pub fn mesh_from_text(text: &str) -> Result<TriMesh, CliError> {
    let mut lines = Lines::new(text);
    let (n0, header) = lines.next()?;
    let seed = header
        .strip_prefix("# superliouville-mesh seed=")
        .and_then(|s| s.parse::<u64>().ok())
        .ok_or_else(|| parse_err(n0, "expected `# superliouville-mesh seed=N`"))?;
    let nv = lines.count("vertices")?;
    let mut vertices = Vec::with_capacity(nv);
    for _ in 0..nv {
        match lines.row::<f64>()? {
            (_, r) if r.len() == 2 => vertices.push([r[0], r[1]]),
            (n, _) => return Err(parse_err(n, "expected `x y`")),
        }
    }
    let nt = lines.count("triangles")?;
    let mut triangles = Vec::with_capacity(nt);
    for _ in 0..nt {
        match lines.row::<usize>()? {
            (_, r) if r.len() == 3 => triangles.push([r[0], r[1], r[2]]),
            (n, _) => return Err(parse_err(n, "expected three vertex indices")),
        }
    }
    let nl = lines.count("loops")?;
    let mut loops = Vec::with_capacity(nl);
    for _ in 0..nl {
        match lines.row::<usize>()? {
            (_, r) if r.len() >= 2 && r[1] == r.len() - 2 => loops.push(BoundaryLoop { id: r[0], vertices: r[2..].to_vec() }),
            (n, _) => return Err(parse_err(n, "expected `id length v1 ... vn`")),
        }
    }
    TriMesh::new(vertices, triangles, loops, seed).map_err(CliError::from)
}

pub fn scalar_csv(mesh: &TriMesh, name: &str, values: &[f64]) -> String {
    let mut s = format!("vertex,x,y,{name}\n");
    for (v, (p, u)) in mesh.vertices().iter().zip(values).enumerate() {
        let _ = writeln!(s, "{v},{},{},{u}", p[0], p[1]);
    }
    s
}

/// Nodal spinor values: `vertex,x,y,re0,im0,re1,im1,abs`.
pub fn spinor_csv(mesh: &TriMesh, values: &[[C64; 2]]) -> String {
    let mut s = String::from("vertex,x,y,re0,im0,re1,im1,abs\n");
    for (v, (p, z)) in mesh.vertices().iter().zip(values).enumerate() {
        let abs = (z[0].norm_sqr() + z[1].norm_sqr()).sqrt();
        let _ = writeln!(s, "{v},{},{},{},{},{},{},{abs}", p[0], p[1], z[0].re, z[0].im, z[1].re, z[1].im);
    }
    s
}

/// `j,lambda` with signed indices.
pub fn spectrum_csv(basis: &SpectralBasis) -> String {
    let mut s = String::from("j,lambda\n");
    for pos in 0..basis.num_modes() {
        let _ = writeln!(s, "{},{}", basis.index_of(pos), basis.eigenvalues()[pos]);
    }
    s
}

/// Column-major little-endian `(re, im)` pairs of the eigenvector matrix.
pub fn basis_block(basis: &SpectralBasis) -> Vec<u8> {
    let v = basis.vectors();
    let mut out = Vec::with_capacity(16 * v.nrows() * v.ncols());
    for j in 0..v.ncols() {
        for i in 0..v.nrows() {
            out.extend_from_slice(&v[(i, j)].re.to_le_bytes());
            out.extend_from_slice(&v[(i, j)].im.to_le_bytes());
        }
    }
    out
}

/// Vector of floats as little-endian bytes, for hashing.
pub fn float_bytes(values: &[f64]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use superliouville::geometry::build_pair_of_pants;

    #[test]
    fn mesh_round_trip_is_exact() {
        let m = build_pair_of_pants(1.0, [[-0.4, 0.0], [0.4, 0.0]], [0.15, 0.15], 0.3, 5).unwrap();
        let text = mesh_to_text(&m);
        let back = mesh_from_text(&text).unwrap();
        assert_eq!(back.vertices(), m.vertices());
        assert_eq!(back.triangles(), m.triangles());
        assert_eq!(back.seed(), 5);
        assert_eq!(mesh_to_text(&back), text);
    }

    #[test]
    fn malformed_mesh_is_input_error() {
        assert!(matches!(mesh_from_text("vertices 0\n"), Err(CliError::Input(_))));
        assert!(matches!(mesh_from_text("# superliouville-mesh seed=1\nvertices 2\n0 0\n"), Err(CliError::Input(_))));
    }

    #[test]
    fn sha256_of_empty_input() {
        assert_eq!(sha256_hex(b""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    }
}
