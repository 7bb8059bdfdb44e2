//! Spinors on the globally trivialized bundle of a planar domain, the chirality
//! boundary condition, and the discrete Dirac operator.

mod dirac;
mod frame;

pub use dirac::{assemble_dirac, covariance_defect, strong_dirac, DiracOperator};
pub use frame::{ChiralitySign, CliffordFrame};

use crate::error::{Error, Result};
use crate::geometry::{ConformalFactor, TriMesh};
use crate::linalg::{C64, CONE, CZERO};

/// Per-vertex spinor values in the global trivialization.
#[derive(Clone, Debug, PartialEq)]
pub struct SpinorField {
    values: Vec<[C64; 2]>,
}

impl SpinorField {
    pub fn new(values: Vec<[C64; 2]>) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !(v[0].is_finite() && v[1].is_finite())) {
            return Err(Error::Input(format!("spinor is not finite at vertex {i}")));
        }
        Ok(SpinorField { values })
    }

    pub fn zeros(n: usize) -> Self {
        SpinorField { values: vec![[CZERO; 2]; n] }
    }

    pub fn values(&self) -> &[[C64; 2]] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Lumped `∫ w |ψ|² dx` for per-vertex weights `w`.
    pub fn weighted_norm_sq(&self, w: &[f64]) -> f64 {
        self.values.iter().zip(w).map(|(v, w)| w * (v[0].norm_sqr() + v[1].norm_sqr())).sum()
    }
}

/// ψ̃ = e^{−δφ/2} ψ, the spinor identification under g̃ = e^{2δφ} g.
pub fn conformal_push(psi: &SpinorField, dphi: &ConformalFactor) -> Result<SpinorField> {
    if psi.len() != dphi.len() {
        return Err(Error::Input(format!("spinor has {} vertices, factor has {}", psi.len(), dphi.len())));
    }
    let values = psi
        .values
        .iter()
        .zip(dphi.values())
        .map(|(v, d)| {
            let s = (-0.5 * d).exp();
            [v[0] * s, v[1] * s]
        })
        .collect();
    Ok(SpinorField { values })
}

/// Constrained degrees of freedom: two per interior vertex, one per boundary
/// vertex along the admissible line of n⃗·G.
#[derive(Clone, Debug)]
pub struct SpinorDofs {
    sign: ChiralitySign,
    offsets: Vec<usize>,
    boundary_vectors: Vec<Option<[C64; 2]>>,
    vertex_of: Vec<usize>,
}

impl SpinorDofs {
    pub fn new(mesh: &TriMesh, frame: &CliffordFrame, sign: ChiralitySign) -> Result<Self> {
        let n = mesh.num_vertices();
        let mut offsets = Vec::with_capacity(n);
        let mut boundary_vectors = Vec::with_capacity(n);
        let mut vertex_of = Vec::with_capacity(2 * n);
        for v in 0..n {
            offsets.push(vertex_of.len());
            match mesh.boundary_vertex(v) {
                Some(bv) => {
                    boundary_vectors.push(Some(frame.admissible_vector(bv.normal, sign)?));
                    vertex_of.push(v);
                }
                None => {
                    boundary_vectors.push(None);
                    vertex_of.extend([v, v]);
                }
            }
        }
        Ok(SpinorDofs { sign, offsets, boundary_vectors, vertex_of })
    }

    pub fn sign(&self) -> ChiralitySign {
        self.sign
    }

    pub fn num_dofs(&self) -> usize {
        self.vertex_of.len()
    }

    pub fn num_vertices(&self) -> usize {
        self.offsets.len()
    }

    pub fn vertex_of(&self, dof: usize) -> usize {
        self.vertex_of[dof]
    }

    /// (dof, spinor direction) pairs spanning the admissible values at vertex `v`.
    pub fn local(&self, v: usize) -> impl Iterator<Item = (usize, [C64; 2])> + '_ {
        let o = self.offsets[v];
        let (first, second) = match self.boundary_vectors[v] {
            Some(e) => ((o, e), None),
            None => ((o, [CONE, CZERO]), Some((o + 1, [CZERO, CONE]))),
        };
        std::iter::once(first).chain(second)
    }

    /// Per-dof copy of a per-vertex weight.
    pub fn expand_weights(&self, w: &[f64]) -> Vec<f64> {
        self.vertex_of.iter().map(|&v| w[v]).collect()
    }

    /// Admissible coefficients of a nodal spinor; boundary values are projected onto the admissible line.
    pub fn restrict(&self, psi: &SpinorField) -> Result<Vec<C64>> {
        if psi.len() != self.num_vertices() {
            return Err(Error::Input(format!("spinor has {} vertices, dof map has {}", psi.len(), self.num_vertices())));
        }
        let mut x = vec![CZERO; self.num_dofs()];
        for (v, val) in psi.values.iter().enumerate() {
            for (d, e) in self.local(v) {
                x[d] = e[0].conj() * val[0] + e[1].conj() * val[1];
            }
        }
        Ok(x)
    }

    pub fn prolong(&self, x: &[C64]) -> SpinorField {
        assert_eq!(x.len(), self.num_dofs());
        let mut values = vec![[CZERO; 2]; self.num_vertices()];
        for (v, val) in values.iter_mut().enumerate() {
            for (d, e) in self.local(v) {
                val[0] += e[0] * x[d];
                val[1] += e[1] * x[d];
            }
        }
        SpinorField { values }
    }
}
