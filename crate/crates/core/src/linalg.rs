//! Small linear-algebra layer: a compressed sparse row matrix, preconditioned
//! conjugate gradients, and thin wrappers over faer's dense kernels.

use faer::linalg::matmul::matmul;
use faer::{Accum, Mat, MatMut, MatRef, Par, Side};
use num_complex::Complex64;
use std::ops::{Add, AddAssign, Mul, Sub};

use crate::error::{Error, Result};

pub type C64 = Complex64;

pub const CZERO: C64 = C64::new(0.0, 0.0);
pub const CONE: C64 = C64::new(1.0, 0.0);

/// Runs faer's dense kernels on one thread, so results do not depend on the core count.
pub fn use_sequential_kernels() {
    faer::set_global_parallelism(Par::Seq);
}

/// Field scalars used by the sparse and iterative routines.
pub trait Scalar:
    Copy + Default + PartialEq + Add<Output = Self> + AddAssign + Sub<Output = Self> + Mul<Output = Self> + std::fmt::Debug + Send + Sync
{
    fn conj(self) -> Self;
    fn abs2(self) -> f64;
    fn scale(self, s: f64) -> Self;
    fn from_real(r: f64) -> Self;
    fn re(self) -> f64;
}

impl Scalar for f64 {
    fn conj(self) -> Self {
        self
    }
    fn abs2(self) -> f64 {
        self * self
    }
    fn scale(self, s: f64) -> Self {
        self * s
    }
    fn from_real(r: f64) -> Self {
        r
    }
    fn re(self) -> f64 {
        self
    }
}

impl Scalar for C64 {
    fn conj(self) -> Self {
        Complex64::conj(&self)
    }
    fn abs2(self) -> f64 {
        self.norm_sqr()
    }
    fn scale(self, s: f64) -> Self {
        self * s
    }
    fn from_real(r: f64) -> Self {
        C64::new(r, 0.0)
    }
    fn re(self) -> f64 {
        self.re
    }
}

/// Hermitian inner product `xᴴ y`.
pub fn dot<T: Scalar>(x: &[T], y: &[T]) -> T {
    debug_assert_eq!(x.len(), y.len());
    let mut s = T::default();
    for (a, b) in x.iter().zip(y) {
        s += a.conj() * *b;
    }
    s
}

pub fn norm2<T: Scalar>(x: &[T]) -> f64 {
    x.iter().map(|v| v.abs2()).sum::<f64>().sqrt()
}

#[derive(Clone, Debug)]
pub struct CsrMatrix<T> {
    nrows: usize,
    ncols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<T>,
}

impl<T: Scalar> CsrMatrix<T> {
    /// Builds from (row, col, value) triplets; duplicates are summed.
    pub fn from_triplets(nrows: usize, ncols: usize, mut triplets: Vec<(usize, usize, T)>) -> Self {
        triplets.sort_by_key(|t| (t.0, t.1));
        let mut indptr = vec![0usize; nrows + 1];
        let mut indices = Vec::with_capacity(triplets.len());
        let mut values: Vec<T> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in triplets {
            assert!(r < nrows && c < ncols, "triplet ({r}, {c}) out of bounds");
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                indices.push(c);
                values.push(v);
                indptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for i in 0..nrows {
            indptr[i + 1] += indptr[i];
        }
        CsrMatrix { nrows, ncols, indptr, indices, values }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, T)> + '_ {
        let (a, b) = (self.indptr[i], self.indptr[i + 1]);
        self.indices[a..b].iter().copied().zip(self.values[a..b].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        self.row(i).find(|&(c, _)| c == j).map(|(_, v)| v).unwrap_or_default()
    }

    pub fn matvec_into(&self, x: &[T], y: &mut [T]) {
        assert_eq!(x.len(), self.ncols);
        assert_eq!(y.len(), self.nrows);
        for (i, yi) in y.iter_mut().enumerate() {
            let mut s = T::default();
            for k in self.indptr[i]..self.indptr[i + 1] {
                s += self.values[k] * x[self.indices[k]];
            }
            *yi = s;
        }
    }

    pub fn matvec(&self, x: &[T]) -> Vec<T> {
        let mut y = vec![T::default(); self.nrows];
        self.matvec_into(x, &mut y);
        y
    }

    pub fn diagonal(&self) -> Vec<T> {
        (0..self.nrows.min(self.ncols)).map(|i| self.get(i, i)).collect()
    }

    /// `xᴴ A y`.
    pub fn form(&self, x: &[T], y: &[T]) -> T {
        dot(x, &self.matvec(y))
    }

    pub fn adjoint(&self) -> Self {
        let mut t = Vec::with_capacity(self.nnz());
        for i in 0..self.nrows {
            for (j, v) in self.row(i) {
                t.push((j, i, v.conj()));
            }
        }
        CsrMatrix::from_triplets(self.ncols, self.nrows, t)
    }

    /// ½(A + Aᴴ).
    pub fn hermitian_part(&self) -> Self {
        let mut t = Vec::with_capacity(2 * self.nnz());
        for i in 0..self.nrows {
            for (j, v) in self.row(i) {
                t.push((i, j, v.scale(0.5)));
                t.push((j, i, v.conj().scale(0.5)));
            }
        }
        CsrMatrix::from_triplets(self.nrows, self.ncols, t)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.values.iter().map(|v| v.abs2()).sum::<f64>().sqrt()
    }

    /// ‖A − Aᴴ‖_F / ‖A‖_F.
    pub fn hermitian_defect(&self) -> f64 {
        let adj = self.adjoint();
        let mut t = Vec::with_capacity(2 * self.nnz());
        for i in 0..self.nrows {
            for (j, v) in self.row(i) {
                t.push((i, j, v));
            }
            for (j, v) in adj.row(i) {
                t.push((i, j, T::default() - v));
            }
        }
        let diff = CsrMatrix::from_triplets(self.nrows, self.ncols, t);
        let n = self.frobenius_norm();
        if n == 0.0 {
            0.0
        } else {
            diff.frobenius_norm() / n
        }
    }
}

impl CsrMatrix<f64> {
    pub fn to_dense(&self) -> Mat<f64> {
        let mut m = Mat::<f64>::zeros(self.nrows, self.ncols);
        for i in 0..self.nrows {
            for (j, v) in self.row(i) {
                m[(i, j)] += v;
            }
        }
        m
    }
}

impl CsrMatrix<C64> {
    pub fn to_dense(&self) -> Mat<C64> {
        let mut m = Mat::<C64>::zeros(self.nrows, self.ncols);
        for i in 0..self.nrows {
            for (j, v) in self.row(i) {
                m[(i, j)] += v;
            }
        }
        m
    }
}

#[derive(Clone, Copy, Debug)]
pub struct CgInfo {
    pub iterations: usize,
    pub relative_residual: f64,
}

/// Jacobi-preconditioned conjugate gradients for a Hermitian positive definite
/// operator. `x` holds the initial guess on entry.
pub fn pcg<T: Scalar>(
    apply: impl Fn(&[T], &mut [T]),
    inv_diag: &[f64],
    b: &[T],
    x: &mut [T],
    rel_tol: f64,
    max_iter: usize,
) -> Result<CgInfo> {
    let n = b.len();
    let bnorm = norm2(b);
    if bnorm == 0.0 {
        x.iter_mut().for_each(|v| *v = T::default());
        return Ok(CgInfo { iterations: 0, relative_residual: 0.0 });
    }
    let mut ax = vec![T::default(); n];
    apply(x, &mut ax);
    let mut r: Vec<T> = b.iter().zip(&ax).map(|(bi, ai)| *bi - *ai).collect();
    let mut z: Vec<T> = r.iter().zip(inv_diag).map(|(ri, d)| ri.scale(*d)).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z).re();
    let mut ap = vec![T::default(); n];
    for it in 0..max_iter {
        let rel = norm2(&r) / bnorm;
        if rel <= rel_tol {
            return Ok(CgInfo { iterations: it, relative_residual: rel });
        }
        apply(&p, &mut ap);
        let pap = dot(&p, &ap).re();
        if !(pap > 0.0) {
            return Err(Error::solver(
                format!("conjugate gradients met non-positive curvature {pap:e}"),
                vec![format!("iteration {it}, relative residual {rel:e}")],
            ));
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += p[i].scale(alpha);
            r[i] = r[i] - ap[i].scale(alpha);
        }
        for i in 0..n {
            z[i] = r[i].scale(inv_diag[i]);
        }
        let rz_new = dot(&r, &z).re();
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + p[i].scale(beta);
        }
    }
    let rel = norm2(&r) / bnorm;
    if rel <= rel_tol * 100.0 {
        return Ok(CgInfo { iterations: max_iter, relative_residual: rel });
    }
    Err(Error::solver(
        format!("conjugate gradients did not converge in {max_iter} iterations"),
        vec![format!("final relative residual {rel:e}")],
    ))
}

/// Solves `A x = b` for a sparse symmetric positive definite `A` plus an optional diagonal shift.
pub fn solve_spd(a: &CsrMatrix<f64>, shift: Option<&[f64]>, b: &[f64], rel_tol: f64) -> Result<Vec<f64>> {
    let n = b.len();
    let mut diag = a.diagonal();
    if let Some(s) = shift {
        for i in 0..n {
            diag[i] += s[i];
        }
    }
    let inv: Vec<f64> = diag.iter().map(|d| if *d > 0.0 { 1.0 / d } else { 1.0 }).collect();
    let mut x = vec![0.0; n];
    pcg(
        |v, out| {
            a.matvec_into(v, out);
            if let Some(s) = shift {
                for i in 0..n {
                    out[i] += s[i] * v[i];
                }
            }
        },
        &inv,
        b,
        &mut x,
        rel_tol,
        20 * n + 100,
    )?;
    Ok(x)
}

pub fn matvec(a: MatRef<'_, C64>, x: &[C64]) -> Vec<C64> {
    assert_eq!(a.ncols(), x.len());
    let mut y = vec![CZERO; a.nrows()];
    matmul(
        MatMut::from_column_major_slice_mut(&mut y, a.nrows(), 1),
        Accum::Replace,
        a,
        MatRef::from_column_major_slice(x, x.len(), 1),
        CONE,
        Par::Seq,
    );
    y
}

/// `Aᴴ x`.
pub fn matvec_adjoint(a: MatRef<'_, C64>, x: &[C64]) -> Vec<C64> {
    assert_eq!(a.nrows(), x.len());
    let mut y = vec![CZERO; a.ncols()];
    matmul(
        MatMut::from_column_major_slice_mut(&mut y, a.ncols(), 1),
        Accum::Replace,
        a.adjoint(),
        MatRef::from_column_major_slice(x, x.len(), 1),
        CONE,
        Par::Seq,
    );
    y
}

/// Dense product into a new matrix; either factor may be a conjugated view.
pub fn matmul_new<L, R>(a: MatRef<'_, L>, b: MatRef<'_, R>) -> Mat<C64>
where
    L: faer::traits::Conjugate<Canonical = C64>,
    R: faer::traits::Conjugate<Canonical = C64>,
{
    let mut c = Mat::<C64>::zeros(a.nrows(), b.ncols());
    matmul(c.as_mut(), Accum::Replace, a, b, CONE, Par::Seq);
    c
}

/// Eigenpairs of a dense Hermitian matrix, eigenvalues ascending.
pub fn hermitian_eigen(a: MatRef<'_, C64>) -> Result<(Vec<f64>, Mat<C64>)> {
    let evd = a
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::Eigen(format!("dense Hermitian eigensolver failed: {e:?}")))?;
    let s = evd.S();
    let vals: Vec<f64> = (0..a.nrows()).map(|i| s[i].re).collect();
    Ok((vals, evd.U().to_owned()))
}

/// Forces exact Hermitian symmetry in place.
pub fn symmetrize(a: &mut Mat<C64>) {
    let n = a.nrows();
    for j in 0..n {
        a[(j, j)] = C64::new(a[(j, j)].re, 0.0);
        for i in (j + 1)..n {
            let v = (a[(i, j)] + a[(j, i)].conj()) * 0.5;
            a[(i, j)] = v;
            a[(j, i)] = v.conj();
        }
    }
}
