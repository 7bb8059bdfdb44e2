//! Damped Newton on the full discrete Euler-Lagrange system
//!
//! `F_u = 0`, `(A − ρW_u)ψ = 0`,
//!
//! in real coordinates `(u, Re ψ, Im ψ)`. The Jacobian is the symmetric Hessian of E/2
//! rescaled to `(F_u, 2 Re r, 2 Im r)`; for ψ ≠ 0 it is bordered with the phase direction
//! `iψ` to remove the U(1) gauge kernel.

use faer::linalg::solvers::Solve;
use faer::Mat;

use super::{CoupledState, CoupledSystem};
use crate::error::{Error, Result};
use crate::linalg::C64;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Basin {
    Trivial,
    NonTrivial,
}

impl Basin {
    pub fn as_str(self) -> &'static str {
        match self {
            Basin::Trivial => "trivial",
            Basin::NonTrivial => "nontrivial",
        }
    }
}

#[derive(Clone, Debug)]
pub struct NewtonOutcome {
    pub state: CoupledState,
    pub iterations: usize,
    /// Joint residual before each iteration and at the end.
    pub residuals: Vec<f64>,
    pub basin: Basin,
    /// Every accepted iterate, seed first.
    pub history: Vec<CoupledState>,
}

/// Spinors below this weighted norm are not gauge-bordered.
const GAUGE_THRESHOLD: f64 = 1e-10;
const MAX_HALVINGS: usize = 12;

fn residual_vector(system: &CoupledSystem<'_>, u: &[f64], psi: &[C64], bordered: bool) -> Result<Vec<f64>> {
    let fu = system.scalar_equation(u, psi)?;
    let r = system.spinor_equation(u, psi);
    let mut out = fu;
    out.extend(r.iter().map(|v| 2.0 * v.re));
    out.extend(r.iter().map(|v| 2.0 * v.im));
    if bordered {
        out.push(0.0);
    }
    Ok(out)
}

fn jacobian(system: &CoupledSystem<'_>, u: &[f64], psi: &[C64], bordered: bool) -> Mat<f64> {
    let nv = u.len();
    let n = psi.len();
    let size = nv + 2 * n + usize::from(bordered);
    let mut j = Mat::<f64>::zeros(size, size);
    let rho = system.rho();
    let stiff = system.problem().ops().stiffness();
    for v in 0..nv {
        for (c, val) in stiff.row(v) {
            j[(v, c)] += val;
        }
    }
    let diag = system.problem().hessian_diagonal(u);
    let q = system.vertex_density(psi);
    for v in 0..nv {
        j[(v, v)] += diag[v] - rho * u[v].exp() * q[v];
    }
    let dofs = system.dirac().dofs();
    let mass = system.dirac().mass();
    let w = system.spinor_weights(u);
    for d in 0..n {
        let v = dofs.vertex_of(d);
        let c = -2.0 * rho * u[v].exp() * mass[d];
        let (x, y) = (psi[d].re, psi[d].im);
        j[(v, nv + d)] = c * x;
        j[(nv + d, v)] = c * x;
        j[(v, nv + n + d)] = c * y;
        j[(nv + n + d, v)] = c * y;
    }
    let a = system.dense_operator();
    for col in 0..n {
        for row in 0..n {
            let z = a[(row, col)];
            j[(nv + row, nv + col)] = 2.0 * z.re;
            j[(nv + row, nv + n + col)] = -2.0 * z.im;
            j[(nv + n + row, nv + col)] = 2.0 * z.im;
            j[(nv + n + row, nv + n + col)] = 2.0 * z.re;
        }
    }
    for d in 0..n {
        j[(nv + d, nv + d)] -= 2.0 * rho * w[d];
        j[(nv + n + d, nv + n + d)] -= 2.0 * rho * w[d];
    }
    if bordered {
        let norm = psi.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        let last = size - 1;
        for d in 0..n {
            let (tx, ty) = (-psi[d].im / norm, psi[d].re / norm);
            j[(nv + d, last)] = tx;
            j[(last, nv + d)] = tx;
            j[(nv + n + d, last)] = ty;
            j[(last, nv + n + d)] = ty;
        }
    }
    j
}

fn singular(system: &CoupledSystem<'_>) -> Error {
    let (index, eigenvalue) = system.basis().nearest(system.rho());
    Error::SingularJacobian { rho: system.rho(), eigenvalue, index }
}

/// Newton from `seed` until the joint residual is at most `tol`.
pub fn newton_refine(system: &CoupledSystem<'_>, seed: &CoupledState, tol: f64, max_iter: usize) -> Result<NewtonOutcome> {
    let nv = system.num_vertices();
    let n = system.num_dofs();
    let mut state = system.state(seed.u.clone(), seed.psi.clone())?;
    let mut residuals = vec![state.el_residual()];
    let mut history = vec![state.clone()];
    let mut trace = Vec::new();
    let mut iterations = 0;
    while state.el_residual() > tol {
        if iterations == max_iter {
            return Err(Error::solver(
                format!("Newton did not reach residual {tol:e} in {max_iter} iterations (last {:e})", state.el_residual()),
                trace,
            ));
        }
        let bordered = state.spinor_norm > GAUGE_THRESHOLD;
        let rhs = residual_vector(system, &state.u, &state.psi, bordered)?;
        let jac = jacobian(system, &state.u, &state.psi, bordered);
        let b = Mat::from_fn(rhs.len(), 1, |i, _| -rhs[i]);
        let step = jac.partial_piv_lu().solve(&b);
        let check = &jac * &step - &b;
        let bnorm = b.norm_l2();
        let lin_res = check.norm_l2() / bnorm.max(f64::MIN_POSITIVE);
        let snorm = step.norm_l2();
        if !(snorm.is_finite() && lin_res <= 1e-6 && snorm <= 1e8) {
            return Err(singular(system));
        }
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..=MAX_HALVINGS {
            let u: Vec<f64> = (0..nv).map(|i| state.u[i] + alpha * step[(i, 0)]).collect();
            let psi: Vec<C64> =
                (0..n).map(|d| state.psi[d] + C64::new(step[(nv + d, 0)], step[(nv + n + d, 0)]) * alpha).collect();
            if let Ok(trial) = system.state(u, psi) {
                if trial.el_residual() < (1.0 - 1e-4 * alpha) * state.el_residual() {
                    accepted = Some(trial);
                    break;
                }
            }
            alpha *= 0.5;
        }
        iterations += 1;
        let Some(next) = accepted else {
            trace.push(format!("iteration {iterations}: no decrease along the Newton direction"));
            return Err(Error::solver(
                format!("Newton line search failed at residual {:e}", state.el_residual()),
                trace,
            ));
        };
        trace.push(format!("iteration {iterations}: step {alpha}, residual {:e}", next.el_residual()));
        state = next;
        residuals.push(state.el_residual());
        history.push(state.clone());
    }
    let basin = if state.is_nontrivial() { Basin::NonTrivial } else { Basin::Trivial };
    Ok(NewtonOutcome { state, iterations, residuals, basin, history })
}
