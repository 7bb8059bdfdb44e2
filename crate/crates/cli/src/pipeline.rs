//! The shared front half of every command: mesh, normalized metric, coefficients, f,
//! Dirac operator, weighted spectrum and ρ.

use superliouville::geometry::{build_pair_of_pants, ConformalFactor, TriMesh};
use superliouville::liouville::{normalize_metric, solve_liouville, LiouvilleProblem, LiouvilleSolution};
use superliouville::spectral::{solve_weighted_spectrum, ModeCount, SpectralBasis};
use superliouville::spinor::{assemble_dirac, DiracOperator};

use crate::config::{GeometryConfig, RhoSpec, RunConfig, SignReport};
use crate::io::mesh_from_text;
use crate::CliError;

pub fn build_mesh(g: &GeometryConfig, target_h: f64) -> Result<TriMesh, CliError> {
    Ok(build_pair_of_pants(g.outer_radius, g.hole_centers, g.hole_radii, target_h, g.seed)?)
}

/// The mesh file when configured, otherwise the generated mesh at `target_h`.
pub fn configured_mesh(g: &GeometryConfig) -> Result<TriMesh, CliError> {
    match &g.mesh_file {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::Input(format!("cannot read {}: {e}", p.display())))?;
            mesh_from_text(&text)
        }
        None => build_mesh(g, g.target_h),
    }
}

/// Smooth non-flat metric for Gauss-Bonnet reports. The flat metric satisfies the
/// discrete identity exactly, and the normalized metric only has first-order boundary
/// curvature, so neither shows the quadrature error cleanly.
pub fn gauss_bonnet_metric(mesh: &TriMesh) -> Result<ConformalFactor, CliError> {
    Ok(ConformalFactor::from_fn(mesh, |x, y| 0.3 * (2.0 * x).sin() + 0.2 * y * y)?)
}

pub struct Scalar {
    pub mesh: TriMesh,
    pub phi: ConformalFactor,
    pub problem: LiouvilleProblem,
    pub solution: LiouvilleSolution,
    pub h_sign: SignReport,
    pub lambda_sign: SignReport,
}

/// Sign reports for the configured coefficients on `mesh`.
pub fn sign_reports(cfg: &RunConfig, mesh: &TriMesh) -> (SignReport, SignReport) {
    cfg.coefficients.sign_reports(mesh, cfg.geometry.outer_radius)
}

/// Mesh through f. Coefficients failing the sampled sign test are rejected as input.
pub fn scalar(cfg: &RunConfig) -> Result<Scalar, CliError> {
    let mesh = configured_mesh(&cfg.geometry)?;
    scalar_on(cfg, mesh)
}

pub fn scalar_on(cfg: &RunConfig, mesh: TriMesh) -> Result<Scalar, CliError> {
    let (h_sign, lambda_sign) = sign_reports(cfg, &mesh);
    if !h_sign.sampled_ok() {
        return Err(CliError::Input(format!("h must be ≤ 0 on the mesh, sampled max {}", h_sign.sampled_max)));
    }
    if !lambda_sign.sampled_ok() {
        return Err(CliError::Input(format!("lambda must be ≤ 0 on the boundary, sampled max {}", lambda_sign.sampled_max)));
    }
    let phi = normalize_metric(&mesh, &ConformalFactor::flat(mesh.num_vertices()))?;
    let (h, lambda) = cfg.coefficients.sample(&mesh);
    let problem = LiouvilleProblem::normalized(&mesh, &phi, h, lambda)?;
    let solution = solve_liouville(&problem, None, cfg.tolerances.liouville)?;
    Ok(Scalar { mesh, phi, problem, solution, h_sign, lambda_sign })
}

pub struct Spectral {
    pub dirac: DiracOperator,
    pub basis: SpectralBasis,
}

pub fn spectral(cfg: &RunConfig, s: &Scalar) -> Result<Spectral, CliError> {
    let dirac = assemble_dirac(&s.mesh, &s.phi, cfg.dirac.sign()?)?;
    let basis = solve_weighted_spectrum(&dirac, &s.solution.f, ModeCount::All)?;
    Ok(Spectral { dirac, basis })
}

/// Absolute ρ, or `λ_k + t (λ_{k+1} − λ_k)` with λ₀ = 0.
pub fn resolve_rho(spec: RhoSpec, basis: &SpectralBasis) -> Result<f64, CliError> {
    match spec {
        RhoSpec::Absolute(v) => Ok(v),
        RhoSpec::Spectral { between, fraction } => {
            let lam = |k: usize| -> Result<f64, CliError> {
                if k == 0 {
                    return Ok(0.0);
                }
                basis.eigenvalue(k as i64).ok_or_else(|| {
                    CliError::Input(format!("rho.between = {between} but only {} positive eigenvalues exist", basis.num_positive()))
                })
            };
            let (lo, hi) = (lam(between)?, lam(between + 1)?);
            Ok(lo + fraction * (hi - lo))
        }
    }
}
