//! Property checks on the configured problem, written as `verify.json` and `verify.txt`.
//!
//! Checks that need a refined mesh are "convergence-gated": `--coarse` builds a coarse
//! mesh instead of the configured one and marks them skipped.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use superliouville::fields::{FourierField, FourierSpinor};
use superliouville::geometry::{gauss_bonnet_defect, ConformalFactor};
use superliouville::linalg::{C64, CZERO};
use superliouville::liouville::solve_liouville;
use superliouville::nehari::CoupledSystem;
use superliouville::spectral::{solve_weighted_spectrum, ModeCount};
use superliouville::spinor::covariance_defect;

use crate::commands::prepare_dir;
use crate::config::RunConfig;
use crate::io::{write_json, write_text};
use crate::pipeline::{self, Scalar, Spectral};
use crate::CliError;

/// Mesh size used by `--coarse`.
const COARSE_H: f64 = 0.3;

#[derive(Clone, Copy, Debug, Serialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Pass,
    Fail,
    Skipped,
}

#[derive(Clone, Debug, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub status: Status,
    pub detail: String,
}

fn check(name: &'static str, pass: bool, detail: String) -> Check {
    Check { name, status: if pass { Status::Pass } else { Status::Fail }, detail }
}

fn skipped(name: &'static str, why: &str) -> Check {
    Check { name, status: Status::Skipped, detail: why.to_string() }
}

fn failed(name: &'static str, e: impl std::fmt::Display) -> Check {
    Check { name, status: Status::Fail, detail: e.to_string() }
}

const SOLVER_CHECKS: [&str; 9] = [
    "liouville_solution",
    "liouville_uniqueness",
    "dirac_self_adjoint",
    "spectrum_orthonormality",
    "spectrum_shift_law",
    "trivial_branch",
    "gradient_check",
    "single_mode_energy_law",
    "nehari_projection",
];

fn hypotheses(cfg: &RunConfig, coarse: bool) -> Result<(Check, superliouville::geometry::TriMesh), CliError> {
    let mesh = if coarse {
        pipeline::build_mesh(&cfg.geometry, cfg.geometry.target_h.max(COARSE_H))?
    } else {
        pipeline::configured_mesh(&cfg.geometry)?
    };
    let (hs, ls) = pipeline::sign_reports(cfg, &mesh);
    let chi = mesh.euler_characteristic();
    let c = check(
        "liouville_hypotheses",
        chi < 0 && hs.sampled_ok() && ls.sampled_ok(),
        format!(
            "chi = {chi}; max h on vertices {:.4e} (interval bound {:.4e}, certified {}); max lambda on boundary {:.4e} (interval bound {:.4e}, certified {})",
            hs.sampled_max,
            hs.interval_bound,
            hs.certified(),
            ls.sampled_max,
            ls.interval_bound,
            ls.certified()
        ),
    );
    Ok((c, mesh))
}

fn gauss_bonnet(mesh: &superliouville::geometry::TriMesh) -> Check {
    let scale = 2.0 * std::f64::consts::PI * (mesh.euler_characteristic() as f64).abs();
    let defect = pipeline::gauss_bonnet_metric(mesh).and_then(|phi| Ok(gauss_bonnet_defect(mesh, &phi)?));
    match defect {
        Ok(d) => check("gauss_bonnet", d.abs() <= 0.05 * scale, format!("test metric: defect {d:.4e}, bound {:.4e}", 0.05 * scale)),
        Err(e) => failed("gauss_bonnet", e),
    }
}

fn liouville_solution(cfg: &RunConfig, s: &Scalar) -> Check {
    let sol = &s.solution;
    let pd = sol.certificate.min_eigenvalue > 0.0 && sol.certificate.cholesky != Some(false);
    check(
        "liouville_solution",
        sol.residual_norm <= 100.0 * cfg.tolerances.liouville && pd,
        format!(
            "residual {:.3e} after {} steps, Hessian min eigenvalue {:.4e}, Cholesky {:?}",
            sol.residual_norm, sol.iterations, sol.certificate.min_eigenvalue, sol.certificate.cholesky
        ),
    )
}

fn liouville_uniqueness(cfg: &RunConfig, s: &Scalar, rng: &mut ChaCha8Rng) -> Check {
    let ops = s.problem.ops();
    let mut worst = 0.0f64;
    for _ in 0..2 {
        let init: Vec<f64> = FourierField::random(rng, 8, 4.0).sample(s.mesh.vertices()).iter().map(|v| 2.0 * v).collect();
        match solve_liouville(&s.problem, Some(&init), cfg.tolerances.liouville) {
            Ok(other) => {
                let d: Vec<f64> = other.f.iter().zip(&s.solution.f).map(|(a, b)| a - b).collect();
                worst = worst.max(ops.h1_norm(&d));
            }
            Err(e) => return failed("liouville_uniqueness", e),
        }
    }
    check("liouville_uniqueness", worst <= 1e-6, format!("max H1 distance from two random starts {worst:.3e}"))
}

fn random_dofs(rng: &mut ChaCha8Rng, n: usize, amp: f64) -> Vec<C64> {
    (0..n).map(|_| C64::new(rng.gen_range(-amp..amp), rng.gen_range(-amp..amp))).collect()
}

fn dirac_self_adjoint(s: &Scalar, sp: &Spectral, rng: &mut ChaCha8Rng) -> Check {
    let d = &sp.dirac;
    let a = d.to_dense();
    let hermitian = (0..a.nrows()).all(|i| (0..=i).all(|j| a[(i, j)] == a[(j, i)].conj()));
    let pairing = (0..20)
        .map(|_| {
            let x = random_dofs(rng, d.num_dofs(), 1.0);
            let y = random_dofs(rng, d.num_dofs(), 1.0);
            d.boundary_pairing(&s.mesh, &x, &y).norm()
        })
        .fold(0.0f64, f64::max);
    let gap = d.min_abs_eigenvalue();
    check(
        "dirac_self_adjoint",
        hermitian && pairing <= 1e-10 && gap > 0.0,
        format!("exactly Hermitian {hermitian}, max boundary pairing {pairing:.3e}, min |eigenvalue| {gap:.4e}"),
    )
}

fn spectrum_shift_law(s: &Scalar, sp: &Spectral) -> Check {
    let c = 0.3;
    let shifted: Vec<f64> = s.solution.f.iter().map(|v| v + c).collect();
    let other = match solve_weighted_spectrum(&sp.dirac, &shifted, ModeCount::All) {
        Ok(b) => b,
        Err(e) => return failed("spectrum_shift_law", e),
    };
    let worst = [-3i64, -2, -1, 1, 2, 3, 4, 5]
        .iter()
        .filter_map(|&j| Some((sp.basis.eigenvalue(j)?, other.eigenvalue(j)?)))
        .map(|(l, ls)| (ls - (-c).exp() * l).abs() / l.abs())
        .fold(0.0f64, f64::max);
    check("spectrum_shift_law", worst <= 1e-8, format!("max relative deviation from e^(-c) lambda at c = {c}: {worst:.3e}"))
}

fn coupled_checks(s: &Scalar, sp: &Spectral, rng: &mut ChaCha8Rng, out: &mut Vec<Check>) -> Result<(), CliError> {
    let l1 = sp.basis.eigenvalue(1).ok_or_else(|| CliError::Solver("weighted spectrum has no positive mode".into()))?;
    let l2 = sp.basis.eigenvalue(2).unwrap_or(2.0 * l1);
    // Non-resonant by construction: strictly inside (λ₁, λ₂).
    let rho = 0.5 * (l1 + l2);
    let sys = CoupledSystem::new(&s.problem, &sp.dirac, &sp.basis, rho)?;
    let n = sys.num_dofs();

    let triv = sys.trivial_state()?;
    out.push(check(
        "trivial_branch",
        triv.el_residual() <= 1e-10 && triv.energy == sys.trivial_energy(),
        format!("(f, 0) has EL residual {:.3e}", triv.el_residual()),
    ));

    let step = 1e-5;
    let mut worst = 0.0f64;
    for _ in 0..3 {
        let u: Vec<f64> =
            sys.f().iter().zip(FourierField::random(rng, 8, 4.0).sample(s.mesh.vertices())).map(|(f, d)| f + 0.5 * d).collect();
        let psi = random_dofs(rng, n, 0.3);
        let g = sys.gradient(&u, &psi)?;
        for _ in 0..3 {
            let du = FourierField::random(rng, 8, 4.0).sample(s.mesh.vertices());
            let dpsi = random_dofs(rng, n, 1.0);
            let at = |t: f64| -> Result<f64, CliError> {
                let uu: Vec<f64> = u.iter().zip(&du).map(|(a, b)| a + t * b).collect();
                let pp: Vec<C64> = psi.iter().zip(&dpsi).map(|(a, b)| a + b * t).collect();
                Ok(sys.energy(&uu, &pp)?.total)
            };
            let fd = (at(step)? - at(-step)?) / (2.0 * step);
            let an: f64 = g.u.iter().zip(&du).map(|(a, b)| a * b).sum::<f64>()
                + g.psi.iter().zip(&dpsi).map(|(a, b)| (a.conj() * b).re).sum::<f64>();
            worst = worst.max((fd - an).abs() / an.abs().max(1.0));
        }
    }
    out.push(check("gradient_check", worst <= 1e-6, format!("max relative error over 9 directions {worst:.3e}")));

    let mut law = 0.0f64;
    for j in [-2i64, -1, 1, 2, 3] {
        let phi = sp.basis.mode(j).expect("complete basis");
        let lam = sp.basis.eigenvalue(j).expect("complete basis");
        let s_amp = 0.7;
        let psi: Vec<C64> = phi.iter().map(|z| z * s_amp).collect();
        let e = sys.energy(sys.f(), &psi)?.total - sys.trivial_energy();
        let want = 2.0 * s_amp * s_amp * (lam - rho);
        law = law.max((e - want).abs() / want.abs().max(1.0));
    }
    out.push(check("single_mode_energy_law", law <= 1e-10, format!("max relative deviation {law:.3e} over 5 modes")));

    let np = sp.basis.num_positive();
    let mut proj = 0.0f64;
    for _ in 0..3 {
        let u: Vec<f64> =
            sys.f().iter().zip(FourierField::random(rng, 8, 4.0).sample(s.mesh.vertices())).map(|(f, d)| f + 0.4 * d).collect();
        let ap: Vec<C64> =
            (0..np).map(|j| if j < 12 { C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)) } else { CZERO }).collect();
        let psi = sys.project_to_nehari(&u, &ap)?;
        proj = proj.max(sys.nehari_residual(&u, &psi)?.sup_norm);
    }
    out.push(check("nehari_projection", proj <= 1e-9, format!("max constraint residual after projection {proj:.3e}")));
    Ok(())
}

fn gated(cfg: &RunConfig, coarse: bool, rng: &mut ChaCha8Rng, out: &mut Vec<Check>) -> Result<(), CliError> {
    const WHY: &str = "convergence-gated; skipped on a coarse mesh";
    if coarse {
        out.push(skipped("gauss_bonnet_convergence", WHY));
        out.push(skipped("conformal_covariance_rate", WHY));
        return Ok(());
    }
    let h = cfg.geometry.target_h;
    let meshes = [pipeline::build_mesh(&cfg.geometry, h)?, pipeline::build_mesh(&cfg.geometry, 0.5 * h)?];
    let mut gb = [0.0; 2];
    for (k, m) in meshes.iter().enumerate() {
        gb[k] = gauss_bonnet_defect(m, &pipeline::gauss_bonnet_metric(m)?)?.abs();
    }
    out.push(check(
        "gauss_bonnet_convergence",
        gb[1] < gb[0],
        format!("defect {:.4e} at h, {:.4e} at h/2 for a non-flat metric", gb[0], gb[1]),
    ));
    let spinor = FourierSpinor::random(rng, 6, 3.0);
    let mut d = [0.0; 2];
    for (k, m) in meshes.iter().enumerate() {
        let base = ConformalFactor::from_fn(m, |x, y| 0.3 * x * y)?;
        let dphi = ConformalFactor::from_fn(m, |x, y| 0.5 * x.sin() + 0.3 * y)?;
        d[k] = covariance_defect(m, &base, &dphi, &spinor.sample(m.vertices()))?;
    }
    let rate = (d[0] / d[1]).ln() / (meshes[0].h() / meshes[1].h()).ln();
    out.push(check("conformal_covariance_rate", rate >= 0.8, format!("defects {:.4e}, {:.4e}; observed order {rate:.3}", d[0], d[1])));
    Ok(())
}

pub fn checks(cfg: &RunConfig, coarse: bool) -> Result<Vec<Check>, CliError> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.search.seed);
    let mut out = Vec::new();
    let (hyp, mesh) = hypotheses(cfg, coarse)?;
    let hyp_ok = hyp.status == Status::Pass;
    out.push(hyp);
    out.push(gauss_bonnet(&mesh));
    if !hyp_ok {
        for name in SOLVER_CHECKS {
            out.push(skipped(name, "needs the scalar hypotheses"));
        }
    } else {
        match pipeline::scalar_on(cfg, mesh).and_then(|s| pipeline::spectral(cfg, &s).map(|sp| (s, sp))) {
            Ok((s, sp)) => {
                out.push(liouville_solution(cfg, &s));
                out.push(liouville_uniqueness(cfg, &s, &mut rng));
                out.push(dirac_self_adjoint(&s, &sp, &mut rng));
                let o = sp.basis.orthonormality_defect();
                out.push(check("spectrum_orthonormality", o <= 1e-8, format!("max |Phi^H B Phi - I| = {o:.3e}")));
                out.push(spectrum_shift_law(&s, &sp));
                if let Err(e) = coupled_checks(&s, &sp, &mut rng, &mut out) {
                    out.push(failed("coupled_system", e));
                }
            }
            Err(e) => out.push(failed("pipeline", e)),
        }
    }
    if let Err(e) = gated(cfg, coarse, &mut rng, &mut out) {
        out.push(failed("refinement", e));
    }
    Ok(out)
}

pub fn run(cfg: &RunConfig, coarse: bool) -> Result<(), CliError> {
    let dir = cfg.output_dir();
    prepare_dir(&dir)?;
    let checks = checks(cfg, coarse)?;
    let mut text = String::new();
    for c in &checks {
        let status = match c.status {
            Status::Pass => "PASS",
            Status::Fail => "FAIL",
            Status::Skipped => "SKIP",
        };
        let _ = writeln!(text, "{status:<5} {:<26} {}", c.name, c.detail);
    }
    let failures = checks.iter().filter(|c| c.status == Status::Fail).count();
    let _ = writeln!(text, "{} checks, {failures} failed", checks.len());
    print!("{text}");
    write_text(&dir.join("verify.txt"), &text)?;
    write_json(&dir.join("verify.json"), &serde_json::json!({ "coarse": coarse, "failures": failures, "checks": checks }))?;
    if failures > 0 {
        return Err(CliError::Runtime(format!("{failures} verification checks failed")));
    }
    Ok(())
}
