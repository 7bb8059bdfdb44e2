//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.
//!
//! Criteria 3, 4, 6, 7, 8, 9 and 10 share a coarse (h = 0.12) and a fine (h = 0.06, about 2000
//! vertices) pants mesh with normalized metric, h(x) = −1 − 0.3x² and λ ≡ −0.5.

use std::f64::consts::PI;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use superliouville::fem::{assemble_operators, mt_inequality_gap, MtMode};
use superliouville::fields::{FourierField, FourierSpinor};
use superliouville::geometry::{build_pair_of_pants, gauss_bonnet_defect, ConformalFactor, TriMesh};
use superliouville::linalg::{C64, CZERO};
use superliouville::liouville::{normalize_metric, solve_liouville, LiouvilleProblem};
use superliouville::nehari::{
    linking_constants, linking_search, mountain_pass_search, CoupledSystem, LinkingOptions, MountainPassOptions,
};
use superliouville::spectral::{solve_weighted_spectrum, ModeCount, SpectralBasis};
use superliouville::spinor::{assemble_dirac, covariance_defect, ChiralitySign, DiracOperator};

const CENTERS: [[f64; 2]; 2] = [[-0.4, 0.0], [0.4, 0.0]];
const RADII: [f64; 2] = [0.15, 0.15];
const COARSE_H: f64 = 0.12;
const FINE_H: f64 = 0.06;

fn pants(h: f64) -> TriMesh {
    build_pair_of_pants(1.0, CENTERS, RADII, h, 7).expect("pants mesh")
}

struct Setup {
    mesh: TriMesh,
    problem: LiouvilleProblem,
    dirac: DiracOperator,
    basis: SpectralBasis,
    elapsed: Duration,
}

impl Setup {
    fn new(target_h: f64) -> Setup {
        let t0 = Instant::now();
        let mesh = pants(target_h);
        let phi = normalize_metric(&mesh, &ConformalFactor::flat(mesh.num_vertices())).expect("normalized metric");
        let h: Vec<f64> = mesh.vertices().iter().map(|p| -1.0 - 0.3 * p[0] * p[0]).collect();
        let lambda = vec![-0.5; mesh.num_vertices()];
        let problem = LiouvilleProblem::normalized(&mesh, &phi, h, lambda).expect("Liouville problem");
        let f = solve_liouville(&problem, None, 1e-12).expect("Liouville solve").f;
        let dirac = assemble_dirac(&mesh, &phi, ChiralitySign::Plus).expect("Dirac operator");
        let basis = solve_weighted_spectrum(&dirac, &f, ModeCount::All).expect("weighted spectrum");
        Setup { mesh, problem, dirac, basis, elapsed: t0.elapsed() }
    }

    fn lambda(&self, j: i64) -> f64 {
        self.basis.eigenvalue(j).expect("mode exists")
    }

    fn system(&self, rho: f64) -> CoupledSystem<'_> {
        CoupledSystem::new(&self.problem, &self.dirac, &self.basis, rho).expect("coupled system")
    }
}

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

/// Scalar perturbation with a prescribed H¹ norm, from a plane-defined random field.
fn scaled_field(mesh: &TriMesh, problem: &LiouvilleProblem, field: &FourierField, norm: f64) -> Vec<f64> {
    let v = field.sample(mesh.vertices());
    let s = norm / problem.ops().h1_norm(&v);
    v.into_iter().map(|x| x * s).collect()
}

fn random_dofs(rng: &mut ChaCha8Rng, n: usize, amp: f64) -> Vec<C64> {
    (0..n).map(|_| C64::new(rng.gen_range(-amp..amp), rng.gen_range(-amp..amp))).collect()
}

fn list(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.3e}")).collect::<Vec<_>>().join(", ")
}

fn criterion_1() -> Outcome {
    let t0 = Instant::now();
    let mut defects = Vec::new();
    for h in [0.2, 0.1, 0.05] {
        let mesh = pants(h);
        let phi = ConformalFactor::from_fn(&mesh, |x, y| 0.3 * (2.0 * x).sin() + 0.2 * y * y).unwrap();
        defects.push(gauss_bonnet_defect(&mesh, &phi).unwrap().abs());
    }
    let elapsed = t0.elapsed();
    let monotone = defects.windows(2).all(|w| w[1] < w[0]);
    let bound = 0.05 * 2.0 * PI;
    outcome(
        monotone && defects[2] <= bound && elapsed < Duration::from_secs(10),
        format!("|defect| at h, h/2, h/4 = [{}], bound {bound:.4}, {elapsed:.2?}", list(&defects)),
    )
}

fn criterion_2() -> Outcome {
    let t0 = Instant::now();
    let mesh = pants(0.1);
    let n = mesh.num_vertices();
    let phi = normalize_metric(&mesh, &ConformalFactor::flat(n)).unwrap();
    let solve = |h: Vec<f64>, lambda: Vec<f64>, init: Option<&[f64]>| {
        let p = LiouvilleProblem::normalized(&mesh, &phi, h, lambda).unwrap();
        solve_liouville(&p, init, 1e-12).unwrap().f
    };
    let f0 = solve(vec![-1.0; n], vec![0.0; n], None);
    let e0 = f0.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let c = 0.7;
    let fc = solve(vec![-(2.0 * c as f64).exp(); n], vec![0.0; n], None);
    let ec = fc.iter().fold(0.0f64, |a, v| a.max((v + c).abs()));
    // Uniqueness on a nonconstant problem from three random starts.
    let h: Vec<f64> = mesh.vertices().iter().map(|p| -1.0 - 0.3 * p[0] * p[0]).collect();
    let problem = LiouvilleProblem::normalized(&mesh, &phi, h.clone(), vec![-0.5; n]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let sols: Vec<Vec<f64>> = (0..3)
        .map(|_| {
            let init: Vec<f64> = FourierField::random(&mut rng, 8, 4.0).sample(mesh.vertices()).iter().map(|v| 3.0 * v).collect();
            solve_liouville(&problem, Some(&init), 1e-12).unwrap().f
        })
        .collect();
    let spread = (0..3)
        .flat_map(|i| (0..i).map(move |j| (i, j)))
        .map(|(i, j)| {
            let d: Vec<f64> = sols[i].iter().zip(&sols[j]).map(|(a, b)| a - b).collect();
            problem.ops().h1_norm(&d)
        })
        .fold(0.0f64, f64::max);
    let elapsed = t0.elapsed();
    outcome(
        e0 <= 1e-8 && ec <= 1e-8 && spread <= 1e-6 && elapsed < Duration::from_secs(30),
        format!("‖f‖∞ = {e0:.2e}, ‖f + c‖∞ = {ec:.2e}, H¹ spread {spread:.2e}, {elapsed:.2?}"),
    )
}

fn criterion_3(coarse: &Setup, fine: &Setup) -> Outcome {
    let mid = {
        let mesh = pants(0.24);
        let phi = normalize_metric(&mesh, &ConformalFactor::flat(mesh.num_vertices())).unwrap();
        assemble_dirac(&mesh, &phi, ChiralitySign::Plus).unwrap()
    };
    let levels = [&mid, &coarse.dirac, &fine.dirac];
    let hermitian = levels.iter().all(|d| {
        let a = d.to_dense();
        (0..a.nrows()).all(|i| (0..=i).all(|j| a[(i, j)] == a[(j, i)].conj()))
    });
    // σ_min(A) ≥ min_d M_d · min_j |λ_j| for A = M^{1/2} Ã M^{1/2} with M diagonal.
    let sigma: Vec<f64> = levels
        .iter()
        .map(|d| d.mass().iter().fold(f64::INFINITY, |a, b| a.min(*b)) * d.min_abs_eigenvalue())
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let d = &coarse.dirac;
    let pairing = (0..100)
        .map(|_| {
            let x = random_dofs(&mut rng, d.num_dofs(), 1.0);
            let y = random_dofs(&mut rng, d.num_dofs(), 1.0);
            d.boundary_pairing(&coarse.mesh, &x, &y).norm()
        })
        .fold(0.0f64, f64::max);
    outcome(
        hermitian && pairing <= 1e-10 && sigma.iter().all(|s| *s > 0.0),
        format!("A = Aᴴ exactly: {hermitian}, max boundary pairing {pairing:.2e}, σ_min lower bounds [{}]", list(&sigma)),
    )
}

/// λ₁ of the weighted spectrum on one refinement pair, h = 0.1 and 0.05.
fn refinement_lambda1() -> (f64, f64) {
    let l1 = |h: f64| Setup::new(h).lambda(1);
    (l1(0.1), l1(0.05))
}

fn criterion_4(coarse: &Setup, fine: &Setup, lambda1: (f64, f64)) -> Outcome {
    let ortho = coarse.basis.orthonormality_defect().max(fine.basis.orthonormality_defect());
    let c = 0.3;
    let shifted: Vec<f64> = coarse.basis.weight().iter().map(|v| v + c).collect();
    let b2 = solve_weighted_spectrum(&coarse.dirac, &shifted, ModeCount::All).unwrap();
    let shift = coarse
        .basis
        .eigenvalues()
        .iter()
        .zip(b2.eigenvalues())
        .map(|(a, b)| (b - (-c).exp() * a).abs() / a.abs())
        .fold(0.0f64, f64::max);
    let (l_c, l_f) = lambda1;
    let drift = (l_c - l_f).abs() / l_f;
    outcome(
        ortho <= 1e-8 && shift <= 1e-8 && drift <= 0.01,
        format!(
            "orthonormality {ortho:.2e}, shift law {shift:.2e}, λ₁ at h = 0.1 → 0.05: {l_c:.6} → {l_f:.6} ({:.3}%)",
            100.0 * drift
        ),
    )
}

fn criterion_5() -> Outcome {
    let hs = [0.2, 0.1, 0.05];
    let meshes: Vec<TriMesh> = hs.iter().map(|h| pants(*h)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut rates = Vec::new();
    let mut monotone = true;
    for _ in 0..10 {
        let spinor = FourierSpinor::random(&mut rng, 6, 3.0);
        let d: Vec<f64> = meshes
            .iter()
            .map(|m| {
                let phi = ConformalFactor::from_fn(m, |x, y| 0.3 * x * y).unwrap();
                let dphi = ConformalFactor::from_fn(m, |x, y| 0.5 * x.sin() + 0.3 * y).unwrap();
                covariance_defect(m, &phi, &dphi, &spinor.sample(m.vertices())).unwrap()
            })
            .collect();
        monotone &= d[1] < d[0] && d[2] < d[1];
        // Least-squares slope of log d against log h.
        let lx: Vec<f64> = meshes.iter().map(|m| m.h().ln()).collect();
        let ly: Vec<f64> = d.iter().map(|v| v.ln()).collect();
        let (mx, my) = (lx.iter().sum::<f64>() / 3.0, ly.iter().sum::<f64>() / 3.0);
        let num: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
        let den: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
        rates.push(num / den);
    }
    let (lo, hi) = rates.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), r| (a.min(*r), b.max(*r)));
    // At least first order; the observed order is higher.
    outcome(monotone && lo >= 0.8, format!("fitted rates in [{lo:.3}, {hi:.3}] over 10 spinors, monotone: {monotone}"))
}

fn criterion_6(coarse: &Setup) -> Outcome {
    let sys = coarse.system(1.3);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let step = 1e-5;
    let pts = coarse.mesh.vertices();
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let u: Vec<f64> = sys.f().iter().zip(FourierField::random(&mut rng, 8, 4.0).sample(pts)).map(|(f, d)| f + 0.5 * d).collect();
        let psi = random_dofs(&mut rng, sys.num_dofs(), 0.3);
        let g = sys.gradient(&u, &psi).unwrap();
        for _ in 0..5 {
            let du = FourierField::random(&mut rng, 8, 4.0).sample(pts);
            let dpsi = random_dofs(&mut rng, sys.num_dofs(), 1.0);
            let at = |s: f64| {
                let uu: Vec<f64> = u.iter().zip(&du).map(|(a, b)| a + s * b).collect();
                let pp: Vec<C64> = psi.iter().zip(&dpsi).map(|(a, b)| a + b * s).collect();
                sys.energy(&uu, &pp).unwrap().total
            };
            let fd = (at(step) - at(-step)) / (2.0 * step);
            let an: f64 = g.u.iter().zip(&du).map(|(a, b)| a * b).sum::<f64>()
                + g.psi.iter().zip(&dpsi).map(|(a, b)| (a.conj() * b).re).sum::<f64>();
            worst = worst.max((fd - an).abs() / an.abs());
        }
    }
    outcome(worst <= 1e-6, format!("max relative error {worst:.2e} over 100 directional derivatives"))
}

fn criterion_7(coarse: &Setup, fine: &Setup) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut proj = 0.0f64;
    for setup in [coarse, fine] {
        let sys = setup.system(0.5 * setup.lambda(1));
        for _ in 0..5 {
            let du = scaled_field(&setup.mesh, &setup.problem, &FourierField::random(&mut rng, 8, 4.0), 0.5);
            let u: Vec<f64> = sys.f().iter().zip(&du).map(|(f, d)| f + d).collect();
            let mut ap = vec![CZERO; setup.basis.num_positive()];
            for a in ap.iter_mut().take(20) {
                *a = C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            }
            let psi = sys.project_to_nehari(&u, &ap).unwrap();
            proj = proj.max(sys.nehari_residual(&u, &psi).unwrap().sup_norm);
        }
    }
    let sys = coarse.system(0.5 * coarse.lambda(1));
    let mut law = 0.0f64;
    for j in [-5, -2, -1, 1, 2, 5] {
        let phi = coarse.basis.mode(j).unwrap();
        for s in [0.1, 1.0, 3.0] {
            let psi: Vec<C64> = phi.iter().map(|z| z * s).collect();
            let e = sys.energy(sys.f(), &psi).unwrap().total - sys.trivial_energy();
            law = law.max((e - 2.0 * s * s * (coarse.lambda(j) - sys.rho())).abs());
        }
    }
    // Same plane-defined perturbations on both meshes, ‖u − f‖_{H¹} = 0.1.
    let fields: Vec<FourierField> = (0..20).map(|_| FourierField::random(&mut rng, 8, 4.0)).collect();
    let constant = |setup: &Setup| {
        let sys = setup.system(0.5 * setup.lambda(1));
        let pert: Vec<Vec<f64>> = fields.iter().map(|f| scaled_field(&setup.mesh, &setup.problem, f, 0.1)).collect();
        sys.negative_part_constant(&pert, 8).unwrap()
    };
    let (cc, cf) = (constant(coarse), constant(fine));
    let ratio = cf / cc;
    outcome(
        proj <= 1e-9 && law <= 1e-10 && (0.8..=1.2).contains(&ratio),
        format!("projection residual {proj:.2e}, single-mode law {law:.2e}, C = {cc:.4} → {cf:.4} (ratio {ratio:.3})"),
    )
}

fn criterion_8(fine: &Setup) -> Outcome {
    let t0 = Instant::now();
    let sys = fine.system(0.5 * fine.lambda(1));
    let out = match mountain_pass_search(&sys, &MountainPassOptions::default()) {
        Ok(o) => o,
        Err(e) => return outcome(false, format!("search failed: {e}")),
    };
    let st = out.state();
    let mu = sys.multipliers(&st.u, &st.psi).unwrap().max_abs;
    let elapsed = t0.elapsed() + fine.elapsed;
    outcome(
        st.spinor_norm >= 1e-3
            && st.el_residual() <= 1e-6
            && st.energy > sys.trivial_energy()
            && mu <= 1e-6
            && elapsed < Duration::from_secs(600),
        format!(
            "V = {}, ‖ψ‖ = {:.4}, EL residual {:.2e}, E − I(f) = {:.6}, max|μ| = {mu:.2e}, {elapsed:.1?} with setup",
            fine.mesh.num_vertices(),
            st.spinor_norm,
            st.el_residual(),
            st.energy - sys.trivial_energy()
        ),
    )
}

fn criterion_9(fine: &Setup) -> Outcome {
    let t0 = Instant::now();
    let rho = 0.5 * (fine.lambda(1) + fine.lambda(2));
    let sys = fine.system(rho);
    let c = linking_constants(&sys).unwrap();
    let i_f = sys.trivial_energy();
    let t_ok = rho * c.t.exp() - c.lambda_k1 >= 1.0;
    let a_ok = i_f + c.scalar_bound(c.t) - 2.0 * c.a * c.a * c.t * c.t * (rho * c.t.exp() - c.lambda_k1) < i_f;
    // σ₁(t) with ‖φ₂‖_{H^{1/2}} = R along φ₁ and along random low directions, by direct evaluation.
    let nn = fine.basis.num_negative();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut side = f64::NEG_INFINITY;
    for d in 0..3 {
        let dir: Vec<C64> = (0..c.k)
            .map(|_| if d == 0 { C64::new(1.0, 0.0) } else { C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)) })
            .collect();
        let q: f64 = dir.iter().enumerate().map(|(j, z)| fine.lambda(j as i64 + 1) * z.norm_sqr()).sum();
        for i in 0..50 {
            let t = c.t * i as f64 / 49.0;
            let mut a = vec![CZERO; fine.basis.num_modes()];
            for (j, z) in dir.iter().enumerate() {
                a[nn + j] = z * (c.r / q.sqrt());
            }
            a[nn + c.k] += C64::new(c.a * t, 0.0);
            let u: Vec<f64> = sys.f().iter().map(|v| v + t).collect();
            side = side.max(sys.energy(&u, &fine.basis.synthesize(&a)).unwrap().total - i_f);
        }
    }
    let out = match linking_search(&sys, &LinkingOptions::default()) {
        Ok(o) => o,
        Err(e) => return outcome(false, format!("constants T {t_ok}, A {a_ok}, R side max {side:.3e}; search failed: {e}")),
    };
    // Boundary values are compared with I(f) up to the roundoff of evaluating E.
    let roundoff = 1e-10 * (1.0 + i_f.abs());
    let st = out.newton.as_ref().map(|n| &n.state).expect("search returned a refined state");
    let elapsed = t0.elapsed() + fine.elapsed;
    outcome(
        t_ok && a_ok
            && side < 0.0
            && out.boundary_max_excess <= roundoff
            && out.membership_residual <= 1e-9
            && out.cone_constant > 0.0
            && st.is_nontrivial()
            && st.el_residual() <= 1e-6
            && elapsed < Duration::from_secs(1800),
        format!(
            "k = {}, T = {:.4}, A = {}, R = {}; side max {side:.3e}; ∂𝓓 max excess {:.2e}; 𝓛 C = {:.4e}; \
             EL residual {:.2e}, E − I(f) = {:.6}; {elapsed:.1?} with setup",
            c.k,
            c.t,
            c.a,
            c.r,
            out.boundary_max_excess,
            out.cone_constant,
            st.el_residual(),
            st.energy - i_f
        ),
    )
}

fn criterion_10(coarse: &Setup) -> Outcome {
    let p = &coarse.problem;
    let f = coarse.basis.weight();
    let i_f = p.energy(f).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut c = f64::INFINITY;
    for _ in 0..500 {
        let r = 0.1 * rng.gen_range(0.01..=1.0f64);
        let du = scaled_field(&coarse.mesh, p, &FourierField::random(&mut rng, 8, 5.0), r);
        let u: Vec<f64> = f.iter().zip(&du).map(|(a, b)| a + b).collect();
        c = c.min((p.energy(&u).unwrap() - i_f) / (r * r));
    }
    outcome(c > 0.0, format!("fitted C = {c:.4e} over 500 samples with ‖u − f‖_{{H¹}} ≤ 0.1"))
}

fn criterion_11() -> Outcome {
    let mut maxima = Vec::new();
    for h in [0.1, 0.05] {
        let mesh = pants(h);
        let ops = assemble_operators(&mesh, &ConformalFactor::flat(mesh.num_vertices())).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (mut gi, mut gb) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
        for _ in 0..1000 {
            let v = FourierField::random(&mut rng, 8, 6.0).sample(mesh.vertices());
            let s = 1.0 / ops.h1_norm(&v);
            let u: Vec<f64> = v.iter().map(|x| x * s).collect();
            gi = gi.max(mt_inequality_gap(&ops, &u, MtMode::Interior).unwrap());
            gb = gb.max(mt_inequality_gap(&ops, &u, MtMode::Boundary).unwrap());
        }
        maxima.push((gi, gb));
    }
    let vi = (maxima[1].0 - maxima[0].0).abs() / maxima[0].0.abs();
    let vb = (maxima[1].1 - maxima[0].1).abs() / maxima[0].1.abs();
    outcome(
        vi <= 0.1 && vb <= 0.1,
        format!(
            "max interior gap {:.4} → {:.4} ({:.2}%), max boundary gap {:.4} → {:.4} ({:.2}%)",
            maxima[0].0,
            maxima[1].0,
            100.0 * vi,
            maxima[0].1,
            maxima[1].1,
            100.0 * vb
        ),
    )
}

fn main() -> ExitCode {
    let mut failures = 0;
    let mut report = |n: usize, name: &str, o: Outcome| {
        println!("{} criterion {n:>2} ({name}): {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        if !o.pass {
            failures += 1;
        }
    };
    report(1, "Gauss-Bonnet", criterion_1());
    report(2, "Liouville exactness", criterion_2());
    report(5, "conformal covariance", criterion_5());
    report(11, "Moser-Trudinger empirics", criterion_11());
    let coarse = Setup::new(COARSE_H);
    report(6, "gradient check", criterion_6(&coarse));
    report(10, "local coercivity", criterion_10(&coarse));
    let lambda1 = refinement_lambda1();
    let fine = Setup::new(FINE_H);
    report(3, "Dirac operator", criterion_3(&coarse, &fine));
    report(4, "weighted spectrum", criterion_4(&coarse, &fine, lambda1));
    report(7, "Nehari machinery", criterion_7(&coarse, &fine));
    report(8, "mountain pass", criterion_8(&fine));
    report(9, "linking", criterion_9(&fine));
    if failures == 0 {
        println!("all acceptance criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("{failures} acceptance criteria failed");
        ExitCode::FAILURE
    }
}
