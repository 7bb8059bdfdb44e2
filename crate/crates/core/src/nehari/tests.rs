use super::*;
use crate::geometry::{build_pair_of_pants, ConformalFactor, TriMesh};
use crate::liouville::{normalize_metric, solve_liouville};
use crate::spectral::{solve_weighted_spectrum, ModeCount};
use crate::spinor::{assemble_dirac, ChiralitySign};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub(crate) struct Fixture {
    pub mesh: TriMesh,
    pub problem: LiouvilleProblem,
    pub dirac: DiracOperator,
    pub basis: SpectralBasis,
}

pub(crate) fn fixture(target_h: f64) -> Fixture {
    let mesh = build_pair_of_pants(1.0, [[-0.4, 0.0], [0.4, 0.0]], [0.15, 0.15], target_h, 7).unwrap();
    let phi = normalize_metric(&mesh, &ConformalFactor::flat(mesh.num_vertices())).unwrap();
    let h: Vec<f64> = mesh.vertices().iter().map(|p| -1.0 - 0.3 * p[0] * p[0]).collect();
    let lambda = vec![-0.5; mesh.num_vertices()];
    let problem = LiouvilleProblem::normalized(&mesh, &phi, h, lambda).unwrap();
    let f = solve_liouville(&problem, None, 1e-12).unwrap().f;
    let dirac = assemble_dirac(&mesh, &phi, ChiralitySign::Plus).unwrap();
    let basis = solve_weighted_spectrum(&dirac, &f, ModeCount::All).unwrap();
    Fixture { mesh, problem, dirac, basis }
}

fn random_state(sys: &CoupledSystem<'_>, rng: &mut ChaCha8Rng, amp: f64) -> (Vec<f64>, Vec<C64>) {
    let u: Vec<f64> = sys.f().iter().map(|f| f + amp * rng.gen_range(-1.0..1.0)).collect();
    let psi = (0..sys.num_dofs()).map(|_| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)) * amp).collect();
    (u, psi)
}

fn low_mode_coefficients(sys: &CoupledSystem<'_>, rng: &mut ChaCha8Rng, count: usize) -> Vec<C64> {
    let np = sys.basis().num_positive();
    (0..np)
        .map(|j| if j < count { C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)) } else { CZERO })
        .collect()
}

#[test]
fn trivial_branch_is_critical() {
    let fx = fixture(0.3);
    let sys = CoupledSystem::new(&fx.problem, &fx.dirac, &fx.basis, 0.7).unwrap();
    let s = sys.trivial_state().unwrap();
    assert_eq!(s.energy, sys.trivial_energy());
    assert_eq!(s.spinor_energy, 0.0);
    assert!(s.el_residual() < 1e-10, "residual {}", s.el_residual());
    let g = sys.gradient(&s.u, &s.psi).unwrap();
    assert!(g.psi.iter().all(|z| *z == CZERO));
    let fit = sys.multipliers(&s.u, &s.psi).unwrap();
    assert!(fit.max_abs < 1e-8);
}

#[test]
fn single_mode_energy_law() {
    let fx = fixture(0.3);
    let rho = 0.9;
    let sys = CoupledSystem::new(&fx.problem, &fx.dirac, &fx.basis, rho).unwrap();
    for j in [-2, -1, 1, 2, 5] {
        let phi = fx.basis.mode(j).unwrap();
        let lam = fx.basis.eigenvalue(j).unwrap();
        for s in [0.1, 1.0, 3.0] {
            let psi: Vec<C64> = phi.iter().map(|z| z * s).collect();
            let e = sys.energy(sys.f(), &psi).unwrap();
            let want = 2.0 * s * s * (lam - rho);
            assert!((e.total - sys.trivial_energy() - want).abs() < 1e-10 * (1.0 + want.abs()), "j = {j}, s = {s}");
        }
    }
}

/// Energy from dense A, nodal prolongation and a per-triangle stiffness loop.
fn oracle_energy(fx: &Fixture, sys: &CoupledSystem<'_>, u: &[f64], psi: &[C64]) -> f64 {
    let mesh = &fx.mesh;
    let mut dir = 0.0;
    for t in 0..mesh.num_triangles() {
        let tri = mesh.triangles()[t];
        let g = mesh.hat_gradients(t);
        let mut grad = [0.0; 2];
        for k in 0..3 {
            grad[0] += u[tri[k]] * g[k][0];
            grad[1] += u[tri[k]] * g[k][1];
        }
        dir += mesh.triangle_area(t) * (grad[0] * grad[0] + grad[1] * grad[1]);
    }
    let ops = fx.problem.ops();
    let (m, l) = (ops.lumped_mass(), ops.boundary_lumped());
    let (h, lam) = (fx.problem.h(), fx.problem.lambda());
    let mut scalar = dir;
    for v in 0..u.len() {
        scalar -= m[v] * (h[v] * (2.0 * u[v]).exp() + 2.0 * u[v]) + 2.0 * l[v] * lam[v] * u[v].exp();
    }
    let a = fx.dirac.to_dense();
    let mut quad = CZERO;
    for i in 0..psi.len() {
        for j in 0..psi.len() {
            quad += psi[i].conj() * a[(i, j)] * psi[j];
        }
    }
    let nodal = fx.dirac.dofs().prolong(psi);
    let mut wn = 0.0;
    for (v, val) in nodal.values().iter().enumerate() {
        wn += u[v].exp() * m[v] * (val[0].norm_sqr() + val[1].norm_sqr());
    }
    scalar + 2.0 * (quad.re - sys.rho() * wn)
}

#[test]
fn energy_matches_independent_quadrature() {
    let fx = fixture(0.3);
    let sys = CoupledSystem::new(&fx.problem, &fx.dirac, &fx.basis, 1.3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..3 {
        let (u, psi) = random_state(&sys, &mut rng, 0.5);
        let e = sys.energy(&u, &psi).unwrap();
        let want = oracle_energy(&fx, &sys, &u, &psi);
        assert!((e.total - want).abs() < 1e-10 * (1.0 + want.abs()), "{} vs {want}", e.total);
    }
}

#[test]
fn gradient_matches_central_differences() {
    let fx = fixture(0.3);
    let sys = CoupledSystem::new(&fx.problem, &fx.dirac, &fx.basis, 0.8).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let step = 1e-5;
    for _ in 0..3 {
        let (u, psi) = random_state(&sys, &mut rng, 0.3);
        let g = sys.gradient(&u, &psi).unwrap();
        for _ in 0..3 {
            let (du, dpsi) = random_state(&sys, &mut rng, 1.0);
            let du: Vec<f64> = du.iter().zip(sys.f()).map(|(a, f)| a - f).collect();
            let at = |s: f64| {
                let uu: Vec<f64> = u.iter().zip(&du).map(|(a, b)| a + s * b).collect();
                let pp: Vec<C64> = psi.iter().zip(&dpsi).map(|(a, b)| a + b * s).collect();
                sys.energy(&uu, &pp).unwrap().total
            };
            let fd = (at(step) - at(-step)) / (2.0 * step);
            let an: f64 = g.u.iter().zip(&du).map(|(a, b)| a * b).sum::<f64>()
                + g.psi.iter().zip(&dpsi).map(|(a, b)| (a.conj() * b).re).sum::<f64>();
            assert!((fd - an).abs() <= 1e-6 * an.abs().max(1.0), "fd {fd} vs analytic {an}");
        }
        // Euler identity for the quadratic part: ⟨∂_ψE, ψ⟩ = 2J.
        let e = sys.energy(&u, &psi).unwrap();
        let pairing: f64 = g.psi.iter().zip(&psi).map(|(a, b)| (a.conj() * b).re).sum();
        assert!((pairing - 2.0 * e.spinor).abs() < 1e-9 * e.spinor.abs().max(1.0));
    }
}

#[test]
fn nehari_projection_contract() {
    let fx = fixture(0.3);
    let sys = CoupledSystem::new(&fx.problem, &fx.dirac, &fx.basis, 1.1).unwrap();
    let n = sys.num_dofs();
    let zero = sys.nehari_residual(sys.f(), &vec![CZERO; n]).unwrap();
    assert_eq!(zero.sup_norm, 0.0);
    for j in [1, 4] {
        let r = sys.nehari_residual(sys.f(), &fx.basis.mode(j).unwrap()).unwrap();
        assert!(r.sup_norm < 1e-10);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    // u = f decouples the constraint.
    let ap = low_mode_coefficients(&sys, &mut rng, 10);
    let psi = sys.project_to_nehari(sys.f(), &ap).unwrap();
    let coeff = fx.basis.coefficients(&psi);
    assert!(coeff[..fx.basis.num_negative()].iter().all(|z| z.norm() < 1e-10));
    for _ in 0..3 {
        let (u, _) = random_state(&sys, &mut rng, 0.4);
        let ap = low_mode_coefficients(&sys, &mut rng, 12);
        let bp = low_mode_coefficients(&sys, &mut rng, 12);
        let psi = sys.project_to_nehari(&u, &ap).unwrap();
        assert!(sys.nehari_residual(&u, &psi).unwrap().sup_norm <= 1e-9);
        let sum: Vec<C64> = ap.iter().zip(&bp).map(|(a, b)| a + b).collect();
        let p_sum = sys.project_to_nehari(&u, &sum).unwrap();
        let p_b = sys.project_to_nehari(&u, &bp).unwrap();
        for d in 0..n {
            assert!((p_sum[d] - psi[d] - p_b[d]).norm() < 1e-9);
        }
    }
}

#[test]
fn planted_multiplier_is_recovered() {
    let fx = fixture(0.3);
    let sys = CoupledSystem::new(&fx.problem, &fx.dirac, &fx.basis, 0.6).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (u, _) = random_state(&sys, &mut rng, 0.2);
    let psi = sys.project_to_nehari(&u, &low_mode_coefficients(&sys, &mut rng, 6)).unwrap();
    // Covector of Re(conj(μ₀) G₋₁) for a planted μ₀.
    let mu0 = C64::new(0.7, -0.4);
    let nn = fx.basis.num_negative();
    let phi = fx.basis.mode(-1).unwrap();
    let y: Vec<C64> = phi.iter().map(|z| z * mu0).collect();
    let w = sys.spinor_weights(&u);
    let ay = fx.dirac.apply(&y);
    let gpsi: Vec<C64> = ay.iter().zip(&y).zip(&w).map(|((a, y), w)| a - y * (sys.rho() * w)).collect();
    let mut gu = vec![0.0; u.len()];
    for d in 0..psi.len() {
        let v = fx.dirac.dofs().vertex_of(d);
        gu[v] -= sys.rho() * u[v].exp() * fx.dirac.mass()[d] * (y[d].conj() * psi[d]).re;
    }
    let fit = sys.fit_multipliers(&u, &psi, &Gradient { u: gu, psi: gpsi }).unwrap();
    assert!((fit.mu[nn - 1] - mu0).norm() < 1e-8, "{:?}", fit.mu[nn - 1]);
    assert!(fit.mu[..nn - 1].iter().all(|z| z.norm() < 1e-8));
    assert!(fit.residual < 1e-8);
}

#[test]
fn negative_part_is_controlled_near_f() {
    let fx = fixture(0.3);
    let sys = CoupledSystem::new(&fx.problem, &fx.dirac, &fx.basis, 0.9).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let c1 = linking::estimate_negative_part_constant(&sys, 8, 0.1, &mut rng).unwrap();
    let c2 = linking::estimate_negative_part_constant(&sys, 8, 0.05, &mut rng).unwrap();
    assert!(c1 > 0.0 && c1.is_finite());
    // Linear in ‖u − f‖ for small perturbations.
    assert!(c2 < 0.7 * c1, "{c2} vs {c1}");
}

#[test]
fn newton_keeps_trivial_seed_and_rejects_resonance() {
    let fx = fixture(0.3);
    let sys = CoupledSystem::new(&fx.problem, &fx.dirac, &fx.basis, 0.7).unwrap();
    let out = newton_refine(&sys, &sys.trivial_state().unwrap(), 1e-10, 5).unwrap();
    assert_eq!(out.iterations, 0);
    assert_eq!(out.basin, Basin::Trivial);
    let lam1 = fx.basis.eigenvalue(1).unwrap();
    let res = CoupledSystem::new(&fx.problem, &fx.dirac, &fx.basis, lam1 + 1e-8).unwrap();
    assert!(matches!(res.check_nonresonant(), Err(Error::Resonant { index: 1, .. })));
    assert!(mountain_pass_search(&res, &MountainPassOptions::default()).unwrap_err().is_input_error());
}

#[test]
fn mountain_pass_finds_nontrivial_solution() {
    let fx = fixture(0.3);
    let lam1 = fx.basis.eigenvalue(1).unwrap();
    let sys = CoupledSystem::new(&fx.problem, &fx.dirac, &fx.basis, 0.5 * lam1).unwrap();
    let (t, s, e) = mountain_pass_endpoint(&sys, 0.25).unwrap();
    assert!(sys.rho() * t.exp() > lam1 + 1.0 && s > 0.0 && e < sys.trivial_energy());
    let out = mountain_pass_search(&sys, &MountainPassOptions::default()).unwrap();
    let st = out.state();
    assert!(st.is_nontrivial());
    assert!(st.el_residual() <= 1e-10);
    assert!(st.energy > sys.trivial_energy());
    assert!(out.newton.iterations <= 20);
    assert!(sys.multipliers(&st.u, &st.psi).unwrap().max_abs <= 1e-6);
    // At a solution J vanishes: E = I(u).
    assert!(st.spinor_energy.abs() < 1e-8);
    let diag = ps_diagnostics(&sys, &out.newton.history, false).unwrap();
    assert!(diag.records.last().unwrap().gradient_norm < 1e-8);
}

#[test]
fn linking_constants_and_sets() {
    let fx = fixture(0.3);
    let (l1, l2) = (fx.basis.eigenvalue(1).unwrap(), fx.basis.eigenvalue(2).unwrap());
    let rho = 0.5 * (l1 + l2);
    let sys = CoupledSystem::new(&fx.problem, &fx.dirac, &fx.basis, rho).unwrap();
    let c = linking_constants(&sys).unwrap();
    assert_eq!(c.k, 1);
    assert!(rho * c.t.exp() - l2 >= 1.0);
    assert!(c.top_bound(rho) < 0.0);
    // σ₁(t) on ‖φ₂‖ = R, evaluated with the full energy.
    let nn = fx.basis.num_negative();
    for i in 0..=50 {
        let t = c.t * i as f64 / 50.0;
        let mut a = vec![CZERO; fx.basis.num_modes()];
        a[nn] = C64::new(c.r / l1.sqrt(), 0.0);
        a[nn + 1] = C64::new(c.a * t, 0.0);
        let psi = fx.basis.synthesize(&a);
        let u: Vec<f64> = sys.f().iter().map(|f| f + t).collect();
        assert!(sys.energy(&u, &psi).unwrap().total < sys.trivial_energy());
    }
    let out = linking_search(&sys, &LinkingOptions { cone_samples: 30, boundary_samples: 30, ..Default::default() }).unwrap();
    assert!(out.boundary_max_excess <= 1e-10);
    assert!(out.membership_residual <= 1e-9);
    assert!(out.cone_constant > 0.0);
    let st = &out.newton.as_ref().unwrap().state;
    assert!(st.is_nontrivial() && st.el_residual() <= 1e-10 && st.energy > sys.trivial_energy());
}

mod props {
    use super::*;
    use proptest::prelude::*;
    use std::sync::OnceLock;

    fn shared() -> &'static Fixture {
        static F: OnceLock<Fixture> = OnceLock::new();
        F.get_or_init(|| fixture(0.3))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn spinor_part_is_quadratic_and_gauge_invariant(seed in 0u64..1000, c in -2.0f64..2.0, theta in 0.0f64..6.3, rho in 0.2f64..4.0) {
            let fx = shared();
            let sys = CoupledSystem::new(&fx.problem, &fx.dirac, &fx.basis, rho).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (u, psi) = random_state(&sys, &mut rng, 0.3);
            let e = sys.energy(&u, &psi).unwrap();
            let z = C64::from_polar(c, theta);
            let scaled: Vec<C64> = psi.iter().map(|p| p * z).collect();
            let es = sys.energy(&u, &scaled).unwrap();
            prop_assert_eq!(es.scalar, e.scalar);
            prop_assert!((es.spinor - c * c * e.spinor).abs() <= 1e-10 * e.spinor.abs().max(1.0));
        }

        #[test]
        fn single_mode_law_holds_for_any_amplitude(j in prop::sample::select(vec![-3i64, -1, 1, 2, 4]), s in -3.0f64..3.0, rho in 0.2f64..4.0) {
            let fx = shared();
            let sys = CoupledSystem::new(&fx.problem, &fx.dirac, &fx.basis, rho).unwrap();
            let psi: Vec<C64> = fx.basis.mode(j).unwrap().iter().map(|p| p * s).collect();
            let gain = sys.energy(sys.f(), &psi).unwrap().total - sys.trivial_energy();
            let want = 2.0 * s * s * (fx.basis.eigenvalue(j).unwrap() - rho);
            prop_assert!((gain - want).abs() <= 1e-10 * want.abs().max(1.0));
        }
    }
}
