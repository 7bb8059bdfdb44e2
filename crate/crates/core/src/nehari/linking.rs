//! Linking regime `λ_k < ρ < λ_{k+1}`: the constants (T, A, R), sampled checks of the
//! linking sets, and Newton refinement from seeds taken inside 𝓓.
//!
//! With `a = −Σ m^g h e^{2f}`, `b = −2 Σ ℓ^g λ e^f` and `|M| = Σ m^g`, the scalar energy
//! along constant shifts is exactly `I(f + t) = I(f) + a(e^{2t} − 1) + b(e^t − 1) − 2|M|t`,
//! bounded by `c₁e^{2t} − c₂t − c₃` with `c₁ = c₃ = a + b`, `c₂ = 2|M|`. Spinor norms are
//! H^{1/2}, which makes `c₄ = 2`.

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::newton::{newton_refine, NewtonOutcome};
use super::{CoupledSystem, SpectralWindow};
use crate::error::{Error, Result};
use crate::linalg::{C64, CZERO};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinkingConstants {
    pub k: usize,
    pub lambda_k: f64,
    pub lambda_k1: f64,
    pub t: f64,
    pub a: f64,
    pub r: f64,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub c4: f64,
}

impl LinkingConstants {
    /// `c₁e^{2t} − c₂t − c₃`.
    pub fn scalar_bound(&self, t: f64) -> f64 {
        self.c1 * (2.0 * t).exp() - self.c2 * t - self.c3
    }

    /// Upper bound for `E_ρ(σ₁(t)) − I(f)` on `‖φ₂‖ = R`.
    pub fn side_bound(&self, rho: f64, t: f64) -> f64 {
        self.scalar_bound(t) - self.c4 * (rho / self.lambda_k - 1.0) * self.r * self.r
            + 2.0 * self.a * self.a * t * t * (self.lambda_k1 - rho * t.exp())
    }

    /// Upper bound for `E_ρ(σ₁(T)) − I(f)` at `φ₂ = 0`.
    pub fn top_bound(&self, rho: f64) -> f64 {
        let t = self.t;
        self.scalar_bound(t) - 2.0 * self.a * self.a * t * t * (rho * t.exp() - self.lambda_k1)
    }
}

/// Grid on which the side inequality is enforced.
const SIDE_GRID: usize = 2000;

struct ShiftCoefficients {
    a: f64,
    b: f64,
    area: f64,
}

fn shift_coefficients(system: &CoupledSystem<'_>) -> ShiftCoefficients {
    let ops = system.problem().ops();
    let f = system.f();
    let (h, lam) = (system.problem().h(), system.problem().lambda());
    let m = ops.lumped_mass();
    let l = ops.boundary_lumped();
    let a = -(0..f.len()).map(|i| m[i] * h[i] * (2.0 * f[i]).exp()).sum::<f64>();
    let b = -2.0 * (0..f.len()).map(|i| l[i] * lam[i] * f[i].exp()).sum::<f64>();
    ShiftCoefficients { a, b, area: ops.area() }
}

fn window_index(system: &CoupledSystem<'_>) -> Result<usize> {
    match system.window() {
        SpectralWindow::Between(k) => Ok(k),
        w => Err(Error::Input(format!("linking regime needs λ_k < rho < λ_(k+1) with k ≥ 1, rho = {} is {w:?}", system.rho()))),
    }
}

/// Fixes T, then A, then R by doubling until the defining inequalities hold.
pub fn linking_constants(system: &CoupledSystem<'_>) -> Result<LinkingConstants> {
    let k = window_index(system)?;
    let basis = system.basis();
    let lambda_k = basis.eigenvalue(k as i64).expect("window index is valid");
    let lambda_k1 = basis.eigenvalue(k as i64 + 1).expect("window index is valid");
    let rho = system.rho();
    let sc = shift_coefficients(system);
    let mut c = LinkingConstants {
        k,
        lambda_k,
        lambda_k1,
        t: ((lambda_k1 + 1.0) / rho).ln(),
        a: 1.0,
        r: 1.0,
        c1: sc.a + sc.b,
        c2: 2.0 * sc.area,
        c3: sc.a + sc.b,
        c4: 2.0,
    };
    while rho * c.t.exp() - lambda_k1 < 1.0 {
        c.t += 1e-12 * c.t.max(1.0);
    }
    for _ in 0..200 {
        if c.top_bound(rho) < 0.0 {
            break;
        }
        c.a *= 2.0;
    }
    if !(c.top_bound(rho) < 0.0) {
        return Err(Error::Search("no admissible A for the linking constants".into()));
    }
    let side_max = |c: &LinkingConstants| {
        (0..=SIDE_GRID).map(|i| c.side_bound(rho, c.t * i as f64 / SIDE_GRID as f64)).fold(f64::NEG_INFINITY, f64::max)
    };
    for _ in 0..200 {
        if side_max(&c) < 0.0 {
            break;
        }
        c.r *= 2.0;
    }
    if !(side_max(&c) < 0.0) {
        return Err(Error::Search("no admissible R for the linking constants".into()));
    }
    Ok(c)
}

#[derive(Clone, Debug)]
pub struct LinkingOptions {
    pub boundary_samples: usize,
    pub cone_samples: usize,
    /// 𝓓-interior samples screened for seeds.
    pub interior_samples: usize,
    pub max_seeds: usize,
    /// Small-ball radius r₀; 𝓛 uses r = r₀/2.
    pub r0: f64,
    /// Fitted constant in ‖ψ⁻‖ ≤ Cρ‖ψ⁺‖; estimated internally when absent.
    pub negative_part_constant: Option<f64>,
    pub newton_tol: f64,
    pub newton_max_iter: usize,
    pub seed: u64,
}

impl Default for LinkingOptions {
    fn default() -> Self {
        LinkingOptions {
            boundary_samples: 100,
            cone_samples: 100,
            interior_samples: 60,
            max_seeds: 4,
            r0: 0.1,
            negative_part_constant: None,
            newton_tol: 1e-10,
            newton_max_iter: 30,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SeedReport {
    /// `(t, amplitude along φ_(k+1), ‖φ₂‖)` of the 𝓓 sample.
    pub sample: (f64, f64, f64),
    pub sample_energy: f64,
    pub outcome: String,
    pub converged: bool,
}

#[derive(Clone, Debug)]
pub struct LinkingOutcome {
    pub constants: LinkingConstants,
    pub negative_part_constant: f64,
    pub tau: f64,
    pub r: f64,
    /// Largest `E_ρ − I(f)` over sampled ∂𝓓.
    pub boundary_max_excess: f64,
    /// Largest Nehari residual over all sampled 𝓓 points.
    pub membership_residual: f64,
    /// `min (E_ρ − I(f)) / r²` over sampled 𝓛.
    pub cone_constant: f64,
    pub seeds: Vec<SeedReport>,
    pub newton: Option<NewtonOutcome>,
    pub trace: Vec<String>,
}

/// Unit-B_f direction in span{φ_1..φ_k} with random complex coefficients.
fn random_low_direction(rng: &mut ChaCha8Rng, k: usize) -> Vec<C64> {
    let mut c: Vec<C64> = (0..k).map(|_| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
    let n = c.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt().max(1e-300);
    c.iter_mut().for_each(|z| *z /= n);
    c
}

struct DPoint {
    t: f64,
    amp: f64,
    /// Coefficients on φ_1..φ_k.
    low: Vec<C64>,
}

impl DPoint {
    fn state(&self, system: &CoupledSystem<'_>, k: usize) -> (Vec<f64>, Vec<C64>) {
        let basis = system.basis();
        let nn = basis.num_negative();
        let mut a = vec![CZERO; basis.num_modes()];
        for (j, c) in self.low.iter().enumerate() {
            a[nn + j] = *c;
        }
        a[nn + k] += C64::new(self.amp, 0.0);
        (system.f().iter().map(|v| v + self.t).collect(), basis.synthesize(&a))
    }

    fn low_norm(&self, lam: &[f64]) -> f64 {
        self.low.iter().zip(lam).map(|(c, l)| l * c.norm_sqr()).sum::<f64>().sqrt()
    }
}

/// Critical point of `E` restricted to `(f + t, α φ_(k+1) + β φ̂)`, φ̂ a unit low direction
/// with Rayleigh quotient `lam_hat`, by Newton from `x0`.
fn slice_critical_point(system: &CoupledSystem<'_>, c: &LinkingConstants, lam_hat: f64, x0: [f64; 3]) -> Option<[f64; 3]> {
    let sc = shift_coefficients(system);
    let rho = system.rho();
    let l1 = c.lambda_k1;
    let mut x = Vector3::new(x0[0], x0[1], x0[2]);
    for _ in 0..100 {
        let (t, al, be) = (x[0], x[1], x[2]);
        let (e1, e2) = (t.exp(), (2.0 * t).exp());
        let g = Vector3::new(
            2.0 * sc.a * e2 + sc.b * e1 - 2.0 * sc.area - 2.0 * rho * e1 * (al * al + be * be),
            4.0 * al * (l1 - rho * e1),
            4.0 * be * (lam_hat - rho * e1),
        );
        let scale = 2.0 * sc.area;
        if g.norm() <= 1e-13 * scale {
            return (al.abs() > 1e-8).then_some([t, al, be]);
        }
        let h = Matrix3::new(
            4.0 * sc.a * e2 + sc.b * e1 - 2.0 * rho * e1 * (al * al + be * be),
            -4.0 * rho * e1 * al,
            -4.0 * rho * e1 * be,
            -4.0 * rho * e1 * al,
            4.0 * (l1 - rho * e1),
            0.0,
            -4.0 * rho * e1 * be,
            0.0,
            4.0 * (lam_hat - rho * e1),
        );
        let mut dx = h.lu().solve(&(-g))?;
        if dx[0].abs() > 0.5 {
            dx *= 0.5 / dx[0].abs();
        }
        x += dx;
        if !x.iter().all(|v| v.is_finite()) {
            return None;
        }
    }
    None
}

/// Samples ∂𝓓 and 𝓛, then refines 𝓓-interior seeds with Newton.
pub fn linking_search(system: &CoupledSystem<'_>, opts: &LinkingOptions) -> Result<LinkingOutcome> {
    system.check_nonresonant()?;
    let c = linking_constants(system)?;
    let k = c.k;
    let rho = system.rho();
    let i_f = system.trivial_energy();
    let basis = system.basis();
    let nn = basis.num_negative();
    let lam_pos = &basis.eigenvalues()[nn..];
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut trace = vec![format!(
        "k = {k}, T = {}, A = {}, R = {}, c = ({}, {}, {}, {})",
        c.t, c.a, c.r, c.c1, c.c2, c.c3, c.c4
    )];

    // Points of 𝓓 with a low part of H^{1/2} norm `radius`.
    let low_point = |rng: &mut ChaCha8Rng, t: f64, radius: f64| -> DPoint {
        let dir = random_low_direction(rng, k);
        let q: f64 = dir.iter().zip(lam_pos).map(|(c, l)| l * c.norm_sqr()).sum();
        let s = radius / q.sqrt();
        DPoint { t, amp: c.a * t, low: dir.into_iter().map(|z| z * s).collect() }
    };

    // ∂𝓓: bottom {0} × B_R, top {T} × B_R, side [0, T] × ∂B_R.
    let mut boundary_max_excess = f64::NEG_INFINITY;
    let mut membership_residual = 0.0f64;
    let nb = opts.boundary_samples;
    for i in 0..nb {
        let x: f64 = rng.gen();
        let p = match i % 3 {
            0 => low_point(&mut rng, 0.0, c.r * x.sqrt()),
            1 => low_point(&mut rng, c.t, c.r * x.sqrt()),
            _ => low_point(&mut rng, c.t * x, c.r),
        };
        let (u, psi) = p.state(system, k);
        boundary_max_excess = boundary_max_excess.max(system.energy(&u, &psi)?.total - i_f);
        membership_residual = membership_residual.max(system.nehari_residual(&u, &psi)?.sup_norm);
    }
    trace.push(format!("∂𝓓: max E − I(f) = {boundary_max_excess:e} over {nb} samples"));

    // 𝓛 = (𝓝_f outside the cone C_τ) ∩ ∂B_r.
    let cneg = match opts.negative_part_constant {
        Some(v) => v,
        None => estimate_negative_part_constant(system, 10, 0.1, &mut rng)?,
    };
    let tau = 4.0 * (1.0 + cneg * rho * rho);
    let r = 0.5 * opts.r0;
    let ops = system.problem().ops();
    let np = basis.num_positive();
    let mut cone_constant = f64::INFINITY;
    let mut accepted = 0;
    let mut attempts = 0;
    while accepted < opts.cone_samples {
        attempts += 1;
        if attempts > 20 * opts.cone_samples {
            return Err(Error::Search(format!("only {accepted} admissible 𝓛 samples in {attempts} attempts")));
        }
        let du = smoothed_noise(system, &mut rng)?;
        let alpha = if accepted % 10 == 0 { 1.0 } else { rng.gen::<f64>() };
        let dn = ops.h1_norm(&du).max(1e-300);
        let du: Vec<f64> = du.iter().map(|v| v * alpha * r / dn).collect();
        let u: Vec<f64> = system.f().iter().zip(&du).map(|(f, d)| f + d).collect();
        let d2 = (alpha * r).powi(2);
        if alpha == 1.0 {
            let e = system.problem().energy(&u)? - i_f;
            cone_constant = cone_constant.min(e / (r * r));
            accepted += 1;
            continue;
        }
        let mut ap = vec![CZERO; np];
        for j in k..(k + 8).min(np) {
            ap[j] = C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)) / lam_pos[j].sqrt();
        }
        let p1: f64 = (k..np).map(|j| lam_pos[j] * ap[j].norm_sqr()).sum();
        let beta = rng.gen::<f64>();
        let dir = random_low_direction(&mut rng, k);
        let q: f64 = dir.iter().zip(lam_pos).map(|(c, l)| l * c.norm_sqr()).sum();
        let s = (beta * p1 / tau / q).sqrt();
        for j in 0..k {
            ap[j] = dir[j] * s;
        }
        let am = system.negative_coefficients(&u, &ap, None)?;
        let p2: f64 = (0..k).map(|j| lam_pos[j] * ap[j].norm_sqr()).sum();
        let pm: f64 = am.iter().zip(&basis.eigenvalues()[..nn]).map(|(a, l)| l.abs() * a.norm_sqr()).sum();
        let gamma2 = (r * r - d2) / (p1 + p2 + pm);
        if !(d2 + gamma2 * (p1 + pm) >= tau * gamma2 * p2) {
            continue;
        }
        let g = gamma2.sqrt();
        let am: Vec<C64> = am.iter().map(|z| z * g).collect();
        let ap: Vec<C64> = ap.iter().map(|z| z * g).collect();
        let psi = system.synthesize(&am, &ap);
        let e = system.energy(&u, &psi)?.total - i_f;
        cone_constant = cone_constant.min(e / (r * r));
        accepted += 1;
    }
    trace.push(format!("𝓛: τ = {tau}, r = {r}, min (E − I(f))/r² = {cone_constant:e}"));

    // Seeds: the highest 𝓓-interior samples, preferably above I(f), each moved to the
    // critical point of its slice.
    let mut interior: Vec<(DPoint, f64)> = Vec::new();
    for _ in 0..opts.interior_samples {
        let (x, y): (f64, f64) = (rng.gen(), rng.gen());
        let p = low_point(&mut rng, c.t * x, c.r * y);
        let (u, psi) = p.state(system, k);
        let e = system.energy(&u, &psi)?.total;
        membership_residual = membership_residual.max(system.nehari_residual(&u, &psi)?.sup_norm);
        interior.push((p, e));
    }
    interior.sort_by(|a, b| b.1.total_cmp(&a.1));
    let mut seeds = Vec::new();
    let mut newton = None;
    for (p, e) in interior.into_iter().take(opts.max_seeds) {
        let low_norm = p.low_norm(lam_pos);
        let mut report = SeedReport { sample: (p.t, p.amp, low_norm), sample_energy: e, outcome: String::new(), converged: false };
        if newton.is_some() {
            report.outcome = "skipped: an earlier seed converged".into();
            seeds.push(report);
            continue;
        }
        let bn: f64 = p.low.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        let lam_hat = if bn > 0.0 {
            p.low.iter().zip(lam_pos).map(|(z, l)| l * z.norm_sqr()).sum::<f64>() / (bn * bn)
        } else {
            c.lambda_k
        };
        let Some([t, al, be]) = slice_critical_point(system, &c, lam_hat, [p.t, p.amp, bn]) else {
            report.outcome = "slice search did not converge".into();
            seeds.push(report);
            continue;
        };
        let dir: Vec<C64> = if bn > 0.0 { p.low.iter().map(|z| z / bn).collect() } else { vec![CZERO; k] };
        let q = DPoint { t, amp: al, low: dir.into_iter().map(|z| z * be).collect() };
        let (u, psi) = q.state(system, k);
        let seed_state = system.state(u, psi)?;
        match newton_refine(system, &seed_state, opts.newton_tol, opts.newton_max_iter) {
            Ok(out) if out.state.is_nontrivial() => {
                report.outcome = format!(
                    "nontrivial after {} Newton iterations, residual {:e}, E − I(f) = {:e}",
                    out.iterations,
                    out.state.el_residual(),
                    out.state.energy - i_f
                );
                report.converged = true;
                newton = Some(out);
            }
            Ok(out) => report.outcome = format!("collapsed to the {} branch", out.basin.as_str()),
            Err(e) => report.outcome = format!("Newton failed: {e}"),
        }
        trace.push(format!("seed at t = {:.4}: {}", p.t, report.outcome));
        seeds.push(report);
    }
    if newton.is_none() {
        let detail: Vec<String> = seeds.iter().map(|s| format!("E = {:.8}: {}", s.sample_energy, s.outcome)).collect();
        return Err(Error::Search(format!("no linking seed refined to a nontrivial solution [{}]", detail.join("; "))));
    }
    Ok(LinkingOutcome {
        constants: c,
        negative_part_constant: cneg,
        tau,
        r,
        boundary_max_excess,
        membership_residual,
        cone_constant,
        seeds,
        newton,
        trace,
    })
}

/// Smooth random scalar field: `(S + M)⁻¹ M ξ` for uniform nodal noise ξ.
pub(crate) fn smoothed_noise(system: &CoupledSystem<'_>, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    let ops = system.problem().ops();
    let xi: Vec<f64> = ops.lumped_mass().iter().map(|m| m * rng.gen_range(-1.0..1.0)).collect();
    ops.h1_riesz(&xi)
}

/// Negative-part constant over the lowest eight positive modes and `samples` smooth
/// scalar perturbations with `‖u − f‖_{H¹} = radius`.
pub(crate) fn estimate_negative_part_constant(
    system: &CoupledSystem<'_>,
    samples: usize,
    radius: f64,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let ops = system.problem().ops();
    let mut perturbations = Vec::with_capacity(samples);
    for _ in 0..samples {
        let du = smoothed_noise(system, rng)?;
        let s = radius / ops.h1_norm(&du).max(1e-300);
        perturbations.push(du.into_iter().map(|d| d * s).collect());
    }
    system.negative_part_constant(&perturbations, 8)
}
