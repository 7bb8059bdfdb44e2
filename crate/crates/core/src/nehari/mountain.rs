//! Mountain-pass search for `0 < ρ < λ₁` by a climbing string on the reduced functional
//! `(u, a₊) ↦ E_ρ(u, Φ₊a₊ + ψ⁻(u, a₊))`, followed by Newton on the full system.
//!
//! Images live in `(u, b)` with `b_j = √λ_j a_j`, so the path metric is H¹ × H^{1/2}.
//! The gradient of each image is preconditioned in u by `S + diag(m^g) + Hess I`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::newton::{newton_refine, NewtonOutcome};
use super::{CoupledState, CoupledSystem, Reduced, SpectralWindow};
use crate::error::{Error, Result};
use crate::linalg::{solve_spd, C64, CZERO};

#[derive(Clone, Debug)]
pub struct MountainPassOptions {
    /// Number of path segments; the path has `images + 1` points.
    pub images: usize,
    pub max_iters: usize,
    /// Initial step along the preconditioned gradient.
    pub step: f64,
    /// Reduced-gradient norm at the climbing image that hands over to Newton.
    pub search_tol: f64,
    pub newton_tol: f64,
    pub newton_max_iter: usize,
    pub max_restarts: usize,
    pub seed: u64,
    /// Extra room in `t` beyond `ρ e^t = λ₁ + 1`.
    pub endpoint_margin: f64,
}

impl Default for MountainPassOptions {
    fn default() -> Self {
        MountainPassOptions {
            images: 10,
            max_iters: 400,
            step: 0.25,
            search_tol: 1e-2,
            newton_tol: 1e-10,
            newton_max_iter: 30,
            max_restarts: 5,
            seed: 0,
            endpoint_margin: 0.25,
        }
    }
}

#[derive(Clone, Debug)]
pub struct MountainPassOutcome {
    /// Endpoint `(f + t, s φ₁)`.
    pub endpoint_t: f64,
    pub endpoint_s: f64,
    pub endpoint_energy: f64,
    /// Climbing image handed to Newton.
    pub search_state: CoupledState,
    pub search_gradient_norm: f64,
    pub search_iterations: usize,
    /// Energies along the final path, endpoints included.
    pub path_energies: Vec<f64>,
    pub newton: NewtonOutcome,
    pub restarts: usize,
    /// Climbing-image snapshots during the search.
    pub history: Vec<CoupledState>,
    pub trace: Vec<String>,
}

impl MountainPassOutcome {
    pub fn state(&self) -> &CoupledState {
        &self.newton.state
    }
}

/// Picks `t` with `ρ e^t > λ₁ + 1` and doubles `s` until `E_ρ(f + t, s φ₁) < I(f)`.
pub fn mountain_pass_endpoint(system: &CoupledSystem<'_>, margin: f64) -> Result<(f64, f64, f64)> {
    let lam1 = system
        .basis()
        .eigenvalue(1)
        .ok_or_else(|| Error::Input("basis has no positive eigenvalue".into()))?;
    let t = ((lam1 + 1.0) / system.rho()).ln().max(0.0) + margin.max(1e-3);
    let phi1 = system.basis().mode(1).expect("checked above");
    let u: Vec<f64> = system.f().iter().map(|v| v + t).collect();
    let mut s = 1.0;
    for _ in 0..64 {
        let psi: Vec<C64> = phi1.iter().map(|z| z * s).collect();
        let e = system.energy(&u, &psi)?.total;
        if e < system.trivial_energy() {
            return Ok((t, s, e));
        }
        s *= 2.0;
    }
    Err(Error::Search(format!("no endpoint below I(f) along s φ₁ at t = {t}")))
}

#[derive(Clone)]
struct Image {
    u: Vec<f64>,
    b: Vec<C64>,
}

struct Evaluated {
    red: Reduced,
    warm: Vec<C64>,
}

fn combine(x: &Image, y: &Image, s: f64) -> Image {
    Image {
        u: x.u.iter().zip(&y.u).map(|(a, b)| a + s * (b - a)).collect(),
        b: x.b.iter().zip(&y.b).map(|(a, b)| a + (b - a) * s).collect(),
    }
}

fn distance(system: &CoupledSystem<'_>, x: &Image, y: &Image) -> f64 {
    let du: Vec<f64> = x.u.iter().zip(&y.u).map(|(a, b)| a - b).collect();
    let db: f64 = x.b.iter().zip(&y.b).map(|(a, b)| (a - b).norm_sqr()).sum();
    (system.problem().ops().h1_inner(&du, &du) + db).max(0.0).sqrt()
}

/// Redistributes `path[lo..=hi]` to equal arclength, endpoints fixed.
fn reparametrize(system: &CoupledSystem<'_>, path: &mut [Image], lo: usize, hi: usize) {
    if hi <= lo + 1 {
        return;
    }
    let old: Vec<Image> = path[lo..=hi].to_vec();
    let mut cum = vec![0.0];
    for k in 1..old.len() {
        cum.push(cum[k - 1] + distance(system, &old[k - 1], &old[k]));
    }
    let total = *cum.last().unwrap();
    if !(total > 0.0) {
        return;
    }
    let segs = hi - lo;
    let mut k = 0;
    for j in 1..segs {
        let target = total * j as f64 / segs as f64;
        while k + 1 < old.len() - 1 && cum[k + 1] < target {
            k += 1;
        }
        let len = cum[k + 1] - cum[k];
        let s = if len > 0.0 { (target - cum[k]) / len } else { 0.0 };
        path[lo + j] = combine(&old[k], &old[k + 1], s.clamp(0.0, 1.0));
    }
}

fn a_plus(b: &[C64], sqrt_lam: &[f64]) -> Vec<C64> {
    b.iter().zip(sqrt_lam).map(|(b, s)| b / *s).collect()
}

/// Descent direction `−P⁻¹ g` in (u, b), with P the preconditioner at `u`.
fn descent(system: &CoupledSystem<'_>, red: &Reduced, sqrt_lam: &[f64]) -> Result<Image> {
    let ops = system.problem().ops();
    let shift: Vec<f64> = system
        .problem()
        .hessian_diagonal(&red.u)
        .iter()
        .zip(ops.lumped_mass())
        .map(|(h, m)| h + m)
        .collect();
    let du = solve_spd(ops.stiffness(), Some(&shift), &red.cov_u, 1e-10)?;
    Ok(Image {
        u: du.into_iter().map(|v| -v).collect(),
        b: red.cov_plus.iter().zip(sqrt_lam).map(|(c, s)| -c / *s).collect(),
    })
}

fn preconditioned_form(system: &CoupledSystem<'_>, u: &[f64], x: &Image) -> f64 {
    let ops = system.problem().ops();
    let h = system.problem().hessian_diagonal(u);
    let diag: f64 = x.u.iter().zip(h.iter().zip(ops.lumped_mass())).map(|(v, (h, m))| (h + m) * v * v).sum();
    ops.stiffness().form(&x.u, &x.u) + diag + x.b.iter().map(|z| z.norm_sqr()).sum::<f64>()
}

struct SearchResult {
    climbing: Reduced,
    gradient_norm: f64,
    iterations: usize,
    energies: Vec<f64>,
    history: Vec<CoupledState>,
    collapsed: bool,
}

fn run_string(
    system: &CoupledSystem<'_>,
    opts: &MountainPassOptions,
    start: Vec<Image>,
    endpoint_energy: f64,
    search_tol: f64,
    trace: &mut Vec<String>,
) -> Result<SearchResult> {
    let nn = system.basis().num_negative();
    let sqrt_lam: Vec<f64> = system.basis().eigenvalues()[nn..].iter().map(|l| l.sqrt()).collect();
    let n_img = start.len() - 1;
    let mut path = start;
    let mut warm: Vec<Vec<C64>> = vec![vec![CZERO; nn]; n_img + 1];
    let mut step = opts.step;
    let mut history = Vec::new();

    let evaluate = |path: &[Image], warm: &[Vec<C64>]| -> Result<Vec<Option<Evaluated>>> {
        let mut out = Vec::with_capacity(path.len());
        for (i, img) in path.iter().enumerate() {
            if i == 0 || i == path.len() - 1 {
                out.push(None);
                continue;
            }
            let red = system.reduced(&img.u, &a_plus(&img.b, &sqrt_lam), Some(&warm[i]))?;
            let w = red.a[..nn].to_vec();
            out.push(Some(Evaluated { red, warm: w }));
        }
        Ok(out)
    };

    // Past the ridge E is unbounded below in ψ, so each image moves at most a fixed
    // fraction of the initial segment length per iteration.
    let max_move = 0.25 * distance(system, &path[0], &path[n_img]) / n_img as f64;
    let mut evals = evaluate(&path, &warm)?;
    let mut iterations = 0;
    loop {
        let energies: Vec<f64> = (0..=n_img)
            .map(|i| match (i, &evals[i]) {
                (0, _) => system.trivial_energy(),
                (_, Some(e)) => e.red.energy,
                _ => endpoint_energy,
            })
            .collect();
        let c = (1..n_img).max_by(|&i, &j| energies[i].total_cmp(&energies[j])).expect("at least one interior image");
        let climbing = &evals[c].as_ref().unwrap().red;
        let gnorm = system.reduced_gradient_norm(climbing)?;
        if iterations % 10 == 0 {
            history.push(system.state(climbing.u.clone(), climbing.psi.clone())?);
            trace.push(format!("string iteration {iterations}: climbing image {c}, energy {:.10}, gradient {gnorm:e}", energies[c]));
        }
        let psi_norm = system.basis().weighted_norm_sq(&climbing.psi).sqrt();
        let collapsed = psi_norm < 1e-8 && gnorm > search_tol;
        if gnorm <= search_tol || iterations >= opts.max_iters || collapsed {
            let climbing = climbing.clone();
            history.push(system.state(climbing.u.clone(), climbing.psi.clone())?);
            return Ok(SearchResult { climbing, gradient_norm: gnorm, iterations, energies, history, collapsed });
        }
        for (i, e) in evals.iter().enumerate() {
            if let Some(e) = e {
                warm[i] = e.warm.clone();
            }
        }
        // Directions for all interior images; the climbing one reflects its tangential component.
        let mut dirs = Vec::with_capacity(n_img + 1);
        for i in 0..=n_img {
            let Some(e) = &evals[i] else {
                dirs.push(None);
                continue;
            };
            let mut d = descent(system, &e.red, &sqrt_lam)?;
            if i == c {
                let tau = Image {
                    u: path[c + 1].u.iter().zip(&path[c - 1].u).map(|(a, b)| a - b).collect(),
                    b: path[c + 1].b.iter().zip(&path[c - 1].b).map(|(a, b)| a - b).collect(),
                };
                let tp = preconditioned_form(system, &e.red.u, &tau);
                if tp > 0.0 {
                    let gb: Vec<C64> = e.red.cov_plus.iter().zip(&sqrt_lam).map(|(c, s)| c / *s).collect();
                    let slope: f64 = e.red.cov_u.iter().zip(&tau.u).map(|(a, b)| a * b).sum::<f64>()
                        + gb.iter().zip(&tau.b).map(|(a, b)| (a.conj() * b).re).sum::<f64>();
                    let k = 2.0 * slope / tp;
                    d.u.iter_mut().zip(&tau.u).for_each(|(x, t)| *x += k * t);
                    d.b.iter_mut().zip(&tau.b).for_each(|(x, t)| *x += t * k);
                }
            }
            dirs.push(Some(d));
        }
        // Backtrack the step if the update produces an unusable path.
        loop {
            let mut trial = path.clone();
            for (i, d) in dirs.iter().enumerate() {
                if let Some(d) = d {
                    let norm = preconditioned_form(system, &path[i].u, d).max(0.0).sqrt();
                    let step = if step * norm > max_move { max_move / norm } else { step };
                    trial[i].u.iter_mut().zip(&d.u).for_each(|(x, v)| *x += step * v);
                    trial[i].b.iter_mut().zip(&d.b).for_each(|(x, v)| *x += v * step);
                }
            }
            reparametrize(system, &mut trial, 0, c);
            reparametrize(system, &mut trial, c, n_img);
            match evaluate(&trial, &warm) {
                Ok(ev) if ev.iter().flatten().all(|e| e.red.energy.is_finite()) => {
                    path = trial;
                    evals = ev;
                    break;
                }
                _ if step > 1e-6 => {
                    step *= 0.5;
                    trace.push(format!("string iteration {iterations}: step reduced to {step}"));
                }
                Ok(_) => return Err(Error::Search("string update produced non-finite energies".into())),
                Err(e) => return Err(e),
            }
        }
        iterations += 1;
    }
}

/// Mountain-pass pipeline for `0 < ρ < λ₁`: endpoint, climbing string, Newton.
pub fn mountain_pass_search(system: &CoupledSystem<'_>, opts: &MountainPassOptions) -> Result<MountainPassOutcome> {
    system.check_nonresonant()?;
    if system.window() != SpectralWindow::BelowFirst {
        return Err(Error::Input(format!("mountain-pass regime needs 0 < rho < λ₁, rho = {}", system.rho())));
    }
    if opts.images < 2 {
        return Err(Error::Input("the path needs at least two segments".into()));
    }
    let (t, s, endpoint_energy) = mountain_pass_endpoint(system, opts.endpoint_margin)?;
    let nn = system.basis().num_negative();
    let np = system.basis().num_positive();
    let lam = &system.basis().eigenvalues()[nn..];
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut trace = vec![format!("endpoint t = {t}, s = {s}, E = {endpoint_energy}, I(f) = {}", system.trivial_energy())];
    let mut search_tol = opts.search_tol;
    let mut failures = Vec::new();
    for restart in 0..=opts.max_restarts {
        let mut path = Vec::with_capacity(opts.images + 1);
        for i in 0..=opts.images {
            let xi = i as f64 / opts.images as f64;
            let mut b = vec![CZERO; np];
            b[0] = C64::new(xi * s * lam[0].sqrt(), 0.0);
            if restart > 0 {
                // Perturb the interior of the path in the next few modes.
                let amp = 0.1 * s * xi * (1.0 - xi) * restart as f64;
                for bj in b.iter_mut().take(8).skip(1) {
                    *bj = C64::new(rng.gen_range(-amp..=amp), rng.gen_range(-amp..=amp));
                }
            }
            path.push(Image { u: system.f().iter().map(|v| v + xi * t).collect(), b });
        }
        let res = run_string(system, opts, path, endpoint_energy, search_tol, &mut trace)?;
        if res.collapsed {
            failures.push(format!("restart {restart}: climbing image collapsed to ψ ≈ 0"));
            trace.push(failures.last().unwrap().clone());
            continue;
        }
        let seed = system.state(res.climbing.u.clone(), res.climbing.psi.clone())?;
        match newton_refine(system, &seed, opts.newton_tol, opts.newton_max_iter) {
            Ok(newton) if newton.state.is_nontrivial() && newton.state.energy > system.trivial_energy() => {
                trace.push(format!(
                    "Newton converged in {} iterations to residual {:e}",
                    newton.iterations,
                    newton.state.el_residual()
                ));
                return Ok(MountainPassOutcome {
                    endpoint_t: t,
                    endpoint_s: s,
                    endpoint_energy,
                    search_state: seed,
                    search_gradient_norm: res.gradient_norm,
                    search_iterations: res.iterations,
                    path_energies: res.energies,
                    newton,
                    restarts: restart,
                    history: res.history,
                    trace,
                });
            }
            Ok(newton) => failures.push(format!(
                "restart {restart}: Newton reached the {} branch at energy {}",
                newton.basin.as_str(),
                newton.state.energy
            )),
            Err(e) => failures.push(format!("restart {restart}: Newton failed: {e}")),
        }
        trace.push(failures.last().unwrap().clone());
        search_tol *= 0.1;
    }
    Err(Error::Search(format!("mountain-pass search failed: {}", failures.join("; "))))
}
