//! Subcommands other than `verify`. Each writes into the configured output directory;
//! `sweep` uses one subdirectory per ρ.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde_json::{json, Value};
use superliouville::geometry::{gauss_bonnet_defect, TriMesh};
use superliouville::spinor::{assemble_dirac, ChiralitySign};
use superliouville::nehari::{
    linking_search, mountain_pass_search, ps_diagnostics, CoupledState, CoupledSystem, LinkingOptions, MountainPassOptions,
    SpectralWindow,
};

use crate::config::RunConfig;
use crate::io::{basis_block, float_bytes, mesh_to_text, scalar_csv, sha256_hex, spectrum_csv, spinor_csv, write_json, write_text};
use crate::pipeline::{self, Scalar, Spectral};
use crate::{plot, CliError};

pub fn prepare_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", dir.display())))
}

fn gauss_bonnet_entry(mesh: &TriMesh) -> Result<Value, CliError> {
    let defect = gauss_bonnet_defect(mesh, &pipeline::gauss_bonnet_metric(mesh)?)?;
    let chi = mesh.euler_characteristic();
    Ok(json!({
        "chi": chi,
        "defect": defect,
        "relative_defect": defect.abs() / (2.0 * std::f64::consts::PI * chi as f64).abs(),
        "h": mesh.h(),
        "vertices": mesh.num_vertices(),
        "triangles": mesh.num_triangles(),
        "boundary_components": mesh.num_boundary_components(),
        "seed": mesh.seed(),
        "metric": "exp(2 phi) |dx|^2, phi = 0.3 sin(2x) + 0.2 y^2",
    }))
}

pub fn mesh(cfg: &RunConfig, refine: bool) -> Result<(), CliError> {
    let dir = cfg.output_dir();
    prepare_dir(&dir)?;
    let m = pipeline::configured_mesh(&cfg.geometry)?;
    write_text(&dir.join("mesh.txt"), &mesh_to_text(&m))?;
    let mut report = gauss_bonnet_entry(&m)?;
    println!("mesh: {} vertices, {} triangles, chi = {}", m.num_vertices(), m.num_triangles(), m.euler_characteristic());
    if refine {
        let fine = pipeline::build_mesh(&cfg.geometry, 0.5 * m.h().min(cfg.geometry.target_h))?;
        write_text(&dir.join("mesh_refined.txt"), &mesh_to_text(&fine))?;
        let fine_entry = gauss_bonnet_entry(&fine)?;
        let ratio = report["defect"].as_f64().unwrap_or(f64::NAN) / fine_entry["defect"].as_f64().unwrap_or(f64::NAN);
        report["refined"] = fine_entry;
        report["defect_ratio"] = json!(ratio);
        println!("refined: {} vertices, defect ratio {ratio:.3}", fine.num_vertices());
    }
    println!("Gauss-Bonnet defect {:.6e}", report["defect"].as_f64().unwrap_or(f64::NAN));
    write_json(&dir.join("gauss_bonnet.json"), &report)
}

fn liouville_json(s: &Scalar) -> Value {
    let sol = &s.solution;
    json!({
        "residual": sol.residual_norm,
        "iterations": sol.iterations,
        "energy": sol.energy,
        "c0": sol.c0,
        "hessian_min_eigenvalue": sol.certificate.min_eigenvalue,
        "hessian_cholesky": sol.certificate.cholesky,
        "h_sign": s.h_sign,
        "lambda_sign": s.lambda_sign,
        "f_min": sol.f.iter().copied().fold(f64::INFINITY, f64::min),
        "f_max": sol.f.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    })
}

pub fn liouville(cfg: &RunConfig) -> Result<(), CliError> {
    let dir = cfg.output_dir();
    prepare_dir(&dir)?;
    let s = pipeline::scalar(cfg)?;
    write_text(&dir.join("f.csv"), &scalar_csv(&s.mesh, "f", &s.solution.f))?;
    write_json(&dir.join("liouville.json"), &liouville_json(&s))?;
    write_text(&dir.join("f.svg"), &plot::heat_map("f", &s.mesh, &s.solution.f))?;
    println!(
        "f: residual {:.3e} after {} Newton steps, I(f) = {:.10}",
        s.solution.residual_norm, s.solution.iterations, s.solution.energy
    );
    Ok(())
}

fn spectrum_json(cfg: &RunConfig, s: &Scalar, sp: &Spectral) -> Value {
    let b = &sp.basis;
    json!({
        "mesh_sha256": sha256_hex(mesh_to_text(&s.mesh).as_bytes()),
        "weight_sha256": sha256_hex(&float_bytes(b.weight())),
        "chirality": cfg.dirac.chirality,
        "dofs": sp.dirac.num_dofs(),
        "modes": b.num_modes(),
        "negative": b.num_negative(),
        "positive": b.num_positive(),
        "kernel_dimension": b.kernel_dimension(),
        "orthonormality_defect": b.orthonormality_defect(),
        "lambda_1": b.eigenvalue(1),
        "lambda_2": b.eigenvalue(2),
        "lambda_minus_1": b.eigenvalue(-1),
    })
}

fn max_relative_gap(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-300)).fold(0.0, f64::max)
}

/// Modes per sign compared by the symmetry diagnostics; the top of a discrete spectrum
/// is not resolved and may be unpaired.
const SYMMETRY_MODES: usize = 20;

/// Diagnostics only: the unweighted spectrum under the opposite chirality sign, and the
/// reflection λ ↦ −λ, over the lowest modes. Neither symmetry is asserted anywhere.
fn symmetry_json(s: &Scalar, sp: &Spectral) -> Result<Value, CliError> {
    let other_sign = match sp.dirac.sign() {
        ChiralitySign::Plus => ChiralitySign::Minus,
        ChiralitySign::Minus => ChiralitySign::Plus,
    };
    let other = assemble_dirac(&s.mesh, &s.phi, other_sign)?;
    // Positive and negated negative eigenvalues, each ascending.
    let halves = |v: &[f64]| {
        let mut pos: Vec<f64> = v.iter().copied().filter(|l| *l > 0.0).collect();
        let mut neg: Vec<f64> = v.iter().copied().filter(|l| *l < 0.0).map(|l| -l).collect();
        pos.sort_by(f64::total_cmp);
        neg.sort_by(f64::total_cmp);
        pos.truncate(SYMMETRY_MODES);
        neg.truncate(SYMMETRY_MODES);
        (pos, neg)
    };
    let (p, n) = halves(sp.dirac.eigenvalues());
    let (op, on) = halves(other.eigenvalues());
    Ok(json!({
        "modes_per_sign": SYMMETRY_MODES,
        "opposite_sign_max_relative_difference": max_relative_gap(&p, &op).max(max_relative_gap(&n, &on)),
        "reflection_max_relative_difference": max_relative_gap(&p, &n),
    }))
}

fn ladder_cap(sp: &Spectral, rho: Option<f64>) -> f64 {
    let l = sp.basis.eigenvalue(4).or(sp.basis.eigenvalue(1)).unwrap_or(1.0);
    l.max(1.5 * rho.unwrap_or(0.0))
}

pub fn spectrum(cfg: &RunConfig, save_basis: bool) -> Result<(), CliError> {
    let dir = cfg.output_dir();
    prepare_dir(&dir)?;
    let s = pipeline::scalar(cfg)?;
    let sp = pipeline::spectral(cfg, &s)?;
    write_text(&dir.join("spectrum.csv"), &spectrum_csv(&sp.basis))?;
    let mut desc = spectrum_json(cfg, &s, &sp);
    desc["symmetry_diagnostics"] = symmetry_json(&s, &sp)?;
    if save_basis {
        let block = basis_block(&sp.basis);
        desc["basis"] = json!({
            "file": "basis.bin",
            "layout": "column-major little-endian f64 (re, im) pairs",
            "rows": sp.basis.vectors().nrows(),
            "cols": sp.basis.vectors().ncols(),
            "sha256": sha256_hex(&block),
        });
        fs::write(dir.join("basis.bin"), block).map_err(|e| CliError::Runtime(format!("cannot write basis.bin: {e}")))?;
    }
    write_json(&dir.join("spectrum.json"), &desc)?;
    write_text(&dir.join("spectrum.svg"), &plot::spectrum_ladder(sp.basis.eigenvalues(), None, ladder_cap(&sp, None)))?;
    println!(
        "{} modes ({} negative, {} positive), lambda_1 = {:.10}",
        sp.basis.num_modes(),
        sp.basis.num_negative(),
        sp.basis.num_positive(),
        sp.basis.eigenvalue(1).unwrap_or(f64::NAN)
    );
    Ok(())
}

fn window_json(w: SpectralWindow) -> Value {
    match w {
        SpectralWindow::BelowFirst => json!({ "kind": "below_first" }),
        SpectralWindow::Between(k) => json!({ "kind": "between", "k": k }),
        SpectralWindow::AboveAll => json!({ "kind": "above_all" }),
    }
}

fn state_json(st: &CoupledState, i_f: f64) -> Value {
    json!({
        "energy": st.energy,
        "energy_minus_trivial": st.energy - i_f,
        "scalar_energy": st.scalar_energy,
        "spinor_energy": st.spinor_energy,
        "scalar_residual": st.scalar_residual,
        "spinor_residual": st.spinor_residual,
        "el_residual": st.el_residual(),
        "spinor_norm": st.spinor_norm,
        "nontrivial": st.is_nontrivial(),
    })
}

/// Outcome of one ρ, as recorded in sweep summaries.
pub struct RunSummary {
    pub branch: &'static str,
    pub window: SpectralWindow,
    pub state: CoupledState,
    pub trivial_energy: f64,
}

struct Found {
    branch: &'static str,
    state: CoupledState,
    iterates: Vec<CoupledState>,
    details: Value,
    trace: Vec<String>,
}

/// A failed search with whatever trace it produced.
type Failure = (CliError, Vec<String>);

fn core_failure(e: superliouville::Error) -> Failure {
    let trace = match &e {
        superliouville::Error::Solver { trace, .. } => trace.clone(),
        _ => Vec::new(),
    };
    (CliError::from(e), trace)
}

fn mountain_pass(cfg: &RunConfig, sys: &CoupledSystem<'_>) -> Result<Found, Failure> {
    let s = &cfg.search;
    let opts = MountainPassOptions {
        images: s.images,
        max_iters: s.max_iters,
        search_tol: cfg.tolerances.search,
        newton_tol: cfg.tolerances.newton,
        newton_max_iter: s.newton_max_iter,
        max_restarts: s.max_restarts,
        seed: s.seed,
        ..MountainPassOptions::default()
    };
    let out = mountain_pass_search(sys, &opts).map_err(core_failure)?;
    let mut iterates = out.history.clone();
    iterates.extend(out.newton.history.iter().cloned());
    let details = json!({
        "endpoint": { "t": out.endpoint_t, "s": out.endpoint_s, "energy": out.endpoint_energy },
        "search_iterations": out.search_iterations,
        "search_gradient_norm": out.search_gradient_norm,
        "restarts": out.restarts,
        "path_energies": out.path_energies,
        "newton_iterations": out.newton.iterations,
        "newton_residuals": out.newton.residuals,
        "basin": out.newton.basin.as_str(),
    });
    Ok(Found { branch: "mountain_pass", state: out.newton.state, iterates, details, trace: out.trace })
}

fn linking(cfg: &RunConfig, sys: &CoupledSystem<'_>) -> Result<Found, Failure> {
    let s = &cfg.search;
    let opts = LinkingOptions {
        boundary_samples: s.boundary_samples,
        cone_samples: s.cone_samples,
        interior_samples: s.interior_samples,
        max_seeds: s.max_seeds,
        r0: s.r0,
        negative_part_constant: None,
        newton_tol: cfg.tolerances.newton,
        newton_max_iter: s.newton_max_iter,
        seed: s.seed,
    };
    let out = linking_search(sys, &opts).map_err(core_failure)?;
    let c = &out.constants;
    let seeds: Vec<Value> = out
        .seeds
        .iter()
        .map(|r| {
            json!({
                "t": r.sample.0, "amplitude": r.sample.1, "low_norm": r.sample.2,
                "sample_energy": r.sample_energy, "outcome": r.outcome, "converged": r.converged,
            })
        })
        .collect();
    let details = json!({
        "constants": {
            "k": c.k, "lambda_k": c.lambda_k, "lambda_k1": c.lambda_k1,
            "T": c.t, "A": c.a, "R": c.r, "c1": c.c1, "c2": c.c2, "c3": c.c3, "c4": c.c4,
            "top_bound": c.top_bound(sys.rho()),
        },
        "negative_part_constant": out.negative_part_constant,
        "tau": out.tau,
        "r": out.r,
        "boundary_max_excess": out.boundary_max_excess,
        "membership_residual": out.membership_residual,
        "cone_constant": out.cone_constant,
        "seeds": seeds,
        "newton_iterations": out.newton.as_ref().map(|n| n.iterations),
        "newton_residuals": out.newton.as_ref().map(|n| n.residuals.clone()),
    });
    let Some(newton) = out.newton else {
        return Err((CliError::Solver("no linking seed refined to a non-trivial solution".into()), out.trace));
    };
    Ok(Found { branch: "linking", state: newton.state, iterates: newton.history, details, trace: out.trace })
}

fn config_echo(cfg: &RunConfig) -> Result<(Value, String), CliError> {
    // The output path is where the run went, not part of the experiment.
    let mut c = cfg.clone();
    c.output = None;
    let text = toml::to_string(&c).map_err(|e| CliError::Runtime(format!("config echo: {e}")))?;
    let value = serde_json::to_value(&c).map_err(|e| CliError::Runtime(format!("config echo: {e}")))?;
    Ok((value, text))
}

fn write_failure(dir: &Path, err: &CliError, trace: &[String]) {
    let mut s = format!("{err}\n");
    for l in trace {
        let _ = writeln!(s, "{l}");
    }
    let _ = fs::write(dir.join("failure.txt"), s);
}

/// Runs the search for one ρ and writes the full bundle into `dir`.
pub fn solve_at(cfg: &RunConfig, s: &Scalar, sp: &Spectral, rho: f64, dir: &Path) -> Result<RunSummary, CliError> {
    prepare_dir(dir)?;
    let sys = CoupledSystem::new(&s.problem, &sp.dirac, &sp.basis, rho)?;
    sys.check_nonresonant()?;
    let window = sys.window();
    let found = match window {
        SpectralWindow::BelowFirst => mountain_pass(cfg, &sys),
        SpectralWindow::Between(_) => linking(cfg, &sys),
        SpectralWindow::AboveAll => Err((
            CliError::Input(format!(
                "rho = {rho} exceeds every computed weighted eigenvalue (largest {})",
                sp.basis.eigenvalues().last().copied().unwrap_or(f64::NAN)
            )),
            Vec::new(),
        )),
    };
    let found = match found {
        Ok(f) => f,
        Err((e, trace)) => {
            write_failure(dir, &e, &trace);
            return Err(e);
        }
    };
    let i_f = sys.trivial_energy();
    let st = &found.state;
    let accepted = st.is_nontrivial() && st.el_residual() <= cfg.tolerances.accept && st.energy > i_f;

    let nodal = sp.dirac.dofs().prolong(&st.psi);
    let abs: Vec<f64> = nodal.values().iter().map(|z| (z[0].norm_sqr() + z[1].norm_sqr()).sqrt()).collect();
    let f_csv = scalar_csv(&s.mesh, "f", &s.solution.f);
    write_text(&dir.join("f.csv"), &f_csv)?;
    write_text(&dir.join("spectrum.csv"), &spectrum_csv(&sp.basis))?;
    write_text(&dir.join("state_u.csv"), &scalar_csv(&s.mesh, "u", &st.u))?;
    write_text(&dir.join("state_psi.csv"), &spinor_csv(&s.mesh, nodal.values()))?;

    let diag = if found.iterates.len() >= 2 { Some(ps_diagnostics(&sys, &found.iterates, false)?) } else { None };
    let mut it_csv = String::from("iteration,energy,gradient_norm,u_norm,psi_norm\n");
    let mut energies = Vec::new();
    if let Some(d) = &diag {
        for (i, r) in d.records.iter().enumerate() {
            let _ = writeln!(it_csv, "{i},{},{},{},{}", r.energy, r.gradient_norm, r.u_norm, r.psi_norm);
            energies.push(r.energy);
        }
    }
    write_text(&dir.join("iterations.csv"), &it_csv)?;
    let mut trace = found.trace.join("\n");
    trace.push('\n');
    write_text(&dir.join("trace.txt"), &trace)?;

    let (config, config_toml) = config_echo(cfg)?;
    let manifest = json!({
        "program": { "name": "superliouville", "version": env!("CARGO_PKG_VERSION") },
        "config": config,
        "config_toml": config_toml,
        "mesh": {
            "sha256": sha256_hex(mesh_to_text(&s.mesh).as_bytes()),
            "vertices": s.mesh.num_vertices(),
            "triangles": s.mesh.num_triangles(),
            "h": s.mesh.h(),
            "chi": s.mesh.euler_characteristic(),
        },
        "f": { "sha256": sha256_hex(f_csv.as_bytes()), "liouville": liouville_json(s) },
        "spectrum": {
            "lambda_1": sp.basis.eigenvalue(1),
            "lambda_2": sp.basis.eigenvalue(2),
            "modes": sp.basis.num_modes(),
            "weight_sha256": sha256_hex(&float_bytes(sp.basis.weight())),
        },
        "rho": rho,
        "window": window_json(window),
        "seeds": { "geometry": cfg.geometry.seed, "search": cfg.search.seed },
        "tolerances": cfg.tolerances,
        "branch": found.branch,
        "search": found.details,
        "trivial_energy": i_f,
        "state": state_json(st, i_f),
        "nontrivial": st.is_nontrivial(),
        "accepted": accepted,
        "iterations": energies.len(),
        "norm_bound": diag.as_ref().map(|d| d.norm_bound),
    });
    write_json(&dir.join("manifest.json"), &manifest)?;

    write_text(&dir.join("spectrum.svg"), &plot::spectrum_ladder(sp.basis.eigenvalues(), Some(rho), ladder_cap(sp, Some(rho))))?;
    write_text(&dir.join("energy.svg"), &plot::series("energy along the search", &energies, Some(i_f)))?;
    write_text(&dir.join("psi_abs.svg"), &plot::heat_map("|psi|", &s.mesh, &abs))?;
    write_text(&dir.join("u.svg"), &plot::heat_map("u", &s.mesh, &st.u))?;

    if !accepted {
        let e = CliError::Solver(format!(
            "{} search ended at a state that is not an accepted solution: nontrivial {}, EL residual {:.3e}, E - I(f) = {:.3e}",
            found.branch,
            st.is_nontrivial(),
            st.el_residual(),
            st.energy - i_f
        ));
        write_failure(dir, &e, &found.trace);
        return Err(e);
    }
    Ok(RunSummary { branch: found.branch, window, state: found.state, trivial_energy: i_f })
}

pub fn solve(cfg: &RunConfig) -> Result<(), CliError> {
    let dir = cfg.output_dir();
    prepare_dir(&dir)?;
    let s = pipeline::scalar(cfg)?;
    let sp = pipeline::spectral(cfg, &s)?;
    let rho = pipeline::resolve_rho(cfg.rho.spec()?, &sp.basis)?;
    let r = solve_at(cfg, &s, &sp, rho, &dir)?;
    println!(
        "{}: rho = {rho:.10}, |psi| = {:.6}, EL residual {:.3e}, E - I(f) = {:.10}",
        r.branch,
        r.state.spinor_norm,
        r.state.el_residual(),
        r.state.energy - r.trivial_energy
    );
    Ok(())
}

pub fn sweep(cfg: &RunConfig) -> Result<(), CliError> {
    let sweep = cfg.sweep.clone().ok_or_else(|| CliError::Input("sweep needs a [sweep] section".into()))?;
    let dir = cfg.output_dir();
    prepare_dir(&dir)?;
    let s = pipeline::scalar(cfg)?;
    let sp = pipeline::spectral(cfg, &s)?;
    let mut summary = String::from("index,rho,status,branch,window,energy_minus_trivial,spinor_norm,el_residual\n");
    let mut failures = 0;
    for (i, rho) in sweep.values()?.into_iter().enumerate() {
        let (j, lam) = sp.basis.nearest(rho);
        if (lam - rho).abs() <= sweep.exclusion.max(superliouville::nehari::RESONANCE_WINDOW) {
            let _ = writeln!(summary, "{i},{rho},excluded_near_lambda_{j},,,,,");
            continue;
        }
        let sub = dir.join(format!("rho_{i:03}"));
        match solve_at(cfg, &s, &sp, rho, &sub) {
            Ok(r) => {
                let w = match r.window {
                    SpectralWindow::BelowFirst => "below_first".to_string(),
                    SpectralWindow::Between(k) => format!("between_{k}"),
                    SpectralWindow::AboveAll => "above_all".to_string(),
                };
                let _ = writeln!(
                    summary,
                    "{i},{rho},ok,{},{w},{},{},{:e}",
                    r.branch,
                    r.state.energy - r.trivial_energy,
                    r.state.spinor_norm,
                    r.state.el_residual()
                );
            }
            Err(CliError::Input(m)) if m.contains("exceeds every computed") => {
                let _ = writeln!(summary, "{i},{rho},above_spectrum,,,,,");
            }
            Err(e) => {
                failures += 1;
                eprintln!("rho = {rho}: {e}");
                let _ = writeln!(summary, "{i},{rho},failed,,,,,");
            }
        }
    }
    write_text(&dir.join("summary.csv"), &summary)?;
    print!("{summary}");
    if failures > 0 {
        return Err(CliError::Solver(format!("{failures} sweep points failed; see failure.txt in their directories")));
    }
    Ok(())
}

/// Prints the key facts of a run, spectrum or sweep directory.
pub fn report(dir: &Path) -> Result<(), CliError> {
    let read = |name: &str| fs::read_to_string(dir.join(name)).ok();
    let parse = |text: String, name: &str| -> Result<Value, CliError> {
        serde_json::from_str(&text).map_err(|e| CliError::Input(format!("{name} in {}: {e}", dir.display())))
    };
    let mut printed = false;
    if let Some(text) = read("manifest.json") {
        let m = parse(text, "manifest.json")?;
        println!("run in {}", dir.display());
        println!("  branch     {}", m["branch"]);
        println!("  rho        {}", m["rho"]);
        println!("  window     {}", m["window"]);
        println!("  nontrivial {}", m["nontrivial"]);
        println!("  accepted   {}", m["accepted"]);
        println!("  residual   {}", m["state"]["el_residual"]);
        println!("  E - I(f)   {}", m["state"]["energy_minus_trivial"]);
        println!("  mesh       {} vertices, sha256 {}", m["mesh"]["vertices"], m["mesh"]["sha256"]);
        if m["branch"] == "linking" {
            let c = &m["search"]["constants"];
            println!("  T, A, R    {}, {}, {}", c["T"], c["A"], c["R"]);
        }
        printed = true;
    }
    if let Some(text) = read("spectrum.json") {
        let d = parse(text, "spectrum.json")?;
        println!("spectrum in {}: {} modes, lambda_1 = {}", dir.display(), d["modes"], d["lambda_1"]);
        if let Some(b) = d.get("basis") {
            let bytes = fs::read(dir.join("basis.bin")).map_err(|e| CliError::Input(format!("basis.bin: {e}")))?;
            let want = b["rows"].as_u64().unwrap_or(0) * b["cols"].as_u64().unwrap_or(0) * 16;
            let ok = bytes.len() as u64 == want && b["sha256"] == sha256_hex(&bytes).as_str();
            println!("  basis.bin  {}", if ok { "matches descriptor" } else { "DOES NOT match descriptor" });
            if !ok {
                return Err(CliError::Runtime("basis.bin does not match spectrum.json".into()));
            }
        }
        printed = true;
    }
    for name in ["gauss_bonnet.json", "liouville.json", "verify.json"] {
        if let Some(text) = read(name) {
            let v = parse(text, name)?;
            println!("{name}: {}", serde_json::to_string(&v).unwrap_or_default());
            printed = true;
        }
    }
    if let Some(text) = read("summary.csv") {
        print!("sweep summary:\n{text}");
        printed = true;
    }
    if !printed {
        return Err(CliError::Input(format!("{} holds no recognizable output", dir.display())));
    }
    Ok(())
}
