//! Run configuration: a TOML file with `[geometry]`, `[coefficients]`, `[dirac]`, `[rho]`,
//! `[sweep]`, `[tolerances]` and `[search]` sections. Every field has a default, so an
//! empty file is a valid configuration.
//!
//! Coefficients are sums of whitelisted terms in (x, y):
//!
//! ```toml
//! [coefficients]
//! h = [{ constant = -1.0 }, { polynomial = [[-0.3, 2, 0]] }]
//! lambda = [{ gaussian = { amplitude = -0.5, center = [0.0, 0.9], width = 0.2 } }]
//! ```
//!
//! A polynomial is a list of `[coefficient, power of x, power of y]` monomials.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use superliouville::geometry::TriMesh;
use superliouville::spinor::ChiralitySign;

use crate::CliError;

#[derive(Clone, Debug, Default, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub geometry: GeometryConfig,
    pub coefficients: CoefficientsConfig,
    pub dirac: DiracConfig,
    pub rho: RhoConfig,
    pub sweep: Option<SweepConfig>,
    pub tolerances: Tolerances,
    pub search: SearchConfig,
    pub output: Option<PathBuf>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct GeometryConfig {
    pub outer_radius: f64,
    pub hole_centers: [[f64; 2]; 2],
    pub hole_radii: [f64; 2],
    pub target_h: f64,
    pub seed: u64,
    /// Mesh written by `mesh`; replaces the generated mesh when set.
    pub mesh_file: Option<PathBuf>,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        GeometryConfig { outer_radius: 1.0, hole_centers: [[-0.4, 0.0], [0.4, 0.0]], hole_radii: [0.15, 0.15], target_h: 0.12, seed: 7, mesh_file: None }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct Gaussian {
    pub amplitude: f64,
    pub center: [f64; 2],
    pub width: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "snake_case")]
pub enum Term {
    Constant(f64),
    Polynomial(Vec<(f64, u32, u32)>),
    Gaussian(Gaussian),
}

impl Term {
    pub fn eval(&self, x: f64, y: f64) -> f64 {
        match self {
            Term::Constant(c) => *c,
            Term::Polynomial(ms) => ms.iter().map(|(c, px, py)| c * x.powi(*px as i32) * y.powi(*py as i32)).sum(),
            Term::Gaussian(g) => {
                let d2 = (x - g.center[0]).powi(2) + (y - g.center[1]).powi(2);
                g.amplitude * (-d2 / (2.0 * g.width * g.width)).exp()
            }
        }
    }

    /// Upper bound over the box `[−r, r]²` by interval arithmetic.
    pub fn upper_bound(&self, r: f64) -> f64 {
        match self {
            Term::Constant(c) => *c,
            Term::Polynomial(ms) => ms
                .iter()
                .map(|(c, px, py)| {
                    let (lo, hi) = mul_interval(power_interval(r, *px), power_interval(r, *py));
                    (c * lo).max(c * hi)
                })
                .sum(),
            Term::Gaussian(g) => {
                let dmax = g.center[0].abs().max(g.center[1].abs()) * std::f64::consts::SQRT_2 + r * std::f64::consts::SQRT_2;
                let lo = (-dmax * dmax / (2.0 * g.width * g.width)).exp();
                (g.amplitude * lo).max(g.amplitude)
            }
        }
    }

    fn validate(&self) -> Result<(), String> {
        match self {
            Term::Constant(c) if !c.is_finite() => Err(format!("constant {c} is not finite")),
            Term::Polynomial(ms) if ms.iter().any(|(c, px, py)| !c.is_finite() || *px > 12 || *py > 12) => {
                Err("polynomial coefficients must be finite and powers at most 12".into())
            }
            Term::Gaussian(g) if !(g.amplitude.is_finite() && g.width > 0.0 && g.center.iter().all(|c| c.is_finite())) => {
                Err("gaussian needs finite amplitude and center and positive width".into())
            }
            _ => Ok(()),
        }
    }
}

fn power_interval(r: f64, p: u32) -> (f64, f64) {
    match p {
        0 => (1.0, 1.0),
        p if p % 2 == 1 => (-r.powi(p as i32), r.powi(p as i32)),
        p => (0.0, r.powi(p as i32)),
    }
}

fn mul_interval(a: (f64, f64), b: (f64, f64)) -> (f64, f64) {
    let c = [a.0 * b.0, a.0 * b.1, a.1 * b.0, a.1 * b.1];
    (c.iter().copied().fold(f64::INFINITY, f64::min), c.iter().copied().fold(f64::NEG_INFINITY, f64::max))
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct CoefficientsConfig {
    pub h: Vec<Term>,
    pub lambda: Vec<Term>,
}

impl Default for CoefficientsConfig {
    fn default() -> Self {
        CoefficientsConfig {
            h: vec![Term::Constant(-1.0), Term::Polynomial(vec![(-0.3, 2, 0)])],
            lambda: vec![Term::Constant(-0.5)],
        }
    }
}

/// Sampled and interval checks of `coefficient ≤ 0`.
#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct SignReport {
    pub sampled_max: f64,
    pub interval_bound: f64,
}

impl SignReport {
    pub fn sampled_ok(&self) -> bool {
        self.sampled_max <= 0.0
    }

    pub fn certified(&self) -> bool {
        self.interval_bound <= 0.0
    }
}

pub fn eval_sum(terms: &[Term], x: f64, y: f64) -> f64 {
    terms.iter().map(|t| t.eval(x, y)).sum()
}

impl CoefficientsConfig {
    pub fn sample(&self, mesh: &TriMesh) -> (Vec<f64>, Vec<f64>) {
        let h = mesh.vertices().iter().map(|p| eval_sum(&self.h, p[0], p[1])).collect();
        let l = mesh.vertices().iter().map(|p| eval_sum(&self.lambda, p[0], p[1])).collect();
        (h, l)
    }

    /// Sign reports for h (all vertices) and λ (boundary vertices).
    pub fn sign_reports(&self, mesh: &TriMesh, radius: f64) -> (SignReport, SignReport) {
        let (h, l) = self.sample(mesh);
        let hmax = h.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lmax = (0..mesh.num_vertices()).filter(|&v| mesh.is_boundary(v)).map(|v| l[v]).fold(f64::NEG_INFINITY, f64::max);
        let bound = |ts: &[Term]| ts.iter().map(|t| t.upper_bound(radius)).sum::<f64>();
        (
            SignReport { sampled_max: hmax, interval_bound: bound(&self.h) },
            SignReport { sampled_max: lmax, interval_bound: bound(&self.lambda) },
        )
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct DiracConfig {
    /// "plus" or "minus": the admissible eigenvalue of n⃗·G on the boundary.
    pub chirality: String,
}

impl Default for DiracConfig {
    fn default() -> Self {
        DiracConfig { chirality: "plus".into() }
    }
}

impl DiracConfig {
    pub fn sign(&self) -> Result<ChiralitySign, CliError> {
        match self.chirality.as_str() {
            "plus" => Ok(ChiralitySign::Plus),
            "minus" => Ok(ChiralitySign::Minus),
            s => Err(CliError::Input(format!("chirality must be \"plus\" or \"minus\", got {s:?}"))),
        }
    }
}

/// Either an absolute `value`, or `λ_k + fraction (λ_{k+1} − λ_k)` with `between = k`
/// (λ₀ = 0).
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct RhoConfig {
    pub value: Option<f64>,
    pub between: Option<usize>,
    pub fraction: Option<f64>,
}

impl Default for RhoConfig {
    fn default() -> Self {
        RhoConfig { value: None, between: Some(0), fraction: Some(0.5) }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RhoSpec {
    Absolute(f64),
    Spectral { between: usize, fraction: f64 },
}

impl RhoConfig {
    pub fn spec(&self) -> Result<RhoSpec, CliError> {
        match (self.value, self.between, self.fraction) {
            (Some(v), None, None) if v.is_finite() && v > 0.0 => Ok(RhoSpec::Absolute(v)),
            (Some(v), None, None) => Err(CliError::Input(format!("rho must be positive and finite, got {v}"))),
            (None, Some(k), Some(t)) if (0.0..=1.0).contains(&t) => Ok(RhoSpec::Spectral { between: k, fraction: t }),
            (None, Some(_), Some(t)) => Err(CliError::Input(format!("rho fraction must lie in [0, 1], got {t}"))),
            _ => Err(CliError::Input("[rho] needs either `value` or both `between` and `fraction`".into())),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub start: f64,
    pub stop: f64,
    pub count: usize,
    /// Half-width of the window skipped around each weighted eigenvalue.
    pub exclusion: f64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig { start: 0.2, stop: 3.0, count: 8, exclusion: 1e-6 }
    }
}

impl SweepConfig {
    pub fn values(&self) -> Result<Vec<f64>, CliError> {
        if !(self.start > 0.0 && self.stop >= self.start && self.count >= 1 && self.exclusion >= 0.0) {
            return Err(CliError::Input("sweep needs 0 < start ≤ stop, count ≥ 1 and exclusion ≥ 0".into()));
        }
        if self.count == 1 {
            return Ok(vec![self.start]);
        }
        Ok((0..self.count).map(|i| self.start + (self.stop - self.start) * i as f64 / (self.count - 1) as f64).collect())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    pub liouville: f64,
    pub newton: f64,
    /// Reduced-gradient norm at which the mountain-pass string hands over to Newton.
    pub search: f64,
    /// Largest EL residual reported as a solution.
    pub accept: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances { liouville: 1e-12, newton: 1e-10, search: 1e-2, accept: 1e-6 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct SearchConfig {
    pub images: usize,
    pub max_iters: usize,
    pub max_restarts: usize,
    pub newton_max_iter: usize,
    pub boundary_samples: usize,
    pub cone_samples: usize,
    pub interior_samples: usize,
    pub max_seeds: usize,
    pub r0: f64,
    pub seed: u64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            images: 10,
            max_iters: 400,
            max_restarts: 5,
            newton_max_iter: 30,
            boundary_samples: 100,
            cone_samples: 100,
            interior_samples: 60,
            max_seeds: 4,
            r0: 0.1,
            seed: 0,
        }
    }
}

/// Command-line overrides applied on top of the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub tol: Option<f64>,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<RunConfig, CliError> {
        toml::from_str(text).map_err(|e| CliError::Input(format!("config: {e}")))
    }

    pub fn load(path: Option<&Path>, overrides: &Overrides) -> Result<RunConfig, CliError> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| CliError::Input(format!("cannot read {}: {e}", p.display())))?;
                RunConfig::parse(&text)?
            }
            None => RunConfig::default(),
        };
        if let Some(o) = &overrides.out {
            cfg.output = Some(o.clone());
        }
        if let Some(s) = overrides.seed {
            cfg.geometry.seed = s;
            cfg.search.seed = s;
        }
        if let Some(t) = overrides.tol {
            cfg.tolerances.newton = t;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        for (name, terms) in [("h", &self.coefficients.h), ("lambda", &self.coefficients.lambda)] {
            for t in terms {
                t.validate().map_err(|e| CliError::Input(format!("coefficient {name}: {e}")))?;
            }
        }
        let t = &self.tolerances;
        if ![t.liouville, t.newton, t.search, t.accept].iter().all(|v| v.is_finite() && *v > 0.0) {
            return Err(CliError::Input("tolerances must be positive and finite".into()));
        }
        if self.search.images < 2 {
            return Err(CliError::Input("search.images must be at least 2".into()));
        }
        self.dirac.sign()?;
        self.rho.spec()?;
        if let Some(s) = &self.sweep {
            s.values()?;
        }
        Ok(())
    }

    pub fn output_dir(&self) -> PathBuf {
        self.output.clone().unwrap_or_else(|| PathBuf::from("out"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_the_default() {
        assert_eq!(RunConfig::parse("").unwrap(), RunConfig::default());
    }

    #[test]
    fn whitelist_terms_parse_and_evaluate() {
        let cfg = RunConfig::parse(
            r#"
            [coefficients]
            h = [{ constant = -1.0 }, { polynomial = [[-0.5, 1, 1], [2.0, 0, 2]] }]
            lambda = [{ gaussian = { amplitude = -2.0, center = [0.0, 1.0], width = 0.5 } }]
            "#,
        )
        .unwrap();
        let h = eval_sum(&cfg.coefficients.h, 0.5, -1.0);
        assert!((h - (-1.0 + 0.25 + 2.0)).abs() < 1e-15);
        assert!((eval_sum(&cfg.coefficients.lambda, 0.0, 1.0) + 2.0).abs() < 1e-15);
    }

    #[test]
    fn unknown_fields_are_rejected() {
        assert!(RunConfig::parse("[geometry]\nradius = 2.0\n").is_err());
        assert!(RunConfig::parse("[coefficients]\nh = [{ sine = 1.0 }]\n").is_err());
    }

    #[test]
    fn interval_bound_dominates_samples() {
        let terms = [
            Term::Polynomial(vec![(-0.3, 2, 0), (0.7, 1, 3), (-1.0, 0, 0)]),
            Term::Gaussian(Gaussian { amplitude: 0.4, center: [0.3, -0.2], width: 0.3 }),
            Term::Gaussian(Gaussian { amplitude: -0.4, center: [0.0, 0.0], width: 0.3 }),
        ];
        for t in &terms {
            let ub = t.upper_bound(1.0);
            for i in 0..=40 {
                for j in 0..=40 {
                    let (x, y) = (-1.0 + i as f64 / 20.0, -1.0 + j as f64 / 20.0);
                    assert!(t.eval(x, y) <= ub + 1e-15);
                }
            }
        }
    }

    #[test]
    fn rho_forms() {
        let abs = RhoConfig { value: Some(0.8), between: None, fraction: None };
        assert_eq!(abs.spec().unwrap(), RhoSpec::Absolute(0.8));
        assert_eq!(RhoConfig::default().spec().unwrap(), RhoSpec::Spectral { between: 0, fraction: 0.5 });
        let both = RhoConfig { value: Some(0.8), between: Some(1), fraction: Some(0.5) };
        assert!(matches!(both.spec(), Err(CliError::Input(_))));
    }

    #[test]
    fn overrides_apply() {
        let o = Overrides { out: Some("x".into()), seed: Some(42), tol: Some(1e-9) };
        let cfg = RunConfig::load(None, &o).unwrap();
        assert_eq!((cfg.geometry.seed, cfg.search.seed, cfg.tolerances.newton), (42, 42, 1e-9));
        assert_eq!(cfg.output_dir(), PathBuf::from("x"));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn term() -> impl Strategy<Value = Term> {
            prop_oneof![
                (-3.0f64..3.0).prop_map(Term::Constant),
                prop::collection::vec((-2.0f64..2.0, 0u32..5, 0u32..5), 1..4).prop_map(Term::Polynomial),
                (-2.0f64..2.0, -1.0f64..1.0, -1.0f64..1.0, 0.05f64..1.0)
                    .prop_map(|(amplitude, x, y, width)| Term::Gaussian(Gaussian { amplitude, center: [x, y], width })),
            ]
        }

        proptest! {
            #[test]
            fn interval_bound_dominates_every_point_of_the_box(t in term(), x in -1.0f64..1.0, y in -1.0f64..1.0) {
                prop_assert!(t.eval(x, y) <= t.upper_bound(1.0) + 1e-12);
            }
        }
    }
}
