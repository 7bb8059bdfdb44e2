//! Random smooth fields defined on the plane rather than on a mesh, so the same draw can be
//! sampled on every refinement level.

use rand::Rng;

use crate::linalg::C64;
use crate::spinor::SpinorField;

#[derive(Clone, Copy, Debug, PartialEq)]
struct Term {
    k: [f64; 2],
    phase: f64,
    amp: f64,
}

/// `Σ a_i cos(k_i·x + θ_i)` with amplitudes decaying like `1/(1 + |k|²)`.
#[derive(Clone, Debug, PartialEq)]
pub struct FourierField {
    terms: Vec<Term>,
}

impl FourierField {
    pub fn random<R: Rng + ?Sized>(rng: &mut R, terms: usize, max_wavenumber: f64) -> Self {
        let terms = (0..terms)
            .map(|_| {
                let k = [rng.gen_range(-max_wavenumber..=max_wavenumber), rng.gen_range(-max_wavenumber..=max_wavenumber)];
                let decay = 1.0 / (1.0 + k[0] * k[0] + k[1] * k[1]);
                Term { k, phase: rng.gen_range(0.0..std::f64::consts::TAU), amp: rng.gen_range(-1.0..1.0) * decay }
            })
            .collect();
        FourierField { terms }
    }

    pub fn eval(&self, p: [f64; 2]) -> f64 {
        self.terms.iter().map(|t| t.amp * (t.k[0] * p[0] + t.k[1] * p[1] + t.phase).cos()).sum()
    }

    pub fn sample(&self, points: &[[f64; 2]]) -> Vec<f64> {
        points.iter().map(|p| self.eval(*p)).collect()
    }
}

/// Spinor whose four real components are independent [`FourierField`]s.
#[derive(Clone, Debug, PartialEq)]
pub struct FourierSpinor {
    parts: [FourierField; 4],
}

impl FourierSpinor {
    pub fn random<R: Rng + ?Sized>(rng: &mut R, terms: usize, max_wavenumber: f64) -> Self {
        FourierSpinor { parts: std::array::from_fn(|_| FourierField::random(rng, terms, max_wavenumber)) }
    }

    pub fn sample(&self, points: &[[f64; 2]]) -> SpinorField {
        let values = points
            .iter()
            .map(|p| {
                let v: [f64; 4] = std::array::from_fn(|i| self.parts[i].eval(*p));
                [C64::new(v[0], v[1]), C64::new(v[2], v[3])]
            })
            .collect();
        SpinorField::new(values).expect("Fourier sums are finite")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn same_draw_same_values_on_any_point_set() {
        let f = FourierField::random(&mut ChaCha8Rng::seed_from_u64(1), 6, 4.0);
        let g = FourierField::random(&mut ChaCha8Rng::seed_from_u64(1), 6, 4.0);
        let pts = [[0.1, 0.2], [-0.7, 0.3]];
        assert_eq!(f.sample(&pts), g.sample(&pts));
        assert_eq!(f.sample(&pts[1..])[0], f.eval(pts[1]));
    }

    #[test]
    fn amplitude_is_bounded_by_decay() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let f = FourierField::random(&mut rng, 8, 5.0);
            let bound: f64 = f.terms.iter().map(|t| t.amp.abs()).sum();
            assert!(f.terms.iter().all(|t| t.amp.abs() <= 1.0 / (1.0 + t.k[0].powi(2) + t.k[1].powi(2))));
            assert!(f.eval([0.3, -0.2]).abs() <= bound);
        }
    }
}
