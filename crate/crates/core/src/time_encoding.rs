//! Functional time encodings.
//!
//! `φ_R(t) = sqrt(1/d) (cos ω_1 t, sin ω_1 t, ..., cos ω_{d/2} t, sin ω_{d/2} t)`
//! has constant norm `sqrt(1/2)`, so its kernel `<φ_R(t_i), φ_R(t_j)>` depends
//! only on `t_i - t_j`. The hyperbolic encoding lifts it through the
//! exponential map at the origin; because the norm is constant, the
//! Lorentzian kernel is an affine function of the Euclidean one and is also
//! translation invariant.

use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::manifold::diff::Geometry;
use crate::manifold::{self, Curvature, LorentzPoint};

#[derive(Debug, Clone, PartialEq)]
pub struct TimeEncodingParams {
    /// Learnable frequencies, length `d / 2`.
    pub omegas: Vec<f64>,
    d: usize,
    curvature: Curvature,
    t_max: f64,
}

impl TimeEncodingParams {
    /// Frequencies on a geometric ladder `ω_k = 10^{(k-1)·4/(d/2-1)} / t_max`.
    pub fn new(d: usize, curvature: Curvature, t_max: f64) -> Result<Self> {
        Self::with_omegas(d, curvature, t_max, default_omegas(d, t_max))
    }

    pub fn with_omegas(d: usize, curvature: Curvature, t_max: f64, omegas: Vec<f64>) -> Result<Self> {
        if d < 2 || d % 2 != 0 {
            return Err(Error::Config(format!("time encoding dimension must be even and >= 2, got {d}")));
        }
        if !(t_max > 0.0 && t_max.is_finite()) {
            return Err(Error::Config(format!("t_max must be positive, got {t_max}")));
        }
        if omegas.len() != d / 2 {
            return Err(Error::Dimension { expected: d / 2, got: omegas.len() });
        }
        Ok(Self { omegas, d, curvature, t_max })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn curvature(&self) -> Curvature {
        self.curvature
    }

    pub fn t_max(&self) -> f64 {
        self.t_max
    }
}

/// Geometric frequency ladder from `1/t_max` up to `10^4/t_max`.
pub fn default_omegas(d: usize, t_max: f64) -> Vec<f64> {
    let half = d / 2;
    if half <= 1 {
        return vec![1.0 / t_max; half];
    }
    (0..half)
        .map(|k| 10f64.powf(k as f64 * 4.0 / (half - 1) as f64) / t_max)
        .collect()
}

/// The Euclidean encoding `φ_R(t)`.
pub fn encode_euclidean(t: f64, p: &TimeEncodingParams) -> Vec<f64> {
    let s = (1.0 / p.d as f64).sqrt();
    p.omegas
        .iter()
        .flat_map(|w| {
            let (sin, cos) = (w * t).sin_cos();
            [s * cos, s * sin]
        })
        .collect()
}

/// `K_R(t_i, t_j) = <φ_R(t_i), φ_R(t_j)>`.
pub fn euclidean_kernel(t_i: f64, t_j: f64, p: &TimeEncodingParams) -> f64 {
    let a = encode_euclidean(t_i, p);
    let b = encode_euclidean(t_j, p);
    a.iter().zip(&b).map(|(x, y)| x * y).sum()
}

/// The hyperbolic encoding `φ_L(t) = exp_O((0, φ_R(t)))`.
pub fn encode_hyperbolic(t: f64, p: &TimeEncodingParams) -> LorentzPoint {
    manifold::lift_euclidean(&encode_euclidean(t, p), p.curvature)
}

/// `K_L(t_i, t_j) = <φ_L(t_i), φ_L(t_j)>_L`.
pub fn lorentz_kernel(t_i: f64, t_j: f64, p: &TimeEncodingParams) -> f64 {
    let a = encode_hyperbolic(t_i, p);
    let b = encode_hyperbolic(t_j, p);
    manifold::lorentz_inner_unchecked(a.coords(), b.coords())
}

/// Recorded `φ_R(t)` for frequencies `omegas` (length `d/2`).
pub fn encode_euclidean_diff<'t>(omegas: Var<'t>, t: f64) -> Var<'t> {
    omegas.time_features(t)
}

/// Recorded `φ_L(t)`.
pub fn encode_hyperbolic_diff<'t>(geo: &Geometry<'t>, omegas: Var<'t>, t: f64) -> Var<'t> {
    geo.exp_origin(encode_euclidean_diff(omegas, t))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn params(d: usize, k: f64, omegas: Vec<f64>) -> TimeEncodingParams {
        TimeEncodingParams::with_omegas(d, Curvature::new(k).unwrap(), 1.0, omegas).unwrap()
    }

    #[test]
    fn zero_time_encoding() {
        let p = TimeEncodingParams::new(6, Curvature::new(1.0).unwrap(), 1.0).unwrap();
        let e = encode_euclidean(0.0, &p);
        let s = (1.0f64 / 6.0).sqrt();
        assert_eq!(e, vec![s, 0.0, s, 0.0, s, 0.0]);
    }

    #[test]
    fn quarter_period_example() {
        let p = params(2, 1.0, vec![1.0]);
        let e = encode_euclidean(std::f64::consts::FRAC_PI_2, &p);
        assert!(e[0].abs() < 1e-15);
        assert!((e[1] - 0.707_106_8).abs() < 1e-7);
    }

    #[test]
    fn constant_norm() {
        let p = TimeEncodingParams::new(8, Curvature::new(1.0).unwrap(), 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let t: f64 = rng.random_range(0.0..1.0);
            let n = encode_euclidean(t, &p).iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((n - 0.707_106_8).abs() < 1e-7);
            assert!((n - 0.5f64.sqrt()).abs() < 1e-12);
        }
    }

    #[test]
    fn kernel_examples() {
        let p = params(2, 1.0, vec![1.0]);
        assert!((euclidean_kernel(0.3, 0.3, &p) - 0.5).abs() < 1e-15);
        assert!((euclidean_kernel(std::f64::consts::PI, 0.0, &p) + 0.5).abs() < 1e-15);
        let q = TimeEncodingParams::new(8, Curvature::new(1.0).unwrap(), 1.0).unwrap();
        assert!((lorentz_kernel(0.4, 0.4, &q) + 1.0).abs() < 1e-12);
    }

    #[test]
    fn hyperbolic_encoding_example() {
        let p = params(2, 1.0, vec![1.0]);
        let z = encode_hyperbolic(0.0, &p);
        assert!((z.coords()[0] - 1.260_591_836_521_356).abs() < 1e-12);
        assert!((z.coords()[1] - 0.767_523_145_126_116_3).abs() < 1e-12);
        assert_eq!(z.coords()[2], 0.0);
        assert!(z.residual() < 1e-12);
    }

    #[test]
    fn time_coordinate_is_constant() {
        let p = TimeEncodingParams::new(8, Curvature::new(2.0).unwrap(), 1.0).unwrap();
        let a = encode_hyperbolic(0.1, &p).coords()[0];
        for t in [0.0, 0.33, 0.7, 1.0] {
            assert!((encode_hyperbolic(t, &p).coords()[0] - a).abs() < 1e-12);
        }
    }

    #[test]
    fn ladder_initialization() {
        let w = default_omegas(8, 2.0);
        assert_eq!(w.len(), 4);
        assert!((w[0] - 0.5).abs() < 1e-15);
        assert!((w[3] - 5000.0).abs() < 1e-9);
        assert_eq!(default_omegas(2, 4.0), vec![0.25]);
    }

    #[test]
    fn invalid_params() {
        let c = Curvature::new(1.0).unwrap();
        assert!(TimeEncodingParams::new(3, c, 1.0).is_err());
        assert!(TimeEncodingParams::new(4, c, 0.0).is_err());
        assert!(TimeEncodingParams::with_omegas(4, c, 1.0, vec![1.0]).is_err());
    }

    #[test]
    fn recorded_encoding_matches() {
        let p = TimeEncodingParams::new(6, Curvature::new(0.5).unwrap(), 1.0).unwrap();
        let tape = Tape::new();
        let geo = Geometry::constant(&tape, p.curvature());
        let w = tape.constant(&p.omegas);
        let z = encode_hyperbolic_diff(&geo, w, 0.37).value();
        for (a, b) in z.iter().zip(encode_hyperbolic(0.37, &p).coords()) {
            assert!((a - b).abs() < 1e-14);
        }
    }
}
