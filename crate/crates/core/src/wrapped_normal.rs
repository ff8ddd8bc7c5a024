//! Wrapped normal distribution on `L^{d,K}`.
//!
//! A sample is drawn by scaling standard noise by `σ`, embedding it in the
//! tangent space at the origin, parallel-transporting it to `μ` and mapping
//! it onto the hyperboloid with `exp_μ`. The density follows from the change
//! of variables through that map:
//!
//! `log p(z) = log N([P_{μ→O}(u)]_{1:} | 0, diag σ²) + (d-1)·[log(r/√K) - log sinh(r/√K)]`
//!
//! with `u = log_μ(z)` and `r = ||u||_L`.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::manifold::diff::Geometry;
use crate::manifold::{self, Curvature, LorentzPoint, TangentVector, EXP_TAYLOR_EPS};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, PartialEq)]
pub struct WrappedNormalParams {
    mu: LorentzPoint,
    log_sigma: Vec<f64>,
}

impl WrappedNormalParams {
    pub fn new(mu: LorentzPoint, sigma: &[f64]) -> Result<Self> {
        if let Some(s) = sigma.iter().find(|s| !(**s > 0.0 && s.is_finite())) {
            return Err(Error::Domain(format!("σ entries must be positive, got {s}")));
        }
        let log_sigma = sigma.iter().map(|s| s.ln()).collect();
        Self::from_log_sigma(mu, log_sigma)
    }

    pub fn from_log_sigma(mu: LorentzPoint, log_sigma: Vec<f64>) -> Result<Self> {
        if log_sigma.len() != mu.dim() {
            return Err(Error::Dimension { expected: mu.dim(), got: log_sigma.len() });
        }
        if log_sigma.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("log σ must be finite".into()));
        }
        Ok(Self { mu, log_sigma })
    }

    pub fn mu(&self) -> &LorentzPoint {
        &self.mu
    }

    pub fn log_sigma(&self) -> &[f64] {
        &self.log_sigma
    }

    pub fn sigma(&self) -> Vec<f64> {
        self.log_sigma.iter().map(|v| v.exp()).collect()
    }

    pub fn dim(&self) -> usize {
        self.mu.dim()
    }

    pub fn curvature(&self) -> Curvature {
        self.mu.curvature()
    }
}

/// The prior `N_L(O, I)`.
pub fn standard_prior(d: usize, curvature: Curvature) -> WrappedNormalParams {
    WrappedNormalParams { mu: manifold::origin(d, curvature), log_sigma: vec![0.0; d] }
}

/// Draws a `d`-vector of standard normal noise.
pub fn draw_noise<R: Rng + ?Sized>(rng: &mut R, d: usize) -> Vec<f64> {
    (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

/// Reparameterised sample: deterministic in `noise`.
pub fn sample(params: &WrappedNormalParams, noise: &[f64]) -> Result<LorentzPoint> {
    let d = params.dim();
    if noise.len() != d {
        return Err(Error::Dimension { expected: d, got: noise.len() });
    }
    let c = params.curvature();
    let scaled: Vec<f64> = noise.iter().zip(params.sigma()).map(|(e, s)| e * s).collect();
    let v = TangentVector::at_origin(&scaled, c);
    let o = manifold::origin(d, c);
    let u = manifold::parallel_transport(&o, &params.mu, &v)?;
    manifold::exp_map(&params.mu, &u)
}

/// `(d-1)·[log(r/√K) - log sinh(r/√K)]`, zero in the `r → 0` limit.
pub fn log_det_correction(r: f64, curvature: Curvature, d: usize) -> f64 {
    if r < EXP_TAYLOR_EPS || d < 2 {
        return 0.0;
    }
    let a = r / curvature.sqrt_k();
    // log sinh a = a + log(1 - e^{-2a}) - log 2
    let log_sinh = a + (-(-2.0 * a).exp_m1()).ln() - std::f64::consts::LN_2;
    (d - 1) as f64 * (a.ln() - log_sinh)
}

fn normal_log_pdf(x: &[f64], log_sigma: &[f64]) -> f64 {
    x.iter()
        .zip(log_sigma)
        .map(|(xi, ls)| {
            let s2 = (2.0 * ls).exp();
            -0.5 * LN_2PI - ls - xi * xi / (2.0 * s2)
        })
        .sum()
}

/// Log density with respect to the Riemannian volume of `L^{d,K}`.
pub fn log_density(z: &LorentzPoint, params: &WrappedNormalParams) -> Result<f64> {
    let mu = &params.mu;
    let u = manifold::log_map(mu, z)?;
    let o = manifold::origin(params.dim(), params.curvature());
    let back = manifold::parallel_transport(mu, &o, &u)?;
    let x = &back.coords()[1..];
    Ok(normal_log_pdf(x, &params.log_sigma) + log_det_correction(u.norm(), params.curvature(), params.dim()))
}

/// Monte Carlo KL estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KlEstimate {
    pub mean: f64,
    pub std_error: f64,
}

/// `(1/n) Σ [log q(z_k) - log p(z_k)]` over reparameterised `z_k ~ q`.
pub fn kl_monte_carlo<R: Rng + ?Sized>(
    q: &WrappedNormalParams,
    p: &WrappedNormalParams,
    n_samples: usize,
    rng: &mut R,
) -> Result<KlEstimate> {
    if n_samples == 0 {
        return Err(Error::Contract("KL estimate needs at least one sample".into()));
    }
    let mut vals = Vec::with_capacity(n_samples);
    for _ in 0..n_samples {
        let z = sample(q, &draw_noise(rng, q.dim()))?;
        vals.push(log_density(&z, q)? - log_density(&z, p)?);
    }
    let n = n_samples as f64;
    let mean = vals.iter().sum::<f64>() / n;
    let var = if n_samples > 1 {
        vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    Ok(KlEstimate { mean, std_error: (var / n).sqrt() })
}

/// Recorded counterparts used by the training objective.
pub mod diff {
    use super::*;

    /// Recorded reparameterised sample from `N_L(mu, diag exp(2·log_sigma))`.
    /// Returns the sample and the scaled tangent noise `σ ⊙ ε`.
    pub fn sample<'t>(geo: &Geometry<'t>, mu: Var<'t>, log_sigma: Var<'t>, noise: &[f64]) -> (Var<'t>, Var<'t>) {
        let tape = geo.tape();
        let scaled = log_sigma.exp() * tape.constant(noise);
        let u = geo.transport_from_origin(mu, scaled);
        (geo.exp_map(mu, u), scaled)
    }

    fn correction<'t>(geo: &Geometry<'t>, r2: Var<'t>, d: usize) -> Var<'t> {
        if r2.item().sqrt() < EXP_TAYLOR_EPS || d < 2 {
            return geo.tape().scalar(0.0);
        }
        let a = r2.sqrt() / geo.sqrt_k;
        let log_sinh = a + (1.0 - (a * -2.0).exp()).ln() - std::f64::consts::LN_2;
        (a.ln() - log_sinh) * (d - 1) as f64
    }

    fn normal_log_pdf<'t>(x: Var<'t>, log_sigma: Var<'t>) -> Var<'t> {
        let d = x.len() as f64;
        let quad = (x * (-log_sigma).exp()).norm_sq() * 0.5;
        -(log_sigma.sum()) - quad - 0.5 * LN_2PI * d
    }

    /// General recorded log density at `z`.
    pub fn log_density<'t>(geo: &Geometry<'t>, z: Var<'t>, mu: Var<'t>, log_sigma: Var<'t>) -> Var<'t> {
        let d = log_sigma.len();
        let u = geo.log_map(mu, z);
        let x = geo.transport_to_origin(mu, u);
        let r2 = u.lorentz_inner(u).clamp_min(0.0);
        normal_log_pdf(x, log_sigma) + correction(geo, r2, d)
    }

    /// `log q(z)` at a sample produced by [`sample`] from `q`, using the
    /// scaled noise directly: the pulled-back vector is `σ ⊙ ε` and
    /// `||log_μ(z)||_L = |σ ⊙ ε|`.
    pub fn log_density_at_own_sample<'t>(geo: &Geometry<'t>, scaled: Var<'t>, log_sigma: Var<'t>) -> Var<'t> {
        normal_log_pdf(scaled, log_sigma) + correction(geo, scaled.norm_sq(), scaled.len())
    }

    /// `log N_L(z | O, I)`.
    pub fn log_prior<'t>(geo: &Geometry<'t>, z: Var<'t>) -> Var<'t> {
        let d = z.len() - 1;
        let x = geo.log_origin(z);
        let r2 = x.norm_sq();
        -(r2 * 0.5) - 0.5 * LN_2PI * d as f64 + correction(geo, r2, d)
    }

    /// Single-sample KL term `log q(z) - log p(z)` for a diagonal Euclidean
    /// normal against `N(0, I)` in closed form (used by the Euclidean
    /// variational variant).
    pub fn euclidean_kl<'t>(mu: Var<'t>, log_sigma: Var<'t>) -> Var<'t> {
        let s2 = (log_sigma * 2.0).exp();
        ((s2 + mu * mu - 1.0) * 0.5 - log_sigma).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn k1() -> Curvature {
        Curvature::new(1.0).unwrap()
    }

    #[test]
    fn rejects_nonpositive_sigma() {
        let mu = manifold::origin(2, k1());
        assert!(WrappedNormalParams::new(mu.clone(), &[1.0, 0.0]).is_err());
        assert!(WrappedNormalParams::new(mu.clone(), &[1.0]).is_err());
        assert!(WrappedNormalParams::new(mu, &[1.0, 2.0]).is_ok());
    }

    #[test]
    fn zero_variance_sample_is_mean() {
        let mu = manifold::lift_euclidean(&[0.7, -1.1, 0.3], k1());
        let p = WrappedNormalParams::new(mu.clone(), &[1e-30; 3]).unwrap();
        let z = sample(&p, &[0.5, -2.0, 1.0]).unwrap();
        for (a, b) in z.coords().iter().zip(mu.coords()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn samples_stay_on_manifold() {
        let c = Curvature::new(0.3).unwrap();
        let mu = manifold::lift_euclidean(&[1.2, -0.4], c);
        let p = WrappedNormalParams::new(mu, &[0.8, 1.5]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..200 {
            let z = sample(&p, &draw_noise(&mut rng, 2)).unwrap();
            assert!(z.residual() <= 1e-6 * c.k());
        }
    }

    #[test]
    fn origin_mean_reduces_to_lift() {
        let p = WrappedNormalParams::new(manifold::origin(3, k1()), &[0.5, 2.0, 1.0]).unwrap();
        let noise = [0.3, -0.2, 1.7];
        let z = sample(&p, &noise).unwrap();
        let scaled: Vec<f64> = noise.iter().zip(p.sigma()).map(|(e, s)| e * s).collect();
        assert_eq!(z, manifold::lift_euclidean(&scaled, k1()));
    }

    #[test]
    fn density_at_mean() {
        let mu = manifold::lift_euclidean(&[0.4, 0.9], k1());
        let sigma = [0.5, 1.7];
        let p = WrappedNormalParams::new(mu.clone(), &sigma).unwrap();
        let expected: f64 = sigma.iter().map(|s| -0.5 * (2.0 * std::f64::consts::PI * s * s).ln()).sum();
        assert!((log_density(&mu, &p).unwrap() - expected).abs() < 1e-12);
        let prior = standard_prior(2, k1());
        let at_origin = log_density(prior.mu(), &prior).unwrap();
        assert!((at_origin + 1.837_877_066_409_345_5).abs() < 1e-12);
    }

    #[test]
    fn standard_prior_definition() {
        let p = standard_prior(2, k1());
        assert_eq!(p.mu().coords(), &[1.0, 0.0, 0.0]);
        assert_eq!(p.sigma(), vec![1.0, 1.0]);
    }

    #[test]
    fn prior_samples_have_unit_variance_in_log_coordinates() {
        let p = standard_prior(3, Curvature::new(2.0).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 10_000;
        let mut sums = [0.0; 3];
        let mut sq = [0.0; 3];
        for _ in 0..n {
            let z = sample(&p, &draw_noise(&mut rng, 3)).unwrap();
            let x = manifold::log_origin_spatial(&z);
            for i in 0..3 {
                sums[i] += x[i];
                sq[i] += x[i] * x[i];
            }
        }
        for i in 0..3 {
            let m = sums[i] / n as f64;
            let var = sq[i] / n as f64 - m * m;
            assert!((var - 1.0).abs() < 0.1, "axis {i}: {var}");
        }
    }

    #[test]
    fn kl_of_identical_distributions_is_zero() {
        let mu = manifold::lift_euclidean(&[0.2, -0.5], k1());
        let q = WrappedNormalParams::new(mu, &[0.7, 1.3]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let est = kl_monte_carlo(&q, &q, 1000, &mut rng).unwrap();
        assert!(est.mean.abs() <= 3.0 * est.std_error + 1e-12);
    }

    #[test]
    fn kl_of_concentrated_far_posterior_is_positive() {
        let mu = manifold::lift_euclidean(&[2.5, -1.0], k1());
        let sigma = [1e-3, 1e-3];
        let q = WrappedNormalParams::new(mu.clone(), &sigma).unwrap();
        let p = standard_prior(2, k1());
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let est = kl_monte_carlo(&q, &p, 200, &mut rng).unwrap();
        // σ → 0: KL ≈ -H(q) - log p(μ), with -H(q) = -½ Σ log(2πe σ_i²).
        let neg_entropy: f64 = sigma
            .iter()
            .map(|s| -0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E * s * s).ln())
            .sum();
        let analytic = neg_entropy - log_density(&mu, &p).unwrap();
        assert!(est.mean > 0.0);
        assert!((est.mean - analytic).abs() < 0.05, "{} vs {analytic}", est.mean);
    }

    #[test]
    fn kl_is_nonnegative_in_expectation() {
        let q = WrappedNormalParams::new(manifold::lift_euclidean(&[0.3, 0.1], k1()), &[0.9, 1.1]).unwrap();
        let p = standard_prior(2, k1());
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let reps: Vec<f64> = (0..50).map(|_| kl_monte_carlo(&q, &p, 20, &mut rng).unwrap().mean).collect();
        let m = reps.iter().sum::<f64>() / 50.0;
        let se = (reps.iter().map(|v| (v - m).powi(2)).sum::<f64>() / 49.0 / 50.0).sqrt();
        assert!(m >= -3.0 * se);
    }

    #[test]
    fn kl_needs_samples() {
        let p = standard_prior(2, k1());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(kl_monte_carlo(&p, &p, 0, &mut rng).is_err());
    }

    #[test]
    fn recorded_density_matches_plain() {
        let c = Curvature::new(0.6).unwrap();
        let mu = manifold::lift_euclidean(&[0.5, -0.3, 0.8], c);
        let p = WrappedNormalParams::new(mu.clone(), &[0.4, 1.2, 0.9]).unwrap();
        let noise = [0.7, -1.4, 0.2];
        let z = sample(&p, &noise).unwrap();
        let expected = log_density(&z, &p).unwrap();

        let tape = Tape::new();
        let geo = Geometry::constant(&tape, c);
        let mu_v = tape.constant(mu.coords());
        let ls = tape.constant(p.log_sigma());
        let (zs, scaled) = diff::sample(&geo, mu_v, ls, &noise);
        for (a, b) in zs.value().iter().zip(z.coords()) {
            assert!((a - b).abs() < 1e-10);
        }
        let general = diff::log_density(&geo, zs, mu_v, ls).item();
        let shortcut = diff::log_density_at_own_sample(&geo, scaled, ls).item();
        assert!((general - expected).abs() < 1e-8);
        assert!((shortcut - expected).abs() < 1e-8);
        let prior = standard_prior(3, c);
        let lp = diff::log_prior(&geo, zs).item();
        assert!((lp - log_density(&z, &prior).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn log_density_gradient_matches_finite_differences() {
        // Parameters: tangent coordinates a of μ = exp_O(a), and log σ.
        let c = Curvature::new(1.0).unwrap();
        let z = manifold::lift_euclidean(&[0.9, -0.4], c);
        let eval = |a: &[f64], ls: &[f64], grad: bool| -> (f64, Vec<f64>) {
            let tape = Tape::new();
            let geo = Geometry::constant(&tape, c);
            let av = if grad { tape.var(a) } else { tape.constant(a) };
            let lv = if grad { tape.var(ls) } else { tape.constant(ls) };
            let mu = geo.exp_origin(av);
            let out = diff::log_density(&geo, tape.constant(z.coords()), mu, lv);
            if !grad {
                return (out.item(), vec![]);
            }
            let g = tape.backward(out).unwrap();
            let mut all = g.wrt(av).to_vec();
            all.extend_from_slice(g.wrt(lv));
            (out.item(), all)
        };
        let a0 = [0.3, 0.5];
        let l0 = [-0.2, 0.4];
        let (_, grad) = eval(&a0, &l0, true);
        let h = 1e-5;
        let mut x0: Vec<f64> = a0.iter().chain(&l0).copied().collect();
        for i in 0..4 {
            let orig = x0[i];
            x0[i] = orig + h;
            let fp = eval(&x0[..2], &x0[2..], false).0;
            x0[i] = orig - h;
            let fm = eval(&x0[..2], &x0[2..], false).0;
            x0[i] = orig;
            let num = (fp - fm) / (2.0 * h);
            let rel = (grad[i] - num).abs() / grad[i].abs().max(num.abs()).max(1e-6);
            assert!(rel < 1e-4, "param {i}: {} vs {num}", grad[i]);
        }
    }

    #[test]
    fn closed_form_euclidean_kl() {
        let tape = Tape::new();
        let mu = tape.constant(&[0.0, 0.0]);
        let ls = tape.constant(&[0.0, 0.0]);
        assert_eq!(diff::euclidean_kl(mu, ls).item(), 0.0);
        let mu = tape.constant(&[1.0]);
        let ls = tape.constant(&[(0.5f64).ln()]);
        let expected = 0.5 * (0.25 + 1.0 - 1.0) - 0.5f64.ln();
        assert!((diff::euclidean_kl(mu, ls).item() - expected).abs() < 1e-14);
    }
}
