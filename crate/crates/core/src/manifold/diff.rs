//! Lorentz-model operations recorded on an autodiff [`Tape`].
//!
//! Points are `Var`s of length `d + 1`; "spatial" tangent vectors at the
//! origin are `Var`s of length `d` (the time-like coordinate of a vector in
//! `T_O` is always zero). `K` is itself a recorded scalar so curvature can be
//! trained. The Taylor/identity branches are selected on forward values.

use super::{Curvature, EXP_TAYLOR_EPS};
use crate::autodiff::{Tape, Var};

/// Recorded curvature: `K` and `sqrt K` as scalar tape values.
#[derive(Clone, Copy, Debug)]
pub struct Geometry<'t> {
    pub k: Var<'t>,
    pub sqrt_k: Var<'t>,
}

impl<'t> Geometry<'t> {
    pub fn constant(tape: &'t Tape, c: Curvature) -> Self {
        Self { k: tape.scalar(c.k()), sqrt_k: tape.scalar(c.sqrt_k()) }
    }

    /// `K = exp(log_k)` with `log_k` a recorded scalar.
    pub fn from_log(log_k: Var<'t>) -> Self {
        let k = log_k.exp();
        let sqrt_k = (log_k * 0.5).exp();
        Self { k, sqrt_k }
    }

    pub fn tape(&self) -> &'t Tape {
        self.k.tape()
    }

    pub fn k_value(&self) -> f64 {
        self.k.item()
    }

    pub fn origin(&self, d: usize) -> Var<'t> {
        self.sqrt_k.concat(self.tape().zeros(d))
    }

    /// `(sqrt(K + |s|^2), s)`: the hyperboloid point with spatial block `s`.
    pub fn from_spatial(&self, s: Var<'t>) -> Var<'t> {
        (self.k + s.norm_sq()).sqrt().concat(s)
    }

    pub fn spatial(&self, x: Var<'t>) -> Var<'t> {
        x.slice(1, x.len() - 1)
    }

    /// `exp_O((0, u))`.
    pub fn exp_origin(&self, u: Var<'t>) -> Var<'t> {
        u.exp_origin(self.sqrt_k)
    }

    /// Spatial block of `log_O(x)`; uses `arcosh(x_0/sqrt K) = asinh(|x_s|/sqrt K)`
    /// on the hyperboloid.
    pub fn log_origin(&self, x: Var<'t>) -> Var<'t> {
        x.log_origin(self.sqrt_k)
    }

    /// `-<x,y>_L / K` clamped to `>= 1`.
    fn cosh_arg(&self, x: Var<'t>, y: Var<'t>) -> Var<'t> {
        (-(x.lorentz_inner(y)) / self.k).clamp_min(1.0)
    }

    pub fn distance(&self, x: Var<'t>, y: Var<'t>) -> Var<'t> {
        self.sqrt_k * self.cosh_arg(x, y).acosh()
    }

    pub fn distance_sq(&self, x: Var<'t>, y: Var<'t>) -> Var<'t> {
        let a = self.cosh_arg(x, y).acosh();
        self.k * a * a
    }

    /// Exponential map at `x` for `v ∈ T_x`, re-solving the time coordinate.
    pub fn exp_map(&self, x: Var<'t>, v: Var<'t>) -> Var<'t> {
        let vv = v.lorentz_inner(v).clamp_min(0.0);
        let y = if vv.item().sqrt() < EXP_TAYLOR_EPS {
            x + v + x * vv / (self.k * 2.0)
        } else {
            let n = vv.sqrt();
            let a = n / self.sqrt_k;
            x * a.cosh() + v * (self.sqrt_k * a.sinh() / n)
        };
        self.from_spatial(self.spatial(y))
    }

    /// Logarithmic map at `x`; zero when the points are closer than the
    /// Taylor threshold.
    pub fn log_map(&self, x: Var<'t>, y: Var<'t>) -> Var<'t> {
        let alpha = -(x.lorentz_inner(y)) / self.k;
        let dist = self.sqrt_k * alpha.clamp_min(1.0).acosh();
        if dist.item() < EXP_TAYLOR_EPS {
            return self.tape().zeros(x.len());
        }
        let u = y - x * alpha;
        let n = u.lorentz_inner(u).clamp_min(0.0).sqrt();
        u * (dist / n)
    }

    /// Parallel transport `T_x → T_y` in the closed form
    /// `v + <y,v>_L / (K - <x,y>_L) · (x + y)`.
    pub fn transport(&self, x: Var<'t>, y: Var<'t>, v: Var<'t>) -> Var<'t> {
        let c = y.lorentz_inner(v) / (self.k - x.lorentz_inner(y));
        v + (x + y) * c
    }

    /// Transports `(0, v_s) ∈ T_O` to `T_mu`.
    pub fn transport_from_origin(&self, mu: Var<'t>, v_s: Var<'t>) -> Var<'t> {
        let d = v_s.len();
        let v = self.tape().scalar(0.0).concat(v_s);
        self.transport(self.origin(d), mu, v)
    }

    /// Transports `u ∈ T_mu` to `T_O` and drops the (zero) time coordinate.
    pub fn transport_to_origin(&self, mu: Var<'t>, u: Var<'t>) -> Var<'t> {
        let d = u.len() - 1;
        let w = self.transport(mu, self.origin(d), u);
        w.slice(1, d)
    }

    /// Einstein midpoint of `points` with positive `weights` (scalars).
    ///
    /// Algebraically identical to the Klein-chart average with Lorentz
    /// factors: with `S = Σ w_i x_i`, the midpoint is `sqrt K · S / sqrt(-<S,S>_L)`.
    pub fn einstein_midpoint(&self, weights: &[Var<'t>], points: &[Var<'t>]) -> Var<'t> {
        assert!(!points.is_empty() && weights.len() == points.len());
        let mut s = points[0] * weights[0];
        for (w, p) in weights.iter().zip(points).skip(1) {
            s = s + *p * *w;
        }
        self.normalize_sum(s)
    }

    /// `x ⊕ y`: equal-weight midpoint.
    pub fn weighted_addition(&self, x: Var<'t>, y: Var<'t>) -> Var<'t> {
        self.normalize_sum(x + y)
    }

    fn normalize_sum(&self, s: Var<'t>) -> Var<'t> {
        s.project(self.sqrt_k)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifold::{self as m, LorentzPoint, TangentVector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_vec(rng: &mut ChaCha8Rng, d: usize, scale: f64) -> Vec<f64> {
        (0..d).map(|_| rng.random_range(-scale..scale)).collect()
    }

    fn close(a: &[f64], b: &[f64], tol: f64) {
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() <= tol * (1.0 + y.abs()), "{a:?} vs {b:?}");
        }
    }

    #[test]
    fn agrees_with_plain_geometry() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for &k in &[0.3, 1.0, 2.5] {
            let c = Curvature::new(k).unwrap();
            for _ in 0..50 {
                let d = 3;
                let x = m::lift_euclidean(&rand_vec(&mut rng, d, 1.5), c);
                let y = m::lift_euclidean(&rand_vec(&mut rng, d, 1.5), c);
                let v = TangentVector::projected(x.clone(), rand_vec(&mut rng, d + 1, 1.0)).unwrap();

                let tape = Tape::new();
                let g = Geometry::constant(&tape, c);
                let xv = tape.constant(x.coords());
                let yv = tape.constant(y.coords());
                let vv = tape.constant(v.coords());

                close(&g.exp_map(xv, vv).value(), m::exp_map(&x, &v).unwrap().coords(), 1e-10);
                close(&g.log_map(xv, yv).value(), m::log_map(&x, &y).unwrap().coords(), 1e-8);
                close(
                    &g.transport(xv, yv, vv).value(),
                    m::parallel_transport(&x, &y, &v).unwrap().coords(),
                    1e-8,
                );
                assert!((g.distance(xv, yv).item() - m::distance(&x, &y).unwrap()).abs() < 1e-10);
                close(&g.log_origin(yv).value(), &m::log_origin_spatial(&y), 1e-9);
                let u = rand_vec(&mut rng, d, 2.0);
                close(
                    &g.exp_origin(tape.constant(&u)).value(),
                    m::lift_euclidean(&u, c).coords(),
                    1e-12,
                );
            }
        }
    }

    #[test]
    fn midpoint_matches_klein_chart() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let c = Curvature::new(0.7).unwrap();
        let pts: Vec<LorentzPoint> = (0..5).map(|_| m::lift_euclidean(&rand_vec(&mut rng, 4, 2.0), c)).collect();
        let w: Vec<f64> = (0..5).map(|_| rng.random_range(0.1..2.0)).collect();
        let klein: Vec<_> = pts.iter().map(m::lorentz_to_klein).collect();
        let den: f64 = klein.iter().zip(&w).map(|(p, a)| a * p.lorentz_factor()).sum();
        let mut mid = vec![0.0; 4];
        for (p, a) in klein.iter().zip(&w) {
            for (mi, xi) in mid.iter_mut().zip(p.coords()) {
                *mi += a * p.lorentz_factor() / den * xi;
            }
        }
        let expected = m::klein_to_lorentz(&m::KleinPoint::new(mid, c).unwrap()).unwrap();

        let tape = Tape::new();
        let g = Geometry::constant(&tape, c);
        let pv: Vec<_> = pts.iter().map(|p| tape.constant(p.coords())).collect();
        let wv: Vec<_> = w.iter().map(|a| tape.scalar(*a)).collect();
        close(&g.einstein_midpoint(&wv, &pv).value(), expected.coords(), 1e-10);
    }

    #[test]
    fn trainable_curvature_gradient() {
        // d/dlogK of the distance between two lifted points.
        let f = |lk: f64| {
            let tape = Tape::new();
            let g = Geometry::from_log(tape.constant(&[lk]));
            let a = g.exp_origin(tape.constant(&[0.3, -0.8]));
            let b = g.exp_origin(tape.constant(&[1.1, 0.4]));
            g.distance(a, b).item()
        };
        let tape = Tape::new();
        let lk = tape.var(&[0.2]);
        let g = Geometry::from_log(lk);
        let a = g.exp_origin(tape.constant(&[0.3, -0.8]));
        let b = g.exp_origin(tape.constant(&[1.1, 0.4]));
        let grad = tape.backward(g.distance(a, b)).unwrap().wrt(lk)[0];
        let h = 1e-5;
        let num = (f(0.2 + h) - f(0.2 - h)) / (2.0 * h);
        assert!((grad - num).abs() < 1e-7 * (1.0 + num.abs()), "{grad} vs {num}");
    }

    #[test]
    fn transport_and_exp_gradients() {
        let mu0 = [0.4, -0.2, 0.9];
        let v0 = [0.5, 0.1, -0.3];
        let build = |tape: &Tape, mu_s: &[f64], v: &[f64], grad: bool| -> f64 {
            let g = Geometry::constant(tape, Curvature::new(1.3).unwrap());
            let a = if grad { tape.var(mu_s) } else { tape.constant(mu_s) };
            let mu = g.exp_origin(a);
            let u = g.transport_from_origin(mu, tape.constant(v));
            let z = g.exp_map(mu, u);
            let back = g.transport_to_origin(mu, g.log_map(mu, z));
            let out = back.norm_sq() + g.distance_sq(z, g.origin(3));
            if grad {
                let gr = tape.backward(out).unwrap();
                gr.wrt(a)[0]
            } else {
                out.item()
            }
        };
        let analytic = build(&Tape::new(), &mu0, &v0, true);
        let h = 1e-5;
        let mut p = mu0;
        p[0] += h;
        let mut q = mu0;
        q[0] -= h;
        let num = (build(&Tape::new(), &p, &v0, false) - build(&Tape::new(), &q, &v0, false)) / (2.0 * h);
        assert!((analytic - num).abs() < 1e-6 * (1.0 + num.abs()), "{analytic} vs {num}");
    }
}
